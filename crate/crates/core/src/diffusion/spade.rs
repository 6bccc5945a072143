//! Semantic feature modulation: spatially adaptive scale/shift computed
//! from the segmentation map, applied after parameter-free normalization.
//!
//! The modulation branch uses 1x1 convolutions so that a pixel's gamma and
//! beta depend only on its own label: identical labels get identical
//! modulation anywhere in the image, and a single-class map yields exactly
//! spatially constant modulation planes. Both heads start at zero, so a
//! fresh block is plain group normalization.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use super::nn::{norm_groups, Tape, Var};
use super::params::{Conv2dLayer, Init, ParamStore};
use crate::error::{Result, SpicError};
use crate::types::{one_hot, resize_labels_nearest, SegmentationMap};

/// Group count cap shared by every normalization layer in the denoiser.
pub const MAX_NORM_GROUPS: usize = 8;

pub struct SpadeNorm {
    shared: Conv2dLayer,
    gamma: Conv2dLayer,
    beta: Conv2dLayer,
    groups: usize,
}

impl SpadeNorm {
    pub fn register<R: Rng>(
        ps: &mut ParamStore,
        name: &str,
        channels: usize,
        n_classes: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let shared = Conv2dLayer::register(
            ps,
            &format!("{name}.shared"),
            n_classes,
            hidden,
            1,
            1,
            0,
            Init::He,
            rng,
        );
        let gamma = Conv2dLayer::register(
            ps,
            &format!("{name}.gamma"),
            hidden,
            channels,
            1,
            1,
            0,
            Init::Zero,
            rng,
        );
        let beta = Conv2dLayer::register(
            ps,
            &format!("{name}.beta"),
            hidden,
            channels,
            1,
            1,
            0,
            Init::Zero,
            rng,
        );
        Self {
            shared,
            gamma,
            beta,
            groups: norm_groups(channels, MAX_NORM_GROUPS),
        }
    }

    /// Gamma and beta planes for a `[B, n_classes, H, W]` one-hot tensor.
    pub fn modulation(&self, t: &mut Tape, vars: &[Var], onehot: Var) -> (Var, Var) {
        let h = self.shared.forward(t, vars, onehot);
        let h = t.silu(h);
        let gamma = self.gamma.forward(t, vars, h);
        let beta = self.beta.forward(t, vars, h);
        (gamma, beta)
    }

    /// `normalize(x) * (1 + gamma) + beta`; `x` and `onehot` must share
    /// spatial dims (the caller resizes labels with nearest-neighbor).
    pub fn forward(&self, t: &mut Tape, vars: &[Var], x: Var, onehot: Var) -> Var {
        let xs = t.value(x).shape().to_vec();
        let os = t.value(onehot).shape().to_vec();
        assert_eq!(
            (xs[0], &xs[2..]),
            (os[0], &os[2..]),
            "feature/one-hot dims disagree"
        );
        let normed = t.group_norm(x, self.groups);
        let (gamma, beta) = self.modulation(t, vars, onehot);
        let scale = t.add_scalar(gamma, 1.0);
        let scaled = t.mul(normed, scale);
        t.add(scaled, beta)
    }
}

/// Resizes each map to `h`x`w` (nearest) and stacks the one-hot planes into
/// a `[B, n_classes, h, w]` tensor; all maps must agree on the class count.
pub fn resized_onehot_batch(
    ssms: &[&SegmentationMap],
    h: usize,
    w: usize,
) -> Result<ArrayD<f64>> {
    if ssms.is_empty() {
        return Err(SpicError::InvalidImage("empty segmentation batch".into()));
    }
    let n_c = ssms[0].n_classes() as usize;
    if ssms.iter().any(|s| s.n_classes() as usize != n_c) {
        return Err(SpicError::InvalidImage(
            "segmentation maps disagree on class count".into(),
        ));
    }
    let mut out = ArrayD::<f64>::zeros(IxDyn(&[ssms.len(), n_c, h, w]));
    for (bi, s) in ssms.iter().enumerate() {
        let resized = resize_labels_nearest(s, h, w)?;
        let planes = one_hot(&resized);
        out.slice_mut(ndarray::s![bi, .., .., ..])
            .assign(planes.planes());
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_map(rng: &mut ChaCha12Rng, h: usize, w: usize, n_c: u8) -> SegmentationMap {
        let labels = Array2::from_shape_fn((h, w), |_| rng.gen_range(0..n_c));
        SegmentationMap::new(labels, n_c).unwrap()
    }

    fn rand_features(rng: &mut ChaCha12Rng, shape: &[usize]) -> ArrayD<f64> {
        ArrayD::from_shape_fn(IxDyn(shape), |_| rng.gen_range(-1.0..1.0))
    }

    /// Overwrites the zero-initialized modulation heads so tests can observe
    /// nonzero gamma/beta.
    fn randomize_heads(ps: &mut ParamStore, rng: &mut ChaCha12Rng) {
        for i in 0..ps.len() {
            if ps.name(i).contains(".gamma.") || ps.name(i).contains(".beta.") {
                ps.value_mut(i).mapv_inplace(|_| rng.gen_range(-0.5..0.5));
            }
        }
    }

    #[test]
    fn fresh_block_reduces_to_plain_group_norm() {
        let mut rng = ChaCha12Rng::seed_from_u64(70);
        let mut ps = ParamStore::new();
        let spade = SpadeNorm::register(&mut ps, "s", 4, 3, 8, &mut rng);
        let x = rand_features(&mut rng, &[2, 4, 5, 6]);
        let oh = resized_onehot_batch(
            &[&random_map(&mut rng, 5, 6, 3), &random_map(&mut rng, 5, 6, 3)],
            5,
            6,
        )
        .unwrap();

        let mut tape = Tape::new();
        let vars = ps.inject(&mut tape);
        let xv = tape.leaf(x.clone(), false);
        let ov = tape.leaf(oh, false);
        let out = spade.forward(&mut tape, &vars, xv, ov);
        let xv2 = tape.leaf(x, false);
        let plain = tape.group_norm(xv2, norm_groups(4, MAX_NORM_GROUPS));

        for (a, b) in tape.value(out).iter().zip(tape.value(plain).iter()) {
            assert!((a - b).abs() < 1e-6, "{a} vs {b}");
        }
    }

    #[test]
    fn identical_labels_receive_identical_modulation() {
        let mut rng = ChaCha12Rng::seed_from_u64(71);
        let mut ps = ParamStore::new();
        let spade = SpadeNorm::register(&mut ps, "s", 3, 2, 4, &mut rng);
        randomize_heads(&mut ps, &mut rng);
        // Vertical stripes of the two labels.
        let labels = Array2::from_shape_fn((4, 6), |(_, x)| (x % 2) as u8);
        let map = SegmentationMap::new(labels.clone(), 2).unwrap();
        let oh = resized_onehot_batch(&[&map], 4, 6).unwrap();

        let mut tape = Tape::new();
        let vars = ps.inject(&mut tape);
        let ov = tape.leaf(oh, false);
        let (gamma, beta) = spade.modulation(&mut tape, &vars, ov);
        for planes in [tape.value(gamma), tape.value(beta)] {
            for c in 0..3 {
                for y in 0..4 {
                    for x in 0..6 {
                        let reference = planes[[0, c, 0, x % 2]];
                        assert_eq!(planes[[0, c, y, x]], reference);
                    }
                }
            }
        }
    }

    #[test]
    fn single_class_map_gives_spatially_constant_modulation() {
        let mut rng = ChaCha12Rng::seed_from_u64(72);
        let mut ps = ParamStore::new();
        let spade = SpadeNorm::register(&mut ps, "s", 5, 4, 6, &mut rng);
        randomize_heads(&mut ps, &mut rng);
        let map = SegmentationMap::new(Array2::from_elem((6, 7), 2u8), 4).unwrap();
        let oh = resized_onehot_batch(&[&map], 6, 7).unwrap();

        let mut tape = Tape::new();
        let vars = ps.inject(&mut tape);
        let ov = tape.leaf(oh, false);
        let (gamma, beta) = spade.modulation(&mut tape, &vars, ov);
        for planes in [tape.value(gamma), tape.value(beta)] {
            let mut saw_nonzero = false;
            for c in 0..5 {
                let first = planes[[0, c, 0, 0]];
                saw_nonzero |= first != 0.0;
                for y in 0..6 {
                    for x in 0..7 {
                        assert_eq!(planes[[0, c, y, x]], first);
                    }
                }
            }
            assert!(saw_nonzero, "randomized heads should modulate");
        }
    }

    #[test]
    fn modulation_parameters_receive_gradients() {
        let mut rng = ChaCha12Rng::seed_from_u64(73);
        let mut ps = ParamStore::new();
        let spade = SpadeNorm::register(&mut ps, "s", 4, 3, 4, &mut rng);
        let map = random_map(&mut rng, 4, 4, 3);
        let oh = resized_onehot_batch(&[&map], 4, 4).unwrap();
        let x = rand_features(&mut rng, &[1, 4, 4, 4]);

        let mut tape = Tape::new();
        let vars = ps.inject(&mut tape);
        let xv = tape.leaf(x, false);
        let ov = tape.leaf(oh, false);
        let out = spade.forward(&mut tape, &vars, xv, ov);
        let sq = tape.mul(out, out);
        let loss = tape.mean_all(sq);
        let grads = tape.backward(loss);
        // Gamma weights sit upstream of a product with normalized features,
        // so they must receive gradient even while still zero-valued.
        let gamma_w = ps.index_of("s.gamma.w").unwrap();
        let g = grads.get(vars[gamma_w]).expect("gamma weight grad");
        assert!(g.iter().any(|&v| v != 0.0));
    }

    #[test]
    fn resized_onehot_batch_matches_label_resize_oracle() {
        let mut rng = ChaCha12Rng::seed_from_u64(74);
        let map = random_map(&mut rng, 8, 10, 5);
        let oh = resized_onehot_batch(&[&map], 4, 5).unwrap();
        assert_eq!(oh.shape(), &[1, 5, 4, 5]);
        let resized = resize_labels_nearest(&map, 4, 5).unwrap();
        for y in 0..4 {
            for x in 0..5 {
                for k in 0..5usize {
                    let expect = if resized.labels()[[y, x]] as usize == k {
                        1.0
                    } else {
                        0.0
                    };
                    assert_eq!(oh[[0, k, y, x]], expect);
                }
            }
        }
    }

    #[test]
    fn onehot_batch_rejects_mixed_class_counts() {
        let mut rng = ChaCha12Rng::seed_from_u64(75);
        let a = random_map(&mut rng, 4, 4, 3);
        let b = random_map(&mut rng, 4, 4, 5);
        assert!(resized_onehot_batch(&[&a, &b], 4, 4).is_err());
        assert!(resized_onehot_batch(&[], 4, 4).is_err());
    }
}
