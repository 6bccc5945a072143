//! Semantic segmenter interface.
//!
//! The pipeline only needs "image in, label map out"; what produces the map
//! is pluggable. A dataset annotation can be passed through directly, or the
//! toy color-rule segmenter can label images from a known class palette.

use ndarray::Array2;

use crate::error::{Result, SpicError};
use crate::types::{Image, SegmentationMap};

pub trait Segmenter {
    fn name(&self) -> &str;
    fn n_classes(&self) -> u8;
    fn run(&self, x: &Image) -> Result<SegmentationMap>;
}

/// Runs a segmenter and enforces the output contract (dims match the input,
/// labels in range). A misbehaving implementation surfaces as an error, never
/// as a silently wrong map.
pub fn segment(x: &Image, seg: &dyn Segmenter) -> Result<SegmentationMap> {
    let s = seg.run(x)?;
    if (s.height(), s.width()) != (x.height(), x.width()) {
        return Err(SpicError::SegmenterFailure {
            name: seg.name().to_string(),
            reason: format!(
                "returned {}x{} map for {}x{} image",
                s.height(),
                s.width(),
                x.height(),
                x.width()
            ),
        });
    }
    if s.n_classes() != seg.n_classes() {
        return Err(SpicError::SegmenterFailure {
            name: seg.name().to_string(),
            reason: format!(
                "declared {} classes but returned a {}-class map",
                seg.n_classes(),
                s.n_classes()
            ),
        });
    }
    Ok(s)
}

/// Passes a dataset annotation through unchanged. Only valid for the image
/// it was built from; a dimension mismatch means it was paired wrongly.
pub struct GroundTruthSegmenter {
    map: SegmentationMap,
}

impl GroundTruthSegmenter {
    pub fn new(map: SegmentationMap) -> Self {
        Self { map }
    }
}

impl Segmenter for GroundTruthSegmenter {
    fn name(&self) -> &str {
        "ground-truth"
    }

    fn n_classes(&self) -> u8 {
        self.map.n_classes()
    }

    fn run(&self, x: &Image) -> Result<SegmentationMap> {
        if (self.map.height(), self.map.width()) != (x.height(), x.width()) {
            return Err(SpicError::SegmenterFailure {
                name: "ground-truth".into(),
                reason: "annotation dims do not match the image".into(),
            });
        }
        Ok(self.map.clone())
    }
}

/// Toy segmenter: each pixel gets the class whose palette color is nearest
/// in squared RGB distance, ties to the lowest class index. Exact on the
/// synthetic corpus, whose classes are built from this palette.
pub struct ColorRuleSegmenter {
    palette: Vec<[f64; 3]>,
}

impl ColorRuleSegmenter {
    pub fn new(palette: Vec<[f64; 3]>) -> Result<Self> {
        if palette.is_empty() || palette.len() > 255 {
            return Err(SpicError::InvalidConfig(format!(
                "palette must have 1..=255 colors, got {}",
                palette.len()
            )));
        }
        Ok(Self { palette })
    }

    pub fn classify_pixel(&self, rgb: [f64; 3]) -> u8 {
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (k, p) in self.palette.iter().enumerate() {
            let d = (0..3).map(|c| (rgb[c] - p[c]) * (rgb[c] - p[c])).sum();
            if d < best_d {
                best_d = d;
                best = k;
            }
        }
        best as u8
    }
}

impl Segmenter for ColorRuleSegmenter {
    fn name(&self) -> &str {
        "color-rule"
    }

    fn n_classes(&self) -> u8 {
        self.palette.len() as u8
    }

    fn run(&self, x: &Image) -> Result<SegmentationMap> {
        let d = x.data();
        let labels = Array2::from_shape_fn((x.height(), x.width()), |(y, w)| {
            self.classify_pixel([d[[0, y, w]], d[[1, y, w]], d[[2, y, w]]])
        });
        SegmentationMap::new(labels, self.n_classes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{Array2, Array3};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_image(rng: &mut ChaCha12Rng, h: usize, w: usize) -> Image {
        Image::new(Array3::from_shape_fn((3, h, w), |_| rng.gen_range(0.0..=1.0))).unwrap()
    }

    #[test]
    fn ground_truth_is_passthrough() {
        let mut rng = ChaCha12Rng::seed_from_u64(1);
        let labels = Array2::from_shape_fn((8, 12), |_| rng.gen_range(0..3u8));
        let map = SegmentationMap::new(labels, 3).unwrap();
        let seg = GroundTruthSegmenter::new(map.clone());
        let x = random_image(&mut rng, 8, 12);
        let out = segment(&x, &seg).unwrap();
        assert_eq!(out.labels(), map.labels());
    }

    #[test]
    fn ground_truth_dim_mismatch_is_an_error_not_a_blank_map() {
        let map = SegmentationMap::new(Array2::zeros((8, 12)), 2).unwrap();
        let seg = GroundTruthSegmenter::new(map);
        let mut rng = ChaCha12Rng::seed_from_u64(2);
        let x = random_image(&mut rng, 12, 8);
        assert!(matches!(
            segment(&x, &seg),
            Err(SpicError::SegmenterFailure { .. })
        ));
    }

    #[test]
    fn color_rule_matches_brute_force_per_pixel_rule() {
        // Three well-separated colors; the oracle below re-derives the label
        // for every pixel straight from the distance definition.
        let palette = vec![[0.9, 0.1, 0.1], [0.1, 0.9, 0.1], [0.2, 0.2, 0.8]];
        let seg = ColorRuleSegmenter::new(palette.clone()).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(3);
        let x = random_image(&mut rng, 16, 16);
        let out = segment(&x, &seg).unwrap();
        for y in 0..16 {
            for w in 0..16 {
                let px = [
                    x.data()[[0, y, w]],
                    x.data()[[1, y, w]],
                    x.data()[[2, y, w]],
                ];
                let mut expected = 0u8;
                let mut best = f64::INFINITY;
                for (k, p) in palette.iter().enumerate() {
                    let d: f64 = (0..3).map(|c| (px[c] - p[c]).powi(2)).sum();
                    if d < best {
                        best = d;
                        expected = k as u8;
                    }
                }
                assert_eq!(out.labels()[[y, w]], expected);
            }
        }
    }

    #[test]
    fn output_dims_track_input_dims() {
        let seg = ColorRuleSegmenter::new(vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(4);
        for _ in 0..10 {
            let h = 4 * rng.gen_range(1..8usize);
            let w = 4 * rng.gen_range(1..8usize);
            let x = random_image(&mut rng, h, w);
            let out = segment(&x, &seg).unwrap();
            assert_eq!((out.height(), out.width()), (h, w));
        }
    }

    #[test]
    fn empty_palette_rejected() {
        assert!(ColorRuleSegmenter::new(vec![]).is_err());
    }
}
