//! The conditional U-Net denoiser.
//!
//! Input is always 6 channels: the current noisy/partial image in channels
//! 0..3 and the range-normalized upscaled coarse image in channels 3..6.
//! Output is the 3-channel noise estimate. Semantic modulation is applied
//! in the bottleneck and every decoder ResBlock, never in the encoder.
//!
//! The final head and every ResBlock's second convolution start at zero, so
//! a fresh model predicts exactly zero noise.

use ndarray::{Array2, ArrayD, IxDyn};
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::nn::{norm_groups, Tape, Var};
use super::params::{Conv2dLayer, Init, LinearLayer, ParamStore};
use super::spade::{resized_onehot_batch, SpadeNorm, MAX_NORM_GROUPS};
use crate::error::{Result, SpicError};
use crate::types::SegmentationMap;

/// Noisy/current image channels plus coarse conditioning channels.
pub const IN_CHANNELS: usize = 6;
/// Predicted noise channels.
pub const OUT_CHANNELS: usize = 3;

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub base_channels: usize,
    /// Channel multiplier per resolution level; length = number of levels.
    pub channel_mult: Vec<usize>,
    /// ResBlocks per encoder level; decoder levels get one more.
    pub res_blocks: usize,
    /// Self-attention in the bottleneck (the lowest resolution).
    pub attend_lowest: bool,
    /// Class count of the segmentation maps this model conditions on.
    pub n_classes: u8,
    /// Hidden width of the semantic modulation branch.
    pub spade_hidden: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        Self {
            base_channels: 64,
            channel_mult: vec![1, 2, 4],
            res_blocks: 2,
            attend_lowest: true,
            n_classes: 19,
            spade_hidden: 64,
        }
    }
}

impl DenoiserConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 2 || !self.base_channels.is_multiple_of(2) {
            return Err(SpicError::InvalidConfig(
                "base_channels must be even and >= 2 (sin/cos time embedding)".into(),
            ));
        }
        if self.channel_mult.is_empty() || self.channel_mult.contains(&0) {
            return Err(SpicError::InvalidConfig(
                "channel_mult must be non-empty and positive".into(),
            ));
        }
        if self.res_blocks == 0 {
            return Err(SpicError::InvalidConfig("res_blocks must be >= 1".into()));
        }
        if self.n_classes == 0 {
            return Err(SpicError::InvalidConfig("n_classes must be >= 1".into()));
        }
        if self.spade_hidden == 0 {
            return Err(SpicError::InvalidConfig("spade_hidden must be >= 1".into()));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.channel_mult.len()
    }

    /// Input sides must be divisible by this (one halving per level change).
    pub fn spatial_multiple(&self) -> usize {
        1 << (self.levels() - 1)
    }

    fn level_channels(&self) -> Vec<usize> {
        self.channel_mult
            .iter()
            .map(|&m| m * self.base_channels)
            .collect()
    }

    fn temb_dim(&self) -> usize {
        4 * self.base_channels
    }
}

/// Sinusoidal embedding of (1-based) timesteps, shape `[B, dim]`.
pub fn timestep_embedding(ts: &[usize], dim: usize) -> Array2<f64> {
    assert!(dim >= 2 && dim.is_multiple_of(2), "embedding dim must be even");
    let half = dim / 2;
    let mut out = Array2::<f64>::zeros((ts.len(), dim));
    for (bi, &t) in ts.iter().enumerate() {
        for k in 0..half {
            let exponent = if half > 1 {
                k as f64 / (half as f64 - 1.0)
            } else {
                0.0
            };
            let arg = t as f64 * 10000f64.powf(-exponent);
            out[[bi, k]] = arg.sin();
            out[[bi, half + k]] = arg.cos();
        }
    }
    out
}

/// Residual block; with `spade` set, both normalizations are semantic.
struct ResBlock {
    spade: Option<(SpadeNorm, SpadeNorm)>,
    groups_in: usize,
    groups_out: usize,
    conv1: Conv2dLayer,
    conv2: Conv2dLayer,
    temb_proj: LinearLayer,
    skip: Option<Conv2dLayer>,
}

impl ResBlock {
    fn register(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        temb_dim: usize,
        spade: Option<(usize, usize)>,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let spade = spade.map(|(n_classes, hidden)| {
            (
                SpadeNorm::register(ps, &format!("{name}.spade1"), c_in, n_classes, hidden, rng),
                SpadeNorm::register(ps, &format!("{name}.spade2"), c_out, n_classes, hidden, rng),
            )
        });
        let conv1 = Conv2dLayer::register(
            ps,
            &format!("{name}.conv1"),
            c_in,
            c_out,
            3,
            1,
            1,
            Init::He,
            rng,
        );
        let conv2 = Conv2dLayer::register(
            ps,
            &format!("{name}.conv2"),
            c_out,
            c_out,
            3,
            1,
            1,
            Init::Zero,
            rng,
        );
        let temb_proj =
            LinearLayer::register(ps, &format!("{name}.temb"), temb_dim, c_out, Init::He, rng);
        let skip = (c_in != c_out).then(|| {
            Conv2dLayer::register(ps, &format!("{name}.skip"), c_in, c_out, 1, 1, 0, Init::He, rng)
        });
        Self {
            spade,
            groups_in: norm_groups(c_in, MAX_NORM_GROUPS),
            groups_out: norm_groups(c_out, MAX_NORM_GROUPS),
            conv1,
            conv2,
            temb_proj,
            skip,
        }
    }

    fn forward(&self, t: &mut Tape, vars: &[Var], x: Var, temb: Var, onehot: Option<Var>) -> Var {
        let mut h = match (&self.spade, onehot) {
            (Some((s1, _)), Some(oh)) => s1.forward(t, vars, x, oh),
            (None, _) => t.group_norm(x, self.groups_in),
            (Some(_), None) => panic!("semantic block needs a one-hot input"),
        };
        h = t.silu(h);
        h = self.conv1.forward(t, vars, h);
        let ts = t.silu(temb);
        let bias = self.temb_proj.forward(t, vars, ts);
        h = t.add_channel_bias(h, bias);
        h = match (&self.spade, onehot) {
            (Some((_, s2)), Some(oh)) => s2.forward(t, vars, h, oh),
            _ => t.group_norm(h, self.groups_out),
        };
        h = t.silu(h);
        h = self.conv2.forward(t, vars, h);
        let sk = match &self.skip {
            Some(conv) => conv.forward(t, vars, x),
            None => x,
        };
        t.add(sk, h)
    }
}

/// Single-head self-attention over all spatial positions.
struct AttentionBlock {
    groups: usize,
    q: Conv2dLayer,
    k: Conv2dLayer,
    v: Conv2dLayer,
    proj: Conv2dLayer,
    channels: usize,
}

impl AttentionBlock {
    fn register(
        ps: &mut ParamStore,
        name: &str,
        channels: usize,
        rng: &mut ChaCha12Rng,
    ) -> Self {
        let mk = |ps: &mut ParamStore, suffix: &str, init, rng: &mut ChaCha12Rng| {
            Conv2dLayer::register(
                ps,
                &format!("{name}.{suffix}"),
                channels,
                channels,
                1,
                1,
                0,
                init,
                rng,
            )
        };
        Self {
            groups: norm_groups(channels, MAX_NORM_GROUPS),
            q: mk(ps, "q", Init::He, rng),
            k: mk(ps, "k", Init::He, rng),
            v: mk(ps, "v", Init::He, rng),
            proj: mk(ps, "proj", Init::Zero, rng),
            channels,
        }
    }

    fn forward(&self, t: &mut Tape, vars: &[Var], x: Var) -> Var {
        let shape = t.value(x).shape().to_vec();
        let (b, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
        let n = t.group_norm(x, self.groups);
        let q = self.q.forward(t, vars, n);
        let k = self.k.forward(t, vars, n);
        let v = self.v.forward(t, vars, n);
        let q = t.reshape(q, &[b, c, h * w]);
        let k = t.reshape(k, &[b, c, h * w]);
        let v = t.reshape(v, &[b, c, h * w]);
        let qt = t.transpose_last(q); // [B, HW, C]
        let scores = t.batch_matmul(qt, k); // [B, HW, HW]
        let scaled = t.scale(scores, 1.0 / (self.channels as f64).sqrt());
        let attn = t.softmax_last(scaled);
        let attn_t = t.transpose_last(attn);
        let mixed = t.batch_matmul(v, attn_t); // [B, C, HW]
        let mixed = t.reshape(mixed, &[b, c, h, w]);
        let out = self.proj.forward(t, vars, mixed);
        t.add(x, out)
    }
}

pub struct Denoiser {
    cfg: DenoiserConfig,
    params: ParamStore,
    stem: Conv2dLayer,
    temb1: LinearLayer,
    temb2: LinearLayer,
    enc: Vec<Vec<ResBlock>>,
    down: Vec<Conv2dLayer>,
    mid1: ResBlock,
    mid_attn: Option<AttentionBlock>,
    mid2: ResBlock,
    dec: Vec<Vec<ResBlock>>,
    up: Vec<Conv2dLayer>,
    head_groups: usize,
    head: Conv2dLayer,
}

impl Denoiser {
    pub fn new(cfg: DenoiserConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut ps = ParamStore::new();
        let ch = cfg.level_channels();
        let levels = cfg.levels();
        let temb_dim = cfg.temb_dim();
        let spade_args = (cfg.n_classes as usize, cfg.spade_hidden);

        let stem = Conv2dLayer::register(
            &mut ps,
            "stem",
            IN_CHANNELS,
            cfg.base_channels,
            3,
            1,
            1,
            Init::He,
            &mut rng,
        );
        let temb1 = LinearLayer::register(
            &mut ps,
            "temb.l1",
            cfg.base_channels,
            temb_dim,
            Init::He,
            &mut rng,
        );
        let temb2 =
            LinearLayer::register(&mut ps, "temb.l2", temb_dim, temb_dim, Init::He, &mut rng);

        // Mirror of the forward pass: every channel count pushed here is
        // popped in the same order by the decoder registration below.
        let mut skip_ch = vec![cfg.base_channels];
        let mut enc = Vec::new();
        let mut down = Vec::new();
        for l in 0..levels {
            let mut level = Vec::new();
            let mut c_in = if l == 0 { cfg.base_channels } else { ch[l - 1] };
            for i in 0..cfg.res_blocks {
                level.push(ResBlock::register(
                    &mut ps,
                    &format!("enc{l}.b{i}"),
                    c_in,
                    ch[l],
                    temb_dim,
                    None,
                    &mut rng,
                ));
                c_in = ch[l];
                skip_ch.push(ch[l]);
            }
            enc.push(level);
            if l + 1 < levels {
                down.push(Conv2dLayer::register(
                    &mut ps,
                    &format!("down{l}"),
                    ch[l],
                    ch[l],
                    3,
                    2,
                    1,
                    Init::He,
                    &mut rng,
                ));
                skip_ch.push(ch[l]);
            }
        }

        let c_mid = ch[levels - 1];
        let mid1 = ResBlock::register(
            &mut ps,
            "mid.b1",
            c_mid,
            c_mid,
            temb_dim,
            Some(spade_args),
            &mut rng,
        );
        let mid_attn = cfg
            .attend_lowest
            .then(|| AttentionBlock::register(&mut ps, "mid.attn", c_mid, &mut rng));
        let mid2 = ResBlock::register(
            &mut ps,
            "mid.b2",
            c_mid,
            c_mid,
            temb_dim,
            Some(spade_args),
            &mut rng,
        );

        let mut dec = Vec::new();
        let mut up = Vec::new();
        let mut cur = c_mid;
        for l in (0..levels).rev() {
            let mut level = Vec::new();
            for i in 0..=cfg.res_blocks {
                let sk = skip_ch.pop().expect("skip stack underflow");
                level.push(ResBlock::register(
                    &mut ps,
                    &format!("dec{l}.b{i}"),
                    cur + sk,
                    ch[l],
                    temb_dim,
                    Some(spade_args),
                    &mut rng,
                ));
                cur = ch[l];
            }
            dec.push(level);
            if l > 0 {
                up.push(Conv2dLayer::register(
                    &mut ps,
                    &format!("up{l}"),
                    ch[l],
                    ch[l],
                    3,
                    1,
                    1,
                    Init::He,
                    &mut rng,
                ));
            }
        }
        assert!(skip_ch.is_empty(), "unbalanced skip connections");

        let head_groups = norm_groups(ch[0], MAX_NORM_GROUPS);
        let head = Conv2dLayer::register(
            &mut ps,
            "head",
            ch[0],
            OUT_CHANNELS,
            3,
            1,
            1,
            Init::Zero,
            &mut rng,
        );

        Ok(Self {
            cfg,
            params: ps,
            stem,
            temb1,
            temb2,
            enc,
            down,
            mid1,
            mid_attn,
            mid2,
            dec,
            up,
            head_groups,
            head,
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    fn validate_batch(
        &self,
        x6: &ArrayD<f64>,
        ts: &[usize],
        ssms: &[&SegmentationMap],
    ) -> Result<(usize, usize, usize)> {
        if x6.ndim() != 4 || x6.shape()[1] != IN_CHANNELS {
            return Err(SpicError::DimensionMismatch {
                expected: format!("[B, {IN_CHANNELS}, H, W]"),
                got: format!("{:?}", x6.shape()),
            });
        }
        let (b, h, w) = (x6.shape()[0], x6.shape()[2], x6.shape()[3]);
        if b == 0 || ts.len() != b || ssms.len() != b {
            return Err(SpicError::DimensionMismatch {
                expected: format!("{b} timesteps and maps for batch {b}"),
                got: format!("{} timesteps, {} maps", ts.len(), ssms.len()),
            });
        }
        let mult = self.cfg.spatial_multiple();
        if h % mult != 0 || w % mult != 0 {
            return Err(SpicError::NotDivisible {
                height: h,
                width: w,
                factor: mult,
            });
        }
        for s in ssms {
            if s.height() != h || s.width() != w {
                return Err(SpicError::DimensionMismatch {
                    expected: format!("{h}x{w} segmentation map"),
                    got: format!("{}x{}", s.height(), s.width()),
                });
            }
            if s.n_classes() != self.cfg.n_classes {
                return Err(SpicError::InvalidConfig(format!(
                    "model conditions on {} classes, map has {}",
                    self.cfg.n_classes,
                    s.n_classes()
                )));
            }
        }
        Ok((b, h, w))
    }

    /// One-hot conditioning tensors, one per resolution level.
    fn level_onehots(
        &self,
        ssms: &[&SegmentationMap],
        h: usize,
        w: usize,
    ) -> Result<Vec<ArrayD<f64>>> {
        (0..self.cfg.levels())
            .map(|l| resized_onehot_batch(ssms, h >> l, w >> l))
            .collect()
    }

    fn forward_graph(
        &self,
        t: &mut Tape,
        vars: &[Var],
        x6: Var,
        temb_in: Var,
        ohs: &[Var],
    ) -> Var {
        let h1 = self.temb1.forward(t, vars, temb_in);
        let h1 = t.silu(h1);
        let temb = self.temb2.forward(t, vars, h1);

        let mut h = self.stem.forward(t, vars, x6);
        let mut skips = vec![h];
        for (l, level) in self.enc.iter().enumerate() {
            for blk in level {
                h = blk.forward(t, vars, h, temb, None);
                skips.push(h);
            }
            if l + 1 < self.enc.len() {
                h = self.down[l].forward(t, vars, h);
                skips.push(h);
            }
        }

        let lowest = ohs[self.cfg.levels() - 1];
        h = self.mid1.forward(t, vars, h, temb, Some(lowest));
        if let Some(attn) = &self.mid_attn {
            h = attn.forward(t, vars, h);
        }
        h = self.mid2.forward(t, vars, h, temb, Some(lowest));

        for (di, level) in self.dec.iter().enumerate() {
            let l = self.cfg.levels() - 1 - di;
            for blk in level {
                let sk = skips.pop().expect("skip stack underflow");
                let cat = t.concat_channels(h, sk);
                h = blk.forward(t, vars, cat, temb, Some(ohs[l]));
            }
            if l > 0 {
                let ups = t.upsample_nearest2(h);
                h = self.up[di].forward(t, vars, ups);
            }
        }
        assert!(skips.is_empty(), "unconsumed skip connections");

        let hn = t.group_norm(h, self.head_groups);
        let hs = t.silu(hn);
        self.head.forward(t, vars, hs)
    }

    /// Noise estimate for a batch: `x6` is `[B, 6, H, W]`, `ts` holds the
    /// 1-based timestep per item, `ssms` the full-resolution maps.
    pub fn predict_eps(
        &self,
        x6: &ArrayD<f64>,
        ts: &[usize],
        ssms: &[&SegmentationMap],
    ) -> Result<ArrayD<f64>> {
        let (_, h, w) = self.validate_batch(x6, ts, ssms)?;
        let ohs = self.level_onehots(ssms, h, w)?;
        let mut tape = Tape::new();
        let vars = self.params.inject(&mut tape);
        let x = tape.leaf(x6.clone(), false);
        let temb_in = tape.leaf(
            timestep_embedding(ts, self.cfg.base_channels).into_dyn(),
            false,
        );
        let oh_vars: Vec<Var> = ohs.into_iter().map(|o| tape.leaf(o, false)).collect();
        let out = self.forward_graph(&mut tape, &vars, x, temb_in, &oh_vars);
        Ok(tape.value(out).clone())
    }

    /// MSE between predicted and target noise plus gradients for every
    /// parameter, aligned with store indices.
    pub fn loss_and_grads(
        &self,
        x6: &ArrayD<f64>,
        ts: &[usize],
        ssms: &[&SegmentationMap],
        target_eps: &ArrayD<f64>,
    ) -> Result<(f64, Vec<ArrayD<f64>>)> {
        let (b, h, w) = self.validate_batch(x6, ts, ssms)?;
        if target_eps.shape() != [b, OUT_CHANNELS, h, w] {
            return Err(SpicError::DimensionMismatch {
                expected: format!("[{b}, {OUT_CHANNELS}, {h}, {w}]"),
                got: format!("{:?}", target_eps.shape()),
            });
        }
        let ohs = self.level_onehots(ssms, h, w)?;
        let mut tape = Tape::new();
        let vars = self.params.inject(&mut tape);
        let x = tape.leaf(x6.clone(), false);
        let temb_in = tape.leaf(
            timestep_embedding(ts, self.cfg.base_channels).into_dyn(),
            false,
        );
        let oh_vars: Vec<Var> = ohs.into_iter().map(|o| tape.leaf(o, false)).collect();
        let pred = self.forward_graph(&mut tape, &vars, x, temb_in, &oh_vars);
        let target = tape.leaf(target_eps.clone(), false);
        let loss = tape.mse(pred, target);
        let loss_value = tape.value(loss)[[0]];
        let grads = tape.backward(loss);
        let out = vars
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                grads
                    .get(v)
                    .cloned()
                    .unwrap_or_else(|| ArrayD::zeros(IxDyn(self.params.value(i).shape())))
            })
            .collect();
        Ok((loss_value, out))
    }
}
