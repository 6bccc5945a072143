//! Reverse-mode autodiff over f64 tensors.
//!
//! A `Tape` is an append-only list of nodes; building an op computes its
//! value eagerly and records what backward needs. Gradients flow by walking
//! the tape once in reverse. Everything is f64 end to end so gradient
//! checks against central finite differences are meaningful at 1e-3.
//!
//! Convolutions lower to im2col plus one dense matmul; backward recomputes
//! the column matrix instead of caching it, trading a little time for a
//! much smaller live set.

use ndarray::{ArrayD, Axis, Ix1, Ix2, Ix3, Ix4, IxDyn};

pub type Var = usize;

const GN_EPS: f64 = 1e-5;

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddScalar(Var),
    Silu(Var),
    Linear {
        input: Var,
        weight: Var,
        bias: Var,
    },
    Conv2d {
        input: Var,
        weight: Var,
        bias: Var,
        stride: usize,
        pad: usize,
    },
    GroupNorm {
        input: Var,
        groups: usize,
        // Saved forward statistics, shape [batch, groups].
        inv_std: ndarray::Array2<f64>,
    },
    ChannelAffine {
        input: Var,
        weight: Var,
        bias: Var,
    },
    AddChannelBias {
        input: Var,
        bias: Var,
    },
    ConcatChannels(Var, Var),
    UpsampleNearest2(Var),
    BatchMatmul(Var, Var),
    TransposeLast(Var),
    SoftmaxLast(Var),
    Reshape(Var),
    MeanAll(Var),
}

impl Op {
    fn inputs(&self) -> Vec<Var> {
        match *self {
            Op::Leaf => vec![],
            Op::Add(a, b)
            | Op::Sub(a, b)
            | Op::Mul(a, b)
            | Op::ConcatChannels(a, b)
            | Op::BatchMatmul(a, b) => vec![a, b],
            Op::Scale(a, _)
            | Op::AddScalar(a)
            | Op::Silu(a)
            | Op::UpsampleNearest2(a)
            | Op::TransposeLast(a)
            | Op::SoftmaxLast(a)
            | Op::Reshape(a)
            | Op::MeanAll(a) => vec![a],
            Op::Linear {
                input,
                weight,
                bias,
            }
            | Op::Conv2d {
                input,
                weight,
                bias,
                ..
            }
            | Op::ChannelAffine {
                input,
                weight,
                bias,
            } => vec![input, weight, bias],
            Op::GroupNorm { input, .. } => vec![input],
            Op::AddChannelBias { input, bias } => vec![input, bias],
        }
    }
}

struct Node {
    value: ArrayD<f64>,
    op: Op,
    requires_grad: bool,
}

pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<ArrayD<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&ArrayD<f64>> {
        self.grads[v].as_ref()
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn value(&self, v: Var) -> &ArrayD<f64> {
        &self.nodes[v].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op) -> Var {
        let requires_grad = op.inputs().iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    pub fn leaf(&mut self, value: ArrayD<f64>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        self.nodes.len() - 1
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let v = &self.nodes[a].value + &self.nodes[b].value;
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let v = &self.nodes[a].value - &self.nodes[b].value;
        self.push(v, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.nodes[a].value.shape(), self.nodes[b].value.shape());
        let v = &self.nodes[a].value * &self.nodes[b].value;
        self.push(v, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = &self.nodes[a].value * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn add_scalar(&mut self, a: Var, k: f64) -> Var {
        let v = &self.nodes[a].value + k;
        self.push(v, Op::AddScalar(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.nodes[a].value.mapv(|x| x * sigmoid(x));
        self.push(v, Op::Silu(a))
    }

    /// `input` [B,I] x `weight` [O,I] + `bias` [O] -> [B,O].
    pub fn linear(&mut self, input: Var, weight: Var, bias: Var) -> Var {
        let x = self.nodes[input]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let w = self.nodes[weight]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let b = self.nodes[bias]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .unwrap();
        assert_eq!(x.ncols(), w.ncols());
        assert_eq!(w.nrows(), b.len());
        let v = x.dot(&w.t()) + b;
        self.push(
            v.into_dyn(),
            Op::Linear {
                input,
                weight,
                bias,
            },
        )
    }

    /// `input` [B,C,H,W] * `weight` [O,C,K,K] + `bias` [O] -> [B,O,OH,OW].
    pub fn conv2d(&mut self, input: Var, weight: Var, bias: Var, stride: usize, pad: usize) -> Var {
        let x = self.nodes[input]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap();
        let w = self.nodes[weight]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap();
        let b = self.nodes[bias]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .unwrap();
        let (bs, c, h, wd) = x.dim();
        let (o, wc, k, k2) = w.dim();
        assert_eq!(c, wc, "channel mismatch");
        assert_eq!(k, k2, "square kernels only");
        assert_eq!(o, b.len());
        assert!(h + 2 * pad >= k && wd + 2 * pad >= k);
        let oh = (h + 2 * pad - k) / stride + 1;
        let ow = (wd + 2 * pad - k) / stride + 1;

        let cols = im2col(&x, k, stride, pad);
        let w2 = w.to_shape((o, c * k * k)).unwrap().to_owned();
        let out2 = w2.dot(&cols); // [O, B*OH*OW]
        let mut v = ndarray::Array4::<f64>::zeros((bs, o, oh, ow));
        for bi in 0..bs {
            for oc in 0..o {
                for oy in 0..oh {
                    for ox in 0..ow {
                        v[[bi, oc, oy, ox]] = out2[[oc, (bi * oh + oy) * ow + ox]] + b[oc];
                    }
                }
            }
        }
        self.push(
            v.into_dyn(),
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            },
        )
    }

    /// Parameter-free group normalization over [B,C,H,W].
    pub fn group_norm(&mut self, input: Var, groups: usize) -> Var {
        let x = self.nodes[input]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap();
        let (b, c, h, w) = x.dim();
        assert!(groups >= 1 && c % groups == 0, "C={c} groups={groups}");
        let cpg = c / groups;
        let m = (cpg * h * w) as f64;
        let mut v = x.to_owned();
        let mut inv_std = ndarray::Array2::<f64>::zeros((b, groups));
        for bi in 0..b {
            for g in 0..groups {
                let mut slice = v.slice_mut(ndarray::s![bi, g * cpg..(g + 1) * cpg, .., ..]);
                let mean = slice.sum() / m;
                let var = slice.iter().map(|&x| (x - mean) * (x - mean)).sum::<f64>() / m;
                let is = 1.0 / (var + GN_EPS).sqrt();
                slice.mapv_inplace(|x| (x - mean) * is);
                inv_std[[bi, g]] = is;
            }
        }
        self.push(
            v.into_dyn(),
            Op::GroupNorm {
                input,
                groups,
                inv_std,
            },
        )
    }

    /// Per-channel scale and shift: `weight`,`bias` [C] over [B,C,H,W].
    pub fn channel_affine(&mut self, input: Var, weight: Var, bias: Var) -> Var {
        let x = self.nodes[input]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap();
        let w = self.nodes[weight]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .unwrap();
        let b = self.nodes[bias]
            .value
            .view()
            .into_dimensionality::<Ix1>()
            .unwrap();
        let (_, c, _, _) = x.dim();
        assert_eq!(w.len(), c);
        assert_eq!(b.len(), c);
        let mut v = x.to_owned();
        for (ci, mut plane) in v.axis_iter_mut(Axis(1)).enumerate() {
            plane.mapv_inplace(|x| x * w[ci] + b[ci]);
        }
        self.push(
            v.into_dyn(),
            Op::ChannelAffine {
                input,
                weight,
                bias,
            },
        )
    }

    /// Adds a per-(batch, channel) bias [B,C] to [B,C,H,W].
    pub fn add_channel_bias(&mut self, input: Var, bias: Var) -> Var {
        let x = self.nodes[input]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap();
        let b = self.nodes[bias]
            .value
            .view()
            .into_dimensionality::<Ix2>()
            .unwrap();
        let (bs, c, _, _) = x.dim();
        assert_eq!(b.dim(), (bs, c));
        let mut v = x.to_owned();
        for bi in 0..bs {
            for ci in 0..c {
                v.slice_mut(ndarray::s![bi, ci, .., ..])
                    .mapv_inplace(|x| x + b[[bi, ci]]);
            }
        }
        self.push(v.into_dyn(), Op::AddChannelBias { input, bias })
    }

    /// Concatenates two [B,C,H,W] tensors along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Var {
        let xa = self.nodes[a]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap();
        let xb = self.nodes[b]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap();
        let v = ndarray::concatenate(Axis(1), &[xa, xb]).unwrap();
        self.push(v.into_dyn(), Op::ConcatChannels(a, b))
    }

    /// Nearest-neighbor 2x upsample of [B,C,H,W].
    pub fn upsample_nearest2(&mut self, a: Var) -> Var {
        let x = self.nodes[a]
            .value
            .view()
            .into_dimensionality::<Ix4>()
            .unwrap();
        let (b, c, h, w) = x.dim();
        let v = ndarray::Array4::from_shape_fn((b, c, 2 * h, 2 * w), |(bi, ci, y, xx)| {
            x[[bi, ci, y / 2, xx / 2]]
        });
        self.push(v.into_dyn(), Op::UpsampleNearest2(a))
    }

    /// [B,N,M] x [B,M,P] -> [B,N,P].
    pub fn batch_matmul(&mut self, a: Var, b: Var) -> Var {
        let xa = self.nodes[a]
            .value
            .view()
            .into_dimensionality::<Ix3>()
            .unwrap();
        let xb = self.nodes[b]
            .value
            .view()
            .into_dimensionality::<Ix3>()
            .unwrap();
        let (bs, n, m) = xa.dim();
        let (bs2, m2, p) = xb.dim();
        assert_eq!(bs, bs2);
        assert_eq!(m, m2);
        let mut v = ndarray::Array3::<f64>::zeros((bs, n, p));
        for bi in 0..bs {
            let prod = xa.index_axis(Axis(0), bi).dot(&xb.index_axis(Axis(0), bi));
            v.index_axis_mut(Axis(0), bi).assign(&prod);
        }
        self.push(v.into_dyn(), Op::BatchMatmul(a, b))
    }

    /// Swaps the last two axes of [B,N,M].
    pub fn transpose_last(&mut self, a: Var) -> Var {
        let x = self.nodes[a]
            .value
            .view()
            .into_dimensionality::<Ix3>()
            .unwrap();
        let v = x.permuted_axes([0, 2, 1]).to_owned();
        self.push(v.into_dyn(), Op::TransposeLast(a))
    }

    /// Softmax along the last axis of [B,N,M].
    pub fn softmax_last(&mut self, a: Var) -> Var {
        let x = self.nodes[a]
            .value
            .view()
            .into_dimensionality::<Ix3>()
            .unwrap();
        let mut v = x.to_owned();
        for mut row in v.rows_mut() {
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.mapv_inplace(|x| (x - max).exp());
            let sum = row.sum();
            row.mapv_inplace(|x| x / sum);
        }
        self.push(v.into_dyn(), Op::SoftmaxLast(a))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Var {
        let v = self.nodes[a]
            .value
            .view()
            .to_shape(IxDyn(shape))
            .expect("reshape size mismatch")
            .to_owned();
        self.push(v, Op::Reshape(a))
    }

    /// Mean of all elements, as a one-element tensor.
    pub fn mean_all(&mut self, a: Var) -> Var {
        let m = self.nodes[a].value.mean().unwrap();
        let v = ArrayD::from_elem(IxDyn(&[1]), m);
        self.push(v, Op::MeanAll(a))
    }

    /// Mean squared error between two same-shape tensors, as a scalar node.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let d = self.sub(a, b);
        let sq = self.mul(d, d);
        self.mean_all(sq)
    }

    pub fn backward(&self, root: Var) -> Gradients {
        assert_eq!(
            self.nodes[root].value.len(),
            1,
            "backward needs a scalar root"
        );
        let mut grads: Vec<Option<ArrayD<f64>>> = vec![None; self.nodes.len()];
        grads[root] = Some(ArrayD::from_elem(IxDyn(&[1]), 1.0));

        for i in (0..=root).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let g = match grads[i].take() {
                Some(g) => g,
                None => continue,
            };
            self.backprop_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients { grads }
    }

    fn accum(&self, grads: &mut [Option<ArrayD<f64>>], v: Var, delta: ArrayD<f64>) {
        if !self.nodes[v].requires_grad {
            return;
        }
        match &mut grads[v] {
            Some(g) => *g += &delta,
            slot @ None => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, i: Var, g: &ArrayD<f64>, grads: &mut [Option<ArrayD<f64>>]) {
        match &self.nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, g.clone());
            }
            Op::Sub(a, b) => {
                self.accum(grads, *a, g.clone());
                self.accum(grads, *b, -g);
            }
            Op::Mul(a, b) => {
                self.accum(grads, *a, g * &self.nodes[*b].value);
                self.accum(grads, *b, g * &self.nodes[*a].value);
            }
            Op::Scale(a, k) => self.accum(grads, *a, g * *k),
            Op::AddScalar(a) => self.accum(grads, *a, g.clone()),
            Op::Silu(a) => {
                let dx = self.nodes[*a].value.mapv(|x| {
                    let s = sigmoid(x);
                    s * (1.0 + x * (1.0 - s))
                });
                self.accum(grads, *a, g * &dx);
            }
            Op::Linear {
                input,
                weight,
                bias,
            } => {
                let g2 = g.view().into_dimensionality::<Ix2>().unwrap();
                let x = self.nodes[*input]
                    .value
                    .view()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                let w = self.nodes[*weight]
                    .value
                    .view()
                    .into_dimensionality::<Ix2>()
                    .unwrap();
                self.accum(grads, *input, g2.dot(&w).into_dyn());
                self.accum(grads, *weight, g2.t().dot(&x).into_dyn());
                self.accum(grads, *bias, g2.sum_axis(Axis(0)).into_dyn());
            }
            Op::Conv2d {
                input,
                weight,
                bias,
                stride,
                pad,
            } => {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let x = self.nodes[*input]
                    .value
                    .view()
                    .into_dimensionality::<Ix4>()
                    .unwrap();
                let w = self.nodes[*weight]
                    .value
                    .view()
                    .into_dimensionality::<Ix4>()
                    .unwrap();
                let (bs, c, h, wd) = x.dim();
                let (o, _, k, _) = w.dim();
                let (_, _, oh, ow) = g4.dim();

                let mut g2 = ndarray::Array2::<f64>::zeros((o, bs * oh * ow));
                for bi in 0..bs {
                    for oc in 0..o {
                        for oy in 0..oh {
                            for ox in 0..ow {
                                g2[[oc, (bi * oh + oy) * ow + ox]] = g4[[bi, oc, oy, ox]];
                            }
                        }
                    }
                }
                // Columns are recomputed here rather than kept from forward.
                let cols = im2col(&x, k, *stride, *pad);
                let dw2 = g2.dot(&cols.t()); // [O, C*K*K]
                self.accum(
                    grads,
                    *weight,
                    dw2.to_shape((o, c, k, k)).unwrap().to_owned().into_dyn(),
                );
                self.accum(grads, *bias, g2.sum_axis(Axis(1)).into_dyn());

                if self.nodes[*input].requires_grad {
                    let w2 = w.to_shape((o, c * k * k)).unwrap().to_owned();
                    let dcols = w2.t().dot(&g2); // [C*K*K, B*OH*OW]
                    let dx = col2im(&dcols, (bs, c, h, wd), k, *stride, *pad, oh, ow);
                    self.accum(grads, *input, dx.into_dyn());
                }
            }
            Op::GroupNorm {
                input,
                groups,
                inv_std,
            } => {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let y = self.nodes[i]
                    .value
                    .view()
                    .into_dimensionality::<Ix4>()
                    .unwrap();
                let (b, c, h, w) = y.dim();
                let cpg = c / groups;
                let m = (cpg * h * w) as f64;
                let mut dx = ndarray::Array4::<f64>::zeros((b, c, h, w));
                for bi in 0..b {
                    for gi in 0..*groups {
                        let sl = ndarray::s![bi, gi * cpg..(gi + 1) * cpg, .., ..];
                        let gs = g4.slice(sl);
                        let ys = y.slice(sl);
                        let mean_g = gs.sum() / m;
                        let mean_gy = gs
                            .iter()
                            .zip(ys.iter())
                            .map(|(&a, &b)| a * b)
                            .sum::<f64>()
                            / m;
                        let is = inv_std[[bi, gi]];
                        let mut out = dx.slice_mut(sl);
                        ndarray::Zip::from(&mut out)
                            .and(&gs)
                            .and(&ys)
                            .for_each(|d, &gv, &yv| {
                                *d = is * (gv - mean_g - yv * mean_gy);
                            });
                    }
                }
                self.accum(grads, *input, dx.into_dyn());
            }
            Op::ChannelAffine {
                input,
                weight,
                bias,
            } => {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let x = self.nodes[*input]
                    .value
                    .view()
                    .into_dimensionality::<Ix4>()
                    .unwrap();
                let w = self.nodes[*weight]
                    .value
                    .view()
                    .into_dimensionality::<Ix1>()
                    .unwrap();
                let c = w.len();
                let mut dx = g4.to_owned();
                for (ci, mut plane) in dx.axis_iter_mut(Axis(1)).enumerate() {
                    plane.mapv_inplace(|v| v * w[ci]);
                }
                let mut dw = ndarray::Array1::<f64>::zeros(c);
                let mut db = ndarray::Array1::<f64>::zeros(c);
                for ci in 0..c {
                    let gp = g4.index_axis(Axis(1), ci);
                    let xp = x.index_axis(Axis(1), ci);
                    dw[ci] = gp.iter().zip(xp.iter()).map(|(&a, &b)| a * b).sum();
                    db[ci] = gp.sum();
                }
                self.accum(grads, *input, dx.into_dyn());
                self.accum(grads, *weight, dw.into_dyn());
                self.accum(grads, *bias, db.into_dyn());
            }
            Op::AddChannelBias { input, bias } => {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let (bs, c, _, _) = g4.dim();
                let mut db = ndarray::Array2::<f64>::zeros((bs, c));
                for bi in 0..bs {
                    for ci in 0..c {
                        db[[bi, ci]] = g4.slice(ndarray::s![bi, ci, .., ..]).sum();
                    }
                }
                self.accum(grads, *input, g.clone());
                self.accum(grads, *bias, db.into_dyn());
            }
            Op::ConcatChannels(a, b) => {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let ca = self.nodes[*a].value.shape()[1];
                let ga = g4.slice(ndarray::s![.., ..ca, .., ..]).to_owned();
                let gb = g4.slice(ndarray::s![.., ca.., .., ..]).to_owned();
                self.accum(grads, *a, ga.into_dyn());
                self.accum(grads, *b, gb.into_dyn());
            }
            Op::UpsampleNearest2(a) => {
                let g4 = g.view().into_dimensionality::<Ix4>().unwrap();
                let (bs, c, h2, w2) = g4.dim();
                let mut dx = ndarray::Array4::<f64>::zeros((bs, c, h2 / 2, w2 / 2));
                for bi in 0..bs {
                    for ci in 0..c {
                        for y in 0..h2 {
                            for x in 0..w2 {
                                dx[[bi, ci, y / 2, x / 2]] += g4[[bi, ci, y, x]];
                            }
                        }
                    }
                }
                self.accum(grads, *a, dx.into_dyn());
            }
            Op::BatchMatmul(a, b) => {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let xa = self.nodes[*a]
                    .value
                    .view()
                    .into_dimensionality::<Ix3>()
                    .unwrap();
                let xb = self.nodes[*b]
                    .value
                    .view()
                    .into_dimensionality::<Ix3>()
                    .unwrap();
                let bs = xa.dim().0;
                let mut da = ndarray::Array3::<f64>::zeros(xa.dim());
                let mut db = ndarray::Array3::<f64>::zeros(xb.dim());
                for bi in 0..bs {
                    let gi = g3.index_axis(Axis(0), bi);
                    let ai = xa.index_axis(Axis(0), bi);
                    let bi_m = xb.index_axis(Axis(0), bi);
                    da.index_axis_mut(Axis(0), bi).assign(&gi.dot(&bi_m.t()));
                    db.index_axis_mut(Axis(0), bi).assign(&ai.t().dot(&gi));
                }
                self.accum(grads, *a, da.into_dyn());
                self.accum(grads, *b, db.into_dyn());
            }
            Op::TransposeLast(a) => {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let da = g3.permuted_axes([0, 2, 1]).to_owned();
                self.accum(grads, *a, da.into_dyn());
            }
            Op::SoftmaxLast(a) => {
                let g3 = g.view().into_dimensionality::<Ix3>().unwrap();
                let y = self.nodes[i]
                    .value
                    .view()
                    .into_dimensionality::<Ix3>()
                    .unwrap();
                let mut dx = y.to_owned();
                ndarray::Zip::from(dx.rows_mut())
                    .and(g3.rows())
                    .and(y.rows())
                    .for_each(|mut dr, gr, yr| {
                        let dot: f64 = gr.iter().zip(yr.iter()).map(|(&a, &b)| a * b).sum();
                        ndarray::Zip::from(&mut dr).and(&gr).and(&yr).for_each(
                            |d, &gv, &yv| {
                                *d = yv * (gv - dot);
                            },
                        );
                    });
                self.accum(grads, *a, dx.into_dyn());
            }
            Op::Reshape(a) => {
                let shape = self.nodes[*a].value.shape().to_vec();
                let da = g.view().to_shape(IxDyn(&shape)).unwrap().to_owned();
                self.accum(grads, *a, da);
            }
            Op::MeanAll(a) => {
                let n = self.nodes[*a].value.len() as f64;
                let shape = self.nodes[*a].value.raw_dim();
                let da = ArrayD::from_elem(shape, g[[0]] / n);
                self.accum(grads, *a, da);
            }
        }
    }
}

fn im2col(
    x: &ndarray::ArrayView4<f64>,
    k: usize,
    stride: usize,
    pad: usize,
) -> ndarray::Array2<f64> {
    let (b, c, h, w) = x.dim();
    let oh = (h + 2 * pad - k) / stride + 1;
    let ow = (w + 2 * pad - k) / stride + 1;
    let mut cols = ndarray::Array2::<f64>::zeros((c * k * k, b * oh * ow));
    for bi in 0..b {
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    for oy in 0..oh {
                        let sy = (oy * stride + ky) as isize - pad as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let sx = (ox * stride + kx) as isize - pad as isize;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            cols[[row, (bi * oh + oy) * ow + ox]] =
                                x[[bi, ci, sy as usize, sx as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im(
    dcols: &ndarray::Array2<f64>,
    dim: (usize, usize, usize, usize),
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> ndarray::Array4<f64> {
    let (b, c, h, w) = dim;
    let mut dx = ndarray::Array4::<f64>::zeros(dim);
    for bi in 0..b {
        for ci in 0..c {
            for ky in 0..k {
                for kx in 0..k {
                    let row = (ci * k + ky) * k + kx;
                    for oy in 0..oh {
                        let sy = (oy * stride + ky) as isize - pad as isize;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        for ox in 0..ow {
                            let sx = (ox * stride + kx) as isize - pad as isize;
                            if sx < 0 || sx >= w as isize {
                                continue;
                            }
                            dx[[bi, ci, sy as usize, sx as usize]] +=
                                dcols[[row, (bi * oh + oy) * ow + ox]];
                        }
                    }
                }
            }
        }
    }
    dx
}

/// Largest group count <= `max` that divides the channel count; group norm
/// layers use this so any width is valid.
pub fn norm_groups(channels: usize, max: usize) -> usize {
    (1..=max.min(channels))
        .rev()
        .find(|g| channels.is_multiple_of(*g))
        .unwrap_or(1)
}

/// Draws from N(0, scale^2); used for weight init.
pub fn gaussian<R: rand::Rng>(rng: &mut R, scale: f64) -> f64 {
    let v: f64 = rng.sample(rand_distr::StandardNormal);
    v * scale
}
