//! Named parameter storage and the two learnable layer kinds.
//!
//! Parameters live outside any tape in a `ParamStore`; each forward pass
//! injects them as leaves in registration order, so a parameter's store
//! index equals its position in the injected `Var` slice. Checkpoints
//! address parameters by name, never by index.

use ndarray::{ArrayD, IxDyn};
use rand::Rng;

use super::nn::{gaussian, Tape, Var};

pub struct ParamStore {
    names: Vec<String>,
    values: Vec<ArrayD<f64>>,
}

impl Default for ParamStore {
    fn default() -> Self {
        Self::new()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, value: ArrayD<f64>) -> usize {
        assert!(
            !self.names.iter().any(|n| n == name),
            "duplicate parameter name {name}"
        );
        self.names.push(name.to_string());
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn value(&self, i: usize) -> &ArrayD<f64> {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut ArrayD<f64> {
        &mut self.values[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn n_scalars(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ArrayD<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Adds every parameter to `tape` as a differentiable leaf; the returned
    /// slice is indexed by store index.
    pub fn inject(&self, tape: &mut Tape) -> Vec<Var> {
        self.values
            .iter()
            .map(|v| tape.leaf(v.clone(), true))
            .collect()
    }
}

#[derive(Clone, Copy)]
pub enum Init {
    /// N(0, 2/fan_in); fan_in is inferred from the weight shape.
    He,
    Zero,
}

fn init_weight<R: Rng>(shape: &[usize], fan_in: usize, init: Init, rng: &mut R) -> ArrayD<f64> {
    match init {
        Init::Zero => ArrayD::zeros(IxDyn(shape)),
        Init::He => {
            let scale = (2.0 / fan_in as f64).sqrt();
            ArrayD::from_shape_simple_fn(IxDyn(shape), || gaussian(rng, scale))
        }
    }
}

/// 2D convolution with square kernel; biases always start at zero.
pub struct Conv2dLayer {
    w: usize,
    b: usize,
    stride: usize,
    pad: usize,
}

impl Conv2dLayer {
    #[allow(clippy::too_many_arguments)]
    pub fn register<R: Rng>(
        ps: &mut ParamStore,
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = ps.add(
            &format!("{name}.w"),
            init_weight(&[c_out, c_in, k, k], c_in * k * k, init, rng),
        );
        let b = ps.add(&format!("{name}.b"), ArrayD::zeros(IxDyn(&[c_out])));
        Self { w, b, stride, pad }
    }

    pub fn forward(&self, t: &mut Tape, vars: &[Var], x: Var) -> Var {
        t.conv2d(x, vars[self.w], vars[self.b], self.stride, self.pad)
    }
}

pub struct LinearLayer {
    w: usize,
    b: usize,
}

impl LinearLayer {
    pub fn register<R: Rng>(
        ps: &mut ParamStore,
        name: &str,
        d_in: usize,
        d_out: usize,
        init: Init,
        rng: &mut R,
    ) -> Self {
        let w = ps.add(
            &format!("{name}.w"),
            init_weight(&[d_out, d_in], d_in, init, rng),
        );
        let b = ps.add(&format!("{name}.b"), ArrayD::zeros(IxDyn(&[d_out])));
        Self { w, b }
    }

    pub fn forward(&self, t: &mut Tape, vars: &[Var], x: Var) -> Var {
        t.linear(x, vars[self.w], vars[self.b])
    }
}
