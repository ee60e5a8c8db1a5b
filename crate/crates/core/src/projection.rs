//! The entity-to-text projection: identity, affine, or a stack of
//! `GELU(W x + b)` layers followed by an optional outer activation.

use ndarray::{Array1, Array2, ArrayView1};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};

const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Exact GELU, `x·Φ(x)`.
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2))
}

/// `d/dx GELU(x) = Φ(x) + x·φ(x)`.
pub fn gelu_grad(x: f64) -> f64 {
    let cdf = 0.5 * (1.0 + libm::erf(x * std::f64::consts::FRAC_1_SQRT_2));
    cdf + x * FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Identity,
    Linear,
    Complex,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FinalActivation {
    None,
    Gelu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectionSpec {
    pub variant: Variant,
    pub input_dim: usize,
    pub output_dim: usize,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_final")]
    pub final_activation: FinalActivation,
}

fn default_depth() -> usize {
    2
}

fn default_final() -> FinalActivation {
    FinalActivation::None
}

impl ProjectionSpec {
    pub fn new(variant: Variant, input_dim: usize, output_dim: usize) -> Self {
        Self { variant, input_dim, output_dim, depth: default_depth(), final_activation: default_final() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.output_dim == 0 {
            return contract("projection dimensions must be positive");
        }
        if self.variant == Variant::Identity && self.input_dim != self.output_dim {
            return contract(format!(
                "identity projection needs d_e = d_q, got {} and {}",
                self.input_dim, self.output_dim
            ));
        }
        if self.variant == Variant::Complex && self.depth == 0 {
            return contract("complex projection needs depth >= 1");
        }
        Ok(())
    }

    /// `(out, in)` shape of every layer; hidden widths equal `output_dim`.
    pub fn layer_shapes(&self) -> Vec<(usize, usize)> {
        match self.variant {
            Variant::Identity => Vec::new(),
            Variant::Linear => vec![(self.output_dim, self.input_dim)],
            Variant::Complex => (0..self.depth)
                .map(|k| (self.output_dim, if k == 0 { self.input_dim } else { self.output_dim }))
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out × in`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionParams {
    pub layers: Vec<Layer>,
}

impl ProjectionParams {
    /// Glorot-uniform weights, zero biases.
    pub fn init(spec: &ProjectionSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = spec
            .layer_shapes()
            .into_iter()
            .map(|(out, inp)| {
                let a = (6.0 / (out + inp) as f64).sqrt();
                Layer {
                    weight: Array2::from_shape_simple_fn((out, inp), || rng.random_range(-a..a)),
                    bias: Array1::zeros(out),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn check(&self, spec: &ProjectionSpec) -> Result<()> {
        spec.validate()?;
        let shapes = spec.layer_shapes();
        if shapes.len() != self.layers.len()
            || shapes.iter().zip(&self.layers).any(|(&(o, i), l)| l.weight.dim() != (o, i) || l.bias.len() != o)
        {
            return contract("projection parameters do not match the spec");
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer { weight: Array2::zeros(l.weight.raw_dim()), bias: Array1::zeros(l.bias.len()) })
                .collect(),
        }
    }

    pub fn scaled_add(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weight.scaled_add(alpha, &b.weight);
            a.bias.scaled_add(alpha, &b.bias);
        }
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// Flat view in layer order: weight (row-major) then bias.
    pub fn values(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers.iter().flat_map(|l| l.weight.iter().chain(l.bias.iter()).copied())
    }

    pub fn values_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers.iter_mut().flat_map(|l| l.weight.iter_mut().chain(l.bias.iter_mut()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionGrads {
    pub params: ProjectionParams,
    pub input: Array1<f64>,
}

fn check_input(spec: &ProjectionSpec, params: &ProjectionParams, x: &ArrayView1<f64>) -> Result<()> {
    params.check(spec)?;
    if x.len() != spec.input_dim {
        return contract(format!("entity vector has length {}, expected {}", x.len(), spec.input_dim));
    }
    Ok(())
}

/// Pre-activations of each layer, kept for the backward pass.
fn forward_trace(spec: &ProjectionSpec, params: &ProjectionParams, x: ArrayView1<f64>) -> (Vec<Array1<f64>>, Array1<f64>) {
    match spec.variant {
        Variant::Identity => (Vec::new(), x.to_owned()),
        Variant::Linear => {
            let l = &params.layers[0];
            (Vec::new(), l.weight.dot(&x) + &l.bias)
        }
        Variant::Complex => {
            let mut pre = Vec::with_capacity(params.layers.len());
            let mut h = x.to_owned();
            for l in &params.layers {
                let z = l.weight.dot(&h) + &l.bias;
                h = z.mapv(gelu);
                pre.push(z);
            }
            if spec.final_activation == FinalActivation::Gelu {
                pre.push(h.clone());
                h.mapv_inplace(gelu);
            }
            (pre, h)
        }
    }
}

/// `H_e = φ(x_e)`.
pub fn project(spec: &ProjectionSpec, params: &ProjectionParams, x_e: ArrayView1<f64>) -> Result<Array1<f64>> {
    check_input(spec, params, &x_e)?;
    Ok(forward_trace(spec, params, x_e).1)
}

/// Reverse-mode gradients of `upstream · φ(x_e)` with respect to every
/// parameter and to `x_e`.
pub fn project_gradients(
    spec: &ProjectionSpec,
    params: &ProjectionParams,
    x_e: ArrayView1<f64>,
    upstream: ArrayView1<f64>,
) -> Result<ProjectionGrads> {
    check_input(spec, params, &x_e)?;
    if upstream.len() != spec.output_dim {
        return contract("upstream gradient has the wrong length");
    }
    let mut grads = params.zeros_like();
    let input = match spec.variant {
        Variant::Identity => upstream.to_owned(),
        Variant::Linear => {
            let l = &params.layers[0];
            let g = &mut grads.layers[0];
            g.weight = outer(&upstream, &x_e);
            g.bias = upstream.to_owned();
            l.weight.t().dot(&upstream)
        }
        Variant::Complex => {
            let (mut pre, _) = forward_trace(spec, params, x_e);
            let mut delta = upstream.to_owned();
            if spec.final_activation == FinalActivation::Gelu {
                let z = pre.pop().expect("final pre-activation");
                delta = delta * z.mapv(gelu_grad);
            }
            for k in (0..params.layers.len()).rev() {
                let z = &pre[k];
                let dz = &delta * &z.mapv(gelu_grad);
                let layer_input = if k == 0 { x_e.to_owned() } else { pre[k - 1].mapv(gelu) };
                grads.layers[k].weight = outer(&dz.view(), &layer_input.view());
                grads.layers[k].bias = dz.clone();
                delta = params.layers[k].weight.t().dot(&dz);
            }
            delta
        }
    };
    Ok(ProjectionGrads { params: grads, input })
}

fn outer(a: &ArrayView1<f64>, b: &ArrayView1<f64>) -> Array2<f64> {
    Array2::from_shape_fn((a.len(), b.len()), |(i, j)| a[i] * b[j])
}
