//! Single-hidden-layer tanh predictor with an exact reverse-mode gradient.
//!
//! Parameter layout (flat, row-major per layer, weights then biases):
//! `W1 (hidden x input) | b1 (hidden) | W2 (output x hidden) | b2 (output)`.

use std::ops::{Deref, DerefMut};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat parameter vector `theta`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn zeros(len: usize) -> Self {
        ParamVector(vec![0.0; len])
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    /// `self += alpha * other`
    pub fn axpy(&mut self, alpha: f64, other: &[f64]) {
        debug_assert_eq!(self.0.len(), other.len());
        for (a, b) in self.0.iter_mut().zip(other) {
            *a += alpha * b;
        }
    }

    pub fn norm(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn distance(&self, other: &[f64]) -> f64 {
        self.0
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        ParamVector(v)
    }
}

impl Deref for ParamVector {
    type Target = [f64];
    fn deref(&self) -> &[f64] {
        &self.0
    }
}

impl DerefMut for ParamVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }
}

/// Gradient of the loss with respect to every parameter, same layout as [`ParamVector`].
pub type GradVector = Vec<f64>;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Head {
    /// Affine output, loss `½‖ŷ − y‖²`.
    #[default]
    Regression,
    /// Logistic output in (0, 1), binary cross-entropy loss.
    BinaryDirection,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PredictorShape {
    pub input_dim: usize,
    pub hidden_dim: usize,
    #[serde(default = "one")]
    pub output_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default)]
    pub head: Head,
}

fn one() -> usize {
    1
}

impl PredictorShape {
    pub fn new(input_dim: usize, hidden_dim: usize, output_dim: usize, head: Head) -> Self {
        PredictorShape {
            input_dim,
            hidden_dim,
            output_dim,
            activation: Activation::Tanh,
            head,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.output_dim == 0 {
            return Err(Error::InvalidArgument(format!(
                "predictor dimensions must be positive, got {}x{}x{}",
                self.input_dim, self.hidden_dim, self.output_dim
            )));
        }
        Ok(())
    }

    pub fn param_count(&self) -> usize {
        self.hidden_dim * (self.input_dim + 1) + self.output_dim * (self.hidden_dim + 1)
    }

    fn offsets(&self) -> Offsets {
        let w1 = 0;
        let b1 = w1 + self.hidden_dim * self.input_dim;
        let w2 = b1 + self.hidden_dim;
        let b2 = w2 + self.output_dim * self.hidden_dim;
        Offsets { w1, b1, w2, b2 }
    }

    fn check(&self, theta: &[f64], x: &[f64]) -> Result<()> {
        if theta.len() != self.param_count() {
            return Err(Error::DimensionMismatch {
                expected: self.param_count(),
                got: theta.len(),
            });
        }
        if x.len() != self.input_dim {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim,
                got: x.len(),
            });
        }
        Ok(())
    }
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

/// Uniform `[-s, s]` weights with `s = 1/sqrt(fan_in)`, zero biases.
pub fn init_params(shape: &PredictorShape, seed: u64) -> ParamVector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let off = shape.offsets();
    let mut theta = vec![0.0; shape.param_count()];
    let s1 = 1.0 / (shape.input_dim as f64).sqrt();
    for w in &mut theta[off.w1..off.b1] {
        *w = rng.random_range(-s1..=s1);
    }
    let s2 = 1.0 / (shape.hidden_dim as f64).sqrt();
    for w in &mut theta[off.w2..off.b2] {
        *w = rng.random_range(-s2..=s2);
    }
    ParamVector(theta)
}

/// Hidden activations and output pre-activations.
fn forward(shape: &PredictorShape, theta: &[f64], x: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let off = shape.offsets();
    let (ni, nh) = (shape.input_dim, shape.hidden_dim);
    let hidden: Vec<f64> = (0..nh)
        .map(|j| {
            let row = &theta[off.w1 + j * ni..off.w1 + (j + 1) * ni];
            let z = theta[off.b1 + j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>();
            z.tanh()
        })
        .collect();
    let out: Vec<f64> = (0..shape.output_dim)
        .map(|k| {
            let row = &theta[off.w2 + k * nh..off.w2 + (k + 1) * nh];
            theta[off.b2 + k] + row.iter().zip(&hidden).map(|(w, h)| w * h).sum::<f64>()
        })
        .collect();
    (hidden, out)
}

fn logistic(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    z.max(0.0) + (-z.abs()).exp().ln_1p()
}

pub fn predict(shape: &PredictorShape, theta: &[f64], x: &[f64]) -> Result<Vec<f64>> {
    shape.check(theta, x)?;
    let (_, out) = forward(shape, theta, x);
    Ok(match shape.head {
        Head::Regression => out,
        Head::BinaryDirection => out.into_iter().map(logistic).collect(),
    })
}

/// Loss and its exact gradient with respect to `theta`.
pub fn loss_and_grad(
    shape: &PredictorShape,
    theta: &[f64],
    x: &[f64],
    y: &[f64],
) -> Result<(f64, GradVector)> {
    shape.check(theta, x)?;
    if y.len() != shape.output_dim {
        return Err(Error::DimensionMismatch {
            expected: shape.output_dim,
            got: y.len(),
        });
    }
    if shape.head == Head::BinaryDirection {
        if let Some(&bad) = y.iter().find(|&&v| v != 0.0 && v != 1.0) {
            return Err(Error::InvalidLabel(bad));
        }
    }
    let off = shape.offsets();
    let (ni, nh) = (shape.input_dim, shape.hidden_dim);
    let (hidden, out) = forward(shape, theta, x);

    // dL/dz for each output pre-activation; both heads reduce to (prediction - target).
    let mut loss = 0.0;
    let mut d_out = Vec::with_capacity(shape.output_dim);
    for (&z, &target) in out.iter().zip(y) {
        match shape.head {
            Head::Regression => {
                let r = z - target;
                loss += 0.5 * r * r;
                d_out.push(r);
            }
            Head::BinaryDirection => {
                loss += softplus(z) - target * z;
                d_out.push(logistic(z) - target);
            }
        }
    }

    let mut grad = vec![0.0; shape.param_count()];
    let mut d_hidden = vec![0.0; nh];
    for (k, &dk) in d_out.iter().enumerate() {
        grad[off.b2 + k] = dk;
        let row = off.w2 + k * nh;
        for j in 0..nh {
            grad[row + j] = dk * hidden[j];
            d_hidden[j] += dk * theta[row + j];
        }
    }
    for j in 0..nh {
        let dz = d_hidden[j] * (1.0 - hidden[j] * hidden[j]);
        grad[off.b1 + j] = dz;
        let row = off.w1 + j * ni;
        for (i, &xi) in x.iter().enumerate() {
            grad[row + i] = dz * xi;
        }
    }
    Ok((loss, grad))
}
