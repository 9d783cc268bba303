//! Two-hidden-layer perceptron over a flat parameter vector. Hidden units
//! use tanh; the single output unit is squashed through a logistic so the
//! prediction is always a valid confidence.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_from_seed;

/// Layer widths: `input` features, two hidden layers of `hidden` units each,
/// one output unit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpShape {
    pub input: usize,
    pub hidden: usize,
}

struct Offsets {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
    w3: usize,
    b3: usize,
}

impl MlpShape {
    pub fn n_params(&self) -> usize {
        let (d, h) = (self.input, self.hidden);
        h * d + h + h * h + h + h + 1
    }

    fn validate(&self) -> Result<()> {
        if self.input == 0 || self.hidden == 0 {
            return Err(Error::Validation(format!(
                "layer widths must be positive, got input {} and hidden {}",
                self.input, self.hidden
            )));
        }
        Ok(())
    }

    fn offsets(&self) -> Offsets {
        let (d, h) = (self.input, self.hidden);
        let w1 = 0;
        let b1 = w1 + h * d;
        let w2 = b1 + h;
        let b2 = w2 + h * h;
        let w3 = b2 + h;
        let b3 = w3 + h;
        Offsets { w1, b1, w2, b2, w3, b3 }
    }
}

/// Numerically stable logistic, clamped to the open unit interval so the
/// result is usable as a probability even at saturating logits.
pub(crate) fn logistic(z: f64) -> f64 {
    let p = if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    };
    p.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

pub(crate) struct ForwardTrace {
    pub h1: Vec<f64>,
    pub h2: Vec<f64>,
    pub logit: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    shape: MlpShape,
    params: Vec<f64>,
}

fn fill_uniform(slice: &mut [f64], fan_in: usize, rng: &mut ChaCha8Rng) {
    let bound = 1.0 / (fan_in as f64).sqrt();
    for w in slice {
        *w = bound * (2.0 * rng.gen::<f64>() - 1.0);
    }
}

impl Mlp {
    /// Fan-in-scaled uniform weight init with zero biases, fully determined
    /// by the seed.
    pub fn init(shape: MlpShape, seed: u64) -> Result<Self> {
        shape.validate()?;
        let mut rng = rng_from_seed(seed);
        let mut params = vec![0.0; shape.n_params()];
        let o = shape.offsets();
        fill_uniform(&mut params[o.w1..o.b1], shape.input, &mut rng);
        fill_uniform(&mut params[o.w2..o.b2], shape.hidden, &mut rng);
        fill_uniform(&mut params[o.w3..o.b3], shape.hidden, &mut rng);
        Ok(Self { shape, params })
    }

    pub fn from_params(shape: MlpShape, params: Vec<f64>) -> Result<Self> {
        let model = Self { shape, params };
        model.validate()?;
        Ok(model)
    }

    pub(crate) fn validate(&self) -> Result<()> {
        self.shape.validate()?;
        if self.params.len() != self.shape.n_params() {
            return Err(Error::Dimension(format!(
                "parameter vector has {} entries, shape {}x{} needs {}",
                self.params.len(),
                self.shape.input,
                self.shape.hidden,
                self.shape.n_params()
            )));
        }
        if self.params.iter().any(|p| !p.is_finite()) {
            return Err(Error::Validation("non-finite model parameter".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> MlpShape {
        self.shape
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub(crate) fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.shape.input {
            return Err(Error::Dimension(format!(
                "feature vector has {} entries, model expects {}",
                x.len(),
                self.shape.input
            )));
        }
        let (d, h) = (self.shape.input, self.shape.hidden);
        let o = self.shape.offsets();
        let p = &self.params;
        let mut h1 = vec![0.0; h];
        for (j, out) in h1.iter_mut().enumerate() {
            let mut acc = p[o.b1 + j];
            let row = &p[o.w1 + j * d..o.w1 + (j + 1) * d];
            for (w, xi) in row.iter().zip(x) {
                acc += w * xi;
            }
            *out = acc.tanh();
        }
        let mut h2 = vec![0.0; h];
        for (j, out) in h2.iter_mut().enumerate() {
            let mut acc = p[o.b2 + j];
            let row = &p[o.w2 + j * h..o.w2 + (j + 1) * h];
            for (w, hi) in row.iter().zip(&h1) {
                acc += w * hi;
            }
            *out = acc.tanh();
        }
        let mut logit = p[o.b3];
        for (w, hi) in p[o.w3..o.b3].iter().zip(&h2) {
            logit += w * hi;
        }
        Ok(ForwardTrace { h1, h2, logit })
    }

    /// Predicted confidence, always inside the open unit interval.
    pub fn forward(&self, x: &[f64]) -> Result<f64> {
        Ok(logistic(self.trace(x)?.logit))
    }

    /// Adds this sample's parameter gradient to `grad`, given the upstream
    /// derivative of the loss with respect to the output logit.
    pub(crate) fn accumulate_grad(
        &self,
        x: &[f64],
        tr: &ForwardTrace,
        dlogit: f64,
        grad: &mut [f64],
    ) {
        let (d, h) = (self.shape.input, self.shape.hidden);
        let o = self.shape.offsets();
        let p = &self.params;
        grad[o.b3] += dlogit;
        for j in 0..h {
            grad[o.w3 + j] += dlogit * tr.h2[j];
        }
        let mut dz2 = vec![0.0; h];
        for j in 0..h {
            dz2[j] = dlogit * p[o.w3 + j] * (1.0 - tr.h2[j] * tr.h2[j]);
        }
        for j in 0..h {
            grad[o.b2 + j] += dz2[j];
            let row = &mut grad[o.w2 + j * h..o.w2 + (j + 1) * h];
            for (g, hi) in row.iter_mut().zip(&tr.h1) {
                *g += dz2[j] * hi;
            }
        }
        let mut dz1 = vec![0.0; h];
        for (k, out) in dz1.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (j, dz) in dz2.iter().enumerate() {
                acc += dz * p[o.w2 + j * h + k];
            }
            *out = acc * (1.0 - tr.h1[k] * tr.h1[k]);
        }
        for k in 0..h {
            grad[o.b1 + k] += dz1[k];
            let row = &mut grad[o.w1 + k * d..o.w1 + (k + 1) * d];
            for (g, xi) in row.iter_mut().zip(x) {
                *g += dz1[k] * xi;
            }
        }
    }
}
