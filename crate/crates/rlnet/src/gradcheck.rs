//! Central finite-difference verification of backward passes.
//!
//! The checker re-runs a scalar-producing forward closure with single
//! parameter entries nudged by ±step and compares the slope against the
//! gradient the graph reports. Large parameter tensors are spot-checked at a
//! seeded random subset of entries to keep runtime bounded.

use crate::nn::{seeded_rng, NamedParams};
use crate::tensor::Tensor;
use rand::Rng;

pub struct GradCheck {
    pub step: f64,
    pub tol: f64,
    pub samples_per_param: usize,
    pub seed: u64,
}

impl Default for GradCheck {
    fn default() -> Self {
        GradCheck { step: 1e-4, tol: 1e-3, samples_per_param: 4, seed: 42 }
    }
}

/// |a - n| scaled by the larger magnitude, floored so that two near-zero
/// slopes compare as equal.
pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-6)
}

impl GradCheck {
    /// Verify d(f)/d(param) for every named parameter. `f` must rebuild the
    /// graph from the live parameter values on each call. Returns the worst
    /// relative error seen, or an error message naming the offending entry.
    pub fn check<F>(&self, params: &NamedParams, f: F) -> Result<f64, String>
    where
        F: Fn() -> Tensor,
    {
        for (_, p) in params {
            p.zero_grad();
        }
        let loss = f();
        loss.backward();
        let grads: Vec<_> = params.iter().map(|(_, p)| p.grad()).collect();

        let mut rng = seeded_rng(self.seed);
        let mut worst = 0.0f64;
        for ((name, p), grad) in params.iter().zip(&grads) {
            let n = p.value().len();
            let indices: Vec<usize> = if n <= self.samples_per_param {
                (0..n).collect()
            } else {
                (0..self.samples_per_param).map(|_| rng.gen_range(0..n)).collect()
            };
            for idx in indices {
                let original = {
                    let v = p.value();
                    *v.iter().nth(idx).unwrap()
                };
                let probe = |val: f64, p: &Tensor| -> f64 {
                    let mut arr = p.to_array();
                    *arr.iter_mut().nth(idx).unwrap() = val;
                    p.set_value(arr);
                    f().item()
                };
                let plus = probe(original + self.step, p);
                let minus = probe(original - self.step, p);
                let mut arr = p.to_array();
                *arr.iter_mut().nth(idx).unwrap() = original;
                p.set_value(arr);

                let numeric = (plus - minus) / (2.0 * self.step);
                let analytic = grad
                    .as_ref()
                    .map(|g| *g.iter().nth(idx).unwrap())
                    .unwrap_or(0.0);
                let err = rel_error(analytic, numeric);
                worst = worst.max(err);
                if err > self.tol {
                    return Err(format!(
                        "{name}[{idx}]: analytic {analytic:.3e} vs numeric {numeric:.3e} (rel {err:.3e})"
                    ));
                }
            }
        }
        for (_, p) in params {
            p.zero_grad();
        }
        Ok(worst)
    }
}
