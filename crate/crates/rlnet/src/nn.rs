//! Layers with parameters: convolution, group normalization, and the Adam
//! optimizer. Layers hand out `(name, tensor)` pairs for checkpointing; names
//! are built hierarchically by the owning module.

use crate::error::{Error, Result};
use crate::tensor::{conv2d, Arr, Tensor};
use ndarray::IxDyn;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub type NamedParams = Vec<(String, Tensor)>;

/// He-normal initializer: std = sqrt(2 / fan_in).
fn he_weights(rng: &mut ChaCha8Rng, co: usize, ci: usize, k: usize) -> Arr {
    let std = (2.0 / (ci * k * k) as f64).sqrt();
    let n = co * ci * k * k;
    let data: Vec<f64> = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            z * std
        })
        .collect();
    Arr::from_shape_vec(IxDyn(&[co, ci, k, k]), data).unwrap()
}

pub struct Conv2d {
    pub weight: Tensor,
    pub bias: Tensor,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    /// Same-padded convolution (odd kernels keep spatial dims at stride 1).
    pub fn new(rng: &mut ChaCha8Rng, ci: usize, co: usize, k: usize, stride: usize) -> Conv2d {
        assert!(k % 2 == 1, "same padding needs an odd kernel, got {k}");
        Conv2d {
            weight: Tensor::parameter(he_weights(rng, co, ci, k)),
            bias: Tensor::parameter(Arr::zeros(IxDyn(&[co]))),
            stride,
            pad: k / 2,
        }
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        conv2d(x, &self.weight, Some(&self.bias), self.stride, self.pad)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((format!("{prefix}.weight"), self.weight.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

pub struct GroupNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub groups: usize,
    pub eps: f64,
}

impl GroupNorm {
    pub fn new(channels: usize, groups: usize) -> Result<GroupNorm> {
        if groups == 0 || channels % groups != 0 {
            return Err(Error::invalid(
                "group_norm",
                format!("{groups} groups do not divide {channels} channels"),
            ));
        }
        Ok(GroupNorm {
            gamma: Tensor::parameter(Arr::ones(IxDyn(&[channels, 1, 1]))),
            beta: Tensor::parameter(Arr::zeros(IxDyn(&[channels, 1, 1]))),
            groups,
            eps: 1e-5,
        })
    }

    /// Normalize per group over (channels-in-group, H, W), then apply the
    /// per-channel affine. Composed from broadcast primitives so the backward
    /// pass comes for free.
    pub fn forward(&self, x: &Tensor) -> Tensor {
        let shape = x.shape();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        debug_assert_eq!(c % self.groups, 0);
        let grouped = x.reshape(&[self.groups, c / self.groups, h, w]);
        let mean = grouped.mean_axes(&[1, 2, 3]);
        let centered = grouped.sub(&mean);
        let var = centered.square().mean_axes(&[1, 2, 3]);
        let normed = centered.div(&var.add_scalar(self.eps).sqrt());
        let flat = normed.reshape(&[c, h, w]);
        flat.mul(&self.gamma).add(&self.beta)
    }

    pub fn params(&self, prefix: &str, out: &mut NamedParams) {
        out.push((format!("{prefix}.gamma"), self.gamma.clone()));
        out.push((format!("{prefix}.beta"), self.beta.clone()));
    }
}

/// Adam with the usual bias correction. Holds clones of the parameter
/// handles; `step` reads accumulated gradients and updates values in place.
pub struct Adam {
    params: NamedParams,
    m: Vec<Arr>,
    v: Vec<Arr>,
    t: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Adam {
    pub fn new(params: NamedParams, lr: f64) -> Adam {
        let m = params
            .iter()
            .map(|(_, p)| Arr::zeros(p.value().raw_dim()))
            .collect();
        let v = params
            .iter()
            .map(|(_, p)| Arr::zeros(p.value().raw_dim()))
            .collect();
        Adam { params, m, v, t: 0, lr, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }

    pub fn step(&mut self) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (i, (_, p)) in self.params.iter().enumerate() {
            let Some(g) = p.grad() else { continue };
            self.m[i] = &self.m[i] * self.beta1 + &g * (1.0 - self.beta1);
            self.v[i] = &self.v[i] * self.beta2 + &(&g * &g) * (1.0 - self.beta2);
            let mhat = &self.m[i] / bc1;
            let vhat = &self.v[i] / bc2;
            let update = mhat / (vhat.mapv(f64::sqrt) + self.eps) * self.lr;
            let new = &*p.value() - &update;
            p.set_value(new);
        }
    }

    pub fn zero_grad(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }
}

/// Seeded RNG used everywhere weights or data need randomness.
pub fn seeded_rng(seed: u64) -> ChaCha8Rng {
    use rand::SeedableRng;
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform draw from an inclusive range, degenerate ranges allowed.
pub fn uniform_in(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.gen_range(lo..hi)
    }
}
