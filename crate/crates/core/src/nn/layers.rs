//! Parameterized layers over the tape: convolution and fully-connected.

use ndarray::{ArrayD, IxDyn};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use sha2::{Digest, Sha256};

use super::ops;
use super::tape::{ParamStore, Tape, Var};

/// Deterministic per-name RNG so initialization does not depend on the
/// order modules are created in.
pub fn seeded_rng(seed: u64, name: &str) -> ChaCha20Rng {
    let mut hasher = Sha256::new();
    hasher.update(seed.to_le_bytes());
    hasher.update(name.as_bytes());
    let digest: [u8; 32] = hasher.finalize().into();
    ChaCha20Rng::from_seed(digest)
}

pub fn gaussian(rng: &mut impl Rng, shape: &[usize], std: f64) -> ArrayD<f64> {
    let dist = Normal::new(0.0, std).expect("valid std");
    ArrayD::from_shape_simple_fn(IxDyn(shape), || dist.sample(rng))
}

#[derive(Debug, Clone)]
pub struct Conv2d {
    pub name: String,
    pub in_ch: usize,
    pub out_ch: usize,
    pub ksize: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn new(name: impl Into<String>, in_ch: usize, out_ch: usize, ksize: usize, stride: usize, pad: usize) -> Self {
        Conv2d { name: name.into(), in_ch, out_ch, ksize, stride, pad }
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let wname = self.weight_name();
        let mut rng = seeded_rng(seed, &wname);
        let fan_in = self.in_ch * self.ksize * self.ksize;
        let std = (2.0 / fan_in as f64).sqrt();
        store.insert(wname, gaussian(&mut rng, &[self.out_ch, self.in_ch, self.ksize, self.ksize], std));
        store.insert(self.bias_name(), ArrayD::zeros(IxDyn(&[self.out_ch])));
    }

    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, trainable: bool) -> Var<'t> {
        let w = tape.param(store, &self.weight_name(), trainable);
        let b = tape.param(store, &self.bias_name(), trainable);
        let y = super::conv::conv2d(x, w, self.stride, self.pad);
        ops::add_channel_bias(y, b)
    }
}

#[derive(Debug, Clone)]
pub struct Linear {
    pub name: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(name: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        Linear { name: name.into(), in_dim, out_dim }
    }

    fn weight_name(&self) -> String {
        format!("{}.weight", self.name)
    }

    fn bias_name(&self) -> String {
        format!("{}.bias", self.name)
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        let wname = self.weight_name();
        let mut rng = seeded_rng(seed, &wname);
        let std = (2.0 / (self.in_dim + self.out_dim) as f64).sqrt();
        store.insert(wname, gaussian(&mut rng, &[self.in_dim, self.out_dim], std));
        store.insert(self.bias_name(), ArrayD::zeros(IxDyn(&[self.out_dim])));
    }

    /// `[N, in] -> [N, out]`.
    pub fn forward<'t>(&self, tape: &'t Tape, store: &ParamStore, x: Var<'t>, trainable: bool) -> Var<'t> {
        let w = tape.param(store, &self.weight_name(), trainable);
        let b = tape.param(store, &self.bias_name(), trainable);
        ops::add_row_bias(ops::matmul(x, w), b)
    }
}
