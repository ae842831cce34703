//! Stochastic gradient descent with momentum and weight decay.

use std::collections::BTreeMap;

use ndarray::ArrayD;
use serde::{Deserialize, Serialize};

use super::tape::{Grads, ParamStore, Tape};

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig { lr: 1e-3, momentum: 0.9, weight_decay: 5e-4 }
    }
}

#[derive(Debug, Clone)]
pub struct Sgd {
    pub cfg: SgdConfig,
    velocity: BTreeMap<String, ArrayD<f64>>,
}

impl Sgd {
    pub fn new(cfg: SgdConfig) -> Self {
        Sgd { cfg, velocity: BTreeMap::new() }
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// Apply one update to every trainable parameter the tape touched.
    pub fn step(&mut self, store: &mut ParamStore, tape: &Tape, grads: &Grads) {
        for (name, trainable) in tape.touched_params() {
            if !trainable {
                continue;
            }
            let Some(g) = grads.param_grad(&name) else { continue };
            let w = store.get(&name).expect("parameter exists").clone();
            let mut g = g.clone();
            if self.cfg.weight_decay != 0.0 {
                g = g + &w.mapv(|v| v * self.cfg.weight_decay);
            }
            let v = self
                .velocity
                .entry(name.clone())
                .or_insert_with(|| ArrayD::zeros(w.raw_dim()));
            *v = v.mapv(|x| x * self.cfg.momentum) + &g;
            store.set(&name, w - v.mapv(|x| x * self.cfg.lr));
        }
    }

    pub fn velocity(&self) -> &BTreeMap<String, ArrayD<f64>> {
        &self.velocity
    }

    pub fn set_velocity(&mut self, velocity: BTreeMap<String, ArrayD<f64>>) {
        self.velocity = velocity;
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{ops, scalar_array, Tape};

    #[test]
    fn plain_sgd_matches_hand_update() {
        let mut store = ParamStore::new();
        store.insert("w", scalar_array(2.0));
        let mut opt = Sgd::new(SgdConfig { lr: 0.1, momentum: 0.0, weight_decay: 0.0 });
        // loss = w^2, grad = 2w = 4 => w' = 2 - 0.1*4 = 1.6
        let tape = Tape::new();
        let w = tape.param(&store, "w", true);
        let loss = ops::mul(w, w);
        let grads = tape.backward(loss);
        opt.step(&mut store, &tape, &grads);
        let w_new = store.get("w").unwrap().iter().next().copied().unwrap();
        assert!((w_new - 1.6).abs() < 1e-12);
    }

    #[test]
    fn momentum_accumulates() {
        let mut store = ParamStore::new();
        store.insert("w", scalar_array(0.0));
        let mut opt = Sgd::new(SgdConfig { lr: 1.0, momentum: 0.5, weight_decay: 0.0 });
        // constant gradient of 1.0 each step: v1 = 1, v2 = 1.5
        for expected in [-1.0, -2.5] {
            let tape = Tape::new();
            let w = tape.param(&store, "w", true);
            let loss = w; // dloss/dw = 1
            let grads = tape.backward(loss);
            opt.step(&mut store, &tape, &grads);
            let w_now = store.get("w").unwrap().iter().next().copied().unwrap();
            assert!((w_now - expected).abs() < 1e-12, "got {w_now}, want {expected}");
        }
    }
}
