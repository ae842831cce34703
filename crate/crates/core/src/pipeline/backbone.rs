//! Residual convolutional feature extractor shared by both heads.
//!
//! A chain of stride-2 3x3 convolutions doubles channels down to the stem
//! output width `d`, followed by one residual 3x3 block at full width. The
//! stage count follows the configured stride (8 -> 3 stages, 16 -> 4).

use crate::nn::layers::Conv2d;
use crate::nn::{ops, ParamStore, Tape, Var};

#[derive(Debug, Clone)]
pub struct Backbone {
    stages: Vec<Conv2d>,
    residual: Conv2d,
    pub stride: usize,
    pub out_channels: usize,
}

impl Backbone {
    pub fn new(stem_output_channels: usize, stride: usize) -> Self {
        assert!(stride.is_power_of_two() && stride >= 4, "stride must be a power of two >= 4");
        let num_stages = stride.trailing_zeros() as usize;
        let mut stages = Vec::with_capacity(num_stages);
        let mut in_ch = 3;
        for s in 0..num_stages {
            let out_ch = stem_output_channels >> (num_stages - 1 - s);
            stages.push(Conv2d::new(format!("backbone.stage{s}"), in_ch, out_ch.max(8), 3, 2, 1));
            in_ch = out_ch.max(8);
        }
        let residual = Conv2d::new("backbone.res", in_ch, in_ch, 3, 1, 1);
        Backbone { stages, residual, stride, out_channels: in_ch }
    }

    pub fn init(&self, store: &mut ParamStore, seed: u64) {
        for stage in &self.stages {
            stage.init(store, seed);
        }
        self.residual.init(store, seed);
    }

    /// `[B, 3, H, W] -> [B, d, ~H/stride, ~W/stride]`.
    pub fn forward<'t>(
        &self,
        tape: &'t Tape,
        store: &ParamStore,
        images: Var<'t>,
        trainable: bool,
    ) -> Var<'t> {
        let mut x = images;
        for stage in &self.stages {
            x = ops::relu(stage.forward(tape, store, x, trainable));
        }
        let r = self.residual.forward(tape, store, x, trainable);
        ops::relu(ops::add(r, x))
    }
}
