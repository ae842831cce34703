//! Dual-granularity prompt construction and stage-1 learning of ID-specific
//! tokens: fixed object-granularity prompts, learnable per-identity context
//! and attribute tokens, and their frozen-encoder embeddings.

use std::collections::BTreeMap;
use std::path::Path;

use ndarray::{Array1, Array2, Array3, ArrayD, Axis, IxDyn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::{DatasetManifest, IdentityId};
use crate::imgio;
use crate::nn::layers::{gaussian, seeded_rng};
use crate::nn::sgd::{Sgd, SgdConfig};
use crate::nn::{ops, ParamStore, Tape, Var};
use crate::pipeline::{ImageEncoder, TextEncoder};

pub const FOREGROUND_PROMPT: &str = "A photo of a vehicle";
pub const BACKGROUND_PROMPT: &str = "Not a photo of a vehicle";

/// Number of learnable context tokens per identity.
pub const DEFAULT_CONTEXT_LEN: usize = 4;

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("manifest has no identities to learn prompts for")]
    NoIdentities,
    #[error("image/text encoder output dims differ: {image} vs {text}")]
    EncoderDimMismatch { image: usize, text: usize },
    #[error("no crops found for any identity under '{0}'")]
    NoCrops(String),
    #[error("image io: {0}")]
    Image(#[from] crate::imgio::ImageIoError),
    #[error("manifest: {0}")]
    Manifest(#[from] crate::datamodel::ManifestError),
}

/// Fixed foreground/background prompts with their frozen embeddings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ObjectPrompts {
    pub foreground_text: String,
    pub background_text: String,
    pub t_fore: Array1<f64>,
    pub t_back: Array1<f64>,
}

fn words_to_tokens(encoder: &dyn TextEncoder, words: &[&str]) -> Array2<f64> {
    let mut tokens = Array2::zeros((words.len(), encoder.token_dim()));
    for (i, w) in words.iter().enumerate() {
        tokens.row_mut(i).assign(&encoder.embed_word(w));
    }
    tokens
}

/// Encode the two object-granularity prompts with the frozen text encoder.
pub fn build_object_prompts(encoder: &dyn TextEncoder) -> ObjectPrompts {
    let fore_words: Vec<&str> = FOREGROUND_PROMPT.split_whitespace().collect();
    let back_words: Vec<&str> = BACKGROUND_PROMPT.split_whitespace().collect();
    ObjectPrompts {
        foreground_text: FOREGROUND_PROMPT.to_string(),
        background_text: BACKGROUND_PROMPT.to_string(),
        t_fore: encoder.encode(&words_to_tokens(encoder, &fore_words)),
        t_back: encoder.encode(&words_to_tokens(encoder, &back_words)),
    }
}

/// One slot of the identity prompt template.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TemplateSlot {
    Word(&'static str),
    Context(usize),
    Color,
    VType,
}

/// The identity template: `A photo of a [X]_1..[X]_M vehicle with [X] color
/// and [X] type`, with every `[X]` slot learnable per identity.
pub fn template_slots(context_len: usize) -> Vec<TemplateSlot> {
    let mut slots = vec![
        TemplateSlot::Word("A"),
        TemplateSlot::Word("photo"),
        TemplateSlot::Word("of"),
        TemplateSlot::Word("a"),
    ];
    for m in 0..context_len {
        slots.push(TemplateSlot::Context(m));
    }
    slots.extend([
        TemplateSlot::Word("vehicle"),
        TemplateSlot::Word("with"),
        TemplateSlot::Color,
        TemplateSlot::Word("color"),
        TemplateSlot::Word("and"),
        TemplateSlot::VType,
        TemplateSlot::Word("type"),
    ]);
    slots
}

/// Render the template with placeholder markers, for inspection and tests.
pub fn render_template(context_len: usize) -> String {
    template_slots(context_len)
        .iter()
        .map(|s| match s {
            TemplateSlot::Word(w) => (*w).to_string(),
            TemplateSlot::Context(m) => format!("[X]{}", m + 1),
            TemplateSlot::Color | TemplateSlot::VType => "[X]".to_string(),
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Learnable per-identity context and attribute tokens plus their encoded
/// text embeddings.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct IdentityPromptBank {
    pub num_identities: usize,
    pub context_len: usize,
    pub token_dim: usize,
    pub text_dim: usize,
    /// `[C, M, token_dim]` learnable context tokens.
    pub context_tokens: Array3<f64>,
    /// `[C, token_dim]` learnable color-attribute tokens.
    pub color_tokens: Array2<f64>,
    /// `[C, token_dim]` learnable type-attribute tokens.
    pub type_tokens: Array2<f64>,
    /// Optional fixed attribute words (used instead of learned attribute
    /// tokens when annotations provide them).
    pub fixed_attributes: Option<Vec<(String, String)>>,
    /// `[C, text_dim]` encoded prompt embeddings.
    pub encoded: Array2<f64>,
}

impl IdentityPromptBank {
    /// Random initialization: zero-mean Gaussian tokens with sigma 0.02.
    pub fn init(
        num_identities: usize,
        context_len: usize,
        token_dim: usize,
        text_dim: usize,
        seed: u64,
    ) -> Self {
        let mut rng = seeded_rng(seed, "prompts.tokens");
        let sigma = 0.02;
        IdentityPromptBank {
            num_identities,
            context_len,
            token_dim,
            text_dim,
            context_tokens: gaussian(&mut rng, &[num_identities, context_len, token_dim], sigma)
                .into_dimensionality()
                .expect("context shape"),
            color_tokens: gaussian(&mut rng, &[num_identities, token_dim], sigma)
                .into_dimensionality()
                .expect("color shape"),
            type_tokens: gaussian(&mut rng, &[num_identities, token_dim], sigma)
                .into_dimensionality()
                .expect("type shape"),
            fixed_attributes: None,
            encoded: Array2::zeros((num_identities, text_dim)),
        }
    }

    /// Token sequence for identity `c` (1-based) as a `[L, token_dim]`
    /// matrix, for the plain (non-differentiable) encode path.
    pub fn token_sequence(&self, encoder: &dyn TextEncoder, c: IdentityId) -> Array2<f64> {
        let idx = c.get() as usize - 1;
        let slots = template_slots(self.context_len);
        let mut tokens = Array2::zeros((slots.len(), self.token_dim));
        for (row, slot) in slots.iter().enumerate() {
            match slot {
                TemplateSlot::Word(w) => tokens.row_mut(row).assign(&encoder.embed_word(w)),
                TemplateSlot::Context(m) => {
                    tokens.row_mut(row).assign(&self.context_tokens.slice(ndarray::s![idx, *m, ..]))
                }
                TemplateSlot::Color => match &self.fixed_attributes {
                    Some(attrs) => tokens.row_mut(row).assign(&encoder.embed_word(&attrs[idx].0)),
                    None => tokens.row_mut(row).assign(&self.color_tokens.row(idx)),
                },
                TemplateSlot::VType => match &self.fixed_attributes {
                    Some(attrs) => tokens.row_mut(row).assign(&encoder.embed_word(&attrs[idx].1)),
                    None => tokens.row_mut(row).assign(&self.type_tokens.row(idx)),
                },
            }
        }
        tokens
    }

    /// Content hash over all token tensors; constant across stage-2.
    pub fn state_hash(&self) -> [u8; 32] {
        use sha2::{Digest, Sha256};
        let mut hasher = Sha256::new();
        for a in [
            self.context_tokens.iter().collect::<Vec<_>>(),
            self.color_tokens.iter().collect(),
            self.type_tokens.iter().collect(),
            self.encoded.iter().collect(),
        ] {
            for x in a {
                hasher.update(x.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

/// Re-encode every identity's prompt with the frozen encoder: `[C, text_dim]`.
pub fn encode_bank(bank: &IdentityPromptBank, encoder: &dyn TextEncoder) -> Array2<f64> {
    let rows = crate::par::map_indexed(bank.num_identities, |idx| {
        let c = IdentityId::new(idx as u32 + 1).expect("identity >= 1");
        encoder.encode(&bank.token_sequence(encoder, c))
    });
    let mut out = Array2::zeros((bank.num_identities, bank.text_dim));
    for (i, r) in rows.into_iter().enumerate() {
        out.row_mut(i).assign(&r);
    }
    out
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PromptTrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Identities sampled per step.
    pub batch_identities: usize,
    /// Crop budget per sampled identity.
    pub crops_per_identity: usize,
    /// Scale on cosine logits in the contrastive loss.
    pub logit_scale: f64,
    pub context_len: usize,
    pub seed: u64,
}

impl Default for PromptTrainConfig {
    fn default() -> Self {
        PromptTrainConfig {
            epochs: 30,
            lr: 0.05,
            momentum: 0.9,
            batch_identities: 8,
            crops_per_identity: 8,
            logit_scale: 30.0,
            context_len: DEFAULT_CONTEXT_LEN,
            seed: 0,
        }
    }
}

pub struct PromptTrainReport {
    pub bank: IdentityPromptBank,
    pub loss_curve: Vec<f64>,
    pub identities_without_crops: Vec<u32>,
}

fn ctx_name(c: usize) -> String {
    format!("prompts.ctx.{c}")
}

fn color_name(c: usize) -> String {
    format!("prompts.color.{c}")
}

fn type_name(c: usize) -> String {
    format!("prompts.vtype.{c}")
}

fn bank_to_store(bank: &IdentityPromptBank) -> ParamStore {
    let mut store = ParamStore::new();
    for c in 0..bank.num_identities {
        store.insert(
            ctx_name(c),
            bank.context_tokens.index_axis(Axis(0), c).to_owned().into_dyn(),
        );
        store.insert(color_name(c), bank.color_tokens.row(c).to_owned().into_dyn());
        store.insert(type_name(c), bank.type_tokens.row(c).to_owned().into_dyn());
    }
    store
}

fn store_to_bank(store: &ParamStore, bank: &mut IdentityPromptBank) {
    for c in 0..bank.num_identities {
        let ctx = store.get(&ctx_name(c)).expect("ctx tokens");
        bank.context_tokens
            .index_axis_mut(Axis(0), c)
            .assign(&ctx.view().into_dimensionality().expect("ctx 2-d"));
        let col = store.get(&color_name(c)).expect("color token");
        bank.color_tokens.row_mut(c).assign(&col.view().into_dimensionality().expect("color 1-d"));
        let ty = store.get(&type_name(c)).expect("type token");
        bank.type_tokens.row_mut(c).assign(&ty.view().into_dimensionality().expect("type 1-d"));
    }
}

/// Differentiable prompt encoding for identity `c` with tokens coming from
/// the parameter store; frozen template words enter as constants.
fn encode_identity_on_tape<'t>(
    tape: &'t Tape,
    store: &ParamStore,
    encoder: &dyn TextEncoder,
    bank: &IdentityPromptBank,
    c: usize,
) -> Var<'t> {
    let slots = template_slots(bank.context_len);
    let ctx = tape.param(store, &ctx_name(c), true);
    let color = ops::reshape(tape.param(store, &color_name(c), true), &[1, bank.token_dim]);
    let vtype = ops::reshape(tape.param(store, &type_name(c), true), &[1, bank.token_dim]);
    let mut parts: Vec<Var<'t>> = Vec::with_capacity(slots.len());
    for slot in &slots {
        match slot {
            TemplateSlot::Word(w) => {
                let row = encoder.embed_word(w);
                let arr = ArrayD::from_shape_vec(IxDyn(&[1, bank.token_dim]), row.to_vec())
                    .expect("word row");
                parts.push(tape.constant(arr));
            }
            TemplateSlot::Context(m) => {
                parts.push(ops::select_rows(ctx, &[*m]));
            }
            TemplateSlot::Color => parts.push(color),
            TemplateSlot::VType => parts.push(vtype),
        }
    }
    let tokens = ops::concat_rows(&parts);
    encoder.encode_on_tape(tape, tokens)
}

/// Stage-1: optimize the ID-specific tokens by a symmetric image/text
/// contrastive loss over ground-truth crops, with both encoders frozen.
/// Only token tensors receive gradients.
pub fn pretrain_id_tokens(
    manifest: &DatasetManifest,
    images_root: &Path,
    image_encoder: &dyn ImageEncoder,
    text_encoder: &dyn TextEncoder,
    cfg: &PromptTrainConfig,
) -> Result<PromptTrainReport, PromptError> {
    if manifest.num_identities == 0 {
        return Err(PromptError::NoIdentities);
    }
    if image_encoder.output_dim() != text_encoder.output_dim() {
        return Err(PromptError::EncoderDimMismatch {
            image: image_encoder.output_dim(),
            text: text_encoder.output_dim(),
        });
    }
    let c_total = manifest.num_identities as usize;
    let mut bank = IdentityPromptBank::init(
        c_total,
        cfg.context_len,
        text_encoder.token_dim(),
        text_encoder.output_dim(),
        cfg.seed,
    );

    // crop embeddings grouped by identity
    let mut crops: BTreeMap<u32, Vec<Array1<f64>>> = BTreeMap::new();
    for frame in &manifest.frames {
        let img = imgio::load_rgb(&images_root.join(&frame.image_path))?;
        for ann in &frame.annotations {
            let Some(id) = ann.identity else { continue };
            let crop = imgio::crop(&img, &ann.rect)?;
            crops.entry(id.get()).or_default().push(image_encoder.embed(&crop));
        }
    }
    if crops.is_empty() {
        return Err(PromptError::NoCrops(images_root.display().to_string()));
    }
    let identities_without_crops: Vec<u32> =
        (1..=c_total as u32).filter(|c| !crops.contains_key(c)).collect();
    let trainable: Vec<u32> = crops.keys().copied().collect();

    let mut store = bank_to_store(&bank);
    let mut opt = Sgd::new(SgdConfig { lr: cfg.lr, momentum: cfg.momentum, weight_decay: 0.0 });
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut loss_curve = Vec::with_capacity(cfg.epochs);

    for _epoch in 0..cfg.epochs {
        let mut ids = trainable.clone();
        ids.shuffle(&mut rng);
        ids.truncate(cfg.batch_identities.max(2).min(ids.len()));
        ids.sort_unstable();

        // image side: fixed unit embeddings for the sampled crops
        let mut img_rows: Vec<Array1<f64>> = Vec::new();
        let mut row_identity: Vec<usize> = Vec::new(); // position in `ids`
        for (pos, id) in ids.iter().enumerate() {
            let list = &crops[id];
            for emb in list.iter().take(cfg.crops_per_identity) {
                img_rows.push(emb.clone());
                row_identity.push(pos);
            }
        }
        let n = img_rows.len();
        let dim = text_encoder.output_dim();
        let mut img_mat = Array2::zeros((n, dim));
        for (i, r) in img_rows.iter().enumerate() {
            img_mat.row_mut(i).assign(r);
        }

        let tape = Tape::new();
        let text_rows: Vec<Var> = ids
            .iter()
            .map(|&id| {
                let t = encode_identity_on_tape(&tape, &store, text_encoder, &bank, id as usize - 1);
                ops::reshape(t, &[1, dim])
            })
            .collect();
        let text = ops::concat_rows(&text_rows); // [B, dim], unit rows
        let images = tape.constant(img_mat.into_dyn()); // [n, dim], unit rows
        let logits_i2t = ops::scale(ops::matmul_nt(images, text), cfg.logit_scale); // [n, B]

        // image -> text: each crop classifies into its identity
        let i2t = ops::scale(
            ops::neg(ops::sum_all(ops::pick_per_row(
                ops::log_softmax_rows(logits_i2t),
                &row_identity,
            ))),
            1.0 / n as f64,
        );
        // text -> image: each identity averages over its own crops
        let logits_t2i = ops::permute(logits_i2t, &[1, 0]); // [B, n]
        let log_sm = ops::log_softmax_rows(logits_t2i);
        let mut t2i_terms: Vec<Var> = Vec::new();
        for (pos, _) in ids.iter().enumerate() {
            let mine: Vec<usize> =
                row_identity.iter().enumerate().filter(|(_, &p)| p == pos).map(|(i, _)| i).collect();
            let row = ops::select_rows(log_sm, &[pos]);
            let picked = ops::select_cols(row, &mine);
            t2i_terms.push(ops::scale(ops::neg(ops::sum_all(picked)), 1.0 / mine.len() as f64));
        }
        let t2i = ops::scale(ops::sum_scalars(&t2i_terms), 1.0 / ids.len() as f64);
        let loss = ops::scale(ops::add(i2t, t2i), 0.5);
        loss_curve.push(loss.scalar());

        let grads = tape.backward(loss);
        opt.step(&mut store, &tape, &grads);
    }

    store_to_bank(&store, &mut bank);
    bank.encoded = encode_bank(&bank, text_encoder);
    Ok(PromptTrainReport { bank, loss_curve, identities_without_crops })
}
