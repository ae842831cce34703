//! The sequential detection-then-identification network: shared backbone,
//! region proposals, RoI pooling, a detection branch, and an identity branch
//! with box refinement and norm-aware embeddings.

pub mod backbone;
pub mod boxes;
pub mod checkpoint;
pub mod contracts;
pub mod heads;
pub mod rpn;

pub use boxes::{decode_delta, encode_delta, generate_anchor_grid, label_boxes, nms, GtBox, LabeledBox};
pub use checkpoint::{Checkpoint, TensorData, CHECKPOINT_VERSION};
pub use contracts::{HashingTextEncoder, ImageEncoder, ProjectionImageEncoder, TeacherEmbedder, TextEncoder};
pub use heads::{softmax_probs, BranchHead, IdentityEmbedding, NaeHead, NaeOutput};
pub use rpn::{anchor_targets, propose, Rpn, RpnMaps};

use image::RgbImage;
use ndarray::{Array1, ArrayD, Ix2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datamodel::Rect;
use crate::imgio;
use crate::nn::layers::Linear;
use crate::nn::{ops, roi, ParamStore, Tape, Var};
use backbone::Backbone;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("input image {height}x{width} is smaller than the minimum {min}x{min}")]
    InputTooSmall { width: usize, height: usize, min: usize },
    #[error("checkpoint io: {0}")]
    CheckpointIo(#[from] std::io::Error),
    #[error("checkpoint serialization: {0}")]
    CheckpointParse(#[from] serde_json::Error),
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },
    #[error("tensor data of length {len} does not fit shape {shape:?}")]
    CorruptTensor { shape: Vec<usize>, len: usize },
    #[error("checkpoint is missing extra section '{0}'")]
    MissingExtra(String),
    #[error("image: {0}")]
    Image(#[from] crate::imgio::ImageIoError),
    #[error("detection and identity branches share parameters: {0:?}")]
    BranchOverlap(Vec<String>),
}

/// Backbone geometry: stem width `d`, RoI bin counts, embedding width `o`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackboneConfig {
    pub architecture_id: String,
    pub stem_output_channels: usize,
    pub pooled_h: usize,
    pub pooled_w: usize,
    pub embedding_dim: usize,
    pub stride: usize,
}

impl BackboneConfig {
    /// Full-scale configuration: 14x14x1024 pooled maps, 256-d embeddings.
    pub fn reference() -> Self {
        BackboneConfig {
            architecture_id: "residual-c4-16".into(),
            stem_output_channels: 1024,
            pooled_h: 14,
            pooled_w: 14,
            embedding_dim: 256,
            stride: 16,
        }
    }

    /// Reduced configuration for desk-scale runs: 7x7x128 pooled maps.
    pub fn toy() -> Self {
        BackboneConfig {
            architecture_id: "residual-c4-8".into(),
            stem_output_channels: 128,
            pooled_h: 7,
            pooled_w: 7,
            embedding_dim: 256,
            stride: 8,
        }
    }

    pub fn branch_output_channels(&self) -> usize {
        2 * self.stem_output_channels
    }

    pub fn branch_h(&self) -> usize {
        crate::nn::conv::halved_extent(self.pooled_h)
    }

    pub fn branch_w(&self) -> usize {
        crate::nn::conv::halved_extent(self.pooled_w)
    }

    pub fn min_image_side(&self) -> usize {
        2 * self.stride
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub backbone: BackboneConfig,
    pub anchor_sizes: Vec<f64>,
    pub anchor_aspects: Vec<f64>,
    /// Proposal budget during training.
    pub proposals_train: usize,
    /// Proposal budget at evaluation time.
    pub proposals_eval: usize,
    pub rpn_nms_iou: f64,
    pub detection_nms_iou: f64,
    /// IoU threshold for foreground assignment (shared with the TP rule).
    pub fg_iou: f64,
    /// Query crops are resized to this (width, height) and wrapped as a
    /// single full-extent region.
    pub query_size: (u32, u32),
    pub roi_sampling: usize,
}

impl PipelineConfig {
    pub fn reference() -> Self {
        PipelineConfig {
            backbone: BackboneConfig::reference(),
            anchor_sizes: vec![64.0, 128.0, 256.0, 512.0],
            anchor_aspects: vec![0.5, 1.0, 2.0],
            proposals_train: 300,
            proposals_eval: 100,
            rpn_nms_iou: 0.7,
            detection_nms_iou: 0.5,
            fg_iou: 0.5,
            query_size: (224, 224),
            roi_sampling: 2,
        }
    }

    pub fn toy() -> Self {
        PipelineConfig {
            backbone: BackboneConfig::toy(),
            anchor_sizes: vec![12.0, 20.0, 28.0],
            anchor_aspects: vec![0.5, 1.0, 2.0],
            proposals_train: 300,
            proposals_eval: 100,
            rpn_nms_iou: 0.7,
            detection_nms_iou: 0.5,
            fg_iou: 0.5,
            query_size: (64, 64),
            roi_sampling: 2,
        }
    }
}

/// Box prediction from the detection branch: refined box plus calibrated
/// objectness.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionOutput {
    pub refined_box: Rect,
    pub objectness: f64,
}

/// Where a batch of boxes came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoxSource {
    Proposal,
    Predicted,
    GroundTruth,
}

/// Boxes with their pooled features on the tape.
pub struct RegionBatch<'t> {
    pub boxes: Vec<Rect>,
    pub source: BoxSource,
    pub pooled: Var<'t>,
}

pub struct DetectForward<'t> {
    pub branch: Var<'t>,
    pub deltas: Var<'t>,
    pub objectness: Var<'t>,
    pub outputs: Vec<DetectionOutput>,
}

pub struct IdentifyForward<'t> {
    pub branch: Var<'t>,
    pub deltas: Var<'t>,
    pub refined: Vec<Rect>,
    pub nae: NaeOutput<'t>,
    pub outputs: Vec<IdentityEmbedding>,
}

/// The end-to-end search network. All mutable state lives in `params`;
/// forward passes are pure functions of the inputs and parameters.
pub struct SearchModel {
    pub cfg: PipelineConfig,
    pub num_identities: u32,
    pub text_dim: usize,
    pub params: ParamStore,
    backbone: Backbone,
    rpn: Rpn,
    det_head: BranchHead,
    id_head: BranchHead,
    box_predictor: Linear,
    box_refiner: Linear,
    nae: NaeHead,
    det_projector: Linear,
    id_projector: Linear,
    img_classifier: Linear,
    box_classifier: Linear,
}

struct Parts {
    backbone: Backbone,
    rpn: Rpn,
    det_head: BranchHead,
    id_head: BranchHead,
    box_predictor: Linear,
    box_refiner: Linear,
    nae: NaeHead,
    det_projector: Linear,
    id_projector: Linear,
    img_classifier: Linear,
    box_classifier: Linear,
}

fn build_parts(cfg: &PipelineConfig, num_identities: u32, text_dim: usize) -> Parts {
    let d = cfg.backbone.stem_output_channels;
    let branch = cfg.backbone.branch_output_channels();
    let o = cfg.backbone.embedding_dim;
    let a = cfg.anchor_sizes.len() * cfg.anchor_aspects.len();
    Parts {
        backbone: Backbone::new(d, cfg.backbone.stride),
        rpn: Rpn::new(d, a),
        det_head: BranchHead::new("det.head", d),
        id_head: BranchHead::new("id.head", d),
        box_predictor: Linear::new("det.box_predictor", branch, 5),
        box_refiner: Linear::new("id.box_refiner", branch, 4),
        nae: NaeHead::new("id.nae", branch, o),
        det_projector: Linear::new("det.projector", branch, text_dim),
        id_projector: Linear::new("id.projector", branch, text_dim),
        img_classifier: Linear::new("mc.classifier", d, num_identities as usize),
        box_classifier: Linear::new("sc.classifier", branch, num_identities as usize),
    }
}

impl SearchModel {
    pub fn new(cfg: PipelineConfig, num_identities: u32, text_dim: usize, seed: u64) -> Self {
        let parts = build_parts(&cfg, num_identities, text_dim);
        let mut params = ParamStore::new();
        parts.backbone.init(&mut params, seed);
        parts.rpn.init(&mut params, seed);
        parts.det_head.init(&mut params, seed);
        parts.id_head.init(&mut params, seed);
        parts.box_predictor.init(&mut params, seed);
        parts.box_refiner.init(&mut params, seed);
        parts.nae.init(&mut params, seed);
        parts.det_projector.init(&mut params, seed);
        parts.id_projector.init(&mut params, seed);
        parts.img_classifier.init(&mut params, seed);
        parts.box_classifier.init(&mut params, seed);
        Self::assemble(cfg, num_identities, text_dim, params, parts)
    }

    fn assemble(
        cfg: PipelineConfig,
        num_identities: u32,
        text_dim: usize,
        params: ParamStore,
        parts: Parts,
    ) -> Self {
        SearchModel {
            cfg,
            num_identities,
            text_dim,
            params,
            backbone: parts.backbone,
            rpn: parts.rpn,
            det_head: parts.det_head,
            id_head: parts.id_head,
            box_predictor: parts.box_predictor,
            box_refiner: parts.box_refiner,
            nae: parts.nae,
            det_projector: parts.det_projector,
            id_projector: parts.id_projector,
            img_classifier: parts.img_classifier,
            box_classifier: parts.box_classifier,
        }
    }

    /// Rebuild a model around parameters taken from a checkpoint.
    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self, PipelineError> {
        let params = Checkpoint::store_from_tensors(&ck.tensors, "")?;
        let parts = build_parts(&ck.pipeline, ck.num_identities, ck.text_dim);
        Ok(Self::assemble(ck.pipeline.clone(), ck.num_identities, ck.text_dim, params, parts))
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            backbone: self.cfg.backbone.clone(),
            pipeline: self.cfg.clone(),
            num_identities: self.num_identities,
            text_dim: self.text_dim,
            tensors: Checkpoint::tensors_from_store(&self.params),
            extras: Default::default(),
        }
    }

    /// The detection and identity branches must not share parameters.
    pub fn audit_branch_isolation(&self) -> Result<(), PipelineError> {
        let det = self.params.names_with_prefix("det.");
        let id = self.params.names_with_prefix("id.");
        let overlap: Vec<String> = det.iter().filter(|n| id.contains(n)).cloned().collect();
        if overlap.is_empty() {
            Ok(())
        } else {
            Err(PipelineError::BranchOverlap(overlap))
        }
    }

    pub fn anchors_per_cell(&self) -> usize {
        self.cfg.anchor_sizes.len() * self.cfg.anchor_aspects.len()
    }

    /// Backbone forward over a `[B, 3, H, W]` image batch.
    pub fn extract_features<'t>(
        &self,
        tape: &'t Tape,
        images: &ArrayD<f64>,
        train: bool,
    ) -> Result<Var<'t>, PipelineError> {
        let shape = images.shape();
        assert_eq!(shape.len(), 4, "images must be [B, 3, H, W]");
        let (h, w) = (shape[2], shape[3]);
        let min = self.cfg.backbone.min_image_side();
        if h < min || w < min {
            return Err(PipelineError::InputTooSmall { width: w, height: h, min });
        }
        let x = tape.constant(images.clone());
        Ok(self.backbone.forward(tape, &self.params, x, train))
    }

    /// Slice one item out of a `[B, C, H, W]` batch variable.
    pub fn slice_item<'t>(&self, batch: Var<'t>, item: usize) -> Var<'t> {
        let shape = batch.shape();
        ops::reshape(ops::select_rows(batch, &[item]), &[shape[1], shape[2], shape[3]])
    }

    pub fn rpn_forward<'t>(&self, tape: &'t Tape, fmap: Var<'t>, train: bool) -> RpnMaps<'t> {
        self.rpn.forward(tape, &self.params, fmap, train)
    }

    pub fn rpn_flatten_item<'t>(&self, maps: &RpnMaps<'t>, item: usize) -> (Var<'t>, Var<'t>) {
        self.rpn.flatten_item(maps, item)
    }

    /// Anchor grid for a feature map of the given extent.
    pub fn anchor_grid(&self, feat_h: usize, feat_w: usize, img_w: f64, img_h: f64) -> Vec<Option<Rect>> {
        generate_anchor_grid(
            feat_h,
            feat_w,
            self.cfg.backbone.stride,
            &self.cfg.anchor_sizes,
            &self.cfg.anchor_aspects,
            img_w,
            img_h,
        )
    }

    /// RoI-align boxes from one frame's feature map into pooled bins.
    pub fn pool_regions<'t>(
        &self,
        fmap_item: Var<'t>,
        boxes: &[Rect],
        source: BoxSource,
    ) -> RegionBatch<'t> {
        let pooled = roi::roi_align(
            fmap_item,
            boxes,
            self.cfg.backbone.pooled_h,
            self.cfg.backbone.pooled_w,
            1.0 / self.cfg.backbone.stride as f64,
            self.cfg.roi_sampling,
        );
        RegionBatch { boxes: boxes.to_vec(), source, pooled }
    }

    /// Detection branch: branch features, box deltas, objectness, and the
    /// decoded per-region outputs.
    pub fn detect<'t>(
        &self,
        tape: &'t Tape,
        regions: &RegionBatch<'t>,
        img_w: f64,
        img_h: f64,
        train: bool,
    ) -> DetectForward<'t> {
        let n = regions.boxes.len();
        let branch = self.det_head.forward(tape, &self.params, regions.pooled, train);
        let pred = self.box_predictor.forward(tape, &self.params, ops::global_avg_pool(branch), train);
        let deltas = ops::select_cols(pred, &[0, 1, 2, 3]);
        let objectness = ops::sigmoid(ops::reshape(ops::select_cols(pred, &[4]), &[n]));
        let outputs = decode_outputs(&regions.boxes, &deltas.value(), &objectness.value(), img_w, img_h);
        DetectForward { branch, deltas, objectness, outputs }
    }

    /// Identity branch: branch features, refined boxes, and norm-aware
    /// embeddings. The head is agnostic to the box source.
    pub fn identify<'t>(
        &self,
        tape: &'t Tape,
        regions: &RegionBatch<'t>,
        img_w: f64,
        img_h: f64,
        train: bool,
    ) -> IdentifyForward<'t> {
        let branch = self.id_head.forward(tape, &self.params, regions.pooled, train);
        let deltas = self.box_refiner.forward(tape, &self.params, ops::global_avg_pool(branch), train);
        let nae = self.nae.forward(tape, &self.params, branch, train);
        let dvals = deltas.value();
        let dvals = dvals.view().into_dimensionality::<Ix2>().expect("deltas 2-d");
        let refined: Vec<Rect> = regions
            .boxes
            .iter()
            .enumerate()
            .map(|(i, b)| {
                let d = [dvals[[i, 0]], dvals[[i, 1]], dvals[[i, 2]], dvals[[i, 3]]];
                decode_delta(b, &d, img_w, img_h)
            })
            .collect();
        let emb = nae.embeddings.value();
        let emb2 = emb.view().into_dimensionality::<Ix2>().expect("embeddings 2-d");
        let scores = nae.scores.value();
        let outputs: Vec<IdentityEmbedding> = (0..regions.boxes.len())
            .map(|i| IdentityEmbedding {
                vector: Array1::from_iter(emb2.row(i).iter().copied()),
                norm_score: scores[i],
            })
            .collect();
        IdentifyForward { branch, deltas, refined, nae, outputs }
    }

    /// Reduce detection-branch features to the text embedding space.
    pub fn project_det<'t>(&self, tape: &'t Tape, branch: Var<'t>, train: bool) -> Var<'t> {
        self.det_projector.forward(tape, &self.params, ops::global_avg_pool(branch), train)
    }

    /// Reduce identity-branch features to the text embedding space.
    pub fn project_id<'t>(&self, tape: &'t Tape, branch: Var<'t>, train: bool) -> Var<'t> {
        self.id_projector.forward(tape, &self.params, ops::global_avg_pool(branch), train)
    }

    /// Image-level multi-ID presence probabilities `[B, C]`.
    pub fn image_probs<'t>(&self, tape: &'t Tape, fmap: Var<'t>, train: bool) -> Var<'t> {
        let logits = self.img_classifier.forward(tape, &self.params, ops::global_avg_pool(fmap), train);
        ops::sigmoid(logits)
    }

    /// Box-level single-ID class probabilities `[m, C]`.
    pub fn box_class_probs<'t>(&self, tape: &'t Tape, branch: Var<'t>, train: bool) -> Var<'t> {
        let logits = self.box_classifier.forward(tape, &self.params, ops::global_avg_pool(branch), train);
        softmax_probs(logits)
    }

    /// Generate up to `budget` proposals for a single `[3, H, W]` frame.
    pub fn propose_regions(
        &self,
        image: &ArrayD<f64>,
        budget: usize,
    ) -> Result<Vec<(Rect, f64)>, PipelineError> {
        let shape = image.shape().to_vec();
        assert_eq!(shape.len(), 3, "frame must be [3, H, W]");
        let batch = image.clone().insert_axis(ndarray::Axis(0));
        let tape = Tape::new();
        let fmap = self.extract_features(&tape, &batch, false)?;
        let maps = self.rpn_forward(&tape, fmap, false);
        let (logits, deltas) = self.rpn.flatten_item(&maps, 0);
        let fshape = fmap.shape();
        let (img_w, img_h) = (shape[2] as f64, shape[1] as f64);
        let grid = self.anchor_grid(fshape[2], fshape[3], img_w, img_h);
        let lv = logits.value();
        let dv = deltas.value();
        let dv = dv.view().into_dimensionality::<Ix2>().expect("deltas 2-d");
        let logit_vec: Vec<f64> = lv.iter().copied().collect();
        let delta_vec: Vec<[f64; 4]> =
            (0..grid.len()).map(|i| [dv[[i, 0]], dv[[i, 1]], dv[[i, 2]], dv[[i, 3]]]).collect();
        Ok(propose(&grid, &logit_vec, &delta_vec, img_w, img_h, self.cfg.rpn_nms_iou, budget))
    }

    /// Embed a cropped query image by wrapping it as a single-frame input
    /// whose one region is the full crop extent, then routing it through the
    /// backbone, RoI pooling, and the identity branch.
    pub fn encode_query(&self, crop: &RgbImage) -> Result<IdentityEmbedding, PipelineError> {
        let (qw, qh) = self.cfg.query_size;
        let resized = imgio::resize(crop, qw, qh);
        let chw = imgio::to_chw(&resized).into_dyn().insert_axis(ndarray::Axis(0));
        let tape = Tape::new();
        let fmap = self.extract_features(&tape, &chw, false)?;
        let item = self.slice_item(fmap, 0);
        let full = Rect::new(0.0, 0.0, qw as f64, qh as f64).expect("query extent");
        let regions = self.pool_regions(item, &[full], BoxSource::Predicted);
        let out = self.identify(&tape, &regions, qw as f64, qh as f64, false);
        Ok(out.outputs.into_iter().next().expect("one region"))
    }
}

fn decode_outputs(
    boxes: &[Rect],
    deltas: &ArrayD<f64>,
    objectness: &ArrayD<f64>,
    img_w: f64,
    img_h: f64,
) -> Vec<DetectionOutput> {
    let d = deltas.view().into_dimensionality::<Ix2>().expect("deltas 2-d");
    boxes
        .iter()
        .enumerate()
        .map(|(i, b)| DetectionOutput {
            refined_box: decode_delta(
                b,
                &[d[[i, 0]], d[[i, 1]], d[[i, 2]], d[[i, 3]]],
                img_w,
                img_h,
            ),
            objectness: objectness[i],
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::IxDyn;

    fn toy_model() -> SearchModel {
        SearchModel::new(PipelineConfig::toy(), 4, 24, 11)
    }

    #[test]
    fn branch_isolation_holds() {
        toy_model().audit_branch_isolation().unwrap();
    }

    #[test]
    fn too_small_image_is_an_input_error() {
        let model = toy_model();
        let tape = Tape::new();
        let tiny = ArrayD::zeros(IxDyn(&[1, 3, 8, 8]));
        assert!(matches!(
            model.extract_features(&tape, &tiny, false),
            Err(PipelineError::InputTooSmall { .. })
        ));
    }

    #[test]
    fn deterministic_features_in_eval_mode() {
        let model = toy_model();
        let img = ArrayD::from_shape_fn(IxDyn(&[1, 3, 32, 32]), |ix| {
            (ix[1] * 31 + ix[2] * 7 + ix[3]) as f64 * 0.001
        });
        let tape = Tape::new();
        let f1 = model.extract_features(&tape, &img, false).unwrap();
        let f2 = model.extract_features(&tape, &img, false).unwrap();
        assert_eq!(f1.value(), f2.value());
        assert_eq!(f1.shape(), vec![1, 128, 4, 4]);
    }

    #[test]
    fn zero_delta_identity_refinement() {
        // with zeroed refiner weights the refined box equals the input box
        let mut model = toy_model();
        model.params.set(
            "id.box_refiner.weight",
            ArrayD::zeros(IxDyn(&[model.cfg.backbone.branch_output_channels(), 4])),
        );
        model.params.set("id.box_refiner.bias", ArrayD::zeros(IxDyn(&[4])));
        let tape = Tape::new();
        let img = ArrayD::from_elem(IxDyn(&[1, 3, 64, 64]), 0.3);
        let fmap = model.extract_features(&tape, &img, false).unwrap();
        let item = model.slice_item(fmap, 0);
        let b = Rect::new(8.0, 8.0, 24.0, 28.0).unwrap();
        let regions = model.pool_regions(item, &[b], BoxSource::GroundTruth);
        let out = model.identify(&tape, &regions, 64.0, 64.0, false);
        assert!(crate::datamodel::iou(&out.refined[0], &b) > 0.999);
    }

    #[test]
    fn ground_truth_path_equals_predicted_path() {
        let model = toy_model();
        let tape = Tape::new();
        let img = ArrayD::from_shape_fn(IxDyn(&[1, 3, 64, 64]), |ix| {
            ((ix[2] as f64) - (ix[3] as f64)) * 0.01
        });
        let fmap = model.extract_features(&tape, &img, false).unwrap();
        let item = model.slice_item(fmap, 0);
        let b = Rect::new(10.0, 12.0, 30.0, 40.0).unwrap();
        let as_gt = model.pool_regions(item, &[b], BoxSource::GroundTruth);
        let as_pred = model.pool_regions(item, &[b], BoxSource::Predicted);
        let o1 = model.identify(&tape, &as_gt, 64.0, 64.0, false);
        let o2 = model.identify(&tape, &as_pred, 64.0, 64.0, false);
        assert_eq!(o1.outputs, o2.outputs);
    }

    #[test]
    fn empty_region_batch_flows_through_both_heads() {
        let model = toy_model();
        let tape = Tape::new();
        let img = ArrayD::from_elem(IxDyn(&[1, 3, 64, 64]), 0.1);
        let fmap = model.extract_features(&tape, &img, false).unwrap();
        let item = model.slice_item(fmap, 0);
        let regions = model.pool_regions(item, &[], BoxSource::Proposal);
        let det = model.detect(&tape, &regions, 64.0, 64.0, false);
        assert!(det.outputs.is_empty());
        assert_eq!(det.branch.shape(), vec![0, 256, 4, 4]);
        let idf = model.identify(&tape, &regions, 64.0, 64.0, false);
        assert!(idf.outputs.is_empty());
        assert_eq!(idf.nae.embeddings.shape(), vec![0, 256]);
    }

    #[test]
    fn checkpoint_round_trip_preserves_outputs() {
        let model = toy_model();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ck.json");
        model.to_checkpoint().save(&path).unwrap();
        let restored = SearchModel::from_checkpoint(&Checkpoint::load(&path).unwrap()).unwrap();
        let img = ArrayD::from_shape_fn(IxDyn(&[1, 3, 32, 32]), |ix| (ix[3] as f64) * 0.01);
        let tape = Tape::new();
        let f1 = model.extract_features(&tape, &img, false).unwrap().value();
        let f2 = restored.extract_features(&tape, &img, false).unwrap().value();
        assert_eq!(f1, f2);
    }

    #[test]
    fn proposals_respect_budget_and_bounds() {
        let model = toy_model();
        let img = ArrayD::from_shape_fn(IxDyn(&[3, 64, 64]), |ix| (ix[1] as f64 * 0.01).sin());
        let props = model.propose_regions(&img, 10).unwrap();
        assert!(props.len() <= 10);
        for (b, _) in &props {
            assert!(b.x1() >= 0.0 && b.y1() >= 0.0 && b.x2() <= 64.0 && b.y2() <= 64.0);
        }
        assert!(model.propose_regions(&img, 0).unwrap().is_empty());
    }
}
