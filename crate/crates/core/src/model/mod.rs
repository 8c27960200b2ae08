//! The set-prediction network: convolutional backbone, transformer encoder,
//! feature extrapolation module and conditional decoder with learnable anchors.

mod checkpoint;
pub mod init;
pub mod grid;
pub mod layers;

use candle_core::{DType, Device, Module, Tensor, D};
use candle_nn::{Conv2d, Conv2dConfig, Init, Linear, VarBuilder};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::BBox;

pub use checkpoint::{load_checkpoint, read_checkpoint_config, save_checkpoint, CHECKPOINT_FORMAT};
pub use grid::{extended_coords, sine_embedding, TokenGrid};
pub use init::seeded_var_builder;
use layers::{linear, linear_const, ConditionalCrossAttention, FeedForward, LayerNorm, Mlp, MultiHeadAttention};

/// Network hyper-parameters. Stored verbatim in checkpoints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_h: usize,
    pub input_w: usize,
    /// Output channels of each stride-2 backbone block; the total stride is
    /// `2^len`.
    pub backbone_channels: Vec<usize>,
    pub d_model: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    pub encoder_layers: usize,
    pub decoder_layers: usize,
    pub fem_layers: usize,
    pub anchors: usize,
    /// Extrapolation margin in cells per side. `None` picks
    /// `ceil(0.25 * min(rows, cols))`; `Some(0)` disables the FEM.
    pub margin: Option<usize>,
    pub pe_temperature: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            input_h: 192,
            input_w: 256,
            backbone_channels: vec![32, 64, 128, 128],
            d_model: 128,
            heads: 4,
            ffn_dim: 256,
            encoder_layers: 4,
            decoder_layers: 4,
            fem_layers: 6,
            anchors: 16,
            margin: None,
            pe_temperature: 10000.0,
        }
    }
}

impl ModelConfig {
    pub fn stride(&self) -> usize {
        1 << self.backbone_channels.len()
    }

    /// Visible grid `(rows, cols)`.
    pub fn grid(&self) -> (usize, usize) {
        (self.input_h / self.stride(), self.input_w / self.stride())
    }

    pub fn margin(&self) -> usize {
        self.margin.unwrap_or_else(|| {
            let (r, c) = self.grid();
            (0.25 * r.min(c) as f64).ceil() as usize
        })
    }

    pub fn validate(&self) -> Result<()> {
        let s = self.stride();
        let bad = |m: String| Err(Error::Config(m));
        if self.backbone_channels.is_empty() {
            return bad("backbone needs at least one block".into());
        }
        if self.input_h % s != 0 || self.input_w % s != 0 || self.input_h == 0 || self.input_w == 0 {
            return bad(format!("input {}x{} not a multiple of stride {s}", self.input_h, self.input_w));
        }
        if self.d_model % 4 != 0 || self.heads == 0 || self.d_model % self.heads != 0 {
            return bad(format!("d_model {} incompatible with {} heads", self.d_model, self.heads));
        }
        if self.anchors == 0 {
            return bad("need at least one anchor".into());
        }
        if self.margin() > 0 && self.fem_layers == 0 {
            return bad("positive margin requires fem_layers > 0".into());
        }
        Ok(())
    }
}

/// Candidate crops (initial-view frame) with confidences for one image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionSet {
    pub boxes: Vec<BBox>,
    pub confidences: Vec<f64>,
}

impl PredictionSet {
    pub fn len(&self) -> usize {
        self.boxes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.boxes.is_empty()
    }

    /// Indices sorted by descending confidence (stable).
    pub fn ranking(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.len()).collect();
        idx.sort_by(|&a, &b| self.confidences[b].total_cmp(&self.confidences[a]));
        idx
    }

    pub fn ranked_boxes(&self) -> Vec<BBox> {
        self.ranking().into_iter().map(|i| self.boxes[i]).collect()
    }

    /// Highest-confidence candidate.
    pub fn top(&self) -> Option<(BBox, f64)> {
        self.ranking().first().map(|&i| (self.boxes[i], self.confidences[i]))
    }
}

/// Differentiable network outputs for a batch.
#[derive(Debug, Clone)]
pub struct RawPredictions {
    /// `[B, n, 4]` center-form boxes.
    pub boxes: Tensor,
    /// `[B, n]` confidence logits.
    pub logits: Tensor,
}

impl RawPredictions {
    pub fn confidences(&self) -> Result<Tensor> {
        Ok(candle_nn::ops::sigmoid(&self.logits)?)
    }

    pub fn to_sets(&self) -> Result<Vec<PredictionSet>> {
        let boxes = self.boxes.to_dtype(DType::F64)?.to_vec3::<f64>()?;
        let conf = self.confidences()?.to_dtype(DType::F64)?.to_vec2::<f64>()?;
        boxes
            .into_iter()
            .zip(conf)
            .map(|(bs, cs)| {
                let boxes = bs.into_iter().map(|b| BBox::new(b[0], b[1], b[2], b[3])).collect::<Result<_>>()?;
                Ok(PredictionSet { boxes, confidences: cs })
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Backbone {
    blocks: Vec<(Conv2d, Conv2d)>,
    proj: Conv2d,
}

impl Backbone {
    fn new(channels: &[usize], d: usize, vb: VarBuilder) -> Result<Self> {
        let down = Conv2dConfig { padding: 1, stride: 2, ..Default::default() };
        let same = Conv2dConfig { padding: 1, ..Default::default() };
        let mut blocks = Vec::new();
        let mut c_in = 3;
        for (i, &c) in channels.iter().enumerate() {
            let vb = vb.pp(format!("block{i}"));
            blocks.push((
                candle_nn::conv2d(c_in, c, 3, down, vb.pp("down"))?,
                candle_nn::conv2d(c, c, 3, same, vb.pp("conv"))?,
            ));
            c_in = c;
        }
        let proj = candle_nn::conv2d(c_in, d, 1, Default::default(), vb.pp("proj"))?;
        Ok(Self { blocks, proj })
    }

    /// `[B, 3, H, W]` -> `[B, d, H/s, W/s]`
    fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let mut x = x.clone();
        for (down, conv) in &self.blocks {
            x = down.forward(&x)?.relu()?;
            x = (conv.forward(&x)?.relu()? + &x)?;
        }
        Ok(self.proj.forward(&x)?)
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    ln1: LayerNorm,
    ffn: FeedForward,
    ln2: LayerNorm,
}

impl EncoderLayer {
    fn new(cfg: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            attn: MultiHeadAttention::new(d, cfg.heads, vb.pp("attn"))?,
            ln1: LayerNorm::new(d, vb.pp("ln1"))?,
            ffn: FeedForward::new(d, cfg.ffn_dim, vb.pp("ffn"))?,
            ln2: LayerNorm::new(d, vb.pp("ln2"))?,
        })
    }

    fn forward(&self, x: &Tensor, pos: &Tensor) -> Result<Tensor> {
        let q = x.broadcast_add(pos)?;
        let x = self.ln1.forward(&(x + self.attn.forward(&q, &q, x)?)?)?;
        self.ln2.forward(&(&x + self.ffn.forward(&x)?)?)
    }
}

/// One extrapolation block: padded tokens attend to each other, then to the
/// visible tokens.
#[derive(Debug, Clone)]
struct FemBlock {
    self_attn: MultiHeadAttention,
    ln1: LayerNorm,
    cross_attn: MultiHeadAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
    ln3: LayerNorm,
}

impl FemBlock {
    fn new(cfg: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            self_attn: MultiHeadAttention::new(d, cfg.heads, vb.pp("self_attn"))?,
            ln1: LayerNorm::new(d, vb.pp("ln1"))?,
            cross_attn: MultiHeadAttention::new(d, cfg.heads, vb.pp("cross_attn"))?,
            ln2: LayerNorm::new(d, vb.pp("ln2"))?,
            ffn: FeedForward::new(d, cfg.ffn_dim, vb.pp("ffn"))?,
            ln3: LayerNorm::new(d, vb.pp("ln3"))?,
        })
    }

    fn forward(&self, x: &Tensor, pos: &Tensor, visible: &Tensor, visible_key: &Tensor) -> Result<Tensor> {
        let q = x.broadcast_add(pos)?;
        let x = self.ln1.forward(&(x + self.self_attn.forward(&q, &q, x)?)?)?;
        let q = x.broadcast_add(pos)?;
        let x = self.ln2.forward(&(&x + self.cross_attn.forward(&q, visible_key, visible)?)?)?;
        self.ln3.forward(&(&x + self.ffn.forward(&x)?)?)
    }
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    ln1: LayerNorm,
    spatial_scale: Linear,
    cross_attn: ConditionalCrossAttention,
    ln2: LayerNorm,
    ffn: FeedForward,
    ln3: LayerNorm,
}

impl DecoderLayer {
    fn new(cfg: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        let d = cfg.d_model;
        Ok(Self {
            self_attn: MultiHeadAttention::new(d, cfg.heads, vb.pp("self_attn"))?,
            ln1: LayerNorm::new(d, vb.pp("ln1"))?,
            spatial_scale: linear(d, d, vb.pp("spatial_scale"))?,
            cross_attn: ConditionalCrossAttention::new(d, cfg.heads, vb.pp("cross_attn"))?,
            ln2: LayerNorm::new(d, vb.pp("ln2"))?,
            ffn: FeedForward::new(d, cfg.ffn_dim, vb.pp("ffn"))?,
            ln3: LayerNorm::new(d, vb.pp("ln3"))?,
        })
    }

    fn forward(
        &self,
        tgt: &Tensor,
        query_pos: &Tensor,
        ref_embedding: &Tensor,
        memory: &Tensor,
        memory_pos: &Tensor,
        first: bool,
    ) -> Result<Tensor> {
        let q = (tgt + query_pos)?;
        let tgt = self.ln1.forward(&(tgt + self.self_attn.forward(&q, &q, tgt)?)?)?;
        let content = if first { (&tgt + query_pos)? } else { tgt.clone() };
        // Spatial query: reference-point embedding modulated by a linear map of the content.
        let spatial = ref_embedding.broadcast_mul(&self.spatial_scale.forward(&tgt)?)?;
        let attended = self.cross_attn.forward(&content, &spatial, memory, memory_pos)?;
        let tgt = self.ln2.forward(&(&tgt + attended)?)?;
        self.ln3.forward(&(&tgt + self.ffn.forward(&tgt)?)?)
    }
}

/// Differentiable sinusoidal embedding of `[N, 2]` `(u, v)` coordinates,
/// numerically identical to [`sine_embedding`].
fn sine_embedding_tensor(coords: &Tensor, d: usize, temperature: f64) -> Result<Tensor> {
    let n = coords.dim(0)?;
    let per_axis = d / 2;
    let inv_freq: Vec<f64> = (0..per_axis / 2)
        .map(|k| std::f64::consts::TAU / temperature.powf(2.0 * k as f64 / per_axis as f64))
        .collect();
    let inv_freq = Tensor::from_vec(inv_freq, (1, per_axis / 2), coords.device())?.to_dtype(coords.dtype())?;
    let mut halves = Vec::with_capacity(2);
    for axis in [1, 0] {
        let c = coords.narrow(1, axis, 1)?;
        let phase = c.broadcast_mul(&inv_freq)?;
        let pair = Tensor::stack(&[phase.sin()?, phase.cos()?], 2)?;
        halves.push(pair.reshape((n, per_axis))?);
    }
    Ok(Tensor::cat(&halves, 1)?)
}

/// Extended sigmoid mapping logits to `2 * sigmoid(t) - 0.5`, range `(-0.5, 1.5)`.
fn center_activation(t: &Tensor) -> Result<Tensor> {
    Ok(candle_nn::ops::sigmoid(t)?.affine(2.0, -0.5)?)
}

#[derive(Debug, Clone)]
struct Decoder {
    layers: Vec<DecoderLayer>,
    reference: Mlp,
    box_head: Mlp,
    conf_head: Linear,
}

impl Decoder {
    fn new(cfg: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        let d = cfg.d_model;
        let layers = (0..cfg.decoder_layers)
            .map(|i| DecoderLayer::new(cfg, vb.pp(format!("layer{i}"))))
            .collect::<Result<_>>()?;
        // Prior confidence ~0.1 at initialisation.
        let prior = -(9.0f64).ln();
        Ok(Self {
            layers,
            reference: Mlp::new(&[d, d, 2], vb.pp("reference"))?,
            box_head: Mlp::new_zero_last(&[d, d, d, 4], vb.pp("box_head"))?,
            conf_head: linear_const(d, 1, prior, vb.pp("conf_head"))?,
        })
    }
}

/// The full prediction network.
#[derive(Debug, Clone)]
pub struct UnicModel {
    cfg: ModelConfig,
    backbone: Backbone,
    encoder: Vec<EncoderLayer>,
    fem: Vec<FemBlock>,
    mask_token: Option<Tensor>,
    decoder: Decoder,
    anchors: Tensor,
    dtype: DType,
    device: Device,
}

impl UnicModel {
    pub fn new(cfg: &ModelConfig, vb: VarBuilder) -> Result<Self> {
        cfg.validate()?;
        let d = cfg.d_model;
        let backbone = Backbone::new(&cfg.backbone_channels, d, vb.pp("backbone"))?;
        let encoder = (0..cfg.encoder_layers)
            .map(|i| EncoderLayer::new(cfg, vb.pp(format!("encoder.layer{i}"))))
            .collect::<Result<_>>()?;
        let (fem, mask_token) = if cfg.margin() > 0 {
            let blocks = (0..cfg.fem_layers)
                .map(|i| FemBlock::new(cfg, vb.pp(format!("fem.block{i}"))))
                .collect::<Result<_>>()?;
            let token = vb.get_with_hints(d, "fem.mask_token", Init::Randn { mean: 0.0, stdev: 0.02 })?;
            (blocks, Some(token))
        } else {
            (Vec::new(), None)
        };
        let decoder = Decoder::new(cfg, vb.pp("decoder"))?;
        let anchors = vb.get_with_hints((cfg.anchors, d), "anchors", Init::Randn { mean: 0.0, stdev: 1.0 })?;
        Ok(Self {
            cfg: cfg.clone(),
            backbone,
            encoder,
            fem,
            mask_token,
            decoder,
            anchors,
            dtype: vb.dtype(),
            device: vb.device().clone(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    /// The learnable anchor embeddings, `[n, d]`.
    pub fn anchors(&self) -> &Tensor {
        &self.anchors
    }

    fn embed(&self, coords: &[[f64; 2]]) -> Result<Tensor> {
        sine_embedding(coords, self.cfg.d_model, self.cfg.pe_temperature, self.dtype, &self.device)
    }

    /// Backbone + encoder on images of any stride-aligned size; `coords` gives
    /// the frame coordinates of every output cell (row-major).
    pub fn encode_at(&self, images: &Tensor, coords: &[[f64; 2]]) -> Result<Tensor> {
        let (_, c, h, w) = images.dims4()?;
        let s = self.cfg.stride();
        if c != 3 || h % s != 0 || w % s != 0 {
            return Err(Error::Shape(format!("image batch {:?} (stride {s})", images.dims())));
        }
        if coords.len() != (h / s) * (w / s) {
            return Err(Error::Shape(format!("{} coords for a {}x{} grid", coords.len(), h / s, w / s)));
        }
        let features = self.backbone.forward(images)?;
        let mut x = features.flatten_from(2)?.transpose(1, 2)?.contiguous()?;
        let pos = self.embed(coords)?;
        for layer in &self.encoder {
            x = layer.forward(&x, &pos)?;
        }
        Ok(x)
    }

    /// Visible tokens of a batch of initial views at the configured resolution.
    pub fn encode(&self, images: &Tensor) -> Result<TokenGrid> {
        let (_, _, h, w) = images.dims4()?;
        if h != self.cfg.input_h || w != self.cfg.input_w {
            return Err(Error::Shape(format!(
                "expected {}x{} input, got {h}x{w}",
                self.cfg.input_h, self.cfg.input_w
            )));
        }
        let (rows, cols) = self.cfg.grid();
        let (coords, visible) = extended_coords(rows, cols, 0);
        let tokens = self.encode_at(images, &coords)?;
        Ok(TokenGrid { tokens, coords, visible, rows, cols, margin: 0 })
    }

    /// Extends an all-visible grid by `margin` cells per side, predicting the
    /// padded tokens from the visible ones. Visible tokens pass through.
    pub fn extrapolate(&self, z: &TokenGrid, margin: usize) -> Result<TokenGrid> {
        if z.margin != 0 {
            return Err(Error::InvalidArgument("extrapolate expects an all-visible grid".into()));
        }
        if margin == 0 {
            return Ok(z.clone());
        }
        let mask_token = self
            .mask_token
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("model built without an extrapolation module".into()))?;
        let (base_rows, base_cols) = (z.rows, z.cols);
        let (coords, visible) = extended_coords(base_rows, base_cols, margin);
        let pad_coords: Vec<[f64; 2]> =
            coords.iter().zip(&visible).filter(|(_, v)| !**v).map(|(c, _)| *c).collect();
        let b = z.tokens.dim(0)?;
        let d = z.dim()?;
        let pad_pos = self.embed(&pad_coords)?;
        let vis_pos = self.embed(&z.coords)?;
        let visible_key = z.tokens.broadcast_add(&vis_pos)?;
        let mut x = pad_pos.broadcast_add(mask_token)?.unsqueeze(0)?.broadcast_as((b, pad_coords.len(), d))?.contiguous()?;
        for block in &self.fem {
            x = block.forward(&x, &pad_pos, &z.tokens, &visible_key)?;
        }
        // Re-interleave visible and padded tokens into row-major order.
        let n_vis = z.tokens.dim(1)?;
        let (mut next_vis, mut next_pad) = (0u32, n_vis as u32);
        let order: Vec<u32> = visible
            .iter()
            .map(|&v| {
                let slot = if v { &mut next_vis } else { &mut next_pad };
                *slot += 1;
                *slot - 1
            })
            .collect();
        let order = Tensor::from_vec(order, coords.len(), &self.device)?;
        let tokens = Tensor::cat(&[&z.tokens, &x], 1)?.index_select(&order, 1)?;
        Ok(TokenGrid {
            tokens,
            coords,
            visible,
            rows: base_rows + 2 * margin,
            cols: base_cols + 2 * margin,
            margin,
        })
    }

    /// Decoder and heads with the model's own anchors.
    pub fn decode(&self, z: &TokenGrid) -> Result<RawPredictions> {
        self.decode_with_anchors(z, &self.anchors)
    }

    pub fn decode_with_anchors(&self, z: &TokenGrid, anchors: &Tensor) -> Result<RawPredictions> {
        let d = self.cfg.d_model;
        let (n, ad) = anchors.dims2()?;
        if ad != d {
            return Err(Error::Shape(format!("anchor dim {ad} != model dim {d}")));
        }
        let b = z.tokens.dim(0)?;
        let dec = &self.decoder;
        let memory_pos = self.embed(&z.coords)?;
        let ref_logits = dec.reference.forward(anchors)?;
        let ref_points = center_activation(&ref_logits)?;
        let ref_embedding = sine_embedding_tensor(&ref_points, d, self.cfg.pe_temperature)?;
        let query_pos = anchors.unsqueeze(0)?.broadcast_as((b, n, d))?.contiguous()?;
        let ref_embedding = ref_embedding.unsqueeze(0)?.broadcast_as((b, n, d))?.contiguous()?;
        let mut tgt = Tensor::zeros((b, n, d), self.dtype, &self.device)?;
        for (i, layer) in dec.layers.iter().enumerate() {
            tgt = layer.forward(&tgt, &query_pos, &ref_embedding, &z.tokens, &memory_pos, i == 0)?;
        }
        let t = dec.box_head.forward(&tgt)?;
        let centers = center_activation(&t.narrow(D::Minus1, 0, 2)?.broadcast_add(&ref_logits)?)?;
        let sizes = candle_nn::ops::sigmoid(&t.narrow(D::Minus1, 2, 2)?)?.affine(2.0, 0.0)?;
        let boxes = Tensor::cat(&[centers, sizes], D::Minus1)?;
        let logits = dec.conf_head.forward(&tgt)?.squeeze(D::Minus1)?;
        Ok(RawPredictions { boxes, logits })
    }

    /// Full forward pass; also returns the (possibly extended) token grid.
    pub fn forward_with_tokens(&self, images: &Tensor) -> Result<(RawPredictions, TokenGrid)> {
        let z = self.encode(images)?;
        let z = self.extrapolate(&z, self.cfg.margin())?;
        Ok((self.decode(&z)?, z))
    }

    pub fn forward(&self, images: &Tensor) -> Result<RawPredictions> {
        Ok(self.forward_with_tokens(images)?.0)
    }

    pub fn predict(&self, images: &Tensor) -> Result<Vec<PredictionSet>> {
        self.forward(images)?.to_sets()
    }
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;
    use candle_nn::VarMap;

    pub(crate) fn tiny_config() -> ModelConfig {
        ModelConfig {
            input_h: 48,
            input_w: 64,
            backbone_channels: vec![8, 8, 16, 16],
            d_model: 16,
            heads: 2,
            ffn_dim: 32,
            encoder_layers: 1,
            decoder_layers: 2,
            fem_layers: 2,
            anchors: 5,
            margin: Some(1),
            pe_temperature: 10000.0,
        }
    }

    fn build(cfg: &ModelConfig) -> (VarMap, UnicModel) {
        let vm = VarMap::new();
        let vb = VarBuilder::from_varmap(&vm, DType::F32, &Device::Cpu);
        let m = UnicModel::new(cfg, vb).unwrap();
        (vm, m)
    }

    #[test]
    fn default_config_shapes() {
        let cfg = ModelConfig::default();
        assert_eq!(cfg.stride(), 16);
        assert_eq!(cfg.grid(), (12, 16));
        assert_eq!(cfg.margin(), 3);
        cfg.validate().unwrap();
    }

    #[test]
    fn tensor_embedding_matches_table_embedding() {
        let coords = [[0.1, 0.9], [-0.4, 1.3], [0.5, 0.5]];
        let a = sine_embedding(&coords, 16, 10000.0, DType::F64, &Device::Cpu).unwrap();
        let t = Tensor::new(&[[0.1f64, 0.9], [-0.4, 1.3], [0.5, 0.5]], &Device::Cpu).unwrap();
        let b = sine_embedding_tensor(&t, 16, 10000.0).unwrap();
        let diff = (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f64>().unwrap();
        assert!(diff < 1e-12);
    }

    #[test]
    fn prediction_ranges() {
        let cfg = tiny_config();
        let (_vm, m) = build(&cfg);
        let x = Tensor::randn(0f32, 1.0, (2, 3, 48, 64), &Device::Cpu).unwrap();
        let sets = m.predict(&x).unwrap();
        assert_eq!(sets.len(), 2);
        for s in &sets {
            assert_eq!(s.len(), 5);
            for (b, c) in s.boxes.iter().zip(&s.confidences) {
                assert!((-0.5..=1.5).contains(&b.x) && (-0.5..=1.5).contains(&b.y));
                assert!(b.w > 0.0 && b.w < 2.0 && b.h > 0.0 && b.h < 2.0);
                assert!((0.0..=1.0).contains(c));
            }
        }
    }

    #[test]
    fn wrong_input_rejected() {
        let (_vm, m) = build(&tiny_config());
        let x = Tensor::zeros((1, 1, 48, 64), DType::F32, &Device::Cpu).unwrap();
        assert!(m.encode(&x).is_err());
        let x = Tensor::zeros((1, 3, 32, 64), DType::F32, &Device::Cpu).unwrap();
        assert!(m.encode(&x).is_err());
    }

    #[test]
    fn anchor_dim_mismatch() {
        let (_vm, m) = build(&tiny_config());
        let x = Tensor::zeros((1, 3, 48, 64), DType::F32, &Device::Cpu).unwrap();
        let z = m.encode(&x).unwrap();
        let bad = Tensor::zeros((5, 8), DType::F32, &Device::Cpu).unwrap();
        assert!(m.decode_with_anchors(&z, &bad).is_err());
    }

    #[test]
    fn ranking_is_descending() {
        let s = PredictionSet {
            boxes: vec![BBox::UNIT; 3],
            confidences: vec![0.2, 0.9, 0.5],
        };
        assert_eq!(s.ranking(), vec![1, 2, 0]);
    }
}
