//! Multi-resolution causal transformer and its ablation variants.
//!
//! Outer levels run one encoder layer, pool, recurse, upsample and run one
//! decoder layer; the innermost level is the bottleneck stack. Causality
//! across pooling rests on two offsets that must be used together:
//!
//! * before pooling by `k`, the encoder stream is shifted right by `k - 2`
//!   (vacated slots get a learned boundary row), so pooled group `g` sees
//!   original positions up to `g*k + 1`;
//! * on the way back up, the duplicated coarse stream is delayed by one
//!   position relative to the encoder skip, i.e. the encoder stream enters
//!   one step ahead of the upsampled one.
//!
//! With both, output position `q` depends only on inputs `<= q`; removing
//! either breaks it (see [`Ablation`]).

mod config;
mod forward;
mod incremental;
mod init;

pub use config::{Ablation, BoundaryFill, ModelConfig, Variant, LEVEL_FACTORS};
pub use incremental::IncrementalDecoder;

use crate::tensor::{ParamId, ParamStore, Scalar};

/// Parameters of one pre-norm attention + MLP block.
#[derive(Debug, Clone)]
pub(crate) struct BlockIds {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
}

#[derive(Debug, Clone)]
pub(crate) struct PointEncoderIds {
    pub in_w: ParamId,
    pub in_b: ParamId,
    pub hid_w: ParamId,
    pub hid_b: ParamId,
    pub queries: ParamId,
    pub ln_q_g: ParamId,
    pub ln_q_b: ParamId,
    pub ln_kv_g: ParamId,
    pub ln_kv_b: ParamId,
    pub wq: ParamId,
    pub bq: ParamId,
    pub wk: ParamId,
    pub bk: ParamId,
    pub wv: ParamId,
    pub bv: ParamId,
    pub wo: ParamId,
    pub bo: ParamId,
    pub pad: Option<ParamId>,
}

#[derive(Debug, Clone)]
pub(crate) struct Layout {
    pub tok_emb: ParamId,
    /// Positional table per resolution level (0 = full).
    pub pos: Vec<ParamId>,
    /// Boundary row per outer level (absent for zero fill).
    pub boundary: Vec<Option<ParamId>>,
    pub enc: Vec<BlockIds>,
    pub dec: Vec<BlockIds>,
    /// Bottleneck layers (or all layers of the plain transformer).
    pub core: Vec<BlockIds>,
    /// Learned per-channel scale for linked bottleneck layers.
    pub alpha: Vec<Option<ParamId>>,
    pub ln_f_g: ParamId,
    pub ln_f_b: ParamId,
    pub head_w: ParamId,
    pub head_b: ParamId,
    pub point_encoder: Option<PointEncoderIds>,
}

/// Model configuration plus parameters.
#[derive(Debug, Clone)]
pub struct HourglassModel<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub(crate) layout: Layout,
}

impl<T: Scalar> HourglassModel<T> {
    /// Freshly initialized model.
    pub fn new(config: ModelConfig, seed: u64) -> crate::Result<Self> {
        config.validate()?;
        let (params, layout) = init::build(&config, seed);
        Ok(Self { config, params, layout })
    }

    /// Model with the given parameter values (e.g. from a checkpoint).
    pub fn from_params(config: ModelConfig, params: ParamStore<T>) -> crate::Result<Self> {
        let mut model = Self::new(config, 0)?;
        model.params.check_same_layout(params.shapes())?;
        for id in params.ids() {
            if model.params.name(id) != params.name(id) {
                return Err(crate::Error::Format(format!(
                    "parameter {} found where {} expected",
                    params.name(id),
                    model.params.name(id)
                )));
            }
        }
        model.params = params;
        Ok(model)
    }

    pub fn num_params(&self) -> usize {
        self.params.numel()
    }

    /// Same model in another precision.
    pub fn cast<U: Scalar>(&self) -> HourglassModel<U> {
        HourglassModel {
            config: self.config.clone(),
            params: self.params.cast(),
            layout: self.layout.clone(),
        }
    }

    /// Indices of bottleneck layers whose input receives a mirrored earlier
    /// layer's output, paired with that earlier layer.
    pub fn bottleneck_links(&self) -> Vec<(usize, usize)> {
        self.config.bottleneck_links()
    }
}
