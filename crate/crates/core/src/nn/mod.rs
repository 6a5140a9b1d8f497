//! The denoising network: a 1D U-Net over the frame axis whose residual
//! blocks are each followed by a cross-modal transformer block.

mod grad;
mod layers;
mod params;
mod unet;

pub use grad::{gradients, gradients_of};
pub use layers::{cross_attention, time_embedding, AttentionParams};
pub use params::{Binder, ParamStore};
pub use unet::{ConditioningConfig, DenoiserModel, ModelConfig};

pub(crate) use layers::{
    attention, init_attention, init_layer_norm, init_linear, layer_norm, linear,
};
pub(crate) use params::Init;

use crate::error::{Error, Result};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Modality {
    Audio,
    Text,
    None,
}

/// `m x d` context rows consumed by the cross-attention blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditioningContext {
    rows: Mat,
    modality: Modality,
}

impl ConditioningContext {
    pub fn new(rows: Mat, modality: Modality) -> Result<Self> {
        if !rows.is_finite() {
            return Err(Error::Numerical {
                name: "conditioning context".into(),
            });
        }
        if modality != Modality::None && rows.rows() == 0 {
            return Err(Error::dim("conditioning context has no rows"));
        }
        Ok(ConditioningContext { rows, modality })
    }

    pub fn none() -> Self {
        ConditioningContext {
            rows: Mat::zeros(0, 0),
            modality: Modality::None,
        }
    }

    pub fn rows(&self) -> &Mat {
        &self.rows
    }

    pub fn modality(&self) -> Modality {
        self.modality
    }

    pub fn is_none(&self) -> bool {
        self.modality == Modality::None
    }
}
