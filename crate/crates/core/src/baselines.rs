//! Reference models that share the dual model's data, seeds and trainer.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{ModelKind, ModelSpec, ModelState};
use crate::objective::LossWeights;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BaselineKind {
    /// z only, unconditional encoder and decoder.
    PlainVae,
    /// Label concatenated to both encoder and decoder inputs.
    ConditionalVae,
}

impl BaselineKind {
    pub const ALL: [BaselineKind; 2] = [BaselineKind::PlainVae, BaselineKind::ConditionalVae];

    pub fn model_kind(self) -> ModelKind {
        match self {
            BaselineKind::PlainVae => ModelKind::PlainVae,
            BaselineKind::ConditionalVae => ModelKind::ConditionalVae,
        }
    }

    pub fn from_model_kind(kind: ModelKind) -> Option<Self> {
        match kind {
            ModelKind::Dual => None,
            ModelKind::PlainVae => Some(BaselineKind::PlainVae),
            ModelKind::ConditionalVae => Some(BaselineKind::ConditionalVae),
        }
    }
}

/// Builds a baseline with the architecture knobs of `arch` and returns it
/// with the weights it trains under (the plain ELBO).
pub fn build_baseline<R: Rng + ?Sized>(kind: BaselineKind, arch: &ModelSpec, rng: &mut R) -> Result<(ModelState, LossWeights)> {
    let spec = ModelSpec {
        kind: kind.model_kind(),
        ..arch.clone()
    };
    Ok((ModelState::init(spec, rng)?, LossWeights::elbo()))
}
