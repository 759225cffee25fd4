//! Stand-ins for the prediction stage. A predictor either names the
//! unordered set of effects plus a dry estimate, or peels off the last
//! applied effect and returns the signal before it.

mod heuristic;
mod oracle;

use std::collections::BTreeSet;

pub use heuristic::{features, Features, HeuristicPredictor, Thresholds};
pub use oracle::{add_noise_at_snr, NoiseKnobs, NoisyOraclePredictor, OraclePredictor};

use crate::error::Result;
use crate::search::SearchMode;
use crate::types::{AudioBuffer, EffectParams, EffectType};

#[derive(Clone, Debug, PartialEq)]
pub struct DirectPrediction {
    pub types: BTreeSet<EffectType>,
    pub dry: AudioBuffer,
}

/// `class: None` is the "no effect left" class.
#[derive(Clone, Debug, PartialEq)]
pub struct LastPrediction {
    pub class: Option<EffectType>,
    pub params: Option<EffectParams>,
    pub bypass: AudioBuffer,
}

pub trait Predictor: Send + Sync {
    fn predict_direct(&self, wet: &AudioBuffer) -> Result<DirectPrediction>;
    fn predict_last(&self, signal: &AudioBuffer) -> Result<LastPrediction>;
    fn supports(&self, mode: SearchMode) -> bool;
}
