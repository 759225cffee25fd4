//! The three effect types and chain rendering.
//!
//! Every render is a pure function of its input and parameters: delay lines
//! and filter memories are allocated fresh and zeroed on each call.

mod chorus;
mod distortion;
mod reverb;

pub use chorus::{apply_chorus, chorus_delay_samples, CHORUS_CENTRE_MS, CHORUS_RATE_HZ};
pub use distortion::apply_distortion;
pub use reverb::{apply_reverb, comb_feedback, reverb_tail, REVERB_DRY_LEVEL};

use crate::error::{Error, Result};
use crate::types::{clip, rms_normalize, AudioBuffer, ChainConfig, EffectParams, EffectType, TARGET_RMS};

fn expect_kind(params: &EffectParams, expected: EffectType) -> Result<()> {
    if params.kind() != expected {
        return Err(Error::TypeMismatch {
            expected,
            got: params.kind(),
        });
    }
    Ok(())
}

pub fn apply_effect(buf: &AudioBuffer, params: &EffectParams) -> Result<AudioBuffer> {
    match params.kind() {
        EffectType::Chorus => apply_chorus(buf, params),
        EffectType::Distortion => apply_distortion(buf, params),
        EffectType::Reverb => apply_reverb(buf, params),
    }
}

/// Renders `chain` on `dry`.
///
/// The dry signal is first brought to `per_stage_rms`; every stage output is
/// normalized to the same level, and the final output is clipped to `[-1, 1]`.
pub fn apply_chain_with_rms(dry: &AudioBuffer, chain: &ChainConfig, per_stage_rms: f64) -> Result<AudioBuffer> {
    let mut signal = rms_normalize(dry, per_stage_rms)?;
    for stage in chain.stages() {
        signal = rms_normalize(&apply_effect(&signal, stage)?, per_stage_rms)?;
    }
    Ok(clip(&signal))
}

/// [`apply_chain_with_rms`] at the standard level of 0.1.
pub fn apply_chain(dry: &AudioBuffer, chain: &ChainConfig) -> Result<AudioBuffer> {
    apply_chain_with_rms(dry, chain, TARGET_RMS)
}
