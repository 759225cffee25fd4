use crate::error::Result;
use crate::types::{AudioBuffer, EffectParams, EffectType};

use super::expect_kind;

/// Memoryless `tanh` waveshaper with input gain `10^(drive_db / 20)`.
pub fn apply_distortion(buf: &AudioBuffer, params: &EffectParams) -> Result<AudioBuffer> {
    expect_kind(params, EffectType::Distortion)?;
    let drive_db = params.raw()[0];
    let gain = 10f64.powf(drive_db / 20.0);
    let out = buf
        .samples()
        .iter()
        .map(|&x| (gain * x as f64).tanh() as f32)
        .collect();
    AudioBuffer::new(out)
}
