use std::f64::consts::PI;

use crate::error::Result;
use crate::types::{AudioBuffer, EffectParams, EffectType, SAMPLE_RATE};

use super::expect_kind;

pub const CHORUS_RATE_HZ: f64 = 1.0;
pub const CHORUS_CENTRE_MS: f64 = 7.0;
/// Fraction of the centre delay the LFO may swing at full depth.
const MOD_SCALE: f64 = 0.9;

/// Delay in samples at sample index `n` for the given raw depth.
pub fn chorus_delay_samples(n: usize, depth: f64) -> f64 {
    let fs = SAMPLE_RATE as f64;
    let amplitude_ms = depth * CHORUS_CENTRE_MS * MOD_SCALE;
    let phase = 2.0 * PI * CHORUS_RATE_HZ * n as f64 / fs;
    fs / 1000.0 * (CHORUS_CENTRE_MS + amplitude_ms * phase.sin())
}

/// LFO-modulated fractional delay with feedback.
///
/// `w[n] = x[n] + feedback * w(n - D(n))`, `y[n] = (1 - mix) x[n] + mix * w(n - D(n))`
/// with a linearly interpolated read of `w`.
pub fn apply_chorus(buf: &AudioBuffer, params: &EffectParams) -> Result<AudioBuffer> {
    expect_kind(params, EffectType::Chorus)?;
    let raw = params.raw();
    let (depth, feedback, mix) = (raw[0], raw[1], raw[2]);

    let x = buf.samples();
    let mut line = vec![0.0f64; x.len()];
    let mut out = Vec::with_capacity(x.len());
    for n in 0..x.len() {
        let pos = n as f64 - chorus_delay_samples(n, depth);
        // D(n) > 1 sample, so both taps are already written; taps before the
        // start of the buffer read zero
        let base = pos.floor();
        let frac = pos - base;
        let tap = |i: f64| if i < 0.0 { 0.0 } else { line[i as usize] };
        let delayed = tap(base) * (1.0 - frac) + tap(base + 1.0) * frac;
        let xn = x[n] as f64;
        line[n] = xn + feedback * delayed;
        out.push(((1.0 - mix) * xn + mix * delayed) as f32);
    }
    AudioBuffer::new(out)
}
