// Mono Freeverb (Jezar at Dreampoint, public domain): eight parallel lowpass
// feedback combs into four series allpasses.
// Reference description: https://ccrma.stanford.edu/~jos/pasp/Freeverb.html

use crate::error::Result;
use crate::types::{AudioBuffer, EffectParams, EffectType};

use super::expect_kind;

const COMB_TUNING: [usize; 8] = [1116, 1188, 1277, 1356, 1422, 1491, 1557, 1617];
const ALLPASS_TUNING: [usize; 4] = [556, 441, 341, 225];
const ALLPASS_FEEDBACK: f64 = 0.5;
const FIXED_GAIN: f64 = 0.015;
const SCALE_ROOM: f64 = 0.28;
const OFFSET_ROOM: f64 = 0.7;
const SCALE_DAMP: f64 = 0.4;
const SCALE_WET: f64 = 3.0;
const SCALE_DRY: f64 = 2.0;
pub const REVERB_DRY_LEVEL: f64 = 0.4;

pub fn comb_feedback(room_size: f64) -> f64 {
    SCALE_ROOM * room_size + OFFSET_ROOM
}

fn comb_into(input: &[f64], delay: usize, feedback: f64, damp: f64, acc: &mut [f64]) {
    let mut line = vec![0.0f64; delay];
    let mut idx = 0;
    let mut store = 0.0;
    for (x, a) in input.iter().zip(acc.iter_mut()) {
        let out = line[idx];
        store = out * (1.0 - damp) + store * damp;
        line[idx] = x + store * feedback;
        idx += 1;
        if idx == delay {
            idx = 0;
        }
        *a += out;
    }
}

fn allpass_in_place(signal: &mut [f64], delay: usize) {
    let mut line = vec![0.0f64; delay];
    let mut idx = 0;
    for s in signal.iter_mut() {
        let buffered = line[idx];
        line[idx] = *s + buffered * ALLPASS_FEEDBACK;
        *s = buffered - *s;
        idx += 1;
        if idx == delay {
            idx = 0;
        }
    }
}

/// Wet path only: comb bank and allpass cascade, before the wet/dry mix.
pub fn reverb_tail(x: &[f32], room_size: f64, damping: f64) -> Vec<f64> {
    let input: Vec<f64> = x.iter().map(|&s| s as f64 * FIXED_GAIN).collect();
    let feedback = comb_feedback(room_size);
    let damp = SCALE_DAMP * damping;
    let mut acc = vec![0.0f64; x.len()];
    for &delay in &COMB_TUNING {
        comb_into(&input, delay, feedback, damp, &mut acc);
    }
    for &delay in &ALLPASS_TUNING {
        allpass_in_place(&mut acc, delay);
    }
    acc
}

pub fn apply_reverb(buf: &AudioBuffer, params: &EffectParams) -> Result<AudioBuffer> {
    expect_kind(params, EffectType::Reverb)?;
    let raw = params.raw();
    let (room_size, damping, wet_level) = (raw[0], raw[1], raw[2]);
    let tail = reverb_tail(buf.samples(), room_size, damping);
    let wet = SCALE_WET * wet_level;
    let dry = SCALE_DRY * REVERB_DRY_LEVEL;
    let out = buf
        .samples()
        .iter()
        .zip(&tail)
        .map(|(&x, &r)| (wet * r + dry * x as f64) as f32)
        .collect();
    AudioBuffer::new(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::normalize_params;

    fn impulse(len: usize) -> AudioBuffer {
        let mut x = vec![0.0f32; len];
        x[0] = 1.0;
        AudioBuffer::new(x).unwrap()
    }

    /// Last sample index whose magnitude is within 60 dB of the peak.
    fn tail_end(buf: &AudioBuffer) -> usize {
        let threshold = buf.peak() * 1e-3;
        buf.samples()
            .iter()
            .rposition(|&s| (s as f64).abs() > threshold)
            .unwrap()
    }

    #[test]
    fn silence_stays_silent() {
        let p = EffectParams::midpoint(EffectType::Reverb);
        let out = apply_reverb(&AudioBuffer::silence(4096), &p).unwrap();
        assert!(out.samples().iter().all(|&s| s == 0.0));
    }

    #[test]
    fn feedback_matches_room_scaling() {
        assert!((comb_feedback(0.7) - 0.896).abs() < 1e-12);
        assert!((comb_feedback(0.1) - 0.728).abs() < 1e-12);
    }

    #[test]
    fn larger_room_rings_longer() {
        let x = impulse(5 * 44_100);
        let small = normalize_params(EffectType::Reverb, &[0.1, 0.5, 0.4]).unwrap();
        let large = normalize_params(EffectType::Reverb, &[0.7, 0.5, 0.4]).unwrap();
        // compare the wet path only; the dry impulse sets the peak
        let t_small = tail_end(&AudioBuffer::from_f64(&reverb_tail(x.samples(), 0.1, 0.5)).unwrap());
        let t_large = tail_end(&AudioBuffer::from_f64(&reverb_tail(x.samples(), 0.7, 0.5)).unwrap());
        assert!(t_large > t_small, "{t_large} <= {t_small}");
        // full effect renders differ too
        assert_ne!(apply_reverb(&x, &small).unwrap(), apply_reverb(&x, &large).unwrap());
    }

    #[test]
    fn linear_in_wet_level() {
        let x: Vec<f32> = (0..6000).map(|n| ((n * 31) % 17) as f32 / 17.0 - 0.5).collect();
        let x = AudioBuffer::new(x).unwrap();
        let lo = normalize_params(EffectType::Reverb, &[0.4, 0.3, 0.1]).unwrap();
        let hi = normalize_params(EffectType::Reverb, &[0.4, 0.3, 0.4]).unwrap();
        let a = apply_reverb(&x, &lo).unwrap();
        let b = apply_reverb(&x, &hi).unwrap();
        let tail = reverb_tail(x.samples(), 0.4, 0.3);
        for ((&ya, &yb), &r) in a.samples().iter().zip(b.samples()).zip(&tail) {
            let expected = 3.0 * 0.3 * r;
            assert!(((yb - ya) as f64 - expected).abs() < 1e-6);
        }
    }
}
