//! Seeded plucked-string tracks (Karplus-Strong) standing in for recorded
//! dry guitar. Phrases alternate notes with short rests of true silence.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::optim::derive_seed;
use crate::types::{AudioBuffer, SAMPLE_RATE};

const FADE: usize = 220;
const HALF_LIFE_S: f64 = 0.5;

fn pluck(freq: f64, len: usize, amplitude: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let period = (SAMPLE_RATE as f64 / freq).round().max(2.0) as usize;
    // triangular string displacement plucked at a random point, plus a little noise
    let at = rng.random_range(0.1..0.4);
    let mut line: Vec<f64> = (0..period)
        .map(|i| {
            let u = i as f64 / period as f64;
            let shape = if u < at { u / at } else { (1.0 - u) / (1.0 - at) };
            shape + 0.2 * rng.random_range(-1.0..1.0)
        })
        .collect();
    let mean = line.iter().sum::<f64>() / period as f64;
    line.iter_mut().for_each(|v| *v -= mean);
    // same half-life for every pitch, so high notes do not die instantly
    let decay = 0.5f64.powf(period as f64 / (HALF_LIFE_S * SAMPLE_RATE as f64));
    let mut out = Vec::with_capacity(len);
    let mut idx = 0;
    for _ in 0..len {
        let next = (idx + 1) % period;
        let v = line[idx];
        out.push(v * amplitude);
        line[idx] = decay * 0.5 * (v + line[next]);
        idx = next;
    }
    // release so the note ends in silence without a click
    let fade = FADE.min(len);
    for (k, s) in out[len - fade..].iter_mut().enumerate() {
        *s *= 1.0 - (k + 1) as f64 / fade as f64;
    }
    out
}

/// A `seconds`-long mono phrase, deterministic in `seed`.
pub fn plucked_track(seed: u64, seconds: f64) -> AudioBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x504c_5543_4b));
    let total = (seconds * SAMPLE_RATE as f64).round() as usize;
    let mut out = vec![0.0f64; total];
    let mut pos = 0usize;
    let mut since_rest = 0;
    while pos < total {
        if since_rest >= 4 || rng.random_bool(0.2) {
            pos += (rng.random_range(0.15..0.4) * SAMPLE_RATE as f64) as usize;
            since_rest = 0;
            continue;
        }
        since_rest += 1;
        let midi: f64 = rng.random_range(40..77) as f64;
        let freq = 440.0 * 2f64.powf((midi - 69.0) / 12.0);
        let len = ((rng.random_range(0.2..0.8) * SAMPLE_RATE as f64) as usize).min(total - pos);
        let note = pluck(freq, len, rng.random_range(0.5..1.0), &mut rng);
        out[pos..pos + len].copy_from_slice(&note);
        pos += len;
    }
    AudioBuffer::from_f64(&out).expect("synthesis is finite")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_and_distinct() {
        let a = plucked_track(1, 2.0);
        assert_eq!(a, plucked_track(1, 2.0));
        assert_ne!(a, plucked_track(2, 2.0));
        assert_eq!(a.len(), 88_200);
    }

    #[test]
    fn has_rests_and_moderate_crest() {
        for seed in 0..10 {
            let t = plucked_track(seed, 10.0);
            let silent = t.samples().iter().filter(|&&s| s == 0.0).count();
            assert!(silent > t.len() / 50, "seed {seed}: only {silent} silent samples");
            let crest = t.peak() / t.rms();
            assert!(crest < 6.0, "seed {seed}: crest {crest}");
        }
    }
}
