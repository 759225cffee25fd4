//! Signal similarity (SI-SDR, multi-resolution STFT distance) and
//! classification metrics for estimated chains.

use std::collections::BTreeSet;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::types::{AudioBuffer, EffectParams};

/// Returned by [`si_sdr`] when the estimate reproduces the reference exactly.
pub const SI_SDR_CAP_DB: f64 = 300.0;
const RESIDUAL_FLOOR: f64 = 1e-30;

/// Scale-invariant signal-to-distortion ratio of `estimate` against `reference`, in dB.
///
/// Capped at [`SI_SDR_CAP_DB`] for a vanishing residual and floored at its
/// negative when the estimate has no component along the reference.
pub fn si_sdr(estimate: &AudioBuffer, reference: &AudioBuffer) -> Result<f64> {
    si_sdr_samples(estimate.samples(), reference.samples())
}

/// [`si_sdr`] over raw sample slices of either precision.
pub fn si_sdr_samples<S: Copy + Into<f64>>(estimate: &[S], reference: &[S]) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Dimension {
            expected: reference.len(),
            got: estimate.len(),
        });
    }
    let ref_energy: f64 = reference.iter().map(|&r| r.into() * r.into()).sum();
    if ref_energy <= RESIDUAL_FLOOR {
        return Err(Error::SilentSignal {
            rms: (ref_energy / reference.len().max(1) as f64).sqrt(),
        });
    }
    let dot: f64 = estimate.iter().zip(reference).map(|(&e, &r)| e.into() * r.into()).sum();
    let alpha = dot / ref_energy;
    let (mut target, mut residual) = (0.0f64, 0.0f64);
    for (&e, &r) in estimate.iter().zip(reference) {
        let t = alpha * r.into();
        let d = e.into() - t;
        target += t * t;
        residual += d * d;
    }
    if target <= RESIDUAL_FLOOR {
        return Ok(-SI_SDR_CAP_DB);
    }
    if residual < RESIDUAL_FLOOR {
        return Ok(SI_SDR_CAP_DB);
    }
    Ok((10.0 * (target / residual).log10()).clamp(-SI_SDR_CAP_DB, SI_SDR_CAP_DB))
}

/// Resolutions for [`mr_stft`]. Hop is a quarter of the FFT size; windows are Hann.
#[derive(Clone, Debug, PartialEq)]
pub struct StftConfig {
    fft_sizes: Vec<usize>,
}

impl Default for StftConfig {
    fn default() -> Self {
        Self {
            fft_sizes: vec![512, 1024, 2048],
        }
    }
}

impl StftConfig {
    pub fn new(mut fft_sizes: Vec<usize>) -> Result<Self> {
        if fft_sizes.is_empty() || fft_sizes.iter().any(|&n| n < 4 || n % 4 != 0) {
            return Err(Error::Argument(format!(
                "fft sizes must be non-empty multiples of 4, got {fft_sizes:?}"
            )));
        }
        fft_sizes.sort_unstable();
        fft_sizes.dedup();
        Ok(Self { fft_sizes })
    }

    pub fn fft_sizes(&self) -> &[usize] {
        &self.fft_sizes
    }

    pub fn hop(fft_size: usize) -> usize {
        fft_size / 4
    }

    pub fn largest(&self) -> usize {
        *self.fft_sizes.last().expect("non-empty by construction")
    }
}

const LOG_EPS: f64 = 1e-7;

/// Magnitude spectrogram, frames concatenated. Frames start at multiples of the
/// hop and must fit entirely inside the signal.
fn magnitudes(x: &[f32], fft_size: usize, planner: &mut FftPlanner<f64>) -> Vec<f64> {
    let hop = StftConfig::hop(fft_size);
    let fft = planner.plan_fft_forward(fft_size);
    let window: Vec<f64> = (0..fft_size)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / fft_size as f64).cos())
        .collect();
    let bins = fft_size / 2 + 1;
    let frames = (x.len() - fft_size) / hop + 1;
    let mut out = Vec::with_capacity(frames * bins);
    let mut frame = vec![Complex::new(0.0, 0.0); fft_size];
    for f in 0..frames {
        let start = f * hop;
        for (slot, (&s, &w)) in frame.iter_mut().zip(x[start..start + fft_size].iter().zip(&window)) {
            *slot = Complex::new(s as f64 * w, 0.0);
        }
        fft.process(&mut frame);
        out.extend(frame[..bins].iter().map(|c| c.norm()));
    }
    out
}

/// Multi-resolution STFT distance: per resolution, spectral convergence plus
/// mean absolute log-magnitude difference, averaged over resolutions.
pub fn mr_stft(estimate: &AudioBuffer, reference: &AudioBuffer, cfg: &StftConfig) -> Result<f64> {
    if estimate.len() != reference.len() {
        return Err(Error::Dimension {
            expected: reference.len(),
            got: estimate.len(),
        });
    }
    if reference.len() < cfg.largest() {
        return Err(Error::Dimension {
            expected: cfg.largest(),
            got: reference.len(),
        });
    }
    let mut planner = FftPlanner::new();
    let mut total = 0.0;
    for &n in cfg.fft_sizes() {
        let r = magnitudes(reference.samples(), n, &mut planner);
        let e = magnitudes(estimate.samples(), n, &mut planner);
        let ref_norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        if ref_norm == 0.0 {
            return Err(Error::SilentSignal { rms: 0.0 });
        }
        let diff_norm = r.iter().zip(&e).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let log_mean = r
            .iter()
            .zip(&e)
            .map(|(a, b)| ((a + LOG_EPS).ln() - (b + LOG_EPS).ln()).abs())
            .sum::<f64>()
            / r.len() as f64;
        total += diff_norm / ref_norm + log_mean;
    }
    Ok(total / cfg.fft_sizes().len() as f64)
}

/// Unweighted mean of per-class F1 over `classes`, treating each prediction as
/// a label set (multi-label presence). A class with no true positives, false
/// positives or false negatives anywhere scores 0.
pub fn macro_f1_sets<T: Ord>(predicted: &[BTreeSet<T>], truth: &[BTreeSet<T>], classes: &[T]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    if predicted.is_empty() || classes.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut sum = 0.0;
    for class in classes {
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for (p, t) in predicted.iter().zip(truth) {
            match (p.contains(class), t.contains(class)) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let denom = 2 * tp + fp + fn_;
        if denom > 0 {
            sum += 2.0 * tp as f64 / denom as f64;
        }
    }
    Ok(sum / classes.len() as f64)
}

/// Single-label macro F1 (one-vs-rest per class).
pub fn macro_f1_single<T: Ord + Clone>(predicted: &[T], truth: &[T], classes: &[T]) -> Result<f64> {
    let wrap = |xs: &[T]| -> Vec<BTreeSet<T>> { xs.iter().map(|x| BTreeSet::from([x.clone()])).collect() };
    macro_f1_sets(&wrap(predicted), &wrap(truth), classes)
}

/// Edit distance with unit insert, delete and substitute costs.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Fraction of positions where the sequences match exactly.
pub fn exact_match<T: PartialEq>(predicted: &[Vec<T>], truth: &[Vec<T>]) -> Result<f64> {
    if predicted.len() != truth.len() {
        return Err(Error::Dimension {
            expected: truth.len(),
            got: predicted.len(),
        });
    }
    if predicted.is_empty() {
        return Err(Error::EmptyInput);
    }
    let hits = predicted.iter().zip(truth).filter(|(p, t)| p == t).count();
    Ok(hits as f64 / predicted.len() as f64)
}

/// Mean absolute error over normalized parameters of one effect.
pub fn param_mae(predicted: &EffectParams, truth: &EffectParams) -> Result<f64> {
    if predicted.kind() != truth.kind() {
        return Err(Error::TypeMismatch {
            expected: truth.kind(),
            got: predicted.kind(),
        });
    }
    let n = truth.values().len() as f64;
    Ok(predicted
        .values()
        .iter()
        .zip(truth.values())
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / n)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::EffectType::{self, Chorus as C, Distortion as D, Reverb as R};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(len: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..len).map(|_| rng.random_range(-1.0..1.0)).collect()
    }

    fn buf(x: &[f64]) -> AudioBuffer {
        AudioBuffer::from_f64(x).unwrap()
    }

    fn set(xs: &[EffectType]) -> BTreeSet<EffectType> {
        xs.iter().copied().collect()
    }

    #[test]
    fn si_sdr_identity_hits_cap() {
        let x = buf(&random(1000, 1));
        assert_eq!(si_sdr(&x, &x).unwrap(), SI_SDR_CAP_DB);
        assert_eq!(si_sdr(&x.scaled(2.0), &x).unwrap(), si_sdr(&x, &x).unwrap());
    }

    #[test]
    fn si_sdr_orthogonal_noise_at_20db() {
        // Gram-Schmidt the noise against the reference, then scale to 1% energy.
        let x = random(20_000, 2);
        let n = random(20_000, 3);
        let dot: f64 = x.iter().zip(&n).map(|(a, b)| a * b).sum();
        let ex: f64 = x.iter().map(|a| a * a).sum();
        let n: Vec<f64> = n.iter().zip(&x).map(|(b, a)| b - dot / ex * a).collect();
        let en: f64 = n.iter().map(|a| a * a).sum();
        let g = (ex / 100.0 / en).sqrt();
        let est: Vec<f64> = x.iter().zip(&n).map(|(a, b)| a + g * b).collect();
        let v = si_sdr(&buf(&est), &buf(&x)).unwrap();
        assert!((v - 20.0).abs() < 0.1, "{v}");
    }

    #[test]
    fn si_sdr_errors() {
        let x = buf(&random(10, 4));
        assert!(matches!(si_sdr(&x, &buf(&random(11, 5))), Err(Error::Dimension { .. })));
        assert!(matches!(si_sdr(&x, &AudioBuffer::silence(10)), Err(Error::SilentSignal { .. })));
    }

    #[test]
    fn mr_stft_identity_and_mismatch() {
        let cfg = StftConfig::default();
        let x = buf(&random(8192, 6));
        assert!(mr_stft(&x, &x, &cfg).unwrap().abs() < 1e-9);
        assert!(mr_stft(&x.scaled(0.5), &x, &cfg).unwrap() > 0.0);
        let short = buf(&random(1000, 6));
        assert!(matches!(mr_stft(&short, &short, &cfg), Err(Error::Dimension { .. })));
    }

    #[test]
    fn mr_stft_decreases_toward_reference() {
        let cfg = StftConfig::default();
        let x = random(8192, 7);
        let n = random(8192, 8);
        let at = |t: f64| -> f64 {
            let e: Vec<f64> = n.iter().zip(&x).map(|(a, b)| (1.0 - t) * a + t * b).collect();
            mr_stft(&buf(&e), &buf(&x), &cfg).unwrap()
        };
        let (l0, l5, l1) = (at(0.0), at(0.5), at(1.0));
        assert!(l0 > l5 && l5 > l1, "{l0} {l5} {l1}");
    }

    #[test]
    fn macro_f1_examples() {
        let classes = EffectType::ALL;
        let truth = vec![set(&[C]), set(&[D]), set(&[R])];
        assert_eq!(macro_f1_sets(&truth, &truth, &classes).unwrap(), 1.0);

        let pred = vec![set(&[C]), set(&[D]), set(&[D])];
        let v = macro_f1_sets(&pred, &truth, &classes).unwrap();
        assert!((v - 0.5556).abs() < 1e-4, "{v}");

        let truth = vec![set(&[C]), set(&[D, R]), set(&[C, D]), set(&[R])];
        let complement: Vec<_> = truth.iter().map(|t| set(&classes).difference(t).copied().collect()).collect();
        assert_eq!(macro_f1_sets(&complement, &truth, &classes).unwrap(), 0.0);

        let empty: Vec<BTreeSet<EffectType>> = vec![];
        assert!(matches!(macro_f1_sets(&empty, &empty, &classes), Err(Error::EmptyInput)));
    }

    #[test]
    fn macro_f1_single_label_with_none_class() {
        let classes = [None, Some(C), Some(D), Some(R)];
        let truth = [None, Some(C), Some(D), Some(R)];
        let pred = [None, Some(C), Some(D), None];
        // None: tp1 fp1 -> 2/3; C, D: 1; R: 0
        let v = macro_f1_single(&pred, &truth, &classes).unwrap();
        assert!((v - (2.0 / 3.0 + 2.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn levenshtein_examples() {
        assert_eq!(levenshtein(&[C, D, R], &[C, D, R]), 0);
        assert_eq!(levenshtein(&[C, D], &[D, C]), 2);
        assert_eq!(levenshtein(&[C], &[]), 1);
    }

    #[test]
    fn exact_match_examples() {
        let a = vec![vec![C, D], vec![R]];
        assert_eq!(exact_match(&a, &a).unwrap(), 1.0);
        assert_eq!(exact_match(&[vec![D, C], vec![R]], &a).unwrap(), 0.5);
        assert_eq!(exact_match(&[vec![C], vec![R, D]], &a).unwrap(), 0.0);
        let empty: Vec<Vec<EffectType>> = vec![];
        assert!(exact_match(&empty, &empty).is_err());
    }

    #[test]
    fn param_mae_examples() {
        let p = |k, v: &[f64]| EffectParams::new(k, v.to_vec()).unwrap();
        assert_eq!(param_mae(&p(D, &[0.3]), &p(D, &[0.3])).unwrap(), 0.0);
        assert_eq!(param_mae(&p(D, &[0.0]), &p(D, &[1.0])).unwrap(), 1.0);
        let v = param_mae(&p(C, &[0.2, 0.4, 0.6]), &p(C, &[0.4, 0.4, 0.2])).unwrap();
        assert!((v - 0.2).abs() < 1e-9);
        assert!(param_mae(&p(D, &[0.0]), &p(R, &[0.0, 0.0, 0.0])).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn seq() -> impl Strategy<Value = Vec<u8>> {
            proptest::collection::vec(0u8..3, 0..6)
        }

        proptest! {
            #[test]
            fn levenshtein_is_a_metric(a in seq(), b in seq(), c in seq()) {
                prop_assert_eq!(levenshtein(&a, &b), levenshtein(&b, &a));
                prop_assert_eq!(levenshtein(&a, &b) == 0, a == b);
                prop_assert!(levenshtein(&a, &c) <= levenshtein(&a, &b) + levenshtein(&b, &c));
            }

            #[test]
            fn si_sdr_scale_invariant(seed in 0u64..10_000, scale in 0.01f64..100.0) {
                let r = random(512, seed);
                let e: Vec<f64> = random(512, seed + 1).iter().zip(&r).map(|(n, s)| s + 0.3 * n).collect();
                let scaled: Vec<f64> = e.iter().map(|v| v * scale).collect();
                let a = si_sdr_samples(&e, &r).unwrap();
                let b = si_sdr_samples(&scaled, &r).unwrap();
                prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
            }

            #[test]
            fn macro_f1_bounded_and_class_order_free(
                pairs in proptest::collection::vec((0u8..8, 0u8..8), 1..20),
            ) {
                let decode = |m: u8| -> BTreeSet<u8> { (0..3).filter(|b| m & (1 << b) != 0).collect() };
                let pred: Vec<_> = pairs.iter().map(|p| decode(p.0)).collect();
                let truth: Vec<_> = pairs.iter().map(|p| decode(p.1)).collect();
                let a = macro_f1_sets(&pred, &truth, &[0, 1, 2]).unwrap();
                let b = macro_f1_sets(&pred, &truth, &[2, 0, 1]).unwrap();
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!((a - b).abs() < 1e-12);
            }

            #[test]
            fn mr_stft_non_negative(seed in 0u64..1000) {
                let cfg = StftConfig::default();
                let a = buf(&random(4096, seed));
                let b = buf(&random(4096, seed + 7));
                prop_assert!(mr_stft(&a, &b, &cfg).unwrap() >= 0.0);
            }
        }
    }
}
