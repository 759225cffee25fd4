//! Hand-made detectors, one scalar feature per effect type, each compared
//! against a threshold fitted for per-type F1 on labeled examples.
//!
//! * `saturation` (distortion): RMS over peak, the inverse crest factor.
//!   Waveshaping flattens peaks and raises it.
//! * `tail_floor_db` (reverb): quietest 5% of frames relative to the median
//!   frame, in dB. Rests stay silent in a dry take and fill up with a tail.
//! * `comb_peak` (chorus): median cepstral peak over 5 to 9 ms quefrency,
//!   where the modulated delay line puts its comb.
//!
//! Accuracy is modest by design; the dry estimate is the input unchanged.

use std::collections::BTreeSet;
use std::path::Path;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{DirectPrediction, LastPrediction, Predictor};
use crate::dataset::{Manifest, Split};
use crate::error::{Error, Result};
use crate::search::SearchMode;
use crate::types::{AudioBuffer, EffectType};

const FRAME: usize = 1024;
const HOP: usize = 512;
const TAIL_PERCENTILE: f64 = 0.05;
const FLOOR_DB: f64 = -120.0;
const COMB_LO: usize = 220;
const COMB_HI: usize = 400;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Features {
    pub saturation: f64,
    pub tail_floor_db: f64,
    pub comb_peak: f64,
}

impl Features {
    pub fn get(&self, kind: EffectType) -> f64 {
        match kind {
            EffectType::Distortion => self.saturation,
            EffectType::Reverb => self.tail_floor_db,
            EffectType::Chorus => self.comb_peak,
        }
    }
}

/// Detection thresholds keyed by feature name; a type is detected when its
/// feature exceeds the threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub saturation: f64,
    pub tail_floor_db: f64,
    pub comb_peak: f64,
}

impl Thresholds {
    pub fn get(&self, kind: EffectType) -> f64 {
        match kind {
            EffectType::Distortion => self.saturation,
            EffectType::Reverb => self.tail_floor_db,
            EffectType::Chorus => self.comb_peak,
        }
    }

    fn set(&mut self, kind: EffectType, v: f64) {
        match kind {
            EffectType::Distortion => self.saturation = v,
            EffectType::Reverb => self.tail_floor_db = v,
            EffectType::Chorus => self.comb_peak = v,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

fn frame_rms(x: &[f32]) -> Vec<f64> {
    if x.len() < FRAME {
        return vec![(x.iter().map(|&s| s as f64 * s as f64).sum::<f64>() / x.len().max(1) as f64).sqrt()];
    }
    (0..=(x.len() - FRAME) / HOP)
        .map(|i| {
            let f = &x[i * HOP..i * HOP + FRAME];
            (f.iter().map(|&s| s as f64 * s as f64).sum::<f64>() / FRAME as f64).sqrt()
        })
        .collect()
}

fn quantile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

fn comb_peak(x: &[f32], levels: &[f64], median: f64) -> f64 {
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(FRAME);
    let inv = planner.plan_fft_inverse(FRAME);
    let window: Vec<f64> = (0..FRAME)
        .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / FRAME as f64).cos())
        .collect();
    let mut peaks = Vec::new();
    let mut buf = vec![Complex::new(0.0, 0.0); FRAME];
    for (i, &level) in levels.iter().enumerate() {
        if level < 0.3 * median || x.len() < FRAME {
            continue;
        }
        for (n, b) in buf.iter_mut().enumerate() {
            *b = Complex::new(x[i * HOP + n] as f64 * window[n], 0.0);
        }
        fwd.process(&mut buf);
        for b in buf.iter_mut() {
            *b = Complex::new((b.norm() + 1e-9).ln(), 0.0);
        }
        inv.process(&mut buf);
        let peak = buf[COMB_LO..=COMB_HI]
            .iter()
            .map(|c| c.re.abs() / FRAME as f64)
            .fold(0.0, f64::max);
        peaks.push(peak);
    }
    if peaks.is_empty() {
        return 0.0;
    }
    peaks.sort_by(f64::total_cmp);
    quantile(&peaks, 0.5)
}

pub fn features(signal: &AudioBuffer) -> Features {
    let x = signal.samples();
    let peak = signal.peak();
    let saturation = if peak > 0.0 { signal.rms() / peak } else { 0.0 };

    let levels = frame_rms(x);
    let mut sorted = levels.clone();
    sorted.sort_by(f64::total_cmp);
    let median = quantile(&sorted, 0.5);
    let tail_floor_db = if median > 0.0 {
        (20.0 * (quantile(&sorted, TAIL_PERCENTILE) / median).log10()).max(FLOOR_DB)
    } else {
        FLOOR_DB
    };

    Features {
        saturation,
        tail_floor_db,
        comb_peak: comb_peak(x, &levels, median),
    }
}

fn f1(tp: usize, fp: usize, fn_: usize) -> f64 {
    if tp == 0 {
        0.0
    } else {
        2.0 * tp as f64 / (2 * tp + fp + fn_) as f64
    }
}

/// The midpoint cut that maximizes F1 of `value > threshold`; among ties the
/// highest cut wins.
fn fit_threshold(points: &[(f64, bool)]) -> f64 {
    let mut values: Vec<f64> = points.iter().map(|p| p.0).collect();
    values.sort_by(f64::total_cmp);
    values.dedup();
    let mut cuts = vec![values[0] - 1.0];
    cuts.extend(values.windows(2).map(|w| 0.5 * (w[0] + w[1])));
    cuts.push(values[values.len() - 1] + 1.0);
    let mut best = (f64::NEG_INFINITY, cuts[0]);
    for cut in cuts {
        let (mut tp, mut fp, mut fn_) = (0, 0, 0);
        for &(v, label) in points {
            match (v > cut, label) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                _ => {}
            }
        }
        let score = f1(tp, fp, fn_);
        if score >= best.0 {
            best = (score, cut);
        }
    }
    best.1
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeuristicPredictor {
    thresholds: Thresholds,
}

impl HeuristicPredictor {
    pub fn new(thresholds: Thresholds) -> Self {
        Self { thresholds }
    }

    /// Fits one threshold per type on labeled signals.
    pub fn calibrate(labeled: &[(AudioBuffer, BTreeSet<EffectType>)]) -> Result<Self> {
        use rayon::prelude::*;
        let feats: Vec<(Features, BTreeSet<EffectType>)> = labeled.par_iter().map(|(x, t)| (features(x), t.clone())).collect();
        Self::calibrate_features(&feats)
    }

    pub fn calibrate_features(labeled: &[(Features, BTreeSet<EffectType>)]) -> Result<Self> {
        if labeled.is_empty() {
            return Err(Error::Calibration("calibration split is empty".into()));
        }
        let mut thresholds = Thresholds {
            saturation: 0.0,
            tail_floor_db: 0.0,
            comb_peak: 0.0,
        };
        for kind in EffectType::ALL {
            let points: Vec<(f64, bool)> = labeled.iter().map(|(f, t)| (f.get(kind), t.contains(&kind))).collect();
            thresholds.set(kind, fit_threshold(&points));
        }
        Ok(Self { thresholds })
    }

    /// Calibrates on the wet signals of one manifest split.
    pub fn calibrate_on(manifest: &Manifest, split: Split) -> Result<Self> {
        let entries: Vec<_> = manifest.in_split(split).collect();
        let feats: Vec<(Features, BTreeSet<EffectType>)> = {
            use rayon::prelude::*;
            entries
                .par_iter()
                .map(|e| Ok((features(&manifest.load_audio(&e.wet_path)?), e.chain.types().into_iter().collect())))
                .collect::<Result<_>>()?
        };
        Self::calibrate_features(&feats)
    }

    pub fn thresholds(&self) -> &Thresholds {
        &self.thresholds
    }

    pub fn detect(&self, f: &Features) -> BTreeSet<EffectType> {
        EffectType::ALL
            .into_iter()
            .filter(|&k| f.get(k) > self.thresholds.get(k))
            .collect()
    }
}

impl Predictor for HeuristicPredictor {
    fn predict_direct(&self, wet: &AudioBuffer) -> Result<DirectPrediction> {
        Ok(DirectPrediction {
            types: self.detect(&features(wet)),
            dry: wet.clone(),
        })
    }

    fn predict_last(&self, _signal: &AudioBuffer) -> Result<LastPrediction> {
        Err(Error::Predictor("the heuristic predictor only supports direct mode".into()))
    }

    fn supports(&self, mode: SearchMode) -> bool {
        mode == SearchMode::DryTypeDirect
    }
}
