//! Shared domain types: audio buffers, effect parameters, chains and budgets.
//!
//! Effect parameters live in a normalized `[0, 1]` space. The parameter
//! registry ([`EffectType::param_specs`]) is the only place physical ranges
//! are written down; effects, search and dataset generation all go through it.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const SAMPLE_RATE: u32 = 44_100;

/// Level every signal is brought to before and after each effect.
pub const TARGET_RMS: f64 = 0.1;

/// Below this RMS a buffer is treated as silence.
pub const SILENCE_RMS: f64 = 1e-12;

/// Mono audio at [`SAMPLE_RATE`]. Samples are always finite.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct AudioBuffer {
    samples: Vec<f32>,
}

impl AudioBuffer {
    pub fn new(samples: Vec<f32>) -> Result<Self> {
        if let Some(index) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(Self { samples })
    }

    /// Converts from `f64`, rounding each sample to `f32`.
    pub fn from_f64(samples: &[f64]) -> Result<Self> {
        Self::new(samples.iter().map(|&s| s as f32).collect())
    }

    pub fn silence(len: usize) -> Self {
        Self {
            samples: vec![0.0; len],
        }
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn sample_rate(&self) -> u32 {
        SAMPLE_RATE
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / SAMPLE_RATE as f64
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum()
    }

    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        (self.energy() / self.samples.len() as f64).sqrt()
    }

    pub fn peak(&self) -> f64 {
        self.samples
            .iter()
            .fold(0.0f64, |m, &s| m.max((s as f64).abs()))
    }

    /// Multiplies every sample by `gain`, computed in `f64`.
    pub fn scaled(&self, gain: f64) -> Self {
        Self {
            samples: self
                .samples
                .iter()
                .map(|&s| (s as f64 * gain) as f32)
                .collect(),
        }
    }
}

/// Scales `buf` so that its RMS equals `target_rms`.
pub fn rms_normalize(buf: &AudioBuffer, target_rms: f64) -> Result<AudioBuffer> {
    let rms = buf.rms();
    if rms <= SILENCE_RMS {
        return Err(Error::SilentSignal { rms });
    }
    Ok(buf.scaled(target_rms / rms))
}

/// Clamps every sample to `[-1, 1]`.
pub fn clip(buf: &AudioBuffer) -> AudioBuffer {
    AudioBuffer {
        samples: buf.samples.iter().map(|s| s.clamp(-1.0, 1.0)).collect(),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EffectType {
    Chorus,
    Distortion,
    Reverb,
}

/// A variable parameter of an effect and its physical range.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: &'static str,
    pub lo: f64,
    pub hi: f64,
}

const CHORUS_PARAMS: [ParamSpec; 3] = [
    ParamSpec { name: "depth", lo: 0.1, hi: 0.3 },
    ParamSpec { name: "feedback", lo: 0.0, hi: 0.5 },
    ParamSpec { name: "mix", lo: 0.3, hi: 0.7 },
];

const DISTORTION_PARAMS: [ParamSpec; 1] = [ParamSpec { name: "drive_db", lo: 10.0, hi: 20.0 }];

const REVERB_PARAMS: [ParamSpec; 3] = [
    ParamSpec { name: "room_size", lo: 0.1, hi: 0.7 },
    ParamSpec { name: "damping", lo: 0.1, hi: 0.9 },
    ParamSpec { name: "wet_level", lo: 0.1, hi: 0.4 },
];

impl EffectType {
    pub const ALL: [EffectType; 3] = [EffectType::Chorus, EffectType::Distortion, EffectType::Reverb];

    /// Variable parameters and their physical ranges, in vector order.
    pub fn param_specs(self) -> &'static [ParamSpec] {
        match self {
            EffectType::Chorus => &CHORUS_PARAMS,
            EffectType::Distortion => &DISTORTION_PARAMS,
            EffectType::Reverb => &REVERB_PARAMS,
        }
    }

    pub fn dim(self) -> usize {
        self.param_specs().len()
    }

    /// One-letter code used in entry ids and compact chain notation.
    pub fn code(self) -> char {
        match self {
            EffectType::Chorus => 'C',
            EffectType::Distortion => 'D',
            EffectType::Reverb => 'R',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c.to_ascii_uppercase() {
            'C' => Some(EffectType::Chorus),
            'D' => Some(EffectType::Distortion),
            'R' => Some(EffectType::Reverb),
            _ => None,
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for EffectType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let name = match self {
            EffectType::Chorus => "Chorus",
            EffectType::Distortion => "Distortion",
            EffectType::Reverb => "Reverb",
        };
        f.write_str(name)
    }
}

impl FromStr for EffectType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "chorus" | "c" => Ok(EffectType::Chorus),
            "distortion" | "d" => Ok(EffectType::Distortion),
            "reverb" | "r" => Ok(EffectType::Reverb),
            other => Err(Error::Argument(format!("unknown effect type `{other}`"))),
        }
    }
}

/// Normalized parameter vector of one effect. Every value is in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EffectParams {
    kind: EffectType,
    values: Vec<f64>,
}

impl EffectParams {
    pub fn new(kind: EffectType, values: Vec<f64>) -> Result<Self> {
        if values.len() != kind.dim() {
            return Err(Error::Dimension {
                expected: kind.dim(),
                got: values.len(),
            });
        }
        for (&v, spec) in values.iter().zip(kind.param_specs()) {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Range {
                    name: spec.name,
                    value: v,
                    lo: 0.0,
                    hi: 1.0,
                });
            }
        }
        Ok(Self { kind, values })
    }

    /// Midpoint of every range.
    pub fn midpoint(kind: EffectType) -> Self {
        Self {
            kind,
            values: vec![0.5; kind.dim()],
        }
    }

    pub fn kind(&self) -> EffectType {
        self.kind
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn raw(&self) -> Vec<f64> {
        denormalize_params(self)
    }
}

/// Maps physical parameter values onto `[0, 1]`.
pub fn normalize_params(kind: EffectType, raw: &[f64]) -> Result<EffectParams> {
    let specs = kind.param_specs();
    if raw.len() != specs.len() {
        return Err(Error::Dimension {
            expected: specs.len(),
            got: raw.len(),
        });
    }
    let mut values = Vec::with_capacity(raw.len());
    for (&v, spec) in raw.iter().zip(specs) {
        if !(spec.lo..=spec.hi).contains(&v) {
            return Err(Error::Range {
                name: spec.name,
                value: v,
                lo: spec.lo,
                hi: spec.hi,
            });
        }
        values.push((v - spec.lo) / (spec.hi - spec.lo));
    }
    Ok(EffectParams { kind, values })
}

pub fn denormalize_params(params: &EffectParams) -> Vec<f64> {
    params
        .values
        .iter()
        .zip(params.kind.param_specs())
        .map(|(&v, spec)| spec.lo + v * (spec.hi - spec.lo))
        .collect()
}

pub const MAX_CHAIN_LEN: usize = 3;

/// An ordered effect chain. Holds at most [`MAX_CHAIN_LEN`] stages.
///
/// Ground-truth chains built with [`ChainConfig::new`] never repeat a type.
/// Estimated chains come from untrusted predictors and may repeat one; they are
/// built with [`ChainConfig::estimated`].
#[derive(Clone, Debug, PartialEq, Default)]
pub struct ChainConfig {
    stages: Vec<EffectParams>,
}

impl ChainConfig {
    pub fn new(stages: Vec<EffectParams>) -> Result<Self> {
        let chain = Self::estimated(stages)?;
        if !chain.has_distinct_types() {
            return Err(Error::Chain(format!(
                "types must be pairwise distinct, got {}",
                chain.code()
            )));
        }
        Ok(chain)
    }

    pub fn estimated(stages: Vec<EffectParams>) -> Result<Self> {
        if stages.len() > MAX_CHAIN_LEN {
            return Err(Error::Chain(format!(
                "length {} exceeds {MAX_CHAIN_LEN}",
                stages.len()
            )));
        }
        Ok(Self { stages })
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn stages(&self) -> &[EffectParams] {
        &self.stages
    }

    pub fn len(&self) -> usize {
        self.stages.len()
    }

    pub fn is_empty(&self) -> bool {
        self.stages.is_empty()
    }

    pub fn types(&self) -> Vec<EffectType> {
        self.stages.iter().map(EffectParams::kind).collect()
    }

    pub fn has_distinct_types(&self) -> bool {
        let types = self.types();
        types
            .iter()
            .enumerate()
            .all(|(i, t)| !types[..i].contains(t))
    }

    /// The first `n` stages.
    pub fn prefix(&self, n: usize) -> ChainConfig {
        ChainConfig {
            stages: self.stages[..n.min(self.stages.len())].to_vec(),
        }
    }

    /// Compact notation such as `DR` for Distortion then Reverb; `-` when empty.
    pub fn code(&self) -> String {
        if self.stages.is_empty() {
            return "-".to_string();
        }
        self.stages.iter().map(|s| s.kind.code()).collect()
    }

    /// Total number of normalized parameters.
    pub fn dim(&self) -> usize {
        self.stages.iter().map(|s| s.values.len()).sum()
    }
}

#[derive(Serialize, Deserialize)]
struct StageWire {
    #[serde(rename = "type")]
    kind: EffectType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params_norm: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    params_raw: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct ChainWire {
    stages: Vec<StageWire>,
}

impl Serialize for ChainConfig {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        ChainWire {
            stages: self
                .stages
                .iter()
                .map(|p| StageWire {
                    kind: p.kind,
                    params_norm: Some(p.values.clone()),
                    params_raw: Some(p.raw()),
                })
                .collect(),
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for ChainConfig {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let wire = ChainWire::deserialize(deserializer)?;
        let mut stages = Vec::with_capacity(wire.stages.len());
        for stage in wire.stages {
            // params_norm is authoritative; params_raw alone is accepted for hand-written chains
            let params = match (stage.params_norm, stage.params_raw) {
                (Some(norm), _) => EffectParams::new(stage.kind, norm),
                (None, Some(raw)) => normalize_params(stage.kind, &raw),
                (None, None) => {
                    return Err(D::Error::custom(format!(
                        "stage {} has neither params_norm nor params_raw",
                        stage.kind
                    )))
                }
            }
            .map_err(D::Error::custom)?;
            stages.push(params);
        }
        ChainConfig::estimated(stages).map_err(D::Error::custom)
    }
}

/// Trial budget `floor(m0 * d^r)` for a search of dimension `d`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SearchBudget {
    pub m0: u32,
    pub d: usize,
    pub r: f64,
}

impl SearchBudget {
    pub const DEFAULT_EXPONENT: f64 = 1.5;

    pub fn new(m0: u32, d: usize, r: f64) -> Result<Self> {
        if m0 == 0 || d == 0 {
            return Err(Error::Argument(format!(
                "budget needs m0 >= 1 and d >= 1, got m0={m0}, d={d}"
            )));
        }
        if !r.is_finite() {
            return Err(Error::Argument(format!("budget exponent {r} is not finite")));
        }
        Ok(Self { m0, d, r })
    }

    /// A budget of exactly `trials` evaluations (`m0 = trials`, `d = 1`).
    pub fn fixed(trials: u32) -> Result<Self> {
        Self::new(trials, 1, Self::DEFAULT_EXPONENT)
    }

    pub fn trials(&self) -> usize {
        ((self.m0 as f64 * (self.d as f64).powf(self.r)).floor() as usize).max(1)
    }
}

/// One objective evaluation recorded by an optimizer.
#[derive(Clone, Debug, PartialEq)]
pub struct TrialRecord {
    pub index: usize,
    /// Which search produced the trial, e.g. `stage1:DR`.
    pub stage: String,
    pub candidate: Vec<f64>,
    pub score: f64,
}

/// Output of the estimation pipeline.
#[derive(Clone, Debug)]
pub struct EstimationResult {
    pub chain: ChainConfig,
    pub dry_estimate: AudioBuffer,
    /// SI-SDR of the reconstruction against the target, in dB.
    pub score: f64,
    pub trace: Vec<TrialRecord>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx_eq::assert_close;

    mod approx_eq {
        macro_rules! assert_close {
            ($a:expr, $b:expr, $tol:expr) => {{
                let (a, b): (f64, f64) = ($a, $b);
                assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
            }};
        }
        pub(crate) use assert_close;
    }

    #[test]
    fn normalize_examples() {
        let p = normalize_params(EffectType::Distortion, &[10.0]).unwrap();
        assert_eq!(p.values(), &[0.0]);
        let p = normalize_params(EffectType::Distortion, &[15.0]).unwrap();
        assert_eq!(p.values(), &[0.5]);
        let p = normalize_params(EffectType::Chorus, &[0.2, 0.25, 0.5]).unwrap();
        for &v in p.values() {
            assert_close!(v, 0.5, 1e-12);
        }
    }

    #[test]
    fn denormalize_examples() {
        let lo = EffectParams::new(EffectType::Reverb, vec![0.0; 3]).unwrap();
        assert_eq!(lo.raw(), vec![0.1, 0.1, 0.1]);
        let hi = EffectParams::new(EffectType::Reverb, vec![1.0; 3]).unwrap();
        let raw = hi.raw();
        for (a, b) in raw.iter().zip([0.7, 0.9, 0.4]) {
            assert_close!(*a, b, 1e-12);
        }
        let mid = EffectParams::new(EffectType::Distortion, vec![0.5]).unwrap();
        assert_eq!(mid.raw(), vec![15.0]);
    }

    #[test]
    fn normalize_errors() {
        match normalize_params(EffectType::Reverb, &[0.05, 0.5, 0.2]) {
            Err(Error::Range { name, .. }) => assert_eq!(name, "room_size"),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            normalize_params(EffectType::Chorus, &[0.2]),
            Err(Error::Dimension { expected: 3, got: 1 })
        ));
        assert!(EffectParams::new(EffectType::Distortion, vec![1.2]).is_err());
    }

    #[test]
    fn rms_examples() {
        let c = AudioBuffer::new(vec![0.5; 1000]).unwrap();
        let out = rms_normalize(&c, 0.1).unwrap();
        assert!(out.samples().iter().all(|&s| (s - 0.1).abs() < 1e-7));

        let sine: Vec<f64> = (0..44_100)
            .map(|n| (2.0 * std::f64::consts::PI * 441.0 * n as f64 / 44_100.0).sin())
            .collect();
        let sine = AudioBuffer::from_f64(&sine).unwrap();
        let out = rms_normalize(&sine, 0.1).unwrap();
        assert_close!(out.peak(), 0.1 * 2f64.sqrt(), 1e-6);
        assert_close!(out.rms(), 0.1, 1e-6);

        let again = rms_normalize(&out, 0.1).unwrap();
        for (a, b) in again.samples().iter().zip(out.samples()) {
            assert_close!(*a as f64, *b as f64, 1e-9);
        }
    }

    #[test]
    fn rms_rejects_silence() {
        assert!(matches!(
            rms_normalize(&AudioBuffer::silence(10), 0.1),
            Err(Error::SilentSignal { .. })
        ));
    }

    #[test]
    fn clip_examples() {
        let b = |v: Vec<f32>| AudioBuffer::new(v).unwrap();
        assert_eq!(clip(&b(vec![0.5, -0.5])), b(vec![0.5, -0.5]));
        assert_eq!(clip(&b(vec![1.7])), b(vec![1.0]));
        assert_eq!(clip(&b(vec![-2.0, 0.0, 2.0])), b(vec![-1.0, 0.0, 1.0]));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(matches!(
            AudioBuffer::new(vec![0.0, f32::NAN]),
            Err(Error::NonFinite { index: 1 })
        ));
    }

    #[test]
    fn chain_distinctness() {
        let d = EffectParams::midpoint(EffectType::Distortion);
        assert!(ChainConfig::new(vec![d.clone(), d.clone()]).is_err());
        assert!(ChainConfig::estimated(vec![d.clone(), d.clone()]).is_ok());
        assert!(ChainConfig::estimated(vec![d.clone(); 4]).is_err());
    }

    #[test]
    fn chain_json_schema() {
        let chain = ChainConfig::new(vec![normalize_params(EffectType::Distortion, &[15.0]).unwrap()]).unwrap();
        let json = serde_json::to_string(&chain).unwrap();
        assert_eq!(
            json,
            r#"{"stages":[{"type":"Distortion","params_norm":[0.5],"params_raw":[15.0]}]}"#
        );
        let back: ChainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, chain);

        let raw_only: ChainConfig =
            serde_json::from_str(r#"{"stages":[{"type":"Reverb","params_raw":[0.1,0.9,0.4]}]}"#).unwrap();
        assert_close!(raw_only.stages()[0].values()[1], 1.0, 1e-12);
    }

    #[test]
    fn budget_floor() {
        assert_eq!(SearchBudget::new(20, 1, 1.5).unwrap().trials(), 20);
        assert_eq!(SearchBudget::new(5, 3, 1.5).unwrap().trials(), 25);
        assert_eq!(SearchBudget::new(20, 7, 1.5).unwrap().trials(), 370);
        assert!(SearchBudget::new(0, 3, 1.5).is_err());
        assert!(SearchBudget::new(5, 0, 1.5).is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn raw_strategy() -> impl Strategy<Value = (EffectType, Vec<f64>)> {
            prop_oneof![Just(EffectType::Chorus), Just(EffectType::Distortion), Just(EffectType::Reverb)]
                .prop_flat_map(|kind| {
                    let ranges: Vec<_> = kind.param_specs().iter().map(|s| s.lo..=s.hi).collect();
                    (Just(kind), ranges)
                })
        }

        proptest! {
            #[test]
            fn affine_round_trip((kind, raw) in raw_strategy()) {
                let back = normalize_params(kind, &raw).unwrap().raw();
                for (a, b) in back.iter().zip(&raw) {
                    prop_assert!((a - b).abs() <= 1e-9);
                }
            }

            #[test]
            fn clip_idempotent(v in proptest::collection::vec(-3.0f32..3.0, 0..64)) {
                let b = AudioBuffer::new(v).unwrap();
                let once = clip(&b);
                prop_assert!(once.samples().iter().all(|s| (-1.0..=1.0).contains(s)));
                prop_assert_eq!(clip(&once), once);
            }

            #[test]
            fn rms_normalize_idempotent(v in proptest::collection::vec(-1.0f32..1.0, 16..256)) {
                let b = AudioBuffer::new(v).unwrap();
                prop_assume!(b.rms() > 1e-3);
                let once = rms_normalize(&b, 0.1).unwrap();
                prop_assert!((once.rms() - 0.1).abs() <= 1e-6);
                let twice = rms_normalize(&once, 0.1).unwrap();
                for (a, b) in once.samples().iter().zip(twice.samples()) {
                    prop_assert!((a - b).abs() as f64 <= 1e-7);
                }
            }
        }
    }
}
