use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use super::{DirectPrediction, LastPrediction, Predictor};
use crate::dataset::{Manifest, ManifestEntry};
use crate::error::{Error, Result};
use crate::metrics::si_sdr;
use crate::optim::derive_seed;
use crate::search::SearchMode;
use crate::types::{AudioBuffer, ChainConfig, EffectParams, EffectType};

/// Ground truth: the chain and every prefix render `[x_0, .., x_N]`.
#[derive(Clone, Debug)]
pub struct OraclePredictor {
    chain: ChainConfig,
    signals: Vec<AudioBuffer>,
}

impl OraclePredictor {
    pub fn new(chain: ChainConfig, signals: Vec<AudioBuffer>) -> Result<Self> {
        if signals.len() != chain.len() + 1 {
            return Err(Error::Manifest(format!(
                "{} signals for a chain of length {}",
                signals.len(),
                chain.len()
            )));
        }
        Ok(Self { chain, signals })
    }

    pub fn from_entry(manifest: &Manifest, entry: &ManifestEntry) -> Result<Self> {
        Self::new(entry.chain.clone(), manifest.signals(entry)?)
    }

    pub fn chain(&self) -> &ChainConfig {
        &self.chain
    }

    pub fn dry(&self) -> &AudioBuffer {
        &self.signals[0]
    }

    /// Which stored signal the input is: exact match first, else the one
    /// with the highest SI-SDR.
    fn locate(&self, signal: &AudioBuffer) -> Result<usize> {
        if let Some(k) = self.signals.iter().rposition(|s| s == signal) {
            return Ok(k);
        }
        let mut best = (f64::NEG_INFINITY, 0);
        for (k, s) in self.signals.iter().enumerate() {
            let score = si_sdr(signal, s)?;
            if score > best.0 {
                best = (score, k);
            }
        }
        Ok(best.1)
    }
}

impl Predictor for OraclePredictor {
    fn predict_direct(&self, _wet: &AudioBuffer) -> Result<DirectPrediction> {
        Ok(DirectPrediction {
            types: self.chain.types().into_iter().collect(),
            dry: self.signals[0].clone(),
        })
    }

    fn predict_last(&self, signal: &AudioBuffer) -> Result<LastPrediction> {
        let k = self.locate(signal)?;
        if k == 0 {
            return Ok(LastPrediction {
                class: None,
                params: None,
                bypass: self.signals[0].clone(),
            });
        }
        let stage = &self.chain.stages()[k - 1];
        Ok(LastPrediction {
            class: Some(stage.kind()),
            params: Some(stage.clone()),
            bypass: self.signals[k - 1].clone(),
        })
    }

    fn supports(&self, _mode: SearchMode) -> bool {
        true
    }
}

/// Error injected by [`NoisyOraclePredictor`]. `dry_snr_db = +inf` disables
/// audio noise.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseKnobs {
    pub type_flip_prob: f64,
    pub dry_snr_db: f64,
    pub param_noise_std: f64,
}

impl Default for NoiseKnobs {
    fn default() -> Self {
        Self {
            type_flip_prob: 0.0,
            dry_snr_db: f64::INFINITY,
            param_noise_std: 0.0,
        }
    }
}

impl NoiseKnobs {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.type_flip_prob) {
            return Err(Error::Argument(format!("type flip probability {} not in [0, 1]", self.type_flip_prob)));
        }
        if self.dry_snr_db.is_nan() || self.dry_snr_db == f64::NEG_INFINITY {
            return Err(Error::Argument(format!("invalid SNR {}", self.dry_snr_db)));
        }
        if !(self.param_noise_std >= 0.0 && self.param_noise_std.is_finite()) {
            return Err(Error::Argument(format!("invalid parameter noise std {}", self.param_noise_std)));
        }
        Ok(())
    }
}

/// Adds white Gaussian noise whose energy is exactly `energy / 10^(snr/10)`.
pub fn add_noise_at_snr(signal: &AudioBuffer, snr_db: f64, rng: &mut ChaCha8Rng) -> Result<AudioBuffer> {
    if snr_db == f64::INFINITY {
        return Ok(signal.clone());
    }
    let noise: Vec<f64> = (0..signal.len()).map(|_| StandardNormal.sample(rng)).collect();
    let noise_energy: f64 = noise.iter().map(|n| n * n).sum();
    let target = signal.energy() / 10f64.powf(snr_db / 10.0);
    let gain = if noise_energy > 0.0 { (target / noise_energy).sqrt() } else { 0.0 };
    let mixed: Vec<f64> = signal
        .samples()
        .iter()
        .zip(&noise)
        .map(|(&s, n)| s as f64 + gain * n)
        .collect();
    AudioBuffer::from_f64(&mixed)
}

/// The oracle with seeded type flips, additive noise on returned audio and
/// Gaussian jitter on returned parameters.
#[derive(Clone, Debug)]
pub struct NoisyOraclePredictor {
    oracle: OraclePredictor,
    knobs: NoiseKnobs,
    seed: u64,
}

const DIRECT_TAG: u64 = 0x4449_5245_4354;

impl NoisyOraclePredictor {
    pub fn new(oracle: OraclePredictor, knobs: NoiseKnobs, seed: u64) -> Result<Self> {
        knobs.validate()?;
        Ok(Self { oracle, knobs, seed })
    }

    fn flip(&self, kind: EffectType, rng: &mut ChaCha8Rng) -> EffectType {
        if rng.random_bool(self.knobs.type_flip_prob) {
            let others: Vec<EffectType> = EffectType::ALL.into_iter().filter(|&t| t != kind).collect();
            others[rng.random_range(0..others.len())]
        } else {
            kind
        }
    }

    fn jitter(&self, params: &EffectParams, rng: &mut ChaCha8Rng) -> Result<EffectParams> {
        if self.knobs.param_noise_std == 0.0 {
            return Ok(params.clone());
        }
        let normal = Normal::new(0.0, self.knobs.param_noise_std).expect("std validated");
        let values = params
            .values()
            .iter()
            .map(|v| (v + normal.sample(rng)).clamp(0.0, 1.0))
            .collect();
        EffectParams::new(params.kind(), values)
    }
}

impl Predictor for NoisyOraclePredictor {
    fn predict_direct(&self, wet: &AudioBuffer) -> Result<DirectPrediction> {
        let truth = self.oracle.predict_direct(wet)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, DIRECT_TAG));
        // flips may collide; a set keeps them distinct
        let types: BTreeSet<EffectType> = self.oracle.chain.types().into_iter().map(|t| self.flip(t, &mut rng)).collect();
        let dry = add_noise_at_snr(&truth.dry, self.knobs.dry_snr_db, &mut rng)?;
        Ok(DirectPrediction { types, dry })
    }

    fn predict_last(&self, signal: &AudioBuffer) -> Result<LastPrediction> {
        let k = self.oracle.locate(signal)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, k as u64));
        let truth = self.oracle.predict_last(&self.oracle.signals[k])?;
        let bypass = add_noise_at_snr(&truth.bypass, self.knobs.dry_snr_db, &mut rng)?;
        let Some(kind) = truth.class else {
            return Ok(LastPrediction {
                class: None,
                params: None,
                bypass,
            });
        };
        let flipped = self.flip(kind, &mut rng);
        let base = if flipped == kind {
            truth.params.expect("oracle returns params")
        } else {
            EffectParams::midpoint(flipped)
        };
        Ok(LastPrediction {
            class: Some(flipped),
            params: Some(self.jitter(&base, &mut rng)?),
            bypass,
        })
    }

    fn supports(&self, _mode: SearchMode) -> bool {
        true
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::effects::apply_chain;
    use crate::search::predict_iteratively;
    use crate::types::{normalize_params, rms_normalize, TARGET_RMS};

    fn dry(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f32> = (0..len).map(|i| (i as f32 * 0.03).sin() + rng.random_range(-0.3f32..0.3)).collect();
        rms_normalize(&AudioBuffer::new(x).unwrap(), TARGET_RMS).unwrap()
    }

    fn oracle_for(types: &[EffectType]) -> OraclePredictor {
        let chain = ChainConfig::new(types.iter().map(|&t| EffectParams::midpoint(t)).collect()).unwrap();
        let x0 = dry(4000, 1);
        let signals = (0..=chain.len()).map(|k| apply_chain(&x0, &chain.prefix(k)).unwrap()).collect();
        OraclePredictor::new(chain, signals).unwrap()
    }

    #[test]
    fn last_walks_back_to_dry() {
        use EffectType::*;
        let o = oracle_for(&[Chorus, Distortion]);
        let wet = o.signals[2].clone();
        let step = o.predict_last(&wet).unwrap();
        assert_eq!(step.class, Some(Distortion));
        assert_eq!(step.params, Some(EffectParams::midpoint(Distortion)));
        assert_eq!(step.bypass, o.signals[1]);
        let it = predict_iteratively(&wet, &o, true).unwrap();
        assert_eq!(it.types, vec![Chorus, Distortion]);
        assert_eq!(&it.dry, o.dry());
    }

    #[test]
    fn empty_chain_gives_none() {
        let o = oracle_for(&[]);
        let step = o.predict_last(o.dry()).unwrap();
        assert_eq!((step.class, step.params), (None, None));
        assert_eq!(&step.bypass, o.dry());
    }

    #[test]
    fn direct_gives_set_and_dry() {
        use EffectType::*;
        let o = oracle_for(&[Reverb, Distortion, Chorus]);
        let p = o.predict_direct(&o.signals[3]).unwrap();
        assert_eq!(p.types, BTreeSet::from([Chorus, Distortion, Reverb]));
        assert_eq!(&p.dry, o.dry());
    }

    #[test]
    fn missing_intermediates_rejected() {
        let chain = ChainConfig::new(vec![normalize_params(EffectType::Distortion, &[12.0]).unwrap()]).unwrap();
        assert!(matches!(OraclePredictor::new(chain, vec![dry(10, 0)]), Err(Error::Manifest(_))));
    }

    #[test]
    fn zero_noise_equals_oracle() {
        use EffectType::*;
        let o = oracle_for(&[Distortion, Reverb, Chorus]);
        let n = NoisyOraclePredictor::new(o.clone(), NoiseKnobs::default(), 5).unwrap();
        for s in &o.signals {
            assert_eq!(n.predict_last(s).unwrap(), o.predict_last(s).unwrap());
            assert_eq!(n.predict_direct(s).unwrap(), o.predict_direct(s).unwrap());
        }
    }

    #[test]
    fn snr_is_calibrated() {
        let o = oracle_for(&[EffectType::Reverb]);
        let knobs = NoiseKnobs {
            dry_snr_db: 20.0,
            ..NoiseKnobs::default()
        };
        let n = NoisyOraclePredictor::new(o.clone(), knobs, 1).unwrap();
        let p = n.predict_direct(&o.signals[1]).unwrap();
        assert!((si_sdr(&p.dry, o.dry()).unwrap() - 20.0).abs() < 0.2);
    }

    #[test]
    fn forced_flip_always_changes_type() {
        let o = oracle_for(&[EffectType::Chorus]);
        for seed in 0..20 {
            let knobs = NoiseKnobs {
                type_flip_prob: 1.0,
                ..NoiseKnobs::default()
            };
            let n = NoisyOraclePredictor::new(o.clone(), knobs, seed).unwrap();
            let step = n.predict_last(&o.signals[1]).unwrap();
            assert_ne!(step.class, Some(EffectType::Chorus));
            assert_eq!(step.params.unwrap().kind(), step.class.unwrap());
            assert!(!n.predict_direct(&o.signals[1]).unwrap().types.contains(&EffectType::Chorus));
            // the no-effect class is never flipped
            assert_eq!(n.predict_last(o.dry()).unwrap().class, None);
        }
    }

    #[test]
    fn param_noise_stays_in_box_and_is_seeded() {
        let o = oracle_for(&[EffectType::Reverb, EffectType::Chorus]);
        let knobs = NoiseKnobs {
            param_noise_std: 0.5,
            ..NoiseKnobs::default()
        };
        let a = NoisyOraclePredictor::new(o.clone(), knobs, 3).unwrap();
        let b = NoisyOraclePredictor::new(o.clone(), knobs, 3).unwrap();
        let pa = a.predict_last(&o.signals[2]).unwrap();
        assert_eq!(pa, b.predict_last(&o.signals[2]).unwrap());
        let p = pa.params.unwrap();
        assert!(p.values().iter().all(|v| (0.0..=1.0).contains(v)));
        assert_ne!(p, EffectParams::midpoint(EffectType::Chorus));
    }

    #[test]
    fn knobs_are_validated() {
        let o = oracle_for(&[]);
        let bad = NoiseKnobs {
            type_flip_prob: 1.5,
            ..NoiseKnobs::default()
        };
        assert!(NoisyOraclePredictor::new(o, bad, 0).is_err());
    }
}
