//! Reconstruction-driven search for effect parameters and order.
//!
//! Given a dry estimate and an ordered list of effect types, the search
//! maximizes the SI-SDR between the re-rendered chain and the observed wet
//! signal. When only the set of types is known, every order is searched
//! on a small budget and the winner is refined on a larger one.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::effects::apply_chain;
use crate::error::{Error, Result};
use crate::metrics::{si_sdr, SI_SDR_CAP_DB};
use crate::optim::{cmaes_maximize, derive_seed, tpe_maximize, OptimizerRun};
use crate::predictor::Predictor;
use crate::types::{
    rms_normalize, AudioBuffer, ChainConfig, EffectParams, EffectType, EstimationResult, SearchBudget, TrialRecord,
    MAX_CHAIN_LEN, TARGET_RMS,
};

/// Budget multiplier for the per-order searches over an unordered type set.
pub const PERMUTATION_M0: u32 = 5;
/// Budget multiplier for refinement and for searches over a known order.
pub const REFINE_M0: u32 = 20;
pub const BUDGET_EXPONENT: f64 = 1.5;

const REFINE_TAG: u64 = 0x5245_4649_4e45;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SearchMode {
    /// Predictor gives the unordered type set and the dry signal.
    #[serde(rename = "direct")]
    DryTypeDirect,
    /// Predictor peels off the last effect's type, one stage at a time.
    #[serde(rename = "type-iter")]
    BypassTypeIter,
    /// As `BypassTypeIter`, and the predictor also supplies parameters.
    #[serde(rename = "config-iter")]
    BypassConfigIter,
}

impl SearchMode {
    pub const ALL: [SearchMode; 3] = [
        SearchMode::DryTypeDirect,
        SearchMode::BypassTypeIter,
        SearchMode::BypassConfigIter,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            SearchMode::DryTypeDirect => "direct",
            SearchMode::BypassTypeIter => "type-iter",
            SearchMode::BypassConfigIter => "config-iter",
        }
    }
}

impl fmt::Display for SearchMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SearchMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        SearchMode::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown mode `{s}` (direct, type-iter, config-iter)")))
    }
}

/// The reconstructed wet signal for a candidate chain.
pub fn reconstruct(dry_est: &AudioBuffer, chain: &ChainConfig) -> Result<AudioBuffer> {
    apply_chain(dry_est, chain)
}

#[derive(Clone, Debug)]
pub struct SearchOutcome {
    pub chain: ChainConfig,
    pub score: f64,
    pub trace: Vec<TrialRecord>,
}

/// Total parameter count of an ordered type list.
pub fn search_dim(types: &[EffectType]) -> usize {
    types.iter().map(|t| t.dim()).sum()
}

fn chain_from_vector(types: &[EffectType], x: &[f64]) -> Result<ChainConfig> {
    let mut offset = 0;
    let mut stages = Vec::with_capacity(types.len());
    for &kind in types {
        stages.push(EffectParams::new(kind, x[offset..offset + kind.dim()].to_vec())?);
        offset += kind.dim();
    }
    ChainConfig::estimated(stages)
}

fn types_code(types: &[EffectType]) -> String {
    types.iter().map(|t| t.code()).collect()
}

fn check_signals(wet: &AudioBuffer, dry_est: &AudioBuffer) -> Result<()> {
    if wet.len() != dry_est.len() {
        return Err(Error::Dimension {
            expected: wet.len(),
            got: dry_est.len(),
        });
    }
    rms_normalize(dry_est, TARGET_RMS)?;
    rms_normalize(wet, TARGET_RMS)?;
    Ok(())
}

fn search_labeled(
    wet: &AudioBuffer,
    dry_est: &AudioBuffer,
    types: &[EffectType],
    m0: u32,
    init: Option<&[EffectParams]>,
    seed: u64,
    label: &str,
    first_index: usize,
) -> Result<SearchOutcome> {
    if types.is_empty() {
        return Err(Error::Argument("search needs at least one effect type".into()));
    }
    if types.len() > MAX_CHAIN_LEN {
        return Err(Error::Chain(format!("length {} exceeds {MAX_CHAIN_LEN}", types.len())));
    }
    check_signals(wet, dry_est)?;

    let init_vec = match init {
        None => None,
        Some(params) => {
            let given: Vec<EffectType> = params.iter().map(EffectParams::kind).collect();
            if given != types {
                return Err(Error::Argument(format!(
                    "initial solution is for {}, search is over {}",
                    types_code(&given),
                    types_code(types)
                )));
            }
            Some(params.iter().flat_map(|p| p.values().iter().copied()).collect::<Vec<f64>>())
        }
    };

    let objective = |x: &[f64]| -> f64 {
        chain_from_vector(types, x)
            .and_then(|chain| reconstruct(dry_est, &chain))
            .and_then(|xr| si_sdr(&xr, wet))
            .unwrap_or(-SI_SDR_CAP_DB)
    };

    let d = search_dim(types);
    let budget = SearchBudget::new(m0, d, BUDGET_EXPONENT)?;
    let run: OptimizerRun = if d == 1 {
        tpe_maximize(&objective, budget, init_vec.map(|x| x[0]), seed)?
    } else {
        cmaes_maximize(&objective, d, budget, init_vec.as_deref(), seed)?
    };

    Ok(SearchOutcome {
        chain: chain_from_vector(types, &run.best.candidate)?,
        score: run.best.score,
        trace: run.records(label, first_index),
    })
}

/// Searches the parameters of a fixed, ordered chain.
///
/// Uses `floor(m0 * d^1.5)` trials: TPE when the chain has a single
/// parameter, CMA-ES otherwise. `init`, if given, is evaluated first.
pub fn search_params(
    wet: &AudioBuffer,
    dry_est: &AudioBuffer,
    types: &[EffectType],
    m0: u32,
    init: Option<&[EffectParams]>,
    seed: u64,
) -> Result<SearchOutcome> {
    search_labeled(wet, dry_est, types, m0, init, seed, &types_code(types), 0)
}

/// All orderings of `items`, in lexicographic order of the input.
pub fn permutations<T: Copy>(items: &[T]) -> Vec<Vec<T>> {
    if items.len() <= 1 {
        return vec![items.to_vec()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        let mut rest = items.to_vec();
        let head = rest.remove(i);
        for mut tail in permutations(&rest) {
            tail.insert(0, head);
            out.push(tail);
        }
    }
    out
}

/// Finds order and parameters for an unordered type set.
///
/// Every permutation is searched with [`PERMUTATION_M0`]; the best one is
/// refined with [`REFINE_M0`], seeded from its stage-one optimum. The
/// better of the two stages is returned.
pub fn search_order_and_params(
    wet: &AudioBuffer,
    dry_est: &AudioBuffer,
    combo: &BTreeSet<EffectType>,
    seed: u64,
) -> Result<SearchOutcome> {
    if combo.is_empty() {
        return Err(Error::Argument("empty type combination".into()));
    }
    let types: Vec<EffectType> = combo.iter().copied().collect();
    let orders = permutations(&types);

    let stage1: Vec<SearchOutcome> = orders
        .par_iter()
        .enumerate()
        .map(|(i, order)| {
            let label = format!("stage1:{}", types_code(order));
            search_labeled(wet, dry_est, order, PERMUTATION_M0, None, derive_seed(seed, i as u64), &label, 0)
        })
        .collect::<Result<_>>()?;

    let mut trace = Vec::new();
    let mut winner = 0;
    for (i, outcome) in stage1.iter().enumerate() {
        if outcome.score > stage1[winner].score {
            winner = i;
        }
        let offset = trace.len();
        trace.extend(outcome.trace.iter().cloned().map(|mut r| {
            r.index += offset;
            r
        }));
    }
    let first = &stage1[winner];

    let order = first.chain.types();
    let refined = search_labeled(
        wet,
        dry_est,
        &order,
        REFINE_M0,
        Some(first.chain.stages()),
        derive_seed(seed, REFINE_TAG),
        &format!("stage2:{}", types_code(&order)),
        trace.len(),
    )?;
    trace.extend(refined.trace.iter().cloned());

    let best = if refined.score >= first.score { &refined } else { first };
    Ok(SearchOutcome {
        chain: best.chain.clone(),
        score: best.score,
        trace,
    })
}

/// Types (in application order), optional parameters and dry estimate
/// obtained by peeling effects off one at a time.
#[derive(Clone, Debug)]
pub struct IterativePrediction {
    pub types: Vec<EffectType>,
    pub params: Option<Vec<EffectParams>>,
    pub dry: AudioBuffer,
}

/// Runs `predict_last` from the wet signal until the predictor reports no
/// effect or three effects have been collected.
pub fn predict_iteratively(
    wet: &AudioBuffer,
    predictor: &dyn Predictor,
    with_params: bool,
) -> Result<IterativePrediction> {
    let mut current = wet.clone();
    let mut types = Vec::new();
    let mut params = Vec::new();
    while types.len() < MAX_CHAIN_LEN {
        let step = predictor.predict_last(&current)?;
        let Some(kind) = step.class else { break };
        if with_params {
            let p = step.params.ok_or_else(|| {
                Error::Predictor(format!("no parameters returned for predicted {kind}"))
            })?;
            if p.kind() != kind {
                return Err(Error::Predictor(format!(
                    "parameters for {} returned with predicted {kind}",
                    p.kind()
                )));
            }
            params.push(p);
        }
        types.push(kind);
        current = step.bypass;
    }
    // collected last-applied first
    types.reverse();
    params.reverse();
    Ok(IterativePrediction {
        types,
        params: with_params.then_some(params),
        dry: current,
    })
}

fn empty_result(wet: &AudioBuffer, dry: AudioBuffer) -> Result<EstimationResult> {
    let chain = ChainConfig::empty();
    let score = si_sdr(&reconstruct(&dry, &chain)?, wet)?;
    Ok(EstimationResult {
        chain,
        dry_estimate: dry,
        score,
        trace: Vec::new(),
    })
}

/// Full estimation: prediction stage through `predictor`, then search.
pub fn estimate(wet: &AudioBuffer, predictor: &dyn Predictor, mode: SearchMode, seed: u64) -> Result<EstimationResult> {
    if !predictor.supports(mode) {
        return Err(Error::Predictor(format!("predictor does not support mode {mode}")));
    }
    match mode {
        SearchMode::DryTypeDirect => {
            let pred = predictor.predict_direct(wet)?;
            if pred.types.len() > MAX_CHAIN_LEN {
                return Err(Error::Predictor(format!("{} types predicted", pred.types.len())));
            }
            if pred.types.is_empty() {
                return empty_result(wet, pred.dry);
            }
            let out = search_order_and_params(wet, &pred.dry, &pred.types, seed)?;
            Ok(EstimationResult {
                chain: out.chain,
                dry_estimate: pred.dry,
                score: out.score,
                trace: out.trace,
            })
        }
        SearchMode::BypassTypeIter | SearchMode::BypassConfigIter => {
            let with_params = mode == SearchMode::BypassConfigIter;
            let pred = predict_iteratively(wet, predictor, with_params)?;
            if pred.types.is_empty() {
                return empty_result(wet, pred.dry);
            }
            let out = search_params(wet, &pred.dry, &pred.types, REFINE_M0, pred.params.as_deref(), seed)?;
            Ok(EstimationResult {
                chain: out.chain,
                dry_estimate: pred.dry,
                score: out.score,
                trace: out.trace,
            })
        }
    }
}

/// The parameter-predicting mode without any search: the predicted chain is
/// rendered as is.
pub fn estimate_without_search(wet: &AudioBuffer, predictor: &dyn Predictor) -> Result<EstimationResult> {
    if !predictor.supports(SearchMode::BypassConfigIter) {
        return Err(Error::Predictor("predictor does not supply parameters".into()));
    }
    let pred = predict_iteratively(wet, predictor, true)?;
    let chain = ChainConfig::estimated(pred.params.unwrap_or_default())?;
    let score = si_sdr(&reconstruct(&pred.dry, &chain)?, wet)?;
    Ok(EstimationResult {
        chain,
        dry_estimate: pred.dry,
        score,
        trace: Vec::new(),
    })
}

/// On-disk form of an [`EstimationResult`]; the trace and dry estimate are
/// written as separate files next to it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EstimationRecord {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub entry_id: Option<String>,
    pub mode: SearchMode,
    pub seed: u64,
    pub chain: ChainConfig,
    pub score_db: f64,
    pub trace_path: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dry_path: Option<String>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::budget_trials;
    use crate::types::normalize_params;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(len: usize, seed: u64) -> AudioBuffer {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<f32> = (0..len).map(|_| rng.random_range(-1.0f32..1.0)).collect();
        rms_normalize(&AudioBuffer::new(x).unwrap(), TARGET_RMS).unwrap()
    }

    #[test]
    fn permutation_counts() {
        assert_eq!(permutations(&[1]).len(), 1);
        assert_eq!(permutations(&[1, 2, 3]), vec![
            vec![1, 2, 3],
            vec![1, 3, 2],
            vec![2, 1, 3],
            vec![2, 3, 1],
            vec![3, 1, 2],
            vec![3, 2, 1]
        ]);
    }

    #[test]
    fn reconstruct_ground_truth_is_exact() {
        let dry = noise(8000, 1);
        let chain = ChainConfig::new(vec![
            normalize_params(EffectType::Distortion, &[14.0]).unwrap(),
            normalize_params(EffectType::Reverb, &[0.3, 0.5, 0.2]).unwrap(),
        ])
        .unwrap();
        let wet = reconstruct(&dry, &chain).unwrap();
        assert!(si_sdr(&reconstruct(&dry, &chain).unwrap(), &wet).unwrap() >= 290.0);
        assert_eq!(reconstruct(&dry, &ChainConfig::empty()).unwrap(), dry);
    }

    #[test]
    fn seeded_search_never_loses_init() {
        let dry = noise(6000, 2);
        let truth = vec![normalize_params(EffectType::Chorus, &[0.2, 0.2, 0.5]).unwrap()];
        let wet = reconstruct(&dry, &ChainConfig::new(truth.clone()).unwrap()).unwrap();
        let out = search_params(&wet, &dry, &[EffectType::Chorus], 5, Some(&truth), 3).unwrap();
        assert_eq!(out.score, 300.0);
        assert!(out.trace.iter().all(|t| t.score <= out.score));
        assert_eq!(out.trace[0].candidate, truth[0].values());
    }

    #[test]
    fn dimension_and_budget_for_chorus_reverb() {
        let types = [EffectType::Chorus, EffectType::Reverb];
        assert_eq!(search_dim(&types), 6);
        assert_eq!(budget_trials(REFINE_M0, 6, BUDGET_EXPONENT).unwrap(), 293);
    }

    #[test]
    fn search_errors() {
        let x = noise(1000, 3);
        assert!(matches!(search_params(&x, &x, &[], 5, None, 0), Err(Error::Argument(_))));
        assert!(matches!(
            search_params(&x, &AudioBuffer::silence(1000), &[EffectType::Distortion], 5, None, 0),
            Err(Error::SilentSignal { .. })
        ));
        assert!(search_order_and_params(&x, &x, &BTreeSet::new(), 0).is_err());
        let wrong = [EffectParams::midpoint(EffectType::Reverb)];
        assert!(search_params(&x, &x, &[EffectType::Distortion], 5, Some(&wrong), 0).is_err());
    }

    #[test]
    fn permutation_search_budget_is_exact() {
        let dry = noise(2000, 4);
        let chain = ChainConfig::new(vec![
            EffectParams::midpoint(EffectType::Reverb),
            EffectParams::midpoint(EffectType::Distortion),
        ])
        .unwrap();
        let wet = reconstruct(&dry, &chain).unwrap();
        let combo = BTreeSet::from([EffectType::Distortion, EffectType::Reverb]);
        let out = search_order_and_params(&wet, &dry, &combo, 7).unwrap();
        let per_order = budget_trials(PERMUTATION_M0, 4, 1.5).unwrap();
        let refine = budget_trials(REFINE_M0, 4, 1.5).unwrap();
        assert_eq!(out.trace.len(), 2 * per_order + refine);
        let indices: Vec<usize> = out.trace.iter().map(|t| t.index).collect();
        assert_eq!(indices, (0..out.trace.len()).collect::<Vec<_>>());
        let recomputed = si_sdr(&reconstruct(&dry, &out.chain).unwrap(), &wet).unwrap();
        assert!((recomputed - out.score).abs() < 1e-6);
    }

    #[test]
    fn mode_names_round_trip() {
        for m in SearchMode::ALL {
            assert_eq!(m.as_str().parse::<SearchMode>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{m}\""));
        }
    }
}
