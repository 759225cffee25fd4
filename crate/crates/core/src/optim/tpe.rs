use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::{Objective, OptimizerRun, Trial};
use crate::error::{Error, Result};
use crate::types::SearchBudget;

pub const TPE_MAX_STARTUP: usize = 10;
pub const TPE_CANDIDATES: usize = 24;
const MAX_GOOD: usize = 25;
const MIN_BANDWIDTH: f64 = 1e-3;
const MAX_REDRAWS: usize = 16;

/// Gaussian kernel density over `[0, 1]` with a shared bandwidth.
struct Parzen {
    centres: Vec<f64>,
    bandwidth: f64,
}

fn std_dev(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt()
}

impl Parzen {
    /// Scott's rule `1.059 * sd * n^(-1/5)`. A group too small or too tight to
    /// have a spread borrows the spread of all observations. The bandwidth never
    /// drops below `1 / min(100, 1 + n)`, so a handful of good points cannot
    /// collapse the search onto one spot.
    fn fit(centres: Vec<f64>, all: &[f64]) -> Self {
        let own = if centres.len() >= 2 { std_dev(&centres) } else { 0.0 };
        let spread = if own > 0.0 { own } else { std_dev(all) };
        let floor = MIN_BANDWIDTH.max(1.0 / (100f64).min(1.0 + centres.len() as f64));
        let bandwidth = (1.059 * spread * (centres.len() as f64).powf(-0.2)).max(floor);
        Self { centres, bandwidth }
    }

    fn log_density(&self, x: f64) -> f64 {
        let h = self.bandwidth;
        let sum: f64 = self
            .centres
            .iter()
            .map(|c| (-0.5 * ((x - c) / h).powi(2)).exp())
            .sum();
        (sum / (self.centres.len() as f64 * h)).max(f64::MIN_POSITIVE).ln()
    }

    /// Draws from the mixture truncated to `[0, 1]` by redrawing.
    fn sample(&self, rng: &mut ChaCha8Rng) -> f64 {
        let c = self.centres[rng.random_range(0..self.centres.len())];
        for _ in 0..MAX_REDRAWS {
            let z: f64 = StandardNormal.sample(rng);
            let x = c + self.bandwidth * z;
            if (0.0..=1.0).contains(&x) {
                return x;
            }
        }
        c
    }
}

fn propose(history: &[Trial], rng: &mut ChaCha8Rng) -> f64 {
    let n = history.len();
    let n_good = ((0.1 * n as f64).ceil() as usize).clamp(1, MAX_GOOD);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| history[b].score.total_cmp(&history[a].score));

    let xs: Vec<f64> = history.iter().map(|t| t.candidate[0]).collect();
    let good = Parzen::fit(order[..n_good].iter().map(|&i| xs[i]).collect(), &xs);
    let bad = Parzen::fit(order[n_good..].iter().map(|&i| xs[i]).collect(), &xs);

    let mut best = (f64::NEG_INFINITY, 0.5);
    for _ in 0..TPE_CANDIDATES {
        let x = good.sample(rng);
        let ratio = good.log_density(x) - bad.log_density(x);
        if ratio > best.0 {
            best = (ratio, x);
        }
    }
    best.1
}

/// Tree-structured Parzen estimator on `[0, 1]`.
///
/// The first `min(10, trials / 2)` trials are uniform (`init`, when given, is
/// trial 0). Each later trial splits the history into the top
/// `min(ceil(0.1 n), 25)` and the rest, fits a kernel density to each, and
/// evaluates the best of 24 draws from the good density by density ratio.
/// Candidates always lie in `[0, 1]`.
pub fn tpe_maximize<O: Objective>(obj: &O, budget: SearchBudget, init: Option<f64>, seed: u64) -> Result<OptimizerRun> {
    if budget.d != 1 {
        return Err(Error::UseCmaes(budget.d));
    }
    if let Some(x) = init {
        if !x.is_finite() {
            return Err(Error::Argument("initial solution is not finite".into()));
        }
    }
    let trials = budget.trials();
    let n_startup = TPE_MAX_STARTUP.min(trials / 2);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history: Vec<Trial> = Vec::with_capacity(trials);

    for t in 0..trials {
        let x = match init {
            Some(x) if t == 0 => x.clamp(0.0, 1.0),
            _ if t < n_startup || history.len() < 2 => rng.random_range(0.0..=1.0),
            _ => propose(&history, &mut rng),
        };
        let candidate = vec![x];
        let score = obj.evaluate(&candidate);
        history.push(Trial { candidate, score });
    }

    Ok(OptimizerRun::finish(
        seed,
        budget,
        init.map(|x| vec![x.clamp(0.0, 1.0)]),
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic(x: &[f64]) -> f64 {
        -(x[0] - 0.37).powi(2)
    }

    #[test]
    fn grid_oracle_agrees_on_argmax() {
        let best = (0..=10_000)
            .map(|i| i as f64 * 1e-4)
            .max_by(|a, b| quadratic(&[*a]).total_cmp(&quadratic(&[*b])))
            .unwrap();
        assert!((best - 0.37).abs() < 1e-9);
    }

    #[test]
    fn finds_quadratic_optimum() {
        let budget = SearchBudget::fixed(50).unwrap();
        let hits = (0..10)
            .filter(|&seed| {
                let run = tpe_maximize(&quadratic, budget, None, seed).unwrap();
                (run.best.candidate[0] - 0.37).abs() <= 0.05
            })
            .count();
        assert!(hits >= 9, "{hits}/10");
    }

    #[test]
    fn single_trial_uses_init() {
        let run = tpe_maximize(&quadratic, SearchBudget::fixed(1).unwrap(), Some(0.5), 0).unwrap();
        assert_eq!(run.history, vec![Trial { candidate: vec![0.5], score: quadratic(&[0.5]) }]);
    }

    #[test]
    fn seeded_runs_repeat() {
        let budget = SearchBudget::fixed(30).unwrap();
        let a = tpe_maximize(&quadratic, budget, None, 5).unwrap();
        let b = tpe_maximize(&quadratic, budget, None, 5).unwrap();
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn rejects_multi_dimensional_budget() {
        let budget = SearchBudget::new(5, 3, 1.5).unwrap();
        assert!(matches!(tpe_maximize(&quadratic, budget, None, 0), Err(Error::UseCmaes(3))));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(32))]
            #[test]
            fn history_in_box_and_best_is_prefix_max(seed in 0u64..1000, trials in 1u32..40, centre in 0.0f64..1.0) {
                let f = |x: &[f64]| -(x[0] - centre).abs();
                let run = tpe_maximize(&f, SearchBudget::fixed(trials).unwrap(), None, seed).unwrap();
                prop_assert_eq!(run.history.len(), trials as usize);
                prop_assert!(run.history.iter().all(|t| (0.0..=1.0).contains(&t.candidate[0])));
                let max = run.history.iter().map(|t| t.score).fold(f64::NEG_INFINITY, f64::max);
                prop_assert_eq!(run.best.score, max);
            }
        }
    }
}
