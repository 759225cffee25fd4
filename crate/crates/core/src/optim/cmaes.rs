use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::{check_init, clamp_unit, Objective, OptimizerRun, Trial};
use crate::error::{Error, Result};
use crate::types::SearchBudget;

pub const CMAES_SIGMA0: f64 = 0.2;
const SIGMA_MIN: f64 = 1e-12;
const SIGMA_MAX: f64 = 1e2;

/// `4 + floor(3 ln d)`.
pub fn population_size(d: usize) -> usize {
    4 + (3.0 * (d as f64).ln()).floor() as usize
}

struct Strategy {
    d: usize,
    lambda: usize,
    weights: Vec<f64>,
    mu_eff: f64,
    c_sigma: f64,
    d_sigma: f64,
    c_c: f64,
    c_1: f64,
    c_mu: f64,
    chi_n: f64,
}

impl Strategy {
    fn new(d: usize) -> Self {
        let n = d as f64;
        let lambda = population_size(d);
        let mu = lambda / 2;
        let raw: Vec<f64> = (1..=mu)
            .map(|i| (mu as f64 + 0.5).ln() - (i as f64).ln())
            .collect();
        let total: f64 = raw.iter().sum();
        let weights: Vec<f64> = raw.iter().map(|w| w / total).collect();
        let mu_eff = 1.0 / weights.iter().map(|w| w * w).sum::<f64>();

        let c_sigma = (mu_eff + 2.0) / (n + mu_eff + 5.0);
        let d_sigma = 1.0 + 2.0 * (((mu_eff - 1.0) / (n + 1.0)).sqrt() - 1.0).max(0.0) + c_sigma;
        let c_c = (4.0 + mu_eff / n) / (n + 4.0 + 2.0 * mu_eff / n);
        let c_1 = 2.0 / ((n + 1.3).powi(2) + mu_eff);
        let c_mu = (1.0 - c_1).min(2.0 * (mu_eff - 2.0 + 1.0 / mu_eff) / ((n + 2.0).powi(2) + mu_eff));
        let chi_n = n.sqrt() * (1.0 - 1.0 / (4.0 * n) + 1.0 / (21.0 * n * n));
        Self {
            d,
            lambda,
            weights,
            mu_eff,
            c_sigma,
            d_sigma,
            c_c,
            c_1,
            c_mu,
            chi_n,
        }
    }
}

/// (mu/mu_w, lambda)-CMA-ES maximizing `obj` over `[0, 1]^d`.
///
/// Starts from `init` (evaluated as the first trial) or the centre of the box,
/// with step size [`CMAES_SIGMA0`]. The final generation is truncated so that
/// exactly `budget.trials()` evaluations are spent.
pub fn cmaes_maximize<O: Objective>(
    obj: &O,
    d: usize,
    budget: SearchBudget,
    init: Option<&[f64]>,
    seed: u64,
) -> Result<OptimizerRun> {
    if d < 2 {
        return Err(Error::UseTpe(d));
    }
    let s = Strategy::new(d);
    let trials = budget.trials();
    if trials < s.lambda {
        return Err(Error::Argument(format!(
            "budget of {trials} trials is smaller than one generation ({})",
            s.lambda
        )));
    }
    let init = init.map(|x| check_init(x, d)).transpose()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut history: Vec<Trial> = Vec::with_capacity(trials);
    if let Some(x) = &init {
        history.push(Trial {
            score: obj.evaluate(x),
            candidate: x.clone(),
        });
    }

    let mut mean = DVector::from_vec(init.clone().unwrap_or_else(|| vec![0.5; d]));
    let mut sigma = CMAES_SIGMA0;
    let mut cov = DMatrix::<f64>::identity(d, d);
    let mut basis = DMatrix::<f64>::identity(d, d);
    let mut scales = DVector::<f64>::from_element(d, 1.0);
    let mut p_sigma = DVector::<f64>::zeros(d);
    let mut p_c = DVector::<f64>::zeros(d);
    let mut generation = 0usize;

    while history.len() < trials {
        let want = (trials - history.len()).min(s.lambda);

        // always draw a full population so the stream does not depend on truncation
        let candidates: Vec<Vec<f64>> = (0..s.lambda)
            .map(|_| {
                let z = DVector::<f64>::from_fn(d, |_, _| StandardNormal.sample(&mut rng));
                let y = &basis * z.component_mul(&scales);
                let mut x: Vec<f64> = (&mean + sigma * y).iter().copied().collect();
                clamp_unit(&mut x);
                x
            })
            .collect();
        let scores: Vec<f64> = candidates[..want].par_iter().map(|x| obj.evaluate(x)).collect();
        for (x, &score) in candidates.iter().zip(&scores) {
            history.push(Trial {
                candidate: x.clone(),
                score,
            });
        }
        if want < s.lambda {
            break;
        }

        // best first; stable so ties keep sampling order
        let mut order: Vec<usize> = (0..s.lambda).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));

        let steps: Vec<DVector<f64>> = order[..s.weights.len()]
            .iter()
            .map(|&k| (DVector::from_column_slice(&candidates[k]) - &mean) / sigma)
            .collect();
        let y_w = steps
            .iter()
            .zip(&s.weights)
            .fold(DVector::<f64>::zeros(d), |acc, (y, &w)| acc + y * w);
        mean += sigma * &y_w;

        let inv_sqrt = &basis * DMatrix::from_diagonal(&scales.map(|v| 1.0 / v)) * basis.transpose();
        p_sigma = (1.0 - s.c_sigma) * &p_sigma
            + (s.c_sigma * (2.0 - s.c_sigma) * s.mu_eff).sqrt() * (&inv_sqrt * &y_w);
        generation += 1;
        let ps_norm = p_sigma.norm();
        let h_sigma = ps_norm / (1.0 - (1.0 - s.c_sigma).powi(2 * generation as i32)).sqrt()
            < (1.4 + 2.0 / (s.d as f64 + 1.0)) * s.chi_n;
        let h = if h_sigma { 1.0 } else { 0.0 };
        p_c = (1.0 - s.c_c) * &p_c + h * (s.c_c * (2.0 - s.c_c) * s.mu_eff).sqrt() * &y_w;

        let rank_mu = steps
            .iter()
            .zip(&s.weights)
            .fold(DMatrix::<f64>::zeros(d, d), |acc, (y, &w)| acc + w * y * y.transpose());
        let decay = 1.0 - s.c_1 - s.c_mu + (1.0 - h) * s.c_1 * s.c_c * (2.0 - s.c_c);
        cov = decay * &cov + s.c_1 * &p_c * p_c.transpose() + s.c_mu * rank_mu;
        cov = (&cov + cov.transpose()) * 0.5;

        sigma *= ((s.c_sigma / s.d_sigma) * (ps_norm / s.chi_n - 1.0)).exp();
        sigma = sigma.clamp(SIGMA_MIN, SIGMA_MAX);

        let eigen = SymmetricEigen::new(cov.clone());
        basis = eigen.eigenvectors;
        scales = eigen.eigenvalues.map(|v| v.max(1e-20).sqrt());
    }

    Ok(OptimizerRun::finish(seed, budget, init, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::Counted;

    fn sphere(x: &[f64]) -> f64 {
        -x.iter().map(|v| (v - 0.7).powi(2)).sum::<f64>()
    }

    #[test]
    fn population_sizes() {
        assert_eq!(population_size(2), 6);
        assert_eq!(population_size(3), 7);
        assert_eq!(population_size(7), 9);
    }

    #[test]
    fn sphere_converges() {
        let run = cmaes_maximize(&sphere, 3, SearchBudget::fixed(200).unwrap(), None, 1).unwrap();
        assert!(run.best.score >= -1e-4, "{}", run.best.score);
        assert_eq!(run.history.len(), 200);
    }

    #[test]
    fn constant_objective() {
        let run = cmaes_maximize(&|_: &[f64]| 3.5, 4, SearchBudget::fixed(50).unwrap(), None, 2).unwrap();
        assert_eq!(run.best.score, 3.5);
        assert!(run.history.iter().all(|t| t.candidate.iter().all(|v| (0.0..=1.0).contains(v))));
    }

    #[test]
    fn seeded_runs_repeat() {
        let budget = SearchBudget::fixed(60).unwrap();
        let a = cmaes_maximize(&sphere, 3, budget, Some(&[0.1, 0.2, 0.3]), 9).unwrap();
        let b = cmaes_maximize(&sphere, 3, budget, Some(&[0.1, 0.2, 0.3]), 9).unwrap();
        assert_eq!(a.history, b.history);
        let c = cmaes_maximize(&sphere, 3, budget, Some(&[0.1, 0.2, 0.3]), 10).unwrap();
        assert_ne!(a.history, c.history);
    }

    #[test]
    fn init_is_first_trial_and_budget_exact() {
        let obj = Counted::new(sphere);
        let budget = SearchBudget::new(5, 3, 1.5).unwrap();
        let run = cmaes_maximize(&obj, 3, budget, Some(&[0.7, 0.7, 0.7]), 3).unwrap();
        assert_eq!(obj.count(), 25);
        assert_eq!(run.history[0].candidate, vec![0.7; 3]);
        assert_eq!(run.best.score, 0.0);
    }

    #[test]
    fn argument_errors() {
        let budget = SearchBudget::fixed(100).unwrap();
        assert!(matches!(cmaes_maximize(&sphere, 1, budget, None, 0), Err(Error::UseTpe(1))));
        let tiny = SearchBudget::fixed(3).unwrap();
        assert!(matches!(cmaes_maximize(&sphere, 3, tiny, None, 0), Err(Error::Argument(_))));
        assert!(cmaes_maximize(&sphere, 3, budget, Some(&[0.5]), 0).is_err());
    }
}
