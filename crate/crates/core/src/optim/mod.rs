//! Black-box maximizers over the unit box: CMA-ES for two or more
//! parameters, a one-dimensional TPE otherwise.
//!
//! Both optimizers spend exactly `budget.trials()` objective evaluations,
//! clamp every candidate into `[0, 1]^d` before evaluating it, and return
//! the best candidate ever evaluated. Runs are fully determined by
//! `(seed, objective, budget, init)`.

mod cmaes;
mod tpe;

use std::io::Write;
use std::sync::atomic::{AtomicUsize, Ordering};

pub use cmaes::{cmaes_maximize, population_size, CMAES_SIGMA0};
pub use tpe::{tpe_maximize, TPE_CANDIDATES, TPE_MAX_STARTUP};

use crate::error::{Error, Result};
use crate::types::{SearchBudget, TrialRecord};

/// Score to maximize. Must be deterministic.
pub trait Objective: Sync {
    fn evaluate(&self, candidate: &[f64]) -> f64;
}

impl<F: Fn(&[f64]) -> f64 + Sync> Objective for F {
    fn evaluate(&self, candidate: &[f64]) -> f64 {
        self(candidate)
    }
}

/// Wraps an objective and counts evaluations.
pub struct Counted<O> {
    inner: O,
    count: AtomicUsize,
}

impl<O: Objective> Counted<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            count: AtomicUsize::new(0),
        }
    }

    pub fn count(&self) -> usize {
        self.count.load(Ordering::Relaxed)
    }
}

impl<O: Objective> Objective for Counted<O> {
    fn evaluate(&self, candidate: &[f64]) -> f64 {
        self.count.fetch_add(1, Ordering::Relaxed);
        self.inner.evaluate(candidate)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Trial {
    pub candidate: Vec<f64>,
    pub score: f64,
}

#[derive(Clone, Debug)]
pub struct OptimizerRun {
    pub seed: u64,
    pub budget: SearchBudget,
    pub init: Option<Vec<f64>>,
    pub history: Vec<Trial>,
    pub best: Trial,
}

impl OptimizerRun {
    fn finish(seed: u64, budget: SearchBudget, init: Option<Vec<f64>>, history: Vec<Trial>) -> Self {
        let best = history
            .iter()
            .fold(None::<&Trial>, |best, t| match best {
                Some(b) if b.score >= t.score => Some(b),
                _ => Some(t),
            })
            .expect("budget is at least one trial")
            .clone();
        Self {
            seed,
            budget,
            init,
            history,
            best,
        }
    }

    pub fn records(&self, stage: &str, first_index: usize) -> Vec<TrialRecord> {
        self.history
            .iter()
            .enumerate()
            .map(|(i, t)| TrialRecord {
                index: first_index + i,
                stage: stage.to_string(),
                candidate: t.candidate.clone(),
                score: t.score,
            })
            .collect()
    }
}

/// `floor(m0 * d^r)`.
pub fn budget_trials(m0: u32, d: usize, r: f64) -> Result<usize> {
    Ok(SearchBudget::new(m0, d, r)?.trials())
}

fn clamp_unit(x: &mut [f64]) {
    for v in x {
        *v = v.clamp(0.0, 1.0);
    }
}

fn check_init(init: &[f64], d: usize) -> Result<Vec<f64>> {
    if init.len() != d {
        return Err(Error::Dimension {
            expected: d,
            got: init.len(),
        });
    }
    if init.iter().any(|v| !v.is_finite()) {
        return Err(Error::Argument("initial solution is not finite".into()));
    }
    let mut x = init.to_vec();
    clamp_unit(&mut x);
    Ok(x)
}

/// Mixes a tag into a seed (SplitMix64 finalizer). Stable across platforms and releases.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    let mut z = seed ^ tag.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// FNV-1a over bytes, for turning names into seed tags.
pub fn name_tag(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0100_0000_01b3)
    })
}

/// Writes `trial_index,stage,x0..x{d-1},score`; shorter candidates leave trailing cells empty.
pub fn write_trace_csv<W: Write>(mut out: W, records: &[TrialRecord]) -> std::io::Result<()> {
    let width = records.iter().map(|r| r.candidate.len()).max().unwrap_or(0);
    write!(out, "trial_index,stage")?;
    for i in 0..width {
        write!(out, ",x{i}")?;
    }
    writeln!(out, ",score")?;
    for r in records {
        write!(out, "{},{}", r.index, r.stage)?;
        for i in 0..width {
            match r.candidate.get(i) {
                Some(v) => write!(out, ",{v}")?,
                None => write!(out, ",")?,
            }
        }
        writeln!(out, ",{}", r.score)?;
    }
    Ok(())
}

/// Parses the output of [`write_trace_csv`].
pub fn read_trace_csv(text: &str) -> Result<Vec<TrialRecord>> {
    let bad = |line: usize| Error::Argument(format!("malformed trace csv at line {line}"));
    let mut lines = text.lines().enumerate();
    lines.next().ok_or(Error::EmptyInput)?;
    let mut records = Vec::new();
    for (no, line) in lines {
        let cells: Vec<&str> = line.split(',').collect();
        if cells.len() < 3 {
            return Err(bad(no + 1));
        }
        let index = cells[0].parse().map_err(|_| bad(no + 1))?;
        let score = cells[cells.len() - 1].parse().map_err(|_| bad(no + 1))?;
        let candidate = cells[2..cells.len() - 1]
            .iter()
            .filter(|c| !c.is_empty())
            .map(|c| c.parse::<f64>().map_err(|_| bad(no + 1)))
            .collect::<Result<Vec<_>>>()?;
        records.push(TrialRecord {
            index,
            stage: cells[1].to_string(),
            candidate,
            score,
        });
    }
    Ok(records)
}
