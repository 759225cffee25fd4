//! Evaluation of estimated chains: type metrics (macro F1 on type sets,
//! Levenshtein distance, exact match), wet reconstruction quality and
//! generic signal-pair quality.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, ManifestEntry};
use crate::effects::apply_chain;
use crate::error::{Error, Result};
use crate::metrics::{exact_match, levenshtein, macro_f1_sets, macro_f1_single, mr_stft, si_sdr, StftConfig};
use crate::types::{AudioBuffer, ChainConfig, EffectType};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: Option<f64>,
    pub median: Option<f64>,
    pub count: usize,
    /// Published value for orientation only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<f64>,
}

impl Summary {
    pub fn of(values: &[f64]) -> Self {
        if values.is_empty() {
            return Self {
                mean: None,
                median: None,
                count: 0,
                reference: None,
            };
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let n = sorted.len();
        let median = if n % 2 == 1 {
            sorted[n / 2]
        } else {
            0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
        };
        Self {
            mean: Some(values.iter().sum::<f64>() / n as f64),
            median: Some(median),
            count: n,
            reference: None,
        }
    }

    /// An aggregate that has no per-entry distribution.
    pub fn aggregate(value: f64, count: usize) -> Self {
        Self {
            mean: Some(value),
            median: None,
            count,
            reference: None,
        }
    }
}

/// `{metric: {mean, median, count}}`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Report(pub BTreeMap<String, Summary>);

impl Report {
    pub fn insert(&mut self, name: &str, s: Summary) {
        self.0.insert(name.to_string(), s);
    }

    pub fn get(&self, name: &str) -> Option<&Summary> {
        self.0.get(name)
    }

    pub fn mean(&self, name: &str) -> Option<f64> {
        self.get(name).and_then(|s| s.mean)
    }

    pub fn merge(&mut self, other: Report) {
        self.0.extend(other.0);
    }

    pub fn annotate(&mut self, name: &str, reference: f64) {
        if let Some(s) = self.0.get_mut(name) {
            s.reference = Some(reference);
        }
    }

    /// Aligned columns for humans.
    pub fn to_text(&self) -> String {
        let fmt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        let width = self.0.keys().map(String::len).max().unwrap_or(6).max(6);
        let mut out = format!(
            "{:<width$}  {:>12}  {:>12}  {:>6}  {:>10}\n",
            "metric", "mean", "median", "count", "reference"
        );
        for (name, s) in &self.0 {
            let _ = writeln!(
                out,
                "{name:<width$}  {:>12}  {:>12}  {:>6}  {:>10}",
                fmt(s.mean),
                fmt(s.median),
                s.count,
                fmt(s.reference)
            );
        }
        out
    }
}

fn check_aligned(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Argument(format!("{a} predictions for {b} references")));
    }
    if a == 0 {
        return Err(Error::EmptyInput);
    }
    Ok(())
}

/// `macro_f1` over type sets, `mean_ld` and `ema` over ordered sequences,
/// and single-label macro F1 of the last applied type, with and without the
/// no-effect class.
pub fn eval_chain_types(predicted: &[ChainConfig], truth: &[ChainConfig]) -> Result<Report> {
    check_aligned(predicted.len(), truth.len())?;
    let seq = |c: &[ChainConfig]| c.iter().map(ChainConfig::types).collect::<Vec<_>>();
    let (ps, ts) = (seq(predicted), seq(truth));
    let set = |s: &[Vec<EffectType>]| s.iter().map(|v| v.iter().copied().collect()).collect::<Vec<BTreeSet<_>>>();
    let n = predicted.len();

    let mut r = Report::default();
    r.insert("macro_f1", Summary::aggregate(macro_f1_sets(&set(&ps), &set(&ts), &EffectType::ALL)?, n));
    let lds: Vec<f64> = ps.iter().zip(&ts).map(|(p, t)| levenshtein(p, t) as f64).collect();
    r.insert("mean_ld", Summary::of(&lds));
    r.insert("ema", Summary::aggregate(exact_match(&ps, &ts)?, n));

    let last = |s: &[Vec<EffectType>]| s.iter().map(|v| v.last().copied()).collect::<Vec<Option<EffectType>>>();
    let mut classes: Vec<Option<EffectType>> = EffectType::ALL.into_iter().map(Some).collect();
    r.insert("last_type_macro_f1_no_none", Summary::aggregate(macro_f1_single(&last(&ps), &last(&ts), &classes)?, n));
    classes.push(None);
    r.insert("last_type_macro_f1", Summary::aggregate(macro_f1_single(&last(&ps), &last(&ts), &classes)?, n));
    Ok(r)
}

/// One estimate to score: the chain and, for predicted-dry scoring, the dry
/// estimate it was searched against.
#[derive(Clone, Debug)]
pub struct EstimateItem {
    pub entry_id: String,
    pub chain: ChainConfig,
    pub dry_estimate: Option<AudioBuffer>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntryScore {
    pub entry_id: String,
    pub si_sdr: f64,
    pub mr_stft: f64,
}

#[derive(Clone, Debug)]
pub struct ReconstructionEval {
    pub report: Report,
    pub per_entry: Vec<EntryScore>,
}

/// True when an entry takes part in reconstruction averages: neither the
/// truth nor the estimate may be the empty chain.
pub fn counts_for_reconstruction(truth: &ChainConfig, estimate: &ChainConfig) -> bool {
    !truth.is_empty() && !estimate.is_empty()
}

/// Re-renders every estimate onto the ground-truth dry (`use_ground_truth_dry`)
/// or the item's dry estimate and scores it against the stored wet.
pub fn eval_reconstruction(items: &[EstimateItem], manifest: &Manifest, use_ground_truth_dry: bool) -> Result<ReconstructionEval> {
    let scored: Vec<Option<EntryScore>> = items
        .par_iter()
        .map(|item| -> Result<Option<EntryScore>> {
            let entry: &ManifestEntry = manifest.entry(&item.entry_id)?;
            if !counts_for_reconstruction(&entry.chain, &item.chain) {
                return Ok(None);
            }
            let dry = if use_ground_truth_dry {
                manifest.load_audio(&entry.dry_path)?
            } else {
                item.dry_estimate
                    .clone()
                    .ok_or_else(|| Error::Argument(format!("{}: no dry estimate to score against", item.entry_id)))?
            };
            let wet = manifest.load_audio(&entry.wet_path)?;
            let rendered = apply_chain(&dry, &item.chain)?;
            Ok(Some(EntryScore {
                entry_id: item.entry_id.clone(),
                si_sdr: si_sdr(&rendered, &wet)?,
                mr_stft: mr_stft(&rendered, &wet, &StftConfig::default())?,
            }))
        })
        .collect::<Result<_>>()?;
    let per_entry: Vec<EntryScore> = scored.into_iter().flatten().collect();
    let mut report = Report::default();
    report.insert("si_sdr", Summary::of(&per_entry.iter().map(|e| e.si_sdr).collect::<Vec<_>>()));
    report.insert("mr_stft", Summary::of(&per_entry.iter().map(|e| e.mr_stft).collect::<Vec<_>>()));
    Ok(ReconstructionEval { report, per_entry })
}

/// Pairwise SI-SDR and MR-STFT of estimates against references.
pub fn eval_signal(estimates: &[AudioBuffer], references: &[AudioBuffer]) -> Result<Report> {
    check_aligned(estimates.len(), references.len())?;
    let pairs: Vec<(f64, f64)> = estimates
        .par_iter()
        .zip(references)
        .map(|(e, r)| {
            if e.len() != r.len() {
                return Err(Error::Argument(format!("signal lengths {} and {} differ", e.len(), r.len())));
            }
            Ok((si_sdr(e, r)?, mr_stft(e, r, &StftConfig::default())?))
        })
        .collect::<Result<_>>()?;
    let mut report = Report::default();
    report.insert("si_sdr", Summary::of(&pairs.iter().map(|p| p.0).collect::<Vec<_>>()));
    report.insert("mr_stft", Summary::of(&pairs.iter().map(|p| p.1).collect::<Vec<_>>()));
    Ok(report)
}

/// Published numbers for the direct mode with search, attached to reports
/// for orientation.
pub const DIRECT_SEARCH_REFERENCE: [(&str, f64); 5] = [
    ("macro_f1", 0.958),
    ("mean_ld", 0.313),
    ("ema", 0.774),
    ("si_sdr", 23.07),
    ("mr_stft", 0.340),
];

pub fn write_entry_csv<W: Write>(mut out: W, rows: &[EntryScore]) -> std::io::Result<()> {
    writeln!(out, "entry_id,si_sdr,mr_stft")?;
    for r in rows {
        writeln!(out, "{},{},{}", r.entry_id, r.si_sdr, r.mr_stft)?;
    }
    Ok(())
}
