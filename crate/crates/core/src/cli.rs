//! The `fxchain` command line.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{ArgGroup, Args, Parser, Subcommand, ValueEnum};
use log::info;
use rayon::prelude::*;

use crate::dataset::{self, ingest_dry, synthetic_dry, write_audio, Manifest, ManifestEntry, Split};
use crate::effects::apply_chain;
use crate::error::{Error, Result};
use crate::eval::{
    eval_chain_types, eval_reconstruction, write_entry_csv, EstimateItem, Report, DIRECT_SEARCH_REFERENCE,
};
use crate::optim::{derive_seed, name_tag, read_trace_csv, write_trace_csv};
use crate::predictor::{HeuristicPredictor, NoiseKnobs, NoisyOraclePredictor, OraclePredictor, Predictor, Thresholds};
use crate::search::{estimate, estimate_without_search, EstimationRecord, SearchMode};
use crate::types::{ChainConfig, EstimationResult, TrialRecord};

const CONFIG_HELP: &str = "\
Settings may also come from a config file given with --config PATH: one
`key = value` per line, keys being long flag names (`seed = 7`,
`mode = direct`, `ground-truth-dry = true`). Flags on the command line win
over the file, which wins over built-in defaults.

Exit status: 0 success, 2 usage error, 3 data error, 4 internal error.";

#[derive(Parser, Debug)]
#[command(name = "fxchain", version, about = "Estimate guitar effect chains by searching over re-renders", after_help = CONFIG_HELP)]
struct Cli {
    /// key = value settings file
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Build a corpus: dry chunks, rendered chains, manifest and splits.
    Gen(GenArgs),
    /// Render one chain onto a dry file.
    Render(RenderArgs),
    /// Estimate the chain behind one wet file or a whole split.
    Estimate(EstimateArgs),
    /// Score a results directory against the manifest.
    Evaluate(EvaluateArgs),
    /// Collect optimizer traces from a results directory into one CSV.
    Trace(TraceArgs),
}

#[derive(Args, Debug)]
#[command(args_override_self = true, group(ArgGroup::new("source").required(true).args(["dry_dir", "synthetic"])))]
struct GenArgs {
    /// Directory of dry WAV files, one track per file
    #[arg(long, value_name = "PATH")]
    dry_dir: Option<PathBuf>,
    /// Use N built-in synthetic tracks instead
    #[arg(long, value_name = "N")]
    synthetic: Option<usize>,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Train, val and eval fractions of tracks
    #[arg(long, default_value = "0.8,0.15,0.05")]
    ratios: String,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct RenderArgs {
    #[arg(long, value_name = "FILE")]
    dry: PathBuf,
    /// Chain as inline JSON or a path to a JSON file
    #[arg(long, value_name = "JSON")]
    chain: String,
    #[arg(long, value_name = "FILE")]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum PredictorKind {
    Oracle,
    Noisy,
    Heuristic,
}

#[derive(Args, Debug)]
#[command(args_override_self = true, group(ArgGroup::new("input").required(true).args(["wet", "split"])))]
struct EstimateArgs {
    /// One wet file; --out is then the result JSON
    #[arg(long, value_name = "FILE")]
    wet: Option<PathBuf>,
    /// Every entry of a split; --out is then a directory
    #[arg(long, value_parser = parse_split)]
    split: Option<Split>,
    #[arg(long, value_parser = parse_mode)]
    mode: SearchMode,
    #[arg(long, value_enum)]
    predictor: PredictorKind,
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    /// Noisy oracle: probability of replacing each type
    #[arg(long, default_value_t = 0.0)]
    type_flip_prob: f64,
    /// Noisy oracle: SNR of noise added to returned audio (inf disables)
    #[arg(long, default_value_t = f64::INFINITY)]
    dry_snr_db: f64,
    /// Noisy oracle: std of Gaussian jitter on normalized parameters
    #[arg(long, default_value_t = 0.0)]
    param_noise_std: f64,
    /// Heuristic thresholds sidecar; read if present, written after calibration otherwise
    #[arg(long, value_name = "PATH")]
    thresholds: Option<PathBuf>,
    /// Split the heuristic predictor is calibrated on
    #[arg(long, value_parser = parse_split, default_value = "train")]
    calibration_split: Split,
    /// Keep the predicted parameters as they are (config-iter only)
    #[arg(long)]
    no_search: bool,
    #[arg(long, value_name = "PATH")]
    out: PathBuf,
    /// Worker threads (default: all cores)
    #[arg(long)]
    jobs: Option<usize>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct EvaluateArgs {
    #[arg(long, value_name = "PATH")]
    manifest: PathBuf,
    #[arg(long, value_name = "DIR")]
    results: PathBuf,
    /// Re-render onto the true dry signal instead of the dry estimate
    #[arg(long)]
    ground_truth_dry: bool,
    #[arg(long, value_name = "JSON")]
    out: PathBuf,
    /// Also write the aligned text table here
    #[arg(long, value_name = "PATH")]
    text: Option<PathBuf>,
    /// Per-entry reconstruction scores as CSV
    #[arg(long, value_name = "CSV")]
    per_entry: Option<PathBuf>,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

#[derive(Args, Debug)]
#[command(args_override_self = true)]
struct TraceArgs {
    #[arg(long, value_name = "DIR")]
    results: PathBuf,
    #[arg(long, value_name = "CSV")]
    out: PathBuf,
    #[arg(long, default_value_t = 42)]
    seed: u64,
}

fn parse_split(s: &str) -> std::result::Result<Split, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

fn parse_mode(s: &str) -> std::result::Result<SearchMode, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

const COMMANDS: [&str; 5] = ["gen", "render", "estimate", "evaluate", "trace"];

/// Turns `key = value` lines into flags.
fn config_flags(text: &str, path: &Path) -> Result<Vec<OsString>> {
    let mut flags = Vec::new();
    for (no, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| {
            Error::Argument(format!("{}:{}: expected `key = value`", path.display(), no + 1))
        })?;
        let key = key.trim().replace('_', "-");
        let value = value.trim().trim_matches('"');
        match value {
            "true" => flags.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                flags.push(format!("--{key}").into());
                flags.push(value.into());
            }
        }
    }
    Ok(flags)
}

/// Splices config-file flags in right after the subcommand name, so that
/// flags given later on the real command line override them.
fn with_config(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    let mut it = args.iter().enumerate().skip(1);
    while let Some((_, a)) = it.next() {
        let a = a.to_string_lossy();
        if a == "--config" {
            config = it.next().map(|(_, p)| PathBuf::from(p));
        } else if let Some(p) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        }
    }
    let Some(path) = config else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let flags = config_flags(&text, &path)?;
    let Some(pos) = args.iter().position(|a| COMMANDS.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(args);
    };
    let mut out = args[..=pos].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

/// Runs the command line and returns the exit status.
pub fn run(args: Vec<OsString>) -> i32 {
    let args = match with_config(args) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                print!("{e}");
                return 0;
            }
            let msg = e.to_string();
            eprintln!("{}", msg.lines().next().unwrap_or("usage error"));
            return 2;
        }
    };
    let outcome = match cli.command {
        Command::Gen(a) => gen(a),
        Command::Render(a) => render(a),
        Command::Estimate(a) => estimate_cmd(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Trace(a) => trace(a),
    };
    match outcome {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn parse_ratios(s: &str) -> Result<(f64, f64, f64)> {
    let parts: Vec<f64> = s
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| Error::Argument(format!("ratios `{s}` are not three numbers")))?;
    match parts[..] {
        [a, b, c] => Ok((a, b, c)),
        _ => Err(Error::Argument(format!("ratios `{s}` are not three numbers"))),
    }
}

fn gen(a: GenArgs) -> Result<()> {
    let ratios = parse_ratios(&a.ratios)?;
    let chunks = match (a.synthetic, &a.dry_dir) {
        (Some(n), _) => synthetic_dry(n, a.seed)?,
        (None, Some(dir)) => ingest_dry(dir)?,
        (None, None) => unreachable!("clap requires a source"),
    };
    if chunks.is_empty() {
        return Err(Error::Ingestion {
            path: a.dry_dir.unwrap_or_default(),
            reason: "no usable 10 s chunks".into(),
        });
    }
    let manifest = dataset::generate(&chunks, &a.out, a.seed)?;
    let manifest = dataset::split(&manifest, ratios, a.seed)?;
    let path = manifest.save()?;
    println!("{} chunks, {} entries -> {}", chunks.len(), manifest.entries.len(), path.display());
    Ok(())
}

fn read_chain(arg: &str) -> Result<ChainConfig> {
    let text = if arg.trim_start().starts_with('{') {
        arg.to_string()
    } else {
        fs::read_to_string(arg).map_err(|e| Error::io(arg, e))?
    };
    let chain: ChainConfig = serde_json::from_str(&text)?;
    if !chain.has_distinct_types() {
        return Err(Error::Chain("effect types must be distinct".into()));
    }
    Ok(chain)
}

fn render(a: RenderArgs) -> Result<()> {
    let dry = dataset::read_audio(&a.dry)?;
    let chain = read_chain(&a.chain)?;
    write_audio(&a.out, &apply_chain(&dry, &chain)?)
}

enum Source {
    Oracle,
    Noisy(NoiseKnobs),
    Heuristic(HeuristicPredictor),
}

const NOISE_TAG: u64 = 0x4e4f_4953_45;

impl Source {
    fn build(a: &EstimateArgs, manifest: &Manifest) -> Result<Self> {
        Ok(match a.predictor {
            PredictorKind::Oracle => Source::Oracle,
            PredictorKind::Noisy => {
                let knobs = NoiseKnobs {
                    type_flip_prob: a.type_flip_prob,
                    dry_snr_db: a.dry_snr_db,
                    param_noise_std: a.param_noise_std,
                };
                knobs.validate()?;
                Source::Noisy(knobs)
            }
            PredictorKind::Heuristic => {
                let h = match &a.thresholds {
                    Some(p) if p.exists() => HeuristicPredictor::new(Thresholds::load(p)?),
                    other => {
                        let h = HeuristicPredictor::calibrate_on(manifest, a.calibration_split)?;
                        if let Some(p) = other {
                            h.thresholds().save(p)?;
                        }
                        h
                    }
                };
                Source::Heuristic(h)
            }
        })
    }

    fn predictor_for(&self, manifest: &Manifest, entry: Option<&ManifestEntry>, seed: u64) -> Result<Box<dyn Predictor + '_>> {
        let oracle = || -> Result<OraclePredictor> {
            let entry = entry.ok_or_else(|| Error::Manifest("the wet file is not an entry of the manifest".into()))?;
            OraclePredictor::from_entry(manifest, entry)
        };
        Ok(match self {
            Source::Oracle => Box::new(oracle()?),
            Source::Noisy(knobs) => Box::new(NoisyOraclePredictor::new(oracle()?, *knobs, derive_seed(seed, NOISE_TAG))?),
            Source::Heuristic(h) => Box::new(h.clone()),
        })
    }
}

fn run_one(
    a: &EstimateArgs,
    source: &Source,
    manifest: &Manifest,
    entry: Option<&ManifestEntry>,
    wet_path: &Path,
    seed: u64,
) -> Result<EstimationResult> {
    let wet = dataset::read_audio(wet_path)?;
    let predictor = source.predictor_for(manifest, entry, seed)?;
    if a.no_search {
        estimate_without_search(&wet, predictor.as_ref())
    } else {
        estimate(&wet, predictor.as_ref(), a.mode, seed)
    }
}

/// Writes `<stem>.json` with its trace CSV and dry estimate beside it.
fn write_result(json_path: &Path, result: &EstimationResult, entry_id: Option<String>, mode: SearchMode, seed: u64) -> Result<()> {
    let dir = json_path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let stem = json_path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
    let trace_name = format!("{stem}.trace.csv");
    let dry_name = format!("{stem}.dry.wav");

    let mut csv = Vec::new();
    write_trace_csv(&mut csv, &result.trace).map_err(|e| Error::io(&trace_name, e))?;
    let trace_path = dir.join(&trace_name);
    fs::write(&trace_path, csv).map_err(|e| Error::io(&trace_path, e))?;
    write_audio(&dir.join(&dry_name), &result.dry_estimate)?;

    let record = EstimationRecord {
        entry_id,
        mode,
        seed,
        chain: result.chain.clone(),
        score_db: result.score,
        trace_path: trace_name,
        dry_path: Some(dry_name),
    };
    let text = serde_json::to_string_pretty(&record)? + "\n";
    fs::write(json_path, text).map_err(|e| Error::io(json_path, e))
}

fn estimate_cmd(a: EstimateArgs) -> Result<()> {
    if a.no_search && a.mode != SearchMode::BypassConfigIter {
        return Err(Error::Argument("--no-search needs --mode config-iter".into()));
    }
    let manifest = Manifest::load(&a.manifest)?;
    let source = Source::build(&a, &manifest)?;
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(j) = a.jobs {
        pool = pool.num_threads(j.max(1));
    }
    let pool = pool.build().map_err(|e| Error::Argument(e.to_string()))?;

    if let Some(wet) = &a.wet {
        let entry = match manifest.entry_for_wet(wet) {
            Ok(e) => Some(e),
            Err(e) if a.predictor != PredictorKind::Heuristic => return Err(e),
            Err(_) => None,
        };
        let result = pool.install(|| run_one(&a, &source, &manifest, entry, wet, a.seed))?;
        write_result(&a.out, &result, entry.map(|e| e.entry_id.clone()), a.mode, a.seed)?;
        println!("{} {:.3} dB", result.chain.code(), result.score);
        return Ok(());
    }

    let split = a.split.expect("clap requires --wet or --split");
    let entries: Vec<&ManifestEntry> = manifest.in_split(split).collect();
    if entries.is_empty() {
        return Err(Error::Manifest(format!("split {split} has no entries")));
    }
    fs::create_dir_all(&a.out).map_err(|e| Error::io(&a.out, e))?;
    pool.install(|| {
        entries.par_iter().try_for_each(|entry| {
            let seed = derive_seed(a.seed, name_tag(&entry.entry_id));
            let result = run_one(&a, &source, &manifest, Some(entry), &manifest.resolve(&entry.wet_path), seed)?;
            info!("{}: {} {:.3} dB", entry.entry_id, result.chain.code(), result.score);
            let path = a.out.join(format!("{}.json", entry.entry_id));
            write_result(&path, &result, Some(entry.entry_id.clone()), a.mode, seed)
        })
    })?;
    println!("{} entries -> {}", entries.len(), a.out.display());
    Ok(())
}

/// Result records in a directory, sorted by file name.
fn load_records(dir: &Path) -> Result<Vec<EstimationRecord>> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            Ok(serde_json::from_str(&text)?)
        })
        .collect()
}

fn evaluate(a: EvaluateArgs) -> Result<()> {
    let manifest = Manifest::load(&a.manifest)?;
    let records = load_records(&a.results)?;
    if records.is_empty() {
        return Err(Error::Manifest(format!("no result records in {}", a.results.display())));
    }
    let mut items = Vec::with_capacity(records.len());
    let mut truths = Vec::with_capacity(records.len());
    for r in &records {
        let id = r
            .entry_id
            .as_ref()
            .ok_or_else(|| Error::Manifest("a result record has no entry id".into()))?;
        truths.push(manifest.entry(id)?.chain.clone());
        let dry_estimate = match (&r.dry_path, a.ground_truth_dry) {
            (Some(p), false) => Some(dataset::read_audio(&a.results.join(p))?),
            _ => None,
        };
        items.push(EstimateItem {
            entry_id: id.clone(),
            chain: r.chain.clone(),
            dry_estimate,
        });
    }
    let predicted: Vec<ChainConfig> = records.iter().map(|r| r.chain.clone()).collect();
    let mut report: Report = eval_chain_types(&predicted, &truths)?;
    let recon = eval_reconstruction(&items, &manifest, a.ground_truth_dry)?;
    report.merge(recon.report);
    if records.iter().all(|r| r.mode == SearchMode::DryTypeDirect) {
        for (name, v) in DIRECT_SEARCH_REFERENCE {
            report.annotate(name, v);
        }
    }

    fs::write(&a.out, serde_json::to_string_pretty(&report)? + "\n").map_err(|e| Error::io(&a.out, e))?;
    let text = report.to_text();
    if let Some(p) = &a.text {
        fs::write(p, &text).map_err(|e| Error::io(p, e))?;
    }
    if let Some(p) = &a.per_entry {
        let mut buf = Vec::new();
        write_entry_csv(&mut buf, &recon.per_entry).map_err(|e| Error::io(p, e))?;
        fs::write(p, buf).map_err(|e| Error::io(p, e))?;
    }
    print!("{text}");
    Ok(())
}

fn trace(a: TraceArgs) -> Result<()> {
    let records = load_records(&a.results)?;
    let mut all: Vec<(String, Vec<TrialRecord>)> = Vec::new();
    for (i, r) in records.iter().enumerate() {
        let path = a.results.join(&r.trace_path);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let id = r.entry_id.clone().unwrap_or_else(|| format!("result{i}"));
        all.push((id, read_trace_csv(&text)?));
    }
    let width = all.iter().flat_map(|(_, t)| t.iter().map(|r| r.candidate.len())).max().unwrap_or(0);
    let mut out = String::from("entry_id,trial_index,stage");
    for i in 0..width {
        out.push_str(&format!(",x{i}"));
    }
    out.push_str(",score\n");
    for (id, trials) in &all {
        for t in trials {
            out.push_str(&format!("{id},{},{}", t.index, t.stage));
            for i in 0..width {
                out.push(',');
                if let Some(v) = t.candidate.get(i) {
                    out.push_str(&v.to_string());
                }
            }
            out.push_str(&format!(",{}\n", t.score));
        }
    }
    fs::write(&a.out, out).map_err(|e| Error::io(&a.out, e))
}
