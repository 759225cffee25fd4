//! Corpus generation: dry chunks, enumerated chains, rendered wet and
//! intermediate signals, a JSON Lines manifest, and track-disjoint splits.

mod synth;
mod wav;

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use log::warn;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use synth::plucked_track;
pub use wav::{read_audio, read_wav_mono, write_audio};

use crate::effects::apply_chain;
use crate::error::{Error, Result};
use crate::optim::derive_seed;
use crate::search::permutations;
use crate::types::{rms_normalize, AudioBuffer, ChainConfig, EffectParams, EffectType, SAMPLE_RATE, TARGET_RMS};

pub const CHUNK_SAMPLES: usize = 10 * SAMPLE_RATE as usize;
/// Chunks quieter than this before normalization are dropped.
pub const SILENT_CHUNK_RMS: f64 = 1e-4;
pub const EMPTY_PER_CHUNK: usize = 11;
pub const DEFAULT_RATIOS: (f64, f64, f64) = (0.80, 0.15, 0.05);
pub const MANIFEST_NAME: &str = "manifest.jsonl";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Eval,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Eval];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Eval => "eval",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Argument(format!("unknown split `{s}` (train, val, eval)")))
    }
}

/// A normalized 10 s excerpt of one source track.
#[derive(Clone, Debug, PartialEq)]
pub struct DryChunk {
    pub track_id: String,
    pub dry_id: String,
    pub audio: AudioBuffer,
}

/// One line of the manifest. Paths are relative to the manifest file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub entry_id: String,
    pub dry_id: String,
    pub track_id: String,
    pub dry_path: String,
    pub chain: ChainConfig,
    pub wet_path: String,
    pub intermediate_paths: Vec<String>,
    pub split: Option<Split>,
    pub is_empty_chain: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    /// Directory the relative paths resolve against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut entries = Vec::new();
        for (no, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: ManifestEntry = serde_json::from_str(line)
                .map_err(|e| Error::Manifest(format!("{}:{}: {e}", path.display(), no + 1)))?;
            entries.push(entry);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, entries })
    }

    /// Writes `MANIFEST_NAME` under `root`, one entry per line.
    pub fn save(&self) -> Result<PathBuf> {
        let path = self.root.join(MANIFEST_NAME);
        let mut out = Vec::new();
        write_manifest(&mut out, &self.entries)?;
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    pub fn resolve(&self, rel: &str) -> PathBuf {
        self.root.join(rel)
    }

    pub fn load_audio(&self, rel: &str) -> Result<AudioBuffer> {
        read_audio(&self.resolve(rel))
    }

    pub fn entry(&self, entry_id: &str) -> Result<&ManifestEntry> {
        self.entries
            .iter()
            .find(|e| e.entry_id == entry_id)
            .ok_or_else(|| Error::Manifest(format!("no entry `{entry_id}`")))
    }

    pub fn in_split(&self, split: Split) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter().filter(move |e| e.split == Some(split))
    }

    /// Finds the entry whose wet file is `path`.
    pub fn entry_for_wet(&self, path: &Path) -> Result<&ManifestEntry> {
        let wanted = fs::canonicalize(path).map_err(|e| Error::io(path, e))?;
        self.entries
            .iter()
            .find(|e| fs::canonicalize(self.resolve(&e.wet_path)).is_ok_and(|p| p == wanted))
            .ok_or_else(|| Error::Manifest(format!("{} is not a wet file of this manifest", path.display())))
    }

    /// `[x_0, x_1, .., x_N]` for an entry: dry, then each prefix render.
    pub fn signals(&self, entry: &ManifestEntry) -> Result<Vec<AudioBuffer>> {
        if entry.intermediate_paths.len() != entry.chain.len() {
            return Err(Error::Manifest(format!(
                "entry {} has {} intermediates for a chain of length {}",
                entry.entry_id,
                entry.intermediate_paths.len(),
                entry.chain.len()
            )));
        }
        std::iter::once(&entry.dry_path)
            .chain(&entry.intermediate_paths)
            .map(|p| self.load_audio(p))
            .collect()
    }
}

/// Cuts a track into normalized chunks, skipping near-silent ones.
pub fn chunk_track(track_id: &str, samples: &[f32]) -> Result<Vec<DryChunk>> {
    let mut out = Vec::new();
    for (i, chunk) in samples.chunks_exact(CHUNK_SAMPLES).enumerate() {
        let buf = AudioBuffer::new(chunk.to_vec())?;
        if buf.rms() < SILENT_CHUNK_RMS {
            warn!("{track_id}: chunk {i} is silent, skipped");
            continue;
        }
        out.push(DryChunk {
            track_id: track_id.to_string(),
            dry_id: format!("{track_id}_c{i:03}"),
            audio: rms_normalize(&buf, TARGET_RMS)?,
        });
    }
    Ok(out)
}

/// Reads every `.wav` file in `dir` (sorted by name) into dry chunks.
/// The file stem is the track id.
pub fn ingest_dry(dir: &Path) -> Result<Vec<DryChunk>> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav")))
        .collect();
    files.sort();
    let mut chunks = Vec::new();
    for path in files {
        let (samples, rate) = read_wav_mono(&path)?;
        if rate != SAMPLE_RATE {
            return Err(Error::Ingestion {
                path,
                reason: format!("sample rate {rate} Hz, expected {SAMPLE_RATE} Hz (no resampling)"),
            });
        }
        let track = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        chunks.extend(chunk_track(&track, &samples).map_err(|e| Error::Ingestion {
            path: path.clone(),
            reason: e.to_string(),
        })?);
    }
    Ok(chunks)
}

/// `n` built-in tracks, one 10 s chunk each.
pub fn synthetic_dry(n: usize, seed: u64) -> Result<Vec<DryChunk>> {
    (0..n)
        .map(|i| {
            let track = format!("synth{i:02}");
            let audio = plucked_track(derive_seed(seed, i as u64), 10.0);
            chunk_track(&track, audio.samples())?
                .pop()
                .ok_or_else(|| Error::Ingestion {
                    path: PathBuf::from(&track),
                    reason: "synthetic track is silent".into(),
                })
        })
        .collect()
}

/// One of the 33 chains rendered per dry chunk.
#[derive(Clone, Debug, PartialEq)]
pub struct EnumeratedChain {
    /// The full ordered sequence this prefix was cut from.
    pub sequence: Vec<EffectType>,
    pub prefix_len: usize,
    pub chain: ChainConfig,
}

impl EnumeratedChain {
    pub fn sequence_code(&self) -> String {
        self.sequence.iter().map(|t| t.code()).collect()
    }
}

/// Every ordered sequence of 1 to 3 distinct types, with one uniform
/// parameter draw per sequence, expanded into its prefixes.
pub fn enumerate_chains(seed: u64) -> Vec<EnumeratedChain> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(33);
    for len in 1..=3 {
        let mut sequences: Vec<Vec<EffectType>> = Vec::new();
        for combo in combinations(&EffectType::ALL, len) {
            sequences.extend(permutations(&combo));
        }
        sequences.sort();
        for sequence in sequences {
            let stages: Vec<EffectParams> = sequence
                .iter()
                .map(|&kind| {
                    let values = (0..kind.dim()).map(|_| rng.random_range(0.0..=1.0)).collect();
                    EffectParams::new(kind, values).expect("draws lie in [0, 1]")
                })
                .collect();
            let full = ChainConfig::new(stages).expect("sequence types are distinct");
            for k in 1..=len {
                out.push(EnumeratedChain {
                    sequence: sequence.clone(),
                    prefix_len: k,
                    chain: full.prefix(k),
                });
            }
        }
    }
    out
}

fn combinations<T: Copy>(items: &[T], k: usize) -> Vec<Vec<T>> {
    if k == 0 {
        return vec![Vec::new()];
    }
    let mut out = Vec::new();
    for i in 0..items.len() {
        for mut rest in combinations(&items[i + 1..], k - 1) {
            rest.insert(0, items[i]);
            out.push(rest);
        }
    }
    out
}

fn entry_id(dry_id: &str, e: &EnumeratedChain) -> String {
    format!("{dry_id}-{}-{}", e.sequence_code(), e.prefix_len)
}

fn wet_rel(id: &str) -> String {
    format!("wet/{id}.wav")
}

/// Renders the full corpus for `chunks` under `out_dir` and writes the
/// manifest (unsplit). Chunk `i` draws its chains from `derive_seed(seed, i)`.
pub fn generate(chunks: &[DryChunk], out_dir: &Path, seed: u64) -> Result<Manifest> {
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut dry_ids = BTreeSet::new();
    if let Some(dup) = chunks.iter().find(|c| !dry_ids.insert(&c.dry_id)) {
        return Err(Error::Argument(format!("duplicate dry id `{}`", dup.dry_id)));
    }

    let mut entries = Vec::new();
    for (ci, chunk) in chunks.iter().enumerate() {
        let dry_rel = format!("dry/{}.wav", chunk.dry_id);
        write_audio(&out_dir.join(&dry_rel), &chunk.audio)?;

        let chains = enumerate_chains(derive_seed(seed, ci as u64));
        let rendered: Vec<Result<AudioBuffer>> = chains.par_iter().map(|e| apply_chain(&chunk.audio, &e.chain)).collect();

        let mut written = BTreeSet::new();
        for (e, wet) in chains.iter().zip(rendered) {
            let id = entry_id(&chunk.dry_id, e);
            let wet = match wet {
                Ok(w) => w,
                Err(err) => {
                    warn!("{id}: render failed ({err}), skipped");
                    continue;
                }
            };
            let intermediates: Vec<String> = (1..=e.prefix_len)
                .map(|k| {
                    let prefix = EnumeratedChain {
                        sequence: e.sequence.clone(),
                        prefix_len: k,
                        chain: e.chain.prefix(k),
                    };
                    wet_rel(&entry_id(&chunk.dry_id, &prefix))
                })
                .collect();
            if intermediates[..e.prefix_len - 1].iter().any(|p| !written.contains(p)) {
                warn!("{id}: a shorter prefix was skipped, skipped");
                continue;
            }
            let rel = wet_rel(&id);
            write_audio(&out_dir.join(&rel), &wet)?;
            written.insert(rel.clone());
            entries.push(ManifestEntry {
                entry_id: id,
                dry_id: chunk.dry_id.clone(),
                track_id: chunk.track_id.clone(),
                dry_path: dry_rel.clone(),
                chain: e.chain.clone(),
                wet_path: rel,
                intermediate_paths: intermediates,
                split: None,
                is_empty_chain: false,
            });
        }
        for j in 0..EMPTY_PER_CHUNK {
            entries.push(ManifestEntry {
                entry_id: format!("{}-none-{j:02}", chunk.dry_id),
                dry_id: chunk.dry_id.clone(),
                track_id: chunk.track_id.clone(),
                dry_path: dry_rel.clone(),
                chain: ChainConfig::empty(),
                wet_path: dry_rel.clone(),
                intermediate_paths: Vec::new(),
                split: None,
                is_empty_chain: true,
            });
        }
    }

    let manifest = Manifest {
        root: out_dir.to_path_buf(),
        entries,
    };
    manifest.save()?;
    Ok(manifest)
}

/// Track counts `(train, val, eval)` for `n` tracks: eval and val get
/// `max(1, round(ratio * n))`, train the rest.
pub fn split_counts(n: usize, ratios: (f64, f64, f64)) -> Result<(usize, usize, usize)> {
    let (tr, va, ev) = ratios;
    if [tr, va, ev].iter().any(|r| !(0.0..=1.0).contains(r)) || (tr + va + ev - 1.0).abs() > 1e-9 {
        return Err(Error::Split(format!("ratios {tr}/{va}/{ev} must be in [0, 1] and sum to 1")));
    }
    if n < 3 {
        return Err(Error::Split(format!("{n} tracks; at least 3 are needed")));
    }
    let n_eval = ((ev * n as f64).round() as usize).max(1);
    let n_val = ((va * n as f64).round() as usize).max(1);
    if n_eval + n_val >= n {
        return Err(Error::Split(format!("{n} tracks leave no training track")));
    }
    Ok((n - n_val - n_eval, n_val, n_eval))
}

/// Assigns each source track to a split after a seeded shuffle; entries
/// inherit their track's split.
pub fn split(manifest: &Manifest, ratios: (f64, f64, f64), seed: u64) -> Result<Manifest> {
    let mut tracks: Vec<&str> = manifest
        .entries
        .iter()
        .map(|e| e.track_id.as_str())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let (n_train, n_val, _) = split_counts(tracks.len(), ratios)?;
    tracks.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let label = |track: &str| {
        let pos = tracks.iter().position(|t| *t == track).expect("track listed");
        if pos < n_train {
            Split::Train
        } else if pos < n_train + n_val {
            Split::Val
        } else {
            Split::Eval
        }
    };
    let entries = manifest
        .entries
        .iter()
        .map(|e| ManifestEntry {
            split: Some(label(&e.track_id)),
            ..e.clone()
        })
        .collect();
    Ok(Manifest {
        root: manifest.root.clone(),
        entries,
    })
}

/// JSON Lines, one entry per line.
pub fn write_manifest<W: Write>(mut out: W, entries: &[ManifestEntry]) -> Result<()> {
    for e in entries {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n").map_err(|e| Error::io("<manifest>", e))?;
    }
    Ok(())
}
