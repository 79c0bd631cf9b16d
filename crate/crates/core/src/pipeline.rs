//! File-driven pipeline stages: collect → train → search → eval.
//!
//! Every stage reads only the configuration and the files written by the
//! stages before it, so any stage can be rerun on its own. With fixed
//! seeds the record log, checkpoint and report are byte-identical across
//! runs; the manifest adds content hashes and wall-clock timings.

use std::collections::BTreeMap;
use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::collector::{collect_with, Collection, CollectorConfig};
use crate::data::{load_csv, split, write_csv, Dataset, Task};
use crate::downstream::{holdout_eval, EvalConfig, Score};
use crate::error::{Error, Result};
use crate::expr::{augment, feature_space, PostfixProgram, Vocabulary};
use crate::opset::Mode;
use crate::record::{read_records, RecordWriter, TransformationRecord};
use crate::search::{run_search, score_program, SearchConfig, SearchReport};
use crate::seqmodel::{EpochLoss, SeqModel, TrainConfig};

/// Environment variable that overrides the configured output directory.
pub const OUT_ENV: &str = "FEATSEARCH_OUT";

pub const RECORDS_FILE: &str = "records.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const REPORT_FILE: &str = "report.json";
pub const PROGRAM_FILE: &str = "best_program.txt";
pub const TRANSFORMED_FILE: &str = "transformed.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetConfig {
    pub path: PathBuf,
    /// Target column name; the last column when absent.
    pub target: Option<String>,
    pub task: Task,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            path: PathBuf::from("data/wine_red_surrogate.csv"),
            target: None,
            task: Task::Classification,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub enabled: bool,
    /// Permuted copies per record.
    pub k: usize,
    pub seed: u64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            k: 12,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub dataset: DatasetConfig,
    pub collector: CollectorConfig,
    pub augment: AugmentConfig,
    pub train: TrainConfig,
    pub search: SearchConfig,
    pub eval: EvalConfig,
    /// Hold out 20% of the rows for a final test score; collection and
    /// search only see the remaining 80%.
    pub holdout: bool,
    pub split_seed: u64,
    pub output_dir: PathBuf,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetConfig::default(),
            collector: CollectorConfig::default(),
            augment: AugmentConfig::default(),
            train: TrainConfig::default(),
            search: SearchConfig::default(),
            eval: EvalConfig::default(),
            holdout: true,
            split_seed: 0,
            output_dir: PathBuf::from("featsearch-out"),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::Input(format!("config: {e}")))
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config is serializable")
    }

    /// Output directory after applying the environment override.
    pub fn resolved_output_dir(&self) -> PathBuf {
        match std::env::var_os(OUT_ENV) {
            Some(dir) if !dir.is_empty() => PathBuf::from(dir),
            _ => self.output_dir.clone(),
        }
    }

    pub fn file(&self, name: &str) -> PathBuf {
        self.resolved_output_dir().join(name)
    }
}

/// The rows collection and search work on, plus the held-out rows when a
/// split is configured.
pub struct Workspace {
    pub full: Dataset,
    pub work: Dataset,
    pub test: Option<Dataset>,
}

pub fn load_workspace(cfg: &PipelineConfig) -> Result<Workspace> {
    let full = load_csv(&cfg.dataset.path, cfg.dataset.task, cfg.dataset.target.as_deref())?;
    if cfg.holdout {
        let s = split(&full, cfg.split_seed);
        Ok(Workspace {
            full,
            work: s.train,
            test: Some(s.test),
        })
    } else {
        Ok(Workspace {
            work: full.clone(),
            full,
            test: None,
        })
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollectSummary {
    pub count: usize,
    pub best: f64,
    pub mean: f64,
    pub baseline: f64,
}

impl CollectSummary {
    fn of(c: &Collection) -> Self {
        let n = c.records.len();
        let best = c.records.iter().map(|r| r.score).fold(f64::NEG_INFINITY, f64::max);
        let mean = if n == 0 {
            f64::NAN
        } else {
            c.records.iter().map(|r| r.score).sum::<f64>() / n as f64
        };
        Self {
            count: n,
            best,
            mean,
            baseline: c.baseline.value,
        }
    }
}

/// Runs the collector on the working rows and writes the record log.
pub fn cmd_collect(cfg: &PipelineConfig) -> Result<CollectSummary> {
    let ws = load_workspace(cfg)?;
    let dir = cfg.resolved_output_dir();
    ensure_dir(&dir)?;
    let path = dir.join(RECORDS_FILE);
    let mut writer = RecordWriter::create(&path)?;
    let collection = collect_with(&ws.work, &cfg.collector, &cfg.eval, &mut |r| writer.write(r))?;
    let summary = CollectSummary::of(&collection);
    log::info!(
        "collected {} records (best {:.4}, mean {:.4}, baseline {:.4}) → {}",
        summary.count,
        summary.best,
        summary.mean,
        summary.baseline,
        path.display()
    );
    Ok(summary)
}

/// Records plus `k` segment-permuted copies of each; copies whose token
/// sequence is already in the corpus are dropped.
pub fn build_corpus(records: &[TransformationRecord], aug: &AugmentConfig) -> Vec<TransformationRecord> {
    let mut corpus = records.to_vec();
    if !aug.enabled || aug.k == 0 {
        return corpus;
    }
    let mut seen: HashSet<PostfixProgram> = records.iter().map(|r| r.program.clone()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(aug.seed);
    for r in records {
        for copy in augment(r, aug.k, &mut rng) {
            if seen.insert(copy.program.clone()) {
                corpus.push(copy);
            }
        }
    }
    corpus
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub records: usize,
    pub corpus: usize,
    pub first: Option<EpochLoss>,
    pub last: Option<EpochLoss>,
}

fn write_loss_curve(path: &Path, curve: &[EpochLoss]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Input(format!("{}: {e}", path.display())))?;
    let io = |e: csv::Error| Error::Input(format!("{}: {e}", path.display()));
    w.write_record(["epoch", "total", "rec", "est"]).map_err(io)?;
    for l in curve {
        w.write_record([l.epoch.to_string(), l.total.to_string(), l.rec.to_string(), l.est.to_string()])
            .map_err(io)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Trains the sequence model on the (augmented) record log.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<TrainSummary> {
    let ws = load_workspace(cfg)?;
    let records = read_records(cfg.file(RECORDS_FILE))?;
    if records.is_empty() {
        return Err(Error::Input("record log is empty".into()));
    }
    let corpus = build_corpus(&records, &cfg.augment);
    log::info!("training on {} sequences from {} records", corpus.len(), records.len());
    let vocab = Vocabulary::new(ws.work.n_features());
    let (model, curve) = SeqModel::train(vocab, &corpus, &cfg.train, &mut |l| {
        log::debug!("epoch {} loss {:.5} (rec {:.5}, est {:.6})", l.epoch, l.total, l.rec, l.est)
    })?;
    model.save(cfg.file(CHECKPOINT_FILE))?;
    write_loss_curve(&cfg.file(LOSS_CURVE_FILE), &curve)?;
    Ok(TrainSummary {
        records: records.len(),
        corpus: corpus.len(),
        first: curve.first().cloned(),
        last: curve.last().cloned(),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineReport {
    pub search: SearchReport,
    /// Held-out score with the original features and with the winning
    /// program, when a split is configured.
    pub holdout_baseline: Option<Score>,
    pub holdout_best: Option<Score>,
    pub transformed_columns: usize,
}

fn column_names(d: &Dataset, program: Option<&PostfixProgram>) -> Vec<String> {
    let mut names = d.feature_names.clone();
    if let Some(p) = program {
        names.extend(
            p.segments()
                .into_iter()
                .map(|s| s.iter().map(ToString::to_string).collect::<Vec<_>>().join(" ")),
        );
    }
    names
}

/// Searches from the checkpoint and writes the report, the winning
/// program and the transformed full dataset.
pub fn cmd_search(cfg: &PipelineConfig) -> Result<PipelineReport> {
    let ws = load_workspace(cfg)?;
    let model = SeqModel::load(cfg.file(CHECKPOINT_FILE))?;
    let records = read_records(cfg.file(RECORDS_FILE))?;
    let outcome = run_search(&model, &records, &ws.work, &cfg.search, &cfg.eval)?;

    let program = outcome.best_program.as_ref();
    let (full_x, kept_segments) = match program {
        Some(p) => {
            let (x, ev) = feature_space(p, &ws.full.x, Mode::Guarded)?;
            (x, ev.kept.len())
        }
        None => (ws.full.x.clone(), 0),
    };
    if kept_segments != program.map_or(0, |p| p.segments().len()) {
        return Err(Error::Invariant("winning program lost a segment on the full data".into()));
    }

    let (holdout_baseline, holdout_best) = match &ws.test {
        Some(test) => {
            let base = holdout_eval(&ws.work.x, &ws.work.y, &test.x, &test.y, ws.work.task, &cfg.eval)?;
            let best = match program {
                Some(p) => {
                    let (xtr, _) = feature_space(p, &ws.work.x, Mode::Guarded)?;
                    let (xte, _) = feature_space(p, &test.x, Mode::Guarded)?;
                    holdout_eval(&xtr, &ws.work.y, &xte, &test.y, ws.work.task, &cfg.eval)?
                }
                None => base.clone(),
            };
            (Some(base), Some(best))
        }
        None => (None, None),
    };

    let report = PipelineReport {
        search: outcome.report,
        holdout_baseline,
        holdout_best,
        transformed_columns: full_x.n_cols(),
    };
    let json = serde_json::to_string_pretty(&report).expect("report is serializable");
    write_file(&cfg.file(REPORT_FILE), &(json + "\n"))?;
    let program_text = program.map_or_else(|| "<SOS> <EOS>".to_string(), ToString::to_string);
    write_file(&cfg.file(PROGRAM_FILE), &(program_text + "\n"))?;
    write_csv(
        cfg.file(TRANSFORMED_FILE),
        &full_x,
        &column_names(&ws.full, program),
        &ws.full.y,
        &ws.full.target_name,
    )?;
    Ok(report)
}

/// Scores a program file on the working rows through the same path the
/// search uses. A program without segments scores the original features.
pub fn cmd_eval(cfg: &PipelineConfig, program_path: &Path) -> Result<Score> {
    let text = fs::read_to_string(program_path).map_err(|e| Error::io(program_path, e))?;
    let program: PostfixProgram = text.trim().parse()?;
    let ws = load_workspace(cfg)?;
    if let Some(max) = program.max_feature() {
        if max >= ws.work.n_features() {
            return Err(Error::Input(format!(
                "program uses f{max} but the dataset has {} features",
                ws.work.n_features()
            )));
        }
    }
    Ok(score_program(&program, &ws.work, &cfg.eval)?.0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub config: PipelineConfig,
    /// SHA-256 of each artifact.
    pub hashes: BTreeMap<String, String>,
    /// Wall-clock seconds per stage.
    pub timings: BTreeMap<String, f64>,
    pub baseline_score: f64,
    pub best_score: f64,
    pub holdout_baseline: Option<f64>,
    pub holdout_best: Option<f64>,
}

/// All stages in order, followed by a manifest of the artifacts.
pub fn cmd_run(cfg: &PipelineConfig) -> Result<RunManifest> {
    let mut timings = BTreeMap::new();
    let t = Instant::now();
    cmd_collect(cfg)?;
    timings.insert("collect".to_string(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    cmd_train(cfg)?;
    timings.insert("train".to_string(), t.elapsed().as_secs_f64());
    let t = Instant::now();
    let report = cmd_search(cfg)?;
    timings.insert("search".to_string(), t.elapsed().as_secs_f64());

    let mut hashes = BTreeMap::new();
    for name in [RECORDS_FILE, CHECKPOINT_FILE, LOSS_CURVE_FILE, REPORT_FILE, PROGRAM_FILE, TRANSFORMED_FILE] {
        hashes.insert(name.to_string(), sha256_file(&cfg.file(name))?);
    }
    let manifest = RunManifest {
        config: cfg.clone(),
        hashes,
        timings,
        baseline_score: report.search.baseline.value,
        best_score: report.search.best_score,
        holdout_baseline: report.holdout_baseline.as_ref().map(|s| s.value),
        holdout_best: report.holdout_best.as_ref().map(|s| s.value),
    };
    let json = serde_json::to_string_pretty(&manifest).expect("manifest is serializable");
    write_file(&cfg.file(MANIFEST_FILE), &(json + "\n"))?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::record::Provenance;

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = PipelineConfig::default();
        assert_eq!(cfg.collector.epochs, 512);
        assert_eq!(cfg.collector.steps, 6);
        assert_eq!(cfg.augment.k, 12);
        assert_eq!(cfg.train.batch_size, 1024);
        assert_eq!(cfg.search.top_t, 20);
        assert_eq!(cfg.search.beam, 5);
        assert_eq!(PipelineConfig::from_toml_str(&cfg.to_toml_string()).unwrap(), cfg);
    }

    #[test]
    fn partial_toml_keeps_defaults_and_rejects_typos() {
        let cfg = PipelineConfig::from_toml_str("[collector]\nepochs = 4\n[search]\nbeam = 1\n").unwrap();
        assert_eq!(cfg.collector.epochs, 4);
        assert_eq!(cfg.search.beam, 1);
        assert_eq!(cfg.augment.k, 12);
        assert!(PipelineConfig::from_toml_str("[search]\nbeams = 1\n").is_err());
    }

    #[test]
    fn corpus_size_counts_unique_permutations() {
        let rec = |p: &str| TransformationRecord {
            program: p.parse().unwrap(),
            score: 0.5,
            provenance: Provenance::Rl,
        };
        let records = vec![rec("<SOS> f0 <SEP> f1 <SEP> f2 <SEP> f3 <SEP> f4 <EOS>"), rec("<SOS> f0 <EOS>")];
        let aug = AugmentConfig {
            enabled: true,
            k: 12,
            seed: 3,
        };
        // 120 orderings of five distinct segments leave room for all 12
        // copies, unless two draws coincide; one segment has no other order
        let corpus = build_corpus(&records, &aug);
        let first = corpus.iter().filter(|r| r.program.segments().len() == 5).count();
        assert!((2..=13).contains(&first));
        assert_eq!(corpus.len(), first + 1);
        let off = AugmentConfig {
            enabled: false,
            ..aug
        };
        assert_eq!(build_corpus(&records, &off).len(), 2);
    }
}
