use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use log::{error, info};
use rayon::prelude::*;
use serde::Serialize;
use trajrisk_core::data::{
    extract_windows, parse_highd, parse_ngsim, preprocess, read_manifest, read_split, split_dataset, write_store, DataError, RawRecording, Sample,
    Split, StoreManifest, MANIFEST_FILE,
};
use trajrisk_core::predictor::{baseline_predict, Baseline, Predictor};
use trajrisk_core::scenario::{assess as assess_scenario, AssessConfig, OvModel, Scenario};
use trajrisk_core::train::{config_fingerprint, evaluate, evaluate_baseline, write_loss_curve, Checkpoint, Trainer, CHECKPOINT_FORMAT};

use crate::config::RunConfig;
use crate::error::CliError;

/// Where object-vehicle predictions come from.
#[derive(Debug, Clone, PartialEq)]
pub enum ModelSource {
    Checkpoint(PathBuf),
    Baseline(Baseline),
}

impl ModelSource {
    fn inputs(&self) -> Vec<PathBuf> {
        match self {
            ModelSource::Checkpoint(p) => vec![p.clone()],
            ModelSource::Baseline(_) => Vec::new(),
        }
    }

    fn load(&self) -> Result<LoadedModel, CliError> {
        Ok(match self {
            ModelSource::Checkpoint(p) => LoadedModel::Network(Box::new(Checkpoint::load(p)?)),
            ModelSource::Baseline(b) => LoadedModel::Baseline(*b),
        })
    }
}

enum LoadedModel {
    Network(Box<Checkpoint>),
    Baseline(Baseline),
}

impl LoadedModel {
    fn fingerprint(&self) -> Option<String> {
        match self {
            LoadedModel::Network(ck) => Some(ck.fingerprint.clone()),
            LoadedModel::Baseline(_) => None,
        }
    }
}

#[derive(Serialize)]
struct Seeds {
    split: u64,
    init: u64,
    train: u64,
}

#[derive(Serialize)]
struct Versions {
    trajrisk: &'static str,
    checkpoint_format: &'static str,
}

/// Written next to every command's artifacts.
#[derive(Serialize)]
struct RunMeta<'a> {
    command: &'a str,
    config_fingerprint: String,
    model_fingerprint: Option<String>,
    seeds: Seeds,
    versions: Versions,
    inputs: Vec<String>,
    outputs: Vec<String>,
    config: &'a RunConfig,
}

/// Files produced by a command, written only after it has fully succeeded.
struct Artifacts<'a> {
    command: &'a str,
    config: &'a RunConfig,
    inputs: Vec<PathBuf>,
    files: Vec<(String, Vec<u8>)>,
    extra_outputs: Vec<String>,
}

impl<'a> Artifacts<'a> {
    fn new(command: &'a str, config: &'a RunConfig, inputs: Vec<PathBuf>) -> Self {
        Self { command, config, inputs, files: Vec::new(), extra_outputs: Vec::new() }
    }

    fn add(&mut self, name: &str, bytes: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), bytes.into()));
    }

    fn commit(mut self, model_fingerprint: Option<String>) -> Result<(), CliError> {
        let dir = &self.config.output_dir;
        let meta_name = format!("{}.run.json", self.command);
        let mut outputs: Vec<String> = self.files.iter().map(|(n, _)| dir.join(n).display().to_string()).collect();
        outputs.append(&mut self.extra_outputs);
        outputs.push(dir.join(&meta_name).display().to_string());
        let meta = RunMeta {
            command: self.command,
            config_fingerprint: self.config.fingerprint(),
            model_fingerprint,
            seeds: Seeds {
                split: self.config.data.split_seed,
                init: self.config.init_seed,
                train: self.config.train.seed,
            },
            versions: Versions {
                trajrisk: env!("CARGO_PKG_VERSION"),
                checkpoint_format: CHECKPOINT_FORMAT,
            },
            inputs: self.inputs.iter().map(|p| p.display().to_string()).collect(),
            outputs,
            config: self.config,
        };
        let meta = serde_json::to_string_pretty(&meta).expect("metadata serializes") + "\n";
        self.files.push((meta_name, meta.into_bytes()));

        guard_inputs(&self.inputs, self.files.iter().map(|(n, _)| dir.join(n)))?;
        fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
        for (name, bytes) in &self.files {
            let path = dir.join(name);
            fs::write(&path, bytes).map_err(|e| io_err(&path, e))?;
            info!("wrote {}", path.display());
        }
        Ok(())
    }
}

fn io_err(path: &Path, e: std::io::Error) -> CliError {
    CliError::Input(format!("{}: {e}", path.display()))
}

fn require_exists(paths: &[PathBuf]) -> Result<(), CliError> {
    let missing: Vec<String> = paths.iter().filter(|p| !p.exists()).map(|p| p.display().to_string()).collect();
    if missing.is_empty() {
        Ok(())
    } else {
        Err(CliError::Input(format!("missing input: {}", missing.join(", "))))
    }
}

/// Refuses to overwrite any input file.
fn guard_inputs(inputs: &[PathBuf], outputs: impl Iterator<Item = PathBuf>) -> Result<(), CliError> {
    let inputs: HashSet<PathBuf> = inputs.iter().filter_map(|p| p.canonicalize().ok()).collect();
    for out in outputs {
        if out.canonicalize().is_ok_and(|c| inputs.contains(&c)) {
            return Err(CliError::Input(format!("output {} would overwrite an input", out.display())));
        }
    }
    Ok(())
}

fn store_inputs(cfg: &RunConfig, splits: &[Split]) -> Vec<PathBuf> {
    let dir = cfg.store_dir();
    std::iter::once(dir.join(MANIFEST_FILE)).chain(splits.iter().map(|s| dir.join(s.file_name()))).collect()
}

pub fn ingest(cfg: &RunConfig) -> Result<(), CliError> {
    enum Input<'a> {
        Ngsim(&'a Path),
        Highd(&'a Path, &'a Path),
    }
    let sources: Vec<Input> = cfg
        .data
        .ngsim
        .iter()
        .map(|p| Input::Ngsim(p))
        .chain(cfg.data.highd.iter().map(|h| Input::Highd(&h.tracks, &h.meta)))
        .collect();
    if sources.is_empty() {
        return Err(CliError::Input("no input recordings; set data.ngsim or data.highd".into()));
    }
    let mut inputs = cfg.data.ngsim.clone();
    inputs.extend(cfg.data.highd.iter().flat_map(|h| [h.tracks.clone(), h.meta.clone()]));
    require_exists(&inputs)?;

    // Per-file work runs in parallel; results keep input order.
    let results: Vec<(String, Result<Vec<Sample>, DataError>)> = sources
        .par_iter()
        .map(|src| {
            let (label, rec) = match src {
                Input::Ngsim(p) => (p.display().to_string(), parse_ngsim(p)),
                Input::Highd(t, m) => (t.display().to_string(), parse_highd(t, m)),
            };
            let samples = rec.and_then(|rec: RawRecording| {
                let pre = preprocess(&rec, &cfg.preprocess)?;
                extract_windows(&pre, &cfg.preprocess.windows)
            });
            (label, samples)
        })
        .collect();

    let mut samples = Vec::new();
    let mut failures = Vec::new();
    for (label, r) in results {
        match r {
            Ok(s) => {
                info!("{label}: {} windows", s.len());
                samples.extend(s);
            }
            Err(e @ DataError::InsufficientData(_)) => return Err(CliError::Precondition(format!("{label}: {e}"))),
            Err(e) => {
                error!("{label}: {e}");
                failures.push(label);
            }
        }
    }
    if !failures.is_empty() {
        return Err(CliError::Input(format!("{} of {} input recordings failed to parse: {}", failures.len(), sources.len(), failures.join(", "))));
    }
    let mut seen = HashSet::new();
    if let Some(dup) = samples.iter().find(|s| !seen.insert(s.id.as_str())) {
        return Err(CliError::Input(format!("duplicate sample id {} (two recordings share a file name?)", dup.id)));
    }

    let split = split_dataset(&samples, cfg.data.split_seed, cfg.data.split_unit)?;
    let manifest = StoreManifest {
        counts: [split.train.len(), split.val.len(), split.test.len()],
        split,
        sources: inputs.iter().map(|p| p.display().to_string()).collect(),
        preprocessing: cfg.preprocess,
    };
    let store = cfg.store_dir();
    let store_files: Vec<PathBuf> = std::iter::once(store.join(MANIFEST_FILE)).chain(Split::ALL.iter().map(|s| store.join(s.file_name()))).collect();
    guard_inputs(&inputs, store_files.iter().cloned())?;
    write_store(&store, &samples, &manifest)?;
    info!("{} samples -> train {} / val {} / test {}", samples.len(), manifest.counts[0], manifest.counts[1], manifest.counts[2]);

    let mut art = Artifacts::new("ingest", cfg, inputs);
    art.extra_outputs = store_files.iter().map(|p| p.display().to_string()).collect();
    art.commit(None)
}

pub fn train(cfg: &RunConfig, resume: Option<&Path>, max_epochs: Option<usize>) -> Result<(), CliError> {
    let mut inputs = store_inputs(cfg, &[Split::Train, Split::Val]);
    inputs.extend(resume.map(Path::to_path_buf));
    require_exists(&inputs)?;
    let store = cfg.store_dir();
    read_manifest(&store)?;
    let (train, val) = (read_split(&store, Split::Train)?, read_split(&store, Split::Val)?);
    let ablation = cfg.ablation();

    let mut trainer = match resume {
        Some(path) => {
            let ck = Checkpoint::load(path)?;
            let expected = config_fingerprint(&cfg.model, &ablation, Some(&cfg.train));
            if ck.fingerprint != expected {
                return Err(CliError::Precondition(format!("{} was trained with a different model/ablation/train configuration", path.display())));
            }
            Trainer::resume(&train, &val, &ck)?
        }
        None => Trainer::new(&train, &val, Predictor::new(cfg.model, ablation, cfg.init_seed)?, cfg.train)?,
    };
    let mut ran = 0;
    while max_epochs.is_none_or(|m| ran < m) && trainer.run_epoch()?.is_some() {
        ran += 1;
    }
    let ck = trainer.checkpoint();
    let mut curve = Vec::new();
    write_loss_curve(&mut curve, &trainer.state().curve)?;

    let mut art = Artifacts::new("train", cfg, inputs);
    art.add("checkpoint.json", ck.to_json());
    art.add("loss.csv", curve);
    art.commit(Some(ck.fingerprint))
}

fn split_samples(cfg: &RunConfig, source: &ModelSource, split: Split) -> Result<(Vec<PathBuf>, Vec<Sample>), CliError> {
    let mut inputs = store_inputs(cfg, &[split]);
    inputs.extend(source.inputs());
    require_exists(&inputs)?;
    let samples = read_split(&cfg.store_dir(), split)?;
    if samples.is_empty() {
        return Err(CliError::Precondition(format!("the {} split is empty", split.file_name())));
    }
    Ok((inputs, samples))
}

pub fn eval(cfg: &RunConfig, source: &ModelSource, split: Split) -> Result<(), CliError> {
    let (inputs, samples) = split_samples(cfg, source, split)?;
    let model = source.load()?;
    let report = match &model {
        LoadedModel::Network(ck) => evaluate(&ck.model, &samples)?,
        LoadedModel::Baseline(b) => evaluate_baseline(*b, &samples)?,
    };
    info!("{}: rmse {:?} over {} samples", report.model, report.rmse_at, report.samples);
    let mut art = Artifacts::new("eval", cfg, inputs);
    art.add("eval.csv", report.to_csv());
    art.add("eval.json", report.to_json() + "\n");
    art.commit(model.fingerprint())
}

const PREDICT_CHUNK: usize = 256;

pub fn predict(cfg: &RunConfig, source: &ModelSource, split: Split) -> Result<(), CliError> {
    let (inputs, samples) = split_samples(cfg, source, split)?;
    let model = source.load()?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| CliError::Input(e.to_string());
    w.write_record(["sample_id", "step", "t", "x", "y", "sigma_x", "sigma_y", "rho"]).map_err(csv_err)?;
    for chunk in samples.chunks(PREDICT_CHUNK) {
        let refs: Vec<&Sample> = chunk.iter().collect();
        let rows: Vec<Vec<[f64; 5]>> = match &model {
            LoadedModel::Network(ck) => ck
                .model
                .predict_batch(&refs)?
                .into_iter()
                .map(|g| g.steps.iter().map(|p| [p.mu_x, p.mu_y, p.sigma_x, p.sigma_y, p.rho]).collect())
                .collect(),
            LoadedModel::Baseline(b) => refs
                .iter()
                .map(|s| baseline_predict(s, *b).into_iter().map(|p| [p[0], p[1], f64::NAN, f64::NAN, f64::NAN]).collect())
                .collect(),
        };
        for (s, steps) in chunk.iter().zip(rows) {
            for (k, r) in steps.iter().enumerate() {
                let t = s.t0 + (k + 1) as f64 * trajrisk_core::data::STEP;
                let cell = |v: f64| if v.is_nan() { String::new() } else { v.to_string() };
                w.write_record([s.id.clone(), (k + 1).to_string(), t.to_string(), cell(r[0]), cell(r[1]), cell(r[2]), cell(r[3]), cell(r[4])])
                    .map_err(csv_err)?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| CliError::Input(e.to_string()))?;
    let mut art = Artifacts::new("predict", cfg, inputs);
    art.add("predictions.csv", bytes);
    art.commit(model.fingerprint())
}

pub fn assess(cfg: &RunConfig, scenario: &Path, source: &ModelSource) -> Result<(), CliError> {
    let mut inputs = vec![scenario.to_path_buf()];
    inputs.extend(source.inputs());
    require_exists(&inputs)?;
    let s = Scenario::load(scenario)?;
    let model = source.load()?;
    let ov_model = match &model {
        LoadedModel::Network(ck) => OvModel::Network(&ck.model),
        LoadedModel::Baseline(b) => OvModel::Baseline(*b),
    };
    let config = AssessConfig {
        risk: cfg.risk,
        candidates: cfg.candidates.clone(),
    };
    let a = assess_scenario(&s, ov_model, &config)?;

    let mut map = Vec::new();
    a.map.write_csv(&mut map)?;
    let mut overlay = Vec::new();
    a.write_overlay(&mut overlay)?;
    let summary = serde_json::to_string_pretty(&a.summary()).map_err(|e| CliError::Numerical(e.to_string()))? + "\n";
    for ov in &a.summary().object_vehicles {
        info!("OV {}: min TTC {} s, lane-keep TTC {:?}", ov.id, ov.min_ttc, ov.lane_keep_ttc);
    }

    let mut art = Artifacts::new("assess", cfg, inputs);
    art.add("risk_map.csv", map);
    art.add("risk_map.json", a.map.header_json()? + "\n");
    art.add("summary.json", summary);
    art.add("overlay.csv", overlay);
    art.commit(model.fingerprint())
}
