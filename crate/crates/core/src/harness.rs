//! Scenario runner, results tables and figure rendering.
//!
//! A scenario is a declarative JSON file: one clean cube (a dataset file or a
//! synthetic phantom), one corruption recipe, a list of methods and a list of
//! seeds. Every (seed, method) pair is an independent job writing into its own
//! directory; the manifest records everything needed to replay the run.
//!
//! Run directory layout:
//!
//! ```text
//! <out>/manifest.json
//! <out>/clean.{json,raw}
//! <out>/seed-<s>/noisy.{json,raw}
//! <out>/seed-<s>/sigma.json
//! <out>/seed-<s>/<method>/estimate.{json,raw}
//! <out>/seed-<s>/<method>/trace.csv
//! <out>/seed-<s>/<method>/metrics.json
//! ```

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::cube::{evenly_spaced_bands, load_cube, normalize, save_cube, HsiCube};
use crate::error::{HsiError, Result};
use crate::losses::{LossKind, LossMode, DEFAULT_BETA, DEFAULT_EPSILON};
use crate::metrics::{self, MetricsReport};
use crate::net::{DhipModel, NetworkConfig};
use crate::noise::{self, NoiseSpec};
use crate::phantom::{self, PhantomConfig};
use crate::render::{self, Series};
use crate::rng::derive_seed;
use crate::sigma::estimate_sigma;
use crate::train::{self, InputInit, Observer, TraceRecord, TrainConfig, TrainingTrace};

/// Directory that relative dataset paths are resolved against.
pub const DATA_ROOT_ENV: &str = "HSI_DATA_ROOT";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

/// Where the clean cube comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetSource {
    /// Native cube header (`.json`) or its stem.
    Path(PathBuf),
    Phantom(PhantomConfig),
}

impl DatasetSource {
    /// Absolute path for `Path` sources, resolved against [`DATA_ROOT_ENV`].
    pub fn resolved(&self) -> DatasetSource {
        match self {
            DatasetSource::Path(p) if p.is_relative() => match std::env::var_os(DATA_ROOT_ENV) {
                Some(root) => DatasetSource::Path(Path::new(&root).join(p)),
                None => self.clone(),
            },
            _ => self.clone(),
        }
    }

    pub fn load(&self) -> Result<HsiCube> {
        match self.resolved() {
            DatasetSource::Path(p) => load_cube(p),
            DatasetSource::Phantom(cfg) => phantom::generate(&cfg),
        }
    }
}

/// Spectral selection: a count of evenly spaced bands or an explicit list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum BandSelection {
    Count(usize),
    List(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct CropSpec {
    pub row: usize,
    pub col: usize,
    /// Defaults to the remaining height.
    pub height: Option<usize>,
    pub width: Option<usize>,
    /// Defaults to all bands.
    pub bands: Option<BandSelection>,
}

impl CropSpec {
    pub fn apply(&self, cube: &HsiCube) -> Result<HsiCube> {
        let (h, w, b) = cube.shape();
        let bad = |msg: String| HsiError::Config(format!("invalid crop: {msg}"));
        if self.row >= h || self.col >= w {
            return Err(bad(format!("origin ({}, {}) outside {h}x{w}", self.row, self.col)));
        }
        let height = self.height.unwrap_or(h - self.row);
        let width = self.width.unwrap_or(w - self.col);
        let bands = match &self.bands {
            None => (0..b).collect(),
            Some(BandSelection::Count(k)) => {
                if *k == 0 || *k > b {
                    return Err(bad(format!("{k} bands requested from {b}")));
                }
                evenly_spaced_bands(b, *k)
            }
            Some(BandSelection::List(list)) => list.clone(),
        };
        cube.crop(self.row, self.col, height, width, &bands).map_err(|e| bad(e.to_string()))
    }
}

/// Which σ the divergence weight uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSource {
    /// Wavelet MAD estimate from the corrupted cube.
    #[default]
    Estimate,
    /// The standard deviation used to synthesize the Gaussian component.
    Oracle,
}

/// One column of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodConfig {
    pub name: String,
    pub loss: LossKind,
    #[serde(default = "default_beta")]
    pub beta: f64,
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    #[serde(default)]
    pub sigma_source: SigmaSource,
    /// Fixed σ, overriding `sigma_source`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sigma: Option<f64>,
    /// Defaults to true for the unified loss only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimize_input: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub input_init: Option<InputInit>,
}

fn default_beta() -> f64 {
    DEFAULT_BETA
}

fn default_epsilon() -> f64 {
    DEFAULT_EPSILON
}

impl MethodConfig {
    pub fn new(name: &str, loss: LossKind) -> Self {
        Self {
            name: name.to_string(),
            loss,
            beta: DEFAULT_BETA,
            epsilon: DEFAULT_EPSILON,
            sigma_source: SigmaSource::Estimate,
            sigma: None,
            optimize_input: None,
            input_init: None,
        }
    }

    /// SURE-DHIP, HLF-DHIP, Proposed and the plain L2 fit.
    pub fn standard() -> Vec<Self> {
        vec![
            Self::new("SURE-DHIP", LossKind::Sure),
            Self::new("HLF-DHIP", LossKind::SmoothL1),
            Self::new("Proposed", LossKind::Unified),
            Self::new("L2", LossKind::L2),
        ]
    }

    pub fn slug(&self) -> String {
        let s: String =
            self.name.chars().map(|c| if c.is_ascii_alphanumeric() { c.to_ascii_lowercase() } else { '-' }).collect();
        s.trim_matches('-').to_string()
    }

    fn sigma(&self, estimate: f64, oracle: f64) -> f64 {
        match (self.sigma, self.sigma_source) {
            (Some(s), _) => s,
            (None, SigmaSource::Estimate) => estimate,
            (None, SigmaSource::Oracle) => oracle,
        }
    }

    /// Full training configuration for one seed.
    pub fn train_config(&self, settings: &TrainSettings, seed: u64, estimate: f64, oracle: f64) -> TrainConfig {
        let loss = LossMode { kind: self.loss, beta: self.beta, epsilon: self.epsilon, sigma: self.sigma(estimate, oracle) };
        let mut cfg = TrainConfig::for_loss(loss);
        cfg.iterations = settings.iterations;
        cfg.learning_rate_theta = settings.learning_rate_theta;
        cfg.learning_rate_z = settings.learning_rate_z;
        cfg.eval_every = settings.eval_every;
        cfg.seed = seed;
        cfg.input_init = self.input_init.unwrap_or(settings.input_init);
        if let Some(o) = self.optimize_input {
            cfg.optimize_input = o;
        }
        cfg
    }
}

fn default_methods() -> Vec<MethodConfig> {
    MethodConfig::standard()
}

/// Optimizer settings shared by all methods of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSettings {
    pub iterations: usize,
    pub learning_rate_theta: f64,
    pub learning_rate_z: f64,
    pub eval_every: usize,
    pub input_init: InputInit,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self { iterations: 1500, learning_rate_theta: 0.01, learning_rate_z: 0.01, eval_every: 10, input_init: InputInit::NoisyY }
    }
}

/// Network used for desk-scale runs: four scales of 16 channels, inputs
/// padded to a multiple of 16.
pub fn desk_network() -> NetworkConfig {
    NetworkConfig { pad_input: true, ..NetworkConfig::uniform(4, 16, 16, 4) }
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioConfig {
    pub name: String,
    pub dataset: DatasetSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub crop: Option<CropSpec>,
    pub noise: NoiseSpec,
    #[serde(default = "default_methods")]
    pub methods: Vec<MethodConfig>,
    #[serde(default)]
    pub train: TrainSettings,
    #[serde(default = "desk_network")]
    pub network: NetworkConfig,
    /// Defaults to `runs/<name>`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    /// Composite bands, indexed within the cropped cube.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rgb_bands: Option<[usize; 3]>,
}

impl ScenarioConfig {
    /// Desk-scale defaults around a clean source and a corruption recipe.
    pub fn new(name: &str, dataset: DatasetSource, noise: NoiseSpec) -> Self {
        Self {
            name: name.to_string(),
            dataset,
            crop: None,
            noise,
            methods: default_methods(),
            train: TrainSettings::default(),
            network: desk_network(),
            output_dir: None,
            seeds: default_seeds(),
            rgb_bands: None,
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| HsiError::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| HsiError::Config(format!("{}: {e}", path.display())))
    }

    pub fn output_dir(&self) -> PathBuf {
        self.output_dir.clone().unwrap_or_else(|| Path::new("runs").join(&self.name))
    }

    /// Checks that need no data.
    pub fn validate(&self) -> Result<()> {
        let cfg = |m: String| Err(HsiError::Config(m));
        if self.seeds.is_empty() {
            return cfg("at least one seed is required".into());
        }
        if self.methods.is_empty() {
            return cfg("at least one method is required".into());
        }
        let mut slugs = std::collections::BTreeSet::new();
        for m in &self.methods {
            if m.slug().is_empty() || !slugs.insert(m.slug()) {
                return cfg(format!("method name {:?} is empty or not unique", m.name));
            }
            if let Some(s) = m.sigma {
                if !(s >= 0.0 && s.is_finite()) {
                    return cfg(format!("{}: sigma must be non-negative, got {s}", m.name));
                }
            }
            if !(m.beta > 0.0 && m.epsilon > 0.0) {
                return cfg(format!("{}: beta and epsilon must be positive", m.name));
            }
        }
        let probe = MethodConfig::new("probe", LossKind::L2).train_config(&self.train, 0, 0.0, 0.0);
        probe.validate()?;
        self.network.validate()?;
        Ok(())
    }

    /// Loads, normalizes and crops the clean cube.
    pub fn clean_cube(&self) -> Result<HsiCube> {
        let full = self.dataset.load()?;
        let full = if full.is_normalized() { full } else { normalize(&full) };
        let cube = match &self.crop {
            Some(c) => c.apply(&full)?,
            None => full,
        };
        self.noise.validate(cube.bands())?;
        if let Some(rgb) = self.rgb_bands {
            if rgb.iter().any(|&b| b >= cube.bands()) {
                return Err(HsiError::Config(format!("rgb_bands {rgb:?} out of range for {} bands", cube.bands())));
            }
        }
        let (h, w, b) = cube.shape();
        DhipModel::<f32>::new(self.network.clone(), (h, w, b), 0)?;
        Ok(cube)
    }
}

/// Noise seed for replicate `seed`.
pub fn replicate_noise_seed(spec_seed: u64, seed: u64) -> u64 {
    derive_seed(spec_seed, "harness/noise", seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Ok,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodRecord {
    pub name: String,
    pub dir: PathBuf,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub train: TrainConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub peak_mpsnr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics: Option<MetricsReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedRecord {
    pub seed: u64,
    pub noise_seed: u64,
    pub status: Status,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub sigma_oracle: f64,
    pub sigma_estimate: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noisy_metrics: Option<MetricsReport>,
    pub methods: Vec<MethodRecord>,
}

/// Everything needed to replay a run, plus its outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub version: u32,
    pub crate_version: String,
    pub scenario: ScenarioConfig,
    pub shape: (usize, usize, usize),
    pub seeds: Vec<SeedRecord>,
}

impl Manifest {
    pub fn load(run_dir: impl AsRef<Path>) -> Result<Self> {
        let path = run_dir.as_ref().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| HsiError::io(&path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    fn save(&self, run_dir: &Path) -> Result<()> {
        write_json(&run_dir.join(MANIFEST_FILE), self)
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text + "\n").map_err(|e| HsiError::io(path, e))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| HsiError::io(path, e))
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Concurrent jobs; 0 and 1 both mean sequential.
    pub jobs: usize,
    /// Overrides the scenario's output directory.
    pub out: Option<PathBuf>,
}

struct Collector(Vec<TraceRecord>);

impl Observer for Collector {
    fn on_record(&mut self, record: &TraceRecord) {
        self.0.push(record.clone());
    }
}

struct Job<'a> {
    seed: usize,
    method: &'a MethodConfig,
    train: TrainConfig,
    dir: PathBuf,
    noisy: &'a HsiCube,
}

fn run_job(job: &Job, clean: &HsiCube, network: &NetworkConfig) -> MethodRecord {
    let mut record = MethodRecord {
        name: job.method.name.clone(),
        dir: job.dir.clone(),
        status: Status::Failed,
        error: None,
        train: job.train.clone(),
        peak_mpsnr: None,
        metrics: None,
    };
    let mut collector = Collector(Vec::new());
    let result = (|| -> Result<MetricsReport> {
        create_dir(&job.dir)?;
        job.train.validate()?;
        let mut model = DhipModel::<f32>::new(network.clone(), clean.shape(), job.train.seed)?;
        let out = train::train_observed(&mut model, job.noisy, &job.train, Some(clean), &mut collector)?;
        save_cube(&out.estimate, job.dir.join("estimate"))?;
        let report = metrics::evaluate(clean, &out.estimate)?;
        write_json(&job.dir.join("metrics.json"), &report)?;
        Ok(report)
    })();
    let trace = TrainingTrace { records: collector.0 };
    // Partial traces survive failures.
    let _ = fs::write(job.dir.join("trace.csv"), trace.to_csv());
    record.peak_mpsnr = trace.peak().and_then(|r| r.mpsnr);
    match result {
        Ok(report) => {
            record.status = Status::Ok;
            record.metrics = Some(report);
        }
        Err(e) => record.error = Some(e.to_string()),
    }
    record
}

/// Runs every (seed, method) job of a scenario and writes the run directory.
/// Configuration and data errors are returned before any training starts;
/// failures of individual seeds or methods are recorded in the manifest.
pub fn run_scenario(cfg: &ScenarioConfig, opts: &RunOptions) -> Result<PathBuf> {
    cfg.validate()?;
    let clean = cfg.clean_cube()?;
    let out = opts.out.clone().unwrap_or_else(|| cfg.output_dir());
    create_dir(&out)?;
    save_cube(&clean, out.join("clean"))?;

    let mut scenario = cfg.clone();
    scenario.dataset = cfg.dataset.resolved();
    scenario.output_dir = Some(out.clone());

    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    let mut noisy_cubes = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let dir = out.join(format!("seed-{seed}"));
        let noise_seed = replicate_noise_seed(cfg.noise.seed, seed);
        let mut rec = SeedRecord {
            seed,
            noise_seed,
            status: Status::Failed,
            error: None,
            sigma_oracle: 0.0,
            sigma_estimate: 0.0,
            noisy_metrics: None,
            methods: Vec::new(),
        };
        let prepared = (|| -> Result<HsiCube> {
            create_dir(&dir)?;
            let spec = NoiseSpec { seed: noise_seed, ..cfg.noise.clone() };
            let (noisy, sigma_oracle) = noise::apply_spec(&clean, &spec)?;
            save_cube(&noisy, dir.join("noisy"))?;
            let est = estimate_sigma(&noisy)?;
            write_json(
                &dir.join("sigma.json"),
                &serde_json::json!({ "pooled": est.pooled, "per_band": est.per_band, "oracle": sigma_oracle }),
            )?;
            rec.sigma_oracle = sigma_oracle;
            rec.sigma_estimate = est.pooled;
            rec.noisy_metrics = Some(metrics::evaluate(&clean, &noisy)?);
            Ok(noisy)
        })();
        match prepared {
            Ok(noisy) => {
                rec.status = Status::Ok;
                noisy_cubes.push(Some(noisy));
            }
            Err(e) => {
                rec.error = Some(e.to_string());
                noisy_cubes.push(None);
            }
        }
        seeds.push(rec);
    }

    let mut jobs = Vec::new();
    for (i, rec) in seeds.iter().enumerate() {
        let Some(noisy) = noisy_cubes[i].as_ref() else { continue };
        for method in &cfg.methods {
            jobs.push(Job {
                seed: i,
                method,
                train: method.train_config(&cfg.train, rec.seed, rec.sigma_estimate, rec.sigma_oracle),
                dir: out.join(format!("seed-{}", rec.seed)).join(method.slug()),
                noisy,
            });
        }
    }
    let results: Vec<Mutex<Option<MethodRecord>>> = jobs.iter().map(|_| Mutex::new(None)).collect();
    let next = AtomicUsize::new(0);
    let workers = opts.jobs.clamp(1, jobs.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(job) = jobs.get(k) else { break };
                let rec = run_job(job, &clean, &cfg.network);
                *results[k].lock().unwrap() = Some(rec);
            });
        }
    });
    for (job, slot) in jobs.iter().zip(results) {
        if let Some(rec) = slot.into_inner().unwrap() {
            seeds[job.seed].methods.push(rec);
        }
    }

    let manifest = Manifest {
        version: MANIFEST_VERSION,
        crate_version: env!("CARGO_PKG_VERSION").to_string(),
        scenario,
        shape: clean.shape(),
        seeds,
    };
    manifest.save(&out)?;
    Ok(out)
}

/// Re-runs the scenario recorded in `run_dir` into `out`.
pub fn replay(run_dir: impl AsRef<Path>, out: impl AsRef<Path>, jobs: usize) -> Result<PathBuf> {
    let manifest = Manifest::load(run_dir)?;
    run_scenario(&manifest.scenario, &RunOptions { jobs, out: Some(out.as_ref().to_path_buf()) })
}

/// Method column label for the corrupted input.
pub const NOISY_COLUMN: &str = "Noisy";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cell {
    /// Means over successful seeds.
    pub mpsnr: Option<f64>,
    pub mssim: Option<f64>,
    pub seeds_ok: usize,
    pub seeds_total: usize,
    pub best_mpsnr: bool,
    pub best_mssim: bool,
    /// Trace CSVs behind the cell.
    pub traces: Vec<PathBuf>,
    pub manifest: PathBuf,
}

impl Cell {
    pub fn failed(&self) -> bool {
        self.seeds_ok == 0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TableRow {
    pub scenario: String,
    /// Gaussian SNR, absent for scenarios without a Gaussian component.
    pub snr_db: Option<f64>,
    pub cells: BTreeMap<String, Cell>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ResultsTable {
    /// Column order: the noisy baseline, then methods in first-seen order.
    pub methods: Vec<String>,
    pub rows: Vec<TableRow>,
}

fn mean(v: &[f64]) -> Option<f64> {
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

fn fmt_snr(snr: Option<f64>) -> String {
    snr.map_or_else(|| "-".to_string(), |s| format!("{s}"))
}

/// Collects the manifests of `run_dirs` into one table. Unreadable run
/// directories become rows of failed cells.
pub fn build_tables(run_dirs: &[PathBuf]) -> ResultsTable {
    let mut table = ResultsTable { methods: vec![NOISY_COLUMN.to_string()], rows: Vec::new() };
    let mut pending: Vec<(TableRow, Vec<String>)> = Vec::new();
    for dir in run_dirs {
        let manifest_path = dir.join(MANIFEST_FILE);
        let Ok(manifest) = Manifest::load(dir) else {
            let name = dir.file_name().map_or_else(|| dir.display().to_string(), |n| n.to_string_lossy().into_owned());
            pending.push((TableRow { scenario: name, snr_db: None, cells: BTreeMap::new() }, Vec::new()));
            continue;
        };
        let total = manifest.seeds.len();
        let mut row =
            TableRow { scenario: manifest.scenario.name.clone(), snr_db: manifest.scenario.noise.gaussian_snr_db, cells: BTreeMap::new() };
        let noisy: Vec<&MetricsReport> = manifest.seeds.iter().filter_map(|s| s.noisy_metrics.as_ref()).collect();
        row.cells.insert(
            NOISY_COLUMN.to_string(),
            Cell {
                mpsnr: mean(&noisy.iter().map(|m| m.mpsnr).collect::<Vec<_>>()),
                mssim: mean(&noisy.iter().map(|m| m.mssim).filter(|v| v.is_finite()).collect::<Vec<_>>()),
                seeds_ok: noisy.len(),
                seeds_total: total,
                best_mpsnr: false,
                best_mssim: false,
                traces: Vec::new(),
                manifest: manifest_path.clone(),
            },
        );
        let mut names = Vec::new();
        for m in &manifest.scenario.methods {
            names.push(m.name.clone());
            let recs: Vec<&MethodRecord> =
                manifest.seeds.iter().flat_map(|s| s.methods.iter()).filter(|r| r.name == m.name).collect();
            let ok: Vec<&MetricsReport> =
                recs.iter().filter(|r| r.status == Status::Ok).filter_map(|r| r.metrics.as_ref()).collect();
            row.cells.insert(
                m.name.clone(),
                Cell {
                    mpsnr: mean(&ok.iter().map(|r| r.mpsnr).collect::<Vec<_>>()),
                    mssim: mean(&ok.iter().map(|r| r.mssim).filter(|v| v.is_finite()).collect::<Vec<_>>()),
                    seeds_ok: ok.len(),
                    seeds_total: total,
                    best_mpsnr: false,
                    best_mssim: false,
                    traces: recs.iter().map(|r| r.dir.join("trace.csv")).collect(),
                    manifest: manifest_path.clone(),
                },
            );
        }
        pending.push((row, names));
    }
    for (_, names) in &pending {
        for n in names {
            if !table.methods.contains(n) {
                table.methods.push(n.clone());
            }
        }
    }
    for (mut row, _) in pending {
        for m in &table.methods {
            row.cells.entry(m.clone()).or_insert_with(|| Cell {
                mpsnr: None,
                mssim: None,
                seeds_ok: 0,
                seeds_total: 0,
                best_mpsnr: false,
                best_mssim: false,
                traces: Vec::new(),
                manifest: PathBuf::new(),
            });
        }
        flag_best(&mut row);
        table.rows.push(row);
    }
    table
}

fn flag_best(row: &mut TableRow) {
    type Get = fn(&Cell) -> Option<f64>;
    type Set = fn(&mut Cell);
    let columns: [(Get, Set); 2] = [(|c| c.mpsnr, |c| c.best_mpsnr = true), (|c| c.mssim, |c| c.best_mssim = true)];
    for (get, set) in columns {
        let best = row
            .cells
            .iter()
            .filter(|(k, c)| k.as_str() != NOISY_COLUMN && !c.failed())
            .filter_map(|(_, c)| get(c))
            .fold(f64::NEG_INFINITY, f64::max);
        if best.is_finite() {
            for (k, c) in row.cells.iter_mut() {
                if k != NOISY_COLUMN && !c.failed() && get(c) == Some(best) {
                    set(c);
                }
            }
        }
    }
}

impl ResultsTable {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("scenario,snr_db,method,mpsnr,mssim,seeds_ok,seeds_total,status,best_mpsnr,best_mssim,manifest,traces\n");
        let opt = |v: Option<f64>| v.map_or_else(String::new, |x| format!("{x:.4}"));
        for row in &self.rows {
            for m in &self.methods {
                let c = &row.cells[m];
                let traces: Vec<String> = c.traces.iter().map(|p| p.display().to_string()).collect();
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{},{},{},{},{},{}",
                    row.scenario,
                    row.snr_db.map_or_else(String::new, |v| v.to_string()),
                    m,
                    opt(c.mpsnr),
                    opt(c.mssim),
                    c.seeds_ok,
                    c.seeds_total,
                    if c.failed() { "failed" } else { "ok" },
                    c.best_mpsnr,
                    c.best_mssim,
                    c.manifest.display(),
                    traces.join(";")
                );
            }
        }
        s
    }

    /// Fixed-width text table, two lines (MPSNR, MSSIM) per row. Best
    /// values are starred; failed cells read `failed`.
    pub fn to_text(&self) -> String {
        let width = self.methods.iter().map(|m| m.len()).max().unwrap_or(0).max(9) + 2;
        let lead = self.rows.iter().map(|r| r.scenario.len()).max().unwrap_or(0).max(8) + 2;
        let mut s = format!("{:<lead$}{:>6}  {:<6}", "scenario", "snr", "metric");
        for m in &self.methods {
            let _ = write!(s, "{m:>width$}");
        }
        s.push('\n');
        for row in &self.rows {
            for metric in ["MPSNR", "MSSIM"] {
                let _ = write!(s, "{:<lead$}{:>6}  {:<6}", row.scenario, fmt_snr(row.snr_db), metric);
                for m in &self.methods {
                    let c = &row.cells[m];
                    let (v, best) = if metric == "MPSNR" { (c.mpsnr, c.best_mpsnr) } else { (c.mssim, c.best_mssim) };
                    let text = match v {
                        _ if c.failed() => "failed".to_string(),
                        Some(x) if metric == "MPSNR" => format!("{x:.2}{}", if best { "*" } else { "" }),
                        Some(x) => format!("{x:.4}{}", if best { "*" } else { "" }),
                        None => "-".to_string(),
                    };
                    let _ = write!(s, "{text:>width$}");
                }
                s.push('\n');
            }
        }
        s
    }
}

/// False-color composites of the clean, noisy and estimated cubes, and
/// per-seed MPSNR and NMSE curves. Returns the files written.
pub fn render_outputs(run_dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let run_dir = run_dir.as_ref();
    let manifest = Manifest::load(run_dir)?;
    let clean = load_cube(run_dir.join("clean"))?;
    let rgb = manifest.scenario.rgb_bands.unwrap_or_else(|| render::default_rgb_bands(clean.bands()));
    let mut written = Vec::new();
    let mut composite = |cube: &HsiCube, path: PathBuf| -> Result<()> {
        render::save_false_color(cube, rgb, &path)?;
        written.push(path);
        Ok(())
    };
    composite(&clean, run_dir.join("clean.png"))?;
    for seed in &manifest.seeds {
        let dir = run_dir.join(format!("seed-{}", seed.seed));
        if let Ok(noisy) = load_cube(dir.join("noisy")) {
            composite(&noisy, dir.join("noisy.png"))?;
        }
        for m in seed.methods.iter().filter(|m| m.status == Status::Ok) {
            composite(&load_cube(m.dir.join("estimate"))?, m.dir.join("estimate.png"))?;
        }
    }
    for seed in &manifest.seeds {
        let dir = run_dir.join(format!("seed-{}", seed.seed));
        let traces: Vec<(String, TrainingTrace)> = seed
            .methods
            .iter()
            .filter_map(|m| {
                let text = fs::read_to_string(m.dir.join("trace.csv")).ok()?;
                Some((m.name.clone(), TrainingTrace::from_csv(&text).ok()?))
            })
            .collect();
        if traces.is_empty() {
            continue;
        }
        type Pick = fn(&TraceRecord) -> Option<f64>;
        let plots: [(&str, &str, Pick); 2] = [("mpsnr", "MPSNR (dB)", |r| r.mpsnr), ("nmse", "NMSE", |r| r.nmse)];
        for (file, label, pick) in plots {
            let series: Vec<Series> = traces
                .iter()
                .map(|(name, t)| Series {
                    name: name.clone(),
                    points: t.records.iter().filter_map(|r| pick(r).map(|v| (r.iteration as f64, v))).collect(),
                })
                .collect();
            let title = format!("{} (seed {})", manifest.scenario.name, seed.seed);
            let path = dir.join(format!("{file}.svg"));
            fs::write(&path, render::line_plot_svg(&title, "iteration", label, &series))
                .map_err(|e| HsiError::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
