//! Command-line front end: a TOML run configuration and the
//! `ingest | train | eval | ablate | sweep | density` verbs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Parser, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{AblationConfig, Model, ModelDims};
use crate::pseudo_oracle::sub_seed;
use crate::scene_data::{
    build_windows, count_trajectories, downsample, generate_synthetic, leave_one_out_split, parse_records, sdd_split, DataFormat,
    SceneWindow, SyntheticKind, ETHUCY_DT, SDD_DT, T_OBS, T_PRED,
};
use crate::social_graph::SocialMode;
use crate::train_eval::{
    density_grid, evaluate_best_of_k, evaluate_sweep, render_density_png, train_in_place, write_density_csv,
    write_loss_csv, write_sweep_csv, GridSpec, Scene, TrainConfig, SWEEP_KS,
};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// Where windows come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    Ethucy,
    Sdd,
    Synthetic,
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "ethucy" | "eth-ucy" | "eth_ucy" => Ok(Self::Ethucy),
            "sdd" => Ok(Self::Sdd),
            "synthetic" => Ok(Self::Synthetic),
            other => Err(Error::Config(format!("unknown dataset {other:?}"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneFile {
    pub name: String,
    pub path: PathBuf,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    /// Scenario kinds; windows of every kind are concatenated.
    pub kinds: Vec<SyntheticKind>,
    pub n_ped: usize,
    pub train_windows: usize,
    pub test_windows: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self { kinds: vec![SyntheticKind::Turn], n_ped: 3, train_windows: 64, test_windows: 32 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    pub format: DatasetKind,
    pub scenes: Vec<SceneFile>,
    /// Scene evaluated under leave-one-out. Without it every scene is used
    /// for both training and evaluation.
    pub held_out: Option<String>,
    /// Seconds per step after down-sampling; defaults by format.
    pub dt: Option<f64>,
    /// Keep every n-th frame; defaults to 1 for ETH/UCY and 15 for SDD.
    pub downsample: Option<usize>,
    pub stride: usize,
    pub t_obs: usize,
    pub t_pred: usize,
    pub synthetic: SyntheticSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            format: DatasetKind::Synthetic,
            scenes: Vec::new(),
            held_out: None,
            dt: None,
            downsample: None,
            stride: 1,
            t_obs: T_OBS,
            t_pred: T_PRED,
            synthetic: SyntheticSpec::default(),
        }
    }
}

impl DataConfig {
    pub fn dt(&self) -> f64 {
        self.dt.unwrap_or(match self.format {
            DatasetKind::Sdd => SDD_DT,
            _ => ETHUCY_DT,
        })
    }

    pub fn downsample_every(&self) -> usize {
        self.downsample.unwrap_or(match self.format {
            DatasetKind::Sdd => 15,
            _ => 1,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    /// Defaults to `checkpoint.json` in the output directory.
    pub checkpoint: Option<PathBuf>,
    pub density_samples: usize,
    pub density_windows: usize,
    pub density_cell: f64,
    pub density_margin: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self { k: 20, checkpoint: None, density_samples: 300, density_windows: 1, density_cell: 0.1, density_margin: 1.0 }
    }
}

/// Full run configuration. Only `seed` is required.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: DataConfig,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub model: ModelDims,
    #[serde(default)]
    pub ablation: AblationConfig,
    #[serde(default)]
    pub eval: EvalConfig,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("output")
}

/// [`TrainConfig`] without the seed, which lives at the top level.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSection {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr_main: f64,
    pub lr_pop: f64,
    pub v: usize,
    pub alpha: f64,
    pub clip_norm: f64,
}

impl Default for TrainSection {
    fn default() -> Self {
        let d = TrainConfig::default();
        Self { batch_size: d.batch_size, epochs: d.epochs, lr_main: d.lr_main, lr_pop: d.lr_pop, v: d.v, alpha: d.alpha, clip_norm: d.clip_norm }
    }
}

impl RunConfig {
    pub fn train_config(&self) -> TrainConfig {
        let t = &self.train;
        TrainConfig {
            batch_size: t.batch_size,
            epochs: t.epochs,
            lr_main: t.lr_main,
            lr_pop: t.lr_pop,
            v: t.v,
            alpha: t.alpha,
            clip_norm: t.clip_norm,
            seed: self.seed,
        }
    }

    pub fn eval_seed(&self) -> u64 {
        sub_seed(self.seed, &[0xe7a1])
    }

    pub fn checkpoint_path(&self) -> PathBuf {
        self.eval.checkpoint.clone().unwrap_or_else(|| self.output_dir.join(CHECKPOINT_FILE))
    }

    /// Resolves relative paths against `base`.
    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.output_dir);
        for s in &mut self.data.scenes {
            fix(&mut s.path);
        }
        if let Some(c) = &mut self.eval.checkpoint {
            fix(c);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.train_config().validate()?;
        self.ablation.validate()?;
        let d = &self.data;
        if d.t_obs < 2 || d.t_pred == 0 {
            return Err(Error::Config(format!("data.t_obs must be ≥ 2 and data.t_pred ≥ 1 (got {}, {})", d.t_obs, d.t_pred)));
        }
        if d.t_pred != self.model.t_pred {
            return Err(Error::Config(format!("data.t_pred = {} but model.t_pred = {}", d.t_pred, self.model.t_pred)));
        }
        if d.stride == 0 || d.downsample_every() == 0 {
            return Err(Error::Config("data.stride and data.downsample must be positive".into()));
        }
        if !(d.dt() > 0.0) {
            return Err(Error::Config(format!("data.dt must be positive, got {}", d.dt())));
        }
        if self.eval.k == 0 {
            return Err(Error::Config("eval.k must be at least 1".into()));
        }
        match d.format {
            DatasetKind::Synthetic => {
                let s = &d.synthetic;
                if s.kinds.is_empty() || s.n_ped == 0 || s.train_windows == 0 || s.test_windows == 0 {
                    return Err(Error::Config("data.synthetic needs kinds, n_ped, train_windows and test_windows > 0".into()));
                }
            }
            _ => {
                if d.scenes.is_empty() {
                    return Err(Error::Config("data.scenes is empty".into()));
                }
                for s in &d.scenes {
                    if !s.path.is_file() {
                        return Err(Error::Config(format!("data file for scene {:?} not found: {}", s.name, s.path.display())));
                    }
                }
                if let Some(h) = &d.held_out {
                    if !d.scenes.iter().any(|s| &s.name == h) {
                        return Err(Error::Config(format!("held_out scene {h:?} is not among data.scenes")));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Reads, parses and validates a configuration file. Relative paths are
/// taken relative to the file's directory.
pub fn load_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut cfg = parse_config(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    cfg.validate()?;
    Ok(cfg)
}

/// Parses configuration text without touching the file system.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
}

/// Windows split for training and evaluation.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: Vec<Scene>,
    pub test: Vec<Scene>,
}

impl Dataset {
    pub fn train_windows(&self) -> Vec<SceneWindow> {
        self.train.iter().flat_map(|s| s.windows.iter().cloned()).collect()
    }

    pub fn test_windows(&self) -> Vec<SceneWindow> {
        self.test.iter().flat_map(|s| s.windows.iter().cloned()).collect()
    }
}

fn load_scene(file: &SceneFile, data: &DataConfig) -> Result<Scene> {
    let text = fs::read_to_string(&file.path).map_err(|e| Error::io(&file.path, e))?;
    let format = match data.format {
        DatasetKind::Sdd => DataFormat::Sdd,
        _ => DataFormat::Ethucy,
    };
    let records = downsample(&parse_records(&text, format)?, data.downsample_every())?;
    let windows = build_windows(&records, data.t_obs, data.t_pred, data.stride, data.dt())?;
    Ok(Scene { name: file.name.clone(), windows })
}

pub fn load_dataset(cfg: &RunConfig) -> Result<Dataset> {
    let d = &cfg.data;
    match d.format {
        DatasetKind::Synthetic => {
            let s = &d.synthetic;
            let make = |split: u64, n: usize| -> Result<Vec<Scene>> {
                s.kinds
                    .iter()
                    .enumerate()
                    .map(|(i, &kind)| {
                        let seed = sub_seed(cfg.seed, &[0x5e7, split, i as u64]);
                        let windows = generate_synthetic(kind, s.n_ped, n, seed)?;
                        Ok(Scene { name: format!("{kind:?}").to_lowercase(), windows })
                    })
                    .collect()
            };
            Ok(Dataset { train: make(0, s.train_windows)?, test: make(1, s.test_windows)? })
        }
        DatasetKind::Ethucy | DatasetKind::Sdd => {
            let scenes = d.scenes.iter().map(|f| load_scene(f, d)).collect::<Result<Vec<_>>>()?;
            let names: Vec<String> = scenes.iter().map(|s| s.name.clone()).collect();
            let (train_names, test_names) = match (d.format, &d.held_out) {
                (_, Some(h)) => leave_one_out_split(&names, h)?,
                (DatasetKind::Sdd, None) => sdd_split(&names),
                _ => (names.clone(), names.clone()),
            };
            let pick = |wanted: &[String]| scenes.iter().filter(|s| wanted.contains(&s.name)).cloned().collect::<Vec<_>>();
            Ok(Dataset { train: pick(&train_names), test: pick(&test_names) })
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Verb {
    Ingest,
    Train,
    Eval,
    Ablate,
    Sweep,
    Density,
}

#[derive(Debug, Parser)]
#[command(name = "trajpred", about = "Pedestrian trajectory prediction: training, evaluation and ablations")]
pub struct Cli {
    pub verb: Verb,
    /// TOML run configuration.
    #[arg(short, long)]
    pub config: PathBuf,
    /// Override the dataset format.
    #[arg(long, value_enum)]
    pub dataset: Option<DatasetKind>,
    /// Override the step duration in seconds.
    #[arg(long)]
    pub dt: Option<f64>,
    /// Override the output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Use one worker thread.
    #[arg(long)]
    pub single_thread: bool,
}

/// Parses arguments, runs the verb and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run_cli(&cli) {
        Ok(summary) => {
            print!("{summary}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn run_cli(cli: &Cli) -> Result<String> {
    if cli.single_thread {
        // fails only if a pool already exists, which is fine
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
    let text = fs::read_to_string(&cli.config).map_err(|e| Error::io(&cli.config, e))?;
    let mut cfg = parse_config(&text)?;
    cfg.resolve_paths(cli.config.parent().unwrap_or(Path::new(".")));
    if let Some(d) = cli.dataset {
        cfg.data.format = d;
    }
    if let Some(dt) = cli.dt {
        cfg.data.dt = Some(dt);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    run_command(cli.verb, &cfg)
}

fn output_file(cfg: &RunConfig, name: &str) -> Result<PathBuf> {
    fs::create_dir_all(&cfg.output_dir).map_err(|e| Error::io(&cfg.output_dir, e))?;
    Ok(cfg.output_dir.join(name))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Loads the configured checkpoint and checks it against the configured architecture.
pub fn load_checked_model(cfg: &RunConfig) -> Result<Model> {
    let model = Model::load(&cfg.checkpoint_path())?;
    model.ensure_ablation(&cfg.ablation)?;
    if model.dims != cfg.model {
        return Err(Error::Checkpoint(format!("checkpoint dimensions {:?} differ from configured {:?}", model.dims, cfg.model)));
    }
    Ok(model)
}

/// Runs one verb. Every artifact is written under `cfg.output_dir`; the
/// returned text is a human-readable summary.
pub fn run_command(verb: Verb, cfg: &RunConfig) -> Result<String> {
    let mut out = String::new();
    match verb {
        Verb::Ingest => {
            let data = load_dataset(cfg)?;
            let path = output_file(cfg, "ingest.csv")?;
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["split", "scene", "windows", "trajectories"])?;
            for (split, scenes) in [("train", &data.train), ("test", &data.test)] {
                for s in scenes {
                    let (n, t) = (s.windows.len(), count_trajectories(&s.windows));
                    w.write_record([split, &s.name, &n.to_string(), &t.to_string()])?;
                    writeln!(out, "{split:<5} {:<12} windows={n} trajectories={t}", s.name).unwrap();
                }
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Verb::Train => {
            let data = load_dataset(cfg)?;
            let mut model = Model::new(cfg.model, cfg.ablation, cfg.seed)?;
            let curve = train_in_place(&mut model, &data.train_windows(), &cfg.train_config())?;
            let ckpt = output_file(cfg, CHECKPOINT_FILE)?;
            model.save(&ckpt)?;
            write_loss_csv(&output_file(cfg, "loss.csv")?, &curve)?;
            if let Some(last) = curve.last() {
                writeln!(out, "epochs={} final_total={:.6} final_variety={:.6}", curve.len(), last.total, last.variety).unwrap();
            }
            writeln!(out, "checkpoint {}", ckpt.display()).unwrap();
        }
        Verb::Eval => {
            let model = load_checked_model(cfg)?;
            let data = load_dataset(cfg)?;
            let report = evaluate_best_of_k(&model, &data.test, cfg.eval.k, cfg.eval_seed())?;
            write_text(&output_file(cfg, "eval_report.txt")?, &report.to_text())?;
            report.write_csv(&output_file(cfg, "eval_report.csv")?)?;
            out.push_str(&report.to_text());
            eprintln!("evaluation took {:.2}s", report.runtime_secs);
        }
        Verb::Ablate => {
            let data = load_dataset(cfg)?;
            let train = data.train_windows();
            let path = output_file(cfg, "ablation.csv")?;
            let mut w = csv::Writer::from_path(&path)?;
            w.write_record(["TA", "GA", "HSA", "SSA", "POP", "ade", "fde"])?;
            let mark = |b: bool| if b { "x" } else { "" };
            for (row, ablation) in AblationConfig::ablation_rows().into_iter().enumerate() {
                let ablation = AblationConfig { per_step_social: cfg.ablation.per_step_social, ..ablation };
                let mut model = Model::new(cfg.model, ablation, cfg.seed)?;
                train_in_place(&mut model, &train, &cfg.train_config())?;
                let r = evaluate_best_of_k(&model, &data.test, cfg.eval.k, cfg.eval_seed())?;
                w.write_record([
                    mark(ablation.use_ta),
                    mark(ablation.use_ga),
                    mark(ablation.social_mode == SocialMode::Hard),
                    mark(ablation.social_mode == SocialMode::Soft),
                    mark(ablation.use_pop),
                    &format!("{:?}", r.ade),
                    &format!("{:?}", r.fde),
                ])?;
                writeln!(out, "{:>2} {:<16} ade={:.4} fde={:.4}", row + 1, ablation.to_string(), r.ade, r.fde).unwrap();
            }
            w.flush().map_err(|e| Error::io(&path, e))?;
        }
        Verb::Sweep => {
            let model = load_checked_model(cfg)?;
            let data = load_dataset(cfg)?;
            let reports = evaluate_sweep(&model, &data.test, &SWEEP_KS, cfg.eval_seed())?;
            write_sweep_csv(&output_file(cfg, "sweep.csv")?, &reports)?;
            for r in &reports {
                writeln!(out, "k={:<3} ade={:.4} fde={:.4}", r.sampling_number, r.ade, r.fde).unwrap();
            }
        }
        Verb::Density => {
            let model = load_checked_model(cfg)?;
            let data = load_dataset(cfg)?;
            let windows = data.test_windows();
            if windows.is_empty() {
                return Err(Error::Config("no test windows for density maps".into()));
            }
            for (i, w) in windows.iter().take(cfg.eval.density_windows.max(1)).enumerate() {
                let grid = GridSpec::covering(w, cfg.eval.density_cell, cfg.eval.density_margin)?;
                let seed = sub_seed(cfg.eval_seed(), &[i as u64]);
                let grids = density_grid(&model, w, cfg.eval.density_samples, &grid, seed)?;
                write_density_csv(&output_file(cfg, &format!("density_{i:03}.csv"))?, &grid, &grids, &w.ped_ids)?;
                render_density_png(&output_file(cfg, &format!("density_{i:03}.png"))?, &grid, &grids, w)?;
                writeln!(out, "window {i}: {} pedestrians, grid {}x{}", w.n_peds(), grid.nx, grid.ny).unwrap();
            }
        }
    }
    Ok(out)
}

/// Writes a fully spelled-out default configuration.
pub fn default_config_text(seed: u64) -> String {
    let cfg = RunConfig {
        seed,
        output_dir: default_output_dir(),
        data: DataConfig::default(),
        train: TrainSection::default(),
        model: ModelDims::default(),
        ablation: AblationConfig::default(),
        eval: EvalConfig::default(),
    };
    toml::to_string(&cfg).expect("config serializes")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_only_config_gets_paper_defaults() {
        let cfg = parse_config("seed = 3").unwrap();
        let t = cfg.train_config();
        assert_eq!((t.batch_size, t.epochs, t.v), (64, 400, 20));
        assert_eq!((t.lr_main, t.lr_pop, t.alpha), (1e-3, 1e-4, 10.0));
        assert_eq!(cfg.model.hidden, 32);
        assert_eq!(cfg.model.latent_dim(), 16);
        assert_eq!((cfg.data.t_obs, cfg.data.t_pred), (8, 12));
        assert_eq!(cfg.ablation, AblationConfig::full());
        cfg.validate().unwrap();
    }

    #[test]
    fn overrides_apply() {
        let cfg = parse_config("seed = 1\n[train]\nv = 5\n").unwrap();
        assert_eq!(cfg.train_config().v, 5);
    }

    #[test]
    fn misspelled_key_is_named() {
        let err = parse_config("seed = 1\n[train]\nepcohs = 5\n").unwrap_err().to_string();
        assert!(err.contains("epcohs"), "{err}");
        let err = parse_config("seed = 1\nsede = 2\n").unwrap_err().to_string();
        assert!(err.contains("sede"), "{err}");
    }

    #[test]
    fn seed_is_mandatory() {
        let err = parse_config("").unwrap_err().to_string();
        assert!(err.contains("seed"), "{err}");
    }

    #[test]
    fn missing_data_file_is_rejected() {
        let cfg = parse_config("seed = 1\n[data]\nformat = \"ethucy\"\nscenes = [{ name = \"ETH\", path = \"/nonexistent/eth.txt\" }]\n").unwrap();
        assert!(cfg.validate().unwrap_err().to_string().contains("not found"));
    }

    #[test]
    fn default_text_round_trips() {
        let text = default_config_text(9);
        let cfg = parse_config(&text).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.train, TrainSection::default());
    }
}
