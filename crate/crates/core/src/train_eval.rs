//! Losses, the training loop, ADE/FDE metrics, best-of-k evaluation, the
//! constant-velocity baseline and density maps.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::{branch_heads, branch_kl, forward_batch, AblationConfig, Batch, Model, ModelDims};
use crate::nn::{Adam, Binding};
use crate::pseudo_oracle::{sub_seed, Branch, Stage};
use crate::scene_data::{Point, SceneWindow};
use crate::tape::{Graph, Matrix, Var};

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Mean per-step Euclidean distance between two equally long trajectories.
fn mean_distance(a: &[Point], b: &[Point]) -> f64 {
    a.iter().zip(b).map(|(p, q)| dist(*p, *q)).sum::<f64>() / a.len() as f64
}

/// Best-of-`v` loss: the smallest mean per-step distance of any sample to the ground truth.
pub fn variety_loss(gt: &[Point], samples: &[Vec<Point>]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Config("variety loss needs at least one sample".into()));
    }
    if samples.iter().any(|s| s.len() != gt.len()) {
        return Err(Error::Shape("sample length differs from ground truth".into()));
    }
    Ok(samples.iter().map(|s| mean_distance(gt, s)).fold(f64::INFINITY, f64::min))
}

/// `mean_i (variety_i + alpha · kl_i)`
pub fn total_loss(variety: &[f64], kl: &[f64], alpha: f64) -> Result<f64> {
    if variety.len() != kl.len() {
        return Err(Error::Shape(format!("{} variety terms vs {} KL terms", variety.len(), kl.len())));
    }
    if variety.is_empty() {
        return Err(Error::Shape("no pedestrians".into()));
    }
    Ok(variety.iter().zip(kl).map(|(v, k)| v + alpha * k).sum::<f64>() / variety.len() as f64)
}

/// `(ADE, FDE)` of a predicted trajectory.
pub fn compute_metrics(pred: &[Point], gt: &[Point]) -> Result<(f64, f64)> {
    if pred.len() != gt.len() {
        return Err(Error::Shape(format!("prediction has {} steps, ground truth {}", pred.len(), gt.len())));
    }
    if pred.is_empty() {
        return Err(Error::Shape("empty trajectories".into()));
    }
    Ok((mean_distance(pred, gt), dist(*pred.last().unwrap(), *gt.last().unwrap())))
}

/// Constant-velocity baseline: repeat the last observed displacement.
pub fn cvm_predict(window: &SceneWindow) -> Result<Vec<Vec<Point>>> {
    if window.t_obs() < 2 {
        return Err(Error::Shape("constant-velocity prediction needs two observed steps".into()));
    }
    Ok((0..window.n_peds())
        .map(|i| {
            let o = &window.obs[i];
            let (a, b) = (o[o.len() - 2], o[o.len() - 1]);
            let d = [b[0] - a[0], b[1] - a[1]];
            (1..=window.t_pred()).map(|s| [b[0] + s as f64 * d[0], b[1] + s as f64 * d[1]]).collect()
        })
        .collect())
}

/// ADE/FDE of the constant-velocity baseline, averaged like [`evaluate_best_of_k`].
pub fn cvm_metrics(windows: &[SceneWindow]) -> Result<(f64, f64)> {
    if windows.is_empty() {
        return Err(Error::Config("no windows".into()));
    }
    let mut acc = (0.0, 0.0);
    for w in windows {
        let n = w.n_peds() as f64;
        for (pred, gt) in cvm_predict(w)?.iter().zip(&w.fut) {
            let (a, f) = compute_metrics(pred, gt)?;
            acc = (acc.0 + a / n, acc.1 + f / n);
        }
    }
    let m = windows.len() as f64;
    Ok((acc.0 / m, acc.1 / m))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Windows per optimizer step.
    pub batch_size: usize,
    pub epochs: usize,
    /// Learning rate of the encoder, social module and decoder.
    pub lr_main: f64,
    /// Learning rate of the latent predictor.
    pub lr_pop: f64,
    /// Samples per pedestrian in the variety loss.
    pub v: usize,
    /// Weight of the KL term.
    pub alpha: f64,
    /// Global gradient-norm clip.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { batch_size: 64, epochs: 400, lr_main: 1e-3, lr_pop: 1e-4, v: 20, alpha: 10.0, clip_norm: 10.0, seed: 0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.v == 0 {
            return Err(Error::Config("v must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.alpha >= 0.0) {
            return Err(Error::Config(format!("alpha must be non-negative, got {}", self.alpha)));
        }
        if !(self.lr_main > 0.0 && self.lr_pop > 0.0) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        Ok(())
    }
}

/// Per-epoch loss decomposition. `kl` is absent when the KL term does not
/// contribute (no latent predictor or `alpha = 0`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub epoch: usize,
    pub variety: f64,
    pub kl: Option<f64>,
    pub total: f64,
}

/// Graph nodes of the training objective for one batch.
pub struct BatchLoss {
    pub total: Var,
    pub variety: Var,
    pub kl: Option<Var>,
}

/// Per-pedestrian best-of-`v` mean distance (`n×1`) from a forward output.
pub fn variety_rows(g: &Graph, positions: &[Var], future: &[Matrix], n: usize, v: usize) -> Var {
    let idx: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, v)).collect();
    let mut acc = None;
    for (&p, gt) in positions.iter().zip(future) {
        let gt = g.select_rows(g.leaf(gt.clone()), &idx);
        let d = g.row_norm(g.sub(p, gt));
        acc = Some(match acc {
            None => d,
            Some(a) => g.add(a, d),
        });
    }
    let mean = g.scale(acc.unwrap(), 1.0 / positions.len() as f64);
    g.row_min(g.reshape(mean, n, v))
}

/// Builds the training objective for one batch.
pub fn batch_loss(bind: &Binding<'_>, model: &Model, batch: &Batch<'_>, v: usize, alpha: f64, seed: u64) -> BatchLoss {
    let g = bind.graph();
    let noise = batch.latent_noise(v, model.dims.latent_dim(), seed);
    let out = forward_batch(bind, model, batch, v, Stage::Train, &noise);
    let variety = variety_rows(g, &out.positions, &batch.future_steps(), out.n_peds, v);
    let kl = if alpha > 0.0 { out.kl } else { None };
    let per_ped = match kl {
        Some(kl) => g.add(variety, g.scale(kl, alpha)),
        None => variety,
    };
    BatchLoss { total: g.mean(per_ped), variety: g.mean(variety), kl: kl.map(|k| g.mean(k)) }
}

/// Trains `model` in place and returns the per-epoch loss curve.
pub fn train_in_place(model: &mut Model, windows: &[SceneWindow], cfg: &TrainConfig) -> Result<Vec<LossRecord>> {
    train_with_callback(model, windows, cfg, |_, _| {})
}

/// As [`train_in_place`], calling `on_epoch` after every epoch.
pub fn train_with_callback(
    model: &mut Model,
    windows: &[SceneWindow],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&Model, &LossRecord),
) -> Result<Vec<LossRecord>> {
    cfg.validate()?;
    if windows.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let mut opt = Adam::new(cfg.lr_main, cfg.lr_pop).with_clip_norm(cfg.clip_norm);
    let mut order: Vec<usize> = (0..windows.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(cfg.seed, &[1, epoch as u64]));
        order.shuffle(&mut rng);
        let (mut sum_var, mut sum_kl, mut sum_total, mut peds) = (0.0, 0.0, 0.0, 0usize);
        let mut has_kl = false;
        for (b, chunk) in order.chunks(cfg.batch_size).enumerate() {
            let batch = Batch::new(chunk.iter().map(|&i| &windows[i]).collect(), chunk.iter().map(|&i| i as u64).collect())?;
            let g = Graph::new();
            let bind = Binding::new(&g, &model.params);
            let loss = batch_loss(&bind, model, &batch, cfg.v, cfg.alpha, sub_seed(cfg.seed, &[2, epoch as u64, b as u64]));
            let total = g.scalar_value(loss.total);
            if !total.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss: total });
            }
            let n = batch.n_peds();
            sum_total += total * n as f64;
            sum_var += g.scalar_value(loss.variety) * n as f64;
            if let Some(kl) = loss.kl {
                has_kl = true;
                sum_kl += g.scalar_value(kl) * n as f64;
            }
            peds += n;
            let grads = bind.param_grads(&g.backward(loss.total));
            drop(bind);
            opt.step(&mut model.params, &grads);
        }
        let rec = LossRecord {
            epoch,
            variety: sum_var / peds as f64,
            kl: has_kl.then(|| sum_kl / peds as f64),
            total: sum_total / peds as f64,
        };
        on_epoch(model, &rec);
        curve.push(rec);
    }
    Ok(curve)
}

/// Initializes a model from `cfg.seed` and trains it.
pub fn train_model(
    windows: &[SceneWindow],
    cfg: &TrainConfig,
    ablation: AblationConfig,
    dims: ModelDims,
) -> Result<(Model, Vec<LossRecord>)> {
    let mut model = Model::new(dims, ablation, cfg.seed)?;
    let curve = train_in_place(&mut model, windows, cfg)?;
    Ok((model, curve))
}

pub fn write_loss_csv(path: &Path, curve: &[LossRecord]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "variety", "kl", "total"])?;
    for r in curve {
        w.write_record([
            r.epoch.to_string(),
            r.variety.to_string(),
            r.kl.map(|k| k.to_string()).unwrap_or_default(),
            r.total.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean per-pedestrian KL between the observed and ground-truth branches.
pub fn mean_branch_kl(model: &Model, windows: &[SceneWindow]) -> Result<f64> {
    if windows.is_empty() {
        return Err(Error::Config("no windows".into()));
    }
    if !model.ablation.use_pop {
        return Err(Error::Config("model has no latent predictor".into()));
    }
    let batch = Batch::new(windows.iter().collect(), (0..windows.len() as u64).collect())?;
    let g = Graph::new();
    let bind = Binding::new(&g, &model.params);
    let obs = branch_heads(&bind, &batch, Branch::Obs);
    let gt = branch_heads(&bind, &batch, Branch::Gt);
    let kl = g.mean(branch_kl(&g, &obs, &gt));
    Ok(g.scalar_value(kl))
}

/// `k` test-stage samples for every pedestrian of a window:
/// `samples[i][s]` is sample `s` of pedestrian `i`. Sample `s` depends only on
/// `(seed, key, s)`.
pub fn sample_futures(model: &Model, window: &SceneWindow, k: usize, key: u64, seed: u64) -> Result<Vec<Vec<Vec<Point>>>> {
    let batch = Batch::new(vec![window], vec![key])?;
    let noise = batch.latent_noise(k, model.dims.latent_dim(), seed);
    let g = Graph::new();
    let bind = Binding::new(&g, &model.params);
    let out = forward_batch(&bind, model, &batch, k, Stage::Test, &noise);
    let values: Vec<Matrix> = out.positions.iter().map(|&p| g.value(p).clone()).collect();
    Ok((0..window.n_peds())
        .map(|i| (0..k).map(|s| values.iter().map(|m| [m.get(i * k + s, 0), m.get(i * k + s, 1)]).collect()).collect())
        .collect())
}

/// Metrics of one evaluation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ade: f64,
    pub fde: f64,
    /// Number of window-pedestrian samples scored.
    pub count: usize,
    pub windows: usize,
    pub sampling_number: usize,
    /// `(ade, fde, windows)` per scene.
    pub per_scene: BTreeMap<String, (f64, f64, usize)>,
    /// Wall-clock seconds. Not part of the written report.
    #[serde(skip)]
    pub runtime_secs: f64,
}

impl EvalReport {
    /// `key = value` lines, one metric per line.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "sampling_number = {}", self.sampling_number).unwrap();
        writeln!(s, "windows = {}", self.windows).unwrap();
        writeln!(s, "count = {}", self.count).unwrap();
        writeln!(s, "ade = {:?}", self.ade).unwrap();
        writeln!(s, "fde = {:?}", self.fde).unwrap();
        for (name, (a, f, c)) in &self.per_scene {
            writeln!(s, "scene.{name}.ade = {a:?}").unwrap();
            writeln!(s, "scene.{name}.fde = {f:?}").unwrap();
            writeln!(s, "scene.{name}.windows = {c}").unwrap();
        }
        s
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["scene", "sampling_number", "windows", "ade", "fde"])?;
        w.write_record(["all".to_string(), self.sampling_number.to_string(), self.windows.to_string(), format!("{:?}", self.ade), format!("{:?}", self.fde)])?;
        for (name, (a, f, c)) in &self.per_scene {
            w.write_record([name.clone(), self.sampling_number.to_string(), c.to_string(), format!("{a:?}"), format!("{f:?}")])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

/// Named group of windows, e.g. one test scene.
#[derive(Clone, Debug)]
pub struct Scene {
    pub name: String,
    pub windows: Vec<SceneWindow>,
}

/// Per pedestrian `(ade, fde)` of the min-ADE sample among the first `k`.
fn best_of(samples: &[Vec<Point>], gt: &[Point], k: usize) -> Result<(f64, f64)> {
    let mut best = (f64::INFINITY, f64::INFINITY);
    for s in &samples[..k] {
        let m = compute_metrics(s, gt)?;
        if m.0 < best.0 {
            best = m;
        }
    }
    Ok(best)
}

/// Best-of-`k` for each value in `ks`, from one set of `max(ks)` nested
/// samples per pedestrian. Results are in the order of `ks`.
pub fn evaluate_sweep(model: &Model, scenes: &[Scene], ks: &[usize], seed: u64) -> Result<Vec<EvalReport>> {
    let start = Instant::now();
    let k_max = *ks.iter().max().ok_or_else(|| Error::Config("empty sampling sweep".into()))?;
    if ks.contains(&0) {
        return Err(Error::Config("sampling number must be at least 1".into()));
    }
    let mut jobs = Vec::new();
    let mut key = 0u64;
    for (si, scene) in scenes.iter().enumerate() {
        for w in &scene.windows {
            jobs.push((si, key, w));
            key += 1;
        }
    }
    // per job: per pedestrian, per k: (ade, fde)
    let results: Vec<Result<Vec<Vec<(f64, f64)>>>> = jobs
        .par_iter()
        .map(|&(_, key, w)| {
            let samples = sample_futures(model, w, k_max, key, seed)?;
            samples
                .iter()
                .zip(&w.fut)
                .map(|(s, gt)| ks.iter().map(|&k| best_of(s, gt, k)).collect::<Result<Vec<_>>>())
                .collect()
        })
        .collect();
    let mut reports = Vec::with_capacity(ks.len());
    let results = results.into_iter().collect::<Result<Vec<_>>>()?;
    for (ki, &k) in ks.iter().enumerate() {
        // mean over the pedestrians of a window, then over windows
        let mut per_scene: BTreeMap<String, (f64, f64, usize)> = BTreeMap::new();
        let (mut ade, mut fde, mut count, mut n_windows) = (0.0, 0.0, 0usize, 0usize);
        for (&(si, _, _), peds) in jobs.iter().zip(&results) {
            let n = peds.len() as f64;
            let a = peds.iter().map(|m| m[ki].0).sum::<f64>() / n;
            let f = peds.iter().map(|m| m[ki].1).sum::<f64>() / n;
            ade += a;
            fde += f;
            count += peds.len();
            n_windows += 1;
            let entry = per_scene.entry(scenes[si].name.clone()).or_default();
            entry.0 += a;
            entry.1 += f;
            entry.2 += 1;
        }
        if n_windows == 0 {
            return Err(Error::Config("no windows to evaluate".into()));
        }
        for v in per_scene.values_mut() {
            v.0 /= v.2 as f64;
            v.1 /= v.2 as f64;
        }
        reports.push(EvalReport {
            ade: ade / n_windows as f64,
            fde: fde / n_windows as f64,
            count,
            windows: n_windows,
            sampling_number: k,
            per_scene,
            runtime_secs: start.elapsed().as_secs_f64(),
        });
    }
    Ok(reports)
}

/// Best-of-`k` ADE/FDE, averaged over the pedestrians of each window and then over windows.
pub fn evaluate_best_of_k(model: &Model, scenes: &[Scene], k: usize, seed: u64) -> Result<EvalReport> {
    Ok(evaluate_sweep(model, scenes, &[k], seed)?.remove(0))
}

/// Convenience wrapper for a single unnamed scene.
pub fn evaluate_windows(model: &Model, windows: &[SceneWindow], k: usize, seed: u64) -> Result<EvalReport> {
    evaluate_best_of_k(model, &[Scene { name: "all".into(), windows: windows.to_vec() }], k, seed)
}

pub const SWEEP_KS: [usize; 4] = [1, 5, 10, 20];

pub fn write_sweep_csv(path: &Path, reports: &[EvalReport]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["k", "ade", "fde", "count"])?;
    for r in reports {
        w.write_record([r.sampling_number.to_string(), format!("{:?}", r.ade), format!("{:?}", r.fde), r.count.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Regular grid over a rectangle, `nx` columns by `ny` rows.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
    pub nx: usize,
    pub ny: usize,
}

impl GridSpec {
    pub fn validate(&self) -> Result<()> {
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::Grid("grid needs at least one cell per axis".into()));
        }
        if !(self.x_max > self.x_min && self.y_max > self.y_min) {
            return Err(Error::Grid(format!("empty extent [{}, {}] x [{}, {}]", self.x_min, self.x_max, self.y_min, self.y_max)));
        }
        Ok(())
    }

    /// Square cells of side `cell` covering every position of the window plus `margin`.
    pub fn covering(window: &SceneWindow, cell: f64, margin: f64) -> Result<Self> {
        if !(cell > 0.0) {
            return Err(Error::Grid("cell size must be positive".into()));
        }
        let pts = window.obs.iter().chain(&window.fut).flatten();
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for p in pts {
            x0 = x0.min(p[0]);
            x1 = x1.max(p[0]);
            y0 = y0.min(p[1]);
            y1 = y1.max(p[1]);
        }
        let (x0, y0) = (x0 - margin, y0 - margin);
        let nx = (((x1 + margin - x0) / cell).ceil() as usize).max(1);
        let ny = (((y1 + margin - y0) / cell).ceil() as usize).max(1);
        let g = Self { x_min: x0, x_max: x0 + nx as f64 * cell, y_min: y0, y_max: y0 + ny as f64 * cell, nx, ny };
        g.validate()?;
        Ok(g)
    }

    pub fn cell_of(&self, p: Point) -> Option<(usize, usize)> {
        let fx = (p[0] - self.x_min) / (self.x_max - self.x_min);
        let fy = (p[1] - self.y_min) / (self.y_max - self.y_min);
        if !(0.0..=1.0).contains(&fx) || !(0.0..=1.0).contains(&fy) {
            return None;
        }
        let cx = ((fx * self.nx as f64) as usize).min(self.nx - 1);
        let cy = ((fy * self.ny as f64) as usize).min(self.ny - 1);
        Some((cy, cx))
    }
}

/// Rasterizes `samples` sampled futures per pedestrian into a normalized
/// occupancy grid (`ny × nx`, row 0 at `y_min`). Positions outside the grid
/// are dropped before normalizing.
pub fn density_grid(model: &Model, window: &SceneWindow, samples: usize, grid: &GridSpec, seed: u64) -> Result<Vec<Matrix>> {
    grid.validate()?;
    if samples == 0 {
        return Err(Error::Config("density map needs at least one sample".into()));
    }
    let futures = sample_futures(model, window, samples, 0, seed)?;
    futures
        .iter()
        .enumerate()
        .map(|(i, ped)| {
            let mut m = Matrix::zeros(grid.ny, grid.nx);
            let mut total = 0.0;
            for p in ped.iter().flatten() {
                if let Some((r, c)) = grid.cell_of(*p) {
                    m.set(r, c, m.get(r, c) + 1.0);
                    total += 1.0;
                }
            }
            if total == 0.0 {
                return Err(Error::Grid(format!("no sampled position of pedestrian {i} falls inside the grid")));
            }
            m.data_mut().iter_mut().for_each(|x| *x /= total);
            Ok(m)
        })
        .collect()
}

/// One CSV row per non-empty cell: `ped,row,col,x_center,y_center,mass`.
pub fn write_density_csv(path: &Path, grid: &GridSpec, grids: &[Matrix], ped_ids: &[i64]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["ped", "row", "col", "x", "y", "mass"])?;
    let (cw, ch) = ((grid.x_max - grid.x_min) / grid.nx as f64, (grid.y_max - grid.y_min) / grid.ny as f64);
    for (m, id) in grids.iter().zip(ped_ids) {
        for r in 0..m.rows() {
            for c in 0..m.cols() {
                let v = m.get(r, c);
                if v > 0.0 {
                    let x = grid.x_min + (c as f64 + 0.5) * cw;
                    let y = grid.y_min + (r as f64 + 0.5) * ch;
                    w.write_record([id.to_string(), r.to_string(), c.to_string(), format!("{x:?}"), format!("{y:?}"), format!("{v:?}")])?;
                }
            }
        }
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Renders the summed density of all pedestrians as a heat map with the
/// ground-truth futures marked in white. Image row 0 is the top (`y_max`).
pub fn render_density_png(path: &Path, grid: &GridSpec, grids: &[Matrix], window: &SceneWindow) -> Result<()> {
    let mut sum = Matrix::zeros(grid.ny, grid.nx);
    for m in grids {
        for (s, v) in sum.data_mut().iter_mut().zip(m.data()) {
            *s += v;
        }
    }
    let max = sum.data().iter().cloned().fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut img = image::RgbImage::new(grid.nx as u32, grid.ny as u32);
    for r in 0..grid.ny {
        for c in 0..grid.nx {
            let t = (sum.get(r, c) / max).sqrt();
            let px = image::Rgb([(255.0 * t.min(1.0)) as u8, (255.0 * (t * t)) as u8, (64.0 * (1.0 - t)) as u8]);
            img.put_pixel(c as u32, (grid.ny - 1 - r) as u32, px);
        }
    }
    for p in window.fut.iter().flatten() {
        if let Some((r, c)) = grid.cell_of(*p) {
            img.put_pixel(c as u32, (grid.ny - 1 - r) as u32, image::Rgb([255, 255, 255]));
        }
    }
    img.save(path)?;
    Ok(())
}
