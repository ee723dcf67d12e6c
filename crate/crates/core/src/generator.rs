//! Full predictor: encoder, social context and latent variable feed the
//! initial state of an LSTM decoder that rolls out relative displacements.

use std::collections::BTreeMap;
use std::fmt;
use std::ops::Range;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Binding, LstmState, ParamGroup, ParamStore};
use crate::pseudo_oracle::{self, Branch, DiagGaussian, LatentSpec, Stage, CHANNELS};
use crate::scene_data::{kinematics, KinematicChannels, Point, SceneWindow, Span};
use crate::social_graph::{self, SocialMode};
use crate::ta_encoder;
use crate::tape::{Graph, Matrix, Var};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Which components are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AblationConfig {
    pub use_ta: bool,
    pub use_ga: bool,
    pub social_mode: SocialMode,
    pub use_pop: bool,
    /// Recompute the social cosine matrix at every observed step instead of
    /// once from the last observed step.
    pub per_step_social: bool,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self::full()
    }
}

impl AblationConfig {
    pub const fn new(use_ta: bool, use_ga: bool, social_mode: SocialMode, use_pop: bool) -> Self {
        Self { use_ta, use_ga, social_mode, use_pop, per_step_social: false }
    }

    /// Plain LSTM encoder-decoder with a noise latent.
    pub const fn baseline() -> Self {
        Self::new(false, false, SocialMode::None, false)
    }

    /// TA + GA + soft social attention + latent predictor.
    pub const fn full() -> Self {
        Self::new(true, true, SocialMode::Soft, true)
    }

    pub fn validate(&self) -> Result<()> {
        if self.social_mode != SocialMode::None && !self.use_ga {
            return Err(Error::Config("social attention requires graph attention (use_ga)".into()));
        }
        Ok(())
    }

    /// The sixteen toggle combinations of the ablation table, in row order.
    pub fn ablation_rows() -> Vec<AblationConfig> {
        use SocialMode::{Hard, None, Soft};
        [
            (false, false, None, false),
            (true, false, None, false),
            (false, true, None, false),
            (false, true, Hard, false),
            (false, true, Soft, false),
            (false, false, None, true),
            (true, true, None, false),
            (true, true, Hard, false),
            (true, true, Soft, false),
            (true, false, None, true),
            (false, true, None, true),
            (false, true, Hard, true),
            (false, true, Soft, true),
            (true, true, None, true),
            (true, true, Hard, true),
            (true, true, Soft, true),
        ]
        .into_iter()
        .map(|(ta, ga, s, pop)| Self::new(ta, ga, s, pop))
        .collect()
    }
}

impl fmt::Display for AblationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.use_ta {
            parts.push("TA");
        }
        if self.use_ga {
            parts.push("GA");
        }
        match self.social_mode {
            SocialMode::Hard => parts.push("HSA"),
            SocialMode::Soft => parts.push("SSA"),
            SocialMode::None => {}
        }
        if self.use_pop {
            parts.push("POP");
        }
        if parts.is_empty() {
            write!(f, "baseline")
        } else {
            write!(f, "{}", parts.join("+"))
        }
    }
}

/// Layer widths.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelDims {
    /// Encoder, GLSTM and decoder hidden size.
    pub hidden: usize,
    /// Displacement embedding width (encoder and decoder inputs).
    pub embed: usize,
    /// Latent width per kinematic channel.
    pub latent_per_channel: usize,
    pub noise_dim: usize,
    pub pop_embed: usize,
    pub pop_hidden: usize,
    pub t_pred: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self { hidden: 32, embed: 16, latent_per_channel: 4, noise_dim: 4, pop_embed: 16, pop_hidden: 32, t_pred: 12 }
    }
}

impl ModelDims {
    pub fn latent_dim(&self) -> usize {
        CHANNELS.len() * self.latent_per_channel + self.noise_dim
    }

    /// Width of the decoder-initialization input `[s ‖ g ‖ z]`.
    pub fn init_input_dim(&self) -> usize {
        2 * self.hidden + self.latent_dim()
    }
}

/// Parameters together with the architecture they belong to.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub dims: ModelDims,
    pub ablation: AblationConfig,
    pub params: ParamStore,
}

impl Model {
    /// Randomly initialized model. Every parameter group is allocated whatever
    /// the ablation, so checkpoints of all configurations share one layout.
    pub fn new(dims: ModelDims, ablation: AblationConfig, seed: u64) -> Result<Self> {
        ablation.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        ta_encoder::register(&mut params, dims.embed, dims.hidden, &mut rng);
        social_graph::register(&mut params, dims.hidden, &mut rng);
        pseudo_oracle::register(&mut params, dims.pop_embed, dims.pop_hidden, dims.latent_per_channel, &mut rng);
        params.add_linear("dec.init", dims.init_input_dim(), dims.hidden, ParamGroup::Main, &mut rng);
        params.add_linear("dec.embed", 2, dims.embed, ParamGroup::Main, &mut rng);
        params.add_lstm("dec.lstm", dims.embed, dims.hidden, ParamGroup::Main, &mut rng);
        params.add_linear("dec.out", dims.hidden, 2, ParamGroup::Main, &mut rng);
        Ok(Self { dims, ablation, params })
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            ablation: self.ablation,
            dims: self.dims,
            params: self
                .params
                .iter()
                .map(|(name, p)| {
                    (
                        name.to_string(),
                        TensorRecord { group: p.group, shape: [p.value.rows(), p.value.cols()], data: p.value.data().to_vec() },
                    )
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        if ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {}", ckpt.version)));
        }
        ckpt.ablation.validate()?;
        let reference = Model::new(ckpt.dims, ckpt.ablation, 0)?;
        let mut params = ParamStore::new();
        for (name, p) in reference.params.iter() {
            let rec = ckpt.params.get(name).ok_or_else(|| Error::Checkpoint(format!("missing parameter {name}")))?;
            let [r, c] = rec.shape;
            if (r, c) != p.value.shape() || rec.data.len() != r * c {
                return Err(Error::Checkpoint(format!("parameter {name} has shape {:?}, expected {:?}", rec.shape, p.value.shape())));
            }
            params.insert(name, Matrix::new(r, c, rec.data.clone()), p.group);
        }
        if let Some(extra) = ckpt.params.keys().find(|k| reference.params.get(k).is_none()) {
            return Err(Error::Checkpoint(format!("unexpected parameter {extra}")));
        }
        Ok(Self { dims: ckpt.dims, ablation: ckpt.ablation, params })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint(&serde_json::from_str(&text)?)
    }

    /// Fails unless this model was built for `requested`.
    pub fn ensure_ablation(&self, requested: &AblationConfig) -> Result<()> {
        if &self.ablation != requested {
            return Err(Error::Checkpoint(format!(
                "checkpoint ablation {} does not match the requested ablation {}",
                self.ablation, requested
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub group: ParamGroup,
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

/// Serialized model: parameters by name plus the architecture they belong to.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub ablation: AblationConfig,
    pub dims: ModelDims,
    pub params: BTreeMap<String, TensorRecord>,
}

/// A batch of windows flattened to one row per pedestrian.
pub struct Batch<'w> {
    pub windows: Vec<&'w SceneWindow>,
    /// Row range of each window.
    pub groups: Vec<Range<usize>>,
    /// Seed key of each window, so latent draws do not depend on batching.
    pub keys: Vec<u64>,
}

impl<'w> Batch<'w> {
    pub fn new(windows: Vec<&'w SceneWindow>, keys: Vec<u64>) -> Result<Self> {
        if windows.is_empty() {
            return Err(Error::Shape("empty batch".into()));
        }
        assert_eq!(windows.len(), keys.len());
        let (t_obs, t_pred) = (windows[0].t_obs(), windows[0].t_pred());
        let mut groups = Vec::with_capacity(windows.len());
        let mut offset = 0;
        for w in &windows {
            w.validate()?;
            if w.t_obs() != t_obs || w.t_pred() != t_pred {
                return Err(Error::Shape("windows in a batch must share span lengths".into()));
            }
            if t_obs < 2 {
                return Err(Error::Shape("at least two observed steps are needed".into()));
            }
            groups.push(offset..offset + w.n_peds());
            offset += w.n_peds();
        }
        Ok(Self { windows, groups, keys })
    }

    pub fn single(window: &'w SceneWindow) -> Result<Self> {
        Self::new(vec![window], vec![0])
    }

    pub fn n_peds(&self) -> usize {
        self.groups.last().map_or(0, |g| g.end)
    }

    pub fn t_obs(&self) -> usize {
        self.windows[0].t_obs()
    }

    pub fn t_pred(&self) -> usize {
        self.windows[0].t_pred()
    }

    pub fn anchors(&self) -> Vec<Point> {
        self.windows.iter().flat_map(|w| (0..w.n_peds()).map(|i| w.last_obs(i))).collect()
    }

    /// Observed displacement at every step, one `n×2` matrix per step.
    pub fn displacement_steps(&self) -> Vec<Matrix> {
        let disp: Vec<Vec<Point>> =
            self.windows.iter().flat_map(|w| (0..w.n_peds()).map(|i| w.obs_displacements(i))).collect();
        (0..self.t_obs()).map(|t| Matrix::from_rows(&disp.iter().map(|d| d[t]).collect::<Vec<_>>())).collect()
    }

    /// Kinematic channel inputs, one `n×2` matrix per step. Positions are
    /// taken relative to each pedestrian's last observed position.
    pub fn channel_steps(&self, span: Span, channel: usize) -> Vec<Matrix> {
        let kin: Vec<KinematicChannels> = self.windows.iter().map(|w| kinematics(w, span)).collect();
        let anchors = self.anchors();
        let len = match span {
            Span::Obs => self.t_obs(),
            Span::Fut => self.t_pred(),
        };
        (0..len)
            .map(|t| {
                let mut rows = Vec::with_capacity(self.n_peds());
                for k in &kin {
                    for seq in k.channel(channel) {
                        rows.push(seq[t]);
                    }
                }
                if channel == 0 {
                    for (r, a) in rows.iter_mut().zip(&anchors) {
                        *r = [r[0] - a[0], r[1] - a[1]];
                    }
                }
                Matrix::from_rows(&rows)
            })
            .collect()
    }

    /// Ground-truth future positions, one `n×2` matrix per step.
    pub fn future_steps(&self) -> Vec<Matrix> {
        (0..self.t_pred())
            .map(|t| {
                Matrix::from_rows(
                    &self.windows.iter().flat_map(|w| w.fut.iter().map(move |f| f[t])).collect::<Vec<_>>(),
                )
            })
            .collect()
    }

    /// Standard-normal latent draws, `(n·k) × dim`, pedestrian-major. Sample
    /// `s` of window `w` depends only on `(seed, key_w, s)`, so the draws for
    /// `k` samples are a prefix of those for any larger `k`.
    pub fn latent_noise(&self, k: usize, dim: usize, seed: u64) -> Matrix {
        let n = self.n_peds();
        let mut out = Matrix::zeros(n * k, dim);
        for (group, &key) in self.groups.iter().zip(&self.keys) {
            for s in 0..k {
                let draws = pseudo_oracle::standard_normal(group.len(), dim, pseudo_oracle::sub_seed(seed, &[key, s as u64]));
                for (local, i) in group.clone().enumerate() {
                    let row = i * k + s;
                    out.data_mut()[row * dim..(row + 1) * dim].copy_from_slice(draws.row(local));
                }
            }
        }
        out
    }
}

/// Per-channel `(μ, log σ²)` nodes of one branch.
pub type BranchHeads = Vec<(Var, Var)>;

/// Graph nodes produced by a batched forward pass.
pub struct ForwardOutput {
    /// Absolute predicted positions per future step, `(n·k)×2`, row `i·k + s`
    /// is sample `s` of pedestrian `i`.
    pub positions: Vec<Var>,
    /// Per-pedestrian KL between the branches (`n×1`), when computed.
    pub kl: Option<Var>,
    pub obs_heads: Option<BranchHeads>,
    pub gt_heads: Option<BranchHeads>,
    pub n_peds: usize,
    pub samples: usize,
}

pub fn branch_heads(bind: &Binding<'_>, batch: &Batch<'_>, branch: Branch) -> BranchHeads {
    let g = bind.graph();
    let span = match branch {
        Branch::Obs => Span::Obs,
        Branch::Gt => Span::Fut,
    };
    (0..CHANNELS.len())
        .map(|k| {
            let steps: Vec<Var> = batch.channel_steps(span, k).into_iter().map(|m| g.leaf(m)).collect();
            pseudo_oracle::gaussian_lstm(bind, &pseudo_oracle::prefix(branch, k), &steps)
        })
        .collect()
}

/// Per-pedestrian `Σ_k KL(obs_k ‖ gt_k)`, `n×1`.
pub fn branch_kl(g: &Graph, obs: &BranchHeads, gt: &BranchHeads) -> Var {
    let terms: Vec<Var> = obs
        .iter()
        .zip(gt)
        .map(|(&(mp, lp), &(mq, lq))| pseudo_oracle::kl_rows(g, mp, lp, mq, lq))
        .collect();
    terms[1..].iter().fold(terms[0], |acc, &t| g.add(acc, t))
}

fn repeat_rows(g: &Graph, x: Var, k: usize) -> Var {
    if k == 1 {
        return x;
    }
    let n = g.shape(x).0;
    let idx: Vec<usize> = (0..n).flat_map(|i| std::iter::repeat_n(i, k)).collect();
    g.select_rows(x, &idx)
}

/// Full forward pass producing `k` samples per pedestrian.
///
/// In the train stage latents come from the ground-truth branch and the KL
/// term is computed; in the test stage they come from the observed branch.
/// `noise` holds `(n·k) × latent_dim` standard-normal draws.
pub fn forward_batch(bind: &Binding<'_>, model: &Model, batch: &Batch<'_>, k: usize, stage: Stage, noise: &Matrix) -> ForwardOutput {
    let g = bind.graph();
    let dims = &model.dims;
    let cfg = &model.ablation;
    let n = batch.n_peds();
    assert_eq!(noise.shape(), (n * k, dims.latent_dim()), "latent noise shape");

    let steps: Vec<Var> = batch.displacement_steps().into_iter().map(|m| g.leaf(m)).collect();
    let hidden = ta_encoder::encode_hidden_states(bind, &steps);
    let summary = if cfg.use_ta {
        ta_encoder::temporal_attention(bind, &hidden).1
    } else {
        *hidden.last().unwrap()
    };

    let g_final = if cfg.use_ga {
        let mask = social_graph::block_mask(&batch.groups);
        let cosines = if cfg.social_mode == SocialMode::None {
            Vec::new()
        } else {
            social_graph::batch_cosines(&batch.windows, cfg.per_step_social)
        };
        let cosines = if cosines.is_empty() { vec![Matrix::zeros(n, n)] } else { cosines };
        social_graph::social_graph_forward(bind, &hidden, &mask, &cosines, cfg.social_mode).g_final
    } else {
        g.leaf(Matrix::zeros(n, dims.hidden))
    };

    let eps = g.leaf(noise.clone());
    let (z, kl, obs_heads, gt_heads) = if cfg.use_pop {
        let obs = branch_heads(bind, batch, Branch::Obs);
        let gt = match stage {
            Stage::Train => Some(branch_heads(bind, batch, Branch::Gt)),
            Stage::Test => None,
        };
        let kl = gt.as_ref().map(|gt| branch_kl(g, &obs, gt));
        let heads = match stage {
            Stage::Train => gt.as_ref().unwrap(),
            Stage::Test => &obs,
        };
        let lc = dims.latent_per_channel;
        let mut parts: Vec<Var> = heads
            .iter()
            .enumerate()
            .map(|(c, &(mu, lv))| {
                let e = g.slice_cols(eps, c * lc, (c + 1) * lc);
                pseudo_oracle::reparameterize(g, repeat_rows(g, mu, k), repeat_rows(g, lv, k), e)
            })
            .collect();
        parts.push(g.slice_cols(eps, CHANNELS.len() * lc, dims.latent_dim()));
        (g.concat_cols(&parts), kl, Some(obs), gt)
    } else {
        (eps, None, None, None)
    };

    let init_in = g.concat_cols(&[repeat_rows(g, summary, k), repeat_rows(g, g_final, k), z]);
    let state = bind.linear("dec.init").forward(g, init_in);

    let last_disp = steps.last().copied().unwrap();
    let disps = rollout_vars(bind, state, repeat_rows(g, last_disp, k), batch.t_pred());

    let anchors = Matrix::from_rows(&batch.anchors().iter().flat_map(|a| std::iter::repeat_n(*a, k)).collect::<Vec<_>>());
    let mut pos = g.leaf(anchors);
    let positions = disps
        .into_iter()
        .map(|d| {
            pos = g.add(pos, d);
            pos
        })
        .collect();

    ForwardOutput { positions, kl, obs_heads, gt_heads, n_peds: n, samples: k }
}

/// Autoregressive decoding from `state` (used for both hidden and cell
/// state). The first input is the last observed displacement, later inputs
/// are the previous predictions.
pub fn rollout_vars(bind: &Binding<'_>, state: Var, last_disp: Var, t_pred: usize) -> Vec<Var> {
    let g = bind.graph();
    let embed = bind.linear("dec.embed");
    let lstm = bind.lstm("dec.lstm");
    let out = bind.linear("dec.out");
    let mut st = LstmState { h: state, c: state };
    let mut input = last_disp;
    let mut disps = Vec::with_capacity(t_pred);
    for _ in 0..t_pred {
        st = lstm.step(g, embed.forward(g, input), st);
        let d = out.forward(g, st.h);
        disps.push(d);
        input = d;
    }
    disps
}

/// Decoder initial state `W·[s ‖ g ‖ z] + b`.
pub fn init_decoder_state(store: &ParamStore, summary: &[f64], social: &[f64], z: &[f64]) -> Result<Vec<f64>> {
    let w = store.value("dec.init.w");
    let input: Vec<f64> = summary.iter().chain(social).chain(z).copied().collect();
    if input.len() != w.rows() {
        return Err(Error::Shape(format!("decoder init expects {} inputs, got {}", w.rows(), input.len())));
    }
    let g = Graph::new();
    let bind = Binding::new(&g, store);
    let s = bind.linear("dec.init").forward(&g, g.leaf(Matrix::row_vector(&input)));
    let out = g.value(s).data().to_vec();
    Ok(out)
}

/// Decodes `t_pred` displacements from an initial state.
pub fn rollout(store: &ParamStore, state: &[f64], last_obs_displacement: Point, t_pred: usize) -> Result<Vec<Point>> {
    let hidden = store.value("dec.lstm.wh").rows();
    if state.len() != hidden {
        return Err(Error::Shape(format!("decoder state has {} entries, expected {hidden}", state.len())));
    }
    if t_pred == 0 {
        return Err(Error::Config("t_pred must be at least 1".into()));
    }
    let g = Graph::new();
    let bind = Binding::new(&g, store);
    let disps = rollout_vars(&bind, g.leaf(Matrix::row_vector(state)), g.leaf(Matrix::row_vector(&last_obs_displacement)), t_pred);
    let out = disps.iter().map(|&d| {
        let v = g.value(d);
        [v.get(0, 0), v.get(0, 1)]
    });
    Ok(out.collect())
}

/// Integrates displacements from a starting position.
pub fn integrate(start: Point, displacements: &[Point]) -> Vec<Point> {
    let mut p = start;
    displacements
        .iter()
        .map(|d| {
            p = [p[0] + d[0], p[1] + d[1]];
            p
        })
        .collect()
}

/// Result of a single-sample forward pass on one window.
#[derive(Clone, Debug, PartialEq)]
pub struct Prediction {
    /// `n × t_pred` absolute positions.
    pub futures: Vec<Vec<Point>>,
    /// Per pedestrian latent distributions (empty without the latent predictor).
    pub latents: Vec<LatentSpec>,
}

/// Predicts one future per pedestrian. Deterministic given `seed`.
pub fn model_forward(window: &SceneWindow, model: &Model, stage: Stage, seed: u64) -> Result<Prediction> {
    let batch = Batch::single(window)?;
    let noise = batch.latent_noise(1, model.dims.latent_dim(), seed);
    let g = Graph::new();
    let bind = Binding::new(&g, &model.params);
    let out = forward_batch(&bind, model, &batch, 1, stage, &noise);
    let futures = (0..batch.n_peds())
        .map(|i| {
            out.positions
                .iter()
                .map(|&p| {
                    let v = g.value(p);
                    [v.get(i, 0), v.get(i, 1)]
                })
                .collect()
        })
        .collect();
    let to_dists = |heads: &BranchHeads, i: usize| -> Vec<DiagGaussian> {
        heads
            .iter()
            .map(|&(mu, lv)| DiagGaussian {
                mu: g.value(mu).row(i).to_vec(),
                sigma: g.value(lv).row(i).iter().map(|l| (0.5 * l).exp()).collect(),
            })
            .collect()
    };
    let latents = if model.ablation.use_pop {
        (0..batch.n_peds())
            .map(|i| LatentSpec {
                obs_branch: out.obs_heads.as_ref().map(|h| to_dists(h, i)),
                gt_branch: out.gt_heads.as_ref().map(|h| to_dists(h, i)),
                noise_dim: model.dims.noise_dim,
            })
            .collect()
    } else {
        Vec::new()
    };
    Ok(Prediction { futures, latents })
}
