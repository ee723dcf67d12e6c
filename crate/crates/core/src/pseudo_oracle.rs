//! Latent-variable predictor. For each kinematic channel (positions,
//! velocities, accelerations) one Gaussian-LSTM reads the observed span and a
//! second reads the ground-truth future; KL divergence pulls the observed
//! branch toward the future-informed one so it can stand in at test time.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Binding, ParamGroup, ParamStore};
use crate::scene_data::Point;
use crate::tape::{Graph, Matrix, Var};

pub const CHANNELS: [&str; 3] = ["pos", "vel", "acc"];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    /// Reads the observed span; used at test time.
    Obs,
    /// Reads the ground-truth future; used at training time.
    Gt,
}

impl Branch {
    pub fn as_str(self) -> &'static str {
        match self {
            Branch::Obs => "obs",
            Branch::Gt => "gt",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Train,
    Test,
}

impl Stage {
    pub fn branch(self) -> Branch {
        match self {
            Stage::Train => Branch::Gt,
            Stage::Test => Branch::Obs,
        }
    }
}

pub fn prefix(branch: Branch, channel: usize) -> String {
    format!("pop.{}.{}", branch.as_str(), CHANNELS[channel])
}

/// Registers six Gaussian-LSTMs (two branches × three channels), all in the
/// latent parameter group.
pub fn register(store: &mut ParamStore, embed: usize, hidden: usize, latent: usize, rng: &mut impl Rng) {
    for branch in [Branch::Obs, Branch::Gt] {
        for k in 0..CHANNELS.len() {
            let p = prefix(branch, k);
            store.add_linear(&format!("{p}.fc_in"), 2, embed, ParamGroup::Latent, rng);
            store.add_lstm(&format!("{p}.lstm"), embed, hidden, ParamGroup::Latent, rng);
            store.add_linear(&format!("{p}.mu"), hidden, latent, ParamGroup::Latent, rng);
            store.add_linear(&format!("{p}.logvar"), hidden, latent, ParamGroup::Latent, rng);
        }
    }
}

/// Mean and log-variance heads of one Gaussian-LSTM over `steps` (each `n×2`).
pub fn gaussian_lstm(bind: &Binding<'_>, prefix: &str, steps: &[Var]) -> (Var, Var) {
    let g = bind.graph();
    let fc_in = bind.linear(&format!("{prefix}.fc_in"));
    let lstm = bind.lstm(&format!("{prefix}.lstm"));
    let rows = g.shape(steps[0]).0;
    let inputs: Vec<Var> = steps.iter().map(|&s| fc_in.forward(g, s)).collect();
    let (_, last) = lstm.unroll(g, &inputs, lstm.zero_state(g, rows));
    let mu = bind.linear(&format!("{prefix}.mu")).forward(g, last.h);
    let logvar = bind.linear(&format!("{prefix}.logvar")).forward(g, last.h);
    (mu, logvar)
}

/// Row-wise `KL(N(μ_p, e^{lv_p}) ‖ N(μ_q, e^{lv_q}))` summed over dimensions, `n×1`.
pub fn kl_rows(g: &Graph, mu_p: Var, lv_p: Var, mu_q: Var, lv_q: Var) -> Var {
    let diff = g.sub(mu_p, mu_q);
    let inv_var_q = g.exp(g.scale(lv_q, -1.0));
    let quad = g.mul(g.add(g.exp(lv_p), g.mul(diff, diff)), inv_var_q);
    let log_ratio = g.sub(lv_q, lv_p);
    let per_dim = g.add_scalar(g.scale(g.add(log_ratio, quad), 0.5), -0.5);
    g.row_sum(per_dim)
}

/// Reparameterized sample `μ + e^{lv/2} ⊙ ε`.
pub fn reparameterize(g: &Graph, mu: Var, logvar: Var, eps: Var) -> Var {
    g.add(mu, g.mul(g.exp(g.scale(logvar, 0.5)), eps))
}

/// Diagonal Gaussian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl DiagGaussian {
    pub fn dim(&self) -> usize {
        self.mu.len()
    }
}

/// Evaluates one Gaussian-LSTM on a single `T×2` sequence.
pub fn gaussian_lstm_values(store: &ParamStore, prefix: &str, seq: &[Point]) -> Result<DiagGaussian> {
    if seq.is_empty() {
        return Err(Error::Shape("Gaussian-LSTM needs at least one step".into()));
    }
    let input_dim = store.value(&format!("{prefix}.fc_in.w")).rows();
    if input_dim != 2 {
        return Err(Error::Shape(format!("{prefix} expects {input_dim}-d input, got 2-d")));
    }
    let g = Graph::new();
    let bind = Binding::new(&g, store);
    let steps: Vec<Var> = seq.iter().map(|p| g.leaf(Matrix::row_vector(p))).collect();
    let (mu, lv) = gaussian_lstm(&bind, prefix, &steps);
    let mu = g.value(mu).data().to_vec();
    let sigma = g.value(lv).data().iter().map(|l| (0.5 * l).exp()).collect();
    Ok(DiagGaussian { mu, sigma })
}

/// Closed-form KL between diagonal Gaussians.
pub fn kl_diag(p: &DiagGaussian, q: &DiagGaussian) -> Result<f64> {
    if p.dim() != q.dim() || p.sigma.len() != p.dim() || q.sigma.len() != q.dim() {
        return Err(Error::Shape("KL between Gaussians of different dimension".into()));
    }
    let mut kl = 0.0;
    for d in 0..p.dim() {
        let (sp, sq) = (p.sigma[d], q.sigma[d]);
        if !(sp > 0.0 && sq > 0.0) {
            return Err(Error::Numeric(format!("standard deviation must be positive (got {sp}, {sq})")));
        }
        let diff = p.mu[d] - q.mu[d];
        kl += (sq / sp).ln() + (sp * sp + diff * diff) / (2.0 * sq * sq) - 0.5;
    }
    Ok(kl)
}

/// `Σ_k KL(obs_k ‖ gt_k)`, observed branch first.
pub fn kl_loss(obs: &[DiagGaussian], gt: &[DiagGaussian]) -> Result<f64> {
    if obs.len() != gt.len() {
        return Err(Error::Shape(format!("{} observed vs {} ground-truth channels", obs.len(), gt.len())));
    }
    obs.iter().zip(gt).map(|(p, q)| kl_diag(p, q)).sum()
}

/// Per-channel distributions of both branches for one pedestrian.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatentSpec {
    pub obs_branch: Option<Vec<DiagGaussian>>,
    pub gt_branch: Option<Vec<DiagGaussian>>,
    pub noise_dim: usize,
}

impl LatentSpec {
    pub fn branch(&self, b: Branch) -> Option<&Vec<DiagGaussian>> {
        match b {
            Branch::Obs => self.obs_branch.as_ref(),
            Branch::Gt => self.gt_branch.as_ref(),
        }
    }

    pub fn latent_dim(&self) -> usize {
        let channels = self.obs_branch.as_ref().or(self.gt_branch.as_ref());
        channels.map_or(0, |c| c.iter().map(DiagGaussian::dim).sum::<usize>()) + self.noise_dim
    }
}

/// Draws one latent vector: a reparameterized sample per channel from the
/// branch chosen by `stage`, followed by `noise_dim` standard normals.
pub fn assemble_latent(spec: &LatentSpec, stage: Stage, seed: u64) -> Result<Vec<f64>> {
    let channels = spec
        .branch(stage.branch())
        .ok_or_else(|| Error::Config(format!("latent spec lacks the {} branch", stage.branch().as_str())))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut z = Vec::with_capacity(spec.latent_dim());
    for ch in channels {
        for (m, s) in ch.mu.iter().zip(&ch.sigma) {
            let e: f64 = rng.sample(StandardNormal);
            z.push(m + s * e);
        }
    }
    for _ in 0..spec.noise_dim {
        z.push(rng.sample(StandardNormal));
    }
    Ok(z)
}

/// Deterministic sub-seed from a base seed and a path of indices.
pub fn sub_seed(base: u64, path: &[u64]) -> u64 {
    let mut h = splitmix(base);
    for &p in path {
        h = splitmix(h ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    h
}

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

/// `rows × dim` standard-normal draws from a seeded generator.
pub fn standard_normal(rows: usize, dim: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Matrix::new(rows, dim, (0..rows * dim).map(|_| rng.sample(StandardNormal)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn g(mu: &[f64], sigma: &[f64]) -> DiagGaussian {
        DiagGaussian { mu: mu.to_vec(), sigma: sigma.to_vec() }
    }

    #[test]
    fn zero_params_give_standard_normal_heads() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut s = ParamStore::new();
        register(&mut s, 16, 32, 4, &mut rng);
        s.zero_all();
        let seq: Vec<Point> = (0..8).map(|t| [t as f64, -1.0]).collect();
        let d = gaussian_lstm_values(&s, &prefix(Branch::Obs, 0), &seq).unwrap();
        assert_eq!(d.mu, vec![0.0; 4]);
        assert_eq!(d.sigma, vec![1.0; 4]);
    }

    #[test]
    fn heads_have_latent_shape_and_positive_sigma() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut s = ParamStore::new();
        register(&mut s, 16, 32, 4, &mut rng);
        let seq: Vec<Point> = (0..8).map(|t| [0.4 * t as f64, 0.1]).collect();
        let d = gaussian_lstm_values(&s, &prefix(Branch::Gt, 2), &seq).unwrap();
        assert_eq!((d.mu.len(), d.sigma.len()), (4, 4));
        assert!(d.sigma.iter().all(|&s| s > 0.0));
        assert!(gaussian_lstm_values(&s, &prefix(Branch::Gt, 2), &[]).is_err());
    }

    #[test]
    fn kl_examples() {
        let p = g(&[0.0], &[1.0]);
        assert_eq!(kl_diag(&p, &p).unwrap(), 0.0);
        assert!((kl_diag(&p, &g(&[1.0], &[1.0])).unwrap() - 0.5).abs() < 1e-15);
        let a = g(&[0.0], &[1.0]);
        let b = g(&[0.0], &[2.0]);
        let ab = kl_diag(&a, &b).unwrap();
        let ba = kl_diag(&b, &a).unwrap();
        // ln 2 + 1/8 - 1/2 and -ln 2 + 2 - 1/2
        assert!((ab - (2f64.ln() - 0.375)).abs() < 1e-15);
        assert!((ba - (1.5 - 2f64.ln())).abs() < 1e-15);
        assert!(ab != ba);
        assert!(kl_diag(&g(&[0.0], &[0.0]), &a).is_err());
        assert!(kl_loss(&[a.clone()], &[]).is_err());
    }

    #[test]
    fn kl_graph_matches_closed_form() {
        let graph = Graph::new();
        let mp = graph.leaf(Matrix::row_vector(&[0.2, -0.4]));
        let lp = graph.leaf(Matrix::row_vector(&[0.1, -0.3]));
        let mq = graph.leaf(Matrix::row_vector(&[-0.5, 0.3]));
        let lq = graph.leaf(Matrix::row_vector(&[0.7, 0.2]));
        let kl = kl_rows(&graph, mp, lp, mq, lq);
        let p = g(&[0.2, -0.4], &[(0.05f64).exp(), (-0.15f64).exp()]);
        let q = g(&[-0.5, 0.3], &[(0.35f64).exp(), (0.1f64).exp()]);
        assert!((graph.value(kl).get(0, 0) - kl_diag(&p, &q).unwrap()).abs() < 1e-14);
    }

    #[test]
    fn latent_assembly() {
        let spec = LatentSpec {
            obs_branch: Some(vec![g(&[1.0, 2.0, 3.0, 4.0], &[0.0; 4]); 3]),
            gt_branch: None,
            noise_dim: 4,
        };
        let z = assemble_latent(&spec, Stage::Test, 5).unwrap();
        assert_eq!(z.len(), 16);
        assert_eq!(&z[..12], &[1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(z, assemble_latent(&spec, Stage::Test, 5).unwrap());
        assert_ne!(z, assemble_latent(&spec, Stage::Test, 6).unwrap());
        assert!(matches!(assemble_latent(&spec, Stage::Train, 5), Err(Error::Config(_))));
    }

    #[test]
    fn sub_seeds_differ_by_path() {
        assert_ne!(sub_seed(1, &[0, 1]), sub_seed(1, &[1, 0]));
        assert_eq!(sub_seed(1, &[3]), sub_seed(1, &[3]));
    }
}
