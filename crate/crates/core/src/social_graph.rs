//! Per-time-step graph attention over encoder hidden states, gated by social
//! attention derived from velocity orientation, summarized over time by an LSTM.

use std::ops::Range;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Binding, ParamGroup, ParamStore};
use crate::scene_data::{kinematics, Point, SceneWindow, Span};
use crate::tape::{sigmoid, Graph, Matrix, Var};

pub const GAT_LAYERS: usize = 2;
pub const LEAKY_SLOPE: f64 = 0.2;
/// Speed below which a pedestrian is treated as having no heading.
pub const MIN_SPEED: f64 = 1e-6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SocialMode {
    #[default]
    None,
    Hard,
    Soft,
}

/// Registers both graph-attention layers, the soft social 1×1 convolution and the GLSTM.
pub fn register(store: &mut ParamStore, hidden: usize, rng: &mut impl Rng) {
    let bound = 1.0 / (hidden as f64).sqrt();
    for layer in 0..GAT_LAYERS {
        store.insert(format!("gat.{layer}.w"), crate::nn::uniform(hidden, hidden, bound, rng), ParamGroup::Main);
        store.insert(format!("gat.{layer}.a_src"), crate::nn::uniform(hidden, 1, bound, rng), ParamGroup::Main);
        store.insert(format!("gat.{layer}.a_dst"), crate::nn::uniform(hidden, 1, bound, rng), ParamGroup::Main);
    }
    // start near a pass-through gate: sigmoid(2·cos) keeps pedestrians ahead
    store.insert("social.conv_w", Matrix::scalar(2.0), ParamGroup::Main);
    store.insert("social.conv_b", Matrix::scalar(0.0), ParamGroup::Main);
    store.add_lstm("glstm", hidden, hidden, ParamGroup::Main, rng);
}

/// Parameters of the social gate as plain values.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SocialAttnParams {
    pub mode: SocialMode,
    pub conv_w: f64,
    pub conv_b: f64,
}

impl SocialAttnParams {
    pub fn from_store(store: &ParamStore, mode: SocialMode) -> Self {
        Self {
            mode,
            conv_w: store.value("social.conv_w").get(0, 0),
            conv_b: store.value("social.conv_b").get(0, 0),
        }
    }
}

/// Cosine of the angle between pedestrian `i`'s velocity and the vector from
/// `i` to `j`. Rows of (near-)still pedestrians, the diagonal, and coincident
/// pairs are 1.
pub fn cosine_matrix(positions: &[Point], velocities: &[Point]) -> Matrix {
    let n = positions.len();
    assert_eq!(n, velocities.len());
    let mut out = Matrix::filled(n, n, 1.0);
    for i in 0..n {
        let v = velocities[i];
        let speed = v[0].hypot(v[1]);
        if speed < MIN_SPEED {
            continue;
        }
        for j in 0..n {
            if i == j {
                continue;
            }
            let d = [positions[j][0] - positions[i][0], positions[j][1] - positions[i][1]];
            let dist = d[0].hypot(d[1]);
            if dist == 0.0 {
                continue;
            }
            out.set(i, j, ((v[0] * d[0] + v[1] * d[1]) / (speed * dist)).clamp(-1.0, 1.0));
        }
    }
    out
}

/// Hard gate: `1[cos > 0]`; soft gate: `sigmoid(conv_w·cos + conv_b)`. The
/// diagonal is 1 in both modes.
pub fn social_attention_weights(cos: &Matrix, params: SocialAttnParams) -> Result<Matrix> {
    let n = cos.rows();
    let mut out = match params.mode {
        SocialMode::None => return Err(Error::Config("social attention weights need mode hard or soft".into())),
        SocialMode::Hard => cos.map(|c| if c > 0.0 { 1.0 } else { 0.0 }),
        SocialMode::Soft => cos.map(|c| sigmoid(params.conv_w * c + params.conv_b)),
    };
    for i in 0..n {
        out.set(i, i, 1.0);
    }
    Ok(out)
}

/// Neighbor mask for a batch of windows: pedestrians attend to everyone in
/// their own window, including themselves.
pub fn block_mask(groups: &[Range<usize>]) -> Vec<bool> {
    let n = groups.last().map_or(0, |g| g.end);
    let mut mask = vec![false; n * n];
    for g in groups {
        for i in g.clone() {
            for j in g.clone() {
                mask[i * n + j] = true;
            }
        }
    }
    mask
}

/// Raw attention logits `LeakyReLU(a_src·W m_i + a_dst·W m_j)` and the transformed states `W m`.
fn attention_logits(bind: &Binding<'_>, layer: usize, hidden: Var) -> (Var, Var) {
    let g = bind.graph();
    let wm = g.matmul(hidden, bind.get(&format!("gat.{layer}.w")));
    let src = g.matmul(wm, bind.get(&format!("gat.{layer}.a_src")));
    let dst = g.matmul(wm, bind.get(&format!("gat.{layer}.a_dst")));
    (g.leaky_relu(g.pair_sum(src, dst), LEAKY_SLOPE), wm)
}

/// One graph-attention layer with optional social gating:
/// `sigmoid(Σ_j A_ij α_ij W m_j)`.
pub fn gat_layer(bind: &Binding<'_>, layer: usize, hidden: Var, mask: &[bool], gate: Option<Var>) -> Var {
    let g = bind.graph();
    let (logits, wm) = attention_logits(bind, layer, hidden);
    let alpha = g.masked_softmax(logits, mask);
    let weights = match gate {
        Some(a) => g.mul(alpha, a),
        None => alpha,
    };
    g.sigmoid(g.matmul(weights, wm))
}

/// Graph-attention coefficients of one layer for `n` nodes.
pub fn graph_attention_coefficients(store: &ParamStore, layer: usize, hidden: &Matrix, mask: &[bool]) -> Result<Matrix> {
    let n = hidden.rows();
    if mask.len() != n * n {
        return Err(Error::Shape(format!("neighbor mask has {} entries for {n} nodes", mask.len())));
    }
    if let Some(row) = (0..n).find(|&i| !mask[i * n..(i + 1) * n].iter().any(|&m| m)) {
        return Err(Error::EmptyNeighborhood(row));
    }
    let g = Graph::new();
    let bind = Binding::new(&g, store);
    let (logits, _) = attention_logits(&bind, layer, g.leaf(hidden.clone()));
    let alpha = g.masked_softmax(logits, mask);
    let out = g.value(alpha).clone();
    Ok(out)
}

/// Social gate as a graph node. For soft mode the off-diagonal entries depend
/// on the convolution parameters.
pub fn gate_var(bind: &Binding<'_>, mode: SocialMode, cos: &Matrix) -> Option<Var> {
    let g = bind.graph();
    let n = cos.rows();
    match mode {
        SocialMode::None => None,
        SocialMode::Hard => {
            let mut a = cos.map(|c| if c > 0.0 { 1.0 } else { 0.0 });
            for i in 0..n {
                a.set(i, i, 1.0);
            }
            Some(g.leaf(a))
        }
        SocialMode::Soft => {
            let c = g.leaf(cos.clone());
            let pre = g.add(g.mul(c, bind.get("social.conv_w")), bind.get("social.conv_b"));
            let mut off = Matrix::filled(n, n, 1.0);
            for i in 0..n {
                off.set(i, i, 0.0);
            }
            let s = g.mul(g.sigmoid(pre), g.leaf(off));
            Some(g.add(s, g.leaf(Matrix::identity(n))))
        }
    }
}

/// Cosine matrices for a batch. Entries across windows are 1 (they are
/// masked out of the attention anyway). With `per_step`, one matrix per
/// observed step from that step's positions and velocities; otherwise a single
/// matrix from the last observed step.
pub fn batch_cosines(windows: &[&SceneWindow], per_step: bool) -> Vec<Matrix> {
    let n: usize = windows.iter().map(|w| w.n_peds()).sum();
    let t_obs = windows[0].t_obs();
    let steps: Vec<usize> = if per_step { (0..t_obs).collect() } else { vec![t_obs - 1] };
    let kin: Vec<_> = windows.iter().map(|w| kinematics(w, Span::Obs)).collect();
    steps
        .into_iter()
        .map(|t| {
            let mut full = Matrix::filled(n, n, 1.0);
            let mut offset = 0;
            for (w, k) in windows.iter().zip(&kin) {
                let pos: Vec<Point> = w.obs.iter().map(|o| o[t]).collect();
                let vel: Vec<Point> = k.velocities.iter().map(|v| v[t]).collect();
                let c = cosine_matrix(&pos, &vel);
                for i in 0..w.n_peds() {
                    for j in 0..w.n_peds() {
                        full.set(offset + i, offset + j, c.get(i, j));
                    }
                }
                offset += w.n_peds();
            }
            full
        })
        .collect()
}

/// Output of the social module as graph nodes.
pub struct SocialVars {
    pub g_seq: Vec<Var>,
    pub g_final: Var,
}

/// Runs the two stacked (optionally gated) attention layers at every observed
/// step and the GLSTM over the resulting sequence.
///
/// `cosines` holds one matrix (reused at every step) or one per step.
pub fn social_graph_forward(
    bind: &Binding<'_>,
    hidden_seq: &[Var],
    mask: &[bool],
    cosines: &[Matrix],
    mode: SocialMode,
) -> SocialVars {
    let g = bind.graph();
    let gates: Vec<Option<Var>> = cosines.iter().map(|c| gate_var(bind, mode, c)).collect();
    let aggregated: Vec<Var> = hidden_seq
        .iter()
        .enumerate()
        .map(|(t, &m)| {
            let gate = if gates.len() == 1 { gates[0] } else { gates[t] };
            let mut x = m;
            for layer in 0..GAT_LAYERS {
                x = gat_layer(bind, layer, x, mask, gate);
            }
            x
        })
        .collect();
    let glstm = bind.lstm("glstm");
    let rows = g.shape(hidden_seq[0]).0;
    let (g_seq, state) = glstm.unroll(g, &aggregated, glstm.zero_state(g, rows));
    SocialVars { g_seq, g_final: state.h }
}

/// Social context of a single window as plain values.
#[derive(Clone, Debug, PartialEq)]
pub struct SocialContext {
    /// Per pedestrian, `t_obs × h` GLSTM hidden states.
    pub g_seq: Vec<Matrix>,
    /// Per pedestrian, the last GLSTM hidden state.
    pub g_final: Vec<Vec<f64>>,
}

/// Evaluates the social module on one window given each pedestrian's
/// encoder hidden states (`t_obs × h` per pedestrian).
pub fn social_context(
    store: &ParamStore,
    hidden_seq_all: &[Matrix],
    window: &SceneWindow,
    mode: SocialMode,
    per_step: bool,
) -> Result<SocialContext> {
    let n = window.n_peds();
    if hidden_seq_all.len() != n {
        return Err(Error::Shape(format!("{} hidden sequences for {n} pedestrians", hidden_seq_all.len())));
    }
    let t_obs = window.t_obs();
    if hidden_seq_all.iter().any(|h| h.rows() != t_obs) {
        return Err(Error::Shape("hidden sequence length differs from the observed span".into()));
    }
    let g = Graph::new();
    let bind = Binding::new(&g, store);
    let steps: Vec<Var> = (0..t_obs)
        .map(|t| g.leaf(Matrix::from_rows(&hidden_seq_all.iter().map(|h| h.row(t).to_vec()).collect::<Vec<_>>())))
        .collect();
    let mask = block_mask(&[0..n]);
    let cos = batch_cosines(&[window], per_step);
    let out = social_graph_forward(&bind, &steps, &mask, &cos, mode);
    let g_seq = (0..n)
        .map(|i| Matrix::from_rows(&out.g_seq.iter().map(|&v| g.value(v).row(i).to_vec()).collect::<Vec<_>>()))
        .collect();
    let g_final = (0..n).map(|i| g.value(out.g_final).row(i).to_vec()).collect();
    Ok(SocialContext { g_seq, g_final })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(hidden: usize, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        register(&mut s, hidden, &mut rng);
        s
    }

    #[test]
    fn cosine_examples() {
        let c = cosine_matrix(&[[0.0, 0.0], [2.0, 0.0]], &[[1.0, 1.0], [0.0, 0.0]]);
        assert!((c.get(0, 1) - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
        // still pedestrian: row of ones
        assert_eq!(c.get(1, 0), 1.0);

        let c = cosine_matrix(&[[0.0, 0.0], [3.0, 0.0], [-2.0, 0.0], [0.0, 5.0]], &[[1.0, 0.0]; 4]);
        assert_eq!(c.get(0, 1), 1.0);
        assert_eq!(c.get(0, 2), -1.0);
        assert_eq!(c.get(0, 3), 0.0);
    }

    #[test]
    fn hard_and_soft_gates() {
        let cos = Matrix::from_rows(&[[1.0, -0.5, 0.0], [0.3, 1.0, 0.0], [0.0, -1.0, 1.0]]);
        let hard = social_attention_weights(&cos, SocialAttnParams { mode: SocialMode::Hard, conv_w: 0.0, conv_b: 0.0 }).unwrap();
        assert_eq!(hard.get(0, 1), 0.0);
        assert_eq!(hard.get(0, 2), 0.0, "cos = 0 is not ahead");
        assert_eq!(hard.get(1, 0), 1.0);
        let soft = social_attention_weights(&cos, SocialAttnParams { mode: SocialMode::Soft, conv_w: 1.0, conv_b: 0.0 }).unwrap();
        assert_eq!(soft.get(0, 2), 0.5);
        assert_eq!(soft.get(0, 0), 1.0);
        assert!(social_attention_weights(&cos, SocialAttnParams { mode: SocialMode::None, conv_w: 1.0, conv_b: 0.0 }).is_err());
    }

    #[test]
    fn singleton_and_uniform_coefficients() {
        let s = store(4, 1);
        let one = graph_attention_coefficients(&s, 0, &Matrix::row_vector(&[0.1, 0.2, 0.3, 0.4]), &[true]).unwrap();
        assert_eq!(one, Matrix::scalar(1.0));
        let same = Matrix::from_rows(&[[0.5, -0.1, 0.2, 0.0]; 4]);
        let a = graph_attention_coefficients(&s, 1, &same, &block_mask(&[0..4])).unwrap();
        for &v in a.data() {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn empty_neighborhood_is_an_error() {
        let s = store(4, 1);
        let h = Matrix::zeros(2, 4);
        assert!(matches!(
            graph_attention_coefficients(&s, 0, &h, &[true, true, false, false]),
            Err(Error::EmptyNeighborhood(1))
        ));
    }

    #[test]
    fn coefficients_match_brute_force_softmax() {
        let s = store(4, 9);
        let h = Matrix::from_rows(&[[0.3, -0.7, 0.2, 0.9], [-0.4, 0.1, 0.8, -0.2], [0.6, 0.5, -0.3, 0.1]]);
        let alpha = graph_attention_coefficients(&s, 0, &h, &[true; 9]).unwrap();
        let w = s.value("gat.0.w");
        let a_src = s.value("gat.0.a_src").data();
        let a_dst = s.value("gat.0.a_dst").data();
        let wm: Vec<Vec<f64>> = (0..3)
            .map(|i| (0..4).map(|c| (0..4).map(|k| h.get(i, k) * w.get(k, c)).sum()).collect())
            .collect();
        for i in 0..3 {
            let raw: Vec<f64> = (0..3)
                .map(|j| {
                    let e: f64 = (0..4).map(|c| a_src[c] * wm[i][c] + a_dst[c] * wm[j][c]).sum();
                    if e > 0.0 { e } else { 0.2 * e }
                })
                .collect();
            let z: f64 = raw.iter().map(|e| e.exp()).sum();
            for j in 0..3 {
                assert!((alpha.get(i, j) - raw[j].exp() / z).abs() < 1e-14);
            }
        }
    }

    fn two_in_line() -> SceneWindow {
        // ped 0 leads at x = 3, ped 1 trails at x = 0, both walk along +x
        let obs = vec![
            (0..8).map(|t| [3.0 + 0.4 * t as f64, 0.0]).collect(),
            (0..8).map(|t| [0.4 * t as f64, 0.0]).collect(),
        ];
        let fut = vec![vec![[0.0, 0.0]; 12]; 2];
        SceneWindow::new(vec![0, 1], obs, fut, 0.4).unwrap()
    }

    #[test]
    fn hard_gate_masks_the_trailing_pedestrian_for_the_leader() {
        let w = two_in_line();
        let cos = &batch_cosines(&[&w], false)[0];
        let a = social_attention_weights(cos, SocialAttnParams { mode: SocialMode::Hard, conv_w: 0.0, conv_b: 0.0 }).unwrap();
        assert_eq!(a.get(0, 1), 0.0, "leader ignores the trailer");
        assert_eq!(a.get(1, 0), 1.0, "trailer attends to the leader");

        // the leader's output carries no message from the trailer
        let s = store(4, 4);
        let g = Graph::new();
        let bind = Binding::new(&g, &s);
        let h = Matrix::from_rows(&[[0.1, 0.2, 0.3, 0.4], [0.9, -0.9, 0.5, 0.1]]);
        let gate = gate_var(&bind, SocialMode::Hard, cos);
        let mask = block_mask(&[0..2]);
        let out = gat_layer(&bind, 0, g.leaf(h.clone()), &mask, gate);
        let alpha = graph_attention_coefficients(&s, 0, &h, &mask).unwrap();
        let wm = h.matmul(s.value("gat.0.w"));
        for c in 0..4 {
            let expected = crate::tape::sigmoid(alpha.get(0, 0) * wm.get(0, c));
            assert!((g.value(out).get(0, c) - expected).abs() < 1e-15);
            let both = crate::tape::sigmoid(alpha.get(1, 0) * wm.get(0, c) + alpha.get(1, 1) * wm.get(1, c));
            assert!((g.value(out).get(1, c) - both).abs() < 1e-15);
        }
    }

    #[test]
    fn hard_gate_with_everyone_ahead_equals_ungated() {
        let s = store(4, 5);
        let hidden: Vec<Matrix> = (0..3)
            .map(|i| Matrix::from_rows(&(0..8).map(|t| [0.1 * i as f64, -0.05 * t as f64, 0.3, 0.02 * (i * t) as f64]).collect::<Vec<_>>()))
            .collect();
        // a single pedestrian has no one to mask
        let obs = vec![(0..8).map(|t| [0.4 * t as f64, 0.0]).collect(); 1];
        let w = SceneWindow::new(vec![0], obs, vec![vec![[0.0, 0.0]; 12]], 0.4).unwrap();
        let none = social_context(&s, &hidden[..1], &w, SocialMode::None, false).unwrap();
        let hard = social_context(&s, &hidden[..1], &w, SocialMode::Hard, false).unwrap();
        assert_eq!(none, hard);
        assert_eq!(none.g_final[0], none.g_seq[0].row(7).to_vec());
    }
}
