//! LSTM encoder over observed displacements with temporal attention.
//!
//! Each observed displacement is embedded linearly, fed through an LSTM from a
//! zero state, and the hidden-state sequence is pooled by attention weights
//! `α_t = softmax_t(tanh(W_w m_t + b_w) · w_p)`.

use rand::Rng;

use crate::error::{Error, Result};
use crate::nn::{Binding, ParamGroup, ParamStore};
use crate::scene_data::Point;
use crate::tape::{Graph, Matrix, Var};

pub const PREFIX: &str = "enc";

/// Registers `enc.embed`, `enc.lstm` and the attention weights
/// `enc.attn.w`, `enc.attn.b`, `enc.attn.p`.
pub fn register(store: &mut ParamStore, embed: usize, hidden: usize, rng: &mut impl Rng) {
    store.add_linear("enc.embed", 2, embed, ParamGroup::Main, rng);
    store.add_lstm("enc.lstm", embed, hidden, ParamGroup::Main, rng);
    store.add_linear("enc.attn", hidden, hidden, ParamGroup::Main, rng);
    let bound = 1.0 / (hidden as f64).sqrt();
    store.insert("enc.attn.p", crate::nn::uniform(hidden, 1, bound, rng), ParamGroup::Main);
}

/// LSTM hidden states for a batch: `steps[t]` is `n×2`, output `t_obs` tensors of `n×h`.
pub fn encode_hidden_states(bind: &Binding<'_>, steps: &[Var]) -> Vec<Var> {
    let g = bind.graph();
    let embed = bind.linear("enc.embed");
    let lstm = bind.lstm("enc.lstm");
    let rows = g.shape(steps[0]).0;
    let inputs: Vec<Var> = steps.iter().map(|&s| embed.forward(g, s)).collect();
    lstm.unroll(g, &inputs, lstm.zero_state(g, rows)).0
}

/// Attention weights (`n×T`) and the pooled summary (`n×h`).
pub fn temporal_attention(bind: &Binding<'_>, hidden: &[Var]) -> (Var, Var) {
    let g = bind.graph();
    let transform = bind.linear("enc.attn");
    let score_vec = bind.get("enc.attn.p");
    let scores: Vec<Var> = hidden.iter().map(|&m| g.matmul(g.tanh(transform.forward(g, m)), score_vec)).collect();
    let alpha = g.softmax_rows(g.concat_cols(&scores));
    let summary = weighted_sum(g, alpha, hidden);
    (alpha, summary)
}

/// `Σ_t alpha[:, t] ⊙ hidden[t]`
pub fn weighted_sum(g: &Graph, alpha: Var, hidden: &[Var]) -> Var {
    let mut acc = None;
    for (t, &m) in hidden.iter().enumerate() {
        let term = g.mul(m, g.slice_cols(alpha, t, t + 1));
        acc = Some(match acc {
            None => term,
            Some(a) => g.add(a, term),
        });
    }
    acc.expect("at least one time step")
}

/// Encoded observation of a single pedestrian.
#[derive(Clone, Debug, PartialEq)]
pub struct EncodedTrack {
    /// `t_obs × h`
    pub hidden_seq: Matrix,
    pub attn_weights: Vec<f64>,
    pub summary: Vec<f64>,
}

/// Encodes one pedestrian's observed displacements with the parameters in `store`.
pub fn encode_track(store: &ParamStore, displacements: &[Point]) -> Result<EncodedTrack> {
    if displacements.is_empty() {
        return Err(Error::Shape("encoder needs at least one observed step".into()));
    }
    let embed_in = store.value("enc.embed.w").rows();
    if embed_in != 2 {
        return Err(Error::Shape(format!("encoder embedding expects {embed_in}-d input, got 2-d displacements")));
    }
    let g = Graph::new();
    let bind = Binding::new(&g, store);
    let steps: Vec<Var> = displacements.iter().map(|d| g.leaf(Matrix::row_vector(d))).collect();
    let hidden = encode_hidden_states(&bind, &steps);
    let (alpha, summary) = temporal_attention(&bind, &hidden);
    let rows: Vec<Vec<f64>> = hidden.iter().map(|&h| g.value(h).data().to_vec()).collect();
    let attn_weights = g.value(alpha).data().to_vec();
    let summary = g.value(summary).data().to_vec();
    Ok(EncodedTrack { hidden_seq: Matrix::from_rows(&rows), attn_weights, summary })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn store(embed: usize, hidden: usize, seed: u64) -> ParamStore {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParamStore::new();
        register(&mut s, embed, hidden, &mut rng);
        s
    }

    #[test]
    fn zero_params_give_zero_hidden_states() {
        let mut s = store(16, 32, 1);
        s.zero_all();
        let enc = encode_track(&s, &[[1.0, 2.0], [-0.5, 0.3], [0.1, 0.1]]).unwrap();
        assert_eq!(enc.hidden_seq.max_abs(), 0.0);
        assert_eq!(enc.summary, vec![0.0; 32]);
        // all-zero scores: uniform attention
        for a in enc.attn_weights {
            assert!((a - 1.0 / 3.0).abs() < 1e-15);
        }
    }

    #[test]
    fn single_step_has_unit_attention() {
        let s = store(16, 32, 2);
        let enc = encode_track(&s, &[[0.3, -0.2]]).unwrap();
        assert_eq!(enc.hidden_seq.rows(), 1);
        assert_eq!(enc.attn_weights, vec![1.0]);
        assert_eq!(enc.summary, enc.hidden_seq.row(0).to_vec());
    }

    #[test]
    fn empty_input_is_rejected() {
        assert!(encode_track(&store(4, 4, 0), &[]).is_err());
    }

    #[test]
    fn identical_hidden_states_give_uniform_attention() {
        let s = store(4, 4, 3);
        let g = Graph::new();
        let bind = Binding::new(&g, &s);
        let m = g.leaf(Matrix::row_vector(&[0.1, -0.3, 0.7, 0.2]));
        let (alpha, summary) = temporal_attention(&bind, &[m, m, m, m, m]);
        for &a in g.value(alpha).data() {
            assert!((a - 0.2).abs() < 1e-15);
        }
        for (x, y) in g.value(summary).data().iter().zip(g.value(m).data()) {
            assert!((x - y).abs() < 1e-15);
        }
    }
}
