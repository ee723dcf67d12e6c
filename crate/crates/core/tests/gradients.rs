//! Analytic gradients against central finite differences on reduced-size instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use trajpred::generator::{forward_batch, rollout_vars, Batch};
use trajpred::gradcheck::check_params;
use trajpred::nn::{ParamGroup, ParamStore};
use trajpred::pseudo_oracle::{self, gaussian_lstm, kl_rows, Stage};
use trajpred::social_graph::{self, block_mask, gat_layer, gate_var, social_graph_forward};
use trajpred::ta_encoder;
use trajpred::tape::{Graph, Matrix, Var};
use trajpred::train_eval::batch_loss;
use trajpred::{AblationConfig, Model, ModelDims, SceneWindow, SocialMode};

const STEP: f64 = 1e-5;
const FLOOR: f64 = 1e-6;
const TOL: f64 = 1e-4;
const TOL_END_TO_END: f64 = 1e-3;

fn random(rows: usize, cols: usize, scale: f64, rng: &mut impl Rng) -> Matrix {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Matrix::new(rows, cols, data)
}

/// Projects `x` onto fixed random weights so every output entry matters.
fn project(g: &Graph, x: Var, seed: u64) -> Var {
    let (r, c) = g.shape(x);
    let w = random(r, c, 1.0, &mut ChaCha8Rng::seed_from_u64(seed));
    g.sum(g.mul(x, g.leaf(w)))
}

fn reduced_dims() -> ModelDims {
    ModelDims { hidden: 4, embed: 3, latent_per_channel: 2, noise_dim: 2, pop_embed: 3, pop_hidden: 4, t_pred: 3 }
}

fn random_window(n: usize, t_obs: usize, t_pred: usize, seed: u64) -> SceneWindow {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut track = || {
        let mut p = [rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)];
        let v = [rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)];
        (0..t_obs + t_pred)
            .map(|_| {
                p = [p[0] + v[0] + rng.random_range(-0.1..0.1), p[1] + v[1] + rng.random_range(-0.1..0.1)];
                p
            })
            .collect::<Vec<_>>()
    };
    let tracks: Vec<Vec<[f64; 2]>> = (0..n).map(|_| track()).collect();
    SceneWindow::new(
        (0..n as i64).collect(),
        tracks.iter().map(|t| t[..t_obs].to_vec()).collect(),
        tracks.iter().map(|t| t[t_obs..].to_vec()).collect(),
        0.4,
    )
    .unwrap()
}

fn assert_close(name: &str, report: trajpred::gradcheck::GradReport, tol: f64) {
    assert!(report.checked > 0, "{name}: nothing checked");
    assert!(report.max_rel_error < tol, "{name}: max relative error {:.3e} at {:?}", report.max_rel_error, report.worst);
}

#[test]
fn temporal_attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut store = ParamStore::new();
    ta_encoder::register(&mut store, 3, 4, &mut rng);
    let steps: Vec<Matrix> = (0..3).map(|_| random(2, 2, 1.0, &mut rng)).collect();
    let report = check_params(&store, &[], STEP, FLOOR, |bind| {
        let g = bind.graph();
        let inputs: Vec<Var> = steps.iter().map(|m| g.leaf(m.clone())).collect();
        let hidden = ta_encoder::encode_hidden_states(bind, &inputs);
        let (alpha, summary) = ta_encoder::temporal_attention(bind, &hidden);
        g.add(project(g, summary, 11), project(g, alpha, 12))
    });
    assert_close("temporal attention", report, TOL);
}

#[test]
fn gated_graph_attention_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut store = ParamStore::new();
    social_graph::register(&mut store, 4, &mut rng);
    store.insert("x.hidden", random(3, 4, 1.0, &mut rng), ParamGroup::Main);
    let cos = Matrix::from_rows(&[[1.0, 0.3, -0.7], [0.9, 1.0, 0.1], [-0.2, -0.6, 1.0]]);
    let mask = block_mask(&[0..3]);
    for mode in [SocialMode::None, SocialMode::Hard, SocialMode::Soft] {
        let report = check_params(&store, &["x.hidden", "gat.0.w", "gat.0.a_src", "gat.0.a_dst", "social.conv_w", "social.conv_b"], STEP, FLOOR, |bind| {
            let g = bind.graph();
            let gate = gate_var(bind, mode, &cos);
            project(g, gat_layer(bind, 0, bind.get("x.hidden"), &mask, gate), 21)
        });
        assert_close(&format!("graph attention ({mode:?})"), report, TOL);
    }
}

#[test]
fn social_module_gradients_through_glstm() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut store = ParamStore::new();
    social_graph::register(&mut store, 4, &mut rng);
    for t in 0..3 {
        store.insert(format!("x.m{t}"), random(3, 4, 1.0, &mut rng), ParamGroup::Main);
    }
    let cos = vec![Matrix::from_rows(&[[1.0, 0.5, -0.4], [0.2, 1.0, 0.8], [-0.9, 0.3, 1.0]])];
    let mask = block_mask(&[0..3]);
    let report = check_params(&store, &[], STEP, FLOOR, |bind| {
        let hidden: Vec<Var> = (0..3).map(|t| bind.get(&format!("x.m{t}"))).collect();
        let out = social_graph_forward(bind, &hidden, &mask, &cos, SocialMode::Soft);
        project(bind.graph(), out.g_final, 31)
    });
    assert_close("social module", report, TOL);
}

#[test]
fn gaussian_lstm_head_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut store = ParamStore::new();
    pseudo_oracle::register(&mut store, 3, 4, 2, &mut rng);
    let steps: Vec<Matrix> = (0..3).map(|_| random(2, 2, 1.0, &mut rng)).collect();
    let prefix = pseudo_oracle::prefix(pseudo_oracle::Branch::Obs, 1);
    let names: Vec<String> = store.names().filter(|n| n.starts_with(&prefix)).map(String::from).collect();
    let names: Vec<&str> = names.iter().map(String::as_str).collect();
    let report = check_params(&store, &names, STEP, FLOOR, |bind| {
        let g = bind.graph();
        let inputs: Vec<Var> = steps.iter().map(|m| g.leaf(m.clone())).collect();
        let (mu, lv) = gaussian_lstm(bind, &prefix, &inputs);
        g.add(project(g, mu, 41), project(g, lv, 42))
    });
    assert_close("Gaussian-LSTM heads", report, TOL);
}

#[test]
fn kl_gradients_wrt_both_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut store = ParamStore::new();
    for name in ["mu_p", "lv_p", "mu_q", "lv_q"] {
        store.insert(name, random(3, 4, 1.0, &mut rng), ParamGroup::Latent);
    }
    let report = check_params(&store, &[], STEP, FLOOR, |bind| {
        let g = bind.graph();
        let kl = kl_rows(g, bind.get("mu_p"), bind.get("lv_p"), bind.get("mu_q"), bind.get("lv_q"));
        project(g, kl, 51)
    });
    assert_close("KL", report, TOL);
}

#[test]
fn reparameterization_identities() {
    let g = Graph::new();
    let mu = g.leaf(Matrix::row_vector(&[0.3, -1.2]));
    let lv = g.leaf(Matrix::row_vector(&[0.4, -0.8]));
    let eps = Matrix::row_vector(&[1.7, -0.25]);
    let z = pseudo_oracle::reparameterize(&g, mu, lv, g.leaf(eps.clone()));
    let grads = g.backward(g.sum(z));
    assert_eq!(grads.get(mu).unwrap().data(), &[1.0, 1.0]);
    // dz/dlogvar = ε σ / 2, i.e. dz/dσ = ε
    let dlv = grads.get(lv).unwrap();
    for (j, l) in [0.4f64, -0.8].iter().enumerate() {
        let sigma = (0.5 * l).exp();
        let dz_dsigma = dlv.data()[j] / (0.5 * sigma);
        assert!((dz_dsigma - eps.data()[j]).abs() < 1e-14);
    }
}

#[test]
fn decoder_rollout_gradients() {
    let model = Model::new(reduced_dims(), AblationConfig::full(), 6).unwrap();
    let mut store = model.params.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    store.insert("x.state", random(2, 4, 1.0, &mut rng), ParamGroup::Main);
    store.insert("x.last", random(2, 2, 0.5, &mut rng), ParamGroup::Main);
    let report = check_params(&store, &["x.state", "x.last", "dec.embed.w", "dec.embed.b", "dec.lstm.wx", "dec.lstm.wh", "dec.lstm.b", "dec.out.w", "dec.out.b"], STEP, FLOOR, |bind| {
        let g = bind.graph();
        let out = rollout_vars(bind, bind.get("x.state"), bind.get("x.last"), 3);
        let stacked = g.concat_cols(&out);
        project(g, stacked, 61)
    });
    assert_close("decoder rollout", report, TOL);
}

#[test]
fn end_to_end_loss_gradients() {
    let dims = reduced_dims();
    let windows = [random_window(2, 3, 3, 7)];
    let batch = Batch::new(windows.iter().collect(), vec![0]).unwrap();
    for ablation in [AblationConfig::full(), AblationConfig::new(true, true, SocialMode::Hard, true), AblationConfig::baseline()] {
        let model = Model::new(dims, ablation, 8).unwrap();
        let report = check_params(&model.params, &[], STEP, FLOOR, |bind| batch_loss(bind, &model, &batch, 3, 10.0, 9).total);
        assert_close(&format!("end to end ({ablation})"), report, TOL_END_TO_END);
    }
}

#[test]
fn test_stage_positions_gradients() {
    let dims = reduced_dims();
    let windows = [random_window(3, 3, 3, 10)];
    let batch = Batch::new(windows.iter().collect(), vec![0]).unwrap();
    let model = Model::new(dims, AblationConfig::full(), 11).unwrap();
    let noise = batch.latent_noise(2, dims.latent_dim(), 12);
    let report = check_params(&model.params, &[], STEP, FLOOR, |bind| {
        let g = bind.graph();
        let out = forward_batch(bind, &model, &batch, 2, Stage::Test, &noise);
        project(g, g.concat_cols(&out.positions), 71)
    });
    assert_close("test-stage forward", report, TOL_END_TO_END);
}
