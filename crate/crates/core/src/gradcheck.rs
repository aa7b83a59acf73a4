//! Finite-difference verification of tape gradients.
//!
//! The numeric side is an independent oracle: it re-evaluates the forward
//! function at perturbed inputs and never touches the tape's backward path.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::{ForwardOpts, Model, ModelConfig};
use crate::tensor::{Tape, Tensor, TensorId};

pub const REL_TOL: f64 = 1e-4;
pub const ABS_TOL: f64 = 1e-7;
pub const FD_STEP: f64 = 1e-5;

pub fn rel_err(a: f64, b: f64) -> f64 {
    let denom = a.abs().max(b.abs());
    if denom == 0.0 {
        0.0
    } else {
        (a - b).abs() / denom
    }
}

pub fn grads_agree(analytic: f64, numeric: f64) -> bool {
    rel_err(analytic, numeric) < REL_TOL || (analytic - numeric).abs() < ABS_TOL
}

/// Central difference (f(x+h) - f(x-h)) / 2h.
pub fn central_diff_scalar(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
    (f(x + h) - f(x - h)) / (2.0 * h)
}

#[derive(Debug, Clone)]
pub struct CheckReport {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub pass: bool,
}

impl std::fmt::Display for CheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{} {:<28} max_rel_err={:.3e} ({} coords)",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel_err,
            self.coords_checked
        )
    }
}

/// Check one differentiable graph: `build` maps input tensors (already on
/// the tape as params) to a scalar loss.
fn check_graph<F>(name: &str, inputs: &[Tensor], build: F) -> CheckReport
where
    F: Fn(&Tape, &[TensorId]) -> TensorId,
{
    let tape = Tape::new();
    let ids: Vec<TensorId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&tape, &ids);
    tape.backward(loss).expect("backward");
    let analytic: Vec<Vec<f64>> = ids.iter().map(|&id| tape.grad(id).unwrap()).collect();

    let eval = |perturbed: &[Tensor]| -> f64 {
        let t = Tape::new();
        let ids: Vec<TensorId> = perturbed.iter().map(|x| t.leaf(x.clone())).collect();
        let loss = build(&t, &ids);
        t.value(loss).data[0]
    };

    let mut max_err: f64 = 0.0;
    let mut pass = true;
    let mut coords = 0;
    for (k, input) in inputs.iter().enumerate() {
        #[allow(clippy::needless_range_loop)] // c indexes both inputs and grads
        for c in 0..input.data.len() {
            let mut plus = inputs.to_vec();
            plus[k].data[c] += FD_STEP;
            let mut minus = inputs.to_vec();
            minus[k].data[c] -= FD_STEP;
            let numeric = (eval(&plus) - eval(&minus)) / (2.0 * FD_STEP);
            let a = analytic[k][c];
            if !grads_agree(a, numeric) {
                pass = false;
            }
            // Near-zero coordinates pass on the absolute tolerance; their
            // relative error is noise, so keep it out of the headline.
            if (a - numeric).abs() >= ABS_TOL {
                max_err = max_err.max(rel_err(a, numeric));
            }
            coords += 1;
        }
    }
    CheckReport {
        name: name.to_string(),
        max_rel_err: max_err,
        coords_checked: coords,
        pass,
    }
}

fn rand_tensor(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Tensor {
    Tensor::new(
        vec![m, n],
        (0..m * n).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
}

/// Finite-difference checks for every differentiable op, weighted-sum
/// losses over random inputs.
pub fn check_ops(seed: u64) -> Vec<CheckReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut reports = Vec::new();

    let w34 = rand_tensor(&mut rng, 3, 4);
    let w32 = rand_tensor(&mut rng, 3, 2);
    let w43 = rand_tensor(&mut rng, 4, 3);
    let w14 = rand_tensor(&mut rng, 1, 4);

    let a = rand_tensor(&mut rng, 3, 4);
    let b = rand_tensor(&mut rng, 4, 2);
    let w = w32.clone();
    reports.push(check_graph("matmul", &[a, b], move |t, ids| {
        let c = t.matmul(ids[0], ids[1]).unwrap();
        t.sum(t.mul(c, t.leaf(w.clone())).unwrap())
    }));

    let x = rand_tensor(&mut rng, 3, 4);
    let w = w34.clone();
    reports.push(check_graph("softmax_rows", &[x], move |t, ids| {
        let s = t.softmax(ids[0], 1).unwrap();
        t.sum(t.mul(s, t.leaf(w.clone())).unwrap())
    }));

    let x = rand_tensor(&mut rng, 3, 4);
    let w = w43.clone();
    reports.push(check_graph("softmax_cols", &[x], move |t, ids| {
        let s = t.softmax(ids[0], 0).unwrap();
        t.sum(t.mul(t.transpose(s), t.leaf(w.clone())).unwrap())
    }));

    let x = rand_tensor(&mut rng, 3, 4);
    let gain = rand_tensor(&mut rng, 1, 4);
    let bias = rand_tensor(&mut rng, 1, 4);
    let w = w34.clone();
    reports.push(check_graph(
        "layer_norm",
        &[x, gain, bias],
        move |t, ids| {
            let y = t.layer_norm(ids[0], ids[1], ids[2], 1e-5).unwrap();
            t.sum(t.mul(y, t.leaf(w.clone())).unwrap())
        },
    ));

    let a = rand_tensor(&mut rng, 3, 4);
    let b = rand_tensor(&mut rng, 3, 4);
    let w = w34.clone();
    reports.push(check_graph("add_mul_relu", &[a, b], move |t, ids| {
        let s = t.relu(t.add(ids[0], ids[1]).unwrap());
        let p = t.mul(s, t.leaf(w.clone())).unwrap();
        t.sum(p)
    }));

    let x = rand_tensor(&mut rng, 3, 4);
    let w = w14.clone();
    reports.push(check_graph("mean_pool", &[x], move |t, ids| {
        let m = t.mean_pool(ids[0], 0).unwrap();
        t.sum(t.mul(m, t.leaf(w.clone())).unwrap())
    }));

    let a = rand_tensor(&mut rng, 2, 3);
    let b = rand_tensor(&mut rng, 2, 2);
    let w = rand_tensor(&mut rng, 2, 5);
    reports.push(check_graph("concat_cols", &[a, b], move |t, ids| {
        let c = t.concat(&[ids[0], ids[1]], 1).unwrap();
        t.sum(t.mul(c, t.leaf(w.clone())).unwrap())
    }));

    let x = rand_tensor(&mut rng, 2, 3);
    reports.push(check_graph("exp_clamp", &[x], move |t, ids| {
        let y = t.exp(t.scale(t.clamp_min(ids[0], -0.5), 0.7));
        t.sum(y)
    }));

    reports
}

/// Finite-difference check through the whole network: desk configuration,
/// a fixed sample, and `coords` randomly selected parameter coordinates.
pub fn check_full_model(seed: u64, coords: usize) -> CheckReport {
    let cfg = ModelConfig::desk();
    let mut model = Model::new(cfg, seed).expect("desk config");
    let sample = desk_sample(&cfg, seed ^ 0x5eed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(7));
    let eps: Vec<f64> = (0..cfg.latent).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let opts = ForwardOpts::default();

    model.store_mut().zero_grads();
    model
        .loss_and_backward(&sample, &eps, &opts)
        .expect("forward");
    let analytic: Vec<Vec<f64>> = model
        .store()
        .entries()
        .iter()
        .map(|e| e.grad.clone())
        .collect();

    let n_params = model.store().len();
    let mut max_err: f64 = 0.0;
    let mut pass = true;
    for _ in 0..coords {
        let p = rng.gen_range(0..n_params);
        let len = model.store().entries()[p].value.len();
        let c = rng.gen_range(0..len);
        let orig = model.store().entries()[p].value[c];

        model.store_mut().entries_mut()[p].value[c] = orig + FD_STEP;
        let up = model.loss_parts(&sample, &eps, &opts).unwrap().total;
        model.store_mut().entries_mut()[p].value[c] = orig - FD_STEP;
        let down = model.loss_parts(&sample, &eps, &opts).unwrap().total;
        model.store_mut().entries_mut()[p].value[c] = orig;

        let numeric = (up - down) / (2.0 * FD_STEP);
        let a = analytic[p][c];
        if !grads_agree(a, numeric) {
            pass = false;
        }
        if (a - numeric).abs() >= ABS_TOL {
            max_err = max_err.max(rel_err(a, numeric));
        }
    }
    CheckReport {
        name: "full_model".to_string(),
        max_rel_err: max_err,
        coords_checked: coords,
        pass,
    }
}

/// Deterministic desk-scale sample with nonzero edge activity.
pub fn desk_sample(cfg: &ModelConfig, seed: u64) -> crate::data::PreparedSample {
    use crate::data::{DatasetProfile, prepare_samples};
    let profile = DatasetProfile {
        obs_len: cfg.obs_len,
        pred_len: cfg.pred_len,
        ..DatasetProfile::desk()
    };
    let scene = crate::synth::generate(crate::synth::Scenario::Crossing, 1, 0.05, seed, &profile);
    prepare_samples(&scene, &profile).expect("synthetic scene is well-formed")
        .into_iter()
        .next()
        .expect("crossing scenario yields samples")
}

/// The whole suite: every op plus the end-to-end model check.
pub fn run_suite(seed: u64) -> Vec<CheckReport> {
    let mut reports = check_ops(seed);
    reports.push(check_full_model(seed, 100));
    reports
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn op_suite_passes() {
        for r in check_ops(1234) {
            assert!(r.pass, "{r}");
        }
    }

    #[test]
    fn full_model_gradients_match_finite_differences() {
        let r = check_full_model(99, 100);
        assert!(r.pass, "{r}");
    }
}
