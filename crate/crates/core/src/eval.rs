//! Metrics and benchmark protocols: displacement errors in world meters, a
//! constant-velocity baseline, best-of-N stochastic evaluation,
//! leave-one-out cross-validation and the ablation comparison.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::PreparedSample;
use crate::model::{InferMode, Model, ModelError};
use crate::train::{self, noise_vector, TrainError, Variant};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("prediction has {pred} steps but ground truth has {truth}")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("empty trajectory")]
    EmptyTrajectory,
    #[error("best-of-n needs n >= 1")]
    ZeroN,
    #[error("horizon {horizon}s needs {steps} steps but the prediction window has {have}")]
    HorizonTooLong {
        horizon: f64,
        steps: usize,
        have: usize,
    },
    #[error("horizon {0}s is too short for one step")]
    HorizonTooShort(f64),
    #[error("leave-one-out needs at least 2 datasets, got {0}")]
    TooFewDatasets(usize),
    #[error("evaluation set is empty")]
    EmptyEvalSet,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Mean displacement error over all steps, in the units of the inputs.
pub fn mad(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    if pred.is_empty() {
        return Err(EvalError::EmptyTrajectory);
    }
    let sum: f64 = pred
        .iter()
        .zip(truth.iter())
        .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
        .sum();
    Ok(sum / pred.len() as f64)
}

/// Displacement error at the final step.
pub fn fad(pred: &[[f64; 2]], truth: &[[f64; 2]]) -> Result<f64, EvalError> {
    if pred.len() != truth.len() {
        return Err(EvalError::LengthMismatch {
            pred: pred.len(),
            truth: truth.len(),
        });
    }
    let (a, b) = match (pred.last(), truth.last()) {
        (Some(a), Some(b)) => (a, b),
        _ => return Err(EvalError::EmptyTrajectory),
    };
    Ok(((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
}

/// Constant-velocity baseline in world meters: extrapolate the last
/// observed velocity from the last observed position.
pub fn constant_velocity_world(sample: &PreparedSample, dt: f64) -> Vec<[f64; 2]> {
    let last = sample.obs.last().expect("observed window is non-empty");
    // Normalized velocities were divided by the scale; undo it.
    let v = [last.vel[0] * sample.spec.scale, last.vel[1] * sample.spec.scale];
    let p0 = sample.spec.anchor;
    (1..=sample.future.len())
        .map(|k| [p0[0] + v[0] * dt * k as f64, p0[1] + v[1] * dt * k as f64])
        .collect()
}

/// How predictions are drawn during evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EvalMode {
    /// Prior mean, one prediction per sample.
    Deterministic,
    /// N prior draws per sample, keep the minimum-MAD one.
    BestOf(usize),
    /// Zero latent (no-cvae ablation).
    ZeroLatent,
}

impl EvalMode {
    pub fn name(&self) -> String {
        match self {
            EvalMode::Deterministic => "det".to_string(),
            EvalMode::BestOf(n) => format!("best-of-{n}"),
            EvalMode::ZeroLatent => "zero-latent".to_string(),
        }
    }
}

/// Best-of-N for one sample: N stochastic draws from a caller-seeded
/// stream; the minimum-MAD draw wins and its own FAD is reported, so the
/// pair comes from a single trajectory. Draw k is identical for every
/// N > k, which makes the best-of-N MAD non-increasing in N.
pub fn best_of_n(
    model: &Model,
    sample: &PreparedSample,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Result<(f64, f64, Vec<[f64; 2]>), EvalError> {
    if n == 0 {
        return Err(EvalError::ZeroN);
    }
    let mut best: Option<(f64, f64, Vec<[f64; 2]>)> = None;
    for _ in 0..n {
        let eps = noise_vector(rng, model.cfg.latent);
        let pred = model.predict_world(sample, &InferMode::Stochastic(eps))?;
        let m = mad(&pred, &sample.future_world)?;
        let f = fad(&pred, &sample.future_world)?;
        if best.as_ref().is_none_or(|(bm, _, _)| m < *bm) {
            best = Some((m, f, pred));
        }
    }
    Ok(best.expect("n >= 1"))
}

fn sample_rng(seed: u64, idx: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (idx as u64).wrapping_mul(0x517C_C1B7_2722_0A95))
}

/// MAD/FAD at one evaluation horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct HorizonMetric {
    pub seconds: f64,
    pub steps: usize,
    pub mad: f64,
    pub fad: f64,
}

/// Aggregated metrics for one dataset and evaluation mode.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub dataset: String,
    pub mode: String,
    pub samples: usize,
    pub horizons: Vec<HorizonMetric>,
}

impl MetricReport {
    /// One machine-readable line per horizon.
    pub fn records(&self) -> Vec<String> {
        self.horizons
            .iter()
            .map(|h| {
                format!(
                    "dataset={} mode={} n={} horizon={}s mad={:.4} fad={:.4}",
                    self.dataset, self.mode, self.samples, h.seconds, h.mad, h.fad
                )
            })
            .collect()
    }
}

/// Aligned table over several reports, one row per (dataset, horizon).
pub fn render_table(reports: &[MetricReport]) -> String {
    let mut rows = vec![[
        "dataset".to_string(),
        "mode".to_string(),
        "horizon".to_string(),
        "mad".to_string(),
        "fad".to_string(),
    ]];
    for r in reports {
        for h in &r.horizons {
            rows.push([
                r.dataset.clone(),
                r.mode.clone(),
                format!("{}s", h.seconds),
                format!("{:.4}", h.mad),
                format!("{:.4}", h.fad),
            ]);
        }
    }
    let mut width = [0usize; 5];
    for row in &rows {
        for (w, cell) in width.iter_mut().zip(row.iter()) {
            *w = (*w).max(cell.len());
        }
    }
    rows.iter()
        .map(|row| {
            row.iter()
                .zip(width.iter())
                .map(|(cell, w)| format!("{cell:<w$}"))
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        })
        .collect::<Vec<_>>()
        .join("\n")
}

/// Convert a horizon in seconds to a step count within the prediction
/// window.
pub fn horizon_steps(horizon: f64, dt: f64, pred_len: usize) -> Result<usize, EvalError> {
    let steps = (horizon / dt).round() as i64;
    if steps < 1 {
        return Err(EvalError::HorizonTooShort(horizon));
    }
    let steps = steps as usize;
    if steps > pred_len {
        return Err(EvalError::HorizonTooLong {
            horizon,
            steps,
            have: pred_len,
        });
    }
    Ok(steps)
}

/// Evaluate one predictor over a dataset: `predict` maps a sample index to
/// a world-frame trajectory; metrics are averaged per horizon.
fn evaluate_with<F>(
    dataset: &str,
    mode: &str,
    samples: &[PreparedSample],
    horizons: &[f64],
    dt: f64,
    mut predict: F,
) -> Result<MetricReport, EvalError>
where
    F: FnMut(usize, &PreparedSample) -> Result<Vec<[f64; 2]>, EvalError>,
{
    if samples.is_empty() {
        return Err(EvalError::EmptyEvalSet);
    }
    let pred_len = samples[0].future.len();
    let step_counts: Vec<usize> = horizons
        .iter()
        .map(|&h| horizon_steps(h, dt, pred_len))
        .collect::<Result<_, _>>()?;
    let mut acc: Vec<(f64, f64)> = vec![(0.0, 0.0); horizons.len()];
    for (i, s) in samples.iter().enumerate() {
        let pred = predict(i, s)?;
        for (k, &steps) in step_counts.iter().enumerate() {
            acc[k].0 += mad(&pred[..steps], &s.future_world[..steps])?;
            acc[k].1 += fad(&pred[..steps], &s.future_world[..steps])?;
        }
    }
    let n = samples.len() as f64;
    Ok(MetricReport {
        dataset: dataset.to_string(),
        mode: mode.to_string(),
        samples: samples.len(),
        horizons: horizons
            .iter()
            .zip(step_counts.iter())
            .zip(acc.iter())
            .map(|((&seconds, &steps), &(m, f))| HorizonMetric {
                seconds,
                steps,
                mad: m / n,
                fad: f / n,
            })
            .collect(),
    })
}

/// Evaluate a model over a dataset at the given horizons (seconds).
pub fn evaluate(
    model: &Model,
    samples: &[PreparedSample],
    mode: EvalMode,
    horizons: &[f64],
    dt: f64,
    seed: u64,
    dataset: &str,
) -> Result<MetricReport, EvalError> {
    evaluate_with(dataset, &mode.name(), samples, horizons, dt, |i, s| {
        match mode {
            EvalMode::Deterministic => Ok(model.predict_world(s, &InferMode::Deterministic)?),
            EvalMode::ZeroLatent => Ok(model.predict_world(s, &InferMode::ZeroLatent)?),
            EvalMode::BestOf(n) => {
                let mut rng = sample_rng(seed, i);
                let (_, _, pred) = best_of_n(model, s, n, &mut rng)?;
                Ok(pred)
            }
        }
    })
}

/// Constant-velocity baseline over a dataset.
pub fn evaluate_baseline(
    samples: &[PreparedSample],
    horizons: &[f64],
    dt: f64,
    dataset: &str,
) -> Result<MetricReport, EvalError> {
    evaluate_with(dataset, "const-vel", samples, horizons, dt, |_, s| {
        Ok(constant_velocity_world(s, dt))
    })
}

/// Leave-one-out protocol: for each named dataset, train on the others and
/// evaluate on it; the final report row averages the per-dataset results.
pub fn leave_one_out<F>(
    datasets: &[(String, Vec<PreparedSample>)],
    horizons: &[f64],
    dt: f64,
    seed: u64,
    mode: EvalMode,
    mut train_fn: F,
) -> Result<Vec<MetricReport>, EvalError>
where
    F: FnMut(&[PreparedSample], &str) -> Result<Model, EvalError>,
{
    if datasets.len() < 2 {
        return Err(EvalError::TooFewDatasets(datasets.len()));
    }
    let mut reports = Vec::with_capacity(datasets.len() + 1);
    for (held_out, test) in datasets {
        let train_set: Vec<PreparedSample> = datasets
            .iter()
            .filter(|(name, _)| name != held_out)
            .flat_map(|(_, s)| s.iter().cloned())
            .collect();
        let model = train_fn(&train_set, held_out)?;
        reports.push(evaluate(&model, test, mode, horizons, dt, seed, held_out)?);
    }
    let n = reports.len() as f64;
    let avg = MetricReport {
        dataset: "avg".to_string(),
        mode: mode.name(),
        samples: reports.iter().map(|r| r.samples).sum(),
        horizons: (0..horizons.len())
            .map(|k| HorizonMetric {
                seconds: reports[0].horizons[k].seconds,
                steps: reports[0].horizons[k].steps,
                mad: reports.iter().map(|r| r.horizons[k].mad).sum::<f64>() / n,
                fad: reports.iter().map(|r| r.horizons[k].fad).sum::<f64>() / n,
            })
            .collect(),
    };
    reports.push(avg);
    Ok(reports)
}

/// One row of the ablation comparison.
#[derive(Debug, Clone)]
pub struct AblationRow {
    pub variant: String,
    pub report: MetricReport,
    pub param_count: usize,
}

/// Train each variant on `train_set` and evaluate on `test_set`. The
/// no-edge variant also sees zeroed edges at test time; the no-cvae
/// variant decodes with a zero latent. The full model is reported both
/// deterministically and best-of-20.
pub fn ablation_run(
    train_set: &[PreparedSample],
    test_set: &[PreparedSample],
    model_cfg: crate::model::ModelConfig,
    train_cfg: &train::TrainConfig,
    horizons: &[f64],
    dt: f64,
    dataset: &str,
) -> Result<Vec<AblationRow>, EvalError> {
    let mut rows = Vec::new();
    for variant in [Variant::NoCvae, Variant::NoEdge, Variant::Full] {
        let mut cfg = train_cfg.clone();
        cfg.variant = variant;
        let mut model = Model::new(model_cfg, cfg.seed).map_err(TrainError::from)?;
        train::train(&mut model, train_set, &cfg)?;
        let params = model.store().scalar_count();
        let modes: &[EvalMode] = match variant {
            Variant::Full => &[EvalMode::Deterministic, EvalMode::BestOf(20)],
            Variant::NoCvae => &[EvalMode::ZeroLatent],
            Variant::NoEdge => &[EvalMode::Deterministic],
        };
        let test: Vec<PreparedSample> = if variant == Variant::NoEdge {
            train::zero_edges(test_set)
        } else {
            test_set.to_vec()
        };
        for &mode in modes {
            rows.push(AblationRow {
                variant: variant.name().to_string(),
                report: evaluate(&model, &test, mode, horizons, dt, cfg.seed, dataset)?,
                param_count: params,
            });
        }
    }
    Ok(rows)
}
