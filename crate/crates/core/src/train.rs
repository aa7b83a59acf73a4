//! Training loop: Adam with exponential learning-rate decay, mini-batch
//! gradient accumulation and optional rotation augmentation. Everything is
//! seeded, so a run is reproducible bit for bit.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::data::PreparedSample;
use crate::model::{save_checkpoint, CheckpointError, ForwardOpts, Model, ModelError, ParamStore};
use crate::synth::standard_normal;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training set is empty")]
    EmptyDataset,
    #[error("batch size must be >= 1")]
    ZeroBatch,
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGrad(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
}

/// Which pieces of the network a run trains and evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Full,
    /// Edge sequences zeroed out: no neighbor information.
    NoEdge,
    /// Latent fixed at zero and the KL term dropped.
    NoCvae,
}

impl Variant {
    pub fn name(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoEdge => "no-edge",
            Variant::NoCvae => "no-cvae",
        }
    }

    pub fn forward_opts(self, teacher_forcing: bool) -> ForwardOpts {
        ForwardOpts {
            use_latent: self != Variant::NoCvae,
            teacher_forcing,
            swap_latent_paths: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Initial learning rate; decays as `lr0 * decay^epoch`.
    pub lr0: f64,
    pub decay: f64,
    pub seed: u64,
    /// Expand the training set with rotated copies (24 angles, 15° apart).
    pub augment: bool,
    pub teacher_forcing: bool,
    pub variant: Variant,
    /// Write a checkpoint every this many epochs (0 = only on request).
    pub checkpoint_interval: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 100,
            batch_size: 100,
            lr0: 1e-3,
            decay: 0.95,
            seed: 0,
            augment: false,
            teacher_forcing: false,
            variant: Variant::Full,
            checkpoint_interval: 0,
        }
    }
}

/// `lr0 * decay^epoch`, epoch counted from zero.
pub fn lr_schedule(epoch: usize, lr0: f64, decay: f64) -> f64 {
    lr0 * decay.powi(epoch as i32)
}

/// One line of the loss log.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub mse: f64,
    pub kl: f64,
}

impl std::fmt::Display for EpochLog {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "epoch={} lr={:.6e} loss={:.6} mse={:.6} kl={:.6}",
            self.epoch, self.lr, self.total, self.mse, self.kl
        )
    }
}

/// Adam optimizer state: first/second moment buffers per parameter and the
/// global step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        AdamState {
            m: store.entries().iter().map(|e| vec![0.0; e.value.len()]).collect(),
            v: store.entries().iter().map(|e| vec![0.0; e.value.len()]).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// Apply one Adam update from the gradients currently accumulated in the
/// store. Rejects non-finite gradients by parameter name.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, lr: f64) -> Result<(), TrainError> {
    for e in store.entries() {
        if e.grad.iter().any(|g| !g.is_finite()) {
            return Err(TrainError::NonFiniteGrad(e.name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - state.beta1.powi(t);
    let bc2 = 1.0 - state.beta2.powi(t);
    for (p, e) in store.entries_mut().iter_mut().enumerate() {
        for c in 0..e.value.len() {
            let g = e.grad[c];
            let m = &mut state.m[p][c];
            let v = &mut state.v[p][c];
            *m = state.beta1 * *m + (1.0 - state.beta1) * g;
            *v = state.beta2 * *v + (1.0 - state.beta2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            e.value[c] -= lr * mhat / (vhat.sqrt() + state.eps);
        }
    }
    Ok(())
}

/// Every rotated copy of every sample: 24 angles, 15 degrees apart,
/// including the identity.
pub fn augmented(samples: &[PreparedSample]) -> Vec<PreparedSample> {
    let mut out = Vec::with_capacity(samples.len() * 24);
    for s in samples {
        for k in 0..24 {
            out.push(s.rotated(k as f64 * 15.0));
        }
    }
    out
}

/// Copies with the edge sequences replaced by zeros (no-edge ablation).
pub fn zero_edges(samples: &[PreparedSample]) -> Vec<PreparedSample> {
    samples
        .iter()
        .map(|s| {
            let mut s = s.clone();
            for e in &mut s.edge {
                *e = crate::data::StateVector::zero();
            }
            s
        })
        .collect()
}

/// Train `model` in place; returns the per-epoch loss log. When `out_dir`
/// is given and `checkpoint_interval > 0`, a checkpoint lands there every
/// interval epochs (and after the last).
pub fn train_with_checkpoints(
    model: &mut Model,
    samples: &[PreparedSample],
    cfg: &TrainConfig,
    out_dir: Option<&Path>,
) -> Result<Vec<EpochLog>, TrainError> {
    if samples.is_empty() {
        return Err(TrainError::EmptyDataset);
    }
    if cfg.batch_size == 0 {
        return Err(TrainError::ZeroBatch);
    }
    let mut dataset: Vec<PreparedSample> = if cfg.augment {
        augmented(samples)
    } else {
        samples.to_vec()
    };
    if cfg.variant == Variant::NoEdge {
        dataset = zero_edges(&dataset);
    }
    let opts = cfg.variant.forward_opts(cfg.teacher_forcing);
    let latent = model.cfg.latent;
    let mut adam = AdamState::new(model.store());
    let mut logs = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let lr = lr_schedule(epoch, cfg.lr0, cfg.decay);
        let mut rng = ChaCha8Rng::seed_from_u64(
            cfg.seed ^ (epoch as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut rng);

        let (mut total, mut mse, mut kl) = (0.0, 0.0, 0.0);
        for batch in order.chunks(cfg.batch_size) {
            model.store_mut().zero_grads();
            for &idx in batch {
                let eps: Vec<f64> = (0..latent).map(|_| standard_normal(&mut rng)).collect();
                let f = model.loss_and_backward(&dataset[idx], &eps, &opts)?;
                total += f.total;
                mse += f.mse;
                kl += f.kl;
            }
            model.store_mut().scale_grads(1.0 / batch.len() as f64);
            adam_step(model.store_mut(), &mut adam, lr)?;
        }
        let n = dataset.len() as f64;
        let log = EpochLog {
            epoch,
            lr,
            total: total / n,
            mse: mse / n,
            kl: kl / n,
        };
        if let Some(dir) = out_dir {
            let last = epoch + 1 == cfg.epochs;
            if (cfg.checkpoint_interval > 0 && (epoch + 1) % cfg.checkpoint_interval == 0) || last {
                save_checkpoint(model, &dir.join(format!("epoch_{:04}.ckpt", epoch + 1)))?;
            }
        }
        logs.push(log);
    }
    Ok(logs)
}

/// [`train_with_checkpoints`] without any checkpoint output.
pub fn train(
    model: &mut Model,
    samples: &[PreparedSample],
    cfg: &TrainConfig,
) -> Result<Vec<EpochLog>, TrainError> {
    train_with_checkpoints(model, samples, cfg, None)
}

/// Fresh standard-normal noise vectors from a dedicated stream.
pub fn noise_vector<R: Rng>(rng: &mut R, dim: usize) -> Vec<f64> {
    (0..dim).map(|_| standard_normal(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{prepare_samples, DatasetProfile};
    use crate::model::ModelConfig;
    use crate::synth::{generate, Scenario};

    fn desk_dataset(episodes: usize, seed: u64) -> Vec<PreparedSample> {
        let profile = DatasetProfile::desk();
        let scene = generate(Scenario::Crossing, episodes, 0.05, seed, &profile);
        prepare_samples(&scene, &profile).unwrap()
    }

    #[test]
    fn lr_schedule_matches_closed_form() {
        assert_eq!(lr_schedule(0, 1e-3, 0.95), 1e-3);
        let want = 1e-3 * 0.95f64.powi(10);
        assert!((lr_schedule(10, 1e-3, 0.95) - want).abs() < 1e-18);
        assert!((want - 5.987369392383789e-4).abs() < 1e-12);
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut model = Model::new(ModelConfig::desk(), 1).unwrap();
        let before: Vec<Vec<f64>> = model.store().entries().iter().map(|e| e.value.clone()).collect();
        let mut adam = AdamState::new(model.store());
        model.store_mut().zero_grads();
        adam_step(model.store_mut(), &mut adam, 1e-3).unwrap();
        for (a, e) in before.iter().zip(model.store().entries().iter()) {
            assert_eq!(a, &e.value);
        }
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn adam_first_step_magnitude_is_lr() {
        // With m̂/√v̂ = g/|g| on step one, each coordinate moves by
        // lr·|g|/(|g|+eps·√(1-β2)) ≈ lr.
        let mut model = Model::new(ModelConfig::desk(), 1).unwrap();
        let before = model.store().entries()[0].value[0];
        let mut adam = AdamState::new(model.store());
        model.store_mut().zero_grads();
        model.store_mut().entries_mut()[0].grad[0] = 0.37;
        adam_step(model.store_mut(), &mut adam, 1e-3).unwrap();
        let after = model.store().entries()[0].value[0];
        assert!(((before - after) - 1e-3).abs() < 1e-8, "moved {}", before - after);
    }

    #[test]
    fn adam_rejects_nan_gradient_by_name() {
        let mut model = Model::new(ModelConfig::desk(), 1).unwrap();
        let mut adam = AdamState::new(model.store());
        model.store_mut().zero_grads();
        model.store_mut().entries_mut()[3].grad[0] = f64::NAN;
        let name = model.store().entries()[3].name.clone();
        let err = adam_step(model.store_mut(), &mut adam, 1e-3).unwrap_err();
        assert!(err.to_string().contains(&name), "{err}");
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // Minimize (x-2)^2 by hand-fed gradients.
        let mut store = ParamStore::new();
        store.add("x", crate::tensor::Tensor::scalar(-1.0));
        let mut adam = AdamState::new(&store);
        for _ in 0..2000 {
            let x = store.entries()[0].value[0];
            store.entries_mut()[0].grad[0] = 2.0 * (x - 2.0);
            adam_step(&mut store, &mut adam, 0.05).unwrap();
        }
        assert!((store.entries()[0].value[0] - 2.0).abs() < 1e-3);
    }

    #[test]
    fn empty_dataset_is_contract_error() {
        let mut model = Model::new(ModelConfig::desk(), 1).unwrap();
        let err = train(&mut model, &[], &TrainConfig::default()).unwrap_err();
        assert!(matches!(err, TrainError::EmptyDataset));
    }

    #[test]
    fn augmentation_expands_by_24() {
        let samples = desk_dataset(2, 5);
        assert_eq!(augmented(&samples).len(), samples.len() * 24);
    }

    #[test]
    fn augmented_copies_preserve_pairwise_distances() {
        let samples = desk_dataset(1, 5);
        let aug = augmented(&samples);
        let orig = &samples[0];
        for copy in &aug[0..24] {
            for (a, b) in orig.obs.iter().zip(copy.obs.iter()) {
                let ra = (a.pos[0].powi(2) + a.pos[1].powi(2)).sqrt();
                let rb = (b.pos[0].powi(2) + b.pos[1].powi(2)).sqrt();
                assert!((ra - rb).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn zero_edges_zeroes_only_edges() {
        let samples = desk_dataset(1, 5);
        let z = zero_edges(&samples);
        assert_eq!(z.len(), samples.len());
        for (a, b) in samples.iter().zip(z.iter()) {
            assert_eq!(a.obs, b.obs);
            assert!(b.edge.iter().all(|e| *e == crate::data::StateVector::zero()));
        }
    }

    #[test]
    fn training_is_deterministic() {
        let samples = desk_dataset(2, 9);
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 2,
            ..Default::default()
        };
        let mut m1 = Model::new(ModelConfig::desk(), 7).unwrap();
        let mut m2 = Model::new(ModelConfig::desk(), 7).unwrap();
        let l1 = train(&mut m1, &samples, &cfg).unwrap();
        let l2 = train(&mut m2, &samples, &cfg).unwrap();
        assert_eq!(l1, l2);
        for (a, b) in m1.store().entries().iter().zip(m2.store().entries().iter()) {
            assert_eq!(a.value, b.value);
        }
    }

    #[test]
    fn loss_decreases_on_small_dataset() {
        let samples = desk_dataset(3, 11);
        let cfg = TrainConfig {
            epochs: 15,
            batch_size: 6,
            lr0: 3e-3,
            decay: 0.99,
            ..Default::default()
        };
        let mut model = Model::new(ModelConfig::desk(), 3).unwrap();
        let logs = train(&mut model, &samples, &cfg).unwrap();
        let first = logs.first().unwrap().total;
        let last = logs.last().unwrap().total;
        assert!(last < first, "loss went {first} -> {last}");
    }

    #[test]
    fn checkpoints_land_at_interval() {
        let samples = desk_dataset(1, 2);
        let dir = tempfile::tempdir().unwrap();
        let cfg = TrainConfig {
            epochs: 4,
            batch_size: 4,
            checkpoint_interval: 2,
            ..Default::default()
        };
        let mut model = Model::new(ModelConfig::desk(), 3).unwrap();
        train_with_checkpoints(&mut model, &samples, &cfg, Some(dir.path())).unwrap();
        assert!(dir.path().join("epoch_0002.ckpt").exists());
        assert!(dir.path().join("epoch_0004.ckpt").exists());
        assert!(!dir.path().join("epoch_0001.ckpt").exists());
    }
}
