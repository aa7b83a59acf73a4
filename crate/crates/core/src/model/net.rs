//! Network assembly and the training/inference forward passes.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{
    causal_mask, multi_head_attention, posenc_matrix, positional_encoding, AttentionParams,
    DecoderLayer, EncoderLayer, FeedForward, GaussHead, LayerNormParams, Linear,
};
use super::params::{accumulate_grads, Graph, ParamStore};
use super::{ModelConfig, ModelError};
use crate::data::{PreparedSample, StateVector};
use crate::tensor::{Tape, Tensor, TensorId};

/// Clamp on the log-variance head so sigma stays >= 1e-6.
const LOG_VAR_FLOOR: f64 = -27.631021115928547; // 2 ln(1e-6)

/// Diagonal gaussian over the latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGaussian {
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
}

impl LatentGaussian {
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Self {
        assert_eq!(mu.len(), sigma.len());
        assert!(sigma.iter().all(|&s| s > 0.0), "sigma must be positive");
        LatentGaussian { mu, sigma }
    }
}

/// Reparameterized draw: `Z = mu + sigma ⊙ eps`.
pub fn sample_latent(g: &LatentGaussian, eps: &[f64]) -> Vec<f64> {
    g.mu.iter()
        .zip(g.sigma.iter())
        .zip(eps.iter())
        .map(|((&m, &s), &e)| m + s * e)
        .collect()
}

/// Closed-form KL divergence between diagonal gaussians, summed over
/// dimensions.
pub fn kl_divergence(q: &LatentGaussian, p: &LatentGaussian) -> f64 {
    q.mu.iter()
        .zip(q.sigma.iter())
        .zip(p.mu.iter().zip(p.sigma.iter()))
        .map(|((&mq, &sq), (&mp, &sp))| {
            (sp / sq).ln() + (sq * sq + (mq - mp) * (mq - mp)) / (2.0 * sp * sp) - 0.5
        })
        .sum()
}

/// Which latent the decoder consumes at inference time.
#[derive(Debug, Clone, PartialEq)]
pub enum InferMode {
    /// Prior mean, no sampling.
    Deterministic,
    /// Prior draw with the given standard-normal noise.
    Stochastic(Vec<f64>),
    /// Latent replaced by zeros (ablation without the CVAE branch).
    ZeroLatent,
}

/// Knobs for the training forward pass.
#[derive(Debug, Clone)]
pub struct ForwardOpts {
    /// When false the latent is a zero vector and the KL term is dropped.
    pub use_latent: bool,
    /// Feed ground-truth positions to the decoder instead of its own
    /// outputs.
    pub teacher_forcing: bool,
    /// Sample from the prior during training instead of the posterior.
    pub swap_latent_paths: bool,
}

impl Default for ForwardOpts {
    fn default() -> Self {
        ForwardOpts {
            use_latent: true,
            teacher_forcing: false,
            swap_latent_paths: false,
        }
    }
}

/// Scalar summary of one training forward pass.
#[derive(Debug, Clone)]
pub struct TrainForward {
    /// Predicted positions in the normalized frame, P×2.
    pub pred: Vec<[f64; 2]>,
    pub total: f64,
    pub mse: f64,
    pub kl: f64,
}

struct EncoderStream {
    embed: Linear,
    layers: Vec<EncoderLayer>,
    proj: Linear,
}

struct FutureEncoder {
    embed: Linear,
    self_layer: EncoderLayer,
    cross: AttentionParams,
    cross_ln: LayerNormParams,
    ff: FeedForward,
    ff_ln: LayerNormParams,
    head: GaussHead,
}

struct Decoder {
    input: Linear,
    layers: Vec<DecoderLayer>,
    out: Linear,
}

struct Arch {
    traj: EncoderStream,
    edge: EncoderStream,
    prior: GaussHead,
    future: FutureEncoder,
    dec: Decoder,
}

/// The full forecasting network with its parameter store.
pub struct Model {
    pub cfg: ModelConfig,
    store: ParamStore,
    arch: Arch,
}

impl std::fmt::Debug for Model {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Model")
            .field("cfg", &self.cfg)
            .field("params", &self.store.scalar_count())
            .finish()
    }
}

fn build_stream(
    store: &mut ParamStore,
    rng: &mut ChaCha8Rng,
    name: &str,
    cfg: &ModelConfig,
    in_width: usize,
) -> EncoderStream {
    EncoderStream {
        embed: Linear::new(store, rng, &format!("{name}.embed"), in_width, cfg.d),
        layers: (0..cfg.enc_layers)
            .map(|l| {
                EncoderLayer::new(store, rng, &format!("{name}.enc{l}"), cfg.d, cfg.heads, cfg.ff)
            })
            .collect(),
        proj: Linear::new(store, rng, &format!("{name}.proj"), cfg.d, cfg.d / 2),
    }
}

impl Model {
    /// Fresh model with fan-in-scaled uniform initialization, the same
    /// scheme for every layer; `seed` fixes the draw.
    pub fn new(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let traj = build_stream(&mut store, &mut rng, "traj", &cfg, 6);
        let edge = build_stream(&mut store, &mut rng, "edge", &cfg, 6);
        let prior = GaussHead::new(&mut store, &mut rng, "prior", cfg.d, cfg.latent);
        let future = FutureEncoder {
            embed: Linear::new(&mut store, &mut rng, "future.embed", 2, cfg.d),
            self_layer: EncoderLayer::new(
                &mut store, &mut rng, "future.self", cfg.d, cfg.heads, cfg.ff,
            ),
            cross: AttentionParams::new(&mut store, &mut rng, "future.cross", cfg.d, cfg.heads),
            cross_ln: LayerNormParams::new(&mut store, "future.cross_ln", cfg.d),
            ff: FeedForward::new(&mut store, &mut rng, "future", cfg.d, cfg.ff),
            ff_ln: LayerNormParams::new(&mut store, "future.ff_ln", cfg.d),
            head: GaussHead::new(&mut store, &mut rng, "posterior", cfg.d, cfg.latent),
        };
        let dec = Decoder {
            input: Linear::new(&mut store, &mut rng, "dec.input", 2 + cfg.latent, cfg.d),
            layers: (0..cfg.dec_layers)
                .map(|l| {
                    DecoderLayer::new(&mut store, &mut rng, &format!("dec.{l}"), cfg.d, cfg.heads, cfg.ff)
                })
                .collect(),
            out: Linear::new(&mut store, &mut rng, "dec.out", cfg.d, 2),
        };
        Ok(Model {
            cfg,
            store,
            arch: Arch {
                traj,
                edge,
                prior,
                future,
                dec,
            },
        })
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    fn states_tensor(states: &[StateVector]) -> Tensor {
        Tensor::from_rows(&states.iter().map(|s| s.to_array().to_vec()).collect::<Vec<_>>())
    }

    fn positions_tensor(pos: &[[f64; 2]]) -> Tensor {
        Tensor::from_rows(&pos.iter().map(|p| p.to_vec()).collect::<Vec<_>>())
    }

    fn check_sample(&self, sample: &PreparedSample) -> Result<(), ModelError> {
        let checks = [
            ("observed sequence", self.cfg.obs_len, sample.obs.len()),
            ("edge sequence", self.cfg.obs_len, sample.edge.len()),
            ("future sequence", self.cfg.pred_len, sample.future.len()),
        ];
        for (what, want, got) in checks {
            if want != got {
                return Err(ModelError::BadInputLength { what, want, got });
            }
        }
        Ok(())
    }

    fn encode_stream(
        &self,
        g: &Graph,
        stream: &EncoderStream,
        x: TensorId,
    ) -> Result<TensorId, ModelError> {
        let pe = g.tape.leaf(posenc_matrix(self.cfg.obs_len, self.cfg.d));
        let mut h = g.tape.add(stream.embed.forward(g, x)?, pe)?;
        for layer in &stream.layers {
            h = layer.forward(g, h, None)?;
        }
        Ok(stream.proj.forward(g, h)?)
    }

    /// Memory C (H×D) from per-timestep concatenation of the trajectory and
    /// edge features, and its row mean c_n (1×D).
    fn encode(
        &self,
        g: &Graph,
        obs: TensorId,
        edge: TensorId,
    ) -> Result<(TensorId, TensorId), ModelError> {
        let tr = self.encode_stream(g, &self.arch.traj, obs)?;
        let ed = self.encode_stream(g, &self.arch.edge, edge)?;
        let c = g.tape.concat(&[tr, ed], 1)?;
        let cn = g.tape.mean_pool(c, 0)?;
        Ok((c, cn))
    }

    /// Posterior path: future positions self-attend, cross-attend the
    /// memory, pool over timesteps and map to gaussian parameters.
    fn posterior(
        &self,
        g: &Graph,
        y: TensorId,
        c: TensorId,
    ) -> Result<(TensorId, TensorId), ModelError> {
        let f = &self.arch.future;
        let pe = g.tape.leaf(posenc_matrix(self.cfg.pred_len, self.cfg.d));
        let mut h = g.tape.add(f.embed.forward(g, y)?, pe)?;
        h = f.self_layer.forward(g, h, None)?;
        let a = multi_head_attention(g, h, c, c, &f.cross, None)?;
        h = f.cross_ln.forward(g, g.tape.add(h, a)?)?;
        let ffo = f.ff.forward(g, h)?;
        h = f.ff_ln.forward(g, g.tape.add(h, ffo)?)?;
        let pooled = g.tape.mean_pool(h, 0)?;
        Ok(f.head.forward(g, pooled)?)
    }

    /// (log sigma, sigma) from a log-variance head output, floored so the
    /// KL stays finite.
    fn sigma_nodes(&self, g: &Graph, lv: TensorId) -> (TensorId, TensorId) {
        let lv = g.tape.clamp_min(lv, LOG_VAR_FLOOR);
        let lsig = g.tape.scale(lv, 0.5);
        (lsig, g.tape.exp(lsig))
    }

    fn kl_node(
        &self,
        g: &Graph,
        mu_q: TensorId,
        lsig_q: TensorId,
        mu_p: TensorId,
        lsig_p: TensorId,
    ) -> Result<TensorId, ModelError> {
        let t = g.tape;
        let log_ratio = t.sub(lsig_p, lsig_q)?;
        let var_ratio = t.exp(t.scale(t.sub(lsig_q, lsig_p)?, 2.0));
        let dm = t.sub(mu_q, mu_p)?;
        let dm2 = t.mul(dm, dm)?;
        let inv_var_p = t.exp(t.scale(lsig_p, -2.0));
        let maha = t.mul(dm2, inv_var_p)?;
        let half = t.scale(t.add(var_ratio, maha)?, 0.5);
        let per_dim = t.add_const(t.add(log_ratio, half)?, -0.5);
        Ok(t.sum(per_dim))
    }

    /// Autoregressive rollout: each step embeds `ŷ_t ⊕ Z`, adds the step's
    /// positional encoding, runs the decoder stack causally over the steps
    /// so far and cross-attends the memory, then projects to the next
    /// position.
    fn decode(
        &self,
        g: &Graph,
        c: TensorId,
        z: TensorId,
        y_start: [f64; 2],
        teacher: Option<&Tensor>,
    ) -> Result<TensorId, ModelError> {
        let t = g.tape;
        let mut f_rows: Vec<TensorId> = Vec::with_capacity(self.cfg.pred_len);
        let mut preds: Vec<TensorId> = Vec::with_capacity(self.cfg.pred_len);
        let mut ycur = t.leaf(Tensor::row(&y_start));
        for step in 0..self.cfg.pred_len {
            let inp = t.concat(&[ycur, z], 1)?;
            let emb = self.arch.dec.input.forward(g, inp)?;
            let pe = t.leaf(Tensor::row(&positional_encoding(step, self.cfg.d)));
            f_rows.push(t.add(emb, pe)?);
            let x = t.concat(&f_rows, 0)?;
            let mask = causal_mask(step + 1);
            let mut h = x;
            for layer in &self.arch.dec.layers {
                h = layer.forward(g, h, c, &mask)?;
            }
            let last = t.slice_rows(h, step, step + 1)?;
            let y = self.arch.dec.out.forward(g, last)?;
            preds.push(y);
            ycur = match teacher {
                Some(labels) => t.leaf(Tensor::row(&[
                    labels.at(step, 0),
                    labels.at(step, 1),
                ])),
                None => y,
            };
        }
        Ok(t.concat(&preds, 0)?)
    }

    /// Build the full training graph on `tape` and return the loss nodes.
    pub fn build_train_graph(
        &self,
        g: &Graph,
        sample: &PreparedSample,
        eps: &[f64],
        opts: &ForwardOpts,
    ) -> Result<LossNodes, ModelError> {
        self.check_sample(sample)?;
        let t = g.tape;
        let obs = t.leaf(Self::states_tensor(&sample.obs));
        let edge = t.leaf(Self::states_tensor(&sample.edge));
        let y_true_tensor = Self::positions_tensor(&sample.future);
        let y_true = t.leaf(y_true_tensor.clone());

        let (c, cn) = self.encode(g, obs, edge)?;
        let (mu_p, lv_p) = self.arch.prior.forward(g, cn)?;
        let (lsig_p, sig_p) = self.sigma_nodes(g, lv_p);

        let (z, kl) = if opts.use_latent {
            let (mu_q, lv_q) = self.posterior(g, y_true, c)?;
            let (lsig_q, sig_q) = self.sigma_nodes(g, lv_q);
            let eps_leaf = t.leaf(Tensor::row(eps));
            let (mu, sig) = if opts.swap_latent_paths {
                (mu_p, sig_p)
            } else {
                (mu_q, sig_q)
            };
            let z = t.add(mu, t.mul(sig, eps_leaf)?)?;
            let kl = self.kl_node(g, mu_q, lsig_q, mu_p, lsig_p)?;
            (z, kl)
        } else {
            (
                t.leaf(Tensor::zeros(1, self.cfg.latent)),
                t.leaf(Tensor::scalar(0.0)),
            )
        };

        let y_start = sample.obs[self.cfg.obs_len - 1].pos;
        let teacher = opts.teacher_forcing.then_some(&y_true_tensor);
        let pred = self.decode(g, c, z, y_start, teacher)?;

        let diff = t.sub(y_true, pred)?;
        let sq = t.mul(diff, diff)?;
        let mse = t.scale(t.sum(sq), 1.0 / self.cfg.pred_len as f64);
        let loss = t.add(mse, kl)?;
        Ok(LossNodes {
            pred,
            loss,
            mse,
            kl,
        })
    }

    /// Forward pass only; no gradients.
    pub fn loss_parts(
        &self,
        sample: &PreparedSample,
        eps: &[f64],
        opts: &ForwardOpts,
    ) -> Result<TrainForward, ModelError> {
        let tape = Tape::new();
        let g = Graph::new(&tape, &self.store);
        let nodes = self.build_train_graph(&g, sample, eps, opts)?;
        Ok(self.read_forward(&tape, &nodes))
    }

    fn read_forward(&self, tape: &Tape, nodes: &LossNodes) -> TrainForward {
        let pred_t = tape.value(nodes.pred);
        let pred = (0..pred_t.rows())
            .map(|r| [pred_t.at(r, 0), pred_t.at(r, 1)])
            .collect();
        TrainForward {
            pred,
            total: tape.value(nodes.loss).data[0],
            mse: tape.value(nodes.mse).data[0],
            kl: tape.value(nodes.kl).data[0],
        }
    }

    /// Forward + backward; gradients are accumulated into the store
    /// (call `store_mut().zero_grads()` between optimizer steps).
    pub fn loss_and_backward(
        &mut self,
        sample: &PreparedSample,
        eps: &[f64],
        opts: &ForwardOpts,
    ) -> Result<TrainForward, ModelError> {
        let tape = Tape::new();
        let grads;
        let out;
        {
            let g = Graph::new(&tape, &self.store);
            let nodes = self.build_train_graph(&g, sample, eps, opts)?;
            tape.backward(nodes.loss)?;
            out = self.read_forward(&tape, &nodes);
            grads = g.collect_grads();
        }
        accumulate_grads(&mut self.store, &grads);
        Ok(out)
    }

    /// Predicted positions in the normalized frame.
    pub fn predict(
        &self,
        sample: &PreparedSample,
        mode: &InferMode,
    ) -> Result<Vec<[f64; 2]>, ModelError> {
        self.check_sample(sample)?;
        let tape = Tape::new();
        let g = Graph::new(&tape, &self.store);
        let t = &tape;
        let obs = t.leaf(Self::states_tensor(&sample.obs));
        let edge = t.leaf(Self::states_tensor(&sample.edge));
        let (c, cn) = self.encode(&g, obs, edge)?;
        let (mu_p, lv_p) = self.arch.prior.forward(&g, cn)?;
        let (_, sig_p) = self.sigma_nodes(&g, lv_p);
        let z = match mode {
            InferMode::Deterministic => mu_p,
            InferMode::Stochastic(eps) => {
                let eps_leaf = t.leaf(Tensor::row(eps));
                t.add(mu_p, t.mul(sig_p, eps_leaf)?)?
            }
            InferMode::ZeroLatent => t.leaf(Tensor::zeros(1, self.cfg.latent)),
        };
        let y_start = sample.obs[self.cfg.obs_len - 1].pos;
        let pred = self.decode(&g, c, z, y_start, None)?;
        let v = tape.value(pred);
        Ok((0..v.rows()).map(|r| [v.at(r, 0), v.at(r, 1)]).collect())
    }

    /// Predicted positions mapped back to world meters.
    pub fn predict_world(
        &self,
        sample: &PreparedSample,
        mode: &InferMode,
    ) -> Result<Vec<[f64; 2]>, ModelError> {
        let normed = self.predict(sample, mode)?;
        Ok(crate::data::denormalize_prediction(&normed, &sample.spec))
    }

    /// The prior distribution for a sample, as plain values.
    pub fn prior_for(&self, sample: &PreparedSample) -> Result<LatentGaussian, ModelError> {
        self.check_sample(sample)?;
        let tape = Tape::new();
        let g = Graph::new(&tape, &self.store);
        let obs = tape.leaf(Self::states_tensor(&sample.obs));
        let edge = tape.leaf(Self::states_tensor(&sample.edge));
        let (_, cn) = self.encode(&g, obs, edge)?;
        let (mu_p, lv_p) = self.arch.prior.forward(&g, cn)?;
        let (_, sig_p) = self.sigma_nodes(&g, lv_p);
        Ok(LatentGaussian::new(
            tape.value(mu_p).data,
            tape.value(sig_p).data,
        ))
    }
}

/// Tape handles for the training objective.
pub struct LossNodes {
    pub pred: TensorId,
    pub loss: TensorId,
    pub mse: TensorId,
    pub kl: TensorId,
}
