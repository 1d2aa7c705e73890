//! The forecasting model: interleaved temporal/social attention encoder,
//! seed-parameter multimodal decoder, mode-prior head, occupancy-grid context
//! encoder, plus the ego-only and no-social-attention variants and an
//! autoregressive decoding ablation used for throughput comparisons.

mod checkpoint;
mod forward;
mod params;

pub use checkpoint::{load_checkpoint, save_checkpoint, CHECKPOINT_VERSION};
pub use params::{ParamId, ParamStore, Session};

use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use params::{Init, LinearP, MabP, MabdP, RffnP};

/// Floor added to output standard deviations (meters).
pub const SIGMA_MIN: f64 = 1e-3;
/// Output correlations are squashed to (-RHO_SCALE, RHO_SCALE).
pub const RHO_SCALE: f64 = 0.99;
/// Channel-dropout rate applied to the context-grid feature volume.
pub const MAP_DROPOUT: f64 = 0.1;

/// Architecture hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Hidden dimension throughout the model.
    pub d_k: usize,
    /// Number of discrete latent modes (c).
    pub modes: usize,
    /// Stacked temporal/social layers in the encoder.
    pub enc_layers: usize,
    /// Stacked temporal/social layers in the decoder.
    pub dec_layers: usize,
    /// Attention heads in every MHSA.
    pub heads: usize,
    /// Dropout rate inside MAB/MABD blocks.
    pub dropout: f64,
    /// Prediction horizon T.
    pub horizon: usize,
    /// Input attributes per agent per timestep (x/y = 2).
    pub attributes: usize,
    /// Whether the context-grid encoder is active.
    pub use_map: bool,
    /// Ego variant: predict a single agent, no intra-set attention while
    /// decoding.
    pub ego_only: bool,
    /// When false, intra-set (social) attention is skipped in both encoder
    /// and decoder (the "anti-social" ablation).
    pub social_attention: bool,
    /// Divide attention logits by sqrt(d/H).
    pub logit_scaling: bool,
    /// Context occupancy grid edge length (cells).
    pub grid_size: usize,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.d_k == 0 || self.heads == 0 || self.d_k % self.heads != 0 {
            return Err(Error::Config(format!(
                "head count {} must divide hidden dim {}",
                self.heads, self.d_k
            )));
        }
        if self.d_k % 2 != 0 {
            return Err(Error::Config(format!(
                "hidden dim {} must be even (positional encoding, map slices)",
                self.d_k
            )));
        }
        if self.horizon == 0 {
            return Err(Error::Config("horizon must be >= 1".into()));
        }
        if self.modes == 0 {
            return Err(Error::Config("mode count must be >= 1".into()));
        }
        if self.attributes == 0 {
            return Err(Error::Config("attribute count must be >= 1".into()));
        }
        if self.enc_layers == 0 || self.dec_layers == 0 {
            return Err(Error::Config("layer counts must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        if self.use_map && (self.grid_size == 0 || self.grid_size % 8 != 0) {
            return Err(Error::Config(format!(
                "grid size {} must be a positive multiple of 8",
                self.grid_size
            )));
        }
        Ok(())
    }

    /// Per-mode context feature length.
    pub fn map_feature_len(&self) -> usize {
        self.d_k / 2
    }

    /// Particle-toy preset: d_k 64, 10 modes, 1 layer, 8 heads, no dropout.
    pub fn toy() -> Self {
        Self {
            d_k: 64,
            modes: 10,
            enc_layers: 1,
            dec_layers: 1,
            heads: 8,
            dropout: 0.0,
            horizon: 12,
            attributes: 2,
            use_map: false,
            ego_only: false,
            social_attention: true,
            logit_scaling: true,
            grid_size: 32,
        }
    }

    /// Desk-scale preset for interacting pedestrian scenes (9 observed steps,
    /// 12 predicted, 6 modes).
    pub fn social() -> Self {
        Self {
            d_k: 32,
            modes: 6,
            enc_layers: 1,
            dec_layers: 1,
            heads: 4,
            dropout: 0.0,
            horizon: 12,
            attributes: 2,
            use_map: false,
            ego_only: false,
            social_attention: true,
            logit_scaling: true,
            grid_size: 32,
        }
    }
}

/// Input scene: attribute values of shape (K, M, t) plus a per-(agent,
/// timestep) validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneTensor {
    values: Tensor,
    valid: Vec<bool>,
    pub ego_index: Option<usize>,
}

impl SceneTensor {
    pub fn new(values: Tensor, valid: Vec<bool>, ego_index: Option<usize>) -> Result<Self> {
        let shape = values.shape();
        if shape.len() != 3 {
            return Err(Error::Scene(format!(
                "scene values must have shape (K, M, t), got {shape:?}"
            )));
        }
        let (m, t) = (shape[1], shape[2]);
        if valid.len() != m * t {
            return Err(Error::Scene(format!(
                "validity mask has {} entries, expected {m}x{t}",
                valid.len()
            )));
        }
        if !values.is_finite() {
            return Err(Error::Scene("scene coordinates must be finite".into()));
        }
        if let Some(e) = ego_index {
            if e >= m {
                return Err(Error::Scene(format!("ego index {e} out of range for {m} agents")));
            }
        }
        Ok(Self {
            values,
            valid,
            ego_index,
        })
    }

    /// Fully valid scene from per-agent attribute matrices.
    pub fn fully_valid(values: Tensor, ego_index: Option<usize>) -> Result<Self> {
        let (m, t) = (values.shape()[1], values.shape()[2]);
        Self::new(values, vec![true; m * t], ego_index)
    }

    pub fn values(&self) -> &Tensor {
        &self.values
    }

    pub fn attributes(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn agents(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn timesteps(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn is_valid_at(&self, agent: usize, step: usize) -> bool {
        self.valid[agent * self.timesteps() + step]
    }

    /// Whether the agent has any valid observation.
    pub fn agent_present(&self, agent: usize) -> bool {
        (0..self.timesteps()).any(|t| self.is_valid_at(agent, t))
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    /// Scene-level checks required before encoding: at least one agent must
    /// be observable at every timestep.
    pub fn check_encodable(&self) -> Result<()> {
        for t in 0..self.timesteps() {
            if !(0..self.agents()).any(|m| self.is_valid_at(m, t)) {
                return Err(Error::Scene(format!(
                    "all agents are masked out at timestep {t}"
                )));
            }
        }
        Ok(())
    }

    /// Reorders agents: new agent `i` is old agent `perm[i]`. The ego index
    /// follows its agent.
    pub fn permute_agents(&self, perm: &[usize]) -> Result<SceneTensor> {
        let (k, m, t) = (self.attributes(), self.agents(), self.timesteps());
        if perm.len() != m {
            return Err(Error::Contract(format!(
                "permutation of length {} for {m} agents",
                perm.len()
            )));
        }
        let values = Tensor::from_fn(&[k, m, t], |flat| {
            let tt = flat % t;
            let mm = (flat / t) % m;
            let kk = flat / (t * m);
            self.values.at(&[kk, perm[mm], tt])
        });
        let mut valid = vec![false; m * t];
        for (new_m, &old_m) in perm.iter().enumerate() {
            for tt in 0..t {
                valid[new_m * t + tt] = self.is_valid_at(old_m, tt);
            }
        }
        let ego_index = self
            .ego_index
            .map(|old| perm.iter().position(|&p| p == old).unwrap());
        SceneTensor::new(values, valid, ego_index)
    }
}

/// Encoder output of shape (d_K, M, t).
#[derive(Debug, Clone, PartialEq)]
pub struct ContextTensor {
    pub values: Tensor,
}

impl ContextTensor {
    pub fn d_k(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn agents(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn timesteps(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Binary occupancy grid describing static context around the scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextGrid {
    /// Row-major G x G cells, each 0 (free) or 1 (occupied).
    pub occupancy: Vec<u8>,
    pub size: usize,
    /// Meters per cell.
    pub resolution: f64,
    /// Scene-frame position of the grid's (0, 0) cell corner.
    pub origin: (f64, f64),
}

impl ContextGrid {
    pub fn validate(&self) -> Result<()> {
        if self.size == 0 || self.occupancy.len() != self.size * self.size {
            return Err(Error::Config(format!(
                "grid has {} cells, expected {}x{}",
                self.occupancy.len(),
                self.size,
                self.size
            )));
        }
        if self.occupancy.iter().any(|&v| v > 1) {
            return Err(Error::Config("grid cells must be 0 or 1".into()));
        }
        if !(self.resolution.is_finite() && self.resolution > 0.0) {
            return Err(Error::Config("grid resolution must be positive".into()));
        }
        Ok(())
    }

    pub fn empty(size: usize, resolution: f64) -> Self {
        let half = size as f64 * resolution / 2.0;
        Self {
            occupancy: vec![0; size * size],
            size,
            resolution,
            origin: (-half, -half),
        }
    }

    /// Whether the scene-frame point falls in an occupied cell (points outside
    /// the grid count as free).
    pub fn occupied_at(&self, x: f64, y: f64) -> bool {
        let cx = ((x - self.origin.0) / self.resolution).floor();
        let cy = ((y - self.origin.1) / self.resolution).floor();
        if cx < 0.0 || cy < 0.0 || cx >= self.size as f64 || cy >= self.size as f64 {
            return false;
        }
        self.occupancy[cy as usize * self.size + cx as usize] == 1
    }
}

/// Bivariate Gaussian output parameters for one (agent, timestep).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianParams {
    pub mu_x: f64,
    pub mu_y: f64,
    pub sigma_x: f64,
    pub sigma_y: f64,
    pub rho: f64,
}

impl GaussianParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.sigma_x > 0.0
            && self.sigma_y > 0.0
            && self.rho.abs() < 1.0
            && [self.mu_x, self.mu_y, self.sigma_x, self.sigma_y, self.rho]
                .iter()
                .all(|v| v.is_finite());
        if ok {
            Ok(())
        } else {
            Err(Error::Numeric(format!("invalid Gaussian parameters {self:?}")))
        }
    }
}

/// Per-mode, per-agent, per-timestep Gaussians of shape (c, M, T).
#[derive(Debug, Clone, PartialEq)]
pub struct ModeGaussians {
    pub modes: usize,
    pub agents: usize,
    pub horizon: usize,
    params: Vec<GaussianParams>,
}

impl ModeGaussians {
    pub fn new(modes: usize, agents: usize, horizon: usize, params: Vec<GaussianParams>) -> Result<Self> {
        if params.len() != modes * agents * horizon {
            return Err(Error::Contract(format!(
                "expected {} Gaussians, got {}",
                modes * agents * horizon,
                params.len()
            )));
        }
        Ok(Self {
            modes,
            agents,
            horizon,
            params,
        })
    }

    pub fn at(&self, mode: usize, agent: usize, step: usize) -> &GaussianParams {
        &self.params[(mode * self.agents + agent) * self.horizon + step]
    }

    pub fn params(&self) -> &[GaussianParams] {
        &self.params
    }

    /// Mean trajectory of one (mode, agent).
    pub fn mean_trajectory(&self, mode: usize, agent: usize) -> Vec<(f64, f64)> {
        (0..self.horizon)
            .map(|t| {
                let g = self.at(mode, agent, t);
                (g.mu_x, g.mu_y)
            })
            .collect()
    }
}

/// Full multimodal prediction: Gaussians plus the mode distribution p(Z|X).
#[derive(Debug, Clone, PartialEq)]
pub struct ModePrediction {
    pub gaussians: ModeGaussians,
    pub mode_probs: Vec<f64>,
}

impl ModePrediction {
    pub fn validate(&self) -> Result<()> {
        if self.mode_probs.len() != self.gaussians.modes {
            return Err(Error::Contract(format!(
                "{} mode probabilities for {} modes",
                self.mode_probs.len(),
                self.gaussians.modes
            )));
        }
        let sum: f64 = self.mode_probs.iter().sum();
        if self.mode_probs.iter().any(|&p| !(0.0..=1.0 + 1e-12).contains(&p)) || (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Numeric(format!(
                "mode probabilities not a simplex (sum {sum})"
            )));
        }
        for g in self.gaussians.params() {
            g.validate()?;
        }
        Ok(())
    }
}

/// Snapshot of the decoder's learnable seed parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SeedParameters {
    /// One (T, d_K) matrix per mode (time-major layout of the conceptual
    /// (d_K, T) seed).
    pub q: Vec<Tensor>,
    /// Mode-prior seeds, shape (c, d_K).
    pub p: Tensor,
}

/// Instrumentation counters for decoder work.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecodeStats {
    /// Temporal decoder-layer passes: one per (mode, layer) application of the
    /// decoder stack over a full sequence (autoregressive decoding pays one
    /// per generated step instead).
    pub temporal_passes: usize,
}

/// Output of a training forward pass, with graph handles still live.
pub struct ForwardNodes {
    /// Squashed Gaussian parameters, shape (c, M_out, T, 5):
    /// [mu_x, mu_y, sigma_x, sigma_y, rho].
    pub gaussians: crate::tensor::NodeId,
    /// Log mode probabilities, shape (c).
    pub mode_log_probs: crate::tensor::NodeId,
    /// Scene agent index behind each output row (length M_out; the ego
    /// variant outputs a single row).
    pub agent_indices: Vec<usize>,
    pub stats: DecodeStats,
}

pub(crate) struct MapEncoderP {
    pub convs: Vec<(ParamId, ParamId)>,
    pub proj: LinearP,
}

/// The forecasting model. Immutable during inference; training mutates
/// parameters through [`Model::params_mut`].
pub struct Model {
    config: ModelConfig,
    store: ParamStore,
    pub(crate) embed: RffnP,
    pub(crate) enc_temporal: Vec<MabP>,
    pub(crate) enc_social: Vec<MabP>,
    pub(crate) dec_input: RffnP,
    pub(crate) dec_temporal: Vec<MabdP>,
    pub(crate) dec_social: Vec<MabP>,
    pub(crate) seeds_q: Vec<ParamId>,
    pub(crate) seeds_p: ParamId,
    pub(crate) prior_mabd: MabdP,
    pub(crate) prior_lin: LinearP,
    pub(crate) out_head: LinearP,
    pub(crate) ar_embed: LinearP,
    pub(crate) map_encoder: Option<MapEncoderP>,
}

impl Model {
    /// Builds a model with freshly initialized weights drawn from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut init = Init { rng: &mut rng };
        let d = config.d_k;

        let embed = RffnP::new(&mut store, &mut init, "embed", config.attributes, d, d);
        let enc_temporal = (0..config.enc_layers)
            .map(|l| MabP::new(&mut store, &mut init, &format!("enc.temporal.{l}"), d))
            .collect();
        let enc_social = (0..config.enc_layers)
            .map(|l| MabP::new(&mut store, &mut init, &format!("enc.social.{l}"), d))
            .collect();

        let d_map = config.map_feature_len();
        let dec_input = RffnP::new(&mut store, &mut init, "dec.input", d + d_map, d, d);
        let dec_temporal = (0..config.dec_layers)
            .map(|l| MabdP::new(&mut store, &mut init, &format!("dec.temporal.{l}"), d))
            .collect();
        let dec_social = (0..config.dec_layers)
            .map(|l| MabP::new(&mut store, &mut init, &format!("dec.social.{l}"), d))
            .collect();

        let seeds_q = (0..config.modes)
            .map(|i| {
                let t = init.seed_matrix(&[config.horizon, d], d);
                store.add(format!("dec.seed_q.{i}"), t)
            })
            .collect();
        let p_seed = init.seed_matrix(&[config.modes, d], d);
        let seeds_p = store.add("prior.seed_p", p_seed);
        let prior_mabd = MabdP::new(&mut store, &mut init, "prior.mabd", d);
        let prior_lin = LinearP::new(&mut store, &mut init, "prior.lin", d, 1);
        let out_head = LinearP::new(&mut store, &mut init, "head", d, 5);
        let ar_embed = LinearP::new(&mut store, &mut init, "ar.embed", 2, d);

        // Three stride-2 conv layers halve the grid to G/8, then a linear map
        // produces c equally sized per-mode feature slices.
        let map_encoder = if config.use_map {
            let channels = [1usize, 4, 8, 8];
            let convs: Vec<(ParamId, ParamId)> = (0..3)
                .map(|i| {
                    let (ci, co) = (channels[i], channels[i + 1]);
                    let w = store.add(format!("map.conv{i}.w"), init.conv_weight(co, ci, 4));
                    let b = store.add(format!("map.conv{i}.b"), Tensor::zeros(&[co]));
                    (w, b)
                })
                .collect();
            let cells = config.grid_size / 8;
            let flat = channels[3] * cells * cells;
            let proj = LinearP::new(&mut store, &mut init, "map.proj", flat, config.modes * d_map);
            Some(MapEncoderP { convs, proj })
        } else {
            None
        };

        Ok(Self {
            config,
            store,
            embed,
            enc_temporal,
            enc_social,
            dec_input,
            dec_temporal,
            dec_social,
            seeds_q,
            seeds_p,
            prior_mabd,
            prior_lin,
            out_head,
            ar_embed,
            map_encoder,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.store
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    /// Opens a forward session. Training sessions track gradients and apply
    /// dropout; the rng seed drives dropout masks.
    pub fn session(&self, train: bool, rng_seed: u64) -> Session<'_> {
        Session::new(&self.store, train, rng_seed)
    }

    pub fn seed_parameters(&self) -> SeedParameters {
        SeedParameters {
            q: self
                .seeds_q
                .iter()
                .map(|&id| self.store.tensor(id).clone())
                .collect(),
            p: self.store.tensor(self.seeds_p).clone(),
        }
    }

    /// Applies the output head to a single d_K feature vector.
    pub fn output_head_phi(&self, features: &[f64]) -> Result<GaussianParams> {
        let d = self.config.d_k;
        if features.len() != d {
            return Err(Error::Contract(format!(
                "output head expects {d} features, got {}",
                features.len()
            )));
        }
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("output head input must be finite".into()));
        }
        let w = self.store.tensor(self.out_head.w);
        let b = self.store.tensor(self.out_head.b);
        let mut raw = [0.0f64; 5];
        for (j, r) in raw.iter_mut().enumerate() {
            *r = b.data()[j]
                + features
                    .iter()
                    .enumerate()
                    .map(|(i, &f)| f * w.data()[i * 5 + j])
                    .sum::<f64>();
        }
        Ok(squash_raw_params(&raw))
    }
}

pub(crate) fn softplus_val(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// Maps the 5 raw head outputs to constrained Gaussian parameters.
pub(crate) fn squash_raw_params(raw: &[f64; 5]) -> GaussianParams {
    GaussianParams {
        mu_x: raw[0],
        mu_y: raw[1],
        sigma_x: softplus_val(raw[2]) + SIGMA_MIN,
        sigma_y: softplus_val(raw[3]) + SIGMA_MIN,
        rho: RHO_SCALE * raw[4].tanh(),
    }
}
