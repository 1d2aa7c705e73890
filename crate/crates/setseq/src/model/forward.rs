//! Graph construction for every forward path through the model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{self, Mask};
use crate::error::{Error, Result};
use crate::tensor::{NodeId, Tensor};

use super::{
    ContextGrid, ContextTensor, DecodeStats, ForwardNodes, GaussianParams, Model, ModeGaussians,
    ModePrediction, SceneTensor, Session, MAP_DROPOUT, RHO_SCALE, SIGMA_MIN,
};

/// Validity context for the rows a decode operates over.
struct RowMasks {
    /// Per row: which input timesteps are observable (cross-attention keys).
    step_valid: Vec<Vec<bool>>,
    /// Per row: whether the agent exists at all (social-attention keys).
    present: Vec<bool>,
}

impl RowMasks {
    fn fully_valid(rows: usize, t_in: usize) -> Self {
        Self {
            step_valid: vec![vec![true; t_in]; rows],
            present: vec![true; rows],
        }
    }

    fn from_scene(scene: &SceneTensor, agents: &[usize]) -> Self {
        let t = scene.timesteps();
        Self {
            step_valid: agents
                .iter()
                .map(|&m| (0..t).map(|tt| scene.is_valid_at(m, tt)).collect())
                .collect(),
            present: agents.iter().map(|&m| scene.agent_present(m)).collect(),
        }
    }
}

impl Model {
    // ---- encoder ----

    /// Encodes a scene into the working tensor of shape (M, t, d_K).
    pub(crate) fn encode_graph(&self, s: &mut Session, scene: &SceneTensor) -> Result<NodeId> {
        scene.check_encodable()?;
        if scene.attributes() != self.config().attributes {
            return Err(Error::Scene(format!(
                "scene has {} attributes, model expects {}",
                scene.attributes(),
                self.config().attributes
            )));
        }
        let cfg = self.config();
        let (m_agents, t_in) = (scene.agents(), scene.timesteps());
        let x = s.g.constant(scene.values().clone());
        let x = s.g.permute(x, &[1, 2, 0])?; // (M, t, K)
        let embed = s.ffn(&self.embed);
        let mut h = attention::rffn(&mut s.g, x, &embed)?;
        let pe = s.g.constant(attention::positional_encoding(t_in, cfg.d_k)?);
        h = s.g.add(h, pe)?;

        let social = cfg.social_attention && m_agents > 1;
        for layer in 0..cfg.enc_layers {
            // temporal attention within each agent's history
            let mab = s.mab(
                &self.enc_temporal[layer],
                cfg.heads,
                cfg.logit_scaling,
                cfg.dropout,
            );
            let mut rows = Vec::with_capacity(m_agents);
            for m in 0..m_agents {
                let row = s.g.slice(h, 0, m, 1)?;
                let row = s.g.reshape(row, &[t_in, cfg.d_k])?;
                let key_valid: Vec<bool> =
                    (0..t_in).map(|tt| scene.is_valid_at(m, tt)).collect();
                let mask = Mask::from_key_validity(t_in, &key_valid);
                let out = attention::mab(&mut s.g, row, &mab, Some(&mask), s.train, &mut s.rng)?;
                rows.push(s.g.reshape(out, &[1, t_in, cfg.d_k])?);
            }
            h = s.g.concat(&rows, 0)?;

            // social attention within each timestep's set of agents
            if social {
                let mab = s.mab(
                    &self.enc_social[layer],
                    cfg.heads,
                    cfg.logit_scaling,
                    cfg.dropout,
                );
                let mut cols = Vec::with_capacity(t_in);
                for tt in 0..t_in {
                    let col = s.g.slice(h, 1, tt, 1)?;
                    let col = s.g.reshape(col, &[m_agents, cfg.d_k])?;
                    let key_valid: Vec<bool> =
                        (0..m_agents).map(|m| scene.is_valid_at(m, tt)).collect();
                    let mask = Mask::from_key_validity(m_agents, &key_valid);
                    let out =
                        attention::mab(&mut s.g, col, &mab, Some(&mask), s.train, &mut s.rng)?;
                    cols.push(s.g.reshape(out, &[m_agents, 1, cfg.d_k])?);
                }
                h = s.g.concat(&cols, 1)?;
            }
        }
        Ok(h)
    }

    /// Encodes a scene into a context tensor of shape (d_K, M, t).
    pub fn encode(&self, scene: &SceneTensor) -> Result<ContextTensor> {
        let mut s = self.session(false, 0);
        let h = self.encode_graph(&mut s, scene)?;
        let c = s.g.permute(h, &[2, 0, 1])?;
        Ok(ContextTensor {
            values: s.g.value(c).clone(),
        })
    }

    // ---- context-grid encoder ----

    /// Per-mode context feature nodes, each of length d_K/2. Without a map
    /// these are zero vectors of the same length.
    pub(crate) fn context_features_graph(
        &self,
        s: &mut Session,
        grid: Option<&ContextGrid>,
    ) -> Result<Vec<NodeId>> {
        let cfg = self.config();
        let d_map = cfg.map_feature_len();
        let encoder = match (&self.map_encoder, grid) {
            (None, _) => {
                let zero = s.g.constant(Tensor::zeros(&[d_map]));
                return Ok(vec![zero; cfg.modes]);
            }
            (Some(_), None) => {
                return Err(Error::Config(
                    "model was built with use_map = true; a context grid is required".into(),
                ))
            }
            (Some(enc), Some(g)) => {
                g.validate()?;
                if g.size != cfg.grid_size {
                    return Err(Error::Config(format!(
                        "grid size {} does not match model grid size {}",
                        g.size, cfg.grid_size
                    )));
                }
                enc
            }
        };
        let grid = grid.unwrap();
        let g0 = Tensor::from_fn(&[1, grid.size, grid.size], |i| grid.occupancy[i] as f64);
        let mut x = s.g.constant(g0);
        for &(w, b) in &encoder.convs {
            let wn = s.p(w);
            let bn = s.p(b);
            x = s.g.conv2d(x, wn, bn, 2, 1)?;
            x = s.g.relu(x);
        }
        // channel dropout on the feature volume at train time
        if s.train && MAP_DROPOUT > 0.0 {
            let channels = s.g.shape(x)[0];
            let keep = 1.0 / (1.0 - MAP_DROPOUT);
            let mask = Tensor::from_fn(&[channels, 1, 1], |_| {
                if s.rng.gen::<f64>() < MAP_DROPOUT {
                    0.0
                } else {
                    keep
                }
            });
            let mask = s.g.constant(mask);
            x = s.g.mul(x, mask)?;
        }
        let flat_len = s.g.value(x).numel();
        let flat = s.g.reshape(x, &[1, flat_len])?;
        let w = s.p(encoder.proj.w);
        let b = s.p(encoder.proj.b);
        let proj = s.g.matmul(flat, w)?;
        let proj = s.g.add(proj, b)?;
        let proj = s.g.reshape(proj, &[cfg.modes * d_map])?;
        (0..cfg.modes)
            .map(|i| s.g.slice(proj, 0, i * d_map, d_map))
            .collect()
    }

    /// Value-level context encoding: one feature vector per mode.
    pub fn encode_context(&self, grid: &ContextGrid) -> Result<Vec<Vec<f64>>> {
        let mut s = self.session(false, 0);
        let feats = self.context_features_graph(&mut s, Some(grid))?;
        Ok(feats
            .into_iter()
            .map(|f| s.g.value(f).data().to_vec())
            .collect())
    }

    // ---- decoder ----

    /// Seed-parameter decode over context rows, producing squashed Gaussian
    /// parameters of shape (c, rows, T, 5).
    fn decode_graph(
        &self,
        s: &mut Session,
        ctx: NodeId,
        masks: &RowMasks,
        social: bool,
        tile_seeds: bool,
        map_feats: &[NodeId],
        stats: &mut DecodeStats,
    ) -> Result<NodeId> {
        let cfg = self.config();
        let rows = s.g.shape(ctx)[0];
        let t_in = s.g.shape(ctx)[1];
        let (d, horizon) = (cfg.d_k, cfg.horizon);
        let d_map = cfg.map_feature_len();
        let pe = s.g.constant(attention::positional_encoding(horizon, d)?);
        let social = social && rows > 1;

        let mut per_mode = Vec::with_capacity(cfg.modes);
        for mode in 0..cfg.modes {
            let q = s.p(self.seeds_q[mode]); // (T, d)
            let q = s.g.reshape(q, &[1, horizon, d])?;
            let q = if tile_seeds || rows == 1 {
                s.g.broadcast_to(q, &[rows, horizon, d])?
            } else {
                return Err(Error::Contract(
                    "non-tiled seeds require a single output row".into(),
                ));
            };
            let mf = map_feats[mode];
            let mf = s.g.reshape(mf, &[1, 1, d_map])?;
            let mf = s.g.broadcast_to(mf, &[rows, horizon, d_map])?;
            let hcat = s.g.concat(&[q, mf], 2)?;
            let dec_in = s.ffn(&self.dec_input);
            let mut h = attention::rffn(&mut s.g, hcat, &dec_in)?;
            h = s.g.add(h, pe)?;

            for layer in 0..cfg.dec_layers {
                stats.temporal_passes += 1;
                let mabd = s.mabd(
                    &self.dec_temporal[layer],
                    cfg.heads,
                    cfg.logit_scaling,
                    cfg.dropout,
                );
                let mut new_rows = Vec::with_capacity(rows);
                for r in 0..rows {
                    let y = s.g.slice(h, 0, r, 1)?;
                    let y = s.g.reshape(y, &[horizon, d])?;
                    let x = s.g.slice(ctx, 0, r, 1)?;
                    let x = s.g.reshape(x, &[t_in, d])?;
                    let key_mask = Mask::from_key_validity(horizon, &masks.step_valid[r]);
                    let out = attention::mabd(
                        &mut s.g,
                        y,
                        x,
                        &mabd,
                        false,
                        Some(&key_mask),
                        s.train,
                        &mut s.rng,
                    )?;
                    new_rows.push(s.g.reshape(out, &[1, horizon, d])?);
                }
                h = s.g.concat(&new_rows, 0)?;

                if social {
                    let mab = s.mab(
                        &self.dec_social[layer],
                        cfg.heads,
                        cfg.logit_scaling,
                        cfg.dropout,
                    );
                    let mask = Mask::from_key_validity(rows, &masks.present);
                    let mut cols = Vec::with_capacity(horizon);
                    for tt in 0..horizon {
                        let col = s.g.slice(h, 1, tt, 1)?;
                        let col = s.g.reshape(col, &[rows, d])?;
                        let out = attention::mab(
                            &mut s.g,
                            col,
                            &mab,
                            Some(&mask),
                            s.train,
                            &mut s.rng,
                        )?;
                        cols.push(s.g.reshape(out, &[rows, 1, d])?);
                    }
                    h = s.g.concat(&cols, 1)?;
                }
            }
            let out = self.head_graph(s, h)?;
            per_mode.push(s.g.reshape(out, &[1, rows, horizon, 5])?);
        }
        s.g.concat(&per_mode, 0)
    }

    /// Output head over (rows, T, d): linear to 5 channels, then squashing
    /// sigma through softplus + floor and rho through a scaled tanh.
    pub(crate) fn head_graph(&self, s: &mut Session, h: NodeId) -> Result<NodeId> {
        let shape = s.g.shape(h).to_vec();
        let (rows, horizon, d) = (shape[0], shape[1], shape[2]);
        let flat = s.g.reshape(h, &[rows * horizon, d])?;
        let w = s.p(self.out_head.w);
        let b = s.p(self.out_head.b);
        let raw = s.g.matmul(flat, w)?;
        let raw = s.g.add(raw, b)?;
        let mu = s.g.slice(raw, 1, 0, 2)?;
        let sraw = s.g.slice(raw, 1, 2, 2)?;
        let rraw = s.g.slice(raw, 1, 4, 1)?;
        let sp = s.g.softplus(sraw);
        let sigma = s.g.add_scalar(sp, SIGMA_MIN);
        let th = s.g.tanh(rraw);
        let rho = s.g.mul_scalar(th, RHO_SCALE);
        let out = s.g.concat(&[mu, sigma, rho], 1)?;
        s.g.reshape(out, &[rows, horizon, 5])
    }

    // ---- mode prior ----

    /// Log mode probabilities, shape (c). The context is mean-pooled over
    /// present agents and consumed as a length-t sequence by a decoder block
    /// over the prior seeds.
    pub(crate) fn prior_graph(
        &self,
        s: &mut Session,
        ctx: NodeId,
        present: &[bool],
    ) -> Result<NodeId> {
        let cfg = self.config();
        let rows = s.g.shape(ctx)[0];
        let n_present = present.iter().filter(|&&p| p).count().max(1);
        let mask = Tensor::from_fn(&[rows, 1, 1], |i| if present[i] { 1.0 } else { 0.0 });
        let mask = s.g.constant(mask);
        let masked = s.g.mul(ctx, mask)?;
        let summed = s.g.sum_axis(masked, 0)?; // (t, d)
        let cbar = s.g.mul_scalar(summed, 1.0 / n_present as f64);

        let p = s.p(self.seeds_p); // (c, d)
        let mabd = s.mabd(
            &self.prior_mabd,
            cfg.heads,
            cfg.logit_scaling,
            cfg.dropout,
        );
        let f = attention::mabd(&mut s.g, p, cbar, &mabd, false, None, s.train, &mut s.rng)?;
        let w = s.p(self.prior_lin.w);
        let b = s.p(self.prior_lin.b);
        let logits = s.g.matmul(f, w)?;
        let logits = s.g.add(logits, b)?;
        let logits = s.g.reshape(logits, &[cfg.modes])?;
        s.g.log_softmax(logits, 0)
    }

    // ---- full forward paths ----

    /// Builds the complete forward computation on an open session. Honors
    /// `ego_only` and `social_attention` from the config.
    pub fn forward_graph(
        &self,
        s: &mut Session,
        scene: &SceneTensor,
        grid: Option<&ContextGrid>,
    ) -> Result<ForwardNodes> {
        let cfg = self.config();
        let ctx = self.encode_graph(s, scene)?;
        let mut stats = DecodeStats::default();
        let map_feats = self.context_features_graph(s, grid)?;

        let (ctx_rows, agent_indices, social) = if cfg.ego_only {
            let ego = scene.ego_index.ok_or_else(|| {
                Error::Contract("ego-only forward requires scene.ego_index".into())
            })?;
            let row = s.g.slice(ctx, 0, ego, 1)?;
            (row, vec![ego], false)
        } else {
            (ctx, (0..scene.agents()).collect(), cfg.social_attention)
        };

        let masks = RowMasks::from_scene(scene, &agent_indices);
        let gaussians = self.decode_graph(
            s,
            ctx_rows,
            &masks,
            social,
            true,
            &map_feats,
            &mut stats,
        )?;
        let mode_log_probs = self.prior_graph(s, ctx_rows, &masks.present)?;
        Ok(ForwardNodes {
            gaussians,
            mode_log_probs,
            agent_indices,
            stats,
        })
    }

    /// Eval-mode forward pass producing a full multimodal prediction.
    pub fn forward(&self, scene: &SceneTensor, grid: Option<&ContextGrid>) -> Result<ModePrediction> {
        Ok(self.forward_with_stats(scene, grid)?.0)
    }

    pub fn forward_with_stats(
        &self,
        scene: &SceneTensor,
        grid: Option<&ContextGrid>,
    ) -> Result<(ModePrediction, DecodeStats)> {
        let mut s = self.session(false, 0);
        let nodes = self.forward_graph(&mut s, scene, grid)?;
        let pred = extract_prediction(&s, &nodes)?;
        Ok((pred, nodes.stats))
    }

    /// Ego variant: encode the full scene socially, then decode only the ego
    /// agent without intra-set attention. Works on any model configuration.
    pub fn forward_ego(
        &self,
        scene: &SceneTensor,
        grid: Option<&ContextGrid>,
    ) -> Result<ModePrediction> {
        let ego = scene
            .ego_index
            .ok_or_else(|| Error::Contract("forward_ego requires scene.ego_index".into()))?;
        let mut s = self.session(false, 0);
        let ctx = self.encode_graph(&mut s, scene)?;
        let mut stats = DecodeStats::default();
        let map_feats = self.context_features_graph(&mut s, grid)?;
        let row = s.g.slice(ctx, 0, ego, 1)?;
        let masks = RowMasks::from_scene(scene, &[ego]);
        let gaussians =
            self.decode_graph(&mut s, row, &masks, false, true, &map_feats, &mut stats)?;
        let log_probs = self.prior_graph(&mut s, row, &masks.present)?;
        let nodes = ForwardNodes {
            gaussians,
            mode_log_probs: log_probs,
            agent_indices: vec![ego],
            stats,
        };
        extract_prediction(&s, &nodes)
    }

    /// Decodes an existing context tensor with the seed-parameter route.
    /// All agents are treated as fully observed.
    pub fn decode(
        &self,
        ctx: &ContextTensor,
        grid: Option<&ContextGrid>,
    ) -> Result<(ModeGaussians, DecodeStats)> {
        let mut s = self.session(false, 0);
        let c = s.g.constant(ctx.values.clone());
        let c = s.g.permute(c, &[1, 2, 0])?; // (M, t, d)
        let mut stats = DecodeStats::default();
        let map_feats = self.context_features_graph(&mut s, grid)?;
        let masks = RowMasks::fully_valid(ctx.agents(), ctx.timesteps());
        let node = self.decode_graph(
            &mut s,
            c,
            &masks,
            self.config().social_attention,
            true,
            &map_feats,
            &mut stats,
        )?;
        let gaussians = gaussians_from_values(
            s.g.value(node).data(),
            self.config().modes,
            ctx.agents(),
            self.config().horizon,
        )?;
        Ok((gaussians, stats))
    }

    /// Mode distribution p(Z|X) from a context tensor.
    pub fn mode_prior(&self, ctx: &ContextTensor) -> Result<Vec<f64>> {
        let mut s = self.session(false, 0);
        let c = s.g.constant(ctx.values.clone());
        let c = s.g.permute(c, &[1, 2, 0])?;
        let present = vec![true; ctx.agents()];
        let log_probs = self.prior_graph(&mut s, c, &present)?;
        Ok(s.g.value(log_probs).data().iter().map(|&l| l.exp()).collect())
    }

    /// Autoregressive decoding ablation: generates the horizon step by step
    /// through the time-masked decoder, feeding back mean positions (or
    /// samples when `mean_feed` is false). Used for throughput comparisons;
    /// not part of the training path.
    pub fn decode_autoregressive(
        &self,
        ctx: &ContextTensor,
        grid: Option<&ContextGrid>,
        horizon: usize,
        mean_feed: bool,
        seed: u64,
    ) -> Result<(Vec<Tensor>, DecodeStats)> {
        let cfg = self.config();
        let rows = ctx.agents();
        let (d, d_map) = (cfg.d_k, cfg.map_feature_len());
        let mut s = self.session(false, seed);
        let mut sample_rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_cafe);
        let c = s.g.constant(ctx.values.clone());
        let c = s.g.permute(c, &[1, 2, 0])?; // (rows, t, d)
        let t_in = ctx.timesteps();
        let map_feats = self.context_features_graph(&mut s, grid)?;
        let pe = s.g.constant(attention::positional_encoding(horizon.max(1), d)?);
        let social = cfg.social_attention && !cfg.ego_only && rows > 1;
        let mut stats = DecodeStats::default();

        let mut trajectories = Vec::with_capacity(cfg.modes);
        for mode in 0..cfg.modes {
            let q = s.p(self.seeds_q[mode]);
            let start = s.g.slice(q, 0, 0, 1)?; // (1, d) start token
            let start = s.g.reshape(start, &[1, 1, d])?;
            let start = s.g.broadcast_to(start, &[rows, 1, d])?;
            let mut tokens: Vec<NodeId> = vec![start];
            let mut positions = vec![0.0f64; rows * horizon * 2];
            let maybe_sample = |g: &GaussianParams, rng: &mut ChaCha8Rng| -> (f64, f64) {
                if mean_feed {
                    (g.mu_x, g.mu_y)
                } else {
                    let z1: f64 = standard_normal(rng);
                    let z2: f64 = standard_normal(rng);
                    (
                        g.mu_x + g.sigma_x * z1,
                        g.mu_y + g.sigma_y * (g.rho * z1 + (1.0 - g.rho * g.rho).sqrt() * z2),
                    )
                }
            };

            for step in 0..horizon {
                let prefix_len = step + 1;
                let toks = s.g.concat(&tokens, 1)?; // (rows, prefix, d)
                let mf = s.g.reshape(map_feats[mode], &[1, 1, d_map])?;
                let mf = s.g.broadcast_to(mf, &[rows, prefix_len, d_map])?;
                let hcat = s.g.concat(&[toks, mf], 2)?;
                let dec_in = s.ffn(&self.dec_input);
                let mut h = attention::rffn(&mut s.g, hcat, &dec_in)?;
                let pe_slice = s.g.slice(pe, 0, 0, prefix_len)?;
                h = s.g.add(h, pe_slice)?;

                for layer in 0..cfg.dec_layers {
                    stats.temporal_passes += 1;
                    let mabd = s.mabd(
                        &self.dec_temporal[layer],
                        cfg.heads,
                        cfg.logit_scaling,
                        cfg.dropout,
                    );
                    let mut new_rows = Vec::with_capacity(rows);
                    for r in 0..rows {
                        let y = s.g.slice(h, 0, r, 1)?;
                        let y = s.g.reshape(y, &[prefix_len, d])?;
                        let x = s.g.slice(c, 0, r, 1)?;
                        let x = s.g.reshape(x, &[t_in, d])?;
                        let out = attention::mabd(
                            &mut s.g,
                            y,
                            x,
                            &mabd,
                            true,
                            None,
                            s.train,
                            &mut s.rng,
                        )?;
                        new_rows.push(s.g.reshape(out, &[1, prefix_len, d])?);
                    }
                    h = s.g.concat(&new_rows, 0)?;

                    if social {
                        let mab = s.mab(
                            &self.dec_social[layer],
                            cfg.heads,
                            cfg.logit_scaling,
                            cfg.dropout,
                        );
                        let mut cols = Vec::with_capacity(prefix_len);
                        for tt in 0..prefix_len {
                            let col = s.g.slice(h, 1, tt, 1)?;
                            let col = s.g.reshape(col, &[rows, d])?;
                            let out = attention::mab(
                                &mut s.g,
                                col,
                                &mab,
                                None,
                                s.train,
                                &mut s.rng,
                            )?;
                            cols.push(s.g.reshape(out, &[rows, 1, d])?);
                        }
                        h = s.g.concat(&cols, 1)?;
                    }
                }

                let last = s.g.slice(h, 1, step, 1)?; // (rows, 1, d)
                let raw = self.head_graph(&mut s, last)?; // (rows, 1, 5)
                let vals = s.g.value(raw).data().to_vec();
                let mut next = Vec::with_capacity(rows * 2);
                for r in 0..rows {
                    let gp = GaussianParams {
                        mu_x: vals[r * 5],
                        mu_y: vals[r * 5 + 1],
                        sigma_x: vals[r * 5 + 2],
                        sigma_y: vals[r * 5 + 3],
                        rho: vals[r * 5 + 4],
                    };
                    let (px, py) = maybe_sample(&gp, &mut sample_rng);
                    positions[(r * horizon + step) * 2] = px;
                    positions[(r * horizon + step) * 2 + 1] = py;
                    next.push(px);
                    next.push(py);
                }
                if step + 1 < horizon {
                    // embed the generated positions as the next token
                    let pos = s.g.constant(Tensor::from_vec(vec![rows, 2], next)?);
                    let w = s.p(self.ar_embed.w);
                    let b = s.p(self.ar_embed.b);
                    let emb = s.g.matmul(pos, w)?;
                    let emb = s.g.add(emb, b)?;
                    tokens.push(s.g.reshape(emb, &[rows, 1, d])?);
                }
            }
            trajectories.push(Tensor::from_vec(vec![rows, horizon, 2], positions)?);
        }
        Ok((trajectories, stats))
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
}

/// Reads a (c, rows, T, 5) value node into structured Gaussians.
pub(crate) fn gaussians_from_values(
    data: &[f64],
    modes: usize,
    agents: usize,
    horizon: usize,
) -> Result<ModeGaussians> {
    let mut params = Vec::with_capacity(modes * agents * horizon);
    for chunk in data.chunks_exact(5) {
        params.push(GaussianParams {
            mu_x: chunk[0],
            mu_y: chunk[1],
            sigma_x: chunk[2],
            sigma_y: chunk[3],
            rho: chunk[4],
        });
    }
    ModeGaussians::new(modes, agents, horizon, params)
}

/// Materializes a prediction from live forward nodes.
pub(crate) fn extract_prediction(s: &Session, nodes: &ForwardNodes) -> Result<ModePrediction> {
    let shape = s.g.shape(nodes.gaussians).to_vec();
    let gaussians = gaussians_from_values(
        s.g.value(nodes.gaussians).data(),
        shape[0],
        shape[1],
        shape[2],
    )?;
    let mode_probs: Vec<f64> = s
        .g
        .value(nodes.mode_log_probs)
        .data()
        .iter()
        .map(|&l| l.exp())
        .collect();
    Ok(ModePrediction {
        gaussians,
        mode_probs,
    })
}
