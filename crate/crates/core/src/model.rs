//! Minimal deterministic decoder-only transformer that decodes one token at a
//! time against a [`MultiState`].

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};
use crate::remap::remap_positions;
use crate::rope::Rotary;
use crate::state::{HeadState, MultiState, StateMeta};
use crate::tensor::{dot, rms_norm, silu, softmax, vec_mat};

/// Name of the feed-forward gate written into weight headers.
pub const FF_ACTIVATION: &str = "silu";

#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub hidden_dim: usize,
    pub ff_dim: usize,
    pub vocab_size: usize,
    pub train_context_len: usize,
    pub rope_base: f32,
}

impl ModelConfig {
    /// The toy shape used throughout the tests: 4 layers, 4 heads of width
    /// 16, vocabulary 256.
    pub fn toy() -> Self {
        Self {
            n_layers: 4,
            n_heads: 4,
            head_dim: 16,
            hidden_dim: 64,
            ff_dim: 256,
            vocab_size: 256,
            train_context_len: 512,
            rope_base: 10_000.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |field, reason: &str| {
            Err(Error::InvalidConfig {
                field,
                reason: reason.to_string(),
            })
        };
        for (field, v) in [
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("head_dim", self.head_dim),
            ("hidden_dim", self.hidden_dim),
            ("ff_dim", self.ff_dim),
            ("vocab_size", self.vocab_size),
        ] {
            if v == 0 {
                return invalid(field, "must be at least 1");
            }
        }
        if self.train_context_len < 2 {
            return invalid("train_context_len", "must be at least 2");
        }
        if self.hidden_dim != self.n_heads * self.head_dim {
            return Err(Error::InvalidConfig {
                field: "hidden_dim",
                reason: format!(
                    "{} != n_heads ({}) x head_dim ({})",
                    self.hidden_dim, self.n_heads, self.head_dim
                ),
            });
        }
        if !self.head_dim.is_multiple_of(2) {
            return invalid("head_dim", "rotary positions need an even head_dim");
        }
        if !(self.rope_base.is_finite() && self.rope_base > 0.0) {
            return invalid("rope_base", "must be a positive finite real");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerWeights {
    pub attn_norm: Vec<f32>,
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub ff_norm: Vec<f32>,
    pub ff_in: Vec<f32>,
    pub ff_out: Vec<f32>,
}

/// Dense parameter blocks. Matrices are row-major `in x out` and multiply
/// row vectors from the left.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelWeights {
    pub token_embedding: Vec<f32>,
    pub layers: Vec<LayerWeights>,
    pub lm_head: Vec<f32>,
}

/// A named parameter block and its shape, in file order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockSpec {
    pub name: String,
    pub shape: Vec<usize>,
}

impl BlockSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Block order shared by the weight file and [`ModelWeights::blocks`].
pub fn block_layout(config: &ModelConfig) -> Vec<BlockSpec> {
    let (h, f, v) = (config.hidden_dim, config.ff_dim, config.vocab_size);
    let block = |name: String, shape: &[usize]| BlockSpec {
        name,
        shape: shape.to_vec(),
    };
    let mut out = vec![block("token_embedding".into(), &[v, h])];
    for l in 0..config.n_layers {
        out.push(block(format!("layers.{l}.attn_norm"), &[h]));
        out.push(block(format!("layers.{l}.wq"), &[h, h]));
        out.push(block(format!("layers.{l}.wk"), &[h, h]));
        out.push(block(format!("layers.{l}.wv"), &[h, h]));
        out.push(block(format!("layers.{l}.wo"), &[h, h]));
        out.push(block(format!("layers.{l}.ff_norm"), &[h]));
        out.push(block(format!("layers.{l}.ff_in"), &[h, f]));
        out.push(block(format!("layers.{l}.ff_out"), &[f, h]));
    }
    out.push(block("lm_head".into(), &[h, v]));
    out
}

impl ModelWeights {
    /// Blocks in [`block_layout`] order.
    pub fn blocks(&self) -> Vec<&[f32]> {
        let mut out: Vec<&[f32]> = vec![&self.token_embedding];
        for l in &self.layers {
            out.extend([
                &l.attn_norm[..],
                &l.wq,
                &l.wk,
                &l.wv,
                &l.wo,
                &l.ff_norm,
                &l.ff_in,
                &l.ff_out,
            ]);
        }
        out.push(&self.lm_head);
        out
    }

    /// Inverse of [`ModelWeights::blocks`]; `blocks` must follow
    /// [`block_layout`] for `config`.
    pub fn from_blocks(config: &ModelConfig, blocks: Vec<Vec<f32>>) -> Self {
        let mut it = blocks.into_iter();
        let mut next = || it.next().expect("block count follows layout");
        let token_embedding = next();
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                attn_norm: next(),
                wq: next(),
                wk: next(),
                wv: next(),
                wo: next(),
                ff_norm: next(),
                ff_in: next(),
                ff_out: next(),
            })
            .collect();
        let lm_head = next();
        Self {
            token_embedding,
            layers,
            lm_head,
        }
    }

    /// All matrices zero and all gains one. Every logit is zero, so the
    /// next-token distribution is uniform.
    pub fn zeros(config: &ModelConfig) -> Self {
        let blocks = block_layout(config)
            .iter()
            .map(|b| {
                let fill = if b.name.ends_with("_norm") { 1.0 } else { 0.0 };
                vec![fill; b.numel()]
            })
            .collect();
        Self::from_blocks(config, blocks)
    }

    pub fn check(&self, config: &ModelConfig) -> Result<()> {
        let layout = block_layout(config);
        let blocks = self.blocks();
        if layout.len() != blocks.len() {
            return Err(Error::ShapeMismatch {
                block: "layers".into(),
                expected: vec![config.n_layers],
                found: vec![self.layers.len()],
            });
        }
        for (spec, data) in layout.iter().zip(blocks) {
            if data.len() != spec.numel() {
                return Err(Error::ShapeMismatch {
                    block: spec.name.clone(),
                    expected: spec.shape.clone(),
                    found: vec![data.len()],
                });
            }
            if data.iter().any(|x| !x.is_finite()) {
                return Err(Error::NonFiniteWeight(spec.name.clone()));
            }
        }
        Ok(())
    }
}

/// Deterministic weights for `(config, seed)`.
///
/// Matrix entries are uniform in `[-1, 1) / sqrt(hidden_dim)`, drawn from a
/// ChaCha8 stream seeded with `seed` in [`block_layout`] order. Each draw takes
/// the top 24 bits of one `u32`, so values do not depend on any sampling
/// routine outside this function. Normalization gains are one.
pub fn init_random_model(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let scale = 1.0 / (config.hidden_dim as f32).sqrt();
    let blocks = block_layout(config)
        .iter()
        .map(|b| {
            if b.name.ends_with("_norm") {
                vec![1.0; b.numel()]
            } else {
                (0..b.numel())
                    .map(|_| {
                        let unit = (rng.next_u32() >> 8) as f32 / (1u32 << 24) as f32;
                        (2.0 * unit - 1.0) * scale
                    })
                    .collect()
            }
        })
        .collect();
    Ok(ModelWeights::from_blocks(config, blocks))
}

/// Which positions the rotary encoding sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PositionMode {
    /// Original stream indices.
    #[default]
    Original,
    /// Gap-compressed positions recomputed from the current retained set.
    Remapped,
}

/// Post-softmax probabilities of the newest query over every cached state,
/// one vector per head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionRow {
    pub heads: Vec<Vec<f32>>,
}

impl AttentionRow {
    pub fn n_heads(&self) -> usize {
        self.heads.len()
    }

    /// Arithmetic mean over heads. All heads must have equal length.
    pub fn head_mean(&self) -> Vec<f32> {
        mean_rows(self.heads.iter().map(Vec::as_slice))
    }
}

pub(crate) fn mean_rows<'a>(rows: impl Iterator<Item = &'a [f32]> + Clone) -> Vec<f32> {
    let n = rows.clone().count() as f32;
    let len = rows.clone().next().map_or(0, <[f32]>::len);
    let mut acc = vec![0.0f32; len];
    for r in rows {
        for (a, x) in acc.iter_mut().zip(r) {
            *a += x;
        }
    }
    acc.iter_mut().for_each(|a| *a /= n);
    acc
}

pub struct StepOutput {
    pub logits: Vec<f32>,
    /// One row per layer.
    pub rows: Vec<AttentionRow>,
}

/// Scaled dot-product attention of one rotated query over rotated keys.
/// Returns the probability-weighted value sum and the probabilities.
pub(crate) fn attend_head<'a>(
    query: &[f32],
    keys: impl Iterator<Item = &'a [f32]>,
    values: impl Iterator<Item = &'a [f32]>,
) -> (Vec<f32>, Vec<f32>) {
    let scale = 1.0 / (query.len() as f32).sqrt();
    let scores: Vec<f32> = keys.map(|k| dot(query, k) * scale).collect();
    let probs = softmax(&scores);
    let mut ctx = vec![0.0f32; query.len()];
    for (p, v) in probs.iter().zip(values) {
        for (c, x) in ctx.iter_mut().zip(v) {
            *c += p * x;
        }
    }
    (ctx, probs)
}

/// Attention of the newest (already rotated) per-head queries over one
/// layer's states. Keys are rotated here at `key_positions`.
pub fn attention_step(
    queries: &[Vec<f32>],
    heads: &[HeadState],
    key_positions: &[Vec<f64>],
    rotary: &Rotary,
    wo: &[f32],
) -> Result<(Vec<f32>, AttentionRow)> {
    let mut concat = Vec::with_capacity(queries.len() * rotary.head_dim());
    let mut row = Vec::with_capacity(queries.len());
    for (h, ((q, state), positions)) in queries.iter().zip(heads).zip(key_positions).enumerate() {
        if state.is_empty() {
            return Err(Error::EmptyState { layer: 0, head: h });
        }
        let rotated: Vec<Vec<f32>> = (0..state.len())
            .map(|j| rotary.apply(state.key(j), positions[j]))
            .collect();
        let (ctx, probs) = attend_head(
            q,
            rotated.iter().map(Vec::as_slice),
            (0..state.len()).map(|j| state.value(j)),
        );
        concat.extend_from_slice(&ctx);
        row.push(probs);
    }
    let out = vec_mat(&concat, wo, concat.len());
    Ok((out, AttentionRow { heads: row }))
}

/// Immutable weights plus the derived rotary schedule. Shareable across
/// sessions.
#[derive(Debug, Clone)]
pub struct Model {
    config: ModelConfig,
    weights: ModelWeights,
    rotary: Rotary,
}

pub(crate) struct Projections {
    /// Per-head query, key and value vectors (unrotated).
    pub q: Vec<Vec<f32>>,
    pub k: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl Model {
    pub fn new(config: ModelConfig, weights: ModelWeights) -> Result<Self> {
        config.validate()?;
        weights.check(&config)?;
        let rotary = Rotary::new(config.head_dim, config.rope_base);
        Ok(Self {
            config,
            weights,
            rotary,
        })
    }

    pub fn random(config: ModelConfig, seed: u64) -> Result<Self> {
        let w = init_random_model(&config, seed)?;
        Self::new(config, w)
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn rotary(&self) -> &Rotary {
        &self.rotary
    }

    pub fn new_state(&self, growth: crate::state::Growth) -> MultiState {
        MultiState::new(
            self.config.n_layers,
            self.config.n_heads,
            self.config.head_dim,
            growth,
        )
    }

    pub(crate) fn embed(&self, token: u32) -> Result<Vec<f32>> {
        let h = self.config.hidden_dim;
        let t = token as usize;
        if t >= self.config.vocab_size {
            return Err(Error::TokenOutOfRange {
                token,
                vocab_size: self.config.vocab_size,
            });
        }
        Ok(self.weights.token_embedding[t * h..(t + 1) * h].to_vec())
    }

    pub(crate) fn project(&self, layer: usize, x: &[f32]) -> Projections {
        let w = &self.weights.layers[layer];
        let h = self.config.hidden_dim;
        let d = self.config.head_dim;
        let normed = rms_norm(x, &w.attn_norm);
        let split = |m: &[f32]| -> Vec<Vec<f32>> {
            vec_mat(&normed, m, h)
                .chunks_exact(d)
                .map(<[f32]>::to_vec)
                .collect()
        };
        Projections {
            q: split(&w.wq),
            k: split(&w.wk),
            v: split(&w.wv),
        }
    }

    /// Residual add of the attention output, then the feed-forward block.
    pub(crate) fn finish_layer(&self, layer: usize, x: &[f32], attn_out: &[f32]) -> Vec<f32> {
        let w = &self.weights.layers[layer];
        let mut x: Vec<f32> = x.iter().zip(attn_out).map(|(a, b)| a + b).collect();
        let normed = rms_norm(&x, &w.ff_norm);
        let gate: Vec<f32> = vec_mat(&normed, &w.ff_in, self.config.ff_dim)
            .into_iter()
            .map(silu)
            .collect();
        let ff = vec_mat(&gate, &w.ff_out, self.config.hidden_dim);
        x.iter_mut().zip(&ff).for_each(|(a, b)| *a += b);
        x
    }

    pub(crate) fn logits(&self, x: &[f32]) -> Vec<f32> {
        vec_mat(x, &self.weights.lm_head, self.config.vocab_size)
    }

    /// Appends this token's key/value rows to every layer's state, attends
    /// (the token attends to itself) and returns the next-token logits. Never
    /// evicts.
    pub fn decode_step(
        &self,
        state: &mut MultiState,
        token: u32,
        step: usize,
        positions: PositionMode,
    ) -> Result<StepOutput> {
        let mut x = self.embed(token)?;
        let meta = StateMeta {
            original_position: step,
            entry_step: step,
            token_id: token,
        };
        let mut rows = Vec::with_capacity(self.config.n_layers);
        for layer in 0..self.config.n_layers {
            let proj = self.project(layer, &x);
            for head in 0..self.config.n_heads {
                state.append(layer, head, &proj.k[head], &proj.v[head], meta)?;
            }
            let heads = state.layer(layer);
            let key_positions: Vec<Vec<f64>> = heads
                .iter()
                .map(|h| head_positions(h, positions))
                .collect();
            let queries: Vec<Vec<f32>> = proj
                .q
                .iter()
                .zip(&key_positions)
                .map(|(q, pos)| self.rotary.apply(q, *pos.last().expect("just appended")))
                .collect();
            let (attn_out, row) = attention_step(
                &queries,
                heads,
                &key_positions,
                &self.rotary,
                &self.weights.layers[layer].wo,
            )
            .map_err(|e| match e {
                Error::EmptyState { head, .. } => Error::EmptyState { layer, head },
                e => e,
            })?;
            rows.push(row);
            x = self.finish_layer(layer, &x, &attn_out);
        }
        Ok(StepOutput {
            logits: self.logits(&x),
            rows,
        })
    }
}

fn head_positions(head: &HeadState, mode: PositionMode) -> Vec<f64> {
    match mode {
        PositionMode::Original => head
            .metas()
            .iter()
            .map(|m| m.original_position as f64)
            .collect(),
        PositionMode::Remapped => remap_positions(&head.positions())
            .expect("retained positions are strictly increasing")
            .remapped(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::Growth;

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_layers: 2,
            n_heads: 2,
            head_dim: 4,
            hidden_dim: 8,
            ff_dim: 16,
            vocab_size: 11,
            train_context_len: 32,
            rope_base: 10_000.0,
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_random_model(&tiny(), 7).unwrap();
        let b = init_random_model(&tiny(), 7).unwrap();
        let bits = |w: &ModelWeights| -> Vec<u32> {
            w.blocks().iter().flat_map(|b| b.iter().map(|x| x.to_bits())).collect()
        };
        assert_eq!(bits(&a), bits(&b));
    }

    #[test]
    fn init_depends_on_seed() {
        let a = init_random_model(&tiny(), 7).unwrap();
        let b = init_random_model(&tiny(), 8).unwrap();
        assert_ne!(a, b);
    }

    #[test]
    fn init_respects_scale() {
        let cfg = tiny();
        let w = init_random_model(&cfg, 3).unwrap();
        let bound = 1.0 / (cfg.hidden_dim as f32).sqrt();
        assert!(w.lm_head.iter().all(|x| x.abs() <= bound));
        assert!(w.layers[0].attn_norm.iter().all(|&g| g == 1.0));
    }

    #[test]
    fn rejects_inconsistent_hidden_dim() {
        let cfg = ModelConfig {
            hidden_dim: 9,
            ..tiny()
        };
        assert!(matches!(
            init_random_model(&cfg, 1),
            Err(Error::InvalidConfig { field: "hidden_dim", .. })
        ));
    }

    #[test]
    fn rejects_odd_head_dim() {
        let cfg = ModelConfig {
            head_dim: 3,
            hidden_dim: 6,
            ..tiny()
        };
        assert!(matches!(
            cfg.validate(),
            Err(Error::InvalidConfig { field: "head_dim", .. })
        ));
    }

    #[test]
    fn singleton_attention_returns_projected_value() {
        let rotary = Rotary::new(2, 10_000.0);
        let mut state = MultiState::new(1, 1, 2, Growth::Unbounded);
        let meta = StateMeta {
            original_position: 0,
            entry_step: 0,
            token_id: 0,
        };
        state.append(0, 0, &[0.3, 0.1], &[2.0, -1.0], meta).unwrap();
        // W_O = [[1, 2], [3, 4]]
        let wo = [1.0, 2.0, 3.0, 4.0];
        let (ctx, row) =
            attention_step(&[vec![5.0, 5.0]], state.layer(0), &[vec![0.0]], &rotary, &wo).unwrap();
        assert_eq!(row.heads, vec![vec![1.0]]);
        assert_eq!(ctx, vec![2.0 - 3.0, 4.0 - 4.0]);
    }

    #[test]
    fn equal_scores_split_evenly() {
        let rotary = Rotary::new(2, 10_000.0);
        let mut state = MultiState::new(1, 2, 2, Growth::Unbounded);
        for p in 0..2 {
            let meta = StateMeta {
                original_position: p,
                entry_step: p,
                token_id: 0,
            };
            for h in 0..2 {
                state.append(0, h, &[1.0, 0.0], &[p as f32, 1.0], meta).unwrap();
            }
        }
        let wo = [1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0];
        let pos = vec![vec![0.0, 0.0]; 2];
        let (_, row) = attention_step(
            &[vec![0.0, 1.0], vec![0.7, 0.7]],
            state.layer(0),
            &pos,
            &rotary,
            &wo,
        )
        .unwrap();
        for h in &row.heads {
            assert_eq!(h, &vec![0.5, 0.5]);
        }
    }

    #[test]
    fn two_by_two_matches_hand_computation() {
        // One head, head_dim 2, positions 0 so no rotation.
        // q = [1, 0], keys [2, 0] and [0, 1]: scores 2/sqrt2 = sqrt2 and 0.
        // p0 = e^sqrt2 / (e^sqrt2 + 1), p1 = 1 - p0.
        // values [1, 2], [3, -1]; W_O = [[1, 1], [0, 2]].
        let p0 = (2f64.sqrt()).exp() / ((2f64.sqrt()).exp() + 1.0);
        let p1 = 1.0 - p0;
        let c = [p0 * 1.0 + p1 * 3.0, p0 * 2.0 - p1];
        let expected = [c[0], c[0] + 2.0 * c[1]];

        let rotary = Rotary::new(2, 10_000.0);
        let mut state = MultiState::new(1, 1, 2, Growth::Unbounded);
        for (p, (k, v)) in [([2.0, 0.0], [1.0, 2.0]), ([0.0, 1.0], [3.0, -1.0])]
            .into_iter()
            .enumerate()
        {
            let meta = StateMeta {
                original_position: p,
                entry_step: p,
                token_id: 0,
            };
            state.append(0, 0, &k, &v, meta).unwrap();
        }
        let wo = [1.0, 1.0, 0.0, 2.0];
        let (ctx, row) = attention_step(
            &[vec![1.0, 0.0]],
            state.layer(0),
            &[vec![0.0, 0.0]],
            &rotary,
            &wo,
        )
        .unwrap();
        assert!((row.heads[0][0] as f64 - p0).abs() < 1e-6);
        for (got, want) in ctx.iter().zip(expected) {
            assert!((*got as f64 - want).abs() < 1e-5, "{got} vs {want}");
        }
    }

    #[test]
    fn empty_state_is_rejected() {
        let rotary = Rotary::new(2, 10_000.0);
        let state = MultiState::new(1, 1, 2, Growth::Unbounded);
        assert!(matches!(
            attention_step(&[vec![1.0, 0.0]], state.layer(0), &[vec![]], &rotary, &[0.0; 4]),
            Err(Error::EmptyState { .. })
        ));
    }

    #[test]
    fn first_token_fills_every_layer_once() {
        let model = Model::random(tiny(), 1).unwrap();
        let mut state = model.new_state(Growth::Unbounded);
        let out = model.decode_step(&mut state, 3, 0, PositionMode::Original).unwrap();
        assert_eq!(out.logits.len(), 11);
        for l in 0..2 {
            for h in 0..2 {
                assert_eq!(state.head(l, h).unwrap().len(), 1);
            }
            assert_eq!(out.rows[l].heads, vec![vec![1.0]; 2]);
        }
    }

    #[test]
    fn unbounded_growth_and_determinism() {
        let model = Model::random(tiny(), 5).unwrap();
        let tokens = [1u32, 4, 9, 2, 2, 7, 0, 10];
        let run = || {
            let mut state = model.new_state(Growth::Unbounded);
            let mut logits = Vec::new();
            for (t, &tok) in tokens.iter().enumerate() {
                let out = model.decode_step(&mut state, tok, t, PositionMode::Original).unwrap();
                assert_eq!(state.max_len(), t + 1);
                for row in &out.rows {
                    for h in &row.heads {
                        assert!((h.iter().sum::<f32>() - 1.0).abs() < 1e-6);
                    }
                }
                logits.push(out.logits.iter().map(|x| x.to_bits()).collect::<Vec<_>>());
            }
            logits
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn token_out_of_range() {
        let model = Model::random(tiny(), 1).unwrap();
        let mut state = model.new_state(Growth::Unbounded);
        assert!(matches!(
            model.decode_step(&mut state, 11, 0, PositionMode::Original),
            Err(Error::TokenOutOfRange { token: 11, .. })
        ));
    }

    #[test]
    fn zero_weights_give_uniform_logits() {
        let cfg = tiny();
        let model = Model::new(cfg.clone(), ModelWeights::zeros(&cfg)).unwrap();
        let mut state = model.new_state(Growth::Unbounded);
        let out = model.decode_step(&mut state, 0, 0, PositionMode::Original).unwrap();
        assert!(out.logits.iter().all(|&l| l == 0.0));
    }

    #[test]
    fn remap_matches_original_when_gaps_are_small() {
        let model = Model::random(tiny(), 9).unwrap();
        let mut a = model.new_state(Growth::Unbounded);
        let mut b = model.new_state(Growth::Unbounded);
        for (t, tok) in [3u32, 1, 4, 1, 5, 9, 2, 6].into_iter().enumerate() {
            let x = model.decode_step(&mut a, tok, t, PositionMode::Original).unwrap();
            let y = model.decode_step(&mut b, tok, t, PositionMode::Remapped).unwrap();
            assert_eq!(x.logits, y.logits);
        }
    }
}
