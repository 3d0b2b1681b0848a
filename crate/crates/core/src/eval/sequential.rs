use rayon::prelude::*;

use super::{ChunkReport, EvalOutcome, PerplexityReport, TokenStream};
use crate::error::{Error, Result};
use crate::model::{Model, PositionMode};
use crate::policy::{Compressor, PolicySpec};
use crate::state::{Growth, MultiState};
use crate::tensor::{argmax, nll};
use crate::trace::RetentionTrace;

/// One decoding session: a model, its multi-state and the active policy.
/// `None` for the policy is the unbounded topline.
pub struct Session<'m> {
    model: &'m Model,
    state: MultiState,
    compressor: Option<Compressor>,
    positions: PositionMode,
    step: usize,
}

impl<'m> Session<'m> {
    pub fn new(model: &'m Model, policy: Option<PolicySpec>, positions: PositionMode) -> Self {
        let cfg = model.config();
        let growth = policy.map_or(Growth::Unbounded, |p| Growth::Capped(p.k));
        Self {
            model,
            state: model.new_state(growth),
            compressor: policy.map(|p| Compressor::new(p, cfg.n_layers, cfg.n_heads)),
            positions,
            step: 0,
        }
    }

    pub fn traced(mut self) -> Self {
        self.state = self.state.with_trace();
        self
    }

    pub fn state(&self) -> &MultiState {
        &self.state
    }

    pub fn step(&self) -> usize {
        self.step
    }

    pub fn take_trace(&mut self) -> Option<RetentionTrace> {
        self.state.take_trace()
    }

    /// Decodes one token, then lets the policy restore capacity. Returns the
    /// next-token logits.
    pub fn feed(&mut self, token: u32) -> Result<Vec<f32>> {
        let out = self
            .model
            .decode_step(&mut self.state, token, self.step, self.positions)?;
        if let Some(c) = self.compressor.as_mut() {
            c.apply(&mut self.state, &out.rows)?;
        }
        debug_assert!(self.state.within_capacity());
        self.step += 1;
        Ok(out.logits)
    }
}

pub(crate) fn check_context(model: &Model, stream: &TokenStream, remap: bool) -> Result<()> {
    let train = model.config().train_context_len;
    if !remap && stream.chunk_len > train {
        return Err(Error::ContextTooLong {
            chunk_len: stream.chunk_len,
            train_context_len: train,
        });
    }
    stream.validate(model.config().vocab_size)
}

fn run_chunk(
    model: &Model,
    tokens: &[u32],
    policy: Option<PolicySpec>,
    positions: PositionMode,
    traced: bool,
) -> Result<(ChunkReport, Option<RetentionTrace>)> {
    let mut session = Session::new(model, policy, positions);
    if traced {
        session = session.traced();
    }
    let mut token_nll = Vec::with_capacity(tokens.len().saturating_sub(1));
    for (t, &tok) in tokens.iter().enumerate() {
        let logits = session.feed(tok)?;
        if let Some(&next) = tokens.get(t + 1) {
            token_nll.push(nll(&logits, next as usize));
        }
    }
    let trace = session.take_trace().map(|mut tr| {
        tr.canonicalize();
        tr
    });
    Ok((ChunkReport { token_nll }, trace))
}

/// Token-by-token evaluation. Chunks are independent (fresh state each) and
/// are evaluated in parallel on the current rayon pool.
pub fn sequential_run(
    model: &Model,
    stream: &TokenStream,
    policy: Option<PolicySpec>,
    remap: bool,
    traced: bool,
) -> Result<EvalOutcome> {
    check_context(model, stream, remap)?;
    let positions = if remap {
        PositionMode::Remapped
    } else {
        PositionMode::Original
    };
    let chunks: Vec<&[u32]> = stream.chunks().collect();
    let results = chunks
        .par_iter()
        .map(|c| run_chunk(model, c, policy, positions, traced))
        .collect::<Result<Vec<_>>>()?;
    let (chunks, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(EvalOutcome {
        report: PerplexityReport { chunks },
        traces: traces.into_iter().flatten().collect(),
    })
}

pub fn sequential_perplexity(
    model: &Model,
    stream: &TokenStream,
    policy: Option<PolicySpec>,
    remap: bool,
) -> Result<PerplexityReport> {
    Ok(sequential_run(model, stream, policy, remap, false)?.report)
}

/// Greedy continuation of `prompt`. The prompt is streamed through the
/// policy one token at a time, so `k` may be smaller than the prompt.
pub fn generate(
    model: &Model,
    prompt: &[u32],
    max_steps: usize,
    policy: Option<PolicySpec>,
    positions: PositionMode,
) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    let mut out = prompt.to_vec();
    if max_steps == 0 {
        return Ok(out);
    }
    let mut session = Session::new(model, policy, positions);
    let mut logits = Vec::new();
    for &tok in prompt {
        logits = session.feed(tok)?;
    }
    for i in 0..max_steps {
        let next = argmax(&logits) as u32;
        out.push(next);
        if i + 1 < max_steps {
            logits = session.feed(next)?;
        }
    }
    Ok(out)
}
