//! Masked-parallel evaluation. Every position of a chunk is processed layer
//! by layer; the policy is expressed as an attention mask. Window and
//! Window+i use a static band-plus-prefix mask. H2O and TOVA build each
//! head's mask row by row from that layer's attention weights, which
//! reproduces sequential eviction exactly because a layer's policy only
//! depends on that layer's keys, values and attention.

use rayon::prelude::*;

use super::sequential::check_context;
use super::{ChunkReport, EvalOutcome, PerplexityReport, TokenStream};
use crate::error::Result;
use crate::model::{attend_head, Model};
use crate::policy::{h2o_victims, tova_victims, PolicyKind, PolicySpec};
use crate::tensor::{nll, vec_mat};
use crate::trace::{Action, RetentionTrace, TraceEvent};

/// Columns admitted by the static Window/Window+i mask at row `t`: the
/// pinned prefix `[0, i)` plus the band ending at `t`. The query attends
/// before the step's eviction, so the band holds `k - i + 1` columns once
/// `t >= k`.
pub fn static_mask_row(t: usize, k: usize, pin: usize) -> Vec<usize> {
    let band_start = (t + pin).saturating_sub(k).max(pin);
    (0..pin.min(t + 1)).chain(band_start..=t).collect()
}

/// Per-head mask state for one layer.
struct HeadMask {
    /// Admitted columns, ascending.
    columns: Vec<usize>,
    /// Accumulated probability by column (H2O only).
    acc: Vec<f64>,
}

fn run_chunk(
    model: &Model,
    tokens: &[u32],
    policy: Option<PolicySpec>,
    traced: bool,
) -> Result<(ChunkReport, Option<RetentionTrace>)> {
    let cfg = model.config();
    let (n_heads, len) = (cfg.n_heads, tokens.len());
    let rotary = model.rotary();
    let mut events = Vec::new();

    let mut xs: Vec<Vec<f32>> = tokens
        .iter()
        .map(|&t| model.embed(t))
        .collect::<Result<_>>()?;

    for layer in 0..cfg.n_layers {
        let proj: Vec<_> = xs.iter().map(|x| model.project(layer, x)).collect();
        let rot_q: Vec<Vec<Vec<f32>>> = proj
            .iter()
            .enumerate()
            .map(|(t, p)| p.q.iter().map(|q| rotary.apply(q, t as f64)).collect())
            .collect();
        let rot_k: Vec<Vec<Vec<f32>>> = proj
            .iter()
            .enumerate()
            .map(|(t, p)| p.k.iter().map(|k| rotary.apply(k, t as f64)).collect())
            .collect();

        let mut masks: Vec<HeadMask> = (0..n_heads)
            .map(|_| HeadMask {
                columns: Vec::new(),
                acc: vec![0.0; len],
            })
            .collect();

        for t in 0..len {
            let event = |head, action, p: usize| TraceEvent {
                step: t,
                layer,
                head,
                action,
                original_position: p,
                token_id: tokens[p],
            };
            for (h, m) in masks.iter_mut().enumerate() {
                match policy {
                    Some(spec) if spec.kind.is_static() => {
                        m.columns = static_mask_row(t, spec.k, spec.kind.pin());
                    }
                    _ => m.columns.push(t),
                }
                if traced {
                    events.push(event(h, Action::Append, t));
                }
            }

            let mut concat = Vec::with_capacity(cfg.hidden_dim);
            let mut probs = Vec::with_capacity(n_heads);
            for (h, m) in masks.iter().enumerate() {
                let (ctx, p) = attend_head(
                    &rot_q[t][h],
                    m.columns.iter().map(|&c| rot_k[c][h].as_slice()),
                    m.columns.iter().map(|&c| proj[c].v[h].as_slice()),
                );
                concat.extend_from_slice(&ctx);
                probs.push(p);
            }
            let attn_out = vec_mat(&concat, &model.weights().layers[layer].wo, cfg.hidden_dim);
            xs[t] = model.finish_layer(layer, &xs[t], &attn_out);

            let Some(spec) = policy else { continue };
            let victims: Vec<Option<usize>> = match spec.kind {
                PolicyKind::Window | PolicyKind::WindowPin(_) => {
                    // The static mask already encodes the eviction; report
                    // the column that leaves the band after this row.
                    let i = spec.kind.pin();
                    let gone = (t >= spec.k).then(|| t + i - spec.k);
                    vec![gone.map(|g| masks[0].columns.binary_search(&g).unwrap()); n_heads]
                }
                PolicyKind::TovaHead | PolicyKind::TovaLayer | PolicyKind::TovaLayerPin(_) => {
                    let rows: Vec<&[f32]> = probs.iter().map(Vec::as_slice).collect();
                    let headwise = spec.kind == PolicyKind::TovaHead;
                    tova_victims(&rows, spec.k, headwise, spec.kind.pin())
                }
                PolicyKind::H2oHead | PolicyKind::H2oLayer => {
                    for (m, p) in masks.iter_mut().zip(&probs) {
                        for (&c, &pr) in m.columns.iter().zip(p) {
                            m.acc[c] += pr as f64;
                        }
                    }
                    let scores: Vec<Vec<f64>> = masks
                        .iter()
                        .map(|m| m.columns.iter().map(|&c| m.acc[c]).collect())
                        .collect();
                    let rows: Vec<&[f64]> = scores.iter().map(Vec::as_slice).collect();
                    h2o_victims(&rows, spec.k, spec.kind == PolicyKind::H2oHead)
                }
            };
            for (h, (m, v)) in masks.iter_mut().zip(victims).enumerate() {
                if let Some(idx) = v {
                    let gone = if spec.kind.is_static() {
                        m.columns[idx]
                    } else {
                        m.columns.remove(idx)
                    };
                    if traced {
                        events.push(event(h, Action::Evict, gone));
                    }
                }
            }
        }
    }

    let token_nll = xs
        .iter()
        .zip(tokens.iter().skip(1))
        .map(|(x, &next)| nll(&model.logits(x), next as usize))
        .collect();
    let trace = traced.then(|| {
        let mut tr = RetentionTrace::new(events);
        tr.canonicalize();
        tr
    });
    Ok((ChunkReport { token_nll }, trace))
}

pub fn masked_parallel_run(
    model: &Model,
    stream: &TokenStream,
    policy: Option<PolicySpec>,
    traced: bool,
) -> Result<EvalOutcome> {
    check_context(model, stream, false)?;
    let chunks: Vec<&[u32]> = stream.chunks().collect();
    let results = chunks
        .par_iter()
        .map(|c| run_chunk(model, c, policy, traced))
        .collect::<Result<Vec<_>>>()?;
    let (chunks, traces): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(EvalOutcome {
        report: PerplexityReport { chunks },
        traces: traces.into_iter().flatten().collect(),
    })
}

pub fn masked_parallel_perplexity(
    model: &Model,
    stream: &TokenStream,
    policy: Option<PolicySpec>,
) -> Result<PerplexityReport> {
    Ok(masked_parallel_run(model, stream, policy, false)?.report)
}

#[cfg(test)]
mod tests {
    use super::static_mask_row;

    #[test]
    fn window_band() {
        // k = 3: before eviction row t sees {t-3, .., t}.
        assert_eq!(static_mask_row(0, 3, 0), vec![0]);
        assert_eq!(static_mask_row(2, 3, 0), vec![0, 1, 2]);
        assert_eq!(static_mask_row(3, 3, 0), vec![0, 1, 2, 3]);
        assert_eq!(static_mask_row(7, 3, 0), vec![4, 5, 6, 7]);
    }

    #[test]
    fn pinned_band() {
        assert_eq!(static_mask_row(7, 3, 1), vec![0, 5, 6, 7]);
        assert_eq!(static_mask_row(0, 3, 1), vec![0]);
        assert_eq!(static_mask_row(2, 3, 1), vec![0, 1, 2]);
        assert_eq!(static_mask_row(9, 5, 2), vec![0, 1, 6, 7, 8, 9]);
    }
}
