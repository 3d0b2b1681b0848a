//! Brute-force reference computations for tests. Nothing here calls the
//! policy, analysis or evaluation code it is used to check; it only shares
//! the plain data types (trace events, scripted rows).

use std::collections::{BTreeSet, HashMap};

use msrnn::eval::ScriptedTrace;
use msrnn::{Action, AttentionRow, RetentionTrace};
use rand::Rng;

/// A random probability vector of length `n` with well-separated entries.
pub fn random_row<R: Rng>(rng: &mut R, n: usize) -> Vec<f32> {
    let w: Vec<f64> = (0..n).map(|_| rng.gen_range(0.01..1.0)).collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|x| (x / total) as f32).collect()
}

/// Random script whose row lengths follow `min(t + 1, k + 1)`, the size any
/// capacity-`k` policy reaches before evicting.
pub fn random_script<R: Rng>(
    rng: &mut R,
    steps: usize,
    n_layers: usize,
    n_heads: usize,
    k: usize,
) -> ScriptedTrace {
    let steps = (0..steps)
        .map(|t| {
            let n = (t + 1).min(k + 1);
            (0..n_layers)
                .map(|_| AttentionRow {
                    heads: (0..n_heads).map(|_| random_row(rng, n)).collect(),
                })
                .collect()
        })
        .collect();
    ScriptedTrace { steps }
}

/// Exhaustive-scan TOVA oracle. For each head, the victim is the candidate
/// index `j >= pin` such that no other candidate is strictly smaller, nor
/// equal with a lower index. Layer-wise scores are the head mean.
pub fn tova_oracle(rows: &[Vec<f32>], k: usize, headwise: bool, pin: usize) -> Vec<Option<usize>> {
    let victim = |scores: &[f32]| -> Option<usize> {
        if scores.len() <= k {
            return None;
        }
        (pin..scores.len()).find(|&j| {
            (pin..scores.len())
                .filter(|&i| i != j)
                .all(|i| scores[j] < scores[i] || (scores[j] == scores[i] && j < i))
        })
    };
    if headwise {
        rows.iter().map(|r| victim(r)).collect()
    } else {
        let n = rows.len() as f32;
        let len = rows[0].len();
        let mut mean = vec![0.0f32; len];
        for r in rows {
            for (m, x) in mean.iter_mut().zip(r) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= n;
        }
        vec![victim(&mean); rows.len()]
    }
}

/// Retained positions after `t` Window/Window+i steps over positions
/// `0..t`.
pub fn window_closed_form(t: usize, k: usize, pin: usize) -> Vec<usize> {
    if t <= k {
        (0..t).collect()
    } else {
        (0..pin).chain(t - (k - pin)..t).collect()
    }
}

/// Retained sets `[step][layer][head]` under H2O, recomputed from the full
/// history of received probabilities at every step.
///
/// Slot `j` of a scripted row refers to the `j`-th smallest position the
/// oracle itself retains. Scores are recomputed from scratch as the sum of
/// every probability a position has received; layer-wise scores are the
/// head mean. The retained set is the newest `ceil(k/2)` positions plus the
/// best `k - ceil(k/2)` of the rest, ties dropping the older position.
pub fn h2o_oracle(script: &ScriptedTrace, k: usize, headwise: bool) -> Vec<Vec<Vec<Vec<usize>>>> {
    let (n_layers, n_heads) = (script.n_layers(), script.n_heads());
    let window = k.div_ceil(2);
    let mut retained = vec![vec![BTreeSet::<usize>::new(); n_heads]; n_layers];
    let mut history: HashMap<(usize, usize, usize), Vec<f32>> = HashMap::new();
    let mut out = Vec::new();
    for (t, rows) in script.steps.iter().enumerate() {
        for l in 0..n_layers {
            for h in 0..n_heads {
                retained[l][h].insert(t);
                let ordered: Vec<usize> = retained[l][h].iter().copied().collect();
                for (slot, &p) in ordered.iter().enumerate() {
                    history.entry((l, h, p)).or_default().push(rows[l].heads[h][slot]);
                }
            }
            let score = |h: usize, p: usize| -> f64 {
                history[&(l, h, p)].iter().map(|&x| x as f64).sum()
            };
            let sets: Vec<BTreeSet<usize>> = (0..n_heads)
                .map(|h| {
                    let set = &retained[l][h];
                    if set.len() <= k {
                        return set.clone();
                    }
                    let ordered: Vec<usize> = set.iter().copied().collect();
                    let (pool, recent) = ordered.split_at(ordered.len() - window);
                    let s = |p: usize| -> f64 {
                        if headwise {
                            score(h, p)
                        } else {
                            (0..n_heads).map(|hh| score(hh, p)).sum::<f64>() / n_heads as f64
                        }
                    };
                    let mut ranked: Vec<usize> = pool.to_vec();
                    // Best first; on equal score the newer position wins.
                    ranked.sort_by(|&a, &b| s(b).total_cmp(&s(a)).then(b.cmp(&a)));
                    ranked.truncate(k - window);
                    ranked.into_iter().chain(recent.iter().copied()).collect()
                })
                .collect();
            retained[l] = sets;
        }
        out.push(
            retained
                .iter()
                .map(|layer| layer.iter().map(|s| s.iter().copied().collect()).collect())
                .collect(),
        );
    }
    out
}

/// Retention by per-position intervals, built without replaying sets: a
/// position is retained at step `t` iff it entered at or before `t` and
/// was not evicted at or before `t`.
pub fn matrix_from_intervals(trace: &RetentionTrace, layer: usize, head: usize) -> Vec<Vec<bool>> {
    let steps = trace.steps();
    let positions = trace
        .events()
        .iter()
        .map(|e| e.original_position + 1)
        .max()
        .unwrap_or(0);
    let mut enter = vec![usize::MAX; positions];
    let mut leave = vec![usize::MAX; positions];
    for e in trace.events().iter().rev() {
        if e.layer != layer || e.head != head {
            continue;
        }
        match e.action {
            Action::Append => enter[e.original_position] = e.step,
            Action::Evict => leave[e.original_position] = e.step,
        }
    }
    (0..steps)
        .map(|t| {
            (0..positions)
                .map(|p| enter[p] <= t && (leave[p] == usize::MAX || t < leave[p]))
                .collect()
        })
        .collect()
}

/// Retained positions per step for one head, read off the trace by
/// counting appends minus evictions up to and including each step.
pub fn retained_from_events(trace: &RetentionTrace, layer: usize, head: usize) -> Vec<Vec<usize>> {
    matrix_from_intervals(trace, layer, head)
        .into_iter()
        .map(|row| {
            row.into_iter()
                .enumerate()
                .filter_map(|(p, r)| r.then_some(p))
                .collect()
        })
        .collect()
}
