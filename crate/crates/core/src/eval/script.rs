//! Trace-driven policy simulation: scripted attention probabilities stand in
//! for the model so policies can be studied without learned weights.

use std::collections::BTreeMap;
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::model::AttentionRow;
use crate::policy::{AccumulatedScores, PolicySpec};
use crate::state::{Growth, MultiState, StateMeta};
use crate::trace::RetentionTrace;

pub const SCRIPT_HEADER: &str = "step,layer,head,state_slot,probability";

/// For every step, one [`AttentionRow`] per layer over the states retained
/// at that step (after the step's append, before its eviction).
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedTrace {
    pub steps: Vec<Vec<AttentionRow>>,
}

impl ScriptedTrace {
    pub fn n_layers(&self) -> usize {
        self.steps.first().map_or(0, Vec::len)
    }

    pub fn n_heads(&self) -> usize {
        self.steps
            .first()
            .and_then(|s| s.first())
            .map_or(0, AttentionRow::n_heads)
    }

    /// Builds rows by normalizing `weight(step, layer, head, position)` over
    /// the positions `policy` retains, simulating the policy while doing so.
    /// The result is consistent with the eviction sequence it induces under
    /// `policy`; other policies see the same row lengths.
    pub fn from_weights<F>(
        policy: Option<PolicySpec>,
        steps: usize,
        n_layers: usize,
        n_heads: usize,
        mut weight: F,
    ) -> Result<Self>
    where
        F: FnMut(usize, usize, usize, usize) -> f64,
    {
        let mut sim = Simulator::new(policy, n_layers, n_heads);
        let mut out = Vec::with_capacity(steps);
        for t in 0..steps {
            sim.append(t)?;
            let rows: Vec<AttentionRow> = (0..n_layers)
                .map(|l| AttentionRow {
                    heads: (0..n_heads)
                        .map(|h| {
                            let ps = sim.state.head(l, h).expect("in range").positions();
                            let w: Vec<f64> = ps.iter().map(|&p| weight(t, l, h, p)).collect();
                            let total: f64 = w.iter().sum();
                            w.iter().map(|x| (x / total) as f32).collect()
                        })
                        .collect(),
                })
                .collect();
            sim.compress(&rows)?;
            out.push(rows);
        }
        Ok(Self { steps: out })
    }

    /// Every row uniform over `min(t + 1, k + 1)` states, the size any
    /// capacity-`k` policy reaches before evicting.
    pub fn uniform(steps: usize, n_layers: usize, n_heads: usize, k: usize) -> Self {
        let steps = (0..steps)
            .map(|t| {
                let n = (t + 1).min(k + 1);
                let row = vec![1.0 / n as f32; n];
                (0..n_layers)
                    .map(|_| AttentionRow {
                        heads: vec![row.clone(); n_heads],
                    })
                    .collect()
            })
            .collect();
        Self { steps }
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{SCRIPT_HEADER}")?;
        for (t, layers) in self.steps.iter().enumerate() {
            for (l, row) in layers.iter().enumerate() {
                for (h, probs) in row.heads.iter().enumerate() {
                    for (slot, p) in probs.iter().enumerate() {
                        // Shortest round-trip representation keeps replay exact.
                        writeln!(w, "{t},{l},{h},{slot},{p:?}")?;
                    }
                }
            }
        }
        Ok(())
    }

    /// Reads the CSV form. Rows may come in any order; every
    /// (step, layer, head) cell must list slots `0..n` without gaps.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        type Key = (usize, usize, usize);
        let mut cells: BTreeMap<Key, BTreeMap<usize, f32>> = BTreeMap::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if i == 0 {
                if line != SCRIPT_HEADER {
                    return Err(Error::Parse {
                        line: 1,
                        reason: format!("expected header `{SCRIPT_HEADER}`"),
                    });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let bad = |reason: String| Error::Parse {
                line: i + 1,
                reason,
            };
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 5 {
                return Err(bad(format!("expected 5 fields, found {}", f.len())));
            }
            let num = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("`{s}`: {e}")));
            let key = (num(f[0])?, num(f[1])?, num(f[2])?);
            let slot = num(f[3])?;
            let p: f32 = f[4].parse().map_err(|e| bad(format!("`{}`: {e}", f[4])))?;
            if cells.entry(key).or_default().insert(slot, p).is_some() {
                return Err(bad(format!("duplicate slot {slot} for {key:?}")));
            }
        }
        let n_steps = cells.keys().map(|k| k.0 + 1).max().unwrap_or(0);
        let n_layers = cells.keys().map(|k| k.1 + 1).max().unwrap_or(0);
        let n_heads = cells.keys().map(|k| k.2 + 1).max().unwrap_or(0);
        let mut steps = Vec::with_capacity(n_steps);
        for t in 0..n_steps {
            let mut layers = Vec::with_capacity(n_layers);
            for l in 0..n_layers {
                let mut heads = Vec::with_capacity(n_heads);
                for h in 0..n_heads {
                    let cell = cells.remove(&(t, l, h)).ok_or_else(|| {
                        Error::InvalidScript(format!("missing step {t} layer {l} head {h}"))
                    })?;
                    if cell.keys().copied().ne(0..cell.len()) {
                        return Err(Error::InvalidScript(format!(
                            "slots of step {t} layer {l} head {h} are not contiguous from 0"
                        )));
                    }
                    heads.push(cell.into_values().collect());
                }
                layers.push(AttentionRow { heads });
            }
            steps.push(layers);
        }
        Ok(Self { steps })
    }
}

struct Simulator {
    state: MultiState,
    policy: Option<PolicySpec>,
    acc: AccumulatedScores,
}

impl Simulator {
    fn new(policy: Option<PolicySpec>, n_layers: usize, n_heads: usize) -> Self {
        let growth = policy.map_or(Growth::Unbounded, |p| Growth::Capped(p.k));
        Self {
            state: MultiState::new(n_layers, n_heads, 1, growth).with_trace(),
            policy,
            acc: AccumulatedScores::new(n_layers, n_heads),
        }
    }

    fn append(&mut self, t: usize) -> Result<()> {
        let meta = StateMeta {
            original_position: t,
            entry_step: t,
            token_id: 0,
        };
        for l in 0..self.state.n_layers() {
            for h in 0..self.state.n_heads() {
                self.state.append(l, h, &[0.0], &[0.0], meta)?;
            }
        }
        Ok(())
    }

    fn compress(&mut self, rows: &[AttentionRow]) -> Result<()> {
        if let Some(spec) = self.policy {
            crate::policy::apply_policy(spec, &mut self.state, rows, &mut self.acc)?;
        }
        Ok(())
    }
}

/// Replays appends and policy decisions using the scripted probabilities in
/// place of model attention. Each row must match the simulated state size
/// and sum to one within 1e-6.
pub fn trace_driven_simulate(
    script: &ScriptedTrace,
    policy: Option<PolicySpec>,
) -> Result<RetentionTrace> {
    let (n_layers, n_heads) = (script.n_layers(), script.n_heads());
    let mut sim = Simulator::new(policy, n_layers, n_heads);
    for (t, rows) in script.steps.iter().enumerate() {
        if rows.len() != n_layers {
            return Err(Error::InvalidScript(format!(
                "step {t} has {} layers, expected {n_layers}",
                rows.len()
            )));
        }
        sim.append(t)?;
        for (l, row) in rows.iter().enumerate() {
            if row.n_heads() != n_heads {
                return Err(Error::InvalidScript(format!(
                    "step {t} layer {l} has {} heads, expected {n_heads}",
                    row.n_heads()
                )));
            }
            for (h, probs) in row.heads.iter().enumerate() {
                let size = sim.state.head(l, h)?.len();
                if probs.len() != size {
                    return Err(Error::InvalidScript(format!(
                        "step {t} layer {l} head {h}: {} probabilities for {size} states",
                        probs.len()
                    )));
                }
                let sum: f64 = probs.iter().map(|&p| p as f64).sum();
                if (sum - 1.0).abs() > 1e-6 || probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
                    return Err(Error::InvalidScript(format!(
                        "step {t} layer {l} head {h}: not a probability vector (sum {sum})"
                    )));
                }
            }
        }
        sim.compress(rows)?;
    }
    Ok(sim.state.take_trace().expect("simulator traces"))
}
