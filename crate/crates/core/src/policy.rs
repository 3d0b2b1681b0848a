//! Compression policies: given the newest attention rows and the state
//! metadata, choose which states to drop so every head is back at size `k`.
//!
//! Every policy evicts at most one state per head per step, and only from a
//! head holding more than `k` states. Ties always go to the lowest list
//! index.

use std::fmt;

use crate::error::{Error, Result};
use crate::model::{mean_rows, AttentionRow};
use crate::state::{HeadState, MultiState};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PolicyKind {
    /// FIFO.
    Window,
    /// FIFO that never drops the first `i` states.
    WindowPin(usize),
    H2oHead,
    H2oLayer,
    TovaHead,
    TovaLayer,
    TovaLayerPin(usize),
}

pub const SUPPORTED_POLICIES: &str =
    "window, window+i, h2o-head, h2o-layer, tova-head, tova-layer, tova-layer+i";

impl PolicyKind {
    /// Every kind, with `pin` for the pinned variants.
    pub fn all(pin: usize) -> [PolicyKind; 7] {
        [
            PolicyKind::Window,
            PolicyKind::WindowPin(pin),
            PolicyKind::H2oHead,
            PolicyKind::H2oLayer,
            PolicyKind::TovaHead,
            PolicyKind::TovaLayer,
            PolicyKind::TovaLayerPin(pin),
        ]
    }

    pub fn pin(&self) -> usize {
        match *self {
            PolicyKind::WindowPin(i) | PolicyKind::TovaLayerPin(i) => i,
            _ => 0,
        }
    }

    pub fn is_static(&self) -> bool {
        matches!(self, PolicyKind::Window | PolicyKind::WindowPin(_))
    }

    /// Parses a policy name. Pinned kinds take their prefix either inline
    /// (`window+4`) or as the literal `+i` with `pin` supplied separately.
    pub fn parse(name: &str, pin: Option<usize>) -> Result<Self> {
        let (base, suffix) = match name.split_once('+') {
            Some((b, s)) => (b, Some(s)),
            None => (name, None),
        };
        let pinned = |ctor: fn(usize) -> PolicyKind| -> Result<PolicyKind> {
            let suffix = suffix.expect("checked by caller");
            let i = if suffix == "i" {
                pin.ok_or_else(|| {
                    Error::InvalidPolicy(format!("`{name}` needs a pin count (--pin)"))
                })?
            } else {
                let inline = suffix.parse::<usize>().map_err(|_| Error::UnknownPolicy {
                    name: name.to_string(),
                    supported: SUPPORTED_POLICIES.to_string(),
                })?;
                if let Some(p) = pin {
                    if p != inline {
                        return Err(Error::InvalidPolicy(format!(
                            "`{name}` conflicts with pin {p}"
                        )));
                    }
                }
                inline
            };
            Ok(ctor(i))
        };
        let kind = match (base, suffix.is_some()) {
            ("window", false) => PolicyKind::Window,
            ("window", true) => pinned(PolicyKind::WindowPin)?,
            ("tova-layer", true) => pinned(PolicyKind::TovaLayerPin)?,
            ("h2o-head", false) => PolicyKind::H2oHead,
            ("h2o-layer", false) => PolicyKind::H2oLayer,
            ("tova-head", false) => PolicyKind::TovaHead,
            ("tova-layer", false) => PolicyKind::TovaLayer,
            _ => {
                return Err(Error::UnknownPolicy {
                    name: name.to_string(),
                    supported: SUPPORTED_POLICIES.to_string(),
                })
            }
        };
        if suffix.is_none() && pin.is_some() {
            return Err(Error::InvalidPolicy(format!(
                "`{name}` does not take a pin count"
            )));
        }
        Ok(kind)
    }
}

impl fmt::Display for PolicyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PolicyKind::Window => write!(f, "window"),
            PolicyKind::WindowPin(i) => write!(f, "window+{i}"),
            PolicyKind::H2oHead => write!(f, "h2o-head"),
            PolicyKind::H2oLayer => write!(f, "h2o-layer"),
            PolicyKind::TovaHead => write!(f, "tova-head"),
            PolicyKind::TovaLayer => write!(f, "tova-layer"),
            PolicyKind::TovaLayerPin(i) => write!(f, "tova-layer+{i}"),
        }
    }
}

/// A policy together with its capacity `k`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PolicySpec {
    pub kind: PolicyKind,
    pub k: usize,
}

impl PolicySpec {
    pub fn new(kind: PolicyKind, k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::InvalidPolicy("k must be at least 1".into()));
        }
        let i = kind.pin();
        if i >= k {
            return Err(Error::InvalidPolicy(format!(
                "pin count {i} must be below k = {k}"
            )));
        }
        Ok(Self { kind, k })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Eviction {
    pub layer: usize,
    pub head: usize,
    /// Current list index, not original position.
    pub index: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PolicyDecision {
    pub evictions: Vec<Eviction>,
}

impl PolicyDecision {
    pub fn is_empty(&self) -> bool {
        self.evictions.is_empty()
    }

    fn from_victims(layer: usize, victims: Vec<Option<usize>>) -> Self {
        let evictions = victims
            .into_iter()
            .enumerate()
            .filter_map(|(head, v)| v.map(|index| Eviction { layer, head, index }))
            .collect();
        Self { evictions }
    }

    fn extend(&mut self, other: PolicyDecision) {
        self.evictions.extend(other.evictions);
    }
}

/// Number of newest states H2O never evicts: `ceil(k / 2)`.
pub fn h2o_window(k: usize) -> usize {
    k.div_ceil(2)
}

/// Position of the smallest value at or after `start`; lowest index on ties.
fn argmin_from<T: PartialOrd + Copy>(xs: &[T], start: usize) -> usize {
    let mut best = start;
    for i in start + 1..xs.len() {
        if xs[i] < xs[best] {
            best = i;
        }
    }
    best
}

/// FIFO victim for one head: list index `pin` once the head exceeds `k`.
pub fn window_victim(len: usize, k: usize, pin: usize) -> Option<usize> {
    (len > k).then_some(pin)
}

/// TOVA victims per head from the newest query's probabilities.
///
/// Layer-wise, rows are averaged over heads and the single argmin is dropped
/// from every head. Indices below `pin` are never candidates.
pub fn tova_victims(rows: &[&[f32]], k: usize, headwise: bool, pin: usize) -> Vec<Option<usize>> {
    if headwise {
        rows.iter()
            .map(|r| (r.len() > k).then(|| argmin_from(r, pin)))
            .collect()
    } else {
        let len = rows.first().map_or(0, |r| r.len());
        if len <= k {
            return vec![None; rows.len()];
        }
        let mean = mean_rows(rows.iter().copied());
        vec![Some(argmin_from(&mean, pin)); rows.len()]
    }
}

/// H2O victims per head from accumulated scores. The newest
/// [`h2o_window`] states are protected. Layer-wise uses the head-averaged
/// score and drops the same index from every head.
pub fn h2o_victims(acc: &[&[f64]], k: usize, headwise: bool) -> Vec<Option<usize>> {
    let w = h2o_window(k);
    let pick = |scores: &[f64]| -> usize {
        let candidates = scores.len() - w;
        argmin_from(&scores[..candidates], 0)
    };
    if headwise {
        acc.iter()
            .map(|a| (a.len() > k).then(|| pick(a)))
            .collect()
    } else {
        let len = acc.first().map_or(0, |a| a.len());
        if len <= k {
            return vec![None; acc.len()];
        }
        let n = acc.len() as f64;
        let mean: Vec<f64> = (0..len)
            .map(|j| acc.iter().map(|a| a[j]).sum::<f64>() / n)
            .collect();
        vec![Some(pick(&mean)); acc.len()]
    }
}

pub fn policy_window(layer: usize, heads: &[HeadState], k: usize) -> PolicyDecision {
    policy_window_pin(layer, heads, k, 0)
}

pub fn policy_window_pin(layer: usize, heads: &[HeadState], k: usize, pin: usize) -> PolicyDecision {
    PolicyDecision::from_victims(
        layer,
        heads.iter().map(|h| window_victim(h.len(), k, pin)).collect(),
    )
}

pub fn policy_tova(
    layer: usize,
    row: &AttentionRow,
    heads: &[HeadState],
    k: usize,
    headwise: bool,
    pin: usize,
) -> PolicyDecision {
    debug_assert!(row.heads.iter().zip(heads).all(|(r, h)| r.len() == h.len()));
    let rows: Vec<&[f32]> = row.heads.iter().map(Vec::as_slice).collect();
    PolicyDecision::from_victims(layer, tova_victims(&rows, k, headwise, pin))
}

pub fn policy_h2o(
    layer: usize,
    acc: &AccumulatedScores,
    heads: &[HeadState],
    k: usize,
    headwise: bool,
) -> PolicyDecision {
    let rows: Vec<&[f64]> = (0..heads.len()).map(|h| acc.head(layer, h)).collect();
    debug_assert!(rows.iter().zip(heads).all(|(a, h)| a.len() == h.len()));
    PolicyDecision::from_victims(layer, h2o_victims(&rows, k, headwise))
}

/// Running sum of the probability each retained state has received, aligned
/// index-for-index with the state lists.
#[derive(Debug, Clone, PartialEq)]
pub struct AccumulatedScores {
    n_heads: usize,
    scores: Vec<Vec<f64>>,
}

impl AccumulatedScores {
    pub fn new(n_layers: usize, n_heads: usize) -> Self {
        Self {
            n_heads,
            scores: vec![Vec::new(); n_layers * n_heads],
        }
    }

    pub fn head(&self, layer: usize, head: usize) -> &[f64] {
        &self.scores[layer * self.n_heads + head]
    }

    /// Adds `row` element-wise. States new since the last call start from the
    /// probability they receive now.
    pub fn accumulate(&mut self, layer: usize, row: &AttentionRow) {
        for (h, probs) in row.heads.iter().enumerate() {
            let acc = &mut self.scores[layer * self.n_heads + h];
            assert!(
                probs.len() >= acc.len(),
                "attention row shorter than accumulated scores"
            );
            acc.resize(probs.len(), 0.0);
            for (a, &p) in acc.iter_mut().zip(probs) {
                *a += p as f64;
            }
        }
    }

    pub fn remove(&mut self, layer: usize, head: usize, index: usize) {
        self.scores[layer * self.n_heads + head].remove(index);
    }
}

/// Per-session policy runtime: a [`PolicySpec`] plus the scores H2O needs.
#[derive(Debug, Clone)]
pub struct Compressor {
    spec: PolicySpec,
    acc: AccumulatedScores,
}

impl Compressor {
    pub fn new(spec: PolicySpec, n_layers: usize, n_heads: usize) -> Self {
        Self {
            spec,
            acc: AccumulatedScores::new(n_layers, n_heads),
        }
    }

    pub fn spec(&self) -> PolicySpec {
        self.spec
    }

    pub fn scores(&self) -> &AccumulatedScores {
        &self.acc
    }

    /// Decides and executes this step's evictions. `rows` holds one
    /// attention row per layer from the step that just ran.
    pub fn apply(&mut self, state: &mut MultiState, rows: &[AttentionRow]) -> Result<PolicyDecision> {
        apply_policy(self.spec, state, rows, &mut self.acc)
    }
}

/// Dispatches to the policy for `spec.kind`, then removes the chosen states
/// from `state` (which records them into its trace) and from `acc`.
pub fn apply_policy(
    spec: PolicySpec,
    state: &mut MultiState,
    rows: &[AttentionRow],
    acc: &mut AccumulatedScores,
) -> Result<PolicyDecision> {
    let k = spec.k;
    let mut decision = PolicyDecision::default();
    for (layer, row) in rows.iter().enumerate() {
        let heads = state.layer(layer);
        let d = match spec.kind {
            PolicyKind::Window => policy_window(layer, heads, k),
            PolicyKind::WindowPin(i) => policy_window_pin(layer, heads, k, i),
            PolicyKind::TovaHead => policy_tova(layer, row, heads, k, true, 0),
            PolicyKind::TovaLayer => policy_tova(layer, row, heads, k, false, 0),
            PolicyKind::TovaLayerPin(i) => policy_tova(layer, row, heads, k, false, i),
            PolicyKind::H2oHead | PolicyKind::H2oLayer => {
                acc.accumulate(layer, row);
                let headwise = spec.kind == PolicyKind::H2oHead;
                policy_h2o(layer, acc, heads, k, headwise)
            }
        };
        decision.extend(d);
    }
    let uses_acc = matches!(spec.kind, PolicyKind::H2oHead | PolicyKind::H2oLayer);
    for e in &decision.evictions {
        state.evict(e.layer, e.head, e.index)?;
        if uses_acc {
            acc.remove(e.layer, e.head, e.index);
        }
    }
    Ok(decision)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::state::{Growth, StateMeta};

    fn state_with(len: usize, n_heads: usize) -> MultiState {
        let mut s = MultiState::new(1, n_heads, 2, Growth::Capped(len.saturating_sub(1)));
        for p in 0..len {
            let meta = StateMeta {
                original_position: p,
                entry_step: p,
                token_id: 0,
            };
            for h in 0..n_heads {
                s.append(0, h, &[0.0; 2], &[0.0; 2], meta).unwrap();
            }
        }
        s
    }

    fn indices(d: &PolicyDecision) -> Vec<usize> {
        d.evictions.iter().map(|e| e.index).collect()
    }

    #[test]
    fn parse_names() {
        assert_eq!(PolicyKind::parse("tova-layer", None).unwrap(), PolicyKind::TovaLayer);
        assert_eq!(PolicyKind::parse("window+4", None).unwrap(), PolicyKind::WindowPin(4));
        assert_eq!(PolicyKind::parse("window+i", Some(2)).unwrap(), PolicyKind::WindowPin(2));
        assert_eq!(
            PolicyKind::parse("tova-layer+i", Some(1)).unwrap(),
            PolicyKind::TovaLayerPin(1)
        );
        assert!(matches!(
            PolicyKind::parse("lru", None),
            Err(Error::UnknownPolicy { .. })
        ));
        assert!(PolicyKind::parse("h2o-head+1", None).is_err());
        assert!(PolicyKind::parse("window+i", None).is_err());
        assert!(PolicyKind::parse("window+3", Some(2)).is_err());
        for kind in PolicyKind::all(3) {
            assert_eq!(PolicyKind::parse(&kind.to_string(), None).unwrap(), kind);
        }
    }

    #[test]
    fn spec_requires_pin_below_k() {
        assert!(PolicySpec::new(PolicyKind::WindowPin(4), 4).is_err());
        assert!(PolicySpec::new(PolicyKind::WindowPin(3), 4).is_ok());
        assert!(PolicySpec::new(PolicyKind::Window, 0).is_err());
    }

    #[test]
    fn window_evicts_oldest_only_when_over() {
        let s = state_with(5, 2);
        assert_eq!(indices(&policy_window(0, s.layer(0), 4)), vec![0, 0]);
        assert!(policy_window(0, s.layer(0), 5).is_empty());
    }

    #[test]
    fn window_pin_evicts_first_unpinned() {
        let s = state_with(9, 1);
        assert_eq!(indices(&policy_window_pin(0, s.layer(0), 8, 4)), vec![4]);
    }

    #[test]
    fn h2o_argmin_outside_window() {
        // k = 4, window 2, size 5, candidates [0.9, 0.1, 0.5].
        let acc: [&[f64]; 1] = [&[0.9, 0.1, 0.5, 0.0, 0.0]];
        assert_eq!(h2o_victims(&acc, 4, true), vec![Some(1)]);
        assert_eq!(h2o_window(4), 2);
        assert_eq!(h2o_window(5), 3);
    }

    #[test]
    fn h2o_protects_the_window() {
        // k = 2, window 1, size 3: only the two oldest are candidates.
        let acc: [&[f64]; 1] = [&[5.0, 4.0, 0.0]];
        assert_eq!(h2o_victims(&acc, 2, true), vec![Some(1)]);
    }

    #[test]
    fn h2o_layer_uses_head_mean() {
        let acc: [&[f64]; 2] = [&[0.1, 0.9, 0.0, 0.0], &[0.8, 0.1, 0.0, 0.0]];
        // means 0.45, 0.5.
        assert_eq!(h2o_victims(&acc, 3, false), vec![Some(0), Some(0)]);
        assert_eq!(h2o_victims(&acc, 3, true), vec![Some(0), Some(1)]);
    }

    #[test]
    fn tova_examples() {
        let r: [&[f32]; 1] = [&[0.1, 0.7, 0.2]];
        assert_eq!(tova_victims(&r, 2, false, 0), vec![Some(0)]);
        let r: [&[f32]; 2] = [&[0.6, 0.4], &[0.2, 0.8]];
        assert_eq!(tova_victims(&r, 1, false, 0), vec![Some(0), Some(0)]);
        assert_eq!(tova_victims(&r, 1, true, 0), vec![Some(1), Some(0)]);
        assert_eq!(tova_victims(&r, 2, false, 0), vec![None, None]);
    }

    #[test]
    fn tova_pin_skips_prefix_and_ties_go_low() {
        let r: [&[f32]; 1] = [&[0.1, 0.3, 0.3, 0.3]];
        assert_eq!(tova_victims(&r, 3, false, 1), vec![Some(1)]);
        assert_eq!(tova_victims(&r, 3, false, 0), vec![Some(0)]);
    }

    #[test]
    fn accumulate_adds_and_initializes() {
        let mut acc = AccumulatedScores::new(1, 1);
        acc.accumulate(0, &AttentionRow { heads: vec![vec![1.0]] });
        acc.accumulate(0, &AttentionRow { heads: vec![vec![0.3, 0.7]] });
        let got = acc.head(0, 0);
        assert!((got[0] - 1.3).abs() < 1e-7 && (got[1] - 0.7).abs() < 1e-7);
        let before = got.to_vec();
        acc.accumulate(0, &AttentionRow { heads: vec![vec![0.0, 0.0]] });
        assert_eq!(acc.head(0, 0), &before[..]);
    }

    #[test]
    fn apply_policy_restores_capacity_and_traces() {
        let mut s = state_with(4, 2).with_trace();
        let spec = PolicySpec::new(PolicyKind::TovaHead, 3).unwrap();
        let rows = [AttentionRow {
            heads: vec![vec![0.4, 0.1, 0.3, 0.2], vec![0.1, 0.4, 0.3, 0.2]],
        }];
        let mut acc = AccumulatedScores::new(1, 2);
        let d = apply_policy(spec, &mut s, &rows, &mut acc).unwrap();
        assert_eq!(indices(&d), vec![1, 0]);
        assert_eq!(s.retained_positions(0, 0).unwrap(), vec![0, 2, 3]);
        assert_eq!(s.retained_positions(0, 1).unwrap(), vec![1, 2, 3]);
        assert!(s.within_capacity());
        assert_eq!(s.trace().unwrap().events().len(), 2);
    }
}
