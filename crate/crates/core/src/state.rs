//! The bounded multi-state: per-layer, per-head key/value rows plus metadata.

use crate::error::{Error, Result};
use crate::trace::{Action, RetentionTrace, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct StateMeta {
    /// 0-based index of the token in the stream.
    pub original_position: usize,
    pub entry_step: usize,
    pub token_id: u32,
}

/// Growth law of the multi-state size.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Growth {
    /// `g(t) = t`, the full cache.
    Unbounded,
    /// `g(t) = min(t, k)`.
    Capped(usize),
}

/// One head's ordered list of states. Keys are stored unrotated; rotation
/// happens at attention time from the (possibly remapped) positions.
#[derive(Debug, Clone)]
pub struct HeadState {
    head_dim: usize,
    keys: Vec<f32>,
    values: Vec<f32>,
    metas: Vec<StateMeta>,
}

impl HeadState {
    pub fn new(head_dim: usize) -> Self {
        Self {
            head_dim,
            keys: Vec::new(),
            values: Vec::new(),
            metas: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.metas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.metas.is_empty()
    }

    pub fn key(&self, i: usize) -> &[f32] {
        &self.keys[i * self.head_dim..(i + 1) * self.head_dim]
    }

    pub fn value(&self, i: usize) -> &[f32] {
        &self.values[i * self.head_dim..(i + 1) * self.head_dim]
    }

    pub fn metas(&self) -> &[StateMeta] {
        &self.metas
    }

    pub fn key_rows(&self) -> usize {
        self.keys.len() / self.head_dim
    }

    pub fn value_rows(&self) -> usize {
        self.values.len() / self.head_dim
    }

    pub fn positions(&self) -> Vec<usize> {
        self.metas.iter().map(|m| m.original_position).collect()
    }

    fn push(&mut self, key: &[f32], value: &[f32], meta: StateMeta) {
        self.keys.extend_from_slice(key);
        self.values.extend_from_slice(value);
        self.metas.push(meta);
    }

    fn remove(&mut self, i: usize) -> StateMeta {
        let d = self.head_dim;
        self.keys.drain(i * d..(i + 1) * d);
        self.values.drain(i * d..(i + 1) * d);
        self.metas.remove(i)
    }
}

/// The multi-state of every layer. Optionally records every append and
/// eviction into a [`RetentionTrace`].
#[derive(Debug, Clone)]
pub struct MultiState {
    n_layers: usize,
    n_heads: usize,
    head_dim: usize,
    growth: Growth,
    heads: Vec<HeadState>,
    step: usize,
    trace: Option<RetentionTrace>,
}

impl MultiState {
    pub fn new(n_layers: usize, n_heads: usize, head_dim: usize, growth: Growth) -> Self {
        Self {
            n_layers,
            n_heads,
            head_dim,
            growth,
            heads: (0..n_layers * n_heads)
                .map(|_| HeadState::new(head_dim))
                .collect(),
            step: 0,
            trace: None,
        }
    }

    pub fn with_trace(mut self) -> Self {
        self.trace = Some(RetentionTrace::default());
        self
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn n_heads(&self) -> usize {
        self.n_heads
    }

    pub fn head_dim(&self) -> usize {
        self.head_dim
    }

    pub fn growth(&self) -> Growth {
        self.growth
    }

    pub fn trace(&self) -> Option<&RetentionTrace> {
        self.trace.as_ref()
    }

    pub fn take_trace(&mut self) -> Option<RetentionTrace> {
        self.trace.take()
    }

    fn slot(&self, layer: usize, head: usize) -> Result<usize> {
        if layer >= self.n_layers || head >= self.n_heads {
            return Err(Error::NoSuchHead { layer, head });
        }
        Ok(layer * self.n_heads + head)
    }

    pub fn head(&self, layer: usize, head: usize) -> Result<&HeadState> {
        let s = self.slot(layer, head)?;
        Ok(&self.heads[s])
    }

    /// All heads of one layer, in head order.
    pub fn layer(&self, layer: usize) -> &[HeadState] {
        &self.heads[layer * self.n_heads..(layer + 1) * self.n_heads]
    }

    pub fn append(
        &mut self,
        layer: usize,
        head: usize,
        key: &[f32],
        value: &[f32],
        meta: StateMeta,
    ) -> Result<()> {
        let s = self.slot(layer, head)?;
        assert_eq!(key.len(), self.head_dim, "key width");
        assert_eq!(value.len(), self.head_dim, "value width");
        if let Some(last) = self.heads[s].metas.last() {
            if meta.original_position <= last.original_position {
                return Err(Error::PositionOrder {
                    layer,
                    head,
                    position: meta.original_position,
                    current_max: last.original_position,
                });
            }
        }
        self.step = meta.entry_step;
        self.heads[s].push(key, value, meta);
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEvent {
                step: meta.entry_step,
                layer,
                head,
                action: Action::Append,
                original_position: meta.original_position,
                token_id: meta.token_id,
            });
        }
        Ok(())
    }

    /// Removes row `index` from both K and V of one head.
    pub fn evict(&mut self, layer: usize, head: usize, index: usize) -> Result<StateMeta> {
        let s = self.slot(layer, head)?;
        let len = self.heads[s].len();
        if index >= len {
            return Err(Error::IndexOutOfRange {
                layer,
                head,
                index,
                len,
            });
        }
        let meta = self.heads[s].remove(index);
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceEvent {
                step: self.step,
                layer,
                head,
                action: Action::Evict,
                original_position: meta.original_position,
                token_id: meta.token_id,
            });
        }
        Ok(meta)
    }

    pub fn retained_positions(&self, layer: usize, head: usize) -> Result<Vec<usize>> {
        Ok(self.head(layer, head)?.positions())
    }

    /// Whether every head satisfies the growth law at a step boundary.
    pub fn within_capacity(&self) -> bool {
        match self.growth {
            Growth::Unbounded => true,
            Growth::Capped(k) => self.heads.iter().all(|h| h.len() <= k),
        }
    }

    pub fn max_len(&self) -> usize {
        self.heads.iter().map(HeadState::len).max().unwrap_or(0)
    }
}
