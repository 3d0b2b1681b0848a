//! Analyses over a [`RetentionTrace`]: retention matrices, token lifetimes,
//! tag-grouped lifetimes, the share of recent tokens, and KV memory
//! accounting.
//!
//! All step-indexed quantities refer to the retained set at the END of a
//! step, after that step's evictions.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::{BufRead, Write};

use crate::error::{Error, Result};
use crate::fmt::fmt_g6;
use crate::trace::{Action, RetentionTrace, TraceEvent};

/// Walks the trace step by step, calling `visit(step, layer, head, set)` for
/// every head after all of that step's events are applied.
fn replay<F>(trace: &RetentionTrace, mut visit: F)
where
    F: FnMut(usize, usize, usize, &BTreeSet<usize>),
{
    let mut events: Vec<&TraceEvent> = trace.events().iter().collect();
    events.sort_by_key(|e| e.step);
    let (n_layers, n_heads) = (trace.n_layers(), trace.n_heads());
    let mut sets = vec![BTreeSet::new(); n_layers * n_heads];
    let mut it = events.into_iter().peekable();
    for step in 0..trace.steps() {
        while let Some(e) = it.next_if(|e| e.step == step) {
            let set = &mut sets[e.layer * n_heads + e.head];
            match e.action {
                Action::Append => set.insert(e.original_position),
                Action::Evict => set.remove(&e.original_position),
            };
        }
        for l in 0..n_layers {
            for h in 0..n_heads {
                visit(step, l, h, &sets[l * n_heads + h]);
            }
        }
    }
}

/// Retained original positions for every `(step, layer, head)`.
pub fn retained_sets(trace: &RetentionTrace) -> Vec<Vec<Vec<Vec<usize>>>> {
    let (n_layers, n_heads) = (trace.n_layers(), trace.n_heads());
    let mut out = vec![vec![vec![Vec::new(); n_heads]; n_layers]; trace.steps()];
    replay(trace, |t, l, h, set| {
        out[t][l][h] = set.iter().copied().collect();
    });
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadSelect {
    Head(usize),
    /// Fraction of the layer's heads retaining each cell.
    Mean,
}

/// Rows are decoding steps, columns original positions. A cell is the
/// fraction of selected heads that retain the position at the end of the
/// step, so a single head gives 0 or 1.
#[derive(Debug, Clone, PartialEq)]
pub struct RetentionMatrix {
    pub steps: usize,
    pub positions: usize,
    pub cells: Vec<f32>,
}

impl RetentionMatrix {
    pub fn get(&self, step: usize, position: usize) -> f32 {
        self.cells[step * self.positions + position]
    }

    pub fn is_retained(&self, step: usize, position: usize) -> bool {
        self.get(step, position) > 0.0
    }

    pub fn row(&self, step: usize) -> Vec<usize> {
        (0..self.positions)
            .filter(|&p| self.is_retained(step, p))
            .collect()
    }

    /// One line per step: `step,value_0,value_1,...`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let cols: Vec<String> = (0..self.positions).map(|p| format!("p{p}")).collect();
        writeln!(w, "step,{}", cols.join(","))?;
        for t in 0..self.steps {
            let vals: Vec<String> = (0..self.positions)
                .map(|p| fmt_g6(self.get(t, p) as f64))
                .collect();
            writeln!(w, "{t},{}", vals.join(","))?;
        }
        Ok(())
    }

    /// Binary PGM (P5), one byte per cell; retained is white.
    pub fn write_pgm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P5\n{} {}\n255\n", self.positions, self.steps)?;
        let bytes: Vec<u8> = self
            .cells
            .iter()
            .map(|&c| (c * 255.0).round().clamp(0.0, 255.0) as u8)
            .collect();
        w.write_all(&bytes)?;
        Ok(())
    }
}

pub fn retention_matrix(
    trace: &RetentionTrace,
    layer: usize,
    select: HeadSelect,
) -> Result<RetentionMatrix> {
    if trace.is_empty() {
        return Err(Error::Empty("retention trace"));
    }
    let (n_layers, n_heads) = (trace.n_layers(), trace.n_heads());
    if layer >= n_layers {
        return Err(Error::NoSuchHead { layer, head: 0 });
    }
    if let HeadSelect::Head(h) = select {
        if h >= n_heads {
            return Err(Error::NoSuchHead { layer, head: h });
        }
    }
    let steps = trace.steps();
    let positions = trace
        .events()
        .iter()
        .map(|e| e.original_position + 1)
        .max()
        .unwrap_or(0);
    let mut cells = vec![0.0f32; steps * positions];
    let weight = match select {
        HeadSelect::Head(_) => 1.0,
        HeadSelect::Mean => 1.0 / n_heads as f32,
    };
    replay(trace, |t, l, h, set| {
        let wanted = match select {
            HeadSelect::Head(sel) => sel == h,
            HeadSelect::Mean => true,
        };
        if l == layer && wanted {
            for &p in set {
                cells[t * positions + p] += weight;
            }
        }
    });
    Ok(RetentionMatrix {
        steps,
        positions,
        cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionLifetime {
    pub position: usize,
    pub mean_steps: f64,
}

/// Mean number of steps each position stays in the multi-state, averaged
/// over every layer and head that held it. A state evicted at step `e`
/// after entering at step `s` lived `e - s` steps; one never evicted in a
/// `T`-step run lived `T - s`.
pub fn token_lifetime(trace: &RetentionTrace) -> Result<Vec<PositionLifetime>> {
    if trace.is_empty() {
        return Err(Error::Empty("retention trace"));
    }
    let steps = trace.steps();
    let mut entered: HashMap<(usize, usize, usize), usize> = HashMap::new();
    let mut sums: BTreeMap<usize, (f64, usize)> = BTreeMap::new();
    for e in trace.events() {
        let key = (e.layer, e.head, e.original_position);
        match e.action {
            Action::Append => {
                entered.insert(key, e.step);
            }
            Action::Evict => {
                if let Some(start) = entered.remove(&key) {
                    let s = sums.entry(e.original_position).or_default();
                    s.0 += (e.step - start) as f64;
                    s.1 += 1;
                }
            }
        }
    }
    for ((_, _, p), start) in entered {
        let s = sums.entry(p).or_default();
        s.0 += (steps - start) as f64;
        s.1 += 1;
    }
    Ok(sums
        .into_iter()
        .map(|(position, (sum, n))| PositionLifetime {
            position,
            mean_steps: sum / n as f64,
        })
        .collect())
}

pub fn write_lifetimes_csv<W: Write>(rows: &[PositionLifetime], mut w: W) -> Result<()> {
    writeln!(w, "position,mean_steps")?;
    for r in rows {
        writeln!(w, "{},{}", r.position, fmt_g6(r.mean_steps))?;
    }
    Ok(())
}

pub const UNKNOWN_TAG: &str = "UNK";
pub const AVERAGE_TAG: &str = "Avg.";

/// Externally produced `position -> tag` annotations.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct TagFile {
    tags: BTreeMap<usize, String>,
}

impl TagFile {
    pub fn new(pairs: impl IntoIterator<Item = (usize, String)>) -> Result<Self> {
        let mut tags = BTreeMap::new();
        for (p, t) in pairs {
            if tags.insert(p, t).is_some() {
                return Err(Error::InvalidConfig {
                    field: "tags",
                    reason: format!("position {p} tagged twice"),
                });
            }
        }
        Ok(Self { tags })
    }

    /// `position<TAB>tag` per line.
    pub fn read_tsv<R: BufRead>(r: R) -> Result<Self> {
        let mut pairs = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let (pos, tag) = line.split_once('\t').ok_or_else(|| Error::Parse {
                line: i + 1,
                reason: "expected `position<TAB>tag`".into(),
            })?;
            let pos = pos.trim().parse().map_err(|e| Error::Parse {
                line: i + 1,
                reason: format!("position `{pos}`: {e}"),
            })?;
            pairs.push((pos, tag.trim().to_string()));
        }
        Self::new(pairs)
    }

    pub fn tag(&self, position: usize) -> &str {
        self.tags.get(&position).map_or(UNKNOWN_TAG, String::as_str)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TagLifetime {
    pub tag: String,
    pub mean_steps: f64,
    pub count: usize,
}

/// Mean of [`token_lifetime`] per tag, longest-lived first (ties by tag
/// name), followed by an [`AVERAGE_TAG`] row over all positions.
pub fn lifetime_by_tag(trace: &RetentionTrace, tags: &TagFile) -> Result<Vec<TagLifetime>> {
    let lifetimes = token_lifetime(trace)?;
    let mut groups: BTreeMap<&str, (f64, usize)> = BTreeMap::new();
    for l in &lifetimes {
        let g = groups.entry(tags.tag(l.position)).or_default();
        g.0 += l.mean_steps;
        g.1 += 1;
    }
    let mut rows: Vec<TagLifetime> = groups
        .into_iter()
        .map(|(tag, (sum, count))| TagLifetime {
            tag: tag.to_string(),
            mean_steps: sum / count as f64,
            count,
        })
        .collect();
    rows.sort_by(|a, b| b.mean_steps.total_cmp(&a.mean_steps).then(a.tag.cmp(&b.tag)));
    let total: f64 = lifetimes.iter().map(|l| l.mean_steps).sum();
    rows.push(TagLifetime {
        tag: AVERAGE_TAG.to_string(),
        mean_steps: total / lifetimes.len() as f64,
        count: lifetimes.len(),
    });
    Ok(rows)
}

pub fn write_tag_table_csv<W: Write>(rows: &[TagLifetime], mut w: W) -> Result<()> {
    writeln!(w, "tag,mean_steps,count")?;
    for r in rows {
        writeln!(w, "{},{},{}", r.tag, fmt_g6(r.mean_steps), r.count)?;
    }
    Ok(())
}

/// Share of retained states that are recent, over every step, layer and
/// head. A state is recent at step `t` when its original position is
/// greater than `t - k`.
pub fn recent_proportion(trace: &RetentionTrace, k: usize) -> Result<f64> {
    let (mut recent, mut total) = (0usize, 0usize);
    replay(trace, |t, _, _, set| {
        total += set.len();
        recent += set.iter().filter(|&&p| p + k > t).count();
    });
    if total == 0 {
        return Err(Error::Empty("no retained states in trace"));
    }
    Ok(recent as f64 / total as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MemoryDims {
    pub n_layers: u64,
    pub n_heads: u64,
    pub head_dim: u64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MemoryReport {
    pub state_size: u64,
    /// `2 x layers x heads x head_dim x state_size x bytes_per_element`.
    pub bytes: u64,
    /// Largest batch whose caches fit in the budget; `None` without one, or
    /// when a cache needs no memory.
    pub max_batch: Option<u64>,
}

impl MemoryReport {
    pub fn gigabytes(&self) -> f64 {
        self.bytes as f64 / 1e9
    }
}

pub fn memory_report(
    dims: MemoryDims,
    state_size: u64,
    bytes_per_element: u64,
    budget: Option<u64>,
) -> Result<MemoryReport> {
    if dims.n_layers == 0 || dims.n_heads == 0 || dims.head_dim == 0 || bytes_per_element == 0 {
        return Err(Error::InvalidConfig {
            field: "dims",
            reason: "layers, heads, head_dim and bytes per element must be positive".into(),
        });
    }
    let bytes = 2 * dims.n_layers * dims.n_heads * dims.head_dim * state_size * bytes_per_element;
    let max_batch = budget.and_then(|b| (bytes > 0).then(|| b / bytes));
    Ok(MemoryReport {
        state_size,
        bytes,
        max_batch,
    })
}

pub fn write_memory_csv<W: Write>(rows: &[MemoryReport], mut w: W) -> Result<()> {
    writeln!(w, "state_size,bytes,gigabytes,max_batch")?;
    for r in rows {
        let batch = r.max_batch.map(|b| b.to_string()).unwrap_or_default();
        writeln!(w, "{},{},{},{batch}", r.state_size, r.bytes, fmt_g6(r.gigabytes()))?;
    }
    Ok(())
}
