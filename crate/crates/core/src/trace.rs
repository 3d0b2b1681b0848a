//! Append/evict event log. Every analysis is reconstructed from it.

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Action {
    Append,
    Evict,
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Action::Append => "append",
            Action::Evict => "evict",
        })
    }
}

impl FromStr for Action {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "append" => Ok(Action::Append),
            "evict" => Ok(Action::Evict),
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceEvent {
    pub step: usize,
    pub layer: usize,
    pub head: usize,
    pub action: Action,
    pub original_position: usize,
    pub token_id: u32,
}

pub const TRACE_HEADER: &str = "step,layer,head,action,original_position,token_id";

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RetentionTrace {
    events: Vec<TraceEvent>,
}

impl RetentionTrace {
    pub fn new(events: Vec<TraceEvent>) -> Self {
        Self { events }
    }

    pub fn push(&mut self, event: TraceEvent) {
        self.events.push(event);
    }

    pub fn events(&self) -> &[TraceEvent] {
        &self.events
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    /// Number of decoding steps covered. Every step appends, so this is the
    /// largest step index plus one.
    pub fn steps(&self) -> usize {
        self.events.iter().map(|e| e.step + 1).max().unwrap_or(0)
    }

    pub fn n_layers(&self) -> usize {
        self.events.iter().map(|e| e.layer + 1).max().unwrap_or(0)
    }

    pub fn n_heads(&self) -> usize {
        self.events.iter().map(|e| e.head + 1).max().unwrap_or(0)
    }

    /// Stable reorder into sequential-decoding order: by step, then layer,
    /// preserving the within-(step, layer) order.
    pub fn canonicalize(&mut self) {
        self.events.sort_by_key(|e| (e.step, e.layer));
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "{TRACE_HEADER}")?;
        for e in &self.events {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                e.step, e.layer, e.head, e.action, e.original_position, e.token_id
            )?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(r: R) -> Result<Self> {
        let mut events = Vec::new();
        for (i, line) in r.lines().enumerate() {
            let line = line?;
            let line = line.trim();
            if i == 0 {
                if line != TRACE_HEADER {
                    return Err(Error::Parse {
                        line: 1,
                        reason: format!("expected header `{TRACE_HEADER}`"),
                    });
                }
                continue;
            }
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 6 {
                return Err(Error::Parse {
                    line: i + 1,
                    reason: format!("expected 6 fields, found {}", fields.len()),
                });
            }
            let bad = |reason: String| Error::Parse {
                line: i + 1,
                reason,
            };
            let num = |s: &str| s.parse::<usize>().map_err(|e| bad(format!("`{s}`: {e}")));
            events.push(TraceEvent {
                step: num(fields[0])?,
                layer: num(fields[1])?,
                head: num(fields[2])?,
                action: fields[3].parse().map_err(bad)?,
                original_position: num(fields[4])?,
                token_id: fields[5]
                    .parse()
                    .map_err(|e| bad(format!("`{}`: {e}", fields[5])))?,
            });
        }
        Ok(Self { events })
    }
}
