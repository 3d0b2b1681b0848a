//! Weight file: a UTF-8 text header terminated by `end_header\n`, followed by
//! the raw little-endian f32 blob of every block in declared order.
//!
//! ```text
//! msrnn-weights
//! format_version 1
//! n_layers 4
//! n_heads 4
//! head_dim 16
//! hidden_dim 64
//! ff_dim 256
//! vocab_size 256
//! train_context_len 512
//! rope_base 10000
//! ff_activation silu
//! block token_embedding 256 64
//! block layers.0.attn_norm 64
//! ...
//! end_header
//! ```

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{block_layout, ModelConfig, ModelWeights, FF_ACTIVATION};

pub const MAGIC: &str = "msrnn-weights";
pub const FORMAT_VERSION: u32 = 1;
const END: &str = "end_header";

pub fn encode(config: &ModelConfig, weights: &ModelWeights) -> Result<Vec<u8>> {
    config.validate()?;
    weights.check(config)?;
    let mut header = format!(
        "{MAGIC}\nformat_version {FORMAT_VERSION}\nn_layers {}\nn_heads {}\nhead_dim {}\n\
         hidden_dim {}\nff_dim {}\nvocab_size {}\ntrain_context_len {}\nrope_base {}\n\
         ff_activation {FF_ACTIVATION}\n",
        config.n_layers,
        config.n_heads,
        config.head_dim,
        config.hidden_dim,
        config.ff_dim,
        config.vocab_size,
        config.train_context_len,
        config.rope_base,
    );
    for b in block_layout(config) {
        let dims: Vec<String> = b.shape.iter().map(usize::to_string).collect();
        header.push_str(&format!("block {} {}\n", b.name, dims.join(" ")));
    }
    header.push_str(END);
    header.push('\n');
    let mut out = header.into_bytes();
    for block in weights.blocks() {
        for x in block {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_weights(path: &Path, config: &ModelConfig, weights: &ModelWeights) -> Result<()> {
    fs::write(path, encode(config, weights)?)?;
    Ok(())
}

pub fn load_weights(path: &Path) -> Result<(ModelConfig, ModelWeights)> {
    decode(&fs::read(path)?)
}

fn malformed(msg: impl Into<String>) -> Error {
    Error::MalformedHeader(msg.into())
}

pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, ModelWeights)> {
    let marker = format!("\n{END}\n");
    let end = bytes
        .windows(marker.len())
        .position(|w| w == marker.as_bytes())
        .ok_or_else(|| malformed("missing end_header line"))?;
    let header =
        std::str::from_utf8(&bytes[..end]).map_err(|_| malformed("header is not UTF-8"))?;
    let blob = &bytes[end + marker.len()..];

    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(malformed(format!("first line must be `{MAGIC}`")));
    }
    let mut fields = std::collections::BTreeMap::new();
    let mut blocks: Vec<(String, Vec<usize>)> = Vec::new();
    for line in lines {
        let mut parts = line.split_whitespace();
        let key = parts.next().ok_or_else(|| malformed("blank header line"))?;
        if key == "block" {
            let name = parts
                .next()
                .ok_or_else(|| malformed("block line without name"))?;
            let shape = parts
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| malformed(format!("bad shape for block `{name}`")))?;
            blocks.push((name.to_string(), shape));
        } else {
            let value = parts
                .next()
                .ok_or_else(|| malformed(format!("`{key}` has no value")))?;
            if parts.next().is_some() {
                return Err(malformed(format!("`{key}` has extra values")));
            }
            if fields.insert(key.to_string(), value.to_string()).is_some() {
                return Err(malformed(format!("duplicate field `{key}`")));
            }
        }
    }

    let mut take = |key: &str| -> Result<String> {
        fields
            .remove(key)
            .ok_or_else(|| malformed(format!("missing field `{key}`")))
    };
    let version = take("format_version")?;
    if version.parse::<u32>().ok() != Some(FORMAT_VERSION) {
        return Err(malformed(format!("unsupported format_version `{version}`")));
    }
    let mut count = |key: &str| -> Result<usize> {
        let v = take(key)?;
        v.parse()
            .map_err(|_| malformed(format!("`{key}` is not a count: `{v}`")))
    };
    let config = ModelConfig {
        n_layers: count("n_layers")?,
        n_heads: count("n_heads")?,
        head_dim: count("head_dim")?,
        hidden_dim: count("hidden_dim")?,
        ff_dim: count("ff_dim")?,
        vocab_size: count("vocab_size")?,
        train_context_len: count("train_context_len")?,
        rope_base: {
            let v = take("rope_base")?;
            v.parse()
                .map_err(|_| malformed(format!("`rope_base` is not a real: `{v}`")))?
        },
    };
    let activation = take("ff_activation")?;
    if activation != FF_ACTIVATION {
        return Err(malformed(format!("unsupported ff_activation `{activation}`")));
    }
    if let Some(key) = fields.keys().next() {
        return Err(malformed(format!("unknown field `{key}`")));
    }
    config.validate()?;

    let layout = block_layout(&config);
    if blocks.len() != layout.len() {
        return Err(Error::ShapeMismatch {
            block: "<block list>".into(),
            expected: vec![layout.len()],
            found: vec![blocks.len()],
        });
    }
    for (spec, (name, shape)) in layout.iter().zip(&blocks) {
        if &spec.name != name || &spec.shape != shape {
            return Err(Error::ShapeMismatch {
                block: name.clone(),
                expected: spec.shape.clone(),
                found: shape.clone(),
            });
        }
    }

    let expected: usize = layout.iter().map(|b| b.numel() * 4).sum();
    if blob.len() < expected {
        return Err(Error::TruncatedBlob {
            expected,
            found: blob.len(),
        });
    }
    if blob.len() > expected {
        return Err(Error::TrailingBytes {
            extra: blob.len() - expected,
        });
    }
    let mut offset = 0;
    let data = layout
        .iter()
        .map(|b| {
            let n = b.numel() * 4;
            let v = blob[offset..offset + n]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            offset += n;
            v
        })
        .collect();
    let weights = ModelWeights::from_blocks(&config, data);
    weights.check(&config)?;
    Ok((config, weights))
}
