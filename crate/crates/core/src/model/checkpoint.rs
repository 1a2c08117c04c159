//! Versioned text checkpoints.
//!
//! The format is line-oriented: a version header, the scalar tag, the
//! config fields, then each layer's weight rows and bias. Parameters are
//! written with `Display`, whose shortest-round-trip decimal form restores
//! the exact bit pattern on parse, so save → load is bit-exact and the file
//! has no endianness concerns.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::Real;

use super::{Activation, Layer, Network, NetworkConfig};

const MAGIC: &str = "pairkl-checkpoint v1";

/// Serialize a network to checkpoint text.
pub fn checkpoint_text<F: Real>(net: &Network<F>) -> String {
    let cfg = net.config();
    let mut out = String::new();
    let _ = writeln!(out, "{MAGIC}");
    let _ = writeln!(out, "scalar {}", F::NAME);
    let _ = writeln!(out, "input_dim {}", cfg.input_dim);
    let hidden = if cfg.hidden_dims.is_empty() {
        "-".to_string()
    } else {
        cfg.hidden_dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let _ = writeln!(out, "hidden_dims {hidden}");
    let _ = writeln!(out, "embedding_dim {}", cfg.embedding_dim);
    let _ = writeln!(out, "num_classes {}", cfg.num_classes);
    let _ = writeln!(out, "activation rectifier");
    let _ = writeln!(out, "seed {}", cfg.seed);
    let _ = writeln!(out, "layers {}", net.layers().len());
    for (l, layer) in net.layers().iter().enumerate() {
        let _ = writeln!(
            out,
            "layer {l} {} {}",
            layer.weights.len(),
            layer.weights.first().map_or(0, Vec::len)
        );
        for row in &layer.weights {
            out.push('w');
            for w in row {
                let _ = write!(out, " {w}");
            }
            out.push('\n');
        }
        out.push('b');
        for b in &layer.bias {
            let _ = write!(out, " {b}");
        }
        out.push('\n');
    }
    out.push_str("end\n");
    out
}

struct Lines<'a> {
    inner: std::str::Lines<'a>,
    line: usize,
}

impl<'a> Lines<'a> {
    fn next(&mut self) -> Result<&'a str> {
        self.line += 1;
        self.inner.next().ok_or_else(|| Error::Checkpoint {
            reason: format!("truncated at line {}", self.line),
        })
    }
}

fn field<'a>(line: &'a str, key: &str, line_no: usize) -> Result<&'a str> {
    line.strip_prefix(key)
        .and_then(|rest| rest.strip_prefix(' '))
        .ok_or_else(|| Error::Checkpoint {
            reason: format!("line {line_no}: expected `{key} ...`, got {line:?}"),
        })
}

fn parse_usize(s: &str, what: &str) -> Result<usize> {
    s.trim().parse().map_err(|_| Error::Checkpoint {
        reason: format!("invalid {what}: {s:?}"),
    })
}

/// Parse checkpoint text into a network, validating the scalar tag, the
/// shape chain and parameter finiteness.
pub fn parse_checkpoint<F: Real>(text: &str) -> Result<Network<F>> {
    let mut lines = Lines {
        inner: text.lines(),
        line: 0,
    };
    if lines.next()? != MAGIC {
        return Err(Error::Checkpoint {
            reason: format!("bad header; expected {MAGIC:?}"),
        });
    }
    let scalar = field(lines.next()?, "scalar", lines.line)?;
    if scalar != F::NAME {
        return Err(Error::Checkpoint {
            reason: format!("scalar type is {scalar}, expected {}", F::NAME),
        });
    }
    let input_dim = parse_usize(field(lines.next()?, "input_dim", lines.line)?, "input_dim")?;
    let hidden_raw = field(lines.next()?, "hidden_dims", lines.line)?;
    let hidden_dims = if hidden_raw == "-" {
        Vec::new()
    } else {
        hidden_raw
            .split(',')
            .map(|d| parse_usize(d, "hidden dim"))
            .collect::<Result<Vec<_>>>()?
    };
    let embedding_dim = parse_usize(
        field(lines.next()?, "embedding_dim", lines.line)?,
        "embedding_dim",
    )?;
    let num_classes = parse_usize(
        field(lines.next()?, "num_classes", lines.line)?,
        "num_classes",
    )?;
    let activation = field(lines.next()?, "activation", lines.line)?;
    if activation != "rectifier" {
        return Err(Error::Checkpoint {
            reason: format!("unknown activation {activation:?}"),
        });
    }
    let seed = field(lines.next()?, "seed", lines.line)?
        .trim()
        .parse()
        .map_err(|_| Error::Checkpoint {
            reason: "invalid seed".into(),
        })?;
    let layer_count = parse_usize(field(lines.next()?, "layers", lines.line)?, "layer count")?;

    let config = NetworkConfig {
        input_dim,
        hidden_dims,
        embedding_dim,
        num_classes,
        activation: Activation::Rectifier,
        seed,
    };

    let parse_params = |s: &str, line_no: usize| -> Result<Vec<F>> {
        s.split_whitespace()
            .map(|tok| {
                F::parse(tok).ok_or_else(|| Error::Checkpoint {
                    reason: format!("line {line_no}: unparseable parameter {tok:?}"),
                })
            })
            .collect()
    };

    let mut layers = Vec::with_capacity(layer_count);
    for l in 0..layer_count {
        let header = lines.next()?;
        let rest = field(header, "layer", lines.line)?;
        let mut parts = rest.split_whitespace();
        let idx = parse_usize(parts.next().unwrap_or(""), "layer index")?;
        if idx != l {
            return Err(Error::Checkpoint {
                reason: format!("layer {idx} out of order, expected {l}"),
            });
        }
        let rows = parse_usize(parts.next().unwrap_or(""), "row count")?;
        let cols = parse_usize(parts.next().unwrap_or(""), "column count")?;
        let mut weights = Vec::with_capacity(rows);
        for _ in 0..rows {
            let row_line = lines.next()?;
            let body = field(row_line, "w", lines.line)?;
            let row = parse_params(body, lines.line)?;
            if row.len() != cols {
                return Err(Error::Checkpoint {
                    reason: format!(
                        "line {}: expected {cols} weights, got {}",
                        lines.line,
                        row.len()
                    ),
                });
            }
            weights.push(row);
        }
        let bias_line = lines.next()?;
        let bias = parse_params(field(bias_line, "b", lines.line)?, lines.line)?;
        if bias.len() != rows {
            return Err(Error::Checkpoint {
                reason: format!(
                    "line {}: expected {rows} biases, got {}",
                    lines.line,
                    bias.len()
                ),
            });
        }
        layers.push(Layer { weights, bias });
    }
    if lines.next()? != "end" {
        return Err(Error::Checkpoint {
            reason: "missing end marker".into(),
        });
    }
    Network::from_parts(config, layers).map_err(|e| Error::Checkpoint {
        reason: e.to_string(),
    })
}

/// Write a checkpoint file.
pub fn save_checkpoint<F: Real>(net: &Network<F>, path: &Path) -> Result<()> {
    std::fs::write(path, checkpoint_text(net))?;
    Ok(())
}

/// Load a checkpoint file.
pub fn load_checkpoint<F: Real>(path: &Path) -> Result<Network<F>> {
    let text = std::fs::read_to_string(path)?;
    parse_checkpoint(&text)
}
