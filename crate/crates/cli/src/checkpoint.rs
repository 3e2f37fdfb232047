//! Tab-separated parameter checkpoints (tabs shown as spaces):
//!
//! ```text
//! chunkrnn-checkpoint  1
//! seed  3
//! output  softmax
//! side  none
//! activations  tanh,tanh
//! tensor  layer0.w_xh  7  10
//! <one tab-separated row per matrix row>
//! ```
//!
//! Floats use Rust's shortest round-trip formatting, so loading gives back
//! the exact bits.

use std::collections::BTreeMap;

use chunkrnn_core::nn::{Activation, Matrix, OutputHead, OutputKind, RnnLayerParams, RnnStack};

const MAGIC: &str = "chunkrnn-checkpoint";
const VERSION: &str = "1";

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum CheckpointError {
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("checkpoint ends early: {0}")]
    Truncated(String),
    #[error("inconsistent checkpoint: {0}")]
    Inconsistent(String),
}

/// A stack plus free-form header fields such as `seed`.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub stack: RnnStack,
    pub meta: BTreeMap<String, String>,
}

fn kind_name(k: OutputKind) -> &'static str {
    match k {
        OutputKind::Softmax => "softmax",
        OutputKind::Sigmoid => "sigmoid",
    }
}

fn write_matrix(out: &mut String, name: &str, m: &Matrix) {
    out.push_str(&format!("tensor\t{name}\t{}\t{}\n", m.rows(), m.cols()));
    for r in 0..m.rows() {
        let row: Vec<String> = m.row(r).iter().map(|x| format!("{x:?}")).collect();
        out.push_str(&row.join("\t"));
        out.push('\n');
    }
}

pub fn write(stack: &RnnStack, meta: &BTreeMap<String, String>) -> String {
    let mut out = format!("{MAGIC}\t{VERSION}\n");
    for (k, v) in meta {
        out.push_str(&format!("{k}\t{v}\n"));
    }
    out.push_str(&format!("output\t{}\n", kind_name(stack.output)));
    match stack.side_input() {
        Some((l, d)) => out.push_str(&format!("side\t{l}:{d}\n")),
        None => out.push_str("side\tnone\n"),
    }
    let acts: Vec<&str> = stack.layers.iter().map(|l| l.activation.name()).collect();
    out.push_str(&format!("activations\t{}\n", acts.join(",")));
    for (i, l) in stack.layers.iter().enumerate() {
        write_matrix(&mut out, &format!("layer{i}.w_xh"), &l.w_xh);
        write_matrix(&mut out, &format!("layer{i}.w_hh"), &l.w_hh);
        write_matrix(&mut out, &format!("layer{i}.b_h"), &l.b_h);
    }
    write_matrix(&mut out, "head.w_ho", &stack.head.w_ho);
    write_matrix(&mut out, "head.b_o", &stack.head.b_o);
    out
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
}

impl<'a> Lines<'a> {
    fn next(&mut self, what: &str) -> Result<(usize, &'a str), CheckpointError> {
        self.inner
            .next()
            .map(|(i, l)| (i + 1, l))
            .ok_or_else(|| CheckpointError::Truncated(what.to_string()))
    }
}

fn malformed(line: usize, message: impl Into<String>) -> CheckpointError {
    CheckpointError::Malformed {
        line,
        message: message.into(),
    }
}

fn read_matrix(lines: &mut Lines, expect: &str) -> Result<Matrix, CheckpointError> {
    let (n, header) = lines.next(expect)?;
    let f: Vec<&str> = header.split('\t').collect();
    if f.len() != 4 || f[0] != "tensor" || f[1] != expect {
        return Err(malformed(n, format!("expected tensor header for {expect}")));
    }
    let dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|e| malformed(n, format!("bad dimension `{s}`: {e}")))
    };
    let (rows, cols) = (dim(f[2])?, dim(f[3])?);
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows {
        let (n, line) = lines.next(expect)?;
        let before = data.len();
        for cell in line.split('\t') {
            data.push(
                cell.parse::<f64>()
                    .map_err(|e| malformed(n, format!("bad value `{cell}`: {e}")))?,
            );
        }
        if data.len() - before != cols {
            return Err(malformed(
                n,
                format!("expected {cols} values, found {}", data.len() - before),
            ));
        }
    }
    Ok(Matrix::from_vec(rows, cols, data))
}

pub fn read(text: &str) -> Result<Checkpoint, CheckpointError> {
    let mut lines = Lines {
        inner: text.lines().enumerate(),
    };
    let (n, first) = lines.next("header")?;
    if first != format!("{MAGIC}\t{VERSION}") {
        return Err(malformed(n, "not a version 1 checkpoint"));
    }
    let mut meta = BTreeMap::new();
    let (mut output, mut side) = (None, None);
    let acts = loop {
        let (n, line) = lines.next("fields")?;
        let Some((k, v)) = line.split_once('\t') else {
            return Err(malformed(n, "expected `key<TAB>value`"));
        };
        match k {
            "output" => {
                output = Some(match v {
                    "softmax" => OutputKind::Softmax,
                    "sigmoid" => OutputKind::Sigmoid,
                    _ => return Err(malformed(n, format!("unknown output `{v}`"))),
                })
            }
            "side" => {
                side = Some(if v == "none" {
                    None
                } else {
                    let (l, d) = v
                        .split_once(':')
                        .ok_or_else(|| malformed(n, "side must be `layer:dim`"))?;
                    let p = |s: &str| s.parse::<usize>().map_err(|e| malformed(n, e.to_string()));
                    Some((p(l)?, p(d)?))
                })
            }
            "activations" => {
                let parsed: Option<Vec<Activation>> = v.split(',').map(Activation::from_name).collect();
                break parsed.ok_or_else(|| malformed(n, format!("bad activations `{v}`")))?;
            }
            _ => {
                meta.insert(k.to_string(), v.to_string());
            }
        }
    };
    let output = output.ok_or_else(|| CheckpointError::Truncated("output".into()))?;
    let side = side.ok_or_else(|| CheckpointError::Truncated("side".into()))?;
    let mut layers = Vec::with_capacity(acts.len());
    for (i, activation) in acts.into_iter().enumerate() {
        let w_xh = read_matrix(&mut lines, &format!("layer{i}.w_xh"))?;
        let w_hh = read_matrix(&mut lines, &format!("layer{i}.w_hh"))?;
        let b_h = read_matrix(&mut lines, &format!("layer{i}.b_h"))?;
        if w_hh.rows() != w_hh.cols() || w_hh.cols() != w_xh.cols() || b_h.rows() != 1 || b_h.cols() != w_hh.cols() {
            return Err(CheckpointError::Inconsistent(format!("layer {i} shapes disagree")));
        }
        layers.push(RnnLayerParams {
            w_xh,
            w_hh,
            b_h,
            activation,
        });
    }
    let w_ho = read_matrix(&mut lines, "head.w_ho")?;
    let b_o = read_matrix(&mut lines, "head.b_o")?;
    if b_o.rows() != 1 || b_o.cols() != w_ho.cols() {
        return Err(CheckpointError::Inconsistent("head shapes disagree".into()));
    }
    if let Some((n, extra)) = lines.inner.next() {
        if !extra.trim().is_empty() {
            return Err(malformed(n + 1, "trailing content"));
        }
    }
    let stack = RnnStack::from_parts(layers, OutputHead { w_ho, b_o }, output, side)
        .map_err(|e| CheckpointError::Inconsistent(e.to_string()))?;
    Ok(Checkpoint { stack, meta })
}
