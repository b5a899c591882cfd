//! Text checkpoint format.
//!
//! ```text
//! duelq-net 1
//! topology single                      | topology dueling <aggregator> <shared_layers>
//! layer <stream> <index> <out> <in> <activation>
//! w <out*in values, row-major>
//! b <out values>
//! ...
//! end
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! save/load cycle reproduces every parameter bit for bit.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{Activation, DenseNet, Layer, Topology};
use crate::dueling::AggregatorKind;
use crate::error::{Error, Result};

const MAGIC: &str = "duelq-net";
const VERSION: u32 = 1;

impl DenseNet {
    pub fn to_checkpoint_string(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\n");
        match self.topology {
            Topology::SingleStream => out.push_str("topology single\n"),
            Topology::Dueling {
                shared_layers,
                aggregator,
            } => {
                let _ = writeln!(out, "topology dueling {} {shared_layers}", aggregator.name());
            }
        }
        for (stream, k, layer) in self.layers() {
            let act = match layer.activation {
                Activation::Rectifier => "rectifier",
                Activation::Identity => "identity",
            };
            let _ = writeln!(
                out,
                "layer {stream} {k} {} {} {act}",
                layer.out_dim, layer.in_dim
            );
            write_row(&mut out, 'w', &layer.weights);
            write_row(&mut out, 'b', &layer.bias);
        }
        out.push_str("end\n");
        out
    }

    pub fn from_checkpoint_str(text: &str) -> std::result::Result<Self, String> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim()));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| format!("unexpected end of file, expected {what}"))
        };

        let (n, header) = next("header")?;
        let mut parts = header.split_whitespace();
        if parts.next() != Some(MAGIC) {
            return Err(format!("line {n}: not a duelq network checkpoint"));
        }
        match parts.next().map(str::parse::<u32>) {
            Some(Ok(VERSION)) => {}
            other => return Err(format!("line {n}: unsupported version {other:?}")),
        }

        let (n, topo_line) = next("topology")?;
        let fields: Vec<&str> = topo_line.split_whitespace().collect();
        let topology = match fields.as_slice() {
            ["topology", "single"] => Topology::SingleStream,
            ["topology", "dueling", agg, shared] => Topology::Dueling {
                aggregator: AggregatorKind::from_name(agg)
                    .ok_or_else(|| format!("line {n}: unknown aggregator {agg:?}"))?,
                shared_layers: shared
                    .parse()
                    .map_err(|_| format!("line {n}: bad shared layer count {shared:?}"))?,
            },
            _ => return Err(format!("line {n}: malformed topology line")),
        };

        let mut streams: [Vec<Layer>; 3] = Default::default();
        loop {
            let (n, line) = next("layer or end")?;
            if line == "end" {
                break;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let ["layer", stream, index, out_dim, in_dim, act] = fields.as_slice() else {
                return Err(format!("line {n}: malformed layer line"));
            };
            let slot = match *stream {
                "trunk" => 0,
                "value" => 1,
                "advantage" => 2,
                other => return Err(format!("line {n}: unknown stream {other:?}")),
            };
            let parse_dim = |s: &str| {
                s.parse::<usize>()
                    .map_err(|_| format!("line {n}: bad dimension {s:?}"))
            };
            if parse_dim(index)? != streams[slot].len() {
                return Err(format!("line {n}: layers out of order"));
            }
            let (out_dim, in_dim) = (parse_dim(out_dim)?, parse_dim(in_dim)?);
            let activation = match *act {
                "rectifier" => Activation::Rectifier,
                "identity" => Activation::Identity,
                other => return Err(format!("line {n}: unknown activation {other:?}")),
            };
            let (wn, wline) = next("weights")?;
            let weights = read_row(wn, wline, 'w', out_dim * in_dim)?;
            let (bn, bline) = next("biases")?;
            let bias = read_row(bn, bline, 'b', out_dim)?;
            streams[slot].push(Layer {
                in_dim,
                out_dim,
                weights,
                bias,
                activation,
            });
        }
        let [trunk, value, advantage] = streams;
        DenseNet::from_layers(topology, trunk, value, advantage).map_err(|e| e.to_string())
    }
}

fn write_row(out: &mut String, tag: char, values: &[f64]) {
    out.push(tag);
    for v in values {
        let _ = write!(out, " {v:?}");
    }
    out.push('\n');
}

fn read_row(n: usize, line: &str, tag: char, expected: usize) -> std::result::Result<Vec<f64>, String> {
    let mut parts = line.split_whitespace();
    if parts.next() != Some(tag.encode_utf8(&mut [0; 4])) {
        return Err(format!("line {n}: expected a '{tag}' row"));
    }
    let values = parts
        .map(|s| s.parse::<f64>().map_err(|_| format!("line {n}: bad number {s:?}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if values.len() != expected {
        return Err(format!(
            "line {n}: expected {expected} values, found {}",
            values.len()
        ));
    }
    Ok(values)
}

/// Writes `net` to `path` via a temporary file and rename.
pub fn save_checkpoint(net: &DenseNet, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, net.to_checkpoint_string().as_bytes())
}

pub fn load_checkpoint(path: &Path) -> Result<DenseNet> {
    let text = fs::read_to_string(path)?;
    DenseNet::from_checkpoint_str(&text).map_err(|msg| Error::Checkpoint {
        path: path.to_path_buf(),
        msg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::init_net;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn round_trip_is_bitwise(seed in any::<u64>(), dueling in any::<bool>(), width in 1usize..7) {
            let topology = if dueling {
                Topology::Dueling { shared_layers: 1, aggregator: AggregatorKind::Max }
            } else {
                Topology::SingleStream
            };
            let net = init_net(&[3, width, 4, 2], topology, seed).unwrap();
            let back = DenseNet::from_checkpoint_str(&net.to_checkpoint_string()).unwrap();
            prop_assert_eq!(
                net.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>(),
                back.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>()
            );
            prop_assert_eq!(net, back);
        }
    }

    #[test]
    fn rejects_truncated_and_foreign_files() {
        let net = init_net(&[2, 3, 1], Topology::SingleStream, 0).unwrap();
        let text = net.to_checkpoint_string();
        let cut = &text[..text.len() / 2];
        assert!(DenseNet::from_checkpoint_str(cut).is_err());
        assert!(DenseNet::from_checkpoint_str("hello 1\n").is_err());
        let bad = text.replacen("w ", "w nan ", 1);
        assert!(DenseNet::from_checkpoint_str(&bad).is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.txt");
        let net = init_net(&[4, 5, 3, 2], Topology::SingleStream, 3).unwrap();
        save_checkpoint(&net, &path).unwrap();
        assert_eq!(load_checkpoint(&path).unwrap(), net);
    }
}
