use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::sensor::IMAGE_SIZE;

pub const CONV_FILTERS: usize = 32;
pub const HIDDEN_UNITS: usize = 256;
/// [v_prev, ω_prev, ψ].
pub const STATE_DIM: usize = 3;
pub const ACTION_DIM: usize = 2;
/// Means and log standard deviations of both actions.
pub const POLICY_OUTPUTS: usize = 2 * ACTION_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Layer {
    /// Square kernel with "same" padding: output side is `ceil(input / stride)`.
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    /// Non-overlapping max pooling (stride = size, floor division).
    MaxPool { size: usize },
    GlobalAvgPool,
    /// Appends `extra` externally supplied features to the flat activation.
    Concat { extra: usize },
    Dense { inputs: usize, outputs: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shape {
    Image { c: usize, h: usize, w: usize },
    Flat(usize),
}

impl Shape {
    pub fn len(&self) -> usize {
        match *self {
            Shape::Image { c, h, w } => c * h * w,
            Shape::Flat(n) => n,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// "Same" padding split as (before, after) for one spatial axis.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2, total - total / 2)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub name: String,
    /// Image input as (channels, height, width); zero channels for vision-free nets.
    pub input: [usize; 3],
    pub layers: Vec<Layer>,
}

/// One parameterized layer in the ledger.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct LedgerEntry {
    pub layer: usize,
    pub kind: &'static str,
    pub weights: usize,
    pub biases: usize,
}

impl LedgerEntry {
    pub fn total(&self) -> usize {
        self.weights + self.biases
    }
}

impl ArchSpec {
    fn trunk() -> Vec<Layer> {
        let conv = |in_channels, stride| Layer::Conv {
            in_channels,
            out_channels: CONV_FILTERS,
            kernel: 3,
            stride,
        };
        vec![
            conv(1, 2),
            Layer::Relu,
            conv(CONV_FILTERS, 1),
            Layer::Relu,
            Layer::MaxPool { size: 2 },
            conv(CONV_FILTERS, 2),
            Layer::Relu,
            conv(CONV_FILTERS, 1),
            Layer::Relu,
            Layer::GlobalAvgPool,
        ]
    }

    fn head(inputs: usize, outputs: usize) -> Vec<Layer> {
        vec![
            Layer::Dense {
                inputs,
                outputs: HIDDEN_UNITS,
            },
            Layer::Relu,
            Layer::Dense {
                inputs: HIDDEN_UNITS,
                outputs: HIDDEN_UNITS,
            },
            Layer::Relu,
            Layer::Dense {
                inputs: HIDDEN_UNITS,
                outputs,
            },
        ]
    }

    /// Depth image + state vector → (μ_v, μ_ω, log σ_v, log σ_ω).
    pub fn actor() -> Self {
        let mut layers = Self::trunk();
        layers.push(Layer::Concat { extra: STATE_DIM });
        layers.extend(Self::head(CONV_FILTERS + STATE_DIM, POLICY_OUTPUTS));
        Self {
            name: "actor".into(),
            input: [1, IMAGE_SIZE, IMAGE_SIZE],
            layers,
        }
    }

    /// Depth image + state vector + action → Q.
    pub fn critic() -> Self {
        let mut layers = Self::trunk();
        layers.push(Layer::Concat {
            extra: STATE_DIM + ACTION_DIM,
        });
        layers.extend(Self::head(CONV_FILTERS + STATE_DIM + ACTION_DIM, 1));
        Self {
            name: "critic".into(),
            input: [1, IMAGE_SIZE, IMAGE_SIZE],
            layers,
        }
    }

    /// Vision-free perceptron over `inputs` features.
    pub fn mlp(name: &str, inputs: usize, hidden: &[usize], outputs: usize) -> Self {
        let mut layers = vec![Layer::Concat { extra: inputs }];
        let mut prev = inputs;
        for &h in hidden {
            layers.push(Layer::Dense { inputs: prev, outputs: h });
            layers.push(Layer::Relu);
            prev = h;
        }
        layers.push(Layer::Dense { inputs: prev, outputs });
        Self {
            name: name.into(),
            input: [0, 0, 0],
            layers,
        }
    }

    pub fn input_shape(&self) -> Shape {
        let [c, h, w] = self.input;
        if c == 0 {
            Shape::Flat(0)
        } else {
            Shape::Image { c, h, w }
        }
    }

    /// Output shape of every layer; validates the chain.
    pub fn shapes(&self) -> Result<Vec<Shape>> {
        let mut cur = self.input_shape();
        let mut out = Vec::with_capacity(self.layers.len());
        let bad = |i: usize, l: &Layer, s: Shape| Error::Shape {
            expected: format!("valid input for layer {i} ({l:?})"),
            actual: format!("{s:?}"),
        };
        for (i, layer) in self.layers.iter().enumerate() {
            cur = match (*layer, cur) {
                (
                    Layer::Conv {
                        in_channels,
                        out_channels,
                        kernel,
                        stride,
                    },
                    Shape::Image { c, h, w },
                ) if c == in_channels && kernel > 0 && stride > 0 && h > 0 && w > 0 => Shape::Image {
                    c: out_channels,
                    h: same_padding(h, kernel, stride).0,
                    w: same_padding(w, kernel, stride).0,
                },
                (Layer::Relu, s) => s,
                (Layer::MaxPool { size }, Shape::Image { c, h, w }) if size > 0 && h >= size && w >= size => {
                    Shape::Image {
                        c,
                        h: h / size,
                        w: w / size,
                    }
                }
                (Layer::GlobalAvgPool, Shape::Image { c, .. }) => Shape::Flat(c),
                (Layer::Concat { extra }, Shape::Flat(n)) => Shape::Flat(n + extra),
                (Layer::Dense { inputs, outputs }, Shape::Flat(n)) if n == inputs => Shape::Flat(outputs),
                (l, s) => return Err(bad(i, &l, s)),
            };
            out.push(cur);
        }
        if self.layers.iter().filter(|l| matches!(l, Layer::Concat { .. })).count() != 1 {
            return Err(Error::Shape {
                expected: "exactly one concat layer".into(),
                actual: self.name.clone(),
            });
        }
        Ok(out)
    }

    pub fn output_dim(&self) -> usize {
        self.shapes().map(|s| s.last().map_or(0, |s| s.len())).unwrap_or(0)
    }

    pub fn extra_dim(&self) -> usize {
        self.layers
            .iter()
            .find_map(|l| match l {
                Layer::Concat { extra } => Some(*extra),
                _ => None,
            })
            .unwrap_or(0)
    }

    pub fn ledger(&self) -> Vec<LedgerEntry> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match *l {
                Layer::Conv {
                    in_channels,
                    out_channels,
                    kernel,
                    ..
                } => Some(LedgerEntry {
                    layer: i,
                    kind: "conv",
                    weights: kernel * kernel * in_channels * out_channels,
                    biases: out_channels,
                }),
                Layer::Dense { inputs, outputs } => Some(LedgerEntry {
                    layer: i,
                    kind: "dense",
                    weights: inputs * outputs,
                    biases: outputs,
                }),
                _ => None,
            })
            .collect()
    }

    pub fn param_count(&self) -> usize {
        self.ledger().iter().map(LedgerEntry::total).sum()
    }

    /// First eight bytes of SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> u64 {
        let json = serde_json::to_vec(self).expect("arch serializes");
        let digest = Sha256::digest(&json);
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// 3·3·C_in·32 + 32 per conv, fan_in·units + units per dense.
    fn conv_params(c_in: usize) -> usize {
        3 * 3 * c_in * 32 + 32
    }

    fn dense_params(fan_in: usize, units: usize) -> usize {
        fan_in * units + units
    }

    #[test]
    fn actor_ledger_and_total() {
        let arch = ArchSpec::actor();
        let totals: Vec<usize> = arch.ledger().iter().map(LedgerEntry::total).collect();
        let want = vec![
            conv_params(1),
            conv_params(32),
            conv_params(32),
            conv_params(32),
            dense_params(35, 256),
            dense_params(256, 256),
            dense_params(256, 4),
        ];
        assert_eq!(want, vec![320, 9_248, 9_248, 9_248, 9_216, 65_792, 1_028]);
        assert_eq!(totals, want);
        assert_eq!(arch.param_count(), 104_100);
    }

    #[test]
    fn critic_ledger_and_total() {
        let arch = ArchSpec::critic();
        let totals: Vec<usize> = arch.ledger().iter().map(LedgerEntry::total).collect();
        let convs: usize = totals[..4].iter().sum();
        assert_eq!(convs, 28_064);
        assert_eq!(totals[4..], [dense_params(37, 256), dense_params(256, 256), dense_params(256, 1)]);
        assert_eq!(totals[4..], [9_728, 65_792, 257]);
        assert_eq!(arch.param_count(), 103_841);
    }

    #[test]
    fn spatial_chain() {
        let shapes = ArchSpec::actor().shapes().unwrap();
        let sides: Vec<usize> = shapes
            .iter()
            .filter_map(|s| match s {
                Shape::Image { h, .. } => Some(*h),
                _ => None,
            })
            .collect();
        assert_eq!(sides, vec![56, 56, 56, 56, 28, 14, 14, 14, 14]);
        assert_eq!(shapes[9], Shape::Flat(32));
        assert_eq!(ArchSpec::actor().output_dim(), 4);
        assert_eq!(ArchSpec::critic().output_dim(), 1);
    }

    #[test]
    fn same_padding_splits() {
        assert_eq!(same_padding(112, 3, 2), (56, 0, 1));
        assert_eq!(same_padding(56, 3, 1), (56, 1, 1));
        assert_eq!(same_padding(28, 3, 2), (14, 0, 1));
    }

    #[test]
    fn hashes_distinguish_architectures() {
        assert_ne!(ArchSpec::actor().hash(), ArchSpec::critic().hash());
        assert_eq!(ArchSpec::actor().hash(), ArchSpec::actor().hash());
    }

    #[test]
    fn broken_chain_rejected() {
        let mut arch = ArchSpec::actor();
        arch.layers[2] = Layer::Conv {
            in_channels: 16,
            out_channels: 32,
            kernel: 3,
            stride: 1,
        };
        assert!(arch.shapes().is_err());
    }
}
