use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::nn::network::Network;

/// Desk-scale architecture families.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    /// Dense layers of the given hidden widths.
    Mlp { hidden: Vec<usize> },
    /// Two 3x3 convolutions, global average pooling, dense classifier.
    Conv2 { channels: usize },
}

impl Architecture {
    /// Zero-initialized network for samples of `input_shape` (channels, height, width).
    pub fn build(&self, input_shape: &[usize], classes: usize) -> Result<Network> {
        match self {
            Architecture::Mlp { hidden } => Network::mlp(input_shape.to_vec(), hidden, classes),
            Architecture::Conv2 { channels } => {
                Network::conv2(input_shape.to_vec(), *channels, classes)
            }
        }
    }

    /// Short identifier used in file names and reports.
    pub fn label(&self) -> String {
        match self {
            Architecture::Mlp { hidden } => {
                let widths: Vec<String> = hidden.iter().map(|h| h.to_string()).collect();
                format!("mlp{}", widths.join("x"))
            }
            Architecture::Conv2 { channels } => format!("conv2c{channels}"),
        }
    }
}

impl std::str::FromStr for Architecture {
    type Err = crate::error::Error;

    /// `mlp:64x32`, `mlp:` (no hidden layer) or `conv2:8`.
    fn from_str(s: &str) -> Result<Self> {
        let bad = || crate::error::Error::Unknown {
            what: "architecture",
            name: s.to_string(),
        };
        let (kind, arg) = s.split_once(':').ok_or_else(bad)?;
        match kind {
            "mlp" => {
                let hidden = if arg.is_empty() {
                    Vec::new()
                } else {
                    arg.split('x')
                        .map(|w| w.parse().map_err(|_| bad()))
                        .collect::<Result<Vec<usize>>>()?
                };
                Ok(Architecture::Mlp { hidden })
            }
            "conv2" => Ok(Architecture::Conv2 {
                channels: arg.parse().map_err(|_| bad())?,
            }),
            _ => Err(bad()),
        }
    }
}
