use std::fmt;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv {
        in_channels: usize,
        out_channels: usize,
        kernel_size: usize,
        stride: usize,
        padding: usize,
    },
    ReLU,
    MaxPool {
        window: usize,
        stride: usize,
    },
    Flatten,
    Dense {
        in_features: usize,
        out_features: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSpec {
    pub kind: LayerKind,
    pub trainable: bool,
}

impl LayerSpec {
    pub fn conv(in_channels: usize, out_channels: usize, kernel_size: usize, stride: usize, padding: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Conv {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            },
            trainable: true,
        }
    }

    pub fn relu() -> Self {
        LayerSpec {
            kind: LayerKind::ReLU,
            trainable: true,
        }
    }

    pub fn max_pool(window: usize, stride: usize) -> Self {
        LayerSpec {
            kind: LayerKind::MaxPool { window, stride },
            trainable: true,
        }
    }

    pub fn flatten() -> Self {
        LayerSpec {
            kind: LayerKind::Flatten,
            trainable: true,
        }
    }

    pub fn dense(in_features: usize, out_features: usize) -> Self {
        LayerSpec {
            kind: LayerKind::Dense {
                in_features,
                out_features,
            },
            trainable: true,
        }
    }

    pub fn frozen(mut self) -> Self {
        self.trainable = false;
        self
    }

    pub fn has_params(&self) -> bool {
        matches!(self.kind, LayerKind::Conv { .. } | LayerKind::Dense { .. })
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            LayerKind::Conv { .. } => "Conv",
            LayerKind::ReLU => "ReLU",
            LayerKind::MaxPool { .. } => "MaxPool",
            LayerKind::Flatten => "Flatten",
            LayerKind::Dense { .. } => "Dense",
        }
    }

    /// Weight and bias shapes, for layers that carry parameters.
    pub(crate) fn param_shapes(&self) -> Option<(Vec<usize>, Vec<usize>)> {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel_size,
                ..
            } => Some((
                vec![out_channels, in_channels, kernel_size, kernel_size],
                vec![out_channels],
            )),
            LayerKind::Dense {
                in_features,
                out_features,
            } => Some((vec![out_features, in_features], vec![out_features])),
            _ => None,
        }
    }

    pub(crate) fn fan_in(&self) -> usize {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                kernel_size,
                ..
            } => in_channels * kernel_size * kernel_size,
            LayerKind::Dense { in_features, .. } => in_features,
            _ => 0,
        }
    }

    fn validate(&self, index: usize) -> Result<()> {
        let ok = match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                ..
            } => in_channels >= 1 && out_channels >= 1 && kernel_size >= 1 && stride >= 1,
            LayerKind::MaxPool { window, stride } => window >= 1 && stride >= 1,
            LayerKind::Dense {
                in_features,
                out_features,
            } => in_features >= 1 && out_features >= 1,
            LayerKind::ReLU | LayerKind::Flatten => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Build(format!("layer {index} ({self}) has a zero dimension")))
        }
    }

    /// Output shape (without batch axis) for the given input shape.
    pub(crate) fn output_shape(&self, index: usize, input: &[usize]) -> Result<Vec<usize>> {
        self.validate(index)?;
        let incompatible = |what: &str| {
            Err(Error::Build(format!(
                "layer {} output {:?} incompatible with layer {index} ({self}): {what}",
                index as isize - 1,
                input
            )))
        };
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            } => {
                let &[c, h, w] = input else {
                    return incompatible("expected a C×H×W input");
                };
                if c != in_channels {
                    return incompatible("channel count differs");
                }
                if kernel_size > h + 2 * padding || kernel_size > w + 2 * padding {
                    return incompatible("kernel larger than padded input");
                }
                Ok(vec![
                    out_channels,
                    (h + 2 * padding - kernel_size) / stride + 1,
                    (w + 2 * padding - kernel_size) / stride + 1,
                ])
            }
            LayerKind::ReLU => Ok(input.to_vec()),
            LayerKind::MaxPool { window, stride } => {
                let &[c, h, w] = input else {
                    return incompatible("expected a C×H×W input");
                };
                if window > h || window > w {
                    return incompatible("pool window larger than input");
                }
                Ok(vec![c, (h - window) / stride + 1, (w - window) / stride + 1])
            }
            LayerKind::Flatten => Ok(vec![input.iter().product()]),
            LayerKind::Dense {
                in_features,
                out_features,
            } => {
                let &[n] = input else {
                    return incompatible("expected a flat input");
                };
                if n != in_features {
                    return incompatible("feature count differs");
                }
                Ok(vec![out_features])
            }
        }
    }
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.kind {
            LayerKind::Conv {
                in_channels,
                out_channels,
                kernel_size,
                stride,
                padding,
            } => write!(f, "Conv({in_channels}→{out_channels}, k{kernel_size}, s{stride}, p{padding})"),
            LayerKind::ReLU => write!(f, "ReLU"),
            LayerKind::MaxPool { window, stride } => write!(f, "MaxPool({window}, s{stride})"),
            LayerKind::Flatten => write!(f, "Flatten"),
            LayerKind::Dense {
                in_features,
                out_features,
            } => write!(f, "Dense({in_features}→{out_features})"),
        }?;
        if !self.trainable {
            write!(f, " [frozen]")?;
        }
        Ok(())
    }
}

/// The default desk-scale architecture for a `channels×size×size` input:
/// two conv/pool stages, a 64-unit hidden layer, and an `num_classes` head.
pub fn default_architecture(channels: usize, size: usize, num_classes: usize) -> Vec<LayerSpec> {
    let pooled = size / 4;
    vec![
        LayerSpec::conv(channels, 16, 5, 1, 2),
        LayerSpec::relu(),
        LayerSpec::max_pool(2, 2),
        LayerSpec::conv(16, 32, 3, 1, 1),
        LayerSpec::relu(),
        LayerSpec::max_pool(2, 2),
        LayerSpec::flatten(),
        LayerSpec::dense(32 * pooled * pooled, 64),
        LayerSpec::relu(),
        LayerSpec::dense(64, num_classes),
    ]
}
