use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One layer of a feed-forward architecture.
///
/// Images flow through the network in `[n, height, width, channels]` layout.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Layer {
    Linear {
        inputs: usize,
        outputs: usize,
    },
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        #[serde(default)]
        padding: usize,
    },
    MaxPool {
        kernel: usize,
        stride: usize,
    },
    Relu,
    Sigmoid,
    Flatten,
}

impl Layer {
    /// `(weight count, bias count, fan_in)` for parameterized layers.
    pub fn param_shape(&self) -> Option<(usize, usize, usize)> {
        match *self {
            Layer::Linear { inputs, outputs } => Some((inputs * outputs, outputs, inputs)),
            Layer::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                let fan_in = in_channels * kernel * kernel;
                Some((out_channels * fan_in, out_channels, fan_in))
            }
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Single logit per sample, binary cross-entropy.
    Binary,
    /// `output_dim` logits per sample, softmax cross-entropy.
    Multiclass,
}

/// Architecture shared by every task model in an experiment.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchSpec {
    pub layers: Vec<Layer>,
    /// Per-sample input shape: `[features]` or `[height, width, channels]`.
    pub input_shape: Vec<usize>,
    pub output_dim: usize,
    pub loss: LossKind,
    /// Applies a ReLU to the final logits. Off by default; clamping logits at
    /// zero before a cross-entropy loss makes negative predictions unreachable.
    #[serde(default)]
    pub final_relu: bool,
}

/// Location of one parameterized layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LayerSlot {
    pub layer: usize,
    pub weight_offset: usize,
    pub weight_len: usize,
    pub bias_offset: usize,
    pub bias_len: usize,
    pub fan_in: usize,
}

impl ArchSpec {
    pub fn mlp(input_dim: usize, hidden: &[usize], loss: LossKind, output_dim: usize) -> Self {
        let mut layers = Vec::new();
        let mut prev = input_dim;
        for &h in hidden {
            layers.push(Layer::Linear {
                inputs: prev,
                outputs: h,
            });
            layers.push(Layer::Relu);
            prev = h;
        }
        layers.push(Layer::Linear {
            inputs: prev,
            outputs: output_dim,
        });
        Self {
            layers,
            input_shape: vec![input_dim],
            output_dim,
            loss,
            final_relu: false,
        }
    }

    /// MLP over inputs of any rank; multi-axis inputs are flattened first.
    pub fn mlp_for_shape(input_shape: &[usize], hidden: &[usize], loss: LossKind, output_dim: usize) -> Self {
        let features = input_shape.iter().product();
        let mut spec = Self::mlp(features, hidden, loss, output_dim);
        if input_shape.len() > 1 {
            spec.layers.insert(0, Layer::Flatten);
            spec.input_shape = input_shape.to_vec();
        }
        spec
    }

    /// Binary task network for 128x128x3 images: two conv/pool stages with
    /// 3x3 kernels at stride 3 and a 500-unit hidden layer.
    ///
    /// With unpadded convolutions and 2x2 pooling the flattened feature size
    /// is 50*3*3 = 450; no padding choice reaches 2450 at this input size.
    pub fn task_convnet() -> Self {
        Self {
            layers: vec![
                Layer::Conv2d {
                    in_channels: 3,
                    out_channels: 20,
                    kernel: 3,
                    stride: 3,
                    padding: 0,
                },
                Layer::Relu,
                Layer::MaxPool { kernel: 2, stride: 2 },
                Layer::Conv2d {
                    in_channels: 20,
                    out_channels: 50,
                    kernel: 3,
                    stride: 3,
                    padding: 0,
                },
                Layer::Relu,
                Layer::MaxPool { kernel: 2, stride: 2 },
                Layer::Flatten,
                Layer::Linear {
                    inputs: 450,
                    outputs: 500,
                },
                Layer::Relu,
                Layer::Linear {
                    inputs: 500,
                    outputs: 1,
                },
            ],
            input_shape: vec![128, 128, 3],
            output_dim: 1,
            loss: LossKind::Binary,
            final_relu: false,
        }
    }

    /// Multiclass domain network for 32x32x3 images. The second convolution
    /// is padded by 2 so the flattened size is 50*7*7 = 2450.
    pub fn domain_convnet(classes: usize) -> Self {
        Self {
            layers: vec![
                Layer::Conv2d {
                    in_channels: 3,
                    out_channels: 20,
                    kernel: 5,
                    stride: 1,
                    padding: 0,
                },
                Layer::Relu,
                Layer::MaxPool { kernel: 2, stride: 2 },
                Layer::Conv2d {
                    in_channels: 20,
                    out_channels: 50,
                    kernel: 5,
                    stride: 1,
                    padding: 2,
                },
                Layer::Relu,
                Layer::MaxPool { kernel: 2, stride: 2 },
                Layer::Flatten,
                Layer::Linear {
                    inputs: 2450,
                    outputs: 500,
                },
                Layer::Relu,
                Layer::Linear {
                    inputs: 500,
                    outputs: classes,
                },
            ],
            input_shape: vec![32, 32, 3],
            output_dim: classes,
            loss: LossKind::Multiclass,
            final_relu: false,
        }
    }

    /// Walks the layer chain and returns the per-sample shape after each layer.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Spec(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        match self.loss {
            LossKind::Binary if self.output_dim != 1 => {
                return Err(Error::Spec("binary loss needs output_dim 1".into()))
            }
            LossKind::Multiclass if self.output_dim < 2 => {
                return Err(Error::Spec("multiclass loss needs output_dim >= 2".into()))
            }
            _ => {}
        }
        let mut cur = self.input_shape.clone();
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |msg: String| Error::Spec(format!("layer {i} ({layer:?}): {msg}"));
            cur = match *layer {
                Layer::Linear { inputs, outputs } => {
                    if cur != [inputs] {
                        return Err(bad(format!("expects [{inputs}], got {cur:?}")));
                    }
                    if outputs == 0 {
                        return Err(bad("zero outputs".into()));
                    }
                    vec![outputs]
                }
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    if cur.len() != 3 || cur[2] != in_channels {
                        return Err(bad(format!("expects [h, w, {in_channels}], got {cur:?}")));
                    }
                    if kernel == 0 || stride == 0 || out_channels == 0 {
                        return Err(bad("zero kernel, stride or channels".into()));
                    }
                    let h = conv_out(cur[0], kernel, stride, padding)
                        .ok_or_else(|| bad("kernel larger than padded input".into()))?;
                    let w = conv_out(cur[1], kernel, stride, padding)
                        .ok_or_else(|| bad("kernel larger than padded input".into()))?;
                    vec![h, w, out_channels]
                }
                Layer::MaxPool { kernel, stride } => {
                    if cur.len() != 3 {
                        return Err(bad(format!("expects an image, got {cur:?}")));
                    }
                    if kernel == 0 || stride == 0 {
                        return Err(bad("zero kernel or stride".into()));
                    }
                    let h = conv_out(cur[0], kernel, stride, 0)
                        .ok_or_else(|| bad("window larger than input".into()))?;
                    let w = conv_out(cur[1], kernel, stride, 0)
                        .ok_or_else(|| bad("window larger than input".into()))?;
                    vec![h, w, cur[2]]
                }
                Layer::Relu | Layer::Sigmoid => cur,
                Layer::Flatten => vec![cur.iter().product()],
            };
            out.push(cur.clone());
        }
        if cur != [self.output_dim] {
            return Err(Error::Spec(format!(
                "network output {cur:?} does not match output_dim {}",
                self.output_dim
            )));
        }
        Ok(out)
    }

    pub fn validate(&self) -> Result<()> {
        self.shapes().map(|_| ())
    }

    /// Parameter slots in declaration order: each layer's weight (row-major)
    /// followed by its bias.
    pub fn slots(&self) -> Vec<LayerSlot> {
        let mut off = 0;
        let mut slots = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            if let Some((w, b, fan_in)) = layer.param_shape() {
                slots.push(LayerSlot {
                    layer: i,
                    weight_offset: off,
                    weight_len: w,
                    bias_offset: off + w,
                    bias_len: b,
                    fan_in,
                });
                off += w + b;
            }
        }
        slots
    }

    pub fn param_count(&self) -> usize {
        self.slots().iter().map(|s| s.weight_len + s.bias_len).sum()
    }
}

pub(crate) fn conv_out(size: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = size + 2 * padding;
    if padded < kernel {
        None
    } else {
        Some((padded - kernel) / stride + 1)
    }
}
