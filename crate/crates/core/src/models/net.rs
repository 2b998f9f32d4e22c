use std::rc::Rc;

use super::arch::{conv_out, ArchSpec, Layer, LossKind};
use super::params::ParamSet;
use crate::autodiff::{GradVector, Graph, Tensor, Var, NO_INDEX};
use crate::error::{Error, Result};
use crate::taskgen::{Dataset, DatasetKind};

impl ArchSpec {
    /// Builds the network on `graph`. `theta` is the flat parameter vector and
    /// `x` a batch `[n, ...input_shape]`. Returns logits `[n]` for binary
    /// architectures and `[n, output_dim]` for multiclass ones.
    pub fn forward_graph(&self, g: &mut Graph, theta: Var, x: Var) -> Result<Var> {
        let xs = g.shape(x).to_vec();
        if xs.len() < 2 || xs[1..] != self.input_shape[..] {
            return Err(Error::Shape {
                node: "network input".into(),
                expected: self.input_shape.clone(),
                got: xs,
            });
        }
        if g.value(theta).len() != self.param_count() {
            return Err(Error::Shape {
                node: "network parameters".into(),
                expected: vec![self.param_count()],
                got: g.shape(theta).to_vec(),
            });
        }
        let n = xs[0];
        let slots = self.slots();
        let mut slot_iter = slots.iter();
        let mut h = x;
        // per-sample shape of h
        let mut cur = self.input_shape.clone();
        for layer in &self.layers {
            match *layer {
                Layer::Linear { inputs, outputs } => {
                    let s = slot_iter.next().expect("slot per parameterized layer");
                    let hm = g.reshape(h, &[n, inputs])?;
                    let w = g.slice(theta, s.weight_offset, &[outputs, inputs])?;
                    let b = g.slice(theta, s.bias_offset, &[outputs])?;
                    let wt = g.transpose(w)?;
                    let z = g.matmul(hm, wt)?;
                    h = g.add_row_bias(z, b)?;
                    cur = vec![outputs];
                }
                Layer::Conv2d {
                    in_channels,
                    out_channels,
                    kernel,
                    stride,
                    padding,
                } => {
                    let s = slot_iter.next().expect("slot per parameterized layer");
                    let (hh, ww) = (cur[0], cur[1]);
                    let oh = conv_out(hh, kernel, stride, padding).unwrap();
                    let ow = conv_out(ww, kernel, stride, padding).unwrap();
                    let patch = kernel * kernel * in_channels;
                    let map = im2col_map(n, hh, ww, in_channels, kernel, stride, padding, oh, ow);
                    let cols = g.gather(h, map, &[n * oh * ow, patch])?;
                    let w = g.slice(theta, s.weight_offset, &[out_channels, patch])?;
                    let b = g.slice(theta, s.bias_offset, &[out_channels])?;
                    let wt = g.transpose(w)?;
                    let z = g.matmul(cols, wt)?;
                    let z = g.add_row_bias(z, b)?;
                    h = g.reshape(z, &[n, oh, ow, out_channels])?;
                    cur = vec![oh, ow, out_channels];
                }
                Layer::MaxPool { kernel, stride } => {
                    let (hh, ww, c) = (cur[0], cur[1], cur[2]);
                    let oh = conv_out(hh, kernel, stride, 0).unwrap();
                    let ow = conv_out(ww, kernel, stride, 0).unwrap();
                    let map = maxpool_map(g.value(h).data(), n, hh, ww, c, kernel, stride, oh, ow);
                    h = g.gather(h, map, &[n, oh, ow, c])?;
                    cur = vec![oh, ow, c];
                }
                Layer::Relu => h = g.relu(h),
                Layer::Sigmoid => h = g.sigmoid(h),
                Layer::Flatten => {
                    let len = cur.iter().product();
                    h = g.reshape(h, &[n, len])?;
                    cur = vec![len];
                }
            }
        }
        if self.final_relu {
            h = g.relu(h);
        }
        match self.loss {
            LossKind::Binary => g.reshape(h, &[n]),
            LossKind::Multiclass => g.reshape(h, &[n, self.output_dim]),
        }
    }

    /// Logits for a batch of inputs.
    pub fn predict(&self, params: &ParamSet, x: &Tensor) -> Result<Tensor> {
        params.check(self)?;
        let mut g = Graph::new(false);
        let theta = g.constant(Tensor::vector(params.flat.clone()));
        let xv = g.constant(x.clone());
        let out = self.forward_graph(&mut g, theta, xv)?;
        Ok(g.value(out).clone())
    }

    pub fn check_dataset(&self, data: &Dataset) -> Result<()> {
        match (self.loss, data.kind) {
            (LossKind::Binary, DatasetKind::BinaryTask) => {}
            (LossKind::Multiclass, DatasetKind::MulticlassDomain { classes })
                if classes == self.output_dim => {}
            (loss, kind) => {
                return Err(Error::Precondition(format!(
                    "dataset '{}' of kind {kind:?} is incompatible with {loss:?} loss over {} outputs",
                    data.name, self.output_dim
                )))
            }
        }
        if data.sample_shape() != self.input_shape.as_slice() {
            return Err(Error::Shape {
                node: format!("dataset '{}'", data.name),
                expected: self.input_shape.clone(),
                got: data.sample_shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Mean loss of the network at `theta` over `data`, recorded on `g`.
    pub fn loss_graph(&self, g: &mut Graph, theta: Var, data: &Dataset) -> Result<Var> {
        if data.is_empty() {
            return Err(Error::Precondition(format!("dataset '{}' is empty", data.name)));
        }
        self.check_dataset(data)?;
        let x = g.constant(data.inputs.clone());
        let logits = self.forward_graph(g, theta, x)?;
        match self.loss {
            LossKind::Binary => g.bce_with_logits(logits, &data.targets()),
            LossKind::Multiclass => g.cross_entropy(logits, &data.labels),
        }
    }

    /// Loss value plus the graph that produced it; the graph's single
    /// parameter leaf is the flat parameter vector.
    pub fn loss(&self, params: &ParamSet, data: &Dataset) -> Result<LossEval> {
        params.check(self)?;
        let mut g = Graph::new(false);
        let theta = g.param(Tensor::vector(params.flat.clone()));
        let out = self.loss_graph(&mut g, theta, data)?;
        g.set_output(out);
        let value = g.value(out).item();
        Ok(LossEval { value, graph: g })
    }

    /// Loss and its gradient with respect to the flat parameters.
    pub fn loss_and_grad(&self, params: &ParamSet, data: &Dataset) -> Result<(f64, GradVector)> {
        let mut eval = self.loss(params, data)?;
        let grad = eval.graph.backward(&Tensor::scalar(1.0))?;
        Ok((eval.value, grad))
    }
}

/// Result of [`ArchSpec::loss`].
#[derive(Debug)]
pub struct LossEval {
    pub value: f64,
    pub graph: Graph,
}

#[allow(clippy::too_many_arguments)]
fn im2col_map(
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    pad: usize,
    oh: usize,
    ow: usize,
) -> Rc<[u32]> {
    let mut map = Vec::with_capacity(n * oh * ow * k * k * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ky in 0..k {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    for kx in 0..k {
                        let ix = (ox * stride + kx) as isize - pad as isize;
                        let inside = iy >= 0 && ix >= 0 && (iy as usize) < h && (ix as usize) < w;
                        for ch in 0..c {
                            map.push(if inside {
                                (((b * h + iy as usize) * w + ix as usize) * c + ch) as u32
                            } else {
                                NO_INDEX
                            });
                        }
                    }
                }
            }
        }
    }
    map.into()
}

/// Index of the first maximum in each pooling window.
#[allow(clippy::too_many_arguments)]
fn maxpool_map(
    x: &[f64],
    n: usize,
    h: usize,
    w: usize,
    c: usize,
    k: usize,
    stride: usize,
    oh: usize,
    ow: usize,
) -> Rc<[u32]> {
    let mut map = Vec::with_capacity(n * oh * ow * c);
    for b in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                for ch in 0..c {
                    let mut best = usize::MAX;
                    let mut best_v = f64::NEG_INFINITY;
                    for ky in 0..k {
                        for kx in 0..k {
                            let idx = ((b * h + oy * stride + ky) * w + ox * stride + kx) * c + ch;
                            if best == usize::MAX || x[idx] > best_v {
                                best = idx;
                                best_v = x[idx];
                            }
                        }
                    }
                    map.push(best as u32);
                }
            }
        }
    }
    map.into()
}
