use std::rc::Rc;

use super::tensor::{matmul_raw, transpose_raw, Tensor};
use super::GradVector;
use crate::error::{shape_err, Error, Result};

/// Handle to a node inside a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Storage precision for node values.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Precision {
    #[default]
    F64,
    /// Every node value is rounded through `f32` after it is computed.
    F32,
}

/// Sentinel in gather/scatter index maps meaning "no source element" (reads as zero).
pub const NO_INDEX: u32 = u32::MAX;

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    MulScalar(Var, Var),
    Sum(Var),
    BroadcastScalar(Var),
    MatMul(Var, Var),
    Transpose(Var),
    SumRows(Var),
    BroadcastRows(Var),
    RowSum(Var),
    BroadcastCols(Var),
    Relu(Var),
    Sigmoid(Var),
    Softmax(Var),
    Gather(Var, Rc<[u32]>),
    ScatterAdd(Var, Rc<[u32]>),
    Reshape(Var),
    Slice(Var, usize),
    Pad(Var, usize),
    Bce(Var, Rc<[f64]>),
    CrossEntropy(Var, Rc<[usize]>),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::MulScalar(..) => "mul_scalar",
            Op::Sum(..) => "sum",
            Op::BroadcastScalar(..) => "broadcast_scalar",
            Op::MatMul(..) => "matmul",
            Op::Transpose(..) => "transpose",
            Op::SumRows(..) => "sum_rows",
            Op::BroadcastRows(..) => "broadcast_rows",
            Op::RowSum(..) => "row_sum",
            Op::BroadcastCols(..) => "broadcast_cols",
            Op::Relu(..) => "relu",
            Op::Sigmoid(..) => "sigmoid",
            Op::Softmax(..) => "softmax",
            Op::Gather(..) => "gather",
            Op::ScatterAdd(..) => "scatter_add",
            Op::Reshape(..) => "reshape",
            Op::Slice(..) => "slice",
            Op::Pad(..) => "pad",
            Op::Bce(..) => "bce",
            Op::CrossEntropy(..) => "cross_entropy",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Define-by-run computation graph with reverse-mode differentiation.
///
/// Nodes are appended in evaluation order, so the node list is always
/// topologically sorted. When the graph is higher-order capable, the
/// backward pass appends its vector-Jacobian products as ordinary nodes,
/// which makes the returned gradients themselves differentiable.
#[derive(Debug)]
pub struct Graph {
    nodes: Vec<Node>,
    params: Vec<Var>,
    output: Option<Var>,
    higher_order: bool,
    precision: Precision,
    detached: bool,
}

impl Graph {
    pub fn new(higher_order: bool) -> Self {
        Self {
            nodes: Vec::new(),
            params: Vec::new(),
            output: None,
            higher_order,
            precision: Precision::F64,
            detached: false,
        }
    }

    pub fn with_precision(mut self, precision: Precision) -> Self {
        self.precision = precision;
        self
    }

    pub fn higher_order(&self) -> bool {
        self.higher_order
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Parameter leaves in registration order.
    pub fn params(&self) -> &[Var] {
        &self.params
    }

    pub fn output(&self) -> Option<Var> {
        self.output
    }

    pub fn set_output(&mut self, v: Var) {
        self.output = Some(v);
    }

    fn push(&mut self, mut value: Tensor, op: Op, requires_grad: bool) -> Var {
        if self.precision == Precision::F32 {
            for x in value.data_mut() {
                *x = *x as f32 as f64;
            }
        }
        let requires_grad = requires_grad && !self.detached;
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    fn node_label(&self, op: &str) -> String {
        format!("node #{} ({op})", self.nodes.len())
    }

    /// Trainable leaf; gradients are reported for every parameter.
    pub fn param(&mut self, t: Tensor) -> Var {
        let v = self.push(t, Op::Leaf, true);
        self.nodes[v.0].requires_grad = true;
        self.params.push(v);
        v
    }

    /// Non-trainable leaf (inputs, labels, masks).
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    fn same_shape(&self, op: &str, a: Var, b: Var) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(shape_err(self.node_label(op), self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    fn matrix_dims(&self, op: &str, a: Var) -> Result<(usize, usize)> {
        let s = self.shape(a);
        if s.len() != 2 {
            return Err(Error::Shape {
                node: format!("{} expects a 2-D operand", self.node_label(op)),
                expected: vec![0, 0],
                got: s.to_vec(),
            });
        }
        Ok((s[0], s[1]))
    }

    fn scalar_check(&self, op: &str, s: Var) -> Result<()> {
        if self.value(s).len() != 1 {
            return Err(shape_err(self.node_label(op), &[1], self.shape(s)));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x + y);
        Ok(self.push(v, Op::Add(a, b), self.rg(&[a, b])))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x - y);
        Ok(self.push(v, Op::Sub(a, b), self.rg(&[a, b])))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip(self.value(b), |x, y| x * y);
        Ok(self.push(v, Op::Mul(a, b), self.rg(&[a, b])))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let v = self.value(a).map(|x| x * c);
        self.push(v, Op::Scale(a, c), self.rg(&[a]))
    }

    /// Multiplies every element of `a` by the single element of `s`.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Result<Var> {
        self.scalar_check("mul_scalar", s)?;
        let c = self.value(s).item();
        let v = self.value(a).map(|x| x * c);
        Ok(self.push(v, Op::MulScalar(a, s), self.rg(&[a, s])))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total: f64 = self.value(a).data().iter().sum();
        self.push(Tensor::scalar(total), Op::Sum(a), self.rg(&[a]))
    }

    /// Dot product of two equally shaped tensors, as a one-element tensor.
    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        let m = self.mul(a, b)?;
        Ok(self.sum(m))
    }

    pub fn broadcast_scalar(&mut self, s: Var, shape: &[usize]) -> Result<Var> {
        self.scalar_check("broadcast_scalar", s)?;
        let v = Tensor::full(shape, self.value(s).item());
        Ok(self.push(v, Op::BroadcastScalar(s), self.rg(&[s])))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.matrix_dims("matmul", a)?;
        let (k2, n) = self.matrix_dims("matmul", b)?;
        if k != k2 {
            return Err(shape_err(self.node_label("matmul"), &[k, n], &[k2, n]));
        }
        let data = matmul_raw(self.value(a).data(), self.value(b).data(), m, k, n);
        let v = Tensor::from_parts(vec![m, n], data);
        Ok(self.push(v, Op::MatMul(a, b), self.rg(&[a, b])))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (m, n) = self.matrix_dims("transpose", a)?;
        let data = transpose_raw(self.value(a).data(), m, n);
        let v = Tensor::from_parts(vec![n, m], data);
        Ok(self.push(v, Op::Transpose(a), self.rg(&[a])))
    }

    /// `[n, m] -> [m]`, summing over the row axis.
    pub fn sum_rows(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims("sum_rows", a)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; m];
        for r in 0..n {
            for (o, &v) in out.iter_mut().zip(&x[r * m..(r + 1) * m]) {
                *o += v;
            }
        }
        Ok(self.push(Tensor::from_parts(vec![m], out), Op::SumRows(a), self.rg(&[a])))
    }

    /// `[m] -> [n, m]`, repeating the vector as every row.
    pub fn broadcast_rows(&mut self, a: Var, n: usize) -> Result<Var> {
        if self.shape(a).len() != 1 {
            return Err(shape_err(self.node_label("broadcast_rows"), &[0], self.shape(a)));
        }
        let m = self.value(a).len();
        let mut out = Vec::with_capacity(n * m);
        for _ in 0..n {
            out.extend_from_slice(self.value(a).data());
        }
        Ok(self.push(
            Tensor::from_parts(vec![n, m], out),
            Op::BroadcastRows(a),
            self.rg(&[a]),
        ))
    }

    /// `[n, m] -> [n]`, summing each row.
    pub fn row_sum(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims("row_sum", a)?;
        let x = self.value(a).data();
        let out = (0..n).map(|r| x[r * m..(r + 1) * m].iter().sum()).collect();
        Ok(self.push(Tensor::from_parts(vec![n], out), Op::RowSum(a), self.rg(&[a])))
    }

    /// `[n] -> [n, m]`, repeating each element across its row.
    pub fn broadcast_cols(&mut self, a: Var, m: usize) -> Result<Var> {
        if self.shape(a).len() != 1 {
            return Err(shape_err(self.node_label("broadcast_cols"), &[0], self.shape(a)));
        }
        let n = self.value(a).len();
        let mut out = Vec::with_capacity(n * m);
        for &v in self.value(a).data() {
            out.extend(std::iter::repeat_n(v, m));
        }
        Ok(self.push(
            Tensor::from_parts(vec![n, m], out),
            Op::BroadcastCols(a),
            self.rg(&[a]),
        ))
    }

    /// Adds a `[m]` bias to every row of `[n, m]`.
    pub fn add_row_bias(&mut self, x: Var, b: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims("add_row_bias", x)?;
        if self.shape(b) != [m] {
            return Err(shape_err(self.node_label("add_row_bias"), &[m], self.shape(b)));
        }
        let bb = self.broadcast_rows(b, n)?;
        self.add(x, bb)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).map(|x| if x > 0.0 { x } else { 0.0 });
        self.push(v, Op::Relu(a), self.rg(&[a]))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        self.push(v, Op::Sigmoid(a), self.rg(&[a]))
    }

    /// Row-wise softmax of a 2-D tensor.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let (n, m) = self.matrix_dims("softmax", a)?;
        let x = self.value(a).data();
        let mut out = vec![0.0; n * m];
        for r in 0..n {
            softmax_row(&x[r * m..(r + 1) * m], &mut out[r * m..(r + 1) * m]);
        }
        Ok(self.push(Tensor::from_parts(vec![n, m], out), Op::Softmax(a), self.rg(&[a])))
    }

    /// `out[i] = a.flat[map[i]]`, or zero where `map[i] == NO_INDEX`.
    pub fn gather(&mut self, a: Var, map: Rc<[u32]>, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        if n != map.len() {
            return Err(shape_err(self.node_label("gather"), shape, &[map.len()]));
        }
        let x = self.value(a).data();
        if let Some(&bad) = map.iter().find(|&&i| i != NO_INDEX && i as usize >= x.len()) {
            return Err(Error::Precondition(format!(
                "{}: index {bad} out of range for {} elements",
                self.node_label("gather"),
                x.len()
            )));
        }
        let out = map
            .iter()
            .map(|&i| if i == NO_INDEX { 0.0 } else { x[i as usize] })
            .collect();
        Ok(self.push(
            Tensor::from_parts(shape.to_vec(), out),
            Op::Gather(a, map),
            self.rg(&[a]),
        ))
    }

    /// Adjoint of [`Graph::gather`]: `out.flat[map[i]] += a.flat[i]`.
    pub fn scatter_add(&mut self, a: Var, map: Rc<[u32]>, shape: &[usize]) -> Result<Var> {
        if self.value(a).len() != map.len() {
            return Err(shape_err(
                self.node_label("scatter_add"),
                &[map.len()],
                self.shape(a),
            ));
        }
        let n: usize = shape.iter().product();
        let mut out = vec![0.0; n];
        for (&i, &v) in map.iter().zip(self.value(a).data()) {
            if i != NO_INDEX {
                out[i as usize] += v;
            }
        }
        Ok(self.push(
            Tensor::from_parts(shape.to_vec(), out),
            Op::ScatterAdd(a, map),
            self.rg(&[a]),
        ))
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let v = self
            .value(a)
            .reshape(shape)
            .map_err(|_| shape_err(self.node_label("reshape"), shape, self.shape(a)))?;
        Ok(self.push(v, Op::Reshape(a), self.rg(&[a])))
    }

    /// Contiguous slice of the flattened tensor, reshaped to `shape`.
    pub fn slice(&mut self, a: Var, start: usize, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        let x = self.value(a).data();
        if start + n > x.len() {
            return Err(shape_err(self.node_label("slice"), &[start + n], &[x.len()]));
        }
        let v = Tensor::from_parts(shape.to_vec(), x[start..start + n].to_vec());
        Ok(self.push(v, Op::Slice(a, start), self.rg(&[a])))
    }

    /// Embeds `a` at `start` inside a zero tensor of `shape`.
    pub fn pad(&mut self, a: Var, start: usize, shape: &[usize]) -> Result<Var> {
        let n: usize = shape.iter().product();
        let x = self.value(a).data();
        if start + x.len() > n {
            return Err(shape_err(self.node_label("pad"), &[n], &[start + x.len()]));
        }
        let mut out = vec![0.0; n];
        out[start..start + x.len()].copy_from_slice(x);
        Ok(self.push(
            Tensor::from_parts(shape.to_vec(), out),
            Op::Pad(a, start),
            self.rg(&[a]),
        ))
    }

    /// Mean binary cross-entropy of logits `z` against targets in `{0, 1}`.
    pub fn bce_with_logits(&mut self, z: Var, targets: &[f64]) -> Result<Var> {
        let x = self.value(z).data();
        if x.len() != targets.len() || x.is_empty() {
            return Err(shape_err(
                self.node_label("bce"),
                &[targets.len()],
                self.shape(z),
            ));
        }
        let n = x.len() as f64;
        let total: f64 = x
            .iter()
            .zip(targets)
            .map(|(&z, &y)| z.max(0.0) - z * y + (-z.abs()).exp().ln_1p())
            .sum();
        let v = Tensor::scalar(total / n);
        Ok(self.push(v, Op::Bce(z, targets.into()), self.rg(&[z])))
    }

    /// Mean cross-entropy of `[n, c]` logits against class indices.
    pub fn cross_entropy(&mut self, z: Var, labels: &[usize]) -> Result<Var> {
        let (n, c) = self.matrix_dims("cross_entropy", z)?;
        if n != labels.len() || n == 0 {
            return Err(shape_err(self.node_label("cross_entropy"), &[labels.len(), c], &[n, c]));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
            return Err(Error::Precondition(format!(
                "label {bad} out of range for {c} classes"
            )));
        }
        let x = self.value(z).data();
        let mut total = 0.0;
        for (r, &y) in labels.iter().enumerate() {
            let row = &x[r * c..(r + 1) * c];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = mx + row.iter().map(|v| (v - mx).exp()).sum::<f64>().ln();
            total += lse - row[y];
        }
        let v = Tensor::scalar(total / n as f64);
        Ok(self.push(v, Op::CrossEntropy(z, labels.into()), self.rg(&[z])))
    }

    /// Gradients of a one-element `output` with respect to `wrt`.
    ///
    /// On a higher-order graph the returned vars are differentiable functions
    /// of the graph's parameters; otherwise they are detached constants.
    pub fn grad(&mut self, output: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        self.check_output(output)?;
        if self.value(output).len() != 1 {
            return Err(shape_err("grad seed", &[1], self.shape(output)));
        }
        let seed = self.constant(Tensor::scalar(1.0));
        self.grad_seeded(output, seed, wrt)
    }

    /// Vector-Jacobian product: gradients of `seed · output`.
    pub fn grad_with_seed(&mut self, output: Var, seed: &Tensor, wrt: &[Var]) -> Result<Vec<Var>> {
        self.check_output(output)?;
        if seed.shape() != self.shape(output) {
            return Err(shape_err("backward seed", self.shape(output), seed.shape()));
        }
        let seed = self.constant(seed.clone());
        self.grad_seeded(output, seed, wrt)
    }

    fn check_output(&self, output: Var) -> Result<()> {
        if output.0 >= self.nodes.len() {
            return Err(Error::State(format!(
                "node #{} has not been evaluated (graph holds {} nodes)",
                output.0,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    fn grad_seeded(&mut self, output: Var, seed: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let prev = self.detached;
        self.detached = prev || !self.higher_order;
        let res = self.backprop(output, seed, wrt);
        self.detached = prev;
        res
    }

    fn backprop(&mut self, output: Var, seed: Var, wrt: &[Var]) -> Result<Vec<Var>> {
        let n = output.0 + 1;
        let mut grads: Vec<Option<Var>> = vec![None; n];
        grads[output.0] = Some(seed);
        for idx in (0..n).rev() {
            let Some(g) = grads[idx] else { continue };
            if !self.nodes[idx].requires_grad {
                continue;
            }
            let op = self.nodes[idx].op.clone();
            for (input, gin) in self.vjp(Var(idx), &op, g)? {
                grads[input.0] = Some(match grads[input.0] {
                    None => gin,
                    Some(prev) => self.add(prev, gin)?,
                });
            }
        }
        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            let g = match grads.get(w.0).copied().flatten() {
                Some(g) => g,
                None => {
                    let z = Tensor::zeros(self.shape(w));
                    self.constant(z)
                }
            };
            out.push(g);
        }
        Ok(out)
    }

    fn vjp(&mut self, node: Var, op: &Op, g: Var) -> Result<Vec<(Var, Var)>> {
        let mut out = Vec::with_capacity(2);
        match *op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                if self.requires_grad(a) {
                    out.push((a, g));
                }
                if self.requires_grad(b) {
                    out.push((b, g));
                }
            }
            Op::Sub(a, b) => {
                if self.requires_grad(a) {
                    out.push((a, g));
                }
                if self.requires_grad(b) {
                    out.push((b, self.scale(g, -1.0)));
                }
            }
            Op::Mul(a, b) => {
                if self.requires_grad(a) {
                    out.push((a, self.mul(g, b)?));
                }
                if self.requires_grad(b) {
                    out.push((b, self.mul(g, a)?));
                }
            }
            Op::Scale(a, c) => out.push((a, self.scale(g, c))),
            Op::MulScalar(a, s) => {
                if self.requires_grad(a) {
                    out.push((a, self.mul_scalar(g, s)?));
                }
                if self.requires_grad(s) {
                    let d = self.dot(g, a)?;
                    let d = self.reshape(d, self.shape(s).to_vec().as_slice())?;
                    out.push((s, d));
                }
            }
            Op::Sum(a) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.broadcast_scalar(g, &shape)?));
            }
            Op::BroadcastScalar(s) => {
                let t = self.sum(g);
                let shape = self.shape(s).to_vec();
                out.push((s, self.reshape(t, &shape)?));
            }
            Op::MatMul(a, b) => {
                if self.requires_grad(a) {
                    let bt = self.transpose(b)?;
                    out.push((a, self.matmul(g, bt)?));
                }
                if self.requires_grad(b) {
                    let at = self.transpose(a)?;
                    out.push((b, self.matmul(at, g)?));
                }
            }
            Op::Transpose(a) => out.push((a, self.transpose(g)?)),
            Op::SumRows(a) => {
                let n = self.shape(a)[0];
                out.push((a, self.broadcast_rows(g, n)?));
            }
            Op::BroadcastRows(a) => out.push((a, self.sum_rows(g)?)),
            Op::RowSum(a) => {
                let m = self.shape(a)[1];
                out.push((a, self.broadcast_cols(g, m)?));
            }
            Op::BroadcastCols(a) => out.push((a, self.row_sum(g)?)),
            Op::Relu(a) => {
                let mask = self.value(a).map(|x| if x > 0.0 { 1.0 } else { 0.0 });
                let mask = self.constant(mask);
                out.push((a, self.mul(g, mask)?));
            }
            Op::Sigmoid(a) => {
                // s' = s (1 - s)
                let ones = self.constant(Tensor::full(self.shape(node), 1.0));
                let one_minus = self.sub(ones, node)?;
                let ds = self.mul(node, one_minus)?;
                out.push((a, self.mul(g, ds)?));
            }
            Op::Softmax(a) => {
                // s * (g - rowsum(g * s))
                let m = self.shape(a)[1];
                let gs = self.mul(g, node)?;
                let rs = self.row_sum(gs)?;
                let rs = self.broadcast_cols(rs, m)?;
                let centered = self.sub(g, rs)?;
                out.push((a, self.mul(node, centered)?));
            }
            Op::Gather(a, ref map) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.scatter_add(g, map.clone(), &shape)?));
            }
            Op::ScatterAdd(a, ref map) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.gather(g, map.clone(), &shape)?));
            }
            Op::Reshape(a) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.reshape(g, &shape)?));
            }
            Op::Slice(a, start) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.pad(g, start, &shape)?));
            }
            Op::Pad(a, start) => {
                let shape = self.shape(a).to_vec();
                out.push((a, self.slice(g, start, &shape)?));
            }
            Op::Bce(z, ref targets) => {
                // d/dz = (sigmoid(z) - y) / n
                let shape = self.shape(z).to_vec();
                let n = targets.len() as f64;
                let s = self.sigmoid(z);
                let y = self.constant(Tensor::from_parts(shape, targets.to_vec()));
                let d = self.sub(s, y)?;
                let d = self.scale(d, 1.0 / n);
                out.push((z, self.mul_scalar(d, g)?));
            }
            Op::CrossEntropy(z, ref labels) => {
                // d/dz = (softmax(z) - onehot) / n
                let shape = self.shape(z).to_vec();
                let c = shape[1];
                let mut onehot = vec![0.0; labels.len() * c];
                for (r, &y) in labels.iter().enumerate() {
                    onehot[r * c + y] = 1.0;
                }
                let s = self.softmax(z)?;
                let y = self.constant(Tensor::from_parts(shape, onehot));
                let d = self.sub(s, y)?;
                let d = self.scale(d, 1.0 / labels.len() as f64);
                out.push((z, self.mul_scalar(d, g)?));
            }
        }
        Ok(out)
    }

    /// Gradient of the recorded output, seeded with `seed`, flattened across
    /// all parameters in registration order.
    pub fn backward(&mut self, seed: &Tensor) -> Result<GradVector> {
        let output = self
            .output
            .ok_or_else(|| Error::State("backward called before forward".into()))?;
        let params = self.params.clone();
        let grads = self.grad_with_seed(output, seed, &params)?;
        let mut flat = Vec::new();
        for g in grads {
            flat.extend_from_slice(self.value(g).data());
        }
        GradVector::checked(flat)
    }

    /// Op name of a node, for diagnostics.
    pub fn op_name(&self, v: Var) -> &'static str {
        self.nodes[v.0].op.name()
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softmax_row(x: &[f64], out: &mut [f64]) {
    let mx = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for (o, &v) in out.iter_mut().zip(x) {
        *o = (v - mx).exp();
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}
