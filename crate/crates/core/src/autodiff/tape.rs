use std::cell::RefCell;
use std::collections::BTreeMap;
use std::rc::Rc;

use super::tensor::{gemm, Tensor};
use super::AutodiffError;

/// Geometry of a 3×3×3 "same" convolution over `[N, C, D, H, W]` inputs.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct ConvGeom {
    batch: usize,
    cin: usize,
    cout: usize,
    d: usize,
    h: usize,
    w: usize,
}

enum Op {
    Leaf,
    MatMul(usize, usize),
    Transpose(usize),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Scale(usize, f64),
    AddBias(usize, usize),
    ConcatCols(Vec<usize>),
    GatherRows(usize, Rc<[usize]>),
    /// `argmax[r * d + c]` is the input row that won output element `(r, c)`.
    SegmentMax(usize, Vec<usize>),
    Relu(usize),
    RowSoftmax(usize, f64),
    Sum(usize),
    Mean(usize),
    SquaredNorm(usize),
    SumRows(usize),
    RotateRows(usize, Rc<[[f64; 9]]>),
    Reshape(usize),
    Conv3d {
        input: usize,
        weight: usize,
        bias: usize,
        geom: ConvGeom,
    },
    /// Flat input index chosen for each output element.
    PoolInPlane(usize, Vec<usize>),
}

struct Node {
    value: Rc<Tensor>,
    op: Op,
    requires_grad: bool,
    name: Option<String>,
}

/// Append-only record of a forward computation.
///
/// Nodes reference only earlier nodes, so the graph is acyclic by
/// construction and `backward` is a single reverse sweep.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    tape: &'t Tape,
    id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Var({})", self.id)
    }
}

/// Gradients from one backward sweep.
pub struct Gradients {
    by_node: Vec<Option<Tensor>>,
    named: BTreeMap<String, Tensor>,
}

impl Gradients {
    pub fn get(&self, var: Var<'_>) -> Option<&Tensor> {
        self.by_node.get(var.id).and_then(|g| g.as_ref())
    }

    /// Gradients of named parameters; unreachable ones are zero.
    pub fn named(&self) -> &BTreeMap<String, Tensor> {
        &self.named
    }

    pub fn into_named(self) -> BTreeMap<String, Tensor> {
        self.named
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn push(&self, value: Tensor, op: Op, requires_grad: bool) -> Var<'_> {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node {
            value: Rc::new(value),
            op,
            requires_grad,
            name: None,
        });
        Var {
            tape: self,
            id: nodes.len() - 1,
        }
    }

    /// Named trainable leaf.
    pub fn param(&self, name: &str, value: Tensor) -> Var<'_> {
        let v = self.push(value, Op::Leaf, true);
        self.nodes.borrow_mut()[v.id].name = Some(name.to_owned());
        v
    }

    /// Unnamed leaf that receives a gradient.
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, true)
    }

    /// Leaf excluded from differentiation.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        self.push(value, Op::Leaf, false)
    }

    fn value_of(&self, id: usize) -> Rc<Tensor> {
        self.nodes.borrow()[id].value.clone()
    }

    fn needs(&self, id: usize) -> bool {
        self.nodes.borrow()[id].requires_grad
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var<'_>) -> Result<Gradients, AutodiffError> {
        let nodes = self.nodes.borrow();
        let loss_value = &nodes[loss.id].value;
        if loss_value.len() != 1 {
            return Err(AutodiffError::NonScalarLoss(loss_value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..nodes.len()).map(|_| None).collect();
        if nodes[loss.id].requires_grad {
            grads[loss.id] = Some(Tensor::from_parts_unchecked(
                loss_value.shape().to_vec(),
                vec![1.0],
            ));
        }
        for id in (0..=loss.id).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &nodes[id];
            backprop_node(&nodes, node, &g, &mut grads);
            grads[id] = Some(g);
        }
        let mut named = BTreeMap::new();
        for (id, node) in nodes.iter().enumerate() {
            if let Some(name) = &node.name {
                let g = grads[id]
                    .clone()
                    .unwrap_or_else(|| Tensor::zeros(node.value.shape()));
                named.insert(name.clone(), g);
            }
        }
        Ok(Gradients {
            by_node: grads,
            named,
        })
    }
}

fn accumulate(grads: &mut [Option<Tensor>], id: usize, contribution: Tensor) {
    match &mut grads[id] {
        Some(g) => {
            for (a, b) in g.data_mut().iter_mut().zip(contribution.data()) {
                *a += b;
            }
        }
        slot @ None => *slot = Some(contribution),
    }
}

fn accumulate_with(
    grads: &mut [Option<Tensor>],
    id: usize,
    shape: &[usize],
    f: impl FnOnce(&mut [f64]),
) {
    let slot = &mut grads[id];
    if slot.is_none() {
        *slot = Some(Tensor::zeros(shape));
    }
    f(slot.as_mut().unwrap().data_mut());
}

fn backprop_node(nodes: &[Node], node: &Node, g: &Tensor, grads: &mut [Option<Tensor>]) {
    let needs = |id: usize| nodes[id].requires_grad;
    let val = |id: usize| &nodes[id].value;
    match &node.op {
        Op::Leaf => {}
        Op::MatMul(a, b) => {
            let (av, bv) = (val(*a), val(*b));
            let (m, k, n) = (av.rows(), av.cols(), bv.cols());
            if needs(*a) {
                accumulate_with(grads, *a, av.shape(), |ga| {
                    gemm(m, n, k, g.data(), false, bv.data(), true, ga, true)
                });
            }
            if needs(*b) {
                accumulate_with(grads, *b, bv.shape(), |gb| {
                    gemm(k, m, n, av.data(), true, g.data(), false, gb, true)
                });
            }
        }
        Op::Transpose(a) => {
            if needs(*a) {
                accumulate(grads, *a, g.transpose());
            }
        }
        Op::Add(a, b) => {
            for &x in [a, b].iter() {
                if needs(*x) {
                    accumulate(grads, *x, g.clone());
                }
            }
        }
        Op::Sub(a, b) => {
            if needs(*a) {
                accumulate(grads, *a, g.clone());
            }
            if needs(*b) {
                accumulate_with(grads, *b, g.shape(), |gb| {
                    for (x, y) in gb.iter_mut().zip(g.data()) {
                        *x -= y;
                    }
                });
            }
        }
        Op::Mul(a, b) => {
            let (av, bv) = (val(*a).clone(), val(*b).clone());
            if needs(*a) {
                accumulate_with(grads, *a, av.shape(), |ga| {
                    for ((x, gi), bi) in ga.iter_mut().zip(g.data()).zip(bv.data()) {
                        *x += gi * bi;
                    }
                });
            }
            if needs(*b) {
                accumulate_with(grads, *b, bv.shape(), |gb| {
                    for ((x, gi), ai) in gb.iter_mut().zip(g.data()).zip(av.data()) {
                        *x += gi * ai;
                    }
                });
            }
        }
        Op::Scale(a, s) => {
            if needs(*a) {
                let s = *s;
                accumulate_with(grads, *a, g.shape(), |ga| {
                    for (x, gi) in ga.iter_mut().zip(g.data()) {
                        *x += gi * s;
                    }
                });
            }
        }
        Op::AddBias(x, b) => {
            if needs(*x) {
                accumulate(grads, *x, g.clone());
            }
            if needs(*b) {
                let d = g.cols();
                accumulate_with(grads, *b, val(*b).shape(), |gb| {
                    for row in g.data().chunks_exact(d) {
                        for (x, gi) in gb.iter_mut().zip(row) {
                            *x += gi;
                        }
                    }
                });
            }
        }
        Op::ConcatCols(parts) => {
            let total = g.cols();
            let rows = g.rows();
            let mut offset = 0;
            for &p in parts {
                let width = val(p).cols();
                if needs(p) {
                    accumulate_with(grads, p, val(p).shape(), |gp| {
                        for r in 0..rows {
                            let src = &g.data()[r * total + offset..r * total + offset + width];
                            for (x, y) in gp[r * width..(r + 1) * width].iter_mut().zip(src) {
                                *x += y;
                            }
                        }
                    });
                }
                offset += width;
            }
        }
        Op::GatherRows(a, idx) => {
            if needs(*a) {
                let d = g.cols();
                accumulate_with(grads, *a, val(*a).shape(), |ga| {
                    for (r, &src) in idx.iter().enumerate() {
                        let from = &g.data()[r * d..(r + 1) * d];
                        for (x, y) in ga[src * d..(src + 1) * d].iter_mut().zip(from) {
                            *x += y;
                        }
                    }
                });
            }
        }
        Op::SegmentMax(a, argmax) => {
            if needs(*a) {
                let d = g.cols();
                accumulate_with(grads, *a, val(*a).shape(), |ga| {
                    for (flat, &src_row) in argmax.iter().enumerate() {
                        let c = flat % d;
                        ga[src_row * d + c] += g.data()[flat];
                    }
                });
            }
        }
        Op::Relu(a) => {
            if needs(*a) {
                let av = val(*a).clone();
                accumulate_with(grads, *a, av.shape(), |ga| {
                    for ((x, gi), ai) in ga.iter_mut().zip(g.data()).zip(av.data()) {
                        if *ai > 0.0 {
                            *x += gi;
                        }
                    }
                });
            }
        }
        Op::RowSoftmax(a, temperature) => {
            if needs(*a) {
                let y = node.value.clone();
                let d = y.cols();
                let inv_t = 1.0 / temperature;
                accumulate_with(grads, *a, y.shape(), |ga| {
                    for ((gr, yr), outr) in g
                        .data()
                        .chunks_exact(d)
                        .zip(y.data().chunks_exact(d))
                        .zip(ga.chunks_exact_mut(d))
                    {
                        let dot: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                        for ((o, gi), yi) in outr.iter_mut().zip(gr).zip(yr) {
                            *o += inv_t * yi * (gi - dot);
                        }
                    }
                });
            }
        }
        Op::Sum(a) | Op::Mean(a) => {
            if needs(*a) {
                let n = val(*a).len();
                let scale = if matches!(node.op, Op::Mean(_)) {
                    1.0 / n as f64
                } else {
                    1.0
                };
                let gv = g.item() * scale;
                accumulate_with(grads, *a, val(*a).shape(), |ga| {
                    ga.iter_mut().for_each(|x| *x += gv);
                });
            }
        }
        Op::SquaredNorm(a) => {
            if needs(*a) {
                let av = val(*a).clone();
                let gv = 2.0 * g.item();
                accumulate_with(grads, *a, av.shape(), |ga| {
                    for (x, ai) in ga.iter_mut().zip(av.data()) {
                        *x += gv * ai;
                    }
                });
            }
        }
        Op::SumRows(a) => {
            if needs(*a) {
                let d = val(*a).cols();
                accumulate_with(grads, *a, val(*a).shape(), |ga| {
                    for (row, gi) in ga.chunks_exact_mut(d).zip(g.data()) {
                        row.iter_mut().for_each(|x| *x += gi);
                    }
                });
            }
        }
        Op::RotateRows(a, mats) => {
            if needs(*a) {
                accumulate_with(grads, *a, val(*a).shape(), |ga| {
                    for ((out, gi), r) in ga
                        .chunks_exact_mut(3)
                        .zip(g.data().chunks_exact(3))
                        .zip(mats.iter())
                    {
                        // y = R x  =>  dx = Rᵀ dy
                        for c in 0..3 {
                            out[c] += r[c] * gi[0] + r[3 + c] * gi[1] + r[6 + c] * gi[2];
                        }
                    }
                });
            }
        }
        Op::Reshape(a) => {
            if needs(*a) {
                let shape = val(*a).shape().to_vec();
                accumulate(
                    grads,
                    *a,
                    Tensor::from_parts_unchecked(shape, g.data().to_vec()),
                );
            }
        }
        Op::Conv3d {
            input,
            weight,
            bias,
            geom,
        } => conv3d_backward(nodes, *input, *weight, *bias, *geom, g, grads),
        Op::PoolInPlane(a, argmax) => {
            if needs(*a) {
                accumulate_with(grads, *a, val(*a).shape(), |ga| {
                    for (gi, &src) in g.data().iter().zip(argmax) {
                        ga[src] += gi;
                    }
                });
            }
        }
    }
}

fn shape_err(msg: String) -> AutodiffError {
    AutodiffError::ShapeMismatch(msg)
}

impl<'t> Var<'t> {
    pub fn id(&self) -> usize {
        self.id
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }

    pub fn value(&self) -> Rc<Tensor> {
        self.tape.value_of(self.id)
    }

    pub fn shape(&self) -> Vec<usize> {
        self.value().shape().to_vec()
    }

    fn requires_grad(&self) -> bool {
        self.tape.needs(self.id)
    }

    fn same_tape(&self, other: &Var<'_>) -> Result<(), AutodiffError> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(shape_err("operands live on different tapes".into()))
        }
    }

    pub fn matmul(self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.same_tape(&other)?;
        let out = self.value().matmul(&other.value())?;
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, Op::MatMul(self.id, other.id), rg))
    }

    pub fn transpose(self) -> Result<Var<'t>, AutodiffError> {
        let v = self.value();
        if v.shape().len() != 2 {
            return Err(shape_err(format!(
                "transpose needs a matrix, got {:?}",
                v.shape()
            )));
        }
        Ok(self
            .tape
            .push(v.transpose(), Op::Transpose(self.id), self.requires_grad()))
    }

    fn elementwise(
        self,
        other: Var<'t>,
        what: &str,
        f: impl Fn(f64, f64) -> f64,
        op: Op,
    ) -> Result<Var<'t>, AutodiffError> {
        self.same_tape(&other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(shape_err(format!(
                "{what} {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let data = a
            .data()
            .iter()
            .zip(b.data())
            .map(|(x, y)| f(*x, *y))
            .collect();
        let out = Tensor::from_parts_unchecked(a.shape().to_vec(), data);
        let rg = self.requires_grad() || other.requires_grad();
        Ok(self.tape.push(out, op, rg))
    }

    pub fn add(self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.elementwise(other, "add", |x, y| x + y, Op::Add(self.id, other.id))
    }

    pub fn sub(self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.elementwise(other, "sub", |x, y| x - y, Op::Sub(self.id, other.id))
    }

    /// Elementwise product.
    pub fn mul(self, other: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.elementwise(other, "mul", |x, y| x * y, Op::Mul(self.id, other.id))
    }

    pub fn scale(self, s: f64) -> Var<'t> {
        let v = self.value();
        let data = v.data().iter().map(|x| x * s).collect();
        let out = Tensor::from_parts_unchecked(v.shape().to_vec(), data);
        self.tape
            .push(out, Op::Scale(self.id, s), self.requires_grad())
    }

    /// Adds a length-`d` bias to every row of an `n × d` matrix.
    pub fn add_bias(self, bias: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.same_tape(&bias)?;
        let (x, b) = (self.value(), bias.value());
        let d = x.cols();
        if b.len() != d {
            return Err(shape_err(format!("bias of {} for {} columns", b.len(), d)));
        }
        let mut data = x.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            for (v, bi) in row.iter_mut().zip(b.data()) {
                *v += bi;
            }
        }
        let out = Tensor::from_parts_unchecked(x.shape().to_vec(), data);
        let rg = self.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(out, Op::AddBias(self.id, bias.id), rg))
    }

    pub fn relu(self) -> Var<'t> {
        let v = self.value();
        let data = v.data().iter().map(|x| x.max(0.0)).collect();
        let out = Tensor::from_parts_unchecked(v.shape().to_vec(), data);
        self.tape.push(out, Op::Relu(self.id), self.requires_grad())
    }

    pub fn gather_rows(self, indices: Rc<[usize]>) -> Result<Var<'t>, AutodiffError> {
        let v = self.value();
        let (n, d) = (v.rows(), v.cols());
        if indices.is_empty() {
            return Err(shape_err("gather_rows with no indices".into()));
        }
        let mut data = Vec::with_capacity(indices.len() * d);
        for &i in indices.iter() {
            if i >= n {
                return Err(shape_err(format!("gather index {i} out of {n} rows")));
            }
            data.extend_from_slice(v.row(i));
        }
        let out = Tensor::from_parts_unchecked(vec![indices.len(), d], data);
        Ok(self
            .tape
            .push(out, Op::GatherRows(self.id, indices), self.requires_grad()))
    }

    /// Column-wise max over consecutive row segments given as CSR offsets
    /// (`offsets.len()` = segments + 1). Ties go to the earliest row.
    pub fn segment_max(self, offsets: &[usize]) -> Result<Var<'t>, AutodiffError> {
        let v = self.value();
        let (n, d) = (v.rows(), v.cols());
        if offsets.len() < 2 || *offsets.last().unwrap() != n || offsets[0] != 0 {
            return Err(shape_err(format!("segment offsets do not cover {n} rows")));
        }
        let segs = offsets.len() - 1;
        let mut data = vec![0.0; segs * d];
        let mut argmax = vec![0usize; segs * d];
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if hi <= lo {
                return Err(AutodiffError::EmptySegment(s));
            }
            let out = &mut data[s * d..(s + 1) * d];
            let arg = &mut argmax[s * d..(s + 1) * d];
            out.copy_from_slice(v.row(lo));
            arg.iter_mut().for_each(|a| *a = lo);
            for r in lo + 1..hi {
                for (c, &x) in v.row(r).iter().enumerate() {
                    if x > out[c] {
                        out[c] = x;
                        arg[c] = r;
                    }
                }
            }
        }
        let out = Tensor::from_parts_unchecked(vec![segs, d], data);
        Ok(self
            .tape
            .push(out, Op::SegmentMax(self.id, argmax), self.requires_grad()))
    }

    /// Row-wise softmax of `x / temperature`.
    pub fn row_softmax(self, temperature: f64) -> Result<Var<'t>, AutodiffError> {
        if !(temperature > 0.0) {
            return Err(shape_err(format!(
                "softmax temperature {temperature} must be positive"
            )));
        }
        let v = self.value();
        let d = v.cols();
        let mut data = v.data().to_vec();
        for row in data.chunks_exact_mut(d) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = ((*x - max) / temperature).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let out = Tensor::from_parts_unchecked(v.shape().to_vec(), data);
        Ok(self.tape.push(
            out,
            Op::RowSoftmax(self.id, temperature),
            self.requires_grad(),
        ))
    }

    pub fn sum(self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.tape
            .push(Tensor::scalar(s), Op::Sum(self.id), self.requires_grad())
    }

    pub fn mean(self) -> Var<'t> {
        let v = self.value();
        let s = v.data().iter().sum::<f64>() / v.len() as f64;
        self.tape
            .push(Tensor::scalar(s), Op::Mean(self.id), self.requires_grad())
    }

    pub fn squared_norm(self) -> Var<'t> {
        let s = self.value().data().iter().map(|x| x * x).sum();
        self.tape.push(
            Tensor::scalar(s),
            Op::SquaredNorm(self.id),
            self.requires_grad(),
        )
    }

    /// Sum of each row, as an `n × 1` column.
    pub fn sum_rows(self) -> Var<'t> {
        let v = self.value();
        let d = v.cols();
        let data: Vec<f64> = v.data().chunks_exact(d).map(|r| r.iter().sum()).collect();
        let out = Tensor::from_parts_unchecked(vec![data.len(), 1], data);
        self.tape
            .push(out, Op::SumRows(self.id), self.requires_grad())
    }

    pub fn concat_cols(parts: &[Var<'t>]) -> Result<Var<'t>, AutodiffError> {
        let first = parts
            .first()
            .ok_or_else(|| shape_err("concat of nothing".into()))?;
        let values: Vec<Rc<Tensor>> = parts.iter().map(|p| p.value()).collect();
        let rows = values[0].rows();
        for (p, v) in parts.iter().zip(&values) {
            first.same_tape(p)?;
            if v.rows() != rows {
                return Err(shape_err(format!("concat rows {} vs {}", v.rows(), rows)));
            }
        }
        let total: usize = values.iter().map(|v| v.cols()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for v in &values {
                data.extend_from_slice(v.row(r));
            }
        }
        let out = Tensor::from_parts_unchecked(vec![rows, total], data);
        let rg = parts.iter().any(|p| p.requires_grad());
        Ok(first.tape.push(
            out,
            Op::ConcatCols(parts.iter().map(|p| p.id).collect()),
            rg,
        ))
    }

    /// Multiplies each row `x_e` (of an `E × 3` matrix) by its own constant
    /// 3×3 matrix, row-major.
    pub fn rotate_rows(self, mats: Rc<[[f64; 9]]>) -> Result<Var<'t>, AutodiffError> {
        let v = self.value();
        if v.cols() != 3 || v.rows() != mats.len() {
            return Err(shape_err(format!(
                "rotate_rows {:?} with {} matrices",
                v.shape(),
                mats.len()
            )));
        }
        let mut data = Vec::with_capacity(v.len());
        for (x, r) in v.data().chunks_exact(3).zip(mats.iter()) {
            for c in 0..3 {
                data.push(r[3 * c] * x[0] + r[3 * c + 1] * x[1] + r[3 * c + 2] * x[2]);
            }
        }
        let out = Tensor::from_parts_unchecked(v.shape().to_vec(), data);
        Ok(self
            .tape
            .push(out, Op::RotateRows(self.id, mats), self.requires_grad()))
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Var<'t>, AutodiffError> {
        let v = (*self.value()).clone().reshaped(shape)?;
        Ok(self
            .tape
            .push(v, Op::Reshape(self.id), self.requires_grad()))
    }

    /// 3×3×3 convolution with zero padding 1 and stride 1.
    /// Input `[N, Cin, D, H, W]`, weight `[Cout, Cin, 3, 3, 3]`, bias `[Cout]`.
    pub fn conv3d(self, weight: Var<'t>, bias: Var<'t>) -> Result<Var<'t>, AutodiffError> {
        self.same_tape(&weight)?;
        self.same_tape(&bias)?;
        let (x, w, b) = (self.value(), weight.value(), bias.value());
        let xs = x.shape();
        let ws = w.shape();
        if xs.len() != 5
            || ws.len() != 5
            || ws[1] != xs[1]
            || ws[2..] != [3, 3, 3]
            || b.len() != ws[0]
        {
            return Err(shape_err(format!(
                "conv3d input {xs:?} weight {ws:?} bias {:?}",
                b.shape()
            )));
        }
        let geom = ConvGeom {
            batch: xs[0],
            cin: xs[1],
            cout: ws[0],
            d: xs[2],
            h: xs[3],
            w: xs[4],
        };
        let vox = geom.d * geom.h * geom.w;
        let mut out = vec![0.0; geom.batch * geom.cout * vox];
        let mut cols = vec![0.0; geom.cin * 27 * vox];
        for n in 0..geom.batch {
            let input = &x.data()[n * geom.cin * vox..(n + 1) * geom.cin * vox];
            im2col(input, geom, &mut cols);
            let dst = &mut out[n * geom.cout * vox..(n + 1) * geom.cout * vox];
            for (co, chunk) in dst.chunks_exact_mut(vox).enumerate() {
                chunk.iter_mut().for_each(|v| *v = b.data()[co]);
            }
            gemm(
                geom.cout,
                geom.cin * 27,
                vox,
                w.data(),
                false,
                &cols,
                false,
                dst,
                true,
            );
        }
        let out =
            Tensor::from_parts_unchecked(vec![geom.batch, geom.cout, geom.d, geom.h, geom.w], out);
        let rg = self.requires_grad() || weight.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(
            out,
            Op::Conv3d {
                input: self.id,
                weight: weight.id,
                bias: bias.id,
                geom,
            },
            rg,
        ))
    }

    /// 2×2 max pooling over the last two axes of `[N, C, D, H, W]`,
    /// keeping partial windows at odd edges.
    pub fn pool_in_plane(self) -> Result<Var<'t>, AutodiffError> {
        let x = self.value();
        let s = x.shape();
        if s.len() != 5 {
            return Err(shape_err(format!("pool_in_plane needs 5 axes, got {s:?}")));
        }
        let (nc, d, h, w) = (s[0] * s[1], s[2], s[3], s[4]);
        let (ho, wo) = (h.div_ceil(2), w.div_ceil(2));
        let mut out = Vec::with_capacity(nc * d * ho * wo);
        let mut argmax = Vec::with_capacity(nc * d * ho * wo);
        for plane in 0..nc * d {
            let base = plane * h * w;
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut best = (f64::NEG_INFINITY, 0);
                    for dy in 0..2 {
                        for dx in 0..2 {
                            let (yy, xx) = (2 * oy + dy, 2 * ox + dx);
                            if yy < h && xx < w {
                                let idx = base + yy * w + xx;
                                if x.data()[idx] > best.0 {
                                    best = (x.data()[idx], idx);
                                }
                            }
                        }
                    }
                    out.push(best.0);
                    argmax.push(best.1);
                }
            }
        }
        let out = Tensor::from_parts_unchecked(vec![s[0], s[1], d, ho, wo], out);
        Ok(self
            .tape
            .push(out, Op::PoolInPlane(self.id, argmax), self.requires_grad()))
    }
}

/// Unfolds one sample `[Cin, D, H, W]` into `[Cin·27, D·H·W]`.
fn im2col(input: &[f64], g: ConvGeom, cols: &mut [f64]) {
    let vox = g.d * g.h * g.w;
    for ci in 0..g.cin {
        let src = &input[ci * vox..(ci + 1) * vox];
        for kz in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = ((ci * 3 + kz) * 3 + ky) * 3 + kx;
                    let dst = &mut cols[row * vox..(row + 1) * vox];
                    let (x0, x1) = valid_columns(kx, g.w);
                    for z in 0..g.d {
                        let sz = z as isize + kz as isize - 1;
                        for y in 0..g.h {
                            let sy = y as isize + ky as isize - 1;
                            let out_row = &mut dst[(z * g.h + y) * g.w..(z * g.h + y + 1) * g.w];
                            if sz < 0
                                || sz >= g.d as isize
                                || sy < 0
                                || sy >= g.h as isize
                                || x0 >= x1
                            {
                                out_row.fill(0.0);
                                continue;
                            }
                            let in_base = (sz as usize * g.h + sy as usize) * g.w;
                            out_row[..x0].fill(0.0);
                            out_row[x0..x1].copy_from_slice(
                                &src[in_base + x0 + kx - 1..in_base + x1 + kx - 1],
                            );
                            out_row[x1..].fill(0.0);
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `x0..x1` whose input column `x + kx − 1` lies inside a
/// row of width `w`.
fn valid_columns(kx: usize, w: usize) -> (usize, usize) {
    let x0 = if kx == 0 { 1 } else { 0 };
    let x1 = if kx == 2 { w.saturating_sub(1) } else { w };
    (x0.min(x1), x1)
}

/// Adjoint of [`im2col`]: folds `[Cin·27, D·H·W]` back, summing overlaps.
fn col2im(cols: &[f64], g: ConvGeom, out: &mut [f64]) {
    let vox = g.d * g.h * g.w;
    for ci in 0..g.cin {
        let dst = &mut out[ci * vox..(ci + 1) * vox];
        for kz in 0..3 {
            for ky in 0..3 {
                for kx in 0..3 {
                    let row = ((ci * 3 + kz) * 3 + ky) * 3 + kx;
                    let src = &cols[row * vox..(row + 1) * vox];
                    for z in 0..g.d {
                        let sz = z as isize + kz as isize - 1;
                        if sz < 0 || sz >= g.d as isize {
                            continue;
                        }
                        for y in 0..g.h {
                            let sy = y as isize + ky as isize - 1;
                            if sy < 0 || sy >= g.h as isize {
                                continue;
                            }
                            let col_base = (z * g.h + y) * g.w;
                            let in_base = (sz as usize * g.h + sy as usize) * g.w;
                            let (x0, x1) = valid_columns(kx, g.w);
                            let target = &mut dst[in_base + x0 + kx - 1..in_base + x1 + kx - 1];
                            for (t, c) in target.iter_mut().zip(&src[col_base + x0..col_base + x1])
                            {
                                *t += c;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn conv3d_backward(
    nodes: &[Node],
    input: usize,
    weight: usize,
    bias: usize,
    geom: ConvGeom,
    g: &Tensor,
    grads: &mut [Option<Tensor>],
) {
    let x = nodes[input].value.clone();
    let w = nodes[weight].value.clone();
    let vox = geom.d * geom.h * geom.w;
    let k = geom.cin * 27;
    let mut cols = vec![0.0; k * vox];
    let mut dcols = vec![0.0; k * vox];
    let need_x = nodes[input].requires_grad;
    let need_w = nodes[weight].requires_grad;
    if nodes[bias].requires_grad {
        accumulate_with(grads, bias, &[geom.cout], |gb| {
            for n in 0..geom.batch {
                for co in 0..geom.cout {
                    let base = (n * geom.cout + co) * vox;
                    gb[co] += g.data()[base..base + vox].iter().sum::<f64>();
                }
            }
        });
    }
    for n in 0..geom.batch {
        let gout = &g.data()[n * geom.cout * vox..(n + 1) * geom.cout * vox];
        if need_w {
            im2col(
                &x.data()[n * geom.cin * vox..(n + 1) * geom.cin * vox],
                geom,
                &mut cols,
            );
            accumulate_with(grads, weight, w.shape(), |gw| {
                gemm(geom.cout, vox, k, gout, false, &cols, true, gw, true)
            });
        }
        if need_x {
            gemm(
                k,
                geom.cout,
                vox,
                w.data(),
                true,
                gout,
                false,
                &mut dcols,
                false,
            );
            accumulate_with(grads, input, x.shape(), |gx| {
                col2im(
                    &dcols,
                    geom,
                    &mut gx[n * geom.cin * vox..(n + 1) * geom.cin * vox],
                )
            });
        }
    }
}
