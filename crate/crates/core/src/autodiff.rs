//! A static computation graph with reverse-mode differentiation.
//!
//! Graphs are recorded once through [`GraphBuilder`], which checks shapes as
//! each node is added. Evaluation binds concrete tensors to the leaves and
//! returns a [`Forward`] holding every intermediate value; [`Forward::backward`]
//! then pulls a cotangent back to the requested leaves, visiting each node
//! once in reverse insertion order (insertion order is a topological order).

use crate::error::{Error, Result};
use crate::tensor::{dot, Tensor};

/// Handle to a node inside one [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf {
        name: String,
    },
    Add(NodeId, NodeId),
    /// `[m, n] + [n]`, the bias broadcast over rows.
    AddRow(NodeId, NodeId),
    Scale(NodeId, f64),
    MatMul(NodeId, NodeId),
    Tanh(NodeId),
    Relu(NodeId),
    SumSquares(NodeId),
    /// Concatenation of two rank-2 tensors along columns.
    Concat(NodeId, NodeId),
}

#[derive(Debug, Clone)]
struct Node {
    op: Op,
    shape: Vec<usize>,
}

/// Records a graph node by node.
#[derive(Debug, Default)]
pub struct GraphBuilder {
    nodes: Vec<Node>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op, shape: Vec<usize>) -> NodeId {
        self.nodes.push(Node { op, shape });
        NodeId(self.nodes.len() - 1)
    }

    fn shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    fn err(&self, kind: &str, detail: String) -> Error {
        Error::Shape(format!("{kind} node #{}: {detail}", self.nodes.len()))
    }

    /// A parameter or input placeholder with a fixed shape.
    pub fn leaf(&mut self, name: &str, shape: &[usize]) -> NodeId {
        self.push(
            Op::Leaf {
                name: name.to_string(),
            },
            shape.to_vec(),
        )
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        if self.shape(a) != self.shape(b) {
            return Err(self.err("add", format!("{:?} vs {:?}", self.shape(a), self.shape(b))));
        }
        let s = self.shape(a).to_vec();
        Ok(self.push(Op::Add(a, b), s))
    }

    pub fn add_row(&mut self, a: NodeId, bias: NodeId) -> Result<NodeId> {
        match (self.shape(a), self.shape(bias)) {
            ([_, n], [k]) if n == k => {
                let s = self.shape(a).to_vec();
                Ok(self.push(Op::AddRow(a, bias), s))
            }
            (sa, sb) => Err(self.err("add_row", format!("{sa:?} vs bias {sb:?}"))),
        }
    }

    pub fn scale(&mut self, a: NodeId, factor: f64) -> Result<NodeId> {
        if !factor.is_finite() {
            return Err(Error::NonFinite(format!(
                "scale node #{} factor",
                self.nodes.len()
            )));
        }
        let s = self.shape(a).to_vec();
        Ok(self.push(Op::Scale(a, factor), s))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        match (self.shape(a), self.shape(b)) {
            ([m, k], [k2, n]) if k == k2 => {
                let s = vec![*m, *n];
                Ok(self.push(Op::MatMul(a, b), s))
            }
            (sa, sb) => Err(self.err("matmul", format!("{sa:?} x {sb:?}"))),
        }
    }

    pub fn tanh(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a).to_vec();
        self.push(Op::Tanh(a), s)
    }

    pub fn relu(&mut self, a: NodeId) -> NodeId {
        let s = self.shape(a).to_vec();
        self.push(Op::Relu(a), s)
    }

    pub fn sum_squares(&mut self, a: NodeId) -> NodeId {
        self.push(Op::SumSquares(a), Vec::new())
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        match (self.shape(a), self.shape(b)) {
            ([m, p], [m2, q]) if m == m2 => {
                let s = vec![*m, p + q];
                Ok(self.push(Op::Concat(a, b), s))
            }
            (sa, sb) => Err(self.err("concat", format!("{sa:?} ++ {sb:?}"))),
        }
    }

    pub fn finish(self, output: NodeId) -> Graph {
        Graph {
            nodes: self.nodes,
            output,
        }
    }
}

/// An immutable recorded computation.
#[derive(Debug, Clone)]
pub struct Graph {
    nodes: Vec<Node>,
    output: NodeId,
}

/// Tensors bound to the leaves of a graph.
#[derive(Debug, Clone)]
pub struct Bindings<'a> {
    slots: Vec<Option<&'a Tensor>>,
}

impl<'a> Bindings<'a> {
    pub fn bind(&mut self, leaf: NodeId, value: &'a Tensor) -> &mut Self {
        self.slots[leaf.0] = Some(value);
        self
    }
}

impl Graph {
    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes[self.output.0].shape
    }

    pub fn node_shape(&self, id: NodeId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn bindings<'a>(&self) -> Bindings<'a> {
        Bindings {
            slots: vec![None; self.nodes.len()],
        }
    }

    pub fn leaves(&self) -> impl Iterator<Item = NodeId> + '_ {
        self.nodes
            .iter()
            .enumerate()
            .filter(|(_, n)| matches!(n.op, Op::Leaf { .. }))
            .map(|(i, _)| NodeId(i))
    }

    fn leaf_name(&self, id: NodeId) -> &str {
        match &self.nodes[id.0].op {
            Op::Leaf { name } => name,
            _ => "<op>",
        }
    }

    /// Evaluates every node given bound leaves.
    pub fn forward_eval<'g, 'a>(&'g self, bindings: &Bindings<'a>) -> Result<Forward<'g, 'a>> {
        let mut values: Vec<Option<Tensor>> = Vec::with_capacity(self.nodes.len());
        for (i, node) in self.nodes.iter().enumerate() {
            let computed = match &node.op {
                Op::Leaf { name } => {
                    let bound = bindings.slots[i].ok_or_else(|| {
                        Error::Invalid(format!("leaf '{name}' (node #{i}) is unbound"))
                    })?;
                    if bound.shape() != node.shape.as_slice() {
                        return Err(Error::Shape(format!(
                            "leaf '{name}' (node #{i}) expects {:?}, bound {:?}",
                            node.shape,
                            bound.shape()
                        )));
                    }
                    None
                }
                op => {
                    let get = |id: NodeId| -> &Tensor {
                        values[id.0]
                            .as_ref()
                            .or(bindings.slots[id.0])
                            .expect("inputs precede their consumers")
                    };
                    Some(eval_op(op, &node.shape, get))
                }
            };
            values.push(computed);
        }
        Ok(Forward {
            graph: self,
            bindings: bindings.clone(),
            values,
        })
    }

    /// Evaluates the graph and pulls `cotangent` back to the `wrt` leaves.
    pub fn vjp(
        &self,
        bindings: &Bindings<'_>,
        cotangent: &Tensor,
        wrt: &[NodeId],
    ) -> Result<(Tensor, Gradients)> {
        let fwd = self.forward_eval(bindings)?;
        let grads = fwd.backward(cotangent, wrt)?;
        Ok((fwd.output().clone(), grads))
    }
}

fn eval_op<'v>(op: &Op, shape: &[usize], get: impl Fn(NodeId) -> &'v Tensor) -> Tensor {
    match *op {
        Op::Leaf { .. } => unreachable!(),
        Op::Add(a, b) => {
            let (a, b) = (get(a), get(b));
            let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::AddRow(a, bias) => {
            let (a, bias) = (get(a), get(bias));
            let n = bias.len();
            let mut data = a.data().to_vec();
            for row in data.chunks_mut(n) {
                for (x, b) in row.iter_mut().zip(bias.data()) {
                    *x += b;
                }
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::Scale(a, f) => {
            let data = get(a).data().iter().map(|x| x * f).collect();
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::MatMul(a, b) => {
            let (a, b) = (get(a), get(b));
            let (m, k) = (a.shape()[0], a.shape()[1]);
            let n = b.shape()[1];
            let mut out = vec![0.0; m * n];
            gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
            Tensor::from_raw(shape.to_vec(), out)
        }
        Op::Tanh(a) => {
            let data = get(a).data().iter().map(|x| x.tanh()).collect();
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::Relu(a) => {
            let data = get(a).data().iter().map(|x| x.max(0.0)).collect();
            Tensor::from_raw(shape.to_vec(), data)
        }
        Op::SumSquares(a) => {
            let d = get(a).data();
            Tensor::from_raw(Vec::new(), vec![dot(d, d)])
        }
        Op::Concat(a, b) => {
            let (a, b) = (get(a), get(b));
            let (m, p, q) = (a.shape()[0], a.shape()[1], b.shape()[1]);
            let mut data = Vec::with_capacity(a.len() + b.len());
            for r in 0..m {
                data.extend_from_slice(&a.data()[r * p..(r + 1) * p]);
                data.extend_from_slice(&b.data()[r * q..(r + 1) * q]);
            }
            Tensor::from_raw(shape.to_vec(), data)
        }
    }
}

/// `c (+)= op(a) · op(b)` for row-major operands; `op` optionally transposes.
/// `m × k` and `k × n` are the shapes after transposition.
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_t: bool,
    b: &[f64],
    b_t: bool,
    c: &mut [f64],
    accumulate: bool,
) {
    assert_eq!(a.len(), m * k);
    assert_eq!(b.len(), k * n);
    assert_eq!(c.len(), m * n);
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        if !accumulate {
            c.fill(0.0);
        }
        return;
    }
    let (rsa, csa) = if a_t {
        (1, m as isize)
    } else {
        (k as isize, 1)
    };
    let (rsb, csb) = if b_t {
        (1, k as isize)
    } else {
        (n as isize, 1)
    };
    let beta = if accumulate { 1.0 } else { 0.0 };
    // SAFETY: the asserts above guarantee every strided access stays inside
    // the slices, and `c` does not alias `a` or `b` (distinct borrows).
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// All intermediate values of one evaluation.
#[derive(Debug)]
pub struct Forward<'g, 'a> {
    graph: &'g Graph,
    bindings: Bindings<'a>,
    values: Vec<Option<Tensor>>,
}

impl<'g, 'a> Forward<'g, 'a> {
    fn value(&self, id: NodeId) -> &Tensor {
        self.values[id.0]
            .as_ref()
            .or(self.bindings.slots[id.0])
            .expect("evaluated")
    }

    pub fn output(&self) -> &Tensor {
        self.value(self.graph.output)
    }

    /// Pulls `cotangent` (shaped like the output) back to the `wrt` leaves.
    pub fn backward(&self, cotangent: &Tensor, wrt: &[NodeId]) -> Result<Gradients> {
        let g = self.graph;
        if cotangent.shape() != g.output_shape() {
            return Err(Error::Shape(format!(
                "cotangent {:?} does not match output {:?}",
                cotangent.shape(),
                g.output_shape()
            )));
        }
        for &w in wrt {
            if !matches!(g.nodes.get(w.0).map(|n| &n.op), Some(Op::Leaf { .. })) {
                return Err(Error::Invalid(format!("node #{} is not a leaf", w.0)));
            }
        }

        let n_nodes = g.nodes.len();
        let mut needs = vec![false; n_nodes];
        for &w in wrt {
            needs[w.0] = true;
        }
        for (i, node) in g.nodes.iter().enumerate() {
            needs[i] |= match node.op {
                Op::Leaf { .. } => false,
                Op::Add(a, b) | Op::AddRow(a, b) | Op::MatMul(a, b) | Op::Concat(a, b) => {
                    needs[a.0] || needs[b.0]
                }
                Op::Scale(a, _) | Op::Tanh(a) | Op::Relu(a) | Op::SumSquares(a) => needs[a.0],
            };
        }

        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n_nodes];
        if needs[g.output.0] {
            grads[g.output.0] = Some(cotangent.data().to_vec());
        }

        fn accumulate(slot: &mut Option<Vec<f64>>, contrib: Vec<f64>) {
            match slot {
                Some(acc) => acc.iter_mut().zip(&contrib).for_each(|(x, c)| *x += c),
                None => *slot = Some(contrib),
            }
        }

        for i in (0..n_nodes).rev() {
            let Some(upstream) = grads[i].take() else {
                continue;
            };
            let node = &g.nodes[i];
            match node.op {
                Op::Leaf { .. } => {
                    grads[i] = Some(upstream);
                }
                Op::Add(a, b) => {
                    if needs[a.0] {
                        accumulate(&mut grads[a.0], upstream.clone());
                    }
                    if needs[b.0] {
                        accumulate(&mut grads[b.0], upstream);
                    }
                }
                Op::AddRow(a, bias) => {
                    if needs[bias.0] {
                        let n = g.nodes[bias.0].shape[0];
                        let mut gb = vec![0.0; n];
                        for row in upstream.chunks(n) {
                            gb.iter_mut().zip(row).for_each(|(x, r)| *x += r);
                        }
                        accumulate(&mut grads[bias.0], gb);
                    }
                    if needs[a.0] {
                        accumulate(&mut grads[a.0], upstream);
                    }
                }
                Op::Scale(a, f) => {
                    if needs[a.0] {
                        accumulate(&mut grads[a.0], upstream.iter().map(|u| u * f).collect());
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(a), self.value(b));
                    let (m, k) = (ta.shape()[0], ta.shape()[1]);
                    let n = tb.shape()[1];
                    if needs[a.0] {
                        // dA = dC · Bᵀ
                        let mut ga = vec![0.0; m * k];
                        gemm(m, n, k, &upstream, false, tb.data(), true, &mut ga, false);
                        accumulate(&mut grads[a.0], ga);
                    }
                    if needs[b.0] {
                        // dB = Aᵀ · dC
                        let mut gb = vec![0.0; k * n];
                        gemm(k, m, n, ta.data(), true, &upstream, false, &mut gb, false);
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::Tanh(a) => {
                    if needs[a.0] {
                        let y = self.value(NodeId(i)).data();
                        let ga = upstream
                            .iter()
                            .zip(y)
                            .map(|(u, y)| u * (1.0 - y * y))
                            .collect();
                        accumulate(&mut grads[a.0], ga);
                    }
                }
                Op::Relu(a) => {
                    if needs[a.0] {
                        let x = self.value(a).data();
                        let ga = upstream
                            .iter()
                            .zip(x)
                            .map(|(u, x)| if *x > 0.0 { *u } else { 0.0 })
                            .collect();
                        accumulate(&mut grads[a.0], ga);
                    }
                }
                Op::SumSquares(a) => {
                    if needs[a.0] {
                        let u = upstream[0];
                        let ga = self.value(a).data().iter().map(|x| 2.0 * u * x).collect();
                        accumulate(&mut grads[a.0], ga);
                    }
                }
                Op::Concat(a, b) => {
                    let p = g.nodes[a.0].shape[1];
                    let q = g.nodes[b.0].shape[1];
                    let w = p + q;
                    if needs[a.0] {
                        let ga = upstream
                            .chunks(w)
                            .flat_map(|r| r[..p].iter().copied())
                            .collect();
                        accumulate(&mut grads[a.0], ga);
                    }
                    if needs[b.0] {
                        let gb = upstream
                            .chunks(w)
                            .flat_map(|r| r[p..].iter().copied())
                            .collect();
                        accumulate(&mut grads[b.0], gb);
                    }
                }
            }
        }

        let entries = wrt
            .iter()
            .map(|&w| {
                let shape = g.nodes[w.0].shape.clone();
                let data = grads[w.0]
                    .clone()
                    .unwrap_or_else(|| vec![0.0; shape.iter().product()]);
                (w, Tensor::from_raw(shape, data))
            })
            .collect();
        Ok(Gradients { entries })
    }
}

/// Gradients keyed by leaf.
#[derive(Debug, Clone)]
pub struct Gradients {
    entries: Vec<(NodeId, Tensor)>,
}

impl Gradients {
    pub fn get(&self, leaf: NodeId) -> Option<&Tensor> {
        self.entries
            .iter()
            .find(|(id, _)| *id == leaf)
            .map(|(_, t)| t)
    }

    pub fn take(&mut self, leaf: NodeId) -> Option<Tensor> {
        let pos = self.entries.iter().position(|(id, _)| *id == leaf)?;
        Some(self.entries.swap_remove(pos).1)
    }
}

/// Largest relative disagreement between the reverse-mode gradient of
/// `⟨1, output⟩` and central finite differences, over every coordinate of
/// the `wrt` leaves. Denominators are floored at `1e-4` so that coordinates
/// with a vanishing gradient are compared absolutely.
pub fn finite_difference_check(
    graph: &Graph,
    bindings: &Bindings<'_>,
    wrt: &[NodeId],
    step: f64,
) -> Result<f64> {
    if !(step > 0.0) {
        return Err(Error::Invalid(format!(
            "finite-difference step must be > 0, got {step}"
        )));
    }
    let ones = Tensor::from_raw(
        graph.output_shape().to_vec(),
        vec![1.0; graph.output_shape().iter().product()],
    );
    let (_, grads) = graph.vjp(bindings, &ones, wrt)?;
    let objective = |b: &Bindings<'_>| -> Result<f64> {
        Ok(graph.forward_eval(b)?.output().data().iter().sum())
    };

    let mut worst = 0.0f64;
    for &leaf in wrt {
        let base = bindings.slots[leaf.0].ok_or_else(|| {
            Error::Invalid(format!("leaf '{}' is unbound", graph.leaf_name(leaf)))
        })?;
        let analytic = grads.get(leaf).expect("requested leaf");
        for j in 0..base.len() {
            let mut plus = base.clone();
            plus.data_mut()[j] += step;
            let mut minus = base.clone();
            minus.data_mut()[j] -= step;
            let mut bp = bindings.clone();
            bp.bind(leaf, &plus);
            let fp = objective(&bp)?;
            let mut bm = bindings.clone();
            bm.bind(leaf, &minus);
            let fm = objective(&bm)?;
            let numeric = (fp - fm) / (2.0 * step);
            let a = analytic.data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-4);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    Ok(worst)
}
