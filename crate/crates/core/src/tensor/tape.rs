use super::{Scalar, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op<T> {
    Leaf,
    MatMul {
        a: NodeId,
        b: NodeId,
        ta: bool,
        tb: bool,
    },
    Linear {
        x: NodeId,
        w: NodeId,
        b: Option<NodeId>,
    },
    Add(NodeId, NodeId),
    AddRow {
        x: NodeId,
        row: NodeId,
    },
    Relu(NodeId),
    EluPlusOne(NodeId),
    LayerNorm {
        x: NodeId,
        gain: NodeId,
        bias: NodeId,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    ConcatCols(NodeId, NodeId),
    ConcatRows(NodeId, NodeId),
    PoolConcat {
        x: NodeId,
        argmax: Vec<usize>,
    },
    GroupMax {
        x: NodeId,
        argmax: Vec<usize>,
    },
    SumRows(NodeId),
    ClampMin(NodeId, T),
    DivRows {
        x: NodeId,
        denom: NodeId,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    rows: usize,
    cols: usize,
    op: Op<T>,
    requires_grad: bool,
}

/// Strided read-only matrix view handed to `gemm`.
#[derive(Clone, Copy)]
struct View<'a, T> {
    data: &'a [T],
    rows: usize,
    cols: usize,
    strides: (isize, isize),
}

impl<'a, T> View<'a, T> {
    fn new(data: &'a [T], rows: usize, cols: usize) -> Self {
        Self {
            data,
            rows,
            cols,
            strides: (cols as isize, 1),
        }
    }

    fn t(self) -> Self {
        Self {
            data: self.data,
            rows: self.cols,
            cols: self.rows,
            strides: (self.strides.1, self.strides.0),
        }
    }

    fn maybe_t(self, flag: bool) -> Self {
        if flag {
            self.t()
        } else {
            self
        }
    }
}

/// `out (+)= a·b`.
fn gemm_into<T: Scalar>(a: View<'_, T>, b: View<'_, T>, out: &mut [T], accumulate: bool) {
    debug_assert_eq!(a.cols, b.rows);
    let beta = if accumulate { T::one() } else { T::zero() };
    if a.cols == 0 {
        if !accumulate {
            out.iter_mut().for_each(|v| *v = T::zero());
        }
        return;
    }
    T::gemm(
        a.rows, a.cols, b.cols, T::one(), a.data, a.strides, b.data, b.strides, beta, out,
    );
}

/// Append-only record of a forward computation.
///
/// Node ids only ever reference earlier nodes, so the recorded graph is
/// acyclic by construction. [`Tape::backward`] may run once per tape.
#[derive(Debug)]
pub struct Tape<T = f32> {
    nodes: Vec<Node<T>>,
    consumed: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::with_capacity(128),
            consumed: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn dims(&self, id: NodeId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    fn data(&self, id: NodeId) -> &[T] {
        self.nodes[id.0].value.data()
    }

    fn grad_flag(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    fn push(&mut self, value: Tensor<T>, rows: usize, cols: usize, op: Op<T>, rg: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            rows,
            cols,
            op,
            requires_grad: rg,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn push_matrix(&mut self, data: Vec<T>, rows: usize, cols: usize, op: Op<T>, rg: bool) -> NodeId {
        let value = Tensor::new(vec![rows, cols], data).expect("op produced consistent shape");
        self.push(value, rows, cols, op, rg)
    }

    /// Records a leaf. Gradients are tracked iff `tensor.requires_grad()`.
    /// Rank-1 tensors are treated as a single row.
    pub fn leaf(&mut self, tensor: Tensor<T>) -> Result<NodeId> {
        let (rows, cols) = tensor.dims2()?;
        let rg = tensor.requires_grad();
        Ok(self.push(tensor, rows, cols, Op::Leaf, rg))
    }

    pub fn constant(&mut self, tensor: Tensor<T>) -> Result<NodeId> {
        self.leaf(tensor.with_requires_grad(false))
    }

    pub fn param(&mut self, tensor: Tensor<T>) -> Result<NodeId> {
        self.leaf(tensor.with_requires_grad(true))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    /// `aᵀ·b`
    pub fn matmul_tn(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, true, false)
    }

    /// `a·bᵀ`
    pub fn matmul_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, true)
    }

    fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        let va = View::new(self.data(a), ar, ac).maybe_t(ta);
        let vb = View::new(self.data(b), br, bc).maybe_t(tb);
        if va.cols != vb.rows {
            return Err(Error::shape(
                "matmul",
                format!("{}x{} · {}x{}", va.rows, va.cols, vb.rows, vb.cols),
            ));
        }
        let (m, n) = (va.rows, vb.cols);
        let mut out = vec![T::zero(); m * n];
        gemm_into(va, vb, &mut out, false);
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push_matrix(out, m, n, Op::MatMul { a, b, ta, tb }, rg))
    }

    /// `x·w + b` with `w` of shape `in × out` and `b` a row of length `out`.
    pub fn linear(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let (xr, xc) = self.dims(x);
        let (wr, wc) = self.dims(w);
        if xc != wr {
            return Err(Error::shape("linear", format!("input {xr}x{xc}, weight {wr}x{wc}")));
        }
        let mut out = vec![T::zero(); xr * wc];
        if let Some(b) = b {
            let (br, bc) = self.dims(b);
            if br != 1 || bc != wc {
                return Err(Error::shape("linear", format!("bias {br}x{bc} for width {wc}")));
            }
            let bias = self.data(b);
            for row in out.chunks_mut(wc.max(1)) {
                row.copy_from_slice(bias);
            }
        }
        gemm_into(
            View::new(self.data(x), xr, xc),
            View::new(self.data(w), wr, wc),
            &mut out,
            b.is_some(),
        );
        let rg = self.grad_flag(&[x, w]) || b.is_some_and(|b| self.grad_flag(&[b]));
        Ok(self.push_matrix(out, xr, wc, Op::Linear { x, w, b }, rg))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.dims(a);
        if self.dims(b) != (ar, ac) {
            return Err(Error::shape("add", format!("{:?} vs {:?}", (ar, ac), self.dims(b))));
        }
        let out = self
            .data(a)
            .iter()
            .zip(self.data(b))
            .map(|(&x, &y)| x + y)
            .collect();
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push_matrix(out, ar, ac, Op::Add(a, b), rg))
    }

    /// Adds a `1 × d` row to every row of an `n × d` matrix.
    pub fn add_row(&mut self, x: NodeId, row: NodeId) -> Result<NodeId> {
        let (xr, xc) = self.dims(x);
        if self.dims(row) != (1, xc) {
            return Err(Error::shape("add_row", format!("row {:?} for width {xc}", self.dims(row))));
        }
        let r = self.data(row);
        let out = self
            .data(x)
            .chunks(xc.max(1))
            .flat_map(|xs| xs.iter().zip(r).map(|(&a, &b)| a + b))
            .collect();
        let rg = self.grad_flag(&[x, row]);
        Ok(self.push_matrix(out, xr, xc, Op::AddRow { x, row }, rg))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.dims(x);
        let out = self
            .data(x)
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let rg = self.grad_flag(&[x]);
        self.push_matrix(out, r, c, Op::Relu(x), rg)
    }

    /// `x + 1` for `x ≥ 0`, `exp(x)` otherwise. Strictly positive.
    pub fn elu_plus_one(&mut self, x: NodeId) -> NodeId {
        let (r, c) = self.dims(x);
        let out = self.data(x).iter().map(|&v| elu1(v)).collect();
        let rg = self.grad_flag(&[x]);
        self.push_matrix(out, r, c, Op::EluPlusOne(x), rg)
    }

    /// Per-row normalization to zero mean and unit variance, then `gain ⊙ · + bias`.
    pub fn layer_norm(&mut self, x: NodeId, gain: NodeId, bias: NodeId, eps: f64) -> Result<NodeId> {
        let (r, d) = self.dims(x);
        if d == 0 {
            return Err(Error::Empty { op: "layer_norm" });
        }
        if self.dims(gain) != (1, d) || self.dims(bias) != (1, d) {
            return Err(Error::shape("layer_norm", format!("affine params must be 1x{d}")));
        }
        let eps = T::from_f64(eps);
        let inv_d = T::from_f64(1.0 / d as f64);
        let mut xhat = Vec::with_capacity(r * d);
        let mut inv_std = Vec::with_capacity(r);
        for row in self.data(x).chunks(d) {
            let mean = row.iter().fold(T::zero(), |a, &b| a + b) * inv_d;
            let var = row.iter().fold(T::zero(), |a, &b| a + (b - mean) * (b - mean)) * inv_d;
            let is = T::one() / (var + eps).sqrt();
            inv_std.push(is);
            xhat.extend(row.iter().map(|&v| (v - mean) * is));
        }
        let g = self.data(gain);
        let b = self.data(bias);
        let out = xhat
            .chunks(d)
            .flat_map(|h| h.iter().zip(g).zip(b).map(|((&h, &g), &b)| h * g + b))
            .collect();
        let rg = self.grad_flag(&[x, gain, bias]);
        Ok(self.push_matrix(
            out,
            r,
            d,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
            rg,
        ))
    }

    /// Channel-wise concatenation `[a | b]`.
    pub fn concat_cols(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if ar != br {
            return Err(Error::shape("concat_cols", format!("rows {ar} vs {br}")));
        }
        let mut out = Vec::with_capacity(ar * (ac + bc));
        for i in 0..ar {
            out.extend_from_slice(&self.data(a)[i * ac..(i + 1) * ac]);
            out.extend_from_slice(&self.data(b)[i * bc..(i + 1) * bc]);
        }
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push_matrix(out, ar, ac + bc, Op::ConcatCols(a, b), rg))
    }

    /// Set-dimension concatenation: rows of `a` followed by rows of `b`.
    pub fn concat_rows(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ar, ac) = self.dims(a);
        let (br, bc) = self.dims(b);
        if ac != bc {
            return Err(Error::shape("concat_rows", format!("cols {ac} vs {bc}")));
        }
        let mut out = Vec::with_capacity((ar + br) * ac);
        out.extend_from_slice(self.data(a));
        out.extend_from_slice(self.data(b));
        let rg = self.grad_flag(&[a, b]);
        Ok(self.push_matrix(out, ar + br, ac, Op::ConcatRows(a, b), rg))
    }

    /// Column-wise max over rows concatenated with column-wise mean: `n × d → 1 × 2d`.
    pub fn pool_concat(&mut self, x: NodeId) -> Result<NodeId> {
        let (n, d) = self.dims(x);
        if n == 0 {
            return Err(Error::Empty { op: "pool_concat" });
        }
        let data = self.data(x);
        let mut max = data[..d].to_vec();
        let mut argmax = vec![0usize; d];
        let mut sum = vec![T::zero(); d];
        for (i, row) in data.chunks(d).enumerate() {
            for j in 0..d {
                if row[j] > max[j] {
                    max[j] = row[j];
                    argmax[j] = i;
                }
                sum[j] += row[j];
            }
        }
        let inv_n = T::from_f64(1.0 / n as f64);
        max.extend(sum.into_iter().map(|s| s * inv_n));
        let rg = self.grad_flag(&[x]);
        Ok(self.push_matrix(max, 1, 2 * d, Op::PoolConcat { x, argmax }, rg))
    }

    /// Max over consecutive groups of `k` rows: `(n·k) × d → n × d`.
    pub fn group_max(&mut self, x: NodeId, k: usize) -> Result<NodeId> {
        let (r, d) = self.dims(x);
        if k == 0 || r % k != 0 {
            return Err(Error::shape("group_max", format!("{r} rows not divisible into groups of {k}")));
        }
        let data = self.data(x);
        let groups = r / k;
        let mut out = Vec::with_capacity(groups * d);
        let mut argmax = Vec::with_capacity(groups * d);
        for g in 0..groups {
            for j in 0..d {
                let mut best = g * k;
                for i in g * k + 1..(g + 1) * k {
                    if data[i * d + j] > data[best * d + j] {
                        best = i;
                    }
                }
                out.push(data[best * d + j]);
                argmax.push(best);
            }
        }
        let rg = self.grad_flag(&[x]);
        Ok(self.push_matrix(out, groups, d, Op::GroupMax { x, argmax }, rg))
    }

    /// Column sums: `n × d → 1 × d`.
    pub fn sum_rows(&mut self, x: NodeId) -> NodeId {
        let (_, d) = self.dims(x);
        let mut out = vec![T::zero(); d];
        for row in self.data(x).chunks(d.max(1)) {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        let rg = self.grad_flag(&[x]);
        self.push_matrix(out, 1, d, Op::SumRows(x), rg)
    }

    pub fn clamp_min(&mut self, x: NodeId, min: f64) -> NodeId {
        let (r, c) = self.dims(x);
        let min = T::from_f64(min);
        let out = self.data(x).iter().map(|&v| v.max(min)).collect();
        let rg = self.grad_flag(&[x]);
        self.push_matrix(out, r, c, Op::ClampMin(x, min), rg)
    }

    /// Divides each row of `x (n × d)` by the matching entry of `denom (n × 1)`.
    pub fn div_rows(&mut self, x: NodeId, denom: NodeId) -> Result<NodeId> {
        let (r, d) = self.dims(x);
        if self.dims(denom) != (r, 1) {
            return Err(Error::shape("div_rows", format!("denominator {:?} for {r} rows", self.dims(denom))));
        }
        let s = self.data(denom);
        let out = self
            .data(x)
            .chunks(d.max(1))
            .zip(s)
            .flat_map(|(row, &s)| row.iter().map(move |&v| v / s))
            .collect();
        let rg = self.grad_flag(&[x, denom]);
        Ok(self.push_matrix(out, r, d, Op::DivRows { x, denom }, rg))
    }

    /// Reverse sweep seeded with `d output = 1` (output must be a single element).
    pub fn backward(&mut self, output: NodeId) -> Result<Gradients<T>> {
        let (r, c) = self.dims(output);
        if r * c != 1 {
            return Err(Error::shape("backward", format!("seedless backward needs a scalar, got {r}x{c}")));
        }
        self.backward_with(output, vec![T::one()])
    }

    /// Reverse sweep seeded with an explicit upstream gradient for `output`.
    pub fn backward_with(&mut self, output: NodeId, seed: Vec<T>) -> Result<Gradients<T>> {
        if self.consumed {
            return Err(Error::BackwardTwice);
        }
        let (r, c) = self.dims(output);
        if seed.len() != r * c {
            return Err(Error::shape("backward_with", format!("seed of {} for {r}x{c}", seed.len())));
        }
        self.consumed = true;

        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed);

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.propagate(node, &g, &mut grads);
            grads[idx] = Some(g);
        }

        let grads = grads
            .into_iter()
            .zip(&self.nodes)
            .map(|(g, n)| match (&n.op, g) {
                (Op::Leaf, Some(g)) if n.requires_grad => Some(g),
                _ => None,
            })
            .collect();
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(),
        })
    }

    fn propagate(&self, node: &Node<T>, g: &[T], grads: &mut [Option<Vec<T>>]) {
        let (rows, cols) = (node.rows, node.cols);
        let wants = |id: NodeId| self.nodes[id.0].requires_grad;
        macro_rules! acc {
            ($id:expr) => {
                grad_slot(grads, $id, self.nodes[$id.0].value.len())
            };
        }
        let gv = View::new(g, rows, cols);

        match &node.op {
            Op::Leaf => {}
            Op::MatMul { a, b, ta, tb } => {
                let (ar, ac) = self.dims(*a);
                let (br, bc) = self.dims(*b);
                let va = View::new(self.data(*a), ar, ac);
                let vb = View::new(self.data(*b), br, bc);
                let op_a = va.maybe_t(*ta);
                let op_b = vb.maybe_t(*tb);
                if wants(*a) {
                    let ga = acc!(*a);
                    if *ta {
                        gemm_into(op_b, gv.t(), ga, true);
                    } else {
                        gemm_into(gv, op_b.t(), ga, true);
                    }
                }
                if wants(*b) {
                    let gb = acc!(*b);
                    if *tb {
                        gemm_into(gv.t(), op_a, gb, true);
                    } else {
                        gemm_into(op_a.t(), gv, gb, true);
                    }
                }
            }
            Op::Linear { x, w, b } => {
                let (xr, xc) = self.dims(*x);
                let (wr, wc) = self.dims(*w);
                if wants(*x) {
                    let gx = acc!(*x);
                    gemm_into(gv, View::new(self.data(*w), wr, wc).t(), gx, true);
                }
                if wants(*w) {
                    let gw = acc!(*w);
                    gemm_into(View::new(self.data(*x), xr, xc).t(), gv, gw, true);
                }
                if let Some(b) = b {
                    if wants(*b) {
                        let gb = acc!(*b);
                        for row in g.chunks(cols.max(1)) {
                            for (o, &v) in gb.iter_mut().zip(row) {
                                *o += v;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for id in [*a, *b] {
                    if wants(id) {
                        let ga = acc!(id);
                        for (o, &v) in ga.iter_mut().zip(g) {
                            *o += v;
                        }
                    }
                }
            }
            Op::AddRow { x, row } => {
                if wants(*x) {
                    let gx = acc!(*x);
                    for (o, &v) in gx.iter_mut().zip(g) {
                        *o += v;
                    }
                }
                if wants(*row) {
                    let gr = acc!(*row);
                    for grow in g.chunks(cols.max(1)) {
                        for (o, &v) in gr.iter_mut().zip(grow) {
                            *o += v;
                        }
                    }
                }
            }
            Op::Relu(x) => {
                if wants(*x) {
                    let out = node.value.data();
                    let gx = acc!(*x);
                    for ((o, &v), &y) in gx.iter_mut().zip(g).zip(out) {
                        if y > T::zero() {
                            *o += v;
                        }
                    }
                }
            }
            Op::EluPlusOne(x) => {
                if wants(*x) {
                    let input = self.data(*x);
                    let out = node.value.data();
                    let gx = acc!(*x);
                    for (((o, &v), &xi), &y) in gx.iter_mut().zip(g).zip(input).zip(out) {
                        // d/dx: 1 on the linear branch, exp(x) == output otherwise
                        *o += if xi >= T::zero() { v } else { v * y };
                    }
                }
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let d = cols;
                let gain_v = self.data(*gain);
                if wants(*gain) {
                    let gg = acc!(*gain);
                    for (grow, hrow) in g.chunks(d).zip(xhat.chunks(d)) {
                        for ((o, &gv), &h) in gg.iter_mut().zip(grow).zip(hrow) {
                            *o += gv * h;
                        }
                    }
                }
                if wants(*bias) {
                    let gb = acc!(*bias);
                    for grow in g.chunks(d) {
                        for (o, &gv) in gb.iter_mut().zip(grow) {
                            *o += gv;
                        }
                    }
                }
                if wants(*x) {
                    let gx = acc!(*x);
                    let inv_d = T::from_f64(1.0 / d as f64);
                    let mut dh = vec![T::zero(); d];
                    for (i, (grow, hrow)) in g.chunks(d).zip(xhat.chunks(d)).enumerate() {
                        let mut sum_dh = T::zero();
                        let mut sum_dh_h = T::zero();
                        for j in 0..d {
                            dh[j] = grow[j] * gain_v[j];
                            sum_dh += dh[j];
                            sum_dh_h += dh[j] * hrow[j];
                        }
                        let is = inv_std[i];
                        let out = &mut gx[i * d..(i + 1) * d];
                        for j in 0..d {
                            out[j] += is * (dh[j] - inv_d * sum_dh - hrow[j] * inv_d * sum_dh_h);
                        }
                    }
                }
            }
            Op::ConcatCols(a, b) => {
                let (_, ac) = self.dims(*a);
                let (_, bc) = self.dims(*b);
                if wants(*a) {
                    let ga = acc!(*a);
                    for (grow, orow) in g.chunks(cols).zip(ga.chunks_mut(ac.max(1))) {
                        for (o, &v) in orow.iter_mut().zip(&grow[..ac]) {
                            *o += v;
                        }
                    }
                }
                if wants(*b) {
                    let gb = acc!(*b);
                    for (grow, orow) in g.chunks(cols).zip(gb.chunks_mut(bc.max(1))) {
                        for (o, &v) in orow.iter_mut().zip(&grow[ac..]) {
                            *o += v;
                        }
                    }
                }
            }
            Op::ConcatRows(a, b) => {
                let split = self.nodes[a.0].value.len();
                if wants(*a) {
                    let ga = acc!(*a);
                    for (o, &v) in ga.iter_mut().zip(&g[..split]) {
                        *o += v;
                    }
                }
                if wants(*b) {
                    let gb = acc!(*b);
                    for (o, &v) in gb.iter_mut().zip(&g[split..]) {
                        *o += v;
                    }
                }
            }
            Op::PoolConcat { x, argmax } => {
                if wants(*x) {
                    let (n, d) = self.dims(*x);
                    let gx = acc!(*x);
                    let inv_n = T::from_f64(1.0 / n as f64);
                    for j in 0..d {
                        gx[argmax[j] * d + j] += g[j];
                        let gm = g[d + j] * inv_n;
                        for i in 0..n {
                            gx[i * d + j] += gm;
                        }
                    }
                }
            }
            Op::GroupMax { x, argmax } => {
                if wants(*x) {
                    let gx = acc!(*x);
                    for (pos, (&src, &v)) in argmax.iter().zip(g).enumerate() {
                        gx[src * cols + pos % cols] += v;
                    }
                }
            }
            Op::SumRows(x) => {
                if wants(*x) {
                    let gx = acc!(*x);
                    for row in gx.chunks_mut(cols.max(1)) {
                        for (o, &v) in row.iter_mut().zip(g) {
                            *o += v;
                        }
                    }
                }
            }
            Op::ClampMin(x, min) => {
                if wants(*x) {
                    let input = self.data(*x);
                    let gx = acc!(*x);
                    for ((o, &v), &xi) in gx.iter_mut().zip(g).zip(input) {
                        if xi > *min {
                            *o += v;
                        }
                    }
                }
            }
            Op::DivRows { x, denom } => {
                let s = self.data(*denom);
                if wants(*x) {
                    let gx = acc!(*x);
                    for ((orow, grow), &sv) in gx.chunks_mut(cols.max(1)).zip(g.chunks(cols.max(1))).zip(s) {
                        let inv = T::one() / sv;
                        for (o, &v) in orow.iter_mut().zip(grow) {
                            *o += v * inv;
                        }
                    }
                }
                if wants(*denom) {
                    // d(x/s)/ds = -y/s, summed across the row
                    let out = node.value.data();
                    let gs = acc!(*denom);
                    for (i, (grow, yrow)) in g.chunks(cols.max(1)).zip(out.chunks(cols.max(1))).enumerate() {
                        let dot = grow.iter().zip(yrow).fold(T::zero(), |a, (&gv, &y)| a + gv * y);
                        gs[i] -= dot / s[i];
                    }
                }
            }
        }
    }
}

fn grad_slot<T: Scalar>(grads: &mut [Option<Vec<T>>], id: NodeId, len: usize) -> &mut [T] {
    grads[id.0].get_or_insert_with(|| vec![T::zero(); len])
}

#[inline]
fn elu1<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        v + T::one()
    } else {
        // floored so the feature map stays strictly positive after underflow
        v.exp().max(T::min_positive())
    }
}

/// Gradients of the leaves that were recorded with `requires_grad`.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, id: NodeId) -> Option<Tensor<T>> {
        let g = self.grads.get(id.0)?.as_ref()?;
        Tensor::new(self.shapes[id.0].clone(), g.clone()).ok()
    }

    /// Borrowed flat gradient; `None` if the leaf received no gradient.
    pub fn slice(&self, id: NodeId) -> Option<&[T]> {
        self.grads.get(id.0)?.as_deref()
    }
}
