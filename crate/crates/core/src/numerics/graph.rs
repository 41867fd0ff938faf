//! Tape-based reverse-mode differentiation over 2-D values.
//!
//! Every value on the tape is a row-major matrix. Parameters are borrowed from
//! a [`ParamStore`] rather than copied; a parameter only enters the tape the
//! first time it is used, so parameters off the loss path get zero gradient.

use std::borrow::Cow;

use super::tensor::kernels;
use super::{NumericsError, ParamId, ParamStore, Tensor};

/// Handle to a value on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Input,
    Param,
    MatMul(Var, Var),
    MatMulBt(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    AddConst(Var),
    Mul(Var, Var),
    MulCol(Var, Var),
    Affine(Var, f64),
    Softmax(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Gelu(Var),
    Sigmoid(Var),
    Ln(Var),
    GatherRows(Var, Vec<usize>),
    SliceCols(Var, usize),
    ConcatCols(Vec<Var>),
    ScatterCols(Var, Vec<usize>),
    Pick(Var, Vec<usize>),
    Sum(Var),
}

struct Node<'p> {
    value: Cow<'p, [f64]>,
    rows: usize,
    cols: usize,
    needs_grad: bool,
    op: Op,
}

/// Records values and the operations that produced them.
pub struct Graph<'p> {
    store: Option<&'p ParamStore>,
    nodes: Vec<Node<'p>>,
    param_vars: Vec<Option<Var>>,
    non_finite: Option<usize>,
}

/// Adjoints produced by [`Graph::backward`].
pub struct Gradients {
    adjoints: Vec<Option<Vec<f64>>>,
    param_vars: Vec<Option<Var>>,
    param_lens: Vec<usize>,
}

impl Gradients {
    /// Gradient with respect to a parameter; zeros if it was not on the path.
    pub fn param(&self, id: ParamId) -> Vec<f64> {
        self.param_vars
            .get(id.0)
            .copied()
            .flatten()
            .and_then(|v| self.adjoints[v.0].clone())
            .unwrap_or_else(|| vec![0.0; self.param_lens[id.0]])
    }

    /// Gradients for every parameter of the store, in store order.
    pub fn into_param_grads(mut self) -> Vec<Vec<f64>> {
        (0..self.param_lens.len())
            .map(|i| {
                self.param_vars
                    .get(i)
                    .copied()
                    .flatten()
                    .and_then(|v| self.adjoints[v.0].take())
                    .unwrap_or_else(|| vec![0.0; self.param_lens[i]])
            })
            .collect()
    }

    /// Gradient with respect to any tape value that required a gradient.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.adjoints.get(v.0).and_then(|a| a.as_deref())
    }
}

impl<'p> Default for Graph<'p> {
    fn default() -> Self {
        Self::detached()
    }
}

impl<'p> Graph<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Self {
            store: Some(store),
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
            non_finite: None,
        }
    }

    /// A graph without parameters; leaves come from [`Graph::input`].
    pub fn detached() -> Self {
        Self {
            store: None,
            nodes: Vec::new(),
            param_vars: Vec::new(),
            non_finite: None,
        }
    }

    fn push(&mut self, value: Cow<'p, [f64]>, rows: usize, cols: usize, needs_grad: bool, op: Op) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        let id = self.nodes.len();
        if self.non_finite.is_none() && !value.iter().all(|v| v.is_finite()) {
            self.non_finite = Some(id);
        }
        self.nodes.push(Node {
            value,
            rows,
            cols,
            needs_grad,
            op,
        });
        Var(id)
    }

    fn node(&self, v: Var) -> &Node<'p> {
        &self.nodes[v.0]
    }

    fn ng(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A leaf holding `tensor`, viewed as a matrix.
    pub fn input(&mut self, tensor: &Tensor) -> Var {
        let (r, c) = tensor.matrix_dims();
        self.push(
            Cow::Owned(tensor.data().to_vec()),
            r,
            c,
            tensor.requires_grad(),
            Op::Input,
        )
    }

    pub fn input_matrix(&mut self, rows: usize, cols: usize, data: Vec<f64>, requires_grad: bool) -> Var {
        assert_eq!(rows * cols, data.len(), "input shape mismatch");
        self.push(Cow::Owned(data), rows, cols, requires_grad, Op::Input)
    }

    /// The tape value for a stored parameter.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let store = self.store.expect("graph has no parameter store");
        let tensor = store.get(id);
        let (r, c) = tensor.matrix_dims();
        let v = self.push(Cow::Borrowed(tensor.data()), r, c, true, Op::Param);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn dims(&self, v: Var) -> (usize, usize) {
        let n = self.node(v);
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.node(v).value[0]
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(vec![n.rows, n.cols], n.value.to_vec()).expect("node shape")
    }

    /// Fails if any value recorded so far was NaN or infinite.
    pub fn check_finite(&self) -> Result<(), NumericsError> {
        match self.non_finite {
            Some(id) => Err(NumericsError::Numerical(format!(
                "non-finite value produced by {:?}",
                self.nodes[id].op
            ))),
            None => Ok(()),
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dims");
        let mut out = vec![0.0; m * n];
        kernels::matmul(self.value(a), self.value(b), m, k, n, &mut out);
        let ng = self.ng(&[a, b]);
        self.push(Cow::Owned(out), m, n, ng, Op::MatMul(a, b))
    }

    /// `a * b^T`.
    pub fn matmul_bt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        assert_eq!(k, k2, "matmul_bt inner dims");
        let mut out = vec![0.0; m * n];
        kernels::matmul_bt(self.value(a), self.value(b), m, k, n, &mut out);
        let ng = self.ng(&[a, b]);
        self.push(Cow::Owned(out), m, n, ng, Op::MatMulBt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "add shapes");
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let (r, c) = self.dims(a);
        let ng = self.ng(&[a, b]);
        self.push(Cow::Owned(out), r, c, ng, Op::Add(a, b))
    }

    /// Adds a `1 x c` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(self.dims(row), (1, c), "add_row shapes");
        let rv = self.value(row);
        let out: Vec<f64> = self
            .value(a)
            .chunks(c)
            .flat_map(|chunk| chunk.iter().zip(rv).map(|(x, y)| x + y))
            .collect();
        let ng = self.ng(&[a, row]);
        self.push(Cow::Owned(out), r, c, ng, Op::AddRow(a, row))
    }

    /// Adds a constant matrix (e.g. an additive attention mask).
    pub fn add_const(&mut self, a: Var, constant: &[f64]) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(constant.len(), r * c, "add_const shapes");
        let out: Vec<f64> = self.value(a).iter().zip(constant).map(|(x, y)| x + y).collect();
        let ng = self.ng(&[a]);
        self.push(Cow::Owned(out), r, c, ng, Op::AddConst(a))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        assert_eq!(self.dims(a), self.dims(b), "mul shapes");
        let out: Vec<f64> = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let (r, c) = self.dims(a);
        let ng = self.ng(&[a, b]);
        self.push(Cow::Owned(out), r, c, ng, Op::Mul(a, b))
    }

    /// Scales row `i` of `a` by `col[i]`, where `col` is `r x 1`.
    pub fn mul_col(&mut self, a: Var, col: Var) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(self.dims(col), (r, 1), "mul_col shapes");
        let cv = self.value(col);
        let out: Vec<f64> = self
            .value(a)
            .chunks(c)
            .zip(cv)
            .flat_map(|(chunk, s)| chunk.iter().map(move |x| x * s))
            .collect();
        let ng = self.ng(&[a, col]);
        self.push(Cow::Owned(out), r, c, ng, Op::MulCol(a, col))
    }

    /// `scale * a + shift`.
    pub fn affine(&mut self, a: Var, scale: f64, shift: f64) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|x| scale * x + shift).collect();
        let (r, c) = self.dims(a);
        let ng = self.ng(&[a]);
        self.push(Cow::Owned(out), r, c, ng, Op::Affine(a, scale))
    }

    pub fn scale(&mut self, a: Var, scale: f64) -> Var {
        self.affine(a, scale, 0.0)
    }

    /// Row-wise softmax.
    pub fn softmax(&mut self, a: Var) -> Var {
        let (r, c) = self.dims(a);
        let mut out = self.value(a).to_vec();
        for row in out.chunks_mut(c) {
            kernels::softmax_in_place(row);
        }
        let ng = self.ng(&[a]);
        self.push(Cow::Owned(out), r, c, ng, Op::Softmax(a))
    }

    /// Row-wise layer normalization with `1 x c` gain and bias.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var, eps: f64) -> Var {
        let (r, c) = self.dims(x);
        assert_eq!(self.dims(gain), (1, c), "layer_norm gain");
        assert_eq!(self.dims(bias), (1, c), "layer_norm bias");
        let mut xhat = vec![0.0; r * c];
        let mut inv_std = vec![0.0; r];
        let mut out = vec![0.0; r * c];
        let (xv, gv, bv) = (self.value(x), self.value(gain), self.value(bias));
        for i in 0..r {
            let row = &xv[i * c..(i + 1) * c];
            let (mean, is) = kernels::moments(row, eps);
            inv_std[i] = is;
            for j in 0..c {
                let h = (row[j] - mean) * is;
                xhat[i * c + j] = h;
                out[i * c + j] = h * gv[j] + bv[j];
            }
        }
        let ng = self.ng(&[x, gain, bias]);
        self.push(
            Cow::Owned(out),
            r,
            c,
            ng,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Gaussian error linear unit, `x * Phi(x)`.
    pub fn gelu(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|&x| x * std_normal_cdf(x)).collect();
        let (r, c) = self.dims(a);
        let ng = self.ng(&[a]);
        self.push(Cow::Owned(out), r, c, ng, Op::Gelu(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|&x| logistic(x)).collect();
        let (r, c) = self.dims(a);
        let ng = self.ng(&[a]);
        self.push(Cow::Owned(out), r, c, ng, Op::Sigmoid(a))
    }

    /// Natural logarithm.
    pub fn ln(&mut self, a: Var) -> Var {
        let out: Vec<f64> = self.value(a).iter().map(|&x| x.ln()).collect();
        let (r, c) = self.dims(a);
        let ng = self.ng(&[a]);
        self.push(Cow::Owned(out), r, c, ng, Op::Ln(a))
    }

    /// Stacks rows `table[ids[i]]` (embedding lookup).
    pub fn gather_rows(&mut self, table: Var, ids: &[usize]) -> Var {
        let (n, c) = self.dims(table);
        let tv = self.value(table);
        let mut out = Vec::with_capacity(ids.len() * c);
        for &id in ids {
            assert!(id < n, "gather index {id} out of range {n}");
            out.extend_from_slice(&tv[id * c..(id + 1) * c]);
        }
        let ng = self.ng(&[table]);
        self.push(Cow::Owned(out), ids.len(), c, ng, Op::GatherRows(table, ids.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, width: usize) -> Var {
        let (r, c) = self.dims(a);
        assert!(start + width <= c, "slice_cols out of range");
        let out: Vec<f64> = self
            .value(a)
            .chunks(c)
            .flat_map(|row| row[start..start + width].iter().copied())
            .collect();
        let ng = self.ng(&[a]);
        self.push(Cow::Owned(out), r, width, ng, Op::SliceCols(a, start))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let r = self.dims(parts[0]).0;
        let widths: Vec<usize> = parts
            .iter()
            .map(|&p| {
                assert_eq!(self.dims(p).0, r, "concat_cols rows");
                self.dims(p).1
            })
            .collect();
        let total: usize = widths.iter().sum();
        let mut out = Vec::with_capacity(r * total);
        for i in 0..r {
            for (&p, &w) in parts.iter().zip(&widths) {
                out.extend_from_slice(&self.value(p)[i * w..(i + 1) * w]);
            }
        }
        let ng = self.ng(parts);
        self.push(Cow::Owned(out), r, total, ng, Op::ConcatCols(parts.to_vec()))
    }

    /// `out[t, ids[i]] += a[t, i]`, producing `r x width`.
    pub fn scatter_cols(&mut self, a: Var, ids: &[usize], width: usize) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(ids.len(), c, "scatter_cols ids");
        assert!(ids.iter().all(|&i| i < width), "scatter_cols index out of range");
        let av = self.value(a);
        let mut out = vec![0.0; r * width];
        for t in 0..r {
            for (i, &id) in ids.iter().enumerate() {
                out[t * width + id] += av[t * c + i];
            }
        }
        let ng = self.ng(&[a]);
        self.push(Cow::Owned(out), r, width, ng, Op::ScatterCols(a, ids.to_vec()))
    }

    /// Picks `a[r, cols[r]]` for every row, producing `r x 1`.
    pub fn pick_per_row(&mut self, a: Var, cols: &[usize]) -> Var {
        let (r, c) = self.dims(a);
        assert_eq!(cols.len(), r, "pick_per_row length");
        let flat: Vec<usize> = cols
            .iter()
            .enumerate()
            .map(|(i, &j)| {
                assert!(j < c, "pick column out of range");
                i * c + j
            })
            .collect();
        let out: Vec<f64> = flat.iter().map(|&k| self.value(a)[k]).collect();
        let ng = self.ng(&[a]);
        self.push(Cow::Owned(out), r, 1, ng, Op::Pick(a, flat))
    }

    /// Sum of all entries as a `1 x 1` value.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: f64 = self.value(a).iter().sum();
        let ng = self.ng(&[a]);
        self.push(Cow::Owned(vec![s]), 1, 1, ng, Op::Sum(a))
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.value(a).len() as f64;
        let s = self.sum(a);
        self.scale(s, 1.0 / n)
    }

    /// Reverse pass from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients, NumericsError> {
        if self.dims(loss) != (1, 1) {
            return Err(NumericsError::InvalidLoss(format!(
                "loss must be scalar, got {:?}",
                self.dims(loss)
            )));
        }
        self.check_finite()?;

        let mut adj: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        adj[loss.0] = Some(vec![1.0]);

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = adj[idx].take() else { continue };
            self.propagate(node, &g, &mut adj);
            adj[idx] = Some(g);
        }

        let param_lens = match self.store {
            Some(store) => store.ids().map(|id| store.get(id).len()).collect(),
            None => Vec::new(),
        };
        if adj.iter().flatten().flatten().any(|v| !v.is_finite()) {
            return Err(NumericsError::Numerical("non-finite gradient".into()));
        }
        Ok(Gradients {
            adjoints: adj,
            param_vars: self.param_vars.clone(),
            param_lens,
        })
    }

    fn propagate(&self, node: &Node<'p>, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let (rows, cols) = (node.rows, node.cols);
        let needs = |v: Var| self.nodes[v.0].needs_grad;
        let len = |v: Var| self.nodes[v.0].value.len();
        // Accumulator for input `v`, allocated on first use.
        macro_rules! acc {
            ($v:expr) => {{
                let v: Var = $v;
                let n = len(v);
                adj[v.0].get_or_insert_with(|| vec![0.0; n])
            }};
        }

        match &node.op {
            Op::Input | Op::Param => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if needs(*a) {
                    kernels::matmul_bt(g, self.value(*b), m, n, k, acc!(*a));
                }
                if needs(*b) {
                    kernels::matmul_at(self.value(*a), g, m, k, n, acc!(*b));
                }
            }
            Op::MatMulBt(a, b) => {
                let (m, k) = self.dims(*a);
                let n = cols;
                if needs(*a) {
                    kernels::matmul(g, self.value(*b), m, n, k, acc!(*a));
                }
                if needs(*b) {
                    kernels::matmul_at(g, self.value(*a), m, n, k, acc!(*b));
                }
            }
            Op::Add(a, b) => {
                for v in [*a, *b] {
                    if needs(v) {
                        add_into(acc!(v), g);
                    }
                }
            }
            Op::AddRow(a, row) => {
                if needs(*a) {
                    add_into(acc!(*a), g);
                }
                if needs(*row) {
                    let r = acc!(*row);
                    for chunk in g.chunks(cols) {
                        add_into(r, chunk);
                    }
                }
            }
            Op::AddConst(a) => {
                if needs(*a) {
                    add_into(acc!(*a), g);
                }
            }
            Op::Mul(a, b) => {
                if needs(*a) {
                    let bv = self.value(*b);
                    for ((o, gi), bi) in acc!(*a).iter_mut().zip(g).zip(bv) {
                        *o += gi * bi;
                    }
                }
                if needs(*b) {
                    let av = self.value(*a);
                    for ((o, gi), ai) in acc!(*b).iter_mut().zip(g).zip(av) {
                        *o += gi * ai;
                    }
                }
            }
            Op::MulCol(a, col) => {
                let cv = self.value(*col);
                if needs(*a) {
                    let out = acc!(*a);
                    for i in 0..rows {
                        for j in 0..cols {
                            out[i * cols + j] += g[i * cols + j] * cv[i];
                        }
                    }
                }
                if needs(*col) {
                    let av = self.value(*a);
                    let out = acc!(*col);
                    for i in 0..rows {
                        out[i] += kernels::dot(&g[i * cols..(i + 1) * cols], &av[i * cols..(i + 1) * cols]);
                    }
                }
            }
            Op::Affine(a, scale) => {
                if needs(*a) {
                    for (o, gi) in acc!(*a).iter_mut().zip(g) {
                        *o += scale * gi;
                    }
                }
            }
            Op::Softmax(a) => {
                if needs(*a) {
                    let y = &node.value;
                    let out = acc!(*a);
                    for i in 0..rows {
                        let yr = &y[i * cols..(i + 1) * cols];
                        let gr = &g[i * cols..(i + 1) * cols];
                        let s = kernels::dot(yr, gr);
                        for j in 0..cols {
                            out[i * cols + j] += yr[j] * (gr[j] - s);
                        }
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
                let gv = self.value(*gain);
                if needs(*x) {
                    let out = acc!(*x);
                    let n = cols as f64;
                    let mut dh = vec![0.0; cols];
                    for i in 0..rows {
                        let gr = &g[i * cols..(i + 1) * cols];
                        let hr = &xhat[i * cols..(i + 1) * cols];
                        for j in 0..cols {
                            dh[j] = gr[j] * gv[j];
                        }
                        let sum_dh: f64 = dh.iter().sum();
                        let sum_dh_h = kernels::dot(&dh, hr);
                        for j in 0..cols {
                            out[i * cols + j] += inv_std[i] / n * (n * dh[j] - sum_dh - hr[j] * sum_dh_h);
                        }
                    }
                }
                if needs(*gain) {
                    let out = acc!(*gain);
                    for i in 0..rows {
                        for j in 0..cols {
                            out[j] += g[i * cols + j] * xhat[i * cols + j];
                        }
                    }
                }
                if needs(*bias) {
                    let out = acc!(*bias);
                    for chunk in g.chunks(cols) {
                        add_into(out, chunk);
                    }
                }
            }
            Op::Gelu(a) => {
                if needs(*a) {
                    let av = self.value(*a);
                    for ((o, gi), &x) in acc!(*a).iter_mut().zip(g).zip(av) {
                        *o += gi * (std_normal_cdf(x) + x * std_normal_pdf(x));
                    }
                }
            }
            Op::Sigmoid(a) => {
                if needs(*a) {
                    for ((o, gi), y) in acc!(*a).iter_mut().zip(g).zip(node.value.iter()) {
                        *o += gi * y * (1.0 - y);
                    }
                }
            }
            Op::Ln(a) => {
                if needs(*a) {
                    let av = self.value(*a);
                    for ((o, gi), x) in acc!(*a).iter_mut().zip(g).zip(av) {
                        *o += gi / x;
                    }
                }
            }
            Op::GatherRows(table, ids) => {
                if needs(*table) {
                    let out = acc!(*table);
                    for (r, &id) in ids.iter().enumerate() {
                        add_into(&mut out[id * cols..(id + 1) * cols], &g[r * cols..(r + 1) * cols]);
                    }
                }
            }
            Op::SliceCols(a, start) => {
                if needs(*a) {
                    let in_cols = self.dims(*a).1;
                    let out = acc!(*a);
                    for i in 0..rows {
                        add_into(
                            &mut out[i * in_cols + start..i * in_cols + start + cols],
                            &g[i * cols..(i + 1) * cols],
                        );
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let mut offset = 0;
                for &p in parts {
                    let w = self.dims(p).1;
                    if needs(p) {
                        let out = acc!(p);
                        for i in 0..rows {
                            add_into(
                                &mut out[i * w..(i + 1) * w],
                                &g[i * cols + offset..i * cols + offset + w],
                            );
                        }
                    }
                    offset += w;
                }
            }
            Op::ScatterCols(a, ids) => {
                if needs(*a) {
                    let in_cols = ids.len();
                    let out = acc!(*a);
                    for t in 0..rows {
                        for (i, &id) in ids.iter().enumerate() {
                            out[t * in_cols + i] += g[t * cols + id];
                        }
                    }
                }
            }
            Op::Pick(a, flat) => {
                if needs(*a) {
                    let out = acc!(*a);
                    for (gi, &k) in g.iter().zip(flat) {
                        out[k] += gi;
                    }
                }
            }
            Op::Sum(a) => {
                if needs(*a) {
                    let s = g[0];
                    for o in acc!(*a).iter_mut() {
                        *o += s;
                    }
                }
            }
        }
    }
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Logistic function.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn std_normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}
