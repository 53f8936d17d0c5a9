use super::{dot, matmul, matmul_nt, matmul_tn_acc, Scalar, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One row of a sampled softmax: `cols[0]` is the target column, the rest
/// are the sampled competitors.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SampledRow {
    pub row: usize,
    pub cols: Vec<usize>,
}

enum Op<T> {
    Leaf,
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Gelu(Var),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    SoftmaxRows(Var),
    NormalizeRows {
        x: Var,
        norms: Vec<T>,
    },
    Slice {
        x: Var,
        r0: usize,
        c0: usize,
    },
    Assemble(Vec<(Var, usize, usize)>),
    SampledNll {
        logits: Var,
        rows: Vec<SampledRow>,
        inv_tau: T,
        probs: Vec<Vec<T>>,
    },
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
}

/// Append-only tape of tensor operations.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
}

/// Gradients of a scalar root with respect to every node.
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }
}

const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-8;

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn dims(&self, v: Var) -> (usize, usize) {
        let t = self.value(v);
        (t.rows(), t.cols())
    }

    pub fn leaf(&mut self, t: Tensor<T>) -> Var {
        self.push(t, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (k2, n) = self.dims(b);
        assert_eq!(k, k2, "matmul inner dims");
        let c = matmul(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::matrix(m, n, c), Op::MatMul(a, b))
    }

    /// `a * b^T`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let (m, k) = self.dims(a);
        let (n, k2) = self.dims(b);
        assert_eq!(k, k2, "matmul_nt inner dims");
        let c = matmul_nt(self.value(a).data(), self.value(b).data(), m, k, n);
        self.push(Tensor::matrix(m, n, c), Op::MatMulNT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (va, vb) = (self.value(a), self.value(b));
        assert_eq!(va.numel(), vb.numel(), "add sizes");
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| x + y).collect();
        let t = Tensor::from_vec(va.shape(), data).expect("same shape");
        self.push(t, Op::Add(a, b))
    }

    /// Adds a length-`n` vector to every row of an `m x n` matrix.
    pub fn add_row(&mut self, a: Var, bias: Var) -> Var {
        let (m, n) = self.dims(a);
        assert_eq!(self.value(bias).numel(), n, "bias length");
        let b = self.value(bias).data();
        let mut data = self.value(a).data().to_vec();
        for r in 0..m {
            for (x, &bv) in data[r * n..(r + 1) * n].iter_mut().zip(b) {
                *x += bv;
            }
        }
        self.push(Tensor::matrix(m, n, data), Op::AddRow(a, bias))
    }

    pub fn scale(&mut self, a: Var, s: T) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| x * s).collect();
        let t = Tensor::from_vec(va.shape(), data).expect("same shape");
        self.push(t, Op::Scale(a, s))
    }

    /// Tanh approximation of GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let data = va.data().iter().map(|&x| gelu(x)).collect();
        let t = Tensor::from_vec(va.shape(), data).expect("same shape");
        self.push(t, Op::Gelu(a))
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let (m, n) = self.dims(x);
        let g = self.value(gamma).data();
        let b = self.value(beta).data();
        assert_eq!(g.len(), n);
        assert_eq!(b.len(), n);
        let xs = self.value(x).data();
        let nf = T::from_f64(n as f64);
        let eps = T::from_f64(LN_EPS);
        let mut xhat = vec![T::zero(); m * n];
        let mut inv_std = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for c in 0..n {
                let h = (row[c] - mean) * is;
                xhat[r * n + c] = h;
                out[r * n + c] = h * g[c] + b[c];
            }
        }
        self.push(
            Tensor::matrix(m, n, out),
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let (m, n) = self.dims(a);
        let mut data = self.value(a).data().to_vec();
        for r in 0..m {
            softmax_in_place(&mut data[r * n..(r + 1) * n]);
        }
        self.push(Tensor::matrix(m, n, data), Op::SoftmaxRows(a))
    }

    /// Scales each row to unit L2 norm, with `sqrt(|x|^2 + eps^2)` guarding
    /// zero rows.
    pub fn normalize_rows(&mut self, x: Var) -> Var {
        let (m, n) = self.dims(x);
        let xs = self.value(x).data();
        let eps2 = T::from_f64(NORM_EPS * NORM_EPS);
        let mut norms = vec![T::zero(); m];
        let mut out = vec![T::zero(); m * n];
        for r in 0..m {
            let row = &xs[r * n..(r + 1) * n];
            let nr = (dot(row, row) + eps2).sqrt();
            norms[r] = nr;
            for c in 0..n {
                out[r * n + c] = row[c] / nr;
            }
        }
        self.push(Tensor::matrix(m, n, out), Op::NormalizeRows { x, norms })
    }

    /// Sub-matrix `[r0, r0+rows) x [c0, c0+cols)`.
    pub fn slice(&mut self, x: Var, r0: usize, rows: usize, c0: usize, cols: usize) -> Var {
        let (m, n) = self.dims(x);
        assert!(r0 + rows <= m && c0 + cols <= n, "slice out of bounds");
        let xs = self.value(x).data();
        let mut out = Vec::with_capacity(rows * cols);
        for r in r0..r0 + rows {
            out.extend_from_slice(&xs[r * n + c0..r * n + c0 + cols]);
        }
        self.push(Tensor::matrix(rows, cols, out), Op::Slice { x, r0, c0 })
    }

    /// Places each part at its `(row, col)` offset in a zero matrix.
    pub fn assemble(&mut self, rows: usize, cols: usize, parts: &[(Var, usize, usize)]) -> Var {
        let mut out = vec![T::zero(); rows * cols];
        for &(p, r0, c0) in parts {
            let (pm, pn) = self.dims(p);
            assert!(r0 + pm <= rows && c0 + pn <= cols, "assemble out of bounds");
            let ps = self.value(p).data();
            for r in 0..pm {
                out[(r0 + r) * cols + c0..(r0 + r) * cols + c0 + pn]
                    .copy_from_slice(&ps[r * pn..(r + 1) * pn]);
            }
        }
        self.push(Tensor::matrix(rows, cols, out), Op::Assemble(parts.to_vec()))
    }

    /// Mean over `rows` of `-log softmax(logits[row, cols] / tau)[0]`.
    pub fn sampled_nll(&mut self, logits: Var, rows: Vec<SampledRow>, tau: T) -> Var {
        let (_, n) = self.dims(logits);
        let l = self.value(logits).data();
        let inv_tau = T::one() / tau;
        let mut total = T::zero();
        let mut probs = Vec::with_capacity(rows.len());
        for s in &rows {
            let mut z: Vec<T> = s.cols.iter().map(|&c| l[s.row * n + c] * inv_tau).collect();
            let lse = log_sum_exp(&z);
            total += lse - z[0];
            for v in z.iter_mut() {
                *v = (*v - lse).exp();
            }
            probs.push(z);
        }
        let count = T::from_f64(rows.len().max(1) as f64);
        let t = Tensor::from_vec(&[1], vec![total / count]).expect("scalar");
        self.push(
            t,
            Op::SampledNll {
                logits,
                rows,
                inv_tau,
                probs,
            },
        )
    }

    /// Reverse sweep from a scalar `root`.
    pub fn backward(&self, root: Var) -> Gradients<T> {
        assert_eq!(self.value(root).numel(), 1, "backward needs a scalar root");
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(vec![T::one()]);

        fn acc<T: Scalar>(grads: &mut [Option<Vec<T>>], v: Var, len: usize) -> &mut [T] {
            grads[v.0].get_or_insert_with(|| vec![T::zero(); len])
        }

        for idx in (0..=root.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (m, k) = self.dims(*a);
                    let (_, n) = self.dims(*b);
                    let da = matmul_nt(&g, self.value(*b).data(), m, n, k);
                    add_into(acc(&mut grads, *a, m * k), &da);
                    let db = acc(&mut grads, *b, k * n);
                    matmul_tn_acc(self.value(*a).data(), &g, m, k, n, db);
                }
                Op::MatMulNT(a, b) => {
                    let (m, k) = self.dims(*a);
                    let (n, _) = self.dims(*b);
                    let da = matmul(&g, self.value(*b).data(), m, n, k);
                    add_into(acc(&mut grads, *a, m * k), &da);
                    let db = acc(&mut grads, *b, n * k);
                    matmul_tn_acc(&g, self.value(*a).data(), m, n, k, db);
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    add_into(acc(&mut grads, *b, g.len()), &g);
                }
                Op::AddRow(a, bias) => {
                    let (m, n) = self.dims(*a);
                    add_into(acc(&mut grads, *a, g.len()), &g);
                    let db = acc(&mut grads, *bias, n);
                    for r in 0..m {
                        add_into(db, &g[r * n..(r + 1) * n]);
                    }
                }
                Op::Scale(a, s) => {
                    let da = acc(&mut grads, *a, g.len());
                    for (d, &gv) in da.iter_mut().zip(&g) {
                        *d += gv * *s;
                    }
                }
                Op::Gelu(a) => {
                    let xs = self.value(*a).data();
                    let da = acc(&mut grads, *a, g.len());
                    for ((d, &gv), &x) in da.iter_mut().zip(&g).zip(xs) {
                        *d += gv * gelu_grad(x);
                    }
                }
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let (m, n) = self.dims(*x);
                    let gam = self.value(*gamma).data();
                    let nf = T::from_f64(n as f64);
                    {
                        let dg = acc(&mut grads, *gamma, n);
                        for r in 0..m {
                            for c in 0..n {
                                dg[c] += g[r * n + c] * xhat[r * n + c];
                            }
                        }
                    }
                    {
                        let db = acc(&mut grads, *beta, n);
                        for r in 0..m {
                            add_into(db, &g[r * n..(r + 1) * n]);
                        }
                    }
                    let dx = acc(&mut grads, *x, m * n);
                    let mut gh = vec![T::zero(); n];
                    for r in 0..m {
                        let xh = &xhat[r * n..(r + 1) * n];
                        for c in 0..n {
                            gh[c] = g[r * n + c] * gam[c];
                        }
                        let mean_g = gh.iter().copied().sum::<T>() / nf;
                        let mean_gx = dot(&gh, xh) / nf;
                        for c in 0..n {
                            dx[r * n + c] += inv_std[r] * (gh[c] - mean_g - xh[c] * mean_gx);
                        }
                    }
                }
                Op::SoftmaxRows(a) => {
                    let (m, n) = self.dims(*a);
                    let y = node.value.data();
                    let da = acc(&mut grads, *a, m * n);
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let s = dot(yr, gr);
                        for c in 0..n {
                            da[r * n + c] += yr[c] * (gr[c] - s);
                        }
                    }
                }
                Op::NormalizeRows { x, norms } => {
                    let (m, n) = self.dims(*x);
                    let y = node.value.data();
                    let dx = acc(&mut grads, *x, m * n);
                    for r in 0..m {
                        let yr = &y[r * n..(r + 1) * n];
                        let gr = &g[r * n..(r + 1) * n];
                        let s = dot(yr, gr);
                        for c in 0..n {
                            dx[r * n + c] += (gr[c] - yr[c] * s) / norms[r];
                        }
                    }
                }
                Op::Slice { x, r0, c0 } => {
                    let (_, n) = self.dims(*x);
                    let total = self.value(*x).numel();
                    let (pm, pn) = (node.value.rows(), node.value.cols());
                    let dx = acc(&mut grads, *x, total);
                    for r in 0..pm {
                        add_into(
                            &mut dx[(r0 + r) * n + c0..(r0 + r) * n + c0 + pn],
                            &g[r * pn..(r + 1) * pn],
                        );
                    }
                }
                Op::Assemble(parts) => {
                    let cols = node.value.cols();
                    for &(p, r0, c0) in parts {
                        let (pm, pn) = self.dims(p);
                        let dp = acc(&mut grads, p, pm * pn);
                        for r in 0..pm {
                            add_into(
                                &mut dp[r * pn..(r + 1) * pn],
                                &g[(r0 + r) * cols + c0..(r0 + r) * cols + c0 + pn],
                            );
                        }
                    }
                }
                Op::SampledNll {
                    logits,
                    rows,
                    inv_tau,
                    probs,
                } => {
                    let (m, n) = self.dims(*logits);
                    let scale = g[0] * *inv_tau / T::from_f64(rows.len().max(1) as f64);
                    let dl = acc(&mut grads, *logits, m * n);
                    for (s, p) in rows.iter().zip(probs) {
                        for (k, (&c, &pk)) in s.cols.iter().zip(p).enumerate() {
                            let target = if k == 0 { T::one() } else { T::zero() };
                            dl[s.row * n + c] += scale * (pk - target);
                        }
                    }
                }
            }
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub(crate) fn log_sum_exp<T: Scalar>(z: &[T]) -> T {
    let max = z.iter().copied().fold(T::neg_infinity(), T::max);
    if max == T::infinity() {
        return max;
    }
    max + z.iter().map(|&v| (v - max).exp()).sum::<T>().ln()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
fn gelu<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * (T::one() + t)
        + half * x * (T::one() - t * t) * c * (T::one() + T::from_f64(3.0) * a * x * x)
}
