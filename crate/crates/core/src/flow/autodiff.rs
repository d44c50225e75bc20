//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] borrows a parameter list; the first `params.len()` variables
//! refer to those tensors without copying them. Every other variable is a
//! node recorded by an operation. [`Tape::backward`] seeds a scalar (1x1)
//! output with 1 and returns the gradient of every parameter.

use ndarray::{s, Array2, Axis, Order};

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Broadcast a `1×m` row over every row of `a`.
    AddRow(Var, Var),
    MulRow(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Silu(Var),
    SoftmaxRows(Var),
    /// Row-wise standardization; keeps the normalized rows and `1/σ`.
    Standardize(Var, Vec<f64>),
    ConcatRows(Vec<Var>),
    SliceRows(Var, usize, usize),
    Reshape(Var),
    /// Mean of squared entries, as a 1×1 matrix.
    MeanSquare(Var),
}

#[derive(Debug)]
struct Node {
    value: Mat,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;

pub struct Tape<'p> {
    params: &'p [Mat],
    nodes: Vec<Node>,
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p [Mat]) -> Self {
        Self { params, nodes: Vec::with_capacity(256) }
    }

    pub fn param(&self, i: usize) -> Var {
        assert!(i < self.params.len());
        Var(i)
    }

    pub fn value(&self, v: Var) -> &Mat {
        let np = self.params.len();
        if v.0 < np {
            &self.params[v.0]
        } else {
            &self.nodes[v.0 - np].value
        }
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.params.len() + self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b))
    }

    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b))
    }

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        debug_assert_eq!(self.value(row).nrows(), 1);
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::tanh);
        self.push(v, Op::Tanh(a))
    }

    pub fn silu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x * sigmoid(x));
        self.push(v, Op::Silu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.push(v, Op::SoftmaxRows(a))
    }

    /// Row-wise `(x - mean) / sqrt(var + eps)` without affine parameters.
    pub fn standardize(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut out = x.clone();
        let mut inv = Vec::with_capacity(x.nrows());
        for mut row in out.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|v| v - mean);
            let var = row.fold(0.0, |acc, &v| acc + v * v) / n;
            let is = 1.0 / (var + LAYER_NORM_EPS).sqrt();
            row.mapv_inplace(|v| v * is);
            inv.push(is);
        }
        self.push(out, Op::Standardize(a, inv))
    }

    /// Layer norm with gain and bias rows.
    pub fn layer_norm(&mut self, a: Var, gain: Var, bias: Var) -> Var {
        let z = self.standardize(a);
        let g = self.mul_row(z, gain);
        self.add_row(g, bias)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start, end))
    }

    /// Row-major reshape to `rows × cols`.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let v = self.value(a).to_shape(((rows, cols), Order::RowMajor)).expect("same element count").to_owned();
        self.push(v, Op::Reshape(a))
    }

    pub fn mean_square(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let v = x.fold(0.0, |acc, &e| acc + e * e) / x.len() as f64;
        self.push(Mat::from_elem((1, 1), v), Op::MeanSquare(a))
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    /// Gradients of the scalar `output` with respect to every parameter.
    pub fn backward(&self, output: Var) -> Vec<Mat> {
        let np = self.params.len();
        let total = np + self.nodes.len();
        let mut grads: Vec<Option<Mat>> = (0..total).map(|_| None).collect();
        grads[output.0] = Some(Mat::ones(self.value(output).raw_dim()));

        fn acc(grads: &mut [Option<Mat>], v: Var, g: Mat) {
            match &mut grads[v.0] {
                Some(existing) => *existing += &g,
                slot @ None => *slot = Some(g),
            }
        }

        for idx in (np..total).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx - np];
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::MatMulT(a, b) => {
                    let ga = g.dot(self.value(*b));
                    let gb = g.t().dot(self.value(*a));
                    acc(&mut grads, *a, ga);
                    acc(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    acc(&mut grads, *a, g.clone());
                    acc(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    acc(&mut grads, *b, -&g);
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let ga = &g * self.value(*row);
                    acc(&mut grads, *row, gr);
                    acc(&mut grads, *a, ga);
                }
                Op::Scale(a, k) => acc(&mut grads, *a, g * *k),
                Op::Tanh(a) => {
                    let ga = ndarray::Zip::from(&g).and(&node.value).map_collect(|&g, &y| g * (1.0 - y * y));
                    acc(&mut grads, *a, ga);
                }
                Op::Silu(a) => {
                    let ga = ndarray::Zip::from(&g).and(self.value(*a)).map_collect(|&g, &x| {
                        let s = sigmoid(x);
                        g * s * (1.0 + x * (1.0 - s))
                    });
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut grow, yrow) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = grow.sum();
                        grow.zip_mut_with(&yrow, |gv, &yv| *gv -= yv * dot);
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::Standardize(a, inv) => {
                    let xhat = &node.value;
                    let n = xhat.ncols() as f64;
                    let mut ga = g.clone();
                    for (r, (mut grow, xrow)) in ga.rows_mut().into_iter().zip(xhat.rows()).enumerate() {
                        let sum_g = grow.sum();
                        let sum_gx = grow.iter().zip(xrow.iter()).map(|(a, b)| a * b).sum::<f64>();
                        let is = inv[r];
                        grow.zip_mut_with(&xrow, |gv, &xv| {
                            *gv = is / n * (n * *gv - sum_g - xv * sum_gx);
                        });
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let rows = self.value(*p).nrows();
                        acc(&mut grads, *p, g.slice(s![start..start + rows, ..]).to_owned());
                        start += rows;
                    }
                }
                Op::SliceRows(a, start, end) => {
                    let mut ga = Mat::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![*start..*end, ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::Reshape(a) => {
                    let dim = self.value(*a).dim();
                    let ga = g.to_shape((dim, Order::RowMajor)).expect("same element count").to_owned();
                    acc(&mut grads, *a, ga);
                }
                Op::MeanSquare(a) => {
                    let x = self.value(*a);
                    let k = 2.0 * g[[0, 0]] / x.len() as f64;
                    acc(&mut grads, *a, x * k);
                }
            }
        }
        grads
            .into_iter()
            .take(np)
            .enumerate()
            .map(|(i, g)| g.unwrap_or_else(|| Mat::zeros(self.params[i].raw_dim())))
            .collect()
    }
}
