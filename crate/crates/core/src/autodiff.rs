//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Tape`] records every operation in evaluation order. Each node stores its
//! value, so [`Tape::backward`] only walks the list once in reverse. Scalars are
//! `1 × 1` matrices. All reductions run in a fixed order, which keeps gradients
//! bit-reproducible.

use std::sync::Arc;

use ndarray::{Array2, Axis, Zip};

use crate::sparse::CsrMatrix;

pub type Mat = Array2<f64>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    /// `a · bᵀ`
    MatMulNt(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Elu(Var),
    SoftmaxRows(Var),
    Sparse(Arc<CsrMatrix>, Var),
    HeadMix { q: Var, h: Var, heads: usize },
    SliceCols(Var, usize),
    Reshape(Var),
    Sum(Var),
    Chamfer { a: Var, b: Var, a_to_b: Vec<usize>, b_to_a: Vec<usize> },
    NormalConsistency { pos: Var, faces: Arc<Vec<[usize; 3]>>, pairs: Arc<Vec<(usize, usize)>> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Mat,
    op: Op,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients indexed by [`Var`]; `None` where no gradient reached the node.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of `shape` if nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Mat {
        self.grads[v.0].clone().unwrap_or_else(|| Mat::zeros(shape))
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Mat, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    pub fn scalar(&self, v: Var) -> f64 {
        let m = self.value(v);
        debug_assert_eq!(m.dim(), (1, 1));
        m[[0, 0]]
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).dim()
    }

    pub fn leaf(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A fresh leaf carrying the value of `v`; gradients stop here.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.value(v).clone();
        self.leaf(value)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    /// `a · bᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        self.push(value, Op::MatMulNt(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        self.push(value, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        self.push(value, Op::Mul(a, b))
    }

    /// Adds the `1 × d` row `row` to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a single row");
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a) * s;
        self.push(value, Op::Scale(a, s))
    }

    pub fn offset(&mut self, a: Var, c: f64) -> Var {
        let value = self.value(a) + c;
        self.push(value, Op::Offset(a))
    }

    pub fn exp(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::exp);
        self.push(value, Op::Exp(a))
    }

    pub fn elu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| if x > 0.0 { x } else { x.exp_m1() });
        self.push(value, Op::Elu(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        self.push(value, Op::SoftmaxRows(a))
    }

    /// Constant sparse matrix times `a`.
    pub fn sparse(&mut self, m: &Arc<CsrMatrix>, a: Var) -> Var {
        let value = m.mul_dense(self.value(a));
        self.push(value, Op::Sparse(Arc::clone(m), a))
    }

    /// Per-row mixture of `heads` blocks: `out[e, o] = Σ_m q[e, m] · h[e, m·d + o]`.
    pub fn head_mix(&mut self, q: Var, h: Var, heads: usize) -> Var {
        let (rows, qm) = self.shape(q);
        let (hrows, hcols) = self.shape(h);
        assert_eq!(qm, heads);
        assert_eq!(rows, hrows);
        assert_eq!(hcols % heads, 0);
        let d = hcols / heads;
        let qv = self.value(q);
        let hv = self.value(h);
        let mut out = Mat::zeros((rows, d));
        for e in 0..rows {
            for m in 0..heads {
                let w = qv[[e, m]];
                for o in 0..d {
                    out[[e, o]] += w * hv[[e, m * d + o]];
                }
            }
        }
        self.push(out, Op::HeadMix { q, h, heads })
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let value = self.value(a).slice(ndarray::s![.., start..end]).to_owned();
        self.push(value, Op::SliceCols(a, start))
    }

    /// Row-major reshape.
    pub fn reshape(&mut self, a: Var, rows: usize, cols: usize) -> Var {
        let flat: Vec<f64> = self.value(a).iter().copied().collect();
        let value = Mat::from_shape_vec((rows, cols), flat).expect("reshape size mismatch");
        self.push(value, Op::Reshape(a))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Mat::from_elem((1, 1), s), Op::Sum(a))
    }

    /// Sum of squared entries.
    pub fn sum_sq(&mut self, a: Var) -> Var {
        let sq = self.mul(a, a);
        self.sum(sq)
    }

    /// Chamfer distance between the rows of `a` and `b` (sum of squared nearest-neighbour
    /// distances in both directions).
    pub fn chamfer(&mut self, a: Var, b: Var) -> Var {
        let (value, a_to_b, b_to_a) = {
            let av = self.value(a);
            let bv = self.value(b);
            let (sa, a_to_b) = nearest(av, bv);
            let (sb, b_to_a) = nearest(bv, av);
            (sa + sb, a_to_b, b_to_a)
        };
        self.push(Mat::from_elem((1, 1), value), Op::Chamfer { a, b, a_to_b, b_to_a })
    }

    /// Mean of `1 − cos θ` over face pairs sharing an edge, with positions taken from
    /// the `N × 3` node `pos`.
    pub fn normal_consistency(
        &mut self,
        pos: Var,
        faces: &Arc<Vec<[usize; 3]>>,
        pairs: &Arc<Vec<(usize, usize)>>,
    ) -> Var {
        let value = {
            let p = self.value(pos);
            let units: Vec<[f64; 3]> = faces.iter().map(|f| face_frame(p, f).2).collect();
            let total: f64 = pairs.iter().map(|&(f, g)| 1.0 - dot3(&units[f], &units[g])).sum();
            total / pairs.len() as f64
        };
        self.push(
            Mat::from_elem((1, 1), value),
            Op::NormalConsistency { pos, faces: Arc::clone(faces), pairs: Arc::clone(pairs) },
        )
    }

    /// Reverse sweep from the scalar `output`.
    pub fn backward(&self, output: Var) -> Gradients {
        assert_eq!(self.shape(output), (1, 1), "backward expects a scalar output");
        let mut grads: Vec<Option<Mat>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(Mat::ones((1, 1)));

        for idx in (0..=output.0).rev() {
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let da = g.dot(&self.value(*b).t());
                    let db = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::MatMulNt(a, b) => {
                    let da = g.dot(self.value(*b));
                    let db = g.t().dot(self.value(*a));
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *a, g.clone());
                    accumulate(&mut grads, *b, g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut grads, *b, -&g);
                    accumulate(&mut grads, *a, g);
                }
                Op::Mul(a, b) => {
                    let da = &g * self.value(*b);
                    let db = &g * self.value(*a);
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::AddRow(a, row) => {
                    let drow = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, drow);
                    accumulate(&mut grads, *a, g);
                }
                Op::Scale(a, s) => accumulate(&mut grads, *a, g * *s),
                Op::Offset(a) => accumulate(&mut grads, *a, g),
                Op::Exp(a) => accumulate(&mut grads, *a, g * &node.value),
                Op::Elu(a) => {
                    let mut da = g;
                    Zip::from(&mut da)
                        .and(&node.value)
                        .for_each(|d, &y| if y <= 0.0 { *d *= y + 1.0 });
                    accumulate(&mut grads, *a, da);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let gy = &g * y;
                    let row_dot = gy.sum_axis(Axis(1)).insert_axis(Axis(1));
                    let da = gy - &(y * &row_dot);
                    accumulate(&mut grads, *a, da);
                }
                Op::Sparse(m, a) => accumulate(&mut grads, *a, m.tmul_dense(&g)),
                Op::HeadMix { q, h, heads } => {
                    let qv = self.value(*q);
                    let hv = self.value(*h);
                    let (rows, d) = g.dim();
                    let mut dq = Mat::zeros(qv.dim());
                    let mut dh = Mat::zeros(hv.dim());
                    for e in 0..rows {
                        for m in 0..*heads {
                            let w = qv[[e, m]];
                            let mut acc = 0.0;
                            for o in 0..d {
                                let go = g[[e, o]];
                                acc += go * hv[[e, m * d + o]];
                                dh[[e, m * d + o]] = w * go;
                            }
                            dq[[e, m]] = acc;
                        }
                    }
                    accumulate(&mut grads, *q, dq);
                    accumulate(&mut grads, *h, dh);
                }
                Op::SliceCols(a, start) => {
                    let mut da = Mat::zeros(self.shape(*a));
                    let end = start + g.ncols();
                    da.slice_mut(ndarray::s![.., *start..end]).assign(&g);
                    accumulate(&mut grads, *a, da);
                }
                Op::Reshape(a) => {
                    let shape = self.shape(*a);
                    let flat: Vec<f64> = g.iter().copied().collect();
                    accumulate(&mut grads, *a, Mat::from_shape_vec(shape, flat).unwrap());
                }
                Op::Sum(a) => {
                    let s = g[[0, 0]];
                    accumulate(&mut grads, *a, Mat::from_elem(self.shape(*a), s));
                }
                Op::Chamfer { a, b, a_to_b, b_to_a } => {
                    let s = g[[0, 0]];
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let mut da = Mat::zeros(av.dim());
                    let mut db = Mat::zeros(bv.dim());
                    for (i, &j) in a_to_b.iter().enumerate() {
                        for c in 0..av.ncols() {
                            let diff = 2.0 * s * (av[[i, c]] - bv[[j, c]]);
                            da[[i, c]] += diff;
                            db[[j, c]] -= diff;
                        }
                    }
                    for (j, &i) in b_to_a.iter().enumerate() {
                        for c in 0..bv.ncols() {
                            let diff = 2.0 * s * (bv[[j, c]] - av[[i, c]]);
                            db[[j, c]] += diff;
                            da[[i, c]] -= diff;
                        }
                    }
                    accumulate(&mut grads, *a, da);
                    accumulate(&mut grads, *b, db);
                }
                Op::NormalConsistency { pos, faces, pairs } => {
                    let s = g[[0, 0]] / pairs.len() as f64;
                    let p = self.value(*pos);
                    let frames: Vec<_> = faces.iter().map(|f| face_frame(p, f)).collect();
                    // dL/du_f accumulated over the face's neighbours
                    let mut du = vec![[0.0; 3]; faces.len()];
                    for &(f, h) in pairs.iter() {
                        for c in 0..3 {
                            du[f][c] -= s * frames[h].2[c];
                            du[h][c] -= s * frames[f].2[c];
                        }
                    }
                    let mut dp = Mat::zeros(p.dim());
                    for (fi, face) in faces.iter().enumerate() {
                        let (e1, e2, u, norm) = frames[fi];
                        // through normalisation: dn = (I − u uᵀ) du / |n|
                        let ud = dot3(&u, &du[fi]);
                        let dn = [
                            (du[fi][0] - u[0] * ud) / norm,
                            (du[fi][1] - u[1] * ud) / norm,
                            (du[fi][2] - u[2] * ud) / norm,
                        ];
                        // n = e1 × e2
                        let de1 = cross3(&e2, &dn);
                        let de2 = cross3(&dn, &e1);
                        for c in 0..3 {
                            dp[[face[1], c]] += de1[c];
                            dp[[face[2], c]] += de2[c];
                            dp[[face[0], c]] -= de1[c] + de2[c];
                        }
                    }
                    accumulate(&mut grads, *pos, dp);
                }
            }
        }
        // intermediate slots were consumed above; only leaves keep gradients
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Mat>], v: Var, g: Mat) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot => *slot = Some(g),
    }
}

pub fn softmax_rows(x: &Mat) -> Mat {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    out
}

/// Sum of squared nearest-neighbour distances from each row of `a` to `b`, plus the argmins.
fn nearest(a: &Mat, b: &Mat) -> (f64, Vec<usize>) {
    let mut total = 0.0;
    let mut idx = Vec::with_capacity(a.nrows());
    for ra in a.rows() {
        let mut best = f64::INFINITY;
        let mut best_j = 0;
        for (j, rb) in b.rows().into_iter().enumerate() {
            let mut d = 0.0;
            for (x, y) in ra.iter().zip(rb.iter()) {
                d += (x - y) * (x - y);
            }
            if d < best {
                best = d;
                best_j = j;
            }
        }
        total += best;
        idx.push(best_j);
    }
    (total, idx)
}

/// Edge vectors, unit normal and normal length of a face.
fn face_frame(p: &Mat, f: &[usize; 3]) -> ([f64; 3], [f64; 3], [f64; 3], f64) {
    let e1 = [p[[f[1], 0]] - p[[f[0], 0]], p[[f[1], 1]] - p[[f[0], 1]], p[[f[1], 2]] - p[[f[0], 2]]];
    let e2 = [p[[f[2], 0]] - p[[f[0], 0]], p[[f[2], 1]] - p[[f[0], 1]], p[[f[2], 2]] - p[[f[0], 2]]];
    let n = cross3(&e1, &e2);
    let norm = dot3(&n, &n).sqrt().max(1e-300);
    (e1, e2, [n[0] / norm, n[1] / norm, n[2] / norm], norm)
}

pub(crate) fn cross3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 3] {
    [a[1] * b[2] - a[2] * b[1], a[2] * b[0] - a[0] * b[2], a[0] * b[1] - a[1] * b[0]]
}

pub(crate) fn dot3(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}
