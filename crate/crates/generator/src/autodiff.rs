//! A small reverse-mode tape over dense `f64` matrices.
//!
//! Every operation appends a node holding its value; [`Tape::backward`]
//! walks the nodes in reverse and accumulates gradients for parameter
//! leaves.

use ndarray::{s, Array2, Axis, Zip};

use crate::params::{ParamId, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Clone, Debug)]
enum Op {
    Leaf(Option<ParamId>),
    MatMul(Var, Var),
    /// `a * b^T`
    MatMulT(Var, Var),
    Add(Var, Var),
    /// Adds a `1 x n` row to every row of `a`.
    AddRow(Var, Var),
    Scale(Var, f64),
    Gelu(Var),
    LayerNorm(Var),
    SoftmaxRows(Var),
    SliceRows(Var, usize, usize),
    SliceCols(Var, usize, usize),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    Mse(Var, Array2<f64>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
}

pub const LAYER_NORM_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + 0.044715 * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let u = GELU_C * (x + 0.044715 * x * x * x);
    let th = u.tanh();
    0.5 * (1.0 + th) + 0.5 * x * (1.0 - th * th) * GELU_C * (1.0 + 3.0 * 0.044715 * x * x)
}

fn layer_norm(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let n = row.len() as f64;
        let mean = row.sum() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let r = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * r);
    }
    y
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut y = x.clone();
    for mut row in y.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, b| a.max(*b));
        row.mapv_inplace(|v| (v - m).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    y
}

/// Gradients indexed by parameter id; `None` for parameters the loss does
/// not reach.
pub type ParamGrads = Vec<Option<Array2<f64>>>;

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf(None))
    }

    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        self.push(store.value(id).clone(), Op::Leaf(Some(id)))
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

    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        assert_eq!(self.shape(row).0, 1, "add_row expects a single row");
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let v = self.value(a) * s;
        self.push(v, Op::Scale(a, s))
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(gelu);
        self.push(v, Op::Gelu(a))
    }

    /// Row-wise normalization to zero mean and unit variance.
    pub fn layer_norm(&mut self, a: Var) -> Var {
        let v = layer_norm(self.value(a));
        self.push(v, Op::LayerNorm(a))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let v = softmax_rows(self.value(a));
        self.push(v, Op::SoftmaxRows(a))
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start, end))
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start, end))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(0), &views).expect("column counts agree");
        self.push(v, Op::ConcatRows(parts.to_vec()))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        self.push(v, Op::ConcatCols(parts.to_vec()))
    }

    /// Mean of squared differences to a constant target, as a `1 x 1` node.
    pub fn mse(&mut self, a: Var, target: Array2<f64>) -> Var {
        assert_eq!(self.shape(a), target.dim(), "mse shape mismatch");
        let n = target.len().max(1) as f64;
        let sum: f64 = Zip::from(self.value(a))
            .and(&target)
            .fold(0.0, |acc, x, t| acc + (x - t) * (x - t));
        self.push(Array2::from_elem((1, 1), sum / n), Op::Mse(a, target))
    }

    /// Backpropagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var, n_params: usize) -> ParamGrads {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        let mut out: ParamGrads = vec![None; n_params];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        fn acc(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
            match &mut grads[v.0] {
                Some(x) => *x += &g,
                slot => *slot = Some(g),
            }
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            match &node.op {
                Op::Leaf(Some(id)) => match &mut out[id.0] {
                    Some(x) => *x += &g,
                    slot => *slot = Some(g),
                },
                Op::Leaf(None) => {}
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
                    acc(&mut grads, *b, g.clone());
                    acc(&mut grads, *a, g);
                }
                Op::AddRow(a, r) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    acc(&mut grads, *r, gr);
                    acc(&mut grads, *a, g);
                }
                Op::Scale(a, s) => acc(&mut grads, *a, g * *s),
                Op::Gelu(a) => {
                    let mut ga = g;
                    Zip::from(&mut ga)
                        .and(self.value(*a))
                        .for_each(|d, x| *d *= gelu_grad(*x));
                    acc(&mut grads, *a, ga);
                }
                Op::LayerNorm(a) => {
                    let x = self.value(*a);
                    let y = &node.value;
                    let mut ga = Array2::zeros(x.dim());
                    for r in 0..x.nrows() {
                        let xr = x.row(r);
                        let n = xr.len() as f64;
                        let mean = xr.sum() / n;
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
                        let rstd = 1.0 / (var + LAYER_NORM_EPS).sqrt();
                        let (gr, yr) = (g.row(r), y.row(r));
                        let mg = gr.sum() / n;
                        let mgy = gr.dot(&yr) / n;
                        Zip::from(ga.row_mut(r))
                            .and(&gr)
                            .and(&yr)
                            .for_each(|d, gv, yv| *d = rstd * (gv - mg - yv * mgy));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let dot = g.row(r).dot(&y.row(r));
                        Zip::from(ga.row_mut(r))
                            .and(g.row(r))
                            .and(y.row(r))
                            .for_each(|d, gv, yv| *d = yv * (gv - dot));
                    }
                    acc(&mut grads, *a, ga);
                }
                Op::SliceRows(a, s0, s1) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![*s0..*s1, ..]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, s0, s1) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga.slice_mut(s![.., *s0..*s1]).assign(&g);
                    acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.shape(*p).0;
                        acc(&mut grads, *p, g.slice(s![off..off + n, ..]).to_owned());
                        off += n;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let n = self.shape(*p).1;
                        acc(&mut grads, *p, g.slice(s![.., off..off + n]).to_owned());
                        off += n;
                    }
                }
                Op::Mse(a, target) => {
                    let n = target.len().max(1) as f64;
                    let k = 2.0 * g[[0, 0]] / n;
                    let ga = (self.value(*a) - target) * k;
                    acc(&mut grads, *a, ga);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::params::ParamGroup;
    use ndarray::array;

    /// Central-difference check of `f` with respect to every entry of
    /// parameter `id`.
    fn check(store: &mut ParamStore, id: ParamId, f: impl Fn(&mut Tape, &ParamStore) -> Var) {
        let mut tape = Tape::new();
        let loss = f(&mut tape, store);
        let grads = tape.backward(loss, store.len());
        let g = grads[id.0].clone().unwrap();
        let h = 1e-6;
        let n = store.value(id).len();
        for k in 0..n {
            let orig = store.value(id).as_slice().unwrap()[k];
            store.value_mut(id).as_slice_mut().unwrap()[k] = orig + h;
            let mut t1 = Tape::new();
            let l1 = f(&mut t1, store);
            let lp = t1.value(l1)[[0, 0]];
            store.value_mut(id).as_slice_mut().unwrap()[k] = orig - h;
            let mut t2 = Tape::new();
            let l2 = f(&mut t2, store);
            let lm = t2.value(l2)[[0, 0]];
            store.value_mut(id).as_slice_mut().unwrap()[k] = orig;
            let fd = (lp - lm) / (2.0 * h);
            let an = g.as_slice().unwrap()[k];
            assert!(
                (fd - an).abs() <= 1e-6 * (1.0 + fd.abs().max(an.abs())),
                "entry {k}: fd {fd} analytic {an}"
            );
        }
    }

    #[test]
    fn all_ops_match_finite_differences() {
        let mut store = ParamStore::default();
        let a = store.add("a", array![[0.3, -1.2, 0.5], [0.7, 0.1, -0.4]], ParamGroup::Backbone);
        let b = store.add("b", array![[0.2, 0.9], [-0.6, 0.4], [1.1, -0.3]], ParamGroup::Backbone);
        let r = store.add("r", array![[0.05, -0.2, 0.3]], ParamGroup::Backbone);
        let target = array![[0.1, 0.2, 0.3, 0.4, 0.5], [0.0, -0.1, 0.2, -0.3, 0.4]];
        let f = |tape: &mut Tape, st: &ParamStore| {
            let va = tape.param(st, a);
            let vb = tape.param(st, b);
            let vr = tape.param(st, r);
            let x = tape.add_row(va, vr);
            let x = tape.layer_norm(x);
            let y = tape.matmul(x, vb);
            let y = tape.gelu(y);
            let z = tape.matmul_t(y, y);
            let z = tape.softmax_rows(z);
            let z = tape.scale(z, 1.7);
            let top = tape.slice_rows(x, 0, 1);
            let both = tape.concat_rows(&[top, top]);
            let c = tape.slice_cols(both, 1, 3);
            let w = tape.add(c, y);
            let out = tape.concat_cols(&[w, z, x]);
            let out = tape.slice_cols(out, 0, 5);
            tape.mse(out, target.clone())
        };
        for id in [a, b, r] {
            check(&mut store, id, f);
        }
    }

    #[test]
    fn unreached_params_have_no_gradient() {
        let mut store = ParamStore::default();
        let a = store.add("a", array![[1.0]], ParamGroup::Backbone);
        store.add("b", array![[2.0]], ParamGroup::Lora);
        let mut tape = Tape::new();
        let va = tape.param(&store, a);
        let l = tape.mse(va, array![[0.0]]);
        let g = tape.backward(l, store.len());
        assert_eq!(g[0].as_ref().unwrap()[[0, 0]], 2.0);
        assert!(g[1].is_none());
    }
}
