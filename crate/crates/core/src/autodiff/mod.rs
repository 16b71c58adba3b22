//! A small define-by-run reverse-mode differentiation engine over dense
//! `f64` matrices.
//!
//! Every value is a 2-D array; scalars are `1 x 1`. The only broadcasting is
//! [`Tape::add_bias`], which adds a `1 x m` row to every row of an `n x m`
//! matrix. Each forward op checks its output for NaN/Inf and reports the op
//! by name.
//!
//! A [`Tape`] is rebuilt for every optimization step. Nodes are appended in
//! evaluation order, so reverse index order is a valid topological order and
//! [`Tape::backward`] visits each node once.

mod adam;
mod checkpoint;
mod gradcheck;

pub use adam::{Adam, AdamConfig};
pub use checkpoint::{load_tensors, read_tensors, save_tensors, write_tensors, NamedTensor};
pub use gradcheck::{finite_difference_gradient, max_relative_error};

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(&self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Sub(Var, Var),
    Scale(Var, f64),
    Mul(Var, Var),
    Tanh(Var),
    Relu(Var),
    Square(Var),
    Sum(Var),
    Mean(Var),
    RowwiseSqnorm(Var),
}

impl Op {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::MatMul(..) => "matmul",
            Op::Add(..) => "add",
            Op::AddBias(..) => "add_bias",
            Op::Sub(..) => "sub",
            Op::Scale(..) => "scale",
            Op::Mul(..) => "pointwise_mul",
            Op::Tanh(..) => "tanh",
            Op::Relu(..) => "relu",
            Op::Square(..) => "square",
            Op::Sum(..) => "sum",
            Op::Mean(..) => "mean",
            Op::RowwiseSqnorm(..) => "rowwise_sqnorm",
        }
    }
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

/// Gradients of a scalar with respect to every node that requires one.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Moves the gradient of `v` out; a node that received no gradient gets
    /// zeros of `shape`.
    pub fn take_or_zeros(&mut self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.grads
            .get_mut(v.0)
            .and_then(|g| g.take())
            .unwrap_or_else(|| Array2::zeros(shape))
    }
}

fn shape_of(a: &Array2<f64>) -> [usize; 2] {
    [a.nrows(), a.ncols()]
}

fn ensure_finite(a: &Array2<f64>, what: &str) -> Result<()> {
    if a.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what.to_string()))
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Result<Var> {
        ensure_finite(&value, "leaf")?;
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    /// A leaf that receives gradients.
    pub fn param(&mut self, value: Array2<f64>) -> Result<Var> {
        self.leaf(value, true)
    }

    /// A leaf that does not receive gradients.
    pub fn constant(&mut self, value: Array2<f64>) -> Result<Var> {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// The value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> Result<f64> {
        let a = self.value(v);
        if shape_of(a) != [1, 1] {
            return Err(Error::shape("scalar", &[1, 1], &shape_of(a)));
        }
        Ok(a[[0, 0]])
    }

    fn push(&mut self, value: Array2<f64>, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn record(&mut self, value: Array2<f64>, op: Op, parents: &[Var]) -> Result<Var> {
        ensure_finite(&value, op.name())?;
        let rg = parents.iter().any(|p| self.nodes[p.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (shape_of(self.value(a)), shape_of(self.value(b)));
        if sa != sb {
            return Err(Error::shape(op, &sa, &sb));
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (x, y) = (self.value(a), self.value(b));
        if x.ncols() != y.nrows() {
            return Err(Error::shape("matmul", &shape_of(x), &shape_of(y)));
        }
        let v = x.dot(y);
        self.record(v, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a) + self.value(b);
        self.record(v, Op::Add(a, b), &[a, b])
    }

    /// `a + 1 b^T`: adds the `1 x m` row `bias` to every row of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (x, b) = (self.value(a), self.value(bias));
        if b.nrows() != 1 || b.ncols() != x.ncols() {
            return Err(Error::shape("add_bias", &shape_of(x), &shape_of(b)));
        }
        let v = x + b;
        self.record(v, Op::AddBias(a, bias), &[a, bias])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a) - self.value(b);
        self.record(v, Op::Sub(a, b), &[a, b])
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Result<Var> {
        let v = self.value(a) * factor;
        self.record(v, Op::Scale(a, factor), &[a])
    }

    pub fn pointwise_mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("pointwise_mul", a, b)?;
        let v = self.value(a) * self.value(b);
        self.record(v, Op::Mul(a, b), &[a, b])
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(f64::tanh);
        self.record(v, Op::Tanh(a), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.record(v, Op::Relu(a), &[a])
    }

    pub fn square(&mut self, a: Var) -> Result<Var> {
        let v = self.value(a).mapv(|x| x * x);
        self.record(v, Op::Square(a), &[a])
    }

    /// Sum of all entries, as `1 x 1`.
    pub fn sum(&mut self, a: Var) -> Result<Var> {
        let v = Array2::from_elem((1, 1), self.value(a).sum());
        self.record(v, Op::Sum(a), &[a])
    }

    /// Mean of all entries, as `1 x 1`.
    pub fn mean(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        if x.is_empty() {
            return Err(Error::shape("mean", &[1, 1], &shape_of(x)));
        }
        let v = Array2::from_elem((1, 1), x.sum() / x.len() as f64);
        self.record(v, Op::Mean(a), &[a])
    }

    /// `||row_i||^2` for every row, as `n x 1`.
    pub fn rowwise_sqnorm(&mut self, a: Var) -> Result<Var> {
        let x = self.value(a);
        let v = x
            .map_axis(ndarray::Axis(1), |r| r.dot(&r))
            .insert_axis(ndarray::Axis(1));
        self.record(v, Op::RowwiseSqnorm(a), &[a])
    }

    /// Reverse pass from the scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lv = self.value(loss);
        if shape_of(lv) != [1, 1] {
            return Err(Error::shape("backward (loss must be scalar)", &[1, 1], &shape_of(lv)));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            ensure_finite(&g, &format!("backward of {}", node.op.name()))?;
            let rg = |v: Var| self.nodes[v.0].requires_grad;
            match node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if rg(a) {
                        accumulate(&mut grads[a.0], g.dot(&self.value(b).t()));
                    }
                    if rg(b) {
                        accumulate(&mut grads[b.0], self.value(a).t().dot(&g));
                    }
                }
                Op::Add(a, b) => {
                    if rg(b) {
                        accumulate(&mut grads[b.0], g.clone());
                    }
                    if rg(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::AddBias(a, b) => {
                    if rg(b) {
                        let gb = g.sum_axis(ndarray::Axis(0)).insert_axis(ndarray::Axis(0));
                        accumulate(&mut grads[b.0], gb);
                    }
                    if rg(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Sub(a, b) => {
                    if rg(b) {
                        accumulate(&mut grads[b.0], -&g);
                    }
                    if rg(a) {
                        accumulate(&mut grads[a.0], g);
                    }
                }
                Op::Scale(a, f) => {
                    if rg(a) {
                        accumulate(&mut grads[a.0], g * f);
                    }
                }
                Op::Mul(a, b) => {
                    if rg(a) {
                        accumulate(&mut grads[a.0], &g * self.value(b));
                    }
                    if rg(b) {
                        accumulate(&mut grads[b.0], &g * self.value(a));
                    }
                }
                Op::Tanh(a) => {
                    if rg(a) {
                        let mut ga = g;
                        Zip::from(&mut ga).and(&node.value).for_each(|g, &y| *g *= 1.0 - y * y);
                        accumulate(&mut grads[a.0], ga);
                    }
                }
                Op::Relu(a) => {
                    if rg(a) {
                        let mut ga = g;
                        Zip::from(&mut ga)
                            .and(self.value(a))
                            .for_each(|g, &x| if x <= 0.0 { *g = 0.0 });
                        accumulate(&mut grads[a.0], ga);
                    }
                }
                Op::Square(a) => {
                    if rg(a) {
                        let mut ga = g;
                        Zip::from(&mut ga).and(self.value(a)).for_each(|g, &x| *g *= 2.0 * x);
                        accumulate(&mut grads[a.0], ga);
                    }
                }
                Op::Sum(a) => {
                    if rg(a) {
                        let x = self.value(a);
                        accumulate(&mut grads[a.0], Array2::from_elem(x.raw_dim(), g[[0, 0]]));
                    }
                }
                Op::Mean(a) => {
                    if rg(a) {
                        let x = self.value(a);
                        let s = g[[0, 0]] / x.len() as f64;
                        accumulate(&mut grads[a.0], Array2::from_elem(x.raw_dim(), s));
                    }
                }
                Op::RowwiseSqnorm(a) => {
                    if rg(a) {
                        let mut ga = self.value(a) * 2.0;
                        Zip::from(ga.rows_mut())
                            .and(g.column(0))
                            .for_each(|mut row, &gi| row *= gi);
                        accumulate(&mut grads[a.0], ga);
                    }
                }
            }
        }
        for (idx, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                ensure_finite(g, &format!("gradient of {}", self.nodes[idx].op.name()))?;
            }
        }
        Ok(Gradients { grads })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn tanh_at_zero() {
        let mut t = Tape::new();
        let x = t.param(array![[0.0]]).unwrap();
        let y = t.tanh(x).unwrap();
        let s = t.sum(y).unwrap();
        assert_eq!(t.scalar(s).unwrap(), 0.0);
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap()[[0, 0]], 1.0);
    }

    #[test]
    fn rowwise_sqnorm_of_3_4() {
        let mut t = Tape::new();
        let x = t.param(array![[3.0, 4.0]]).unwrap();
        let n = t.rowwise_sqnorm(x).unwrap();
        assert_eq!(t.value(n)[[0, 0]], 25.0);
        let s = t.sum(n).unwrap();
        let g = t.backward(s).unwrap();
        assert_eq!(g.get(x).unwrap(), &array![[6.0, 8.0]]);
    }

    #[test]
    fn sum_and_mean_square_gradients() {
        let mut t = Tape::new();
        let data = array![[1.0, -2.0, 0.5, 4.0]];
        let x = t.param(data.clone()).unwrap();
        let s = t.sum(x).unwrap();
        let g = t.backward(s).unwrap();
        assert!(g.get(x).unwrap().iter().all(|&v| v == 1.0));

        let mut t = Tape::new();
        let x = t.param(data.clone()).unwrap();
        let sq = t.square(x).unwrap();
        let m = t.mean(sq).unwrap();
        let g = t.backward(m).unwrap();
        assert_eq!(g.get(x).unwrap(), &(&data * 2.0 / 4.0));
    }

    #[test]
    fn shape_errors() {
        let mut t = Tape::new();
        let a = t.constant(Array2::zeros((2, 3))).unwrap();
        let b = t.constant(Array2::zeros((2, 3))).unwrap();
        assert!(matches!(t.matmul(a, b), Err(Error::ShapeMismatch { op: "matmul", .. })));
        let c = t.constant(Array2::zeros((3, 2))).unwrap();
        assert!(t.add(a, c).is_err());
        let bias = t.constant(Array2::zeros((1, 2))).unwrap();
        assert!(t.add_bias(a, bias).is_err());
        assert!(t.backward(a).is_err());
    }

    #[test]
    fn non_finite_names_the_op() {
        let mut t = Tape::new();
        let a = t.constant(array![[1e200]]).unwrap();
        let err = t.square(a).unwrap_err();
        assert!(matches!(err, Error::NonFinite(ref op) if op == "square"), "{err}");
        assert!(t.leaf(array![[f64::NAN]], true).is_err());
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let a = t.constant(array![[2.0]]).unwrap();
        let b = t.param(array![[3.0]]).unwrap();
        let p = t.pointwise_mul(a, b).unwrap();
        let g = t.backward(p).unwrap();
        assert!(g.get(a).is_none());
        assert_eq!(g.get(b).unwrap()[[0, 0]], 2.0);
    }

    #[test]
    fn gradients_accumulate_over_reuse() {
        // f(x) = x*x + x  =>  f'(x) = 2x + 1
        let mut t = Tape::new();
        let x = t.param(array![[1.5]]).unwrap();
        let xx = t.pointwise_mul(x, x).unwrap();
        let f = t.add(xx, x).unwrap();
        let g = t.backward(f).unwrap();
        assert_eq!(g.get(x).unwrap()[[0, 0]], 4.0);
    }
}
