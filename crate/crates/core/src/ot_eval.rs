//! Exact optimal transport between equal-size empirical measures and the
//! transport-quality metrics built on it.
//!
//! Uniform empirical measures of equal size reduce the Kantorovich problem to
//! a linear assignment, solved exactly by the shortest-augmenting-path
//! Hungarian method in `O(n^3)`. Among all optimal assignments the
//! lexicographically smallest permutation is returned.

use std::collections::VecDeque;
use std::io::Write;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::TransportNet;
use crate::rng::Seeds;

/// Squared-distance cost matrix `C[i][j] = |a_i - b_j|^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    data: Array2<f64>,
}

impl CostMatrix {
    /// Wraps an arbitrary square matrix with finite, non-negative entries.
    pub fn new(data: Array2<f64>) -> Result<Self> {
        if data.nrows() != data.ncols() {
            return Err(Error::shape("cost matrix", &[data.nrows()], &[data.ncols()]));
        }
        if let Some(v) = data.iter().find(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("cost matrix entry {v}")));
        }
        if let Some(v) = data.iter().find(|&&v| v < 0.0) {
            return Err(Error::invalid(format!("cost matrix entry {v} is negative")));
        }
        Ok(CostMatrix { data })
    }

    /// Pairwise squared distances between the rows of `a` and `b`.
    ///
    /// Differences are formed explicitly so that identical rows give an
    /// exact zero.
    pub fn squared_euclidean(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<Self> {
        if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
            return Err(Error::shape("squared_euclidean", a.shape(), b.shape()));
        }
        let n = a.nrows();
        let mut data = Array2::zeros((n, n));
        for (i, ai) in a.rows().into_iter().enumerate() {
            for (j, bj) in b.rows().into_iter().enumerate() {
                let mut s = 0.0;
                for (x, y) in ai.iter().zip(bj.iter()) {
                    let d = x - y;
                    s += d * d;
                }
                data[[i, j]] = s;
            }
        }
        Self::new(data)
    }

    pub fn n(&self) -> usize {
        self.data.nrows()
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[[i, j]]
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    /// `sum_i C[i][perm[i]]`, accumulated in row order.
    pub fn permutation_cost(&self, perm: &[usize]) -> f64 {
        perm.iter().enumerate().map(|(i, &j)| self.data[[i, j]]).sum()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    /// `permutation[i]` is the column matched to row `i`.
    pub permutation: Vec<usize>,
    pub total_cost: f64,
}

/// Exact minimum-cost perfect matching with lexicographic tie-breaking.
pub fn solve_assignment(cost: &CostMatrix) -> Assignment {
    let n = cost.n();
    if n == 0 {
        return Assignment {
            permutation: Vec::new(),
            total_cost: 0.0,
        };
    }
    let (mut col_of, u, v) = hungarian(cost);
    let max_cost = cost.data.iter().copied().fold(0.0, f64::max);
    let tol = 1e-10 * max_cost.max(1.0);
    lexicographic_refine(cost, &u, &v, tol, &mut col_of);
    let total_cost = cost.permutation_cost(&col_of);
    Assignment {
        permutation: col_of,
        total_cost,
    }
}

/// Shortest augmenting paths with dual potentials. Returns the row-to-column
/// matching together with row and column potentials such that
/// `C[i][j] - u[i] - v[j] >= 0` with equality on matched pairs.
fn hungarian(cost: &CostMatrix) -> (Vec<usize>, Vec<f64>, Vec<f64>) {
    let n = cost.n();
    let c = cost.data.as_standard_layout();
    let c = c.as_slice().expect("standard layout");
    // 1-based internally, index 0 is a virtual column/row.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    let mut minv = vec![0.0; n + 1];
    // Unvisited columns, kept compact so the scans skip visited ones.
    let mut free: Vec<usize> = Vec::with_capacity(n);
    let mut visited: Vec<usize> = Vec::with_capacity(n + 1);
    // Column reduction: start from the feasible duals v_j = min_i C[i][j].
    for j in 1..=n {
        v[j] = (0..n).map(|i| c[i * n + j - 1]).fold(f64::INFINITY, f64::min);
    }
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        minv.fill(f64::INFINITY);
        free.clear();
        free.extend(1..=n);
        visited.clear();
        loop {
            visited.push(j0);
            let i0 = p[j0];
            let row = &c[(i0 - 1) * n..i0 * n];
            let ui = u[i0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0usize;
            let mut k1 = 0usize;
            for (k, &j) in free.iter().enumerate() {
                let cur = row[j - 1] - ui - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                // On ties prefer an unmatched column, which ends the search.
                if minv[j] < delta || (minv[j] == delta && p[j] == 0 && p[j1] != 0) {
                    delta = minv[j];
                    j1 = j;
                    k1 = k;
                }
            }
            for &j in &visited {
                u[p[j]] += delta;
                v[j] -= delta;
            }
            for &j in &free {
                minv[j] -= delta;
            }
            free.remove(k1);
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut col_of = vec![0usize; n];
    for j in 1..=n {
        col_of[p[j] - 1] = j - 1;
    }
    (col_of, u[1..].to_vec(), v[1..].to_vec())
}

/// Moves to the lexicographically smallest matching among those that use only
/// tight edges (reduced cost within `tol`), which are exactly the optimal
/// ones. Rows are fixed in order; each row takes the lowest column for which
/// the remaining unlocked rows can still be perfectly matched on tight edges.
fn lexicographic_refine(cost: &CostMatrix, u: &[f64], v: &[f64], tol: f64, col_of: &mut [usize]) {
    let n = cost.n();
    let c = &cost.data;
    let tight = |i: usize, j: usize| c[[i, j]] - u[i] - v[j] <= tol;
    let mut row_of = vec![0usize; n];
    for (i, &j) in col_of.iter().enumerate() {
        row_of[j] = i;
    }
    let mut locked = vec![false; n];
    let mut visited = vec![false; n];
    let mut discovered_by = vec![0usize; n];
    let mut queue = VecDeque::new();

    for i in 0..n {
        let old = col_of[i];
        for j in 0..old {
            if locked[j] || !tight(i, j) {
                continue;
            }
            // Row `r` gives up column `j`; search an alternating path of tight
            // edges from `r` to the column `old` that row `i` releases.
            let r = row_of[j];
            visited.fill(false);
            visited[j] = true;
            queue.clear();
            queue.push_back(r);
            let mut found = false;
            'bfs: while let Some(q) = queue.pop_front() {
                for col in 0..n {
                    if visited[col] || locked[col] || !tight(q, col) {
                        continue;
                    }
                    visited[col] = true;
                    discovered_by[col] = q;
                    if col == old {
                        found = true;
                        break 'bfs;
                    }
                    queue.push_back(row_of[col]);
                }
            }
            if !found {
                continue;
            }
            let mut col = old;
            loop {
                let q = discovered_by[col];
                let prev = col_of[q];
                col_of[q] = col;
                row_of[col] = q;
                if q == r {
                    break;
                }
                col = prev;
            }
            col_of[i] = j;
            row_of[j] = i;
            break;
        }
        locked[col_of[i]] = true;
    }
}

/// Exhaustive search over all permutations in lexicographic order; the first
/// minimum found is kept. Only for `n <= 8`.
pub fn brute_force_assignment(cost: &CostMatrix) -> Result<Assignment> {
    let n = cost.n();
    if n > 8 {
        return Err(Error::invalid(format!("brute force limited to n <= 8, got {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    let mut best = Assignment {
        total_cost: cost.permutation_cost(&perm),
        permutation: perm.clone(),
    };
    while next_permutation(&mut perm) {
        let c = cost.permutation_cost(&perm);
        if c < best.total_cost {
            best = Assignment {
                permutation: perm.clone(),
                total_cost: c,
            };
        }
    }
    Ok(best)
}

fn next_permutation(p: &mut [usize]) -> bool {
    if p.len() < 2 {
        return false;
    }
    let mut i = p.len() - 1;
    while i > 0 && p[i - 1] >= p[i] {
        i -= 1;
    }
    if i == 0 {
        return false;
    }
    let mut j = p.len() - 1;
    while p[j] <= p[i - 1] {
        j -= 1;
    }
    p.swap(i - 1, j);
    p[i..].reverse();
    true
}

fn check_pair(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.nrows() != b.nrows() || a.ncols() != b.ncols() {
        return Err(Error::shape("empirical measures", a.shape(), b.shape()));
    }
    if a.nrows() == 0 {
        return Err(Error::invalid("empirical measures must be nonempty"));
    }
    Ok(())
}

/// Squared 2-Wasserstein distance between two uniform empirical measures of
/// equal size.
pub fn empirical_w2sq(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    check_pair(a, b)?;
    let cost = CostMatrix::squared_euclidean(a, b)?;
    Ok(solve_assignment(&cost).total_cost / a.nrows() as f64)
}

pub fn brute_force_w2sq(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<f64> {
    check_pair(a, b)?;
    let cost = CostMatrix::squared_euclidean(a, b)?;
    Ok(brute_force_assignment(&cost)?.total_cost / a.nrows() as f64)
}

/// Anything that maps a batch of coefficient vectors to another.
pub trait TransportMap {
    fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

impl TransportMap for TransportNet {
    fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward(x)
    }
}

/// Adapter for closures.
pub struct FnMap<F>(pub F);

impl<F> TransportMap for FnMap<F>
where
    F: Fn(ArrayView2<'_, f64>) -> Array2<f64>,
{
    fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok((self.0)(x))
    }
}

pub struct Identity;

impl TransportMap for Identity {
    fn apply(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(x.to_owned())
    }
}

fn mapped(t: &dyn TransportMap, source: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
    let y = t.apply(source)?;
    if y.dim() != source.dim() {
        return Err(Error::shape("transport map output", source.shape(), y.shape()));
    }
    Ok(y)
}

/// `mean_i |T(x_i) - x_i|^2`.
pub fn mean_transport_cost(source: ArrayView2<'_, f64>, transported: ArrayView2<'_, f64>) -> Result<f64> {
    check_pair(source, transported)?;
    let d = &transported - &source;
    Ok(d.rows().into_iter().map(|r| r.dot(&r)).sum::<f64>() / source.nrows() as f64)
}

/// `|W2^2(source, target) - mean_i |T(x_i) - x_i|^2|`, with `T` applied to
/// the clean source.
pub fn d_cost(t: &dyn TransportMap, source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
    check_pair(source, target)?;
    let y = mapped(t, source)?;
    Ok((empirical_w2sq(source, target)? - mean_transport_cost(source, y.view())?).abs())
}

/// `W2^2(T#source, target)`.
pub fn d_target(t: &dyn TransportMap, source: ArrayView2<'_, f64>, target: ArrayView2<'_, f64>) -> Result<f64> {
    check_pair(source, target)?;
    let y = mapped(t, source)?;
    empirical_w2sq(y.view(), target)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub d_cost: f64,
    pub d_target: f64,
    pub w2sq_mu_nu: f64,
    pub mean_transport_cost: f64,
    pub n: usize,
    pub seeds: Seeds,
}

pub const METRICS_CSV_HEADER: &str =
    "d_cost,d_target,w2sq_mu_nu,mean_transport_cost,n,seed_data,seed_noise,seed_init,seed_eval";

impl MetricsReport {
    /// Both metrics from one pass (the map is applied once).
    pub fn compute(
        t: &dyn TransportMap,
        source: ArrayView2<'_, f64>,
        target: ArrayView2<'_, f64>,
        seeds: Seeds,
    ) -> Result<Self> {
        check_pair(source, target)?;
        let y = mapped(t, source)?;
        let w2sq_mu_nu = empirical_w2sq(source, target)?;
        let mean_transport_cost = mean_transport_cost(source, y.view())?;
        let d_target = empirical_w2sq(y.view(), target)?;
        Ok(MetricsReport {
            d_cost: (w2sq_mu_nu - mean_transport_cost).abs(),
            d_target,
            w2sq_mu_nu,
            mean_transport_cost,
            n: source.nrows(),
            seeds,
        })
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{}",
            self.d_cost,
            self.d_target,
            self.w2sq_mu_nu,
            self.mean_transport_cost,
            self.n,
            self.seeds.data,
            self.seeds.noise,
            self.seeds.init,
            self.seeds.eval
        )
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{METRICS_CSV_HEADER}")?;
        writeln!(out, "{}", self.csv_row())?;
        Ok(())
    }

    /// Single-line JSON record.
    pub fn to_json_line(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }
}
