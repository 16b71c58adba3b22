//! Central finite differences, used to validate [`Tape::backward`](super::Tape::backward).

use ndarray::Array2;

use crate::error::Result;

/// `(f(p + h e_i) - f(p - h e_i)) / 2h` for every entry of every tensor in
/// `params`. `f` receives the perturbed parameters.
pub fn finite_difference_gradient<F>(params: &[Array2<f64>], h: f64, mut f: F) -> Result<Vec<Array2<f64>>>
where
    F: FnMut(&[Array2<f64>]) -> Result<f64>,
{
    let mut work = params.to_vec();
    let mut out = Vec::with_capacity(params.len());
    for t in 0..params.len() {
        let mut g = Array2::zeros(params[t].raw_dim());
        let (rows, cols) = params[t].dim();
        for i in 0..rows {
            for j in 0..cols {
                let orig = work[t][[i, j]];
                work[t][[i, j]] = orig + h;
                let plus = f(&work)?;
                work[t][[i, j]] = orig - h;
                let minus = f(&work)?;
                work[t][[i, j]] = orig;
                g[[i, j]] = (plus - minus) / (2.0 * h);
            }
        }
        out.push(g);
    }
    Ok(out)
}

/// Largest `|a - b| / max(|a|, |b|, floor)` over all entries.
///
/// `floor` keeps entries whose true gradient is essentially zero from
/// dominating through round-off.
pub fn max_relative_error(analytic: &[Array2<f64>], numeric: &[Array2<f64>], floor: f64) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .flat_map(|(a, n)| a.iter().zip(n.iter()))
        .map(|(&a, &n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
        .fold(0.0, f64::max)
}
