//! The invariant suite behind `hilbert-ot check`: basis orthonormality and
//! Parseval, sampler statistics, gradient checks, the assignment oracle and
//! the analytic oracle costs.
//!
//! Quick mode runs the Monte Carlo checks with `N = 10^4` instead of `10^5`
//! and widens their tolerances by `sqrt(10)`.

use std::time::Instant;

use ndarray::Array2;
use rand::Rng as _;
use serde::Serialize;

use crate::autodiff::{finite_difference_gradient, max_relative_error, Tape, Var};
use crate::datasets::{self, DatasetKind};
use crate::error::{Error, Result};
use crate::gaussian::{CovarianceSpec, NoiseSchedule};
use crate::models::{Activation, NetworkConfig, PotentialNet, TransportNet};
use crate::ot_eval::{brute_force_assignment, empirical_w2sq, solve_assignment, CostMatrix};
use crate::rng::{stream, Rng, Stream};
use crate::spectral::{gram_matrix, project, reconstruct, uniform_grid, BasisKind, BasisSpec, FunctionSample};
use crate::trainer::{self, FnPotential};

/// Seed of every random instance in the suite.
const CHECK_SEED: u64 = 20_240_601;
/// Finite-difference step and acceptance threshold of the gradient checks.
pub const FD_STEP: f64 = 1e-4;
pub const FD_TOLERANCE: f64 = 1e-5;
/// Entries whose gradient magnitude is below this are compared absolutely.
const FD_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// The measured quantity (an error, a ratio, a count).
    pub value: f64,
    pub tolerance: f64,
    pub detail: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub quick: bool,
    pub passed: bool,
    pub seconds: f64,
    pub results: Vec<CheckResult>,
}

impl CheckReport {
    pub fn failures(&self) -> impl Iterator<Item = &CheckResult> {
        self.results.iter().filter(|r| !r.passed)
    }
}

fn result(name: &str, value: f64, tolerance: f64, passed: bool, detail: impl Into<String>) -> CheckResult {
    CheckResult {
        name: name.into(),
        passed,
        value,
        tolerance,
        detail: detail.into(),
    }
}

fn below(name: &str, value: f64, tolerance: f64, detail: impl Into<String>) -> CheckResult {
    result(name, value, tolerance, value.is_finite() && value <= tolerance, detail)
}

fn errored(name: &str, e: Error) -> CheckResult {
    result(name, f64::NAN, f64::NAN, false, format!("error: {e}"))
}

fn check_rng() -> Rng {
    stream(CHECK_SEED, Stream::Eval)
}

fn uniform_matrix(rng: &mut Rng, r: usize, c: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((r, c), || rng.random_range(lo..hi))
}

/// Largest deviation of the Gram matrix from the identity.
pub fn gram_deviation(spec: &BasisSpec, points: usize) -> Result<f64> {
    let g = gram_matrix(spec, &uniform_grid(points)?)?;
    let eye = Array2::<f64>::eye(spec.num_modes);
    Ok((g - eye).iter().fold(0.0, |m, v| m.max(v.abs())))
}

/// Relative error between analytic and central-difference gradients of the
/// scalar built by `build` from `inputs`, all inputs being differentiated.
pub fn tape_gradient_error<F>(inputs: &[Array2<f64>], build: F) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars = inputs
        .iter()
        .map(|a| tape.param(a.clone()))
        .collect::<Result<Vec<_>>>()?;
    let loss = build(&mut tape, &vars)?;
    let mut grads = tape.backward(loss)?;
    let analytic: Vec<Array2<f64>> = vars
        .iter()
        .zip(inputs)
        .map(|(&v, a)| grads.take_or_zeros(v, a.dim()))
        .collect();
    let numeric = finite_difference_gradient(inputs, FD_STEP, |p| {
        let mut tape = Tape::new();
        let vars = p.iter().map(|a| tape.constant(a.clone())).collect::<Result<Vec<_>>>()?;
        let loss = build(&mut tape, &vars)?;
        tape.scalar(loss)
    })?;
    Ok(max_relative_error(&analytic, &numeric, FD_FLOOR))
}

type Primitive = (&'static str, Vec<(usize, usize)>, fn(&mut Tape, &[Var]) -> Result<Var>);

/// Every primitive, with input shapes, reduced to a scalar through a
/// random weighting (the last input).
fn primitives() -> Vec<Primitive> {
    vec![
        ("matmul", vec![(3, 4), (4, 5), (3, 5)], |t, v| {
            let y = t.matmul(v[0], v[1])?;
            weighted(t, y, v[2])
        }),
        ("add", vec![(3, 4), (3, 4), (3, 4)], |t, v| {
            let y = t.add(v[0], v[1])?;
            weighted(t, y, v[2])
        }),
        ("add_bias", vec![(3, 4), (1, 4), (3, 4)], |t, v| {
            let y = t.add_bias(v[0], v[1])?;
            weighted(t, y, v[2])
        }),
        ("sub", vec![(3, 4), (3, 4), (3, 4)], |t, v| {
            let y = t.sub(v[0], v[1])?;
            weighted(t, y, v[2])
        }),
        ("scale", vec![(3, 4), (3, 4)], |t, v| {
            let y = t.scale(v[0], -2.5)?;
            weighted(t, y, v[1])
        }),
        ("pointwise_mul", vec![(3, 4), (3, 4), (3, 4)], |t, v| {
            let y = t.pointwise_mul(v[0], v[1])?;
            weighted(t, y, v[2])
        }),
        ("tanh", vec![(3, 4), (3, 4)], |t, v| {
            let y = t.tanh(v[0])?;
            weighted(t, y, v[1])
        }),
        ("relu", vec![(3, 4), (3, 4)], |t, v| {
            let y = t.relu(v[0])?;
            weighted(t, y, v[1])
        }),
        ("square", vec![(3, 4), (3, 4)], |t, v| {
            let y = t.square(v[0])?;
            weighted(t, y, v[1])
        }),
        ("sum", vec![(3, 4), (1, 1)], |t, v| {
            let y = t.sum(v[0])?;
            weighted(t, y, v[1])
        }),
        ("mean", vec![(3, 4), (1, 1)], |t, v| {
            let y = t.mean(v[0])?;
            weighted(t, y, v[1])
        }),
        ("rowwise_sqnorm", vec![(3, 4), (3, 1)], |t, v| {
            let y = t.rowwise_sqnorm(v[0])?;
            weighted(t, y, v[1])
        }),
    ]
}

fn weighted(t: &mut Tape, y: Var, w: Var) -> Result<Var> {
    let p = t.pointwise_mul(y, w)?;
    t.sum(p)
}

/// Max relative gradient error of each primitive over `instances` random
/// inputs. Inputs stay away from the relu kink by more than the FD step.
pub fn primitive_gradient_errors(instances: usize) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = check_rng();
    let mut out = Vec::new();
    for (name, shapes, build) in primitives() {
        let mut worst: f64 = 0.0;
        for _ in 0..instances {
            let inputs: Vec<Array2<f64>> = shapes
                .iter()
                .map(|&(r, c)| {
                    Array2::from_shape_simple_fn((r, c), || {
                        let m: f64 = rng.random_range(0.05..1.5);
                        if rng.random_bool(0.5) {
                            m
                        } else {
                            -m
                        }
                    })
                })
                .collect();
            worst = worst.max(tape_gradient_error(&inputs, build)?);
        }
        out.push((name, worst));
    }
    Ok(out)
}

fn small_nets(rng: &mut Rng, k: usize) -> Result<(TransportNet, PotentialNet)> {
    let cfg = NetworkConfig {
        hidden: vec![8],
        residual: true,
        init_scale: 1.0,
        activation: Activation::Tanh,
    };
    let mut t = TransportNet::init(k, &cfg, rng)?;
    // Enlarge the residual branch so it contributes to the gradients.
    let last = t.mlp().params().len() - 2;
    let mut params: Vec<Array2<f64>> = t.mlp().params().into_iter().cloned().collect();
    params[last] *= 50.0;
    params[last + 1] = uniform_matrix(rng, 1, k, -0.3, 0.3);
    t.mlp_mut().set_params(&params)?;
    let mut v = PotentialNet::init(k, &cfg, rng)?;
    let mut vp: Vec<Array2<f64>> = v.mlp().params().into_iter().cloned().collect();
    for b in vp.iter_mut().skip(1).step_by(2) {
        *b = uniform_matrix(rng, 1, b.ncols(), -0.3, 0.3);
    }
    v.mlp_mut().set_params(&vp)?;
    Ok((t, v))
}

/// Gradient errors of both training losses (w.r.t. the parameters they
/// update) and of `mean(V)` for a 4x8x1 potential, worst over `instances`.
pub fn loss_gradient_errors(instances: usize) -> Result<Vec<(&'static str, f64)>> {
    let mut rng = check_rng();
    let k = 4;
    let (mut e_phi, mut e_theta, mut e_mean) = (0.0f64, 0.0f64, 0.0f64);
    for _ in 0..instances {
        let (t, v) = small_nets(&mut rng, k)?;
        let x = uniform_matrix(&mut rng, 6, k, -1.0, 1.0);
        let y = uniform_matrix(&mut rng, 6, k, -1.0, 1.0);
        let tau = rng.random_range(0.5..2.0);

        let (_, g) = trainer::potential_loss_and_grads(&v, &t, x.view(), y.view())?;
        let p: Vec<Array2<f64>> = v.mlp().params().into_iter().cloned().collect();
        let num = finite_difference_gradient(&p, FD_STEP, |q| {
            let mut vq = v.clone();
            vq.mlp_mut().set_params(q)?;
            trainer::loss_potential(&vq, &t, x.view(), y.view())
        })?;
        e_phi = e_phi.max(max_relative_error(&g, &num, FD_FLOOR));

        let (_, g) = trainer::transport_loss_and_grads(&v, &t, x.view(), tau)?;
        let p: Vec<Array2<f64>> = t.mlp().params().into_iter().cloned().collect();
        let num = finite_difference_gradient(&p, FD_STEP, |q| {
            let mut tq = t.clone();
            tq.mlp_mut().set_params(q)?;
            trainer::loss_transport(&v, &tq, x.view(), tau)
        })?;
        e_theta = e_theta.max(max_relative_error(&g, &num, FD_FLOOR));

        let mut tape = Tape::new();
        let bound = v.mlp().bind(&mut tape, true)?;
        let xv = tape.constant(x.clone())?;
        let out = v.forward_tape(&mut tape, &bound, xv)?;
        let loss = tape.mean(out)?;
        let mut grads = tape.backward(loss)?;
        let g: Vec<Array2<f64>> = bound
            .vars()
            .into_iter()
            .zip(&p_of(&v))
            .map(|(var, p)| grads.take_or_zeros(var, p.dim()))
            .collect();
        let num = finite_difference_gradient(&p_of(&v), FD_STEP, |q| {
            let mut vq = v.clone();
            vq.mlp_mut().set_params(q)?;
            let out = vq.forward(x.view())?;
            Ok(out.sum() / out.len() as f64)
        })?;
        e_mean = e_mean.max(max_relative_error(&g, &num, FD_FLOOR));
    }
    Ok(vec![("loss_potential", e_phi), ("loss_transport", e_theta), ("mean_potential_4x8x1", e_mean)])
}

fn p_of(v: &PotentialNet) -> Vec<Array2<f64>> {
    v.mlp().params().into_iter().cloned().collect()
}

/// Number of random instances (out of `instances`) where the solver's
/// permutation or cost differs from exhaustive search. Half of the instances
/// use small integer costs so that ties are frequent.
pub fn assignment_mismatches(instances: usize) -> Result<usize> {
    let mut rng = check_rng();
    let mut bad = 0;
    for i in 0..instances {
        let n = 1 + i % 8;
        let c = if i % 2 == 0 {
            uniform_matrix(&mut rng, n, n, 0.0, 10.0)
        } else {
            Array2::from_shape_simple_fn((n, n), || rng.random_range(0..3u8) as f64)
        };
        let c = CostMatrix::new(c)?;
        let fast = solve_assignment(&c);
        let slow = brute_force_assignment(&c)?;
        if fast.permutation != slow.permutation || fast.total_cost != slow.total_cost {
            bad += 1;
        }
    }
    Ok(bad)
}

/// Relative error of the Monte Carlo mean of `|xi|^2` against `tr Q`.
pub fn sampler_trace_error(cov: &CovarianceSpec, draws: usize) -> f64 {
    let mut rng = check_rng();
    let mean = (0..draws).map(|_| cov.sample_noise(&mut rng).norm2()).sum::<f64>() / draws as f64;
    (mean - cov.trace()).abs() / cov.trace()
}

/// Runs the suite. `cov` is the covariance under test (normally the
/// resolved config's); a malformed spectrum fails the covariance check.
pub fn run_checks(quick: bool, cov: &crate::experiment::CovarianceSetting, basis: BasisSpec) -> CheckReport {
    let start = Instant::now();
    let widen = if quick { 10f64.sqrt() } else { 1.0 };
    let draws = if quick { 10_000 } else { 100_000 };
    let mut results = Vec::new();

    for kind in [BasisKind::Fourier, BasisKind::Legendre, BasisKind::Haar] {
        let name = format!("orthonormality_{kind:?}").to_lowercase();
        match BasisSpec::new(kind, 16).and_then(|b| gram_deviation(&b, 4097)) {
            Ok(d) => results.push(below(&name, d, 1e-3, "max |G - I|, K = 16, 4097-point trapezoid")),
            Err(e) => results.push(errored(&name, e)),
        }
    }

    results.push(match parseval_error() {
        Ok(e) => below("parseval_round_trip", e, 1e-3, "relative |quadrature norm - sum c^2| and coefficient round trip"),
        Err(e) => errored("parseval_round_trip", e),
    });

    let cov_spec = cov.resolve(basis);
    match &cov_spec {
        Ok(c) => results.push(result(
            "covariance_spec",
            c.trace(),
            f64::NAN,
            true,
            format!("valid spectrum, trace {}", c.trace()),
        )),
        Err(e) => results.push(result("covariance_spec", f64::NAN, f64::NAN, false, format!("invalid spectrum: {e}"))),
    }
    if let Ok(c) = &cov_spec {
        let e = sampler_trace_error(c, draws);
        results.push(below(
            "sampler_trace",
            e,
            0.02 * widen,
            format!("mean |xi|^2 over {draws} draws vs trace {}", c.trace()),
        ));
        let kernel = c.kernel();
        let mut rng = check_rng();
        let zeros = (0..1000).all(|_| {
            let s = c.sample_noise(&mut rng);
            kernel.iter().all(|&k| s.coeffs()[k] == 0.0)
        });
        results.push(result(
            "sampler_kernel_zero",
            kernel.len() as f64,
            0.0,
            zeros,
            format!("kernel coordinates {kernel:?} exactly zero in 1000 draws"),
        ));
    }

    match NoiseSchedule::new(0.5, 0.06, 5000, 0.8).and_then(|s| Ok((s.sigma_at(0)?, s.sigma_at(2000)?, s.sigma_at(4000)?, s.sigma_at(5000)?))) {
        Ok((a, b, c, d)) => {
            let err = [(a, 0.5), (b, 0.28), (c, 0.06), (d, 0.06)]
                .iter()
                .fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
            results.push(below("schedule_values", err, 1e-12, "sigma at epochs 0, 2000, 4000, 5000"));
        }
        Err(e) => results.push(errored("schedule_values", e)),
    }

    match primitive_gradient_errors(5) {
        Ok(list) => {
            for (name, e) in list {
                results.push(below(&format!("gradient_{name}"), e, FD_TOLERANCE, "5 random instances, h = 1e-4"));
            }
        }
        Err(e) => results.push(errored("gradient_primitives", e)),
    }
    match loss_gradient_errors(5) {
        Ok(list) => {
            for (name, e) in list {
                results.push(below(&format!("gradient_{name}"), e, FD_TOLERANCE, "5 random instances, h = 1e-4"));
            }
        }
        Err(e) => results.push(errored("gradient_losses", e)),
    }

    results.push(match assignment_mismatches(200) {
        Ok(bad) => result(
            "assignment_vs_brute_force",
            bad as f64,
            0.0,
            bad == 0,
            "200 random instances n in 1..=8, half with integer ties",
        ),
        Err(e) => errored("assignment_vs_brute_force", e),
    });

    for (name, kind, offset, expected, tol) in [
        ("oracle_perpendicular", DatasetKind::Perpendicular, None, 2.0 / 3.0, 0.05),
        ("oracle_one_to_many_unit", DatasetKind::OneToMany, Some(1.0), 1.0, 0.08),
        ("oracle_one_to_many", DatasetKind::OneToMany, None, 0.25, 0.08),
        ("oracle_parallel", DatasetKind::Parallel, None, 0.25, 0.05),
    ] {
        match oracle_relative_error(kind, offset, 2000, CHECK_SEED) {
            Ok(e) => results.push(below(name, e, tol, format!("empirical W2^2 at n = 2000 vs {expected}"))),
            Err(e) => results.push(errored(name, e)),
        }
    }

    results.push(match degeneracy_gap(CHECK_SEED) {
        Ok(d) => below("constant_objective", d, 1e-10, "loss_transport at two target-supported maps, V = |y|^2 / 2"),
        Err(e) => errored("constant_objective", e),
    });

    let passed = results.iter().all(|r| r.passed);
    CheckReport {
        quick,
        passed,
        seconds: start.elapsed().as_secs_f64(),
        results,
    }
}

fn parseval_error() -> Result<f64> {
    let mut rng = check_rng();
    let grid = uniform_grid(4097)?;
    let mut worst: f64 = 0.0;
    for kind in [BasisKind::Fourier, BasisKind::Legendre, BasisKind::Haar] {
        let basis = BasisSpec::new(kind, 16)?;
        for _ in 0..5 {
            let c: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let x = FunctionSample::new(c, basis)?;
            let f = reconstruct(&x, &grid)?;
            worst = worst.max((f.quadrature_norm2() - x.norm2()).abs() / x.norm2());
            let back = project(&f, &basis)?;
            let err = back
                .coeffs()
                .iter()
                .zip(x.coeffs())
                .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

/// `|W2^2_empirical / W2^2_oracle - 1|` on fresh batches of size `n`.
/// `offset` overrides the one-to-many branch offset.
pub fn oracle_relative_error(kind: DatasetKind, offset: Option<f64>, n: usize, seed: u64) -> Result<f64> {
    let basis = BasisSpec::fourier(16)?;
    let mut rng = stream(seed, Stream::Eval);
    let src = datasets::sample_source(kind, n, &basis, &mut rng)?;
    let (tgt, oracle) = match offset {
        Some(o) => (
            datasets::sample_target_with_offset(kind, n, &basis, o, &mut rng)?,
            datasets::one_to_many_oracle(o),
        ),
        None => (datasets::sample_target(kind, n, &basis, &mut rng)?, datasets::oracle(kind)),
    };
    let expected = oracle
        .w2sq
        .ok_or_else(|| Error::invalid(format!("{kind} has no analytic W2^2")))?;
    Ok((empirical_w2sq(src.view(), tgt.view())? / expected - 1.0).abs())
}

/// `|L_theta(T1) - L_theta(T2)|` on unsmoothed Perpendicular data with
/// `V(y) = |y|^2 / 2`, where `T1`, `T2` send the source onto the target
/// line by two different rules.
pub fn degeneracy_gap(seed: u64) -> Result<f64> {
    let basis = BasisSpec::fourier(16)?;
    let mut rng = stream(seed, Stream::Data);
    let x = datasets::sample_source(DatasetKind::Perpendicular, 512, &basis, &mut rng)?;
    let (s1, s2) = (datasets::coefficient_slot(1), datasets::coefficient_slot(2));
    let v = FnPotential(|y: ndarray::ArrayView2<'_, f64>| {
        y.rows()
            .into_iter()
            .map(|r| 0.5 * r.dot(&r))
            .collect::<ndarray::Array1<f64>>()
            .insert_axis(ndarray::Axis(1))
    });
    let onto_line = move |g: fn(f64) -> f64| {
        crate::ot_eval::FnMap(move |x: ndarray::ArrayView2<'_, f64>| {
            let mut y = Array2::zeros(x.raw_dim());
            for (i, r) in x.rows().into_iter().enumerate() {
                y[[i, s2]] = g(r[s1]);
            }
            y
        })
    };
    let t1 = onto_line(|u| u);
    let t2 = onto_line(|u| -(u.abs() * 2.0 - 1.0));
    let l1 = trainer::loss_transport(&v, &t1, x.view(), 1.0)?;
    let l2 = trainer::loss_transport(&v, &t2, x.view(), 1.0)?;
    Ok((l1 - l2).abs())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitive_gradients() {
        for (name, e) in primitive_gradient_errors(2).unwrap() {
            assert!(e <= FD_TOLERANCE, "{name}: {e}");
        }
    }

    #[test]
    fn degeneracy_is_exact_up_to_roundoff() {
        assert!(degeneracy_gap(1).unwrap() < 1e-10);
    }
}
