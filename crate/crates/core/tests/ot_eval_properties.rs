use hilbert_ot::datasets::{self, DatasetKind, DatasetSpec};
use hilbert_ot::ot_eval::{
    brute_force_assignment, brute_force_w2sq, d_cost, d_target, empirical_w2sq, solve_assignment, CostMatrix, FnMap,
    Identity,
};
use hilbert_ot::rng::{stream, Stream};
use hilbert_ot::spectral::BasisSpec;
use ndarray::{Array1, Array2, ArrayView2};
use proptest::prelude::*;
use rand::Rng;

fn points(n: usize, k: usize) -> impl Strategy<Value = Array2<f64>> {
    prop::collection::vec(-2.0..2.0f64, n * k).prop_map(move |v| Array2::from_shape_vec((n, k), v).unwrap())
}

fn pair(max_n: usize, k: usize) -> impl Strategy<Value = (Array2<f64>, Array2<f64>)> {
    (1..=max_n).prop_flat_map(move |n| (points(n, k), points(n, k)))
}

fn identity_cost(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> f64 {
    let d = &a - &b;
    d.iter().map(|x| x * x).sum::<f64>() / a.nrows() as f64
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn self_distance_is_zero(a in (1..=12usize).prop_flat_map(|n| points(n, 3))) {
        prop_assert_eq!(empirical_w2sq(a.view(), a.view()).unwrap(), 0.0);
    }

    #[test]
    fn symmetric((a, b) in pair(10, 3)) {
        let ab = empirical_w2sq(a.view(), b.view()).unwrap();
        let ba = empirical_w2sq(b.view(), a.view()).unwrap();
        prop_assert!((ab - ba).abs() <= 1e-12 * (1.0 + ab));
    }

    #[test]
    fn bounded_by_translation(
        a in (1..=10usize).prop_flat_map(|n| points(n, 3)),
        v in prop::collection::vec(-1.0..1.0f64, 3),
    ) {
        let v = Array1::from(v);
        let shifted = &a + &v;
        let w = empirical_w2sq(a.view(), shifted.view()).unwrap();
        let identity = identity_cost(a.view(), shifted.view());
        prop_assert!((identity - v.dot(&v)).abs() < 1e-12);
        prop_assert!(w <= identity + 1e-12);
    }

    #[test]
    fn matches_exhaustive_search((a, b) in pair(7, 2)) {
        let exact = brute_force_w2sq(a.view(), b.view()).unwrap();
        let fast = empirical_w2sq(a.view(), b.view()).unwrap();
        prop_assert!((exact - fast).abs() <= 1e-12 * (1.0 + exact));
    }

    #[test]
    fn invariant_under_reordering((a, b) in pair(9, 2), seed in any::<u64>()) {
        let mut rng = stream(seed, Stream::Eval);
        let mut idx: Vec<usize> = (0..b.nrows()).collect();
        for i in (1..idx.len()).rev() {
            idx.swap(i, rng.random_range(0..=i));
        }
        let shuffled = b.select(ndarray::Axis(0), &idx);
        let w = empirical_w2sq(a.view(), b.view()).unwrap();
        let ws = empirical_w2sq(a.view(), shuffled.view()).unwrap();
        prop_assert!((w - ws).abs() <= 1e-12 * (1.0 + w));
    }
}

#[test]
fn hundred_random_instances_agree_with_brute_force_exactly() {
    let mut rng = stream(77, Stream::Eval);
    for i in 0..100 {
        let n = 2 + i % 7;
        let a = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0));
        let b = Array2::from_shape_simple_fn((n, 3), || rng.random_range(-1.0..1.0));
        assert_eq!(
            empirical_w2sq(a.view(), b.view()).unwrap(),
            brute_force_w2sq(a.view(), b.view()).unwrap(),
            "instance {i}"
        );
    }
}

#[test]
fn integer_cost_ties_pick_the_lexicographically_smallest_permutation() {
    let mut rng = stream(5, Stream::Eval);
    for i in 0..200 {
        let n = 2 + i % 7;
        let data = Array2::from_shape_simple_fn((n, n), || rng.random_range(0..3) as f64);
        let c = CostMatrix::new(data).unwrap();
        let fast = solve_assignment(&c);
        let exact = brute_force_assignment(&c).unwrap();
        assert_eq!(fast.permutation, exact.permutation, "instance {i}");
        assert_eq!(fast.total_cost, exact.total_cost);
    }
}

#[test]
fn singleton_is_squared_distance() {
    let a = ndarray::array![[1.0, 2.0, -1.0]];
    let b = ndarray::array![[0.0, 0.5, 1.0]];
    assert_eq!(empirical_w2sq(a.view(), b.view()).unwrap(), 1.0 + 2.25 + 4.0);
    assert_eq!(brute_force_w2sq(a.view(), b.view()).unwrap(), 1.0 + 2.25 + 4.0);
}

#[test]
fn size_mismatch_is_rejected() {
    let a = Array2::<f64>::zeros((3, 2));
    let b = Array2::<f64>::zeros((4, 2));
    assert!(empirical_w2sq(a.view(), b.view()).is_err());
    assert!(d_cost(&Identity, a.view(), b.view()).is_err());
    assert!(d_target(&Identity, a.view(), b.view()).is_err());
}

fn batches(kind: DatasetKind, n: usize, seed: u64) -> (Array2<f64>, Array2<f64>) {
    let spec = DatasetSpec {
        kind,
        n,
        seed,
        basis: BasisSpec::fourier(16).unwrap(),
    };
    let (s, t) = datasets::generate(&spec).unwrap();
    (s.data().to_owned(), t.data().to_owned())
}

#[test]
fn pushing_onto_the_target_batch_gives_zero_target_error() {
    let (src, tgt) = batches(DatasetKind::OneToMany, 50, 3);
    let copy = tgt.clone();
    let onto = FnMap(move |_: ArrayView2<'_, f64>| copy.clone());
    assert_eq!(d_target(&onto, src.view(), tgt.view()).unwrap(), 0.0);
}

#[test]
fn identity_map_on_perpendicular_has_target_error_near_two_thirds() {
    let (src, tgt) = batches(DatasetKind::Perpendicular, 1000, 11);
    let dt = d_target(&Identity, src.view(), tgt.view()).unwrap();
    assert!((dt - 2.0 / 3.0).abs() < 0.05 * 2.0 / 3.0, "d_target {dt}");
    assert_eq!(d_cost(&Identity, src.view(), src.view()).unwrap(), 0.0);
}

#[test]
fn analytic_shift_on_parallel_has_small_cost_error() {
    let slot = datasets::coefficient_slot(2);
    let shift = FnMap(move |x: ArrayView2<'_, f64>| {
        let mut y = x.to_owned();
        y.column_mut(slot).mapv_inplace(|v| v + datasets::PARALLEL_SHIFT);
        y
    });
    let (src, tgt) = batches(DatasetKind::Parallel, 2000, 21);
    let dc = d_cost(&shift, src.view(), tgt.view()).unwrap();
    assert!(dc <= 0.02, "d_cost at n = 2000: {dc}");
}

#[test]
fn perpendicular_estimate_converges_with_n() {
    let oracle = 2.0 / 3.0;
    let mut means = Vec::new();
    let mut spreads = Vec::new();
    for n in [100, 500, 2000] {
        let errs: Vec<f64> = (0..3)
            .map(|s| {
                let (src, tgt) = batches(DatasetKind::Perpendicular, n, 100 + s);
                (empirical_w2sq(src.view(), tgt.view()).unwrap() - oracle).abs()
            })
            .collect();
        let mean = errs.iter().sum::<f64>() / 3.0;
        let var = errs.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / 2.0;
        means.push(mean);
        spreads.push((var / 3.0).sqrt());
    }
    for i in 1..means.len() {
        assert!(
            means[i] <= means[i - 1] + spreads[i - 1] + spreads[i],
            "mean errors {means:?} spreads {spreads:?}"
        );
    }
    assert!(means[2] < 0.05 * oracle, "n = 2000 error {}", means[2]);
}
