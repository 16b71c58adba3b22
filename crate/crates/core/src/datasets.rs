//! The four synthetic source/target pairs, generated directly in coefficient
//! space, and their analytic transport costs.
//!
//! The two active coefficients live in fixed Fourier slots: `c1` multiplies
//! `sin(pi t)` (index 1) and `c2` multiplies `sin(2 pi t)` (index 3). All
//! other coefficients are exactly zero. See [`coefficient_slot`].
//!
//! Aliases: `Parallel` is also known as "horizontal" and `Grid` as
//! "multi-perpendicular".

use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use ndarray::{Array2, ArrayView2};
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::spectral::{BasisSpec, FunctionSample};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Perpendicular,
    #[serde(alias = "horizontal")]
    Parallel,
    #[serde(alias = "one-to-many")]
    OneToMany,
    #[serde(alias = "multi_perpendicular", alias = "multi-perpendicular")]
    Grid,
}

impl DatasetKind {
    pub const ALL: [DatasetKind; 4] = [
        DatasetKind::Perpendicular,
        DatasetKind::Parallel,
        DatasetKind::OneToMany,
        DatasetKind::Grid,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            DatasetKind::Perpendicular => "perpendicular",
            DatasetKind::Parallel => "parallel",
            DatasetKind::OneToMany => "one_to_many",
            DatasetKind::Grid => "grid",
        }
    }
}

impl fmt::Display for DatasetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for DatasetKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "perpendicular" => Ok(DatasetKind::Perpendicular),
            "parallel" | "horizontal" => Ok(DatasetKind::Parallel),
            "one_to_many" => Ok(DatasetKind::OneToMany),
            "grid" | "multi_perpendicular" => Ok(DatasetKind::Grid),
            other => Err(Error::invalid(format!("unknown dataset kind `{other}`"))),
        }
    }
}

/// Basis index holding the dataset coefficient `c_which` (`which` is 1 or 2).
pub fn coefficient_slot(which: usize) -> usize {
    match which {
        1 => 1, // sin(pi t)
        2 => 3, // sin(2 pi t)
        _ => panic!("datasets only use coefficients c1 and c2, got c{which}"),
    }
}

/// Smallest `K` that contains both dataset slots.
pub const MIN_MODES: usize = 4;

/// Branch offset of the `OneToMany` target (`d2 = +-offset`).
pub const ONE_TO_MANY_OFFSET: f64 = 0.5;
/// Constant `d2` of the `Parallel` target.
pub const PARALLEL_SHIFT: f64 = 0.5;
/// Atoms of the four-point law used by `Grid`.
pub const GRID_ATOMS: [f64; 4] = [-0.75, -0.25, 0.25, 0.75];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub kind: DatasetKind,
    pub n: usize,
    pub seed: u64,
    pub basis: BasisSpec,
}

impl DatasetSpec {
    pub fn validate(&self) -> Result<()> {
        self.basis.validate()?;
        if self.n == 0 {
            return Err(Error::invalid("dataset needs n >= 1"));
        }
        check_modes(&self.basis)
    }
}

fn check_modes(basis: &BasisSpec) -> Result<()> {
    if basis.num_modes < MIN_MODES {
        return Err(Error::invalid(format!(
            "dataset coefficients occupy slots {} and {}; need K >= {MIN_MODES}, got {}",
            coefficient_slot(1),
            coefficient_slot(2),
            basis.num_modes
        )));
    }
    Ok(())
}

/// `n` samples sharing one basis, stored as an `n x K` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleBatch {
    data: Array2<f64>,
    basis: BasisSpec,
}

impl SampleBatch {
    pub fn new(data: Array2<f64>, basis: BasisSpec) -> Result<Self> {
        basis.validate()?;
        if data.ncols() != basis.num_modes {
            return Err(Error::shape("sample_batch", &[basis.num_modes], &[data.ncols()]));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("sample batch".into()));
        }
        Ok(SampleBatch { data, basis })
    }

    pub fn data(&self) -> &Array2<f64> {
        &self.data
    }

    pub fn view(&self) -> ArrayView2<'_, f64> {
        self.data.view()
    }

    pub fn into_data(self) -> Array2<f64> {
        self.data
    }

    pub fn basis(&self) -> BasisSpec {
        self.basis
    }

    pub fn len(&self) -> usize {
        self.data.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.data.nrows() == 0
    }

    pub fn row(&self, i: usize) -> FunctionSample {
        FunctionSample::new(self.data.row(i).to_vec(), self.basis).expect("rows are finite")
    }

    /// Header `c0,..,c{K-1}`, one sample per line.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.basis.num_modes).map(|k| format!("c{k}")).collect();
        writeln!(out, "{}", header.join(","))?;
        for row in self.data.rows() {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: BufRead>(input: R, basis: BasisSpec) -> Result<Self> {
        let k = basis.num_modes;
        let mut flat = Vec::new();
        let mut rows = 0;
        for (lineno, line) in input.lines().enumerate() {
            let line = line?;
            if lineno == 0 || line.trim().is_empty() {
                continue;
            }
            let cells: Vec<&str> = line.split(',').collect();
            if cells.len() != k {
                return Err(Error::Parse(format!(
                    "line {}: expected {k} columns, found {}",
                    lineno + 1,
                    cells.len()
                )));
            }
            for c in cells {
                flat.push(
                    c.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Parse(format!("line {}: {e}", lineno + 1)))?,
                );
            }
            rows += 1;
        }
        let data = Array2::from_shape_vec((rows, k), flat).expect("row lengths checked");
        Self::new(data, basis)
    }
}

fn uniform(rng: &mut Rng) -> f64 {
    rng.random_range(-1.0..1.0)
}

fn categorical(rng: &mut Rng, atoms: &[f64]) -> f64 {
    atoms[rng.random_range(0..atoms.len())]
}

/// Draws `n` source samples of `kind`.
pub fn sample_source(kind: DatasetKind, n: usize, basis: &BasisSpec, rng: &mut Rng) -> Result<Array2<f64>> {
    check_modes(basis)?;
    let (s1, s2) = (coefficient_slot(1), coefficient_slot(2));
    let mut out = Array2::zeros((n, basis.num_modes));
    for i in 0..n {
        out[[i, s1]] = uniform(rng);
        if kind == DatasetKind::Grid {
            out[[i, s2]] = categorical(rng, &GRID_ATOMS);
        }
    }
    Ok(out)
}

/// Draws `n` target samples of `kind`.
pub fn sample_target(kind: DatasetKind, n: usize, basis: &BasisSpec, rng: &mut Rng) -> Result<Array2<f64>> {
    sample_target_with_offset(kind, n, basis, ONE_TO_MANY_OFFSET, rng)
}

/// As [`sample_target`], with the `OneToMany` branch offset given explicitly
/// (`1.0` reproduces the unit-offset variant with analytic half-cost 1/2).
pub fn sample_target_with_offset(
    kind: DatasetKind,
    n: usize,
    basis: &BasisSpec,
    branch_offset: f64,
    rng: &mut Rng,
) -> Result<Array2<f64>> {
    check_modes(basis)?;
    let (s1, s2) = (coefficient_slot(1), coefficient_slot(2));
    let mut out = Array2::zeros((n, basis.num_modes));
    for i in 0..n {
        match kind {
            DatasetKind::Perpendicular => {
                out[[i, s2]] = uniform(rng);
            }
            DatasetKind::Parallel => {
                out[[i, s1]] = uniform(rng);
                out[[i, s2]] = PARALLEL_SHIFT;
            }
            DatasetKind::OneToMany => {
                out[[i, s1]] = uniform(rng);
                out[[i, s2]] = categorical(rng, &[-branch_offset, branch_offset]);
            }
            DatasetKind::Grid => {
                out[[i, s1]] = categorical(rng, &GRID_ATOMS);
                out[[i, s2]] = uniform(rng);
            }
        }
    }
    Ok(out)
}

/// Source and target batches for `spec`; deterministic in `spec.seed`.
/// The source is drawn first, then the target, from one data stream.
pub fn generate(spec: &DatasetSpec) -> Result<(SampleBatch, SampleBatch)> {
    spec.validate()?;
    let mut rng = crate::rng::stream(spec.seed, crate::rng::Stream::Data);
    generate_with(spec.kind, spec.n, &spec.basis, &mut rng)
}

/// Source then target from a caller-owned stream.
pub fn generate_with(kind: DatasetKind, n: usize, basis: &BasisSpec, rng: &mut Rng) -> Result<(SampleBatch, SampleBatch)> {
    if n == 0 {
        return Err(Error::invalid("dataset needs n >= 1"));
    }
    let source = sample_source(kind, n, basis, rng)?;
    let target = sample_target(kind, n, basis, rng)?;
    Ok((SampleBatch::new(source, *basis)?, SampleBatch::new(target, *basis)?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MongeExistence {
    Yes,
    No,
    NonUnique,
}

/// Analytic transport information for a source/target pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleInfo {
    /// `W2^2(mu, nu)` with cost `||x - y||^2`.
    pub w2sq: Option<f64>,
    /// Optimal cost with `1/2 ||x - y||^2`.
    pub half_cost: Option<f64>,
    pub monge_exists: MongeExistence,
    pub notes: String,
}

pub fn oracle(kind: DatasetKind) -> OracleInfo {
    match kind {
        DatasetKind::Perpendicular => OracleInfo {
            w2sq: Some(2.0 / 3.0),
            half_cost: Some(1.0 / 3.0),
            monge_exists: MongeExistence::NonUnique,
            notes: "orthogonal supports: every coupling costs E||X||^2 + E||Y||^2 = 2/3".into(),
        },
        DatasetKind::Parallel => OracleInfo {
            w2sq: Some(PARALLEL_SHIFT * PARALLEL_SHIFT),
            half_cost: Some(PARALLEL_SHIFT * PARALLEL_SHIFT / 2.0),
            monge_exists: MongeExistence::Yes,
            notes: "pure translation of c2 by 0.5; the shift map is optimal".into(),
        },
        DatasetKind::OneToMany => one_to_many_oracle(ONE_TO_MANY_OFFSET),
        DatasetKind::Grid => OracleInfo {
            w2sq: None,
            half_cost: None,
            monge_exists: MongeExistence::NonUnique,
            notes: "no closed form; the optimal map is non-unique".into(),
        },
    }
}

/// Oracle for the one-to-many pair with branches at `d2 = +-offset`:
/// the vertical splitting plan costs `offset^2` and no Monge map attains it.
pub fn one_to_many_oracle(offset: f64) -> OracleInfo {
    let w2sq = offset * offset;
    OracleInfo {
        w2sq: Some(w2sq),
        half_cost: Some(w2sq / 2.0),
        monge_exists: MongeExistence::No,
        notes: format!("mass splits equally onto d2 = +-{offset}; no deterministic map is optimal"),
    }
}

/// Indices along which the source law has zero variance or is discrete.
///
/// Every kind has a continuous source only in the `c1` slot; the `Grid`
/// source's `c2` is a four-atom law and is listed as singular as well.
pub fn singular_directions(_kind: DatasetKind, num_modes: usize) -> Vec<usize> {
    let regular = coefficient_slot(1);
    (0..num_modes).filter(|&k| k != regular).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn basis() -> BasisSpec {
        BasisSpec::fourier(16).unwrap()
    }

    #[test]
    fn perpendicular_support_is_exact() {
        let spec = DatasetSpec {
            kind: DatasetKind::Perpendicular,
            n: 4,
            seed: 11,
            basis: basis(),
        };
        let (src, tgt) = generate(&spec).unwrap();
        for i in 0..4 {
            assert_eq!(src.data()[[i, 3]].to_bits(), 0.0f64.to_bits());
            assert_eq!(tgt.data()[[i, 1]].to_bits(), 0.0f64.to_bits());
            for k in (0..16).filter(|&k| k != 1) {
                assert_eq!(src.data()[[i, k]], 0.0);
            }
        }
    }

    #[test]
    fn generation_is_deterministic() {
        for kind in DatasetKind::ALL {
            let spec = DatasetSpec { kind, n: 64, seed: 5, basis: basis() };
            assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        }
    }

    #[test]
    fn one_to_many_branch_balance() {
        let spec = DatasetSpec {
            kind: DatasetKind::OneToMany,
            n: 100_000,
            seed: 3,
            basis: basis(),
        };
        let (_, tgt) = generate(&spec).unwrap();
        let up = tgt.data().column(3).iter().filter(|&&v| v == 0.5).count();
        let down = tgt.data().column(3).iter().filter(|&&v| v == -0.5).count();
        assert_eq!(up + down, 100_000);
        assert!(((up as f64 / 1e5) - 0.5).abs() < 0.01);
    }

    #[test]
    fn rejects_small_bases_and_empty() {
        let small = BasisSpec::fourier(3).unwrap();
        let spec = DatasetSpec { kind: DatasetKind::Parallel, n: 4, seed: 0, basis: small };
        assert!(generate(&spec).is_err());
        let spec = DatasetSpec { kind: DatasetKind::Parallel, n: 0, seed: 0, basis: basis() };
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn oracle_values() {
        let p = oracle(DatasetKind::Perpendicular);
        assert_eq!(p.w2sq, Some(2.0 / 3.0));
        assert_eq!(p.half_cost, Some(1.0 / 3.0));
        assert_eq!(p.monge_exists, MongeExistence::NonUnique);
        assert_eq!(one_to_many_oracle(1.0).half_cost, Some(0.5));
        assert_eq!(oracle(DatasetKind::OneToMany).w2sq, Some(0.25));
        assert_eq!(oracle(DatasetKind::Parallel).w2sq, Some(0.25));
        assert_eq!(oracle(DatasetKind::Parallel).monge_exists, MongeExistence::Yes);
        assert_eq!(oracle(DatasetKind::Grid).w2sq, None);
        for kind in DatasetKind::ALL {
            let o = oracle(kind);
            if let (Some(w), Some(h)) = (o.w2sq, o.half_cost) {
                assert_eq!(h, w / 2.0);
            }
        }
    }

    #[test]
    fn singular_direction_sets() {
        assert_eq!(singular_directions(DatasetKind::Perpendicular, 3), vec![0, 2]);
        let g = singular_directions(DatasetKind::Grid, 16);
        assert!(!g.contains(&1));
        assert!(g.contains(&3));
        assert_eq!(g.len(), 15);
    }

    #[test]
    fn kind_parsing_and_aliases() {
        assert_eq!("horizontal".parse::<DatasetKind>().unwrap(), DatasetKind::Parallel);
        assert_eq!("multi-perpendicular".parse::<DatasetKind>().unwrap(), DatasetKind::Grid);
        let k: DatasetKind = serde_json::from_str("\"horizontal\"").unwrap();
        assert_eq!(k, DatasetKind::Parallel);
        assert!("circle".parse::<DatasetKind>().is_err());
    }

    #[test]
    fn csv_round_trip() {
        let spec = DatasetSpec { kind: DatasetKind::Grid, n: 7, seed: 1, basis: basis() };
        let (src, _) = generate(&spec).unwrap();
        let mut buf = Vec::new();
        src.write_csv(&mut buf).unwrap();
        let back = SampleBatch::read_csv(buf.as_slice(), basis()).unwrap();
        assert_eq!(back, src);
    }
}
