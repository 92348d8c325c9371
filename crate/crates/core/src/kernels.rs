//! Boundary kernels, their exact moments and the moment matrices of the
//! local-polynomial asymptotics.
//!
//! A kernel family defines the treated-side kernel `K(z1, z2)`, supported on
//! `z2 >= 0`. The control-side kernel is its mirror `K(z1, -z2)`.
//!
//! `κ(a1, a2; v) = ∫ z1^a1 z2^a2 K±(z)^v dz` is available in closed form for
//! every supported family; the quadrature path serves the diagnostic
//! [`KernelFamily::ShiftedTriangular`] kernel and cross-checks.

use std::collections::HashMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MrdError, Result};
use crate::localpoly::MultiIndexSet;
use crate::quadrature;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    Plus,
    Minus,
}

impl Side {
    pub fn sign(self) -> f64 {
        match self {
            Side::Plus => 1.0,
            Side::Minus => -1.0,
        }
    }

    pub fn opposite(self) -> Side {
        match self {
            Side::Plus => Side::Minus,
            Side::Minus => Side::Plus,
        }
    }

    pub fn matches(self, treated: bool) -> bool {
        treated == (self == Side::Plus)
    }
}

impl fmt::Display for Side {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Side::Plus => "plus",
            Side::Minus => "minus",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelFamily {
    /// Two-sided triangular in `z1` times one-sided triangular in `z2`.
    #[default]
    ProductTriangular,
    /// Epanechnikov in `z1` times one-sided triangular in `z2`.
    ProductEpanechnikov,
    /// `(6/π)(1 - ‖z‖)` on the upper half disc.
    Cone,
    /// Triangular bump on `[0, 1]` in `z1` times one-sided triangular in `z2`.
    /// It violates the first-moment restriction and exists for diagnostics.
    ShiftedTriangular,
}

impl KernelFamily {
    pub const ALL: [KernelFamily; 4] = [
        KernelFamily::ProductTriangular,
        KernelFamily::ProductEpanechnikov,
        KernelFamily::Cone,
        KernelFamily::ShiftedTriangular,
    ];

    /// Whether the support is the Euclidean half disc (otherwise a half square).
    pub fn radial_support(self) -> bool {
        self == KernelFamily::Cone
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub side: Side,
}

impl KernelSpec {
    pub fn new(family: KernelFamily, side: Side) -> Self {
        Self { family, side }
    }

    pub fn with_side(self, side: Side) -> Self {
        Self { side, ..self }
    }

    #[inline]
    pub fn eval(&self, z: [f64; 2]) -> f64 {
        kernel_eval(self, z)
    }
}

#[inline]
fn triangular(u: f64) -> f64 {
    let a = u.abs();
    if a <= 1.0 {
        1.0 - a
    } else {
        0.0
    }
}

#[inline]
fn epanechnikov(u: f64) -> f64 {
    if u.abs() <= 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

#[inline]
fn one_sided_triangular(u: f64) -> f64 {
    if (0.0..=1.0).contains(&u) {
        2.0 * (1.0 - u)
    } else {
        0.0
    }
}

#[inline]
fn shifted_triangular(u: f64) -> f64 {
    if (0.0..=1.0).contains(&u) {
        2.0 * (1.0 - (2.0 * u - 1.0).abs())
    } else {
        0.0
    }
}

/// Evaluates `K±(z)`.
#[inline]
pub fn kernel_eval(spec: &KernelSpec, z: [f64; 2]) -> f64 {
    let z2 = spec.side.sign() * z[1];
    match spec.family {
        KernelFamily::ProductTriangular => {
            let k2 = one_sided_triangular(z2);
            if k2 == 0.0 {
                0.0
            } else {
                triangular(z[0]) * k2
            }
        }
        KernelFamily::ProductEpanechnikov => {
            let k2 = one_sided_triangular(z2);
            if k2 == 0.0 {
                0.0
            } else {
                epanechnikov(z[0]) * k2
            }
        }
        KernelFamily::Cone => {
            let r = (z[0] * z[0] + z2 * z2).sqrt();
            if r <= 1.0 && z2 >= 0.0 {
                6.0 / PI * (1.0 - r)
            } else {
                0.0
            }
        }
        KernelFamily::ShiftedTriangular => shifted_triangular(z[0]) * one_sided_triangular(z2),
    }
}

/// `∫_0^1 u^a (1-u)^v du = a! v! / (a+v+1)!`
fn beta_integer(a: u32, v: u32) -> f64 {
    (1..=v).fold(1.0 / (a as f64 + 1.0), |acc, k| acc * k as f64 / (a + k + 1) as f64)
}

/// `∫_0^1 u^a (1-u²)^v du`
fn beta_even(a: u32, v: u32) -> f64 {
    let mut binom = 1.0;
    let mut total = 0.0;
    for k in 0..=v {
        let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
        total += sign * binom / (a + 2 * k + 1) as f64;
        binom = binom * (v - k) as f64 / (k + 1) as f64;
    }
    total
}

/// `∫_0^{π/2} cos^a θ sin^b θ dθ`
fn wallis(a: u32, b: u32) -> f64 {
    if a >= 2 {
        (a - 1) as f64 / (a + b) as f64 * wallis(a - 2, b)
    } else if a == 1 {
        1.0 / (b + 1) as f64
    } else if b >= 2 {
        (b - 1) as f64 / b as f64 * wallis(0, b - 2)
    } else if b == 1 {
        1.0
    } else {
        FRAC_PI_2
    }
}

fn parity(a: u32) -> f64 {
    if a % 2 == 0 {
        1.0
    } else {
        -1.0
    }
}

const MAX_MOMENT_DEGREE: u32 = 8;

fn check_moment_args(powers: (u32, u32), v: u32) -> Result<()> {
    if !(v == 1 || v == 2) {
        return Err(MrdError::InvalidArgument(format!("kernel power v must be 1 or 2, got {v}")));
    }
    if powers.0 + powers.1 > MAX_MOMENT_DEGREE {
        return Err(MrdError::InvalidArgument(format!(
            "moment degree {} exceeds {MAX_MOMENT_DEGREE}",
            powers.0 + powers.1
        )));
    }
    Ok(())
}

/// `κ(a1, a2; v) = ∫ z1^a1 z2^a2 K±(z)^v dz` for `v ∈ {1, 2}`, `a1 + a2 <= 8`.
pub fn kernel_moment(spec: &KernelSpec, powers: (u32, u32), v: u32) -> Result<f64> {
    check_moment_args(powers, v)?;
    let (a1, a2) = powers;
    let side = match spec.side {
        Side::Plus => 1.0,
        Side::Minus => parity(a2),
    };
    let k2 = 2f64.powi(v as i32) * beta_integer(a2, v);
    let value = match spec.family {
        KernelFamily::ProductTriangular => {
            let k1 = if a1 % 2 == 1 { 0.0 } else { 2.0 * beta_integer(a1, v) };
            k1 * k2
        }
        KernelFamily::ProductEpanechnikov => {
            let k1 = if a1 % 2 == 1 {
                0.0
            } else {
                0.75f64.powi(v as i32) * 2.0 * beta_even(a1, v)
            };
            k1 * k2
        }
        KernelFamily::Cone => {
            let radial = beta_integer(a1 + a2 + 1, v);
            let angular = if a1 % 2 == 1 { 0.0 } else { 2.0 * wallis(a1, a2) };
            (6.0 / PI).powi(v as i32) * radial * angular
        }
        KernelFamily::ShiftedTriangular => {
            return quadrature_moment(spec, powers, v);
        }
    };
    Ok(side * value)
}

const QUAD_TOL: f64 = 1e-10;

/// The same moment by adaptive quadrature of [`kernel_eval`]: tensor-product
/// on the half square for product kernels, polar coordinates for the cone.
pub fn quadrature_moment(spec: &KernelSpec, powers: (u32, u32), v: u32) -> Result<f64> {
    check_moment_args(powers, v)?;
    let (a1, a2) = (powers.0 as i32, powers.1 as i32);
    let s = spec.side.sign();
    let value = if spec.family.radial_support() {
        // z = (ρ cos θ, ±ρ sin θ), θ ∈ [0, π]
        quadrature::integrate_2d(
            |theta, rho| {
                let z = [rho * theta.cos(), s * rho * theta.sin()];
                z[0].powi(a1) * z[1].powi(a2) * kernel_eval(spec, z).powi(v as i32) * rho
            },
            (0.0, PI),
            &[FRAC_PI_2],
            |_| (0.0, 1.0, vec![]),
            QUAD_TOL,
        )
    } else {
        quadrature::integrate_2d(
            |z1, u| {
                let z = [z1, s * u];
                z[0].powi(a1) * z[1].powi(a2) * kernel_eval(spec, z).powi(v as i32)
            },
            (-1.0, 1.0),
            &[0.0, 0.5],
            |_| (0.0, 1.0, vec![]),
            QUAD_TOL,
        )
    };
    Ok(value)
}

/// The moment matrices for a local polynomial of order `p` with the ordering
/// of [`MultiIndexSet`]:
/// `S = ∫ K ž ž'`, `Kcal = ∫ K² ž ž'` and `B = ∫ K ž (z)'_{p+1}`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentMatrices {
    pub spec: KernelSpec,
    pub p: usize,
    pub s: DMatrix<f64>,
    pub kcal: DMatrix<f64>,
    pub b: DMatrix<f64>,
    /// `S⁻¹ e1`
    pub s_tilde: DVector<f64>,
    /// `e1' S⁻¹ ∫ K ž z1²`: the leading-bias weight of `∂11 m / 2 · h1²`.
    pub s_tilde11: f64,
    /// `e1' S⁻¹ ∫ K ž z2²`: the leading-bias weight of `∂22 m / 2 · h2²`.
    pub s_tilde22: f64,
}

impl MomentMatrices {
    pub fn dim(&self) -> usize {
        self.s.nrows()
    }

    pub fn s_inv(&self) -> DMatrix<f64> {
        self.s
            .clone()
            .try_inverse()
            .expect("S was checked to be nonsingular at construction")
    }

    /// `S⁻¹ Kcal S⁻¹`, the normalized asymptotic covariance of the local fit.
    pub fn sandwich(&self) -> DMatrix<f64> {
        let s_inv = self.s_inv();
        &s_inv * &self.kcal * &s_inv
    }

    /// `e1' S⁻¹ Kcal S⁻¹ e1`
    pub fn variance_constant(&self) -> f64 {
        self.s_tilde.dot(&(&self.kcal * &self.s_tilde))
    }

    /// `S⁻¹ B`: row `k` maps the order-`p+1` coefficients of the mean function
    /// to the leading bias of coefficient `k` (in `H`-scaled units).
    pub fn bias_map(&self) -> DMatrix<f64> {
        self.s_inv() * &self.b
    }
}

pub fn moment_matrices(spec: &KernelSpec, p: usize) -> Result<MomentMatrices> {
    if !(1..=3).contains(&p) {
        return Err(MrdError::InvalidArgument(format!("polynomial order must be 1..=3, got {p}")));
    }
    let idx = MultiIndexSet::new(p);
    let next = MultiIndexSet::order_block(p + 1);
    let dim = idx.len();
    let moment = |a: [u32; 2], c: [u32; 2], v: u32| kernel_moment(spec, (a[0] + c[0], a[1] + c[1]), v);

    let mut s = DMatrix::zeros(dim, dim);
    let mut kcal = DMatrix::zeros(dim, dim);
    for (i, &ai) in idx.exponents().iter().enumerate() {
        for (j, &aj) in idx.exponents().iter().enumerate().skip(i) {
            let sv = moment(ai, aj, 1)?;
            let kv = moment(ai, aj, 2)?;
            s[(i, j)] = sv;
            s[(j, i)] = sv;
            kcal[(i, j)] = kv;
            kcal[(j, i)] = kv;
        }
    }
    let mut b = DMatrix::zeros(dim, next.len());
    for (i, &ai) in idx.exponents().iter().enumerate() {
        for (k, &ck) in next.iter().enumerate() {
            b[(i, k)] = moment(ai, ck, 1)?;
        }
    }

    let sv = s.clone().svd(false, false).singular_values;
    let min_sv = sv.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min_sv > 1e-10) {
        return Err(MrdError::KernelUnsuitable(format!(
            "moment matrix S is singular for {spec:?}, p = {p} (smallest singular value {min_sv:e})"
        )));
    }
    let mut e1 = DVector::zeros(dim);
    e1[0] = 1.0;
    let s_tilde = s
        .clone()
        .lu()
        .solve(&e1)
        .ok_or_else(|| MrdError::KernelUnsuitable("moment matrix S is singular".into()))?;

    let column = |c: [u32; 2]| -> Result<DVector<f64>> {
        let mut col = DVector::zeros(dim);
        for (i, &ai) in idx.exponents().iter().enumerate() {
            col[i] = moment(ai, c, 1)?;
        }
        Ok(col)
    };
    let s_tilde11 = s_tilde.dot(&column([2, 0])?);
    let s_tilde22 = s_tilde.dot(&column([0, 2])?);

    Ok(MomentMatrices {
        spec: *spec,
        p,
        s,
        kcal,
        b,
        s_tilde,
        s_tilde11,
        s_tilde22,
    })
}

type MomentCache = Mutex<HashMap<(KernelSpec, usize), Arc<MomentMatrices>>>;

/// Memoized [`moment_matrices`]; the matrices depend only on `(spec, p)`.
pub fn cached_moment_matrices(spec: &KernelSpec, p: usize) -> Result<Arc<MomentMatrices>> {
    static CACHE: OnceLock<MomentCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(m) = cache.lock().expect("moment cache poisoned").get(&(*spec, p)) {
        return Ok(Arc::clone(m));
    }
    let m = Arc::new(moment_matrices(spec, p)?);
    cache
        .lock()
        .expect("moment cache poisoned")
        .insert((*spec, p), Arc::clone(&m));
    Ok(m)
}

/// The five moments that must vanish for the bias of the local-linear
/// intercept to separate into a `z1²` and a `z2²` term.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RestrictionReport {
    /// `∫ z1 K`
    pub z1: f64,
    /// `∫ z1 z2 K`
    pub z1_z2: f64,
    /// `∫ z1 K²`
    pub z1_sq_kernel: f64,
    /// `∫ z1 z2 K²`
    pub z1_z2_sq_kernel: f64,
    /// `∫ z1 z2² K`
    pub z1_z2sq: f64,
    pub satisfied: bool,
}

impl RestrictionReport {
    pub fn values(&self) -> [f64; 5] {
        [
            self.z1,
            self.z1_z2,
            self.z1_sq_kernel,
            self.z1_z2_sq_kernel,
            self.z1_z2sq,
        ]
    }

    pub fn max_abs(&self) -> f64 {
        self.values().iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

pub const RESTRICTION_TOL: f64 = 1e-9;

pub fn check_restriction(spec: &KernelSpec) -> Result<RestrictionReport> {
    let k = |a, b, v| kernel_moment(spec, (a, b), v);
    let mut report = RestrictionReport {
        z1: k(1, 0, 1)?,
        z1_z2: k(1, 1, 1)?,
        z1_sq_kernel: k(1, 0, 2)?,
        z1_z2_sq_kernel: k(1, 1, 2)?,
        z1_z2sq: k(1, 2, 1)?,
        satisfied: false,
    };
    report.satisfied = report.max_abs() < RESTRICTION_TOL;
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    const PT: KernelSpec = KernelSpec {
        family: KernelFamily::ProductTriangular,
        side: Side::Plus,
    };

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn evaluation_closed_forms() {
        for side in [Side::Plus, Side::Minus] {
            let cone = KernelSpec::new(KernelFamily::Cone, side);
            assert!(close(cone.eval([0.0, 0.0]), 6.0 / PI, 1e-15));
            assert!(close(6.0 / PI, 1.909_859, 1e-6));
        }
        assert!(close(PT.eval([0.5, 0.5]), 0.5, 1e-15));
        assert_eq!(PT.eval([0.5, -0.5]), 0.0);
        assert!(close(PT.with_side(Side::Minus).eval([0.5, -0.5]), 0.5, 1e-15));
        for family in KernelFamily::ALL {
            for side in [Side::Plus, Side::Minus] {
                assert_eq!(KernelSpec::new(family, side).eval([1.5, 0.0]), 0.0);
            }
        }
    }

    #[test]
    fn product_triangular_moment_table() {
        let k = |a, b, v| kernel_moment(&PT, (a, b), v).unwrap();
        assert!(close(k(0, 0, 1), 1.0, 1e-15));
        assert!(close(k(1, 0, 1), 0.0, 1e-15));
        assert!(close(k(0, 1, 1), 1.0 / 3.0, 1e-15));
        assert!(close(k(2, 0, 1), 1.0 / 6.0, 1e-15));
        assert!(close(k(0, 3, 1), 1.0 / 10.0, 1e-15));
        assert!(close(k(2, 1, 1), 1.0 / 18.0, 1e-15));
        assert!(close(k(0, 0, 2), 8.0 / 9.0, 1e-15));
    }

    #[test]
    fn moment_argument_errors() {
        assert!(matches!(kernel_moment(&PT, (0, 0), 3), Err(MrdError::InvalidArgument(_))));
        assert!(matches!(kernel_moment(&PT, (5, 4), 1), Err(MrdError::InvalidArgument(_))));
    }

    #[test]
    fn linear_moment_matrices() {
        let m = moment_matrices(&PT, 1).unwrap();
        let expected = DMatrix::from_row_slice(
            3,
            3,
            &[1.0, 0.0, 1.0 / 3.0, 0.0, 1.0 / 6.0, 0.0, 1.0 / 3.0, 0.0, 1.0 / 6.0],
        );
        assert!((&m.s - expected).abs().max() < 1e-15);
        assert!(close(m.s_tilde[0], 3.0, 1e-12));
        assert!(close(m.s_tilde[1], 0.0, 1e-12));
        assert!(close(m.s_tilde[2], -6.0, 1e-12));
        assert!(close(m.s_tilde11, 1.0 / 6.0, 1e-12));
        assert!(close(m.s_tilde22, -1.0 / 10.0, 1e-12));
        // s̃'Kcal s̃ with Kcal = [[8/9,0,2/9],[0,4/45,0],[2/9,0,4/45]]
        assert!(close(m.variance_constant(), 16.0 / 5.0, 1e-12));
    }

    #[test]
    fn matrix_invariants_all_orders() {
        for family in [KernelFamily::ProductTriangular, KernelFamily::ProductEpanechnikov, KernelFamily::Cone] {
            for side in [Side::Plus, Side::Minus] {
                for p in 1..=3 {
                    let m = moment_matrices(&KernelSpec::new(family, side), p).unwrap();
                    let d = (p + 1) * (p + 2) / 2;
                    assert_eq!(m.dim(), d);
                    assert_eq!(m.b.shape(), (d, p + 2));
                    assert!((&m.s - m.s.transpose()).abs().max() == 0.0);
                    let mut e1 = DVector::zeros(d);
                    e1[0] = 1.0;
                    assert!((&m.s * &m.s_tilde - e1).abs().max() < 1e-10);
                    let eig = m.kcal.clone().symmetric_eigen().eigenvalues;
                    assert!(eig.iter().all(|&l| l > -1e-12));
                }
            }
        }
    }

    #[test]
    fn minus_side_relations() {
        for family in [KernelFamily::ProductTriangular, KernelFamily::ProductEpanechnikov, KernelFamily::Cone] {
            let plus = KernelSpec::new(family, Side::Plus);
            let minus = plus.with_side(Side::Minus);
            let mp = moment_matrices(&plus, 1).unwrap();
            let mm = moment_matrices(&minus, 1).unwrap();
            assert!(close(mm.s_tilde[0], mp.s_tilde[0], 1e-12));
            assert!(close(mm.s_tilde[1], mp.s_tilde[1], 1e-12));
            assert!(close(mm.s_tilde[2], -mp.s_tilde[2], 1e-12));
            let k = |s: &KernelSpec, a, b| kernel_moment(s, (a, b), 1).unwrap();
            assert!(close(k(&minus, 2, 1), -k(&plus, 2, 1), 1e-15));
            assert!(close(k(&minus, 0, 3), -k(&plus, 0, 3), 1e-15));
            assert!(close(mm.variance_constant(), mp.variance_constant(), 1e-9));
            assert!(close(mm.s_tilde11, mp.s_tilde11, 1e-12));
            assert!(close(mm.s_tilde22, mp.s_tilde22, 1e-12));
        }
    }

    #[test]
    fn normalization_by_quadrature() {
        for family in KernelFamily::ALL {
            for side in [Side::Plus, Side::Minus] {
                let spec = KernelSpec::new(family, side);
                let mass = quadrature_moment(&spec, (0, 0), 1).unwrap();
                assert!(close(mass, 1.0, 1e-8), "{spec:?}: {mass}");
            }
        }
    }

    #[test]
    fn restriction() {
        for family in [KernelFamily::ProductTriangular, KernelFamily::ProductEpanechnikov, KernelFamily::Cone] {
            for side in [Side::Plus, Side::Minus] {
                let r = check_restriction(&KernelSpec::new(family, side)).unwrap();
                assert!(r.satisfied, "{family:?} {r:?}");
            }
        }
        let shifted = check_restriction(&KernelSpec::new(KernelFamily::ShiftedTriangular, Side::Plus)).unwrap();
        assert!(!shifted.satisfied);
        // ∫ z1 K1 = 1/2 for the bump on [0, 1]
        assert!(close(shifted.z1, 0.5, 1e-9));
    }

    #[test]
    fn cache_returns_same_matrices() {
        let a = cached_moment_matrices(&PT, 2).unwrap();
        let b = cached_moment_matrices(&PT, 2).unwrap();
        assert!(Arc::ptr_eq(&a, &b));
        assert_eq!(*a, moment_matrices(&PT, 2).unwrap());
    }

    #[test]
    fn rejects_bad_order() {
        assert!(moment_matrices(&PT, 0).is_err());
        assert!(moment_matrices(&PT, 4).is_err());
    }
}
