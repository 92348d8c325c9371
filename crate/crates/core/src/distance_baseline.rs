//! The univariate "distance" approach: collapse the running variables to
//! the signed distance from the boundary point and run a one-dimensional
//! local-linear estimator with an IK-form bandwidth. Also the shrinking
//! density and Γ/Ψ diagnostics that explain why the selector misbehaves
//! when the density of the distance vanishes at zero.

use nalgebra::{DMatrix, DVector, Matrix2};
use serde::{Deserialize, Serialize};
use statrs::statistics::Statistics;

use crate::error::{MrdError, Result};
use crate::estimator::critical_value;
use crate::geometry::{BoundaryFrame, Dataset};
use crate::kernels::Side;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedDistanceSample {
    pub z: Vec<f64>,
    pub y: Vec<f64>,
}

impl SignedDistanceSample {
    pub fn new(z: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if z.len() != y.len() || z.is_empty() {
            return Err(MrdError::InvalidArgument(format!(
                "distance sample needs equal, nonzero lengths (got {} and {})",
                z.len(),
                y.len()
            )));
        }
        Ok(Self { z, y })
    }

    pub fn len(&self) -> usize {
        self.z.len()
    }

    pub fn is_empty(&self) -> bool {
        self.z.is_empty()
    }

    fn on_side(&self, side: Side) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.z
            .iter()
            .zip(&self.y)
            .filter(move |(z, _)| on_side(**z, side))
            .map(|(z, y)| (*z, *y))
    }
}

fn on_side(z: f64, side: Side) -> bool {
    match side {
        Side::Plus => z >= 0.0,
        Side::Minus => z < 0.0,
    }
}

/// `z = +‖r − c‖` for treated records and `−‖r − c‖` otherwise.
pub fn to_signed_distance(data: &Dataset, frame: &BoundaryFrame) -> SignedDistanceSample {
    let (z, y) = data
        .records()
        .iter()
        .map(|rec| {
            let dist = (rec.r[0] - frame.center[0]).hypot(rec.r[1] - frame.center[1]);
            (if rec.d { dist } else { -dist }, rec.y)
        })
        .unzip();
    SignedDistanceSample { z, y }
}

/// Triangular weight `(1 − |u|)₊`, the shape used on each side.
fn tri(u: f64) -> f64 {
    (1.0 - u.abs()).max(0.0)
}

/// Weighted polynomial fit of order `p` in `z` on one side.
#[derive(Debug, Clone, PartialEq)]
pub struct SideFit {
    pub side: Side,
    pub h: f64,
    pub coefficients: DVector<f64>,
    pub effective_n: usize,
    /// Weighted mean of squared residuals.
    pub sigma2: f64,
    gram_inv: DMatrix<f64>,
    /// `Σ w² x x'` over the support.
    meat_unit: DMatrix<f64>,
    /// `Σ w² x x' e²` over the support.
    meat_resid: DMatrix<f64>,
}

impl SideFit {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    /// Coefficient covariance under a homoskedastic variance `sigma2`.
    pub fn covariance(&self, sigma2: f64) -> DMatrix<f64> {
        sigma2 * &self.gram_inv * &self.meat_unit * &self.gram_inv
    }

    /// HC0 coefficient covariance.
    pub fn covariance_hc0(&self) -> DMatrix<f64> {
        &self.gram_inv * &self.meat_resid * &self.gram_inv
    }
}

pub fn side_fit(sample: &SignedDistanceSample, h: f64, p: usize, side: Side) -> Result<SideFit> {
    if !(h.is_finite() && h > 0.0) {
        return Err(MrdError::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    let d = p + 1;
    let mut rows = Vec::new();
    for (z, y) in sample.on_side(side) {
        let w = tri(z / h);
        if w > 0.0 {
            let x: Vec<f64> = (0..d).map(|k| (z / h).powi(k as i32)).collect();
            rows.push((w, x, y));
        }
    }
    let effective_n = rows.len();
    if effective_n < d + 1 {
        return Err(MrdError::InsufficientLocalData {
            side,
            effective_n,
            condition: f64::INFINITY,
        });
    }
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    for (w, x, y) in &rows {
        for a in 0..d {
            rhs[a] += w * x[a] * y;
            for b in 0..d {
                gram[(a, b)] += w * x[a] * x[b];
            }
        }
    }
    let svd = gram.svd(true, true);
    let cond = svd.singular_values.max() / svd.singular_values.min();
    if !(cond.is_finite() && cond < 1e12) {
        return Err(MrdError::InsufficientLocalData {
            side,
            effective_n,
            condition: cond,
        });
    }
    let beta = svd
        .solve(&rhs, 0.0)
        .map_err(|e| MrdError::InvalidArgument(e.to_string()))?;
    let gram_inv = svd
        .pseudo_inverse(0.0)
        .map_err(|e| MrdError::InvalidArgument(e.to_string()))?;
    let mut meat_unit = DMatrix::zeros(d, d);
    let mut meat_resid = DMatrix::zeros(d, d);
    let (mut wsum, mut wres) = (0.0, 0.0);
    for (w, x, y) in &rows {
        let fitted: f64 = x.iter().zip(beta.iter()).map(|(a, b)| a * b).sum();
        let e = y - fitted;
        wsum += w;
        wres += w * e * e;
        for a in 0..d {
            for b in 0..d {
                let v = w * w * x[a] * x[b];
                meat_unit[(a, b)] += v;
                meat_resid[(a, b)] += v * e * e;
            }
        }
    }
    // back to the original scale of z
    let scale = DVector::from_iterator(d, (0..d).map(|k| h.powi(-(k as i32))));
    let unscale = |m: DMatrix<f64>| m.component_mul(&(&scale * scale.transpose()));
    Ok(SideFit {
        side,
        h,
        coefficients: beta.component_mul(&scale),
        effective_n,
        sigma2: wres / wsum,
        gram_inv: unscale(gram_inv.clone()),
        meat_unit: meat_unit.component_div(&(&scale * scale.transpose())),
        meat_resid: meat_resid.component_div(&(&scale * scale.transpose())),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnivariateEstimate {
    pub theta: f64,
    pub se: f64,
    pub h: f64,
    pub eff_n_plus: usize,
    pub eff_n_minus: usize,
}

/// Difference of local-linear intercepts with HC0 standard error.
pub fn univariate_ll(sample: &SignedDistanceSample, h: f64) -> Result<UnivariateEstimate> {
    let plus = side_fit(sample, h, 1, Side::Plus)?;
    let minus = side_fit(sample, h, 1, Side::Minus)?;
    let var = plus.covariance_hc0()[(0, 0)] + minus.covariance_hc0()[(0, 0)];
    Ok(UnivariateEstimate {
        theta: plus.intercept() - minus.intercept(),
        se: var.max(0.0).sqrt(),
        h,
        eff_n_plus: plus.effective_n,
        eff_n_minus: minus.effective_n,
    })
}

/// Half-kernel constants of the local-linear intercept with the triangular
/// kernel: `(c_v, c_b)` with variance `c_v σ² / (f n h)` and bias
/// `c_b m'' h² / 2`.
pub fn local_linear_constants() -> (f64, f64) {
    // μ_j = ∫₀¹ u^j (1-u) du, ν_j = ∫₀¹ u^j (1-u)² du
    let mu = |j: i32| 1.0 / ((j + 1) * (j + 2)) as f64;
    let nu = |j: i32| 2.0 / ((j + 1) * (j + 2) * (j + 3)) as f64;
    let det = mu(0) * mu(2) - mu(1) * mu(1);
    let cb = (mu(2) * mu(2) - mu(1) * mu(3)) / det;
    let cv = (mu(2) * mu(2) * nu(0) - 2.0 * mu(1) * mu(2) * nu(1) + mu(1) * mu(1) * nu(2)) / (det * det);
    (cv, cb)
}

/// `C = (c_v / c_b²)^{1/5}`.
pub fn ik_constant() -> f64 {
    let (cv, cb) = local_linear_constants();
    (cv / (cb * cb)).powf(0.2)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IkBandwidth {
    pub h: f64,
    pub constant: f64,
    pub v_hat: f64,
    pub f_hat: f64,
    pub b_hat: f64,
    pub h_pilot: f64,
    pub h_curvature: f64,
    pub sigma2_plus: f64,
    pub sigma2_minus: f64,
    pub m2_plus: f64,
    pub m2_minus: f64,
    /// Variance of `m2_plus − m2_minus`.
    pub m2_delta_var: f64,
}

impl IkBandwidth {
    /// `C (V / (f B))^{1/5} n^{-1/5}` from stated components.
    pub fn formula(constant: f64, v_hat: f64, f_hat: f64, b_hat: f64, n: usize) -> f64 {
        constant * (v_hat / (f_hat * b_hat)).powf(0.2) * (n as f64).powf(-0.2)
    }
}

fn sample_sd(z: &[f64]) -> f64 {
    z.std_dev()
}

/// Default pilot `n^{-1/5} sd(Z)`.
pub fn default_pilot(sample: &SignedDistanceSample) -> f64 {
    (sample.len() as f64).powf(-0.2) * sample_sd(&sample.z)
}

/// Curvature pilot `2 sd(Z) n^{-1/7}`, independent of the density pilot.
pub fn curvature_pilot(sample: &SignedDistanceSample) -> f64 {
    2.0 * sample_sd(&sample.z) * (sample.len() as f64).powf(-1.0 / 7.0)
}

/// Two-sided triangular density estimate of `Z` at zero.
pub fn density_of_distance(sample: &SignedDistanceSample, h: f64) -> f64 {
    let s: f64 = sample.z.iter().map(|z| tri(z / h)).sum();
    s / (sample.len() as f64 * h)
}

/// IK-form bandwidth. `f̂_Z(0)` and `V̂` use `h_pilot`; the second
/// derivatives come from local quadratics at [`curvature_pilot`].
pub fn ik_bandwidth(sample: &SignedDistanceSample, h_pilot: f64) -> Result<IkBandwidth> {
    if !(h_pilot.is_finite() && h_pilot > 0.0) {
        return Err(MrdError::InvalidArgument(format!("pilot bandwidth must be positive, got {h_pilot}")));
    }
    let n = sample.len();
    let f_hat = density_of_distance(sample, h_pilot);
    let s_plus = side_fit(sample, h_pilot, 1, Side::Plus)?.sigma2;
    let s_minus = side_fit(sample, h_pilot, 1, Side::Minus)?.sigma2;
    let v_hat = s_plus + s_minus;
    let hc = curvature_pilot(sample);
    let qp = side_fit(sample, hc, 2, Side::Plus)?;
    let qm = side_fit(sample, hc, 2, Side::Minus)?;
    let m2p = 2.0 * qp.coefficients[2];
    let m2m = 2.0 * qm.coefficients[2];
    let var = 4.0 * (qp.covariance(qp.sigma2)[(2, 2)] + qm.covariance(qm.sigma2)[(2, 2)]);
    let b_hat = (m2p - m2m).powi(2) + 3.0 * var;
    let constant = ik_constant();
    if !(f_hat > 0.0 && b_hat > 0.0 && v_hat > 0.0) {
        return Err(MrdError::DegenerateSelection(format!(
            "distance bandwidth: f = {f_hat:e}, B = {b_hat:e}, V = {v_hat:e}"
        )));
    }
    let h = IkBandwidth::formula(constant, v_hat, f_hat, b_hat, n);
    if !(h.is_finite() && h > 0.0) {
        return Err(MrdError::DegenerateSelection(format!("distance bandwidth is {h}")));
    }
    Ok(IkBandwidth {
        h,
        constant,
        v_hat,
        f_hat,
        b_hat,
        h_pilot,
        h_curvature: hc,
        sigma2_plus: s_plus,
        sigma2_minus: s_minus,
        m2_plus: m2p,
        m2_minus: m2m,
        m2_delta_var: var,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistanceEstimate {
    pub theta: f64,
    pub theta_bc: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub h: f64,
    pub h_pilot: f64,
    pub eff_n_plus: usize,
    pub eff_n_minus: usize,
    pub selection: IkBandwidth,
}

/// Local-linear estimate at the IK-form bandwidth, with plug-in bias
/// correction from the curvature fits and a standard error that includes
/// the variance of the correction.
pub fn distance_estimate(sample: &SignedDistanceSample, h_pilot: Option<f64>, alpha: f64) -> Result<DistanceEstimate> {
    let z = critical_value(alpha)?;
    let hp = h_pilot.unwrap_or_else(|| default_pilot(sample));
    let sel = ik_bandwidth(sample, hp)?;
    let h = sel.h;
    let plus = side_fit(sample, h, 1, Side::Plus)?;
    let minus = side_fit(sample, h, 1, Side::Minus)?;
    let theta = plus.intercept() - minus.intercept();
    let (_, cb) = local_linear_constants();
    let w = 0.5 * h * h * cb;
    let theta_bc = theta - w * (sel.m2_plus - sel.m2_minus);
    let var = plus.covariance(sel.sigma2_plus)[(0, 0)] + minus.covariance(sel.sigma2_minus)[(0, 0)]
        + w * w * sel.m2_delta_var;
    let se = var.max(0.0).sqrt();
    Ok(DistanceEstimate {
        theta,
        theta_bc,
        se,
        ci_low: theta_bc - z * se,
        ci_high: theta_bc + z * se,
        h,
        h_pilot: hp,
        eff_n_plus: plus.effective_n,
        eff_n_minus: minus.effective_n,
        selection: sel,
    })
}

/// `f̌(0) = (ň h)⁻¹ Σ K1(|Z| / h)` over one side, `K1(u) = 2(1 − u)` on
/// `[0, 1]`.
pub fn density_at_zero(sample: &SignedDistanceSample, side: Side, h: f64) -> Result<f64> {
    if !(h.is_finite() && h > 0.0) {
        return Err(MrdError::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    let mut count = 0usize;
    let mut s = 0.0;
    for (z, _) in sample.on_side(side) {
        count += 1;
        let u = z.abs() / h;
        if u <= 1.0 {
            s += 2.0 * (1.0 - u);
        }
    }
    if count == 0 {
        return Err(MrdError::EmptySide(side));
    }
    Ok(s / (count as f64 * h))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaPsi {
    pub h: f64,
    pub gamma_plus: [[f64; 2]; 2],
    pub gamma_minus: [[f64; 2]; 2],
    pub psi_plus: [[f64; 2]; 2],
    pub psi_minus: [[f64; 2]; 2],
    /// `e1'Γ⁻¹ΨΓ⁻¹e1 / n`; `None` when Γ is singular.
    pub v_plus: Option<f64>,
    pub v_minus: Option<f64>,
}

fn to_array(m: &Matrix2<f64>) -> [[f64; 2]; 2] {
    [[m[(0, 0)], m[(0, 1)]], [m[(1, 0)], m[(1, 1)]]]
}

/// Conditional variance input for [`gamma_psi`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Variance<'a> {
    Scalar(f64),
    PerRecord(&'a [f64]),
}

/// `Γ±(h) = (nh)⁻¹ Σ K(Z/h) r r'`, `Ψ±(h) = (nh²)⁻¹ Σ K(Z/h)² r r' σ²`,
/// `r = (1, Z/h)`, `K(u) = 2(1 − |u|)` on each side.
pub fn gamma_psi(sample: &SignedDistanceSample, h: f64, sigma2: Variance<'_>) -> Result<GammaPsi> {
    if !(h.is_finite() && h > 0.0) {
        return Err(MrdError::InvalidArgument(format!("bandwidth must be positive, got {h}")));
    }
    if let Variance::PerRecord(v) = sigma2 {
        if v.len() != sample.len() {
            return Err(MrdError::InvalidArgument("one variance per record is required".into()));
        }
    }
    let n = sample.len() as f64;
    let mut g = [Matrix2::zeros(), Matrix2::zeros()];
    let mut p = [Matrix2::zeros(), Matrix2::zeros()];
    for (i, &z) in sample.z.iter().enumerate() {
        let u = z / h;
        let k = 2.0 * tri(u);
        if k == 0.0 {
            continue;
        }
        let s = usize::from(z < 0.0);
        let r = nalgebra::Vector2::new(1.0, u);
        let rr = r * r.transpose();
        let s2 = match sigma2 {
            Variance::Scalar(v) => v,
            Variance::PerRecord(v) => v[i],
        };
        g[s] += k * rr;
        p[s] += k * k * s2 * rr;
    }
    let g = g.map(|m| m / (n * h));
    let p = p.map(|m| m / (n * h * h));
    let v = |gm: &Matrix2<f64>, pm: &Matrix2<f64>| {
        gm.try_inverse().map(|gi| (gi * pm * gi)[(0, 0)] / n)
    };
    Ok(GammaPsi {
        h,
        gamma_plus: to_array(&g[0]),
        gamma_minus: to_array(&g[1]),
        psi_plus: to_array(&p[0]),
        psi_minus: to_array(&p[1]),
        v_plus: v(&g[0], &p[0]),
        v_minus: v(&g[1], &p[1]),
    })
}

/// Limits of `h⁻¹Γ+`, `Ψ+` and `n h² V+` when `f_Z(z) ≈ f_Z'(0) z` near
/// zero, for the kernel of [`gamma_psi`].
pub fn gamma_psi_limits(fz_prime: f64, sigma2: f64) -> ([[f64; 2]; 2], [[f64; 2]; 2], f64) {
    let cg = Matrix2::new(1.0 / 3.0, 1.0 / 6.0, 1.0 / 6.0, 1.0 / 10.0) * fz_prime;
    let cp = Matrix2::new(1.0 / 3.0, 2.0 / 15.0, 2.0 / 15.0, 1.0 / 15.0) * (fz_prime * sigma2);
    let gi = cg.try_inverse().expect("constant matrix is invertible");
    let v = (gi * cp * gi)[(0, 0)];
    (to_array(&cg), to_array(&cp), v)
}

/// `‖A − B‖_F / ‖B‖_F`
pub fn relative_frobenius(a: &[[f64; 2]; 2], b: &[[f64; 2]; 2]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for i in 0..2 {
        for j in 0..2 {
            num += (a[i][j] - b[i][j]).powi(2);
            den += b[i][j].powi(2);
        }
    }
    (num / den).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::{uniform_half_rectangle, univariate_sample};
    use crate::geometry::Record;
    use crate::quadrature::integrate;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn signed_distances() {
        let data = Dataset::new(vec![
            Record { y: 0.0, r: [4.0, 6.0], d: true },
            Record { y: 0.0, r: [4.0, 6.0], d: false },
            Record { y: 0.0, r: [1.0, 2.0], d: true },
        ])
        .unwrap();
        let frame = BoundaryFrame::new([1.0, 2.0], [0.0, 1.0]).unwrap();
        let s = to_signed_distance(&data, &frame);
        assert_eq!(s.z, vec![5.0, -5.0, 0.0]);
    }

    fn grid_sample(n: usize, f: impl Fn(f64) -> f64) -> SignedDistanceSample {
        let z: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * (i as f64 + 0.5) / n as f64).collect();
        let y = z.iter().map(|&z| f(z)).collect();
        SignedDistanceSample::new(z, y).unwrap()
    }

    #[test]
    fn step_and_line() {
        let s = grid_sample(200, |z| if z >= 0.0 { 0.7 } else { 0.0 });
        assert!((univariate_ll(&s, 0.3).unwrap().theta - 0.7).abs() < 1e-10);
        let l = grid_sample(200, |z| 1.0 + 2.0 * z);
        assert!(univariate_ll(&l, 0.5).unwrap().theta.abs() < 1e-8);
    }

    #[test]
    fn matches_brute_force_wls() {
        let z: Vec<f64> = (0..40).map(|i| -1.0 + 0.05 * i as f64 + 0.013 * (i % 3) as f64).collect();
        let y: Vec<f64> = z.iter().map(|z| (3.0 * z).sin() + 0.1 * z * z).collect();
        let s = SignedDistanceSample::new(z.clone(), y.clone()).unwrap();
        let h = 0.6;
        let est = univariate_ll(&s, h).unwrap();
        let solve = |plus: bool| {
            let mut g = nalgebra::Matrix2::<f64>::zeros();
            let mut c = nalgebra::Vector2::<f64>::zeros();
            for (zi, yi) in z.iter().zip(&y) {
                if (*zi >= 0.0) != plus {
                    continue;
                }
                let w = (1.0 - (zi / h).abs()).max(0.0);
                let x = nalgebra::Vector2::new(1.0, *zi);
                g += w * x * x.transpose();
                c += w * yi * x;
            }
            (g.try_inverse().unwrap() * c)[0]
        };
        assert!((est.theta - (solve(true) - solve(false))).abs() < 1e-10);
    }

    #[test]
    fn triangular_ik_constant() {
        assert!((ik_constant() - 3.4375).abs() < 5e-4, "{}", ik_constant());
        let (cv, cb) = local_linear_constants();
        assert!((cv - 4.8).abs() < 1e-12);
        assert!((cb + 0.1).abs() < 1e-12);
    }

    #[test]
    fn variance_rescaling_exponent() {
        let a = IkBandwidth::formula(ik_constant(), 1.0, 0.5, 2.0, 1000);
        let b = IkBandwidth::formula(ik_constant(), 4.0, 0.5, 2.0, 1000);
        assert!((b / a - 4.0f64.powf(0.2)).abs() < 1e-12);
    }

    #[test]
    fn limits_match_quadrature() {
        let k = |u: f64| 2.0 * (1.0 - u);
        let m = |j: i32, v: i32| integrate(|u| u * u.powi(j) * k(u).powi(v), 0.0, 1.0, &[], 1e-12);
        let (cg, cp, _) = gamma_psi_limits(1.0, 1.0);
        assert!((cg[0][0] - m(0, 1)).abs() < 1e-10);
        assert!((cg[0][1] - m(1, 1)).abs() < 1e-10);
        assert!((cg[1][1] - m(2, 1)).abs() < 1e-10);
        assert!((cp[0][0] - m(0, 2)).abs() < 1e-10);
        assert!((cp[0][1] - m(1, 2)).abs() < 1e-10);
        assert!((cp[1][1] - m(2, 2)).abs() < 1e-10);
    }

    #[test]
    fn half_rectangle_distance_cdf() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let data = uniform_half_rectangle(100_000, 0.1, 0.0, &mut rng);
        let s = to_signed_distance(&data, &BoundaryFrame::origin());
        for z in [0.2, 0.5, 0.8] {
            let p = s.z.iter().filter(|v| **v <= z).count() as f64 / s.len() as f64;
            assert!((p - std::f64::consts::FRAC_PI_4 * z * z).abs() < 0.01, "{z}: {p}");
        }
    }

    #[test]
    fn univariate_density_control() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let (z, y) = univariate_sample(100_000, 0.0, 0.1, &mut rng);
        let s = SignedDistanceSample::new(z, y).unwrap();
        let f = density_at_zero(&s, Side::Plus, 0.1).unwrap();
        assert!((f - 1.0).abs() < 0.05, "{f}");
        assert!(matches!(
            density_at_zero(&SignedDistanceSample::new(vec![-1.0], vec![0.0]).unwrap(), Side::Plus, 0.1),
            Err(MrdError::EmptySide(Side::Plus))
        ));
    }

    #[test]
    fn gamma_psi_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let (z, y) = univariate_sample(2000, 0.5, 0.1, &mut rng);
        let s = SignedDistanceSample::new(z, y).unwrap();
        let gp = gamma_psi(&s, 0.3, Variance::Scalar(0.01)).unwrap();
        for m in [gp.gamma_plus, gp.gamma_minus, gp.psi_plus, gp.psi_minus] {
            assert_eq!(m[0][1], m[1][0]);
        }
        assert!(gp.v_plus.unwrap() >= 0.0 && gp.v_minus.unwrap() >= 0.0);
    }

    #[test]
    fn baseline_estimate_runs() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let (z, y) = univariate_sample(5000, 0.5, 0.1295, &mut rng);
        let s = SignedDistanceSample::new(z, y).unwrap();
        let est = distance_estimate(&s, None, 0.05).unwrap();
        assert!(est.h > 0.0 && est.ci_low < est.ci_high);
        assert!((est.theta_bc - 0.5).abs() < 5.0 * est.se);
    }
}
