//! Bivariate local-polynomial weighted least squares.
//!
//! Coefficients are reported on the original coordinate scale: entry `k` of
//! [`LocalFit::coefficients`] multiplies `z1^a1 z2^a2` for the `k`-th exponent
//! pair of the [`MultiIndexSet`], so it estimates `∂^(a1,a2) m(0) / (a1! a2!)`.
//! Internally the design is built in bandwidth-scaled coordinates `z / h`,
//! which keeps the Gram matrix well conditioned for any bandwidth.

use nalgebra::{DMatrix, DVector};

use crate::error::{MrdError, Result};
use crate::geometry::{Dataset, Point};
use crate::kernels::{KernelSpec, Side};

/// Monomials of total degree `0..=p` in two variables, ordered by degree and,
/// within a degree, by decreasing power of `z1`: `1, z1, z2, z1², z1z2, z2², ...`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiIndexSet {
    p: usize,
    exponents: Vec<[u32; 2]>,
}

impl MultiIndexSet {
    pub fn new(p: usize) -> Self {
        let exponents = (0..=p).flat_map(Self::order_block).collect();
        Self { p, exponents }
    }

    /// The exponent pairs of total degree exactly `order`.
    pub fn order_block(order: usize) -> Vec<[u32; 2]> {
        let l = order as u32;
        (0..=l).map(|k| [l - k, k]).collect()
    }

    pub fn order(&self) -> usize {
        self.p
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn exponents(&self) -> &[[u32; 2]] {
        &self.exponents
    }

    /// `a1! a2!` for every entry.
    pub fn factorials(&self) -> Vec<f64> {
        self.exponents
            .iter()
            .map(|&[a, b]| factorial(a) * factorial(b))
            .collect()
    }

    pub fn position(&self, exponent: [u32; 2]) -> Option<usize> {
        self.exponents.iter().position(|&e| e == exponent)
    }
}

fn factorial(n: u32) -> f64 {
    (1..=n).map(f64::from).product()
}

/// Monomials of `z` in the order of `idx`.
pub fn design_row(z: Point, idx: &MultiIndexSet) -> Vec<f64> {
    let mut row = vec![0.0; idx.len()];
    fill_row(z, idx, &mut row);
    row
}

#[inline]
fn fill_row(z: Point, idx: &MultiIndexSet, out: &mut [f64]) {
    // Successive degrees: each block is the previous block times z1, plus the
    // last entry times z2.
    out[0] = 1.0;
    let mut start = 0;
    let mut pos = 1;
    for order in 1..=idx.p {
        let prev = order; // length of the previous block
        for k in 0..prev {
            out[pos + k] = out[start + k] * z[0];
        }
        out[pos + prev] = out[start + prev - 1] * z[1];
        start = pos;
        pos += order + 1;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Sigma2<'a> {
    /// One homoskedastic variance for every record.
    Scalar(f64),
    /// A variance per record of the dataset the fit was computed on.
    PerRecord(&'a [f64]),
    /// Squared fit residuals (HC0).
    Residuals,
}

#[derive(Debug, Clone)]
pub struct LocalFit {
    pub coefficients: DVector<f64>,
    pub bandwidth: [f64; 2],
    pub p: usize,
    pub side: Side,
    pub effective_n: usize,
    pub weight_sum: f64,
    /// Condition number of the bandwidth-scaled Gram matrix.
    pub condition: f64,
    /// Dataset indices of the records with positive weight.
    pub support: Vec<usize>,
    pub weights: Vec<f64>,
    pub residuals: Vec<f64>,
    /// HC0 sandwich covariance of `coefficients`.
    pub covariance: DMatrix<f64>,
    idx: MultiIndexSet,
    scale: DVector<f64>,
    scaled_rows: Vec<f64>,
    scaled_gram_inv: DMatrix<f64>,
}

impl LocalFit {
    pub fn intercept(&self) -> f64 {
        self.coefficients[0]
    }

    pub fn indices(&self) -> &MultiIndexSet {
        &self.idx
    }

    /// The coefficient of `z1^a1 z2^a2`.
    pub fn coefficient(&self, exponent: [u32; 2]) -> Option<f64> {
        self.idx.position(exponent).map(|k| self.coefficients[k])
    }

    /// The weighted Gram matrix `Σ w x x'` on the original coordinate scale.
    pub fn gram(&self) -> DMatrix<f64> {
        let d = self.idx.len();
        let mut g = DMatrix::zeros(d, d);
        for (i, &w) in self.weights.iter().enumerate() {
            let row = &self.scaled_rows[i * d..(i + 1) * d];
            for a in 0..d {
                for b in 0..d {
                    g[(a, b)] += w * row[a] * row[b];
                }
            }
        }
        g.component_mul(&(&self.scale * self.scale.transpose()))
    }

    fn meat(&self, sigma2: &Sigma2<'_>) -> Result<DMatrix<f64>> {
        let d = self.idx.len();
        let mut meat = DMatrix::zeros(d, d);
        for (i, (&w, &e)) in self.weights.iter().zip(&self.residuals).enumerate() {
            let s2 = match sigma2 {
                Sigma2::Scalar(s) => *s,
                Sigma2::PerRecord(v) => *v.get(self.support[i]).ok_or_else(|| {
                    MrdError::InvalidArgument(format!(
                        "per-record variance missing for record {}",
                        self.support[i]
                    ))
                })?,
                Sigma2::Residuals => e * e,
            };
            let c = w * w * s2;
            let row = &self.scaled_rows[i * d..(i + 1) * d];
            for a in 0..d {
                for b in a..d {
                    meat[(a, b)] += c * row[a] * row[b];
                }
            }
        }
        meat.fill_lower_triangle_with_upper_triangle();
        Ok(meat)
    }

    /// `G⁻¹ (Σ w_i² x_i x_i' σ_i²) G⁻¹` on the original coordinate scale.
    pub fn sandwich(&self, sigma2: &Sigma2<'_>) -> Result<DMatrix<f64>> {
        let meat = self.meat(sigma2)?;
        let cov = &self.scaled_gram_inv * meat * &self.scaled_gram_inv;
        let inv_scale = self.scale.map(|s| 1.0 / s);
        let mut out = cov.component_mul(&(&inv_scale * inv_scale.transpose()));
        out.fill_lower_triangle_with_upper_triangle();
        Ok(out)
    }

    /// Weighted mean of squared residuals.
    pub fn mean_squared_residual(&self) -> f64 {
        let num: f64 = self
            .weights
            .iter()
            .zip(&self.residuals)
            .map(|(w, e)| w * e * e)
            .sum();
        num / self.weight_sum
    }
}

/// Finite-sample sandwich covariance of a fit's coefficients.
pub fn sandwich_covariance(fit: &LocalFit, sigma2: &Sigma2<'_>) -> Result<DMatrix<f64>> {
    fit.sandwich(sigma2)
}

/// Largest acceptable condition number of the scaled Gram matrix.
pub const MAX_CONDITION: f64 = 1e12;

/// Kernel-weighted polynomial fit of order `p` on the records of
/// `spec.side`, in coordinates already centered at the boundary point.
///
/// Records are assigned to a side by their treatment flag; the kernel
/// `spec` then weights them by `K±(z1 / h1, z2 / h2)`.
pub fn fit(data: &Dataset, bandwidth: [f64; 2], p: usize, spec: &KernelSpec) -> Result<LocalFit> {
    if !bandwidth.iter().all(|h| h.is_finite() && *h > 0.0) {
        return Err(MrdError::InvalidArgument(format!(
            "bandwidths must be positive and finite, got {bandwidth:?}"
        )));
    }
    if !(1..=3).contains(&p) {
        return Err(MrdError::InvalidArgument(format!("local polynomial order must be 1..=3, got {p}")));
    }
    let idx = MultiIndexSet::new(p);
    let d = idx.len();
    let side = spec.side;
    let [h1, h2] = bandwidth;

    let mut support = Vec::new();
    let mut weights = Vec::new();
    let mut ys = Vec::new();
    let mut scaled_rows = Vec::new();
    let mut row = vec![0.0; d];
    for (i, rec) in data.records().iter().enumerate() {
        if !side.matches(rec.d) {
            continue;
        }
        let u = [rec.r[0] / h1, rec.r[1] / h2];
        let w = spec.eval(u);
        if w > 0.0 {
            fill_row(u, &idx, &mut row);
            support.push(i);
            weights.push(w);
            ys.push(rec.y);
            scaled_rows.extend_from_slice(&row);
        }
    }
    let effective_n = support.len();
    if effective_n < d {
        return Err(MrdError::InsufficientLocalData {
            side,
            effective_n,
            condition: f64::INFINITY,
        });
    }

    // Householder QR of the root-weighted design; the Gram matrix is R'R.
    let mut design = DMatrix::<f64>::zeros(effective_n, d);
    let mut rhs = DVector::<f64>::zeros(effective_n);
    for (k, (&w, &y)) in weights.iter().zip(&ys).enumerate() {
        let sw = w.sqrt();
        for a in 0..d {
            design[(k, a)] = sw * scaled_rows[k * d + a];
        }
        rhs[k] = sw * y;
    }
    let qr = design.qr();
    let r = qr.r();
    let sv = r.singular_values();
    let (smax, smin) = (sv.max(), sv.min());
    let condition = if smin > 0.0 { (smax / smin).powi(2) } else { f64::INFINITY };
    if !(condition.is_finite() && condition < MAX_CONDITION) {
        return Err(MrdError::InsufficientLocalData {
            side,
            effective_n,
            condition,
        });
    }
    let qty = qr.q().tr_mul(&rhs);
    let singular = || MrdError::InsufficientLocalData {
        side,
        effective_n,
        condition,
    };
    let solution = r.solve_upper_triangular(&qty).ok_or_else(singular)?;
    let r_inv = r
        .solve_upper_triangular(&DMatrix::identity(d, d))
        .ok_or_else(singular)?;
    let scaled_gram_inv = &r_inv * r_inv.transpose();

    let residuals: Vec<f64> = ys
        .iter()
        .enumerate()
        .map(|(k, y)| {
            let x = &scaled_rows[k * d..(k + 1) * d];
            y - x.iter().zip(solution.iter()).map(|(a, b)| a * b).sum::<f64>()
        })
        .collect();

    let scale = DVector::from_iterator(
        d,
        idx.exponents()
            .iter()
            .map(|&[a, b]| h1.powi(a as i32) * h2.powi(b as i32)),
    );
    let coefficients = solution.component_div(&scale);
    let weight_sum = weights.iter().sum();

    let mut fit = LocalFit {
        coefficients,
        bandwidth,
        p,
        side,
        effective_n,
        weight_sum,
        condition,
        support,
        weights,
        residuals,
        covariance: DMatrix::zeros(d, d),
        idx,
        scale,
        scaled_rows,
        scaled_gram_inv,
    };
    fit.covariance = fit.sandwich(&Sigma2::Residuals)?;
    Ok(fit)
}
