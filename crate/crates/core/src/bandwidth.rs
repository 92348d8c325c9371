//! Bandwidth selection for the two-dimensional local-linear estimator.
//!
//! The pipeline per boundary point:
//!
//! 1. a preliminary bandwidth per side from global quartic fits,
//! 2. pilot bandwidths per side from local cubic fits at the preliminary
//!    bandwidth, targeting the second-derivative estimates,
//! 3. residual variances from local-linear fits, and second derivatives
//!    with their variances from local-quadratic fits, at the pilot bandwidths,
//! 4. the regularized plug-in `(h1, h2)`.
//!
//! Steps 1 and 2 run in coordinates divided by the pooled per-axis sample
//! standard deviation, so they commute with rescaling either axis.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{MrdError, Result};
use crate::geometry::{Dataset, Record};
use crate::kernels::{cached_moment_matrices, kernel_moment, KernelFamily, KernelSpec, Side};
use crate::localpoly::{self, MultiIndexSet, Sigma2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum BandwidthMode {
    #[default]
    Heterogeneous,
    Common,
    Fixed([f64; 2]),
}

/// Whether the variance constant is divided by the density at the boundary
/// point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VarianceScaling {
    /// `V = (σ+² + σ-²) e1'S⁻¹𝒦S⁻¹e1`
    Unadjusted,
    /// `V = (σ+² + σ-²) e1'S⁻¹𝒦S⁻¹e1 / f̂(c)`
    #[default]
    DensityAdjusted,
}

pub const DEFAULT_SIGMA2_REFINEMENTS: usize = 0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectorOptions {
    pub mode: BandwidthMode,
    pub scaling: VarianceScaling,
    /// `c` in `h1⁶ = c V / n · A1^{-5/4} A2^{1/4}`.
    pub leading_constant: f64,
    /// Rounds of re-estimating `σ̂²` by a local-linear fit at the current
    /// `h` and reselecting.
    pub sigma2_refinements: usize,
}

impl Default for SelectorOptions {
    fn default() -> Self {
        Self {
            mode: BandwidthMode::Heterogeneous,
            scaling: VarianceScaling::DensityAdjusted,
            leading_constant: 0.5,
            sigma2_refinements: DEFAULT_SIGMA2_REFINEMENTS,
        }
    }
}

/// Second-derivative estimates on each side and the bias constants built
/// from them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BiasTerms {
    pub b1_hat: f64,
    pub b2_hat: f64,
    pub var_b1: f64,
    pub var_b2: f64,
    pub d11_plus: f64,
    pub d22_plus: f64,
    pub d12_plus: f64,
    pub d11_minus: f64,
    pub d22_minus: f64,
    pub d12_minus: f64,
    /// Covariance of `(Δ∂11, Δ∂22)`, treated minus control.
    pub delta_cov: [[f64; 2]; 2],
    pub s_tilde11: f64,
    pub s_tilde22: f64,
}

impl BiasTerms {
    pub fn delta11(&self) -> f64 {
        self.d11_plus - self.d11_minus
    }

    pub fn delta22(&self) -> f64 {
        self.d22_plus - self.d22_minus
    }

    /// Estimated leading bias of `θ̂` at bandwidths `h`.
    pub fn leading_bias(&self, h: [f64; 2]) -> f64 {
        let [w1, w2] = self.bias_weights(h);
        w1 * self.delta11() + w2 * self.delta22()
    }

    /// Variance of [`BiasTerms::leading_bias`] from the pilot fits.
    pub fn leading_bias_variance(&self, h: [f64; 2]) -> f64 {
        let w = self.bias_weights(h);
        let c = &self.delta_cov;
        w[0] * w[0] * c[0][0] + 2.0 * w[0] * w[1] * c[0][1] + w[1] * w[1] * c[1][1]
    }

    fn bias_weights(&self, h: [f64; 2]) -> [f64; 2] {
        [
            0.5 * h[0] * h[0] * self.s_tilde11,
            0.5 * h[1] * h[1] * self.s_tilde22,
        ]
    }
}

/// One pilot stage on one side.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StageBandwidth {
    pub bandwidth: [f64; 2],
    /// True when the range-based fallback replaced the plug-in rule.
    pub fallback: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BandwidthSelection {
    pub sigma2_plus: f64,
    pub sigma2_minus: f64,
    /// Density estimate at the boundary point, original units.
    pub fhat: f64,
    pub preliminary_plus: StageBandwidth,
    pub preliminary_minus: StageBandwidth,
    pub pilot_plus: StageBandwidth,
    pub pilot_minus: StageBandwidth,
    pub bias: BiasTerms,
    pub h1: f64,
    pub h2: f64,
    pub mode: BandwidthMode,
}

/// Per-axis scale used by the pilot stages.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Standardizer {
    pub scale: [f64; 2],
}

impl Standardizer {
    /// Pooled sample standard deviation of each coordinate.
    pub fn from_data(data: &Dataset) -> Self {
        let n = data.len() as f64;
        let mut scale = [1.0; 2];
        for (k, s) in scale.iter_mut().enumerate() {
            let mean = data.records().iter().map(|r| r.r[k]).sum::<f64>() / n;
            let var = data
                .records()
                .iter()
                .map(|r| (r.r[k] - mean).powi(2))
                .sum::<f64>()
                / (n - 1.0).max(1.0);
            if var.is_finite() && var > 0.0 {
                *s = var.sqrt();
            }
        }
        Self { scale }
    }

    pub fn apply(&self, data: &Dataset) -> Dataset {
        let [s1, s2] = self.scale;
        data.map_records(|r| Record {
            r: [r.r[0] / s1, r.r[1] / s2],
            ..*r
        })
    }

    pub fn to_original(&self, h: [f64; 2]) -> [f64; 2] {
        [h[0] * self.scale[0], h[1] * self.scale[1]]
    }
}

/// Records with fewer than this many observations on a side skip the global
/// quartic and use the range fallback.
pub const MIN_SIDE_FOR_QUARTIC: usize = 15;

fn side_records(data: &Dataset, side: Side) -> impl Iterator<Item = &Record> {
    data.records().iter().filter(move |r| side.matches(r.d))
}

/// Half of the side's coordinate range in each axis.
pub fn fallback_bandwidth(data: &Dataset, side: Side) -> Result<[f64; 2]> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    let mut any = false;
    for r in side_records(data, side) {
        any = true;
        for k in 0..2 {
            lo[k] = lo[k].min(r.r[k]);
            hi[k] = hi[k].max(r.r[k]);
        }
    }
    if !any {
        return Err(MrdError::EmptySide(side));
    }
    let h = [0.5 * (hi[0] - lo[0]), 0.5 * (hi[1] - lo[1])];
    if h.iter().all(|v| *v > 0.0) {
        Ok(h)
    } else {
        Err(MrdError::InsufficientLocalData {
            side,
            effective_n: side_records(data, side).count(),
            condition: f64::INFINITY,
        })
    }
}

fn kernel_norm(family: KernelFamily, z: [f64; 2]) -> f64 {
    if family.radial_support() {
        z[0].hypot(z[1])
    } else {
        z[0].abs().max(z[1].abs())
    }
}

/// Admissible isotropic bandwidths for a fit with `dim` coefficients: from
/// the radius holding about four points per coefficient up to the radius
/// covering the whole side.
fn isotropic_bounds(data: &Dataset, side: Side, family: KernelFamily, dim: usize) -> (f64, f64) {
    let mut radii: Vec<f64> = side_records(data, side)
        .map(|r| kernel_norm(family, r.r))
        .collect();
    radii.sort_by(|a, b| a.total_cmp(b));
    if radii.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let k = (4 * dim).min(radii.len()) - 1;
    let upper = radii[radii.len() - 1] * (1.0 + 1e-9);
    (radii[k] * (1.0 + 1e-9), upper)
}

fn clamp_isotropic(b: f64, bounds: (f64, f64)) -> Option<f64> {
    let (lo, hi) = bounds;
    if !(b.is_finite() && b > 0.0 && lo.is_finite() && hi.is_finite()) {
        return None;
    }
    Some(b.clamp(lo, hi.max(lo)))
}

/// Kernel density estimate at the origin from both sides,
/// `½ Σ± (n b±1 b±2)⁻¹ Σ_{side} K±(z / b±)`.
pub fn density_estimate(data: &Dataset, b_plus: [f64; 2], b_minus: [f64; 2], family: KernelFamily) -> f64 {
    let n = data.len() as f64;
    let side_sum = |side: Side, b: [f64; 2]| {
        let spec = KernelSpec::new(family, side);
        let s: f64 = side_records(data, side)
            .map(|r| spec.eval([r.r[0] / b[0], r.r[1] / b[1]]))
            .sum();
        s / (n * b[0] * b[1])
    };
    0.5 * (side_sum(Side::Plus, b_plus) + side_sum(Side::Minus, b_minus))
}

/// Weighted mean of squared local-linear residuals on one side.
pub fn estimate_sigma2(data: &Dataset, side: Side, pilot: [f64; 2], family: KernelFamily) -> Result<f64> {
    let fit = localpoly::fit(data, pilot, 1, &KernelSpec::new(family, side))?;
    Ok(fit.mean_squared_residual())
}

/// Unweighted global polynomial fit of order `p` on one side.
struct GlobalFit {
    coefficients: DVector<f64>,
    covariance: DMatrix<f64>,
    sigma2: f64,
}

fn global_fit(data: &Dataset, side: Side, p: usize) -> Option<GlobalFit> {
    let idx = MultiIndexSet::new(p);
    let d = idx.len();
    let recs: Vec<&Record> = side_records(data, side).collect();
    if recs.len() <= d {
        return None;
    }
    let mut gram = DMatrix::<f64>::zeros(d, d);
    let mut rhs = DVector::<f64>::zeros(d);
    let mut rows = Vec::with_capacity(recs.len());
    for r in &recs {
        let x = DVector::from_vec(localpoly::design_row(r.r, &idx));
        gram += &x * x.transpose();
        rhs += r.y * &x;
        rows.push(x);
    }
    let svd = gram.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if !(smin > 0.0 && smax / smin < 1e14) {
        return None;
    }
    let coefficients = svd.solve(&rhs, 0.0).ok()?;
    let inv = svd.pseudo_inverse(0.0).ok()?;
    let rss: f64 = recs
        .iter()
        .zip(&rows)
        .map(|(r, x)| (r.y - x.dot(&coefficients)).powi(2))
        .sum();
    let sigma2 = rss / (recs.len() - d) as f64;
    Some(GlobalFit {
        covariance: sigma2 * inv,
        coefficients,
        sigma2,
    })
}

/// Plug-in rule for the isotropic bandwidth of a fit of order `p` whose
/// targets are linear functionals of its order-`order` coefficients:
/// `b^(2p+4) = (order+1)/(p+1-order) · σ² V / (n f (Q + 3R))`.
fn plug_in(p: usize, order: usize, sigma2: f64, v: f64, n: f64, f: f64, q: f64, r: f64) -> f64 {
    let ratio = (order + 1) as f64 / (p + 1 - order) as f64;
    (ratio * sigma2 * v / (n * f * (q + 3.0 * r))).powf(1.0 / (2 * p + 4) as f64)
}

/// Weights mapping the order-2 coefficients `(γ20, γ02)` of a local
/// quadratic to the bias constants `(B1, B2)`: `B_k = 2 s̃kk γ_kk`.
fn target_weights(family: KernelFamily) -> Result<[f64; 2]> {
    let lin = cached_moment_matrices(&KernelSpec::new(family, Side::Plus), 1)?;
    Ok([2.0 * lin.s_tilde11, 2.0 * lin.s_tilde22])
}

/// Positions of `z1²` and `z2²` in the quadratic ordering.
const SQUARED: [usize; 2] = [3, 5];

/// Linear map from the order-3 coefficients of the mean to the leading bias
/// of the pilot targets `2 s̃kk γ̂kk` of a local quadratic on `side`.
fn pilot_target_bias_map(family: KernelFamily, side: Side) -> Result<DMatrix<f64>> {
    let quad = cached_moment_matrices(&KernelSpec::new(family, side), 2)?;
    let w = target_weights(family)?;
    let map = quad.bias_map();
    let mut out = DMatrix::zeros(2, map.ncols());
    for (row, (&k, wk)) in SQUARED.iter().zip(w).enumerate() {
        for c in 0..map.ncols() {
            out[(row, c)] = wk * map[(k, c)];
        }
    }
    Ok(out)
}

fn quad_form_trace(a: &DMatrix<f64>, cov: &DMatrix<f64>) -> f64 {
    (a * cov * a.transpose()).trace()
}

/// Internal state shared between the pilot stages on standardized data.
struct SideContext<'a> {
    data: &'a Dataset,
    family: KernelFamily,
    side: Side,
    n: f64,
    fhat: f64,
}

impl SideContext<'_> {
    fn fallback(&self) -> Result<StageBandwidth> {
        Ok(StageBandwidth {
            bandwidth: fallback_bandwidth(self.data, self.side)?,
            fallback: true,
        })
    }

    /// Returns the preliminary bandwidth and the global residual variance.
    fn preliminary(&self) -> Result<(StageBandwidth, Option<GlobalFit>)> {
        if side_records(self.data, self.side).count() < MIN_SIDE_FOR_QUARTIC {
            return Ok((self.fallback()?, None));
        }
        let Some(global) = global_fit(self.data, self.side, 4) else {
            return Ok((self.fallback()?, None));
        };
        let spec = KernelSpec::new(self.family, self.side);
        let cubic = cached_moment_matrices(&spec, 3)?;
        let l = pilot_target_bias_map(self.family, self.side)?;
        // rows 6..10 of the cubic fit are its third-order coefficients
        let bias3 = cubic.bias_map().rows(6, 4).into_owned();
        let a = &l * &bias3;
        let beta4 = global.coefficients.rows(10, 5).into_owned();
        let cov4 = global.covariance.view((10, 10), (5, 5)).into_owned();
        let q = (&a * &beta4).norm_squared();
        let r = quad_form_trace(&a, &cov4);
        let sigma3 = cubic.sandwich().view((6, 6), (4, 4)).into_owned();
        let v = quad_form_trace(&l, &sigma3);
        let b = plug_in(3, 3, global.sigma2, v, self.n, self.fhat, q, r);
        let bounds = isotropic_bounds(self.data, self.side, self.family, 10);
        match clamp_isotropic(b, bounds) {
            Some(b) => Ok((
                StageBandwidth {
                    bandwidth: [b, b],
                    fallback: false,
                },
                Some(global),
            )),
            None => Ok((self.fallback()?, Some(global))),
        }
    }

    /// Anisotropic pilot minimizing the summed plug-in MSE of the two
    /// targets `2 s̃kk γ̂kk` of a local quadratic. Third-order inputs come
    /// from a local cubic at the preliminary bandwidth, fourth-order inputs
    /// from the global quartic.
    fn pilot(&self, preliminary: [f64; 2], global: Option<&GlobalFit>) -> Result<StageBandwidth> {
        let spec = KernelSpec::new(self.family, self.side);
        let fit = match localpoly::fit(self.data, preliminary, 3, &spec) {
            Ok(f) => f,
            Err(MrdError::InsufficientLocalData { .. }) => return self.fallback(),
            Err(e) => return Err(e),
        };
        let sigma2 = global.map_or_else(|| fit.mean_squared_residual(), |g| g.sigma2);
        let mut beta: Vec<([u32; 2], f64)> = MultiIndexSet::order_block(3)
            .into_iter()
            .zip(fit.coefficients.rows(6, 4).iter().copied())
            .collect();
        if let Some(g) = global {
            beta.extend(MultiIndexSet::order_block(4).into_iter().zip(g.coefficients.rows(10, 5).iter().copied()));
        }
        let criterion = PilotCriterion::new(&spec, &beta, sigma2, self.n, self.fhat)?;
        let (lo, _) = isotropic_bounds(self.data, self.side, self.family, 6);
        let hi = axis_extent(self.data, self.side);
        if !(lo.is_finite() && hi.iter().all(|h| h.is_finite() && *h > 0.0)) {
            return self.fallback();
        }
        Ok(StageBandwidth {
            bandwidth: criterion.minimize([lo.min(hi[0]), lo.min(hi[1])], hi),
            fallback: false,
        })
    }
}

/// Largest absolute coordinate on a side in each axis.
fn axis_extent(data: &Dataset, side: Side) -> [f64; 2] {
    let mut m = [0.0f64; 2];
    for r in side_records(data, side) {
        for k in 0..2 {
            m[k] = m[k].max(r.r[k].abs());
        }
    }
    m.map(|v| v * (1.0 + 1e-9))
}

/// Plug-in MSE of the local-quadratic targets as a function of `(b1, b2)`.
struct PilotCriterion {
    /// Per target: `(coefficient, exponent)` pairs of the bias in original
    /// units before dividing by `b_k²`.
    bias: [Vec<(f64, [u32; 2])>; 2],
    /// Per target: `w² σ² Σkk / (n f)`.
    var: [f64; 2],
    weights: [f64; 2],
}

impl PilotCriterion {
    fn new(spec: &KernelSpec, beta: &[([u32; 2], f64)], sigma2: f64, n: f64, f: f64) -> Result<Self> {
        let quad = cached_moment_matrices(spec, 2)?;
        let idx = MultiIndexSet::new(2);
        let s_inv = quad.s_inv();
        let sandwich = quad.sandwich();
        let weights = target_weights(spec.family)?;
        let mut bias: [Vec<(f64, [u32; 2])>; 2] = [Vec::new(), Vec::new()];
        for &(a, coef) in beta {
            let mut col = DVector::zeros(idx.len());
            for (j, e) in idx.exponents().iter().enumerate() {
                col[j] = kernel_moment(spec, (e[0] + a[0], e[1] + a[1]), 1)?;
            }
            let mapped = &s_inv * col;
            for (t, &row) in SQUARED.iter().enumerate() {
                let c = mapped[row] * coef;
                if c != 0.0 {
                    bias[t].push((c, a));
                }
            }
        }
        let var = [0, 1].map(|t| weights[t].powi(2) * sigma2 * sandwich[(SQUARED[t], SQUARED[t])] / (n * f));
        Ok(Self { bias, var, weights })
    }

    fn mse(&self, b: [f64; 2]) -> f64 {
        (0..2)
            .map(|t| {
                let raw: f64 = self.bias[t]
                    .iter()
                    .map(|(c, a)| c * b[0].powi(a[0] as i32) * b[1].powi(a[1] as i32))
                    .sum();
                let bias = self.weights[t] * raw / (b[t] * b[t]);
                bias * bias + self.var[t] / (b[0] * b[1] * b[t].powi(4))
            })
            .sum()
    }

    /// Grid search on a log scale between `lo` and `hi`, then two rounds
    /// of local refinement.
    fn minimize(&self, lo: [f64; 2], hi: [f64; 2]) -> [f64; 2] {
        const STEPS: usize = 40;
        let mut lo = lo.map(f64::ln);
        let mut hi = hi.map(f64::ln);
        let mut best = [hi[0].exp(), hi[1].exp()];
        for _ in 0..3 {
            let mut best_mse = f64::INFINITY;
            let at = |k: usize, i: usize| lo[k] + (hi[k] - lo[k]) * i as f64 / STEPS as f64;
            let mut arg = [0usize; 2];
            for i in 0..=STEPS {
                for j in 0..=STEPS {
                    let b = [at(0, i).exp(), at(1, j).exp()];
                    let m = self.mse(b);
                    if m < best_mse {
                        best_mse = m;
                        best = b;
                        arg = [i, j];
                    }
                }
            }
            let step = [0, 1].map(|k| (hi[k] - lo[k]) / STEPS as f64);
            let centre = [at(0, arg[0]), at(1, arg[1])];
            let (l0, h0) = (lo, hi);
            for k in 0..2 {
                let c = centre[k];
                lo[k] = (c - step[k]).max(l0[k]);
                hi[k] = (c + step[k]).min(h0[k]);
            }
        }
        best
    }
}

/// Isotropic density bandwidth for the standardized pilot stages.
fn standardized_density_bandwidth(n: usize) -> f64 {
    (n as f64).powf(-1.0 / 6.0)
}

fn standardized_density(std_data: &Dataset, family: KernelFamily) -> f64 {
    let b = standardized_density_bandwidth(std_data.len());
    let f = density_estimate(std_data, [b, b], [b, b], family);
    if f > 0.0 {
        f
    } else {
        // no records near the point: fall back to the bounding-box density
        let rect = |k: usize| {
            let lo = std_data.records().iter().map(|r| r.r[k]).fold(f64::INFINITY, f64::min);
            let hi = std_data.records().iter().map(|r| r.r[k]).fold(f64::NEG_INFINITY, f64::max);
            (hi - lo).max(f64::MIN_POSITIVE)
        };
        1.0 / (rect(0) * rect(1))
    }
}

fn scale_stage(st: StageBandwidth, s: &Standardizer) -> StageBandwidth {
    StageBandwidth {
        bandwidth: s.to_original(st.bandwidth),
        fallback: st.fallback,
    }
}

/// Preliminary (local cubic) bandwidth for one side, in rotated units.
pub fn preliminary_bandwidth(data: &Dataset, side: Side, family: KernelFamily) -> Result<StageBandwidth> {
    let stdz = Standardizer::from_data(data);
    let std_data = stdz.apply(data);
    let ctx = SideContext {
        data: &std_data,
        family,
        side,
        n: data.len() as f64,
        fhat: standardized_density(&std_data, family),
    };
    Ok(scale_stage(ctx.preliminary()?.0, &stdz))
}

/// Preliminary and pilot bandwidths for both sides, in rotated units:
/// `[(preliminary+, pilot+), (preliminary-, pilot-)]`.
pub fn pilot_stages(data: &Dataset, family: KernelFamily) -> Result<[(StageBandwidth, StageBandwidth); 2]> {
    let stdz = Standardizer::from_data(data);
    let std_data = stdz.apply(data);
    let fhat = standardized_density(&std_data, family);
    let mut out = [(
        StageBandwidth {
            bandwidth: [0.0; 2],
            fallback: true,
        },
        StageBandwidth {
            bandwidth: [0.0; 2],
            fallback: true,
        },
    ); 2];
    for (slot, side) in out.iter_mut().zip([Side::Plus, Side::Minus]) {
        let ctx = SideContext {
            data: &std_data,
            family,
            side,
            n: data.len() as f64,
            fhat,
        };
        let (pre, global) = ctx.preliminary()?;
        let pilot = ctx.pilot(pre.bandwidth, global.as_ref())?;
        *slot = (scale_stage(pre, &stdz), scale_stage(pilot, &stdz));
    }
    Ok(out)
}

/// Pilot bandwidths `(b+, b-)` in rotated units.
pub fn pilot_bandwidths(data: &Dataset, family: KernelFamily) -> Result<(StageBandwidth, StageBandwidth)> {
    let [(_, plus), (_, minus)] = pilot_stages(data, family)?;
    Ok((plus, minus))
}

/// Local-quadratic second derivatives at the pilot bandwidths and the bias
/// constants `B1 = |Δ∂11 s̃11|`, `B2 = |Δ∂22 s̃22|` with their variances.
///
/// `sigma2` supplies homoskedastic variances `(σ+², σ-²)` for the
/// covariance; `None` uses HC0 residuals.
pub fn estimate_bias_terms(
    data: &Dataset,
    b_plus: [f64; 2],
    b_minus: [f64; 2],
    family: KernelFamily,
    sigma2: Option<(f64, f64)>,
) -> Result<BiasTerms> {
    let lin = cached_moment_matrices(&KernelSpec::new(family, Side::Plus), 1)?;
    let (s11, s22) = (lin.s_tilde11, lin.s_tilde22);
    let mut parts = Vec::with_capacity(2);
    for (side, b, s2) in [
        (Side::Plus, b_plus, sigma2.map(|s| s.0)),
        (Side::Minus, b_minus, sigma2.map(|s| s.1)),
    ] {
        let fit = localpoly::fit(data, b, 2, &KernelSpec::new(family, side))?;
        let cov = match s2 {
            Some(s) => fit.sandwich(&Sigma2::Scalar(s))?,
            None => fit.covariance.clone(),
        };
        let d = [2.0 * fit.coefficients[3], 2.0 * fit.coefficients[5], fit.coefficients[4]];
        let c = [
            [4.0 * cov[(3, 3)], 4.0 * cov[(3, 5)]],
            [4.0 * cov[(5, 3)], 4.0 * cov[(5, 5)]],
        ];
        parts.push((d, c));
    }
    let (dp, cp) = parts[0];
    let (dm, cm) = parts[1];
    let mut delta_cov = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            delta_cov[i][j] = cp[i][j] + cm[i][j];
        }
    }
    Ok(BiasTerms {
        b1_hat: ((dp[0] - dm[0]) * s11).abs(),
        b2_hat: ((dp[1] - dm[1]) * s22).abs(),
        var_b1: (s11 * s11 * delta_cov[0][0]).max(0.0),
        var_b2: (s22 * s22 * delta_cov[1][1]).max(0.0),
        d11_plus: dp[0],
        d22_plus: dp[1],
        d12_plus: dp[2],
        d11_minus: dm[0],
        d22_minus: dm[1],
        d12_minus: dm[2],
        delta_cov,
        s_tilde11: s11,
        s_tilde22: s22,
    })
}

/// The regularized plug-in bandwidths.
///
/// `fhat` is required by [`VarianceScaling::DensityAdjusted`] and ignored
/// otherwise.
pub fn select_bandwidths(
    bias: &BiasTerms,
    sigma2_plus: f64,
    sigma2_minus: f64,
    fhat: Option<f64>,
    n: usize,
    family: KernelFamily,
    options: &SelectorOptions,
) -> Result<[f64; 2]> {
    if n == 0 {
        return Err(MrdError::InvalidArgument("sample size must be positive".into()));
    }
    if let BandwidthMode::Fixed(h) = options.mode {
        if h.iter().all(|v| v.is_finite() && *v > 0.0) {
            return Ok(h);
        }
        return Err(MrdError::InvalidArgument(format!("fixed bandwidths must be positive, got {h:?}")));
    }
    if !(sigma2_plus >= 0.0 && sigma2_minus >= 0.0) {
        return Err(MrdError::InvalidArgument("residual variances must be nonnegative".into()));
    }
    let cv = cached_moment_matrices(&KernelSpec::new(family, Side::Plus), 1)?.variance_constant();
    let mut v = (sigma2_plus + sigma2_minus) * cv;
    if options.scaling == VarianceScaling::DensityAdjusted {
        match fhat {
            Some(f) if f.is_finite() && f > 0.0 => v /= f,
            other => {
                return Err(MrdError::DegenerateSelection(format!(
                    "density-adjusted selection needs a positive density estimate, got {other:?}"
                )))
            }
        }
    }
    let n = n as f64;
    let degenerate = |what: &str| {
        MrdError::DegenerateSelection(format!(
            "{what}: B1 = {:e}, B2 = {:e}, var B1 = {:e}, var B2 = {:e}, V = {v:e}",
            bias.b1_hat, bias.b2_hat, bias.var_b1, bias.var_b2
        ))
    };
    if !(v > 0.0) {
        return Err(degenerate("zero variance term"));
    }
    let h = match options.mode {
        BandwidthMode::Heterogeneous => {
            let a1 = bias.b1_hat.powi(2) + 3.0 * bias.var_b1;
            let a2 = bias.b2_hat.powi(2) + 3.0 * bias.var_b2;
            if !(a1 > 0.0 && a2 > 0.0) {
                return Err(degenerate("zero regularized bias term"));
            }
            let c = options.leading_constant * v / n;
            [
                (c / a1 * (a2 / a1).powf(0.25)).powf(1.0 / 6.0),
                (c / a2 * (a1 / a2).powf(0.25)).powf(1.0 / 6.0),
            ]
        }
        BandwidthMode::Common => {
            let a = bias.delta11() * bias.s_tilde11 + bias.delta22() * bias.s_tilde22;
            let (s11, s22, c) = (bias.s_tilde11, bias.s_tilde22, &bias.delta_cov);
            let var_a = s11 * s11 * c[0][0] + 2.0 * s11 * s22 * c[0][1] + s22 * s22 * c[1][1];
            let denom = a * a + 3.0 * var_a;
            if !(denom > 0.0) {
                return Err(degenerate("zero regularized bias term"));
            }
            let h = (2.0 * v / (n * denom)).powf(1.0 / 6.0);
            [h, h]
        }
        BandwidthMode::Fixed(_) => unreachable!(),
    };
    if h.iter().all(|x| x.is_finite() && *x > 0.0) {
        Ok(h)
    } else {
        Err(degenerate("non-finite bandwidth"))
    }
}

/// Coordinate range of the whole sample per axis.
pub fn coordinate_range(data: &Dataset) -> [f64; 2] {
    let mut out = [0.0; 2];
    for (k, o) in out.iter_mut().enumerate() {
        let lo = data.records().iter().map(|r| r.r[k]).fold(f64::INFINITY, f64::min);
        let hi = data.records().iter().map(|r| r.r[k]).fold(f64::NEG_INFINITY, f64::max);
        *o = hi - lo;
    }
    out
}

/// The full selection on data already rotated to the boundary frame.
pub fn select(data: &Dataset, family: KernelFamily, options: &SelectorOptions) -> Result<BandwidthSelection> {
    let [(pre_p, pilot_p), (pre_m, pilot_m)] = pilot_stages(data, family)?;
    let mut sigma2_plus = estimate_sigma2(data, Side::Plus, pilot_p.bandwidth, family)?;
    let mut sigma2_minus = estimate_sigma2(data, Side::Minus, pilot_m.bandwidth, family)?;
    let fhat = density_estimate(data, pilot_p.bandwidth, pilot_m.bandwidth, family);
    let range = coordinate_range(data);
    let round = |s2p: f64, s2m: f64| -> Result<(BiasTerms, [f64; 2])> {
        let bias = estimate_bias_terms(data, pilot_p.bandwidth, pilot_m.bandwidth, family, Some((s2p, s2m)))?;
        let mut h = select_bandwidths(&bias, s2p, s2m, Some(fhat), data.len(), family, options)?;
        if !matches!(options.mode, BandwidthMode::Fixed(_)) {
            for k in 0..2 {
                if range[k] > 0.0 {
                    h[k] = h[k].min(range[k]);
                }
            }
            if options.mode == BandwidthMode::Common {
                let m = h[0].min(h[1]);
                h = [m, m];
            }
        }
        Ok((bias, h))
    };
    let (mut bias, mut h) = round(sigma2_plus, sigma2_minus)?;
    if !matches!(options.mode, BandwidthMode::Fixed(_)) {
        for _ in 0..options.sigma2_refinements {
            let refit = |side| estimate_sigma2(data, side, h, family);
            let (Ok(s2p), Ok(s2m)) = (refit(Side::Plus), refit(Side::Minus)) else {
                break;
            };
            if !(s2p > 0.0 && s2m > 0.0) {
                break;
            }
            (sigma2_plus, sigma2_minus) = (s2p, s2m);
            (bias, h) = round(sigma2_plus, sigma2_minus)?;
        }
    }
    Ok(BandwidthSelection {
        sigma2_plus,
        sigma2_minus,
        fhat,
        preliminary_plus: pre_p,
        preliminary_minus: pre_m,
        pilot_plus: pilot_p,
        pilot_minus: pilot_m,
        bias,
        h1: h[0],
        h2: h[1],
        mode: options.mode,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::make_design;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    const FAM: KernelFamily = KernelFamily::ProductTriangular;

    fn cloud(n: usize, seed: u64, sigma: f64, f: impl Fn([f64; 2]) -> f64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Dataset::new(
            (0..n)
                .map(|_| {
                    let r = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
                    let e: f64 = rng.sample(StandardNormal);
                    Record {
                        y: f(r) + sigma * e,
                        r,
                        d: r[1] >= 0.0,
                    }
                })
                .collect(),
        )
        .unwrap()
    }

    fn terms(b1: f64, b2: f64, v1: f64, v2: f64) -> BiasTerms {
        BiasTerms {
            b1_hat: b1,
            b2_hat: b2,
            var_b1: v1,
            var_b2: v2,
            d11_plus: b1 * 6.0,
            d22_plus: -b2 * 10.0,
            d12_plus: 0.0,
            d11_minus: 0.0,
            d22_minus: 0.0,
            d12_minus: 0.0,
            delta_cov: [[v1 * 36.0, 0.0], [0.0, v2 * 100.0]],
            s_tilde11: 1.0 / 6.0,
            s_tilde22: -0.1,
        }
    }

    #[test]
    fn sigma2_is_zero_without_noise() {
        let data = cloud(2000, 1, 0.0, |r| 1.0 + r[0] - 2.0 * r[1]);
        let s = estimate_sigma2(&data, Side::Plus, [0.5, 0.5], FAM).unwrap();
        assert!(s.abs() < 1e-10);
    }

    #[test]
    fn sigma2_recovers_noise_level() {
        let sigma = 0.1295;
        let data = cloud(100_000, 2, sigma, |r| r[0] + r[1]);
        let s = estimate_sigma2(&data, Side::Plus, [0.3, 0.3], FAM).unwrap();
        assert!((s / (sigma * sigma) - 1.0).abs() < 0.10, "{s}");
        let data2 = cloud(100_000, 2, 2.0 * sigma, |r| r[0] + r[1]);
        let s2 = estimate_sigma2(&data2, Side::Plus, [0.3, 0.3], FAM).unwrap();
        assert!((s2 / s - 4.0).abs() < 0.4, "{}", s2 / s);
    }

    #[test]
    fn preliminary_is_positive_for_quadratic_outcome() {
        let data = cloud(20_000, 3, 0.1, |r| r[0] * r[0] + 0.5 * r[1] * r[1]);
        for side in [Side::Plus, Side::Minus] {
            let b = preliminary_bandwidth(&data, side, FAM).unwrap();
            assert!(b.bandwidth.iter().all(|v| v.is_finite() && *v > 0.0 && *v <= 2.0));
        }
    }

    #[test]
    fn preliminary_falls_back_on_tiny_side() {
        let mut recs: Vec<Record> = cloud(500, 4, 0.1, |r| r[0])
            .records()
            .iter()
            .filter(|r| !r.d)
            .copied()
            .collect();
        recs.extend((0..10).map(|i| Record {
            y: 0.0,
            r: [-0.8 + 0.16 * i as f64, 0.1 + 0.05 * i as f64],
            d: true,
        }));
        let data = Dataset::new(recs).unwrap();
        let b = preliminary_bandwidth(&data, Side::Plus, FAM).unwrap();
        assert!(b.fallback);
        let expected = [0.5 * 0.16 * 9.0, 0.5 * 0.05 * 9.0];
        assert!((b.bandwidth[0] - expected[0]).abs() < 1e-12);
        assert!((b.bandwidth[1] - expected[1]).abs() < 1e-12);
    }

    #[test]
    fn pilot_is_finite_for_pure_noise() {
        let data = cloud(5000, 5, 1.0, |_| 0.0);
        let (bp, bm) = pilot_bandwidths(&data, FAM).unwrap();
        for b in [bp, bm] {
            assert!(b.bandwidth.iter().all(|v| v.is_finite() && *v > 0.0));
        }
    }

    #[test]
    fn pilot_is_symmetric_for_symmetric_design() {
        let data = cloud(40_000, 6, 0.1, |r| r[0] * r[0] * r[0] + r[1].abs().powi(3));
        let (bp, bm) = pilot_bandwidths(&data, FAM).unwrap();
        let ratio = bp.bandwidth[0] / bm.bandwidth[0];
        assert!((ratio - 1.0).abs() < 0.25, "{ratio}");
    }

    #[test]
    fn pilot_shrinks_with_n() {
        let design = make_design(2).unwrap();
        let median = |n: usize| {
            let mut v: Vec<f64> = (0..50)
                .map(|rep| {
                    let data = design.sample_with(n, &mut crate::dgp::replication_rng(77, rep));
                    pilot_bandwidths(&data, FAM).unwrap().0.bandwidth[0]
                })
                .collect();
            v.sort_by(f64::total_cmp);
            0.5 * (v[24] + v[25])
        };
        let m: Vec<f64> = [2000, 8000, 32000].into_iter().map(median).collect();
        assert!(m[0] > m[1] && m[1] > m[2], "{m:?}");
    }

    #[test]
    fn bias_terms_recover_curvature() {
        let data = cloud(20_000, 7, 0.0, |r| if r[1] >= 0.0 { r[0] * r[0] } else { 0.0 });
        let bt = estimate_bias_terms(&data, [0.5, 0.5], [0.5, 0.5], FAM, None).unwrap();
        assert!((bt.d11_plus - 2.0).abs() < 1e-8);
        assert!((bt.b1_hat - 1.0 / 3.0).abs() < 1e-8);
        assert!(bt.b2_hat < 1e-8);
        assert!(bt.var_b1 >= 0.0 && bt.var_b2 >= 0.0);
    }

    #[test]
    fn identical_curvature_cancels() {
        let f = |r: [f64; 2]| r[0] * r[0] - r[1] * r[1] + if r[1] >= 0.0 { 1.0 } else { 0.0 };
        let data = cloud(100_000, 8, 0.05, f);
        let bt = estimate_bias_terms(&data, [0.4, 0.4], [0.4, 0.4], FAM, None).unwrap();
        assert!(bt.b1_hat < 4.0 * bt.var_b1.sqrt() + 1e-3, "{bt:?}");
        assert!(bt.b2_hat < 4.0 * bt.var_b2.sqrt() + 1e-3, "{bt:?}");
    }

    #[test]
    fn bandwidth_ratio_from_bias_ratio() {
        let bt = terms(2.0, 1.0, 0.0, 0.0);
        let opts = SelectorOptions {
            scaling: VarianceScaling::Unadjusted,
            ..Default::default()
        };
        let h = select_bandwidths(&bt, 1.0, 1.0, None, 1000, FAM, &opts).unwrap();
        assert!((h[0] / h[1] - 0.5f64.sqrt()).abs() < 1e-12);
        // closed form h1⁶ = V/(2n) B1^{-5/2} B2^{1/2}
        let v = 2.0 * 16.0 / 5.0;
        let expected = (v / 2000.0 * 2.0f64.powf(-2.5)).powf(1.0 / 6.0);
        assert!((h[0] - expected).abs() < 1e-12);
        let eighth = SelectorOptions {
            leading_constant: 0.125,
            ..opts
        };
        let h8 = select_bandwidths(&bt, 1.0, 1.0, None, 1000, FAM, &eighth).unwrap();
        assert!((h8[0] / h[0] - 0.25f64.powf(1.0 / 6.0)).abs() < 1e-12);
    }

    #[test]
    fn regularization_keeps_bandwidth_finite() {
        let bt = terms(0.0, 0.5, 0.01, 0.0);
        let h = select_bandwidths(&bt, 1.0, 1.0, Some(1.0), 1000, FAM, &SelectorOptions::default()).unwrap();
        assert!(h.iter().all(|v| v.is_finite() && *v > 0.0));
        let zero = terms(0.0, 0.0, 0.0, 0.0);
        assert!(matches!(
            select_bandwidths(&zero, 0.0, 0.0, Some(1.0), 1000, FAM, &SelectorOptions::default()),
            Err(MrdError::DegenerateSelection(_))
        ));
        assert!(matches!(
            select_bandwidths(&bt, 1.0, 1.0, None, 1000, FAM, &SelectorOptions::default()),
            Err(MrdError::DegenerateSelection(_))
        ));
    }

    #[test]
    fn common_mode_rate_and_equality() {
        let bt = terms(0.3, 0.2, 0.001, 0.001);
        let opts = SelectorOptions {
            mode: BandwidthMode::Common,
            ..Default::default()
        };
        let h1 = select_bandwidths(&bt, 1.0, 1.0, Some(1.0), 1000, FAM, &opts).unwrap();
        let h2 = select_bandwidths(&bt, 1.0, 1.0, Some(1.0), 64_000, FAM, &opts).unwrap();
        assert_eq!(h1[0], h1[1]);
        assert!((h2[0] / h1[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stated_leading_bias_variance() {
        let bt = terms(1.0, 1.0, 0.04, 0.09);
        // weights (h²/2)s̃: h = 1 gives (1/12, -1/20)
        let v = bt.leading_bias_variance([1.0, 1.0]);
        let expected = (1.0 / 12.0f64).powi(2) * 0.04 * 36.0 + (0.05f64).powi(2) * 0.09 * 100.0;
        assert!((v - expected).abs() < 1e-14);
    }

    proptest! {
        #[test]
        // A1 enters h1 with exponent -5/24 and h2 with +1/24.
        fn more_regularization_shrinks_h1_and_widens_h2(
            b1 in 0.0..2.0f64, b2 in 0.01..2.0f64, v1 in 0.0..1.0f64, extra in 0.0..1.0f64,
        ) {
            prop_assume!(b1 * b1 + 3.0 * v1 > 1e-6);
            let o = SelectorOptions::default();
            let h = select_bandwidths(&terms(b1, b2, v1, 0.0), 1.0, 1.0, Some(1.0), 500, FAM, &o).unwrap();
            let h_more = select_bandwidths(&terms(b1, b2, v1 + extra, 0.0), 1.0, 1.0, Some(1.0), 500, FAM, &o).unwrap();
            prop_assert!(h_more[0] <= h[0] * (1.0 + 1e-12));
            prop_assert!(h_more[1] >= h[1] * (1.0 - 1e-12));
        }

        #[test]
        fn selected_bandwidths_are_positive(
            b1 in 0.0..2.0f64, b2 in 0.0..2.0f64, v1 in 1e-6..1.0f64, v2 in 1e-6..1.0f64,
            n in 1usize..100_000,
        ) {
            for mode in [BandwidthMode::Heterogeneous, BandwidthMode::Common] {
                let o = SelectorOptions { mode, ..Default::default() };
                let h = select_bandwidths(&terms(b1, b2, v1, v2), 0.5, 0.2, Some(0.3), n, FAM, &o).unwrap();
                prop_assert!(h.iter().all(|v| v.is_finite() && *v > 0.0));
            }
        }
    }
}
