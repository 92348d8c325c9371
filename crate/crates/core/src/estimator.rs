//! The two-dimensional regression-discontinuity estimator at a boundary
//! point, boundary sweeps, and the higher-order bias expansion of the
//! local-linear intercept.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::bandwidth::{self, BandwidthSelection, SelectorOptions};
use crate::error::{MrdError, Result};
use crate::geometry::{rotate_to_frame, BoundaryFrame, Dataset};
use crate::kernels::{cached_moment_matrices, kernel_moment, KernelFamily, KernelSpec, Side};
use crate::localpoly::{self, Sigma2};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub selector: SelectorOptions,
    pub alpha: f64,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            selector: SelectorOptions::default(),
            alpha: 0.05,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RDEstimate {
    pub theta: f64,
    pub theta_bc: f64,
    /// Standard error of `theta_bc`, including the bias-estimate variance.
    pub se: f64,
    /// Standard error of `theta` alone.
    pub se_conventional: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub alpha: f64,
    pub h1: f64,
    pub h2: f64,
    pub b_plus: [f64; 2],
    pub b_minus: [f64; 2],
    pub eff_n_plus: usize,
    pub eff_n_minus: usize,
    pub frame: BoundaryFrame,
    pub selection: BandwidthSelection,
}

/// Two-sided Gaussian critical value `z_{1-α/2}`.
pub fn critical_value(alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(MrdError::InvalidArgument(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    let normal = Normal::standard();
    Ok(normal.inverse_cdf(1.0 - alpha / 2.0))
}

/// Estimate on data already rotated so that the treated side is `z2 ≥ 0`.
pub fn estimate_rotated(
    rotated: &Dataset,
    frame: BoundaryFrame,
    family: KernelFamily,
    options: &EstimateOptions,
) -> Result<RDEstimate> {
    let z = critical_value(options.alpha)?;
    for side in [Side::Plus, Side::Minus] {
        if !rotated.records().iter().any(|r| side.matches(r.d)) {
            return Err(MrdError::EmptySide(side));
        }
    }
    let sel = bandwidth::select(rotated, family, &options.selector)?;
    let h = [sel.h1, sel.h2];
    let plus = localpoly::fit(rotated, h, 1, &KernelSpec::new(family, Side::Plus))?;
    let minus = localpoly::fit(rotated, h, 1, &KernelSpec::new(family, Side::Minus))?;
    let var_plus = plus.sandwich(&Sigma2::Scalar(sel.sigma2_plus))?[(0, 0)];
    let var_minus = minus.sandwich(&Sigma2::Scalar(sel.sigma2_minus))?[(0, 0)];

    let theta = plus.intercept() - minus.intercept();
    let theta_bc = theta - sel.bias.leading_bias(h);
    let var_conv = (var_plus + var_minus).max(0.0);
    let se = (var_conv + sel.bias.leading_bias_variance(h).max(0.0)).sqrt();
    Ok(RDEstimate {
        theta,
        theta_bc,
        se,
        se_conventional: var_conv.sqrt(),
        ci_low: theta_bc - z * se,
        ci_high: theta_bc + z * se,
        alpha: options.alpha,
        h1: sel.h1,
        h2: sel.h2,
        b_plus: sel.pilot_plus.bandwidth,
        b_minus: sel.pilot_minus.bandwidth,
        eff_n_plus: plus.effective_n,
        eff_n_minus: minus.effective_n,
        frame,
        selection: sel,
    })
}

pub fn estimate_rd(
    data: &Dataset,
    frame: &BoundaryFrame,
    family: KernelFamily,
    options: &EstimateOptions,
) -> Result<RDEstimate> {
    let rotated = rotate_to_frame(data, frame)?;
    estimate_rotated(&rotated, *frame, family, options)
}

/// Independent estimates at every frame, in input order.
pub fn sweep_boundary(
    data: &Dataset,
    frames: &[BoundaryFrame],
    family: KernelFamily,
    options: &EstimateOptions,
) -> Vec<Result<RDEstimate>> {
    frames
        .par_iter()
        .map(|f| estimate_rd(data, f, family, options))
        .collect()
}

/// Partial derivatives of `m` and the log-density gradient at the point.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LocalDerivatives {
    pub m11: f64,
    pub m12: f64,
    pub m22: f64,
    pub m111: f64,
    pub m112: f64,
    pub m122: f64,
    pub m222: f64,
    /// `∂1 f / f`
    pub f1: f64,
    /// `∂2 f / f`
    pub f2: f64,
}

/// Bias of the local-linear intercept on one side up to third order in the
/// bandwidths:
///
/// `h1²/2 ∂11 s̃11 + h2²/2 ∂22 s̃22`
/// `+ h1² h2 (∂11/2 · ∂2f/f + ∂12 · ∂1f/f + ∂112/2)(s̃1 κ(2,1) + s̃3 κ(2,2))`
/// `+ h2³ (∂22/2 · ∂2f/f + ∂222/6)(s̃1 κ(0,3) + s̃3 κ(0,4))`.
///
/// The kernel must satisfy the odd-moment restriction.
pub fn higher_order_bias(derivs: &LocalDerivatives, h: [f64; 2], spec: &KernelSpec) -> Result<f64> {
    let lin = cached_moment_matrices(spec, 1)?;
    let (s1, s3) = (lin.s_tilde[0], lin.s_tilde[2]);
    let k = |a: u32, b: u32| kernel_moment(spec, (a, b), 1);
    let [h1, h2] = h;
    let d = derivs;
    let lead = 0.5 * h1 * h1 * d.m11 * lin.s_tilde11 + 0.5 * h2 * h2 * d.m22 * lin.s_tilde22;
    let cross = h1 * h1 * h2
        * (0.5 * d.m11 * d.f2 + d.m12 * d.f1 + 0.5 * d.m112)
        * (s1 * k(2, 1)? + s3 * k(2, 2)?);
    let normal = h2.powi(3) * (0.5 * d.m22 * d.f2 + d.m222 / 6.0) * (s1 * k(0, 3)? + s3 * k(0, 4)?);
    Ok(lead + cross + normal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Record;
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

    fn fixed(h: [f64; 2]) -> EstimateOptions {
        EstimateOptions {
            selector: SelectorOptions {
                mode: bandwidth::BandwidthMode::Fixed(h),
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn piecewise_linear_jump_is_exact() {
        let data = cloud(4000, 1, 0.0, |r| {
            1.0 + 0.5 * r[0] - r[1] + if r[1] >= 0.0 { 0.3 + r[1] } else { 0.0 }
        });
        let est = estimate_rd(&data, &BoundaryFrame::origin(), FAM, &fixed([0.5, 0.5])).unwrap();
        assert!((est.theta - 0.3).abs() < 1e-8);
        assert!((est.theta_bc - est.theta).abs() < 1e-6);
        assert!(est.ci_low <= est.theta_bc && est.theta_bc <= est.ci_high);
    }

    #[test]
    fn ci_length_matches_se() {
        let data = cloud(4000, 2, 0.2, |r| r[0] * r[0] + if r[1] >= 0.0 { 0.5 } else { 0.0 });
        let est = estimate_rd(&data, &BoundaryFrame::origin(), FAM, &EstimateOptions::default()).unwrap();
        let z = critical_value(0.05).unwrap();
        assert!((est.ci_high - est.ci_low - 2.0 * z * est.se).abs() < 1e-12);
        assert!(est.se >= est.se_conventional);
    }

    #[test]
    fn mirror_in_z1_is_invariant() {
        let data = cloud(5000, 3, 0.1, |r| (r[0] + 0.3).powi(2) + r[1] + if r[1] >= 0.0 { 0.4 } else { 0.0 });
        let mirrored = data.map_records(|r| Record {
            r: [-r.r[0], r.r[1]],
            ..*r
        });
        let o = EstimateOptions::default();
        let a = estimate_rd(&data, &BoundaryFrame::origin(), FAM, &o).unwrap();
        let b = estimate_rd(&mirrored, &BoundaryFrame::origin(), FAM, &o).unwrap();
        assert!((a.theta - b.theta).abs() < 1e-10);
        assert!((a.theta_bc - b.theta_bc).abs() < 1e-10);
        assert!((a.se - b.se).abs() < 1e-10);
    }

    #[test]
    fn relabeling_negates_theta() {
        let data = cloud(5000, 4, 0.1, |r| r[0] * r[1] + if r[1] >= 0.0 { 0.25 } else { 0.0 });
        let swapped = data.map_records(|r| Record { d: !r.d, ..*r });
        let o = EstimateOptions::default();
        let frame = BoundaryFrame::origin();
        let a = estimate_rd(&data, &frame, FAM, &o).unwrap();
        let b = estimate_rd(&swapped, &frame.flipped(), FAM, &o).unwrap();
        assert!((a.theta + b.theta).abs() < 1e-10, "{} {}", a.theta, b.theta);
    }

    #[test]
    fn outcome_affine_equivariance() {
        let data = cloud(5000, 5, 0.1, |r| r[0].sin() + if r[1] >= 0.0 { 0.2 } else { 0.0 });
        let (a, b) = (2.5, -1.0);
        let moved = data.map_records(|r| Record { y: a * r.y + b, ..*r });
        let o = EstimateOptions::default();
        let e0 = estimate_rd(&data, &BoundaryFrame::origin(), FAM, &o).unwrap();
        let e1 = estimate_rd(&moved, &BoundaryFrame::origin(), FAM, &o).unwrap();
        assert!((e1.theta - a * e0.theta).abs() < 1e-8);
        assert!((e1.se - a * e0.se).abs() < 1e-8);
    }

    #[test]
    fn sweep_isolates_failures() {
        let data = cloud(3000, 6, 0.1, |r| r[0] + if r[1] >= 0.0 { 0.2 } else { 0.0 });
        let frames = vec![
            BoundaryFrame::origin(),
            BoundaryFrame::new([0.3, 0.0], [0.0, 1.0]).unwrap(),
            BoundaryFrame::new([50.0, 50.0], [0.0, 1.0]).unwrap(),
        ];
        let out = sweep_boundary(&data, &frames, FAM, &fixed([0.3, 0.3]));
        assert_eq!(out.len(), 3);
        assert!(out[0].is_ok() && out[1].is_ok());
        assert!(matches!(out[2], Err(MrdError::InsufficientLocalData { .. })));
        let single = estimate_rd(&data, &frames[0], FAM, &fixed([0.3, 0.3])).unwrap();
        assert_eq!(out[0].as_ref().unwrap(), &single);
    }

    #[test]
    fn higher_order_bias_flat_and_quadratic() {
        let spec = KernelSpec::new(FAM, Side::Plus);
        let zero = higher_order_bias(&LocalDerivatives::default(), [0.3, 0.2], &spec).unwrap();
        assert_eq!(zero, 0.0);
        let d = LocalDerivatives {
            m11: 2.0,
            ..Default::default()
        };
        let h1 = 0.4;
        let b = higher_order_bias(&d, [h1, 0.1], &spec).unwrap();
        assert!((b - h1 * h1 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn higher_order_bias_minus_side_symmetry() {
        let d = LocalDerivatives {
            m11: 1.0,
            m22: -0.5,
            m222: 3.0,
            m112: 0.7,
            f2: 0.4,
            ..Default::default()
        };
        let plus = higher_order_bias(&d, [0.2, 0.3], &KernelSpec::new(FAM, Side::Plus)).unwrap();
        // mirroring z2 flips the sign of odd z2-derivatives on the other side
        let mirrored = LocalDerivatives {
            m222: -3.0,
            m112: -0.7,
            f2: -0.4,
            ..d
        };
        let minus = higher_order_bias(&mirrored, [0.2, 0.3], &KernelSpec::new(FAM, Side::Minus)).unwrap();
        assert!((plus - minus).abs() < 1e-12);
    }
}
