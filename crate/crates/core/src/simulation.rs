//! Monte Carlo harness over the simulation designs.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bandwidth::{BandwidthMode, SelectorOptions, VarianceScaling};
use crate::dgp::{replication_rng, DesignSpec};
use crate::distance_baseline::{distance_estimate, to_signed_distance};
use crate::error::{MrdError, Result};
use crate::estimator::{estimate_rotated, EstimateOptions};
use crate::geometry::{BoundaryFrame, Dataset};
use crate::kernels::{KernelFamily, KernelSpec, Side};
use crate::localpoly;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EstimatorKind {
    #[serde(rename = "2d-diff")]
    TwoDHeterogeneous,
    #[serde(rename = "2d-common")]
    TwoDCommon,
    #[serde(rename = "distance-ik")]
    DistanceIk,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 3] = [Self::TwoDHeterogeneous, Self::TwoDCommon, Self::DistanceIk];

    pub fn name(self) -> &'static str {
        match self {
            Self::TwoDHeterogeneous => "2d-diff",
            Self::TwoDCommon => "2d-common",
            Self::DistanceIk => "distance-ik",
        }
    }
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EstimatorKind {
    type Err = MrdError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| MrdError::InvalidArgument(format!("unknown estimator '{s}'")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationRecord {
    pub rep: u64,
    pub theta: f64,
    pub theta_bc: f64,
    pub se: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub h1: f64,
    /// Equal to `h1` for single-bandwidth estimators.
    pub h2: f64,
    pub pilot: f64,
    pub eff_n: usize,
    pub failed: bool,
    pub error: Option<String>,
}

impl ReplicationRecord {
    fn failure(rep: u64, e: &MrdError) -> Self {
        Self {
            rep,
            theta: f64::NAN,
            theta_bc: f64::NAN,
            se: f64::NAN,
            ci_low: f64::NAN,
            ci_high: f64::NAN,
            h1: f64::NAN,
            h2: f64::NAN,
            pilot: f64::NAN,
            eff_n: 0,
            failed: true,
            error: Some(e.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub estimator: EstimatorKind,
    pub reps_ok: usize,
    pub reps_failed: usize,
    pub bias: f64,
    pub variance: f64,
    pub rmse: f64,
    pub bias_bc: f64,
    pub rmse_bc: f64,
    pub coverage: f64,
    pub ci_length: f64,
    pub median_h1: f64,
    pub median_h2: f64,
    pub median_pilot: f64,
    pub mean_eff_n: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MCResult {
    pub true_theta: f64,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    /// `per_rep[e][r]`: estimator `e`, replication `r`.
    pub per_rep: Vec<Vec<ReplicationRecord>>,
    pub summaries: Vec<Summary>,
}

impl MCResult {
    pub fn summary(&self, kind: EstimatorKind) -> Option<&Summary> {
        self.summaries.iter().find(|s| s.estimator == kind)
    }

    pub fn records(&self, kind: EstimatorKind) -> Option<&[ReplicationRecord]> {
        let i = self.estimators.iter().position(|k| *k == kind)?;
        Some(&self.per_rep[i])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MCConfig {
    pub design: DesignSpec,
    pub n: usize,
    pub reps: usize,
    pub seed: u64,
    pub estimators: Vec<EstimatorKind>,
    pub family: KernelFamily,
    pub alpha: f64,
    pub scaling: VarianceScaling,
    /// Worker threads; `None` uses the global pool.
    pub jobs: Option<usize>,
}

impl MCConfig {
    pub fn new(design: DesignSpec, n: usize, reps: usize, seed: u64) -> Self {
        Self {
            design,
            n,
            reps,
            seed,
            estimators: EstimatorKind::ALL.to_vec(),
            family: KernelFamily::default(),
            alpha: 0.05,
            scaling: VarianceScaling::default(),
            jobs: None,
        }
    }
}

/// Runs one estimator on one dataset in rotated coordinates.
pub fn run_estimator(
    kind: EstimatorKind,
    data: &Dataset,
    family: KernelFamily,
    alpha: f64,
    scaling: VarianceScaling,
    rep: u64,
) -> ReplicationRecord {
    let frame = BoundaryFrame::origin();
    let result = match kind {
        EstimatorKind::TwoDHeterogeneous | EstimatorKind::TwoDCommon => {
            let mode = if kind == EstimatorKind::TwoDCommon {
                BandwidthMode::Common
            } else {
                BandwidthMode::Heterogeneous
            };
            let options = EstimateOptions {
                selector: SelectorOptions {
                    mode,
                    scaling,
                    ..Default::default()
                },
                alpha,
            };
            estimate_rotated(data, frame, family, &options).map(|e| ReplicationRecord {
                rep,
                theta: e.theta,
                theta_bc: e.theta_bc,
                se: e.se,
                ci_low: e.ci_low,
                ci_high: e.ci_high,
                h1: e.h1,
                h2: e.h2,
                pilot: e.b_plus[0],
                eff_n: e.eff_n_plus + e.eff_n_minus,
                failed: false,
                error: None,
            })
        }
        EstimatorKind::DistanceIk => {
            let sample = to_signed_distance(data, &frame);
            distance_estimate(&sample, None, alpha).map(|e| ReplicationRecord {
                rep,
                theta: e.theta,
                theta_bc: e.theta_bc,
                se: e.se,
                ci_low: e.ci_low,
                ci_high: e.ci_high,
                h1: e.h,
                h2: e.h,
                pilot: e.h_pilot,
                eff_n: e.eff_n_plus + e.eff_n_minus,
                failed: false,
                error: None,
            })
        }
    };
    result.unwrap_or_else(|e| ReplicationRecord::failure(rep, &e))
}

fn with_pool<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Result<T> {
    match jobs {
        None => Ok(f()),
        Some(j) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(j.max(1))
                .build()
                .map_err(|e| MrdError::InvalidArgument(e.to_string()))?;
            Ok(pool.install(f))
        }
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.retain(|x| x.is_finite());
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn summarize(kind: EstimatorKind, records: &[ReplicationRecord], truth: f64) -> Summary {
    let ok: Vec<&ReplicationRecord> = records.iter().filter(|r| !r.failed).collect();
    let m = ok.len() as f64;
    let mean = |f: &dyn Fn(&ReplicationRecord) -> f64| ok.iter().map(|r| f(r)).sum::<f64>() / m;
    let mean_theta = mean(&|r| r.theta);
    let mean_bc = mean(&|r| r.theta_bc);
    Summary {
        estimator: kind,
        reps_ok: ok.len(),
        reps_failed: records.len() - ok.len(),
        bias: mean_theta - truth,
        variance: mean(&|r| (r.theta - mean_theta).powi(2)),
        rmse: mean(&|r| (r.theta - truth).powi(2)).sqrt(),
        bias_bc: mean_bc - truth,
        rmse_bc: mean(&|r| (r.theta_bc - truth).powi(2)).sqrt(),
        coverage: mean(&|r| f64::from(u8::from(r.ci_low <= truth && truth <= r.ci_high))),
        ci_length: mean(&|r| r.ci_high - r.ci_low),
        median_h1: median(ok.iter().map(|r| r.h1).collect()),
        median_h2: median(ok.iter().map(|r| r.h2).collect()),
        median_pilot: median(ok.iter().map(|r| r.pilot).collect()),
        mean_eff_n: mean(&|r| r.eff_n as f64),
    }
}

pub fn run_mc(config: &MCConfig) -> Result<MCResult> {
    if config.reps == 0 {
        return Err(MrdError::InvalidArgument("at least one replication is required".into()));
    }
    if config.n == 0 {
        return Err(MrdError::InvalidArgument("sample size must be positive".into()));
    }
    if config.estimators.is_empty() {
        return Err(MrdError::InvalidArgument("no estimators requested".into()));
    }
    let truth = config.design.true_theta();
    let rows: Vec<Vec<ReplicationRecord>> = with_pool(config.jobs, || {
        (0..config.reps as u64)
            .into_par_iter()
            .map(|rep| {
                let data = config
                    .design
                    .sample_with(config.n, &mut replication_rng(config.seed, rep));
                config
                    .estimators
                    .iter()
                    .map(|&k| run_estimator(k, &data, config.family, config.alpha, config.scaling, rep))
                    .collect()
            })
            .collect()
    })?;
    let mut per_rep: Vec<Vec<ReplicationRecord>> = vec![Vec::with_capacity(config.reps); config.estimators.len()];
    for row in rows {
        for (e, rec) in row.into_iter().enumerate() {
            per_rep[e].push(rec);
        }
    }
    let summaries = config
        .estimators
        .iter()
        .zip(&per_rep)
        .map(|(&k, recs)| summarize(k, recs, truth))
        .collect();
    Ok(MCResult {
        true_theta: truth,
        n: config.n,
        reps: config.reps,
        seed: config.seed,
        estimators: config.estimators.clone(),
        per_rep,
        summaries,
    })
}

/// Paired bootstrap over replications: the fraction of resamples in which
/// the RMSE of `a` is strictly below that of `b`. Pairs with a failure on
/// either side are dropped.
pub fn bootstrap_rmse_comparison(
    a: &[ReplicationRecord],
    b: &[ReplicationRecord],
    truth: f64,
    resamples: usize,
    seed: u64,
) -> f64 {
    let pairs: Vec<(f64, f64)> = a
        .iter()
        .zip(b)
        .filter(|(x, y)| !x.failed && !y.failed)
        .map(|(x, y)| ((x.theta - truth).powi(2), (y.theta - truth).powi(2)))
        .collect();
    if pairs.is_empty() || resamples == 0 {
        return 0.0;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = pairs.len();
    let mut wins = 0usize;
    for _ in 0..resamples {
        let (mut sa, mut sb) = (0.0, 0.0);
        for _ in 0..m {
            let (x, y) = pairs[rng.random_range(0..m)];
            sa += x;
            sb += y;
        }
        if sa < sb {
            wins += 1;
        }
    }
    wins as f64 / resamples as f64
}

/// `n` points from `lo` to `hi`, evenly spaced in logarithm.
pub fn log_grid(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![lo];
    }
    let (a, b) = (lo.ln(), hi.ln());
    (0..n).map(|i| (a + (b - a) * i as f64 / (n - 1) as f64).exp()).collect()
}

/// Empirical MSE of the local-linear `θ̂` at every fixed `(h1, h2)` cell,
/// on the same replications as [`run_mc`] with `(seed, n)`. Cells where a
/// fit fails in some replication are `NaN`.
pub fn grid_mse(
    design: &DesignSpec,
    n: usize,
    reps: usize,
    seed: u64,
    h1s: &[f64],
    h2s: &[f64],
    family: KernelFamily,
) -> Vec<Vec<f64>> {
    let truth = design.true_theta();
    let per_rep: Vec<Vec<f64>> = (0..reps as u64)
        .into_par_iter()
        .map(|rep| {
            let data = design.sample_with(n, &mut replication_rng(seed, rep));
            let mut out = Vec::with_capacity(h1s.len() * h2s.len());
            for &h1 in h1s {
                for &h2 in h2s {
                    let fit = |side| localpoly::fit(&data, [h1, h2], 1, &KernelSpec::new(family, side));
                    let err = match (fit(Side::Plus), fit(Side::Minus)) {
                        (Ok(p), Ok(m)) => (p.intercept() - m.intercept() - truth).powi(2),
                        _ => f64::NAN,
                    };
                    out.push(err);
                }
            }
            out
        })
        .collect();
    let cells = h1s.len() * h2s.len();
    let mut mse = vec![0.0; cells];
    for row in &per_rep {
        for (m, e) in mse.iter_mut().zip(row) {
            *m += e;
        }
    }
    mse.chunks(h2s.len())
        .map(|c| c.iter().map(|s| s / reps as f64).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dgp::make_design;

    #[test]
    fn estimator_names_round_trip() {
        for k in EstimatorKind::ALL {
            assert_eq!(k.name().parse::<EstimatorKind>().unwrap(), k);
        }
        assert!("rdrobust".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn single_replication_summary() {
        let cfg = MCConfig::new(make_design(2).unwrap(), 3000, 1, 5);
        let res = run_mc(&cfg).unwrap();
        for (s, recs) in res.summaries.iter().zip(&res.per_rep) {
            let r = &recs[0];
            assert!(!r.failed, "{:?}", r.error);
            assert!((s.bias - (r.theta - res.true_theta)).abs() < 1e-15);
            assert!(s.coverage == 0.0 || s.coverage == 1.0);
        }
    }

    #[test]
    fn rmse_decomposition_and_thread_independence() {
        let mut cfg = MCConfig::new(make_design(3).unwrap(), 2000, 12, 99);
        cfg.jobs = Some(1);
        let a = run_mc(&cfg).unwrap();
        cfg.jobs = Some(4);
        let b = run_mc(&cfg).unwrap();
        assert_eq!(a, b);
        for s in &a.summaries {
            assert!((s.rmse.powi(2) - s.bias.powi(2) - s.variance).abs() < 1e-10);
            assert!((0.0..=1.0).contains(&s.coverage));
        }
    }

    #[test]
    fn bootstrap_extremes() {
        let rec = |theta: f64| ReplicationRecord {
            theta,
            failed: false,
            ..ReplicationRecord::failure(0, &MrdError::EmptySide(Side::Plus))
        };
        let good: Vec<_> = (0..50).map(|i| rec(0.01 * (i % 3) as f64)).collect();
        let bad: Vec<_> = (0..50).map(|i| rec(1.0 + 0.01 * (i % 5) as f64)).collect();
        assert_eq!(bootstrap_rmse_comparison(&good, &bad, 0.0, 200, 1), 1.0);
        assert_eq!(bootstrap_rmse_comparison(&bad, &good, 0.0, 200, 1), 0.0);
    }

    #[test]
    fn log_grid_endpoints() {
        let g = log_grid(2.0, 50.0, 12);
        assert_eq!(g.len(), 12);
        assert!((g[0] - 2.0).abs() < 1e-12 && (g[11] - 50.0).abs() < 1e-9);
        assert!(g.windows(2).all(|w| (w[1] / w[0] - g[1] / g[0]).abs() < 1e-12));
    }
}
