use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;

use mrd_core::{KernelFamily, RegionKind, VarianceScaling};

use crate::CliError;

#[derive(Debug, Parser)]
#[command(name = "mrd", version, about = "Two-dimensional regression discontinuity estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate the effect at one boundary point.
    Estimate(EstimateArgs),
    /// Estimate at equally spaced points along a region boundary.
    Sweep(SweepArgs),
    /// Monte Carlo over one of the built-in designs.
    Simulate(SimulateArgs),
    /// Density and Gram-matrix diagnostics for the distance strategy.
    Diagnose(DiagnoseArgs),
    /// Export the built-in design coefficients.
    Designs(DesignsArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Format {
    #[default]
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KernelArg {
    #[default]
    ProductTriangular,
    ProductEpanechnikov,
    Cone,
    ShiftedTriangular,
}

impl From<KernelArg> for KernelFamily {
    fn from(k: KernelArg) -> Self {
        match k {
            KernelArg::ProductTriangular => KernelFamily::ProductTriangular,
            KernelArg::ProductEpanechnikov => KernelFamily::ProductEpanechnikov,
            KernelArg::Cone => KernelFamily::Cone,
            KernelArg::ShiftedTriangular => KernelFamily::ShiftedTriangular,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModeArg {
    #[default]
    Heterogeneous,
    Common,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScalingArg {
    #[default]
    DensityAdjusted,
    Unadjusted,
}

impl From<ScalingArg> for VarianceScaling {
    fn from(s: ScalingArg) -> Self {
        match s {
            ScalingArg::DensityAdjusted => VarianceScaling::DensityAdjusted,
            ScalingArg::Unadjusted => VarianceScaling::Unadjusted,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionArg {
    Intersection,
    HalfSum,
    HalfPlane,
}

impl From<RegionArg> for RegionKind {
    fn from(r: RegionArg) -> Self {
        match r {
            RegionArg::Intersection => RegionKind::Intersection,
            RegionArg::HalfSum => RegionKind::HalfSum,
            RegionArg::HalfPlane => RegionKind::HalfPlane,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DiagnoseMode {
    Density,
    Gamma,
}

/// A pair written `x,y` on the command line or `[x, y]` in a config file.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(try_from = "PairRepr")]
pub struct Pair(pub [f64; 2]);

#[derive(Deserialize)]
#[serde(untagged)]
enum PairRepr {
    Array([f64; 2]),
    Text(String),
}

impl TryFrom<PairRepr> for Pair {
    type Error = String;

    fn try_from(r: PairRepr) -> Result<Self, String> {
        match r {
            PairRepr::Array(a) => Ok(Pair(a)),
            PairRepr::Text(s) => s.parse(),
        }
    }
}

impl FromStr for Pair {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 2 {
            return Err(format!("expected two comma-separated numbers, got '{s}'"));
        }
        let mut out = [0.0f64; 2];
        for (o, p) in out.iter_mut().zip(&parts) {
            *o = p.parse::<f64>().map_err(|_| format!("'{p}' is not a number"))?;
            if !o.is_finite() {
                return Err(format!("'{p}' is not finite"));
            }
        }
        Ok(Pair(out))
    }
}

impl fmt::Display for Pair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{},{}", self.0[0], self.0[1])
    }
}

/// A comma-separated list written `a,b,c` or `[a, b, c]`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(try_from = "ListRepr<T>")]
#[serde(bound = "T: FromStr + Deserialize<'de>, T::Err: fmt::Display")]
pub struct List<T>(pub Vec<T>);

#[derive(Deserialize)]
#[serde(untagged)]
enum ListRepr<T> {
    Array(Vec<T>),
    Text(String),
}

impl<T: FromStr> TryFrom<ListRepr<T>> for List<T>
where
    T::Err: fmt::Display,
{
    type Error = String;

    fn try_from(r: ListRepr<T>) -> Result<Self, String> {
        match r {
            ListRepr::Array(v) => Ok(List(v)),
            ListRepr::Text(s) => s.parse(),
        }
    }
}

impl<T: FromStr> FromStr for List<T>
where
    T::Err: fmt::Display,
{
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        s.split(',')
            .map(str::trim)
            .filter(|p| !p.is_empty())
            .map(|p| p.parse::<T>().map_err(|e| format!("'{p}': {e}")))
            .collect::<Result<Vec<_>, _>>()
            .map(List)
    }
}

/// Field-wise merge: values given as flags win over the config file.
macro_rules! merge_from_config {
    ($ty:ident { $($field:ident),* $(,)? }) => {
        impl $ty {
            pub fn resolve(self) -> Result<Self, CliError> {
                let Some(path) = self.config.clone() else {
                    return Ok(self);
                };
                let file: $ty = read_config(&path)?;
                Ok($ty {
                    config: Some(path),
                    $($field: self.$field.or(file.$field),)*
                })
            }
        }
    };
}

fn read_config<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Input(format!("cannot read config {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("invalid config {}: {e}", path.display())))
}

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct EstimateArgs {
    /// Headered CSV with columns y, r1, r2 and optionally d.
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Derive treatment from a region when the input has no d column.
    #[arg(long, value_enum)]
    pub region: Option<RegionArg>,
    /// Region thresholds `c1,c2`.
    #[arg(long)]
    pub thresholds: Option<Pair>,
    /// Boundary point `x,y` (default 0,0).
    #[arg(long)]
    pub center: Option<Pair>,
    /// Unit normal pointing into the treated region (default 0,1).
    #[arg(long)]
    pub normal: Option<Pair>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    /// Bandwidths `h1,h2` for `--mode fixed`.
    #[arg(long)]
    pub bandwidth: Option<Pair>,
    #[arg(long, value_enum)]
    pub scaling: Option<ScalingArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    /// Write to this file instead of standard output.
    #[arg(long)]
    pub output: Option<PathBuf>,
    /// JSON file with any of these options; flags take precedence.
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

merge_from_config!(EstimateArgs {
    input, region, thresholds, center, normal, kernel, mode, bandwidth, scaling, alpha, format, output,
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct SweepArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Region whose boundary is swept; also derives d when absent.
    #[arg(long, value_enum)]
    pub region: Option<RegionArg>,
    #[arg(long)]
    pub thresholds: Option<Pair>,
    /// Points per boundary segment.
    #[arg(long)]
    pub count: Option<usize>,
    /// Length of each swept segment.
    #[arg(long)]
    pub extent: Option<f64>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    #[arg(long, value_enum)]
    pub mode: Option<ModeArg>,
    #[arg(long)]
    pub bandwidth: Option<Pair>,
    #[arg(long, value_enum)]
    pub scaling: Option<ScalingArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

merge_from_config!(SweepArgs {
    input, region, thresholds, count, extent, kernel, mode, bandwidth, scaling, alpha, format, output,
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct SimulateArgs {
    #[arg(long)]
    pub design: Option<u8>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long)]
    pub reps: Option<usize>,
    /// Required.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Comma-separated subset of 2d-diff, 2d-common, distance-ik.
    #[arg(long)]
    pub estimators: Option<List<String>>,
    /// Support rectangle `x_lo,x_hi,y_lo,y_hi`.
    #[arg(long)]
    pub support: Option<List<f64>>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_enum)]
    pub kernel: Option<KernelArg>,
    #[arg(long, value_enum)]
    pub scaling: Option<ScalingArg>,
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Worker threads.
    #[arg(long, env = "MRD_JOBS")]
    pub jobs: Option<usize>,
    /// Also write one row per replication and estimator to this file.
    #[arg(long)]
    pub per_rep_output: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

merge_from_config!(SimulateArgs {
    design, n, reps, seed, estimators, support, noise, kernel, scaling, alpha, jobs, per_rep_output, format, output,
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct DiagnoseArgs {
    #[arg(long, value_enum)]
    pub mode: Option<DiagnoseMode>,
    /// Required.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Sample size for density mode.
    #[arg(long)]
    pub n: Option<usize>,
    /// Bandwidths for density mode.
    #[arg(long)]
    pub h_grid: Option<List<f64>>,
    /// Sample sizes for gamma mode.
    #[arg(long)]
    pub n_grid: Option<List<usize>>,
    /// Gamma mode uses `h = h_scale · n^{-1/5}`.
    #[arg(long)]
    pub h_scale: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

merge_from_config!(DiagnoseArgs {
    mode, seed, n, h_grid, n_grid, h_scale, noise, format, output,
});

#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(default, rename_all = "kebab-case", deny_unknown_fields)]
pub struct DesignsArgs {
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long)]
    pub output: Option<PathBuf>,
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,
}

merge_from_config!(DesignsArgs { format, output });

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_parsing() {
        assert_eq!("1.5, -2".parse::<Pair>().unwrap(), Pair([1.5, -2.0]));
        assert!("1".parse::<Pair>().is_err());
        assert!("a,b".parse::<Pair>().is_err());
        assert!("inf,1".parse::<Pair>().is_err());
        let p: Pair = serde_json::from_str("[3, 4]").unwrap();
        assert_eq!(p, Pair([3.0, 4.0]));
        let p: Pair = serde_json::from_str("\"3,4\"").unwrap();
        assert_eq!(p, Pair([3.0, 4.0]));
    }

    #[test]
    fn list_parsing() {
        let l: List<f64> = "0.1,0.2, 0.4".parse().unwrap();
        assert_eq!(l.0, vec![0.1, 0.2, 0.4]);
        let l: List<usize> = serde_json::from_str("[1, 2]").unwrap();
        assert_eq!(l.0, vec![1, 2]);
        assert!("1,x".parse::<List<usize>>().is_err());
    }

    #[test]
    fn config_rejects_unknown_keys() {
        let r: Result<SimulateArgs, _> = serde_json::from_str(r#"{"design": 2, "bogus": 1}"#);
        assert!(r.is_err());
        let r: SimulateArgs = serde_json::from_str(r#"{"design": 2, "per-rep-output": "x.csv"}"#).unwrap();
        assert_eq!(r.design, Some(2));
    }
}
