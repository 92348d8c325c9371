pub mod bandwidth;
pub mod dgp;
pub mod distance_baseline;
pub mod error;
pub mod estimator;
pub mod geometry;
pub mod kernels;
pub mod localpoly;
pub mod quadrature;
pub mod simulation;

pub use bandwidth::{BandwidthMode, BandwidthSelection, BiasTerms, SelectorOptions, VarianceScaling};
pub use dgp::{make_design, DesignSpec};
pub use distance_baseline::{distance_estimate, to_signed_distance, DistanceEstimate, SignedDistanceSample};
pub use error::{MrdError, Result};
pub use estimator::{estimate_rd, sweep_boundary, EstimateOptions, RDEstimate};
pub use geometry::{BoundaryFrame, Dataset, Point, Record, RegionKind, RegionSpec};
pub use kernels::{KernelFamily, KernelSpec, MomentMatrices, Side};
pub use localpoly::{LocalFit, MultiIndexSet, Sigma2};
pub use simulation::{run_mc, EstimatorKind, MCConfig, MCResult, ReplicationRecord, Summary};
