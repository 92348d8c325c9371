//! Treatment regions, boundary points and the rotation that puts a boundary
//! point at the origin with the treated region on the upper half-plane.
//!
//! Region membership uses strict inequalities: a record lying exactly on the
//! boundary is a control record.

use serde::{Deserialize, Serialize};

use crate::error::{MrdError, Result};

pub type Point = [f64; 2];

const FRAME_TOL: f64 = 1e-12;

#[inline]
pub(crate) fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub(crate) fn norm(a: Point) -> f64 {
    dot(a, a).sqrt()
}

/// Local coordinate system at a boundary point.
///
/// `normal` points into the treated region and `tangent` is `normal` rotated
/// by -90 degrees, so the matrix with columns `(tangent, normal)` is a proper
/// rotation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryFrame {
    pub center: Point,
    pub tangent: Point,
    pub normal: Point,
}

impl BoundaryFrame {
    /// Builds a frame from a boundary point and an inward normal of any
    /// positive length.
    pub fn new(center: Point, normal: Point) -> Result<Self> {
        let len = norm(normal);
        if !(len.is_finite() && len > 0.0) || !center.iter().all(|c| c.is_finite()) {
            return Err(MrdError::InvalidFrame(format!(
                "normal {normal:?} at {center:?} cannot be normalized"
            )));
        }
        let n = [normal[0] / len, normal[1] / len];
        Ok(Self {
            center,
            tangent: [n[1], -n[0]],
            normal: n,
        })
    }

    /// Builds a frame from explicit axes, checking orthonormality and
    /// orientation.
    pub fn from_axes(center: Point, tangent: Point, normal: Point) -> Result<Self> {
        let frame = Self {
            center,
            tangent,
            normal,
        };
        frame.validate()?;
        Ok(frame)
    }

    /// The identity frame at the origin.
    pub fn origin() -> Self {
        Self {
            center: [0.0, 0.0],
            tangent: [1.0, 0.0],
            normal: [0.0, 1.0],
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(MrdError::InvalidFrame(format!("{what}: {self:?}")));
        if !self
            .center
            .iter()
            .chain(&self.tangent)
            .chain(&self.normal)
            .all(|v| v.is_finite())
        {
            return bad("non-finite component");
        }
        if (norm(self.tangent) - 1.0).abs() > FRAME_TOL || (norm(self.normal) - 1.0).abs() > FRAME_TOL
        {
            return bad("axes are not unit vectors");
        }
        if dot(self.tangent, self.normal).abs() > FRAME_TOL {
            return bad("axes are not orthogonal");
        }
        let det = self.tangent[0] * self.normal[1] - self.normal[0] * self.tangent[1];
        if (det - 1.0).abs() > FRAME_TOL {
            return bad("axes are not right-handed");
        }
        Ok(())
    }

    /// Original coordinates to local `(along boundary, into treated)` coordinates.
    #[inline]
    pub fn to_local(&self, r: Point) -> Point {
        let d = [r[0] - self.center[0], r[1] - self.center[1]];
        [dot(self.tangent, d), dot(self.normal, d)]
    }

    #[inline]
    pub fn to_original(&self, z: Point) -> Point {
        [
            self.center[0] + z[0] * self.tangent[0] + z[1] * self.normal[0],
            self.center[1] + z[0] * self.tangent[1] + z[1] * self.normal[1],
        ]
    }

    /// The frame at the same point with the normal reversed, i.e. with the
    /// roles of treated and control swapped.
    pub fn flipped(&self) -> Self {
        Self {
            center: self.center,
            tangent: [-self.tangent[0], -self.tangent[1]],
            normal: [-self.normal[0], -self.normal[1]],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RegionKind {
    /// `{r1 > c1 and r2 > c2}`
    Intersection,
    /// `{r1 + r2 > c1 + c2}`
    HalfSum,
    /// `{r2 > c2}`; `c1` is ignored.
    HalfPlane,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionSpec {
    pub kind: RegionKind,
    pub thresholds: Point,
}

impl RegionSpec {
    pub fn new(kind: RegionKind, thresholds: Point) -> Self {
        Self { kind, thresholds }
    }

    pub fn contains(&self, r: Point) -> bool {
        region_contains(self, r)
    }
}

pub fn region_contains(spec: &RegionSpec, r: Point) -> bool {
    let [c1, c2] = spec.thresholds;
    match spec.kind {
        RegionKind::Intersection => r[0] > c1 && r[1] > c2,
        RegionKind::HalfSum => r[0] + r[1] > c1 + c2,
        RegionKind::HalfPlane => r[1] > c2,
    }
}

/// Equally spaced frames along the boundary of `spec`.
///
/// For the intersection region, `count` points are placed on each of the two
/// rays leaving the corner, at distances `extent * k / count` for
/// `k = 1..=count`; the corner itself is never returned. For the linear
/// regions, `count` points are spread symmetrically over a segment of
/// half-length `extent` centered at the threshold point.
pub fn boundary_points(spec: &RegionSpec, count: usize, extent: f64) -> Result<Vec<BoundaryFrame>> {
    if count == 0 {
        return Err(MrdError::InvalidArgument("boundary point count must be >= 1".into()));
    }
    if !(extent.is_finite() && extent > 0.0) {
        return Err(MrdError::InvalidArgument(format!(
            "boundary extent must be positive, got {extent}"
        )));
    }
    let [c1, c2] = spec.thresholds;
    let mut frames = Vec::new();
    match spec.kind {
        RegionKind::Intersection => {
            for k in 1..=count {
                let t = extent * k as f64 / count as f64;
                frames.push(BoundaryFrame::new([c1 + t, c2], [0.0, 1.0])?);
            }
            for k in 1..=count {
                let t = extent * k as f64 / count as f64;
                frames.push(BoundaryFrame::new([c1, c2 + t], [1.0, 0.0])?);
            }
        }
        RegionKind::HalfSum | RegionKind::HalfPlane => {
            let (normal, direction) = if spec.kind == RegionKind::HalfSum {
                let s = std::f64::consts::FRAC_1_SQRT_2;
                ([s, s], [s, -s])
            } else {
                ([0.0, 1.0], [1.0, 0.0])
            };
            for k in 0..count {
                let t = if count == 1 {
                    0.0
                } else {
                    -extent + 2.0 * extent * k as f64 / (count - 1) as f64
                };
                frames.push(BoundaryFrame::new(
                    [c1 + t * direction[0], c2 + t * direction[1]],
                    normal,
                )?);
            }
        }
    }
    Ok(frames)
}

/// One observation: outcome, running variables and treatment flag.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub y: f64,
    pub r: Point,
    pub d: bool,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Dataset {
    records: Vec<Record>,
}

impl Dataset {
    pub fn new(records: Vec<Record>) -> Result<Self> {
        if records.is_empty() {
            return Err(MrdError::InvalidArgument("dataset must contain at least one record".into()));
        }
        if let Some(i) = records
            .iter()
            .position(|rec| !(rec.y.is_finite() && rec.r[0].is_finite() && rec.r[1].is_finite()))
        {
            return Err(MrdError::InvalidArgument(format!("record {i} has a non-finite value")));
        }
        Ok(Self { records })
    }

    /// Assigns treatment flags from region membership.
    pub fn from_region(points: Vec<(f64, Point)>, region: &RegionSpec) -> Result<Self> {
        Self::new(
            points
                .into_iter()
                .map(|(y, r)| Record {
                    y,
                    r,
                    d: region.contains(r),
                })
                .collect(),
        )
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn map_records(&self, f: impl Fn(&Record) -> Record) -> Self {
        Self {
            records: self.records.iter().map(f).collect(),
        }
    }

    pub fn treated_count(&self) -> usize {
        self.records.iter().filter(|r| r.d).count()
    }
}

/// Re-expresses every running variable in the local coordinates of `frame`.
pub fn rotate_to_frame(data: &Dataset, frame: &BoundaryFrame) -> Result<Dataset> {
    frame.validate()?;
    Ok(data.map_records(|rec| Record {
        r: frame.to_local(rec.r),
        ..*rec
    }))
}
