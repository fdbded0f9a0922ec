//! Points, regular grids, boxes and segments shared by the other modules.

use std::ops::{Add, Mul, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point (or displacement) in 3D, meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Point3 { x, y, z }
    }

    pub fn from_array(a: [f64; 3]) -> Self {
        Point3::new(a[0], a[1], a[2])
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn norm(self) -> f64 {
        (self.x * self.x + self.y * self.y + self.z * self.z).sqrt()
    }

    pub fn distance(self, other: Point3) -> f64 {
        (self - other).norm()
    }
}

impl Add for Point3 {
    type Output = Point3;
    fn add(self, o: Point3) -> Point3 {
        Point3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl Sub for Point3 {
    type Output = Point3;
    fn sub(self, o: Point3) -> Point3 {
        Point3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Mul<f64> for Point3 {
    type Output = Point3;
    fn mul(self, k: f64) -> Point3 {
        Point3::new(self.x * k, self.y * k, self.z * k)
    }
}

/// Regular 3D grid of points `origin + i ⊙ spacing`, `i[a] in 0..dims[a]`.
///
/// Each point owns the voxel `[p - spacing/2, p + spacing/2]`; the union of
/// voxels is the grid's voxel domain.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegularGrid3 {
    origin: Point3,
    spacing: [f64; 3],
    dims: [usize; 3],
}

impl RegularGrid3 {
    pub fn new(origin: Point3, spacing: [f64; 3], dims: [usize; 3]) -> Result<Self> {
        if !origin.is_finite() {
            return Err(Error::InvalidInput("grid origin must be finite".into()));
        }
        if spacing.iter().any(|d| !(d.is_finite() && *d > 0.0)) {
            return Err(Error::InvalidInput(format!(
                "grid spacing must be positive and finite, got {spacing:?}"
            )));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidInput(format!("grid dims must be positive, got {dims:?}")));
        }
        Ok(RegularGrid3 { origin, spacing, dims })
    }

    /// Grid whose voxels tile the box `[lo, hi]` exactly with `dims` voxels per axis.
    pub fn covering(lo: Point3, hi: Point3, dims: [usize; 3]) -> Result<Self> {
        let lo_a = lo.to_array();
        let hi_a = hi.to_array();
        let mut spacing = [0.0; 3];
        let mut origin = [0.0; 3];
        for a in 0..3 {
            if dims[a] == 0 {
                return Err(Error::InvalidInput(format!("grid dims must be positive, got {dims:?}")));
            }
            spacing[a] = (hi_a[a] - lo_a[a]) / dims[a] as f64;
            origin[a] = lo_a[a] + spacing[a] / 2.0;
        }
        RegularGrid3::new(Point3::from_array(origin), spacing, dims)
    }

    pub fn origin(&self) -> Point3 {
        self.origin
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    /// Total number of grid points.
    pub fn len(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Linear index with x as the slowest axis and z the fastest.
    pub fn linear_index(&self, index: [usize; 3]) -> usize {
        (index[0] * self.dims[1] + index[1]) * self.dims[2] + index[2]
    }

    pub fn unravel(&self, linear: usize) -> [usize; 3] {
        let iz = linear % self.dims[2];
        let rest = linear / self.dims[2];
        [rest / self.dims[1], rest % self.dims[1], iz]
    }

    pub fn grid_point(&self, index: [usize; 3]) -> Result<Point3> {
        if (0..3).any(|a| index[a] >= self.dims[a]) {
            return Err(Error::Range { index, dims: self.dims });
        }
        Ok(self.point_unchecked(index))
    }

    pub(crate) fn point_unchecked(&self, index: [usize; 3]) -> Point3 {
        let o = self.origin.to_array();
        Point3::from_array(std::array::from_fn(|a| o[a] + index[a] as f64 * self.spacing[a]))
    }

    /// All grid points in linear-index order.
    pub fn points(&self) -> impl Iterator<Item = Point3> + '_ {
        (0..self.len()).map(move |i| self.point_unchecked(self.unravel(i)))
    }

    /// Lower and upper corner of the voxel domain.
    pub fn voxel_domain(&self) -> (Point3, Point3) {
        let o = self.origin.to_array();
        let lo = std::array::from_fn(|a| o[a] - self.spacing[a] / 2.0);
        let hi = std::array::from_fn(|a| o[a] + (self.dims[a] as f64 - 0.5) * self.spacing[a]);
        (Point3::from_array(lo), Point3::from_array(hi))
    }

    pub fn in_voxel_domain(&self, p: Point3) -> bool {
        let (lo, hi) = self.voxel_domain();
        let (p, lo, hi) = (p.to_array(), lo.to_array(), hi.to_array());
        (0..3).all(|a| p[a] >= lo[a] && p[a] <= hi[a])
    }

    /// Index of the voxel containing `p`: `round((p - origin) / spacing)`.
    ///
    /// Ties round half away from zero. Points on the outer faces of the domain
    /// map to the adjacent boundary voxel.
    pub fn containing_voxel(&self, p: Point3) -> Result<[usize; 3]> {
        if !p.is_finite() || !self.in_voxel_domain(p) {
            return Err(Error::Domain(format!(
                "point ({}, {}, {}) outside grid voxel domain",
                p.x, p.y, p.z
            )));
        }
        let local = (p - self.origin).to_array();
        Ok(std::array::from_fn(|a| {
            let r = (local[a] / self.spacing[a]).round();
            (r.max(0.0) as usize).min(self.dims[a] - 1)
        }))
    }
}

/// Axis-aligned box, closed on all faces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Box3 {
    pub min: Point3,
    pub max: Point3,
}

impl Box3 {
    pub fn new(min: Point3, max: Point3) -> Result<Self> {
        if !(min.is_finite() && max.is_finite()) || min.x > max.x || min.y > max.y || min.z > max.z {
            return Err(Error::InvalidInput(format!("invalid box {min:?}..{max:?}")));
        }
        Ok(Box3 { min, max })
    }

    pub fn contains(&self, p: Point3) -> bool {
        p.x >= self.min.x
            && p.x <= self.max.x
            && p.y >= self.min.y
            && p.y <= self.max.y
            && p.z >= self.min.z
            && p.z <= self.max.z
    }

    /// Footprint test ignoring z.
    pub fn contains_xy(&self, x: f64, y: f64) -> bool {
        x >= self.min.x && x <= self.max.x && y >= self.min.y && y <= self.max.y
    }

    pub fn volume(&self) -> f64 {
        let d = self.max - self.min;
        d.x * d.y * d.z
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment3 {
    pub a: Point3,
    pub b: Point3,
}

impl Segment3 {
    pub const fn new(a: Point3, b: Point3) -> Self {
        Segment3 { a, b }
    }

    pub fn length(&self) -> f64 {
        self.a.distance(self.b)
    }

    pub fn at(&self, t: f64) -> Point3 {
        self.a + (self.b - self.a) * t
    }

    pub fn reversed(&self) -> Segment3 {
        Segment3::new(self.b, self.a)
    }
}
