//! Spatial loss fields and the tomographic shadowing integral.
//!
//! Shadowing between two points is the line integral of the spatial loss field
//! (SLF) along the segment joining them, normalized by the square root of the
//! segment length:
//!
//! ```text
//! xi(a, b) = ||b - a||^(-1/2) * integral_a^b l(x) dx
//! ```
//!
//! The field is stored on a regular grid and treated as piecewise constant over
//! voxels centered at the grid points, so the integral reduces to a walk over
//! the voxels crossed by the segment ([`traverse_voxels`]). The conventional
//! ellipsoid weighted sum is provided for comparison.
//!
//! Units: the SLF is in dB/m and shadowing in dB. The `||b - a||^(-1/2)`
//! normalization makes the result dimensionally dB·m^(1/2); all quantities are
//! handled as plain numbers.

use std::io::{BufRead, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::{Point3, RegularGrid3, Segment3};

/// Discretized spatial loss field: one value (dB/m) per grid point.
#[derive(Debug, Clone, PartialEq)]
pub struct SlfField {
    grid: RegularGrid3,
    values: Vec<f64>,
}

impl SlfField {
    /// `values` are in linear-index order (x slowest, z fastest).
    pub fn new(grid: RegularGrid3, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidInput(format!(
                "SLF has {} values, grid has {} points",
                values.len(),
                grid.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("SLF values must be finite".into()));
        }
        Ok(SlfField { grid, values })
    }

    pub fn constant(grid: RegularGrid3, value: f64) -> Result<Self> {
        let n = grid.len();
        SlfField::new(grid, vec![value; n])
    }

    pub fn zeros(grid: RegularGrid3) -> Self {
        let n = grid.len();
        SlfField { grid, values: vec![0.0; n] }
    }

    pub fn grid(&self) -> &RegularGrid3 {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn get(&self, index: [usize; 3]) -> f64 {
        self.values[self.grid.linear_index(index)]
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Writes the text tensor format: a header `Qx Qy Qz dx dy dz ox oy oz`
    /// followed by the values, x slowest and z fastest, one z-run per line.
    pub fn write_text<W: Write>(&self, mut w: W) -> Result<()> {
        let d = self.grid.dims();
        let s = self.grid.spacing();
        let o = self.grid.origin();
        writeln!(w, "{} {} {} {} {} {} {} {} {}", d[0], d[1], d[2], s[0], s[1], s[2], o.x, o.y, o.z)?;
        for run in self.values.chunks(d[2]) {
            let line: Vec<String> = run.iter().map(|v| v.to_string()).collect();
            writeln!(w, "{}", line.join(" "))?;
        }
        Ok(())
    }

    pub fn read_text<R: BufRead>(r: R) -> Result<Self> {
        let mut tokens = Vec::new();
        for line in r.lines() {
            let line = line?;
            tokens.extend(line.split_whitespace().map(str::to_owned));
        }
        if tokens.len() < 9 {
            return Err(Error::Parse("SLF header needs 9 fields".into()));
        }
        let parse_usize = |s: &str| s.parse::<usize>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        let parse_f64 = |s: &str| s.parse::<f64>().map_err(|e| Error::Parse(format!("{s:?}: {e}")));
        let dims = [parse_usize(&tokens[0])?, parse_usize(&tokens[1])?, parse_usize(&tokens[2])?];
        let spacing = [parse_f64(&tokens[3])?, parse_f64(&tokens[4])?, parse_f64(&tokens[5])?];
        let origin = Point3::new(parse_f64(&tokens[6])?, parse_f64(&tokens[7])?, parse_f64(&tokens[8])?);
        let grid = RegularGrid3::new(origin, spacing, dims)?;
        let values = tokens[9..].iter().map(|t| parse_f64(t)).collect::<Result<Vec<_>>>()?;
        SlfField::new(grid, values)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        SlfField::read_text(std::io::BufReader::new(f))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_text(&mut w)?;
        w.flush()?;
        Ok(())
    }
}

/// A shadowing observation between two points: free-space loss minus the
/// measured gain, in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub tx: Point3,
    pub rx: Point3,
    pub shadow_db: f64,
}

#[derive(Serialize, Deserialize)]
struct MeasurementRow {
    tx_x: f64,
    tx_y: f64,
    tx_z: f64,
    rx_x: f64,
    rx_y: f64,
    rx_z: f64,
    shadow_db: f64,
}

/// Reads measurements from CSV with header `tx_x,tx_y,tx_z,rx_x,rx_y,rx_z,shadow_db`.
pub fn read_measurements<R: std::io::Read>(r: R) -> Result<Vec<Measurement>> {
    let mut rdr = csv::Reader::from_reader(r);
    let mut out = Vec::new();
    for row in rdr.deserialize() {
        let row: MeasurementRow = row?;
        let m = Measurement {
            tx: Point3::new(row.tx_x, row.tx_y, row.tx_z),
            rx: Point3::new(row.rx_x, row.rx_y, row.rx_z),
            shadow_db: row.shadow_db,
        };
        if m.tx == m.rx {
            return Err(Error::InvalidInput(format!("measurement {} has tx == rx", out.len())));
        }
        out.push(m);
    }
    Ok(out)
}

pub fn write_measurements<W: std::io::Write>(w: W, ms: &[Measurement]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for m in ms {
        wtr.serialize(MeasurementRow {
            tx_x: m.tx.x,
            tx_y: m.tx.y,
            tx_z: m.tx.z,
            rx_x: m.rx.x,
            rx_y: m.rx.y,
            rx_z: m.rx.z,
            shadow_db: m.shadow_db,
        })?;
    }
    wtr.flush()?;
    Ok(())
}

/// Voxels crossed by a segment.
///
/// `breakpoints` runs from 0 to 1; interval `k` spans
/// `breakpoints[k]..breakpoints[k + 1]` and lies in voxel `voxels[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraversalResult {
    pub breakpoints: Vec<f64>,
    pub voxels: Vec<[usize; 3]>,
}

impl TraversalResult {
    pub fn interval_count(&self) -> usize {
        self.voxels.len()
    }

    /// Number of interior voxel-boundary crossings.
    pub fn crossing_count(&self) -> usize {
        self.voxels.len().saturating_sub(1)
    }

    /// `(normalized length, voxel)` per interval.
    pub fn intervals(&self) -> impl Iterator<Item = (f64, [usize; 3])> + '_ {
        self.breakpoints
            .windows(2)
            .zip(&self.voxels)
            .map(|(w, v)| (w[1] - w[0], *v))
    }

    /// Sum of `L[voxel] * length` scaled by `||b - a||^(1/2)`.
    pub fn integrate(&self, slf: &SlfField, seg_length: f64) -> f64 {
        let acc = self.intervals().fold(0.0, |acc, (dt, v)| acc + dt * slf.get(v));
        seg_length.sqrt() * acc
    }
}

fn check_segment(grid: &RegularGrid3, seg: &Segment3) -> Result<[usize; 3]> {
    let start = grid.containing_voxel(seg.a)?;
    grid.containing_voxel(seg.b)?;
    Ok(start)
}

/// Walks the voxels crossed by `seg`, calling `visit(t0, t1, voxel)` for each
/// interval of positive length (or once with `(0, 1)` for a zero-length segment).
///
/// Endpoints must already be validated against the grid domain.
fn walk(grid: &RegularGrid3, seg: &Segment3, start: [usize; 3], mut visit: impl FnMut(f64, f64, [usize; 3])) {
    let spacing = grid.spacing();
    let dims = grid.dims();
    let local_a = (seg.a - grid.origin()).to_array();
    let delta = (seg.b - seg.a).to_array();
    let step: [i64; 3] = std::array::from_fn(|j| {
        if delta[j] > 0.0 {
            1
        } else if delta[j] < 0.0 {
            -1
        } else {
            0
        }
    });
    // Zero components never select a crossing; replacing them by 1 only keeps
    // the division defined.
    let denom: [f64; 3] = std::array::from_fn(|j| if step[j] == 0 { 1.0 } else { delta[j] });

    let mut cur: [i64; 3] = start.map(|i| i as i64);
    let as_index = |c: [i64; 3]| c.map(|i| i as usize);
    let mut t = 0.0;
    loop {
        let mut next_axis = None;
        let mut t_next = f64::INFINITY;
        for j in 0..3 {
            if step[j] == 0 {
                continue;
            }
            let boundary = spacing[j] * (cur[j] as f64 + 0.5 * step[j] as f64);
            let cand = (boundary - local_a[j]) / denom[j];
            if cand < t_next {
                t_next = cand;
                next_axis = Some(j);
            }
        }
        let Some(j) = next_axis.filter(|_| t_next < 1.0) else {
            visit(t, 1.0, as_index(cur));
            return;
        };
        let moved = cur[j] + step[j];
        if moved < 0 || moved >= dims[j] as i64 {
            // Endpoint sits on the outer face up to rounding.
            visit(t, 1.0, as_index(cur));
            return;
        }
        let t_next = t_next.max(t);
        if t_next > t {
            visit(t, t_next, as_index(cur));
        }
        t = t_next;
        cur[j] = moved;
    }
}

/// Ordered list of voxels crossed by `seg` with their parameter intervals.
pub fn traverse_voxels(grid: &RegularGrid3, seg: &Segment3) -> Result<TraversalResult> {
    let start = check_segment(grid, seg)?;
    let mut breakpoints = vec![0.0];
    let mut voxels = Vec::new();
    walk(grid, seg, start, |_, t1, v| {
        breakpoints.push(t1);
        voxels.push(v);
    });
    Ok(TraversalResult { breakpoints, voxels })
}

/// Shadowing `xi(a, b)` for a piecewise-constant SLF.
///
/// Zero-length segments return 0.
pub fn shadowing_line_integral(slf: &SlfField, seg: &Segment3) -> Result<f64> {
    let start = check_segment(slf.grid(), seg)?;
    let length = seg.length();
    if length == 0.0 {
        return Ok(0.0);
    }
    let mut acc = 0.0;
    walk(slf.grid(), seg, start, |t0, t1, v| acc += (t1 - t0) * slf.get(v));
    Ok(length.sqrt() * acc)
}

/// Shadowing for many segments, in input order.
pub fn shadowing_many(slf: &SlfField, segs: &[Segment3], exec: Execution) -> Result<Vec<f64>> {
    exec::map_indexed(exec, segs.len(), |i| shadowing_line_integral(slf, &segs[i]))
        .into_iter()
        .collect()
}

/// Conventional approximation: SLF values at grid points inside the ellipsoid
/// with foci `a`, `b` and `||a - x|| + ||x - b|| <= ||a - b|| + width / 2`,
/// summed and divided by `||a - b||^(1/2)`.
///
/// This is discontinuous in the endpoints and can be exactly zero on a
/// strictly positive field when the ellipsoid misses every grid point.
pub fn shadowing_ellipsoid_sum(slf: &SlfField, seg: &Segment3, width: f64) -> Result<f64> {
    if !(width.is_finite() && width > 0.0) {
        return Err(Error::InvalidInput(format!("ellipsoid width must be positive, got {width}")));
    }
    let d = seg.length();
    if d == 0.0 {
        return Ok(0.0);
    }
    let limit = d + width / 2.0;
    // fold from +0.0: an empty float sum is -0.0
    let sum = slf
        .grid()
        .points()
        .zip(slf.values())
        .filter(|(x, _)| seg.a.distance(*x) + x.distance(seg.b) <= limit)
        .fold(0.0, |acc, (_, v)| acc + v);
    Ok(sum / d.sqrt())
}

/// Options for [`estimate_slf_with`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimatorOptions {
    /// Ridge weight on `||L||^2`; 0 gives the minimum-norm least-squares solution.
    pub ridge: f64,
    /// Clip negative estimates to zero after solving.
    pub clip_negative: bool,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        EstimatorOptions { ridge: 1e-6, clip_negative: true }
    }
}

/// Ridge least-squares SLF estimate from shadowing measurements, clipping
/// negative values to zero.
pub fn estimate_slf(measurements: &[Measurement], grid: &RegularGrid3, ridge: f64) -> Result<SlfField> {
    estimate_slf_with(measurements, grid, EstimatorOptions { ridge, clip_negative: true })
}

/// Solves `min_L sum_j (xi(L, seg_j) - obs_j)^2 + ridge ||L||^2`.
///
/// `xi` is linear in `L`; its coefficients are the traversal interval lengths
/// times `d_j^(1/2)`. Voxels that no measurement crosses get zero. The reduced
/// system is solved through an SVD, which yields the minimum-norm solution
/// when `ridge == 0` and the system is rank deficient.
pub fn estimate_slf_with(
    measurements: &[Measurement],
    grid: &RegularGrid3,
    opts: EstimatorOptions,
) -> Result<SlfField> {
    if measurements.is_empty() {
        return Err(Error::InvalidInput("at least one measurement is required".into()));
    }
    if !(opts.ridge.is_finite() && opts.ridge >= 0.0) {
        return Err(Error::InvalidInput(format!("ridge must be >= 0, got {}", opts.ridge)));
    }

    // Sparse rows of the forward operator.
    let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(measurements.len());
    let mut col_of = vec![usize::MAX; grid.len()];
    let mut cols = Vec::new();
    for (j, m) in measurements.iter().enumerate() {
        if m.tx == m.rx {
            return Err(Error::InvalidInput(format!("measurement {j} has tx == rx")));
        }
        let seg = Segment3::new(m.tx, m.rx);
        let trav = traverse_voxels(grid, &seg)?;
        let scale = seg.length().sqrt();
        let mut row: Vec<(usize, f64)> = Vec::new();
        for (dt, v) in trav.intervals() {
            let q = grid.linear_index(v);
            if col_of[q] == usize::MAX {
                col_of[q] = cols.len();
                cols.push(q);
            }
            match row.iter_mut().find(|(c, _)| *c == col_of[q]) {
                Some(e) => e.1 += scale * dt,
                None => row.push((col_of[q], scale * dt)),
            }
        }
        rows.push(row);
    }

    let n = measurements.len();
    let k = cols.len();
    let mut a = DMatrix::<f64>::zeros(n, k);
    for (j, row) in rows.iter().enumerate() {
        for &(c, v) in row {
            a[(j, c)] += v;
        }
    }
    let b = DVector::from_iterator(n, measurements.iter().map(|m| m.shadow_db));

    let svd = a.svd(true, true);
    let (u, v_t) = match (&svd.u, &svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::InvalidInput("SVD failed".into())),
    };
    let sigma = &svd.singular_values;
    let sigma_max = sigma.iter().cloned().fold(0.0, f64::max);
    let cutoff = sigma_max * (n.max(k) as f64) * f64::EPSILON;
    let utb = u.transpose() * &b;
    let mut coeff = DVector::<f64>::zeros(sigma.len());
    for i in 0..sigma.len() {
        let s = sigma[i];
        if opts.ridge > 0.0 {
            coeff[i] = s / (s * s + opts.ridge) * utb[i];
        } else if s > cutoff {
            coeff[i] = utb[i] / s;
        }
    }
    let x = v_t.transpose() * coeff;

    let mut values = vec![0.0; grid.len()];
    for (c, &q) in cols.iter().enumerate() {
        let v = x[c];
        values[q] = if opts.clip_negative { v.max(0.0) } else { v };
    }
    SlfField::new(grid.clone(), values)
}
