//! Independent reference computations, random instance generators and the
//! checkers that compare library routines against them. The reference
//! computations never call the routines they check.

#![allow(dead_code)]

use absplace_core::channel::CapacityMatrix;
use absplace_core::geometry::{Point3, RegularGrid3, Segment3};
use absplace_core::placement::{
    x_step_bracket, x_step_column, x_step_residual_fn, z_step_bracket, z_step_residual_fn, z_step_row,
};
use absplace_core::tomography::SlfField;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// SLF value at `p`: nearest grid point by rounding in grid units, clamped to
/// the grid.
pub fn field_at(slf: &SlfField, p: Point3) -> f64 {
    let g = slf.grid();
    let o = g.origin().to_array();
    let d = g.spacing();
    let n = g.dims();
    let p = p.to_array();
    let idx: [usize; 3] = std::array::from_fn(|a| {
        let k = ((p[a] - o[a]) / d[a]).round();
        k.clamp(0.0, (n[a] - 1) as f64) as usize
    });
    slf.values()[(idx[0] * n[1] + idx[1]) * n[2] + idx[2]]
}

/// Rectangle rule with `samples` midpoints along the segment, each looked up
/// by rounding to the nearest grid point and clamping to the grid.
pub fn dense_sample_integral(slf: &SlfField, seg: &Segment3, samples: usize) -> f64 {
    let g = slf.grid();
    let o = g.origin().to_array();
    let d = g.spacing();
    let n = g.dims();
    let a = seg.a.to_array();
    let b = seg.b.to_array();
    let start: [f64; 3] = std::array::from_fn(|k| (a[k] - o[k]) / d[k]);
    let step: [f64; 3] = std::array::from_fn(|k| (b[k] - a[k]) / d[k]);
    let top: [usize; 3] = std::array::from_fn(|k| n[k] - 1);
    let values = slf.values();
    let inv = 1.0 / samples as f64;
    // hit counts per grid point, then one weighted sum
    let mut hits = vec![0u32; values.len()];
    for s in 0..samples {
        let t = (s as f64 + 0.5) * inv;
        // truncation of x + 1/2 rounds to nearest; the cast saturates below zero
        let i: [usize; 3] = std::array::from_fn(|k| ((start[k] + t * step[k] + 0.5) as usize).min(top[k]));
        hits[(i[0] * n[1] + i[1]) * n[2] + i[2]] += 1;
    }
    let acc: f64 = hits.iter().zip(values).map(|(&h, &v)| h as f64 * v).sum();
    seg.length().sqrt() * acc * inv
}

/// Every parameter at which the segment meets an interior voxel face,
/// computed axis by axis, merged with 0 and 1 and sorted.
pub fn crossing_parameters(grid: &RegularGrid3, seg: &Segment3) -> Vec<f64> {
    let o = grid.origin().to_array();
    let d = grid.spacing();
    let n = grid.dims();
    let a = seg.a.to_array();
    let b = seg.b.to_array();
    let mut ts = vec![0.0, 1.0];
    for ax in 0..3 {
        let da = b[ax] - a[ax];
        if da == 0.0 {
            continue;
        }
        for k in 0..n[ax].saturating_sub(1) {
            let face = o[ax] + (k as f64 + 0.5) * d[ax];
            let t = (face - a[ax]) / da;
            if t > 0.0 && t < 1.0 {
                ts.push(t);
            }
        }
    }
    ts.sort_by(f64::total_cmp);
    ts
}

/// Exact integral of the piecewise-constant field: the field is looked up at
/// the midpoint of each interval between consecutive crossings.
pub fn exact_crossing_integral(slf: &SlfField, seg: &Segment3) -> f64 {
    let ts = crossing_parameters(slf.grid(), seg);
    let mut acc = 0.0;
    for w in ts.windows(2) {
        let dt = w[1] - w[0];
        if dt > 0.0 {
            acc += dt * field_at(slf, seg.at(0.5 * (w[0] + w[1])));
        }
    }
    seg.length().sqrt() * acc
}

/// Number of positive-length intervals between crossings.
pub fn crossing_interval_count(grid: &RegularGrid3, seg: &Segment3) -> usize {
    crossing_parameters(grid, seg).windows(2).filter(|w| w[1] > w[0]).count()
}

pub fn random_grid(rng: &mut ChaCha8Rng, max_dim: usize) -> RegularGrid3 {
    let dims = [rng.random_range(1..=max_dim), rng.random_range(1..=max_dim), rng.random_range(1..=max_dim)];
    let spacing = [rng.random_range(0.3..3.0), rng.random_range(0.3..3.0), rng.random_range(0.3..3.0)];
    let origin = Point3::new(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0));
    RegularGrid3::new(origin, spacing, dims).unwrap()
}

pub fn random_field(rng: &mut ChaCha8Rng, grid: &RegularGrid3, lo: f64, hi: f64) -> SlfField {
    let values = (0..grid.len()).map(|_| rng.random_range(lo..hi)).collect();
    SlfField::new(grid.clone(), values).unwrap()
}

/// Uniform point in the grid's voxel domain.
pub fn random_point_in(rng: &mut ChaCha8Rng, grid: &RegularGrid3) -> Point3 {
    let (lo, hi) = grid.voxel_domain();
    Point3::new(
        rng.random_range(lo.x..=hi.x),
        rng.random_range(lo.y..=hi.y),
        rng.random_range(lo.z..=hi.z),
    )
}

pub fn random_segment_in(rng: &mut ChaCha8Rng, grid: &RegularGrid3) -> Segment3 {
    loop {
        let s = Segment3::new(random_point_in(rng, grid), random_point_in(rng, grid));
        if s.length() > 0.0 {
            return s;
        }
    }
}

/// Root of `sum_m max(v_m - s, 0) = target` (`target > 0`) by scanning the
/// sorted breakpoints of the piecewise-linear left side.
pub fn x_step_root_oracle(v: &[f64], target: f64) -> f64 {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut prefix = 0.0;
    for k in 1..=sorted.len() {
        prefix += sorted[k - 1];
        // on [sorted[k], sorted[k - 1]] the active set is the top k entries
        let s = (prefix - target) / k as f64;
        let lower = if k < sorted.len() { sorted[k] } else { f64::NEG_INFINITY };
        if s >= lower && s <= sorted[k - 1] {
            return s;
        }
    }
    unreachable!("a positive target always has a root")
}

fn clamp_sum(a: &[f64], c: &[f64], lambda: f64) -> f64 {
    a.iter().zip(c).map(|(&a, &c)| (a - lambda).clamp(0.0, c)).sum()
}

/// Projection of `a` onto `{z : 1^T z = r, 0 <= z <= c}` via the sorted
/// breakpoints `a_g - c_g` and `a_g` of `lambda -> sum clamp(a - lambda, 0, c)`.
/// Returns `(z, lambda)`.
pub fn z_step_oracle(a: &[f64], c: &[f64], r: f64) -> (Vec<f64>, f64) {
    let mut bps: Vec<f64> = a.iter().zip(c).flat_map(|(&a, &c)| [a - c, a]).collect();
    bps.sort_by(f64::total_cmp);
    let mut lambda = bps[0];
    for w in bps.windows(2) {
        let (g0, g1) = (clamp_sum(a, c, w[0]), clamp_sum(a, c, w[1]));
        if g0 >= r && r >= g1 {
            lambda = if g0 > g1 { w[0] + (g0 - r) / (g0 - g1) * (w[1] - w[0]) } else { w[0] };
            break;
        }
    }
    let z = a.iter().zip(c).map(|(&a, &c)| (a - lambda).clamp(0.0, c)).collect();
    (z, lambda)
}

/// Minimum cover size by scanning all `2^G` subsets as bitmasks.
pub fn min_cover_bitmask(c: &CapacityMatrix, r_min: f64) -> Option<usize> {
    let g = c.cols();
    assert!(g <= 20, "bitmask oracle is for small G");
    let mut best: Option<usize> = None;
    for mask in 1u32..(1u32 << g) {
        let size = mask.count_ones() as usize;
        if best.is_some_and(|b| size >= b) {
            continue;
        }
        let covers = (0..c.rows()).all(|m| {
            let total: f64 = (0..g).filter(|&j| mask >> j & 1 == 1).map(|j| c.get(m, j)).sum();
            total >= r_min
        });
        if covers {
            best = Some(size);
        }
    }
    best
}

/// Random feasible capacity matrix in units of `r_min`: entries are 0 with
/// probability `p_zero`, otherwise uniform in `[0, hi) * r_min`.
pub fn random_capacity(
    rng: &mut ChaCha8Rng,
    m_range: (usize, usize),
    g_range: (usize, usize),
    p_zero: f64,
    hi: f64,
    r_min: f64,
) -> CapacityMatrix {
    loop {
        let m = rng.random_range(m_range.0..=m_range.1);
        let g = rng.random_range(g_range.0..=g_range.1);
        let v: Vec<f64> = (0..m * g)
            .map(|_| if rng.random::<f64>() < p_zero { 0.0 } else { rng.random_range(0.0..hi) * r_min })
            .collect();
        let c = CapacityMatrix::from_rows(m, g, v).unwrap();
        if c.uncoverable_users(r_min).is_empty() {
            return c;
        }
    }
}

/// Upper bound on `|xi(a, b + h) - xi(a, b)|` for a field with values in
/// `[0, lmax]`.
///
/// `xi = d^(1/2) * I` with `I` the mean of the field along the segment. The
/// `d^(1/2)` factor moves by at most `|h| / (d^(1/2) + d'^(1/2))`, and the
/// mean moves by at most `lmax` times the measure of parameters `t` whose
/// point lies within `t |h_j| <= |h_j|` of some interior face on axis `j`.
pub fn endpoint_move_bound(grid: &RegularGrid3, seg: &Segment3, h: Point3, lmax: f64) -> f64 {
    let moved = Segment3::new(seg.a, seg.b + h);
    let (d0, d1) = (seg.length(), moved.length());
    let scale_term = h.norm() / (d0.sqrt() + d1.sqrt()).max(1e-300);
    let o = grid.origin().to_array();
    let sp = grid.spacing();
    let n = grid.dims();
    let a = seg.a.to_array();
    let delta = (seg.b - seg.a).to_array();
    let h = h.to_array();
    let mut measure = 0.0;
    for ax in 0..3 {
        let reach = h[ax].abs();
        for k in 0..n[ax].saturating_sub(1) {
            let face = o[ax] + (k as f64 + 0.5) * sp[ax];
            measure += if delta[ax] == 0.0 {
                if (a[ax] - face).abs() <= reach { 1.0 } else { 0.0 }
            } else {
                let t0 = (face - reach - a[ax]) / delta[ax];
                let t1 = (face + reach - a[ax]) / delta[ax];
                (t0.max(t1).min(1.0) - t0.min(t1).max(0.0)).max(0.0)
            };
        }
    }
    lmax * (scale_term + d1.sqrt().max(d0.sqrt()) * measure.min(1.0))
}

pub struct XCase {
    pub z: Vec<f64>,
    pub u: Vec<f64>,
    pub w: f64,
    pub rho: f64,
}

pub struct ZCase {
    pub r: Vec<f64>,
    pub u: Vec<f64>,
    pub c: Vec<f64>,
    pub r_min: f64,
}

pub fn x_case(rng: &mut ChaCha8Rng, max_m: usize) -> XCase {
    let m = rng.random_range(1..=max_m);
    XCase {
        z: (0..m).map(|_| rng.random_range(0.0..2.0)).collect(),
        u: (0..m).map(|_| rng.random_range(-0.5..0.5)).collect(),
        w: rng.random_range(0.01..3.0),
        rho: rng.random_range(0.1..10.0),
    }
}

pub fn z_case(rng: &mut ChaCha8Rng, max_g: usize) -> ZCase {
    let g = rng.random_range(1..=max_g);
    loop {
        let c: Vec<f64> = (0..g)
            .map(|_| if rng.random::<f64>() < 0.2 { 0.0 } else { rng.random_range(0.0..2.0) })
            .collect();
        let total: f64 = c.iter().sum();
        if total > 0.0 {
            return ZCase {
                r: (0..g).map(|_| rng.random_range(-0.5..1.5)).collect(),
                u: (0..g).map(|_| rng.random_range(-0.5..0.5)).collect(),
                r_min: rng.random_range(0.05..0.95) * total,
                c,
            };
        }
    }
}

/// Checks one X-step against the bracket, the residual and the oracle.
pub fn check_x(case: &XCase) -> Result<(), String> {
    let v: Vec<f64> = case.z.iter().zip(&case.u).map(|(z, u)| z - u).collect();
    let target = case.w / case.rho;
    let (r, s) = x_step_column(&case.z, &case.u, case.w, case.rho);
    let (lo, hi) = x_step_bracket(&v, case.w, case.rho);
    let scale = v.iter().fold(target, |m, x| m.max(x.abs()));
    if !(lo <= s && s <= hi) {
        return Err(format!("slack {s} outside [{lo}, {hi}]"));
    }
    let resid = (x_step_residual_fn(&v, s) - target).abs();
    if resid > 1e-9 * scale {
        return Err(format!("residual {resid}"));
    }
    let exact = x_step_root_oracle(&v, target);
    if (s - exact).abs() > 1e-8 * scale {
        return Err(format!("slack {s} vs oracle {exact}"));
    }
    for (ri, vi) in r.iter().zip(&v) {
        if *ri != vi.min(s) {
            return Err(format!("r entry {ri} is not min({vi}, {s})"));
        }
    }
    Ok(())
}

/// Checks one Z-step against the bracket, the constraints and the oracle.
pub fn check_z(case: &ZCase) -> Result<(), String> {
    let a: Vec<f64> = case.r.iter().zip(&case.u).map(|(r, u)| r + u).collect();
    let z = z_step_row(0, &case.r, &case.u, &case.c, case.r_min).map_err(|e| e.to_string())?;
    let (z_exact, lambda_exact) = z_step_oracle(&a, &case.c, case.r_min);
    let scale = a.iter().chain(&case.c).fold(case.r_min, |m, x| m.max(x.abs()));
    let sum: f64 = z.iter().sum();
    if (sum - case.r_min).abs() > 1e-9 * case.r_min {
        return Err(format!("row sum {sum} vs {}", case.r_min));
    }
    if z.iter().zip(&case.c).any(|(z, c)| *z < 0.0 || z > c) {
        return Err("box constraint violated".into());
    }
    if let Some((lo, hi)) = z_step_bracket(&a, &case.c, case.r_min) {
        // the oracle's interpolated root may round one ulp past a tight end
        let slack = 1e-12 * scale;
        if !(lo - slack <= lambda_exact && lambda_exact <= hi + slack) {
            return Err(format!("root {lambda_exact} outside [{lo}, {hi}]"));
        }
        let resid = (z_step_residual_fn(&a, &case.c, lambda_exact) - case.r_min).abs();
        if resid > 1e-9 * scale {
            return Err(format!("oracle residual {resid}"));
        }
    }
    for (g, (x, y)) in z.iter().zip(&z_exact).enumerate() {
        if (x - y).abs() > 1e-8 * scale {
            return Err(format!("z[{g}] = {x} vs oracle {y}"));
        }
    }
    // any strictly interior entry pins the multiplier
    for (g, &zg) in z.iter().enumerate() {
        if zg > 1e-6 * scale && zg < case.c[g] - 1e-6 * scale {
            let lambda = a[g] - zg;
            if (lambda - lambda_exact).abs() > 1e-8 * scale {
                return Err(format!("multiplier {lambda} vs oracle {lambda_exact}"));
            }
        }
    }
    Ok(())
}
