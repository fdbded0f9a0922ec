//! Air-to-ground channel gain, Shannon capacity, and the user-by-grid-point
//! capacity matrix.

use std::f64::consts::PI;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::{self, Execution};
use crate::geometry::{Point3, Segment3};
use crate::tomography::{shadowing_line_integral, SlfField};

/// Speed of light used to convert carrier frequency to wavelength, m/s.
pub const SPEED_OF_LIGHT: f64 = 2.998e8;

/// Converts a power in dBm to watts.
pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0) * 1e-3
}

/// Link parameters. Powers are totals over the bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChannelParams {
    /// Carrier wavelength, m.
    pub wavelength: f64,
    /// Hz.
    pub bandwidth: f64,
    /// Transmit power, W.
    pub tx_power: f64,
    /// Noise power, W.
    pub noise_power: f64,
    /// Minimum rate each user must receive, bits/s.
    pub min_rate: f64,
}

impl ChannelParams {
    pub fn new(wavelength: f64, bandwidth: f64, tx_power: f64, noise_power: f64, min_rate: f64) -> Result<Self> {
        let p = ChannelParams { wavelength, bandwidth, tx_power, noise_power, min_rate };
        p.validate()?;
        Ok(p)
    }

    pub fn from_carrier_frequency(
        frequency_hz: f64,
        bandwidth: f64,
        tx_power: f64,
        noise_power: f64,
        min_rate: f64,
    ) -> Result<Self> {
        if !(frequency_hz.is_finite() && frequency_hz > 0.0) {
            return Err(Error::InvalidInput(format!("carrier frequency must be positive, got {frequency_hz}")));
        }
        ChannelParams::new(SPEED_OF_LIGHT / frequency_hz, bandwidth, tx_power, noise_power, min_rate)
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("wavelength", self.wavelength),
            ("bandwidth", self.bandwidth),
            ("tx_power", self.tx_power),
            ("noise_power", self.noise_power),
            ("min_rate", self.min_rate),
        ];
        for (name, v) in fields {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidInput(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    /// 2.4 GHz carrier, 20 MHz bandwidth, 0.1 W transmit power and -96 dBm
    /// noise, with the given minimum rate.
    pub fn urban_default(min_rate: f64) -> Self {
        ChannelParams {
            wavelength: SPEED_OF_LIGHT / 2.4e9,
            bandwidth: 20e6,
            tx_power: 0.1,
            noise_power: dbm_to_watts(-96.0),
            min_rate,
        }
    }
}

/// Channel gain in dB: free-space term `20 log10(lambda / (4 pi d))` minus shadowing.
pub fn gain_db(params: &ChannelParams, gt: Point3, abs: Point3, shadow: f64) -> Result<f64> {
    let d = gt.distance(abs);
    if d == 0.0 {
        return Err(Error::Domain("gain undefined for coincident points".into()));
    }
    Ok(20.0 * (params.wavelength / (4.0 * PI * d)).log10() - shadow)
}

/// Shannon capacity `W log2(1 + P 10^(gain/10) / sigma^2)`, bits/s.
pub fn capacity_bps(params: &ChannelParams, gain_db: f64) -> f64 {
    let snr = params.tx_power * 10f64.powf(gain_db / 10.0) / params.noise_power;
    params.bandwidth * snr.ln_1p() / std::f64::consts::LN_2
}

/// Capacities between `M` users and `G` candidate positions, row-major `M x G`.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
    users: Vec<Point3>,
    grid_points: Vec<Point3>,
}

impl CapacityMatrix {
    /// Builds a matrix from raw values without positional metadata; users and
    /// grid points are set to the origin.
    pub fn from_rows(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        CapacityMatrix::with_positions(values, vec![Point3::default(); rows], vec![Point3::default(); cols])
    }

    pub fn with_positions(values: Vec<f64>, users: Vec<Point3>, grid_points: Vec<Point3>) -> Result<Self> {
        let (rows, cols) = (users.len(), grid_points.len());
        if values.len() != rows * cols {
            return Err(Error::InvalidInput(format!(
                "capacity matrix needs {} values, got {}",
                rows * cols,
                values.len()
            )));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::InvalidInput("capacities must be finite and nonnegative".into()));
        }
        Ok(CapacityMatrix { rows, cols, values, users, grid_points })
    }

    /// Number of users `M`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of candidate positions `G`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn get(&self, m: usize, g: usize) -> f64 {
        self.values[m * self.cols + g]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.values[m * self.cols..(m + 1) * self.cols]
    }

    pub fn column(&self, g: usize) -> Vec<f64> {
        (0..self.rows).map(|m| self.get(m, g)).collect()
    }

    pub fn users(&self) -> &[Point3] {
        &self.users
    }

    pub fn grid_points(&self) -> &[Point3] {
        &self.grid_points
    }

    pub fn row_sums(&self) -> Vec<f64> {
        (0..self.rows).map(|m| self.row(m).iter().sum()).collect()
    }

    /// Users whose total capacity over all positions is below `min_rate`.
    pub fn uncoverable_users(&self, min_rate: f64) -> Vec<usize> {
        self.row_sums()
            .iter()
            .enumerate()
            .filter(|(_, s)| **s < min_rate)
            .map(|(m, _)| m)
            .collect()
    }

    /// Keeps the given columns, in the given order.
    pub fn select_columns(&self, cols: &[usize]) -> CapacityMatrix {
        let mut values = Vec::with_capacity(self.rows * cols.len());
        for m in 0..self.rows {
            values.extend(cols.iter().map(|&g| self.get(m, g)));
        }
        CapacityMatrix {
            rows: self.rows,
            cols: cols.len(),
            values,
            users: self.users.clone(),
            grid_points: cols.iter().map(|&g| self.grid_points[g]).collect(),
        }
    }

    /// Writes one CSV row per user and one column per grid point, bits/s.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header = vec!["user".to_string()];
        header.extend((0..self.cols).map(|g| format!("g{g}")));
        wtr.write_record(&header)?;
        for m in 0..self.rows {
            let mut rec = vec![m.to_string()];
            rec.extend(self.row(m).iter().map(|v| v.to_string()));
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// Capacity from every user to every flight-grid point through the SLF.
pub fn build_capacity_matrix(
    params: &ChannelParams,
    users: &[Point3],
    flight_points: &[Point3],
    slf: &SlfField,
    exec: Execution,
) -> Result<CapacityMatrix> {
    let g_count = flight_points.len();
    let rows = exec::map_indexed(exec, users.len(), |m| -> Result<Vec<f64>> {
        let user = users[m];
        flight_points
            .iter()
            .map(|&x| {
                let xi = shadowing_line_integral(slf, &Segment3::new(user, x))?;
                Ok(capacity_bps(params, gain_db(params, user, x, xi)?))
            })
            .collect()
    });
    let mut values = Vec::with_capacity(users.len() * g_count);
    for row in rows {
        values.extend(row?);
    }
    CapacityMatrix::with_positions(values, users.to_vec(), flight_points.to_vec())
}

/// Drops columns whose largest entry is `<= threshold`.
///
/// Returns the reduced matrix and, for each retained column, its index in the
/// input.
pub fn prune_zero_columns(c: &CapacityMatrix, threshold: f64) -> Result<(CapacityMatrix, Vec<usize>)> {
    if threshold.is_nan() || threshold < 0.0 {
        return Err(Error::InvalidInput(format!("prune threshold must be >= 0, got {threshold}")));
    }
    let keep: Vec<usize> = (0..c.cols())
        .filter(|&g| (0..c.rows()).any(|m| c.get(m, g) > threshold))
        .collect();
    if keep.is_empty() {
        return Err(Error::EmptyProblem("every grid point has zero capacity".into()));
    }
    Ok((c.select_columns(&keep), keep))
}
