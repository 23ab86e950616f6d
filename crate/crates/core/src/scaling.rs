//! Exponents and rescaling maps between pre-limit paths and limit processes.
//!
//! With contact order `ell` the time exponent is `alpha = 2 ell / (2 ell + 1)`
//! (embedded steps per unit limit time are `n^alpha`) and the space exponent
//! is `alpha / 2`. Exponents are exact rationals; powers of `n` are
//! evaluated as `exp(r ln n)`.

use std::io::Write;

use num_rational::Ratio;

use crate::dist::{ArrivalModel, ServiceModel};
use crate::error::{Error, Result};
use crate::queue_sim::{EmbeddedPath, QueuePath};

pub type Exponent = Ratio<i64>;

/// `ell / (ell + 1/2)`.
pub fn alpha(ell: u32) -> Result<Exponent> {
    if ell == 0 {
        return Err(Error::param("ell", "contact order must be at least 1"));
    }
    Ok(Ratio::new(2 * ell as i64, 2 * ell as i64 + 1))
}

pub fn ratio_to_f64(r: Exponent) -> f64 {
    *r.numer() as f64 / *r.denom() as f64
}

/// `n^r`.
pub fn pow_n(n: u64, r: Exponent) -> f64 {
    (ratio_to_f64(r) * (n as f64).ln()).exp()
}

/// `floor(x)`, except that values within `1e-9` relative of an integer
/// snap to it, so `k / s * s` maps back to `k`.
pub fn floor_index(x: f64) -> i64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r as i64
    } else {
        x.floor() as i64
    }
}

/// `ceil(x)` with the same snapping as [`floor_index`].
pub fn ceil_count(x: f64) -> u64 {
    let r = x.round();
    if (x - r).abs() <= 1e-9 * x.abs().max(1.0) {
        r.max(0.0) as u64
    } else {
        x.ceil().max(0.0) as u64
    }
}

/// A path on the limit time and space scales.
#[derive(Debug, Clone, PartialEq)]
pub struct RescaledPath {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
    pub n: u64,
    pub space_exp: Exponent,
    pub time_exp: Exponent,
}

impl RescaledPath {
    /// Raw (index, value) pairs: `(floor(t n^time_exp), round(value n^space_exp))`.
    pub fn to_raw(&self) -> Vec<(i64, i64)> {
        let ts = pow_n(self.n, self.time_exp);
        let vs = pow_n(self.n, self.space_exp);
        self.times
            .iter()
            .zip(&self.values)
            .map(|(&t, &v)| (floor_index(t * ts), (v * vs).round() as i64))
            .collect()
    }

    /// CSV with header `t,value,n,space_exp,time_exp`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "value", "n", "space_exp", "time_exp"])?;
        let se = self.space_exp.to_string();
        let te = self.time_exp.to_string();
        let n = self.n.to_string();
        for (t, v) in self.times.iter().zip(&self.values) {
            wr.write_record([t.to_string(), v.to_string(), n.clone(), se.clone(), te.clone()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

/// Which embedded sequence to rescale.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmbeddedSeries {
    /// The free process `N_n`.
    Free,
    /// The queue `Q_n`.
    Queue,
}

fn embedded_value(path: &EmbeddedPath, which: EmbeddedSeries, k: usize) -> f64 {
    if k == 0 {
        return 0.0;
    }
    match which {
        EmbeddedSeries::Free => path.n_free[k - 1] as f64,
        EmbeddedSeries::Queue => path.queue[k - 1] as f64,
    }
}

/// Every step `k = 0..=K` of the embedded path at limit time `k / n^alpha`.
pub fn rescale_embedded(path: &EmbeddedPath, n: u64, ell: u32, which: EmbeddedSeries) -> Result<RescaledPath> {
    let a = alpha(ell)?;
    let space = a / 2;
    let ts = pow_n(n, a);
    let vs = pow_n(n, space);
    let steps = path.len();
    Ok(RescaledPath {
        times: (0..=steps).map(|k| k as f64 / ts).collect(),
        values: (0..=steps).map(|k| embedded_value(path, which, k) / vs).collect(),
        n,
        space_exp: space,
        time_exp: a,
    })
}

/// The embedded path read at `floor(t n^alpha)` for each `t` in `grid`.
pub fn rescale_embedded_on_grid(
    path: &EmbeddedPath,
    n: u64,
    ell: u32,
    which: EmbeddedSeries,
    grid: &[f64],
) -> Result<RescaledPath> {
    let a = alpha(ell)?;
    let space = a / 2;
    let ts = pow_n(n, a);
    let vs = pow_n(n, space);
    let mut values = Vec::with_capacity(grid.len());
    for &t in grid {
        let k = floor_index(t * ts).max(0) as usize;
        if k > path.len() {
            return Err(Error::GridBeyondPath { index: k, len: path.len() });
        }
        values.push(embedded_value(path, which, k) / vs);
    }
    Ok(RescaledPath {
        times: grid.to_vec(),
        values,
        n,
        space_exp: space,
        time_exp: a,
    })
}

/// Physical queue at limit times `grid`: level at physical time
/// `t n^(alpha - 1)` divided by `n^(alpha / 2)`. For `ell = 1` this is
/// `n^(-1/3) Q(t n^(-1/3))`.
pub fn rescale_physical_with(path: &QueuePath, n: u64, ell: u32, grid: &[f64]) -> Result<RescaledPath> {
    let a = alpha(ell)?;
    let space = a / 2;
    let time_stretch = pow_n(n, Ratio::new(1, 1) - a);
    let vs = pow_n(n, space);
    let mut values = Vec::with_capacity(grid.len());
    for &t in grid {
        let s = t / time_stretch;
        if s > path.end_time {
            return Err(Error::GridBeyondHorizon {
                time: s,
                horizon: path.end_time,
            });
        }
        values.push(path.level_at(s) as f64 / vs);
    }
    Ok(RescaledPath {
        times: grid.to_vec(),
        values,
        n,
        space_exp: space,
        time_exp: a - Ratio::new(1, 1),
    })
}

/// [`rescale_physical_with`] at `ell = 1`.
pub fn rescale_physical(path: &QueuePath, n: u64, grid: &[f64]) -> Result<RescaledPath> {
    rescale_physical_with(path, n, 1, grid)
}

/// `rho_n = n f_T(0) E[D]` with `D = S (1 + beta n^(-alpha/2)) / n`.
pub fn load_factor(arrival: &ArrivalModel, service: &ServiceModel, n: u64, beta: f64, ell: u32) -> Result<f64> {
    let a = alpha(ell)?;
    let mult = (1.0 + beta / pow_n(n, a / 2)) / n as f64;
    Ok(n as f64 * arrival.f0() * service.mean() * mult)
}

/// `rho_n - (1 + beta n^(-alpha/2))`; zero once the service is critically scaled.
pub fn criticality_residual(arrival: &ArrivalModel, service: &ServiceModel, n: u64, beta: f64, ell: u32) -> Result<f64> {
    let a = alpha(ell)?;
    Ok(load_factor(arrival, service, n, beta, ell)? - (1.0 + beta / pow_n(n, a / 2)))
}
