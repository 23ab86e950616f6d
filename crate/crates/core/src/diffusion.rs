//! `W(t) = q + a t + c t^m + sigma B(t)` on a time grid: paths, the
//! reflection map and first hitting of zero.
//!
//! Paths are generated exactly on the grid as `q + drift(t_k)` plus a
//! Gaussian random walk with step variance `sigma^2 dt`. Hitting is detected
//! at grid points only.

use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::PolarNormal;
use crate::stats::Observation;

pub const DEFAULT_DT: f64 = 1e-4;

/// Parameters of `q + a t + c t^m + sigma B(t)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DriftSpec {
    pub q: f64,
    pub a: f64,
    pub c: f64,
    pub m: u32,
    pub sigma: f64,
}

impl DriftSpec {
    pub fn new(q: f64, a: f64, c: f64, m: u32, sigma: f64) -> Result<Self> {
        let s = Self { q, a, c, m, sigma };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::param("sigma", format!("must be positive, got {}", self.sigma)));
        }
        if self.m < 2 {
            return Err(Error::param("m", format!("degree must be at least 2, got {}", self.m)));
        }
        if !(self.q >= 0.0 && self.q.is_finite() && self.a.is_finite() && self.c.is_finite()) {
            return Err(Error::param("q", "q must be nonnegative and a, c finite"));
        }
        Ok(())
    }

    /// Physical queue limit for exponential(`lambda`) clocks:
    /// `(q, beta lambda, -lambda^2/2, 2, sqrt(lambda^3 E[S^2]))`.
    pub fn exponential_arrivals(q: f64, beta: f64, lambda: f64, service_second_moment: f64) -> Result<Self> {
        Self::new(
            q,
            beta * lambda,
            -0.5 * lambda * lambda,
            2,
            (lambda.powi(3) * service_second_moment).sqrt(),
        )
    }

    /// Physical queue limit for general clocks:
    /// `(q, beta f0, f0'/2, 2, sqrt(f0^3 E[S^2]))`.
    pub fn general_arrivals(q: f64, beta: f64, f0: f64, f0_prime: f64, service_second_moment: f64) -> Result<Self> {
        Self::new(q, beta * f0, 0.5 * f0_prime, 2, (f0.powi(3) * service_second_moment).sqrt())
    }

    /// Limit of the embedded free process for general clocks:
    /// `(0, beta, f0'/(2 f0^2), 2, f0 sqrt(E[S^2]))`.
    pub fn embedded_general(beta: f64, f0: f64, f0_prime: f64, service_second_moment: f64) -> Result<Self> {
        Self::new(0.0, beta, f0_prime / (2.0 * f0 * f0), 2, f0 * service_second_moment.sqrt())
    }

    /// `a t + c t^m`.
    pub fn drift(&self, t: f64) -> f64 {
        self.a * t + self.c * t.powi(self.m as i32)
    }

    /// `E[W(t)]`.
    pub fn mean(&self, t: f64) -> f64 {
        self.q + self.drift(t)
    }

    /// `4 (|a|/|c|)^(1/(m-1)) + 20 sigma`.
    pub fn default_horizon(&self) -> Result<f64> {
        if !(self.c < 0.0) {
            return Err(Error::param(
                "c",
                "default horizon needs a negative polynomial coefficient",
            ));
        }
        Ok(4.0 * (self.a.abs() / self.c.abs()).powf(1.0 / (self.m as f64 - 1.0)) + 20.0 * self.sigma)
    }
}

/// `W` on the grid `0, dt, 2 dt, ...`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiffusionPath {
    pub dt: f64,
    pub values: Vec<f64>,
}

impl DiffusionPath {
    pub fn horizon(&self) -> f64 {
        (self.values.len().saturating_sub(1)) as f64 * self.dt
    }

    /// CSV with header `t,W,reflected_W`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let refl = reflect(&self.values)?;
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["t", "W", "reflected_W"])?;
        for (k, (v, r)) in self.values.iter().zip(&refl).enumerate() {
            wr.write_record([(k as f64 * self.dt).to_string(), v.to_string(), r.to_string()])?;
        }
        wr.flush()?;
        Ok(())
    }
}

fn check_grid(horizon: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    if !(horizon >= dt && horizon.is_finite()) {
        return Err(Error::param("horizon", format!("must be at least dt, got {horizon}")));
    }
    Ok((horizon / dt - 1e-9).ceil() as usize)
}

/// Sample `W` on `[0, horizon]` with step `dt`.
pub fn simulate_w<R: Rng + ?Sized>(spec: &DriftSpec, horizon: f64, dt: f64, rng: &mut R) -> Result<DiffusionPath> {
    spec.validate()?;
    let steps = check_grid(horizon, dt)?;
    let sd = spec.sigma * dt.sqrt();
    let mut normal = PolarNormal::new();
    let mut walk = 0.0;
    let mut values = Vec::with_capacity(steps + 1);
    values.push(spec.q);
    for k in 1..=steps {
        walk += sd * normal.sample(rng);
        values.push(spec.mean(k as f64 * dt) + walk);
    }
    Ok(DiffusionPath { dt, values })
}

/// `phi(f)(k) = f(k) - min(0, min_{j <= k} f(j))`.
pub fn reflect(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::EmptySample);
    }
    let mut low = 0.0_f64;
    Ok(values
        .iter()
        .map(|&v| {
            low = low.min(v);
            v - low
        })
        .collect())
}

/// First grid time with `W <= 0`, censored at the path's horizon.
pub fn hitting_time_zero(path: &DiffusionPath) -> Result<Observation> {
    let start = path.values.first().copied().ok_or(Error::EmptySample)?;
    if !(start > 0.0) {
        return Err(Error::UndefinedHittingTime { start });
    }
    Ok(path
        .values
        .iter()
        .position(|&v| v <= 0.0)
        .map_or(Observation::Censored(path.horizon()), |k| {
            Observation::Observed(k as f64 * path.dt)
        }))
}

/// Hitting time of zero generated step by step without storing the path.
/// Same law (and, for the same stream, the same value) as
/// [`simulate_w`] followed by [`hitting_time_zero`].
pub fn sample_hitting_time<R: Rng + ?Sized>(spec: &DriftSpec, horizon: f64, dt: f64, rng: &mut R) -> Result<Observation> {
    spec.validate()?;
    if !(spec.q > 0.0) {
        return Err(Error::UndefinedHittingTime { start: spec.q });
    }
    let steps = check_grid(horizon, dt)?;
    let sd = spec.sigma * dt.sqrt();
    let mut normal = PolarNormal::new();
    let mut walk = 0.0;
    for k in 1..=steps {
        walk += sd * normal.sample(rng);
        let t = k as f64 * dt;
        if spec.mean(t) + walk <= 0.0 {
            return Ok(Observation::Observed(t));
        }
    }
    Ok(Observation::Censored(steps as f64 * dt))
}

/// Hitting times on the grids `dt` and `2 dt` from one set of increments
/// (each coarse increment is the sum of two fine ones). Returns `(fine, coarse)`.
pub fn sample_hitting_time_refined<R: Rng + ?Sized>(
    spec: &DriftSpec,
    horizon: f64,
    dt: f64,
    rng: &mut R,
) -> Result<(Observation, Observation)> {
    spec.validate()?;
    if !(spec.q > 0.0) {
        return Err(Error::UndefinedHittingTime { start: spec.q });
    }
    let steps = check_grid(horizon, 2.0 * dt)? * 2;
    let sd = spec.sigma * dt.sqrt();
    let mut normal = PolarNormal::new();
    let mut walk = 0.0;
    let mut fine = None;
    let mut coarse = None;
    for k in 1..=steps {
        walk += sd * normal.sample(rng);
        let t = k as f64 * dt;
        let below = spec.mean(t) + walk <= 0.0;
        if below && fine.is_none() {
            fine = Some(t);
        }
        if below && k % 2 == 0 {
            coarse = Some(t);
            break;
        }
    }
    let end = steps as f64 * dt;
    let obs = |v: Option<f64>| v.map_or(Observation::Censored(end), Observation::Observed);
    Ok((obs(fine), obs(coarse)))
}

/// `E[phi(W)(t)]`-style readings: reflected `W` at each time in `times`
/// (sorted ascending) from one path generated step by step.
pub fn sample_reflected_at<R: Rng + ?Sized>(spec: &DriftSpec, times: &[f64], dt: f64, rng: &mut R) -> Result<Vec<f64>> {
    spec.validate()?;
    if times.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::param("times", "must be sorted ascending"));
    }
    if !(dt > 0.0) {
        return Err(Error::param("dt", format!("must be positive, got {dt}")));
    }
    let sd = spec.sigma * dt.sqrt();
    let mut normal = PolarNormal::new();
    let mut walk = 0.0;
    let mut low = spec.q.min(0.0);
    let mut current = spec.q;
    let mut k = 0usize;
    let mut out = Vec::with_capacity(times.len());
    for &t in times {
        let target = crate::scaling::floor_index(t / dt).max(0) as usize;
        while k < target {
            k += 1;
            walk += sd * normal.sample(rng);
            current = spec.mean(k as f64 * dt) + walk;
            low = low.min(current);
        }
        out.push(current - low);
    }
    Ok(out)
}

/// Hitting-time sample CSV `replication,tau,censored`.
pub fn write_hitting_times_csv<W: Write>(w: W, samples: &[Observation]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["replication", "tau", "censored"])?;
    for (i, o) in samples.iter().enumerate() {
        let (v, c) = match o {
            Observation::Observed(v) => (*v, false),
            Observation::Censored(h) => (*h, true),
        };
        wr.write_record([i.to_string(), v.to_string(), c.to_string()])?;
    }
    wr.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{replication_stream, stream_from_seed};
    use crate::stats::{mc_summary, mean_and_variance, summarize_observations};
    use proptest::prelude::*;

    #[test]
    fn factories() {
        let s = DriftSpec::exponential_arrivals(1.0, 1.0, 1.0, 2.0).unwrap();
        assert_eq!((s.a, s.c, s.m), (1.0, -0.5, 2));
        assert!((s.sigma - 2f64.sqrt()).abs() < 1e-15);
        let g = DriftSpec::general_arrivals(1.0, 1.0, 1.0, -1.25, 2.0).unwrap();
        assert_eq!((g.a, g.c), (1.0, -0.625));
        let e = DriftSpec::embedded_general(1.0, 1.0, -1.25, 2.0).unwrap();
        assert_eq!((e.q, e.a, e.c), (0.0, 1.0, -0.625));
        assert!((e.sigma - 2f64.sqrt()).abs() < 1e-15);
        assert!(DriftSpec::new(1.0, 0.0, -1.0, 1, 1.0).is_err());
        assert!(DriftSpec::new(1.0, 0.0, -1.0, 2, 0.0).is_err());
        let h = DriftSpec::new(1.0, 1.0, -0.5, 2, 1.0).unwrap().default_horizon().unwrap();
        assert!((h - 28.0).abs() < 1e-12);
    }

    #[test]
    fn zero_noise_follows_skeleton() {
        let spec = DriftSpec::new(0.5, 1.0, -0.5, 2, 1e-12).unwrap();
        let p = simulate_w(&spec, 3.0, 1e-3, &mut stream_from_seed(1)).unwrap();
        for (k, v) in p.values.iter().enumerate() {
            assert!((v - spec.mean(k as f64 * 1e-3)).abs() < 1e-9);
        }
        assert!(simulate_w(&spec, 1.0, 0.0, &mut stream_from_seed(1)).is_err());
        assert!(simulate_w(&spec, 1.0, -1.0, &mut stream_from_seed(1)).is_err());
    }

    #[test]
    fn deterministic_hitting_times() {
        let dt = 1e-4;
        let a = DriftSpec::new(1.0, 0.0, -0.5, 2, 1e-12).unwrap();
        let t = hitting_time_zero(&simulate_w(&a, 3.0, dt, &mut stream_from_seed(0)).unwrap()).unwrap();
        assert!((t.value().unwrap() - 2f64.sqrt()).abs() <= dt);
        let b = DriftSpec::new(1.0, 1.0, -0.5, 2, 1e-12).unwrap();
        let t = hitting_time_zero(&simulate_w(&b, 4.0, dt, &mut stream_from_seed(0)).unwrap()).unwrap();
        assert!((t.value().unwrap() - (1.0 + 3f64.sqrt())).abs() <= dt);
        let short = hitting_time_zero(&simulate_w(&b, 1.0, dt, &mut stream_from_seed(0)).unwrap()).unwrap();
        assert!(short.is_censored());
        let zero = DiffusionPath {
            dt,
            values: vec![0.0, 1.0],
        };
        assert!(matches!(hitting_time_zero(&zero), Err(Error::UndefinedHittingTime { .. })));
    }

    #[test]
    fn streaming_sampler_matches_stored_path() {
        let spec = DriftSpec::new(1.0, 1.0, -0.5, 2, 1.0).unwrap();
        for seed in 0..20 {
            let path = simulate_w(&spec, 10.0, 1e-3, &mut stream_from_seed(seed)).unwrap();
            let a = hitting_time_zero(&path).unwrap();
            let b = sample_hitting_time(&spec, 10.0, 1e-3, &mut stream_from_seed(seed)).unwrap();
            assert_eq!(a, b);
            let refl = reflect(&path.values).unwrap();
            let times = [0.0, 0.5, 1.0, 2.0, 7.3];
            let r = sample_reflected_at(&spec, &times, 1e-3, &mut stream_from_seed(seed)).unwrap();
            for (t, v) in times.iter().zip(&r) {
                let k = (t / 1e-3_f64).round() as usize;
                assert!((v - refl[k]).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn moments_at_one() {
        let spec = DriftSpec::new(0.0, 1.0, -0.5, 2, 1.0).unwrap();
        let xs: Vec<f64> = (0..100_000)
            .map(|i| {
                let r = w_at_one(&spec, &mut replication_stream(17, i));
                r
            })
            .collect();
        let s = mc_summary(&xs, 0).unwrap();
        assert!(s.within_se(0.5, 3.0), "{s:?}");
        let (_, var) = mean_and_variance(&xs).unwrap();
        // SE of the sample variance of a normal: sqrt(2/(n-1)) sigma^2.
        assert!((var - 1.0).abs() < 3.0 * (2.0 / 99_999.0f64).sqrt(), "{var}");
    }

    // W(1) with dt = 0.01: 100 increments.
    fn w_at_one(spec: &DriftSpec, rng: &mut crate::rng::Stream) -> f64 {
        let p = simulate_w(spec, 1.0, 0.01, rng).unwrap();
        *p.values.last().unwrap()
    }

    #[test]
    fn reflection_examples() {
        assert_eq!(reflect(&[1.0, -1.0, 2.0]).unwrap(), vec![1.0, 0.0, 3.0]);
        assert_eq!(reflect(&[0.0, 2.0, 0.5]).unwrap(), vec![0.0, 2.0, 0.5]);
        let ramp: Vec<f64> = (0..50).map(|k| -(k as f64) * 0.1).collect();
        assert!(reflect(&ramp).unwrap().iter().all(|&v| v.abs() < 1e-15));
        assert!(reflect(&[]).is_err());
    }

    proptest! {
        #[test]
        fn reflection_laws(f in prop::collection::vec(-100.0f64..100.0, 1..200), c0 in 0.0f64..300.0) {
            let r = reflect(&f).unwrap();
            for (x, y) in f.iter().zip(&r) {
                prop_assert!(*y >= 0.0);
                prop_assert!(*y >= *x);
            }
            prop_assert_eq!(reflect(&r).unwrap(), r.clone());
            let shifted: Vec<f64> = f.iter().map(|x| x + c0).collect();
            if shifted.iter().all(|&v| v >= 0.0) {
                prop_assert_eq!(reflect(&shifted).unwrap(), shifted);
            }
        }
    }

    #[test]
    fn depletion_lowers_reflected_mean() {
        let means: Vec<f64> = [-0.25, -0.5, -1.0]
            .iter()
            .map(|&c| {
                let spec = DriftSpec::new(0.0, 1.0, c, 2, 1.0).unwrap();
                let xs: Vec<f64> = (0..4000)
                    .map(|i| sample_reflected_at(&spec, &[2.0], 1e-3, &mut replication_stream(5, i)).unwrap()[0])
                    .collect();
                mc_summary(&xs, 0).unwrap().mean
            })
            .collect();
        assert!(means[0] > means[1] && means[1] > means[2] && means[2] > 0.0, "{means:?}");
    }

    #[test]
    fn grid_refinement_shrinks_bias() {
        let spec = DriftSpec::new(1.0, 1.0, -0.5, 2, 1.0).unwrap();
        let dt = 1e-3;
        let reps = 4000;
        let mut diffs = Vec::with_capacity(reps);
        for i in 0..reps {
            let (fine, coarse) = sample_hitting_time_refined(&spec, 30.0, dt, &mut replication_stream(8, i as u64)).unwrap();
            diffs.push(coarse.value().unwrap() - fine.value().unwrap());
        }
        let s = mc_summary(&diffs, 0).unwrap();
        // Discrete monitoring overshoots by about 0.5826 sigma sqrt(dt) per
        // grid; coarse minus fine is then ~0.58 (sqrt(2 dt) - sqrt(dt)) scaled
        // by the inverse local slope, well under 2 sqrt(dt).
        assert!(s.mean >= 0.0 && s.mean < 2.0 * dt.sqrt(), "{s:?}");
        let h = summarize_observations(&[Observation::Observed(1.0), Observation::Observed(3.0)]).unwrap();
        assert_eq!(h.mean, 2.0);
    }

    #[test]
    fn csv_formats() {
        let p = DiffusionPath {
            dt: 0.5,
            values: vec![1.0, -1.0, 2.0],
        };
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "t,W,reflected_W\n0,1,1\n0.5,-1,0\n1,2,3\n");
        let mut buf = Vec::new();
        write_hitting_times_csv(&mut buf, &[Observation::Observed(0.25)]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "replication,tau,censored\n0,0.25,false\n");
    }
}
