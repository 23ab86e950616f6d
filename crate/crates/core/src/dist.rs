//! Arrival-clock and service-requirement laws.
//!
//! Arrival clocks are handled through the cumulative hazard
//! `H(t) = -ln(1 - F(t))`: the `i`-th order statistic of `n` clocks is
//! `H^{-1}(E_(i))` where `E_(i)` is the `i`-th order statistic of `n` unit
//! exponentials, generated from independent spacings without sorting.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use statrs::function::erf::{erf, erfc};

use crate::error::{Error, Result};
use crate::rng::exp1;

const SOLVE_RTOL: f64 = 1e-12;

/// Distribution of a single arrival clock `T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ArrivalModel {
    Exponential { rate: f64 },
    Hyperexponential { weights: Vec<f64>, rates: Vec<f64> },
    HalfNormal { scale: f64 },
    /// Uniform on `[0, 1]`.
    Uniform,
}

/// `(f_T(0), f'_T(0), contact order)`; `ell` is `None` when the density is
/// flat at zero to every order.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DensityAtZero {
    pub f0: f64,
    pub f0_prime: f64,
    pub ell: Option<u32>,
}

impl ArrivalModel {
    pub fn exponential(rate: f64) -> Result<Self> {
        let m = ArrivalModel::Exponential { rate };
        m.validate()?;
        Ok(m)
    }

    pub fn hyperexponential(weights: Vec<f64>, rates: Vec<f64>) -> Result<Self> {
        let m = ArrivalModel::Hyperexponential { weights, rates };
        m.validate()?;
        Ok(m)
    }

    pub fn half_normal(scale: f64) -> Result<Self> {
        let m = ArrivalModel::HalfNormal { scale };
        m.validate()?;
        Ok(m)
    }

    /// Checks parameter ranges; deserialized models should pass through here.
    pub fn validate(&self) -> Result<()> {
        let positive = |name: &'static str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(name, format!("must be positive and finite, got {v}")))
            }
        };
        match self {
            ArrivalModel::Exponential { rate } => positive("rate", *rate),
            ArrivalModel::HalfNormal { scale } => positive("scale", *scale),
            ArrivalModel::Uniform => Ok(()),
            ArrivalModel::Hyperexponential { weights, rates } => {
                if weights.is_empty() || weights.len() != rates.len() {
                    return Err(Error::param(
                        "weights",
                        format!("need equal nonempty lengths, got {} weights and {} rates", weights.len(), rates.len()),
                    ));
                }
                for &w in weights {
                    positive("weights", w)?;
                }
                for &r in rates {
                    positive("rates", r)?;
                }
                let total: f64 = weights.iter().sum();
                if (total - 1.0).abs() > 1e-12 {
                    return Err(Error::param("weights", format!("must sum to 1, got {total}")));
                }
                Ok(())
            }
        }
    }

    /// `F_T(t)`.
    pub fn cdf(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            ArrivalModel::Exponential { rate } => -(-rate * t).exp_m1(),
            ArrivalModel::Hyperexponential { weights, rates } => weights
                .iter()
                .zip(rates)
                .map(|(p, l)| -p * (-l * t).exp_m1())
                .sum::<f64>()
                .min(1.0),
            ArrivalModel::HalfNormal { scale } => erf(t / (scale * std::f64::consts::SQRT_2)),
            ArrivalModel::Uniform => t.min(1.0),
        }
    }

    /// `1 - F_T(t)`, computed without cancellation.
    pub fn survival(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 1.0;
        }
        match self {
            ArrivalModel::Exponential { rate } => (-rate * t).exp(),
            ArrivalModel::Hyperexponential { weights, rates } => {
                weights.iter().zip(rates).map(|(p, l)| p * (-l * t).exp()).sum()
            }
            ArrivalModel::HalfNormal { scale } => erfc(t / (scale * std::f64::consts::SQRT_2)),
            ArrivalModel::Uniform => (1.0 - t).max(0.0),
        }
    }

    /// `f_T(t)`; right-continuous at 0.
    pub fn density(&self, t: f64) -> f64 {
        if t < 0.0 {
            return 0.0;
        }
        match self {
            ArrivalModel::Exponential { rate } => rate * (-rate * t).exp(),
            ArrivalModel::Hyperexponential { weights, rates } => {
                weights.iter().zip(rates).map(|(p, l)| p * l * (-l * t).exp()).sum()
            }
            ArrivalModel::HalfNormal { scale } => {
                let z = t / scale;
                std::f64::consts::SQRT_2 / (scale * std::f64::consts::PI.sqrt()) * (-0.5 * z * z).exp()
            }
            ArrivalModel::Uniform => {
                if t <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }

    /// `H(t) = -ln(1 - F_T(t))`.
    pub fn cumulative_hazard(&self, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match self {
            ArrivalModel::Exponential { rate } => rate * t,
            ArrivalModel::Uniform => {
                if t >= 1.0 {
                    f64::INFINITY
                } else {
                    -(-t).ln_1p()
                }
            }
            ArrivalModel::HalfNormal { scale } => {
                let z = t / (scale * std::f64::consts::SQRT_2);
                if z < 0.5 {
                    -(-erf(z)).ln_1p()
                } else {
                    -erfc(z).ln()
                }
            }
            ArrivalModel::Hyperexponential { .. } => -self.survival(t).ln(),
        }
    }

    /// Hazard rate `f_T(t) / (1 - F_T(t))`.
    pub fn hazard_rate(&self, t: f64) -> f64 {
        match self {
            ArrivalModel::Exponential { rate } => *rate,
            _ => self.density(t) / self.survival(t),
        }
    }

    /// Inverse of [`cumulative_hazard`](Self::cumulative_hazard): the clock
    /// value whose survival probability is `exp(-e)`.
    pub fn inverse_cumulative_hazard(&self, e: f64) -> f64 {
        self.inverse_cumulative_hazard_from(e, 0.0)
    }

    /// [`inverse_cumulative_hazard`](Self::inverse_cumulative_hazard) given a
    /// known lower bound `t_prev` (a clock with hazard at most `e`), used as
    /// the starting point of the iteration.
    pub fn inverse_cumulative_hazard_from(&self, e: f64, t_prev: f64) -> f64 {
        if e <= 0.0 {
            return 0.0;
        }
        match self {
            ArrivalModel::Exponential { rate } => e / rate,
            ArrivalModel::Uniform => -(-e).exp_m1(),
            ArrivalModel::Hyperexponential { rates, .. } => {
                // lambda_min t <= H(t) <= lambda_max t
                let lmin = rates.iter().copied().fold(f64::INFINITY, f64::min);
                let lmax = rates.iter().copied().fold(0.0, f64::max);
                self.solve_hazard(e, (e / lmax).max(t_prev), e / lmin, t_prev)
            }
            ArrivalModel::HalfNormal { .. } => {
                // Increasing hazard with h(0) = f0 gives H(t) >= f0 t.
                let hi = e / self.f0();
                self.solve_hazard(e, t_prev.min(hi), hi, t_prev)
            }
        }
    }

    /// Newton iteration on `H(t) = e` kept inside the bracket `[lo, hi]`,
    /// falling back to bisection whenever a step leaves it.
    fn solve_hazard(&self, e: f64, mut lo: f64, mut hi: f64, start: f64) -> f64 {
        let mut x = if start > lo && start < hi {
            start
        } else {
            0.5 * (lo + hi)
        };
        for _ in 0..200 {
            let g = self.cumulative_hazard(x) - e;
            if g < 0.0 {
                lo = x;
            } else {
                hi = x;
            }
            let h = self.hazard_rate(x);
            let mut next = x - g / h;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= SOLVE_RTOL * next || hi - lo <= SOLVE_RTOL * hi {
                return next;
            }
            x = next;
        }
        x
    }

    /// `F_T^{-1}(p)` for `p` in `[0, 1)`.
    pub fn inverse_cdf(&self, p: f64) -> f64 {
        self.inverse_cumulative_hazard(-(-p).ln_1p())
    }

    pub fn f0(&self) -> f64 {
        self.density(0.0)
    }

    /// Right derivative of the density at 0.
    pub fn f0_prime(&self) -> f64 {
        match self {
            ArrivalModel::Exponential { rate } => -rate * rate,
            ArrivalModel::Hyperexponential { weights, rates } => {
                -weights.iter().zip(rates).map(|(p, l)| p * l * l).sum::<f64>()
            }
            ArrivalModel::HalfNormal { .. } | ArrivalModel::Uniform => 0.0,
        }
    }

    /// Order `ell` of the first nonvanishing derivative of `f_T` at 0.
    /// The uniform density is flat near 0, so it has no finite order.
    pub fn contact_order(&self) -> Option<u32> {
        match self {
            ArrivalModel::Exponential { .. } | ArrivalModel::Hyperexponential { .. } => Some(1),
            ArrivalModel::HalfNormal { .. } => Some(2),
            ArrivalModel::Uniform => None,
        }
    }

    pub fn density_at_zero(&self) -> DensityAtZero {
        DensityAtZero {
            f0: self.f0(),
            f0_prime: self.f0_prime(),
            ell: self.contact_order(),
        }
    }

    /// One clock draw by inversion.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.inverse_cumulative_hazard(exp1(rng))
    }

    /// Largest violation of `0 = F(0) <= F(t_1) <= ... <= F(t_m) ~ 1` on a grid
    /// reaching far into the tail; zero means the CDF passes.
    pub fn cdf_grid_violation(&self) -> f64 {
        let top = self.inverse_cdf(1.0 - 1e-12).max(1.0) * 2.0;
        let mut worst = self.cdf(0.0).abs();
        let mut prev = 0.0;
        for i in 1..=4000 {
            let f = self.cdf(top * i as f64 / 4000.0);
            worst = worst.max(prev - f).max(-f).max(f - 1.0);
            prev = f;
        }
        worst.max((1.0 - prev).abs() - 1e-10).max(0.0)
    }

    /// Relative gap between `f0` and a Richardson-extrapolated right
    /// derivative of the CDF at 0.
    pub fn f0_consistency(&self) -> f64 {
        let h = 1e-4;
        let d1 = self.cdf(h) / h;
        let d2 = self.cdf(2.0 * h) / (2.0 * h);
        let estimate = 2.0 * d1 - d2;
        (estimate - self.f0()).abs() / self.f0().abs().max(f64::MIN_POSITIVE)
    }

    /// Absolute gap between `f0_prime` and a second difference of the CDF
    /// at 0, Richardson-extrapolated to remove the `O(h)` term.
    pub fn f0_prime_consistency(&self) -> f64 {
        let second = |h: f64| (self.cdf(2.0 * h) - 2.0 * self.cdf(h)) / (h * h);
        let h = 1e-3;
        let estimate = 2.0 * second(h) - second(2.0 * h);
        (estimate - self.f0_prime()).abs()
    }

    /// Largest `f_T(t) - f_T(0)` over a grid; positive means the maximum is not at 0.
    pub fn density_max_excess(&self) -> f64 {
        let top = self.inverse_cdf(1.0 - 1e-9).max(1.0);
        let f0 = self.f0();
        (1..=2000)
            .map(|i| self.density(top * i as f64 / 2000.0) - f0)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// `min` and `max` of `|f_T(t)/f_T(0) - 1| / t^ell` on `t` in `[1e-3, 1e-1]`.
    /// With service at criticality `f_T(t) E[S] - 1 = f_T(t)/f_T(0) - 1`, so
    /// a declared order is consistent when both bounds are finite and positive.
    pub fn contact_ratio_bounds(&self, ell: u32) -> (f64, f64) {
        let f0 = self.f0();
        let mut lo = f64::INFINITY;
        let mut hi = 0.0_f64;
        for i in 0..=200 {
            let t = 1e-3 * 100f64.powf(i as f64 / 200.0);
            let g = (self.density(t) / f0 - 1.0).abs() / t.powi(ell as i32);
            lo = lo.min(g);
            hi = hi.max(g);
        }
        (lo, hi)
    }
}

/// Lazily generated order statistics of `n` i.i.d. clocks.
#[derive(Debug, Clone)]
pub struct SortedClocks {
    n: usize,
    emitted: usize,
    hazard: f64,
    last: f64,
}

impl SortedClocks {
    pub fn new(n: usize) -> Self {
        Self {
            n,
            emitted: 0,
            hazard: 0.0,
            last: 0.0,
        }
    }

    pub fn remaining(&self) -> usize {
        self.n - self.emitted
    }

    pub fn emitted(&self) -> usize {
        self.emitted
    }

    /// Next order statistic, `None` once all `n` are out.
    pub fn next_clock<R: Rng + ?Sized>(&mut self, model: &ArrivalModel, rng: &mut R) -> Option<f64> {
        if self.emitted == self.n {
            return None;
        }
        self.hazard += exp1(rng) / (self.n - self.emitted) as f64;
        self.emitted += 1;
        let t = model.inverse_cumulative_hazard_from(self.hazard, self.last).max(self.last);
        self.last = t;
        Some(t)
    }
}

/// All `n` order statistics at once.
pub fn sample_sorted_clocks<R: Rng + ?Sized>(model: &ArrivalModel, n: usize, rng: &mut R) -> Result<Vec<f64>> {
    if n == 0 {
        return Err(Error::EmptySample);
    }
    let mut stream = SortedClocks::new(n);
    let mut out = Vec::with_capacity(n);
    while let Some(t) = stream.next_clock(model, rng) {
        out.push(t);
    }
    Ok(out)
}

/// Sampler of a user-supplied service law.
pub type ServiceSampler = Arc<dyn Fn(&mut dyn RngCore) -> f64 + Send + Sync>;

/// A service law given by a sampler and its declared first two moments.
#[derive(Clone)]
pub struct CustomService {
    pub name: String,
    pub mean: f64,
    pub second_moment: f64,
    pub sampler: ServiceSampler,
}

impl fmt::Debug for CustomService {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CustomService")
            .field("name", &self.name)
            .field("mean", &self.mean)
            .field("second_moment", &self.second_moment)
            .finish_non_exhaustive()
    }
}

/// Distribution of a service requirement `S`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ServiceModel {
    Deterministic {
        value: f64,
    },
    Exponential {
        mean: f64,
    },
    /// Programmatic only; not part of the JSON format.
    #[serde(skip)]
    Custom(CustomService),
}

impl PartialEq for ServiceModel {
    fn eq(&self, other: &Self) -> bool {
        match (self, other) {
            (ServiceModel::Deterministic { value: a }, ServiceModel::Deterministic { value: b }) => a == b,
            (ServiceModel::Exponential { mean: a }, ServiceModel::Exponential { mean: b }) => a == b,
            (ServiceModel::Custom(a), ServiceModel::Custom(b)) => {
                Arc::ptr_eq(&a.sampler, &b.sampler) && a.mean == b.mean && a.second_moment == b.second_moment
            }
            _ => false,
        }
    }
}

impl ServiceModel {
    pub fn custom<F>(name: impl Into<String>, mean: f64, second_moment: f64, sampler: F) -> Result<Self>
    where
        F: Fn(&mut dyn RngCore) -> f64 + Send + Sync + 'static,
    {
        let m = ServiceModel::Custom(CustomService {
            name: name.into(),
            mean,
            second_moment,
            sampler: Arc::new(sampler),
        });
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let (mean, m2) = (self.mean(), self.second_moment());
        if !(mean > 0.0 && mean.is_finite()) {
            return Err(Error::param("mean", format!("must be positive and finite, got {mean}")));
        }
        if !m2.is_finite() {
            return Err(Error::param("second_moment", "must be finite"));
        }
        if m2 < mean * mean * (1.0 - 1e-12) {
            return Err(Error::param(
                "second_moment",
                format!("E[S^2] = {m2} is below E[S]^2 = {}", mean * mean),
            ));
        }
        Ok(())
    }

    pub fn mean(&self) -> f64 {
        match self {
            ServiceModel::Deterministic { value } => *value,
            ServiceModel::Exponential { mean } => *mean,
            ServiceModel::Custom(c) => c.mean,
        }
    }

    pub fn second_moment(&self) -> f64 {
        match self {
            ServiceModel::Deterministic { value } => value * value,
            ServiceModel::Exponential { mean } => 2.0 * mean * mean,
            ServiceModel::Custom(c) => c.second_moment,
        }
    }

    pub fn sample<R: RngCore>(&self, rng: &mut R) -> f64 {
        match self {
            ServiceModel::Deterministic { value } => *value,
            ServiceModel::Exponential { mean } => mean * exp1(rng),
            ServiceModel::Custom(c) => (c.sampler)(rng),
        }
    }

    /// The law of `gamma S`.
    pub fn scaled(&self, gamma: f64) -> ServiceModel {
        match self {
            ServiceModel::Deterministic { value } => ServiceModel::Deterministic { value: value * gamma },
            ServiceModel::Exponential { mean } => ServiceModel::Exponential { mean: mean * gamma },
            ServiceModel::Custom(c) => {
                let inner = c.sampler.clone();
                ServiceModel::Custom(CustomService {
                    name: c.name.clone(),
                    mean: c.mean * gamma,
                    second_moment: c.second_moment * gamma * gamma,
                    sampler: Arc::new(move |rng| gamma * inner(rng)),
                })
            }
        }
    }
}

/// Multiplier `gamma` with `f_T(0) E[gamma S] = 1`.
pub fn critical_service_scale(arrival: &ArrivalModel, service: &ServiceModel) -> Result<f64> {
    let f0 = arrival.f0();
    if !(f0 > 0.0) {
        return Err(Error::CriticalityImpossible { f0 });
    }
    Ok(1.0 / (f0 * service.mean()))
}

/// `service` rescaled to criticality against `arrival`.
pub fn critically_scaled(arrival: &ArrivalModel, service: &ServiceModel) -> Result<ServiceModel> {
    let gamma = critical_service_scale(arrival, service)?;
    Ok(service.scaled(gamma))
}

/// Arrival and service laws together, as they appear in config files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QueueModel {
    pub arrival: ArrivalModel,
    pub service: ServiceModel,
}

impl QueueModel {
    pub fn validate(&self) -> Result<()> {
        self.arrival.validate()?;
        self.service.validate()
    }
}
