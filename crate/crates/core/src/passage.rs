//! First passage of `W_q(t) = q + beta t - t^2/2 + sigma B(t)` through zero.
//!
//! The density is the Airy-integral representation
//!
//! ```text
//! f_q(t) = exp(-((t - beta)^3 + beta^3) / (6 sigma^2) - beta x)
//!          * int exp(t u) [B(u) A(u - x) - A(u) B(u - x)] / (pi (A(u)^2 + B(u)^2)) du
//! ```
//!
//! with `c = (2 sigma^2)^(1/3)`, `x = q / sigma^2`, `A(u) = Ai(c u)` and
//! `B(u) = Bi(c u)`. The `u`-integral runs over `[u_lo, u_hi]`, both ends
//! chosen per `t` from envelopes: on the left `exp(t u)` is the only decay
//! (the Airy ratio stays bounded), on the right the ratio decays like
//! `exp(-zeta(c u) - zeta(c (u - x)))`.
//!
//! General parabolic coefficients reduce to the standard form through
//! `T(q, a, k, sigma) = k^(-2/3) T(q k^(1/3), a k^(-1/3), sigma)` in law.

use std::f64::consts::PI;

use crate::airy::{airy_unchecked, OVERFLOW_LIMIT};
use crate::error::{Error, Result};
use crate::quadrature::{integrate, QuadEstimate, Tolerance};

/// `ln(1e15)`: envelope drop at which the `u`-range is truncated.
const U_CUTOFF_LOG: f64 = 34.54;

/// Per-panel tolerance relative to the peak of the integrand envelope.
const PANEL_RTOL: f64 = 1e-11;

/// Density below this is treated as zero when bracketing the time support.
const SUPPORT_FLOOR: f64 = 1e-13;

/// How the negative half of the `u`-axis is cut into panels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PanelLayout {
    /// Width bounded by half the period of the phase difference
    /// `theta(c|u|) - theta(c(|u| + x))`, which is what the integrand
    /// actually oscillates with.
    #[default]
    BeatPhase,
    /// Width bounded by half the period of a single Airy function,
    /// `pi / sqrt(c |u|)`. Much slower; kept as a cross-check.
    AiryPeriod,
}

/// Standard-form parameters `(q, beta, sigma)` with their derived constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StdFptParams {
    q: f64,
    beta: f64,
    sigma: f64,
    c_const: f64,
    x: f64,
}

/// A value plus quadrature diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FptValue {
    pub value: f64,
    pub abs_error: f64,
    pub evaluations: usize,
}

impl StdFptParams {
    pub fn new(q: f64, beta: f64, sigma: f64) -> Result<Self> {
        if !(q > 0.0 && q.is_finite()) {
            return Err(Error::param("q", format!("must be positive, got {q}")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::param("sigma", format!("must be positive, got {sigma}")));
        }
        if !beta.is_finite() {
            return Err(Error::param("beta", "must be finite"));
        }
        Ok(Self {
            q,
            beta,
            sigma,
            c_const: (2.0 * sigma * sigma).cbrt(),
            x: q / (sigma * sigma),
        })
    }

    pub fn q(&self) -> f64 {
        self.q
    }
    pub fn beta(&self) -> f64 {
        self.beta
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }
    /// `(2 sigma^2)^(1/3)`.
    pub fn c_const(&self) -> f64 {
        self.c_const
    }
    /// `q / sigma^2`.
    pub fn x(&self) -> f64 {
        self.x
    }

    fn log_prefactor(&self, t: f64) -> f64 {
        let s2 = self.sigma * self.sigma;
        let d = t - self.beta;
        -(d * d * d + self.beta.powi(3)) / (6.0 * s2) - self.beta * self.x
    }

    /// Density at `t > 0`.
    pub fn density(&self, t: f64) -> Result<f64> {
        Ok(self.density_detailed(t, PanelLayout::default())?.value.max(0.0))
    }

    /// Raw (unclamped) density with diagnostics.
    pub fn density_detailed(&self, t: f64, layout: PanelLayout) -> Result<FptValue> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::param("t", format!("must be positive, got {t}")));
        }
        let c = self.c_const;
        let x = self.x;
        let log_pref = self.log_prefactor(t);

        // Right envelope: t u - zeta(c u) - zeta(c (u - x)^+), maximum over u >= 0.
        let zeta = |z: f64| if z > 0.0 { 2.0 / 3.0 * z * z.sqrt() } else { 0.0 };
        let envelope = |u: f64| t * u - zeta(c * u) - zeta(c * (u - x));
        let mut peak = 0.0_f64;
        let mut u = 0.0;
        let step = 0.25;
        let u_hi = loop {
            u += step;
            let e = envelope(u);
            peak = peak.max(e);
            if c * u > OVERFLOW_LIMIT {
                return Err(Error::AiryDomain {
                    x: c * u,
                    limit: OVERFLOW_LIMIT,
                });
            }
            if u > x && e < peak - U_CUTOFF_LOG {
                break u;
            }
        };
        let scale_log = peak + log_pref;
        let abs_tol = PANEL_RTOL * scale_log.exp();

        // Left side: |integrand| <= exp(t u + log_pref); cut when it falls
        // U_CUTOFF_LOG below the right-hand peak.
        let u_lo = ((scale_log - U_CUTOFF_LOG - log_pref) / t).min(0.0);

        let integrand = |u: f64| {
            let a = airy_unchecked(c * u);
            let b = airy_unchecked(c * (u - x));
            let h = a.ai.hypot(a.bi);
            let ratio = ((a.bi / h) * b.ai - (a.ai / h) * b.bi) / (PI * h);
            (t * u + log_pref).exp() * ratio
        };

        let mut total = FptValue {
            value: 0.0,
            abs_error: 0.0,
            evaluations: 0,
        };
        let mut add = |est: QuadEstimate| {
            total.value += est.value;
            total.abs_error += est.abs_error;
            total.evaluations += est.evaluations;
        };
        let tol = Tolerance {
            abs: abs_tol,
            rel: 0.0,
            max_segments: 64,
        };

        // Positive side, fixed panels.
        let n_pos = (u_hi / 0.5).ceil().max(1.0) as usize;
        let w_pos = u_hi / n_pos as f64;
        for i in 0..n_pos {
            add(integrate(integrand, i as f64 * w_pos, (i + 1) as f64 * w_pos, tol)?);
        }

        // Negative side, panels from 0 down to u_lo.
        let c15 = c * c.sqrt();
        let max_width = (2.0 / t).clamp(0.05, 8.0);
        let mut right = 0.0_f64;
        while right > u_lo {
            let m = -right;
            let half_period = match layout {
                PanelLayout::BeatPhase => PI / (c15 * ((m + x).sqrt() - m.sqrt())),
                PanelLayout::AiryPeriod => 0.5 * PI / (c * m.max(1e-12)).sqrt(),
            };
            let width = half_period.clamp(0.05, max_width);
            let left = (right - width).max(u_lo);
            add(integrate(integrand, left, right, tol)?);
            right = left;
        }

        Ok(total)
    }

    /// Time interval outside which the density is below [`SUPPORT_FLOOR`].
    pub fn support(&self) -> Result<(f64, f64)> {
        let s2 = self.sigma * self.sigma;
        // Small times: Gaussian bound with the worst-case linear drift.
        let neg_drift = (-self.beta).max(0.0);
        let mut t_lo = self.q * self.q / (80.0 * s2);
        for _ in 0..50 {
            let level = self.q - neg_drift * t_lo - 0.5 * t_lo * t_lo;
            if level <= 0.0 {
                t_lo *= 0.5;
                continue;
            }
            let next = level * level / (80.0 * s2);
            if (next - t_lo).abs() <= 1e-12 * t_lo {
                break;
            }
            t_lo = next;
        }
        let t_lo = t_lo.max(1e-8);

        // Large times: start where the tail exponent F3/(6 sigma^2) passes 40,
        // then walk out until the density itself is negligible.
        let mut t_hi = self.beta.max(0.0) + 0.5;
        loop {
            let d = f3_prime(t_hi, self.q, self.beta);
            if d > 0.0 && f3(t_hi, self.q, self.beta) / (6.0 * s2) >= 40.0 {
                break;
            }
            t_hi += 0.1;
        }
        let mut guard = 0;
        while self.density(t_hi)? > SUPPORT_FLOOR && guard < 200 {
            t_hi += 0.5;
            guard += 1;
        }
        Ok((t_lo, t_hi))
    }

    fn integrate_moment(&self, power: i32, from: Option<f64>) -> Result<FptValue> {
        let (t_lo, t_hi) = self.support()?;
        let a = from.map_or(t_lo, |x| x.max(t_lo));
        let b = match from {
            Some(x) if x >= t_hi => {
                // Tail beyond the bracket: extend until the density dies off.
                let mut b = x + 0.5;
                let f_at = self.density(x)?;
                while self.density(b)? > 1e-14 * f_at && b < x + 50.0 {
                    b += 0.5;
                }
                b
            }
            _ => t_hi,
        };
        let mut failure = None;
        let est = integrate(
            |t| match self.density(t) {
                Ok(f) => f * t.powi(power),
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            },
            a,
            b,
            Tolerance {
                abs: 1e-10,
                rel: 1e-9,
                max_segments: 200,
            },
        );
        if let Some(e) = failure {
            return Err(e);
        }
        let est = est?;
        Ok(FptValue {
            value: est.value,
            abs_error: est.abs_error,
            evaluations: est.evaluations,
        })
    }

    /// Total probability mass of the density.
    pub fn mass(&self) -> Result<f64> {
        Ok(self.integrate_moment(0, None)?.value)
    }

    /// Mean hitting time.
    pub fn mean(&self) -> Result<f64> {
        Ok(self.mean_detailed()?.value)
    }

    pub fn mean_detailed(&self) -> Result<FptValue> {
        self.integrate_moment(1, None)
    }

    /// `P(T > x)` by quadrature of the density.
    pub fn survival(&self, x: f64) -> Result<f64> {
        if x <= 0.0 {
            return Ok(1.0);
        }
        let (t_lo, t_hi) = self.support()?;
        if x < t_hi {
            let head = if x > t_lo {
                integrate(|t| self.density(t).unwrap_or(f64::NAN), t_lo, x, Tolerance::new(1e-12, 1e-10))?.value
            } else {
                0.0
            };
            let tail = self.integrate_moment(0, Some(x))?.value;
            // Use whichever side is better conditioned.
            if tail < 0.5 {
                Ok(tail)
            } else {
                Ok(1.0 - head)
            }
        } else {
            Ok(self.integrate_moment(0, Some(x))?.value)
        }
    }
}

/// Density of the standard-form hitting time.
pub fn fpt_density(p: &StdFptParams, t: f64) -> Result<f64> {
    p.density(t)
}

/// Mean of the standard-form hitting time.
pub fn fpt_mean(p: &StdFptParams) -> Result<f64> {
    p.mean()
}

/// Parameters of `q + a t - (k/2) t^2 + sigma B(t)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralFptParams {
    pub q: f64,
    pub a: f64,
    pub k: f64,
    pub sigma: f64,
}

impl GeneralFptParams {
    /// Standard-form parameters and the time multiplier `k^(-2/3)`.
    pub fn reduce(&self) -> Result<(StdFptParams, f64)> {
        if !(self.k > 0.0 && self.k.is_finite()) {
            return Err(Error::param(
                "k",
                format!("parabolic magnitude must be positive (f'_T(0) < 0), got {}", self.k),
            ));
        }
        let k13 = self.k.cbrt();
        let std = StdFptParams::new(self.q * k13, self.a / k13, self.sigma)?;
        Ok((std, 1.0 / (k13 * k13)))
    }
}

/// Hitting-time law for general parabolic coefficients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneralFpt {
    pub standard: StdFptParams,
    /// `k^(-2/3)`.
    pub time_scale: f64,
    pub mean: f64,
}

impl GeneralFpt {
    pub fn density(&self, t: f64) -> Result<f64> {
        Ok(self.standard.density(t / self.time_scale)? / self.time_scale)
    }
}

pub fn fpt_general(p: &GeneralFptParams) -> Result<GeneralFpt> {
    let (standard, time_scale) = p.reduce()?;
    let mean = time_scale * standard.mean()?;
    Ok(GeneralFpt {
        standard,
        time_scale,
        mean,
    })
}

/// `F3(x) = (x - beta)^3 - x^3/4 - 3 q x + beta^3 + 6 beta q`.
pub fn f3(x: f64, q: f64, beta: f64) -> f64 {
    (x - beta).powi(3) - 0.25 * x.powi(3) - 3.0 * q * x + beta.powi(3) + 6.0 * beta * q
}

/// `F3'(x) = 3 (x - beta)^2 - (3/4) x^2 - 3 q`.
pub fn f3_prime(x: f64, q: f64, beta: f64) -> f64 {
    3.0 * (x - beta).powi(2) - 0.75 * x * x - 3.0 * q
}

/// Large-`x` approximation of `P(T > x)`:
/// `3 sigma sqrt(x) / sqrt(2 pi) * exp(-F3(x) / (6 sigma^2)) / F3'(x)`,
/// relative error `O(1/x)`.
pub fn tail_probability(q: f64, beta: f64, sigma: f64, x: f64) -> Result<f64> {
    let d = f3_prime(x, q, beta);
    if !(d > 0.0) {
        return Err(Error::OutsideAsymptoticRegime { x, derivative: d });
    }
    Ok(ln_tail_probability(q, beta, sigma, x)?.exp())
}

/// Natural log of [`tail_probability`], finite where the value itself underflows.
pub fn ln_tail_probability(q: f64, beta: f64, sigma: f64, x: f64) -> Result<f64> {
    let d = f3_prime(x, q, beta);
    if !(d > 0.0) {
        return Err(Error::OutsideAsymptoticRegime { x, derivative: d });
    }
    Ok((3.0 * sigma * x.sqrt() / ((2.0 * PI).sqrt() * d)).ln() - f3(x, q, beta) / (6.0 * sigma * sigma))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_constants() {
        let p = StdFptParams::new(2.0, 1.0, 2f64.sqrt()).unwrap();
        assert!((p.c_const() - 4f64.cbrt()).abs() < 1e-15);
        assert!((p.x() - 1.0).abs() < 1e-15);
        assert!(StdFptParams::new(0.0, 1.0, 1.0).is_err());
        assert!(StdFptParams::new(1.0, 1.0, 0.0).is_err());
    }

    #[test]
    fn f3_identities() {
        assert_eq!(f3(0.0, 1.5, 0.7), 6.0 * 0.7 * 1.5);
        for x in [0.5, 1.0, 3.0] {
            assert!((f3(x, 0.0, 0.0) - 0.75 * x * x * x).abs() < 1e-12);
        }
        for x in [1.0, 2.0, 5.0] {
            let h = 1e-4;
            let fd = (f3(x + h, 1.0, 1.0) - f3(x - h, 1.0, 1.0)) / (2.0 * h);
            assert!((fd - f3_prime(x, 1.0, 1.0)).abs() < 1e-8);
        }
    }

    #[test]
    fn tail_outside_regime_is_an_error() {
        // F3'(0) = 3 beta^2 - 3 q < 0 for q > beta^2.
        assert!(matches!(
            tail_probability(2.0, 1.0, 1.0, 0.0),
            Err(Error::OutsideAsymptoticRegime { .. })
        ));
    }

    #[test]
    fn tail_decreases_monotonically() {
        let mut prev = f64::INFINITY;
        let mut x = 8.0;
        while x <= 30.0 {
            let p = ln_tail_probability(1.0, 1.0, 1.0, x).unwrap();
            assert!(p < prev);
            assert!(tail_probability(1.0, 1.0, 1.0, x).unwrap() <= p.exp().max(0.0));
            prev = p;
            x += 0.5;
        }
    }

    #[test]
    fn density_is_nonnegative_and_finite() {
        let p = StdFptParams::new(1.0, 1.0, 1.0).unwrap();
        for t in [0.05, 0.2, 1.0, 2.5, 5.0, 8.0] {
            let f = p.density(t).unwrap();
            assert!(f.is_finite() && f >= 0.0, "t = {t}: {f}");
        }
    }

    #[test]
    fn panel_layouts_agree() {
        let p = StdFptParams::new(1.0, 1.0, 2f64.sqrt()).unwrap();
        for t in [0.3, 1.0, 3.0] {
            let a = p.density_detailed(t, PanelLayout::BeatPhase).unwrap();
            let b = p.density_detailed(t, PanelLayout::AiryPeriod).unwrap();
            assert!((a.value - b.value).abs() < 1e-9, "t = {t}: {} vs {}", a.value, b.value);
        }
    }

    // Frozen from an independent evaluation (SciPy Airy functions, nested
    // adaptive quadrature): density at a few points for (1, 1, sqrt 2).
    #[test]
    fn density_matches_independent_quadrature() {
        let p = StdFptParams::new(1.0, 1.0, 2f64.sqrt()).unwrap();
        for (t, f) in [
            (0.1, 0.4471432913941705),
            (0.5, 0.3360394151668972),
            (1.0, 0.20854730994648243),
            (2.0, 0.190541225959336),
            (4.0, 0.13859039376935472),
        ] {
            let got = p.density(t).unwrap();
            assert!((got - f).abs() < 1e-6, "t = {t}: {got} vs {f}");
        }
    }

    #[test]
    fn general_reduction_with_unit_k_is_identity() {
        let g = GeneralFptParams {
            q: 1.0,
            a: 1.0,
            k: 1.0,
            sigma: 1.0,
        };
        let (std, scale) = g.reduce().unwrap();
        assert_eq!(scale, 1.0);
        assert_eq!(std, StdFptParams::new(1.0, 1.0, 1.0).unwrap());
        let bad = GeneralFptParams { k: 0.0, ..g };
        assert!(bad.reduce().is_err());
        let neg = GeneralFptParams { k: -1.0, ..g };
        assert!(neg.reduce().is_err());
    }

    #[test]
    fn unit_parameters_have_unit_mass() {
        let p = StdFptParams::new(1.0, 1.0, 1.0).unwrap();
        assert!((p.mass().unwrap() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn table_means_at_exponential_service_variance() {
        let s = 2f64.sqrt();
        let m1 = fpt_mean(&StdFptParams::new(1.0, 1.0, s).unwrap()).unwrap();
        let m2 = fpt_mean(&StdFptParams::new(2.0, 1.0, s).unwrap()).unwrap();
        assert!((m1 - 2.0038).abs() < 1e-3, "{m1}");
        assert!((m2 - 2.8701).abs() < 1e-3, "{m2}");
        assert!(m2 > m1);
        // Independent SciPy evaluation of the same integrals.
        assert!((m1 - 2.004052678726043).abs() < 1e-6);
        assert!((m2 - 2.870701899183064).abs() < 1e-6);
    }

    #[test]
    fn relative_error_column_is_reproduced() {
        let s = 2f64.sqrt();
        let exact1: f64 = 2.0038;
        let exact2: f64 = 2.8701;
        for (table, printed) in [(2.0306_f64, 0.0133)] {
            assert!(((table - exact1) / exact1 - printed).abs() < 5e-4);
        }
        for (table, printed) in [(2.9351_f64, 0.0226)] {
            assert!(((table - exact2) / exact2 - printed).abs() < 5e-4);
        }
        // The same column computed from our own exact values.
        let m1 = fpt_mean(&StdFptParams::new(1.0, 1.0, s).unwrap()).unwrap();
        assert!(((2.0306 - m1) / m1 - 0.0133).abs() < 5e-4);
    }

    #[test]
    fn hyperexponential_reduction_mean() {
        let g = GeneralFptParams {
            q: 1.0,
            a: 1.0,
            k: 1.25,
            sigma: 2f64.sqrt(),
        };
        let r = fpt_general(&g).unwrap();
        assert!((r.mean - 1.7267).abs() < 2e-3, "{}", r.mean);
        let scale = r.time_scale;
        let direct = r.standard.density(1.0 / scale).unwrap() / scale;
        assert_eq!(r.density(1.0).unwrap(), direct);
    }

    #[test]
    fn tail_log_difference_tracks_f3() {
        let l8 = ln_tail_probability(1.0, 1.0, 1.0, 8.0).unwrap();
        let l12 = ln_tail_probability(1.0, 1.0, 1.0, 12.0).unwrap();
        let dominant = -(f3(12.0, 1.0, 1.0) - f3(8.0, 1.0, 1.0)) / 6.0;
        assert!(((l12 - l8) / dominant - 1.0).abs() < 0.15);
    }

    // Calibration run (asymptotic / quadrature): x = 4: 1.41, 6: 1.10,
    // 8: 1.056, 10: 1.042, 12: 1.034. The regime is reached by x = 8.
    #[test]
    fn tail_matches_quadrature_at_ten() {
        let p = StdFptParams::new(1.0, 1.0, 1.0).unwrap();
        let quad = p.survival(10.0).unwrap();
        let ratio = tail_probability(1.0, 1.0, 1.0, 10.0).unwrap() / quad;
        assert!(ratio > 0.8 && ratio < 1.25, "{ratio}");
    }
}
