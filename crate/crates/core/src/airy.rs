//! Real-argument Airy functions Ai, Bi and their first derivatives.
//!
//! Two branches:
//!
//! * Maclaurin series `Ai = c1 f - c2 g`, `Bi = sqrt(3) (c1 f + c2 g)` with the
//!   auxiliary series `f`, `g` summed in double-double arithmetic. For
//!   positive arguments `Ai` is a difference of two numbers of size `Bi`, so
//!   plain `f64` summation loses about `2 zeta / ln 10` digits.
//! * Asymptotic expansions in `zeta = (2/3)|x|^(3/2)`, truncated at the
//!   smallest term. Their error is roughly `exp(-2 zeta)`.
//!
//! [`select_branch_point`] scans outward for the first argument where the two
//! branches agree to [`OVERLAP_TOLERANCE`]; that happens near `|x| = 5.75` on
//! both sides. The default switch points sit further out, at 7.25, where the
//! branches agree to about 5e-13, so the asymptotic branch never limits the
//! Wronskian check on `[-8, 8]`.

use std::f64::consts::PI;
use std::ops::{Add, Mul, Neg, Sub};
use std::sync::OnceLock;

use crate::error::{Error, Result};

/// Largest positive argument; `Bi` overflows a little beyond.
pub const OVERFLOW_LIMIT: f64 = 100.0;

/// Agreement required between the series and asymptotic branches.
pub const OVERLAP_TOLERANCE: f64 = 1e-9;

/// Default switch point on the positive axis.
pub const SERIES_LIMIT_POSITIVE: f64 = 7.25;

/// Default switch point on the negative axis (magnitude).
pub const SERIES_LIMIT_NEGATIVE: f64 = 7.25;

const MAX_SERIES_TERMS: usize = 200;
const SERIES_RTOL: f64 = 1e-32;

// Ai(0) and -Ai'(0) as unevaluated double-double sums.
const C1: Dd = Dd {
    hi: 0.355_028_053_887_817_2,
    lo: 2.052_336_324_362_12e-17,
};
const C2: Dd = Dd {
    hi: 0.258_819_403_792_806_8,
    lo: -2.522_243_111_610_832e-17,
};
const SQRT3: Dd = Dd {
    hi: 1.732_050_807_568_877_2,
    lo: 1.003_508_422_180_690_3e-16,
};

/// Ai, Bi, Ai', Bi' at one argument.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AiryPair {
    pub ai: f64,
    pub bi: f64,
    pub ai_prime: f64,
    pub bi_prime: f64,
}

impl AiryPair {
    /// `Ai Bi' - Ai' Bi`, identically `1/pi`.
    pub fn wronskian(&self) -> f64 {
        self.ai * self.bi_prime - self.ai_prime * self.bi
    }
}

/// Evaluator with explicit branch points.
///
/// [`airy`] uses the defaults; other values exist for fault injection and
/// for the branch-selection scan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AiryEvaluator {
    pub series_limit_positive: f64,
    pub series_limit_negative: f64,
}

impl Default for AiryEvaluator {
    fn default() -> Self {
        Self {
            series_limit_positive: SERIES_LIMIT_POSITIVE,
            series_limit_negative: SERIES_LIMIT_NEGATIVE,
        }
    }
}

impl AiryEvaluator {
    pub fn with_branch_point(limit: f64) -> Self {
        Self {
            series_limit_positive: limit,
            series_limit_negative: limit,
        }
    }

    pub fn eval(&self, x: f64) -> Result<AiryPair> {
        if !(x <= OVERFLOW_LIMIT) {
            return Err(Error::AiryDomain {
                x,
                limit: OVERFLOW_LIMIT,
            });
        }
        Ok(self.eval_unchecked(x))
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: f64) -> AiryPair {
        let use_series = if x >= 0.0 {
            x <= self.series_limit_positive
        } else {
            -x <= self.series_limit_negative
        };
        if use_series {
            airy_series(x)
        } else {
            airy_asymptotic(x)
        }
    }
}

/// Ai, Bi, Ai', Bi' at `x`.
///
/// Arguments above [`OVERFLOW_LIMIT`] are rejected because `Bi` overflows
/// there. Large negative arguments are fine: the functions oscillate with
/// decaying amplitude and the asymptotic branch handles them.
pub fn airy(x: f64) -> Result<AiryPair> {
    AiryEvaluator::default().eval(x)
}

#[inline]
pub(crate) fn airy_unchecked(x: f64) -> AiryPair {
    AiryEvaluator::default().eval_unchecked(x)
}

/// Maclaurin branch, valid for any argument but only accurate for moderate `|x|`.
pub fn airy_series(x: f64) -> AiryPair {
    let xd = Dd::from(x);
    let x3 = xd * xd * xd;

    // f = sum t_k, t_k = t_{k-1} x^3 / ((3k-1) 3k)
    // f' = sum fp_k, fp_1 = x^2/2, fp_k = fp_{k-1} x^3 / ((3k-3)(3k-1))
    // g = sum s_k, s_0 = x, s_k = s_{k-1} x^3 / (3k (3k+1))
    // g' = sum gp_k, gp_0 = 1, gp_k = gp_{k-1} x^3 / ((3k-2) 3k)
    let mut t = Dd::from(1.0);
    let mut f = t;
    let mut fp_term = xd * xd * 0.5;
    let mut fp = fp_term;
    let mut s = xd;
    let mut g = s;
    let mut gp_term = Dd::from(1.0);
    let mut gp = gp_term;

    for k in 1..MAX_SERIES_TERMS {
        let kf = k as f64;
        t = (t * x3).div_f64((3.0 * kf - 1.0) * (3.0 * kf));
        s = (s * x3).div_f64((3.0 * kf) * (3.0 * kf + 1.0));
        gp_term = (gp_term * x3).div_f64((3.0 * kf - 2.0) * (3.0 * kf));
        f = f + t;
        g = g + s;
        gp = gp + gp_term;
        if k >= 2 {
            fp_term = (fp_term * x3).div_f64((3.0 * kf - 3.0) * (3.0 * kf - 1.0));
            fp = fp + fp_term;
        }
        let small = |term: Dd, sum: Dd| term.hi.abs() <= SERIES_RTOL * sum.hi.abs();
        if small(t, f) && small(s, g) && small(gp_term, gp) && (k < 2 || small(fp_term, fp)) {
            break;
        }
    }

    let cf = C1 * f;
    let cg = C2 * g;
    let cfp = C1 * fp;
    let cgp = C2 * gp;
    AiryPair {
        ai: (cf - cg).to_f64(),
        bi: (SQRT3 * (cf + cg)).to_f64(),
        ai_prime: (cfp - cgp).to_f64(),
        bi_prime: (SQRT3 * (cfp + cgp)).to_f64(),
    }
}

/// Coefficients `u_k` of the large-argument expansions.
fn u_coefficients() -> &'static [f64] {
    static U: OnceLock<Vec<f64>> = OnceLock::new();
    U.get_or_init(|| {
        let mut u = Vec::with_capacity(64);
        u.push(1.0);
        for k in 1..64 {
            let kf = k as f64;
            let prev = u[k - 1];
            u.push(
                prev * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0)
                    / ((2.0 * kf - 1.0) * 216.0 * kf),
            );
        }
        u
    })
}

/// `v_k = -(6k+1)/(6k-1) u_k`, `v_0 = 1`.
#[inline]
fn v_coefficient(u: &[f64], k: usize) -> f64 {
    if k == 0 {
        1.0
    } else {
        let kf = k as f64;
        -(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * u[k]
    }
}

/// Sum `sum_k sign^k c_k / zeta^k`, truncated before the terms start growing.
fn truncated_sum(coef: impl Fn(usize) -> f64, zeta: f64, alternate: bool, stride: usize, offset: usize) -> f64 {
    let n = u_coefficients().len();
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut j = 0usize;
    loop {
        let k = offset + stride * j;
        if k >= n {
            break;
        }
        let mut term = coef(k) / zeta.powi(k as i32);
        if alternate && j % 2 == 1 {
            term = -term;
        }
        let mag = term.abs();
        if mag > prev {
            break;
        }
        sum += term;
        if mag <= 1e-17 * sum.abs() {
            break;
        }
        prev = mag;
        j += 1;
    }
    sum
}

/// Asymptotic branch, for `|x|` large. Undefined at zero.
pub fn airy_asymptotic(x: f64) -> AiryPair {
    let u = u_coefficients();
    let z = x.abs();
    let zeta = 2.0 / 3.0 * z * z.sqrt();
    let z14 = z.sqrt().sqrt();
    let sqrt_pi = PI.sqrt();

    if x > 0.0 {
        let su = truncated_sum(|k| u[k], zeta, true, 1, 0);
        let sv = truncated_sum(|k| v_coefficient(u, k), zeta, true, 1, 0);
        let bu = truncated_sum(|k| u[k], zeta, false, 1, 0);
        let bv = truncated_sum(|k| v_coefficient(u, k), zeta, false, 1, 0);
        let decay = (-zeta).exp();
        let growth = zeta.exp();
        AiryPair {
            ai: decay / (2.0 * sqrt_pi * z14) * su,
            ai_prime: -z14 * decay / (2.0 * sqrt_pi) * sv,
            bi: growth / (sqrt_pi * z14) * bu,
            bi_prime: z14 * growth / sqrt_pi * bv,
        }
    } else {
        // Even and odd parts, each alternating in sign.
        let p = truncated_sum(|k| u[k], zeta, true, 2, 0);
        let q = truncated_sum(|k| u[k], zeta, true, 2, 1) ;
        let r = truncated_sum(|k| v_coefficient(u, k), zeta, true, 2, 0);
        let s = truncated_sum(|k| v_coefficient(u, k), zeta, true, 2, 1);
        let phase = zeta - PI / 4.0;
        let (sin, cos) = phase.sin_cos();
        AiryPair {
            ai: (cos * p + sin * q) / (sqrt_pi * z14),
            bi: (-sin * p + cos * q) / (sqrt_pi * z14),
            ai_prime: z14 / sqrt_pi * (sin * r - cos * s),
            bi_prime: z14 / sqrt_pi * (cos * r + sin * s),
        }
    }
}

/// Largest relative discrepancy between the two branches at `x`.
///
/// On the negative axis the functions have zeros, so each difference is
/// scaled by the local modulus `sqrt(Ai^2 + Bi^2)` (resp. of the
/// derivatives) instead of the value itself.
pub fn branch_discrepancy(x: f64) -> f64 {
    let a = airy_series(x);
    let b = airy_asymptotic(x);
    if x > 0.0 {
        [
            (a.ai - b.ai) / a.ai,
            (a.bi - b.bi) / a.bi,
            (a.ai_prime - b.ai_prime) / a.ai_prime,
            (a.bi_prime - b.bi_prime) / a.bi_prime,
        ]
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
    } else {
        let m = a.ai.hypot(a.bi);
        let mp = a.ai_prime.hypot(a.bi_prime);
        [
            (a.ai - b.ai) / m,
            (a.bi - b.bi) / m,
            (a.ai_prime - b.ai_prime) / mp,
            (a.bi_prime - b.bi_prime) / mp,
        ]
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Largest of `|y''(x) - x y(x)|` over `y` in {Ai, Bi}, with `y''` taken as
/// the central second difference of step `h`.
pub fn ode_residual(eval: &AiryEvaluator, x: f64, h: f64) -> Result<f64> {
    let (m, c, p) = (eval.eval(x - h)?, eval.eval(x)?, eval.eval(x + h)?);
    let ai = (p.ai - 2.0 * c.ai + m.ai) / (h * h) - x * c.ai;
    let bi = (p.bi - 2.0 * c.bi + m.bi) / (h * h) - x * c.bi;
    Ok(ai.abs().max(bi.abs()))
}

/// Scan `|x|` from `start` outward in steps of `step` (on the side given by
/// `sign`) and return the first magnitude from which the branches agree to
/// `tol` for the next `hold` units of argument.
pub fn select_branch_point(sign: f64, start: f64, stop: f64, step: f64, hold: f64, tol: f64) -> Option<f64> {
    let mut x = start;
    while x <= stop {
        let mut ok = true;
        let mut y = x;
        while y <= x + hold {
            if branch_discrepancy(sign * y) > tol {
                ok = false;
                break;
            }
            y += step;
        }
        if ok {
            return Some(x);
        }
        x += step;
    }
    None
}

/// Unevaluated sum `hi + lo` with `|lo| <= ulp(hi)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Dd {
    hi: f64,
    lo: f64,
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

#[inline]
fn quick_two_sum(a: f64, b: f64) -> Dd {
    let s = a + b;
    Dd {
        hi: s,
        lo: b - (s - a),
    }
}

impl Dd {
    #[inline]
    fn to_f64(self) -> f64 {
        self.hi + self.lo
    }

    #[inline]
    fn div_f64(self, b: f64) -> Dd {
        let q1 = self.hi / b;
        let p = q1 * b;
        let e = q1.mul_add(b, -p);
        let r = (self.hi - p - e + self.lo) / b;
        quick_two_sum(q1, r)
    }
}

impl From<f64> for Dd {
    fn from(hi: f64) -> Self {
        Dd { hi, lo: 0.0 }
    }
}

impl Add for Dd {
    type Output = Dd;
    #[inline]
    fn add(self, o: Dd) -> Dd {
        let (s, e) = two_sum(self.hi, o.hi);
        quick_two_sum(s, e + self.lo + o.lo)
    }
}

impl Neg for Dd {
    type Output = Dd;
    fn neg(self) -> Dd {
        Dd {
            hi: -self.hi,
            lo: -self.lo,
        }
    }
}

impl Sub for Dd {
    type Output = Dd;
    #[inline]
    fn sub(self, o: Dd) -> Dd {
        self + (-o)
    }
}

impl Mul for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, o: Dd) -> Dd {
        let p = self.hi * o.hi;
        let e = self.hi.mul_add(o.hi, -p);
        quick_two_sum(p, e + self.hi * o.lo + self.lo * o.hi)
    }
}

impl Mul<f64> for Dd {
    type Output = Dd;
    #[inline]
    fn mul(self, o: f64) -> Dd {
        self * Dd::from(o)
    }
}
