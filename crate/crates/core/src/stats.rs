//! Estimators and goodness-of-fit diagnostics for Monte Carlo output.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};

/// Mean with standard error and a normal 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSummary {
    pub count: usize,
    pub mean: f64,
    pub std_error: f64,
    pub ci95_low: f64,
    pub ci95_high: f64,
    pub censored_count: usize,
}

impl McSummary {
    /// Whether `value` lies within `k` standard errors of the mean.
    pub fn within_se(&self, value: f64, k: f64) -> bool {
        (self.mean - value).abs() <= k * self.std_error
    }
}

/// A scalar outcome that may have been cut off by a horizon.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Observation {
    Observed(f64),
    /// Not completed by the horizon; carries the horizon.
    Censored(f64),
}

impl Observation {
    pub fn value(&self) -> Option<f64> {
        match self {
            Observation::Observed(v) => Some(*v),
            Observation::Censored(_) => None,
        }
    }

    pub fn is_censored(&self) -> bool {
        matches!(self, Observation::Censored(_))
    }

    /// The same observation with its value multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Observation {
        match self {
            Observation::Observed(v) => Observation::Observed(v * factor),
            Observation::Censored(h) => Observation::Censored(h * factor),
        }
    }
}

/// Observed values and the censored count.
pub fn split_censored(obs: &[Observation]) -> (Vec<f64>, usize) {
    let values: Vec<f64> = obs.iter().filter_map(Observation::value).collect();
    let censored = obs.len() - values.len();
    (values, censored)
}

/// [`mc_summary`] of the uncensored observations.
pub fn summarize_observations(obs: &[Observation]) -> Result<McSummary> {
    let (values, censored) = split_censored(obs);
    if censored > 0 {
        log::warn!("{censored} of {} observations censored and excluded", obs.len());
    }
    mc_summary(&values, censored)
}

/// Sample mean and unbiased sample variance (two-pass).
pub fn mean_and_variance(samples: &[f64]) -> Result<(f64, f64)> {
    if samples.len() < 2 {
        return Err(Error::param(
            "samples",
            format!("need at least 2 values, got {}", samples.len()),
        ));
    }
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    let ss: f64 = samples.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok((mean, ss / (n - 1.0)))
}

/// Summary of uncensored `samples`; `censored` is carried through for reporting.
pub fn mc_summary(samples: &[f64], censored: usize) -> Result<McSummary> {
    let (mean, var) = mean_and_variance(samples)?;
    let std_error = (var / samples.len() as f64).sqrt();
    Ok(McSummary {
        count: samples.len(),
        mean,
        std_error,
        ci95_low: mean - 1.96 * std_error,
        ci95_high: mean + 1.96 * std_error,
        censored_count: censored,
    })
}

/// Linear-interpolation quantile of already sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p.clamp(0.0, 1.0);
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn sorted_copy(samples: &[f64]) -> Vec<f64> {
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    v
}

/// Silverman's rule `0.9 min(sd, IQR/1.34) n^(-1/5)`.
pub fn silverman_bandwidth(samples: &[f64]) -> Result<f64> {
    let (_, var) = mean_and_variance(samples)?;
    let sd = var.sqrt();
    let sorted = sorted_copy(samples);
    let iqr = quantile_sorted(&sorted, 0.75) - quantile_sorted(&sorted, 0.25);
    let spread = if iqr > 0.0 { sd.min(iqr / 1.34) } else { sd };
    if !(spread > 0.0) {
        return Err(Error::param("samples", "zero spread, bandwidth undefined"));
    }
    Ok(0.9 * spread * (samples.len() as f64).powf(-0.2))
}

/// Gaussian kernel density estimate on `grid`. `None` selects Silverman's bandwidth.
pub fn gaussian_kde(samples: &[f64], bandwidth: Option<f64>, grid: &[f64]) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    let h = match bandwidth {
        Some(h) if h > 0.0 => h,
        Some(h) => return Err(Error::param("bandwidth", format!("must be positive, got {h}"))),
        None => silverman_bandwidth(samples)?,
    };
    let norm = 1.0 / (samples.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    Ok(grid
        .iter()
        .map(|&g| {
            let s: f64 = samples
                .iter()
                .map(|&x| {
                    let z = (g - x) / h;
                    (-0.5 * z * z).exp()
                })
                .sum();
            s * norm
        })
        .collect())
}

/// `sup |F_n - F|` over the sample points.
pub fn ks_distance<F: Fn(f64) -> f64>(samples: &[f64], cdf: F) -> f64 {
    if samples.is_empty() {
        return 0.0;
    }
    let sorted = sorted_copy(samples);
    let n = sorted.len() as f64;
    let mut d = 0.0_f64;
    for (i, &x) in sorted.iter().enumerate() {
        let f = cdf(x);
        d = d.max((i + 1) as f64 / n - f).max(f - i as f64 / n);
    }
    d
}

/// Kolmogorov survival function `Q(lambda) = 2 sum (-1)^(j-1) exp(-2 j^2 lambda^2)`.
pub fn kolmogorov_q(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    let mut sign = 1.0;
    for j in 1..=200 {
        let jf = j as f64;
        let term = (-2.0 * jf * jf * lambda * lambda).exp();
        sum += sign * term;
        if term < 1e-16 * sum.abs() {
            break;
        }
        sign = -sign;
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptySample);
    }
    let sa = sorted_copy(a);
    let sb = sorted_copy(b);
    let (na, nb) = (sa.len() as f64, sb.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut d = 0.0_f64;
    while i < sa.len() && j < sb.len() {
        let x = sa[i].min(sb[j]);
        while i < sa.len() && sa[i] <= x {
            i += 1;
        }
        while j < sb.len() && sb[j] <= x {
            j += 1;
        }
        d = d.max((i as f64 / na - j as f64 / nb).abs());
    }
    let ne = (na * nb / (na + nb)).sqrt();
    let p = kolmogorov_q((ne + 0.12 + 0.11 / ne) * d);
    Ok((d, p))
}

/// Pearson chi-square test of observed counts against cell probabilities.
///
/// Tail cells with expected count below `min_expected` are pooled into their
/// neighbour. Returns `(statistic, degrees_of_freedom, p_value)`.
pub fn chi_square_gof(observed: &[u64], probs: &[f64], min_expected: f64) -> Result<(f64, usize, f64)> {
    if observed.len() != probs.len() || observed.is_empty() {
        return Err(Error::param("observed", "must be nonempty and match probs in length"));
    }
    let total: u64 = observed.iter().sum();
    if total == 0 {
        return Err(Error::EmptySample);
    }
    let total = total as f64;
    let mut cells: Vec<(f64, f64)> = Vec::new();
    let mut acc = (0.0, 0.0);
    for (&o, &p) in observed.iter().zip(probs) {
        acc.0 += o as f64;
        acc.1 += p * total;
        if acc.1 >= min_expected {
            cells.push(acc);
            acc = (0.0, 0.0);
        }
    }
    if acc.1 > 0.0 || acc.0 > 0.0 {
        match cells.last_mut() {
            Some(last) => {
                last.0 += acc.0;
                last.1 += acc.1;
            }
            None => cells.push(acc),
        }
    }
    if cells.len() < 2 {
        return Err(Error::param("probs", "fewer than two cells after pooling"));
    }
    let stat: f64 = cells.iter().map(|&(o, e)| (o - e) * (o - e) / e).sum();
    let dof = cells.len() - 1;
    let p = chi_square_sf(stat, dof as f64)?;
    Ok((stat, dof, p))
}

/// Upper tail of the chi-square law.
pub fn chi_square_sf(x: f64, dof: f64) -> Result<f64> {
    let dist = ChiSquared::new(dof).map_err(|e| Error::param("dof", e.to_string()))?;
    Ok(dist.sf(x))
}

/// `|estimate - exact| / |exact|`.
pub fn relative_error(estimate: f64, exact: f64) -> Result<f64> {
    if exact == 0.0 {
        return Err(Error::param("exact", "relative error undefined for exact = 0"));
    }
    Ok((estimate - exact).abs() / exact.abs())
}

/// `0.5 sum |p_i - q_i|`; the shorter vector is padded with zeros.
pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    let len = p.len().max(q.len());
    0.5 * (0..len)
        .map(|i| (p.get(i).copied().unwrap_or(0.0) - q.get(i).copied().unwrap_or(0.0)).abs())
        .sum::<f64>()
}

/// Normalized histogram: density per bin over `[lo, hi]` with `bins` equal
/// cells. Samples outside the range count toward the total but no cell.
pub fn histogram_density(samples: &[f64], lo: f64, hi: f64, bins: usize) -> Result<Vec<f64>> {
    if samples.is_empty() {
        return Err(Error::EmptySample);
    }
    if !(hi > lo) || bins == 0 {
        return Err(Error::param("bins", "need hi > lo and at least one bin"));
    }
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0u64; bins];
    for &x in samples {
        if x >= lo && x < hi {
            let k = (((x - lo) / width) as usize).min(bins - 1);
            counts[k] += 1;
        }
    }
    let norm = 1.0 / (samples.len() as f64 * width);
    Ok(counts.into_iter().map(|c| c as f64 * norm).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{stream_from_seed, PolarNormal};
    use statrs::distribution::Normal;

    #[test]
    fn summary_examples() {
        let s = mc_summary(&[1.0, 1.0, 1.0, 1.0], 0).unwrap();
        assert_eq!((s.mean, s.std_error), (1.0, 0.0));
        let s = mc_summary(&[0.0, 2.0], 3).unwrap();
        assert_eq!(s.mean, 1.0);
        assert!((s.std_error - 1.0).abs() < 1e-15);
        assert_eq!(s.censored_count, 3);
        assert!((s.ci95_high - s.mean - 1.96).abs() < 1e-15);
        assert!(mc_summary(&[1.0], 0).is_err());
    }

    #[test]
    fn summary_of_normals() {
        let mut rng = stream_from_seed(11);
        let mut g = PolarNormal::new();
        let xs: Vec<f64> = (0..10_000).map(|_| g.sample(&mut rng)).collect();
        let s = mc_summary(&xs, 0).unwrap();
        assert!(s.mean.abs() < 0.05);
        assert!((s.std_error - 0.01).abs() < 1e-3);
    }

    #[test]
    fn summary_is_permutation_invariant_and_scale_equivariant() {
        let xs = [0.3, 1.7, -2.0, 4.5, 0.0, 3.3];
        let mut ys = xs;
        ys.reverse();
        let a = mc_summary(&xs, 0).unwrap();
        let b = mc_summary(&ys, 0).unwrap();
        assert!((a.mean - b.mean).abs() < 1e-15 && (a.std_error - b.std_error).abs() < 1e-15);
        let zs: Vec<f64> = xs.iter().map(|x| 3.0 * x).collect();
        let c = mc_summary(&zs, 0).unwrap();
        assert!((c.mean - 3.0 * a.mean).abs() < 1e-14);
        assert!((c.std_error - 3.0 * a.std_error).abs() < 1e-14);
    }

    #[test]
    fn kde_single_point_and_mass() {
        let v = gaussian_kde(&[0.0], Some(1.0), &[0.0]).unwrap();
        assert!((v[0] - 1.0 / (2.0 * std::f64::consts::PI).sqrt()).abs() < 1e-15);
        let samples = [0.0, 0.5, 1.5, 3.0, -1.0];
        let grid: Vec<f64> = (0..=2000).map(|i| -10.0 + i as f64 * 0.01).collect();
        let vals = gaussian_kde(&samples, None, &grid).unwrap();
        assert!(vals.iter().all(|&v| v >= 0.0));
        let mass: f64 = vals.iter().sum::<f64>() * 0.01;
        assert!((mass - 1.0).abs() < 1e-3);
        assert!(gaussian_kde(&[], Some(1.0), &grid).is_err());
        assert!(gaussian_kde(&samples, Some(0.0), &grid).is_err());
    }

    #[test]
    fn ks_examples() {
        let normal = Normal::new(0.0, 1.0).unwrap();
        let mut rng = stream_from_seed(5);
        let mut g = PolarNormal::new();
        let xs: Vec<f64> = (0..10_000).map(|_| g.sample(&mut rng)).collect();
        assert!(ks_distance(&xs, |x| normal.cdf(x)) < 0.02);
        assert!((ks_distance(&[0.0; 10], |x| normal.cdf(x)) - 0.5).abs() < 1e-15);
        let shifted: Vec<f64> = xs.iter().map(|x| x + 0.5).collect();
        // sup |Phi(x) - Phi(x - 0.5)| = 2 Phi(0.25) - 1 = 0.197
        assert!(ks_distance(&shifted, |x| normal.cdf(x)) > 0.1);
    }

    #[test]
    fn two_sample_ks() {
        let mut rng = stream_from_seed(9);
        let mut g = PolarNormal::new();
        let a: Vec<f64> = (0..2000).map(|_| g.sample(&mut rng)).collect();
        let b: Vec<f64> = (0..2000).map(|_| g.sample(&mut rng)).collect();
        let (_, p) = ks_two_sample(&a, &b).unwrap();
        assert!(p > 0.01);
        let c: Vec<f64> = b.iter().map(|x| x + 0.3).collect();
        let (_, p) = ks_two_sample(&a, &c).unwrap();
        assert!(p < 1e-6);
        // Q(1.36) is the 5% critical value.
        assert!((kolmogorov_q(1.358) - 0.05).abs() < 1e-3);
    }

    #[test]
    fn chi_square() {
        // Fair die, exact counts: statistic 0, p = 1.
        let (s, dof, p) = chi_square_gof(&[10, 10, 10, 10, 10, 10], &[1.0 / 6.0; 6], 5.0).unwrap();
        assert!(s.abs() < 1e-12 && dof == 5 && (p - 1.0).abs() < 1e-12);
        // scipy.stats.chi2.sf(3.84145882, 1) = 0.05
        assert!((chi_square_sf(3.841_458_820_694_124, 1.0).unwrap() - 0.05).abs() < 1e-9);
        // Pooling: last cell expected count 0.5 merges into the previous one.
        let (_, dof, _) = chi_square_gof(&[50, 45, 5, 0], &[0.5, 0.45, 0.045, 0.005], 5.0).unwrap();
        assert_eq!(dof, 2);
    }

    #[test]
    fn relative_error_examples() {
        assert!((relative_error(2.0306, 2.0038).unwrap() - 0.0134).abs() < 1e-4);
        assert_eq!(relative_error(1.5, 1.5).unwrap(), 0.0);
        assert!((relative_error(1.7725, 1.7267).unwrap() - 0.0265).abs() < 1e-4);
        assert!(relative_error(1.0, 0.0).is_err());
    }

    #[test]
    fn censored_observations_are_excluded() {
        let obs = [
            Observation::Observed(1.0),
            Observation::Censored(9.0),
            Observation::Observed(3.0),
        ];
        let s = summarize_observations(&obs).unwrap();
        assert_eq!((s.count, s.mean, s.censored_count), (2, 2.0, 1));
        assert_eq!(obs[1].scaled(2.0), Observation::Censored(18.0));
    }

    #[test]
    fn total_variation_and_histogram() {
        assert_eq!(total_variation(&[0.5, 0.5], &[0.5, 0.5]), 0.0);
        assert!((total_variation(&[1.0], &[0.0, 1.0]) - 1.0).abs() < 1e-15);
        let h = histogram_density(&[0.1, 0.2, 0.6, 5.0], 0.0, 1.0, 2).unwrap();
        assert_eq!(h, vec![1.0, 0.5]);
    }
}
