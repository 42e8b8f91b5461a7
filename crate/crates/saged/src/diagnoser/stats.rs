//! Summary statistics applied to groups of feature measurements.
//!
//! Values reaching these functions are already filtered of missing cells.
//! A statistic below its minimum group size (or otherwise undefined) returns
//! `None`, which propagates as a missing cell in downstream tables.

use crate::error::{Result, SagedError};
use crate::table::fmt_f64;

/// A summary statistic with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub enum Statistic {
    Mean,
    Median,
    /// Mean of the values in the most populated bin; ties go to the lowest bin.
    Mode { bin_width: f64 },
    /// Sample variance (n - 1 denominator).
    Variance,
    /// Sample standard deviation (n - 1 denominator).
    StdDev,
    Skewness,
    Kurtosis,
    Range,
    Quantile { q: f64 },
    QuantileRange { lower: f64, upper: f64 },
    PercentileRange { lower: f64, upper: f64 },
}

impl Statistic {
    pub fn name(&self) -> &'static str {
        match self {
            Statistic::Mean => "mean",
            Statistic::Median => "median",
            Statistic::Mode { .. } => "mode",
            Statistic::Variance => "variance",
            Statistic::StdDev => "standard_deviation",
            Statistic::Skewness => "skewness",
            Statistic::Kurtosis => "kurtosis",
            Statistic::Range => "range",
            Statistic::Quantile { .. } => "quantile",
            Statistic::QuantileRange { .. } => "quantile_range",
            Statistic::PercentileRange { .. } => "percentile_range",
        }
    }

    pub fn params(&self) -> String {
        match self {
            Statistic::Mode { bin_width } => format!("bin_width={}", fmt_f64(*bin_width)),
            Statistic::Quantile { q } => format!("q={}", fmt_f64(*q)),
            Statistic::QuantileRange { lower, upper } => {
                format!("lower={},upper={}", fmt_f64(*lower), fmt_f64(*upper))
            }
            Statistic::PercentileRange { lower, upper } => {
                format!("lower={},upper={}", fmt_f64(*lower), fmt_f64(*upper))
            }
            _ => String::new(),
        }
    }

    /// Smallest group size for which the statistic is defined.
    pub fn min_n(&self) -> usize {
        match self {
            Statistic::Variance | Statistic::StdDev => 2,
            Statistic::Skewness => 3,
            Statistic::Kurtosis => 4,
            _ => 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(SagedError::Invalid(format!("{}: {msg}", self.name())));
        match self {
            Statistic::Mode { bin_width } if *bin_width <= 0.0 => bad("bin_width must be > 0"),
            Statistic::Quantile { q } if !(0.0 < *q && *q < 1.0) => bad("q must be in (0,1)"),
            Statistic::QuantileRange { lower, upper }
                if !(0.0 <= *lower && *lower <= *upper && *upper <= 1.0) =>
            {
                bad("need 0 <= lower <= upper <= 1")
            }
            Statistic::PercentileRange { lower, upper }
                if !(0.0 <= *lower && *lower <= *upper && *upper <= 100.0) =>
            {
                bad("need 0 <= lower <= upper <= 100")
            }
            _ => Ok(()),
        }
    }

    pub fn compute(&self, values: &[f64]) -> Option<f64> {
        if values.len() < self.min_n() {
            return None;
        }
        match self {
            Statistic::Mean => Some(mean(values)),
            Statistic::Median => Some(quantile(values, 0.5)),
            Statistic::Mode { bin_width } => binned_mode(values, *bin_width),
            Statistic::Variance => Some(sample_variance(values)),
            Statistic::StdDev => Some(sample_variance(values).sqrt()),
            Statistic::Skewness => skewness(values),
            Statistic::Kurtosis => kurtosis(values),
            Statistic::Range => Some(max(values) - min(values)),
            Statistic::Quantile { q } => Some(quantile(values, *q)),
            Statistic::QuantileRange { lower, upper } => {
                Some(quantile(values, *upper) - quantile(values, *lower))
            }
            Statistic::PercentileRange { lower, upper } => {
                Some(quantile(values, upper / 100.0) - quantile(values, lower / 100.0))
            }
        }
    }
}

pub fn mean(values: &[f64]) -> f64 {
    // The mean of a constant list is that constant; naive summation would
    // drift off it (e.g. three 0.4s) and break >=-style selection criteria.
    if values.windows(2).all(|w| w[0] == w[1]) {
        return values[0];
    }
    values.iter().sum::<f64>() / values.len() as f64
}

pub fn min(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::INFINITY, f64::min)
}

pub fn max(values: &[f64]) -> f64 {
    values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

/// Quantile with linear interpolation between order statistics.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    if lo == hi {
        sorted[lo]
    } else {
        sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
    }
}

pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (values.len() - 1) as f64
}

pub fn population_std(values: &[f64]) -> f64 {
    let m = mean(values);
    (values.iter().map(|x| (x - m).powi(2)).sum::<f64>() / values.len() as f64).sqrt()
}

fn skewness(values: &[f64]) -> Option<f64> {
    let n = values.len() as f64;
    let m = mean(values);
    let s = sample_variance(values).sqrt();
    if s == 0.0 {
        return None;
    }
    let cubed: f64 = values.iter().map(|x| ((x - m) / s).powi(3)).sum();
    Some(n / ((n - 1.0) * (n - 2.0)) * cubed)
}

fn kurtosis(values: &[f64]) -> Option<f64> {
    let n = values.len() as f64;
    let m = mean(values);
    let s = sample_variance(values).sqrt();
    if s == 0.0 {
        return None;
    }
    let fourth: f64 = values.iter().map(|x| ((x - m) / s).powi(4)).sum();
    Some(
        n * (n + 1.0) / ((n - 1.0) * (n - 2.0) * (n - 3.0)) * fourth
            - 3.0 * (n - 1.0).powi(2) / ((n - 2.0) * (n - 3.0)),
    )
}

/// Mean of the values landing in the most populated fixed-width bin.
///
/// Bins are anchored at the minimum value; ties go to the lowest bin.
fn binned_mode(values: &[f64], bin_width: f64) -> Option<f64> {
    if bin_width <= 0.0 {
        return None;
    }
    let lo = min(values);
    let mut bins: std::collections::BTreeMap<i64, (usize, f64)> = std::collections::BTreeMap::new();
    for &v in values {
        let idx = ((v - lo) / bin_width).floor() as i64;
        let entry = bins.entry(idx).or_insert((0, 0.0));
        entry.0 += 1;
        entry.1 += v;
    }
    // BTreeMap iterates bins in ascending order, so the first bin with the
    // maximal count is the lowest one.
    let best_count = bins.values().map(|(c, _)| *c).max()?;
    bins.values()
        .find(|(c, _)| *c == best_count)
        .map(|(c, sum)| sum / *c as f64)
}

/// Shared-bin histogram frequencies over `[lo, hi]`; the top edge is inclusive.
fn histogram(values: &[f64], lo: f64, hi: f64, bins: usize) -> Vec<f64> {
    let width = (hi - lo) / bins as f64;
    let mut counts = vec![0usize; bins];
    for &v in values {
        let idx = (((v - lo) / width).floor() as usize).min(bins - 1);
        counts[idx] += 1;
    }
    counts
        .into_iter()
        .map(|c| c as f64 / values.len() as f64)
        .collect()
}

/// KL divergence of `group` relative to `baseline` over shared histogram bins.
///
/// Bin edges come from the pooled min/max of both lists. Frequencies are
/// smoothed additively with epsilon = 1e-10 and renormalized before taking the
/// divergence, so empty baseline bins stay finite. A degenerate pooled range
/// (all values equal) yields 0.
pub fn kl_divergence(group: &[f64], baseline: &[f64], bins: usize) -> Result<f64> {
    if group.is_empty() || baseline.is_empty() {
        return Err(SagedError::Invalid(
            "kl_divergence: both lists must be non-empty".into(),
        ));
    }
    if bins < 2 {
        return Err(SagedError::Invalid("kl_divergence: bins must be >= 2".into()));
    }
    let lo = min(group).min(min(baseline));
    let hi = max(group).max(max(baseline));
    if lo == hi {
        log::warn!("kl_divergence: degenerate pooled range (all values equal)");
        return Ok(0.0);
    }
    const EPS: f64 = 1e-10;
    let smooth = |freqs: Vec<f64>| -> Vec<f64> {
        let total: f64 = freqs.iter().map(|f| f + EPS).sum();
        freqs.into_iter().map(|f| (f + EPS) / total).collect()
    };
    let fg = smooth(histogram(group, lo, hi, bins));
    let fb = smooth(histogram(baseline, lo, hi, bins));
    let kl: f64 = fg
        .iter()
        .zip(&fb)
        .map(|(g, b)| g * (g / b).ln())
        .sum();
    Ok(kl.max(0.0))
}

/// Fraction of rows whose value sits within `tolerance` of its baseline value.
///
/// Pairs are row-aligned; the denominator counts rows with a present group
/// value, per the definition. A pair with a missing baseline cannot satisfy
/// the tolerance and counts against precision.
pub fn precision(pairs: &[(Option<f64>, Option<f64>)], tolerance: f64) -> Option<f64> {
    let denom = pairs.iter().filter(|(v, _)| v.is_some()).count();
    if denom == 0 {
        return None;
    }
    let num = pairs
        .iter()
        .filter(|(v, b)| match (v, b) {
            (Some(v), Some(b)) => (v - b).abs() <= tolerance,
            _ => false,
        })
        .count();
    Some(num as f64 / denom as f64)
}

/// Pearson correlation over row-aligned pairs where both values are present.
pub fn correlation(pairs: &[(Option<f64>, Option<f64>)]) -> Option<f64> {
    let both: Vec<(f64, f64)> = pairs
        .iter()
        .filter_map(|(v, b)| v.zip(*b))
        .collect();
    if both.len() < 2 {
        return None;
    }
    let xs: Vec<f64> = both.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = both.iter().map(|p| p.1).collect();
    let (mx, my) = (mean(&xs), mean(&ys));
    let cov: f64 = both.iter().map(|(x, y)| (x - mx) * (y - my)).sum();
    let sx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>().sqrt();
    let sy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>().sqrt();
    if sx == 0.0 || sy == 0.0 {
        return None;
    }
    Some(cov / (sx * sy))
}

/// A statistic computed against the row-aligned baseline column.
#[derive(Debug, Clone, PartialEq)]
pub enum BaselineStat {
    KlDivergence { bins: usize },
    Precision { tolerance: f64 },
    Correlation,
}

impl BaselineStat {
    pub fn name(&self) -> &'static str {
        match self {
            BaselineStat::KlDivergence { .. } => "kl_divergence",
            BaselineStat::Precision { .. } => "precision",
            BaselineStat::Correlation => "correlation",
        }
    }

    pub fn params(&self) -> String {
        match self {
            BaselineStat::KlDivergence { bins } => format!("bins={bins}"),
            BaselineStat::Precision { tolerance } => {
                format!("tolerance={}", fmt_f64(*tolerance))
            }
            BaselineStat::Correlation => String::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            BaselineStat::KlDivergence { bins } if *bins < 2 => {
                Err(SagedError::Invalid("kl_divergence: bins must be >= 2".into()))
            }
            BaselineStat::Precision { tolerance } if *tolerance < 0.0 => {
                Err(SagedError::Invalid("precision: tolerance must be >= 0".into()))
            }
            _ => Ok(()),
        }
    }

    pub fn compute(&self, pairs: &[(Option<f64>, Option<f64>)]) -> Option<f64> {
        match self {
            BaselineStat::KlDivergence { bins } => {
                let group: Vec<f64> = pairs.iter().filter_map(|(v, _)| *v).collect();
                let baseline: Vec<f64> = pairs.iter().filter_map(|(_, b)| *b).collect();
                if group.is_empty() || baseline.is_empty() {
                    return None;
                }
                kl_divergence(&group, &baseline, *bins).ok()
            }
            BaselineStat::Precision { tolerance } => precision(pairs, *tolerance),
            BaselineStat::Correlation => correlation(pairs),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mean_of_symmetric_set() {
        assert_eq!(Statistic::Mean.compute(&[1.0, 2.0, 3.0]), Some(2.0));
    }

    #[test]
    fn skewness_of_symmetric_set_is_zero() {
        let v = Statistic::Skewness.compute(&[1.0, 2.0, 3.0]).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn binned_mode_returns_mean_of_fullest_bin() {
        // bin [1,2) holds {1.0, 1.1}; their mean is 1.05
        let v = Statistic::Mode { bin_width: 1.0 }
            .compute(&[1.0, 1.1, 2.9])
            .unwrap();
        assert_abs_diff_eq!(v, 1.05, epsilon = 1e-12);
    }

    #[test]
    fn binned_mode_tie_goes_to_lowest_bin() {
        let v = Statistic::Mode { bin_width: 1.0 }
            .compute(&[1.0, 1.2, 3.0, 3.4])
            .unwrap();
        assert_abs_diff_eq!(v, 1.1, epsilon = 1e-12);
    }

    #[test]
    fn statistics_below_minimum_n_are_undefined() {
        assert_eq!(Statistic::Variance.compute(&[1.0]), None);
        assert_eq!(Statistic::Skewness.compute(&[1.0, 2.0]), None);
        assert_eq!(Statistic::Kurtosis.compute(&[1.0, 2.0, 3.0]), None);
    }

    #[test]
    fn variance_is_sample_variance() {
        // s^2 of {1,2,3} = ((1)+(0)+(1))/2 = 1
        assert_eq!(Statistic::Variance.compute(&[1.0, 2.0, 3.0]), Some(1.0));
    }

    #[test]
    fn kl_of_identical_lists_is_zero() {
        let xs = [0.1, 0.4, 0.4, 0.9];
        let v = kl_divergence(&xs, &xs, 10).unwrap();
        assert_abs_diff_eq!(v, 0.0, epsilon = 1e-9);
    }

    #[test]
    fn kl_of_degenerate_range_is_zero() {
        let v = kl_divergence(&[2.0, 2.0], &[2.0, 2.0, 2.0], 4).unwrap();
        assert_eq!(v, 0.0);
    }

    #[test]
    fn kl_two_bin_fixture_matches_reference() {
        // Bins over pooled [0,1]: group freqs (0.75, 0.25), baseline (0.25, 0.75).
        // With eps smoothing the divergence stays 0.5*ln(3) to ~1e-10.
        let v = kl_divergence(&[0.0, 0.0, 0.0, 1.0], &[1.0, 1.0, 1.0, 0.0], 2).unwrap();
        let reference = 0.5 * 3.0_f64.ln();
        assert_abs_diff_eq!(v, reference, epsilon = 1e-8);
    }

    #[test]
    fn precision_identity_and_half() {
        let identical: Vec<_> = [1.0, 2.0].iter().map(|&v| (Some(v), Some(v))).collect();
        assert_eq!(precision(&identical, 0.0), Some(1.0));
        let pairs = [(Some(1.0), Some(1.0)), (Some(1.2), Some(1.0))];
        assert_eq!(precision(&pairs, 0.1), Some(0.5));
        let far = [(Some(1.0), Some(2.0)), (Some(5.0), Some(2.0))];
        assert_eq!(precision(&far, 0.1), Some(0.0));
    }

    #[test]
    fn precision_with_no_present_values_is_undefined() {
        assert_eq!(precision(&[(None, Some(1.0))], 0.5), None);
    }

    #[test]
    fn correlation_of_exact_line_is_one() {
        let pairs: Vec<_> = (0..5)
            .map(|i| (Some(i as f64), Some(2.0 * i as f64 + 1.0)))
            .collect();
        assert_abs_diff_eq!(correlation(&pairs).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn quantile_interpolates_linearly() {
        assert_eq!(quantile(&[1.0, 2.0, 3.0, 4.0], 0.5), 2.5);
        assert_eq!(quantile(&[1.0, 3.0], 0.25), 1.5);
    }
}
