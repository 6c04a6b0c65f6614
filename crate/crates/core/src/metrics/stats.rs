//! Wilcoxon signed-rank test and cumulative distribution curves.

use statrs::function::erf::erfc;

use super::MetricsError;

/// Largest sample size for which the exact null distribution is used.
pub const EXACT_LIMIT: usize = 25;
const MIN_SAMPLES: usize = 5;

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonResult {
    /// Non-zero differences used.
    pub n: usize,
    pub w_plus: f64,
    pub w_minus: f64,
    /// `min(W+, W−)`.
    pub statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub exact: bool,
}

/// Non-zero differences with their midranks doubled so that ties stay
/// integral.
fn doubled_ranks(a: &[f64], b: &[f64]) -> Result<(Vec<u64>, Vec<bool>), MetricsError> {
    if a.len() != b.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} vs {} samples",
            a.len(),
            b.len()
        )));
    }
    let mut diffs: Vec<f64> = a
        .iter()
        .zip(b)
        .map(|(x, y)| x - y)
        .filter(|d| *d != 0.0)
        .collect();
    if diffs.len() < MIN_SAMPLES {
        return Err(MetricsError::TooFewSamples(diffs.len()));
    }
    diffs.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let n = diffs.len();
    let mut ranks = vec![0u64; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && diffs[j + 1].abs() == diffs[i].abs() {
            j += 1;
        }
        // Ranks i+1..=j+1 share their mean; doubled that is i+j+2.
        for r in &mut ranks[i..=j] {
            *r = (i + j + 2) as u64;
        }
        i = j + 1;
    }
    let positive = diffs.iter().map(|d| *d > 0.0).collect();
    Ok((ranks, positive))
}

fn tail_p(le: f64, ge: f64) -> f64 {
    (2.0 * le.min(ge)).min(1.0)
}

fn finish(ranks: &[u64], positive: &[bool], p_value: f64, exact: bool) -> WilcoxonResult {
    let plus: u64 = ranks
        .iter()
        .zip(positive)
        .filter(|(_, p)| **p)
        .map(|(r, _)| r)
        .sum();
    let total: u64 = ranks.iter().sum();
    let w_plus = plus as f64 / 2.0;
    let w_minus = (total - plus) as f64 / 2.0;
    WilcoxonResult {
        n: ranks.len(),
        w_plus,
        w_minus,
        statistic: w_plus.min(w_minus),
        p_value,
        exact,
    }
}

/// Two-sided paired signed-rank test of `a − b`. Zero differences are
/// dropped; the null distribution is exact up to [`EXACT_LIMIT`] samples
/// and a tie- and continuity-corrected normal approximation beyond.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, MetricsError> {
    let (ranks, positive) = doubled_ranks(a, b)?;
    let n = ranks.len();
    let plus: u64 = ranks
        .iter()
        .zip(&positive)
        .filter(|(_, p)| **p)
        .map(|(r, _)| r)
        .sum();
    if n <= EXACT_LIMIT {
        let total: u64 = ranks.iter().sum();
        // counts[s] = number of sign assignments with doubled W+ = s.
        let mut counts = vec![0u64; total as usize + 1];
        counts[0] = 1;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                counts[s + r] += counts[s];
            }
            reach += r;
        }
        let all = (1u64 << n) as f64;
        let le: u64 = counts[..=plus as usize].iter().sum();
        let ge: u64 = counts[plus as usize..].iter().sum();
        let p = tail_p(le as f64 / all, ge as f64 / all);
        return Ok(finish(&ranks, &positive, p, true));
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < n {
        let j = ranks[i..].iter().take_while(|&&r| r == ranks[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term / 48.0;
    let w_plus = plus as f64 / 2.0;
    let z = ((w_plus - mean).abs() - 0.5).max(0.0) / var.sqrt();
    let p = erfc(z / std::f64::consts::SQRT_2).min(1.0);
    Ok(finish(&ranks, &positive, p, false))
}

/// Exact p-value by enumerating all 2ⁿ sign assignments. Only practical for
/// small samples; used to cross-check the recursive count.
pub fn wilcoxon_enumerated(a: &[f64], b: &[f64]) -> Result<WilcoxonResult, MetricsError> {
    let (ranks, positive) = doubled_ranks(a, b)?;
    let n = ranks.len();
    let plus: u64 = ranks
        .iter()
        .zip(&positive)
        .filter(|(_, p)| **p)
        .map(|(r, _)| r)
        .sum();
    let (mut le, mut ge) = (0u64, 0u64);
    for mask in 0u64..(1 << n) {
        let s: u64 = (0..n)
            .filter(|k| mask >> k & 1 == 1)
            .map(|k| ranks[k])
            .sum();
        le += (s <= plus) as u64;
        ge += (s >= plus) as u64;
    }
    let all = (1u64 << n) as f64;
    Ok(finish(
        &ranks,
        &positive,
        tail_p(le as f64 / all, ge as f64 / all),
        true,
    ))
}

/// Significance marker for a p-value: one star below 0.05, then one more
/// for each further factor of ten.
pub fn significance_marker(p: f64) -> &'static str {
    if p < 0.00005 {
        "****"
    } else if p < 0.0005 {
        "***"
    } else if p < 0.005 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Fraction of `sorted` values at or below `t`.
pub fn fraction_at_or_below(sorted: &[f64], t: f64) -> f64 {
    sorted.partition_point(|&v| v <= t) as f64 / sorted.len() as f64
}

/// `(threshold, fraction ≤ threshold)` at `n_points` evenly spaced
/// thresholds over `[0, max]`.
pub fn cumulative_curve(values: &[f64], n_points: usize) -> Result<Vec<(f64, f64)>, MetricsError> {
    if values.is_empty() || n_points == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let max = sorted[sorted.len() - 1].max(0.0);
    if n_points == 1 {
        return Ok(vec![(max, fraction_at_or_below(&sorted, max))]);
    }
    Ok((0..n_points)
        .map(|k| {
            let t = if k + 1 == n_points {
                max
            } else {
                max * k as f64 / (n_points - 1) as f64
            };
            (t, fraction_at_or_below(&sorted, t))
        })
        .collect())
}
