use std::cmp::Ordering;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("{0}: input is empty")]
    Empty(&'static str),
    #[error("{0}: input contains NaN")]
    NaN(&'static str),
    #[error("labels contain a single class; both inliers and anomalies are required")]
    SingleClass,
    #[error("{what}: {left} values against {right}")]
    LengthMismatch { what: &'static str, left: usize, right: usize },
}

fn check(what: &'static str, xs: &[f64]) -> Result<(), MetricError> {
    if xs.is_empty() {
        return Err(MetricError::Empty(what));
    }
    if xs.iter().any(|v| v.is_nan()) {
        return Err(MetricError::NaN(what));
    }
    Ok(())
}

/// Average (1-based) ranks with ties sharing the mean of their positions.
fn ranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].partial_cmp(&values[b]).unwrap_or(Ordering::Equal));
    let mut out = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && values[order[j]] == values[order[i]] {
            j += 1;
        }
        // positions i+1 ..= j share their mean
        let r = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            out[k] = r;
        }
        i = j;
    }
    out
}

/// Probability that an anomaly outscores an inlier, ties counting one half.
///
/// Uses the Mann-Whitney rank sum. Every quantity in the sum is a multiple
/// of 1/2 and stays exact in `f64` for any realistic sample size, so the
/// result depends only on the relative order of the scores.
pub fn roc_auc(scores_anomaly: &[f64], scores_inlier: &[f64]) -> Result<f64, MetricError> {
    check("roc_auc anomalies", scores_anomaly)?;
    check("roc_auc inliers", scores_inlier)?;
    let (na, ni) = (scores_anomaly.len(), scores_inlier.len());
    let all: Vec<f64> = scores_anomaly.iter().chain(scores_inlier).copied().collect();
    let r = ranks(&all);
    let rank_sum: f64 = r[..na].iter().sum();
    let u = rank_sum - (na * (na + 1)) as f64 / 2.0;
    Ok(u / (na as f64 * ni as f64))
}

/// 1-Wasserstein distance between the empirical distributions of `a` and `b`.
///
/// Equal sizes reduce to the mean absolute difference of sorted samples;
/// otherwise the integral of |F_a - F_b| is evaluated exactly over the merged
/// support.
pub fn emd_1d(a: &[f64], b: &[f64]) -> Result<f64, MetricError> {
    check("emd_1d first", a)?;
    check("emd_1d second", b)?;
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    if a.len() == b.len() {
        let s: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / a.len() as f64);
    }
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0, 0);
    let mut prev = a[0].min(b[0]);
    let mut total = 0.0;
    while i < a.len() || j < b.len() {
        let next = match (a.get(i), b.get(j)) {
            (Some(&x), Some(&y)) => x.min(y),
            (Some(&x), None) => x,
            (None, Some(&y)) => y,
            (None, None) => unreachable!(),
        };
        let gap = i as f64 / na - j as f64 / nb;
        total += gap.abs() * (next - prev);
        while i < a.len() && a[i] == next {
            i += 1;
        }
        while j < b.len() && b[j] == next {
            j += 1;
        }
        prev = next;
    }
    Ok(total)
}

/// Spearman rank correlation (Pearson correlation of average ranks).
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check("spearman x", x)?;
    check("spearman y", y)?;
    if x.len() != y.len() {
        return Err(MetricError::LengthMismatch {
            what: "spearman",
            left: x.len(),
            right: y.len(),
        });
    }
    let (rx, ry) = (ranks(x), ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}
