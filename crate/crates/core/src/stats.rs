//! Small sample-statistics helpers shared by the Monte Carlo harnesses.

pub fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        return f64::NAN;
    }
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Unbiased sample variance.
pub fn variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return f64::NAN;
    }
    let m = mean(xs);
    xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
}

/// Standard error of the sample mean.
pub fn stderr_of_mean(xs: &[f64]) -> f64 {
    (variance(xs) / xs.len() as f64).sqrt()
}

/// Sample covariance (1/(n-1) normalization).
pub fn covariance(xs: &[f64], ys: &[f64]) -> f64 {
    assert_eq!(xs.len(), ys.len());
    if xs.len() < 2 {
        return f64::NAN;
    }
    let mx = mean(xs);
    let my = mean(ys);
    xs.iter()
        .zip(ys)
        .map(|(x, y)| (x - mx) * (y - my))
        .sum::<f64>()
        / (xs.len() - 1) as f64
}

/// Jackknife standard error of an estimator given its leave-one-out replicates.
pub fn jackknife_stderr(replicates: &[f64]) -> f64 {
    let n = replicates.len() as f64;
    let m = mean(replicates);
    let ss: f64 = replicates.iter().map(|r| (r - m) * (r - m)).sum();
    ((n - 1.0) / n * ss).sqrt()
}

/// Jackknife stderr of a statistic computed over batches (used where
/// leave-one-out over raw samples would be too slow or too noisy).
pub fn batch_jackknife_stderr<F>(items: &[f64], n_batches: usize, stat: F) -> f64
where
    F: Fn(&[f64]) -> f64,
{
    assert!(n_batches >= 2 && items.len() >= n_batches);
    let batch = items.len() / n_batches;
    let used = batch * n_batches;
    let mut replicates = Vec::with_capacity(n_batches);
    let mut held_out = Vec::with_capacity(used - batch);
    for b in 0..n_batches {
        held_out.clear();
        held_out.extend_from_slice(&items[..b * batch]);
        held_out.extend_from_slice(&items[(b + 1) * batch..used]);
        replicates.push(stat(&held_out));
    }
    jackknife_stderr(&replicates)
}
