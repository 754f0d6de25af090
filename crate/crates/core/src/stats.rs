//! Small statistics toolbox: means with standard errors, jackknife error
//! bars for nonlinear estimators, least-squares line fits, and integrated
//! autocorrelation times.

/// Sample mean and standard error of the mean.
pub fn mean_and_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
    (mean, (var / n as f64).sqrt())
}

/// Sample variance (unbiased).
pub fn variance(xs: &[f64]) -> f64 {
    let (mean, _) = mean_and_se(xs);
    let n = xs.len();
    xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64
}

/// Jackknife estimate and standard error of an arbitrary statistic of the
/// sample (leave-one-out resampling).
pub fn jackknife<F>(xs: &[f64], stat: F) -> (f64, f64)
where
    F: Fn(&[f64]) -> f64,
{
    let n = xs.len();
    assert!(n >= 2, "jackknife needs at least two samples");
    let full = stat(xs);
    let mut loo = Vec::with_capacity(n);
    let mut buf = Vec::with_capacity(n - 1);
    for i in 0..n {
        buf.clear();
        buf.extend_from_slice(&xs[..i]);
        buf.extend_from_slice(&xs[i + 1..]);
        loo.push(stat(&buf));
    }
    let loo_mean = loo.iter().sum::<f64>() / n as f64;
    let var = loo
        .iter()
        .map(|v| (v - loo_mean) * (v - loo_mean))
        .sum::<f64>()
        * (n - 1) as f64
        / n as f64;
    (full, var.sqrt())
}

/// Jackknife mean and error of the sample variance.
pub fn variance_with_jackknife(xs: &[f64]) -> (f64, f64) {
    jackknife(xs, variance)
}

/// Least squares line through `(x, y)` points: returns
/// `(slope, intercept, r_squared)`.
pub fn linear_fit(points: &[(f64, f64)]) -> (f64, f64, f64) {
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p.0).sum();
    let sy: f64 = points.iter().map(|p| p.1).sum();
    let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
    let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
    let denom = n * sxx - sx * sx;
    let slope = (n * sxy - sx * sy) / denom;
    let intercept = (sy - slope * sx) / n;
    let y_mean = sy / n;
    let ss_tot: f64 = points.iter().map(|p| (p.1 - y_mean) * (p.1 - y_mean)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - (slope * p.0 + intercept);
            r * r
        })
        .sum();
    let r2 = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 1.0 };
    (slope, intercept, r2)
}

/// Least squares line with the standard error of the slope:
/// `(slope, intercept, r_squared, slope_se)`.
pub fn linear_fit_with_se(points: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    let (slope, intercept, r2) = linear_fit(points);
    let n = points.len() as f64;
    if points.len() < 3 {
        return (slope, intercept, r2, f64::NAN);
    }
    let x_mean = points.iter().map(|p| p.0).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - x_mean) * (p.0 - x_mean)).sum();
    let ss_res: f64 = points
        .iter()
        .map(|p| {
            let r = p.1 - (slope * p.0 + intercept);
            r * r
        })
        .sum();
    let se = (ss_res / (n - 2.0) / sxx).sqrt();
    (slope, intercept, r2, se)
}

/// Integrated autocorrelation time with the standard self-consistent window
/// (sum rho(t) while the window is below 6 times the running estimate).
pub fn integrated_autocorrelation_time(xs: &[f64]) -> f64 {
    let n = xs.len();
    if n < 8 {
        return f64::NAN;
    }
    let mean = xs.iter().sum::<f64>() / n as f64;
    let c0: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n as f64;
    if c0 == 0.0 {
        return 0.5;
    }
    let mut tau = 0.5;
    for t in 1..n / 2 {
        let mut ct = 0.0;
        for i in 0..n - t {
            ct += (xs[i] - mean) * (xs[i + t] - mean);
        }
        ct /= (n - t) as f64;
        tau += ct / c0;
        if (t as f64) >= 6.0 * tau {
            break;
        }
    }
    tau.max(0.5)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_and_se_basics() {
        let (m, se) = mean_and_se(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-15);
        let expected_se = (5.0f64 / 3.0 / 4.0).sqrt();
        assert!((se - expected_se).abs() < 1e-15);
    }

    #[test]
    fn jackknife_of_mean_matches_classic_se() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 37) % 11) as f64).collect();
        let (jm, jse) = jackknife(&xs, |s| s.iter().sum::<f64>() / s.len() as f64);
        let (m, se) = mean_and_se(&xs);
        assert!((jm - m).abs() < 1e-12);
        assert!((jse - se).abs() < 1e-12);
    }

    #[test]
    fn linear_fit_exact_line() {
        let pts: Vec<(f64, f64)> = (0..10).map(|i| (i as f64, 3.0 - 2.0 * i as f64)).collect();
        let (slope, intercept, r2) = linear_fit(&pts);
        assert!((slope + 2.0).abs() < 1e-12);
        assert!((intercept - 3.0).abs() < 1e-12);
        assert!((r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn iid_series_has_tau_near_half() {
        let mut state = 9u64;
        let xs: Vec<f64> = (0..4000)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                (state >> 11) as f64 / (1u64 << 53) as f64
            })
            .collect();
        let tau = integrated_autocorrelation_time(&xs);
        assert!(tau < 1.0, "tau = {tau}");
    }
}
