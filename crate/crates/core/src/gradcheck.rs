//! Central finite differences for checking analytic gradients.

/// `(f(x + h·eᵢ) − f(x − h·eᵢ)) / 2h` for every coordinate `i`.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + step;
            let plus = f(&probe);
            probe[i] = x[i] - step;
            let minus = f(&probe);
            probe[i] = x[i];
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// Largest coordinate error, relative to the largest gradient magnitude of
/// either vector (floored at `1e-8` so an all-zero pair compares as exact).
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    assert_eq!(analytic.len(), numeric.len(), "gradient lengths differ");
    let scale = analytic.iter().chain(numeric).fold(1e-8f64, |m, v| m.max(v.abs()));
    analytic.iter().zip(numeric).map(|(a, n)| (a - n).abs()).fold(0.0, f64::max) / scale
}
