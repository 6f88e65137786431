use super::NumericsError;

/// Worst componentwise relative error between `analytic` and the central
/// difference `(f(x+h) - f(x-h)) / 2h`, with denominator `max(|a|, |b|, 1e-8)`.
pub fn finite_difference_check<F>(
    mut f: F,
    point: &[f64],
    analytic: &[f64],
    h: f64,
) -> Result<f64, NumericsError>
where
    F: FnMut(&[f64]) -> Result<f64, NumericsError>,
{
    if !(h > 0.0) {
        return Err(NumericsError::InvalidArgument(format!("step h must be positive, got {h}")));
    }
    if point.len() != analytic.len() {
        return Err(NumericsError::Shape(format!(
            "point has {} components, gradient has {}",
            point.len(),
            analytic.len()
        )));
    }
    let mut x = point.to_vec();
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let orig = x[i];
        x[i] = orig + h;
        let plus = f(&x)?;
        x[i] = orig - h;
        let minus = f(&x)?;
        x[i] = orig;
        if !plus.is_finite() || !minus.is_finite() {
            return Err(NumericsError::NonFiniteValue { index: i });
        }
        let numeric = (plus - minus) / (2.0 * h);
        let a = analytic[i];
        let denom = a.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((a - numeric).abs() / denom);
    }
    Ok(worst)
}
