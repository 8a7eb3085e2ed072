//! Central-difference validation of reverse-mode gradients.

/// Central-difference gradient of `f` at `point`.
///
/// Returns `None` if any evaluation fails or is non-finite.
pub fn central_difference<F>(mut f: F, point: &[f64], step: f64) -> Option<Vec<f64>>
where
    F: FnMut(&[f64]) -> Option<f64>,
{
    let mut x = point.to_vec();
    let mut grad = Vec::with_capacity(point.len());
    for i in 0..point.len() {
        x[i] = point[i] + step;
        let plus = f(&x)?;
        x[i] = point[i] - step;
        let minus = f(&x)?;
        x[i] = point[i];
        let d = (plus - minus) / (2.0 * step);
        if !d.is_finite() {
            return None;
        }
        grad.push(d);
    }
    Some(grad)
}

/// Largest per-coordinate discrepancy between an autodiff gradient and
/// central differences, `|ad - fd| / max(1, |fd|)`.
///
/// `f` returns the function value and its autodiff gradient. Any failure,
/// length mismatch or non-finite value yields `f64::INFINITY`.
pub fn gradcheck<F, E>(f: F, point: &[f64], step: f64) -> f64
where
    F: Fn(&[f64]) -> Result<(f64, Vec<f64>), E>,
{
    if !(step > 0.0) {
        return f64::INFINITY;
    }
    let autodiff = match f(point) {
        Ok((value, grad)) if value.is_finite() && grad.len() == point.len() => grad,
        _ => return f64::INFINITY,
    };
    let numeric = match central_difference(
        |x| f(x).ok().map(|(v, _)| v).filter(|v| v.is_finite()),
        point,
        step,
    ) {
        Some(g) => g,
        None => return f64::INFINITY,
    };
    autodiff
        .iter()
        .zip(&numeric)
        .map(|(a, n)| {
            if !a.is_finite() {
                f64::INFINITY
            } else {
                (a - n).abs() / n.abs().max(1.0)
            }
        })
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_is_exact_up_to_rounding() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), ()> {
            Ok((x.iter().map(|v| v * v).sum(), x.iter().map(|v| 2.0 * v).collect()))
        };
        assert!(gradcheck(f, &[1.0, 2.0], 1e-5) < 1e-8);
    }

    #[test]
    fn wrong_gradient_is_detected() {
        let f = |x: &[f64]| -> Result<(f64, Vec<f64>), ()> { Ok((x[0] * x[0], vec![3.0 * x[0]])) };
        assert!(gradcheck(f, &[1.0], 1e-5) > 0.4);
    }

    #[test]
    fn failures_report_infinity() {
        let f = |_: &[f64]| -> Result<(f64, Vec<f64>), ()> { Err(()) };
        assert_eq!(gradcheck(f, &[1.0], 1e-5), f64::INFINITY);
        let g = |x: &[f64]| -> Result<(f64, Vec<f64>), ()> { Ok((f64::NAN, vec![x[0]])) };
        assert_eq!(gradcheck(g, &[1.0], 1e-5), f64::INFINITY);
        let h = |x: &[f64]| -> Result<(f64, Vec<f64>), ()> { Ok((x[0], vec![1.0])) };
        assert_eq!(gradcheck(h, &[1.0], 0.0), f64::INFINITY);
    }

    #[test]
    fn central_difference_of_cubic() {
        let g = central_difference(|x| Some(x[0].powi(3)), &[2.0], 1e-4).unwrap();
        // f'(2) = 12, truncation error is h^2 = 1e-8.
        assert!((g[0] - 12.0).abs() < 1e-7);
    }
}
