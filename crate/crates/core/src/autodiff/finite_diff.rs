use super::tensor::Tensor;

/// Central finite-difference gradient of `f` at `x`.
///
/// `f` is evaluated `2 · x.len()` times with one coordinate perturbed by
/// `±step`.
pub fn central_difference(x: &Tensor, step: f64, mut f: impl FnMut(&Tensor) -> f64) -> Tensor {
    let mut probe = x.clone();
    let mut out = Tensor::zeros(x.rows(), x.cols());
    for i in 0..x.len() {
        let original = probe.data()[i];
        probe.data_mut()[i] = original + step;
        let up = f(&probe);
        probe.data_mut()[i] = original - step;
        let down = f(&probe);
        probe.data_mut()[i] = original;
        out.data_mut()[i] = (up - down) / (2.0 * step);
    }
    out
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both are zero.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "relative_error on unequal lengths");
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}
