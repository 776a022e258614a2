use rand::Rng;

use super::Matrix;

const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;
const GELU_CUBIC: f64 = 0.044715;

/// GELU, tanh approximation.
#[inline]
pub fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x)).tanh())
}

#[inline]
pub fn gelu_derivative(x: f64) -> f64 {
    let inner = SQRT_2_OVER_PI * (x + GELU_CUBIC * x * x * x);
    let t = inner.tanh();
    let dinner = SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_CUBIC * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

pub fn gelu_matrix(x: &Matrix) -> Matrix {
    let mut y = x.clone();
    y.data_mut().iter_mut().for_each(|v| *v = gelu(*v));
    y
}

/// Softmax over the entries where `keep` is true; the rest get weight 0.
/// Returns `None` when nothing is kept.
pub fn masked_softmax(logits: &[f64], keep: &[bool]) -> Option<Vec<f64>> {
    let max = logits
        .iter()
        .zip(keep)
        .filter(|(_, &k)| k)
        .map(|(&l, _)| l)
        .fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return None;
    }
    let mut out: Vec<f64> = logits
        .iter()
        .zip(keep)
        .map(|(&l, &k)| if k { (l - max).exp() } else { 0.0 })
        .collect();
    let total: f64 = out.iter().sum();
    out.iter_mut().for_each(|w| *w /= total);
    Some(out)
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    masked_softmax(logits, &vec![true; logits.len()]).unwrap_or_default()
}

/// Inverted-dropout scale factors (`0` or `1/(1-p)`), or `None` when inactive.
/// Shortens an optional dropout stream borrow so it can be passed on repeatedly.
pub(crate) fn reborrow<'a>(rng: &'a mut Option<&mut dyn rand::RngCore>) -> Option<&'a mut dyn rand::RngCore> {
    rng.as_mut().map(|r| &mut **r as &mut dyn rand::RngCore)
}

pub fn dropout_mask(len: usize, p: f64, rng: Option<&mut dyn rand::RngCore>) -> Option<Vec<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let scale = 1.0 / (1.0 - p);
    Some((0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { scale }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gelu_reference_points() {
        assert_eq!(gelu(0.0), 0.0);
        assert!((gelu(10.0) - 10.0).abs() < 1e-6);
        // 0.5 * (1 + tanh(sqrt(2/pi) * 1.044715))
        let expected = 0.5 * (1.0 + (SQRT_2_OVER_PI * 1.044715f64).tanh());
        assert!((gelu(1.0) - expected).abs() < 1e-15);
        assert!((gelu(1.0) - 0.841192).abs() < 1e-6);
    }

    #[test]
    fn gelu_derivative_matches_differences() {
        for x in [-3.0, -0.7, 0.0, 0.4, 2.5] {
            let fd = (gelu(x + 1e-6) - gelu(x - 1e-6)) / 2e-6;
            assert!((gelu_derivative(x) - fd).abs() < 1e-8);
        }
    }

    #[test]
    fn masked_softmax_excludes_keys() {
        let w = masked_softmax(&[1.0, 100.0, 1.0], &[true, false, true]).unwrap();
        assert_eq!(w, vec![0.5, 0.0, 0.5]);
        assert!(masked_softmax(&[1.0], &[false]).is_none());
        let s = softmax(&[0.0, 1.0, 2.0]);
        assert!((s.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }
}
