use super::mat::Mat;
use crate::error::{Error, Result};

/// Mean softmax cross-entropy over rows of `logits`, with its gradient.
pub fn softmax_xent(logits: &Mat, labels: &[usize]) -> Result<(f64, Mat)> {
    let (n, c) = logits.shape();
    if labels.len() != n {
        return Err(Error::dim(format!("{} labels for {n} rows", labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::Domain(format!("label {bad} outside [0, {c})")));
    }
    if n == 0 {
        return Ok((0.0, Mat::zeros(0, c)));
    }
    let probs = softmax_rows(logits);
    let mut grad = probs.clone();
    let mut loss = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        loss += lse - row[y];
        grad[(i, y)] -= 1.0;
    }
    grad.scale(1.0 / n as f64);
    Ok((loss / n as f64, grad))
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(logits: &Mat) -> Mat {
    let mut out = logits.clone();
    let c = logits.cols();
    if c == 0 {
        return out;
    }
    for row in out.as_mut_slice().chunks_exact_mut(c) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean squared error over all entries, with its gradient.
pub fn mse_loss(pred: &Mat, target: &Mat) -> Result<(f64, Mat)> {
    pred.check_same_shape(target, "mse_loss")?;
    let count = pred.len();
    if count == 0 {
        return Ok((0.0, pred.clone()));
    }
    let diff = pred.sub(target)?;
    let loss = diff.as_slice().iter().map(|d| d * d).sum::<f64>() / count as f64;
    let mut grad = diff;
    grad.scale(2.0 / count as f64);
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_ln_c() {
        let logits = Mat::filled(3, 5, 0.4);
        let (l, _) = softmax_xent(&logits, &[0, 2, 4]).unwrap();
        assert!((l - 5f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn saturated_correct_logit_has_vanishing_loss() {
        let logits = Mat::from_rows(&[vec![50.0, 0.0, 0.0]]).unwrap();
        let (l, _) = softmax_xent(&logits, &[0]).unwrap();
        assert!(l < 1e-9);
    }

    #[test]
    fn label_out_of_range() {
        assert!(matches!(softmax_xent(&Mat::zeros(1, 3), &[3]), Err(Error::Domain(_))));
    }

    #[test]
    fn mse_cases() {
        let a = Mat::from_rows(&[vec![1.0, 2.0]]).unwrap();
        assert_eq!(mse_loss(&a, &a).unwrap().0, 0.0);
        let p = Mat::from_vec(1, 1, vec![3.0]).unwrap();
        let t = Mat::from_vec(1, 1, vec![2.0]).unwrap();
        let (l, g) = mse_loss(&p, &t).unwrap();
        assert_eq!(l, 1.0);
        assert_eq!(g[(0, 0)], 2.0);
        assert!(mse_loss(&a, &p).is_err());
    }
}
