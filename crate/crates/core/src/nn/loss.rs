use super::{NnError, Tensor};

const CLAMP: f64 = 1e-9;

/// Mean binary cross-entropy over every cell of the padded correspondence,
/// slack row and column included. Returns the loss and its gradient with
/// respect to `predicted`; clamped cells receive zero gradient.
pub fn perm_xent_loss(predicted: &Tensor, target: &Tensor) -> Result<(f64, Tensor), NnError> {
    if predicted.shape() != target.shape() {
        return Err(NnError::Shape(format!(
            "loss: predicted {:?} vs target {:?}",
            predicted.shape(),
            target.shape()
        )));
    }
    let z = predicted.len().max(1) as f64;
    let mut grad = Tensor::zeros(predicted.shape());
    let mut total = 0.0;
    for ((&s, &g), d) in predicted
        .data()
        .iter()
        .zip(target.data())
        .zip(grad.data_mut())
    {
        let c = s.clamp(CLAMP, 1.0 - CLAMP);
        total -= g * c.ln() + (1.0 - g) * (1.0 - c).ln();
        if c == s {
            *d = -(g / c - (1.0 - g) / (1.0 - c)) / z;
        }
    }
    let loss = total / z;
    if !loss.is_finite() {
        return Err(NnError::NonFinite("loss".into()));
    }
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_is_near_zero() {
        let gt = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]);
        let (loss, _) = perm_xent_loss(&gt, &gt).unwrap();
        assert!(loss < 1e-8, "{loss}");
    }

    #[test]
    fn half_everywhere_is_ln2() {
        let gt = Tensor::from_rows(&[vec![1.0, 0.0, 0.0], vec![0.0, 0.3, 0.7]]);
        let half = Tensor::from_rows(&[vec![0.5; 3], vec![0.5; 3]]);
        let (loss, _) = perm_xent_loss(&half, &gt).unwrap();
        assert!((loss - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch() {
        assert!(perm_xent_loss(&Tensor::zeros(&[2, 2]), &Tensor::zeros(&[2, 3])).is_err());
    }
}
