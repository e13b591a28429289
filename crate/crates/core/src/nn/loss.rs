use crate::{Error, Result};

/// Predictions are clipped to `[BCE_CLIP, 1 - BCE_CLIP]` before taking logs.
pub const BCE_CLIP: f64 = 1e-7;

fn check(predictions: &[f64], targets: &[f64]) -> Result<()> {
    if predictions.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            predictions.len(),
            targets.len()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Shape("empty prediction vector".into()));
    }
    Ok(())
}

/// Mean binary cross-entropy.
pub fn bce_loss(predictions: &[f64], targets: &[f64]) -> Result<f64> {
    check(predictions, targets)?;
    let total: f64 = predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            -(t * p.ln() + (1.0 - t) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / predictions.len() as f64)
}

/// Gradient of [`bce_loss`] with respect to each prediction, evaluated at the
/// clipped prediction so a saturated sigmoid still passes a finite signal.
pub fn bce_grad(predictions: &[f64], targets: &[f64]) -> Result<Vec<f64>> {
    check(predictions, targets)?;
    let n = predictions.len() as f64;
    Ok(predictions
        .iter()
        .zip(targets)
        .map(|(&p, &t)| {
            let p = p.clamp(BCE_CLIP, 1.0 - BCE_CLIP);
            (p - t) / (p * (1.0 - p) * n)
        })
        .collect())
}
