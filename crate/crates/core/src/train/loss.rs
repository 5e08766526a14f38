use crate::error::{Error, Result};

const PROB_CLAMP: f64 = 1e-7;

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::shape("bce", format!("{a} predictions for {b} labels")));
    }
    Ok(())
}

/// Mean binary cross-entropy on probabilities clamped to `[1e-7, 1 − 1e-7]`.
pub fn bce_loss(probs: &[f64], labels: &[f64]) -> Result<f64> {
    check_len(probs.len(), labels.len())?;
    if probs.is_empty() {
        return Err(Error::Empty { op: "bce_loss" });
    }
    let sum: f64 = probs
        .iter()
        .zip(labels)
        .map(|(&x, &y)| {
            let x = x.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
            -(y * x.ln() + (1.0 - y) * (1.0 - x).ln())
        })
        .sum();
    Ok(sum / probs.len() as f64)
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Mean BCE evaluated on logits, and its derivative with respect to each logit.
pub fn bce_with_logits(logits: &[f64], labels: &[f64]) -> Result<(f64, Vec<f64>)> {
    check_len(logits.len(), labels.len())?;
    if logits.is_empty() {
        return Err(Error::Empty { op: "bce_with_logits" });
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grad = Vec::with_capacity(logits.len());
    for (&z, &y) in logits.iter().zip(labels) {
        loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
        grad.push((sigmoid(z) - y) / n);
    }
    Ok((loss / n, grad))
}
