use crate::class::N_CLASSES;
use crate::error::{Error, Result};

pub type Logits = [f64; N_CLASSES];

pub fn softmax(logits: &Logits) -> Logits {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out = logits.map(|z| (z - max).exp());
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|p| *p /= sum);
    out
}

fn log_sum_exp(logits: &Logits) -> f64 {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    max + logits.iter().map(|z| (z - max).exp()).sum::<f64>().ln()
}

/// Mean cross-entropy over the batch and its gradient w.r.t. each logit row.
pub fn cross_entropy(logits: &[Logits], labels: &[usize]) -> Result<(f64, Vec<Logits>)> {
    if logits.len() != labels.len() {
        return Err(Error::LengthMismatch {
            left: logits.len(),
            right: labels.len(),
        });
    }
    if logits.is_empty() {
        return Err(Error::EmptyInput("cross-entropy batch"));
    }
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let mut grads = Vec::with_capacity(logits.len());
    for (z, &y) in logits.iter().zip(labels) {
        if y >= N_CLASSES {
            return Err(Error::LabelOutOfRange(y));
        }
        loss += log_sum_exp(z) - z[y];
        let mut g = softmax(z);
        g[y] -= 1.0;
        grads.push(g.map(|v| v / n));
    }
    Ok((loss / n, grads))
}
