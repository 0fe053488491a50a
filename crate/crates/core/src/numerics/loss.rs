use super::{NumericsError, Result, Tensor};

/// Row-wise softmax with max subtraction.
pub fn softmax(logits: &Tensor) -> Result<Tensor> {
    let (b, c) = logits.dims2()?;
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(c) {
        let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
    Tensor::new(vec![b, c], out)
}

/// Mean cross-entropy over the batch and its gradient with respect to the
/// logits.
pub fn softmax_xent(logits: &Tensor, labels: &[usize]) -> Result<(f64, Tensor)> {
    let (b, c) = logits.dims2()?;
    if labels.len() != b {
        return Err(NumericsError::Dimension(format!(
            "{} labels for a batch of {b}",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
        return Err(NumericsError::LabelOutOfRange {
            label: bad,
            classes: c,
        });
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0;
    for (i, &label) in labels.iter().enumerate() {
        let row = &logits.data()[i * c..(i + 1) * c];
        let top = (0..c).fold(0, |best, j| if row[j] > row[best] { j } else { best });
        let max = row[top];
        let rest: f64 = (0..c)
            .filter(|&j| j != top)
            .map(|j| (row[j] - max).exp())
            .sum();
        loss += (max - row[label]) + rest.ln_1p();
        grad.data_mut()[i * c + label] -= 1.0;
    }
    let scale = 1.0 / b as f64;
    for g in grad.data_mut() {
        *g *= scale;
    }
    Ok((loss * scale, grad))
}

/// Mean squared error over all elements.
pub fn mse_loss(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.shape() != target.shape() {
        return Err(NumericsError::Dimension(format!(
            "mse between {:?} and {:?}",
            pred.shape(),
            target.shape()
        )));
    }
    let count = pred.len() as f64;
    let diff = pred.sub(target)?;
    let loss = diff.data().iter().map(|d| d * d).sum::<f64>() / count;
    Ok((loss, diff.scale(2.0 / count)))
}
