use crate::tensor::Tensor;

/// Row-wise softmax of a `batch x classes` matrix.
pub fn softmax(logits: &Tensor) -> Tensor {
    let (_, k) = logits.dims2();
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(k) {
        let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
        let mut sum = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        row.iter_mut().for_each(|v| *v /= sum);
    }
    out
}

/// Mean cross-entropy over the batch and its gradient w.r.t. the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> (f32, Tensor) {
    let (b, k) = logits.dims2();
    assert_eq!(b, labels.len(), "one label per row");
    let mut grad = softmax(logits);
    let mut loss = 0.0f64;
    for (row, &y) in grad.data_mut().chunks_mut(k).zip(labels) {
        assert!(y < k, "label {y} out of range for {k} classes");
        loss -= (row[y].max(1e-30) as f64).ln();
        row[y] -= 1.0;
        row.iter_mut().for_each(|v| *v /= b as f32);
    }
    ((loss / b.max(1) as f64) as f32, grad)
}
