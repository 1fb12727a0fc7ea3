//! Contrastive objectives with analytic gradients, evaluated in f64.
//!
//! Both losses use cosine similarity, so inputs are L2-normalised first and
//! gradients are pushed back through the normalisation.

use encodermi_nn::gemm::dgemm;

use crate::error::{Error, Result};

const MIN_NORM: f64 = 1e-12;

fn check_tau(tau: f64) -> Result<()> {
    if tau > 0.0 && tau.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter(format!("temperature must be positive, got {tau}")))
    }
}

/// Row-normalises an `n x d` matrix in place, returning the original norms.
fn normalize_rows(m: &mut [f64], d: usize) -> Result<Vec<f64>> {
    m.chunks_mut(d)
        .map(|row| {
            let norm = row.iter().map(|v| v * v).sum::<f64>().sqrt();
            if !(norm > MIN_NORM) {
                return Err(Error::DegenerateFeature("zero-norm vector under cosine similarity".into()));
            }
            row.iter_mut().for_each(|v| *v /= norm);
            Ok(norm)
        })
        .collect()
}

/// Gradient through `x -> x / |x|` for every row: `(g - u (u . g)) / |x|`.
fn normalize_backward(unit: &[f64], norms: &[f64], grad: &mut [f64], d: usize) {
    for ((u, g), &norm) in unit.chunks(d).zip(grad.chunks_mut(d)).zip(norms) {
        let dot: f64 = u.iter().zip(g.iter()).map(|(a, b)| a * b).sum();
        for (gi, ui) in g.iter_mut().zip(u) {
            *gi = (*gi - ui * dot) / norm;
        }
    }
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Mean MoCo loss over a batch of `n` queries (`n x d`, row-major) with their
/// keys and a shared queue of `m` negatives. Returns the loss and its
/// gradient with respect to the raw queries; keys and queue are constants.
pub fn moco_batch_loss(queries: &[f64], keys: &[f64], queue: &[f64], d: usize, tau: f64) -> Result<(f64, Vec<f64>)> {
    check_tau(tau)?;
    if d == 0 || queries.len() % d != 0 || keys.len() != queries.len() || queue.len() % d != 0 {
        return Err(Error::DimensionMismatch { expected: queries.len(), got: keys.len() });
    }
    let n = queries.len() / d;
    let m = queue.len() / d;
    if n == 0 {
        return Ok((0.0, Vec::new()));
    }
    let mut q = queries.to_vec();
    let q_norms = normalize_rows(&mut q, d)?;
    let mut k = keys.to_vec();
    normalize_rows(&mut k, d)?;
    let mut z = queue.to_vec();
    normalize_rows(&mut z, d)?;

    // Negative logits: n x m.
    let mut neg = vec![0.0; n * m];
    if m > 0 {
        dgemm(n, d, m, &q, false, &z, true, 0.0, &mut neg);
    }
    let mut loss = 0.0;
    let mut grad_logits = vec![0.0; n * (m + 1)];
    for i in 0..n {
        let pos: f64 = q[i * d..(i + 1) * d].iter().zip(&k[i * d..(i + 1) * d]).map(|(a, b)| a * b).sum::<f64>() / tau;
        let row = &neg[i * m..(i + 1) * m];
        let lse = log_sum_exp(std::iter::once(pos).chain(row.iter().map(|s| s / tau)));
        loss += lse - pos;
        let g = &mut grad_logits[i * (m + 1)..(i + 1) * (m + 1)];
        g[0] = ((pos - lse).exp() - 1.0) / (tau * n as f64);
        for (gj, s) in g[1..].iter_mut().zip(row) {
            *gj = (s / tau - lse).exp() / (tau * n as f64);
        }
    }
    // dL/dq_unit = g0 * k + sum_j gj * z_j
    let mut grad = vec![0.0; n * d];
    for i in 0..n {
        let g0 = grad_logits[i * (m + 1)];
        for (gq, kv) in grad[i * d..(i + 1) * d].iter_mut().zip(&k[i * d..(i + 1) * d]) {
            *gq = g0 * kv;
        }
    }
    if m > 0 {
        let gneg: Vec<f64> = (0..n).flat_map(|i| grad_logits[i * (m + 1) + 1..(i + 1) * (m + 1)].iter().copied()).collect();
        dgemm(n, m, d, &gneg, false, &z, false, 1.0, &mut grad);
    }
    normalize_backward(&q, &q_norms, &mut grad, d);
    Ok((loss / n as f64, grad))
}

/// MoCo loss for a single query, key and queue of negatives.
pub fn moco_loss(query: &[f64], key: &[f64], queue: &[Vec<f64>], tau: f64) -> Result<f64> {
    moco_loss_with_grad(query, key, queue, tau).map(|(l, _)| l)
}

/// [`moco_loss`] together with its gradient with respect to `query`.
pub fn moco_loss_with_grad(query: &[f64], key: &[f64], queue: &[Vec<f64>], tau: f64) -> Result<(f64, Vec<f64>)> {
    let d = query.len();
    if let Some(bad) = queue.iter().find(|z| z.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let flat: Vec<f64> = queue.iter().flatten().copied().collect();
    moco_batch_loss(query, key, &flat, d, tau)
}

/// Mean SimCLR loss over `2N` row-major vectors where rows `2t` and `2t + 1`
/// form a positive pair. Every ordered positive pair contributes one term.
/// Returns the loss and its gradient with respect to every row.
pub fn simclr_batch_loss(features: &[f64], d: usize, tau: f64) -> Result<(f64, Vec<f64>)> {
    check_tau(tau)?;
    if d == 0 || features.len() % d != 0 {
        return Err(Error::DimensionMismatch { expected: d, got: features.len() });
    }
    let rows = features.len() / d;
    if rows < 2 || rows % 2 != 0 {
        return Err(Error::InvalidParameter(format!("SimCLR needs an even number (>= 2) of vectors, got {rows}")));
    }
    let mut z = features.to_vec();
    let norms = normalize_rows(&mut z, d)?;
    let mut sim = vec![0.0; rows * rows];
    dgemm(rows, d, rows, &z, false, &z, true, 0.0, &mut sim);
    let mut gsim = vec![0.0; rows * rows];
    let mut loss = 0.0;
    let scale = 1.0 / (tau * rows as f64);
    for i in 0..rows {
        let j = i ^ 1;
        let row = &sim[i * rows..(i + 1) * rows];
        let others = row.iter().enumerate().filter(|(k, _)| *k != i).map(|(_, s)| s / tau);
        let lse = log_sum_exp(others);
        loss += lse - row[j] / tau;
        for k in 0..rows {
            if k == i {
                continue;
            }
            let p = (row[k] / tau - lse).exp();
            gsim[i * rows + k] = (p - if k == j { 1.0 } else { 0.0 }) * scale;
        }
    }
    // sim = Z Z^T, so dZ = (G + G^T) Z.
    let sym: Vec<f64> = (0..rows * rows).map(|idx| gsim[idx] + gsim[(idx % rows) * rows + idx / rows]).collect();
    let mut grad = vec![0.0; rows * d];
    dgemm(rows, rows, d, &sym, false, &z, false, 0.0, &mut grad);
    normalize_backward(&z, &norms, &mut grad, d);
    Ok((loss / rows as f64, grad))
}

/// SimCLR loss over already projected vectors.
pub fn simclr_loss(features: &[Vec<f64>], tau: f64) -> Result<f64> {
    simclr_loss_with_grad(features, tau).map(|(l, _)| l)
}

pub fn simclr_loss_with_grad(features: &[Vec<f64>], tau: f64) -> Result<(f64, Vec<Vec<f64>>)> {
    let d = features.first().map_or(0, Vec::len);
    if let Some(bad) = features.iter().find(|f| f.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let flat: Vec<f64> = features.iter().flatten().copied().collect();
    let (loss, grad) = simclr_batch_loss(&flat, d, tau)?;
    Ok((loss, grad.chunks(d).map(<[f64]>::to_vec).collect()))
}
