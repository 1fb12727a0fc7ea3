use encodermi_nn::{softmax, softmax_cross_entropy, Adam, Layer, Sequential, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::child_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f32,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f32,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 1e-4, epochs: 300, batch_size: 32, weight_decay: 0.0 }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidParameter(format!("invalid training config {self:?}")));
        }
        Ok(())
    }
}

/// Checks labels and returns the class histogram.
pub(crate) fn check_labels(labels: &[usize], classes: usize) -> Result<Vec<usize>> {
    let mut counts = vec![0; classes];
    for &y in labels {
        if y >= classes {
            return Err(Error::LabelOutOfRange { label: y, classes });
        }
        counts[y] += 1;
    }
    let present: Vec<usize> = (0..classes).filter(|&c| counts[c] > 0).collect();
    match present.as_slice() {
        [] => Err(Error::InsufficientData { requested: 1, available: 0 }),
        [only] => Err(Error::SingleClass(*only)),
        _ => Ok(counts),
    }
}

pub(crate) fn check_rows(x: &[Vec<f32>]) -> Result<usize> {
    let d = x.first().map_or(0, Vec::len);
    if let Some(bad) = x.iter().find(|r| r.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    Ok(d)
}

/// Per-feature affine standardisation fitted on training inputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f32>,
    pub scale: Vec<f32>,
}

impl Standardizer {
    pub fn fit(x: &[Vec<f32>]) -> Self {
        let d = x.first().map_or(0, Vec::len);
        let n = x.len().max(1) as f64;
        let mut mean = vec![0.0f64; d];
        for row in x {
            mean.iter_mut().zip(row).for_each(|(m, &v)| *m += v as f64 / n);
        }
        let mut var = vec![0.0f64; d];
        for row in x {
            var.iter_mut().zip(row).zip(&mean).for_each(|((s, &v), m)| *s += (v as f64 - m).powi(2) / n);
        }
        let scale = var.iter().map(|&v| if v.sqrt() > 1e-8 { (1.0 / v.sqrt()) as f32 } else { 1.0 }).collect();
        Self { mean: mean.into_iter().map(|m| m as f32).collect(), scale }
    }

    /// A single shared mean and scale over every value of every row.
    pub fn fit_scalar(x: &[Vec<f32>]) -> Self {
        let flat: Vec<Vec<f32>> = x.iter().flatten().map(|&v| vec![v]).collect();
        Self::fit(&flat)
    }

    pub fn apply(&self, row: &[f32]) -> Vec<f32> {
        let k = self.mean.len();
        row.iter().enumerate().map(|(i, &v)| (v - self.mean[i % k]) * self.scale[i % k]).collect()
    }
}

pub(crate) fn batch_tensor(rows: &[&[f32]], d: usize) -> Tensor {
    Tensor::from_vec(&[rows.len(), d], rows.iter().flat_map(|r| r.iter().copied()).collect())
}

/// A dense softmax classifier over fixed-length vectors.
#[derive(Clone, Debug)]
pub struct MlpClassifier {
    dims: Vec<usize>,
    net: Sequential,
    norm: Standardizer,
}

#[derive(Serialize, Deserialize)]
struct StoredMlp {
    dims: Vec<usize>,
    norm: Standardizer,
    params: Vec<f32>,
}

impl Serialize for MlpClassifier {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StoredMlp { dims: self.dims.clone(), norm: self.norm.clone(), params: self.net.flat_params() }.serialize(s)
    }
}

impl<'de> Deserialize<'de> for MlpClassifier {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let stored = StoredMlp::deserialize(d)?;
        Self::from_parts(stored.dims, stored.norm, &stored.params).map_err(serde::de::Error::custom)
    }
}

impl MlpClassifier {
    fn from_parts(dims: Vec<usize>, norm: Standardizer, params: &[f32]) -> Result<Self> {
        if dims.len() < 2 || norm.mean.len() != dims[0] {
            return Err(Error::ConfigMismatch(format!("bad classifier dims {dims:?}")));
        }
        let mut net = Sequential::mlp(&dims, &mut child_rng(0, "unused"));
        net.load_flat_params(params).map_err(|e| Error::ConfigMismatch(e.to_string()))?;
        Ok(Self { dims, net, norm })
    }

    /// Trains `input -> hidden... -> classes` with Adam and cross-entropy on
    /// standardised inputs.
    pub fn train(
        x: &[Vec<f32>],
        labels: &[usize],
        classes: usize,
        hidden: &[usize],
        cfg: &TrainConfig,
        seed: u64,
    ) -> Result<Self> {
        cfg.validate()?;
        if x.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: x.len(), got: labels.len() });
        }
        check_labels(labels, classes)?;
        let d = check_rows(x)?;
        let norm = Standardizer::fit(x);
        let xs: Vec<Vec<f32>> = x.iter().map(|r| norm.apply(r)).collect();
        let mut dims = vec![d];
        dims.extend_from_slice(hidden);
        dims.push(classes);
        let mut net = Sequential::mlp(&dims, &mut child_rng(seed, "mlp/init"));
        let mut opt = Adam::new(cfg.lr);
        opt.weight_decay = cfg.weight_decay;
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut rng = child_rng(seed, "mlp/order");
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let rows: Vec<&[f32]> = batch.iter().map(|&i| xs[i].as_slice()).collect();
                let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                net.zero_grad();
                let logits = net.forward_train(&batch_tensor(&rows, d));
                let (_, grad) = softmax_cross_entropy(&logits, &ys);
                net.backward(&grad);
                opt.step(net.params_mut());
            }
        }
        Ok(Self { dims, net, norm })
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn classes(&self) -> usize {
        *self.dims.last().expect("non-empty dims")
    }

    pub fn hidden(&self) -> &[usize] {
        &self.dims[1..self.dims.len() - 1]
    }

    pub fn logits(&self, x: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        if x.is_empty() {
            return Ok(Vec::new());
        }
        let d = check_rows(x)?;
        if d != self.input_dim() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: d });
        }
        let xs: Vec<Vec<f32>> = x.iter().map(|r| self.norm.apply(r)).collect();
        let rows: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let out = self.net.forward(&batch_tensor(&rows, d));
        Ok(out.data().chunks(self.classes()).map(<[f32]>::to_vec).collect())
    }

    pub fn probabilities(&self, x: &[Vec<f32>]) -> Result<Vec<Vec<f32>>> {
        let logits = self.logits(x)?;
        if logits.is_empty() {
            return Ok(logits);
        }
        let k = self.classes();
        let t = Tensor::from_vec(&[logits.len(), k], logits.into_iter().flatten().collect());
        Ok(softmax(&t).data().chunks(k).map(<[f32]>::to_vec).collect())
    }

    /// Gradient of the mean cross-entropy towards `targets` with respect to
    /// the raw (unstandardised) inputs.
    pub fn input_gradient(&self, x: &[Vec<f32>], targets: &[usize]) -> Result<Vec<Vec<f32>>> {
        let d = check_rows(x)?;
        if d != self.input_dim() || x.len() != targets.len() {
            return Err(Error::DimensionMismatch { expected: self.input_dim(), got: d });
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= self.classes()) {
            return Err(Error::LabelOutOfRange { label: bad, classes: self.classes() });
        }
        let xs: Vec<Vec<f32>> = x.iter().map(|r| self.norm.apply(r)).collect();
        let rows: Vec<&[f32]> = xs.iter().map(Vec::as_slice).collect();
        let mut net = self.net.clone();
        let logits = net.forward_train(&batch_tensor(&rows, d));
        let (_, grad) = softmax_cross_entropy(&logits, targets);
        let dx = net.backward(&grad);
        Ok(dx
            .data()
            .chunks(d)
            .map(|row| row.iter().zip(&self.norm.scale).map(|(g, s)| g * s).collect())
            .collect())
    }

    pub fn predict(&self, x: &[Vec<f32>]) -> Result<Vec<usize>> {
        Ok(self.logits(x)?.iter().map(|row| argmax(row)).collect())
    }

    pub fn accuracy(&self, x: &[Vec<f32>], labels: &[usize]) -> Result<f64> {
        let pred = self.predict(x)?;
        Ok(pred.iter().zip(labels).filter(|(p, y)| p == y).count() as f64 / labels.len().max(1) as f64)
    }
}

/// Index of the largest value; the first one on ties.
pub fn argmax(row: &[f32]) -> usize {
    row.iter().enumerate().fold(0, |best, (i, &v)| if v > row[best] { i } else { best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn learns_xor_and_roundtrips() {
        let x: Vec<Vec<f32>> = (0..64).map(|i| vec![(i % 2) as f32, ((i / 2) % 2) as f32]).collect();
        let y: Vec<usize> = x.iter().map(|r| (r[0] != r[1]) as usize).collect();
        let cfg = TrainConfig { lr: 1e-2, epochs: 200, batch_size: 16, weight_decay: 0.0 };
        let clf = MlpClassifier::train(&x, &y, 2, &[16], &cfg, 3).unwrap();
        assert_eq!(clf.accuracy(&x, &y).unwrap(), 1.0);
        let json = serde_json::to_string(&clf).unwrap();
        let back: MlpClassifier = serde_json::from_str(&json).unwrap();
        assert_eq!(back.logits(&x).unwrap(), clf.logits(&x).unwrap());
    }

    #[test]
    fn label_checks() {
        let x = vec![vec![0.0], vec![1.0]];
        let cfg = TrainConfig::default();
        assert!(matches!(MlpClassifier::train(&x, &[1, 1], 2, &[], &cfg, 0), Err(Error::SingleClass(1))));
        assert!(matches!(
            MlpClassifier::train(&x, &[0, 3], 2, &[], &cfg, 0),
            Err(Error::LabelOutOfRange { label: 3, classes: 2 })
        ));
    }

    #[test]
    fn standardizer_centres() {
        let s = Standardizer::fit(&[vec![1.0, 5.0], vec![3.0, 5.0]]);
        assert_eq!(s.apply(&[1.0, 5.0]), vec![-1.0, 0.0]);
        assert_eq!(argmax(&[0.1, 0.7, 0.7]), 1);
    }
}
