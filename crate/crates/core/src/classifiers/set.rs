//! DeepSets classifier: `rho(sum_i phi(s_i))` over a multiset of scalars.

use encodermi_nn::{softmax, softmax_cross_entropy, Adam, Layer, Linear, Module, Relu, Sequential, Tensor};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dense::{check_labels, Standardizer, TrainConfig};
use crate::error::{Error, Result};
use crate::rng::child_rng;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetArch {
    /// Widths of the per-element embedder; every layer is followed by ReLU.
    pub phi: Vec<usize>,
    /// Hidden widths of the head applied to the pooled embedding.
    pub rho: Vec<usize>,
}

impl Default for SetArch {
    fn default() -> Self {
        Self { phi: vec![64, 64], rho: vec![64, 64] }
    }
}

impl SetArch {
    fn validate(&self) -> Result<()> {
        if self.phi.is_empty() || self.phi.contains(&0) || self.rho.contains(&0) {
            return Err(Error::InvalidParameter(format!("invalid set architecture {self:?}")));
        }
        Ok(())
    }
}

fn build(arch: &SetArch, classes: usize, seed: u64) -> (Sequential, Sequential) {
    let mut rng = child_rng(seed, "deepsets/init");
    let mut phi = Vec::new();
    let mut prev = 1;
    for &w in &arch.phi {
        phi.push(Module::Linear(Linear::new(prev, w, &mut rng)));
        phi.push(Module::Relu(Relu::default()));
        prev = w;
    }
    let mut dims = vec![prev];
    dims.extend_from_slice(&arch.rho);
    dims.push(classes);
    (Sequential::new(phi), Sequential::mlp(&dims, &mut rng))
}

#[derive(Clone, Debug)]
pub struct DeepSets {
    arch: SetArch,
    classes: usize,
    phi: Sequential,
    rho: Sequential,
    norm: Standardizer,
}

#[derive(Serialize, Deserialize)]
struct StoredSets {
    arch: SetArch,
    classes: usize,
    norm: Standardizer,
    phi: Vec<f32>,
    rho: Vec<f32>,
}

impl Serialize for DeepSets {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        StoredSets {
            arch: self.arch.clone(),
            classes: self.classes,
            norm: self.norm.clone(),
            phi: self.phi.flat_params(),
            rho: self.rho.flat_params(),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for DeepSets {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = StoredSets::deserialize(d)?;
        s.arch.validate().map_err(serde::de::Error::custom)?;
        let (mut phi, mut rho) = build(&s.arch, s.classes, 0);
        phi.load_flat_params(&s.phi).map_err(serde::de::Error::custom)?;
        rho.load_flat_params(&s.rho).map_err(serde::de::Error::custom)?;
        Ok(Self { arch: s.arch, classes: s.classes, phi, rho, norm: s.norm })
    }
}

/// Sums each record's element embeddings (accumulated in f64 so the result
/// does not depend on element order beyond the final rounding).
fn pool(embedded: &Tensor, sizes: &[usize]) -> Tensor {
    let (_, w) = embedded.dims2();
    let mut out = Vec::with_capacity(sizes.len() * w);
    let mut row = 0;
    for &m in sizes {
        let mut acc = vec![0.0f64; w];
        for r in row..row + m {
            acc.iter_mut().zip(embedded.row(r)).for_each(|(a, &v)| *a += v as f64);
        }
        out.extend(acc.into_iter().map(|v| v as f32));
        row += m;
    }
    Tensor::from_vec(&[sizes.len(), w], out)
}

fn unpool(grad: &Tensor, sizes: &[usize]) -> Tensor {
    let (_, w) = grad.dims2();
    let total: usize = sizes.iter().sum();
    let mut out = Vec::with_capacity(total * w);
    for (i, &m) in sizes.iter().enumerate() {
        for _ in 0..m {
            out.extend_from_slice(grad.row(i));
        }
    }
    Tensor::from_vec(&[total, w], out)
}

impl DeepSets {
    pub fn train(sets: &[Vec<f32>], labels: &[usize], classes: usize, arch: &SetArch, cfg: &TrainConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        arch.validate()?;
        if sets.len() != labels.len() {
            return Err(Error::DimensionMismatch { expected: sets.len(), got: labels.len() });
        }
        check_labels(labels, classes)?;
        if sets.iter().any(Vec::is_empty) {
            return Err(Error::InvalidParameter("empty set in training data".into()));
        }
        let norm = Standardizer::fit_scalar(sets);
        let xs: Vec<Vec<f32>> = sets.iter().map(|s| norm.apply(s)).collect();
        let (phi, rho) = build(arch, classes, seed);
        let mut model = Self { arch: arch.clone(), classes, phi, rho, norm };
        let mut opt = Adam::new(cfg.lr);
        opt.weight_decay = cfg.weight_decay;
        let mut order: Vec<usize> = (0..xs.len()).collect();
        let mut rng = child_rng(seed, "deepsets/order");
        for _ in 0..cfg.epochs {
            order.shuffle(&mut rng);
            for batch in order.chunks(cfg.batch_size) {
                let sizes: Vec<usize> = batch.iter().map(|&i| xs[i].len()).collect();
                let flat: Vec<f32> = batch.iter().flat_map(|&i| xs[i].iter().copied()).collect();
                let ys: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                model.phi.zero_grad();
                model.rho.zero_grad();
                let embedded = model.phi.forward_train(&Tensor::from_vec(&[flat.len(), 1], flat));
                let logits = model.rho.forward_train(&pool(&embedded, &sizes));
                let (_, grad) = softmax_cross_entropy(&logits, &ys);
                let gpool = model.rho.backward(&grad);
                model.phi.backward(&unpool(&gpool, &sizes));
                let mut params = model.phi.params_mut();
                params.extend(model.rho.params_mut());
                opt.step(params);
            }
        }
        Ok(model)
    }

    pub fn arch(&self) -> &SetArch {
        &self.arch
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn logits(&self, sets: &[Vec<f32>]) -> Vec<Vec<f32>> {
        if sets.is_empty() {
            return Vec::new();
        }
        let sizes: Vec<usize> = sets.iter().map(Vec::len).collect();
        let flat: Vec<f32> = sets.iter().flat_map(|s| self.norm.apply(s)).collect();
        let embedded = self.phi.forward(&Tensor::from_vec(&[flat.len(), 1], flat));
        let out = self.rho.forward(&pool(&embedded, &sizes));
        out.data().chunks(self.classes).map(<[f32]>::to_vec).collect()
    }

    pub fn probabilities(&self, sets: &[Vec<f32>]) -> Vec<Vec<f32>> {
        let logits = self.logits(sets);
        if logits.is_empty() {
            return logits;
        }
        let t = Tensor::from_vec(&[logits.len(), self.classes], logits.into_iter().flatten().collect());
        softmax(&t).data().chunks(self.classes).map(<[f32]>::to_vec).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pooling_roundtrip_shapes() {
        let t = Tensor::from_vec(&[3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let p = pool(&t, &[2, 1]);
        assert_eq!(p.data(), &[4.0, 6.0, 5.0, 6.0]);
        let u = unpool(&p, &[2, 1]);
        assert_eq!(u.data(), &[4.0, 6.0, 4.0, 6.0, 5.0, 6.0]);
    }

    #[test]
    fn separates_high_and_low_sets() {
        let sets: Vec<Vec<f32>> = (0..40).map(|i| vec![if i % 2 == 0 { 0.9 } else { 0.1 }; 6]).collect();
        let labels: Vec<usize> = (0..40).map(|i| usize::from(i % 2 == 0)).collect();
        let cfg = TrainConfig { lr: 1e-3, epochs: 50, ..Default::default() };
        let clf = DeepSets::train(&sets, &labels, 2, &SetArch::default(), &cfg, 1).unwrap();
        let probs = clf.probabilities(&sets);
        assert!(probs.iter().zip(&labels).all(|(p, &y)| (p[1] > 0.5) == (y == 1)));
        let back: DeepSets = serde_json::from_str(&serde_json::to_string(&clf).unwrap()).unwrap();
        assert_eq!(back.logits(&sets), clf.logits(&sets));
    }
}
