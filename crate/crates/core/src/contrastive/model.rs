use std::fmt;
use std::str::FromStr;

use encodermi_nn::{Conv2d, GlobalAvgPool, GroupNorm, Layer, Linear, MaxPool2d, Module, Param, Relu, ResidualBlock, Sequential, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::ImageTensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Architecture {
    /// Stem conv, three residual stages, global pooling, linear projection.
    SmallResnet,
    /// Five plain convolutions with two max-pools, global pooling, linear.
    SmallVgg,
}

impl Architecture {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::SmallResnet => "small-resnet",
            Self::SmallVgg => "small-vgg",
        }
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Architecture {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "small-resnet" => Ok(Self::SmallResnet),
            "small-vgg" => Ok(Self::SmallVgg),
            other => Err(Error::UnknownArchitecture(other.to_string())),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderSpec {
    pub arch: Architecture,
    /// Channel count of the first stage; later stages use 2x and 4x.
    pub width: usize,
    /// Output feature dimension.
    pub dim: usize,
    /// `(height, width)` of accepted images.
    pub resolution: (usize, usize),
}

impl Default for EncoderSpec {
    fn default() -> Self {
        Self { arch: Architecture::SmallResnet, width: 16, dim: 128, resolution: (32, 32) }
    }
}

fn build_backbone<R: Rng + ?Sized>(spec: &EncoderSpec, rng: &mut R) -> Sequential {
    let w = spec.width;
    let mut modules = Vec::new();
    let conv_block = |modules: &mut Vec<Module>, cin: usize, cout: usize, rng: &mut R| {
        modules.push(Module::Conv(Conv2d::new(cin, cout, 3, 1, 1, rng)));
        modules.push(Module::GroupNorm(GroupNorm::new(cout, GroupNorm::default_groups(cout))));
        modules.push(Module::Relu(Relu::default()));
    };
    match spec.arch {
        Architecture::SmallResnet => {
            conv_block(&mut modules, 3, w, rng);
            modules.push(Module::Residual(ResidualBlock::new(w, w, 1, rng)));
            modules.push(Module::Residual(ResidualBlock::new(w, 2 * w, 2, rng)));
            modules.push(Module::Residual(ResidualBlock::new(2 * w, 4 * w, 2, rng)));
        }
        Architecture::SmallVgg => {
            conv_block(&mut modules, 3, w, rng);
            conv_block(&mut modules, w, w, rng);
            modules.push(Module::MaxPool(MaxPool2d::default()));
            conv_block(&mut modules, w, 2 * w, rng);
            conv_block(&mut modules, 2 * w, 2 * w, rng);
            modules.push(Module::MaxPool(MaxPool2d::default()));
            conv_block(&mut modules, 2 * w, 4 * w, rng);
        }
    }
    modules.push(Module::GlobalAvgPool(GlobalAvgPool::default()));
    modules.push(Module::Linear(Linear::new(4 * w, spec.dim, rng)));
    Sequential::new(modules)
}

/// An image encoder: maps `N x 3 x H x W` batches to `N x d` features.
#[derive(Clone, Debug)]
pub struct EncoderModel {
    spec: EncoderSpec,
    net: Sequential,
}

/// Images per forward pass when embedding.
const EMBED_CHUNK: usize = 128;

impl EncoderModel {
    pub fn new<R: Rng + ?Sized>(spec: EncoderSpec, rng: &mut R) -> Result<Self> {
        if spec.width == 0 || spec.dim == 0 {
            return Err(Error::InvalidParameter("encoder width and dim must be positive".into()));
        }
        if spec.resolution.0 < 4 || spec.resolution.1 < 4 {
            return Err(Error::InvalidParameter(format!("resolution {:?} too small", spec.resolution)));
        }
        Ok(Self { net: build_backbone(&spec, rng), spec })
    }

    pub fn spec(&self) -> &EncoderSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dim
    }

    pub fn num_params(&self) -> usize {
        self.net.num_params()
    }

    pub fn flat_params(&self) -> Vec<f32> {
        self.net.flat_params()
    }

    pub fn load_flat_params(&mut self, flat: &[f32]) -> Result<()> {
        self.net
            .load_flat_params(flat)
            .map_err(|e| Error::CorruptCheckpoint(e.to_string()))
    }

    pub fn params(&self) -> Vec<&Param> {
        self.net.params()
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        self.net.params_mut()
    }

    pub fn zero_grad(&mut self) {
        self.net.zero_grad();
    }

    pub fn forward(&self, x: &Tensor) -> Tensor {
        self.net.forward(x)
    }

    pub fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.net.forward_train(x)
    }

    /// Backpropagates a feature gradient; returns the input gradient.
    pub fn backward(&mut self, grad: &Tensor) -> Tensor {
        self.net.backward(grad)
    }

    pub fn clear_cache(&mut self) {
        self.net.clear_cache();
    }

    /// Stacks images into a network input, checking the resolution.
    pub fn input_tensor(&self, images: &[ImageTensor]) -> Result<Tensor> {
        for img in images {
            let (h, w, c) = img.dims();
            if (h, w) != self.spec.resolution || c != 3 {
                return Err(Error::DimensionMismatch {
                    expected: self.spec.resolution.0 * self.spec.resolution.1 * 3,
                    got: h * w * c,
                });
            }
        }
        let (shape, data) = ImageTensor::batch_chw(images);
        Ok(Tensor::from_vec(&shape, data))
    }

    /// Evaluation-mode features, one `d`-vector per image.
    pub fn embed(&self, images: &[ImageTensor]) -> Result<Vec<Vec<f32>>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(EMBED_CHUNK) {
            let feats = self.forward(&self.input_tensor(chunk)?);
            out.extend(feats.data().chunks(self.spec.dim).map(<[f32]>::to_vec));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn both_architectures_emit_d_vectors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for arch in [Architecture::SmallResnet, Architecture::SmallVgg] {
            let spec = EncoderSpec { arch, width: 4, dim: 12, resolution: (16, 16) };
            let model = EncoderModel::new(spec, &mut rng).unwrap();
            let imgs = vec![ImageTensor::filled(16, 16, [0.3, 0.5, 0.7]); 3];
            let feats = model.embed(&imgs).unwrap();
            assert_eq!(feats.len(), 3);
            assert!(feats.iter().all(|f| f.len() == 12 && f.iter().all(|v| v.is_finite())));
            assert_eq!(feats[0], feats[2]);
            assert!(model.embed(&[ImageTensor::filled(8, 8, [0.0; 3])]).is_err());
        }
    }

    #[test]
    fn architecture_names() {
        assert_eq!("small-vgg".parse::<Architecture>().unwrap(), Architecture::SmallVgg);
        assert!(matches!("resnet50".parse::<Architecture>(), Err(Error::UnknownArchitecture(_))));
        assert_eq!(serde_json::to_string(&Architecture::SmallResnet).unwrap(), "\"small-resnet\"");
    }
}
