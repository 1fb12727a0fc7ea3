//! Layers with hand-written backward passes.

use rand::Rng;

use crate::gemm::sgemm;
use crate::init::{fan_in_uniform, kaiming_normal};
use crate::tensor::{Param, Tensor};

/// Common interface of every layer.
pub trait Layer {
    /// Inference forward pass; never touches caches.
    fn forward(&self, x: &Tensor) -> Tensor;
    /// Training forward pass; stores what `backward` needs.
    fn forward_train(&mut self, x: &Tensor) -> Tensor;
    /// Accumulates parameter gradients and returns the input gradient.
    fn backward(&mut self, grad: &Tensor) -> Tensor;
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;
    /// Drops cached activations.
    fn clear_cache(&mut self) {}
}

// ---------------------------------------------------------------------------
// Convolution
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    /// `out_ch x (in_ch * kernel * kernel)`.
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Conv2d {
    pub fn new<R: Rng + ?Sized>(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        rng: &mut R,
    ) -> Self {
        let fan_in = in_ch * kernel * kernel;
        Self {
            in_ch,
            out_ch,
            kernel,
            stride,
            padding,
            weight: Param::new(kaiming_normal(out_ch * fan_in, fan_in, rng)),
            bias: Param::new(vec![0.0; out_ch]),
            cache: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let oh = (h + 2 * self.padding - self.kernel) / self.stride + 1;
        let ow = (w + 2 * self.padding - self.kernel) / self.stride + 1;
        (oh, ow)
    }

    fn im2col(&self, img: &[f32], h: usize, w: usize, cols: &mut [f32]) {
        let (oh, ow) = self.output_hw(h, w);
        let k = self.kernel;
        let ohw = oh * ow;
        for c in 0..self.in_ch {
            let plane = &img[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let dst = &mut cols[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        let out_row = &mut dst[oy * ow..(oy + 1) * ow];
                        if iy < 0 || iy >= h as isize {
                            out_row.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * w..(iy as usize + 1) * w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            *v = if ix < 0 || ix >= w as isize { 0.0 } else { src[ix as usize] };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f32], h: usize, w: usize, img: &mut [f32]) {
        let (oh, ow) = self.output_hw(h, w);
        let k = self.kernel;
        let ohw = oh * ow;
        for c in 0..self.in_ch {
            let plane = &mut img[c * h * w..(c + 1) * h * w];
            for ki in 0..k {
                for kj in 0..k {
                    let row = (c * k + ki) * k + kj;
                    let src = &cols[row * ohw..(row + 1) * ohw];
                    for oy in 0..oh {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * w..(iy as usize + 1) * w];
                        for ox in 0..ow {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < w as isize {
                                dst[ix as usize] += src[oy * ow + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

impl Layer for Conv2d {
    fn forward(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.in_ch, "conv input channels");
        let (oh, ow) = self.output_hw(h, w);
        let ohw = oh * ow;
        let ckk = self.in_ch * self.kernel * self.kernel;
        let mut out = Tensor::zeros(&[n, self.out_ch, oh, ow]);
        let mut cols = vec![0.0; ckk * ohw];
        let in_len = c * h * w;
        let out_len = self.out_ch * ohw;
        for b in 0..n {
            let img = &x.data()[b * in_len..(b + 1) * in_len];
            self.im2col(img, h, w, &mut cols);
            let dst = &mut out.data_mut()[b * out_len..(b + 1) * out_len];
            sgemm(self.out_ch, ckk, ohw, &self.weight.value, false, &cols, false, 0.0, dst);
            for (o, chunk) in dst.chunks_mut(ohw).enumerate() {
                let bias = self.bias.value[o];
                chunk.iter_mut().for_each(|v| *v += bias);
            }
        }
        out
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let out = self.forward(x);
        self.cache = Some(x.clone());
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.cache.take().expect("conv backward without forward_train");
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = self.output_hw(h, w);
        let ohw = oh * ow;
        let ckk = self.in_ch * self.kernel * self.kernel;
        self.weight.zero_grad_if_unset();
        self.bias.zero_grad_if_unset();
        let mut dx = Tensor::zeros(&[n, c, h, w]);
        let mut cols = vec![0.0; ckk * ohw];
        let mut dcols = vec![0.0; ckk * ohw];
        let in_len = c * h * w;
        let out_len = self.out_ch * ohw;
        for b in 0..n {
            let img = &x.data()[b * in_len..(b + 1) * in_len];
            let g = &grad.data()[b * out_len..(b + 1) * out_len];
            self.im2col(img, h, w, &mut cols);
            sgemm(self.out_ch, ohw, ckk, g, false, &cols, true, 1.0, &mut self.weight.grad);
            for (o, chunk) in g.chunks(ohw).enumerate() {
                self.bias.grad[o] += chunk.iter().sum::<f32>();
            }
            sgemm(ckk, self.out_ch, ohw, &self.weight.value, true, g, false, 0.0, &mut dcols);
            self.col2im(&dcols, h, w, &mut dx.data_mut()[b * in_len..(b + 1) * in_len]);
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

impl Param {
    pub(crate) fn zero_grad_if_unset(&mut self) {
        if self.grad.len() != self.value.len() {
            self.grad = vec![0.0; self.value.len()];
        }
    }
}

// ---------------------------------------------------------------------------
// Dense
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct Linear {
    pub in_dim: usize,
    pub out_dim: usize,
    /// `out_dim x in_dim`.
    pub weight: Param,
    pub bias: Param,
    cache: Option<Tensor>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(in_dim: usize, out_dim: usize, rng: &mut R) -> Self {
        Self {
            in_dim,
            out_dim,
            weight: Param::new(fan_in_uniform(out_dim * in_dim, in_dim, rng)),
            bias: Param::new(fan_in_uniform(out_dim, in_dim, rng)),
            cache: None,
        }
    }
}

impl Layer for Linear {
    fn forward(&self, x: &Tensor) -> Tensor {
        let (b, d) = x.dims2();
        assert_eq!(d, self.in_dim, "linear input width");
        let mut out = Tensor::zeros(&[b, self.out_dim]);
        sgemm(b, self.in_dim, self.out_dim, x.data(), false, &self.weight.value, true, 0.0, out.data_mut());
        for row in out.data_mut().chunks_mut(self.out_dim) {
            row.iter_mut().zip(&self.bias.value).for_each(|(v, b)| *v += b);
        }
        out
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let out = self.forward(x);
        self.cache = Some(x.clone());
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let x = self.cache.take().expect("linear backward without forward_train");
        let (b, _) = x.dims2();
        self.weight.zero_grad_if_unset();
        self.bias.zero_grad_if_unset();
        sgemm(self.out_dim, b, self.in_dim, grad.data(), true, x.data(), false, 1.0, &mut self.weight.grad);
        for row in grad.data().chunks(self.out_dim) {
            self.bias.grad.iter_mut().zip(row).for_each(|(g, r)| *g += r);
        }
        let mut dx = Tensor::zeros(&[b, self.in_dim]);
        sgemm(b, self.out_dim, self.in_dim, grad.data(), false, &self.weight.value, false, 0.0, dx.data_mut());
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.weight, &mut self.bias]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

// ---------------------------------------------------------------------------
// Activations and pooling
// ---------------------------------------------------------------------------

#[derive(Clone, Debug, Default)]
pub struct Relu {
    mask: Option<Vec<bool>>,
}

impl Layer for Relu {
    fn forward(&self, x: &Tensor) -> Tensor {
        let data = x.data().iter().map(|&v| v.max(0.0)).collect();
        Tensor::from_vec(x.shape(), data)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.mask = Some(x.data().iter().map(|&v| v > 0.0).collect());
        self.forward(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mask = self.mask.take().expect("relu backward without forward_train");
        let data = grad
            .data()
            .iter()
            .zip(&mask)
            .map(|(&g, &m)| if m { g } else { 0.0 })
            .collect();
        Tensor::from_vec(grad.shape(), data)
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn clear_cache(&mut self) {
        self.mask = None;
    }
}

/// 2x2 max pooling with stride 2 (odd trailing rows/columns are dropped).
#[derive(Clone, Debug, Default)]
pub struct MaxPool2d {
    cache: Option<(Vec<usize>, [usize; 4])>,
}

impl MaxPool2d {
    fn pool(x: &Tensor) -> (Tensor, Vec<usize>) {
        let (n, c, h, w) = x.dims4();
        let (oh, ow) = (h / 2, w / 2);
        let mut out = Tensor::zeros(&[n, c, oh, ow]);
        let mut argmax = vec![0usize; n * c * oh * ow];
        let src = x.data();
        for plane in 0..n * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if src[idx] > src[best] {
                            best = idx;
                        }
                    }
                    let o = (plane * oh + oy) * ow + ox;
                    out.data_mut()[o] = src[best];
                    argmax[o] = best;
                }
            }
        }
        (out, argmax)
    }
}

impl Layer for MaxPool2d {
    fn forward(&self, x: &Tensor) -> Tensor {
        Self::pool(x).0
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let (out, argmax) = Self::pool(x);
        let (n, c, h, w) = x.dims4();
        self.cache = Some((argmax, [n, c, h, w]));
        out
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (argmax, shape) = self.cache.take().expect("maxpool backward without forward_train");
        let mut dx = Tensor::zeros(&shape);
        for (g, &idx) in grad.data().iter().zip(&argmax) {
            dx.data_mut()[idx] += g;
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

/// NCHW -> NC spatial mean.
#[derive(Clone, Debug, Default)]
pub struct GlobalAvgPool {
    cache: Option<[usize; 4]>,
}

impl Layer for GlobalAvgPool {
    fn forward(&self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        let hw = h * w;
        let data = x
            .data()
            .chunks(hw)
            .map(|plane| plane.iter().sum::<f32>() / hw as f32)
            .collect();
        Tensor::from_vec(&[n, c], data)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let (n, c, h, w) = x.dims4();
        self.cache = Some([n, c, h, w]);
        self.forward(x)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let shape = self.cache.take().expect("avgpool backward without forward_train");
        let hw = shape[2] * shape[3];
        let scale = 1.0 / hw as f32;
        let mut dx = Tensor::zeros(&shape);
        for (plane, &g) in dx.data_mut().chunks_mut(hw).zip(grad.data()) {
            plane.iter_mut().for_each(|v| *v = g * scale);
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        Vec::new()
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

// ---------------------------------------------------------------------------
// Normalisation
// ---------------------------------------------------------------------------

/// Group normalisation over NCHW inputs: per sample, channels are split into
/// `groups` groups, each standardised over its channels and spatial extent,
/// then scaled and shifted per channel.
#[derive(Clone, Debug)]
pub struct GroupNorm {
    pub channels: usize,
    pub groups: usize,
    pub gamma: Param,
    pub beta: Param,
    eps: f32,
    cache: Option<(Tensor, Vec<f32>)>,
}

impl GroupNorm {
    pub fn new(channels: usize, groups: usize) -> Self {
        assert!(groups > 0 && channels % groups == 0, "groups must divide channels");
        Self {
            channels,
            groups,
            gamma: Param::new(vec![1.0; channels]),
            beta: Param::new(vec![0.0; channels]),
            eps: 1e-5,
            cache: None,
        }
    }

    /// Largest group count up to 8 that leaves at least two channels per group.
    pub fn default_groups(channels: usize) -> usize {
        (1..=8.min(channels / 2)).rev().find(|g| channels % g == 0).unwrap_or(1)
    }

    /// Returns the normalised input and each group's inverse std.
    fn normalize(&self, x: &Tensor) -> (Tensor, Vec<f32>) {
        let (n, c, h, w) = x.dims4();
        assert_eq!(c, self.channels, "group norm channels");
        let group_len = c / self.groups * h * w;
        let mut xhat = x.clone();
        let mut inv_std = Vec::with_capacity(n * self.groups);
        for chunk in xhat.data_mut().chunks_mut(group_len) {
            let mean = chunk.iter().map(|&v| v as f64).sum::<f64>() / group_len as f64;
            let var = chunk.iter().map(|&v| (v as f64 - mean).powi(2)).sum::<f64>() / group_len as f64;
            let inv = 1.0 / (var + self.eps as f64).sqrt();
            chunk.iter_mut().for_each(|v| *v = ((*v as f64 - mean) * inv) as f32);
            inv_std.push(inv as f32);
        }
        (xhat, inv_std)
    }

    fn affine(&self, xhat: &Tensor) -> Tensor {
        let (_, c, h, w) = xhat.dims4();
        let hw = h * w;
        let mut y = xhat.clone();
        for (i, plane) in y.data_mut().chunks_mut(hw).enumerate() {
            let ch = i % c;
            let (g, b) = (self.gamma.value[ch], self.beta.value[ch]);
            plane.iter_mut().for_each(|v| *v = *v * g + b);
        }
        y
    }
}

impl Layer for GroupNorm {
    fn forward(&self, x: &Tensor) -> Tensor {
        self.affine(&self.normalize(x).0)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let (xhat, inv_std) = self.normalize(x);
        let y = self.affine(&xhat);
        self.cache = Some((xhat, inv_std));
        y
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let (xhat, inv_std) = self.cache.take().expect("group norm backward without forward_train");
        let (_, c, h, w) = xhat.dims4();
        let hw = h * w;
        self.gamma.zero_grad_if_unset();
        self.beta.zero_grad_if_unset();
        let mut dxhat = grad.clone();
        for (i, (gplane, xplane)) in dxhat.data_mut().chunks_mut(hw).zip(xhat.data().chunks(hw)).enumerate() {
            let ch = i % c;
            let mut dg = 0.0f32;
            let mut db = 0.0f32;
            for (gv, xv) in gplane.iter_mut().zip(xplane) {
                dg += *gv * xv;
                db += *gv;
                *gv *= self.gamma.value[ch];
            }
            self.gamma.grad[ch] += dg;
            self.beta.grad[ch] += db;
        }
        let group_len = c / self.groups * hw;
        let mut dx = dxhat;
        for ((gchunk, xchunk), &inv) in dx.data_mut().chunks_mut(group_len).zip(xhat.data().chunks(group_len)).zip(&inv_std) {
            let mean_g = gchunk.iter().map(|&v| v as f64).sum::<f64>() / group_len as f64;
            let mean_gx = gchunk.iter().zip(xchunk).map(|(&g, &x)| g as f64 * x as f64).sum::<f64>() / group_len as f64;
            for (gv, &xv) in gchunk.iter_mut().zip(xchunk) {
                *gv = (inv as f64 * (*gv as f64 - mean_g - xv as f64 * mean_gx)) as f32;
            }
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        vec![&self.gamma, &self.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![&mut self.gamma, &mut self.beta]
    }

    fn clear_cache(&mut self) {
        self.cache = None;
    }
}

// ---------------------------------------------------------------------------
// Residual block
// ---------------------------------------------------------------------------

/// `relu(gn2(conv2(relu(gn1(conv1(x))))) + shortcut(x))`, with a 1x1
/// projection (plus group norm) shortcut whenever the stride or channel count
/// changes.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv2d,
    pub norm1: GroupNorm,
    pub relu1: Relu,
    pub conv2: Conv2d,
    pub norm2: GroupNorm,
    pub shortcut: Option<(Conv2d, GroupNorm)>,
    relu_out: Relu,
}

impl ResidualBlock {
    pub fn new<R: Rng + ?Sized>(in_ch: usize, out_ch: usize, stride: usize, rng: &mut R) -> Self {
        let groups = GroupNorm::default_groups(out_ch);
        let conv1 = Conv2d::new(in_ch, out_ch, 3, stride, 1, rng);
        let conv2 = Conv2d::new(out_ch, out_ch, 3, 1, 1, rng);
        let mut norm2 = GroupNorm::new(out_ch, groups);
        // Start the residual branch small so the block begins near its shortcut.
        norm2.gamma.value.iter_mut().for_each(|v| *v = 0.5);
        let shortcut = (stride != 1 || in_ch != out_ch)
            .then(|| (Conv2d::new(in_ch, out_ch, 1, stride, 0, rng), GroupNorm::new(out_ch, groups)));
        Self {
            conv1,
            norm1: GroupNorm::new(out_ch, groups),
            relu1: Relu::default(),
            conv2,
            norm2,
            shortcut,
            relu_out: Relu::default(),
        }
    }
}

fn add_assign(a: &mut Tensor, b: &Tensor) {
    assert_eq!(a.shape(), b.shape());
    a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
}

impl Layer for ResidualBlock {
    fn forward(&self, x: &Tensor) -> Tensor {
        let h = self.relu1.forward(&self.norm1.forward(&self.conv1.forward(x)));
        let mut y = self.norm2.forward(&self.conv2.forward(&h));
        match &self.shortcut {
            Some((sc, sn)) => add_assign(&mut y, &sn.forward(&sc.forward(x))),
            None => add_assign(&mut y, x),
        }
        self.relu_out.forward(&y)
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let h = self.conv1.forward_train(x);
        let h = self.norm1.forward_train(&h);
        let h = self.relu1.forward_train(&h);
        let h = self.conv2.forward_train(&h);
        let mut y = self.norm2.forward_train(&h);
        match &mut self.shortcut {
            Some((sc, sn)) => {
                let s = sc.forward_train(x);
                add_assign(&mut y, &sn.forward_train(&s));
            }
            None => add_assign(&mut y, x),
        }
        self.relu_out.forward_train(&y)
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let g = self.relu_out.backward(grad);
        let b = self.norm2.backward(&g);
        let b = self.conv2.backward(&b);
        let b = self.relu1.backward(&b);
        let b = self.norm1.backward(&b);
        let mut dx = self.conv1.backward(&b);
        match &mut self.shortcut {
            Some((sc, sn)) => {
                let s = sn.backward(&g);
                add_assign(&mut dx, &sc.backward(&s));
            }
            None => add_assign(&mut dx, &g),
        }
        dx
    }

    fn params(&self) -> Vec<&Param> {
        let mut p = self.conv1.params();
        p.extend(self.norm1.params());
        p.extend(self.conv2.params());
        p.extend(self.norm2.params());
        if let Some((sc, sn)) = &self.shortcut {
            p.extend(sc.params());
            p.extend(sn.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut p = self.conv1.params_mut();
        p.extend(self.norm1.params_mut());
        p.extend(self.conv2.params_mut());
        p.extend(self.norm2.params_mut());
        if let Some((sc, sn)) = &mut self.shortcut {
            p.extend(sc.params_mut());
            p.extend(sn.params_mut());
        }
        p
    }

    fn clear_cache(&mut self) {
        self.conv1.clear_cache();
        self.norm1.clear_cache();
        self.relu1.clear_cache();
        self.conv2.clear_cache();
        self.norm2.clear_cache();
        if let Some((sc, sn)) = &mut self.shortcut {
            sc.clear_cache();
            sn.clear_cache();
        }
        self.relu_out.clear_cache();
    }
}

// ---------------------------------------------------------------------------
// Composition
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub enum Module {
    Conv(Conv2d),
    Linear(Linear),
    Relu(Relu),
    MaxPool(MaxPool2d),
    GlobalAvgPool(GlobalAvgPool),
    GroupNorm(GroupNorm),
    Residual(ResidualBlock),
}

impl Module {
    fn inner(&self) -> &dyn Layer {
        match self {
            Module::Conv(l) => l,
            Module::Linear(l) => l,
            Module::Relu(l) => l,
            Module::MaxPool(l) => l,
            Module::GlobalAvgPool(l) => l,
            Module::GroupNorm(l) => l,
            Module::Residual(l) => l,
        }
    }

    fn inner_mut(&mut self) -> &mut dyn Layer {
        match self {
            Module::Conv(l) => l,
            Module::Linear(l) => l,
            Module::Relu(l) => l,
            Module::MaxPool(l) => l,
            Module::GlobalAvgPool(l) => l,
            Module::GroupNorm(l) => l,
            Module::Residual(l) => l,
        }
    }
}

impl Layer for Module {
    fn forward(&self, x: &Tensor) -> Tensor {
        self.inner().forward(x)
    }
    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        self.inner_mut().forward_train(x)
    }
    fn backward(&mut self, grad: &Tensor) -> Tensor {
        self.inner_mut().backward(grad)
    }
    fn params(&self) -> Vec<&Param> {
        self.inner().params()
    }
    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.inner_mut().params_mut()
    }
    fn clear_cache(&mut self) {
        self.inner_mut().clear_cache()
    }
}

#[derive(Clone, Debug, Default)]
pub struct Sequential {
    pub modules: Vec<Module>,
}

impl Sequential {
    pub fn new(modules: Vec<Module>) -> Self {
        Self { modules }
    }

    /// Dense stack `dims[0] -> dims[1] -> ... -> dims[last]` with ReLU between
    /// layers (none after the last).
    pub fn mlp<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let mut modules = Vec::new();
        for (i, pair) in dims.windows(2).enumerate() {
            modules.push(Module::Linear(Linear::new(pair[0], pair[1], rng)));
            if i + 2 < dims.len() {
                modules.push(Module::Relu(Relu::default()));
            }
        }
        Self { modules }
    }

    pub fn num_params(&self) -> usize {
        self.params().iter().map(|p| p.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    /// All parameter values concatenated in declaration order.
    pub fn flat_params(&self) -> Vec<f32> {
        self.params().iter().flat_map(|p| p.value.iter().copied()).collect()
    }

    pub fn load_flat_params(&mut self, flat: &[f32]) -> Result<(), crate::NnError> {
        let expected = self.num_params();
        if flat.len() != expected {
            return Err(crate::NnError::ParamLength { expected, got: flat.len() });
        }
        let mut offset = 0;
        for p in self.params_mut() {
            let len = p.len();
            p.value.copy_from_slice(&flat[offset..offset + len]);
            offset += len;
        }
        Ok(())
    }
}

impl Layer for Sequential {
    fn forward(&self, x: &Tensor) -> Tensor {
        let mut it = self.modules.iter();
        let Some(first) = it.next() else { return x.clone() };
        it.fold(first.forward(x), |h, m| m.forward(&h))
    }

    fn forward_train(&mut self, x: &Tensor) -> Tensor {
        let mut it = self.modules.iter_mut();
        let Some(first) = it.next() else { return x.clone() };
        let h = first.forward_train(x);
        it.fold(h, |h, m| m.forward_train(&h))
    }

    fn backward(&mut self, grad: &Tensor) -> Tensor {
        let mut it = self.modules.iter_mut().rev();
        let Some(last) = it.next() else { return grad.clone() };
        let g = last.backward(grad);
        it.fold(g, |g, m| m.backward(&g))
    }

    fn params(&self) -> Vec<&Param> {
        self.modules.iter().flat_map(|m| m.params()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.modules.iter_mut().flat_map(|m| m.params_mut()).collect()
    }

    fn clear_cache(&mut self) {
        self.modules.iter_mut().for_each(|m| m.clear_cache());
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
        let len = shape.iter().product();
        Tensor::from_vec(shape, (0..len).map(|_| rng.random_range(-1.0..1.0)).collect())
    }

    /// Scalar objective `sum(out * probe)` so that d/d(out) = probe.
    fn objective<L: Layer>(layer: &L, x: &Tensor, probe: &Tensor) -> f64 {
        layer
            .forward(x)
            .data()
            .iter()
            .zip(probe.data())
            .map(|(a, b)| *a as f64 * *b as f64)
            .sum()
    }

    /// Checks input and parameter gradients against central differences.
    fn check_gradients<L: Layer + Clone>(mut layer: L, x: Tensor, rng: &mut ChaCha8Rng) {
        let out = layer.forward(&x);
        let probe = random_tensor(out.shape(), rng);
        layer.params_mut().into_iter().for_each(Param::zero_grad);
        layer.forward_train(&x);
        let dx = layer.backward(&probe);
        let eps = 1e-2f32;
        let tol = |a: f64, b: f64| (a - b).abs() <= 2e-2 * a.abs().max(b.abs()).max(1e-1);

        for i in (0..x.len()).step_by((x.len() / 17).max(1)) {
            let mut xp = x.clone();
            xp.data_mut()[i] += eps;
            let mut xm = x.clone();
            xm.data_mut()[i] -= eps;
            let fd = (objective(&layer, &xp, &probe) - objective(&layer, &xm, &probe)) / (2.0 * eps as f64);
            assert!(tol(fd, dx.data()[i] as f64), "input grad {i}: fd {fd} vs {}", dx.data()[i]);
        }

        let grads: Vec<Vec<f32>> = layer.params().iter().map(|p| p.grad.clone()).collect();
        for (pi, grad) in grads.iter().enumerate() {
            let len = grad.len();
            for j in (0..len).step_by((len / 11).max(1)) {
                let mut plus = layer.clone();
                plus.params_mut()[pi].value[j] += eps;
                let mut minus = layer.clone();
                minus.params_mut()[pi].value[j] -= eps;
                let fd = (objective(&plus, &x, &probe) - objective(&minus, &x, &probe)) / (2.0 * eps as f64);
                assert!(tol(fd, grad[j] as f64), "param {pi}[{j}]: fd {fd} vs {}", grad[j]);
            }
        }
    }

    #[test]
    fn conv_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let conv = Conv2d::new(2, 3, 3, 2, 1, &mut rng);
        let x = random_tensor(&[2, 2, 5, 5], &mut rng);
        check_gradients(conv, x, &mut rng);
    }

    #[test]
    fn linear_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let lin = Linear::new(6, 4, &mut rng);
        let x = random_tensor(&[3, 6], &mut rng);
        check_gradients(lin, x, &mut rng);
    }

    #[test]
    fn residual_block_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let block = ResidualBlock::new(2, 4, 2, &mut rng);
        let x = random_tensor(&[1, 2, 6, 6], &mut rng);
        check_gradients(block, x, &mut rng);
    }

    #[test]
    fn group_norm_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut gn = GroupNorm::new(4, 2);
        gn.gamma.value = vec![0.5, 1.5, -1.0, 2.0];
        gn.beta.value = vec![0.1, -0.2, 0.3, 0.0];
        let x = random_tensor(&[2, 4, 3, 3], &mut rng);
        check_gradients(gn, x, &mut rng);
    }

    #[test]
    fn group_norm_standardises_groups() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let x = random_tensor(&[1, 4, 5, 5], &mut rng);
        let y = GroupNorm::new(4, 2).forward(&x);
        for g in y.data().chunks(50) {
            let mean: f32 = g.iter().sum::<f32>() / 50.0;
            let var: f32 = g.iter().map(|v| (v - mean).powi(2)).sum::<f32>() / 50.0;
            assert!(mean.abs() < 1e-5 && (var - 1.0).abs() < 1e-3);
        }
        assert_eq!(GroupNorm::default_groups(8), 4);
        assert_eq!(GroupNorm::default_groups(32), 8);
        assert_eq!(GroupNorm::default_groups(3), 1);
    }

    #[test]
    fn pooled_stack_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let net = Sequential::new(vec![
            Module::Conv(Conv2d::new(1, 2, 3, 1, 1, &mut rng)),
            Module::Relu(Relu::default()),
            Module::MaxPool(MaxPool2d::default()),
            Module::GlobalAvgPool(GlobalAvgPool::default()),
            Module::Linear(Linear::new(2, 3, &mut rng)),
        ]);
        let x = random_tensor(&[2, 1, 6, 6], &mut rng);
        check_gradients(net, x, &mut rng);
    }

    #[test]
    fn conv_output_shape() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let conv = Conv2d::new(3, 8, 3, 2, 1, &mut rng);
        let out = conv.forward(&Tensor::zeros(&[4, 3, 32, 32]));
        assert_eq!(out.shape(), &[4, 8, 16, 16]);
    }

    #[test]
    fn flat_params_roundtrip_and_length_check() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let mut mlp = Sequential::mlp(&[4, 8, 2], &mut rng);
        let flat = mlp.flat_params();
        assert_eq!(flat.len(), 4 * 8 + 8 + 8 * 2 + 2);
        let zeros = vec![0.0; flat.len()];
        mlp.load_flat_params(&zeros).unwrap();
        assert!(mlp.flat_params().iter().all(|&v| v == 0.0));
        assert!(mlp.load_flat_params(&zeros[1..]).is_err());
    }
}
