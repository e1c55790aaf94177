//! ResNet18 with a replaceable fully connected head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::layers::{
    BatchNorm2d, Conv2d, GlobalAvgPool, Layer, Linear, MaxPool2d, Mode, Param, Relu, Window,
};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const CONV3: Window = Window { kernel: 3, stride: 1, pad: 1 };
const CONV3_DOWN: Window = Window { kernel: 3, stride: 2, pad: 1 };
const PROJECT: Window = Window { kernel: 1, stride: 2, pad: 0 };
const STEM: Window = Window { kernel: 7, stride: 2, pad: 3 };
const STEM_POOL: Window = Window { kernel: 3, stride: 2, pad: 1 };

/// Stage widths and depths. The first stage keeps the stem resolution; each
/// later stage halves it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResNetConfig {
    pub in_channels: usize,
    pub stem_width: usize,
    pub widths: Vec<usize>,
    pub blocks: Vec<usize>,
    pub num_outputs: usize,
}

impl ResNetConfig {
    pub fn resnet18(num_outputs: usize) -> Self {
        ResNetConfig {
            in_channels: 3,
            stem_width: 64,
            widths: vec![64, 128, 256, 512],
            blocks: vec![2, 2, 2, 2],
            num_outputs,
        }
    }

    /// Same topology at a fraction of the width, for numerical checks.
    pub fn tiny(num_outputs: usize) -> Self {
        ResNetConfig {
            in_channels: 3,
            stem_width: 4,
            widths: vec![4, 6],
            blocks: vec![1, 1],
            num_outputs,
        }
    }

    pub fn feature_width(&self) -> usize {
        *self.widths.last().unwrap_or(&self.stem_width)
    }
}

pub struct BasicBlock<T> {
    conv1: Conv2d<T>,
    bn1: BatchNorm2d<T>,
    relu1: Relu,
    conv2: Conv2d<T>,
    bn2: BatchNorm2d<T>,
    downsample: Option<(Conv2d<T>, BatchNorm2d<T>)>,
    relu_out: Relu,
}

impl<T: Scalar> BasicBlock<T> {
    pub fn new(inputs: usize, outputs: usize, stride: usize, rng: &mut impl Rng) -> Self {
        let first = if stride == 1 { CONV3 } else { CONV3_DOWN };
        let downsample = (stride != 1 || inputs != outputs).then(|| {
            let window = Window { stride, ..PROJECT };
            (Conv2d::new(inputs, outputs, window, rng), BatchNorm2d::new(outputs))
        });
        BasicBlock {
            conv1: Conv2d::new(inputs, outputs, first, rng),
            bn1: BatchNorm2d::new(outputs),
            relu1: Relu::default(),
            conv2: Conv2d::new(outputs, outputs, CONV3, rng),
            bn2: BatchNorm2d::new(outputs),
            downsample,
            relu_out: Relu::default(),
        }
    }
}

impl<T: Scalar> Layer<T> for BasicBlock<T> {
    fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Tensor<T> {
        let skip = match &mut self.downsample {
            Some((conv, bn)) => {
                let s = conv.forward(x.clone(), mode);
                bn.forward(s, mode)
            }
            None => x.clone(),
        };
        let y = self.conv1.forward(x, mode);
        let y = self.bn1.forward(y, mode);
        let y = self.relu1.forward(y, mode);
        let y = self.conv2.forward(y, mode);
        let mut y = self.bn2.forward(y, mode);
        y.add_assign(&skip);
        self.relu_out.forward(y, mode)
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let g = self.relu_out.backward(grad);
        let skip = match &mut self.downsample {
            Some((conv, bn)) => {
                let s = bn.backward(g.clone());
                conv.backward(s)
            }
            None => g.clone(),
        };
        let g = self.bn2.backward(g);
        let g = self.conv2.backward(g);
        let g = self.relu1.backward(g);
        let g = self.bn1.backward(g);
        let mut dx = self.conv1.backward(g);
        dx.add_assign(&skip);
        dx
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.conv1.visit_params(f);
        self.bn1.visit_params(f);
        self.conv2.visit_params(f);
        self.bn2.visit_params(f);
        if let Some((conv, bn)) = &mut self.downsample {
            conv.visit_params(f);
            bn.visit_params(f);
        }
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<T>)) {
        self.bn1.visit_buffers(f);
        self.bn2.visit_buffers(f);
        if let Some((_, bn)) = &mut self.downsample {
            bn.visit_buffers(f);
        }
    }
}

pub struct ResNet<T> {
    config: ResNetConfig,
    stem: Conv2d<T>,
    stem_bn: BatchNorm2d<T>,
    stem_relu: Relu,
    pool: MaxPool2d,
    blocks: Vec<BasicBlock<T>>,
    gap: GlobalAvgPool,
    pub head: Linear<T>,
}

impl<T: Scalar> ResNet<T> {
    pub fn new(config: &ResNetConfig, rng: &mut impl Rng) -> Self {
        let stem = Conv2d::new(config.in_channels, config.stem_width, STEM, rng).without_input_grad();
        let mut blocks = Vec::new();
        let mut width = config.stem_width;
        for (stage, (&out, &depth)) in config.widths.iter().zip(&config.blocks).enumerate() {
            for b in 0..depth {
                let stride = if stage > 0 && b == 0 { 2 } else { 1 };
                blocks.push(BasicBlock::new(width, out, stride, rng));
                width = out;
            }
        }
        let head = Linear::new(width, config.num_outputs, rng);
        ResNet {
            config: config.clone(),
            stem,
            stem_bn: BatchNorm2d::new(config.stem_width),
            stem_relu: Relu::default(),
            pool: MaxPool2d::new(STEM_POOL),
            blocks,
            gap: GlobalAvgPool::default(),
            head,
        }
    }

    pub fn config(&self) -> &ResNetConfig {
        &self.config
    }

    /// Pooled backbone features, `[N, C, H, W] -> [N, feature_width]`.
    pub fn features(&mut self, x: Tensor<T>, mode: Mode) -> Tensor<T> {
        let y = self.stem.forward(x, mode);
        let y = self.stem_bn.forward(y, mode);
        let y = self.stem_relu.forward(y, mode);
        let mut y = Layer::<T>::forward(&mut self.pool, y, mode);
        for block in &mut self.blocks {
            y = block.forward(y, mode);
        }
        Layer::<T>::forward(&mut self.gap, y, mode)
    }

    pub fn param_count(&mut self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |p| n += p.len());
        n
    }

    pub fn zero_grad(&mut self) {
        self.visit_params(&mut |p| p.zero_grad());
    }
}

impl<T: Scalar> Layer<T> for ResNet<T> {
    fn forward(&mut self, x: Tensor<T>, mode: Mode) -> Tensor<T> {
        let f = self.features(x, mode);
        self.head.forward(f, mode)
    }

    fn backward(&mut self, grad: Tensor<T>) -> Tensor<T> {
        let g = self.head.backward(grad);
        let mut g = Layer::<T>::backward(&mut self.gap, g);
        for block in self.blocks.iter_mut().rev() {
            g = block.backward(g);
        }
        let g = Layer::<T>::backward(&mut self.pool, g);
        let g = self.stem_relu.backward(g);
        let g = self.stem_bn.backward(g);
        self.stem.backward(g)
    }

    fn visit_params(&mut self, f: &mut dyn FnMut(&mut Param<T>)) {
        self.stem.visit_params(f);
        self.stem_bn.visit_params(f);
        for block in &mut self.blocks {
            block.visit_params(f);
        }
        self.head.visit_params(f);
    }

    fn visit_buffers(&mut self, f: &mut dyn FnMut(&mut Vec<T>)) {
        self.stem_bn.visit_buffers(f);
        for block in &mut self.blocks {
            block.visit_buffers(f);
        }
    }
}
