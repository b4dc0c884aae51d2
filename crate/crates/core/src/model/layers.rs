//! Parameter storage and the few layer types the networks are built from.
//! Layers hold indices into their network's [`ParamSet`].

use disentangle_tensor::nn::{add_channel_bias, instance_norm, linear};
use disentangle_tensor::{Real, Tensor};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Named trainable tensors of one network, in registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamSet<T: Real> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    fn add(&mut self, name: String, t: Tensor<T>) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    /// Replaces tensor `i`; the new value becomes a fresh differentiable leaf.
    pub fn set(&mut self, i: usize, data: Vec<T>) {
        let shape = self.tensors[i].shape().to_vec();
        assert_eq!(data.len(), self.tensors[i].numel(), "parameter {} size", self.names[i]);
        self.tensors[i] = Tensor::leaf(data, &shape);
    }

    /// Copy whose tensors share storage but are cut from differentiation.
    pub fn detached(&self) -> Self {
        Self {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::detach).collect(),
        }
    }

    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }
}

fn uniform<T: Real>(rng: &mut ChaCha8Rng, n: usize, bound: f64) -> Vec<T> {
    (0..n).map(|_| T::lit(rng.gen_range(-bound..bound))).collect()
}

/// 2-D convolution with bias. `reflect` pixels of reflection padding are
/// applied before the (zero-padded) convolution.
#[derive(Debug, Clone)]
pub struct Conv {
    weight: usize,
    bias: usize,
    pub stride: usize,
    pub pad: usize,
    pub reflect: usize,
}

pub struct ConvSpec {
    pub in_ch: usize,
    pub out_ch: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub reflect: usize,
}

impl Conv {
    pub fn new<T: Real>(p: &mut ParamSet<T>, name: &str, spec: ConvSpec, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = spec.in_ch * spec.kernel * spec.kernel;
        let bound = 1.0 / (fan_in as f64).sqrt();
        let wshape = [spec.out_ch, spec.in_ch, spec.kernel, spec.kernel];
        let weight = p.add(
            format!("{name}.weight"),
            Tensor::leaf(uniform(rng, wshape.iter().product(), bound), &wshape),
        );
        let bias = p.add(
            format!("{name}.bias"),
            Tensor::leaf(uniform(rng, spec.out_ch, bound), &[spec.out_ch]),
        );
        Self {
            weight,
            bias,
            stride: spec.stride,
            pad: spec.pad,
            reflect: spec.reflect,
        }
    }

    pub fn forward<T: Real>(&self, p: &ParamSet<T>, x: &Tensor<T>) -> Tensor<T> {
        let x = if self.reflect > 0 {
            x.reflect_pad2d(self.reflect)
        } else {
            x.clone()
        };
        add_channel_bias(&x.conv2d(p.get(self.weight), self.stride, self.pad), p.get(self.bias))
    }
}

#[derive(Debug, Clone)]
pub struct Norm {
    gamma: usize,
    beta: usize,
    eps: f64,
}

impl Norm {
    pub fn new<T: Real>(p: &mut ParamSet<T>, name: &str, channels: usize, eps: f64) -> Self {
        let gamma = p.add(format!("{name}.gamma"), Tensor::leaf(vec![T::one(); channels], &[channels]));
        let beta = p.add(format!("{name}.beta"), Tensor::leaf(vec![T::zero(); channels], &[channels]));
        Self { gamma, beta, eps }
    }

    pub fn forward<T: Real>(&self, p: &ParamSet<T>, x: &Tensor<T>) -> Tensor<T> {
        instance_norm(x, p.get(self.gamma), p.get(self.beta), self.eps)
    }
}

/// Fully connected layer, `weight: [in, out]`.
#[derive(Debug, Clone)]
pub struct Dense {
    weight: usize,
    bias: usize,
}

impl Dense {
    pub fn new<T: Real>(p: &mut ParamSet<T>, name: &str, inputs: usize, outputs: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (inputs as f64).sqrt();
        let weight = p.add(
            format!("{name}.weight"),
            Tensor::leaf(uniform(rng, inputs * outputs, bound), &[inputs, outputs]),
        );
        let bias = p.add(format!("{name}.bias"), Tensor::leaf(uniform(rng, outputs, bound), &[outputs]));
        Self { weight, bias }
    }

    pub fn forward<T: Real>(&self, p: &ParamSet<T>, x: &Tensor<T>) -> Tensor<T> {
        linear(&x.flatten_batch(), p.get(self.weight), p.get(self.bias))
    }

    pub fn bias<'a, T: Real>(&self, p: &'a ParamSet<T>) -> &'a Tensor<T> {
        p.get(self.bias)
    }
}
