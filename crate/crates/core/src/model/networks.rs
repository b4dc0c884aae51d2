use disentangle_tensor::nn::softmax;
use disentangle_tensor::{Real, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::layers::{Conv, ConvSpec, Dense, Norm, ParamSet};
use super::ModelConfig;
use crate::data::AttributeSchema;
use crate::{Error, Result};

/// Conv stack `E_m`: reflect-pad 3, 7x7 conv, IN, ReLU, then two stride-2
/// 3x3 conv + IN + ReLU blocks. Output `[b, 4w, H/4, W/4]`.
#[derive(Debug, Clone)]
pub struct Encoder<T: Real> {
    pub params: ParamSet<T>,
    convs: Vec<Conv>,
    norms: Vec<Norm>,
}

impl<T: Real> Encoder<T> {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let w = cfg.base_width;
        let mut p = ParamSet::new();
        let specs = [
            ConvSpec { in_ch: 3, out_ch: w, kernel: 7, stride: 1, pad: 0, reflect: 3 },
            ConvSpec { in_ch: w, out_ch: 2 * w, kernel: 3, stride: 2, pad: 1, reflect: 0 },
            ConvSpec { in_ch: 2 * w, out_ch: 4 * w, kernel: 3, stride: 2, pad: 1, reflect: 0 },
        ];
        let mut convs = Vec::new();
        let mut norms = Vec::new();
        for (i, spec) in specs.into_iter().enumerate() {
            let out = spec.out_ch;
            convs.push(Conv::new(&mut p, &format!("enc{}", i + 1), spec, rng));
            norms.push(Norm::new(&mut p, &format!("enc{}.norm", i + 1), out, cfg.norm_eps));
        }
        Self { params: p, convs, norms }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = x.clone();
        for (c, n) in self.convs.iter().zip(&self.norms) {
            h = n.forward(&self.params, &c.forward(&self.params, &h)).relu();
        }
        h
    }
}

/// Residual blocks at width `4w(M+1)`, two resize-conv upsampling blocks,
/// then a 7x7 conv to RGB and `tanh`.
#[derive(Debug, Clone)]
pub struct Decoder<T: Real> {
    pub params: ParamSet<T>,
    input_channels: usize,
    res: Vec<(Conv, Norm)>,
    up: Vec<(Conv, Norm)>,
    out: Conv,
}

impl<T: Real> Decoder<T> {
    fn new(cfg: &ModelConfig, codes: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = cfg.base_width;
        let c = cfg.code_channels() * codes;
        let mut p = ParamSet::new();
        let res = (0..cfg.res_blocks)
            .map(|i| {
                let name = format!("res{}", i + 1);
                let conv = Conv::new(
                    &mut p,
                    &name,
                    ConvSpec { in_ch: c, out_ch: c, kernel: 3, stride: 1, pad: 1, reflect: 0 },
                    rng,
                );
                (conv, Norm::new(&mut p, &format!("{name}.norm"), c, cfg.norm_eps))
            })
            .collect();
        let up = [(c, 2 * w), (2 * w, w)]
            .into_iter()
            .enumerate()
            .map(|(i, (cin, cout))| {
                let name = format!("dec{}", i + 1);
                let conv = Conv::new(
                    &mut p,
                    &name,
                    ConvSpec { in_ch: cin, out_ch: cout, kernel: 3, stride: 1, pad: 0, reflect: 1 },
                    rng,
                );
                (conv, Norm::new(&mut p, &format!("{name}.norm"), cout, cfg.norm_eps))
            })
            .collect();
        let out = Conv::new(
            &mut p,
            "dec3",
            ConvSpec { in_ch: w, out_ch: 3, kernel: 7, stride: 1, pad: 0, reflect: 3 },
            rng,
        );
        Self {
            params: p,
            input_channels: c,
            res,
            up,
            out,
        }
    }

    pub fn input_channels(&self) -> usize {
        self.input_channels
    }

    /// Decodes a channel-concatenated code tensor.
    pub fn forward(&self, z: &Tensor<T>) -> Tensor<T> {
        let p = &self.params;
        let mut h = z.clone();
        for (conv, norm) in &self.res {
            h = h.add(&norm.forward(p, &conv.forward(p, &h)).relu());
        }
        for (conv, norm) in &self.up {
            h = norm.forward(p, &conv.forward(p, &h.upsample_nearest2d(2))).relu();
        }
        self.out.forward(p, &h).tanh()
    }
}

/// `C_m`: two stride-2 4x4 conv + LeakyReLU blocks, then a dense head to
/// class logits. Block 2 output has the latent code shape, so codes can be
/// fed straight into the head.
#[derive(Debug, Clone)]
pub struct Classifier<T: Real> {
    pub params: ParamSet<T>,
    blocks: Vec<Conv>,
    head: Dense,
    slope: f64,
    classes: usize,
}

impl<T: Real> Classifier<T> {
    pub fn new(cfg: &ModelConfig, classes: usize, rng: &mut ChaCha8Rng) -> Self {
        let w = cfg.base_width;
        let mut p = ParamSet::new();
        let blocks = vec![
            Conv::new(
                &mut p,
                "block1",
                ConvSpec { in_ch: 3, out_ch: 2 * w, kernel: 4, stride: 2, pad: 1, reflect: 0 },
                rng,
            ),
            Conv::new(
                &mut p,
                "block2",
                ConvSpec { in_ch: 2 * w, out_ch: 4 * w, kernel: 4, stride: 2, pad: 1, reflect: 0 },
                rng,
            ),
        ];
        let [c, h, wd] = cfg.code_shape();
        let head = Dense::new(&mut p, "logits", c * h * wd, classes, rng);
        Self {
            params: p,
            blocks,
            head,
            slope: cfg.leaky_slope,
            classes,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    /// Block-2 activations, `[b, 4w, H/4, W/4]`.
    pub fn features(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = x.clone();
        for b in &self.blocks {
            h = b.forward(&self.params, &h).leaky_relu(self.slope);
        }
        h
    }

    pub fn head_logits(&self, z: &Tensor<T>) -> Tensor<T> {
        self.head.forward(&self.params, z)
    }

    pub fn logits(&self, x: &Tensor<T>) -> Tensor<T> {
        self.head_logits(&self.features(x))
    }

    pub fn head_bias(&self) -> &Tensor<T> {
        self.head.bias(&self.params)
    }
}

/// Patch critic: strided 4x4 conv + LeakyReLU layers doubling channels
/// from `2w`, then a 3x3 conv to one score per patch. No output squashing.
#[derive(Debug, Clone)]
pub struct Critic<T: Real> {
    pub params: ParamSet<T>,
    layers: Vec<Conv>,
    out: Conv,
    slope: f64,
}

impl<T: Real> Critic<T> {
    fn new(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let mut p = ParamSet::new();
        let mut layers = Vec::new();
        let mut cin = 3;
        let mut cout = 2 * cfg.base_width;
        for i in 0..cfg.critic_depth() {
            layers.push(Conv::new(
                &mut p,
                &format!("layer{}", i + 1),
                ConvSpec { in_ch: cin, out_ch: cout, kernel: 4, stride: 2, pad: 1, reflect: 0 },
                rng,
            ));
            cin = cout;
            cout = (cout * 2).min(cfg.critic_max_channels);
        }
        let out = Conv::new(
            &mut p,
            "score",
            ConvSpec { in_ch: cin, out_ch: 1, kernel: 3, stride: 1, pad: 1, reflect: 0 },
            rng,
        );
        Self {
            params: p,
            layers,
            out,
            slope: cfg.leaky_slope,
        }
    }

    /// Copy that passes gradients to its input but not to its parameters.
    pub fn detached(&self) -> Self {
        Self {
            params: self.params.detached(),
            ..self.clone()
        }
    }

    /// Patch score map `[b, 1, h, w]`.
    pub fn score_map(&self, x: &Tensor<T>) -> Tensor<T> {
        let mut h = x.clone();
        for l in &self.layers {
            h = l.forward(&self.params, &h).leaky_relu(self.slope);
        }
        self.out.forward(&self.params, &h)
    }

    /// Mean patch score per image, `[b]`.
    pub fn value(&self, x: &Tensor<T>) -> Tensor<T> {
        self.score_map(x).flatten_batch().mean_axis(1)
    }
}

/// The `M + 1` latent codes of a batch. `codes[m]` is `[b, 4w, H/4, W/4]`.
#[derive(Debug, Clone)]
pub struct LatentBundle<T: Real> {
    pub codes: Vec<Tensor<T>>,
    /// Index of the encoder that produced each code.
    pub sources: Vec<usize>,
}

impl<T: Real> LatentBundle<T> {
    pub fn batch_size(&self) -> usize {
        self.codes[0].dim(0)
    }

    /// Number of modelled attributes `M` (codes minus the nuisance code).
    pub fn attributes(&self) -> usize {
        self.codes.len() - 1
    }

    /// Channel-concatenated decoder input.
    pub fn concat(&self) -> Tensor<T> {
        Tensor::concat(&self.codes, 1)
    }

    /// Rows `index` of every code.
    pub fn select(&self, index: &[usize]) -> Self {
        Self {
            codes: self.codes.iter().map(|c| c.index_select0(index)).collect(),
            sources: self.sources.clone(),
        }
    }

    pub fn detach(&self) -> Self {
        Self {
            codes: self.codes.iter().map(Tensor::detach).collect(),
            sources: self.sources.clone(),
        }
    }
}

/// All trainable networks for one attribute schema.
#[derive(Debug, Clone)]
pub struct Networks<T: Real> {
    pub config: ModelConfig,
    pub schema: AttributeSchema,
    pub encoders: Vec<Encoder<T>>,
    pub decoder: Decoder<T>,
    pub classifiers: Vec<Classifier<T>>,
    pub critic: Critic<T>,
}

/// Parameter groups updated by separate objectives.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Group {
    /// Encoders and decoder.
    Generator,
    Classifiers,
    Critic,
}

impl<T: Real> Networks<T> {
    pub fn new(config: ModelConfig, schema: AttributeSchema, seed: u64) -> Result<Self> {
        config.validate()?;
        schema.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = schema.len();
        let encoders = (0..=m).map(|_| Encoder::new(&config, &mut rng)).collect();
        let decoder = Decoder::new(&config, m + 1, &mut rng);
        let classifiers = schema
            .class_counts()
            .into_iter()
            .map(|k| Classifier::new(&config, k, &mut rng))
            .collect();
        let critic = Critic::new(&config, &mut rng);
        let nets = Self {
            config,
            schema,
            encoders,
            decoder,
            classifiers,
            critic,
        };
        nets.check_injection_compatibility()?;
        Ok(nets)
    }

    /// Encoder output and classifier block-2 output must agree in shape.
    fn check_injection_compatibility(&self) -> Result<()> {
        let s = self.config.image_size;
        let probe = Tensor::<T>::zeros(&[1, 3, s, s]);
        let z = disentangle_tensor::no_grad(|| self.encoders[0].forward(&probe));
        for (m, c) in self.classifiers.iter().enumerate() {
            let f = disentangle_tensor::no_grad(|| c.features(&probe));
            if f.shape() != z.shape() {
                return Err(Error::Shape(format!(
                    "classifier {} block-2 output {:?} differs from code shape {:?}",
                    m + 1,
                    f.shape(),
                    z.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn attributes(&self) -> usize {
        self.schema.len()
    }

    fn check_images(&self, x: &Tensor<T>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 3 {
            return Err(Error::Shape(format!("expected [b, 3, H, W] images, got {s:?}")));
        }
        if s[2] % 4 != 0 || s[3] % 4 != 0 {
            return Err(Error::Shape(format!("image dims {}x{} not divisible by 4", s[2], s[3])));
        }
        Ok(())
    }

    fn check_classifier_input(&self, x: &Tensor<T>) -> Result<()> {
        self.check_images(x)?;
        let s = self.config.image_size;
        if x.dim(2) != s || x.dim(3) != s {
            return Err(Error::Shape(format!(
                "classifier expects {s}x{s} images, got {}x{}",
                x.dim(2),
                x.dim(3)
            )));
        }
        Ok(())
    }

    pub fn encode(&self, m: usize, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_images(x)?;
        let enc = self.encoders.get(m).ok_or_else(|| {
            Error::Contract(format!("encoder index {m} out of range 0..={}", self.attributes()))
        })?;
        Ok(enc.forward(x))
    }

    pub fn encode_all(&self, x: &Tensor<T>) -> Result<LatentBundle<T>> {
        self.check_images(x)?;
        Ok(LatentBundle {
            codes: self.encoders.iter().map(|e| e.forward(x)).collect(),
            sources: (0..self.encoders.len()).collect(),
        })
    }

    pub fn decode(&self, bundle: &LatentBundle<T>) -> Result<Tensor<T>> {
        let b = bundle.batch_size();
        let spatial = &bundle.codes[0].shape()[2..];
        for c in &bundle.codes {
            if c.dims() != 4 || c.dim(0) != b || &c.shape()[2..] != spatial {
                return Err(Error::Shape(format!("code shapes differ: {:?}", c.shape())));
            }
        }
        let z = bundle.concat();
        if z.dim(1) != self.decoder.input_channels() {
            return Err(Error::Shape(format!(
                "decoder expects {} channels, got {}",
                self.decoder.input_channels(),
                z.dim(1)
            )));
        }
        Ok(self.decoder.forward(&z))
    }

    fn classifier(&self, m: usize) -> Result<&Classifier<T>> {
        self.schema.check_index(m)?;
        Ok(&self.classifiers[m - 1])
    }

    pub fn classify_image_logits(&self, x: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
        let c = self.classifier(m)?;
        self.check_classifier_input(x)?;
        Ok(c.logits(x))
    }

    /// Class PMF per sample, `[b, |m|]`.
    pub fn classify_image(&self, x: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
        Ok(softmax(&self.classify_image_logits(x, m)?))
    }

    pub fn classify_latent_logits(&self, z: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
        let c = self.classifier(m)?;
        let [ch, h, w] = self.config.code_shape();
        if z.dims() != 4 || z.shape()[1..] != [ch, h, w] {
            return Err(Error::Shape(format!(
                "latent {:?} does not match block-2 output [b, {ch}, {h}, {w}]",
                z.shape()
            )));
        }
        Ok(c.head_logits(z))
    }

    /// Applies only the dense head of `C_m` to a code.
    pub fn classify_latent(&self, z: &Tensor<T>, m: usize) -> Result<Tensor<T>> {
        Ok(softmax(&self.classify_latent_logits(z, m)?))
    }

    /// Patch score map `[b, 1, h, w]`.
    pub fn critic_score(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_images(x)?;
        Ok(self.critic.score_map(x))
    }

    /// Mean patch score per image, `[b]`.
    pub fn critic_value(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_images(x)?;
        Ok(self.critic.value(x))
    }

    pub fn param_sets(&self, group: Group) -> Vec<&ParamSet<T>> {
        match group {
            Group::Generator => self
                .encoders
                .iter()
                .map(|e| &e.params)
                .chain(std::iter::once(&self.decoder.params))
                .collect(),
            Group::Classifiers => self.classifiers.iter().map(|c| &c.params).collect(),
            Group::Critic => vec![&self.critic.params],
        }
    }

    pub fn param_sets_mut(&mut self, group: Group) -> Vec<&mut ParamSet<T>> {
        match group {
            Group::Generator => self
                .encoders
                .iter_mut()
                .map(|e| &mut e.params)
                .chain(std::iter::once(&mut self.decoder.params))
                .collect(),
            Group::Classifiers => self.classifiers.iter_mut().map(|c| &mut c.params).collect(),
            Group::Critic => vec![&mut self.critic.params],
        }
    }

    /// Every parameter tensor of a group, in a fixed order.
    pub fn params(&self, group: Group) -> Vec<&Tensor<T>> {
        self.param_sets(group).into_iter().flat_map(|p| p.tensors()).collect()
    }

    pub fn param_count(&self, group: Group) -> usize {
        self.param_sets(group).iter().map(|p| p.count()).sum()
    }

    /// Copy in which the listed groups no longer receive gradients. Storage
    /// is shared, so this is cheap.
    pub fn detached(&self, groups: &[Group]) -> Self {
        let mut out = self.clone();
        for &g in groups {
            for p in out.param_sets_mut(g) {
                *p = p.detached();
            }
        }
        out
    }

    /// Submodules in checkpoint order, with their blob names.
    pub fn named_param_sets(&self) -> Vec<(String, &ParamSet<T>)> {
        let mut out: Vec<(String, &ParamSet<T>)> = self
            .encoders
            .iter()
            .enumerate()
            .map(|(i, e)| (format!("encoder_{i}"), &e.params))
            .collect();
        out.push(("decoder".into(), &self.decoder.params));
        out.extend(
            self.classifiers
                .iter()
                .enumerate()
                .map(|(i, c)| (format!("classifier_{}", i + 1), &c.params)),
        );
        out.push(("critic".into(), &self.critic.params));
        out
    }

    pub fn named_param_sets_mut(&mut self) -> Vec<(String, &mut ParamSet<T>)> {
        let mut out: Vec<(String, &mut ParamSet<T>)> = self
            .encoders
            .iter_mut()
            .enumerate()
            .map(|(i, e)| (format!("encoder_{i}"), &mut e.params))
            .collect();
        out.push(("decoder".into(), &mut self.decoder.params));
        out.extend(
            self.classifiers
                .iter_mut()
                .enumerate()
                .map(|(i, c)| (format!("classifier_{}", i + 1), &mut c.params)),
        );
        out.push(("critic".into(), &mut self.critic.params));
        out
    }

    /// Same architecture with every parameter converted to `U`.
    pub fn cast<U: Real>(&self) -> Networks<U> {
        let mut out = Networks::<U>::new(self.config.clone(), self.schema.clone(), 0).expect("valid source");
        for ((_, dst), (_, src)) in out.named_param_sets_mut().into_iter().zip(self.named_param_sets()) {
            for i in 0..src.len() {
                dst.set(i, src.get(i).cast::<U>().to_vec());
            }
        }
        out
    }
}
