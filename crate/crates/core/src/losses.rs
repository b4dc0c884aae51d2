//! Every term of the composite objective, and their grouping into the
//! generator (`L_G`), critic (`L_D`) and classifier (`L_C`) totals.
//!
//! Functions that take `&Networks` differentiate through whatever parameters
//! of that value require gradients; callers pass a copy with the groups that
//! must stay untouched detached (see [`Networks::detached`]).

use disentangle_tensor::nn::{batch_l2_norm, log_softmax, softplus};
use disentangle_tensor::{grad, Real, Tensor};
use serde::{Deserialize, Serialize};

use crate::model::{LatentBundle, Networks};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub lambda_rec: f64,
    pub lambda_gp: f64,
    pub lambda_cls_x: f64,
    pub lambda_dis: f64,
    pub lambda_cls_synth: f64,
    pub lambda_adv: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            lambda_rec: 10.0,
            lambda_gp: 10.0,
            lambda_cls_x: 1.0,
            lambda_dis: 1.0,
            lambda_cls_synth: 1.0,
            lambda_adv: 1.0,
        }
    }
}

impl LossWeights {
    pub fn entries(&self) -> [(&'static str, f64); 6] {
        [
            ("lambda_rec", self.lambda_rec),
            ("lambda_gp", self.lambda_gp),
            ("lambda_cls_x", self.lambda_cls_x),
            ("lambda_dis", self.lambda_dis),
            ("lambda_cls_synth", self.lambda_cls_synth),
            ("lambda_adv", self.lambda_adv),
        ]
    }

    /// Problems found, one message each.
    pub fn problems(&self) -> Vec<String> {
        self.entries()
            .iter()
            .filter(|(_, v)| !(v.is_finite() && *v >= 0.0))
            .map(|(n, v)| format!("loss_weights.{n} must be finite and >= 0 (got {v})"))
            .collect()
    }
}

/// Adversarial objective used for `L_adv`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdversarialKind {
    /// Wasserstein critic with gradient penalty.
    #[default]
    WassersteinGp,
    /// Cross-entropy GAN with a sigmoid on the mean patch score.
    Saturating,
}

fn check_same_shape<T: Real>(a: &Tensor<T>, b: &Tensor<T>, what: &str) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::Shape(format!("{what}: {:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

/// Mean absolute error.
pub fn rec_loss<T: Real>(x: &Tensor<T>, x_hat: &Tensor<T>) -> Result<Tensor<T>> {
    check_same_shape(x, x_hat, "rec_loss")?;
    Ok(x.sub(x_hat).abs().mean_all())
}

fn one_hot<T: Real>(labels: &[usize], classes: usize) -> Result<Tensor<T>> {
    let mut data = vec![T::zero(); labels.len() * classes];
    for (i, &y) in labels.iter().enumerate() {
        if y >= classes {
            return Err(Error::Contract(format!("label {y} out of range for {classes} classes")));
        }
        data[i * classes + y] = T::one();
    }
    Ok(Tensor::from_vec(data, &[labels.len(), classes]))
}

/// Mean negative log-likelihood of `labels` under row-wise log-probabilities.
pub fn nll<T: Real>(log_probs: &Tensor<T>, labels: &[usize]) -> Result<Tensor<T>> {
    let (b, k) = (log_probs.dim(0), log_probs.dim(1));
    if labels.len() != b {
        return Err(Error::Shape(format!("{} labels for a batch of {b}", labels.len())));
    }
    Ok(log_probs.mul(&one_hot(labels, k)?).sum_all().scale(-1.0 / b as f64))
}

/// Cross-entropy from the uniform PMF to each row, averaged over the batch:
/// `-(1/K) sum_k log p_k`.
pub fn uniform_cross_entropy<T: Real>(log_probs: &Tensor<T>) -> Tensor<T> {
    let (b, k) = (log_probs.dim(0), log_probs.dim(1));
    log_probs.sum_all().scale(-1.0 / (b * k) as f64)
}

fn label_column(labels: &[Vec<usize>], m: usize) -> Vec<usize> {
    labels.iter().map(|l| l[m - 1]).collect()
}

fn check_labels(labels: &[Vec<usize>], b: usize, attrs: usize) -> Result<()> {
    if labels.len() != b || labels.iter().any(|l| l.len() != attrs) {
        return Err(Error::Shape(format!("label matrix is not {b} x {attrs}")));
    }
    Ok(())
}

/// `(1/M) sum_m NLL(y_m | C_m head applied to z_m)`. The nuisance code is not
/// classified.
pub fn latent_cls_loss<T: Real>(nets: &Networks<T>, bundle: &LatentBundle<T>, labels: &[Vec<usize>]) -> Result<Tensor<T>> {
    let m_count = nets.attributes();
    check_labels(labels, bundle.batch_size(), m_count)?;
    let mut total: Option<Tensor<T>> = None;
    for m in 1..=m_count {
        let lp = log_softmax(&nets.classify_latent_logits(&bundle.codes[m], m)?);
        let term = nll(&lp, &label_column(labels, m))?;
        total = Some(match total {
            Some(t) => t.add(&term),
            None => term,
        });
    }
    Ok(total.expect("M >= 1").scale(1.0 / m_count as f64))
}

/// The per-encoder disentanglement terms: entry `m` is the uniform
/// cross-entropy of `C_m'` on `z_m`, averaged over `m' != m` (over all
/// `m'` for the nuisance code). `None` where no `m'` exists (`M = 1`, `m = 1`).
pub fn disentangle_terms<T: Real>(nets: &Networks<T>, bundle: &LatentBundle<T>) -> Result<Vec<Option<Tensor<T>>>> {
    let m_count = nets.attributes();
    if bundle.codes.len() != m_count + 1 {
        return Err(Error::Shape(format!(
            "bundle has {} codes, schema needs {}",
            bundle.codes.len(),
            m_count + 1
        )));
    }
    (0..=m_count)
        .map(|m| {
            let others: Vec<usize> = (1..=m_count).filter(|&o| o != m).collect();
            if others.is_empty() {
                return Ok(None);
            }
            let mut acc: Option<Tensor<T>> = None;
            for &o in &others {
                let lp = log_softmax(&nets.classify_latent_logits(&bundle.codes[m], o)?);
                let ce = uniform_cross_entropy(&lp);
                acc = Some(match acc {
                    Some(a) => a.add(&ce),
                    None => ce,
                });
            }
            Ok(Some(acc.unwrap().scale(1.0 / others.len() as f64)))
        })
        .collect()
}

/// Mean of the existing [`disentangle_terms`].
pub fn disentangle_loss<T: Real>(nets: &Networks<T>, bundle: &LatentBundle<T>) -> Result<Tensor<T>> {
    let terms: Vec<Tensor<T>> = disentangle_terms(nets, bundle)?.into_iter().flatten().collect();
    let n = terms.len();
    let sum = terms.into_iter().reduce(|a, b| a.add(&b)).expect("m = 0 term always exists");
    Ok(sum.scale(1.0 / n as f64))
}

/// `(1/M) sum_m NLL(y_m | C_m(x))` on full images. Used both for the
/// shuffled-synthesis term (with induced labels) and for classifier training
/// on real images.
pub fn image_cls_loss<T: Real>(nets: &Networks<T>, x: &Tensor<T>, labels: &[Vec<usize>]) -> Result<Tensor<T>> {
    let m_count = nets.attributes();
    check_labels(labels, x.dim(0), m_count)?;
    let mut total: Option<Tensor<T>> = None;
    for m in 1..=m_count {
        let lp = log_softmax(&nets.classify_image_logits(x, m)?);
        let term = nll(&lp, &label_column(labels, m))?;
        total = Some(match total {
            Some(t) => t.add(&term),
            None => term,
        });
    }
    Ok(total.expect("M >= 1").scale(1.0 / m_count as f64))
}

pub fn synth_cls_loss<T: Real>(nets: &Networks<T>, x_synth: &Tensor<T>, expected_labels: &[Vec<usize>]) -> Result<Tensor<T>> {
    image_cls_loss(nets, x_synth, expected_labels)
}

/// Per-sample interpolates `eps_i x_real_i + (1 - eps_i) x_fake_i`, as a
/// fresh differentiable leaf.
pub fn interpolates<T: Real>(x_real: &Tensor<T>, x_fake: &Tensor<T>, eps: &[f64]) -> Result<Tensor<T>> {
    check_same_shape(x_real, x_fake, "interpolates")?;
    let b = x_real.dim(0);
    if eps.len() != b {
        return Err(Error::Shape(format!("{} epsilon draws for a batch of {b}", eps.len())));
    }
    let per = x_real.numel() / b.max(1);
    let data = x_real
        .data()
        .iter()
        .zip(x_fake.data())
        .enumerate()
        .map(|(i, (&r, &f))| {
            let e = T::lit(eps[i / per]);
            e * r + (T::one() - e) * f
        })
        .collect();
    Ok(Tensor::leaf(data, x_real.shape()))
}

/// `E[(||grad_x c(x)||_2 - 1)^2]` at the interpolates. `critic` maps a batch
/// to one value per sample; samples must not interact.
pub fn gradient_penalty<T: Real>(critic: impl Fn(&Tensor<T>) -> Tensor<T>, x_hat: &Tensor<T>) -> Tensor<T> {
    let out = critic(x_hat).sum_all();
    let g = grad(&out, &[x_hat], true)
        .pop()
        .flatten()
        .unwrap_or_else(|| Tensor::zeros(x_hat.shape()));
    batch_l2_norm(&g, 1e-16).add_scalar(-1.0).square().mean_all()
}

/// Critic-side adversarial quantities.
#[derive(Debug, Clone)]
pub struct CriticTerms<T: Real> {
    /// Loss minimised by the critic.
    pub loss: Tensor<T>,
    /// `E c(x_real) - E c(x_fake)` (Wasserstein form) or the cross-entropy
    /// value (saturating form).
    pub gap: Tensor<T>,
    pub gp: Tensor<T>,
}

/// Wasserstein critic loss `-(E c(real) - E c(fake)) + lambda_gp gp`.
pub fn critic_objective<T: Real>(
    critic: impl Fn(&Tensor<T>) -> Tensor<T>,
    x_real: &Tensor<T>,
    x_fake: &Tensor<T>,
    eps: &[f64],
    lambda_gp: f64,
) -> Result<CriticTerms<T>> {
    check_same_shape(x_real, x_fake, "critic_objective")?;
    let gap = critic(x_real).mean_all().sub(&critic(x_fake).mean_all());
    let x_hat = interpolates(&x_real.detach(), &x_fake.detach(), eps)?;
    let gp = gradient_penalty(&critic, &x_hat);
    Ok(CriticTerms {
        loss: gap.neg().add(&gp.scale(lambda_gp)),
        gap,
        gp,
    })
}

/// `-E c(x_synth)`.
pub fn generator_adv_loss<T: Real>(critic: impl Fn(&Tensor<T>) -> Tensor<T>, x_synth: &Tensor<T>) -> Tensor<T> {
    critic(x_synth).mean_all().neg()
}

/// All three Wasserstein quantities at once: `(critic_loss, generator_adv, gp)`.
pub fn wgan_gp_losses<T: Real>(
    critic: impl Fn(&Tensor<T>) -> Tensor<T>,
    x_real: &Tensor<T>,
    x_synth: &Tensor<T>,
    eps: &[f64],
    lambda_gp: f64,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let terms = critic_objective(&critic, x_real, x_synth, eps, lambda_gp)?;
    let adv = generator_adv_loss(&critic, x_synth);
    Ok((terms.loss, adv, terms.gp))
}

/// Cross-entropy GAN, discriminator side: `E softplus(-d(real)) + E softplus(d(fake))`
/// where `d` is the critic value read as a logit.
pub fn saturating_critic_loss<T: Real>(
    critic: impl Fn(&Tensor<T>) -> Tensor<T>,
    x_real: &Tensor<T>,
    x_fake: &Tensor<T>,
) -> Result<CriticTerms<T>> {
    check_same_shape(x_real, x_fake, "saturating_critic_loss")?;
    let loss = softplus(&critic(x_real).neg())
        .mean_all()
        .add(&softplus(&critic(x_fake)).mean_all());
    Ok(CriticTerms {
        gap: loss.neg(),
        loss,
        gp: Tensor::scalar(T::zero()),
    })
}

/// Cross-entropy GAN, generator side in its literal saturating form
/// `E log(1 - sigmoid(d(fake))) = -E softplus(d(fake))`.
pub fn saturating_generator_loss<T: Real>(critic: impl Fn(&Tensor<T>) -> Tensor<T>, x_synth: &Tensor<T>) -> Tensor<T> {
    softplus(&critic(x_synth)).mean_all().neg()
}

/// Raw (unweighted) term values for one step.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LossTerms {
    pub rec: f64,
    pub cls_x: f64,
    pub dis: f64,
    pub cls_synth: f64,
    pub gen_adv: f64,
    pub critic: f64,
    pub gp: f64,
    pub cls_c: f64,
}

impl LossTerms {
    pub fn entries(&self) -> [(&'static str, f64); 8] {
        [
            ("rec", self.rec),
            ("cls_x", self.cls_x),
            ("dis", self.dis),
            ("cls_synth", self.cls_synth),
            ("gen_adv", self.gen_adv),
            ("critic", self.critic),
            ("gp", self.gp),
            ("cls_c", self.cls_c),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub terms: LossTerms,
    pub l_g: f64,
    pub l_d: f64,
    pub l_c: f64,
}

impl LossReport {
    /// `step<TAB>term<TAB>value` lines, grouped totals last.
    pub fn log_lines(&self, step: u64) -> String {
        let mut out = String::new();
        for (name, v) in self.terms.entries() {
            out.push_str(&format!("{step}\t{name}\t{v:.8e}\n"));
        }
        for (name, v) in [("L_G", self.l_g), ("L_D", self.l_d), ("L_C", self.l_c)] {
            out.push_str(&format!("{step}\t{name}\t{v:.8e}\n"));
        }
        out
    }
}

/// Weighted generator total from raw values.
pub fn generator_total(terms: &LossTerms, w: &LossWeights) -> f64 {
    w.lambda_adv * terms.gen_adv
        + w.lambda_dis * terms.dis
        + w.lambda_cls_x * terms.cls_x
        + w.lambda_cls_synth * terms.cls_synth
        + w.lambda_rec * terms.rec
}

/// Groups raw term values into `L_G`, `L_D` (the critic loss, which already
/// contains the weighted penalty) and `L_C`.
pub fn full_objective(terms: &LossTerms, weights: &LossWeights) -> Result<LossReport> {
    if let Some((name, _)) = terms.entries().iter().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Divergence { term: name.to_string() });
    }
    Ok(LossReport {
        terms: terms.clone(),
        l_g: generator_total(terms, weights),
        l_d: terms.critic,
        l_c: terms.cls_c,
    })
}
