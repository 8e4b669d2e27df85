//! Adversarial objective, gradient penalty and the alternating update loop.

use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::Path;

use motionbank_tensor::{grad, grad_create_graph, is_grad_enabled, no_grad, Adam, AdamConfig, Element, Tensor};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::discriminator::{max_phase, Discriminator, Scores};
use crate::error::{Error, Result};
use crate::generator::{BatchNoise, Generator};
use crate::noise::step_rng;
use crate::video::VideoTensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub batch_size: usize,
    /// Weight of the video critics in both players' objectives.
    pub lambda_tpd: f64,
    pub r1_gamma: f64,
    /// Apply the penalty every `r1_interval` steps, scaled by the interval.
    pub r1_interval: u64,
    pub total_steps: u64,
    /// Critic updates per generator update.
    pub d_steps: usize,
    /// Keep an exponential moving average of generator weights.
    pub ema: bool,
    pub ema_beta: f64,
    pub log_every: u64,
    /// 0 disables periodic checkpoints.
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.002,
            beta1: 0.0,
            beta2: 0.99,
            batch_size: 32,
            lambda_tpd: 0.5,
            r1_gamma: 10.0,
            r1_interval: 16,
            total_steps: 50_000,
            d_steps: 1,
            ema: false,
            ema_beta: 0.999,
            log_every: 100,
            checkpoint_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if !(self.lambda_tpd >= 0.0) {
            return bad("lambda_tpd must be >= 0");
        }
        if !(self.r1_gamma >= 0.0) || self.r1_interval == 0 {
            return bad("r1_gamma must be >= 0 and r1_interval >= 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("Adam betas must lie in [0, 1)");
        }
        if self.batch_size == 0 || self.d_steps == 0 {
            return bad("batch_size and d_steps must be >= 1");
        }
        if self.ema && !(0.0..1.0).contains(&self.ema_beta) {
            return bad("ema_beta must lie in [0, 1)");
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub loss_g: f64,
    pub loss_d_image: f64,
    pub loss_d_video: Vec<f64>,
    /// Penalty summed over critics (unscaled by the interval); the most
    /// recent value when not applied this step.
    pub r1_value: f64,
    pub r1_applied: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fid_snapshot: Option<f64>,
}

impl StepReport {
    pub fn is_finite(&self) -> bool {
        self.loss_g.is_finite()
            && self.loss_d_image.is_finite()
            && self.loss_d_video.iter().all(|v| v.is_finite())
            && self.r1_value.is_finite()
            && self.fid_snapshot.is_none_or(f64::is_finite)
    }

    /// Total critic objective `image + λ · Σ video`.
    pub fn loss_d(&self, lambda: f64) -> f64 {
        self.loss_d_image + lambda * self.loss_d_video.iter().sum::<f64>()
    }
}

/// `mean(softplus(-x))`: the non-saturating generator term for one critic.
pub fn generator_term<T: Element>(fake_logits: &Tensor<T>) -> Tensor<T> {
    fake_logits.neg().softplus().mean_all()
}

/// `mean(softplus(-image)) + λ · Σ_i mean(softplus(-video_i))`.
pub fn g_loss<T: Element>(scores: &Scores<T>, lambda: f64) -> Tensor<T> {
    let mut loss = generator_term(&scores.image);
    for v in &scores.videos {
        loss = loss.add(&generator_term(v).mul_scalar(lambda));
    }
    loss
}

/// Scalar form of [`g_loss`] over per-sample logits.
pub fn g_loss_values(image: &[f64], videos: &[Vec<f64>], lambda: f64) -> f64 {
    let mean_sp = |xs: &[f64]| xs.iter().map(|&x| motionbank_tensor::softplus(-x)).sum::<f64>() / xs.len() as f64;
    mean_sp(image) + lambda * videos.iter().map(|v| mean_sp(v)).sum::<f64>()
}

/// `mean(softplus(-real)) + mean(softplus(fake))` for one critic.
pub fn d_loss<T: Element>(real: &Tensor<T>, fake: &Tensor<T>) -> Tensor<T> {
    real.neg().softplus().mean_all().add(&fake.softplus().mean_all())
}

pub fn d_loss_values(real: &[f64], fake: &[f64]) -> f64 {
    let r = real.iter().map(|&x| motionbank_tensor::softplus(-x)).sum::<f64>() / real.len() as f64;
    let f = fake.iter().map(|&x| motionbank_tensor::softplus(x)).sum::<f64>() / fake.len() as f64;
    r + f
}

/// Critic objective over the image critic and the pyramid:
/// `d(image) + λ · Σ_i d(video_i)`.
pub fn d_loss_total<T: Element>(real: &Scores<T>, fake: &Scores<T>, lambda: f64) -> Tensor<T> {
    let mut loss = d_loss(&real.image, &fake.image);
    for (r, f) in real.videos.iter().zip(&fake.videos) {
        loss = loss.add(&d_loss(r, f).mul_scalar(lambda));
    }
    loss
}

/// `(γ / 2) · mean_b ||∇_x critic(x)_b||²` at `real: [B, ...]`. The result
/// is differentiable with respect to the critic's weights.
pub fn r1_penalty<T: Element>(critic: impl Fn(&Tensor<T>) -> Tensor<T>, real: &Tensor<T>, gamma: f64) -> Result<Tensor<T>> {
    if !is_grad_enabled() {
        return Err(Error::InvalidArgument("gradient penalty needs grad mode".into()));
    }
    let x = real.detach_var();
    let out = critic(&x);
    let b = real.dim(0) as f64;
    let total = out.sum_all();
    let g = grad_create_graph(&total, std::slice::from_ref(&x));
    Ok(match &g[0] {
        Some(g) => g.square().sum_all().mul_scalar(gamma / (2.0 * b)),
        None => Tensor::scalar(T::zero()),
    })
}

fn tensors<T: Element>(named: &[(String, Tensor<T>)]) -> Vec<Tensor<T>> {
    named.iter().map(|(_, t)| t.clone()).collect()
}

struct Freeze<'a, T: Element>(&'a [Tensor<T>]);

impl<'a, T: Element> Freeze<'a, T> {
    fn new(params: &'a [Tensor<T>]) -> Self {
        params.iter().for_each(|p| p.set_requires_grad(false));
        Freeze(params)
    }
}

impl<T: Element> Drop for Freeze<'_, T> {
    fn drop(&mut self) {
        self.0.iter().for_each(|p| p.set_requires_grad(true));
    }
}

const PURPOSE_D: u64 = 1;
const PURPOSE_G: u64 = 2;
pub(crate) const PURPOSE_DATA: u64 = 3;

/// Generator, critics and optimizer state.
pub struct Trainer<T: Element = f32> {
    pub config: ExperimentConfig,
    pub generator: Generator<T>,
    pub discriminator: Discriminator<T>,
    pub(crate) opt_g: Adam<T>,
    pub(crate) opt_d: Adam<T>,
    pub(crate) ema: Option<Vec<Vec<T>>>,
    pub(crate) step: u64,
    pub(crate) last_r1: f64,
}

impl<T: Element> Trainer<T> {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let generator = Generator::new(config.generator.clone(), config.seed)?;
        let discriminator = Discriminator::new(&config.generator, config.pyramid.clone(), config.seed.wrapping_add(1))?;
        let opt_g = Adam::new(config.train.adam(), &tensors(&generator.trainable_params()));
        let opt_d = Adam::new(config.train.adam(), &tensors(&discriminator.params()));
        let ema = config
            .train
            .ema
            .then(|| generator.params().iter().map(|(_, p)| p.to_vec()).collect());
        Ok(Trainer {
            config,
            generator,
            discriminator,
            opt_g,
            opt_d,
            ema,
            step: 0,
            last_r1: 0.0,
        })
    }

    /// Completed steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn ema_weights(&self) -> Option<&[Vec<T>]> {
        self.ema.as_deref()
    }

    /// A copy of the generator carrying the averaged weights (or the raw
    /// weights when averaging is off).
    pub fn inference_generator(&self) -> Result<Generator<T>> {
        let mut g = Generator::new(self.config.generator.clone(), self.config.seed)?;
        let named: Vec<(String, Vec<T>)> = match &self.ema {
            Some(ema) => self.generator.params().into_iter().zip(ema).map(|((n, _), v)| (n, v.clone())).collect(),
            None => self.generator.params().into_iter().map(|(n, p)| (n, p.to_vec())).collect(),
        };
        g.load_params(&named)?;
        Ok(g)
    }

    fn sample_indices(&self, rng: &mut impl Rng, videos: usize) -> (Vec<usize>, Vec<usize>) {
        let t_len = self.config.generator.video_length;
        let frames = (0..videos).map(|_| rng.random_range(0..t_len)).collect();
        let phases = self
            .config
            .pyramid
            .strides
            .iter()
            .map(|&s| {
                if self.config.pyramid.random_phase {
                    rng.random_range(0..=max_phase(t_len, s))
                } else {
                    0
                }
            })
            .collect();
        (frames, phases)
    }

    fn check_batch(&self, real: &[VideoTensor]) -> Result<()> {
        let g = &self.config.generator;
        if real.is_empty() {
            return Err(Error::InvalidArgument("empty training batch".into()));
        }
        for v in real {
            if (v.frames, v.height, v.width) != (g.video_length, g.resolution, g.resolution) {
                return Err(Error::InvalidArgument(format!(
                    "training clip is {}×{}×{}, expected {}×{}×{}",
                    v.frames, v.height, v.width, g.video_length, g.resolution, g.resolution
                )));
            }
        }
        Ok(())
    }

    /// One critic update on `real`; returns `(image loss, video losses, r1)`.
    fn d_update(&mut self, real: &[VideoTensor], sub: u64) -> Result<(f64, Vec<f64>, Option<f64>)> {
        let cfg = &self.config;
        let lambda = cfg.train.lambda_tpd;
        let b = real.len();
        let mut rng = step_rng(cfg.seed, self.step, PURPOSE_D + 8 * sub);
        let noise = BatchNoise::<T>::random(&cfg.generator, b, cfg.generator.video_length, &mut rng);
        let fake = {
            let _g = no_grad();
            self.generator.forward(&noise).frames
        };
        let real_frames = VideoTensor::batch_nchw::<T>(real)?;
        let (fi_r, ph_r) = self.sample_indices(&mut rng, b);
        let (fi_f, ph_f) = self.sample_indices(&mut rng, b);
        let disc = &self.discriminator;
        let (img_r, packs_r) = disc.inputs(&real_frames, b, &fi_r, &ph_r);
        let (img_f, packs_f) = disc.inputs(&fake, b, &fi_f, &ph_f);
        let sr = disc.score_inputs(&img_r, &packs_r);
        let sf = disc.score_inputs(&img_f, &packs_f);
        let loss_img = d_loss(&sr.image, &sf.image);
        let loss_vid: Vec<Tensor<T>> = sr.videos.iter().zip(&sf.videos).map(|(r, f)| d_loss(r, f)).collect();
        let mut total = loss_img.clone();
        for l in &loss_vid {
            total = total.add(&l.mul_scalar(lambda));
        }
        let mut r1 = None;
        if cfg.train.r1_gamma > 0.0 && self.step % cfg.train.r1_interval == 0 && sub == 0 {
            let gamma = cfg.train.r1_gamma;
            let interval = cfg.train.r1_interval as f64;
            let mut pen = r1_penalty(|x| disc.image.forward(x), &img_r, gamma)?;
            let mut value = pen.item().as_f64();
            for (critic, x) in disc.videos.iter().zip(&packs_r) {
                let p = r1_penalty(|x| critic.forward(x), x, gamma)?;
                value += p.item().as_f64();
                pen = pen.add(&p.mul_scalar(lambda));
            }
            total = total.add(&pen.mul_scalar(interval));
            r1 = Some(value);
        }
        let params = tensors(&disc.params());
        let grads = grad(&total, &params);
        self.opt_d.step(&params, &grads);
        Ok((
            loss_img.item().as_f64(),
            loss_vid.iter().map(|l| l.item().as_f64()).collect(),
            r1,
        ))
    }

    /// Generator loss and gradients (ordered as `trainable_params`) for the
    /// current step's noise, with the critics frozen and the video terms
    /// weighted by `lambda`.
    pub fn generator_gradient(&self, videos: usize, lambda: f64) -> (f64, Vec<Option<Tensor<T>>>) {
        let cfg = &self.config;
        let mut rng = step_rng(cfg.seed, self.step, PURPOSE_G);
        let noise = BatchNoise::<T>::random(&cfg.generator, videos, cfg.generator.video_length, &mut rng);
        let (fi, ph) = self.sample_indices(&mut rng, videos);
        let d_params = tensors(&self.discriminator.params());
        let params = tensors(&self.generator.trainable_params());
        let _frozen = Freeze::new(&d_params);
        let out = self.generator.forward(&noise);
        let (img, packs) = self.discriminator.inputs(&out.frames, videos, &fi, &ph);
        let scores = self.discriminator.score_inputs(&img, &packs);
        let loss = g_loss(&scores, lambda);
        let grads = grad(&loss, &params);
        (loss.item().as_f64(), grads)
    }

    fn g_update(&mut self, videos: usize) -> Result<f64> {
        let (loss, grads) = self.generator_gradient(videos, self.config.train.lambda_tpd);
        if !loss.is_finite() {
            return Err(Error::Diverged {
                step: self.step + 1,
                reason: format!("generator loss {loss}"),
            });
        }
        let cfg = &self.config;
        let params = tensors(&self.generator.trainable_params());
        self.opt_g.step(&params, &grads);
        self.generator.refresh_dictionary()?;
        if let Some(ema) = &mut self.ema {
            let beta = T::lit(cfg.train.ema_beta);
            for ((_, p), shadow) in self.generator.params().iter().zip(ema.iter_mut()) {
                let cur = p.data();
                for (s, &c) in shadow.iter_mut().zip(cur.iter()) {
                    *s = beta * *s + (T::one() - beta) * c;
                }
            }
        }
        Ok(loss)
    }

    /// `d_steps` critic updates on `real` followed by one generator update.
    pub fn train_step(&mut self, real: &[VideoTensor]) -> Result<StepReport> {
        self.check_batch(real)?;
        let mut d = (0.0, Vec::new(), None);
        for sub in 0..self.config.train.d_steps as u64 {
            d = self.d_update(real, sub)?;
        }
        if !(d.0.is_finite() && d.1.iter().all(|v| v.is_finite()) && d.2.is_none_or(f64::is_finite)) {
            // Stop before the generator sees poisoned critic weights.
            return Err(Error::Diverged {
                step: self.step + 1,
                reason: format!("critic losses {} {:?}, r1 {:?}", d.0, d.1, d.2),
            });
        }
        if let Some(r1) = d.2 {
            self.last_r1 = r1;
        }
        let loss_g = self.g_update(real.len())?;
        let report = StepReport {
            step: self.step + 1,
            loss_g,
            loss_d_image: d.0,
            loss_d_video: d.1,
            r1_value: self.last_r1,
            r1_applied: d.2.is_some(),
            fid_snapshot: None,
        };
        if !report.is_finite() {
            return Err(Error::Diverged {
                step: report.step,
                reason: format!("{report:?}"),
            });
        }
        self.step += 1;
        Ok(report)
    }

    /// Samples the real batch for the current step from `data`.
    pub fn sample_real(&self, data: &crate::data::ClipDataset) -> Vec<VideoTensor> {
        let mut rng = step_rng(self.config.seed, self.step, PURPOSE_DATA);
        data.sample_batch(self.config.train.batch_size, &mut rng)
    }
}

/// Append-only JSON lines.
pub struct MetricsLog {
    out: BufWriter<File>,
}

impl MetricsLog {
    pub fn append(path: &Path) -> Result<Self> {
        let f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::io(format!("opening {}", path.display()), e))?;
        Ok(MetricsLog { out: BufWriter::new(f) })
    }

    pub fn write<R: Serialize>(&mut self, record: &R) -> Result<()> {
        let line = serde_json::to_string(record).map_err(|e| Error::Parse(e.to_string()))?;
        writeln!(self.out, "{line}")
            .and_then(|_| self.out.flush())
            .map_err(|e| Error::io("writing metrics", e))
    }
}
