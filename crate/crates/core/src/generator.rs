//! Appearance mapping, recurrent motion mapping, the motion bank and the
//! modulated synthesis network.

use motionbank_tensor::{no_grad, Element, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::MotionBank;
use crate::error::{ensure_dim, ensure_finite, Error, Result};
use crate::latent::{apply_controls, DirectionMask, LatentCode, MagnitudeSequence, MotionDictionary, Trajectory};
use crate::nn::{lrelu, pixel_norm, randn_vec, EqualLinear, Mlp, ModulatedConv, ParamList};
use crate::noise::{normal_vec, stream_rng, STREAM_APPEARANCE, STREAM_MOTION, STREAM_SYNTHESIS};
use crate::video::{Frame, VideoTensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorConfig {
    pub dim_za: usize,
    pub dim_zm: usize,
    /// Number of motion directions, also the latent width.
    pub n: usize,
    pub video_length: usize,
    pub resolution: usize,
    pub mlp_depth: usize,
    /// Feature widths of the synthesis blocks at 8, 16, ... px; the first
    /// entry also sizes the 4×4 constant. A 4 px generator takes one entry.
    pub channels: Vec<usize>,
    pub appearance_lr_mul: f64,
    pub motion_lr_mul: f64,
    /// Backpropagate into `M` through the decomposition. When off `M` is a
    /// frozen random basis.
    pub differentiable_svd: bool,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        GeneratorConfig {
            dim_za: 512,
            dim_zm: 256,
            n: 512,
            video_length: 16,
            resolution: 64,
            mlp_depth: 8,
            channels: vec![256, 128, 64, 32],
            appearance_lr_mul: 0.01,
            motion_lr_mul: 0.01,
            differentiable_svd: true,
        }
    }
}

impl GeneratorConfig {
    pub fn validate(&self) -> Result<()> {
        let r = self.resolution;
        if r < 4 || !r.is_power_of_two() {
            return Err(Error::Config(format!("resolution {r} must be a power of two >= 4")));
        }
        if self.video_length < 1 {
            return Err(Error::Config("video_length must be >= 1".into()));
        }
        let want = self.upsampling_blocks().max(1);
        if self.channels.len() != want || self.channels.contains(&0) {
            return Err(Error::Config(format!(
                "resolution {r} needs {want} nonzero channel entries, got {:?}",
                self.channels
            )));
        }
        if self.n == 0 || self.dim_za == 0 || self.dim_zm == 0 || self.mlp_depth == 0 {
            return Err(Error::Config("dimensions and mlp_depth must be nonzero".into()));
        }
        if !(self.appearance_lr_mul > 0.0 && self.motion_lr_mul > 0.0) {
            return Err(Error::Config("lr multipliers must be positive".into()));
        }
        Ok(())
    }

    pub fn upsampling_blocks(&self) -> usize {
        self.resolution.trailing_zeros() as usize - 2
    }

    /// Feature width of the synthesis stage at `res` px.
    pub fn channels_at(&self, res: usize) -> usize {
        let level = (res.max(8).trailing_zeros() as usize).saturating_sub(3);
        self.channels[level.min(self.channels.len() - 1)]
    }

    /// Spatial size of every noise input, in layer order.
    pub fn noise_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![4];
        for b in 0..self.upsampling_blocks() {
            let r = 8 << b;
            sizes.push(r);
            sizes.push(r);
        }
        sizes
    }
}

/// Noise for one video. `z_m` has one row per transition.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    pub z_a: Vec<f64>,
    pub z_m: Vec<Vec<f64>>,
    /// One `H_l × W_l` map per synthesis layer, shared by every frame.
    pub synthesis_noise: Vec<Vec<f64>>,
}

impl NoiseBundle {
    /// Appearance code and synthesis noise come from `appearance_seed`, the
    /// motion sequence from `motion_seed`.
    pub fn from_seeds(cfg: &GeneratorConfig, appearance_seed: u64, motion_seed: u64, length: usize) -> Result<Self> {
        if length < 1 {
            return Err(Error::InvalidArgument("video length must be >= 1".into()));
        }
        let z_a = normal_vec(&mut stream_rng(appearance_seed, STREAM_APPEARANCE), cfg.dim_za);
        let mut mrng = stream_rng(motion_seed, STREAM_MOTION);
        let z_m = (1..length).map(|_| normal_vec(&mut mrng, cfg.dim_zm)).collect();
        let mut srng = stream_rng(appearance_seed, STREAM_SYNTHESIS);
        let synthesis_noise = cfg.noise_sizes().iter().map(|&s| normal_vec(&mut srng, s * s)).collect();
        Ok(NoiseBundle {
            z_a,
            z_m,
            synthesis_noise,
        })
    }

    pub fn random(cfg: &GeneratorConfig, length: usize, rng: &mut impl Rng) -> Self {
        NoiseBundle {
            z_a: normal_vec(rng, cfg.dim_za),
            z_m: (1..length).map(|_| normal_vec(rng, cfg.dim_zm)).collect(),
            synthesis_noise: cfg.noise_sizes().iter().map(|&s| normal_vec(rng, s * s)).collect(),
        }
    }

    pub fn video_length(&self) -> usize {
        self.z_m.len() + 1
    }

    pub fn with_appearance(&self, z_a: Vec<f64>) -> Self {
        NoiseBundle {
            z_a,
            ..self.clone()
        }
    }

    fn validate(&self, cfg: &GeneratorConfig) -> Result<()> {
        ensure_dim("z_a", cfg.dim_za, self.z_a.len())?;
        ensure_finite("z_a", &self.z_a)?;
        for row in &self.z_m {
            ensure_dim("z_m row", cfg.dim_zm, row.len())?;
            ensure_finite("z_m", row)?;
        }
        let sizes = cfg.noise_sizes();
        ensure_dim("synthesis noise layers", sizes.len(), self.synthesis_noise.len())?;
        for (n, s) in self.synthesis_noise.iter().zip(sizes) {
            ensure_dim("synthesis noise map", s * s, n.len())?;
            ensure_finite("synthesis noise", n)?;
        }
        Ok(())
    }
}

/// Noise for a batch of `B` videos of equal length, as tensors.
pub struct BatchNoise<T: Element> {
    /// `[B, dim_za]`
    pub z_a: Tensor<T>,
    /// `[B, T-1, dim_zm]`
    pub z_m: Tensor<T>,
    /// `[B, 1, s, s]` per layer.
    pub synthesis: Vec<Tensor<T>>,
    pub videos: usize,
    pub length: usize,
}

impl<T: Element> BatchNoise<T> {
    pub fn from_bundles(cfg: &GeneratorConfig, bundles: &[NoiseBundle]) -> Result<Self> {
        let first = bundles
            .first()
            .ok_or_else(|| Error::InvalidArgument("empty noise batch".into()))?;
        let length = first.video_length();
        let b = bundles.len();
        for bundle in bundles {
            bundle.validate(cfg)?;
            ensure_dim("batch video length", length, bundle.video_length())?;
        }
        let lit = |v: &f64| T::lit(*v);
        let z_a: Vec<T> = bundles.iter().flat_map(|x| x.z_a.iter().map(lit)).collect();
        let z_m: Vec<T> = bundles
            .iter()
            .flat_map(|x| x.z_m.iter().flat_map(|r| r.iter().map(lit)))
            .collect();
        let synthesis = cfg
            .noise_sizes()
            .iter()
            .enumerate()
            .map(|(l, &s)| {
                let d: Vec<T> = bundles.iter().flat_map(|x| x.synthesis_noise[l].iter().map(lit)).collect();
                Tensor::from_vec(d, &[b, 1, s, s])
            })
            .collect();
        Ok(BatchNoise {
            z_a: Tensor::from_vec(z_a, &[b, cfg.dim_za]),
            z_m: Tensor::from_vec(z_m, &[b, length - 1, cfg.dim_zm]),
            synthesis,
            videos: b,
            length,
        })
    }

    pub fn random(cfg: &GeneratorConfig, videos: usize, length: usize, rng: &mut impl Rng) -> Self {
        let sizes = cfg.noise_sizes();
        BatchNoise {
            z_a: Tensor::from_vec(randn_vec(videos * cfg.dim_za, 1.0, rng), &[videos, cfg.dim_za]),
            z_m: Tensor::from_vec(
                randn_vec(videos * (length - 1) * cfg.dim_zm, 1.0, rng),
                &[videos, length - 1, cfg.dim_zm],
            ),
            synthesis: sizes
                .iter()
                .map(|&s| Tensor::from_vec(randn_vec(videos * s * s, 1.0, rng), &[videos, 1, s, s]))
                .collect(),
            videos,
            length,
        }
    }
}

struct StyledLayer<T: Element> {
    conv: ModulatedConv<T>,
    noise_strength: Tensor<T>,
    bias: Tensor<T>,
}

impl<T: Element> StyledLayer<T> {
    fn new(inp: usize, out: usize, style: usize, upsample: bool, rng: &mut impl Rng) -> Self {
        StyledLayer {
            conv: ModulatedConv::new(inp, out, 3, style, true, upsample, rng),
            noise_strength: Tensor::var(vec![T::zero()], &[1]),
            bias: Tensor::var(vec![T::zero(); out], &[out]),
        }
    }

    /// `noise: [F, 1, H, W]` already expanded to frames.
    fn forward(&self, x: &Tensor<T>, w: &Tensor<T>, noise: &Tensor<T>) -> Tensor<T> {
        let c = self.bias.numel();
        let y = self.conv.forward(x, w);
        let y = y.add(&noise.mul(&self.noise_strength)).add(&self.bias.reshape(&[1, c, 1, 1]));
        lrelu(&y)
    }

    fn params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.conv.params(&format!("{prefix}.conv"), out);
        out.push((format!("{prefix}.noise_strength"), self.noise_strength.clone()));
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

struct ToRgb<T: Element> {
    conv: ModulatedConv<T>,
    bias: Tensor<T>,
}

impl<T: Element> ToRgb<T> {
    fn new(inp: usize, style: usize, rng: &mut impl Rng) -> Self {
        ToRgb {
            conv: ModulatedConv::new(inp, 3, 1, style, false, false, rng),
            bias: Tensor::var(vec![T::zero(); 3], &[3]),
        }
    }

    fn forward(&self, x: &Tensor<T>, w: &Tensor<T>) -> Tensor<T> {
        self.conv.forward(x, w).add(&self.bias.reshape(&[1, 3, 1, 1]))
    }

    fn params(&self, prefix: &str, out: &mut ParamList<T>) {
        self.conv.params(&format!("{prefix}.conv"), out);
        out.push((format!("{prefix}.bias"), self.bias.clone()));
    }
}

/// Rendering network: a learned 4×4 constant upsampled through modulated
/// convolutions, with RGB skip outputs summed across resolutions.
struct Synthesis<T: Element> {
    constant: Tensor<T>,
    layers: Vec<StyledLayer<T>>,
    to_rgb: Vec<ToRgb<T>>,
}

impl<T: Element> Synthesis<T> {
    fn new(cfg: &GeneratorConfig, rng: &mut impl Rng) -> Self {
        let c0 = cfg.channels_at(4);
        let style = cfg.n;
        let mut layers = vec![StyledLayer::new(c0, c0, style, false, rng)];
        let mut to_rgb = vec![ToRgb::new(c0, style, rng)];
        let mut prev = c0;
        for b in 0..cfg.upsampling_blocks() {
            let c = cfg.channels_at(8 << b);
            layers.push(StyledLayer::new(prev, c, style, true, rng));
            layers.push(StyledLayer::new(c, c, style, false, rng));
            to_rgb.push(ToRgb::new(c, style, rng));
            prev = c;
        }
        Synthesis {
            constant: Tensor::var(randn_vec(c0 * 16, 1.0, rng), &[1, c0, 4, 4]),
            layers,
            to_rgb,
        }
    }

    /// `w: [F, N]`; `noise[l]: [B, 1, s, s]`; frame `f` belongs to video
    /// `f / frames_per_video`. Returns `[F, 3, R, R]` in `[-1, 1]`.
    fn forward(&self, w: &Tensor<T>, noise: &[Tensor<T>], frames_per_video: usize) -> Tensor<T> {
        let f = w.dim(0);
        let owner: Vec<usize> = (0..f).map(|i| i / frames_per_video).collect();
        let per_frame = |l: usize| noise[l].index_select(0, &owner);
        let c0 = self.constant.dim(1);
        let mut x = self.constant.broadcast_to(&[f, c0, 4, 4]);
        x = self.layers[0].forward(&x, w, &per_frame(0));
        let mut rgb = self.to_rgb[0].forward(&x, w);
        for b in 0..self.to_rgb.len() - 1 {
            x = self.layers[1 + 2 * b].forward(&x, w, &per_frame(1 + 2 * b));
            x = self.layers[2 + 2 * b].forward(&x, w, &per_frame(2 + 2 * b));
            rgb = rgb.upsample2().add(&self.to_rgb[b + 1].forward(&x, w));
        }
        rgb.tanh()
    }

    fn params(&self, out: &mut ParamList<T>) {
        out.push(("synthesis.constant".into(), self.constant.clone()));
        for (i, l) in self.layers.iter().enumerate() {
            l.params(&format!("synthesis.layer{i}"), out);
        }
        for (i, r) in self.to_rgb.iter().enumerate() {
            r.params(&format!("synthesis.to_rgb{i}"), out);
        }
    }
}

/// Tensor outputs of one batched generator pass.
pub struct GeneratorOutput<T: Element> {
    /// `[B * T, 3, R, R]`
    pub frames: Tensor<T>,
    /// `[B, T-1, N]`
    pub alphas: Tensor<T>,
    /// `[B, N]`
    pub w0: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct GeneratedVideo {
    pub video: VideoTensor,
    pub alphas: MagnitudeSequence,
    pub w0: LatentCode,
}

pub struct Generator<T: Element = f32> {
    config: GeneratorConfig,
    appearance: Mlp<T>,
    h0_proj: Option<EqualLinear<T>>,
    gru: crate::nn::Gru<T>,
    motion: Mlp<T>,
    bank: MotionBank<T>,
    synthesis: Synthesis<T>,
}

impl<T: Element> Generator<T> {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = config.n;
        let appearance = Mlp::new(config.dim_za, n, n, config.mlp_depth, config.appearance_lr_mul, false, &mut rng);
        let h0_proj = (config.dim_za != n).then(|| EqualLinear::new(config.dim_za, n, 0.0, 1.0, false, &mut rng));
        let gru = crate::nn::Gru::new(config.dim_zm, n, &mut rng);
        let motion = Mlp::new(n, n, n, config.mlp_depth, config.motion_lr_mul, true, &mut rng);
        let bank = MotionBank::random(n, &mut rng);
        let synthesis = Synthesis::new(&config, &mut rng);
        Ok(Generator {
            config,
            appearance,
            h0_proj,
            gru,
            motion,
            bank,
            synthesis,
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    /// Every weight in checkpoint order, including `bank.m`.
    pub fn params(&self) -> ParamList<T> {
        let mut out = Vec::new();
        self.appearance.params("appearance", &mut out);
        if let Some(p) = &self.h0_proj {
            p.params("h0_proj", &mut out);
        }
        self.gru.params("gru", &mut out);
        self.motion.params("motion", &mut out);
        out.push(("bank.m".into(), self.bank.matrix().clone()));
        self.synthesis.params(&mut out);
        out
    }

    /// Weights the optimizer updates.
    pub fn trainable_params(&self) -> ParamList<T> {
        let mut p = self.params();
        if !self.config.differentiable_svd {
            p.retain(|(name, _)| name != "bank.m");
        }
        p
    }

    pub fn bank(&self) -> &MotionBank<T> {
        &self.bank
    }

    /// Recomputes the dictionary from the current `M`.
    pub fn refresh_dictionary(&mut self) -> Result<MotionDictionary> {
        self.bank.refresh().cloned()
    }

    pub fn dictionary(&self) -> &MotionDictionary {
        self.bank.dictionary()
    }

    fn dictionary_tensor(&self) -> Tensor<T> {
        self.bank.dictionary_tensor(self.config.differentiable_svd)
    }

    /// `z_a: [B, dim_za]` -> `w_0: [B, N]`.
    pub fn appearance_forward(&self, z_a: &Tensor<T>) -> Tensor<T> {
        self.appearance.forward(&pixel_norm(z_a))
    }

    /// `z_a: [B, dim_za]`, `z_m: [B, T-1, dim_zm]` -> `[B, T-1, N]`.
    pub fn motion_forward(&self, z_a: &Tensor<T>, z_m: &Tensor<T>) -> Tensor<T> {
        let (b, steps) = (z_m.dim(0), z_m.dim(1));
        let n = self.config.n;
        if steps == 0 {
            return Tensor::zeros(&[b, 0, n]);
        }
        let mut h = match &self.h0_proj {
            Some(p) => p.forward(z_a),
            None => z_a.clone(),
        };
        let dzm = z_m.dim(2);
        let mut outs = Vec::with_capacity(steps);
        for t in 0..steps {
            let x = z_m.narrow(1, t, 1).reshape(&[b, dzm]);
            h = self.gru.step(&x, &h);
            outs.push(h.clone());
        }
        // [T-1, B, N] -> [B, T-1, N]
        let hs = Tensor::stack(&outs).permute(&[1, 0, 2]).reshape(&[b * steps, n]);
        self.motion.forward(&hs).reshape(&[b, steps, n])
    }

    /// Latent codes `[B * T, N]`: `w_0` plus running sums of the magnitude
    /// rows projected once onto the dictionary `d: [N, N]`.
    pub fn latent_path(&self, w0: &Tensor<T>, alphas: &Tensor<T>, d: &Tensor<T>) -> Tensor<T> {
        let (b, steps, n) = (alphas.dim(0), alphas.dim(1), alphas.dim(2));
        let t_len = steps + 1;
        if steps == 0 {
            return w0.clone();
        }
        let mut lower = vec![T::zero(); t_len * steps];
        for t in 0..t_len {
            for j in 0..t {
                lower[t * steps + j] = T::one();
            }
        }
        let lower = Tensor::from_vec(lower, &[t_len, steps]);
        let flat = alphas.permute(&[1, 0, 2]).reshape(&[steps, b * n]);
        let cum = lower
            .matmul(&flat)
            .reshape(&[t_len, b, n])
            .permute(&[1, 0, 2])
            .reshape(&[b * t_len, n]);
        let offsets = cum.matmul(d).reshape(&[b, t_len, n]);
        w0.reshape(&[b, 1, n]).add(&offsets).reshape(&[b * t_len, n])
    }

    /// `[F, N]` latent codes to `[F, 3, R, R]` frames.
    pub fn synthesis_forward(&self, w: &Tensor<T>, noise: &[Tensor<T>], frames_per_video: usize) -> Tensor<T> {
        self.synthesis.forward(w, noise, frames_per_video)
    }

    /// Full differentiable pass for a batch.
    pub fn forward(&self, noise: &BatchNoise<T>) -> GeneratorOutput<T> {
        let w0 = self.appearance_forward(&noise.z_a);
        let alphas = self.motion_forward(&noise.z_a, &noise.z_m);
        let d = self.dictionary_tensor();
        let w = self.latent_path(&w0, &alphas, &d);
        let frames = self.synthesis_forward(&w, &noise.synthesis, noise.length);
        GeneratorOutput { frames, alphas, w0 }
    }

    pub fn map_appearance(&self, z_a: &[f64]) -> Result<LatentCode> {
        ensure_dim("z_a", self.config.dim_za, z_a.len())?;
        ensure_finite("z_a", z_a)?;
        let _g = no_grad();
        let x = Tensor::<T>::from_f64_slice(z_a, &[1, z_a.len()]);
        LatentCode::new(self.appearance_forward(&x).to_f64_vec(), 0)
    }

    pub fn map_motion(&self, z_a: &[f64], z_m: &[Vec<f64>]) -> Result<MagnitudeSequence> {
        ensure_dim("z_a", self.config.dim_za, z_a.len())?;
        ensure_finite("z_a", z_a)?;
        let dzm = self.config.dim_zm;
        let mut flat = Vec::with_capacity(z_m.len() * dzm);
        for row in z_m {
            ensure_dim("z_m row", dzm, row.len())?;
            flat.extend_from_slice(row);
        }
        ensure_finite("z_m", &flat)?;
        let n = self.config.n;
        if z_m.is_empty() {
            return Ok(MagnitudeSequence::zeros(0, n));
        }
        let _g = no_grad();
        let za = Tensor::<T>::from_f64_slice(z_a, &[1, z_a.len()]);
        let zm = Tensor::<T>::from_f64_slice(&flat, &[1, z_m.len(), dzm]);
        MagnitudeSequence::new(z_m.len(), n, self.motion_forward(&za, &zm).to_f64_vec())
    }

    fn noise_tensors(&self, noise: &[Vec<f64>]) -> Result<Vec<Tensor<T>>> {
        let sizes = self.config.noise_sizes();
        ensure_dim("synthesis noise layers", sizes.len(), noise.len())?;
        noise
            .iter()
            .zip(sizes)
            .map(|(n, s)| {
                ensure_dim("synthesis noise map", s * s, n.len())?;
                Ok(Tensor::from_f64_slice(n, &[1, 1, s, s]))
            })
            .collect()
    }

    pub fn synthesize_frame(&self, w: &LatentCode, noise: &[Vec<f64>]) -> Result<Frame> {
        ensure_dim("latent code", self.config.n, w.dim())?;
        ensure_finite("latent code", &w.values)?;
        let noise = self.noise_tensors(noise)?;
        let _g = no_grad();
        let wt = Tensor::<T>::from_f64_slice(&w.values, &[1, w.dim()]);
        let video = VideoTensor::from_nchw(&self.synthesis_forward(&wt, &noise, 1))?;
        Ok(video.frame(0))
    }

    /// Renders `w_0` and a magnitude sequence with one video's noise.
    pub fn render(&self, w0: &LatentCode, alphas: &MagnitudeSequence, noise: &[Vec<f64>]) -> Result<VideoTensor> {
        let n = self.config.n;
        ensure_dim("w_0", n, w0.dim())?;
        if alphas.rows() > 0 {
            ensure_dim("magnitudes", n, alphas.dims())?;
        }
        let noise = self.noise_tensors(noise)?;
        let _g = no_grad();
        let w0t = Tensor::<T>::from_f64_slice(&w0.values, &[1, n]);
        let at = Tensor::<T>::from_f64_slice(alphas.as_slice(), &[1, alphas.rows(), n]);
        let d = self.bank.dictionary_tensor(false);
        let w = self.latent_path(&w0t, &at, &d);
        VideoTensor::from_nchw(&self.synthesis_forward(&w, &noise, alphas.video_length()))
    }

    pub fn generate_video(&self, bundle: &NoiseBundle) -> Result<GeneratedVideo> {
        bundle.validate(&self.config)?;
        let w0 = self.map_appearance(&bundle.z_a)?;
        let alphas = self.map_motion(&bundle.z_a, &bundle.z_m)?;
        let video = self.render(&w0, &alphas, &bundle.synthesis_noise)?;
        Ok(GeneratedVideo { video, alphas, w0 })
    }

    /// Masks the mapped magnitudes, then injects trajectories, then renders.
    pub fn generate_controlled(
        &self,
        bundle: &NoiseBundle,
        mask: &DirectionMask,
        trajectories: &[Trajectory],
    ) -> Result<GeneratedVideo> {
        bundle.validate(&self.config)?;
        let w0 = self.map_appearance(&bundle.z_a)?;
        let raw = self.map_motion(&bundle.z_a, &bundle.z_m)?;
        let alphas = apply_controls(&raw, mask, trajectories)?;
        let video = self.render(&w0, &alphas, &bundle.synthesis_noise)?;
        Ok(GeneratedVideo { video, alphas, w0 })
    }

    /// Overwrites weights by name (checkpoint loading). The dictionary is
    /// recomputed afterwards.
    pub fn load_params(&mut self, named: &[(String, Vec<T>)]) -> Result<()> {
        let params = self.params();
        ensure_dim("generator parameter count", params.len(), named.len())?;
        for ((name, p), (src_name, data)) in params.iter().zip(named) {
            if name != src_name {
                return Err(Error::InvalidArgument(format!("expected parameter {name}, found {src_name}")));
            }
            ensure_dim("generator parameter size", p.numel(), data.len())?;
            p.set_data(data.clone());
        }
        self.bank.refresh()?;
        Ok(())
    }
}
