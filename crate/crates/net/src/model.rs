//! Dn-Net → LIFE encoder → reparameterized latent → shallow decoder.

use ndarray::{s, Array2, Array4};
use octa_core::Scalar;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::layers::{Builder, ParamId, ParamStore, R2UEncoder, ResUNet};
use crate::tape::{Graph, Var};

/// Learning-rate schedule: one joint optimizer, then separate encoder-side and
/// decoder optimizers with step decay.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LrSchedule {
    pub joint_lr: f64,
    pub joint_epochs: usize,
    pub encoder_lr: f64,
    pub decoder_lr: f64,
    pub decay_every: usize,
    pub decay_rate: f64,
}

impl Default for LrSchedule {
    fn default() -> Self {
        Self { joint_lr: 1e-3, joint_epochs: 3, encoder_lr: 2e-3, decoder_lr: 1e-4, decay_every: 3, decay_rate: 0.5 }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrPhase {
    Joint(f64),
    Split { encoder: f64, decoder: f64 },
}

impl LrSchedule {
    pub fn at(&self, epoch: usize) -> LrPhase {
        if epoch < self.joint_epochs {
            return LrPhase::Joint(self.joint_lr);
        }
        let k = (epoch - self.joint_epochs) / self.decay_every.max(1);
        let f = self.decay_rate.powi(k as i32);
        LrPhase::Split { encoder: self.encoder_lr * f, decoder: self.decoder_lr * f }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LifeConfig {
    pub dn_channels: Vec<usize>,
    pub enc_channels: Vec<usize>,
    pub recurrent_steps: usize,
    pub dec_channels: Vec<usize>,
    pub loss_a_vae: f64,
    pub loss_b_vae: f64,
    pub loss_a_dn: f64,
    pub loss_b_dn: f64,
    pub epochs: usize,
    pub batch: usize,
    pub schedule: LrSchedule,
    /// Initial bias of the σ head, before softplus.
    pub sigma_bias: f64,
    pub seed: u64,
}

impl Default for LifeConfig {
    fn default() -> Self {
        Self {
            dn_channels: vec![16, 32],
            enc_channels: vec![16, 32, 64],
            recurrent_steps: 2,
            dec_channels: vec![16],
            loss_a_vae: 1.0,
            loss_b_vae: 0.05,
            loss_a_dn: 1.0,
            loss_b_dn: 0.01,
            epochs: 50,
            batch: 2,
            schedule: LrSchedule::default(),
            sigma_bias: -5.0,
            seed: 0,
        }
    }
}

impl LifeConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, ws) in [("dn_channels", &self.dn_channels), ("enc_channels", &self.enc_channels), ("dec_channels", &self.dec_channels)] {
            if ws.is_empty() || ws.contains(&0) {
                return Err(NetError::Config(format!("{name} must be non-empty widths >= 1, got {ws:?}")));
            }
        }
        if self.recurrent_steps == 0 {
            return Err(NetError::Config("recurrent_steps must be >= 1".into()));
        }
        if self.batch == 0 {
            return Err(NetError::Config("batch must be >= 1".into()));
        }
        let s = &self.schedule;
        if !(s.joint_lr > 0.0 && s.encoder_lr > 0.0 && s.decoder_lr > 0.0 && s.decay_rate > 0.0) {
            return Err(NetError::Config("learning rates and decay rate must be positive".into()));
        }
        Ok(())
    }
}

/// The three parameter groups; Dn-Net trains with the encoder side.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Denoiser,
    Encoder,
    Decoder,
}

/// Orientation of μ when it is read out as a vessel map. The translator only
/// pins the latent down up to sign (the decoder can absorb a flip), so the
/// sign is calibrated after training so that vessels read bright.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    #[default]
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign<T: Scalar>(self) -> T {
        match self {
            Polarity::Positive => T::one(),
            Polarity::Negative => -T::one(),
        }
    }
}

pub struct LifeModel<T> {
    config: LifeConfig,
    polarity: Polarity,
    params: ParamStore<T>,
    groups: Vec<Group>,
    dn: ResUNet,
    enc: R2UEncoder,
    dec: ResUNet,
}

/// Graph handles of one forward pass.
#[derive(Clone, Copy, Debug)]
pub struct ForwardVars {
    /// Dn-Net output, `[0, 255]` scale.
    pub x_dn: Var,
    pub mu: Var,
    pub sigma: Var,
    pub sample: Var,
    /// Decoder output, `[0, 255]` scale.
    pub y_syn: Var,
}

/// Latent maps of one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct LatentMaps<T> {
    pub mu: Array2<T>,
    pub sigma: Array2<T>,
    pub sample: Array2<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineOutput<T> {
    pub x_dn: Array2<T>,
    pub latent: LatentMaps<T>,
    pub y_syn: Array2<T>,
    /// Padded size when the input did not fit the architecture stride.
    pub padded_to: Option<(usize, usize)>,
}

impl<T: Scalar> LifeModel<T> {
    pub fn new(config: LifeConfig) -> Result<Self> {
        config.validate()?;
        let mut params = ParamStore::default();
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut bd = Builder { store: &mut params, rng: &mut rng };
        let dn = ResUNet::new(&mut bd, "dn", &config.dn_channels, 1, 1);
        let n_dn = bd.store.len();
        let enc = R2UEncoder::new(&mut bd, "enc", &config.enc_channels, config.recurrent_steps, config.sigma_bias);
        let n_enc = bd.store.len();
        let dec = ResUNet::new(&mut bd, "dec", &config.dec_channels, 1, 1);
        let groups = (0..params.len())
            .map(|i| match i {
                i if i < n_dn => Group::Denoiser,
                i if i < n_enc => Group::Encoder,
                _ => Group::Decoder,
            })
            .collect();
        Ok(Self { config, polarity: Polarity::Positive, params, groups, dn, enc, dec })
    }

    pub fn config(&self) -> &LifeConfig {
        &self.config
    }

    pub fn polarity(&self) -> Polarity {
        self.polarity
    }

    pub fn set_polarity(&mut self, p: Polarity) {
        self.polarity = p;
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn group(&self, id: ParamId) -> Group {
        self.groups[id.0]
    }

    /// Spatial dims must be multiples of this.
    pub fn stride(&self) -> usize {
        let levels = self.dn.levels().max(self.enc.levels()).max(self.dec.levels());
        1 << (levels - 1)
    }

    /// Full differentiable pass. `x` holds raw slices on `[0, 255]`; `eps`
    /// (shape of `x`) draws the latent sample, `None` uses `S = μ`.
    pub fn forward(&self, g: &mut Graph<T>, p: &[Var], x: Var, eps: Option<Array4<T>>) -> Result<ForwardVars> {
        let [_, c, h, w] = g.shape(x);
        let stride = self.stride();
        if c != 1 || h % stride != 0 || w % stride != 0 {
            return Err(NetError::shape("forward", format!("input {:?} needs 1 channel and H, W multiples of {stride}", g.shape(x))));
        }
        let up = T::lit(255.0);
        let down = T::lit(1.0 / 255.0);
        let xn = g.scale(x, down)?;
        let r = self.dn.forward(g, p, xn)?;
        let dn = g.add(xn, r)?;
        // global residual, as in Dn-Net and the decoder: μ starts out as the
        // denoised image and learns a correction, so it stays image-like
        let (m, sigma) = self.enc.forward(g, p, dn)?;
        let mu = g.add(dn, m)?;
        let sample = match eps {
            Some(e) => g.reparameterize(mu, sigma, e)?,
            None => mu,
        };
        let r = self.dec.forward(g, p, sample)?;
        let y = g.add(sample, r)?;
        Ok(ForwardVars { x_dn: g.scale(dn, up)?, mu, sigma, sample, y_syn: g.scale(y, up)? })
    }

    /// Runs one raw slice without recording gradients. `eps_seed` draws the
    /// latent sample from a seeded standard normal; `None` gives `S = μ`.
    /// Inputs that do not fit the stride are edge-padded and the outputs cropped.
    pub fn forward_pipeline(&self, x: &Array2<T>, eps_seed: Option<u64>) -> Result<PipelineOutput<T>> {
        let (h, w) = x.dim();
        if h == 0 || w == 0 {
            return Err(NetError::shape("forward_pipeline", "empty input"));
        }
        let stride = self.stride();
        let (ph, pw) = (h.div_ceil(stride) * stride, w.div_ceil(stride) * stride);
        let padded_to = (ph != h || pw != w).then_some((ph, pw));
        let input = Array4::from_shape_fn((1, 1, ph, pw), |(_, _, y, xx)| x[[y.min(h - 1), xx.min(w - 1)]]);
        let eps = eps_seed.map(|seed| standard_normal((1, 1, ph, pw), seed));

        let mut g = Graph::inference();
        let p = self.params.bind(&mut g);
        let xv = g.constant(input);
        let f = self.forward(&mut g, &p, xv, eps)?;
        let crop = |v: &Array4<T>| v.slice(s![0, 0, ..h, ..w]).to_owned();
        Ok(PipelineOutput {
            x_dn: crop(g.value(f.x_dn)),
            latent: LatentMaps { mu: crop(g.value(f.mu)), sigma: crop(g.value(f.sigma)), sample: crop(g.value(f.sample)) },
            y_syn: crop(g.value(f.y_syn)),
            padded_to,
        })
    }
}

/// Seeded `N(0, 1)` draws.
pub fn standard_normal<T: Scalar>(shape: (usize, usize, usize, usize), seed: u64) -> Array4<T> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array4::from_shape_simple_fn(shape, || {
        let v: f64 = StandardNormal.sample(&mut rng);
        T::lit(v)
    })
}
