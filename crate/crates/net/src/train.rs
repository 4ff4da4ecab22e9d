//! Adam, the two-phase schedule and the joint Dn-Net + translator loop.

use std::io::Write;

use ndarray::{Array2, Array4, Zip};
use octa_core::{AugmentationSpec, Scalar, Volume3D};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NetError, Result};
use crate::layers::ParamId;
use crate::model::{standard_normal, Group, LifeModel, LrPhase, Polarity};
use crate::tape::Graph;

/// Adam over a subset of parameters (β1 = 0.9, β2 = 0.999, ε = 1e-8).
pub struct Adam<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    ids: Vec<ParamId>,
    m: Vec<Array4<T>>,
    v: Vec<Array4<T>>,
    t: i32,
}

impl<T: Scalar> Adam<T> {
    pub fn new(model: &LifeModel<T>, ids: Vec<ParamId>, lr: f64) -> Self {
        let zeros = |id: &ParamId| Array4::zeros(model.params().value(*id).raw_dim());
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: ids.iter().map(zeros).collect(),
            v: ids.iter().map(zeros).collect(),
            ids,
            t: 0,
        }
    }

    pub fn steps(&self) -> i32 {
        self.t
    }

    /// `grads` is indexed by parameter id over the whole model.
    pub fn step(&mut self, model: &mut LifeModel<T>, grads: &[Array4<T>]) {
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t);
        let c2 = 1.0 - b2.powi(self.t);
        let lr_t = T::lit(self.lr * c2.sqrt() / c1);
        let eps_t = T::lit(self.eps * c2.sqrt());
        let (tb1, tb2) = (T::lit(b1), T::lit(b2));
        let (ob1, ob2) = (T::lit(1.0 - b1), T::lit(1.0 - b2));
        for (k, id) in self.ids.iter().enumerate() {
            let g = &grads[id.0];
            let p = model.params_mut().value_mut(*id);
            Zip::from(p).and(&mut self.m[k]).and(&mut self.v[k]).and(g).for_each(|p, m, v, &g| {
                *m = tb1 * *m + ob1 * g;
                *v = tb2 * *v + ob2 * g * g;
                // bias correction folded into the step size and epsilon
                *p -= lr_t * *m / (v.sqrt() + eps_t);
            });
        }
    }
}

/// One aligned training triple, all on `[0, 255]`.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainSample<T> {
    pub raw: Array2<T>,
    pub lif: Array2<T>,
    pub ce_lif: Array2<T>,
}

/// Crops aligned (raw, LIF, CE-LIF) windows out of every slice of every
/// volume triple. The window is clamped to the slice size.
pub fn build_dataset<T: Scalar>(
    volumes: &[(&Volume3D<T>, &Volume3D<T>, &Volume3D<T>)],
    aug: &AugmentationSpec,
) -> Result<Vec<TrainSample<T>>> {
    let mut rng = ChaCha8Rng::seed_from_u64(aug.seed);
    let mut out = Vec::new();
    for (raw, lif, ce) in volumes {
        if raw.dims() != lif.dims() || raw.dims() != ce.dims() {
            return Err(NetError::shape("build_dataset", format!("{:?} / {:?} / {:?}", raw.dims(), lif.dims(), ce.dims())));
        }
        let [nz, h, w] = raw.dims();
        let spec = AugmentationSpec { window: (aug.window.0.min(h), aug.window.1.min(w)), ..aug.clone() };
        for z in 0..nz {
            let (a, b, c) = (raw.slice(z), lif.slice(z), ce.slice(z));
            for mut group in octa_core::volume::augment_stack_with_rng(&[&a, &b, &c], &spec, &mut rng)? {
                let ce_lif = group.pop().expect("three members");
                let lif = group.pop().expect("three members");
                let raw = group.pop().expect("three members");
                out.push(TrainSample { raw, lif, ce_lif });
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub steps: usize,
    /// Mean per-sample Dn-Net loss over the epoch.
    pub dn_loss: f64,
    /// Mean per-sample translator loss over the epoch.
    pub translator_loss: f64,
    pub lr_encoder: f64,
    pub lr_decoder: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    pub total_steps: usize,
    pub polarity: Polarity,
}

impl TrainReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epoch,steps,dn_loss,translator_loss,lr_encoder,lr_decoder\n");
        for e in &self.epochs {
            s.push_str(&format!(
                "{},{},{},{},{},{}\n",
                e.epoch, e.steps, e.dn_loss, e.translator_loss, e.lr_encoder, e.lr_decoder
            ));
        }
        s
    }

    pub fn write_csv(&self, path: &std::path::Path) -> Result<()> {
        let io = |source| NetError::Io { path: path.to_path_buf(), source };
        let mut f = std::fs::File::create(path).map_err(io)?;
        f.write_all(self.to_csv().as_bytes()).map_err(io)
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainOptions {
    /// Run the samples of a batch on the rayon pool. Gradients are still
    /// summed in batch order, so results match the serial path bit for bit.
    pub data_parallel: bool,
    /// Stop after this many optimizer steps (the schedule is still per epoch).
    pub max_steps: Option<usize>,
}

struct SampleResult<T> {
    grads: Vec<Option<Array4<T>>>,
    dn: f64,
    translator: f64,
}

fn run_sample<T: Scalar>(model: &LifeModel<T>, s: &TrainSample<T>, eps_seed: u64) -> Result<SampleResult<T>> {
    let (h, w) = s.raw.dim();
    // augmented crops may be flipped views with negative strides
    let as4 = |a: &Array2<T>| a.as_standard_layout().into_owned().into_shape_with_order((1, 1, h, w)).expect("standard layout");
    let cfg = model.config();
    let mut g = Graph::new();
    let p = model.params().bind(&mut g);
    let x = g.constant(as4(&s.raw));
    let lif = g.constant(as4(&s.lif));
    let ce = g.constant(as4(&s.ce_lif));
    let f = model.forward(&mut g, &p, x, Some(standard_normal((1, 1, h, w), eps_seed)))?;
    let dn = g.loss_l1l2(lif, f.x_dn, T::lit(cfg.loss_a_dn), T::lit(cfg.loss_b_dn))?;
    let tr = g.loss_l1l2(ce, f.y_syn, T::lit(cfg.loss_a_vae), T::lit(cfg.loss_b_vae))?;
    let total = g.add(dn, tr)?;
    g.backward(total)?;
    let (dn, translator) = (g.scalar(dn).as_f64(), g.scalar(tr).as_f64());
    Ok(SampleResult { grads: p.iter().map(|v| g.take_grad(*v)).collect(), dn, translator })
}

fn eps_seed(seed: u64, step: usize, slot: usize) -> u64 {
    seed ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(((step as u64) << 8) | (slot as u64 + 1))
}

/// Trains jointly: Dn-Net against LIF, the translator against CE-LIF, both
/// with the L1 + L2 loss. Epochs, batch size, schedule and seed come from the
/// model's config; the phase switch starts fresh optimizer state.
pub fn train<T: Scalar>(model: &mut LifeModel<T>, data: &[TrainSample<T>], opts: &TrainOptions) -> Result<TrainReport> {
    if data.is_empty() {
        return Err(NetError::EmptyDataset);
    }
    let cfg = model.config().clone();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let all: Vec<ParamId> = model.params().ids().collect();
    let (enc_ids, dec_ids): (Vec<ParamId>, Vec<ParamId>) = all.iter().partition(|id| model.group(**id) != Group::Decoder);
    let mut joint: Option<Adam<T>> = None;
    let mut split: Option<(Adam<T>, Adam<T>)> = None;
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();

    'epochs: for epoch in 0..cfg.epochs {
        let phase = cfg.schedule.at(epoch);
        let (lr_e, lr_d) = match phase {
            LrPhase::Joint(lr) => {
                joint.get_or_insert_with(|| Adam::new(model, all.clone(), lr)).lr = lr;
                (lr, lr)
            }
            LrPhase::Split { encoder, decoder } => {
                let (e, d) = split.get_or_insert_with(|| {
                    (Adam::new(model, enc_ids.clone(), encoder), Adam::new(model, dec_ids.clone(), decoder))
                });
                e.lr = encoder;
                d.lr = decoder;
                (encoder, decoder)
            }
        };
        order.shuffle(&mut rng);
        let (mut sum_dn, mut sum_tr, mut count, mut steps) = (0.0, 0.0, 0usize, 0usize);
        for batch in order.chunks(cfg.batch) {
            if opts.max_steps.is_some_and(|m| report.total_steps >= m) {
                break 'epochs;
            }
            let step = report.total_steps;
            let job = |(slot, &i): (usize, &usize)| run_sample(model, &data[i], eps_seed(cfg.seed, step, slot));
            let results: Vec<SampleResult<T>> = if opts.data_parallel {
                batch.par_iter().enumerate().map(job).collect::<Result<_>>()?
            } else {
                batch.iter().enumerate().map(job).collect::<Result<_>>()?
            };
            let inv = T::lit(1.0 / batch.len() as f64);
            let mut grads: Vec<Array4<T>> =
                all.iter().map(|id| Array4::zeros(model.params().value(*id).raw_dim())).collect();
            for r in &results {
                if !(r.dn.is_finite() && r.translator.is_finite()) {
                    return Err(NetError::Diverged {
                        epoch,
                        step,
                        detail: format!("dn loss {}, translator loss {}", r.dn, r.translator),
                    });
                }
                sum_dn += r.dn;
                sum_tr += r.translator;
                count += 1;
                for (acc, g) in grads.iter_mut().zip(&r.grads) {
                    if let Some(g) = g {
                        acc.scaled_add(inv, g);
                    }
                }
            }
            if let Some(bad) = grads.iter().position(|g| g.iter().any(|v| !v.is_finite())) {
                return Err(NetError::Diverged {
                    epoch,
                    step,
                    detail: format!("non-finite gradient for {}", model.params().name(all[bad])),
                });
            }
            match (&mut joint, &mut split, phase) {
                (Some(opt), _, LrPhase::Joint(_)) => opt.step(model, &grads),
                (_, Some((e, d)), LrPhase::Split { .. }) => {
                    e.step(model, &grads);
                    d.step(model, &grads);
                }
                _ => unreachable!("optimizer created for the current phase"),
            }
            report.total_steps += 1;
            steps += 1;
        }
        let n = count.max(1) as f64;
        let rec = EpochRecord { epoch, steps, dn_loss: sum_dn / n, translator_loss: sum_tr / n, lr_encoder: lr_e, lr_decoder: lr_d };
        log::info!(
            "epoch {epoch}: dn {:.3} translator {:.3} ({steps} steps, lr {lr_e:e}/{lr_d:e})",
            rec.dn_loss,
            rec.translator_loss
        );
        report.epochs.push(rec);
    }
    let polarity = calibrate_polarity(model, data)?;
    log::info!("latent polarity {polarity:?}");
    model.set_polarity(polarity);
    report.polarity = polarity;
    Ok(report)
}

/// Samples used to orient the latent.
const POLARITY_SAMPLES: usize = 16;

/// Sign of the correlation between μ and the CE-LIF targets over the first
/// few samples: the orientation under which the latent reads like the
/// vessel-bright supervision.
pub fn calibrate_polarity<T: Scalar>(model: &LifeModel<T>, data: &[TrainSample<T>]) -> Result<Polarity> {
    let (mut sx, mut sy, mut sxx, mut sxy, mut n) = (0.0f64, 0.0f64, 0.0f64, 0.0f64, 0.0f64);
    for s in data.iter().take(POLARITY_SAMPLES) {
        let out = model.forward_pipeline(&s.raw, None)?;
        Zip::from(&out.latent.mu).and(&s.ce_lif).for_each(|&m, &c| {
            let (x, y) = (m.as_f64(), c.as_f64());
            sx += x;
            sy += y;
            sxx += x * x;
            sxy += x * y;
            n += 1.0;
        });
    }
    // covariance sign; the μ variance only guards against a constant latent
    let cov = sxy - sx * sy / n.max(1.0);
    let var = sxx - sx * sx / n.max(1.0);
    Ok(if var > 0.0 && cov < 0.0 { Polarity::Negative } else { Polarity::Positive })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::LifeConfig;

    fn tiny(epochs: usize) -> LifeConfig {
        LifeConfig { dn_channels: vec![2, 3], enc_channels: vec![2, 3], dec_channels: vec![2], epochs, ..Default::default() }
    }

    fn sample(seed: usize) -> TrainSample<f64> {
        let f = |k: usize| Array2::from_shape_fn((8, 8), |(y, x)| ((y * 5 + x * 3 + k + seed) % 17) as f64 * 12.0);
        TrainSample { raw: f(0), lif: f(1), ce_lif: f(2) }
    }

    #[test]
    fn empty_dataset_rejected() {
        let mut m = LifeModel::<f32>::new(tiny(1)).unwrap();
        assert!(matches!(train(&mut m, &[], &TrainOptions::default()), Err(NetError::EmptyDataset)));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut m = LifeModel::<f64>::new(tiny(1)).unwrap();
        let ids: Vec<ParamId> = m.params().ids().collect();
        let before: Vec<Array4<f64>> = ids.iter().map(|id| m.params().value(*id).clone()).collect();
        let grads: Vec<Array4<f64>> = before.iter().map(|p| Array4::from_elem(p.raw_dim(), 3.0)).collect();
        let mut opt = Adam::new(&m, ids.clone(), 0.01);
        opt.step(&mut m, &grads);
        // bias-corrected first step is lr·g/|g| up to ε
        for (id, b) in ids.iter().zip(&before) {
            for (a, b) in m.params().value(*id).iter().zip(b.iter()) {
                assert!((b - a - 0.01).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn parallel_and_serial_agree() {
        let data: Vec<_> = (0..4).map(sample).collect();
        let mut a = LifeModel::<f64>::new(tiny(1)).unwrap();
        let mut b = LifeModel::<f64>::new(tiny(1)).unwrap();
        let ra = train(&mut a, &data, &TrainOptions::default()).unwrap();
        let rb = train(&mut b, &data, &TrainOptions { data_parallel: true, ..Default::default() }).unwrap();
        assert_eq!(ra, rb);
        for ((_, x), (_, y)) in a.params().iter().zip(b.params().iter()) {
            assert_eq!(x, y);
        }
    }

    #[test]
    fn schedule_recorded_per_epoch() {
        let data: Vec<_> = (0..2).map(sample).collect();
        let mut m = LifeModel::<f64>::new(tiny(7)).unwrap();
        let r = train(&mut m, &data, &TrainOptions::default()).unwrap();
        assert_eq!(r.epochs.len(), 7);
        assert_eq!(r.total_steps, 7);
        assert_eq!((r.epochs[2].lr_encoder, r.epochs[2].lr_decoder), (1e-3, 1e-3));
        assert_eq!((r.epochs[3].lr_encoder, r.epochs[3].lr_decoder), (2e-3, 1e-4));
        assert_eq!((r.epochs[6].lr_encoder, r.epochs[6].lr_decoder), (1e-3, 5e-5));
        assert!(r.to_csv().starts_with("epoch,steps,dn_loss,translator_loss"));
    }

    #[test]
    fn flipped_samples_train() {
        let mut s = sample(0);
        s.raw.invert_axis(ndarray::Axis(1));
        s.ce_lif.invert_axis(ndarray::Axis(0));
        let mut m = LifeModel::<f64>::new(tiny(1)).unwrap();
        assert_eq!(train(&mut m, &[s], &TrainOptions::default()).unwrap().total_steps, 1);
    }

    #[test]
    fn window_clamped_to_slice() {
        let v = Volume3D::from_vec([2, 6, 5], (0..60).map(|i| i as f32).collect()).unwrap();
        let aug = AugmentationSpec { window: (64, 64), windows_per_slice: 3, ..Default::default() };
        let d = build_dataset(&[(&v, &v, &v)], &aug).unwrap();
        assert_eq!(d.len(), 6);
        assert!(d.iter().all(|s| s.raw.dim() == (6, 5) && s.raw == s.lif && s.lif == s.ce_lif));
    }
}
