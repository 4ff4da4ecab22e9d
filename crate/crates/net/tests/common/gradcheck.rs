//! Central finite-difference oracle for the tape.
//!
//! Each input coordinate is nudged by ±h and the scalar output re-evaluated
//! from scratch, with the base point's piecewise decisions (ReLU sign,
//! pooling winner, L1 sign) pinned. The error of an input tensor is
//! `‖a − n‖∞ / max(‖a‖∞, ‖n‖∞)` over the checked coordinates.

#![allow(dead_code)]

use ndarray::Array4;
use octa_net::{Graph, KinkPattern, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;
pub const TOL: f64 = 1e-3;

#[derive(Clone, Debug, Default)]
pub struct CheckReport {
    pub max_rel: f64,
    /// Input index holding `max_rel`.
    pub worst: usize,
    pub checked: usize,
}

impl CheckReport {
    pub fn merge(&mut self, o: &CheckReport) {
        if o.max_rel > self.max_rel {
            self.max_rel = o.max_rel;
            self.worst = o.worst;
        }
        self.checked += o.checked;
    }
}

/// Loss at `inputs`, evaluated on the smooth piece described by `pattern`.
fn evaluate<F>(inputs: &[Array4<f64>], pattern: &KinkPattern, build: &F) -> f64
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut g = Graph::pinned(pattern.clone());
    let vars: Vec<Var> = inputs.iter().map(|v| g.leaf(v.clone())).collect();
    let out = build(&mut g, &vars);
    g.scalar(out)
}

/// Checks `d build / d inputs[i]` at every coordinate, for every `i` in `which`.
pub fn check<F>(inputs: &[Array4<f64>], which: &[usize], build: F) -> CheckReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    check_sampled(inputs, which, build, usize::MAX, 0)
}

/// As [`check`], but at most `per_tensor` coordinates per input, drawn
/// without replacement from `seed`.
///
/// Central differences are taken with the base point's ReLU / max-pool / L1
/// decisions pinned, so `f(x±h)` stays on the piece whose derivative the
/// tape reports. Exactly at a kink the pinned piece follows the tape's own
/// convention (zero ReLU input inactive, zero L1 difference weightless,
/// first pooling maximum wins).
pub fn check_sampled<F>(inputs: &[Array4<f64>], which: &[usize], build: F, per_tensor: usize, seed: u64) -> CheckReport
where
    F: Fn(&mut Graph<f64>, &[Var]) -> Var,
{
    let mut picker = rng(seed ^ 0x5EED);
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|v| g.leaf(v.clone())).collect();
    let out = build(&mut g, &vars);
    let pattern = g.kink_pattern();
    g.backward(out).unwrap();
    let analytic: Vec<Array4<f64>> =
        vars.iter().zip(inputs).map(|(v, x)| g.grad(*v).cloned().unwrap_or_else(|| Array4::zeros(x.raw_dim()))).collect();

    let mut report = CheckReport::default();
    let mut work = inputs.to_vec();
    for &i in which {
        let (mut err, mut scale) = (0.0f64, 0.0f64);
        let n = inputs[i].len();
        let coords: Vec<usize> = if n <= per_tensor {
            (0..n).collect()
        } else {
            rand::seq::index::sample(&mut picker, n, per_tensor).into_vec()
        };
        for j in coords {
            let orig = inputs[i].as_slice().unwrap()[j];
            work[i].as_slice_mut().unwrap()[j] = orig + H;
            let fp = evaluate(&work, &pattern, &build);
            work[i].as_slice_mut().unwrap()[j] = orig - H;
            let fm = evaluate(&work, &pattern, &build);
            work[i].as_slice_mut().unwrap()[j] = orig;
            let numeric = (fp - fm) / (2.0 * H);
            let a = analytic[i].as_slice().unwrap()[j];
            err = err.max((a - numeric).abs());
            scale = scale.max(a.abs()).max(numeric.abs());
            report.checked += 1;
        }
        if scale > 0.0 && err / scale > report.max_rel {
            report.max_rel = err / scale;
            report.worst = i;
        }
    }
    report
}

pub fn uniform(rng: &mut ChaCha8Rng, shape: (usize, usize, usize, usize), lo: f64, hi: f64) -> Array4<f64> {
    Array4::from_shape_simple_fn(shape, || rng.random_range(lo..hi))
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Smooth scalar reduction of a tensor: squared distance to a fixed target.
pub fn reduce(g: &mut Graph<f64>, out: Var, seed: u64) -> Var {
    let mut r = rng(seed ^ 0xABCD);
    let shape = g.shape(out);
    let target = g.constant(uniform(&mut r, (shape[0], shape[1], shape[2], shape[3]), -1.0, 1.0));
    g.loss_l1l2(target, out, 0.0, 1.0).unwrap()
}

/// One named op under test: builds random inputs for `seed`, lists which of
/// them are differentiated, and the graph builder.
pub struct OpCase {
    pub name: &'static str,
    pub inputs: Vec<Array4<f64>>,
    pub which: Vec<usize>,
    pub build: Box<dyn Fn(&mut Graph<f64>, &[Var]) -> Var>,
}

pub fn op_cases(seed: u64) -> Vec<OpCase> {
    let mut r = rng(seed);
    let x = uniform(&mut r, (1, 2, 6, 6), -1.0, 1.0);
    let mut cases = vec![
        OpCase {
            name: "conv2d 3x3",
            inputs: vec![x.clone(), uniform(&mut r, (3, 2, 3, 3), -0.5, 0.5), uniform(&mut r, (1, 3, 1, 1), -0.5, 0.5)],
            which: vec![0, 1, 2],
            build: Box::new(move |g, v| {
                let o = g.conv2d(v[0], v[1], Some(v[2])).unwrap();
                reduce(g, o, seed)
            }),
        },
        OpCase {
            name: "conv2d 1x1",
            inputs: vec![x.clone(), uniform(&mut r, (4, 2, 1, 1), -0.5, 0.5)],
            which: vec![0, 1],
            build: Box::new(move |g, v| {
                let o = g.conv2d(v[0], v[1], None).unwrap();
                reduce(g, o, seed)
            }),
        },
        OpCase {
            name: "add",
            inputs: vec![x.clone(), uniform(&mut r, (1, 2, 6, 6), -1.0, 1.0)],
            which: vec![0, 1],
            build: Box::new(move |g, v| {
                let o = g.add(v[0], v[1]).unwrap();
                reduce(g, o, seed)
            }),
        },
        OpCase {
            name: "concat",
            inputs: vec![x.clone(), uniform(&mut r, (1, 1, 6, 6), -1.0, 1.0)],
            which: vec![0, 1],
            build: Box::new(move |g, v| {
                let o = g.concat(v[0], v[1]).unwrap();
                reduce(g, o, seed)
            }),
        },
        OpCase {
            name: "relu",
            inputs: vec![x.clone()],
            which: vec![0],
            build: Box::new(move |g, v| {
                let o = g.relu(v[0]).unwrap();
                reduce(g, o, seed)
            }),
        },
        OpCase {
            name: "instance_norm",
            inputs: vec![x.clone(), uniform(&mut r, (1, 2, 1, 1), 0.5, 1.5), uniform(&mut r, (1, 2, 1, 1), -0.5, 0.5)],
            which: vec![0, 1, 2],
            build: Box::new(move |g, v| {
                let o = g.instance_norm(v[0], v[1], v[2]).unwrap();
                reduce(g, o, seed)
            }),
        },
        OpCase {
            name: "max_pool2",
            inputs: vec![x.clone()],
            which: vec![0],
            build: Box::new(move |g, v| {
                let o = g.max_pool2(v[0]).unwrap();
                reduce(g, o, seed)
            }),
        },
        OpCase {
            name: "upsample2",
            inputs: vec![x.clone()],
            which: vec![0],
            build: Box::new(move |g, v| {
                let o = g.upsample2(v[0]).unwrap();
                reduce(g, o, seed)
            }),
        },
        OpCase {
            name: "softplus",
            inputs: vec![uniform(&mut r, (1, 2, 6, 6), -4.0, 4.0)],
            which: vec![0],
            build: Box::new(move |g, v| {
                let o = g.softplus(v[0]).unwrap();
                reduce(g, o, seed)
            }),
        },
        OpCase {
            name: "scale",
            inputs: vec![x.clone()],
            which: vec![0],
            build: Box::new(move |g, v| {
                let o = g.scale(v[0], -2.5).unwrap();
                reduce(g, o, seed)
            }),
        },
    ];
    let eps = uniform(&mut r, (1, 2, 6, 6), -2.0, 2.0);
    cases.push(OpCase {
        name: "reparameterize",
        inputs: vec![x.clone(), uniform(&mut r, (1, 2, 6, 6), 0.1, 2.0)],
        which: vec![0, 1],
        build: Box::new(move |g, v| {
            let o = g.reparameterize(v[0], v[1], eps.clone()).unwrap();
            reduce(g, o, seed)
        }),
    });
    cases.push(OpCase {
        name: "loss_l1l2",
        inputs: vec![x, uniform(&mut r, (1, 2, 6, 6), -1.0, 1.0)],
        which: vec![0, 1],
        build: Box::new(|g, v| g.loss_l1l2(v[0], v[1], 1.0, 0.05).unwrap()),
    });
    cases
}

/// Widths small enough for an 8×8 input with three encoder levels.
pub fn tiny_config(seed: u64) -> octa_net::LifeConfig {
    octa_net::LifeConfig {
        dn_channels: vec![4, 4],
        enc_channels: vec![4, 4],
        dec_channels: vec![4],
        seed,
        ..Default::default()
    }
}

/// A random linear readout of every `forward_pipeline` output (x_dn, μ, σ,
/// S, y_syn) on a random 1×1×8×8 raw patch, differentiated with respect to
/// the input and every parameter: a vector-Jacobian check of the whole
/// pipeline. The training loss has its own op check.
pub fn pipeline_case(seed: u64) -> OpCase {
    let model = octa_net::LifeModel::<f64>::new(tiny_config(seed)).unwrap();
    let mut r = rng(seed);
    let shape = (1, 1, 8, 8);
    let raw = uniform(&mut r, shape, 0.0, 255.0);
    let eps = octa_net::model::standard_normal::<f64>(shape, seed);
    // x_dn and y_syn are on the [0, 255] scale, the latent maps on [0, 1]
    let probes: Vec<Array4<f64>> =
        [1.0 / 255.0, 1.0, 1.0, 1.0, 1.0 / 255.0].iter().map(|&k| uniform(&mut r, shape, 0.5, 1.5) * k).collect();
    let mut inputs = vec![raw];
    // residual-branch heads start at zero, which would leave everything
    // upstream of them with an identically zero gradient
    inputs.extend(model.params().iter().map(|(_, v)| {
        if v.iter().all(|&x| x == 0.0) {
            uniform(&mut r, v.dim(), -0.5, 0.5)
        } else {
            v.clone()
        }
    }));
    let which = (0..inputs.len()).collect();
    OpCase {
        name: "forward_pipeline",
        inputs,
        which,
        build: Box::new(move |g, v| {
            let f = model.forward(g, &v[1..], v[0], Some(eps.clone())).unwrap();
            let zero = g.constant(Array4::zeros(shape));
            let mut total = None;
            for (out, probe) in [f.x_dn, f.mu, f.sigma, f.sample, f.y_syn].into_iter().zip(&probes) {
                // out ⊙ probe through the elementwise reparameterization op,
                // then Σ |·|, which is linear once the signs are pinned
                let weighted = g.reparameterize(zero, out, probe.clone()).unwrap();
                let term = g.loss_l1l2(zero, weighted, 1.0, 0.0).unwrap();
                total = Some(match total {
                    Some(t) => g.add(t, term).unwrap(),
                    None => term,
                });
            }
            total.expect("five outputs")
        }),
    }
}

/// Coordinates sampled per tensor in the composed check; the 8×8 input
/// (64 coordinates) is covered in full.
pub const PIPELINE_COORDS: usize = 24;
