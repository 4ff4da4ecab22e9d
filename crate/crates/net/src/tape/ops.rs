use ndarray::{concatenate, s, Array2, Array4, Axis, Zip};
use octa_core::Scalar;

use super::{conv, Graph, Inputs, Kink, Op, Var};
use crate::error::{NetError, Result};

pub const NORM_EPS: f64 = 1e-5;

fn pattern_mismatch(op: &'static str) -> NetError {
    NetError::Config(format!("{op}: pinned kink pattern does not match the graph"))
}

fn same_shape<T>(op: &'static str, a: &Array4<T>, b: &Array4<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(NetError::shape(op, format!("{:?} vs {:?}", a.shape(), b.shape())));
    }
    Ok(())
}

fn softplus<T: Scalar>(x: T) -> T {
    // max(x, 0) + ln(1 + e^{-|x|}) never overflows
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}

fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl<T: Scalar> Graph<T> {
    /// Same-padded, stride-1 convolution. `w` is `(Cout, Cin, k, k)` with odd
    /// `k`; `b` is `(1, Cout, 1, 1)`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var> {
        let (xv, wv) = (self.value(x), self.value(w));
        let (_, cin, _, _) = xv.dim();
        let (cout, wcin, kh, kw) = wv.dim();
        if wcin != cin || kh != kw || kh % 2 == 0 {
            return Err(NetError::shape(
                "conv2d",
                format!("input {:?} with kernel {:?}", xv.shape(), wv.shape()),
            ));
        }
        if let Some(b) = b {
            if self.value(b).dim() != (1, cout, 1, 1) {
                return Err(NetError::shape("conv2d", format!("bias {:?} for {cout} outputs", self.value(b).shape())));
            }
        }
        let inputs: Vec<Var> = [Some(x), Some(w), b].into_iter().flatten().collect();
        let keep = self.requires(&inputs);
        let out = conv::forward(xv, wv, b.map(|b| self.value(b)), keep);
        self.push_checked("conv2d", out.value, Op::Conv2d { x, w, b, cols: out.cols }, &inputs)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        same_shape("add", self.value(a), self.value(b))?;
        let v = self.value(a) + self.value(b);
        self.push_checked("add", v, Op::Add(a, b), &[a, b])
    }

    /// Channel concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (na, _, ha, wa) = av.dim();
        let (nb, _, hb, wb) = bv.dim();
        if (na, ha, wa) != (nb, hb, wb) {
            return Err(NetError::shape("concat", format!("{:?} vs {:?}", av.shape(), bv.shape())));
        }
        let v = concatenate(Axis(1), &[av.view(), bv.view()]).expect("checked shapes");
        self.push_checked("concat", v, Op::Concat(a, b), &[a, b])
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let v = match self.next_kink(&[x]) {
            Some(Kink::Active(m)) if m.raw_dim() == self.value(x).raw_dim() => {
                Zip::from(self.value(x)).and(&m).map_collect(|&t, &on| if on { t } else { T::zero() })
            }
            Some(_) => return Err(pattern_mismatch("relu")),
            None => self.value(x).mapv(|t| t.max(T::zero())),
        };
        self.push_checked("relu", v, Op::Relu(x), &[x])
    }

    /// Per-sample, per-channel normalization over `H×W`, then a per-channel
    /// affine map; `gamma` and `beta` are `(1, C, 1, 1)`.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dim();
        for p in [gamma, beta] {
            if self.value(p).dim() != (1, c, 1, 1) {
                return Err(NetError::shape("instance_norm", format!("affine {:?} for {c} channels", self.value(p).shape())));
            }
        }
        let m = T::lit((h * w) as f64);
        let eps = T::lit(NORM_EPS);
        let mut xhat = Array4::zeros((n, c, h, w));
        let mut inv_std = Array2::zeros((n, c));
        let mut out = Array4::zeros((n, c, h, w));
        let (gv, bv) = (self.value(gamma), self.value(beta));
        for i in 0..n {
            for ch in 0..c {
                let plane = xv.slice(s![i, ch, .., ..]);
                let mean = plane.sum() / m;
                let var = plane.fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / m;
                let is = T::one() / (var + eps).sqrt();
                inv_std[[i, ch]] = is;
                let (gm, bt) = (gv[[0, ch, 0, 0]], bv[[0, ch, 0, 0]]);
                Zip::from(xhat.slice_mut(s![i, ch, .., ..]))
                    .and(out.slice_mut(s![i, ch, .., ..]))
                    .and(&plane)
                    .for_each(|xh, o, &v| {
                        *xh = (v - mean) * is;
                        *o = gm * *xh + bt;
                    });
            }
        }
        let rec = self.requires(&[x, gamma, beta]);
        let op = if rec {
            Op::InstanceNorm { x, gamma, beta, xhat, inv_std }
        } else {
            Op::Leaf
        };
        self.push_checked("instance_norm", out, op, &[x, gamma, beta])
    }

    /// 2×2 max pooling, stride 2. Ties go to the first element in raster order.
    pub fn max_pool2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dim();
        if h % 2 != 0 || w % 2 != 0 || h == 0 || w == 0 {
            return Err(NetError::shape("max_pool2", format!("spatial dims {h}x{w} must be even")));
        }
        let mut out = Array4::zeros((n, c, h / 2, w / 2));
        let pinned = match self.next_kink(&[x]) {
            Some(Kink::Winner(a)) if a.dim() == out.dim() => Some(a),
            Some(_) => return Err(pattern_mismatch("max_pool2")),
            None => None,
        };
        let xv = self.value(x);
        if let Some(argmax) = pinned {
            Zip::indexed(&mut out).and(&argmax).for_each(|(i, ch, y, xx), o, &k| {
                *o = xv[[i, ch, 2 * y + (k as usize >> 1), 2 * xx + (k as usize & 1)]];
            });
            return self.push_checked("max_pool2", out, Op::MaxPool2 { x, argmax }, &[x]);
        }
        let mut argmax = Array4::<u8>::zeros((n, c, h / 2, w / 2));
        Zip::indexed(&mut out).and(&mut argmax).for_each(|(i, ch, y, xx), o, a| {
            let mut best = xv[[i, ch, 2 * y, 2 * xx]];
            let mut arg = 0u8;
            for k in 1..4u8 {
                let v = xv[[i, ch, 2 * y + (k as usize >> 1), 2 * xx + (k as usize & 1)]];
                if v > best {
                    best = v;
                    arg = k;
                }
            }
            *o = best;
            *a = arg;
        });
        self.push_checked("max_pool2", out, Op::MaxPool2 { x, argmax }, &[x])
    }

    /// Nearest-neighbor ×2 upsampling.
    pub fn upsample2(&mut self, x: Var) -> Result<Var> {
        let xv = self.value(x);
        let (n, c, h, w) = xv.dim();
        let out = Array4::from_shape_fn((n, c, 2 * h, 2 * w), |(i, ch, y, xx)| xv[[i, ch, y / 2, xx / 2]]);
        self.push_checked("upsample2", out, Op::Upsample2(x), &[x])
    }

    pub fn softplus(&mut self, x: Var) -> Result<Var> {
        let v = self.value(x).mapv(softplus);
        self.push_checked("softplus", v, Op::Softplus(x), &[x])
    }

    pub fn scale(&mut self, x: Var, s: T) -> Result<Var> {
        let v = self.value(x).mapv(|t| t * s);
        self.push_checked("scale", v, Op::Scale(x, s), &[x])
    }

    /// `mu + sigma·eps`; `eps` is a constant, so no gradient reaches it.
    pub fn reparameterize(&mut self, mu: Var, sigma: Var, eps: Array4<T>) -> Result<Var> {
        same_shape("reparameterize", self.value(mu), self.value(sigma))?;
        same_shape("reparameterize", self.value(mu), &eps)?;
        let mut v = self.value(sigma) * &eps;
        v += self.value(mu);
        self.push_checked("reparameterize", v, Op::Reparam { mu, sigma, eps }, &[mu, sigma])
    }

    /// `a·Σ|Y−Y'| + (b/N)·Σ(Y−Y')²` with `N = C·H·W` the per-image pixel
    /// count, averaged over the batch. The L1 subgradient at zero is 0.
    pub fn loss_l1l2(&mut self, y: Var, pred: Var, a: T, b: T) -> Result<Var> {
        same_shape("loss_l1l2", self.value(y), self.value(pred))?;
        let (n, c, h, w) = self.value(y).dim();
        let npx = T::lit((c * h * w) as f64);
        let (mut l1, mut l2) = (T::zero(), T::zero());
        match self.next_kink(&[y, pred]) {
            Some(Kink::Sign(s)) if s.raw_dim() == self.value(y).raw_dim() => {
                Zip::from(self.value(y)).and(self.value(pred)).and(&s).for_each(|&u, &v, &sg| {
                    let d = u - v;
                    l1 += T::lit(f64::from(sg)) * d;
                    l2 += d * d;
                });
            }
            Some(_) => return Err(pattern_mismatch("loss_l1l2")),
            None => Zip::from(self.value(y)).and(self.value(pred)).for_each(|&u, &v| {
                let d = u - v;
                l1 += d.abs();
                l2 += d * d;
            }),
        }
        let loss = (a * l1 + b / npx * l2) / T::lit(n as f64);
        self.push_checked("loss_l1l2", Array4::from_elem((1, 1, 1, 1), loss), Op::LossL1L2 { y, pred, a, b }, &[y, pred])
    }
}

pub(super) fn backward_node<T: Scalar>(op: &Op<T>, g: &Array4<T>, inputs: &mut [super::Node<T>]) {
    let mut inp = Inputs(inputs);
    match op {
        Op::Leaf => {}
        Op::Conv2d { x, w, b, cols, .. } => {
            let need = (inp.wants(*x), inp.wants(*w), b.is_some_and(|b| inp.wants(b)));
            let grads = conv::backward(g, inp.value(*x).dim(), inp.value(*w), cols, need);
            if let Some(dx) = grads.dx {
                inp.add(*x, dx);
            }
            if let Some(dw) = grads.dw {
                inp.add(*w, dw);
            }
            if let (Some(b), Some(db)) = (b, grads.db) {
                inp.add(*b, db);
            }
        }
        Op::Add(a, b) => {
            if inp.wants(*a) {
                inp.add(*a, g.clone());
            }
            if inp.wants(*b) {
                inp.add(*b, g.clone());
            }
        }
        Op::Concat(a, b) => {
            let ca = inp.value(*a).dim().1;
            if inp.wants(*a) {
                inp.add(*a, g.slice(s![.., ..ca, .., ..]).to_owned());
            }
            if inp.wants(*b) {
                inp.add(*b, g.slice(s![.., ca.., .., ..]).to_owned());
            }
        }
        Op::Relu(x) => {
            if inp.wants(*x) {
                let mut d = g.clone();
                Zip::from(&mut d).and(inp.value(*x)).for_each(|d, &v| {
                    if v <= T::zero() {
                        *d = T::zero();
                    }
                });
                inp.add(*x, d);
            }
        }
        Op::InstanceNorm { x, gamma, beta, xhat, inv_std } => {
            let (n, c, h, w) = g.dim();
            let m = T::lit((h * w) as f64);
            let gv = inp.value(*gamma).clone();
            let mut dgamma = Array4::zeros((1, c, 1, 1));
            let mut dbeta = Array4::zeros((1, c, 1, 1));
            let mut dx = Array4::zeros((n, c, h, w));
            for i in 0..n {
                for ch in 0..c {
                    let gp = g.slice(s![i, ch, .., ..]);
                    let xp = xhat.slice(s![i, ch, .., ..]);
                    let (mut s_g, mut s_gx) = (T::zero(), T::zero());
                    Zip::from(&gp).and(&xp).for_each(|&a, &b| {
                        s_g += a;
                        s_gx += a * b;
                    });
                    dgamma[[0, ch, 0, 0]] += s_gx;
                    dbeta[[0, ch, 0, 0]] += s_g;
                    let gm = gv[[0, ch, 0, 0]];
                    let k = inv_std[[i, ch]] / m;
                    // dx = inv_std/M · (M·dxhat − Σdxhat − xhat·Σ(dxhat·xhat)), dxhat = γ·g
                    Zip::from(dx.slice_mut(s![i, ch, .., ..])).and(&gp).and(&xp).for_each(|d, &a, &b| {
                        *d = k * gm * (m * a - s_g - b * s_gx);
                    });
                }
            }
            if inp.wants(*x) {
                inp.add(*x, dx);
            }
            if inp.wants(*gamma) {
                inp.add(*gamma, dgamma);
            }
            if inp.wants(*beta) {
                inp.add(*beta, dbeta);
            }
        }
        Op::MaxPool2 { x, argmax } => {
            if inp.wants(*x) {
                let mut dx = Array4::zeros(inp.value(*x).raw_dim());
                Zip::indexed(g).and(argmax).for_each(|(i, ch, y, xx), &d, &a| {
                    dx[[i, ch, 2 * y + (a as usize >> 1), 2 * xx + (a as usize & 1)]] = d;
                });
                inp.add(*x, dx);
            }
        }
        Op::Upsample2(x) => {
            if inp.wants(*x) {
                let mut dx = Array4::zeros(inp.value(*x).raw_dim());
                Zip::indexed(g).for_each(|(i, ch, y, xx), &d| dx[[i, ch, y / 2, xx / 2]] += d);
                inp.add(*x, dx);
            }
        }
        Op::Softplus(x) => {
            if inp.wants(*x) {
                let mut d = g.clone();
                Zip::from(&mut d).and(inp.value(*x)).for_each(|d, &v| *d = *d * sigmoid(v));
                inp.add(*x, d);
            }
        }
        Op::Scale(x, s) => {
            if inp.wants(*x) {
                inp.add(*x, g.mapv(|d| d * *s));
            }
        }
        Op::Reparam { mu, sigma, eps } => {
            if inp.wants(*mu) {
                inp.add(*mu, g.clone());
            }
            if inp.wants(*sigma) {
                inp.add(*sigma, g * eps);
            }
        }
        Op::LossL1L2 { y, pred, a, b } => {
            let gl = g[[0, 0, 0, 0]];
            let (n, c, h, w) = inp.value(*y).dim();
            let npx = T::lit((c * h * w) as f64);
            let scale = gl / T::lit(n as f64);
            let two = T::lit(2.0);
            // d/dY of a|d| + (b/N)d², d = Y − Y'
            let mut dy = Array4::zeros((n, c, h, w));
            Zip::from(&mut dy).and(inp.value(*y)).and(inp.value(*pred)).for_each(|o, &u, &v| {
                let d = u - v;
                let sign = if d > T::zero() {
                    T::one()
                } else if d < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                };
                *o = scale * (*a * sign + two * *b / npx * d);
            });
            if inp.wants(*pred) {
                inp.add(*pred, dy.mapv(|v| -v));
            }
            if inp.wants(*y) {
                inp.add(*y, dy);
            }
        }
    }
}
