//! Parameter storage and the building blocks of the three sub-networks.

use ndarray::Array4;
use octa_core::Scalar;
use rand::Rng;

use crate::error::Result;
use crate::tape::{Graph, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

/// Named parameter arrays in construction order.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    values: Vec<Array4<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub(crate) fn add(&mut self, name: String, value: Array4<T>) -> ParamId {
        debug_assert!(!self.names.contains(&name), "duplicate parameter {name}");
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Total number of scalars.
    pub fn size(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Array4<T> {
        &self.values[id.0]
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array4<T> {
        &mut self.values[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.values.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array4<T>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    /// Records every parameter as a differentiable leaf of `g`.
    pub fn bind(&self, g: &mut Graph<T>) -> Vec<Var> {
        self.values.iter().map(|v| g.leaf(v.clone())).collect()
    }
}

/// Construction context: parameter sink and init RNG.
pub(crate) struct Builder<'a, T, R> {
    pub store: &'a mut ParamStore<T>,
    pub rng: &'a mut R,
}

impl<T: Scalar, R: Rng> Builder<'_, T, R> {
    /// Kaiming-uniform over fan-in: `U(−√(6/fan_in), √(6/fan_in))`.
    fn kaiming(&mut self, name: String, shape: (usize, usize, usize, usize)) -> ParamId {
        let fan_in = (shape.1 * shape.2 * shape.3) as f64;
        let bound = (6.0 / fan_in).sqrt();
        let v = Array4::from_shape_simple_fn(shape, || T::lit(self.rng.random_range(-bound..bound)));
        self.store.add(name, v)
    }

    fn constant(&mut self, name: String, c: usize, value: f64) -> ParamId {
        self.store.add(name, Array4::from_elem((1, c, 1, 1), T::lit(value)))
    }
}

pub(crate) struct Conv {
    w: ParamId,
    b: Option<ParamId>,
}

impl Conv {
    pub fn new<T: Scalar, R: Rng>(bd: &mut Builder<T, R>, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self::with_bias(bd, name, cin, cout, k, 0.0)
    }

    pub fn with_bias<T: Scalar, R: Rng>(bd: &mut Builder<T, R>, name: &str, cin: usize, cout: usize, k: usize, bias: f64) -> Self {
        let w = bd.kaiming(format!("{name}.w"), (cout, cin, k, k));
        let b = Some(bd.constant(format!("{name}.b"), cout, bias));
        Self { w, b }
    }

    /// Zero weights and bias: the last conv of a residual branch, so the
    /// branch starts as the identity and learns a correction.
    pub fn zeroed<T: Scalar, R: Rng>(bd: &mut Builder<T, R>, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        let w = bd.store.add(format!("{name}.w"), Array4::zeros((cout, cin, k, k)));
        let b = Some(bd.constant(format!("{name}.b"), cout, 0.0));
        Self { w, b }
    }

    /// For convs feeding a normalization, which would cancel the bias anyway.
    pub fn unbiased<T: Scalar, R: Rng>(bd: &mut Builder<T, R>, name: &str, cin: usize, cout: usize, k: usize) -> Self {
        Self { w: bd.kaiming(format!("{name}.w"), (cout, cin, k, k)), b: None }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        g.conv2d(x, p[self.w.0], self.b.map(|b| p[b.0]))
    }
}

pub(crate) struct Norm {
    gamma: ParamId,
    beta: ParamId,
}

impl Norm {
    pub fn new<T: Scalar, R: Rng>(bd: &mut Builder<T, R>, name: &str, c: usize) -> Self {
        let gamma = bd.constant(format!("{name}.gamma"), c, 1.0);
        let beta = bd.constant(format!("{name}.beta"), c, 0.0);
        Self { gamma, beta }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        g.instance_norm(x, p[self.gamma.0], p[self.beta.0])
    }
}

/// 3×3 conv → instance norm → ReLU.
pub(crate) struct ConvNormRelu {
    conv: Conv,
    norm: Norm,
}

impl ConvNormRelu {
    pub fn new<T: Scalar, R: Rng>(bd: &mut Builder<T, R>, name: &str, cin: usize, cout: usize) -> Self {
        Self { conv: Conv::unbiased(bd, &format!("{name}.conv"), cin, cout, 3), norm: Norm::new(bd, &format!("{name}.norm"), cout) }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let h = self.conv.forward(g, p, x)?;
        let h = self.norm.forward(g, p, h)?;
        g.relu(h)
    }
}

/// `relu(IN(conv(cnr(x))) + skip(x))`, `skip` a 1×1 conv when widths differ.
pub(crate) struct ResBlock {
    first: ConvNormRelu,
    conv: Conv,
    norm: Norm,
    skip: Option<Conv>,
}

impl ResBlock {
    pub fn new<T: Scalar, R: Rng>(bd: &mut Builder<T, R>, name: &str, cin: usize, cout: usize) -> Self {
        Self {
            first: ConvNormRelu::new(bd, &format!("{name}.c1"), cin, cout),
            conv: Conv::unbiased(bd, &format!("{name}.c2"), cout, cout, 3),
            norm: Norm::new(bd, &format!("{name}.n2"), cout),
            skip: (cin != cout).then(|| Conv::new(bd, &format!("{name}.skip"), cin, cout, 1)),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let h = self.first.forward(g, p, x)?;
        let h = self.conv.forward(g, p, h)?;
        let h = self.norm.forward(g, p, h)?;
        let s = match &self.skip {
            Some(c) => c.forward(g, p, x)?,
            None => x,
        };
        let h = g.add(h, s)?;
        g.relu(h)
    }
}

/// One shared-weight conv unit applied `t` times, re-adding the block input
/// before every application after the first.
pub(crate) struct RecurrentBlock {
    unit: ConvNormRelu,
    t: usize,
}

impl RecurrentBlock {
    pub fn new<T: Scalar, R: Rng>(bd: &mut Builder<T, R>, name: &str, c: usize, t: usize) -> Self {
        Self { unit: ConvNormRelu::new(bd, name, c, c), t }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let mut h = self.unit.forward(g, p, x)?;
        for _ in 1..self.t {
            let s = g.add(x, h)?;
            h = self.unit.forward(g, p, s)?;
        }
        Ok(h)
    }
}

/// Recurrent-residual unit: 1×1 projection, two recurrent blocks, residual sum.
pub(crate) struct RecurrentResidual {
    proj: Conv,
    r1: RecurrentBlock,
    r2: RecurrentBlock,
}

impl RecurrentResidual {
    pub fn new<T: Scalar, R: Rng>(bd: &mut Builder<T, R>, name: &str, cin: usize, cout: usize, t: usize) -> Self {
        Self {
            proj: Conv::new(bd, &format!("{name}.proj"), cin, cout, 1),
            r1: RecurrentBlock::new(bd, &format!("{name}.r1"), cout, t),
            r2: RecurrentBlock::new(bd, &format!("{name}.r2"), cout, t),
        }
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let x0 = self.proj.forward(g, p, x)?;
        let h = self.r1.forward(g, p, x0)?;
        let h = self.r2.forward(g, p, h)?;
        g.add(x0, h)
    }
}

/// Residual U-Net. A single width still gets one down/up level.
pub(crate) struct ResUNet {
    down: Vec<ResBlock>,
    up: Vec<ResBlock>,
    out: Conv,
}

fn level_widths(widths: &[usize]) -> Vec<usize> {
    match widths {
        [w] => vec![*w, *w],
        ws => ws.to_vec(),
    }
}

impl ResUNet {
    pub fn new<T: Scalar, R: Rng>(bd: &mut Builder<T, R>, name: &str, widths: &[usize], cin: usize, cout: usize) -> Self {
        let ws = level_widths(widths);
        let down = ws
            .iter()
            .enumerate()
            .map(|(i, &w)| ResBlock::new(bd, &format!("{name}.down{i}"), if i == 0 { cin } else { ws[i - 1] }, w))
            .collect();
        let up = (0..ws.len() - 1)
            .rev()
            .map(|i| ResBlock::new(bd, &format!("{name}.up{i}"), ws[i + 1] + ws[i], ws[i]))
            .collect();
        let out = Conv::zeroed(bd, &format!("{name}.out"), ws[0], cout, 1);
        Self { down, up, out }
    }

    pub fn levels(&self) -> usize {
        self.down.len()
    }

    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<Var> {
        let mut skips = Vec::with_capacity(self.down.len());
        let mut h = self.down[0].forward(g, p, x)?;
        for block in &self.down[1..] {
            skips.push(h);
            let pooled = g.max_pool2(h)?;
            h = block.forward(g, p, pooled)?;
        }
        for block in &self.up {
            let skip = skips.pop().expect("one skip per level");
            let u = g.upsample2(h)?;
            let cat = g.concat(u, skip)?;
            h = block.forward(g, p, cat)?;
        }
        self.out.forward(g, p, h)
    }
}

/// R2U-Net body with μ and σ heads at full resolution.
pub(crate) struct R2UEncoder {
    down: Vec<RecurrentResidual>,
    up_conv: Vec<ConvNormRelu>,
    up: Vec<RecurrentResidual>,
    mu: Conv,
    sigma: Conv,
}

impl R2UEncoder {
    pub fn new<T: Scalar, R: Rng>(bd: &mut Builder<T, R>, name: &str, widths: &[usize], t: usize, sigma_bias: f64) -> Self {
        let ws = level_widths(widths);
        let down = ws
            .iter()
            .enumerate()
            .map(|(i, &w)| RecurrentResidual::new(bd, &format!("{name}.down{i}"), if i == 0 { 1 } else { ws[i - 1] }, w, t))
            .collect();
        let mut up_conv = Vec::new();
        let mut up = Vec::new();
        for i in (0..ws.len() - 1).rev() {
            up_conv.push(ConvNormRelu::new(bd, &format!("{name}.upconv{i}"), ws[i + 1], ws[i]));
            up.push(RecurrentResidual::new(bd, &format!("{name}.up{i}"), 2 * ws[i], ws[i], t));
        }
        let mu = Conv::zeroed(bd, &format!("{name}.mu"), ws[0], 1, 1);
        let sigma = Conv::with_bias(bd, &format!("{name}.sigma"), ws[0], 1, 1, sigma_bias);
        Self { down, up_conv, up, mu, sigma }
    }

    pub fn levels(&self) -> usize {
        self.down.len()
    }

    /// Returns `(μ head, σ)`; σ passes through softplus.
    pub fn forward<T: Scalar>(&self, g: &mut Graph<T>, p: &[Var], x: Var) -> Result<(Var, Var)> {
        let mut skips = Vec::with_capacity(self.down.len());
        let mut h = self.down[0].forward(g, p, x)?;
        for block in &self.down[1..] {
            skips.push(h);
            let pooled = g.max_pool2(h)?;
            h = block.forward(g, p, pooled)?;
        }
        for (uc, block) in self.up_conv.iter().zip(&self.up) {
            let skip = skips.pop().expect("one skip per level");
            let u = g.upsample2(h)?;
            let u = uc.forward(g, p, u)?;
            let cat = g.concat(skip, u)?;
            h = block.forward(g, p, cat)?;
        }
        let mu = self.mu.forward(g, p, h)?;
        let s = self.sigma.forward(g, p, h)?;
        let sigma = g.softplus(s)?;
        Ok((mu, sigma))
    }
}
