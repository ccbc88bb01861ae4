//! Parameter storage. Linear maps are stored `in × out`, so a layer is
//! `y = x · W + b` on row-major activations.

use rand_distr::{Distribution, StandardNormal};

use super::ModelConfig;
use crate::error::{Error, Result};
use crate::rng::StreamRng;
use crate::scalar::Scalar;

pub const INIT_STD: f64 = 0.02;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Self { shape: shape.to_vec(), data: vec![T::zero(); shape.iter().product()] }
    }

    pub fn filled(shape: &[usize], v: T) -> Self {
        Self { shape: shape.to_vec(), data: vec![v; shape.iter().product()] }
    }

    fn normal(shape: &[usize], rng: &mut StreamRng) -> Self {
        let data = (0..shape.iter().product())
            .map(|_| T::of(INIT_STD * truncated_normal(rng)))
            .collect();
        Self { shape: shape.to_vec(), data }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|x| U::of(x.as_f64())).collect() }
    }
}

/// Standard normal truncated to `[-2, 2]` by rejection.
fn truncated_normal(rng: &mut StreamRng) -> f64 {
    loop {
        let z: f64 = StandardNormal.sample(rng);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Whether AdamW applies weight decay to a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    /// Weight matrices and embedding tables.
    Decay,
    /// Biases and layer-norm parameters.
    NoDecay,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams<T> {
    pub ln1_gain: Tensor<T>,
    pub ln1_bias: Tensor<T>,
    pub qkv_weight: Tensor<T>,
    pub qkv_bias: Tensor<T>,
    pub out_weight: Tensor<T>,
    pub out_bias: Tensor<T>,
    pub ln2_gain: Tensor<T>,
    pub ln2_bias: Tensor<T>,
    pub fc_weight: Tensor<T>,
    pub fc_bias: Tensor<T>,
    pub proj_weight: Tensor<T>,
    pub proj_bias: Tensor<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub state_weight: Tensor<T>,
    pub state_bias: Tensor<T>,
    pub action_table: Tensor<T>,
    pub rtg_weight: Option<Tensor<T>>,
    pub rtg_bias: Option<Tensor<T>>,
    pub ctg_weight: Option<Tensor<T>>,
    pub ctg_bias: Option<Tensor<T>>,
    pub timestep_table: Tensor<T>,
    pub lambda_table: Option<Tensor<T>>,
    pub embed_ln_gain: Tensor<T>,
    pub embed_ln_bias: Tensor<T>,
    pub blocks: Vec<BlockParams<T>>,
    pub final_ln_gain: Tensor<T>,
    pub final_ln_bias: Tensor<T>,
    pub head_weight: Tensor<T>,
    pub head_bias: Tensor<T>,
}

/// Build every tensor of `config` in canonical order.
fn build<T: Scalar>(
    config: &ModelConfig,
    mut weight: impl FnMut(&[usize]) -> Tensor<T>,
    mut zero: impl FnMut(&[usize]) -> Tensor<T>,
    mut one: impl FnMut(&[usize]) -> Tensor<T>,
) -> ModelParams<T> {
    let d = config.embed_dim;
    let v = config.variant;
    let state_weight = weight(&[config.state_dim, d]);
    let state_bias = zero(&[d]);
    let action_table = weight(&[config.n_actions, d]);
    let rtg_weight = v.uses_rtg().then(|| weight(&[d]));
    let rtg_bias = v.uses_rtg().then(|| zero(&[d]));
    let ctg_weight = v.uses_ctg().then(|| weight(&[d]));
    let ctg_bias = v.uses_ctg().then(|| zero(&[d]));
    let timestep_table = weight(&[config.max_timestep, d]);
    let lambda_table = v.uses_lambda().then(|| weight(&[config.lambda_buckets, d]));
    let embed_ln_gain = one(&[d]);
    let embed_ln_bias = zero(&[d]);
    let blocks = (0..config.n_layers)
        .map(|_| BlockParams {
            ln1_gain: one(&[d]),
            ln1_bias: zero(&[d]),
            qkv_weight: weight(&[d, 3 * d]),
            qkv_bias: zero(&[3 * d]),
            out_weight: weight(&[d, d]),
            out_bias: zero(&[d]),
            ln2_gain: one(&[d]),
            ln2_bias: zero(&[d]),
            fc_weight: weight(&[d, 4 * d]),
            fc_bias: zero(&[4 * d]),
            proj_weight: weight(&[4 * d, d]),
            proj_bias: zero(&[d]),
        })
        .collect();
    ModelParams {
        config: config.clone(),
        state_weight,
        state_bias,
        action_table,
        rtg_weight,
        rtg_bias,
        ctg_weight,
        ctg_bias,
        timestep_table,
        lambda_table,
        embed_ln_gain,
        embed_ln_bias,
        blocks,
        final_ln_gain: one(&[d]),
        final_ln_bias: zero(&[d]),
        head_weight: weight(&[d, config.n_actions]),
        head_bias: zero(&[config.n_actions]),
    }
}

macro_rules! visit_body {
    ($self:ident, $f:ident, $iter:ident, $($r:tt)*) => {{
        $f("embed.state.weight", ParamKind::Decay, & $($r)* $self.state_weight);
        $f("embed.state.bias", ParamKind::NoDecay, & $($r)* $self.state_bias);
        $f("embed.action", ParamKind::Decay, & $($r)* $self.action_table);
        if let Some(t) = & $($r)* $self.rtg_weight { $f("embed.rtg.weight", ParamKind::Decay, t); }
        if let Some(t) = & $($r)* $self.rtg_bias { $f("embed.rtg.bias", ParamKind::NoDecay, t); }
        if let Some(t) = & $($r)* $self.ctg_weight { $f("embed.ctg.weight", ParamKind::Decay, t); }
        if let Some(t) = & $($r)* $self.ctg_bias { $f("embed.ctg.bias", ParamKind::NoDecay, t); }
        $f("embed.timestep", ParamKind::Decay, & $($r)* $self.timestep_table);
        if let Some(t) = & $($r)* $self.lambda_table { $f("embed.lambda", ParamKind::Decay, t); }
        $f("embed.ln.gain", ParamKind::NoDecay, & $($r)* $self.embed_ln_gain);
        $f("embed.ln.bias", ParamKind::NoDecay, & $($r)* $self.embed_ln_bias);
        for (i, b) in $self.blocks.$iter().enumerate() {
            let n = |s: &str| format!("blocks.{i}.{s}");
            $f(&n("ln1.gain"), ParamKind::NoDecay, & $($r)* b.ln1_gain);
            $f(&n("ln1.bias"), ParamKind::NoDecay, & $($r)* b.ln1_bias);
            $f(&n("attn.qkv.weight"), ParamKind::Decay, & $($r)* b.qkv_weight);
            $f(&n("attn.qkv.bias"), ParamKind::NoDecay, & $($r)* b.qkv_bias);
            $f(&n("attn.out.weight"), ParamKind::Decay, & $($r)* b.out_weight);
            $f(&n("attn.out.bias"), ParamKind::NoDecay, & $($r)* b.out_bias);
            $f(&n("ln2.gain"), ParamKind::NoDecay, & $($r)* b.ln2_gain);
            $f(&n("ln2.bias"), ParamKind::NoDecay, & $($r)* b.ln2_bias);
            $f(&n("mlp.fc.weight"), ParamKind::Decay, & $($r)* b.fc_weight);
            $f(&n("mlp.fc.bias"), ParamKind::NoDecay, & $($r)* b.fc_bias);
            $f(&n("mlp.proj.weight"), ParamKind::Decay, & $($r)* b.proj_weight);
            $f(&n("mlp.proj.bias"), ParamKind::NoDecay, & $($r)* b.proj_bias);
        }
        $f("final_ln.gain", ParamKind::NoDecay, & $($r)* $self.final_ln_gain);
        $f("final_ln.bias", ParamKind::NoDecay, & $($r)* $self.final_ln_bias);
        $f("head.weight", ParamKind::Decay, & $($r)* $self.head_weight);
        $f("head.bias", ParamKind::NoDecay, & $($r)* $self.head_bias);
    }};
}

impl<T: Scalar> ModelParams<T> {
    /// Truncated-normal weights and tables, zero biases, unit layer-norm gains.
    pub fn init(config: &ModelConfig, rng: &mut StreamRng) -> Result<Self> {
        config.validate()?;
        let cell = std::cell::RefCell::new(rng);
        Ok(build(
            config,
            |s| Tensor::normal(s, &mut cell.borrow_mut()),
            Tensor::zeros,
            |s| Tensor::filled(s, T::one()),
        ))
    }

    /// Every tensor zero, with the shapes of `config`.
    pub fn zeros(config: &ModelConfig) -> Self {
        build(config, Tensor::zeros, Tensor::zeros, Tensor::zeros)
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(&self.config)
    }

    pub fn n_params(&self) -> usize {
        let mut n = 0;
        self.visit(|_, _, t| n += t.len());
        n
    }

    /// Visit tensors in canonical (checkpoint) order.
    pub fn visit<'a>(&'a self, mut f: impl FnMut(&str, ParamKind, &'a Tensor<T>)) {
        visit_body!(self, f, iter,);
    }

    pub fn visit_mut<'a>(&'a mut self, mut f: impl FnMut(&str, ParamKind, &'a mut Tensor<T>)) {
        visit_body!(self, f, iter_mut, mut);
    }

    /// Visit matching tensors of `self` and `other` (same config) together.
    pub fn zip_mut(&mut self, other: &Self, mut f: impl FnMut(ParamKind, &mut Tensor<T>, &Tensor<T>)) {
        let mut theirs = Vec::new();
        other.visit(|_, _, t| theirs.push(t));
        let mut it = theirs.into_iter();
        self.visit_mut(|_, kind, t| {
            let o = it.next().expect("zip over mismatched parameter sets");
            assert_eq!(t.shape, o.shape, "zip over mismatched parameter sets");
            f(kind, t, o);
        });
    }

    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let mut out = ModelParams::<U>::zeros(&self.config);
        let mut src = Vec::new();
        self.visit(|_, _, t| src.push(t.cast::<U>()));
        let mut it = src.into_iter();
        out.visit_mut(|_, _, t| *t = it.next().expect("same layout"));
        out
    }

    pub fn all_finite(&self) -> bool {
        let mut ok = true;
        self.visit(|_, _, t| ok &= t.data.iter().all(|x| x.is_finite()));
        ok
    }

    /// Sum of squares over every tensor.
    pub fn sq_norm(&self) -> f64 {
        let mut s = 0.0;
        self.visit(|_, _, t| s += t.data.iter().map(|x| x.as_f64() * x.as_f64()).sum::<f64>());
        s
    }

    pub fn scale(&mut self, k: T) {
        self.visit_mut(|_, _, t| t.data.iter_mut().for_each(|x| *x *= k));
    }

    /// First non-finite tensor, by name.
    pub fn first_non_finite(&self) -> Option<String> {
        let mut bad = None;
        self.visit(|name, _, t| {
            if bad.is_none() && !t.data.iter().all(|x| x.is_finite()) {
                bad = Some(name.to_string());
            }
        });
        bad
    }

    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.first_non_finite() {
            None => Ok(()),
            Some(name) => Err(Error::Numeric(format!("{what}: non-finite values in {name}"))),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Variant;
    use crate::rng;

    #[test]
    fn names_are_unique_and_ordered() {
        let p = ModelParams::<f32>::init(&ModelConfig::default(), &mut rng::stream(0)).unwrap();
        let mut names = Vec::new();
        p.visit(|n, _, _| names.push(n.to_string()));
        let mut sorted = names.clone();
        sorted.sort();
        sorted.dedup();
        assert_eq!(sorted.len(), names.len());
        assert_eq!(names[0], "embed.state.weight");
        assert_eq!(names.last().unwrap(), "head.bias");
    }

    #[test]
    fn variants_drop_their_tensors() {
        let names = |variant| {
            let c = ModelConfig { variant, ..ModelConfig::default() };
            let mut v = Vec::new();
            ModelParams::<f32>::zeros(&c).visit(|n, _, _| v.push(n.to_string()));
            v
        };
        assert!(!names(Variant::NoRtg).iter().any(|n| n.starts_with("embed.rtg")));
        assert!(names(Variant::NoRtg).iter().any(|n| n.starts_with("embed.ctg")));
        let nc = names(Variant::NoConstraint);
        assert!(!nc.iter().any(|n| n.starts_with("embed.ctg") || n == "embed.lambda"));
        assert!(names(Variant::Full).iter().any(|n| n == "embed.lambda"));
    }

    #[test]
    fn init_is_truncated_and_seeded() {
        let c = ModelConfig::default();
        let a = ModelParams::<f32>::init(&c, &mut rng::stream(1)).unwrap();
        let b = ModelParams::<f32>::init(&c, &mut rng::stream(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.head_weight.data.iter().all(|x| x.abs() <= 0.04 + 1e-7));
        assert!(a.embed_ln_gain.data.iter().all(|x| *x == 1.0));
        assert!(a.head_bias.data.iter().all(|x| *x == 0.0));
        let n = a.n_params();
        let mean_sq = a.sq_norm() / n as f64;
        assert!(mean_sq > 1e-5 && mean_sq < 1e-2);
    }

    #[test]
    fn cast_round_trips_f32_through_f64() {
        let p = ModelParams::<f32>::init(&ModelConfig::default(), &mut rng::stream(2)).unwrap();
        assert_eq!(p.cast::<f64>().cast::<f32>(), p);
    }
}
