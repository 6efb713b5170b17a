use ndarray::{Array1, Array2, ArrayD, ArrayViewD, ArrayViewMutD};
use num_traits::FromPrimitive;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::{ModelConfig, Real};
use crate::error::{Error, Result};

/// Role of a tensor, used to decide which ones receive weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    Gain,
    Positional,
}

/// A named view onto one parameter tensor.
pub struct Param<V> {
    pub name: String,
    pub kind: ParamKind,
    pub value: V,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<F> {
    pub ln1_gain: Array1<F>,
    pub ln1_bias: Array1<F>,
    pub wq: Array2<F>,
    pub bq: Array1<F>,
    pub wk: Array2<F>,
    pub bk: Array1<F>,
    pub wv: Array2<F>,
    pub bv: Array1<F>,
    pub wo: Array2<F>,
    pub bo: Array1<F>,
    pub ln2_gain: Array1<F>,
    pub ln2_bias: Array1<F>,
    pub ff_w1: Array2<F>,
    pub ff_b1: Array1<F>,
    pub ff_w2: Array2<F>,
    pub ff_b2: Array1<F>,
}

/// Every learnable tensor of the network. Linear weights are stored
/// `in × out` so a row-major batch multiplies on the left.
///
/// The same layout doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<F> {
    pub mask_w1: Array2<F>,
    pub mask_b1: Array1<F>,
    pub mask_w2: Array2<F>,
    pub mask_b2: Array1<F>,
    pub embed_w: Array2<F>,
    pub embed_b: Array1<F>,
    pub pos: Array2<F>,
    pub film_w1: Array2<F>,
    pub film_b1: Array1<F>,
    pub film_w2: Array2<F>,
    pub film_b2: Array1<F>,
    pub layers: Vec<LayerParams<F>>,
    pub head_w1: Array2<F>,
    pub head_b1: Array1<F>,
    pub head_w2: Array2<F>,
    pub head_b2: Array1<F>,
}

macro_rules! param_list {
    ($self:ident, $view:ident, $iter:ident, $out:ident) => {{
        use ParamKind::*;
        let mut $out = Vec::new();
        $out.push(Param { name: "mask.w1".into(), kind: Weight, value: $self.mask_w1.$view().into_dyn() });
        $out.push(Param { name: "mask.b1".into(), kind: Bias, value: $self.mask_b1.$view().into_dyn() });
        $out.push(Param { name: "mask.w2".into(), kind: Weight, value: $self.mask_w2.$view().into_dyn() });
        $out.push(Param { name: "mask.b2".into(), kind: Bias, value: $self.mask_b2.$view().into_dyn() });
        $out.push(Param { name: "embed.w".into(), kind: Weight, value: $self.embed_w.$view().into_dyn() });
        $out.push(Param { name: "embed.b".into(), kind: Bias, value: $self.embed_b.$view().into_dyn() });
        $out.push(Param { name: "pos".into(), kind: Positional, value: $self.pos.$view().into_dyn() });
        $out.push(Param { name: "film.w1".into(), kind: Weight, value: $self.film_w1.$view().into_dyn() });
        $out.push(Param { name: "film.b1".into(), kind: Bias, value: $self.film_b1.$view().into_dyn() });
        $out.push(Param { name: "film.w2".into(), kind: Weight, value: $self.film_w2.$view().into_dyn() });
        $out.push(Param { name: "film.b2".into(), kind: Bias, value: $self.film_b2.$view().into_dyn() });
        for (i, l) in $self.layers.$iter().enumerate() {
            let p = |s: &str| format!("layers.{i}.{s}");
            $out.push(Param { name: p("ln1.gain"), kind: Gain, value: l.ln1_gain.$view().into_dyn() });
            $out.push(Param { name: p("ln1.bias"), kind: Bias, value: l.ln1_bias.$view().into_dyn() });
            $out.push(Param { name: p("attn.wq"), kind: Weight, value: l.wq.$view().into_dyn() });
            $out.push(Param { name: p("attn.bq"), kind: Bias, value: l.bq.$view().into_dyn() });
            $out.push(Param { name: p("attn.wk"), kind: Weight, value: l.wk.$view().into_dyn() });
            $out.push(Param { name: p("attn.bk"), kind: Bias, value: l.bk.$view().into_dyn() });
            $out.push(Param { name: p("attn.wv"), kind: Weight, value: l.wv.$view().into_dyn() });
            $out.push(Param { name: p("attn.bv"), kind: Bias, value: l.bv.$view().into_dyn() });
            $out.push(Param { name: p("attn.wo"), kind: Weight, value: l.wo.$view().into_dyn() });
            $out.push(Param { name: p("attn.bo"), kind: Bias, value: l.bo.$view().into_dyn() });
            $out.push(Param { name: p("ln2.gain"), kind: Gain, value: l.ln2_gain.$view().into_dyn() });
            $out.push(Param { name: p("ln2.bias"), kind: Bias, value: l.ln2_bias.$view().into_dyn() });
            $out.push(Param { name: p("ffn.w1"), kind: Weight, value: l.ff_w1.$view().into_dyn() });
            $out.push(Param { name: p("ffn.b1"), kind: Bias, value: l.ff_b1.$view().into_dyn() });
            $out.push(Param { name: p("ffn.w2"), kind: Weight, value: l.ff_w2.$view().into_dyn() });
            $out.push(Param { name: p("ffn.b2"), kind: Bias, value: l.ff_b2.$view().into_dyn() });
        }
        $out.push(Param { name: "head.w1".into(), kind: Weight, value: $self.head_w1.$view().into_dyn() });
        $out.push(Param { name: "head.b1".into(), kind: Bias, value: $self.head_b1.$view().into_dyn() });
        $out.push(Param { name: "head.w2".into(), kind: Weight, value: $self.head_w2.$view().into_dyn() });
        $out.push(Param { name: "head.b2".into(), kind: Bias, value: $self.head_b2.$view().into_dyn() });
        $out
    }};
}

fn uniform_fan_in<F: Real>(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<F> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_fn((fan_in, fan_out), |_| {
        F::from_f64(rng.random_range(-bound..bound)).unwrap()
    })
}

impl<F: Real> LayerParams<F> {
    fn init(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Self {
        let d = cfg.d_model;
        Self {
            ln1_gain: Array1::ones(d),
            ln1_bias: Array1::zeros(d),
            wq: uniform_fan_in(rng, d, d),
            bq: Array1::zeros(d),
            wk: uniform_fan_in(rng, d, d),
            bk: Array1::zeros(d),
            wv: uniform_fan_in(rng, d, d),
            bv: Array1::zeros(d),
            wo: uniform_fan_in(rng, d, d),
            bo: Array1::zeros(d),
            ln2_gain: Array1::ones(d),
            ln2_bias: Array1::zeros(d),
            ff_w1: uniform_fan_in(rng, d, cfg.ffn_dim),
            ff_b1: Array1::zeros(cfg.ffn_dim),
            ff_w2: uniform_fan_in(rng, cfg.ffn_dim, d),
            ff_b2: Array1::zeros(d),
        }
    }
}

impl<F: Real> ModelParams<F> {
    /// Fresh parameters: fan-in uniform weights, zero biases, unit gains,
    /// `N(0, 0.02²)` positional table and a zeroed FiLM output layer so
    /// conditioning starts as the identity.
    pub fn init(cfg: &ModelConfig) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.init_seed);
        let (c, d) = (cfg.n_channels, cfg.d_model);
        let mask_w1 = uniform_fan_in(&mut rng, c, cfg.mask_hidden);
        let mask_w2 = uniform_fan_in(&mut rng, cfg.mask_hidden, c);
        let embed_w = uniform_fan_in(&mut rng, c, d);
        let normal = Normal::new(0.0, 0.02).unwrap();
        let pos = Array2::from_shape_fn((cfg.window, d), |_| {
            F::from_f64(normal.sample(&mut rng)).unwrap()
        });
        let film_w1 = uniform_fan_in(&mut rng, cfg.bio_dim, cfg.film_hidden);
        let layers = (0..cfg.n_layers)
            .map(|_| LayerParams::init(cfg, &mut rng))
            .collect();
        let head_w1 = uniform_fan_in(&mut rng, d, cfg.head_hidden);
        let head_w2 = uniform_fan_in(&mut rng, cfg.head_hidden, cfg.n_muscles);
        Self {
            mask_w1,
            mask_b1: Array1::zeros(cfg.mask_hidden),
            mask_w2,
            mask_b2: Array1::zeros(c),
            embed_w,
            embed_b: Array1::zeros(d),
            pos,
            film_w1,
            film_b1: Array1::zeros(cfg.film_hidden),
            film_w2: Array2::zeros((cfg.film_hidden, 2 * d)),
            film_b2: Array1::zeros(2 * d),
            layers,
            head_w1,
            head_b1: Array1::zeros(cfg.head_hidden),
            head_w2,
            head_b2: Array1::zeros(cfg.n_muscles),
        }
    }

    /// Same layout, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.scale(F::zero());
        z
    }

    pub fn tensors(&self) -> Vec<Param<ArrayViewD<'_, F>>> {
        param_list!(self, view, iter, out)
    }

    pub fn tensors_mut(&mut self) -> Vec<Param<ArrayViewMutD<'_, F>>> {
        param_list!(self, view_mut, iter_mut, out)
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|p| p.value.len()).sum()
    }

    pub fn scale(&mut self, k: F) {
        for mut p in self.tensors_mut() {
            p.value.mapv_inplace(|v| v * k);
        }
    }

    /// `self += k · other`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, k: F) {
        for (mut a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.value.zip_mut_with(&b.value, |x, &y| *x += k * y);
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<String> {
        self.tensors()
            .into_iter()
            .find(|p| p.value.iter().any(|v| !v.is_finite()))
            .map(|p| p.name)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.first_non_finite() {
            Some(tensor) => Err(Error::Numeric {
                tensor,
                detail: "non-finite value".into(),
            }),
            None => Ok(()),
        }
    }

    /// Convert every tensor to another precision.
    pub fn cast<G: Real>(&self) -> ModelParams<G> {
        let mut out = ModelParams::<G>::shaped_like(self);
        for (mut dst, src) in out.tensors_mut().into_iter().zip(self.tensors()) {
            dst.value.zip_mut_with(&src.value, |d, &s| {
                *d = G::from_f64(s.to_f64().unwrap()).unwrap()
            });
        }
        out
    }

    fn shaped_like<H: Real>(other: &ModelParams<H>) -> Self {
        fn z2<F: Real, H>(a: &Array2<H>) -> Array2<F> {
            Array2::zeros(a.raw_dim())
        }
        fn z1<F: Real, H>(a: &Array1<H>) -> Array1<F> {
            Array1::zeros(a.raw_dim())
        }
        Self {
            mask_w1: z2(&other.mask_w1),
            mask_b1: z1(&other.mask_b1),
            mask_w2: z2(&other.mask_w2),
            mask_b2: z1(&other.mask_b2),
            embed_w: z2(&other.embed_w),
            embed_b: z1(&other.embed_b),
            pos: z2(&other.pos),
            film_w1: z2(&other.film_w1),
            film_b1: z1(&other.film_b1),
            film_w2: z2(&other.film_w2),
            film_b2: z1(&other.film_b2),
            layers: other
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_gain: z1(&l.ln1_gain),
                    ln1_bias: z1(&l.ln1_bias),
                    wq: z2(&l.wq),
                    bq: z1(&l.bq),
                    wk: z2(&l.wk),
                    bk: z1(&l.bk),
                    wv: z2(&l.wv),
                    bv: z1(&l.bv),
                    wo: z2(&l.wo),
                    bo: z1(&l.bo),
                    ln2_gain: z1(&l.ln2_gain),
                    ln2_bias: z1(&l.ln2_bias),
                    ff_w1: z2(&l.ff_w1),
                    ff_b1: z1(&l.ff_b1),
                    ff_w2: z2(&l.ff_w2),
                    ff_b2: z1(&l.ff_b2),
                })
                .collect(),
            head_w1: z2(&other.head_w1),
            head_b1: z1(&other.head_b1),
            head_w2: z2(&other.head_w2),
            head_b2: z1(&other.head_b2),
        }
    }

    /// Shapes in canonical order, for layout checks.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        self.tensors()
            .into_iter()
            .map(|p| (p.name, p.value.shape().to_vec()))
            .collect()
    }

    /// Overwrite tensors from `(name, array)` pairs in canonical order.
    pub fn load_tensors(&mut self, tensors: Vec<(String, ArrayD<F>)>) -> Result<()> {
        let mut slots = self.tensors_mut();
        if slots.len() != tensors.len() {
            return Err(Error::Corruption(format!(
                "expected {} tensors, found {}",
                slots.len(),
                tensors.len()
            )));
        }
        for (slot, (name, data)) in slots.iter_mut().zip(tensors) {
            if slot.name != name {
                return Err(Error::Corruption(format!(
                    "tensor order mismatch: expected {}, found {name}",
                    slot.name
                )));
            }
            if slot.value.shape() != data.shape() {
                return Err(Error::Corruption(format!(
                    "shape mismatch for {name}: expected {:?}, found {:?}",
                    slot.value.shape(),
                    data.shape()
                )));
            }
            slot.value.assign(&data);
        }
        Ok(())
    }
}

/// Tensor shapes implied by a configuration, in canonical order.
pub fn expected_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    ModelParams::<f32>::init(cfg).shapes()
}

pub(crate) fn real<F: FromPrimitive>(x: f64) -> F {
    F::from_f64(x).unwrap()
}
