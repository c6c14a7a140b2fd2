use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::config::{EncoderConfig, BIO_LABELS, VISUAL_DIM};
use crate::seed;

/// Floating point type the encoder can run in. Training and inference use
/// `f32`; gradient checks instantiate `f64`.
pub trait Scalar:
    'static
    + Copy
    + Send
    + Sync
    + Debug
    + Float
    + FromPrimitive
    + LinalgScalar
    + ScalarOperand
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
{
    fn of(v: f64) -> Self {
        <Self as FromPrimitive>::from_f64(v).expect("representable")
    }

    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("representable")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// A named dense tensor stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    fn zeros(name: String, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name,
            shape,
            data: vec![T::zero(); n],
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct LayerIndex {
    pub ln1_g: usize,
    pub ln1_b: usize,
    pub wq: usize,
    pub bq: usize,
    pub wk: usize,
    pub bk: usize,
    pub wv: usize,
    pub bv: usize,
    pub wo: usize,
    pub bo: usize,
    pub ln2_g: usize,
    pub ln2_b: usize,
    pub w1: usize,
    pub b1: usize,
    pub w2: usize,
    pub b2: usize,
}

/// Positions of every tensor inside [`Params::tensors`].
#[derive(Debug, Clone)]
pub(crate) struct Index {
    pub tok: usize,
    pub pos: usize,
    pub coord: [usize; 4],
    pub vis_w: usize,
    pub vis_b: usize,
    pub layers: Vec<LayerIndex>,
    pub lnf_g: usize,
    pub lnf_b: usize,
    pub mlm_w: usize,
    pub mlm_b: usize,
    pub bio_w: usize,
    pub bio_b: usize,
    pub spade_w: usize,
    pub spade_none_w: usize,
    pub spade_none_b: usize,
}

enum Init {
    Zeros,
    Ones,
    Normal(f64),
}

struct Builder {
    specs: Vec<(String, Vec<usize>, Init)>,
}

impl Builder {
    fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> usize {
        self.specs.push((name.into(), shape.to_vec(), init));
        self.specs.len() - 1
    }
}

fn layout(c: &EncoderConfig) -> (Index, Vec<(String, Vec<usize>, Init)>) {
    let d = c.embed_dim;
    let f = c.ffn_dim;
    let lin = |fan_in: usize| Init::Normal(1.0 / (fan_in as f64).sqrt());
    let mut b = Builder { specs: Vec::new() };
    let tok = b.add("embed.token", &[c.vocab_size, d], Init::Normal(0.1));
    let pos = b.add("embed.position", &[c.max_seq_len, d], Init::Normal(0.1));
    let coord = ["x0", "y0", "x1", "y1"].map(|n| {
        b.add(
            format!("embed.{n}"),
            &[c.coord_buckets, d],
            Init::Normal(0.1),
        )
    });
    let vis_w = b.add("embed.visual.weight", &[VISUAL_DIM, d], lin(VISUAL_DIM));
    let vis_b = b.add("embed.visual.bias", &[d], Init::Zeros);
    let mut layers = Vec::with_capacity(c.n_layers);
    for l in 0..c.n_layers {
        let p = |n: &str| format!("layer{l}.{n}");
        layers.push(LayerIndex {
            ln1_g: b.add(p("ln1.gain"), &[d], Init::Ones),
            ln1_b: b.add(p("ln1.bias"), &[d], Init::Zeros),
            wq: b.add(p("attn.q.weight"), &[d, d], lin(d)),
            bq: b.add(p("attn.q.bias"), &[d], Init::Zeros),
            wk: b.add(p("attn.k.weight"), &[d, d], lin(d)),
            bk: b.add(p("attn.k.bias"), &[d], Init::Zeros),
            wv: b.add(p("attn.v.weight"), &[d, d], lin(d)),
            bv: b.add(p("attn.v.bias"), &[d], Init::Zeros),
            wo: b.add(
                p("attn.out.weight"),
                &[d, d],
                Init::Normal(0.5 / (d as f64).sqrt()),
            ),
            bo: b.add(p("attn.out.bias"), &[d], Init::Zeros),
            ln2_g: b.add(p("ln2.gain"), &[d], Init::Ones),
            ln2_b: b.add(p("ln2.bias"), &[d], Init::Zeros),
            w1: b.add(p("ffn.in.weight"), &[d, f], lin(d)),
            b1: b.add(p("ffn.in.bias"), &[f], Init::Zeros),
            w2: b.add(
                p("ffn.out.weight"),
                &[f, d],
                Init::Normal(0.5 / (f as f64).sqrt()),
            ),
            b2: b.add(p("ffn.out.bias"), &[d], Init::Zeros),
        });
    }
    let index = Index {
        tok,
        pos,
        coord,
        vis_w,
        vis_b,
        layers,
        lnf_g: b.add("final_ln.gain", &[d], Init::Ones),
        lnf_b: b.add("final_ln.bias", &[d], Init::Zeros),
        mlm_w: b.add("head.mlm.weight", &[d, c.vocab_size], lin(d)),
        mlm_b: b.add("head.mlm.bias", &[c.vocab_size], Init::Zeros),
        bio_w: b.add("head.bio.weight", &[d, BIO_LABELS], lin(d)),
        bio_b: b.add("head.bio.bias", &[BIO_LABELS], Init::Zeros),
        spade_w: b.add("head.spade.bilinear", &[d, d], lin(d)),
        spade_none_w: b.add("head.spade.none.weight", &[d], lin(d)),
        spade_none_b: b.add("head.spade.none.bias", &[1], Init::Zeros),
    };
    (index, b.specs)
}

/// All encoder parameters: embeddings, layers and the three task heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T> {
    pub config: EncoderConfig,
    pub tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> Params<T> {
    /// Randomly initialised parameters.
    pub fn init(config: &EncoderConfig, seed: u64) -> Self {
        let (_, specs) = layout(config);
        let mut rng = seed::rng(seed::derive(seed, "init"));
        let tensors = specs
            .into_iter()
            .map(|(name, shape, init)| {
                let mut t = Tensor::zeros(name, shape);
                match init {
                    Init::Zeros => {}
                    Init::Ones => t.data.fill(T::one()),
                    Init::Normal(std) => {
                        let dist = Normal::new(0.0, std).expect("positive std");
                        for v in &mut t.data {
                            *v = T::of(dist.sample(&mut rng));
                        }
                    }
                }
                t
            })
            .collect();
        Self {
            config: *config,
            tensors,
        }
    }

    /// All-zero tensors with the same layout (used for gradients and
    /// optimizer moments).
    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config,
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn zeros(config: &EncoderConfig) -> Self {
        let (_, specs) = layout(config);
        Self {
            config: *config,
            tensors: specs
                .into_iter()
                .map(|(name, shape, _)| Tensor::zeros(name, shape))
                .collect(),
        }
    }

    pub(crate) fn index(&self) -> Index {
        layout(&self.config).0
    }

    pub fn n_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn cast<U: Scalar>(&self) -> Params<U> {
        Params {
            config: self.config,
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: t.data.iter().map(|&v| U::of(v.as_f64())).collect(),
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub(crate) fn mat(&self, i: usize) -> ArrayView2<'_, T> {
        let t = &self.tensors[i];
        ArrayView2::from_shape((t.shape[0], t.shape[1]), &t.data).expect("2-d tensor")
    }

    pub(crate) fn vec(&self, i: usize) -> ArrayView1<'_, T> {
        ArrayView1::from(&self.tensors[i].data[..])
    }

    pub(crate) fn mat_mut(&mut self, i: usize) -> ArrayViewMut2<'_, T> {
        let t = &mut self.tensors[i];
        ArrayViewMut2::from_shape((t.shape[0], t.shape[1]), &mut t.data).expect("2-d tensor")
    }

    pub(crate) fn vec_mut(&mut self, i: usize) -> ArrayViewMut1<'_, T> {
        ArrayViewMut1::from(&mut self.tensors[i].data[..])
    }

    /// `self += other * scale`, tensor by tensor.
    pub fn add_scaled(&mut self, other: &Self, scale: T) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, &y) in a.data.iter_mut().zip(&b.data) {
                *x += y * scale;
            }
        }
    }

    pub fn scale(&mut self, s: T) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= s;
            }
        }
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter())
            .map(|v| v.as_f64() * v.as_f64())
            .sum()
    }

    pub fn tensor(&self, name: &str) -> Option<&Tensor<T>> {
        self.tensors.iter().find(|t| t.name == name)
    }
}

/// Draws `n` values from a unit Gaussian.
pub(crate) fn gaussian<R: Rng>(rng: &mut R, n: usize) -> Vec<f32> {
    let dist = Normal::new(0.0f32, 1.0).expect("unit normal");
    (0..n).map(|_| dist.sample(rng)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_follow_config() {
        let c = EncoderConfig::default();
        let p: Params<f32> = Params::init(&c, 1);
        assert!(p.all_finite());
        assert_eq!(p.tensor("embed.token").unwrap().shape, vec![512, 64]);
        assert_eq!(
            p.tensor("layer1.ffn.in.weight").unwrap().shape,
            vec![64, 256]
        );
        assert_eq!(
            p.tensor("head.bio.weight").unwrap().shape,
            vec![64, BIO_LABELS]
        );
        let idx = p.index();
        assert_eq!(idx.layers.len(), 2);
        assert_eq!(p.tensors.len(), idx.spade_none_b + 1);
    }

    #[test]
    fn init_is_deterministic() {
        let c = EncoderConfig::default();
        assert_eq!(Params::<f32>::init(&c, 3), Params::<f32>::init(&c, 3));
        assert_ne!(Params::<f32>::init(&c, 3), Params::<f32>::init(&c, 4));
    }
}
