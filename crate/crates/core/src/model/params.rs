use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub type ParamId = usize;

/// A named trainable tensor, stored flat.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

/// All trainable tensors of a model, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub entries: Vec<Param>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Init {
    Zeros,
    Ones,
    /// N(0, 1/fan_in).
    Scaled { fan_in: usize },
    /// U(−1/√fan_in, 1/√fan_in), the usual bias default.
    Uniform { fan_in: usize },
}

impl ParamStore {
    pub(crate) fn register<R: Rng + ?Sized>(
        &mut self,
        name: String,
        shape: Vec<usize>,
        init: Init,
        rng: &mut R,
    ) -> ParamId {
        let n: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Scaled { fan_in } => {
                let dist = Normal::new(0.0f32, (fan_in as f32).powf(-0.5)).unwrap();
                (0..n).map(|_| dist.sample(rng)).collect()
            }
            Init::Uniform { fan_in } => {
                let bound = (fan_in as f32).powf(-0.5);
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
        };
        self.entries.push(Param { name, shape, data });
        self.entries.len() - 1
    }

    #[inline]
    pub fn get(&self, id: ParamId) -> &[f32] {
        &self.entries[id].data
    }

    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|p| p.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.entries.iter().all(|p| p.data.iter().all(|v| v.is_finite()))
    }

    pub fn zero_grads(&self) -> Grads {
        Grads(self.entries.iter().map(|p| vec![0.0; p.data.len()]).collect())
    }
}

/// Gradient buffers parallel to a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub Vec<Vec<f32>>);

impl Grads {
    #[inline]
    pub fn get_mut(&mut self, id: ParamId) -> &mut [f32] {
        &mut self.0[id]
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, s: f32) {
        self.0.iter_mut().flatten().for_each(|v| *v *= s);
    }

    /// Global L2 norm, accumulated in f64.
    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}
