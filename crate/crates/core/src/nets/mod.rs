//! Feedforward networks: plain MLPs, fully and partially input-convex nets.
//!
//! Each network stores its weights as a flat list of [`Param`] matrices.
//! `params()` fixes the order used by training and by `forward_jet`, which
//! receives the same list bound to a tape.

mod ficnn;
mod io;
mod mlp;
mod picnn;

pub use ficnn::{ficnn_forward, FicnnParams};
pub use io::{load_params, save_params, ParamFile, FORMAT_VERSION};
pub use mlp::{fcnn_forward, MlpLayer, MlpParams};
pub use picnn::{picnn_forward, PicnnParams};

use crate::autodiff::{Jet, Real, Tape, Tensor, Tower};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

/// Dense parameter block, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Param {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Param {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn bind<'t>(&self, tape: &'t Tape) -> Tensor<'t> {
        tape.leaf(self.rows, self.cols, &self.data)
    }

    pub(crate) fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    pub(crate) fn check(&self, rows: usize, cols: usize) -> bool {
        self.rows == rows
            && self.cols == cols
            && self.data.len() == rows * cols
            && self.data.iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Srelu(f64),
    Softplus,
    Identity,
}

impl Activation {
    pub fn tower(self) -> Option<Tower> {
        match self {
            Activation::Tanh => Some(Tower::Tanh),
            Activation::Relu => Some(Tower::Relu),
            Activation::Srelu(d) => Some(Tower::Srelu(d)),
            Activation::Softplus => Some(Tower::Softplus),
            Activation::Identity => None,
        }
    }

    pub fn apply<T: Real>(self, x: T) -> T {
        match self.tower() {
            Some(f) => x.tower(f, 0),
            None => x,
        }
    }

    pub(crate) fn apply_jet<'t>(self, x: Jet<'t>) -> Jet<'t> {
        match self.tower() {
            Some(f) => x.map(f),
            None => x,
        }
    }

    /// Convex and non-decreasing, as input-convex layers require.
    pub fn is_convex_monotone(self) -> bool {
        match self {
            Activation::Tanh => false,
            Activation::Srelu(d) => d > 0.0,
            _ => true,
        }
    }
}

/// Standard deviation of the layer-wise Gaussian initialization.
///
/// `layer` counts from 0, `n` is the number of neurons the layer outputs.
/// A single-layer net is treated as a first layer.
pub fn init_std(layer: usize, layers: usize, n: usize) -> f64 {
    let rn = (n as f64).sqrt();
    if layer == 0 {
        2.2 / rn
    } else if layer + 1 == layers {
        n as f64 / rn
    } else {
        0.58 * layer as f64 / rn
    }
}

/// Seeded sampler implementing the layer-wise initialization.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn fill(&mut self, p: &mut Param, std: f64) {
        let dist = Normal::new(0.0, std).expect("finite positive std");
        for v in &mut p.data {
            *v = dist.sample(&mut self.rng);
        }
    }

    pub fn param(&mut self, rows: usize, cols: usize, std: f64) -> Param {
        let mut p = Param::zeros(rows, cols);
        self.fill(&mut p, std);
        p
    }
}

/// Initial weights and biases of a fully connected stack with the given
/// layer sizes (input first).
pub fn lnn_init(sizes: &[usize], seed: u64) -> Vec<(Param, Param)> {
    assert!(sizes.len() >= 2, "need at least input and output sizes");
    let layers = sizes.len() - 1;
    let mut init = Init::new(seed);
    (0..layers)
        .map(|i| {
            let std = init_std(i, layers, sizes[i + 1]);
            let w = init.param(sizes[i + 1], sizes[i], std);
            let b = init.param(sizes[i + 1], 1, std);
            (w, b)
        })
        .collect()
}

/// Common access to a network's trainable blocks.
pub trait Network {
    fn params(&self) -> Vec<&Param>;
    fn params_mut(&mut self) -> Vec<&mut Param>;

    fn bind<'t>(&self, tape: &'t Tape) -> Vec<Tensor<'t>> {
        self.params().into_iter().map(|p| p.bind(tape)).collect()
    }

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.data.len()).sum()
    }

    fn zero_all(&mut self) {
        for p in self.params_mut() {
            p.data.fill(0.0);
        }
    }
}

pub(crate) fn affine<T: Real>(w: &Param, b: Option<&Param>, x: &[T]) -> Vec<T> {
    (0..w.rows)
        .map(|i| {
            let mut acc = match b {
                Some(b) => T::cst(b.data[i]),
                None => T::zero(),
            };
            for (j, &xj) in x.iter().enumerate() {
                let wij = w.at(i, j);
                if wij != 0.0 {
                    acc += xj * wij;
                }
            }
            acc
        })
        .collect()
}

pub(crate) fn affine_relu_w<T: Real>(w: &Param, x: &[T]) -> Vec<T> {
    (0..w.rows)
        .map(|i| {
            let mut acc = T::zero();
            for (j, &xj) in x.iter().enumerate() {
                let wij = w.at(i, j).max(0.0);
                if wij != 0.0 {
                    acc += xj * wij;
                }
            }
            acc
        })
        .collect()
}
