//! Flat parameter storage shared by every layer.
//!
//! Layers hold [`ParamId`]s and read their weights from a [`ParamStore`];
//! backward passes accumulate into a [`Gradients`] with the same layout.
//! This keeps the optimizer, checkpointing and gradient checking generic.

use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Param {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
    /// Frozen parameters are kept (and checkpointed) but never updated.
    pub trainable: bool,
}

impl Param {
    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    Zeros,
    Const(f64),
    /// Normal(0, std) truncated at two standard deviations.
    TruncNormal(f64),
    /// Truncated normal with std = 1/sqrt(fan_in).
    FanIn(usize),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Param)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn get(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param {
        &mut self.params[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn into_params(self) -> Vec<Param> {
        self.params
    }

    /// Total number of scalars across all tensors.
    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(Param::len).sum()
    }

    pub fn num_trainable_scalars(&self) -> usize {
        self.params.iter().filter(|p| p.trainable).map(Param::len).sum()
    }

    pub fn vec(&self, id: ParamId) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.params[id.0].data[..])
    }

    pub fn mat(&self, id: ParamId) -> ArrayView2<'_, f64> {
        let p = &self.params[id.0];
        let (r, c) = rows_cols(&p.shape);
        ArrayView2::from_shape((r, c), &p.data[..]).expect("parameter shape")
    }

    pub fn scalar(&self, id: ParamId) -> f64 {
        self.params[id.0].data[0]
    }

    /// Re-draws every parameter from Normal(0, std) (truncated), including
    /// zero-initialised ones. Used to move away from symmetric starting
    /// points before gradient checks.
    pub fn randomize(&mut self, seed: u64, std: f64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for p in &mut self.params {
            for v in &mut p.data {
                *v = trunc_normal(&mut rng, std);
            }
        }
    }
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    match shape {
        [] => (1, 1),
        [n] => (1, *n),
        [r, rest @ ..] => (*r, rest.iter().product()),
    }
}

fn trunc_normal(rng: &mut impl Rng, std: f64) -> f64 {
    if std == 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    loop {
        let x: f64 = normal.sample(rng);
        if x.abs() <= 2.0 * std {
            return x;
        }
    }
}

/// Allocates parameters with deterministic, seeded initialisation.
pub struct ParamBuilder {
    store: ParamStore,
    rng: ChaCha8Rng,
}

impl ParamBuilder {
    pub fn new(seed: u64) -> Self {
        Self {
            store: ParamStore::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let n: usize = shape.iter().product::<usize>().max(1);
        let data = match init {
            Init::Zeros => vec![0.0; n],
            Init::Const(c) => vec![c; n],
            Init::TruncNormal(std) => (0..n).map(|_| trunc_normal(&mut self.rng, std)).collect(),
            Init::FanIn(fan_in) => {
                let std = 1.0 / (fan_in.max(1) as f64).sqrt();
                (0..n).map(|_| trunc_normal(&mut self.rng, std)).collect()
            }
        };
        let name = name.into();
        debug_assert!(self.store.find(&name).is_none(), "duplicate parameter {name}");
        self.store.params.push(Param {
            name,
            shape: shape.to_vec(),
            data,
            trainable: true,
        });
        ParamId(self.store.params.len() - 1)
    }

    pub fn freeze(&mut self, id: ParamId) {
        self.store.params[id.0].trainable = false;
    }

    pub fn finish(self) -> ParamStore {
        self.store
    }
}

/// Gradient buffers laid out like a [`ParamStore`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    data: Vec<Vec<f64>>,
    shapes: Vec<(usize, usize)>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            data: store.params.iter().map(|p| vec![0.0; p.len()]).collect(),
            shapes: store.params.iter().map(|p| rows_cols(&p.shape)).collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &[f64] {
        &self.data[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [f64] {
        &mut self.data[id.0]
    }

    pub fn vec_mut(&mut self, id: ParamId) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.data[id.0][..])
    }

    pub fn mat_mut(&mut self, id: ParamId) -> ArrayViewMut2<'_, f64> {
        let shape = self.shapes[id.0];
        ArrayViewMut2::from_shape(shape, &mut self.data[id.0][..]).expect("gradient shape")
    }

    pub fn add_scalar(&mut self, id: ParamId, v: f64) {
        self.data[id.0][0] += v;
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += *y;
            }
        }
    }

    pub fn scale(&mut self, factor: f64) {
        for buf in &mut self.data {
            for x in buf.iter_mut() {
                *x *= factor;
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &[f64])> {
        self.data.iter().enumerate().map(|(i, d)| (ParamId(i), d.as_slice()))
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().flatten().all(|x| x.is_finite())
    }

    /// Sums per-sample gradients in input order.
    pub fn sum(store: &ParamStore, parts: impl IntoIterator<Item = Gradients>) -> Gradients {
        let mut total = Gradients::zeros_like(store);
        for g in parts {
            total.accumulate(&g);
        }
        total
    }
}
