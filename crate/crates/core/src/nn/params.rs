use std::collections::HashMap;

use indexmap::IndexMap;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Mat;

/// Named parameter tensors in registration order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Mat>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        let name = name.into();
        debug_assert!(!self.tensors.contains_key(&name), "duplicate parameter {name}");
        self.tensors.insert(name, value);
    }

    pub fn get(&self, name: &str) -> Option<&Mat> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Mat> {
        self.tensors.get_mut(name)
    }

    pub fn require(&self, name: &str) -> Result<&Mat> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::Format(format!("missing parameter `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Mat)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Mat::len).sum()
    }

    /// Zero tensors with the same names and shapes.
    pub fn zeros_like(&self) -> ParamStore {
        ParamStore {
            tensors: self
                .tensors
                .iter()
                .map(|(k, v)| (k.clone(), Mat::zeros(v.rows(), v.cols())))
                .collect(),
        }
    }
}

/// Registers parameters during model construction.
pub(crate) struct Init<'r> {
    pub store: ParamStore,
    rng: &'r mut ChaCha8Rng,
}

impl<'r> Init<'r> {
    pub fn new(rng: &'r mut ChaCha8Rng) -> Self {
        Init {
            store: ParamStore::new(),
            rng,
        }
    }

    /// Uniform in `±1/sqrt(fan_in)`.
    pub fn fan_in(&mut self, name: String, rows: usize, cols: usize, fan_in: usize) {
        let bound = 1.0 / (fan_in as f64).sqrt();
        let m = Mat::from_fn(rows, cols, |_, _| self.rng.random_range(-bound..bound));
        self.store.insert(name, m);
    }

    pub fn zeros(&mut self, name: String, rows: usize, cols: usize) {
        self.store.insert(name, Mat::zeros(rows, cols));
    }

    pub fn ones(&mut self, name: String, rows: usize, cols: usize) {
        self.store.insert(name, Mat::filled(rows, cols, 1.0));
    }
}

/// Binds parameters onto a tape, each at most once.
pub struct Binder<'a> {
    store: &'a ParamStore,
    trainable: bool,
    bound: HashMap<&'a str, Var>,
}

impl<'a> Binder<'a> {
    /// `trainable = false` binds parameters as constants (inference).
    pub fn new(store: &'a ParamStore, trainable: bool) -> Self {
        Binder {
            store,
            trainable,
            bound: HashMap::new(),
        }
    }

    pub fn get(&mut self, tape: &mut Tape<'a>, name: &str) -> Var {
        if let Some(&v) = self.bound.get(name) {
            return v;
        }
        let (key, value) = self
            .store
            .tensors
            .get_key_value(name)
            .unwrap_or_else(|| panic!("parameter `{name}` not registered"));
        let v = if self.trainable {
            tape.param_ref(value)
        } else {
            tape.constant_ref(value)
        };
        self.bound.insert(key.as_str(), v);
        v
    }

    /// Parameter vars bound so far, by name.
    pub fn bound(&self) -> impl Iterator<Item = (&'a str, Var)> + '_ {
        self.bound.iter().map(|(k, v)| (*k, *v))
    }
}
