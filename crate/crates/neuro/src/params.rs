//! Named parameter storage and its checkpoint file format.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::graph::{Graph, NodeId};
use crate::mat::Mat;
use crate::NeuroError;

pub const PARAM_FORMAT_VERSION: u32 = 1;

/// Parameters keyed by name. Iteration order is the sorted name order, which
/// keeps optimizer updates and serialization deterministic.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Mat>,
}

pub type Grads = BTreeMap<String, Mat>;

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Mat) {
        self.params.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Result<&Mat, NeuroError> {
        self.params
            .get(name)
            .ok_or_else(|| NeuroError::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Mat, NeuroError> {
        self.params
            .get_mut(name)
            .ok_or_else(|| NeuroError::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Mat)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Mat)> {
        self.params.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Mat::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.params.values().all(Mat::is_finite)
    }

    /// Places every parameter on the tape as a leaf.
    pub fn bind(&self, g: &mut Graph) -> Bound {
        let ids = self
            .params
            .iter()
            .map(|(k, v)| (k.clone(), g.leaf(v.clone())))
            .collect();
        Bound { ids }
    }

    /// Xavier/Glorot uniform initialisation for a `fan_in × fan_out` weight.
    pub fn init_uniform(
        &mut self,
        name: impl Into<String>,
        rows: usize,
        cols: usize,
        rng: &mut impl Rng,
    ) {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let data = (0..rows * cols)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        self.insert(name, Mat::from_vec(rows, cols, data).expect("sized above"));
    }

    pub fn to_file(&self) -> ParamFile {
        ParamFile {
            format_version: PARAM_FORMAT_VERSION,
            params: self
                .params
                .iter()
                .map(|(k, m)| {
                    (
                        k.clone(),
                        ParamEntry {
                            shape: [m.rows(), m.cols()],
                            values: m.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn from_file(file: ParamFile) -> Result<Self, NeuroError> {
        if file.format_version != PARAM_FORMAT_VERSION {
            return Err(NeuroError::Format(format!(
                "unsupported parameter format version {}",
                file.format_version
            )));
        }
        let mut store = ParamStore::new();
        for (name, entry) in file.params {
            let [r, c] = entry.shape;
            let m = Mat::from_vec(r, c, entry.values)
                .map_err(|e| NeuroError::Format(format!("parameter {name}: {e}")))?;
            store.insert(name, m);
        }
        Ok(store)
    }
}

/// Tape handles for a bound [`ParamStore`].
#[derive(Debug, Clone)]
pub struct Bound {
    ids: BTreeMap<String, NodeId>,
}

impl Bound {
    pub fn id(&self, name: &str) -> NodeId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} is not bound"))
    }

    /// Gradients after backward; parameters that did not influence the loss
    /// get zeros.
    pub fn grads(&self, g: &Graph) -> Grads {
        self.ids
            .iter()
            .map(|(k, &id)| {
                let grad = g.grad(id).cloned().unwrap_or_else(|| {
                    let (r, c) = g.value(id).shape();
                    Mat::zeros(r, c)
                });
                (k.clone(), grad)
            })
            .collect()
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ParamEntry {
    pub shape: [usize; 2],
    pub values: Vec<f64>,
}

/// Serialized parameter set: name → shape + flat row-major values.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct ParamFile {
    pub format_version: u32,
    pub params: BTreeMap<String, ParamEntry>,
}
