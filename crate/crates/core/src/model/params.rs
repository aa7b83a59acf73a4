//! Named parameter storage with gradient buffers, plus the per-step graph
//! context that places parameters on a tape and harvests their gradients.

use std::cell::RefCell;

use crate::tensor::{Tape, Tensor, TensorId};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamId(pub(crate) usize);

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub value: Vec<f64>,
    pub grad: Vec<f64>,
}

/// All learnable weights of a model, addressed by [`ParamId`] in
/// registration order.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor) -> ParamId {
        let n = tensor.data.len();
        self.entries.push(ParamEntry {
            name: name.into(),
            shape: tensor.shape,
            value: tensor.data,
            grad: vec![0.0; n],
        });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar parameter count.
    pub fn scalar_count(&self) -> usize {
        self.entries.iter().map(|e| e.value.len()).sum()
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry {
        &self.entries[id.0]
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn zero_grads(&mut self) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    pub fn scale_grads(&mut self, factor: f64) {
        for e in &mut self.entries {
            e.grad.iter_mut().for_each(|g| *g *= factor);
        }
    }
}

/// One forward pass: lazily mirrors parameters onto the tape and remembers
/// the mapping so gradients can be read back after `backward`.
pub struct Graph<'a> {
    pub tape: &'a Tape,
    store: &'a ParamStore,
    ids: RefCell<Vec<Option<TensorId>>>,
}

impl<'a> Graph<'a> {
    pub fn new(tape: &'a Tape, store: &'a ParamStore) -> Self {
        Graph {
            tape,
            store,
            ids: RefCell::new(vec![None; store.len()]),
        }
    }

    /// Tape node for a parameter, created on first use.
    pub fn p(&self, id: ParamId) -> TensorId {
        if let Some(t) = self.ids.borrow()[id.0] {
            return t;
        }
        let e = self.store.entry(id);
        let t = self
            .tape
            .param(Tensor::new(e.shape.clone(), e.value.clone()));
        self.ids.borrow_mut()[id.0] = Some(t);
        t
    }

    /// Gradients of every parameter that participated in this pass.
    /// Call after `tape.backward`.
    pub fn collect_grads(&self) -> Vec<(ParamId, Vec<f64>)> {
        self.ids
            .borrow()
            .iter()
            .enumerate()
            .filter_map(|(i, maybe)| {
                maybe.and_then(|t| self.tape.grad(t).map(|g| (ParamId(i), g)))
            })
            .collect()
    }
}

/// Accumulate harvested gradients into the store.
pub fn accumulate_grads(store: &mut ParamStore, grads: &[(ParamId, Vec<f64>)]) {
    for (id, g) in grads {
        let e = &mut store.entries_mut()[id.0];
        for (dst, &src) in e.grad.iter_mut().zip(g.iter()) {
            *dst += src;
        }
    }
}
