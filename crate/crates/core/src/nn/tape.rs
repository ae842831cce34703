//! Reverse-mode autodiff over `ndarray` with f64 values.
//!
//! A [`Tape`] records one forward computation; [`Tape::backward`] replays it
//! in reverse. Nodes store their forward value; backward closures read parent
//! values from the tape and push gradient contributions through a sink, so
//! gradients for shared parameters accumulate across every use site.
//!
//! Parameters live outside the tape in a [`ParamStore`] and are copied onto
//! the tape once per forward pass (cached by name), which keeps training
//! steps independent and eval-mode forwards pure.

use std::cell::{Ref, RefCell};
use std::collections::BTreeMap;

use ndarray::{ArrayD, IxDyn};
use sha2::{Digest, Sha256};

/// Gradient sink passed to backward closures: `(parent id, contribution)`.
pub type GradSink<'a> = dyn FnMut(usize, ArrayD<f64>) + 'a;

type BackwardFn = Box<dyn Fn(&Tape, &ArrayD<f64>, &mut GradSink)>;

struct Node {
    value: ArrayD<f64>,
    needs_grad: bool,
    backward: Option<BackwardFn>,
}

/// One recorded forward computation.
#[derive(Default)]
pub struct Tape {
    nodes: RefCell<Vec<Node>>,
    params: RefCell<BTreeMap<String, (usize, bool)>>,
}

/// Handle to a tape node.
#[derive(Clone, Copy)]
pub struct Var<'t> {
    pub(crate) tape: &'t Tape,
    pub(crate) id: usize,
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("id", &self.id).field("shape", &self.shape()).finish()
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub(crate) fn push(
        &self,
        value: ArrayD<f64>,
        needs_grad: bool,
        backward: Option<BackwardFn>,
    ) -> usize {
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { value, needs_grad, backward });
        nodes.len() - 1
    }

    /// A node that never receives gradients.
    pub fn constant(&self, value: ArrayD<f64>) -> Var<'_> {
        let id = self.push(value, false, None);
        Var { tape: self, id }
    }

    /// A gradient-receiving input node.
    pub fn leaf(&self, value: ArrayD<f64>, needs_grad: bool) -> Var<'_> {
        let id = self.push(value, needs_grad, None);
        Var { tape: self, id }
    }

    /// Copy a named parameter onto the tape, cached so repeated uses share
    /// one node (and therefore one gradient accumulator).
    pub fn param(&self, store: &ParamStore, name: &str, trainable: bool) -> Var<'_> {
        if let Some(&(id, flag)) = self.params.borrow().get(name) {
            assert_eq!(flag, trainable, "parameter '{name}' used with mixed trainability");
            return Var { tape: self, id };
        }
        let value = store.get(name).unwrap_or_else(|| panic!("unknown parameter '{name}'"));
        let id = self.push(value.clone(), trainable, None);
        self.params.borrow_mut().insert(name.to_string(), (id, trainable));
        Var { tape: self, id }
    }

    pub(crate) fn value_ref(&self, id: usize) -> Ref<'_, ArrayD<f64>> {
        Ref::map(self.nodes.borrow(), |nodes| &nodes[id].value)
    }

    pub(crate) fn needs_grad_of(&self, id: usize) -> bool {
        self.nodes.borrow()[id].needs_grad
    }

    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Names of parameters touched by this tape, with trainability flags.
    pub fn touched_params(&self) -> Vec<(String, bool)> {
        self.params.borrow().iter().map(|(k, &(_, t))| (k.clone(), t)).collect()
    }

    /// Run reverse-mode accumulation from a scalar loss node.
    pub fn backward(&self, loss: Var<'_>) -> Grads {
        let nodes = self.nodes.borrow();
        assert!(
            nodes[loss.id].value.len() == 1,
            "backward requires a scalar loss, got shape {:?}",
            nodes[loss.id].value.shape()
        );
        let mut bufs: Vec<Option<ArrayD<f64>>> = (0..nodes.len()).map(|_| None).collect();
        bufs[loss.id] = Some(ArrayD::ones(nodes[loss.id].value.raw_dim()));

        for id in (0..=loss.id).rev() {
            if bufs[id].is_none() || !nodes[id].needs_grad {
                continue;
            }
            let Some(backward) = nodes[id].backward.as_ref() else { continue };
            let grad = bufs[id].take().expect("grad present");
            {
                let mut sink = |pid: usize, contrib: ArrayD<f64>| {
                    if !nodes[pid].needs_grad {
                        return;
                    }
                    debug_assert_eq!(
                        contrib.shape(),
                        nodes[pid].value.shape(),
                        "gradient shape mismatch for node {pid}"
                    );
                    match &mut bufs[pid] {
                        Some(acc) => *acc += &contrib,
                        slot @ None => *slot = Some(contrib),
                    }
                };
                backward(self, &grad, &mut sink);
            }
            bufs[id] = Some(grad);
        }

        let param_grads = self
            .params
            .borrow()
            .iter()
            .map(|(name, &(id, _))| (name.clone(), id))
            .collect();
        Grads { bufs, param_grads }
    }
}

/// Gradients produced by one backward pass.
pub struct Grads {
    bufs: Vec<Option<ArrayD<f64>>>,
    param_grads: BTreeMap<String, usize>,
}

impl Grads {
    /// Gradient of the loss w.r.t. `var`; zeros if the node was unreachable.
    pub fn grad(&self, var: Var<'_>) -> ArrayD<f64> {
        match &self.bufs[var.id] {
            Some(g) => g.clone(),
            None => ArrayD::zeros(var.tape.value_ref(var.id).raw_dim()),
        }
    }

    /// Gradient for a named parameter, if it received one.
    pub fn param_grad(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.param_grads.get(name).and_then(|&id| self.bufs[id].as_ref())
    }
}

impl<'t> Var<'t> {
    pub fn value(&self) -> ArrayD<f64> {
        self.tape.value_ref(self.id).clone()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.tape.value_ref(self.id).shape().to_vec()
    }

    /// Extract a 0-dim (or single-element) value.
    pub fn scalar(&self) -> f64 {
        let v = self.tape.value_ref(self.id);
        assert_eq!(v.len(), 1, "scalar() on shape {:?}", v.shape());
        *v.iter().next().expect("non-empty")
    }

    pub fn tape(&self) -> &'t Tape {
        self.tape
    }
}

/// Named persistent parameter tensors.
#[derive(Default, Clone)]
pub struct ParamStore {
    map: BTreeMap<String, ArrayD<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: ArrayD<f64>) {
        let name = name.into();
        assert!(self.map.insert(name.clone(), value).is_none(), "duplicate parameter '{name}'");
    }

    pub fn set(&mut self, name: &str, value: ArrayD<f64>) {
        *self.map.get_mut(name).unwrap_or_else(|| panic!("unknown parameter '{name}'")) = value;
    }

    pub fn get(&self, name: &str) -> Option<&ArrayD<f64>> {
        self.map.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.map.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.map.iter_mut()
    }

    pub fn names_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.map.keys().filter(|k| k.starts_with(prefix)).cloned().collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.map.values().map(|v| v.len()).sum()
    }

    /// Content hash over all parameters under `prefix` (name + raw bytes).
    /// Used for freeze audits across training stages.
    pub fn hash_of_prefix(&self, prefix: &str) -> [u8; 32] {
        let mut hasher = Sha256::new();
        for (name, value) in self.map.iter().filter(|(k, _)| k.starts_with(prefix)) {
            hasher.update(name.as_bytes());
            for &x in value.iter() {
                hasher.update(x.to_le_bytes());
            }
        }
        hasher.finalize().into()
    }
}

/// Helper for 0-dim scalars.
pub fn scalar_array(x: f64) -> ArrayD<f64> {
    ArrayD::from_elem(IxDyn(&[]), x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ops;

    #[test]
    fn shared_param_accumulates_both_uses() {
        let mut store = ParamStore::new();
        store.insert("w", scalar_array(3.0));
        let tape = Tape::new();
        let w = tape.param(&store, "w", true);
        // loss = w * w + w  => dloss/dw = 2w + 1 = 7
        let prod = ops::mul(w, w);
        let loss = ops::add(prod, w);
        let grads = tape.backward(loss);
        let g = grads.param_grad("w").unwrap();
        assert!((g.iter().next().unwrap() - 7.0).abs() < 1e-12);
    }

    #[test]
    fn constant_receives_no_grad() {
        let tape = Tape::new();
        let c = tape.constant(scalar_array(2.0));
        let x = tape.leaf(scalar_array(5.0), true);
        let loss = ops::mul(c, x);
        let grads = tape.backward(loss);
        assert_eq!(grads.grad(x).iter().next().copied().unwrap(), 2.0);
        assert_eq!(grads.grad(c).iter().next().copied().unwrap(), 0.0);
    }
}
