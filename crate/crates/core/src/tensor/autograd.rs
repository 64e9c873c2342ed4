use std::collections::{HashMap, HashSet};

use super::{Real, Tensor};
use crate::error::{Error, Result};

/// Gradients of a scalar with respect to every tracked leaf reachable from it.
#[derive(Debug, Clone, Default)]
pub struct Gradients<T: Real> {
    grads: HashMap<u64, Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, tensor: &Tensor<T>) -> Option<&[T]> {
        self.grads.get(&tensor.id()).map(|g| g.as_slice())
    }

    /// Gradient as a tensor shaped like `tensor`; zeros when unreachable.
    pub fn tensor(&self, tensor: &Tensor<T>) -> Tensor<T> {
        match self.get(tensor) {
            Some(g) => Tensor::new(g.to_vec(), tensor.shape()).expect("grad matches shape"),
            None => Tensor::zeros(tensor.shape()),
        }
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }
}

impl<T: Real> Tensor<T> {
    /// Reverse-mode pass from this scalar. Returns gradients for all tracked
    /// leaves that the scalar depends on.
    pub fn backward(&self) -> Result<Gradients<T>> {
        if self.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward() needs a scalar, got shape {:?}",
                self.shape()
            )));
        }
        let mut out = Gradients::default();
        if !self.requires_grad() {
            return Ok(out);
        }
        let order = topo_order(self);
        let mut pending: HashMap<u64, Vec<T>> = HashMap::new();
        pending.insert(self.id(), vec![T::one()]);

        for node in order.iter().rev() {
            let Some(grad) = pending.remove(&node.id()) else {
                continue;
            };
            match node.grad_fn() {
                None => {
                    out.grads.insert(node.id(), grad);
                }
                Some(gf) => {
                    let needs: Vec<bool> = gf.parents.iter().map(|p| p.requires_grad()).collect();
                    let parent_grads = (gf.backward)(&grad, &needs);
                    debug_assert_eq!(parent_grads.len(), gf.parents.len());
                    for ((parent, g), need) in gf.parents.iter().zip(parent_grads).zip(needs) {
                        let (Some(g), true) = (g, need) else { continue };
                        debug_assert_eq!(g.len(), parent.numel());
                        match pending.get_mut(&parent.id()) {
                            Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, &b)| *a += b),
                            None => {
                                pending.insert(parent.id(), g);
                            }
                        }
                    }
                }
            }
        }
        Ok(out)
    }
}

/// Post-order DFS over tracked nodes; iterative to survive deep graphs.
fn topo_order<T: Real>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited = HashSet::new();
    let mut stack: Vec<(Tensor<T>, usize)> = vec![(root.clone(), 0)];
    visited.insert(root.id());
    while let Some((node, child)) = stack.pop() {
        let parents = node.grad_fn().map(|g| g.parents.as_slice()).unwrap_or(&[]);
        if child < parents.len() {
            let next = parents[child].clone();
            stack.push((node, child + 1));
            if next.requires_grad() && visited.insert(next.id()) {
                stack.push((next, 0));
            }
        } else {
            order.push(node);
        }
    }
    order
}
