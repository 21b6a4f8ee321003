//! Reverse-mode pass: topological sort over the recorded graph, then one
//! cotangent sweep. Gradients land in the `grad` accumulator of every
//! reachable tensor with `requires_grad` set.

use std::collections::HashMap;

use crate::error::{Result, TensorError};
use crate::scalar::Scalar;
use crate::tensor::{Tensor, TensorId};

impl<E: Scalar> Tensor<E> {
    /// Populate gradients of every reachable gradient-tracking leaf with
    /// d(self)/d(leaf). `self` must be a scalar. Repeated calls accumulate.
    pub fn backward(&self) -> Result<()> {
        if self.len() != 1 {
            return Err(TensorError::NonScalarLoss { shape: self.shape().to_vec() });
        }

        let order = topo_order(self);
        let mut cotangents: HashMap<TensorId, Vec<E>> = HashMap::new();
        cotangents.insert(self.id(), vec![E::ONE]);

        for node in order.iter().rev() {
            let Some(cot) = cotangents.remove(&node.id()) else { continue };
            if node.requires_grad_flag() {
                node.accumulate_grad(&cot);
            }
            let Some(op) = node.inner.op.as_ref() else { continue };
            let parent_grads = (op.backward)(&cot);
            debug_assert_eq!(parent_grads.len(), op.parents.len());
            for (parent, grad) in op.parents.iter().zip(parent_grads) {
                let Some(grad) = grad else { continue };
                if !parent.tracks_grad() {
                    continue;
                }
                debug_assert_eq!(grad.len(), parent.len());
                match cotangents.get_mut(&parent.id()) {
                    Some(acc) => {
                        for (a, v) in acc.iter_mut().zip(grad) {
                            *a += v;
                        }
                    }
                    None => {
                        cotangents.insert(parent.id(), grad);
                    }
                }
            }
        }
        Ok(())
    }
}

/// Iterative post-order DFS; parents appear before children in the result.
fn topo_order<E: Scalar>(root: &Tensor<E>) -> Vec<Tensor<E>> {
    let mut order = Vec::new();
    let mut visited: HashMap<TensorId, ()> = HashMap::new();
    // (node, children_pushed)
    let mut stack: Vec<(Tensor<E>, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if visited.contains_key(&node.id()) {
            continue;
        }
        visited.insert(node.id(), ());
        stack.push((node.clone(), true));
        if let Some(op) = node.inner.op.as_ref() {
            for p in &op.parents {
                if !visited.contains_key(&p.id()) && (p.inner.op.is_some() || p.requires_grad_flag()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }
    order
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let x = Tensor::<f64>::from_vec(&[4], vec![1.0, 2.0, 3.0, 4.0]).unwrap().requires_grad();
        let loss = x.sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![1.0; 4]);
    }

    #[test]
    fn two_backwards_double_grads() {
        let x = Tensor::<f64>::from_vec(&[2], vec![2.0, 3.0]).unwrap().requires_grad();
        let loss = x.mul(&x).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![8.0, 12.0]);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let x = Tensor::<f64>::zeros(&[3]).requires_grad();
        let y = x.exp().unwrap();
        assert!(matches!(y.backward(), Err(TensorError::NonScalarLoss { .. })));
    }

    #[test]
    fn diamond_graph_accumulates_through_shared_node() {
        // loss = sum(x*x + x*x) -> dloss/dx = 4x
        let x = Tensor::<f64>::from_vec(&[2], vec![1.0, 2.0]).unwrap().requires_grad();
        let sq = x.mul(&x).unwrap();
        let loss = sq.add(&sq).unwrap().sum_all().unwrap();
        loss.backward().unwrap();
        assert_eq!(x.grad().unwrap(), vec![4.0, 8.0]);
    }
}
