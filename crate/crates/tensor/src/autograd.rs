use std::collections::{HashMap, HashSet};

use crate::tensor::GradModeGuard;
use crate::{Real, Tensor};

/// Gradients of a scalar with respect to every differentiable leaf it
/// depends on, keyed by tensor id.
#[derive(Default)]
pub struct Gradients<T: Real> {
    grads: HashMap<u64, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn get(&self, t: &Tensor<T>) -> Option<&Tensor<T>> {
        self.grads.get(&t.id())
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn contains(&self, t: &Tensor<T>) -> bool {
        self.grads.contains_key(&t.id())
    }
}

/// Reverse topological order of the recorded subgraph below `root`.
fn topo_order<T: Real>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut seen = HashSet::new();
    // (node, children pushed?)
    let mut stack = vec![(root.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !seen.insert(t.id()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(gf) = &t.node.grad_fn {
            for inp in &gf.inputs {
                if inp.requires_grad() && !seen.contains(&inp.id()) {
                    stack.push((inp.clone(), false));
                }
            }
        }
    }
    order.reverse();
    order
}

fn run<T: Real>(
    output: &Tensor<T>,
    keep: impl Fn(&Tensor<T>) -> bool,
    create_graph: bool,
) -> HashMap<u64, Tensor<T>> {
    assert_eq!(
        output.numel(),
        1,
        "gradients are defined for scalar outputs, got shape {:?}",
        output.shape()
    );
    let mut kept = HashMap::new();
    if !output.requires_grad() {
        return kept;
    }
    let _mode = GradModeGuard::new(create_graph);
    let mut pending: HashMap<u64, Tensor<T>> = HashMap::new();
    pending.insert(output.id(), Tensor::ones(output.shape()));
    for node in topo_order(output) {
        let Some(g) = pending.remove(&node.id()) else {
            continue;
        };
        if let Some(gf) = &node.node.grad_fn {
            let needs: Vec<bool> = gf.inputs.iter().map(|t| t.requires_grad()).collect();
            let grads = gf.op.backward(&gf.inputs, &g, &needs);
            debug_assert_eq!(grads.len(), gf.inputs.len());
            for ((inp, gi), need) in gf.inputs.iter().zip(grads).zip(needs) {
                let Some(gi) = gi else { continue };
                if !need {
                    continue;
                }
                debug_assert_eq!(gi.shape(), inp.shape(), "bad gradient shape from {}", gf.op.name());
                match pending.remove(&inp.id()) {
                    Some(prev) => pending.insert(inp.id(), prev.add(&gi)),
                    None => pending.insert(inp.id(), gi),
                };
            }
        }
        if keep(&node) {
            kept.insert(node.id(), g);
        }
    }
    kept
}

/// Gradients of a scalar `output` with respect to each of `inputs`.
///
/// With `create_graph` the returned gradients are themselves differentiable
/// functions of the graph's leaves. Inputs the output does not depend on
/// get `None`.
pub fn grad<T: Real>(
    output: &Tensor<T>,
    inputs: &[&Tensor<T>],
    create_graph: bool,
) -> Vec<Option<Tensor<T>>> {
    let wanted: HashSet<u64> = inputs.iter().map(|t| t.id()).collect();
    let mut kept = run(output, |t| wanted.contains(&t.id()), create_graph);
    inputs
        .iter()
        .map(|t| kept.remove(&t.id()))
        .collect()
}

/// Gradients of a scalar with respect to all differentiable leaves below it.
pub fn backward<T: Real>(output: &Tensor<T>) -> Gradients<T> {
    Gradients {
        grads: run(output, |t| t.is_leaf(), false),
    }
}
