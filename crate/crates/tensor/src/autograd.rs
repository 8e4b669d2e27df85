//! Reverse-mode gradient computation.

use std::collections::{HashMap, HashSet};

use crate::element::Element;
use crate::tensor::{enable_grad, no_grad, Tensor};

/// Options for [`grad_with`].
#[derive(Debug, Clone, Copy, Default)]
pub struct GradOptions {
    /// Record the backward pass so the returned gradients can themselves be
    /// differentiated.
    pub create_graph: bool,
}

/// Nodes reachable from `root` through tensors that require grad, ordered so
/// that every node appears before its inputs.
fn topo_order<T: Element>(root: &Tensor<T>) -> Vec<Tensor<T>> {
    let mut order = Vec::new();
    let mut visited: HashSet<u64> = HashSet::new();
    // (node, children pushed?)
    let mut stack: Vec<(Tensor<T>, bool)> = vec![(root.clone(), false)];
    while let Some((node, expanded)) = stack.pop() {
        if expanded {
            order.push(node);
            continue;
        }
        if !visited.insert(node.id()) {
            continue;
        }
        stack.push((node.clone(), true));
        if let Some(gf) = &node.0.grad_fn {
            for inp in &gf.inputs {
                if inp.requires_grad() && !visited.contains(&inp.id()) {
                    stack.push((inp.clone(), false));
                }
            }
        }
    }
    order.reverse();
    order
}

/// Gradients of a scalar `output` with respect to `wrt`.
///
/// Entries are `None` for tensors that do not influence `output`.
pub fn grad<T: Element>(output: &Tensor<T>, wrt: &[Tensor<T>]) -> Vec<Option<Tensor<T>>> {
    assert_eq!(output.numel(), 1, "grad() expects a scalar output");
    let seed = Tensor::ones(output.shape());
    grad_with(output, &seed, wrt, GradOptions::default())
}

/// Like [`grad`], but records the backward graph for higher-order use.
pub fn grad_create_graph<T: Element>(
    output: &Tensor<T>,
    wrt: &[Tensor<T>],
) -> Vec<Option<Tensor<T>>> {
    assert_eq!(output.numel(), 1, "grad() expects a scalar output");
    let seed = Tensor::ones(output.shape());
    grad_with(output, &seed, wrt, GradOptions { create_graph: true })
}

/// Vector-Jacobian product of `output` with `seed`.
pub fn grad_with<T: Element>(
    output: &Tensor<T>,
    seed: &Tensor<T>,
    wrt: &[Tensor<T>],
    opts: GradOptions,
) -> Vec<Option<Tensor<T>>> {
    assert_eq!(seed.shape(), output.shape(), "seed shape must match output");
    if !output.requires_grad() {
        return vec![None; wrt.len()];
    }
    let _mode = if opts.create_graph {
        enable_grad()
    } else {
        no_grad()
    };
    let keep: HashSet<u64> = wrt.iter().map(|t| t.id()).collect();
    let order = topo_order(output);
    let mut grads: HashMap<u64, Tensor<T>> = HashMap::new();
    grads.insert(output.id(), seed.clone());
    let mut kept: HashMap<u64, Tensor<T>> = HashMap::new();

    for node in &order {
        let g = if keep.contains(&node.id()) {
            match grads.get(&node.id()) {
                Some(g) => {
                    kept.insert(node.id(), g.clone());
                    g.clone()
                }
                None => continue,
            }
        } else {
            match grads.remove(&node.id()) {
                Some(g) => g,
                None => continue,
            }
        };
        let Some(gf) = &node.0.grad_fn else { continue };
        let input_grads = gf.rule.backward(&gf.inputs, node, &g);
        debug_assert_eq!(input_grads.len(), gf.inputs.len(), "{}", gf.rule.name());
        for (inp, ig) in gf.inputs.iter().zip(input_grads) {
            let Some(ig) = ig else { continue };
            if !inp.requires_grad() {
                continue;
            }
            assert_eq!(
                ig.shape(),
                inp.shape(),
                "backward of {} produced a gradient of the wrong shape",
                gf.rule.name()
            );
            let acc = match grads.remove(&inp.id()) {
                Some(prev) => prev.add(&ig),
                None => ig,
            };
            grads.insert(inp.id(), acc);
        }
    }
    wrt.iter()
        .map(|t| kept.get(&t.id()).cloned().or_else(|| grads.get(&t.id()).cloned()))
        .collect()
}
