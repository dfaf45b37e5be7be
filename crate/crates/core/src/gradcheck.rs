//! Seeded random compositions of the differentiable op set, checked against
//! the finite-difference oracle. Used by the test suites to audit backward().

use alloc::rc::Rc;
use alloc::vec::Vec;

use crate::array::Array;
use crate::error::Result;
use crate::fd::{finite_difference, max_relative_error};
use crate::graph::{Graph, NodeId};
use crate::rng::CounterRng;

#[derive(Clone, Debug)]
enum PlanNode {
    Leaf(usize),
    Const(Array),
    Add(usize, usize),
    Sub(usize, usize),
    ScalarMul(f64, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    Concat(usize, usize, usize),
    Tanh(usize),
    Silu(usize),
    Sum(usize),
    Mean(usize),
    SqL2(usize),
}

/// A reproducible composition: an ordered node list (leaves, frozen
/// constants, ops) plus the node indices reduced into the scalar loss.
#[derive(Clone, Debug)]
pub struct CompositionPlan {
    leaf_shapes: Vec<Vec<usize>>,
    nodes: Vec<PlanNode>,
    loss_terms: Vec<usize>,
}

fn random_shape(rng: &mut CounterRng) -> Vec<usize> {
    match rng.next_index(3) {
        0 => alloc::vec![1],
        1 => alloc::vec![2 + rng.next_index(4)],
        _ => alloc::vec![2 + rng.next_index(3), 2 + rng.next_index(3)],
    }
}

fn random_array(rng: &mut CounterRng, shape: &[usize]) -> Array {
    let n: usize = shape.iter().product();
    Array::from_vec(
        shape.to_vec(),
        (0..n).map(|_| rng.next_range(-1.5, 1.5)).collect(),
    )
    .expect("sized")
}

/// Build a random plan over 1-3 leaves and roughly 6-14 ops.
pub fn random_plan(seed: u64) -> CompositionPlan {
    let mut rng = CounterRng::new(seed, 7001);
    let leaf_count = 1 + rng.next_index(3);
    let leaf_shapes: Vec<Vec<usize>> = (0..leaf_count).map(|_| random_shape(&mut rng)).collect();
    let mut nodes: Vec<PlanNode> = Vec::new();
    let mut shapes: Vec<Vec<usize>> = Vec::new();
    for (i, s) in leaf_shapes.iter().enumerate() {
        nodes.push(PlanNode::Leaf(i));
        shapes.push(s.clone());
    }
    for _ in 0..1 + rng.next_index(2) {
        let shape = random_shape(&mut rng);
        nodes.push(PlanNode::Const(random_array(&mut rng, &shape)));
        shapes.push(shape);
    }
    let synth_const = |nodes: &mut Vec<PlanNode>,
                           shapes: &mut Vec<Vec<usize>>,
                           rng: &mut CounterRng,
                           shape: Vec<usize>|
     -> usize {
        nodes.push(PlanNode::Const(random_array(rng, &shape)));
        shapes.push(shape);
        shapes.len() - 1
    };
    let op_count = 6 + rng.next_index(9);
    for _ in 0..op_count {
        let pick = rng.next_index(shapes.len());
        let out_shape = match rng.next_index(8) {
            0..=2 => {
                // binary elementwise with a matching or scalar partner
                let mut partner = None;
                for (j, s) in shapes.iter().enumerate() {
                    let compatible = j != pick
                        && (s == &shapes[pick]
                            || s.iter().product::<usize>() == 1
                            || shapes[pick].iter().product::<usize>() == 1);
                    if compatible {
                        partner = Some(j);
                        if rng.next_f64() < 0.5 {
                            break;
                        }
                    }
                }
                let partner = match partner {
                    Some(j) => j,
                    None => {
                        let shape = shapes[pick].clone();
                        synth_const(&mut nodes, &mut shapes, &mut rng, shape)
                    }
                };
                let out = if shapes[pick].iter().product::<usize>() == 1 {
                    shapes[partner].clone()
                } else {
                    shapes[pick].clone()
                };
                nodes.push(match rng.next_index(3) {
                    0 => PlanNode::Add(pick, partner),
                    1 => PlanNode::Sub(pick, partner),
                    _ => PlanNode::Mul(pick, partner),
                });
                out
            }
            3 => {
                let k = rng.next_range(-2.0, 2.0);
                nodes.push(PlanNode::ScalarMul(k, pick));
                shapes[pick].clone()
            }
            4 => match shapes[pick].as_slice() {
                &[m, k] if shapes[pick].len() == 2 => {
                    if rng.next_f64() < 0.5 {
                        let partner = synth_const(&mut nodes, &mut shapes, &mut rng, alloc::vec![k]);
                        nodes.push(PlanNode::MatMul(pick, partner));
                        alloc::vec![m]
                    } else {
                        let n = 2 + rng.next_index(3);
                        let partner =
                            synth_const(&mut nodes, &mut shapes, &mut rng, alloc::vec![k, n]);
                        nodes.push(PlanNode::MatMul(pick, partner));
                        alloc::vec![m, n]
                    }
                }
                &[n] => {
                    let m = 2 + rng.next_index(3);
                    let partner = synth_const(&mut nodes, &mut shapes, &mut rng, alloc::vec![m, n]);
                    nodes.push(PlanNode::MatMul(partner, pick));
                    alloc::vec![m]
                }
                _ => {
                    nodes.push(PlanNode::Tanh(pick));
                    shapes[pick].clone()
                }
            },
            5 => {
                let shape = shapes[pick].clone();
                let axis = rng.next_index(shape.len());
                let mut pshape = shape.clone();
                pshape[axis] = 1 + rng.next_index(3);
                let partner = synth_const(&mut nodes, &mut shapes, &mut rng, pshape.clone());
                nodes.push(PlanNode::Concat(pick, partner, axis));
                let mut out = shape;
                out[axis] += pshape[axis];
                out
            }
            6 => {
                nodes.push(if rng.next_f64() < 0.5 {
                    PlanNode::Tanh(pick)
                } else {
                    PlanNode::Silu(pick)
                });
                shapes[pick].clone()
            }
            _ => {
                nodes.push(match rng.next_index(3) {
                    0 => PlanNode::Sum(pick),
                    1 => PlanNode::Mean(pick),
                    _ => PlanNode::SqL2(pick),
                });
                alloc::vec![1]
            }
        };
        shapes.push(out_shape);
    }
    // reduce a few of the most recent nodes into the loss
    let mut loss_terms = Vec::new();
    for _ in 0..1 + rng.next_index(3) {
        loss_terms.push(shapes.len() - 1 - rng.next_index(op_count));
    }
    CompositionPlan {
        leaf_shapes,
        nodes,
        loss_terms,
    }
}

impl CompositionPlan {
    pub fn leaf_count(&self) -> usize {
        self.leaf_shapes.len()
    }

    pub fn leaf_shapes(&self) -> &[Vec<usize>] {
        &self.leaf_shapes
    }

    /// Materialize the plan on a graph for the given leaf values. Returns the
    /// graph, the scalar loss node, and the leaf node ids.
    pub fn build(&self, leaf_values: &[Array]) -> Result<(Graph, NodeId, Vec<NodeId>)> {
        let mut g = Graph::new();
        let mut pool: Vec<NodeId> = Vec::new();
        let mut leaf_ids = Vec::new();
        for node in &self.nodes {
            let id = match node {
                PlanNode::Leaf(i) => {
                    let id = g.leaf(Rc::new(leaf_values[*i].clone()));
                    leaf_ids.push(id);
                    id
                }
                PlanNode::Const(a) => g.constant_array(a.clone()),
                PlanNode::Add(a, b) => g.add(pool[*a], pool[*b])?,
                PlanNode::Sub(a, b) => g.sub(pool[*a], pool[*b])?,
                PlanNode::ScalarMul(k, a) => g.scalar_mul(*k, pool[*a])?,
                PlanNode::Mul(a, b) => g.mul(pool[*a], pool[*b])?,
                PlanNode::MatMul(a, b) => g.matmul(pool[*a], pool[*b])?,
                PlanNode::Concat(a, b, axis) => g.concat(&[pool[*a], pool[*b]], *axis)?,
                PlanNode::Tanh(a) => g.tanh(pool[*a])?,
                PlanNode::Silu(a) => g.silu(pool[*a])?,
                PlanNode::Sum(a) => g.sum(pool[*a])?,
                PlanNode::Mean(a) => g.mean(pool[*a])?,
                PlanNode::SqL2(a) => g.sq_l2(pool[*a])?,
            };
            pool.push(id);
        }
        // squash magnitudes before reducing into the loss
        let mut loss = None;
        for &term in &self.loss_terms {
            let squashed = g.tanh(pool[term])?;
            let reduced = g.mean(squashed)?;
            loss = Some(match loss {
                None => reduced,
                Some(acc) => g.add(acc, reduced)?,
            });
        }
        Ok((g, loss.expect("at least one term"), leaf_ids))
    }

    /// Deterministic leaf values for this plan under `seed`.
    pub fn leaf_values(&self, seed: u64) -> Vec<Array> {
        let mut rng = CounterRng::new(seed, 7002);
        self.leaf_shapes
            .iter()
            .map(|s| random_array(&mut rng, s))
            .collect()
    }
}

/// Build the plan for `seed`, compare backward() against the central
/// finite-difference oracle on every leaf, and return the worst relative
/// error observed.
pub fn check_gradients(seed: u64, h: f64) -> Result<f64> {
    let plan = random_plan(seed);
    let values = plan.leaf_values(seed);
    let (g, loss, leaf_ids) = plan.build(&values)?;
    let grads = g.backward(loss)?;
    let mut worst: f64 = 0.0;
    for (i, id) in leaf_ids.iter().enumerate() {
        let fd_grad = finite_difference(
            |x: &Array| {
                let mut vals = values.clone();
                vals[i] = x.clone();
                let (g2, loss2, _) = plan.build(&vals)?;
                g2.value(loss2).item()
            },
            &values[i],
            h,
        )?;
        let rel = max_relative_error(&grads[id], &fd_grad)?;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}
