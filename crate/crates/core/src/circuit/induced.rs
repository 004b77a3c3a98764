//! Expansion of a circuit into the mixture over its induced trees: one child
//! per sum node, every child of a product node. Each tree contributes the
//! product of its chosen sum weights times a fully factorized leaf product.

use super::{log_sum_exp, Circuit, Evidence, LeafDistribution, Node};

pub const MAX_INDUCED_TREES: usize = 10_000;

#[derive(Debug, Clone, PartialEq)]
pub struct InducedTree {
    pub weight: f64,
    /// One leaf per variable, sorted by variable index.
    pub leaves: Vec<(usize, LeafDistribution)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InducedMixture {
    pub components: Vec<InducedTree>,
    /// Set when enumeration stopped at the cap; weights then sum to less than 1.
    pub truncated: bool,
}

impl InducedMixture {
    pub fn total_weight(&self) -> f64 {
        self.components.iter().map(|c| c.weight).sum()
    }

    pub fn log_density(&self, evidence: &Evidence) -> f64 {
        log_sum_exp(self.components.iter().map(|tree| {
            tree.weight.ln()
                + tree
                    .leaves
                    .iter()
                    .map(|(var, leaf)| evidence.get(*var).map_or(0.0, |x| leaf.log_prob(x)))
                    .sum::<f64>()
        }))
    }
}

impl Circuit {
    /// Enumerates induced trees, stopping after `cap` of them.
    pub fn induced_mixture(&self, cap: usize) -> InducedMixture {
        let mut truncated = false;
        // Per node: list of (weight, leaf node ids).
        let mut lists: Vec<Vec<(f64, Vec<usize>)>> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let list = match node {
                Node::Leaf { .. } => vec![(1.0, vec![id])],
                Node::Sum { children } => {
                    let mut out = Vec::new();
                    'outer: for &(c, w) in children {
                        for (cw, leaves) in &lists[c] {
                            if out.len() >= cap {
                                truncated = true;
                                break 'outer;
                            }
                            out.push((w * cw, leaves.clone()));
                        }
                    }
                    out
                }
                Node::Product { children } => {
                    let mut out: Vec<(f64, Vec<usize>)> = vec![(1.0, Vec::new())];
                    for &c in children {
                        let mut next = Vec::new();
                        'outer: for (w, leaves) in &out {
                            for (cw, cleaves) in &lists[c] {
                                if next.len() >= cap {
                                    truncated = true;
                                    break 'outer;
                                }
                                let mut l = leaves.clone();
                                l.extend_from_slice(cleaves);
                                next.push((w * cw, l));
                            }
                        }
                        out = next;
                    }
                    out
                }
            };
            lists.push(list);
        }
        let components = lists
            .swap_remove(self.root)
            .into_iter()
            .map(|(weight, leaf_ids)| {
                let mut leaves: Vec<(usize, LeafDistribution)> = leaf_ids
                    .into_iter()
                    .map(|l| match &self.nodes[l] {
                        Node::Leaf { var, dist } => (*var, dist.clone()),
                        _ => unreachable!("induced tree entries are leaves"),
                    })
                    .collect();
                leaves.sort_by_key(|(v, _)| *v);
                InducedTree { weight, leaves }
            })
            .collect();
        InducedMixture { components, truncated }
    }
}

/// Enumerates the induced trees of `circuit` up to [`MAX_INDUCED_TREES`].
pub fn extract_induced_mixture(circuit: &Circuit) -> InducedMixture {
    circuit.induced_mixture(MAX_INDUCED_TREES)
}
