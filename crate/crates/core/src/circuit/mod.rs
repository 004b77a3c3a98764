//! Smooth, decomposable probabilistic circuits over discrete and continuous
//! variables, with exact marginalization, conditioning and sampling.
//!
//! Nodes live in an arena in topological order: every child id is smaller
//! than its parent's id. All evaluation happens in log space.

mod induced;
mod io;

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::CircuitError;

pub use induced::{extract_induced_mixture, InducedMixture, InducedTree, MAX_INDUCED_TREES};
pub use io::FORMAT_VERSION;

pub type NodeId = usize;

const WEIGHT_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub enum VarKind {
    /// Integer codes `0..cardinality`.
    Discrete {
        cardinality: usize,
    },
    Continuous,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Variable {
    pub name: String,
    pub kind: VarKind,
}

impl Variable {
    pub fn discrete(name: impl Into<String>, cardinality: usize) -> Self {
        Self {
            name: name.into(),
            kind: VarKind::Discrete { cardinality },
        }
    }

    pub fn continuous(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            kind: VarKind::Continuous,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum LeafDistribution {
    Categorical { probs: Vec<f64> },
    Gaussian { mean: f64, std: f64 },
}

impl LeafDistribution {
    pub fn log_prob(&self, x: f64) -> f64 {
        match self {
            LeafDistribution::Categorical { probs } => {
                let idx = x as usize;
                debug_assert!(x >= 0.0 && x.fract() == 0.0 && idx < probs.len());
                probs.get(idx).map_or(f64::NEG_INFINITY, |p| p.ln())
            }
            LeafDistribution::Gaussian { mean, std } => {
                let z = (x - mean) / std;
                -0.5 * z * z - std.ln() - 0.5 * (2.0 * PI).ln()
            }
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self {
            LeafDistribution::Categorical { probs } => sample_index(probs.iter().copied(), rng) as f64,
            LeafDistribution::Gaussian { mean, std } => {
                let z: f64 = StandardNormal.sample(rng);
                mean + std * z
            }
        }
    }

    /// Mean and variance.
    pub fn moments(&self) -> (f64, f64) {
        match self {
            LeafDistribution::Categorical { probs } => {
                let m: f64 = probs.iter().enumerate().map(|(i, p)| i as f64 * p).sum();
                let m2: f64 = probs.iter().enumerate().map(|(i, p)| (i * i) as f64 * p).sum();
                (m, (m2 - m * m).max(0.0))
            }
            LeafDistribution::Gaussian { mean, std } => (*mean, std * std),
        }
    }

    fn check(&self, var: &Variable, node: NodeId) -> Result<Self, CircuitError> {
        let bad = |message: String| CircuitError::BadLeaf { node, message };
        match (self, &var.kind) {
            (LeafDistribution::Categorical { probs }, VarKind::Discrete { cardinality }) => {
                if probs.len() != *cardinality {
                    return Err(bad(format!(
                        "{} probabilities for cardinality {cardinality}",
                        probs.len()
                    )));
                }
                if probs.iter().any(|p| !(p.is_finite() && *p > 0.0)) {
                    return Err(bad("categorical probabilities must be strictly positive".into()));
                }
                let total: f64 = probs.iter().sum();
                if (total - 1.0).abs() > WEIGHT_TOLERANCE {
                    return Err(bad(format!("probabilities sum to {total}")));
                }
                Ok(LeafDistribution::Categorical {
                    probs: probs.iter().map(|p| rescale(*p, total)).collect(),
                })
            }
            (LeafDistribution::Gaussian { mean, std }, VarKind::Continuous) => {
                if !mean.is_finite() || !(std.is_finite() && *std > 0.0) {
                    return Err(bad(format!("invalid gaussian ({mean}, {std})")));
                }
                Ok(self.clone())
            }
            _ => Err(bad(format!("distribution does not match variable `{}`", var.name))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Sum { children: Vec<(NodeId, f64)> },
    Product { children: Vec<NodeId> },
    Leaf { var: usize, dist: LeafDistribution },
}

/// Assignment of values to a subset of a circuit's variables; unassigned
/// variables are marginalized.
#[derive(Debug, Clone, PartialEq)]
pub struct Evidence {
    values: Vec<Option<f64>>,
}

impl Evidence {
    pub fn get(&self, var: usize) -> Option<f64> {
        self.values[var]
    }

    pub fn values(&self) -> &[Option<f64>] {
        &self.values
    }

    pub fn is_assigned(&self, var: usize) -> bool {
        self.values[var].is_some()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Circuit {
    vars: Vec<Variable>,
    nodes: Vec<Node>,
    root: NodeId,
    scopes: Vec<Vec<usize>>,
    score: Option<usize>,
}

impl Circuit {
    /// Validates and builds a circuit. Nodes unreachable from `root` are dropped.
    pub fn new(vars: Vec<Variable>, nodes: Vec<Node>, root: NodeId, score: Option<&str>) -> Result<Self, CircuitError> {
        let score = match score {
            Some(name) => Some(
                vars.iter()
                    .position(|v| v.name == name)
                    .ok_or_else(|| CircuitError::UnknownVariable(name.to_string()))?,
            ),
            None => None,
        };
        if root >= nodes.len() {
            return Err(CircuitError::Empty(root));
        }
        let mut checked = Vec::with_capacity(nodes.len());
        let mut scopes: Vec<Vec<usize>> = Vec::with_capacity(nodes.len());
        for (id, node) in nodes.into_iter().enumerate() {
            let child_ids: Vec<NodeId> = match &node {
                Node::Sum { children } => children.iter().map(|c| c.0).collect(),
                Node::Product { children } => children.clone(),
                Node::Leaf { .. } => Vec::new(),
            };
            if let Some(&c) = child_ids.iter().find(|&&c| c >= id) {
                return Err(CircuitError::NotTopological { node: id, child: c });
            }
            let (node, scope) = match node {
                Node::Leaf { var, dist } => {
                    let v = vars.get(var).ok_or_else(|| CircuitError::BadLeaf {
                        node: id,
                        message: format!("variable index {var} out of range"),
                    })?;
                    (
                        Node::Leaf {
                            var,
                            dist: dist.check(v, id)?,
                        },
                        vec![var],
                    )
                }
                Node::Product { children } => {
                    if children.is_empty() {
                        return Err(CircuitError::Empty(id));
                    }
                    let mut scope: Vec<usize> = Vec::new();
                    for &c in &children {
                        for &v in &scopes[c] {
                            if scope.contains(&v) {
                                return Err(CircuitError::NotDecomposable(id));
                            }
                            scope.push(v);
                        }
                    }
                    scope.sort_unstable();
                    (Node::Product { children }, scope)
                }
                Node::Sum { children } => {
                    if children.is_empty() {
                        return Err(CircuitError::Empty(id));
                    }
                    let scope = scopes[children[0].0].clone();
                    if children.iter().any(|(c, _)| scopes[*c] != scope) {
                        return Err(CircuitError::NotSmooth(id));
                    }
                    if children.iter().any(|(_, w)| !(w.is_finite() && *w > 0.0)) {
                        return Err(CircuitError::BadWeights {
                            node: id,
                            message: "weights must be strictly positive".into(),
                        });
                    }
                    let total: f64 = children.iter().map(|c| c.1).sum();
                    if (total - 1.0).abs() > WEIGHT_TOLERANCE {
                        return Err(CircuitError::BadWeights {
                            node: id,
                            message: format!("weights sum to {total}"),
                        });
                    }
                    let children = children.into_iter().map(|(c, w)| (c, rescale(w, total))).collect();
                    (Node::Sum { children }, scope)
                }
            };
            checked.push(node);
            scopes.push(scope);
        }
        if let Some(missing) = (0..vars.len()).find(|v| !scopes[root].contains(v)) {
            return Err(CircuitError::RootScope(vars[missing].name.clone()));
        }
        Ok(Self::compact(vars, checked, root, scopes, score))
    }

    fn compact(
        vars: Vec<Variable>,
        nodes: Vec<Node>,
        root: NodeId,
        scopes: Vec<Vec<usize>>,
        score: Option<usize>,
    ) -> Self {
        let mut reachable = vec![false; nodes.len()];
        reachable[root] = true;
        for id in (0..=root).rev() {
            if !reachable[id] {
                continue;
            }
            match &nodes[id] {
                Node::Sum { children } => children.iter().for_each(|(c, _)| reachable[*c] = true),
                Node::Product { children } => children.iter().for_each(|c| reachable[*c] = true),
                Node::Leaf { .. } => {}
            }
        }
        let mut remap = vec![usize::MAX; nodes.len()];
        let mut new_nodes = Vec::new();
        let mut new_scopes = Vec::new();
        for (id, (node, scope)) in nodes.into_iter().zip(scopes).enumerate() {
            if !reachable[id] {
                continue;
            }
            remap[id] = new_nodes.len();
            let node = match node {
                Node::Sum { children } => Node::Sum {
                    children: children.into_iter().map(|(c, w)| (remap[c], w)).collect(),
                },
                Node::Product { children } => Node::Product {
                    children: children.into_iter().map(|c| remap[c]).collect(),
                },
                leaf => leaf,
            };
            new_nodes.push(node);
            new_scopes.push(scope);
        }
        Self {
            vars,
            root: remap[root],
            nodes: new_nodes,
            scopes: new_scopes,
            score,
        }
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn root(&self) -> NodeId {
        self.root
    }

    pub fn scope(&self, node: NodeId) -> &[usize] {
        &self.scopes[node]
    }

    pub fn score_variable(&self) -> Option<usize> {
        self.score
    }

    pub fn var_index(&self, name: &str) -> Option<usize> {
        self.vars.iter().position(|v| v.name == name)
    }

    pub fn num_edges(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Sum { children } => children.len(),
                Node::Product { children } => children.len(),
                Node::Leaf { .. } => 0,
            })
            .sum()
    }

    /// Evidence with no variable assigned.
    pub fn empty_evidence(&self) -> Evidence {
        Evidence {
            values: vec![None; self.vars.len()],
        }
    }

    /// Builds evidence from `(variable name, value)` pairs. Discrete values are
    /// integer codes.
    pub fn evidence<'a>(&self, pairs: impl IntoIterator<Item = (&'a str, f64)>) -> Result<Evidence, CircuitError> {
        let mut values = vec![None; self.vars.len()];
        for (name, value) in pairs {
            let idx = self
                .var_index(name)
                .ok_or_else(|| CircuitError::UnknownVariable(name.to_string()))?;
            values[idx] = Some(value);
        }
        self.evidence_from_values(values)
    }

    /// Builds evidence from a slice aligned with [`Circuit::variables`].
    pub fn evidence_from_values(&self, values: Vec<Option<f64>>) -> Result<Evidence, CircuitError> {
        if values.len() != self.vars.len() {
            return Err(CircuitError::BadEvidence {
                name: String::new(),
                message: format!("expected {} values, got {}", self.vars.len(), values.len()),
            });
        }
        for (var, value) in self.vars.iter().zip(&values) {
            let Some(x) = value else { continue };
            let ok = match var.kind {
                VarKind::Discrete { cardinality } => *x >= 0.0 && x.fract() == 0.0 && (*x as usize) < cardinality,
                VarKind::Continuous => x.is_finite(),
            };
            if !ok {
                return Err(CircuitError::BadEvidence {
                    name: var.name.clone(),
                    message: format!("value {x} outside the variable's domain"),
                });
            }
        }
        Ok(Evidence { values })
    }

    /// Log value of every node under `evidence`; unassigned leaves evaluate to log 1.
    pub fn forward(&self, evidence: &Evidence) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.nodes.len());
        for node in &self.nodes {
            let v = match node {
                Node::Leaf { var, dist } => evidence.values[*var].map_or(0.0, |x| dist.log_prob(x)),
                Node::Product { children } => children.iter().map(|&c| out[c]).sum(),
                Node::Sum { children } => log_sum_exp(children.iter().map(|&(c, w)| w.ln() + out[c])),
            };
            out.push(v);
        }
        out
    }

    /// Log (marginal) density at the evidence.
    pub fn log_density(&self, evidence: &Evidence) -> f64 {
        self.forward(evidence)[self.root]
    }

    /// Samples the unassigned variables from the conditional given `evidence`.
    /// The returned vector is aligned with [`Circuit::variables`]; assigned
    /// variables carry their evidence value verbatim.
    pub fn conditional_sample<R: Rng + ?Sized>(&self, evidence: &Evidence, rng: &mut R) -> Vec<f64> {
        let values = self.forward(evidence);
        self.sample_with(evidence, &values, rng)
    }

    /// Like [`Circuit::conditional_sample`] but reuses a precomputed forward pass.
    pub fn sample_with<R: Rng + ?Sized>(&self, evidence: &Evidence, values: &[f64], rng: &mut R) -> Vec<f64> {
        let mut out: Vec<f64> = evidence.values.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
        let mut stack = vec![self.root];
        while let Some(id) = stack.pop() {
            match &self.nodes[id] {
                Node::Leaf { var, dist } => {
                    if evidence.values[*var].is_none() {
                        out[*var] = dist.sample(rng);
                    }
                }
                Node::Product { children } => stack.extend(children.iter().copied()),
                Node::Sum { children } => {
                    let logits: Vec<f64> = children.iter().map(|&(c, w)| w.ln() + values[c]).collect();
                    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    debug_assert!(max.is_finite(), "sum node {id} has no child with positive value");
                    let pick = if max.is_finite() {
                        sample_index(logits.iter().map(|l| (l - max).exp()), rng)
                    } else {
                        sample_index(children.iter().map(|c| c.1), rng)
                    };
                    stack.push(children[pick].0);
                }
            }
        }
        out
    }

    /// Unconditional sample.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        self.conditional_sample(&self.empty_evidence(), rng)
    }

    /// A circuit over `keep` representing the marginal distribution.
    pub fn marginal_circuit<'a>(&self, keep: impl IntoIterator<Item = &'a str>) -> Result<Circuit, CircuitError> {
        let mut dropped = vec![true; self.vars.len()];
        let mut any = false;
        for name in keep {
            let idx = self
                .var_index(name)
                .ok_or_else(|| CircuitError::UnknownVariable(name.to_string()))?;
            dropped[idx] = false;
            any = true;
        }
        if !any {
            return Err(CircuitError::BadEvidence {
                name: String::new(),
                message: "marginal must keep at least one variable".into(),
            });
        }
        Ok(self.restrict(&dropped, None))
    }

    /// The conditional circuit over the unassigned variables given `evidence`:
    /// evidence leaves are evaluated, their values absorbed into ancestor sum
    /// weights, and the leaves removed.
    pub fn condition(&self, evidence: &Evidence) -> Result<Circuit, CircuitError> {
        let dropped: Vec<bool> = evidence.values.iter().map(Option::is_some).collect();
        if dropped.iter().all(|d| *d) {
            return Err(CircuitError::BadEvidence {
                name: String::new(),
                message: "conditioning on every variable leaves nothing to model".into(),
            });
        }
        let values = self.forward(evidence);
        Ok(self.restrict(&dropped, Some(&values)))
    }

    /// `s(H | F = f_star)` for the bound score variable.
    pub fn condition_score(&self, f_star: f64) -> Result<Circuit, CircuitError> {
        let score = self.score.ok_or(CircuitError::NoScoreVariable)?;
        let mut values = vec![None; self.vars.len()];
        values[score] = Some(f_star);
        let evidence = self.evidence_from_values(values)?;
        self.condition(&evidence)
    }

    fn restrict(&self, dropped: &[bool], absorbed: Option<&[f64]>) -> Circuit {
        let var_map: Vec<Option<usize>> = {
            let mut next = 0;
            dropped
                .iter()
                .map(|d| {
                    if *d {
                        None
                    } else {
                        next += 1;
                        Some(next - 1)
                    }
                })
                .collect()
        };
        let vars: Vec<Variable> = self
            .vars
            .iter()
            .zip(dropped)
            .filter(|(_, d)| !**d)
            .map(|(v, _)| v.clone())
            .collect();
        // Each old node maps to a new node id, or None when its scope vanished.
        let mut map: Vec<Option<NodeId>> = Vec::with_capacity(self.nodes.len());
        let mut nodes: Vec<Node> = Vec::new();
        let mut scopes: Vec<Vec<usize>> = Vec::new();
        for (id, node) in self.nodes.iter().enumerate() {
            if self.scopes[id].iter().all(|v| dropped[*v]) {
                map.push(None);
                continue;
            }
            let scope: Vec<usize> = self.scopes[id].iter().filter_map(|v| var_map[*v]).collect();
            let mapped = match node {
                Node::Leaf { var, dist } => Some(Node::Leaf {
                    var: var_map[*var].expect("leaf scope kept"),
                    dist: dist.clone(),
                }),
                Node::Product { children } => {
                    let kept: Vec<NodeId> = children.iter().filter_map(|c| map[*c]).collect();
                    if kept.len() == 1 {
                        map.push(Some(kept[0]));
                        continue;
                    }
                    Some(Node::Product { children: kept })
                }
                Node::Sum { children } => {
                    let mut kept: Vec<(NodeId, f64)> = match absorbed {
                        Some(values) => {
                            let logits: Vec<f64> = children.iter().map(|&(c, w)| w.ln() + values[c]).collect();
                            let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                            children
                                .iter()
                                .zip(&logits)
                                .map(|(&(c, _), l)| (map[c].expect("smooth sum"), (l - max).exp()))
                                .collect()
                        }
                        None => children
                            .iter()
                            .map(|&(c, w)| (map[c].expect("smooth sum"), w))
                            .collect(),
                    };
                    let total: f64 = kept.iter().map(|c| c.1).sum();
                    kept.iter_mut().for_each(|c| c.1 /= total);
                    // Underflowed weights would break positivity; keep them tiny but nonzero.
                    for c in kept.iter_mut() {
                        if c.1 <= 0.0 {
                            c.1 = f64::MIN_POSITIVE;
                        }
                    }
                    if kept.len() == 1 {
                        map.push(Some(kept[0].0));
                        continue;
                    }
                    Some(Node::Sum { children: kept })
                }
            };
            if let Some(n) = mapped {
                nodes.push(n);
                scopes.push(scope);
                map.push(Some(nodes.len() - 1));
            }
        }
        let root = map[self.root].expect("root keeps at least one variable");
        let score = self.score.and_then(|s| var_map[s]);
        Self::compact(vars, nodes, root, scopes, score)
    }

    /// Per-variable mean and variance of the distribution the circuit encodes.
    pub fn moments(&self) -> Vec<(f64, f64)> {
        // For each node: first and second raw moments of each variable in scope.
        let mut per_node: Vec<Vec<(f64, f64)>> = Vec::with_capacity(self.nodes.len());
        for (id, node) in self.nodes.iter().enumerate() {
            let m = match node {
                Node::Leaf { dist, .. } => {
                    let (mean, var) = dist.moments();
                    vec![(mean, var + mean * mean)]
                }
                Node::Product { children } => {
                    let scope = &self.scopes[id];
                    let mut m = vec![(0.0, 0.0); scope.len()];
                    for &c in children {
                        for (k, v) in self.scopes[c].iter().enumerate() {
                            let pos = scope.binary_search(v).expect("child scope inside parent");
                            m[pos] = per_node[c][k];
                        }
                    }
                    m
                }
                Node::Sum { children } => {
                    let mut m = vec![(0.0, 0.0); self.scopes[id].len()];
                    for &(c, w) in children {
                        for (acc, x) in m.iter_mut().zip(&per_node[c]) {
                            acc.0 += w * x.0;
                            acc.1 += w * x.1;
                        }
                    }
                    m
                }
            };
            per_node.push(m);
        }
        per_node[self.root]
            .iter()
            .map(|&(m1, m2)| (m1, (m2 - m1 * m1).max(0.0)))
            .collect()
    }
}

pub fn log_sum_exp(xs: impl Iterator<Item = f64>) -> f64 {
    let xs: Vec<f64> = xs.collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + xs.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Divides by `total` unless it is 1 up to rounding, so that already
/// normalized weights keep their exact bits through a save/load cycle.
fn rescale(w: f64, total: f64) -> f64 {
    if (total - 1.0).abs() <= 1e-12 {
        w
    } else {
        w / total
    }
}

/// Draws an index with probability proportional to the (unnormalized) weights.
pub(crate) fn sample_index<R: Rng + ?Sized>(weights: impl Iterator<Item = f64> + Clone, rng: &mut R) -> usize {
    let total: f64 = weights.clone().sum();
    let u = rng.random::<f64>() * total;
    let mut acc = 0.0;
    let mut last = 0;
    for (i, w) in weights.enumerate() {
        if w > 0.0 {
            last = i;
        }
        acc += w;
        if u < acc {
            return i;
        }
    }
    last
}

#[cfg(test)]
mod tests;
