//! LearnSPN-style structure learning.
//!
//! Columns are split by RDC independence tests into product nodes, rows by
//! k-means into sum nodes. A sum split is kept only when it raises the
//! training likelihood over the factorized leaves of the same slice, so the
//! learned model never falls below the fully factorized baseline.

pub mod kmeans;
pub mod rdc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::circuit::{Circuit, LeafDistribution, Node, NodeId, VarKind, Variable};
use crate::error::LearnError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearnParams {
    pub rdc_threshold: f64,
    pub rdc_features: usize,
    pub rdc_scale: f64,
    pub kmeans_k: usize,
    pub kmeans_restarts: usize,
    pub kmeans_max_iter: usize,
    /// Fixed minimum slice size. `None` means `max(10, ceil(0.1 n))`.
    pub min_instances: Option<usize>,
    pub max_depth: usize,
    /// Pseudo-count added to every categorical state.
    pub smoothing: f64,
    pub sigma_floor: f64,
    pub seed: u64,
}

impl Default for LearnParams {
    fn default() -> Self {
        Self {
            rdc_threshold: 0.3,
            rdc_features: 20,
            rdc_scale: 1.0 / 6.0,
            kmeans_k: 2,
            kmeans_restarts: 10,
            kmeans_max_iter: 100,
            min_instances: None,
            max_depth: 20,
            smoothing: 1e-3,
            sigma_floor: 1e-3,
            seed: 0,
        }
    }
}

impl LearnParams {
    pub fn validate(&self) -> Result<(), LearnError> {
        let bad = |m: &str| Err(LearnError::Params(m.to_string()));
        if !(self.rdc_threshold > 0.0 && self.rdc_threshold < 1.0) {
            return bad("rdc_threshold must lie in (0, 1)");
        }
        if self.rdc_features == 0 {
            return bad("rdc_features must be at least 1");
        }
        if !(self.rdc_scale > 0.0 && self.rdc_scale.is_finite()) {
            return bad("rdc_scale must be positive");
        }
        if self.kmeans_k < 2 {
            return bad("kmeans_k must be at least 2");
        }
        if self.smoothing.is_nan() || self.smoothing <= 0.0 || self.sigma_floor.is_nan() || self.sigma_floor <= 0.0 {
            return bad("smoothing and sigma_floor must be positive");
        }
        Ok(())
    }

    pub fn min_instances_for(&self, n: usize) -> usize {
        self.min_instances
            .unwrap_or_else(|| 10.max((0.1 * n as f64).ceil() as usize))
            .max(1)
    }
}

/// Column-major numeric data over a fixed variable schema.
#[derive(Debug, Clone)]
pub struct DataMatrix {
    vars: Vec<Variable>,
    columns: Vec<Vec<f64>>,
    score: Option<String>,
}

impl DataMatrix {
    pub fn new(vars: Vec<Variable>, columns: Vec<Vec<f64>>) -> Result<Self, LearnError> {
        if vars.len() != columns.len() {
            return Err(LearnError::Data(format!(
                "{} variables but {} columns",
                vars.len(),
                columns.len()
            )));
        }
        if vars.is_empty() || columns[0].is_empty() {
            return Err(LearnError::EmptyData);
        }
        let n = columns[0].len();
        for (v, col) in vars.iter().zip(&columns) {
            if col.len() != n {
                return Err(LearnError::Data(format!(
                    "column `{}` has {} rows, expected {n}",
                    v.name,
                    col.len()
                )));
            }
            for (r, x) in col.iter().enumerate() {
                let ok = match v.kind {
                    VarKind::Continuous => x.is_finite(),
                    VarKind::Discrete { cardinality } => x.fract() == 0.0 && *x >= 0.0 && (*x as usize) < cardinality,
                };
                if !ok {
                    return Err(LearnError::Data(format!("row {r}: invalid value {x} for `{}`", v.name)));
                }
            }
        }
        Ok(Self {
            vars,
            columns,
            score: None,
        })
    }

    pub fn from_rows(vars: Vec<Variable>, rows: &[Vec<f64>]) -> Result<Self, LearnError> {
        if rows.is_empty() {
            return Err(LearnError::EmptyData);
        }
        if let Some(r) = rows.iter().position(|r| r.len() != vars.len()) {
            return Err(LearnError::Data(format!(
                "row {r} has {} entries, expected {}",
                rows[r].len(),
                vars.len()
            )));
        }
        let columns = (0..vars.len()).map(|c| rows.iter().map(|r| r[c]).collect()).collect();
        Self::new(vars, columns)
    }

    /// Marks the column that holds the score.
    pub fn with_score(mut self, name: &str) -> Result<Self, LearnError> {
        if !self.vars.iter().any(|v| v.name == name) {
            return Err(LearnError::Data(format!("no score column `{name}`")));
        }
        self.score = Some(name.to_string());
        Ok(self)
    }

    pub fn nrows(&self) -> usize {
        self.columns[0].len()
    }

    pub fn ncols(&self) -> usize {
        self.vars.len()
    }

    pub fn variables(&self) -> &[Variable] {
        &self.vars
    }

    pub fn column(&self, c: usize) -> &[f64] {
        &self.columns[c]
    }

    pub fn row(&self, r: usize) -> Vec<f64> {
        self.columns.iter().map(|c| c[r]).collect()
    }

    fn full(&self) -> Slice<'_> {
        Slice {
            data: self,
            rows: (0..self.nrows()).collect(),
            cols: (0..self.ncols()).collect(),
        }
    }
}

/// A rows x columns view of the data during recursion.
#[derive(Clone)]
struct Slice<'a> {
    data: &'a DataMatrix,
    rows: Vec<usize>,
    cols: Vec<usize>,
}

impl Slice<'_> {
    fn column(&self, c: usize) -> Vec<f64> {
        self.rows.iter().map(|&r| self.data.columns[c][r]).collect()
    }
}

/// Derives an independent seed for a child branch or a pair test.
fn mix(seed: u64, tag: u64) -> u64 {
    let mut z = seed
        ^ tag
            .wrapping_add(0x9e37_79b9_7f4a_7c15)
            .wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn split_variables_slice(slice: &Slice, params: &LearnParams, seed: u64) -> Vec<Vec<usize>> {
    let m = slice.cols.len();
    let mut parent: Vec<usize> = (0..m).collect();
    fn find(p: &mut [usize], mut i: usize) -> usize {
        while p[i] != i {
            p[i] = p[p[i]];
            i = p[i];
        }
        i
    }
    let cols: Vec<Vec<f64>> = slice.cols.iter().map(|&c| slice.column(c)).collect();
    for i in 0..m {
        for j in i + 1..m {
            if find(&mut parent, i) == find(&mut parent, j) {
                continue;
            }
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, ((slice.cols[i] as u64) << 32) | slice.cols[j] as u64));
            let r = rdc::rdc(&cols[i], &cols[j], params.rdc_features, params.rdc_scale, &mut rng);
            if r > params.rdc_threshold {
                let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                parent[a.max(b)] = a.min(b);
            }
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut slot = vec![usize::MAX; m];
    for i in 0..m {
        let root = find(&mut parent, i);
        if slot[root] == usize::MAX {
            slot[root] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[root]].push(slice.cols[i]);
    }
    groups
}

fn split_instances_slice(slice: &Slice, params: &LearnParams, seed: u64) -> Vec<(Vec<usize>, f64)> {
    let n = slice.rows.len();
    let mut standardized: Vec<Vec<f64>> = Vec::with_capacity(slice.cols.len());
    for &c in &slice.cols {
        let col = slice.column(c);
        let mean = col.iter().sum::<f64>() / n as f64;
        let sd = (col.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        if sd > 0.0 {
            standardized.push(col.iter().map(|x| (x - mean) / sd).collect());
        }
    }
    if standardized.is_empty() {
        return vec![(slice.rows.clone(), 1.0)];
    }
    let points: Vec<Vec<f64>> = (0..n).map(|r| standardized.iter().map(|c| c[r]).collect()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let result = kmeans::kmeans(
        &points,
        params.kmeans_k,
        params.kmeans_restarts,
        params.kmeans_max_iter,
        &mut rng,
    );
    let mut clusters = vec![Vec::new(); result.k];
    for (i, a) in result.assignments.iter().enumerate() {
        clusters[*a].push(slice.rows[i]);
    }
    clusters
        .into_iter()
        .map(|rows| {
            let w = rows.len() as f64 / n as f64;
            (rows, w)
        })
        .collect()
}

/// Connected components of the graph with an edge wherever pairwise RDC
/// exceeds the threshold. Components hold column indices.
pub fn split_variables(data: &DataMatrix, params: &LearnParams) -> Vec<Vec<usize>> {
    split_variables_slice(&data.full(), params, params.seed)
}

/// Row clusters from k-means on z-scored columns, with weights proportional
/// to cluster sizes.
pub fn split_instances(data: &DataMatrix, params: &LearnParams) -> Vec<(Vec<usize>, f64)> {
    split_instances_slice(&data.full(), params, params.seed)
}

/// Maximum-likelihood leaf. Categorical frequencies carry a pseudo-count of
/// `smoothing` per state; Gaussian sigma is floored at `sigma_floor`.
pub fn fit_leaf(column: &[f64], var: &Variable, params: &LearnParams) -> LeafDistribution {
    assert!(!column.is_empty(), "fit_leaf needs at least one value");
    let n = column.len() as f64;
    match var.kind {
        VarKind::Discrete { cardinality } => {
            let mut counts = vec![params.smoothing; cardinality];
            for x in column {
                counts[*x as usize] += 1.0;
            }
            let total = n + params.smoothing * cardinality as f64;
            LeafDistribution::Categorical {
                probs: counts.into_iter().map(|c| c / total).collect(),
            }
        }
        VarKind::Continuous => {
            let mean = column.iter().sum::<f64>() / n;
            let var = column.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
            LeafDistribution::Gaussian {
                mean,
                std: var.sqrt().max(params.sigma_floor),
            }
        }
    }
}

/// Intermediate tree, flattened into a [`Circuit`] at the end.
enum Tree {
    Leaf(usize, LeafDistribution),
    Product(Vec<Tree>),
    Sum(Vec<(f64, Tree)>),
}

impl Tree {
    fn log_density(&self, data: &DataMatrix, row: usize) -> f64 {
        match self {
            Tree::Leaf(c, d) => d.log_prob(data.columns[*c][row]),
            Tree::Product(ch) => ch.iter().map(|t| t.log_density(data, row)).sum(),
            Tree::Sum(ch) => crate::circuit::log_sum_exp(ch.iter().map(|(w, t)| w.ln() + t.log_density(data, row))),
        }
    }

    fn emit(self, nodes: &mut Vec<Node>) -> NodeId {
        let node = match self {
            Tree::Leaf(var, dist) => Node::Leaf { var, dist },
            Tree::Product(ch) => Node::Product {
                children: ch.into_iter().map(|t| t.emit(nodes)).collect(),
            },
            Tree::Sum(ch) => Node::Sum {
                children: ch.into_iter().map(|(w, t)| (t.emit(nodes), w)).collect(),
            },
        };
        nodes.push(node);
        nodes.len() - 1
    }
}

struct Learner<'a> {
    data: &'a DataMatrix,
    params: &'a LearnParams,
    min_instances: usize,
    score: Option<usize>,
}

impl Learner<'_> {
    fn factorized(&self, slice: &Slice) -> Tree {
        let leaves: Vec<Tree> = slice
            .cols
            .iter()
            .map(|&c| Tree::Leaf(c, fit_leaf(&slice.column(c), &self.data.vars[c], self.params)))
            .collect();
        if leaves.len() == 1 {
            leaves.into_iter().next().unwrap()
        } else {
            Tree::Product(leaves)
        }
    }

    fn train_ll(&self, tree: &Tree, rows: &[usize]) -> f64 {
        rows.iter().map(|&r| tree.log_density(self.data, r)).sum()
    }

    fn build(&self, slice: Slice, depth: usize, seed: u64) -> Tree {
        if slice.cols.len() == 1 || slice.rows.len() < self.min_instances || depth >= self.params.max_depth {
            return self.factorized(&slice);
        }
        let components = split_variables_slice(&slice, self.params, mix(seed, 1));
        if components.len() > 1 {
            if let Some(s) = self.score {
                if components.iter().any(|c| c.len() == 1 && c[0] == s) && slice.cols.len() == self.data.ncols() {
                    tracing::warn!("score column is independent of every hyperparameter in the data");
                }
            }
            let children = components
                .into_iter()
                .enumerate()
                .map(|(i, cols)| {
                    let child = Slice { cols, ..slice.clone() };
                    self.build(child, depth + 1, mix(seed, 100 + i as u64))
                })
                .collect();
            return Tree::Product(children);
        }
        if slice.rows.len() < 2 * self.min_instances {
            return self.factorized(&slice);
        }
        let clusters = split_instances_slice(&slice, self.params, mix(seed, 2));
        if clusters.len() < 2 {
            return self.factorized(&slice);
        }
        let children: Vec<(f64, Tree)> = clusters
            .into_iter()
            .enumerate()
            .map(|(i, (rows, w))| {
                let child = Slice { rows, ..slice.clone() };
                (w, self.build(child, depth + 1, mix(seed, 200 + i as u64)))
            })
            .collect();
        let sum = Tree::Sum(children);
        let flat = self.factorized(&slice);
        if self.train_ll(&sum, &slice.rows) >= self.train_ll(&flat, &slice.rows) {
            sum
        } else {
            flat
        }
    }
}

/// Learns a smooth, decomposable circuit. Pure in `(data, params)`.
pub fn learn(data: &DataMatrix, params: &LearnParams) -> Result<Circuit, LearnError> {
    params.validate()?;
    let score = data
        .score
        .as_deref()
        .and_then(|s| data.vars.iter().position(|v| v.name == s));
    let learner = Learner {
        data,
        params,
        min_instances: params.min_instances_for(data.nrows()),
        score,
    };
    let tree = learner.build(data.full(), 0, params.seed);
    let mut nodes = Vec::new();
    let root = tree.emit(&mut nodes);
    Ok(Circuit::new(data.vars.clone(), nodes, root, data.score.as_deref())?)
}

/// Training log-likelihood of the fully factorized leaf model.
pub fn factorized_log_likelihood(data: &DataMatrix, params: &LearnParams) -> f64 {
    let leaves: Vec<LeafDistribution> = (0..data.ncols())
        .map(|c| fit_leaf(data.column(c), &data.vars[c], params))
        .collect();
    (0..data.nrows())
        .map(|r| {
            leaves
                .iter()
                .enumerate()
                .map(|(c, l)| l.log_prob(data.columns[c][r]))
                .sum::<f64>()
        })
        .sum()
}

/// Training log-likelihood of a circuit over the same schema.
pub fn log_likelihood(circuit: &Circuit, data: &DataMatrix) -> f64 {
    (0..data.nrows())
        .map(|r| {
            let ev = circuit
                .evidence_from_values(data.row(r).into_iter().map(Some).collect())
                .expect("data matches circuit schema");
            circuit.log_density(&ev)
        })
        .sum()
}
