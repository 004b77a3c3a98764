#![allow(dead_code)]

use std::io::Write;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF, Normal};

use circuit_hpo::circuit::{Circuit, LeafDistribution, Node, Variable};
use circuit_hpo::error::ObjectiveError;
use circuit_hpo::{Configuration, Evaluation, HyperparameterDef, Objective, SearchSpace, Value};

/// Prints one verdict line and fails the test if the criterion is not met.
pub fn verdict(criterion: &str, pass: bool, started: Instant, budget: Duration, detail: String) {
    let elapsed = started.elapsed();
    let in_time = elapsed <= budget;
    let ok = pass && in_time;
    // Written to the handle directly so the line survives libtest's capture.
    let line = format!(
        "[{}] {criterion}: {detail} ({:.1}s of {}s budget)\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        budget.as_secs()
    );
    let _ = std::io::stdout().lock().write_all(line.as_bytes());
    assert!(pass, "{criterion}: {detail}");
    assert!(in_time, "{criterion}: took {elapsed:?}, budget {budget:?}");
}

pub fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Upper-tail p-value of Pearson's statistic. Cells expected to hold fewer
/// than five counts are pooled into one.
pub fn chi_square_p(observed: &[f64], expected: &[f64]) -> f64 {
    let (mut stat, mut cells) = (0.0, 0usize);
    let (mut pooled_o, mut pooled_e) = (0.0, 0.0);
    for (o, e) in observed.iter().zip(expected) {
        if *e >= 5.0 {
            stat += (o - e).powi(2) / e;
            cells += 1;
        } else {
            pooled_o += o;
            pooled_e += e;
        }
    }
    if pooled_e > 0.0 {
        if pooled_e >= 1.0 {
            stat += (pooled_o - pooled_e).powi(2) / pooled_e;
            cells += 1;
        } else if pooled_o > 2.0 {
            return 0.0;
        }
    }
    if cells < 2 {
        return 1.0;
    }
    1.0 - ChiSquared::new((cells - 1) as f64).unwrap().cdf(stat)
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Kolmogorov-Smirnov distance between a sample and a CDF.
pub fn ks_distance(sample: &[f64], cdf: impl Fn(f64) -> f64) -> f64 {
    let mut xs = sample.to_vec();
    xs.sort_by(f64::total_cmp);
    let n = xs.len() as f64;
    xs.iter()
        .enumerate()
        .map(|(i, x)| {
            let f = cdf(*x);
            (f - i as f64 / n).abs().max(((i + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max)
}

/// One-sided Wilcoxon signed-rank test that `a` tends to exceed `b`, pairing
/// by index. Normal approximation with tie correction; zero differences are
/// dropped.
pub fn wilcoxon_greater(a: &[f64], b: &[f64]) -> f64 {
    let mut d: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let n = d.len() as f64;
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(|x, y| x.abs().total_cmp(&y.abs()));
    let mut w_plus = 0.0;
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < d.len() {
        let mut j = i;
        while j + 1 < d.len() && d[j + 1].abs() == d[i].abs() {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        let t = (j - i + 1) as f64;
        tie_term += t * t * t - t;
        w_plus += d[i..=j].iter().filter(|x| **x > 0.0).count() as f64 * rank;
        i = j + 1;
    }
    let mean = n * (n + 1.0) / 4.0;
    let sd = (n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie_term / 48.0).sqrt();
    1.0 - Normal::new(0.0, 1.0).unwrap().cdf((w_plus - mean) / sd)
}

/// `P(X <= k)` and `P(X >= k)` for a sum of independent Bernoulli draws.
pub fn poisson_binomial_tails(probs: &[f64], k: usize) -> (f64, f64) {
    let mut pmf = vec![1.0];
    for p in probs {
        let mut next = vec![0.0; pmf.len() + 1];
        for (j, q) in pmf.iter().enumerate() {
            next[j] += q * (1.0 - p);
            next[j + 1] += q * p;
        }
        pmf = next;
    }
    let lower = pmf.iter().take(k + 1).sum::<f64>().min(1.0);
    let upper = pmf.iter().skip(k).sum::<f64>().min(1.0);
    (lower, upper)
}

/// A random smooth, decomposable circuit over the given variables. Sum nodes
/// get two or three children; leaves are random categoricals or Gaussians.
pub fn random_circuit<R: Rng>(vars: Vec<Variable>, rng: &mut R) -> Circuit {
    fn leaf<R: Rng>(var: usize, v: &Variable, rng: &mut R) -> Node {
        let dist = match v.kind {
            circuit_hpo::VarKind::Discrete { cardinality } => {
                let w: Vec<f64> = (0..cardinality).map(|_| rng.random::<f64>() + 0.05).collect();
                let s: f64 = w.iter().sum();
                LeafDistribution::Categorical {
                    probs: w.iter().map(|x| x / s).collect(),
                }
            }
            circuit_hpo::VarKind::Continuous => LeafDistribution::Gaussian {
                mean: rng.random_range(-2.0..2.0),
                std: rng.random_range(0.3..1.5),
            },
        };
        Node::Leaf { var, dist }
    }
    fn build<R: Rng>(scope: &[usize], depth: usize, vars: &[Variable], nodes: &mut Vec<Node>, rng: &mut R) -> usize {
        let node = if scope.len() == 1 && (depth >= 2 || rng.random_bool(0.5)) {
            leaf(scope[0], &vars[scope[0]], rng)
        } else if scope.len() > 1 && (depth >= 2 || rng.random_bool(0.5)) {
            let mut s = scope.to_vec();
            s.shuffle(rng);
            let cut = rng.random_range(1..s.len());
            let mut children = Vec::new();
            for part in [&s[..cut], &s[cut..]] {
                let mut part = part.to_vec();
                part.sort();
                children.push(build(&part, depth + 1, vars, nodes, rng));
            }
            Node::Product { children }
        } else {
            let k = rng.random_range(2..=3);
            let w: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 0.1).collect();
            let total: f64 = w.iter().sum();
            let children = w
                .iter()
                .map(|x| (build(scope, depth + 1, vars, nodes, rng), x / total))
                .collect();
            Node::Sum { children }
        };
        nodes.push(node);
        nodes.len() - 1
    }
    let mut nodes = Vec::new();
    let scope: Vec<usize> = (0..vars.len()).collect();
    let root = build(&scope, 0, &vars, &mut nodes, rng);
    Circuit::new(vars, nodes, root, None).expect("generated circuit is valid")
}

/// Every joint assignment of a set of discrete cardinalities, in odometer order.
pub fn assignments(cards: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &k in cards {
        out = out
            .into_iter()
            .flat_map(|prefix| {
                (0..k).map(move |v| {
                    let mut p = prefix.clone();
                    p.push(v);
                    p
                })
            })
            .collect();
    }
    out
}

/// A 5 x 5 discrete objective with a broad decoy around (0, b0) and an
/// isolated optimum at (4, b4).
pub struct Grid(pub SearchSpace);

impl Grid {
    pub fn new() -> Self {
        Self(
            SearchSpace::new(vec![
                HyperparameterDef::integer("a", 0, 4),
                HyperparameterDef::categorical("b", ["b0", "b1", "b2", "b3", "b4"]),
            ])
            .unwrap(),
        )
    }
}

impl Objective for Grid {
    fn name(&self) -> &str {
        "grid"
    }

    fn space(&self) -> &SearchSpace {
        &self.0
    }

    fn evaluate(&self, c: &Configuration) -> Result<Evaluation, ObjectiveError> {
        let Some(Value::Int(a)) = c.get("a") else { panic!() };
        let Some(Value::Label(b)) = c.get("b") else { panic!() };
        let b: f64 = b[1..].parse().unwrap();
        let a = *a as f64;
        let score = if a == 4.0 && b == 4.0 {
            2.0
        } else {
            1.0 - (a * a + b * b) / 32.0
        };
        Ok(Evaluation { score, cost: 1.0 })
    }

    fn optimum(&self) -> Option<f64> {
        Some(2.0)
    }
}
