use super::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const NEAR_ONE: f64 = 1.0 - 1e-12;

fn delta(label: usize) -> LeafDistribution {
    let mut probs = vec![1e-12; 2];
    probs[label] = NEAR_ONE;
    LeafDistribution::Categorical { probs }
}

/// 0.5 * d(X1=a) d(X2=a) + 0.5 * d(X1=b) d(X2=b)
fn diagonal_mixture() -> Circuit {
    let vars = vec![Variable::discrete("X1", 2), Variable::discrete("X2", 2)];
    let nodes = vec![
        Node::Leaf { var: 0, dist: delta(0) },
        Node::Leaf { var: 1, dist: delta(0) },
        Node::Product { children: vec![0, 1] },
        Node::Leaf { var: 0, dist: delta(1) },
        Node::Leaf { var: 1, dist: delta(1) },
        Node::Product { children: vec![3, 4] },
        Node::Sum {
            children: vec![(2, 0.5), (5, 0.5)],
        },
    ];
    Circuit::new(vars, nodes, 6, None).unwrap()
}

/// 0.7 * d(X1=a) N(F; 0, 1) + 0.3 * d(X1=b) N(F; 2, 1)
fn score_mixture() -> Circuit {
    let vars = vec![Variable::discrete("X1", 2), Variable::continuous("F")];
    let nodes = vec![
        Node::Leaf { var: 0, dist: delta(0) },
        Node::Leaf {
            var: 1,
            dist: LeafDistribution::Gaussian { mean: 0.0, std: 1.0 },
        },
        Node::Product { children: vec![0, 1] },
        Node::Leaf { var: 0, dist: delta(1) },
        Node::Leaf {
            var: 1,
            dist: LeafDistribution::Gaussian { mean: 2.0, std: 1.0 },
        },
        Node::Product { children: vec![3, 4] },
        Node::Sum {
            children: vec![(2, 0.7), (5, 0.3)],
        },
    ];
    Circuit::new(vars, nodes, 6, Some("F")).unwrap()
}

fn std_normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

fn posterior_b_at_two() -> f64 {
    let a = 0.7 * std_normal_pdf(2.0);
    let b = 0.3 * std_normal_pdf(0.0);
    b / (a + b)
}

#[test]
fn mixture_density_and_marginal() {
    let c = diagonal_mixture();
    let ev = c.evidence([("X1", 0.0), ("X2", 0.0)]).unwrap();
    assert!((c.log_density(&ev).exp() - 0.5).abs() < 1e-10);
    let ev = c.evidence([("X1", 0.0)]).unwrap();
    assert!((c.log_density(&ev).exp() - 0.5).abs() < 1e-10);
    let ev = c.evidence([("X1", 0.0), ("X2", 1.0)]).unwrap();
    assert!(c.log_density(&ev).exp() < 1e-10);
    assert!(c.log_density(&c.empty_evidence()).abs() < 1e-12);
}

#[test]
fn gaussian_leaf_density() {
    let c = Circuit::new(
        vec![Variable::continuous("F")],
        vec![Node::Leaf {
            var: 0,
            dist: LeafDistribution::Gaussian { mean: 0.0, std: 1.0 },
        }],
        0,
        Some("F"),
    )
    .unwrap();
    let ev = c.evidence([("F", 0.0)]).unwrap();
    assert!((c.log_density(&ev).exp() - 0.39894).abs() < 1e-5);
}

#[test]
fn sampling_collapses_to_matching_component() {
    let c = diagonal_mixture();
    let ev = c.evidence([("X2", 1.0)]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..10_000 {
        let s = c.conditional_sample(&ev, &mut rng);
        assert_eq!(s, vec![1.0, 1.0]);
    }
}

#[test]
fn sampling_follows_bayes_posterior() {
    let c = score_mixture();
    let ev = c.evidence([("F", 2.0)]).unwrap();
    let expected = posterior_b_at_two();
    assert!((expected - 0.760).abs() < 5e-4);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let n = 100_000;
    let hits = (0..n)
        .filter(|_| {
            let s = c.conditional_sample(&ev, &mut rng);
            assert_eq!(s[1], 2.0);
            s[0] == 1.0
        })
        .count();
    assert!((hits as f64 / n as f64 - expected).abs() < 0.005);
}

#[test]
fn condition_score_absorbs_weights() {
    let c = score_mixture();
    let cond = c.condition_score(2.0).unwrap();
    assert_eq!(cond.variables(), &[Variable::discrete("X1", 2)]);
    assert_eq!(cond.score_variable(), None);
    let Node::Sum { children } = &cond.nodes()[cond.root()] else {
        panic!("root should remain a sum");
    };
    let expected = posterior_b_at_two();
    assert!((children[0].1 - (1.0 - expected)).abs() < 1e-12);
    assert!((children[1].1 - expected).abs() < 1e-12);
    assert!((children[0].1 - 0.240).abs() < 5e-4);
    assert!(cond.log_density(&cond.empty_evidence()).abs() < 1e-12);
}

#[test]
fn condition_at_mean_of_single_component() {
    let vars = vec![Variable::discrete("X1", 2), Variable::continuous("F")];
    let nodes = vec![
        Node::Leaf {
            var: 0,
            dist: LeafDistribution::Categorical {
                probs: vec![0.25, 0.75],
            },
        },
        Node::Leaf {
            var: 1,
            dist: LeafDistribution::Gaussian { mean: 1.5, std: 0.5 },
        },
        Node::Product { children: vec![0, 1] },
    ];
    let c = Circuit::new(vars, nodes, 2, Some("F")).unwrap();
    let cond = c.condition_score(1.5).unwrap();
    assert_eq!(cond.nodes().len(), 1);
    let ev = cond.evidence([("X1", 1.0)]).unwrap();
    assert!((cond.log_density(&ev).exp() - 0.75).abs() < 1e-12);
}

#[test]
fn condition_score_requires_binding() {
    assert_eq!(
        diagonal_mixture().condition_score(0.0).unwrap_err(),
        CircuitError::NoScoreVariable
    );
}

#[test]
fn marginal_keeping_everything_is_identity() {
    let c = score_mixture();
    let m = c.marginal_circuit(["X1", "F"]).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    for _ in 0..100 {
        let x: f64 = rng.random_range(0..2) as f64;
        let f: f64 = rng.random_range(-4.0..6.0);
        let a = c.log_density(&c.evidence([("X1", x), ("F", f)]).unwrap());
        let b = m.log_density(&m.evidence([("X1", x), ("F", f)]).unwrap());
        assert!((a - b).abs() < 1e-12);
    }
    assert_eq!(m.nodes().len(), c.nodes().len());
}

#[test]
fn marginal_drops_variables() {
    let c = diagonal_mixture();
    let m = c.marginal_circuit(["X1"]).unwrap();
    assert_eq!(m.variables().len(), 1);
    let ev = m.evidence([("X1", 0.0)]).unwrap();
    assert!((m.log_density(&ev).exp() - 0.5).abs() < 1e-12);
    assert!(c.marginal_circuit(["nope"]).is_err());
    assert!(c.marginal_circuit([]).is_err());
}

#[test]
fn marginal_of_continuous_matches_quadrature() {
    let c = score_mixture();
    let m = c.marginal_circuit(["F"]).unwrap();
    // Trapezoid over F for the joint with X1 summed out.
    let (lo, hi, n) = (-10.0, 12.0, 10_000);
    let h = (hi - lo) / n as f64;
    let mut integral = 0.0;
    for i in 0..=n {
        let f = lo + i as f64 * h;
        let ev = m.evidence([("F", f)]).unwrap();
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        integral += w * m.log_density(&ev).exp() * h;
        let brute: f64 = (0..2)
            .map(|x| c.log_density(&c.evidence([("X1", x as f64), ("F", f)]).unwrap()).exp())
            .sum();
        let direct = m.log_density(&ev).exp();
        assert!((brute - direct).abs() <= 1e-6 * direct.max(1e-300));
    }
    assert!((integral - 1.0).abs() < 1e-6);
}

#[test]
fn structural_validation() {
    let vars = vec![Variable::discrete("A", 2), Variable::discrete("B", 2)];
    let a = Node::Leaf {
        var: 0,
        dist: LeafDistribution::Categorical { probs: vec![0.5, 0.5] },
    };
    let b = Node::Leaf {
        var: 1,
        dist: LeafDistribution::Categorical { probs: vec![0.5, 0.5] },
    };

    // Sum over different scopes.
    let nodes = vec![
        a.clone(),
        b.clone(),
        Node::Sum {
            children: vec![(0, 0.5), (1, 0.5)],
        },
    ];
    assert_eq!(
        Circuit::new(vars.clone(), nodes, 2, None).unwrap_err(),
        CircuitError::NotSmooth(2)
    );

    // Product over overlapping scopes.
    let nodes = vec![
        a.clone(),
        a.clone(),
        b.clone(),
        Node::Product {
            children: vec![0, 1, 2],
        },
    ];
    assert_eq!(
        Circuit::new(vars.clone(), nodes, 3, None).unwrap_err(),
        CircuitError::NotDecomposable(3)
    );

    // Weights that do not sum to one, and a zero weight.
    let nodes = vec![
        a.clone(),
        a.clone(),
        Node::Sum {
            children: vec![(0, 0.5), (1, 0.6)],
        },
        b.clone(),
        Node::Product { children: vec![2, 3] },
    ];
    assert!(matches!(
        Circuit::new(vars.clone(), nodes, 4, None),
        Err(CircuitError::BadWeights { .. })
    ));
    let nodes = vec![
        a.clone(),
        a.clone(),
        Node::Sum {
            children: vec![(0, 1.0), (1, 0.0)],
        },
        b.clone(),
        Node::Product { children: vec![2, 3] },
    ];
    assert!(matches!(
        Circuit::new(vars.clone(), nodes, 4, None),
        Err(CircuitError::BadWeights { .. })
    ));

    // Zero leaf probability violates positivity.
    let zero = Node::Leaf {
        var: 0,
        dist: LeafDistribution::Categorical { probs: vec![1.0, 0.0] },
    };
    let nodes = vec![zero, b.clone(), Node::Product { children: vec![0, 1] }];
    assert!(matches!(
        Circuit::new(vars.clone(), nodes, 2, None),
        Err(CircuitError::BadLeaf { .. })
    ));

    // Forward references and missing root scope.
    let nodes = vec![Node::Product { children: vec![1, 2] }, a.clone(), b.clone()];
    assert!(matches!(
        Circuit::new(vars.clone(), nodes, 0, None),
        Err(CircuitError::NotTopological { .. })
    ));
    let nodes = vec![a.clone()];
    assert_eq!(
        Circuit::new(vars.clone(), nodes, 0, None).unwrap_err(),
        CircuitError::RootScope("B".into())
    );

    // Gaussian on a discrete variable.
    let nodes = vec![
        Node::Leaf {
            var: 0,
            dist: LeafDistribution::Gaussian { mean: 0.0, std: 1.0 },
        },
        b,
        Node::Product { children: vec![0, 1] },
    ];
    assert!(matches!(
        Circuit::new(vars, nodes, 2, None),
        Err(CircuitError::BadLeaf { .. })
    ));
}

#[test]
fn evidence_is_validated() {
    let c = score_mixture();
    assert!(c.evidence([("X1", 2.0)]).is_err());
    assert!(c.evidence([("X1", 0.5)]).is_err());
    assert!(c.evidence([("F", f64::NAN)]).is_err());
    assert!(c.evidence([("G", 0.0)]).is_err());
}

#[test]
fn unreachable_nodes_are_dropped() {
    let vars = vec![Variable::continuous("F")];
    let nodes = vec![
        Node::Leaf {
            var: 0,
            dist: LeafDistribution::Gaussian { mean: 0.0, std: 1.0 },
        },
        Node::Leaf {
            var: 0,
            dist: LeafDistribution::Gaussian { mean: 5.0, std: 1.0 },
        },
    ];
    let c = Circuit::new(vars, nodes, 1, None).unwrap();
    assert_eq!(c.nodes().len(), 1);
    assert_eq!(c.root(), 0);
}

#[test]
fn text_roundtrip() {
    for c in [diagonal_mixture(), score_mixture()] {
        let text = c.to_text();
        assert!(text.starts_with("circuit 1\n"));
        let back = Circuit::from_text(&text).unwrap();
        assert_eq!(back, c);
    }
}

#[test]
fn text_errors_have_line_numbers() {
    let err = Circuit::from_text("circuit 1\nvar X continuous\n0 leaf X gauss 0\nroot 0\n").unwrap_err();
    assert!(matches!(err, CircuitError::Format { line: 3, .. }), "{err}");
    let err = Circuit::from_text("circuit 2\n").unwrap_err();
    assert!(matches!(err, CircuitError::Format { line: 1, .. }));
}

#[test]
fn moments_match_sampling() {
    let c = score_mixture();
    let m = c.moments();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let n = 200_000;
    let (mut s, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let f = c.sample(&mut rng)[1];
        s += f;
        s2 += f * f;
    }
    let mean = s / n as f64;
    let var = s2 / n as f64 - mean * mean;
    assert!((m[1].0 - 0.6).abs() < 1e-9);
    assert!((mean - m[1].0).abs() < 0.01);
    assert!((var - m[1].1).abs() < 0.02);
}

#[test]
fn induced_trees_of_simple_shapes() {
    let vars = vec![Variable::continuous("A"), Variable::continuous("B")];
    let g = |m: f64| LeafDistribution::Gaussian { mean: m, std: 1.0 };
    let product = Circuit::new(
        vars.clone(),
        vec![
            Node::Leaf { var: 0, dist: g(0.0) },
            Node::Leaf { var: 1, dist: g(1.0) },
            Node::Product { children: vec![0, 1] },
        ],
        2,
        None,
    )
    .unwrap();
    let mix = extract_induced_mixture(&product);
    assert_eq!(mix.components.len(), 1);
    assert_eq!(mix.components[0].weight, 1.0);
    assert!(!mix.truncated);

    let sum = Circuit::new(
        vars,
        vec![
            Node::Leaf { var: 0, dist: g(0.0) },
            Node::Leaf { var: 1, dist: g(1.0) },
            Node::Product { children: vec![0, 1] },
            Node::Leaf { var: 0, dist: g(2.0) },
            Node::Leaf { var: 1, dist: g(3.0) },
            Node::Product { children: vec![3, 4] },
            Node::Sum {
                children: vec![(2, 0.3), (5, 0.7)],
            },
        ],
        6,
        None,
    )
    .unwrap();
    let mix = extract_induced_mixture(&sum);
    let weights: Vec<f64> = mix.components.iter().map(|c| c.weight).collect();
    assert_eq!(weights, vec![0.3, 0.7]);
    assert_eq!(mix.components[1].leaves, vec![(0, g(2.0)), (1, g(3.0))]);
}

#[test]
fn induced_enumeration_respects_cap() {
    // Product of 5 independent 2-way sums: 32 trees.
    let vars: Vec<Variable> = (0..5).map(|i| Variable::continuous(format!("V{i}"))).collect();
    let mut nodes = Vec::new();
    let mut sums = Vec::new();
    for v in 0..5 {
        nodes.push(Node::Leaf {
            var: v,
            dist: LeafDistribution::Gaussian { mean: 0.0, std: 1.0 },
        });
        nodes.push(Node::Leaf {
            var: v,
            dist: LeafDistribution::Gaussian { mean: 1.0, std: 1.0 },
        });
        let n = nodes.len();
        nodes.push(Node::Sum {
            children: vec![(n - 2, 0.5), (n - 1, 0.5)],
        });
        sums.push(nodes.len() - 1);
    }
    nodes.push(Node::Product { children: sums });
    let root = nodes.len() - 1;
    let c = Circuit::new(vars, nodes, root, None).unwrap();
    let full = c.induced_mixture(100);
    assert_eq!(full.components.len(), 32);
    assert!(!full.truncated);
    assert!((full.total_weight() - 1.0).abs() < 1e-12);
    let capped = c.induced_mixture(10);
    assert!(capped.truncated);
    assert!(capped.components.len() <= 10);
}
