//! Plain-text model files.
//!
//! ```text
//! circuit 1
//! var X1 discrete 2
//! var F continuous
//! score F
//! 0 leaf X1 cat 0.5 0.5
//! 1 leaf F gauss 0 1
//! 2 product 0 1
//! root 2
//! ```
//!
//! Node lines are `<id> sum <child>:<weight>...`, `<id> product <child>...`,
//! or `<id> leaf <var> cat <p>...` / `<id> leaf <var> gauss <mean> <std>`.
//! Ids must be listed in order starting at 0.

use std::fmt::Write as _;

use super::{Circuit, LeafDistribution, Node, VarKind, Variable};
use crate::error::CircuitError;

pub const FORMAT_VERSION: u32 = 1;

impl Circuit {
    pub fn to_text(&self) -> String {
        let mut out = format!("circuit {FORMAT_VERSION}\n");
        for v in &self.vars {
            match v.kind {
                VarKind::Discrete { cardinality } => {
                    let _ = writeln!(out, "var {} discrete {cardinality}", v.name);
                }
                VarKind::Continuous => {
                    let _ = writeln!(out, "var {} continuous", v.name);
                }
            }
        }
        if let Some(s) = self.score {
            let _ = writeln!(out, "score {}", self.vars[s].name);
        }
        for (id, node) in self.nodes.iter().enumerate() {
            let _ = write!(out, "{id} ");
            match node {
                Node::Sum { children } => {
                    out.push_str("sum");
                    for (c, w) in children {
                        let _ = write!(out, " {c}:{w:?}");
                    }
                }
                Node::Product { children } => {
                    out.push_str("product");
                    for c in children {
                        let _ = write!(out, " {c}");
                    }
                }
                Node::Leaf { var, dist } => {
                    let _ = write!(out, "leaf {}", self.vars[*var].name);
                    match dist {
                        LeafDistribution::Categorical { probs } => {
                            out.push_str(" cat");
                            for p in probs {
                                let _ = write!(out, " {p:?}");
                            }
                        }
                        LeafDistribution::Gaussian { mean, std } => {
                            let _ = write!(out, " gauss {mean:?} {std:?}");
                        }
                    }
                }
            }
            out.push('\n');
        }
        let _ = writeln!(out, "root {}", self.root);
        out
    }

    pub fn from_text(text: &str) -> Result<Circuit, CircuitError> {
        let mut vars: Vec<Variable> = Vec::new();
        let mut nodes: Vec<Node> = Vec::new();
        let mut root = None;
        let mut score: Option<String> = None;
        let mut seen_header = false;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let err = |message: String| CircuitError::Format { line: line_no, message };
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let f: Vec<&str> = line.split_whitespace().collect();
            if !seen_header {
                if f.len() != 2 || f[0] != "circuit" {
                    return Err(err("expected `circuit <version>` header".into()));
                }
                let version: u32 = f[1].parse().map_err(|_| err(format!("bad version `{}`", f[1])))?;
                if version != FORMAT_VERSION {
                    return Err(err(format!("unsupported format version {version}")));
                }
                seen_header = true;
                continue;
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
            let idx = |s: &str| s.parse::<usize>().map_err(|_| err(format!("bad index `{s}`")));
            match f[0] {
                "var" => {
                    let kind = match (f.get(2), f.get(3)) {
                        (Some(&"continuous"), None) => VarKind::Continuous,
                        (Some(&"discrete"), Some(k)) => VarKind::Discrete { cardinality: idx(k)? },
                        _ => return Err(err("expected `var <name> continuous|discrete <k>`".into())),
                    };
                    let name = f.get(1).ok_or_else(|| err("missing variable name".into()))?;
                    vars.push(Variable {
                        name: name.to_string(),
                        kind,
                    });
                }
                "score" => score = Some(f.get(1).ok_or_else(|| err("missing score name".into()))?.to_string()),
                "root" => root = Some(idx(f.get(1).ok_or_else(|| err("missing root id".into()))?)?),
                _ => {
                    let id = idx(f[0])?;
                    if id != nodes.len() {
                        return Err(err(format!("expected node id {}, got {id}", nodes.len())));
                    }
                    let node = match f.get(1) {
                        Some(&"sum") => {
                            let children = f[2..]
                                .iter()
                                .map(|s| {
                                    let (c, w) = s.split_once(':').ok_or_else(|| err(format!("bad edge `{s}`")))?;
                                    Ok((idx(c)?, num(w)?))
                                })
                                .collect::<Result<_, CircuitError>>()?;
                            Node::Sum { children }
                        }
                        Some(&"product") => Node::Product {
                            children: f[2..].iter().map(|s| idx(s)).collect::<Result<_, _>>()?,
                        },
                        Some(&"leaf") => {
                            let name = f.get(2).ok_or_else(|| err("missing leaf variable".into()))?;
                            let var = vars
                                .iter()
                                .position(|v| v.name == *name)
                                .ok_or_else(|| err(format!("unknown variable `{name}`")))?;
                            let dist = match f.get(3) {
                                Some(&"cat") => LeafDistribution::Categorical {
                                    probs: f[4..].iter().map(|s| num(s)).collect::<Result<_, _>>()?,
                                },
                                Some(&"gauss") if f.len() == 6 => LeafDistribution::Gaussian {
                                    mean: num(f[4])?,
                                    std: num(f[5])?,
                                },
                                _ => return Err(err("expected `cat <p>...` or `gauss <mean> <std>`".into())),
                            };
                            Node::Leaf { var, dist }
                        }
                        _ => return Err(err(format!("unknown record `{line}`"))),
                    };
                    nodes.push(node);
                }
            }
        }
        let root = root.ok_or(CircuitError::Format {
            line: text.lines().count(),
            message: "missing `root` line".into(),
        })?;
        Circuit::new(vars, nodes, root, score.as_deref())
    }
}
