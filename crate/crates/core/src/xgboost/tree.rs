//! CART structure, routing and the text dump used on the wire and on disk.

use std::fmt::Write as _;

use crate::error::{Error, Result};

/// Feature lookup for one instance. Missing values are `NaN`.
pub trait Features {
    fn value(&self, feature: usize) -> f64;
}

impl Features for [f64] {
    fn value(&self, feature: usize) -> f64 {
        self.get(feature).copied().unwrap_or(f64::NAN)
    }
}

impl Features for Vec<f64> {
    fn value(&self, feature: usize) -> f64 {
        self.as_slice().value(feature)
    }
}

/// Instances with `x[feature] < threshold` go left.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitCandidate {
    pub feature: usize,
    pub threshold: f64,
}

impl SplitCandidate {
    pub fn goes_left(&self, value: f64, default_left: bool) -> bool {
        if value.is_nan() {
            default_left
        } else {
            value < self.threshold
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum CartNode {
    Leaf {
        weight: f64,
    },
    Split {
        split: SplitCandidate,
        left: usize,
        right: usize,
        default_left: bool,
    },
    /// A leaf whose fate is not decided yet; only present while growing.
    Pending,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CartTree {
    pub nodes: Vec<CartNode>,
    pub max_depth: usize,
    pub lambda: f64,
    pub gamma: f64,
}

impl CartTree {
    pub fn new(max_depth: usize, lambda: f64, gamma: f64) -> Self {
        CartTree { nodes: vec![CartNode::Pending], max_depth, lambda, gamma }
    }

    pub fn leaf_only(weight: f64) -> Self {
        CartTree { nodes: vec![CartNode::Leaf { weight }], max_depth: 0, lambda: 1.0, gamma: 0.0 }
    }

    /// Node reached by `x`: the first leaf or pending node on its path.
    pub fn route<F: Features + ?Sized>(&self, x: &F) -> usize {
        let mut id = 0;
        while let CartNode::Split { split, left, right, default_left } = &self.nodes[id] {
            id = if split.goes_left(x.value(split.feature), *default_left) { *left } else { *right };
        }
        id
    }

    /// Leaf weight reached by `x`; pending nodes contribute zero.
    pub fn output<F: Features + ?Sized>(&self, x: &F) -> f64 {
        match self.nodes[self.route(x)] {
            CartNode::Leaf { weight } => weight,
            _ => 0.0,
        }
    }

    /// Turns a pending node into a split with two fresh pending children.
    pub fn split(&mut self, id: usize, split: SplitCandidate) -> (usize, usize) {
        let left = self.nodes.len();
        let right = left + 1;
        self.nodes.push(CartNode::Pending);
        self.nodes.push(CartNode::Pending);
        self.nodes[id] = CartNode::Split { split, left, right, default_left: true };
        (left, right)
    }

    pub fn set_leaf(&mut self, id: usize, weight: f64) {
        self.nodes[id] = CartNode::Leaf { weight };
    }

    pub fn pending(&self) -> Vec<usize> {
        (0..self.nodes.len()).filter(|&i| self.nodes[i] == CartNode::Pending).collect()
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &CartTree, id: usize) -> usize {
            match &t.nodes[id] {
                CartNode::Split { left, right, .. } => 1 + walk(t, *left).max(walk(t, *right)),
                _ => 0,
            }
        }
        walk(self, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, CartNode::Leaf { .. })).count()
    }

    /// One header line, then one line per node in id order. Reals use the
    /// shortest representation that parses back to the same `f64`.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        writeln!(out, "tree max_depth={} lambda={} gamma={}", self.max_depth, self.lambda, self.gamma)
            .unwrap();
        for (id, node) in self.nodes.iter().enumerate() {
            match node {
                CartNode::Leaf { weight } => writeln!(out, "{id} leaf weight={weight}"),
                CartNode::Split { split, left, right, default_left } => writeln!(
                    out,
                    "{id} split feature={} threshold={} left={left} right={right} default={}",
                    split.feature,
                    split.threshold,
                    if *default_left { "left" } else { "right" }
                ),
                CartNode::Pending => writeln!(out, "{id} pending"),
            }
            .unwrap();
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let (_, header) = lines.next().ok_or(Error::Parse { line: 1, msg: "empty tree".into() })?;
        let fields = key_values(header, 1)?;
        let mut tree = CartTree {
            nodes: Vec::new(),
            max_depth: field(&fields, "max_depth", 1)?,
            lambda: field(&fields, "lambda", 1)?,
            gamma: field(&fields, "gamma", 1)?,
        };
        for (i, line) in lines {
            let lineno = i + 1;
            let mut parts = line.split_whitespace();
            let id: usize = parse_num(parts.next().unwrap_or(""), lineno)?;
            if id != tree.nodes.len() {
                return Err(Error::Parse {
                    line: lineno,
                    msg: format!("expected node {}", tree.nodes.len()),
                });
            }
            let kind = parts.next().unwrap_or("");
            let rest = parts.collect::<Vec<_>>().join(" ");
            let kv = key_values(&rest, lineno)?;
            let node = match kind {
                "leaf" => CartNode::Leaf { weight: field(&kv, "weight", lineno)? },
                "pending" => CartNode::Pending,
                "split" => CartNode::Split {
                    split: SplitCandidate {
                        feature: field(&kv, "feature", lineno)?,
                        threshold: field(&kv, "threshold", lineno)?,
                    },
                    left: field(&kv, "left", lineno)?,
                    right: field(&kv, "right", lineno)?,
                    default_left: match kv.iter().find(|(k, _)| *k == "default").map(|(_, v)| *v) {
                        Some("left") | None => true,
                        Some("right") => false,
                        Some(other) => {
                            return Err(Error::Parse { line: lineno, msg: format!("bad default {other}") })
                        }
                    },
                },
                other => {
                    return Err(Error::Parse { line: lineno, msg: format!("unknown node kind {other:?}") })
                }
            };
            tree.nodes.push(node);
        }
        let count = tree.nodes.len();
        for node in &tree.nodes {
            if let CartNode::Split { left, right, .. } = node {
                if *left >= count || *right >= count {
                    return Err(Error::Parse { line: 0, msg: "child index out of range".into() });
                }
            }
        }
        if count == 0 {
            return Err(Error::Parse { line: 1, msg: "tree has no nodes".into() });
        }
        Ok(tree)
    }
}

fn key_values(line: &str, lineno: usize) -> Result<Vec<(&str, &str)>> {
    line.split_whitespace()
        .filter(|tok| *tok != "tree")
        .map(|tok| {
            tok.split_once('=')
                .ok_or_else(|| Error::Parse { line: lineno, msg: format!("expected key=value, got {tok:?}") })
        })
        .collect()
}

fn field<T: std::str::FromStr>(kv: &[(&str, &str)], key: &str, lineno: usize) -> Result<T> {
    let raw = kv
        .iter()
        .find(|(k, _)| *k == key)
        .map(|(_, v)| *v)
        .ok_or_else(|| Error::Parse { line: lineno, msg: format!("missing {key}") })?;
    parse_num(raw, lineno)
}

fn parse_num<T: std::str::FromStr>(raw: &str, lineno: usize) -> Result<T> {
    raw.parse().map_err(|_| Error::Parse { line: lineno, msg: format!("bad number {raw:?}") })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stump() -> CartTree {
        let mut t = CartTree::new(2, 1.0, 0.0);
        let (l, r) = t.split(0, SplitCandidate { feature: 1, threshold: 0.5 });
        t.set_leaf(l, -0.25);
        t.set_leaf(r, 0.1 + 0.2);
        t
    }

    #[test]
    fn routing() {
        let t = stump();
        assert_eq!(t.output(&vec![9.0, 0.0]), -0.25);
        assert_eq!(t.output(&vec![9.0, 0.7]), 0.1 + 0.2);
        // missing goes to the default (left) child
        assert_eq!(t.output(&vec![9.0, f64::NAN]), -0.25);
        assert_eq!(t.output(&vec![9.0]), -0.25);
        assert_eq!(t.depth(), 1);
    }

    #[test]
    fn dump_roundtrip_is_exact() {
        let mut t = stump();
        let (a, _) = t.split(2, SplitCandidate { feature: 0, threshold: 1.0 / 3.0 });
        t.set_leaf(a, f64::MIN_POSITIVE);
        let text = t.dump();
        let back = CartTree::parse(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.dump(), text);
        assert!(text.contains("3 leaf weight="));
        assert!(text.contains("4 pending"));
    }

    #[test]
    fn parse_errors() {
        assert!(CartTree::parse("").is_err());
        assert!(CartTree::parse(
            "tree max_depth=1 lambda=1 gamma=0\n0 split feature=0 threshold=1 left=5 right=6\n"
        )
        .is_err());
        assert!(CartTree::parse("tree max_depth=1 lambda=1 gamma=0\n0 blob\n").is_err());
    }
}
