//! Boosted ensembles and their text dump.

use std::fmt::Write as _;

use super::loss::sigmoid;
use super::tree::{CartTree, Features};
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct BoostModel {
    pub trees: Vec<CartTree>,
    pub learning_rate: f64,
    pub base_score: f64,
}

impl BoostModel {
    pub fn new(learning_rate: f64, base_score: f64) -> Self {
        BoostModel { trees: Vec::new(), learning_rate, base_score }
    }

    /// `base_score + eta * sum_k f_k(x)`.
    pub fn predict<F: Features + ?Sized>(&self, x: &F) -> f64 {
        self.base_score + self.learning_rate * self.trees.iter().map(|t| t.output(x)).sum::<f64>()
    }

    /// Model made of the first `k` trees.
    pub fn truncated(&self, k: usize) -> BoostModel {
        BoostModel {
            trees: self.trees[..k.min(self.trees.len())].to_vec(),
            learning_rate: self.learning_rate,
            base_score: self.base_score,
        }
    }

    pub fn accuracy<F: Features>(&self, rows: &[F], labels: &[f64]) -> f64 {
        accuracy_of(rows.iter().map(|x| self.predict(x)), labels)
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        writeln!(
            out,
            "model trees={} learning_rate={} base_score={}",
            self.trees.len(),
            self.learning_rate,
            self.base_score
        )
        .unwrap();
        for (k, tree) in self.trees.iter().enumerate() {
            writeln!(out, "booster[{k}]").unwrap();
            out.push_str(&tree.dump());
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut sections = text.split("booster[");
        let header = sections.next().unwrap_or("").trim();
        let get = |key: &str| -> Result<&str> {
            header
                .split_whitespace()
                .find_map(|tok| tok.strip_prefix(key).and_then(|r| r.strip_prefix('=')))
                .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing {key}") })
        };
        let bad = |msg: &str| Error::Parse { line: 1, msg: msg.into() };
        let count: usize = get("trees")?.parse().map_err(|_| bad("bad tree count"))?;
        let learning_rate = get("learning_rate")?.parse().map_err(|_| bad("bad learning_rate"))?;
        let base_score = get("base_score")?.parse().map_err(|_| bad("bad base_score"))?;
        let trees = sections
            .map(|s| {
                let body = s.split_once('\n').map_or("", |(_, b)| b);
                CartTree::parse(body)
            })
            .collect::<Result<Vec<_>>>()?;
        if trees.len() != count {
            return Err(bad("tree count mismatch"));
        }
        Ok(BoostModel { trees, learning_rate, base_score })
    }
}

/// Fraction of margins whose sign class matches the 0/1 label.
pub fn accuracy_of(margins: impl IntoIterator<Item = f64>, labels: &[f64]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let hits = margins.into_iter().zip(labels).filter(|(m, &y)| (sigmoid(*m) > 0.5) == (y > 0.5)).count();
    hits as f64 / labels.len() as f64
}

/// One binary model per class; prediction is the arg-max margin.
#[derive(Clone, Debug, PartialEq)]
pub struct OneVsRest {
    pub models: Vec<BoostModel>,
}

impl OneVsRest {
    pub fn predict_class<F: Features + ?Sized>(&self, x: &F) -> usize {
        let mut best = 0;
        let mut best_margin = f64::NEG_INFINITY;
        for (c, m) in self.models.iter().enumerate() {
            let margin = m.predict(x);
            if margin > best_margin {
                best = c;
                best_margin = margin;
            }
        }
        best
    }

    pub fn accuracy<F: Features>(&self, rows: &[F], labels: &[f64]) -> f64 {
        if rows.is_empty() {
            return 0.0;
        }
        let hits = rows.iter().zip(labels).filter(|(x, &y)| self.predict_class(*x) as f64 == y).count();
        hits as f64 / rows.len() as f64
    }

    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (c, m) in self.models.iter().enumerate() {
            writeln!(out, "class {c}").unwrap();
            out.push_str(&m.dump());
        }
        out
    }
}
