//! Causal diagrams from a learned DAG matrix: greedy trimming to an acyclic
//! edge set, a `.dot` rendering and a JSON twin.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub src: usize,
    pub dst: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Removal {
    pub step: usize,
    pub src: usize,
    pub dst: usize,
    pub abs_weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CausalDiagram {
    pub names: Vec<String>,
    pub edges: Vec<Edge>,
    pub removed: Vec<Removal>,
}

/// Kahn's algorithm over an explicit edge list.
pub fn is_acyclic(n: usize, edges: &[(usize, usize)]) -> bool {
    let mut indeg = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for &(s, d) in edges {
        out[s].push(d);
        indeg[d] += 1;
    }
    let mut ready: Vec<usize> = (0..n).filter(|&i| indeg[i] == 0).collect();
    let mut seen = 0;
    while let Some(u) = ready.pop() {
        seen += 1;
        for &v in &out[u] {
            indeg[v] -= 1;
            if indeg[v] == 0 {
                ready.push(v);
            }
        }
    }
    seen == n
}

/// Removes nonzero edges in ascending `|weight|` (ties by source, then
/// destination index) and stops as soon as the rest is acyclic.
pub fn trim_to_dag(a: &Tensor, names: &[String]) -> Result<CausalDiagram> {
    let (n, m) = a.dims2();
    if n != m || names.len() != n {
        return Err(Error::Dimension(format!(
            "trim_to_dag: {n}×{m} matrix with {} names",
            names.len()
        )));
    }
    if (0..n).any(|i| a.get(i, i) != 0.0) {
        return Err(Error::Contract("trim_to_dag expects a zero diagonal".into()));
    }
    let mut edges: Vec<Edge> = (0..n)
        .flat_map(|s| (0..n).map(move |d| (s, d)))
        .filter(|&(s, d)| a.get(s, d) != 0.0)
        .map(|(src, dst)| Edge {
            src,
            dst,
            weight: a.get(src, dst),
        })
        .collect();
    edges.sort_by(|x, y| {
        x.weight
            .abs()
            .total_cmp(&y.weight.abs())
            .then(x.src.cmp(&y.src))
            .then(x.dst.cmp(&y.dst))
    });
    let pairs = |es: &[Edge]| es.iter().map(|e| (e.src, e.dst)).collect::<Vec<_>>();
    let mut removed = Vec::new();
    let mut start = 0;
    while !is_acyclic(n, &pairs(&edges[start..])) {
        let e = &edges[start];
        removed.push(Removal {
            step: removed.len() + 1,
            src: e.src,
            dst: e.dst,
            abs_weight: e.weight.abs(),
        });
        start += 1;
    }
    let mut kept = edges.split_off(start);
    kept.sort_by_key(|e| (e.src, e.dst));
    Ok(CausalDiagram {
        names: names.to_vec(),
        edges: kept,
        removed,
    })
}

fn quote(name: &str) -> String {
    if !name.is_empty() && name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
        name.to_string()
    } else {
        format!("\"{}\"", name.replace('"', "\\\""))
    }
}

impl CausalDiagram {
    pub fn is_acyclic(&self) -> bool {
        let pairs: Vec<(usize, usize)> = self.edges.iter().map(|e| (e.src, e.dst)).collect();
        is_acyclic(self.names.len(), &pairs)
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    /// Graphviz text: one node line per variable, one edge line per edge.
    pub fn to_dot(&self) -> String {
        let mut out = String::from("digraph causal {\n");
        for n in &self.names {
            let _ = writeln!(out, "  {};", quote(n));
        }
        for e in &self.edges {
            let _ = writeln!(
                out,
                "  {} -> {} [label={:.3}];",
                quote(&self.names[e.src]),
                quote(&self.names[e.dst]),
                e.weight
            );
        }
        out.push_str("}\n");
        out
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let d: CausalDiagram = serde_json::from_str(text)?;
        if d.edges.iter().any(|e| e.src >= d.names.len() || e.dst >= d.names.len()) {
            return Err(Error::Contract("diagram edge refers to an unknown variable".into()));
        }
        if !d.is_acyclic() {
            return Err(Error::Contract("diagram edges contain a cycle".into()));
        }
        Ok(d)
    }

    /// Causes of `target` by descending `|weight|`, ties by source index.
    pub fn edge_rank_into(&self, target: &str) -> Result<Vec<(String, f64)>> {
        let t = self
            .index_of(target)
            .ok_or_else(|| Error::Contract(format!("unknown variable {target:?}")))?;
        let mut incoming: Vec<&Edge> = self.edges.iter().filter(|e| e.dst == t).collect();
        incoming.sort_by(|x, y| y.weight.abs().total_cmp(&x.weight.abs()).then(x.src.cmp(&y.src)));
        Ok(incoming.into_iter().map(|e| (self.names[e.src].clone(), e.weight)).collect())
    }
}
