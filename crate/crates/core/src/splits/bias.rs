//! Per-node features that o.o.d splits cluster on.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{enumerate_metapaths, neighbor_set, HeteroGraph};
use crate::numcore::Tensor;

use super::pca::Pca;

/// Clustering features for the labeled target nodes, one row per node in
/// `nodes` order.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasFeatureTable {
    pub nodes: Vec<usize>,
    pub columns: Vec<String>,
    pub values: Tensor,
}

impl BiasFeatureTable {
    fn new(nodes: Vec<usize>, columns: Vec<String>, values: Tensor) -> Result<Self> {
        if values.rows() != nodes.len() || values.cols() != columns.len() {
            return Err(Error::Dimension(format!(
                "bias table {:?} for {} nodes × {} columns",
                values.shape(),
                nodes.len(),
                columns.len()
            )));
        }
        if !values.is_finite() {
            return Err(Error::Numeric("bias table has non-finite entries".into()));
        }
        Ok(BiasFeatureTable { nodes, columns, values })
    }

    /// Map from node id to its row in the table.
    pub fn row_of(&self) -> std::collections::HashMap<usize, usize> {
        self.nodes.iter().enumerate().map(|(r, &n)| (n, r)).collect()
    }

    /// Side-by-side concatenation of tables over the same nodes.
    pub fn concat(tables: &[BiasFeatureTable]) -> Result<Self> {
        let first = tables
            .first()
            .ok_or_else(|| Error::Contract("no tables to concatenate".into()))?;
        if tables.iter().any(|t| t.nodes != first.nodes) {
            return Err(Error::Contract("bias tables cover different nodes".into()));
        }
        let columns: Vec<String> = tables.iter().flat_map(|t| t.columns.iter().cloned()).collect();
        let rows: Vec<Vec<f64>> = (0..first.nodes.len())
            .map(|i| tables.iter().flat_map(|t| t.values.row(i).iter().copied()).collect())
            .collect();
        let values = if rows.is_empty() {
            Tensor::zeros(&[0, columns.len()])
        } else {
            Tensor::from_rows(&rows)?
        };
        BiasFeatureTable::new(first.nodes.clone(), columns, values)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BiasKind {
    Homophily,
    Degree,
    Feature,
}

impl BiasKind {
    pub fn name(self) -> &'static str {
        match self {
            BiasKind::Homophily => "homophily",
            BiasKind::Degree => "degree",
            BiasKind::Feature => "feature",
        }
    }
}

impl std::str::FromStr for BiasKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "homophily" => Ok(BiasKind::Homophily),
            "degree" => Ok(BiasKind::Degree),
            "feature" => Ok(BiasKind::Feature),
            other => Err(Error::Config(format!("unknown bias type {other:?}"))),
        }
    }
}

/// Fraction of labeled round-trip meta-path neighbors (self excluded)
/// sharing each labeled node's class; one column per round-trip meta-path.
pub fn homophily_features(graph: &HeteroGraph, max_len: usize) -> Result<BiasFeatureTable> {
    let target = graph.target_type();
    let mps: Vec<_> = enumerate_metapaths(graph.schema(), target, max_len, false)?
        .into_iter()
        .filter(|m| m.is_round_trip())
        .collect();
    if mps.is_empty() {
        return Err(Error::Contract(format!(
            "no round-trip meta-path of length <= {max_len} on the target type"
        )));
    }
    let nodes = graph.labeled_nodes();
    let mut values = Tensor::zeros(&[nodes.len(), mps.len()]);
    for (c, mp) in mps.iter().enumerate() {
        let mut entries: Vec<Option<f64>> = Vec::with_capacity(nodes.len());
        for &v in &nodes {
            let own = graph.label(v).expect("labeled");
            let (mut same, mut total) = (0usize, 0usize);
            for u in neighbor_set(graph, v, mp)? {
                if u == v {
                    continue;
                }
                if let Some(l) = graph.label(u) {
                    total += 1;
                    same += usize::from(l == own);
                }
            }
            entries.push((total > 0).then(|| same as f64 / total as f64));
        }
        let defined: Vec<f64> = entries.iter().flatten().copied().collect();
        let fill = if defined.is_empty() {
            0.0
        } else {
            defined.iter().sum::<f64>() / defined.len() as f64
        };
        for (r, e) in entries.into_iter().enumerate() {
            values.set(r, c, e.unwrap_or(fill));
        }
    }
    let columns = mps.iter().map(|m| m.name().to_string()).collect();
    BiasFeatureTable::new(nodes, columns, values)
}

/// Degree of every labeled node under each relation leaving the target
/// type, as `log(1 + d)` (or raw counts).
pub fn degree_features(graph: &HeteroGraph, raw: bool) -> Result<BiasFeatureTable> {
    let schema = graph.schema();
    let target = graph.target_type();
    let rels: Vec<usize> = (0..schema.relations().len())
        .filter(|&r| schema.relations()[r].src == target)
        .collect();
    let nodes = graph.labeled_nodes();
    let mut values = Tensor::zeros(&[nodes.len(), rels.len()]);
    for (r, &v) in nodes.iter().enumerate() {
        for (c, &rel) in rels.iter().enumerate() {
            let d = graph.neighbors(rel, v).len() as f64;
            values.set(r, c, if raw { d } else { d.ln_1p() });
        }
    }
    let columns = rels.iter().map(|&r| schema.relation_label(r).to_string()).collect();
    BiasFeatureTable::new(nodes, columns, values)
}

/// Scores of the labeled nodes' raw features on their top principal
/// components.
pub fn feature_pca_features(graph: &HeteroGraph, n_components: usize) -> Result<BiasFeatureTable> {
    let nodes = graph.labeled_nodes();
    let x = graph.features(graph.target_type()).select_rows(&nodes);
    let pca = Pca::fit(&x, n_components)?;
    let values = pca.transform(&x)?;
    let columns = (1..=pca.num_components()).map(|i| format!("pc{i}")).collect();
    BiasFeatureTable::new(nodes, columns, values)
}
