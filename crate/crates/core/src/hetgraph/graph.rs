use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::schema::Schema;

/// Compressed adjacency of one relation; neighbor lists are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Adjacency {
    offsets: Vec<usize>,
    targets: Vec<usize>,
}

impl Adjacency {
    pub fn from_edges(num_src: usize, edges: &[(usize, usize)]) -> Self {
        let mut counts = vec![0usize; num_src + 1];
        for &(s, _) in edges {
            counts[s + 1] += 1;
        }
        for i in 0..num_src {
            counts[i + 1] += counts[i];
        }
        let offsets = counts.clone();
        let mut cursor = counts;
        let mut targets = vec![0usize; edges.len()];
        for &(s, d) in edges {
            targets[cursor[s]] = d;
            cursor[s] += 1;
        }
        for s in 0..num_src {
            targets[offsets[s]..offsets[s + 1]].sort_unstable();
        }
        Adjacency { offsets, targets }
    }

    pub fn neighbors(&self, node: usize) -> &[usize] {
        &self.targets[self.offsets[node]..self.offsets[node + 1]]
    }

    pub fn num_edges(&self) -> usize {
        self.targets.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.offsets.len() - 1)
            .flat_map(move |s| self.neighbors(s).iter().map(move |&d| (s, d)))
    }
}

/// Typed nodes with per-type features, typed edges, and target-type labels.
#[derive(Debug, Clone)]
pub struct HeteroGraph {
    schema: Schema,
    counts: Vec<usize>,
    features: Vec<Tensor>,
    adjacency: Vec<Adjacency>,
    labels: Vec<Option<usize>>,
}

impl HeteroGraph {
    /// Validates and assembles a graph. `edges[r]` lists `(src, dst)` pairs
    /// of relation `r`; every relation must be present (including inverses).
    pub fn new(
        schema: Schema,
        features: Vec<Tensor>,
        edges: Vec<Vec<(usize, usize)>>,
        labels: Vec<Option<usize>>,
    ) -> Result<Self> {
        let nt = schema.node_types().len();
        if features.len() != nt {
            return Err(Error::Contract(format!(
                "{} feature matrices for {nt} node types",
                features.len()
            )));
        }
        let counts: Vec<usize> = features.iter().map(Tensor::rows).collect();
        if edges.len() != schema.relations().len() {
            return Err(Error::Contract(format!(
                "{} edge lists for {} relations",
                edges.len(),
                schema.relations().len()
            )));
        }
        for (r, list) in edges.iter().enumerate() {
            let rel = &schema.relations()[r];
            for &(s, d) in list {
                if s >= counts[rel.src] || d >= counts[rel.dst] {
                    return Err(Error::Contract(format!(
                        "edge ({s}, {d}) of relation {:?} out of range ({} × {})",
                        rel.name, counts[rel.src], counts[rel.dst]
                    )));
                }
            }
        }
        let target = schema.target_type();
        if labels.len() != counts[target] {
            return Err(Error::Contract(format!(
                "{} labels for {} target nodes",
                labels.len(),
                counts[target]
            )));
        }
        if let Some(bad) = labels.iter().flatten().find(|&&c| c >= schema.num_classes()) {
            return Err(Error::Contract(format!(
                "label {bad} outside [0, {})",
                schema.num_classes()
            )));
        }
        let adjacency = edges
            .iter()
            .enumerate()
            .map(|(r, list)| Adjacency::from_edges(counts[schema.relations()[r].src], list))
            .collect();
        Ok(HeteroGraph {
            schema,
            counts,
            features,
            adjacency,
            labels,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn count(&self, node_type: usize) -> usize {
        self.counts[node_type]
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    pub fn num_nodes(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn num_edges(&self) -> usize {
        self.adjacency.iter().map(Adjacency::num_edges).sum()
    }

    pub fn features(&self, node_type: usize) -> &Tensor {
        &self.features[node_type]
    }

    pub fn feature_dim(&self, node_type: usize) -> usize {
        self.features[node_type].cols()
    }

    pub fn adjacency(&self, relation: usize) -> &Adjacency {
        &self.adjacency[relation]
    }

    pub fn neighbors(&self, relation: usize, node: usize) -> &[usize] {
        self.adjacency[relation].neighbors(node)
    }

    pub fn target_type(&self) -> usize {
        self.schema.target_type()
    }

    pub fn num_targets(&self) -> usize {
        self.counts[self.schema.target_type()]
    }

    pub fn num_classes(&self) -> usize {
        self.schema.num_classes()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn label(&self, node: usize) -> Option<usize> {
        self.labels[node]
    }

    /// Labeled target nodes in ascending order.
    pub fn labeled_nodes(&self) -> Vec<usize> {
        (0..self.labels.len()).filter(|&i| self.labels[i].is_some()).collect()
    }

    /// Same graph with a different label vector.
    pub fn with_labels(&self, labels: Vec<Option<usize>>) -> Result<Self> {
        let edges = self
            .adjacency
            .iter()
            .map(|a| a.edges().collect())
            .collect();
        HeteroGraph::new(self.schema.clone(), self.features.clone(), edges, labels)
    }

    /// Same graph with one node type's feature matrix replaced.
    pub fn with_features(&self, node_type: usize, features: Tensor) -> Result<Self> {
        let mut all = self.features.clone();
        if features.rows() != self.counts[node_type] {
            return Err(Error::Contract("replacement feature rows differ".into()));
        }
        all[node_type] = features;
        let edges = self.adjacency.iter().map(|a| a.edges().collect()).collect();
        HeteroGraph::new(self.schema.clone(), all, edges, self.labels.clone())
    }
}
