//! Train/validation/test splits over labeled target nodes: seeded i.i.d
//! ratios and biased splits that hold out one K-means cluster.

mod bias;
pub mod kmeans;
pub mod pca;

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hetgraph::HeteroGraph;
use crate::rng;

pub use bias::{degree_features, feature_pca_features, homophily_features, BiasFeatureTable, BiasKind};
pub use kmeans::{kmeans, kmeans2, standardize, KMeans};
pub use pca::{symmetric_eigen, Pca};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    #[serde(default = "unknown_provenance")]
    pub provenance: String,
    #[serde(default)]
    pub seed: u64,
}

fn unknown_provenance() -> String {
    "external".into()
}

impl SplitSpec {
    /// Builds a spec after checking that the three parts are nonempty and
    /// pairwise disjoint.
    pub fn new(train: Vec<usize>, val: Vec<usize>, test: Vec<usize>, provenance: &str, seed: u64) -> Result<Self> {
        let spec = SplitSpec {
            train,
            val,
            test,
            provenance: provenance.to_string(),
            seed,
        };
        spec.check_partition()?;
        Ok(spec)
    }

    fn check_partition(&self) -> Result<()> {
        for (name, part) in self.parts() {
            if part.is_empty() {
                return Err(Error::Config(format!("{name} split is empty")));
            }
        }
        let mut seen = HashSet::new();
        for (name, part) in self.parts() {
            for &i in part {
                if !seen.insert(i) {
                    return Err(Error::Config(format!("node {i} appears twice (again in {name})")));
                }
            }
        }
        Ok(())
    }

    pub fn parts(&self) -> [(&'static str, &[usize]); 3] {
        [("train", &self.train), ("val", &self.val), ("test", &self.test)]
    }

    /// Full validation against a graph: every index is a labeled target node.
    pub fn validate(&self, graph: &HeteroGraph) -> Result<()> {
        self.check_partition()?;
        for (name, part) in self.parts() {
            for &i in part {
                if i >= graph.num_targets() {
                    return Err(Error::Config(format!(
                        "{name} index {i} outside [0, {})",
                        graph.num_targets()
                    )));
                }
                if graph.label(i).is_none() {
                    return Err(Error::Config(format!("{name} node {i} is unlabeled")));
                }
            }
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let spec: SplitSpec =
            serde_json::from_str(&text).map_err(|e| Error::load(path.display().to_string(), None, e.to_string()))?;
        spec.check_partition()?;
        Ok(spec)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }
}

/// Part sizes by floor of each ratio with the remainder going to the last
/// part; an empty part then takes one element from the largest.
pub fn partition_sizes(n: usize, ratios_pct: &[usize]) -> Vec<usize> {
    let mut sizes: Vec<usize> = ratios_pct[..ratios_pct.len() - 1]
        .iter()
        .map(|&r| n * r / 100)
        .collect();
    let used: usize = sizes.iter().sum();
    sizes.push(n - used);
    for i in 0..sizes.len() {
        if sizes[i] == 0 {
            let largest = (0..sizes.len())
                .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
                .unwrap();
            if sizes[largest] > 1 {
                sizes[largest] -= 1;
                sizes[i] += 1;
            }
        }
    }
    sizes
}

fn cut(items: &[usize], sizes: &[usize]) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut start = 0;
    for &s in sizes {
        out.push(items[start..start + s].to_vec());
        start += s;
    }
    out
}

/// Seeded shuffle then 24/6/70 partition.
pub fn iid_split(labeled: &[usize], seed: u64) -> Result<SplitSpec> {
    if labeled.len() < 10 {
        return Err(Error::Config(format!(
            "an i.i.d split needs at least 10 labeled nodes, got {}",
            labeled.len()
        )));
    }
    let mut order = labeled.to_vec();
    order.shuffle(&mut rng::substream(seed, rng::SPLIT));
    let parts = cut(&order, &partition_sizes(order.len(), &[24, 6, 70]));
    let [train, val, test]: [Vec<usize>; 3] = parts.try_into().unwrap();
    SplitSpec::new(train, val, test, "iid", seed)
}

/// Splits the larger group 6:4 into train/val with a seeded shuffle and
/// uses the other group as test.
pub fn split_larger_group(larger: &[usize], test: Vec<usize>, provenance: &str, seed: u64) -> Result<SplitSpec> {
    let mut order = larger.to_vec();
    order.shuffle(&mut rng::substream(seed, rng::SPLIT));
    let sizes = partition_sizes(order.len(), &[60, 40]);
    let parts = cut(&order, &sizes);
    let [train, val]: [Vec<usize>; 2] = parts.try_into().unwrap();
    SplitSpec::new(train, val, test, provenance, seed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BiasOptions {
    pub max_metapath_len: usize,
    pub n_components: usize,
    pub raw_degree: bool,
}

impl Default for BiasOptions {
    fn default() -> Self {
        BiasOptions {
            max_metapath_len: 2,
            n_components: 128,
            raw_degree: false,
        }
    }
}

pub fn bias_features(graph: &HeteroGraph, kind: BiasKind, opts: &BiasOptions) -> Result<BiasFeatureTable> {
    match kind {
        BiasKind::Homophily => homophily_features(graph, opts.max_metapath_len),
        BiasKind::Degree => degree_features(graph, opts.raw_degree),
        BiasKind::Feature => feature_pca_features(graph, opts.n_components),
    }
}

/// Biased split: cluster the bias table in two; the larger cluster becomes
/// train/val, the smaller one test. Equal sizes keep cluster 0 for training.
pub fn ood_split_with(table: &BiasFeatureTable, kind: BiasKind, seed: u64, exec: Exec) -> Result<SplitSpec> {
    if table.nodes.len() < 10 {
        return Err(Error::Config(format!(
            "an o.o.d split needs at least 10 labeled nodes, got {}",
            table.nodes.len()
        )));
    }
    let km = kmeans2(&table.values, seed, exec)?;
    let sizes = km.cluster_sizes();
    let big = if sizes[1] > sizes[0] { 1 } else { 0 };
    let members = |c: usize| -> Vec<usize> {
        table
            .nodes
            .iter()
            .zip(&km.assignment)
            .filter(|&(_, &a)| a == c)
            .map(|(&n, _)| n)
            .collect()
    };
    split_larger_group(&members(big), members(1 - big), kind.name(), seed)
}

pub fn ood_split(graph: &HeteroGraph, kind: BiasKind, seed: u64, opts: &BiasOptions, exec: Exec) -> Result<SplitSpec> {
    let table = bias_features(graph, kind, opts)?;
    ood_split_with(&table, kind, seed, exec)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub feature: String,
    pub all: f64,
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

/// Mean of every bias feature over all table nodes and over each part.
pub fn split_report(table: &BiasFeatureTable, spec: &SplitSpec) -> Result<Vec<ReportRow>> {
    let rows = table.row_of();
    let lookup = |part: &[usize]| -> Result<Vec<usize>> {
        part.iter()
            .map(|n| {
                rows.get(n)
                    .copied()
                    .ok_or_else(|| Error::Contract(format!("split node {n} missing from the bias table")))
            })
            .collect()
    };
    let all: Vec<usize> = (0..table.nodes.len()).collect();
    let groups = [all, lookup(&spec.train)?, lookup(&spec.val)?, lookup(&spec.test)?];
    let mean = |c: usize, g: &[usize]| g.iter().map(|&r| table.values.get(r, c)).sum::<f64>() / g.len().max(1) as f64;
    Ok(table
        .columns
        .iter()
        .enumerate()
        .map(|(c, name)| ReportRow {
            feature: name.clone(),
            all: mean(c, &groups[0]),
            train: mean(c, &groups[1]),
            val: mean(c, &groups[2]),
            test: mean(c, &groups[3]),
        })
        .collect())
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("feature,all,train,val,test\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{}", r.feature, r.all, r.train, r.val, r.test);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::Tensor;
    use proptest::prelude::*;

    #[test]
    fn iid_sizes() {
        let labeled: Vec<usize> = (0..100).collect();
        let s = iid_split(&labeled, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (24, 6, 70));
        let s = iid_split(&(0..10).collect::<Vec<_>>(), 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (2, 1, 7));
        assert!(iid_split(&(0..9).collect::<Vec<_>>(), 0).is_err());
        assert_eq!(s.provenance, "iid");
    }

    #[test]
    fn partition_rounding() {
        assert_eq!(partition_sizes(10, &[60, 40]), vec![6, 4]);
        assert_eq!(partition_sizes(7, &[60, 40]), vec![4, 3]);
        assert_eq!(partition_sizes(1000, &[24, 6, 70]), vec![240, 60, 700]);
        assert_eq!(partition_sizes(2, &[60, 40]), vec![1, 1]);
    }

    #[test]
    fn spec_rejects_overlap_and_empty() {
        assert!(SplitSpec::new(vec![1], vec![2], vec![1], "x", 0).is_err());
        assert!(SplitSpec::new(vec![1], vec![], vec![3], "x", 0).is_err());
        assert!(SplitSpec::new(vec![1], vec![2], vec![3], "x", 0).is_ok());
    }

    #[test]
    fn validate_against_graph() {
        let g = crate::hetgraph::toy::academic_toy();
        assert!(SplitSpec::new(vec![0], vec![1], vec![2], "x", 0).unwrap().validate(&g).is_ok());
        assert!(SplitSpec::new(vec![0], vec![1], vec![5], "x", 0).unwrap().validate(&g).is_err());
        let partial = g.with_labels(vec![Some(0), None, Some(1)]).unwrap();
        assert!(SplitSpec::new(vec![0], vec![1], vec![2], "x", 0).unwrap().validate(&partial).is_err());
    }

    #[test]
    fn json_round_trip_and_plain_format() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("splits.json");
        let s = iid_split(&(0..20).collect::<Vec<_>>(), 4).unwrap();
        s.save(&p).unwrap();
        assert_eq!(SplitSpec::load(&p).unwrap(), s);
        fs::write(&p, r#"{"train":[0],"val":[1],"test":[2]}"#).unwrap();
        let plain = SplitSpec::load(&p).unwrap();
        assert_eq!(plain.provenance, "external");
        fs::write(&p, r#"{"train":[0],"val":[0],"test":[2]}"#).unwrap();
        assert!(SplitSpec::load(&p).is_err());
    }

    fn two_group_table(n_big: usize, n_small: usize) -> BiasFeatureTable {
        let mut rows = Vec::new();
        for i in 0..n_big {
            rows.push(vec![0.9 + 0.001 * i as f64, 1.0]);
        }
        for i in 0..n_small {
            rows.push(vec![0.1 - 0.001 * i as f64, 3.0]);
        }
        BiasFeatureTable {
            nodes: (100..100 + n_big + n_small).collect(),
            columns: vec!["h".into(), "d".into()],
            values: Tensor::from_rows(&rows).unwrap(),
        }
    }

    #[test]
    fn ood_holds_out_smaller_cluster() {
        let t = two_group_table(10, 5);
        let s = ood_split_with(&t, BiasKind::Homophily, 1, Exec::Sequential).unwrap();
        assert_eq!((s.train.len(), s.val.len()), (6, 4));
        let mut test = s.test.clone();
        test.sort_unstable();
        assert_eq!(test, (110..115).collect::<Vec<_>>());
        assert_eq!(s.provenance, "homophily");
        let again = ood_split_with(&t, BiasKind::Homophily, 1, Exec::Parallel).unwrap();
        assert_eq!(s, again);
    }

    #[test]
    fn report_means() {
        let t = two_group_table(10, 5);
        let s = ood_split_with(&t, BiasKind::Homophily, 2, Exec::Sequential).unwrap();
        let rows = split_report(&t, &s).unwrap();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].train > 0.8 && rows[0].test < 0.2);
        assert_eq!(rows[1].test, 3.0);
        let csv = report_csv(&rows);
        assert_eq!(csv.lines().count(), 3);
        assert!(csv.starts_with("feature,all,train,val,test\n"));

        let same = SplitSpec::new(vec![100, 101], vec![102, 103], vec![104, 105], "x", 0).unwrap();
        let flat = BiasFeatureTable {
            nodes: (100..106).collect(),
            columns: vec!["c".into()],
            values: Tensor::filled(&[6, 1], 0.25),
        };
        let r = &split_report(&flat, &same).unwrap()[0];
        assert!(r.all == r.train && r.train == r.val && r.val == r.test);
    }

    proptest! {
        #[test]
        fn iid_partitions_labeled_set(seed in 0u64..50, n in 10usize..300) {
            let labeled: Vec<usize> = (0..n).map(|i| 3 * i + 1).collect();
            let s = iid_split(&labeled, seed).unwrap();
            let mut all: Vec<usize> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
            all.sort_unstable();
            prop_assert_eq!(all, labeled);
            prop_assert_eq!(s.clone(), iid_split(&(0..n).map(|i| 3 * i + 1).collect::<Vec<_>>(), seed).unwrap());
        }
    }
}
