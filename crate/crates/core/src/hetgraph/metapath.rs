use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::numcore::Tensor;

use super::graph::HeteroGraph;
use super::schema::Schema;

/// A type-compatible relation sequence starting at the target type.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MetaPath {
    relations: Vec<usize>,
    source: usize,
    terminal: usize,
    name: String,
}

impl MetaPath {
    pub fn new(schema: &Schema, relations: Vec<usize>) -> Result<Self> {
        let first = *relations
            .first()
            .ok_or_else(|| Error::Contract("meta-path needs at least one relation".into()))?;
        let rels = schema.relations();
        if let Some(&bad) = relations.iter().find(|&&r| r >= rels.len()) {
            return Err(Error::Contract(format!("unknown relation index {bad}")));
        }
        for w in relations.windows(2) {
            if rels[w[0]].dst != rels[w[1]].src {
                return Err(Error::Contract(format!(
                    "relations {:?} and {:?} do not compose",
                    rels[w[0]].name, rels[w[1]].name
                )));
            }
        }
        let source = rels[first].src;
        let terminal = rels[*relations.last().unwrap()].dst;
        let mut name = schema.node_types()[source].abbrev.clone();
        for &r in &relations {
            name.push_str(&schema.step_label(r));
        }
        Ok(MetaPath {
            relations,
            source,
            terminal,
            name,
        })
    }

    pub fn relations(&self) -> &[usize] {
        &self.relations
    }

    pub fn source(&self) -> usize {
        self.source
    }

    pub fn terminal(&self) -> usize {
        self.terminal
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn len(&self) -> usize {
        self.relations.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relations.is_empty()
    }

    pub fn is_round_trip(&self) -> bool {
        self.source == self.terminal
    }
}

/// Every composable relation sequence of length `1..=max_len` from
/// `target_type`: shorter paths first, then lexicographic by relation
/// declaration index. With `forward_only`, inverse relations are skipped.
pub fn enumerate_metapaths(
    schema: &Schema,
    target_type: usize,
    max_len: usize,
    forward_only: bool,
) -> Result<Vec<MetaPath>> {
    if target_type >= schema.node_types().len() {
        return Err(Error::Config(format!("unknown target type index {target_type}")));
    }
    if max_len == 0 {
        return Err(Error::Config("max meta-path length must be ≥ 1".into()));
    }
    let usable: Vec<usize> = (0..schema.relations().len())
        .filter(|&r| !forward_only || schema.relations()[r].forward)
        .collect();
    let mut out = Vec::new();
    let mut frontier: Vec<Vec<usize>> = vec![Vec::new()];
    for _ in 0..max_len {
        let mut next = Vec::new();
        for prefix in &frontier {
            let at = prefix
                .last()
                .map_or(target_type, |&r| schema.relations()[r].dst);
            for &r in &usable {
                if schema.relations()[r].src == at {
                    let mut p = prefix.clone();
                    p.push(r);
                    next.push(p);
                }
            }
        }
        for seq in &next {
            out.push(MetaPath::new(schema, seq.clone())?);
        }
        frontier = next;
    }
    Ok(out)
}

/// Neighbor-set construction switches.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborOptions {
    /// Weight each terminal node by its number of paths instead of once.
    pub multiset: bool,
    /// Drop the origin node from round-trip neighbor sets.
    pub exclude_self: bool,
}

fn check_source(graph: &HeteroGraph, node: usize, mp: &MetaPath) -> Result<()> {
    if node >= graph.count(mp.source()) {
        return Err(Error::Contract(format!(
            "node {node} out of range for meta-path {} source type",
            mp.name()
        )));
    }
    Ok(())
}

/// Terminal nodes reachable along `mp`, sorted and deduplicated.
pub fn neighbor_set(graph: &HeteroGraph, node: usize, mp: &MetaPath) -> Result<Vec<usize>> {
    check_source(graph, node, mp)?;
    let mut frontier = vec![node];
    let mut next = Vec::new();
    for &r in mp.relations() {
        next.clear();
        for &n in &frontier {
            next.extend_from_slice(graph.neighbors(r, n));
        }
        next.sort_unstable();
        next.dedup();
        std::mem::swap(&mut frontier, &mut next);
        if frontier.is_empty() {
            break;
        }
    }
    Ok(frontier)
}

/// Terminal nodes with their path multiplicities, sorted by node.
pub fn neighbor_multiset(
    graph: &HeteroGraph,
    node: usize,
    mp: &MetaPath,
) -> Result<Vec<(usize, u64)>> {
    check_source(graph, node, mp)?;
    let mut frontier: BTreeMap<usize, u64> = BTreeMap::from([(node, 1)]);
    for &r in mp.relations() {
        let mut next = BTreeMap::new();
        for (&n, &c) in &frontier {
            for &m in graph.neighbors(r, n) {
                *next.entry(m).or_insert(0) += c;
            }
        }
        frontier = next;
    }
    Ok(frontier.into_iter().collect())
}

fn pooled_row(
    graph: &HeteroGraph,
    node: usize,
    mp: &MetaPath,
    opts: NeighborOptions,
    out: &mut [f64],
) -> Result<()> {
    let feats = graph.features(mp.terminal());
    let drop_self = opts.exclude_self && mp.is_round_trip();
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut weight = 0.0;
    if opts.multiset {
        for (n, c) in neighbor_multiset(graph, node, mp)? {
            if drop_self && n == node {
                continue;
            }
            for (o, f) in out.iter_mut().zip(feats.row(n)) {
                *o += c as f64 * f;
            }
            weight += c as f64;
        }
    } else {
        for n in neighbor_set(graph, node, mp)? {
            if drop_self && n == node {
                continue;
            }
            for (o, f) in out.iter_mut().zip(feats.row(n)) {
                *o += f;
            }
            weight += 1.0;
        }
    }
    if weight > 0.0 {
        out.iter_mut().for_each(|v| *v /= weight);
    }
    Ok(())
}

/// Mean raw feature of each node's meta-path neighbors; empty sets pool to
/// the zero vector.
pub fn pooled_neighbor_features(
    graph: &HeteroGraph,
    nodes: &[usize],
    mp: &MetaPath,
    opts: NeighborOptions,
) -> Result<Tensor> {
    pooled_with(graph, nodes, mp, opts, Exec::Sequential)
}

pub fn pooled_with(
    graph: &HeteroGraph,
    nodes: &[usize],
    mp: &MetaPath,
    opts: NeighborOptions,
    exec: Exec,
) -> Result<Tensor> {
    let d = graph.feature_dim(mp.terminal());
    let rows = exec.map_slice(nodes, |&n| {
        let mut row = vec![0.0; d];
        pooled_row(graph, n, mp, opts, &mut row).map(|_| row)
    });
    let mut data = Vec::with_capacity(nodes.len() * d);
    for r in rows {
        data.extend(r?);
    }
    Tensor::matrix(nodes.len(), d, data)
}

/// Pooled features of every target node for each meta-path, computed once.
#[derive(Debug, Clone)]
pub struct PooledCache {
    names: Vec<String>,
    pooled: Vec<Tensor>,
}

impl PooledCache {
    pub fn build(
        graph: &HeteroGraph,
        metapaths: &[MetaPath],
        opts: NeighborOptions,
        exec: Exec,
    ) -> Result<Self> {
        let all: Vec<usize> = (0..graph.num_targets()).collect();
        let mut pooled = Vec::with_capacity(metapaths.len());
        for mp in metapaths {
            if mp.source() != graph.target_type() {
                return Err(Error::Contract(format!(
                    "meta-path {} does not start at the target type",
                    mp.name()
                )));
            }
            pooled.push(pooled_with(graph, &all, mp, opts, exec)?);
        }
        Ok(PooledCache {
            names: metapaths.iter().map(|m| m.name().to_string()).collect(),
            pooled,
        })
    }

    pub fn len(&self) -> usize {
        self.pooled.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pooled.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn full(&self, j: usize) -> &Tensor {
        &self.pooled[j]
    }

    pub fn dims(&self) -> Vec<usize> {
        self.pooled.iter().map(Tensor::cols).collect()
    }

    /// Rows for `nodes` of every meta-path.
    pub fn gather(&self, nodes: &[usize]) -> Vec<Tensor> {
        self.pooled.iter().map(|p| p.select_rows(nodes)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use super::super::schema::fixtures::{acm, dblp};
    use crate::hetgraph::toy::academic_toy;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeSet;

    fn names(v: &[MetaPath]) -> Vec<&str> {
        v.iter().map(MetaPath::name).collect()
    }

    #[test]
    fn dblp_author_len2() {
        let s = dblp();
        let a = s.type_index("author").unwrap();
        let mps = enumerate_metapaths(&s, a, 2, false).unwrap();
        assert_eq!(names(&mps), ["AP", "APA", "APV", "APT"]);
        let mps = enumerate_metapaths(&s, a, 1, false).unwrap();
        assert_eq!(names(&mps), ["AP"]);
        let fwd = enumerate_metapaths(&s, a, 2, true).unwrap();
        assert_eq!(names(&fwd), ["AP", "APV", "APT"]);
    }

    #[test]
    fn acm_paper_len1() {
        let s = acm();
        let p = s.type_index("paper").unwrap();
        let mps = enumerate_metapaths(&s, p, 1, false).unwrap();
        assert_eq!(names(&mps), ["PcP", "PrP", "PA", "PS"]);
        let two = enumerate_metapaths(&s, p, 2, false).unwrap();
        assert!(names(&two).contains(&"PcPrP"));
    }

    #[test]
    fn enumeration_deterministic_and_type_compatible() {
        let s = acm();
        let a = enumerate_metapaths(&s, 0, 3, false).unwrap();
        let b = enumerate_metapaths(&s, 0, 3, false).unwrap();
        assert_eq!(a, b);
        for mp in &a {
            for w in mp.relations().windows(2) {
                assert_eq!(s.relations()[w[0]].dst, s.relations()[w[1]].src);
            }
            assert_eq!(mp.source(), 0);
        }
    }

    #[test]
    fn zero_max_len_rejected() {
        assert!(enumerate_metapaths(&dblp(), 0, 0, false).is_err());
    }

    #[test]
    fn toy_author_apa_includes_self_and_coauthors() {
        let g = academic_toy();
        let s = g.schema();
        let mps = enumerate_metapaths(s, s.target_type(), 2, false).unwrap();
        let apa = mps.iter().find(|m| m.name() == "APA").unwrap();
        // author 0 (A) coauthors with B (1) and C (2)
        assert_eq!(neighbor_set(&g, 0, apa).unwrap(), vec![0, 1, 2]);
        let ap = &mps[0];
        assert_eq!(neighbor_set(&g, 1, ap).unwrap(), vec![0]);
    }

    #[test]
    fn single_neighbor_passthrough_and_two_point_mean() {
        let g = academic_toy();
        let s = g.schema();
        let mps = enumerate_metapaths(s, s.target_type(), 2, false).unwrap();
        let ap = &mps[0];
        let paper_feats = g.features(ap.terminal());
        // B has one paper (p0)
        let pooled = pooled_neighbor_features(&g, &[1], ap, NeighborOptions::default()).unwrap();
        assert_eq!(pooled.row(0), paper_feats.row(0));
        // A has p0 and p1
        let pooled = pooled_neighbor_features(&g, &[0], ap, NeighborOptions::default()).unwrap();
        for j in 0..paper_feats.cols() {
            let mean = (paper_feats.get(0, j) + paper_feats.get(1, j)) / 2.0;
            assert!((pooled.get(0, j) - mean).abs() < 1e-15);
        }
    }

    #[test]
    fn exclude_self_drops_origin() {
        let g = academic_toy();
        let s = g.schema();
        let mps = enumerate_metapaths(s, s.target_type(), 2, false).unwrap();
        let apa = mps.iter().find(|m| m.name() == "APA").unwrap();
        let opts = NeighborOptions {
            exclude_self: true,
            ..Default::default()
        };
        let with = pooled_neighbor_features(&g, &[1], apa, opts).unwrap();
        // B's only co-author is A
        assert_eq!(with.row(0), g.features(0).row(0));
    }

    // ---- random-graph oracles ----

    fn random_graph(seed: u64, n: [usize; 3], p: f64) -> HeteroGraph {
        use crate::hetgraph::schema::{NodeTypeEntry, RelationEntry, SchemaFile};
        let schema = Schema::from_file(&SchemaFile {
            node_types: ["a", "b", "c"].iter().map(|s| NodeTypeEntry::Name(s.to_string())).collect(),
            relations: vec![
                RelationEntry { name: "ab".into(), src: "a".into(), dst: "b".into(), inverse: Some("ba".into()), abbrev: None },
                RelationEntry { name: "bc".into(), src: "b".into(), dst: "c".into(), inverse: Some("cb".into()), abbrev: None },
                RelationEntry { name: "link".into(), src: "a".into(), dst: "a".into(), inverse: Some("knil".into()), abbrev: None },
            ],
            target_type: "a".into(),
            num_classes: 2,
        })
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let feats: Vec<Tensor> = n
            .iter()
            .map(|&k| Tensor::matrix(k, 3, (0..k * 3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap())
            .collect();
        let mut edges = vec![Vec::new(); schema.relations().len()];
        for (r, rel) in schema.relations().iter().enumerate() {
            if !rel.forward {
                continue;
            }
            for s in 0..n[rel.src] {
                for d in 0..n[rel.dst] {
                    if rng.random_bool(p) {
                        edges[r].push((s, d));
                        edges[rel.inverse].push((d, s));
                    }
                }
            }
        }
        HeteroGraph::new(schema, feats, edges, vec![None; n[0]]).unwrap()
    }

    fn brute_paths(g: &HeteroGraph, node: usize, rels: &[usize], out: &mut BTreeSet<usize>) {
        match rels.split_first() {
            None => {
                out.insert(node);
            }
            Some((&r, rest)) => {
                for &m in g.neighbors(r, node) {
                    brute_paths(g, m, rest, out);
                }
            }
        }
    }

    #[test]
    fn pooled_matches_brute_force_mean() {
        let g = random_graph(7, [20, 12, 8], 0.15);
        let s = g.schema();
        let mps = enumerate_metapaths(s, 0, 3, false).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut worst: f64 = 0.0;
        for _ in 0..50 {
            let node = rng.random_range(0..20);
            let mp = &mps[rng.random_range(0..mps.len())];
            let mut set = BTreeSet::new();
            brute_paths(&g, node, mp.relations(), &mut set);
            let feats = g.features(mp.terminal());
            let got = pooled_neighbor_features(&g, &[node], mp, NeighborOptions::default()).unwrap();
            for j in 0..feats.cols() {
                let expect = if set.is_empty() {
                    0.0
                } else {
                    set.iter().map(|&k| feats.get(k, j)).sum::<f64>() / set.len() as f64
                };
                worst = worst.max((got.get(0, j) - expect).abs());
            }
        }
        assert!(worst < 1e-12, "{worst}");
    }

    #[test]
    fn multiset_counts_paths() {
        let g = academic_toy();
        let s = g.schema();
        let mps = enumerate_metapaths(s, s.target_type(), 2, false).unwrap();
        let apa = mps.iter().find(|m| m.name() == "APA").unwrap();
        // A reaches itself through both of its papers
        let ms = neighbor_multiset(&g, 0, apa).unwrap();
        assert_eq!(ms, vec![(0, 2), (1, 1), (2, 1)]);
    }

    #[test]
    fn isolated_node_has_empty_sets_and_zero_pool() {
        let g = random_graph(1, [5, 4, 3], 0.0);
        let mps = enumerate_metapaths(g.schema(), 0, 2, false).unwrap();
        for mp in &mps {
            assert!(neighbor_set(&g, 2, mp).unwrap().is_empty());
            let p = pooled_neighbor_features(&g, &[2], mp, NeighborOptions::default()).unwrap();
            assert!(p.data().iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn parallel_cache_matches_sequential() {
        let g = random_graph(3, [30, 10, 10], 0.2);
        let mps = enumerate_metapaths(g.schema(), 0, 2, false).unwrap();
        let a = PooledCache::build(&g, &mps, NeighborOptions::default(), Exec::Sequential).unwrap();
        let b = PooledCache::build(&g, &mps, NeighborOptions::default(), Exec::Parallel).unwrap();
        for j in 0..a.len() {
            assert_eq!(a.full(j), b.full(j));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn neighbor_set_equals_dfs(seed in 0u64..10_000, p in 0.05f64..0.4) {
            let g = random_graph(seed, [10, 10, 8], p);
            let mps = enumerate_metapaths(g.schema(), 0, 3, false).unwrap();
            for mp in &mps {
                for node in 0..10 {
                    let mut set = BTreeSet::new();
                    brute_paths(&g, node, mp.relations(), &mut set);
                    let got = neighbor_set(&g, node, mp).unwrap();
                    prop_assert_eq!(got, set.into_iter().collect::<Vec<_>>());
                }
            }
        }

        #[test]
        fn pooling_ignores_edge_order(seed in 0u64..10_000) {
            use rand::seq::SliceRandom;
            let g = random_graph(seed, [10, 8, 6], 0.25);
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xabc);
            let edges: Vec<Vec<(usize, usize)>> = (0..g.schema().relations().len())
                .map(|r| {
                    let mut e: Vec<_> = g.adjacency(r).edges().collect();
                    e.shuffle(&mut rng);
                    e
                })
                .collect();
            let feats = (0..3).map(|t| g.features(t).clone()).collect();
            let h = HeteroGraph::new(g.schema().clone(), feats, edges, g.labels().to_vec()).unwrap();
            let mps = enumerate_metapaths(g.schema(), 0, 2, false).unwrap();
            let all: Vec<usize> = (0..10).collect();
            for mp in &mps {
                let a = pooled_neighbor_features(&g, &all, mp, NeighborOptions::default()).unwrap();
                let b = pooled_neighbor_features(&h, &all, mp, NeighborOptions::default()).unwrap();
                prop_assert_eq!(a.data(), b.data());
            }
        }

        #[test]
        fn isolated_node_addition_changes_nothing(seed in 0u64..10_000) {
            let g = random_graph(seed, [8, 6, 5], 0.3);
            // append an isolated node of every type
            let feats: Vec<Tensor> = (0..3)
                .map(|t| {
                    let f = g.features(t);
                    let mut d = f.data().to_vec();
                    d.extend([9.0, 9.0, 9.0]);
                    Tensor::matrix(f.rows() + 1, 3, d).unwrap()
                })
                .collect();
            let edges = (0..g.schema().relations().len())
                .map(|r| g.adjacency(r).edges().collect())
                .collect();
            let mut labels = g.labels().to_vec();
            labels.push(None);
            let h = HeteroGraph::new(g.schema().clone(), feats, edges, labels).unwrap();
            let mps = enumerate_metapaths(g.schema(), 0, 3, false).unwrap();
            let all: Vec<usize> = (0..8).collect();
            for mp in &mps {
                let a = pooled_neighbor_features(&g, &all, mp, NeighborOptions::default()).unwrap();
                let b = pooled_neighbor_features(&h, &all, mp, NeighborOptions::default()).unwrap();
                prop_assert_eq!(a.data(), b.data());
            }
        }
    }
}
