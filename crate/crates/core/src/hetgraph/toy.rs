//! The eight-node academic toy graph.
//!
//! Authors A, B, C; papers p0 (A, B at KDD), p1 (A, C at ACL), p2 (C at
//! ACL); venues KDD and ACL. A and B work on data mining (class 0), C on
//! NLP (class 1).

use crate::numcore::Tensor;

use super::graph::HeteroGraph;
use super::schema::{NodeTypeEntry, RelationEntry, Schema, SchemaFile};

pub fn toy_schema() -> Schema {
    Schema::from_file(&SchemaFile {
        node_types: ["author", "paper", "venue"]
            .iter()
            .map(|s| NodeTypeEntry::Name(s.to_string()))
            .collect(),
        relations: vec![
            RelationEntry {
                name: "write".into(),
                src: "author".into(),
                dst: "paper".into(),
                inverse: Some("written_by".into()),
                abbrev: None,
            },
            RelationEntry {
                name: "published_in".into(),
                src: "paper".into(),
                dst: "venue".into(),
                inverse: Some("publishes".into()),
                abbrev: None,
            },
        ],
        target_type: "author".into(),
        num_classes: 2,
    })
    .expect("toy schema")
}

pub fn academic_toy() -> HeteroGraph {
    let schema = toy_schema();
    let authors = Tensor::from_rows(&[vec![0.9, 0.1], vec![0.8, 0.3], vec![0.2, 0.7]]).unwrap();
    let papers =
        Tensor::from_rows(&[vec![1.0, 0.0, 0.5], vec![0.0, 1.0, 0.25], vec![0.0, 1.0, 0.75]])
            .unwrap();
    let venues = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
    let write = vec![(0, 0), (1, 0), (0, 1), (2, 1), (2, 2)];
    let published = vec![(0, 0), (1, 1), (2, 1)];
    let inv = |e: &[(usize, usize)]| e.iter().map(|&(a, b)| (b, a)).collect::<Vec<_>>();
    let edges = vec![write.clone(), inv(&write), published.clone(), inv(&published)];
    HeteroGraph::new(
        schema,
        vec![authors, papers, venues],
        edges,
        vec![Some(0), Some(0), Some(1)],
    )
    .expect("toy graph")
}
