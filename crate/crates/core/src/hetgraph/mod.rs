//! Heterogeneous graph storage, meta-path enumeration and meta-path
//! neighbor pooling.

mod graph;
pub mod io;
mod metapath;
mod schema;
pub mod toy;

pub use graph::{Adjacency, HeteroGraph};
pub use io::{load_graph, write_graph};
pub use metapath::{
    enumerate_metapaths, neighbor_multiset, neighbor_set, pooled_neighbor_features, pooled_with,
    MetaPath, NeighborOptions, PooledCache,
};
pub use schema::{NodeType, NodeTypeEntry, Relation, RelationEntry, Schema, SchemaFile};
