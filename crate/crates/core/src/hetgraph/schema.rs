use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeType {
    pub name: String,
    /// Single-token tag used in relation and meta-path names ("A" for author).
    pub abbrev: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub name: String,
    pub src: usize,
    pub dst: usize,
    pub inverse: usize,
    /// Infix tag for relations that two node-type tags cannot identify.
    pub tag: String,
    /// First of its inverse pair in declaration order.
    pub forward: bool,
}

/// Type-level description of a heterogeneous graph.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Schema {
    node_types: Vec<NodeType>,
    relations: Vec<Relation>,
    target_type: usize,
    num_classes: usize,
    labels: Vec<String>,
}

/// On-disk `schema.json` layout.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SchemaFile {
    pub node_types: Vec<NodeTypeEntry>,
    pub relations: Vec<RelationEntry>,
    pub target_type: String,
    pub num_classes: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
pub enum NodeTypeEntry {
    Name(String),
    Full { name: String, abbrev: String },
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RelationEntry {
    pub name: String,
    pub src: String,
    pub dst: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inverse: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abbrev: Option<String>,
}

fn default_tag(name: &str) -> String {
    name.chars()
        .next()
        .map(|c| c.to_lowercase().collect())
        .unwrap_or_default()
}

impl Schema {
    pub fn from_file(raw: &SchemaFile) -> Result<Self> {
        let bad = |msg: String| Error::load("schema.json", None, msg);

        let mut node_types = Vec::with_capacity(raw.node_types.len());
        for entry in &raw.node_types {
            let (name, abbrev) = match entry {
                NodeTypeEntry::Name(n) => {
                    let a = n.chars().next().map(|c| c.to_uppercase().collect()).unwrap_or_default();
                    (n.clone(), a)
                }
                NodeTypeEntry::Full { name, abbrev } => (name.clone(), abbrev.clone()),
            };
            if name.is_empty() || abbrev.is_empty() {
                return Err(bad("node type names and abbreviations must be nonempty".into()));
            }
            node_types.push(NodeType { name, abbrev });
        }
        for (i, a) in node_types.iter().enumerate() {
            for b in &node_types[i + 1..] {
                if a.name == b.name {
                    return Err(bad(format!("duplicate node type {:?}", a.name)));
                }
                if a.abbrev == b.abbrev {
                    return Err(bad(format!(
                        "node types {:?} and {:?} share abbreviation {:?}; give one an explicit \"abbrev\"",
                        a.name, b.name, a.abbrev
                    )));
                }
            }
        }
        let type_index: HashMap<&str, usize> = node_types
            .iter()
            .enumerate()
            .map(|(i, t)| (t.name.as_str(), i))
            .collect();
        let lookup = |name: &str| {
            type_index
                .get(name)
                .copied()
                .ok_or_else(|| bad(format!("unknown node type {name:?}")))
        };

        // Declared relations in order; each inverse not declared is
        // synthesized right after its forward relation.
        struct Pending {
            name: String,
            src: usize,
            dst: usize,
            inverse_name: String,
            tag: Option<String>,
        }
        let declared: HashMap<&str, &RelationEntry> =
            raw.relations.iter().map(|r| (r.name.as_str(), r)).collect();
        if declared.len() != raw.relations.len() {
            return Err(bad("duplicate relation name".into()));
        }
        let mut pending: Vec<Pending> = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        for r in &raw.relations {
            let src = lookup(&r.src)?;
            let dst = lookup(&r.dst)?;
            let inverse_name = r.inverse.clone().unwrap_or_else(|| format!("rev_{}", r.name));
            if !seen.contains_key(&r.name) {
                seen.insert(r.name.clone(), pending.len());
                pending.push(Pending {
                    name: r.name.clone(),
                    src,
                    dst,
                    inverse_name: inverse_name.clone(),
                    tag: r.abbrev.clone(),
                });
            }
            if let Some(inv) = declared.get(inverse_name.as_str()) {
                let (is, id) = (lookup(&inv.src)?, lookup(&inv.dst)?);
                if is != dst || id != src {
                    return Err(bad(format!(
                        "relation {:?} is declared inverse of {:?} but its endpoints do not swap",
                        inv.name, r.name
                    )));
                }
                if let Some(back) = &inv.inverse {
                    if back != &r.name {
                        return Err(bad(format!(
                            "relations {:?} and {:?} disagree about their inverse",
                            r.name, inv.name
                        )));
                    }
                }
            } else if !seen.contains_key(&inverse_name) {
                seen.insert(inverse_name.clone(), pending.len());
                pending.push(Pending {
                    name: inverse_name.clone(),
                    src: dst,
                    dst: src,
                    inverse_name: r.name.clone(),
                    tag: None,
                });
            }
        }

        let mut relations: Vec<Relation> = pending
            .iter()
            .map(|p| Relation {
                name: p.name.clone(),
                src: p.src,
                dst: p.dst,
                inverse: seen[&p.inverse_name],
                tag: p.tag.clone().unwrap_or_else(|| default_tag(&p.name)),
                forward: false,
            })
            .collect();
        for i in 0..relations.len() {
            let inv = relations[i].inverse;
            relations[i].forward = i <= inv;
        }

        let target_type = lookup(&raw.target_type)?;
        if raw.num_classes < 2 {
            return Err(bad(format!("num_classes must be ≥ 2, got {}", raw.num_classes)));
        }
        let schema = Schema {
            node_types,
            relations,
            target_type,
            num_classes: raw.num_classes,
            labels: Vec::new(),
        };
        let mut schema = schema;
        schema.labels = (0..schema.relations.len()).map(|r| schema.compute_label(r)).collect();
        let mut names: Vec<&String> = schema.labels.iter().collect();
        names.sort();
        names.dedup();
        if names.len() != schema.labels.len() {
            return Err(bad("relation display names collide; set \"abbrev\" on relations".into()));
        }
        Ok(schema)
    }

    pub fn to_file(&self) -> SchemaFile {
        SchemaFile {
            node_types: self
                .node_types
                .iter()
                .map(|t| NodeTypeEntry::Full {
                    name: t.name.clone(),
                    abbrev: t.abbrev.clone(),
                })
                .collect(),
            relations: self
                .relations
                .iter()
                .map(|r| RelationEntry {
                    name: r.name.clone(),
                    src: self.node_types[r.src].name.clone(),
                    dst: self.node_types[r.dst].name.clone(),
                    inverse: Some(self.relations[r.inverse].name.clone()),
                    abbrev: Some(r.tag.clone()),
                })
                .collect(),
            target_type: self.node_types[self.target_type].name.clone(),
            num_classes: self.num_classes,
        }
    }

    fn needs_tag(&self, r: usize) -> bool {
        let rel = &self.relations[r];
        rel.src == rel.dst
            || self
                .relations
                .iter()
                .enumerate()
                .any(|(o, x)| o != r && x.src == rel.src && x.dst == rel.dst)
    }

    fn compute_label(&self, r: usize) -> String {
        let rel = &self.relations[r];
        let mut s = self.node_types[rel.src].abbrev.clone();
        s.push_str(&self.step_label(r));
        s
    }

    /// Suffix a relation appends to a meta-path name ("P" or "cP").
    pub fn step_label(&self, r: usize) -> String {
        let rel = &self.relations[r];
        let dst = &self.node_types[rel.dst].abbrev;
        if self.needs_tag(r) {
            format!("{}{}", rel.tag, dst)
        } else {
            dst.clone()
        }
    }

    /// Display name of a relation, e.g. "AP" or "PcP".
    pub fn relation_label(&self, r: usize) -> &str {
        &self.labels[r]
    }

    pub fn node_types(&self) -> &[NodeType] {
        &self.node_types
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn target_type(&self) -> usize {
        self.target_type
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn type_index(&self, name: &str) -> Option<usize> {
        self.node_types.iter().position(|t| t.name == name)
    }

    pub fn relation_index(&self, name: &str) -> Option<usize> {
        self.relations.iter().position(|r| r.name == name)
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn inverses_synthesized_and_linked() {
        let s = dblp();
        assert_eq!(s.relations().len(), 6);
        for (i, r) in s.relations().iter().enumerate() {
            let inv = &s.relations()[r.inverse];
            assert_eq!(inv.inverse, i);
            assert_eq!((inv.src, inv.dst), (r.dst, r.src));
        }
        let labels: Vec<&str> = (0..6).map(|r| s.relation_label(r)).collect();
        assert_eq!(labels, ["AP", "PA", "PV", "VP", "PT", "TP"]);
    }

    #[test]
    fn self_type_relations_are_tagged() {
        let s = acm();
        let labels: Vec<&str> = (0..s.relations().len()).map(|r| s.relation_label(r)).collect();
        assert_eq!(labels, ["PcP", "PrP", "PA", "AP", "PS", "SP"]);
    }

    #[test]
    fn colliding_abbreviations_rejected() {
        let raw = SchemaFile {
            node_types: vec![NodeTypeEntry::Name("paper".into()), NodeTypeEntry::Name("person".into())],
            relations: vec![],
            target_type: "paper".into(),
            num_classes: 2,
        };
        assert!(Schema::from_file(&raw).is_err());
    }

    #[test]
    fn unknown_type_rejected() {
        let raw = SchemaFile {
            node_types: vec![NodeTypeEntry::Name("a".into())],
            relations: vec![RelationEntry {
                name: "x".into(),
                src: "a".into(),
                dst: "b".into(),
                inverse: None,
                abbrev: None,
            }],
            target_type: "a".into(),
            num_classes: 2,
        };
        assert!(Schema::from_file(&raw).is_err());
    }

    #[test]
    fn file_round_trip() {
        let s = acm();
        let again = Schema::from_file(&s.to_file()).unwrap();
        assert_eq!(s, again);
    }
}
