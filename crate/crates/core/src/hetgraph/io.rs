//! Dataset directory reader and writer.
//!
//! Layout: `schema.json`, `nodes-<type>.tsv` (id then features),
//! `edges-<relation>.tsv` (src, dst), `labels.tsv` (id, class). Missing
//! edge files of inverse relations are rebuilt from their forward twin.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::numcore::Tensor;

use super::graph::HeteroGraph;
use super::schema::{Schema, SchemaFile};

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn data_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_nodes(path: &Path) -> Result<Tensor> {
    let name = file_name(path);
    let text = read(path)?;
    let mut rows: Vec<Option<Vec<f64>>> = Vec::new();
    let mut width: Option<usize> = None;
    for (line, l) in data_lines(&text) {
        let mut fields = l.split('\t');
        let id: usize = fields
            .next()
            .unwrap()
            .trim()
            .parse()
            .map_err(|_| Error::load(&name, Some(line), "node id is not a nonnegative integer"))?;
        let feats = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| Error::load(&name, Some(line), "feature is not a number"))?;
        if let Some(bad) = feats.iter().find(|v| !v.is_finite()) {
            return Err(Error::load(&name, Some(line), format!("non-finite feature {bad}")));
        }
        match width {
            None => width = Some(feats.len()),
            Some(w) if w != feats.len() => {
                return Err(Error::load(
                    &name,
                    Some(line),
                    format!("feature width {} differs from earlier width {w}", feats.len()),
                ))
            }
            _ => {}
        }
        if id >= rows.len() {
            rows.resize(id + 1, None);
        }
        if rows[id].is_some() {
            return Err(Error::load(&name, Some(line), format!("duplicate node id {id}")));
        }
        rows[id] = Some(feats);
    }
    if let Some(missing) = rows.iter().position(Option::is_none) {
        return Err(Error::load(
            &name,
            None,
            format!("node ids are not dense: id {missing} is missing"),
        ));
    }
    let w = width.unwrap_or(0);
    let n = rows.len();
    let data = rows.into_iter().flatten().flatten().collect();
    Tensor::matrix(n, w, data)
}

fn parse_pairs(path: &Path, limits: (usize, usize), what: &str) -> Result<Vec<(usize, usize)>> {
    let name = file_name(path);
    let text = read(path)?;
    let mut out = Vec::new();
    for (line, l) in data_lines(&text) {
        let mut fields = l.split('\t').map(str::trim);
        let (Some(a), Some(b), None) = (fields.next(), fields.next(), fields.next()) else {
            return Err(Error::load(&name, Some(line), "expected two tab-separated fields"));
        };
        let a: usize = a
            .parse()
            .map_err(|_| Error::load(&name, Some(line), "first field is not an index"))?;
        let b: usize = b
            .parse()
            .map_err(|_| Error::load(&name, Some(line), "second field is not an index"))?;
        if a >= limits.0 {
            return Err(Error::load(
                &name,
                Some(line),
                format!("index {a} out of range ({} nodes)", limits.0),
            ));
        }
        if b >= limits.1 {
            return Err(Error::load(
                &name,
                Some(line),
                format!("{what} {b} out of range (limit {})", limits.1),
            ));
        }
        out.push((a, b));
    }
    Ok(out)
}

/// Reads and validates a dataset directory.
pub fn load_graph(dir: &Path) -> Result<HeteroGraph> {
    let schema_path = dir.join("schema.json");
    let raw: SchemaFile = serde_json::from_str(&read(&schema_path)?)
        .map_err(|e| Error::load("schema.json", Some(e.line()), e.to_string()))?;
    let schema = Schema::from_file(&raw)?;

    let mut features = Vec::new();
    for t in schema.node_types() {
        features.push(parse_nodes(&dir.join(format!("nodes-{}.tsv", t.name)))?);
    }
    let counts: Vec<usize> = features.iter().map(Tensor::rows).collect();

    let rels = schema.relations();
    let mut edges: Vec<Option<Vec<(usize, usize)>>> = vec![None; rels.len()];
    for (r, rel) in rels.iter().enumerate() {
        let p = dir.join(format!("edges-{}.tsv", rel.name));
        if p.exists() {
            edges[r] = Some(parse_pairs(&p, (counts[rel.src], counts[rel.dst]), "index")?);
        }
    }
    for r in 0..rels.len() {
        if edges[r].is_none() {
            let inv = rels[r].inverse;
            match &edges[inv] {
                Some(list) if inv != r => {
                    edges[r] = Some(list.iter().map(|&(s, d)| (d, s)).collect());
                }
                _ => {
                    return Err(Error::load(
                        format!("edges-{}.tsv", rels[r].name),
                        None,
                        "missing edge file (and no inverse relation file to rebuild it from)",
                    ))
                }
            }
        }
    }

    let target = schema.target_type();
    let labels_path = dir.join("labels.tsv");
    let mut labels = vec![None; counts[target]];
    for (i, (node, class)) in parse_pairs(&labels_path, (counts[target], schema.num_classes()), "class")?
        .into_iter()
        .enumerate()
    {
        if labels[node].is_some() {
            return Err(Error::load("labels.tsv", None, format!("node {node} labeled twice (entry {})", i + 1)));
        }
        labels[node] = Some(class);
    }

    HeteroGraph::new(schema, features, edges.into_iter().map(Option::unwrap).collect(), labels)
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `graph` in the directory layout `load_graph` reads. Only the
/// forward relation of each inverse pair is written.
pub fn write_graph(graph: &HeteroGraph, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let schema = graph.schema();
    write(
        &dir.join("schema.json"),
        &(serde_json::to_string_pretty(&schema.to_file())? + "\n"),
    )?;
    for (t, nt) in schema.node_types().iter().enumerate() {
        let f = graph.features(t);
        let mut s = String::new();
        for i in 0..f.rows() {
            write!(s, "{i}").unwrap();
            for v in f.row(i) {
                write!(s, "\t{v}").unwrap();
            }
            s.push('\n');
        }
        write(&dir.join(format!("nodes-{}.tsv", nt.name)), &s)?;
    }
    for (r, rel) in schema.relations().iter().enumerate() {
        if !rel.forward {
            continue;
        }
        let mut s = String::new();
        for (a, b) in graph.adjacency(r).edges() {
            writeln!(s, "{a}\t{b}").unwrap();
        }
        write(&dir.join(format!("edges-{}.tsv", rel.name)), &s)?;
    }
    let mut s = String::new();
    for (i, l) in graph.labels().iter().enumerate() {
        if let Some(c) = l {
            writeln!(s, "{i}\t{c}").unwrap();
        }
    }
    write(&dir.join("labels.tsv"), &s)
}
