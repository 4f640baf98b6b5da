//! Command-line front end: `stats`, `split`, `train`, `eval`, `explain`, `synth`.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::encoders::LABEL_NAME;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hetgraph::{load_graph, HeteroGraph};
use crate::interpret::trim_to_dag;
use crate::scm::HgScm;
use crate::splits::{self, BiasKind, BiasOptions, SplitSpec};
use crate::synth::{self, Regime, SynthSpec};
use crate::train::{self, history_csv, Evaluation, Prepared, TrainConfig};

pub use config::{load_config, parse_config, parse_seeds, TrainFlags};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const HISTORY_FILE: &str = "history.csv";
pub const METRICS_FILE: &str = "metrics.json";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const DOT_FILE: &str = "diagram.dot";
pub const DIAGRAM_JSON_FILE: &str = "diagram.json";

/// Exit status for a failed command: 3 for numeric failures, 2 otherwise.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Numeric(_) => 3,
        _ => 2,
    }
}

#[derive(Debug, Parser)]
#[command(name = "hgscm", version, about = "Causal node classification on heterogeneous graphs")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print node, edge and class counts of a dataset.
    Stats {
        dataset: PathBuf,
        /// Print JSON instead of a table.
        #[arg(long)]
        json: bool,
    },
    /// Build an i.i.d. or biased split and its feature report.
    Split {
        dataset: PathBuf,
        /// iid, homophily, degree or feature.
        #[arg(long, default_value = "iid")]
        kind: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "splits.json")]
        out: PathBuf,
        /// Report CSV path; defaults to `<out stem>-report.csv`.
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long, default_value_t = 2)]
        max_metapath_len: usize,
        #[arg(long, default_value_t = 128)]
        components: usize,
        #[arg(long)]
        raw_degree: bool,
        #[arg(long)]
        sequential: bool,
    },
    /// Train a model and write checkpoint, history, metrics and manifest.
    Train {
        /// Dataset directory (taken from the manifest when omitted).
        dataset: Option<PathBuf>,
        #[arg(long)]
        splits: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// `key = value` config file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Rerun from a manifest; flags still override it.
        #[arg(long, conflicts_with = "config")]
        manifest: Option<PathBuf>,
        /// A seed or an inclusive range such as `0..4` (one run directory each).
        #[arg(long)]
        seed: Option<String>,
        #[command(flatten)]
        flags: TrainFlags,
    },
    /// Score a checkpoint on one part of a split.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        dataset: PathBuf,
        #[arg(long)]
        splits: PathBuf,
        /// train, val or test.
        #[arg(long, default_value = "test")]
        part: String,
        /// Defaults to the `manifest.json` next to the checkpoint.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        max_metapath_len: Option<usize>,
    },
    /// Trim the learned DAG and write `.dot` and JSON diagrams.
    Explain {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Output directory; defaults to the checkpoint's directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value = LABEL_NAME)]
        target: String,
    },
    /// Generate a synthetic dataset with planted causes.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        authors: Option<usize>,
        #[arg(long)]
        classes: Option<usize>,
        /// APV or APT.
        #[arg(long)]
        causal: Option<String>,
        /// Co-author agreement rate in the train regime.
        #[arg(long)]
        spurious: Option<f64>,
        #[arg(long)]
        test_agreement: Option<f64>,
        #[arg(long)]
        noise: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub nodes: usize,
    pub node_types: usize,
    pub edges: usize,
    pub edge_types: usize,
    pub target: String,
    pub classes: usize,
    pub nodes_per_type: Vec<(String, usize)>,
    pub edges_per_type: Vec<(String, usize)>,
}

pub fn dataset_stats(graph: &HeteroGraph) -> DatasetStats {
    let schema = graph.schema();
    DatasetStats {
        nodes: graph.num_nodes(),
        node_types: schema.node_types().len(),
        edges: graph.num_edges(),
        edge_types: schema.relations().len(),
        target: schema.node_types()[graph.target_type()].name.clone(),
        classes: graph.num_classes(),
        nodes_per_type: schema
            .node_types()
            .iter()
            .enumerate()
            .map(|(t, nt)| (nt.name.clone(), graph.count(t)))
            .collect(),
        edges_per_type: schema
            .relations()
            .iter()
            .enumerate()
            .map(|(r, rel)| (rel.name.clone(), graph.adjacency(r).num_edges()))
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub part: String,
    pub nodes: usize,
    pub macro_f1: f64,
    pub micro_f1: f64,
    pub accuracy: f64,
    pub l_inv: f64,
    pub per_class: Vec<train::ClassScores>,
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    fn new(part: &str, ev: &Evaluation) -> Self {
        MetricsReport {
            part: part.to_string(),
            nodes: ev.predictions.len(),
            macro_f1: ev.metrics.macro_f1,
            micro_f1: ev.metrics.micro_f1,
            accuracy: ev.metrics.accuracy,
            l_inv: ev.l_inv,
            per_class: ev.metrics.per_class.clone(),
            confusion: ev.metrics.confusion.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainMetrics {
    pub best_epoch: usize,
    pub epochs_run: usize,
    pub val: MetricsReport,
    pub test: MetricsReport,
}

/// Artifact file names, relative to the run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Artifacts {
    pub checkpoint: String,
    pub history: String,
    pub metrics: String,
    pub diagram_dot: String,
    pub diagram_json: String,
}

impl Default for Artifacts {
    fn default() -> Self {
        Artifacts {
            checkpoint: CHECKPOINT_FILE.into(),
            history: HISTORY_FILE.into(),
            metrics: METRICS_FILE.into(),
            diagram_dot: DOT_FILE.into(),
            diagram_json: DIAGRAM_JSON_FILE.into(),
        }
    }
}

/// Everything needed to repeat a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub dataset: PathBuf,
    pub splits: PathBuf,
    pub split_provenance: String,
    pub seed: u64,
    pub config: TrainConfig,
    pub artifacts: Artifacts,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self> {
        serde_json::from_str(&read(path)?).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn exec_for(sequential: bool) -> Exec {
    if sequential {
        Exec::Sequential
    } else {
        Exec::Parallel
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Stats { dataset, json } => cmd_stats(&dataset, json),
        Command::Split {
            dataset,
            kind,
            seed,
            out,
            report,
            max_metapath_len,
            components,
            raw_degree,
            sequential,
        } => {
            let opts = BiasOptions {
                max_metapath_len,
                n_components: components,
                raw_degree,
            };
            cmd_split(&dataset, &kind, seed, &out, report.as_deref(), &opts, exec_for(sequential))
        }
        Command::Train {
            dataset,
            splits,
            out,
            config,
            manifest,
            seed,
            flags,
        } => cmd_train(TrainArgs {
            dataset,
            splits,
            out,
            config,
            manifest,
            seed,
            flags,
        }),
        Command::Eval {
            checkpoint,
            dataset,
            splits,
            part,
            manifest,
            out,
            max_metapath_len,
        } => cmd_eval(&checkpoint, &dataset, &splits, &part, manifest.as_deref(), out.as_deref(), max_metapath_len),
        Command::Explain { checkpoint, out, target } => cmd_explain(&checkpoint, out.as_deref(), &target),
        Command::Synth {
            out,
            authors,
            classes,
            causal,
            spurious,
            test_agreement,
            noise,
            seed,
        } => {
            let mut spec = SynthSpec::default();
            if let Some(v) = authors {
                spec.authors = v;
            }
            if let Some(v) = classes {
                spec.num_classes = v;
            }
            if let Some(v) = causal {
                spec.causal = v;
            }
            if let Some(v) = spurious {
                spec.spurious_strength = v;
            }
            if test_agreement.is_some() {
                spec.test_agreement = test_agreement;
            }
            if let Some(v) = noise {
                spec.noise = v;
            }
            if let Some(v) = seed {
                spec.seed = v;
            }
            cmd_synth(&spec, &out)
        }
    }
}

pub fn cmd_stats(dataset: &Path, json: bool) -> Result<()> {
    let s = dataset_stats(&load_graph(dataset)?);
    if json {
        print!("{}", to_json(&s)?);
        return Ok(());
    }
    println!("{:<12}{}", "nodes", s.nodes);
    println!("{:<12}{}", "node types", s.node_types);
    println!("{:<12}{}", "edges", s.edges);
    println!("{:<12}{}", "edge types", s.edge_types);
    println!("{:<12}{}", "target", s.target);
    println!("{:<12}{}", "classes", s.classes);
    for (name, n) in &s.nodes_per_type {
        println!("  node {name:<16}{n}");
    }
    for (name, n) in &s.edges_per_type {
        println!("  edge {name:<16}{n}");
    }
    Ok(())
}

pub fn cmd_split(
    dataset: &Path,
    kind: &str,
    seed: u64,
    out: &Path,
    report: Option<&Path>,
    opts: &BiasOptions,
    exec: Exec,
) -> Result<()> {
    let graph = load_graph(dataset)?;
    let (spec, table) = if kind == "iid" {
        let spec = splits::iid_split(&graph.labeled_nodes(), seed)?;
        let table = splits::bias_features(&graph, BiasKind::Homophily, opts)?;
        (spec, table)
    } else {
        let kind: BiasKind = kind.parse()?;
        let table = splits::bias_features(&graph, kind, opts)?;
        (splits::ood_split_with(&table, kind, seed, exec)?, table)
    };
    spec.save(out)?;
    let report_path = report.map(Path::to_path_buf).unwrap_or_else(|| {
        let stem = out.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        out.with_file_name(format!("{stem}-report.csv"))
    });
    write(&report_path, &splits::report_csv(&splits::split_report(&table, &spec)?))?;
    println!(
        "{}: train {} / val {} / test {} -> {}",
        spec.provenance,
        spec.train.len(),
        spec.val.len(),
        spec.test.len(),
        out.display()
    );
    Ok(())
}

pub struct TrainArgs {
    pub dataset: Option<PathBuf>,
    pub splits: Option<PathBuf>,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub manifest: Option<PathBuf>,
    pub seed: Option<String>,
    pub flags: TrainFlags,
}

pub fn cmd_train(args: TrainArgs) -> Result<()> {
    let base = args.manifest.as_deref().map(RunManifest::load).transpose()?;
    let dataset = args
        .dataset
        .or_else(|| base.as_ref().map(|m| m.dataset.clone()))
        .ok_or_else(|| Error::Config("a dataset directory or --manifest is required".into()))?;
    let splits_path = args
        .splits
        .or_else(|| base.as_ref().map(|m| m.splits.clone()))
        .ok_or_else(|| Error::Config("--splits or --manifest is required".into()))?;
    let mut cfg = match (&base, &args.config) {
        (Some(m), _) => m.config.clone(),
        (None, Some(path)) => load_config(path)?,
        (None, None) => TrainConfig::default(),
    };
    args.flags.apply(&mut cfg)?;
    let seeds = match &args.seed {
        Some(s) => parse_seeds(s)?,
        None => vec![cfg.seed],
    };
    cfg.validate()?;

    let graph = load_graph(&dataset)?;
    let spec = SplitSpec::load(&splits_path)?;
    spec.validate(&graph)?;
    for &seed in &seeds {
        let dir = if seeds.len() > 1 {
            args.out.join(format!("seed-{seed}"))
        } else {
            args.out.clone()
        };
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        train_one(&graph, &spec, &run_cfg, &dataset, &splits_path, &dir)?;
    }
    Ok(())
}

fn train_one(
    graph: &HeteroGraph,
    spec: &SplitSpec,
    cfg: &TrainConfig,
    dataset: &Path,
    splits_path: &Path,
    dir: &Path,
) -> Result<RunManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let outcome = train::train(graph, spec, cfg)?;
    let eval = |nodes: &[usize]| {
        train::evaluate(&outcome.model, graph, &outcome.prepared.cache, nodes, cfg.batch_size, cfg.exec())
    };
    let metrics = TrainMetrics {
        best_epoch: outcome.best_epoch,
        epochs_run: outcome.history.len(),
        val: MetricsReport::new("val", &eval(&spec.val)?),
        test: MetricsReport::new("test", &eval(&spec.test)?),
    };
    let artifacts = Artifacts::default();
    outcome.model.save(&dir.join(&artifacts.checkpoint))?;
    write(&dir.join(&artifacts.history), &history_csv(&outcome.history))?;
    write(&dir.join(&artifacts.metrics), &to_json(&metrics)?)?;
    write_diagram(&outcome.model, dir, &artifacts)?;
    let manifest = RunManifest {
        tool_version: env!("CARGO_PKG_VERSION").into(),
        dataset: dataset.to_path_buf(),
        splits: splits_path.to_path_buf(),
        split_provenance: spec.provenance.clone(),
        seed: cfg.seed,
        config: cfg.clone(),
        artifacts,
    };
    write(&dir.join(MANIFEST_FILE), &to_json(&manifest)?)?;
    println!(
        "seed {}: best epoch {} of {}, test macro F1 {:.4}, accuracy {:.4} -> {}",
        cfg.seed,
        metrics.best_epoch,
        metrics.epochs_run,
        metrics.test.macro_f1,
        metrics.test.accuracy,
        dir.display()
    );
    Ok(manifest)
}

fn write_diagram(model: &HgScm, dir: &Path, artifacts: &Artifacts) -> Result<crate::interpret::CausalDiagram> {
    let diagram = trim_to_dag(model.dag(), model.variable_names())?;
    write(&dir.join(&artifacts.diagram_dot), &diagram.to_dot())?;
    write(&dir.join(&artifacts.diagram_json), &diagram.to_json()?)?;
    Ok(diagram)
}

/// Checks that a checkpoint's variables and input widths fit a dataset.
pub fn check_compatible(model: &HgScm, graph: &HeteroGraph, prepared: &Prepared) -> Result<()> {
    let expected = prepared.variable_names();
    let mc = &model.config;
    if mc.variable_names != expected {
        return Err(Error::Config(format!(
            "checkpoint variables {:?} do not match dataset variables {:?}",
            mc.variable_names, expected
        )));
    }
    let ego = graph.feature_dim(graph.target_type());
    if mc.ego_dim != ego || mc.pooled_dims != prepared.cache.dims() || mc.num_classes != graph.num_classes() {
        return Err(Error::Config(format!(
            "checkpoint expects ego dim {}, pooled dims {:?}, {} classes; dataset has {}, {:?}, {}",
            mc.ego_dim,
            mc.pooled_dims,
            mc.num_classes,
            ego,
            prepared.cache.dims(),
            graph.num_classes()
        )));
    }
    Ok(())
}

pub fn cmd_eval(
    checkpoint: &Path,
    dataset: &Path,
    splits_path: &Path,
    part: &str,
    manifest: Option<&Path>,
    out: Option<&Path>,
    max_metapath_len: Option<usize>,
) -> Result<()> {
    let model = HgScm::load(checkpoint)?;
    let sibling = checkpoint.with_file_name(MANIFEST_FILE);
    let manifest = match manifest {
        Some(p) => Some(RunManifest::load(p)?),
        None if sibling.exists() => Some(RunManifest::load(&sibling)?),
        None => None,
    };
    let mut cfg = manifest.map(|m| m.config).unwrap_or_default();
    if let Some(l) = max_metapath_len {
        cfg.max_metapath_len = l;
    }
    let graph = load_graph(dataset)?;
    let spec = SplitSpec::load(splits_path)?;
    spec.validate(&graph)?;
    let nodes = match part {
        "train" => &spec.train,
        "val" => &spec.val,
        "test" => &spec.test,
        other => return Err(Error::Config(format!("unknown split part {other:?} (train, val, test)"))),
    };
    let prepared = Prepared::new(&graph, &cfg)?;
    check_compatible(&model, &graph, &prepared)?;
    let ev = train::evaluate(&model, &graph, &prepared.cache, nodes, cfg.batch_size, cfg.exec())?;
    let text = to_json(&MetricsReport::new(part, &ev))?;
    match out {
        Some(p) => write(p, &text)?,
        None => print!("{text}"),
    }
    Ok(())
}

pub fn cmd_explain(checkpoint: &Path, out: Option<&Path>, target: &str) -> Result<()> {
    let model = HgScm::load(checkpoint)?;
    let dir = match out {
        Some(d) => d.to_path_buf(),
        None => checkpoint.parent().map(Path::to_path_buf).unwrap_or_default(),
    };
    let diagram = write_diagram(&model, &dir, &Artifacts::default())?;
    // reload to confirm the emitted file is a valid acyclic diagram
    crate::interpret::CausalDiagram::from_json(&read(&dir.join(DIAGRAM_JSON_FILE))?)?;
    println!(
        "{} edges kept, {} removed -> {}",
        diagram.edges.len(),
        diagram.removed.len(),
        dir.join(DOT_FILE).display()
    );
    for (name, w) in diagram.edge_rank_into(target)? {
        println!("  {name} -> {target}  {w:.3}");
    }
    Ok(())
}

pub fn cmd_synth(spec: &SynthSpec, out: &Path) -> Result<()> {
    let (graph, truth) = synth::generate(spec)?;
    let split = synth::write_dataset(&graph, &truth, out)?;
    println!(
        "{} nodes, {} edges; regime split train {} / val {} / test {} -> {}",
        graph.num_nodes(),
        graph.num_edges(),
        split.train.len(),
        split.val.len(),
        split.test.len(),
        out.display()
    );
    println!(
        "co-author label agreement: train regime {:.3}, test regime {:.3}",
        synth::coauthor_agreement(&truth, Regime::Train),
        synth::coauthor_agreement(&truth, Regime::Test)
    );
    Ok(())
}
