//! Mini-batch training of the joint objective with early stopping on
//! validation Macro F1, and label-blind evaluation.

mod metrics;

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::one_hot;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::hetgraph::{enumerate_metapaths, HeteroGraph, MetaPath, NeighborOptions, PooledCache};
use crate::losses::{loss_dag, loss_inv, loss_joint, loss_rec, LossWeights, PROB_FLOOR};
use crate::numcore::nn::Bound;
use crate::numcore::{Activation, AdamWConfig, AdamWState, Tape, Tensor, Var};
use crate::rng;
use crate::scm::{zero_diagonal, HgScm, ModelConfig};
use crate::splits::SplitSpec;

pub use metrics::{argmax_rows, ClassScores, Metrics};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    #[default]
    Full,
    NoRec,
    NoDag,
    NoBoth,
}

impl Ablation {
    pub const ALL: [Ablation; 4] = [Ablation::Full, Ablation::NoRec, Ablation::NoDag, Ablation::NoBoth];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Full => "full",
            Ablation::NoRec => "no_rec",
            Ablation::NoDag => "no_dag",
            Ablation::NoBoth => "no_both",
        }
    }

    /// `(β, γ)` after the preset overrides.
    pub fn apply(self, beta: f64, gamma: f64) -> (f64, f64) {
        match self {
            Ablation::Full => (beta, gamma),
            Ablation::NoRec => (0.0, gamma),
            Ablation::NoDag => (beta, 0.0),
            Ablation::NoBoth => (0.0, 0.0),
        }
    }
}

impl std::str::FromStr for Ablation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ablation::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown ablation {s:?} (full, no_rec, no_dag, no_both)")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub hidden: usize,
    pub mlp_layers: usize,
    pub effect_layers: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub patience: usize,
    pub max_epochs: usize,
    pub beta: f64,
    pub gamma: f64,
    pub rho: f64,
    pub alpha: f64,
    pub ablation: Ablation,
    pub activation: Activation,
    pub max_metapath_len: usize,
    pub seed: u64,
    pub multiset_neighbors: bool,
    pub exclude_self: bool,
    pub forward_only: bool,
    pub native_dims: bool,
    /// Evaluate batches and build caches on the rayon pool.
    pub parallel: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let w = LossWeights::default();
        TrainConfig {
            hidden: 64,
            mlp_layers: 3,
            effect_layers: 2,
            batch_size: 256,
            lr: 1e-3,
            weight_decay: 0.01,
            patience: 50,
            max_epochs: 500,
            beta: w.beta,
            gamma: w.gamma,
            rho: w.rho,
            alpha: w.alpha,
            ablation: Ablation::Full,
            activation: Activation::Relu,
            max_metapath_len: 2,
            seed: 0,
            multiset_neighbors: false,
            exclude_self: false,
            forward_only: false,
            native_dims: false,
            parallel: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("hidden", self.hidden),
            ("mlp_layers", self.mlp_layers),
            ("effect_layers", self.effect_layers),
            ("batch_size", self.batch_size),
            ("max_epochs", self.max_epochs),
            ("max_metapath_len", self.max_metapath_len),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config(format!("weight_decay must be >= 0, got {}", self.weight_decay)));
        }
        self.loss_weights().validate()
    }

    /// Loss weights with the ablation preset applied.
    pub fn loss_weights(&self) -> LossWeights {
        let (beta, gamma) = self.ablation.apply(self.beta, self.gamma);
        LossWeights {
            beta,
            gamma,
            rho: self.rho,
            alpha: self.alpha,
        }
    }

    pub fn exec(&self) -> Exec {
        if self.parallel {
            Exec::Parallel
        } else {
            Exec::Sequential
        }
    }

    pub fn neighbor_options(&self) -> NeighborOptions {
        NeighborOptions {
            multiset: self.multiset_neighbors,
            exclude_self: self.exclude_self,
        }
    }
}

/// Meta-paths and their pooled neighbor features for one graph.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub metapaths: Vec<MetaPath>,
    pub cache: PooledCache,
}

impl Prepared {
    pub fn new(graph: &HeteroGraph, config: &TrainConfig) -> Result<Self> {
        let metapaths = enumerate_metapaths(
            graph.schema(),
            graph.target_type(),
            config.max_metapath_len,
            config.forward_only,
        )?;
        let cache = PooledCache::build(graph, &metapaths, config.neighbor_options(), config.exec())?;
        Ok(Prepared { metapaths, cache })
    }

    pub fn variable_names(&self) -> Vec<String> {
        let mut names = vec![crate::encoders::EGO_NAME.to_string()];
        names.extend(self.cache.names().iter().cloned());
        names.push(crate::encoders::LABEL_NAME.to_string());
        names
    }

    pub fn model_config(&self, graph: &HeteroGraph, config: &TrainConfig) -> ModelConfig {
        ModelConfig {
            hidden: config.hidden,
            mlp_hidden: config.hidden,
            mlp_layers: config.mlp_layers,
            effect_layers: config.effect_layers,
            activation: config.activation,
            native_dims: config.native_dims,
            ego_dim: graph.feature_dim(graph.target_type()),
            num_classes: graph.num_classes(),
            pooled_dims: self.cache.dims(),
            variable_names: self.variable_names(),
        }
    }
}

/// Mean loss components over one epoch's batches, weighted by batch size.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct EpochLosses {
    pub l_inv: f64,
    pub l_rec: f64,
    pub l_dag: f64,
    pub l_joint: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub losses: EpochLosses,
    pub val_macro_f1: f64,
    pub val_acc: f64,
    pub val_l_inv: f64,
}

pub const HISTORY_HEADER: &str = "epoch,l_inv,l_rec,l_dag,val_macro_f1,val_acc";

pub fn history_csv(history: &[EpochRecord]) -> String {
    let mut out = format!("{HISTORY_HEADER}\n");
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            r.epoch, r.losses.l_inv, r.losses.l_rec, r.losses.l_dag, r.val_macro_f1, r.val_acc
        );
    }
    out
}

/// Predictions and scores on a node list.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub metrics: Metrics,
    pub predictions: Vec<usize>,
    pub probabilities: Tensor,
    /// Mean cross-entropy of the true class.
    pub l_inv: f64,
}

/// Class probabilities for `nodes`, one label-blind batch per chunk.
pub fn predict(
    model: &HgScm,
    graph: &HeteroGraph,
    cache: &PooledCache,
    nodes: &[usize],
    batch_size: usize,
    exec: Exec,
) -> Result<Tensor> {
    let chunks: Vec<&[usize]> = nodes.chunks(batch_size.max(1)).collect();
    let parts = exec.map_slice(&chunks, |c| model.predict_nodes(graph, cache, c));
    let mut data = Vec::with_capacity(nodes.len() * graph.num_classes());
    for p in parts {
        data.extend_from_slice(p?.data());
    }
    Tensor::new(vec![nodes.len(), graph.num_classes()], data)
}

pub fn evaluate(
    model: &HgScm,
    graph: &HeteroGraph,
    cache: &PooledCache,
    nodes: &[usize],
    batch_size: usize,
    exec: Exec,
) -> Result<Evaluation> {
    if nodes.is_empty() {
        return Err(Error::Config("cannot evaluate an empty node list".into()));
    }
    let probabilities = predict(model, graph, cache, nodes, batch_size, exec)?;
    let predictions = argmax_rows(&probabilities);
    let truth = nodes
        .iter()
        .map(|&n| graph.label(n).ok_or_else(|| Error::Contract(format!("node {n} has no label to score against"))))
        .collect::<Result<Vec<_>>>()?;
    let l_inv = truth
        .iter()
        .enumerate()
        .map(|(i, &t)| -probabilities.get(i, t).max(PROB_FLOOR).ln())
        .sum::<f64>()
        / nodes.len() as f64;
    let metrics = Metrics::from_predictions(&truth, &predictions, graph.num_classes())?;
    Ok(Evaluation {
        metrics,
        predictions,
        probabilities,
        l_inv,
    })
}

/// Tape handles of the joint objective and its unweighted components.
#[derive(Debug, Clone, Copy)]
pub struct LossParts {
    pub inv: Var,
    pub rec: Var,
    pub dag: Var,
    pub joint: Var,
}

/// Records the full training objective for a labeled batch on `tape`.
pub fn joint_loss(
    tape: &mut Tape,
    model: &HgScm,
    bound: &Bound,
    graph: &HeteroGraph,
    cache: &PooledCache,
    nodes: &[usize],
    weights: &LossWeights,
) -> Result<LossParts> {
    let vars = model.build_variables(tape, bound, graph, cache, nodes, true)?;
    let hats = model.reconstruct_all(tape, bound, &vars)?;
    let rec = loss_rec(tape, &vars.slices, &hats)?;
    let probs = model.label_head(tape, bound, hats[model.label_index()])?;
    let labels = nodes
        .iter()
        .map(|&n| graph.label(n).ok_or_else(|| Error::Contract(format!("node {n} has no label"))))
        .collect::<Result<Vec<_>>>()?;
    let y = tape.constant(one_hot(&labels, graph.num_classes()));
    let inv = loss_inv(tape, y, probs)?;
    let dag = loss_dag(tape, bound.var(model.scm.dag), weights)?;
    let joint = loss_joint(tape, inv, rec, dag, weights)?;
    Ok(LossParts { inv, rec, dag, joint })
}

/// Training state for one run.
pub struct Trainer<'g> {
    pub graph: &'g HeteroGraph,
    pub splits: SplitSpec,
    pub config: TrainConfig,
    pub prepared: Prepared,
    pub model: HgScm,
    optimizer: AdamWState,
    shuffle: ChaCha8Rng,
    epoch: usize,
}

impl<'g> Trainer<'g> {
    pub fn new(graph: &'g HeteroGraph, splits: &SplitSpec, config: &TrainConfig) -> Result<Self> {
        config.validate()?;
        splits.validate(graph)?;
        let prepared = Prepared::new(graph, config)?;
        let model = HgScm::new(prepared.model_config(graph, config), config.seed)?;
        Self::with_model(graph, splits, config, prepared, model)
    }

    /// Continues from an existing model (fresh optimizer state).
    pub fn with_model(
        graph: &'g HeteroGraph,
        splits: &SplitSpec,
        config: &TrainConfig,
        prepared: Prepared,
        model: HgScm,
    ) -> Result<Self> {
        let optimizer = AdamWState::new(
            AdamWConfig {
                lr: config.lr,
                weight_decay: config.weight_decay,
                ..AdamWConfig::default()
            },
            model.params.tensors(),
        );
        Ok(Trainer {
            graph,
            splits: splits.clone(),
            config: config.clone(),
            prepared,
            model,
            optimizer,
            shuffle: rng::substream(config.seed, rng::SHUFFLE),
            epoch: 0,
        })
    }

    pub fn epochs_run(&self) -> usize {
        self.epoch
    }

    /// One optimizer step on `nodes`; returns the unweighted components.
    pub fn step(&mut self, nodes: &[usize]) -> Result<EpochLosses> {
        let weights = self.config.loss_weights();
        let model = &self.model;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape, true);
        let epoch = self.epoch + 1;
        let parts = joint_loss(&mut tape, model, &bound, self.graph, &self.prepared.cache, nodes, &weights)
            .map_err(|e| match e {
                Error::Numeric(m) => Error::Numeric(format!("epoch {epoch}: {m}")),
                other => other,
            })?;
        let joint = parts.joint;
        let losses = EpochLosses {
            l_inv: tape.value(parts.inv).item(),
            l_rec: tape.value(parts.rec).item(),
            l_dag: tape.value(parts.dag).item(),
            l_joint: tape.value(joint).item(),
        };
        if !losses.l_joint.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite training loss at epoch {} (inv {}, rec {}, dag {})",
                self.epoch + 1,
                losses.l_inv,
                losses.l_rec,
                losses.l_dag
            )));
        }
        let mut grads = tape.backward(joint)?;
        let mut flat: Vec<Tensor> = bound
            .vars()
            .iter()
            .zip(model.params.tensors())
            .map(|(&v, p)| grads.take(v).unwrap_or_else(|| Tensor::zeros(p.shape())))
            .collect();
        zero_diagonal(&mut flat[model.scm.dag.index()]);
        if flat.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!("non-finite gradient at epoch {}", self.epoch + 1)));
        }
        let dag_id = model.scm.dag;
        self.optimizer.step(self.model.params.tensors_mut(), &flat)?;
        zero_diagonal(self.model.params.get_mut(dag_id));
        Ok(losses)
    }

    /// One shuffled pass over the training nodes.
    pub fn run_epoch(&mut self) -> Result<EpochLosses> {
        let mut order = self.splits.train.clone();
        order.shuffle(&mut self.shuffle);
        let mut acc = EpochLosses::default();
        for batch in order.chunks(self.config.batch_size) {
            let l = self.step(batch)?;
            let w = batch.len() as f64;
            acc.l_inv += w * l.l_inv;
            acc.l_rec += w * l.l_rec;
            acc.l_dag += w * l.l_dag;
            acc.l_joint += w * l.l_joint;
        }
        let n = order.len() as f64;
        self.epoch += 1;
        Ok(EpochLosses {
            l_inv: acc.l_inv / n,
            l_rec: acc.l_rec / n,
            l_dag: acc.l_dag / n,
            l_joint: acc.l_joint / n,
        })
    }

    pub fn evaluate(&self, nodes: &[usize]) -> Result<Evaluation> {
        evaluate(
            &self.model,
            self.graph,
            &self.prepared.cache,
            nodes,
            self.config.batch_size,
            self.config.exec(),
        )
    }

    /// Trains until early stopping or `max_epochs`, then restores the best
    /// validation parameters.
    pub fn fit(mut self) -> Result<TrainOutcome> {
        let mut history = Vec::new();
        let mut best: Option<(f64, f64, usize, Vec<Tensor>)> = None;
        let mut stale = 0usize;
        while self.epoch < self.config.max_epochs {
            let losses = self.run_epoch()?;
            let val = self.evaluate(&self.splits.val)?;
            let record = EpochRecord {
                epoch: self.epoch,
                losses,
                val_macro_f1: val.metrics.macro_f1,
                val_acc: val.metrics.accuracy,
                val_l_inv: val.l_inv,
            };
            let improved = match &best {
                None => true,
                Some((f1, l, _, _)) => record.val_macro_f1 > *f1 || (record.val_macro_f1 == *f1 && record.val_l_inv < *l),
            };
            if improved {
                best = Some((record.val_macro_f1, record.val_l_inv, self.epoch, self.model.params.tensors().to_vec()));
                stale = 0;
            } else {
                stale += 1;
            }
            history.push(record);
            if stale >= self.config.patience {
                break;
            }
        }
        let (_, _, best_epoch, snapshot) = best.expect("at least one epoch");
        for (slot, saved) in self.model.params.tensors_mut().iter_mut().zip(snapshot) {
            *slot = saved;
        }
        Ok(TrainOutcome {
            model: self.model,
            prepared: self.prepared,
            history,
            best_epoch,
        })
    }
}

pub struct TrainOutcome {
    pub model: HgScm,
    pub prepared: Prepared,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
}

pub fn train(graph: &HeteroGraph, splits: &SplitSpec, config: &TrainConfig) -> Result<TrainOutcome> {
    Trainer::new(graph, splits, config)?.fit()
}
