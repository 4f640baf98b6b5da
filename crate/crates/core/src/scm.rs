//! The structural causal model: a trainable DAG matrix over the `q + 2`
//! variables, one structural assignment per variable, and the inverse
//! label head.
//!
//! Variable `k` is reconstructed as
//! `Decoder_k( Σ_{i≠k} A[i,k] · Linear_ik( Effect_i(h_i) ) )`, where
//! `Effect_i` is shared by every effect of cause `i` and each pairwise
//! `Linear_ik` is independent. Labels are read off the reconstructed label
//! variable through `Linear²(ĥ + σ(Linear¹(ĥ)))` and a row softmax.

use std::fs;
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::{build_variables, EncoderParams, VariableBatch};
use crate::error::{Error, Result};
use crate::hetgraph::{HeteroGraph, PooledCache};
use crate::numcore::{Activation, Bound, Linear, Mlp, ParamId, ParamSet, Tape, Tensor, Var};
use crate::rng;

/// Architecture description; fully determines the parameter layout.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub hidden: usize,
    pub mlp_hidden: usize,
    /// Depth of each variable decoder.
    pub mlp_layers: usize,
    /// Depth of each per-cause effect encoder.
    pub effect_layers: usize,
    pub activation: Activation,
    pub native_dims: bool,
    pub ego_dim: usize,
    pub num_classes: usize,
    pub pooled_dims: Vec<usize>,
    pub variable_names: Vec<String>,
}

impl ModelConfig {
    pub fn num_variables(&self) -> usize {
        self.pooled_dims.len() + 2
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScmParams {
    pub dag: ParamId,
    pub effect: Vec<Mlp>,
    /// `pair[i][k]` maps cause `i`'s effect toward variable `k`; `None` on the diagonal.
    pub pair: Vec<Vec<Option<Linear>>>,
    pub decoders: Vec<Mlp>,
    pub inv1: Linear,
    pub inv2: Linear,
}

/// Encoders, SCM and their parameters.
#[derive(Debug)]
pub struct HgScm {
    pub config: ModelConfig,
    pub encoders: EncoderParams,
    pub scm: ScmParams,
    pub params: ParamSet,
    decoder_calls: AtomicUsize,
}

impl Clone for HgScm {
    fn clone(&self) -> Self {
        HgScm {
            config: self.config.clone(),
            encoders: self.encoders.clone(),
            scm: self.scm.clone(),
            params: self.params.clone(),
            decoder_calls: AtomicUsize::new(0),
        }
    }
}

/// Sets every diagonal entry of a square matrix to exactly zero.
pub fn zero_diagonal(a: &mut Tensor) {
    let n = a.rows();
    for i in 0..n.min(a.cols()) {
        a.set(i, i, 0.0);
    }
}

impl HgScm {
    /// Fresh model with seeded initialization.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut r = rng::substream(seed, rng::INIT);
        Self::with_rng(config, &mut r)
    }

    pub fn with_rng<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        let d = config.num_variables();
        if config.variable_names.len() != d {
            return Err(Error::Config(format!(
                "{} variable names for {d} variables",
                config.variable_names.len()
            )));
        }
        if config.hidden == 0 || config.mlp_hidden == 0 || config.mlp_layers == 0 || config.effect_layers == 0 {
            return Err(Error::Config("hidden widths and depths must be positive".into()));
        }
        let mut params = ParamSet::new();
        let encoders = EncoderParams::register(
            &mut params,
            config.ego_dim,
            config.num_classes,
            &config.pooled_dims,
            config.hidden,
            config.native_dims,
            rng,
        )?;
        let dims = encoders.variable_dims(&config.pooled_dims);

        let mut a = Tensor::zeros(&[d, d]);
        for i in 0..d {
            for k in 0..d {
                if i != k {
                    a.set(i, k, rng.random_range(-0.1..0.1));
                }
            }
        }
        let dag = params.add("scm.dag", a)?;

        let h = config.hidden;
        let mut effect = Vec::with_capacity(d);
        for (i, &di) in dims.iter().enumerate() {
            effect.push(Mlp::register(
                &mut params,
                &format!("scm.effect{i}"),
                di,
                config.mlp_hidden,
                h,
                config.effect_layers,
                config.activation,
                rng,
            )?);
        }
        let mut pair = vec![vec![None; d]; d];
        for (i, row) in pair.iter_mut().enumerate() {
            for (k, slot) in row.iter_mut().enumerate() {
                if i != k {
                    *slot = Some(Linear::register(&mut params, &format!("scm.pair{i}_{k}"), h, h, rng)?);
                }
            }
        }
        let mut decoders = Vec::with_capacity(d);
        for (k, &dk) in dims.iter().enumerate() {
            decoders.push(Mlp::register(
                &mut params,
                &format!("scm.decoder{k}"),
                h,
                config.mlp_hidden,
                dk,
                config.mlp_layers,
                config.activation,
                rng,
            )?);
        }
        let dy = dims[d - 1];
        let inv1 = Linear::register(&mut params, "scm.inv1", dy, dy, rng)?;
        let inv2 = Linear::register(&mut params, "scm.inv2", dy, config.num_classes, rng)?;
        Ok(HgScm {
            config,
            encoders,
            scm: ScmParams {
                dag,
                effect,
                pair,
                decoders,
                inv1,
                inv2,
            },
            params,
            decoder_calls: AtomicUsize::new(0),
        })
    }

    pub fn num_variables(&self) -> usize {
        self.config.num_variables()
    }

    pub fn label_index(&self) -> usize {
        self.num_variables() - 1
    }

    pub fn variable_names(&self) -> &[String] {
        &self.config.variable_names
    }

    pub fn dag(&self) -> &Tensor {
        self.params.get(self.scm.dag)
    }

    pub fn dag_mut(&mut self) -> &mut Tensor {
        self.params.get_mut(self.scm.dag)
    }

    pub fn decoder_calls(&self) -> usize {
        self.decoder_calls.load(Ordering::Relaxed)
    }

    pub fn reset_decoder_calls(&self) {
        self.decoder_calls.store(0, Ordering::Relaxed);
    }

    pub fn bind(&self, tape: &mut Tape, requires_grad: bool) -> Bound {
        self.params.bind(tape, requires_grad)
    }

    pub fn build_variables(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        graph: &HeteroGraph,
        cache: &PooledCache,
        nodes: &[usize],
        with_labels: bool,
    ) -> Result<VariableBatch> {
        let vb = build_variables(tape, bound, &self.encoders, graph, cache, nodes, with_labels)?;
        if vb.names != self.config.variable_names {
            return Err(Error::Contract(format!(
                "graph variables {:?} do not match model variables {:?}",
                vb.names, self.config.variable_names
            )));
        }
        Ok(vb)
    }

    fn check_index(&self, k: usize) -> Result<()> {
        if k >= self.num_variables() {
            return Err(Error::Contract(format!(
                "variable index {k} out of range (have {})",
                self.num_variables()
            )));
        }
        Ok(())
    }

    /// `Effect_i(h_i)` for every `i` except `skip`.
    pub fn effects(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        vars: &VariableBatch,
        skip: Option<usize>,
    ) -> Result<Vec<Option<Var>>> {
        (0..self.num_variables())
            .map(|i| {
                if Some(i) == skip {
                    Ok(None)
                } else {
                    self.scm.effect[i].forward(tape, bound, vars.slices[i]).map(Some)
                }
            })
            .collect()
    }

    /// The weighted sum of cause effects fed to decoder `k`.
    pub fn assignment_input(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        effects: &[Option<Var>],
        k: usize,
    ) -> Result<Var> {
        self.check_index(k)?;
        let a = bound.var(self.scm.dag);
        let mut total: Option<Var> = None;
        for (i, e) in effects.iter().enumerate() {
            if i == k {
                continue;
            }
            let e = e.ok_or_else(|| Error::Contract(format!("missing effect of cause {i}")))?;
            let lin = self.scm.pair[i][k].expect("off-diagonal transform");
            let t = lin.forward(tape, bound, e)?;
            let w = tape.entry(a, i, k)?;
            let term = tape.scale_by(t, w)?;
            total = Some(match total {
                None => term,
                Some(acc) => tape.add(acc, term)?,
            });
        }
        match total {
            Some(t) => Ok(t),
            None => {
                let b = effects.iter().flatten().next().map_or(0, |&e| tape.value(e).rows());
                Ok(tape.constant(Tensor::zeros(&[b, self.config.hidden])))
            }
        }
    }

    fn decode(&self, tape: &mut Tape, bound: &Bound, k: usize, input: Var) -> Result<Var> {
        self.decoder_calls.fetch_add(1, Ordering::Relaxed);
        self.scm.decoders[k].forward(tape, bound, input)
    }

    /// `ĥ_k`, reconstructed from the other variables.
    pub fn structural_assignment(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        vars: &VariableBatch,
        k: usize,
    ) -> Result<Var> {
        self.check_index(k)?;
        let effects = self.effects(tape, bound, vars, Some(k))?;
        let input = self.assignment_input(tape, bound, &effects, k)?;
        self.decode(tape, bound, k, input)
    }

    /// Every `ĥ_k`; training path only.
    pub fn reconstruct_all(
        &self,
        tape: &mut Tape,
        bound: &Bound,
        vars: &VariableBatch,
    ) -> Result<Vec<Var>> {
        if vars.label_known.iter().any(|k| !k) {
            return Err(Error::Contract(
                "reconstruct_all needs a batch built with labels".into(),
            ));
        }
        let effects = self.effects(tape, bound, vars, None)?;
        (0..self.num_variables())
            .map(|k| {
                let input = self.assignment_input(tape, bound, &effects, k)?;
                self.decode(tape, bound, k, input)
            })
            .collect()
    }

    /// Class probabilities from a reconstructed label variable.
    pub fn label_head(&self, tape: &mut Tape, bound: &Bound, h_y: Var) -> Result<Var> {
        let z = self.scm.inv1.forward(tape, bound, h_y)?;
        let z = self.config.activation.apply(tape, z);
        let s = tape.add(h_y, z)?;
        let logits = self.scm.inv2.forward(tape, bound, s)?;
        Ok(tape.softmax_rows(logits))
    }

    /// Evaluation path: only the label variable is reconstructed.
    pub fn predict_labels(&self, tape: &mut Tape, bound: &Bound, vars: &VariableBatch) -> Result<Var> {
        let h_y = self.structural_assignment(tape, bound, vars, self.label_index())?;
        self.label_head(tape, bound, h_y)
    }

    /// Probabilities for `nodes` without recording gradients.
    pub fn predict_nodes(
        &self,
        graph: &HeteroGraph,
        cache: &PooledCache,
        nodes: &[usize],
    ) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let vars = self.build_variables(&mut tape, &bound, graph, cache, nodes, false)?;
        let p = self.predict_labels(&mut tape, &bound, &vars)?;
        Ok(tape.value(p).clone())
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            tensors: self
                .params
                .iter()
                .map(|(name, t)| NamedTensor {
                    name: name.to_string(),
                    shape: t.shape().to_vec(),
                    data: t.data().to_vec(),
                })
                .collect(),
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        let mut model = HgScm::new(ck.config.clone(), 0)?;
        if ck.tensors.len() != model.params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint holds {} tensors, architecture needs {}",
                ck.tensors.len(),
                model.params.len()
            )));
        }
        for nt in &ck.tensors {
            let id = model
                .params
                .id(&nt.name)
                .ok_or_else(|| Error::Checkpoint(format!("unexpected tensor {:?}", nt.name)))?;
            let slot = model.params.get_mut(id);
            if slot.shape() != nt.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "tensor {:?} has shape {:?}, architecture needs {:?}",
                    nt.name,
                    nt.shape,
                    slot.shape()
                )));
            }
            *slot = Tensor::new(nt.shape.clone(), nt.data.clone())
                .map_err(|e| Error::Checkpoint(format!("tensor {:?}: {e}", nt.name)))?
                .with_requires_grad(true);
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string(&self.to_checkpoint())?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ck: Checkpoint = serde_json::from_str(&text)
            .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
        HgScm::from_checkpoint(&ck)
    }
}

pub const CHECKPOINT_FORMAT: &str = "hgscm-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Serialized model: architecture plus every tensor by name.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<NamedTensor>,
}
