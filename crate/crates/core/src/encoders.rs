//! Variable construction: ego, label and per-meta-path neighbor variables,
//! each with its own independent encoder.

use rand::Rng;

use crate::error::{Error, Result};
use crate::hetgraph::{HeteroGraph, PooledCache};
use crate::numcore::{Bound, Linear, ParamSet, Tape, Tensor, Var};

pub const EGO_NAME: &str = "EGO";
pub const LABEL_NAME: &str = "Y";

/// Encoder weights. Nothing is shared between encoders.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderParams {
    pub ego: Linear,
    pub label: Linear,
    /// One projection per meta-path; `None` keeps the pooled native width.
    pub neighbors: Vec<Option<Linear>>,
}

impl EncoderParams {
    pub fn register<R: Rng>(
        params: &mut ParamSet,
        ego_dim: usize,
        num_classes: usize,
        pooled_dims: &[usize],
        hidden: usize,
        native_dims: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let ego = Linear::register(params, "enc.ego", ego_dim, hidden, rng)?;
        let label = Linear::register(params, "enc.label", num_classes, hidden, rng)?;
        let mut neighbors = Vec::with_capacity(pooled_dims.len());
        for (j, &d) in pooled_dims.iter().enumerate() {
            neighbors.push(if native_dims {
                None
            } else {
                Some(Linear::register(params, &format!("enc.mp{}", j + 1), d, hidden, rng)?)
            });
        }
        Ok(EncoderParams {
            ego,
            label,
            neighbors,
        })
    }

    /// Representation width of each of the `q + 2` variables.
    pub fn variable_dims(&self, pooled_dims: &[usize]) -> Vec<usize> {
        let mut dims = vec![self.ego.out_dim];
        dims.extend(
            self.neighbors
                .iter()
                .zip(pooled_dims)
                .map(|(p, &d)| p.map_or(d, |l| l.out_dim)),
        );
        dims.push(self.label.out_dim);
        dims
    }
}

pub fn encode_ego(tape: &mut Tape, bound: &Bound, enc: &EncoderParams, features: Var) -> Result<Var> {
    enc.ego.forward(tape, bound, features)
}

/// Label encoder; refuses batches containing samples whose label is unknown.
pub fn encode_label(
    tape: &mut Tape,
    bound: &Bound,
    enc: &EncoderParams,
    one_hot: Var,
    label_known: &[bool],
) -> Result<Var> {
    if let Some(i) = label_known.iter().position(|k| !k) {
        return Err(Error::Contract(format!(
            "label encoder called on sample {i} whose label is not known"
        )));
    }
    enc.label.forward(tape, bound, one_hot)
}

pub fn encode_neighbor_variables(
    tape: &mut Tape,
    bound: &Bound,
    enc: &EncoderParams,
    pooled: &[Var],
) -> Result<Vec<Var>> {
    if pooled.len() != enc.neighbors.len() {
        return Err(Error::Dimension(format!(
            "{} pooled matrices for {} meta-path encoders",
            pooled.len(),
            enc.neighbors.len()
        )));
    }
    pooled
        .iter()
        .zip(&enc.neighbors)
        .map(|(&p, proj)| match proj {
            Some(l) => l.forward(tape, bound, p),
            None => Ok(p),
        })
        .collect()
}

/// The `q + 2` variables of one batch, recorded on a tape.
///
/// Slot 0 is the ego variable, slots `1..=q` the meta-path variables in
/// enumeration order, slot `q + 1` the label variable.
#[derive(Debug, Clone)]
pub struct VariableBatch {
    pub slices: Vec<Var>,
    pub names: Vec<String>,
    pub label_known: Vec<bool>,
    pub nodes: Vec<usize>,
}

impl VariableBatch {
    pub fn num_variables(&self) -> usize {
        self.slices.len()
    }

    pub fn batch_size(&self) -> usize {
        self.nodes.len()
    }

    pub fn label_index(&self) -> usize {
        self.slices.len() - 1
    }

    /// Values stacked into a `(B, q + 2, D)` tensor; requires equal widths.
    pub fn stacked(&self, tape: &Tape) -> Result<Tensor> {
        stack_slices(tape, &self.slices)
    }
}

pub(crate) fn stack_slices(tape: &Tape, slices: &[Var]) -> Result<Tensor> {
    let b = tape.value(slices[0]).rows();
    let d = tape.value(slices[0]).cols();
    if slices.iter().any(|&s| tape.value(s).dims2() != (b, d)) {
        return Err(Error::Dimension(
            "variables have different widths and cannot be stacked".into(),
        ));
    }
    let k = slices.len();
    let mut data = vec![0.0; b * k * d];
    for (v, &s) in slices.iter().enumerate() {
        let t = tape.value(s);
        for i in 0..b {
            data[(i * k + v) * d..(i * k + v + 1) * d].copy_from_slice(t.row(i));
        }
    }
    Tensor::new(vec![b, k, d], data)
}

pub fn one_hot(labels: &[usize], num_classes: usize) -> Tensor {
    let mut t = Tensor::zeros(&[labels.len(), num_classes]);
    for (i, &c) in labels.iter().enumerate() {
        t.set(i, c, 1.0);
    }
    t
}

/// Assembles the variable batch for `nodes`.
///
/// With `with_labels = false` the label slot is all zeros and the stored
/// labels are never read.
#[allow(clippy::too_many_arguments)]
pub fn build_variables(
    tape: &mut Tape,
    bound: &Bound,
    enc: &EncoderParams,
    graph: &HeteroGraph,
    cache: &PooledCache,
    nodes: &[usize],
    with_labels: bool,
) -> Result<VariableBatch> {
    let target = graph.target_type();
    if let Some(&bad) = nodes.iter().find(|&&n| n >= graph.num_targets()) {
        return Err(Error::Contract(format!("node {bad} is not a target-type node")));
    }
    let x = tape.constant(graph.features(target).select_rows(nodes));
    let h_ego = encode_ego(tape, bound, enc, x)?;

    let pooled: Vec<Var> = cache
        .gather(nodes)
        .into_iter()
        .map(|p| tape.constant(p))
        .collect();
    let h_mp = encode_neighbor_variables(tape, bound, enc, &pooled)?;

    let (h_y, label_known) = if with_labels {
        let labels = nodes
            .iter()
            .map(|&n| {
                graph
                    .label(n)
                    .ok_or_else(|| Error::Contract(format!("node {n} has no label")))
            })
            .collect::<Result<Vec<_>>>()?;
        let known = vec![true; nodes.len()];
        let y = tape.constant(one_hot(&labels, graph.num_classes()));
        (encode_label(tape, bound, enc, y, &known)?, known)
    } else {
        let zeros = tape.constant(Tensor::zeros(&[nodes.len(), enc.label.out_dim]));
        (zeros, vec![false; nodes.len()])
    };

    let mut slices = Vec::with_capacity(h_mp.len() + 2);
    slices.push(h_ego);
    slices.extend(h_mp);
    slices.push(h_y);
    let mut names = vec![EGO_NAME.to_string()];
    names.extend(cache.names().iter().cloned());
    names.push(LABEL_NAME.to_string());
    Ok(VariableBatch {
        slices,
        names,
        label_known,
        nodes: nodes.to_vec(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Exec;
    use crate::hetgraph::toy::academic_toy;
    use crate::hetgraph::{enumerate_metapaths, NeighborOptions};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    struct Setup {
        graph: HeteroGraph,
        cache: PooledCache,
        params: ParamSet,
        enc: EncoderParams,
    }

    fn setup(hidden: usize) -> Setup {
        let graph = academic_toy();
        let mps = enumerate_metapaths(graph.schema(), graph.target_type(), 2, false).unwrap();
        let cache = PooledCache::build(&graph, &mps, NeighborOptions::default(), Exec::Sequential).unwrap();
        let mut params = ParamSet::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let enc = EncoderParams::register(
            &mut params,
            graph.feature_dim(0),
            2,
            &cache.dims(),
            hidden,
            false,
            &mut rng,
        )
        .unwrap();
        Setup {
            graph,
            cache,
            params,
            enc,
        }
    }

    #[test]
    fn zero_weight_ego_encoder_returns_bias() {
        let mut s = setup(4);
        *s.params.get_mut(s.enc.ego.weight) = Tensor::zeros(&[2, 4]);
        *s.params.get_mut(s.enc.ego.bias) = Tensor::new(vec![4], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let mut tape = Tape::new();
        let b = s.params.bind(&mut tape, false);
        let x = tape.constant(Tensor::from_rows(&[vec![5.0, -1.0], vec![0.3, 0.2]]).unwrap());
        let h = encode_ego(&mut tape, &b, &s.enc, x).unwrap();
        for i in 0..2 {
            assert_eq!(tape.value(h).row(i), &[1.0, 2.0, 3.0, 4.0]);
        }
    }

    #[test]
    fn identity_ego_encoder_passes_through() {
        let mut s = setup(2);
        *s.params.get_mut(s.enc.ego.weight) = Tensor::eye(2);
        *s.params.get_mut(s.enc.ego.bias) = Tensor::zeros(&[2]);
        let mut tape = Tape::new();
        let b = s.params.bind(&mut tape, false);
        let feats = Tensor::from_rows(&[vec![5.0, -1.0]]).unwrap();
        let x = tape.constant(feats.clone());
        let h = encode_ego(&mut tape, &b, &s.enc, x).unwrap();
        assert_eq!(tape.value(h).data(), feats.data());
    }

    #[test]
    fn encoders_match_direct_affine_formula() {
        let s = setup(5);
        let mut tape = Tape::new();
        let b = s.params.bind(&mut tape, false);
        let feats = s.graph.features(0).clone();
        let x = tape.constant(feats.clone());
        let h = encode_ego(&mut tape, &b, &s.enc, x).unwrap();
        let w = s.params.get(s.enc.ego.weight);
        let bias = s.params.get(s.enc.ego.bias);
        for i in 0..3 {
            for j in 0..5 {
                let mut v = bias.data()[j];
                for k in 0..2 {
                    v += feats.get(i, k) * w.get(k, j);
                }
                assert!((tape.value(h).get(i, j) - v).abs() < 1e-12);
            }
        }
        // label: one-hot selects a weight row plus bias
        let y = tape.constant(one_hot(&[0, 1, 1], 2));
        let hy = encode_label(&mut tape, &b, &s.enc, y, &[true; 3]).unwrap();
        let wl = s.params.get(s.enc.label.weight);
        let bl = s.params.get(s.enc.label.bias);
        for j in 0..5 {
            assert!((tape.value(hy).get(0, j) - (wl.get(0, j) + bl.data()[j])).abs() < 1e-12);
            assert_eq!(tape.value(hy).get(1, j), tape.value(hy).get(2, j));
        }
    }

    #[test]
    fn label_encoder_refuses_unknown_labels() {
        let s = setup(3);
        let mut tape = Tape::new();
        let b = s.params.bind(&mut tape, false);
        let y = tape.constant(one_hot(&[0, 1], 2));
        let r = encode_label(&mut tape, &b, &s.enc, y, &[true, false]);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    #[test]
    fn empty_neighbor_row_maps_to_bias() {
        let s = setup(3);
        let mut tape = Tape::new();
        let b = s.params.bind(&mut tape, false);
        let pooled: Vec<Var> = s
            .cache
            .dims()
            .iter()
            .map(|&d| tape.constant(Tensor::zeros(&[1, d])))
            .collect();
        let hs = encode_neighbor_variables(&mut tape, &b, &s.enc, &pooled).unwrap();
        for (h, proj) in hs.iter().zip(&s.enc.neighbors) {
            assert_eq!(tape.value(*h).data(), s.params.get(proj.unwrap().bias).data());
        }
    }

    #[test]
    fn metapath_permutation_permutes_outputs() {
        let s = setup(4);
        let mut tape = Tape::new();
        let b = s.params.bind(&mut tape, false);
        let pooled: Vec<Var> = s.cache.gather(&[0, 2]).into_iter().map(|p| tape.constant(p)).collect();
        let out = encode_neighbor_variables(&mut tape, &b, &s.enc, &pooled).unwrap();
        let perm = [2usize, 0, 1];
        let p_pooled: Vec<Var> = perm.iter().map(|&j| pooled[j]).collect();
        let p_enc = EncoderParams {
            neighbors: perm.iter().map(|&j| s.enc.neighbors[j]).collect(),
            ..s.enc.clone()
        };
        let p_out = encode_neighbor_variables(&mut tape, &b, &p_enc, &p_pooled).unwrap();
        for (slot, &j) in perm.iter().enumerate() {
            assert_eq!(tape.value(p_out[slot]).data(), tape.value(out[j]).data());
        }
    }

    #[test]
    fn build_shapes_and_masking() {
        let s = setup(6);
        let mut tape = Tape::new();
        let b = s.params.bind(&mut tape, false);
        let vb = build_variables(&mut tape, &b, &s.enc, &s.graph, &s.cache, &[0], true).unwrap();
        // q = 3 meta-paths on the toy schema
        assert_eq!(vb.stacked(&tape).unwrap().shape(), &[1, 5, 6]);
        let expect: Vec<String> = ["EGO", "AP", "APA", "APV", "Y"].map(String::from).to_vec();
        assert_eq!(vb.names, expect);
        let masked = build_variables(&mut tape, &b, &s.enc, &s.graph, &s.cache, &[0, 1], false).unwrap();
        let y = tape.value(masked.slices[masked.label_index()]);
        assert!(y.data().iter().all(|&v| v == 0.0));
        assert_eq!(masked.label_known, vec![false, false]);
    }

    #[test]
    fn repeated_node_gives_identical_rows() {
        let s = setup(4);
        let mut tape = Tape::new();
        let b = s.params.bind(&mut tape, false);
        let vb = build_variables(&mut tape, &b, &s.enc, &s.graph, &s.cache, &[2, 2], true).unwrap();
        let h = vb.stacked(&tape).unwrap();
        let row = h.data().len() / 2;
        assert_eq!(h.data()[..row], h.data()[row..]);
    }

    #[test]
    fn evaluation_batch_ignores_stored_labels() {
        let s = setup(4);
        let flipped = s.graph.with_labels(vec![Some(1), Some(1), Some(0)]).unwrap();
        let run = |g: &HeteroGraph| {
            let mut tape = Tape::new();
            let b = s.params.bind(&mut tape, false);
            let vb = build_variables(&mut tape, &b, &s.enc, g, &s.cache, &[0, 1, 2], false).unwrap();
            vb.stacked(&tape).unwrap()
        };
        assert_eq!(run(&s.graph), run(&flipped));
    }

    #[test]
    fn encoder_independence() {
        let s = setup(4);
        let base = {
            let mut tape = Tape::new();
            let b = s.params.bind(&mut tape, false);
            let vb = build_variables(&mut tape, &b, &s.enc, &s.graph, &s.cache, &[0, 1, 2], true).unwrap();
            vb.slices.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>()
        };
        let perturb = |ids: &[crate::numcore::ParamId]| {
            let mut p = s.params.clone();
            for &id in ids {
                let t = p.get(id).map(|v| v + 0.5);
                *p.get_mut(id) = t;
            }
            let mut tape = Tape::new();
            let b = p.bind(&mut tape, false);
            let vb = build_variables(&mut tape, &b, &s.enc, &s.graph, &s.cache, &[0, 1, 2], true).unwrap();
            vb.slices.iter().map(|&v| tape.value(v).clone()).collect::<Vec<_>>()
        };
        let ego = perturb(&[s.enc.ego.weight, s.enc.ego.bias]);
        for k in 0..base.len() {
            assert_eq!(ego[k] == base[k], k != 0, "slot {k}");
        }
        let mp2 = s.enc.neighbors[1].unwrap();
        let changed = perturb(&[mp2.weight, mp2.bias]);
        for k in 0..base.len() {
            assert_eq!(changed[k] == base[k], k != 2, "slot {k}");
        }
    }
}
