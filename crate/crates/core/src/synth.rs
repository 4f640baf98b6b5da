//! Synthetic academic graphs with a planted cause of the label.
//!
//! Every author has a home class and leads a few papers, each at a distinct
//! venue (or with terms) of that class. One partner is then added to the
//! author's first paper. The author's label is the majority class over the
//! distinct carriers (venues for `APV`, terms for `APT`) of all their
//! papers, so it depends only on the causal meta-path. Partners are picked
//! so that co-author classes agree with a tunable rate in the "train"
//! regime and at chance in the "test" regime, which makes co-authorship
//! (`APA`) a spurious predictor that breaks under the shift.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hetgraph::{write_graph, HeteroGraph, NodeTypeEntry, RelationEntry, Schema, SchemaFile};
use crate::numcore::Tensor;
use crate::rng;
use crate::splits::{split_larger_group, SplitSpec};

pub const GROUND_TRUTH_FILE: &str = "ground-truth.json";

const AUTHOR: usize = 0;
const PAPER: usize = 1;
const TERM: usize = 2;
const VENUE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub authors: usize,
    pub papers_per_author: usize,
    pub venues: usize,
    pub terms: usize,
    pub terms_per_paper: usize,
    pub num_classes: usize,
    pub causal: String,
    pub spurious: String,
    /// Co-author class agreement rate in the train regime.
    pub spurious_strength: f64,
    /// Agreement rate in the test regime; `None` picks partners uniformly.
    pub test_agreement: Option<f64>,
    pub test_fraction: f64,
    pub author_dim: usize,
    pub paper_dim: usize,
    pub term_dim: usize,
    /// Extra venue dimensions beyond the one-hot class block.
    pub venue_extra_dim: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            authors: 600,
            papers_per_author: 3,
            venues: 16,
            terms: 64,
            terms_per_paper: 2,
            num_classes: 4,
            causal: "APV".into(),
            spurious: "APA".into(),
            spurious_strength: 0.95,
            test_agreement: None,
            test_fraction: 1.0 / 3.0,
            author_dim: 16,
            paper_dim: 16,
            term_dim: 16,
            venue_extra_dim: 4,
            noise: 0.1,
            seed: 0,
        }
    }
}

impl SynthSpec {
    fn carrier(&self) -> Result<usize> {
        match self.causal.as_str() {
            "APV" => Ok(VENUE),
            "APT" => Ok(TERM),
            other => Err(Error::Generation(format!(
                "causal meta-path must be APV or APT, got {other:?}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let carrier = self.carrier()?;
        if self.spurious != "APA" {
            return Err(Error::Generation(format!(
                "only the co-author meta-path APA can be spurious, got {:?}",
                self.spurious
            )));
        }
        if self.causal == self.spurious {
            return Err(Error::Generation("causal and spurious meta-paths coincide".into()));
        }
        let c = self.num_classes;
        if c < 2 {
            return Err(Error::Generation("need at least 2 classes".into()));
        }
        if self.authors < c {
            return Err(Error::Generation(format!("{} authors for {c} classes", self.authors)));
        }
        if self.venues < 2 * c || (carrier == TERM && self.terms < 2 * c) {
            return Err(Error::Generation(format!(
                "need at least 2 carriers per class ({} venues, {} terms, {c} classes)",
                self.venues, self.terms
            )));
        }
        if self.terms == 0 || self.terms_per_paper == 0 || self.terms_per_paper > self.terms {
            return Err(Error::Generation("terms_per_paper must be in [1, terms]".into()));
        }
        if self.papers_per_author == 0 {
            return Err(Error::Generation("papers_per_author must be positive".into()));
        }
        let rate_ok = |v: f64| (0.0..=1.0).contains(&v);
        if !rate_ok(self.spurious_strength) || !self.test_agreement.is_none_or(rate_ok) {
            return Err(Error::Generation("agreement rates must lie in [0, 1]".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Generation("test_fraction must lie in (0, 1)".into()));
        }
        let n_test = self.test_count();
        if n_test == 0 || n_test == self.authors {
            return Err(Error::Generation("both regimes need at least one author".into()));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::Generation("noise must be finite and >= 0".into()));
        }
        if self.author_dim < c || self.paper_dim < c || self.term_dim < c {
            return Err(Error::Generation(format!(
                "author, paper and term features need at least {c} dimensions"
            )));
        }
        Ok(())
    }

    fn test_count(&self) -> usize {
        (self.authors as f64 * self.test_fraction).round() as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthorRecord {
    pub home_class: usize,
    pub regime: Regime,
    pub led_papers: Vec<usize>,
    pub partner: Option<usize>,
    /// Distinct carrier nodes reached through all of the author's papers.
    pub carriers: Vec<usize>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub spec: SynthSpec,
    /// Meta-paths with a planted edge into the label.
    pub causes: Vec<String>,
    pub spurious: String,
    pub carrier_class: Vec<usize>,
    pub authors: Vec<AuthorRecord>,
}

/// Majority class over carrier classes; ties go to the lowest class.
pub fn majority_class(carrier_classes: &[usize], num_classes: usize) -> usize {
    let mut counts = vec![0usize; num_classes];
    for &c in carrier_classes {
        counts[c] += 1;
    }
    let mut best = 0;
    for c in 1..num_classes {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

impl GroundTruth {
    /// Recomputes every label from the generative record.
    pub fn replay_labels(&self) -> Vec<usize> {
        self.authors
            .iter()
            .map(|a| {
                let classes: Vec<usize> = a.carriers.iter().map(|&v| self.carrier_class[v]).collect();
                majority_class(&classes, self.spec.num_classes)
            })
            .collect()
    }

    pub fn regime_members(&self, regime: Regime) -> Vec<usize> {
        (0..self.authors.len()).filter(|&i| self.authors[i].regime == regime).collect()
    }

    /// Co-author pairs as `(lead, partner)`.
    pub fn coauthor_pairs(&self) -> Vec<(usize, usize)> {
        self.authors
            .iter()
            .enumerate()
            .filter_map(|(i, a)| a.partner.map(|p| (i, p)))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn synth_schema(num_classes: usize) -> Schema {
    let rel = |name: &str, src: &str, dst: &str, inv: &str| RelationEntry {
        name: name.into(),
        src: src.into(),
        dst: dst.into(),
        inverse: Some(inv.into()),
        abbrev: None,
    };
    Schema::from_file(&SchemaFile {
        node_types: ["author", "paper", "term", "venue"]
            .iter()
            .map(|s| NodeTypeEntry::Name(s.to_string()))
            .collect(),
        relations: vec![
            rel("write", "author", "paper", "written_by"),
            rel("published_in", "paper", "venue", "publishes"),
            rel("has_term", "paper", "term", "term_of"),
        ],
        target_type: "author".into(),
        num_classes,
    })
    .expect("static schema")
}

fn normal<R: Rng>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Rows of `N(0, 1)` noise with `leak · e_class` added to the first block.
fn leaky_features<R: Rng>(rng: &mut R, classes: &[usize], dim: usize, leak: f64) -> Tensor {
    let mut t = Tensor::zeros(&[classes.len(), dim]);
    for (i, &c) in classes.iter().enumerate() {
        for j in 0..dim {
            t.set(i, j, normal(rng));
        }
        t.set(i, c, t.get(i, c) + leak);
    }
    t
}

/// Picks a partner for `who` among `pool` (excluding `who`): with
/// probability `agree` from the same home class, otherwise from another.
fn pick_partner<R: Rng>(rng: &mut R, who: usize, pool: &[usize], home: &[usize], agree: Option<f64>) -> Option<usize> {
    let others: Vec<usize> = pool.iter().copied().filter(|&p| p != who).collect();
    if others.is_empty() {
        return None;
    }
    let Some(agree) = agree else {
        return others.choose(rng).copied();
    };
    let (same, diff): (Vec<usize>, Vec<usize>) = others.iter().partition(|&&p| home[p] == home[who]);
    let want_same = rng.random_bool(agree);
    let first = if want_same { &same } else { &diff };
    let fallback = if want_same { &diff } else { &same };
    first.choose(rng).or_else(|| fallback.choose(rng)).copied()
}

pub fn generate(spec: &SynthSpec) -> Result<(HeteroGraph, GroundTruth)> {
    spec.validate()?;
    let mut rng: ChaCha8Rng = rng::substream(spec.seed, rng::SYNTH);
    let c = spec.num_classes;
    let carrier = spec.carrier()?;
    let n_carriers = if carrier == VENUE { spec.venues } else { spec.terms };
    let carrier_class: Vec<usize> = (0..n_carriers).map(|v| v % c).collect();
    let by_class: Vec<Vec<usize>> = (0..c)
        .map(|k| (0..n_carriers).filter(|&v| carrier_class[v] == k).collect())
        .collect();

    let home: Vec<usize> = (0..spec.authors).map(|a| a % c).collect();
    let mut order: Vec<usize> = (0..spec.authors).collect();
    order.shuffle(&mut rng);
    let mut regime = vec![Regime::Train; spec.authors];
    for &a in &order[..spec.test_count()] {
        regime[a] = Regime::Test;
    }

    // lead papers: carriers drawn without repetition from the home class
    let n_papers = spec.authors * spec.papers_per_author;
    let mut writers: Vec<Vec<usize>> = vec![Vec::new(); n_papers];
    let mut venue_of = vec![0usize; n_papers];
    let mut terms_of: Vec<Vec<usize>> = vec![Vec::new(); n_papers];
    let mut led: Vec<Vec<usize>> = vec![Vec::new(); spec.authors];
    for a in 0..spec.authors {
        let pool = &by_class[home[a]];
        let offset = rng.random_range(0..pool.len());
        for k in 0..spec.papers_per_author {
            let p = a * spec.papers_per_author + k;
            writers[p].push(a);
            led[a].push(p);
            if carrier == VENUE {
                venue_of[p] = pool[(offset + k) % pool.len()];
                terms_of[p] = rand::seq::index::sample(&mut rng, spec.terms, spec.terms_per_paper).into_vec();
            } else {
                venue_of[p] = rng.random_range(0..spec.venues);
                terms_of[p] = (0..spec.terms_per_paper)
                    .map(|j| pool[(offset + k * spec.terms_per_paper + j) % pool.len()])
                    .collect();
            }
            terms_of[p].sort_unstable();
            terms_of[p].dedup();
        }
    }

    let members = |r: Regime| -> Vec<usize> { (0..spec.authors).filter(|&a| regime[a] == r).collect() };
    let (train_pool, test_pool) = (members(Regime::Train), members(Regime::Test));
    let mut partner = vec![None; spec.authors];
    for a in 0..spec.authors {
        let (pool, agree) = match regime[a] {
            Regime::Train => (&train_pool, Some(spec.spurious_strength)),
            Regime::Test => (&test_pool, spec.test_agreement),
        };
        partner[a] = pick_partner(&mut rng, a, pool, &home, agree);
        if let Some(p) = partner[a] {
            writers[led[a][0]].push(p);
        }
    }

    let mut papers_of: Vec<Vec<usize>> = vec![Vec::new(); spec.authors];
    for (p, ws) in writers.iter().enumerate() {
        for &a in ws {
            papers_of[a].push(p);
        }
    }
    let carriers_of = |p: usize| -> Vec<usize> {
        if carrier == VENUE {
            vec![venue_of[p]]
        } else {
            terms_of[p].clone()
        }
    };
    let records: Vec<AuthorRecord> = (0..spec.authors)
        .map(|a| {
            let set: BTreeSet<usize> = papers_of[a].iter().flat_map(|&p| carriers_of(p)).collect();
            let carriers: Vec<usize> = set.into_iter().collect();
            let classes: Vec<usize> = carriers.iter().map(|&v| carrier_class[v]).collect();
            AuthorRecord {
                home_class: home[a],
                regime: regime[a],
                led_papers: led[a].clone(),
                partner: partner[a],
                label: majority_class(&classes, c),
                carriers,
            }
        })
        .collect();

    let labels: Vec<usize> = records.iter().map(|r| r.label).collect();
    let leak = spec.noise;
    let author_x = leaky_features(&mut rng, &labels, spec.author_dim, leak);
    let paper_class: Vec<usize> = (0..n_papers)
        .map(|p| if carrier == VENUE { carrier_class[venue_of[p]] } else { home[writers[p][0]] })
        .collect();
    let paper_x = leaky_features(&mut rng, &paper_class, spec.paper_dim, leak);

    // carriers: exact one-hot class block plus noise; the other type leaks
    let block = |rng: &mut ChaCha8Rng, classes: &[usize], dim: usize| {
        let mut t = Tensor::zeros(&[classes.len(), dim]);
        for (i, &k) in classes.iter().enumerate() {
            for j in 0..dim {
                t.set(i, j, spec.noise * normal(rng));
            }
            t.set(i, k, t.get(i, k) + 1.0);
        }
        t
    };
    let venue_class: Vec<usize> = (0..spec.venues).map(|v| v % c).collect();
    let term_class: Vec<usize> = (0..spec.terms).map(|t| t % c).collect();
    let (term_x, venue_x) = if carrier == VENUE {
        let t = leaky_features(&mut rng, &term_class, spec.term_dim, leak);
        let v = block(&mut rng, &venue_class, c + spec.venue_extra_dim);
        (t, v)
    } else {
        let t = block(&mut rng, &term_class, spec.term_dim.max(c));
        let v = leaky_features(&mut rng, &venue_class, c + spec.venue_extra_dim, leak);
        (t, v)
    };

    let write: Vec<(usize, usize)> = writers
        .iter()
        .enumerate()
        .flat_map(|(p, ws)| ws.iter().map(move |&a| (a, p)))
        .collect();
    let published: Vec<(usize, usize)> = (0..n_papers).map(|p| (p, venue_of[p])).collect();
    let has_term: Vec<(usize, usize)> = terms_of
        .iter()
        .enumerate()
        .flat_map(|(p, ts)| ts.iter().map(move |&t| (p, t)))
        .collect();
    let inv = |e: &[(usize, usize)]| e.iter().map(|&(a, b)| (b, a)).collect::<Vec<_>>();
    let schema = synth_schema(c);
    let mut edges = vec![Vec::new(); schema.relations().len()];
    for (name, list) in [("write", &write), ("published_in", &published), ("has_term", &has_term)] {
        let r = schema.relation_index(name).expect("relation");
        let rev = schema.relations()[r].inverse;
        edges[rev] = inv(list);
        edges[r] = list.clone();
    }
    let mut features = vec![Tensor::zeros(&[0, 0]); 4];
    features[AUTHOR] = author_x;
    features[PAPER] = paper_x;
    features[TERM] = term_x;
    features[VENUE] = venue_x;
    let graph = HeteroGraph::new(schema, features, edges, labels.iter().map(|&l| Some(l)).collect())?;
    let truth = GroundTruth {
        spec: spec.clone(),
        causes: vec![spec.causal.clone()],
        spurious: spec.spurious.clone(),
        carrier_class,
        authors: records,
    };
    Ok((graph, truth))
}

/// Train/val (6:4) from the train regime, test from the test regime.
pub fn regime_split(truth: &GroundTruth, seed: u64) -> Result<SplitSpec> {
    let train = truth.regime_members(Regime::Train);
    let test = truth.regime_members(Regime::Test);
    if train.len() < 2 || test.is_empty() {
        return Err(Error::Generation("both regimes must be populated".into()));
    }
    split_larger_group(&train, test, "regime", seed)
}

/// Label agreement rate over `(lead, partner)` pairs whose lead is in `regime`.
pub fn coauthor_agreement(truth: &GroundTruth, regime: Regime) -> f64 {
    let pairs: Vec<(usize, usize)> = truth
        .coauthor_pairs()
        .into_iter()
        .filter(|&(a, _)| truth.authors[a].regime == regime)
        .collect();
    let agree = pairs
        .iter()
        .filter(|&&(a, p)| truth.authors[a].label == truth.authors[p].label)
        .count();
    agree as f64 / pairs.len().max(1) as f64
}

/// Writes the dataset, `ground-truth.json` and the regime `splits.json`.
pub fn write_dataset(graph: &HeteroGraph, truth: &GroundTruth, dir: &Path) -> Result<SplitSpec> {
    write_graph(graph, dir)?;
    truth.save(&dir.join(GROUND_TRUTH_FILE))?;
    let split = regime_split(truth, truth.spec.seed)?;
    split.save(&dir.join("splits.json"))?;
    Ok(split)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::exec::Exec;
    use crate::hetgraph::{enumerate_metapaths, NeighborOptions, PooledCache};

    fn small(seed: u64) -> SynthSpec {
        SynthSpec {
            authors: 200,
            seed,
            ..SynthSpec::default()
        }
    }

    #[test]
    fn labels_replay_from_record() {
        let (g, truth) = generate(&small(1)).unwrap();
        let replay = truth.replay_labels();
        let stored: Vec<usize> = g.labels().iter().map(|l| l.unwrap()).collect();
        assert_eq!(replay, stored);
    }

    #[test]
    fn majority_ties_low() {
        assert_eq!(majority_class(&[2, 1, 1, 2], 3), 1);
        assert_eq!(majority_class(&[2], 3), 2);
    }

    #[test]
    fn full_strength_train_agreement() {
        let spec = SynthSpec {
            authors: 1500,
            spurious_strength: 1.0,
            test_fraction: 0.25,
            seed: 3,
            ..SynthSpec::default()
        };
        let (_, truth) = generate(&spec).unwrap();
        // 1,000 pairs sampled from the train regime
        let mut r = rng::substream(9, "test");
        let pairs: Vec<(usize, usize)> = truth
            .coauthor_pairs()
            .into_iter()
            .filter(|&(a, _)| truth.authors[a].regime == Regime::Train)
            .collect();
        let sample: Vec<_> = (0..1000).map(|_| *pairs.choose(&mut r).unwrap()).collect();
        let agree = sample
            .iter()
            .filter(|&&(a, p)| truth.authors[a].label == truth.authors[p].label)
            .count() as f64
            / 1000.0;
        assert!((agree - 1.0).abs() <= 0.02, "{agree}");
        let test = coauthor_agreement(&truth, Regime::Test);
        assert!((test - 0.25).abs() < 0.1, "{test}");
    }

    fn pooled_apv_rule_accuracy(spec: &SynthSpec) -> f64 {
        let (g, _) = generate(spec).unwrap();
        let mps = enumerate_metapaths(g.schema(), g.target_type(), 2, false).unwrap();
        let cache = PooledCache::build(&g, &mps, NeighborOptions::default(), Exec::Sequential).unwrap();
        let j = cache.names().iter().position(|n| n == "APV").unwrap();
        let pooled = cache.full(j);
        let c = spec.num_classes;
        let correct = (0..g.num_targets())
            .filter(|&i| {
                let row = &pooled.row(i)[..c];
                let mut best = 0;
                for k in 1..c {
                    if row[k] > row[best] {
                        best = k;
                    }
                }
                best == g.label(i).unwrap()
            })
            .count();
        correct as f64 / g.num_targets() as f64
    }

    #[test]
    fn generative_rule_exact_at_zero_noise_and_degrades() {
        let acc: Vec<f64> = [0.0, 0.3, 0.6, 1.2]
            .iter()
            .map(|&noise| pooled_apv_rule_accuracy(&SynthSpec { noise, ..small(4) }))
            .collect();
        assert_eq!(acc[0], 1.0);
        assert!(acc.windows(2).all(|w| w[1] <= w[0] + 0.02), "{acc:?}");
        assert!(acc[3] < 0.95, "{acc:?}");
    }

    #[test]
    fn spurious_rule_predictive_on_train_only() {
        let (_, truth) = generate(&SynthSpec { authors: 900, ..small(5) }).unwrap();
        // predict a lead's label as its partner's label
        let acc = |regime| coauthor_agreement(&truth, regime);
        assert!(acc(Regime::Train) >= truth.spec.spurious_strength - 0.03);
        assert!(acc(Regime::Test) <= 1.0 / truth.spec.num_classes as f64 + 0.1);
    }

    #[test]
    fn regime_split_ratios() {
        let spec = SynthSpec {
            authors: 150,
            test_fraction: 1.0 / 3.0,
            ..small(6)
        };
        let (_, truth) = generate(&spec).unwrap();
        let s = regime_split(&truth, 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (60, 40, 50));
        assert!(s.test.iter().all(|&a| truth.authors[a].regime == Regime::Test));
    }

    #[test]
    fn apt_variant() {
        let spec = SynthSpec {
            causal: "APT".into(),
            noise: 0.0,
            ..small(7)
        };
        let (g, truth) = generate(&spec).unwrap();
        assert_eq!(truth.causes, vec!["APT"]);
        assert_eq!(truth.replay_labels().len(), g.num_targets());
    }

    #[test]
    fn infeasible_specs() {
        let bad = [
            SynthSpec { venues: 7, ..small(0) },
            SynthSpec { authors: 3, ..small(0) },
            SynthSpec { causal: "APA".into(), ..small(0) },
            SynthSpec { spurious: "APV".into(), causal: "APT".into(), ..small(0) },
            SynthSpec { spurious_strength: 1.5, ..small(0) },
            SynthSpec { test_fraction: 0.0, ..small(0) },
        ];
        for s in bad {
            assert!(matches!(generate(&s), Err(Error::Generation(_))), "{s:?}");
        }
    }

    #[test]
    fn byte_identical_directories() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for d in [&a, &b] {
            let (g, t) = generate(&small(8)).unwrap();
            write_dataset(&g, &t, d.path()).unwrap();
        }
        let mut names: Vec<_> = fs::read_dir(a.path()).unwrap().map(|e| e.unwrap().file_name()).collect();
        names.sort();
        assert!(names.len() >= 7);
        for n in names {
            assert_eq!(fs::read(a.path().join(&n)).unwrap(), fs::read(b.path().join(&n)).unwrap());
        }
        let back = crate::hetgraph::load_graph(a.path()).unwrap();
        assert_eq!(back.num_targets(), 200);
    }
}
