//! Planted-rule synthetic knowledge bases.
//!
//! Entities are split into equal-size clusters. Every relation reaches a
//! random subset of tail clusters (a `rule_density` fraction of them) and
//! maps each head cluster to one cluster of that subset; `(h, r, t)` is true
//! exactly when `cluster(t)` is the image of `cluster(h)` under `r`. The
//! tail is therefore determined by the head's cluster, which gives models a
//! learnable ground truth.

use std::collections::HashSet;
use std::path::Path;

use crate::error::{contract, NamError, Result};
use crate::kb::{write_triples, LabeledTriple, Triple, Vocabulary};
use crate::math::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub relations: usize,
    pub entities: usize,
    pub clusters: usize,
    /// Fraction of tail clusters each relation can reach.
    pub rule_density: f64,
    /// Training positives.
    pub positives: usize,
    /// Positives in each of dev and test; each gets one negative.
    pub dev_positives: usize,
    pub test_positives: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            relations: 6,
            entities: 200,
            clusters: 3,
            rule_density: 0.6,
            positives: 2000,
            dev_positives: 400,
            test_positives: 400,
            seed: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantedRule {
    pub cluster_of: Vec<usize>,
    /// `edges[r][a][b]`: head cluster `a` admits tail cluster `b` under `r`.
    pub edges: Vec<Vec<Vec<bool>>>,
}

impl PlantedRule {
    pub fn holds(&self, t: Triple) -> bool {
        t.head != t.tail && self.edges[t.relation][self.cluster_of[t.head]][self.cluster_of[t.tail]]
    }
}

#[derive(Debug, Clone)]
pub struct SynthKb {
    pub vocab: Vocabulary,
    /// Positives only.
    pub train: Vec<LabeledTriple>,
    /// One rule-violating tail corruption per positive.
    pub dev: Vec<LabeledTriple>,
    pub test: Vec<LabeledTriple>,
    pub rule: PlantedRule,
}

/// Base KB without one relation, plus that relation's data re-indexed as
/// the relation appended after the base vocabulary.
#[derive(Debug, Clone)]
pub struct HeldOut {
    pub base_vocab: Vocabulary,
    pub base_train: Vec<LabeledTriple>,
    pub base_dev: Vec<LabeledTriple>,
    pub base_test: Vec<LabeledTriple>,
    pub relation_name: String,
    /// Training positives of the held-out relation.
    pub adapt: Vec<LabeledTriple>,
    /// Labeled dev+test triples of the held-out relation.
    pub new_test: Vec<LabeledTriple>,
}

pub fn generate(config: &SynthConfig) -> Result<SynthKb> {
    contract!(
        config.relations >= 1 && config.clusters >= 2 && config.entities >= 2 * config.clusters,
        "synthetic KB needs >= 1 relation, >= 2 clusters and >= 2 entities per cluster"
    );
    contract!(
        config.rule_density > 0.0 && config.rule_density <= 1.0,
        "rule density {} outside (0, 1]",
        config.rule_density
    );
    let mut rng = Rng::new(config.seed);

    let mut order: Vec<usize> = (0..config.entities).collect();
    rng.shuffle(&mut order);
    let mut cluster_of = vec![0; config.entities];
    for (slot, &e) in order.iter().enumerate() {
        cluster_of[e] = slot % config.clusters;
    }
    let k = config.clusters;
    // Each relation reaches a random subset of tail clusters; every head
    // cluster is mapped to one of them, and every member of the subset is
    // used when there are enough head clusters.
    let reach = ((config.rule_density * k as f64).round() as usize).clamp(1, k);
    let edges: Vec<Vec<Vec<bool>>> = (0..config.relations)
        .map(|_| {
            let mut range: Vec<usize> = (0..k).collect();
            rng.shuffle(&mut range);
            range.truncate(reach);
            let mut heads: Vec<usize> = (0..k).collect();
            rng.shuffle(&mut heads);
            let mut rows = vec![vec![false; k]; k];
            for (i, &a) in heads.iter().enumerate() {
                let b = if i < reach { range[i] } else { range[rng.below(reach)] };
                rows[a][b] = true;
            }
            rows
        })
        .collect();
    let rule = PlantedRule { cluster_of, edges };

    // Heads are dealt round-robin and each picks its least-used admissible
    // tail, so every entity gets a near-equal share of observations.
    let admissible: Vec<Vec<Vec<usize>>> = (0..config.relations)
        .map(|r| {
            (0..config.entities)
                .map(|h| {
                    (0..config.entities)
                        .filter(|&t| rule.holds(Triple::new(h, r, t)))
                        .collect()
                })
                .collect()
        })
        .collect();
    let total = config.positives + config.dev_positives + config.test_positives;
    let capacity: usize = admissible.iter().flatten().map(Vec::len).sum();
    contract!(
        capacity >= total,
        "planted rule admits only {capacity} true triples, {total} requested"
    );
    let mut seen = HashSet::with_capacity(total);
    let mut truth = Vec::with_capacity(total);
    let mut heads: Vec<usize> = Vec::new();
    let mut tail_uses = vec![0usize; config.entities];
    while truth.len() < total {
        if heads.is_empty() {
            heads = (0..config.entities).collect();
            rng.shuffle(&mut heads);
        }
        let h = heads.pop().unwrap_or_default();
        let open: Vec<Triple> = (0..config.relations)
            .flat_map(|r| admissible[r][h].iter().map(move |&t| Triple::new(h, r, t)))
            .filter(|t| !seen.contains(t))
            .collect();
        let Some(least) = open.iter().map(|t| tail_uses[t.tail]).min() else {
            continue;
        };
        let open: Vec<Triple> = open.into_iter().filter(|t| tail_uses[t.tail] == least).collect();
        let t = open[rng.below(open.len())];
        tail_uses[t.tail] += 1;
        seen.insert(t);
        truth.push(t);
    }
    rng.shuffle(&mut truth);

    let n_train = config.positives;
    let n_dev = config.dev_positives;
    let mut with_negatives = |positives: &[Triple]| -> Vec<LabeledTriple> {
        let mut out = Vec::with_capacity(2 * positives.len());
        for &p in positives {
            out.push(LabeledTriple::new(p, true));
            let neg = loop {
                let t = Triple::new(p.head, p.relation, rng.below(config.entities));
                if !rule.holds(t) && t.tail != p.tail {
                    break t;
                }
            };
            out.push(LabeledTriple::new(neg, false));
        }
        out
    };
    let dev = with_negatives(&truth[n_train..n_train + n_dev]);
    let test = with_negatives(&truth[n_train + n_dev..]);
    let train = truth[..n_train].iter().map(|&t| LabeledTriple::new(t, true)).collect();

    let mut vocab = Vocabulary::new();
    for e in 0..config.entities {
        vocab.entities.intern(&format!("ent{e}"));
    }
    for r in 0..config.relations {
        vocab.relations.intern(&format!("rel{r}"));
    }
    Ok(SynthKb {
        vocab,
        train,
        dev,
        test,
        rule,
    })
}

impl SynthKb {
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| NamError::io(dir, e))?;
        write_triples(&dir.join("train.tsv"), &self.vocab, &self.train)?;
        write_triples(&dir.join("dev.tsv"), &self.vocab, &self.dev)?;
        write_triples(&dir.join("test.tsv"), &self.vocab, &self.test)
    }

    pub fn hold_out(&self, relation: usize) -> Result<HeldOut> {
        contract!(
            relation < self.vocab.relations.len() && self.vocab.relations.len() >= 2,
            "cannot hold out relation {relation} of {}",
            self.vocab.relations.len()
        );
        let mut base_vocab = Vocabulary::new();
        base_vocab.entities = self.vocab.entities.clone();
        for (i, name) in self.vocab.relations.iter().enumerate() {
            if i != relation {
                base_vocab.relations.intern(name);
            }
        }
        let new_index = base_vocab.relations.len();
        let remap = |l: &LabeledTriple| {
            let r = l.triple.relation;
            let idx = match r.cmp(&relation) {
                std::cmp::Ordering::Less => r,
                std::cmp::Ordering::Greater => r - 1,
                std::cmp::Ordering::Equal => new_index,
            };
            LabeledTriple::new(Triple::new(l.triple.head, idx, l.triple.tail), l.label)
        };
        let split = |data: &[LabeledTriple]| -> (Vec<LabeledTriple>, Vec<LabeledTriple>) {
            data.iter().map(remap).partition(|l| l.triple.relation != new_index)
        };
        let (base_train, adapt) = split(&self.train);
        let (base_dev, mut new_test) = split(&self.dev);
        let (base_test, more) = split(&self.test);
        new_test.extend(more);
        Ok(HeldOut {
            base_vocab,
            base_train,
            base_dev,
            base_test,
            relation_name: self.vocab.relations.name(relation).to_owned(),
            adapt,
            new_test,
        })
    }
}

/// Distinct triples, for overlap checks.
pub fn triple_set(data: &[LabeledTriple]) -> HashSet<Triple> {
    data.iter().map(|l| l.triple).collect()
}
