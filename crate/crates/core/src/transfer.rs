//! Extending a trained model to an unseen relation: code-only adaptation
//! with every other tensor frozen, and the variant that updates everything.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{contract, NamError, Result};
use crate::evaluator::{correct_at, evaluate, score_all, tune_threshold, Thresholds};
use crate::kb::{sample_negative, LabeledTriple, Triple, Vocabulary, EMBEDDING_INIT_RANGE};
use crate::math::{axpy, uniform_vector, Matrix, Rng, Vector};
use crate::model::{Mode, NamParams};
use crate::trainer::{sgd_step, Rates, TrainConfig};

pub const ADAPT_EPOCHS: usize = 50;

/// Fractions of the adaptation set used for learning curves.
pub const CURVE_FRACTIONS: [f64; 5] = [0.05, 0.1, 0.2, 0.5, 1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct AdaptConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub embedding_learning_rate: f64,
    pub dropout: f64,
    pub negatives_per_positive: usize,
    pub seed: u64,
}

impl From<&TrainConfig> for AdaptConfig {
    fn from(c: &TrainConfig) -> Self {
        AdaptConfig {
            epochs: ADAPT_EPOCHS,
            learning_rate: c.learning_rate,
            embedding_learning_rate: c.embedding_rate(),
            dropout: c.dropout,
            negatives_per_positive: c.negatives_per_positive,
            seed: c.seed,
        }
    }
}

impl AdaptConfig {
    fn rates(&self) -> Rates {
        Rates {
            network: self.learning_rate,
            embedding: self.embedding_learning_rate,
        }
    }
}

/// Outcome of code-only adaptation.
#[derive(Debug, Clone, PartialEq)]
pub struct CodeFit {
    pub code: Vector,
    /// The code before any update.
    pub initial: Vector,
    /// Threshold for the new relation, tuned on the adaptation positives
    /// and an equal draw of corruptions.
    pub threshold: f64,
    pub used: usize,
    pub dropped: usize,
    pub frozen_checksum: u64,
}

/// Adaptation samples whose entities the frozen model knows, relabelled to
/// the relation slot `relation`; returns the kept samples and the number
/// dropped.
pub fn usable_samples(samples: &[LabeledTriple], num_entities: usize, relation: usize) -> (Vec<LabeledTriple>, usize) {
    let kept: Vec<LabeledTriple> = samples
        .iter()
        .filter(|l| l.triple.head < num_entities && l.triple.tail < num_entities)
        .map(|l| LabeledTriple::new(Triple::new(l.triple.head, relation, l.triple.tail), l.label))
        .collect();
    let dropped = samples.len() - kept.len();
    (kept, dropped)
}

/// Parses `head<TAB>relation<TAB>tail[<TAB>label]` lines that must all
/// name `relation`. Lines with entities missing from `vocab` are skipped
/// and counted. Triples use `vocab.relations.len()` as the relation index.
pub fn parse_adaptation_samples(
    text: &str,
    source: &Path,
    vocab: &Vocabulary,
    relation: &str,
) -> Result<(Vec<LabeledTriple>, usize)> {
    let mut local = Vocabulary::new();
    let parsed = crate::kb::parse_triples(text, source, &mut local, crate::kb::VocabMode::Extend)?;
    let slot = vocab.relations.len();
    let mut kept = Vec::with_capacity(parsed.len());
    let mut dropped = 0;
    for l in parsed {
        let name = local.relations.name(l.triple.relation);
        if name != relation {
            return Err(NamError::Contract(format!(
                "adaptation sample names relation '{name}', expected only '{relation}'"
            )));
        }
        let head = vocab.entities.get(local.entities.name(l.triple.head));
        let tail = vocab.entities.get(local.entities.name(l.triple.tail));
        match (head, tail) {
            (Some(h), Some(t)) => kept.push(LabeledTriple::new(Triple::new(h, slot, t), l.label)),
            _ => dropped += 1,
        }
    }
    Ok((kept, dropped))
}

pub fn load_adaptation_samples(path: &Path, vocab: &Vocabulary, relation: &str) -> Result<(Vec<LabeledTriple>, usize)> {
    let text = std::fs::read_to_string(path).map_err(|e| NamError::io(path, e))?;
    parse_adaptation_samples(&text, path, vocab, relation)
}

/// Appends `code` as a new relation named `name`. Every other tensor is
/// copied unchanged.
pub fn extend_model(
    frozen: &NamParams,
    vocab: &Vocabulary,
    name: &str,
    code: &[f64],
) -> Result<(NamParams, Vocabulary)> {
    contract!(
        vocab.relations.get(name).is_none(),
        "relation '{name}' already exists in the model"
    );
    contract!(
        vocab.relations.len() == frozen.num_relations() && vocab.entities.len() == frozen.num_entities(),
        "vocabulary ({} entities, {} relations) does not match the model ({}, {})",
        vocab.entities.len(),
        vocab.relations.len(),
        frozen.num_entities(),
        frozen.num_relations()
    );
    let mut params = frozen.clone();
    params.relation_codes.push_row(code)?;
    let mut vocab = vocab.clone();
    vocab.relations.intern(name);
    Ok((params, vocab))
}

/// `frozen` plus `code` as the last relation row, without vocabulary
/// bookkeeping.
fn with_code(frozen: &NamParams, code: &[f64]) -> Result<NamParams> {
    let mut params = frozen.clone();
    params.relation_codes.push_row(code)?;
    Ok(params)
}

/// Checksum of `extended` with its last relation row removed.
fn checksum_without_last(extended: &NamParams) -> u64 {
    let mut p = extended.clone();
    let (rows, cols) = p.relation_codes.shape();
    let data = p.relation_codes.as_slice()[..(rows - 1) * cols].to_vec();
    p.relation_codes = Matrix::from_vec(rows - 1, cols, data).expect("shape is consistent");
    p.checksum()
}

fn positive_set(samples: &[LabeledTriple]) -> HashSet<Triple> {
    samples.iter().filter(|l| l.label).map(|l| l.triple).collect()
}

/// Threshold for the new relation: adaptation positives against one
/// corruption each, drawn from `rng`.
fn tune_new_threshold(params: &NamParams, samples: &[LabeledTriple], rng: &mut Rng) -> Result<f64> {
    let known = positive_set(samples);
    let mut scored = Vec::with_capacity(2 * samples.len());
    for l in samples {
        scored.push((params.score(l.triple)?, l.label));
        if l.label {
            let neg = sample_negative(l.triple, params.num_entities(), &known, rng)?;
            scored.push((params.score(neg)?, false));
        }
    }
    if !scored.iter().any(|s| !s.1) || !scored.iter().any(|s| s.1) {
        return Ok(0.5);
    }
    Ok(tune_threshold(&scored)?.value)
}

/// Learns a code for one new relation with everything else frozen.
///
/// Samples use relation index `frozen.num_relations()`; samples with
/// entities outside the model are dropped. The code starts uniform in
/// `[-0.1, 0.1]` and is trained by SGD on the log-likelihood for
/// `config.epochs` epochs at the embedding rate, with the same corruption
/// negatives as ordinary training.
pub fn learn_relation_code(frozen: &NamParams, samples: &[LabeledTriple], config: &AdaptConfig) -> Result<CodeFit> {
    let slot = frozen.num_relations();
    let (usable, dropped) = usable_samples(samples, frozen.num_entities(), slot);
    contract!(
        !usable.is_empty(),
        "no usable adaptation samples ({dropped} dropped for unknown entities)"
    );
    let base = Rng::new(config.seed);
    let initial = uniform_vector(frozen.net.code_dim(), EMBEDDING_INIT_RANGE, &mut base.derive(0));
    let frozen_checksum = frozen.checksum();
    let mut params = with_code(frozen, &initial)?;
    let known = positive_set(&usable);

    for epoch in 1..=config.epochs {
        let mut rng = base.derive(epoch as u64);
        let mut order: Vec<usize> = (0..usable.len()).collect();
        rng.shuffle(&mut order);
        for i in order {
            let l = usable[i];
            code_step(&mut params, l.triple, l.label, config, &mut rng)?;
            if l.label {
                for _ in 0..config.negatives_per_positive {
                    let neg = sample_negative(l.triple, params.num_entities(), &known, &mut rng)?;
                    code_step(&mut params, neg, false, config, &mut rng)?;
                }
            }
        }
    }
    contract!(
        checksum_without_last(&params) == frozen_checksum,
        "frozen parameters changed during code-only adaptation"
    );
    let threshold = tune_new_threshold(&params, &usable, &mut base.derive(u64::MAX))?;
    Ok(CodeFit {
        code: params.relation_codes.row(slot).to_vec(),
        initial,
        threshold,
        used: usable.len(),
        dropped,
        frozen_checksum,
    })
}

fn code_step(params: &mut NamParams, t: Triple, label: bool, config: &AdaptConfig, rng: &mut Rng) -> Result<()> {
    let cache = params.forward(
        t,
        Mode::Train {
            rng,
            dropout: config.dropout,
        },
    )?;
    let grads = params.backward(&cache, t, label)?;
    axpy(
        config.embedding_learning_rate,
        &grads.net.code,
        params.relation_codes.row_mut(t.relation),
    );
    Ok(())
}

/// Result of adapting with every parameter trainable.
#[derive(Debug, Clone, PartialEq)]
pub struct FullUpdate {
    /// Base model plus the new relation row, after training.
    pub params: NamParams,
    pub threshold: f64,
    pub used: usize,
    pub dropped: usize,
    /// Accuracy on the original-relation test set before and after, both
    /// with the base model's thresholds.
    pub orig_before: f64,
    pub orig_after: f64,
}

impl FullUpdate {
    pub fn orig_drop(&self) -> f64 {
        self.orig_before - self.orig_after
    }
}

/// Learns the new relation code while updating every network tensor and
/// embedding row as in ordinary training, then measures the damage on the
/// original relations.
pub fn full_update_transfer(
    base: &NamParams,
    samples: &[LabeledTriple],
    orig_test: &[LabeledTriple],
    orig_thresholds: &Thresholds,
    config: &AdaptConfig,
) -> Result<FullUpdate> {
    let slot = base.num_relations();
    let (usable, dropped) = usable_samples(samples, base.num_entities(), slot);
    contract!(
        !usable.is_empty(),
        "no usable adaptation samples ({dropped} dropped for unknown entities)"
    );
    contract!(
        orig_test.iter().all(|l| l.triple.relation < slot),
        "original-relation test set references the new relation"
    );
    let orig_before = evaluate(base, orig_test, orig_thresholds, 1)?.accuracy();
    let rng0 = Rng::new(config.seed);
    let initial = uniform_vector(base.net.code_dim(), EMBEDDING_INIT_RANGE, &mut rng0.derive(0));
    let mut params = with_code(base, &initial)?;
    let known = positive_set(&usable);
    let rates = config.rates();

    for epoch in 1..=config.epochs {
        let mut rng = rng0.derive(epoch as u64);
        let mut order: Vec<usize> = (0..usable.len()).collect();
        rng.shuffle(&mut order);
        for i in order {
            let l = usable[i];
            sgd_step(&mut params, l.triple, l.label, rates, config.dropout, &mut rng)?;
            if l.label {
                for _ in 0..config.negatives_per_positive {
                    let neg = sample_negative(l.triple, params.num_entities(), &known, &mut rng)?;
                    sgd_step(&mut params, neg, false, rates, config.dropout, &mut rng)?;
                }
            }
        }
    }
    let orig_after = evaluate(&params, orig_test, orig_thresholds, 1)?.accuracy();
    let threshold = tune_new_threshold(&params, &usable, &mut rng0.derive(u64::MAX))?;
    Ok(FullUpdate {
        params,
        threshold,
        used: usable.len(),
        dropped,
        orig_before,
        orig_after,
    })
}

/// Accuracy on `test` (all of the new relation) at `threshold`.
pub fn new_relation_accuracy(params: &NamParams, test: &[LabeledTriple], threshold: f64) -> Result<f64> {
    contract!(!test.is_empty(), "new-relation test set is empty");
    let scores = score_all(params, test, 1)?;
    let scored: Vec<(f64, bool)> = scores.into_iter().zip(test).map(|(s, l)| (s, l.label)).collect();
    Ok(correct_at(&scored, threshold) as f64 / scored.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurvePoint {
    pub fraction: f64,
    pub samples: usize,
    pub new_rel_acc: f64,
    pub orig_rel_acc: f64,
}

/// Code-only learning curve: for each fraction, adapts on that leading
/// share of a seeded shuffle of `samples` and scores the new relation on
/// `new_test` and the original relations on `orig_test`.
pub fn learning_curve(
    frozen: &NamParams,
    samples: &[LabeledTriple],
    new_test: &[LabeledTriple],
    orig_test: &[LabeledTriple],
    orig_thresholds: &Thresholds,
    fractions: &[f64],
    config: &AdaptConfig,
) -> Result<Vec<CurvePoint>> {
    contract!(
        fractions.iter().all(|&f| f > 0.0 && f <= 1.0),
        "learning-curve fractions must lie in (0, 1]"
    );
    let slot = frozen.num_relations();
    let mut order: Vec<LabeledTriple> = samples.to_vec();
    Rng::new(config.seed).derive(1 << 32).shuffle(&mut order);
    let new_test: Vec<LabeledTriple> = usable_samples(new_test, frozen.num_entities(), slot).0;
    let mut out = Vec::with_capacity(fractions.len());
    for &fraction in fractions {
        let n = ((fraction * order.len() as f64).ceil() as usize).clamp(1, order.len());
        let fit = learn_relation_code(frozen, &order[..n], config)?;
        let params = with_code(frozen, &fit.code)?;
        let mut thresholds = orig_thresholds.clone();
        thresholds.per_relation.insert(slot, fit.threshold);
        out.push(CurvePoint {
            fraction,
            samples: n,
            new_rel_acc: new_relation_accuracy(&params, &new_test, fit.threshold)?,
            orig_rel_acc: evaluate(&params, orig_test, &thresholds, 1)?.accuracy(),
        });
    }
    Ok(out)
}

pub fn curve_csv(points: &[CurvePoint]) -> String {
    let mut out = String::from("fraction,new_rel_acc,orig_rel_acc\n");
    for p in points {
        let _ = writeln!(out, "{},{:.6},{:.6}", p.fraction, p.new_rel_acc, p.orig_rel_acc);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelShape, Variant};

    fn tiny(variant: Variant) -> (NamParams, Vocabulary) {
        let mut vocab = Vocabulary::new();
        for e in ["a", "b", "c", "d", "e"] {
            vocab.entities.intern(e);
        }
        vocab.relations.intern("r0");
        vocab.relations.intern("r1");
        let shape = ModelShape {
            variant,
            entity_dim: 4,
            relation_dim: 3,
            hidden: vec![5, 5],
        };
        let params = NamParams::init(&shape, &vocab, None, &mut Rng::new(3)).unwrap();
        (params, vocab)
    }

    fn samples(slot: usize) -> Vec<LabeledTriple> {
        [(0, 1), (1, 2), (2, 3), (3, 4)]
            .iter()
            .map(|&(h, t)| LabeledTriple::new(Triple::new(h, slot, t), true))
            .collect()
    }

    fn config(epochs: usize) -> AdaptConfig {
        AdaptConfig {
            epochs,
            learning_rate: 0.1,
            embedding_learning_rate: 0.1,
            dropout: 0.0,
            negatives_per_positive: 1,
            seed: 9,
        }
    }

    #[test]
    fn zero_epochs_keep_the_initial_code() {
        let (p, _) = tiny(Variant::Rmnn);
        let fit = learn_relation_code(&p, &samples(2), &config(0)).unwrap();
        assert_eq!(fit.code, fit.initial);
        assert!(fit.initial.iter().all(|x| x.abs() <= EMBEDDING_INIT_RANGE));
    }

    #[test]
    fn code_only_changes_exactly_the_code() {
        for variant in [Variant::Dnn, Variant::Rmnn] {
            let (p, _) = tiny(variant);
            let fit = learn_relation_code(&p, &samples(2), &config(5)).unwrap();
            assert_eq!(fit.frozen_checksum, p.checksum());
            let before = with_code(&p, &fit.initial).unwrap();
            let after = with_code(&p, &fit.code).unwrap();
            assert_eq!(before.count_changed(&after), 3);
            for h in 0..5 {
                for t in 0..5 {
                    for r in 0..2 {
                        let x = Triple::new(h, r, t);
                        assert_eq!(p.score(x).unwrap().to_bits(), after.score(x).unwrap().to_bits());
                    }
                }
            }
        }
    }

    #[test]
    fn oov_samples_are_dropped_and_counted() {
        let (p, _) = tiny(Variant::Dnn);
        let mut s = samples(2);
        s.push(LabeledTriple::new(Triple::new(0, 2, 17), true));
        let fit = learn_relation_code(&p, &s, &config(1)).unwrap();
        assert_eq!((fit.used, fit.dropped), (4, 1));
        let all_oov = vec![LabeledTriple::new(Triple::new(9, 2, 17), true)];
        assert!(matches!(
            learn_relation_code(&p, &all_oov, &config(1)),
            Err(NamError::Contract(_))
        ));
    }

    #[test]
    fn extend_adds_one_relation_and_rejects_collisions() {
        let (p, vocab) = tiny(Variant::Rmnn);
        let code = vec![0.05, -0.02, 0.07];
        let (ext, v2) = extend_model(&p, &vocab, "new", &code).unwrap();
        assert_eq!(ext.num_relations(), p.num_relations() + 1);
        assert_eq!(v2.relations.get("new"), Some(2));
        let old = Triple::new(0, 1, 3);
        assert_eq!(p.score(old).unwrap().to_bits(), ext.score(old).unwrap().to_bits());

        let fresh = Triple::new(0, 2, 3);
        let mut bumped = ext.clone();
        bumped.relation_codes.row_mut(2)[0] += 0.5;
        assert_ne!(ext.score(fresh).unwrap(), bumped.score(fresh).unwrap());

        assert!(extend_model(&p, &vocab, "r1", &code).is_err());
    }

    #[test]
    fn full_update_with_zero_epochs_keeps_accuracy() {
        let (p, _) = tiny(Variant::Dnn);
        let test = vec![
            LabeledTriple::new(Triple::new(0, 0, 1), true),
            LabeledTriple::new(Triple::new(0, 0, 2), false),
            LabeledTriple::new(Triple::new(1, 1, 2), true),
        ];
        let th = Thresholds::global(0.5);
        let out = full_update_transfer(&p, &samples(2), &test, &th, &config(0)).unwrap();
        assert_eq!(out.orig_before, out.orig_after);
        let moved = full_update_transfer(&p, &samples(2), &test, &th, &config(3)).unwrap();
        assert!(
            moved
                .params
                .count_changed(&with_code(&p, moved.params.relation_codes.row(2)).unwrap())
                > 0
        );
    }

    #[test]
    fn parses_samples_against_a_frozen_vocabulary() {
        let (_, vocab) = tiny(Variant::Dnn);
        let text = "a\tnew\tb\nz\tnew\tb\nc\tnew\td\t0\n";
        let (kept, dropped) = parse_adaptation_samples(text, Path::new("x"), &vocab, "new").unwrap();
        assert_eq!(dropped, 1);
        assert_eq!(
            kept,
            vec![
                LabeledTriple::new(Triple::new(0, 2, 1), true),
                LabeledTriple::new(Triple::new(2, 2, 3), false),
            ]
        );
        assert!(parse_adaptation_samples("a\tr0\tb\n", Path::new("x"), &vocab, "new").is_err());
    }

    #[test]
    fn curve_csv_has_one_row_per_fraction() {
        let (p, _) = tiny(Variant::Rmnn);
        let test = samples(2);
        let mut new_test = test.clone();
        new_test.push(LabeledTriple::new(Triple::new(4, 2, 0), false));
        let orig = vec![
            LabeledTriple::new(Triple::new(0, 0, 1), true),
            LabeledTriple::new(Triple::new(0, 0, 2), false),
        ];
        let pts = learning_curve(
            &p,
            &test,
            &new_test,
            &orig,
            &Thresholds::global(0.5),
            &[0.5, 1.0],
            &config(2),
        )
        .unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[0].samples, 2);
        assert_eq!(pts[0].orig_rel_acc, pts[1].orig_rel_acc);
        let csv = curve_csv(&pts);
        assert!(csv.starts_with("fraction,new_rel_acc,orig_rel_acc\n0.5,"));
        assert_eq!(csv.lines().count(), 3);
    }
}
