//! Triple classification: dev-tuned decision thresholds and accuracy
//! reports (overall, per class, per relation).

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{contract, Result};
use crate::kb::{LabeledTriple, Vocabulary};
use crate::model::NamParams;

/// A tuned threshold together with the dev accuracy it achieved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TunedThreshold {
    pub value: f64,
    pub correct: usize,
    pub total: usize,
}

impl TunedThreshold {
    pub fn accuracy(&self) -> f64 {
        self.correct as f64 / self.total as f64
    }
}

/// `score >= threshold` is a positive decision.
pub fn classify(score: f64, threshold: f64) -> bool {
    score >= threshold
}

/// Correct decisions over `scored` at `threshold`.
pub fn correct_at(scored: &[(f64, bool)], threshold: f64) -> usize {
    scored.iter().filter(|&&(s, y)| classify(s, threshold) == y).count()
}

/// Best-accuracy threshold over candidates: a sentinel below the minimum
/// score, midpoints between adjacent distinct scores and a sentinel above
/// the maximum. Ties go to the smallest candidate.
pub fn tune_threshold(dev: &[(f64, bool)]) -> Result<TunedThreshold> {
    contract!(!dev.is_empty(), "threshold tuning needs a nonempty dev set");
    contract!(
        dev.iter().any(|d| d.1) && dev.iter().any(|d| !d.1),
        "threshold tuning needs both labels in the dev set"
    );
    contract!(dev.iter().all(|d| d.0.is_finite()), "non-finite score in dev set");
    let mut sorted = dev.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));

    // threshold below everything: every example is called positive
    let mut correct = sorted.iter().filter(|d| d.1).count() as i64;
    let mut best = TunedThreshold {
        value: sorted[0].0 - 1.0,
        correct: correct as usize,
        total: sorted.len(),
    };
    let mut i = 0;
    while i < sorted.len() {
        let s = sorted[i].0;
        let mut j = i;
        while j < sorted.len() && sorted[j].0 == s {
            // passing this score flips its examples to negative
            correct += if sorted[j].1 { -1 } else { 1 };
            j += 1;
        }
        let value = if j < sorted.len() {
            let next = sorted[j].0;
            let mid = (s + next) / 2.0;
            // adjacent floats can round the midpoint down onto s
            if mid > s {
                mid
            } else {
                next
            }
        } else {
            s + 1.0
        };
        if correct as usize > best.correct {
            best.value = value;
            best.correct = correct as usize;
        }
        i = j;
    }
    Ok(best)
}

/// Global threshold, optionally overridden per relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub global: f64,
    pub per_relation: BTreeMap<usize, f64>,
}

impl Thresholds {
    pub fn global(value: f64) -> Self {
        Thresholds {
            global: value,
            per_relation: BTreeMap::new(),
        }
    }

    pub fn for_relation(&self, relation: usize) -> f64 {
        self.per_relation.get(&relation).copied().unwrap_or(self.global)
    }
}

/// Scores every triple in infer mode, fanning out over `threads` workers.
/// Output order matches input order.
pub fn score_all(params: &NamParams, triples: &[LabeledTriple], threads: usize) -> Result<Vec<f64>> {
    let threads = threads.max(1);
    if threads == 1 || triples.len() < 2 * threads {
        return triples.iter().map(|l| params.score(l.triple)).collect();
    }
    let chunk = triples.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = triples
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|l| params.score(l.triple))
                        .collect::<Result<Vec<f64>>>()
                })
            })
            .collect();
        let mut out = Vec::with_capacity(triples.len());
        for h in handles {
            out.extend(h.join().expect("scoring worker panicked")?);
        }
        Ok(out)
    })
}

/// Tunes the global threshold on `dev`; with `per_relation`, also tunes
/// one threshold per relation that has both labels in `dev`.
pub fn tune_thresholds(
    params: &NamParams,
    dev: &[LabeledTriple],
    per_relation: bool,
    threads: usize,
) -> Result<Thresholds> {
    let scores = score_all(params, dev, threads)?;
    let scored: Vec<(f64, bool)> = scores.iter().zip(dev).map(|(&s, l)| (s, l.label)).collect();
    let mut thresholds = Thresholds::global(tune_threshold(&scored)?.value);
    if per_relation {
        let mut groups: BTreeMap<usize, Vec<(f64, bool)>> = BTreeMap::new();
        for (s, l) in scored.iter().zip(dev) {
            groups.entry(l.triple.relation).or_default().push(*s);
        }
        for (rel, group) in groups {
            if let Ok(t) = tune_threshold(&group) {
                thresholds.per_relation.insert(rel, t.value);
            }
        }
    }
    Ok(thresholds)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub correct: usize,
    pub total: usize,
}

impl Tally {
    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }

    fn add(&mut self, ok: bool) {
        self.total += 1;
        self.correct += usize::from(ok);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub threshold: f64,
    pub overall: Tally,
    pub positive: Tally,
    pub negative: Tally,
    /// Keyed by relation index.
    pub per_relation: BTreeMap<usize, Tally>,
}

impl EvalReport {
    pub fn accuracy(&self) -> f64 {
        self.overall.accuracy()
    }

    /// `T,overall,pos_acc,neg_acc`.
    pub fn summary_line(&self) -> String {
        format!(
            "{},{},{},{}",
            self.threshold,
            self.overall.accuracy(),
            self.positive.accuracy(),
            self.negative.accuracy()
        )
    }

    /// `relation,count,accuracy` with a header row.
    pub fn relations_csv(&self, vocab: &Vocabulary) -> String {
        let mut out = String::from("relation,count,accuracy\n");
        for (&rel, tally) in &self.per_relation {
            let name = if rel < vocab.relations.len() {
                vocab.relations.name(rel).to_owned()
            } else {
                rel.to_string()
            };
            writeln!(out, "{},{},{}", name, tally.total, tally.accuracy()).expect("write to String");
        }
        out
    }
}

/// Aggregates decisions for already-computed scores.
pub fn report_from_scores(scores: &[f64], test: &[LabeledTriple], thresholds: &Thresholds) -> Result<EvalReport> {
    contract!(!test.is_empty(), "evaluation needs a nonempty test set");
    contract!(scores.len() == test.len(), "one score per test triple required");
    let mut report = EvalReport {
        threshold: thresholds.global,
        overall: Tally::default(),
        positive: Tally::default(),
        negative: Tally::default(),
        per_relation: BTreeMap::new(),
    };
    for (&s, l) in scores.iter().zip(test) {
        let ok = classify(s, thresholds.for_relation(l.triple.relation)) == l.label;
        report.overall.add(ok);
        if l.label {
            report.positive.add(ok);
        } else {
            report.negative.add(ok);
        }
        report.per_relation.entry(l.triple.relation).or_default().add(ok);
    }
    Ok(report)
}

pub fn evaluate(
    params: &NamParams,
    test: &[LabeledTriple],
    thresholds: &Thresholds,
    threads: usize,
) -> Result<EvalReport> {
    contract!(!test.is_empty(), "evaluation needs a nonempty test set");
    let scores = score_all(params, test, threads)?;
    report_from_scores(&scores, test, thresholds)
}
