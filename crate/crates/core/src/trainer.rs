//! Maximum-likelihood SGD with tail-corruption negatives, dropout and
//! dev-driven learning-rate halving, plus a finite-difference gradient
//! check harness.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use crate::error::{contract, Result};
use crate::evaluator::{evaluate, tune_thresholds, Thresholds};
use crate::kb::{sample_negative, LabeledTriple, Triple, Vocabulary, WordVectorTable};
use crate::math::{uniform_vector, Rng};
use crate::model::{example_log_likelihood, Gradients, Mode, ModelShape, NamParams, ParamClass, Variant};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub variant: Variant,
    pub entity_dim: usize,
    pub relation_dim: usize,
    pub hidden_layers: usize,
    pub hidden_width: usize,
    pub learning_rate: f64,
    /// Step size for `V1`, `V2` and `C`; `None` means `learning_rate`.
    pub embedding_learning_rate: Option<f64>,
    pub dropout: f64,
    pub max_epochs: usize,
    pub negatives_per_positive: usize,
    pub seed: u64,
    /// Scoring workers for dev evaluation between epochs.
    pub threads: usize,
    pub per_relation_threshold: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Rmnn,
            entity_dim: 100,
            relation_dim: 50,
            hidden_layers: 2,
            hidden_width: 100,
            learning_rate: 0.1,
            embedding_learning_rate: None,
            dropout: 0.2,
            max_epochs: 30,
            negatives_per_positive: 1,
            seed: 1,
            threads: 1,
            per_relation_threshold: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let emb = self.embedding_rate();
        contract!(
            self.learning_rate > 0.0 && emb > 0.0 && self.learning_rate.is_finite() && emb.is_finite(),
            "learning rates must be positive (network {}, embeddings {emb})",
            self.learning_rate
        );
        contract!(
            (0.0..1.0).contains(&self.dropout),
            "dropout rate {} outside [0, 1)",
            self.dropout
        );
        contract!(self.hidden_layers >= 1, "need at least one hidden layer");
        contract!(
            self.entity_dim >= 1 && self.relation_dim >= 1 && self.hidden_width >= 1,
            "dimensions must be positive"
        );
        Ok(())
    }

    pub fn embedding_rate(&self) -> f64 {
        self.embedding_learning_rate.unwrap_or(self.learning_rate)
    }

    pub fn shape(&self) -> ModelShape {
        ModelShape {
            variant: self.variant,
            entity_dim: self.entity_dim,
            relation_dim: self.relation_dim,
            hidden: vec![self.hidden_width; self.hidden_layers],
        }
    }
}

/// Step sizes in effect for one epoch.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rates {
    pub network: f64,
    pub embedding: f64,
}

impl Rates {
    pub fn from_config(config: &TrainConfig) -> Self {
        Rates {
            network: config.learning_rate,
            embedding: config.embedding_rate(),
        }
    }

    pub fn halved(self) -> Self {
        Rates {
            network: self.network * 0.5,
            embedding: self.embedding * 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub log_likelihood: f64,
    pub dev_accuracy: f64,
    pub learning_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
    /// 1-based epoch whose parameters were kept.
    pub best_epoch: usize,
    pub thresholds: Thresholds,
}

impl TrainReport {
    pub fn final_epoch(&self) -> usize {
        self.epochs.last().map_or(0, |e| e.epoch)
    }

    pub fn best_dev_accuracy(&self) -> f64 {
        self.epochs
            .iter()
            .find(|e| e.epoch == self.best_epoch)
            .map_or(0.0, |e| e.dev_accuracy)
    }

    /// `epoch,loglik,dev_acc,lr`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,loglik,dev_acc,lr\n");
        for e in &self.epochs {
            writeln!(
                out,
                "{},{},{},{}",
                e.epoch, e.log_likelihood, e.dev_accuracy, e.learning_rate
            )
            .expect("write to String");
        }
        out
    }
}

/// `Σ ln f(x+) + Σ ln(1 - f(x-))` in infer mode, `f` clamped away from 0 and 1.
pub fn log_likelihood(params: &NamParams, positives: &[Triple], negatives: &[Triple]) -> Result<f64> {
    contract!(
        !positives.is_empty() || !negatives.is_empty(),
        "log-likelihood over an empty sample"
    );
    let mut total = 0.0;
    for (list, label) in [(positives, true), (negatives, false)] {
        for &t in list {
            total += example_log_likelihood(params.score(t)?, label);
        }
    }
    Ok(total)
}

/// One forward/backward/update on a single example.
pub fn sgd_step(
    params: &mut NamParams,
    t: Triple,
    label: bool,
    rates: Rates,
    dropout: f64,
    rng: &mut Rng,
) -> Result<()> {
    let cache = params.forward(t, Mode::Train { rng, dropout })?;
    let grads = params.backward(&cache, t, label)?;
    params.apply(&grads, rates.network, rates.embedding);
    Ok(())
}

/// One pass of pure SGD over shuffled positives. Each positive is followed
/// by `negatives_per_positive` fresh tail corruptions; returns the
/// negatives drawn.
pub fn train_epoch(
    params: &mut NamParams,
    positives: &[Triple],
    known_positives: &HashSet<Triple>,
    config: &TrainConfig,
    rates: Rates,
    rng: &mut Rng,
) -> Result<Vec<Triple>> {
    let mut order: Vec<usize> = (0..positives.len()).collect();
    rng.shuffle(&mut order);
    let mut negatives = Vec::with_capacity(positives.len() * config.negatives_per_positive);
    for i in order {
        let pos = positives[i];
        sgd_step(params, pos, true, rates, config.dropout, rng)?;
        for _ in 0..config.negatives_per_positive {
            let neg = sample_negative(pos, params.num_entities(), known_positives, rng)?;
            sgd_step(params, neg, false, rates, config.dropout, rng)?;
            negatives.push(neg);
        }
    }
    Ok(negatives)
}

/// Full-batch gradient ascent: sums infer-mode gradients over every
/// example, then takes one step.
pub fn batch_ascent_step(params: &mut NamParams, positives: &[Triple], negatives: &[Triple], rate: f64) -> Result<()> {
    let mut all: Vec<Gradients> = Vec::with_capacity(positives.len() + negatives.len());
    for (list, label) in [(positives, true), (negatives, false)] {
        for &t in list {
            let cache = params.forward(t, Mode::Infer)?;
            all.push(params.backward(&cache, t, label)?);
        }
    }
    for g in &all {
        params.apply(g, rate, rate);
    }
    Ok(())
}

/// Trains from scratch, keeping the parameters of the best dev epoch.
///
/// Dev accuracy is measured after each epoch with a freshly tuned
/// threshold; whenever it falls below the best so far, both step sizes are
/// halved for the following epochs. Only positive training triples are
/// used; negatives are corruptions filtered against them.
pub fn fit(
    train: &[LabeledTriple],
    dev: &[LabeledTriple],
    vocab: &Vocabulary,
    words: Option<&WordVectorTable>,
    config: &TrainConfig,
) -> Result<(NamParams, TrainReport)> {
    config.validate()?;
    let positives: Vec<Triple> = train.iter().filter(|l| l.label).map(|l| l.triple).collect();
    contract!(!positives.is_empty(), "training set has no positive triples");
    contract!(
        dev.iter().any(|l| l.label) && dev.iter().any(|l| !l.label),
        "dev set must contain both labels"
    );
    let base = Rng::new(config.seed);
    let mut params = NamParams::init(&config.shape(), vocab, words, &mut base.derive(0))?;
    fit_from(&mut params, &positives, dev, config, &base)
}

/// The epoch loop of [`fit`] starting from existing parameters, which are
/// left at their last-epoch values; the best snapshot is returned.
pub fn fit_from(
    params: &mut NamParams,
    positives: &[Triple],
    dev: &[LabeledTriple],
    config: &TrainConfig,
    base: &Rng,
) -> Result<(NamParams, TrainReport)> {
    let known: HashSet<Triple> = positives.iter().copied().collect();
    let mut rates = Rates::from_config(config);
    let mut best: Option<(f64, usize, NamParams, Thresholds)> = None;
    let mut epochs = Vec::with_capacity(config.max_epochs);
    for epoch in 1..=config.max_epochs {
        let mut rng = base.derive(epoch as u64);
        let negatives = train_epoch(params, positives, &known, config, rates, &mut rng)?;
        let ll = log_likelihood(params, positives, &negatives)?;
        let thresholds = tune_thresholds(params, dev, config.per_relation_threshold, config.threads)?;
        let acc = evaluate(params, dev, &thresholds, config.threads)?.accuracy();
        epochs.push(EpochRecord {
            epoch,
            log_likelihood: ll,
            dev_accuracy: acc,
            learning_rate: rates.network,
        });
        match &best {
            Some((best_acc, ..)) if acc <= *best_acc => {
                if acc < *best_acc {
                    rates = rates.halved();
                }
            }
            _ => best = Some((acc, epoch, params.clone(), thresholds)),
        }
    }
    let (_, best_epoch, snapshot, thresholds) = match best {
        Some(b) => b,
        None => {
            let thresholds = tune_thresholds(params, dev, config.per_relation_threshold, config.threads)?;
            (0.0, 0, params.clone(), thresholds)
        }
    };
    Ok((
        snapshot,
        TrainReport {
            epochs,
            best_epoch,
            thresholds,
        },
    ))
}

/// Finite-difference step used by the gradient checks.
pub const FD_STEP: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, 1e-4)`: relative error with a floor that keeps
/// roundoff in near-zero gradients from dominating.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    let diff = (analytic - numeric).abs();
    if diff == 0.0 {
        return 0.0;
    }
    diff / analytic.abs().max(numeric.abs()).max(1e-4)
}

/// Worst relative error per parameter class between `analytic` and
/// central differences of the infer-mode (or mask-replayed) example
/// objective. Classes with no scalars are omitted.
pub fn compare_gradients(
    params: &NamParams,
    t: Triple,
    label: bool,
    masks: Option<&[Vec<f64>]>,
    analytic: &Gradients,
    step: f64,
) -> Result<BTreeMap<ParamClass, f64>> {
    let objective = |p: &NamParams| -> Result<f64> {
        let mode = masks.map_or(Mode::Infer, Mode::Masked);
        Ok(example_log_likelihood(p.forward(t, mode)?.score, label))
    };
    let mut probe = params.clone();
    let mut worst = BTreeMap::new();
    for class in ParamClass::ALL {
        let n = params.class_len(class);
        if n == 0 {
            continue;
        }
        let dense = analytic.dense(class, params);
        let mut class_worst: f64 = 0.0;
        for (i, &a) in dense.iter().enumerate() {
            let orig = *probe.scalar_mut(class, i);
            *probe.scalar_mut(class, i) = orig + step;
            let up = objective(&probe)?;
            *probe.scalar_mut(class, i) = orig - step;
            let down = objective(&probe)?;
            *probe.scalar_mut(class, i) = orig;
            let numeric = (up - down) / (2.0 * step);
            class_worst = class_worst.max(relative_error(a, numeric));
        }
        worst.insert(class, class_worst);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub tolerance: f64,
    pub trials: usize,
    pub worst: BTreeMap<(Variant, ParamClass), f64>,
}

impl GradCheckReport {
    pub fn flagged(&self) -> Vec<(Variant, ParamClass)> {
        self.worst
            .iter()
            .filter(|(_, &e)| e.is_nan() || e >= self.tolerance)
            .map(|(&k, _)| k)
            .collect()
    }

    pub fn passed(&self) -> bool {
        self.flagged().is_empty()
    }

    pub fn max_error(&self) -> f64 {
        self.worst.values().copied().fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("variant,class,max_rel_err,pass\n");
        for (&(v, c), &e) in &self.worst {
            writeln!(out, "{v},{},{e:e},{}", c.name(), e < self.tolerance).expect("write to String");
        }
        out
    }
}

/// Random tiny model: 2-4 entities, 1-3 relations, widths 1-5, depth 1-3,
/// every tensor uniform in ±1.
pub fn random_tiny_model(variant: Variant, rng: &mut Rng) -> Result<NamParams> {
    let mut vocab = Vocabulary::new();
    for e in 0..2 + rng.below(3) {
        vocab.entities.intern(&format!("e{e}"));
    }
    for r in 0..1 + rng.below(3) {
        vocab.relations.intern(&format!("r{r}"));
    }
    let depth = 1 + rng.below(3);
    let shape = ModelShape {
        variant,
        entity_dim: 1 + rng.below(5),
        relation_dim: 1 + rng.below(5),
        hidden: (0..depth).map(|_| 1 + rng.below(5)).collect(),
    };
    let mut params = NamParams::init(&shape, &vocab, None, rng)?;
    for class in ParamClass::ALL {
        for s in params.class_slices_mut(class) {
            s.copy_from_slice(&uniform_vector(s.len(), 1.0, rng));
        }
    }
    Ok(params)
}

/// Backward vs central differences on `trials` random tiny models per
/// variant, dropout off.
pub fn grad_check(seed: u64, trials: usize, tolerance: f64) -> Result<GradCheckReport> {
    let mut worst: BTreeMap<(Variant, ParamClass), f64> = BTreeMap::new();
    for variant in [Variant::Dnn, Variant::Rmnn] {
        let mut rng = Rng::new(seed).derive(variant as u64);
        for _ in 0..trials {
            let params = random_tiny_model(variant, &mut rng)?;
            let t = Triple::new(
                rng.below(params.num_entities()),
                rng.below(params.num_relations()),
                rng.below(params.num_entities()),
            );
            let label = rng.below(2) == 1;
            let cache = params.forward(t, Mode::Infer)?;
            let grads = params.backward(&cache, t, label)?;
            for (class, err) in compare_gradients(&params, t, label, None, &grads, FD_STEP)? {
                let slot = worst.entry((variant, class)).or_insert(0.0);
                *slot = slot.max(err);
            }
        }
    }
    Ok(GradCheckReport {
        tolerance,
        trials,
        worst,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Network;

    fn toy_vocab(entities: usize, relations: usize) -> Vocabulary {
        let mut v = Vocabulary::new();
        for e in 0..entities {
            v.entities.intern(&format!("e{e}"));
        }
        for r in 0..relations {
            v.relations.intern(&format!("r{r}"));
        }
        v
    }

    fn small_config(variant: Variant) -> TrainConfig {
        TrainConfig {
            variant,
            entity_dim: 4,
            relation_dim: 3,
            hidden_layers: 2,
            hidden_width: 5,
            max_epochs: 3,
            seed: 42,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn defaults_follow_reported_settings() {
        let c = TrainConfig::default();
        assert_eq!(
            (c.entity_dim, c.relation_dim, c.hidden_layers, c.hidden_width),
            (100, 50, 2, 100)
        );
        assert_eq!((c.learning_rate, c.dropout, c.max_epochs), (0.1, 0.2, 30));
        assert_eq!(c.embedding_rate(), 0.1);
        assert_eq!(c.negatives_per_positive, 1);
    }

    #[test]
    fn config_validation() {
        let bad = TrainConfig {
            dropout: 1.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            hidden_layers: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            learning_rate: 0.0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
    }

    fn zero_params(variant: Variant, vocab: &Vocabulary) -> NamParams {
        let cfg = small_config(variant);
        let mut p = NamParams::init(&cfg.shape(), vocab, None, &mut Rng::new(0)).unwrap();
        for c in ParamClass::ALL {
            for s in p.class_slices_mut(c) {
                s.fill(0.0);
            }
        }
        p
    }

    #[test]
    fn log_likelihood_examples() {
        let v = toy_vocab(3, 1);
        let p = zero_params(Variant::Dnn, &v);
        let ll = log_likelihood(&p, &[Triple::new(0, 0, 1)], &[Triple::new(0, 0, 2)]).unwrap();
        assert!((ll - 2.0 * 0.5f64.ln()).abs() < 1e-12);
        assert!((ll + 1.386_294).abs() < 1e-6);

        // saturate f -> 1 through the RMNN output injection
        let mut q = zero_params(Variant::Rmnn, &v);
        q.relation_codes.row_mut(0).fill(1.0);
        let last = q.net.injections_mut().last_mut().unwrap();
        last.as_mut_slice().fill(100.0);
        let ll = log_likelihood(&q, &[Triple::new(0, 0, 1)], &[]).unwrap();
        assert!(ll <= 0.0 && ll > -1e-11, "{ll}");
        assert!(log_likelihood(&q, &[], &[]).is_err());
    }

    #[test]
    fn log_likelihood_is_sum_of_example_objectives() {
        let mut rng = Rng::new(7);
        let p = random_tiny_model(Variant::Rmnn, &mut rng).unwrap();
        let n = p.num_entities();
        let pos: Vec<Triple> = (0..5).map(|_| Triple::new(rng.below(n), 0, rng.below(n))).collect();
        let neg: Vec<Triple> = (0..4).map(|_| Triple::new(rng.below(n), 0, rng.below(n))).collect();
        let mut oracle = 0.0;
        for (list, y) in [(&pos, true), (&neg, false)] {
            for &t in list.iter() {
                let f = p.forward(t, Mode::Infer).unwrap().score;
                oracle += if y { f.ln() } else { (1.0 - f).ln() };
            }
        }
        let ll = log_likelihood(&p, &pos, &neg).unwrap();
        assert!((ll - oracle).abs() < 1e-12 * oracle.abs().max(1.0));
    }

    #[test]
    fn zero_rate_epoch_leaves_params_unchanged() {
        let v = toy_vocab(6, 2);
        let cfg = small_config(Variant::Dnn);
        let p0 = NamParams::init(&cfg.shape(), &v, None, &mut Rng::new(1)).unwrap();
        let mut p = p0.clone();
        let pos = vec![Triple::new(0, 0, 1), Triple::new(2, 1, 3)];
        let known = pos.iter().copied().collect();
        let zero = Rates {
            network: 0.0,
            embedding: 0.0,
        };
        train_epoch(&mut p, &pos, &known, &cfg, zero, &mut Rng::new(3)).unwrap();
        assert_eq!(p.checksum(), p0.checksum());
        assert_eq!(p, p0);
    }

    #[test]
    fn epoch_is_deterministic() {
        let v = toy_vocab(6, 2);
        let cfg = small_config(Variant::Rmnn);
        let pos = vec![Triple::new(0, 0, 1), Triple::new(2, 1, 3), Triple::new(4, 0, 5)];
        let known = pos.iter().copied().collect();
        let run = || {
            let mut p = NamParams::init(&cfg.shape(), &v, None, &mut Rng::new(1)).unwrap();
            let negs = train_epoch(&mut p, &pos, &known, &cfg, Rates::from_config(&cfg), &mut Rng::new(3)).unwrap();
            (p, negs)
        };
        let (a, na) = run();
        let (b, nb) = run();
        assert_eq!(a, b);
        assert_eq!(na, nb);
        assert!(na.iter().all(|n| !known.contains(n)));
    }

    #[test]
    fn full_batch_ascent_is_monotone() {
        let v = toy_vocab(4, 2);
        for variant in [Variant::Dnn, Variant::Rmnn] {
            let cfg = small_config(variant);
            let mut p = NamParams::init(&cfg.shape(), &v, None, &mut Rng::new(5)).unwrap();
            let pos = [
                Triple::new(0, 0, 1),
                Triple::new(1, 0, 2),
                Triple::new(2, 1, 3),
                Triple::new(3, 1, 0),
            ];
            let neg = [
                Triple::new(0, 0, 3),
                Triple::new(1, 0, 0),
                Triple::new(2, 1, 1),
                Triple::new(3, 1, 2),
            ];
            let mut prev = log_likelihood(&p, &pos, &neg).unwrap();
            for step in 0..50 {
                batch_ascent_step(&mut p, &pos, &neg, 0.01).unwrap();
                let ll = log_likelihood(&p, &pos, &neg).unwrap();
                assert!(ll >= prev, "{variant} step {step}: {ll} < {prev}");
                prev = ll;
            }
        }
    }

    fn toy_dataset() -> (Vocabulary, Vec<LabeledTriple>, Vec<LabeledTriple>) {
        let v = toy_vocab(8, 2);
        let mut train = Vec::new();
        for h in 0..8 {
            train.push(LabeledTriple::new(Triple::new(h, 0, (h + 1) % 8), true));
            train.push(LabeledTriple::new(Triple::new(h, 1, (h + 3) % 8), true));
        }
        let dev = vec![
            LabeledTriple::new(Triple::new(0, 0, 1), true),
            LabeledTriple::new(Triple::new(0, 0, 5), false),
            LabeledTriple::new(Triple::new(2, 1, 5), true),
            LabeledTriple::new(Triple::new(2, 1, 0), false),
        ];
        (v, train, dev)
    }

    #[test]
    fn fit_is_deterministic_and_schedule_is_halving_only() {
        let (v, train, dev) = toy_dataset();
        let cfg = TrainConfig {
            max_epochs: 8,
            ..small_config(Variant::Rmnn)
        };
        let (a, ra) = fit(&train, &dev, &v, None, &cfg).unwrap();
        let (b, rb) = fit(&train, &dev, &v, None, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(ra, rb);
        assert_eq!(ra.epochs.len(), 8);
        assert_eq!(ra.final_epoch(), 8);
        for w in ra.epochs.windows(2) {
            let ratio = w[1].learning_rate / w[0].learning_rate;
            assert!(ratio == 1.0 || ratio == 0.5, "{ratio}");
        }
        let best = ra.best_dev_accuracy();
        assert!(ra.epochs.iter().all(|e| e.dev_accuracy <= best));
        assert!(ra.to_csv().starts_with("epoch,loglik,dev_acc,lr\n1,"));
    }

    #[test]
    fn schedule_halves_after_a_drop() {
        // replay the schedule rule on recorded accuracies
        let (v, train, dev) = toy_dataset();
        let cfg = TrainConfig {
            max_epochs: 12,
            dropout: 0.5,
            learning_rate: 0.5,
            ..small_config(Variant::Dnn)
        };
        let (_, report) = fit(&train, &dev, &v, None, &cfg).unwrap();
        let mut best = f64::NEG_INFINITY;
        let mut lr = cfg.learning_rate;
        for e in &report.epochs {
            assert_eq!(e.learning_rate, lr);
            if e.dev_accuracy < best {
                lr *= 0.5;
            }
            best = best.max(e.dev_accuracy);
        }
    }

    #[test]
    fn fit_rejects_bad_inputs() {
        let (v, train, dev) = toy_dataset();
        let cfg = small_config(Variant::Dnn);
        assert!(fit(&[], &dev, &v, None, &cfg).is_err());
        let one_label: Vec<_> = dev.iter().filter(|l| l.label).copied().collect();
        assert!(fit(&train, &one_label, &v, None, &cfg).is_err());
    }

    #[test]
    fn grad_check_passes_on_correct_backward() {
        let report = grad_check(7, 20, 1e-5).unwrap();
        assert!(report.passed(), "{}", report.to_csv());
        // DNN has no injections, RMNN no biases
        assert!(!report.worst.contains_key(&(Variant::Dnn, ParamClass::Injections)));
        assert!(!report.worst.contains_key(&(Variant::Rmnn, ParamClass::Biases)));
        assert_eq!(report.worst.len(), 10);
    }

    #[test]
    fn grad_check_flags_corrupted_weight_gradient() {
        let mut rng = Rng::new(11);
        let mut flagged = 0;
        for _ in 0..10 {
            let p = random_tiny_model(Variant::Dnn, &mut rng).unwrap();
            let t = Triple::new(0, 0, 1);
            let cache = p.forward(t, Mode::Infer).unwrap();
            let mut g = p.backward(&cache, t, true).unwrap();
            let w = &mut g.net.weights[0];
            let Some(i) = w.as_slice().iter().position(|x| x.abs() > 1e-3) else {
                continue;
            };
            w.as_mut_slice()[i] *= 1.1;
            let errs = compare_gradients(&p, t, true, None, &g, FD_STEP).unwrap();
            assert!(errs[&ParamClass::Weights] > 1e-5);
            assert!(errs[&ParamClass::EntityOut] < 1e-5);
            flagged += 1;
        }
        assert!(flagged > 0);
    }

    #[test]
    fn zero_model_has_exactly_zero_errors() {
        let v = toy_vocab(3, 2);
        for variant in [Variant::Dnn, Variant::Rmnn] {
            let p = zero_params(variant, &v);
            let t = Triple::new(0, 1, 2);
            let cache = p.forward(t, Mode::Infer).unwrap();
            let g = p.backward(&cache, t, true).unwrap();
            let errs = compare_gradients(&p, t, true, None, &g, FD_STEP).unwrap();
            assert!(errs.values().all(|&e| e == 0.0), "{errs:?}");
        }
    }

    #[test]
    fn dropout_masks_are_replayed_in_backward() {
        let mut rng = Rng::new(21);
        for variant in [Variant::Dnn, Variant::Rmnn] {
            for _ in 0..10 {
                let p = random_tiny_model(variant, &mut rng).unwrap();
                let t = Triple::new(1, 0, 0);
                let mut drop_rng = Rng::new(rng.next_u64());
                let cache = p
                    .forward(
                        t,
                        Mode::Train {
                            rng: &mut drop_rng,
                            dropout: 0.3,
                        },
                    )
                    .unwrap();
                let g = p.backward(&cache, t, false).unwrap();
                let errs = compare_gradients(&p, t, false, Some(&cache.masks), &g, FD_STEP).unwrap();
                assert!(errs.values().all(|&e| e < 1e-5), "{variant}: {errs:?}");
            }
        }
    }

    #[test]
    fn masked_forward_rejects_wrong_mask_count() {
        let mut rng = Rng::new(2);
        let net = Network::new(Variant::Dnn, 1, 1, &[2, 2], &mut rng).unwrap();
        let masks = vec![vec![1.0, 1.0]];
        assert!(net.forward(&[0.0], &[0.0], &[0.0, 0.0], Mode::Masked(&masks)).is_err());
    }
}
