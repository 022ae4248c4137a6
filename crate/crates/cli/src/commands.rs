use std::path::{Path, PathBuf};

use nam_core::checkpoint::Checkpoint;
use nam_core::evaluator::{evaluate, tune_thresholds, Thresholds};
use nam_core::kb::{load_triples, VocabMode, Vocabulary, WordVectorTable};
use nam_core::model::Variant;
use nam_core::synth::{generate, SynthConfig};
use nam_core::trainer::{fit, grad_check, TrainConfig};
use nam_core::transfer::{
    curve_csv, extend_model, full_update_transfer, learn_relation_code, learning_curve, load_adaptation_samples,
    new_relation_accuracy, AdaptConfig, ADAPT_EPOCHS, CURVE_FRACTIONS,
};
use nam_core::winograd::{self, PlantedConfig, Scorer, WinogradConfig, WinogradModel};

use crate::config::{pick, ConfigFile};
use crate::error::CliError;
use crate::{
    EvalArgs, GradcheckArgs, SynthArgs, SynthKind, TrainArgs, TransferArgs, TransferMode, WinogradResolveArgs,
    WinogradTrainArgs,
};

type Result<T> = std::result::Result<T, CliError>;

fn write_file(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|source| CliError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
    }
    std::fs::write(path, text).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn emit(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => write_file(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn open_config(path: Option<&Path>) -> Result<ConfigFile> {
    path.map_or_else(|| Ok(ConfigFile::empty()), ConfigFile::load)
}

fn required(value: Option<PathBuf>, key: &str) -> Result<PathBuf> {
    value.ok_or_else(|| {
        CliError::Failed(format!(
            "missing `{key}` (flag --{} or config key)",
            key.replace('_', "-")
        ))
    })
}

pub fn synth(a: SynthArgs) -> Result<()> {
    match a.kind {
        SynthKind::Kb => {
            let defaults = SynthConfig::default();
            let config = SynthConfig {
                relations: a.relations,
                entities: a.entities,
                clusters: a.clusters,
                rule_density: a.rule_density,
                positives: a.positives.unwrap_or(defaults.positives),
                dev_positives: a.dev_positives,
                test_positives: a.test_positives,
                seed: a.seed,
            };
            let kb = generate(&config)?;
            kb.write(&a.out)?;
            eprintln!(
                "wrote {} train, {} dev, {} test triples to {}",
                kb.train.len(),
                kb.dev.len(),
                kb.test.len(),
                a.out.display()
            );
        }
        SynthKind::Winograd => {
            let defaults = PlantedConfig::default();
            let config = PlantedConfig {
                verbs: a.verbs,
                occurrences: a.positives.unwrap_or(defaults.occurrences),
                noise: a.noise,
                problems: a.problems,
                seed: a.seed,
            };
            let data = winograd::generate_planted(&config)?;
            write_file(&a.out.join("pairs.tsv"), &winograd::pairs_tsv(&data.pairs))?;
            write_file(&a.out.join("schemas.tsv"), &winograd::schemas_tsv(&data.problems))?;
            eprintln!(
                "wrote {} pairs and {} schema problems to {}",
                data.pairs.len(),
                data.problems.len(),
                a.out.display()
            );
        }
    }
    Ok(())
}

pub fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = open_config(a.config.as_deref())?;
    let d = TrainConfig::default();
    let train_path = required(a.train.or(cfg.take("train")?), "train")?;
    let dev_path = required(a.dev.or(cfg.take("dev")?), "dev")?;
    let out = required(a.out.or(cfg.take("out")?), "out")?;
    let words_path: Option<PathBuf> = a.words.or(cfg.take("words")?);
    let report_path: Option<PathBuf> = a.report.or(cfg.take("report")?);
    let variant: Variant = pick(a.variant, &mut cfg, "variant", d.variant.to_string())?.parse()?;
    let config = TrainConfig {
        variant,
        entity_dim: pick(a.entity_dim, &mut cfg, "entity_dim", d.entity_dim)?,
        relation_dim: pick(a.relation_dim, &mut cfg, "relation_dim", d.relation_dim)?,
        hidden_layers: pick(a.hidden_layers, &mut cfg, "hidden_layers", d.hidden_layers)?,
        hidden_width: pick(a.hidden_width, &mut cfg, "hidden_width", d.hidden_width)?,
        learning_rate: pick(a.learning_rate, &mut cfg, "learning_rate", d.learning_rate)?,
        embedding_learning_rate: a.embedding_learning_rate.or(cfg.take("embedding_learning_rate")?),
        dropout: pick(a.dropout, &mut cfg, "dropout", d.dropout)?,
        max_epochs: pick(a.max_epochs, &mut cfg, "max_epochs", d.max_epochs)?,
        negatives_per_positive: pick(a.negatives, &mut cfg, "negatives", d.negatives_per_positive)?,
        seed: pick(a.seed, &mut cfg, "seed", d.seed)?,
        threads: pick(a.threads, &mut cfg, "threads", d.threads)?,
        per_relation_threshold: pick(a.per_relation_threshold, &mut cfg, "per_relation_threshold", false)?,
    };
    cfg.finish()?;

    let mut vocab = Vocabulary::new();
    let train = load_triples(&train_path, &mut vocab, VocabMode::Extend)?;
    let dev = load_triples(&dev_path, &mut vocab, VocabMode::Extend)?;
    let words = words_path.as_deref().map(WordVectorTable::load).transpose()?;
    let (params, report) = fit(&train, &dev, &vocab, words.as_ref(), &config)?;
    Checkpoint::new(vocab, params, report.thresholds.clone()).save(&out)?;
    emit(report_path.as_deref(), &report.to_csv())?;
    eprintln!(
        "best dev accuracy {:.4} at epoch {}; model written to {}",
        report.best_dev_accuracy(),
        report.best_epoch,
        out.display()
    );
    Ok(())
}

pub fn eval(a: EvalArgs) -> Result<()> {
    let ckpt = Checkpoint::load(&a.model)?;
    let mut vocab = ckpt.vocab.clone();
    let test = load_triples(&a.test, &mut vocab, VocabMode::Frozen)?;
    let thresholds = match (a.threshold, &a.dev) {
        (Some(t), _) => Thresholds::global(t),
        (None, Some(dev_path)) => {
            let dev = load_triples(dev_path, &mut vocab, VocabMode::Frozen)?;
            let per_relation = !ckpt.thresholds.per_relation.is_empty();
            tune_thresholds(&ckpt.params, &dev, per_relation, a.threads)?
        }
        (None, None) => ckpt.thresholds.clone(),
    };
    let report = evaluate(&ckpt.params, &test, &thresholds, a.threads)?;
    println!("threshold,accuracy,pos_acc,neg_acc");
    println!("{}", report.summary_line());
    if let Some(path) = &a.relations_out {
        write_file(path, &report.relations_csv(&ckpt.vocab))?;
    }
    Ok(())
}

pub fn transfer(a: TransferArgs) -> Result<()> {
    let mut cfg = open_config(a.config.as_deref())?;
    let d = TrainConfig::default();
    let learning_rate = pick(a.learning_rate, &mut cfg, "learning_rate", d.learning_rate)?;
    let config = AdaptConfig {
        epochs: pick(a.epochs, &mut cfg, "epochs", ADAPT_EPOCHS)?,
        learning_rate,
        embedding_learning_rate: pick(
            a.embedding_learning_rate,
            &mut cfg,
            "embedding_learning_rate",
            learning_rate,
        )?,
        dropout: pick(a.dropout, &mut cfg, "dropout", d.dropout)?,
        negatives_per_positive: pick(a.negatives, &mut cfg, "negatives", d.negatives_per_positive)?,
        seed: pick(a.seed, &mut cfg, "seed", d.seed)?,
    };
    cfg.finish()?;

    let ckpt = Checkpoint::load(&a.model)?;
    let (samples, dropped) = load_adaptation_samples(&a.samples, &ckpt.vocab, &a.relation)?;
    if dropped > 0 {
        eprintln!("skipped {dropped} adaptation samples with unknown entities");
    }
    let (new_test, _) = load_adaptation_samples(&a.test, &ckpt.vocab, &a.relation)?;
    let mut vocab = ckpt.vocab.clone();
    let orig_test = load_triples(&a.orig_test, &mut vocab, VocabMode::Frozen)?;
    let slot = ckpt.params.num_relations();

    match a.mode {
        TransferMode::Code => {
            let fractions = a.fractions.unwrap_or_else(|| CURVE_FRACTIONS.to_vec());
            let curve = learning_curve(
                &ckpt.params,
                &samples,
                &new_test,
                &orig_test,
                &ckpt.thresholds,
                &fractions,
                &config,
            )?;
            print!("{}", curve_csv(&curve));
            if let Some(out) = &a.out {
                let fit = learn_relation_code(&ckpt.params, &samples, &config)?;
                let (params, vocab) = extend_model(&ckpt.params, &ckpt.vocab, &a.relation, &fit.code)?;
                let mut thresholds = ckpt.thresholds.clone();
                thresholds.per_relation.insert(slot, fit.threshold);
                Checkpoint::new(vocab, params, thresholds).save(out)?;
            }
        }
        TransferMode::Full => {
            let full = full_update_transfer(&ckpt.params, &samples, &orig_test, &ckpt.thresholds, &config)?;
            let new_acc = new_relation_accuracy(&full.params, &new_test, full.threshold)?;
            println!("orig_before,orig_after,orig_drop,new_rel_acc");
            println!(
                "{:.6},{:.6},{:.6},{:.6}",
                full.orig_before,
                full.orig_after,
                full.orig_drop(),
                new_acc
            );
            if let Some(out) = &a.out {
                let mut vocab = ckpt.vocab.clone();
                vocab.relations.intern(&a.relation);
                let mut thresholds = ckpt.thresholds.clone();
                thresholds.per_relation.insert(slot, full.threshold);
                Checkpoint::new(vocab, full.params, thresholds).save(out)?;
            }
        }
    }
    Ok(())
}

pub fn winograd_train(a: WinogradTrainArgs) -> Result<()> {
    let mut cfg = open_config(a.config.as_deref())?;
    let d = WinogradConfig::default();
    let pairs_path = required(a.pairs.or(cfg.take("pairs")?), "pairs")?;
    let out = required(a.out.or(cfg.take("out")?), "out")?;
    let words_path: Option<PathBuf> = a.words.or(cfg.take("words")?);
    let scorer: Scorer = pick(a.scorer, &mut cfg, "scorer", d.scorer.to_string())?.parse()?;
    let config = WinogradConfig {
        scorer,
        epochs: pick(a.epochs, &mut cfg, "epochs", d.epochs)?,
        learning_rate: pick(a.learning_rate, &mut cfg, "learning_rate", d.learning_rate)?,
        embedding_learning_rate: pick(
            a.embedding_learning_rate,
            &mut cfg,
            "embedding_learning_rate",
            d.embedding_learning_rate,
        )?,
        dropout: pick(a.dropout, &mut cfg, "dropout", d.dropout)?,
        seed: pick(a.seed, &mut cfg, "seed", d.seed)?,
        ..d
    };
    cfg.finish()?;

    let pairs = winograd::load_pairs(&pairs_path)?;
    let words = words_path.as_deref().map(WordVectorTable::load).transpose()?;
    let (model, report) = winograd::train(&pairs, &config, words.as_ref())?;
    model.save(&out)?;
    println!("epoch,loglik");
    for (i, ll) in report.log_likelihood.iter().enumerate() {
        println!("{},{ll}", i + 1);
    }
    Ok(())
}

pub fn winograd_resolve(a: WinogradResolveArgs) -> Result<()> {
    let model = WinogradModel::load(&a.model)?;
    let problems = winograd::load_schemas(&a.schemas)?;
    let eval = winograd::evaluate_schema_set(&model, &problems)?;
    println!("accuracy,correct,usable,excluded");
    println!("{},{},{},{}", eval.accuracy(), eval.correct, eval.usable, eval.excluded);
    if let Some(path) = &a.log {
        write_file(path, &eval.to_csv(&problems))?;
    }
    Ok(())
}

pub fn gradcheck(a: GradcheckArgs) -> Result<()> {
    let report = grad_check(a.seed, a.trials, a.tol)?;
    print!("{}", report.to_csv());
    if report.passed() {
        Ok(())
    } else {
        let flagged: Vec<String> = report
            .flagged()
            .iter()
            .map(|(v, c)| format!("{v}/{}", c.name()))
            .collect();
        Err(CliError::Failed(format!(
            "gradient check failed at tolerance {:e}: {}",
            a.tol,
            flagged.join(", ")
        )))
    }
}
