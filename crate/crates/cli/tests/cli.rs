use std::path::Path;
use std::process::{Command, Output};

use nam_core::checkpoint::Checkpoint;
use nam_core::evaluator::Thresholds;
use nam_core::kb::Vocabulary;
use nam_core::math::{Matrix, Rng};
use nam_core::model::{ModelShape, NamParams, Variant};

fn nam(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nam"))
        .args(args)
        .output()
        .expect("spawn nam")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// One-unit DNN whose score is `sigmoid(relu(in[h]) * out[t])`.
fn tiny_checkpoint() -> Checkpoint {
    let mut vocab = Vocabulary::new();
    for e in ["a", "b", "c"] {
        vocab.entities.intern(e);
    }
    vocab.relations.intern("r");
    let shape = ModelShape {
        variant: Variant::Dnn,
        entity_dim: 1,
        relation_dim: 1,
        hidden: vec![1],
    };
    let mut params = NamParams::init(&shape, &vocab, None, &mut Rng::new(1)).unwrap();
    params.net.weights_mut()[0] = Matrix::from_rows(&[vec![1.0, 0.0]]).unwrap();
    params.net.biases_mut()[0] = vec![0.0];
    for (i, (vin, vout)) in [(1.0, 1.0), (2.0, -1.0), (-1.0, 2.0)].into_iter().enumerate() {
        params.entity_in.row_mut(i)[0] = vin;
        params.entity_out.row_mut(i)[0] = vout;
    }
    Checkpoint::new(vocab, params, Thresholds::global(0.5))
}

#[test]
fn gradcheck_passes() {
    let o = nam(&["gradcheck", "--seed", "7", "--tol", "1e-5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    assert!(out.starts_with("variant,class,max_rel_err,pass\n"));
    assert!(!out.contains("false"), "{out}");
}

#[test]
fn missing_config_is_a_data_error_naming_the_path() {
    let o = nam(&["train", "--config", "missing.cfg"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("missing.cfg"), "{}", stderr(&o));
}

#[test]
fn unknown_flag_is_a_usage_error() {
    let o = nam(&["eval", "--modle", "m.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("Usage"), "{}", stderr(&o));
}

#[test]
fn unknown_config_key_names_its_line() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("t.cfg");
    std::fs::write(&cfg, "# run\nseed = 3\nlearning_rat = 0.1\n").unwrap();
    let o = nam(&["train", "--config", p(&cfg), "--train", "x", "--dev", "y", "--out", "z"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).contains("t.cfg:3") && stderr(&o).contains("learning_rat"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn eval_reports_the_hand_tallied_accuracy() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    tiny_checkpoint().save(&model).unwrap();
    let test = dir.path().join("t.tsv");
    // products relu(in)*out: 1, -1, 4, -2, 0, 2; a zero product scores exactly 0.5
    std::fs::write(
        &test,
        "a\tr\ta\t1\na\tr\tb\t1\nb\tr\tc\t1\nb\tr\tb\t0\nc\tr\ta\t0\na\tr\tc\t0\n",
    )
    .unwrap();
    let expected = "threshold,accuracy,pos_acc,neg_acc\n0.5,0.5,0.6666666666666666,0.3333333333333333\n";
    let o = nam(&["eval", "--model", p(&model), "--test", p(&test)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o), expected);
    let o = nam(&["eval", "--model", p(&model), "--test", p(&test), "--threshold", "0.5"]);
    assert_eq!(stdout(&o), expected);
}

#[test]
fn eval_rejects_unknown_entities() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.json");
    tiny_checkpoint().save(&model).unwrap();
    let test = dir.path().join("t.tsv");
    std::fs::write(&test, "a\tr\tzebra\t1\n").unwrap();
    let o = nam(&["eval", "--model", p(&model), "--test", p(&test)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("zebra"));
}

#[test]
fn synth_train_eval_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let kb = dir.path().join("kb");
    let args = [
        "synth",
        "--out",
        p(&kb),
        "--relations",
        "2",
        "--entities",
        "30",
        "--positives",
        "120",
        "--dev-positives",
        "20",
        "--test-positives",
        "20",
        "--seed",
        "4",
    ];
    assert!(nam(&args).status.success());
    let first = std::fs::read(kb.join("train.tsv")).unwrap();
    assert!(nam(&args).status.success());
    assert_eq!(std::fs::read(kb.join("train.tsv")).unwrap(), first);

    let cfg = dir.path().join("run.cfg");
    std::fs::write(
        &cfg,
        "variant = rmnn\nentity_dim = 8\nrelation_dim = 4\nhidden_width = 8\nmax_epochs = 3\nseed = 9\n",
    )
    .unwrap();
    let mut reports = Vec::new();
    let mut models = Vec::new();
    for run in 0..2 {
        let model = dir.path().join(format!("m{run}.json"));
        let o = nam(&[
            "train",
            "--config",
            p(&cfg),
            "--train",
            p(&kb.join("train.tsv")),
            "--dev",
            p(&kb.join("dev.tsv")),
            "--out",
            p(&model),
        ]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert_eq!(stdout(&o).lines().count(), 4);
        reports.push(stdout(&o));
        models.push(std::fs::read(&model).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
    assert_eq!(models[0], models[1]);

    // a flag overrides the config file
    let model = dir.path().join("m2.json");
    let o = nam(&[
        "train",
        "--config",
        p(&cfg),
        "--train",
        p(&kb.join("train.tsv")),
        "--dev",
        p(&kb.join("dev.tsv")),
        "--out",
        p(&model),
        "--max-epochs",
        "1",
    ]);
    assert_eq!(stdout(&o).lines().count(), 2);

    let o = nam(&[
        "eval",
        "--model",
        p(&dir.path().join("m0.json")),
        "--test",
        p(&kb.join("test.tsv")),
        "--threads",
        "3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o).lines().nth(1).unwrap().to_owned();
    let acc: f64 = line.split(',').nth(1).unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&acc));
}

#[test]
fn winograd_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("wg");
    let o = nam(&[
        "synth",
        "--kind",
        "winograd",
        "--out",
        p(&data),
        "--verbs",
        "6",
        "--positives",
        "400",
        "--problems",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = dir.path().join("w.json");
    let o = nam(&[
        "winograd-train",
        "--pairs",
        p(&data.join("pairs.tsv")),
        "--scorer",
        "relationvec",
        "--epochs",
        "2",
        "--out",
        p(&model),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("epoch,loglik\n1,"));
    let log = dir.path().join("log.csv");
    let o = nam(&[
        "winograd-resolve",
        "--model",
        p(&model),
        "--schemas",
        p(&data.join("schemas.tsv")),
        "--log",
        p(&log),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).starts_with("accuracy,correct,usable,excluded\n"));
    assert_eq!(std::fs::read_to_string(&log).unwrap().lines().count(), 5);

    let o = nam(&[
        "winograd-train",
        "--pairs",
        p(&data.join("pairs.tsv")),
        "--scorer",
        "bogus",
        "--out",
        p(&model),
    ]);
    assert_eq!(o.status.code(), Some(1));
}
