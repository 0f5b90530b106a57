use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dualdesc::corpus::{write_dataset, Format, LabelSpace};
use dualdesc::model::Checkpoint;
use dualdesc::synthetic::{marker_corpus, marker_token, multilabel_marker_corpus, separable_corpus};

fn dualdesc(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dualdesc"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

const SMALL: &str = "d_embed = 16\ngru_units = 8\ntext_length = 16\ndescriptor_dimension = 5\n\
learning_rate = 0.01\nbatch_size = 16\nmax_epochs = 10\npatience = 3\n";

/// Separable two-class corpus written as `train.csv` plus a config.
fn separable_setup(dir: &Path) -> PathBuf {
    let (space, docs) = separable_corpus(11).unwrap();
    write_dataset(&dir.join("train.csv"), Format::Csv, &docs, &space).unwrap();
    let cfg = dir.join("run.conf");
    fs::write(
        &cfg,
        format!(
            "labels = {}\ntrain = train.csv\ntest = train.csv\n{SMALL}",
            space.names().join(",")
        ),
    )
    .unwrap();
    cfg
}

fn multilabel_setup(dir: &Path) -> PathBuf {
    let (space, docs) = multilabel_marker_corpus(3, 240, 5).unwrap();
    write_dataset(&dir.join("train.jsonl"), Format::Jsonl, &docs, &space).unwrap();
    let cfg = dir.join("ml.conf");
    fs::write(
        &cfg,
        format!(
            "mode = multi_label\nformat = jsonl\nlabels = {}\ntrain = train.jsonl\ntest = train.jsonl\n{SMALL}",
            space.names().join(",")
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn extract_descriptors_recovers_markers_and_previews() {
    let dir = tempfile::tempdir().unwrap();
    let (space, docs) = marker_corpus(3, 30, 50, 2).unwrap();
    write_dataset(&dir.path().join("m.tsv"), Format::Tsv, &docs, &space).unwrap();
    let labels = space.names().join(",");
    for test in ["chi2", "anova"] {
        let out = dualdesc(
            dir.path(),
            &[
                "extract-descriptors",
                "--set",
                "format=tsv",
                "--set",
                &format!("labels={labels}"),
                "--set",
                "train=m.tsv",
                "--set",
                &format!("descriptor_test={test}"),
                "--set",
                "descriptor_dimension=1",
                "--out-dir",
                test,
            ],
        );
        assert!(out.status.success(), "{}", stderr(&out));
        let text = stdout(&out);
        for (c, name) in space.names().iter().enumerate() {
            assert!(text.contains(&format!("{name}\t{}\n", marker_token(c))), "{text}");
        }
        let set =
            dualdesc::descriptors::ClassDescriptorSet::load(&dir.path().join(test).join("descriptors.tsv")).unwrap();
        for (c, class) in set.classes.iter().enumerate() {
            assert_eq!(class.entries.len(), 1);
            assert_eq!(class.entries[0].0, marker_token(c));
        }
        let echoed = fs::read_to_string(dir.path().join(test).join("extract-descriptors.conf")).unwrap();
        assert!(echoed.contains(&format!("descriptor_test = {test}\n")));
    }
}

#[test]
fn missing_input_file_is_exit_two_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let out = dualdesc(
        dir.path(),
        &[
            "extract-descriptors",
            "--set",
            "labels=a,b",
            "--set",
            "train=nowhere.csv",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nowhere.csv"), "{}", stderr(&out));
    let out = dualdesc(dir.path(), &["train", "--config", "absent.conf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("absent.conf"));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.conf"), "labels = a,b\ngru_unit = 4\n").unwrap();
    let out = dualdesc(dir.path(), &["train", "--config", "bad.conf"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(
        stderr(&out).contains("unknown config key 'gru_unit'"),
        "{}",
        stderr(&out)
    );
    let out = dualdesc(dir.path(), &["train", "--set", "nonsense"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn help_documents_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let out = dualdesc(dir.path(), &["--help"]);
    assert!(out.status.success());
    let text = stdout(&out);
    for needle in [
        "extract-descriptors",
        "verify",
        "--config",
        "--seed",
        "--out-dir",
        "gru_units = 128",
        "patience = 3",
    ] {
        assert!(text.contains(needle), "missing {needle}");
    }
}

#[test]
fn train_evaluate_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = separable_setup(dir.path());
    let cfg = cfg.to_str().unwrap();
    let run = |out: &str| {
        let o = dualdesc(dir.path(), &["train", "--config", cfg, "--seed", "3", "--out-dir", out]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stderr(&o).contains("epoch 1\t"));
        (
            fs::read(dir.path().join(out).join("history.csv")).unwrap(),
            fs::read(dir.path().join(out).join("model.ckpt")).unwrap(),
        )
    };
    let (h1, c1) = run("a");
    let (h2, c2) = run("b");
    assert_eq!(h1, h2, "history differs between identical runs");
    assert_eq!(c1, c2, "checkpoint differs between identical runs");
    let history = String::from_utf8(h1).unwrap();
    assert!(history.starts_with("epoch,train_loss,val_metric\n1,"));
    let ckpt = Checkpoint::load(&dir.path().join("a/model.ckpt")).unwrap();
    assert_eq!(ckpt.config.seed, 3);
    assert!(fs::read_to_string(dir.path().join("a/train.conf"))
        .unwrap()
        .contains("seed = 3\n"));

    let o = dualdesc(dir.path(), &["evaluate", "--config", cfg, "--out-dir", "a"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = stdout(&o);
    let acc: f64 = report
        .lines()
        .find_map(|l| l.strip_prefix("accuracy\t"))
        .expect("accuracy line")
        .parse()
        .unwrap();
    assert!(acc >= 0.99, "training-split accuracy {acc}");
    assert_eq!(fs::read_to_string(dir.path().join("a/report.tsv")).unwrap(), report);
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("a/report.json")).unwrap()).unwrap();
    assert_eq!(json["accuracy"].as_f64(), Some(acc));

    let o = dualdesc(
        dir.path(),
        &[
            "predict",
            "--config",
            cfg,
            "--out-dir",
            "a",
            "--text",
            "",
            "--text",
            "marker a noise",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let lines: Vec<String> = stdout(&o).lines().map(String::from).collect();
    assert_eq!(lines.len(), 2);
    for line in &lines {
        let fields: Vec<&str> = line.split('\t').collect();
        assert_eq!(fields.len(), 3, "{line}");
        assert!(["class0", "class1"].contains(&fields[0]), "{line}");
        let total: f64 = fields[1..]
            .iter()
            .map(|f| f.split_once('=').unwrap().1.parse::<f64>().unwrap())
            .sum();
        assert!((total - 1.0).abs() < 1e-5);
    }
}

#[test]
fn evaluation_refuses_mismatched_or_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = separable_setup(dir.path());
    let cfg = cfg.to_str().unwrap();
    let o = dualdesc(
        dir.path(),
        &["train", "--config", cfg, "--set", "max_epochs=1", "--out-dir", "m"],
    );
    assert!(o.status.success(), "{}", stderr(&o));

    fs::write(dir.path().join("bad.csv"), "text,label\nhello,class0\nworld,nope\n").unwrap();
    let o = dualdesc(
        dir.path(),
        &["evaluate", "--config", cfg, "--out-dir", "m", "--data", "bad.csv"],
    );
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("unknown label 'nope'"));

    let vocab = dir.path().join("m/vocab.tsv");
    let mut text = fs::read_to_string(&vocab).unwrap();
    text.push_str("extra\t999\t1\n");
    fs::write(&vocab, text).unwrap();
    let o = dualdesc(dir.path(), &["evaluate", "--config", cfg, "--out-dir", "m"]);
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
    assert!(stderr(&o).contains("does not match"));

    let ckpt = dir.path().join("m/model.ckpt");
    let bytes = fs::read(&ckpt).unwrap();
    fs::write(&ckpt, &bytes[..bytes.len() / 2]).unwrap();
    let o = dualdesc(
        dir.path(),
        &["predict", "--config", cfg, "--out-dir", "m", "--text", "x"],
    );
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn multi_label_threshold_file_contract() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = multilabel_setup(dir.path());
    let cfg = cfg.to_str().unwrap();
    let o = dualdesc(dir.path(), &["train", "--config", cfg, "--out-dir", "ml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let threshold = fs::read_to_string(dir.path().join("ml/threshold.txt")).unwrap();
    assert!(
        threshold.ends_with('\n') && threshold.lines().count() == 1,
        "{threshold:?}"
    );
    let t: f64 = threshold.trim().parse().unwrap();
    assert!(t > 0.0 && t < 1.0);

    let o = dualdesc(dir.path(), &["evaluate", "--config", cfg, "--out-dir", "ml"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("macro_auc\t"));

    let o = dualdesc(
        dir.path(),
        &[
            "predict",
            "--config",
            cfg,
            "--out-dir",
            "ml",
            "--threshold",
            "0.99",
            "--text",
            "nothing here",
        ],
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let line = stdout(&o);
    assert_eq!(line.matches('=').count(), 3, "{line}");

    fs::remove_file(dir.path().join("ml/threshold.txt")).unwrap();
    let o = dualdesc(dir.path(), &["evaluate", "--config", cfg, "--out-dir", "ml"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("threshold"), "{}", stderr(&o));
    assert!(stderr(&o).contains("dualdesc train"), "{}", stderr(&o));
}

#[test]
fn non_finite_training_is_exit_three() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = separable_setup(dir.path());
    let o = dualdesc(
        dir.path(),
        &[
            "train",
            "--config",
            cfg.to_str().unwrap(),
            "--set",
            "learning_rate=1e38",
            "--out-dir",
            "nf",
        ],
    );
    assert_eq!(o.status.code(), Some(3), "{}", stderr(&o));
    assert!(stderr(&o).contains("non-finite"), "{}", stderr(&o));
}

#[test]
fn verify_passes_and_detects_injected_fault() {
    let dir = tempfile::tempdir().unwrap();
    let o = dualdesc(dir.path(), &["verify"]);
    assert!(o.status.success(), "{}", stdout(&o));
    let text = stdout(&o);
    let checks: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("PASS") || l.starts_with("FAIL"))
        .collect();
    assert!(checks.len() > 30);
    assert!(checks
        .iter()
        .all(|l| l.contains("measured=") && l.contains("tolerance=")));

    let o = dualdesc(dir.path(), &["verify", "--inject-fault", "sigmoid"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL\tgrad.primitive.sigmoid"));
}

#[test]
fn labels_must_be_configured() {
    let dir = tempfile::tempdir().unwrap();
    let (space, docs) = separable_corpus(1).unwrap();
    write_dataset(&dir.path().join("t.csv"), Format::Csv, &docs, &space).unwrap();
    let o = dualdesc(dir.path(), &["extract-descriptors", "--set", "train=t.csv"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("labels"));
    let _ = LabelSpace::new(["x"], dualdesc::corpus::Mode::MultiClass).unwrap();
}
