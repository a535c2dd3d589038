//! End-to-end runs of the `leakguard` binary on a small synthetic cohort.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

const CONFIG: &str = r#"
seeds = [1]

[data.synthetic]
n_rows = 1200
seed = 21

[hyperparams]
epochs = 4
epochs_adv_per = 5
cv_folds = 3

[external]
n_rows = 5000
"#;

fn leakguard(args: &[&str], cfg: &Path, out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_leakguard"))
        .args(args)
        .arg("--config")
        .arg(cfg)
        .arg("--out")
        .arg(out)
        .output()
        .expect("spawn leakguard")
}

fn ok(o: &Output) -> String {
    assert!(
        o.status.success(),
        "exit {:?}: {}",
        o.status.code(),
        String::from_utf8_lossy(&o.stderr)
    );
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, body: &str) -> PathBuf {
    let p = dir.join("config.toml");
    fs::write(&p, body).unwrap();
    p
}

struct Pipeline {
    _dir: tempfile::TempDir,
    out: PathBuf,
    data_before: Vec<(PathBuf, Vec<u8>)>,
    data_after: Vec<(PathBuf, Vec<u8>)>,
}

fn snapshot_data(out: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut files: Vec<PathBuf> = fs::read_dir(out.join("data"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .collect();
    files.sort();
    files.into_iter().map(|p| (p.clone(), fs::read(&p).unwrap())).collect()
}

/// Runs every subcommand once, in order, and keeps the output directory for inspection.
fn pipeline() -> &'static Pipeline {
    static P: OnceLock<Pipeline> = OnceLock::new();
    P.get_or_init(|| {
        let dir = tempfile::tempdir().unwrap();
        let cfg = write_config(dir.path(), CONFIG);
        let out = dir.path().join("out");
        ok(&leakguard(&["gen-data"], &cfg, &out));
        let data_before = snapshot_data(&out);
        for cmd in ["train", "attack", "crosstest", "external", "report"] {
            ok(&leakguard(&[cmd], &cfg, &out));
        }
        let data_after = snapshot_data(&out);
        Pipeline {
            _dir: dir,
            out,
            data_before,
            data_after,
        }
    })
}

fn read_table(path: &Path) -> (Vec<String>, Vec<Vec<String>>) {
    let mut r = csv::Reader::from_path(path).unwrap();
    let header = r.headers().unwrap().iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.unwrap().iter().map(String::from).collect())
        .collect();
    (header, rows)
}

const METRICS: &str = "Recall,Precision,F1-Score,Accuracy,Specificity,PPV,NPV,AUC";

#[test]
fn report_headers_are_exact() {
    let reports = pipeline().out.join("reports");
    let cases = [
        ("main_results.csv", format!("Model,{METRICS},Threshold")),
        ("attribute_baselines.csv", "Protected attribute,TRAIN,TEST".into()),
        ("attack_raw_features.csv", format!("Predicted Attribute,{METRICS}")),
        ("attack_adv_encoder.csv", format!("Predicted Attribute,{METRICS}")),
        ("crosstest.csv", format!("Cross-test,Model,{METRICS}")),
        ("external_puh.csv", format!("Model,{METRICS}")),
    ];
    for (file, want) in cases {
        let (header, rows) = read_table(&reports.join(file));
        assert_eq!(header.join(","), want, "{file}");
        assert!(!rows.is_empty(), "{file} has no rows");
    }
}

#[test]
fn crosstest_has_twelve_rows() {
    let (_, rows) = read_table(&pipeline().out.join("reports/crosstest.csv"));
    assert_eq!(rows.len(), 12);
    let mnemonics: Vec<&str> = rows.iter().step_by(2).map(|r| r[0].as_str()).collect();
    assert_eq!(mnemonics, ["f2m", "m2f", "n2w", "w2n", "o2y", "y2o"]);
    for pair in rows.chunks(2) {
        assert_eq!((pair[0][1].as_str(), pair[1][1].as_str()), ("Base", "ADV"));
    }
}

#[test]
fn commands_leave_data_files_untouched() {
    let p = pipeline();
    assert!(!p.data_before.is_empty());
    assert_eq!(p.data_before, p.data_after);
}

fn summary_prevalence(out: &Path, name: &str) -> f64 {
    let s: serde_json::Value = serde_json::from_slice(&fs::read(out.join("data/summary.json")).unwrap()).unwrap();
    s["files"]
        .as_array()
        .unwrap()
        .iter()
        .find(|f| f["name"] == name)
        .unwrap_or_else(|| panic!("{name} missing from summary"))["prevalence"]
        .as_f64()
        .unwrap()
}

#[test]
fn split_and_holdout_prevalences() {
    let out = &pipeline().out;
    for name in ["TRAIN", "TEST"] {
        let p = summary_prevalence(out, name);
        assert!((p - 0.5).abs() <= 0.02, "{name} prevalence {p}");
    }
    let puh = summary_prevalence(out, "PUH");
    assert!((puh - 0.052).abs() <= 0.003, "PUH prevalence {puh}");
}

fn auc(row: &[String], header: &[String]) -> f64 {
    let i = header.iter().position(|h| h == "AUC").unwrap();
    row[i].parse().unwrap()
}

#[test]
fn external_base_auc_holds_up() {
    let out = &pipeline().out;
    let (h, main) = read_table(&out.join("reports/main_results.csv"));
    let internal = auc(main.iter().find(|r| r[0] == "Base").unwrap(), &h);
    for name in ["uhb", "bh", "puh"] {
        let (h, rows) = read_table(&out.join(format!("reports/external_{name}.csv")));
        let ext = auc(rows.iter().find(|r| r[0] == "Base").unwrap(), &h);
        assert!(internal - ext <= 0.1, "{name}: {ext} vs internal {internal}");
    }
}

#[test]
fn crosstest_fails_fast_without_an_adv_model() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), CONFIG);
    let out = dir.path().join("out");
    ok(&leakguard(&["gen-data"], &cfg, &out));
    ok(&leakguard(&["train", "--model-kind", "base"], &cfg, &out));
    let o = leakguard(&["crosstest"], &cfg, &out);
    assert_eq!(o.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&o.stderr).contains("ADV model for seed 1"));
    assert!(!out.join("manifests/crosstest.json").exists());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");

    let bad = write_config(dir.path(), "no_such_key = 1\n");
    assert_eq!(leakguard(&["train"], &bad, &out).status.code(), Some(2));

    let cfg = write_config(dir.path(), CONFIG);
    assert_eq!(leakguard(&["train"], &cfg, &out).status.code(), Some(3));
    assert_eq!(leakguard(&["report"], &cfg, &out).status.code(), Some(3));

    let o = Command::new(env!("CARGO_BIN_EXE_leakguard"))
        .args(["train", "--model-kind", "bogus"])
        .output()
        .unwrap();
    assert!(!o.status.success());
}
