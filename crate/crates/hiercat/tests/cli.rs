//! End-to-end tests of the command-line interface and its file formats.
//!
//! A small full pipeline (gen-data, train all, analyze all, generalize all,
//! report) runs once into a shared fixture directory; individual tests then
//! assert on the emitted artifacts. Tests that mutate or break things work
//! on copies of the fixture.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::Output;
use std::sync::OnceLock;

use serde_json::Value;

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_hiercat")
}

fn base_args(dir: &Path) -> Vec<String> {
    vec![
        "--out".into(),
        dir.to_str().unwrap().into(),
        "--seed".into(),
        "42".into(),
        "--set".into(),
        "gen.per_sub=12".into(),
        "--set".into(),
        "holdout_per_sub=5".into(),
        "--set".into(),
        "train.epochs_pretrain=6".into(),
        "--set".into(),
        "train.epochs_tune=4".into(),
        "--set".into(),
        "generalization.trials_per_condition=25".into(),
    ]
}

fn run(args: &[&str], extra: &[String]) -> Output {
    std::process::Command::new(bin())
        .args(args)
        .args(extra)
        .output()
        .expect("binary runs")
}

fn run_ok(args: &[&str], extra: &[String]) {
    let output = run(args, extra);
    assert!(
        output.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&output.stderr)
    );
}

struct Fixture {
    dir: PathBuf,
    gen_hashes_first: BTreeMap<String, String>,
    gen_hashes_second: BTreeMap<String, String>,
    report_first: Vec<u8>,
    report_second: Vec<u8>,
}

fn manifest_file_hashes(path: &Path) -> BTreeMap<String, String> {
    let manifest: Value = serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    manifest["files"]
        .as_object()
        .unwrap()
        .iter()
        .map(|(k, v)| (k.clone(), v.as_str().unwrap().to_string()))
        .collect()
}

fn fixture() -> &'static Fixture {
    static FIXTURE: OnceLock<Fixture> = OnceLock::new();
    FIXTURE.get_or_init(|| {
        let dir = std::env::temp_dir().join(format!("hiercat_cli_fixture_{}", std::process::id()));
        let _ = std::fs::remove_dir_all(&dir);
        std::fs::create_dir_all(&dir).unwrap();
        let extra = base_args(&dir);
        run_ok(&["gen-data"], &extra);
        let gen_hashes_first = manifest_file_hashes(&dir.join("manifest_gen.json"));
        run_ok(&["gen-data"], &extra);
        let gen_hashes_second = manifest_file_hashes(&dir.join("manifest_gen.json"));
        run_ok(&["train", "--regime", "all"], &extra);
        run_ok(&["analyze", "--regime", "all"], &extra);
        run_ok(&["generalize", "--regime", "all"], &extra);
        run_ok(&["report"], &extra);
        let report_first = std::fs::read(dir.join("report.md")).unwrap();
        run_ok(&["report"], &extra);
        let report_second = std::fs::read(dir.join("report.md")).unwrap();
        Fixture {
            dir,
            gen_hashes_first,
            gen_hashes_second,
            report_first,
            report_second,
        }
    })
}

/// Copies the data and checkpoint artifacts into a scratch directory so a
/// test can re-run commands without racing other readers of the fixture.
fn copy_fixture(tag: &str) -> PathBuf {
    let src = &fixture().dir;
    let dst = std::env::temp_dir().join(format!(
        "hiercat_cli_{tag}_{}",
        std::process::id()
    ));
    let _ = std::fs::remove_dir_all(&dst);
    std::fs::create_dir_all(&dst).unwrap();
    for entry in std::fs::read_dir(src).unwrap() {
        let entry = entry.unwrap();
        std::fs::copy(entry.path(), dst.join(entry.file_name())).unwrap();
    }
    dst
}

fn read_csv_rows(path: &Path) -> Vec<Vec<String>> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(|f| f.to_string()).collect())
        .collect()
}

#[test]
fn gen_data_writes_expected_rows_and_reruns_identically() {
    let fx = fixture();
    let rows = read_csv_rows(&fx.dir.join("dataset.csv"));
    // Header plus per_sub * |subs| stimulus rows.
    assert_eq!(rows.len(), 1 + 12 * 24);
    assert_eq!(rows[0][0], "sub");
    assert_eq!(rows[0][1], "basic");
    assert_eq!(rows[0].len(), 2 + 32);
    let tax_rows = read_csv_rows(&fx.dir.join("taxonomy.csv"));
    assert_eq!(tax_rows.len(), 1 + 24);
    // Regenerating from the same config reproduces every content hash.
    assert_eq!(fx.gen_hashes_first, fx.gen_hashes_second);
    assert!(fx.gen_hashes_first.contains_key("dataset.csv"));
}

#[test]
fn invalid_config_exits_with_code_two() {
    let dir = std::env::temp_dir().join(format!("hiercat_cli_badcfg_{}", std::process::id()));
    let output = run(
        &[
            "gen-data",
            "--out",
            dir.to_str().unwrap(),
            "--set",
            "gen.per_sub=0",
        ],
        &[],
    );
    assert_eq!(output.status.code(), Some(2));
    let output = run(&["train", "--regime", "bogus"], &[]);
    assert_eq!(output.status.code(), Some(2));
}

#[test]
fn train_without_dataset_exits_with_code_four() {
    let dir = std::env::temp_dir().join(format!("hiercat_cli_nodata_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    let output = run(
        &["train", "--regime", "basic", "--out", dir.to_str().unwrap()],
        &[],
    );
    assert_eq!(output.status.code(), Some(4));
}

#[test]
fn single_level_history_leaves_inactive_columns_empty() {
    let fx = fixture();
    let rows = read_csv_rows(&fx.dir.join("loss_history_basic.csv"));
    assert_eq!(
        rows[0],
        vec!["epoch", "phase", "loss_basic", "loss_sub", "loss_joint", "acc_basic", "acc_sub"]
    );
    for row in &rows[1..] {
        assert_eq!(row[1], "pretrain");
        assert!(!row[2].is_empty(), "loss_basic must be recorded");
        assert!(row[3].is_empty(), "loss_sub must stay empty: {row:?}");
        assert!(row[4].is_empty(), "loss_joint must stay empty: {row:?}");
        assert!(row[6].is_empty(), "acc_sub must stay empty: {row:?}");
    }
}

#[test]
fn tune_phase_joint_loss_is_the_half_half_combination() {
    let fx = fixture();
    for name in ["loss_history_sub-pre-basic.csv", "loss_history_basic-pre-sub.csv"] {
        let rows = read_csv_rows(&fx.dir.join(name));
        let mut saw_tune = false;
        for row in &rows[1..] {
            match row[1].as_str() {
                "pretrain" => {
                    // Exactly one head active during pretraining.
                    assert!(row[2].is_empty() != row[3].is_empty(), "{name}: {row:?}");
                }
                "tune" => {
                    saw_tune = true;
                    let lb: f64 = row[2].parse().unwrap();
                    let ls: f64 = row[3].parse().unwrap();
                    let lj: f64 = row[4].parse().unwrap();
                    assert!(
                        (lj - (0.5 * lb + 0.5 * ls)).abs() < 1e-12,
                        "{name}: joint {lj} vs 0.5*{lb} + 0.5*{ls}"
                    );
                }
                other => panic!("unexpected phase {other}"),
            }
        }
        assert!(saw_tune, "{name} has no tune rows");
    }
}

#[test]
fn analyze_emits_consistent_artifacts() {
    let fx = fixture();
    let n_held_out = 5 * 24;
    for regime in ["sub", "basic", "sub-pre-basic", "basic-pre-sub"] {
        let emb_rows = read_csv_rows(&fx.dir.join(format!("embeddings_{regime}.csv")));
        assert_eq!(emb_rows.len(), 1 + n_held_out);
        assert_eq!(emb_rows[0].len(), 2 + 16);
        let sim_rows = read_csv_rows(&fx.dir.join(format!("similarity_{regime}.csv")));
        assert_eq!(sim_rows.len(), n_held_out);
        assert_eq!(sim_rows[0].len(), n_held_out);
        let pca_rows = read_csv_rows(&fx.dir.join(format!("pca_{regime}.csv")));
        assert_eq!(pca_rows.len(), 1 + n_held_out);
        assert_eq!(pca_rows[0], vec!["sub", "basic", "pc1", "pc2"]);

        let purity: Value = serde_json::from_str(
            &std::fs::read_to_string(fx.dir.join(format!("purity_{regime}.json"))).unwrap(),
        )
        .unwrap();
        for (cut, k) in [("basic", 6u64), ("sub", 24u64)] {
            assert_eq!(purity[cut]["k"].as_u64().unwrap(), k);
            let p = purity[cut]["purity"].as_f64().unwrap();
            assert!(p > 0.0 && p <= 1.0, "{regime}/{cut}: {p}");
        }

        // Newick sanity: every node except the root carries one branch
        // length, so a binary tree over N leaves has exactly 2N - 2 colons,
        // and one name per held-out stimulus.
        let newick =
            std::fs::read_to_string(fx.dir.join(format!("dendrogram_{regime}.nwk"))).unwrap();
        assert!(newick.ends_with(';'));
        let colons = newick.matches(':').count();
        assert_eq!(colons, 2 * n_held_out - 2);
        assert_eq!(newick.matches("b00s00_").count(), 5);
    }
}

#[test]
fn checkpoint_reload_reproduces_embeddings() {
    let dir = copy_fixture("reload");
    let extra = base_args(&dir);
    let before = std::fs::read(dir.join("embeddings_basic.csv")).unwrap();
    // Re-analyzing from the stored checkpoint regenerates the embedding
    // matrix byte for byte.
    run_ok(&["analyze", "--regime", "basic"], &extra);
    let after = std::fs::read(dir.join("embeddings_basic.csv")).unwrap();
    assert_eq!(before, after);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn gold_self_fit_scores_r2_of_one() {
    let dir = copy_fixture("gold");
    // Build a gold file from the model's own similarities, affinely mapped
    // into the rating range; the fit must then be perfect.
    let sim_rows = read_csv_rows(&dir.join("similarity_basic.csv"));
    let n = sim_rows.len();
    let mut pairs = Vec::new();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..n {
        for j in (i + 1)..n {
            let s: f64 = sim_rows[i][j].parse().unwrap();
            lo = lo.min(s);
            hi = hi.max(s);
            pairs.push((i, j, s));
        }
    }
    let mut gold = String::from("item_i,item_j,rating\n");
    for (i, j, s) in pairs {
        let rating = ((s - lo) * 10.0 / (hi - lo)).clamp(0.0, 10.0);
        gold.push_str(&format!("{i},{j},{rating}\n"));
    }
    let gold_path = dir.join("gold.csv");
    std::fs::write(&gold_path, gold).unwrap();

    let mut extra = base_args(&dir);
    extra.push("--set".into());
    extra.push(format!("analysis.gold={}", gold_path.to_str().unwrap()));
    run_ok(&["analyze", "--regime", "basic"], &extra);
    let r2: Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("r2_basic.json")).unwrap())
            .unwrap();
    let value = r2["r2"].as_f64().unwrap();
    assert!((value - 1.0).abs() < 1e-12, "self-fit r2 {value}");
    assert_eq!(r2["n_pairs"].as_u64().unwrap() as usize, n * (n - 1) / 2);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn missing_gold_is_a_runtime_error() {
    let dir = copy_fixture("missing_gold");
    let mut extra = base_args(&dir);
    extra.push("--set".into());
    extra.push("analysis.gold=does_not_exist.csv".into());
    let args: Vec<&str> = ["analyze", "--regime", "basic"].to_vec();
    let output = std::process::Command::new(bin())
        .args(&args)
        .args(&extra)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn zero_trials_is_a_runtime_error() {
    let dir = copy_fixture("zero_trials");
    let mut extra = base_args(&dir);
    extra.push("--set".into());
    extra.push("generalization.trials_per_condition=0".into());
    let output = std::process::Command::new(bin())
        .args(["generalize", "--regime", "basic"])
        .args(&extra)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(3));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn generalization_reports_have_six_rows_and_unit_means() {
    let fx = fixture();
    for regime in ["sub", "basic", "sub-pre-basic", "basic-pre-sub"] {
        for variant in ["sharpened", "unsharpened"] {
            let rows: Vec<Value> = serde_json::from_str(
                &std::fs::read_to_string(
                    fx.dir
                        .join(format!("generalization_{regime}_{variant}.json")),
                )
                .unwrap(),
            )
            .unwrap();
            assert_eq!(rows.len(), 6, "{regime}/{variant}");
            for row in &rows {
                let mean = row["mean"].as_f64().unwrap();
                assert!((0.0..=1.0).contains(&mean));
                assert_eq!(row["n_trials"].as_u64().unwrap(), 25);
            }
            let csv = read_csv_rows(
                &fx.dir
                    .join(format!("generalization_{regime}_{variant}.csv")),
            );
            assert_eq!(csv.len(), 7);
            assert_eq!(
                csv[0],
                vec!["condition", "match_type", "mean", "sd", "n_trials", "sharpened", "seed"]
            );
        }
    }
}

#[test]
fn one_sub_rows_agree_between_sharpened_and_unsharpened() {
    let fx = fixture();
    let load = |variant: &str| -> Vec<Value> {
        serde_json::from_str(
            &std::fs::read_to_string(
                fx.dir
                    .join(format!("generalization_basic_{variant}.json")),
            )
            .unwrap(),
        )
        .unwrap()
    };
    let sharp = load("sharpened");
    let plain = load("unsharpened");
    for (s, p) in sharp.iter().zip(&plain) {
        if s["condition"] == "1-sub" {
            // n = 1, so the sharpening exponent is 1 either way.
            let ms = s["mean"].as_f64().unwrap();
            let mp = p["mean"].as_f64().unwrap();
            assert!((ms - mp).abs() < 1e-12, "{ms} vs {mp}");
        }
    }
}

#[test]
fn report_covers_all_regimes_and_is_reproducible() {
    let fx = fixture();
    let report = String::from_utf8(fx.report_first.clone()).unwrap();
    for regime in ["sub", "basic", "sub-pre-basic", "basic-pre-sub"] {
        assert!(report.contains(&format!("| {regime} |")), "missing {regime}");
    }
    assert!(report.contains("## Cluster purity"));
    assert!(report.contains("## Generalization (sharpened)"));
    assert!(report.contains("## Generalization (unsharpened)"));
    assert!(report.contains("config hash"));
    // Regenerating from unchanged artifacts is byte-identical.
    assert_eq!(fx.report_first, fx.report_second);
}

#[test]
fn report_notes_missing_regimes() {
    let dir = std::env::temp_dir().join(format!("hiercat_cli_partial_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let mut extra = base_args(&dir);
    extra.push("--set".into());
    extra.push("train.epochs_pretrain=2".into());
    run_ok(&["gen-data"], &extra);
    run_ok(&["train", "--regime", "basic"], &extra);
    run_ok(&["analyze", "--regime", "basic"], &extra);
    run_ok(&["report"], &extra);
    let report = std::fs::read_to_string(dir.join("report.md")).unwrap();
    assert!(report.contains("| basic |"));
    assert!(report.contains("`sub`: no purity artifact found"));
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn config_file_drives_the_run_and_flags_override_it() {
    let dir = std::env::temp_dir().join(format!("hiercat_cli_cfgfile_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let config_path = dir.join("experiment.json");
    let config = serde_json::json!({
        "taxonomy": {"pairs": [["dalmatian", "dog"], ["poodle", "dog"], ["tabby", "cat"], ["siamese", "cat"]]},
        "gen": {"input_dim": 8, "per_sub": 6},
        "holdout_per_sub": 2,
        "out_dir": dir.join("from_config").to_str().unwrap(),
        "master_seed": 5
    });
    std::fs::write(&config_path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    run_ok(
        &["gen-data", "--config", config_path.to_str().unwrap()],
        &[],
    );
    let rows = read_csv_rows(&dir.join("from_config").join("dataset.csv"));
    assert_eq!(rows.len(), 1 + 6 * 4);
    assert_eq!(rows[0].len(), 2 + 8);
    // --set overrides a key from the file.
    run_ok(
        &[
            "gen-data",
            "--config",
            config_path.to_str().unwrap(),
            "--set",
            "gen.per_sub=3",
        ],
        &[],
    );
    let rows = read_csv_rows(&dir.join("from_config").join("dataset.csv"));
    assert_eq!(rows.len(), 1 + 3 * 4);
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn report_without_artifacts_fails() {
    let dir = std::env::temp_dir().join(format!("hiercat_cli_empty_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let output = run(&["report", "--out", dir.to_str().unwrap()], &[]);
    assert!(!output.status.success());
    let _ = std::fs::remove_dir_all(&dir);
}

#[test]
fn parallel_training_matches_sequential_artifacts() {
    let dir = std::env::temp_dir().join(format!("hiercat_cli_par_{}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    let extra = base_args(&dir);
    run_ok(&["gen-data"], &extra);
    run_ok(&["train", "--regime", "all", "--parallel"], &extra);
    let fx = fixture();
    for regime in ["sub", "basic", "sub-pre-basic", "basic-pre-sub"] {
        let a = std::fs::read(dir.join(format!("checkpoint_{regime}.json"))).unwrap();
        let b = std::fs::read(fx.dir.join(format!("checkpoint_{regime}.json"))).unwrap();
        assert_eq!(a, b, "checkpoint for {regime} differs under --parallel");
    }
    let _ = std::fs::remove_dir_all(&dir);
}
