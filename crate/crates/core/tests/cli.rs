use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use pgope::cr_bound::check_tree;
use pgope::TabularMdp;

fn configs() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn pgope(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_pgope"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .map(|l| l.split(',').map(str::to_owned).collect())
        .collect()
}

fn column(rows: &[Vec<String>], name: &str) -> Vec<f64> {
    let idx = rows[0].iter().position(|h| h == name).expect(name);
    rows[1..].iter().map(|r| r[idx].parse().unwrap()).collect()
}

#[test]
fn all_suites_pass_on_deterministic_tree_and_rerun_identically() {
    let config = configs().join("experiments/deterministic-tree.json");
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let run = pgope(&["all", "--config", path(&config), "--out", path(out), "--seed", "5"]);
        assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    }
    let mut names: Vec<_> = fs::read_dir(&a)
        .unwrap()
        .map(|e| e.unwrap().file_name())
        .collect();
    names.sort();
    assert!(names.len() >= 8);
    for name in &names {
        assert_eq!(fs::read(a.join(name)).unwrap(), fs::read(b.join(name)).unwrap(), "{name:?}");
    }

    // Deterministic transitions and rewards: exact side information leaves
    // nothing to estimate.
    let rows = csv(&fs::read_to_string(a.join("crbound.csv")).unwrap());
    assert!(column(&rows, "drpg_variance").iter().all(|v| v.abs() < 1e-12));
    assert!(column(&rows, "bound").iter().all(|v| v.abs() < 1e-12));
}

#[test]
fn different_seed_changes_monte_carlo_output_only() {
    let config = configs().join("experiments/chain.json");
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for (out, seed) in [(&a, "1"), (&b, "2")] {
        let run = pgope(&["variance", "--config", path(&config), "--out", path(out), "--seed", seed]);
        assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    }
    let read = |d: &Path, f: &str| fs::read_to_string(d.join(f)).unwrap();
    assert_eq!(read(&a, "closed_form.csv"), read(&b, "closed_form.csv"));
    assert_ne!(read(&a, "monte_carlo.csv"), read(&b, "monte_carlo.csv"));
}

#[test]
fn sampling_suite_without_seed_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    let mdp = configs().join("mdps/chain.json");
    fs::write(
        &config,
        serde_json::json!({ "mdp": path(&mdp), "policy": { "kind": "uniform" } }).to_string(),
    )
    .unwrap();
    let out = dir.path().join("out");
    let run = pgope(&["variance", "--config", path(&config), "--out", path(&out)]);
    assert_eq!(run.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&run.stderr).contains("seed"));

    // Exact suites do not sample and run without one.
    let run = pgope(&["correspondence", "--config", path(&config), "--out", path(&out)]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
}

#[test]
fn malformed_mdp_names_the_offending_pair() {
    let text = fs::read_to_string(configs().join("mdps/chain.json")).unwrap();
    let mut json: serde_json::Value = serde_json::from_str(&text).unwrap();
    json["transitions"][0]["next"][0]["p"] = serde_json::json!(0.5);
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    fs::write(&bad, json.to_string()).unwrap();

    let run = pgope(&["cr-bound", "--mdp", path(&bad), "--all"]);
    assert_eq!(run.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&run.stderr);
    assert!(stderr.contains("(s=0, a=0)"), "{stderr}");
}

#[test]
fn verify_correspondence_writes_one_row_per_trajectory() {
    let mdp_path = configs().join("mdps/stochastic-dag.json");
    let mdp = TabularMdp::load(&mdp_path).unwrap();
    let run = pgope(&["verify-correspondence", "--pair", "dr-constant:trajcv", "--mdp", path(&mdp_path)]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let rows = csv(&String::from_utf8(run.stdout).unwrap());
    assert_eq!(rows[0], ["trajectory", "probability", "deviation"]);
    assert_eq!((rows.len() - 1) as u128, mdp.support_size());
    let total: f64 = column(&rows, "probability").iter().sum();
    assert!((total - 1.0).abs() < 1e-9);
    assert!(column(&rows, "deviation").iter().all(|d| *d <= 1e-6));

    // A tolerance no estimator can meet turns into a failed check, not an error.
    let run = pgope(&["verify-correspondence", "--pair", "baseline", "--mdp", path(&mdp_path), "--tol", "0"]);
    assert_eq!(run.status.code(), Some(1));

    let run = pgope(&["verify-correspondence", "--pair", "nonsense", "--mdp", path(&mdp_path)]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn cr_bound_single_coordinate_matches_full_table() {
    let mdp = configs().join("mdps/tree.json");
    let all = pgope(&["cr-bound", "--mdp", path(&mdp), "--all", "--policy-seed", "3"]);
    let one = pgope(&["cr-bound", "--mdp", path(&mdp), "--coord", "5", "--policy-seed", "3"]);
    assert_eq!(all.status.code(), Some(0));
    assert_eq!(one.status.code(), Some(0));
    let all = csv(&String::from_utf8(all.stdout).unwrap());
    let one = csv(&String::from_utf8(one.stdout).unwrap());
    assert_eq!(all[0], ["coordinate", "bound", "drpg_variance", "gap"]);
    assert_eq!(all.len(), 1 + 21 * 2);
    assert_eq!(one.len(), 2);
    assert_eq!(one[1], all[6]);
    // Tree MDP with exact side information: the bound is attained.
    assert!(column(&all, "gap").iter().all(|g| g.abs() < 1e-9));

    let run = pgope(&["cr-bound", "--mdp", path(&mdp), "--coord", "42"]);
    assert_eq!(run.status.code(), Some(2));
}

#[test]
fn variance_table_has_vanilla_as_reference() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("variance.csv");
    let run = pgope(&[
        "variance-table",
        "--mdp",
        path(&configs().join("mdps/deterministic-dag.json")),
        "--config",
        path(&configs().join("experiments/stochastic-dag.json")),
        "--out",
        path(&out),
    ]);
    assert_eq!(run.status.code(), Some(0), "{}", String::from_utf8_lossy(&run.stderr));
    let rows = csv(&fs::read_to_string(&out).unwrap());
    assert_eq!(rows[0], ["estimator", "model", "trace", "reduction_vs_vanilla"]);
    let vanilla = rows.iter().find(|r| r[0] == "vanilla").unwrap();
    assert_eq!(vanilla[3], "0");
    let exact = rows.iter().find(|r| r[0] == "drpg" && r[1] == "exact-dp").unwrap();
    assert!(exact[3].parse::<f64>().unwrap() >= 0.0);
    assert!(column(&rows, "trace").iter().all(|t| *t >= 0.0));
}

#[test]
fn generate_mdp_is_reproducible_and_trees_are_trees() {
    let dir = tempfile::tempdir().unwrap();
    for kind in ["chain", "tree", "gridlike", "random-dag"] {
        let a = dir.path().join(format!("{kind}-a.json"));
        let b = dir.path().join(format!("{kind}-b.json"));
        for out in [&a, &b] {
            let run = pgope(&["generate-mdp", "--kind", kind, "--seed", "9", "--out", path(out)]);
            assert_eq!(run.status.code(), Some(0));
        }
        assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
        let mdp = TabularMdp::load(&a).unwrap();
        assert_eq!(mdp.to_json_string() + "\n", fs::read_to_string(&a).unwrap());
        if kind == "tree" {
            check_tree(&mdp).unwrap();
        }
    }
    let run = pgope(&["generate-mdp", "--kind", "tree", "--branching", "3", "--horizon", "1"]);
    let mdp = TabularMdp::from_json_str(&String::from_utf8(run.stdout).unwrap()).unwrap();
    assert_eq!(mdp.num_states(), 1 + 2 * 3);
}
