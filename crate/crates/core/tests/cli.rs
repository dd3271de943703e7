use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use outlier_audit::cli::RunConfig;

const BIN: &str = env!("CARGO_BIN_EXE_outlier-audit");

const CONFIG: &str = r#"
[paths]
original = "orig.csv"

[[attribute]]
name = "age"
kind = "numerical"
role = "qi"

[[attribute]]
name = "income"
kind = "numerical"
role = "qi"

[[attribute]]
name = "home"
kind = "categorical"
role = "qi"

[outliers]
k = 2.0
attributes = ["age", "income"]

[[qi]]
attribute = "age"
comparator = "gauss"
offset = 5.0
scale = 5.0

[[qi]]
attribute = "income"
comparator = "gauss"
offset = 1000.0
scale = 1000.0

[[qi]]
attribute = "home"
comparator = "levenshtein"

[[ladder]]
name = "numerical"
qis = ["age", "income"]

[[ladder]]
name = "all"
qis = ["age", "income", "home"]

[synth]
epsilon = 1.0
seed = 11

[[variant]]
name = "copy"
path = "orig.csv"

[[variant]]
name = "dp"
generate = { epsilon = 0.5, seed = 2 }

[sweep]
grid = [0.01, 0.1, 0.2, 0.5, 1.0, 5.0, 10.0]
repeats = 3
base_seed = 40
"#;

struct Fixture {
    dir: tempfile::TempDir,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let mut csv = String::from("age,income,home\n");
        for i in 0..60 {
            let home = ["RENT", "OWN", "MORTGAGE"][i % 3];
            csv.push_str(&format!(
                "{},{},{}\n",
                25 + i % 15,
                30000 + 700 * (i % 20),
                home
            ));
        }
        csv.push_str("97,2500000,OWN\n");
        csv.push_str("96,2400000,RENT\n");
        fs::write(dir.path().join("orig.csv"), csv).unwrap();
        fs::write(dir.path().join("run.toml"), CONFIG).unwrap();
        Fixture { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn write(&self, name: &str, text: &str) -> PathBuf {
        let p = self.path(name);
        fs::write(&p, text).unwrap();
        p
    }

    fn config(&self) -> String {
        self.path("run.toml").display().to_string()
    }

    fn run(&self, args: &[&str]) -> Output {
        run_with_env(args, None)
    }
}

fn run_with_env(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args)
        .env_remove(outlier_audit::cli::OUTPUT_DIR_ENV);
    if let Some(p) = out_env {
        cmd.env(outlier_audit::cli::OUTPUT_DIR_ENV, p);
    }
    cmd.output().unwrap()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

#[test]
fn outliers_summary_and_listing() {
    let f = Fixture::new();
    let listing = f.path("out/outliers.csv");
    let o = f.run(&[
        "outliers",
        "-c",
        &f.config(),
        "--out",
        listing.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    assert_eq!(stdout(&o), "2 outliers\n");
    let text = fs::read_to_string(listing).unwrap();
    assert!(text.starts_with("index,z_age,z_income,triggered_by\n60,"));
    assert_eq!(text.lines().count(), 3);
}

#[test]
fn constant_columns_have_no_outliers() {
    let f = Fixture::new();
    let flat = f.write(
        "flat.csv",
        "age,income,home\n30,100,A\n30,100,B\n30,100,C\n",
    );
    let o = f.run(&[
        "outliers",
        "-c",
        &f.config(),
        "--original",
        flat.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(stdout(&o), "0 outliers\n");
}

#[test]
fn raising_k_never_adds_outliers() {
    let f = Fixture::new();
    let count = |k: &str| {
        let cfg = CONFIG.replace("k = 2.0", &format!("k = {k}"));
        let p = f.write(&format!("k{k}.toml"), &cfg);
        let o = f.run(&["outliers", "-c", p.to_str().unwrap()]);
        assert_eq!(code(&o), 0);
        stdout(&o)
            .split_whitespace()
            .next()
            .unwrap()
            .parse::<usize>()
            .unwrap()
    };
    let (a, b, c) = (count("1.0"), count("3.0"), count("4.0"));
    assert!(a >= b && b >= c, "{a} {b} {c}");
}

#[test]
fn link_identity_and_pairs_file() {
    let f = Fixture::new();
    let out = f.path("link");
    let o = f.run(&[
        "link",
        "-c",
        &f.config(),
        "--variant",
        f.path("orig.csv").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    // the two planted records are far apart, each matches only itself
    assert_eq!(
        stdout(&o),
        "2 outliers, 2 pairs, 2 distinct originals, 2 unique matches\n"
    );
    let pairs = fs::read_to_string(out.join("matches.csv")).unwrap();
    assert_eq!(
        pairs,
        "original_index,synthetic_index,score_age,score_income,score_home\n\
         60,60,1.000000,1.000000,1.000000\n\
         61,61,1.000000,1.000000,1.000000\n"
    );
}

#[test]
fn link_qi_subset_and_unknown_qi() {
    let f = Fixture::new();
    let v = f.path("orig.csv");
    let o = f.run(&[
        "link",
        "-c",
        &f.config(),
        "--variant",
        v.to_str().unwrap(),
        "--qis",
        "age",
    ]);
    assert_eq!(code(&o), 0);
    // ages 97 and 96 are within the 5-year offset of each other
    assert_eq!(
        stdout(&o),
        "2 outliers, 4 pairs, 2 distinct originals, 0 unique matches\n"
    );
    let o = f.run(&[
        "link",
        "-c",
        &f.config(),
        "--variant",
        v.to_str().unwrap(),
        "--qis",
        "zip",
    ]);
    assert_eq!(code(&o), 2);
}

#[test]
fn link_toy_matches_hand_enumeration() {
    let f = Fixture::new();
    let cfg = CONFIG.replace("k = 2.0", "k = 0.5");
    let cfg_path = f.write("toy.toml", &cfg);
    let orig = f.write(
        "toy_orig.csv",
        "age,income,home\n20,10000,RENT\n40,50000,OWN\n60,90000,RENT\n41,52000,OWN\n80,20000,MORTGAGE\n",
    );
    let var = f.write(
        "toy_var.csv",
        "age,income,home\n21,10500,RENT\n45,51000,OWN\n61,95000,RENT\n39,50100,OWN\n80,20000,MORTAGE\n",
    );
    let out = f.path("toy");
    let o = f.run(&[
        "link",
        "-c",
        cfg_path.to_str().unwrap(),
        "--original",
        orig.to_str().unwrap(),
        "--variant",
        var.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let pairs: Vec<(usize, usize)> = fs::read_to_string(out.join("matches.csv"))
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| {
            let mut it = l.split(',');
            (
                it.next().unwrap().parse().unwrap(),
                it.next().unwrap().parse().unwrap(),
            )
        })
        .collect();
    // Worked by hand: age within 5 scores 1 (≥ 0.5 up to 10 apart), income
    // within 1000 scores 1 (≥ 0.5 up to 2000 apart), home must be equal.
    // k = 0.5 keeps rows 0, 2 and 4 (age z of -1.39, 0.58, 1.56).
    assert_eq!(pairs, vec![(0, 0)]);
}

#[test]
fn link_with_no_outliers_is_empty() {
    let f = Fixture::new();
    let flat = f.write("flat.csv", "age,income,home\n30,100,A\n30,100,B\n");
    let o = f.run(&[
        "link",
        "-c",
        &f.config(),
        "--original",
        flat.to_str().unwrap(),
        "--variant",
        flat.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(
        stdout(&o),
        "0 outliers, 0 pairs, 0 distinct originals, 0 unique matches\n"
    );
}

fn utility_json(f: &Fixture, orig: &Path, var: &Path) -> serde_json::Value {
    let o = f.run(&[
        "utility",
        "-c",
        &f.config(),
        "--original",
        orig.to_str().unwrap(),
        "--variant",
        var.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    serde_json::from_slice(&o.stdout).unwrap()
}

#[test]
fn utility_identity_and_fixtures() {
    let f = Fixture::new();
    let orig = f.path("orig.csv");
    let v = utility_json(&f, &orig, &orig);
    for (_, scores) in v["attributes"].as_object().unwrap() {
        for (_, s) in scores.as_object().unwrap() {
            assert_eq!(s.as_f64(), Some(1.0));
        }
    }

    let real = f.write(
        "real.csv",
        "age,income,home\n0,0,A\n100,100,B\n50,50,C\n50,50,D\n",
    );
    let synth = f.write(
        "synth.csv",
        "age,income,home\n25,60,A\n100,70,B\n40,65,A\n40,65,B\n",
    );
    let v = utility_json(&f, &real, &synth);
    assert_eq!(v["attributes"]["age"]["RangeCoverage"].as_f64(), Some(0.75));
    assert_eq!(
        v["attributes"]["income"]["RangeCoverage"].as_f64(),
        Some(0.1)
    );
    assert_eq!(
        v["attributes"]["age"]["StatisticSimilarity"].as_f64(),
        Some(0.9)
    );
    assert_eq!(
        v["attributes"]["home"]["CategoryCoverage"].as_f64(),
        Some(0.5)
    );
    assert_eq!(
        v["attributes"]["home"]["AttributeCoverage"].as_f64(),
        Some(0.5)
    );
    assert_eq!(
        v["summary"]["CategoryCoverage"]["attributes"].as_u64(),
        Some(1)
    );
}

#[test]
fn synthesize_is_reproducible() {
    let f = Fixture::new();
    let a = f.path("a.csv");
    let b = f.path("b.csv");
    for (p, threads) in [(&a, "1"), (&b, "4")] {
        let o = f.run(&[
            "--threads",
            threads,
            "synthesize",
            "-c",
            &f.config(),
            "--seed",
            "5",
            "--out",
            p.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{o:?}");
    }
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    let text = fs::read_to_string(&a).unwrap();
    assert!(text.starts_with("age,income,home\n"));
    assert_eq!(text.lines().count(), 63);

    for eps in ["0.01", "0.1", "0.2", "0.5", "1.0", "5.0", "10.0"] {
        let o = f.run(&[
            "synthesize",
            "-c",
            &f.config(),
            "--epsilon",
            eps,
            "--n",
            "10",
            "--out",
            a.to_str().unwrap(),
        ]);
        assert_eq!(code(&o), 0, "{eps}");
    }
}

#[test]
fn synthesize_rejects_bad_parameters() {
    let f = Fixture::new();
    let out = f.path("x.csv");
    let cfg = f.config();
    for extra in [
        &["--n", "0"][..],
        &["--epsilon", "0"],
        &["--epsilon", "-1"],
        &["--num-bins", "0"],
    ] {
        let mut args = vec!["synthesize", "-c", &cfg, "--out", out.to_str().unwrap()];
        args.extend_from_slice(extra);
        let o = f.run(&args);
        assert_eq!(code(&o), 2, "{extra:?}");
    }
    assert!(!out.exists());
}

fn read_report(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("report.json")).unwrap()).unwrap()
}

#[test]
fn audit_report_tree() {
    let f = Fixture::new();
    let out = f.path("audit");
    let o = f.run(&["audit", "-c", &f.config(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{o:?}");
    let report = read_report(&out);
    let variants = report["variants"].as_array().unwrap();
    assert_eq!(variants.len(), 2);
    assert_eq!(variants[0]["name"], "copy");
    assert_eq!(
        variants[0]["utility"]["summary"]["AttributeCoverage"]["mean"].as_f64(),
        Some(1.0)
    );
    for v in variants {
        let num = v["linkage"]["numerical"]["pair_count"].as_u64().unwrap();
        let all = v["linkage"]["all"]["pair_count"].as_u64().unwrap();
        assert!(all <= num);
    }
    assert_eq!(variants[1]["generator"]["kind"], "dp_independent");
    assert_eq!(variants[1]["generator"]["n"], 62);
    assert!(out.join("outliers.csv").exists());
    assert!(out.join("matches/copy__all.csv").exists());
    assert!(out.join("variants/dp.csv").exists());

    // numbers carry six fractional digits
    let text = fs::read_to_string(out.join("report.json")).unwrap();
    assert!(text.contains("\"mean\": 1.000000"));

    // the echoed configuration parses back to the same RunConfig
    let echoed = RunConfig::from_echo(&report["run_meta"]["config"]).unwrap();
    assert_eq!(echoed, RunConfig::parse(CONFIG, "x").unwrap());
}

#[test]
fn audit_reports_are_stable() {
    let f = Fixture::new();
    let strip = |mut v: serde_json::Value| {
        v["run_meta"].as_object_mut().unwrap().remove("execution");
        v
    };
    let out = f.path("r");
    let o = f.run(&[
        "--threads",
        "1",
        "audit",
        "-c",
        &f.config(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    let first = strip(read_report(&out));
    let first_dp = fs::read(out.join("variants/dp.csv")).unwrap();
    let o = f.run(&[
        "--threads",
        "3",
        "audit",
        "-c",
        &f.config(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0);
    assert_eq!(strip(read_report(&out)), first);
    assert_eq!(fs::read(out.join("variants/dp.csv")).unwrap(), first_dp);
    assert_eq!(first["run_meta"]["config_hash"].as_str().unwrap().len(), 64);
}

#[test]
fn audit_isolates_corrupt_variant() {
    let f = Fixture::new();
    f.write("bad.csv", "age,income,home\n30,abc,A\n");
    let cfg = CONFIG.replace(
        "name = \"dp\"\ngenerate = { epsilon = 0.5, seed = 2 }",
        "name = \"bad\"\npath = \"bad.csv\"",
    );
    let p = f.write("bad.toml", &cfg);
    let out = f.path("iso");
    let o = f.run(&[
        "audit",
        "-c",
        p.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(code(&o), 0, "{o:?}");
    let report = read_report(&out);
    assert_eq!(report["variants"][0]["status"], "ok");
    assert_eq!(report["variants"][1]["status"], "failed");
    assert!(report["variants"][1]["error"]
        .as_str()
        .unwrap()
        .contains("abc"));
}

#[test]
fn output_dir_from_environment() {
    let f = Fixture::new();
    let env_dir = f.path("from_env");
    let o = run_with_env(&["audit", "-c", &f.config()], Some(&env_dir));
    assert_eq!(code(&o), 0, "{o:?}");
    assert!(env_dir.join("report.json").exists());

    // without any output directory the report goes to stdout
    let o = f.run(&["audit", "-c", &f.config()]);
    assert_eq!(code(&o), 0);
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(v["variants"].as_array().unwrap().len(), 2);
}

#[test]
fn sweep_emits_curve_rows() {
    let f = Fixture::new();
    let out = f.path("sweep");
    let o = f.run(&["sweep", "-c", &f.config(), "--out", out.to_str().unwrap()]);
    assert_eq!(code(&o), 0, "{o:?}");
    let report = read_report(&out);
    assert_eq!(report["variants"].as_array().unwrap().len(), 21);
    let rows = report["tradeoff"].as_array().unwrap();
    assert_eq!(rows.len(), 14);
    let values: Vec<f64> = rows.iter().map(|r| r["value"].as_f64().unwrap()).collect();
    assert!(values.windows(2).all(|w| w[0] <= w[1]));
    assert!(rows.iter().all(|r| r["runs"] == 3));
    assert_eq!(report["variants"][4]["generator"]["seed"], 44);
}

#[test]
fn exit_codes() {
    let f = Fixture::new();
    let cfg = f.config();
    // usage
    assert_eq!(code(&f.run(&["frobnicate"])), 2);
    assert_eq!(code(&f.run(&["outliers"])), 2);
    assert_eq!(code(&f.run(&["--threads", "0", "outliers", "-c", &cfg])), 2);
    assert_eq!(code(&f.run(&["--help"])), 0);
    assert_eq!(code(&f.run(&["--version"])), 0);
    // configuration
    let unknown = f.write(
        "unknown.toml",
        &CONFIG.replace("k = 2.0", "k = 2.0\nthreshold = 3"),
    );
    assert_eq!(
        code(&f.run(&["outliers", "-c", unknown.to_str().unwrap()])),
        2
    );
    assert_eq!(
        code(&f.run(&["outliers", "-c", f.path("missing.toml").to_str().unwrap()])),
        2
    );
    let bad_kind = f.write(
        "kind.toml",
        &CONFIG.replace(
            "attributes = [\"age\", \"income\"]",
            "attributes = [\"home\"]",
        ),
    );
    assert_eq!(
        code(&f.run(&["outliers", "-c", bad_kind.to_str().unwrap()])),
        2
    );
    // data
    let missing = f.path("nope.csv");
    assert_eq!(
        code(&f.run(&[
            "outliers",
            "-c",
            &cfg,
            "--original",
            missing.to_str().unwrap()
        ])),
        3
    );
    let bad = f.write("bad.csv", "age,income,home\nold,1,A\n");
    assert_eq!(
        code(&f.run(&["outliers", "-c", &cfg, "--original", bad.to_str().unwrap()])),
        3
    );
    let header = f.write("header.csv", "age,salary,home\n1,1,A\n");
    assert_eq!(
        code(&f.run(&[
            "outliers",
            "-c",
            &cfg,
            "--original",
            header.to_str().unwrap()
        ])),
        3
    );
    let o = f.run(&["link", "-c", &cfg, "--variant", bad.to_str().unwrap()]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).contains("error:"));
}
