use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn coalfed(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_coalfed"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).expect("utf-8 output")
}

const REFERENCE: &str = r#"
name = "reference-cubic"
seed = 7

[data]
type = "curve"
"#;

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn metric(csv: &str, model: &str) -> f64 {
    csv.lines()
        .find_map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0] == model).then(|| f[2].parse().unwrap())
        })
        .unwrap_or_else(|| panic!("no row for {model} in\n{csv}"))
}

#[test]
fn run_writes_artifacts_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "s.toml", REFERENCE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for out in [&a, &b] {
        let o = coalfed(&["run", "--scenario", &scenario, "--seed", "7", "--out", out.to_str().unwrap()]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for f in ["metrics.csv", "regions.csv", "policies.txt", "transcript.jsonl", "plotdata.csv", "manifest.toml"] {
        assert!(a.join(f).is_file(), "{f} missing");
    }
    let ma = fs::read(a.join("metrics.csv")).unwrap();
    assert_eq!(ma, fs::read(b.join("metrics.csv")).unwrap());
    assert_eq!(
        fs::read(a.join("transcript.jsonl")).unwrap(),
        fs::read(b.join("transcript.jsonl")).unwrap()
    );
    let text = String::from_utf8(ma).unwrap();
    assert!(metric(&text, "ensemble") < metric(&text, "naive"));
    let plot = fs::read_to_string(a.join("plotdata.csv")).unwrap();
    assert!(plot.starts_with("x,ground_truth,site_1,site_2,site_3,naive,ensemble"));
}

#[test]
fn manifest_reruns_to_the_same_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "s.toml", REFERENCE);
    let first = dir.path().join("first");
    assert!(coalfed(&["run", "--scenario", &scenario, "--out", first.to_str().unwrap()])
        .status
        .success());
    let manifest = first.join("manifest.toml");
    let second = dir.path().join("second");
    let o = coalfed(&["run", "--scenario", manifest.to_str().unwrap(), "--out", second.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(
        fs::read(first.join("metrics.csv")).unwrap(),
        fs::read(second.join("metrics.csv")).unwrap()
    );
}

#[test]
fn different_seed_changes_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let scenario = write(dir.path(), "s.toml", REFERENCE);
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    assert!(coalfed(&["run", "--scenario", &scenario, "--seed", "1", "--out", a.to_str().unwrap()])
        .status
        .success());
    assert!(coalfed(&["run", "--scenario", &scenario, "--seed", "2", "--out", b.to_str().unwrap()])
        .status
        .success());
    assert_ne!(
        fs::read(a.join("metrics.csv")).unwrap(),
        fs::read(b.join("metrics.csv")).unwrap()
    );
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.toml");
    assert_eq!(coalfed(&["run", "--scenario", missing.to_str().unwrap()]).status.code(), Some(2));
    let bad = write(dir.path(), "bad.toml", "name = \"x\"\nunknown_key = 1\n[data]\ntype = \"curve\"\n");
    assert_eq!(coalfed(&["run", "--scenario", &bad]).status.code(), Some(2));
    assert_eq!(coalfed(&["bounds", "--q", "3"]).status.code(), Some(2));
    assert_eq!(coalfed(&["bounds", "--q", "3", "--nu", "1.5"]).status.code(), Some(2));
    assert_eq!(coalfed(&["frobnicate"]).status.code(), Some(2));
}

#[test]
fn bounds_table() {
    let o = coalfed(&["bounds", "--q", "1", "--nu", "0", "--c0", "1", "--c1", "1"]);
    assert!(o.status.success());
    let text = stdout(&o);
    let row: Vec<&str> = text.lines().nth(1).unwrap().split('\t').collect();
    let p: f64 = row[2].parse().unwrap();
    let r: f64 = row[3].parse().unwrap();
    assert!((p - (1.0 - (-2.0f64).exp())).abs() < 1e-12);
    assert!((r - (1.0 - (-1.0f64).exp())).abs() < 1e-12);

    let dir = tempfile::tempdir().unwrap();
    let stats = write(
        dir.path(),
        "stats.toml",
        "dedup_count = 400\n[[partners]]\npartner_id = \"1\"\nq = 100\nnu = 0.0\n\
         [[partners]]\npartner_id = \"2\"\nq = 300\nnu = 0.2\n",
    );
    let o = coalfed(&["bounds", "--stats", &stats]);
    assert!(o.status.success());
    let text = stdout(&o);
    let union_row = text
        .lines()
        .skip_while(|l| !l.starts_with("reference"))
        .nth(1)
        .unwrap();
    let f: Vec<&str> = union_row.split('\t').collect();
    assert_eq!(f[0], "1");
    assert_eq!(f[1].parse::<f64>().unwrap(), 4.0);
    assert!((f[2].parse::<f64>().unwrap() - 0.15).abs() < 1e-12);
    assert_eq!(f[3], "true");
}

const CONTEXT: &str = r#"
[[partners]]
id = "UK"
declared_format = "csv-v2"
declared_labels = ["car", "lorry"]
declared_fields = ["x0", "x1"]
trustworthiness = 0.9

[canonical]
format = "canonical"
fields = ["x0", "x1"]
labels = { classes = ["car", "truck"] }

[[helper_services]]
name = "csv2canonical"
from_format = "csv-v2"
to_format = "canonical"

[synonyms.labels]
lorry = "truck"
"#;

#[test]
fn policies_generate_and_check() {
    let dir = tempfile::tempdir().unwrap();
    let ctx = write(dir.path(), "context.toml", CONTEXT);
    let guidance = write(dir.path(), "guidance.toml", "qoi_threshold = 0.8\ntrust_threshold = 0.6\n");
    let out = dir.path().join("policies.txt");
    let o = coalfed(&[
        "policies",
        "generate",
        "--context",
        &ctx,
        "--guidance",
        &guidance,
        "--out",
        out.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.contains("if (source-name == UK) and (source-format == csv-v2) then invoke helper-service csv2canonical."));
    assert!(text.contains("if (source-name == UK) and (label-name == lorry) then change label to truck."));
    assert!(text.contains("0.8"));

    let o = coalfed(&["policies", "check", "--policies", out.to_str().unwrap(), "--context", &ctx, "--guidance", &guidance]);
    assert!(o.status.success(), "{}", stdout(&o));
    assert!(stdout(&o).ends_with("ok\n"));

    // checked against default guidance the thresholds no longer match
    let o = coalfed(&["policies", "check", "--policies", out.to_str().unwrap(), "--context", &ctx]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("missing:"));

    let broken = write(dir.path(), "broken.txt", "if (a == b then accept.\n");
    let o = coalfed(&["policies", "check", "--policies", &broken]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("3"));
}

#[test]
fn example_scenarios_resolve() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scenarios");
    let mut seen = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        if path.extension().is_some_and(|e| e == "toml") {
            coalfed::scenario::Scenario::load(&path)
                .and_then(|s| s.resolved(None))
                .unwrap_or_else(|e| panic!("{}: {e}", path.display()));
            seen += 1;
        }
    }
    assert!(seen >= 3);
}
