use std::path::Path;
use std::process::{Command, Output};

fn intmed(args: &[&str], workers: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_intmed"));
    cmd.args(args);
    match workers {
        Some(w) => cmd.env("INTMED_WORKERS", w),
        None => cmd.env_remove("INTMED_WORKERS"),
    };
    cmd.output().expect("binary runs")
}

fn generate(dir: &Path, dgm: &str, n: usize, name: &str) {
    let out = dir.join(name);
    let o = intmed(&["generate", "--dgm", dgm, "--n", &n.to_string(), "--seed", "4", "--out", out.to_str().unwrap()], None);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p.to_str().unwrap().to_string()
}

const NT_CONFIG: &str = r#"
data = "binary_nt.csv"
family = "nontransported"
w = ["w"]
a = "a"
z = ["z"]
m = ["m"]
y = "y"
folds = 5
learners = ["glm_saturated"]
exposure_learners = ["mean"]
seed = 11
"#;

const T_CONFIG: &str = r#"
data = "binary_t.csv"
family = "transported"
s = "s"
w = ["w"]
a = "a"
z = ["z"]
m = ["m"]
y = "y"
folds = 5
learners = ["glm_saturated"]
exposure_learners = ["mean"]
seed = 3
"#;

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn estimate_writes_both_contrasts() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "binary_nt", 2000, "binary_nt.csv");
    let cfg = write_config(dir.path(), "run.toml", &format!("{NT_CONFIG}output = \"out/report\"\nformat = \"both\"\n"));
    let o = intmed(&["estimate", "--config", &cfg], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("out/report.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 5);
    assert!(lines[0].starts_with("contrast,estimator,point"));
    for (contrast, est) in [("IDE", "onestep"), ("IIE", "onestep"), ("IDE", "tmle"), ("IIE", "tmle")] {
        assert!(lines.iter().any(|l| l.starts_with(&format!("{contrast},{est},"))), "{contrast} {est}");
    }
    let json: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap()).unwrap();
    assert_eq!(json["diagnostics"]["kind"], "mediator_weight");
    assert!(json["tmle"].as_array().unwrap().len() == 3);
    assert!(String::from_utf8_lossy(&o.stdout).contains("IIE"));
}

#[test]
fn estimate_is_byte_deterministic_across_worker_counts() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "binary_t", 1500, "binary_t.csv");
    let a = write_config(dir.path(), "a.toml", &format!("{T_CONFIG}output = \"a.json\"\n"));
    let b = write_config(dir.path(), "b.toml", &format!("{T_CONFIG}output = \"b.json\"\n"));
    let oa = intmed(&["estimate", "--config", &a], Some("1"));
    let ob = intmed(&["estimate", "--config", &b], Some("3"));
    assert!(oa.status.success() && ob.status.success());
    let ra = std::fs::read(dir.path().join("a.json")).unwrap();
    let rb = std::fs::read(dir.path().join("b.json")).unwrap();
    assert_eq!(ra, rb);
}

#[test]
fn unknown_key_exits_2_naming_the_key() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "run.toml", &format!("{NT_CONFIG}output = \"r.csv\"\nlearner_list = [\"mean\"]\n"));
    let o = intmed(&["estimate", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("learner_list"), "{}", stderr(&o));
    let err: serde_json::Value = serde_json::from_str(stderr(&o).trim()).unwrap();
    assert_eq!(err["error"], "config");
}

#[test]
fn missing_mediators_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "binary_nt", 100, "binary_nt.csv");
    let body = NT_CONFIG.replace("m = [\"m\"]\n", "") + "output = \"r.csv\"\n";
    let cfg = write_config(dir.path(), "run.toml", &body);
    let o = intmed(&["estimate", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no mediator"), "{}", stderr(&o));
}

#[test]
fn data_errors_exit_3() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("binary_nt.csv"), "w,a,z,y\n0,1,0,1\n").unwrap();
    let cfg = write_config(dir.path(), "run.toml", &format!("{NT_CONFIG}output = \"r.csv\"\n"));
    let o = intmed(&["estimate", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(3));
    assert!(stderr(&o).contains("`m`"));
    assert!(!dir.path().join("r.csv").exists());
}

#[test]
fn simulate_counts_and_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = intmed(
            &["simulate", "--dgm", "binary_nt", "--n", "500", "--reps", "10", "--estimator", "both", "--seed", "1", "--out", out.to_str().unwrap()],
            None,
        );
        assert!(o.status.success(), "{}", stderr(&o));
        (std::fs::read(out).unwrap(), o.stdout)
    };
    let (a, stdout_a) = run("a.csv");
    let (b, _) = run("b.csv");
    assert_eq!(a, b);
    let text = String::from_utf8(a).unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(4) == Some("10")));
    assert!(String::from_utf8_lossy(&stdout_a).contains("sqrt(n)*b"));
}

#[test]
fn invalid_dgm_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x.csv");
    let o = intmed(&["simulate", "--dgm", "trinary", "--n", "500", "--reps", "2", "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("trinary"));
}

#[test]
fn diagnose_reports_mode_specific_weights() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "binary_t", 3000, "binary_t.csv");
    generate(dir.path(), "binary_nt", 1000, "binary_nt.csv");

    let t = write_config(dir.path(), "t.toml", &format!("{T_CONFIG}output = \"t.csv\"\n"));
    let o = intmed(&["diagnose", "--config", &t], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(dir.path().join("t.csv")).unwrap();
    let row: Vec<&str> = csv.lines().nth(1).unwrap().split(',').collect();
    assert_eq!(&row[..2], &["selection_odds", "all"]);
    // the sites overlap well: no odds above 100
    assert_eq!(row[2].parse::<f64>().unwrap(), 0.0);

    let nt = write_config(dir.path(), "nt.toml", &format!("{NT_CONFIG}output = \"nt.json\"\n"));
    let o = intmed(&["diagnose", "--config", &nt], None);
    assert!(o.status.success(), "{}", stderr(&o));
    let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("nt.json")).unwrap()).unwrap();
    assert_eq!(json["kind"], "mediator_weight");
    assert_eq!(json["components"].as_array().unwrap().len(), 3);
}

#[test]
fn transported_without_site_role_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    generate(dir.path(), "binary_t", 200, "binary_t.csv");
    let body = T_CONFIG.replace("s = \"s\"\n", "") + "output = \"r.csv\"\n";
    let cfg = write_config(dir.path(), "run.toml", &body);
    let o = intmed(&["diagnose", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("site"));
}
