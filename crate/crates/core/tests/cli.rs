use std::path::Path;
use std::process::Command;

use serde_json::Value;

const SMALL: &str = r#"
lattice = "square"
m = 2
n = 2
lambdas = [0.0, 2.5]

[[edge]]
from = [1, 1]
to = [2, 1]
coefficients = [0.3, -0.2, 0.1]

[[vertex]]
at = [2, 2]
coupling = 0.75
"#;

fn qgraph(args: &[&str]) -> (i32, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_qgraph")).args(args).output().unwrap();
    (out.status.code().unwrap(), String::from_utf8_lossy(&out.stderr).into_owned())
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_owned()
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_str().unwrap().to_owned()
}

fn report(p: &str) -> Value {
    serde_json::from_str(&std::fs::read_to_string(p).unwrap()).unwrap()
}

#[test]
fn roundtrip_succeeds_and_breaches_fail() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let out = path(dir.path(), "r.json");
    assert_eq!(qgraph(&["roundtrip", "--config", &cfg, "--out", &out]).0, 0);
    let r = report(&out);
    assert_eq!(r["status"], "ok");
    assert!(r["comparison"]["max_potential_error"].as_f64().unwrap() < 1e-4);

    let (code, err) = qgraph(&["roundtrip", "--config", &cfg, "--out", &out, "--tol-potential", "1e-30"]);
    assert_eq!(code, 3, "{err}");
    assert_eq!(report(&out)["status"], "tolerance");
}

#[test]
fn validation_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(qgraph(&["roundtrip"]).0, 2);
    let adjacent = write(dir.path(), "bad.toml", &SMALL.replace("from = [1, 1]", "from = [0, 1]").replace("to = [2, 1]", "to = [1, 1]"));
    let (code, err) = qgraph(&["roundtrip", "--config", &adjacent]);
    assert_eq!(code, 2, "{err}");
    let garbled = write(dir.path(), "garbled.toml", "lattice = 7");
    assert_eq!(qgraph(&["forward", "--config", &garbled]).0, 2);
}

#[test]
fn two_pass_matches_live_inversion() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "c.toml", SMALL);
    let (log, samples) = (path(dir.path(), "l.txt"), path(dir.path(), "s.csv"));
    let (live, recorded) = (path(dir.path(), "live.json"), path(dir.path(), "rec.json"));
    assert_eq!(qgraph(&["lambda-log", "--config", &cfg, "--out", &log]).0, 0);
    assert_eq!(qgraph(&["forward", "--config", &cfg, "--lambdas", &log, "--out", &samples]).0, 0);
    assert_eq!(qgraph(&["invert", "--dtn", &samples, "--out", &recorded]).0, 0);
    assert_eq!(qgraph(&["invert", "--config", &cfg, "--out", &live]).0, 0);
    // the live run also knows the truth; everything recovered must agree bit for bit
    let recovered = |p: &str| {
        let mut r = report(p);
        for key in ["edges", "couplings"] {
            for item in r[key].as_array_mut().unwrap() {
                let item = item.as_object_mut().unwrap();
                item.remove("truth");
                item.remove("error");
            }
        }
        (r["edges"].clone(), r["couplings"].clone(), r["lambdas"].clone())
    };
    assert_eq!(recovered(&live), recovered(&recorded));

    // drop the last record: the inversion must name what is missing
    let text = std::fs::read_to_string(&samples).unwrap();
    let cut = text.trim_end().rsplit_once('\n').unwrap().0;
    let short = write(dir.path(), "short.csv", cut);
    let (code, err) = qgraph(&["invert", "--dtn", &short, "--out", &recorded]);
    assert_eq!(code, 2, "{err}");
    assert!(err.contains("missing"), "{err}");
}

#[test]
fn forward_is_deterministic_and_sized() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write(dir.path(), "hex.toml", "lattice = \"hex\"\nsize = 1\nlambdas = [0.0]\n");
    let (a, b) = (path(dir.path(), "a.csv"), path(dir.path(), "b.csv"));
    assert_eq!(qgraph(&["forward", "--config", &cfg, "--out", &a]).0, 0);
    assert_eq!(qgraph(&["forward", "--config", &cfg, "--out", &b, "--threads", "2"]).0, 0);
    let text = std::fs::read_to_string(&a).unwrap();
    assert_eq!(text, std::fs::read_to_string(&b).unwrap());
    assert!(text.contains("# size: 10"), "{text}");
    let record = text.lines().find(|l| !l.starts_with('#') && !l.starts_with("lambda")).unwrap();
    assert_eq!(record.split(',').count(), 2 + 100);
}
