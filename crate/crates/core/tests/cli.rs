use std::path::Path;
use std::process::Command;

const CONFIG: &str = r#"
name = "cli"
node_count = 50
duration = 45.0
warmup = 10.0

[traffic]
flows = 1
rate_bps = 40000.0

[constants.haodv]
delta = 1.5
"#;

fn fanet(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_fanet")).args(args).output().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cli.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let out = dir.path().join("out");
    let r = fanet(&["run", "--config", s(&cfg), "--seeds", "1..2", "--out", s(&out), "--protocols", "aodv,haodv"]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8(r.stdout).unwrap();
    // The resolved configuration is echoed, overrides included.
    assert!(stdout.contains("delta = 1.5"));
    assert!(stdout.contains("seeds = [\n    1,\n    2,\n]") || stdout.contains("seeds = [1, 2]"));
    for f in ["config.toml", "runs.csv", "flows.csv", "series.csv"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let runs = std::fs::read_to_string(out.join("runs.csv")).unwrap();
    assert_eq!(runs.lines().count(), 1 + 4);

    let summary = dir.path().join("summary.csv");
    let r = fanet(&["report", "--in", s(&out), "--out", s(&summary)]);
    assert!(r.status.success());
    let text = std::fs::read_to_string(&summary).unwrap();
    assert!(text.starts_with("scenario,protocol,node_count,speed_mps,flows,rate_bps,metric,n,mean,std,ci_low,ci_high"));
    assert!(text.lines().any(|l| l.contains(",haodv,") && l.contains(",pdr,2,")));
}

#[test]
fn pipe_width_study_prints_a_table() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cli.toml");
    std::fs::write(&cfg, CONFIG).unwrap();
    let csv = dir.path().join("pipe.csv");
    let r = fanet(&["study", "pipe-width", "--config", s(&cfg), "--seeds", "1", "--widths", "1,2", "--out", s(&csv)]);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let stdout = String::from_utf8(r.stdout).unwrap();
    assert!(stdout.starts_with("width,neighbors_mean"));
    assert_eq!(std::fs::read_to_string(&csv).unwrap().lines().count(), 3);
}

#[test]
fn bad_configs_exit_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cases = [
        ("node_count = 70\n", "node_count"),
        ("bogus = 1\n", "bogus"),
        ("[constants.haodv]\ndelta = -1.0\n", "delta"),
    ];
    for (text, needle) in cases {
        let cfg = dir.path().join("bad.toml");
        std::fs::write(&cfg, text).unwrap();
        let r = fanet(&["run", "--config", s(&cfg), "--out", s(&dir.path().join("x"))]);
        assert_eq!(r.status.code(), Some(2), "{text}");
        assert!(String::from_utf8_lossy(&r.stderr).contains(needle), "{text}");
    }
}

#[test]
fn defaults_file_is_current() {
    // Regenerate with FANET_WRITE_DEFAULTS=1.
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/defaults.toml");
    let want = format!(
        "# Every key with its default value. Any subset may appear in a config file.\n{}",
        fanet_core::harness::ScenarioConfig::default().to_toml()
    );
    if std::env::var_os("FANET_WRITE_DEFAULTS").is_some() {
        std::fs::write(&path, &want).unwrap();
    }
    assert_eq!(std::fs::read_to_string(&path).unwrap(), want);
}
