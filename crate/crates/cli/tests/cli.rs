use std::process::{Command, Output};

fn geomgw(args: &[&str], threads: Option<&str>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_geomgw"));
    cmd.args(args);
    match threads {
        Some(t) => cmd.env("GEOMGW_THREADS", t),
        None => cmd.env_remove("GEOMGW_THREADS"),
    };
    cmd.output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn kesten_height_one_law_is_size_biased() {
    let o = geomgw(
        &[
            "law",
            "--eta",
            "0.5",
            "--q",
            "0.5",
            "--regime",
            "kesten",
            "--height",
            "1",
            "--degree-cap",
            "4",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# eta=0.5 q=0.5 h=1"));
    assert_eq!(lines.next(), Some("tree_code,log_prob"));
    // p(k) = 0.5^(k+1) for k >= 1 and mu = 1, so the mass of k is k 2^-(k+1).
    for (k, line) in lines.enumerate() {
        let k = k as i32 + 1;
        let (_, lp) = line.rsplit_once(',').unwrap();
        let expected = k as f64 * 0.5f64.powi(k + 1);
        assert!(
            (lp.parse::<f64>().unwrap().exp() - expected).abs() < 1e-14,
            "k = {k}"
        );
    }
}

#[test]
fn json_law_round_trips() {
    let o = geomgw(
        &[
            "law",
            "--eta",
            "0.4",
            "--q",
            "0.5",
            "--regime",
            "conditioned",
            "--n",
            "4",
            "--a",
            "2",
            "--height",
            "2",
            "--format",
            "json",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let v: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert!(v.is_object());
}

#[test]
fn sampling_is_deterministic_across_runs_and_workers() {
    let args = [
        "sample",
        "--eta",
        "0.6",
        "--q",
        "0.5",
        "--regime",
        "condensation",
        "--k0",
        "2",
        "--generator",
        "two-type",
        "--height",
        "3",
        "--samples",
        "500",
        "--seed",
        "11",
    ];
    let a = geomgw(&args, Some("1"));
    let b = geomgw(&args, Some("1"));
    let c = geomgw(&args, Some("4"));
    assert_eq!(a.status.code(), Some(0));
    assert_eq!(stdout(&a).lines().count(), 500);
    assert_eq!(a.stdout, b.stdout);
    assert_eq!(a.stdout, c.stdout);
}

#[test]
fn converge_golden_header_and_rows() {
    let o = geomgw(&["converge", "--bundled", "condensation"], Some("2"));
    assert_eq!(
        o.status.code(),
        Some(0),
        "{}",
        String::from_utf8_lossy(&o.stderr)
    );
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("n,a_n,tv_exact,tv_residual_bound,status")
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 9);
    assert!(rows.iter().all(|r| r.ends_with(",certified")));
    assert!(rows[0].starts_with("10,"));
}

#[test]
fn converge_writes_files_and_timings() {
    let dir = std::env::temp_dir().join(format!("geomgw-cli-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let csv = dir.join("k.csv");
    let svg = dir.join("k.svg");
    let o = geomgw(
        &[
            "converge",
            "--bundled",
            "poisson",
            "--timings",
            "--out",
            csv.to_str().unwrap(),
            "--svg",
            svg.to_str().unwrap(),
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(0));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(
        text.lines().next(),
        Some("n,a_n,tv_exact,tv_residual_bound,status,runtime_ms")
    );
    assert!(std::fs::read_to_string(&svg).unwrap().starts_with("<svg"));
    std::fs::remove_dir_all(&dir).unwrap();
}

#[test]
fn invalid_parameters_exit_one() {
    let o = geomgw(
        &[
            "law", "--eta", "1.5", "--q", "0.5", "--regime", "gw", "--height", "1",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    let o = geomgw(
        &[
            "converge",
            "--eta",
            "1",
            "--q",
            "0.5",
            "--regime",
            "kesten",
            "--n",
            "10",
            "--height",
            "1",
            "--degree-cap",
            "6",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(1));
    assert_eq!(geomgw(&["nonsense"], None).status.code(), Some(1));
    assert_eq!(
        geomgw(
            &["sample", "--eta", "0.5", "--q", "0.5", "--regime", "gw", "--height", "1"],
            Some("zero")
        )
        .status
        .code(),
        Some(1)
    );
}

#[test]
fn uncertified_rows_exit_two() {
    let o = geomgw(
        &[
            "converge",
            "--eta",
            "0.5",
            "--q",
            "0.5",
            "--regime",
            "kesten",
            "--n",
            "10,20",
            "--a",
            "1",
            "--height",
            "2",
            "--degree-cap",
            "6",
        ],
        None,
    );
    assert_eq!(o.status.code(), Some(2));
    let text = stdout(&o);
    assert!(text
        .lines()
        .skip(1)
        .all(|l| l.contains(",,") && l.ends_with("uncertified")));
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(geomgw(&["--help"], None).status.code(), Some(0));
    assert_eq!(geomgw(&["--version"], None).status.code(), Some(0));
}

#[test]
fn oracle_suite_passes() {
    let o = geomgw(&["oracle"], None);
    assert_eq!(o.status.code(), Some(0), "{}", stdout(&o));
    assert_eq!(
        stdout(&o).lines().filter(|l| l.starts_with("PASS")).count(),
        7
    );
}

#[test]
fn shipped_configs_match_bundled() {
    let root = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    for name in ["kesten", "poisson", "condensation"] {
        let path = root.join(format!("{name}.json"));
        let from_file = geomgw(&["converge", "--config", path.to_str().unwrap()], None);
        let bundled = geomgw(&["converge", "--bundled", name], None);
        assert_eq!(from_file.status.code(), Some(0));
        assert_eq!(from_file.stdout, bundled.stdout, "{name}");
    }
}
