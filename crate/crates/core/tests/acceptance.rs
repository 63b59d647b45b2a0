//! Prints one PASS/FAIL line per acceptance criterion and fails if any criterion fails.

use std::time::Instant;

use geomgw::lab::{
    run_regime, sample_lines, with_workers, write_convergence_csv, ConvergenceRow,
    ExperimentConfig, SampleFamily,
};
use geomgw::oracle::{run_suite, CheckResult};
use geomgw::OffspringParams;

/// Final-point TV thresholds, regression values from the first certified run.
const KESTEN_TV_AT_50: f64 = 0.05;
const POISSON_TV_AT_60: f64 = 0.015;
const CONDENSATION_TV_AT_50: f64 = 1e-8;
/// Slack for round-off when checking that a curve does not increase.
const MONOTONE_SLACK: f64 = 1e-12;
const CONVERGENCE_BUDGET_MS: u128 = 600_000;

fn curve_ok(rows: &[ConvergenceRow], threshold: f64) -> Result<f64, String> {
    let tvs: Vec<f64> = rows
        .iter()
        .map(|r| {
            r.tv_exact.ok_or_else(|| {
                format!(
                    "n = {} is uncertified (bound {:.2e})",
                    r.n, r.tv_residual_bound
                )
            })
        })
        .collect::<Result<_, _>>()?;
    for w in tvs.windows(2) {
        if w[1] > w[0] + MONOTONE_SLACK {
            return Err(format!("curve increases from {:.3e} to {:.3e}", w[0], w[1]));
        }
    }
    let (first, last) = (tvs[0], *tvs.last().expect("non-empty grid"));
    if last >= first {
        return Err("curve does not decrease".into());
    }
    if last >= threshold {
        return Err(format!("final TV {last:.3e} is not below {threshold:.1e}"));
    }
    Ok(last)
}

fn criterion_8() -> (bool, String) {
    let start = Instant::now();
    let thresholds = [
        ("kesten", KESTEN_TV_AT_50),
        ("poisson", POISSON_TV_AT_60),
        ("condensation", CONDENSATION_TV_AT_50),
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for ((name, cfg), (tname, thr)) in ExperimentConfig::bundled().into_iter().zip(thresholds) {
        assert_eq!(name, tname);
        let outcome = run_regime(&cfg)
            .map_err(|e| e.to_string())
            .and_then(|rows| curve_ok(&rows, thr));
        match outcome {
            Ok(last) => parts.push(format!("{name} final {last:.3e} < {thr:.1e}")),
            Err(e) => {
                ok = false;
                parts.push(format!("{name}: {e}"));
            }
        }
    }
    let ms = start.elapsed().as_millis();
    ok &= ms < CONVERGENCE_BUDGET_MS;
    parts.push(format!("{ms} ms"));
    (ok, parts.join("; "))
}

fn converge_bytes(threads: usize) -> Vec<u8> {
    let cfg = ExperimentConfig::bundled().remove(1).1;
    let rows = with_workers(Some(threads), || run_regime(&cfg))
        .unwrap()
        .unwrap();
    let mut buf = Vec::new();
    write_convergence_csv(&mut buf, &rows, false).unwrap();
    buf
}

fn sample_bytes(threads: usize) -> Vec<u8> {
    let p = OffspringParams::new(0.5, 0.5).unwrap();
    let families = [
        SampleFamily::Gw,
        SampleFamily::Conditioned { n: 5, a: 3 },
        SampleFamily::Kesten,
        SampleFamily::Poisson { theta: 0.7 },
        SampleFamily::Condensation {
            k0: 2,
            two_type: true,
        },
    ];
    let mut out = Vec::new();
    for f in families {
        let lines = with_workers(Some(threads), || sample_lines(&p, f, 3, 2_000, 42))
            .unwrap()
            .unwrap();
        for l in lines {
            out.extend_from_slice(l.as_bytes());
            out.push(b'\n');
        }
    }
    out
}

fn criterion_9() -> (bool, String) {
    let c1 = converge_bytes(1);
    let c1b = converge_bytes(1);
    let c4 = converge_bytes(4);
    let s1 = sample_bytes(1);
    let s1b = sample_bytes(1);
    let s4 = sample_bytes(4);
    let ok = c1 == c1b && c1 == c4 && s1 == s1b && s1 == s4;
    (
        ok,
        format!(
            "converge {} bytes, sample {} bytes, workers 1 and 4",
            c1.len(),
            s1.len()
        ),
    )
}

fn main() {
    let mut lines: Vec<(bool, String)> = run_suite()
        .iter()
        .map(|r: &CheckResult| (r.passed, r.to_string()))
        .collect();
    let (ok8, d8) = criterion_8();
    lines.push((
        ok8,
        format!(
            "{} [8] regime convergence: {d8}",
            if ok8 { "PASS" } else { "FAIL" }
        ),
    ));
    let (ok9, d9) = criterion_9();
    lines.push((
        ok9,
        format!(
            "{} [9] determinism: {d9}",
            if ok9 { "PASS" } else { "FAIL" }
        ),
    ));
    for (_, l) in &lines {
        println!("{l}");
    }
    let failed = lines.iter().filter(|(ok, _)| !ok).count();
    if failed > 0 {
        eprintln!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
