use std::process::Command;
use std::sync::OnceLock;

use dmrate::checks::{all_passed, selftest};
use dmrate::output::write_pretty;
use dmrate::scan::CUTOFF_STABILITY_TOL;
use dmrate::{parse_csv, run_scan, to_csv_string, ScanConfig, ScanOptions, Status, CSV_HEADER};
use dmrate_core::detector::NoiseMode;

const SMALL: &str = r#"
mode = ["trusted", "untrusted"]
[channel]
distances_km = [10, 30]
xi = [0.01, 0.02]
[detector]
eta_d = 0.719
nu_el = 0.01
[protocol]
alpha = [0.6, 0.7]
delta_a = [0.0, 0.5]
[solver]
cutoff = 4
"#;

/// One mode, one noise level, two distances, two amplitudes.
const TINY: &str = r#"
mode = "trusted"
[channel]
distances_km = [10, 30]
xi = 0.01
[detector]
eta_d = 0.719
nu_el = 0.01
[protocol]
alpha = [0.6, 0.7]
[solver]
cutoff = 4
"#;

fn small_rows() -> Vec<dmrate::ResultRow> {
    static ROWS: OnceLock<Vec<dmrate::ResultRow>> = OnceLock::new();
    ROWS.get_or_init(|| run_scan(&ScanConfig::from_toml_str(SMALL).unwrap(), &ScanOptions::default())).clone()
}

fn dmrate() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dmrate"))
}

#[test]
fn header_matches_documented_columns() {
    let csv = to_csv_string(&small_rows());
    let header = csv.lines().next().unwrap();
    assert_eq!(
        header,
        "L_km,eta_t,xi,eta_d,nu_el,alpha,delta_a,mode,primal,lower_bound,delta_EC,p_pass,rate,iterations,residual,wall_time_s,status"
    );
    assert_eq!(header.split(',').count(), CSV_HEADER.len());
    assert!(!csv.contains('\r'));
    assert!(csv.ends_with('\n'));
}

#[test]
fn grid_is_complete_and_ordered() {
    let cfg = ScanConfig::from_toml_str(SMALL).unwrap();
    let rows = small_rows();
    assert_eq!(rows.len(), cfg.grid_size() + cfg.summary_rows());
    assert_eq!(rows.len(), 32 + 16);
    let solved: Vec<_> = rows.iter().filter(|r| r.status != Status::BestAlpha).collect();
    assert_eq!(solved.len(), 32);
    // mode, xi, distance, delta_a, alpha with alpha fastest.
    assert_eq!(solved[0].mode, NoiseMode::Trusted);
    assert_eq!(solved[16].mode, NoiseMode::Untrusted);
    assert_eq!((solved[0].alpha, solved[1].alpha), (0.6, 0.7));
    assert_eq!((solved[1].delta_a, solved[2].delta_a), (0.0, 0.5));
    assert!((solved[3].l_km - 10.0).abs() < 1e-12 && (solved[4].l_km - 30.0).abs() < 1e-12);
    assert_eq!((solved[7].xi, solved[8].xi), (0.01, 0.02));
    for (k, group) in rows.chunks(3).enumerate() {
        assert_eq!(group[2].status, Status::BestAlpha, "group {k}");
        let best = if group[1].rate > group[0].rate { &group[1] } else { &group[0] };
        assert_eq!(group[2].alpha, best.alpha);
        assert_eq!(group[2].rate, best.rate);
    }
    for r in &rows {
        assert!(r.rate >= 0.0, "{r:?}");
        assert_eq!(r.wall_time_s, 0.0);
    }
}

#[test]
fn csv_round_trip() {
    let rows = small_rows();
    let text = to_csv_string(&rows);
    let parsed = parse_csv(&text).unwrap();
    assert_eq!(parsed.len(), rows.len());
    assert_eq!(to_csv_string(&parsed), text);
    for (a, b) in rows.iter().zip(&parsed) {
        assert_eq!((a.mode, &a.status, a.iterations), (b.mode, &b.status, b.iterations));
        for (x, y) in [(a.rate, b.rate), (a.primal, b.primal), (a.eta_t, b.eta_t), (a.residual, b.residual)] {
            assert!((x - y).abs() <= 1e-11 * x.abs(), "{x} vs {y}");
        }
    }
}

#[test]
fn error_rows_round_trip() {
    let mut row = small_rows().remove(0);
    row.status = Status::Error("cutoff 12 exceeds the numeric limit, 10".into());
    row.rate = f64::NAN;
    let text = to_csv_string(&[row]);
    let back = parse_csv(&text).unwrap();
    assert_eq!(back[0].status, Status::Error("cutoff 12 exceeds the numeric limit, 10".into()));
    assert!(back[0].rate.is_nan());
}

#[test]
fn malformed_csv_is_rejected() {
    assert!(parse_csv("L_km,eta_t\n1,2\n").is_err());
    let text = to_csv_string(&small_rows()[..1]).replace(",trusted,", ",sideways,");
    assert!(parse_csv(&text).is_err());
}

#[test]
fn pretty_rate_has_four_decimals() {
    let rows = small_rows();
    let mut buf = Vec::new();
    write_pretty(&rows, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.lines().next().unwrap().contains("rate[b/pulse]"));
    let line = text.lines().nth(1).unwrap();
    let rate = line.split_whitespace().nth(6).unwrap();
    assert_eq!(rate, format!("{:.4}", rows[0].rate));
}

#[test]
fn identical_config_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("scan.toml");
    std::fs::write(&cfg, TINY).unwrap();
    let run = |jobs: &str, name: &str| {
        let out = dir.path().join(name);
        let status = dmrate().args(["scan", "--config"]).arg(&cfg).args(["--jobs", jobs, "--out"]).arg(&out).status().unwrap();
        assert_eq!(status.code(), Some(0));
        std::fs::read(out).unwrap()
    };
    let a = run("1", "a.csv");
    let b = run("3", "b.csv");
    assert_eq!(a, b);
    let rows = run_scan(&ScanConfig::from_toml_str(TINY).unwrap(), &ScanOptions::default());
    assert_eq!(a, to_csv_string(&rows).into_bytes());
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.toml");
    std::fs::write(&bad, SMALL.replace("alpha = [0.6, 0.7]", "alpha = []")).unwrap();
    let out = dmrate().args(["scan", "--config"]).arg(&bad).output().unwrap();
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("alpha grid is empty"));

    let missing = dmrate().args(["scan", "--config"]).arg(dir.path().join("absent.toml")).output().unwrap();
    assert_eq!(missing.status.code(), Some(1));

    // Unequal arms beyond the numeric-operator cutoff limit: every point errors.
    let failing = dir.path().join("failing.toml");
    let text = TINY
        .replace("eta_d = 0.719\nnu_el = 0.01", "eta1 = 0.7\neta2 = 0.6\nnu1 = 0.01\nnu2 = 0.02")
        .replace("cutoff = 4", "cutoff = 12");
    std::fs::write(&failing, text).unwrap();
    let out = dmrate().args(["scan", "--config"]).arg(&failing).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
    let rows = parse_csv(&String::from_utf8(out.stdout).unwrap()).unwrap();
    assert_eq!(rows.len(), 4);
    assert!(rows.iter().all(|r| matches!(r.status, Status::Error(_))));
}

#[test]
fn selftest_passes() {
    let outcomes = selftest();
    assert!(all_passed(&outcomes), "{outcomes:?}");
    let out = dmrate().arg("selftest").output().unwrap();
    assert_eq!(out.status.code(), Some(0));
    let stdout = String::from_utf8(out.stdout).unwrap();
    assert!(stdout.lines().all(|l| l.starts_with("PASS")));
}

#[test]
fn oracle_check_command() {
    let out = dmrate().args(["oracle-check", "--n-samples", "4"]).output().unwrap();
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stdout));
    assert_eq!(String::from_utf8(out.stdout).unwrap().lines().count(), 4);
}

#[test]
fn cutoff_check_flags_unstable_rates() {
    // Cutoff 3 is coarse enough for the rate to move when raised to 5.
    let cfg = ScanConfig::from_toml_str(&TINY.replace("cutoff = 4", "cutoff = 3").replace("distances_km = [10, 30]", "distances_km = [5]")).unwrap();
    let plain = run_scan(&cfg, &ScanOptions::default());
    let checked = run_scan(&cfg, &ScanOptions { cutoff_check: true, ..Default::default() });
    let hi = run_scan(&ScanConfig { cutoff: 5, ..cfg.clone() }, &ScanOptions::default());
    assert_eq!(plain.len(), checked.len());
    let mut compared = 0;
    for (p, c) in plain.iter().zip(&checked).filter(|(p, _)| p.status == Status::Ok) {
        compared += 1;
        assert_eq!(p.rate, c.rate);
        let moved = hi.iter().find(|h| h.alpha == p.alpha).map(|h| (h.rate - p.rate).abs()).unwrap();
        assert_eq!(c.status == Status::CutoffUnstable, moved >= CUTOFF_STABILITY_TOL);
    }
    assert!(compared > 0);
}

#[test]
fn bundled_configs_parse() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let a = ScanConfig::from_path(&dir.join("trusted_vs_untrusted.toml")).unwrap();
    assert_eq!((a.grid_size(), a.summary_rows()), (2 * 8 * 9, 16));
    let b = ScanConfig::from_path(&dir.join("postselection.toml")).unwrap();
    assert_eq!(b.delta_as.len(), 21);
    assert_eq!(b.detector.eta1, 0.552);
}
