use std::fs;
use std::path::Path;
use std::process::Command;

fn homog(dir: &Path, args: &[&str]) -> (i32, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_homog"))
        .args(args)
        .current_dir(dir)
        .env("HOMOG_THREADS", "1")
        .output()
        .expect("binary runs");
    (
        out.status.code().unwrap_or(-1),
        String::from_utf8_lossy(&out.stdout).into_owned(),
        String::from_utf8_lossy(&out.stderr).into_owned(),
    )
}

#[test]
fn config_errors_exit_2_and_list_every_violation() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("bad.toml"), "[geometry]\nr_max = 0.6\n\n[physics]\nd_l = -1\n[run]\nspeed = 3\n").unwrap();
    let (code, _, err) = homog(dir.path(), &["micro", "--config", "bad.toml"]);
    assert_eq!(code, 2);
    assert!(err.contains("line 2: geometry.r_max: r_max must be < 0.5"), "{err}");
    assert!(err.contains("line 5"), "{err}");
    assert!(err.contains("line 7: run.speed: unknown key"), "{err}");
}

#[test]
fn cell_outputs_are_byte_identical_across_runs() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        let (code, stdout, err) = homog(dir.path(), &["cell", "--n", "32", "--out", out]);
        assert_eq!(code, 0, "{err}");
        assert!(stdout.contains("PASS"));
    }
    for f in ["table.csv", "cell_report.csv", "config_echo.toml"] {
        let a = fs::read(dir.path().join("a").join(f)).unwrap();
        let b = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(a, b, "{f}");
    }
    let table = fs::read_to_string(dir.path().join("a/table.csv")).unwrap();
    assert!(table.starts_with("# homog "));
    assert!(table.lines().nth(0).unwrap().contains("config="));
    assert!(table.contains("r,theta,D11,D12,D21,D22"));
}

#[test]
fn micro_and_macro_write_field_dumps() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, err) = homog(dir.path(), &["cell", "--n", "32", "--out", "cell"]);
    assert_eq!(code, 0, "{err}");
    let (code, _, err) = homog(
        dir.path(),
        &["micro", "--epsilon", "1/4", "--h", "1/64", "--dt", "1/64", "--T", "0.125", "--times", "0,0.125", "--out", "micro"],
    );
    assert_eq!(code, 0, "{err}");
    let text = fs::read_to_string(dir.path().join("micro/micro_001.csv")).unwrap();
    let mut lines = text.lines();
    assert!(lines.next().unwrap().starts_with("# homog"));
    assert!(lines.next().unwrap().starts_with("# t=1.25"));
    assert_eq!(lines.next().unwrap(), "x,y,value,phase");
    assert_eq!(lines.clone().count(), 65 * 65);
    assert!(lines.any(|l| l.ends_with(",low")));

    let (code, _, err) = homog(
        dir.path(),
        &["macro", "--table", "cell/table.csv", "--H", "1/16", "--m", "4", "--dt", "1/64", "--T", "0.125", "--out", "macro"],
    );
    assert_eq!(code, 0, "{err}");
    let u = fs::read_to_string(dir.path().join("macro/macro_u0_000.csv")).unwrap();
    assert!(u.lines().any(|l| l == "x,y,u0"));
    assert_eq!(u.lines().filter(|l| !l.starts_with('#')).count(), 1 + 17 * 17);
    let v = fs::read_to_string(dir.path().join("macro/macro_v0_000.csv")).unwrap();
    assert_eq!(v.lines().filter(|l| !l.starts_with('#')).count(), 1 + 17 * 17 * 5);
}

#[test]
fn missing_table_fails_with_status_1() {
    let dir = tempfile::tempdir().unwrap();
    let (code, _, _) = homog(dir.path(), &["macro", "--table", "nope.csv", "--out", "m"]);
    assert_eq!(code, 1);
}

#[test]
fn lemmas_pass_in_strict_mode() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, err) = homog(dir.path(), &["lemmas", "--strict", "--out", "lemmas"]);
    assert_eq!(code, 0, "{stdout}\n{err}");
    assert!(!stdout.contains("FAIL"), "{stdout}");
    for f in ["transport.csv", "oscillation.csv", "strip.csv"] {
        assert!(dir.path().join("lemmas").join(f).exists());
    }
}

#[test]
fn small_ladder_writes_rates_csv() {
    let dir = tempfile::tempdir().unwrap();
    let (code, stdout, err) = homog(
        dir.path(),
        &["correctors", "--epsilons", "0.25,0.125,0.0625", "--T", "1/32", "--H", "1/16", "--m", "8", "--out", "rates"],
    );
    assert_eq!(code, 0, "{stdout}\n{err}");
    let text = fs::read_to_string(dir.path().join("rates/rates.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "eps,N1,N2,N3_Linf,N3_L2,N4_Linf,N4_L2");
    assert_eq!(rows.len(), 4);
    assert!(rows[1].starts_with("2.5"));
    assert!(text.contains("# fit: norm,p,c,p_corrected,c_corrected"));
}
