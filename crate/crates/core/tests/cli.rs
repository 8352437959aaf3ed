use std::path::Path;
use std::process::Command;

fn pint_mk(args: &[&str], out: &Path) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_pint-mk")).args(args).env("PINT_MK_OUT", out).output().expect("binary runs")
}

fn read(dir: &Path, name: &str) -> Vec<u8> {
    std::fs::read(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

fn body(dir: &Path, name: &str) -> String {
    let text = String::from_utf8(read(dir, name)).unwrap();
    text.lines().filter(|l| !l.starts_with('#')).collect::<Vec<_>>().join("\n")
}

#[test]
fn solve_is_byte_identical_across_runs_and_threads() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    let args = ["solve", "--nx=32", "--n_t=32", "--method=multilevel", "--levels=3", "--n_proc=4"];
    assert!(pint_mk(&args, &a).status.success());
    let mut threaded = args.to_vec();
    threaded.push("--threads=3");
    assert!(pint_mk(&threaded, &b).status.success());
    // only the provenance header mentions the thread count
    for f in ["report.csv", "ledger.csv"] {
        assert_eq!(body(&a, f), body(&b, f), "{f}");
    }
    let first: Vec<Vec<u8>> = ["report.csv", "summary.txt", "ledger.csv"].iter().map(|f| read(&a, f)).collect();
    assert!(pint_mk(&args, &a).status.success());
    for (f, bytes) in ["report.csv", "summary.txt", "ledger.csv"].iter().zip(first) {
        assert_eq!(read(&a, f), bytes, "{f}");
    }
    let summary = String::from_utf8(read(&a, "summary.txt")).unwrap();
    assert!(summary.contains("converged: true"));
    assert!(summary.lines().take_while(|l| l.starts_with('#')).any(|l| l.contains("nx = 32")));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let tmp = tempfile::tempdir().unwrap();
    let ini = tmp.path().join("run.ini");
    std::fs::write(&ini, "[problem]\nnx = 24\nn_t = 16\n\n[method]\nmethod = parareal\nnu = 4\n").unwrap();
    let out = tmp.path().join("o");
    let r = pint_mk(&["solve", "--config", ini.to_str().unwrap(), "--nu=2"], &out);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let summary = String::from_utf8(read(&out, "summary.txt")).unwrap();
    assert!(summary.contains("# nx = 24"));
    assert!(summary.contains("# nu = 2"));
    assert!(summary.contains("method: parareal"));
}

#[test]
fn inconsistent_time_step_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let r = pint_mk(&["solve", "--courant=0.64", "--delta_t=1.0"], tmp.path());
    assert_eq!(r.status.code(), Some(2));
    let r = pint_mk(&["solve", "--no_such_key=1"], tmp.path());
    assert_eq!(r.status.code(), Some(2));
}

#[test]
fn non_convergence_has_its_own_exit_code() {
    let tmp = tempfile::tempdir().unwrap();
    let r = pint_mk(&["solve", "--nx=32", "--n_t=32", "--max_iter=1"], tmp.path());
    assert_eq!(r.status.code(), Some(3));
}

#[test]
fn theta_scheme_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let r = pint_mk(&["solve", "--method=theta_scheme", "--nx=16", "--n_t=8"], tmp.path());
    assert!(r.status.success());
    let stdout = String::from_utf8(r.stdout).unwrap();
    assert!(stdout.contains("relative_total: 1.0000"));
    assert!(stdout.contains("work_theta"));
}

#[test]
fn sweep_writes_one_row_per_value() {
    let tmp = tempfile::tempdir().unwrap();
    let r = pint_mk(&["sweep", "n_proc", "--values", "1,2,4", "--nx=32", "--n_t=32", "--nu=4"], tmp.path());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8(read(tmp.path(), "sweep_n_proc.csv")).unwrap();
    let rows: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
    assert_eq!(rows[0], "axis,value,iterations,converged,relative_total,cgs_fraction,schedule");
    assert_eq!(rows.len(), 4);
}

#[test]
fn table2_subset_and_unknown_table() {
    let tmp = tempfile::tempdir().unwrap();
    let r = pint_mk(&["table", "2", "--grids", "128", "--oracle=false"], tmp.path());
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = String::from_utf8(read(tmp.path(), "table2.csv")).unwrap();
    assert_eq!(text.lines().filter(|l| !l.starts_with('#')).count(), 1 + 9);
    assert!(text.starts_with("# table = table2\n"));
    assert_eq!(pint_mk(&["table", "4"], tmp.path()).status.code(), Some(2));
}

#[test]
fn check_runs_selected_criteria() {
    let tmp = tempfile::tempdir().unwrap();
    let r = pint_mk(&["check", "--only", "4,5"], tmp.path());
    let stdout = String::from_utf8(r.stdout).unwrap();
    assert_eq!(r.status.code(), Some(0), "{stdout}");
    assert_eq!(stdout.lines().filter(|l| l.starts_with("[PASS]")).count(), 2);
}
