use std::path::Path;
use std::process::{Command, Output};

fn cr_afem(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cr-afem"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn lines(path: &Path) -> Vec<String> {
    std::fs::read_to_string(path).unwrap().lines().map(String::from).collect()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    for args in [
        &["run", "--theta", "1.5"][..],
        &["run", "--case", "square"],
        &["run", "--bogus"],
        &["rates", "--case", "ocp-lshape"],
    ] {
        let o = cr_afem(args, dir.path());
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        assert!(!o.stderr.is_empty());
    }
}

#[test]
fn unwritable_output_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("plain");
    std::fs::write(&file, "").unwrap();
    let o = cr_afem(&["run"], &file.join("sub"));
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn run_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let o = cr_afem(
        &["run", "--case", "ocp-square", "--theta", "0.3", "--max-dofs", "50000"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let trace = lines(&dir.path().join("trace.csv"));
    assert!(trace[0].starts_with("# cr-afem ") && trace[0].contains("theta=0.3") && trace[0].contains("max-dofs=50000"));
    assert!(trace[1].starts_with("level,nelem,ndof,eta,mu,osc,delta_next"));
    assert!(trace.len() - 2 >= 8);
    for name in ["indicators.csv", "solution.csv", "mesh.txt"] {
        assert!(lines(&dir.path().join(name))[0].starts_with("# cr-afem "), "{name}");
    }
    let mesh = std::fs::read_to_string(dir.path().join("mesh.txt")).unwrap();
    cr_afem_cli::formats::read_mesh(&mesh).unwrap();
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("eta ~ ndof^-"));
}

#[test]
fn stokes_rates_report_first_order_energy() {
    let dir = tempfile::tempdir().unwrap();
    let o = cr_afem(&["rates", "--case", "stokes-square", "--levels", "5"], dir.path());
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stdout));
    let rates = lines(&dir.path().join("rates.csv"));
    let header: Vec<&str> = rates[1].split(',').collect();
    let last: Vec<&str> = rates.last().unwrap().split(',').collect();
    assert_eq!(last[0], "rate");
    let col = header.iter().position(|c| *c == "stokes_energy").unwrap();
    let slope: f64 = last[col].parse().unwrap();
    assert!((slope - 1.0).abs() < 0.15, "{slope}");
    assert_eq!(rates.len(), 2 + 5 + 1);
    assert!(dir.path().join("twosided.csv").exists());
}

#[test]
fn equivalence_and_axioms_write_json() {
    let dir = tempfile::tempdir().unwrap();
    let o = cr_afem(&["equivalence", "--levels", "3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("equivalence.json")).unwrap()).unwrap();
    assert_eq!(v["pass"], true);
    assert_eq!(v["items"].as_array().unwrap().len(), 12);

    let o = cr_afem(&["axioms", "--max-dofs", "8000", "--levels", "2", "--seed", "5"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stdout));
    let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(dir.path().join("axioms.json")).unwrap()).unwrap();
    assert_eq!(v["properties"]["seed"], 5);
    assert!(v["constants"]["theta0"].as_f64().unwrap() > 0.0);
    let names: Vec<&str> = v["checks"]
        .as_array()
        .unwrap()
        .iter()
        .map(|c| c["name"].as_str().unwrap())
        .collect();
    for n in ["A1", "A1_mu", "A2", "A2_mu", "A3", "A4"] {
        assert!(names.contains(&n), "{n}");
    }
}

#[test]
fn repeated_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let mut outputs = Vec::new();
    for _ in 0..2 {
        assert!(cr_afem(&["run", "--max-dofs", "3000"], dir.path()).status.success());
        let files: Vec<Vec<u8>> = ["trace.csv", "indicators.csv", "solution.csv", "mesh.txt"]
            .iter()
            .map(|f| std::fs::read(dir.path().join(f)).unwrap())
            .collect();
        outputs.push(files);
    }
    assert_eq!(outputs[0], outputs[1]);
}
