mod common;

use esbilr::bnp::SolutionDoc;
use esbilr::cli::main_with_args;
use esbilr::instance::{desk_instance, save_instance, DemandShape, DeskSpec};
use std::path::Path;

fn run(args: &[&str]) -> (i32, String) {
    let mut v = vec!["esbilr"];
    v.extend_from_slice(args);
    main_with_args(v)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn solve_to(dir: &Path, name: &str, extra: &[&str]) -> std::path::PathBuf {
    let out = dir.join(name);
    let mut args = vec!["--deterministic", "solve", "--output", s(&out)];
    args.extend_from_slice(extra);
    let (code, text) = run(&args);
    assert_eq!(code, 0, "{text}");
    out
}

fn rows(text: &str) -> Vec<csv::StringRecord> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.records().map(|x| x.unwrap()).collect()
}

fn col(r: &csv::StringRecord, name: &str) -> String {
    let header = esbilr::cli::SWEEP_HEADER.split(',').position(|h| h == name).unwrap();
    r[header].to_string()
}

#[test]
fn deterministic_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    for method in ["compact", "bnp-exact", "bnp-dp"] {
        let args = ["--desk", "2-1-8", "--seed", "4", "--buses", "1,2,1", "--method", method];
        let a = solve_to(dir.path(), "a.json", &args);
        let first = std::fs::read(&a).unwrap();
        let b = solve_to(dir.path(), "b.json", &args);
        assert_eq!(first, std::fs::read(&b).unwrap(), "{method}");
        assert!(!String::from_utf8(first).unwrap().contains("runtime"));
    }
}

#[test]
fn validate_accepts_solver_output_and_names_tampering() {
    let dir = tempfile::tempdir().unwrap();
    let inst_path = dir.path().join("inst.json");
    let (code, text) = run(&["gen", "--desk", "1-1-10", "--seed", "2", "--mean-demand", "60", "--output", s(&inst_path)]);
    assert_eq!(code, 0, "{text}");
    for method in ["compact", "bnp-exact", "bnp-dp"] {
        let sol = solve_to(dir.path(), "sol.json", &["--instance", s(&inst_path), "--method", method]);
        let (code, text) = run(&["validate", "--solution", s(&sol), "--instance", s(&inst_path)]);
        assert_eq!(code, 0, "{method}: {text}");
        assert!(text.ends_with("clean\n"));

        let doc: SolutionDoc = serde_json::from_str(&std::fs::read_to_string(&sol).unwrap()).unwrap();
        assert!(!doc.routes.is_empty(), "{method} used no bus");

        let mut soc = doc.clone();
        let trace = &mut soc.routes[0].route.soc_trace;
        let last = trace.len() - 1;
        trace[last] += 5.0;
        let bad = dir.path().join("soc.json");
        std::fs::write(&bad, serde_json::to_string(&soc).unwrap()).unwrap();
        let (code, text) = run(&["validate", "--solution", s(&bad), "--instance", s(&inst_path)]);
        assert_eq!(code, 1);
        assert!(text.contains("stored SOC trace differs"), "{text}");

        let mut short = doc.clone();
        for r in &mut short.routes {
            for d in &mut r.route.discharge {
                d.2 = 0.0;
            }
        }
        let bad = dir.path().join("short.json");
        std::fs::write(&bad, serde_json::to_string(&short).unwrap()).unwrap();
        let (code, text) = run(&["validate", "--solution", s(&bad), "--instance", s(&inst_path)]);
        assert_eq!(code, 1);
        assert!(text.contains("unaccounted unmet demand"), "{text}");
    }
}

#[test]
fn usage_and_input_errors_exit_with_two() {
    assert_eq!(run(&["solve", "--desk", "9"]).0, 2);
    assert_eq!(run(&["solve", "--instance", "/nonexistent/inst.json"]).0, 2);
    assert_eq!(run(&["validate", "--solution", "/nonexistent/a.json", "--instance", "/nonexistent/b.json"]).0, 2);
}

#[test]
fn severity_sweep_cost_increases() {
    let (code, text) = run(&["--deterministic", "sweep", "--axis", "severity", "--method", "bnp-exact", "--gap", "0", "--desk", "1-1-8", "--seed", "3", "--mean-demand", "30"]);
    assert_eq!(code, 0, "{text}");
    let costs: Vec<i64> = rows(&text).iter().map(|r| col(r, "total_cost").parse().unwrap()).collect();
    assert_eq!(costs.len(), 3);
    assert!(costs.windows(2).all(|w| w[0] < w[1]), "{costs:?}");
}

#[test]
fn sparsity_sweep_cost_never_drops() {
    let (code, text) = run(&["--deterministic", "sweep", "--axis", "sparsity", "--method", "bnp-exact", "--gap", "0", "--desk", "2-1-8", "--seed", "5", "--mean-demand", "30"]);
    assert_eq!(code, 0, "{text}");
    let costs: Vec<i64> = rows(&text).iter().map(|r| col(r, "total_cost").parse().unwrap()).collect();
    assert_eq!(costs.len(), 4);
    assert!(costs.windows(2).all(|w| w[0] <= w[1]), "{costs:?}");
}

#[test]
fn shift_fee_sweep_drives_shifting_out() {
    let dir = tempfile::tempdir().unwrap();
    let inst_path = dir.path().join("inst.json");
    let inst = desk_instance(&DeskSpec {
        shelters: 1,
        stations: 1,
        slots: 8,
        buses: [1, 1, 1],
        seed: 11,
        mean_demand: 80.0,
        demand_slots: Some(3),
        penalty: 10_000.0,
        shape: DemandShape::Uniform,
    });
    save_instance(&inst, &inst_path).unwrap();
    let (code, text) = run(&["--deterministic", "sweep", "--axis", "shift-fee", "--method", "bnp-exact", "--gap", "0", "--instance", s(&inst_path)]);
    assert_eq!(code, 0, "{text}");
    let shifted: Vec<f64> = rows(&text).iter().map(|r| col(r, "shifted_pct").parse().unwrap()).collect();
    assert_eq!(shifted.len(), 6);
    assert!(shifted.windows(2).all(|w| w[0] >= w[1] - 1e-9), "{shifted:?}");
    assert_eq!(*shifted.last().unwrap(), 0.0);
}

#[test]
fn sweep_rows_can_be_rederived() {
    let base = ["--desk", "1-1-10", "--seed", "8", "--mean-demand", "50"];
    let mut args = vec!["--deterministic", "sweep", "--axis", "availability"];
    args.extend_from_slice(&base);
    let (code, text) = run(&args);
    assert_eq!(code, 0, "{text}");
    let dir = tempfile::tempdir().unwrap();
    for r in rows(&text) {
        let avail = col(&r, "value").replace('/', ",");
        let mut extra = base.to_vec();
        extra.extend_from_slice(&["--availability", &avail]);
        let out = solve_to(dir.path(), "p.json", &extra);
        let doc: SolutionDoc = serde_json::from_str(&std::fs::read_to_string(out).unwrap()).unwrap();
        assert_eq!(col(&r, "total_cost"), (doc.objective.round() as i64).to_string());
        for k in 0..3 {
            assert_eq!(col(&r, &format!("fleet_{}", k + 1)), doc.fleet[k].to_string());
        }
    }
}
