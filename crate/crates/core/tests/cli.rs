use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use scalelink::bank::{load_form, save_form};
use scalelink::linking::{transform_item, LinkingResult, Transform};
use scalelink::model::{Item, TestForm};

fn scalelink(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_scalelink"))
        .args(args)
        .output()
        .expect("run scalelink")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn manifest(dir: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

fn bank(dir: &Path, seed: &str) {
    ok(&scalelink(&["bank", "--seed", seed, "--out", p(dir)]));
}

#[test]
fn bank_is_reproducible_and_records_its_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, c) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("c"));
    bank(&a, "11");
    bank(&b, "11");
    for f in ["base.csv", "new.csv"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap());
    }
    assert_eq!(manifest(&a)["seeds"]["bank"], 11);

    ok(&scalelink(&["bank", "--out", p(&c)]));
    let seed = manifest(&c)["seeds"]["bank"].as_u64().expect("entropy seed recorded");
    let d = tmp.path().join("d");
    bank(&d, &seed.to_string());
    assert_eq!(fs::read(c.join("base.csv")).unwrap(), fs::read(d.join("base.csv")).unwrap());
}

#[test]
fn unwritable_directory_exits_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("plain");
    fs::write(&file, "x").unwrap();
    let out = scalelink(&["bank", "--seed", "1", "--out", p(&file.join("sub"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());
}

fn link(base: &Path, new: &Path, scenario: &str) -> Output {
    scalelink(&["link", "--base", p(base), "--new", p(new), "--scenario", scenario])
}

#[test]
fn link_identical_banks_gives_identity() {
    let tmp = tempfile::tempdir().unwrap();
    bank(tmp.path(), "3");
    let base = tmp.path().join("base.csv");
    let record_path = tmp.path().join("link.txt");
    let out = scalelink(&[
        "link",
        "--base",
        p(&base),
        "--new",
        p(&base),
        "--out",
        p(&record_path),
    ]);
    let printed = ok(&out);
    assert_eq!(printed, fs::read_to_string(&record_path).unwrap());
    let res = LinkingResult::from_record(&printed).unwrap();
    assert!(res.transform.max_abs_diff(&Transform::identity(2)) < 1e-3, "{printed}");
}

#[test]
fn link_recovers_a_known_transform() {
    let tmp = tempfile::tempdir().unwrap();
    bank(tmp.path(), "4");
    let base_path = tmp.path().join("base.csv");
    let base = load_form(&base_path).unwrap();
    // Diagonal A keeps the simple-structure loading pattern of moved items.
    let t0 = Transform::from_params(2, &[1.1, 0.0, 0.0, 0.9, 0.2, -0.1]).unwrap();
    let back = t0.inverse().unwrap();
    let moved: Vec<Item> = base.items().iter().map(|i| transform_item(i, &back).unwrap()).collect();
    let new_path = tmp.path().join("moved.csv");
    save_form(&TestForm::new("moved", moved).unwrap(), &new_path).unwrap();

    let res = LinkingResult::from_record(&ok(&link(&base_path, &new_path, "MCCR"))).unwrap();
    assert!(res.transform.max_abs_diff(&t0) < 1e-2, "{:?}", res.transform);
}

#[test]
fn link_mc_only_without_mc_anchors_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let csv = "\
id,format,model_family,K,a1,a2,a3,d,c,delta1,delta2,anchor
M1,MC,UIRT,2,1.0,,,0.2,0.2,,,0
C1,CR,UIRT,3,0.9,,,,,-0.5,0.5,1
C2,CR,UIRT,3,1.2,,,,,-1.0,0.3,1
";
    let path = tmp.path().join("cr.csv");
    fs::write(&path, csv).unwrap();
    let out = link(&path, &path, "MCOnly");
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("MC anchor"));
    ok(&link(&path, &path, "MCCR"));
}

const STUDY: &str = "\
schema_version = 1
base_seed = 21
n_replications = 2
rho_levels = [0.5, 1.0]
analysis_models = [\"UIRT\", \"SimpleStructure\"]

[bank]
seed = 2018

[calibration]
mode = \"OracleNoise\"
noise_sigma = 0.05
";

fn study(dir: &Path, config: &str, extra: &[&str]) -> Output {
    let cfg = dir.join("study.toml");
    fs::write(&cfg, config).unwrap();
    let out = dir.join("out");
    let mut args = vec!["study", "--config", p(&cfg), "--out", p(&out)];
    args.extend_from_slice(extra);
    scalelink(&args)
}

fn rows(path: &Path) -> Vec<String> {
    fs::read_to_string(path).unwrap().lines().map(str::to_string).collect()
}

#[test]
fn study_writes_tables_manifest_and_plots() {
    let tmp = tempfile::tempdir().unwrap();
    ok(&study(tmp.path(), STUDY, &["--jobs", "2", "--plots"]));
    let out = tmp.path().join("out");
    for f in [
        "report.json",
        "table2_uirt_constants.csv",
        "table3_uirt_armsd.csv",
        "table4b_simple_structure_constants.csv",
        "table5b_simple_structure_armsd_raw.csv",
        "table6_population.csv",
        "armsd_all.csv",
    ] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    assert!(fs::read_dir(out.join("plots")).unwrap().any(|e| {
        let name = e.unwrap().file_name();
        name.to_string_lossy().starts_with("trf_")
    }));
    let m = manifest(&out);
    assert_eq!(m["base_seed"], 21);
    assert_eq!(m["failures"], 0);
    assert_eq!(m["config_sha256"].as_str().unwrap().len(), 64);
    assert_eq!(m["formats"]["report_json"], 1);
    assert!(m["seeds"].as_object().unwrap().keys().any(|k| k.starts_with("calibrate/")));

    // 2 rho x 2 scenarios for UIRT: header plus one row per (scenario, rho).
    assert_eq!(rows(&out.join("table2_uirt_constants.csv")).len(), 5);

    // Tables rebuilt from the raw report match the study's.
    let again = tmp.path().join("again");
    ok(&scalelink(&["report", "--input", p(&out.join("report.json")), "--out", p(&again)]));
    assert_eq!(
        fs::read(out.join("table3_uirt_armsd_raw.csv")).unwrap(),
        fs::read(again.join("table3_uirt_armsd_raw.csv")).unwrap()
    );
}

#[test]
fn only_filter_reproduces_the_full_run_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let full = tmp.path().join("full");
    let part = tmp.path().join("part");
    fs::create_dir_all(&full).unwrap();
    fs::create_dir_all(&part).unwrap();
    ok(&study(&full, STUDY, &[]));
    ok(&study(&part, STUDY, &["--only", "rho=0.5,scenario=MCOnly", "--only", "model=UIRT"]));

    let filtered = rows(&part.join("out/armsd_all_raw.csv"));
    let all = rows(&full.join("out/armsd_all_raw.csv"));
    assert!(filtered.len() > 1);
    for line in &filtered[1..] {
        assert!(line.contains("MCOnly") && line.contains("UIRT"), "{line}");
        assert!(all.contains(line), "{line} missing from the full run");
    }
}

#[test]
fn study_runs_are_byte_identical_across_jobs() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    fs::create_dir_all(&a).unwrap();
    fs::create_dir_all(&b).unwrap();
    ok(&study(&a, STUDY, &["--jobs", "1"]));
    ok(&study(&b, STUDY, &["--jobs", "3"]));
    assert_eq!(
        fs::read(a.join("out/report.json")).unwrap(),
        fs::read(b.join("out/report.json")).unwrap()
    );
}

#[test]
fn config_errors_carry_line_numbers() {
    let tmp = tempfile::tempdir().unwrap();
    let out = study(tmp.path(), &STUDY.replace("noise_sigma", "noise_sgima"), &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 12") && err.contains("noise_sgima"), "{err}");

    let out = study(tmp.path(), &STUDY.replace("[0.5, 1.0]", "[0.5, 2.0]"), &[]);
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("line 4"), "{err}");
}

#[test]
fn bank_without_anchors_names_the_form() {
    let tmp = tempfile::tempdir().unwrap();
    bank(tmp.path(), "5");
    let base = fs::read_to_string(tmp.path().join("base.csv")).unwrap();
    let stripped: String = base
        .lines()
        .map(|l| match l.strip_suffix(",1") {
            Some(rest) => format!("{rest},0\n"),
            None => format!("{l}\n"),
        })
        .collect();
    fs::write(tmp.path().join("base.csv"), stripped).unwrap();
    let config = STUDY.replace("seed = 2018", "base = \"base.csv\"\nnew = \"new.csv\"");
    let out = study(tmp.path(), &config, &[]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("form base"), "{err}");
}

#[test]
fn generate_and_calibrate_round_trip() {
    let tmp = tempfile::tempdir().unwrap();
    bank(tmp.path(), "6");
    let form = tmp.path().join("base.csv");
    let data = tmp.path().join("data");
    ok(&scalelink(&["generate", "--form", p(&form), "--n", "300", "--rho", "0.8", "--seed", "9", "--out", p(&data)]));
    assert_eq!(manifest(&data)["seeds"]["generate"], 9);
    let responses = data.join("responses.csv");
    assert_eq!(rows(&responses).len(), 301);

    let cal = tmp.path().join("cal.csv");
    ok(&scalelink(&[
        "calibrate",
        "--form",
        p(&form),
        "--responses",
        p(&responses),
        "--model",
        "SimpleStructure",
        "--chain-length",
        "60",
        "--burn-in",
        "30",
        "--seed",
        "2",
        "--out",
        p(&cal),
    ]));
    let estimates = load_form(&cal).unwrap();
    assert_eq!(estimates.len(), 48);
    assert!(fs::read_to_string(&cal).unwrap().contains("#pop_cov"));

    let missing = scalelink(&["calibrate", "--form", p(&form), "--out", p(&cal)]);
    assert_eq!(missing.status.code(), Some(1));
}
