use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use labelcraft::synth::{self, SynthConfig};

fn labelcraft(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_labelcraft")).args(args).output().unwrap()
}

fn small_fixture(dir: &Path, n: usize) {
    synth::generate(&SynthConfig {
        n_items: n,
        seed: 5,
        ..SynthConfig::default()
    })
    .write(dir)
    .unwrap();
}

fn quick_args<'a>(dir: &'a str, out: &'a str) -> Vec<String> {
    [
        "--corpus",
        &format!("{dir}/corpus.jsonl"),
        "--annotations",
        &format!("{dir}/annotations.jsonl"),
        "--output-dir",
        out,
        "-k",
        "3",
        "--grid",
        "1:1",
        "--fractions",
        "0.5,1",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect()
}

fn run(cmd: &str, args: &[String]) -> Output {
    let mut all = vec![cmd];
    all.extend(args.iter().map(String::as_str));
    labelcraft(&all)
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

#[test]
fn subset_request_writes_one_variant_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    small_fixture(tmp.path(), 200);
    let out = format!("{d}/out");
    let mut args = quick_args(d, &out);
    args.extend(["--variants".into(), "V_R1U".into()]);
    let o = run("run-all", &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let dirs: Vec<_> = fs::read_dir(&out)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| e.path().is_dir())
        .map(|e| e.file_name().into_string().unwrap())
        .collect();
    assert_eq!(dirs, vec!["C2_V_R1U".to_string()]);
}

#[test]
fn corrupt_annotation_line_is_an_input_error_with_line_number() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    small_fixture(tmp.path(), 40);
    let path = tmp.path().join("annotations.jsonl");
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<&str> = text.lines().collect();
    lines[6] = "{\"item_id\": \"m0001\", \"annot";
    fs::write(&path, lines.join("\n") + "\n").unwrap();

    let o = run("run-all", &quick_args(d, &format!("{d}/out")));
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("line 7"), "{}", stderr(&o));
}

#[test]
fn unknown_item_fails_fast_with_its_id() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    small_fixture(tmp.path(), 40);
    let path = tmp.path().join("annotations.jsonl");
    let mut text = fs::read_to_string(&path).unwrap();
    text.push_str("{\"item_id\":\"ghost\",\"annotator_id\":\"w1\",\"round\":\"crowd\",\"label\":\"A\"}\n");
    fs::write(&path, text).unwrap();
    let o = run("aggregate", &quick_args(d, &format!("{d}/out")));
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains("ghost"), "{}", stderr(&o));
}

#[test]
fn missing_input_and_bad_flags_exit_with_one() {
    let o = labelcraft(&["aggregate", "--corpus", "/nonexistent/c.jsonl", "--annotations", "/nonexistent/a.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    let o = labelcraft(&["run-all", "-k", "1"]);
    assert_eq!(o.status.code(), Some(1));
    let o = labelcraft(&["run-all", "--variants", "C9"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    small_fixture(tmp.path(), 200);
    fs::write(
        tmp.path().join("run.cfg"),
        "# relative paths resolve against this file\ncorpus = corpus.jsonl\nannotations = annotations.jsonl\n\
         seed = 3\nk = 3\ngrid = 1:1\nfractions = 1\nvariants = V_R1U\noutput_dir = from-file\n",
    )
    .unwrap();
    let cfg = format!("{d}/run.cfg");
    let o = labelcraft(&["run-all", "--config", &cfg, "--seed", "9"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("from-file/manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["seed"], 9);
    assert_eq!(manifest["config"]["k"], 3);
    assert_eq!(manifest["config"]["variants"], serde_json::json!(["V_R1U"]));
}

#[test]
fn aggregate_table_matches_variant_sizes() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    small_fixture(tmp.path(), 300);
    let out = format!("{d}/agg");
    let o = run("aggregate", &quick_args(d, &out));
    assert!(o.status.success(), "{}", stderr(&o));
    let table = fs::read_to_string(format!("{out}/table1.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split(',').collect()).collect();
    assert_eq!(rows[0], ["category", "V_R1S", "V_R1U", "V_R2U", "V_R1U_R2U", "V_R1U_R2U_R2S"]);
    assert_eq!(rows.len(), 6);
    for col in 1..6 {
        let sum: usize = rows[1..5].iter().map(|r| r[col].parse::<usize>().unwrap()).sum();
        assert_eq!(sum, rows[5][col].parse::<usize>().unwrap());
    }
    let r1u: usize = rows[5][2].parse().unwrap();
    let r2u: usize = rows[5][3].parse().unwrap();
    assert_eq!(rows[5][4].parse::<usize>().unwrap(), r1u + r2u);
    let gold = fs::read_to_string(format!("{out}/gold_labels.csv")).unwrap();
    assert_eq!(gold.lines().count() - 1, rows[5][5].parse::<usize>().unwrap());
}

#[test]
fn top_positive_features_carry_category_a_vocabulary() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    small_fixture(tmp.path(), 600);
    let out = format!("{d}/out");
    let mut args = quick_args(d, &out);
    args.extend(["--variants".into(), "C5".into()]);
    let o = run("train", &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let top = fs::read_to_string(format!("{out}/C5_V_R1U_R2U_R2S/top_features.csv")).unwrap();
    let positive: Vec<&str> = top
        .lines()
        .skip(1)
        .map(|l| l.split(',').collect::<Vec<_>>())
        .filter(|f| f[1] == "positive")
        .map(|f| f[3])
        .collect::<Vec<_>>();
    assert_eq!(positive.len(), 20);
    let has = |w: &str| positive.iter().any(|g| g.split(' ').any(|t| t == w));
    assert!(has("suicide") && has("depression"), "positive features {positive:?}");
    // Category A vocabulary of the synthetic generator.
    let a_words = [
        "suicide", "myself", "depression", "alone", "worthless", "tired", "nobody", "pain", "empty", "crying",
        "hopeless", "nothing", "goodbye", "numb", "hurt",
    ];
    let hits = positive.iter().filter(|g| g.split(' ').any(|t| a_words.contains(&t))).count();
    assert!(hits >= 12, "positive features {positive:?}");
    assert!(Path::new(&format!("{out}/C5_V_R1U_R2U_R2S/model.json")).exists());
    assert!(Path::new(&format!("{out}/C5_V_R1U_R2U_R2S/vocabulary.csv")).exists());
}

#[test]
fn curve_and_report_render_svg() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    small_fixture(tmp.path(), 200);
    let out = format!("{d}/out");
    let mut args = quick_args(d, &out);
    args.extend(["--variants".into(), "C4".into(), "--svg".into()]);
    let o = run("curve", &args);
    assert!(o.status.success(), "{}", stderr(&o));
    let svg = fs::read_to_string(format!("{out}/C4_V_R1U_R2U/learning_curve.svg")).unwrap();
    assert!(svg.starts_with("<svg") && svg.contains("<polyline"));

    let run_out = format!("{d}/full");
    let mut args = quick_args(d, &run_out);
    args.extend(["--variants".into(), "C1,C4".into()]);
    assert!(run("run-all", &args).status.success());
    let o = labelcraft(&["report", "--output-dir", &run_out, "--svg"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = String::from_utf8_lossy(&o.stdout);
    assert!(text.contains("V_R1S") && text.contains("V_R1U_R2U"), "{text}");
    assert!(Path::new(&format!("{run_out}/C1_V_R1S/learning_curve.svg")).exists());
}

#[test]
fn filter_reports_matches_and_samples() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    small_fixture(tmp.path(), 50);
    let o = labelcraft(&["filter", "--corpus", &format!("{d}/corpus.jsonl")]);
    assert!(o.status.success());
    let csv = String::from_utf8_lossy(&o.stdout);
    assert_eq!(csv.lines().count(), 51);
    assert!(csv.lines().skip(1).all(|l| l.contains(",true,")));

    let sample = format!("{d}/sample.jsonl");
    let o = labelcraft(&["filter", "--corpus", &format!("{d}/corpus.jsonl"), "--sample", "10", "--out", &sample]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(fs::read_to_string(&sample).unwrap().lines().count(), 10);
}

#[test]
fn serve_on_a_busy_port_is_an_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path().to_str().unwrap();
    small_fixture(tmp.path(), 20);
    let busy = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = busy.local_addr().unwrap().to_string();
    let before = fs::read(tmp.path().join("annotations.jsonl")).unwrap();
    let o = labelcraft(&[
        "serve",
        "--corpus",
        &format!("{d}/corpus.jsonl"),
        "--annotations",
        &format!("{d}/annotations.jsonl"),
        "--state-dir",
        &format!("{d}/state"),
        "--addr",
        &addr,
    ]);
    assert_eq!(o.status.code(), Some(1), "{}", stderr(&o));
    assert!(stderr(&o).contains(&addr), "{}", stderr(&o));
    assert_eq!(fs::read(tmp.path().join("annotations.jsonl")).unwrap(), before);
}
