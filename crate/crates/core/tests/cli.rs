//! The `ckptscope` binary end to end: exit codes, outputs, replay.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use ckptscope::cli::RunRecord;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ckptscope"))
}

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut c = bin();
    c.args(args);
    for (k, v) in envs {
        c.env(k, v);
    }
    c.output().expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "status {:?}\nstdout: {}\nstderr: {}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Small synthetic sweep written through the CLI.
fn synth(dir: &Path, checkpoints: usize) {
    let cfg = dir.join("synth.toml");
    fs::write(
        &cfg,
        format!("analysis = \"synth\"\n[synth]\nn_checkpoints = {checkpoints}\n"),
    )
    .unwrap();
    ok(&run(&["synth", "--config", p(&cfg), "--out", p(&dir.join("data"))], &[]));
}

fn quick_encode_config(dir: &Path) -> std::path::PathBuf {
    let cfg = dir.join("encode.toml");
    fs::write(
        &cfg,
        "analysis = \"encode\"\nmanifest = \"data/manifest.json\"\nparticipant = \"p1\"\n[perm]\nn_perm = 200\n",
    )
    .unwrap();
    cfg
}

fn hashes(dir: &Path, analysis: &str) -> BTreeMap<String, String> {
    RunRecord::load(dir.join(format!("run_record_{analysis}.json")))
        .unwrap()
        .outputs
}

#[test]
fn missing_manifest_is_a_data_error_naming_the_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nowhere/manifest.json");
    let out = run(&["encode", "--manifest", p(&missing), "--out", p(dir.path())], &[]);
    assert_eq!(out.status.code(), Some(3));
    assert!(String::from_utf8_lossy(&out.stderr).contains(p(&missing)));
}

#[test]
fn invalid_configuration_exits_with_code_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "analysis = \"encode\"\nfolds = 1\n").unwrap();
    let out = run(&["encode", "--config", p(&cfg), "--out", p(dir.path())], &[]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));

    fs::write(&cfg, "analysis = \"encode\"\nunknown_key = 3\n").unwrap();
    let out = run(&["encode", "--config", p(&cfg)], &[]);
    assert_eq!(out.status.code(), Some(2));

    fs::write(&cfg, "analysis = \"probe\"\n").unwrap();
    let out = run(&["encode", "--config", p(&cfg)], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn encode_writes_one_series_row_per_checkpoint_and_replays_exactly() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 6);
    let cfg = quick_encode_config(dir.path());
    let first = dir.path().join("first");
    ok(&run(&["encode", "--config", p(&cfg), "--out", p(&first)], &[]));

    let series = fs::read_to_string(first.join("series_encoding_mean_r_L0.csv")).unwrap();
    assert_eq!(series.lines().count(), 1 + 6);
    assert_eq!(fs::read_dir(first.join("encoding")).unwrap().count(), 6);
    let table = fs::read_to_string(first.join("encoding/ckpt00_L0.csv")).unwrap();
    assert!(table.lines().last().unwrap().contains("fdr_scope=checkpoint_layer_participant"));

    let second = dir.path().join("second");
    ok(&run(&["encode", "--config", p(&cfg), "--out", p(&second)], &[]));
    assert_eq!(hashes(&first, "encode"), hashes(&second, "encode"));

    // Replaying the record into the same directory reproduces every hash.
    let before = hashes(&first, "encode");
    let record = first.join("run_record_encode.json");
    ok(&run(&["encode", "--config", p(&record)], &[]));
    assert_eq!(hashes(&first, "encode"), before);
}

#[test]
fn edited_run_record_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 6);
    let record = dir.path().join("data/run_record_synth.json");
    let text = fs::read_to_string(&record).unwrap();
    let edited = text.replacen("\"seed\": 0", "\"seed\": 5", 1);
    assert_ne!(text, edited);
    fs::write(&record, edited).unwrap();
    let out = run(&["synth", "--config", p(&record)], &[]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn thread_count_does_not_change_outputs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 6);
    let manifest = dir.path().join("data/manifest.json");
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    ok(&run(&["probe", "--manifest", p(&manifest), "--out", p(&a)], &[("CKPTSCOPE_THREADS", "1")]));
    ok(&run(&["probe", "--manifest", p(&manifest), "--out", p(&b)], &[]));
    assert_eq!(hashes(&a, "probe"), hashes(&b, "probe"));
    let out = run(&["probe", "--manifest", p(&manifest), "--out", p(&b)], &[("CKPTSCOPE_THREADS", "zero")]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn report_joins_series_and_draws_one_line_each() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 6);
    let manifest = dir.path().join("data/manifest.json");
    let res = dir.path().join("res");
    let cfg = quick_encode_config(dir.path());
    ok(&run(&["encode", "--config", p(&cfg), "--out", p(&res)], &[]));
    ok(&run(&["probe", "--manifest", p(&manifest), "--out", p(&res)], &[]));
    ok(&run(&["lens", "--manifest", p(&manifest), "--out", p(&res)], &[]));
    // Keep exactly three series: encoding, probing and benchmark accuracy.
    fs::remove_file(res.join("series_encoding_mean_r_sig_L0.csv")).ok();
    ok(&run(&["phases", "--out", p(&res)], &[]));
    ok(&run(&["report", "--out", p(&res)], &[]));

    let combined = fs::read_to_string(res.join("combined.csv")).unwrap();
    let header: Vec<&str> = combined.lines().next().unwrap().split(',').collect();
    assert_eq!(header.len(), 4, "{header:?}");
    assert_eq!(header[0], "training_tokens");
    assert_eq!(combined.lines().count(), 1 + 6);
    let svg = fs::read_to_string(res.join("report.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 3);
    assert!(svg.contains("phase-boundary"));
}

#[test]
fn report_without_probing_omits_the_column_and_warns() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 6);
    let manifest = dir.path().join("data/manifest.json");
    let res = dir.path().join("res");
    ok(&run(&["lens", "--manifest", p(&manifest), "--out", p(&res)], &[]));
    let out = run(&["report", "--out", p(&res)], &[]);
    ok(&out);
    let combined = fs::read_to_string(res.join("combined.csv")).unwrap();
    assert!(!combined.lines().next().unwrap().contains("probing"));
    assert!(String::from_utf8_lossy(&out.stderr).contains("probing"));
}

#[test]
fn report_on_missing_directory_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let gone = dir.path().join("gone");
    let out = run(&["report", "--out", p(&gone)], &[]);
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn idim_and_xcorr_write_their_outputs() {
    let dir = tempfile::tempdir().unwrap();
    synth(dir.path(), 6);
    let manifest = dir.path().join("data/manifest.json");
    let res = dir.path().join("res");
    ok(&run(&["idim", "--manifest", p(&manifest), "--out", p(&res)], &[]));
    assert_eq!(fs::read_dir(res.join("idim")).unwrap().count(), 6);
    assert!(res.join("series_id_d_hat_L0.csv").exists());
    ok(&run(&["xcorr", "--manifest", p(&manifest), "--out", p(&res)], &[]));
    let m = fs::read_to_string(res.join("xcorr_L0.csv")).unwrap();
    assert_eq!(m.lines().count(), 1 + 6);
}

#[test]
fn score_reads_recorded_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let scores = dir.path().join("outputs.json");
    fs::write(
        &scores,
        r#"[{"checkpoint_id":"a","training_tokens":100,"outputs":[" Paris","rome"],"golds":["Paris","Rome"]},
            {"checkpoint_id":"b","training_tokens":1000,"outputs":["Paris","Rome"],"golds":["Paris","Rome"]}]"#,
    )
    .unwrap();
    let cfg = dir.path().join("score.toml");
    fs::write(&cfg, "analysis = \"score\"\nscore_file = \"outputs.json\"\n").unwrap();
    ok(&run(&["score", "--config", p(&cfg), "--out", p(dir.path())], &[]));
    let series = fs::read_to_string(dir.path().join("series_benchmark_accuracy_mcq_exact.csv")).unwrap();
    let values: Vec<&str> = series.lines().skip(1).map(|l| l.rsplit(',').next().unwrap()).collect();
    assert_eq!(values.len(), 2);
    assert_eq!(values[0].parse::<f64>().unwrap(), 0.5);
    assert_eq!(values[1].parse::<f64>().unwrap(), 1.0);
}
