use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_resiot"))
}

fn workspace() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scratch(tag: &str) -> PathBuf {
    let dir = std::env::temp_dir().join(format!("resiot-cli-{}-{tag}", std::process::id()));
    let _ = std::fs::remove_dir_all(&dir);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn run(args: &[&str], out: &Path) -> Output {
    bin()
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn files(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                std::fs::read(e.path()).unwrap(),
            )
        })
        .collect()
}

fn twice(tag: &str, args: &[&str]) -> BTreeMap<String, Vec<u8>> {
    let a = scratch(&format!("{tag}-a"));
    let b = scratch(&format!("{tag}-b"));
    let ra = run(args, &a);
    let rb = run(args, &b);
    assert!(
        ra.status.success(),
        "{tag}: {}",
        String::from_utf8_lossy(&ra.stderr)
    );
    assert!(rb.status.success());
    let (fa, fb) = (files(&a), files(&b));
    assert!(!fa.is_empty(), "{tag} wrote nothing");
    assert_eq!(fa, fb, "{tag} output differs between runs");
    fa
}

#[test]
fn keygen_is_deterministic() {
    let f = twice("kg", &["keygen", "group", "--members", "4", "--seed", "9"]);
    assert!(
        f.contains_key("group.pub")
            && f.contains_key("group.issuer")
            && f.contains_key("member-4.key")
    );
    let f = twice(
        "ka",
        &[
            "keygen",
            "abe",
            "--universe",
            "6",
            "--policy",
            "thresh(2, attr0, attr1, attr5)",
            "--seed",
            "9",
        ],
    );
    assert!(
        f.contains_key("abe.pub")
            && f.contains_key("abe.master")
            && f.contains_key("abe-key-0.key")
    );
}

#[test]
fn different_seeds_give_different_keys() {
    let a = scratch("seed-a");
    let b = scratch("seed-b");
    assert!(run(&["keygen", "group", "--seed", "1"], &a)
        .status
        .success());
    assert!(run(&["keygen", "group", "--seed", "2"], &b)
        .status
        .success());
    assert_ne!(files(&a)["group.pub"], files(&b)["group.pub"]);
}

#[test]
fn scenario_runs_are_deterministic() {
    for name in [
        "rsf_gs_happy",
        "rsf_gs_faults",
        "rsf_abe_access",
        "rsf_gs_zero_latency",
    ] {
        let path = workspace().join(format!("scenarios/{name}.toml"));
        let f = twice(name, &["run", path.to_str().unwrap()]);
        assert!(f.contains_key(&format!("{name}.report.json")));
        assert!(f.contains_key(&format!("{name}.summary.csv")));
    }
}

#[test]
fn seed_override_changes_wire_bytes() {
    let path = workspace().join("scenarios/rsf_gs_happy.toml");
    let a = scratch("ov-a");
    let b = scratch("ov-b");
    assert!(run(&["run", path.to_str().unwrap()], &a).status.success());
    assert!(run(&["run", path.to_str().unwrap(), "--seed", "77"], &b)
        .status
        .success());
    assert_ne!(
        files(&a)["rsf_gs_happy.report.json"],
        files(&b)["rsf_gs_happy.report.json"]
    );
}

#[test]
fn cost_table_and_queue_sweep_are_deterministic() {
    let f = twice("ct", &["cost-table", "--timings", "paper"]);
    let csv = String::from_utf8(f["cost_table.csv"].clone()).unwrap();
    assert!(csv.starts_with("quantity,function,value,paper_value,provenance,flag"));
    assert!(f.contains_key("cost_table.txt"));
    let f = twice(
        "qs",
        &[
            "queue-sweep",
            "--grid",
            "c=0.2:1.0:3;texp=2,10",
            "--seed",
            "5",
            "--requests",
            "5000",
        ],
    );
    let csv = String::from_utf8(f["queue_sweep.csv"].clone()).unwrap();
    assert_eq!(
        csv.lines().next(),
        Some("c_k,t_exp,success_rate,mean_wait_ms,mean_total_ms")
    );
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
}

#[test]
fn cost_table_reads_a_timing_file() {
    let dir = scratch("ctf");
    let timings = dir.join("t.toml");
    std::fs::write(
        &timings,
        resiot_core::perf_model::TimingTable::paper().to_toml_string(),
    )
    .unwrap();
    let out = scratch("ctf-out");
    let r = run(
        &["cost-table", "--timings", timings.to_str().unwrap()],
        &out,
    );
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let paper = scratch("ctf-paper");
    assert!(run(&["cost-table"], &paper).status.success());
    assert_eq!(
        files(&out)["cost_table.csv"],
        files(&paper)["cost_table.csv"]
    );
}

#[test]
fn bench_writes_a_loadable_timing_file() {
    let out = scratch("bench");
    let r = run(&["bench", "--samples", "1"], &out);
    assert!(r.status.success(), "{}", String::from_utf8_lossy(&r.stderr));
    let text = std::fs::read_to_string(out.join("host_timings.toml")).unwrap();
    resiot_core::perf_model::TimingTable::from_toml_str(&text).unwrap();
}

#[test]
fn exit_codes() {
    let out = scratch("codes");
    let missing = run(&["run", "does/not/exist.toml"], &out);
    assert_eq!(missing.status.code(), Some(2));

    let faults = workspace().join("scenarios/rsf_gs_faults.toml");
    assert_eq!(
        run(&["run", faults.to_str().unwrap()], &out).status.code(),
        Some(0)
    );

    // A scenario whose expectation is wrong exits 1 but still writes its report.
    let text = std::fs::read_to_string(workspace().join("scenarios/rsf_gs_happy.toml")).unwrap();
    let wrong = out.join("wrong.toml");
    std::fs::write(
        &wrong,
        text.replacen("expect = \"accept\"", "expect = \"abort\"", 1),
    )
    .unwrap();
    let r = run(&["run", wrong.to_str().unwrap()], &out);
    assert_eq!(
        r.status.code(),
        Some(1),
        "{}",
        String::from_utf8_lossy(&r.stderr)
    );
    assert!(
        out.join("rsf_gs_happy.report.json").exists() || out.join("wrong.report.json").exists()
    );

    let invalid = out.join("invalid.toml");
    std::fs::write(&invalid, "name = \"x\"\nseed = 1\n[[run]]\nprotocol = \"rsf-gs\"\ninitiator = \"ghost\"\nresponder = \"ghost2\"\n").unwrap();
    let r = run(&["run", invalid.to_str().unwrap()], &out);
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("run[0]"));

    let r = run(
        &[
            "keygen",
            "abe",
            "--universe",
            "4",
            "--policy",
            "and(attr0,",
            "--seed",
            "1",
        ],
        &out,
    );
    assert_eq!(r.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&r.stderr).contains("byte"));

    let r = run(
        &[
            "keygen",
            "abe",
            "--universe",
            "4",
            "--policy",
            "attr9",
            "--seed",
            "1",
        ],
        &out,
    );
    assert_eq!(r.status.code(), Some(2));

    let r = run(
        &["queue-sweep", "--grid", "c=2;texp=2", "--seed", "1"],
        &out,
    );
    assert_eq!(r.status.code(), Some(2));

    assert_eq!(
        bin().arg("frobnicate").output().unwrap().status.code(),
        Some(2)
    );
}
