use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use snrscan::synth::{gen_mini_checkpoint, GroupSpec, SpikeSchedule};

fn snrscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snrscan"))
        .args(args)
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn fixture(dir: &Path, layers: usize) -> PathBuf {
    let path = dir.join("mini.safetensors");
    let groups = [
        GroupSpec::new(
            "self_attn.q_proj",
            16,
            16,
            SpikeSchedule::Ramp {
                anchor: 100.0,
                step: 1.0,
            },
        )
        .seed(1),
        GroupSpec::new(
            "mlp.up_proj",
            16,
            32,
            SpikeSchedule::Ramp {
                anchor: 100.0,
                step: 1.0,
            },
        )
        .seed(2),
    ];
    gen_mini_checkpoint(layers, &groups, &path).unwrap();
    path
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn scan_writes_report_and_log() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture(dir.path(), 4);
    let out = dir.path().join("out");
    let o = snrscan(&["scan", "--model", s(&model), "--out", s(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stdout.is_empty(), "data goes to files only");

    let text = fs::read_to_string(out.join("snr_report.json")).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["model_id"], "mini");
    let groups = v["groups"].as_object().unwrap();
    assert_eq!(
        groups.keys().collect::<Vec<_>>(),
        vec!["mlp.up_proj", "self_attn.q_proj"]
    );
    for entries in groups.values() {
        assert_eq!(entries.as_array().unwrap().len(), 4);
        for e in entries.as_array().unwrap() {
            for key in [
                "name",
                "layer",
                "rows",
                "cols",
                "snr_raw",
                "snr_normalized",
                "signal_count",
                "sigma",
                "epsilon",
            ] {
                assert!(e.get(key).is_some(), "missing {key}");
            }
        }
    }
    let log = fs::read_to_string(out.join("snr_report.log")).unwrap();
    assert!(log.contains("batch_size: 8"));
    assert!(!text.contains("batch"));
}

#[test]
fn missing_checkpoint_exits_2_naming_path() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.safetensors");
    let o = snrscan(&["scan", "--model", s(&missing), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains(s(&missing)));
}

#[test]
fn garbage_checkpoint_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.safetensors");
    fs::write(&bad, b"\xff\xff\xff\xff\xff\xff\xff\x7fnot a header").unwrap();
    let o = snrscan(&["scan", "--model", s(&bad), "--out", s(dir.path())]);
    assert_eq!(code(&o), 2);
}

#[test]
fn nothing_scannable_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture(dir.path(), 2);
    let o = snrscan(&[
        "scan",
        "--model",
        s(&model),
        "--out",
        s(dir.path()),
        "--exclude",
        ".*",
    ]);
    assert_eq!(code(&o), 3);
    let o = snrscan(&[
        "scan",
        "--model",
        s(&model),
        "--out",
        s(dir.path()),
        "--include",
        "^nothing$",
    ]);
    assert_eq!(code(&o), 3);
}

#[test]
fn usage_errors_exit_64() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture(dir.path(), 2);
    let out = s(dir.path());
    for args in [
        vec!["select", "--out", out, "-p", "0"],
        vec!["select", "--out", out, "-p", "1.5"],
        vec!["select", "--out", out, "--preset", "top-99"],
        vec![
            "scan",
            "--model",
            s(&model),
            "--out",
            out,
            "--batch-size",
            "0",
        ],
        vec!["scan", "--model", s(&model), "--out", out, "--exclude", "("],
        vec!["scan", "--out", out],
        vec!["frobnicate"],
    ] {
        let o = snrscan(&args);
        assert_eq!(
            code(&o),
            64,
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
    }
    assert_eq!(code(&snrscan(&["--help"])), 0);
}

#[test]
fn report_problems_exit_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = s(dir.path());
    assert_eq!(code(&snrscan(&["select", "--out", out])), 4);
    assert_eq!(code(&snrscan(&["report", "--out", out])), 4);
    fs::write(dir.path().join("snr_report.json"), "{\"groups\": 3}").unwrap();
    assert_eq!(code(&snrscan(&["select", "--out", out])), 4);
    assert_eq!(
        code(&snrscan(&["report", "--out", out, "--format", "json"])),
        4
    );
}

#[test]
fn select_follows_rounding_rule() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture(dir.path(), 5);
    let out = dir.path().join("o");
    let o = snrscan(&[
        "select",
        "--model",
        s(&model),
        "--out",
        s(&out),
        "-p",
        "0.5",
    ]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    // 5 × 0.5 = 2.5 rounds to 3
    let stdout = String::from_utf8_lossy(&o.stdout);
    assert!(
        stdout
            .lines()
            .any(|l| l.split_whitespace().collect::<Vec<_>>() == ["mlp.up_proj", "3", "5"]),
        "{stdout}"
    );
    assert!(stdout.contains("unfrozen: 6/10 matrices"));

    let plan: BTreeMap<String, Vec<String>> =
        serde_yaml::from_str(&fs::read_to_string(out.join("unfrozen_parameters.yaml")).unwrap())
            .unwrap();
    assert_eq!(plan["unfrozen_parameters"].len(), 6);
    // layers 4, 3, 2 carry the largest ramp spikes
    for layer in [2, 3, 4] {
        let want = format!("^model\\.layers\\.{layer}\\.self_attn\\.q_proj\\.weight$");
        assert!(plan["unfrozen_parameters"].contains(&want), "{want}");
    }
}

#[test]
fn select_reuses_existing_report() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture(dir.path(), 4);
    let out = s(dir.path());
    assert_eq!(
        code(&snrscan(&["scan", "--model", s(&model), "--out", out])),
        0
    );
    fs::remove_file(&model).unwrap();
    let o = snrscan(&["select", "--out", out, "--preset", "top-50"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let o = snrscan(&["select", "--out", out, "--model", s(&model), "--scan"]);
    assert_eq!(code(&o), 2);
}

#[test]
fn report_table_and_json() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture(dir.path(), 3);
    let out = s(dir.path());
    assert_eq!(
        code(&snrscan(&["scan", "--model", s(&model), "--out", out])),
        0
    );

    let json = snrscan(&["report", "--out", out, "--format", "json"]);
    assert_eq!(code(&json), 0);
    let file = fs::read(dir.path().join("snr_report.json")).unwrap();
    assert_eq!(json.stdout, file);

    let table = String::from_utf8(snrscan(&["report", "--out", out]).stdout).unwrap();
    assert!(!table.contains("skipped"));
    let layers: Vec<&str> = table
        .lines()
        .filter(|l| l.contains("q_proj.weight"))
        .map(|l| l.split_whitespace().nth(1).unwrap())
        .collect();
    assert_eq!(layers, vec!["2", "1", "0"]);

    let all = snrscan(&[
        "scan",
        "--model",
        s(&model),
        "--out",
        out,
        "--exclude",
        "mlp",
    ]);
    assert_eq!(code(&all), 0);
    let table = String::from_utf8(snrscan(&["report", "--out", out]).stdout).unwrap();
    assert!(table.contains("skipped (3)"));
}

#[test]
fn end_to_end_is_byte_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let model = fixture(dir.path(), 6);
    let run = |name: &str| {
        let out = dir.path().join(name);
        let o = snrscan(&[
            "select",
            "--model",
            s(&model),
            "--out",
            s(&out),
            "-p",
            "0.25",
            "--scan",
        ]);
        assert_eq!(code(&o), 0);
        (
            fs::read(out.join("snr_report.json")).unwrap(),
            fs::read(out.join("unfrozen_parameters.yaml")).unwrap(),
        )
    };
    assert_eq!(run("a"), run("b"));
}
