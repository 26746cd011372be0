//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any
//! criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::panic::{self, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_xoshiro::Xoshiro256StarStar;
use snrscan::checkpoint::{bf16_bits_to_f32, f16_bits_to_f32, write_sharded_fixture, Dtype};
use snrscan::spectral::{analyze_dense, mp_bounds, singular_values, SigmaEstimator};
use snrscan::synth::{
    gen_noise, gen_spiked, gram_eigen_oracle, layer_tensor_name, mini_checkpoint_records,
    GroupSpec, SpikeSchedule, SpikedSpec,
};
use snrscan::{open_checkpoint, write_fixture, Matrix, TensorRecord};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn snrscan(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_snrscan"))
        .args(args)
        .arg("-q")
        .env_remove("RUST_LOG")
        .output()
        .expect("binary runs")
}

fn s(p: &Path) -> &str {
    p.to_str().expect("utf-8 path")
}

fn run_ok(args: &[&str]) -> Result<(), String> {
    let o = snrscan(args);
    if o.status.success() {
        Ok(())
    } else {
        Err(format!(
            "{args:?} exited {:?}: {}",
            o.status.code(),
            String::from_utf8_lossy(&o.stderr)
        ))
    }
}

fn read_plan(path: &Path) -> Vec<String> {
    let text = fs::read_to_string(path).expect("plan written");
    let mut doc: BTreeMap<String, Vec<String>> = serde_yaml::from_str(&text).expect("plan is yaml");
    doc.remove("unfrozen_parameters").expect("plan key")
}

fn report_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).expect("report written"))
        .expect("report is json")
}

fn layers_in(report: &serde_json::Value, group: &str) -> Vec<u64> {
    report["groups"][group]
        .as_array()
        .expect("group present")
        .iter()
        .map(|e| e["layer"].as_u64().expect("layer index"))
        .collect()
}

// 1. sqrt(eig(WᵀW)) against singular values on 100 random matrices
fn eigen_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = Xoshiro256StarStar::seed_from_u64(1);
    let mut worst = 0.0f64;
    for seed in 0..100u64 {
        let rows = rng.gen_range(1..=64);
        let cols = rng.gen_range(1..=64);
        let w = gen_noise(rows, cols, 1.0, seed).unwrap();
        let sv = singular_values(&w).unwrap().singular_values;
        let eig = gram_eigen_oracle(&w);
        for (s, e) in sv.iter().zip(&eig) {
            let want = e.max(0.0).sqrt();
            worst = worst.max((s - want).abs() / want);
        }
    }
    let t = start.elapsed();
    outcome(
        worst <= 1e-6 && t < Duration::from_secs(10),
        format!(
            "max relative error {worst:.2e} (tol 1e-6), {:.2}s (limit 10s)",
            t.as_secs_f64()
        ),
    )
}

// 2. largest eigenvalue of (1/n)WᵀW against the MP upper edge
fn mp_edge() -> Outcome {
    let start = Instant::now();
    let (m, n) = (2048usize, 1024usize);
    let predicted = (1.0 + (m as f64 / n as f64).sqrt()).powi(2);
    // the library's edge for per-entry σ = 1 is σ²(√m + √n)²
    let library = mp_bounds((m as f64).sqrt(), m, n).lambda_plus / n as f64;
    let mut worst = 0.0f64;
    let mut seen = Vec::new();
    for seed in 0..5 {
        let w = gen_noise(m, n, 1.0, seed).unwrap();
        let top = gram_eigen_oracle(&w)[0] / n as f64;
        seen.push(top);
        worst = worst.max((top - predicted).abs() / predicted);
    }
    let t = start.elapsed();
    let consistent = (library - predicted).abs() < 1e-12 * predicted;
    outcome(
        worst <= 0.05 && consistent && t < Duration::from_secs(60),
        format!(
            "edge {predicted:.4}, observed {:.4}..{:.4}, max deviation {:.2}% (tol 5%), library edge matches: {consistent}, {:.1}s (limit 60s)",
            seen.iter().cloned().fold(f64::INFINITY, f64::min),
            seen.iter().cloned().fold(0.0, f64::max),
            100.0 * worst,
            t.as_secs_f64()
        ),
    )
}

// 3. pure noise mostly noise; a spike ≥ 10ε always detected
fn noise_rejection() -> Outcome {
    let n = 512;
    // asymptotic edge σ(√m + √n) for σ = 1
    let amplitude = 12.0 * 2.0 * (n as f64).sqrt();
    let mut worst_fraction = 0.0f64;
    let mut missed = 0;
    let mut below_ten_eps = 0;
    for seed in 0..20u64 {
        let noise = gen_noise(n, n, 1.0, 100 + seed).unwrap();
        let r = analyze_dense("noise", &noise, SigmaEstimator::default()).unwrap();
        worst_fraction = worst_fraction.max(r.signal_count as f64 / n as f64);

        let spiked = gen_spiked(&SpikedSpec {
            rows: n,
            cols: n,
            noise_sigma: 1.0,
            spikes: vec![amplitude],
            seed: 100 + seed,
        })
        .unwrap();
        let r = analyze_dense("spiked", &spiked, SigmaEstimator::default()).unwrap();
        if amplitude < 10.0 * r.bounds.epsilon {
            below_ten_eps += 1;
        }
        if r.signal_count < 1 {
            missed += 1;
        }
    }
    outcome(
        worst_fraction <= 0.05 && missed == 0 && below_ten_eps == 0,
        format!(
            "worst noise signal fraction {worst_fraction:.4} (tol 0.05), spikes missed {missed}/20, spikes under 10ε {below_ten_eps}/20"
        ),
    )
}

fn ramp_groups() -> Vec<GroupSpec> {
    // a fixed anchor keeps σ₁ flat across layers so the ramp spike
    // decides the normalized SNR
    let ramp = SpikeSchedule::Ramp {
        anchor: 1000.0,
        step: 10.0,
    };
    vec![
        GroupSpec::new("self_attn.q_proj", 64, 64, ramp.clone()).seed(11),
        GroupSpec::new("mlp.down_proj", 64, 128, ramp).seed(12),
    ]
}

fn write_ramp_fixture(dir: &Path) -> PathBuf {
    let path = dir.join("ramp.safetensors");
    write_fixture(&mini_checkpoint_records(32, &ramp_groups()).unwrap(), &path).unwrap();
    path
}

fn select_plan(model: &Path, out: &Path) -> Result<Vec<String>, String> {
    run_ok(&[
        "select",
        "--model",
        s(model),
        "--out",
        s(out),
        "-p",
        "0.25",
        "--scan",
    ])?;
    Ok(read_plan(&out.join("unfrozen_parameters.yaml")))
}

// 4. ranking follows the ramp; -p 0.25 keeps the top 8 of 32
fn snr_ordering(dir: &Path) -> Result<Outcome, String> {
    let model = write_ramp_fixture(dir);
    let out = dir.join("c4");
    let plan = select_plan(&model, &out)?;
    let report = report_json(&out.join("snr_report.json"));
    let descending: Vec<u64> = (0..32).rev().collect();
    let mut ok = true;
    let mut notes = Vec::new();
    for group in ["mlp.down_proj", "self_attn.q_proj"] {
        let order = layers_in(&report, group);
        let ranked = order == descending;
        let want: Vec<String> = (24..32)
            .map(|i| format!("^{}$", regex_escape(&layer_tensor_name(i, group))))
            .collect();
        let picked: Vec<&String> = plan
            .iter()
            .filter(|p| p.contains(&regex_escape(group)))
            .collect();
        let top8 = picked.len() == 8 && want.iter().all(|w| plan.contains(w));
        ok &= ranked && top8;
        notes.push(format!(
            "{group}: ranking descending {ranked}, {} selected, top 8 {top8}",
            picked.len()
        ));
    }
    Ok(outcome(ok, notes.join("; ")))
}

fn regex_escape(name: &str) -> String {
    name.replace('.', "\\.")
}

// 5. ×7.3 on every weight leaves the plan unchanged
fn scale_invariance(dir: &Path) -> Result<Outcome, String> {
    let base_model = write_ramp_fixture(dir);
    let scaled_model = dir.join("ramp_scaled.safetensors");
    let records: Vec<TensorRecord> = mini_checkpoint_records(32, &ramp_groups())
        .unwrap()
        .into_iter()
        .map(|r| {
            let values = r.values.iter().map(|v| v * 7.3).collect();
            TensorRecord::with_dtype(r.name, r.shape, r.dtype, values).unwrap()
        })
        .collect();
    write_fixture(&records, &scaled_model).unwrap();
    let a = select_plan(&base_model, &dir.join("c5a"))?;
    let b = select_plan(&scaled_model, &dir.join("c5b"))?;
    Ok(outcome(
        a == b && !a.is_empty(),
        format!("{} selected patterns, identical: {}", a.len(), a == b),
    ))
}

fn f16_oracle(bits: u16) -> f64 {
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((bits >> 10) & 0x1f) as i32;
    let frac = (bits & 0x3ff) as f64;
    match exp {
        0 => sign * frac * 2f64.powi(-24),
        0x1f if frac == 0.0 => sign * f64::INFINITY,
        0x1f => f64::NAN,
        _ => sign * (1024.0 + frac) * 2f64.powi(exp - 25),
    }
}

fn bf16_oracle(bits: u16) -> f64 {
    let sign = if bits & 0x8000 != 0 { -1.0 } else { 1.0 };
    let exp = ((bits >> 7) & 0xff) as i32;
    let frac = (bits & 0x7f) as f64;
    match exp {
        0 => sign * frac * 2f64.powi(-133),
        0xff if frac == 0.0 => sign * f64::INFINITY,
        0xff => f64::NAN,
        _ => sign * (128.0 + frac) * 2f64.powi(exp - 134),
    }
}

fn decode_mismatches(decode: fn(u16) -> f32, oracle: fn(u16) -> f64) -> usize {
    (0..=u16::MAX)
        .filter(|&b| {
            let got = decode(b);
            let want = oracle(b);
            if want.is_nan() {
                !got.is_nan()
            } else {
                got as f64 != want || got.is_sign_negative() != want.is_sign_negative()
            }
        })
        .count()
}

// 6. bit-exact container round trip, exhaustive half decoding, byte-stable outputs
fn format_exactness(dir: &Path) -> Result<Outcome, String> {
    let mut rng = Xoshiro256StarStar::seed_from_u64(6);
    let mut records = Vec::new();
    for i in 0..24 {
        let shape: Vec<usize> = (0..rng.gen_range(1..=3))
            .map(|_| rng.gen_range(1..=9))
            .collect();
        let n: usize = shape.iter().product();
        let (dtype, values): (Dtype, Vec<f32>) = match i % 3 {
            0 => (
                Dtype::F32,
                (0..n).map(|_| f32::from_bits(rng.gen())).collect(),
            ),
            1 => (
                Dtype::F16,
                (0..n).map(|_| f16_bits_to_f32(rng.gen())).collect(),
            ),
            _ => (
                Dtype::BF16,
                (0..n).map(|_| bf16_bits_to_f32(rng.gen())).collect(),
            ),
        };
        records
            .push(TensorRecord::with_dtype(format!("t{i}.weight"), shape, dtype, values).unwrap());
    }
    let single = dir.join("rt.safetensors");
    write_fixture(&records, &single).unwrap();
    let shards = dir.join("rt_sharded");
    fs::create_dir_all(&shards).unwrap();
    write_sharded_fixture(
        &[
            ("a.safetensors", records[..12].to_vec()),
            ("b.safetensors", records[12..].to_vec()),
        ],
        &shards,
    )
    .unwrap();
    let mut round_trip_bad = 0;
    for path in [&single, &shards] {
        let m = open_checkpoint(path).map_err(|e| e.to_string())?;
        for r in &records {
            let back = m.load_tensor(&r.name).map_err(|e| e.to_string())?;
            let exact = back.shape == r.shape
                && back.dtype == r.dtype
                && back.values.iter().zip(&r.values).all(|(a, b)| {
                    // NaN payloads of 16-bit formats only need to stay NaN
                    a.to_bits() == b.to_bits()
                        || (r.dtype != Dtype::F32 && a.is_nan() && b.is_nan())
                });
            if !exact {
                round_trip_bad += 1;
            }
        }
    }

    let f16_bad = decode_mismatches(f16_bits_to_f32, f16_oracle);
    let bf16_bad = decode_mismatches(bf16_bits_to_f32, bf16_oracle);

    let model = write_ramp_fixture(dir);
    let mut outputs = Vec::new();
    for run in ["c6a", "c6b"] {
        let out = dir.join(run);
        select_plan(&model, &out)?;
        outputs.push((
            fs::read(out.join("snr_report.json")).unwrap(),
            fs::read(out.join("unfrozen_parameters.yaml")).unwrap(),
        ));
    }
    let report_same = outputs[0].0 == outputs[1].0;
    let plan_same = outputs[0].1 == outputs[1].1;
    Ok(outcome(
        round_trip_bad == 0 && f16_bad == 0 && bf16_bad == 0 && report_same && plan_same,
        format!(
            "round-trip mismatches {round_trip_bad}/48, f16 mismatches {f16_bad}/65536, bf16 mismatches {bf16_bad}/65536, report identical {report_same}, plan identical {plan_same}"
        ),
    ))
}

// 7. identity first, zero last, 1-D excluded, corrupted tensor skipped
fn degenerate(dir: &Path) -> Result<Outcome, String> {
    let group = "self_attn.o_proj";
    let n = 32;
    let mut shard_a = Vec::new();
    for layer in 0..4 {
        let m = gen_spiked(&SpikedSpec {
            rows: n,
            cols: n,
            noise_sigma: 0.01,
            spikes: vec![1.0],
            seed: layer as u64,
        })
        .unwrap();
        shard_a.push(
            TensorRecord::new(layer_tensor_name(layer, group), vec![n, n], m.to_f32()).unwrap(),
        );
    }
    shard_a.push(
        TensorRecord::new(
            layer_tensor_name(4, group),
            vec![n, n],
            Matrix::identity(n).to_f32(),
        )
        .unwrap(),
    );
    shard_a.push(
        TensorRecord::new(layer_tensor_name(5, group), vec![n, n], vec![0.0; n * n]).unwrap(),
    );
    shard_a.push(
        TensorRecord::new(
            "model.layers.0.input_layernorm.weight",
            vec![n],
            vec![1.0; n],
        )
        .unwrap(),
    );
    let mut nan = gen_noise(n, n, 1.0, 9).unwrap().to_f32();
    nan[17] = f32::NAN;
    let shard_b = vec![
        TensorRecord::new(layer_tensor_name(6, group), vec![n, n], nan).unwrap(),
        TensorRecord::new(
            layer_tensor_name(7, group),
            vec![n, n],
            gen_noise(n, n, 1.0, 10).unwrap().to_f32(),
        )
        .unwrap(),
    ];
    let model = dir.join("degenerate");
    fs::create_dir_all(&model).unwrap();
    write_sharded_fixture(
        &[("a.safetensors", shard_a), ("b.safetensors", shard_b)],
        &model,
    )
    .unwrap();
    // cut layer 7's bytes short
    let b = model.join("b.safetensors");
    let len = fs::metadata(&b).unwrap().len();
    fs::OpenOptions::new()
        .write(true)
        .open(&b)
        .unwrap()
        .set_len(len - 64)
        .unwrap();

    let out = dir.join("c7");
    run_ok(&["scan", "--model", s(&model), "--out", s(&out)])?;
    let report = report_json(&out.join("snr_report.json"));
    let entries = report["groups"][group].as_array().ok_or("group missing")?;
    let first = &entries[0];
    let last = &entries[entries.len() - 1];
    let identity_first =
        first["layer"] == 4 && first["snr_normalized"] == "inf" && first["snr_raw"] == "inf";
    let zero_last = last["layer"] == 5 && last["snr_normalized"] == 0 && last["snr_raw"] == 0;
    let text = fs::read_to_string(out.join("snr_report.json")).unwrap();
    let one_d_excluded = !text.contains("input_layernorm");
    let skipped: Vec<&str> = report["skipped"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s["name"].as_str().unwrap())
        .collect();
    let corrupted_skipped =
        skipped == [layer_tensor_name(6, group), layer_tensor_name(7, group)] && entries.len() == 6;
    Ok(outcome(
        identity_first && zero_last && one_d_excluded && corrupted_skipped,
        format!(
            "identity +inf first {identity_first}, zero 0 last {zero_last}, 1-D excluded {one_d_excluded}, NaN and truncated tensors skipped with scan completing {corrupted_skipped}"
        ),
    ))
}

// 8. batch sizes 1, 4, 16 give the same report bytes
fn batch_invariance(dir: &Path) -> Result<Outcome, String> {
    let model = write_ramp_fixture(dir);
    let mut reports = Vec::new();
    for b in ["1", "4", "16"] {
        let out = dir.join(format!("c8_{b}"));
        run_ok(&[
            "scan",
            "--model",
            s(&model),
            "--out",
            s(&out),
            "--batch-size",
            b,
        ])?;
        reports.push(fs::read(out.join("snr_report.json")).unwrap());
    }
    let same = reports.windows(2).all(|w| w[0] == w[1]);
    Ok(outcome(
        same,
        format!(
            "reports for batch sizes 1/4/16 byte-identical: {same} ({} bytes)",
            reports[0].len()
        ),
    ))
}

type Criterion = (&'static str, fn() -> Outcome);

fn in_tempdir(f: fn(&Path) -> Result<Outcome, String>) -> Outcome {
    let dir = tempfile::tempdir().expect("temp dir");
    f(dir.path()).unwrap_or_else(|e| outcome(false, e))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("eigen/singular oracle", eigen_oracle),
        ("MP edge", mp_edge),
        ("noise rejection", noise_rejection),
        ("SNR ordering", || in_tempdir(snr_ordering)),
        ("scale-invariant selection", || in_tempdir(scale_invariance)),
        ("format exactness", || in_tempdir(format_exactness)),
        ("degenerate handling", || in_tempdir(degenerate)),
        ("batch invariance", || in_tempdir(batch_invariance)),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = panic::catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "{} [{}] {name}: {} [{:.2}s]",
            if result.pass { "PASS" } else { "FAIL" },
            i + 1,
            result.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!(
        "acceptance: {} passed, {failed} failed",
        criteria.len() - failed
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
