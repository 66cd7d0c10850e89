//! Acceptance suite. Every criterion prints one PASS or FAIL line; the
//! process exits nonzero if any criterion fails.
//!
//! Expected values are recomputed here from first principles (brute-force
//! pair counting, an independent forward pass for finite differences, the
//! closed-form Gaussian posterior) rather than taken from the library.

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use virtdoc::anamnesis::{decide, AdjustmentConfig, Decision};
use virtdoc::calibration::{calibrate_guess, expected_calibration_error, fit_guess};
use virtdoc::dataset::{fit_normalization, generate_synthetic_cohort, split, FeatureSet, SplitSpec};
use virtdoc::evaluation::{auc, auc_distribution, auc_t_test, delong_test, permutation_test, sweep, Sided};
use virtdoc::neuralnet::{init_network, Network, NetworkConfig};
use virtdoc::pipeline::fit_network;
use virtdoc::sensors::{bmi, height_from_distance};

type Outcome = Result<String, String>;
type Criterion = fn() -> Outcome;

fn ensure(cond: bool, msg: impl Into<String>) -> Result<(), String> {
    if cond { Ok(()) } else { Err(msg.into()) }
}

fn formula_exactness() -> Outcome {
    let h = height_from_distance(25.2).map_err(|e| e.to_string())?;
    ensure((h - 1.748).abs() < 1e-12, format!("height {h}"))?;
    let b = bmi(86.2, 1.748).map_err(|e| e.to_string())?;
    ensure((b - 28.2).abs() <= 0.05, format!("bmi {b}"))?;

    let cohort = generate_synthetic_cohort(4814, 11, true).unwrap();
    let (train, _) = split(&cohort, &SplitSpec::with_seed(3)).unwrap();
    let features = FeatureSet::WithHba1c.normalized_features();
    let stats = fit_normalization(&train, features).unwrap();
    let mut worst = 0.0_f64;
    for &f in features {
        let z: Vec<f64> = train.records.iter().map(|r| stats.get(f).unwrap().normalize(r.feature(f).unwrap())).collect();
        let n = z.len() as f64;
        let mean = z.iter().sum::<f64>() / n;
        let sd = (z.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        worst = worst.max(mean.abs()).max((sd - 1.0).abs());
    }
    ensure(worst < 1e-9, format!("normalized moments off by {worst:e}"))?;
    Ok(format!("h(25.2)={h}, bmi={b:.4}, max moment error {worst:.1e}"))
}

/// Loss of an independently written forward pass: tanh hidden layers,
/// sigmoid output, cross-entropy from the probability.
fn oracle_loss(net: &Network, x: &[f64], label: bool) -> f64 {
    let mut a = x.to_vec();
    let last = net.layers.len() - 1;
    let mut z_out = 0.0;
    for (i, layer) in net.layers.iter().enumerate() {
        let z: Vec<f64> =
            layer.weights.iter().zip(&layer.bias).map(|(row, b)| row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>() + b).collect();
        if i == last {
            z_out = z[0];
        } else {
            a = z.iter().map(|v| v.tanh()).collect();
        }
    }
    let p = 1.0 / (1.0 + (-z_out).exp());
    if label { -p.ln() } else { -(1.0 - p).ln() }
}

fn params_mut(net: &mut Network) -> Vec<&mut f64> {
    let mut out = Vec::new();
    for layer in &mut net.layers {
        let (weights, bias) = (&mut layer.weights, &mut layer.bias);
        out.extend(weights.iter_mut().flatten());
        out.extend(bias.iter_mut());
    }
    out
}

fn gradient_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst = 0.0_f64;
    for trial in 0..100 {
        let depth = rng.random_range(1..=3);
        let hidden: Vec<usize> = (0..depth).map(|_| rng.random_range(1..=8)).collect();
        let input_dim = rng.random_range(1..=4);
        let mut net = init_network(&NetworkConfig::new(input_dim, hidden).with_seed(trial)).unwrap();
        for p in params_mut(&mut net) {
            *p += rng.random_range(-0.5..0.5);
        }
        let x: Vec<f64> = (0..input_dim).map(|_| rng.random_range(-2.0..2.0)).collect();
        let label = rng.random_bool(0.5);
        let analytic = net.gradient(&x, label).unwrap();
        let count = analytic.len();
        for (i, &a) in analytic.iter().enumerate().take(count) {
            let step = 1e-5;
            let mut plus = net.clone();
            *params_mut(&mut plus)[i] += step;
            let mut minus = net.clone();
            *params_mut(&mut minus)[i] -= step;
            let numeric = (oracle_loss(&plus, &x, label) - oracle_loss(&minus, &x, label)) / (2.0 * step);
            let rel = (a - numeric).abs() / (a.abs() + numeric.abs()).max(1e-8);
            worst = worst.max(rel);
        }
    }
    ensure(worst < 1e-4, format!("max relative error {worst:e}"))?;
    Ok(format!("max relative error {worst:.2e} over 100 nets"))
}

fn auc_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(200);
    let mut instances = 0;
    while instances < 200 {
        let n = rng.random_range(2..=50);
        // Few distinct values so ties are common.
        let scores: Vec<f64> = (0..n).map(|_| f64::from(rng.random_range(0..8u8)) / 4.0).collect();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.4)).collect();
        let pos = labels.iter().filter(|&&l| l).count();
        if pos == 0 || pos == n {
            continue;
        }
        let mut wins = 0.0;
        for (i, &si) in scores.iter().enumerate() {
            for (j, &sj) in scores.iter().enumerate() {
                if labels[i] && !labels[j] {
                    wins += if si > sj { 1.0 } else if si == sj { 0.5 } else { 0.0 };
                }
            }
        }
        let brute = wins / (pos * (n - pos)) as f64;
        let fast = auc(&scores, &labels).unwrap();
        ensure(fast == brute, format!("instance {instances}: {fast} != {brute}"))?;
        instances += 1;
    }
    Ok("200 instances equal to brute-force pair counting".into())
}

fn delong_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(300);
    let noise = Normal::new(0.0, 1.0).unwrap();
    let labels: Vec<bool> = (0..2000).map(|_| rng.random_bool(0.5)).collect();
    let signal: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let shared: Vec<f64> = (0..2000).map(|_| noise.sample(&mut rng)).collect();
    let a: Vec<f64> = signal.iter().zip(&shared).map(|(s, e)| 1.2 * s + e).collect();
    let b: Vec<f64> = signal.iter().zip(&shared).map(|(s, e)| 0.8 * s + e + 0.5 * noise.sample(&mut rng)).collect();

    let own = delong_test(&a, &a, &labels, Sided::Two).unwrap();
    ensure(own.z == 0.0 && own.p_value == 1.0, format!("self comparison z={} p={}", own.z, own.p_value))?;
    let cmp = delong_test(&a, &b, &labels, Sided::One).unwrap();
    ensure(cmp.auc_a > cmp.auc_b && cmp.p_value < 0.05, format!("{cmp:?}"))?;
    Ok(format!("self z=0 p=1; AUC {:.3} vs {:.3}, one-sided p={:.2e}", cmp.auc_a, cmp.auc_b, cmp.p_value))
}

fn permutation_and_t_test() -> Outcome {
    let cfg = NetworkConfig::new(3, vec![5]);
    let trial = |seed: u64, shuffle: bool| -> (f64, f64) {
        let cohort = generate_synthetic_cohort(1000, seed, false).unwrap();
        let cohort = if shuffle { cohort.with_shuffled_labels(seed + 1) } else { cohort };
        let fitted = fit_network(&cohort, FeatureSet::Basic, &cfg, seed).unwrap();
        let scores = fitted.model.predict_scores(&fitted.test).unwrap();
        let perm = permutation_test(&scores, &fitted.test.labels(), 199, seed).unwrap();
        let aucs = auc_distribution(&cfg, &cohort, FeatureSet::Basic, 5, seed).unwrap();
        (perm.p_value, auc_t_test(&aucs, 0.5).unwrap().p_value)
    };
    let null: Vec<(f64, f64)> = (0..100).map(|s| trial(1000 + s, true)).collect();
    let perm_ok = null.iter().filter(|(p, _)| *p > 0.05).count();
    let t_ok = null.iter().filter(|(_, p)| *p > 0.05).count();
    let (perm_inf, t_inf) = trial(7, false);
    let detail = format!(
        "null: permutation p>0.05 in {perm_ok}/100, t-test p>0.05 in {t_ok}/100; informative: p={perm_inf:.4}, {t_inf:.2e}"
    );
    ensure(perm_ok >= 90 && t_ok >= 90 && perm_inf <= 0.05 && t_inf <= 0.05, detail.clone())?;
    Ok(detail)
}

fn hba1c_ordering() -> Outcome {
    let cohort = generate_synthetic_cohort(4814, 2024, true).unwrap();
    let basic = auc_distribution(&NetworkConfig::new(3, vec![5]), &cohort, FeatureSet::Basic, 5, 77).unwrap();
    let full = auc_distribution(&NetworkConfig::new(4, vec![5]), &cohort, FeatureSet::WithHba1c, 5, 77).unwrap();
    let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (mb, mf) = (mean(&basic), mean(&full));
    let t = auc_t_test(&basic, 0.5).unwrap();
    let detail = format!("mean AUC basic {mb:.3}, with HbA1c {mf:.3}, gap {:.3}; basic vs 0.5 p={:.1e}", mf - mb, t.p_value);
    ensure(mf - mb >= 0.05 && t.p_value < 0.01, detail.clone())?;
    Ok(detail)
}

fn capacity_convergence() -> Outcome {
    let cohort = generate_synthetic_cohort(4814, 4, false).unwrap();
    let widths: Vec<usize> = (1..=20).collect();
    let result = sweep(&cohort, FeatureSet::Basic, &NetworkConfig::new(3, vec![1]), &[1, 3], &widths, 5, 5).unwrap();
    let at20 = result.at(1, 20).unwrap().mean_auc;
    let best1 = result.best(1).unwrap();
    let best3 = result.best(3).unwrap();
    let gap = best1.mean_auc - at20;
    let depth_gap = (best3.mean_auc - best1.mean_auc).abs();
    let detail = format!(
        "depth 1: best {:.4} (width {}), width 20 {at20:.4}, gap {gap:.4}; best depth 3 {:.4}, |diff| {depth_gap:.4}",
        best1.mean_auc, best1.width, best3.mean_auc
    );
    ensure(gap <= 0.05 && depth_gap <= 0.03, detail.clone())?;
    Ok(detail)
}

fn calibration_improvement() -> Outcome {
    // Scores ~ N(-1, 1) for class 0 and N(1, 1) for class 1 with equal
    // priors have posterior sigmoid(2s). The raw model reports sigmoid(s).
    let sample = |seed: u64, n: usize| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let unit = Normal::new(0.0, 1.0).unwrap();
        let labels: Vec<bool> = (0..n).map(|_| rng.random_bool(0.5)).collect();
        let scores: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { -1.0 } + unit.sample(&mut rng)).collect();
        (scores, labels)
    };
    let sigmoid = |x: f64| 1.0 / (1.0 + (-x).exp());
    let (fit_s, fit_l) = sample(800, 2000);
    let (test_s, test_l) = sample(801, 2000);
    let model = fit_guess(&fit_s, &fit_l).unwrap();
    let raw: Vec<f64> = test_s.iter().map(|&s| sigmoid(s)).collect();
    let calibrated: Vec<f64> = test_s.iter().map(|&s| calibrate_guess(&model, s).value()).collect();
    let raw_ece = expected_calibration_error(&raw, &test_l, 10).unwrap();
    let cal_ece = expected_calibration_error(&calibrated, &test_l, 10).unwrap();
    let mae = test_s.iter().zip(&calibrated).map(|(&s, &c)| (c - sigmoid(2.0 * s)).abs()).sum::<f64>() / test_s.len() as f64;
    let detail = format!("ECE raw {raw_ece:.4} -> GUESS {cal_ece:.4}; MAE vs closed form {mae:.4}");
    ensure(cal_ece <= raw_ece && mae < 0.02, detail.clone())?;
    Ok(detail)
}

fn workflow_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let model = common::write_artifact(dir.path(), FeatureSet::Basic, 9);
    let script = common::fixture("canonical_script.json");
    let args = ["simulate-session", "--model", model.to_str().unwrap(), "--script", script.to_str().unwrap()];
    let first = common::run(&args);
    ensure(first.code == 0, format!("exit {}: {}", first.code, first.stderr))?;
    for i in 1..10 {
        let again = common::run(&args);
        ensure(again.stdout == first.stdout, format!("run {i} differs"))?;
    }
    let report: serde_json::Value = serde_json::from_str(&first.stdout).unwrap();
    let cfg = AdjustmentConfig::default();
    ensure(decide(0.5, &cfg) == Decision::RecommendHbA1cTest, "decide(0.5)")?;
    ensure(decide(0.1, &cfg) == Decision::LowRisk, "decide(0.1)")?;
    ensure(decide(0.9, &cfg) == Decision::HighRiskSeePhysician, "decide(0.9)")?;
    Ok(format!("10 identical reports (decision {}); decide thresholds hold", report["decision"]))
}

fn crash_recovery() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let model = common::write_artifact(dir.path(), FeatureSet::Basic, 10);
    let data = dir.path().join("journal");
    let server = common::Server::start(&model, &data);
    let create = |s: &common::Server| {
        let (code, body) = s.request("POST", "/api/sessions", None);
        assert_eq!(code, 201, "{body}");
        serde_json::from_str::<serde_json::Value>(&body).unwrap()["id"].as_str().unwrap().to_string()
    };
    let inputs = [
        r#"{"utterance":"hi"}"#,
        r#"{"utterance":"female"}"#,
        r#"{"utterance":"banana"}"#,
        r#"{"utterance":"58"}"#,
        r#"{"frame":"W:36.3:36.3"}"#,
        r#"{"frame":"U:2209.9125364431484"}"#,
        r#"{"utterance":"no"}"#,
    ];
    // Sessions stopped at every prefix of the script, plus a finished one.
    let mut ids = Vec::new();
    for k in 0..=inputs.len() {
        let id = create(&server);
        for body in &inputs[..k] {
            let (code, resp) = server.request("POST", &format!("/api/sessions/{id}/input"), Some(body));
            assert_eq!(code, 200, "{resp}");
        }
        ids.push(id);
    }
    let done = create(&server);
    for body in inputs.iter().chain([r#"{"utterance":"2"}"#, r#"{"utterance":"1"}"#].iter()) {
        server.request("POST", &format!("/api/sessions/{done}/input"), Some(body));
    }
    ids.push(done.clone());
    let before: Vec<String> = ids.iter().map(|id| server.request("GET", &format!("/api/sessions/{id}"), None).1).collect();
    let report_before = server.request("GET", &format!("/api/sessions/{done}/report"), None).1;
    server.kill();

    let restarted = common::Server::start(&model, &data);
    for (id, old) in ids.iter().zip(&before) {
        let (code, now) = restarted.request("GET", &format!("/api/sessions/{id}"), None);
        ensure(code == 200 && &now == old, format!("session {id} differs after restart"))?;
    }
    let report_after = restarted.request("GET", &format!("/api/sessions/{done}/report"), None).1;
    ensure(report_after == report_before, "report differs after restart")?;
    Ok(format!("{} sessions identical after SIGKILL and restart", ids.len()))
}

fn main() {
    let criteria: [(&str, Criterion); 10] = [
        ("formula exactness", formula_exactness),
        ("gradient oracle", gradient_oracle),
        ("AUC oracle", auc_oracle),
        ("DeLong sanity", delong_sanity),
        ("permutation/t-test null behavior", permutation_and_t_test),
        ("HbA1c ordering", hba1c_ordering),
        ("capacity sweep convergence", capacity_convergence),
        ("calibration improvement", calibration_improvement),
        ("workflow determinism", workflow_determinism),
        ("service crash recovery", crash_recovery),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|panic| {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS  {name} ({secs:.1}s): {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name} ({secs:.1}s): {detail}");
            }
        }
    }
    println!("acceptance: {failed} criteria failed");
    if failed > 0 {
        std::process::exit(1);
    }
}
