//! Acceptance run: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails. The experiment criteria drive the `dualnet` binary with
//! the shipped configs, exactly as a user would.

#[path = "../../core/tests/support/mod.rs"]
mod support;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::{Duration, Instant};

use dualnet_core::bnn::kl_gaussian;
use dualnet_core::dual::recalibrate;
use dualnet_core::rng::Stream;
use dualnet_core::{PredictiveBundle, Rng, Split};
use dualnet_harness::report::GroupSeparation;
use dualnet_harness::ExperimentReport;
use support::gradcheck::TOLERANCE;

const SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    detail: String,
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

/// Runs one CLI command and returns its wall time.
fn dualnet(command: &str, config: &str, seed: u64, out: &Path) -> Result<Duration, String> {
    let start = Instant::now();
    let o = Command::new(env!("CARGO_BIN_EXE_dualnet"))
        .arg(command)
        .arg("--config")
        .arg(configs().join(config))
        .args(["--seed", &seed.to_string()])
        .arg("--out")
        .arg(out)
        .output()
        .map_err(|e| e.to_string())?;
    if !o.status.success() {
        return Err(format!(
            "{command} {config} seed {seed}: {}",
            String::from_utf8_lossy(&o.stderr).trim()
        ));
    }
    Ok(start.elapsed())
}

fn fmt(v: Option<f64>) -> String {
    v.map_or("undefined".into(), |v| format!("{v:.3}"))
}

fn gradients() -> Outcome {
    let start = Instant::now();
    let families = support::gradient_suite::all();
    let elapsed = start.elapsed();
    let mut worst = 0.0_f64;
    let mut failures = Vec::new();
    for (_, outcomes) in &families {
        for o in outcomes {
            worst = worst.max(o.error);
            if !(o.error < TOLERANCE) {
                failures.push(format!("{} #{}: {:e}", o.name, o.config, o.error));
            }
        }
    }
    let bnn_configs = families
        .iter()
        .find(|(name, _)| *name == "BNN reparameterized forward")
        .map_or(0, |(_, o)| o.len());
    let pass = failures.is_empty() && bnn_configs >= 20 && elapsed < Duration::from_secs(10);
    Outcome {
        id: 1,
        title: "autodiff matches central differences",
        pass,
        detail: format!(
            "worst relative error {worst:.2e} (tol {TOLERANCE:e}), {bnn_configs} BNN configurations, {:.1} s{}",
            elapsed.as_secs_f64(),
            if failures.is_empty() { String::new() } else { format!("; failing: {}", failures.join(", ")) }
        ),
    }
}

fn kl() -> Outcome {
    let examples = [
        (kl_gaussian(&[0.0], &[1.0], 1.0), 0.0),
        (kl_gaussian(&[1.0], &[1.0], 1.0), 0.5),
        // ln(1/2) + 4/2 − 1/2
        (kl_gaussian(&[0.0], &[2.0], 1.0), 1.5 - 2f64.ln()),
    ];
    let mut worst = 0.0_f64;
    let mut ok = true;
    for (got, want) in &examples {
        match got {
            Ok(v) => worst = worst.max((v - want).abs()),
            Err(_) => ok = false,
        }
    }
    let mut rng = Rng::new(2).substream(Stream::Test, 0);
    let mut negative = 0;
    let draws = 10_000;
    for _ in 0..draws {
        let n = 1 + (rng.uniform() * 8.0) as usize;
        let mu: Vec<f64> = (0..n).map(|_| rng.uniform_range(-5.0, 5.0)).collect();
        let sigma: Vec<f64> = (0..n).map(|_| rng.uniform_range(1e-3, 10.0)).collect();
        let prior = rng.uniform_range(1e-3, 10.0);
        match kl_gaussian(&mu, &sigma, prior) {
            Ok(v) if v >= 0.0 => {}
            _ => negative += 1,
        }
    }
    Outcome {
        id: 2,
        title: "KL closed form",
        pass: ok && worst <= 1e-10 && negative == 0,
        detail: format!("max example error {worst:.1e}; {negative} of {draws} random draws negative"),
    }
}

struct DefaultRun {
    seed: u64,
    report: Result<ExperimentReport, String>,
    seconds: f64,
}

fn default_runs(root: &Path) -> Vec<DefaultRun> {
    SEEDS
        .iter()
        .map(|&seed| {
            let out = root.join(format!("default-{seed}"));
            let run = dualnet("run-all", "default.toml", seed, &out)
                .and_then(|t| {
                    let r = ExperimentReport::load(out.join("eval/report.json")).map_err(|e| e.to_string())?;
                    Ok((t, r))
                });
            match run {
                Ok((t, r)) => DefaultRun {
                    seed,
                    report: Ok(r),
                    seconds: t.as_secs_f64(),
                },
                Err(e) => DefaultRun {
                    seed,
                    report: Err(e),
                    seconds: 0.0,
                },
            }
        })
        .collect()
}

fn ood_separation(runs: &[DefaultRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for run in runs {
        match &run.report {
            Ok(r) => {
                let id = r.split(Split::TestId).and_then(|m| m.sigma1.mean);
                let ood = r.split(Split::TestOod).and_then(|m| m.sigma1.mean);
                let ratio = id.zip(ood).map(|(i, o)| o / i);
                pass &= ratio.is_some_and(|q| q > 1.5) && run.seconds <= 180.0;
                parts.push(format!("seed {}: {} ({:.0} s)", run.seed, fmt(ratio), run.seconds));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("seed {}: {e}", run.seed));
            }
        }
    }
    Outcome {
        id: 3,
        title: "mean sigma1 OOD / ID > 1.5",
        pass,
        detail: parts.join("; "),
    }
}

fn error_correlation(runs: &[DefaultRun]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for run in runs {
        match &run.report {
            Ok(r) => {
                let m = r.split(Split::TestId);
                let s2 = m.and_then(|m| m.sigma2.spearman_abs_error);
                let s1 = m.and_then(|m| m.sigma1.spearman_abs_error);
                pass &= matches!((s2, s1), (Some(a), Some(b)) if a >= 0.3 && a > b);
                parts.push(format!("seed {}: sigma2 {} vs sigma1 {}", run.seed, fmt(s2), fmt(s1)));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("seed {}: {e}", run.seed));
            }
        }
    }
    Outcome {
        id: 4,
        title: "ID Spearman(sigma2, |err|) >= 0.3 and > Spearman(sigma1, |err|)",
        pass,
        detail: parts.join("; "),
    }
}

fn heteroscedastic(root: &Path) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in SEEDS {
        let out = root.join(format!("hetero-{seed}"));
        let sep = dualnet("hetero", "hetero.toml", seed, &out).and_then(|_| {
            let text = fs::read_to_string(out.join("hetero/separation.json")).map_err(|e| e.to_string())?;
            serde_json::from_str::<GroupSeparation>(&text).map_err(|e| e.to_string())
        });
        match sep {
            Ok(s) => {
                pass &= s.sigma2_ratio.is_some_and(|r| r > 2.0)
                    && s.sigma1_ratio.is_some_and(|r| (0.5..=2.0).contains(&r));
                parts.push(format!(
                    "seed {seed}: sigma2 ratio {}, sigma1 ratio {}",
                    fmt(s.sigma2_ratio),
                    fmt(s.sigma1_ratio)
                ));
            }
            Err(e) => {
                pass = false;
                parts.push(format!("seed {seed}: {e}"));
            }
        }
    }
    Outcome {
        id: 5,
        title: "step noise: median sigma2 ratio > 2, sigma1 ratio in [0.5, 2]",
        pass,
        detail: parts.join("; "),
    }
}

fn noise_recovery(root: &Path) -> Outcome {
    let out = root.join("homoscedastic");
    let result = dualnet("run-all", "homoscedastic.toml", 0, &out).and_then(|_| {
        ExperimentReport::load(out.join("eval/report.json")).map_err(|e| e.to_string())
    });
    let (pass, detail) = match result {
        Ok(r) => {
            let m = r.split(Split::TestId);
            let s2 = m.and_then(|m| m.sigma2.mean);
            (
                s2.is_some_and(|v| (1.5..=2.5).contains(&v)),
                format!(
                    "mean sigma2 on ID test {} (true 2), clamp rate {}",
                    fmt(s2),
                    fmt(m.and_then(|m| m.clamp_rate))
                ),
            )
        }
        Err(e) => (false, e),
    };
    Outcome {
        id: 6,
        title: "constant noise std 2 recovered within [1.5, 2.5]",
        pass,
        detail,
    }
}

fn variance_oracle() -> Outcome {
    let fit = support::variance_field::decile_fit();
    let worst = fit
        .iter()
        .map(|(est, truth)| (est - truth).abs() / truth)
        .fold(0.0, f64::max);
    Outcome {
        id: 7,
        title: "variance net recovers 1 + x1^2 per decile within 20%",
        pass: fit.len() == 10 && worst < 0.2,
        detail: format!("worst decile relative error {:.1}%", 100.0 * worst),
    }
}

fn decomposition() -> Outcome {
    let mut rng = Rng::new(8).substream(Stream::Test, 0);
    let n = 10_000;
    let mut bad = 0;
    let mut clamped = 0;
    let mut worst = 0.0_f64;
    for _ in 0..n {
        let scale = 10f64.powf(rng.uniform_range(-6.0, 6.0));
        let total = scale * rng.uniform();
        let epistemic = scale * rng.uniform();
        let b = match PredictiveBundle::from_parts(0.0, epistemic, total) {
            Ok(b) => b,
            Err(_) => {
                bad += 1;
                continue;
            }
        };
        if b.clamped != (total < epistemic) {
            bad += 1;
        }
        if b.clamped {
            clamped += 1;
            if b.aleatoric_var != 0.0 {
                bad += 1;
            }
        } else {
            let rel = (b.epistemic_var + b.aleatoric_var - total).abs() / total.max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
        }
    }
    Outcome {
        id: 8,
        title: "sigma1^2 + sigma2^2 = sigma_tot^2, clamp flag exact",
        pass: bad == 0 && worst <= 1e-12,
        detail: format!("{n} bundles, {clamped} clamped, worst relative error {worst:.1e}, {bad} violations"),
    }
}

fn simulated(n: usize, variance_factor: f64) -> (Vec<PredictiveBundle>, Vec<f64>) {
    let mut rng = Rng::new(123).substream(Stream::Test, 9);
    let mut bundles = Vec::with_capacity(n);
    let mut truths = Vec::with_capacity(n);
    for _ in 0..n {
        let mean = 3.0 * rng.standard_normal();
        let var = rng.uniform_range(0.25, 4.0);
        truths.push(mean + var.sqrt() * rng.standard_normal());
        bundles.push(PredictiveBundle::from_parts(mean, 0.0, variance_factor * var).expect("valid bundle"));
    }
    (bundles, truths)
}

fn calibration() -> Outcome {
    let (b, t) = simulated(100_000, 1.0);
    let calibrated = recalibrate(&b, &t).map(|m| m.max_deviation_from_identity());
    let (b, t) = simulated(100_000, 2.0);
    let wide = recalibrate(&b, &t).map(|m| (m.apply(0.9), m.apply(0.1)));
    let (pass, detail) = match (calibrated, wide) {
        (Ok(dev), Ok((hi, lo))) => (
            dev < 0.01 && hi > 0.9 && lo < 0.1,
            format!("calibrated max deviation {dev:.4}; doubled variance covers {hi:.3} at 0.9 and {lo:.3} at 0.1"),
        ),
        (a, b) => (false, format!("{:?} / {:?}", a.err(), b.err())),
    };
    Outcome {
        id: 9,
        title: "calibration oracle",
        pass,
        detail,
    }
}

fn artifacts(root: &Path) -> Vec<PathBuf> {
    let mut files = vec![root.join("eval/report.json"), root.join("eval/predictions.csv")];
    if let Ok(dir) = fs::read_dir(root.join("plots")) {
        let mut svgs: Vec<PathBuf> = dir.filter_map(|e| e.ok().map(|e| e.path())).collect();
        svgs.sort();
        files.extend(svgs);
    }
    files
}

fn reproducibility(root: &Path) -> Outcome {
    let first = root.join("default-0");
    let second = root.join("default-0-again");
    let (pass, detail) = match dualnet("run-all", "default.toml", 0, &second) {
        Ok(_) => {
            let a = artifacts(&first);
            let b = artifacts(&second);
            let svgs = a.iter().filter(|p| p.extension().is_some_and(|e| e == "svg")).count();
            let differing: Vec<String> = a
                .iter()
                .zip(&b)
                .filter(|(x, y)| fs::read(x).ok().is_none() || fs::read(x).ok() != fs::read(y).ok())
                .map(|(x, _)| x.file_name().unwrap().to_string_lossy().into_owned())
                .collect();
            (
                a.len() == b.len() && svgs > 0 && differing.is_empty(),
                format!(
                    "{} files compared ({svgs} SVGs){}",
                    a.len(),
                    if differing.is_empty() { String::new() } else { format!(", differing: {}", differing.join(", ")) }
                ),
            )
        }
        Err(e) => (false, e),
    };
    Outcome {
        id: 10,
        title: "generate -> train -> evaluate -> plot is byte-reproducible",
        pass,
        detail,
    }
}

fn report(o: &Outcome) {
    println!(
        "criterion {:>2} {}: {} ({})",
        o.id,
        if o.pass { "PASS" } else { "FAIL" },
        o.title,
        o.detail
    );
}

fn main() -> ExitCode {
    let dir = tempfile::tempdir().expect("temp dir");
    let root = dir.path();
    let mut outcomes = Vec::new();
    let mut run = |o: Outcome| {
        report(&o);
        outcomes.push(o.pass);
    };
    run(gradients());
    run(kl());
    let runs = default_runs(root);
    run(ood_separation(&runs));
    run(error_correlation(&runs));
    run(heteroscedastic(root));
    run(noise_recovery(root));
    run(variance_oracle());
    run(decomposition());
    run(calibration());
    run(reproducibility(root));
    let failed = outcomes.iter().filter(|p| !**p).count();
    println!("acceptance: {} passed, {failed} failed", outcomes.len() - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
