//! Acceptance report: one PASS/FAIL line per criterion.
//!
//! Criteria are measured and reported, not asserted. The process exits
//! nonzero only if the harness itself cannot run. Paper-tier budgets are used
//! throughout, so a full run takes tens of minutes on a single core.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Instant;

use common::{coupling_density_oracle, log_h_oracle, trapezoid};
use itertools::Itertools;
use lightsbb::datasets::Distribution;
use lightsbb::experiment::{self, ExperimentConfig, ExperimentSummary, RunOptions, Tier};
use lightsbb::gmm::GmmPotential;
use lightsbb::net::TransportNet;
use lightsbb::rng::{self, streams};
use lightsbb::sinkhorn1d::{inf_convolve, sup_convolve, Grid1D, GridKind};
use lightsbb::trainer::{self, bridge_at, SbbConfig};
use lightsbb::{eval, sampler, SampleBatch, SbbModel};
use rand::Rng;
use rand_distr::StandardNormal;

struct Outcome {
    pass: bool,
    detail: String,
}

type Check = Result<Outcome, String>;

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn opts(out: &Path, seeds: Option<Vec<u64>>) -> RunOptions {
    RunOptions {
        out: Some(out.to_path_buf()),
        seeds,
        ..RunOptions::default()
    }
}

fn normal_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

fn fmt_beta(b: Option<f64>) -> String {
    b.map_or("inf".into(), |v| v.to_string())
}

/// Seed-0 W₂ per (task, β), shared between the table and ablation checks.
type SeedZero = BTreeMap<(String, String), f64>;

// Table 1: published SBB mean, std and the LightSB-M mean.
const TABLE1: [(&str, f64, f64, f64); 3] = [
    ("n_to_gauss8", 0.241, 0.083, 0.339),
    ("moons_to_gauss8", 0.201, 0.034, 0.295),
    ("n_to_moons", 0.109, 0.014, 0.201),
];

fn table1(out: &Path, cache: &mut SeedZero) -> Check {
    let mut absolute = true;
    let mut relative = true;
    let mut parts = Vec::new();
    for cfg in experiment::table_configs(Tier::Paper).map_err(err)? {
        let &(_, paper, std, _) = TABLE1.iter().find(|t| t.0 == cfg.id).ok_or("unexpected task")?;
        let sbb = experiment::run_experiment(&cfg, &opts(out, None)).map_err(err)?;
        let mut base_cfg = cfg.clone();
        base_cfg.id = format!("{}_lightsb_m", cfg.id);
        base_cfg.model.beta = None;
        let base = experiment::run_experiment(&base_cfg, &opts(out, None)).map_err(err)?;
        for (s, beta) in [(&sbb, cfg.model.beta), (&base, None)] {
            if let Some(r) = s.seeds.iter().find(|r| r.seed == 0) {
                if let Some(w) = r.w2 {
                    cache.insert((cfg.id.clone(), fmt_beta(beta)), w);
                }
            }
        }
        let (Some(m), Some(b)) = (sbb.w2_mean, base.w2_mean) else {
            return Ok(Outcome {
                pass: false,
                detail: format!("{}: no completed seeds", cfg.id),
            });
        };
        let complete = sbb.completed == 5 && base.completed == 5;
        absolute &= complete && (m - paper).abs() <= 3.0 * std;
        relative &= complete && m < b;
        parts.push(format!(
            "{} SBB {:.3}±{:.3} (band {:.3}±{:.3}) vs β=∞ {:.3}±{:.3}",
            cfg.id,
            m,
            sbb.w2_std.unwrap_or(f64::NAN),
            paper,
            3.0 * std,
            b,
            base.w2_std.unwrap_or(f64::NAN)
        ));
    }
    let mode = match (absolute, relative) {
        (true, _) => "absolute bands met",
        (false, true) => "absolute bands missed, relative ordering holds",
        (false, false) => "absolute bands and relative ordering both missed",
    };
    Ok(Outcome {
        pass: absolute || relative,
        detail: format!("{mode}; {}", parts.join("; ")),
    })
}

const SWEEP: [Option<f64>; 6] = [Some(1.0), Some(10.0), Some(50.0), Some(100.0), Some(1000.0), None];

fn table4(out: &Path, cache: &SeedZero) -> Check {
    let mut pass = true;
    let mut parts = Vec::new();
    for cfg in experiment::table_configs(Tier::Paper).map_err(err)? {
        let missing: Vec<Option<f64>> = SWEEP
            .iter()
            .copied()
            .filter(|b| !cache.contains_key(&(cfg.id.clone(), fmt_beta(*b))))
            .collect();
        let mut w2: BTreeMap<String, f64> = cache
            .iter()
            .filter(|((id, _), _)| *id == cfg.id)
            .map(|((_, b), w)| (b.clone(), *w))
            .collect();
        if !missing.is_empty() {
            let sweep = experiment::run_beta_sweep(&cfg, &missing, &opts(out, Some(vec![0]))).map_err(err)?;
            for row in &sweep.rows {
                if let Some(w) = row.w2_mean {
                    w2.insert(fmt_beta(row.beta), w);
                }
            }
        }
        let get = |b: Option<f64>| w2.get(&fmt_beta(b)).copied().unwrap_or(f64::NAN);
        let (best, best_w) = SWEEP
            .iter()
            .map(|&b| (b, get(b)))
            .filter(|(_, w)| w.is_finite())
            .min_by(|a, b| a.1.total_cmp(&b.1))
            .ok_or("no finite sweep results")?;
        let beta1_fails = !(get(Some(1.0)) <= 1.5);
        let best_ok = matches!(best, Some(b) if [10.0, 50.0, 100.0].contains(&b));
        let tails_worse = get(Some(1000.0)) > best_w && get(None) > best_w;
        pass &= beta1_fails && best_ok && tails_worse;
        let row = SWEEP.iter().map(|&b| format!("{}:{:.3}", fmt_beta(b), get(b))).join(" ");
        parts.push(format!("{} [{row}] best β={}", cfg.id, fmt_beta(best)));
    }
    Ok(Outcome {
        pass,
        detail: format!("seed 0; {}", parts.join("; ")),
    })
}

fn pilot(out: &Path) -> Check {
    let cfg = experiment::pilot_config(Tier::Paper).map_err(err)?;
    let started = Instant::now();
    let s = experiment::run_sinkhorn_experiment(&cfg, &opts(out, None)).map_err(err)?;
    let secs = started.elapsed().as_secs_f64();
    let ecdf = fs::read_to_string(s.out_dir.join("ecdf.csv")).map_err(err)?;
    let terminal: Vec<f64> = ecdf
        .lines()
        .skip(1)
        .filter(|l| l.starts_with("generated,"))
        .map(|l| l.split(',').nth(1).unwrap().parse::<f64>())
        .collect::<Result<_, _>>()
        .map_err(err)?;
    let ks = eval::ks_against_cdf(&terminal, normal_cdf).map_err(err)?;
    let pass = s.alpha0.abs() <= 0.05 && (s.sigma0 - 1.0).abs() <= 0.05 && ks < 0.05 && secs < 120.0;
    Ok(Outcome {
        pass,
        detail: format!(
            "α̂₀ = {:.3}, σ̂₀ = {:.3}, KS to N(0,1) = {ks:.3} over {} points, {secs:.1} s",
            s.alpha0,
            s.sigma0,
            terminal.len()
        ),
    })
}

fn generated(summary: &ExperimentSummary, seed: u64) -> Result<SampleBatch, String> {
    SampleBatch::read_csv(&experiment::seed_dir(&summary.out_dir, seed).join("generated.csv")).map_err(err)
}

fn fig1(out: &Path) -> Check {
    let configs = experiment::fig1_configs(Tier::Paper).map_err(err)?;
    let gauss = experiment::run_experiment(&configs[0], &opts(out, None)).map_err(err)?;
    let (mut means, mut vars) = (Vec::new(), Vec::new());
    for r in gauss.seeds.iter().filter(|r| r.w2.is_some()) {
        let g = generated(&gauss, r.seed)?;
        means.push(g.mean()[0]);
        vars.push(g.variance()[0]);
    }
    let avg = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
    let (m, v) = (avg(&means), avg(&vars));
    let gauss_ok = gauss.completed == 5 && (-0.1..=0.1).contains(&m) && (0.85..=1.15).contains(&v);

    let t2 = experiment::run_experiment(&configs[1], &opts(out, None)).map_err(err)?;
    let mut t2_ok = t2.completed == 5;
    for r in t2.seeds.iter().filter(|r| r.w2.is_some()) {
        t2_ok &= r.final_dsm_loss.is_some_and(f64::is_finite);
        let losses = fs::read_to_string(experiment::seed_dir(&t2.out_dir, r.seed).join("losses.csv")).map_err(err)?;
        t2_ok &= losses
            .lines()
            .skip(1)
            .all(|l| l.rsplit(',').next().and_then(|v| v.parse::<f64>().ok()).is_some_and(f64::is_finite));
        t2_ok &= generated(&t2, r.seed)?.as_slice().iter().all(|v| v.is_finite());
    }
    let span = |v: &[f64]| {
        let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        format!("{lo:.3}..{hi:.3}")
    };
    Ok(Outcome {
        pass: gauss_ok && t2_ok,
        detail: format!(
            "N(1,2)→N(0,1): mean {m:.3} (seeds {}), variance {v:.3} (seeds {}); δ₀→t(2): {}/5 seeds finite",
            span(&means),
            span(&vars),
            if t2_ok { t2.completed } else { 0 }
        ),
    })
}

// Property suites, re-run against independent oracles.

fn random_potential(r: &mut rng::SbbRng, j: usize, d: usize, eps: f64) -> GmmPotential {
    let logits = (0..j).map(|_| r.random_range(-2.0..2.0)).collect();
    let loc = (0..j * d).map(|_| r.random_range(-2.0..2.0)).collect();
    let s = (0..j * d).map(|_| r.random_range(-1.5..-0.1)).collect();
    GmmPotential::from_parts(d, eps, 1.0, logits, loc, s).unwrap()
}

fn drift_vs_fd() -> Result<String, String> {
    let mut r = rng::seeded(100);
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let d = [1, 2, 5][inst % 3];
        let eps = r.random_range(0.2..3.0);
        let p = random_potential(&mut r, 1 + inst % 4, d, eps);
        let t = r.random_range(0.0..0.95);
        let y: Vec<f64> = (0..d).map(|_| r.random_range(-2.0..2.0)).collect();
        let s = p.drift(t, &y).map_err(err)?;
        let lh = |y: &[f64]| log_h_oracle(p.logits(), p.locations(), p.log_diag_sigma(), eps, 1.0, t, y);
        let h = 1e-5;
        let mut e2 = 0.0;
        let mut n2 = 0.0;
        for k in 0..d {
            let (mut a, mut b) = (y.clone(), y.clone());
            a[k] += h;
            b[k] -= h;
            let fd = eps * (lh(&a) - lh(&b)) / (2.0 * h);
            e2 += (s[k] - fd).powi(2);
            n2 += fd * fd;
        }
        worst = worst.max(e2.sqrt() / n2.sqrt().max(1.0));
    }
    if worst < 1e-5 {
        Ok(format!("drift/FD worst {worst:.1e}"))
    } else {
        Err(format!("drift/FD worst {worst:.1e}"))
    }
}

fn coupling_vs_quadrature() -> Result<String, String> {
    let mut r = rng::seeded(101);
    let mut worst = 0.0f64;
    for _ in 0..10 {
        let eps = r.random_range(0.3..2.0);
        let p = random_potential(&mut r, 3, 1, eps);
        let x0 = r.random_range(-2.0..2.0);
        let c = p.conditional_coupling(&[x0]).map_err(err)?;
        let oracle = coupling_density_oracle(&p, x0);
        for i in 0..=60 {
            let x = -5.0 + 10.0 * i as f64 / 60.0;
            worst = worst.max((c.log_density(&[x]).exp() - oracle(x)).abs());
        }
        let mass = trapezoid(&|x: f64| c.log_density(&[x]).exp(), -25.0, 25.0, 50_000);
        if (mass - 1.0).abs() > 1e-6 {
            return Err(format!("coupling mass {mass}"));
        }
    }
    if worst < 1e-8 {
        Ok(format!("coupling/quadrature worst {worst:.1e}"))
    } else {
        Err(format!("coupling/quadrature worst {worst:.1e}"))
    }
}

fn bridge_variance() -> Result<String, String> {
    let (eps, horizon, n) = (0.8, 2.0, 200_000);
    let mut r = rng::seeded(102);
    let (mut s1, mut s2) = (0.0, 0.0);
    for _ in 0..n {
        let z = [r.sample::<f64, _>(StandardNormal)];
        let b = bridge_at(&[1.0], &[-3.0], horizon / 2.0, horizon, eps, &z).map_err(err)?;
        s1 += b.yt[0];
        s2 += b.yt[0] * b.yt[0];
    }
    let mean = s1 / n as f64;
    let var = s2 / n as f64 - mean * mean;
    let expected = eps * horizon / 4.0;
    let tol = 4.0 * expected * (2.0 / n as f64).sqrt();
    if (var - expected).abs() < tol {
        Ok(format!("bridge variance {var:.4} vs {expected:.4}"))
    } else {
        Err(format!("bridge variance {var:.4} vs {expected:.4}"))
    }
}

fn w2_vs_permutations() -> Result<String, String> {
    let mut r = rng::seeded(103);
    for inst in 0..50 {
        let n = 1 + inst % 8;
        let mut draw = || SampleBatch::new(2, (0..2 * n).map(|_| r.random_range(-5.0..5.0)).collect()).unwrap();
        let (a, b) = (draw(), draw());
        let brute = (0..n)
            .permutations(n)
            .map(|p| {
                p.iter()
                    .enumerate()
                    .map(|(i, &j)| a.row(i).iter().zip(b.row(j)).map(|(x, y)| (x - y) * (x - y)).sum::<f64>())
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min);
        let oracle = (brute / n as f64).sqrt();
        let w = eval::w2_exact(&a, &b).map_err(err)?.value;
        if (w - oracle).abs() > 1e-9 * (1.0 + oracle) {
            return Err(format!("instance {inst}: {w} vs {oracle}"));
        }
    }
    Ok("W₂ = brute force on 50 instances".into())
}

fn convolution_inequalities() -> Result<String, String> {
    let mut r = rng::seeded(104);
    for inst in 0..64 {
        let n = r.random_range(16..64);
        let lo = r.random_range(-4.0..0.0);
        let v: Vec<f64> = (0..n).map(|_| r.random_range(-3.0..3.0)).collect();
        let g = Grid1D::new(lo, lo + r.random_range(0.5..4.0), v, GridKind::Phi).map_err(err)?;
        let beta = r.random_range(0.1..50.0);
        let (sup, inf) = (sup_convolve(&g, beta), inf_convolve(&g, beta));
        let round = sup_convolve(&inf, beta);
        for i in 0..g.n() {
            let f = g.values()[i];
            if !(inf.values()[i] <= f && f <= sup.values()[i] && round.values()[i] <= f + 1e-12) {
                return Err(format!("grid {inst}, point {i}"));
            }
        }
    }
    Ok("𝒯β− ≤ id ≤ 𝒯β+ on 64 grids".into())
}

fn z_identity() -> Result<String, String> {
    let net = TransportNet::new(2, 8, 32, 1.0, &mut rng::seeded(0)).map_err(err)?;
    let mut r = rng::seeded(105);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..2).map(|_| 1e3 * r.sample::<f64, _>(StandardNormal)).collect();
        let z = net.z_forward(r.random(), &x).map_err(err)?;
        if z.iter().zip(&x).any(|(a, b)| a.to_bits() != b.to_bits()) {
            return Err(format!("{z:?} vs {x:?}"));
        }
    }
    Ok("fresh 𝒵 is bit-exact identity".into())
}

fn smoke_gauss() -> Result<(ExperimentConfig, lightsbb::experiment::SeedData), String> {
    let cfg = ExperimentConfig::parse(experiment::presets::SMOKE_GAUSS_TO_GAUSS).map_err(err)?;
    let data = cfg.data_for_seed(0).map_err(err)?;
    Ok((cfg, data))
}

fn training_determinism() -> Result<String, String> {
    let (cfg, data) = smoke_gauss()?;
    let cfg = SbbConfig {
        n_epoch: 200,
        outer_iterations: 2,
        ..cfg.model
    };
    let run = || trainer::train_with(&cfg, &data.train_source, &data.train_target, &mut |_| Ok(()));
    let (a, ra) = run().map_err(err)?;
    let (b, rb) = run().map_err(err)?;
    let same = serde_json::to_string(&a).map_err(err)? == serde_json::to_string(&b).map_err(err)?
        && ra.all_losses().eq(rb.all_losses());
    if same {
        Ok("training repeats bit for bit".into())
    } else {
        Err("two seeded training runs differ".into())
    }
}

fn sde_vs_simulation_free() -> Result<String, String> {
    let (cfg, data) = smoke_gauss()?;
    let (model, _) = trainer::train_with(&cfg.model, &data.train_source, &data.train_target, &mut |_| Ok(())).map_err(err)?;
    let src = Distribution::Gaussian1d { mean: 1.0, var: 2.0 }
        .sample(10_000, &mut rng::seeded(106))
        .map_err(err)?;
    let inf = sampler::infer_detailed(&model, &src, &mut rng::seeded(107)).map_err(err)?;
    let paths = sampler::simulate_batch(&model, &inf.y0, 100, 108).map_err(err)?;
    let sde: Vec<f64> = paths.iter().map(|p| p.y_last()[0]).collect();
    let ks = eval::ecdf_distance(&sde, inf.y_terminal.as_slice()).map_err(err)?;
    if ks < 0.05 {
        Ok(format!("SDE/simulation-free KS {ks:.3}"))
    } else {
        Err(format!("SDE/simulation-free KS {ks:.3}"))
    }
}

fn property_suites() -> Check {
    let checks: [fn() -> Result<String, String>; 8] = [
        drift_vs_fd,
        coupling_vs_quadrature,
        bridge_variance,
        w2_vs_permutations,
        convolution_inequalities,
        z_identity,
        training_determinism,
        sde_vs_simulation_free,
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for c in checks {
        match c() {
            Ok(s) => parts.push(s),
            Err(e) => {
                pass = false;
                parts.push(format!("FAILED {e}"));
            }
        }
    }
    Ok(Outcome {
        pass,
        detail: parts.join("; "),
    })
}

fn bits(v: &[f64]) -> Vec<u64> {
    v.iter().map(|x| x.to_bits()).collect()
}

/// β = ∞ through the experiment runner against the standalone bridge-matching trainer.
fn beta_infinity(out: &Path) -> Check {
    let mut parts = Vec::new();
    let mut pass = true;
    for text in [experiment::presets::SMOKE_GAUSS_TO_GAUSS, experiment::presets::SMOKE_N_TO_GAUSS8] {
        let mut cfg = ExperimentConfig::parse(text).map_err(err)?;
        cfg.id = format!("{}_limit", cfg.id);
        cfg.model.beta = None;
        let seed = 0;
        let summary = experiment::run_experiment(&cfg, &opts(out, Some(vec![seed]))).map_err(err)?;
        let dir = experiment::seed_dir(&summary.out_dir, seed);
        let model = SbbModel::load(&dir.join("model.json")).map_err(err)?;
        let pipeline = generated(&summary, seed)?;

        let data = cfg.data_for_seed(seed).map_err(err)?;
        let direct_cfg = SbbConfig { seed, ..cfg.model.clone() };
        let (pot, _) = trainer::train_lightsb_m(&direct_cfg, &data.train_source, &data.train_target).map_err(err)?;
        let direct = sampler::lightsb_infer(&pot, &data.eval_source, &mut rng::stream(seed, streams::INFERENCE)).map_err(err)?;

        let same_params = serde_json::to_string(&model.potential).map_err(err)? == serde_json::to_string(&pot).map_err(err)?;
        let same_samples = bits(pipeline.as_slice()) == bits(direct.as_slice());
        let no_map = model.net.is_none();
        pass &= same_params && same_samples && no_map;
        parts.push(format!(
            "{}: parameters {}, {} samples {}",
            cfg.id,
            if same_params { "identical" } else { "differ" },
            direct.len(),
            if same_samples { "bit-identical" } else { "differ" }
        ));
    }
    Ok(Outcome {
        pass,
        detail: parts.join("; "),
    })
}

/// `cargo test --test acceptance -- 3 5` runs only criteria 3 and 5.
fn main() {
    let only: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let dir = tempfile::tempdir().expect("temporary directory");
    let out = dir.path();
    let mut cache = SeedZero::new();
    let mut lines = Vec::new();
    let mut run = |n: usize, title: &str, f: &mut dyn FnMut() -> Check| {
        if !only.is_empty() && !only.contains(&n) {
            return;
        }
        let started = Instant::now();
        let outcome = f();
        let secs = started.elapsed().as_secs_f64();
        let line = match outcome {
            Ok(o) => format!("criterion {n} ({title}): {} [{secs:.0} s] {}", if o.pass { "PASS" } else { "FAIL" }, o.detail),
            Err(e) => format!("criterion {n} ({title}): FAIL [{secs:.0} s] error: {e}"),
        };
        println!("{line}");
        lines.push(line);
    };
    run(1, "2D benchmark W₂", &mut || table1(out, &mut cache));
    run(2, "β ablation ordering", &mut || table4(out, &cache));
    run(3, "grid solver pilot", &mut || pilot(out));
    run(4, "1D toys", &mut || fig1(out));
    run(5, "property suites", &mut property_suites);
    run(6, "β → ∞ limit", &mut || beta_infinity(out));
    println!();
    println!("acceptance summary");
    for l in &lines {
        println!("  {}", l.split(']').next().unwrap_or(l).to_string() + "]");
    }
}
