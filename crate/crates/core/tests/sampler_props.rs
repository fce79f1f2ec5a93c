use std::path::PathBuf;
use std::sync::OnceLock;

use lightsbb::experiment::ExperimentConfig;
use lightsbb::model::SbbModel;
use lightsbb::sampler::{self, Trajectory};
use lightsbb::{eval, rng, trainer, SampleBatch};
use rand::Rng;
use rand_distr::StandardNormal;

fn config_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(rel)
}

/// Gaussian to Gaussian model trained once with the smoke settings.
fn model() -> &'static SbbModel {
    static MODEL: OnceLock<SbbModel> = OnceLock::new();
    MODEL.get_or_init(|| {
        let cfg = ExperimentConfig::load(&config_path("smoke/gauss_to_gauss.toml")).unwrap();
        let data = cfg.data_for_seed(0).unwrap();
        let (m, _) = trainer::train_with(&cfg.model, &data.train_source, &data.train_target, &mut |_| Ok(())).unwrap();
        m
    })
}

fn source(n: usize, seed: u64) -> SampleBatch {
    let mut r = rng::seeded(seed);
    SampleBatch::new(1, (0..n).map(|_| 1.0 + 2f64.sqrt() * r.sample::<f64, _>(StandardNormal)).collect()).unwrap()
}

#[test]
fn sde_route_matches_the_simulation_free_route() {
    let m = model();
    let x0 = source(10_000, 1);
    let inf = sampler::infer_detailed(m, &x0, &mut rng::seeded(2)).unwrap();
    let paths = sampler::simulate_batch(m, &inf.y0, sampler::DEFAULT_SDE_STEPS, 3).unwrap();
    let sde: Vec<f64> = paths.iter().map(|p| p.y_last()[0]).collect();
    let ks = eval::ecdf_distance(&sde, inf.y_terminal.as_slice()).unwrap();
    assert!(ks < 0.05, "KS {ks}");
}

/// Sums fine standard normals in blocks so a coarse path sees the same Brownian increments.
fn coarsen(fine: &[f64], factor: usize) -> Vec<f64> {
    fine.chunks(factor).map(|c| c.iter().sum::<f64>() / (factor as f64).sqrt()).collect()
}

#[test]
fn euler_error_halves_when_the_step_halves() {
    let m = model();
    let mut r = rng::seeded(4);
    let (mut e25, mut e50) = (0.0, 0.0);
    let paths = 400;
    for _ in 0..paths {
        let y0 = [1.0 + 2f64.sqrt() * r.sample::<f64, _>(StandardNormal)];
        let fine: Vec<f64> = (0..200).map(|_| r.sample(StandardNormal)).collect();
        let reference = sampler::simulate_with_noise(m, &y0, 200, &fine).unwrap().y_last()[0];
        let at = |n: usize| sampler::simulate_with_noise(m, &y0, n, &coarsen(&fine, 200 / n)).unwrap().y_last()[0];
        e25 += (at(25) - reference).abs();
        e50 += (at(50) - reference).abs();
    }
    let ratio = e50 / e25;
    assert!((0.3..=0.7).contains(&ratio), "error ratio {ratio} ({e25}, {e50})");
}

#[test]
fn same_seed_same_paths() {
    let m = model();
    let y0 = source(20, 5);
    let a = sampler::simulate_batch(m, &y0, 30, 9).unwrap();
    let b = sampler::simulate_batch(m, &y0, 30, 9).unwrap();
    assert_eq!(a, b);
    let c = sampler::simulate_batch(m, &y0, 30, 10).unwrap();
    assert_ne!(a, c);
    let x = sampler::infer(m, &y0, &mut rng::seeded(1)).unwrap();
    let y = sampler::infer(m, &y0, &mut rng::seeded(1)).unwrap();
    assert_eq!(x.as_slice(), y.as_slice());
}

#[test]
fn time_grid_stops_short_of_the_horizon() {
    let m = model();
    let tr = sampler::simulate_y_sde(m, &[0.3], 64, &mut rng::seeded(6)).unwrap();
    assert_eq!(tr.len(), 65);
    assert_eq!(tr.times[0], 0.0);
    assert!(tr.times.windows(2).all(|w| w[0] < w[1]));
    assert_eq!(*tr.times.last().unwrap(), m.t_tilde);
    assert!(tr.times.iter().all(|&t| t < m.potential.horizon()));
    assert!(sampler::simulate_y_sde(m, &[0.3], 0, &mut rng::seeded(6)).is_err());
    assert!(sampler::simulate_with_noise(m, &[0.3], 4, &[0.0; 3]).is_err());
}

#[test]
fn export_round_trips() {
    let m = model();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("traj.csv");
    let trajs = sampler::simulate_batch(m, &source(2, 7), 2, 8).unwrap();
    sampler::export_trajectories(&trajs, &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert_eq!(text.lines().count(), 1 + 2 * 3);
    assert_eq!(text.lines().next().unwrap(), "traj_id,t,y_1,x_1");
    let back: Vec<Trajectory> = sampler::read_trajectories(&path).unwrap();
    assert_eq!(back.len(), trajs.len());
    for (a, b) in trajs.iter().zip(&back) {
        for (u, v) in a.times.iter().chain(&a.y_path).chain(&a.x_path).zip(b.times.iter().chain(&b.y_path).chain(&b.x_path)) {
            assert!((u - v).abs() <= 1e-12 * (1.0 + u.abs()), "{u} vs {v}");
        }
    }
    let empty = dir.path().join("empty.csv");
    assert!(sampler::export_trajectories(&[], &empty).is_err());
    assert!(!empty.exists());
}
