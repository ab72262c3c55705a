use std::sync::Arc;

use phi4_core::action::Couplings;
use phi4_core::lattice::inner_product;
use phi4_core::sampler::{
    estimate_z, reweighted_expectation, run_chain, target_log_density, ChainConfig, UpdateKind,
};
use phi4_core::{ActionModel, FieldConfig, FreeSampler, Grid, Lattice, MomentEstimate, TestFunction};

fn lattice(d: usize, n: usize) -> Arc<Lattice> {
    Arc::new(Lattice::new(Grid::new(d, n, 1.0).unwrap()))
}

fn smeared_series(samples: &[FieldConfig], f: &TestFunction, power: i32) -> Vec<f64> {
    samples
        .iter()
        .map(|p| inner_product(p, f).unwrap().powi(power))
        .collect()
}

#[test]
fn free_chain_matches_covariance() {
    let lat = lattice(2, 8);
    let model = ActionModel::with_couplings(lat.clone(), Couplings { g: 0.0, m: 0.0, a: 0.0 }, 2).unwrap();
    let f = TestFunction::gaussian_bump(*lat.grid(), &[0.5, 0.5], 0.25).unwrap();
    let exact = inner_product(&f, &lat.apply_covariance(&f).unwrap()).unwrap();
    for kernel in [UpdateKind::SingleSite, UpdateKind::Pcn] {
        let mut cfg = ChainConfig::new(6000, 500, 21);
        cfg.kernel = kernel;
        let s = run_chain(&model, &cfg).unwrap();
        let est = MomentEstimate::from_series(&smeared_series(&s.samples, &f, 2)).unwrap();
        assert!(est.z_against(exact).abs() <= 3.0, "{kernel:?}: {est:?} vs {exact}");
    }
}

#[test]
fn density_ratio_is_exponent_difference() {
    let lat = lattice(2, 4);
    let model = ActionModel::with_couplings(lat.clone(), Couplings { g: 0.3, m: 0.1, a: 0.2 }, 2).unwrap();
    let s = FreeSampler::new(lat, 8);
    let x = s.samples(2, 0);
    let free = ActionModel::with_couplings(model.lattice().clone(), Couplings { g: 0.0, m: 0.0, a: 0.0 }, 2).unwrap();
    let q = |p: &FieldConfig| phi4_core::sampler::free_quadratic_form(model.grid(), p.values());
    assert!((target_log_density(&free, &x[0]) + 0.5 * q(&x[0])).abs() < 1e-12);
    let diff = target_log_density(&model, &x[0]) - target_log_density(&model, &x[1]);
    let direct = -0.5 * (q(&x[0]) - q(&x[1])) - (model.action(&x[0]).total - model.action(&x[1]).total);
    assert!((diff - direct).abs() < 1e-10);
}

#[test]
fn small_coupling_chain_agrees_with_reweighting() {
    let lat = lattice(2, 8);
    let model = ActionModel::with_couplings(lat.clone(), Couplings { g: 0.05, m: 0.0, a: 0.0 }, 2).unwrap();
    let f = TestFunction::gaussian_bump(*lat.grid(), &[0.5, 0.5], 0.3).unwrap();
    let cfg = ChainConfig::new(20_000, 1000, 5);
    let s = run_chain(&model, &cfg).unwrap();
    let chain = MomentEstimate::from_series(&smeared_series(&s.samples, &f, 2)).unwrap();
    let free = FreeSampler::new(lat, 6).samples(20_000, 0);
    let rw = reweighted_expectation(&model, &free, |p| inner_product(p, &f).unwrap().powi(2)).unwrap();
    assert!(rw.reliable);
    let err = (chain.std_err.powi(2) + rw.estimate.std_err.powi(2)).sqrt();
    assert!((chain.mean - rw.estimate.mean).abs() <= 3.0 * err, "{chain:?} {rw:?}");
    let z = estimate_z(&model, &free).unwrap();
    assert!(z.log_z.is_finite() && z.z.mean > 0.0);
}

#[test]
fn odd_moment_vanishes_for_even_action() {
    let lat = lattice(2, 8);
    let model = ActionModel::with_couplings(lat.clone(), Couplings { g: 0.4, m: 0.1, a: 0.05 }, 2).unwrap();
    let f = TestFunction::gaussian_bump(*lat.grid(), &[0.3, 0.5], 0.2).unwrap();
    let s = run_chain(&model, &ChainConfig::new(8000, 500, 13)).unwrap();
    let odd = MomentEstimate::from_series(&smeared_series(&s.samples, &f, 1)).unwrap();
    assert!(odd.z_against(0.0).abs() <= 3.0, "{odd:?}");
}

#[test]
fn doubling_steps_shrinks_error() {
    let lat = lattice(2, 8);
    let model = ActionModel::with_couplings(lat.clone(), Couplings { g: 0.0, m: 0.0, a: 0.0 }, 2).unwrap();
    let f = TestFunction::gaussian_bump(*lat.grid(), &[0.5, 0.5], 0.25).unwrap();
    let mut ratios = Vec::new();
    for seed in 0..4 {
        let short = run_chain(&model, &ChainConfig::new(20_100, 100, seed)).unwrap();
        let long = run_chain(&model, &ChainConfig::new(40_100, 100, seed)).unwrap();
        let a = MomentEstimate::from_series(&smeared_series(&short.samples, &f, 2)).unwrap();
        let b = MomentEstimate::from_series(&smeared_series(&long.samples, &f, 2)).unwrap();
        ratios.push(b.std_err / a.std_err);
    }
    let avg = ratios.iter().sum::<f64>() / ratios.len() as f64;
    assert!((avg * 2f64.sqrt() - 1.0).abs() < 0.3, "{ratios:?}");
}

#[test]
fn invalid_chain_configs_are_rejected() {
    let lat = lattice(1, 4);
    let model = ActionModel::with_couplings(lat, Couplings { g: 0.1, m: 0.0, a: 0.0 }, 2).unwrap();
    assert!(run_chain(&model, &ChainConfig::new(100, 100, 1)).is_err());
    let mut cfg = ChainConfig::new(100, 10, 1);
    cfg.thinning = 0;
    assert!(run_chain(&model, &cfg).is_err());
}

#[test]
fn reruns_are_bit_identical() {
    let lat = lattice(2, 4);
    let model = ActionModel::with_couplings(lat, Couplings { g: 0.3, m: 0.1, a: 0.1 }, 2).unwrap();
    for kernel in [UpdateKind::Pcn, UpdateKind::SingleSite] {
        let mut cfg = ChainConfig::new(300, 50, 77);
        cfg.kernel = kernel;
        let a = run_chain(&model, &cfg).unwrap();
        let b = run_chain(&model, &cfg).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.summary, b.summary);
    }
}

#[test]
fn incremental_and_recomputed_single_site_agree() {
    let lat = lattice(2, 4);
    let model = ActionModel::with_couplings(lat, Couplings { g: 0.3, m: 0.1, a: 0.1 }, 2).unwrap();
    let mut cfg = ChainConfig::new(200, 20, 5);
    cfg.kernel = UpdateKind::SingleSite;
    let a = run_chain(&model, &cfg).unwrap();
    cfg.kernel = UpdateKind::SingleSiteRecompute;
    let b = run_chain(&model, &cfg).unwrap();
    for (x, y) in a.samples.iter().zip(&b.samples) {
        for (u, v) in x.values().iter().zip(y.values()) {
            assert!((u - v).abs() < 1e-8);
        }
    }
}
