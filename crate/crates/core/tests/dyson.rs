use std::sync::Arc;

use phi4_core::action::{Couplings, Derivatives};
use phi4_core::dyson::*;
use phi4_core::lattice::inner_product;
use phi4_core::sampler::{run_chain, ChainConfig, SampleStream};
use phi4_core::{ActionModel, FieldConfig, FreeSampler, Grid, Lattice, TestFunction};

fn setup(n_sites: usize, c: Couplings, steps: usize, seed: u64) -> (ActionModel, SampleStream) {
    let lat = Arc::new(Lattice::new(Grid::new(2, n_sites, 1.0).unwrap()));
    let model = ActionModel::with_couplings(lat, c, 2).unwrap();
    let stream = run_chain(&model, &ChainConfig::new(steps, 500, seed)).unwrap();
    (model, stream)
}

fn bumps(model: &ActionModel) -> (TestFunction, TestFunction) {
    let g = *model.grid();
    (
        TestFunction::gaussian_bump(g, &[0.5, 0.5], 0.15).unwrap(),
        TestFunction::gaussian_bump(g, &[0.3, 0.6], 0.2).unwrap(),
    )
}

const FREE: Couplings = Couplings { g: 0.0, m: 0.0, a: 0.0 };
const REFERENCE: Couplings = Couplings { g: 0.1, m: 0.05, a: 0.05 };

#[test]
fn free_residuals_pass() {
    let (model, s) = setup(8, FREE, 8000, 1);
    let (f, h) = bumps(&model);
    let reports = [
        residual_mc8(&model, &s, &f).unwrap(),
        residual_mc8b(&model, &s, &f, &h).unwrap(),
        residual_mc9(&model, &s, &f, 4).unwrap(),
        residual_mc10(&model, &s, &f).unwrap(),
        residual_moment4(&model, &s, &f).unwrap(),
        residual_moment6(&model, &s, &f).unwrap(),
        residual_if7(&model, &s, &f, &h).unwrap(),
        residual_second_dyson(&model, &s, &f).unwrap(),
    ];
    for r in reports {
        assert!(r.passed(), "{r:?}");
    }
}

#[test]
fn free_ibp_with_orthogonal_directions() {
    let lat = Arc::new(Lattice::new(Grid::new(1, 16, 1.0).unwrap()));
    let g = *lat.grid();
    let f = TestFunction::from_fn(g, |x| (2.0 * std::f64::consts::PI * x[0]).cos()).unwrap();
    let h = TestFunction::from_fn(g, |x| (4.0 * std::f64::consts::PI * x[0]).cos()).unwrap();
    let samples = FreeSampler::new(lat.clone(), 2).samples(4000, 0);
    let r = residual_free_ibp(&lat, &f, &h, &samples).unwrap();
    assert!(r.lhs.mean.abs() < 1e-12 && r.passed());
    let same = residual_free_ibp(&lat, &f, &f, &samples).unwrap();
    assert!((same.lhs.mean - inner_product(&f, &f).unwrap()).abs() < 1e-12);
    assert!(same.passed(), "{same:?}");
}

#[test]
fn interacting_residuals_pass() {
    let (model, s) = setup(8, REFERENCE, 15_000, 4);
    let (f, h) = bumps(&model);
    for r in [
        residual_mc8(&model, &s, &f).unwrap(),
        residual_mc8b(&model, &s, &f, &h).unwrap(),
        residual_mc9(&model, &s, &f, 4).unwrap(),
        residual_mc10(&model, &s, &f).unwrap(),
        residual_moment4(&model, &s, &f).unwrap(),
        residual_moment6(&model, &s, &f).unwrap(),
        residual_if7(&model, &s, &f, &h).unwrap(),
        residual_second_dyson(&model, &s, &f).unwrap(),
    ] {
        assert!(r.z_score.abs() <= 3.0, "{r:?}");
    }
}

#[test]
fn mc8b_and_if7_agree_per_configuration() {
    let (model, s) = setup(8, REFERENCE, 600, 2);
    let (f, h) = bumps(&model);
    let cinv_h = model.lattice().apply_inverse_covariance(&h).unwrap();
    let a = mc8b_series(&model, &s, &f, &cinv_h).unwrap();
    let b = if7_series(&model, &s, &f, &h).unwrap();
    for (x, y) in a.lhs.iter().zip(&b.lhs).chain(a.rhs.iter().zip(&b.rhs)) {
        assert!((x - y).abs() <= 1e-10 * (1.0 + x.abs()), "{x} vs {y}");
    }
}

#[test]
fn derivatives_match_finite_differences() {
    let lat = Arc::new(Lattice::new(Grid::new(2, 8, 1.0).unwrap()));
    let model = ActionModel::with_couplings(lat.clone(), Couplings { g: 0.7, m: 0.3, a: 0.4 }, 2).unwrap();
    let sampler = FreeSampler::new(lat.clone(), 17);
    let mut rng = sampler.rng(0);
    for _ in 0..5 {
        let phi = sampler.sample(&mut rng);
        let hv = sampler.sample(&mut rng);
        let h = TestFunction::from_fn(*lat.grid(), |_| 0.0).unwrap().add(&TestFunction::new(*lat.grid(), hv.values().to_vec()).unwrap()).unwrap();
        let dir = model.direction(&h);
        let d = model.derivatives(model.mollify(&phi).values(), &dir);
        let at = |t: f64| model.action(&phi.axpy(t, &h).unwrap()).total;
        let t = 1e-4;
        let fd1 = (at(t) - at(-t)) / (2.0 * t);
        let t2 = 1e-3;
        let fd2 = (at(t2) - 2.0 * at(0.0) + at(-t2)) / (t2 * t2);
        assert!((d.d1 - fd1).abs() <= 1e-5 * d.d1.abs().max(1.0), "{} vs {fd1}", d.d1);
        assert!((d.d2 - fd2).abs() <= 1e-5 * d.d2.abs().max(1.0), "{} vs {fd2}", d.d2);
        let pn = model.mollify(&phi);
        let bp = model.derivative_by_parts(pn.values(), &dir);
        assert!((bp - d.d1).abs() <= 1e-9 * d.d1.abs().max(1.0));
    }
}

#[test]
fn moment_forms_agree_at_sampled_configurations() {
    let (model, s) = setup(8, REFERENCE, 600, 3);
    let (f, _) = bumps(&model);
    let cf = model.lattice().apply_covariance(&f).unwrap();
    let dir = model.direction(&cf);
    let sigma = inner_product(&f, &cf).unwrap();
    for pn in s.mollified.iter().take(50) {
        let d: Derivatives = model.derivatives(pn.values(), &dir);
        let u = u_derivatives(&d, sigma);
        let bell6 = moment_expansion(6, &d, sigma);
        let bell4 = moment_expansion(4, &d, sigma);
        assert!((moment6_terms(&d, sigma) - bell6).abs() <= 1e-8 * (1.0 + bell6.abs()));
        assert!((moment6_u_form(&u) - bell6).abs() <= 1e-8 * (1.0 + bell6.abs()));
        assert!((moment4_terms(&d, sigma) - bell4).abs() <= 1e-8 * (1.0 + bell4.abs()));
        assert!((moment4_u_form(&u) - bell4).abs() <= 1e-8 * (1.0 + bell4.abs()));
    }
}

#[test]
fn odd_moments_vanish() {
    let (model, s) = setup(8, REFERENCE, 6000, 8);
    let (f, _) = bumps(&model);
    let x = smear_all(&s.samples, &f).unwrap();
    for p in [1, 3, 5] {
        let series: Vec<f64> = x.iter().map(|v| v.powi(p)).collect();
        let est = phi4_core::MomentEstimate::from_series(&series).unwrap();
        assert!(est.z_against(0.0).abs() <= 3.0, "p={p}: {est:?}");
    }
}

#[test]
fn generating_functional_forms() {
    let (model, s) = setup(8, REFERENCE, 8000, 5);
    let (f, _) = bumps(&model);
    let free: Vec<FieldConfig> = FreeSampler::new(model.lattice().clone(), 6).samples(8000, 0);
    let zero = generating_functional_check(0.0, &f, &model, &s, &free).unwrap();
    assert!((zero.lhs.mean - 1.0).abs() < 1e-12 && (zero.rhs.mean - 1.0).abs() < 1e-12);
    let half = generating_functional_check(0.5, &f, &model, &s, &free).unwrap();
    assert!(half.passed(), "{half:?}");

    let (fm, fs) = setup(8, FREE, 8000, 6);
    let r = generating_functional_check(0.5, &f, &fm, &fs, &free).unwrap();
    let sigma = inner_product(&f, &fm.lattice().apply_covariance(&f).unwrap()).unwrap();
    assert!((r.rhs.mean - (0.125 * sigma).exp()).abs() < 1e-12);
    assert!(r.passed(), "{r:?}");
}

#[test]
fn stream_from_other_cutoff_is_rejected() {
    let (model, s) = setup(8, FREE, 700, 1);
    let other = ActionModel::with_couplings(model.lattice().clone(), FREE, 3).unwrap();
    let (f, _) = bumps(&model);
    assert!(residual_mc8(&other, &s, &f).is_err());
}
