use std::sync::Arc;

use phi4_core::dyson::smear_all;
use phi4_core::free_field::{compute_c_n, cov_mollified, wick_power};
use phi4_core::lattice::{gradient_square, inner_product};
use phi4_core::{FreeSampler, Grid, Lattice, MollifierKernel, MomentEstimate, TestFunction, WickConstants};

/// Solves a dense symmetric system by Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap();
        a.swap(k, p);
        b.swap(k, p);
        let (top, rest) = a.split_at_mut(k + 1);
        let pivot = &top[k];
        for (off, row) in rest.iter_mut().enumerate() {
            let r = row[k] / pivot[k];
            for (x, y) in row[k..].iter_mut().zip(&pivot[k..]) {
                *x -= r * y;
            }
            b[k + 1 + off] -= r * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    x
}

/// Position-space covariance ε^{-d} (−Δ+1)⁻¹ in d = 1 by dense inversion.
fn dense_covariance_column(n: usize, l: f64, col: usize) -> Vec<f64> {
    let eps = l / n as f64;
    let mut a = vec![vec![0.0; n]; n];
    for i in 0..n {
        a[i][i] += 2.0 / (eps * eps) + 1.0;
        a[i][(i + 1) % n] -= 1.0 / (eps * eps);
        a[i][(i + n - 1) % n] -= 1.0 / (eps * eps);
    }
    let mut e = vec![0.0; n];
    e[col] = 1.0 / eps;
    solve(a, e)
}

#[test]
fn c_n_matches_dense_inverse() {
    let (n_sites, l) = (24, 2.0);
    let lat = Lattice::new(Grid::new(1, n_sites, l).unwrap());
    let eps = l / n_sites as f64;
    for n in [2u32, 4, 6] {
        let kernel = MollifierKernel::new(&lat, n).unwrap();
        let k = kernel.values();
        let mut c = 0.0;
        for y in 0..n_sites {
            let g = dense_covariance_column(n_sites, l, y);
            for x in 0..n_sites {
                c += k[x] * g[x] * k[y];
            }
        }
        c *= eps * eps;
        let spectral = compute_c_n(&lat, n).unwrap();
        assert!((c - spectral).abs() < 1e-10 * spectral, "n={n}: {c} vs {spectral}");
    }
}

#[test]
fn mollified_covariance_lag_zero_is_c_n() {
    let lat = Lattice::new(Grid::new(2, 16, 1.0).unwrap());
    let c = compute_c_n(&lat, 4).unwrap();
    assert!((cov_mollified(&lat, 4, &[0, 0]).unwrap() - c).abs() < 1e-12);
    assert!(cov_mollified(&lat, 4, &[3, 1]).unwrap() < c);
}

#[test]
fn wick_power_is_hermite() {
    let c = 0.7;
    for x in [-1.3f64, 0.0, 0.4, 2.2] {
        let p4 = x.powi(4) - 6.0 * c * x * x + 3.0 * c * c;
        assert!((wick_power(x, 4, c).unwrap() - p4).abs() < 1e-12);
        let p3 = x.powi(3) - 3.0 * c * x;
        assert!((wick_power(x, 3, c).unwrap() - p3).abs() < 1e-12);
    }
    assert!(wick_power(1.0, 2, -1.0).is_err());
}

#[test]
fn smeared_moments_match_covariance() {
    let lat = Arc::new(Lattice::new(Grid::new(2, 16, 1.0).unwrap()));
    let f = TestFunction::gaussian_bump(*lat.grid(), &[0.4, 0.5], 0.2).unwrap();
    let sigma = inner_product(&f, &lat.apply_covariance(&f).unwrap()).unwrap();
    let samples = FreeSampler::new(lat, 3).samples(20_000, 0);
    let x = smear_all(&samples, &f).unwrap();
    let second = MomentEstimate::from_series(&x.iter().map(|v| v * v).collect::<Vec<_>>()).unwrap();
    let fourth = MomentEstimate::from_series(&x.iter().map(|v| v.powi(4)).collect::<Vec<_>>()).unwrap();
    assert!(second.z_against(sigma).abs() <= 3.0, "{second:?} vs {sigma}");
    assert!(fourth.z_against(3.0 * sigma * sigma).abs() <= 3.0);
}

#[test]
fn wick_powers_have_zero_mean() {
    let lat = Arc::new(Lattice::new(Grid::new(2, 16, 1.0).unwrap()));
    let kernel = MollifierKernel::new(&lat, 3).unwrap();
    let wick = WickConstants::new(&lat, &kernel);
    let samples = FreeSampler::new(lat.clone(), 9).samples(8000, 0);
    for p in [2u32, 3, 4] {
        let series: Vec<f64> = samples
            .iter()
            .map(|s| wick_power(lat.mollify(&kernel, s).unwrap().values()[37], p, wick.c_n).unwrap())
            .collect();
        let est = MomentEstimate::from_series(&series).unwrap();
        assert!(est.z_against(0.0).abs() <= 3.0, "p={p}: {est:?}");
    }
}

#[test]
fn gradient_variance_matches_spectral_value() {
    let lat = Arc::new(Lattice::new(Grid::new(2, 16, 1.0).unwrap()));
    let kernel = MollifierKernel::new(&lat, 4).unwrap();
    let wick = WickConstants::new(&lat, &kernel);
    let g = *lat.grid();
    let series: Vec<f64> = FreeSampler::new(lat.clone(), 4)
        .samples(6000, 0)
        .iter()
        .map(|s| gradient_square(&g, lat.mollify(&kernel, s).unwrap().values()).iter().sum::<f64>() / g.num_sites() as f64)
        .collect();
    let est = MomentEstimate::from_series(&series).unwrap();
    assert!(est.z_against(wick.grad_var).abs() <= 3.0, "{est:?} vs {}", wick.grad_var);
    assert!((wick.d_n - wick.grad_var / wick.c_n).abs() < 1e-14);
}

#[test]
fn sampler_streams_are_reproducible_and_distinct() {
    let lat = Arc::new(Lattice::new(Grid::new(2, 8, 1.0).unwrap()));
    let a = FreeSampler::new(lat.clone(), 11).samples(3, 0);
    let b = FreeSampler::new(lat.clone(), 11).samples(3, 0);
    let c = FreeSampler::new(lat, 11).samples(3, 1);
    assert_eq!(a, b);
    assert_ne!(a[0], c[0]);
}
