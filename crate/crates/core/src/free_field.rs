//! Gaussian free field with covariance (−Δ + 1)⁻¹: exact spectral sampling,
//! cutoff variances and Wick ordering.
//!
//! Normalization: samples satisfy E φ(f)φ(g) = (f, Cg) for the ε^d-weighted
//! inner product. Single sites are therefore not unit objects; the site
//! variance is L^{-d} Σₖ 1/(λₖ + 1), which grows like ε^{2-d}.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{FieldConfig, Lattice, MollifierKernel};
use crate::rng::{stream_rng, StreamRng};

/// Spectral constants of the mollified free field at cutoff n.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WickConstants {
    pub n: u32,
    /// E φₙ(x)².
    pub c_n: f64,
    /// E |∇ψₙ(x)|² for ψₙ = φₙ/√cₙ, i.e. grad_var / c_n.
    pub d_n: f64,
    /// E |∇φₙ(x)|², summed over the d forward differences.
    pub grad_var: f64,
}

impl WickConstants {
    pub fn new(lattice: &Lattice, kernel: &MollifierKernel) -> Self {
        let l_d = lattice.grid().volume();
        let (mut c, mut gv) = (0.0, 0.0);
        for (lam, k) in lattice.laplacian_eigenvalues().iter().zip(kernel.transform()) {
            let w = k * k / (lam + 1.0);
            c += w;
            gv += w * lam;
        }
        let c_n = c / l_d;
        let grad_var = gv / l_d;
        Self {
            n: kernel.n(),
            c_n,
            d_n: grad_var / c_n,
            grad_var,
        }
    }

    pub fn compute(lattice: &Lattice, n: u32) -> Result<Self> {
        Ok(Self::new(lattice, &MollifierKernel::new(lattice, n)?))
    }
}

/// E φₙ(x)² on the grid.
pub fn compute_c_n(lattice: &Lattice, n: u32) -> Result<f64> {
    Ok(WickConstants::compute(lattice, n)?.c_n)
}

/// E |∇ψₙ(x)|² with ψₙ = φₙ/√cₙ.
pub fn compute_d_n(lattice: &Lattice, n: u32) -> Result<f64> {
    Ok(WickConstants::compute(lattice, n)?.d_n)
}

/// E φₙ(0) φₙ(lag), with the lag in lattice sites.
pub fn cov_mollified(lattice: &Lattice, n: u32, lag: &[isize]) -> Result<f64> {
    let grid = *lattice.grid();
    if lag.len() != grid.dim() {
        return Err(Error::InvalidArgument(format!(
            "lag has {} components on a {}-d grid",
            lag.len(),
            grid.dim()
        )));
    }
    let kernel = MollifierKernel::new(lattice, n)?;
    let sites = grid.sites_per_side() as f64;
    let sum: f64 = lattice
        .laplacian_eigenvalues()
        .iter()
        .zip(kernel.transform())
        .enumerate()
        .map(|(i, (lam, k))| {
            let c = grid.coords(i);
            let phase: f64 = (0..grid.dim())
                .map(|a| 2.0 * PI * c[a] as f64 * lag[a] as f64 / sites)
                .sum();
            k * k * phase.cos() / (lam + 1.0)
        })
        .sum();
    Ok(sum / grid.volume())
}

/// E φ(x)² of the unmollified lattice field.
pub fn site_variance(lattice: &Lattice) -> f64 {
    let s: f64 = lattice.laplacian_eigenvalues().iter().map(|l| 1.0 / (l + 1.0)).sum();
    s / lattice.grid().volume()
}

/// Hermite-ordered power :x^p: for a Gaussian of variance c.
pub fn wick_power(x: f64, p: u32, c: f64) -> Result<f64> {
    if !(c > 0.0) {
        return Err(Error::NonPositiveVariance(c));
    }
    let x2 = x * x;
    Ok(match p {
        1 => x,
        2 => x2 - c,
        3 => x * (x2 - 3.0 * c),
        4 => x2 * x2 - 6.0 * c * x2 + 3.0 * c * c,
        _ => return Err(Error::WickOrder(p)),
    })
}

/// :(∇φₙ)²: = Σᵢ (∂ᵢφₙ)² − grad_var.
pub fn wick_gradient_square(grad_values: &[f64], grad_var: f64) -> f64 {
    grad_values.iter().map(|g| g * g).sum::<f64>() - grad_var
}

/// Exact sampler for a Gaussian field diagonal in Fourier space.
#[derive(Clone, Debug)]
pub struct FreeSampler {
    lattice: Arc<Lattice>,
    scale: Vec<f64>,
    seed: u64,
}

impl FreeSampler {
    /// The free field, mode precision λₖ + 1.
    pub fn new(lattice: Arc<Lattice>, seed: u64) -> Self {
        let precision: Vec<f64> = lattice.laplacian_eigenvalues().iter().map(|l| l + 1.0).collect();
        Self::with_precision(lattice, &precision, seed)
    }

    /// A field with quadratic form ε^d Σ φ P(−Δ) φ, given P per mode.
    pub fn with_precision(lattice: Arc<Lattice>, precision: &[f64], seed: u64) -> Self {
        let norm = lattice.grid().cell_volume().sqrt();
        let scale = precision.iter().map(|p| 1.0 / (norm * p.sqrt())).collect();
        Self {
            lattice,
            scale,
            seed,
        }
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Per-mode multipliers applied to white noise.
    pub fn spectral_scale(&self) -> &[f64] {
        &self.scale
    }

    pub fn rng(&self, chain_id: u64) -> StreamRng {
        stream_rng(self.seed, chain_id)
    }

    pub fn sample(&self, rng: &mut impl Rng) -> FieldConfig {
        self.sample_pair(rng).0
    }

    /// Two independent draws from one complex transform.
    pub fn sample_pair(&self, rng: &mut impl Rng) -> (FieldConfig, FieldConfig) {
        let lattice = &self.lattice;
        let mut buf: Vec<Complex64> = (0..self.scale.len())
            .map(|_| Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        lattice.fft(&mut buf);
        for (z, s) in buf.iter_mut().zip(&self.scale) {
            *z *= *s;
        }
        lattice.ifft(&mut buf);
        let grid = *lattice.grid();
        let (a, b): (Vec<f64>, Vec<f64>) = buf.into_iter().map(|z| (z.re, z.im)).unzip();
        (
            FieldConfig::new(grid, a).expect("finite Gaussian draw"),
            FieldConfig::new(grid, b).expect("finite Gaussian draw"),
        )
    }

    /// `count` draws from the stream `chain_id`.
    pub fn samples(&self, count: usize, chain_id: u64) -> Vec<FieldConfig> {
        let mut rng = self.rng(chain_id);
        let mut out = Vec::with_capacity(count + 1);
        while out.len() < count {
            let (a, b) = self.sample_pair(&mut rng);
            out.push(a);
            out.push(b);
        }
        out.truncate(count);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::Grid;

    fn lattice(d: usize, n: usize, l: f64) -> Lattice {
        Lattice::new(Grid::new(d, n, l).unwrap())
    }

    #[test]
    fn wick_values() {
        assert!((wick_power(3f64.sqrt(), 4, 1.0).unwrap() + 6.0).abs() < 1e-12);
        assert_eq!(wick_power(0.0, 2, 1.0).unwrap(), -1.0);
        assert_eq!(wick_power(2.0, 1, 0.5).unwrap(), 2.0);
        assert!((wick_power(2.0, 3, 0.5).unwrap() - 5.0).abs() < 1e-12);
        assert!(matches!(wick_power(1.0, 5, 1.0), Err(Error::WickOrder(5))));
        assert!(matches!(wick_power(1.0, 0, 1.0), Err(Error::WickOrder(0))));
        assert!(wick_power(1.0, 2, 0.0).is_err());
    }

    #[test]
    fn wick_gradient_algebra() {
        assert_eq!(wick_gradient_square(&[0.0, 0.0], 2.5), -2.5);
        let g = [0.3, -1.2, 0.7];
        let s = 1.7f64;
        let scaled: Vec<f64> = g.iter().map(|x| x * s).collect();
        let raw: f64 = g.iter().map(|x| x * x).sum();
        assert!((wick_gradient_square(&scaled, 0.4) - (s * s * raw - 0.4)).abs() < 1e-12);
    }

    #[test]
    fn wick_constants_are_consistent() {
        let lat = lattice(2, 16, 1.0);
        let w = WickConstants::compute(&lat, 4).unwrap();
        assert!(w.c_n > 0.0 && w.grad_var > 0.0 && w.d_n > 0.0);
        assert!((w.d_n * w.c_n - w.grad_var).abs() < 1e-12 * w.grad_var);
        assert!((cov_mollified(&lat, 4, &[0, 0]).unwrap() - w.c_n).abs() < 1e-12);
    }

    #[test]
    fn c_n_grows_towards_site_variance() {
        let lat = lattice(2, 16, 1.0);
        let mut prev = 0.0;
        for n in [1, 2, 4, 8, 16, 32] {
            let c = compute_c_n(&lat, n).unwrap();
            assert!(c >= prev);
            prev = c;
        }
        let limit = compute_c_n(&lat, 4096).unwrap();
        assert!((limit - site_variance(&lat)).abs() < 1e-9 * limit);
    }

    #[test]
    fn mollified_covariance_is_even_and_bounded() {
        let lat = lattice(2, 12, 1.0);
        let c0 = cov_mollified(&lat, 3, &[0, 0]).unwrap();
        for lag in [[1, 0], [2, 5], [-3, 4], [6, 6]] {
            let a = cov_mollified(&lat, 3, &lag).unwrap();
            let b = cov_mollified(&lat, 3, &[-lag[0], -lag[1]]).unwrap();
            assert!((a - b).abs() < 1e-14);
            assert!(a <= c0 + 1e-14);
        }
    }

    #[test]
    fn sampler_scale_is_free_spectrum() {
        let lat = Arc::new(lattice(2, 8, 2.0));
        let s = FreeSampler::new(lat.clone(), 1);
        let eps_d = lat.grid().cell_volume();
        for (sc, l) in s.spectral_scale().iter().zip(lat.laplacian_eigenvalues()) {
            assert!((sc * sc * eps_d * (l + 1.0) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn equal_seeds_give_identical_draws() {
        let lat = Arc::new(lattice(2, 8, 1.0));
        let a = FreeSampler::new(lat.clone(), 99).samples(3, 0);
        let b = FreeSampler::new(lat.clone(), 99).samples(3, 0);
        for (x, y) in a.iter().zip(&b) {
            assert!(x.values().iter().zip(y.values()).all(|(p, q)| p.to_bits() == q.to_bits()));
        }
        let c = FreeSampler::new(lat, 99).samples(1, 1);
        assert_ne!(a[0], c[0]);
    }
}
