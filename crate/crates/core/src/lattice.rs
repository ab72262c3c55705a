//! Periodic grid geometry, lattice functions, the Gaussian mollifier and
//! spectral operators on the torus.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Highest supported dimension.
pub const MAX_DIM: usize = 4;

/// Default cap on the number of sites (128 MiB per real field).
pub const DEFAULT_SITE_CAP: usize = 1 << 24;

/// Kernel support radius in units of the width 1/n.
pub const KERNEL_RADIUS: f64 = 6.0;

pub type Coords = [usize; MAX_DIM];

/// Periodic grid of `N^d` sites covering the torus `[0, L)^d`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    sites_per_side: usize,
    side_length: f64,
}

impl Grid {
    pub fn new(dim: usize, sites_per_side: usize, side_length: f64) -> Result<Self> {
        Self::with_site_cap(dim, sites_per_side, side_length, DEFAULT_SITE_CAP)
    }

    pub fn with_site_cap(
        dim: usize,
        sites_per_side: usize,
        side_length: f64,
        cap: usize,
    ) -> Result<Self> {
        if !(1..=MAX_DIM).contains(&dim) {
            return Err(Error::InvalidGrid(format!("dimension {dim} not in 1..=4")));
        }
        if sites_per_side < 2 {
            return Err(Error::InvalidGrid(format!(
                "need at least 2 sites per side, got {sites_per_side}"
            )));
        }
        if !(side_length.is_finite() && side_length > 0.0) {
            return Err(Error::InvalidGrid(format!(
                "side length must be positive, got {side_length}"
            )));
        }
        let sites = (sites_per_side as u128).pow(dim as u32);
        if sites > cap as u128 {
            return Err(Error::SiteCap { sites, cap });
        }
        Ok(Self {
            dim,
            sites_per_side,
            side_length,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn sites_per_side(&self) -> usize {
        self.sites_per_side
    }

    pub fn side_length(&self) -> f64 {
        self.side_length
    }

    /// Lattice spacing ε = L/N.
    pub fn spacing(&self) -> f64 {
        self.side_length / self.sites_per_side as f64
    }

    pub fn num_sites(&self) -> usize {
        self.sites_per_side.pow(self.dim as u32)
    }

    /// Volume ε^d of one cell, the weight of every site sum.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Total volume L^d.
    pub fn volume(&self) -> f64 {
        self.side_length.powi(self.dim as i32)
    }

    /// Index stride of `axis`; the last axis is contiguous.
    pub fn stride(&self, axis: usize) -> usize {
        self.sites_per_side.pow((self.dim - 1 - axis) as u32)
    }

    pub fn coords(&self, mut index: usize) -> Coords {
        let n = self.sites_per_side;
        let mut c = [0; MAX_DIM];
        for axis in (0..self.dim).rev() {
            c[axis] = index % n;
            index /= n;
        }
        c
    }

    pub fn index(&self, coords: &Coords) -> usize {
        let n = self.sites_per_side;
        coords[..self.dim]
            .iter()
            .fold(0, |acc, &c| acc * n + c % n)
    }

    /// Site reached from `index` by `step` sites along `axis`, wrapping.
    pub fn neighbor(&self, index: usize, axis: usize, step: isize) -> usize {
        let n = self.sites_per_side as isize;
        let stride = self.stride(axis);
        let c = ((index / stride) as isize) % n;
        let moved = (c + step).rem_euclid(n);
        index - (c as usize) * stride + (moved as usize) * stride
    }

    /// Site `index + offset`, with `offset` given as coordinates mod N.
    pub fn translate(&self, index: usize, offset: &Coords) -> usize {
        let n = self.sites_per_side;
        let c = self.coords(index);
        let mut out = 0;
        for axis in 0..self.dim {
            out = out * n + (c[axis] + offset[axis]) % n;
        }
        out
    }

    /// Site `index - offset`.
    pub fn translate_back(&self, index: usize, offset: &Coords) -> usize {
        let n = self.sites_per_side;
        let c = self.coords(index);
        let mut out = 0;
        for axis in 0..self.dim {
            out = out * n + (c[axis] + n - offset[axis] % n) % n;
        }
        out
    }

    /// Physical position of a site in `[0, L)^d`.
    pub fn position(&self, index: usize) -> [f64; MAX_DIM] {
        let c = self.coords(index);
        let eps = self.spacing();
        let mut x = [0.0; MAX_DIM];
        for axis in 0..self.dim {
            x[axis] = c[axis] as f64 * eps;
        }
        x
    }

    /// Signed lattice frequency of a mode coordinate: k or k - N.
    pub fn frequency(&self, k: usize) -> isize {
        let n = self.sites_per_side;
        if 2 * k <= n {
            k as isize
        } else {
            k as isize - n as isize
        }
    }
}

/// Anything holding one real value per site of a grid.
pub trait LatticeField: Sized {
    fn grid(&self) -> &Grid;
    fn values(&self) -> &[f64];
    fn from_parts(grid: Grid, values: Vec<f64>) -> Result<Self>;
}

fn check_values(grid: &Grid, values: &[f64]) -> Result<()> {
    if values.len() != grid.num_sites() {
        return Err(Error::LengthMismatch {
            expected: grid.num_sites(),
            got: values.len(),
        });
    }
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    Ok(())
}

/// A field configuration: φ, φₙ or one of their rescalings.
#[derive(Clone, Debug, PartialEq)]
pub struct FieldConfig {
    grid: Grid,
    values: Vec<f64>,
}

impl FieldConfig {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        check_values(&grid, &values)?;
        Ok(Self { grid, values })
    }

    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self {
            grid,
            values: vec![value; grid.num_sites()],
        }
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.num_sites())
            .map(|i| f(&grid.position(i)[..grid.dim()]))
            .collect();
        Self::new(grid, values)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v * s).collect(),
        }
    }

    /// `self + t * other`.
    pub fn axpy(&self, t: f64, other: &impl LatticeField) -> Result<Self> {
        same_grid(&self.grid, other.grid())?;
        let values = self
            .values
            .iter()
            .zip(other.values())
            .map(|(a, b)| a + t * b)
            .collect();
        Self::new(self.grid, values)
    }

    /// Smeared value φ(f) = ε^d Σ φ(x) f(x).
    pub fn smear(&self, f: &TestFunction) -> Result<f64> {
        inner_product(self, f)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl LatticeField for FieldConfig {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn from_parts(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, values)
    }
}

/// Test function with nonnegativity and boundary flatness flags derived
/// from its values.
#[derive(Clone, Debug, PartialEq)]
pub struct TestFunction {
    grid: Grid,
    values: Vec<f64>,
    band: usize,
    nonneg: bool,
    boundary_flat: bool,
}

impl TestFunction {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::with_band(grid, values, 1)
    }

    /// `band` is the width, in sites, of the layer along the faces of the
    /// fundamental cell where the gradient must vanish for the flag.
    pub fn with_band(grid: Grid, values: Vec<f64>, band: usize) -> Result<Self> {
        check_values(&grid, &values)?;
        let nonneg = values.iter().all(|&v| v >= 0.0);
        let boundary_flat = flat_on_band(&grid, &values, band);
        Ok(Self {
            grid,
            values,
            band,
            nonneg,
            boundary_flat,
        })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = (0..grid.num_sites())
            .map(|i| f(&grid.position(i)[..grid.dim()]))
            .collect();
        Self::new(grid, values)
    }

    pub fn constant(grid: Grid, value: f64) -> Self {
        Self::new(grid, vec![value; grid.num_sites()]).expect("finite constant")
    }

    /// Gaussian bump of peak 1, summed over periodic images.
    pub fn gaussian_bump(grid: Grid, center: &[f64], width: f64) -> Result<Self> {
        if center.len() != grid.dim() {
            return Err(Error::InvalidArgument(format!(
                "bump center has {} coordinates on a {}-d grid",
                center.len(),
                grid.dim()
            )));
        }
        if !(width > 0.0) {
            return Err(Error::InvalidArgument(format!("bump width {width}")));
        }
        let l = grid.side_length();
        let images = (KERNEL_RADIUS * width / l).ceil() as i64 + 1;
        Self::from_fn(grid, |x| {
            let mut prod = 1.0;
            for (xi, ci) in x.iter().zip(center) {
                let mut s = 0.0;
                for m in -images..=images {
                    let r = xi - ci + m as f64 * l;
                    s += (-0.5 * r * r / (width * width)).exp();
                }
                prod *= s;
            }
            prod
        })
    }

    /// Indicator of the half-open box `[lo, hi)`.
    pub fn indicator(grid: Grid, lo: &[f64], hi: &[f64]) -> Result<Self> {
        if lo.len() != grid.dim() || hi.len() != grid.dim() {
            return Err(Error::InvalidArgument("box corners must match grid dimension".into()));
        }
        Self::from_fn(grid, |x| {
            let inside = x
                .iter()
                .zip(lo.iter().zip(hi))
                .all(|(xi, (a, b))| *xi >= *a && *xi < *b);
            if inside {
                1.0
            } else {
                0.0
            }
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_nonneg(&self) -> bool {
        self.nonneg
    }

    pub fn is_boundary_flat(&self) -> bool {
        self.boundary_flat
    }

    pub fn band(&self) -> usize {
        self.band
    }

    pub fn scaled(&self, s: f64) -> Self {
        let values = self.values.iter().map(|v| v * s).collect();
        Self::with_band(self.grid, values, self.band).expect("finite scaling")
    }

    pub fn add(&self, other: &TestFunction) -> Result<Self> {
        same_grid(&self.grid, &other.grid)?;
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + b).collect();
        Self::with_band(self.grid, values, self.band)
    }

    pub fn norm(&self) -> f64 {
        inner_product(self, self).unwrap_or(0.0).sqrt()
    }
}

impl LatticeField for TestFunction {
    fn grid(&self) -> &Grid {
        &self.grid
    }
    fn values(&self) -> &[f64] {
        &self.values
    }
    fn from_parts(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, values)
    }
}

fn flat_on_band(grid: &Grid, values: &[f64], band: usize) -> bool {
    let n = grid.sites_per_side();
    let scale = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-12 * scale.max(f64::MIN_POSITIVE);
    (0..grid.num_sites()).all(|i| {
        let c = grid.coords(i);
        let on_band = c[..grid.dim()]
            .iter()
            .any(|&ci| ci < band || ci + band >= n);
        !on_band
            || (0..grid.dim()).all(|axis| (values[grid.neighbor(i, axis, 1)] - values[i]).abs() <= tol)
    })
}

fn same_grid(a: &Grid, b: &Grid) -> Result<()> {
    if a == b {
        Ok(())
    } else {
        Err(Error::GridMismatch)
    }
}

/// (f, g) = ε^d Σ f(x) g(x).
pub fn inner_product(f: &impl LatticeField, g: &impl LatticeField) -> Result<f64> {
    same_grid(f.grid(), g.grid())?;
    let sum: f64 = f.values().iter().zip(g.values()).map(|(a, b)| a * b).sum();
    Ok(sum * f.grid().cell_volume())
}

/// Forward differences (φ(x + εeᵢ) − φ(x))/ε, one field per axis.
pub fn finite_diff_gradient<F: LatticeField>(phi: &F) -> Vec<F> {
    let grid = *phi.grid();
    (0..grid.dim())
        .map(|axis| {
            let v = forward_difference(&grid, phi.values(), axis);
            F::from_parts(grid, v).expect("finite differences of finite values")
        })
        .collect()
}

/// Backward differences (φ(x) − φ(x − εeᵢ))/ε; minus the adjoint of the
/// forward difference.
pub fn backward_diff_gradient<F: LatticeField>(phi: &F) -> Vec<F> {
    let grid = *phi.grid();
    (0..grid.dim())
        .map(|axis| {
            let v = backward_difference(&grid, phi.values(), axis);
            F::from_parts(grid, v).expect("finite differences of finite values")
        })
        .collect()
}

/// 2d+1 point Laplacian, equal to Σᵢ ∂ᵢ⁻ ∂ᵢ⁺.
pub fn discrete_laplacian<F: LatticeField>(f: &F) -> F {
    let grid = *f.grid();
    let v = laplacian_values(&grid, f.values());
    F::from_parts(grid, v).expect("finite stencil of finite values")
}

pub(crate) fn forward_difference(grid: &Grid, v: &[f64], axis: usize) -> Vec<f64> {
    let inv = 1.0 / grid.spacing();
    (0..v.len())
        .map(|i| (v[grid.neighbor(i, axis, 1)] - v[i]) * inv)
        .collect()
}

pub(crate) fn backward_difference(grid: &Grid, v: &[f64], axis: usize) -> Vec<f64> {
    let inv = 1.0 / grid.spacing();
    (0..v.len())
        .map(|i| (v[i] - v[grid.neighbor(i, axis, -1)]) * inv)
        .collect()
}

pub(crate) fn laplacian_values(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let inv2 = 1.0 / (grid.spacing() * grid.spacing());
    (0..v.len())
        .map(|i| {
            let mut s = -2.0 * grid.dim() as f64 * v[i];
            for axis in 0..grid.dim() {
                s += v[grid.neighbor(i, axis, 1)] + v[grid.neighbor(i, axis, -1)];
            }
            s * inv2
        })
        .collect()
}

/// Σᵢ |∂ᵢ⁺ v|² per site.
pub fn gradient_square(grid: &Grid, v: &[f64]) -> Vec<f64> {
    let inv = 1.0 / grid.spacing();
    (0..v.len())
        .map(|i| {
            (0..grid.dim())
                .map(|axis| {
                    let d = (v[grid.neighbor(i, axis, 1)] - v[i]) * inv;
                    d * d
                })
                .sum()
        })
        .collect()
}

/// A grid together with its FFT plans and Laplacian spectrum.
///
/// Transforms follow F[k] = Σₓ f[x] e^{-2πi k·x/N}; the inverse carries 1/N^d.
#[derive(Clone)]
pub struct Lattice {
    grid: Grid,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    eigenvalues: Vec<f64>,
}

impl std::fmt::Debug for Lattice {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Lattice").field("grid", &self.grid).finish()
    }
}

impl Lattice {
    pub fn new(grid: Grid) -> Self {
        let n = grid.sites_per_side();
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(n);
        let inverse = planner.plan_fft_inverse(n);
        let eps2 = grid.spacing() * grid.spacing();
        let axis_eig: Vec<f64> = (0..n)
            .map(|k| (2.0 - 2.0 * (2.0 * PI * k as f64 / n as f64).cos()) / eps2)
            .collect();
        let eigenvalues = (0..grid.num_sites())
            .map(|i| {
                let c = grid.coords(i);
                c[..grid.dim()].iter().map(|&k| axis_eig[k]).sum()
            })
            .collect();
        Self {
            grid,
            forward,
            inverse,
            eigenvalues,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// Eigenvalues of −Δ, indexed like sites by mode coordinates.
    pub fn laplacian_eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    pub fn fft(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    /// Inverse transform including the 1/N^d factor.
    pub fn ifft(&self, data: &mut [Complex64]) {
        self.transform(data, true);
        let s = 1.0 / data.len() as f64;
        for z in data.iter_mut() {
            *z *= s;
        }
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inverse } else { &self.forward };
        let grid = &self.grid;
        let n = grid.sites_per_side();
        assert_eq!(data.len(), grid.num_sites());
        let mut scratch = vec![Complex64::default(); plan.get_inplace_scratch_len()];
        plan.process_with_scratch(data, &mut scratch);
        if grid.dim() == 1 {
            return;
        }
        let mut line = vec![Complex64::default(); n];
        for axis in 0..grid.dim() - 1 {
            let stride = grid.stride(axis);
            let block = stride * n;
            for start in (0..data.len()).step_by(block) {
                for offset in 0..stride {
                    let base = start + offset;
                    for (j, z) in line.iter_mut().enumerate() {
                        *z = data[base + j * stride];
                    }
                    plan.process_with_scratch(&mut line, &mut scratch);
                    for (j, z) in line.iter().enumerate() {
                        data[base + j * stride] = *z;
                    }
                }
            }
        }
    }

    /// Multiplies the spectrum of a real field by a real even symbol.
    pub fn apply_symbol(&self, values: &[f64], symbol: &[f64]) -> Vec<f64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft(&mut buf);
        for (z, s) in buf.iter_mut().zip(symbol) {
            *z *= *s;
        }
        self.ifft(&mut buf);
        buf.into_iter().map(|z| z.re).collect()
    }

    /// Two real fields through one complex transform.
    pub fn apply_symbol_pair(&self, a: &[f64], b: &[f64], symbol: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
        self.fft(&mut buf);
        for (z, s) in buf.iter_mut().zip(symbol) {
            *z *= *s;
        }
        self.ifft(&mut buf);
        buf.into_iter().map(|z| (z.re, z.im)).unzip()
    }

    fn apply<F: LatticeField>(&self, f: &F, symbol: &[f64]) -> Result<F> {
        same_grid(&self.grid, f.grid())?;
        F::from_parts(self.grid, self.apply_symbol(f.values(), symbol))
    }

    /// C f with C = (−Δ + 1)⁻¹.
    pub fn apply_covariance<F: LatticeField>(&self, f: &F) -> Result<F> {
        let symbol: Vec<f64> = self.eigenvalues.iter().map(|l| 1.0 / (l + 1.0)).collect();
        self.apply(f, &symbol)
    }

    /// C⁻¹ f = (−Δ + 1) f.
    pub fn apply_inverse_covariance<F: LatticeField>(&self, f: &F) -> Result<F> {
        let symbol: Vec<f64> = self.eigenvalues.iter().map(|l| l + 1.0).collect();
        self.apply(f, &symbol)
    }

    /// Convolution with the mollifier, φₙ = δⁿ ∗ φ.
    pub fn mollify<F: LatticeField>(&self, kernel: &MollifierKernel, phi: &F) -> Result<F> {
        same_grid(&self.grid, &kernel.grid)?;
        self.apply(phi, &kernel.transform)
    }
}

/// Normalized periodized Gaussian of width 1/n, truncated at radius 6/n.
#[derive(Clone, Debug)]
pub struct MollifierKernel {
    grid: Grid,
    n: u32,
    values: Vec<f64>,
    transform: Vec<f64>,
}

impl MollifierKernel {
    pub fn new(lattice: &Lattice, n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidArgument("cutoff n must be positive".into()));
        }
        let grid = *lattice.grid();
        let width = 1.0 / n as f64;
        if width < 2.0 * grid.spacing() {
            log::warn!(
                "mollifier width 1/{n} is below two lattice spacings ({}); φₙ is close to φ",
                grid.spacing()
            );
        }
        let values = kernel_samples(&grid, n);
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        lattice.fft(&mut buf);
        let w = grid.cell_volume();
        let transform = buf.iter().map(|z| z.re * w).collect();
        Ok(Self {
            grid,
            n,
            values,
            transform,
        })
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn width(&self) -> f64 {
        1.0 / self.n as f64
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// κ(x) at each site offset x, with ε^d Σ κ = 1.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// κ̂(k) = ε^d Σₓ κ(x) e^{-2πik·x/N}; real since κ is even, κ̂(0) = 1.
    pub fn transform(&self) -> &[f64] {
        &self.transform
    }

    /// Mollification by direct periodic convolution; O(N^{2d}).
    pub fn convolve_direct(&self, values: &[f64]) -> Vec<f64> {
        let grid = &self.grid;
        let w = grid.cell_volume();
        (0..grid.num_sites())
            .map(|x| {
                (0..grid.num_sites())
                    .map(|y| self.values[grid.translate_back(x, &grid.coords(y))] * values[y])
                    .sum::<f64>()
                    * w
            })
            .collect()
    }
}

fn kernel_samples(grid: &Grid, n: u32) -> Vec<f64> {
    let nf = n as f64;
    let radius = KERNEL_RADIUS / nf;
    let r2max = radius * radius;
    let sites = grid.sites_per_side();
    let l = grid.side_length();
    let eps = grid.spacing();
    // Per axis and coordinate: squared displacements of all images inside the radius.
    let images: Vec<Vec<f64>> = (0..sites)
        .map(|c| {
            let x = c as f64 * eps;
            let reach = (radius / l).ceil() as i64 + 1;
            (-reach..=reach)
                .map(|m| {
                    let r = x + m as f64 * l;
                    r * r
                })
                .filter(|r2| *r2 <= r2max)
                .collect()
        })
        .collect();
    let dim = grid.dim();
    let mut values: Vec<f64> = (0..grid.num_sites())
        .map(|i| {
            let c = grid.coords(i);
            let mut total = 0.0;
            accumulate(&images, &c[..dim], 0.0, r2max, nf, &mut total);
            total
        })
        .collect();
    let mass: f64 = values.iter().sum::<f64>() * grid.cell_volume();
    for v in values.iter_mut() {
        *v /= mass;
    }
    values
}

fn accumulate(images: &[Vec<f64>], coords: &[usize], r2: f64, r2max: f64, n: f64, out: &mut f64) {
    match coords.split_first() {
        None => *out += (-0.5 * n * n * r2).exp(),
        Some((&c, rest)) => {
            for &s in &images[c] {
                if r2 + s <= r2max {
                    accumulate(images, rest, r2 + s, r2max, n, out);
                }
            }
        }
    }
}
