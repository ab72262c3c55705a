//! Empirical large-deviation tools, classical minimizers, concentration
//! probes and the triviality trend experiments of the three regimes.

use serde::{Deserialize, Serialize};

use crate::action::{reduced_action, ActionModel, CaseClassification, RenormSchedule};
use crate::error::{Error, Result};
use crate::lattice::{inner_product, FieldConfig, Lattice, TestFunction};
use crate::sampler::{run_chain, run_chain_with, ChainConfig, SampleStream};
use crate::stats::MomentEstimate;

/// Fewest samples accepted for an empirical log-MGF.
pub const MIN_LOGMGF_SAMPLES: usize = 1000;

/// Tolerance of the discrete convexity checks.
pub const CONVEXITY_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateFunctionTable {
    pub theta_grid: Vec<f64>,
    /// Λ(θ) = log E e^{θY}.
    pub logmgf: Vec<f64>,
    pub y_grid: Vec<f64>,
    /// Λ*(y) = max_θ (θy − Λ(θ)) over the θ grid.
    pub transform: Vec<f64>,
    /// Maximizing θ for each y.
    pub argmax_theta: Vec<f64>,
}

fn ascending(xs: &[f64], what: &str) -> Result<()> {
    if xs.is_empty() || xs.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::InvalidArgument(format!("{what} must be strictly ascending and nonempty")));
    }
    Ok(())
}

/// log E e^{θY} with the largest exponent factored out.
pub fn log_mean_exp(samples: &[f64], theta: f64) -> f64 {
    let shift = samples.iter().map(|y| theta * y).fold(f64::NEG_INFINITY, f64::max);
    let s: f64 = samples.iter().map(|y| (theta * y - shift).exp()).sum();
    shift + (s / samples.len() as f64).ln()
}

/// Λ on a θ grid; `y_grid` and `transform` are left empty.
pub fn empirical_logmgf(samples: &[f64], theta_grid: &[f64]) -> Result<RateFunctionTable> {
    if samples.len() < MIN_LOGMGF_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_LOGMGF_SAMPLES,
            got: samples.len(),
        });
    }
    if let Some(i) = samples.iter().position(|y| !y.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    ascending(theta_grid, "theta grid")?;
    let logmgf = theta_grid
        .iter()
        .map(|&t| if t == 0.0 { 0.0 } else { log_mean_exp(samples, t) })
        .collect();
    Ok(RateFunctionTable {
        theta_grid: theta_grid.to_vec(),
        logmgf,
        y_grid: Vec::new(),
        transform: Vec::new(),
        argmax_theta: Vec::new(),
    })
}

/// Completes `table` with Λ* on `y_grid`.
pub fn legendre_fenchel(mut table: RateFunctionTable, y_grid: &[f64]) -> Result<RateFunctionTable> {
    ascending(y_grid, "y grid")?;
    let mut transform = Vec::with_capacity(y_grid.len());
    let mut argmax = Vec::with_capacity(y_grid.len());
    for &y in y_grid {
        let (best, arg) = table
            .theta_grid
            .iter()
            .zip(&table.logmgf)
            .map(|(t, l)| (t * y - l, *t))
            .fold((f64::NEG_INFINITY, 0.0), |acc, x| if x.0 > acc.0 { x } else { acc });
        transform.push(best);
        argmax.push(arg);
    }
    table.y_grid = y_grid.to_vec();
    table.transform = transform;
    table.argmax_theta = argmax;
    Ok(table)
}

/// Slopes between consecutive points never decrease by more than the tolerance.
pub fn is_convex(grid: &[f64], values: &[f64]) -> bool {
    let slopes: Vec<f64> = grid
        .windows(2)
        .zip(values.windows(2))
        .map(|(x, v)| (v[1] - v[0]) / (x[1] - x[0]))
        .collect();
    grid.windows(3)
        .zip(slopes.windows(2))
        .all(|(x, s)| (s[1] - s[0]) * 0.5 * (x[2] - x[0]) >= -CONVEXITY_TOL)
}

impl RateFunctionTable {
    pub fn logmgf_is_convex(&self) -> bool {
        is_convex(&self.theta_grid, &self.logmgf)
    }

    pub fn transform_is_convex(&self) -> bool {
        is_convex(&self.y_grid, &self.transform)
    }
}

/// E[Y e^{θY}]/E[e^{θY}] for the empirical measure.
pub fn tilted_mean(samples: &[f64], theta: f64) -> f64 {
    tilted_functional_mean(samples, |y| y, theta)
}

/// E[G(Y) e^{θY}]/E[e^{θY}] for the empirical measure.
pub fn tilted_functional_mean(samples: &[f64], g: impl Fn(f64) -> f64, theta: f64) -> f64 {
    let shift = samples.iter().map(|y| theta * y).fold(f64::NEG_INFINITY, f64::max);
    let (mut num, mut den) = (0.0, 0.0);
    for &y in samples {
        let w = (theta * y - shift).exp();
        num += w * g(y);
        den += w;
    }
    num / den
}

/// Constant minimizers of s⁴ + (α − 6)s², the classical potential of the
/// unit-variance Wick quartic plus α times the mass term.
pub fn classical_minimizer(alpha: f64) -> Vec<f64> {
    if alpha < 6.0 {
        let s = (3.0 - alpha / 2.0).sqrt();
        vec![-s, s]
    } else {
        vec![0.0]
    }
}

/// Smallest value of the reduced action over constant fields.
pub fn constant_path_minimum(cls: &CaseClassification, volume: f64) -> f64 {
    let (l, a, b) = (cls.lambda, cls.alpha, cls.beta);
    let at_zero = 3.0 * l - a - b;
    let density = if l > 0.0 && a < 6.0 * l {
        at_zero - (6.0 * l - a).powi(2) / (4.0 * l)
    } else {
        at_zero
    };
    density * volume
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConcentrationReport {
    pub epsilon: f64,
    pub fraction_in_sigma: MomentEstimate,
    pub scale: f64,
    pub min_classical: f64,
    /// log(1 − fraction)/scale, the decay rate of the complement per unit scale.
    pub log_complement_per_scale: f64,
}

/// Fraction of configurations whose reduced action of ψₙ lies within
/// `epsilon` of the constant-path minimum.
pub fn concentration_probe(
    model: &ActionModel,
    stream: &SampleStream,
    epsilon: f64,
) -> Result<ConcentrationReport> {
    let cls = model.classify()?;
    let min = constant_path_minimum(&cls, model.grid().volume());
    let inv = 1.0 / model.wick().c_n.sqrt();
    let hits: Vec<f64> = stream
        .mollified
        .iter()
        .map(|pn| {
            let psi = pn.scaled(inv);
            if reduced_action(&psi, &cls, model.wick()) <= min + epsilon {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    let fraction = MomentEstimate::from_series(&hits)?;
    Ok(ConcentrationReport {
        epsilon,
        fraction_in_sigma: fraction,
        scale: cls.scale,
        min_classical: min,
        log_complement_per_scale: (1.0 - fraction.mean).ln() / cls.scale,
    })
}

/// One cutoff of a mass-dominated scan.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScanPoint {
    pub n: u32,
    pub estimate: MomentEstimate,
    /// (f, f)/|2mₙ − 12gₙcₙ|.
    pub envelope: f64,
    pub ratio_6gc_over_m: f64,
}

/// Checks the mass-dominance conditions 6gₙcₙ/mₙ < 1 and aₙ < mₙ; the free
/// schedule passes trivially.
pub fn validate_case2(lattice: &std::sync::Arc<Lattice>, schedule: &RenormSchedule, n: u32) -> Result<f64> {
    let model = ActionModel::new(lattice.clone(), schedule, n)?;
    let c = model.couplings();
    if c.is_free() {
        return Ok(0.0);
    }
    if !(c.m > 0.0) {
        return Err(Error::Schedule(format!("m at n = {n} must be positive")));
    }
    let ratio = 6.0 * c.g * model.wick().c_n / c.m;
    if ratio >= 1.0 {
        return Err(Error::Schedule(format!("6 g c / m = {ratio:.3} at n = {n}, not below 1")));
    }
    if c.a >= c.m {
        return Err(Error::Schedule(format!("a = {} not below m = {} at n = {n}", c.a, c.m)));
    }
    Ok(ratio)
}

/// Eₙ φ(f)² for each cutoff of a mass-dominated schedule.
pub fn triviality_scan_case2(
    lattice: &std::sync::Arc<Lattice>,
    schedule: &RenormSchedule,
    f: &TestFunction,
    n_list: &[u32],
    chain: &ChainConfig,
) -> Result<Vec<ScanPoint>> {
    let ratios: Vec<f64> = n_list
        .iter()
        .map(|&n| validate_case2(lattice, schedule, n))
        .collect::<Result<_>>()?;
    let ff = inner_product(f, f)?;
    n_list
        .iter()
        .zip(ratios)
        .map(|(&n, ratio)| {
            let model = ActionModel::new(lattice.clone(), schedule, n)?;
            let stream = run_chain(&model, chain)?;
            let series: Vec<f64> = stream
                .samples
                .iter()
                .map(|p| inner_product(p, f).map(|x| x * x))
                .collect::<Result<_>>()?;
            let c = model.couplings();
            Ok(ScanPoint {
                n,
                estimate: MomentEstimate::from_series(&series)?,
                envelope: if c.is_free() {
                    f64::INFINITY
                } else {
                    ff / (2.0 * c.m - 12.0 * c.g * model.wick().c_n).abs()
                },
                ratio_6gc_over_m: ratio,
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradientProbe {
    pub n: u32,
    /// Eₙ ∫|∇ψₙ|² / n².
    pub total: MomentEstimate,
    /// Eₙ |∇ψₙ(x)|² / n² per site.
    pub site_means: Vec<f64>,
    /// No gradient energy in any sample.
    pub degenerate: bool,
}

struct GradientAccumulator {
    n: u32,
    inv_c: f64,
    totals: Vec<f64>,
    sites: Vec<f64>,
}

impl GradientAccumulator {
    fn push(&mut self, grid: &crate::lattice::Grid, phi_n: &[f64]) {
        let g2 = crate::lattice::gradient_square(grid, phi_n);
        let norm = self.inv_c / (self.n as f64).powi(2);
        let mut total = 0.0;
        for (acc, v) in self.sites.iter_mut().zip(&g2) {
            *acc += v * norm;
            total += v;
        }
        self.totals.push(total * grid.cell_volume() * norm);
    }

    fn finish(self) -> Result<GradientProbe> {
        let k = self.totals.len() as f64;
        let total = MomentEstimate::from_series(&self.totals)?;
        Ok(GradientProbe {
            n: self.n,
            degenerate: self.totals.iter().all(|t| *t == 0.0),
            total,
            site_means: self.sites.into_iter().map(|s| s / k).collect(),
        })
    }
}

pub fn gradient_probe(model: &ActionModel, mollified: &[FieldConfig]) -> Result<GradientProbe> {
    let grid = *model.grid();
    let mut acc = GradientAccumulator {
        n: model.n(),
        inv_c: 1.0 / model.wick().c_n,
        totals: Vec::with_capacity(mollified.len()),
        sites: vec![0.0; grid.num_sites()],
    };
    for pn in mollified {
        acc.push(&grid, pn.values());
    }
    acc.finish()
}

/// Runs a chain and accumulates the gradient probe without storing samples.
pub fn gradient_probe_case3(model: &ActionModel, chain: &ChainConfig) -> Result<GradientProbe> {
    let grid = *model.grid();
    let mut acc = GradientAccumulator {
        n: model.n(),
        inv_c: 1.0 / model.wick().c_n,
        totals: Vec::new(),
        sites: vec![0.0; grid.num_sites()],
    };
    run_chain_with(model, chain, |_, pn| acc.push(&grid, pn))?;
    acc.finish()
}

/// Fraction of samples with maxₓ |∇ψₙ(x)| ≤ η.
pub fn sup_gradient_fraction(model: &ActionModel, stream: &SampleStream, eta: f64) -> f64 {
    let grid = *model.grid();
    let inv_c = 1.0 / model.wick().c_n;
    let hits = stream
        .mollified
        .iter()
        .filter(|pn| {
            let g2 = crate::lattice::gradient_square(&grid, pn.values());
            g2.iter().fold(0.0f64, |m, v| m.max(*v)) * inv_c <= eta * eta
        })
        .count();
    hits as f64 / stream.len() as f64
}

#[derive(Clone, Debug, PartialEq)]
pub struct Oscillation {
    /// sign(ψₙ(x)) with 0 mapped to +1.
    pub sign: Vec<f64>,
    /// ξₙ = ψₙ − √(3 − α/2) sₙ.
    pub residual: FieldConfig,
    /// ε^d Σ ξₙ².
    pub residual_l2: f64,
}

pub fn oscillation_decomposition(psi: &FieldConfig, alpha: f64) -> Result<Oscillation> {
    let amp = (3.0 - alpha / 2.0).max(0.0).sqrt();
    let sign: Vec<f64> = psi
        .values()
        .iter()
        .map(|v| if *v < 0.0 { -1.0 } else { 1.0 })
        .collect();
    let xi: Vec<f64> = psi.values().iter().zip(&sign).map(|(v, s)| v - amp * s).collect();
    let residual = FieldConfig::new(*psi.grid(), xi)?;
    let residual_l2 = inner_product(&residual, &residual)?;
    Ok(Oscillation {
        sign,
        residual,
        residual_l2,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VolumeExtraction {
    /// Sites whose value is at most √eps.
    pub kept: Vec<usize>,
    /// Kept fraction of all sites.
    pub coverage: f64,
    /// coverage ≥ 1 − 2√eps.
    pub bound_holds: bool,
}

/// Keeps the sites where a nonnegative mean profile is at most √eps; the
/// profile's spatial mean must not exceed eps.
pub fn lemma53_volume_extraction(site_means: &[f64], eps: f64) -> Result<VolumeExtraction> {
    if site_means.is_empty() {
        return Err(Error::InvalidArgument("empty site profile".into()));
    }
    if !(eps > 0.0) {
        return Err(Error::InvalidArgument(format!("eps must be positive, got {eps}")));
    }
    if let Some(i) = site_means.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "site value {} at {i} is negative or not finite",
            site_means[i]
        )));
    }
    let mean = site_means.iter().sum::<f64>() / site_means.len() as f64;
    if mean > eps {
        return Err(Error::MeanAboveEps { mean, eps });
    }
    let cut = eps.sqrt();
    let kept: Vec<usize> = (0..site_means.len()).filter(|&i| site_means[i] <= cut).collect();
    let coverage = kept.len() as f64 / site_means.len() as f64;
    Ok(VolumeExtraction {
        bound_holds: coverage >= 1.0 - 2.0 * cut,
        kept,
        coverage,
    })
}
