//! Markov chains for the interacting measure dμₙ ∝ e^{−𝒜ₙ} dμ₀, and
//! importance reweighting of free samples.
//!
//! Two chain kernels are available. Single-site random-scan Metropolis
//! updates one site at a time, keeping φₙ current by adding the shifted
//! kernel column. The preconditioned Crank–Nicolson kernel proposes
//! φ' = ρφ + √(1−ρ²)ξ with ξ drawn from a Gaussian that absorbs the
//! positive quadratic parts of 𝒜ₙ, so that only the remaining terms enter
//! the acceptance ratio; it is exact and independent when 𝒜ₙ is quadratic.

use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::action::{field_integrals, ActionModel};
use crate::error::{Error, Result};
use crate::lattice::{Coords, FieldConfig, Grid, Lattice};
use crate::rng::{stream_rng, StreamRng};
use crate::stats::{Batches, MomentEstimate, DEFAULT_BATCHES};

/// Acceptance rate the burn-in adaptation aims for.
pub const TARGET_ACCEPTANCE: f64 = 0.4;

/// Weight effective sample size below which reweighting is flagged.
pub const MIN_WEIGHT_ESS: f64 = 50.0;

/// Sweeps between exact recomputations of φₙ in the incremental kernels.
const REFRESH_INTERVAL: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum UpdateKind {
    /// Single-site Metropolis with incremental kernel-column updates.
    SingleSite,
    /// Single-site Metropolis recomputing φₙ and 𝒜ₙ for every proposal.
    SingleSiteRecompute,
    /// Preconditioned Crank–Nicolson moves of the whole field.
    Pcn,
}

/// Chain settings. The grid, schedule and cutoff come from the
/// [`ActionModel`] the chain samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    /// Total sweeps, burn-in included. For the pCN kernel one sweep is one move.
    pub steps: usize,
    pub burn_in: usize,
    /// Gaussian proposal σ for single-site moves; initial step β ∈ (0, 1] for pCN.
    pub proposal_width: f64,
    pub seed: u64,
    pub chain_id: u64,
    /// Keep one configuration every `thinning` sweeps after burn-in.
    pub thinning: usize,
    pub kernel: UpdateKind,
    /// Adapt the proposal during burn-in, then freeze it.
    pub tune: bool,
}

impl ChainConfig {
    pub fn new(steps: usize, burn_in: usize, seed: u64) -> Self {
        Self {
            steps,
            burn_in,
            proposal_width: 0.5,
            seed,
            chain_id: 0,
            thinning: 1,
            kernel: UpdateKind::Pcn,
            tune: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.steps {
            return Err(Error::Chain(format!(
                "burn_in {} must be below steps {}",
                self.burn_in, self.steps
            )));
        }
        if !(self.proposal_width > 0.0 && self.proposal_width.is_finite()) {
            return Err(Error::Chain(format!(
                "proposal_width must be positive, got {}",
                self.proposal_width
            )));
        }
        if self.thinning == 0 {
            return Err(Error::Chain("thinning must be at least 1".into()));
        }
        Ok(())
    }

    pub fn kept_samples(&self) -> usize {
        self.steps.saturating_sub(self.burn_in) / self.thinning.max(1)
    }
}

/// Summary of a finished chain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainSummary {
    pub seed: u64,
    pub chain_id: u64,
    pub n: u32,
    pub kernel: UpdateKind,
    /// Acceptance rate after burn-in.
    pub acceptance_rate: f64,
    /// Proposal parameter used after burn-in.
    pub proposal_width: f64,
    pub kept: usize,
    pub warnings: Vec<String>,
}

/// Thinned configurations of a chain together with their mollifications.
#[derive(Clone, Debug)]
pub struct SampleStream {
    pub summary: ChainSummary,
    pub samples: Vec<FieldConfig>,
    pub mollified: Vec<FieldConfig>,
}

impl SampleStream {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Concatenates streams, e.g. several seeds of one configuration.
    pub fn concat(streams: Vec<SampleStream>) -> Result<SampleStream> {
        let mut iter = streams.into_iter();
        let mut out = iter
            .next()
            .ok_or_else(|| Error::InvalidArgument("no streams to concatenate".into()))?;
        for s in iter {
            let total = out.summary.kept + s.summary.kept;
            out.summary.acceptance_rate = (out.summary.acceptance_rate * out.summary.kept as f64
                + s.summary.acceptance_rate * s.summary.kept as f64)
                / total.max(1) as f64;
            out.summary.kept = total;
            out.summary.warnings.extend(s.summary.warnings);
            out.samples.extend(s.samples);
            out.mollified.extend(s.mollified);
        }
        Ok(out)
    }
}

/// Q₀(φ) = ε^d Σₓ [Σᵢ (∂ᵢφ)² + φ²], the free quadratic form.
pub fn free_quadratic_form(grid: &Grid, phi: &[f64]) -> f64 {
    let ints = field_integrals(grid, phi);
    ints.gradient + ints.square
}

/// Gradient of −½Q₀ with respect to the site values: −ε^d (−Δ + 1)φ.
pub fn free_log_density_gradient(grid: &Grid, phi: &[f64]) -> Vec<f64> {
    let lap = crate::lattice::laplacian_values(grid, phi);
    let w = grid.cell_volume();
    phi.iter().zip(lap).map(|(p, l)| -w * (p - l)).collect()
}

/// log of the density of μₙ with respect to Lebesgue measure on the sites,
/// up to an additive constant: −½Q₀(φ) − 𝒜ₙ(φ).
pub fn target_log_density(model: &ActionModel, phi: &FieldConfig) -> f64 {
    -0.5 * free_quadratic_form(model.grid(), phi.values()) - model.action(phi).total
}

pub fn run_chain(model: &ActionModel, cfg: &ChainConfig) -> Result<SampleStream> {
    let mut samples = Vec::with_capacity(cfg.kept_samples());
    let mut mollified = Vec::with_capacity(cfg.kept_samples());
    let grid = *model.grid();
    let summary = run_chain_with(model, cfg, |phi, phi_n| {
        samples.push(FieldConfig::new(grid, phi.to_vec()).expect("finite chain state"));
        mollified.push(FieldConfig::new(grid, phi_n.to_vec()).expect("finite chain state"));
    })?;
    Ok(SampleStream {
        summary,
        samples,
        mollified,
    })
}

/// Runs a chain and hands every kept (φ, φₙ) to `observe` instead of storing it.
pub fn run_chain_with(
    model: &ActionModel,
    cfg: &ChainConfig,
    mut observe: impl FnMut(&[f64], &[f64]),
) -> Result<ChainSummary> {
    cfg.validate()?;
    let mut rng = stream_rng(cfg.seed, cfg.chain_id);
    let mut kernel: Box<dyn ChainKernel> = match cfg.kernel {
        UpdateKind::Pcn => Box::new(Pcn::new(model, cfg.proposal_width.min(1.0), &mut rng)),
        UpdateKind::SingleSite | UpdateKind::SingleSiteRecompute => Box::new(SingleSite::new(
            model,
            cfg.proposal_width,
            cfg.kernel == UpdateKind::SingleSiteRecompute,
            &mut rng,
        )),
    };
    let window = 10;
    let (mut acc_win, mut tried_win) = (0usize, 0usize);
    let (mut accepted, mut tried) = (0usize, 0usize);
    let mut kept = 0;
    for sweep in 0..cfg.steps {
        let (a, t) = kernel.sweep(&mut rng);
        if sweep < cfg.burn_in {
            acc_win += a;
            tried_win += t;
            if cfg.tune && (sweep + 1) % window == 0 {
                let rate = acc_win as f64 / tried_win.max(1) as f64;
                kernel.adapt(rate);
                acc_win = 0;
                tried_win = 0;
            }
        } else {
            accepted += a;
            tried += t;
            if (sweep - cfg.burn_in + 1).is_multiple_of(cfg.thinning) {
                let (phi, phi_n) = kernel.state();
                observe(phi, phi_n);
                kept += 1;
            }
        }
        if (sweep + 1) % REFRESH_INTERVAL == 0 {
            kernel.refresh();
        }
    }
    let acceptance_rate = accepted as f64 / tried.max(1) as f64;
    let mut warnings = Vec::new();
    if !(0.05..=0.95).contains(&acceptance_rate) {
        let suggested = kernel.suggest(acceptance_rate);
        let msg = format!(
            "acceptance rate {acceptance_rate:.3} outside [0.05, 0.95]; try proposal_width {suggested:.4}"
        );
        // Independent proposals at β = 1 are the ideal pCN regime, not a problem.
        if !(cfg.kernel == UpdateKind::Pcn && kernel.width() >= 1.0 && acceptance_rate > 0.95) {
            log::warn!("{msg}");
            warnings.push(msg);
        }
    }
    Ok(ChainSummary {
        seed: cfg.seed,
        chain_id: cfg.chain_id,
        n: model.n(),
        kernel: cfg.kernel,
        acceptance_rate,
        proposal_width: kernel.width(),
        kept,
        warnings,
    })
}

/// Runs `chains` independent chains with ids `cfg.chain_id + k`.
pub fn run_chains(model: &ActionModel, cfg: &ChainConfig, chains: usize) -> Result<Vec<SampleStream>> {
    (0..chains as u64)
        .map(|k| {
            let c = ChainConfig {
                chain_id: cfg.chain_id + k,
                ..cfg.clone()
            };
            run_chain(model, &c)
        })
        .collect()
}

trait ChainKernel {
    /// One sweep; returns (accepted, proposed).
    fn sweep(&mut self, rng: &mut StreamRng) -> (usize, usize);
    fn adapt(&mut self, rate: f64);
    fn width(&self) -> f64;
    fn suggest(&self, rate: f64) -> f64;
    fn state(&self) -> (&[f64], &[f64]);
    fn refresh(&mut self);
}

/// Reference precision per mode: the free part plus the positive quadratic
/// couplings of the action.
fn reference_precision(model: &ActionModel) -> Vec<f64> {
    let c = model.couplings();
    let (m, a) = (c.m.max(0.0), c.a.max(0.0));
    model
        .lattice()
        .laplacian_eigenvalues()
        .iter()
        .zip(model.kernel().transform())
        .map(|(lam, k)| lam + 1.0 + 2.0 * k * k * (m + a * lam))
        .collect()
}

/// Draws ξ from the reference Gaussian and returns (ξ, ξₙ).
fn reference_draw(
    lattice: &Lattice,
    scale: &[f64],
    kernel_hat: &[f64],
    rng: &mut StreamRng,
) -> (Vec<f64>, Vec<f64>) {
    let mut buf: Vec<Complex64> = (0..scale.len())
        .map(|_| Complex64::new(rng.sample(StandardNormal), 0.0))
        .collect();
    lattice.fft(&mut buf);
    for ((z, s), k) in buf.iter_mut().zip(scale).zip(kernel_hat) {
        *z = Complex64::new(z.re * s - z.im * s * k, z.im * s + z.re * s * k);
    }
    lattice.ifft(&mut buf);
    buf.into_iter().map(|z| (z.re, z.im)).unzip()
}

struct Pcn<'a> {
    model: &'a ActionModel,
    scale: Vec<f64>,
    beta: f64,
    phi: Vec<f64>,
    phi_n: Vec<f64>,
    residual: f64,
    m_plus: f64,
    a_plus: f64,
}

impl<'a> Pcn<'a> {
    fn new(model: &'a ActionModel, beta: f64, rng: &mut StreamRng) -> Self {
        let norm = model.grid().cell_volume().sqrt();
        let scale: Vec<f64> = reference_precision(model)
            .iter()
            .map(|p| 1.0 / (norm * p.sqrt()))
            .collect();
        let (phi, phi_n) = reference_draw(model.lattice(), &scale, model.kernel().transform(), rng);
        let c = model.couplings();
        let mut s = Self {
            model,
            scale,
            beta,
            phi,
            phi_n,
            residual: 0.0,
            m_plus: c.m.max(0.0),
            a_plus: c.a.max(0.0),
        };
        s.residual = s.residual_of(&s.phi_n);
        s
    }

    /// 𝒜ₙ minus the quadratic pieces carried by the reference measure.
    fn residual_of(&self, phi_n: &[f64]) -> f64 {
        let ints = field_integrals(self.model.grid(), phi_n);
        self.model.from_integrals(&ints).total
            - self.m_plus * ints.square
            - self.a_plus * ints.gradient
    }
}

impl ChainKernel for Pcn<'_> {
    fn sweep(&mut self, rng: &mut StreamRng) -> (usize, usize) {
        let (xi, xi_n) = reference_draw(
            self.model.lattice(),
            &self.scale,
            self.model.kernel().transform(),
            rng,
        );
        let rho = (1.0 - self.beta * self.beta).max(0.0).sqrt();
        let b = self.beta;
        let prop: Vec<f64> = self.phi.iter().zip(&xi).map(|(p, x)| rho * p + b * x).collect();
        let prop_n: Vec<f64> = self.phi_n.iter().zip(&xi_n).map(|(p, x)| rho * p + b * x).collect();
        let r = self.residual_of(&prop_n);
        let log_ratio = self.residual - r;
        let u: f64 = rng.random();
        if log_ratio >= 0.0 || u < log_ratio.exp() {
            self.phi = prop;
            self.phi_n = prop_n;
            self.residual = r;
            (1, 1)
        } else {
            (0, 1)
        }
    }

    fn adapt(&mut self, rate: f64) {
        self.beta = (self.beta * (rate - TARGET_ACCEPTANCE).exp()).clamp(1e-4, 1.0);
    }

    fn width(&self) -> f64 {
        self.beta
    }

    fn suggest(&self, rate: f64) -> f64 {
        (self.beta * (rate - TARGET_ACCEPTANCE).exp()).min(1.0)
    }

    fn state(&self) -> (&[f64], &[f64]) {
        (&self.phi, &self.phi_n)
    }

    fn refresh(&mut self) {
        self.phi_n = self.model.mollify_values(&self.phi);
        self.residual = self.residual_of(&self.phi_n);
    }
}

struct SingleSite<'a> {
    model: &'a ActionModel,
    sigma: f64,
    recompute: bool,
    phi: Vec<f64>,
    phi_n: Vec<f64>,
    /// Kernel column ε^d κ(x), as (offset, weight).
    column: Vec<(Coords, f64)>,
    /// Forward differences of the column, as (offset, ∂w per axis).
    grad_column: Vec<(Coords, [f64; 4])>,
    grad_column_sq: f64,
    action: f64,
}

impl<'a> SingleSite<'a> {
    fn new(model: &'a ActionModel, sigma: f64, recompute: bool, rng: &mut StreamRng) -> Self {
        let grid = *model.grid();
        let w = grid.cell_volume();
        let kv = model.kernel().values();
        let col: Vec<f64> = kv.iter().map(|k| k * w).collect();
        let column: Vec<(Coords, f64)> = (0..grid.num_sites())
            .filter(|&i| col[i] != 0.0)
            .map(|i| (grid.coords(i), col[i]))
            .collect();
        let inv = 1.0 / grid.spacing();
        let mut grad_column = Vec::new();
        let mut grad_column_sq = 0.0;
        for i in 0..grid.num_sites() {
            let mut dw = [0.0; 4];
            for (axis, d) in dw.iter_mut().enumerate().take(grid.dim()) {
                *d = (col[grid.neighbor(i, axis, 1)] - col[i]) * inv;
            }
            if dw.iter().any(|d| *d != 0.0) {
                grad_column_sq += dw.iter().map(|d| d * d).sum::<f64>();
                grad_column.push((grid.coords(i), dw));
            }
        }
        let norm = grid.cell_volume().sqrt();
        let scale: Vec<f64> = reference_precision(model)
            .iter()
            .map(|p| 1.0 / (norm * p.sqrt()))
            .collect();
        let (phi, phi_n) = reference_draw(model.lattice(), &scale, model.kernel().transform(), rng);
        let action = model.action_mollified(&phi_n).total;
        Self {
            model,
            sigma,
            recompute,
            phi,
            phi_n,
            column,
            grad_column,
            grad_column_sq,
            action,
        }
    }

    /// Change of ½Q₀ when φ(y) moves by δ.
    fn half_quad_change(&self, y: usize, delta: f64) -> f64 {
        let grid = self.model.grid();
        let eps = grid.spacing();
        let p = self.phi[y];
        let mut grad = 0.0;
        for axis in 0..grid.dim() {
            let up = self.phi[grid.neighbor(y, axis, 1)];
            let down = self.phi[grid.neighbor(y, axis, -1)];
            grad += 2.0 * delta * (2.0 * p - up - down) + 2.0 * delta * delta;
        }
        0.5 * grid.cell_volume() * (grad / (eps * eps) + 2.0 * p * delta + delta * delta)
    }

    /// Change of 𝒜ₙ when φ(y) moves by δ, from the kernel column.
    fn action_change(&self, y: usize, delta: f64) -> f64 {
        let grid = self.model.grid();
        let c = self.model.couplings();
        let cn = self.model.wick().c_n;
        let mut local = 0.0;
        if c.g != 0.0 || c.m != 0.0 {
            for (off, w) in &self.column {
                let x = grid.translate(y, off);
                let p = self.phi_n[x];
                let q = p + delta * w;
                let (p2, q2) = (p * p, q * q);
                local += c.g * (q2 * q2 - p2 * p2 - 6.0 * cn * (q2 - p2)) + c.m * (q2 - p2);
            }
        }
        if c.a != 0.0 {
            let inv = 1.0 / grid.spacing();
            let mut cross = 0.0;
            for (off, dw) in &self.grad_column {
                let x = grid.translate(y, off);
                let p = self.phi_n[x];
                for (axis, d) in dw.iter().enumerate().take(grid.dim()) {
                    let dp = (self.phi_n[grid.neighbor(x, axis, 1)] - p) * inv;
                    cross += dp * d;
                }
            }
            local += c.a * (2.0 * delta * cross + delta * delta * self.grad_column_sq);
        }
        local * grid.cell_volume()
    }
}

impl ChainKernel for SingleSite<'_> {
    fn sweep(&mut self, rng: &mut StreamRng) -> (usize, usize) {
        let grid = *self.model.grid();
        let sites = grid.num_sites();
        let mut accepted = 0;
        for _ in 0..sites {
            let y = rng.random_range(0..sites);
            let delta: f64 = self.sigma * rng.sample::<f64, _>(StandardNormal);
            let (d_action, new_state) = if self.recompute {
                let mut trial = self.phi.clone();
                trial[y] += delta;
                let trial_n = self.model.mollify_values(&trial);
                let a = self.model.action_mollified(&trial_n).total;
                (a - self.action, Some((trial, trial_n, a)))
            } else {
                (self.action_change(y, delta), None)
            };
            let log_ratio = -self.half_quad_change(y, delta) - d_action;
            let u: f64 = rng.random();
            if log_ratio >= 0.0 || u < log_ratio.exp() {
                accepted += 1;
                match new_state {
                    Some((trial, trial_n, a)) => {
                        self.phi = trial;
                        self.phi_n = trial_n;
                        self.action = a;
                    }
                    None => {
                        self.phi[y] += delta;
                        for (off, w) in &self.column {
                            let x = grid.translate(y, off);
                            self.phi_n[x] += delta * w;
                        }
                        self.action += d_action;
                    }
                }
            }
        }
        (accepted, sites)
    }

    fn adapt(&mut self, rate: f64) {
        self.sigma *= (2.0 * (rate - TARGET_ACCEPTANCE)).exp();
    }

    fn width(&self) -> f64 {
        self.sigma
    }

    fn suggest(&self, rate: f64) -> f64 {
        self.sigma * (2.0 * (rate - TARGET_ACCEPTANCE)).exp()
    }

    fn state(&self) -> (&[f64], &[f64]) {
        (&self.phi, &self.phi_n)
    }

    fn refresh(&mut self) {
        if !self.recompute {
            self.phi_n = self.model.mollify_values(&self.phi);
            self.action = self.model.action_mollified(&self.phi_n).total;
        }
    }
}

/// Ratio estimate E₀[Y e^{−𝒜}]/E₀[e^{−𝒜}] with its weight diagnostics.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Reweighted {
    pub estimate: MomentEstimate,
    /// (Σw)²/Σw² of the normalized weights.
    pub weight_ess: f64,
    pub reliable: bool,
}

/// Reweights free samples to μₙ given 𝒜ₙ and Y per sample.
pub fn reweight(actions: &[f64], observable: &[f64]) -> Result<Reweighted> {
    if actions.len() != observable.len() {
        return Err(Error::InvalidArgument("action and observable lengths differ".into()));
    }
    let shift = actions.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = actions.iter().map(|a| (shift - a).exp()).collect();
    let wy: Vec<f64> = w.iter().zip(observable).map(|(w, y)| w * y).collect();
    let b = Batches::new(&[&wy, &w], DEFAULT_BATCHES)?;
    let (mean, std_err) = b.jackknife(|m| m[0] / m[1]);
    let sw: f64 = w.iter().sum();
    let sw2: f64 = w.iter().map(|x| x * x).sum();
    let weight_ess = sw * sw / sw2;
    let reliable = weight_ess >= MIN_WEIGHT_ESS;
    if !reliable {
        log::warn!("reweighting weight ESS {weight_ess:.1} below {MIN_WEIGHT_ESS}");
    }
    let n = actions.len();
    Ok(Reweighted {
        estimate: MomentEstimate {
            mean,
            std_err,
            ess: weight_ess.clamp(1.0, n as f64),
            n_samples: n,
        },
        weight_ess,
        reliable,
    })
}

pub fn reweighted_expectation(
    model: &ActionModel,
    free_samples: &[FieldConfig],
    observable: impl Fn(&FieldConfig) -> f64,
) -> Result<Reweighted> {
    let actions: Vec<f64> = free_samples.iter().map(|p| model.action(p).total).collect();
    let ys: Vec<f64> = free_samples.iter().map(observable).collect();
    reweight(&actions, &ys)
}

/// Zₙ = E₀ e^{−𝒜ₙ}, computed with the exponent shifted by min 𝒜ₙ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PartitionEstimate {
    /// Z itself; may overflow for large negative actions, unlike `log_z`.
    pub z: MomentEstimate,
    pub log_z: f64,
    /// Standard error of log Z by the delta method.
    pub log_z_err: f64,
}

pub fn estimate_z_from_actions(actions: &[f64]) -> Result<PartitionEstimate> {
    if let Some(i) = actions.iter().position(|a| !a.is_finite()) {
        return Err(Error::NonFinite(i));
    }
    let shift = actions.iter().cloned().fold(f64::INFINITY, f64::min);
    let w: Vec<f64> = actions.iter().map(|a| (shift - a).exp()).collect();
    let e = MomentEstimate::from_series(&w)?;
    let log_z = e.mean.ln() - shift;
    let factor = (-shift).exp();
    Ok(PartitionEstimate {
        z: MomentEstimate {
            mean: e.mean * factor,
            std_err: e.std_err * factor,
            ..e
        },
        log_z,
        log_z_err: e.std_err / e.mean,
    })
}

pub fn estimate_z(model: &ActionModel, free_samples: &[FieldConfig]) -> Result<PartitionEstimate> {
    let actions: Vec<f64> = free_samples.iter().map(|p| model.action(p).total).collect();
    estimate_z_from_actions(&actions)
}

/// Shared lattice handle for callers building several models.
pub fn shared_lattice(grid: Grid) -> Arc<Lattice> {
    Arc::new(Lattice::new(grid))
}
