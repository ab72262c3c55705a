//! Residuals of the integration-by-parts identities of the interacting
//! measure, estimated from sample streams.
//!
//! Throughout, f̃ = Cf and σ_f = (f, Cf). Every check builds a per-sample
//! left and right side; the right side may hold exact constants. The
//! combined error is the jackknife error of the difference of the two
//! means over batch means of the joint series, so correlations between the
//! two sides are respected.

use serde::{Deserialize, Serialize};

use crate::action::{ActionModel, Derivatives, Direction};
use crate::error::{Error, Result};
use crate::lattice::{inner_product, FieldConfig, TestFunction};
use crate::sampler::SampleStream;
use crate::stats::{z_score, Batches, MomentEstimate, DEFAULT_BATCHES};

/// Largest |z| accepted by a residual check.
pub const Z_THRESHOLD: f64 = 3.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub identity: String,
    pub lhs: MomentEstimate,
    pub rhs: MomentEstimate,
    pub residual: f64,
    pub combined_err: f64,
    pub z_score: f64,
}

impl ResidualReport {
    pub fn passed(&self) -> bool {
        self.z_score.abs() <= Z_THRESHOLD
    }

    /// Report from per-sample sides recorded at the same times.
    pub fn from_series(identity: &str, lhs: &[f64], rhs: &[f64]) -> Result<Self> {
        let b = Batches::new(&[lhs, rhs], DEFAULT_BATCHES)?;
        let (residual, combined_err) = b.jackknife(|m| m[0] - m[1]);
        Ok(Self::assemble(
            identity,
            MomentEstimate::from_series(lhs)?,
            MomentEstimate::from_series(rhs)?,
            residual,
            combined_err,
        ))
    }

    /// Report from two independent estimates.
    pub fn from_independent(identity: &str, lhs: MomentEstimate, rhs: MomentEstimate) -> Self {
        let err = (lhs.std_err.powi(2) + rhs.std_err.powi(2)).sqrt();
        Self::assemble(identity, lhs, rhs, lhs.mean - rhs.mean, err)
    }

    fn assemble(
        identity: &str,
        lhs: MomentEstimate,
        rhs: MomentEstimate,
        residual: f64,
        combined_err: f64,
    ) -> Self {
        Self {
            identity: identity.to_string(),
            lhs,
            rhs,
            residual,
            combined_err,
            z_score: z_score(residual, combined_err),
        }
    }
}

/// Per-sample sides of an identity.
#[derive(Clone, Debug, Default)]
pub struct SidedSeries {
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
}

impl SidedSeries {
    pub fn report(&self, identity: &str) -> Result<ResidualReport> {
        ResidualReport::from_series(identity, &self.lhs, &self.rhs)
    }

    /// lhs − rhs for every sample.
    pub fn differences(&self) -> Vec<f64> {
        self.lhs.iter().zip(&self.rhs).map(|(a, b)| a - b).collect()
    }
}

pub fn smear_all(samples: &[FieldConfig], f: &TestFunction) -> Result<Vec<f64>> {
    samples.iter().map(|p| inner_product(p, f)).collect()
}

fn check_stream(model: &ActionModel, stream: &SampleStream) -> Result<()> {
    if stream.summary.n != model.n() {
        return Err(Error::InvalidArgument(format!(
            "stream sampled at n = {} but model has n = {}",
            stream.summary.n,
            model.n()
        )));
    }
    if let Some(s) = stream.samples.first() {
        if s.grid() != model.grid() {
            return Err(Error::GridMismatch);
        }
    }
    Ok(())
}

fn covariance_direction(model: &ActionModel, f: &TestFunction) -> Result<Direction> {
    let cf = model.lattice().apply_covariance(f)?;
    Ok(model.direction(&cf))
}

fn sigma(model: &ActionModel, f: &TestFunction) -> Result<f64> {
    inner_product(f, &model.lattice().apply_covariance(f)?)
}

fn derivative_series(model: &ActionModel, stream: &SampleStream, dir: &Direction) -> Vec<Derivatives> {
    stream
        .mollified
        .iter()
        .map(|pn| model.derivatives(pn.values(), dir))
        .collect()
}

/// E₀ D_hφ(f) = E₀ φ(C⁻¹h)φ(f); the left side is the exact (h, f).
pub fn free_ibp_series(
    lattice: &crate::lattice::Lattice,
    f: &TestFunction,
    h: &TestFunction,
    samples: &[FieldConfig],
) -> Result<SidedSeries> {
    let exact = inner_product(h, f)?;
    let cinv_h = lattice.apply_inverse_covariance(h)?;
    let pf = smear_all(samples, f)?;
    let ph = smear_all(samples, &cinv_h)?;
    Ok(SidedSeries {
        lhs: vec![exact; samples.len()],
        rhs: pf.iter().zip(&ph).map(|(a, b)| a * b).collect(),
    })
}

pub fn residual_free_ibp(
    lattice: &crate::lattice::Lattice,
    f: &TestFunction,
    h: &TestFunction,
    samples: &[FieldConfig],
) -> Result<ResidualReport> {
    free_ibp_series(lattice, f, h, samples)?.report("free-ibp")
}

/// Eₙ φ(f)φ(h) = (Cf, h) − Eₙ φ(f) ∂_{Ch}𝒜ₙ.
pub fn mc8b_series(
    model: &ActionModel,
    stream: &SampleStream,
    f: &TestFunction,
    h: &TestFunction,
) -> Result<SidedSeries> {
    check_stream(model, stream)?;
    let ch = model.lattice().apply_covariance(h)?;
    let exact = inner_product(&model.lattice().apply_covariance(f)?, h)?;
    let dir = model.direction(&ch);
    let pf = smear_all(&stream.samples, f)?;
    let ph = smear_all(&stream.samples, h)?;
    let mut out = SidedSeries::default();
    for ((a, b), pn) in pf.iter().zip(&ph).zip(&stream.mollified) {
        out.lhs.push(a * b);
        out.rhs.push(exact - a * model.derivative(pn.values(), &dir));
    }
    Ok(out)
}

pub fn residual_mc8b(
    model: &ActionModel,
    stream: &SampleStream,
    f: &TestFunction,
    h: &TestFunction,
) -> Result<ResidualReport> {
    mc8b_series(model, stream, f, h)?.report("mc8b")
}

/// The h = f case: Eₙ φ(f)² = σ_f − Eₙ φ(f) ∂_{Cf}𝒜ₙ.
pub fn residual_mc8(model: &ActionModel, stream: &SampleStream, f: &TestFunction) -> Result<ResidualReport> {
    mc8b_series(model, stream, f, f)?.report("mc8")
}

/// Eₙ φ(f)^p = (p−1)σ_f Eₙ φ(f)^{p−2} − Eₙ φ(f)^{p−1} ∂_{Cf}𝒜ₙ.
pub fn mc9_series(model: &ActionModel, stream: &SampleStream, f: &TestFunction, p: u32) -> Result<SidedSeries> {
    check_stream(model, stream)?;
    if p < 2 {
        return Err(Error::InvalidArgument(format!("moment order {p} below 2")));
    }
    let s = sigma(model, f)?;
    let dir = covariance_direction(model, f)?;
    let pf = smear_all(&stream.samples, f)?;
    let p = p as i32;
    let mut out = SidedSeries::default();
    for (x, pn) in pf.iter().zip(&stream.mollified) {
        out.lhs.push(x.powi(p));
        let d1 = model.derivative(pn.values(), &dir);
        out.rhs.push((p - 1) as f64 * s * x.powi(p - 2) - x.powi(p - 1) * d1);
    }
    Ok(out)
}

pub fn residual_mc9(model: &ActionModel, stream: &SampleStream, f: &TestFunction, p: u32) -> Result<ResidualReport> {
    mc9_series(model, stream, f, p)?.report(&format!("mc9-p{p}"))
}

/// Eₙ φ(f)² = σ_f + Eₙ[(∂_{Cf}𝒜ₙ)² − ∂²_{Cf}𝒜ₙ].
pub fn residual_mc10(model: &ActionModel, stream: &SampleStream, f: &TestFunction) -> Result<ResidualReport> {
    check_stream(model, stream)?;
    let s = sigma(model, f)?;
    let dir = covariance_direction(model, f)?;
    let pf = smear_all(&stream.samples, f)?;
    let ds = derivative_series(model, stream, &dir);
    let lhs: Vec<f64> = pf.iter().map(|x| x * x).collect();
    let rhs: Vec<f64> = ds.iter().map(|d| s + d.d1 * d.d1 - d.d2).collect();
    ResidualReport::from_series("mc10", &lhs, &rhs)
}

/// Complete Bell polynomials B₀..B_p of x₁..x_p.
fn bell(x: &[f64], p: usize) -> Vec<f64> {
    let mut b = vec![0.0; p + 1];
    b[0] = 1.0;
    for m in 0..p {
        let mut s = 0.0;
        let mut binom = 1.0;
        for k in 0..=m {
            s += binom * b[m - k] * x.get(k).copied().unwrap_or(0.0);
            binom = binom * (m - k) as f64 / (k + 1) as f64;
        }
        b[m + 1] = s;
    }
    b
}

/// E φ(f)^p written through aₖ = ∂ᵏ_{Cf}𝒜ₙ at one configuration and σ_f:
/// Σ_{j even} C(p, j) (j−1)!! σ^{j/2} B_{p−j}(−a₁, −a₂, −a₃, −a₄).
pub fn moment_expansion(p: usize, a: &Derivatives, sigma: f64) -> f64 {
    let x = [-a.d1, -a.d2, -a.d3, -a.d4];
    let b = bell(&x, p);
    let mut total = 0.0;
    let mut binom = 1.0;
    for j in 0..=p {
        if j % 2 == 0 {
            let dfact: f64 = (1..j).step_by(2).map(|k| k as f64).product();
            total += binom * dfact * sigma.powi(j as i32 / 2) * b[p - j];
        }
        binom = binom * (p - j) as f64 / (j + 1) as f64;
    }
    total
}

/// Fourth moment in the explicit derivative form plus its Gaussian terms.
pub fn moment4_terms(a: &Derivatives, sigma: f64) -> f64 {
    let (a1, a2, a3, a4) = (a.d1, a.d2, a.d3, a.d4);
    let main = -a4 + 3.0 * a2 * a2 + 4.0 * a1 * a3 - 6.0 * a2 * a1 * a1 + a1.powi(4);
    main + 3.0 * sigma * sigma + 6.0 * sigma * (a1 * a1 - a2)
}

/// Sixth moment in the explicit derivative form plus its Gaussian terms.
pub fn moment6_terms(a: &Derivatives, sigma: f64) -> f64 {
    let (a1, a2, a3, a4) = (a.d1, a.d2, a.d3, a.d4);
    let s = sigma;
    let main = a1.powi(6) + 15.0 * a2 * a4 - 15.0 * a1 * a1 * a4 + 10.0 * a3 * a3
        - 15.0 * a2.powi(3)
        - 60.0 * a1 * a2 * a3
        + 45.0 * a1 * a1 * a2 * a2
        + 20.0 * a1.powi(3) * a3
        - 15.0 * a1.powi(4) * a2;
    let complementary = 15.0 * s * (a1.powi(4) - a4) + 45.0 * s * a2 * a2 - 45.0 * s * s * a2
        + 15.0 * s.powi(3)
        + 60.0 * s * a1 * a3
        + 45.0 * s * s * a1 * a1
        - 90.0 * s * a1 * a1 * a2;
    main + complementary
}

/// Derivatives at t = 0 of U(t) = 𝒜ₙ(φ + tCf) − 𝒜ₙ(φ) − σ_f t²/2.
pub fn u_derivatives(a: &Derivatives, sigma: f64) -> [f64; 4] {
    [a.d1, a.d2 - sigma, a.d3, a.d4]
}

/// Fourth moment from the derivatives of U, with U⁽ᵏ⁾ = 0 for k > 4.
pub fn moment4_u_form(u: &[f64; 4]) -> f64 {
    let [u1, u2, u3, u4] = *u;
    u1.powi(4) - 6.0 * u1 * u1 * u2 + 4.0 * u1 * u3 + 3.0 * u2 * u2 - u4
}

/// Sixth moment from the derivatives of U, with U⁽ᵏ⁾ = 0 for k > 4.
pub fn moment6_u_form(u: &[f64; 4]) -> f64 {
    let [u1, u2, u3, u4] = *u;
    u1.powi(6) - 15.0 * u1.powi(4) * u2 + 20.0 * u1.powi(3) * u3 + 45.0 * u1 * u1 * u2 * u2
        - 15.0 * u1 * u1 * u4
        - 60.0 * u1 * u2 * u3
        - 15.0 * u2.powi(3)
        + 15.0 * u2 * u4
        + 10.0 * u3 * u3
}

fn moment_series(
    model: &ActionModel,
    stream: &SampleStream,
    f: &TestFunction,
    p: i32,
    terms: fn(&Derivatives, f64) -> f64,
) -> Result<SidedSeries> {
    check_stream(model, stream)?;
    let s = sigma(model, f)?;
    let dir = covariance_direction(model, f)?;
    let pf = smear_all(&stream.samples, f)?;
    let ds = derivative_series(model, stream, &dir);
    Ok(SidedSeries {
        lhs: pf.iter().map(|x| x.powi(p)).collect(),
        rhs: ds.iter().map(|d| terms(d, s)).collect(),
    })
}

pub fn moment4_series(model: &ActionModel, stream: &SampleStream, f: &TestFunction) -> Result<SidedSeries> {
    moment_series(model, stream, f, 4, moment4_terms)
}

pub fn residual_moment4(model: &ActionModel, stream: &SampleStream, f: &TestFunction) -> Result<ResidualReport> {
    moment4_series(model, stream, f)?.report("moment4")
}

pub fn moment6_series(model: &ActionModel, stream: &SampleStream, f: &TestFunction) -> Result<SidedSeries> {
    moment_series(model, stream, f, 6, moment6_terms)
}

pub fn residual_moment6(model: &ActionModel, stream: &SampleStream, f: &TestFunction) -> Result<ResidualReport> {
    moment6_series(model, stream, f)?.report("moment6")
}

/// Eₙ φ(f)φ(C⁻¹h) = (h, f) − Eₙ φ(f)[4g∫:φₙ³:hₙ + 2m∫φₙhₙ − 2a∫φₙΔhₙ].
pub fn if7_series(
    model: &ActionModel,
    stream: &SampleStream,
    f: &TestFunction,
    h: &TestFunction,
) -> Result<SidedSeries> {
    check_stream(model, stream)?;
    let exact = inner_product(h, f)?;
    let cinv_h = model.lattice().apply_inverse_covariance(h)?;
    let dir = model.direction(h);
    let pf = smear_all(&stream.samples, f)?;
    let ph = smear_all(&stream.samples, &cinv_h)?;
    let mut out = SidedSeries::default();
    for ((a, b), pn) in pf.iter().zip(&ph).zip(&stream.mollified) {
        out.lhs.push(a * b);
        out.rhs.push(exact - a * model.derivative_by_parts(pn.values(), &dir));
    }
    Ok(out)
}

pub fn residual_if7(
    model: &ActionModel,
    stream: &SampleStream,
    f: &TestFunction,
    h: &TestFunction,
) -> Result<ResidualReport> {
    if7_series(model, stream, f, h)?.report("if7")
}

/// Per-sample sides of the expanded second dynamic equation for Eₙ(∂_f𝒜ₙ)².
///
/// With A = ∫φₙ³fₙ, B = ∫φₙfₙ, D = ∫φₙΔfₙ and, from integration by parts,
/// Eₙ[B ∂_f𝒜ₙ] = (f, f_nn) − Eₙ[φ(C⁻¹f)B], likewise for D:
/// 16g²[A² − 9c²B²] − 24gc[IB − 2mB² + 2aBD] − 4m²B² − 4a²D² + 8maBD + 4m·IB − 4a·ID.
pub fn second_dyson_series(model: &ActionModel, stream: &SampleStream, f: &TestFunction) -> Result<SidedSeries> {
    check_stream(model, stream)?;
    let grid = *model.grid();
    let w = grid.cell_volume();
    let c = model.couplings();
    let cn = model.wick().c_n;
    let dir = model.direction(f);
    let f_nn = model.mollify_values(&dir.h_n);
    let lap_nn = model.mollify_values(&dir.lap_h_n);
    let dot = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(a, b)| a * b).sum::<f64>() * w;
    let ib_const = dot(f.values(), &f_nn);
    let id_const = dot(f.values(), &lap_nn);
    let cinv_f = model.lattice().apply_inverse_covariance(f)?;
    let pc = smear_all(&stream.samples, &cinv_f)?;
    let mut out = SidedSeries::default();
    for (pn, q) in stream.mollified.iter().zip(&pc) {
        let v = pn.values();
        let a_int = v.iter().zip(&dir.h_n).map(|(p, h)| p * p * p * h).sum::<f64>() * w;
        let b = dot(v, &dir.h_n);
        let d = dot(v, &dir.lap_h_n);
        let ib = ib_const - q * b;
        let id = id_const - q * d;
        let d1 = model.derivative(v, &dir);
        out.lhs.push(d1 * d1);
        let (g, m, a) = (c.g, c.m, c.a);
        out.rhs.push(
            16.0 * g * g * (a_int * a_int - 9.0 * cn * cn * b * b)
                - 24.0 * g * cn * (ib - 2.0 * m * b * b + 2.0 * a * b * d)
                - 4.0 * m * m * b * b
                - 4.0 * a * a * d * d
                + 8.0 * m * a * b * d
                + 4.0 * m * ib
                - 4.0 * a * id,
        );
    }
    Ok(out)
}

pub fn residual_second_dyson(model: &ActionModel, stream: &SampleStream, f: &TestFunction) -> Result<ResidualReport> {
    second_dyson_series(model, stream, f)?.report("second-dyson")
}

/// Eₙ e^{tφ(f)} from the chain against e^{t²σ/2} E₀[e^{−𝒜ₙ(φ+tCf)}]/E₀[e^{−𝒜ₙ(φ)}]
/// from free samples. The two sides are independent.
pub fn generating_functional_check(
    t: f64,
    f: &TestFunction,
    model: &ActionModel,
    stream: &SampleStream,
    free_samples: &[FieldConfig],
) -> Result<ResidualReport> {
    check_stream(model, stream)?;
    let s = sigma(model, f)?;
    let cf = model.lattice().apply_covariance(f)?;
    let pf = smear_all(&stream.samples, f)?;
    let lhs_series: Vec<f64> = pf.iter().map(|x| (t * x).exp()).collect();
    let lhs = MomentEstimate::from_series(&lhs_series)?;
    let shifted: Vec<f64> = free_samples
        .iter()
        .map(|p| model.action(&p.axpy(t, &cf).expect("same grid")).total)
        .collect();
    let plain: Vec<f64> = free_samples.iter().map(|p| model.action(p).total).collect();
    let shift = plain.iter().chain(&shifted).cloned().fold(f64::INFINITY, f64::min);
    let num: Vec<f64> = shifted.iter().map(|a| (shift - a).exp()).collect();
    let den: Vec<f64> = plain.iter().map(|a| (shift - a).exp()).collect();
    let b = Batches::new(&[&num, &den], DEFAULT_BATCHES)?;
    let gauss = (0.5 * t * t * s).exp();
    let (mean, err) = b.jackknife(|m| gauss * m[0] / m[1]);
    let rhs = MomentEstimate {
        mean,
        std_err: err,
        ess: free_samples.len() as f64,
        n_samples: free_samples.len(),
    };
    Ok(ResidualReport::from_independent(&format!("generating-functional-t{t}"), lhs, rhs))
}
