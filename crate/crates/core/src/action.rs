//! Renormalization schedules, the Wick-ordered regularized action, its
//! reduced and classical forms, block variables and directional derivatives.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::free_field::WickConstants;
use crate::lattice::{FieldConfig, Grid, Lattice, MollifierKernel, TestFunction};

/// Relative tolerance used when comparing the three dominance scales.
pub const TIE_TOLERANCE: f64 = 1e-12;

/// A coupling sequence n ↦ value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Sequence {
    /// The same value at every cutoff.
    Value(f64),
    /// base · n^exponent
    Power { base: f64, exponent: f64 },
    /// Explicit values keyed by n.
    Table { table: BTreeMap<String, f64> },
}

impl Sequence {
    pub fn constant(value: f64) -> Self {
        Sequence::Power {
            base: value,
            exponent: 0.0,
        }
    }

    pub fn power(base: f64, exponent: f64) -> Self {
        Sequence::Power { base, exponent }
    }

    pub fn table(entries: &[(u32, f64)]) -> Self {
        Sequence::Table {
            table: entries.iter().map(|(n, v)| (n.to_string(), *v)).collect(),
        }
    }

    pub fn at(&self, n: u32) -> Result<f64> {
        let v = match self {
            Sequence::Value(v) => *v,
            Sequence::Power { base, exponent } => base * (n as f64).powf(*exponent),
            Sequence::Table { table } => {
                let mut found = None;
                for (k, v) in table {
                    let key: u32 = k
                        .trim()
                        .parse()
                        .map_err(|_| Error::Schedule(format!("table key `{k}` is not a cutoff")))?;
                    if key == n {
                        found = Some(*v);
                    }
                }
                found.ok_or_else(|| Error::Schedule(format!("no table entry for n = {n}")))?
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Schedule(format!("value at n = {n} is not finite")))
        }
    }

    /// Multiplies every value by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        match self {
            Sequence::Value(v) => Sequence::Value(v * factor),
            Sequence::Power { base, exponent } => Sequence::Power {
                base: base * factor,
                exponent: *exponent,
            },
            Sequence::Table { table } => Sequence::Table {
                table: table.iter().map(|(k, v)| (k.clone(), v * factor)).collect(),
            },
        }
    }

    fn label(&self) -> String {
        match self {
            Sequence::Value(v) => format!("{v}"),
            Sequence::Power { base, exponent } if *exponent == 0.0 => format!("{base}"),
            Sequence::Power { base, exponent } => format!("{base}n^{exponent}"),
            Sequence::Table { table } => {
                let parts: Vec<String> = table.iter().map(|(k, v)| format!("{k}:{v}")).collect();
                format!("[{}]", parts.join(","))
            }
        }
    }
}

/// Coupling gₙ, mass counterterm mₙ and wave counterterm aₙ as sequences.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenormSchedule {
    pub g: Sequence,
    pub m: Sequence,
    pub a: Sequence,
}

/// Couplings at one cutoff.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Couplings {
    pub g: f64,
    pub m: f64,
    pub a: f64,
}

impl Couplings {
    pub fn is_free(&self) -> bool {
        self.g == 0.0 && self.m == 0.0 && self.a == 0.0
    }
}

impl RenormSchedule {
    pub fn free() -> Self {
        Self::constant(0.0, 0.0, 0.0)
    }

    pub fn constant(g: f64, m: f64, a: f64) -> Self {
        Self {
            g: Sequence::constant(g),
            m: Sequence::constant(m),
            a: Sequence::constant(a),
        }
    }

    pub fn couplings(&self, n: u32) -> Result<Couplings> {
        let g = self.g.at(n)?;
        if g < 0.0 {
            return Err(Error::Schedule(format!("g at n = {n} is negative ({g})")));
        }
        Ok(Couplings {
            g,
            m: self.m.at(n)?,
            a: self.a.at(n)?,
        })
    }

    /// The same schedule with every coupling multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            g: self.g.scaled(factor),
            m: self.m.scaled(factor),
            a: self.a.scaled(factor),
        }
    }

    /// Short identifier used in report rows.
    pub fn id(&self) -> String {
        format!("g={};m={};a={}", self.g.label(), self.m.label(), self.a.label())
    }
}

/// Which of the three scale products dominates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Case {
    /// gₙcₙ² largest.
    Quartic,
    /// mₙcₙ largest.
    Mass,
    /// aₙcₙdₙ largest.
    Gradient,
}

impl Case {
    pub fn tag(&self) -> u8 {
        match self {
            Case::Quartic => 1,
            Case::Mass => 2,
            Case::Gradient => 3,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CaseClassification {
    pub case: Case,
    pub lambda: f64,
    pub alpha: f64,
    pub beta: f64,
    pub scale: f64,
}

/// Picks the dominant scale with ties resolved in the order 1, 2, 3.
pub fn classify_case(couplings: &Couplings, wick: &WickConstants) -> Result<CaseClassification> {
    let c = wick.c_n;
    let s = [
        couplings.g * c * c,
        couplings.m * c,
        couplings.a * c * wick.d_n,
    ];
    if s.iter().all(|v| *v == 0.0) {
        return Err(Error::FreeTheory);
    }
    let beats = |x: f64, y: f64| x >= y - TIE_TOLERANCE * x.abs().max(y.abs());
    let case = if beats(s[0], s[1]) && beats(s[0], s[2]) {
        Case::Quartic
    } else if beats(s[1], s[2]) {
        Case::Mass
    } else {
        Case::Gradient
    };
    let scale = s[case.tag() as usize - 1];
    if !(scale > 0.0) {
        return Err(Error::Schedule(format!(
            "largest scale product {scale} is not positive"
        )));
    }
    let mut r = [s[0] / scale, s[1] / scale, s[2] / scale];
    r[case.tag() as usize - 1] = 1.0;
    Ok(CaseClassification {
        case,
        lambda: r[0],
        alpha: r[1],
        beta: r[2],
        scale,
    })
}

/// Contributions to 𝒜ₙ.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionBreakdown {
    pub quartic: f64,
    pub mass: f64,
    pub gradient: f64,
    /// Value at φ = 0, already contained in the three terms above.
    pub vacuum: f64,
    pub total: f64,
}

/// Raw integrals ∫φₙ⁴, ∫φₙ², ∫|∇φₙ|² of a mollified field.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldIntegrals {
    pub fourth: f64,
    pub square: f64,
    pub gradient: f64,
}

pub fn field_integrals(grid: &Grid, phi_n: &[f64]) -> FieldIntegrals {
    let inv = 1.0 / grid.spacing();
    let (mut p4, mut p2, mut g2) = (0.0, 0.0, 0.0);
    for (i, &p) in phi_n.iter().enumerate() {
        let q = p * p;
        p2 += q;
        p4 += q * q;
        for axis in 0..grid.dim() {
            let d = (phi_n[grid.neighbor(i, axis, 1)] - p) * inv;
            g2 += d * d;
        }
    }
    let w = grid.cell_volume();
    FieldIntegrals {
        fourth: p4 * w,
        square: p2 * w,
        gradient: g2 * w,
    }
}

/// A test direction h with its mollified derivatives precomputed.
#[derive(Clone, Debug)]
pub struct Direction {
    pub h: Vec<f64>,
    pub h_n: Vec<f64>,
    /// Forward differences of hₙ, one vector per axis.
    pub grad_h_n: Vec<Vec<f64>>,
    /// Δhₙ.
    pub lap_h_n: Vec<f64>,
}

/// ∂ₕ^k 𝒜ₙ for k = 1..4.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Derivatives {
    pub d1: f64,
    pub d2: f64,
    pub d3: f64,
    pub d4: f64,
}

/// The regularized action at one cutoff on one lattice.
#[derive(Clone, Debug)]
pub struct ActionModel {
    lattice: Arc<Lattice>,
    kernel: MollifierKernel,
    wick: WickConstants,
    couplings: Couplings,
}

impl ActionModel {
    pub fn new(lattice: Arc<Lattice>, schedule: &RenormSchedule, n: u32) -> Result<Self> {
        let couplings = schedule.couplings(n)?;
        Self::with_couplings(lattice, couplings, n)
    }

    pub fn with_couplings(lattice: Arc<Lattice>, couplings: Couplings, n: u32) -> Result<Self> {
        let kernel = MollifierKernel::new(&lattice, n)?;
        let wick = WickConstants::new(&lattice, &kernel);
        Ok(Self {
            lattice,
            kernel,
            wick,
            couplings,
        })
    }

    pub fn lattice(&self) -> &Arc<Lattice> {
        &self.lattice
    }

    pub fn grid(&self) -> &Grid {
        self.lattice.grid()
    }

    pub fn kernel(&self) -> &MollifierKernel {
        &self.kernel
    }

    pub fn wick(&self) -> &WickConstants {
        &self.wick
    }

    pub fn couplings(&self) -> &Couplings {
        &self.couplings
    }

    pub fn n(&self) -> u32 {
        self.kernel.n()
    }

    pub fn classify(&self) -> Result<CaseClassification> {
        classify_case(&self.couplings, &self.wick)
    }

    pub fn mollify(&self, phi: &FieldConfig) -> FieldConfig {
        self.lattice
            .mollify(&self.kernel, phi)
            .expect("field lives on the model lattice")
    }

    pub fn mollify_values(&self, values: &[f64]) -> Vec<f64> {
        self.lattice.apply_symbol(values, self.kernel.transform())
    }

    /// ψₙ = φₙ/√cₙ.
    pub fn psi(&self, phi: &FieldConfig) -> FieldConfig {
        self.mollify(phi).scaled(1.0 / self.wick.c_n.sqrt())
    }

    /// 𝒜ₙ at φ = 0.
    pub fn vacuum(&self) -> f64 {
        let Couplings { g, m, a } = self.couplings;
        let c = self.wick.c_n;
        (3.0 * g * c * c - m * c - a * self.wick.grad_var) * self.grid().volume()
    }

    pub fn action(&self, phi: &FieldConfig) -> ActionBreakdown {
        self.action_mollified(self.mollify(phi).values())
    }

    pub fn action_mollified(&self, phi_n: &[f64]) -> ActionBreakdown {
        self.from_integrals(&field_integrals(self.grid(), phi_n))
    }

    pub fn from_integrals(&self, ints: &FieldIntegrals) -> ActionBreakdown {
        let Couplings { g, m, a } = self.couplings;
        let c = self.wick.c_n;
        let vol = self.grid().volume();
        let quartic = g * (ints.fourth - 6.0 * c * ints.square + 3.0 * c * c * vol);
        let mass = m * (ints.square - c * vol);
        let gradient = a * (ints.gradient - self.wick.grad_var * vol);
        ActionBreakdown {
            quartic,
            mass,
            gradient,
            vacuum: self.vacuum(),
            total: quartic + mass + gradient,
        }
    }

    pub fn direction(&self, h: &TestFunction) -> Direction {
        let grid = *self.grid();
        let h_n = self.mollify_values(h.values());
        let grad_h_n = (0..grid.dim())
            .map(|axis| crate::lattice::forward_difference(&grid, &h_n, axis))
            .collect();
        let lap_h_n = crate::lattice::laplacian_values(&grid, &h_n);
        Direction {
            h: h.values().to_vec(),
            h_n,
            grad_h_n,
            lap_h_n,
        }
    }

    /// ∂ₕ𝒜ₙ with the gradient term written as ∇φₙ·∇hₙ.
    pub fn derivative(&self, phi_n: &[f64], dir: &Direction) -> f64 {
        self.derivatives(phi_n, dir).d1
    }

    /// ∂ₕ𝒜ₙ with the gradient term summed by parts into −φₙΔhₙ.
    pub fn derivative_by_parts(&self, phi_n: &[f64], dir: &Direction) -> f64 {
        let Couplings { g, m, a } = self.couplings;
        let c = self.wick.c_n;
        let s: f64 = phi_n
            .iter()
            .zip(&dir.h_n)
            .zip(&dir.lap_h_n)
            .map(|((&p, &h), &lap)| {
                g * (4.0 * p * p * p - 12.0 * c * p) * h + 2.0 * m * p * h - 2.0 * a * p * lap
            })
            .sum();
        s * self.grid().cell_volume()
    }

    pub fn second_derivative(&self, phi_n: &[f64], dir: &Direction) -> f64 {
        self.derivatives(phi_n, dir).d2
    }

    /// All four directional derivatives in one pass.
    pub fn derivatives(&self, phi_n: &[f64], dir: &Direction) -> Derivatives {
        let grid = self.grid();
        let Couplings { g, m, a } = self.couplings;
        let c = self.wick.c_n;
        let inv = 1.0 / grid.spacing();
        let (mut d1, mut d2, mut d3, mut d4) = (0.0, 0.0, 0.0, 0.0);
        for (i, (&p, &h)) in phi_n.iter().zip(&dir.h_n).enumerate() {
            let h2 = h * h;
            let mut grad_dot = 0.0;
            let mut grad_h2 = 0.0;
            for axis in 0..grid.dim() {
                let dp = (phi_n[grid.neighbor(i, axis, 1)] - p) * inv;
                let dh = dir.grad_h_n[axis][i];
                grad_dot += dp * dh;
                grad_h2 += dh * dh;
            }
            d1 += g * (4.0 * p * p * p - 12.0 * c * p) * h + 2.0 * m * p * h + 2.0 * a * grad_dot;
            d2 += 12.0 * g * (p * p - c) * h2 + 2.0 * m * h2 + 2.0 * a * grad_h2;
            d3 += 24.0 * g * p * h2 * h;
            d4 += 24.0 * g * h2 * h2;
        }
        let w = grid.cell_volume();
        Derivatives {
            d1: d1 * w,
            d2: d2 * w,
            d3: d3 * w,
            d4: d4 * w,
        }
    }
}

/// λ∫:ψ⁴: + α∫:ψ²: + (β/dₙ)∫:(∇ψ)²: with unit-variance Wick ordering.
pub fn reduced_action(psi: &FieldConfig, cls: &CaseClassification, wick: &WickConstants) -> f64 {
    reduced_density(psi, cls, wick).iter().sum::<f64>() * psi.grid().cell_volume()
}

/// λ∫χ⁴ + α∫χ² + (β/dₙ)∫(∇χ)², without Wick subtraction.
pub fn classical_action(
    chi: &FieldConfig,
    lambda: f64,
    alpha: f64,
    beta: f64,
    wick: &WickConstants,
) -> f64 {
    let ints = field_integrals(chi.grid(), chi.values());
    lambda * ints.fourth + alpha * ints.square + beta / wick.d_n * ints.gradient
}

fn reduced_density(psi: &FieldConfig, cls: &CaseClassification, wick: &WickConstants) -> Vec<f64> {
    let grid = psi.grid();
    let v = psi.values();
    let inv = 1.0 / grid.spacing();
    let grad_coef = cls.beta / wick.d_n;
    (0..v.len())
        .map(|i| {
            let p = v[i];
            let q = p * p;
            let g2: f64 = (0..grid.dim())
                .map(|axis| {
                    let d = (v[grid.neighbor(i, axis, 1)] - p) * inv;
                    d * d
                })
                .sum();
            cls.lambda * (q * q - 6.0 * q + 3.0)
                + cls.alpha * (q - 1.0)
                + grad_coef * (g2 - wick.d_n)
        })
        .collect()
}

/// Integrals of the reduced Lagrangian density over the n^d congruent
/// blocks of the torus, in block-index order.
pub fn block_variables(
    psi: &FieldConfig,
    blocks_per_side: u32,
    cls: &CaseClassification,
    wick: &WickConstants,
) -> Result<Vec<f64>> {
    let grid = psi.grid();
    let sites = grid.sites_per_side();
    let b = blocks_per_side as usize;
    if b == 0 || !sites.is_multiple_of(b) {
        return Err(Error::IndivisibleBlocks { sites, blocks: b });
    }
    let side = sites / b;
    let density = reduced_density(psi, cls, wick);
    let mut out = vec![0.0; b.pow(grid.dim() as u32)];
    for (i, l) in density.iter().enumerate() {
        let c = grid.coords(i);
        let block = c[..grid.dim()].iter().fold(0, |acc, &ci| acc * b + ci / side);
        out[block] += l;
    }
    let w = grid.cell_volume();
    for x in out.iter_mut() {
        *x *= w;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::free_field::FreeSampler;

    fn model(g: f64, m: f64, a: f64) -> ActionModel {
        let lat = Arc::new(Lattice::new(Grid::new(2, 8, 1.0).unwrap()));
        ActionModel::with_couplings(lat, Couplings { g, m, a }, 2).unwrap()
    }

    #[test]
    fn sequences() {
        assert_eq!(Sequence::power(2.0, 2.0).at(3).unwrap(), 18.0);
        let t = Sequence::table(&[(2, 0.5), (4, 0.25)]);
        assert_eq!(t.at(4).unwrap(), 0.25);
        assert!(t.at(8).is_err());
        let bad = RenormSchedule::constant(-1.0, 0.0, 0.0);
        assert!(bad.couplings(2).is_err());
    }

    #[test]
    fn classification_examples() {
        let w = WickConstants {
            n: 2,
            c_n: 0.7,
            d_n: 3.0,
            grad_var: 2.1,
        };
        let cls = classify_case(&Couplings { g: 1.0, m: 0.0, a: 0.0 }, &w).unwrap();
        assert_eq!(cls.case, Case::Quartic);
        assert_eq!((cls.lambda, cls.alpha, cls.beta), (1.0, 0.0, 0.0));
        let tie = classify_case(&Couplings { g: 1.0, m: 0.7, a: 0.0 }, &w).unwrap();
        assert_eq!(tie.case, Case::Quartic);
        let mass = classify_case(&Couplings { g: 0.1, m: 1.0, a: 0.1 }, &w).unwrap();
        assert_eq!(mass.case, Case::Mass);
        assert_eq!(mass.alpha, 1.0);
        let grad = classify_case(&Couplings { g: 0.1, m: 0.1, a: 1.0 }, &w).unwrap();
        assert_eq!(grad.case, Case::Gradient);
        assert_eq!(grad.beta, 1.0);
        assert!(matches!(
            classify_case(&Couplings { g: 0.0, m: 0.0, a: 0.0 }, &w),
            Err(Error::FreeTheory)
        ));
    }

    #[test]
    fn vacuum_and_free() {
        let m = model(0.3, 0.2, 0.1);
        let zero = FieldConfig::zeros(*m.grid());
        let b = m.action(&zero);
        let w = m.wick();
        let expect = 3.0 * 0.3 * w.c_n * w.c_n - 0.2 * w.c_n - 0.1 * w.grad_var;
        assert!((b.total - expect).abs() < 1e-12 * expect.abs().max(1.0));
        assert!((b.vacuum - b.total).abs() < 1e-12);
        let free = model(0.0, 0.0, 0.0);
        let phi = FieldConfig::constant(*free.grid(), 1.3);
        assert_eq!(free.action(&phi).total, 0.0);
    }

    #[test]
    fn action_matches_reduced_form() {
        let m = model(0.4, 0.3, 0.05);
        let s = FreeSampler::new(m.lattice().clone(), 5);
        let cls = m.classify().unwrap();
        for phi in s.samples(4, 0) {
            let total = m.action(&phi).total;
            let red = reduced_action(&m.psi(&phi), &cls, m.wick());
            assert!((total - cls.scale * red).abs() <= 1e-8 * total.abs().max(1e-3));
            let blocks = block_variables(&m.psi(&phi), 4, &cls, m.wick()).unwrap();
            assert!((blocks.iter().sum::<f64>() - red).abs() < 1e-8 * red.abs().max(1.0));
            assert!((m.action(&phi.scaled(-1.0)).total - total).abs() == 0.0);
        }
    }

    #[test]
    fn reduced_action_fixed_points() {
        let w = WickConstants {
            n: 2,
            c_n: 1.0,
            d_n: 2.0,
            grad_var: 2.0,
        };
        let g = Grid::new(2, 4, 2.0).unwrap();
        let cls = CaseClassification {
            case: Case::Quartic,
            lambda: 1.0,
            alpha: 0.3,
            beta: 0.2,
            scale: 1.0,
        };
        let zero = FieldConfig::zeros(g);
        assert!((reduced_action(&zero, &cls, &w) - (3.0 - 0.3 - 0.2) * 4.0).abs() < 1e-12);
        let pure = CaseClassification { alpha: 0.0, beta: 0.0, ..cls };
        let well = FieldConfig::constant(g, 3f64.sqrt());
        assert!((reduced_action(&well, &pure, &w) + 24.0).abs() < 1e-12);
        assert_eq!(classical_action(&zero, 1.0, 0.0, 0.0, &w), 0.0);
        let s = FieldConfig::constant(g, 0.7);
        let expect = (0.7f64.powi(4) + 0.3 * 0.49) * 4.0;
        assert!((classical_action(&s, 1.0, 0.3, 0.5, &w) - expect).abs() < 1e-12);
    }

    #[test]
    fn blocks_of_constant_field() {
        let m = model(1.0, 0.0, 0.0);
        let cls = m.classify().unwrap();
        let psi = FieldConfig::constant(*m.grid(), 0.8);
        let blocks = block_variables(&psi, 2, &cls, m.wick()).unwrap();
        assert_eq!(blocks.len(), 4);
        assert!(blocks.iter().all(|b| (b - blocks[0]).abs() < 1e-14));
        assert!(matches!(
            block_variables(&psi, 3, &cls, m.wick()),
            Err(Error::IndivisibleBlocks { .. })
        ));
    }

    #[test]
    fn derivative_forms_agree() {
        let m = model(0.2, 0.1, 0.3);
        let s = FreeSampler::new(m.lattice().clone(), 11);
        let h = TestFunction::gaussian_bump(*m.grid(), &[0.25, 0.5], 0.2).unwrap();
        let dir = m.direction(&h);
        for phi in s.samples(3, 0) {
            let pn = m.mollify(&phi);
            let a = m.derivative(pn.values(), &dir);
            let b = m.derivative_by_parts(pn.values(), &dir);
            assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
        }
        let zero = m.direction(&TestFunction::constant(*m.grid(), 0.0));
        let phi = s.sample(&mut s.rng(3));
        assert_eq!(m.derivatives(m.mollify(&phi).values(), &zero).d1, 0.0);
    }
}
