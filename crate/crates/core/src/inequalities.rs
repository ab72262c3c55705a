//! Correlation inequalities for nonnegative test functions, checked on
//! sample streams: Griffiths I and II, the Gaussian (pairing) bound, the
//! Ursell function U₄ and its skeleton bounds.

use serde::{Deserialize, Serialize};

use crate::action::ActionModel;
use crate::dyson::smear_all;
use crate::error::{Error, Result};
use crate::lattice::TestFunction;
use crate::sampler::SampleStream;
use crate::stats::{z_score, Batches, DEFAULT_BATCHES};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VerdictKind {
    /// Passes when margin ≥ −3·err.
    Lower,
    /// Passes when |margin| ≤ 3·err.
    Null,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InequalityVerdict {
    pub name: String,
    pub margin: f64,
    pub err: f64,
    pub z_score: f64,
    pub kind: VerdictKind,
}

impl InequalityVerdict {
    fn new(name: &str, margin: f64, err: f64, kind: VerdictKind) -> Self {
        Self {
            name: name.to_string(),
            margin,
            err,
            z_score: z_score(margin, err),
            kind,
        }
    }

    pub fn passed(&self) -> bool {
        match self.kind {
            VerdictKind::Lower => self.margin >= -3.0 * self.err,
            VerdictKind::Null => self.margin.abs() <= 3.0 * self.err,
        }
    }

    /// The same margin read as a saturation test.
    pub fn as_null(mut self) -> Self {
        self.kind = VerdictKind::Null;
        self.name.push_str("-saturated");
        self
    }
}

fn require_nonneg(fs: &[&TestFunction]) -> Result<()> {
    for (i, f) in fs.iter().enumerate() {
        if !f.is_nonneg() {
            return Err(Error::NegativeTestFunction(format!("f{}", i + 1)));
        }
    }
    Ok(())
}

fn smeared(fs: &[&TestFunction], stream: &SampleStream) -> Result<Vec<Vec<f64>>> {
    fs.iter().map(|f| smear_all(&stream.samples, f)).collect()
}

fn product_series(cols: &[Vec<f64>], idx: &[usize]) -> Vec<f64> {
    let len = cols.first().map_or(0, |c| c.len());
    (0..len).map(|t| idx.iter().map(|&i| cols[i][t]).product()).collect()
}

/// Eₙ Π φ(fᵢ) ≥ 0; for an odd count the moment is tested for zero instead.
pub fn check_griffiths1(fs: &[&TestFunction], stream: &SampleStream) -> Result<InequalityVerdict> {
    require_nonneg(fs)?;
    if fs.is_empty() {
        return Err(Error::InvalidArgument("no test functions".into()));
    }
    let cols = smeared(fs, stream)?;
    let idx: Vec<usize> = (0..cols.len()).collect();
    let prod = product_series(&cols, &idx);
    let b = Batches::new(&[&prod], DEFAULT_BATCHES)?;
    let (m, e) = b.jackknife(|x| x[0]);
    let p = fs.len();
    let kind = if p.is_multiple_of(2) { VerdictKind::Lower } else { VerdictKind::Null };
    Ok(InequalityVerdict::new(&format!("griffiths1-p{p}"), m, e, kind))
}

/// Eₙ[AB] ≥ Eₙ[A]Eₙ[B] with A the product over fs[..split], B over the rest.
pub fn check_griffiths2(
    fs: &[&TestFunction],
    split: usize,
    stream: &SampleStream,
) -> Result<InequalityVerdict> {
    require_nonneg(fs)?;
    if split == 0 || split >= fs.len() {
        return Err(Error::InvalidArgument(format!(
            "split {split} must leave both products nonempty"
        )));
    }
    let cols = smeared(fs, stream)?;
    let a: Vec<usize> = (0..split).collect();
    let b: Vec<usize> = (split..fs.len()).collect();
    let sa = product_series(&cols, &a);
    let sb = product_series(&cols, &b);
    let sab: Vec<f64> = sa.iter().zip(&sb).map(|(x, y)| x * y).collect();
    let bm = Batches::new(&[&sab, &sa, &sb], DEFAULT_BATCHES)?;
    let (m, e) = bm.jackknife(|x| x[0] - x[1] * x[2]);
    Ok(InequalityVerdict::new(
        &format!("griffiths2-{}x{}", split, fs.len() - split),
        m,
        e,
        VerdictKind::Lower,
    ))
}

/// All perfect matchings of `0..k` (k even), each as a list of pairs.
pub fn pairings(k: usize) -> Vec<Vec<(usize, usize)>> {
    fn rec(rest: &[usize], acc: &mut Vec<(usize, usize)>, out: &mut Vec<Vec<(usize, usize)>>) {
        if rest.is_empty() {
            out.push(acc.clone());
            return;
        }
        let first = rest[0];
        for j in 1..rest.len() {
            acc.push((first, rest[j]));
            let remaining: Vec<usize> = rest[1..]
                .iter()
                .enumerate()
                .filter(|(i, _)| *i + 1 != j)
                .map(|(_, v)| *v)
                .collect();
            rec(&remaining, acc, out);
            acc.pop();
        }
    }
    let mut out = Vec::new();
    if k.is_multiple_of(2) {
        let items: Vec<usize> = (0..k).collect();
        rec(&items, &mut Vec::new(), &mut out);
    }
    out
}

/// Σ_pairings Π Eₙ[φφ] − Eₙ[Π φ] ≥ 0 for 2p functions.
pub fn check_gaussian_inequality(fs: &[&TestFunction], stream: &SampleStream) -> Result<InequalityVerdict> {
    require_nonneg(fs)?;
    let k = fs.len();
    if k < 2 || !k.is_multiple_of(2) {
        return Err(Error::InvalidArgument(format!("need an even number of functions, got {k}")));
    }
    let cols = smeared(fs, stream)?;
    let mut pair_ids = Vec::new();
    let mut series = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            pair_ids.push((i, j));
            series.push(product_series(&cols, &[i, j]));
        }
    }
    let all: Vec<usize> = (0..k).collect();
    series.push(product_series(&cols, &all));
    let refs: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
    let bm = Batches::new(&refs, DEFAULT_BATCHES)?;
    let matchings = pairings(k);
    let slot = |i: usize, j: usize| pair_ids.iter().position(|&p| p == (i, j)).expect("pair listed");
    let (m, e) = bm.jackknife(|x| {
        let gauss: f64 = matchings
            .iter()
            .map(|mt| mt.iter().map(|&(i, j)| x[slot(i, j)]).product::<f64>())
            .sum();
        gauss - x[x.len() - 1]
    });
    Ok(InequalityVerdict::new(&format!("gaussian-p{}", k / 2), m, e, VerdictKind::Lower))
}

/// Series layout for U₄: six pair products then the full product.
fn ursell_series(cols: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let mut series = Vec::new();
    for i in 0..4 {
        for j in i + 1..4 {
            series.push(product_series(cols, &[i, j]));
        }
    }
    series.push(product_series(cols, &[0, 1, 2, 3]));
    series
}

/// U₄ from the means in the layout of `ursell_series`.
fn ursell_from_means(x: &[f64]) -> f64 {
    // Pair order: 01 02 03 12 13 23.
    x[6] - x[0] * x[5] - x[1] * x[4] - x[2] * x[3]
}

/// Connected four-point function and its jackknife error.
pub fn ursell4(fs: [&TestFunction; 4], stream: &SampleStream) -> Result<(f64, f64)> {
    require_nonneg(&fs)?;
    let cols = smeared(&fs, stream)?;
    let series = ursell_series(&cols);
    let refs: Vec<&[f64]> = series.iter().map(|s| s.as_slice()).collect();
    let bm = Batches::new(&refs, DEFAULT_BATCHES)?;
    Ok(bm.jackknife(ursell_from_means))
}

/// 0 ≤ −U₄ ≤ 4! gₙ ε^d Σₓ Πᵢ Eₙ[φ(fᵢ)φₙ(x)]; returns the lower and upper verdicts.
pub fn skeleton_bound(
    fs: [&TestFunction; 4],
    model: &ActionModel,
    stream: &SampleStream,
) -> Result<[InequalityVerdict; 2]> {
    require_nonneg(&fs)?;
    let cols = smeared(&fs, stream)?;
    let series = ursell_series(&cols);
    let sites = model.grid().num_sites();
    let bm = Batches::from_rows(stream.len(), 7 + 4 * sites, DEFAULT_BATCHES, |t, out| {
        for (k, s) in series.iter().enumerate() {
            out[k] = s[t];
        }
        let pn = stream.mollified[t].values();
        for (i, col) in cols.iter().enumerate() {
            let row = &mut out[7 + i * sites..7 + (i + 1) * sites];
            for (o, v) in row.iter_mut().zip(pn) {
                *o = col[t] * v;
            }
        }
    })?;
    let w = model.grid().cell_volume();
    let g = model.couplings().g;
    let (lo, lo_err) = bm.jackknife(|x| -ursell_from_means(x));
    let (hi, hi_err) = bm.jackknife(|x| {
        let base = 7;
        let tree: f64 = (0..sites)
            .map(|s| (0..4).map(|i| x[base + i * sites + s]).product::<f64>())
            .sum::<f64>()
            * w;
        24.0 * g * tree + ursell_from_means(x)
    });
    Ok([
        InequalityVerdict::new("skeleton-lower", lo, lo_err, VerdictKind::Lower),
        InequalityVerdict::new("skeleton-upper", hi, hi_err, VerdictKind::Lower),
    ])
}
