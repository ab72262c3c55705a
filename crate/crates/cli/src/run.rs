//! Experiment dispatch.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;

use phi4_core::action::block_variables;
use phi4_core::dyson::{self, ResidualReport};
use phi4_core::inequalities::{self, InequalityVerdict};
use phi4_core::io::{write_stream, StreamManifest};
use phi4_core::ldp;
use phi4_core::sampler::{run_chain, shared_lattice};
use phi4_core::{ActionModel, FreeSampler, Lattice, RenormSchedule, SampleStream, TestFunction};

use crate::config::{ConfigError, Experiment, RunConfig};
use crate::output::{config_hash, num, write_manifest, Manifest, Table, Versions};
use crate::suite;

/// Samples above which the sixth-moment identity needs an explicit opt-in.
pub const MOMENT6_MAX_SITES_PER_SIDE: usize = 8;

#[derive(Debug)]
pub enum RunError {
    Config(ConfigError),
    Runtime(String),
}

impl std::fmt::Display for RunError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            RunError::Config(e) => write!(f, "{e}"),
            RunError::Runtime(e) => write!(f, "runtime error: {e}"),
        }
    }
}

impl std::error::Error for RunError {}

impl From<phi4_core::Error> for RunError {
    fn from(e: phi4_core::Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

impl From<std::io::Error> for RunError {
    fn from(e: std::io::Error) -> Self {
        RunError::Runtime(e.to_string())
    }
}

impl From<ConfigError> for RunError {
    fn from(e: ConfigError) -> Self {
        RunError::Config(e)
    }
}

pub const EXIT_PASS: i32 = 0;
pub const EXIT_VERDICT: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

pub fn exit_code(result: &Result<Manifest, RunError>) -> i32 {
    match result {
        Ok(m) if m.passed => EXIT_PASS,
        Ok(_) => EXIT_VERDICT,
        Err(RunError::Config(_)) => EXIT_CONFIG,
        Err(RunError::Runtime(_)) => EXIT_RUNTIME,
    }
}

struct Ctx<'a> {
    cfg: &'a RunConfig,
    dir: PathBuf,
    hash: String,
    lattice: Arc<Lattice>,
    outputs: Vec<String>,
    warnings: Vec<String>,
}

impl Ctx<'_> {
    fn table(&self, name: &str, columns: &[&str]) -> std::io::Result<Table> {
        Table::create(&self.dir, name, columns, &self.hash, self.cfg.sampler.seed)
    }

    fn done(&mut self, t: Table) -> std::io::Result<()> {
        let p = t.finish()?;
        self.outputs.push(file_name(&p));
        Ok(())
    }

    /// All chains of one cutoff, run in parallel and merged in chain order.
    fn stream(&mut self, model: &ActionModel) -> Result<SampleStream, RunError> {
        let streams = (0..self.cfg.sampler.chains as u64)
            .into_par_iter()
            .map(|c| run_chain(model, &self.cfg.chain_config(c)))
            .collect::<phi4_core::Result<Vec<_>>>()?;
        let s = SampleStream::concat(streams)?;
        for w in &s.summary.warnings {
            log::warn!("n = {}: {w}", model.n());
            self.warnings.push(format!("n={}: {w}", model.n()));
        }
        Ok(s)
    }
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Validates, runs the selected experiment and writes the manifest.
pub fn run(cfg: &RunConfig) -> Result<Manifest, RunError> {
    cfg.validate()?;
    let start = Instant::now();
    fs::create_dir_all(&cfg.output_dir)?;
    let mut ctx = Ctx {
        cfg,
        dir: cfg.output_dir.clone(),
        hash: config_hash(cfg),
        lattice: shared_lattice(cfg.grid()),
        outputs: Vec::new(),
        warnings: Vec::new(),
    };
    let passed = match cfg.experiment {
        Experiment::Sample => sample(&mut ctx)?,
        Experiment::VerifyDyson => verify_dyson(&mut ctx)?,
        Experiment::VerifyInequalities => verify_inequalities(&mut ctx)?,
        Experiment::ScanRenorm => scan_renorm(&mut ctx)?,
        Experiment::RateFunction => rate_function(&mut ctx)?,
        Experiment::Concentration => concentration(&mut ctx)?,
        Experiment::AcceptanceSuite => acceptance(&mut ctx)?,
    };
    let manifest = Manifest {
        experiment: cfg.experiment.name().to_string(),
        config_hash: ctx.hash.clone(),
        seed: cfg.sampler.seed,
        versions: Versions {
            phi4_cli: env!("CARGO_PKG_VERSION"),
            phi4_core: phi4_core::VERSION,
        },
        wall_time_s: start.elapsed().as_secs_f64(),
        passed,
        outputs: ctx.outputs,
        warnings: ctx.warnings,
    };
    write_manifest(&cfg.output_dir, &manifest)?;
    Ok(manifest)
}

fn sample(ctx: &mut Ctx) -> Result<bool, RunError> {
    let mut t = ctx.table(
        "chains.csv",
        &["n", "kernel", "acceptance_rate", "proposal_width", "kept", "warnings"],
    )?;
    for &n in &ctx.cfg.n_list {
        let model = ctx.cfg.model(ctx.lattice.clone(), n)?;
        let s = ctx.stream(&model)?;
        let name = format!("stream_n{n}.bin");
        let manifest = StreamManifest {
            grid: *model.grid(),
            schedule: ctx.cfg.schedule.id(),
            chain: s.summary.clone(),
            records: s.len(),
        };
        write_stream(ctx.dir.join(&name), &manifest, &s.samples)?;
        ctx.outputs.push(name);
        t.row(&[
            n.to_string(),
            format!("{:?}", s.summary.kernel),
            num(s.summary.acceptance_rate),
            num(s.summary.proposal_width),
            s.summary.kept.to_string(),
            s.summary.warnings.len().to_string(),
        ])?;
    }
    ctx.done(t)?;
    Ok(true)
}

pub const DYSON_COLUMNS: [&str; 11] = [
    "identity", "n", "N", "schedule_id", "lhs", "rhs", "residual", "err", "z", "verdict", "seed_used",
];

fn dyson_row(r: &ResidualReport, n: u32, sites: usize, schedule: &str, seed: u64) -> Vec<String> {
    vec![
        r.identity.clone(),
        n.to_string(),
        sites.to_string(),
        schedule.to_string(),
        num(r.lhs.mean),
        num(r.rhs.mean),
        num(r.residual),
        num(r.combined_err),
        num(r.z_score),
        if r.passed() { "pass" } else { "fail" }.to_string(),
        seed.to_string(),
    ]
}

fn verify_dyson(ctx: &mut Ctx) -> Result<bool, RunError> {
    let cfg = ctx.cfg;
    let fs = cfg.test_functions();
    let (f, h) = (&fs[0], fs.get(1).unwrap_or(&fs[0]));
    let mut t = ctx.table("dyson.csv", &DYSON_COLUMNS)?;
    let mut all = true;
    for &n in &cfg.n_list {
        let model = cfg.model(ctx.lattice.clone(), n)?;
        let s = ctx.stream(&model)?;
        let mut reports = vec![
            dyson::residual_mc8(&model, &s, f)?,
            dyson::residual_mc8b(&model, &s, f, h)?,
            dyson::residual_mc9(&model, &s, f, 4)?,
            dyson::residual_mc10(&model, &s, f)?,
            dyson::residual_moment4(&model, &s, f)?,
            dyson::residual_if7(&model, &s, f, h)?,
            dyson::residual_second_dyson(&model, &s, f)?,
        ];
        if cfg.options.moment6 || cfg.grid.sites <= MOMENT6_MAX_SITES_PER_SIDE {
            reports.push(dyson::residual_moment6(&model, &s, f)?);
        }
        let free = FreeSampler::new(ctx.lattice.clone(), cfg.sampler.seed ^ 0x5eed)
            .samples(cfg.options.free_samples, u64::from(n));
        for &tv in &cfg.options.t_values {
            reports.push(dyson::generating_functional_check(tv, f, &model, &s, &free)?);
        }
        for r in &reports {
            all &= r.passed();
            t.row(&dyson_row(r, n, cfg.grid.sites, &cfg.schedule.id(), cfg.sampler.seed))?;
        }
    }
    ctx.done(t)?;
    Ok(all)
}

/// Same columns as the dyson table: lhs is the estimated margin and rhs the
/// bound it is compared with, always zero.
fn inequality_row(v: &InequalityVerdict, n: u32, sites: usize, schedule: &str, seed: u64) -> Vec<String> {
    vec![
        v.name.clone(),
        n.to_string(),
        sites.to_string(),
        schedule.to_string(),
        num(v.margin),
        num(0.0),
        num(v.margin),
        num(v.err),
        num(v.z_score),
        if v.passed() { "pass" } else { "fail" }.to_string(),
        seed.to_string(),
    ]
}

/// Griffiths I/II, the Gaussian bound and both skeleton margins on four functions.
pub fn inequality_verdicts(
    model: &ActionModel,
    s: &SampleStream,
    fs: [&TestFunction; 4],
) -> phi4_core::Result<Vec<InequalityVerdict>> {
    let mut v = vec![
        inequalities::check_griffiths1(&fs[..2], s)?,
        inequalities::check_griffiths1(&fs, s)?,
        inequalities::check_griffiths2(&fs, 2, s)?,
        inequalities::check_gaussian_inequality(&fs, s)?,
    ];
    v.extend(inequalities::skeleton_bound(fs, model, s)?);
    Ok(v)
}

fn verify_inequalities(ctx: &mut Ctx) -> Result<bool, RunError> {
    let cfg = ctx.cfg;
    let fs = cfg.test_functions();
    let mut t = ctx.table("inequalities.csv", &DYSON_COLUMNS)?;
    let mut all = true;
    for &n in &cfg.n_list {
        let model = cfg.model(ctx.lattice.clone(), n)?;
        let s = ctx.stream(&model)?;
        for v in inequality_verdicts(&model, &s, [&fs[0], &fs[1], &fs[2], &fs[3]])? {
            all &= v.passed();
            t.row(&inequality_row(&v, n, cfg.grid.sites, &cfg.schedule.id(), cfg.sampler.seed))?;
        }
    }
    ctx.done(t)?;
    Ok(all)
}

fn scan_renorm(ctx: &mut Ctx) -> Result<bool, RunError> {
    let cfg = ctx.cfg;
    let f = &cfg.test_functions()[0];
    let pts = ldp::triviality_scan_case2(&ctx.lattice, &cfg.schedule, f, &cfg.n_list, &cfg.chain_config(0))?;
    let mut t = ctx.table("scan.csv", &["n", "mean", "err", "envelope", "ratio_6gc_over_m", "below_envelope"])?;
    let mut all = true;
    for p in &pts {
        let below = p.estimate.mean <= p.envelope + 3.0 * p.estimate.std_err;
        all &= below;
        t.row(&[
            p.n.to_string(),
            num(p.estimate.mean),
            num(p.estimate.std_err),
            num(p.envelope),
            num(p.ratio_6gc_over_m),
            below.to_string(),
        ])?;
    }
    ctx.done(t)?;
    let series: Vec<(f64, f64)> = pts.iter().map(|p| (p.estimate.mean, p.estimate.std_err)).collect();
    all &= suite::nonincreasing_within_bands(&series);
    if let Some(r) = cfg.options.endpoint_ratio {
        all &= suite::endpoint_ratio(&series) < r;
    }
    Ok(all)
}

fn rate_function(ctx: &mut Ctx) -> Result<bool, RunError> {
    let cfg = ctx.cfg;
    let mut t = ctx.table("rate_function.csv", &["n", "table", "x", "value", "argmax_theta"])?;
    let mut all = true;
    for &n in &cfg.n_list {
        let model = cfg.model(ctx.lattice.clone(), n)?;
        let cls = model.classify()?;
        let s = ctx.stream(&model)?;
        let inv = 1.0 / model.wick().c_n.sqrt();
        let mut ys = Vec::new();
        for pn in &s.mollified {
            for x in block_variables(&pn.scaled(inv), cfg.options.blocks_per_side, &cls, model.wick())? {
                ys.push(-x);
            }
        }
        let table = ldp::empirical_logmgf(&ys, &cfg.options.theta_grid.values())?;
        let table = ldp::legendre_fenchel(table, &cfg.options.y_grid.values())?;
        all &= table.logmgf_is_convex() && table.transform_is_convex();
        for (th, l) in table.theta_grid.iter().zip(&table.logmgf) {
            t.row(&[n.to_string(), "logmgf".into(), num(*th), num(*l), String::new()])?;
        }
        for ((y, v), a) in table.y_grid.iter().zip(&table.transform).zip(&table.argmax_theta) {
            t.row(&[n.to_string(), "transform".into(), num(*y), num(*v), num(*a)])?;
        }
        let ymax = ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        t.row(&[n.to_string(), "y_max".into(), String::new(), num(ymax), String::new()])?;
    }
    ctx.done(t)?;
    Ok(all)
}

fn concentration(ctx: &mut Ctx) -> Result<bool, RunError> {
    let cfg = ctx.cfg;
    let mut t = ctx.table(
        "concentration.csv",
        &[
            "n", "multiplier", "epsilon", "fraction", "err", "scale", "min_classical",
            "log_complement_per_scale", "residual_l2", "residual_err",
        ],
    )?;
    let mut all = true;
    for &n in &cfg.n_list {
        let mut series = Vec::new();
        for &k in &cfg.options.scale_multipliers {
            let sched = RenormSchedule {
                g: cfg.schedule.g.scaled(k),
                ..cfg.schedule.clone()
            };
            let model = ActionModel::new(ctx.lattice.clone(), &sched, n)?;
            let cls = model.classify()?;
            let s = ctx.stream(&model)?;
            let min = ldp::constant_path_minimum(&cls, model.grid().volume());
            let eps = cfg.options.epsilon.unwrap_or(0.5 * min.abs());
            let r = ldp::concentration_probe(&model, &s, eps)?;
            let resid = suite::oscillation_residuals(&model, &s, cls.alpha)?;
            series.push((r.fraction_in_sigma.mean, r.fraction_in_sigma.std_err));
            t.row(&[
                n.to_string(),
                num(k),
                num(eps),
                num(r.fraction_in_sigma.mean),
                num(r.fraction_in_sigma.std_err),
                num(r.scale),
                num(r.min_classical),
                num(r.log_complement_per_scale),
                num(resid.mean),
                num(resid.std_err),
            ])?;
        }
        let flipped: Vec<(f64, f64)> = series.iter().map(|(m, e)| (-m, *e)).collect();
        all &= suite::nonincreasing_within_bands(&flipped);
    }
    ctx.done(t)?;
    Ok(all)
}

fn acceptance(ctx: &mut Ctx) -> Result<bool, RunError> {
    let o = &ctx.cfg.options;
    let results = suite::run_selected(&o.criteria, o.max_cost, ctx.cfg.sampler.seed);
    let mut t = ctx.table("acceptance.csv", &["criterion", "title", "cost", "verdict", "detail"])?;
    let mut all = true;
    for r in &results {
        println!("{}", r.line());
        all &= r.passed;
        t.row(&[
            r.id.to_string(),
            r.title.to_string(),
            format!("{:?}", r.cost),
            if r.passed { "PASS" } else { "FAIL" }.to_string(),
            r.detail.clone(),
        ])?;
    }
    ctx.done(t)?;
    Ok(all)
}
