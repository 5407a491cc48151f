//! One check suite per claim; each returns named pass/fail checks with data.

use std::f64::consts::PI;
use std::time::Instant;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::{json, Value};

use super::config::ExperimentConfig;
use super::fit::{fit_rate, RateFit, RateModel};
use super::report::{render, ReportFormat};
use super::sweep::{
    attractor_pipeline, eps_flow, lifted_rhs, lipschitz_probes, AttractorReport, LimitSide, ObservableFit,
    RowArtifacts,
};
use crate::error::Result;
use crate::expansion::{optimality_ratio, solve_cell_v2, solve_limit};
use crate::geometry::ChannelProfile;
use crate::linalg;
use crate::manifold::{gap_growth_check, select_gap_dimension, GRAPH_BUDGET, KAPPA};
use crate::nonlinearity::{
    apply_cutoff_f, commutation_check, holder_theta, lipschitz_estimator, nemytskii, Cutoff, GateContext, GateSpace,
    NonlinearOperator,
};
use crate::operators::{
    assemble_a0, constant_mode_residual, eigs, eigs_below, eigs_full, energy_functionals, poincare_defect,
    projection_distance, resolvent_distance, ChannelPair, OperatorConfig,
};
use crate::semiflow::EquilibriumSet;
use crate::shadowing::{
    fixed_points, lipschitz_shadowing_estimate, perturbed_orbits, LinearMap, DEFAULT_WINDOW, DELTAS,
};

pub const RESOLVENT_BUDGET_SECS: f64 = 120.0;
pub const PIPELINE_BUDGET_SECS: f64 = 900.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClaimOutcome {
    pub claim: String,
    pub checks: Vec<Check>,
    pub data: Value,
}

impl ClaimOutcome {
    fn new(claim: &str) -> Self {
        ClaimOutcome { claim: claim.into(), checks: Vec::new(), data: json!({}) }
    }

    fn check(&mut self, name: &str, pass: bool, detail: String) {
        self.checks.push(Check { name: name.into(), pass, detail });
    }

    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    pub fn failed_checks(&self) -> Vec<&Check> {
        self.checks.iter().filter(|c| !c.pass).collect()
    }
}

fn max_of(v: impl IntoIterator<Item = f64>) -> f64 {
    v.into_iter().fold(0.0, f64::max)
}

fn straight(cfg: &ExperimentConfig) -> Result<ChannelProfile> {
    ChannelProfile::straight(1.0, cfg.profile.d)
}

/// Curved-channel right-hand sides: an x-only field, one linear in the
/// transverse coordinate and a mixed quadratic.
fn curved_rhs(pair: &ChannelPair) -> Vec<Vec<f64>> {
    let xs = pair.op0.xs();
    vec![
        pair.transfer.extend(&xs.iter().map(|x| (PI * x).cos()).collect::<Vec<f64>>()),
        pair.op_eps.sample(|x, z| z * (1.0 + x)),
        pair.op_eps.sample(|x, z| x * x + z * z),
    ]
}

/// Plain log-log slope and whether it falls in [lo, hi].
fn slope_check(fit: &RateFit, lo: f64, hi: f64) -> (bool, String) {
    let p = fit.get(RateModel::Power).p;
    ((lo..=hi).contains(&p), format!("slope {p:.4} (want [{lo}, {hi}])"))
}

/// Log-corrected model preferred and its exponent in [lo, hi].
fn log_rate_check(fit: Option<&RateFit>, lo: f64, hi: f64) -> (bool, String) {
    let Some(fit) = fit else {
        return (false, "no fit".into());
    };
    let f = fit.get(RateModel::PowerLog);
    let power = fit.get(RateModel::Power);
    let pass = fit.preferred == RateModel::PowerLog && (lo..=hi).contains(&f.p);
    let detail = format!(
        "preferred {:?}; eps^p|log eps| p = {:.4} (residual {:.3e}); eps^p p = {:.4} (residual {:.3e}); want log model with p in [{lo}, {hi}]",
        fit.preferred, f.p, f.residual, power.p, power.residual
    );
    (pass, detail)
}

fn observable<'a>(report: &'a AttractorReport, name: &str) -> Option<&'a ObservableFit> {
    report.fits.iter().find(|f| f.observable == name)
}

/// Resolved modes of the n1d spectrum used by the growth check.
pub const GROWTH_MODES: usize = 40;

/// Gap growth over the resolved n1d spectrum and the constant-mode residual.
pub fn spectrum_claim(cfg: &ExperimentConfig) -> Result<ClaimOutcome> {
    let mut out = ClaimOutcome::new("spectrum");
    let profile = cfg.profile()?;
    let op0 = assemble_a0(&profile, &OperatorConfig::limit(cfg.mu, cfg.alpha)?, cfg.grid.n1d)?;
    let basis = eigs(&op0, GROWTH_MODES)?;
    let growth = gap_growth_check(&basis)?;
    out.check("gap_growth", growth.satisfied, format!("n0 = {:?}, offset {}, slope {:.3}", growth.n0, growth.offset, growth.slope));
    let res = constant_mode_residual(&op0);
    out.check("constant_mode", res <= 1e-8, format!("residual {res:.3e}"));
    let first = (basis.values[0] - cfg.mu).abs();
    out.check("first_eigenvalue_is_mu", first <= 1e-8 * cfg.mu, format!("|lambda_1 - mu| = {first:.3e}"));
    out.data = json!({ "first_values": &basis.values[..10.min(basis.len())], "n0": growth.n0, "slope": growth.slope });
    Ok(out)
}

/// Resolvent distance rate on the curved channel and the straight-channel floor.
pub fn resolvent_claim(cfg: &ExperimentConfig) -> Result<ClaimOutcome> {
    let mut out = ClaimOutcome::new("resolvent-rate");
    let start = Instant::now();
    let profile = cfg.profile()?;
    let sp = straight(cfg)?;
    let mut pairs = Vec::new();
    let mut floor = 0.0f64;
    for &eps in &cfg.eps_list {
        let pair = ChannelPair::new(&profile, cfg.mu, cfg.alpha, eps, cfg.grid.nx, cfg.grid.nz)?;
        pairs.push((eps, resolvent_distance(&pair, &curved_rhs(&pair))?));
        let sp_pair = ChannelPair::new(&sp, cfg.mu, cfg.alpha, eps, cfg.grid.nx, cfg.grid.nz)?;
        floor = floor.max(resolvent_distance(&sp_pair, &lifted_rhs(&sp_pair))?);
    }
    let secs = start.elapsed().as_secs_f64();
    let fit = fit_rate(&pairs)?;
    let (pass, detail) = slope_check(&fit, 0.85, 1.15);
    out.check("curved_slope", pass, detail);
    out.check("straight_floor", floor <= 1e-8, format!("max straight-channel distance {floor:.3e}"));
    out.check("runtime", secs <= RESOLVENT_BUDGET_SECS, format!("{secs:.1} s (budget {RESOLVENT_BUDGET_SECS} s)"));
    out.data = json!({ "pairs": pairs, "fit": fit, "straight_floor": floor, "seconds": secs });
    Ok(out)
}

/// Energy inequality on curved data and equality on straight channels with x-only data.
pub fn energy_claim(cfg: &ExperimentConfig) -> Result<ClaimOutcome> {
    let mut out = ClaimOutcome::new("energy");
    let profile = cfg.profile()?;
    let sp = straight(cfg)?;
    let mut min_margin = f64::INFINITY;
    let mut equality = 0.0f64;
    let mut rows = Vec::new();
    for &eps in &cfg.eps_list {
        let pair = ChannelPair::new(&profile, cfg.mu, cfg.alpha, eps, cfg.grid.nx, cfg.grid.nz)?;
        for rhs in curved_rhs(&pair) {
            let e = energy_functionals(&pair, &rhs)?;
            min_margin = min_margin.min(e.margin());
            rows.push((eps, e.margin()));
        }
        let sp_pair = ChannelPair::new(&sp, cfg.mu, cfg.alpha, eps, cfg.grid.nx, cfg.grid.nz)?;
        for rhs in lifted_rhs(&sp_pair).iter().skip(1) {
            equality = equality.max(energy_functionals(&sp_pair, rhs)?.margin().abs());
        }
    }
    out.check("inequality", min_margin >= 0.0, format!("smallest margin {min_margin:.3e}"));
    out.check("straight_equality", equality <= 1e-8, format!("largest |margin| {equality:.3e}"));
    out.data = json!({ "margins": rows, "straight_equality": equality });
    Ok(out)
}

/// Ratio limit against the cell-problem norm and the cell solution against its closed form.
pub fn expansion_claim(cfg: &ExperimentConfig) -> Result<ClaimOutcome> {
    let mut out = ClaimOutcome::new("expansion");
    let profile = cfg.profile()?;
    let f = |x: f64| (PI * x).cos();
    let table = optimality_ratio(&profile, cfg.mu, cfg.alpha, (cfg.grid.nx, cfg.grid.nz), &f, &cfg.eps_list)?;
    out.check(
        "ratio_limit",
        table.deviation <= 0.1,
        format!("relative deviation {:.4} from |grad_y V2| = {:.6} (want <= 0.1)", table.deviation, table.grad_y_v2),
    );
    let v0 = solve_limit(&profile, cfg.mu, &f)?;
    let mut mismatch = 0.0f64;
    for x in [0.1, 0.37, 0.5, 0.83] {
        mismatch = mismatch.max(solve_cell_v2(&profile, &v0, &f, x, 64)?.mismatch);
    }
    out.check("cell_closed_form", mismatch <= 1e-10, format!("largest mismatch {mismatch:.3e}"));
    out.data = json!({ "table": table, "cell_mismatch": mismatch });
    Ok(out)
}

/// Averaging-extension identities and the eigenprojection rate.
pub fn operator_identity_claim(cfg: &ExperimentConfig) -> Result<ClaimOutcome> {
    let mut out = ClaimOutcome::new("operator-identities");
    let profile = cfg.profile()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (mut me, mut norm) = (0.0f64, 0.0f64);
    let mut pairs = Vec::new();
    for &eps in &cfg.eps_list {
        let pair = ChannelPair::new(&profile, cfg.mu, cfg.alpha, eps, cfg.grid.nx, cfg.grid.nz)?;
        for _ in 0..10 {
            let u: Vec<f64> = (0..pair.op0.dim()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let eu = pair.transfer.extend(&u);
            me = me.max(max_of(linalg::sub(&pair.transfer.average(&eu), &u).iter().map(|v| v.abs())));
            let (a, b) = (pair.transfer.norm_q(&eu), pair.transfer.norm_g(&u));
            norm = norm.max((a - b).abs() / b);
        }
        let xs = pair.op0.xs();
        let probes: Vec<Vec<f64>> =
            (0..4).map(|j| xs.iter().map(|x| (2.0 * (j + 1) as f64 * x).sin() + 0.3 * x).collect()).collect();
        let be = eigs_below(&pair.op_eps, 1500.0, 400)?;
        let b0 = eigs_full(&pair.op0)?;
        pairs.push((eps, projection_distance(&be, &b0, &pair.transfer, 3, &probes)?));
    }
    out.check("average_of_extension", me <= 1e-12, format!("max |MEu - u| {me:.3e}"));
    out.check("extension_isometry", norm <= 1e-12, format!("max relative norm defect {norm:.3e}"));
    let fit = fit_rate(&pairs)?;
    let (pass, detail) = slope_check(&fit, 0.8, 1.2);
    out.check("projection_slope", pass, detail);
    out.data = json!({ "projection": pairs, "fit": fit });
    Ok(out)
}

/// Transverse Poincare inequality and convergence of lifted X^alpha norms.
pub fn poincare_claim(cfg: &ExperimentConfig) -> Result<ClaimOutcome> {
    let mut out = ClaimOutcome::new("poincare");
    let profile = cfg.profile()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9c);
    let pair = ChannelPair::new(&profile, cfg.mu, cfg.alpha, cfg.eps_list[0], cfg.grid.dyn_nx, cfg.grid.dyn_nz)?;
    let (mut worst, mut zero) = (f64::NEG_INFINITY, 0.0f64);
    for _ in 0..100 {
        let u: Vec<f64> = (0..pair.op_eps.dim()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let (d, b) = poincare_defect(&u, &pair.transfer, &pair.op_eps)?;
        worst = worst.max(d - b);
        let v: Vec<f64> = (0..pair.op0.dim()).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        zero = zero.max(poincare_defect(&pair.transfer.extend(&v), &pair.transfer, &pair.op_eps)?.0);
    }
    out.check("inequality", worst <= 0.0, format!("max defect - bound {worst:.3e}"));
    out.check("transverse_constant_zero", zero <= 1e-24, format!("max defect {zero:.3e}"));

    let b0 = eigs_full(&pair.op0)?;
    let xs = pair.op0.xs();
    let probes: Vec<Vec<f64>> = (1..=10)
        .map(|j| xs.iter().map(|x| (j as f64 * PI * x).cos() + 0.2 * (j as f64) * x * x).collect())
        .collect();
    let limit = b0.full_alpha_norms(&probes)?;
    let mut gaps: Vec<Vec<f64>> = Vec::new();
    for &eps in &cfg.eps_list {
        let p = ChannelPair::new(&profile, cfg.mu, cfg.alpha, eps, cfg.grid.dyn_nx, cfg.grid.dyn_nz)?;
        let be = eigs_full(&p.op_eps)?;
        let lifted: Vec<Vec<f64>> = probes.iter().map(|u| p.transfer.extend(u)).collect();
        let n = be.full_alpha_norms(&lifted)?;
        gaps.push(n.iter().zip(&limit).map(|(a, b)| (a - b).abs()).collect());
    }
    let monotone = (0..probes.len()).all(|j| gaps.windows(2).all(|w| w[1][j] <= w[0][j]));
    let last = max_of(gaps.last().expect("nonempty eps list").iter().copied());
    out.check("norm_convergence_monotone", monotone, format!("largest gap at the smallest eps {last:.3e}"));
    out.data = json!({ "norm_gaps": gaps });
    Ok(out)
}

/// Gate commutation, exact gate regions, measured L_F against the bound and the Hoelder exponent.
pub fn cutoff_claim(cfg: &ExperimentConfig) -> Result<ClaimOutcome> {
    let mut out = ClaimOutcome::new("cutoff");
    let profile = cfg.profile()?;
    let reaction = cfg.reaction()?;
    let pair = ChannelPair::new(&profile, cfg.mu, cfg.alpha, cfg.eps_list[0], cfg.grid.dyn_nx, cfg.grid.dyn_nz)?;
    let be = eigs_full(&pair.op_eps)?;
    let b0 = eigs_full(&pair.op0)?;
    let r = match cfg.cutoff_radius {
        Some(r) => r,
        None => 2.0 * b0.alpha_norm_coeffs(&b0.coefficients(&vec![reaction.m; pair.op0.dim()])),
    };
    let cut = Cutoff::new(r)?;
    let op_eps = NonlinearOperator::new(reaction, cut, GateSpace::Eps);
    let op_lift = NonlinearOperator::new(reaction, cut, GateSpace::LiftedLimit);
    let (ctx_eps, ctx_lift) = (GateContext::eps(&be), GateContext::lifted(&be, &b0, &pair.transfer));
    let xs = pair.op0.xs();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xc0);
    let mut comm = 0.0f64;
    for j in 0..50 {
        let amp = 3.0 * reaction.m * (j + 1) as f64 / 50.0;
        let a: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..=1.0)).collect();
        let u: Vec<f64> = xs
            .iter()
            .map(|x| amp * a.iter().enumerate().map(|(k, ak)| ak * (k as f64 * PI * x).cos()).sum::<f64>() / 3.0)
            .collect();
        comm = comm.max(commutation_check(&u, &pair.transfer, &op_eps, &ctx_eps, &op_lift, &ctx_lift)?);
    }
    out.check("commutation", comm <= 1e-12, format!("max defect {comm:.3e}"));

    let op0 = NonlinearOperator::new(reaction, cut, GateSpace::Limit);
    let ctx0 = GateContext::limit(&b0);
    let (mut inside, mut outside, mut tested) = (true, true, 0usize);
    for j in 0..40 {
        let u: Vec<f64> = xs.iter().map(|x| (j as f64 * 0.37 + PI * x).cos() + 0.5).collect();
        let n = ctx0.norms(std::slice::from_ref(&u))?[0];
        for t in [0.5, 0.99, 2.01, 3.0] {
            let v: Vec<f64> = u.iter().map(|s| s * t * r / n).collect();
            let fv = apply_cutoff_f(&v, &op0, &ctx0)?;
            let gate = ctx0.norms(std::slice::from_ref(&v))?[0];
            if gate <= r {
                inside &= fv == nemytskii(&v, &reaction);
                tested += 1;
            } else if gate >= 2.0 * r {
                outside &= fv.iter().all(|&y| y == 0.0);
                tested += 1;
            }
        }
    }
    out.check("agreement_region", inside, format!("F = f exactly for gate norm <= R ({tested} fields tested)"));
    out.check("support_region", outside, "F = 0 exactly for gate norm >= 2R".into());

    let lim = assemble_a0(&profile, &OperatorConfig::limit(cfg.mu, cfg.alpha)?, cfg.grid.dyn_nx)?;
    let lb = eigs_full(&lim)?;
    let probes = lipschitz_probes(&lb, &lim.xs(), r, cfg.seed, 120)?;
    let rec = lipschitz_estimator(&op0, &GateContext::limit(&lb), &probes)?;
    out.check(
        "lipschitz_below_bound",
        rec.l_f <= rec.l_f_bound,
        format!("measured L_F {:.4} over {} pairs, bound {:.4}", rec.l_f, probes.len(), rec.l_f_bound),
    );
    let theta = holder_theta(cfg.alpha, cfg.profile.d) - 0.1;
    out.check("holder_exponent", rec.theta_f >= theta, format!("fitted {:.4} (want >= {theta:.4})", rec.theta_f));
    out.data = json!({ "radius": r, "record": rec, "commutation": comm });
    Ok(out)
}

fn equilibrium_checks(out: &mut ClaimOutcome, label: &str, eqs: &EquilibriumSet, level: f64) {
    let mut found: Vec<(f64, usize, f64, f64)> = eqs
        .points
        .iter()
        .zip(&eqs.unstable_dims)
        .zip(&eqs.margins)
        .map(|((p, &d), &m)| {
            let mean = p.iter().sum::<f64>() / p.len() as f64;
            (mean, d, m, max_of(p.iter().map(|v| (v - mean).abs())))
        })
        .collect();
    found.sort_by(|a, b| a.0.total_cmp(&b.0));
    let values: Vec<f64> = found.iter().map(|f| f.0).collect();
    let dims: Vec<usize> = found.iter().map(|f| f.1).collect();
    let targets = [-level, 0.0, level];
    let values_ok = found.len() == 3 && found.iter().zip(targets).all(|(f, t)| (f.0 - t).abs() <= 1e-6 && f.3 <= 1e-6);
    out.check(&format!("{label}_values"), values_ok, format!("constants {values:?}"));
    out.check(&format!("{label}_unstable_dims"), dims == [0, 1, 0], format!("{dims:?}"));
    let margin = found.iter().map(|f| f.2).fold(f64::INFINITY, f64::min);
    out.check(&format!("{label}_margin"), margin >= 1.0, format!("smallest spectral margin {margin:.4}"));
}

/// Equilibria, Morse indices and hyperbolicity at the limit and at every eps.
pub fn equilibria_claim(cfg: &ExperimentConfig) -> Result<ClaimOutcome> {
    let mut out = ClaimOutcome::new("equilibria");
    let lim = LimitSide::build(cfg)?;
    let level = (cfg.reaction.a - cfg.mu).sqrt();
    equilibrium_checks(&mut out, "limit", &lim.attractor.equilibria, level);
    let mut margins = vec![(0.0, lim.summary.margins.clone())];
    for &eps in &cfg.eps_list {
        let flow = eps_flow(cfg, &lim, eps)?;
        equilibrium_checks(&mut out, &format!("eps_{eps}"), &flow.equilibria, level);
        margins.push((eps, flow.equilibria.margins.clone()));
    }
    out.data = json!({ "margins": margins });
    Ok(out)
}

/// A finished attractor-rate run with its per-row artifacts.
pub struct PipelineRun {
    pub report: AttractorReport,
    pub artifacts: Vec<Option<RowArtifacts>>,
    pub seconds: f64,
}

pub fn run_pipeline(cfg: &ExperimentConfig) -> Result<PipelineRun> {
    let start = Instant::now();
    let (report, artifacts) = attractor_pipeline(cfg)?;
    Ok(PipelineRun { report, artifacts, seconds: start.elapsed().as_secs_f64() })
}

fn rows_complete(out: &mut ClaimOutcome, report: &AttractorReport) {
    let errors: Vec<String> = report
        .table
        .rows
        .iter()
        .filter_map(|r| r.error.as_ref().map(|e| format!("eps {}: {e}", r.eps)))
        .collect();
    out.check("rows_complete", errors.is_empty(), if errors.is_empty() { "all rows measured".into() } else { errors.join("; ") });
}

/// Gap dimension by substitution, graph convergence, equilibria on the graph and the graph rate.
pub fn manifold_claim(cfg: &ExperimentConfig, run: &PipelineRun) -> Result<ClaimOutcome> {
    let mut out = ClaimOutcome::new("manifold");
    rows_complete(&mut out, &run.report);
    let profile = cfg.profile()?;
    let op = assemble_a0(&profile, &OperatorConfig::limit(cfg.mu, cfg.alpha)?, cfg.grid.n1d)?;
    let basis = eigs_full(&op)?;
    let l_f = run.report.table.limit.l_f_measured;
    let gap = select_gap_dimension(&basis, l_f, KAPPA, cfg.alpha, basis.len() - 1)?;
    let (lm, ln) = (basis.values[gap.m - 1], basis.values[gap.m]);
    let a = cfg.alpha;
    let first = ln - lm >= 3.0 * (KAPPA + 2.0) * l_f * (lm.powf(a) + ln.powf(a));
    let second = lm.powf(1.0 - a) >= 6.0 * (KAPPA + 2.0) * l_f / (1.0 - a);
    out.check(
        "gap_substitution",
        gap.satisfied && first && second,
        format!("m = {} with L_F = {l_f:.4}: gap {:.3} vs {:.3}, power {:.3} vs {:.3}", gap.m, gap.gap, gap.gap_bound, gap.power, gap.power_bound),
    );
    let metrics: Vec<_> = run.report.table.rows.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let sweeps = max_of(run.artifacts.iter().flatten().map(|a| a.graph_sweeps.0.max(a.graph_sweeps.1) as f64));
    let lip = max_of(metrics.iter().map(|m| m.graph_lipschitz));
    out.check(
        "graph_converges",
        !metrics.is_empty() && sweeps < GRAPH_BUDGET as f64 && lip < 1.0,
        format!("at most {sweeps} sweeps (budget {GRAPH_BUDGET}), graph Lipschitz {lip:.4}"),
    );
    let eq = max_of(metrics.iter().map(|m| m.equilibria_graph_dist));
    out.check("equilibria_on_graph", !metrics.is_empty() && eq <= 1e-4, format!("largest distance {eq:.3e}"));
    let fit = observable(&run.report, "graph_dist").and_then(|f| f.fit.as_ref());
    let (pass, detail) = log_rate_check(fit, 0.8, 1.2);
    out.check("graph_rate", pass, detail);
    out.data = json!({ "gap": gap, "graph_m": run.report.table.limit.gap.m, "graph_dist": observable(&run.report, "graph_dist") });
    Ok(out)
}

/// Reduced-map and time-one rates, C^1 monotonicity and smoothing uniformity.
pub fn reduced_claim(run: &PipelineRun) -> Result<ClaimOutcome> {
    let mut out = ClaimOutcome::new("reduced-distance");
    rows_complete(&mut out, &run.report);
    for name in ["reduced_map_c0", "time_one_dist"] {
        let fit = observable(&run.report, name).and_then(|f| f.fit.as_ref());
        let (pass, detail) = log_rate_check(fit, 0.8, 1.2);
        out.check(&format!("{name}_rate"), pass, detail);
    }
    let metrics: Vec<_> = run.report.table.rows.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let c1: Vec<f64> = metrics.iter().map(|m| m.reduced_map_c1).collect();
    out.check("c1_decreasing", c1.len() >= 2 && c1.windows(2).all(|w| w[1] < w[0]), format!("{c1:?}"));
    let lips: Vec<f64> = metrics.iter().map(|m| m.smoothing_lip).collect();
    let spread = max_of(lips.iter().copied()) / lips.iter().copied().fold(f64::INFINITY, f64::min);
    out.check("smoothing_uniform", !lips.is_empty() && spread <= 2.0, format!("max/min {spread:.4}"));
    out.data = json!({
        "reduced_map_c0": observable(&run.report, "reduced_map_c0"),
        "time_one_dist": observable(&run.report, "time_one_dist"),
        "reduced_map_c1": c1,
        "smoothing_lip": lips,
    });
    Ok(out)
}

/// Contraction oracle for L_hat.
pub fn contraction_oracle(seed: u64) -> Result<f64> {
    let t = LinearMap { m: 1, a: 0.5 };
    let fixed = fixed_points(&t, &[vec![0.0]])?;
    let samples = perturbed_orbits(&t, &[vec![0.0]], &DELTAS, 4, DEFAULT_WINDOW, seed)?;
    Ok(lipschitz_shadowing_estimate(&t, &fixed, &samples, 10.0)?.l_hat)
}

/// Oracle, stability of L_hat across noise decades and the attractor bound at every eps.
pub fn shadowing_claim(cfg: &ExperimentConfig, run: &PipelineRun) -> Result<ClaimOutcome> {
    let mut out = ClaimOutcome::new("shadowing");
    rows_complete(&mut out, &run.report);
    let oracle = contraction_oracle(cfg.seed)?;
    out.check("contraction_oracle", (1.0..=2.1).contains(&oracle), format!("L_hat {oracle:.4} for x -> x/2"));
    let arts: Vec<&RowArtifacts> = run.artifacts.iter().flatten().collect();
    let variation = max_of(arts.iter().map(|a| a.shadowing.variation));
    out.check(
        "decade_stability",
        !arts.is_empty() && arts.iter().all(|a| a.shadowing.stable),
        format!("largest variation across decades {variation:.4} (want <= 0.5)"),
    );
    let rows: Vec<_> = run.report.table.rows.iter().filter_map(|r| r.metrics.as_ref()).collect();
    let holds = !rows.is_empty() && rows.iter().all(|m| m.bound_holds);
    let margin = rows.iter().map(|m| m.bound_rhs - m.bound_lhs).fold(f64::INFINITY, f64::min);
    out.check("attractor_bound", holds, format!("smallest margin {margin:.3e}"));
    out.data = json!({
        "oracle": oracle,
        "rows": rows.iter().map(|m| json!({ "eps": m.eps, "l_hat": m.l_hat, "variation": m.shadow_variation, "lhs": m.bound_lhs, "rhs": m.bound_rhs })).collect::<Vec<_>>(),
    });
    Ok(out)
}

/// Rescaling identity and the reduced-space cross-check.
pub fn attractor_distance_claim(run: &PipelineRun) -> Result<ClaimOutcome> {
    let mut out = ClaimOutcome::new("attractor-distance");
    rows_complete(&mut out, &run.report);
    let d = run.report.rescaling_defect;
    out.check("rescaling_identity", d <= 1e-12, format!("largest defect {d:.3e}"));
    out.data = json!({ "chain": run.report.chain });
    Ok(out)
}

/// Final rate of the eps-domain attractor distance, rescaling identity and runtime.
pub fn attractor_rate_claim(run: &PipelineRun) -> Result<ClaimOutcome> {
    let mut out = ClaimOutcome::new("attractor-rate");
    rows_complete(&mut out, &run.report);
    let (pass, detail) = log_rate_check(run.report.final_fit.fit.as_ref(), 1.3, 1.7);
    out.check("final_rate", pass, detail);
    let d = run.report.rescaling_defect;
    out.check("rescaling_identity", d <= 1e-12, format!("largest defect {d:.3e}"));
    out.check("runtime", run.seconds <= PIPELINE_BUDGET_SECS, format!("{:.1} s (budget {PIPELINE_BUDGET_SECS} s)", run.seconds));
    out.data = json!({ "final_fit": run.report.final_fit, "seconds": run.seconds });
    Ok(out)
}

/// Byte equality of the CSV and JSON renderings of two runs of one config.
pub fn determinism_claim(first: &PipelineRun, second: &PipelineRun) -> Result<ClaimOutcome> {
    let mut out = ClaimOutcome::new("determinism");
    for format in [ReportFormat::Csv, ReportFormat::Json] {
        let (a, b) = (render(&first.report, format)?, render(&second.report, format)?);
        out.check(&format!("{format:?}_bytes").to_lowercase(), a == b, format!("{} vs {} bytes", a.len(), b.len()));
    }
    Ok(out)
}
