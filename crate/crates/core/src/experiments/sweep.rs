//! Per-eps measurement chain, the eps sweep and the attractor-rate pipeline.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{ExperimentConfig, ModeCount};
use super::fit::{fit_rate, RateFit};
use crate::error::{LabError, Result};
use crate::geometry::ChannelProfile;
use crate::linalg;
use crate::manifold::{
    compute_graph, distance_to_graph, gap_report, graph_distance, honest_gap_dimension, reduced_attractor,
    reduced_map_distance, select_gap_dimension, split_coordinates, support_radius, validate_grid, GapReport,
    GraphGrid, ReducedSystem, DEFAULT_NODES, KAPPA,
};
use crate::nonlinearity::{
    lipschitz_estimator, rho_beta_metrics, Cutoff, GateContext, GateSpace, NonlinearOperator, NonlinearPair,
    ReactionTerm,
};
use crate::operators::{
    align_signs, assemble_a0, eigs_full, resolvent_distance, ChannelPair, DiscreteOperator, EigenBasis,
    OperatorConfig,
};
use crate::semiflow::{
    approximate_attractor, find_equilibria, smoothing_lipschitz, time_one_distance, AttractorApprox,
    EquilibriumSet, FlowNonlinearity, GateWeights, Scheme, Stepper, DEFAULT_DT,
};
use crate::shadowing::{
    attractor_bound_check, fixed_points, hausdorff_distance, lipschitz_shadowing_estimate, perturbed_orbits,
    weighted_metric, BoundReport, ShadowingReport, DEFAULT_WINDOW, DELTAS,
};

pub const REPORT_SCHEMA: &str = "thinlab-report/1";

/// Constant in the reduced-to-full attractor bound, reported next to the measured ratio.
pub fn chain_constant() -> f64 {
    4.0 * std::f64::consts::E.powi(2)
}

/// All observables of one eps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceMetrics {
    pub eps: f64,
    pub m: usize,
    /// Resolvent distance on lifted x-only data.
    pub tau: f64,
    pub rho: f64,
    pub beta: f64,
    pub graph_dist: f64,
    pub graph_lipschitz: f64,
    /// Largest distance of an equilibrium to its graph.
    pub equilibria_graph_dist: f64,
    pub reduced_map_c0: f64,
    pub reduced_map_c1: f64,
    pub time_one_dist: f64,
    pub smoothing_lip: f64,
    pub attractor_dist_reduced: f64,
    pub attractor_dist_h1q: f64,
    /// eps^((d-1)/2) attractor_dist_h1q
    pub attractor_dist_h1qeps: f64,
    pub l_hat: f64,
    pub shadow_variation: f64,
    pub bound_lhs: f64,
    pub bound_rhs: f64,
    pub bound_holds: bool,
    /// attractor_dist_h1q / attractor_dist_reduced, when the latter is positive.
    pub chain_ratio: Option<f64>,
    pub min_margin: f64,
}

/// Per-row intermediate results used by the claim checks.
#[derive(Clone, Debug)]
pub struct RowArtifacts {
    pub equilibria: EquilibriumSet,
    pub graph_sweeps: (usize, usize),
    pub shadowing: ShadowingReport,
    pub bound: BoundReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eps: f64,
    pub metrics: Option<ConvergenceMetrics>,
    pub error: Option<String>,
}

/// eps-independent quantities on the dynamics grid.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LimitSummary {
    pub cutoff_radius: f64,
    pub l_f_bound: f64,
    /// Largest measured difference quotient of the gated limit nonlinearity.
    pub l_f_measured: f64,
    pub gap: GapReport,
    /// First m meeting both gap conditions on the available spectrum.
    pub honest_m: Option<usize>,
    pub equilibria: Vec<Vec<f64>>,
    pub unstable_dims: Vec<usize>,
    pub margins: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub schema: String,
    pub config: ExperimentConfig,
    pub limit: LimitSummary,
    pub rows: Vec<SweepRow>,
}

/// Limit-side objects shared by every row.
pub struct LimitSide {
    pub profile: ChannelProfile,
    pub reaction: ReactionTerm,
    pub op0: DiscreteOperator,
    pub basis0: Arc<EigenBasis>,
    pub stepper0: Stepper,
    pub attractor: AttractorApprox,
    pub summary: LimitSummary,
}

fn equilibrium_seeds(xs: &[f64], m: f64) -> Vec<Vec<f64>> {
    let mut seeds: Vec<Vec<f64>> = [-0.7, 0.0, 0.7].iter().map(|s| vec![s * m; xs.len()]).collect();
    for amp in [-0.8, 0.8] {
        seeds.push(xs.iter().map(|x| amp * m * (PI * x).cos()).collect());
    }
    seeds
}

fn check_hyperbolic(eqs: &EquilibriumSet) -> Result<()> {
    for (i, (&h, &m)) in eqs.hyperbolic.iter().zip(&eqs.margins).enumerate() {
        if !h {
            return Err(LabError::NotHyperbolic { index: i, mean: linalg::mean(&eqs.points[i]), margin: m });
        }
    }
    Ok(())
}

fn prepared(basis: Arc<EigenBasis>, op: NonlinearOperator, gate: GateWeights) -> Result<Stepper> {
    Stepper::new(basis, DEFAULT_DT, Scheme::Etdrk4, FlowNonlinearity::Prepared { op, gate })
}

impl LimitSide {
    pub fn build(cfg: &ExperimentConfig) -> Result<Self> {
        let profile = cfg.profile()?;
        let reaction = cfg.reaction()?;
        let op0 = assemble_a0(&profile, &OperatorConfig::limit(cfg.mu, cfg.alpha)?, cfg.grid.dyn_nx)?;
        let basis0 = Arc::new(eigs_full(&op0)?);
        let r = match cfg.cutoff_radius {
            Some(r) => r,
            None => 2.0 * basis0.alpha_norm_coeffs(&basis0.coefficients(&vec![reaction.m; op0.dim()])),
        };
        let op = NonlinearOperator::new(reaction, Cutoff::new(r)?, GateSpace::Limit);
        let ctx = GateContext::limit(&basis0);
        let probes = lipschitz_probes(&basis0, &op0.xs(), r, cfg.seed, 120)?;
        let record = lipschitz_estimator(&op, &ctx, &probes)?;
        let l_f = record.l_f;
        let gap = match cfg.m {
            ModeCount::Fixed(m) => gap_report(&basis0.values, m, l_f, KAPPA, cfg.alpha),
            ModeCount::Auto(_) => select_gap_dimension(&basis0, l_f, KAPPA, cfg.alpha, 2)?,
        };
        let fine0 = assemble_a0(&profile, &OperatorConfig::limit(cfg.mu, cfg.alpha)?, cfg.grid.n1d)?;
        let honest_m = honest_gap_dimension(&eigs_full(&fine0)?, l_f, KAPPA, cfg.alpha);
        let stepper0 = prepared(basis0.clone(), op, GateWeights::own(&basis0))?;
        let eqs = find_equilibria(&equilibrium_seeds(&op0.xs(), reaction.m), &stepper0)?;
        check_hyperbolic(&eqs)?;
        let attractor = approximate_attractor(&eqs, &stepper0, cfg.dense_samples)?;
        let summary = LimitSummary {
            cutoff_radius: r,
            l_f_bound: record.l_f_bound,
            l_f_measured: l_f,
            gap,
            honest_m,
            equilibria: eqs.points.clone(),
            unstable_dims: eqs.unstable_dims.clone(),
            margins: eqs.margins.clone(),
        };
        Ok(LimitSide { profile, reaction, op0, basis0, stepper0, attractor, summary })
    }

    pub fn m(&self) -> usize {
        self.summary.gap.m
    }
}

/// x-only right-hand sides cos(k pi x), k = 0..4, lifted to the reference grid.
pub fn lifted_rhs(pair: &ChannelPair) -> Vec<Vec<f64>> {
    let xs = pair.op0.xs();
    (0..5)
        .map(|k| pair.transfer.extend(&xs.iter().map(|x| (k as f64 * PI * x).cos()).collect::<Vec<f64>>()))
        .collect()
}

fn random_profile(rng: &mut ChaCha8Rng, xs: &[f64], modes: usize, amp: f64) -> Vec<f64> {
    let a: Vec<f64> = (0..modes).map(|_| rng.gen_range(-1.0..=1.0) * amp).collect();
    xs.iter()
        .map(|x| a.iter().enumerate().map(|(k, ak)| ak * (k as f64 * PI * x).cos() / (1 + k) as f64).sum())
        .collect()
}

/// Seeded probe pairs for the Lipschitz estimator: smooth fields with gate
/// norm from 0.2R to 2.5R, each paired with perturbations of size 1e-1 to 1e-4
/// along a fixed smooth direction.
pub fn lipschitz_probes(
    basis0: &EigenBasis,
    xs: &[f64],
    r: f64,
    seed: u64,
    count: usize,
) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x11f);
    let bases = count.div_ceil(4);
    let mut out = Vec::with_capacity(4 * bases);
    for j in 0..bases {
        let u = random_profile(&mut rng, xs, 6, 1.0);
        let h = random_profile(&mut rng, xs, 4, 1.0);
        let (un, hn) = (basis0.full_alpha_norms(std::slice::from_ref(&u))?[0], basis0.full_alpha_norms(std::slice::from_ref(&h))?[0]);
        let target = r * (0.2 + 2.3 * j as f64 / (bases.max(2) - 1) as f64);
        let u: Vec<f64> = u.iter().map(|v| v * target / un).collect();
        for k in 1..=4 {
            let s = 10f64.powi(-k) / hn;
            out.push((u.clone(), u.iter().zip(&h).map(|(a, b)| a + s * b).collect()));
        }
    }
    Ok(out)
}

/// Limit-grid probes for the time-one distance: low eigenfunctions, a shifted
/// one, and seeded random smooth fields.
pub fn time_one_probes(basis0: &EigenBasis, xs: &[f64], seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![basis0.vector(1), basis0.vector(2)];
    out.push(basis0.vector(1).iter().map(|v| 0.5 * v + 0.3).collect());
    for _ in 0..2 {
        out.push(random_profile(&mut rng, xs, 6, 1.0));
    }
    out
}

/// Seeded pairs of nearby reference-grid fields with transverse structure.
pub fn smoothing_pairs(op_eps: &DiscreteOperator, seed: u64, count: usize) -> Vec<(Vec<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    (0..count)
        .map(|_| {
            let a: Vec<f64> = (0..5).map(|_| rng.gen_range(-1.0..=1.0)).collect();
            let b: f64 = rng.gen_range(-0.3..=0.3);
            let u = op_eps.sample(|x, z| {
                a.iter().enumerate().map(|(k, ak)| ak * (k as f64 * PI * x).cos() / (1 + k) as f64).sum::<f64>()
                    + b * z
            });
            let w: Vec<f64> = u.iter().map(|v| v + 1e-2 * rng.gen_range(-1.0..=1.0)).collect();
            (u, w)
        })
        .collect()
}

/// Largest nearest-neighbour spacing within a sample set, halved.
fn sampling_tolerance<F: Fn(&Vec<f64>, &Vec<f64>) -> f64 + Sync>(samples: &[Vec<f64>], metric: F) -> f64 {
    samples
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            samples
                .iter()
                .enumerate()
                .filter(|&(j, q)| j != i && metric(p, q) > 0.0)
                .map(|(_, q)| metric(p, q))
                .fold(f64::INFINITY, f64::min)
        })
        .filter(|d| d.is_finite())
        .reduce(|| 0.0, f64::max)
        / 2.0
}

/// Starts for pseudo-trajectories: the stable equilibria and +-1e-3 off each unstable one.
fn shadow_starts(equilibria: &[Vec<f64>], unstable_dims: &[usize]) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    for (e, &d) in equilibria.iter().zip(unstable_dims) {
        if d == 0 {
            out.push(e.clone());
        } else {
            for s in [1e-3, -1e-3] {
                out.push(e.iter().map(|v| v + s).collect());
            }
        }
    }
    out
}

/// The eps flow on the dynamics grid with its equilibria.
pub struct EpsFlow {
    pub pair: ChannelPair,
    pub basis: Arc<EigenBasis>,
    pub stepper: Stepper,
    pub equilibria: EquilibriumSet,
}

/// Builds the gated eps flow and finds its equilibria from lifted seeds;
/// fails on a non-hyperbolic equilibrium.
pub fn eps_flow(cfg: &ExperimentConfig, lim: &LimitSide, eps: f64) -> Result<EpsFlow> {
    let pair = ChannelPair::new(&lim.profile, cfg.mu, cfg.alpha, eps, cfg.grid.dyn_nx, cfg.grid.dyn_nz)?;
    let mut be = eigs_full(&pair.op_eps)?;
    align_signs(&mut be, &lim.basis0, &pair.transfer);
    let basis = Arc::new(be);
    let op = NonlinearOperator::new(lim.reaction, Cutoff::new(lim.summary.cutoff_radius)?, GateSpace::Eps);
    let stepper = prepared(basis.clone(), op, GateWeights::own(&basis))?;
    let seeds: Vec<Vec<f64>> =
        equilibrium_seeds(&lim.op0.xs(), lim.reaction.m).iter().map(|s| pair.transfer.extend(s)).collect();
    let equilibria = find_equilibria(&seeds, &stepper)?;
    check_hyperbolic(&equilibria)?;
    Ok(EpsFlow { pair, basis, stepper, equilibria })
}

/// One eps: operators, bases, graphs, reduced maps, attractors, shadowing and distances.
pub fn measure_row(cfg: &ExperimentConfig, lim: &LimitSide, eps: f64) -> Result<(ConvergenceMetrics, RowArtifacts)> {
    let fine = ChannelPair::new(&lim.profile, cfg.mu, cfg.alpha, eps, cfg.grid.nx, cfg.grid.nz)?;
    let tau = resolvent_distance(&fine, &lifted_rhs(&fine))?;
    drop(fine);

    let EpsFlow { pair, basis: be, stepper: s_eps, equilibria: eqs } = eps_flow(cfg, lim, eps)?;
    let b0 = &lim.basis0;
    let cut = Cutoff::new(lim.summary.cutoff_radius)?;
    let op_eps = NonlinearOperator::new(lim.reaction, cut, GateSpace::Eps);
    let op_lift = NonlinearOperator::new(lim.reaction, cut, GateSpace::LiftedLimit);

    let xs = lim.op0.xs();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut samples: Vec<Vec<f64>> = [-0.9, 0.2, 0.9].iter().map(|s| vec![s * lim.reaction.m; xs.len()]).collect();
    samples.push(random_profile(&mut rng, &xs, 6, lim.reaction.m));
    let dirs: Vec<Vec<f64>> = (0..4).map(|i| b0.vector(i)).collect();
    let (rho, beta) = rho_beta_metrics(
        &samples,
        &dirs,
        &pair.transfer,
        NonlinearPair::EpsLifted,
        (&op_eps, &GateContext::eps(&be)),
        (&op_lift, &GateContext::lifted(&be, b0, &pair.transfer)),
    )?;

    let s_0e = prepared(b0.clone(), op_lift, GateWeights::lifted(&be, b0, &pair.transfer)?)?;

    let m = lim.m();
    let r_prime = support_radius(lim.summary.cutoff_radius, b0, m);
    let grid = GraphGrid::new(m, DEFAULT_NODES, 2.0 * r_prime, b0)?;
    let (ge, g0) = rayon::join(|| compute_graph(&s_eps, &grid), || compute_graph(&s_0e, &grid));
    let (ge, g0) = (ge?, g0?);
    let graph_dist = graph_distance(&ge, &g0, &be, b0, &pair.transfer)?;
    let pts_e: Vec<Vec<f64>> = eqs.coeffs.iter().map(|c| split_coordinates(c, m).0).collect();
    let lim_coeffs = &lim.attractor.equilibria.coeffs;
    let pts_0: Vec<Vec<f64>> = lim_coeffs.iter().map(|c| split_coordinates(c, m).0).collect();
    validate_grid(&grid, &pts_e)?;
    validate_grid(&grid, &pts_0)?;
    let eq_graph = eqs
        .coeffs
        .iter()
        .map(|c| distance_to_graph(&ge, c))
        .chain(lim_coeffs.iter().map(|c| distance_to_graph(&g0, c)))
        .fold(0.0, f64::max);
    let graph_lipschitz = ge.lipschitz_est.max(g0.lipschitz_est);
    let sweeps = (ge.sweeps, g0.sweeps);

    let sys_e = ReducedSystem::new(Arc::new(s_eps.clone()), ge, r_prime)?;
    let sys_0 = ReducedSystem::new(Arc::new(s_0e.clone()), g0, r_prime)?;
    let map = reduced_map_distance(&sys_e, &sys_0)?;
    let (ra_e, ra_0) = rayon::join(|| reduced_attractor(&sys_e, &pts_e), || reduced_attractor(&sys_0, &pts_0));
    let (ra_e, ra_0) = (ra_e?, ra_0?);
    let metric = weighted_metric(&grid.scale);
    let att_red = hausdorff_distance(&ra_0.samples, &ra_e.samples, &metric)?;

    let fixed = fixed_points(&sys_0, &ra_0.equilibria)?;
    let pseudo = perturbed_orbits(
        &sys_0,
        &shadow_starts(&ra_0.equilibria, &ra_0.unstable_dims),
        &DELTAS,
        2,
        DEFAULT_WINDOW,
        cfg.seed,
    )?;
    let neighborhood = grid.radius / grid.scale.iter().fold(f64::INFINITY, |a, &b| a.min(b));
    let shadow = lipschitz_shadowing_estimate(&sys_0, &fixed, &pseudo, neighborhood)?;
    let tol = sampling_tolerance(&ra_0.samples, &metric).max(sampling_tolerance(&ra_e.samples, &metric));
    let bound = attractor_bound_check(&ra_0.samples, &ra_e.samples, map.c0, shadow.l_hat, tol, &grid.scale)?;

    let att_e = approximate_attractor(&eqs, &s_eps, cfg.dense_samples)?;
    let fields_0: Vec<Vec<f64>> =
        lim.attractor.states().iter().map(|c| pair.transfer.extend(&lim.stepper0.to_field(c))).collect();
    let fields_e: Vec<Vec<f64>> = att_e.states().iter().map(|c| s_eps.to_field(c)).collect();
    let op_eps_ref = &pair.op_eps;
    let h1q = hausdorff_distance(&fields_0, &fields_e, |a: &Vec<f64>, b: &Vec<f64>| {
        op_eps_ref.h1_norm(&linalg::sub(a, b))
    })?;

    let probes = time_one_probes(b0, &xs, cfg.seed);
    let t1 = time_one_distance(&probes, &s_eps, &s_0e, &pair.transfer, &pair.op_eps)?;
    let smooth = smoothing_lipschitz(&s_eps, &pair.op_eps, &smoothing_pairs(&pair.op_eps, cfg.seed, 20))?;

    let metrics = ConvergenceMetrics {
        eps,
        m,
        tau,
        rho,
        beta,
        graph_dist,
        graph_lipschitz,
        equilibria_graph_dist: eq_graph,
        reduced_map_c0: map.c0,
        reduced_map_c1: map.c1,
        time_one_dist: t1,
        smoothing_lip: smooth,
        attractor_dist_reduced: att_red,
        attractor_dist_h1q: h1q,
        attractor_dist_h1qeps: lim.profile.rescale_factor(eps) * h1q,
        l_hat: shadow.l_hat,
        shadow_variation: shadow.variation,
        bound_lhs: bound.lhs,
        bound_rhs: bound.rhs,
        bound_holds: bound.holds,
        chain_ratio: (att_red > 0.0).then(|| h1q / att_red),
        min_margin: eqs.margins.iter().fold(f64::INFINITY, |a, &b| a.min(b)),
    };
    let artifacts = RowArtifacts { equilibria: eqs, graph_sweeps: sweeps, shadowing: shadow, bound };
    Ok((metrics, artifacts))
}

pub type DetailedRow = (SweepRow, Option<RowArtifacts>);

/// Rows in parallel; a failing row records its reason and the sweep continues.
pub fn run_sweep_detailed(cfg: &ExperimentConfig) -> Result<(SweepTable, Vec<Option<RowArtifacts>>)> {
    cfg.validate()?;
    let lim = LimitSide::build(cfg)?;
    let rows: Vec<DetailedRow> = cfg
        .eps_list
        .par_iter()
        .map(|&eps| match measure_row(cfg, &lim, eps) {
            Ok((m, a)) => (SweepRow { eps, metrics: Some(m), error: None }, Some(a)),
            Err(e) => (SweepRow { eps, metrics: None, error: Some(e.to_string()) }, None),
        })
        .collect();
    let (rows, arts): (Vec<SweepRow>, Vec<Option<RowArtifacts>>) = rows.into_iter().unzip();
    let table = SweepTable { schema: REPORT_SCHEMA.into(), config: cfg.clone(), limit: lim.summary, rows };
    Ok((table, arts))
}

pub fn run_sweep(cfg: &ExperimentConfig) -> Result<SweepTable> {
    Ok(run_sweep_detailed(cfg)?.0)
}

/// Fit of one observable with plot-ready (eps, value, fitted) triples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservableFit {
    pub observable: String,
    pub fit: Option<RateFit>,
    pub error: Option<String>,
    pub triples: Vec<(f64, f64, Option<f64>)>,
}

/// Fits the (eps, value) pairs of the rows that completed.
pub fn fit_observable(table: &SweepTable, name: &str, get: impl Fn(&ConvergenceMetrics) -> f64) -> ObservableFit {
    let pairs: Vec<(f64, f64)> = table.rows.iter().filter_map(|r| r.metrics.as_ref()).map(|m| (m.eps, get(m))).collect();
    match fit_rate(&pairs) {
        Ok(fit) => {
            let best = *fit.best();
            let triples = pairs.iter().map(|&(e, v)| (e, v, Some(best.model.eval(best.c, best.p, e)))).collect();
            ObservableFit { observable: name.into(), fit: Some(fit), error: None, triples }
        }
        Err(e) => ObservableFit {
            observable: name.into(),
            fit: None,
            error: Some(e.to_string()),
            triples: pairs.iter().map(|&(e, v)| (e, v, None)).collect(),
        },
    }
}

pub type Observable = (&'static str, fn(&ConvergenceMetrics) -> f64);

/// Observables that carry a rate.
pub fn rate_observables() -> Vec<Observable> {
    vec![
        ("tau", |m| m.tau),
        ("rho", |m| m.rho),
        ("graph_dist", |m| m.graph_dist),
        ("reduced_map_c0", |m| m.reduced_map_c0),
        ("reduced_map_c1", |m| m.reduced_map_c1),
        ("time_one_dist", |m| m.time_one_dist),
        ("attractor_dist_reduced", |m| m.attractor_dist_reduced),
        ("attractor_dist_h1q", |m| m.attractor_dist_h1q),
        ("attractor_dist_h1qeps", |m| m.attractor_dist_h1qeps),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChainRow {
    pub eps: f64,
    pub attractor_dist_h1q: f64,
    pub attractor_dist_reduced: f64,
    /// chain_constant() times the reduced distance.
    pub reduced_bound: f64,
    pub measured_ratio: Option<f64>,
}

/// Sweep, fits and the reduced-space cross-check of the attractor-distance rate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttractorReport {
    pub table: SweepTable,
    pub fits: Vec<ObservableFit>,
    pub chain: Vec<ChainRow>,
    /// Rate of the eps-domain H^1 distance.
    pub final_fit: ObservableFit,
    /// Largest |H1Qeps - eps^((d-1)/2) H1Q| over rows.
    pub rescaling_defect: f64,
}

/// Fits, reduced-space cross-check and rescaling identity of a finished sweep.
pub fn build_report(table: SweepTable) -> Result<AttractorReport> {
    let profile = table.config.profile()?;
    let mut chain = Vec::new();
    let mut defect = 0.0f64;
    for m in table.rows.iter().filter_map(|r| r.metrics.as_ref()) {
        defect = defect.max((m.attractor_dist_h1qeps - profile.rescale_factor(m.eps) * m.attractor_dist_h1q).abs());
        chain.push(ChainRow {
            eps: m.eps,
            attractor_dist_h1q: m.attractor_dist_h1q,
            attractor_dist_reduced: m.attractor_dist_reduced,
            reduced_bound: chain_constant() * m.attractor_dist_reduced,
            measured_ratio: m.chain_ratio,
        });
    }
    let fits = rate_observables().into_iter().map(|(n, g)| fit_observable(&table, n, g)).collect();
    let final_fit = fit_observable(&table, "attractor_dist_h1qeps", |m| m.attractor_dist_h1qeps);
    Ok(AttractorReport { table, fits, chain, final_fit, rescaling_defect: defect })
}

/// Full chain: sweep, hyperbolicity guard, cross-check and the final rate fit.
pub fn attractor_pipeline(cfg: &ExperimentConfig) -> Result<(AttractorReport, Vec<Option<RowArtifacts>>)> {
    let (table, arts) = run_sweep_detailed(cfg)?;
    if let Some(reason) = table.rows.iter().filter_map(|r| r.error.as_deref()).find(|e| e.contains("hyperbolicity")) {
        return Err(LabError::Precondition(reason.to_string()));
    }
    Ok((build_report(table)?, arts))
}
