//! Reaction terms, the radial cut-off in X^alpha and the prepared nonlinearities.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{pre, LabError, Result};
use crate::linalg::{self, least_squares_line};
use crate::operators::{EigenBasis, TransferOperators};

/// Shape of the reaction before the sup-norm cut-off.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ReactionKind {
    /// a s - s^3, cut beyond M = sqrt(a).
    Cubic { a: f64 },
    /// c s, no cut; only used to calibrate estimators.
    Linear { c: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReactionTerm {
    pub kind: ReactionKind,
    /// Dissipativity threshold: f(s) s <= 0 for |s| >= m.
    pub m: f64,
    /// Sampled sup of |f| + |f'| + |f''|; for the linear kind, |c|.
    pub lf: f64,
    /// Sampled sup of |f'|.
    pub lip: f64,
}

impl ReactionTerm {
    pub fn cubic(a: f64) -> Result<Self> {
        pre(a > 0.0 && a.is_finite(), || format!("cubic coefficient {a} must be positive"))?;
        let mut r = ReactionTerm { kind: ReactionKind::Cubic { a }, m: a.sqrt(), lf: 0.0, lip: 0.0 };
        let reach = r.m + 60.0;
        let n = 400_000;
        for j in 0..=n {
            let s = -reach + 2.0 * reach * j as f64 / n as f64;
            r.lf = r.lf.max(r.f(s).abs() + r.f_prime(s).abs() + r.f_second(s).abs());
            r.lip = r.lip.max(r.f_prime(s).abs());
        }
        Ok(r)
    }

    pub fn linear(c: f64) -> Self {
        ReactionTerm { kind: ReactionKind::Linear { c }, m: f64::INFINITY, lf: c.abs(), lip: c.abs() }
    }

    /// f(s) = 5s - s^3.
    pub fn default_cubic() -> Self {
        Self::cubic(5.0).expect("positive coefficient")
    }

    /// The growth-form nonlinearity before the cut.
    pub fn inside_form(&self, s: f64) -> f64 {
        match self.kind {
            ReactionKind::Cubic { a } => a * s - s * s * s,
            ReactionKind::Linear { c } => c * s,
        }
    }

    // Beyond M the cubic continues as sign(s) h(|s| - M) with
    // h(t) = t (A + B t) e^{-t}, matching value, slope and curvature at M.
    fn tail_coeffs(a: f64, m: f64) -> (f64, f64) {
        let big_a = -2.0 * a;
        (big_a, big_a - 3.0 * m)
    }

    pub fn f(&self, s: f64) -> f64 {
        match self.kind {
            ReactionKind::Linear { c } => c * s,
            ReactionKind::Cubic { a } => {
                if s.abs() < self.m {
                    return a * s - s * s * s;
                }
                let (ca, cb) = Self::tail_coeffs(a, self.m);
                let t = s.abs() - self.m;
                s.signum() * t * (ca + cb * t) * (-t).exp()
            }
        }
    }

    pub fn f_prime(&self, s: f64) -> f64 {
        match self.kind {
            ReactionKind::Linear { c } => c,
            ReactionKind::Cubic { a } => {
                if s.abs() < self.m {
                    return a - 3.0 * s * s;
                }
                let (ca, cb) = Self::tail_coeffs(a, self.m);
                let t = s.abs() - self.m;
                (ca + (2.0 * cb - ca) * t - cb * t * t) * (-t).exp()
            }
        }
    }

    pub fn f_second(&self, s: f64) -> f64 {
        match self.kind {
            ReactionKind::Linear { .. } => 0.0,
            ReactionKind::Cubic { a } => {
                if s.abs() < self.m {
                    return -6.0 * s;
                }
                let (ca, cb) = Self::tail_coeffs(a, self.m);
                let t = s.abs() - self.m;
                s.signum() * (2.0 * cb - 2.0 * ca + (ca - 4.0 * cb) * t + cb * t * t) * (-t).exp()
            }
        }
    }
}

/// Pointwise f(u).
pub fn nemytskii(u: &[f64], reaction: &ReactionTerm) -> Vec<f64> {
    u.iter().map(|&s| reaction.f(s)).collect()
}

/// Radial gate: theta_hat(|u|^2) is 1 for |u| <= R and 0 for |u| >= 2R, a
/// quintic smoothstep in between.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub r: f64,
    /// Lipschitz constant of theta_hat'.
    pub l_theta_hat: f64,
}

impl Cutoff {
    pub fn new(r: f64) -> Result<Self> {
        pre(r > 0.0 && r.is_finite(), || format!("cut-off radius {r} must be positive"))?;
        Ok(Cutoff { r, l_theta_hat: 10.0 / (9.0 * 3f64.sqrt() * r.powi(4)) })
    }

    fn t(&self, x: f64) -> f64 {
        (x - self.r * self.r) / (3.0 * self.r * self.r)
    }

    pub fn theta_hat(&self, x: f64) -> f64 {
        let r2 = self.r * self.r;
        if x <= r2 {
            1.0
        } else if x >= 4.0 * r2 {
            0.0
        } else {
            let t = self.t(x);
            1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t)
        }
    }

    pub fn theta_hat_prime(&self, x: f64) -> f64 {
        let r2 = self.r * self.r;
        if x <= r2 || x >= 4.0 * r2 {
            0.0
        } else {
            let t = self.t(x);
            -30.0 * t * t * (1.0 - t) * (1.0 - t) / (3.0 * r2)
        }
    }

    /// sup |theta_hat'| = 5 / (8 R^2).
    pub fn theta_hat_prime_sup(&self) -> f64 {
        5.0 / (8.0 * self.r * self.r)
    }
}

/// Which norm gates the cut-off.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateSpace {
    /// X_eps^alpha of a field on Q.
    Eps,
    /// X_eps^alpha of the extension of a 1D field.
    LiftedLimit,
    /// X_0^alpha of a 1D field.
    Limit,
}

/// Bases needed to evaluate a gate and the domain norm of a nonlinearity.
#[derive(Clone, Copy)]
pub struct GateContext<'a> {
    pub space: GateSpace,
    /// Basis whose operator defines the gate norm.
    pub gate: &'a EigenBasis,
    /// Basis whose operator defines the X^alpha norm of the arguments.
    pub domain: &'a EigenBasis,
    pub transfer: Option<&'a TransferOperators>,
}

impl<'a> GateContext<'a> {
    pub fn eps(basis_eps: &'a EigenBasis) -> Self {
        GateContext { space: GateSpace::Eps, gate: basis_eps, domain: basis_eps, transfer: None }
    }

    pub fn lifted(basis_eps: &'a EigenBasis, basis0: &'a EigenBasis, transfer: &'a TransferOperators) -> Self {
        GateContext { space: GateSpace::LiftedLimit, gate: basis_eps, domain: basis0, transfer: Some(transfer) }
    }

    pub fn limit(basis0: &'a EigenBasis) -> Self {
        GateContext { space: GateSpace::Limit, gate: basis0, domain: basis0, transfer: None }
    }

    fn to_gate(&self, fields: &[Vec<f64>]) -> Vec<Vec<f64>> {
        match (self.space, self.transfer) {
            (GateSpace::LiftedLimit, Some(t)) => fields.iter().map(|u| t.extend(u)).collect(),
            _ => fields.to_vec(),
        }
    }

    /// Gate norms of a batch of arguments, over the whole discrete spectrum.
    pub fn norms(&self, fields: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.gate.full_alpha_norms(&self.to_gate(fields))
    }

    /// Gate inner products <u_i, h_j>.
    pub fn gram(&self, left: &[Vec<f64>], right: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        self.gate.full_alpha_gram(&self.to_gate(left), &self.to_gate(right))
    }

    /// X^alpha norms in the argument space.
    pub fn domain_norms(&self, fields: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.domain.full_alpha_norms(fields)
    }

    /// L2 norm of an output field in the argument space.
    pub fn l2(&self, u: &[f64]) -> f64 {
        self.domain.mass().quad(u).max(0.0).sqrt()
    }
}

/// Empirical constants of a prepared nonlinearity.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LipschitzRecord {
    /// sup |F(u)|_{L2} over the probes.
    pub c_f: f64,
    /// Largest difference quotient |F(u) - F(v)|_{L2} / |u - v|_alpha.
    pub l_f: f64,
    /// Bound assembled from L_f, theta_hat and R.
    pub l_f_bound: f64,
    /// Fitted Hoelder exponent of DF.
    pub theta_f: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NonlinearOperator {
    pub reaction: ReactionTerm,
    pub cutoff: Cutoff,
    pub space: GateSpace,
    pub measured: Option<LipschitzRecord>,
}

impl NonlinearOperator {
    pub fn new(reaction: ReactionTerm, cutoff: Cutoff, space: GateSpace) -> Self {
        NonlinearOperator { reaction, cutoff, space, measured: None }
    }

    fn check(&self, ctx: &GateContext) -> Result<()> {
        if self.space != ctx.space {
            return Err(LabError::Precondition(format!(
                "nonlinearity gated in {:?} evaluated with a {:?} context",
                self.space, ctx.space
            )));
        }
        if self.space == GateSpace::LiftedLimit && ctx.transfer.is_none() {
            return Err(LabError::Precondition("lifted gate needs transfer operators".into()));
        }
        Ok(())
    }
}

/// Theta(|u|_gate^2) f(u) for a batch of fields.
pub fn apply_cutoff_f_many(fields: &[Vec<f64>], op: &NonlinearOperator, ctx: &GateContext) -> Result<Vec<Vec<f64>>> {
    op.check(ctx)?;
    let norms = ctx.norms(fields)?;
    Ok(fields
        .iter()
        .zip(norms)
        .map(|(u, n)| {
            let th = op.cutoff.theta_hat(n * n);
            u.iter().map(|&s| th * op.reaction.f(s)).collect()
        })
        .collect())
}

pub fn apply_cutoff_f(u: &[f64], op: &NonlinearOperator, ctx: &GateContext) -> Result<Vec<f64>> {
    Ok(apply_cutoff_f_many(&[u.to_vec()], op, ctx)?.pop().expect("one field"))
}

/// Exact derivative DF(u) applied to each direction:
/// theta_hat f'(u) h + 2 theta_hat' <u, h>_gate f(u).
pub fn apply_cutoff_df(u: &[f64], dirs: &[Vec<f64>], op: &NonlinearOperator, ctx: &GateContext) -> Result<Vec<Vec<f64>>> {
    op.check(ctx)?;
    let g = ctx.gram(&[u.to_vec()], dirs)?;
    let n2 = ctx.norms(&[u.to_vec()])?[0].powi(2);
    let th = op.cutoff.theta_hat(n2);
    let dth = op.cutoff.theta_hat_prime(n2);
    Ok(dirs
        .iter()
        .enumerate()
        .map(|(j, h)| {
            let c = 2.0 * dth * g[(0, j)];
            u.iter().zip(h).map(|(&s, &hs)| th * op.reaction.f_prime(s) * hs + c * op.reaction.f(s)).collect()
        })
        .collect())
}

/// |F_eps(E u0) - E F_0^eps(u0)|_{L2(Q)}.
pub fn commutation_check(
    u0: &[f64],
    transfer: &TransferOperators,
    op_eps: &NonlinearOperator,
    ctx_eps: &GateContext,
    op_lifted: &NonlinearOperator,
    ctx_lifted: &GateContext,
) -> Result<f64> {
    let left = apply_cutoff_f(&transfer.extend(u0), op_eps, ctx_eps)?;
    let right = transfer.extend(&apply_cutoff_f(u0, op_lifted, ctx_lifted)?);
    Ok(transfer.norm_q(&linalg::sub(&left, &right)))
}

/// Which pair of prepared nonlinearities `rho_beta_metrics` compares.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NonlinearPair {
    /// F_eps against F_0^eps.
    EpsLifted,
    /// F_0^eps against F_0.
    LiftedLimit,
}

/// Closeness of two prepared nonlinearities on a sample of 1D fields:
/// rho from values, beta from directional finite differences along `dirs`.
#[allow(clippy::too_many_arguments)]
pub fn rho_beta_metrics(
    samples: &[Vec<f64>],
    dirs: &[Vec<f64>],
    transfer: &TransferOperators,
    pair: NonlinearPair,
    first: (&NonlinearOperator, &GateContext),
    second: (&NonlinearOperator, &GateContext),
) -> Result<(f64, f64)> {
    pre(!samples.is_empty(), || "empty sample list".into())?;
    pre(!dirs.is_empty(), || "empty direction list".into())?;
    let step = 1e-6;
    let first_on = |v: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        match pair {
            NonlinearPair::EpsLifted => {
                let lifted: Vec<Vec<f64>> = v.iter().map(|u| transfer.extend(u)).collect();
                apply_cutoff_f_many(&lifted, first.0, first.1)
            }
            NonlinearPair::LiftedLimit => Ok(apply_cutoff_f_many(v, first.0, first.1)?
                .iter()
                .map(|w| transfer.extend(w))
                .collect()),
        }
    };
    let second_on = |v: &[Vec<f64>]| -> Result<Vec<Vec<f64>>> {
        Ok(apply_cutoff_f_many(v, second.0, second.1)?.iter().map(|w| transfer.extend(w)).collect())
    };
    let dir_norms = second.1.domain_norms(dirs)?;
    let (mut rho, mut beta) = (0.0f64, 0.0f64);
    for u in samples {
        let mut batch = vec![u.clone()];
        for h in dirs {
            batch.push(u.iter().zip(h).map(|(a, b)| a + step * b).collect());
        }
        let a = first_on(&batch)?;
        let b = second_on(&batch)?;
        rho = rho.max(transfer.norm_q(&linalg::sub(&a[0], &b[0])));
        for j in 0..dirs.len() {
            let da: Vec<f64> = a[j + 1].iter().zip(&a[0]).map(|(p, q)| (p - q) / step).collect();
            let db: Vec<f64> = b[j + 1].iter().zip(&b[0]).map(|(p, q)| (p - q) / step).collect();
            if dir_norms[j] > 0.0 {
                beta = beta.max(transfer.norm_q(&linalg::sub(&da, &db)) / dir_norms[j]);
            }
        }
    }
    Ok((rho, beta))
}

/// min{1, 4 alpha / (d - 4 alpha)}.
pub fn holder_theta(alpha: f64, d: usize) -> f64 {
    (4.0 * alpha / (d as f64 - 4.0 * alpha)).min(1.0)
}

/// L_F bound from the product rule:
/// L_f c_M lambda_1^-alpha + 4 R sup|theta_hat'| sup|f| |Q|^(1/2),
/// where c_M^2 bounds the lumped mass by the consistent one.
pub fn analytic_lf_bound(op: &NonlinearOperator, ctx: &GateContext) -> Result<f64> {
    let lambda1 = ctx.domain.values[0];
    let c_m = linalg::lumped_mass_ratio(ctx.domain.mass())?.sqrt();
    let volume = ctx.domain.mass().matvec(&vec![1.0; ctx.domain.dim()]).iter().sum::<f64>();
    let sup_f = if op.reaction.m.is_finite() { op.reaction.lf } else { 0.0 };
    Ok(op.reaction.lip * c_m * lambda1.powf(-ctx.domain.alpha)
        + 4.0 * op.cutoff.r * op.cutoff.theta_hat_prime_sup() * sup_f * volume.sqrt())
}

/// Empirical C_F and L_F over probe pairs, and the Hoelder exponent of DF
/// fitted over the same pairs (directions: the first domain modes and u - v).
pub fn lipschitz_estimator(op: &NonlinearOperator, ctx: &GateContext, probes: &[(Vec<f64>, Vec<f64>)]) -> Result<LipschitzRecord> {
    pre(!probes.is_empty(), || "no probe pairs".into())?;
    let us: Vec<Vec<f64>> = probes.iter().map(|p| p.0.clone()).collect();
    let vs: Vec<Vec<f64>> = probes.iter().map(|p| p.1.clone()).collect();
    let diffs: Vec<Vec<f64>> = probes.iter().map(|(u, v)| linalg::sub(u, v)).collect();
    let fu = apply_cutoff_f_many(&us, op, ctx)?;
    let fv = apply_cutoff_f_many(&vs, op, ctx)?;
    let dn = ctx.domain_norms(&diffs)?;
    let mut rec = LipschitzRecord { l_f_bound: analytic_lf_bound(op, ctx)?, ..Default::default() };
    for j in 0..probes.len() {
        rec.c_f = rec.c_f.max(ctx.l2(&fu[j])).max(ctx.l2(&fv[j]));
        if dn[j] > 0.0 {
            rec.l_f = rec.l_f.max(ctx.l2(&linalg::sub(&fu[j], &fv[j])) / dn[j]);
        }
    }
    let modes = ctx.domain.len().min(6);
    let mut logs_x = Vec::new();
    let mut logs_y = Vec::new();
    for j in 0..probes.len() {
        if dn[j] == 0.0 {
            continue;
        }
        let mut dirs: Vec<Vec<f64>> = (0..modes).map(|i| ctx.domain.vector(i)).collect();
        dirs.push(diffs[j].clone());
        let hn = ctx.domain_norms(&dirs)?;
        let du = apply_cutoff_df(&us[j], &dirs, op, ctx)?;
        let dv = apply_cutoff_df(&vs[j], &dirs, op, ctx)?;
        let mut worst = 0.0f64;
        for i in 0..dirs.len() {
            worst = worst.max(ctx.l2(&linalg::sub(&du[i], &dv[i])) / hn[i]);
        }
        if worst > 0.0 {
            logs_x.push(dn[j].ln());
            logs_y.push(worst.ln());
        }
    }
    rec.theta_f = if logs_x.len() >= 2 { least_squares_line(&logs_x, &logs_y).0 } else { f64::NAN };
    Ok(rec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ChannelProfile;
    use crate::operators::{assemble_a0, eigs, OperatorConfig};

    fn limit_basis(n: usize, modes: usize) -> EigenBasis {
        let p = ChannelProfile::sine(0.3, 2).unwrap();
        let op = assemble_a0(&p, &OperatorConfig::limit(1.0, 0.25).unwrap(), n).unwrap();
        eigs(&op, modes).unwrap()
    }

    #[test]
    fn reaction_examples() {
        let r = ReactionTerm::default_cubic();
        assert_eq!(nemytskii(&[2.0, 0.0, -2.0], &r), vec![2.0, 0.0, -2.0]);
        for j in 0..=1000 {
            let s = -r.m + 2.0 * r.m * j as f64 / 1000.0;
            if s.abs() < r.m {
                assert_eq!(r.f(s), r.inside_form(s));
            }
            let t = r.m * (1.0 + 2.0 * j as f64 / 1000.0);
            assert!(r.f(t) * t <= 0.0 && r.f(-t) * (-t) <= 0.0);
        }
        // C^2 matching at M
        let m = r.m;
        for (a, b) in [(r.f(m - 1e-9), r.f(m + 1e-9)), (r.f_prime(m - 1e-9), r.f_prime(m + 1e-9)), (r.f_second(m - 1e-9), r.f_second(m + 1e-9))] {
            assert!((a - b).abs() < 1e-6, "{a} {b}");
        }
        for s in [-3.0, 0.4, 2.9, 7.0] {
            let h = 1e-6;
            assert!(((r.f(s + h) - r.f(s - h)) / (2.0 * h) - r.f_prime(s)).abs() < 1e-6);
            assert!(((r.f_prime(s + h) - r.f_prime(s - h)) / (2.0 * h) - r.f_second(s)).abs() < 1e-5);
        }
        assert!(r.lf >= 5.0 && r.lf.is_finite());
    }

    #[test]
    fn cutoff_profile() {
        let c = Cutoff::new(1.5).unwrap();
        let r2 = 2.25;
        assert_eq!(c.theta_hat(r2), 1.0);
        assert_eq!(c.theta_hat(4.0 * r2), 0.0);
        let mut lip = 0.0f64;
        let mut dmax = 0.0f64;
        let n = 20000;
        for j in 0..n {
            let x0 = 5.0 * r2 * j as f64 / n as f64;
            let x1 = 5.0 * r2 * (j + 1) as f64 / n as f64;
            let v = c.theta_hat(x0);
            assert!((0.0..=1.0).contains(&v));
            lip = lip.max((c.theta_hat_prime(x1) - c.theta_hat_prime(x0)).abs() / (x1 - x0));
            dmax = dmax.max(c.theta_hat_prime(x0).abs());
        }
        assert!(lip <= c.l_theta_hat * (1.0 + 1e-9));
        assert!(dmax <= c.theta_hat_prime_sup() * (1.0 + 1e-12));
    }

    #[test]
    fn gate_regions() {
        let b = limit_basis(64, 6);
        let ctx = GateContext::limit(&b);
        let op = NonlinearOperator::new(ReactionTerm::default_cubic(), Cutoff::new(2.0).unwrap(), GateSpace::Limit);
        let u: Vec<f64> = b.vector(1).iter().map(|v| 0.3 * v + 0.1).collect();
        let n = ctx.norms(&[u.clone()]).unwrap()[0];
        for (scale, expect) in [(0.9 * 2.0 / n, 1.0), (2.01 * 2.0 / n, 0.0)] {
            let w: Vec<f64> = u.iter().map(|v| v * scale).collect();
            let got = apply_cutoff_f(&w, &op, &ctx).unwrap();
            for (g, s) in got.iter().zip(&w) {
                assert_eq!(*g, expect * op.reaction.f(*s));
            }
        }
        let w: Vec<f64> = u.iter().map(|v| v * 1.5 * 2.0 / n).collect();
        let got = apply_cutoff_f(&w, &op, &ctx).unwrap();
        let ratio = got[3] / op.reaction.f(w[3]);
        assert!(ratio > 0.0 && ratio < 1.0);
    }

    #[test]
    fn linear_reaction_lipschitz() {
        let b = limit_basis(64, 8);
        let ctx = GateContext::limit(&b);
        let op = NonlinearOperator::new(ReactionTerm::linear(3.0), Cutoff::new(50.0).unwrap(), GateSpace::Limit);
        let mut probes = Vec::new();
        for j in 0..6 {
            let u: Vec<f64> = b.vector(j % 3).iter().map(|v| 0.2 * v).collect();
            let mut v = u.clone();
            for (vi, p) in v.iter_mut().zip(b.vector(0)) {
                *vi += 1e-2 * (j + 1) as f64 * p;
            }
            probes.push((u, v));
        }
        let rec = lipschitz_estimator(&op, &ctx, &probes).unwrap();
        assert!((rec.l_f - 3.0).abs() < 0.05 * 3.0, "{}", rec.l_f);
        assert!(rec.l_f <= rec.l_f_bound);
    }

    #[test]
    fn derivative_matches_finite_difference() {
        let b = limit_basis(48, 6);
        let ctx = GateContext::limit(&b);
        let op = NonlinearOperator::new(ReactionTerm::default_cubic(), Cutoff::new(1.0).unwrap(), GateSpace::Limit);
        let u: Vec<f64> = b.vector(0).iter().zip(b.vector(2)).map(|(a, c)| 0.9 * a + 0.4 * c).collect();
        let n = ctx.norms(&[u.clone()]).unwrap()[0];
        assert!(n > 1.0 && n < 2.0, "gate norm {n} should sit in the transition");
        let h = b.vector(1);
        let d = apply_cutoff_df(&u, &[h.clone()], &op, &ctx).unwrap().pop().unwrap();
        let s = 1e-6;
        let up: Vec<f64> = u.iter().zip(&h).map(|(a, c)| a + s * c).collect();
        let um: Vec<f64> = u.iter().zip(&h).map(|(a, c)| a - s * c).collect();
        let fp = apply_cutoff_f(&up, &op, &ctx).unwrap();
        let fm = apply_cutoff_f(&um, &op, &ctx).unwrap();
        let fd: Vec<f64> = fp.iter().zip(&fm).map(|(a, c)| (a - c) / (2.0 * s)).collect();
        assert!(ctx.l2(&linalg::sub(&fd, &d)) < 1e-6 * ctx.l2(&d).max(1.0));
    }
}
