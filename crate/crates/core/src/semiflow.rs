//! Exponential time stepping in an eigenbasis, equilibria and attractor sampling.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{pre, LabError, Result};
use crate::linalg::{self, lumped};
use crate::nonlinearity::{NonlinearOperator, ReactionTerm};
use crate::operators::{DiscreteOperator, EigenBasis, TransferOperators};

pub const DEFAULT_DT: f64 = 1.0 / 256.0;
pub const GAP_TOL: f64 = 1e-6;
pub const HETEROCLINIC_BUDGET: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Exponential Euler.
    Etd1,
    /// Cox-Matthews fourth-order exponential Runge-Kutta.
    Etdrk4,
}

/// Quadratic form giving the squared gate norm from basis coefficients.
#[derive(Clone, Debug)]
pub enum GateWeights {
    Diagonal(Vec<f64>),
    Dense(DMatrix<f64>),
}

impl GateWeights {
    fn apply(&self, c: &DVector<f64>) -> DVector<f64> {
        match self {
            GateWeights::Diagonal(w) => DVector::from_iterator(c.len(), c.iter().zip(w).map(|(a, b)| a * b)),
            GateWeights::Dense(w) => w * c,
        }
    }

    fn quad(&self, c: &DVector<f64>) -> f64 {
        c.dot(&self.apply(c))
    }

    /// Weights of the X^alpha norm of the basis itself.
    pub fn own(basis: &EigenBasis) -> Self {
        GateWeights::Diagonal(basis.weights())
    }

    /// Weights of |E u|_{X_eps^alpha} for u in the span of a limit basis.
    pub fn lifted(basis_eps: &EigenBasis, basis0: &EigenBasis, transfer: &TransferOperators) -> Result<Self> {
        let cols: Vec<Vec<f64>> = (0..basis0.len()).map(|j| transfer.extend(&basis0.vector(j))).collect();
        Ok(GateWeights::Dense(basis_eps.full_alpha_gram(&cols, &cols)?))
    }
}

/// Right-hand side nonlinearity of a flow.
#[derive(Clone, Debug)]
pub enum FlowNonlinearity {
    Zero,
    /// Plain Nemytskii operator of the sup-norm cut reaction.
    Plain(ReactionTerm),
    /// Reaction gated by the radial X^alpha cut-off.
    Prepared { op: NonlinearOperator, gate: GateWeights },
}

impl FlowNonlinearity {
    pub fn reaction(&self) -> Option<&ReactionTerm> {
        match self {
            FlowNonlinearity::Zero => None,
            FlowNonlinearity::Plain(r) => Some(r),
            FlowNonlinearity::Prepared { op, .. } => Some(&op.reaction),
        }
    }
}

// phi_k(z) = sum_j z^j / (j + k)!
fn phi(k: usize, z: f64) -> f64 {
    if z.abs() < 0.2 {
        let mut term = 1.0;
        for j in 1..=k {
            term /= j as f64;
        }
        let mut sum = 0.0;
        for j in 0..20 {
            sum += term;
            term *= z / (j + k + 1) as f64;
        }
        sum
    } else {
        let mut p = z.exp();
        let mut fact = 1.0;
        for j in 1..=k {
            p = (p - 1.0 / fact) / z;
            fact *= j as f64;
        }
        p
    }
}

#[derive(Clone, Debug)]
struct EtdCoeffs {
    e: Vec<f64>,
    e2: Vec<f64>,
    q: Vec<f64>,
    b1: Vec<f64>,
    b2: Vec<f64>,
    b4: Vec<f64>,
}

impl EtdCoeffs {
    fn new(values: &[f64], h: f64) -> Self {
        let mut c = EtdCoeffs { e: vec![], e2: vec![], q: vec![], b1: vec![], b2: vec![], b4: vec![] };
        for &l in values {
            let z = -l * h;
            let (p1, p2, p3) = (phi(1, z), phi(2, z), phi(3, z));
            c.e.push(z.exp());
            c.e2.push((0.5 * z).exp());
            c.q.push(0.5 * h * phi(1, 0.5 * z));
            c.b1.push(h * (p1 - 3.0 * p2 + 4.0 * p3));
            c.b2.push(h * (2.0 * p2 - 4.0 * p3));
            c.b4.push(h * (-p2 + 4.0 * p3));
        }
        c
    }
}

fn scale_rows(d: &[f64], m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for (i, di) in d.iter().enumerate() {
        out.row_mut(i).scale_mut(*di);
    }
    out
}

/// Exponential integrator for c' = -diag(values) c + N(c) on blocks of columns.
#[derive(Clone, Debug)]
pub struct ExpIntegrator {
    pub scheme: Scheme,
    coeffs: EtdCoeffs,
}

impl ExpIntegrator {
    pub fn new(values: &[f64], h: f64, scheme: Scheme) -> Self {
        ExpIntegrator { scheme, coeffs: EtdCoeffs::new(values, h) }
    }

    pub fn step<N>(&self, c: &mut DMatrix<f64>, mut n: N) -> Result<()>
    where
        N: FnMut(&DMatrix<f64>) -> Result<DMatrix<f64>>,
    {
        let k = &self.coeffs;
        let nv = n(c)?;
        match self.scheme {
            Scheme::Etd1 => {
                let phi1: Vec<f64> = k.b1.iter().zip(&k.b2).zip(&k.b4).map(|((a, b), d)| a + 2.0 * b + d).collect();
                *c = scale_rows(&k.e, c) + scale_rows(&phi1, &nv);
            }
            Scheme::Etdrk4 => {
                let e2v = scale_rows(&k.e2, c);
                let a = &e2v + scale_rows(&k.q, &nv);
                let na = n(&a)?;
                let b = &e2v + scale_rows(&k.q, &na);
                let nb = n(&b)?;
                let cc = scale_rows(&k.e2, &a) + scale_rows(&k.q, &(2.0 * &nb - &nv));
                let nc = n(&cc)?;
                *c = scale_rows(&k.e, c) + scale_rows(&k.b1, &nv) + scale_rows(&k.b2, &(na + nb)) + scale_rows(&k.b4, &nc);
            }
        }
        Ok(())
    }
}

/// Time stepper for u' = -A u + F(u) in the coordinates of an eigenbasis.
/// The nonlinear term enters through the lumped mass, so that the discrete
/// energy is an exact Lyapunov function of the semi-discrete flow.
#[derive(Clone, Debug)]
pub struct Stepper {
    pub basis: Arc<EigenBasis>,
    pub dt: f64,
    pub scheme: Scheme,
    pub nonlinearity: FlowNonlinearity,
    /// Rows (M_L phi_i)^T.
    lumped_proj: DMatrix<f64>,
    lumped_diag: Vec<f64>,
    integrator: ExpIntegrator,
    guard: f64,
}

impl Stepper {
    pub fn new(basis: Arc<EigenBasis>, dt: f64, scheme: Scheme, nonlinearity: FlowNonlinearity) -> Result<Self> {
        pre(dt > 0.0 && (1.0 / dt).fract().abs() < 1e-9, || format!("dt = {dt} must divide 1"))?;
        let ml = lumped(basis.mass());
        let lumped_diag: Vec<f64> = (0..basis.dim()).map(|i| ml.get(i, i)).collect();
        let lumped_proj = DMatrix::from_fn(basis.len(), basis.dim(), |i, j| basis.vectors[(j, i)] * lumped_diag[j]);
        let guard = match &nonlinearity {
            FlowNonlinearity::Plain(r) => 10.0 * r.m,
            _ => f64::MAX,
        };
        let integrator = ExpIntegrator::new(&basis.values, dt, scheme);
        Ok(Stepper { basis, dt, scheme, nonlinearity, lumped_proj, lumped_diag, integrator, guard })
    }

    pub fn steps_per_unit(&self) -> usize {
        (1.0 / self.dt).round() as usize
    }

    pub fn len(&self) -> usize {
        self.basis.len()
    }

    pub fn is_empty(&self) -> bool {
        self.basis.is_empty()
    }

    /// Coefficients of a nodal field, under the truncation contract.
    pub fn to_coeffs(&self, u: &[f64]) -> Result<DVector<f64>> {
        if self.basis.complete {
            Ok(self.basis.coefficients(u))
        } else {
            self.basis.checked_coefficients(u)
        }
    }

    pub fn to_field(&self, c: &DVector<f64>) -> Vec<f64> {
        self.basis.synthesize(c)
    }

    fn columns(&self, fields: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(self.len(), fields.len());
        for (j, u) in fields.iter().enumerate() {
            out.set_column(j, &self.to_coeffs(u)?);
        }
        Ok(out)
    }

    pub(crate) fn gate_factor(&self, c: &DVector<f64>) -> (f64, f64) {
        match &self.nonlinearity {
            FlowNonlinearity::Prepared { op, gate } => {
                let n2 = gate.quad(c);
                (op.cutoff.theta_hat(n2), op.cutoff.theta_hat_prime(n2))
            }
            _ => (1.0, 0.0),
        }
    }

    /// Projected nonlinearity for each column, with the sup norm of the
    /// nodal states.
    fn nonlinear(&self, c: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
        let Some(reaction) = self.nonlinearity.reaction() else {
            return (DMatrix::zeros(c.nrows(), c.ncols()), 0.0);
        };
        let mut u = &self.basis.vectors * c;
        let mut sup = 0.0f64;
        for j in 0..c.ncols() {
            let th = self.gate_factor(&c.column(j).into_owned()).0;
            for v in u.column_mut(j).iter_mut() {
                sup = sup.max(v.abs());
                *v = th * reaction.f(*v);
            }
        }
        (&self.lumped_proj * u, sup)
    }

    fn check_guard(&self, sup: f64) -> Result<()> {
        if sup > self.guard || !sup.is_finite() {
            return Err(LabError::BlowUp { sup, limit: self.guard });
        }
        Ok(())
    }

    /// One substep on a block of coefficient columns.
    fn step(&self, c: &mut DMatrix<f64>) -> Result<()> {
        self.integrator.step(c, |x| {
            let (v, sup) = self.nonlinear(x);
            self.check_guard(sup)?;
            Ok(v)
        })
    }

    /// First `m` rows of the lumped projection.
    pub(crate) fn lumped_rows(&self, m: usize) -> DMatrix<f64> {
        self.lumped_proj.rows(0, m).into_owned()
    }

    /// Advances columns in parallel blocks.
    pub fn advance_par(&self, c: &mut DMatrix<f64>, steps: usize) -> Result<()> {
        let block = 8;
        let k = c.nrows();
        let blocks: Vec<DMatrix<f64>> = (0..c.ncols())
            .step_by(block)
            .map(|j| c.columns(j, block.min(c.ncols() - j)).into_owned())
            .collect();
        let done: Vec<DMatrix<f64>> = blocks
            .into_par_iter()
            .map(|mut b| self.advance(&mut b, steps).map(|_| b))
            .collect::<Result<_>>()?;
        let mut j = 0;
        for b in done {
            c.view_mut((0, j), (k, b.ncols())).copy_from(&b);
            j += b.ncols();
        }
        Ok(())
    }

    /// P_L F(Phi c) for each column.
    pub fn projected_nonlinearity(&self, c: &DMatrix<f64>) -> DMatrix<f64> {
        self.nonlinear(c).0
    }

    /// Advances coefficient columns by `steps` substeps.
    pub fn advance(&self, c: &mut DMatrix<f64>, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.step(c)?;
        }
        Ok(())
    }

    pub fn time_one_coeffs(&self, c: &DVector<f64>) -> Result<DVector<f64>> {
        let mut m = DMatrix::from_column_slice(c.len(), 1, c.as_slice());
        self.advance(&mut m, self.steps_per_unit())?;
        Ok(m.column(0).into_owned())
    }

    /// S(1) applied to a batch of nodal fields.
    pub fn time_one_many(&self, fields: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let mut c = self.columns(fields)?;
        self.advance_par(&mut c, self.steps_per_unit())?;
        Ok((0..c.ncols()).map(|j| self.to_field(&c.column(j).into_owned())).collect())
    }

    pub fn time_one_map(&self, u: &[f64]) -> Result<Vec<f64>> {
        Ok(self.time_one_many(&[u.to_vec()])?.pop().expect("one field"))
    }

    /// -Lambda c + P_L F(Phi c).
    pub fn residual(&self, c: &DVector<f64>) -> DVector<f64> {
        let m = DMatrix::from_column_slice(c.len(), 1, c.as_slice());
        let (n, _) = self.nonlinear(&m);
        let mut r = n.column(0).into_owned();
        for (ri, (ci, l)) in r.iter_mut().zip(c.iter().zip(&self.basis.values)) {
            *ri -= l * ci;
        }
        r
    }

    /// Exact Jacobian of `residual`: -Lambda + P_L diag(theta f'(u)) Phi plus
    /// the rank-one gate term.
    pub fn jacobian(&self, c: &DVector<f64>) -> DMatrix<f64> {
        let k = self.len();
        let mut j = DMatrix::zeros(k, k);
        if let Some(reaction) = self.nonlinearity.reaction() {
            let u = &self.basis.vectors * c;
            let (th, dth) = self.gate_factor(c);
            let mut scaled = self.basis.vectors.clone();
            for (i, mut row) in scaled.row_iter_mut().enumerate() {
                row.scale_mut(th * reaction.f_prime(u[i]) * self.lumped_diag[i]);
            }
            j = self.basis.vectors.transpose() * scaled;
            if dth != 0.0 {
                if let FlowNonlinearity::Prepared { gate, .. } = &self.nonlinearity {
                    let fu = DVector::from_iterator(u.len(), u.iter().map(|&s| reaction.f(s)));
                    let pf = &self.lumped_proj * fu;
                    let wc = gate.apply(c);
                    j += 2.0 * dth * pf * wc.transpose();
                }
            }
        }
        for i in 0..k {
            j[(i, i)] -= self.basis.values[i];
        }
        j
    }

    /// Lyapunov function of the lumped semi-discrete flow:
    /// 1/2 sum lambda_i c_i^2 - sum_j m_j P(u_j), with P' = f.
    pub fn energy(&self, c: &DVector<f64>) -> f64 {
        let quad: f64 = c.iter().zip(&self.basis.values).map(|(ci, l)| 0.5 * l * ci * ci).sum();
        let Some(reaction) = self.nonlinearity.reaction() else {
            return quad;
        };
        let u = &self.basis.vectors * c;
        let prim: f64 = u.iter().zip(&self.lumped_diag).map(|(&s, m)| m * primitive(reaction, s)).sum();
        quad - prim
    }
}

/// Integral of f from 0 to s; composite Simpson beyond the cut.
fn primitive(reaction: &ReactionTerm, s: f64) -> f64 {
    if let crate::nonlinearity::ReactionKind::Cubic { a } = reaction.kind {
        if s.abs() < reaction.m {
            return 0.5 * a * s * s - 0.25 * s.powi(4);
        }
    }
    let n = 64;
    let h = s / n as f64;
    let mut acc = reaction.f(0.0) + reaction.f(s);
    for j in 1..n {
        acc += if j % 2 == 1 { 4.0 } else { 2.0 } * reaction.f(j as f64 * h);
    }
    acc * h / 3.0
}

/// Equilibria found by Newton iteration, with their linearizations.
#[derive(Clone, Debug)]
pub struct EquilibriumSet {
    pub coeffs: Vec<DVector<f64>>,
    pub points: Vec<Vec<f64>>,
    pub residuals: Vec<f64>,
    /// Ascending eigenvalues of the symmetric linearization.
    pub spectra: Vec<Vec<f64>>,
    pub unstable_dims: Vec<usize>,
    pub hyperbolic: Vec<bool>,
    /// min |eigenvalue| of each linearization.
    pub margins: Vec<f64>,
    /// Unstable eigenvectors in basis coordinates.
    pub unstable_vectors: Vec<Vec<DVector<f64>>>,
    /// Seeds whose Newton iteration failed, with the reason.
    pub failures: Vec<(usize, String)>,
}

impl EquilibriumSet {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn newton(stepper: &Stepper, mut c: DVector<f64>) -> Result<(DVector<f64>, f64)> {
    let mut history = Vec::new();
    for _ in 0..60 {
        let r = stepper.residual(&c);
        let rn = r.norm();
        history.push(rn);
        if rn <= 1e-12 {
            return Ok((c, rn));
        }
        let j = stepper.jacobian(&c);
        let dc = linalg::dense_solve(&j, &(-r)).ok_or_else(|| LabError::NewtonDivergence(history.clone()))?;
        c += dc;
        if !c.iter().all(|v| v.is_finite()) {
            return Err(LabError::NewtonDivergence(history));
        }
    }
    // stagnation at roundoff is accepted if the residual is within the contract
    let rn = stepper.residual(&c).norm();
    if rn <= 1e-10 {
        return Ok((c, rn));
    }
    history.push(rn);
    Err(LabError::NewtonDivergence(history))
}

/// Newton on -A u + F(u) = 0 from each seed; duplicates within 1e-6 in L2 merged.
pub fn find_equilibria(seeds: &[Vec<f64>], stepper: &Stepper) -> Result<EquilibriumSet> {
    pre(!seeds.is_empty(), || "no seeds".into())?;
    let mut set = EquilibriumSet {
        coeffs: vec![],
        points: vec![],
        residuals: vec![],
        spectra: vec![],
        unstable_dims: vec![],
        hyperbolic: vec![],
        margins: vec![],
        unstable_vectors: vec![],
        failures: vec![],
    };
    for (s, seed) in seeds.iter().enumerate() {
        let c0 = stepper.to_coeffs(seed)?;
        let (c, res) = match newton(stepper, c0) {
            Ok(v) => v,
            Err(e) => {
                set.failures.push((s, e.to_string()));
                continue;
            }
        };
        if set.coeffs.iter().any(|d| (d - &c).norm() <= 1e-6) {
            continue;
        }
        let j = stepper.jacobian(&c);
        let sym = 0.5 * (&j + j.transpose());
        let eig = SymmetricEigen::new(sym);
        let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let spectrum: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
        let unstable: Vec<DVector<f64>> = order
            .iter()
            .rev()
            .filter(|&&i| eig.eigenvalues[i] > 0.0)
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect();
        let margin = spectrum.iter().fold(f64::INFINITY, |m, l| m.min(l.abs()));
        set.points.push(stepper.to_field(&c));
        set.coeffs.push(c);
        set.residuals.push(res);
        set.unstable_dims.push(unstable.len());
        set.unstable_vectors.push(unstable);
        set.hyperbolic.push(margin >= GAP_TOL);
        set.margins.push(margin);
        set.spectra.push(spectrum);
    }
    Ok(set)
}

/// One sampled connection between equilibria.
#[derive(Clone, Debug)]
pub struct Connection {
    pub from: usize,
    /// Stable equilibrium reached, if the budget sufficed.
    pub to: Option<usize>,
    pub samples: Vec<DVector<f64>>,
}

/// Equilibria and sampled connections.
#[derive(Clone, Debug)]
pub struct AttractorApprox {
    pub equilibria: EquilibriumSet,
    pub connections: Vec<Connection>,
    /// Largest nodal |u| over every stored sample.
    pub max_sup: f64,
}

impl AttractorApprox {
    /// Every stored state in basis coordinates: equilibria first.
    pub fn states(&self) -> Vec<DVector<f64>> {
        let mut out = self.equilibria.coeffs.clone();
        for c in &self.connections {
            out.extend(c.samples.iter().cloned());
        }
        out
    }
}

/// Launches +-1e-4 perturbations along each unstable eigenvector and
/// integrates until within 1e-8 of a stable equilibrium, storing time-one
/// samples plus `dense_samples` extra samples in the first time unit.
pub fn approximate_attractor(eqs: &EquilibriumSet, stepper: &Stepper, dense_samples: usize) -> Result<AttractorApprox> {
    for (i, (&h, &m)) in eqs.hyperbolic.iter().zip(&eqs.margins).enumerate() {
        if !h {
            return Err(LabError::NotHyperbolic { index: i, mean: linalg::mean(&eqs.points[i]), margin: m });
        }
    }
    let stable: Vec<usize> = (0..eqs.len()).filter(|&i| eqs.unstable_dims[i] == 0).collect();
    let per_unit = stepper.steps_per_unit();
    let dense_every = if dense_samples > 0 { (per_unit / dense_samples).max(1) } else { per_unit };
    let mut launches = Vec::new();
    for (i, vecs) in eqs.unstable_vectors.iter().enumerate() {
        for v in vecs {
            for sign in [1.0, -1.0] {
                launches.push((i, &eqs.coeffs[i] + v * (sign * 1e-4)));
            }
        }
    }
    let mut connections = Vec::new();
    let mut max_sup = eqs.points.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for (from, start) in launches {
        let mut c = DMatrix::from_column_slice(start.len(), 1, start.as_slice());
        let mut samples = vec![start];
        let mut to = None;
        for step in 1..=HETEROCLINIC_BUDGET {
            stepper.step(&mut c)?;
            let col = c.column(0).into_owned();
            if step % per_unit == 0 || (step < per_unit && step % dense_every == 0) {
                samples.push(col.clone());
            }
            if let Some(&hit) = stable.iter().find(|&&s| (&col - &eqs.coeffs[s]).norm() <= 1e-8) {
                samples.push(col);
                to = Some(hit);
                break;
            }
        }
        for s in &samples {
            let u = &stepper.basis.vectors * s;
            max_sup = max_sup.max(u.amax());
        }
        connections.push(Connection { from, to, samples });
    }
    Ok(AttractorApprox { equilibria: eqs.clone(), connections, max_sup })
}

/// max over w0 of |T_eps(E w0) - E T_0(w0)|_{H_eps^1(Q)}.
pub fn time_one_distance(
    w0_set: &[Vec<f64>],
    stepper_eps: &Stepper,
    stepper0: &Stepper,
    transfer: &TransferOperators,
    op_eps: &DiscreteOperator,
) -> Result<f64> {
    pre(!w0_set.is_empty(), || "empty probe set".into())?;
    let lifted: Vec<Vec<f64>> = w0_set.iter().map(|w| transfer.extend(w)).collect();
    let a = stepper_eps.time_one_many(&lifted)?;
    let b = stepper0.time_one_many(w0_set)?;
    Ok(a.iter()
        .zip(&b)
        .map(|(x, y)| op_eps.h1_norm(&linalg::sub(x, &transfer.extend(y))))
        .fold(0.0, f64::max))
}

/// max over pairs of |T u - T w|_{H_eps^1} / |u - w|_{L2}; identical pairs skipped.
pub fn smoothing_lipschitz(stepper: &Stepper, op: &DiscreteOperator, pairs: &[(Vec<f64>, Vec<f64>)]) -> Result<f64> {
    pre(!pairs.is_empty(), || "no probe pairs".into())?;
    let mut fields = Vec::with_capacity(2 * pairs.len());
    for (u, w) in pairs {
        fields.push(u.clone());
        fields.push(w.clone());
    }
    let images = stepper.time_one_many(&fields)?;
    let mut worst = 0.0f64;
    for (j, (u, w)) in pairs.iter().enumerate() {
        let den = op.l2_norm(&linalg::sub(u, w));
        if den == 0.0 {
            continue;
        }
        worst = worst.max(op.h1_norm(&linalg::sub(&images[2 * j], &images[2 * j + 1])) / den);
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ChannelProfile;
    use crate::nonlinearity::{Cutoff, GateSpace};
    use crate::operators::{assemble_a0, eigs_full, ChannelPair, OperatorConfig};

    fn limit_stepper(nl: FlowNonlinearity) -> (Stepper, DiscreteOperator) {
        let p = ChannelProfile::sine(0.3, 2).unwrap();
        let op = assemble_a0(&p, &OperatorConfig::limit(1.0, 0.25).unwrap(), 65).unwrap();
        let b = Arc::new(eigs_full(&op).unwrap());
        (Stepper::new(b, DEFAULT_DT, Scheme::Etdrk4, nl).unwrap(), op)
    }

    fn scalar_oracle(u0: f64, t: f64) -> f64 {
        let f = |u: f64| 4.0 * u - u * u * u;
        let h = 1e-5;
        let mut u = u0;
        for _ in 0..(t / h).round() as usize {
            let k1 = f(u);
            let k2 = f(u + 0.5 * h * k1);
            let k3 = f(u + 0.5 * h * k2);
            let k4 = f(u + h * k3);
            u += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        }
        u
    }

    #[test]
    fn phi_functions_continuous() {
        for k in 1..=3 {
            let a = phi(k, 0.199999999);
            let b = phi(k, 0.200000001);
            assert!((a - b).abs() < 1e-8);
            let a = phi(k, -0.199999999);
            let b = phi(k, -0.200000001);
            assert!((a - b).abs() < 1e-8);
        }
        assert!((phi(1, 1.0) - (1f64.exp() - 1.0)).abs() < 1e-15);
    }

    #[test]
    fn linear_modes_exact() {
        let (s, _) = limit_stepper(FlowNonlinearity::Zero);
        for i in [0, 3, 10] {
            let u = s.basis.vector(i);
            let out = s.time_one_map(&u).unwrap();
            let expect: Vec<f64> = u.iter().map(|v| v * (-s.basis.values[i]).exp()).collect();
            let err = linalg::norm_inf(&linalg::sub(&out, &expect));
            assert!(err < 1e-10 * linalg::norm_inf(&u).max(1.0), "mode {i}: {err}");
        }
    }

    #[test]
    fn constant_follows_scalar_ode() {
        let (s, _) = limit_stepper(FlowNonlinearity::Plain(ReactionTerm::default_cubic()));
        let u = vec![0.1; s.basis.dim()];
        let out = s.time_one_map(&u).unwrap();
        let exact = scalar_oracle(0.1, 1.0);
        for v in out {
            assert!((v - exact).abs() < 1e-6, "{v} vs {exact}");
        }
    }

    #[test]
    fn etd_schemes_converge() {
        let (s, _) = limit_stepper(FlowNonlinearity::Plain(ReactionTerm::default_cubic()));
        let u: Vec<f64> = (0..s.basis.dim()).map(|i| 0.3 + 0.2 * (i as f64 * 0.2).cos()).collect();
        for scheme in [Scheme::Etd1, Scheme::Etdrk4] {
            let run = |dt: f64| {
                let st = Stepper::new(s.basis.clone(), dt, scheme, s.nonlinearity.clone()).unwrap();
                st.time_one_map(&u).unwrap()
            };
            let (a, b, c) = (run(1.0 / 16.0), run(1.0 / 32.0), run(1.0 / 64.0));
            let order = (linalg::norm2(&linalg::sub(&a, &b)) / linalg::norm2(&linalg::sub(&b, &c))).log2();
            assert!(order >= 0.9, "{scheme:?}: order {order}");
        }
    }

    #[test]
    fn equilibria_of_default_reaction() {
        let (s, op) = limit_stepper(FlowNonlinearity::Plain(ReactionTerm::default_cubic()));
        let n = op.dim();
        let seeds = vec![vec![-1.5; n], vec![0.2; n], vec![1.5; n]];
        let eqs = find_equilibria(&seeds, &s).unwrap();
        assert_eq!(eqs.len(), 3);
        for (p, target) in eqs.points.iter().zip([-2.0, 0.0, 2.0]) {
            assert!(p.iter().all(|v| (v - target).abs() < 1e-10));
        }
        assert_eq!(eqs.unstable_dims, vec![0, 1, 0]);
        assert!(eqs.margins.iter().all(|&m| m >= 1.0));
        for c in &eqs.coeffs {
            let fixed = s.time_one_coeffs(c).unwrap();
            assert!((fixed - c).norm() < 1e-8);
        }
        assert!(find_equilibria(&[], &s).is_err());
    }

    #[test]
    fn attractor_of_limit_system() {
        let (s, op) = limit_stepper(FlowNonlinearity::Plain(ReactionTerm::default_cubic()));
        let n = op.dim();
        let eqs = find_equilibria(&[vec![-1.5; n], vec![0.2; n], vec![1.5; n]], &s).unwrap();
        let att = approximate_attractor(&eqs, &s, 20).unwrap();
        assert_eq!(att.connections.len(), 2);
        let mut ends: Vec<usize> = att.connections.iter().map(|c| c.to.unwrap()).collect();
        ends.sort();
        assert_eq!(ends, vec![0, 2]);
        assert!(att.max_sup <= s.nonlinearity.reaction().unwrap().m + 0.05);
        for c in &att.connections {
            for st in &c.samples {
                let u = s.to_field(st);
                let mean = u.iter().sum::<f64>() / u.len() as f64;
                assert!(u.iter().all(|v| (v - mean).abs() < 1e-9), "connection left the constants");
            }
            let e: Vec<f64> = c.samples.iter().map(|st| s.energy(st)).collect();
            assert!(e.windows(2).all(|w| w[1] <= w[0] + 1e-8));
        }
    }

    #[test]
    fn dissipativity_from_large_data() {
        let (s, _) = limit_stepper(FlowNonlinearity::Plain(ReactionTerm::default_cubic()));
        let m = s.nonlinearity.reaction().unwrap().m;
        let u: Vec<f64> = (0..s.basis.dim()).map(|i| 3.0 * m * (0.7 * i as f64).sin()).collect();
        let mut c = DMatrix::from_column_slice(s.len(), 1, s.to_coeffs(&u).unwrap().as_slice());
        s.advance(&mut c, 20 * s.steps_per_unit()).unwrap();
        let sup = (&s.basis.vectors * &c).amax();
        assert!(sup <= m + 0.05, "{sup}");
    }

    #[test]
    fn smoothing_zero_nonlinearity_bound() {
        let pair = ChannelPair::new(&ChannelProfile::sine(0.3, 2).unwrap(), 1.0, 0.25, 0.25, 16, 4).unwrap();
        let b = Arc::new(eigs_full(&pair.op_eps).unwrap());
        let s = Stepper::new(b.clone(), DEFAULT_DT, Scheme::Etdrk4, FlowNonlinearity::Zero).unwrap();
        let pairs: Vec<(Vec<f64>, Vec<f64>)> = (0..6)
            .map(|j| (pair.op_eps.sample(|x, z| (j as f64 * x).cos() + z), vec![0.0; b.dim()]))
            .chain(std::iter::once((vec![1.0; b.dim()], vec![1.0; b.dim()])))
            .collect();
        let est = smoothing_lipschitz(&s, &pair.op_eps, &pairs).unwrap();
        let oracle = b.energy_weights().iter().zip(&b.values).map(|(w, l)| w.sqrt() * (-l).exp()).fold(0.0, f64::max);
        assert!(est <= oracle + 1e-6, "{est} vs {oracle}");
    }

    #[test]
    fn prepared_flow_matches_plain_inside_gate() {
        let (plain, op) = limit_stepper(FlowNonlinearity::Plain(ReactionTerm::default_cubic()));
        let cut = Cutoff::new(20.0).unwrap();
        let prepared = Stepper::new(
            plain.basis.clone(),
            DEFAULT_DT,
            Scheme::Etdrk4,
            FlowNonlinearity::Prepared {
                op: NonlinearOperator::new(ReactionTerm::default_cubic(), cut, GateSpace::Limit),
                gate: GateWeights::own(&plain.basis),
            },
        )
        .unwrap();
        let u: Vec<f64> = (0..op.dim()).map(|i| 1.0 + 0.3 * (0.1 * i as f64).sin()).collect();
        assert_eq!(plain.time_one_map(&u).unwrap(), prepared.time_one_map(&u).unwrap());
    }
}
