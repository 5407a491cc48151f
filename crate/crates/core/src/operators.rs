//! Discrete A_eps on the reference rectangle and A_0 on [0,1], transfer operators
//! E and M, eigenbases with fractional norms, and the operator-level comparisons.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{pre, LabError, Result};
use crate::geometry::{build_mapped_grid, poincare_constant, ChannelProfile, MappedGrid};
use crate::linalg::{self, gauss_legendre, BandedCholesky, BandedSym, EigenPairs};

pub const EIG_TOL: f64 = 1e-10;
pub const EIG_BUDGET: usize = 500;
pub const DEGENERATE_REL: f64 = 1e-8;
pub const DEFAULT_TAIL_TOL: f64 = 1e-8;
pub const RESOLVENT_TOL: f64 = 1e-10;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Thinness {
    Eps(f64),
    Limit,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct OperatorConfig {
    pub mu: f64,
    pub epsilon: Thinness,
    pub alpha: f64,
}

impl OperatorConfig {
    pub fn new(mu: f64, epsilon: Thinness, alpha: f64) -> Result<Self> {
        pre(mu > 0.0, || format!("mu = {mu} must be positive"))?;
        pre(alpha > 0.0 && alpha < 0.5, || format!("alpha = {alpha} outside (0, 1/2)"))?;
        if let Thinness::Eps(e) = epsilon {
            pre(e > 0.0 && e <= 1.0, || format!("eps = {e} outside (0, 1]"))?;
        }
        Ok(OperatorConfig { mu, epsilon, alpha })
    }

    pub fn limit(mu: f64, alpha: f64) -> Result<Self> {
        Self::new(mu, Thinness::Limit, alpha)
    }

    pub fn eps(mu: f64, eps: f64, alpha: f64) -> Result<Self> {
        Self::new(mu, Thinness::Eps(eps), alpha)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OperatorKind {
    AEps,
    A0,
}

/// Stiffness and mass of A_eps (2D, nodes `i * nz + k`) or A_0 (1D, `nz == 1`).
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub kind: OperatorKind,
    pub mu: f64,
    pub eps: Option<f64>,
    pub alpha: f64,
    pub profile: ChannelProfile,
    pub nx: usize,
    pub nz: usize,
    pub stiffness: BandedSym,
    pub mass: BandedSym,
    /// Form of the integral of u_y v_y over Q (2D only, no 1/eps^2 factor).
    pub transverse: Option<BandedSym>,
    factor: BandedCholesky,
}

fn p1(h: f64, t: f64) -> ([f64; 2], [f64; 2]) {
    ([1.0 - t, t], [-1.0 / h, 1.0 / h])
}

pub fn assemble_a0(profile: &ChannelProfile, config: &OperatorConfig, n: usize) -> Result<DiscreteOperator> {
    pre(n >= 8, || format!("n = {n} below 8"))?;
    let h = 1.0 / (n - 1) as f64;
    let (q, w) = gauss_legendre(3);
    let mut k = BandedSym::zeros(n, 1);
    let mut m = BandedSym::zeros(n, 1);
    for e in 0..n - 1 {
        let x0 = e as f64 * h;
        for (qi, wi) in q.iter().zip(&w) {
            let t = 0.5 * (1.0 + qi);
            let jw = 0.5 * h * wi * profile.g(x0 + t * h);
            let (v, dv) = p1(h, t);
            for a in 0..2 {
                for b in 0..=a {
                    k.add(e + a, e + b, jw * (dv[a] * dv[b] + config.mu * v[a] * v[b]));
                    m.add(e + a, e + b, jw * v[a] * v[b]);
                }
            }
        }
    }
    let factor = k.cholesky()?;
    Ok(DiscreteOperator {
        kind: OperatorKind::A0,
        mu: config.mu,
        eps: None,
        alpha: config.alpha,
        profile: profile.clone(),
        nx: n,
        nz: 1,
        stiffness: k,
        mass: m,
        transverse: None,
        factor,
    })
}

pub fn assemble_aeps(grid: &MappedGrid, config: &OperatorConfig) -> Result<DiscreteOperator> {
    let eps = match config.epsilon {
        Thinness::Eps(e) => e,
        Thinness::Limit => return Err(LabError::Precondition("A_eps needs eps in (0,1]".into())),
    };
    let (nx, nz) = (grid.nx, grid.nz);
    let n = nx * nz;
    let bw = nz + 1;
    let (hx, hz) = (grid.hx(), grid.hz());
    let (qx, wx) = gauss_legendre(3);
    let (qz, wz) = gauss_legendre(2);
    let inv_e2 = 1.0 / (eps * eps);
    let mut k = BandedSym::zeros(n, bw);
    let mut m = BandedSym::zeros(n, bw);
    let mut ty = BandedSym::zeros(n, bw);
    let p = &grid.profile;
    for e in 0..nx - 1 {
        for c in 0..nz - 1 {
            let idx = [grid.index(e, c), grid.index(e + 1, c), grid.index(e, c + 1), grid.index(e + 1, c + 1)];
            for (qa, wa) in qx.iter().zip(&wx) {
                let tx = 0.5 * (1.0 + qa);
                let x = grid.xs[e] + tx * hx;
                let (r, rp) = (p.r(x), p.r_prime(x));
                let (vx, dvx) = p1(hx, tx);
                for (qb, wb) in qz.iter().zip(&wz) {
                    let tz = 0.5 * (1.0 + qb);
                    let z = grid.zs[c] + tz * hz;
                    let (vz, dvz) = p1(hz, tz);
                    let jw = 0.25 * hx * hz * wa * wb * r;
                    let mut val = [0.0; 4];
                    let mut gx = [0.0; 4];
                    let mut gy = [0.0; 4];
                    for a in 0..4 {
                        let (ia, ka) = (a % 2, a / 2);
                        val[a] = vx[ia] * vz[ka];
                        let d_xi = dvx[ia] * vz[ka];
                        let d_z = vx[ia] * dvz[ka];
                        gx[a] = d_xi - z * rp / r * d_z;
                        gy[a] = d_z / r;
                    }
                    for a in 0..4 {
                        for b in 0..4 {
                            if idx[b] > idx[a] {
                                continue;
                            }
                            let kab = gx[a] * gx[b] + inv_e2 * gy[a] * gy[b] + config.mu * val[a] * val[b];
                            k.add(idx[a], idx[b], jw * kab);
                            m.add(idx[a], idx[b], jw * val[a] * val[b]);
                            ty.add(idx[a], idx[b], jw * gy[a] * gy[b]);
                        }
                    }
                }
            }
        }
    }
    let factor = k.cholesky()?;
    Ok(DiscreteOperator {
        kind: OperatorKind::AEps,
        mu: config.mu,
        eps: Some(eps),
        alpha: config.alpha,
        profile: p.clone(),
        nx,
        nz,
        stiffness: k,
        mass: m,
        transverse: Some(ty),
        factor,
    })
}

impl DiscreteOperator {
    pub fn dim(&self) -> usize {
        self.stiffness.dim()
    }

    pub fn factor(&self) -> &BandedCholesky {
        &self.factor
    }

    pub fn xs(&self) -> Vec<f64> {
        (0..self.nx).map(|i| i as f64 / (self.nx - 1) as f64).collect()
    }

    pub fn l2_norm(&self, u: &[f64]) -> f64 {
        self.mass.quad(u).max(0.0).sqrt()
    }

    pub fn l2_inner(&self, u: &[f64], v: &[f64]) -> f64 {
        self.mass.bilinear(u, v)
    }

    /// Energy norm: gradient part of the form plus the unweighted L2 part.
    pub fn h1_norm(&self, u: &[f64]) -> f64 {
        (self.stiffness.quad(u) - (self.mu - 1.0) * self.mass.quad(u)).max(0.0).sqrt()
    }

    /// Integral of |grad_y u|^2 over Q.
    pub fn grad_y_sq(&self, u: &[f64]) -> f64 {
        self.transverse.as_ref().map_or(0.0, |t| t.quad(u))
    }

    /// Applies the discrete operator: M^{-1} K u.
    pub fn apply(&self, u: &[f64]) -> Vec<f64> {
        let ku = self.stiffness.matvec(u);
        self.mass.cholesky().expect("mass is positive definite").solve(&ku)
    }

    /// Nodal values of a function of x (1D) or of (x, z) (2D).
    pub fn sample<F: Fn(f64, f64) -> f64>(&self, f: F) -> Vec<f64> {
        let xs = self.xs();
        let mut out = Vec::with_capacity(self.dim());
        for &x in &xs {
            if self.nz == 1 {
                out.push(f(x, 0.0));
            } else {
                for k in 0..self.nz {
                    out.push(f(x, -1.0 + 2.0 * k as f64 / (self.nz - 1) as f64));
                }
            }
        }
        out
    }
}

/// Solves K u = M rhs. The residual is measured as the normwise backward error
/// |r| / (|K| |u| + |M rhs|) in the max norm.
pub fn solve_resolvent(op: &DiscreteOperator, rhs: &[f64]) -> Result<Vec<f64>> {
    pre(rhs.len() == op.dim(), || format!("rhs length {} != {}", rhs.len(), op.dim()))?;
    let b = op.mass.matvec(rhs);
    let bn = linalg::norm_inf(&b);
    let mut u = op.factor.solve(&b);
    if bn == 0.0 {
        return Ok(u);
    }
    let knorm = op.stiffness.norm_inf();
    let mut rel = f64::INFINITY;
    for _ in 0..4 {
        let r = linalg::sub(&b, &op.stiffness.matvec(&u));
        rel = linalg::norm_inf(&r) / (knorm * linalg::norm_inf(&u) + bn);
        if rel <= 0.1 * RESOLVENT_TOL {
            break;
        }
        linalg::axpy(1.0, &op.factor.solve(&r), &mut u);
    }
    if rel > RESOLVENT_TOL {
        return Err(LabError::SolverBreakdown { residual: rel, tol: RESOLVENT_TOL });
    }
    Ok(u)
}

/// E (transverse-constant extension) and M (Jacobian-weighted cross-section average,
/// realized as the mass-orthogonal projection onto transverse-constant fields).
#[derive(Clone, Debug)]
pub struct TransferOperators {
    pub nx: usize,
    pub nz: usize,
    pub kappa: f64,
    mass1: BandedSym,
    mass1_factor: BandedCholesky,
    mass2: BandedSym,
}

impl TransferOperators {
    pub fn new(op_eps: &DiscreteOperator, op0: &DiscreteOperator) -> Result<Self> {
        if op_eps.kind != OperatorKind::AEps || op0.kind != OperatorKind::A0 || op_eps.nx != op0.nx {
            return Err(LabError::GridMismatch(format!(
                "transfer needs A_eps and A_0 on a common x-grid ({} vs {})",
                op_eps.nx, op0.nx
            )));
        }
        Ok(TransferOperators {
            nx: op0.nx,
            nz: op_eps.nz,
            kappa: 1.0,
            mass1: op0.mass.clone(),
            mass1_factor: op0.mass.cholesky()?,
            mass2: op_eps.mass.clone(),
        })
    }

    pub fn extend(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.nx);
        let mut out = Vec::with_capacity(self.nx * self.nz);
        for &v in u {
            out.extend(std::iter::repeat(v).take(self.nz));
        }
        out
    }

    fn restrict_sum(&self, w: &[f64]) -> Vec<f64> {
        w.chunks(self.nz).map(|c| c.iter().sum()).collect()
    }

    pub fn average(&self, u: &[f64]) -> Vec<f64> {
        assert_eq!(u.len(), self.nx * self.nz);
        let w = self.mass2.matvec(u);
        self.mass1_factor.solve(&self.restrict_sum(&w))
    }

    pub fn norm_q(&self, u: &[f64]) -> f64 {
        self.mass2.quad(u).max(0.0).sqrt()
    }

    pub fn norm_g(&self, u: &[f64]) -> f64 {
        self.mass1.quad(u).max(0.0).sqrt()
    }
}

/// Which norm `norm_eval` computes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    L2,
    Heps1,
    Xalpha,
}

/// First eigenpairs of an operator, mass-orthonormal, with fractional-norm evaluation.
#[derive(Clone, Debug)]
pub struct EigenBasis {
    pub kind: OperatorKind,
    pub alpha: f64,
    pub mu: f64,
    pub values: Vec<f64>,
    /// Columns are the eigenvectors.
    pub vectors: DMatrix<f64>,
    /// Rows are (M phi_i)^T, so that `proj * u` gives the coefficients of u.
    pub proj: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub tail_tol: f64,
    /// True when the basis spans the whole discrete space.
    pub complete: bool,
    mass: BandedSym,
    stiffness: BandedSym,
}

impl EigenBasis {
    fn from_pairs(op: &DiscreteOperator, pairs: EigenPairs) -> Result<Self> {
        let EigenPairs { values, mut vectors, residuals, .. } = pairs;
        let complete = values.len() == op.dim();
        for i in (1..values.len()).filter(|_| !complete) {
            if (values[i] - values[i - 1]).abs() < DEGENERATE_REL * values[i - 1].abs() {
                return Err(LabError::DegenerateCluster(i, i + 1));
            }
        }
        for mut col in vectors.column_iter_mut() {
            let peak = col.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            if let Some(first) = col.iter().copied().find(|v| v.abs() > 1e-8 * peak) {
                if first < 0.0 {
                    col.neg_mut();
                }
            }
        }
        let proj = Self::projector(&op.mass, &vectors);
        Ok(EigenBasis {
            kind: op.kind,
            alpha: op.alpha,
            mu: op.mu,
            values,
            vectors,
            proj,
            residuals,
            tail_tol: DEFAULT_TAIL_TOL,
            complete,
            mass: op.mass.clone(),
            stiffness: op.stiffness.clone(),
        })
    }

    fn projector(mass: &BandedSym, vectors: &DMatrix<f64>) -> DMatrix<f64> {
        let n = vectors.nrows();
        let k = vectors.ncols();
        let mut proj = DMatrix::zeros(k, n);
        for j in 0..k {
            let col: Vec<f64> = vectors.column(j).iter().copied().collect();
            let mc = mass.matvec(&col);
            for i in 0..n {
                proj[(j, i)] = mc[i];
            }
        }
        proj
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn coefficients(&self, u: &[f64]) -> DVector<f64> {
        &self.proj * DVector::from_column_slice(u)
    }

    pub fn synthesize(&self, c: &DVector<f64>) -> Vec<f64> {
        let k = c.len().min(self.len());
        let u = self.vectors.columns(0, k) * c.rows(0, k);
        u.iter().copied().collect()
    }

    pub fn vector(&self, i: usize) -> Vec<f64> {
        self.vectors.column(i).iter().copied().collect()
    }

    /// lambda_i^(2 alpha)
    pub fn weights(&self) -> Vec<f64> {
        self.values.iter().map(|l| l.powf(2.0 * self.alpha)).collect()
    }

    /// X^alpha norm of a coefficient vector.
    pub fn alpha_norm_coeffs(&self, c: &DVector<f64>) -> f64 {
        c.iter()
            .zip(&self.values)
            .map(|(ci, l)| l.powf(2.0 * self.alpha) * ci * ci)
            .sum::<f64>()
            .sqrt()
    }

    /// Weighted coordinate norm |p|_{eps,alpha} on R^m (first m modes).
    pub fn weighted_norm(&self, p: &[f64]) -> f64 {
        p.iter()
            .zip(&self.values)
            .map(|(pi, l)| l.powf(2.0 * self.alpha) * pi * pi)
            .sum::<f64>()
            .sqrt()
    }

    /// Relative squared L2 mass not captured by the basis.
    pub fn tail(&self, u: &[f64]) -> f64 {
        let total = self.mass.quad(u);
        if total <= 0.0 {
            return 0.0;
        }
        let c = self.coefficients(u);
        ((total - c.norm_squared()) / total).max(0.0)
    }

    /// Coefficients after checking the truncation contract.
    pub fn checked_coefficients(&self, u: &[f64]) -> Result<DVector<f64>> {
        let t = self.tail(u);
        if t > self.tail_tol {
            return Err(LabError::TruncationTail { tail: t, tol: self.tail_tol });
        }
        Ok(self.coefficients(u))
    }

    /// X^alpha norms over the whole discrete spectrum, for fields whose
    /// truncation tail is not negligible.
    pub fn full_alpha_norms(&self, fields: &[Vec<f64>]) -> Result<Vec<f64>> {
        if self.complete {
            return Ok(fields.iter().map(|u| self.alpha_norm_coeffs(&self.coefficients(u))).collect());
        }
        let q = linalg::fractional_quad(&self.stiffness, &self.mass, fields, 2.0 * self.alpha, self.lambda_floor())?;
        Ok(q.into_iter().map(f64::sqrt).collect())
    }

    /// X^alpha inner products `<left_i, right_j>` over the whole discrete spectrum.
    pub fn full_alpha_gram(&self, left: &[Vec<f64>], right: &[Vec<f64>]) -> Result<DMatrix<f64>> {
        if self.complete {
            let w = self.weights();
            let cl: Vec<DVector<f64>> = left.iter().map(|u| self.coefficients(u)).collect();
            let cr: Vec<DVector<f64>> = right.iter().map(|u| self.coefficients(u)).collect();
            return Ok(DMatrix::from_fn(left.len(), right.len(), |i, j| {
                cl[i].iter().zip(cr[j].iter()).zip(&w).map(|((a, b), wk)| a * b * wk).sum()
            }));
        }
        linalg::fractional_gram(&self.stiffness, &self.mass, left, right, 2.0 * self.alpha, self.lambda_floor())
    }

    fn lambda_floor(&self) -> f64 {
        0.5 * self.values.first().copied().unwrap_or(self.mu).min(self.mu)
    }

    pub fn mass(&self) -> &BandedSym {
        &self.mass
    }

    /// Energy-norm weight of each mode: lambda_i - mu + 1.
    pub fn energy_weights(&self) -> Vec<f64> {
        self.values.iter().map(|l| l - self.mu + 1.0).collect()
    }
}

fn eigen_pairs(op: &DiscreteOperator, count: usize, seed: u64) -> Result<EigenPairs> {
    pre(count >= 1 && count <= op.dim(), || format!("m = {count} outside [1, {}]", op.dim()))?;
    let pairs = if op.kind == OperatorKind::A0 && op.dim() <= 1200 {
        linalg::lowest_dense(&op.stiffness, &op.mass, count)?
    } else {
        linalg::lowest_subspace(&op.stiffness, &op.factor, &op.mass, count, EIG_TOL, EIG_BUDGET, seed)?
    };
    let worst = pairs.residuals.iter().fold(0.0f64, |m, r| m.max(*r));
    if worst > 1e-8 {
        return Err(LabError::EigenNonConvergence { iterations: pairs.iterations, worst });
    }
    Ok(pairs)
}

/// First m generalized eigenpairs, ascending and mass-orthonormal.
pub fn eigs(op: &DiscreteOperator, m: usize) -> Result<EigenBasis> {
    EigenBasis::from_pairs(op, eigen_pairs(op, m, 0x5eed)?)
}

/// The complete eigen-decomposition by a dense solve.
pub fn eigs_full(op: &DiscreteOperator) -> Result<EigenBasis> {
    let pairs = linalg::lowest_dense(&op.stiffness, &op.mass, op.dim())?;
    let worst = pairs.residuals.iter().fold(0.0f64, |m, r| m.max(*r));
    if worst > 1e-8 {
        return Err(LabError::EigenNonConvergence { iterations: pairs.iterations, worst });
    }
    EigenBasis::from_pairs(op, pairs)
}

/// All eigenpairs with eigenvalue at most `lambda_cut`, capped at `max_modes`.
pub fn eigs_below(op: &DiscreteOperator, lambda_cut: f64, max_modes: usize) -> Result<EigenBasis> {
    let cap = max_modes.min(op.dim());
    let below = linalg::count_below(&op.stiffness, &op.mass, lambda_cut)?;
    let mut count = (below + 1).clamp(1, cap);
    loop {
        let pairs = eigen_pairs(op, count, 0x5eed)?;
        let last = *pairs.values.last().expect("nonempty");
        if last > lambda_cut || count == cap {
            let keep = pairs.values.iter().take_while(|&&l| l <= lambda_cut).count().max(1);
            let pairs = EigenPairs {
                values: pairs.values[..keep].to_vec(),
                vectors: pairs.vectors.columns(0, keep).into_owned(),
                residuals: pairs.residuals[..keep].to_vec(),
                iterations: pairs.iterations,
            };
            return EigenBasis::from_pairs(op, pairs);
        }
        count = (2 * count).min(cap);
    }
}

/// Overlaps <E phi_j^0, phi_i^eps> (rows: eps-modes, columns: limit modes).
pub fn lifted_overlap(basis_eps: &EigenBasis, basis0: &EigenBasis, transfer: &TransferOperators) -> DMatrix<f64> {
    let k0 = basis0.len();
    let mut lifted = DMatrix::zeros(basis_eps.dim(), k0);
    for j in 0..k0 {
        let e = transfer.extend(&basis0.vector(j));
        for (i, v) in e.into_iter().enumerate() {
            lifted[(i, j)] = v;
        }
    }
    &basis_eps.proj * lifted
}

/// Flips eps-eigenvectors so that each has a positive overlap with the lifted
/// limit eigenvector it overlaps most.
pub fn align_signs(basis_eps: &mut EigenBasis, basis0: &EigenBasis, transfer: &TransferOperators) {
    let g = lifted_overlap(basis_eps, basis0, transfer);
    for i in 0..basis_eps.len() {
        let row = g.row(i);
        let mut val = 0.0f64;
        for v in row.iter() {
            if v.abs() > val.abs() {
                val = *v;
            }
        }
        if val < 0.0 {
            basis_eps.vectors.column_mut(i).neg_mut();
            basis_eps.proj.row_mut(i).neg_mut();
        }
    }
}

/// The norm of u in L2, H_eps^1 (energy form, no truncation) or X^alpha (spectral).
pub fn norm_eval(u: &[f64], op: &DiscreteOperator, basis: &EigenBasis, which: NormKind) -> Result<f64> {
    match which {
        NormKind::L2 => Ok(op.l2_norm(u)),
        NormKind::Heps1 => Ok(op.h1_norm(u)),
        NormKind::Xalpha => {
            let c = basis.checked_coefficients(u)?;
            Ok(basis.alpha_norm_coeffs(&c))
        }
    }
}

/// A_eps on the mapped grid together with the companion A_0 on the same x-nodes.
#[derive(Clone, Debug)]
pub struct ChannelPair {
    pub grid: MappedGrid,
    pub op_eps: DiscreteOperator,
    pub op0: DiscreteOperator,
    pub transfer: TransferOperators,
}

impl ChannelPair {
    pub fn new(profile: &ChannelProfile, mu: f64, alpha: f64, eps: f64, nx: usize, nz: usize) -> Result<Self> {
        let grid = build_mapped_grid(profile, nx, nz)?;
        let op_eps = assemble_aeps(&grid, &OperatorConfig::eps(mu, eps, alpha)?)?;
        let op0 = assemble_a0(profile, &OperatorConfig::limit(mu, alpha)?, nx)?;
        let transfer = TransferOperators::new(&op_eps, &op0)?;
        Ok(ChannelPair { grid, op_eps, op0, transfer })
    }

    pub fn eps(&self) -> f64 {
        self.op_eps.eps.expect("A_eps carries eps")
    }
}

/// Max over normalized right-hand sides of |A_eps^{-1} f - E A_0^{-1} M f| in H_eps^1(Q).
pub fn resolvent_distance(pair: &ChannelPair, rhs_set: &[Vec<f64>]) -> Result<f64> {
    let mut worst = 0.0f64;
    for f in rhs_set {
        let n = pair.op_eps.l2_norm(f);
        if n == 0.0 {
            continue;
        }
        let f: Vec<f64> = f.iter().map(|v| v / n).collect();
        let u = solve_resolvent(&pair.op_eps, &f)?;
        let v = solve_resolvent(&pair.op0, &pair.transfer.average(&f))?;
        let d = linalg::sub(&u, &pair.transfer.extend(&v));
        worst = worst.max(pair.op_eps.h1_norm(&d));
    }
    Ok(worst)
}

/// Max over probes v of |P_m^eps E v - E P_m^0 v|_{X_eps^alpha} / |v|_{L2_g}.
pub fn projection_distance(
    basis_eps: &EigenBasis,
    basis0: &EigenBasis,
    transfer: &TransferOperators,
    m: usize,
    probes: &[Vec<f64>],
) -> Result<f64> {
    pre(m < basis_eps.len() && m < basis0.len(), || format!("m = {m} not below both basis counts"))?;
    for (vals, _) in [(&basis0.values, 0), (&basis_eps.values, 1)] {
        if vals[m] - vals[m - 1] <= DEGENERATE_REL * vals[m - 1] {
            return Err(LabError::NearDegenerateGap(m, m + 1));
        }
    }
    let mut aligned = basis_eps.clone();
    align_signs(&mut aligned, basis0, transfer);
    let mut diffs = Vec::new();
    let mut scales = Vec::new();
    for v in probes {
        let vn = transfer.norm_g(v);
        if vn == 0.0 {
            continue;
        }
        let mut c_eps = aligned.coefficients(&transfer.extend(v));
        let mut c0 = basis0.coefficients(v);
        c_eps.rows_mut(m, aligned.len() - m).fill(0.0);
        c0.rows_mut(m, basis0.len() - m).fill(0.0);
        let lifted = transfer.extend(&basis0.synthesize(&c0));
        diffs.push(linalg::sub(&aligned.synthesize(&c_eps), &lifted));
        scales.push(vn);
    }
    let norms = aligned.full_alpha_norms(&diffs)?;
    Ok(norms.iter().zip(&scales).map(|(a, b)| a / b).fold(0.0, f64::max))
}

/// (|u - EMu|^2_{L2(Q)}, beta |grad_y u|^2_{L2(Q)}).
pub fn poincare_defect(u: &[f64], transfer: &TransferOperators, op_eps: &DiscreteOperator) -> Result<(f64, f64)> {
    let beta = poincare_constant(&op_eps.profile)?.beta;
    let w = linalg::sub(u, &transfer.extend(&transfer.average(u)));
    let defect = transfer.mass2.quad(&w).max(0.0);
    Ok((defect, beta * op_eps.grad_y_sq(u)))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnergyPair {
    pub lambda_eps: f64,
    pub tau_eps: f64,
    /// eps^(d-1)
    pub scale: f64,
}

impl EnergyPair {
    /// eps^(d-1) tau_eps - lambda_eps, nonnegative when the inequality holds.
    pub fn margin(&self) -> f64 {
        self.scale * self.tau_eps - self.lambda_eps
    }
}

/// Minimized energies on Q_eps and on (0,1) for a right-hand side given on the
/// reference grid; the Q_eps integrals come from the exact eps^(d-1) rescaling.
pub fn energy_functionals(pair: &ChannelPair, rhs: &[f64]) -> Result<EnergyPair> {
    let op = &pair.op_eps;
    let scale = pair.eps().powi(op.profile.d as i32 - 1);
    let w = solve_resolvent(op, rhs)?;
    let lam = 0.5 * op.stiffness.quad(&w) - op.mass.bilinear(&w, rhs);
    let mf = pair.transfer.average(rhs);
    let v = solve_resolvent(&pair.op0, &mf)?;
    let tau = 0.5 * pair.op0.stiffness.quad(&v) - pair.op0.mass.bilinear(&v, &mf);
    Ok(EnergyPair { lambda_eps: scale * lam, tau_eps: tau, scale })
}

/// The constant vector's Rayleigh quotient residual: |K 1 - mu M 1|.
pub fn constant_mode_residual(op: &DiscreteOperator) -> f64 {
    let one = vec![1.0; op.dim()];
    let k1 = op.stiffness.matvec(&one);
    let m1 = op.mass.matvec(&one);
    let r: Vec<f64> = k1.iter().zip(&m1).map(|(a, b)| a - op.mu * b).collect();
    linalg::norm2(&r) / linalg::norm2(&k1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn straight() -> ChannelProfile {
        ChannelProfile::straight(1.0, 2).unwrap()
    }

    fn curved() -> ChannelProfile {
        ChannelProfile::sine(0.3, 2).unwrap()
    }

    #[test]
    fn a0_spectrum_straight() {
        let cfg = OperatorConfig::limit(1.0, 0.25).unwrap();
        let op = assemble_a0(&straight(), &cfg, 257).unwrap();
        let b = eigs(&op, 3).unwrap();
        let exact = [1.0, 1.0 + PI * PI, 1.0 + 4.0 * PI * PI];
        for (l, e) in b.values.iter().zip(exact) {
            assert!((l - e).abs() / e < 2e-4, "{l} vs {e}");
        }
        assert!(constant_mode_residual(&op) < 1e-10);
        let again = eigs(&op, 3).unwrap();
        assert_eq!(b.values, again.values);
    }

    #[test]
    fn a0_second_order_in_h() {
        let cfg = OperatorConfig::limit(1.0, 0.25).unwrap();
        let p = curved();
        let lam = |n| eigs(&assemble_a0(&p, &cfg, n).unwrap(), 2).unwrap().values[1];
        let (a, b, c) = (lam(33), lam(65), lam(129));
        let order = ((a - b) / (b - c)).log2();
        assert!((order - 2.0).abs() < 0.15, "observed order {order}");
    }

    #[test]
    fn aeps_separable_spectrum() {
        let p = straight();
        let grid = build_mapped_grid(&p, 33, 17).unwrap();
        let eps = 0.5;
        let op = assemble_aeps(&grid, &OperatorConfig::eps(1.0, eps, 0.25).unwrap()).unwrap();
        let b = eigs(&op, 4).unwrap();
        let mut exact: Vec<f64> = Vec::new();
        for j in 0..4 {
            for n in 0..3 {
                exact.push(1.0 + PI * PI * (j * j) as f64 + PI * PI * (n * n) as f64 / 4.0 / (eps * eps));
            }
        }
        exact.sort_by(f64::total_cmp);
        for (l, e) in b.values.iter().zip(&exact) {
            assert!((l - e).abs() / e < 5e-3, "{l} vs {e}");
        }
        let c = vec![3.0; op.dim()];
        let kc = op.stiffness.matvec(&c);
        let mc = op.mass.matvec(&c);
        for (a, b) in kc.iter().zip(&mc) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn transfer_identities() {
        let pair = ChannelPair::new(&curved(), 1.0, 0.25, 0.1, 17, 9).unwrap();
        let u: Vec<f64> = (0..17).map(|i| (i as f64 * 0.7).cos() + 0.1 * i as f64).collect();
        let eu = pair.transfer.extend(&u);
        let meu = pair.transfer.average(&eu);
        for (a, b) in u.iter().zip(&meu) {
            assert!((a - b).abs() < 1e-12);
        }
        let (n2, n1) = (pair.transfer.norm_q(&eu), pair.transfer.norm_g(&u));
        assert!((n2 - n1).abs() < 1e-12 * n1);
    }

    #[test]
    fn resolvent_examples() {
        let cfg = OperatorConfig::limit(1.0, 0.25).unwrap();
        let op = assemble_a0(&straight(), &cfg, 65).unwrap();
        let u = solve_resolvent(&op, &vec![1.0; 65]).unwrap();
        assert!(u.iter().all(|v| (v - 1.0).abs() < 1e-12));
        let f = op.sample(|x, _| (PI * x).cos());
        let u = solve_resolvent(&op, &f).unwrap();
        for (ui, fi) in u.iter().zip(&f) {
            assert!((ui - fi / (1.0 + PI * PI)).abs() < 1e-3);
        }
        let pair = ChannelPair::new(&straight(), 1.0, 0.25, 0.3, 17, 9).unwrap();
        let e1 = vec![1.0; pair.op_eps.dim()];
        let u = solve_resolvent(&pair.op_eps, &e1).unwrap();
        assert!(u.iter().all(|v| (v - 1.0).abs() < 1e-12));
    }

    #[test]
    fn straight_channel_resolvent_is_structurally_exact() {
        let pair = ChannelPair::new(&straight(), 1.0, 0.25, 0.1, 33, 9).unwrap();
        let h: Vec<f64> = pair.op0.sample(|x, _| (3.0 * x).sin() + x * x);
        let d = resolvent_distance(&pair, &[pair.transfer.extend(&h)]).unwrap();
        assert!(d <= 1e-8, "{d}");
        assert_eq!(resolvent_distance(&pair, &[vec![0.0; pair.op_eps.dim()]]).unwrap(), 0.0);
    }

    #[test]
    fn energies_straight_equal_and_curved_ordered() {
        let pair = ChannelPair::new(&straight(), 1.0, 0.25, 0.125, 33, 9).unwrap();
        let h = pair.op0.sample(|x, _| 1.0 + (2.0 * x).cos());
        let e = energy_functionals(&pair, &pair.transfer.extend(&h)).unwrap();
        assert!(e.margin().abs() < 1e-8, "{e:?}");
        let zero = energy_functionals(&pair, &vec![0.0; pair.op_eps.dim()]).unwrap();
        assert_eq!((zero.lambda_eps, zero.tau_eps), (0.0, 0.0));
        let pair = ChannelPair::new(&curved(), 1.0, 0.25, 0.125, 33, 9).unwrap();
        let f = pair.op_eps.sample(|x, z| (PI * x).cos() + x * z);
        let e = energy_functionals(&pair, &f).unwrap();
        assert!(e.margin() >= -1e-12, "{e:?}");
    }

    #[test]
    fn poincare_defect_examples() {
        let pair = ChannelPair::new(&straight(), 1.0, 0.25, 0.2, 17, 17).unwrap();
        let v = pair.op0.sample(|x, _| x.sin());
        let (d, _) = poincare_defect(&pair.transfer.extend(&v), &pair.transfer, &pair.op_eps).unwrap();
        assert!(d < 1e-24);
        let u = pair.op_eps.sample(|_, z| z);
        let (d, b) = poincare_defect(&u, &pair.transfer, &pair.op_eps).unwrap();
        // |z|^2 over Q is 2/3, grad_y is 1 on area 2, beta = (2/pi)^2.
        assert!((d - 2.0 / 3.0).abs() < 1e-3, "{d}");
        assert!((b - 2.0 * 4.0 / (PI * PI)).abs() < 1e-12, "{b}");
        assert!(d <= b);
    }

    #[test]
    fn norm_eval_single_modes() {
        let cfg = OperatorConfig::limit(1.0, 0.25).unwrap();
        let op = assemble_a0(&curved(), &cfg, 65).unwrap();
        let b = eigs(&op, 65).unwrap();
        let phi = b.vector(2);
        assert!((norm_eval(&phi, &op, &b, NormKind::L2).unwrap() - 1.0).abs() < 1e-12);
        let xa = norm_eval(&phi, &op, &b, NormKind::Xalpha).unwrap();
        assert!((xa - b.values[2].powf(0.25)).abs() < 1e-10);
        let h1 = norm_eval(&phi, &op, &b, NormKind::Heps1).unwrap();
        assert!((h1 - b.values[2].sqrt()).abs() < 1e-10);
        let small = eigs(&op, 3).unwrap();
        let rough = op.sample(|x, _| (x - 0.3).abs());
        assert!(matches!(
            norm_eval(&rough, &op, &small, NormKind::Xalpha),
            Err(LabError::TruncationTail { .. })
        ));
    }

    #[test]
    fn complete_basis_norms_match_quadrature() {
        let pair = ChannelPair::new(&curved(), 1.0, 0.25, 0.125, 16, 4).unwrap();
        let full = eigs_full(&pair.op_eps).unwrap();
        assert!(full.complete && full.len() == pair.op_eps.dim());
        let mut part = eigs(&pair.op_eps, 3).unwrap();
        part.complete = false;
        let u = pair.op_eps.sample(|x, z| (2.0 * x).sin() + z * z * x);
        let a = full.full_alpha_norms(&[u.clone()]).unwrap()[0];
        let b = part.full_alpha_norms(&[u]).unwrap()[0];
        assert!((a - b).abs() < 1e-9 * a, "{a} vs {b}");
    }
}
