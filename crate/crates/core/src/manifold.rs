//! Spectral-gap dimension, inertial-manifold graphs by graph transform, and
//! the reduced systems on them.

use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{pre, LabError, Result};
use crate::linalg;
use crate::operators::{EigenBasis, TransferOperators};
use crate::semiflow::{ExpIntegrator, Stepper};

/// Constant in the semigroup estimates.
pub const KAPPA: f64 = 1.0;
pub const GRAPH_TOL: f64 = 1e-8;
pub const GRAPH_BUDGET: usize = 200;
pub const DEFAULT_NODES: usize = 41;
pub const C1_STEP: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub m: usize,
    /// lambda_{m+1} - lambda_m
    pub gap: f64,
    /// 3 (kappa + 2) L_F (lambda_m^alpha + lambda_{m+1}^alpha)
    pub gap_bound: f64,
    /// lambda_m^(1 - alpha)
    pub power: f64,
    /// 6 (kappa + 2) L_F / (1 - alpha)
    pub power_bound: f64,
    pub satisfied: bool,
    pub l_f: f64,
    pub kappa: f64,
    pub alpha: f64,
}

/// Both gap conditions at dimension m for the ascending spectrum `values`.
pub fn gap_report(values: &[f64], m: usize, l_f: f64, kappa: f64, alpha: f64) -> GapReport {
    let (lm, ln) = (values[m - 1], values[m]);
    let gap = ln - lm;
    let gap_bound = 3.0 * (kappa + 2.0) * l_f * (lm.powf(alpha) + ln.powf(alpha));
    let power = lm.powf(1.0 - alpha);
    let power_bound = 6.0 * (kappa + 2.0) * l_f / (1.0 - alpha);
    GapReport {
        m,
        gap,
        gap_bound,
        power,
        power_bound,
        satisfied: gap >= gap_bound && power >= power_bound,
        l_f,
        kappa,
        alpha,
    }
}

/// Smallest m <= m_max meeting both gap conditions, or the candidate with
/// the largest worst-case margin ratio.
pub fn select_gap_dimension(basis0: &EigenBasis, l_f: f64, kappa: f64, alpha: f64, m_max: usize) -> Result<GapReport> {
    scan_gap(&basis0.values, l_f, kappa, alpha, m_max)
}

fn scan_gap(values: &[f64], l_f: f64, kappa: f64, alpha: f64, m_max: usize) -> Result<GapReport> {
    pre(m_max >= 1 && values.len() > m_max, || {
        format!("need {} eigenvalues for m_max = {m_max}, have {}", m_max + 1, values.len())
    })?;
    let mut best: Option<(f64, GapReport)> = None;
    for m in 1..=m_max {
        let r = gap_report(values, m, l_f, kappa, alpha);
        if r.satisfied {
            return Ok(r);
        }
        let score = (r.gap / r.gap_bound).min(r.power / r.power_bound);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, r));
        }
    }
    Ok(best.expect("m_max >= 1").1)
}

/// Scan for the first m whose gap conditions hold, without an upper limit
/// other than the available spectrum.
pub fn honest_gap_dimension(basis0: &EigenBasis, l_f: f64, kappa: f64, alpha: f64) -> Option<usize> {
    (1..basis0.len()).find(|&m| gap_report(&basis0.values, m, l_f, kappa, alpha).satisfied)
}

#[derive(Clone, Debug, Serialize)]
pub struct GrowthReport {
    /// First 1-based index from which every gap sits in the bracket.
    pub n0: Option<usize>,
    /// Index shift m -> m + offset that fits best.
    pub offset: i64,
    pub satisfied: bool,
    /// Fitted slope of the gaps against m beyond n0.
    pub slope: f64,
    pub gaps: Vec<f64>,
}

/// Checks 0.9 pi^2 (m+1) <= lambda_{m+1} - lambda_m <= 1.1 * 3 pi^2 (m+1)
/// under the index shift that fits best.
pub fn gap_growth_check(basis0: &EigenBasis) -> Result<GrowthReport> {
    let v = &basis0.values;
    pre(v.len() >= 20, || format!("gap growth needs >= 20 eigenvalues, have {}", v.len()))?;
    let gaps: Vec<f64> = v.windows(2).map(|w| w[1] - w[0]).collect();
    let pi2 = PI * PI;
    let mut best: Option<(usize, i64)> = None;
    for offset in -2i64..=2 {
        let ok = |m: usize| {
            let k = m as i64 + offset;
            k >= 1 && {
                let base = pi2 * (k + 1) as f64;
                let g = gaps[m - 1];
                0.9 * base <= g && g <= 1.1 * 3.0 * base
            }
        };
        let last = gaps.len();
        if !ok(last) {
            continue;
        }
        let mut n0 = last;
        while n0 > 1 && ok(n0 - 1) {
            n0 -= 1;
        }
        if best.is_none_or(|(b, _)| n0 < b) {
            best = Some((n0, offset));
        }
    }
    let Some((n0, offset)) = best else {
        return Ok(GrowthReport { n0: None, offset: 0, satisfied: false, slope: 0.0, gaps });
    };
    let xs: Vec<f64> = (n0..=gaps.len()).map(|m| m as f64).collect();
    let ys: Vec<f64> = gaps[n0 - 1..].to_vec();
    let slope = if xs.len() >= 2 { linalg::least_squares_line(&xs, &ys).0 } else { 0.0 };
    let satisfied = 2 * n0 <= gaps.len() && slope > 0.0;
    Ok(GrowthReport { n0: Some(n0), offset, satisfied, slope, gaps })
}

/// Radius R' outside of which the reduced vector field vanishes, for a
/// gate of radius r (the cut-off is zero beyond 2r).
pub fn support_radius(r: f64, basis0: &EigenBasis, m: usize) -> f64 {
    2.0 * r * (basis0.values[m - 1] / basis0.values[0]).powf(basis0.alpha)
}

/// Uniform tensor grid on a box containing the coordinate ball of `radius`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct GraphGrid {
    pub m: usize,
    pub nodes: usize,
    pub radius: f64,
    /// lambda_i^alpha of the coordinate metric.
    pub scale: Vec<f64>,
    /// Box half width in units of radius / scale.
    pub stretch: f64,
}

impl GraphGrid {
    /// Grid of `nodes` per axis on the ball of `radius` in the metric of `basis0`.
    pub fn new(m: usize, nodes: usize, radius: f64, basis0: &EigenBasis) -> Result<Self> {
        pre((1..=2).contains(&m), || format!("graph grids support m in {{1, 2}}, got {m}"))?;
        pre(nodes >= 3 && nodes % 2 == 1, || format!("nodes = {nodes} must be odd and >= 3"))?;
        pre(radius > 0.0, || "grid radius must be positive".into())?;
        pre(basis0.len() > m, || "basis shorter than m + 1".into())?;
        let scale = basis0.values[..m].iter().map(|l| l.powf(basis0.alpha)).collect();
        Ok(GraphGrid { m, nodes, radius, scale, stretch: 1.0 })
    }

    pub fn len(&self) -> usize {
        self.nodes.pow(self.m as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn half_width(&self, k: usize) -> f64 {
        self.stretch * self.radius / self.scale[k]
    }

    fn spacing(&self, k: usize) -> f64 {
        2.0 * self.half_width(k) / (self.nodes - 1) as f64
    }

    fn digits(&self, mut j: usize) -> Vec<usize> {
        let mut d = vec![0; self.m];
        for dk in d.iter_mut() {
            *dk = j % self.nodes;
            j /= self.nodes;
        }
        d
    }

    fn flat(&self, d: &[usize]) -> usize {
        d.iter().rev().fold(0, |acc, &dk| acc * self.nodes + dk)
    }

    pub fn point(&self, j: usize) -> Vec<f64> {
        self.digits(j)
            .iter()
            .enumerate()
            .map(|(k, &i)| -self.half_width(k) + i as f64 * self.spacing(k))
            .collect()
    }

    /// |p| in the weighted coordinate metric.
    pub fn norm(&self, p: &[f64]) -> f64 {
        p.iter().zip(&self.scale).map(|(a, s)| (a * s).powi(2)).sum::<f64>().sqrt()
    }

    /// Same spacing, box half width at least 1.5 times larger.
    fn enlarged(&self) -> GraphGrid {
        let ext = (self.nodes - 1).div_ceil(4);
        let nodes = self.nodes + 2 * ext;
        let stretch = self.stretch * (nodes - 1) as f64 / (self.nodes - 1) as f64;
        GraphGrid { nodes, stretch, ..self.clone() }
    }

    /// Corner indices and multilinear weights, or None outside the box.
    fn weights(&self, p: &[f64]) -> Option<Vec<(usize, f64)>> {
        let mut base = vec![0; self.m];
        let mut frac = vec![0.0; self.m];
        for k in 0..self.m {
            let t = (p[k] + self.half_width(k)) / self.spacing(k);
            let top = (self.nodes - 1) as f64;
            if !(-1e-12..=top + 1e-12).contains(&t) {
                return None;
            }
            let i = (t.floor().max(0.0) as usize).min(self.nodes - 2);
            base[k] = i;
            frac[k] = (t - i as f64).clamp(0.0, 1.0);
        }
        let mut out = Vec::with_capacity(1 << self.m);
        for corner in 0..(1usize << self.m) {
            let mut d = base.clone();
            let mut w = 1.0;
            for k in 0..self.m {
                if corner >> k & 1 == 1 {
                    d[k] += 1;
                    w *= frac[k];
                } else {
                    w *= 1.0 - frac[k];
                }
            }
            if w != 0.0 {
                out.push((self.flat(&d), w));
            }
        }
        Some(out)
    }
}

/// Graph of Phi: P_m coordinates -> Q_m coefficients, on a tensor grid.
#[derive(Clone, Debug)]
pub struct GraphFn {
    pub grid: GraphGrid,
    /// Coefficients over modes m..K at each node.
    pub values: Vec<DVector<f64>>,
    /// lambda_i^(2 alpha) for modes m..K.
    pub q_weights: Vec<f64>,
    pub lipschitz_est: f64,
    pub sweeps: usize,
    /// max over nodes of |Q S(1)(p, Phi p) - Phi(P S(1)(p, Phi p))|_alpha.
    pub invariance_defect: f64,
}

impl GraphFn {
    pub fn m(&self) -> usize {
        self.grid.m
    }

    /// Multilinear interpolation; zero outside the grid box.
    pub fn eval(&self, p: &[f64]) -> DVector<f64> {
        interpolate(&self.grid, &self.values, p).unwrap_or_else(|| DVector::zeros(self.q_weights.len()))
    }

    fn q_norm(&self, c: &DVector<f64>) -> f64 {
        c.iter().zip(&self.q_weights).map(|(a, w)| w * a * a).sum::<f64>().sqrt()
    }

    /// Full coefficient vector of j^{-1} p + Phi(p).
    pub fn lift(&self, p: &[f64]) -> DVector<f64> {
        let q = self.eval(p);
        let mut c = DVector::zeros(self.m() + q.len());
        c.rows_mut(0, self.m()).copy_from_slice(p);
        c.rows_mut(self.m(), q.len()).copy_from(&q);
        c
    }
}

fn interpolate(grid: &GraphGrid, values: &[DVector<f64>], p: &[f64]) -> Option<DVector<f64>> {
    let w = grid.weights(p)?;
    let mut out = DVector::zeros(values[0].len());
    for (j, wj) in w {
        out.axpy(wj, &values[j], 1.0);
    }
    Some(out)
}

/// Splits a coefficient vector into P_m coordinates and Q_m coefficients.
pub fn split_coordinates(c: &DVector<f64>, m: usize) -> (Vec<f64>, DVector<f64>) {
    (c.rows(0, m).iter().copied().collect(), c.rows(m, c.len() - m).into_owned())
}

/// Q_m coefficients at the target nodes from the images of the enlarged grid.
fn regrid(grid: &GraphGrid, big: &GraphGrid, images: &DMatrix<f64>) -> Result<Vec<DVector<f64>>> {
    let m = grid.m;
    let q = images.nrows() - m;
    let mut out = vec![DVector::zeros(q); grid.len()];
    let img_p = |j: usize| -> Vec<f64> { (0..m).map(|k| images[(k, j)]).collect() };
    let img_q = |j: usize| -> DVector<f64> { images.view((m, j), (q, 1)).column(0).into_owned() };
    if m == 1 {
        let xs: Vec<f64> = (0..big.len()).map(|j| images[(0, j)]).collect();
        if xs.windows(2).any(|w| w[1] <= w[0]) {
            return Err(LabError::Precondition("time-one image of the coordinate line is not monotone".into()));
        }
        for (t, slot) in out.iter_mut().enumerate() {
            let x = grid.point(t)[0];
            if x < xs[0] || x > xs[xs.len() - 1] {
                continue;
            }
            let j = xs.partition_point(|&v| v <= x).clamp(1, xs.len() - 1) - 1;
            let s = (x - xs[j]) / (xs[j + 1] - xs[j]);
            *slot = img_q(j) * (1.0 - s) + img_q(j + 1) * s;
        }
        return Ok(out);
    }
    let mut found = vec![false; grid.len()];
    let n = big.nodes;
    let targets: Vec<Vec<f64>> = (0..grid.len()).map(|t| grid.point(t)).collect();
    for a in 0..n - 1 {
        for b in 0..n - 1 {
            let idx = [big.flat(&[a, b]), big.flat(&[a + 1, b]), big.flat(&[a, b + 1]), big.flat(&[a + 1, b + 1])];
            let pts: Vec<Vec<f64>> = idx.iter().map(|&j| img_p(j)).collect();
            let lo: Vec<f64> = (0..2).map(|k| pts.iter().map(|p| p[k]).fold(f64::INFINITY, f64::min)).collect();
            let hi: Vec<f64> = (0..2).map(|k| pts.iter().map(|p| p[k]).fold(f64::NEG_INFINITY, f64::max)).collect();
            for (t, x) in targets.iter().enumerate() {
                if found[t] || x[0] < lo[0] || x[0] > hi[0] || x[1] < lo[1] || x[1] > hi[1] {
                    continue;
                }
                if let Some((s, r)) = invert_bilinear(&pts, x) {
                    let w = [(1.0 - s) * (1.0 - r), s * (1.0 - r), (1.0 - s) * r, s * r];
                    let mut v = DVector::zeros(q);
                    for (wk, &j) in w.iter().zip(&idx) {
                        v.axpy(*wk, &img_q(j), 1.0);
                    }
                    out[t] = v;
                    found[t] = true;
                }
            }
        }
    }
    Ok(out)
}

// Corners ordered (0,0), (1,0), (0,1), (1,1).
fn invert_bilinear(p: &[Vec<f64>], x: &[f64]) -> Option<(f64, f64)> {
    let map = |s: f64, r: f64, k: usize| {
        (1.0 - s) * (1.0 - r) * p[0][k] + s * (1.0 - r) * p[1][k] + (1.0 - s) * r * p[2][k] + s * r * p[3][k]
    };
    let (mut s, mut r) = (0.5, 0.5);
    for _ in 0..30 {
        let f0 = map(s, r, 0) - x[0];
        let f1 = map(s, r, 1) - x[1];
        let ds: Vec<f64> = (0..2).map(|k| (1.0 - r) * (p[1][k] - p[0][k]) + r * (p[3][k] - p[2][k])).collect();
        let dr: Vec<f64> = (0..2).map(|k| (1.0 - s) * (p[2][k] - p[0][k]) + s * (p[3][k] - p[1][k])).collect();
        let det = ds[0] * dr[1] - ds[1] * dr[0];
        if det.abs() < 1e-300 {
            return None;
        }
        let step_s = (f0 * dr[1] - f1 * dr[0]) / det;
        let step_r = (ds[0] * f1 - ds[1] * f0) / det;
        s -= step_s;
        r -= step_r;
        if step_s.abs() + step_r.abs() < 1e-15 {
            break;
        }
    }
    let tol = 1e-10;
    ((-tol..=1.0 + tol).contains(&s) && (-tol..=1.0 + tol).contains(&r)).then(|| (s.clamp(0.0, 1.0), r.clamp(0.0, 1.0)))
}

/// Graph transform: from Phi = 0, push the graph over the enlarged grid
/// through S(1) and re-grid, until successive graphs agree to 1e-8 in the
/// sup X^alpha norm.
pub fn compute_graph(stepper: &Stepper, grid: &GraphGrid) -> Result<GraphFn> {
    let m = grid.m;
    let k = stepper.len();
    pre(k > m, || format!("basis of {k} modes cannot carry a graph over m = {m}"))?;
    let q_weights = stepper.basis.weights()[m..].to_vec();
    let big = grid.enlarged();
    let steps = stepper.steps_per_unit();
    let mut graph = GraphFn {
        grid: grid.clone(),
        values: vec![DVector::zeros(k - m); grid.len()],
        q_weights,
        lipschitz_est: 0.0,
        sweeps: 0,
        invariance_defect: 0.0,
    };
    let mut last = f64::INFINITY;
    let mut factor = f64::NAN;
    for sweep in 1..=GRAPH_BUDGET {
        let mut c = DMatrix::zeros(k, big.len());
        for j in 0..big.len() {
            c.set_column(j, &graph.lift(&big.point(j)));
        }
        stepper.advance_par(&mut c, steps)?;
        let mut next = regrid(grid, &big, &c)?;
        for (t, v) in next.iter_mut().enumerate() {
            if grid.norm(&grid.point(t)) >= grid.radius * (1.0 - 1e-12) {
                v.fill(0.0);
            }
        }
        let change = next
            .iter()
            .zip(&graph.values)
            .map(|(a, b)| graph.q_norm(&(a - b)))
            .fold(0.0, f64::max);
        factor = change / last;
        last = change;
        graph.values = next;
        graph.sweeps = sweep;
        if change <= GRAPH_TOL {
            graph.lipschitz_est = graph_lipschitz(&graph);
            graph.invariance_defect = invariance_defect(&graph, stepper)?;
            if graph.lipschitz_est >= 1.0 {
                return Err(LabError::GapInsufficient(graph.lipschitz_est));
            }
            return Ok(graph);
        }
    }
    Err(LabError::GraphBudget { iterations: GRAPH_BUDGET, factor })
}

fn graph_lipschitz(g: &GraphFn) -> f64 {
    let grid = &g.grid;
    let mut worst = 0.0f64;
    for j in 0..grid.len() {
        let d = grid.digits(j);
        for corner in 1..(1usize << grid.m) {
            let mut e = d.clone();
            if (0..grid.m).any(|k| corner >> k & 1 == 1 && d[k] + 1 >= grid.nodes) {
                continue;
            }
            for (k, ek) in e.iter_mut().enumerate() {
                *ek += corner >> k & 1;
            }
            let i = grid.flat(&e);
            let dp = grid.norm(&linalg::sub(&grid.point(i), &grid.point(j)));
            worst = worst.max(g.q_norm(&(&g.values[i] - &g.values[j])) / dp);
        }
    }
    worst
}

fn invariance_defect(g: &GraphFn, stepper: &Stepper) -> Result<f64> {
    let grid = &g.grid;
    let inside: Vec<usize> = (0..grid.len()).filter(|&j| grid.norm(&grid.point(j)) < grid.radius).collect();
    let mut c = DMatrix::zeros(stepper.len(), inside.len());
    for (col, &j) in inside.iter().enumerate() {
        c.set_column(col, &g.lift(&grid.point(j)));
    }
    stepper.advance_par(&mut c, stepper.steps_per_unit())?;
    let mut worst = 0.0f64;
    for col in 0..inside.len() {
        let (p, q) = split_coordinates(&c.column(col).into_owned(), grid.m);
        if let Some(phi) = interpolate(grid, &g.values, &p) {
            worst = worst.max(g.q_norm(&(q - phi)));
        }
    }
    Ok(worst)
}

/// |Q u - Phi(P u)|_alpha for a state in basis coordinates.
pub fn distance_to_graph(g: &GraphFn, c: &DVector<f64>) -> f64 {
    let (p, q) = split_coordinates(c, g.m());
    g.q_norm(&(q - g.eval(&p)))
}

/// Fails when the grid ball does not contain every given coordinate point.
pub fn validate_grid(grid: &GraphGrid, points: &[Vec<f64>]) -> Result<()> {
    for p in points {
        let r = grid.norm(p);
        if r >= grid.radius {
            return Err(LabError::Config(format!(
                "graph grid radius {:.3e} does not cover the attractor (point at {r:.3e})",
                grid.radius
            )));
        }
    }
    Ok(())
}

/// max over grid nodes of |Phi_eps(p) - E Phi_0^eps(p)|_{X_eps^alpha}.
pub fn graph_distance(
    phi_eps: &GraphFn,
    phi_0eps: &GraphFn,
    basis_eps: &EigenBasis,
    basis0: &EigenBasis,
    transfer: &TransferOperators,
) -> Result<f64> {
    if phi_eps.grid != phi_0eps.grid {
        return Err(LabError::GridMismatch("graphs live on different grids".into()));
    }
    let m = phi_eps.m();
    let synth = |basis: &EigenBasis, q: &DVector<f64>| -> Vec<f64> {
        let u = basis.vectors.columns(m, q.len()) * q;
        u.iter().copied().collect()
    };
    let diffs: Vec<Vec<f64>> = (0..phi_eps.grid.len())
        .map(|j| {
            let a = synth(basis_eps, &phi_eps.values[j]);
            let b = transfer.extend(&synth(basis0, &phi_0eps.values[j]));
            linalg::sub(&a, &b)
        })
        .collect();
    Ok(basis_eps.full_alpha_norms(&diffs)?.into_iter().fold(0.0, f64::max))
}

/// z' = -diag(lambda) z + H(z), H(z) = j P_m F(j^{-1} z + Phi(z)).
#[derive(Clone, Debug)]
pub struct ReducedSystem {
    pub graph: GraphFn,
    pub linear: Vec<f64>,
    pub r_prime: f64,
    pub dt: f64,
    stepper: Arc<Stepper>,
    p_fields: DMatrix<f64>,
    node_fields: DMatrix<f64>,
    rows: DMatrix<f64>,
    integrator: ExpIntegrator,
}

impl ReducedSystem {
    pub fn new(stepper: Arc<Stepper>, graph: GraphFn, r_prime: f64) -> Result<Self> {
        let m = graph.m();
        let k = stepper.len();
        pre(graph.q_weights.len() + m == k, || "graph and stepper disagree on the basis size".into())?;
        let v = &stepper.basis.vectors;
        let p_fields = v.columns(0, m).into_owned();
        let mut vals = DMatrix::zeros(k - m, graph.values.len());
        for (j, q) in graph.values.iter().enumerate() {
            vals.set_column(j, q);
        }
        let node_fields = v.columns(m, k - m) * vals;
        let rows = stepper.lumped_rows(m);
        let linear = stepper.basis.values[..m].to_vec();
        let integrator = ExpIntegrator::new(&linear, stepper.dt, stepper.scheme);
        Ok(ReducedSystem { dt: stepper.dt, graph, linear, r_prime, stepper, p_fields, node_fields, rows, integrator })
    }

    pub fn m(&self) -> usize {
        self.linear.len()
    }

    /// H at each column of z.
    pub fn field(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let Some(reaction) = self.stepper.nonlinearity.reaction() else {
            return Ok(DMatrix::zeros(z.nrows(), z.ncols()));
        };
        let mut out = DMatrix::zeros(z.nrows(), z.ncols());
        for j in 0..z.ncols() {
            let zj: Vec<f64> = z.column(j).iter().copied().collect();
            let sup = linalg::norm_inf(&zj);
            if !sup.is_finite() || sup > 1e8 {
                return Err(LabError::BlowUp { sup, limit: 1e8 });
            }
            let mut u = &self.p_fields * z.column(j);
            let mut full = DVector::zeros(self.stepper.len());
            full.rows_mut(0, zj.len()).copy_from_slice(&zj);
            if let Some(w) = self.graph.grid.weights(&zj) {
                for (i, wi) in w {
                    u.axpy(wi, &self.node_fields.column(i), 1.0);
                    full.rows_mut(zj.len(), self.graph.q_weights.len()).axpy(wi, &self.graph.values[i], 1.0);
                }
            }
            let th = self.stepper.gate_factor(&full).0;
            if th == 0.0 {
                continue;
            }
            u.apply(|s| *s = th * reaction.f(*s));
            out.set_column(j, &(&self.rows * u));
        }
        Ok(out)
    }

    /// -diag(lambda) z + H(z).
    pub fn vector_field(&self, z: &[f64]) -> Result<Vec<f64>> {
        let zm = DMatrix::from_column_slice(z.len(), 1, z);
        let h = self.field(&zm)?;
        Ok((0..z.len()).map(|i| h[(i, 0)] - self.linear[i] * z[i]).collect())
    }

    pub fn advance(&self, z: &mut DMatrix<f64>, steps: usize) -> Result<()> {
        for _ in 0..steps {
            self.integrator.step(z, |x| self.field(x))?;
        }
        Ok(())
    }

    pub fn steps_per_unit(&self) -> usize {
        (1.0 / self.dt).round() as usize
    }

    /// The reduced time-one map on a batch of columns.
    pub fn time_one_many(&self, z: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        let mut out = z.clone();
        self.advance(&mut out, self.steps_per_unit())?;
        Ok(out)
    }

    /// Central-difference derivative of the time-one map.
    pub fn derivative(&self, z: &[f64], h: f64) -> Result<DMatrix<f64>> {
        let m = self.m();
        let mut pts = DMatrix::zeros(m, 2 * m);
        for k in 0..m {
            for (c, sign) in [(2 * k, 1.0), (2 * k + 1, -1.0)] {
                pts.set_column(c, &DVector::from_column_slice(z));
                pts[(k, c)] += sign * h;
            }
        }
        let img = self.time_one_many(&pts)?;
        Ok(DMatrix::from_fn(m, m, |i, k| (img[(i, 2 * k)] - img[(i, 2 * k + 1)]) / (2.0 * h)))
    }
}

pub fn reduced_time_one(z: &[f64], system: &ReducedSystem) -> Result<Vec<f64>> {
    let out = system.time_one_many(&DMatrix::from_column_slice(z.len(), 1, z))?;
    Ok(out.iter().copied().collect())
}

/// Sup-norm and finite-difference C^1 distances of two reduced time-one maps.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct MapDistance {
    pub c0: f64,
    pub c1: f64,
}

/// Distances between reduced time-one maps over the grid nodes inside the
/// ball of radius 2R', measured in the limit coordinate metric.
pub fn reduced_map_distance(sys_a: &ReducedSystem, sys_b: &ReducedSystem) -> Result<MapDistance> {
    pre(sys_a.m() == sys_b.m(), || "reduced systems of different dimension".into())?;
    let grid = &sys_b.graph.grid;
    let m = grid.m;
    let nodes: Vec<Vec<f64>> = (0..grid.len()).map(|j| grid.point(j)).filter(|p| grid.norm(p) < grid.radius).collect();
    let per = 1 + 2 * m;
    let mut pts = DMatrix::zeros(m, nodes.len() * per);
    for (n, p) in nodes.iter().enumerate() {
        for c in 0..per {
            let mut q = p.clone();
            if c > 0 {
                let k = (c - 1) / 2;
                q[k] += if c % 2 == 1 { C1_STEP } else { -C1_STEP };
            }
            pts.set_column(n * per + c, &DVector::from_vec(q));
        }
    }
    let (a, b) = rayon::join(|| sys_a.time_one_many(&pts), || sys_b.time_one_many(&pts));
    let (a, b) = (a?, b?);
    let w = &grid.scale;
    let mut out = MapDistance { c0: 0.0, c1: 0.0 };
    for n in 0..nodes.len() {
        let base = n * per;
        let d: Vec<f64> = (0..m).map(|i| (a[(i, base)] - b[(i, base)]) * w[i]).collect();
        out.c0 = out.c0.max(linalg::norm2(&d));
        let jd = DMatrix::from_fn(m, m, |i, k| {
            let da = (a[(i, base + 1 + 2 * k)] - a[(i, base + 2 + 2 * k)]) / (2.0 * C1_STEP);
            let db = (b[(i, base + 1 + 2 * k)] - b[(i, base + 2 + 2 * k)]) / (2.0 * C1_STEP);
            w[i] * (da - db) / w[k]
        });
        out.c1 = out.c1.max(jd.singular_values().max());
    }
    Ok(out)
}

/// Equilibria and sampled connections of a reduced system.
#[derive(Clone, Debug, Serialize)]
pub struct ReducedAttractor {
    pub equilibria: Vec<Vec<f64>>,
    pub unstable_dims: Vec<usize>,
    pub samples: Vec<Vec<f64>>,
    /// Connections that did not reach a stable equilibrium within budget.
    pub unresolved: usize,
}

fn fd_jacobian(sys: &ReducedSystem, z: &[f64]) -> Result<DMatrix<f64>> {
    let m = z.len();
    let mut j = DMatrix::zeros(m, m);
    for k in 0..m {
        let h = 1e-6 * z[k].abs().max(1.0);
        let mut zp = z.to_vec();
        let mut zm = z.to_vec();
        zp[k] += h;
        zm[k] -= h;
        let (fp, fm) = (sys.vector_field(&zp)?, sys.vector_field(&zm)?);
        for i in 0..m {
            j[(i, k)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    Ok(j)
}

/// Newton on -diag(lambda) z + H(z) = 0.
pub fn reduced_equilibrium(sys: &ReducedSystem, seed: &[f64]) -> Result<Vec<f64>> {
    let mut z = seed.to_vec();
    let mut history = Vec::new();
    for _ in 0..60 {
        let r = sys.vector_field(&z)?;
        let rn = linalg::norm2(&r);
        history.push(rn);
        if rn <= 1e-12 {
            return Ok(z);
        }
        let j = fd_jacobian(sys, &z)?;
        let dz = linalg::dense_solve(&j, &(-DVector::from_vec(r))).ok_or_else(|| LabError::NewtonDivergence(history.clone()))?;
        for (zi, d) in z.iter_mut().zip(dz.iter()) {
            *zi += d;
        }
    }
    if linalg::norm2(&sys.vector_field(&z)?) <= 1e-10 {
        return Ok(z);
    }
    Err(LabError::NewtonDivergence(history))
}

/// Reduced equilibria from seeds, then +-1e-4 launches along each unstable
/// direction, sampled every time unit plus 20 times in the first unit.
pub fn reduced_attractor(sys: &ReducedSystem, seeds: &[Vec<f64>]) -> Result<ReducedAttractor> {
    pre(!seeds.is_empty(), || "no seeds".into())?;
    let mut eqs: Vec<Vec<f64>> = Vec::new();
    for s in seeds {
        let z = reduced_equilibrium(sys, s)?;
        if !eqs.iter().any(|e| linalg::norm2(&linalg::sub(e, &z)) <= 1e-6) {
            eqs.push(z);
        }
    }
    let mut dims = Vec::new();
    let mut launches = Vec::new();
    for e in &eqs {
        let j = fd_jacobian(sys, e)?;
        let unstable = unstable_directions(&j);
        dims.push(unstable.len());
        for v in unstable {
            for sign in [1.0, -1.0] {
                launches.push(e.iter().zip(&v).map(|(a, b)| a + sign * 1e-4 * b).collect::<Vec<f64>>());
            }
        }
    }
    let stable: Vec<&Vec<f64>> = eqs.iter().zip(&dims).filter(|(_, &d)| d == 0).map(|(e, _)| e).collect();
    let per_unit = sys.steps_per_unit();
    let dense_every = (per_unit / 20).max(1);
    let mut samples = eqs.clone();
    let mut unresolved = 0;
    for start in launches {
        let mut z = DMatrix::from_column_slice(start.len(), 1, &start);
        samples.push(start);
        let mut reached = false;
        for step in 1..=crate::semiflow::HETEROCLINIC_BUDGET {
            sys.advance(&mut z, 1)?;
            let col: Vec<f64> = z.iter().copied().collect();
            if step % per_unit == 0 || (step < per_unit && step % dense_every == 0) {
                samples.push(col.clone());
            }
            if stable.iter().any(|s| linalg::norm2(&linalg::sub(s, &col)) <= 1e-8) {
                samples.push(col);
                reached = true;
                break;
            }
        }
        if !reached {
            unresolved += 1;
        }
    }
    Ok(ReducedAttractor { equilibria: eqs, unstable_dims: dims, samples, unresolved })
}

/// Real eigenvectors for eigenvalues with positive real part.
fn unstable_directions(j: &DMatrix<f64>) -> Vec<Vec<f64>> {
    let m = j.nrows();
    let Some(values) = j.clone().eigenvalues() else {
        return Vec::new();
    };
    let mut out = Vec::new();
    for &l in values.iter().filter(|&&l| l > 0.0) {
        let shifted = j - DMatrix::identity(m, m) * l;
        let svd = shifted.svd(false, true);
        let Some(vt) = svd.v_t else { continue };
        let (imin, _) = svd.singular_values.iter().enumerate().fold((0, f64::INFINITY), |b, (i, &s)| if s < b.1 { (i, s) } else { b });
        out.push(vt.row(imin).iter().copied().collect());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::ChannelProfile;
    use crate::nonlinearity::{Cutoff, GateSpace, NonlinearOperator, ReactionTerm};
    use crate::operators::{assemble_a0, eigs, eigs_full, OperatorConfig};
    use crate::semiflow::{find_equilibria, FlowNonlinearity, GateWeights, Scheme, DEFAULT_DT};

    fn limit_basis(n: usize) -> (Arc<EigenBasis>, crate::operators::DiscreteOperator) {
        let p = ChannelProfile::sine(0.3, 2).unwrap();
        let op = assemble_a0(&p, &OperatorConfig::limit(1.0, 0.25).unwrap(), n).unwrap();
        (Arc::new(eigs_full(&op).unwrap()), op)
    }

    fn prepared(basis: &Arc<EigenBasis>, r: f64) -> Stepper {
        let op = NonlinearOperator::new(ReactionTerm::default_cubic(), Cutoff::new(r).unwrap(), GateSpace::Limit);
        let nl = FlowNonlinearity::Prepared { op, gate: GateWeights::own(basis) };
        Stepper::new(basis.clone(), DEFAULT_DT, Scheme::Etdrk4, nl).unwrap()
    }

    #[test]
    fn zero_coupling_selects_first_dimension() {
        let (b, _) = limit_basis(65);
        let r = select_gap_dimension(&b, 0.0, KAPPA, 0.25, 10).unwrap();
        assert_eq!(r.m, 1);
        assert!(r.satisfied);
        assert!(select_gap_dimension(&b, 1.0, KAPPA, 0.25, b.len()).is_err());
    }

    #[test]
    fn straight_channel_gap_scan_matches_closed_form() {
        let pi2 = PI * PI;
        let lam = |m: usize| 1.0 + pi2 * ((m - 1) as f64).powi(2);
        let values: Vec<f64> = (1..=600).map(lam).collect();
        let oracle = (1..600)
            .find(|&m| {
                pi2 * (2 * m - 1) as f64 >= 108.0 * (lam(m).powf(0.25) + lam(m + 1).powf(0.25))
                    && lam(m).powf(0.75) >= 288.0
            })
            .unwrap();
        let r = scan_gap(&values, 12.0, KAPPA, 0.25, 599).unwrap();
        assert!(r.satisfied);
        assert_eq!(r.m, oracle);
        assert!(!scan_gap(&values, 12.0, KAPPA, 0.25, oracle - 1).unwrap().satisfied);
    }

    #[test]
    fn clustered_spectrum_is_unsatisfied() {
        let (b, _) = limit_basis(65);
        let mut values = b.values.clone();
        values[1] = values[0];
        let r = gap_report(&values, 1, 1.0, KAPPA, 0.25);
        assert!(!r.satisfied);
    }

    #[test]
    fn gap_growth_on_both_profiles() {
        for p in [ChannelProfile::straight(1.0, 2).unwrap(), ChannelProfile::sine(0.3, 2).unwrap()] {
            let op = assemble_a0(&p, &OperatorConfig::limit(1.0, 0.25).unwrap(), 1024).unwrap();
            let r = gap_growth_check(&eigs(&op, 40).unwrap()).unwrap();
            assert!(r.satisfied, "{r:?}");
        }
        let (b, op) = limit_basis(65);
        let short = eigs(&op, 5).unwrap();
        assert!(gap_growth_check(&short).is_err());
        assert!(gap_growth_check(&b).is_ok());
    }

    #[test]
    fn zero_nonlinearity_gives_flat_graph() {
        let (b, _) = limit_basis(65);
        let s = Stepper::new(b.clone(), DEFAULT_DT, Scheme::Etdrk4, FlowNonlinearity::Zero).unwrap();
        let grid = GraphGrid::new(1, 11, 4.0, &b).unwrap();
        let g = compute_graph(&s, &grid).unwrap();
        assert_eq!(g.sweeps, 1);
        assert!(g.values.iter().all(|v| v.amax() == 0.0));
        let sys = ReducedSystem::new(Arc::new(s), g, 2.0).unwrap();
        let z = reduced_time_one(&[1.5], &sys).unwrap();
        assert!((z[0] - 1.5 * (-b.values[0]).exp()).abs() < 1e-12);
    }

    #[test]
    fn equilibria_lie_on_limit_graph() {
        let (b, op) = limit_basis(65);
        let r = 2.0 * b.alpha_norm_coeffs(&b.coefficients(&vec![2.0; op.dim()]));
        let s = prepared(&b, r);
        let r_prime = support_radius(r, &b, 1);
        let grid = GraphGrid::new(1, DEFAULT_NODES, 2.0 * r_prime, &b).unwrap();
        let g = compute_graph(&s, &grid).unwrap();
        assert!(g.lipschitz_est < 1.0);
        assert!(g.invariance_defect <= 5e-8, "{}", g.invariance_defect);
        for (j, v) in g.values.iter().enumerate() {
            if grid.norm(&grid.point(j)) >= grid.radius {
                assert_eq!(v.amax(), 0.0);
            }
        }
        let n = op.dim();
        let eqs = find_equilibria(&[vec![-1.5; n], vec![0.2; n], vec![1.5; n]], &s).unwrap();
        let pts: Vec<Vec<f64>> = eqs.coeffs.iter().map(|c| split_coordinates(c, 1).0).collect();
        validate_grid(&grid, &pts).unwrap();
        for c in &eqs.coeffs {
            assert!(distance_to_graph(&g, c) <= 1e-4);
        }
        let sys = ReducedSystem::new(Arc::new(s.clone()), g, r_prime).unwrap();
        for p in &pts {
            let z = reduced_time_one(p, &sys).unwrap();
            assert!((z[0] - p[0]).abs() <= 1e-6);
        }
        let far = [1.01 * r_prime * b.values[0].exp()];
        let z = reduced_time_one(&far, &sys).unwrap();
        assert!((z[0] - far[0] * (-b.values[0]).exp()).abs() < 1e-12);
        let att = reduced_attractor(&sys, &pts).unwrap();
        assert_eq!(att.unstable_dims.iter().filter(|&&d| d == 1).count(), 1);
        assert_eq!(att.unresolved, 0);
        let same = reduced_map_distance(&sys, &sys).unwrap();
        assert_eq!((same.c0, same.c1), (0.0, 0.0));
        let small = GraphGrid::new(1, 11, 0.5, &b).unwrap();
        assert!(validate_grid(&small, &pts).is_err());
    }

    #[test]
    fn graph_distance_checks_grids() {
        let (b, _) = limit_basis(33);
        let s = Stepper::new(b.clone(), DEFAULT_DT, Scheme::Etdrk4, FlowNonlinearity::Zero).unwrap();
        let g1 = compute_graph(&s, &GraphGrid::new(1, 11, 4.0, &b).unwrap()).unwrap();
        let g2 = compute_graph(&s, &GraphGrid::new(1, 13, 4.0, &b).unwrap()).unwrap();
        let pair = crate::operators::ChannelPair::new(&ChannelProfile::sine(0.3, 2).unwrap(), 1.0, 0.25, 0.25, 33, 4).unwrap();
        let be = eigs_full(&pair.op_eps).unwrap();
        assert!(matches!(graph_distance(&g1, &g2, &be, &b, &pair.transfer), Err(LabError::GridMismatch(_))));
    }

    #[test]
    fn two_dimensional_graph_of_linear_flow() {
        let (b, _) = limit_basis(33);
        let s = Stepper::new(b.clone(), DEFAULT_DT, Scheme::Etdrk4, FlowNonlinearity::Zero).unwrap();
        let grid = GraphGrid::new(2, 7, 3.0, &b).unwrap();
        let g = compute_graph(&s, &grid).unwrap();
        assert_eq!(g.sweeps, 1);
        assert_eq!(grid.len(), 49);
        let p = grid.point(grid.flat(&[2, 5]));
        let w = grid.weights(&p).unwrap();
        assert_eq!(w, vec![(grid.flat(&[2, 5]), 1.0)]);
    }
}
