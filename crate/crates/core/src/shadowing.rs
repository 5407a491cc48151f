//! Negative pseudo-trajectories, Newton shadowing on sequence space, and
//! Hausdorff distances between sampled attractors.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{pre, LabError, Result};
use crate::linalg;
use crate::manifold::ReducedSystem;

pub const DEFAULT_WINDOW: usize = 50;
pub const ORBIT_TOL: f64 = 1e-12;
pub const DELTAS: [f64; 3] = [1e-2, 1e-3, 1e-4];

/// A map on R^m evaluated on columns.
pub trait DiscreteMap: Sync {
    fn dim(&self) -> usize;

    fn apply_many(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>>;

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.apply_many(&DMatrix::from_column_slice(x.len(), 1, x))?.iter().copied().collect())
    }

    /// Central-difference derivatives at each column.
    fn derivative_many(&self, x: &DMatrix<f64>) -> Result<Vec<DMatrix<f64>>> {
        let m = self.dim();
        let n = x.ncols();
        let mut pts = DMatrix::zeros(m, 2 * m * n);
        let mut steps = vec![0.0; m * n];
        for j in 0..n {
            for k in 0..m {
                let h = 1e-6 * x[(k, j)].abs().max(1.0);
                steps[j * m + k] = h;
                for (c, s) in [(0, 1.0), (1, -1.0)] {
                    let col = 2 * (j * m + k) + c;
                    pts.set_column(col, &x.column(j));
                    pts[(k, col)] += s * h;
                }
            }
        }
        let img = self.apply_many(&pts)?;
        Ok((0..n)
            .map(|j| {
                DMatrix::from_fn(m, m, |i, k| {
                    let col = 2 * (j * m + k);
                    (img[(i, col)] - img[(i, col + 1)]) / (2.0 * steps[j * m + k])
                })
            })
            .collect())
    }
}

/// x -> a x on R^m.
#[derive(Clone, Copy, Debug)]
pub struct LinearMap {
    pub m: usize,
    pub a: f64,
}

impl DiscreteMap for LinearMap {
    fn dim(&self) -> usize {
        self.m
    }

    fn apply_many(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(x * self.a)
    }
}

impl DiscreteMap for ReducedSystem {
    fn dim(&self) -> usize {
        self.m()
    }

    fn apply_many(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.time_one_many(x)
    }
}

/// Finite negative pseudo-trajectory z_{-N}, ..., z_0.
#[derive(Clone, Debug, Serialize)]
pub struct PseudoTrajectory {
    pub points: Vec<Vec<f64>>,
    pub delta: f64,
    /// Noise amplitude used to generate it, if synthetic.
    pub target: f64,
}

impl PseudoTrajectory {
    pub fn new<T: DiscreteMap + ?Sized>(points: Vec<Vec<f64>>, map: &T) -> Result<Self> {
        let delta = pseudo_defect(&points, map)?;
        Ok(PseudoTrajectory { points, delta, target: delta })
    }

    pub fn window(&self) -> usize {
        self.points.len() - 1
    }
}

fn columns(points: &[Vec<f64>]) -> DMatrix<f64> {
    let m = points[0].len();
    DMatrix::from_fn(m, points.len(), |i, j| points[j][i])
}

/// max_n |z_{n+1} - T(z_n)| in the Euclidean norm.
pub fn pseudo_defect<T: DiscreteMap + ?Sized>(points: &[Vec<f64>], map: &T) -> Result<f64> {
    pre(points.len() >= 2, || "a pseudo-trajectory needs at least two points".into())?;
    let img = map.apply_many(&columns(&points[..points.len() - 1]))?;
    Ok((0..img.ncols())
        .map(|j| {
            let d: Vec<f64> = (0..img.nrows()).map(|i| points[j + 1][i] - img[(i, j)]).collect();
            linalg::norm2(&d)
        })
        .fold(0.0, f64::max))
}

/// A fixed point with orthonormal bases of its unstable and stable subspaces.
#[derive(Clone, Debug)]
pub struct FixedPoint {
    pub point: Vec<f64>,
    pub unstable: DMatrix<f64>,
    pub stable: DMatrix<f64>,
    /// min ||mu| - 1| over the multipliers.
    pub margin: f64,
}

fn orthonormal(vecs: &[DVector<f64>], m: usize) -> DMatrix<f64> {
    if vecs.is_empty() {
        return DMatrix::zeros(m, 0);
    }
    let a = DMatrix::from_columns(vecs);
    let qr = a.qr();
    qr.q().columns(0, vecs.len()).into_owned()
}

/// Orthonormal basis of the orthogonal complement of span(b).
fn complement(b: &DMatrix<f64>) -> DMatrix<f64> {
    let m = b.nrows();
    let p = DMatrix::identity(m, m) - b * b.transpose();
    let eig = p.symmetric_eigen();
    let cols: Vec<DVector<f64>> = (0..m)
        .filter(|&i| eig.eigenvalues[i] > 0.5)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(m, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Splits the multipliers of DT at each point; fails on a non-hyperbolic one.
pub fn fixed_points<T: DiscreteMap + ?Sized>(map: &T, points: &[Vec<f64>]) -> Result<Vec<FixedPoint>> {
    pre(!points.is_empty(), || "no fixed points".into())?;
    let m = map.dim();
    let ds = map.derivative_many(&columns(points))?;
    let mut out = Vec::new();
    for (idx, (p, d)) in points.iter().zip(ds).enumerate() {
        let schur = d.clone().schur();
        let mu = schur.eigenvalues().ok_or_else(|| {
            LabError::NotHyperbolic { index: idx, mean: linalg::mean(p), margin: 0.0 }
        })?;
        let margin = mu.iter().fold(f64::INFINITY, |a, l| a.min((l.abs() - 1.0).abs()));
        if margin < 1e-6 {
            return Err(LabError::NotHyperbolic { index: idx, mean: linalg::mean(p), margin });
        }
        let mut un = Vec::new();
        let mut st = Vec::new();
        for &l in mu.iter() {
            let shifted = &d - DMatrix::identity(m, m) * l;
            let svd = shifted.svd(false, true);
            let vt = svd.v_t.expect("requested");
            let imin = svd.singular_values.imin();
            let v = vt.row(imin).transpose().into_owned();
            if l.abs() > 1.0 {
                un.push(v);
            } else {
                st.push(v);
            }
        }
        out.push(FixedPoint { point: p.clone(), unstable: orthonormal(&un, m), stable: orthonormal(&st, m), margin });
    }
    Ok(out)
}

fn nearest<'a>(fixed: &'a [FixedPoint], z: &[f64]) -> &'a FixedPoint {
    fixed
        .iter()
        .min_by(|a, b| {
            let da = linalg::norm2(&linalg::sub(&a.point, z));
            let db = linalg::norm2(&linalg::sub(&b.point, z));
            da.total_cmp(&db)
        })
        .expect("nonempty")
}

/// Relative radius within which an endpoint counts as sitting at a fixed point.
pub const CLOSURE_RADIUS: f64 = 0.1;

fn near(fp: &FixedPoint, z: &[f64]) -> bool {
    linalg::norm2(&linalg::sub(&fp.point, z)) <= CLOSURE_RADIUS * (1.0 + linalg::norm2(&fp.point))
}

#[derive(Clone, Debug, Serialize)]
pub struct ShadowResult {
    pub orbit: Vec<Vec<f64>>,
    pub orbit_defect: f64,
    pub sup_dist: f64,
    pub l_ratio: f64,
    pub iterations: usize,
}

/// Gauss-Newton on x_{n+1} - T(x_n) = 0 with the left end on the affine
/// unstable subspace of the nearest fixed point and, when the right end sits
/// at a fixed point, the right end on its affine stable subspace. Each step
/// is the minimum-norm correction.
pub fn shadow_solve<T: DiscreteMap + ?Sized>(
    map: &T,
    fixed: &[FixedPoint],
    pseudo: &PseudoTrajectory,
    neighborhood: f64,
) -> Result<ShadowResult> {
    let m = map.dim();
    let n = pseudo.window();
    pre(n >= 10, || format!("window N = {n} below 10"))?;
    pre(!fixed.is_empty(), || "no fixed points for the boundary closure".into())?;
    for z in &pseudo.points {
        let r = linalg::norm2(z);
        if r > neighborhood {
            return Err(LabError::OutsideNeighborhood(format!("point at radius {r:.3e} beyond {neighborhood:.3e}")));
        }
    }
    let left = nearest(fixed, &pseudo.points[0]);
    let right = nearest(fixed, &pseudo.points[n]);
    let lrows = complement(&left.unstable).transpose();
    let rrows = if near(right, &pseudo.points[n]) {
        complement(&right.stable).transpose()
    } else {
        DMatrix::zeros(0, m)
    };
    let (nl, nr) = (lrows.nrows(), rrows.nrows());
    let rows = nl + n * m + nr;
    let cols = (n + 1) * m;
    let mut x = columns(&pseudo.points);
    let mut history = Vec::new();
    for it in 0..50 {
        let head = x.columns(0, n).into_owned();
        let img = map.apply_many(&head)?;
        let mut r = DVector::zeros(rows);
        let lr = &lrows * (x.column(0) - DVector::from_column_slice(&left.point));
        r.rows_mut(0, nl).copy_from(&lr);
        let mut defect = 0.0f64;
        for j in 0..n {
            let d = x.column(j + 1) - img.column(j);
            defect = defect.max(d.norm());
            r.rows_mut(nl + j * m, m).copy_from(&d);
        }
        let rr = &rrows * (x.column(n) - DVector::from_column_slice(&right.point));
        r.rows_mut(nl + n * m, nr).copy_from(&rr);
        let res = r.amax();
        history.push(res);
        if res <= ORBIT_TOL {
            let orbit: Vec<Vec<f64>> = (0..=n).map(|j| x.column(j).iter().copied().collect()).collect();
            let sup_dist = orbit
                .iter()
                .zip(&pseudo.points)
                .map(|(a, b)| linalg::norm2(&linalg::sub(a, b)))
                .fold(0.0, f64::max);
            let l_ratio = if pseudo.delta > 0.0 { sup_dist / pseudo.delta } else { 0.0 };
            return Ok(ShadowResult { orbit, orbit_defect: defect, sup_dist, l_ratio, iterations: it });
        }
        let ds = map.derivative_many(&head)?;
        let mut jac = DMatrix::zeros(rows, cols);
        jac.view_mut((0, 0), (nl, m)).copy_from(&lrows);
        for (j, d) in ds.iter().enumerate() {
            let r0 = nl + j * m;
            jac.view_mut((r0, j * m), (m, m)).copy_from(&(-d));
            jac.view_mut((r0, (j + 1) * m), (m, m)).copy_from(&DMatrix::identity(m, m));
        }
        jac.view_mut((nl + n * m, n * m), (nr, m)).copy_from(&rrows);
        let svd = jac.svd(true, true);
        let step = svd.solve(&(-r), 1e-13).map_err(|_| LabError::NewtonDivergence(history.clone()))?;
        for j in 0..=n {
            let mut col = x.column_mut(j);
            col += step.rows(j * m, m);
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(LabError::NewtonDivergence(history));
        }
    }
    Err(LabError::NewtonDivergence(history))
}

/// Pseudo-trajectories of `map` from each start: true orbits plus uniform
/// noise of amplitude delta, and one constant-direction sample per start.
pub fn perturbed_orbits<T: DiscreteMap + ?Sized>(
    map: &T,
    starts: &[Vec<f64>],
    deltas: &[f64],
    per_start: usize,
    window: usize,
    seed: u64,
) -> Result<Vec<PseudoTrajectory>> {
    let m = map.dim();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for &delta in deltas {
        for s in starts {
            for k in 0..=per_start {
                let noise: Vec<Vec<f64>> = (0..window)
                    .map(|_| {
                        let v: Vec<f64> = if k == per_start {
                            vec![1.0; m]
                        } else {
                            (0..m).map(|_| rng.gen_range(-1.0..=1.0)).collect()
                        };
                        let scale = delta / (m as f64).sqrt();
                        v.iter().map(|a| a * scale).collect()
                    })
                    .collect();
                let mut pts = vec![s.clone()];
                for e in &noise {
                    let next = map.apply(pts.last().expect("nonempty"))?;
                    pts.push(next.iter().zip(e).map(|(a, b)| a + b).collect());
                }
                let mut p = PseudoTrajectory::new(pts, map)?;
                p.target = delta;
                out.push(p);
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct ShadowingReport {
    pub l_hat: f64,
    /// (noise amplitude, max L_ratio) per decade.
    pub per_delta: Vec<(f64, f64)>,
    /// Largest over smallest per-decade maximum, minus one.
    pub variation: f64,
    pub stable: bool,
    pub failures: usize,
}

/// L_hat = max L_ratio, with its spread across the noise decades.
pub fn lipschitz_shadowing_estimate<T: DiscreteMap + ?Sized>(
    map: &T,
    fixed: &[FixedPoint],
    samples: &[PseudoTrajectory],
    neighborhood: f64,
) -> Result<ShadowingReport> {
    pre(!samples.is_empty(), || "empty pseudo-trajectory sample".into())?;
    let results: Vec<Result<ShadowResult>> =
        samples.par_iter().map(|p| shadow_solve(map, fixed, p, neighborhood)).collect();
    let mut per: Vec<(f64, f64)> = Vec::new();
    let mut failures = 0;
    for (p, r) in samples.iter().zip(results) {
        let Ok(r) = r else {
            failures += 1;
            continue;
        };
        match per.iter_mut().find(|(d, _)| (d.log10() - p.target.log10()).abs() < 0.5) {
            Some(slot) => slot.1 = slot.1.max(r.l_ratio),
            None => per.push((p.target, r.l_ratio)),
        }
    }
    if per.is_empty() {
        return Err(LabError::OutsideNeighborhood("no pseudo-trajectory could be shadowed".into()));
    }
    let l_hat = per.iter().map(|x| x.1).fold(0.0, f64::max);
    let low = per.iter().map(|x| x.1).fold(f64::INFINITY, f64::min);
    let variation = l_hat / low - 1.0;
    Ok(ShadowingReport { l_hat, per_delta: per, variation, stable: variation <= 0.5, failures })
}

/// Symmetric Hausdorff distance between finite sets under `metric`.
pub fn hausdorff_distance<P, F>(a: &[P], b: &[P], metric: F) -> Result<f64>
where
    P: Sync,
    F: Fn(&P, &P) -> f64 + Sync,
{
    pre(!a.is_empty() && !b.is_empty(), || "Hausdorff distance of an empty set".into())?;
    let directed = |x: &[P], y: &[P]| -> f64 {
        x.par_iter()
            .map(|p| y.iter().map(|q| metric(p, q)).fold(f64::INFINITY, f64::min))
            .reduce(|| 0.0, f64::max)
    };
    Ok(directed(a, b).max(directed(b, a)))
}

/// Weighted Euclidean metric sqrt(sum w_i^2 (p_i - q_i)^2).
pub fn weighted_metric(w: &[f64]) -> impl Fn(&Vec<f64>, &Vec<f64>) -> f64 + Sync + '_ {
    move |p, q| p.iter().zip(q).zip(w).map(|((a, b), s)| (s * (a - b)).powi(2)).sum::<f64>().sqrt()
}

#[derive(Clone, Copy, Debug, Serialize)]
pub struct BoundReport {
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
    pub margin: f64,
}

/// dist_H(A, B) <= L_hat |T_A - T_B|_inf + tol.
pub fn attractor_bound_check(
    attr_a: &[Vec<f64>],
    attr_b: &[Vec<f64>],
    map_distance: f64,
    l_hat: f64,
    tol: f64,
    weights: &[f64],
) -> Result<BoundReport> {
    let lhs = hausdorff_distance(attr_a, attr_b, weighted_metric(weights))?;
    let rhs = l_hat * map_distance + tol;
    Ok(BoundReport { lhs, rhs, holds: lhs <= rhs, margin: rhs - lhs })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn half() -> LinearMap {
        LinearMap { m: 1, a: 0.5 }
    }

    #[test]
    fn defect_of_true_orbit_is_zero() {
        let t = half();
        let pts: Vec<Vec<f64>> = (0..12).map(|k| vec![8.0 * 0.5f64.powi(k)]).collect();
        assert!(pseudo_defect(&pts, &t).unwrap() < 1e-14);
        assert!(pseudo_defect(&pts[..1], &t).is_err());
        let other = LinearMap { m: 1, a: 0.5 + 1e-3 };
        let d = pseudo_defect(&pts, &other).unwrap();
        assert!(d <= 1e-3 * 8.0 + 1e-15);
    }

    #[test]
    fn contraction_shadows_by_zero_orbit() {
        let t = half();
        let fixed = fixed_points(&t, &[vec![0.0]]).unwrap();
        assert_eq!(fixed[0].unstable.ncols(), 0);
        let samples = perturbed_orbits(&t, &[vec![0.0]], &DELTAS, 4, DEFAULT_WINDOW, 7).unwrap();
        for p in &samples {
            let r = shadow_solve(&t, &fixed, p, 10.0).unwrap();
            assert!(r.orbit.iter().all(|x| x[0].abs() < 1e-12));
            assert!(r.sup_dist <= 2.0 * p.delta + ORBIT_TOL, "{} {}", r.sup_dist, p.delta);
        }
        let rep = lipschitz_shadowing_estimate(&t, &fixed, &samples, 10.0).unwrap();
        assert!(rep.l_hat >= 1.0 && rep.l_hat <= 2.1, "{rep:?}");
        assert!(rep.stable);
        assert!(lipschitz_shadowing_estimate(&t, &fixed, &[], 10.0).is_err());
    }

    #[test]
    fn true_orbit_is_its_own_shadow() {
        let t = LinearMap { m: 2, a: 2.0 };
        let fixed = fixed_points(&t, &[vec![0.0, 0.0]]).unwrap();
        assert_eq!(fixed[0].unstable.ncols(), 2);
        let pts: Vec<Vec<f64>> = (0..=12).map(|k| vec![1e-4 * 2f64.powi(k), -3e-4 * 2f64.powi(k)]).collect();
        let p = PseudoTrajectory::new(pts, &t).unwrap();
        let r = shadow_solve(&t, &fixed, &p, 10.0).unwrap();
        assert!(r.sup_dist < 1e-13);
        assert!(r.orbit_defect <= ORBIT_TOL);
        assert!(matches!(shadow_solve(&t, &fixed, &p, 0.1), Err(LabError::OutsideNeighborhood(_))));
    }

    #[test]
    fn shadow_distance_is_symmetric() {
        let t = half();
        let fixed = fixed_points(&t, &[vec![0.0]]).unwrap();
        let p = &perturbed_orbits(&t, &[vec![0.0]], &[1e-3], 1, 20, 3).unwrap()[0];
        let r = shadow_solve(&t, &fixed, p, 10.0).unwrap();
        let back = PseudoTrajectory::new(r.orbit.clone(), &t).unwrap();
        let fwd = r.orbit.iter().zip(&p.points).map(|(a, b)| (a[0] - b[0]).abs()).fold(0.0, f64::max);
        let rev = back.points.iter().zip(&p.points).map(|(a, b)| (b[0] - a[0]).abs()).fold(0.0, f64::max);
        assert_eq!(fwd, rev);
        assert_eq!(fwd, r.sup_dist);
    }

    #[test]
    fn non_hyperbolic_fixed_point_rejected() {
        let t = LinearMap { m: 1, a: 1.0 };
        assert!(matches!(fixed_points(&t, &[vec![0.0]]), Err(LabError::NotHyperbolic { .. })));
    }

    #[test]
    fn hausdorff_basics() {
        let m = weighted_metric(&[1.0]);
        let a = vec![vec![0.0]];
        assert_eq!(hausdorff_distance(&a, &a, &m).unwrap(), 0.0);
        assert_eq!(hausdorff_distance(&a, &[vec![0.25]], &m).unwrap(), 0.25);
        let empty: Vec<Vec<f64>> = vec![];
        assert!(hausdorff_distance(&a, &empty, &m).is_err());
        let coarse: Vec<Vec<f64>> = (0..=10).map(|k| vec![(k as f64 * 0.1).sin()]).collect();
        let fine: Vec<Vec<f64>> = (0..=100).map(|k| vec![(k as f64 * 0.01).sin()]).collect();
        let d = hausdorff_distance(&coarse, &fine, &m).unwrap();
        assert!(d <= 0.05 + 1e-12, "{d}");
    }

    #[test]
    fn bound_check_for_equal_maps() {
        let a = vec![vec![0.0], vec![1.0]];
        let r = attractor_bound_check(&a, &a, 0.0, 2.0, 0.0, &[1.0]).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert!(r.holds);
    }
}
