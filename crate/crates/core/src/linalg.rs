//! Banded symmetric storage, banded Cholesky, and generalized symmetric eigensolvers.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LabError, Result};

/// Symmetric matrix stored by its lower band, row-major.
#[derive(Clone, Debug)]
pub struct BandedSym {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandedSym {
    pub fn zeros(n: usize, bw: usize) -> Self {
        BandedSym { n, bw, data: vec![0.0; n * (bw + 1)] }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn bandwidth(&self) -> usize {
        self.bw
    }

    #[inline]
    fn slot(&self, i: usize, j: usize) -> usize {
        i * (self.bw + 1) + (j + self.bw - i)
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        if i - j > self.bw {
            0.0
        } else {
            self.data[self.slot(i, j)]
        }
    }

    /// Adds `v` to entry (i, j) and, implicitly, (j, i).
    pub fn add(&mut self, i: usize, j: usize, v: f64) {
        let (i, j) = if j > i { (j, i) } else { (i, j) };
        assert!(i - j <= self.bw, "entry ({i},{j}) outside band {}", self.bw);
        let s = self.slot(i, j);
        self.data[s] += v;
    }

    pub fn matvec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.matvec_into(x, &mut y);
        y
    }

    pub fn matvec_into(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.n);
        for v in y.iter_mut() {
            *v = 0.0;
        }
        for i in 0..self.n {
            let j0 = i.saturating_sub(self.bw);
            let row = &self.data[i * (self.bw + 1)..(i + 1) * (self.bw + 1)];
            let mut acc = 0.0;
            for j in j0..i {
                let a = row[j + self.bw - i];
                acc += a * x[j];
                y[j] += a * x[i];
            }
            acc += row[self.bw] * x[i];
            y[i] += acc;
        }
    }

    pub fn quad(&self, x: &[f64]) -> f64 {
        dot(x, &self.matvec(x))
    }

    pub fn bilinear(&self, x: &[f64], y: &[f64]) -> f64 {
        dot(x, &self.matvec(y))
    }

    /// Linear combination `a*self + b*other` with a common bandwidth.
    pub fn combine(&self, a: f64, other: &BandedSym, b: f64) -> BandedSym {
        assert_eq!(self.n, other.n);
        let bw = self.bw.max(other.bw);
        let mut out = BandedSym::zeros(self.n, bw);
        for i in 0..self.n {
            for j in i.saturating_sub(bw)..=i {
                let v = a * self.get(i, j) + b * other.get(i, j);
                if v != 0.0 {
                    let s = out.slot(i, j);
                    out.data[s] = v;
                }
            }
        }
        out
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.n, |i, j| self.get(i, j))
    }

    /// Maximum absolute row sum.
    pub fn norm_inf(&self) -> f64 {
        (0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.bw);
                let hi = (i + self.bw).min(self.n - 1);
                (lo..=hi).map(|j| self.get(i, j).abs()).sum::<f64>()
            })
            .fold(0.0, f64::max)
    }

    pub fn cholesky(&self) -> Result<BandedCholesky> {
        BandedCholesky::new(self)
    }
}

/// Lower-triangular banded Cholesky factor.
#[derive(Clone, Debug)]
pub struct BandedCholesky {
    n: usize,
    bw: usize,
    l: Vec<f64>,
}

impl BandedCholesky {
    pub fn new(a: &BandedSym) -> Result<Self> {
        let n = a.n;
        let bw = a.bw;
        let w = bw + 1;
        let mut l = a.data.clone();
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = l[i * w + (j + bw - i)];
                for k in k0..j {
                    s -= l[i * w + (k + bw - i)] * l[j * w + (k + bw - j)];
                }
                if i == j {
                    if s <= 0.0 || !s.is_finite() {
                        return Err(LabError::NotPositiveDefinite(i));
                    }
                    l[i * w + bw] = s.sqrt();
                } else {
                    l[i * w + (j + bw - i)] = s / l[j * w + bw];
                }
            }
        }
        Ok(BandedCholesky { n, bw, l })
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = b.to_vec();
        self.solve_in_place(&mut x);
        x
    }

    pub fn solve_in_place(&self, x: &mut [f64]) {
        let (n, bw, w) = (self.n, self.bw, self.bw + 1);
        for i in 0..n {
            let mut s = x[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.l[i * w + (k + bw - i)] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..(i + bw + 1).min(n) {
                s -= self.l[k * w + (i + bw - k)] * x[k];
            }
            x[i] = s / self.l[i * w + bw];
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Arithmetic mean of the entries; 0 for an empty slice.
pub fn mean(a: &[f64]) -> f64 {
    if a.is_empty() {
        0.0
    } else {
        a.iter().sum::<f64>() / a.len() as f64
    }
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn norm_inf(a: &[f64]) -> f64 {
    a.iter().fold(0.0, |m, v| m.max(v.abs()))
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

/// Gauss-Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(points: usize) -> (Vec<f64>, Vec<f64>) {
    match points {
        1 => (vec![0.0], vec![2.0]),
        2 => {
            let a = 1.0 / 3f64.sqrt();
            (vec![-a, a], vec![1.0, 1.0])
        }
        3 => {
            let a = (0.6f64).sqrt();
            (vec![-a, 0.0, a], vec![5.0 / 9.0, 8.0 / 9.0, 5.0 / 9.0])
        }
        n => {
            let mut nodes = vec![0.0; n];
            let mut weights = vec![0.0; n];
            for i in 0..n.div_ceil(2) {
                let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
                let mut dp = 1.0;
                for _ in 0..100 {
                    let (mut p0, mut p1) = (1.0, x);
                    for k in 2..=n {
                        let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                        p0 = p1;
                        p1 = p2;
                    }
                    dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
                    let dx = p1 / dp;
                    x -= dx;
                    if dx.abs() < 1e-16 {
                        break;
                    }
                }
                let w = 2.0 / ((1.0 - x * x) * dp * dp);
                nodes[i] = -x;
                nodes[n - 1 - i] = x;
                weights[i] = w;
                weights[n - 1 - i] = w;
            }
            (nodes, weights)
        }
    }
}

/// Dense symmetric-definite generalized eigenproblem `A x = lambda B x`.
/// Eigenvalues ascending, eigenvectors B-orthonormal.
pub fn dense_generalized_eigen(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let chol = nalgebra::Cholesky::new(b.clone()).ok_or(LabError::NotPositiveDefinite(0))?;
    let l = chol.l();
    let t = l
        .solve_lower_triangular(a)
        .ok_or(LabError::NotPositiveDefinite(0))?;
    let mut c = l
        .solve_lower_triangular(&t.transpose())
        .ok_or(LabError::NotPositiveDefinite(0))?;
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = s;
            c[(j, i)] = s;
        }
    }
    let eig = SymmetricEigen::new(c);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[i].total_cmp(&eig.eigenvalues[j]));
    let values: Vec<f64> = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let y = DMatrix::from_fn(n, n, |r, c| eig.eigenvectors[(r, order[c])]);
    let x = l
        .tr_solve_lower_triangular(&y)
        .ok_or(LabError::NotPositiveDefinite(0))?;
    Ok((values, x))
}

/// Result of a generalized eigen-solve: ascending values, B-orthonormal columns,
/// and the relative residuals achieved.
#[derive(Clone, Debug)]
pub struct EigenPairs {
    pub values: Vec<f64>,
    pub vectors: DMatrix<f64>,
    pub residuals: Vec<f64>,
    pub iterations: usize,
}

fn column(m: &DMatrix<f64>, j: usize) -> Vec<f64> {
    m.column(j).iter().copied().collect()
}

/// Backward errors `|K x - lambda M x| / ((|K| + |lambda| |M|) |x|)` of each column.
pub fn residuals(k: &BandedSym, m: &BandedSym, values: &[f64], vectors: &DMatrix<f64>) -> Vec<f64> {
    let (knorm, mnorm) = (k.norm_inf(), m.norm_inf());
    values
        .iter()
        .enumerate()
        .map(|(j, &lam)| {
            let x = column(vectors, j);
            let kx = k.matvec(&x);
            let mx = m.matvec(&x);
            let r: Vec<f64> = kx.iter().zip(&mx).map(|(a, b)| a - lam * b).collect();
            norm2(&r) / ((knorm + lam.abs() * mnorm) * norm2(&x)).max(f64::MIN_POSITIVE)
        })
        .collect()
}

/// Lowest `count` eigenpairs of the banded pencil (K, M) by dense reduction.
pub fn lowest_dense(k: &BandedSym, m: &BandedSym, count: usize) -> Result<EigenPairs> {
    let (values, vectors) = dense_generalized_eigen(&k.to_dense(), &m.to_dense())?;
    let count = count.min(values.len());
    let values = values[..count].to_vec();
    let vectors = vectors.columns(0, count).into_owned();
    let residuals = residuals(k, m, &values, &vectors);
    Ok(EigenPairs { values, vectors, residuals, iterations: 1 })
}

/// Lowest `count` eigenpairs of (K, M) by shift-invert subspace iteration at
/// shift zero with Rayleigh-Ritz and M-orthonormalization.
pub fn lowest_subspace(
    k: &BandedSym,
    kfac: &BandedCholesky,
    m: &BandedSym,
    count: usize,
    tol: f64,
    max_iter: usize,
    seed: u64,
) -> Result<EigenPairs> {
    let n = k.dim();
    let p = (2 * count + 4).min(n);
    if p == n || n <= 200 {
        return lowest_dense(k, m, count);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mx = DMatrix::from_fn(n, p, |_, _| rng.gen::<f64>() - 0.5);
    let mut worst = f64::INFINITY;
    let mut y = DMatrix::<f64>::zeros(n, p);
    let mut ky = DMatrix::<f64>::zeros(n, p);
    let mut my = DMatrix::<f64>::zeros(n, p);
    let mut buf = vec![0.0; n];
    let (knorm, mnorm) = (k.norm_inf(), m.norm_inf());
    for iter in 1..=max_iter {
        for j in 0..p {
            let mut col = column(&mx, j);
            kfac.solve_in_place(&mut col);
            m.matvec_into(&col, &mut buf);
            let scale = dot(&col, &buf).sqrt().max(f64::MIN_POSITIVE);
            for i in 0..n {
                y[(i, j)] = col[i] / scale;
                my[(i, j)] = buf[i] / scale;
            }
            k.matvec_into(&column(&y, j), &mut buf);
            for i in 0..n {
                ky[(i, j)] = buf[i];
            }
        }
        let a = y.transpose() * &ky;
        let b = y.transpose() * &my;
        let a = (&a + a.transpose()) * 0.5;
        let b = (&b + b.transpose()) * 0.5;
        let (theta, q) = dense_generalized_eigen(&a, &b)?;
        let x = &y * &q;
        let kx = &ky * &q;
        mx = &my * &q;
        worst = 0.0;
        for j in 0..count {
            let mut r2 = 0.0;
            let mut x2 = 0.0;
            for i in 0..n {
                let r = kx[(i, j)] - theta[j] * mx[(i, j)];
                r2 += r * r;
                x2 += x[(i, j)] * x[(i, j)];
            }
            let scale = (knorm + theta[j].abs() * mnorm) * x2.sqrt();
            worst = f64::max(worst, r2.sqrt() / scale.max(f64::MIN_POSITIVE));
        }
        if worst <= tol {
            let values = theta[..count].to_vec();
            let vectors = x.columns(0, count).into_owned();
            let residuals = residuals(k, m, &values, &vectors);
            return Ok(EigenPairs { values, vectors, residuals, iterations: iter });
        }
    }
    Err(LabError::EigenNonConvergence { iterations: max_iter, worst })
}

/// Number of eigenvalues of (K, M) below `shift`, from the inertia of K - shift M
/// (banded LDL^T without pivoting).
pub fn count_below(k: &BandedSym, m: &BandedSym, shift: f64) -> Result<usize> {
    let a = k.combine(1.0, m, -shift);
    let (n, bw) = (a.n, a.bw);
    let w = bw + 1;
    let mut l = a.data.clone();
    let mut dvals = vec![0.0; n];
    let mut negatives = 0;
    for i in 0..n {
        let j0 = i.saturating_sub(bw);
        for j in j0..=i {
            let k0 = j0.max(j.saturating_sub(bw));
            let mut s = l[i * w + (j + bw - i)];
            for kk in k0..j {
                s -= l[i * w + (kk + bw - i)] * l[j * w + (kk + bw - j)] * dvals[kk];
            }
            if i == j {
                if s == 0.0 || !s.is_finite() {
                    return Err(LabError::NotPositiveDefinite(i));
                }
                dvals[i] = s;
                l[i * w + bw] = 1.0;
                if s < 0.0 {
                    negatives += 1;
                }
            } else {
                l[i * w + (j + bw - i)] = s / dvals[j];
            }
        }
    }
    Ok(negatives)
}

/// Trapezoid nodes `(t, weight)` of the Balakrishnan integral for the pencil
/// power `(M^-1 K)^beta`, 0 < beta < 1, so that
/// `x^T M (M^-1 K)^beta y ~ sum_j w_j (K x)^T (K + t_j M)^-1 (M y)`.
fn balakrishnan_nodes(k: &BandedSym, m: &BandedSym, beta: f64, lambda_min: f64) -> Vec<(f64, f64)> {
    assert!(beta > 0.0 && beta < 1.0 && lambda_min > 0.0);
    let n = k.dim();
    let mdiag = (0..n).map(|i| m.get(i, i)).fold(f64::INFINITY, f64::min);
    let lambda_max = 100.0 * k.norm_inf() / mdiag;
    let step = 0.4;
    let lo = lambda_min.ln() - 36.0 / beta;
    let hi = lambda_max.ln() + 36.0 / (1.0 - beta);
    let nodes = ((hi - lo) / step).ceil() as usize;
    let c = step * (std::f64::consts::PI * beta).sin() / std::f64::consts::PI;
    (0..=nodes)
        .map(|j| {
            let s = lo + j as f64 * step;
            (s.exp(), c * (beta * s).exp())
        })
        .collect()
}

/// `x^T M (M^-1 K)^beta x` for each field over the whole pencil spectrum;
/// `lambda_min` is a lower bound for the smallest eigenvalue.
pub fn fractional_quad(k: &BandedSym, m: &BandedSym, fields: &[Vec<f64>], beta: f64, lambda_min: f64) -> Result<Vec<f64>> {
    let kx: Vec<Vec<f64>> = fields.iter().map(|x| k.matvec(x)).collect();
    let mx: Vec<Vec<f64>> = fields.iter().map(|x| m.matvec(x)).collect();
    let mut acc = vec![0.0; fields.len()];
    for (t, w) in balakrishnan_nodes(k, m, beta, lambda_min) {
        let chol = k.combine(1.0, m, t).cholesky()?;
        for (a, (kxi, mxi)) in acc.iter_mut().zip(kx.iter().zip(&mx)) {
            *a += w * dot(kxi, &chol.solve(mxi));
        }
    }
    Ok(acc.into_iter().map(|a| a.max(0.0)).collect())
}

/// Matrix of `x_i^T M (M^-1 K)^beta y_j` over the whole pencil spectrum.
pub fn fractional_gram(
    k: &BandedSym,
    m: &BandedSym,
    left: &[Vec<f64>],
    right: &[Vec<f64>],
    beta: f64,
    lambda_min: f64,
) -> Result<DMatrix<f64>> {
    let kx: Vec<Vec<f64>> = left.iter().map(|x| k.matvec(x)).collect();
    let my: Vec<Vec<f64>> = right.iter().map(|y| m.matvec(y)).collect();
    let mut acc = DMatrix::zeros(left.len(), right.len());
    for (t, w) in balakrishnan_nodes(k, m, beta, lambda_min) {
        let chol = k.combine(1.0, m, t).cholesky()?;
        for (j, myj) in my.iter().enumerate() {
            let z = chol.solve(myj);
            for (i, kxi) in kx.iter().enumerate() {
                acc[(i, j)] += w * dot(kxi, &z);
            }
        }
    }
    Ok(acc)
}

/// Row sums of M as a diagonal matrix.
pub fn lumped(m: &BandedSym) -> BandedSym {
    let n = m.dim();
    let mut out = BandedSym::zeros(n, 0);
    let ones = vec![1.0; n];
    for (i, v) in m.matvec(&ones).into_iter().enumerate() {
        out.add(i, i, v);
    }
    out
}

/// Largest `x^T L x / x^T M x` with L the lumped mass, by inertia bisection on
/// the smallest eigenvalue of (M, L).
pub fn lumped_mass_ratio(m: &BandedSym) -> Result<f64> {
    let l = lumped(m);
    let (mut lo, mut hi) = (0.0f64, 1.0 + 1e-12);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if count_below(m, &l, mid)? > 0 {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(1.0 / lo)
}

/// Least-squares line through (x, y): (slope, intercept).
pub fn least_squares_line(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Solves a small dense linear system, returning `None` when singular.
pub fn dense_solve(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    a.clone().lu().solve(b)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> (BandedSym, BandedSym) {
        let mut k = BandedSym::zeros(n, 1);
        let mut m = BandedSym::zeros(n, 1);
        for i in 0..n {
            k.add(i, i, 2.0 + 1e-3);
            m.add(i, i, 1.0);
            if i + 1 < n {
                k.add(i + 1, i, -1.0);
            }
        }
        (k, m)
    }

    #[test]
    fn fractional_quad_matches_dense() {
        let (k, m) = laplace_1d(40);
        let (vals, vecs) = dense_generalized_eigen(&k.to_dense(), &m.to_dense()).unwrap();
        let x: Vec<f64> = (0..40).map(|i| ((i * i) as f64 * 0.37).sin()).collect();
        let c = vecs.transpose() * m.to_dense() * DVector::from_column_slice(&x);
        let exact: f64 = c.iter().zip(&vals).map(|(ci, l)| l.sqrt() * ci * ci).sum();
        let got = fractional_quad(&k, &m, &[x], 0.5, vals[0]).unwrap()[0];
        assert!((got - exact).abs() < 1e-10 * exact, "{got} vs {exact}");
    }

    #[test]
    fn fractional_gram_is_symmetric() {
        let (k, m) = laplace_1d(30);
        let xs: Vec<Vec<f64>> = (0..3).map(|j| (0..30).map(|i| ((i + 7 * j) as f64 * 0.3).cos()).collect()).collect();
        let g = fractional_gram(&k, &m, &xs, &xs, 0.5, 1e-3).unwrap();
        let q = fractional_quad(&k, &m, &xs, 0.5, 1e-3).unwrap();
        for i in 0..3 {
            assert!((g[(i, i)] - q[i]).abs() < 1e-12 * q[i]);
            for j in 0..3 {
                assert!((g[(i, j)] - g[(j, i)]).abs() < 1e-10 * q[i].max(q[j]));
            }
        }
    }

    #[test]
    fn lumped_ratio_p1() {
        // uniform P1 mass: (h/6) tridiag(1, 4, 1), lumped h; ratio tends to 3
        let n = 200;
        let mut m = BandedSym::zeros(n, 1);
        for e in 0..n - 1 {
            m.add(e, e, 2.0 / 6.0);
            m.add(e + 1, e + 1, 2.0 / 6.0);
            m.add(e + 1, e, 1.0 / 6.0);
        }
        let r = lumped_mass_ratio(&m).unwrap();
        assert!(r > 2.9 && r <= 3.0 + 1e-9, "{r}");
    }

    #[test]
    fn banded_cholesky_solves() {
        let (k, _) = laplace_1d(50);
        let x: Vec<f64> = (0..50).map(|i| (i as f64 * 0.3).sin()).collect();
        let b = k.matvec(&x);
        let y = k.cholesky().unwrap().solve(&b);
        for (a, b) in x.iter().zip(&y) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn subspace_matches_dense() {
        let (k, m) = laplace_1d(400);
        let dense = lowest_dense(&k, &m, 6).unwrap();
        let f = k.cholesky().unwrap();
        let it = lowest_subspace(&k, &f, &m, 6, 1e-10, 500, 7).unwrap();
        for (a, b) in dense.values.iter().zip(&it.values) {
            assert!((a - b).abs() < 1e-9 * a.abs().max(1.0), "{a} vs {b}");
        }
        assert!(it.residuals.iter().all(|&r| r < 1e-9));
    }

    #[test]
    fn inertia_counts_eigenvalues() {
        let (k, m) = laplace_1d(120);
        let all = lowest_dense(&k, &m, 120).unwrap();
        for shift in [0.01, 0.5, 1.7, 3.0] {
            let expected = all.values.iter().filter(|&&v| v < shift).count();
            assert_eq!(count_below(&k, &m, shift).unwrap(), expected);
        }
    }

    #[test]
    fn non_positive_rejected() {
        let mut k = BandedSym::zeros(3, 1);
        k.add(0, 0, 1.0);
        k.add(1, 1, -1.0);
        k.add(2, 2, 1.0);
        assert!(matches!(k.cholesky(), Err(LabError::NotPositiveDefinite(1))));
    }
}
