//! Channel profiles r(x), cross-section measure g(x), and the mapped reference grid.
//!
//! The thin channel is `{(x, y): 0 <= x <= 1, |y| < eps r(x)}`. Fields live on the
//! reference rectangle `[0,1] x [-1,1]` through `y = r(x) z` (after the `eps` rescaling).

use serde::{Deserialize, Serialize};

use crate::error::{pre, LabError, Result};
use crate::linalg::gauss_legendre;

/// First positive zero of J1', which sets the second Neumann eigenvalue of the unit disk.
const DISK_NEUMANN_ZERO: f64 = 1.841_183_781_340_659_3;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ProfileKind {
    /// r(x) = r0
    Constant { r0: f64 },
    /// r(x) = base + amp sin(pi x)
    Sine { base: f64, amp: f64 },
    /// r(x) = sum_k coeffs[k] x^k
    Polynomial { coeffs: Vec<f64> },
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChannelProfile {
    pub d: usize,
    pub kind: ProfileKind,
    pub omega: f64,
    pub r_min: f64,
    pub r_max: f64,
}

/// Volume of the unit ball in R^n.
pub fn unit_ball_volume(n: usize) -> f64 {
    match n {
        0 => 1.0,
        1 => 2.0,
        _ => 2.0 * std::f64::consts::PI / n as f64 * unit_ball_volume(n - 2),
    }
}

pub fn build_profile(kind: &str, params: &[f64], d: usize) -> Result<ChannelProfile> {
    let kind = match kind {
        "constant" => {
            pre(params.len() == 1, || "constant profile takes [r0]".into())?;
            ProfileKind::Constant { r0: params[0] }
        }
        "sine" => {
            pre(params.len() == 2, || "sine profile takes [base, amp]".into())?;
            ProfileKind::Sine { base: params[0], amp: params[1] }
        }
        "polynomial" => {
            pre(!params.is_empty(), || "polynomial profile needs coefficients".into())?;
            ProfileKind::Polynomial { coeffs: params.to_vec() }
        }
        other => return Err(LabError::InvalidProfile(format!("unknown profile kind '{other}'"))),
    };
    ChannelProfile::new(kind, d)
}

impl ChannelProfile {
    pub fn new(kind: ProfileKind, d: usize) -> Result<Self> {
        if d < 2 {
            return Err(LabError::InvalidProfile(format!("dimension d = {d} < 2")));
        }
        let mut p = ChannelProfile { d, kind, omega: unit_ball_volume(d - 1), r_min: 0.0, r_max: 0.0 };
        let samples = 4001;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for s in 0..samples {
            let r = p.r(s as f64 / (samples - 1) as f64);
            lo = lo.min(r);
            hi = hi.max(r);
        }
        if let ProfileKind::Sine { base, amp } = p.kind {
            lo = lo.min(base + amp.min(0.0));
            hi = hi.max(base + amp.max(0.0));
        }
        if !(lo > 0.0) || !lo.is_finite() || !hi.is_finite() {
            return Err(LabError::InvalidProfile(format!("min r = {lo} <= 0: channel map not a diffeomorphism")));
        }
        p.r_min = lo;
        p.r_max = hi;
        Ok(p)
    }

    pub fn straight(r0: f64, d: usize) -> Result<Self> {
        Self::new(ProfileKind::Constant { r0 }, d)
    }

    pub fn sine(amp: f64, d: usize) -> Result<Self> {
        Self::new(ProfileKind::Sine { base: 1.0, amp }, d)
    }

    pub fn r(&self, x: f64) -> f64 {
        match &self.kind {
            ProfileKind::Constant { r0 } => *r0,
            ProfileKind::Sine { base, amp } => base + amp * (std::f64::consts::PI * x).sin(),
            ProfileKind::Polynomial { coeffs } => coeffs.iter().rev().fold(0.0, |acc, c| acc * x + c),
        }
    }

    pub fn r_prime(&self, x: f64) -> f64 {
        match &self.kind {
            ProfileKind::Constant { .. } => 0.0,
            ProfileKind::Sine { amp, .. } => {
                amp * std::f64::consts::PI * (std::f64::consts::PI * x).cos()
            }
            ProfileKind::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(1)
                .rev()
                .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c),
        }
    }

    pub fn r_second(&self, x: f64) -> f64 {
        match &self.kind {
            ProfileKind::Constant { .. } => 0.0,
            ProfileKind::Sine { amp, .. } => {
                let pi = std::f64::consts::PI;
                -amp * pi * pi * (pi * x).sin()
            }
            ProfileKind::Polynomial { coeffs } => coeffs
                .iter()
                .enumerate()
                .skip(2)
                .rev()
                .fold(0.0, |acc, (k, c)| acc * x + (k * (k - 1)) as f64 * c),
        }
    }

    pub fn is_straight(&self) -> bool {
        matches!(self.kind, ProfileKind::Constant { .. })
    }

    /// Cross-section measure g(x) = omega r(x)^(d-1).
    pub fn g(&self, x: f64) -> f64 {
        self.omega * self.r(x).powi(self.d as i32 - 1)
    }

    pub fn g_prime(&self, x: f64) -> f64 {
        let k = self.d as i32 - 1;
        self.omega * k as f64 * self.r(x).powi(k - 1) * self.r_prime(x)
    }

    /// Bounds g_0 <= g <= g_1.
    pub fn g_bounds(&self) -> (f64, f64) {
        let k = self.d as i32 - 1;
        (self.omega * self.r_min.powi(k), self.omega * self.r_max.powi(k))
    }

    /// Exponent (d-1)/2 of the norm rescaling between Q and Q_eps.
    pub fn rescale_exponent(&self) -> f64 {
        (self.d as f64 - 1.0) / 2.0
    }

    /// Factor eps^((d-1)/2) that converts L2/H1 norms on Q to norms on Q_eps.
    pub fn rescale_factor(&self, eps: f64) -> f64 {
        eps.powf(self.rescale_exponent())
    }

    /// Composite Gauss integral of g over [0,1] with `cells` elements.
    pub fn integral_g(&self, cells: usize) -> f64 {
        let (q, w) = gauss_legendre(3);
        let h = 1.0 / cells as f64;
        let mut s = 0.0;
        for e in 0..cells {
            for (qi, wi) in q.iter().zip(&w) {
                s += 0.5 * h * wi * self.g((e as f64 + 0.5 + 0.5 * qi) * h);
            }
        }
        s
    }
}

/// Second Neumann eigenvalue of the cross-section at x.
pub fn cross_section_poincare(profile: &ChannelProfile, x: f64) -> Result<f64> {
    pre((0.0..=1.0).contains(&x), || format!("x = {x} outside [0,1]"))?;
    let r = profile.r(x);
    match profile.d {
        2 => Ok((std::f64::consts::PI / (2.0 * r)).powi(2)),
        3 => Ok((DISK_NEUMANN_ZERO / r).powi(2)),
        d => Err(LabError::NotExecutable(d)),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoincareData {
    pub lambda2_min: f64,
    pub x_min: f64,
    pub beta: f64,
}

/// Minimum over x of the cross-section eigenvalue, located by a grid scan plus
/// golden-section refinement, and beta = 1 / min.
pub fn poincare_constant(profile: &ChannelProfile) -> Result<PoincareData> {
    let n = 2000;
    let mut best = (f64::INFINITY, 0.0);
    for s in 0..=n {
        let x = s as f64 / n as f64;
        let v = cross_section_poincare(profile, x)?;
        if v < best.0 {
            best = (v, x);
        }
    }
    let h = 1.0 / n as f64;
    let (mut a, mut b) = ((best.1 - h).max(0.0), (best.1 + h).min(1.0));
    let gr = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..80 {
        let c = b - gr * (b - a);
        let d = a + gr * (b - a);
        if cross_section_poincare(profile, c)? < cross_section_poincare(profile, d)? {
            b = d;
        } else {
            a = c;
        }
    }
    let xm = 0.5 * (a + b);
    let vm = cross_section_poincare(profile, xm)?;
    let (lambda2_min, x_min) = if vm < best.0 { (vm, xm) } else { best };
    Ok(PoincareData { lambda2_min, x_min, beta: 1.0 / lambda2_min })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeTag {
    Interior,
    /// x = 0
    Lid0,
    /// x = 1
    Lid1,
    /// z = +1 or z = -1
    Lateral { upper: bool },
}

/// Tensor grid on the reference rectangle with node index `i * nz + k`.
#[derive(Clone, Debug)]
pub struct MappedGrid {
    pub profile: ChannelProfile,
    pub nx: usize,
    pub nz: usize,
    pub xs: Vec<f64>,
    pub zs: Vec<f64>,
    /// r(x_i) at each x-node.
    pub jacobian_nodes: Vec<f64>,
    /// r at each cell midpoint in x.
    pub jacobian_cells: Vec<f64>,
}

pub fn build_mapped_grid(profile: &ChannelProfile, nx: usize, nz: usize) -> Result<MappedGrid> {
    pre(nx >= 4 && nz >= 4, || format!("grid {nx} x {nz} below the 4 x 4 minimum"))?;
    if profile.d != 2 {
        return Err(LabError::NotExecutable(profile.d));
    }
    let xs: Vec<f64> = (0..nx).map(|i| i as f64 / (nx - 1) as f64).collect();
    let zs: Vec<f64> = (0..nz).map(|k| -1.0 + 2.0 * k as f64 / (nz - 1) as f64).collect();
    let jacobian_nodes = xs.iter().map(|&x| profile.r(x)).collect();
    let jacobian_cells = xs.windows(2).map(|w| profile.r(0.5 * (w[0] + w[1]))).collect();
    Ok(MappedGrid { profile: profile.clone(), nx, nz, xs, zs, jacobian_nodes, jacobian_cells })
}

impl MappedGrid {
    pub fn len(&self) -> usize {
        self.nx * self.nz
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, i: usize, k: usize) -> usize {
        i * self.nz + k
    }

    pub fn hx(&self) -> f64 {
        1.0 / (self.nx - 1) as f64
    }

    pub fn hz(&self) -> f64 {
        2.0 / (self.nz - 1) as f64
    }

    /// Chain-rule coefficients (a, b) at node (i, k):
    /// d/dx on Q = d/dxi + a d/dz and d/dy on Q = b d/dz.
    pub fn metric(&self, i: usize, k: usize) -> (f64, f64) {
        let x = self.xs[i];
        let r = self.profile.r(x);
        (-self.zs[k] * self.profile.r_prime(x) / r, 1.0 / r)
    }

    pub fn tag(&self, i: usize, k: usize) -> NodeTag {
        if i == 0 {
            NodeTag::Lid0
        } else if i + 1 == self.nx {
            NodeTag::Lid1
        } else if k == 0 {
            NodeTag::Lateral { upper: false }
        } else if k + 1 == self.nz {
            NodeTag::Lateral { upper: true }
        } else {
            NodeTag::Interior
        }
    }

    /// Jacobian-weighted area of the reference rectangle, which equals the integral of g.
    pub fn reference_area(&self) -> f64 {
        let (q, w) = gauss_legendre(3);
        let h = self.hx();
        let mut s = 0.0;
        for e in 0..self.nx - 1 {
            for (qi, wi) in q.iter().zip(&w) {
                s += 0.5 * h * wi * self.profile.r(self.xs[e] + 0.5 * h * (1.0 + qi));
            }
        }
        2.0 * s
    }

    /// Physical coordinates (x, y) on Q_eps of node (i, k).
    pub fn physical(&self, i: usize, k: usize, eps: f64) -> (f64, f64) {
        (self.xs[i], eps * self.jacobian_nodes[i] * self.zs[k])
    }
}

/// Unit outward normal of Q_eps at a boundary node. Corner nodes report the lid normal.
pub fn outward_normal(grid: &MappedGrid, i: usize, k: usize, eps: f64) -> Result<[f64; 2]> {
    match grid.tag(i, k) {
        NodeTag::Interior => Err(LabError::InteriorNode { i, k }),
        NodeTag::Lid0 => Ok([-1.0, 0.0]),
        NodeTag::Lid1 => Ok([1.0, 0.0]),
        NodeTag::Lateral { .. } => {
            let x = grid.xs[i];
            let r = grid.profile.r(x);
            let rp = grid.profile.r_prime(x);
            let y = r * grid.zs[k];
            let s = (eps * eps * rp * rp + 1.0).sqrt();
            Ok([-eps * r * rp / (r * s), y / (r * s)])
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn profile_examples() {
        let p = build_profile("constant", &[1.0], 2).unwrap();
        assert_eq!(p.g(0.3), 2.0);
        let p = build_profile("sine", &[1.0, 0.3], 2).unwrap();
        assert!((p.g(0.0) - 2.0).abs() < 1e-15);
        assert!((p.g(0.5) - 2.6).abs() < 1e-15);
        let p = build_profile("constant", &[1.0], 3).unwrap();
        assert!((p.g(0.7) - PI).abs() < 1e-15);
        assert!(build_profile("sine", &[0.2, -0.5], 2).is_err());
        assert!(build_profile("polynomial", &[1.0, -2.0], 2).is_err());
    }

    #[test]
    fn polynomial_derivatives() {
        let p = build_profile("polynomial", &[1.0, 0.5, -0.25, 0.1], 2).unwrap();
        let x: f64 = 0.37;
        let h = 1e-5;
        let fd = (p.r(x + h) - p.r(x - h)) / (2.0 * h);
        assert!((fd - p.r_prime(x)).abs() < 1e-9);
        let fd2 = (p.r_prime(x + h) - p.r_prime(x - h)) / (2.0 * h);
        assert!((fd2 - p.r_second(x)).abs() < 1e-9);
    }

    #[test]
    fn grid_examples() {
        let p = ChannelProfile::straight(1.0, 2).unwrap();
        let g = build_mapped_grid(&p, 8, 8).unwrap();
        for i in 0..8 {
            assert_eq!(g.jacobian_nodes[i], 1.0);
            for k in 0..8 {
                assert_eq!(g.metric(i, k).0, 0.0);
            }
        }
        let p = ChannelProfile::sine(0.3, 2).unwrap();
        let g = build_mapped_grid(&p, 64, 8).unwrap();
        assert!((g.reference_area() / p.omega - (1.0 + 0.6 / PI)).abs() < 1e-6);
        assert!(build_mapped_grid(&p, 2, 8).is_err());
    }

    #[test]
    fn area_converges_at_least_second_order() {
        let p = ChannelProfile::sine(0.3, 2).unwrap();
        let exact = 2.0 * (1.0 + 0.6 / PI);
        let e1 = (build_mapped_grid(&p, 4, 4).unwrap().reference_area() - exact).abs();
        let e2 = (build_mapped_grid(&p, 7, 7).unwrap().reference_area() - exact).abs();
        let order = (e1 / e2).log2();
        assert!(order >= 1.9, "order {order}");
    }

    #[test]
    fn poincare_examples() {
        let p = ChannelProfile::straight(1.0, 2).unwrap();
        assert!((cross_section_poincare(&p, 0.3).unwrap() - (PI / 2.0).powi(2)).abs() < 1e-14);
        let p = ChannelProfile::sine(0.3, 2).unwrap();
        assert!((cross_section_poincare(&p, 0.5).unwrap() - (PI / 2.6).powi(2)).abs() < 1e-14);
        let data = poincare_constant(&p).unwrap();
        assert!((data.lambda2_min - (PI / 2.6).powi(2)).abs() < 1e-12);
        assert!((data.x_min - 0.5).abs() < 1e-6);
        assert_eq!(data.beta, 1.0 / data.lambda2_min);
    }

    #[test]
    fn normals() {
        let p = ChannelProfile::straight(1.0, 2).unwrap();
        let g = build_mapped_grid(&p, 8, 8).unwrap();
        assert_eq!(outward_normal(&g, 0, 3, 0.1).unwrap(), [-1.0, 0.0]);
        assert_eq!(outward_normal(&g, 7, 3, 0.1).unwrap(), [1.0, 0.0]);
        let n = outward_normal(&g, 3, 7, 0.1).unwrap();
        assert!((n[0]).abs() < 1e-15 && (n[1] - 1.0).abs() < 1e-15);
        assert!(outward_normal(&g, 3, 3, 0.1).is_err());

        let p = ChannelProfile::sine(0.3, 2).unwrap();
        let g = build_mapped_grid(&p, 9, 8).unwrap();
        let eps = 0.1;
        let x = g.xs[2];
        assert!((x - 0.25).abs() < 1e-15);
        let n = outward_normal(&g, 2, 7, eps).unwrap();
        let rp = p.r_prime(x);
        let s = (eps * eps * rp * rp + 1.0).sqrt();
        assert!((n[0] - (-eps * rp / s)).abs() < 1e-12);
        assert!((n[1] - 1.0 / s).abs() < 1e-12);
        assert!(((n[0] * n[0] + n[1] * n[1]).sqrt() - 1.0).abs() < 1e-12);
    }
}
