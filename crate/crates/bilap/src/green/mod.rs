//! Green function of the Navier bi-Laplacian (Lap^2 G = 64 pi^2 delta_x with
//! G = Lap G = 0 on the boundary), its Robin (regular) part, and the Dirichlet
//! Laplace Green function that feeds the cascade Lap G = -64 pi^2 g_lap.
//!
//! On balls and annuli everything reduces to zonal series around the domain
//! center: with t = |x-c|/R, s = |y-c|/R and u the cosine of the angle
//! between the two rays,
//!
//! ```text
//!   G(x, y) = -8 ln|x-y| + R(x, y),
//!   R(x, y) = 8 ln R - 2 + 2t^2 + 2s^2
//!           - sum_{l>=1} 4 (ts)^l U_l(u) [ 1/l + (1 - t^2 - s^2)/(l+2) ]
//! ```
//!
//! for the ball (U_l are Chebyshev polynomials of the second kind), which is
//! manifestly symmetric in (t, s), exactly bi-harmonic term by term, and
//! reproduces the radial special case G(0, y) = -8 ln|y| + 2|y|^2 - 2 on the
//! unit ball. The Laplacian of the regular part collapses to the closed form
//! 16 / (R^2 (1 - 2tsu + t^2 s^2)). Annuli solve a 4x4 system per degree for
//! the coefficients of {r^l, r^{l+2}, r^{-l}, r^{-l-2}} (with a log at l = 0).

pub mod interaction;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

pub use interaction::{PotentialModel, SmoothAtom, WReport};

/// Flux normalization: int Lap^2 G = 64 pi^2.
pub fn flux_constant() -> f64 {
    64.0 * std::f64::consts::PI.powi(2)
}

pub fn sub4(a: [f64; 4], b: [f64; 4]) -> [f64; 4] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2], a[3] - b[3]]
}

pub fn dot4(a: [f64; 4], b: [f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

pub fn norm4(a: [f64; 4]) -> f64 {
    dot4(a, a).sqrt()
}

pub fn dist4(a: [f64; 4], b: [f64; 4]) -> f64 {
    norm4(sub4(a, b))
}

/// Tabulated Green data for domains without a built-in solver: rows of
/// (x, y, G) samples with nearest-neighbor lookup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabulatedGreen {
    pub domain_hash: String,
    pub points: Vec<([f64; 4], [f64; 4], f64)>,
    /// Largest lookup distance accepted before an error is raised.
    pub max_lookup_distance: f64,
}

impl TabulatedGreen {
    pub fn lookup(&self, x: [f64; 4], y: [f64; 4]) -> Result<f64> {
        let mut best = f64::INFINITY;
        let mut val = 0.0;
        for (px, py, g) in &self.points {
            let d = dist4(*px, x) + dist4(*py, y);
            if d < best {
                best = d;
                val = *g;
            }
        }
        if best > self.max_lookup_distance {
            return Err(Error::TabulatedData(format!(
                "nearest tabulated sample is {best:.3e} away (limit {:.3e})",
                self.max_lookup_distance
            )));
        }
        Ok(val)
    }
}

/// Supported domains. `r0` is the interface radius used by cutoffs; it must
/// stay below half the minimal pairwise distance of any configuration used.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum DomainModel {
    Ball {
        radius: f64,
        center: [f64; 4],
        r0: f64,
    },
    Annulus {
        r_inner: f64,
        r_outer: f64,
        center: [f64; 4],
        r0: f64,
    },
    Tabulated {
        data: TabulatedGreen,
        r0: f64,
    },
}

impl DomainModel {
    pub fn unit_ball() -> Self {
        DomainModel::Ball {
            radius: 1.0,
            center: [0.0; 4],
            r0: 0.5,
        }
    }

    pub fn ball(radius: f64) -> Self {
        assert!(radius > 0.0);
        DomainModel::Ball {
            radius,
            center: [0.0; 4],
            r0: 0.5 * radius,
        }
    }

    pub fn r0(&self) -> f64 {
        match self {
            DomainModel::Ball { r0, .. }
            | DomainModel::Annulus { r0, .. }
            | DomainModel::Tabulated { r0, .. } => *r0,
        }
    }

    pub fn set_r0(&mut self, new_r0: f64) {
        match self {
            DomainModel::Ball { r0, .. }
            | DomainModel::Annulus { r0, .. }
            | DomainModel::Tabulated { r0, .. } => *r0 = new_r0,
        }
    }

    pub fn center(&self) -> [f64; 4] {
        match self {
            DomainModel::Ball { center, .. } | DomainModel::Annulus { center, .. } => *center,
            DomainModel::Tabulated { .. } => [0.0; 4],
        }
    }

    pub fn contains(&self, x: [f64; 4]) -> bool {
        match self {
            DomainModel::Ball { radius, center, .. } => dist4(x, *center) < *radius,
            DomainModel::Annulus {
                r_inner,
                r_outer,
                center,
                ..
            } => {
                let r = dist4(x, *center);
                *r_inner < r && r < *r_outer
            }
            DomainModel::Tabulated { .. } => true,
        }
    }

    pub fn boundary_distance(&self, x: [f64; 4]) -> f64 {
        match self {
            DomainModel::Ball { radius, center, .. } => radius - dist4(x, *center),
            DomainModel::Annulus {
                r_inner,
                r_outer,
                center,
                ..
            } => {
                let r = dist4(x, *center);
                (r_outer - r).min(r - r_inner)
            }
            DomainModel::Tabulated { .. } => f64::INFINITY,
        }
    }

    pub fn diameter(&self) -> f64 {
        match self {
            DomainModel::Ball { radius, .. } => 2.0 * radius,
            DomainModel::Annulus { r_outer, .. } => 2.0 * r_outer,
            DomainModel::Tabulated { .. } => 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            DomainModel::Ball { radius, r0, .. } => *radius > 0.0 && *r0 > 0.0 && r0 < radius,
            DomainModel::Annulus {
                r_inner,
                r_outer,
                r0,
                ..
            } => {
                0.0 < *r_inner && r_inner < r_outer && *r0 > 0.0 && *r0 < (r_outer - r_inner) / 2.0
            }
            DomainModel::Tabulated { .. } => true,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig("invalid domain geometry".into()))
        }
    }
}

/// Robin value with the Richardson-extrapolation consistency report.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RobinReport {
    pub value: f64,
    /// Value extracted from G(x, y) + 8 ln|x-y| along shrinking offsets.
    pub extrapolated: f64,
    pub error_estimate: f64,
}

/// Green-function evaluators for one domain.
#[derive(Debug, Clone)]
pub struct GreenModel {
    pub domain: DomainModel,
    /// Relative tolerance of the zonal series.
    pub series_tol: f64,
    pub max_terms: usize,
}

impl GreenModel {
    pub fn new(domain: DomainModel) -> Result<Self> {
        domain.validate()?;
        Ok(Self {
            domain,
            series_tol: 1e-13,
            max_terms: 6000,
        })
    }

    fn check_pair(&self, x: [f64; 4], y: [f64; 4]) -> Result<()> {
        if !self.domain.contains(x) || !self.domain.contains(y) {
            return Err(Error::PointNotInterior);
        }
        if dist4(x, y) < 1e-14 * self.domain.diameter() {
            return Err(Error::CoincidentPoints);
        }
        Ok(())
    }

    /// Dirichlet Green function of -Lap on the domain.
    pub fn laplace_green(&self, x: [f64; 4], y: [f64; 4]) -> Result<f64> {
        self.check_pair(x, y)?;
        match &self.domain {
            DomainModel::Ball { radius, center, .. } => {
                Ok(ball_laplace_green(*radius, *center, x, y))
            }
            DomainModel::Annulus {
                r_inner,
                r_outer,
                center,
                ..
            } => annulus_laplace_green(self, *r_inner, *r_outer, *center, x, y),
            DomainModel::Tabulated { .. } => Err(Error::UnsupportedDomain(
                "tabulated domains carry only G itself",
            )),
        }
    }

    /// Navier bi-harmonic Green function G(x, y).
    pub fn green(&self, x: [f64; 4], y: [f64; 4]) -> Result<f64> {
        match &self.domain {
            DomainModel::Tabulated { data, .. } => data.lookup(x, y),
            _ => {
                self.check_pair(x, y)?;
                Ok(-8.0 * dist4(x, y).ln() + self.regular_part_inner(x, y)?)
            }
        }
    }

    /// Regular part R(x, y) = G(x, y) + 8 ln|x-y|.
    pub fn regular_part(&self, x: [f64; 4], y: [f64; 4]) -> Result<f64> {
        match &self.domain {
            DomainModel::Tabulated { data, .. } => {
                Ok(data.lookup(x, y)? + 8.0 * dist4(x, y).ln())
            }
            _ => {
                if !self.domain.contains(x) || !self.domain.contains(y) {
                    return Err(Error::PointNotInterior);
                }
                self.regular_part_inner(x, y)
            }
        }
    }

    fn regular_part_inner(&self, x: [f64; 4], y: [f64; 4]) -> Result<f64> {
        match &self.domain {
            DomainModel::Ball { radius, center, .. } => Ok(ball_regular_part(
                *radius,
                *center,
                x,
                y,
                self.series_tol,
                self.max_terms,
            )),
            DomainModel::Annulus {
                r_inner,
                r_outer,
                center,
                ..
            } => annulus_regular_part(self, *r_inner, *r_outer, *center, x, y),
            DomainModel::Tabulated { .. } => unreachable!(),
        }
    }

    /// Gradient of G in the second argument.
    pub fn green_gradient_y(&self, x: [f64; 4], y: [f64; 4]) -> Result<[f64; 4]> {
        self.check_pair(x, y)?;
        let d = sub4(y, x);
        let dd = dot4(d, d);
        let mut grad = [0.0; 4];
        for i in 0..4 {
            grad[i] = -8.0 * d[i] / dd;
        }
        let reg = self.regular_part_gradient_y(x, y)?;
        for i in 0..4 {
            grad[i] += reg[i];
        }
        Ok(grad)
    }

    /// Gradient of the regular part in the second argument.
    pub fn regular_part_gradient_y(&self, x: [f64; 4], y: [f64; 4]) -> Result<[f64; 4]> {
        match &self.domain {
            DomainModel::Ball { radius, center, .. } => Ok(ball_regular_gradient(
                *radius,
                *center,
                x,
                y,
                self.series_tol,
                self.max_terms,
            )),
            DomainModel::Annulus {
                r_inner,
                r_outer,
                center,
                ..
            } => annulus_regular_gradient(self, *r_inner, *r_outer, *center, x, y),
            DomainModel::Tabulated { .. } => Err(Error::UnsupportedDomain(
                "tabulated domains carry only G itself",
            )),
        }
    }

    /// Lap_y G(x, y); by the cascade this equals -64 pi^2 g_lap(x, y).
    pub fn green_laplacian_y(&self, x: [f64; 4], y: [f64; 4]) -> Result<f64> {
        Ok(-flux_constant() * self.laplace_green(x, y)?)
    }

    /// Lap_y of the regular part: Lap G + 16/|x-y|^2.
    pub fn regular_part_laplacian_y(&self, x: [f64; 4], y: [f64; 4]) -> Result<f64> {
        let d2 = dist4(x, y).powi(2);
        Ok(self.green_laplacian_y(x, y)? + 16.0 / d2)
    }

    /// Gradient in y of Lap_y G.
    pub fn green_laplacian_gradient_y(&self, x: [f64; 4], y: [f64; 4]) -> Result<[f64; 4]> {
        self.check_pair(x, y)?;
        match &self.domain {
            DomainModel::Ball { radius, center, .. } => {
                Ok(ball_laplace_green_gradient(*radius, *center, x, y)
                    .map(|g| g * -flux_constant()))
            }
            DomainModel::Annulus {
                r_inner,
                r_outer,
                center,
                ..
            } => {
                let g = annulus_laplace_green_gradient(self, *r_inner, *r_outer, *center, x, y)?;
                Ok(g.map(|v| v * -flux_constant()))
            }
            DomainModel::Tabulated { .. } => Err(Error::UnsupportedDomain(
                "tabulated domains carry only G itself",
            )),
        }
    }

    /// Robin function R(x, x).
    ///
    /// For ball and annulus domains the value is the converged regular-part
    /// series on the diagonal; the Richardson extraction of
    /// G(x, y) + 8 ln|x-y| along offsets h, h/2, h/4 is run as a consistency
    /// check and its spread reported. Tabulated domains only have the
    /// extraction path (two directions cross-checked).
    pub fn robin(&self, x: [f64; 4]) -> Result<RobinReport> {
        if !self.domain.contains(x) {
            return Err(Error::PointNotInterior);
        }
        let extrapolated = self.robin_extracted(x, [1.0, 0.0, 0.0, 0.0])?;
        match &self.domain {
            DomainModel::Tabulated { .. } => {
                let along = self.robin_extracted(x, [0.0, 1.0, 0.0, 0.0])?;
                Ok(RobinReport {
                    value: extrapolated,
                    extrapolated: along,
                    error_estimate: (extrapolated - along).abs(),
                })
            }
            _ => {
                let value = self.regular_part_inner(x, x)?;
                let err = (value - extrapolated).abs();
                let h = 1e-2 * self.domain.boundary_distance(x).max(1e-12);
                // third-order extraction residual plus series tolerance
                let budget = 1e3 * h.powi(3) + 1e3 * self.series_tol * value.abs().max(1.0);
                if err > budget {
                    return Err(Error::RobinExtrapolation { spread: err });
                }
                Ok(RobinReport {
                    value,
                    extrapolated,
                    error_estimate: err,
                })
            }
        }
    }

    fn robin_extracted(&self, x: [f64; 4], dir: [f64; 4]) -> Result<f64> {
        let h0 = 1e-2 * self.domain.boundary_distance(x).max(1e-12);
        let f = |h: f64| -> Result<f64> {
            let y = [
                x[0] + h * dir[0],
                x[1] + h * dir[1],
                x[2] + h * dir[2],
                x[3] + h * dir[3],
            ];
            Ok(self.green(x, y)? + 8.0 * h.ln())
        };
        let f1 = f(h0)?;
        let f2 = f(h0 / 2.0)?;
        let f3 = f(h0 / 4.0)?;
        // eliminate the h and h^2 error terms
        Ok(f3 * 8.0 / 3.0 - 2.0 * f2 + f1 / 3.0)
    }
}

/// Dirichlet Laplace Green function on a ball by the image formula:
/// g = (1/4 pi^2) (|x-y|^{-2} - A^{-2}) with A^2 = |x|^2|y|^2/R^2 + R^2 - 2 x.y
/// in coordinates centered at the ball center.
fn ball_laplace_green(radius: f64, center: [f64; 4], x: [f64; 4], y: [f64; 4]) -> f64 {
    let p = sub4(x, center);
    let q = sub4(y, center);
    let d2 = dot4(sub4(p, q), sub4(p, q));
    let a2 = dot4(p, p) * dot4(q, q) / (radius * radius) + radius * radius - 2.0 * dot4(p, q);
    (1.0 / d2 - 1.0 / a2) / (4.0 * std::f64::consts::PI.powi(2))
}

/// Gradient in y of the ball Laplace Green function.
fn ball_laplace_green_gradient(
    radius: f64,
    center: [f64; 4],
    x: [f64; 4],
    y: [f64; 4],
) -> [f64; 4] {
    let p = sub4(x, center);
    let q = sub4(y, center);
    let d = sub4(q, p);
    let d2 = dot4(d, d);
    let a2 = dot4(p, p) * dot4(q, q) / (radius * radius) + radius * radius - 2.0 * dot4(p, q);
    let pp = dot4(p, p);
    let mut grad = [0.0; 4];
    let c = 1.0 / (4.0 * std::f64::consts::PI.powi(2));
    for i in 0..4 {
        let da2 = 2.0 * pp * q[i] / (radius * radius) - 2.0 * p[i];
        grad[i] = c * (-2.0 * d[i] / (d2 * d2) + da2 / (a2 * a2));
    }
    grad
}

/// Geometry shared by the zonal series: radii ratios and the angle cosine.
struct Zonal {
    t: f64,
    s: f64,
    u: f64,
    p_hat: [f64; 4],
    q_hat: [f64; 4],
}

fn zonal_setup(radius: f64, center: [f64; 4], x: [f64; 4], y: [f64; 4]) -> Zonal {
    let p = sub4(x, center);
    let q = sub4(y, center);
    let r1 = norm4(p);
    let r2 = norm4(q);
    let t = r1 / radius;
    let s = r2 / radius;
    let (u, p_hat, q_hat) = if r1 > 0.0 && r2 > 0.0 {
        let ph = p.map(|v| v / r1);
        let qh = q.map(|v| v / r2);
        (dot4(ph, qh).clamp(-1.0, 1.0), ph, qh)
    } else {
        (0.0, [0.0; 4], [0.0; 4])
    };
    Zonal { t, s, u, p_hat, q_hat }
}

/// Regular part of the ball Green function by the zonal series.
fn ball_regular_part(
    radius: f64,
    center: [f64; 4],
    x: [f64; 4],
    y: [f64; 4],
    tol: f64,
    max_terms: usize,
) -> f64 {
    let z = zonal_setup(radius, center, x, y);
    let (t, s, u) = (z.t, z.s, z.u);
    let mut acc = 8.0 * radius.ln() - 2.0 + 2.0 * t * t + 2.0 * s * s;
    let q = t * s;
    if q == 0.0 {
        return acc;
    }
    let c = 1.0 - t * t - s * s;
    let mut u_prev = 1.0; // U_0
    let mut u_cur = 2.0 * u; // U_1
    let mut qpow = q;
    let mut l = 1usize;
    loop {
        let lf = l as f64;
        let coef = -4.0 * qpow * (1.0 / lf + c / (lf + 2.0));
        acc += coef * u_cur;
        // tail bound: |U_l| <= l+1 and coefficients decay geometrically
        let bound = 16.0 * qpow * q * (lf + 2.0) / lf / (1.0 - q).max(1e-16);
        if bound < tol * acc.abs().max(1.0) || l >= max_terms {
            break;
        }
        let u_next = 2.0 * u * u_cur - u_prev;
        u_prev = u_cur;
        u_cur = u_next;
        qpow *= q;
        l += 1;
    }
    acc
}

/// Gradient in y of the ball regular part.
fn ball_regular_gradient(
    radius: f64,
    center: [f64; 4],
    x: [f64; 4],
    y: [f64; 4],
    tol: f64,
    max_terms: usize,
) -> [f64; 4] {
    let z = zonal_setup(radius, center, x, y);
    let (t, s, u) = (z.t, z.s, z.u);
    // d/dy (2 s^2) = 4 (y - c) / R^2 = 4 s q_hat / R
    let mut grad = [0.0; 4];
    for i in 0..4 {
        grad[i] = 4.0 * s * z.q_hat[i] / radius;
    }
    if t == 0.0 {
        return grad;
    }
    let mut ang = [0.0; 4];
    for i in 0..4 {
        ang[i] = z.p_hat[i] - u * z.q_hat[i];
    }
    let c1base = 1.0 - t * t;
    let (mut u_prev, mut u_cur) = (1.0_f64, 2.0 * u);
    let (mut du_prev, mut du_cur) = (0.0_f64, 2.0);
    let mut tpow = t; // t^l
    let mut spow = 1.0; // s^{l-1}
    let mut l = 1usize;
    let qfac = t * s;
    loop {
        let lf = l as f64;
        let c1 = 1.0 / lf + c1base / (lf + 2.0);
        let c2 = 1.0 / (lf + 2.0);
        // radial: -4 t^l [ l s^{l-1} c1 - (l+2) s^{l+1} c2 ] U_l / R
        let radial = -4.0 * tpow * (lf * spow * c1 - (lf + 2.0) * spow * s * s * c2) / radius;
        // angular: -4 t^l [ s^{l-1} c1 - s^{l+1} c2 ] U'_l / R
        let angular = -4.0 * tpow * (spow * c1 - spow * s * s * c2) * du_cur / radius;
        for i in 0..4 {
            grad[i] += radial * u_cur * z.q_hat[i] + angular * ang[i];
        }
        let bound = 64.0 * tpow * t * spow.max(qfac.powi(l as i32 - 1)) * (lf + 2.0).powi(2)
            / (1.0 - qfac.max(s * 0.0)).max(1e-16)
            / radius
            * s.max(t).powi(2);
        if (l > 3 && bound < tol * grad.iter().map(|g| g.abs()).sum::<f64>().max(1.0))
            || l >= max_terms
        {
            break;
        }
        let u_next = 2.0 * u * u_cur - u_prev;
        let du_next = 2.0 * u_cur + 2.0 * u * du_cur - du_prev;
        u_prev = u_cur;
        u_cur = u_next;
        du_prev = du_cur;
        du_cur = du_next;
        tpow *= t;
        spow *= s;
        l += 1;
    }
    grad
}

/// Zonal U-series coefficient of ln|x - y| at fixed radius ratio tau < 1:
/// ln|x-y| = ln r_> + sum_l coef_l U_l(u).
fn log_zonal_coefficient(l: usize, tau: f64) -> f64 {
    let lf = l as f64;
    if l == 0 {
        tau * tau / 4.0
    } else {
        -(tau.powi(l as i32) / lf - tau.powi(l as i32 + 2) / (lf + 2.0)) / 2.0
    }
}

/// Per-degree coefficients of the annulus regular part in the basis
/// {(r/Ro)^l, (r/Ro)^{l+2}, (Ri/r)^l, (Ri/r)^{l+2}} (for l = 0 the basis is
/// {1, (r/Ro)^2, ln(r/Ro), (Ri/r)^2}), solving for boundary values
/// 8 ln|x-y| and boundary Laplacians 16/|x-y|^2 on both spheres.
fn annulus_mode_coefficients(l: usize, r_inner: f64, r_outer: f64, r_x: f64) -> Result<[f64; 4]> {
    use nalgebra::{Matrix4, Vector4};
    let lf = l as f64;
    let rho = r_inner / r_outer;

    let tau_out = r_x / r_outer;
    let tau_in = r_inner / r_x;
    let (val_out, val_in, lap_out, lap_in);
    if l == 0 {
        val_out = 8.0 * (r_outer.ln() + log_zonal_coefficient(0, tau_out));
        val_in = 8.0 * (r_x.ln() + log_zonal_coefficient(0, tau_in));
        lap_out = 16.0 / (r_outer * r_outer);
        lap_in = 16.0 / (r_x * r_x);
    } else {
        val_out = 8.0 * log_zonal_coefficient(l, tau_out);
        val_in = 8.0 * log_zonal_coefficient(l, tau_in);
        lap_out = 16.0 * tau_out.powi(l as i32) / (r_outer * r_outer);
        lap_in = 16.0 * tau_in.powi(l as i32) / (r_x * r_x);
    }

    let (m, rhs);
    if l == 0 {
        // basis {1, (r/Ro)^2, ln(r/Ro), (Ri/r)^2}; Laplacians {0, 8/Ro^2, 2/r^2, 0}
        m = Matrix4::new(
            1.0, 1.0, 0.0, rho * rho,
            0.0, 8.0 / (r_outer * r_outer), 2.0 / (r_outer * r_outer), 0.0,
            1.0, rho * rho, rho.ln(), 1.0,
            0.0, 8.0 / (r_outer * r_outer), 2.0 / (r_inner * r_inner), 0.0,
        );
        rhs = Vector4::new(val_out, lap_out, val_in, lap_in);
    } else {
        // Lap[(r/Ro)^{l+2}] = 4(l+2)(r/Ro)^l / Ro^2,
        // Lap[(Ri/r)^l] = -4 l (Ri/r)^l / r^2, the other two are harmonic
        let rl = rho.powi(l as i32);
        let rl2 = rho.powi(l as i32 + 2);
        m = Matrix4::new(
            1.0, 1.0, rl, rl2,
            0.0, 4.0 * (lf + 2.0) / (r_outer * r_outer), -4.0 * lf * rl / (r_outer * r_outer), 0.0,
            rl, rl2, 1.0, 1.0,
            0.0, 4.0 * (lf + 2.0) * rl / (r_outer * r_outer), -4.0 * lf / (r_inner * r_inner), 0.0,
        );
        rhs = Vector4::new(val_out, lap_out, val_in, lap_in);
    }
    m.lu()
        .solve(&rhs)
        .map(|v| [v[0], v[1], v[2], v[3]])
        .ok_or(Error::UnsupportedDomain("singular annulus mode system"))
}

fn annulus_basis_values(l: usize, r_inner: f64, r_outer: f64, r: f64) -> [f64; 4] {
    if l == 0 {
        [
            1.0,
            (r / r_outer).powi(2),
            (r / r_outer).ln(),
            (r_inner / r).powi(2),
        ]
    } else {
        [
            (r / r_outer).powi(l as i32),
            (r / r_outer).powi(l as i32 + 2),
            (r_inner / r).powi(l as i32),
            (r_inner / r).powi(l as i32 + 2),
        ]
    }
}

fn annulus_basis_derivatives(l: usize, r_inner: f64, r_outer: f64, r: f64) -> [f64; 4] {
    let lf = l as f64;
    if l == 0 {
        [
            0.0,
            2.0 * r / (r_outer * r_outer),
            1.0 / r,
            -2.0 * r_inner * r_inner / r.powi(3),
        ]
    } else {
        [
            lf * (r / r_outer).powi(l as i32 - 1) / r_outer,
            (lf + 2.0) * (r / r_outer).powi(l as i32 + 1) / r_outer,
            -lf * (r_inner / r).powi(l as i32) / r,
            -(lf + 2.0) * (r_inner / r).powi(l as i32 + 2) / r,
        ]
    }
}

fn annulus_regular_part(
    model: &GreenModel,
    r_inner: f64,
    r_outer: f64,
    center: [f64; 4],
    x: [f64; 4],
    y: [f64; 4],
) -> Result<f64> {
    let p = sub4(x, center);
    let q = sub4(y, center);
    let r1 = norm4(p);
    let r2 = norm4(q);
    let u = (dot4(p, q) / (r1 * r2)).clamp(-1.0, 1.0);
    let decay = (r1 * r2 / (r_outer * r_outer))
        .max(r_inner * r_inner / (r1 * r2))
        .max(r_inner / r1 * r_inner / r2)
        .max(r_inner / r_outer);
    let mut acc = 0.0;
    let (mut u_prev, mut u_cur) = (1.0_f64, 2.0 * u);
    let mut l = 0usize;
    loop {
        let coefs = annulus_mode_coefficients(l, r_inner, r_outer, r1)?;
        let basis = annulus_basis_values(l, r_inner, r_outer, r2);
        let radial: f64 = coefs.iter().zip(&basis).map(|(c, b)| c * b).sum();
        let ul = if l == 0 { 1.0 } else { u_cur };
        acc += radial * ul;
        if l >= 1 {
            let u_next = 2.0 * u * u_cur - u_prev;
            u_prev = u_cur;
            u_cur = u_next;
        }
        let bound = 40.0 * decay.powi(l as i32 + 1) * (l as f64 + 2.0) / (1.0 - decay).max(1e-16);
        if (l > 2 && bound < model.series_tol * acc.abs().max(1.0)) || l >= model.max_terms {
            break;
        }
        l += 1;
    }
    Ok(acc)
}

fn annulus_regular_gradient(
    model: &GreenModel,
    r_inner: f64,
    r_outer: f64,
    center: [f64; 4],
    x: [f64; 4],
    y: [f64; 4],
) -> Result<[f64; 4]> {
    let p = sub4(x, center);
    let q = sub4(y, center);
    let r1 = norm4(p);
    let r2 = norm4(q);
    let p_hat = p.map(|v| v / r1);
    let q_hat = q.map(|v| v / r2);
    let u = dot4(p_hat, q_hat).clamp(-1.0, 1.0);
    let mut ang = [0.0; 4];
    for i in 0..4 {
        ang[i] = p_hat[i] - u * q_hat[i];
    }
    let decay = (r1 * r2 / (r_outer * r_outer))
        .max(r_inner * r_inner / (r1 * r2))
        .max(r_inner / r1 * r_inner / r2)
        .max(r_inner / r_outer);
    let mut grad = [0.0; 4];
    let (mut u_prev, mut u_cur) = (1.0_f64, 2.0 * u);
    let (mut du_prev, mut du_cur) = (0.0_f64, 2.0);
    let scale = 8.0 / (r_outer - r_inner);
    let mut l = 0usize;
    loop {
        let coefs = annulus_mode_coefficients(l, r_inner, r_outer, r1)?;
        let basis = annulus_basis_values(l, r_inner, r_outer, r2);
        let dbasis = annulus_basis_derivatives(l, r_inner, r_outer, r2);
        let radial: f64 = coefs.iter().zip(&basis).map(|(c, b)| c * b).sum();
        let dradial: f64 = coefs.iter().zip(&dbasis).map(|(c, b)| c * b).sum();
        let (ul, dul) = if l == 0 { (1.0, 0.0) } else { (u_cur, du_cur) };
        for i in 0..4 {
            grad[i] += dradial * ul * q_hat[i] + radial * dul * ang[i] / r2;
        }
        if l >= 1 {
            let u_next = 2.0 * u * u_cur - u_prev;
            let du_next = 2.0 * u_cur + 2.0 * u * du_cur - du_prev;
            u_prev = u_cur;
            u_cur = u_next;
            du_prev = du_cur;
            du_cur = du_next;
        }
        let bound =
            scale * decay.powi(l as i32 + 1) * (l as f64 + 2.0).powi(2) / (1.0 - decay).max(1e-16);
        if (l > 2 && bound < model.series_tol * 10.0) || l >= model.max_terms {
            break;
        }
        l += 1;
    }
    Ok(grad)
}

fn annulus_laplace_green(
    model: &GreenModel,
    r_inner: f64,
    r_outer: f64,
    center: [f64; 4],
    x: [f64; 4],
    y: [f64; 4],
) -> Result<f64> {
    let free = 1.0 / (4.0 * std::f64::consts::PI.powi(2) * dist4(x, y).powi(2));
    Ok(free + annulus_laplace_correction(model, r_inner, r_outer, center, x, y, false)?[0])
}

fn annulus_laplace_green_gradient(
    model: &GreenModel,
    r_inner: f64,
    r_outer: f64,
    center: [f64; 4],
    x: [f64; 4],
    y: [f64; 4],
) -> Result<[f64; 4]> {
    let d = sub4(y, x);
    let d2 = dot4(d, d);
    let c = 1.0 / (4.0 * std::f64::consts::PI.powi(2));
    let corr = annulus_laplace_correction(model, r_inner, r_outer, center, x, y, true)?;
    let mut grad = [0.0; 4];
    for i in 0..4 {
        grad[i] = -2.0 * c * d[i] / (d2 * d2) + corr[1 + i];
    }
    Ok(grad)
}

/// Harmonic correction of the annulus Laplace Green function (and optionally
/// its y-gradient): h = sum_l [a_l (r/Ro)^l + b_l (Ri/r)^{l+2}] U_l(u) with
/// h = -free on both boundary spheres. Returns [value, grad...].
fn annulus_laplace_correction(
    model: &GreenModel,
    r_inner: f64,
    r_outer: f64,
    center: [f64; 4],
    x: [f64; 4],
    y: [f64; 4],
    with_gradient: bool,
) -> Result<[f64; 5]> {
    let p = sub4(x, center);
    let q = sub4(y, center);
    let r1 = norm4(p);
    let r2 = norm4(q);
    let p_hat = p.map(|v| v / r1);
    let q_hat = q.map(|v| v / r2);
    let u = dot4(p_hat, q_hat).clamp(-1.0, 1.0);
    let mut ang = [0.0; 4];
    for i in 0..4 {
        ang[i] = p_hat[i] - u * q_hat[i];
    }
    let c4pi = 1.0 / (4.0 * std::f64::consts::PI.powi(2));
    let rho = r_inner / r_outer;
    let tau_out = r1 / r_outer;
    let tau_in = r_inner / r1;
    let decay = (r1 * r2 / (r_outer * r_outer))
        .max(r_inner * r_inner / (r1 * r2))
        .max(rho);

    let mut out = [0.0; 5];
    let (mut u_prev, mut u_cur) = (1.0_f64, 2.0 * u);
    let (mut du_prev, mut du_cur) = (0.0_f64, 2.0);
    let mut l = 0usize;
    loop {
        let lf = l as f64;
        let f_out = c4pi / (r_outer * r_outer) * tau_out.powi(l as i32);
        let f_in = c4pi / (r1 * r1) * tau_in.powi(l as i32);
        // a + b rho^{l+2} = -f_out ; a rho^l + b = -f_in
        let m12 = rho.powi(l as i32 + 2);
        let m21 = rho.powi(l as i32);
        let det = 1.0 - m12 * m21;
        let a = (-f_out + f_in * m12) / det;
        let b = (-f_in + f_out * m21) / det;

        let b1 = (r2 / r_outer).powi(l as i32);
        let b2 = (r_inner / r2).powi(l as i32 + 2);
        let radial = a * b1 + b * b2;
        let (ul, dul) = if l == 0 { (1.0, 0.0) } else { (u_cur, du_cur) };
        out[0] += radial * ul;
        if with_gradient {
            let db1 = lf * (r2 / r_outer).powi(l as i32 - 1) / r_outer;
            let db2 = -(lf + 2.0) * (r_inner / r2).powi(l as i32 + 2) / r2;
            let dradial = a * db1 + b * db2;
            for i in 0..4 {
                out[1 + i] += dradial * ul * q_hat[i] + radial * dul * ang[i] / r2;
            }
        }
        if l >= 1 {
            let u_next = 2.0 * u * u_cur - u_prev;
            let du_next = 2.0 * u_cur + 2.0 * u * du_cur - du_prev;
            u_prev = u_cur;
            u_cur = u_next;
            du_prev = du_cur;
            du_cur = du_next;
        }
        let scale = c4pi / (r_inner * r_inner);
        let bound =
            8.0 * scale * decay.powi(l as i32 + 1) * (lf + 2.0).powi(2) / (1.0 - decay).max(1e-16);
        if (l > 2 && bound < model.series_tol * scale) || l >= model.max_terms {
            break;
        }
        l += 1;
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn unit_ball_model() -> GreenModel {
        GreenModel::new(DomainModel::unit_ball()).unwrap()
    }

    #[test]
    fn laplace_green_oracle_at_origin() {
        let m = unit_ball_model();
        for r in [0.2_f64, 0.5, 0.9] {
            let y = [r, 0.0, 0.0, 0.0];
            let expect = (1.0 / (r * r) - 1.0) / (4.0 * std::f64::consts::PI.powi(2));
            assert_abs_diff_eq!(m.laplace_green([0.0; 4], y).unwrap(), expect, epsilon = 1e-14);
        }
    }

    #[test]
    fn laplace_green_symmetry_and_boundary() {
        let m = unit_ball_model();
        let x = [0.3, -0.2, 0.1, 0.4];
        let y = [-0.1, 0.5, 0.2, -0.3];
        assert_abs_diff_eq!(
            m.laplace_green(x, y).unwrap(),
            m.laplace_green(y, x).unwrap(),
            epsilon = 1e-12
        );
        let yb = [0.999999, 0.0, 0.0, 0.0];
        assert!(m.laplace_green(x, yb).unwrap().abs() < 1e-5);
    }

    #[test]
    fn green_oracle_at_origin_unit_ball() {
        let m = unit_ball_model();
        for r in [0.05_f64, 0.3, 0.7, 0.95] {
            let y = [0.0, r, 0.0, 0.0];
            let expect = -8.0 * r.ln() + 2.0 * r * r - 2.0;
            assert_abs_diff_eq!(m.green([0.0; 4], y).unwrap(), expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn green_oracle_centered_radius_r() {
        for radius in [0.5_f64, 2.0] {
            let m = GreenModel::new(DomainModel::ball(radius)).unwrap();
            for frac in [0.2, 0.6] {
                let r = frac * radius;
                let y = [r, 0.0, 0.0, 0.0];
                let expect =
                    -8.0 * r.ln() + 2.0 * r * r / (radius * radius) + 8.0 * radius.ln() - 2.0;
                assert_abs_diff_eq!(m.green([0.0; 4], y).unwrap(), expect, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn green_symmetry_generic_points() {
        let m = unit_ball_model();
        let x = [0.31, -0.22, 0.11, 0.40];
        let y = [-0.12, 0.52, 0.23, -0.31];
        assert_abs_diff_eq!(m.green(x, y).unwrap(), m.green(y, x).unwrap(), epsilon = 1e-10);
    }

    #[test]
    fn green_vanishes_on_boundary_with_laplacian() {
        let m = unit_ball_model();
        let x = [0.3, 0.1, -0.2, 0.0];
        let dir = [0.6_f64, -0.64, 0.36, 0.32];
        let n = norm4(dir);
        let yb = dir.map(|v| v / n * 0.9999999);
        assert!(m.green(x, yb).unwrap().abs() < 1e-5);
        assert!(m.green_laplacian_y(x, yb).unwrap().abs() < 1e-3);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let m = unit_ball_model();
        let x = [0.25, -0.1, 0.05, 0.3];
        let y = [-0.2, 0.35, 0.15, -0.05];
        let h = 1e-6;
        let g = m.green_gradient_y(x, y).unwrap();
        let gl = m.green_laplacian_gradient_y(x, y).unwrap();
        for i in 0..4 {
            let mut yp = y;
            let mut ym = y;
            yp[i] += h;
            ym[i] -= h;
            let fd = (m.green(x, yp).unwrap() - m.green(x, ym).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-6);
            let fd2 = (m.green_laplacian_y(x, yp).unwrap()
                - m.green_laplacian_y(x, ym).unwrap())
                / (2.0 * h);
            assert_abs_diff_eq!(gl[i], fd2, epsilon = 2e-4 * gl[i].abs().max(1.0));
        }
    }

    #[test]
    fn regular_part_laplacian_matches_closed_form() {
        // Lap_y R = 16 / A^2 on the unit ball
        let m = unit_ball_model();
        let x = [0.3, 0.2, -0.1, 0.15];
        let y = [-0.25, 0.1, 0.3, 0.05];
        let a2 = dot4(x, x) * dot4(y, y) + 1.0 - 2.0 * dot4(x, y);
        assert_abs_diff_eq!(
            m.regular_part_laplacian_y(x, y).unwrap(),
            16.0 / a2,
            epsilon = 1e-10
        );
    }

    #[test]
    fn robin_values_on_balls() {
        let m = unit_ball_model();
        let r = m.robin([0.0; 4]).unwrap();
        assert_abs_diff_eq!(r.value, -2.0, epsilon = 1e-10);
        assert!(r.error_estimate < 1e-6);
        for radius in [0.5_f64, 2.0] {
            let m = GreenModel::new(DomainModel::ball(radius)).unwrap();
            let r = m.robin([0.0; 4]).unwrap();
            assert_abs_diff_eq!(r.value, 8.0 * radius.ln() - 2.0, epsilon = 1e-10);
        }
        let m = unit_ball_model();
        let r = m.robin([0.4, 0.1, -0.2, 0.0]).unwrap();
        assert!(r.error_estimate < 1e-7, "estimate {}", r.error_estimate);
        assert_abs_diff_eq!(r.value, r.extrapolated, epsilon = 1e-6);
    }

    #[test]
    fn robin_scaling_difference() {
        let m1 = unit_ball_model();
        let m2 = GreenModel::new(DomainModel::ball(2.0)).unwrap();
        let d = m2.robin([0.0; 4]).unwrap().value - m1.robin([0.0; 4]).unwrap().value;
        assert_abs_diff_eq!(d, 8.0 * 2.0_f64.ln(), epsilon = 1e-8);
    }

    fn annulus_model() -> GreenModel {
        GreenModel::new(DomainModel::Annulus {
            r_inner: 0.3,
            r_outer: 1.0,
            center: [0.0; 4],
            r0: 0.12,
        })
        .unwrap()
    }

    #[test]
    fn annulus_laplace_green_properties() {
        let m = annulus_model();
        let x = [0.6, 0.1, 0.0, -0.1];
        let y = [-0.2, 0.55, 0.1, 0.0];
        assert_abs_diff_eq!(
            m.laplace_green(x, y).unwrap(),
            m.laplace_green(y, x).unwrap(),
            epsilon = 1e-11
        );
        let dir = [0.8_f64, 0.2, -0.5, 0.27];
        let n = norm4(dir);
        let y_out = dir.map(|v| v / n * 0.9999999);
        let y_in = dir.map(|v| v / n * 0.3000001);
        assert!(m.laplace_green(x, y_out).unwrap().abs() < 1e-5);
        assert!(m.laplace_green(x, y_in).unwrap().abs() < 1e-4);
    }

    #[test]
    fn annulus_green_properties() {
        let m = annulus_model();
        let x = [0.6, 0.1, 0.0, -0.1];
        let y = [-0.2, 0.55, 0.1, 0.0];
        assert_abs_diff_eq!(m.green(x, y).unwrap(), m.green(y, x).unwrap(), epsilon = 1e-9);
        let dir = [0.1_f64, 0.9, 0.3, -0.2];
        let n = norm4(dir);
        let y_out = dir.map(|v| v / n * 0.9999999);
        let y_in = dir.map(|v| v / n * 0.3000001);
        assert!(m.green(x, y_out).unwrap().abs() < 1e-4);
        assert!(m.green(x, y_in).unwrap().abs() < 1e-4);
        assert!(m.green_laplacian_y(x, y_out).unwrap().abs() < 1e-2);
        assert!(m.green_laplacian_y(x, y_in).unwrap().abs() < 1e-1);

        let h = 1e-6;
        let g = m.green_gradient_y(x, y).unwrap();
        for i in 0..4 {
            let mut yp = y;
            let mut ym = y;
            yp[i] += h;
            ym[i] -= h;
            let fd = (m.green(x, yp).unwrap() - m.green(x, ym).unwrap()) / (2.0 * h);
            assert_abs_diff_eq!(g[i], fd, epsilon = 1e-5);
        }

        // independent check of the cascade: FD Laplacian of G in y
        let lap_g = m.green_laplacian_y(x, y).unwrap();
        let hh = 1e-3;
        let mut fd_lap = 0.0;
        for i in 0..4 {
            let mut yp = y;
            let mut ym = y;
            yp[i] += hh;
            ym[i] -= hh;
            fd_lap += (m.green(x, yp).unwrap() - 2.0 * m.green(x, y).unwrap()
                + m.green(x, ym).unwrap())
                / (hh * hh);
        }
        assert_abs_diff_eq!(lap_g / fd_lap, 1.0, epsilon = 1e-4);
    }

    #[test]
    fn annulus_robin_is_consistent() {
        let m = annulus_model();
        let r = m.robin([0.55, 0.0, 0.1, 0.0]).unwrap();
        assert!(r.error_estimate < 1e-6, "estimate {}", r.error_estimate);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let m = unit_ball_model();
        assert!(m.green([1.5, 0.0, 0.0, 0.0], [0.0; 4]).is_err());
        assert!(m.green([0.1; 4], [0.1; 4]).is_err());
    }

    #[test]
    fn tabulated_lookup_and_fallback() {
        let data = TabulatedGreen {
            domain_hash: "test".into(),
            points: vec![([0.0; 4], [0.5, 0.0, 0.0, 0.0], 3.25)],
            max_lookup_distance: 0.1,
        };
        let m = GreenModel::new(DomainModel::Tabulated { data, r0: 0.1 }).unwrap();
        assert_abs_diff_eq!(
            m.green([0.0; 4], [0.5, 0.0, 0.0, 0.0]).unwrap(),
            3.25,
            epsilon = 1e-15
        );
        assert!(m.green([0.0; 4], [0.0, 0.9, 0.0, 0.0]).is_err());
    }
}
