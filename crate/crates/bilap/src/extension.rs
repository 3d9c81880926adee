//! Interior and exterior bi-harmonic extensions of S^3 boundary data, stored
//! symbolically as per-mode radial expansions (powers of r, optionally times
//! powers of log r), and the Cauchy-difference operator on perpendicular
//! modes together with its triangular inverse.
//!
//! For a boundary pair (phi, psi) decomposed over degree-l eigenspaces the
//! extensions read
//!
//! ```text
//!   H_int = sum_l r^l (phi_l - psi_l/(4(l+2))) + r^{l+2} psi_l/(4(l+2)),
//!   H_ext = r^{-2} phi_0
//!         + sum_{l>=1} r^{-2-l} (phi_l + psi_l/(4l)) - r^{-l} psi_l/(4l),
//! ```
//!
//! with Lap H_int = sum_l psi_l r^l and Lap H_ext = sum_{l>=1} psi_l r^{-l-2}.
//! Keeping the expansions exact removes discretization noise from the
//! matching solver; sampling happens on demand.

use crate::error::{Error, Result};
use crate::sphere::{constraint_residuals, mode_from_flat, BoundaryData};
use serde::{Deserialize, Serialize};

/// One radial term: coeff * r^power * (log r)^log_power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RadialTerm {
    pub power: i32,
    pub log_power: u8,
    pub coeff: f64,
}

/// Finite combination of radial terms, closed under d/dr and the mode-l
/// Laplacian.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct RadialExpansion {
    pub terms: Vec<RadialTerm>,
}

impl RadialExpansion {
    pub fn zero() -> Self {
        Self::default()
    }

    pub fn power(power: i32, coeff: f64) -> Self {
        Self {
            terms: vec![RadialTerm {
                power,
                log_power: 0,
                coeff,
            }],
        }
    }

    pub fn push(&mut self, power: i32, log_power: u8, coeff: f64) {
        if coeff != 0.0 {
            self.terms.push(RadialTerm {
                power,
                log_power,
                coeff,
            });
        }
    }

    /// Merges duplicate (power, log_power) pairs and drops terms that are
    /// pure cancellation roundoff (below 1e-14 of the pre-merge scale).
    pub fn canonicalize(&mut self) {
        let scale = self.terms.iter().fold(0.0_f64, |m, t| m.max(t.coeff.abs()));
        self.terms
            .sort_by_key(|t| (t.power, t.log_power));
        let mut out: Vec<RadialTerm> = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            if let Some(last) = out.last_mut() {
                if last.power == t.power && last.log_power == t.log_power {
                    last.coeff += t.coeff;
                    continue;
                }
            }
            out.push(*t);
        }
        out.retain(|t| t.coeff.abs() > 1e-300 && (scale == 0.0 || t.coeff.abs() > 1e-14 * scale));
        self.terms = out;
    }

    pub fn eval(&self, r: f64) -> f64 {
        debug_assert!(r > 0.0 || self.terms.iter().all(|t| t.power >= 0 && t.log_power == 0));
        let lr = if r > 0.0 { r.ln() } else { 0.0 };
        self.terms
            .iter()
            .map(|t| t.coeff * r.powi(t.power) * lr.powi(t.log_power as i32))
            .sum()
    }

    /// Term-wise derivative d/dr.
    pub fn derivative(&self) -> Self {
        let mut out = Self::zero();
        for t in &self.terms {
            if t.power != 0 {
                out.push(t.power - 1, t.log_power, t.coeff * t.power as f64);
            }
            if t.log_power > 0 {
                out.push(t.power - 1, t.log_power - 1, t.coeff * t.log_power as f64);
            }
        }
        out.canonicalize();
        out
    }

    /// Mode-l Laplacian f'' + (3/r) f' - l(l+2)/r^2 f, exactly.
    pub fn laplacian(&self, l: usize) -> Self {
        let d1 = self.derivative();
        let d2 = d1.derivative();
        let mut out = Self::zero();
        for t in &d2.terms {
            out.push(t.power, t.log_power, t.coeff);
        }
        for t in &d1.terms {
            out.push(t.power - 1, t.log_power, 3.0 * t.coeff);
        }
        let ll = (l * (l + 2)) as f64;
        if ll != 0.0 {
            for t in &self.terms {
                out.push(t.power - 2, t.log_power, -ll * t.coeff);
            }
        }
        out.canonicalize();
        out
    }

    pub fn scaled(&self, s: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.terms {
            t.coeff *= s;
        }
        out
    }

    pub fn add(&mut self, other: &Self) {
        self.terms.extend_from_slice(&other.terms);
        self.canonicalize();
    }

    /// Multiplies by a plain polynomial sum_k c_k r^k.
    pub fn mul_poly(&self, poly: &[f64]) -> Self {
        let mut out = Self::zero();
        for t in &self.terms {
            for (k, c) in poly.iter().enumerate() {
                out.push(t.power + k as i32, t.log_power, t.coeff * c);
            }
        }
        out.canonicalize();
        out
    }

    pub fn max_coeff(&self) -> f64 {
        self.terms.iter().fold(0.0_f64, |m, t| m.max(t.coeff.abs()))
    }
}

/// Which side of the unit interface an extension lives on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ExtensionSide {
    Interior,
    Exterior,
}

/// Bi-harmonic extension of boundary data, one exact radial expansion per
/// harmonic mode.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExtensionField {
    pub side: ExtensionSide,
    pub truncation: usize,
    pub modes: Vec<RadialExpansion>,
}

impl ExtensionField {
    pub fn zero(side: ExtensionSide, truncation: usize) -> Self {
        Self {
            side,
            truncation,
            modes: vec![RadialExpansion::zero(); crate::sphere::mode_count(truncation)],
        }
    }

    pub fn mode(&self, flat: usize) -> &RadialExpansion {
        &self.modes[flat]
    }

    /// Value, radial derivative, Laplacian and radial derivative of the
    /// Laplacian of one mode at radius r (mode degree taken from the flat
    /// index).
    pub fn mode_traces(&self, flat: usize, r: f64) -> [f64; 4] {
        let l = mode_from_flat(flat).degree;
        let f = &self.modes[flat];
        let lap = f.laplacian(l);
        [
            f.eval(r),
            f.derivative().eval(r),
            lap.eval(r),
            lap.derivative().eval(r),
        ]
    }

    /// Largest |coefficient| over all modes and terms.
    pub fn max_coeff(&self) -> f64 {
        self.modes.iter().fold(0.0_f64, |m, e| m.max(e.max_coeff()))
    }
}

/// Part of the data removed by projection onto the admissible set.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct ProjectedOut {
    /// Adjustment applied to (phi, psi) on the constant mode.
    pub constant: (f64, f64),
    /// Adjustment applied on each degree-1 mode.
    pub ell1: [(f64, f64); 4],
    /// Magnitude of the projected-out part relative to the data norm.
    pub relative: f64,
}

fn admissibility_tolerance(phi: &BoundaryData, psi: &BoundaryData) -> f64 {
    crate::sphere::ADMISSIBILITY_RTOL * (phi.norm() + psi.norm()).max(1.0)
}

/// Interior bi-harmonic extension. Requires the interior admissibility
/// constraints (zero r^0 and r^1 coefficients) within tolerance.
pub fn interior_extension(phi: &BoundaryData, psi: &BoundaryData) -> Result<ExtensionField> {
    let res = constraint_residuals(phi, psi);
    let tol = admissibility_tolerance(phi, psi);
    let worst = res
        .s0
        .abs()
        .max(res.s1.iter().fold(0.0_f64, |m, s| m.max(s.abs())));
    if worst > tol {
        return Err(Error::ConstraintViolation {
            constraint: "interior admissibility (s0, s1)",
            magnitude: worst,
            tolerance: tol,
        });
    }
    Ok(interior_extension_unchecked(phi, psi))
}

/// Interior extension after orthogonal projection of (phi, psi) onto the
/// admissible set; the removed part is reported rather than silently dropped.
pub fn interior_extension_projected(
    phi: &BoundaryData,
    psi: &BoundaryData,
) -> (ExtensionField, ProjectedOut) {
    let mut phi = phi.clone();
    let mut psi = psi.clone();
    let mut out = ProjectedOut::default();
    let norm = (phi.norm() + psi.norm()).max(1e-300);
    // admissible set per low mode: psi_m = c phi_m with c = 8 (constant) or 12
    // (degree 1); orthogonal projection moves (phi_m, psi_m) by
    // (-c r, r)/(1+c^2) where r = c phi_m - psi_m.
    let mut project = |i: usize, c: f64| -> (f64, f64) {
        let r = c * phi.coeffs[i] - psi.coeffs[i];
        let dphi = -c * r / (1.0 + c * c);
        let dpsi = r / (1.0 + c * c);
        phi.coeffs[i] += dphi;
        psi.coeffs[i] += dpsi;
        (dphi, dpsi)
    };
    out.constant = project(0, 8.0);
    for i in 0..4 {
        out.ell1[i] = project(1 + i, 12.0);
    }
    let removed: f64 = {
        let (a, b) = out.constant;
        let mut s = a * a + b * b;
        for (a, b) in out.ell1 {
            s += a * a + b * b;
        }
        s.sqrt()
    };
    out.relative = removed / norm;
    (interior_extension_unchecked(&phi, &psi), out)
}

fn interior_extension_unchecked(phi: &BoundaryData, psi: &BoundaryData) -> ExtensionField {
    let trunc = phi.truncation.max(psi.truncation);
    let mut field = ExtensionField::zero(ExtensionSide::Interior, trunc);
    for (flat, exp) in field.modes.iter_mut().enumerate() {
        let l = mode_from_flat(flat).degree;
        let p = phi.coeffs.get(flat).copied().unwrap_or(0.0);
        let q = psi.coeffs.get(flat).copied().unwrap_or(0.0);
        let c = q / (4.0 * (l as f64 + 2.0));
        exp.push(l as i32, 0, p - c);
        exp.push(l as i32 + 2, 0, c);
        exp.canonicalize();
    }
    field
}

/// Exterior bi-harmonic extension decaying at infinity. Requires the
/// exterior admissibility constraint (int psi = 0) within tolerance.
pub fn exterior_extension(phi: &BoundaryData, psi: &BoundaryData) -> Result<ExtensionField> {
    let res = constraint_residuals(phi, psi);
    let tol = admissibility_tolerance(phi, psi);
    if res.t0.abs() > tol {
        return Err(Error::ConstraintViolation {
            constraint: "exterior admissibility (t0)",
            magnitude: res.t0.abs(),
            tolerance: tol,
        });
    }
    Ok(exterior_extension_unchecked(phi, psi))
}

/// Exterior extension after projecting out the constant part of psi.
pub fn exterior_extension_projected(
    phi: &BoundaryData,
    psi: &BoundaryData,
) -> (ExtensionField, ProjectedOut) {
    let mut psi = psi.clone();
    let mut out = ProjectedOut::default();
    let norm = (phi.norm() + psi.norm()).max(1e-300);
    out.constant = (0.0, -psi.coeffs[0]);
    out.relative = psi.coeffs[0].abs() / norm;
    psi.coeffs[0] = 0.0;
    (exterior_extension_unchecked(phi, &psi), out)
}

fn exterior_extension_unchecked(phi: &BoundaryData, psi: &BoundaryData) -> ExtensionField {
    let trunc = phi.truncation.max(psi.truncation);
    let mut field = ExtensionField::zero(ExtensionSide::Exterior, trunc);
    for (flat, exp) in field.modes.iter_mut().enumerate() {
        let l = mode_from_flat(flat).degree;
        let p = phi.coeffs.get(flat).copied().unwrap_or(0.0);
        let q = psi.coeffs.get(flat).copied().unwrap_or(0.0);
        if l == 0 {
            exp.push(-2, 0, p);
        } else {
            let c = q / (4.0 * l as f64);
            exp.push(-2 - l as i32, 0, p + c);
            exp.push(-(l as i32), 0, -c);
        }
        exp.canonicalize();
    }
    field
}

/// The per-mode 2x2 block of the Cauchy-difference operator on
/// perpendicular modes,
///
/// ```text
///   (phi_l, psi_l) -> ( d_r H_int - d_r H_ext , d_r Lap H_int - d_r Lap H_ext )  at r = 1,
/// ```
///
/// namely [[2(l+1), (l+1)/(l(l+2))], [0, 2(l+1)]]; upper triangular with
/// determinant 4(l+1)^2.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoissonBlock {
    pub degree: usize,
}

impl PoissonBlock {
    pub fn new(degree: usize) -> Self {
        assert!(degree >= 2, "perpendicular modes start at degree 2");
        Self { degree }
    }

    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let l = self.degree as f64;
        [
            [2.0 * (l + 1.0), (l + 1.0) / (l * (l + 2.0))],
            [0.0, 2.0 * (l + 1.0)],
        ]
    }

    pub fn determinant(&self) -> f64 {
        let l = self.degree as f64;
        4.0 * (l + 1.0) * (l + 1.0)
    }

    pub fn apply(&self, phi: f64, psi: f64) -> (f64, f64) {
        let m = self.matrix();
        (m[0][0] * phi + m[0][1] * psi, m[1][1] * psi)
    }

    /// Triangular back-substitution.
    pub fn solve(&self, a: f64, b: f64) -> (f64, f64) {
        let l = self.degree as f64;
        let psi = b / (2.0 * (l + 1.0));
        let phi = (a / (l + 1.0) - psi / (l * (l + 2.0))) / 2.0;
        (phi, psi)
    }
}

fn require_perp(data: &BoundaryData) -> Result<()> {
    let tol = crate::sphere::ADMISSIBILITY_RTOL * data.norm().max(1.0);
    if data.is_perp(tol) {
        Ok(())
    } else {
        Err(Error::NonZeroLowModes)
    }
}

/// Applies the Cauchy-difference operator mode-wise to perpendicular data.
pub fn poisson_apply(
    phi: &BoundaryData,
    psi: &BoundaryData,
) -> Result<(BoundaryData, BoundaryData)> {
    require_perp(phi)?;
    require_perp(psi)?;
    let trunc = phi.truncation.max(psi.truncation);
    let mut a = BoundaryData::zero(trunc, 3);
    let mut b = BoundaryData::zero(trunc, 1);
    for flat in crate::sphere::mode_count(1)..a.coeffs.len() {
        let l = mode_from_flat(flat).degree;
        let block = PoissonBlock::new(l);
        let (av, bv) = block.apply(
            phi.coeffs.get(flat).copied().unwrap_or(0.0),
            psi.coeffs.get(flat).copied().unwrap_or(0.0),
        );
        a.coeffs[flat] = av;
        b.coeffs[flat] = bv;
    }
    Ok((a, b))
}

/// Inverts [`poisson_apply`] mode-wise by back-substitution.
pub fn poisson_solve(a: &BoundaryData, b: &BoundaryData) -> Result<(BoundaryData, BoundaryData)> {
    require_perp(a)?;
    require_perp(b)?;
    let trunc = a.truncation.max(b.truncation);
    let mut phi = BoundaryData::zero(trunc, 4);
    let mut psi = BoundaryData::zero(trunc, 2);
    for flat in crate::sphere::mode_count(1)..phi.coeffs.len() {
        let l = mode_from_flat(flat).degree;
        let block = PoissonBlock::new(l);
        let (p, q) = block.solve(
            a.coeffs.get(flat).copied().unwrap_or(0.0),
            b.coeffs.get(flat).copied().unwrap_or(0.0),
        );
        phi.coeffs[flat] = p;
        psi.coeffs[flat] = q;
    }
    Ok((phi, psi))
}

/// C^4 cutoff profile: 1 for t <= inner, 0 for t >= outer, a ninth-degree
/// smoothstep in between (four vanishing derivatives at both ends).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Cutoff {
    pub inner: f64,
    pub outer: f64,
}

/// Smoothstep s with s(0)=0, s(1)=1 and s', s'', s''', s'''' vanishing at
/// both ends; s'(x) = 630 x^4 (1-x)^4.
fn smoothstep9(x: f64) -> f64 {
    let x2 = x * x;
    let x4 = x2 * x2;
    x4 * x * (126.0 - 420.0 * x + 540.0 * x2 - 315.0 * x2 * x + 70.0 * x4)
}

impl Cutoff {
    pub fn new(inner: f64, outer: f64) -> Self {
        assert!(0.0 <= inner && inner < outer);
        Self { inner, outer }
    }

    /// The standard interface cutoff: 1 inside r0/2, 0 outside r0.
    pub fn interface(r0: f64) -> Self {
        Self::new(r0 / 2.0, r0)
    }

    pub fn eval(&self, t: f64) -> f64 {
        if t <= self.inner {
            1.0
        } else if t >= self.outer {
            0.0
        } else {
            1.0 - smoothstep9((t - self.inner) / (self.outer - self.inner))
        }
    }

    /// n-th derivative (n <= 4) by exact differentiation of the polynomial.
    pub fn derivative(&self, t: f64, n: usize) -> f64 {
        if n == 0 {
            return self.eval(t);
        }
        if t <= self.inner || t >= self.outer {
            return 0.0;
        }
        let w = self.outer - self.inner;
        let x = (t - self.inner) / w;
        // s'(x) = 630 x^4 (1-x)^4; expand (1-x)^4 and differentiate n-1 times
        // s'(x) = 630 (x^4 - 4x^5 + 6x^6 - 4x^7 + x^8)
        let c = [630.0, -2520.0, 3780.0, -2520.0, 630.0];
        let mut val = 0.0;
        for (k, ck) in c.iter().enumerate() {
            let p = 4 + k; // power of x in s'
            let extra = n - 1;
            if extra > p {
                continue;
            }
            let mut fac = 1.0;
            for j in 0..extra {
                fac *= (p - j) as f64;
            }
            val += ck * fac * x.powi((p - extra) as i32);
        }
        -val / w.powi(n as i32)
    }

    /// Polynomial coefficients (in t) of the transition piece, for exact
    /// products with radial expansions.
    pub fn transition_poly(&self) -> Vec<f64> {
        let w = self.outer - self.inner;
        // 1 - s((t - inner)/w) as a polynomial in t
        // s(x) = sum a_k x^k, k = 5..9
        let a = [126.0, -420.0, 540.0, -315.0, 70.0];
        let mut poly = vec![0.0; 10];
        poly[0] = 1.0;
        for (idx, ak) in a.iter().enumerate() {
            let k = 5 + idx;
            // expand ((t - inner)/w)^k by binomial
            let mut binom = 1.0;
            for j in 0..=k {
                // coefficient of t^j in (t - inner)^k is C(k,j) (-inner)^{k-j}
                if j > 0 {
                    binom = binom * (k - j + 1) as f64 / j as f64;
                } else {
                    binom = 1.0;
                }
                poly[j] -= ak / w.powi(k as i32) * binom * (-self.inner).powi((k - j) as i32);
            }
        }
        poly
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::{mode_count, BoundaryData};
    use approx::assert_abs_diff_eq;

    const L: usize = 6;

    #[test]
    fn radial_expansion_algebra() {
        // Lap_0 r^2 = 8, Lap_0 log r = 2/r^2, Lap_l r^l = 0
        let e = RadialExpansion::power(2, 1.0);
        let lap = e.laplacian(0);
        assert_eq!(lap.terms.len(), 1);
        assert_abs_diff_eq!(lap.eval(0.7), 8.0, epsilon = 1e-14);

        let mut lg = RadialExpansion::zero();
        lg.push(0, 1, 1.0);
        let lap = lg.laplacian(0);
        assert_abs_diff_eq!(lap.eval(2.0), 2.0 / 4.0, epsilon = 1e-14);

        for l in 1..5 {
            let e = RadialExpansion::power(l as i32, 3.3);
            let lap = e.laplacian(l);
            assert!(lap.terms.is_empty(), "degree {l}: {lap:?}");
        }
    }

    #[test]
    fn interior_closed_forms() {
        // (c, 8c) -> c r^2
        let c = 0.9;
        let phi = BoundaryData::constant(c, L, 4);
        let psi = BoundaryData::constant(8.0 * c, L, 2);
        let h = interior_extension(&phi, &psi).unwrap();
        let e0 = &h.modes[0];
        for r in [0.2, 0.5, 1.0] {
            // mode-0 coefficient profile equals coeff(phi_0) * r^2
            assert_abs_diff_eq!(e0.eval(r), phi.coeffs[0] * r * r, epsilon = 1e-12);
        }
        for m in 1..h.modes.len() {
            assert!(h.modes[m].terms.is_empty());
        }

        // (a e1, 12 a e1) -> a r^3 e1
        let a = 0.37;
        let phi = BoundaryData::from_ell1([a, 0.0, 0.0, 0.0], L, 4);
        let psi = BoundaryData::from_ell1([12.0 * a, 0.0, 0.0, 0.0], L, 2);
        let h = interior_extension(&phi, &psi).unwrap();
        for r in [0.3, 0.8, 1.0] {
            assert_abs_diff_eq!(h.modes[1].eval(r), phi.coeffs[1] * r.powi(3), epsilon = 1e-12);
        }

        // zero data -> zero field
        let z = BoundaryData::zero(L, 4);
        let h = interior_extension(&z, &z).unwrap();
        assert_eq!(h.max_coeff(), 0.0);
    }

    #[test]
    fn exterior_closed_forms() {
        // (c, 0) -> c r^{-2}
        let c = 1.7;
        let phi = BoundaryData::constant(c, L, 4);
        let psi = BoundaryData::zero(L, 2);
        let h = exterior_extension(&phi, &psi).unwrap();
        for r in [1.0, 2.0, 5.0] {
            assert_abs_diff_eq!(h.modes[0].eval(r), phi.coeffs[0] / (r * r), epsilon = 1e-12);
        }

        // (0, a e1) -> (a/4)(r^{-3} - r^{-1}) e1
        let a = 2.2;
        let phi = BoundaryData::zero(L, 4);
        let psi = BoundaryData::from_ell1([a, 0.0, 0.0, 0.0], L, 2);
        let h = exterior_extension(&phi, &psi).unwrap();
        for r in [1.0_f64, 1.5, 4.0] {
            let expect = psi.coeffs[1] / 4.0 * (r.powi(-3) - r.powi(-1));
            assert_abs_diff_eq!(h.modes[1].eval(r), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn traces_match_data_at_interface() {
        // random admissible data: free perpendicular part, slaved low modes
        let mut phi = BoundaryData::zero(L, 4);
        let mut psi = BoundaryData::zero(L, 2);
        for flat in 0..mode_count(L) {
            let l = mode_from_flat(flat).degree;
            let x = ((flat * 37 + 11) % 19) as f64 / 19.0 - 0.5;
            let y = ((flat * 53 + 7) % 23) as f64 / 23.0 - 0.5;
            phi.coeffs[flat] = x;
            psi.coeffs[flat] = match l {
                0 => 8.0 * x,
                1 => 12.0 * x,
                _ => y,
            };
        }
        let h = interior_extension(&phi, &psi).unwrap();
        for flat in 0..mode_count(L) {
            let t = h.mode_traces(flat, 1.0);
            assert_abs_diff_eq!(t[0], phi.coeffs[flat], epsilon = 1e-10);
            assert_abs_diff_eq!(t[2], psi.coeffs[flat], epsilon = 1e-10);
        }

        let mut psi_e = psi.clone();
        psi_e.coeffs[0] = 0.0;
        let h = exterior_extension(&phi, &psi_e).unwrap();
        for flat in 0..mode_count(L) {
            let t = h.mode_traces(flat, 1.0);
            assert_abs_diff_eq!(t[0], phi.coeffs[flat], epsilon = 1e-10);
            assert_abs_diff_eq!(t[2], psi_e.coeffs[flat], epsilon = 1e-10);
        }
    }

    #[test]
    fn extensions_are_biharmonic_exactly() {
        let mut phi = BoundaryData::zero(L, 4);
        let mut psi = BoundaryData::zero(L, 2);
        for flat in 0..mode_count(L) {
            phi.coeffs[flat] = ((flat * 13 + 5) % 17) as f64 / 17.0 - 0.4;
            psi.coeffs[flat] = ((flat * 29 + 3) % 31) as f64 / 31.0 - 0.6;
        }
        let (hi, _) = interior_extension_projected(&phi, &psi);
        let (he, _) = exterior_extension_projected(&phi, &psi);
        for flat in 0..mode_count(L) {
            let l = mode_from_flat(flat).degree;
            for h in [&hi, &he] {
                let bilap = h.modes[flat].laplacian(l).laplacian(l);
                assert!(
                    bilap.max_coeff() <= 1e-12 * h.modes[flat].max_coeff().max(1.0),
                    "mode {flat}: {bilap:?}"
                );
            }
        }
    }

    #[test]
    fn interior_growth_bound_with_admissible_data() {
        // |H_int| <= C r^2 near the origin: sup over log-spaced radii of
        // r^{-2} |H_int| stays bounded and refinement-stable
        let mut phi = BoundaryData::zero(L, 4);
        let mut psi = BoundaryData::zero(L, 2);
        for flat in 5..mode_count(L) {
            phi.coeffs[flat] = ((flat * 7 + 1) % 13) as f64 / 13.0 - 0.5;
            psi.coeffs[flat] = ((flat * 11 + 4) % 9) as f64 / 9.0 - 0.5;
        }
        let h = interior_extension(&phi, &psi).unwrap();
        let mut sup_coarse = 0.0_f64;
        let mut sup_fine = 0.0_f64;
        for k in 0..40 {
            let r = 2.0_f64.powf(-(k as f64) / 2.0);
            let v: f64 = (0..mode_count(L)).map(|m| h.modes[m].eval(r).abs()).sum();
            sup_coarse = sup_coarse.max(v / (r * r));
        }
        for k in 0..80 {
            let r = 2.0_f64.powf(-(k as f64) / 4.0);
            let v: f64 = (0..mode_count(L)).map(|m| h.modes[m].eval(r).abs()).sum();
            sup_fine = sup_fine.max(v / (r * r));
        }
        assert!(sup_coarse.is_finite() && sup_fine.is_finite());
        assert!(sup_fine <= sup_coarse * 1.05 + 1e-9);
        // and controlled by the data size
        let c = sup_fine / (phi.norm() + psi.norm());
        assert!(c < 50.0, "growth constant {c}");
    }

    #[test]
    fn exterior_decay_bound() {
        let mut phi = BoundaryData::zero(L, 4);
        let mut psi = BoundaryData::zero(L, 2);
        for flat in 1..mode_count(L) {
            phi.coeffs[flat] = ((flat * 19 + 2) % 11) as f64 / 11.0 - 0.5;
            psi.coeffs[flat] = ((flat * 23 + 6) % 7) as f64 / 7.0 - 0.5;
        }
        phi.coeffs[0] = 0.4;
        let h = exterior_extension(&phi, &psi).unwrap();
        let mut sup = 0.0_f64;
        for k in 0..60 {
            let r = 2.0_f64.powf(k as f64 / 4.0);
            let v: f64 = (0..mode_count(L)).map(|m| h.modes[m].eval(r).abs()).sum();
            sup = sup.max(r * v);
        }
        assert!(sup.is_finite() && sup < 100.0 * (phi.norm() + psi.norm()));
    }

    #[test]
    fn poisson_block_examples() {
        let b = PoissonBlock::new(2);
        let m = b.matrix();
        assert_eq!(m[0][0], 6.0);
        assert_eq!(m[0][1], 3.0 / 8.0);
        assert_eq!(m[1][0], 0.0);
        assert_eq!(m[1][1], 6.0);
        assert_eq!(b.determinant(), 36.0);

        assert_eq!(b.apply(1.0, 0.0), (6.0, 0.0));
        let (a, bb) = b.apply(0.0, 1.0);
        assert_abs_diff_eq!(a, 3.0 / 8.0, epsilon = 1e-15);
        assert_eq!(bb, 6.0);

        // inverse of the first example
        let (p, q) = b.solve(6.0, 0.0);
        assert_abs_diff_eq!(p, 1.0, epsilon = 1e-15);
        assert_eq!(q, 0.0);
        // back-substitution: a = 0, b = 6 gives psi = 1, phi = (0 - 1/8)/2
        let (p, q) = b.solve(0.0, 6.0);
        assert_abs_diff_eq!(q, 1.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p, -1.0 / 16.0, epsilon = 1e-15);
        // and the pair round-trips
        let (a2, b2) = b.apply(p, q);
        assert_abs_diff_eq!(a2, 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(b2, 6.0, epsilon = 1e-15);
    }

    #[test]
    fn poisson_matches_extension_derivative_jumps() {
        // cross-check the 2x2 blocks against analytic radial derivatives of
        // the two extensions at r = 1
        let mut phi = BoundaryData::zero(L, 4);
        let mut psi = BoundaryData::zero(L, 2);
        for flat in 5..mode_count(L) {
            phi.coeffs[flat] = ((flat * 3 + 2) % 23) as f64 / 23.0 - 0.3;
            psi.coeffs[flat] = ((flat * 5 + 9) % 29) as f64 / 29.0 - 0.7;
        }
        let (a, b) = poisson_apply(&phi, &psi).unwrap();
        let hi = interior_extension(&phi, &psi).unwrap();
        let he = exterior_extension(&phi, &psi).unwrap();
        for flat in 5..mode_count(L) {
            let ti = hi.mode_traces(flat, 1.0);
            let te = he.mode_traces(flat, 1.0);
            assert_abs_diff_eq!(a.coeffs[flat], ti[1] - te[1], epsilon = 1e-10);
            assert_abs_diff_eq!(b.coeffs[flat], ti[3] - te[3], epsilon = 1e-10);
        }
    }

    #[test]
    fn poisson_round_trip() {
        let mut a = BoundaryData::zero(L, 3);
        let mut b = BoundaryData::zero(L, 1);
        for flat in 5..mode_count(L) {
            a.coeffs[flat] = ((flat * 41 + 3) % 13) as f64 / 13.0 - 0.5;
            b.coeffs[flat] = ((flat * 17 + 8) % 19) as f64 / 19.0 - 0.5;
        }
        let (phi, psi) = poisson_solve(&a, &b).unwrap();
        let (a2, b2) = poisson_apply(&phi, &psi).unwrap();
        for flat in 0..mode_count(L) {
            assert_abs_diff_eq!(a2.coeffs[flat], a.coeffs[flat], epsilon = 1e-12);
            assert_abs_diff_eq!(b2.coeffs[flat], b.coeffs[flat], epsilon = 1e-12);
        }
    }

    #[test]
    fn low_modes_are_rejected() {
        let mut a = BoundaryData::zero(L, 3);
        a.coeffs[2] = 1.0;
        let b = BoundaryData::zero(L, 1);
        assert!(poisson_apply(&a, &b).is_err());
        assert!(poisson_solve(&a, &b).is_err());
    }

    #[test]
    fn inadmissible_data_is_rejected_and_projection_reports() {
        let phi = BoundaryData::constant(1.0, L, 4);
        let psi = BoundaryData::zero(L, 2); // violates psi0 = 8 phi0
        assert!(interior_extension(&phi, &psi).is_err());
        let (h, rep) = interior_extension_projected(&phi, &psi);
        assert!(rep.relative > 0.0);
        // projected data is admissible: r^0 and r^1 coefficients vanish
        for flat in 0..mode_count(L) {
            for t in &h.modes[flat].terms {
                assert!(t.power >= 2, "term {t:?}");
            }
        }
    }

    #[test]
    fn cutoff_shape_and_derivatives() {
        let chi = Cutoff::new(1.0, 2.0);
        assert_eq!(chi.eval(0.5), 1.0);
        assert_eq!(chi.eval(2.5), 0.0);
        assert!(chi.eval(1.5) > 0.0 && chi.eval(1.5) < 1.0);
        assert_abs_diff_eq!(chi.eval(1.5), 0.5, epsilon = 1e-12);
        // C^4: derivatives vanish at the seams
        for n in 1..=4 {
            assert_abs_diff_eq!(chi.derivative(1.0 + 1e-9, n), 0.0, epsilon = 1e-4);
            assert_abs_diff_eq!(chi.derivative(2.0 - 1e-9, n), 0.0, epsilon = 1e-4);
        }
        // derivative consistency by FD
        let h = 1e-6;
        let fd = (chi.eval(1.3 + h) - chi.eval(1.3 - h)) / (2.0 * h);
        assert_abs_diff_eq!(chi.derivative(1.3, 1), fd, epsilon = 1e-6);

        // polynomial piece agrees with eval
        let poly = chi.transition_poly();
        for t in [1.1_f64, 1.5, 1.9] {
            let v: f64 = poly
                .iter()
                .enumerate()
                .map(|(k, c)| c * t.powi(k as i32))
                .sum();
            assert_abs_diff_eq!(v, chi.eval(t), epsilon = 1e-10);
        }
    }
}
