//! Harmonic analysis on the unit 3-sphere: eigenmodes, product quadrature,
//! decomposition and synthesis, low-mode splitting and the admissibility
//! functionals for boundary data.
//!
//! Coordinates are hyperspherical,
//!   x1 = cos t1,  x2 = sin t1 cos t2,  x3 = sin t1 sin t2 cos t3,
//!   x4 = sin t1 sin t2 sin t3,
//! with a Gauss-Chebyshev (second kind) rule in cos t1, a Gauss-Legendre rule
//! in cos t2 and a uniform rule in the periodic angle t3. The product rule
//! integrates restrictions of polynomials of degree <= `exact_degree` on S^3
//! exactly, so a grid built for degree 2L supports exact projections of
//! degree-L harmonics.

pub mod poly;

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::sync::Arc;

/// Surface measure of the unit 3-sphere.
pub const S3_AREA: f64 = 2.0 * std::f64::consts::PI * std::f64::consts::PI;

/// L^2(S^3) norm of a coordinate function x_i (all four agree by symmetry).
pub fn coordinate_l2_norm() -> f64 {
    // int_{S^3} x_i^2 = |S^3| / 4
    (S3_AREA / 4.0).sqrt()
}

/// Eigenvalue of -Laplace on S^3 for the l-th eigenspace: l(l+2), exact in
/// integer arithmetic.
pub fn eigenvalue_s3(l: u64) -> u64 {
    l * (l + 2)
}

/// Eigenvalue of -Laplace on S^4: l(l+3). Used only by the kernel
/// classification check lambda^2 + 2 lambda - 24 = 0, which singles out l = 1.
pub fn eigenvalue_s4(l: u64) -> u64 {
    l * (l + 3)
}

/// Dimension of the l-th eigenspace on S^3.
pub fn eigenspace_dim(l: usize) -> usize {
    (l + 1) * (l + 1)
}

/// Flat offset of degree l in the mode enumeration: sum of (k+1)^2 for k < l.
pub fn mode_offset(l: usize) -> usize {
    l * (l + 1) * (2 * l + 1) / 6
}

/// Total number of modes with degree <= l_max.
pub fn mode_count(l_max: usize) -> usize {
    mode_offset(l_max + 1)
}

/// One spherical-harmonic mode: degree l and an index inside the
/// (l+1)^2-dimensional eigenspace. The index convention places the four
/// coordinate functions e1..e4 at degree 1, indices 0..3.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HarmonicMode {
    pub degree: usize,
    pub index: usize,
}

impl HarmonicMode {
    pub fn new(degree: usize, index: usize) -> Self {
        assert!(index < eigenspace_dim(degree));
        Self { degree, index }
    }

    pub fn eigenvalue(&self) -> u64 {
        eigenvalue_s3(self.degree as u64)
    }

    pub fn flat_index(&self) -> usize {
        mode_offset(self.degree) + self.index
    }
}

/// Inverse of `HarmonicMode::flat_index`.
pub fn mode_from_flat(flat: usize) -> HarmonicMode {
    let mut l = 0;
    while mode_offset(l + 1) <= flat {
        l += 1;
    }
    HarmonicMode {
        degree: l,
        index: flat - mode_offset(l),
    }
}

/// Product quadrature rule on S^3.
#[derive(Debug, Clone)]
pub struct SphericalGrid {
    /// Cartesian coordinates of the nodes, one [x1,x2,x3,x4] per node.
    pub nodes: Vec<[f64; 4]>,
    /// Positive quadrature weights; they sum to |S^3| = 2 pi^2.
    pub weights: Vec<f64>,
    /// Largest polynomial degree integrated exactly.
    pub exact_degree: usize,
    /// Node counts per direction (cos t1, cos t2, t3).
    pub shape: (usize, usize, usize),
}

impl SphericalGrid {
    /// Builds a rule exact for polynomial degree `exact_degree` on S^3.
    pub fn new(exact_degree: usize) -> Self {
        let n_t = exact_degree / 2 + 1;
        let n_s = exact_degree / 2 + 1;
        let n_p = exact_degree + 2;
        let (t_nodes, t_weights) = poly::gauss_chebyshev2(n_t);
        let (s_nodes, s_weights) = poly::gauss_legendre(n_s);
        let phi_w = 2.0 * std::f64::consts::PI / n_p as f64;

        let mut nodes = Vec::with_capacity(n_t * n_s * n_p);
        let mut weights = Vec::with_capacity(n_t * n_s * n_p);
        for (t, wt) in t_nodes.iter().zip(&t_weights) {
            let sin1 = (1.0 - t * t).sqrt();
            for (s, ws) in s_nodes.iter().zip(&s_weights) {
                let sin2 = (1.0 - s * s).sqrt();
                for k in 0..n_p {
                    let phi = 2.0 * std::f64::consts::PI * k as f64 / n_p as f64;
                    nodes.push([*t, sin1 * s, sin1 * sin2 * phi.cos(), sin1 * sin2 * phi.sin()]);
                    weights.push(wt * ws * phi_w);
                }
            }
        }
        Self {
            nodes,
            weights,
            exact_degree,
            shape: (n_t, n_s, n_p),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Quadrature of a function given by its node values.
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values
            .iter()
            .zip(&self.weights)
            .map(|(v, w)| v * w)
            .sum()
    }

    /// Quadrature inner product.
    pub fn inner(&self, a: &[f64], b: &[f64]) -> f64 {
        a.iter()
            .zip(b)
            .zip(&self.weights)
            .map(|((x, y), w)| x * y * w)
            .sum()
    }
}

/// Real orthonormal harmonic basis on S^3 up to a truncation degree.
///
/// Seed functions are Gegenbauer-in-cos(t1) times spherical harmonics on the
/// fibre 2-sphere (associated Legendre times circular harmonics); each degree
/// block is then orthonormalized against the grid inner product once and
/// cached, which pins normalizations and signs across the whole crate. The
/// degree-1 block is ordered so that mode (1, i) is the normalized coordinate
/// function e_{i+1}.
#[derive(Debug, Clone)]
pub struct SphereBasis {
    pub grid: Arc<SphericalGrid>,
    pub truncation: usize,
    /// values[m][g]: value of orthonormal mode m at grid node g.
    values: Vec<Vec<f64>>,
    /// Per-degree change of basis from the analytic seeds to the
    /// orthonormalized modes (row-major d x d per degree); lets modes be
    /// evaluated at arbitrary directions, not just grid nodes.
    transforms: Vec<Vec<f64>>,
    /// Seed labels (sub, m) per degree, in mode order.
    seed_labels: Vec<Vec<(usize, i64)>>,
    /// The seeds are exactly orthogonal in the quadrature inner product, so
    /// the change of basis is diagonal up to roundoff; when that holds the
    /// per-point evaluation skips the dense block multiply.
    diagonal_transform: bool,
}

/// Reusable workspace for [`SphereBasis::eval_modes_into`].
#[derive(Debug, Clone)]
pub struct ModeScratch {
    cos_m: Vec<f64>,
    sin_m: Vec<f64>,
    sin1_pow: Vec<f64>,
    p_tab: Vec<f64>,
    c_tab: Vec<f64>,
    seeds: Vec<f64>,
}

impl ModeScratch {
    pub fn new(lmax: usize) -> Self {
        let w = lmax + 1;
        Self {
            cos_m: vec![0.0; w],
            sin_m: vec![0.0; w],
            sin1_pow: vec![0.0; w],
            p_tab: vec![0.0; w * w],
            c_tab: vec![0.0; (w + 1) * w],
            seeds: Vec::with_capacity(w * w),
        }
    }
}

/// m-ordering inside a fibre angular momentum l: 0, +1, -1, +2, -2, ...
fn m_order(l: usize) -> Vec<i64> {
    let mut out = vec![0i64];
    for m in 1..=l as i64 {
        out.push(m);
        out.push(-m);
    }
    out
}

impl SphereBasis {
    pub fn new(grid: Arc<SphericalGrid>, truncation: usize) -> Result<Self> {
        if grid.exact_degree < 2 * truncation {
            return Err(Error::GridTooCoarse {
                exact: grid.exact_degree,
                requested: truncation,
            });
        }
        let n = grid.len();
        let mut values: Vec<Vec<f64>> = Vec::with_capacity(mode_count(truncation));
        let mut transforms: Vec<Vec<f64>> = Vec::with_capacity(truncation + 1);
        let mut seed_labels: Vec<Vec<(usize, i64)>> = Vec::with_capacity(truncation + 1);

        for l in 0..=truncation {
            let block_start = values.len();
            let dim = eigenspace_dim(l);
            let mut labels = Vec::with_capacity(dim);
            for sub in 0..=l {
                for m in m_order(sub) {
                    labels.push((sub, m));
                }
            }
            let mut transform = vec![0.0; dim * dim];
            for (k, (sub, m)) in labels.iter().enumerate() {
                let mut v = vec![0.0; n];
                for (g, node) in grid.nodes.iter().enumerate() {
                    v[g] = seed_harmonic(l, *sub, *m, node);
                }
                let mut t_row = vec![0.0; dim];
                t_row[k] = 1.0;
                // modified Gram-Schmidt against the block, two passes
                for _ in 0..2 {
                    for (jq, q) in values[block_start..].iter().enumerate() {
                        let c = grid.inner(&v, q);
                        for (vi, qi) in v.iter_mut().zip(q) {
                            *vi -= c * qi;
                        }
                        for idx in 0..dim {
                            t_row[idx] -= c * transform[jq * dim + idx];
                        }
                    }
                }
                let norm = grid.inner(&v, &v).sqrt();
                assert!(
                    norm > 1e-8,
                    "degenerate seed harmonic (l={l}, sub={sub}, m={m})"
                );
                // orient along the seed
                let mut seed_ip = 0.0;
                for (g, node) in grid.nodes.iter().enumerate() {
                    seed_ip += grid.weights[g] * v[g] * seed_harmonic(l, *sub, *m, node);
                }
                let sign = if seed_ip < 0.0 { -1.0 } else { 1.0 };
                for vi in &mut v {
                    *vi *= sign / norm;
                }
                for t in &mut t_row {
                    *t *= sign / norm;
                }
                let row_index = values.len() - block_start;
                transform[row_index * dim..(row_index + 1) * dim].copy_from_slice(&t_row);
                values.push(v);
            }
            debug_assert_eq!(values.len() - block_start, dim);
            transforms.push(transform);
            seed_labels.push(labels);
        }
        // detect the (expected) diagonal structure of the change of basis
        let mut diagonal_transform = true;
        for (l, t) in transforms.iter().enumerate() {
            let dim = eigenspace_dim(l);
            let mut max_diag = 0.0_f64;
            let mut max_off = 0.0_f64;
            for r in 0..dim {
                for c in 0..dim {
                    let v = t[r * dim + c].abs();
                    if r == c {
                        max_diag = max_diag.max(v);
                    } else {
                        max_off = max_off.max(v);
                    }
                }
            }
            if max_off > 1e-11 * max_diag {
                diagonal_transform = false;
            }
        }
        Ok(Self {
            grid,
            truncation,
            values,
            transforms,
            seed_labels,
            diagonal_transform,
        })
    }

    /// Values of every mode (flat order) at an arbitrary unit direction.
    pub fn eval_modes_at(&self, dir: [f64; 4]) -> Vec<f64> {
        let mut scratch = ModeScratch::new(self.truncation);
        let mut out = Vec::new();
        self.eval_modes_into(dir, &mut scratch, &mut out);
        out
    }

    /// Allocation-free variant of [`Self::eval_modes_at`] for hot loops.
    ///
    /// All seeds share the direction geometry, so the associated-Legendre and
    /// Gegenbauer factors are built once as tables and each seed is a
    /// three-factor product.
    pub fn eval_modes_into(&self, dir: [f64; 4], scratch: &mut ModeScratch, out: &mut Vec<f64>) {
        let lmax = self.truncation;
        let t1 = dir[0].clamp(-1.0, 1.0);
        let sin1 = (1.0 - t1 * t1).max(0.0).sqrt();
        let (c2, cos_phi, sin_phi) = if sin1 > 1e-300 {
            let c2 = (dir[1] / sin1).clamp(-1.0, 1.0);
            let sin2 = (1.0 - c2 * c2).max(0.0).sqrt();
            if sin2 * sin1 > 1e-300 {
                (c2, dir[2] / (sin1 * sin2), dir[3] / (sin1 * sin2))
            } else {
                (c2, 1.0, 0.0)
            }
        } else {
            (1.0, 1.0, 0.0)
        };

        let w = lmax + 1;
        let sc = &mut *scratch;
        sc.cos_m[0] = 1.0;
        sc.sin_m[0] = 0.0;
        sc.sin1_pow[0] = 1.0;
        for k in 1..=lmax {
            sc.cos_m[k] = sc.cos_m[k - 1] * cos_phi - sc.sin_m[k - 1] * sin_phi;
            sc.sin_m[k] = sc.sin_m[k - 1] * cos_phi + sc.cos_m[k - 1] * sin_phi;
            sc.sin1_pow[k] = sc.sin1_pow[k - 1] * sin1;
        }

        // associated Legendre table P[sub * w + m], 0 <= m <= sub <= lmax
        let sin2v = (1.0 - c2 * c2).max(0.0).sqrt();
        sc.p_tab[0] = 1.0;
        for m in 1..=lmax {
            sc.p_tab[m * w + m] =
                sc.p_tab[(m - 1) * w + (m - 1)] * (2.0 * m as f64 - 1.0) * sin2v;
        }
        for m in 0..lmax {
            sc.p_tab[(m + 1) * w + m] = c2 * (2.0 * m as f64 + 1.0) * sc.p_tab[m * w + m];
        }
        for m in 0..=lmax {
            for sub in (m + 2)..=lmax {
                let sf = sub as f64;
                let mf = m as f64;
                sc.p_tab[sub * w + m] = ((2.0 * sf - 1.0) * c2 * sc.p_tab[(sub - 1) * w + m]
                    - (sf + mf - 1.0) * sc.p_tab[(sub - 2) * w + m])
                    / (sf - mf);
            }
        }

        // Gegenbauer table C[lam_idx * w + n] with lam_idx = sub + 1
        for lam_idx in 1..=lmax + 1 {
            let lam = lam_idx as f64;
            sc.c_tab[lam_idx * w] = 1.0;
            if lmax >= 1 {
                sc.c_tab[lam_idx * w + 1] = 2.0 * lam * t1;
            }
            for n in 2..=lmax {
                let nf = n as f64;
                sc.c_tab[lam_idx * w + n] = (2.0 * t1 * (nf + lam - 1.0)
                    * sc.c_tab[lam_idx * w + n - 1]
                    - (nf + 2.0 * lam - 2.0) * sc.c_tab[lam_idx * w + n - 2])
                    / nf;
            }
        }

        out.clear();
        out.reserve(self.mode_count());
        for l in 0..=self.truncation {
            let dim = eigenspace_dim(l);
            let labels = &self.seed_labels[l];
            let t = &self.transforms[l];
            if self.diagonal_transform {
                for (row, (sub, m)) in labels.iter().enumerate() {
                    let mm = m.unsigned_abs() as usize;
                    let seed = sc.sin1_pow[*sub]
                        * sc.c_tab[(*sub + 1) * w + (l - sub)]
                        * sc.p_tab[*sub * w + mm]
                        * if *m >= 0 { sc.cos_m[mm] } else { sc.sin_m[mm] };
                    out.push(t[row * dim + row] * seed);
                }
            } else {
                sc.seeds.clear();
                for (sub, m) in labels {
                    let mm = m.unsigned_abs() as usize;
                    sc.seeds.push(
                        sc.sin1_pow[*sub]
                            * sc.c_tab[(*sub + 1) * w + (l - sub)]
                            * sc.p_tab[*sub * w + mm]
                            * if *m >= 0 { sc.cos_m[mm] } else { sc.sin_m[mm] },
                    );
                }
                for row in 0..dim {
                    let mut acc = 0.0;
                    for (k, sv) in sc.seeds.iter().enumerate() {
                        acc += t[row * dim + k] * sv;
                    }
                    out.push(acc);
                }
            }
        }
    }

    /// Mode values at a stored grid node (no recomputation).
    pub fn modes_at_grid_node(&self, g: usize) -> Vec<f64> {
        self.values.iter().map(|col| col[g]).collect()
    }

    /// Synthesis of a coefficient set at an arbitrary unit direction.
    pub fn synthesize_at(&self, data: &BoundaryData, dir: [f64; 4]) -> f64 {
        let modes = self.eval_modes_at(dir);
        data.coeffs
            .iter()
            .zip(&modes)
            .map(|(c, v)| c * v)
            .sum()
    }

    pub fn mode_values(&self, mode: HarmonicMode) -> &[f64] {
        &self.values[mode.flat_index()]
    }

    pub fn mode_count(&self) -> usize {
        self.values.len()
    }

    /// Projects node values onto the orthonormal basis up to degree `l_max`.
    pub fn decompose(&self, node_values: &[f64], l_max: usize, regularity: u8) -> Result<BoundaryData> {
        if l_max > self.truncation {
            return Err(Error::GridTooCoarse {
                exact: self.grid.exact_degree,
                requested: l_max,
            });
        }
        let mut coeffs = vec![0.0; mode_count(l_max)];
        for (m, c) in coeffs.iter_mut().enumerate() {
            *c = self.grid.inner(node_values, &self.values[m]);
        }
        Ok(BoundaryData {
            truncation: l_max,
            regularity,
            coeffs,
        })
    }

    /// Evaluates a coefficient set at every grid node.
    pub fn synthesize(&self, data: &BoundaryData) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.len()];
        for (m, c) in data.coeffs.iter().enumerate() {
            if *c == 0.0 {
                continue;
            }
            for (o, v) in out.iter_mut().zip(&self.values[m]) {
                *o += c * v;
            }
        }
        out
    }

    /// Constant-exactness check value: quadrature of 1.
    pub fn surface_area(&self) -> f64 {
        self.grid.weights.iter().sum()
    }
}

/// Seed (non-normalized) harmonic of degree l: sin^sub(t1) C_{l-sub}^{(sub+1)}(cos t1)
/// times a real fibre harmonic of angular momentum sub.
fn seed_harmonic(l: usize, sub: usize, m: i64, node: &[f64; 4]) -> f64 {
    let t = node[0].clamp(-1.0, 1.0);
    let sin1_sq = 1.0 - t * t;
    let sin1 = sin1_sq.sqrt();
    // fibre direction (cos t2, sin t2 cos t3, sin t2 sin t3)
    let (c2, phi) = if sin1 > 1e-300 {
        let c2 = (node[1] / sin1).clamp(-1.0, 1.0);
        let phi = node[3].atan2(node[2]);
        (c2, phi)
    } else {
        (1.0, 0.0)
    };
    let radial = sin1.powi(sub as i32) * poly::gegenbauer(l - sub, sub as f64 + 1.0, t);
    let mm = m.unsigned_abs() as usize;
    let fibre = poly::assoc_legendre(sub, mm, c2)
        * if m >= 0 {
            (mm as f64 * phi).cos()
        } else {
            (mm as f64 * phi).sin()
        };
    radial * fibre
}

/// Truncated coefficient set of a scalar function on S^3.
///
/// `regularity` records whether the data plays the role of a C^{4,alpha}
/// trace (4) or a C^{2,alpha} Laplacian trace (2); it is metadata only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryData {
    pub truncation: usize,
    pub regularity: u8,
    /// Coefficients in the orthonormal basis, flat-indexed by `HarmonicMode`.
    pub coeffs: Vec<f64>,
}

impl BoundaryData {
    pub fn zero(truncation: usize, regularity: u8) -> Self {
        Self {
            truncation,
            regularity,
            coeffs: vec![0.0; mode_count(truncation)],
        }
    }

    /// Data representing the constant function `c`.
    pub fn constant(c: f64, truncation: usize, regularity: u8) -> Self {
        let mut out = Self::zero(truncation, regularity);
        out.coeffs[0] = c * S3_AREA.sqrt();
        out
    }

    /// Data representing sum_i a_i e_i with e_i the coordinate functions.
    pub fn from_ell1(a: [f64; 4], truncation: usize, regularity: u8) -> Self {
        let mut out = Self::zero(truncation, regularity);
        let norm = coordinate_l2_norm();
        for i in 0..4 {
            out.coeffs[1 + i] = a[i] * norm;
        }
        out
    }

    pub fn coeff(&self, mode: HarmonicMode) -> f64 {
        self.coeffs[mode.flat_index()]
    }

    pub fn coeff_mut(&mut self, mode: HarmonicMode) -> &mut f64 {
        &mut self.coeffs[mode.flat_index()]
    }

    /// Value of the constant component as a function (not a coefficient).
    pub fn constant_value(&self) -> f64 {
        self.coeffs[0] / S3_AREA.sqrt()
    }

    /// Degree-1 component in coordinate-function form: returns a with
    /// (degree-1 part) = sum_i a_i e_i.
    pub fn ell1_vector(&self) -> [f64; 4] {
        let norm = coordinate_l2_norm();
        let mut a = [0.0; 4];
        for i in 0..4 {
            if self.coeffs.len() > 1 + i {
                a[i] = self.coeffs[1 + i] / norm;
            }
        }
        a
    }

    /// Exact orthogonal three-way split (constant, degree-1, perpendicular).
    /// The parts reproduce the original coefficients bit-exactly when summed.
    pub fn split(&self) -> (BoundaryData, BoundaryData, BoundaryData) {
        let mut c = Self::zero(self.truncation, self.regularity);
        let mut e = Self::zero(self.truncation, self.regularity);
        let mut p = Self::zero(self.truncation, self.regularity);
        c.coeffs[0] = self.coeffs[0];
        for i in 1..5.min(self.coeffs.len()) {
            e.coeffs[i] = self.coeffs[i];
        }
        for i in 5..self.coeffs.len() {
            p.coeffs[i] = self.coeffs[i];
        }
        (c, e, p)
    }

    /// Zeroes the constant and degree-1 components in place.
    pub fn project_perp(&mut self) {
        for c in self.coeffs.iter_mut().take(5) {
            *c = 0.0;
        }
    }

    pub fn is_perp(&self, tol: f64) -> bool {
        self.coeffs.iter().take(5).all(|c| c.abs() <= tol)
    }

    /// Coefficient-space l2 norm.
    pub fn norm(&self) -> f64 {
        self.coeffs.iter().map(|c| c * c).sum::<f64>().sqrt()
    }

    pub fn scale(&mut self, s: f64) {
        for c in &mut self.coeffs {
            *c *= s;
        }
    }

    pub fn axpy(&mut self, a: f64, other: &BoundaryData) {
        assert_eq!(self.coeffs.len(), other.coeffs.len());
        for (x, y) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *x += a * y;
        }
    }

    /// Iterates (mode, coefficient) pairs.
    pub fn iter_modes(&self) -> impl Iterator<Item = (HarmonicMode, f64)> + '_ {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (mode_from_flat(i), *c))
    }
}

/// Admissibility functionals for a boundary pair (phi, psi):
/// s0 = int (8 phi - psi), s1[i] = int (12 phi - psi) e_i, t0 = int psi.
/// Interior data is admissible iff s0 = 0 and s1 = 0; exterior data iff
/// t0 = 0, both up to `1e-10 * data norm`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ConstraintResiduals {
    pub s0: f64,
    pub s1: [f64; 4],
    pub t0: f64,
}

pub const ADMISSIBILITY_RTOL: f64 = 1e-10;

pub fn constraint_residuals(phi: &BoundaryData, psi: &BoundaryData) -> ConstraintResiduals {
    let sqrt_area = S3_AREA.sqrt();
    let e_norm = coordinate_l2_norm();
    let s0 = (8.0 * phi.coeffs[0] - psi.coeffs[0]) * sqrt_area;
    let mut s1 = [0.0; 4];
    for i in 0..4 {
        s1[i] = (12.0 * phi.coeffs.get(1 + i).copied().unwrap_or(0.0)
            - psi.coeffs.get(1 + i).copied().unwrap_or(0.0))
            * e_norm;
    }
    let t0 = psi.coeffs[0] * sqrt_area;
    ConstraintResiduals { s0, s1, t0 }
}

impl ConstraintResiduals {
    pub fn interior_admissible(&self, data_norm: f64) -> bool {
        let tol = ADMISSIBILITY_RTOL * data_norm.max(1.0);
        self.s0.abs() <= tol && self.s1.iter().all(|s| s.abs() <= tol)
    }

    pub fn exterior_admissible(&self, data_norm: f64) -> bool {
        self.t0.abs() <= ADMISSIBILITY_RTOL * data_norm.max(1.0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn basis(l: usize) -> SphereBasis {
        let grid = Arc::new(SphericalGrid::new(2 * l));
        SphereBasis::new(grid, l).unwrap()
    }

    #[test]
    fn eigenvalues_integer() {
        assert_eq!(eigenvalue_s3(0), 0);
        assert_eq!(eigenvalue_s3(1), 3);
        assert_eq!(eigenvalue_s3(2), 8);
        assert_eq!(eigenvalue_s4(0), 0);
        assert_eq!(eigenvalue_s4(1), 4);
        assert_eq!(eigenvalue_s4(2), 10);
    }

    #[test]
    fn s4_dispersion_relation_selects_degree_one() {
        // lambda^2 + 2 lambda - 24 = 0 exactly at lambda = 4 (degree 1)
        let poly = |lam: i64| lam * lam + 2 * lam - 24;
        assert_eq!(poly(eigenvalue_s4(1) as i64), 0);
        assert_eq!(poly(eigenvalue_s4(2) as i64), 96);
        for l in 0..12u64 {
            let z = poly(eigenvalue_s4(l) as i64);
            assert_eq!(z == 0, l == 1);
        }
    }

    #[test]
    fn weights_positive_and_sum_to_area() {
        let grid = SphericalGrid::new(16);
        assert!(grid.weights.iter().all(|w| *w > 0.0));
        let total: f64 = grid.weights.iter().sum();
        assert_abs_diff_eq!(total / S3_AREA, 1.0, epsilon = 1e-12);
    }

    #[test]
    fn basis_is_orthonormal() {
        let b = basis(4);
        let n = b.mode_count();
        for i in 0..n {
            for j in i..n {
                let ip = b.grid.inner(&b.values[i], &b.values[j]);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(ip, expect, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn degree_one_modes_are_coordinates() {
        let b = basis(3);
        let norm = coordinate_l2_norm();
        for i in 0..4 {
            let vals = b.mode_values(HarmonicMode::new(1, i));
            for (g, node) in b.grid.nodes.iter().enumerate() {
                assert_abs_diff_eq!(vals[g], node[i] / norm, epsilon = 1e-11);
            }
        }
    }

    #[test]
    fn decompose_constant_and_coordinate() {
        let b = basis(4);
        let ones = vec![1.0; b.grid.len()];
        let d = b.decompose(&ones, 4, 4).unwrap();
        assert_abs_diff_eq!(d.coeffs[0], S3_AREA.sqrt(), epsilon = 1e-12);
        for c in &d.coeffs[1..] {
            assert!(c.abs() < 1e-11);
        }
        assert_abs_diff_eq!(d.constant_value(), 1.0, epsilon = 1e-12);

        let e1: Vec<f64> = b.grid.nodes.iter().map(|n| n[0]).collect();
        let d = b.decompose(&e1, 4, 4).unwrap();
        assert_abs_diff_eq!(d.coeffs[1], coordinate_l2_norm(), epsilon = 1e-11);
        for (i, c) in d.coeffs.iter().enumerate() {
            if i != 1 {
                assert!(c.abs() < 1e-11, "mode {i} leaked {c}");
            }
        }
    }

    #[test]
    fn product_of_coordinates_is_pure_degree_two() {
        let b = basis(4);
        let f: Vec<f64> = b.grid.nodes.iter().map(|n| n[0] * n[1]).collect();
        let d = b.decompose(&f, 4, 4).unwrap();
        // no content at degrees 0, 1
        for i in 0..5 {
            assert!(d.coeffs[i].abs() < 1e-11);
        }
        // content at degree 2 nonzero
        let deg2: f64 = (5..mode_count(2)).map(|i| d.coeffs[i] * d.coeffs[i]).sum();
        assert!(deg2 > 1e-4);
        // nothing beyond degree 2
        for i in mode_count(2)..d.coeffs.len() {
            assert!(d.coeffs[i].abs() < 1e-11);
        }
        // round trip
        let back = b.synthesize(&d);
        for (x, y) in back.iter().zip(&f) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-10);
        }
    }

    #[test]
    fn parseval_for_band_limited_data() {
        let b = basis(5);
        let mut d = BoundaryData::zero(5, 4);
        for (i, c) in d.coeffs.iter_mut().enumerate() {
            *c = ((i * 7919 + 13) % 101) as f64 / 101.0 - 0.5;
        }
        let vals = b.synthesize(&d);
        let grid_norm_sq = b.grid.inner(&vals, &vals);
        let coeff_norm_sq: f64 = d.coeffs.iter().map(|c| c * c).sum();
        assert_abs_diff_eq!(grid_norm_sq / coeff_norm_sq, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn split_is_exact_and_orthogonal() {
        let b = basis(4);
        let mut d = BoundaryData::zero(4, 4);
        for (i, c) in d.coeffs.iter_mut().enumerate() {
            *c = (i as f64 * 0.37).sin();
        }
        let (c, e, p) = d.split();
        let mut sum = c.clone();
        sum.axpy(1.0, &e);
        sum.axpy(1.0, &p);
        assert_eq!(sum.coeffs, d.coeffs);

        let vc = b.synthesize(&c);
        let ve = b.synthesize(&e);
        let vp = b.synthesize(&p);
        assert!(b.grid.inner(&vc, &ve).abs() < 1e-12 * d.norm().powi(2).max(1.0));
        assert!(b.grid.inner(&vc, &vp).abs() < 1e-12 * d.norm().powi(2).max(1.0));
        assert!(b.grid.inner(&ve, &vp).abs() < 1e-12 * d.norm().powi(2).max(1.0));
    }

    #[test]
    fn constraint_examples() {
        let l = 4;
        // phi = c, psi = 8c  -> admissible interior
        let phi = BoundaryData::constant(0.7, l, 4);
        let psi = BoundaryData::constant(5.6, l, 2);
        let r = constraint_residuals(&phi, &psi);
        assert_abs_diff_eq!(r.s0, 0.0, epsilon = 1e-12);
        for s in r.s1 {
            assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
        }
        assert!(r.interior_admissible(phi.norm() + psi.norm()));

        // phi = a e1, psi = 12 a e1 -> admissible interior
        let a = 0.31;
        let phi = BoundaryData::from_ell1([a, 0.0, 0.0, 0.0], l, 4);
        let psi = BoundaryData::from_ell1([12.0 * a, 0.0, 0.0, 0.0], l, 2);
        let r = constraint_residuals(&phi, &psi);
        assert_abs_diff_eq!(r.s0, 0.0, epsilon = 1e-12);
        for s in r.s1 {
            assert_abs_diff_eq!(s, 0.0, epsilon = 1e-12);
        }

        // psi = 1 -> t0 = 2 pi^2
        let phi = BoundaryData::zero(l, 4);
        let psi = BoundaryData::constant(1.0, l, 2);
        let r = constraint_residuals(&phi, &psi);
        assert_abs_diff_eq!(r.t0, S3_AREA, epsilon = 1e-12);
        assert!(!r.exterior_admissible(1.0));
    }

    #[test]
    fn arbitrary_direction_evaluation_matches_grid() {
        let b = basis(4);
        // at grid nodes the two paths agree
        for g in [0usize, 17, 333] {
            let node = b.grid.nodes[g % b.grid.len()];
            let vals = b.eval_modes_at(node);
            for m in 0..b.mode_count() {
                assert_abs_diff_eq!(vals[m], b.values[m][g % b.grid.len()], epsilon = 1e-10);
            }
        }
        // at a non-grid direction, degree-1 modes still equal x_i / |e_i|
        let dir = [0.5_f64, -0.5, 0.5, 0.5];
        let vals = b.eval_modes_at(dir);
        for i in 0..4 {
            assert_abs_diff_eq!(
                vals[1 + i],
                dir[i] / coordinate_l2_norm(),
                epsilon = 1e-10
            );
        }
    }

    #[test]
    fn coarse_grid_is_rejected() {
        let grid = Arc::new(SphericalGrid::new(6));
        assert!(SphereBasis::new(grid, 4).is_err());
    }
}
