//! Exterior stage: on the punctured domain solve
//!
//! ```text
//!   v_ext = Ginv [ Ext( rho^4 V e^{u_ext_base + v_ext} - Lap^2 u_ext_base ) ],
//!   u_ext_base = sum_j (1+lambda^j) G(y^j, .)
//!              + sum_j chi_{r0}(. - y^j) H_ext(data^j; (. - y^j)/r_eps),
//! ```
//!
//! by Picard iteration. Ext continues the right-hand side smoothly into the
//! excluded balls (radial continuation under a cutoff that is 1 outside the
//! interface sphere and 0 inside its half-radius). Ginv is the inverse of
//! the Navier bi-Laplacian on the domain — unique, since Lap^2 with u =
//! Lap u = 0 boundary conditions has no kernel — realized either modally
//! (harmonic collocation around the domain center, exact boundary rows) or
//! as Green-integral quadrature over a stored density; the two agree up to
//! quadrature error.

use super::{ScaleParams, SolverConfig};
use crate::error::{Error, Result};
use crate::extension::{
    exterior_extension_projected, Cutoff, ExtensionField, ProjectedOut, RadialExpansion,
};
use crate::green::{dist4, norm4, sub4, DomainModel, GreenModel, PotentialModel};
use crate::radial::{
    self, interval_bilaplacian_rows, interval_laplacian_rows, RadialGrid,
};
use crate::sphere::{mode_count, mode_from_flat, BoundaryData, SphereBasis};
use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use std::sync::Arc;

/// Inner cutoff of the right-hand-side extension: 1 for t >= 1, 0 for
/// t <= 1/2 (t = distance to the point over r_eps).
fn inner_cutoff() -> Cutoff {
    Cutoff::new(0.5, 1.0)
}

/// Modal collocation solver for the Navier bi-Laplacian around the domain
/// center.
pub struct ExteriorSolver {
    pub basis: Arc<SphereBasis>,
    pub grid: Arc<RadialGrid>,
    pub truncation: usize,
    is_ball: bool,
    lap_ops: Vec<radial::ModeOperator>,
    factorizations: Vec<nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>>,
}

impl ExteriorSolver {
    /// Builds the solver for one epsilon: the radial grid clusters around
    /// the interface radius where the concentrated source lives.
    pub fn new(
        domain: &DomainModel,
        basis: Arc<SphereBasis>,
        scales: &ScaleParams,
        n_radial: usize,
    ) -> Result<Self> {
        let truncation = basis.truncation;
        let (grid, is_ball) = match domain {
            DomainModel::Ball { radius, .. } => {
                let g = RadialGrid::clustered(
                    n_radial,
                    0.0,
                    *radius,
                    1.6 * scales.r_eps,
                    scales.r_eps,
                    6.0,
                );
                (Arc::new(g), true)
            }
            DomainModel::Annulus {
                r_inner, r_outer, ..
            } => {
                let g = RadialGrid::clustered(
                    n_radial,
                    *r_inner,
                    *r_outer,
                    (r_inner + r_outer) / 2.0,
                    (r_outer - r_inner) / 4.0,
                    2.0,
                );
                (Arc::new(g), false)
            }
            DomainModel::Tabulated { .. } => {
                return Err(Error::UnsupportedDomain(
                    "matched solves need a ball or annulus domain",
                ))
            }
        };

        let n = grid.len();
        let mut lap_ops = Vec::with_capacity(truncation + 1);
        let mut factorizations = Vec::with_capacity(truncation + 1);
        for l in 0..=truncation {
            let (bilap, lap) = if is_ball {
                (
                    radial::modal_bilaplacian_rows(&grid, l),
                    radial::modal_laplacian_rows(&grid, l),
                )
            } else {
                (
                    interval_bilaplacian_rows(&grid, l),
                    interval_laplacian_rows(&grid, l),
                )
            };
            let mut mat = bilap.to_matrix();
            // Navier boundary rows
            if is_ball {
                // origin handled by parity (l = 0 PDE row) or Dirichlet
                if l >= 1 {
                    for k in 0..n {
                        mat[(0, k)] = 0.0;
                    }
                    mat[(0, 0)] = 1.0;
                }
                set_row(&mut mat, n - 2, &lap.rows[n - 1], n);
                dirichlet_row(&mut mat, n - 1, n - 1, n);
            } else {
                set_row(&mut mat, 1, &lap.rows[0], n);
                dirichlet_row(&mut mat, 0, 0, n);
                set_row(&mut mat, n - 2, &lap.rows[n - 1], n);
                dirichlet_row(&mut mat, n - 1, n - 1, n);
            }
            factorizations.push(mat.lu());
            lap_ops.push(lap);
        }
        Ok(Self {
            basis,
            grid,
            truncation,
            is_ball,
            lap_ops,
            factorizations,
        })
    }

    /// Rows whose right-hand side must be zeroed (boundary rows).
    fn homogeneous_rows(&self, l: usize) -> Vec<usize> {
        let n = self.grid.len();
        if self.is_ball {
            if l >= 1 {
                vec![0, n - 2, n - 1]
            } else {
                vec![n - 2, n - 1]
            }
        } else {
            vec![0, 1, n - 2, n - 1]
        }
    }

    /// Solves Lap^2 w = f (modal right-hand side) with Navier conditions.
    pub fn solve(&self, rhs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        let n = self.grid.len();
        rhs.par_iter()
            .enumerate()
            .map(|(m, values)| {
                let l = mode_from_flat(m).degree;
                let mut b = DVector::from_column_slice(values);
                for i in self.homogeneous_rows(l) {
                    b[i] = 0.0;
                }
                let sol = self.factorizations[l]
                    .solve(&b)
                    .expect("Navier system is nonsingular");
                let mut out: Vec<f64> = sol.data.into();
                out.truncate(n);
                out
            })
            .collect()
    }
}

fn set_row(mat: &mut DMatrix<f64>, row: usize, stencil: &radial::StencilRow, n: usize) {
    for k in 0..n {
        mat[(row, k)] = 0.0;
    }
    for (col, w) in &stencil.entries {
        mat[(row, *col)] += w;
    }
    mat[(row, row_center(stencil, row))] += stencil.zero_order;
}

fn row_center(_stencil: &radial::StencilRow, row: usize) -> usize {
    row
}

fn dirichlet_row(mat: &mut DMatrix<f64>, row: usize, node: usize, n: usize) {
    for k in 0..n {
        mat[(row, k)] = 0.0;
    }
    mat[(row, node)] = 1.0;
}

/// A modal field around the domain center with pointwise evaluators.
#[derive(Debug, Clone)]
pub struct CenteredField {
    pub grid: Arc<RadialGrid>,
    pub basis: Arc<SphereBasis>,
    pub center: [f64; 4],
    /// values[m][i]
    pub values: Vec<Vec<f64>>,
    /// mode-wise Laplacian profiles
    pub lap_values: Vec<Vec<f64>>,
}

impl CenteredField {
    pub fn value_at(&self, x: [f64; 4]) -> f64 {
        self.eval_profiles(&self.values, x)
    }

    pub fn laplacian_at(&self, x: [f64; 4]) -> f64 {
        self.eval_profiles(&self.lap_values, x)
    }

    /// Directional derivative along `dir` by central differences with a step
    /// tied to the local grid spacing.
    pub fn directional_derivative(&self, x: [f64; 4], dir: [f64; 4], h: f64) -> f64 {
        let xp = [
            x[0] + h * dir[0],
            x[1] + h * dir[1],
            x[2] + h * dir[2],
            x[3] + h * dir[3],
        ];
        let xm = [
            x[0] - h * dir[0],
            x[1] - h * dir[1],
            x[2] - h * dir[2],
            x[3] - h * dir[3],
        ];
        (self.value_at(xp) - self.value_at(xm)) / (2.0 * h)
    }

    pub fn laplacian_directional_derivative(&self, x: [f64; 4], dir: [f64; 4], h: f64) -> f64 {
        let xp = [
            x[0] + h * dir[0],
            x[1] + h * dir[1],
            x[2] + h * dir[2],
            x[3] + h * dir[3],
        ];
        let xm = [
            x[0] - h * dir[0],
            x[1] - h * dir[1],
            x[2] - h * dir[2],
            x[3] - h * dir[3],
        ];
        (self.eval_profiles(&self.lap_values, xp) - self.eval_profiles(&self.lap_values, xm))
            / (2.0 * h)
    }

    fn eval_profiles(&self, profiles: &[Vec<f64>], x: [f64; 4]) -> f64 {
        let p = sub4(x, self.center);
        let r = norm4(p);
        let r = r.clamp(self.grid.nodes[0], self.grid.r_max());
        let dir = if r > 0.0 {
            p.map(|v| v / norm4(p).max(1e-300))
        } else {
            [1.0, 0.0, 0.0, 0.0]
        };
        let modes = self.basis.eval_modes_at(dir);
        let stencil = super::interior::InterpStencil::new(&self.grid, r);
        let mut acc = 0.0;
        for (m, profile) in profiles.iter().enumerate() {
            acc += stencil.apply(profile) * modes[m];
        }
        acc
    }
}

/// Converged exterior stage.
pub struct ExteriorState {
    pub lambda: Vec<f64>,
    pub y: Vec<[f64; 4]>,
    pub data: Vec<(BoundaryData, BoundaryData)>,
    pub extensions: Vec<ExtensionField>,
    pub projected_out: Vec<ProjectedOut>,
    pub correction: CenteredField,
    pub norm_nu: f64,
    pub contraction_history: Vec<f64>,
    pub sweeps: usize,
}

/// Everything frozen during the exterior Picard sweeps.
struct BaseField<'a> {
    green: &'a GreenModel,
    potential: &'a PotentialModel,
    lambda: &'a [f64],
    y: &'a [[f64; 4]],
    extensions: &'a [ExtensionField],
    /// Lap^2 of the cutoff-windowed exterior extensions, per point and mode.
    bilap_windowed: Vec<Vec<RadialExpansion>>,
    basis: Arc<SphereBasis>,
    r_eps: f64,
    r0: f64,
    rho4: f64,
}

impl BaseField<'_> {
    /// u_ext_base at a point strictly outside the interface spheres.
    fn base_value(&self, x: [f64; 4]) -> Result<f64> {
        let mut u = 0.0;
        for (l, yl) in self.y.iter().enumerate() {
            u += (1.0 + self.lambda[l]) * self.green.green(*yl, x)?;
        }
        for (j, yj) in self.y.iter().enumerate() {
            let s = dist4(x, *yj);
            if s < self.r0 {
                let chi = Cutoff::interface(self.r0).eval(s);
                if chi > 0.0 {
                    let dir = sub4(x, *yj).map(|v| v / s);
                    let modes = self.basis.eval_modes_at(dir);
                    let zeta = s / self.r_eps;
                    let mut h = 0.0;
                    for (m, e) in self.extensions[j].modes.iter().enumerate() {
                        if !e.terms.is_empty() {
                            h += e.eval(zeta) * modes[m];
                        }
                    }
                    u += chi * h;
                }
            }
        }
        Ok(u)
    }

    /// Lap^2 u_ext_base: nonzero only on the cutoff transition annuli.
    fn base_bilaplacian(&self, x: [f64; 4]) -> f64 {
        let mut acc = 0.0;
        for (j, yj) in self.y.iter().enumerate() {
            let s = dist4(x, *yj);
            if s > self.r0 / 2.0 && s < self.r0 {
                let dir = sub4(x, *yj).map(|v| v / s);
                let modes = self.basis.eval_modes_at(dir);
                for (m, e) in self.bilap_windowed[j].iter().enumerate() {
                    if !e.terms.is_empty() {
                        acc += e.eval(s) * modes[m];
                    }
                }
            }
        }
        acc
    }

    /// Precomputed sweep-invariant data of one collocation node: the
    /// (possibly inward-projected) evaluation point, the extension weight,
    /// the frozen base value and bi-Laplacian and the potential value.
    fn node_table(&self, x: [f64; 4], ws: &mut EvalScratch) -> Result<NodeTable> {
        let mut jmin = 0usize;
        let mut smin = f64::INFINITY;
        for (j, yj) in self.y.iter().enumerate() {
            let s = dist4(x, *yj);
            if s < smin {
                smin = s;
                jmin = j;
            }
        }
        let (eval_point, weight) = if smin >= self.r_eps {
            (x, 1.0)
        } else {
            let t = smin / self.r_eps;
            let w = 1.0 - inner_cutoff().eval(t); // 1 outside, 0 inside half
            if w == 0.0 {
                return Ok(NodeTable::dead());
            }
            let yj = self.y[jmin];
            let dir = sub4(x, yj).map(|v| v / smin.max(1e-300));
            let p = [
                yj[0] + self.r_eps * dir[0],
                yj[1] + self.r_eps * dir[1],
                yj[2] + self.r_eps * dir[2],
                yj[3] + self.r_eps * dir[3],
            ];
            (p, w)
        };
        let (base_value, base_bilap) = self.base_pair(eval_point, ws)?;
        Ok(NodeTable {
            eval_point,
            weight,
            base_value,
            base_bilap,
            potential: self.potential.eval(eval_point),
        })
    }

    /// Base value and base bi-Laplacian in one pass (they share the
    /// direction-frame harmonics of the extension terms).
    fn base_pair(&self, x: [f64; 4], ws: &mut EvalScratch) -> Result<(f64, f64)> {
        let mut u = 0.0;
        let mut bilap = 0.0;
        for (l, yl) in self.y.iter().enumerate() {
            u += (1.0 + self.lambda[l]) * self.green.green(*yl, x)?;
        }
        for (j, yj) in self.y.iter().enumerate() {
            let s = dist4(x, *yj);
            if s < self.r0 {
                let chi = Cutoff::interface(self.r0).eval(s);
                let in_transition = s > self.r0 / 2.0;
                if chi > 0.0 || in_transition {
                    let dir = sub4(x, *yj).map(|v| v / s);
                    self.basis.eval_modes_into(dir, &mut ws.scratch, &mut ws.modes);
                    let zeta = s / self.r_eps;
                    for (m, e) in self.extensions[j].modes.iter().enumerate() {
                        if chi > 0.0 && !e.terms.is_empty() {
                            u += chi * e.eval(zeta) * ws.modes[m];
                        }
                    }
                    if in_transition {
                        for (m, e) in self.bilap_windowed[j].iter().enumerate() {
                            if !e.terms.is_empty() {
                                bilap += e.eval(s) * ws.modes[m];
                            }
                        }
                    }
                }
            }
        }
        Ok((u, bilap))
    }
}

/// Per-worker evaluation scratch.
pub struct EvalScratch {
    scratch: crate::sphere::ModeScratch,
    modes: Vec<f64>,
}

impl EvalScratch {
    pub fn new(truncation: usize) -> Self {
        Self {
            scratch: crate::sphere::ModeScratch::new(truncation),
            modes: Vec::new(),
        }
    }
}

/// Sweep-invariant per-node data.
#[derive(Debug, Clone, Copy)]
struct NodeTable {
    eval_point: [f64; 4],
    weight: f64,
    base_value: f64,
    base_bilap: f64,
    potential: f64,
}

impl NodeTable {
    fn dead() -> Self {
        NodeTable {
            eval_point: [0.0; 4],
            weight: 0.0,
            base_value: 0.0,
            base_bilap: 0.0,
            potential: 0.0,
        }
    }
}

/// Exterior nonlinear solve.
#[allow(clippy::too_many_arguments)]
#[allow(clippy::too_many_arguments)]
pub fn exterior_solve(
    scales: &ScaleParams,
    lambda: &[f64],
    y: &[[f64; 4]],
    data: &[(BoundaryData, BoundaryData)],
    green: &GreenModel,
    potential: &PotentialModel,
    solver: &ExteriorSolver,
    config: &SolverConfig,
    rho: f64,
    warm_start: Option<&[Vec<f64>]>,
) -> Result<ExteriorState> {
    let r0 = green.domain.r0();
    let basis = solver.basis.clone();
    let grid = solver.grid.clone();
    let trunc = solver.truncation;
    let center = green.domain.center();

    // admissible exterior extensions per point
    let mut extensions = Vec::with_capacity(y.len());
    let mut projected = Vec::with_capacity(y.len());
    for (phi, psi) in data {
        let (e, p) = exterior_extension_projected(phi, psi);
        extensions.push(e);
        projected.push(p);
    }

    // Lap^2 of the cutoff-windowed extensions, exact per mode: the window is
    // a polynomial on [r0/2, r0] and the extension is a Laurent expansion in
    // s / r_eps
    let chi = Cutoff::interface(r0);
    let poly = chi.transition_poly();
    let mut bilap_windowed = Vec::with_capacity(y.len());
    for ext in &extensions {
        let mut per_mode = Vec::with_capacity(mode_count(trunc));
        for (m, e) in ext.modes.iter().enumerate() {
            let l = mode_from_flat(m).degree;
            // rescale powers of zeta = s/r_eps to powers of s
            let mut scaled = RadialExpansion::zero();
            for t in &e.terms {
                scaled.push(
                    t.power,
                    t.log_power,
                    t.coeff * scales.r_eps.powi(-t.power),
                );
            }
            scaled.canonicalize();
            let windowed = scaled.mul_poly(&poly);
            per_mode.push(windowed.laplacian(l).laplacian(l));
        }
        bilap_windowed.push(per_mode);
    }

    let base = BaseField {
        green,
        potential,
        lambda,
        y,
        extensions: &extensions,
        bilap_windowed,
        basis: basis.clone(),
        r_eps: scales.r_eps,
        r0,
        rho4: rho.powi(4),
    };

    let n = grid.len();
    let n_modes = mode_count(trunc);
    let mut warm = false;
    let mut correction = CenteredField {
        grid: grid.clone(),
        basis: basis.clone(),
        center,
        values: match warm_start {
            Some(prev) if prev.len() == n_modes && prev[0].len() == n => {
                warm = true;
                prev.to_vec()
            }
            _ => vec![vec![0.0; n]; n_modes],
        },
        lap_values: vec![vec![0.0; n]; n_modes],
    };

    // collocation points: radial node x angular node, positions precomputed
    let points: Vec<Vec<[f64; 4]>> = grid
        .nodes
        .iter()
        .map(|r| {
            basis
                .grid
                .nodes
                .iter()
                .map(|dir| {
                    [
                        center[0] + r * dir[0],
                        center[1] + r * dir[1],
                        center[2] + r * dir[2],
                        center[3] + r * dir[3],
                    ]
                })
                .collect()
        })
        .collect();

    let mut history = Vec::new();
    let mut last_delta: Option<f64> = None;
    let mut non_contracting = 0usize;
    let mut sweeps = 0usize;

    // sweep-invariant tables (base field, weights, projected points)
    let _t_tables = std::time::Instant::now();
    let r_min = grid.nodes[0];
    let r_max = grid.r_max();
    let live_row = |i: usize| -> bool {
        let r = grid.nodes[i];
        !(r >= r_max - 1e-14 * r_max || (!solver.is_ball && r <= r_min * (1.0 + 1e-14)))
    };
    let tables: Result<Vec<Vec<NodeTable>>> = points
        .par_iter()
        .enumerate()
        .map_init(
            || EvalScratch::new(trunc),
            |ws, (i, row)| {
                if !live_row(i) {
                    return Ok(vec![NodeTable::dead(); row.len()]);
                }
                row.iter().map(|p| base.node_table(*p, ws)).collect()
            },
        )
        .collect();
    let tables = tables?;
    if std::env::var("BILAP_TIMING").is_ok() {
        eprintln!("[ext] tables built: {:.2?}", _t_tables.elapsed());
    }
    // custom mode vectors only where the evaluation point was projected off
    // the grid direction; everywhere else the basis columns apply
    let _t_proj = std::time::Instant::now();
    let mut proj_scratch = EvalScratch::new(trunc);
    let projected_modes: Vec<Vec<Option<Vec<f64>>>> = points
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(g, p)| {
                    let t = &tables[i][g];
                    if t.weight == 0.0 || !live_row(i) || t.eval_point == *p {
                        None
                    } else {
                        let d = sub4(t.eval_point, center);
                        let r = norm4(d);
                        let mut out = Vec::new();
                        basis.eval_modes_into(
                            d.map(|v| v / r.max(1e-300)),
                            &mut proj_scratch.scratch,
                            &mut out,
                        );
                        Some(out)
                    }
                })
                .collect()
        })
        .collect();

    if std::env::var("BILAP_TIMING").is_ok() {
        let count: usize = projected_modes
            .iter()
            .map(|row| row.iter().filter(|v| v.is_some()).count())
            .sum();
        eprintln!("[ext] projected modes ({count} nodes): {:.2?}", _t_proj.elapsed());
    }
    loop {
        let _t_sweep = std::time::Instant::now();
        // right-hand side on the product grid, modal per radius
        let rhs_rows: Result<Vec<Vec<f64>>> = points
            .par_iter()
            .enumerate()
            .map(|(i, _row)| {
                if !live_row(i) {
                    return Ok(vec![0.0; n_modes]);
                }
                // correction values across the whole shell in one synthesis
                let corr_row: Vec<f64> = if sweeps > 0 || warm {
                    let modal = BoundaryData {
                        truncation: trunc,
                        regularity: 4,
                        coeffs: correction.values.iter().map(|prof| prof[i]).collect(),
                    };
                    basis.synthesize(&modal)
                } else {
                    Vec::new()
                };
                let vals: Vec<f64> = tables[i]
                    .iter()
                    .enumerate()
                    .map(|(g, t)| {
                        if t.weight == 0.0 {
                            return 0.0;
                        }
                        let mut u = t.base_value;
                        if sweeps > 0 || warm {
                            match &projected_modes[i][g] {
                                None => u += corr_row[g],
                                Some(modes) => {
                                    let rp = norm4(sub4(t.eval_point, center))
                                        .clamp(grid.nodes[0], grid.r_max());
                                    let stencil =
                                        super::interior::InterpStencil::new(&grid, rp);
                                    for (m, profile) in correction.values.iter().enumerate() {
                                        u += stencil.apply(profile) * modes[m];
                                    }
                                }
                            }
                        }
                        t.weight * (base.rho4 * t.potential * u.exp() - t.base_bilap)
                    })
                    .collect();
                Ok(basis.decompose(&vals, trunc, 0)?.coeffs)
            })
            .collect();
        let rhs_rows = rhs_rows?;
        if std::env::var("BILAP_TIMING").is_ok() {
            eprintln!("[ext] sweep {sweeps} rhs: {:.2?}", _t_sweep.elapsed());
        }
        // transpose to modal profiles
        let mut rhs_modal = vec![vec![0.0; n]; n_modes];
        for (i, row) in rhs_rows.iter().enumerate() {
            for (m, c) in row.iter().enumerate() {
                rhs_modal[m][i] = *c;
            }
        }
        let sol = solver.solve(&rhs_modal);
        if std::env::var("BILAP_TIMING").is_ok() {
            eprintln!("[ext] sweep {sweeps} total after solve: {:.2?}", _t_sweep.elapsed());
        }

        // increment in the nu-weighted sup over the product grid
        let mut delta = 0.0_f64;
        for (m, profile) in sol.iter().enumerate() {
            for i in 0..n {
                let d = (profile[i] - correction.values[m][i]).abs();
                if d > delta {
                    delta = d;
                }
            }
        }
        // weight by the distance factor at the worst shells (coefficient
        // proxy; the reported norm uses the full pointwise estimator below)
        let mut plateau = false;
        if let Some(prev) = last_delta {
            let factor = delta / prev.max(1e-300);
            history.push(factor);
            // increments bouncing at the solver's rounding floor near the
            // tolerance mean convergence, not stagnation
            plateau = (0.7..1.3).contains(&factor) && delta <= 1e2 * config.tol_outer;
            if factor >= 1.0 && delta > 1e3 * config.tol_outer {
                non_contracting += 1;
                if non_contracting >= 3 {
                    return Err(Error::NonContraction {
                        stage: "exterior",
                        factor,
                    });
                }
            } else {
                non_contracting = 0;
            }
        }
        last_delta = Some(delta);
        correction.values = sol;
        sweeps += 1;
        if delta <= config.tol_outer || plateau || sweeps >= config.max_inner_sweeps {
            break;
        }
    }

    // Laplacian profiles for trace evaluation
    let _t_post = std::time::Instant::now();
    correction.lap_values = correction
        .values
        .par_iter()
        .enumerate()
        .map(|(m, profile)| {
            let l = mode_from_flat(m).degree;
            solver.lap_ops[l].apply(profile)
        })
        .collect();

    // nu-weighted sup norm of the correction over the product grid
    let mut norm_nu = 0.0_f64;
    for (i, _r) in grid.nodes.iter().enumerate() {
        let modal = BoundaryData {
            truncation: trunc,
            regularity: 4,
            coeffs: correction.values.iter().map(|p| p[i]).collect(),
        };
        let vals = basis.synthesize(&modal);
        for (g, v) in vals.iter().enumerate() {
            let p = points[i][g];
            let dist = y.iter().map(|q| dist4(p, *q)).fold(f64::INFINITY, f64::min);
            let w = if dist < r0 / 2.0 {
                dist.powf(-config.nu)
            } else {
                1.0
            };
            norm_nu = norm_nu.max(w * v.abs());
        }
    }

    if std::env::var("BILAP_TIMING").is_ok() {
        eprintln!("[ext] post (lap profiles + norm): {:.2?}", _t_post.elapsed());
    }
    Ok(ExteriorState {
        lambda: lambda.to_vec(),
        y: y.to_vec(),
        data: data.to_vec(),
        extensions,
        projected_out: projected,
        correction,
        norm_nu,
        contraction_history: history,
        sweeps,
    })
}

/// Green-integral application of the same inverse on a coarse stored
/// density, for cross-validation: returns the potential
/// (1/64 pi^2) sum_q w_q G(z_q, x) f(z_q) evaluated at `targets`.
pub fn green_integral_apply(
    green: &GreenModel,
    nodes: &[[f64; 4]],
    weights: &[f64],
    density: &[f64],
    targets: &[[f64; 4]],
) -> Result<Vec<f64>> {
    let c = 1.0 / crate::green::flux_constant();
    targets
        .iter()
        .map(|x| {
            let mut acc = 0.0;
            for ((z, w), f) in nodes.iter().zip(weights).zip(density) {
                if dist4(*z, *x) < 1e-12 {
                    continue;
                }
                acc += w * f * green.green(*z, *x)?;
            }
            Ok(c * acc)
        })
        .collect()
}

/// Quadrature nodes and weights for the Green-integral realization on a
/// ball: radial Gauss-Legendre shells times the angular grid of `basis`.
pub fn ball_quadrature(
    radius: f64,
    center: [f64; 4],
    basis: &SphereBasis,
    n_radial: usize,
) -> (Vec<[f64; 4]>, Vec<f64>) {
    let (xs, ws) = crate::sphere::poly::gauss_legendre(n_radial);
    let mut nodes = Vec::new();
    let mut weights = Vec::new();
    for (xi, wi) in xs.iter().zip(&ws) {
        let r = radius * (xi + 1.0) / 2.0;
        let wr = wi * radius / 2.0 * r.powi(3);
        for (dir, wg) in basis.grid.nodes.iter().zip(&basis.grid.weights) {
            nodes.push([
                center[0] + r * dir[0],
                center[1] + r * dir[1],
                center[2] + r * dir[2],
                center[3] + r * dir[3],
            ]);
            weights.push(wr * wg);
        }
    }
    (nodes, weights)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sphere::SphericalGrid;
    use approx::assert_abs_diff_eq;

    fn setup(l: usize, eps: f64) -> (GreenModel, Arc<SphereBasis>, ScaleParams) {
        let green = GreenModel::new(DomainModel::unit_ball()).unwrap();
        let basis =
            Arc::new(SphereBasis::new(Arc::new(SphericalGrid::new(2 * l)), l).unwrap());
        let scales = ScaleParams::new(eps, vec![(0.5_f64).exp()], 10.0, 0.5).unwrap();
        (green, basis, scales)
    }

    #[test]
    fn zero_source_gives_zero_correction() {
        // rho = 0, zero boundary data, lambda = 0: the right-hand side is
        // -Lap^2 u_base = 0 away from the points, so the correction vanishes
        let (green, basis, scales) = setup(3, 0.01);
        let solver = ExteriorSolver::new(&green.domain, basis.clone(), &scales, 120).unwrap();
        let data = vec![(BoundaryData::zero(3, 4), BoundaryData::zero(3, 2))];
        let state = exterior_solve(
            &scales,
            &[0.0],
            &[[0.0; 4]],
            &data,
            &green,
            &PotentialModel::One,
            &solver,
            &SolverConfig::default(),
            0.0,
            None,
        )
        .unwrap();
        assert!(state.norm_nu < 1e-10, "norm {}", state.norm_nu);
    }

    #[test]
    fn navier_solver_reproduces_manufactured_solution() {
        // w = (R^2 - r^2)^2 / 8 is radial with w = 0, Lap w = const*(...)
        // easier: manufacture w = sin-free polynomial satisfying both BCs:
        // w = (1 - r^2)^2 has w(1) = 0, Lap w = 16 r^2 - ... check: w' =
        // -4r(1-r^2), Lap w = w'' + 3w'/r = (-4 + 12 r^2) + 3(-4 + 4 r^2)
        //       = -16 + 24 r^2, Lap w(1) = 8 != 0.
        // Use w = r^6 - 3 r^4 + 3 r^2 - 1? Simplest: solve for Lap^2 w = f
        // with f = 1 and verify the four defining properties numerically.
        let (green, basis, scales) = setup(2, 0.01);
        let solver = ExteriorSolver::new(&green.domain, basis.clone(), &scales, 160).unwrap();
        let n = solver.grid.len();
        let n_modes = mode_count(2);
        let mut rhs = vec![vec![0.0; n]; n_modes];
        for i in 0..n {
            rhs[0][i] = 1.0; // radial constant source (coefficient units)
        }
        let sol = solver.solve(&rhs);
        // residual of the PDE rows away from boundaries
        let op = radial::modal_bilaplacian_rows(&solver.grid, 0);
        let back = op.apply(&sol[0]);
        for i in 2..n - 6 {
            assert!(
                (back[i] - 1.0).abs() < 1e-5,
                "node {i}: {} (r = {})",
                back[i],
                solver.grid.nodes[i]
            );
        }
        // boundary conditions
        assert!(sol[0][n - 1].abs() < 1e-10);
        let lap = solver.lap_ops[0].apply(&sol[0]);
        assert!(lap[n - 1].abs() < 1e-7, "Lap at boundary {}", lap[n - 1]);
    }

    #[test]
    fn modal_and_green_integral_realizations_agree() {
        // a smooth compactly-supported radial source, inverted both ways
        let (green, basis, _) = setup(2, 0.01);
        let scales = ScaleParams::new(0.01, vec![1.0], 10.0, 0.5).unwrap();
        let solver = ExteriorSolver::new(&green.domain, basis.clone(), &scales, 200).unwrap();
        let n = solver.grid.len();
        let n_modes = mode_count(2);
        let bump = |r: f64| {
            if r > 0.2 && r < 0.6 {
                let t = (r - 0.2) / 0.4;
                (t * (1.0 - t)).powi(3) * 4096.0
            } else {
                0.0
            }
        };
        let mut rhs = vec![vec![0.0; n]; n_modes];
        for (i, r) in solver.grid.nodes.iter().enumerate() {
            rhs[0][i] = bump(*r) * crate::sphere::S3_AREA.sqrt();
        }
        let sol = solver.solve(&rhs);
        let field = CenteredField {
            grid: solver.grid.clone(),
            basis: basis.clone(),
            center: [0.0; 4],
            values: sol,
            lap_values: vec![vec![0.0; n]; n_modes],
        };

        // Green-integral on a radial quadrature: the source is radial, so a
        // coarse angular grid suffices
        // the Green kernel carries high zonal harmonics near the diagonal
        // shells, so the integral side needs real angular exactness
        let coarse =
            Arc::new(SphereBasis::new(Arc::new(SphericalGrid::new(16)), 8).unwrap());
        let (nodes, weights) = ball_quadrature(1.0, [0.0; 4], &coarse, 192);
        let density: Vec<f64> = nodes.iter().map(|p| bump(norm4(*p))).collect();
        let targets = [
            [0.31, 0.0, 0.0, 0.0],
            [0.0, 0.52, 0.0, 0.0],
            [0.4, 0.3, 0.2, 0.1],
        ];
        let integral = green_integral_apply(&green, &nodes, &weights, &density, &targets).unwrap();
        for (t, gi) in targets.iter().zip(&integral) {
            let modal = field.value_at(*t);
            assert_abs_diff_eq!(modal / gi, 1.0, epsilon = 4e-3);
        }
    }

    #[test]
    fn correction_scales_like_eps_three_halves() {
        let mut norms = Vec::new();
        for eps in [0.04_f64, 0.02] {
            let (green, basis, _) = setup(3, eps);
            let tau_star = (0.5_f64).exp();
            let scales = ScaleParams::new(eps, vec![tau_star], 10.0, 0.5).unwrap();
            let solver = ExteriorSolver::new(&green.domain, basis.clone(), &scales, 220).unwrap();
            let data = vec![(BoundaryData::zero(3, 4), BoundaryData::zero(3, 2))];
            let rho = crate::bubble::rho_from_eps(eps);
            let state = exterior_solve(
                &scales,
                &[0.0],
                &[[0.0; 4]],
                &data,
                &green,
                &PotentialModel::One,
                &solver,
                &SolverConfig::default(),
                rho,
                None,
            )
            .unwrap();
            norms.push(state.norm_nu);
        }
        let ratio = norms[0] / norms[1];
        let predicted = 2.0_f64.powf(1.5);
        assert!(
            ratio > predicted / 2.0 && ratio < predicted * 2.0,
            "ratio {ratio}, norms {norms:?}"
        );
    }

    #[test]
    fn lambda_linearity_of_base_traces() {
        // doubling lambda doubles the lambda-induced change in the base value
        let (green, basis, scales) = setup(2, 0.01);
        let solver = ExteriorSolver::new(&green.domain, basis.clone(), &scales, 120).unwrap();
        let data = vec![(BoundaryData::zero(2, 4), BoundaryData::zero(2, 2))];
        let rho = crate::bubble::rho_from_eps(scales.eps);
        let mut values = Vec::new();
        for lam in [0.0, 0.005, 0.01] {
            let state = exterior_solve(
                &scales,
                &[lam],
                &[[0.0; 4]],
                &data,
                &green,
                &PotentialModel::One,
                &solver,
                &SolverConfig::default(),
                rho,
                None,
            )
            .unwrap();
            // probe the assembled exterior value at a fixed point
            let x = [0.4, 0.0, 0.0, 0.0];
            let g = green.green([0.0; 4], x).unwrap();
            let u = (1.0 + lam) * g + state.correction.value_at(x);
            values.push(u);
        }
        let d1 = values[1] - values[0];
        let d2 = values[2] - values[0];
        assert_abs_diff_eq!(d2 / d1, 2.0, epsilon = 0.05);
    }
}
