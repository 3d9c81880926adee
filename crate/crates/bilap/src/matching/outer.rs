//! Cauchy-data matching: traces of (u, d_r u, Lap u, d_r Lap u) of the
//! interior and exterior candidates on the interface spheres, the mode-wise
//! inversion of their difference, and the outer iteration that drives every
//! mismatch to zero.
//!
//! Perpendicular modes (degree >= 2) are updated by inverting the 4x4
//! per-mode block built from the two extension formulas (the off-diagonal
//! rows are the Cauchy-difference operator, whose triangular structure is
//! tested in [`crate::extension`]). The remaining unknowns per point -- the
//! dilation exponent u, the Green amplitude lambda, the displacement z and
//! the low-mode boundary coefficients -- solve a square 20-dimensional
//! system per point by damped Newton with a finite-difference Jacobian;
//! invertibility of that block is where nondegeneracy of the critical
//! configuration enters.

use super::exterior::{exterior_solve, ExteriorSolver, ExteriorState};
use super::interior::{interior_solve, InteriorSolver, InteriorState, PotentialSource};
use super::{MatchState, ScaleParams, SolveReport, SolverConfig};
use crate::bubble::BubbleParams;
use crate::error::{Error, Result};
use crate::extension::{interior_extension_projected, Cutoff};
use crate::green::{dist4, norm4, sub4, GreenModel, PotentialModel};
use crate::sphere::{mode_count, mode_from_flat, BoundaryData, SphereBasis, S3_AREA};
use nalgebra::{DMatrix, DVector};
use std::sync::Arc;

/// The immutable inputs of one matched construction.
pub struct MatchProblem<'a> {
    pub green: &'a GreenModel,
    pub potential: &'a PotentialModel,
    /// Critical configuration of the interaction energy.
    pub x: Vec<[f64; 4]>,
    pub basis: Arc<SphereBasis>,
    pub scales: ScaleParams,
    pub config: SolverConfig,
    pub rho: f64,
}

/// Four traces on one interface sphere, as mode coefficients, for one side.
#[derive(Debug, Clone)]
pub struct TraceSet {
    pub value: BoundaryData,
    pub radial: BoundaryData,
    pub laplacian: BoundaryData,
    pub radial_laplacian: BoundaryData,
    /// Sup over the trace grid of |value|, |d_r|, |Lap|, |d_r Lap|.
    pub scale: [f64; 4],
}

impl TraceSet {
    fn zero(trunc: usize) -> Self {
        Self {
            value: BoundaryData::zero(trunc, 4),
            radial: BoundaryData::zero(trunc, 3),
            laplacian: BoundaryData::zero(trunc, 2),
            radial_laplacian: BoundaryData::zero(trunc, 1),
            scale: [0.0; 4],
        }
    }

    fn fields(&self) -> [&BoundaryData; 4] {
        [
            &self.value,
            &self.radial,
            &self.laplacian,
            &self.radial_laplacian,
        ]
    }

    fn fields_mut(&mut self) -> [&mut BoundaryData; 4] {
        [
            &mut self.value,
            &mut self.radial,
            &mut self.laplacian,
            &mut self.radial_laplacian,
        ]
    }
}

/// Interior traces of point j on its interface sphere. The correction enters
/// through precomputed per-mode trace values so the low-mode Newton can
/// freeze it.
pub fn interior_traces(
    problem: &MatchProblem,
    state: &MatchState,
    j: usize,
    correction_traces: Option<&[[f64; 4]]>,
) -> Result<TraceSet> {
    let trunc = problem.config.truncation;
    let scales = &problem.scales;
    let r_eps = scales.r_eps;
    let tau = state.tau(scales, j);
    let y = state.y(scales, &problem.x, j);
    let mut out = TraceSet::zero(trunc);

    // radial bubble: constant over the sphere
    let bubble = BubbleParams::new(scales.eps, tau, [0.0; 4]);
    let const_coeff = S3_AREA.sqrt();
    out.value.coeffs[0] += bubble.eval_radial(r_eps) * const_coeff;
    out.radial.coeffs[0] += bubble.radial_derivative(r_eps) * const_coeff;
    out.laplacian.coeffs[0] += bubble.laplacian(r_eps) * const_coeff;
    out.radial_laplacian.coeffs[0] += bubble.laplacian_derivative(r_eps) * const_coeff;

    // interior extension H(., / r_eps): per-mode analytic traces at 1
    let (phi, psi) = state.interior_data(j);
    let (ext, _) = interior_extension_projected(&phi, &psi);
    for m in 0..mode_count(trunc) {
        let t = ext.mode_traces(m, 1.0);
        out.value.coeffs[m] += t[0];
        out.radial.coeffs[m] += t[1] / r_eps;
        out.laplacian.coeffs[m] += t[2] / (r_eps * r_eps);
        out.radial_laplacian.coeffs[m] += t[3] / (r_eps * r_eps * r_eps);
    }

    // interior correction v(tau (x - y)/eps): chain-rule factors tau/eps
    if let Some(traces) = correction_traces {
        let c = tau / scales.eps;
        for (m, t) in traces.iter().enumerate() {
            out.value.coeffs[m] += t[0];
            out.radial.coeffs[m] += c * t[1];
            out.laplacian.coeffs[m] += c * c * t[2];
            out.radial_laplacian.coeffs[m] += c * c * c * t[3];
        }
    }

    // potential term -ln V(x), pointwise on the trace sphere
    let basis = &problem.basis;
    let n_ang = basis.grid.len();
    let mut vals = [
        vec![0.0; n_ang],
        vec![0.0; n_ang],
        vec![0.0; n_ang],
        vec![0.0; n_ang],
    ];
    for (g, dir) in basis.grid.nodes.iter().enumerate() {
        let p = [
            y[0] + r_eps * dir[0],
            y[1] + r_eps * dir[1],
            y[2] + r_eps * dir[2],
            y[3] + r_eps * dir[3],
        ];
        vals[0][g] = -problem.potential.log_eval(p)?;
        let grad = problem.potential.log_gradient(p);
        vals[1][g] = -dot(grad, *dir);
        vals[2][g] = -problem.potential.log_laplacian(p);
        let lgrad = problem.potential.log_laplacian_gradient(p);
        vals[3][g] = -dot(lgrad, *dir);
    }
    for (k, v) in vals.iter().enumerate() {
        let coeffs = basis.decompose(v, trunc, 0)?;
        out.fields_mut()[k].axpy(1.0, &coeffs);
    }

    finalize_scale(basis, &mut out);
    Ok(out)
}

/// Exterior traces of point j. The smooth correction enters through a frozen
/// sampled table (value, d_r, Lap, d_r Lap per trace node).
pub fn exterior_traces(
    problem: &MatchProblem,
    state: &MatchState,
    j: usize,
    correction_samples: Option<&[[f64; 4]]>,
) -> Result<TraceSet> {
    let trunc = problem.config.truncation;
    let scales = &problem.scales;
    let r_eps = scales.r_eps;
    let y_all = state.y_all(scales, &problem.x);
    let yj = y_all[j];
    let basis = &problem.basis;
    let n_ang = basis.grid.len();
    let mut out = TraceSet::zero(trunc);

    // Green parts, pointwise
    let mut vals = [
        vec![0.0; n_ang],
        vec![0.0; n_ang],
        vec![0.0; n_ang],
        vec![0.0; n_ang],
    ];
    for (g, dir) in basis.grid.nodes.iter().enumerate() {
        let p = [
            yj[0] + r_eps * dir[0],
            yj[1] + r_eps * dir[1],
            yj[2] + r_eps * dir[2],
            yj[3] + r_eps * dir[3],
        ];
        for (l, yl) in y_all.iter().enumerate() {
            let a = 1.0 + state.lambda[l];
            if l == j {
                // split off the radial log to keep the evaluation regular
                let reg = problem.green.regular_part(*yl, p)?;
                vals[0][g] += a * (-8.0 * r_eps.ln() + reg);
                let grad = problem.green.regular_part_gradient_y(*yl, p)?;
                vals[1][g] += a * (-8.0 / r_eps + dot(grad, *dir));
            } else {
                vals[0][g] += a * problem.green.green(*yl, p)?;
                let grad = problem.green.green_gradient_y(*yl, p)?;
                vals[1][g] += a * dot(grad, *dir);
            }
            vals[2][g] += a * problem.green.green_laplacian_y(*yl, p)?;
            let lgrad = problem.green.green_laplacian_gradient_y(*yl, p)?;
            vals[3][g] += a * dot(lgrad, *dir);
        }
        if let Some(samples) = correction_samples {
            vals[0][g] += samples[g][0];
            vals[1][g] += samples[g][1];
            vals[2][g] += samples[g][2];
            vals[3][g] += samples[g][3];
        }
    }
    for (k, v) in vals.iter().enumerate() {
        let coeffs = basis.decompose(v, trunc, 0)?;
        out.fields_mut()[k].axpy(1.0, &coeffs);
    }

    // exterior extension of point j (the neighbors' cutoffs vanish here)
    let (tphi, tpsi) = state.exterior_data(j);
    let (ext, _) = crate::extension::exterior_extension_projected(&tphi, &tpsi);
    for m in 0..mode_count(trunc) {
        let t = ext.mode_traces(m, 1.0);
        out.value.coeffs[m] += t[0];
        out.radial.coeffs[m] += t[1] / r_eps;
        out.laplacian.coeffs[m] += t[2] / (r_eps * r_eps);
        out.radial_laplacian.coeffs[m] += t[3] / (r_eps * r_eps * r_eps);
    }

    finalize_scale(basis, &mut out);
    Ok(out)
}

/// Sampled trace table of the exterior correction at the interface sphere
/// of point j: value, d_r, Lap, d_r Lap per trace-grid node.
pub fn sample_exterior_correction(
    problem: &MatchProblem,
    state: &MatchState,
    j: usize,
    ext: &ExteriorState,
) -> Vec<[f64; 4]> {
    let scales = &problem.scales;
    let r_eps = scales.r_eps;
    let yj = state.y(scales, &problem.x, j);
    let h = 1e-3 * r_eps;
    problem
        .basis
        .grid
        .nodes
        .iter()
        .map(|dir| {
            let p = [
                yj[0] + r_eps * dir[0],
                yj[1] + r_eps * dir[1],
                yj[2] + r_eps * dir[2],
                yj[3] + r_eps * dir[3],
            ];
            [
                ext.correction.value_at(p),
                ext.correction.directional_derivative(p, *dir, h),
                ext.correction.laplacian_at(p),
                ext.correction.laplacian_directional_derivative(p, *dir, h),
            ]
        })
        .collect()
}

fn dot(a: [f64; 4], b: [f64; 4]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3]
}

fn finalize_scale(basis: &SphereBasis, t: &mut TraceSet) {
    let mut scale = [0.0_f64; 4];
    for (k, field) in t.fields().iter().enumerate() {
        let vals = basis.synthesize(field);
        scale[k] = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    }
    t.scale = scale;
}

/// The four Cauchy mismatches of point j (interior minus exterior), as
/// coefficient sets, with the relative norms measured against the larger
/// side.
pub struct Mismatch {
    pub fields: [BoundaryData; 4],
    pub relative: [f64; 4],
    pub scales: [f64; 4],
}

pub fn cauchy_mismatch(
    problem: &MatchProblem,
    int_traces: &TraceSet,
    ext_traces: &TraceSet,
) -> Mismatch {
    let mut fields = [
        int_traces.value.clone(),
        int_traces.radial.clone(),
        int_traces.laplacian.clone(),
        int_traces.radial_laplacian.clone(),
    ];
    let ext = ext_traces.fields();
    let mut relative = [0.0; 4];
    let mut scales = [0.0; 4];
    for k in 0..4 {
        fields[k].axpy(-1.0, ext[k]);
        let vals = problem.basis.synthesize(&fields[k]);
        let sup = vals.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        scales[k] = int_traces.scale[k].max(ext_traces.scale[k]).max(1e-300);
        relative[k] = sup / scales[k];
    }
    Mismatch {
        fields,
        relative,
        scales,
    }
}

/// Per-mode 4x4 matrix taking (phi_l, tphi_l, psi_l, tpsi_l) increments to
/// the scaled trace mismatches (F0, r F1, r^2 F2, r^3 F3) they induce.
fn perp_block(l: usize) -> DMatrix<f64> {
    let lf = l as f64;
    DMatrix::from_row_slice(
        4,
        4,
        &[
            1.0,
            -1.0,
            0.0,
            0.0,
            lf,
            lf + 2.0,
            1.0 / (2.0 * (lf + 2.0)),
            1.0 / (2.0 * lf),
            0.0,
            0.0,
            1.0,
            -1.0,
            0.0,
            0.0,
            lf,
            lf + 2.0,
        ],
    )
}

/// One perpendicular-mode sweep: returns the largest coefficient update.
fn update_perp_modes(
    state: &mut MatchState,
    mismatches: &[Mismatch],
    r_eps: f64,
    relaxation: f64,
) -> f64 {
    let trunc = state.phi_perp[0].truncation;
    let mut max_step = 0.0_f64;
    for (j, mm) in mismatches.iter().enumerate() {
        for flat in mode_count(1)..mode_count(trunc) {
            let l = mode_from_flat(flat).degree;
            let block = perp_block(l);
            let rhs = DVector::from_column_slice(&[
                mm.fields[0].coeffs[flat],
                r_eps * mm.fields[1].coeffs[flat],
                r_eps * r_eps * mm.fields[2].coeffs[flat],
                r_eps * r_eps * r_eps * mm.fields[3].coeffs[flat],
            ]);
            let delta = block
                .lu()
                .solve(&rhs)
                .expect("perpendicular block is invertible for l >= 2");
            state.phi_perp[j].coeffs[flat] -= relaxation * delta[0];
            state.tphi_perp[j].coeffs[flat] -= relaxation * delta[1];
            state.psi_perp[j].coeffs[flat] -= relaxation * delta[2];
            state.tpsi_perp[j].coeffs[flat] -= relaxation * delta[3];
            max_step = max_step.max(delta.amax());
        }
        state.phi_perp[j].project_perp();
        state.psi_perp[j].project_perp();
        state.tphi_perp[j].project_perp();
        state.tpsi_perp[j].project_perp();
    }
    max_step
}

/// Low-mode unknown packing: per point
/// [u, lambda, phi0, tphi0, z(4), phi1(4), tphi1(4), tpsi1(4)] = 20 entries.
const LOW_DIM: usize = 20;

fn pack_low(state: &MatchState) -> Vec<f64> {
    let m = state.points();
    let mut out = Vec::with_capacity(LOW_DIM * m);
    for j in 0..m {
        out.push(state.u[j]);
        out.push(state.lambda[j]);
        out.push(state.phi0[j]);
        out.push(state.tphi0[j]);
        out.extend_from_slice(&state.z[j]);
        out.extend_from_slice(&state.phi1[j]);
        out.extend_from_slice(&state.tphi1[j]);
        out.extend_from_slice(&state.tpsi1[j]);
    }
    out
}

fn unpack_low(state: &mut MatchState, packed: &[f64]) {
    let m = state.points();
    for j in 0..m {
        let o = LOW_DIM * j;
        state.u[j] = packed[o];
        state.lambda[j] = packed[o + 1];
        state.phi0[j] = packed[o + 2];
        state.tphi0[j] = packed[o + 3];
        state.z[j] = [packed[o + 4], packed[o + 5], packed[o + 6], packed[o + 7]];
        state.phi1[j] = [packed[o + 8], packed[o + 9], packed[o + 10], packed[o + 11]];
        state.tphi1[j] = [packed[o + 12], packed[o + 13], packed[o + 14], packed[o + 15]];
        state.tpsi1[j] = [packed[o + 16], packed[o + 17], packed[o + 18], packed[o + 19]];
    }
}

/// Scaled low-mode residual of the trace mismatches with frozen corrections.
fn low_mode_residual(
    problem: &MatchProblem,
    state: &MatchState,
    frozen_int: &[Vec<[f64; 4]>],
    frozen_ext: &[Vec<[f64; 4]>],
) -> Result<Vec<f64>> {
    let m = state.points();
    let r_eps = problem.scales.r_eps;
    let mut out = Vec::with_capacity(LOW_DIM * m);
    for j in 0..m {
        let it = interior_traces(problem, state, j, Some(&frozen_int[j]))?;
        let et = exterior_traces(problem, state, j, Some(&frozen_ext[j]))?;
        let mm = cauchy_mismatch(problem, &it, &et);
        let powers = [1.0, r_eps, r_eps * r_eps, r_eps * r_eps * r_eps];
        for k in 0..4 {
            out.push(powers[k] * mm.fields[k].constant_value());
        }
        for k in 0..4 {
            let e = mm.fields[k].ell1_vector();
            for c in e {
                out.push(powers[k] * c);
            }
        }
    }
    Ok(out)
}

fn residual_norm(r: &[f64]) -> f64 {
    r.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// One damped Newton step on the low-mode system; returns the step size.
fn low_mode_newton_step(
    problem: &MatchProblem,
    state: &mut MatchState,
    frozen_int: &[Vec<[f64; 4]>],
    frozen_ext: &[Vec<[f64; 4]>],
) -> Result<f64> {
    let m = state.points();
    let n = LOW_DIM * m;
    let base = pack_low(state);
    let f0 = low_mode_residual(problem, state, frozen_int, frozen_ext)?;
    let norm0 = residual_norm(&f0);

    let step = 1e-6;
    let mut jac = DMatrix::zeros(n, n);
    let mut probe = state.clone();
    for col in 0..n {
        let mut p = base.clone();
        let mut q = base.clone();
        p[col] += step;
        q[col] -= step;
        unpack_low(&mut probe, &p);
        let fp = low_mode_residual(problem, &probe, frozen_int, frozen_ext)?;
        unpack_low(&mut probe, &q);
        let fq = low_mode_residual(problem, &probe, frozen_int, frozen_ext)?;
        for row in 0..n {
            jac[(row, col)] = (fp[row] - fq[row]) / (2.0 * step);
        }
    }
    let rhs = DVector::from_column_slice(&f0);
    let delta = jac
        .lu()
        .solve(&rhs)
        .ok_or(Error::SingularLowModeJacobian)?;

    // backtracking
    let mut lambda = 1.0_f64;
    for _ in 0..8 {
        let cand: Vec<f64> = base
            .iter()
            .zip(delta.iter())
            .map(|(b, d)| b - lambda * d)
            .collect();
        unpack_low(&mut probe, &cand);
        let f1 = low_mode_residual(problem, &probe, frozen_int, frozen_ext)?;
        if residual_norm(&f1) < norm0 {
            unpack_low(state, &cand);
            return Ok(lambda * delta.amax());
        }
        lambda *= 0.5;
    }
    // accept the smallest damped step; the outer loop guards divergence
    let cand: Vec<f64> = base
        .iter()
        .zip(delta.iter())
        .map(|(b, d)| b - lambda * d)
        .collect();
    unpack_low(state, &cand);
    Ok(lambda * delta.amax())
}

/// One full matched construction at fixed eps.
pub fn match_solve(problem: &MatchProblem) -> Result<(SolveReport, CompositeSolution)> {
    let scales = &problem.scales;
    let config = &problem.config;
    let m = problem.x.len();
    let trunc = config.truncation;
    let mut state = MatchState::initial(m, trunc);

    // interior solver: one grid covering the largest scaled radius across
    // the tau box (the grid must dominate 2 R for every sweep's tau)
    let max_tau = scales
        .tau_star
        .iter()
        .fold(0.0_f64, |a, t| a.max(*t * (scales.tau_box()).exp()));
    let int_grid = Arc::new(super::interior::interior_grid(
        config.radial_nodes,
        scales.scaled_radius(max_tau),
        config.interior_domain_factor,
    ));
    let int_solver = InteriorSolver::new(
        int_grid,
        trunc,
        config.mu,
        config.kernel_projection,
    )?;
    let ext_solver = ExteriorSolver::new(
        &problem.green.domain,
        problem.basis.clone(),
        scales,
        config.exterior_radial_nodes,
    )?;

    let mut interior_states: Vec<InteriorState> = Vec::new();
    let mut exterior_state: Option<ExteriorState> = None;
    let mut best_mismatch = f64::INFINITY;
    let mut stall = 0usize;
    let mut last_param_step = f64::INFINITY;
    let mut sweeps = 0usize;
    let mut final_relative = vec![[f64::INFINITY; 4]; m];

    let timing = std::env::var("BILAP_TIMING").is_ok();
    loop {
        let _t0 = std::time::Instant::now();
        // (c) refresh the inner fixed points at the current parameters
        interior_states.clear();
        for j in 0..m {
            let (phi, psi) = state.interior_data(j);
            let src = PotentialSource {
                potential: problem.potential,
                center: state.y(scales, &problem.x, j),
                eps: scales.eps,
                tau: state.tau(scales, j),
            };
            interior_states.push(interior_solve(
                scales,
                state.tau(scales, j),
                &phi,
                &psi,
                &problem.basis,
                &int_solver,
                &src,
                config,
            )?);
        }
        if timing {
            eprintln!("[outer] interiors: {:.2?}", _t0.elapsed());
        }
        let _t1 = std::time::Instant::now();
        let data: Vec<(BoundaryData, BoundaryData)> =
            (0..m).map(|j| state.exterior_data(j)).collect();
        let y_all = state.y_all(scales, &problem.x);
        let ext = exterior_solve(
            scales,
            &state.lambda,
            &y_all,
            &data,
            problem.green,
            problem.potential,
            &ext_solver,
            config,
            problem.rho,
            exterior_state
                .as_ref()
                .map(|e: &ExteriorState| e.correction.values.as_slice()),
        )?;

        if timing {
            eprintln!("[outer] exterior: {:.2?}", _t1.elapsed());
        }
        let _t2 = std::time::Instant::now();
        // frozen correction tables for this sweep
        let frozen_int: Vec<Vec<[f64; 4]>> = interior_states
            .iter()
            .map(|st| {
                (0..mode_count(trunc))
                    .map(|mm| st.correction_traces(mm))
                    .collect()
            })
            .collect();
        let frozen_ext: Vec<Vec<[f64; 4]>> = (0..m)
            .map(|j| sample_exterior_correction(problem, &state, j, &ext))
            .collect();

        // mismatches at the refreshed state
        let mut mismatches = Vec::with_capacity(m);
        let mut worst = 0.0_f64;
        for j in 0..m {
            let it = interior_traces(problem, &state, j, Some(&frozen_int[j]))?;
            let et = exterior_traces(problem, &state, j, Some(&frozen_ext[j]))?;
            let mm = cauchy_mismatch(problem, &it, &et);
            for k in 0..4 {
                worst = worst.max(mm.relative[k]);
            }
            final_relative[j] = mm.relative;
            mismatches.push(mm);
        }
        exterior_state = Some(ext);
        sweeps += 1;

        if worst <= config.tol_match && last_param_step <= config.tol_param {
            state.kappa_box_check(scales)?;
            break;
        }
        if sweeps >= config.max_outer_sweeps {
            return Err(Error::OuterDivergence {
                sweeps,
                mismatch: worst,
            });
        }
        if worst < best_mismatch * 0.97 {
            best_mismatch = worst;
            stall = 0;
        } else {
            stall += 1;
            if stall >= 10 {
                return Err(Error::OuterDivergence {
                    sweeps,
                    mismatch: worst,
                });
            }
        }

        if timing {
            eprintln!("[outer] traces+mismatch: {:.2?}", _t2.elapsed());
        }
        let _t3 = std::time::Instant::now();
        // (a) perpendicular modes
        let perp_step = update_perp_modes(&mut state, &mismatches, scales.r_eps, 1.0);
        // (b) low-mode Newton
        let low_step = low_mode_newton_step(
            problem,
            &mut state,
            &frozen_int,
            &frozen_ext,
        )?;
        last_param_step = perp_step.max(low_step);
        if timing {
            eprintln!("[outer] updates: {:.2?}", _t3.elapsed());
        }
    }

    let exterior_state = exterior_state.expect("at least one sweep ran");
    let composite = CompositeSolution {
        state: state.clone(),
        interior_states,
        exterior_state,
        x: problem.x.clone(),
        rho: problem.rho,
        eps: scales.eps,
        r_eps: scales.r_eps,
        tau: (0..m).map(|j| state.tau(scales, j)).collect(),
        y: state.y_all(scales, &problem.x),
        r0: problem.green.domain.r0(),
    };
    let _t4 = std::time::Instant::now();
    let report = assemble_and_verify(problem, &composite, &final_relative, sweeps)?;
    if std::env::var("BILAP_TIMING").is_ok() {
        eprintln!("[outer] assemble: {:.2?}", _t4.elapsed());
    }
    Ok((report, composite))
}

/// The matched composite solution u_rho: interior formula inside each
/// interface ball, exterior formula outside.
pub struct CompositeSolution {
    pub state: MatchState,
    pub interior_states: Vec<InteriorState>,
    pub exterior_state: ExteriorState,
    pub x: Vec<[f64; 4]>,
    pub rho: f64,
    pub eps: f64,
    pub r_eps: f64,
    pub tau: Vec<f64>,
    pub y: Vec<[f64; 4]>,
    pub r0: f64,
}

impl CompositeSolution {
    /// Which interface ball contains x, if any.
    fn inside(&self, x: [f64; 4]) -> Option<(usize, f64)> {
        for (j, yj) in self.y.iter().enumerate() {
            let s = dist4(x, *yj);
            if s <= self.r_eps {
                return Some((j, s));
            }
        }
        None
    }

    pub fn value(
        &self,
        problem: &MatchProblem,
        x: [f64; 4],
    ) -> Result<f64> {
        match self.inside(x) {
            Some((j, s)) => self.interior_value(problem, j, x, s),
            None => self.exterior_value(problem, x),
        }
    }

    fn interior_value(
        &self,
        problem: &MatchProblem,
        j: usize,
        x: [f64; 4],
        s: f64,
    ) -> Result<f64> {
        let yj = self.y[j];
        let bubble = BubbleParams::new(self.eps, self.tau[j], [0.0; 4]);
        let mut u = bubble.eval_radial(s);
        let dir = if s > 0.0 {
            sub4(x, yj).map(|v| v / s)
        } else {
            [1.0, 0.0, 0.0, 0.0]
        };
        let modes = problem.basis.eval_modes_at(dir);
        let st = &self.interior_states[j];
        let zeta = s / self.r_eps;
        let xi = self.tau[j] * s / self.eps;
        for (m, e) in st.extension.modes.iter().enumerate() {
            if !e.terms.is_empty() {
                u += e.eval_allow_origin(zeta) * modes[m];
            }
        }
        let stencil = super::interior::InterpStencil::new(&st.correction.grid, xi);
        for (m, profile) in st.correction.values.iter().enumerate() {
            u += stencil.apply(profile) * modes[m];
        }
        u -= problem.potential.log_eval(x)?;
        Ok(u)
    }

    fn exterior_value(&self, problem: &MatchProblem, x: [f64; 4]) -> Result<f64> {
        let mut u = 0.0;
        for (l, yl) in self.y.iter().enumerate() {
            u += (1.0 + self.state.lambda[l]) * problem.green.green(*yl, x)?;
        }
        let chi = Cutoff::interface(self.r0);
        for (j, yj) in self.y.iter().enumerate() {
            let s = dist4(x, *yj);
            if s < self.r0 {
                let w = chi.eval(s);
                if w > 0.0 {
                    let dir = sub4(x, *yj).map(|v| v / s);
                    let modes = problem.basis.eval_modes_at(dir);
                    let zeta = s / self.r_eps;
                    let mut h = 0.0;
                    for (m, e) in self.exterior_state.extensions[j].modes.iter().enumerate() {
                        if !e.terms.is_empty() {
                            h += e.eval(zeta) * modes[m];
                        }
                    }
                    u += w * h;
                }
            }
        }
        u += self.exterior_state.correction.value_at(x);
        Ok(u)
    }
}

/// Mass, limit distances and discrete PDE residual of the composite
/// solution; packages the final report.
pub fn assemble_and_verify(
    problem: &MatchProblem,
    composite: &CompositeSolution,
    relative_mismatch: &[[f64; 4]],
    sweeps: usize,
) -> Result<SolveReport> {
    let scales = &problem.scales;
    let m = problem.x.len();

    // interior mass in the scaled variable: 24 int V(y + eps xi/tau) e^{U(xi)} dxi
    let mut mass = 0.0;
    for j in 0..m {
        mass += interior_mass(problem, composite, j)?;
    }
    mass += exterior_mass(problem, composite)?;
    let mass_ratio = mass / (crate::green::flux_constant() * m as f64);

    // sup distances
    let center = problem.green.domain.center();
    let radius = match &problem.green.domain {
        crate::green::DomainModel::Ball { radius, .. } => *radius,
        crate::green::DomainModel::Annulus { r_outer, .. } => *r_outer,
        _ => 1.0,
    };
    let dirs = sample_directions();
    let mut sup_outer = 0.0_f64;
    let mut sup_limit = 0.0_f64;
    for frac in [0.5, 0.6, 0.7, 0.8, 0.9, 0.97] {
        for dir in &dirs {
            let p = [
                center[0] + frac * radius * dir[0],
                center[1] + frac * radius * dir[1],
                center[2] + frac * radius * dir[2],
                center[3] + frac * radius * dir[3],
            ];
            if !problem.green.domain.contains(p) {
                continue;
            }
            let u = composite.value(problem, p)?;
            let mut g_y = 0.0;
            let mut g_x = 0.0;
            for j in 0..m {
                g_y += (1.0 + composite.state.lambda[j])
                    * problem.green.green(composite.y[j], p)?;
                g_x += problem.green.green(problem.x[j], p)?;
            }
            let far_enough = composite
                .y
                .iter()
                .all(|yj| dist4(p, *yj) > composite.r0);
            if far_enough {
                sup_outer = sup_outer.max((u - g_y).abs());
                sup_limit = sup_limit.max((u - g_x).abs());
            }
        }
    }

    // discrete PDE residual away from the interfaces
    let mut pde_residual = 0.0_f64;
    let h = 0.08 * composite.r_eps;
    for j in 0..m {
        for frac in [0.35, 0.7, 1.6, 3.0] {
            let s = frac * composite.r_eps;
            if s < 4.0 * h {
                continue;
            }
            for dir in dirs.iter().take(3) {
                let p = [
                    composite.y[j][0] + s * dir[0],
                    composite.y[j][1] + s * dir[1],
                    composite.y[j][2] + s * dir[2],
                    composite.y[j][3] + s * dir[3],
                ];
                let lhs = fd_bilap(problem, composite, p, h)?;
                let u = composite.value(problem, p)?;
                let rhs = composite.rho.powi(4) * problem.potential.eval(p) * u.exp();
                pde_residual = pde_residual.max((lhs - rhs).abs() / rhs.abs().max(1.0));
            }
        }
    }

    let interface_jump = relative_mismatch
        .iter()
        .map(|r| r[0])
        .fold(0.0_f64, f64::max);

    Ok(SolveReport {
        eps: scales.eps,
        rho: composite.rho,
        tau: composite.tau.clone(),
        tau_star: scales.tau_star.clone(),
        u: composite.state.u.clone(),
        lambda: composite.state.lambda.clone(),
        y: composite.y.clone(),
        x: problem.x.clone(),
        mismatch: relative_mismatch.to_vec(),
        mass,
        mass_ratio,
        sup_distance_outer: sup_outer,
        sup_distance_to_limit: sup_limit,
        pde_residual,
        interface_jump,
        outer_sweeps: sweeps,
        interior_contraction: composite
            .interior_states
            .iter()
            .map(|s| s.contraction_history.first().copied().unwrap_or(0.0))
            .collect(),
        exterior_norm: composite.exterior_state.norm_nu,
        interior_norm: composite.interior_states.iter().map(|s| s.norm_mu).collect(),
        converged: relative_mismatch
            .iter()
            .all(|r| r.iter().all(|v| *v <= problem.config.tol_match)),
    })
}

fn sample_directions() -> Vec<[f64; 4]> {
    let raw = [
        [1.0, 0.0, 0.0, 0.0],
        [0.0, 1.0, 0.0, 0.0],
        [0.0, 0.0, 1.0, 0.0],
        [0.0, 0.0, 0.0, 1.0],
        [0.5, 0.5, 0.5, 0.5],
        [-0.5, 0.5, -0.5, 0.5],
        [-1.0, 0.0, 0.0, 0.0],
    ];
    raw.iter()
        .map(|d| {
            let n = norm4(*d);
            d.map(|v| v / n)
        })
        .collect()
}

/// Interior-ball mass contribution of point j, integrated in the scaled
/// variable where the integrand is order one:
/// 24 int_{B_R} V(y + eps xi / tau) e^{u1 + H + v} dxi.
fn interior_mass(
    problem: &MatchProblem,
    composite: &CompositeSolution,
    j: usize,
) -> Result<f64> {
    let st = &composite.interior_states[j];
    let big_r = st.scaled_radius;
    let basis = &problem.basis;
    let u1 = BubbleParams::origin(1.0, 1.0);
    let (xs, ws) = crate::sphere::poly::gauss_legendre(24);
    let mut panels = vec![(0.0, 2.0_f64.min(big_r))];
    let mut a = 2.0_f64;
    while a < big_r {
        let b = (2.0 * a).min(big_r);
        panels.push((a, b));
        a = b;
    }
    let mut total = 0.0;
    for (a, b) in panels {
        for (xi, wi) in xs.iter().zip(&ws) {
            let s = a + (b - a) * (xi + 1.0) / 2.0;
            let wr = wi * (b - a) / 2.0 * s.powi(3);
            // angular synthesis of H + v at radius s
            let modal_h: Vec<f64> = (0..mode_count(problem.config.truncation))
                .map(|mm| st.extension.modes[mm].eval_allow_origin(s / big_r))
                .collect();
            let stencil = super::interior::InterpStencil::new(&st.correction.grid, s);
            let modal_v: Vec<f64> = st.correction.values.iter().map(|p| stencil.apply(p)).collect();
            let mut data = BoundaryData {
                truncation: problem.config.truncation,
                regularity: 4,
                coeffs: modal_h,
            };
            for (c, v) in data.coeffs.iter_mut().zip(&modal_v) {
                *c += v;
            }
            let vals = basis.synthesize(&data);
            let mut shell = 0.0;
            for (g, dir) in basis.grid.nodes.iter().enumerate() {
                let xphys = [
                    composite.y[j][0] + composite.eps * s * dir[0] / composite.tau[j],
                    composite.y[j][1] + composite.eps * s * dir[1] / composite.tau[j],
                    composite.y[j][2] + composite.eps * s * dir[2] / composite.tau[j],
                    composite.y[j][3] + composite.eps * s * dir[3] / composite.tau[j],
                ];
                let vx = problem.potential.eval(xphys);
                shell += basis.grid.weights[g] * vx * (u1.eval_radial(s) + vals[g]).exp();
            }
            total += wr * shell;
        }
    }
    Ok(24.0 * total)
}

/// Exterior mass: rho^4 int V e^{u_ext} over the domain minus the interface
/// balls, in center-frame shells.
fn exterior_mass(problem: &MatchProblem, composite: &CompositeSolution) -> Result<f64> {
    let center = problem.green.domain.center();
    let (r_lo, r_hi) = match &problem.green.domain {
        crate::green::DomainModel::Ball { radius, .. } => (0.0, *radius),
        crate::green::DomainModel::Annulus {
            r_inner, r_outer, ..
        } => (*r_inner, *r_outer),
        _ => return Err(Error::UnsupportedDomain("mass needs ball or annulus")),
    };
    let basis = &problem.basis;
    let (xs, ws) = crate::sphere::poly::gauss_legendre(20);
    // panels refined around the interface radius
    let mut edges = vec![r_lo];
    for j in 0..6 {
        edges.push(composite.r_eps * (1.0 + j as f64 * 0.5));
    }
    edges.push(composite.r0);
    edges.push((r_hi + composite.r0) / 2.0);
    edges.push(r_hi * 0.9999);
    edges.retain(|e| *e >= r_lo && *e <= r_hi);
    edges.sort_by(|a, b| a.partial_cmp(b).unwrap());
    edges.dedup_by(|a, b| (*a - *b).abs() < 1e-12);

    let mut total = 0.0;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        for (xi, wi) in xs.iter().zip(&ws) {
            let s = a + (b - a) * (xi + 1.0) / 2.0;
            let wr = wi * (b - a) / 2.0 * s.powi(3);
            let mut shell = 0.0;
            for (g, dir) in basis.grid.nodes.iter().enumerate() {
                let p = [
                    center[0] + s * dir[0],
                    center[1] + s * dir[1],
                    center[2] + s * dir[2],
                    center[3] + s * dir[3],
                ];
                if composite.inside(p).is_some() || !problem.green.domain.contains(p) {
                    continue;
                }
                let u = composite.exterior_value(problem, p)?;
                shell += basis.grid.weights[g] * problem.potential.eval(p) * u.exp();
            }
            total += wr * shell;
        }
    }
    Ok(composite.rho.powi(4) * total)
}

/// Discrete 4-D bi-Laplacian of the composite by per-axis 5-point stencils.
fn fd_bilap(
    problem: &MatchProblem,
    composite: &CompositeSolution,
    x: [f64; 4],
    h: f64,
) -> Result<f64> {
    let lap = |p: [f64; 4]| -> Result<f64> {
        let mut acc = 0.0;
        for axis in 0..4 {
            let mut vals = [0.0; 5];
            for (k, off) in [-2.0, -1.0, 0.0, 1.0, 2.0].iter().enumerate() {
                let mut q = p;
                q[axis] += off * h;
                vals[k] = composite.value(problem, q)?;
            }
            acc += (-vals[0] + 16.0 * vals[1] - 30.0 * vals[2] + 16.0 * vals[3] - vals[4])
                / (12.0 * h * h);
        }
        Ok(acc)
    };
    let mut acc = 0.0;
    for axis in 0..4 {
        let mut vals = [0.0; 5];
        for (k, off) in [-2.0, -1.0, 0.0, 1.0, 2.0].iter().enumerate() {
            let mut q = x;
            q[axis] += off * h;
            vals[k] = lap(q)?;
        }
        acc += (-vals[0] + 16.0 * vals[1] - 30.0 * vals[2] + 16.0 * vals[3] - vals[4])
            / (12.0 * h * h);
    }
    Ok(acc)
}
