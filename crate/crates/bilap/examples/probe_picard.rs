use bilap::matching::interior::*;
use bilap::matching::{ExtensionCutoff, ScaleParams};
use bilap::sphere::{mode_count, BoundaryData, HarmonicMode, SphereBasis, SphericalGrid};
use bilap::radial::*;
use bilap::bubble::{weighted_norm, WeightedNormSpec, linearized_potential};
use std::sync::Arc;

fn main() {
    let trunc = 3usize;
    let basis = SphereBasis::new(Arc::new(SphericalGrid::new(2 * trunc)), trunc).unwrap();
    let eps = 0.04_f64;
    let tau = 1.2;
    let scales = ScaleParams::new(eps, vec![tau], 10.0, 0.45).unwrap();
    let big_r = scales.scaled_radius(tau);
    let grid = Arc::new(interior_grid(320, big_r, 2.2));
    let solver = InteriorSolver::new(grid.clone(), trunc, 1.5, KernelProjection::Weighted).unwrap();
    let mut phi = BoundaryData::zero(trunc, 4);
    *phi.coeff_mut(HarmonicMode::new(2, 1)) = eps;
    let psi = BoundaryData::zero(trunc, 2);
    let ext = bilap::extension::interior_extension_projected(&phi, &psi).0;

    // manual picard with diagnostics
    let n = grid.len();
    let inside: Vec<usize> = (0..n).filter(|i| grid.nodes[*i] <= big_r).collect();
    let mut h_vals: Vec<Vec<f64>> = vec![Vec::new(); n];
    for &i in &inside {
        let zeta = grid.nodes[i] / big_r;
        let data = BoundaryData { truncation: trunc, regularity: 4,
            coeffs: (0..mode_count(trunc)).map(|m| ext.modes[m].eval_allow_origin(zeta)).collect() };
        h_vals[i] = basis.synthesize(&data);
    }
    let mut v = ModalRadialField::zero(grid.clone(), trunc, DomainTag::Ball);
    let spec0 = WeightedNormSpec::growth(0, 1.5);
    let spec2 = WeightedNormSpec::growth(2, 1.5);
    for sweep in 0..8 {
        let mut rhs = ModalRadialField::zero(grid.clone(), trunc, DomainTag::Ball);
        for &i in &inside {
            let w = linearized_potential(grid.nodes[i]);
            let modal = BoundaryData { truncation: trunc, regularity: 4,
                coeffs: v.values.iter().map(|col| col[i]).collect() };
            let v_row = basis.synthesize(&modal);
            let row: Vec<f64> = (0..v_row.len()).map(|g| {
                let hv = h_vals[i][g] + v_row[g];
                w * (hv.exp() - 1.0 - v_row[g])
            }).collect();
            let c = basis.decompose(&row, trunc, 0).unwrap();
            for (m, cm) in c.coeffs.iter().enumerate() { rhs.values[m][i] = *cm; }
        }
        let rhs_ext = extend_interior(&rhs, big_r, ExtensionCutoff::Continuous);
        let v_new = solver.apply_inverse(&rhs_ext);
        let mut d = v_new.clone();
        d.axpy(-1.0, &v);
        // locate the max contributor in the k=2 norm
        let mut max_info = (0usize, 0usize, 0.0f64);
        for (m, col) in d.values.iter().enumerate() {
            for (i, r) in grid.nodes.iter().enumerate() {
                let w = r.max(1.0).powf(2.0 - 1.5) * bilap::radial::node_derivative(&grid, col, i, 2).abs();
                if w > max_info.2 { max_info = (m, i, w); }
            }
        }
        println!("sweep {sweep}: |d|_0 {:.3e} |d|_2 {:.3e}  max at mode {} node {} (r={:.2})",
            weighted_norm(&d, &spec0), weighted_norm(&d, &spec2), max_info.0, max_info.1, grid.nodes[max_info.1]);
        v = v_new;
    }
}
