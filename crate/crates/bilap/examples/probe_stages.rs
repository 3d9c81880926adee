use bilap::green::{DomainModel, GreenModel, PotentialModel};
use bilap::matching::exterior::{exterior_solve, ExteriorSolver};
use bilap::matching::interior::{interior_solve, interior_grid, InteriorSolver, KernelProjection, PotentialSource};
use bilap::matching::{MatchState, ScaleParams, SolverConfig};
use bilap::sphere::{BoundaryData, SphereBasis, SphericalGrid};
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let eps = 0.05_f64;
    let green = GreenModel::new(DomainModel::unit_ball()).unwrap();
    let l = 8usize;
    let t0 = Instant::now();
    let basis = Arc::new(SphereBasis::new(Arc::new(SphericalGrid::new(2 * l)), l).unwrap());
    println!("basis: {:.2?}", t0.elapsed());
    let tau_star = (0.5_f64).exp();
    let scales = ScaleParams::new(eps, vec![tau_star], 10.0, 0.5).unwrap();
    let mut config = SolverConfig::default();
    config.truncation = l;
    config.radial_nodes = 400;
    config.exterior_radial_nodes = 400;

    let t0 = Instant::now();
    let int_grid = Arc::new(interior_grid(400, scales.scaled_radius(tau_star * 1.01), 2.2));
    let int_solver = InteriorSolver::new(int_grid, l, 1.5, KernelProjection::Weighted).unwrap();
    println!("interior factorizations: {:.2?}", t0.elapsed());

    let t0 = Instant::now();
    let ext_solver = ExteriorSolver::new(&green.domain, basis.clone(), &scales, 400).unwrap();
    println!("exterior factorizations: {:.2?}", t0.elapsed());

    let phi = BoundaryData::zero(l, 4);
    let psi = BoundaryData::zero(l, 2);
    let src = PotentialSource { potential: &PotentialModel::One, center: [0.0; 4], eps, tau: tau_star };
    let t0 = Instant::now();
    let _int = interior_solve(&scales, tau_star, &phi, &psi, &basis, &int_solver, &src, &config).unwrap();
    println!("interior_solve: {:.2?}", t0.elapsed());

    let state = MatchState::initial(1, l);
    let data = vec![state.exterior_data(0)];
    let t0 = Instant::now();
    let ext = exterior_solve(&scales, &[0.0], &[[0.0;4]], &data, &green, &PotentialModel::One,
                             &ext_solver, &config, bilap::bubble::rho_from_eps(eps)).unwrap();
    println!("exterior_solve ({} sweeps): {:.2?}", ext.sweeps, t0.elapsed());
}
