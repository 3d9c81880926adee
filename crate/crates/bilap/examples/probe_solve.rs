use bilap::green::{DomainModel, GreenModel, PotentialModel};
use bilap::matching::outer::{match_solve, MatchProblem};
use bilap::matching::{ScaleParams, SolverConfig};
use bilap::sphere::{SphereBasis, SphericalGrid};
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let eps = 0.05_f64;
    let green = GreenModel::new(DomainModel::unit_ball()).unwrap();
    let l = 8usize;
    let basis = Arc::new(SphereBasis::new(Arc::new(SphericalGrid::new(2 * l)), l).unwrap());
    let tau_star = (0.5_f64).exp();
    let scales = ScaleParams::new(eps, vec![tau_star], 10.0, 0.5).unwrap();
    let mut config = SolverConfig::default();
    config.truncation = l;
    config.radial_nodes = 400;
    config.exterior_radial_nodes = 400;
    let problem = MatchProblem {
        green: &green,
        potential: &PotentialModel::One,
        x: vec![[0.0; 4]],
        basis,
        scales,
        config,
        rho: bilap::bubble::rho_from_eps(eps),
    };
    let t0 = Instant::now();
    match match_solve(&problem) {
        Ok((report, _)) => {
            println!("converged={} sweeps={} {:.1?}", report.converged, report.outer_sweeps, t0.elapsed());
            println!("mismatch = {:?}", report.mismatch);
            println!("u = {:?} lambda = {:?}", report.u, report.lambda);
            println!("tau = {:?} (tau* = {:?})", report.tau, report.tau_star);
            println!("mass_ratio = {}", report.mass_ratio);
            println!("sup_outer = {:.3e} sup_limit = {:.3e}", report.sup_distance_outer, report.sup_distance_to_limit);
            println!("pde_residual = {:.3e} interface_jump = {:.3e}", report.pde_residual, report.interface_jump);
        }
        Err(e) => println!("FAILED after {:.1?}: {e}", t0.elapsed()),
    }
}
