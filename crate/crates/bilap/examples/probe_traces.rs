use bilap::green::{DomainModel, GreenModel, PotentialModel};
use bilap::matching::outer::*;
use bilap::matching::{MatchState, ScaleParams, SolverConfig};
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
    let problem = MatchProblem {
        green: &green, potential: &PotentialModel::One,
        x: vec![[0.0; 4]], basis: basis.clone(), scales, config,
        rho: bilap::bubble::rho_from_eps(eps),
    };
    let state = MatchState::initial(1, l);
    let t0 = Instant::now();
    let it = interior_traces(&problem, &state, 0, None).unwrap();
    println!("interior_traces: {:.2?}", t0.elapsed());
    let t0 = Instant::now();
    let et = exterior_traces(&problem, &state, 0, None).unwrap();
    println!("exterior_traces: {:.2?}", t0.elapsed());
    let t0 = Instant::now();
    for _ in 0..10 { let _ = exterior_traces(&problem, &state, 0, None).unwrap(); }
    println!("exterior_traces x10: {:.2?}", t0.elapsed());
    let _ = (it, et);
}
