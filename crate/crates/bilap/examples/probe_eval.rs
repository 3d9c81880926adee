use bilap::sphere::{SphereBasis, SphericalGrid};
use std::sync::Arc;
use std::time::Instant;

fn main() {
    let basis = Arc::new(SphereBasis::new(Arc::new(SphericalGrid::new(16)), 8).unwrap());
    // replicate the projected-node pattern: directions from grid nodes
    let dirs: Vec<[f64;4]> = basis.grid.nodes.clone();
    let t0 = Instant::now();
    let mut out: Vec<Option<Vec<f64>>> = Vec::new();
    for rep in 0..52 {
        for d in &dirs {
            let mut dd = *d;
            dd[0] += rep as f64 * 1e-9;
            let n = (dd[0]*dd[0]+dd[1]*dd[1]+dd[2]*dd[2]+dd[3]*dd[3]).sqrt();
            out.push(Some(basis.eval_modes_at(dd.map(|x| x / n))));
        }
    }
    println!("{} evals sequential: {:.2?}", out.len(), t0.elapsed());
    drop(out);
    // now the same via rayon on rows
    use rayon::prelude::*;
    let t0 = Instant::now();
    let rows: Vec<Vec<Option<Vec<f64>>>> = (0..52usize).into_par_iter().map(|rep| {
        dirs.iter().map(|d| {
            let mut dd = *d;
            dd[0] += rep as f64 * 1e-9;
            let n = (dd[0]*dd[0]+dd[1]*dd[1]+dd[2]*dd[2]+dd[3]*dd[3]).sqrt();
            Some(basis.eval_modes_at(dd.map(|x| x / n)))
        }).collect()
    }).collect();
    println!("{} evals rayon: {:.2?}", rows.len() * dirs.len(), t0.elapsed());
}
