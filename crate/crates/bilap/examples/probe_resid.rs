use bilap::dd::Dd;
use bilap::radial::*;
use std::sync::Arc;

fn main() {
    for n in [128usize, 256, 512, 1024] {
        let grid = Arc::new(RadialGrid::uniform(n, 4.0));
        let ops = ModalOperators::new(grid.clone(), 0).unwrap();
        let ln2x4 = Dd::from(2.0).ln().mul_f64(4.0);
        let u: Vec<Dd> = grid.nodes.iter().map(|r| {
            let one_r2 = Dd::from(*r).mul_f64(*r).add_f64(1.0);
            ln2x4.sub(one_r2.ln().mul_f64(4.0))
        }).collect();
        let b = ops.bilaplacian(0).apply_dd(&u);
        let mut rs: Vec<(usize, f64)> = (0..=n).map(|i| {
            let rhs = u[i].exp().mul_f64(24.0);
            (i, b[i].sub(rhs).value().abs())
        }).collect();
        rs.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
        print!("n={n}: ");
        for (i, v) in rs.iter().take(4) { print!("[node {i} r={:.3} res={:.3e}] ", grid.nodes[*i], v); }
        println!();
    }
}
