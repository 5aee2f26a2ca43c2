//! Perturb three interior edges and two couplings of a 5 x 4 square lattice, synthesise D-N data
//! and recover everything by layer stripping.

use std::sync::Arc;
use std::time::Instant;

use qgraph_inverse::inverse_square::reconstruct_square;
use qgraph_inverse::lattice::{build_square, Coord};
use qgraph_inverse::oracle::ForwardOracle;
use qgraph_inverse::recovery::InverseSettings;
use qgraph_inverse::sturm::SymmetricPotential;
use qgraph_inverse::vertex_op::{CouplingField, EdgeField, Network};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let domain = Arc::new(build_square(5, 4)?);
    let at = |i, j| domain.vertex(&Coord::Square { i, j }).unwrap();
    let background = EdgeField::uniform(SymmetricPotential::zero(2));

    let mut edges = background.clone();
    let picks = [
        (domain.edge_between(at(2, 2), at(3, 2)).unwrap(), vec![0.5, -0.4, 0.3]),
        (domain.edge_between(at(3, 3), at(3, 2)).unwrap(), vec![-0.3, 0.6, 0.2]),
        (domain.edge_between(at(4, 1), at(4, 2)).unwrap(), vec![0.2, 0.3, -0.7]),
    ];
    for (e, c) in &picks {
        edges.set(*e, SymmetricPotential::new(c.clone())?);
    }
    let mut couplings = CouplingField::uniform(0.0);
    couplings.set(at(2, 3), 1.25);
    couplings.set(at(4, 2), -0.8);

    let net = Network::new(domain.clone(), edges.clone(), couplings.clone());
    let oracle = ForwardOracle::new(net);
    let t0 = Instant::now();
    let state = reconstruct_square(&oracle, &background, InverseSettings::default())?;
    println!("reconstructed {} edges and {} couplings in {:.2?}", state.edges.len(), state.couplings.len(), t0.elapsed());

    let mut worst_v = 0.0f64;
    for e in 0..domain.edge_count() {
        worst_v = worst_v.max(state.fields.edges[e].as_ref().unwrap().max_abs_diff(edges.get(e)));
    }
    let worst_c = domain.interior().iter().map(|v| (state.fields.couplings[*v].unwrap() - couplings.get(*v)).abs()).fold(0.0, f64::max);
    println!("max coefficient error {worst_v:.3e}, max coupling error {worst_c:.3e}");
    for (e, _) in &picks {
        let r = &state.edges[e];
        let (a, b) = domain.edge(*e);
        println!("{}-{}: {:?} from {} ({})", domain.coord(a), domain.coord(b), r.coefficients, r.solution, r.method);
    }
    Ok(())
}
