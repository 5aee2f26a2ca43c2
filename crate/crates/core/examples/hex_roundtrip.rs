//! Perturb two edges and one coupling deep inside the N = 2 hexagonal parallelogram and recover
//! them with the initial procedure followed by column descent.

use std::sync::Arc;
use std::time::Instant;

use qgraph_inverse::inverse_hex::reconstruct_hex;
use qgraph_inverse::lattice::{build_hex, Coord};
use qgraph_inverse::oracle::ForwardOracle;
use qgraph_inverse::recovery::InverseSettings;
use qgraph_inverse::sturm::SymmetricPotential;
use qgraph_inverse::vertex_op::{CouplingField, EdgeField, Network};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let domain = Arc::new(build_hex(2)?);
    let at = |n1, n2, s| domain.vertex(&Coord::Hex { n1, n2, s }).unwrap();
    let background = EdgeField::uniform(SymmetricPotential::zero(2));

    let mut edges = background.clone();
    let picks = [
        (domain.edge_between(at(1, 1, 1), at(1, 1, 2)).unwrap(), vec![0.4, -0.5, 0.25]),
        (domain.edge_between(at(1, 2, 1), at(0, 2, 2)).unwrap(), vec![-0.2, 0.3, 0.6]),
    ];
    for (e, c) in &picks {
        edges.set(*e, SymmetricPotential::new(c.clone())?);
    }
    let mut couplings = CouplingField::uniform(0.0);
    couplings.set(at(1, 1, 2), 0.9);

    let oracle = ForwardOracle::new(Network::new(domain.clone(), edges.clone(), couplings.clone()));
    let t0 = Instant::now();
    let state = reconstruct_hex(&oracle, &background, InverseSettings::default())?;
    println!("reconstructed {} edges and {} couplings in {:.2?}", state.edges.len(), state.couplings.len(), t0.elapsed());

    let worst_v = (0..domain.edge_count()).map(|e| state.fields.edges[e].as_ref().unwrap().max_abs_diff(edges.get(e))).fold(0.0, f64::max);
    let worst_c = domain.interior().iter().map(|v| (state.fields.couplings[*v].unwrap() - couplings.get(*v)).abs()).fold(0.0, f64::max);
    println!("max coefficient error {worst_v:.3e}, max coupling error {worst_c:.3e}");
    for (e, _) in &picks {
        let r = &state.edges[e];
        let (a, b) = domain.edge(*e);
        println!("{}-{}: {:?} from {} ({})", domain.coord(a), domain.coord(b), r.coefficients, r.solution, r.method);
    }
    Ok(())
}
