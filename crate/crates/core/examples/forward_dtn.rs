//! Vertex D-N maps of small free lattices, the constant-solution check at zero energy, and the
//! pole guard at an edge Dirichlet eigenvalue.

use std::f64::consts::PI;
use std::sync::Arc;

use qgraph_inverse::lattice::{build_hex, build_square};
use qgraph_inverse::sturm::SymmetricPotential;
use qgraph_inverse::vertex_op::{dtn_map, CouplingField, EdgeField, Network};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for domain in [build_square(2, 2)?, build_hex(1)?] {
        let kind = domain.kind;
        let net = Network::new(Arc::new(domain), EdgeField::uniform(SymmetricPotential::zero(2)), CouplingField::uniform(0.0));
        let dn = dtn_map(&net, 0.0)?;
        let worst = (0..dn.nrows()).map(|i| (dn.row(i).sum() - 1.0).abs()).fold(0.0, f64::max);
        println!("{kind:?}: {}x{} D-N matrix, max |row sum - 1| at lambda = 0: {worst:.2e}", dn.nrows(), dn.ncols());
        println!("  lambda = 0 diagonal: {:.6?}", dn.diagonal().as_slice());
        match dtn_map(&net, PI * PI) {
            Ok(_) => println!("  lambda = pi^2 evaluated"),
            Err(e) => println!("  lambda = pi^2 refused: {e}"),
        }
    }
    Ok(())
}
