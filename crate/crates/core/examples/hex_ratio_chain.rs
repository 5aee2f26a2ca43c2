//! Along a hexagonal A-line the special solution is a product of edge ratios `-phi_in / phi_out`,
//! independent of the couplings below the line.  All ratios are `-1` on the free lattice.

use std::sync::Arc;

use qgraph_inverse::inverse_hex::{chain_ratios, compute_line_solution, line_chain_vertices};
use qgraph_inverse::lattice::build_hex;
use qgraph_inverse::oracle::ForwardOracle;
use qgraph_inverse::recovery::{InverseSettings, InverseState};
use qgraph_inverse::sturm::SymmetricPotential;
use qgraph_inverse::vertex_op::{CouplingField, EdgeField, Network, PartialFields};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let domain = Arc::new(build_hex(2)?);
    let free = EdgeField::uniform(SymmetricPotential::zero(2));
    let lambda = 4.2;
    for perturb in [false, true] {
        let mut edges = free.clone();
        let mut couplings = CouplingField::uniform(0.0);
        if perturb {
            let alpha = line_chain_vertices(&domain, 0)?;
            let e = domain.neighbors(alpha[1])[0].1;
            edges.set(e, SymmetricPotential::new(vec![0.8, -0.5, 0.2])?);
            couplings.set(domain.interior()[0], 1.5);
        }
        let oracle = ForwardOracle::new(Network::new(domain.clone(), edges, couplings));
        let mut state = InverseState::new(domain.clone(), &free, InverseSettings::default());
        state.fields = PartialFields::from_network(oracle.network());
        println!("{}", if perturb { "perturbed" } else { "free" });
        for k in [1, 0, -1] {
            let u = compute_line_solution(&oracle, &state, k, lambda)?;
            let chain = chain_ratios(&domain, k, &u, lambda)?;
            let ratios: Vec<String> = chain.ratios.iter().map(|r| r.map_or("-".into(), |r| format!("{r:.6}"))).collect();
            println!("  A{k}: ratios [{}]", ratios.join(", "));
        }
    }
    Ok(())
}
