//! Cauchy data on the left side plus Dirichlet data off the right side determine the solution:
//! march it vertex by vertex, compare with a dense Dirichlet solve, and complete the right-side
//! data from the D-N map alone.

use std::sync::Arc;

use qgraph_inverse::lattice::build_square;
use qgraph_inverse::oracle::ForwardOracle;
use qgraph_inverse::sturm::SymmetricPotential;
use qgraph_inverse::vertex_op::{complete_boundary_data, march_partial_cauchy, neumann_derivative, solve_dirichlet, CouplingField, EdgeField, Network};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let domain = Arc::new(build_square(4, 3)?);
    let mut edges = EdgeField::uniform(SymmetricPotential::zero(2));
    edges.set(9, SymmetricPotential::new(vec![0.4, -0.3, 0.2])?);
    let mut couplings = CouplingField::uniform(0.0);
    couplings.set(domain.interior()[5], 0.7);
    let net = Network::new(domain.clone(), edges, couplings);
    let lambda = 3.1;

    let f: Vec<f64> = (0..domain.boundary().len()).map(|k| (1.3 * k as f64).cos()).collect();
    let u = solve_dirichlet(&net, lambda, &f)?;
    let nd = neumann_derivative(&net, lambda, &u);
    let g: Vec<f64> = domain.sides().left.iter().map(|b| nd[domain.boundary_slot(*b).unwrap()]).collect();

    let marched = march_partial_cauchy(&net, lambda, &f, &g)?;
    let err = marched.iter().zip(&u).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("marching vs dense solve: max difference {err:.2e} over {} vertices", u.len());

    let oracle = ForwardOracle::new(net);
    let completed = complete_boundary_data(&oracle, lambda, &f, &g)?;
    let err = completed.iter().zip(&f).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    println!("right side completed from D-N data: max difference {err:.2e}");
    Ok(())
}
