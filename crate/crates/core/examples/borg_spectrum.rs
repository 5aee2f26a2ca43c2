//! Dirichlet spectrum of a symmetric edge potential, its eigenvalue gradients, and the
//! Borg-type reconstruction from the first `J + 1` eigenvalues.

use qgraph_inverse::sturm::{borg_reconstruct, dirichlet_spectrum, eigen_gradient, propagate, SymmetricPotential};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let v = SymmetricPotential::new(vec![0.6, -1.2, 0.5, 0.3])?;
    let j = v.truncation();
    let eig = dirichlet_spectrum(&v, j + 1)?;
    println!("eigenvalues: {eig:.10?}");
    for l in &eig {
        println!("  phi(1, {l:.6}) = {:.2e}, gradient {:.6?}", propagate(&v, *l).phi, eigen_gradient(&v, *l));
    }
    let fit = borg_reconstruct(&eig, j)?;
    println!("recovered {:.12?} in {} Newton steps", fit.potential.coeffs(), fit.iterations);
    println!("coefficient error {:.2e}, spectral residual {:.2e}", fit.potential.max_abs_diff(&v), fit.residual);
    Ok(())
}
