use std::sync::Arc;

use proptest::prelude::*;
use qgraph_inverse::inverse_hex::{chain_ratios, compute_line_solution, line_chain_vertices};
use qgraph_inverse::lattice::{build_hex, build_square, Domain, Family, LatticeKind};
use qgraph_inverse::oracle::ForwardOracle;
use qgraph_inverse::recovery::{InverseSettings, InverseState};
use qgraph_inverse::sturm::{borg_reconstruct, dirichlet_spectrum, SymmetricPotential};
use qgraph_inverse::vertex_op::{
    dtn_map, march_partial_cauchy, neumann_derivative, solve_dirichlet, special_boundary_data, special_solution_spec, CouplingField, EdgeField,
    Network, PartialFields,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn domain(hex: bool, a: usize, b: usize) -> Arc<Domain> {
    Arc::new(if hex { build_hex(a).unwrap() } else { build_square(a, b).unwrap() })
}

/// Random interior edges and couplings; pendant edges stay free.
fn random_net(d: Arc<Domain>, seed: u64, amp: f64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut edges = EdgeField::uniform(SymmetricPotential::zero(2));
    for (e, &(a, b)) in d.edges().iter().enumerate() {
        if !d.is_boundary(a) && !d.is_boundary(b) && rng.random_bool(0.4) {
            let c: Vec<f64> = (0..3).map(|_| rng.random_range(-amp..amp)).collect();
            edges.set(e, SymmetricPotential::new(c).unwrap());
        }
    }
    let mut couplings = CouplingField::uniform(0.0);
    for v in d.interior() {
        if rng.random_bool(0.4) {
            couplings.set(*v, rng.random_range(-amp..amp));
        }
    }
    Network::new(d, edges, couplings)
}

fn lines(d: &Domain) -> Vec<(Family, i64)> {
    let (a, b) = (d.dims.0 as i64, d.dims.1 as i64);
    match d.kind {
        LatticeKind::Square => (1..=a).map(|k| (Family::A, k)).chain((2..=b + 1).map(|l| (Family::B, l))).collect(),
        LatticeKind::Hex => (-(a + 1)..=a).map(|k| (Family::A, k)).chain((-1..=a).map(|l| (Family::B, l))).collect(),
    }
}

fn sup(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    // continuation divides by phi(1) and grows like exp(sqrt(-lambda)) per edge, so the comparison
    // is made below the first edge eigenvalue and above the exponential regime
    #[test]
    fn marching_matches_dense_solve(hex in any::<bool>(), a in 1usize..=5, b in 1usize..=5, seed in any::<u64>(), lambda in 0.5f64..6.0) {
        let d = if hex { domain(true, 1 + a % 3, 0) } else { domain(false, a, b) };
        let net = random_net(d.clone(), seed, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let f: Vec<f64> = (0..d.boundary().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let u = solve_dirichlet(&net, lambda, &f);
        prop_assume!(u.is_ok());
        let u = u.unwrap();
        let nd = neumann_derivative(&net, lambda, &u);
        let g: Vec<f64> = d.sides().left.iter().map(|v| nd[d.boundary_slot(*v).unwrap()]).collect();
        let m = march_partial_cauchy(&net, lambda, &f, &g);
        prop_assume!(m.is_ok());
        let m = m.unwrap();
        let err = m.iter().zip(&u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        prop_assert!(err <= 1e-9 * sup(&u).max(1.0), "difference {err:e}");
    }

    #[test]
    fn special_solutions_vanish_below_their_lines(hex in any::<bool>(), seed in any::<u64>(), lambda in -5.0f64..60.0) {
        let d = if hex { domain(true, 2, 0) } else { domain(false, 4, 3) };
        let net = random_net(d.clone(), seed, 1.0);
        let dn = dtn_map(&net, lambda);
        prop_assume!(dn.is_ok());
        let dn = dn.unwrap();
        for (family, k) in lines(&d) {
            let spec = special_solution_spec(&d, family, k).unwrap();
            let drive = net.edges.get(d.pendant_link(spec.drive.vertex).1).clone();
            let Ok(f) = special_boundary_data(&d, &dn, lambda, &spec, &drive) else { continue };
            let u = solve_dirichlet(&net, lambda, &f).unwrap();
            let below = (0..d.vertex_count()).filter(|v| spec.zero[*v]).fold(0.0f64, |m, v| m.max(u[v].abs()));
            prop_assert!(below <= 1e-9 * sup(&u), "{}: {below:e} vs {:e}", spec.label(), sup(&u));
        }
    }

    #[test]
    fn chain_products_reproduce_line_values(nn in 1usize..=3, seed in any::<u64>(), lambda in -5.0f64..60.0) {
        let d = domain(true, nn, 0);
        let net = random_net(d.clone(), seed, 1.0);
        let oracle = ForwardOracle::new(net.clone());
        let mut state = InverseState::new(d.clone(), &net.edges, InverseSettings::default());
        state.fields = PartialFields::from_network(&net);
        let mut compared = 0;
        for k in -(nn as i64)..=nn as i64 {
            let Ok(u) = compute_line_solution(&oracle, &state, k, lambda) else { continue };
            let Ok(chain) = chain_ratios(&d, k, &u, lambda) else { continue };
            let alpha = line_chain_vertices(&d, k).unwrap();
            for (p, v) in chain.products().iter().zip(&alpha[1..]) {
                if let (Some(p), Some(x)) = (p, u[*v]) {
                    prop_assert!((p - x).abs() <= 1e-9 * x.abs().max(1e-300), "A{k}: {p} vs {x}");
                    compared += 1;
                }
            }
        }
        prop_assert!(compared > 0);
    }

    #[test]
    fn line_values_ignore_couplings_below(nn in 1usize..=3, seed in any::<u64>(), lambda in -5.0f64..60.0) {
        let d = domain(true, nn, 0);
        let net = random_net(d.clone(), seed, 1.0);
        let mut compared = 0;
        for k in -(nn as i64)..=nn as i64 {
            let spec = special_solution_spec(&d, Family::A, k).unwrap();
            let mut changed = net.clone();
            let mut fields = PartialFields::from_network(&net);
            for v in d.interior() {
                if spec.zero[*v] {
                    changed.couplings.set(*v, net.couplings.get(*v) + 3.0);
                    fields.couplings[*v] = None;
                }
            }
            let mut state = InverseState::new(d.clone(), &net.edges, InverseSettings::default());
            state.fields = fields;
            let (Ok(u0), Ok(u1)) = (
                compute_line_solution(&ForwardOracle::new(net.clone()), &state, k, lambda),
                compute_line_solution(&ForwardOracle::new(changed), &state, k, lambda),
            ) else { continue };
            let top = u0.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
            for v in &spec.line.vertices {
                if let (Some(a), Some(b)) = (u0[*v], u1[*v]) {
                    prop_assert!((a - b).abs() <= 1e-9 * top, "A{k} at {}: {a} vs {b}", d.coord(*v));
                    compared += 1;
                }
            }
        }
        prop_assert!(compared > 0);
    }

    #[test]
    fn borg_inverts_the_spectrum(c in prop::collection::vec(-1.0f64..1.0, 1..=5)) {
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let c: Vec<f64> = if norm > 2.0 { c.iter().map(|x| 2.0 * x / norm).collect() } else { c };
        let v = SymmetricPotential::new(c.clone()).unwrap();
        let eig = dirichlet_spectrum(&v, c.len()).unwrap();
        let fit = borg_reconstruct(&eig, c.len() - 1).unwrap();
        prop_assert!(fit.potential.max_abs_diff(&v) < 1e-6, "{:?} vs {c:?}", fit.potential.coeffs());
    }
}
