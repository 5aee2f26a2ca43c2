//! One line per acceptance criterion; exits nonzero when any fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use qgraph_inverse::cli::{cmd_roundtrip, ProblemConfig};
use qgraph_inverse::inverse_hex::{chain_ratios, compute_line_solution, line_chain_vertices, reconstruct_hex, transfer_chain};
use qgraph_inverse::inverse_square::reconstruct_square;
use qgraph_inverse::lattice::{build_hex, build_square, Domain, Family, LatticeKind};
use qgraph_inverse::oracle::ForwardOracle;
use qgraph_inverse::recovery::{InverseSettings, InverseState};
use qgraph_inverse::sturm::{borg_reconstruct, dirichlet_spectrum, eigen_gradient, propagate, SymmetricPotential};
use qgraph_inverse::vertex_op::{
    dtn_map, march_partial_cauchy, neumann_derivative, solve_dirichlet, special_boundary_data, special_solution_spec, CouplingField, EdgeField,
    Network, PartialFields,
};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Verdict {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Verdict {
    Verdict { pass, detail }
}

fn sup(xs: &[f64]) -> f64 {
    xs.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

fn free() -> EdgeField {
    EdgeField::uniform(SymmetricPotential::zero(2))
}

fn interior_edges(d: &Domain) -> Vec<usize> {
    (0..d.edge_count()).filter(|e| {
        let (a, b) = d.edge(*e);
        !d.is_boundary(a) && !d.is_boundary(b)
    }).collect()
}

/// `edges` interior edges with coefficient vectors of norm at most one, `couplings` couplings in [-1, 1.5].
fn sparse_net(d: Arc<Domain>, rng: &mut ChaCha8Rng, edges: usize, couplings: usize) -> Network {
    let mut field = free();
    let mut pool = interior_edges(&d);
    pool.shuffle(rng);
    for e in pool.into_iter().take(edges) {
        let c: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let r = rng.random_range(0.0..1.0);
        field.set(e, SymmetricPotential::new(c.iter().map(|x| r * x / norm).collect()).unwrap());
    }
    let mut cs = CouplingField::uniform(0.0);
    let mut verts = d.interior().to_vec();
    verts.shuffle(rng);
    for v in verts.into_iter().take(couplings) {
        cs.set(v, rng.random_range(-1.0..1.5));
    }
    Network::new(d, field, cs)
}

/// Random interior edges and couplings at density 0.4, for the structural checks.
fn random_net(d: Arc<Domain>, rng: &mut ChaCha8Rng) -> Network {
    let mut field = free();
    for e in interior_edges(&d) {
        if rng.random_bool(0.4) {
            field.set(e, SymmetricPotential::new((0..3).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap());
        }
    }
    let mut cs = CouplingField::uniform(0.0);
    for v in d.interior() {
        if rng.random_bool(0.4) {
            cs.set(*v, rng.random_range(-1.0..1.0));
        }
    }
    Network::new(d, field, cs)
}

fn roundtrip(kind: LatticeKind, edges: usize, couplings: usize, budget: Duration, seeds: &[u64]) -> Verdict {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let d = Arc::new(match kind {
        LatticeKind::Square => build_square(5, 4).unwrap(),
        LatticeKind::Hex => build_hex(2).unwrap(),
    });
    let (mut wv, mut wc, mut slowest) = (0.0f64, 0.0f64, Duration::ZERO);
    for &seed in seeds {
        let net = sparse_net(d.clone(), &mut ChaCha8Rng::seed_from_u64(seed), edges, couplings);
        let oracle = ForwardOracle::new(net.clone());
        let t = Instant::now();
        let r = pool.install(|| match kind {
            LatticeKind::Square => reconstruct_square(&oracle, &free(), InverseSettings::default()),
            LatticeKind::Hex => reconstruct_hex(&oracle, &free(), InverseSettings::default()),
        });
        slowest = slowest.max(t.elapsed());
        let state = match r {
            Ok(s) => s,
            Err(e) => return verdict(false, format!("seed {seed}: {e}")),
        };
        for e in 0..d.edge_count() {
            wv = wv.max(state.fields.edges[e].as_ref().unwrap().max_abs_diff(net.edges.get(e)));
        }
        for v in d.interior() {
            wc = wc.max((state.fields.couplings[*v].unwrap() - net.couplings.get(*v)).abs());
        }
    }
    verdict(
        wv <= 1e-4 && wc <= 1e-6 && slowest <= budget,
        format!("{} draws: potential {wv:.2e}, coupling {wc:.2e}, slowest {slowest:.2?} (budget {budget:?})", seeds.len()),
    )
}

fn marching() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst = 0.0f64;
    let mut done = 0;
    while done < 20 {
        let d = Arc::new(if done % 2 == 0 {
            build_square(rng.random_range(1..=5), rng.random_range(1..=5)).unwrap()
        } else {
            build_hex(rng.random_range(1..=3)).unwrap()
        });
        let net = random_net(d.clone(), &mut rng);
        // between the exponential regime and the first edge eigenvalue
        let lambda = rng.random_range(0.5..6.0);
        let f: Vec<f64> = (0..d.boundary().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let Ok(u) = solve_dirichlet(&net, lambda, &f) else { continue };
        let nd = neumann_derivative(&net, lambda, &u);
        let g: Vec<f64> = d.sides().left.iter().map(|v| nd[d.boundary_slot(*v).unwrap()]).collect();
        let m = match march_partial_cauchy(&net, lambda, &f, &g) {
            Ok(m) => m,
            Err(e) => return verdict(false, format!("march failed: {e}")),
        };
        let err = m.iter().zip(&u).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / sup(&u).max(1.0);
        worst = worst.max(err);
        done += 1;
    }
    verdict(worst <= 1e-9, format!("20 pairs, lambda in [0.5, 6): max difference {worst:.2e}"))
}

fn lines(d: &Domain) -> Vec<(Family, i64)> {
    let (a, b) = (d.dims.0 as i64, d.dims.1 as i64);
    match d.kind {
        LatticeKind::Square => (1..=a).map(|k| (Family::A, k)).chain((2..=b + 1).map(|l| (Family::B, l))).collect(),
        LatticeKind::Hex => (-(a + 1)..=a).map(|k| (Family::A, k)).chain((-1..=a).map(|l| (Family::B, l))).collect(),
    }
}

fn support() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut worst = 0.0f64;
    let mut count = 0;
    for d in [build_square(5, 4).unwrap(), build_hex(2).unwrap()] {
        let d = Arc::new(d);
        let net = random_net(d.clone(), &mut rng);
        let mut taken = 0;
        while taken < 5 {
            let lambda = rng.random_range(-5.0..60.0);
            let Ok(dn) = dtn_map(&net, lambda) else { continue };
            let specs: Vec<_> = lines(&d).into_iter().map(|(f, k)| special_solution_spec(&d, f, k).unwrap()).collect();
            let mut data = Vec::new();
            for spec in &specs {
                let drive = net.edges.get(d.pendant_link(spec.drive.vertex).1).clone();
                match special_boundary_data(&d, &dn, lambda, spec, &drive) {
                    Ok(f) => data.push(f),
                    Err(_) => break,
                }
            }
            if data.len() < specs.len() {
                continue;
            }
            for (spec, f) in specs.iter().zip(&data) {
                let u = solve_dirichlet(&net, lambda, f).unwrap();
                let below = (0..d.vertex_count()).filter(|v| spec.zero[*v]).fold(0.0f64, |m, v| m.max(u[v].abs()));
                worst = worst.max(below / sup(&u));
                count += 1;
            }
            taken += 1;
        }
    }
    verdict(worst <= 1e-9, format!("{count} special solutions: max |u| below the line {worst:.2e} relative"))
}

fn borg() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut worst, mut worst_grad) = (0.0f64, 0.0f64);
    for _ in 0..50 {
        let j = rng.random_range(0..=4usize);
        let mut c: Vec<f64> = (0..=j).map(|_| rng.random_range(-1.0..1.0)).collect();
        let norm = c.iter().map(|x| x * x).sum::<f64>().sqrt();
        let r = rng.random_range(0.0..2.0);
        c.iter_mut().for_each(|x| *x *= r / norm);
        let v = SymmetricPotential::new(c.clone()).unwrap();
        let eig = dirichlet_spectrum(&v, j + 1).unwrap();
        match borg_reconstruct(&eig, j) {
            Ok(fit) => worst = worst.max(fit.potential.max_abs_diff(&v)),
            Err(e) => return verdict(false, format!("{c:?}: {e}")),
        }
        for (k, lam) in eig.iter().enumerate() {
            let g = eigen_gradient(&v, *lam);
            for i in 0..=j {
                let h = 1e-5;
                let shifted = |s: f64| {
                    let mut c2 = c.clone();
                    c2[i] += s;
                    dirichlet_spectrum(&SymmetricPotential::new(c2).unwrap(), k + 1).unwrap()[k]
                };
                let fd = (shifted(h) - shifted(-h)) / (2.0 * h);
                worst_grad = worst_grad.max((g[i] - fd).abs() / fd.abs().max(1.0));
            }
        }
    }
    verdict(worst <= 1e-6 && worst_grad <= 1e-5, format!("50 vectors: coefficient error {worst:.2e}, gradient vs differences {worst_grad:.2e}"))
}

fn anchors() -> Verdict {
    let zero = SymmetricPotential::zero(2);
    let exact = |l: f64| if l == 0.0 { 1.0 } else { l.sqrt().sin() / l.sqrt() };
    let phi = [0.0, 1.0, PI * PI, 20.0].iter().map(|l| (propagate(&zero, *l).phi - exact(*l)).abs()).fold(0.0, f64::max);
    let spec = dirichlet_spectrum(&zero, 6).unwrap();
    let dir = spec.iter().enumerate().map(|(k, x)| (x - ((k + 1) as f64 * PI).powi(2)).abs()).fold(0.0, f64::max);
    let base = SymmetricPotential::new(vec![0.3, -0.4, 0.2]).unwrap();
    let moved = SymmetricPotential::new(vec![1.8, -0.4, 0.2]).unwrap();
    let mut shift = 0.0f64;
    for (a, b) in dirichlet_spectrum(&base, 4).unwrap().iter().zip(dirichlet_spectrum(&moved, 4).unwrap()) {
        shift = shift.max((b - a - 1.5).abs());
    }
    for l in [-3.0, 2.0, 17.0, 55.0] {
        let (p, q) = (propagate(&base, l), propagate(&moved, l + 1.5));
        shift = shift.max((p.phi - q.phi).abs()).max((p.dphi - q.dphi).abs());
    }
    verdict(
        phi <= 1e-10 && dir <= 1e-9 && shift <= 1e-9,
        format!("phi(1) {phi:.2e}, Dirichlet spectrum {dir:.2e}, constant shift {shift:.2e}"),
    )
}

fn ratio_chain() -> Verdict {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (mut worst, mut worst_transfer, mut free_dev) = (0.0f64, 0.0f64, 0.0f64);
    let mut compared = 0;
    for nn in 1..=3 {
        let d = Arc::new(build_hex(nn).unwrap());
        let unperturbed = Network::new(d.clone(), free(), CouplingField::uniform(0.0));
        let perturbed = random_net(d.clone(), &mut rng);
        for lambda in [0.7, 3.1, 14.2, 27.5] {
            for (net, is_free) in [(&unperturbed, true), (&perturbed, false)] {
                let oracle = ForwardOracle::new(net.clone());
                let mut state = InverseState::new(d.clone(), &net.edges, InverseSettings::default());
                state.fields = PartialFields::from_network(net);
                for k in -(nn as i64)..=nn as i64 {
                    let Ok(u) = compute_line_solution(&oracle, &state, k, lambda) else { continue };
                    let Ok(chain) = chain_ratios(&d, k, &u, lambda) else { continue };
                    let alpha = line_chain_vertices(&d, k).unwrap();
                    for (p, v) in chain.products().iter().zip(&alpha[1..]) {
                        if let (Some(p), Some(x)) = (p, u[*v]) {
                            worst = worst.max((p - x).abs() / x.abs().max(1e-300));
                            compared += 1;
                        }
                    }
                    let known = transfer_chain(&d, &state.fields, k, lambda).unwrap();
                    for (a, b) in chain.ratios.iter().zip(&known.ratios) {
                        if let (Some(a), Some(b)) = (a, b) {
                            worst_transfer = worst_transfer.max((a - b).abs() / b.abs().max(1.0));
                            if is_free {
                                free_dev = free_dev.max((a + 1.0).abs());
                            }
                        }
                    }
                }
            }
        }
    }
    verdict(
        compared > 0 && worst <= 1e-9 && worst_transfer <= 1e-9 && free_dev <= 1e-9,
        format!("{compared} products: {worst:.2e} relative; ratios vs transfers {worst_transfer:.2e}; unperturbed |ratio + 1| {free_dev:.2e}"),
    )
}

const DETERMINISM_CONFIG: &str = r#"
lattice = "square"
m = 4
n = 3
seed = 8

[[edge]]
from = [2, 2]
to = [3, 2]
coefficients = [0.5, -0.4, 0.3]

[[vertex]]
at = [2, 2]
coupling = 1.25
"#;

fn determinism() -> Verdict {
    let config = ProblemConfig::from_toml(DETERMINISM_CONFIG).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    let runs = [cmd_roundtrip(&config, Some(&a)), cmd_roundtrip(&config, Some(&b))];
    if let Some(e) = runs.iter().find_map(|r| r.as_ref().err()) {
        return verdict(false, format!("roundtrip failed: {e}"));
    }
    let ok = runs.iter().all(|r| r.as_ref().unwrap().failure.is_none());
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    verdict(ok && ta == tb, format!("two roundtrip reports of {} bytes, identical: {}", ta.len(), ta == tb))
}

fn main() -> ExitCode {
    let criteria: Vec<(&str, Box<dyn Fn() -> Verdict>)> = vec![
        ("square roundtrip", Box::new(|| roundtrip(LatticeKind::Square, 3, 2, Duration::from_secs(60), &[1, 2, 3]))),
        ("hex roundtrip", Box::new(|| roundtrip(LatticeKind::Hex, 2, 1, Duration::from_secs(120), &[1, 2, 3]))),
        ("partial-data marching", Box::new(marching)),
        ("special-solution support", Box::new(support)),
        ("Borg kernel", Box::new(borg)),
        ("analytic anchors", Box::new(anchors)),
        ("hex ratio chain", Box::new(ratio_chain)),
        ("determinism", Box::new(determinism)),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let v = check();
        failed += usize::from(!v.pass);
        println!("{} {}. {name}: {} [{:.1?}]", if v.pass { "PASS" } else { "FAIL" }, i + 1, v.detail, t.elapsed());
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
