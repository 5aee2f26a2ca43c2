//! Reconstruction on the hexagonal parallelogram.
//!
//! The top lines `A_k` and the columns `B_l` carry special solutions that vanish below them.  On
//! `A_k` the solution is a product of edge ratios, because every vertex just below the line has
//! only two live neighbours.  After the initial strips along `A_N` and `B_N`, local steps push the
//! columns down until every edge and coupling is known.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Coord, Domain, Family, LatticeKind, VertexId};
use crate::oracle::DtnOracle;
use crate::recovery::{available_recoveries, execute_recovery, has_recoveries, missing_summary, strip_line, strip_with, HexSchedule, InverseSettings, InverseState, RecoveryKind};
use crate::sturm::POLE_GUARD;
use crate::vertex_op::{known_transfers, special_plan, special_solution, special_solution_spec, EdgeField, PartialFields, SpecialSolution};

/// Lowest fully processed `A` line and `B` column.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HexFrontier {
    pub a_index: i64,
    pub b_index: i64,
}

impl HexFrontier {
    /// Whether `v` lies on or above the processed `A` line or right of the processed column.
    pub fn contains(&self, domain: &Domain, v: VertexId) -> bool {
        let n = domain.dims.1 as i64;
        domain.level(v) >= 3 * n + 2 + 3 * self.a_index || domain.column_level(v) >= 3 * self.b_index + 2
    }
}

/// Successive ratios of a line solution along `A_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatioChain {
    pub index: i64,
    pub lambda: f64,
    /// `ratios[l - 1] = u(alpha_l) / u(alpha_{l-1})`; `None` where the denominator is too small.
    pub ratios: Vec<Option<f64>>,
}

impl RatioChain {
    /// Partial products, i.e. the line values rebuilt from the ratios.
    pub fn products(&self) -> Vec<Option<f64>> {
        let mut acc = Some(1.0);
        self.ratios.iter().map(|r| {
            acc = acc.zip(*r).map(|(a, r)| a * r);
            acc
        }).collect()
    }
}

fn hex_only(domain: &Domain) -> Result<()> {
    if domain.kind != LatticeKind::Hex {
        return Err(Error::Validation("expected a hexagonal domain".into()));
    }
    Ok(())
}

/// The sublattice-1 vertices `alpha_0, alpha_1, ...` of `A_k`, starting at the unit value.
pub fn line_chain_vertices(domain: &Domain, k: i64) -> Result<Vec<VertexId>> {
    hex_only(domain)?;
    let spec = special_solution_spec(domain, Family::A, k)?;
    Ok(spec.line.vertices.iter().copied().filter(|v| matches!(domain.coord(*v), Coord::Hex { s: 1, .. })).collect())
}

/// The `A_k` solution at `lambda` on every vertex the known data reaches; zero below the line.
pub fn compute_line_solution(oracle: &dyn DtnOracle, state: &InverseState, k: i64, lambda: f64) -> Result<Vec<Option<f64>>> {
    hex_only(&state.domain)?;
    let spec = special_solution_spec(&state.domain, Family::A, k)?;
    special_solution(oracle, &state.fields, &spec, lambda)
}

/// Ratios of consecutive values along `A_k` from a computed line solution.
pub fn chain_ratios(domain: &Domain, k: i64, u: &[Option<f64>], lambda: f64) -> Result<RatioChain> {
    let alpha = line_chain_vertices(domain, k)?;
    let first = u[alpha[0]].ok_or_else(|| Error::Validation("line solution misses its first vertex".into()))?;
    if (first - 1.0).abs() > 1e-9 {
        return Err(Error::Validation(format!("line solution is not normalised: u(alpha_0) = {first}")));
    }
    let scale = alpha.iter().filter_map(|v| u[*v]).fold(0.0f64, |m, x| m.max(x.abs()));
    let ratios = alpha
        .windows(2)
        .map(|w| match (u[w[0]], u[w[1]]) {
            (Some(a), Some(b)) if a.abs() > POLE_GUARD * scale => Some(b / a),
            _ => None,
        })
        .collect();
    Ok(RatioChain { index: k, lambda, ratios })
}

/// The same ratios from known potentials: `-phi_exit(1) / phi_entry(1)` across the vertex below
/// each step.
pub fn transfer_chain(domain: &Domain, fields: &PartialFields, k: i64, lambda: f64) -> Result<RatioChain> {
    let alpha = line_chain_vertices(domain, k)?;
    let tr = known_transfers(fields, lambda);
    let mut ratios = Vec::new();
    for w in alpha.windows(2) {
        let below = domain.neighbors(w[0]).iter().find_map(|(x, e0)| domain.edge_between(*x, w[1]).map(|e1| (*e0, e1)));
        let (e0, e1) = below.ok_or_else(|| Error::Validation("consecutive line vertices share no neighbour".into()))?;
        ratios.push(match (tr[e0], tr[e1]) {
            (Some(a), Some(b)) if !a.near_pole(POLE_GUARD) => Some(-b.phi / a.phi),
            _ => None,
        });
    }
    Ok(RatioChain { index: k, lambda, ratios })
}

fn recovery_at(state: &InverseState, spec: &SpecialSolution, pick: impl Fn(&RecoveryKind) -> bool) -> Option<RecoveryKind> {
    let plan = special_plan(&state.domain, &state.fields, spec);
    available_recoveries(&state.domain, &state.fields, spec, &plan).into_iter().find(pick)
}

/// At `alpha = alpha_{k,l}`: the edge reaching it from the vanishing vertex on its left (from the
/// chain ratio), then the edge leaving it downwards together with its coupling.
pub fn recover_below_line_pair(oracle: &dyn DtnOracle, state: &mut InverseState, k: i64, alpha: VertexId) -> Result<()> {
    hex_only(&state.domain)?;
    let spec = special_solution_spec(&state.domain, Family::A, k)?;
    if !spec.line.vertices.contains(&alpha) {
        return Err(Error::Validation(format!("{} is not on A{k}", state.domain.coord(alpha))));
    }
    let d = state.domain.clone();
    let entering = |r: &RecoveryKind| matches!(r, RecoveryKind::Ratio { edge, .. } if { let (a, b) = d.edge(*edge); a == alpha || b == alpha });
    if let Some(kind) = recovery_at(state, &spec, entering) {
        execute_recovery(oracle, state, &spec, kind)?;
    }
    let at_alpha = |r: &RecoveryKind| matches!(r, RecoveryKind::Pole { at, .. } | RecoveryKind::Coupling { at } if *at == alpha);
    match recovery_at(state, &spec, at_alpha) {
        Some(kind) => execute_recovery(oracle, state, &spec, kind),
        None if state.fields.couplings[alpha].is_some() || d.is_boundary(alpha) => Ok(()),
        None => Err(Error::Stalled(format!("nothing to recover at {} with A{k}", d.coord(alpha)))),
    }
}

/// Strip `A_k` and then the column `B_l`.
pub fn initial_procedure(oracle: &dyn DtnOracle, state: &mut InverseState, k: i64, l: i64) -> Result<HexFrontier> {
    hex_only(&state.domain)?;
    for (family, index) in [(Family::A, k), (Family::B, l)] {
        let spec = special_solution_spec(&state.domain, family, index)?;
        state.phase = format!("initial {}", spec.label());
        strip_line(oracle, state, &spec)?;
    }
    Ok(HexFrontier { a_index: k, b_index: l })
}

/// One local step: the edge from `a` into the vanishing region of the given line, and `C_a`.
pub fn local_step(oracle: &dyn DtnOracle, state: &mut InverseState, family: Family, index: i64, a: VertexId) -> Result<()> {
    hex_only(&state.domain)?;
    let spec = special_solution_spec(&state.domain, family, index)?;
    let kind = recovery_at(state, &spec, |r| matches!(r, RecoveryKind::Pole { at, .. } if *at == a))
        .ok_or_else(|| Error::Stalled(format!("no local step at {} with {}", state.domain.coord(a), spec.label())))?;
    execute_recovery(oracle, state, &spec, kind)
}

/// Order in which the special solutions are tried after the initial procedure.
pub fn schedule(domain: &Domain, schedule: HexSchedule) -> Vec<(Family, i64)> {
    let n = domain.dims.1 as i64;
    let b: Vec<(Family, i64)> = (-1..=n).rev().map(|k| (Family::B, k)).collect();
    let a: Vec<(Family, i64)> = (-(n + 1)..=n).rev().map(|k| (Family::A, k)).collect();
    match schedule {
        HexSchedule::BDescent => b.into_iter().chain(a).collect(),
        HexSchedule::ADescent => a.into_iter().chain(b).collect(),
    }
}

fn frontier_of(state: &InverseState, initial: HexFrontier) -> Result<HexFrontier> {
    let mut f = initial;
    let done = |family, index| -> Result<bool> {
        let spec = special_solution_spec(&state.domain, family, index)?;
        Ok(crate::recovery::strip_gaps(state, &spec).is_empty())
    };
    while f.b_index > -1 && done(Family::B, f.b_index - 1)? {
        f.b_index -= 1;
    }
    let n = state.domain.dims.1 as i64;
    while f.a_index > -(n + 1) && done(Family::A, f.a_index - 1)? {
        f.a_index -= 1;
    }
    Ok(f)
}

/// Recover every interior edge potential and coupling of the parallelogram.
pub fn reconstruct_hex(oracle: &dyn DtnOracle, boundary_edges: &EdgeField, settings: InverseSettings) -> Result<InverseState> {
    let domain = Arc::new(oracle.domain().clone());
    let mut state = InverseState::new(domain, boundary_edges, settings);
    run_hex(oracle, &mut state)?;
    Ok(state)
}

/// As [`reconstruct_hex`], leaving partial progress in `state` on failure.
pub fn run_hex(oracle: &dyn DtnOracle, state: &mut InverseState) -> Result<()> {
    let domain = state.domain.clone();
    hex_only(&domain)?;
    let n = domain.dims.1 as i64;
    let order = schedule(&domain, state.settings.schedule);
    let mut frontier = initial_procedure(oracle, state, n, n)?;
    let specs: Vec<SpecialSolution> = order.iter().map(|(f, k)| special_solution_spec(&domain, *f, *k)).collect::<Result<_>>()?;
    // always go back to the most preferred solution that has something to offer
    'sweep: while !state.is_complete() {
        for spec in &specs {
            if has_recoveries(state, spec) {
                state.phase = format!("descent {}", spec.label());
                strip_with(oracle, state, spec)?;
                frontier = frontier_of(state, frontier)?;
                continue 'sweep;
            }
        }
        return Err(Error::Stalled(missing_summary(state)));
    }
    let frontier = frontier_of(state, frontier)?;
    if let Some(v) = (0..domain.vertex_count()).find(|v| !domain.is_boundary(*v) && !frontier.contains(&domain, *v)) {
        return Err(Error::Stalled(format!("{} outside the processed region", domain.coord(v))));
    }
    Ok(())
}
