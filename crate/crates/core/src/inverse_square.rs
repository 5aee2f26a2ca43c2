//! Layer stripping on the square lattice.
//!
//! Lines `A_k` (level `k + n + 1`) are stripped from the top right corner towards the main
//! anti-diagonal, then lines `B_l` (level `l`) towards the bottom left corner.  Each strip recovers
//! the edges joining the line to the one below it and the couplings on the line.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::lattice::{Family, LatticeKind};
use crate::oracle::DtnOracle;
use crate::recovery::{execute_recovery, missing_summary, strip_line, InverseSettings, InverseState, RecoveryKind};
use crate::vertex_op::{special_solution_spec, EdgeField};

pub use crate::recovery::extract_edge_eigenvalues;

/// Edge across a vanishing vertex: its far end is the only live neighbour with an unknown edge.
pub fn recover_adjacent_edge(oracle: &dyn DtnOracle, state: &mut InverseState, family: Family, index: i64, kind: RecoveryKind) -> Result<()> {
    if !matches!(kind, RecoveryKind::Ratio { .. }) {
        return Err(Error::Validation("expected a ratio recovery".into()));
    }
    let spec = special_solution_spec(&state.domain, family, index)?;
    execute_recovery(oracle, state, &spec, kind)
}

/// Edge from a line vertex into the vanishing region, together with the coupling at that vertex.
pub fn recover_interior_edge_and_coupling(oracle: &dyn DtnOracle, state: &mut InverseState, family: Family, index: i64, kind: RecoveryKind) -> Result<()> {
    if !matches!(kind, RecoveryKind::Pole { .. }) {
        return Err(Error::Validation("expected a pole recovery".into()));
    }
    let spec = special_solution_spec(&state.domain, family, index)?;
    execute_recovery(oracle, state, &spec, kind)
}

fn strip_layer(oracle: &dyn DtnOracle, state: &mut InverseState, family: Family, index: i64) -> Result<()> {
    let spec = special_solution_spec(&state.domain, family, index)?;
    state.phase = format!("strip {}", spec.label());
    strip_line(oracle, state, &spec).map(|_| ())
}

#[allow(non_snake_case)]
pub fn strip_layer_A(oracle: &dyn DtnOracle, state: &mut InverseState, k: i64) -> Result<()> {
    strip_layer(oracle, state, Family::A, k)
}

#[allow(non_snake_case)]
pub fn strip_layer_B(oracle: &dyn DtnOracle, state: &mut InverseState, l: i64) -> Result<()> {
    strip_layer(oracle, state, Family::B, l)
}

/// Recover every interior edge potential and coupling from D-N data and the pendant edges.
pub fn reconstruct_square(oracle: &dyn DtnOracle, boundary_edges: &EdgeField, settings: InverseSettings) -> Result<InverseState> {
    let domain = Arc::new(oracle.domain().clone());
    let mut state = InverseState::new(domain, boundary_edges, settings);
    run_square(oracle, &mut state)?;
    Ok(state)
}

/// As [`reconstruct_square`], leaving partial progress in `state` on failure.
pub fn run_square(oracle: &dyn DtnOracle, state: &mut InverseState) -> Result<()> {
    if state.domain.kind != LatticeKind::Square {
        return Err(Error::Validation("reconstruct_square needs a square domain".into()));
    }
    let (m, n) = (state.domain.dims.0 as i64, state.domain.dims.1 as i64);
    // A_m carries no interior vertex; A_0 is the same line as B_{n+1}
    for k in (1..m).rev() {
        strip_layer_A(oracle, state, k)?;
    }
    for l in (2..=n + 1).rev() {
        strip_layer_B(oracle, state, l)?;
    }
    if !state.is_complete() {
        return Err(Error::Stalled(missing_summary(state)));
    }
    Ok(())
}
