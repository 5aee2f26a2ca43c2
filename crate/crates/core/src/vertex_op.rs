//! Vertex equations, Dirichlet solves, the Dirichlet-to-Neumann map and marching.
//!
//! With `phi_e` the transfer solution on edge `e`, a vertex-continuous solution `u` satisfies at
//! every interior vertex `v`
//!
//! ```text
//! sum_w u(w) / phi_vw(1) = (sum_w phi'_vw(1) / phi_vw(1) + C_v) u(v)
//! ```
//!
//! The assembled rows are divided by `deg(v)`.  The D-N map is `(Lf)(b) = u(w) / phi_bw(1)` for a
//! pendant `b` with interior neighbour `w`, and the outward derivative there is `-(Lf)(b)`.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{diagonal_line, DiagonalLine, Domain, EdgeId, Family, LatticeKind, VertexId};
use crate::oracle::DtnOracle;
use crate::sturm::{propagate, SymmetricPotential, TransferValues};

/// Guard used inside linear solves.  The assembled system is invariant under row scaling, so only
/// an (almost) exact Dirichlet eigenvalue of an incident edge is fatal here.
pub const SOLVE_POLE_GUARD: f64 = 1e-13;
/// Threshold on the condition number of the boundary block used for completion.
pub const COMPLETION_COND_LIMIT: f64 = 1e10;

/// A background potential with sparse per-edge overrides.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeField {
    default: SymmetricPotential,
    overrides: BTreeMap<EdgeId, SymmetricPotential>,
}

impl EdgeField {
    pub fn uniform(default: SymmetricPotential) -> Self {
        Self { default, overrides: BTreeMap::new() }
    }

    pub fn set(&mut self, e: EdgeId, v: SymmetricPotential) {
        let j = self.truncation().max(v.truncation());
        self.default = self.default.padded(j);
        self.overrides.insert(e, v.padded(j));
    }

    pub fn get(&self, e: EdgeId) -> &SymmetricPotential {
        self.overrides.get(&e).unwrap_or(&self.default)
    }

    pub fn default_potential(&self) -> &SymmetricPotential {
        &self.default
    }

    pub fn overrides(&self) -> &BTreeMap<EdgeId, SymmetricPotential> {
        &self.overrides
    }

    pub fn truncation(&self) -> usize {
        self.default.truncation()
    }

    /// Transfer values of every edge, integrating each distinct potential once.
    pub fn transfers(&self, edge_count: usize, lambda: f64) -> Vec<TransferValues> {
        let base = propagate(&self.default, lambda);
        let mut out = vec![base; edge_count];
        for (e, v) in &self.overrides {
            if *e < edge_count {
                out[*e] = propagate(v, lambda);
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CouplingField {
    default: f64,
    overrides: BTreeMap<VertexId, f64>,
}

impl CouplingField {
    pub fn uniform(default: f64) -> Self {
        Self { default, overrides: BTreeMap::new() }
    }
    pub fn set(&mut self, v: VertexId, c: f64) {
        self.overrides.insert(v, c);
    }
    pub fn get(&self, v: VertexId) -> f64 {
        self.overrides.get(&v).copied().unwrap_or(self.default)
    }
    pub fn default_value(&self) -> f64 {
        self.default
    }
    pub fn overrides(&self) -> &BTreeMap<VertexId, f64> {
        &self.overrides
    }
}

/// A domain together with the edge potentials and vertex couplings of the forward model.
#[derive(Clone, Debug)]
pub struct Network {
    pub domain: Arc<Domain>,
    pub edges: EdgeField,
    pub couplings: CouplingField,
}

impl Network {
    pub fn new(domain: Arc<Domain>, edges: EdgeField, couplings: CouplingField) -> Self {
        Self { domain, edges, couplings }
    }

    pub fn transfers(&self, lambda: f64) -> Vec<TransferValues> {
        self.edges.transfers(self.domain.edge_count(), lambda)
    }
}

/// Interior block and boundary coupling of the degree-normalised vertex system.
#[derive(Clone, Debug)]
pub struct VertexSystem {
    /// Interior vertex for every row/column of `matrix`.
    pub interior: Vec<VertexId>,
    pub matrix: DMatrix<f64>,
    /// `rhs = boundary_coupling * f` with columns in [`Domain::boundary`] order.
    pub boundary_coupling: DMatrix<f64>,
}

fn guard_incident(domain: &Domain, tr: &[TransferValues], v: VertexId, lambda: f64) -> Result<()> {
    for (_, e) in domain.neighbors(v) {
        if tr[*e].near_pole(SOLVE_POLE_GUARD) {
            return Err(Error::PoleGuard { lambda, what: format!("edge {e} at vertex {}", domain.coord(v)) });
        }
    }
    Ok(())
}

pub fn assemble_vertex_system(net: &Network, lambda: f64) -> Result<VertexSystem> {
    assemble_with(net, &net.transfers(lambda), lambda)
}

fn assemble_with(net: &Network, tr: &[TransferValues], lambda: f64) -> Result<VertexSystem> {
    let d = &*net.domain;
    let interior = d.interior().to_vec();
    let mut row_of = vec![usize::MAX; d.vertex_count()];
    for (r, v) in interior.iter().enumerate() {
        row_of[*v] = r;
    }
    let mut col_of = vec![usize::MAX; d.vertex_count()];
    for (c, b) in d.boundary().iter().enumerate() {
        col_of[*b] = c;
    }
    let n = interior.len();
    let mut matrix = DMatrix::zeros(n, n);
    let mut boundary_coupling = DMatrix::zeros(n, d.boundary().len());
    for (r, &v) in interior.iter().enumerate() {
        guard_incident(d, tr, v, lambda)?;
        let inv_deg = 1.0 / d.degree(v) as f64;
        let mut diag = net.couplings.get(v);
        for &(w, e) in d.neighbors(v) {
            let t = tr[e];
            diag += t.dphi / t.phi;
            if d.is_boundary(w) {
                boundary_coupling[(r, col_of[w])] = inv_deg / t.phi;
            } else {
                matrix[(r, row_of[w])] -= inv_deg / t.phi;
            }
        }
        matrix[(r, r)] += inv_deg * diag;
    }
    Ok(VertexSystem { interior, matrix, boundary_coupling })
}

/// Solve `A X = B` after row equilibration, flagging numerically singular systems.
fn solve_rows(mut a: DMatrix<f64>, mut b: DMatrix<f64>, lambda: f64) -> Result<DMatrix<f64>> {
    for r in 0..a.nrows() {
        let s = a.row(r).amax();
        if s == 0.0 || !s.is_finite() {
            return Err(Error::Singular { lambda });
        }
        a.row_mut(r).scale_mut(1.0 / s);
        b.row_mut(r).scale_mut(1.0 / s);
    }
    let lu = a.full_piv_lu();
    let u = lu.u();
    let (lo, hi) = u.diagonal().iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), x| (lo.min(x.abs()), hi.max(x.abs())));
    if !(lo > 1e-14 * hi) {
        return Err(Error::Singular { lambda });
    }
    lu.solve(&b).ok_or(Error::Singular { lambda })
}

/// Dirichlet problem: values on all vertices given boundary data `f` in [`Domain::boundary`] order.
pub fn solve_dirichlet(net: &Network, lambda: f64, f: &[f64]) -> Result<Vec<f64>> {
    let d = &*net.domain;
    if f.len() != d.boundary().len() {
        return Err(Error::Validation(format!("boundary data has {} entries, domain has {}", f.len(), d.boundary().len())));
    }
    let sys = assemble_vertex_system(net, lambda)?;
    let rhs = &sys.boundary_coupling * DVector::from_column_slice(f);
    let x = solve_rows(sys.matrix, DMatrix::from_column_slice(rhs.len(), 1, rhs.as_slice()), lambda)?;
    let mut u = vec![0.0; d.vertex_count()];
    for (k, b) in d.boundary().iter().enumerate() {
        u[*b] = f[k];
    }
    for (r, v) in sys.interior.iter().enumerate() {
        u[*v] = x[(r, 0)];
    }
    Ok(u)
}

/// `|dV| x |dV|` D-N matrix in [`Domain::boundary`] order.
pub fn dtn_map(net: &Network, lambda: f64) -> Result<DMatrix<f64>> {
    let d = &*net.domain;
    let tr = net.transfers(lambda);
    let sys = assemble_with(net, &tr, lambda)?;
    let x = solve_rows(sys.matrix, sys.boundary_coupling, lambda)?;
    let mut row_of = vec![usize::MAX; d.vertex_count()];
    for (r, v) in sys.interior.iter().enumerate() {
        row_of[*v] = r;
    }
    let nb = d.boundary().len();
    let mut out = DMatrix::zeros(nb, nb);
    for (i, b) in d.boundary().iter().enumerate() {
        let (w, e) = d.pendant_link(*b);
        for j in 0..nb {
            out[(i, j)] = x[(row_of[w], j)] / tr[e].phi;
        }
    }
    Ok(out)
}

/// Outward derivative `-u(w) / phi_e(1)` at every boundary vertex.
pub fn neumann_derivative(net: &Network, lambda: f64, u: &[f64]) -> Vec<f64> {
    let d = &*net.domain;
    let tr = net.transfers(lambda);
    d.boundary()
        .iter()
        .map(|b| {
            let (w, e) = d.pendant_link(*b);
            -u[w] / tr[e].phi
        })
        .collect()
}

/// Edge potentials and couplings as far as they are known.
#[derive(Clone, Debug)]
pub struct PartialFields {
    pub edges: Vec<Option<SymmetricPotential>>,
    pub couplings: Vec<Option<f64>>,
}

impl PartialFields {
    pub fn from_network(net: &Network) -> Self {
        let d = &*net.domain;
        Self {
            edges: (0..d.edge_count()).map(|e| Some(net.edges.get(e).clone())).collect(),
            couplings: (0..d.vertex_count()).map(|v| if d.is_boundary(v) { None } else { Some(net.couplings.get(v)) }).collect(),
        }
    }

    /// Only the pendant edges, which are known a priori.
    pub fn boundary_only(domain: &Domain, boundary_edges: &EdgeField) -> Self {
        let mut edges = vec![None; domain.edge_count()];
        for b in domain.boundary() {
            let (_, e) = domain.pendant_link(*b);
            edges[e] = Some(boundary_edges.get(e).clone());
        }
        Self { edges, couplings: vec![None; domain.vertex_count()] }
    }

    pub fn missing_edges(&self, domain: &Domain) -> Vec<EdgeId> {
        (0..domain.edge_count()).filter(|e| self.edges[*e].is_none()).collect()
    }

    pub fn missing_couplings(&self, domain: &Domain) -> Vec<VertexId> {
        domain.interior().iter().copied().filter(|v| self.couplings[*v].is_none()).collect()
    }
}

/// Ordered single-unknown eliminations: `(equation vertex, vertex it determines)`.
#[derive(Clone, Debug, Default)]
pub struct MarchPlan {
    pub steps: Vec<(VertexId, VertexId)>,
    pub reached: Vec<bool>,
}

/// Repeatedly use any vertex equation that has exactly one unknown neighbour value.
///
/// Vertices flagged in `zero` carry the value 0; their equations need neither the coupling nor
/// the potentials on edges towards other zero vertices.
pub fn plan_march(domain: &Domain, fields: &PartialFields, seeded: &[bool], zero: &[bool]) -> MarchPlan {
    let mut known = seeded.to_vec();
    let mut steps = Vec::new();
    loop {
        let mut progress = false;
        for &v in domain.interior() {
            if !known[v] {
                continue;
            }
            let nb = domain.neighbors(v);
            let unknown: Vec<(VertexId, EdgeId)> = nb.iter().copied().filter(|(w, _)| !known[*w]).collect();
            if unknown.len() != 1 {
                continue;
            }
            let ok = if zero[v] {
                nb.iter().all(|(w, e)| zero[*w] || fields.edges[*e].is_some())
            } else {
                fields.couplings[v].is_some() && nb.iter().all(|(_, e)| fields.edges[*e].is_some())
            };
            if ok {
                let target = unknown[0].0;
                known[target] = true;
                steps.push((v, target));
                progress = true;
            }
        }
        if !progress {
            break;
        }
    }
    MarchPlan { steps, reached: known }
}

/// Execute a plan; `tr[e]` must be set for every edge the plan touches.
pub fn replay_march(
    domain: &Domain,
    fields: &PartialFields,
    tr: &[Option<TransferValues>],
    plan: &MarchPlan,
    zero: &[bool],
    values: &mut [Option<f64>],
) {
    for &(v, target) in &plan.steps {
        let uv = values[v].unwrap_or(0.0);
        let mut acc = 0.0;
        let mut t_target = None;
        for &(w, e) in domain.neighbors(v) {
            if zero[v] && zero[w] {
                continue;
            }
            let t = tr[e].expect("transfer values for a planned edge");
            if w == target {
                t_target = Some(t);
                if !zero[v] {
                    acc += t.dphi / t.phi * uv;
                }
                continue;
            }
            let uw = values[w].expect("planned neighbour value");
            acc -= uw / t.phi;
            if !zero[v] {
                acc += t.dphi / t.phi * uv;
            }
        }
        if !zero[v] {
            acc += fields.couplings[v].unwrap() * uv;
        }
        values[target] = Some(t_target.unwrap().phi * acc);
    }
}

/// Left-to-right continuation from Dirichlet data off the right side and Neumann data on the left.
///
/// `f` is indexed like [`Domain::boundary`] (entries on the right side are ignored) and `g` follows
/// the left side order.  Returns the solution on every vertex; the right side holds the recovered
/// Dirichlet data.
pub fn march_partial_cauchy(net: &Network, lambda: f64, f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    let d = &*net.domain;
    let sides = d.sides();
    if f.len() != d.boundary().len() || g.len() != sides.left.len() {
        return Err(Error::Validation("boundary data lengths do not match the domain".into()));
    }
    let fields = PartialFields::from_network(net);
    let tr: Vec<Option<TransferValues>> = net.transfers(lambda).into_iter().map(Some).collect();
    let mut seeded = vec![false; d.vertex_count()];
    let mut values = vec![None; d.vertex_count()];
    for (k, b) in d.boundary().iter().enumerate() {
        if !sides.right.contains(b) {
            seeded[*b] = true;
            values[*b] = Some(f[k]);
        }
    }
    for (k, b) in sides.left.iter().enumerate() {
        let (w, e) = d.pendant_link(*b);
        seeded[w] = true;
        values[w] = Some(-g[k] * tr[e].unwrap().phi);
    }
    let zero = vec![false; d.vertex_count()];
    let plan = plan_march(d, &fields, &seeded, &zero);
    if plan.reached.iter().any(|r| !r) {
        return Err(Error::Degenerate("marching did not reach every vertex".into()));
    }
    replay_march(d, &fields, &tr, &plan, &zero, &mut values);
    Ok(values.into_iter().map(|x| x.unwrap()).collect())
}

/// Fill in the right-side Dirichlet data from the rest of `f` and Neumann data `g` on the left.
pub fn complete_with_dtn(domain: &Domain, dn: &DMatrix<f64>, lambda: f64, f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    complete_checked(domain, dn, lambda, f, g, COMPLETION_COND_LIMIT)
}

/// [`complete_with_dtn`] with an explicit limit on the condition number of the boundary block.
pub fn complete_checked(domain: &Domain, dn: &DMatrix<f64>, lambda: f64, f: &[f64], g: &[f64], cond_limit: f64) -> Result<Vec<f64>> {
    let sides = domain.sides();
    let slot = |v: &VertexId| domain.boundary_slot(*v).unwrap();
    let l: Vec<usize> = sides.left.iter().map(slot).collect();
    let r: Vec<usize> = sides.right.iter().map(slot).collect();
    if l.len() != r.len() || g.len() != l.len() {
        return Err(Error::Validation("left and right sides must have equal size".into()));
    }
    let n = l.len();
    // -L_{LR} f_R = g + L_{L,rest} f_rest
    let mut a = DMatrix::zeros(n, n);
    let mut rhs = DVector::zeros(n);
    for (i, &li) in l.iter().enumerate() {
        for (j, &rj) in r.iter().enumerate() {
            a[(i, j)] = -dn[(li, rj)];
        }
        let mut s = g[i];
        for (k, fk) in f.iter().enumerate() {
            if !r.contains(&k) {
                s += dn[(li, k)] * fk;
            }
        }
        rhs[i] = s;
    }
    let inv = a.clone().try_inverse().ok_or(Error::Singular { lambda })?;
    let cond = a.abs().row_sum().amax() * inv.abs().row_sum().amax();
    if !(cond < cond_limit) {
        return Err(Error::IllConditioned { lambda, cond });
    }
    let fr = a.full_piv_lu().solve(&rhs).ok_or(Error::Singular { lambda })?;
    let mut out = f.to_vec();
    for (j, &rj) in r.iter().enumerate() {
        out[rj] = fr[j];
    }
    Ok(out)
}

/// [`complete_with_dtn`] with the D-N map taken from an oracle.
pub fn complete_boundary_data(oracle: &dyn DtnOracle, lambda: f64, f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
    let dn = oracle.dtn(lambda)?;
    complete_with_dtn(oracle.domain(), &dn, lambda, f, g)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriveKind {
    /// Unit Dirichlet value at the driving pendant.
    Dirichlet,
    /// Neumann value at the driving pendant chosen so that its interior neighbour carries the amplitude.
    Neumann,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Drive {
    pub vertex: VertexId,
    pub kind: DriveKind,
    pub amplitude: f64,
}

/// A solution with Cauchy data vanishing on the left side except at one driving pendant, so that it
/// vanishes identically on one side of a level line.
#[derive(Clone, Debug)]
pub struct SpecialSolution {
    pub family: Family,
    pub index: i64,
    pub drive: Drive,
    /// Interior vertices on which the solution vanishes identically.
    pub zero: Vec<bool>,
    pub line: DiagonalLine,
}

impl SpecialSolution {
    pub fn label(&self) -> String {
        format!("{:?}{}", self.family, self.index)
    }

    /// Level of `v` in the grading this line belongs to.
    pub fn level_of(&self, domain: &Domain, v: VertexId) -> i64 {
        match (domain.kind, self.family) {
            (LatticeKind::Hex, Family::B) => domain.column_level(v),
            _ => domain.level(v),
        }
    }
}

/// Driving pendant and vanishing region for the line `family_index`.
///
/// Square `A_k` (`1 <= k <= m`) is driven by Dirichlet data at the top pendant `(k, n+1)`; square
/// `B_l` (`2 <= l <= n + 1`) by Neumann data at the left pendant `(0, l-1)`; `A_0` coincides with
/// `B_{n+1}`.  Hexagonal top lines and bottom columns are Dirichlet-driven, left lines and the
/// leftmost column are Neumann-driven.
pub fn special_solution_spec(domain: &Domain, family: Family, index: i64) -> Result<SpecialSolution> {
    use crate::lattice::Coord;
    let (m, n) = (domain.dims.0 as i64, domain.dims.1 as i64);
    let find = |c: Coord| domain.vertex(&c).ok_or_else(|| Error::Validation(format!("no vertex at {c}")));
    let (family, index) = match (domain.kind, family, index) {
        (LatticeKind::Square, Family::A, 0) => (Family::B, n + 1),
        x => (x.1, x.2),
    };
    let line = diagonal_line(domain, family, index)?;
    let (vertex, kind) = match (domain.kind, family) {
        (LatticeKind::Square, Family::A) => (find(Coord::Square { i: index, j: n + 1 })?, DriveKind::Dirichlet),
        (LatticeKind::Square, Family::B) => {
            if index < 2 {
                return Err(Error::Validation(format!("B_{index} has no driving pendant")));
            }
            (find(Coord::Square { i: 0, j: index - 1 })?, DriveKind::Neumann)
        }
        (LatticeKind::Hex, Family::A) if index >= 0 => (find(Coord::Hex { n1: index - 1, n2: n + 2, s: 1 })?, DriveKind::Dirichlet),
        (LatticeKind::Hex, Family::A) => (find(Coord::Hex { n1: -2, n2: index + n + 2, s: 2 })?, DriveKind::Neumann),
        (LatticeKind::Hex, Family::B) if index >= 0 => (find(Coord::Hex { n1: index, n2: -1, s: 2 })?, DriveKind::Dirichlet),
        (LatticeKind::Hex, Family::B) => (find(Coord::Hex { n1: -1, n2: 0, s: 1 })?, DriveKind::Neumann),
    };
    let _ = m;
    let mut spec = SpecialSolution { family, index, drive: Drive { vertex, kind, amplitude: 1.0 }, zero: Vec::new(), line };
    spec.zero = (0..domain.vertex_count()).map(|v| !domain.is_boundary(v) && spec.level_of(domain, v) < spec.line.level).collect();
    Ok(spec)
}

/// Complete boundary data of a special solution: Cauchy data on the left side, zero Dirichlet data
/// off the right side except for the drive.
pub fn special_boundary_data(domain: &Domain, dn: &DMatrix<f64>, lambda: f64, spec: &SpecialSolution, drive_edge: &SymmetricPotential) -> Result<Vec<f64>> {
    special_boundary_checked(domain, dn, lambda, spec, drive_edge, COMPLETION_COND_LIMIT)
}

fn special_boundary_checked(domain: &Domain, dn: &DMatrix<f64>, lambda: f64, spec: &SpecialSolution, drive_edge: &SymmetricPotential, cond_limit: f64) -> Result<Vec<f64>> {
    if spec.drive.amplitude == 0.0 {
        return Err(Error::Degenerate(format!("{} driven with zero amplitude", spec.label())));
    }
    let mut f = vec![0.0; domain.boundary().len()];
    let mut g = vec![0.0; domain.sides().left.len()];
    match spec.drive.kind {
        DriveKind::Dirichlet => f[domain.boundary_slot(spec.drive.vertex).unwrap()] = spec.drive.amplitude,
        DriveKind::Neumann => {
            let k = domain.sides().left.iter().position(|b| *b == spec.drive.vertex).unwrap();
            let t = propagate(drive_edge, lambda);
            if t.near_pole(SOLVE_POLE_GUARD) {
                return Err(Error::PoleGuard { lambda, what: "driving edge".into() });
            }
            g[k] = -spec.drive.amplitude / t.phi;
        }
    }
    complete_checked(domain, dn, lambda, &f, &g, cond_limit)
}

/// Seed values (boundary, vanishing region, pendant neighbours) and the march plan from them.
pub fn special_plan(domain: &Domain, fields: &PartialFields, spec: &SpecialSolution) -> MarchPlan {
    let mut seeded = vec![false; domain.vertex_count()];
    for v in 0..domain.vertex_count() {
        seeded[v] = domain.is_boundary(v) || spec.zero[v];
    }
    for b in domain.boundary() {
        seeded[domain.pendant_link(*b).0] = true;
    }
    plan_march(domain, fields, &seeded, &spec.zero)
}

/// Evaluate a special solution on every vertex reachable from the known data.
pub fn evaluate_special(
    domain: &Domain,
    fields: &PartialFields,
    spec: &SpecialSolution,
    plan: &MarchPlan,
    dn: &DMatrix<f64>,
    tr: &[Option<TransferValues>],
    lambda: f64,
    cond_limit: f64,
) -> Result<Vec<Option<f64>>> {
    let drive_edge = domain.pendant_link(spec.drive.vertex).1;
    let drive_pot = fields.edges[drive_edge].as_ref().ok_or_else(|| Error::Validation("driving edge unknown".into()))?;
    let f = special_boundary_checked(domain, dn, lambda, spec, drive_pot, cond_limit)?;
    let mut values = vec![None; domain.vertex_count()];
    for v in 0..domain.vertex_count() {
        if spec.zero[v] {
            values[v] = Some(0.0);
        }
    }
    for (k, b) in domain.boundary().iter().enumerate() {
        values[*b] = Some(f[k]);
        let (w, e) = domain.pendant_link(*b);
        if !spec.zero[w] {
            let lf: f64 = (0..f.len()).map(|j| dn[(k, j)] * f[j]).sum();
            let t = tr[e].ok_or_else(|| Error::Validation("pendant edge transfer missing".into()))?;
            values[w] = Some(t.phi * lf);
        }
    }
    replay_march(domain, fields, tr, plan, &spec.zero, &mut values);
    Ok(values)
}

/// Transfer values of every known edge.
pub fn known_transfers(fields: &PartialFields, lambda: f64) -> Vec<Option<TransferValues>> {
    fields.edges.iter().map(|p| p.as_ref().map(|v| propagate(v, lambda))).collect()
}

/// A special solution from oracle data and the currently known fields.
pub fn special_solution(oracle: &dyn DtnOracle, fields: &PartialFields, spec: &SpecialSolution, lambda: f64) -> Result<Vec<Option<f64>>> {
    let d = oracle.domain();
    let dn = oracle.dtn(lambda)?;
    let plan = special_plan(d, fields, spec);
    let tr = known_transfers(fields, lambda);
    evaluate_special(d, fields, spec, &plan, &dn, &tr, lambda, COMPLETION_COND_LIMIT)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{build_hex, build_square};

    fn free(domain: Domain) -> Network {
        Network::new(Arc::new(domain), EdgeField::uniform(SymmetricPotential::zero(2)), CouplingField::uniform(0.0))
    }

    #[test]
    fn free_square_rows() {
        let net = free(build_square(2, 2).unwrap());
        let sys = assemble_vertex_system(&net, 0.0).unwrap();
        for r in 0..4 {
            assert!((sys.matrix[(r, r)] - 1.0).abs() < 1e-12);
            let off: Vec<f64> = (0..4).filter(|c| *c != r && sys.matrix[(r, *c)] != 0.0).map(|c| sys.matrix[(r, c)]).collect();
            assert_eq!(off.len(), 2);
            assert!(off.iter().all(|x| (x + 0.25).abs() < 1e-12));
        }
    }

    #[test]
    fn constants_have_zero_flux_at_zero_energy() {
        // V = 0, C = 0, lambda = 0: u = 1 everywhere is harmonic, so L 1 = 1
        for d in [build_square(3, 2).unwrap(), build_hex(1).unwrap()] {
            let net = free(d);
            let dn = dtn_map(&net, 0.0).unwrap();
            for i in 0..dn.nrows() {
                assert!((dn.row(i).sum() - 1.0).abs() < 1e-11);
            }
        }
    }

    #[test]
    fn dtn_is_symmetric() {
        let mut net = free(build_hex(2).unwrap());
        net.edges.set(7, SymmetricPotential::new(vec![0.3, 0.5, -0.2]).unwrap());
        net.couplings.set(net.domain.interior()[4], 0.8);
        let dn = dtn_map(&net, 3.7).unwrap();
        assert!((&dn - dn.transpose()).amax() < 1e-10 * dn.amax());
    }

    #[test]
    fn marching_agrees_with_solve() {
        let mut net = free(build_square(3, 4).unwrap());
        net.edges.set(5, SymmetricPotential::new(vec![0.2, -0.4, 0.1]).unwrap());
        net.couplings.set(net.domain.interior()[2], -0.6);
        let d = net.domain.clone();
        let f: Vec<f64> = (0..d.boundary().len()).map(|k| (k as f64 * 0.7).sin()).collect();
        let u = solve_dirichlet(&net, 2.3, &f).unwrap();
        let nd = neumann_derivative(&net, 2.3, &u);
        let g: Vec<f64> = d.sides().left.iter().map(|b| nd[d.boundary_slot(*b).unwrap()]).collect();
        let mut fr = f.clone();
        for b in &d.sides().right {
            fr[d.boundary_slot(*b).unwrap()] = 99.0;
        }
        let m = march_partial_cauchy(&net, 2.3, &fr, &g).unwrap();
        for v in 0..d.vertex_count() {
            assert!((m[v] - u[v]).abs() < 1e-10, "{}: {} vs {}", d.coord(v), m[v], u[v]);
        }
    }

    fn perturbed(domain: Domain) -> Network {
        let mut net = free(domain);
        let ne = net.domain.edge_count();
        for e in [ne / 3, ne / 2, (2 * ne) / 3] {
            net.edges.set(e, SymmetricPotential::new(vec![0.3, -0.5, 0.2]).unwrap());
        }
        let iv = net.domain.interior().to_vec();
        net.couplings.set(iv[iv.len() / 2], 1.1);
        net.couplings.set(iv[1], -0.7);
        net
    }

    fn all_specs(d: &Domain) -> Vec<SpecialSolution> {
        let (fam_a, fam_b) = match d.kind {
            LatticeKind::Square => ((1..=d.dims.0 as i64).collect::<Vec<_>>(), (2..=d.dims.1 as i64 + 1).collect::<Vec<_>>()),
            LatticeKind::Hex => ((-(d.dims.0 as i64) - 1..=d.dims.0 as i64).collect(), (-1..=d.dims.0 as i64).collect()),
        };
        let mut out: Vec<SpecialSolution> = fam_a.into_iter().map(|k| special_solution_spec(d, Family::A, k).unwrap()).collect();
        out.extend(fam_b.into_iter().map(|k| special_solution_spec(d, Family::B, k).unwrap()));
        out
    }

    #[test]
    fn special_solutions_vanish_below_their_line() {
        for d in [build_square(4, 3).unwrap(), build_hex(2).unwrap()] {
            let net = perturbed(d);
            let d = net.domain.clone();
            let lambda = 1.9;
            let dn = dtn_map(&net, lambda).unwrap();
            for spec in all_specs(&d) {
                let drive = net.edges.get(d.pendant_link(spec.drive.vertex).1).clone();
                let f = special_boundary_data(&d, &dn, lambda, &spec, &drive).unwrap();
                let u = solve_dirichlet(&net, lambda, &f).unwrap();
                let top = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                let below = (0..d.vertex_count()).filter(|v| spec.zero[*v]).fold(0.0f64, |m, v| m.max(u[v].abs()));
                assert!(below <= 1e-10 * top, "{}: {below:e} vs {top:e}", spec.label());
                let on_line: Vec<VertexId> = spec.line.vertices.iter().copied().filter(|v| !d.is_boundary(*v)).collect();
                assert!(on_line.is_empty() || on_line.iter().any(|v| u[*v].abs() > 1e-6 * top), "{}", spec.label());
            }
        }
    }

    #[test]
    fn partial_evaluation_matches_dense_solve() {
        for d in [build_square(4, 3).unwrap(), build_hex(2).unwrap()] {
            let net = perturbed(d);
            let d = net.domain.clone();
            let oracle = crate::oracle::ForwardOracle::new(net.clone());
            let fields = PartialFields::from_network(&net);
            let lambda = -1.3;
            let dn = dtn_map(&net, lambda).unwrap();
            for spec in all_specs(&d) {
                let got = special_solution(&oracle, &fields, &spec, lambda).unwrap();
                let drive = net.edges.get(d.pendant_link(spec.drive.vertex).1).clone();
                let f = special_boundary_data(&d, &dn, lambda, &spec, &drive).unwrap();
                let u = solve_dirichlet(&net, lambda, &f).unwrap();
                let top = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
                for v in 0..d.vertex_count() {
                    let g = got[v].expect("full knowledge reaches every vertex");
                    assert!((g - u[v]).abs() < 1e-9 * top, "{} at {}: {g} vs {}", spec.label(), d.coord(v), u[v]);
                }
            }
        }
    }
}
