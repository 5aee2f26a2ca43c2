//! Local recovery of edge potentials and vertex couplings from special solutions.
//!
//! Every special solution vanishes on one side of its line.  Wherever the currently known data
//! pins down all but one quantity in a vertex equation, that equation becomes a scalar function
//! of `lambda` built from D-N data:
//!
//! * `Ratio`: at a vertex `z` where the solution vanishes, `phi_e(1, lambda) = -u(p) / S(lambda)`
//!   for the single unknown edge `e = zp`, `S` summing `u(x) / phi_zx` over the other neighbours.
//! * `Pole`: at a vertex `v` on the support with one unknown edge `e` leading into the vanishing
//!   region, `R(lambda) = phi_e'/phi_e + C_v`; the zeros of `1 / R` are the Dirichlet eigenvalues
//!   of `e`.
//! * `Coupling`: all edges at `v` known, `R(lambda) = C_v`.
//!
//! Dirichlet eigenvalues feed the Borg-type fit in [`crate::sturm`]; couplings are averaged over a
//! few regular `lambda`.

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use parking_lot::Mutex;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lattice::{Domain, EdgeId, VertexId};
use crate::oracle::DtnOracle;
use crate::sturm::{borg_reconstruct, dirichlet_spectrum, propagate, SymmetricPotential, TransferValues, POLE_GUARD};
use crate::vertex_op::{evaluate_special, special_plan, DriveKind, EdgeField, MarchPlan, PartialFields, SpecialSolution, COMPLETION_COND_LIMIT};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum HexSchedule {
    /// After the initial strips, prefer solutions of the vertical family.
    #[default]
    BDescent,
    /// Prefer the diagonal family instead.
    ADescent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InverseSettings {
    /// Cosine truncation `J` of the unknown potentials.
    pub truncation: usize,
    pub scan_lo: f64,
    /// Upper end of the scan; `((J + 3) pi)^2 + 5` when absent.
    pub scan_hi: Option<f64>,
    pub scan_points: usize,
    /// Relative pole guard applied on scan points.
    pub grid_guard: f64,
    pub coupling_samples: usize,
    /// Largest allowed deviation of a single coupling sample from the estimate.  A consistency
    /// guard against wrong fits, not an accuracy target: the fitted value is far more accurate
    /// than individual samples taken deep inside the lattice.
    pub coupling_spread_tol: f64,
    /// Scan points used in the least-squares fit of a recovered edge.
    pub fit_points: usize,
    /// Pole guard for fit points, wider than `grid_guard`: errors in known edges are amplified
    /// next to their eigenvalues.
    pub fit_guard: f64,
    pub schedule: HexSchedule,
}

impl Default for InverseSettings {
    fn default() -> Self {
        Self {
            truncation: 2,
            scan_lo: -5.0,
            scan_hi: None,
            scan_points: 400,
            grid_guard: POLE_GUARD,
            coupling_samples: 5,
            coupling_spread_tol: 1e-3,
            fit_points: 80,
            fit_guard: 1e-2,
            schedule: HexSchedule::BDescent,
        }
    }
}

impl InverseSettings {
    pub fn grid(&self) -> Vec<f64> {
        let hi = self.scan_hi.unwrap_or(((self.truncation + 3) as f64 * PI).powi(2) + 5.0);
        let n = self.scan_points.max(2);
        (0..n).map(|i| self.scan_lo + (hi - self.scan_lo) * i as f64 / (n - 1) as f64).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RecoveryKind {
    Ratio { at: VertexId, edge: EdgeId },
    Pole { at: VertexId, edge: EdgeId },
    Coupling { at: VertexId },
}

impl RecoveryKind {
    pub fn name(&self) -> &'static str {
        match self {
            RecoveryKind::Ratio { .. } => "ratio",
            RecoveryKind::Pole { .. } => "pole",
            RecoveryKind::Coupling { .. } => "coupling",
        }
    }

    pub fn vertex(&self) -> VertexId {
        match *self {
            RecoveryKind::Ratio { at, .. } | RecoveryKind::Pole { at, .. } | RecoveryKind::Coupling { at } => at,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EdgeRecovery {
    pub edge: EdgeId,
    pub coefficients: Vec<f64>,
    pub eigenvalues: Vec<f64>,
    pub borg_residual: f64,
    /// RMS angle misfit of the final least-squares fit.
    pub fit_rms: f64,
    pub solution: String,
    pub method: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CouplingRecovery {
    pub vertex: VertexId,
    pub value: f64,
    pub spread: f64,
    pub samples: Vec<f64>,
    pub solution: String,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StepRecord {
    pub solution: String,
    pub kind: RecoveryKind,
    pub phase: String,
}

/// Everything known so far in a reconstruction.
pub struct InverseState {
    pub domain: Arc<Domain>,
    pub fields: PartialFields,
    pub settings: InverseSettings,
    pub edges: BTreeMap<EdgeId, EdgeRecovery>,
    pub couplings: BTreeMap<VertexId, CouplingRecovery>,
    pub steps: Vec<StepRecord>,
    pub phase: String,
    grid: Vec<f64>,
    transfers: Mutex<HashMap<(EdgeId, u64), TransferValues>>,
}

impl InverseState {
    /// Start from the pendant edges, which are known a priori.
    pub fn new(domain: Arc<Domain>, boundary_edges: &EdgeField, settings: InverseSettings) -> Self {
        let fields = PartialFields::boundary_only(&domain, boundary_edges);
        let grid = settings.grid();
        Self {
            domain,
            fields,
            settings,
            edges: BTreeMap::new(),
            couplings: BTreeMap::new(),
            steps: Vec::new(),
            phase: "start".into(),
            grid,
            transfers: Mutex::new(HashMap::new()),
        }
    }

    pub fn is_complete(&self) -> bool {
        self.fields.missing_edges(&self.domain).is_empty() && self.fields.missing_couplings(&self.domain).is_empty()
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    /// The potential carried by the pendant edges, padded to `truncation`.
    fn background(&self, truncation: usize) -> SymmetricPotential {
        let d = &self.domain;
        d.boundary()
            .iter()
            .find_map(|b| self.fields.edges[d.pendant_link(*b).1].clone())
            .map_or_else(|| SymmetricPotential::zero(truncation), |v| v.padded(truncation))
    }

    fn transfer(&self, e: EdgeId, lambda: f64) -> Option<TransferValues> {
        let pot = self.fields.edges[e].as_ref()?;
        let key = (e, lambda.to_bits());
        if let Some(t) = self.transfers.lock().get(&key) {
            return Some(*t);
        }
        let t = propagate(pot, lambda);
        self.transfers.lock().insert(key, t);
        Some(t)
    }

    fn known_transfers(&self, lambda: f64) -> Vec<Option<TransferValues>> {
        (0..self.domain.edge_count()).map(|e| self.transfer(e, lambda)).collect()
    }

    /// Fill in missing entries (for reporting against a known truth and for tests).
    pub fn set_edge(&mut self, e: EdgeId, v: SymmetricPotential) {
        self.fields.edges[e] = Some(v);
    }
    pub fn set_coupling(&mut self, v: VertexId, c: f64) {
        self.fields.couplings[v] = Some(c);
    }
}

/// Vertices whose value is zero for every `lambda`: the vanishing region and undriven pendants
/// outside the right side.
fn identically_zero(domain: &Domain, spec: &SpecialSolution, x: VertexId) -> bool {
    if spec.zero[x] {
        return true;
    }
    if domain.is_boundary(x) {
        let driven = spec.drive.kind == DriveKind::Dirichlet && spec.drive.vertex == x;
        return !driven && !domain.sides().right.contains(&x);
    }
    false
}

/// Recoveries that the known data allows with this special solution, ordered along its line.
pub fn available_recoveries(domain: &Domain, fields: &PartialFields, spec: &SpecialSolution, plan: &MarchPlan) -> Vec<RecoveryKind> {
    let reached = &plan.reached;
    let mut out = Vec::new();
    for &v in domain.interior() {
        let nb = domain.neighbors(v);
        if !reached[v] || nb.iter().any(|(w, _)| !reached[*w]) {
            continue;
        }
        if spec.zero[v] {
            let live: Vec<(VertexId, EdgeId)> = nb.iter().copied().filter(|(w, _)| !identically_zero(domain, spec, *w)).collect();
            let unknown: Vec<(VertexId, EdgeId)> = live.iter().copied().filter(|(_, e)| fields.edges[*e].is_none()).collect();
            if live.len() >= 2 && unknown.len() == 1 {
                out.push(RecoveryKind::Ratio { at: v, edge: unknown[0].1 });
            }
        } else {
            let unknown: Vec<(VertexId, EdgeId)> = nb.iter().copied().filter(|(_, e)| fields.edges[*e].is_none()).collect();
            match unknown.as_slice() {
                [(w, e)] if identically_zero(domain, spec, *w) => out.push(RecoveryKind::Pole { at: v, edge: *e }),
                [] if fields.couplings[v].is_none() => out.push(RecoveryKind::Coupling { at: v }),
                _ => {}
            }
        }
    }
    let (p0, dir) = line_direction(domain, spec);
    let key = |k: &RecoveryKind| {
        let (x, y) = domain.coord(k.vertex()).position();
        (x - p0.0) * dir.0 + (y - p0.1) * dir.1
    };
    out.sort_by(|a, b| key(a).total_cmp(&key(b)));
    out
}

fn line_direction(domain: &Domain, spec: &SpecialSolution) -> ((f64, f64), (f64, f64)) {
    let vs = &spec.line.vertices;
    let a = domain.coord(vs[0]).position();
    let b = domain.coord(*vs.last().unwrap()).position();
    (a, (b.0 - a.0, b.1 - a.1))
}

/// Scalar probe function of a recovery.
struct Probe<'a> {
    oracle: &'a dyn DtnOracle,
    state: &'a InverseState,
    spec: &'a SpecialSolution,
    plan: MarchPlan,
    kind: RecoveryKind,
}

struct ProbeValue {
    value: f64,
    /// `atan` of the edge quantity the probe measures: `phi_e(1)` for ratios, `R` for poles.
    angle: f64,
    /// `R(lambda)` minus the known part, for coupling estimates.
    r: f64,
    u_at: f64,
    u_max: f64,
}

/// Deterministic pseudo-random factor in `[-1, 1)` for sensitivity probes.
fn jitter(i: usize, salt: u64) -> f64 {
    let h = (i as u64 ^ salt).wrapping_mul(0x9E37_79B9_7F4A_7C15).rotate_left(23).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    (h >> 11) as f64 / (1u64 << 52) as f64 - 1.0
}

/// Relative size of the perturbation used to estimate how errors in known fields are amplified.
const SENSITIVITY_STEP: f64 = 1e-7;

impl Probe<'_> {
    fn solution(&self, lambda: f64, guard: f64, perturb: bool) -> Result<(Vec<Option<f64>>, Vec<Option<TransferValues>>)> {
        let d = &*self.state.domain;
        let dn: Arc<DMatrix<f64>> = self.oracle.dtn(lambda)?;
        let mut tr = self.state.known_transfers(lambda);
        for (e, t) in tr.iter().enumerate() {
            if let Some(t) = t {
                if t.near_pole(guard) {
                    return Err(Error::PoleGuard { lambda, what: format!("known edge {e}") });
                }
            }
        }
        if !perturb {
            let u = evaluate_special(d, &self.state.fields, self.spec, &self.plan, &dn, &tr, lambda, COMPLETION_COND_LIMIT)?;
            return Ok((u, tr));
        }
        let h = SENSITIVITY_STEP;
        for (e, t) in tr.iter_mut().enumerate() {
            if let Some(t) = t {
                t.phi *= 1.0 + h * jitter(e, 1);
                t.dphi *= 1.0 + h * jitter(e, 2);
            }
        }
        let mut fields = self.state.fields.clone();
        for (v, c) in fields.couplings.iter_mut().enumerate() {
            if let Some(c) = c {
                *c += h * jitter(v, 3);
            }
        }
        let u = evaluate_special(d, &fields, self.spec, &self.plan, &dn, &tr, lambda, COMPLETION_COND_LIMIT)?;
        Ok((u, tr))
    }

    fn eval(&self, lambda: f64, guard: f64) -> Result<ProbeValue> {
        let (u, tr) = self.solution(lambda, guard, false)?;
        Ok(self.value_of(&u, &tr))
    }

    /// Value together with the amplification of relative errors in the known fields.
    fn eval_sensitive(&self, lambda: f64, guard: f64) -> Result<(ProbeValue, f64)> {
        let p = self.eval(lambda, guard)?;
        let (u, tr) = self.solution(lambda, guard, true)?;
        let q = self.value_of(&u, &tr);
        let amp = wrap_angle(q.angle - p.angle).abs() / SENSITIVITY_STEP;
        Ok((p, amp))
    }

    fn value_of(&self, u: &[Option<f64>], tr: &[Option<TransferValues>]) -> ProbeValue {
        let d = &*self.state.domain;
        let val = |x: VertexId| u[x].expect("probe needs reached values");
        let u_max = u.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs()));
        match self.kind {
            RecoveryKind::Ratio { at, edge } => {
                let mut s = 0.0;
                let mut up = 0.0;
                for &(w, e) in d.neighbors(at) {
                    if identically_zero(d, self.spec, w) {
                        continue;
                    }
                    if e == edge {
                        up = val(w);
                    } else {
                        s += val(w) / tr[e].unwrap().phi;
                    }
                }
                ProbeValue { value: -up / s, angle: wrap_angle((-up).atan2(s)), r: f64::NAN, u_at: up, u_max }
            }
            RecoveryKind::Pole { at, .. } | RecoveryKind::Coupling { at } => {
                let skip = if let RecoveryKind::Pole { edge, .. } = self.kind { Some(edge) } else { None };
                let uv = val(at);
                let mut flux = 0.0;
                let mut known = 0.0;
                for &(w, e) in d.neighbors(at) {
                    if Some(e) == skip {
                        continue;
                    }
                    let t = tr[e].unwrap();
                    flux += val(w) / t.phi;
                    known += t.dphi / t.phi;
                }
                // 1/R written without dividing by u(v)
                let value = uv / (flux - uv * known);
                ProbeValue { value, angle: wrap_angle((flux - uv * known).atan2(uv)), r: flux / uv - known, u_at: uv, u_max }
            }
        }
    }
}

/// Reduce an angle modulo `pi` into `(-pi/2, pi/2]`.
fn wrap_angle(a: f64) -> f64 {
    let w = a - PI * (a / PI).round();
    if w <= -0.5 * PI { w + PI } else { w }
}

fn edge_of(kind: RecoveryKind) -> Option<EdgeId> {
    match kind {
        RecoveryKind::Ratio { edge, .. } | RecoveryKind::Pole { edge, .. } => Some(edge),
        RecoveryKind::Coupling { .. } => None,
    }
}

/// Root of the interpolating polynomial through `(x, y)` where it changes sign between the two
/// middle samples.
fn interpolated_root(x: &[f64], y: &[f64]) -> f64 {
    let p = |t: f64| {
        (0..x.len())
            .map(|i| {
                let w: f64 = (0..x.len()).filter(|j| *j != i).map(|j| (t - x[j]) / (x[i] - x[j])).product();
                w * y[i]
            })
            .sum::<f64>()
    };
    let mid = x.len() / 2;
    let (mut a, mut b, mut pa) = (x[mid - 1], x[mid], y[mid - 1]);
    for _ in 0..200 {
        let c = 0.5 * (a + b);
        let pc = p(c);
        if (pc > 0.0) == (pa > 0.0) {
            a = c;
            pa = pc;
        } else {
            b = c;
        }
    }
    0.5 * (a + b)
}

enum Window {
    /// Sign change lies inside the refused window; polished root.
    Root(f64),
    /// Sign change lies right of the window: new left bracket end and its value.
    Left(f64, f64),
    /// Sign change lies left of the window: new right bracket end.
    Right(f64, f64),
}

/// `f` refused `c`: walk outwards to the edges of the refused window and decide where the sign
/// change is.  `(a, fa)` and `(b, fb)` are the current bracket with true values, `outer` the
/// original scan bracket.
fn straddle(f: &dyn Fn(f64) -> Option<f64>, c: f64, (a, fa): (f64, f64), (b, fb): (f64, f64), outer: (f64, f64)) -> Window {
    let scale = c.abs().max(1.0);
    let edge = |dir: f64, end: f64, fend: f64| {
        let mut d = 1e-10 * scale;
        loop {
            d *= 2.0;
            let x = c + dir * d;
            if (dir < 0.0 && x <= end) || (dir > 0.0 && x >= end) {
                return (end, fend);
            }
            if let Some(v) = f(x) {
                return (x, v);
            }
        }
    };
    let (l, fl) = edge(-1.0, a, fa);
    let (r, fr) = edge(1.0, b, fb);
    if (fl > 0.0) == (fr > 0.0) {
        return if (fl > 0.0) == (fa > 0.0) { Window::Left(r, fr) } else { Window::Right(l, fl) };
    }
    // cubic through the window ends and one spacing beyond each
    let h = r - l;
    let xs = [l - h, l, r, r + h];
    if xs[0] > outer.0 && xs[3] < outer.1 {
        if let (Some(f0), Some(f3)) = (f(xs[0]), f(xs[3])) {
            return Window::Root(interpolated_root(&xs, &[f0, fl, fr, f3]));
        }
    }
    Window::Root((l * fr - r * fl) / (fr - fl))
}

/// Bracketed root refinement: Illinois steps with periodic bisection.
fn refine_root(f: &dyn Fn(f64) -> Option<f64>, a: f64, b: f64, fa: f64, fb: f64) -> f64 {
    let outer = (a, b);
    let (mut a, mut b) = (a, b);
    // true values and Illinois-weighted values
    let (mut ta, mut tb) = (fa, fb);
    let (mut wa, mut wb) = (fa, fb);
    let tol = |x: f64| 4e-15 * x.abs().max(1.0);
    let mut side = 0;
    let mut width_mark = b - a;
    let mut c = 0.5 * (a + b);
    for it in 0..300 {
        if b - a <= tol(c) {
            break;
        }
        let bisect = it % 4 == 3 && (b - a) > 0.5 * width_mark;
        if it % 4 == 3 {
            width_mark = b - a;
        }
        let mut next = if bisect { 0.5 * (a + b) } else { (wb * a - wa * b) / (wb - wa) };
        if !(next > a && next < b) {
            next = 0.5 * (a + b);
        }
        let prev = c;
        c = next;
        let Some(fc) = f(c) else {
            match straddle(f, c, (a, ta), (b, tb), outer) {
                Window::Root(r) => return r,
                Window::Left(x, fx) => {
                    a = x;
                    ta = fx;
                    wa = fx;
                }
                Window::Right(x, fx) => {
                    b = x;
                    tb = fx;
                    wb = fx;
                }
            }
            side = 0;
            c = 0.5 * (a + b);
            continue;
        };
        if fc == 0.0 {
            return c;
        }
        if (fc > 0.0) == (tb > 0.0) {
            b = c;
            tb = fc;
            wb = fc;
            if side == -1 {
                wa *= 0.5;
            }
            side = -1;
        } else {
            a = c;
            ta = fc;
            wa = fc;
            if side == 1 {
                wb *= 0.5;
            }
            side = 1;
        }
        if (c - prev).abs() <= tol(c) && it > 2 {
            break;
        }
    }
    c
}

/// A sign change is a zero if the probe is small at the refined root, a pole if it is large.
fn is_zero_crossing(f: &dyn Fn(f64) -> Option<f64>, root: f64, scale: f64) -> bool {
    // refinement ends next to the crossing, where a pole has blown up by many orders
    if let Some(v) = f(root) {
        return v.abs() <= scale;
    }
    // the root itself is guarded (an eigenvalue shared with a known edge); near a pole the probe
    // dwarfs the bracket at most offsets, near a zero it stays at that size
    let unit = root.abs().max(1.0);
    let (mut small, mut large) = (0, 0);
    for d in [1e-6, 3e-6, 1e-5, 3e-5, 1e-4, 3e-4, 1e-3] {
        if let (Some(a), Some(b)) = (f(root - d * unit), f(root + d * unit)) {
            if a.abs().max(b.abs()) > 10.0 * scale {
                large += 1;
            } else {
                small += 1;
            }
        }
    }
    small > large
}

/// The `want` smallest zeros of a probe: sign changes on the scan grid, refined and sorted into
/// zeros and poles.
fn extract_zeros(probe: &Probe<'_>, grid: &[f64], want: usize) -> Result<Vec<f64>> {
    let guard = probe.state.settings.grid_guard;
    let chunk = 32;
    let mut zeros = Vec::new();
    let mut prev: Option<(f64, f64)> = None;
    let mut fatal: Option<Error> = None;
    for block in grid.chunks(chunk) {
        let vals: Vec<Result<f64>> = block.par_iter().map(|l| probe.eval(*l, guard).map(|p| p.value)).collect();
        for (l, v) in block.iter().zip(vals) {
            let v = match v {
                Ok(v) if v.is_finite() => v,
                Ok(_) => continue,
                Err(e) if e.is_local_to_lambda() => continue,
                Err(e) => {
                    fatal = Some(e);
                    break;
                }
            };
            if let Some((pl, pv)) = prev {
                if (pv > 0.0) != (v > 0.0) || v == 0.0 {
                    let f = |x: f64| probe.eval(x, guard).ok().map(|p| p.value).filter(|y| y.is_finite());
                    let root = refine_root(&f, pl, *l, pv, v);
                    let scale = pv.abs().max(v.abs());
                    if is_zero_crossing(&f, root, scale) {
                        zeros.push(root);
                    }
                }
            }
            prev = Some((*l, v));
            if zeros.len() == want {
                return Ok(zeros);
            }
        }
        if let Some(e) = fatal {
            return Err(e);
        }
    }
    Err(Error::SpectrumIncomplete { found: zeros.len(), wanted: want, lo: grid[0], hi: *grid.last().unwrap() })
}

/// A scan point prepared for fitting.
#[derive(Clone, Copy, Debug)]
struct FitPoint {
    lambda: f64,
    angle: f64,
    r: f64,
    u_at: f64,
    u_max: f64,
    /// Amplification of relative errors in the known fields.
    amp: f64,
}

impl FitPoint {
    fn weight(&self) -> f64 {
        1.0 / self.amp.max(1.0)
    }
}

/// Coupling estimates `R - phi'/phi` from the best-conditioned points.
fn coupling_samples(points: &[FitPoint], n: usize, recovered: Option<&SymmetricPotential>, guard: f64) -> Result<Vec<f64>> {
    let mut ok: Vec<(f64, f64)> = Vec::new();
    for p in points {
        if !(p.u_at.abs() > 1e-6 * p.u_max) || !p.r.is_finite() {
            continue;
        }
        let mut c = p.r;
        if let Some(v) = recovered {
            let t = propagate(v, p.lambda);
            if t.near_pole(guard) {
                continue;
            }
            c -= t.dphi / t.phi;
        }
        ok.push((p.amp, c));
    }
    if ok.len() < n {
        return Err(Error::Degenerate(format!("only {} regular points for a coupling estimate", ok.len())));
    }
    ok.sort_by(|a, b| a.0.total_cmp(&b.0));
    Ok(ok.into_iter().take(n).map(|x| x.1).collect())
}

/// Probe values on scan points up to `hi`, thinned to at most `max_points`.
fn fit_data(probe: &Probe<'_>, grid: &[f64], hi: f64, max_points: usize) -> Result<Vec<FitPoint>> {
    let pts: Vec<f64> = grid.iter().copied().filter(|l| *l <= hi).collect();
    let stride = pts.len().div_ceil(max_points.max(1)).max(1);
    let pts: Vec<f64> = pts.into_iter().step_by(stride).collect();
    let guard = probe.state.settings.fit_guard;
    let vals: Vec<Result<(ProbeValue, f64)>> = pts.par_iter().map(|l| probe.eval_sensitive(*l, guard)).collect();
    let mut out = Vec::new();
    for (l, v) in pts.iter().zip(vals) {
        match v {
            Ok((p, amp)) if p.angle.is_finite() && amp.is_finite() => {
                out.push(FitPoint { lambda: *l, angle: p.angle, r: p.r, u_at: p.u_at, u_max: p.u_max, amp })
            }
            Ok(_) => {}
            Err(e) if e.is_local_to_lambda() => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

/// Least-squares fit of the unknown edge (and, for poles, the coupling) to probe angles.
///
/// Starts from the Borg fit.  Zeros alone are poorly conditioned when known edges share the
/// eigenvalue being located; values on regular points are not.
fn fit_edge(data: &[FitPoint], start: &SymmetricPotential, coupling: Option<f64>) -> Result<(SymmetricPotential, Option<f64>, f64)> {
    let j = start.truncation();
    let mut p: Vec<f64> = start.coeffs().to_vec();
    p.extend(coupling);
    let with_c = coupling.is_some();
    // trial potentials far above the sampled energies cannot match the data and only cost time
    let ceiling = 10.0 * data.iter().fold(100.0f64, |m, q| m.max(q.lambda.abs()));
    let resid = |p: &[f64]| -> Option<Vec<f64>> {
        let pot = SymmetricPotential::new(p[..=j].to_vec()).ok()?;
        if !(pot.sup_bound() <= ceiling) {
            return None;
        }
        Some(
            data.iter()
                .map(|q| {
                    let t = propagate(&pot, q.lambda);
                    let m = if with_c { (t.dphi + p[j + 1] * t.phi).atan2(t.phi) } else { t.phi.atan() };
                    q.weight() * wrap_angle(m - q.angle)
                })
                .collect(),
        )
    };
    let cost = |r: &[f64]| r.iter().map(|x| x * x).sum::<f64>();
    let mut r = resid(&p).ok_or_else(|| Error::Degenerate("bad starting potential".into()))?;
    let mut c0 = cost(&r);
    let np = p.len();
    let mut mu = 1e-3;
    for _ in 0..40 {
        let cols: Vec<Vec<f64>> = (0..np)
            .into_par_iter()
            .map(|k| {
                let h = 1e-6 * p[k].abs().max(1.0);
                let (mut a, mut b) = (p.clone(), p.clone());
                a[k] += h;
                b[k] -= h;
                let (ra, rb) = (resid(&a).unwrap_or_default(), resid(&b).unwrap_or_default());
                ra.iter().zip(&rb).map(|(x, y)| (x - y) / (2.0 * h)).collect()
            })
            .collect();
        if cols.iter().any(|c| c.len() != r.len()) {
            break;
        }
        let jac = DMatrix::from_fn(r.len(), np, |i, k| cols[k][i]);
        let jtj = jac.transpose() * &jac;
        let g = jac.transpose() * DVector::from_column_slice(&r);
        let mut improved = false;
        let mut small = false;
        for _ in 0..12 {
            let mut a = jtj.clone();
            for k in 0..np {
                a[(k, k)] += mu * jtj[(k, k)].max(1e-12);
            }
            let Some(delta) = a.lu().solve(&(-&g)) else {
                mu *= 10.0;
                continue;
            };
            let trial: Vec<f64> = p.iter().zip(delta.iter()).map(|(x, d)| x + d).collect();
            if let Some(rt) = resid(&trial) {
                let ct = cost(&rt);
                if ct < c0 {
                    small = delta.amax() <= 1e-13 * trial.iter().fold(1.0f64, |m, x| m.max(x.abs()));
                    p = trial;
                    r = rt;
                    c0 = ct;
                    mu = (mu / 3.0).max(1e-12);
                    improved = true;
                    break;
                }
            }
            mu *= 4.0;
        }
        if !improved || small {
            break;
        }
    }
    let rms = (c0 / r.len().max(1) as f64).sqrt();
    Ok((SymmetricPotential::new(p[..=j].to_vec())?, with_c.then(|| p[j + 1]), rms))
}

/// Carry out one recovery and record it in the state.
pub fn execute_recovery(oracle: &dyn DtnOracle, state: &mut InverseState, spec: &SpecialSolution, kind: RecoveryKind) -> Result<()> {
    let step = state.steps.len();
    recovery_step(oracle, state, spec, kind).map_err(|e| {
        let d = &state.domain;
        let what = match kind {
            RecoveryKind::Ratio { at, edge } | RecoveryKind::Pole { at, edge } => {
                let (a, b) = d.edge(edge);
                format!("{kind_name} at {} for edge {}-{}", d.coord(at), d.coord(a), d.coord(b), kind_name = kind.name())
            }
            RecoveryKind::Coupling { at } => format!("coupling at {}", d.coord(at)),
        };
        e.in_step(format!("step {step} ({}, {}, {what})", state.phase, spec.label()))
    })
}

fn recovery_step(oracle: &dyn DtnOracle, state: &mut InverseState, spec: &SpecialSolution, kind: RecoveryKind) -> Result<()> {
    let plan = special_plan(&state.domain, &state.fields, spec);
    let grid = state.grid.clone();
    let j = state.settings.truncation;
    let guard = state.settings.grid_guard;
    let mut fitted_coupling = None;
    let mut data = Vec::new();
    let recovered = match edge_of(kind) {
        Some(edge) => {
            let probe = Probe { oracle, state, spec, plan: plan.clone(), kind };
            // zero extraction can miss eigenvalues shared with degenerate known edges; the angle fit
            // then still has the background as a starting point
            let eig = match extract_zeros(&probe, &grid, j + 1) {
                Ok(e) => Some(e),
                Err(Error::SpectrumIncomplete { .. }) => None,
                Err(e) => return Err(e),
            };
            let borg = eig.as_ref().and_then(|e| borg_reconstruct(e, j).ok());
            let background = state.background(j);
            let top = match &eig {
                Some(e) => e[j],
                None => dirichlet_spectrum(&background, j + 1)?[j],
            };
            data = fit_data(&probe, &grid, top + 10.0, state.settings.fit_points)?;
            let mut starts: Vec<SymmetricPotential> = borg.iter().map(|b| b.potential.clone()).collect();
            starts.push(background);
            let mut best: Option<(SymmetricPotential, Option<f64>, f64)> = None;
            let mut last_err = None;
            for start in &starts {
                let c_start = match kind {
                    RecoveryKind::Pole { .. } => match coupling_samples(&data, 1, Some(start), guard) {
                        Ok(c) => Some(c[0]),
                        Err(e) => {
                            last_err = Some(e);
                            continue;
                        }
                    },
                    _ => None,
                };
                match fit_edge(&data, start, c_start) {
                    Ok(fit) if best.as_ref().is_none_or(|b| fit.2 < b.2) => best = Some(fit),
                    Ok(_) => {}
                    Err(e) => last_err = Some(e),
                }
                if best.as_ref().is_some_and(|b| b.2 < 1e-9) {
                    break;
                }
            }
            let (potential, c, rms) = best.ok_or_else(|| last_err.unwrap_or_else(|| Error::NoConvergence("no starting potential for the fit".into())))?;
            fitted_coupling = c;
            let eigenvalues = match eig {
                Some(e) => e,
                None => dirichlet_spectrum(&potential, j + 1)?,
            };
            Some((
                edge,
                EdgeRecovery {
                    edge,
                    coefficients: potential.coeffs().to_vec(),
                    eigenvalues,
                    borg_residual: borg.map_or(f64::NAN, |b| b.residual),
                    fit_rms: rms,
                    solution: spec.label(),
                    method: kind.name().into(),
                },
                potential,
            ))
        }
        None => None,
    };
    if let Some((edge, rec, potential)) = recovered.clone() {
        state.edges.insert(edge, rec);
        state.fields.edges[edge] = Some(potential);
    }
    if let RecoveryKind::Pole { at, .. } | RecoveryKind::Coupling { at } = kind {
        if state.fields.couplings[at].is_none() {
            let n = state.settings.coupling_samples;
            if data.is_empty() {
                let probe = Probe { oracle, state, spec, plan, kind };
                data = fit_data(&probe, &grid, f64::INFINITY, state.settings.fit_points)?;
            }
            let samples = coupling_samples(&data, n, recovered.as_ref().map(|r| &r.2), guard)?;
            let value = fitted_coupling.unwrap_or_else(|| samples.iter().sum::<f64>() / samples.len() as f64);
            let spread = samples.iter().fold(0.0f64, |m, c| m.max((c - value).abs()));
            if spread > state.settings.coupling_spread_tol {
                return Err(Error::InconsistentCoupling { vertex: at, spread });
            }
            state.couplings.insert(at, CouplingRecovery { vertex: at, value, spread, samples, solution: spec.label() });
            state.fields.couplings[at] = Some(value);
        }
    }
    state.steps.push(StepRecord { solution: spec.label(), kind, phase: state.phase.clone() });
    Ok(())
}

/// Apply every recovery this special solution allows, one at a time along its line.
pub fn strip_with(oracle: &dyn DtnOracle, state: &mut InverseState, spec: &SpecialSolution) -> Result<usize> {
    let mut done = 0;
    loop {
        let plan = special_plan(&state.domain, &state.fields, spec);
        let avail = available_recoveries(&state.domain, &state.fields, spec, &plan);
        let Some(kind) = avail.first().copied() else {
            return Ok(done);
        };
        execute_recovery(oracle, state, spec, kind)?;
        done += 1;
    }
}

/// Strip one line and check that the edges down to the next level and the couplings on the line
/// are all known afterwards.
pub fn strip_line(oracle: &dyn DtnOracle, state: &mut InverseState, spec: &SpecialSolution) -> Result<usize> {
    let done = strip_with(oracle, state, spec)?;
    let gaps = strip_gaps(state, spec);
    if !gaps.is_empty() {
        return Err(Error::Stalled(format!("{} left gaps: {}", spec.label(), gaps.join(", "))));
    }
    Ok(done)
}

/// Unknown edges between a line and the level below it, and unknown couplings on the line.
pub fn strip_gaps(state: &InverseState, spec: &SpecialSolution) -> Vec<String> {
    let d = &*state.domain;
    let level = spec.line.level;
    let mut out = Vec::new();
    for (e, &(a, b)) in d.edges().iter().enumerate() {
        let (la, lb) = (spec.level_of(d, a), spec.level_of(d, b));
        if la.max(lb) == level && la.min(lb) == level - 1 && state.fields.edges[e].is_none() {
            out.push(format!("{}-{}", d.coord(a), d.coord(b)));
        }
    }
    for &v in d.interior() {
        if spec.level_of(d, v) == level && state.fields.couplings[v].is_none() {
            out.push(format!("C{}", d.coord(v)));
        }
    }
    out
}

pub fn has_recoveries(state: &InverseState, spec: &SpecialSolution) -> bool {
    let plan = special_plan(&state.domain, &state.fields, spec);
    !available_recoveries(&state.domain, &state.fields, spec, &plan).is_empty()
}

pub fn missing_summary(state: &InverseState) -> String {
    let d = &state.domain;
    let e: Vec<String> = state.fields.missing_edges(d).iter().map(|e| {
        let (a, b) = d.edge(*e);
        format!("{}-{}", d.coord(a), d.coord(b))
    }).collect();
    let c: Vec<String> = state.fields.missing_couplings(d).iter().map(|v| d.coord(*v).to_string()).collect();
    format!("edges [{}], couplings [{}]", e.join(", "), c.join(", "))
}

/// Dirichlet eigenvalues of the unknown edge in a `Ratio` or `Pole` recovery.
pub fn extract_edge_eigenvalues(oracle: &dyn DtnOracle, state: &InverseState, spec: &SpecialSolution, kind: RecoveryKind, count: usize) -> Result<Vec<f64>> {
    if edge_of(kind).is_none() {
        return Err(Error::Validation("coupling-only recoveries have no edge spectrum".into()));
    }
    let plan = special_plan(&state.domain, &state.fields, spec);
    let probe = Probe { oracle, state, spec, plan, kind };
    extract_zeros(&probe, &state.grid, count)
}
