//! Problem configurations, D-N sample files, reports, and the commands behind the `qgraph` binary.
//!
//! A configuration is TOML:
//!
//! ```toml
//! lattice = "square"        # or "hex"
//! m = 5                     # square: interior columns
//! n = 4                     # square: interior rows
//! # size = 2                # hex: parallelogram size N
//! seed = 0                  # echoed in reports; the pipeline itself draws no random numbers
//! lambdas = [0.0, 1.5]      # default sample points for `forward`
//!
//! [background]              # V_0 cosine coefficients and C_0; pendant edges carry V_0
//! coefficients = [0.0]
//! coupling = 0.0
//!
//! [[edge]]                  # one perturbed edge, endpoints by lattice coordinate
//! from = [2, 2]
//! to = [3, 2]
//! coefficients = [0.5, -0.4, 0.3]
//!
//! [[vertex]]                # one perturbed coupling
//! at = [2, 3]
//! coupling = 1.25
//!
//! [inverse]                 # any field of `InverseSettings`
//! truncation = 2
//!
//! [tolerances]
//! potential = 1e-4
//! coupling = 1e-6
//! ```
//!
//! Reports are JSON with every float written to 17 significant digits.  Sample files are a `#`
//! header followed by CSV records `lambda,status[,values]`, the values being the D-N matrix in
//! row-major order over the header's boundary order.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::inverse_hex::run_hex;
use crate::inverse_square::run_square;
use crate::lattice::{build_hex, build_square, Coord, Domain, LatticeKind};
use crate::oracle::{DtnOracle, ForwardOracle, LoggingOracle, RecordedOracle, Sample};
use crate::recovery::{InverseSettings, InverseState};
use crate::sturm::SymmetricPotential;
use crate::vertex_op::{CouplingField, EdgeField, Network};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Background {
    pub coefficients: Vec<f64>,
    pub coupling: f64,
}

impl Default for Background {
    fn default() -> Self {
        Self { coefficients: vec![0.0], coupling: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EdgePerturbation {
    pub from: Vec<i64>,
    pub to: Vec<i64>,
    pub coefficients: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VertexPerturbation {
    pub at: Vec<i64>,
    pub coupling: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Tolerances {
    pub potential: f64,
    pub coupling: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self { potential: 1e-4, coupling: 1e-6 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemConfig {
    pub lattice: LatticeKind,
    #[serde(default)]
    pub m: Option<usize>,
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub size: Option<usize>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub lambdas: Vec<f64>,
    #[serde(default)]
    pub background: Background,
    #[serde(default, rename = "edge")]
    pub edges: Vec<EdgePerturbation>,
    #[serde(default, rename = "vertex")]
    pub vertices: Vec<VertexPerturbation>,
    #[serde(default)]
    pub inverse: InverseSettings,
    #[serde(default)]
    pub tolerances: Tolerances,
}

/// A validated configuration: the domain, the true network and the a-priori pendant data.
pub struct Problem {
    pub config: ProblemConfig,
    pub domain: Arc<Domain>,
    pub truth: Network,
    pub background: EdgeField,
}

impl ProblemConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn build_domain(&self) -> Result<Domain> {
        match self.lattice {
            LatticeKind::Square => match (self.m, self.n) {
                (Some(m), Some(n)) => build_square(m, n),
                _ => Err(Error::Validation("square lattice needs `m` and `n`".into())),
            },
            LatticeKind::Hex => match self.size {
                Some(nn) => build_hex(nn),
                None => Err(Error::Validation("hex lattice needs `size`".into())),
            },
        }
    }

    /// Check every invariant and build the forward model.
    pub fn problem(&self) -> Result<Problem> {
        let domain = Arc::new(self.build_domain()?);
        let j = self.inverse.truncation;
        let potential = |c: &[f64], what: &str| -> Result<SymmetricPotential> {
            if c.is_empty() || c.len() > j + 1 {
                return Err(Error::Validation(format!("{what}: {} coefficients, expected 1..={}", c.len(), j + 1)));
            }
            Ok(SymmetricPotential::new(c.to_vec())?.padded(j))
        };
        let bg = potential(&self.background.coefficients, "background")?;
        if !self.background.coupling.is_finite() {
            return Err(Error::Validation("background coupling is not finite".into()));
        }
        let t = self.tolerances;
        if !(t.potential > 0.0 && t.coupling > 0.0) {
            return Err(Error::Validation("tolerances must be positive".into()));
        }
        if self.lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::Validation("non-finite lambda in `lambdas`".into()));
        }
        let vertex = |xs: &[i64]| -> Result<_> {
            let c = Coord::from_slice(xs)?;
            domain.vertex(&c).ok_or_else(|| Error::Validation(format!("no vertex {c} in the domain")))
        };

        let background = EdgeField::uniform(bg.clone());
        let mut edges = background.clone();
        let mut seen = BTreeSet::new();
        for p in &self.edges {
            let (a, b) = (vertex(&p.from)?, vertex(&p.to)?);
            let e = domain
                .edge_between(a, b)
                .ok_or_else(|| Error::Validation(format!("no edge {}-{}", domain.coord(a), domain.coord(b))))?;
            if domain.is_boundary(a) || domain.is_boundary(b) {
                return Err(Error::Validation(format!(
                    "edge {}-{} is adjacent to the boundary and must carry the background potential",
                    domain.coord(a),
                    domain.coord(b)
                )));
            }
            if !seen.insert(e) {
                return Err(Error::Validation(format!("edge {}-{} perturbed twice", domain.coord(a), domain.coord(b))));
            }
            edges.set(e, potential(&p.coefficients, &format!("edge {}-{}", domain.coord(a), domain.coord(b)))?);
        }
        let mut couplings = CouplingField::uniform(self.background.coupling);
        let mut seen = BTreeSet::new();
        for p in &self.vertices {
            let v = vertex(&p.at)?;
            if domain.is_boundary(v) {
                return Err(Error::Validation(format!("{} is a boundary vertex", domain.coord(v))));
            }
            if !p.coupling.is_finite() || !seen.insert(v) {
                return Err(Error::Validation(format!("bad or repeated coupling at {}", domain.coord(v))));
            }
            couplings.set(v, p.coupling);
        }
        let truth = Network::new(domain.clone(), edges, couplings);
        Ok(Problem { config: self.clone(), domain, truth, background })
    }
}

/// Recorded D-N data: a header describing the domain, then one record per `lambda`.
#[derive(Clone, Debug, PartialEq)]
pub struct DtnSampleFile {
    pub lattice: LatticeKind,
    pub dims: (usize, usize),
    pub boundary: Vec<Coord>,
    pub records: Vec<(f64, Sample)>,
}

fn lattice_name(k: LatticeKind) -> &'static str {
    match k {
        LatticeKind::Square => "square",
        LatticeKind::Hex => "hex",
    }
}

fn parse_f64(s: &str) -> Result<f64> {
    s.trim().parse().map_err(|_| Error::Parse(format!("bad number `{s}`")))
}

impl DtnSampleFile {
    pub fn for_domain(domain: &Domain) -> Self {
        Self {
            lattice: domain.kind,
            dims: domain.dims,
            boundary: domain.boundary().iter().map(|b| domain.coord(*b)).collect(),
            records: Vec::new(),
        }
    }

    pub fn build_domain(&self) -> Result<Domain> {
        let d = match self.lattice {
            LatticeKind::Square => build_square(self.dims.0, self.dims.1)?,
            LatticeKind::Hex => build_hex(self.dims.1)?,
        };
        let order: Vec<Coord> = d.boundary().iter().map(|b| d.coord(*b)).collect();
        if order != self.boundary {
            return Err(Error::Validation("sample file boundary order does not match the domain".into()));
        }
        Ok(d)
    }

    pub fn into_oracle(self) -> Result<RecordedOracle> {
        let domain = Arc::new(self.build_domain()?);
        RecordedOracle::new(domain, self.records)
    }

    pub fn write_to(&self, w: &mut impl Write) -> Result<()> {
        let nb = self.boundary.len();
        writeln!(w, "# qgraph dtn samples")?;
        writeln!(w, "# lattice: {}", lattice_name(self.lattice))?;
        writeln!(w, "# dims: {} {}", self.dims.0, self.dims.1)?;
        let order: Vec<String> = self.boundary.iter().map(|c| c.to_vec().iter().map(|x| x.to_string()).collect::<Vec<_>>().join(":")).collect();
        writeln!(w, "# boundary: {}", order.join(" "))?;
        writeln!(w, "# size: {nb}")?;
        writeln!(w, "lambda,status,values")?;
        for (l, s) in &self.records {
            let mut line = format!("{l:.16e},");
            match s {
                Sample::Matrix(m) => {
                    line.push_str("ok");
                    for i in 0..nb {
                        for j in 0..nb {
                            write!(line, ",{:.16e}", m[(i, j)]).unwrap();
                        }
                    }
                }
                Sample::Singular => line.push_str("singular"),
                Sample::Pole(what) => write!(line, "pole,{}", what.replace([',', '\n'], ";")).unwrap(),
            }
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_from(r: impl BufRead) -> Result<Self> {
        let mut lattice = None;
        let mut dims = None;
        let mut boundary = None;
        let mut size = None;
        let mut records = Vec::new();
        let mut columns = false;
        for (no, line) in r.lines().enumerate() {
            let line = line?;
            let bad = |what: &str| Error::Parse(format!("line {}: {what}", no + 1));
            if let Some(h) = line.strip_prefix('#') {
                let Some((key, val)) = h.split_once(':') else { continue };
                let val = val.trim();
                match key.trim() {
                    "lattice" => {
                        lattice = Some(match val {
                            "square" => LatticeKind::Square,
                            "hex" => LatticeKind::Hex,
                            _ => return Err(bad("unknown lattice")),
                        })
                    }
                    "dims" => {
                        let xs: Vec<usize> = val.split_whitespace().map(|x| x.parse().map_err(|_| bad("bad dims"))).collect::<Result<_>>()?;
                        if xs.len() != 2 {
                            return Err(bad("dims needs two values"));
                        }
                        dims = Some((xs[0], xs[1]));
                    }
                    "boundary" => {
                        let cs = val
                            .split_whitespace()
                            .map(|t| {
                                let xs: Vec<i64> = t.split(':').map(|x| x.parse().map_err(|_| bad("bad coordinate"))).collect::<Result<_>>()?;
                                Coord::from_slice(&xs)
                            })
                            .collect::<Result<Vec<_>>>()?;
                        boundary = Some(cs);
                    }
                    "size" => size = Some(val.parse::<usize>().map_err(|_| bad("bad size"))?),
                    _ => {}
                }
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            if !columns {
                if line.trim() != "lambda,status,values" {
                    return Err(bad("expected the column line `lambda,status,values`"));
                }
                columns = true;
                continue;
            }
            let nb = size.ok_or_else(|| bad("record before `size` header"))?;
            let mut fields = line.splitn(3, ',');
            let l = parse_f64(fields.next().unwrap_or(""))?;
            let sample = match fields.next().map(str::trim) {
                Some("ok") => {
                    let vals: Vec<f64> = fields.next().unwrap_or("").split(',').map(parse_f64).collect::<Result<_>>()?;
                    if vals.len() != nb * nb {
                        return Err(bad(&format!("{} values, expected {}", vals.len(), nb * nb)));
                    }
                    Sample::Matrix(Arc::new(DMatrix::from_row_slice(nb, nb, &vals)))
                }
                Some("singular") => Sample::Singular,
                Some("pole") => Sample::Pole(fields.next().unwrap_or("").to_string()),
                _ => return Err(bad("unknown status")),
            };
            if let Some((prev, _)) = records.last() {
                if l <= *prev {
                    return Err(bad("lambda keys must be strictly increasing"));
                }
            }
            records.push((l, sample));
        }
        let (lattice, dims, boundary, size) = match (lattice, dims, boundary, size) {
            (Some(a), Some(b), Some(c), Some(d)) => (a, b, c, d),
            _ => return Err(Error::Parse("sample file header incomplete".into())),
        };
        if boundary.len() != size {
            return Err(Error::Parse(format!("{} boundary vertices listed, size {size}", boundary.len())));
        }
        Ok(Self { lattice, dims, boundary, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EdgeReport {
    pub from: Vec<i64>,
    pub to: Vec<i64>,
    pub coefficients: Option<Vec<f64>>,
    pub eigenvalues: Vec<f64>,
    pub borg_residual: Option<f64>,
    pub fit_rms: Option<f64>,
    pub solution: Option<String>,
    pub method: Option<String>,
    pub truth: Option<Vec<f64>>,
    pub error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CouplingReport {
    pub at: Vec<i64>,
    pub value: Option<f64>,
    pub spread: Option<f64>,
    pub samples: Vec<f64>,
    pub solution: Option<String>,
    pub truth: Option<f64>,
    pub error: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Comparison {
    pub max_potential_error: f64,
    pub max_coupling_error: f64,
    pub tol_potential: f64,
    pub tol_coupling: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Residuals {
    pub max_borg_residual: f64,
    pub max_fit_rms: f64,
    pub max_coupling_spread: f64,
}

/// Everything a reconstruction produced, successful or not.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ReconstructionReport {
    pub command: String,
    pub lattice: LatticeKind,
    pub dims: (usize, usize),
    pub seed: Option<u64>,
    pub status: String,
    pub error: Option<String>,
    pub phase: String,
    pub settings: InverseSettings,
    pub recovered_edges: usize,
    pub recovered_couplings: usize,
    pub residuals: Residuals,
    pub comparison: Option<Comparison>,
    pub edges: Vec<EdgeReport>,
    pub couplings: Vec<CouplingReport>,
    pub lambda_count: usize,
    pub lambdas: Vec<f64>,
}

fn write_json(v: &Value, indent: usize, out: &mut String) {
    let pad = "  ".repeat(indent + 1);
    match v {
        Value::Number(n) if n.is_f64() => {
            write!(out, "{:.16e}", n.as_f64().unwrap()).unwrap();
        }
        Value::Array(xs) if xs.iter().all(|x| !x.is_array() && !x.is_object()) => {
            out.push('[');
            for (i, x) in xs.iter().enumerate() {
                if i > 0 {
                    out.push_str(", ");
                }
                write_json(x, indent, out);
            }
            out.push(']');
        }
        Value::Array(xs) => {
            out.push_str("[\n");
            for (i, x) in xs.iter().enumerate() {
                out.push_str(&pad);
                write_json(x, indent + 1, out);
                out.push_str(if i + 1 < xs.len() { ",\n" } else { "\n" });
            }
            out.push_str(&"  ".repeat(indent));
            out.push(']');
        }
        Value::Object(m) => {
            out.push_str("{\n");
            for (i, (k, x)) in m.iter().enumerate() {
                write!(out, "{pad}{}: ", Value::String(k.clone())).unwrap();
                write_json(x, indent + 1, out);
                out.push_str(if i + 1 < m.len() { ",\n" } else { "\n" });
            }
            out.push_str(&"  ".repeat(indent));
            out.push('}');
        }
        other => out.push_str(&other.to_string()),
    }
}

/// Pretty JSON with every float at 17 significant digits.
pub fn to_report_text<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Parse(e.to_string()))?;
    let mut out = String::new();
    write_json(&v, 0, &mut out);
    out.push('\n');
    Ok(out)
}

impl ReconstructionReport {
    pub fn to_text(&self) -> Result<String> {
        to_report_text(self)
    }

    /// Collect the state of a (possibly failed) reconstruction, comparing with `truth` when given.
    pub fn from_state(command: &str, state: &InverseState, outcome: &Result<()>, truth: Option<(&Network, Tolerances)>, lambdas: Vec<f64>, seed: Option<u64>) -> Self {
        let d = &*state.domain;
        let mut edges = Vec::new();
        let (mut worst_v, mut worst_c) = (0.0f64, 0.0f64);
        for (e, &(a, b)) in d.edges().iter().enumerate() {
            if d.is_boundary(a) || d.is_boundary(b) {
                continue;
            }
            let got = state.fields.edges[e].as_ref();
            let rec = state.edges.get(&e);
            let want = truth.map(|(t, _)| t.edges.get(e));
            let error = match (got, want) {
                (Some(g), Some(w)) => Some(g.max_abs_diff(w)),
                (None, Some(_)) => Some(f64::INFINITY),
                _ => None,
            };
            worst_v = worst_v.max(error.unwrap_or(0.0));
            edges.push(EdgeReport {
                from: d.coord(a).to_vec(),
                to: d.coord(b).to_vec(),
                coefficients: got.map(|p| p.coeffs().to_vec()),
                eigenvalues: rec.map(|r| r.eigenvalues.clone()).unwrap_or_default(),
                borg_residual: rec.map(|r| r.borg_residual),
                fit_rms: rec.map(|r| r.fit_rms),
                solution: rec.map(|r| r.solution.clone()),
                method: rec.map(|r| r.method.clone()),
                truth: want.map(|w| w.coeffs().to_vec()),
                error: error.filter(|x| x.is_finite()),
            });
        }
        let mut couplings = Vec::new();
        for &v in d.interior() {
            let got = state.fields.couplings[v];
            let rec = state.couplings.get(&v);
            let want = truth.map(|(t, _)| t.couplings.get(v));
            let error = match (got, want) {
                (Some(g), Some(w)) => Some((g - w).abs()),
                (None, Some(_)) => Some(f64::INFINITY),
                _ => None,
            };
            worst_c = worst_c.max(error.unwrap_or(0.0));
            couplings.push(CouplingReport {
                at: d.coord(v).to_vec(),
                value: got,
                spread: rec.map(|r| r.spread),
                samples: rec.map(|r| r.samples.clone()).unwrap_or_default(),
                solution: rec.map(|r| r.solution.clone()),
                truth: want,
                error: error.filter(|x| x.is_finite()),
            });
        }
        let residuals = Residuals {
            max_borg_residual: state.edges.values().map(|r| r.borg_residual).fold(0.0, f64::max),
            max_fit_rms: state.edges.values().map(|r| r.fit_rms).fold(0.0, f64::max),
            max_coupling_spread: state.couplings.values().map(|r| r.spread).fold(0.0, f64::max),
        };
        let comparison = truth.map(|(_, tol)| Comparison {
            max_potential_error: worst_v,
            max_coupling_error: worst_c,
            tol_potential: tol.potential,
            tol_coupling: tol.coupling,
            pass: outcome.is_ok() && worst_v <= tol.potential && worst_c <= tol.coupling,
        });
        Self {
            command: command.into(),
            lattice: d.kind,
            dims: d.dims,
            seed,
            status: if outcome.is_ok() { "ok" } else { "failed" }.into(),
            error: outcome.as_ref().err().map(|e| e.to_string()),
            phase: state.phase.clone(),
            settings: state.settings.clone(),
            recovered_edges: state.edges.len(),
            recovered_couplings: state.couplings.len(),
            residuals,
            comparison,
            edges,
            couplings,
            lambda_count: lambdas.len(),
            lambdas,
        }
    }
}

/// A report plus the error that should decide the exit status, if any.
pub struct Outcome {
    pub report: ReconstructionReport,
    pub failure: Option<Error>,
}

impl Outcome {
    pub fn exit_code(&self) -> i32 {
        self.failure.as_ref().map_or(0, Error::exit_code)
    }
}

/// Run the reconstruction matching the domain, keeping partial progress on failure.
pub fn reconstruct_into(oracle: &dyn DtnOracle, state: &mut InverseState) -> Result<()> {
    match state.domain.kind {
        LatticeKind::Square => run_square(oracle, state),
        LatticeKind::Hex => run_hex(oracle, state),
    }
}

fn invert_with(command: &str, oracle: &dyn DtnOracle, background: &EdgeField, settings: InverseSettings, truth: Option<(&Network, Tolerances)>, seed: Option<u64>) -> Outcome {
    let logged = LoggingOracle::new(oracle);
    let mut state = InverseState::new(Arc::new(oracle.domain().clone()), background, settings);
    let res = reconstruct_into(&logged, &mut state);
    let report = ReconstructionReport::from_state(command, &state, &res, truth, logged.requested(), seed);
    Outcome { report, failure: res.err() }
}

fn write_text(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

/// Sample the true D-N map at `lambdas` (sorted, duplicates dropped) and write a sample file.
pub fn cmd_forward(config: &ProblemConfig, lambdas: &[f64], out: Option<&Path>) -> Result<DtnSampleFile> {
    let problem = config.problem()?;
    let mut ls: Vec<f64> = lambdas.to_vec();
    if ls.iter().any(|l| !l.is_finite()) {
        return Err(Error::Validation("non-finite lambda".into()));
    }
    ls.sort_by(f64::total_cmp);
    ls.dedup_by(|a, b| a.to_bits() == b.to_bits());
    if ls.is_empty() {
        return Err(Error::Validation("no lambda values to sample".into()));
    }
    let oracle = ForwardOracle::new(problem.truth.clone());
    let mut file = DtnSampleFile::for_domain(&problem.domain);
    for l in ls {
        let r = oracle.dtn(l);
        match Sample::from_result(&r) {
            Some(s) => file.records.push((l, s)),
            None => return Err(r.err().unwrap()),
        }
    }
    if !file.records.iter().any(|(_, s)| matches!(s, Sample::Matrix(_))) {
        return Err(Error::PoleGuard { lambda: file.records[0].0, what: "every requested lambda was rejected".into() });
    }
    match out {
        Some(p) => file.save(p)?,
        None => file.write_to(&mut std::io::stdout().lock())?,
    }
    Ok(file)
}

/// Invert either the configured forward model or a recorded sample file.
///
/// With both, the configuration supplies the pendant potentials, settings and ground truth for
/// comparison, and the file supplies the data.
pub fn cmd_invert(config: Option<&ProblemConfig>, dtn: Option<&Path>, out: Option<&Path>) -> Result<Outcome> {
    let problem = config.map(ProblemConfig::problem).transpose()?;
    let truth = problem.as_ref().map(|p| (&p.truth, p.config.tolerances));
    let seed = problem.as_ref().map(|p| p.config.seed);
    let outcome = match (dtn, &problem) {
        (Some(path), _) => {
            let file = DtnSampleFile::load(path)?;
            let oracle = file.into_oracle()?;
            let (background, settings) = match &problem {
                Some(p) => {
                    if p.domain.kind != oracle.domain().kind || p.domain.dims != oracle.domain().dims {
                        return Err(Error::Validation("sample file and configuration describe different domains".into()));
                    }
                    (p.background.clone(), p.config.inverse.clone())
                }
                None => {
                    let s = InverseSettings::default();
                    (EdgeField::uniform(SymmetricPotential::zero(s.truncation)), s)
                }
            };
            let mut o = invert_with("invert", &oracle, &background, settings, truth, seed);
            if let Some(Error::MissingLambda { .. }) = o.failure.as_ref().map(Error::root) {
                let missing = oracle.missing();
                o.failure = Some(Error::MissingLambda { lambda: missing[0], missing });
                o.report.error = o.failure.as_ref().map(|e| e.to_string());
            }
            o
        }
        (None, Some(p)) => {
            let oracle = ForwardOracle::new(p.truth.clone());
            invert_with("invert", &oracle, &p.background, p.config.inverse.clone(), truth, seed)
        }
        (None, None) => return Err(Error::Validation("invert needs --config or --dtn".into())),
    };
    write_text(out, &outcome.report.to_text()?)?;
    Ok(outcome)
}

/// Forward model fed straight into the inverse; fails when the comparison is outside tolerance.
pub fn cmd_roundtrip(config: &ProblemConfig, out: Option<&Path>) -> Result<Outcome> {
    let p = config.problem()?;
    let oracle = ForwardOracle::new(p.truth.clone());
    let mut o = invert_with("roundtrip", &oracle, &p.background, config.inverse.clone(), Some((&p.truth, config.tolerances)), Some(config.seed));
    if o.failure.is_none() {
        if let Some(c) = o.report.comparison.as_ref().filter(|c| !c.pass) {
            o.failure = Some(Error::Tolerance(format!(
                "potential error {:.3e} (tol {:.1e}), coupling error {:.3e} (tol {:.1e})",
                c.max_potential_error, c.tol_potential, c.max_coupling_error, c.tol_coupling
            )));
            o.report.status = "tolerance".into();
            o.report.error = o.failure.as_ref().map(|e| e.to_string());
        }
    }
    write_text(out, &o.report.to_text()?)?;
    Ok(o)
}

/// The `lambda` values the inverse requests for this configuration, one per line.
///
/// The requests adapt to the data, so the inverse runs against the configured forward model;
/// `forward` over the logged list then yields a sample file that replays the run exactly.
pub fn cmd_lambda_log(config: &ProblemConfig, out: Option<&Path>) -> Result<Vec<f64>> {
    let p = config.problem()?;
    let oracle = ForwardOracle::new(p.truth.clone());
    let logged = LoggingOracle::new(&oracle);
    let mut state = InverseState::new(p.domain.clone(), &p.background, config.inverse.clone());
    reconstruct_into(&logged, &mut state)?;
    let ls = logged.requested();
    let text: String = ls.iter().map(|l| format!("{l:.16e}\n")).collect();
    write_text(out, &text)?;
    Ok(ls)
}

/// Read a lambda list written by [`cmd_lambda_log`]: one value per line, `#` comments allowed.
pub fn read_lambda_list(path: &Path) -> Result<Vec<f64>> {
    std::fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(parse_f64)
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(m: usize, n: usize) -> ProblemConfig {
        ProblemConfig::from_toml(&format!("lattice = \"square\"\nm = {m}\nn = {n}\n")).unwrap()
    }

    #[test]
    fn forward_constant_column_sums() {
        // at lambda = 0 with V = 0, C = 0 the constant is a solution and phi(1) = 1
        let tmp = tempfile::NamedTempFile::new().unwrap();
        let file = cmd_forward(&square(2, 2), &[0.0], Some(tmp.path())).unwrap();
        assert_eq!(file.boundary.len(), 8);
        let Sample::Matrix(m) = &file.records[0].1 else { panic!() };
        for i in 0..8 {
            let s: f64 = m.row(i).iter().sum();
            assert!((s - 1.0).abs() < 1e-12, "row {i}: {s}");
        }
    }

    #[test]
    fn sample_file_roundtrip_is_exact() {
        let p = square(2, 3).problem().unwrap();
        let oracle = ForwardOracle::new(p.truth.clone());
        let mut file = DtnSampleFile::for_domain(&p.domain);
        for l in [-1.25, 0.1, std::f64::consts::PI * 2.0] {
            file.records.push((l, Sample::from_result(&oracle.dtn(l)).unwrap()));
        }
        file.records.push((50.0, Sample::Singular));
        file.records.push((60.0, Sample::Pole("phi small, on edge 3".into())));
        let mut buf = Vec::new();
        file.write_to(&mut buf).unwrap();
        let back = DtnSampleFile::read_from(buf.as_slice()).unwrap();
        assert_eq!(back.records.len(), 5);
        assert_eq!(back.records[..4], file.records[..4]);
        assert_eq!(back.records[4].1, Sample::Pole("phi small; on edge 3".into()));
    }

    #[test]
    fn rejects_boundary_adjacent_perturbation() {
        let mut c = square(3, 3);
        c.edges.push(EdgePerturbation { from: vec![0, 1], to: vec![1, 1], coefficients: vec![1.0] });
        let e = c.problem().err().unwrap();
        assert_eq!(e.exit_code(), 2);
    }

    #[test]
    fn report_floats_have_17_digits() {
        let text = to_report_text(&serde_json::json!({"x": 0.1, "n": 3, "v": [1.0, -2.5e-7]})).unwrap();
        assert!(text.contains("1.0000000000000001e-1"), "{text}");
        assert!(text.contains("\"n\": 3"));
        let back: Value = serde_json::from_str(&text).unwrap();
        assert_eq!(back["x"].as_f64(), Some(0.1));
    }
}
