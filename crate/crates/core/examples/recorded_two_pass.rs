//! Two-pass inversion from recorded data: log the spectral parameters an inversion asks for,
//! record the D-N map there in a sample file, and replay the inversion from the file.

use std::path::Path;

use qgraph_inverse::cli::{cmd_invert, DtnSampleFile, ProblemConfig};
use qgraph_inverse::oracle::{DtnOracle, ForwardOracle, LoggingOracle, Sample};
use qgraph_inverse::recovery::InverseState;

const CONFIG: &str = r#"
lattice = "hex"
size = 1

[[vertex]]
at = [0, 0, 2]
coupling = 0.6
"#;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = ProblemConfig::from_toml(CONFIG)?;
    let problem = config.problem()?;
    let live = ForwardOracle::new(problem.truth.clone());

    // pass one: run against the model and log every request
    let logged = LoggingOracle::new(&live);
    let mut state = InverseState::new(problem.domain.clone(), &problem.background, config.inverse.clone());
    qgraph_inverse::cli::reconstruct_into(&logged, &mut state)?;
    let lambdas = logged.requested();
    println!("inversion requested {} lambda values", lambdas.len());

    // record exactly those
    let mut file = DtnSampleFile::for_domain(&problem.domain);
    for l in &lambdas {
        file.records.push((*l, Sample::from_result(&live.dtn(*l)).expect("replayable outcome")));
    }
    let path = std::env::temp_dir().join(format!("qgraph_two_pass_{}.dtn", std::process::id()));
    file.save(&path)?;

    // pass two: invert from the file alone
    let outcome = cmd_invert(Some(&config), Some(&path), Some(Path::new(&path.with_extension("json"))))?;
    let report = outcome.report;
    let c = report.comparison.as_ref().unwrap();
    println!("status {}, max potential error {:.2e}, max coupling error {:.2e}", report.status, c.max_potential_error, c.max_coupling_error);
    let same = state.edges.iter().all(|(e, r)| {
        let (a, b) = problem.domain.edge(*e);
        report.edges.iter().any(|x| x.from == problem.domain.coord(a).to_vec() && x.to == problem.domain.coord(b).to_vec() && x.coefficients.as_ref() == Some(&r.coefficients))
    });
    println!("recorded inversion reproduces the live coefficients bit for bit: {same}");
    std::fs::remove_file(&path)?;
    std::fs::remove_file(path.with_extension("json"))?;
    Ok(())
}
