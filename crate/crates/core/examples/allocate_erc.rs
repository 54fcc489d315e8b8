//! Equal-risk-contribution weights for the sample protocols, compared with
//! equal and TVL weighting.
//!
//! ```text
//! cargo run --example allocate_erc
//! ```

use std::path::Path;

use defi_parity::allocate::{allocate, solve_erc, ErcSolverOptions, Method};
use defi_parity::ingest::load_scores;
use defi_parity::risk::{build_risk_matrix, normalize, portfolio_risk_report, risk_contributions};

fn main() -> defi_parity::Result<()> {
    let scores = Path::new(env!("CARGO_MANIFEST_DIR")).join("examples/data/scores.csv");
    let universe = load_scores(&scores)?;
    let matrix = normalize(&build_risk_matrix(&universe))?;

    let solution = solve_erc(&matrix, &ErcSolverOptions::default())?;
    println!(
        "ERC solved in {} iterations ({:?}), objective {:.2e}",
        solution.iterations, solution.stop_reason, solution.objective
    );

    for method in Method::ALL {
        let w = allocate(&universe, method, &ErcSolverOptions::default())?;
        let rc = risk_contributions(&w, &matrix)?;
        println!("\n{method}: portfolio risk {:.4}", portfolio_risk_report(&w, &matrix)?);
        for ((id, weight), c) in w.iter().zip(&rc.contributions) {
            println!("  {id:<12} weight {weight:.4}  risk share {:.4}", c / rc.total);
        }
    }
    Ok(())
}
