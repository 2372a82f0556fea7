//! Interpolant-based convergence study: the discrete primal-dual gap of the
//! interpolated exact pair decays quadratically and coincides with the
//! discrete total error.
//!
//! ```bash
//! cargo run --example apriori_study
//! ```

use torsion::dual_solver::FlowParams;
use torsion::experiments::{run_apriori_study, ManufacturedCase, StudyConfig};

fn main() -> torsion::Result<()> {
    let case = ManufacturedCase::new(10.0, 1.0)?;
    let flow = FlowParams {
        tau: 1000.0,
        eps_stop: 1e-8,
        ..FlowParams::default()
    };
    let config = StudyConfig::new(case, vec![1, 2, 3], flow)?;
    let table = run_apriori_study(&config)?;
    print!("{}", table.to_csv());
    println!(
        "\nmean EOC over the last two increments: gap {:.3}, total {:.3}",
        table.mean_eoc_gap(2),
        table.mean_eoc_tot(2)
    );
    Ok(())
}
