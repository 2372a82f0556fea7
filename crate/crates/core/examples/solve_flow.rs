//! Solves the constrained disk problem with the semi-implicit dual gradient
//! flow and prints the primal/dual energies and the duality gap.
//!
//! ```bash
//! cargo run --example solve_flow
//! ```

use torsion::dual_solver::{run_flow, FlowParams};
use torsion::duality::marini_reconstruct;
use torsion::energy::{dual_energy_h, primal_energy_h};
use torsion::experiments::ManufacturedCase;
use torsion::mesh::disk::build_disk_mesh;
use torsion::mesh::compute_geometry;

fn main() -> torsion::Result<()> {
    let case = ManufacturedCase::new(10.0, 1.0)?;
    let mesh = build_disk_mesh(case.r, 2)?;
    let geo = compute_geometry(&mesh)?;
    let data = case.project(&mesh, &geo)?;

    let params = FlowParams {
        tau: 1000.0,
        eps_stop: 1e-8,
        ..FlowParams::default()
    };
    let report = run_flow(&mesh, &geo, &data, &params)?;
    println!(
        "flow converged in {} iterations (residual {:.3e})",
        report.iterations, report.residual_norm
    );

    let (u_cr, defect) = marini_reconstruct(&mesh, &geo, &report.z, &report.lambda, &data);
    let primal = primal_energy_h(&mesh, &geo, &u_cr, &data);
    let dual = dual_energy_h(&mesh, &geo, &report.z, &data);
    println!("reconstruction conformity defect: {defect:.3e}");
    println!("primal energy I_h(u_h)  = {:+.10e}", primal.value);
    println!("dual energy   D_h(z_h)  = {:+.10e}", dual.value);
    println!("duality gap   I_h - D_h = {:+.3e}", primal.value - dual.value);
    Ok(())
}
