//! Builds the concentric-ring disk meshes, reports their mesh sizes, and
//! round-trips one through the plain-text file format.
//!
//! ```bash
//! cargo run --example disk_mesh
//! ```

use torsion::mesh::disk::build_disk_mesh;
use torsion::mesh::io::{load_mesh, save_mesh};
use torsion::mesh::compute_geometry;

fn main() -> torsion::Result<()> {
    println!("level      h          target    vertices  triangles  sides  euler");
    for level in 0..=4 {
        let mesh = build_disk_mesh(1.0, level)?;
        let geo = compute_geometry(&mesh)?;
        let h = mesh.mesh_size(&geo);
        let target = 0.36 * 0.5_f64.powi(level as i32);
        println!(
            "{level:>5}  {h:<9.5} {target:<9.5} {:>8}  {:>9}  {:>5}  {:>5}",
            mesh.n_vertices(),
            mesh.n_triangles(),
            mesh.n_sides(),
            mesh.euler_characteristic(),
        );
    }

    let mesh = build_disk_mesh(1.0, 1)?;
    let path = std::env::temp_dir().join("disk_level1.mesh");
    save_mesh(&mesh, &path)?;
    let loaded = load_mesh(&path)?;
    assert_eq!(mesh.triangles, loaded.triangles);
    println!("\nsaved and reloaded level-1 mesh at {}", path.display());
    Ok(())
}
