//! Fine mesh, constrained P1 space and plain-text exports.

pub mod mesh;
pub mod space;

use std::io::{self, Write};

pub use mesh::{generate_mesh, Triangulation};
pub use space::{BoundaryMode, TruthSpace};

/// Writes nodes and elements with their tags:
///
/// ```text
/// nodes <count>
/// <index> <x> <y> <side bitmask>
/// triangles <count>
/// <index> <v0> <v1> <v2> <macro> <region>
/// ```
pub fn write_mesh<W: Write>(mesh: &Triangulation, mut w: W) -> io::Result<()> {
    writeln!(w, "nodes {}", mesh.node_count())?;
    for (i, p) in mesh.nodes.iter().enumerate() {
        writeln!(w, "{i} {} {} {}", p[0], p[1], mesh.node_sides[i])?;
    }
    writeln!(w, "triangles {}", mesh.len())?;
    for (t, tri) in mesh.triangles.iter().enumerate() {
        writeln!(
            w,
            "{t} {} {} {} {} {}",
            tri[0],
            tri[1],
            tri[2],
            mesh.macro_index[t],
            mesh.region[t].name()
        )?;
    }
    Ok(())
}

/// Writes `x,y,value` rows for every mesh node of the FE function `v`.
pub fn write_field_csv<W: Write>(space: &TruthSpace, v: &[f64], mut w: W) -> io::Result<()> {
    writeln!(w, "x,y,value")?;
    for (p, val) in space.mesh.nodes.iter().zip(space.expand(v)) {
        writeln!(w, "{},{},{}", p[0], p[1], val)?;
    }
    Ok(())
}
