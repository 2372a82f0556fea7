//! Plain-text mesh files.
//!
//! Format: line 1 holds `NV NT NS`; then NV lines `x y`, NT lines `i j k`
//! (0-based, counter-clockwise), NS lines `a b label` with label
//! 0 = Interior, 1 = Dirichlet, 2 = Neumann. Coordinates round-trip exactly
//! through Rust's shortest-representation float formatting.

use super::{Mesh, SideLabel};
use crate::error::{Error, Result};
use crate::geometry::Vec2;
use std::collections::HashMap;
use std::path::Path;

pub fn save_mesh(mesh: &Mesh, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str(&format!(
        "{} {} {}\n",
        mesh.n_vertices(),
        mesh.n_triangles(),
        mesh.n_sides()
    ));
    for v in &mesh.vertices {
        out.push_str(&format!("{} {}\n", v.x, v.y));
    }
    for t in &mesh.triangles {
        out.push_str(&format!("{} {} {}\n", t[0], t[1], t[2]));
    }
    for (s, pair) in mesh.sides.iter().enumerate() {
        let label = match mesh.side_labels[s] {
            SideLabel::Interior => 0,
            SideLabel::Dirichlet => 1,
            SideLabel::Neumann => 2,
        };
        out.push_str(&format!("{} {} {}\n", pair[0], pair[1], label));
    }
    crate::fsutil::write_atomic(path, out.as_bytes())
}

pub fn load_mesh(path: &Path) -> Result<Mesh> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text)
}

pub fn parse_mesh(text: &str) -> Result<Mesh> {
    let mut lines = text.lines().enumerate();

    let (line_no, header) = lines
        .next()
        .ok_or_else(|| parse_err(1, "empty mesh file"))?;
    let counts = parse_fields::<usize>(header, line_no + 1, 3)?;
    let (nv, nt, ns) = (counts[0], counts[1], counts[2]);

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, raw) = next_line(&mut lines, "vertex")?;
        let c = parse_fields::<f64>(raw, ln, 2)?;
        vertices.push(Vec2::new(c[0], c[1]));
    }

    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (ln, raw) = next_line(&mut lines, "triangle")?;
        let idx = parse_fields::<usize>(raw, ln, 3)?;
        for &v in &idx {
            if v >= nv {
                return Err(parse_err(ln, &format!("vertex index {v} out of range {nv}")));
            }
        }
        let [a, b, c] = [idx[0], idx[1], idx[2]];
        let signed = (vertices[b] - vertices[a]).cross(vertices[c] - vertices[a]);
        if signed <= 0.0 {
            return Err(parse_err(
                ln,
                &format!("inverted or degenerate triangle (signed area {signed:.3e})"),
            ));
        }
        triangles.push([a, b, c]);
    }

    let mut labels: HashMap<[usize; 2], (SideLabel, usize)> = HashMap::with_capacity(ns);
    for _ in 0..ns {
        let (ln, raw) = next_line(&mut lines, "side")?;
        let f = parse_fields::<usize>(raw, ln, 3)?;
        let (a, b) = (f[0].min(f[1]), f[0].max(f[1]));
        if b >= nv {
            return Err(parse_err(ln, &format!("vertex index {b} out of range {nv}")));
        }
        let label = match f[2] {
            0 => SideLabel::Interior,
            1 => SideLabel::Dirichlet,
            2 => SideLabel::Neumann,
            other => return Err(parse_err(ln, &format!("unknown side label {other}"))),
        };
        labels.insert([a, b], (label, ln));
    }

    // The side table is rebuilt from the triangles; the file's side list only
    // supplies boundary labels and is checked for consistency.
    let mesh = Mesh::from_triangles(vertices, triangles, |pair| {
        labels
            .get(&pair)
            .map(|&(label, _)| label)
            .unwrap_or(SideLabel::Dirichlet)
    })
    .map_err(|e| Error::Parse {
        line: 1,
        msg: e.to_string(),
    })?;

    if mesh.n_sides() != ns {
        return Err(parse_err(
            1,
            &format!(
                "side count {} does not match triangulation ({} sides)",
                ns,
                mesh.n_sides()
            ),
        ));
    }
    for (pair, &(label, ln)) in &labels {
        let s = mesh
            .sides
            .binary_search(pair)
            .map_err(|_| parse_err(ln, &format!("side {pair:?} not an edge of any triangle")))?;
        let derived = mesh.side_labels[s];
        let boundary = mesh.side_adjacency[s].plus.is_none();
        if boundary && label == SideLabel::Interior {
            return Err(parse_err(ln, &format!("boundary side {pair:?} labeled Interior")));
        }
        if !boundary && label != SideLabel::Interior {
            return Err(parse_err(
                ln,
                &format!("interior side {pair:?} carries boundary label"),
            ));
        }
        debug_assert_eq!(derived, if boundary { label } else { SideLabel::Interior });
    }

    Ok(mesh)
}

fn next_line<'a>(
    lines: &mut impl Iterator<Item = (usize, &'a str)>,
    what: &str,
) -> Result<(usize, &'a str)> {
    lines
        .next()
        .map(|(i, s)| (i + 1, s))
        .ok_or_else(|| parse_err(0, &format!("unexpected end of file reading {what}")))
}

fn parse_fields<T: std::str::FromStr>(line: &str, line_no: usize, want: usize) -> Result<Vec<T>> {
    let fields: Vec<&str> = line.split_whitespace().collect();
    if fields.len() != want {
        return Err(parse_err(
            line_no,
            &format!("expected {want} fields, found {}", fields.len()),
        ));
    }
    fields
        .iter()
        .map(|f| {
            f.parse::<T>()
                .map_err(|_| parse_err(line_no, &format!("cannot parse field '{f}'")))
        })
        .collect()
}

fn parse_err(line: usize, msg: &str) -> Error {
    Error::Parse {
        line,
        msg: msg.to_string(),
    }
}
