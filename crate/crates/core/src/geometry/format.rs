//! Plain-text geometry definition.
//!
//! ```text
//! [parameter_box]
//! lower 18 4 7
//! upper 19 5 8
//! reference 18.5 4.5 7.5      # optional, defaults to the box midpoint
//!
//! [vertices]
//! 0 0.0 0.0                   # index x y  (reference positions)
//!
//! [vertex_functions]
//! 6 x 0.02 -0.0005 0 0        # index coordinate offset c_1 .. c_P
//!
//! [triangles]
//! 0 1 7 iron                  # vertex indices, region tag
//!
//! [boundary]
//! 0 3 AB                      # edge endpoints, side
//! ```
//!
//! A vertex function states `coordinate(p) = offset + Σ c_k p_k`; it must
//! reproduce the `[vertices]` entry at the reference parameter. Vertices
//! without a function are fixed.

use std::fmt::Write as _;
use std::path::Path;

use super::{
    BoundaryEdge, BoundarySide, MacroDecomposition, MacroTriangle, ParameterBox, Region,
    VertexFunction,
};
use crate::error::{Error, Result};

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Box,
    Vertices,
    Functions,
    Triangles,
    Boundary,
}

fn perr(line: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        line,
        message: message.into(),
    }
}

fn num(tok: &str, line: usize) -> Result<f64> {
    let v: f64 = tok
        .parse()
        .map_err(|_| perr(line, format!("expected a number, found `{tok}`")))?;
    if !v.is_finite() {
        return Err(perr(line, format!("non-finite number `{tok}`")));
    }
    Ok(v)
}

fn index(tok: &str, line: usize) -> Result<usize> {
    tok.parse()
        .map_err(|_| perr(line, format!("expected a non-negative index, found `{tok}`")))
}

pub fn read_geometry(path: impl AsRef<Path>) -> Result<MacroDecomposition> {
    let text = std::fs::read_to_string(path)?;
    parse_geometry(&text)
}

pub fn parse_geometry(text: &str) -> Result<MacroDecomposition> {
    let mut section = Section::None;
    let mut lower: Option<(Vec<f64>, usize)> = None;
    let mut upper: Option<(Vec<f64>, usize)> = None;
    let mut reference: Option<(Vec<f64>, usize)> = None;
    let mut vertices: Vec<[f64; 2]> = Vec::new();
    let mut functions: Vec<(usize, usize, f64, Vec<f64>, usize)> = Vec::new();
    let mut triangles = Vec::new();
    let mut boundary = Vec::new();

    for (k, raw) in text.lines().enumerate() {
        let line = k + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            section = match content {
                "[parameter_box]" => Section::Box,
                "[vertices]" => Section::Vertices,
                "[vertex_functions]" => Section::Functions,
                "[triangles]" => Section::Triangles,
                "[boundary]" => Section::Boundary,
                other => return Err(perr(line, format!("unknown section {other}"))),
            };
            continue;
        }
        let toks: Vec<&str> = content.split_whitespace().collect();
        match section {
            Section::None => return Err(perr(line, "data outside of any section")),
            Section::Box => {
                let values = toks[1..]
                    .iter()
                    .map(|t| num(t, line))
                    .collect::<Result<Vec<_>>>()?;
                let slot = match toks[0] {
                    "lower" => &mut lower,
                    "upper" => &mut upper,
                    "reference" => &mut reference,
                    other => return Err(perr(line, format!("unknown box entry `{other}`"))),
                };
                *slot = Some((values, line));
            }
            Section::Vertices => {
                if toks.len() != 3 {
                    return Err(perr(line, "vertex rows need `index x y`"));
                }
                let i = index(toks[0], line)?;
                if i != vertices.len() {
                    return Err(perr(
                        line,
                        format!("vertex index {i} out of order, expected {}", vertices.len()),
                    ));
                }
                vertices.push([num(toks[1], line)?, num(toks[2], line)?]);
            }
            Section::Functions => {
                if toks.len() < 3 {
                    return Err(perr(line, "vertex function rows need `index x|y offset c...`"));
                }
                let i = index(toks[0], line)?;
                let coord = match toks[1] {
                    "x" => 0,
                    "y" => 1,
                    other => return Err(perr(line, format!("coordinate must be x or y, found `{other}`"))),
                };
                let offset = num(toks[2], line)?;
                let coeffs = toks[3..]
                    .iter()
                    .map(|t| num(t, line))
                    .collect::<Result<Vec<_>>>()?;
                functions.push((i, coord, offset, coeffs, line));
            }
            Section::Triangles => {
                if toks.len() != 4 {
                    return Err(perr(line, "triangle rows need `v0 v1 v2 region`"));
                }
                let v = [index(toks[0], line)?, index(toks[1], line)?, index(toks[2], line)?];
                let region = Region::from_name(toks[3])
                    .ok_or_else(|| perr(line, format!("unknown region `{}`", toks[3])))?;
                triangles.push((v, region, line));
            }
            Section::Boundary => {
                if toks.len() != 3 {
                    return Err(perr(line, "boundary rows need `v0 v1 side`"));
                }
                let v = [index(toks[0], line)?, index(toks[1], line)?];
                let side = BoundarySide::from_name(toks[2])
                    .ok_or_else(|| perr(line, format!("unknown boundary side `{}`", toks[2])))?;
                boundary.push((v, side, line));
            }
        }
    }

    let (lower, lline) = lower.ok_or_else(|| perr(0, "missing `lower` in [parameter_box]"))?;
    let (upper, _) = upper.ok_or_else(|| perr(0, "missing `upper` in [parameter_box]"))?;
    let parameter_box = ParameterBox::new(lower, upper).map_err(|e| perr(lline, e.to_string()))?;
    let dims = parameter_box.dims();
    let reference_parameter = match reference {
        Some((r, line)) => {
            if r.len() != dims {
                return Err(perr(line, format!("reference has {} entries, expected {dims}", r.len())));
            }
            if !parameter_box.contains(&r) {
                return Err(perr(line, "reference parameter outside the box"));
            }
            r
        }
        None => parameter_box.midpoint(),
    };
    if vertices.is_empty() {
        return Err(perr(0, "no vertices"));
    }
    let scale = vertices
        .iter()
        .flat_map(|v| v.iter())
        .fold(0.0f64, |m, x| m.max(x.abs()))
        .max(1.0);

    let mut vfuncs: Vec<VertexFunction> = vertices
        .iter()
        .map(|v| VertexFunction::fixed(v[0], v[1], dims))
        .collect();
    let mut seen = vec![[false; 2]; vertices.len()];
    for (i, coord, offset, coeffs, line) in functions {
        if i >= vertices.len() {
            return Err(perr(line, format!("vertex {i} does not exist")));
        }
        if coeffs.len() != dims {
            return Err(perr(
                line,
                format!("{} coefficients given, parameter box has {dims} dimensions", coeffs.len()),
            ));
        }
        if seen[i][coord] {
            return Err(perr(line, format!("duplicate function for vertex {i}")));
        }
        seen[i][coord] = true;
        let at_ref = offset
            + coeffs
                .iter()
                .zip(&reference_parameter)
                .map(|(c, p)| c * p)
                .sum::<f64>();
        if (at_ref - vertices[i][coord]).abs() > 1e-9 * scale {
            return Err(perr(
                line,
                format!(
                    "function gives {at_ref} at the reference parameter, vertex has {}",
                    vertices[i][coord]
                ),
            ));
        }
        for (k, c) in coeffs.into_iter().enumerate() {
            vfuncs[i].sensitivity[k][coord] = c;
        }
    }

    let nv = vertices.len();
    let triangles = triangles
        .into_iter()
        .map(|(v, region, line)| {
            if v.iter().any(|&i| i >= nv) {
                return Err(perr(line, "triangle references a missing vertex"));
            }
            if v[0] == v[1] || v[1] == v[2] || v[0] == v[2] {
                return Err(perr(line, "triangle repeats a vertex"));
            }
            Ok(MacroTriangle { vertices: v, region })
        })
        .collect::<Result<Vec<_>>>()?;
    if triangles.is_empty() {
        return Err(perr(0, "no triangles"));
    }
    let boundary = boundary
        .into_iter()
        .map(|(v, side, line)| {
            if v.iter().any(|&i| i >= nv) {
                return Err(perr(line, "boundary edge references a missing vertex"));
            }
            Ok(BoundaryEdge { vertices: v, side })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(MacroDecomposition {
        vertices: vfuncs,
        triangles,
        boundary,
        parameter_box,
        reference_parameter,
    })
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| format!("{v}")).collect::<Vec<_>>().join(" ")
}

/// Serializes a decomposition; `parse_geometry` of the output reproduces it.
pub fn write_geometry(geo: &MacroDecomposition) -> String {
    let mut s = String::new();
    let pb = &geo.parameter_box;
    s.push_str("[parameter_box]\n");
    let _ = writeln!(s, "lower {}", join(&pb.lower));
    let _ = writeln!(s, "upper {}", join(&pb.upper));
    let _ = writeln!(s, "reference {}", join(&geo.reference_parameter));
    s.push_str("\n[vertices]\n");
    for (i, v) in geo.vertices.iter().enumerate() {
        let _ = writeln!(s, "{i} {} {}", v.reference[0], v.reference[1]);
    }
    s.push_str("\n[vertex_functions]\n");
    for (i, v) in geo.vertices.iter().enumerate() {
        for (coord, name) in ["x", "y"].iter().enumerate() {
            if v.sensitivity.iter().all(|c| c[coord] == 0.0) {
                continue;
            }
            let coeffs: Vec<f64> = v.sensitivity.iter().map(|c| c[coord]).collect();
            let offset = v.reference[coord]
                - coeffs
                    .iter()
                    .zip(&geo.reference_parameter)
                    .map(|(c, p)| c * p)
                    .sum::<f64>();
            let _ = writeln!(s, "{i} {name} {offset} {}", join(&coeffs));
        }
    }
    s.push_str("\n[triangles]\n");
    for t in &geo.triangles {
        let [a, b, c] = t.vertices;
        let _ = writeln!(s, "{a} {b} {c} {}", t.region.name());
    }
    s.push_str("\n[boundary]\n");
    for e in &geo.boundary {
        let _ = writeln!(s, "{} {} {}", e.vertices[0], e.vertices[1], e.side.name());
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::benchmark_cell;

    #[test]
    fn round_trip() {
        let g = benchmark_cell();
        let text = write_geometry(&g);
        let back = parse_geometry(&text).unwrap();
        assert_eq!(back, g);
    }

    #[test]
    fn shipped_file_matches_builtin() {
        let text = include_str!("../../../../data/benchmark.geo");
        let g = parse_geometry(text).unwrap();
        let b = benchmark_cell();
        assert_eq!(g.triangles, b.triangles);
        assert_eq!(g.boundary, b.boundary);
        assert_eq!(g.parameter_box, b.parameter_box);
        for (u, v) in g.vertices.iter().zip(&b.vertices) {
            for k in 0..2 {
                assert!((u.reference[k] - v.reference[k]).abs() < 1e-15);
                for c in 0..3 {
                    assert!((u.sensitivity[c][k] - v.sensitivity[c][k]).abs() < 1e-18);
                }
            }
        }
    }

    #[test]
    fn errors_carry_line_numbers() {
        let text = "[parameter_box]\nlower 0\nupper 1\n[vertices]\n0 0 0\n1 1 zero\n";
        match parse_geometry(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 6),
            other => panic!("unexpected {other:?}"),
        }
        let text = "[parameter_box]\nlower 0\nupper 1\n[vertices]\n0 0 0\n[vertex_functions]\n0 x 0.5 1\n";
        match parse_geometry(text) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 7),
            other => panic!("unexpected {other:?}"),
        }
        assert!(matches!(
            parse_geometry("[weird]\n"),
            Err(Error::Parse { line: 1, .. })
        ));
    }
}
