//! Magnet-in-iron cell used as the default parametrized geometry.
//!
//! Lengths are in meters, parameters in millimeters. The cell is 40 × 22 mm:
//! an iron sheet (y ≤ 20 mm) below a 2 mm air gap. A rectangular magnet of
//! width `p1` and height `p2`, whose top edge sits `p3` below the iron surface,
//! is embedded in the sheet inside two air pockets. The left side `AB` and the
//! right side `DC` are coupled anti-periodically, top and bottom are Dirichlet.

use super::{
    BoundaryEdge, BoundarySide, MacroDecomposition, MacroTriangle, ParameterBox, Region,
    VertexFunction,
};

const MM: f64 = 1e-3;

pub fn benchmark_cell() -> MacroDecomposition {
    let dims = 3;
    let fixed = |x: f64, y: f64| VertexFunction::fixed(x, y, dims);
    let moving = |x: f64, y: f64, dx: [f64; 3], dy: [f64; 3]| VertexFunction {
        reference: [x, y],
        sensitivity: (0..3).map(|k| [dx[k], dy[k]]).collect(),
    };
    let half = 0.5 * MM;
    let vertices = vec![
        fixed(0.0, 0.0),
        fixed(0.040, 0.0),
        fixed(0.040, 0.020),
        fixed(0.0, 0.020),
        fixed(0.0, 0.022),
        fixed(0.040, 0.022),
        // magnet corners: lower left, lower right, upper right, upper left
        moving(0.01075, 0.008, [-half, 0.0, 0.0], [0.0, -MM, -MM]),
        moving(0.02925, 0.008, [half, 0.0, 0.0], [0.0, -MM, -MM]),
        moving(0.02925, 0.0125, [half, 0.0, 0.0], [0.0, 0.0, -MM]),
        moving(0.01075, 0.0125, [-half, 0.0, 0.0], [0.0, 0.0, -MM]),
    ];
    let tri = |a, b, c, region| MacroTriangle {
        vertices: [a, b, c],
        region,
    };
    let triangles = vec![
        tri(0, 1, 7, Region::Iron),
        tri(0, 7, 6, Region::Iron),
        tri(2, 3, 9, Region::Iron),
        tri(2, 9, 8, Region::Iron),
        tri(1, 2, 8, Region::Air),
        tri(1, 8, 7, Region::Air),
        tri(3, 0, 6, Region::Air),
        tri(3, 6, 9, Region::Air),
        tri(6, 7, 8, Region::Magnet),
        tri(6, 8, 9, Region::Magnet),
        tri(3, 2, 5, Region::Air),
        tri(3, 5, 4, Region::Air),
    ];
    let edge = |a, b, side| BoundaryEdge {
        vertices: [a, b],
        side,
    };
    let boundary = vec![
        edge(0, 3, BoundarySide::AB),
        edge(3, 4, BoundarySide::AB),
        edge(4, 5, BoundarySide::BC),
        edge(1, 2, BoundarySide::CD),
        edge(2, 5, BoundarySide::CD),
        edge(0, 1, BoundarySide::DA),
    ];
    let parameter_box =
        ParameterBox::new(vec![18.0, 4.0, 7.0], vec![19.0, 5.0, 8.0]).expect("valid box");
    let reference_parameter = parameter_box.midpoint();
    MacroDecomposition {
        vertices,
        triangles,
        boundary,
        parameter_box,
        reference_parameter,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{build_affine_maps, validate_decomposition};

    #[test]
    fn counts_and_orientation() {
        let g = benchmark_cell();
        assert_eq!(g.len(), 12);
        assert_eq!(g.iron_triangles().len(), 4);
        assert_eq!(g.other_triangles().len(), 8);
        for d in 0..g.len() {
            assert!(g.signed_area(d, &g.reference_parameter) > 0.0, "triangle {d}");
        }
        let total: f64 = (0..g.len()).map(|d| g.signed_area(d, &g.reference_parameter)).sum();
        assert!((total - 0.040 * 0.022).abs() < 1e-15);
    }

    #[test]
    fn corners_pass_validation() {
        let g = benchmark_cell();
        let report = validate_decomposition(&g, &g.parameter_box.corners());
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn magnet_follows_parameters() {
        let g = benchmark_cell();
        let p = [18.0, 4.0, 7.0];
        let ll = g.vertex_position(6, &p);
        let ur = g.vertex_position(8, &p);
        assert!((ur[0] - ll[0] - 0.018).abs() < 1e-15);
        assert!((ur[1] - ll[1] - 0.004).abs() < 1e-15);
        assert!((0.020 - ur[1] - 0.007).abs() < 1e-15);
        // area preserved in total
        let maps = build_affine_maps(&g, &p).unwrap();
        let total: f64 = (0..g.len())
            .map(|d| maps.maps[d].det * g.signed_area(d, &g.reference_parameter))
            .sum();
        assert!((total - 0.040 * 0.022).abs() < 1e-15);
    }
}
