//! Uniform refinement of the macro-decomposition into a conforming P1 mesh.

use std::collections::HashMap;

use crate::geometry::{BoundarySide, MacroDecomposition, Region};

/// Fine triangulation of the reference domain nested in the macro-triangles.
#[derive(Clone, Debug)]
pub struct Triangulation {
    pub level: u32,
    pub nodes: Vec<[f64; 2]>,
    pub triangles: Vec<[usize; 3]>,
    /// Macro-triangle containing each fine triangle.
    pub macro_index: Vec<usize>,
    pub region: Vec<Region>,
    pub area: Vec<f64>,
    /// Reference gradients of the three local hat functions.
    pub gradients: Vec<[[f64; 2]; 3]>,
    pub barycenters: Vec<[f64; 2]>,
    /// Fine triangles in iron, ascending. Nonlinearity fields are indexed by
    /// position in this list.
    pub iron: Vec<usize>,
    /// Bitmask of boundary sides (see [`BoundarySide::bit`]) per node.
    pub node_sides: Vec<u8>,
    /// Nodes on each boundary side with their arc-length coordinate measured
    /// from the first listed vertex of the side, sorted by that coordinate.
    pub side_nodes: [Vec<(usize, f64)>; 4],
}

#[derive(Clone, Copy, PartialEq, Eq, Hash)]
enum NodeKey {
    Vertex(usize),
    Edge(usize, usize, usize),
    Interior(usize, usize, usize),
}

fn side_slot(side: BoundarySide) -> usize {
    match side {
        BoundarySide::AB => 0,
        BoundarySide::BC => 1,
        BoundarySide::CD => 2,
        BoundarySide::DA => 3,
    }
}

impl Triangulation {
    pub fn len(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triangles.is_empty()
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn side_nodes(&self, side: BoundarySide) -> &[(usize, f64)] {
        &self.side_nodes[side_slot(side)]
    }

    pub fn on_side(&self, node: usize, side: BoundarySide) -> bool {
        self.node_sides[node] & side.bit() != 0
    }

    /// Fine triangles grouped by macro-triangle.
    pub fn triangles_by_macro(&self, macro_count: usize) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); macro_count];
        for (t, &d) in self.macro_index.iter().enumerate() {
            out[d].push(t);
        }
        out
    }
}

fn edge_key(a: usize, b: usize, k_from_a: usize, n: usize) -> NodeKey {
    if k_from_a == 0 {
        NodeKey::Vertex(a)
    } else if k_from_a == n {
        NodeKey::Vertex(b)
    } else if a < b {
        NodeKey::Edge(a, b, k_from_a)
    } else {
        NodeKey::Edge(b, a, n - k_from_a)
    }
}

/// Splits each macro-triangle into `4^level` congruent sub-triangles. Nodes on
/// shared macro-edges are merged, vertices with equal reference position are
/// identified.
pub fn generate_mesh(decomp: &MacroDecomposition, level: u32) -> Triangulation {
    let n = 1usize << level;
    let canon = decomp.canonical_vertices();
    let mut keys: HashMap<NodeKey, usize> = HashMap::new();
    let mut nodes: Vec<[f64; 2]> = Vec::new();
    let mut triangles = Vec::new();
    let mut macro_index = Vec::new();
    let mut region = Vec::new();

    for (d, mt) in decomp.triangles.iter().enumerate() {
        let [a, b, c] = mt.vertices.map(|v| canon[v]);
        let [pa, pb, pc] = [a, b, c].map(|v| decomp.vertices[v].reference);
        // lattice point (i, j): pa + i/n (pb - pa) + j/n (pc - pa)
        let mut local = vec![usize::MAX; (n + 1) * (n + 1)];
        for j in 0..=n {
            for i in 0..=n - j {
                let key = if j == 0 {
                    edge_key(a, b, i, n)
                } else if i == 0 {
                    edge_key(a, c, j, n)
                } else if i + j == n {
                    edge_key(b, c, j, n)
                } else {
                    NodeKey::Interior(d, i, j)
                };
                let id = *keys.entry(key).or_insert_with(|| {
                    let (s, t) = (i as f64 / n as f64, j as f64 / n as f64);
                    nodes.push([
                        pa[0] + s * (pb[0] - pa[0]) + t * (pc[0] - pa[0]),
                        pa[1] + s * (pb[1] - pa[1]) + t * (pc[1] - pa[1]),
                    ]);
                    nodes.len() - 1
                });
                local[j * (n + 1) + i] = id;
            }
        }
        let at = |i: usize, j: usize| local[j * (n + 1) + i];
        for j in 0..n {
            for i in 0..n - j {
                triangles.push([at(i, j), at(i + 1, j), at(i, j + 1)]);
                if i + j + 1 < n {
                    triangles.push([at(i + 1, j), at(i + 1, j + 1), at(i, j + 1)]);
                }
            }
        }
        let count = n * n;
        macro_index.extend(std::iter::repeat_n(d, count));
        region.extend(std::iter::repeat_n(mt.region, count));
    }

    let mut area = Vec::with_capacity(triangles.len());
    let mut gradients = Vec::with_capacity(triangles.len());
    let mut barycenters = Vec::with_capacity(triangles.len());
    for tri in &triangles {
        let [p0, p1, p2] = tri.map(|v| nodes[v]);
        let (e1, e2) = ([p1[0] - p0[0], p1[1] - p0[1]], [p2[0] - p0[0], p2[1] - p0[1]]);
        let det = e1[0] * e2[1] - e2[0] * e1[1];
        area.push(0.5 * det.abs());
        // gradients of barycentric coordinates
        let g1 = [e2[1] / det, -e2[0] / det];
        let g2 = [-e1[1] / det, e1[0] / det];
        let g0 = [-g1[0] - g2[0], -g1[1] - g2[1]];
        gradients.push([g0, g1, g2]);
        barycenters.push([
            (p0[0] + p1[0] + p2[0]) / 3.0,
            (p0[1] + p1[1] + p2[1]) / 3.0,
        ]);
    }

    let mut node_sides = vec![0u8; nodes.len()];
    let mut side_nodes: [Vec<(usize, f64)>; 4] = Default::default();
    for side in BoundarySide::ALL {
        let mut offset = 0.0;
        let list = &mut side_nodes[side_slot(side)];
        for e in decomp.boundary.iter().filter(|e| e.side == side) {
            let [a, b] = e.vertices.map(|v| canon[v]);
            let (pa, pb) = (decomp.vertices[a].reference, decomp.vertices[b].reference);
            let len = (pb[0] - pa[0]).hypot(pb[1] - pa[1]);
            for k in 0..=n {
                if let Some(&id) = keys.get(&edge_key(a, b, k, n)) {
                    node_sides[id] |= side.bit();
                    list.push((id, offset + len * k as f64 / n as f64));
                }
            }
            offset += len;
        }
        list.sort_by(|x, y| x.1.total_cmp(&y.1));
        list.dedup_by_key(|x| x.0);
    }

    let iron = (0..triangles.len()).filter(|&t| region[t].is_iron()).collect();
    Triangulation {
        level,
        nodes,
        triangles,
        macro_index,
        region,
        area,
        gradients,
        barycenters,
        iron,
        node_sides,
        side_nodes,
    }
}
