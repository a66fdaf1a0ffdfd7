//! Marching-cubes case table, generated from per-face contour segments.
//!
//! Each cube face contributes segments between its sign-change edges; on a
//! face with two diagonal inside corners the inside corners are cut off
//! separately. The rule depends only on the face's own corners, so
//! neighboring cubes agree on shared faces and the surface is watertight.
//! Segments chain into closed loops that are fan-triangulated with
//! triangles facing the positive (outside) side.

use std::sync::OnceLock;

/// Corner offsets of the unit cube.
pub const CORNERS: [[i32; 3]; 8] = [
    [0, 0, 0],
    [1, 0, 0],
    [1, 1, 0],
    [0, 1, 0],
    [0, 0, 1],
    [1, 0, 1],
    [1, 1, 1],
    [0, 1, 1],
];

/// Cube edges as corner pairs.
pub const EDGES: [(usize, usize); 12] = [
    (0, 1),
    (1, 2),
    (2, 3),
    (3, 0),
    (4, 5),
    (5, 6),
    (6, 7),
    (7, 4),
    (0, 4),
    (1, 5),
    (2, 6),
    (3, 7),
];

/// Faces as corner cycles, counter-clockwise seen from outside the cube.
pub const FACES: [[usize; 4]; 6] = [
    [0, 3, 2, 1],
    [4, 5, 6, 7],
    [0, 1, 5, 4],
    [3, 7, 6, 2],
    [0, 4, 7, 3],
    [1, 2, 6, 5],
];

fn edge_between(a: usize, b: usize) -> usize {
    EDGES
        .iter()
        .position(|&(p, q)| (p == a && q == b) || (p == b && q == a))
        .expect("face corners are adjacent")
}

/// Triangles (as edge-index triples) for one of the 256 corner-sign cases.
/// Bit `i` of the case is set when corner `i` is inside (negative).
fn triangulate_case(case: usize) -> Vec<[u8; 3]> {
    let inside = |c: usize| case >> c & 1 == 1;
    let mut next = [usize::MAX; 12];
    for face in FACES {
        for i in 0..4 {
            let prev = face[(i + 3) % 4];
            if !inside(face[i]) || inside(prev) {
                continue;
            }
            let entry = edge_between(prev, face[i]);
            let mut j = i;
            while inside(face[(j + 1) % 4]) {
                j = (j + 1) % 4;
            }
            let exit = edge_between(face[j], face[(j + 1) % 4]);
            next[exit] = entry;
        }
    }
    let mut seen = [false; 12];
    let mut tris = Vec::new();
    for start in 0..12 {
        if next[start] == usize::MAX || seen[start] {
            continue;
        }
        let mut cycle = vec![start];
        seen[start] = true;
        let mut e = next[start];
        while e != start {
            seen[e] = true;
            cycle.push(e);
            e = next[e];
        }
        for i in 1..cycle.len() - 1 {
            tris.push([cycle[0] as u8, cycle[i + 1] as u8, cycle[i] as u8]);
        }
    }
    tris
}

/// The full 256-entry table.
pub fn case_table() -> &'static [Vec<[u8; 3]>; 256] {
    static TABLE: OnceLock<[Vec<[u8; 3]>; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(triangulate_case))
}
