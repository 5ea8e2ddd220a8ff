//! Zero level set of a sampled scalar field as polylines (marching squares).

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Polyline {
    pub points: Vec<[f64; 2]>,
}

const NONE: usize = usize::MAX;

/// Traces `{v = 0}` for a field sampled on an `nx` by `ny` lattice
/// (`values[j * nx + i]` at `x_i`, `y_j`, both ranges inclusive). Points with
/// `v > 0` are inside. Saddle cells are split by the cell-centre average.
/// Segments are joined into maximal polylines; closed loops repeat their
/// first point at the end.
pub fn marching_squares(values: &[f64], nx: usize, ny: usize, x_range: [f64; 2], y_range: [f64; 2]) -> Vec<Polyline> {
    assert_eq!(values.len(), nx * ny, "field size does not match the lattice");
    if nx < 2 || ny < 2 {
        return Vec::new();
    }
    let dx = (x_range[1] - x_range[0]) / (nx - 1) as f64;
    let dy = (y_range[1] - y_range[0]) / (ny - 1) as f64;
    let v = |i: usize, j: usize| values[j * nx + i];
    // Edge ids: 2 * node for the edge to the right, 2 * node + 1 for the edge upwards.
    let h = |i: usize, j: usize| 2 * (j * nx + i);
    let up = |i: usize, j: usize| 2 * (j * nx + i) + 1;
    let point = |e: usize| -> [f64; 2] {
        let node = e / 2;
        let (i, j) = (node % nx, node / nx);
        let (i2, j2) = if e.is_multiple_of(2) { (i + 1, j) } else { (i, j + 1) };
        let (a, b) = (v(i, j), v(i2, j2));
        let t = a / (a - b);
        let x = x_range[0] + dx * (i as f64 + t * (i2 - i) as f64);
        let y = y_range[0] + dy * (j as f64 + t * (j2 - j) as f64);
        [x, y]
    };

    let mut segments: Vec<[usize; 2]> = Vec::new();
    for j in 0..ny - 1 {
        for i in 0..nx - 1 {
            let corners = [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)];
            let inside = corners.map(|c| c > 0.0);
            // bottom, right, top, left
            let edges = [h(i, j), up(i + 1, j), h(i, j + 1), up(i, j)];
            let crossed: Vec<usize> = (0..4).filter(|&k| inside[k] != inside[(k + 1) % 4]).collect();
            match crossed.len() {
                2 => segments.push([edges[crossed[0]], edges[crossed[1]]]),
                4 => {
                    let centre = corners.iter().sum::<f64>() / 4.0 > 0.0;
                    if centre == inside[0] {
                        // corners 0 and 2 connect through the centre: cut off 1 and 3
                        segments.push([edges[0], edges[1]]);
                        segments.push([edges[2], edges[3]]);
                    } else {
                        segments.push([edges[3], edges[0]]);
                        segments.push([edges[1], edges[2]]);
                    }
                }
                _ => {}
            }
        }
    }

    let mut adj = vec![[NONE; 2]; 2 * nx * ny];
    for (s, seg) in segments.iter().enumerate() {
        for &e in seg {
            let slot = if adj[e][0] == NONE { 0 } else { 1 };
            adj[e][slot] = s;
        }
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    let trace = |start_seg: usize, start_edge: usize, used: &mut Vec<bool>| {
        let mut pts = vec![point(start_edge)];
        let (mut seg, mut edge) = (start_seg, start_edge);
        loop {
            used[seg] = true;
            let next_edge = if segments[seg][0] == edge { segments[seg][1] } else { segments[seg][0] };
            pts.push(point(next_edge));
            let [a, b] = adj[next_edge];
            let next = if a == seg { b } else { a };
            if next == NONE || used[next] {
                break;
            }
            seg = next;
            edge = next_edge;
        }
        Polyline { points: pts }
    };
    // Open chains start at edges touched by a single segment.
    for (s, seg) in segments.iter().enumerate() {
        if used[s] {
            continue;
        }
        for &e in seg {
            if adj[e][1] == NONE && !used[s] {
                lines.push(trace(s, e, &mut used));
            }
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            lines.push(trace(s, segments[s][0], &mut used));
        }
    }
    lines
}
