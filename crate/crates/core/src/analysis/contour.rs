//! Iso-contours of sampled scalar fields by marching squares.

use std::collections::HashMap;
use std::io::Write;
use std::path::Path;

use crate::analysis::jacobian::{JacobianField, Lattice};
use crate::error::{Error, Result};
use crate::vec2::Vec2;

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub points: Vec<Vec2>,
    /// The last point connects back to the first.
    pub closed: bool,
}

impl Polyline {
    pub fn length(&self) -> f64 {
        let mut l: f64 = self.points.windows(2).map(|w| dist(w[0], w[1])).sum();
        if self.closed && self.points.len() > 1 {
            l += dist(self.points[self.points.len() - 1], self.points[0]);
        }
        l
    }
}

fn dist(a: Vec2, b: Vec2) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

/// Zero-Jacobian (rainbow) lines in the impact-parameter plane.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RainbowLineSet {
    pub lines: Vec<Polyline>,
}

impl RainbowLineSet {
    pub fn n_closed(&self) -> usize {
        self.lines.iter().filter(|l| l.closed).count()
    }

    /// CSV with columns `line_id,x_nm,y_nm`; closed lines repeat their first
    /// point at the end.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "line_id,x_nm,y_nm").map_err(|e| Error::io(path, e))?;
        for (id, line) in self.lines.iter().enumerate() {
            let extra = line.closed.then(|| line.points[0]);
            for p in line.points.iter().chain(extra.iter()) {
                writeln!(out, "{id},{:.9e},{:.9e}", p[0], p[1]).map_err(|e| Error::io(path, e))?;
            }
        }
        std::fs::write(path, out).map_err(|e| Error::io(path, e))
    }
}

/// Cell edge identified by its lower-left node and orientation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
enum Edge {
    /// From node (i, j) to (i + 1, j).
    H(usize, usize),
    /// From node (i, j) to (i, j + 1).
    V(usize, usize),
}

/// Marching-squares contours of `values` (row-major on `lattice`) at `iso`.
/// Nodes equal to `iso` count as above; cells touching a NaN are skipped.
pub fn iso_contours(lattice: &Lattice, values: &[f64], iso: f64) -> Vec<Polyline> {
    let (nx, ny) = (lattice.nx, lattice.ny);
    let v = |i: usize, j: usize| values[j * nx + i];
    let point = |e: Edge| -> Vec2 {
        let (a, b, pa, pb) = match e {
            Edge::H(i, j) => (v(i, j), v(i + 1, j), lattice.node(i, j), lattice.node(i + 1, j)),
            Edge::V(i, j) => (v(i, j), v(i, j + 1), lattice.node(i, j), lattice.node(i, j + 1)),
        };
        let t = ((iso - a) / (b - a)).clamp(0.0, 1.0);
        [pa[0] + t * (pb[0] - pa[0]), pa[1] + t * (pb[1] - pa[1])]
    };
    let mut segments: Vec<(Edge, Edge)> = Vec::new();
    for j in 0..ny.saturating_sub(1) {
        for i in 0..nx.saturating_sub(1) {
            let c = [v(i, j), v(i + 1, j), v(i + 1, j + 1), v(i, j + 1)];
            if c.iter().any(|x| x.is_nan()) {
                continue;
            }
            let case = c
                .iter()
                .enumerate()
                .fold(0u8, |acc, (k, &x)| acc | (u8::from(x >= iso) << k));
            let (bottom, right, top, left) = (Edge::H(i, j), Edge::V(i + 1, j), Edge::H(i, j + 1), Edge::V(i, j));
            let center_above = c.iter().sum::<f64>() / 4.0 >= iso;
            let segs: &[(Edge, Edge)] = match case {
                0 | 15 => &[],
                1 | 14 => &[(left, bottom)],
                2 | 13 => &[(bottom, right)],
                3 | 12 => &[(left, right)],
                4 | 11 => &[(right, top)],
                6 | 9 => &[(bottom, top)],
                7 | 8 => &[(left, top)],
                // Saddles: corners 0 and 2 above (5) or 1 and 3 above (10).
                5 if center_above => &[(left, top), (bottom, right)],
                5 => &[(left, bottom), (right, top)],
                10 if center_above => &[(left, bottom), (right, top)],
                10 => &[(left, top), (bottom, right)],
                _ => unreachable!(),
            };
            segments.extend_from_slice(segs);
        }
    }
    join_segments(&segments, point)
}

fn join_segments(segments: &[(Edge, Edge)], point: impl Fn(Edge) -> Vec2) -> Vec<Polyline> {
    let mut by_edge: HashMap<Edge, Vec<usize>> = HashMap::new();
    for (k, (a, b)) in segments.iter().enumerate() {
        by_edge.entry(*a).or_default().push(k);
        by_edge.entry(*b).or_default().push(k);
    }
    let mut used = vec![false; segments.len()];
    let mut lines = Vec::new();
    let trace = |start: usize, from: Edge, used: &mut Vec<bool>| -> Polyline {
        let mut edges = vec![from];
        let mut seg = start;
        let mut at = from;
        loop {
            used[seg] = true;
            let (a, b) = segments[seg];
            let next = if a == at { b } else { a };
            edges.push(next);
            at = next;
            match by_edge[&at].iter().find(|&&s| !used[s]) {
                Some(&s) => seg = s,
                None => break,
            }
        }
        let closed = edges.len() > 2 && edges[0] == edges[edges.len() - 1];
        if closed {
            edges.pop();
        }
        Polyline {
            points: edges.into_iter().map(&point).collect(),
            closed,
        }
    };
    // Open lines start at edges touched by a single segment (the grid border).
    let mut ends: Vec<(Edge, usize)> = by_edge
        .iter()
        .filter(|(_, s)| s.len() == 1)
        .map(|(e, s)| (*e, s[0]))
        .collect();
    ends.sort_by_key(|&(_, s)| s);
    for (e, s) in ends {
        if !used[s] {
            lines.push(trace(s, e, &mut used));
        }
    }
    for s in 0..segments.len() {
        if !used[s] {
            let from = segments[s].0;
            lines.push(trace(s, from, &mut used));
        }
    }
    lines
}

/// Zero-level contours of the Jacobian.
pub fn extract_rainbow_lines(jf: &JacobianField, iso: f64) -> RainbowLineSet {
    RainbowLineSet {
        lines: iso_contours(&jf.lattice, &jf.values, iso),
    }
}
