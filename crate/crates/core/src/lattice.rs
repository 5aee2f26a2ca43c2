//! Finite square and hexagonal lattice domains with pendant boundary vertices.
//!
//! Square vertices are `(i, j)` with the interior `1..=m x 1..=n` (`j = 1` is the bottom row).
//! Hexagonal vertices are `(n1, n2, s)` at `n1 v1 + n2 v2 + p_s` with `v1 = (3/2, sqrt3/2)`,
//! `v2 = (0, sqrt3)`, `p1 = (1/2, -sqrt3/2)` and `p2 = (1, 0)`.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type VertexId = usize;
pub type EdgeId = usize;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Coord {
    Square { i: i64, j: i64 },
    Hex { n1: i64, n2: i64, s: u8 },
}

impl fmt::Display for Coord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Coord::Square { i, j } => write!(f, "({i},{j})"),
            Coord::Hex { n1, n2, s } => write!(f, "({n1},{n2};{s})"),
        }
    }
}

impl Coord {
    pub fn position(&self) -> (f64, f64) {
        let r3 = 3f64.sqrt();
        match *self {
            Coord::Square { i, j } => (i as f64, j as f64),
            Coord::Hex { n1, n2, s } => {
                let (px, py) = if s == 1 { (0.5, -0.5 * r3) } else { (1.0, 0.0) };
                (1.5 * n1 as f64 + px, 0.5 * r3 * n1 as f64 + r3 * n2 as f64 + py)
            }
        }
    }

    /// Parse `[i, j]` or `[n1, n2, s]`.
    pub fn from_slice(xs: &[i64]) -> Result<Self> {
        match xs {
            [i, j] => Ok(Coord::Square { i: *i, j: *j }),
            [n1, n2, s] if *s == 1 || *s == 2 => Ok(Coord::Hex { n1: *n1, n2: *n2, s: *s as u8 }),
            _ => Err(Error::Validation(format!("bad vertex coordinate {xs:?}"))),
        }
    }

    pub fn to_vec(&self) -> Vec<i64> {
        match *self {
            Coord::Square { i, j } => vec![i, j],
            Coord::Hex { n1, n2, s } => vec![n1, n2, s as i64],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LatticeKind {
    Square,
    Hex,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    Top,
    Left,
    Bottom,
    Right,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Family {
    A,
    B,
}

/// Boundary vertices grouped by side, each list in its side order.
#[derive(Clone, Debug, Default)]
pub struct BoundaryPartition {
    pub top: Vec<VertexId>,
    pub left: Vec<VertexId>,
    pub bottom: Vec<VertexId>,
    pub right: Vec<VertexId>,
}

#[derive(Clone, Debug)]
pub struct Domain {
    pub kind: LatticeKind,
    /// `(m, n)` for the square, `(N, N)` for the hexagonal patch.
    pub dims: (usize, usize),
    coords: Vec<Coord>,
    index: HashMap<Coord, VertexId>,
    edges: Vec<(VertexId, VertexId)>,
    adjacency: Vec<Vec<(VertexId, EdgeId)>>,
    boundary: Vec<VertexId>,
    interior: Vec<VertexId>,
    is_boundary: Vec<bool>,
    sides: BoundaryPartition,
}

/// Vertices along one level line, in walking order.
#[derive(Clone, Debug, PartialEq)]
pub struct DiagonalLine {
    pub family: Family,
    pub index: i64,
    pub level: i64,
    pub vertices: Vec<VertexId>,
}

impl Domain {
    fn assemble(
        kind: LatticeKind,
        dims: (usize, usize),
        coords: Vec<Coord>,
        edge_list: Vec<(Coord, Coord)>,
        side_of: impl Fn(&Coord) -> Option<Side>,
        side_key: impl Fn(&Coord) -> (i64, i64),
    ) -> Self {
        let mut coords = coords;
        coords.sort();
        coords.dedup();
        let index: HashMap<Coord, VertexId> = coords.iter().enumerate().map(|(k, c)| (*c, k)).collect();
        let mut edges: Vec<(VertexId, VertexId)> = edge_list
            .iter()
            .map(|(a, b)| {
                let (x, y) = (index[a], index[b]);
                (x.min(y), x.max(y))
            })
            .collect();
        edges.sort();
        edges.dedup();
        let mut adjacency = vec![Vec::new(); coords.len()];
        for (e, &(a, b)) in edges.iter().enumerate() {
            adjacency[a].push((b, e));
            adjacency[b].push((a, e));
        }
        let mut sides = BoundaryPartition::default();
        let mut is_boundary = vec![false; coords.len()];
        for (v, c) in coords.iter().enumerate() {
            if let Some(side) = side_of(c) {
                is_boundary[v] = true;
                match side {
                    Side::Top => sides.top.push(v),
                    Side::Left => sides.left.push(v),
                    Side::Bottom => sides.bottom.push(v),
                    Side::Right => sides.right.push(v),
                }
            }
        }
        for list in [&mut sides.top, &mut sides.left, &mut sides.bottom, &mut sides.right] {
            list.sort_by_key(|v| side_key(&coords[*v]));
        }
        let boundary: Vec<VertexId> =
            sides.top.iter().chain(&sides.left).chain(&sides.bottom).chain(&sides.right).copied().collect();
        let interior = (0..coords.len()).filter(|v| !is_boundary[*v]).collect();
        Domain { kind, dims, coords, index, edges, adjacency, boundary, interior, is_boundary, sides }
    }

    pub fn vertex_count(&self) -> usize {
        self.coords.len()
    }
    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }
    pub fn coord(&self, v: VertexId) -> Coord {
        self.coords[v]
    }
    pub fn vertex(&self, c: &Coord) -> Option<VertexId> {
        self.index.get(c).copied()
    }
    pub fn edge(&self, e: EdgeId) -> (VertexId, VertexId) {
        self.edges[e]
    }
    pub fn edges(&self) -> &[(VertexId, VertexId)] {
        &self.edges
    }
    pub fn neighbors(&self, v: VertexId) -> &[(VertexId, EdgeId)] {
        &self.adjacency[v]
    }
    pub fn degree(&self, v: VertexId) -> usize {
        self.adjacency[v].len()
    }
    pub fn edge_between(&self, a: VertexId, b: VertexId) -> Option<EdgeId> {
        self.adjacency[a].iter().find(|(w, _)| *w == b).map(|(_, e)| *e)
    }
    /// Boundary vertices in the order T, L, B, R.  Rows and columns of the D-N map use this order.
    pub fn boundary(&self) -> &[VertexId] {
        &self.boundary
    }
    pub fn interior(&self) -> &[VertexId] {
        &self.interior
    }
    pub fn is_boundary(&self, v: VertexId) -> bool {
        self.is_boundary[v]
    }
    pub fn sides(&self) -> &BoundaryPartition {
        &self.sides
    }
    pub fn side_of(&self, v: VertexId) -> Option<Side> {
        let s = &self.sides;
        if s.top.contains(&v) {
            Some(Side::Top)
        } else if s.left.contains(&v) {
            Some(Side::Left)
        } else if s.bottom.contains(&v) {
            Some(Side::Bottom)
        } else if s.right.contains(&v) {
            Some(Side::Right)
        } else {
            None
        }
    }
    /// Position of `v` inside [`Domain::boundary`].
    pub fn boundary_slot(&self, v: VertexId) -> Option<usize> {
        self.boundary.iter().position(|b| *b == v)
    }
    /// The unique interior neighbour of a pendant and the connecting edge.
    pub fn pendant_link(&self, b: VertexId) -> (VertexId, EdgeId) {
        debug_assert!(self.is_boundary[b]);
        self.adjacency[b][0]
    }

    /// Level function: `i + j` on the square, `3 (n1 + n2) -/+ 1` on the hexagonal lattice.
    pub fn level(&self, v: VertexId) -> i64 {
        match self.coords[v] {
            Coord::Square { i, j } => i + j,
            Coord::Hex { n1, n2, s } => 3 * (n1 + n2) + if s == 1 { -1 } else { 1 },
        }
    }

    /// Hexagonal column level: twice the horizontal position.
    pub fn column_level(&self, v: VertexId) -> i64 {
        match self.coords[v] {
            Coord::Square { i, .. } => i,
            Coord::Hex { n1, s, .. } => 3 * n1 + s as i64,
        }
    }

    fn at(&self, c: Coord) -> Option<VertexId> {
        self.index.get(&c).copied()
    }
}

/// `m x n` interior vertices with one pendant at the end of every row and column.
pub fn build_square(m: usize, n: usize) -> Result<Domain> {
    if m < 1 || n < 1 {
        return Err(Error::Validation(format!("square domain needs m, n >= 1 (got {m} x {n})")));
    }
    let (mi, ni) = (m as i64, n as i64);
    let sq = |i, j| Coord::Square { i, j };
    let mut coords = Vec::new();
    for i in 0..=mi + 1 {
        for j in 0..=ni + 1 {
            let inside = (1..=mi).contains(&i) && (1..=ni).contains(&j);
            let side = ((1..=mi).contains(&i) && (j == 0 || j == ni + 1)) || ((1..=ni).contains(&j) && (i == 0 || i == mi + 1));
            if inside || side {
                coords.push(sq(i, j));
            }
        }
    }
    let mut edges = Vec::new();
    for j in 1..=ni {
        for i in 0..=mi {
            edges.push((sq(i, j), sq(i + 1, j)));
        }
    }
    for i in 1..=mi {
        for j in 0..=ni {
            edges.push((sq(i, j), sq(i, j + 1)));
        }
    }
    let side_of = move |c: &Coord| match *c {
        Coord::Square { j, .. } if j == ni + 1 => Some(Side::Top),
        Coord::Square { i: 0, .. } => Some(Side::Left),
        Coord::Square { j: 0, .. } => Some(Side::Bottom),
        Coord::Square { i, .. } if i == mi + 1 => Some(Side::Right),
        _ => None,
    };
    let side_key = |c: &Coord| match *c {
        Coord::Square { i, j } => (i, j),
        _ => unreachable!(),
    };
    Ok(Domain::assemble(LatticeKind::Square, (m, n), coords, edges, side_of, side_key))
}

fn hex_neighbors(c: Coord) -> [Coord; 3] {
    match c {
        Coord::Hex { n1, n2, s: 1 } => [
            Coord::Hex { n1, n2, s: 2 },
            Coord::Hex { n1: n1 - 1, n2, s: 2 },
            Coord::Hex { n1, n2: n2 - 1, s: 2 },
        ],
        Coord::Hex { n1, n2, .. } => [
            Coord::Hex { n1, n2, s: 1 },
            Coord::Hex { n1: n1 + 1, n2, s: 1 },
            Coord::Hex { n1, n2: n2 + 1, s: 1 },
        ],
        _ => unreachable!(),
    }
}

/// Lattice vertex at a planar point, if there is one.
fn hex_at_point(x: f64, y: f64) -> Option<Coord> {
    let r3 = 3f64.sqrt();
    for (s, px, py) in [(1u8, 0.5, -0.5 * r3), (2u8, 1.0, 0.0)] {
        let a = (x - px) / 1.5;
        let b = (y - py - 0.5 * r3 * a) / r3;
        let (ai, bi) = (a.round(), b.round());
        if (a - ai).abs() < 1e-9 && (b - bi).abs() < 1e-9 {
            return Some(Coord::Hex { n1: ai as i64, n2: bi as i64, s });
        }
    }
    None
}

/// `(N + 1)^2` hexagonal cells centred at `a v1 + b v2`, `0 <= a, b <= N`, with a pendant on every
/// perimeter vertex of degree two.
pub fn build_hex(nn: usize) -> Result<Domain> {
    if nn < 1 {
        return Err(Error::Validation("hexagonal domain needs N >= 1".into()));
    }
    let r3 = 3f64.sqrt();
    let mut inner = Vec::new();
    for a in 0..=nn as i64 {
        for b in 0..=nn as i64 {
            let (cx, cy) = (1.5 * a as f64, 0.5 * r3 * a as f64 + r3 * b as f64);
            for k in 0..6 {
                let t = std::f64::consts::PI / 3.0 * k as f64;
                inner.push(hex_at_point(cx + t.cos(), cy + t.sin()).expect("cell corner is a lattice vertex"));
            }
        }
    }
    inner.sort();
    inner.dedup();
    let inside: std::collections::HashSet<Coord> = inner.iter().copied().collect();
    let mut coords = inner.clone();
    let mut edges = Vec::new();
    let mut pendants = Vec::new();
    for c in &inner {
        let nb = hex_neighbors(*c);
        let present: Vec<Coord> = nb.iter().filter(|x| inside.contains(x)).copied().collect();
        for x in &present {
            edges.push((*c, *x));
        }
        if present.len() == 2 {
            let missing = nb.iter().find(|x| !inside.contains(x)).copied().unwrap();
            pendants.push(missing);
            edges.push((*c, missing));
        }
    }
    coords.extend(pendants.iter().copied());
    let ni = nn as i64;
    let pend: std::collections::HashSet<Coord> = pendants.into_iter().collect();
    let side_of = move |c: &Coord| {
        if !pend.contains(c) {
            return None;
        }
        match *c {
            Coord::Hex { n2, s: 1, .. } if n2 == ni + 2 => Some(Side::Top),
            Coord::Hex { n1: -2, s: 2, .. } | Coord::Hex { n1: -1, n2: 0, s: 1 } => Some(Side::Left),
            Coord::Hex { n2: -1, s: 2, .. } => Some(Side::Bottom),
            _ => Some(Side::Right),
        }
    };
    let side_key = |c: &Coord| {
        let (x, y) = c.position();
        ((y * 1e6).round() as i64, (x * 1e6).round() as i64)
    };
    Ok(Domain::assemble(LatticeKind::Hex, (nn, nn), coords, edges, side_of, side_key))
}

/// `(T, L, B, R)` boundary sides.
pub fn boundary_partition(domain: &Domain) -> BoundaryPartition {
    domain.sides.clone()
}

/// Level of the line `family_index`.
///
/// Square: `A_k` has level `k + n + 1` (`0 <= k <= m`), `B_l` has level `l` (`1 <= l <= n + 1`).
/// Hexagonal: `A_k` has level `3N + 2 + 3k`; `0 <= k <= N` enter from the top and
/// `-(N + 1) <= k < 0` from the left.  `B_k` (`-1 <= k <= N`) is the vertical column of
/// sublattice-2 vertices with `n1 = k`.
pub fn line_level(domain: &Domain, family: Family, index: i64) -> Result<i64> {
    let (m, n) = (domain.dims.0 as i64, domain.dims.1 as i64);
    let bad = || Error::Validation(format!("no {family:?} line with index {index} on this domain"));
    match (domain.kind, family) {
        (LatticeKind::Square, Family::A) if (0..=m).contains(&index) => Ok(index + n + 1),
        (LatticeKind::Square, Family::B) if (1..=n + 1).contains(&index) => Ok(index),
        (LatticeKind::Hex, Family::A) if (-(n + 1)..=n).contains(&index) => Ok(3 * n + 2 + 3 * index),
        (LatticeKind::Hex, Family::B) if (-1..=n).contains(&index) => Ok(3 * index + 2),
        _ => Err(bad()),
    }
}

pub fn diagonal_line(domain: &Domain, family: Family, index: i64) -> Result<DiagonalLine> {
    let level = line_level(domain, family, index)?;
    let n = domain.dims.1 as i64;
    let mut vertices: Vec<VertexId> = Vec::new();
    match (domain.kind, family) {
        (LatticeKind::Square, _) => {
            vertices = (0..domain.vertex_count()).filter(|v| domain.level(*v) == level).collect();
            vertices.sort_by_key(|v| domain.coord(*v));
        }
        (LatticeKind::Hex, Family::A) => {
            if index < 0 {
                let l = index + n + 1;
                vertices.push(domain.at(Coord::Hex { n1: -2, n2: l + 1, s: 2 }).ok_or_else(|| Error::Validation("missing left pendant".into()))?);
            }
            let mut on: Vec<VertexId> = (0..domain.vertex_count())
                .filter(|v| matches!(domain.coord(*v), Coord::Hex { s: 1, .. }) && domain.level(*v) == level)
                .collect();
            on.sort_by_key(|v| domain.coord(*v));
            vertices.extend(on);
        }
        (LatticeKind::Hex, Family::B) => {
            if index < 0 {
                vertices.push(domain.at(Coord::Hex { n1: -1, n2: 0, s: 1 }).expect("corner pendant"));
            }
            let mut on: Vec<VertexId> = (0..domain.vertex_count())
                .filter(|v| matches!(domain.coord(*v), Coord::Hex { n1, s: 2, .. } if n1 == index))
                .collect();
            on.sort_by_key(|v| domain.coord(*v));
            vertices.extend(on);
            if let Some(top) = domain.at(Coord::Hex { n1: index, n2: n + 2, s: 1 }) {
                vertices.push(top);
            }
        }
    }
    Ok(DiagonalLine { family, index, level, vertices })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_counts() {
        for (m, n) in [(1, 1), (2, 3), (5, 4)] {
            let d = build_square(m, n).unwrap();
            assert_eq!(d.edge_count(), 2 * m * n + m + n);
            assert_eq!(d.interior().len(), m * n);
            assert_eq!(d.boundary().len(), 2 * (m + n));
            let s = d.sides();
            assert_eq!((s.top.len(), s.left.len(), s.bottom.len(), s.right.len()), (m, n, m, n));
        }
    }

    #[test]
    fn square_lines() {
        let d = build_square(4, 4).unwrap();
        let l = diagonal_line(&d, Family::A, 1).unwrap();
        let c: Vec<Coord> = l.vertices.iter().map(|v| d.coord(*v)).collect();
        let want: Vec<Coord> = [(1, 5), (2, 4), (3, 3), (4, 2), (5, 1)].iter().map(|&(i, j)| Coord::Square { i, j }).collect();
        assert_eq!(c, want);
        assert_eq!(diagonal_line(&d, Family::A, 0).unwrap().vertices, diagonal_line(&d, Family::B, 5).unwrap().vertices);
    }

    #[test]
    fn hex_counts() {
        for (nn, iv, e) in [(1, 16, 29), (2, 30, 52), (3, 48, 81)] {
            let d = build_hex(nn).unwrap();
            assert_eq!(d.interior().len(), iv);
            assert_eq!(d.edge_count(), e);
            assert_eq!(d.boundary().len(), 4 * nn + 6);
            let s = d.sides();
            assert_eq!((s.top.len(), s.left.len(), s.bottom.len(), s.right.len()), (nn + 1, nn + 2, nn + 1, nn + 2));
            for v in d.interior() {
                assert_eq!(d.degree(*v), 3);
            }
            for b in d.boundary() {
                assert_eq!(d.degree(*b), 1);
            }
        }
    }

    #[test]
    fn hex_edges_have_unit_length() {
        let d = build_hex(2).unwrap();
        for &(a, b) in d.edges() {
            let (p, q) = (d.coord(a).position(), d.coord(b).position());
            assert!(((p.0 - q.0).hypot(p.1 - q.1) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn hex_lines_alternate_through_valleys() {
        let d = build_hex(2).unwrap();
        for k in -3..=2 {
            let l = diagonal_line(&d, Family::A, k).unwrap();
            for w in l.vertices.windows(2) {
                let direct = d.edge_between(w[0], w[1]).is_some();
                let via = d.neighbors(w[0]).iter().any(|(x, _)| d.edge_between(*x, w[1]).is_some());
                assert!(direct || via, "line {k} breaks between {} and {}", d.coord(w[0]), d.coord(w[1]));
            }
        }
    }
}
