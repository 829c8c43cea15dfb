//! Stopping-time sparse families, sparse operators and max-flow certificates
//! of sparseness.
//!
//! Geometry is exact: cube corners and sides are integers in thirds of a
//! cell, and areas are counted in `(1/3 cell)^n` units.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{axis_indices, signed_third, DyadicCube, Shift, Window};
use crate::lorentz::{GridFunction, LorentzError};
use crate::numeric::PrefixTable;
use crate::operators::dyadic_average;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SparseError {
    #[error("stopping threshold must exceed 1, got {0}")]
    BadThreshold(f64),
    #[error("sparsity parameter must lie in (0, 1], got {0}")]
    BadEta(f64),
    #[error("no input functions")]
    Empty,
    #[error("family needs {atoms} atoms, above the limit of {limit}")]
    TooLarge { atoms: usize, limit: usize },
    #[error("cube dimension {got} does not match the window dimension {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error(transparent)]
    Lorentz(#[from] LorentzError),
}

/// Part of a cube's reserved set: the box `[lo, hi)` in absolute thirds of a
/// cell, or the fraction `share` of it when an atom is split between cubes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Piece {
    pub lo: Vec<i64>,
    pub hi: Vec<i64>,
    pub share: f64,
}

impl Piece {
    /// Area in `(1/3 cell)^n` units, counting the share.
    pub fn area(&self) -> f64 {
        self.share * self.lo.iter().zip(&self.hi).map(|(a, b)| (b - a) as f64).product::<f64>()
    }
}

/// A family of cubes from one shifted dyadic grid, optionally carrying
/// disjoint reserved sets `E_Q` (one list of pieces per cube, same order).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseFamily {
    pub window: Window,
    pub shift: Shift,
    pub eta: f64,
    pub cubes: Vec<DyadicCube>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub assignment: Option<Vec<Vec<Piece>>>,
}

impl SparseFamily {
    pub fn new(window: Window, shift: Shift, eta: f64, cubes: Vec<DyadicCube>) -> Self {
        Self { window, shift, eta, cubes, assignment: None }
    }

    pub fn len(&self) -> usize {
        self.cubes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cubes.is_empty()
    }

    /// Checks that the stored assignment is a valid `eta`-sparse witness:
    /// pieces inside their cube, each `E_Q` of area at least `eta |Q|`, and
    /// no region of space handed out more than once in total.
    pub fn assignment_is_valid(&self, eta: f64) -> bool {
        let Some(assign) = &self.assignment else {
            return false;
        };
        if assign.len() != self.cubes.len() {
            return false;
        }
        let tol = 1e-9;
        for (cube, pieces) in self.cubes.iter().zip(assign) {
            let (lo, side) = cube_box(cube, &self.window);
            let inside = pieces.iter().all(|p| {
                p.share >= 0.0
                    && p.share <= 1.0 + tol
                    && (0..lo.len()).all(|a| lo[a] <= p.lo[a] && p.lo[a] < p.hi[a] && p.hi[a] <= lo[a] + side)
            });
            let area: f64 = pieces.iter().map(Piece::area).sum();
            if !inside || area < eta * volume(side, lo.len()) * (1.0 - tol) {
                return false;
            }
        }
        // disjointness: refine every piece to a common atom grid and add shares
        let all: Vec<&Piece> = assign.iter().flatten().collect();
        let dim = self.window.dim();
        let axes: Vec<Vec<i64>> = (0..dim)
            .map(|a| {
                let mut v: Vec<i64> = all.iter().flat_map(|p| [p.lo[a], p.hi[a]]).collect();
                v.sort_unstable();
                v.dedup();
                v
            })
            .collect();
        let nx = axes[0].len().saturating_sub(1);
        let ny = if dim == 2 { axes[1].len().saturating_sub(1) } else { 1 };
        let mut load = vec![0.0f64; nx * ny];
        for p in all {
            let r0 = span(&axes[0], p.lo[0], p.hi[0]);
            let r1 = if dim == 2 { span(&axes[1], p.lo[1], p.hi[1]) } else { 0..1 };
            for i in r0 {
                for j in r1.clone() {
                    load[i * ny + j] += p.share;
                }
            }
        }
        load.iter().all(|&l| l <= 1.0 + tol)
    }
}

fn span(axis: &[i64], lo: i64, hi: i64) -> std::ops::Range<usize> {
    axis.partition_point(|&x| x < lo)..axis.partition_point(|&x| x < hi)
}

fn volume(side: i64, dim: usize) -> f64 {
    (side as f64).powi(dim as i32)
}

/// Absolute lower corner and side in thirds of a cell.
fn cube_box(cube: &DyadicCube, window: &Window) -> (Vec<i64>, i64) {
    (cube.lower_thirds(window), cube.side_thirds(window))
}

/// Lower corner relative to the window, in the layout [`PrefixTable`] expects.
fn relative(cube: &DyadicCube, window: &Window) -> [i64; 2] {
    let lo = cube.lower_thirds(window);
    let base = 3 * window.lower();
    [lo[0] - base, if lo.len() == 2 { lo[1] - base } else { 0 }]
}

fn window_overlap(cube: &DyadicCube, window: &Window) -> i64 {
    let (lo, side) = cube_box(cube, window);
    let (a, b) = (3 * window.lower(), 3 * window.upper());
    lo.iter().map(|&x| ((x + side).min(b) - x.max(a)).max(0)).product()
}

/// `box \ union(holes)` as pieces on the grid generated by all endpoints.
fn complement_pieces(lo: &[i64], side: i64, holes: &[(Vec<i64>, i64)]) -> Vec<Piece> {
    let dim = lo.len();
    let axes: Vec<Vec<i64>> = (0..dim)
        .map(|a| {
            let mut v = vec![lo[a], lo[a] + side];
            for (h, s) in holes {
                v.push(h[a].clamp(lo[a], lo[a] + side));
                v.push((h[a] + s).clamp(lo[a], lo[a] + side));
            }
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    let covered = |pt: &[i64]| {
        holes.iter().any(|(h, s)| (0..dim).all(|a| h[a] <= pt[a] && pt[a] < h[a] + s))
    };
    let mut out = Vec::new();
    let ny = if dim == 2 { axes[1].len() - 1 } else { 1 };
    for i in 0..axes[0].len() - 1 {
        for j in 0..ny {
            let (plo, phi) = if dim == 2 {
                (vec![axes[0][i], axes[1][j]], vec![axes[0][i + 1], axes[1][j + 1]])
            } else {
                (vec![axes[0][i]], vec![axes[0][i + 1]])
            };
            if !covered(&plo) {
                out.push(Piece { lo: plo, hi: phi, share: 1.0 });
            }
        }
    }
    // merge neighbours along the first axis in one dimension
    if dim == 1 {
        let mut merged: Vec<Piece> = Vec::new();
        for p in out {
            match merged.last_mut() {
                Some(last) if last.hi[0] == p.lo[0] => last.hi[0] = p.hi[0],
                _ => merged.push(p),
            }
        }
        return merged;
    }
    out
}

/// Stopping-time decomposition of `f` in the grid `shift`.
///
/// The children of a stopping cube `Q` are the maximal dyadic subcubes `R`
/// with `avg_R f > lambda avg_Q f`. Each top-scale cube holding part of the
/// support contributes the smallest cube containing that part, together
/// with those of its ancestors that reach further into the window, so that
/// every dyadic cube meeting the support sits inside a family cube.
pub fn cz_sparse_decompose(
    f: &GridFunction,
    shift: Shift,
    lambda: f64,
) -> Result<SparseFamily, SparseError> {
    if !(lambda.is_finite() && lambda > 1.0) {
        return Err(SparseError::BadThreshold(lambda));
    }
    let window = *f.window();
    let dim = window.dim();
    let table = PrefixTable::new(&window, f.values());
    let finest = -(window.resolution() as i32);
    let top = window.half_extent() as i32 + 2;
    let mass = |c: &DyadicCube| {
        let rel = relative(c, &window);
        let side = c.side_thirds(&window);
        table.thirds_sum(rel, [rel[0] + side, rel[1] + side])
    };
    let avg = |c: &DyadicCube| dyadic_average(&table, dim, relative(c, &window), c.side_thirds(&window));

    let axes: Vec<Vec<i64>> = (0..dim)
        .map(|a| axis_indices(&window, top, signed_third(top, shift.thirds(a))))
        .collect();
    let tops: Vec<DyadicCube> = if dim == 1 {
        axes[0].iter().map(|&j| DyadicCube { shift, scale: top, index: vec![j] }).collect()
    } else {
        axes[0]
            .iter()
            .flat_map(|&a| axes[1].iter().map(move |&b| DyadicCube { shift, scale: top, index: vec![a, b] }))
            .collect()
    };

    let mut cubes: Vec<DyadicCube> = Vec::new();
    let mut holes: Vec<Vec<(Vec<i64>, i64)>> = Vec::new();
    let mut chain_members = 0usize;
    for t in tops.into_iter().filter(|t| mass(t) > 0.0) {
        // descend while a single child carries all of the mass
        let mut path = vec![t];
        loop {
            let cur = path.last().expect("path starts non-empty");
            if cur.scale <= finest {
                break;
            }
            let heavy: Vec<DyadicCube> = cur.children().into_iter().filter(|c| mass(c) > 0.0).collect();
            if heavy.len() != 1 {
                break;
            }
            path.push(heavy.into_iter().next().expect("one heavy child"));
        }
        let root = path.pop().expect("root on path");
        // ancestors, outermost first, kept when they add window area
        let mut kept: Vec<DyadicCube> = Vec::new();
        for (i, a) in path.iter().enumerate() {
            let child = path.get(i + 1).unwrap_or(&root);
            if window_overlap(a, &window) > window_overlap(child, &window) {
                kept.push(a.clone());
            }
        }
        for (i, a) in kept.iter().enumerate() {
            let inner = kept.get(i + 1).unwrap_or(&root);
            cubes.push(a.clone());
            holes.push(vec![cube_box(inner, &window)]);
            chain_members += 1;
        }

        let mut queue = VecDeque::from([root]);
        while let Some(q) = queue.pop_front() {
            let threshold = lambda * avg(&q);
            let mut stops = Vec::new();
            let mut stack = if q.scale > finest { q.children() } else { Vec::new() };
            stack.reverse();
            while let Some(r) = stack.pop() {
                if mass(&r) <= 0.0 {
                    continue;
                }
                if avg(&r) > threshold {
                    stops.push(r);
                } else if r.scale > finest {
                    let mut ch = r.children();
                    ch.reverse();
                    stack.extend(ch);
                }
            }
            holes.push(stops.iter().map(|s| cube_box(s, &window)).collect());
            cubes.push(q);
            queue.extend(stops);
        }
    }

    let assignment = cubes
        .iter()
        .zip(&holes)
        .map(|(c, h)| {
            let (lo, side) = cube_box(c, &window);
            complement_pieces(&lo, side, h)
        })
        .collect();
    let mut eta = 1.0 - 1.0 / lambda;
    if chain_members > 0 {
        eta = eta.min(1.0 - 0.5f64.powi(dim as i32));
    }
    Ok(SparseFamily { window, shift, eta, cubes, assignment: Some(assignment) })
}

/// Children of each family cube that are themselves stopping cubes, for the
/// packing bound. Indices refer to `family.cubes`.
pub fn stopping_children(family: &SparseFamily) -> Vec<Vec<usize>> {
    let w = &family.window;
    family
        .cubes
        .iter()
        .map(|q| {
            family
                .cubes
                .iter()
                .enumerate()
                .filter(|(_, r)| r.scale < q.scale && q.contains_cube(r, w))
                .filter(|(_, r)| {
                    // maximal among family cubes strictly inside q
                    !family.cubes.iter().any(|s| {
                        s.scale < q.scale && s.scale > r.scale && q.contains_cube(s, w) && s.contains_cube(r, w)
                    })
                })
                .map(|(i, _)| i)
                .collect()
        })
        .collect()
}

/// `A_S(f_1, ..., f_m) = sum_{Q in S} prod_i avg_Q f_i chi_Q`, reported per
/// cell as its largest value over the cell (the sum is constant on thirds
/// of a cell).
pub fn sparse_operator(family: &SparseFamily, fs: &[GridFunction]) -> Result<GridFunction, SparseError> {
    let window = family.window;
    if fs.is_empty() {
        return Err(SparseError::Empty);
    }
    for f in fs {
        if *f.window() != window {
            return Err(LorentzError::WindowMismatch.into());
        }
    }
    let dim = window.dim();
    let m = window.side_cells();
    let m3 = 3 * m as i64;
    let tables: Vec<PrefixTable> = fs.iter().map(|f| PrefixTable::new(&window, f.values())).collect();
    let fine_len = (3 * m).pow(dim as u32);
    let mut fine = vec![0.0f64; fine_len];
    for cube in &family.cubes {
        if cube.dim() != dim {
            return Err(SparseError::DimensionMismatch { expected: dim, got: cube.dim() });
        }
        let rel = relative(cube, &window);
        let side = cube.side_thirds(&window);
        let v: f64 = tables.iter().map(|t| dyadic_average(t, dim, rel, side)).product();
        if v == 0.0 {
            continue;
        }
        let clip = |x: i64| (x.clamp(0, m3) as usize, (x + side).clamp(0, m3) as usize);
        let (a0, b0) = clip(rel[0]);
        if dim == 1 {
            fine[a0..b0].iter_mut().for_each(|x| *x += v);
        } else {
            let (a1, b1) = clip(rel[1]);
            for i in a0..b0 {
                fine[i * 3 * m + a1..i * 3 * m + b1].iter_mut().for_each(|x| *x += v);
            }
        }
    }
    let values = (0..window.cell_count())
        .map(|flat| {
            let o = window.offsets(flat);
            let mut best = 0.0f64;
            if dim == 1 {
                for t in 0..3 {
                    best = best.max(fine[3 * o[0] + t]);
                }
            } else {
                for s in 0..3 {
                    for t in 0..3 {
                        best = best.max(fine[(3 * o[0] + s) * 3 * m + 3 * o[1] + t]);
                    }
                }
            }
            best
        })
        .collect();
    Ok(GridFunction::new(window, values)?)
}

/// Outcome of a sparseness check.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "verdict", rename_all = "snake_case")]
pub enum SparseVerdict {
    /// A family carrying a valid assignment at the requested level.
    Certificate { family: SparseFamily },
    /// Cubes whose joint demand `eta * sum |Q|` exceeds the area of their union.
    Refutation { cubes: Vec<usize>, demand: f64, union_area: f64 },
}

impl SparseVerdict {
    pub fn is_certificate(&self) -> bool {
        matches!(self, SparseVerdict::Certificate { .. })
    }
}

/// Largest number of atoms a flow network may use.
pub const MAX_ATOMS: usize = 1 << 22;

/// Decides whether `family` is `eta`-sparse by maximum flow from cubes
/// (demand `eta |Q|`) through the atoms they cover (capacity = area).
pub fn verify_sparse(family: &SparseFamily, eta: f64) -> Result<SparseVerdict, SparseError> {
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(SparseError::BadEta(eta));
    }
    let window = family.window;
    let dim = window.dim();
    let boxes: Vec<(Vec<i64>, i64)> = family
        .cubes
        .iter()
        .map(|c| {
            if c.dim() != dim {
                Err(SparseError::DimensionMismatch { expected: dim, got: c.dim() })
            } else {
                Ok(cube_box(c, &window))
            }
        })
        .collect::<Result<_, _>>()?;
    let axes: Vec<Vec<i64>> = (0..dim)
        .map(|a| {
            let mut v: Vec<i64> = boxes.iter().flat_map(|(lo, s)| [lo[a], lo[a] + s]).collect();
            v.sort_unstable();
            v.dedup();
            v
        })
        .collect();
    let nx = axes.first().map_or(0, |v| v.len().saturating_sub(1));
    let ny = if dim == 2 { axes[1].len().saturating_sub(1) } else { 1 };
    if nx * ny > MAX_ATOMS {
        return Err(SparseError::TooLarge { atoms: nx * ny, limit: MAX_ATOMS });
    }

    let ranges: Vec<[std::ops::Range<usize>; 2]> = boxes
        .iter()
        .map(|(lo, s)| {
            let r0 = span(&axes[0], lo[0], lo[0] + s);
            let r1 = if dim == 2 { span(&axes[1], lo[1], lo[1] + s) } else { 0..1 };
            [r0, r1]
        })
        .collect();
    // atom node ids, only for atoms under some cube
    let mut atom_node = vec![usize::MAX; nx * ny];
    let n_cubes = boxes.len();
    let mut next = n_cubes + 2;
    for [r0, r1] in &ranges {
        for i in r0.clone() {
            for j in r1.clone() {
                if atom_node[i * ny + j] == usize::MAX {
                    atom_node[i * ny + j] = next;
                    next += 1;
                }
            }
        }
    }
    let (source, sink) = (n_cubes, n_cubes + 1);
    let mut net = FlowNet::new(next);
    let atom_area = |i: usize, j: usize| {
        let w0 = (axes[0][i + 1] - axes[0][i]) as f64;
        if dim == 2 {
            w0 * (axes[1][j + 1] - axes[1][j]) as f64
        } else {
            w0
        }
    };
    let mut total = 0.0;
    let mut cube_edges: Vec<Vec<(usize, usize, usize)>> = Vec::with_capacity(n_cubes);
    for (q, ((_, s), [r0, r1])) in boxes.iter().zip(&ranges).enumerate() {
        let demand = eta * volume(*s, dim);
        total += demand;
        net.add_edge(source, q, demand);
        let mut edges = Vec::new();
        for i in r0.clone() {
            for j in r1.clone() {
                let e = net.add_edge(q, atom_node[i * ny + j], atom_area(i, j));
                edges.push((e, i, j));
            }
        }
        cube_edges.push(edges);
    }
    for i in 0..nx {
        for j in 0..ny {
            let node = atom_node[i * ny + j];
            if node != usize::MAX {
                net.add_edge(node, sink, atom_area(i, j));
            }
        }
    }
    let eps = 1e-12 * total.max(1.0);
    let flow = net.max_flow(source, sink, eps);
    if flow >= total - 1e-9 * total.max(1.0) {
        let assignment = cube_edges
            .iter()
            .map(|edges| {
                edges
                    .iter()
                    .filter(|(e, _, _)| net.flow(*e) > eps)
                    .map(|&(e, i, j)| {
                        let (lo, hi) = if dim == 2 {
                            (vec![axes[0][i], axes[1][j]], vec![axes[0][i + 1], axes[1][j + 1]])
                        } else {
                            (vec![axes[0][i]], vec![axes[0][i + 1]])
                        };
                        Piece { lo, hi, share: (net.flow(e) / atom_area(i, j)).min(1.0) }
                    })
                    .collect()
            })
            .collect();
        let mut certified = family.clone();
        certified.eta = eta;
        certified.assignment = Some(assignment);
        return Ok(SparseVerdict::Certificate { family: certified });
    }
    let reach = net.reachable(source, eps);
    let cubes: Vec<usize> = (0..n_cubes).filter(|&q| reach[q]).collect();
    let demand = cubes.iter().map(|&q| eta * volume(boxes[q].1, dim)).sum();
    let mut union_area = 0.0;
    for i in 0..nx {
        for j in 0..ny {
            let node = atom_node[i * ny + j];
            if node != usize::MAX && reach[node] {
                union_area += atom_area(i, j);
            }
        }
    }
    Ok(SparseVerdict::Refutation { cubes, demand, union_area })
}

/// Dinic's algorithm on a small layered network with real capacities.
struct FlowNet {
    adj: Vec<Vec<usize>>,
    to: Vec<usize>,
    cap: Vec<f64>,
    orig: Vec<f64>,
}

impl FlowNet {
    fn new(nodes: usize) -> Self {
        Self { adj: vec![Vec::new(); nodes], to: Vec::new(), cap: Vec::new(), orig: Vec::new() }
    }

    fn add_edge(&mut self, u: usize, v: usize, c: f64) -> usize {
        let e = self.to.len();
        self.adj[u].push(e);
        self.to.push(v);
        self.cap.push(c);
        self.orig.push(c);
        self.adj[v].push(e + 1);
        self.to.push(u);
        self.cap.push(0.0);
        self.orig.push(0.0);
        e
    }

    fn flow(&self, e: usize) -> f64 {
        self.orig[e] - self.cap[e]
    }

    fn levels(&self, s: usize, eps: f64) -> Vec<i64> {
        let mut level = vec![-1i64; self.adj.len()];
        level[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(u) = queue.pop_front() {
            for &e in &self.adj[u] {
                let v = self.to[e];
                if self.cap[e] > eps && level[v] < 0 {
                    level[v] = level[u] + 1;
                    queue.push_back(v);
                }
            }
        }
        level
    }

    fn reachable(&self, s: usize, eps: f64) -> Vec<bool> {
        self.levels(s, eps).into_iter().map(|l| l >= 0).collect()
    }

    fn push(&mut self, u: usize, t: usize, limit: f64, level: &[i64], iter: &mut [usize], eps: f64) -> f64 {
        if u == t {
            return limit;
        }
        while iter[u] < self.adj[u].len() {
            let e = self.adj[u][iter[u]];
            let v = self.to[e];
            if self.cap[e] > eps && level[v] == level[u] + 1 {
                let got = self.push(v, t, limit.min(self.cap[e]), level, iter, eps);
                if got > 0.0 {
                    self.cap[e] -= got;
                    self.cap[e ^ 1] += got;
                    return got;
                }
            }
            iter[u] += 1;
        }
        0.0
    }

    fn max_flow(&mut self, s: usize, t: usize, eps: f64) -> f64 {
        let mut total = 0.0;
        loop {
            let level = self.levels(s, eps);
            if level[t] < 0 {
                return total;
            }
            let mut iter = vec![0usize; self.adj.len()];
            loop {
                let got = self.push(s, t, f64::INFINITY, &level, &mut iter, eps);
                if got <= eps {
                    break;
                }
                total += got;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{maximal, MaximalVariant};
    use proptest::prelude::*;

    fn interval(window: &Window, lo: f64, hi: f64) -> DyadicCube {
        let scale = (hi - lo).log2().round() as i32;
        let j = (lo / (hi - lo)).round() as i64;
        let c = DyadicCube { shift: Shift::ZERO, scale, index: vec![j] };
        assert_eq!(c.bounds()[0], (lo, hi));
        let _ = window;
        c
    }

    fn spike() -> GridFunction {
        let win = Window::new(1, 0, 3).unwrap();
        let mut v = vec![0.0; 16];
        v[8] = 8.0;
        v[9..16].iter_mut().for_each(|x| *x = 1.0);
        GridFunction::new(win, v).unwrap()
    }

    #[test]
    fn spike_decomposition() {
        let f = spike();
        let win = *f.window();
        let fam = cz_sparse_decompose(&f, Shift::ZERO, 2.0).unwrap();
        assert_eq!(fam.cubes, vec![interval(&win, 0.0, 8.0), interval(&win, 0.0, 2.0)]);
        let a = fam.assignment.as_ref().unwrap();
        assert_eq!(a[0], vec![Piece { lo: vec![6], hi: vec![24], share: 1.0 }]);
        assert_eq!(a[1], vec![Piece { lo: vec![0], hi: vec![6], share: 1.0 }]);
        assert!(fam.assignment_is_valid(0.5));
        assert_eq!(fam.eta, 0.5);

        let op = sparse_operator(&fam, std::slice::from_ref(&f)).unwrap();
        assert_eq!(op.values()[8], 15.0 / 8.0 + 4.5);
        assert_eq!(op.values()[10], 15.0 / 8.0);
        assert_eq!(op.values()[0], 0.0);
        let md = maximal(&f, &MaximalVariant::Dyadic(Shift::ZERO)).unwrap();
        assert_eq!(md.values()[8], 8.0);
        for (a, b) in md.values().iter().zip(op.values()) {
            assert!(*a <= 2.0 * b * (1.0 + 1e-12));
        }
    }

    #[test]
    fn constant_gives_root_only() {
        let win = Window::new(1, 1, 2).unwrap();
        let f = GridFunction::constant(win, 3.0);
        let fam = cz_sparse_decompose(&f, Shift::ZERO, 2.0).unwrap();
        // the window is the union of two top-level halves of grid zero
        assert!(fam.cubes.iter().all(|c| c.scale == 2));
        for (c, e) in fam.cubes.iter().zip(fam.assignment.as_ref().unwrap()) {
            let (lo, side) = cube_box(c, &win);
            assert_eq!(e, &vec![Piece { lo: lo.clone(), hi: vec![lo[0] + side], share: 1.0 }]);
        }
        let thirds = cz_sparse_decompose(&f, Shift::from_bits(1), 2.0).unwrap();
        assert_eq!(thirds.cubes.len(), 1);
    }

    #[test]
    fn sparse_operator_examples() {
        let win = Window::new(1, 0, 1).unwrap();
        let chi = GridFunction::indicator(win, |x| (0.0..1.0).contains(&x[0]));
        let fam = SparseFamily::new(win, Shift::ZERO, 1.0, vec![interval(&win, 0.0, 1.0)]);
        let out = sparse_operator(&fam, &[chi.clone(), chi.clone()]).unwrap();
        assert_eq!(out.values(), chi.values());
        let twice = sparse_operator(&fam, &[chi.scale(2.0)]).unwrap();
        assert_eq!(twice.values(), chi.scale(2.0).values());
    }

    fn nested_family(eta: f64) -> SparseFamily {
        let win = Window::new(1, 2, 0).unwrap();
        let cubes = vec![interval(&win, 0.0, 1.0), interval(&win, 0.0, 0.5), interval(&win, 0.5, 1.0)];
        SparseFamily::new(win, Shift::ZERO, eta, cubes)
    }

    #[test]
    fn flow_certificate_and_refutation() {
        let fam = nested_family(0.5);
        match verify_sparse(&fam, 0.5).unwrap() {
            SparseVerdict::Certificate { family } => {
                assert!(family.assignment_is_valid(0.5));
                let areas: Vec<f64> = family
                    .assignment
                    .as_ref()
                    .unwrap()
                    .iter()
                    .map(|e| e.iter().map(Piece::area).sum())
                    .collect();
                // thirds of a quarter cell: |[0,1)| = 12, halves 6
                assert_eq!(areas, vec![6.0, 3.0, 3.0]);
            }
            other => panic!("expected certificate, got {other:?}"),
        }
        match verify_sparse(&fam, 0.6).unwrap() {
            SparseVerdict::Refutation { cubes, demand, union_area } => {
                assert!(cubes.contains(&0));
                assert!(demand > union_area);
                assert!((union_area - 12.0).abs() < 1e-12);
            }
            other => panic!("expected refutation, got {other:?}"),
        }
        let single = SparseFamily::new(fam.window, Shift::ZERO, 0.9, vec![fam.cubes[0].clone()]);
        assert!(verify_sparse(&single, 0.99).unwrap().is_certificate());
    }

    #[test]
    fn all_dyadic_cubes_are_not_half_sparse() {
        let win = Window::new(1, 2, 1).unwrap();
        let cubes = crate::grid::enumerate_dyadic(&win, Shift::ZERO);
        let fam = SparseFamily::new(win, Shift::ZERO, 0.5, cubes);
        assert!(!verify_sparse(&fam, 0.5).unwrap().is_certificate());
    }

    #[test]
    fn json_shape() {
        let fam = cz_sparse_decompose(&spike(), Shift::ZERO, 2.0).unwrap();
        let text = serde_json::to_string(&fam).unwrap();
        assert!(text.contains("\"shift\":0"));
        assert!(text.contains("\"scale\":3"));
        let back: SparseFamily = serde_json::from_str(&text).unwrap();
        assert_eq!(back, fam);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(30))]

        #[test]
        fn decomposition_chain(vals in prop::collection::vec(prop_oneof![Just(0.0), 0.0f64..10.0], 64), bits in 0u8..2, two_d in any::<bool>()) {
            let win = if two_d { Window::new(2, 1, 1).unwrap() } else { Window::new(1, 2, 3).unwrap() };
            let vals = vals[..win.cell_count()].to_vec();
            let f = GridFunction::new(win, vals).unwrap();
            let shift = if two_d { Shift::uniform(bits == 1, 2) } else { Shift::from_bits(bits) };
            let fam = cz_sparse_decompose(&f, shift, 2.0).unwrap();
            prop_assert!(fam.assignment_is_valid(fam.eta));
            prop_assert!(verify_sparse(&fam, 0.5).unwrap().is_certificate());
            let op = sparse_operator(&fam, std::slice::from_ref(&f)).unwrap();
            let md = maximal(&f, &MaximalVariant::Dyadic(shift)).unwrap();
            for (a, b) in md.values().iter().zip(op.values()) {
                prop_assert!(*a <= 2.0 * b * (1.0 + 1e-12), "{} > 2 * {}", a, b);
            }
        }

        #[test]
        fn packing(vals in prop::collection::vec(0.1f64..10.0, 32), lambda in 1.5f64..4.0) {
            let win = Window::new(1, 2, 2).unwrap();
            let f = GridFunction::new(win, vals).unwrap();
            let fam = cz_sparse_decompose(&f, Shift::ZERO, lambda).unwrap();
            let kids = stopping_children(&fam);
            for (q, ch) in fam.cubes.iter().zip(&kids) {
                let inside: f64 = ch.iter().map(|&i| fam.cubes[i].volume()).sum();
                prop_assert!(inside <= q.volume() / lambda * (1.0 + 1e-12));
            }
        }
    }
}
