//! Discrete maximal operators under the cell-sup convention.
//!
//! A cell receives the largest average over the admissible cubes it sees:
//! lattice cubes whose closure meets the closed cell for the uncentered
//! families, cubes concentric with the cell for the centered ones, and cubes
//! meeting the cell interior for dyadic and sparse families.

use rayon::prelude::*;
use thiserror::Error;

use crate::grid::{enumerate_dyadic, DyadicCube, Shift, Window};
use crate::lorentz::{self, GridFunction, LorentzError};
use crate::numeric::PrefixTable;
use crate::weights::{ExponentTuple, WeightVector};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OperatorError {
    #[error("no input functions")]
    Empty,
    #[error("{expected} functions expected, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("bad exponent: {0}")]
    BadExponent(String),
    #[error(transparent)]
    Lorentz(#[from] LorentzError),
}

#[derive(Debug, Clone)]
pub enum MaximalVariant {
    Uncentered,
    Centered,
    Dyadic(Shift),
    Weighted(GridFunction),
    WeightedCentered(GridFunction),
    WeightedDyadic(GridFunction, Shift),
    /// Maximal operator restricted to a fixed family of dyadic cubes.
    Sparse(Vec<DyadicCube>),
}

/// Largest value of `vals[s]` for `s` in `[c - before, c + after]`, for every
/// `c` in `0..out.len()`. Monotone deque, linear time.
fn sliding_max(vals: &[f64], before: usize, after: usize, out: &mut [f64]) {
    let len = vals.len();
    let mut deque: std::collections::VecDeque<usize> = std::collections::VecDeque::new();
    let mut next = 0usize;
    for (c, slot) in out.iter_mut().enumerate() {
        let hi = (c + after).min(len.saturating_sub(1));
        while next <= hi && next < len {
            while let Some(&back) = deque.back() {
                if vals[back] <= vals[next] {
                    deque.pop_back();
                } else {
                    break;
                }
            }
            deque.push_back(next);
            next += 1;
        }
        let lo = c.saturating_sub(before);
        while let Some(&front) = deque.front() {
            if front < lo {
                deque.pop_front();
            } else {
                break;
            }
        }
        *slot = deque.front().map_or(0.0, |&i| vals[i]);
    }
}

/// Planar cell-sup over all lattice squares of one side.
/// `score(corner, side)` is evaluated once per square.
fn touching_side(
    m: usize,
    side: usize,
    score: &(impl Fn([usize; 2], usize) -> f64 + Sync),
    acc: &mut [f64],
) {
    let span = m - side + 1;
    // rows of corners along axis 1, then columns along axis 0
    let mut rows = vec![0.0; span * m];
    let mut vals = vec![0.0; span];
    for s0 in 0..span {
        for (s1, v) in vals.iter_mut().enumerate() {
            *v = score([s0, s1], side);
        }
        sliding_max(&vals, side, 1, &mut rows[s0 * m..(s0 + 1) * m]);
    }
    let mut col = vec![0.0; span];
    let mut out = vec![0.0; m];
    for c1 in 0..m {
        for s0 in 0..span {
            col[s0] = rows[s0 * m + c1];
        }
        sliding_max(&col, side, 1, &mut out);
        for c0 in 0..m {
            let a = &mut acc[c0 * m + c1];
            *a = a.max(out[c0]);
        }
    }
}

pub(crate) fn touching_sup(
    dim: usize,
    m: usize,
    score: impl Fn([usize; 2], usize) -> f64 + Sync,
    parallel: bool,
) -> Vec<f64> {
    let cells = m.pow(dim as u32);
    if dim == 1 {
        return touching_sup_line(m, &score, parallel);
    }
    if !parallel || m < 64 {
        let mut acc = vec![0.0; cells];
        for side in 1..=m {
            touching_side(m, side, &score, &mut acc);
        }
        return acc;
    }
    (1..=m)
        .into_par_iter()
        .fold(
            || vec![0.0; cells],
            |mut acc, side| {
                touching_side(m, side, &score, &mut acc);
                acc
            },
        )
        .reduce(
            || vec![0.0; cells],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x = x.max(y);
                }
                a
            },
        )
}

/// One-dimensional [`touching_sup`]. For a fixed left end `a`, the interval
/// `[a, e)` touches cells `a - 1..=e`, so a suffix maximum over `e` serves
/// every cell at or right of `a` in one pass.
fn touching_sup_line(m: usize, score: &(impl Fn([usize; 2], usize) -> f64 + Sync), parallel: bool) -> Vec<f64> {
    let sweep = |acc: &mut Vec<f64>, a: usize| {
        let mut run = 0.0f64;
        for e in (a + 1..=m).rev() {
            run = run.max(score([a, 0], e - a));
            if e < m {
                acc[e] = acc[e].max(run);
            }
        }
        acc[a] = acc[a].max(run);
        if a > 0 {
            acc[a - 1] = acc[a - 1].max(run);
        }
    };
    if !parallel || m < 256 {
        let mut acc = vec![0.0; m];
        for a in 0..m {
            sweep(&mut acc, a);
        }
        return acc;
    }
    (0..m)
        .into_par_iter()
        .fold(
            || vec![0.0; m],
            |mut acc, a| {
                sweep(&mut acc, a);
                acc
            },
        )
        .reduce(
            || vec![0.0; m],
            |mut a, b| {
                for (x, y) in a.iter_mut().zip(b) {
                    *x = x.max(y);
                }
                a
            },
        )
}

/// Reference implementation of [`touching_sup`]: every cube, every cell it touches.
pub(crate) fn touching_sup_oracle(
    dim: usize,
    m: usize,
    score: impl Fn([usize; 2], usize) -> f64,
) -> Vec<f64> {
    let mut acc = vec![0.0f64; m.pow(dim as u32)];
    for side in 1..=m {
        let span = m - side + 1;
        let corners = span.pow(dim as u32);
        for k in 0..corners {
            let corner = if dim == 1 { [k, 0] } else { [k / span, k % span] };
            let v = score(corner, side);
            let range = |s: usize| s.saturating_sub(1)..(s + side + 1).min(m);
            if dim == 1 {
                for c in range(corner[0]) {
                    acc[c] = acc[c].max(v);
                }
            } else {
                for c0 in range(corner[0]) {
                    for c1 in range(corner[1]) {
                        let a = &mut acc[c0 * m + c1];
                        *a = a.max(v);
                    }
                }
            }
        }
    }
    acc
}

/// Cell-sup over cubes of side `2t+1` centered on each cell. With `inside`
/// only cubes contained in the window are used.
fn centered_sup(
    window: &Window,
    inside: bool,
    score: impl Fn([i64; 2], [i64; 2], i64) -> f64 + Sync,
) -> Vec<f64> {
    let m = window.side_cells() as i64;
    let dim = window.dim();
    (0..window.cell_count())
        .into_par_iter()
        .map(|flat| {
            let o = window.offsets(flat);
            let c = [o[0] as i64, o[1] as i64];
            let axes = &c[..dim];
            let t_max = if inside {
                axes.iter().map(|&x| x.min(m - 1 - x)).min().unwrap_or(0)
            } else {
                axes.iter().map(|&x| x.max(m - 1 - x)).max().unwrap_or(0)
            };
            let mut best = 0.0f64;
            for t in 0..=t_max {
                let lo = [c[0] - t, c[1] - t];
                let hi = [c[0] + t + 1, c[1] + t + 1];
                best = best.max(score(lo, hi, 2 * t + 1));
            }
            best
        })
        .collect()
}

/// Cell range (clamped to the window) meeting the interior of `[lo, lo + len)`
/// given in thirds of a cell.
fn overlapped_cells(lo: i64, len: i64, m: usize) -> std::ops::Range<usize> {
    let first = lo.div_euclid(3).max(0);
    let last = ((lo + len + 2).div_euclid(3)).min(m as i64);
    if last <= first {
        0..0
    } else {
        first as usize..last as usize
    }
}

/// Cell-sup over a family of shifted dyadic cubes meeting each cell's interior.
/// The score receives the cube's lower corner relative to the window and its
/// side, both in thirds of a cell.
pub(crate) fn dyadic_sup<'a>(
    window: &Window,
    cubes: impl IntoIterator<Item = &'a DyadicCube>,
    score: impl Fn([i64; 2], i64) -> f64,
) -> Vec<f64> {
    let m = window.side_cells();
    let dim = window.dim();
    let base = 3 * window.lower();
    let mut acc = vec![0.0f64; window.cell_count()];
    for cube in cubes {
        let lo = cube.lower_thirds(window);
        let side = cube.side_thirds(window);
        let rel = [lo[0] - base, if dim == 2 { lo[1] - base } else { 0 }];
        let v = score(rel, side);
        if v <= 0.0 {
            continue;
        }
        let r0 = overlapped_cells(rel[0], side, m);
        if dim == 1 {
            for c in r0 {
                acc[c] = acc[c].max(v);
            }
        } else {
            let r1 = overlapped_cells(rel[1], side, m);
            for c0 in r0 {
                for c1 in r1.clone() {
                    let a = &mut acc[c0 * m + c1];
                    *a = a.max(v);
                }
            }
        }
    }
    acc
}

#[inline]
fn cube_average(table: &PrefixTable, dim: usize, corner: [usize; 2], side: usize) -> f64 {
    table.cube_sum(corner, side) / (side as f64).powi(dim as i32)
}

#[inline]
fn thirds_box(rel: [i64; 2], side: i64) -> ([i64; 2], [i64; 2]) {
    (rel, [rel[0] + side, rel[1] + side])
}

pub(crate) fn dyadic_average(table: &PrefixTable, dim: usize, rel: [i64; 2], side: i64) -> f64 {
    let (lo, hi) = thirds_box(rel, side);
    let cells = (side as f64 / 3.0).powi(dim as i32);
    table.thirds_sum(lo, hi) / cells
}

/// Fraction of cell `c` covered along one axis by `[lo, hi)`, in thirds.
#[inline]
fn axis_fraction(c: usize, lo: i64, hi: i64) -> f64 {
    let a = (3 * c as i64).max(lo);
    let b = (3 * c as i64 + 3).min(hi);
    ((b - a).max(0)) as f64 / 3.0
}

/// `(sum f·u·frac, sum u·frac)` over the cells a thirds-box meets, accumulated
/// in flat cell order. Each dyadic scale tiles the window, so summing directly
/// costs one pass per scale and avoids prefix-difference cancellation.
fn direct_masses(
    window: &Window,
    f: &[f64],
    u: Option<&[f64]>,
    rel: [i64; 2],
    side: i64,
) -> (f64, f64) {
    let m = window.side_cells();
    let weight = |flat: usize| u.map_or(1.0, |u| u[flat]);
    let (mut num, mut den) = (0.0, 0.0);
    let r0 = overlapped_cells(rel[0], side, m);
    if window.dim() == 1 {
        for c in r0 {
            let w = axis_fraction(c, rel[0], rel[0] + side);
            num += w * f[c] * weight(c);
            den += w * weight(c);
        }
    } else {
        let r1 = overlapped_cells(rel[1], side, m);
        for c0 in r0 {
            let w0 = axis_fraction(c0, rel[0], rel[0] + side);
            for c1 in r1.clone() {
                let flat = c0 * m + c1;
                let w = w0 * axis_fraction(c1, rel[1], rel[1] + side);
                num += w * f[flat] * weight(flat);
                den += w * weight(flat);
            }
        }
    }
    (num, den)
}

fn finish(window: &Window, values: Vec<f64>) -> GridFunction {
    GridFunction::new(*window, values).expect("maximal values are finite and non-negative")
}

pub fn maximal(f: &GridFunction, variant: &MaximalVariant) -> Result<GridFunction, OperatorError> {
    let window = *f.window();
    let dim = window.dim();
    let m = window.side_cells();
    let table = PrefixTable::new(&window, f.values());
    let values = match variant {
        MaximalVariant::Uncentered => {
            touching_sup(dim, m, |c, s| cube_average(&table, dim, c, s), true)
        }
        MaximalVariant::Weighted(u) => {
            f.same_window(u)?;
            let fu = f.mul(u)?;
            let num = PrefixTable::new(&window, fu.values());
            let den = PrefixTable::new(&window, u.values());
            touching_sup(dim, m, |c, s| num.cube_sum(c, s) / den.cube_sum(c, s), true)
        }
        MaximalVariant::Centered => centered_sup(&window, false, |lo, hi, side| {
            table.clipped_sum(lo, hi) / (side as f64).powi(dim as i32)
        }),
        MaximalVariant::WeightedCentered(u) => {
            f.same_window(u)?;
            let fu = f.mul(u)?;
            let num = PrefixTable::new(&window, fu.values());
            let den = PrefixTable::new(&window, u.values());
            centered_sup(&window, true, |lo, hi, _| num.clipped_sum(lo, hi) / den.clipped_sum(lo, hi))
        }
        MaximalVariant::Dyadic(shift) => {
            let cubes = enumerate_dyadic(&window, *shift);
            dyadic_sup(&window, &cubes, |rel, side| {
                direct_masses(&window, f.values(), None, rel, side).0 / (side as f64 / 3.0).powi(dim as i32)
            })
        }
        MaximalVariant::WeightedDyadic(u, shift) => {
            f.same_window(u)?;
            let cubes = enumerate_dyadic(&window, *shift);
            dyadic_sup(&window, &cubes, |rel, side| {
                let (num, den) = direct_masses(&window, f.values(), Some(u.values()), rel, side);
                num / den
            })
        }
        MaximalVariant::Sparse(cubes) => dyadic_sup(&window, cubes, |rel, side| {
            direct_masses(&window, f.values(), None, rel, side).0 / (side as f64 / 3.0).powi(dim as i32)
        }),
    };
    Ok(finish(&window, values))
}

/// Quadratic-time reference for the lattice variants; the remaining variants
/// are evaluated cell by cell straight from their definition.
pub fn maximal_oracle(
    f: &GridFunction,
    variant: &MaximalVariant,
) -> Result<GridFunction, OperatorError> {
    let window = *f.window();
    let dim = window.dim();
    let m = window.side_cells();
    let table = PrefixTable::new(&window, f.values());
    let values = match variant {
        MaximalVariant::Uncentered => {
            touching_sup_oracle(dim, m, |c, s| cube_average(&table, dim, c, s))
        }
        MaximalVariant::Weighted(u) => {
            let fu = f.mul(u)?;
            let num = PrefixTable::new(&window, fu.values());
            let den = PrefixTable::new(&window, u.values());
            touching_sup_oracle(dim, m, |c, s| num.cube_sum(c, s) / den.cube_sum(c, s))
        }
        MaximalVariant::Dyadic(shift) | MaximalVariant::WeightedDyadic(_, shift) => {
            let cubes = enumerate_dyadic(&window, *shift);
            let weight = match variant {
                MaximalVariant::WeightedDyadic(u, _) => Some(u),
                _ => None,
            };
            dyadic_oracle(f, weight, &cubes)?
        }
        MaximalVariant::Sparse(cubes) => dyadic_oracle(f, None, cubes)?,
        MaximalVariant::Centered | MaximalVariant::WeightedCentered(_) => {
            return maximal(f, variant);
        }
    };
    Ok(finish(&window, values))
}

/// Per-cell scan over every cube, averaging by direct summation over
/// (fractions of) cells.
fn dyadic_oracle(
    f: &GridFunction,
    weight: Option<&GridFunction>,
    cubes: &[DyadicCube],
) -> Result<Vec<f64>, OperatorError> {
    let window = *f.window();
    let dim = window.dim();
    let base = 3 * window.lower();
    let ones = GridFunction::ones(window);
    let u = weight.unwrap_or(&ones);
    let mut out = vec![0.0f64; window.cell_count()];
    for cube in cubes {
        let lo = cube.lower_thirds(&window);
        let side = cube.side_thirds(&window);
        let rel: Vec<i64> = lo.iter().map(|x| x - base).collect();
        let (mut num, mut den) = (0.0, 0.0);
        let mut touched = Vec::new();
        for flat in 0..window.cell_count() {
            let o = window.offsets(flat);
            let w = (1..dim).fold(axis_fraction(o[0], rel[0], rel[0] + side), |w, a| {
                w * axis_fraction(o[a], rel[a], rel[a] + side)
            });
            if w > 0.0 {
                num += w * f.values()[flat] * u.values()[flat];
                den += w * u.values()[flat];
                touched.push(flat);
            }
        }
        let avg = if weight.is_some() {
            num / den
        } else {
            num / (side as f64 / 3.0).powi(dim as i32)
        };
        for flat in touched {
            out[flat] = out[flat].max(avg);
        }
    }
    Ok(out)
}

fn check_shared(fs: &[GridFunction]) -> Result<Window, OperatorError> {
    let first = fs.first().ok_or(OperatorError::Empty)?;
    for f in &fs[1..] {
        first.same_window(f)?;
    }
    Ok(*first.window())
}

/// `prod_i M f_i` cellwise.
pub fn product_maximal(fs: &[GridFunction]) -> Result<GridFunction, OperatorError> {
    let window = check_shared(fs)?;
    let mut acc = GridFunction::ones(window);
    for f in fs {
        acc = acc.mul(&maximal(f, &MaximalVariant::Uncentered)?)?;
    }
    Ok(acc)
}

/// The multi-variable maximal operator: one shared cube, product of averages.
pub fn multilinear_maximal(
    fs: &[GridFunction],
    centered: bool,
) -> Result<GridFunction, OperatorError> {
    let window = check_shared(fs)?;
    let dim = window.dim();
    let m = window.side_cells();
    let tables: Vec<PrefixTable> = fs.iter().map(|f| PrefixTable::new(&window, f.values())).collect();
    let values = if centered {
        centered_sup(&window, false, |lo, hi, side| {
            let vol = (side as f64).powi(dim as i32);
            tables.iter().map(|t| t.clipped_sum(lo, hi) / vol).product()
        })
    } else {
        touching_sup(
            dim,
            m,
            |c, s| tables.iter().map(|t| cube_average(t, dim, c, s)).product(),
            true,
        )
    };
    Ok(finish(&window, values))
}

/// Reference for [`multilinear_maximal`] (uncentered).
pub fn multilinear_maximal_oracle(fs: &[GridFunction]) -> Result<GridFunction, OperatorError> {
    let window = check_shared(fs)?;
    let dim = window.dim();
    let tables: Vec<PrefixTable> = fs.iter().map(|f| PrefixTable::new(&window, f.values())).collect();
    let values = touching_sup_oracle(dim, window.side_cells(), |c, s| {
        tables.iter().map(|t| cube_average(t, dim, c, s)).product()
    });
    Ok(finish(&window, values))
}

/// `sup_Q nu(Q)^{-theta/p} prod_i ||f_i chi_Q||_{L^{p_i,1}(w_i)}^theta` over
/// lattice cubes touching each cell.
pub fn n_theta(
    fs: &[GridFunction],
    weights: &WeightVector,
    exponents: &ExponentTuple,
    theta: f64,
) -> Result<GridFunction, OperatorError> {
    if !(theta.is_finite() && theta > 0.0) {
        return Err(OperatorError::BadExponent(format!("theta must be positive, got {theta}")));
    }
    let window = check_shared(fs)?;
    let ws = weights.weights();
    if ws.len() != fs.len() || exponents.len() != fs.len() {
        return Err(OperatorError::Arity { expected: fs.len(), got: ws.len().min(exponents.len()) });
    }
    let nu = weights.target();
    let dim = window.dim();
    let m = window.side_cells();
    let vol = window.cell_volume();
    let nu_table = PrefixTable::new(&window, nu.values());
    let p = exponents.p();
    let base = touching_sup(
        dim,
        m,
        |corner, side| {
            let cells = box_cells(&window, corner, side);
            let mut prod = (nu_table.cube_sum(corner, side) * vol).powf(-1.0 / p);
            for ((f, w), &pi) in fs.iter().zip(ws).zip(exponents.p_list()) {
                let mut pairs: Vec<(f64, f64)> =
                    cells.iter().map(|&c| (f.values()[c], w.values()[c] * vol)).collect();
                prod *= lorentz::norm_p1_pairs(&mut pairs, pi);
                if prod == 0.0 {
                    break;
                }
            }
            prod
        },
        true,
    );
    let values = base.into_iter().map(|v| v.powf(theta)).collect();
    Ok(finish(&window, values))
}

pub(crate) fn box_cells(window: &Window, corner: [usize; 2], side: usize) -> Vec<usize> {
    if window.dim() == 1 {
        (corner[0]..corner[0] + side).collect()
    } else {
        let m = window.side_cells();
        let mut out = Vec::with_capacity(side * side);
        for a in corner[0]..corner[0] + side {
            for b in corner[1]..corner[1] + side {
                out.push(a * m + b);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Shift;
    use proptest::prelude::*;

    fn win1(k: u32, l: u32) -> Window {
        Window::new(1, k, l).unwrap()
    }

    fn cell_at(window: &Window, x: f64) -> usize {
        ((x / window.cell_side()).floor() as i64 - window.lower()) as usize
    }

    fn chi_unit(window: &Window) -> GridFunction {
        GridFunction::indicator(*window, |c| (0.0..1.0).contains(&c[0]) && (window.dim() == 1 || (0.0..1.0).contains(&c[1])))
    }

    #[test]
    fn sliding_max_matches_naive() {
        let vals = [3.0, 1.0, 4.0, 1.0, 5.0, 9.0, 2.0, 6.0];
        for before in 0..4 {
            for after in 0..3 {
                let mut out = vec![0.0; 10];
                sliding_max(&vals, before, after, &mut out);
                for c in 0..10usize {
                    let lo = c.saturating_sub(before);
                    let hi = (c + after).min(vals.len() - 1);
                    let naive = if lo > hi { 0.0 } else { vals[lo..=hi].iter().copied().fold(0.0, f64::max) };
                    assert_eq!(out[c], naive);
                }
            }
        }
    }

    #[test]
    fn uncentered_indicator_example() {
        let win = win1(1, 2);
        let f = chi_unit(&win);
        let mf = maximal(&f, &MaximalVariant::Uncentered).unwrap();
        assert!((mf.values()[cell_at(&win, 1.0)] - 1.0).abs() < 1e-15);
        assert!((mf.values()[cell_at(&win, 1.5)] - 2.0 / 3.0).abs() < 1e-15);
        let oracle = maximal_oracle(&f, &MaximalVariant::Uncentered).unwrap();
        assert_eq!(mf, oracle);
    }

    #[test]
    fn dyadic_zero_shift_vanishes_left_of_origin() {
        let win = win1(1, 2);
        let f = chi_unit(&win);
        let mf = maximal(&f, &MaximalVariant::Dyadic(Shift::ZERO)).unwrap();
        for c in 0..cell_at(&win, 0.0) {
            assert_eq!(mf.values()[c], 0.0);
        }
        assert_eq!(mf.values()[cell_at(&win, 0.25)], 1.0);
    }

    #[test]
    fn centered_values() {
        let win = win1(0, 2);
        let f = chi_unit(&win);
        let mf = maximal(&f, &MaximalVariant::Centered).unwrap();
        assert_eq!(mf.values()[cell_at(&win, 0.5)], 1.0);
        // cell [1,2): best centered cube is [0,3) with average 1/3
        assert!((mf.values()[cell_at(&win, 1.5)] - 1.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn sparse_variant_uses_given_cubes() {
        let win = win1(0, 2);
        let f = chi_unit(&win);
        let q = DyadicCube { shift: Shift::ZERO, scale: 1, index: vec![0] }; // [0,2)
        let mf = maximal(&f, &MaximalVariant::Sparse(vec![q])).unwrap();
        assert_eq!(mf.values()[cell_at(&win, 0.5)], 0.5);
        assert_eq!(mf.values()[cell_at(&win, 1.5)], 0.5);
        assert_eq!(mf.values()[cell_at(&win, 2.5)], 0.0);
    }

    #[test]
    fn product_and_multilinear_on_constants() {
        let win = Window::new(2, 0, 1).unwrap();
        let a = GridFunction::constant(win, 2.0);
        let b = GridFunction::constant(win, 3.0);
        let ml = multilinear_maximal(&[a.clone(), b.clone()], false).unwrap();
        assert!(ml.values().iter().all(|&v| (v - 6.0).abs() < 1e-14));
        let pm = product_maximal(std::slice::from_ref(&a)).unwrap();
        assert_eq!(pm, maximal(&a, &MaximalVariant::Uncentered).unwrap());
    }

    fn random_fn(window: Window, vals: Vec<f64>) -> GridFunction {
        GridFunction::new(window, vals).unwrap()
    }

    fn naive_average(f: &GridFunction, corner: [usize; 2], side: usize) -> f64 {
        let cells = box_cells(f.window(), corner, side);
        cells.iter().map(|&c| f.values()[c]).sum::<f64>() / cells.len() as f64
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(16))]

        #[test]
        fn kernel_matches_oracle_1d(vals in prop::collection::vec(0.0f64..10.0, 64)) {
            let win = win1(2, 3);
            let f = random_fn(win, vals);
            for variant in [MaximalVariant::Uncentered, MaximalVariant::Dyadic(Shift::ZERO), MaximalVariant::Dyadic(Shift::from_bits(1))] {
                let fast = maximal(&f, &variant).unwrap();
                let slow = maximal_oracle(&f, &variant).unwrap();
                for (a, b) in fast.values().iter().zip(slow.values()) {
                    if matches!(variant, MaximalVariant::Uncentered) {
                        prop_assert_eq!(a, b);
                    } else {
                        prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
                    }
                }
            }
        }

        #[test]
        fn kernel_matches_oracle_2d(vals in prop::collection::vec(0.0f64..10.0, 256)) {
            let win = Window::new(2, 1, 2).unwrap();
            let f = random_fn(win, vals);
            let fast = maximal(&f, &MaximalVariant::Uncentered).unwrap();
            let slow = maximal_oracle(&f, &MaximalVariant::Uncentered).unwrap();
            prop_assert_eq!(fast.values(), slow.values());
            // naive summation agrees with the prefix tables
            let dim = 2;
            let m = win.side_cells();
            let naive = touching_sup_oracle(dim, m, |c, s| naive_average(&f, c, s));
            for (a, b) in fast.values().iter().zip(&naive) {
                prop_assert!((a - b).abs() <= 1e-12 * b.max(1.0));
            }
        }

        #[test]
        fn weighted_unit_equals_uncentered(vals in prop::collection::vec(0.0f64..10.0, 64)) {
            let win = win1(2, 3);
            let f = random_fn(win, vals);
            let a = maximal(&f, &MaximalVariant::Uncentered).unwrap();
            let b = maximal(&f, &MaximalVariant::Weighted(GridFunction::ones(win))).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x - y).abs() <= 1e-12 * y.max(1.0));
            }
            let c = maximal(&f, &MaximalVariant::WeightedDyadic(GridFunction::ones(win), Shift::ZERO)).unwrap();
            let d = maximal(&f, &MaximalVariant::Dyadic(Shift::ZERO)).unwrap();
            for (x, y) in c.values().iter().zip(d.values()) {
                prop_assert!((x - y).abs() <= 1e-12 * y.max(1.0));
            }
        }

        #[test]
        fn monotone_and_homogeneous(
            vals in prop::collection::vec(0.0f64..10.0, 32),
            extra in prop::collection::vec(0.0f64..3.0, 32),
            c in 0.1f64..8.0,
        ) {
            let win = win1(1, 3);
            let f = random_fn(win, vals.clone());
            let g = random_fn(win, vals.iter().zip(&extra).map(|(a, b)| a + b).collect());
            let u = random_fn(win, extra.iter().map(|e| e + 0.5).collect());
            let variants = vec![
                MaximalVariant::Uncentered,
                MaximalVariant::Centered,
                MaximalVariant::Dyadic(Shift::ZERO),
                MaximalVariant::Dyadic(Shift::from_bits(1)),
                MaximalVariant::Weighted(u.clone()),
                MaximalVariant::WeightedCentered(u.clone()),
                MaximalVariant::WeightedDyadic(u, Shift::from_bits(1)),
            ];
            for v in &variants {
                let mf = maximal(&f, v).unwrap();
                let mg = maximal(&g, v).unwrap();
                let mcf = maximal(&f.scale(c), v).unwrap();
                for i in 0..mf.len() {
                    prop_assert!(mf.values()[i] <= mg.values()[i] * (1.0 + 1e-12));
                    prop_assert!((mcf.values()[i] - c * mf.values()[i]).abs() <= 1e-12 * mcf.values()[i].max(1.0));
                }
            }
        }

        #[test]
        fn one_third_domination(vals in prop::collection::vec(0.0f64..10.0, 64), two_d in any::<bool>()) {
            let win = if two_d { Window::new(2, 0, 2).unwrap() } else { win1(2, 3) };
            let f = random_fn(win, vals);
            let mf = maximal(&f, &MaximalVariant::Uncentered).unwrap();
            let n = win.dim() as i32;
            let mut sum = vec![0.0; mf.len()];
            for shift in Shift::all(win.dim()) {
                let d = maximal(&f, &MaximalVariant::Dyadic(shift)).unwrap();
                for (s, v) in sum.iter_mut().zip(d.values()) {
                    *s += v;
                }
            }
            for (a, s) in mf.values().iter().zip(&sum) {
                prop_assert!(*a <= 6f64.powi(n) * s * (1.0 + 1e-12));
            }
        }

        #[test]
        fn multilinear_comparisons(
            a in prop::collection::vec(0.0f64..10.0, 32),
            b in prop::collection::vec(0.0f64..10.0, 32),
        ) {
            let win = win1(1, 3);
            let fs = [random_fn(win, a), random_fn(win, b)];
            let ml = multilinear_maximal(&fs, false).unwrap();
            let mlc = multilinear_maximal(&fs, true).unwrap();
            let prod = product_maximal(&fs).unwrap();
            let oracle = multilinear_maximal_oracle(&fs).unwrap();
            prop_assert_eq!(ml.values(), oracle.values());
            for i in 0..ml.len() {
                let tol = 1.0 + 1e-12;
                prop_assert!(ml.values()[i] <= prod.values()[i] * tol);
                prop_assert!(mlc.values()[i] <= ml.values()[i] * tol);
                prop_assert!(ml.values()[i] <= 9.0 * mlc.values()[i] * tol);
            }
        }
    }
}
