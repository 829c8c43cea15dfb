//! Weight-class constants computed exactly over every lattice cube of a window.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{LatticeCube, Window};
use crate::lorentz::{GridFunction, LorentzError};
use crate::numeric::{DoubleDouble, PrefixTable};
use crate::operators::{self, MaximalVariant, OperatorError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WeightError {
    #[error("bad exponent: {0}")]
    BadExponent(String),
    #[error("{expected} weights expected, got {got}")]
    Arity { expected: usize, got: usize },
    #[error("no weights supplied")]
    Empty,
    #[error(transparent)]
    Lorentz(#[from] LorentzError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
}

/// Exponents `(p_1, ..., p_m)` with `1/p = sum 1/p_i`, plus optional
/// auxiliary exponents used by individual experiments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExponentTuple {
    p_list: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
}

impl ExponentTuple {
    pub fn new(p_list: Vec<f64>) -> Result<Self, WeightError> {
        if p_list.is_empty() {
            return Err(WeightError::Empty);
        }
        if let Some(p) = p_list.iter().find(|p| !(p.is_finite() && **p >= 1.0)) {
            return Err(WeightError::BadExponent(format!("each p_i must lie in [1, inf), got {p}")));
        }
        Ok(Self { p_list, r: None, q: None, s: None, epsilon: None, theta: None, delta: None })
    }

    pub fn single(p: f64) -> Result<Self, WeightError> {
        Self::new(vec![p])
    }

    pub fn p_list(&self) -> &[f64] {
        &self.p_list
    }

    pub fn len(&self) -> usize {
        self.p_list.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_list.is_empty()
    }

    /// The harmonic combination `p` with `1/p = sum 1/p_i`.
    pub fn p(&self) -> f64 {
        1.0 / self.p_list.iter().map(|p| 1.0 / p).sum::<f64>()
    }

    /// `p_i'`, infinite when `p_i = 1`.
    pub fn conjugate(&self, i: usize) -> f64 {
        conjugate(self.p_list[i])
    }
}

pub fn conjugate(p: f64) -> f64 {
    if p == 1.0 {
        f64::INFINITY
    } else {
        p / (p - 1.0)
    }
}

/// Weights `w_1, ..., w_m` and a target weight, by default
/// `nu = prod w_i^{p/p_i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightVector {
    weights: Vec<GridFunction>,
    target: GridFunction,
}

impl WeightVector {
    pub fn new(weights: Vec<GridFunction>, exponents: &ExponentTuple) -> Result<Self, WeightError> {
        if weights.is_empty() {
            return Err(WeightError::Empty);
        }
        if weights.len() != exponents.len() {
            return Err(WeightError::Arity { expected: exponents.len(), got: weights.len() });
        }
        for w in &weights {
            weights[0].same_window(w)?;
            w.ensure_positive()?;
        }
        let p = exponents.p();
        let mut target = GridFunction::ones(*weights[0].window());
        for (w, &pi) in weights.iter().zip(exponents.p_list()) {
            target = target.mul(&w.pow(p / pi))?;
        }
        Ok(Self { weights, target })
    }

    pub fn with_target(mut self, nu: GridFunction) -> Result<Self, WeightError> {
        self.weights[0].same_window(&nu)?;
        nu.ensure_positive()?;
        self.target = nu;
        Ok(self)
    }

    pub fn weights(&self) -> &[GridFunction] {
        &self.weights
    }

    pub fn target(&self) -> &GridFunction {
        &self.target
    }

    pub fn window(&self) -> &Window {
        self.weights[0].window()
    }
}

/// Largest per-cube value and the first cube (by side, then corner) attaining it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CubeExtremum {
    pub value: f64,
    pub cube: LatticeCube,
}

/// Minima and maxima of tracked functions over the cubes of the current side.
pub(crate) struct Extremes {
    span: usize,
    mins: Vec<Vec<f64>>,
    maxs: Vec<Vec<f64>>,
}

impl Extremes {
    fn get(&self, k: usize, corner: [usize; 2], dim: usize) -> (f64, f64) {
        let idx = if dim == 1 { corner[0] } else { corner[0] * self.span + corner[1] };
        (self.mins[k][idx], self.maxs[k][idx])
    }
}

/// Iterates over every lattice cube of the window and returns the largest
/// score. `score(corner, side, extremes)` receives cell offsets and a lookup
/// for the min/max of each tracked function on the cube.
pub(crate) fn sweep_max<F>(window: &Window, tracked: &[&[f64]], score: F) -> CubeExtremum
where
    F: Fn([usize; 2], usize, &dyn Fn(usize) -> (f64, f64)) -> f64 + Sync,
{
    sweep_max_bounded(window, tracked, |_, _, _| f64::INFINITY, score)
}

/// Relative margin by which a cube's bound must fall short of the running
/// best before the cube is skipped; covers rounding in bound and score.
const PRUNE_MARGIN: f64 = 1e-9;

/// [`sweep_max`] with a cheap upper bound on `score`. Sides are swept in
/// increasing order and a cube is skipped when its bound falls strictly
/// below the best value of the smaller sides, so the result (value and
/// witness cube) is the same as without the bound.
pub(crate) fn sweep_max_bounded<B, F>(window: &Window, tracked: &[&[f64]], bound: B, score: F) -> CubeExtremum
where
    B: Fn([usize; 2], usize, &dyn Fn(usize) -> (f64, f64)) -> f64 + Sync,
    F: Fn([usize; 2], usize, &dyn Fn(usize) -> (f64, f64)) -> f64 + Sync,
{
    let dim = window.dim();
    let m = window.side_cells();
    let mut ext = Extremes {
        span: m,
        mins: tracked.iter().map(|t| t.to_vec()).collect(),
        maxs: tracked.iter().map(|t| t.to_vec()).collect(),
    };
    // (value, side, corner index) with ties to the earliest cube
    let better = |a: (f64, usize, usize), b: (f64, usize, usize)| {
        if b.0 > a.0 || (b.0 == a.0 && (b.1, b.2) < (a.1, a.2)) {
            b
        } else {
            a
        }
    };
    let mut best = (f64::NEG_INFINITY, 0usize, 0usize);
    for side in 1..=m {
        if side > 1 {
            let span = m - side + 1;
            let old = ext.span;
            let shrink = |src: &Vec<f64>, pick: fn(f64, f64) -> f64| -> Vec<f64> {
                if dim == 1 {
                    (0..span).map(|s| pick(src[s], src[s + 1])).collect()
                } else {
                    let mut out = Vec::with_capacity(span * span);
                    for a in 0..span {
                        for b in 0..span {
                            let v = pick(
                                pick(src[a * old + b], src[a * old + b + 1]),
                                pick(src[(a + 1) * old + b], src[(a + 1) * old + b + 1]),
                            );
                            out.push(v);
                        }
                    }
                    out
                }
            };
            ext.mins = ext.mins.iter().map(|v| shrink(v, f64::min)).collect();
            ext.maxs = ext.maxs.iter().map(|v| shrink(v, f64::max)).collect();
            ext.span = span;
        }
        let span = ext.span;
        let count = span.pow(dim as u32);
        let floor = best.0;
        let eval = |k: usize| {
            let corner = if dim == 1 { [k, 0] } else { [k / span, k % span] };
            let lookup = |i: usize| ext.get(i, corner, dim);
            if bound(corner, side, &lookup) * (1.0 + PRUNE_MARGIN) < floor {
                return (f64::NEG_INFINITY, side, k);
            }
            (score(corner, side, &lookup), side, k)
        };
        let local = if count >= 2048 {
            (0..count)
                .into_par_iter()
                .map(eval)
                .reduce(|| (f64::NEG_INFINITY, usize::MAX, usize::MAX), better)
        } else {
            (0..count).map(eval).fold((f64::NEG_INFINITY, usize::MAX, usize::MAX), better)
        };
        best = better(best, local);
    }
    let (value, side, k) = best;
    let span = m - side + 1;
    let offsets = if dim == 1 { vec![k] } else { vec![k / span, k % span] };
    let corner = offsets.iter().map(|&o| window.lower() + o as i64).collect();
    CubeExtremum { value, cube: LatticeCube::new(corner, side as i64) }
}

#[inline]
fn cells(dim: usize, side: usize) -> f64 {
    (side as f64).powi(dim as i32)
}

fn check_p(p: f64, min: f64) -> Result<(), WeightError> {
    if p.is_finite() && p >= min {
        Ok(())
    } else {
        Err(WeightError::BadExponent(format!("p must be finite and at least {min}, got {p}")))
    }
}

fn check_p_open(p: f64) -> Result<(), WeightError> {
    if p.is_finite() && p > 1.0 {
        Ok(())
    } else {
        Err(WeightError::BadExponent(format!("p must exceed 1, got {p}")))
    }
}

/// `[w]_{A_1}`: largest `avg_Q w / min_Q w`.
pub fn a1_constant(w: &GridFunction) -> Result<f64, WeightError> {
    Ok(a1_extremum(w)?.value)
}

pub fn a1_extremum(w: &GridFunction) -> Result<CubeExtremum, WeightError> {
    w.ensure_positive()?;
    let win = *w.window();
    let dim = win.dim();
    let t = PrefixTable::new(&win, w.values());
    Ok(sweep_max(&win, &[w.values()], |c, s, ext| {
        t.cube_sum(c, s) / cells(dim, s) / ext(0).0
    }))
}

/// `[w]_{A_p}` for `p > 1`.
pub fn ap_constant(w: &GridFunction, p: f64) -> Result<f64, WeightError> {
    check_p_open(p)?;
    w.ensure_positive()?;
    let win = *w.window();
    let dim = win.dim();
    let dual = w.pow(1.0 - conjugate(p));
    let tw = PrefixTable::new(&win, w.values());
    let td = PrefixTable::new(&win, dual.values());
    Ok(sweep_max(&win, &[], |c, s, _| {
        let n = cells(dim, s);
        let dual_avg = td.cube_sum(c, s) / n;
        (tw.cube_sum(c, s) / n) * if p == 2.0 { dual_avg } else { dual_avg.powf(p - 1.0) }
    })
    .value)
}

/// Per-cube sums of a weight restricted to its sublevel sets
/// `{w <= levels[j]}`, with cell counts, for O(1) queries at every level.
struct ThresholdTable {
    dim: usize,
    m: usize,
    levels: Vec<f64>,
    sums: Vec<DoubleDouble>,
    counts: Vec<u32>,
}

/// Beyond this many table entries the per-cube sort is used instead.
const MAX_TABLE_ENTRIES: usize = 1 << 23;

impl ThresholdTable {
    fn build(w: &GridFunction) -> Option<Self> {
        let win = w.window();
        let dim = win.dim();
        let m = win.side_cells();
        let mut levels: Vec<f64> = w.values().to_vec();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let nl = levels.len();
        let positions = (m + 1).pow(dim as u32);
        if positions.checked_mul(nl)? > MAX_TABLE_ENTRIES {
            return None;
        }
        let rank = |v: f64| levels.partition_point(|&x| x < v);
        let mut sums = vec![DoubleDouble::ZERO; positions * nl];
        let mut counts = vec![0u32; positions * nl];
        if dim == 1 {
            for (i, &v) in w.values().iter().enumerate() {
                let r = rank(v);
                for j in 0..nl {
                    let (prev, next) = (i * nl + j, (i + 1) * nl + j);
                    let add = j >= r;
                    sums[next] = if add { sums[prev].add_f64(v) } else { sums[prev] };
                    counts[next] = counts[prev] + add as u32;
                }
            }
        } else {
            let row = m + 1;
            let mut run_s = vec![DoubleDouble::ZERO; nl];
            let mut run_c = vec![0u32; nl];
            for a in 0..m {
                run_s.iter_mut().for_each(|x| *x = DoubleDouble::ZERO);
                run_c.iter_mut().for_each(|x| *x = 0);
                for b in 0..m {
                    let v = w.values()[a * m + b];
                    let r = rank(v);
                    for j in r..nl {
                        run_s[j] = run_s[j].add_f64(v);
                        run_c[j] += 1;
                    }
                    let up = (a * row + b + 1) * nl;
                    let here = ((a + 1) * row + b + 1) * nl;
                    for j in 0..nl {
                        sums[here + j] = sums[up + j].add(run_s[j]);
                        counts[here + j] = counts[up + j] + run_c[j];
                    }
                }
            }
        }
        Some(Self { dim, m, levels, sums, counts })
    }

    fn rank(&self, v: f64) -> usize {
        self.levels.partition_point(|&x| x < v)
    }

    /// Sublevel sum alone, for the weak-norm scan.
    #[inline]
    fn sum_1d(&self, corner: usize, side: usize, j: usize) -> f64 {
        let nl = self.levels.len();
        self.sums[(corner + side) * nl + j].sub(self.sums[corner * nl + j]).value()
    }

    #[inline]
    fn query(&self, corner: [usize; 2], side: usize, j: usize) -> (f64, u32) {
        let nl = self.levels.len();
        if self.dim == 1 {
            let (lo, hi) = (corner[0] * nl + j, (corner[0] + side) * nl + j);
            (self.sums[hi].sub(self.sums[lo]).value(), self.counts[hi] - self.counts[lo])
        } else {
            let row = self.m + 1;
            let at = |a: usize, b: usize| (a * row + b) * nl + j;
            let (a0, b0, a1, b1) = (corner[0], corner[1], corner[0] + side, corner[1] + side);
            let s = self.sums[at(a1, b1)]
                .sub(self.sums[at(a0, b1)])
                .sub(self.sums[at(a1, b0)])
                .add(self.sums[at(a0, b0)])
                .value();
            let c = self.counts[at(a1, b1)] + self.counts[at(a0, b0)]
                - self.counts[at(a0, b1)]
                - self.counts[at(a1, b0)];
            (s, c)
        }
    }
}

/// Sublevel-set scan of one cube: `(level, sum of w over {w <= level}, count)`
/// for each distinct level, ascending. Sums in cell-mass units.
fn sublevel_scan(w: &GridFunction, corner: [usize; 2], side: usize) -> Vec<(f64, f64, u32)> {
    let mut vals: Vec<f64> = operators::box_cells(w.window(), corner, side)
        .into_iter()
        .map(|c| w.values()[c])
        .collect();
    vals.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut acc = DoubleDouble::ZERO;
    let mut i = 0;
    while i < vals.len() {
        let v = vals[i];
        while i < vals.len() && vals[i] == v {
            acc = acc.add_f64(v);
            i += 1;
        }
        out.push((v, acc.value(), i as u32));
    }
    out
}

/// Levels per block in [`blocked_argmax`].
const LEVEL_BLOCK: usize = 32;

/// Largest `eval(j)` over `lo..=hi`, lowest index on ties. Levels are grouped
/// in blocks; `bound(start, end)` must dominate `eval` on `start..=end`, and a
/// block is expanded only when its bound can reach the running best.
fn blocked_argmax(
    lo: usize,
    hi: usize,
    eval: impl Fn(usize) -> f64,
    bound: impl Fn(usize, usize) -> f64,
) -> (f64, usize) {
    let mut best = (f64::NEG_INFINITY, lo);
    let offer = |r: f64, j: usize, best: &mut (f64, usize)| {
        if r > best.0 || (r == best.0 && j < best.1) {
            *best = (r, j);
        }
    };
    if hi + 1 - lo <= 2 * LEVEL_BLOCK {
        for j in lo..=hi {
            offer(eval(j), j, &mut best);
        }
        return best;
    }
    let starts: Vec<usize> = (lo..=hi).step_by(LEVEL_BLOCK).collect();
    for &s in &starts {
        offer(eval(s), s, &mut best);
    }
    for &s in &starts {
        let e = (s + LEVEL_BLOCK - 1).min(hi);
        // slack covers rounding in the monotone sums
        if bound(s, e) * (1.0 + 1e-12) >= best.0 {
            for j in s + 1..=e {
                offer(eval(j), j, &mut best);
            }
        }
    }
    best
}

/// Evaluates `||chi_Q w^{-1}||_{L^{p',inf}(w)}` and the double-bar inner
/// supremum for one weight, with or without threshold tables.
struct WeakDual<'a> {
    w: &'a GridFunction,
    table: Option<ThresholdTable>,
    count_pow: Vec<f64>,
    /// `level^{-p'}` for each table level.
    inv_level_pow: Vec<f64>,
    p: f64,
}

/// Best threshold for one cube: the weak-norm value (cell units, before the
/// `1/|Q|` factor) and the sublevel level attaining it.
#[derive(Debug, Clone, Copy)]
struct Threshold {
    value: f64,
    level: f64,
}

impl<'a> WeakDual<'a> {
    fn new(w: &'a GridFunction, p: f64, use_table: bool) -> Self {
        let table = if use_table { ThresholdTable::build(w) } else { None };
        let n = w.len();
        let count_pow = (0..=n).map(|c| (c as f64).powf(p)).collect();
        let inv_level_pow = match (&table, p > 1.0) {
            (Some(t), true) => t.levels.iter().map(|l| l.powf(-conjugate(p))).collect(),
            _ => Vec::new(),
        };
        Self { w, table, count_pow, inv_level_pow, p }
    }

    /// `max_t t^{-1} W_{<=t}(Q)^{1/p'}` with `W` in cell-mass units.
    fn weak(&self, corner: [usize; 2], side: usize, min: f64, max: f64) -> Threshold {
        if self.p == 1.0 {
            return Threshold { value: 1.0 / min, level: min };
        }
        let pc = conjugate(self.p);
        let mut best = (f64::NEG_INFINITY, min);
        match &self.table {
            Some(t) => {
                let sum = |j: usize| {
                    if t.dim == 1 {
                        t.sum_1d(corner[0], side, j)
                    } else {
                        t.query(corner, side, j).0
                    }
                };
                let inv = &self.inv_level_pow;
                let (r, j) = blocked_argmax(
                    t.rank(min),
                    t.rank(max),
                    |j| sum(j) * inv[j],
                    |start, end| sum(end) * inv[start],
                );
                best = (r, t.levels[j]);
            }
            None => {
                for (level, s, _) in sublevel_scan(self.w, corner, side) {
                    let r = s / level.powf(pc);
                    if r > best.0 {
                        best = (r, level);
                    }
                }
            }
        }
        Threshold { value: best.0.powf(1.0 / pc), level: best.1 }
    }

    /// `sup_{E in Q} |E| w(E)^{-1/p}` in cell units.
    fn double_bar(&self, corner: [usize; 2], side: usize, min: f64, max: f64) -> Threshold {
        let mut best = (f64::NEG_INFINITY, min);
        match &self.table {
            Some(t) => {
                let (r, j) = blocked_argmax(
                    t.rank(min),
                    t.rank(max),
                    |j| {
                        let (s, c) = t.query(corner, side, j);
                        self.count_pow[c as usize] / s
                    },
                    |start, end| self.count_pow[t.query(corner, side, end).1 as usize] / t.query(corner, side, start).0,
                );
                best = (r, t.levels[j]);
            }
            None => {
                for (level, s, c) in sublevel_scan(self.w, corner, side) {
                    let r = self.count_pow[c as usize] / s;
                    if r > best.0 {
                        best = (r, level);
                    }
                }
            }
        }
        Threshold { value: best.0.powf(1.0 / self.p), level: best.1 }
    }
}

/// Extremal cube of the bracket constant with the sublevel threshold that
/// realizes the weak norm there.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BracketWitness {
    pub value: f64,
    pub cube: LatticeCube,
    pub levels: Vec<f64>,
}

/// `[w]_{A_p^R} = sup_Q w(Q)^{1/p} ||chi_Q w^{-1}||_{L^{p',inf}(w)} / |Q|`.
pub fn apr_bracket(w: &GridFunction, p: f64) -> Result<f64, WeightError> {
    Ok(apr_bracket_witness(w, p)?.value)
}

pub fn apr_bracket_witness(w: &GridFunction, p: f64) -> Result<BracketWitness, WeightError> {
    let ones = ExponentTuple::single(p)?;
    let wv = WeightVector::new(vec![w.clone()], &ones)?.with_target(w.clone())?;
    multilinear_bracket_witness(&wv, &ones)
}

/// `||w||_{A_p^R} = sup_Q sup_{E in Q} (|E|/|Q|)(w(Q)/w(E))^{1/p}`.
pub fn apr_double(w: &GridFunction, p: f64) -> Result<f64, WeightError> {
    let ones = ExponentTuple::single(p)?;
    let wv = WeightVector::new(vec![w.clone()], &ones)?.with_target(w.clone())?;
    multilinear_apr(&wv, &ones, AprVariant::DoubleBar)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AprVariant {
    Bracket,
    DoubleBar,
}

pub fn multilinear_apr(
    wv: &WeightVector,
    exponents: &ExponentTuple,
    variant: AprVariant,
) -> Result<f64, WeightError> {
    Ok(multilinear_apr_impl(wv, exponents, variant, true)?.value)
}

/// Same as [`multilinear_apr`] but evaluating every cube by sorting its cells.
pub fn multilinear_apr_direct(
    wv: &WeightVector,
    exponents: &ExponentTuple,
    variant: AprVariant,
) -> Result<f64, WeightError> {
    Ok(multilinear_apr_impl(wv, exponents, variant, false)?.value)
}

pub fn multilinear_bracket_witness(
    wv: &WeightVector,
    exponents: &ExponentTuple,
) -> Result<BracketWitness, WeightError> {
    multilinear_apr_impl(wv, exponents, AprVariant::Bracket, true)
}

fn multilinear_apr_impl(
    wv: &WeightVector,
    exponents: &ExponentTuple,
    variant: AprVariant,
    use_table: bool,
) -> Result<BracketWitness, WeightError> {
    let ws = wv.weights();
    if ws.len() != exponents.len() {
        return Err(WeightError::Arity { expected: exponents.len(), got: ws.len() });
    }
    let win = *wv.window();
    let dim = win.dim();
    let p = exponents.p();
    let nu_table = PrefixTable::new(&win, wv.target().values());
    let duals: Vec<WeakDual> = ws
        .iter()
        .zip(exponents.p_list())
        .map(|(w, &pi)| WeakDual::new(w, pi, use_table))
        .collect();
    let tracked: Vec<&[f64]> = ws.iter().map(|w| w.values()).collect();
    let score = |c: [usize; 2], s: usize, ext: &dyn Fn(usize) -> (f64, f64)| {
        let n = cells(dim, s);
        let mut v = nu_table.cube_sum(c, s).powf(1.0 / p);
        for (i, d) in duals.iter().enumerate() {
            let (lo, hi) = ext(i);
            let t = match variant {
                AprVariant::Bracket => d.weak(c, s, lo, hi),
                AprVariant::DoubleBar => d.double_bar(c, s, lo, hi),
            };
            v *= t.value / n;
        }
        v
    };
    // each factor is at most min_Q(w_i)^{-1/p_i} |Q|^{-1/p_i}
    let inv_p: Vec<f64> = exponents.p_list().iter().map(|pi| -1.0 / pi).collect();
    let bound = |c: [usize; 2], s: usize, ext: &dyn Fn(usize) -> (f64, f64)| {
        let mut b = (nu_table.cube_sum(c, s) / cells(dim, s)).powf(1.0 / p);
        for (i, e) in inv_p.iter().enumerate() {
            b *= ext(i).0.powf(*e);
        }
        b
    };
    let best = sweep_max_bounded(&win, &tracked, bound, score);
    // recover the per-weight thresholds on the extremal cube
    let offsets = best.cube.offsets(&win);
    let side = best.cube.side as usize;
    let levels = duals
        .iter()
        .zip(ws)
        .map(|(d, w)| {
            let vals: Vec<f64> =
                operators::box_cells(&win, offsets, side).into_iter().map(|c| w.values()[c]).collect();
            let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = vals.iter().copied().fold(0.0, f64::max);
            match variant {
                AprVariant::Bracket => d.weak(offsets, side, lo, hi).level,
                AprVariant::DoubleBar => d.double_bar(offsets, side, lo, hi).level,
            }
        })
        .collect();
    Ok(BracketWitness { value: best.value, cube: best.cube, levels })
}

/// Classical `[w]_{A_P}`; factors with `p_i = 1` use the essential infimum.
pub fn multilinear_ap(wv: &WeightVector, exponents: &ExponentTuple) -> Result<f64, WeightError> {
    let ws = wv.weights();
    if ws.len() != exponents.len() {
        return Err(WeightError::Arity { expected: exponents.len(), got: ws.len() });
    }
    let win = *wv.window();
    let dim = win.dim();
    let p = exponents.p();
    let nu_table = PrefixTable::new(&win, wv.target().values());
    let duals: Vec<Option<PrefixTable>> = ws
        .iter()
        .zip(exponents.p_list())
        .map(|(w, &pi)| {
            (pi > 1.0).then(|| PrefixTable::new(&win, w.pow(1.0 - conjugate(pi)).values()))
        })
        .collect();
    let tracked: Vec<&[f64]> = ws.iter().map(|w| w.values()).collect();
    Ok(sweep_max(&win, &tracked, |c, s, ext| {
        let n = cells(dim, s);
        let mut v = (nu_table.cube_sum(c, s) / n).powf(1.0 / p);
        for (i, (d, &pi)) in duals.iter().zip(exponents.p_list()).enumerate() {
            v *= match d {
                Some(t) => (t.cube_sum(c, s) / n).powf(1.0 / conjugate(pi)),
                None => 1.0 / ext(i).0,
            };
        }
        v
    })
    .value)
}

/// Fujii-Wilson constant `sup_Q w(Q)^{-1} integral over Q of M(w chi_Q)`.
///
/// Inside `Q` the maximal function of `w chi_Q` only needs cubes contained in
/// `Q`: a cube poking out can be replaced by a cube inside `Q` holding its
/// intersection with `Q`. Cubes are visited in order of an upper bound and
/// the scan stops once no remaining bound can beat the running maximum.
pub fn fujii_wilson(w: &GridFunction) -> Result<f64, WeightError> {
    w.ensure_positive()?;
    let win = *w.window();
    let dim = win.dim();
    let m = win.side_cells();
    let table = PrefixTable::new(&win, w.values());
    let global = operators::maximal(w, &MaximalVariant::Uncentered)?;
    let mtable = PrefixTable::new(&win, global.values());

    let mut candidates: Vec<(f64, usize, [usize; 2])> = Vec::new();
    for side in 1..=m {
        let span = m - side + 1;
        for k in 0..span.pow(dim as u32) {
            let corner = if dim == 1 { [k, 0] } else { [k / span, k % span] };
            let bound = mtable.cube_sum(corner, side) / table.cube_sum(corner, side);
            candidates.push((bound, side, corner));
        }
    }
    candidates.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));

    let exact = |&(_, side, corner): &(f64, usize, [usize; 2])| {
        let local = operators::touching_sup(
            dim,
            side,
            |c, s| table.cube_sum([corner[0] + c[0], corner[1] + c[1]], s) / cells(dim, s),
            false,
        );
        crate::numeric::sum(local) / table.cube_sum(corner, side)
    };
    let mut best = f64::NEG_INFINITY;
    for chunk in candidates.chunks(512) {
        if chunk[0].0 <= best {
            break;
        }
        let live: Vec<_> = chunk.iter().filter(|c| c.0 > best).collect();
        let v = live.par_iter().map(|c| exact(c)).reduce(|| f64::NEG_INFINITY, f64::max);
        best = best.max(v);
    }
    Ok(best)
}

/// `[w]_{RH_s} = sup_Q (avg_Q w^s)^{1/s} / avg_Q w` for `s > 1`.
pub fn rh_constant(w: &GridFunction, s: f64) -> Result<f64, WeightError> {
    check_p_open(s)?;
    w.ensure_positive()?;
    let win = *w.window();
    let dim = win.dim();
    let tw = PrefixTable::new(&win, w.values());
    let ts = PrefixTable::new(&win, w.pow(s).values());
    Ok(sweep_max(&win, &[], |c, side, _| {
        let n = cells(dim, side);
        (ts.cube_sum(c, side) / n).powf(1.0 / s) / (tw.cube_sum(c, side) / n)
    })
    .value)
}

/// `[w]_{RH_inf} = sup_Q max_Q w / avg_Q w`.
pub fn rh_inf(w: &GridFunction) -> Result<f64, WeightError> {
    w.ensure_positive()?;
    let win = *w.window();
    let dim = win.dim();
    let tw = PrefixTable::new(&win, w.values());
    Ok(sweep_max(&win, &[w.values()], |c, s, ext| ext(0).1 / (tw.cube_sum(c, s) / cells(dim, s)))
        .value)
}

/// `[v^{-eps}]_{RH_inf(w)} = sup_Q (w(Q) / (w v^{-eps})(Q)) max_Q v^{-eps}`.
pub fn rh_inf_weighted(v: &GridFunction, w: &GridFunction, epsilon: f64) -> Result<f64, WeightError> {
    v.ensure_positive()?;
    w.ensure_positive()?;
    let win = *w.window();
    let g = v.pow(-epsilon);
    let tw = PrefixTable::new(&win, w.values());
    let tgw = PrefixTable::new(&win, g.mul(w)?.values());
    Ok(sweep_max(&win, &[g.values()], |c, s, ext| tw.cube_sum(c, s) / tgw.cube_sum(c, s) * ext(0).1)
        .value)
}

/// `[v]_{A_p(u)}` for `p > 1`, and `[v]_{A_1(u)}` for `p = 1`.
pub fn base_weighted_constants(v: &GridFunction, u: &GridFunction, p: f64) -> Result<f64, WeightError> {
    check_p(p, 1.0)?;
    v.ensure_positive()?;
    u.ensure_positive()?;
    let win = *u.window();
    let tu = PrefixTable::new(&win, u.values());
    let tvu = PrefixTable::new(&win, v.mul(u)?.values());
    if p == 1.0 {
        return Ok(sweep_max(&win, &[v.values()], |c, s, ext| {
            tvu.cube_sum(c, s) / tu.cube_sum(c, s) / ext(0).0
        })
        .value);
    }
    let tdu = PrefixTable::new(&win, v.pow(1.0 - conjugate(p)).mul(u)?.values());
    Ok(sweep_max(&win, &[], |c, s, _| {
        let base = tu.cube_sum(c, s);
        (tvu.cube_sum(c, s) / base) * (tdu.cube_sum(c, s) / base).powf(p - 1.0)
    })
    .value)
}

/// Smallest `r` on a fixed grid in `(1, 8]` for which `[u]_{A_r}` stays
/// below `cap`, with the constant found there.
pub fn smallest_ap_exponent(u: &GridFunction, cap: f64) -> Result<Option<(f64, f64)>, WeightError> {
    for k in 1..=70 {
        let r = 1.0 + 0.1 * k as f64;
        let c = ap_constant(u, r)?;
        if c <= cap {
            return Ok(Some((r, c)));
        }
    }
    Ok(None)
}
