//! Dyadic lattice geometry: windows, cells, shifted dyadic grids and the
//! one-third covering trick.
//!
//! Positions are kept in integer units. Lattice cubes use units of one cell
//! (`2^-K`); dyadic cubes, whose shifted endpoints fall on thirds of a cell,
//! are measured in units of a third of a cell.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Default ceiling on the number of cells in a window.
pub const DEFAULT_MAX_CELLS: usize = 1 << 22;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GridError {
    #[error("dimension must be 1 or 2, got {0}")]
    BadDimension(usize),
    #[error("window with {cells} cells exceeds the limit of {limit}")]
    TooManyCells { cells: u128, limit: usize },
    #[error("cube is not inside the window")]
    OutsideWindow,
    #[error("no shifted dyadic cube of side at most 6x covers {0}")]
    CoverNotFound(String),
}

/// The computational domain `[-2^L, 2^L)^n` cut into cells of side `2^-K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Window {
    dim: usize,
    resolution: u32,
    half_extent: u32,
}

impl Window {
    pub fn new(dim: usize, resolution: u32, half_extent: u32) -> Result<Self, GridError> {
        Self::with_limit(dim, resolution, half_extent, DEFAULT_MAX_CELLS)
    }

    pub fn with_limit(
        dim: usize,
        resolution: u32,
        half_extent: u32,
        limit: usize,
    ) -> Result<Self, GridError> {
        if dim != 1 && dim != 2 {
            return Err(GridError::BadDimension(dim));
        }
        let exp = (half_extent as u128 + 1 + resolution as u128) * dim as u128;
        let cells = if exp >= 100 { u128::MAX } else { 1u128 << exp };
        if cells > limit as u128 {
            return Err(GridError::TooManyCells { cells, limit });
        }
        Ok(Self { dim, resolution, half_extent })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// `K`: cells have side `2^-K`.
    pub fn resolution(&self) -> u32 {
        self.resolution
    }

    /// `L`: the window is `[-2^L, 2^L)^n`.
    pub fn half_extent(&self) -> u32 {
        self.half_extent
    }

    /// Cells along one axis.
    pub fn side_cells(&self) -> usize {
        1usize << (self.half_extent + 1 + self.resolution)
    }

    pub fn cell_count(&self) -> usize {
        self.side_cells().pow(self.dim as u32)
    }

    pub fn cell_side(&self) -> f64 {
        (-(self.resolution as f64)).exp2()
    }

    pub fn cell_volume(&self) -> f64 {
        self.cell_side().powi(self.dim as i32)
    }

    /// Lattice coordinate of the window's lower corner, `-2^(L+K)`.
    pub fn lower(&self) -> i64 {
        -(1i64 << (self.half_extent + self.resolution))
    }

    /// Lattice coordinate one past the window's upper corner.
    pub fn upper(&self) -> i64 {
        1i64 << (self.half_extent + self.resolution)
    }

    /// Row-major flat index of a cell given per-axis offsets from the lower corner.
    pub fn flat_index(&self, offsets: [usize; 2]) -> usize {
        match self.dim {
            1 => offsets[0],
            _ => offsets[0] * self.side_cells() + offsets[1],
        }
    }

    pub fn offsets(&self, flat: usize) -> [usize; 2] {
        match self.dim {
            1 => [flat, 0],
            _ => {
                let m = self.side_cells();
                [flat / m, flat % m]
            }
        }
    }

    /// Real-valued center of a cell.
    pub fn cell_center(&self, flat: usize) -> [f64; 2] {
        let o = self.offsets(flat);
        let h = self.cell_side();
        let lo = self.lower() as f64 * h;
        let mut c = [0.0; 2];
        for axis in 0..self.dim {
            c[axis] = lo + (o[axis] as f64 + 0.5) * h;
        }
        c
    }

    /// Every cell as a unit lattice cube, in lexicographic order.
    pub fn cells(&self) -> Vec<LatticeCube> {
        (0..self.cell_count())
            .map(|flat| {
                let o = self.offsets(flat);
                let corner = (0..self.dim).map(|a| self.lower() + o[a] as i64).collect();
                LatticeCube { corner, side: 1 }
            })
            .collect()
    }

    /// All lattice cubes inside the window, ordered by side then corner.
    pub fn lattice_cubes(&self) -> impl Iterator<Item = LatticeCube> + '_ {
        let m = self.side_cells();
        let dim = self.dim;
        let lower = self.lower();
        (1..=m).flat_map(move |side| {
            let span = m - side + 1;
            let count = span.pow(dim as u32);
            (0..count).map(move |i| {
                let corner = if dim == 1 {
                    vec![lower + i as i64]
                } else {
                    vec![lower + (i / span) as i64, lower + (i % span) as i64]
                };
                LatticeCube { corner, side: side as i64 }
            })
        })
    }

    pub fn contains(&self, cube: &LatticeCube) -> bool {
        cube.corner.len() == self.dim
            && cube.side >= 1
            && cube
                .corner
                .iter()
                .all(|&c| c >= self.lower() && c + cube.side <= self.upper())
    }
}

/// An axis-aligned cube with corner and side on the cell lattice.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LatticeCube {
    /// Lower corner in cell units (absolute, so negative values are common).
    pub corner: Vec<i64>,
    /// Side length in cells.
    pub side: i64,
}

impl LatticeCube {
    pub fn new(corner: Vec<i64>, side: i64) -> Self {
        Self { corner, side }
    }

    /// Builds the lattice cube `[lo, lo + side)^n` from real coordinates.
    /// Coordinates must already sit on the lattice.
    pub fn from_real(window: &Window, lo: &[f64], side: f64) -> Option<Self> {
        let scale = (window.resolution() as f64).exp2();
        let s = side * scale;
        if s.fract() != 0.0 || s < 1.0 {
            return None;
        }
        let mut corner = Vec::with_capacity(lo.len());
        for &x in lo {
            let c = x * scale;
            if c.fract() != 0.0 {
                return None;
            }
            corner.push(c as i64);
        }
        Some(Self { corner, side: s as i64 })
    }

    pub fn dim(&self) -> usize {
        self.corner.len()
    }

    /// Per-axis offsets of the corner from the window's lower corner.
    pub fn offsets(&self, window: &Window) -> [usize; 2] {
        let mut o = [0usize; 2];
        for (axis, &c) in self.corner.iter().enumerate() {
            o[axis] = (c - window.lower()) as usize;
        }
        o
    }

    pub fn real_side(&self, window: &Window) -> f64 {
        self.side as f64 * window.cell_side()
    }

    pub fn volume(&self, window: &Window) -> f64 {
        self.real_side(window).powi(self.dim() as i32)
    }

    /// Corner and side scaled to thirds of a cell.
    pub fn thirds(&self) -> (Vec<i64>, i64) {
        (self.corner.iter().map(|c| 3 * c).collect(), 3 * self.side)
    }

    /// Flat indices of the cells inside this cube.
    pub fn cell_indices(&self, window: &Window) -> Vec<usize> {
        let o = self.offsets(window);
        let s = self.side as usize;
        match self.dim() {
            1 => (o[0]..o[0] + s).collect(),
            _ => {
                let mut out = Vec::with_capacity(s * s);
                for a in o[0]..o[0] + s {
                    for b in o[1]..o[1] + s {
                        out.push(window.flat_index([a, b]));
                    }
                }
                out
            }
        }
    }
}

impl std::fmt::Display for LatticeCube {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "cube(corner={:?}, side={})", self.corner, self.side)
    }
}

/// A shift vector with entries in `{0, 1/3}`, stored as a bit per axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Shift(u8);

impl Shift {
    pub const ZERO: Shift = Shift(0);

    pub fn from_bits(bits: u8) -> Self {
        Shift(bits & 0b11)
    }

    /// Uniform shift: all axes at 0 or all at 1/3.
    pub fn uniform(third: bool, dim: usize) -> Self {
        if third {
            Shift(((1u16 << dim) - 1) as u8)
        } else {
            Shift(0)
        }
    }

    pub fn bits(&self) -> u8 {
        self.0
    }

    /// The `2^n` shifts for a dimension, zero shift first.
    pub fn all(dim: usize) -> impl Iterator<Item = Shift> {
        (0..(1u8 << dim)).map(Shift)
    }

    /// Numerator over 3 of the shift along `axis` (0 or 1).
    pub fn thirds(&self, axis: usize) -> i64 {
        ((self.0 >> axis) & 1) as i64
    }

    pub fn is_zero(&self) -> bool {
        self.0 == 0
    }
}

impl Serialize for Shift {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(self.0)
    }
}

impl<'de> Deserialize<'de> for Shift {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let bits = u8::deserialize(d)?;
        if bits > 3 {
            return Err(serde::de::Error::custom("shift bits must be in 0..=3"));
        }
        Ok(Shift(bits))
    }
}

/// A cube `2^k([0,1)^n + j + (-1)^k alpha)` of a shifted dyadic grid.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DyadicCube {
    pub shift: Shift,
    pub scale: i32,
    pub index: Vec<i64>,
}

impl DyadicCube {
    pub fn dim(&self) -> usize {
        self.index.len()
    }

    /// Side in thirds of a cell: `3 * 2^(k+K)`.
    pub fn side_thirds(&self, window: &Window) -> i64 {
        3 * self.unit(window)
    }

    fn unit(&self, window: &Window) -> i64 {
        let e = self.scale + window.resolution() as i32;
        debug_assert!(e >= 0, "cube finer than the lattice");
        1i64 << e
    }

    /// Lower corner in thirds of a cell.
    pub fn lower_thirds(&self, window: &Window) -> Vec<i64> {
        let u = self.unit(window);
        self.index
            .iter()
            .enumerate()
            .map(|(axis, &j)| u * (3 * j + signed_third(self.scale, self.shift.thirds(axis))))
            .collect()
    }

    pub fn real_side(&self) -> f64 {
        (self.scale as f64).exp2()
    }

    pub fn volume(&self) -> f64 {
        self.real_side().powi(self.dim() as i32)
    }

    /// Real lower and upper bounds along each axis.
    pub fn bounds(&self) -> Vec<(f64, f64)> {
        let s = self.real_side();
        self.index
            .iter()
            .enumerate()
            .map(|(axis, &j)| {
                let a = signed_third(self.scale, self.shift.thirds(axis)) as f64;
                let lo = s * (j as f64 + a / 3.0);
                (lo, lo + s)
            })
            .collect()
    }

    pub fn contains_cube(&self, other: &DyadicCube, window: &Window) -> bool {
        let (a, sa) = (self.lower_thirds(window), self.side_thirds(window));
        let (b, sb) = (other.lower_thirds(window), other.side_thirds(window));
        a.iter().zip(&b).all(|(&x, &y)| x <= y && y + sb <= x + sa)
    }

    /// Positive-measure overlap.
    pub fn overlaps(&self, other: &DyadicCube, window: &Window) -> bool {
        let (a, sa) = (self.lower_thirds(window), self.side_thirds(window));
        let (b, sb) = (other.lower_thirds(window), other.side_thirds(window));
        a.iter().zip(&b).all(|(&x, &y)| x < y + sb && y < x + sa)
    }

    pub fn covers_lattice(&self, cube: &LatticeCube, window: &Window) -> bool {
        let lo = self.lower_thirds(window);
        let s = self.side_thirds(window);
        let (q, qs) = cube.thirds();
        lo.iter().zip(&q).all(|(&x, &y)| x <= y && y + qs <= x + s)
    }

    /// The parent cube one scale up in the same grid.
    pub fn parent(&self) -> DyadicCube {
        let up = self.scale + 1;
        DyadicCube {
            shift: self.shift,
            scale: up,
            index: self
                .index
                .iter()
                .enumerate()
                .map(|(axis, &j)| (j - signed_third(up, self.shift.thirds(axis))).div_euclid(2))
                .collect(),
        }
    }

    /// The `2^n` children one scale down.
    pub fn children(&self) -> Vec<DyadicCube> {
        let dim = self.dim();
        (0..(1usize << dim))
            .map(|mask| DyadicCube {
                shift: self.shift,
                scale: self.scale - 1,
                index: self
                    .index
                    .iter()
                    .enumerate()
                    .map(|(axis, &j)| {
                        2 * j
                            + signed_third(self.scale, self.shift.thirds(axis))
                            + ((mask >> axis) & 1) as i64
                    })
                    .collect(),
            })
            .collect()
    }
}

/// Shift numerator (over 3) at a given scale. The sign alternates with the
/// scale so that shifted cubes of consecutive scales nest.
pub(crate) fn signed_third(scale: i32, third: i64) -> i64 {
    if scale.rem_euclid(2) == 0 {
        third
    } else {
        -third
    }
}

impl std::fmt::Display for DyadicCube {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let b = self.bounds();
        let parts: Vec<String> = b.iter().map(|(lo, hi)| format!("[{lo}, {hi})")).collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// Every cube of the shifted grid with side in `[2^-K, 2^(L+2)]` meeting the
/// window in positive measure. Ordered by scale, then index.
pub fn enumerate_dyadic(window: &Window, shift: Shift) -> Vec<DyadicCube> {
    let mut out = Vec::new();
    let k_min = -(window.resolution() as i32);
    let k_max = window.half_extent() as i32 + 2;
    for scale in k_min..=k_max {
        let ranges: Vec<Vec<i64>> = (0..window.dim())
            .map(|axis| axis_indices(window, scale, signed_third(scale, shift.thirds(axis))))
            .collect();
        match window.dim() {
            1 => {
                for &j in &ranges[0] {
                    out.push(DyadicCube { shift, scale, index: vec![j] });
                }
            }
            _ => {
                for &j0 in &ranges[0] {
                    for &j1 in &ranges[1] {
                        out.push(DyadicCube { shift, scale, index: vec![j0, j1] });
                    }
                }
            }
        }
    }
    out
}

/// Indices `j` along one axis whose cube at `scale` meets the window.
pub(crate) fn axis_indices(window: &Window, scale: i32, third: i64) -> Vec<i64> {
    let u = 1i64 << (scale + window.resolution() as i32);
    let lo = 3 * window.lower();
    let hi = 3 * window.upper();
    let start = lo.div_euclid(3 * u) - 2;
    let end = hi.div_euclid(3 * u) + 2;
    (start..=end)
        .filter(|&j| {
            let a = u * (3 * j + third);
            a < hi && a + 3 * u > lo
        })
        .collect()
}

/// Finds the smallest shifted dyadic cube containing `cube`, with side at most
/// six times the side of `cube`. Ties go to the zero shift first.
pub fn third_trick_cover(
    window: &Window,
    cube: &LatticeCube,
) -> Result<(Shift, DyadicCube), GridError> {
    if !window.contains(cube) {
        return Err(GridError::OutsideWindow);
    }
    let (q, qs) = cube.thirds();
    let k_max = window.half_extent() as i32 + 2;
    let k_min = -(window.resolution() as i32);
    for scale in k_min..=k_max {
        let u = 1i64 << (scale + window.resolution() as i32);
        if u < cube.side {
            continue;
        }
        if u > 6 * cube.side {
            break;
        }
        for shift in Shift::all(window.dim()) {
            let mut index = Vec::with_capacity(window.dim());
            let mut ok = true;
            for axis in 0..window.dim() {
                let a = signed_third(scale, shift.thirds(axis));
                // the only candidate is the cube of this scale holding the lower corner
                let j = (q[axis] - u * a).div_euclid(3 * u);
                let lo = u * (3 * j + a);
                if !(lo <= q[axis] && q[axis] + qs <= lo + 3 * u) {
                    ok = false;
                    break;
                }
                index.push(j);
            }
            if ok {
                return Ok((shift, DyadicCube { shift, scale, index }));
            }
        }
    }
    Err(GridError::CoverNotFound(cube.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn w(n: usize, k: u32, l: u32) -> Window {
        Window::new(n, k, l).unwrap()
    }

    fn real_bounds(window: &Window, c: &LatticeCube) -> Vec<(f64, f64)> {
        let h = window.cell_side();
        c.corner.iter().map(|&x| (x as f64 * h, (x + c.side) as f64 * h)).collect()
    }

    #[test]
    fn cells_one_dim_unit() {
        let win = w(1, 0, 1);
        let cells = win.cells();
        let b: Vec<_> = cells.iter().map(|c| real_bounds(&win, c)[0]).collect();
        assert_eq!(b, vec![(-2.0, -1.0), (-1.0, 0.0), (0.0, 1.0), (1.0, 2.0)]);
    }

    #[test]
    fn cells_half_width() {
        let win = w(1, 1, 0);
        let b: Vec<_> = win.cells().iter().map(|c| real_bounds(&win, c)[0]).collect();
        assert_eq!(b, vec![(-1.0, -0.5), (-0.5, 0.0), (0.0, 0.5), (0.5, 1.0)]);
    }

    #[test]
    fn cells_two_dim() {
        let win = w(2, 0, 0);
        let b: Vec<_> = win.cells().iter().map(|c| real_bounds(&win, c)).collect();
        assert_eq!(
            b,
            vec![
                vec![(-1.0, 0.0), (-1.0, 0.0)],
                vec![(-1.0, 0.0), (0.0, 1.0)],
                vec![(0.0, 1.0), (-1.0, 0.0)],
                vec![(0.0, 1.0), (0.0, 1.0)],
            ]
        );
    }

    #[test]
    fn window_limits() {
        assert!(matches!(Window::new(3, 0, 0), Err(GridError::BadDimension(3))));
        assert!(matches!(Window::new(2, 10, 10), Err(GridError::TooManyCells { .. })));
        assert!(Window::new(1, 10, 10).is_ok());
    }

    #[test]
    fn lattice_cube_count() {
        let win = w(1, 1, 1);
        let m = win.side_cells();
        assert_eq!(win.lattice_cubes().count(), m * (m + 1) / 2);
        let win2 = w(2, 0, 1);
        let m2 = win2.side_cells();
        let expect: usize = (1..=m2).map(|s| (m2 - s + 1).pow(2)).sum();
        assert_eq!(win2.lattice_cubes().count(), expect);
        assert!(win2.lattice_cubes().all(|c| win2.contains(&c)));
    }

    #[test]
    fn standard_grid_contents() {
        let win = w(1, 0, 1);
        let cubes = enumerate_dyadic(&win, Shift::ZERO);
        let bounds: Vec<_> = cubes.iter().map(|c| c.bounds()[0]).collect();
        for b in [(0.0, 1.0), (-2.0, 0.0), (0.0, 2.0), (-4.0, 0.0), (0.0, 4.0)] {
            assert!(bounds.contains(&b), "missing {b:?}");
        }
        // per-scale tally: scales 0,1 tile the window; scales 2,3 split at the origin
        assert_eq!(cubes.len(), 4 + 2 + 2 + 2);
    }

    #[test]
    fn shifted_grid_contents() {
        let win = w(1, 0, 1);
        let cubes = enumerate_dyadic(&win, Shift::uniform(true, 1));
        let bounds: Vec<_> = cubes.iter().map(|c| c.bounds()[0]).collect();
        let close = |a: (f64, f64), b: (f64, f64)| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12;
        for b in [(1.0 / 3.0, 4.0 / 3.0), (-2.0 / 3.0, 1.0 / 3.0), (-2.0 / 3.0, 4.0 / 3.0)] {
            assert!(bounds.iter().any(|&x| close(x, b)), "missing {b:?}");
        }
    }

    /// Brute-force count from the real-valued formula over a wide index range.
    fn brute_count(win: &Window, shift: Shift) -> usize {
        let (lo, hi) = (-(win.half_extent() as f64).exp2(), (win.half_extent() as f64).exp2());
        let mut count = 0;
        for k in -(win.resolution() as i32)..=(win.half_extent() as i32 + 2) {
            let s = (k as f64).exp2();
            let per_axis: Vec<usize> = (0..win.dim())
                .map(|axis| {
                    let a = signed_third(k, shift.thirds(axis)) as f64 / 3.0;
                    (-5000i64..5000)
                        .filter(|&j| {
                            let x0 = s * (j as f64 + a);
                            x0 < hi && x0 + s > lo
                        })
                        .count()
                })
                .collect();
            count += per_axis.iter().product::<usize>();
        }
        count
    }

    #[test]
    fn enumeration_matches_brute_force() {
        for (n, k, l) in [(1, 0, 1), (1, 2, 1), (1, 1, 3), (2, 1, 1)] {
            let win = w(n, k, l);
            for shift in Shift::all(n) {
                assert_eq!(enumerate_dyadic(&win, shift).len(), brute_count(&win, shift));
            }
        }
    }

    #[test]
    fn nested_or_disjoint() {
        let win = w(1, 1, 1);
        for shift in Shift::all(1) {
            let cubes = enumerate_dyadic(&win, shift);
            for a in &cubes {
                for b in &cubes {
                    if a.overlaps(b, &win) {
                        assert!(a.contains_cube(b, &win) || b.contains_cube(a, &win));
                    }
                }
            }
        }
    }

    #[test]
    fn scales_tile_without_overlap() {
        let win = w(2, 1, 0);
        for shift in Shift::all(2) {
            let cubes = enumerate_dyadic(&win, shift);
            for a in &cubes {
                for b in &cubes {
                    if a != b && a.scale == b.scale {
                        assert!(!a.overlaps(b, &win));
                    }
                }
            }
        }
    }

    #[test]
    fn cover_centered_unit_interval() {
        let win = w(1, 1, 1);
        let q = LatticeCube::from_real(&win, &[-0.5], 1.0).unwrap();
        let (shift, cover) = third_trick_cover(&win, &q).unwrap();
        assert_eq!(shift, Shift::uniform(true, 1));
        let (lo, hi) = cover.bounds()[0];
        assert_eq!(cover.real_side(), 2.0);
        assert!(lo <= -0.5 && hi >= 0.5);
        assert!((lo + 2.0 / 3.0).abs() < 1e-12 && (hi - 4.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn dyadic_cube_covers_itself() {
        let win = w(1, 0, 1);
        let q = LatticeCube::from_real(&win, &[0.0], 1.0).unwrap();
        let (shift, cover) = third_trick_cover(&win, &q).unwrap();
        assert!(shift.is_zero());
        assert_eq!(cover.bounds()[0], (0.0, 1.0));
    }

    #[test]
    fn cover_quarter_interval() {
        let win = w(1, 2, 1);
        let q = LatticeCube::from_real(&win, &[-0.25], 0.5).unwrap();
        let (_, cover) = third_trick_cover(&win, &q).unwrap();
        assert!(cover.real_side() <= 1.5);
        assert!(cover.covers_lattice(&q, &win));
        // exhaustive oracle: no cover of smaller side exists in either grid
        for shift in Shift::all(1) {
            for c in enumerate_dyadic(&win, shift) {
                if c.covers_lattice(&q, &win) {
                    assert!(c.real_side() >= cover.real_side());
                }
            }
        }
    }

    #[test]
    fn children_and_parent_round_trip() {
        let win = w(2, 2, 1);
        for shift in Shift::all(2) {
            let cube = DyadicCube { shift, scale: 0, index: vec![-1, 0] };
            for child in cube.children() {
                assert!(cube.contains_cube(&child, &win));
                assert_eq!(child.parent(), cube);
            }
        }
    }

    #[test]
    fn outside_cube_rejected() {
        let win = w(1, 0, 0);
        let q = LatticeCube::new(vec![0], 2);
        assert_eq!(third_trick_cover(&win, &q), Err(GridError::OutsideWindow));
    }
}
