//! Compensated arithmetic and summed-area tables.

use crate::grid::Window;

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    let err = (a - (s - bb)) + (b - bb);
    (s, err)
}

#[inline]
fn fast_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

/// Double-double accumulator: an unevaluated sum `hi + lo`.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DoubleDouble {
    hi: f64,
    lo: f64,
}

impl DoubleDouble {
    pub const ZERO: DoubleDouble = DoubleDouble { hi: 0.0, lo: 0.0 };

    pub fn from_f64(x: f64) -> Self {
        Self { hi: x, lo: 0.0 }
    }

    #[inline]
    pub fn add_f64(self, x: f64) -> Self {
        let (s, e) = two_sum(self.hi, x);
        let (hi, lo) = fast_two_sum(s, e + self.lo);
        Self { hi, lo }
    }

    #[inline]
    pub fn add(self, other: Self) -> Self {
        let (s, e) = two_sum(self.hi, other.hi);
        let (hi, lo) = fast_two_sum(s, e + self.lo + other.lo);
        Self { hi, lo }
    }

    #[inline]
    pub fn neg(self) -> Self {
        Self { hi: -self.hi, lo: -self.lo }
    }

    #[inline]
    pub fn sub(self, other: Self) -> Self {
        self.add(other.neg())
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.hi + self.lo
    }
}

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

/// Compensated sum of an iterator.
pub fn sum<I: IntoIterator<Item = f64>>(xs: I) -> f64 {
    let mut acc = CompensatedSum::new();
    for x in xs {
        acc.add(x);
    }
    acc.value()
}

/// Summed-area table over the cells of a window, stored in double-double so
/// that box sums are accurate to a few ulps regardless of table magnitude.
#[derive(Debug, Clone)]
pub struct PrefixTable {
    dim: usize,
    m: usize,
    table: Vec<DoubleDouble>,
    values: Vec<f64>,
}

impl PrefixTable {
    pub fn new(window: &Window, values: &[f64]) -> Self {
        let dim = window.dim();
        let m = window.side_cells();
        assert_eq!(values.len(), window.cell_count());
        let table = if dim == 1 {
            let mut t = Vec::with_capacity(m + 1);
            let mut acc = DoubleDouble::ZERO;
            t.push(acc);
            for &v in values {
                acc = acc.add_f64(v);
                t.push(acc);
            }
            t
        } else {
            let w = m + 1;
            let mut t = vec![DoubleDouble::ZERO; w * w];
            for i in 0..m {
                let mut row = DoubleDouble::ZERO;
                for j in 0..m {
                    row = row.add_f64(values[i * m + j]);
                    t[(i + 1) * w + j + 1] = t[i * w + j + 1].add(row);
                }
            }
            t
        };
        Self { dim, m, table, values: values.to_vec() }
    }

    pub fn side_cells(&self) -> usize {
        self.m
    }

    #[inline]
    fn at(&self, i: usize, j: usize) -> DoubleDouble {
        if self.dim == 1 {
            self.table[i]
        } else {
            self.table[i * (self.m + 1) + j]
        }
    }

    /// Sum over cells with offsets in `[lo, hi)` along each axis.
    #[inline]
    pub fn box_sum(&self, lo: [usize; 2], hi: [usize; 2]) -> f64 {
        if self.dim == 1 {
            self.table[hi[0]].sub(self.table[lo[0]]).value()
        } else {
            self.at(hi[0], hi[1])
                .sub(self.at(lo[0], hi[1]))
                .sub(self.at(hi[0], lo[1]))
                .add(self.at(lo[0], lo[1]))
                .value()
        }
    }

    /// Sum over the lattice cube with the given corner offsets and side.
    #[inline]
    pub fn cube_sum(&self, corner: [usize; 2], side: usize) -> f64 {
        self.box_sum(corner, [corner[0] + side, corner[1] + side])
    }

    /// Sum over a box clipped to the window, corners given as signed offsets.
    pub fn clipped_sum(&self, lo: [i64; 2], hi: [i64; 2]) -> f64 {
        let m = self.m as i64;
        let c = |x: i64| x.clamp(0, m) as usize;
        let (a, b) = ([c(lo[0]), c(lo[1])], [c(hi[0]), c(hi[1])]);
        if b[0] <= a[0] || (self.dim == 2 && b[1] <= a[1]) {
            return 0.0;
        }
        self.box_sum(a, b)
    }

    /// Integral of the cell function (cell side taken as 1) up to a point
    /// given in thirds of a cell from the lower corner. Exact up to rounding
    /// because the function is constant on cells.
    fn cumulative_thirds(&self, x: [i64; 2]) -> DoubleDouble {
        let m3 = 3 * self.m as i64;
        let cx = |t: i64| t.clamp(0, m3);
        if self.dim == 1 {
            let t = cx(x[0]);
            let (i, r) = ((t / 3) as usize, t % 3);
            let base = self.table[i];
            if r == 0 {
                base
            } else {
                base.add_f64(self.values[i] * r as f64 / 3.0)
            }
        } else {
            let (t0, t1) = (cx(x[0]), cx(x[1]));
            let (i, a) = ((t0 / 3) as usize, t0 % 3);
            let (j, b) = ((t1 / 3) as usize, t1 % 3);
            let mut acc = self.at(i, j);
            if a > 0 {
                let strip = self.at(i + 1, j).sub(self.at(i, j)).value();
                acc = acc.add_f64(strip * a as f64 / 3.0);
            }
            if b > 0 {
                let strip = self.at(i, j + 1).sub(self.at(i, j)).value();
                acc = acc.add_f64(strip * b as f64 / 3.0);
            }
            if a > 0 && b > 0 {
                let v = self.values[i * self.m + j];
                acc = acc.add_f64(v * (a * b) as f64 / 9.0);
            }
            acc
        }
    }

    /// Sum (in cell-area units) over a box with corners in thirds of a cell
    /// measured from the window's lower corner; parts outside are zero.
    pub fn thirds_sum(&self, lo: [i64; 2], hi: [i64; 2]) -> f64 {
        if self.dim == 1 {
            self.cumulative_thirds(hi).sub(self.cumulative_thirds(lo)).value()
        } else {
            self.cumulative_thirds(hi)
                .sub(self.cumulative_thirds([lo[0], hi[1]]))
                .sub(self.cumulative_thirds([hi[0], lo[1]]))
                .add(self.cumulative_thirds(lo))
                .value()
        }
    }
}
