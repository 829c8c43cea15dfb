//! Weight and test-function descriptors, evaluated to cell averages on a
//! window, and seeded random function families.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::VerifyError;
use crate::grid::Window;
use crate::lorentz::GridFunction;
use crate::operators::{maximal, MaximalVariant};

/// A weight, built cellwise on a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum WeightSpec {
    Ones,
    /// Equal blocks along the first axis, listed left to right.
    Step { values: Vec<f64> },
    /// `|x|^a` averaged over each cell.
    Power { a: f64 },
    /// `(M h)^exponent` with the uncentered maximal operator.
    Mh { h: FunctionSpec, exponent: f64 },
    Product { factors: Vec<WeightSpec> },
    /// Raw cell values in flat order.
    Values { values: Vec<f64> },
}

/// A non-negative test function, built cellwise on a window.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FunctionSpec {
    /// Indicator of the box `[lo, hi)`, averaged over cells.
    Indicator { lo: Vec<f64>, hi: Vec<f64> },
    /// Equal blocks along the first axis.
    Step { values: Vec<f64> },
    /// `|x - center|^a` on `|x - center| < radius`, averaged over cells.
    PowerBump {
        a: f64,
        radius: f64,
        #[serde(default)]
        center: Vec<f64>,
    },
    /// `(M h)^exponent`.
    Mh { h: Box<FunctionSpec>, exponent: f64 },
    Values { values: Vec<f64> },
}

/// Random function families drawn by [`sample_functions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FamilyKind {
    /// Indicator of a union of up to four dyadic cubes.
    DyadicUnion,
    /// Indicator of a random box with cell-aligned corners.
    Indicator,
    /// Piecewise constant on equal blocks, some of them zero.
    RandomStep,
    PowerBump,
    /// `(M chi_I)^s` for a random dyadic `I`.
    MhDerived,
}

impl FamilyKind {
    pub const ALL: [FamilyKind; 5] = [
        FamilyKind::DyadicUnion,
        FamilyKind::Indicator,
        FamilyKind::RandomStep,
        FamilyKind::PowerBump,
        FamilyKind::MhDerived,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FamilyKind::DyadicUnion => "dyadic_union",
            FamilyKind::Indicator => "indicator",
            FamilyKind::RandomStep => "random_step",
            FamilyKind::PowerBump => "power_bump",
            FamilyKind::MhDerived => "mh_derived",
        }
    }

    /// Whether every member is a characteristic function.
    pub fn is_characteristic(self) -> bool {
        matches!(self, FamilyKind::DyadicUnion | FamilyKind::Indicator)
    }
}

fn bad(what: &str, reason: impl Into<String>) -> VerifyError {
    VerifyError::BadSpec(format!("{what}: {}", reason.into()))
}

/// Per-axis cell bounds `[x0, x1)` in real coordinates.
fn cell_box(window: &Window, flat: usize) -> [(f64, f64); 2] {
    let o = window.offsets(flat);
    let h = window.cell_side();
    let lo = window.lower() as f64 * h;
    let mut b = [(0.0, 0.0); 2];
    for axis in 0..window.dim() {
        let x0 = lo + o[axis] as f64 * h;
        b[axis] = (x0, x0 + h);
    }
    b
}

/// `sign(x) |x|^{a+1} / (a+1)`, an antiderivative of `|x|^a` for `a > -1`.
fn power_antiderivative(x: f64, a: f64) -> f64 {
    x.signum() * x.abs().powf(a + 1.0) / (a + 1.0)
}

/// Integral of `|x|^a` over `[x0, x1]` for `a > -1`.
fn power_integral(x0: f64, x1: f64, a: f64) -> f64 {
    if x1 <= x0 {
        return 0.0;
    }
    power_antiderivative(x1, a) - power_antiderivative(x0, a)
}

const GAUSS_NODES: [f64; 5] = [
    -0.906_179_845_938_664,
    -0.538_469_310_105_683,
    0.0,
    0.538_469_310_105_683,
    0.906_179_845_938_664,
];
const GAUSS_WEIGHTS: [f64; 5] = [
    0.236_926_885_056_189,
    0.478_628_670_499_366,
    0.568_888_888_888_889,
    0.478_628_670_499_366,
    0.236_926_885_056_189,
];

/// Tensor Gauss-Legendre average of `g` over a planar cell.
fn quadrature_average(b: [(f64, f64); 2], g: impl Fn(f64, f64) -> f64) -> f64 {
    let mut acc = 0.0;
    for (i, xi) in GAUSS_NODES.iter().enumerate() {
        let x = 0.5 * (b[0].0 + b[0].1) + 0.5 * (b[0].1 - b[0].0) * xi;
        for (j, yj) in GAUSS_NODES.iter().enumerate() {
            let y = 0.5 * (b[1].0 + b[1].1) + 0.5 * (b[1].1 - b[1].0) * yj;
            acc += GAUSS_WEIGHTS[i] * GAUSS_WEIGHTS[j] * g(x, y);
        }
    }
    acc / 4.0
}

fn step_values(window: &Window, values: &[f64]) -> Result<Vec<f64>, VerifyError> {
    if values.is_empty() {
        return Err(bad("step", "needs at least one value"));
    }
    let m = window.side_cells();
    Ok((0..window.cell_count())
        .map(|flat| {
            let o = window.offsets(flat)[0];
            values[(o * values.len() / m).min(values.len() - 1)]
        })
        .collect())
}

fn power_bump_values(window: &Window, a: f64, radius: f64, center: &[f64]) -> Result<Vec<f64>, VerifyError> {
    let dim = window.dim();
    if a <= -(dim as f64) {
        return Err(bad("power", format!("exponent {a} is not locally integrable in dimension {dim}")));
    }
    if dim == 1 && a == -1.0 {
        return Err(bad("power", "exponent -1 is excluded"));
    }
    let mut c = [0.0; 2];
    for (axis, &v) in center.iter().enumerate().take(dim) {
        c[axis] = v;
    }
    Ok((0..window.cell_count())
        .map(|flat| {
            let b = cell_box(window, flat);
            if dim == 1 {
                let (x0, x1) = (b[0].0 - c[0], b[0].1 - c[0]);
                let (lo, hi) = (x0.max(-radius), x1.min(radius));
                power_integral(lo, hi, a) / (x1 - x0)
            } else {
                quadrature_average(b, |x, y| {
                    let r = ((x - c[0]).powi(2) + (y - c[1]).powi(2)).sqrt();
                    if r < radius {
                        r.powf(a)
                    } else {
                        0.0
                    }
                })
            }
        })
        .collect())
}

fn raw(window: &Window, values: &[f64]) -> Result<Vec<f64>, VerifyError> {
    if values.len() != window.cell_count() {
        return Err(bad("values", format!("expected {} cells, got {}", window.cell_count(), values.len())));
    }
    Ok(values.to_vec())
}

impl FunctionSpec {
    pub fn build(&self, window: &Window) -> Result<GridFunction, VerifyError> {
        let dim = window.dim();
        let values = match self {
            FunctionSpec::Indicator { lo, hi } => {
                if lo.len() != dim || hi.len() != dim {
                    return Err(bad("indicator", format!("corners need {dim} coordinates")));
                }
                let h = window.cell_side();
                (0..window.cell_count())
                    .map(|flat| {
                        let b = cell_box(window, flat);
                        (0..dim)
                            .map(|axis| ((hi[axis].min(b[axis].1) - lo[axis].max(b[axis].0)) / h).max(0.0))
                            .product()
                    })
                    .collect()
            }
            FunctionSpec::Step { values } => step_values(window, values)?,
            FunctionSpec::PowerBump { a, radius, center } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(bad("power_bump", "radius must be positive"));
                }
                power_bump_values(window, *a, *radius, center)?
            }
            FunctionSpec::Mh { h, exponent } => {
                let base = h.build(window)?;
                if base.max_value() <= 0.0 {
                    return Err(bad("mh", "h vanishes on the window"));
                }
                return Ok(maximal(&base, &MaximalVariant::Uncentered)?.pow(*exponent));
            }
            FunctionSpec::Values { values } => raw(window, values)?,
        };
        Ok(GridFunction::new(*window, values)?)
    }
}

impl WeightSpec {
    pub fn build(&self, window: &Window) -> Result<GridFunction, VerifyError> {
        let w = match self {
            WeightSpec::Ones => GridFunction::ones(*window),
            WeightSpec::Step { values } => GridFunction::new(*window, step_values(window, values)?)?,
            WeightSpec::Power { a } => {
                GridFunction::new(*window, power_bump_values(window, *a, f64::INFINITY, &[])?)?
            }
            WeightSpec::Mh { h, exponent } => {
                FunctionSpec::Mh { h: Box::new(h.clone()), exponent: *exponent }.build(window)?
            }
            WeightSpec::Product { factors } => {
                let mut acc = GridFunction::ones(*window);
                for f in factors {
                    acc = acc.mul(&f.build(window)?)?;
                }
                acc
            }
            WeightSpec::Values { values } => GridFunction::new(*window, raw(window, values)?)?,
        };
        w.ensure_positive()?;
        Ok(w)
    }

    /// Short label for report ids.
    pub fn label(&self) -> String {
        match self {
            WeightSpec::Ones => "ones".into(),
            WeightSpec::Step { values } => format!("step{values:?}"),
            WeightSpec::Power { a } => format!("power({a})"),
            WeightSpec::Mh { exponent, .. } => format!("mh^{exponent}"),
            WeightSpec::Product { factors } => {
                factors.iter().map(WeightSpec::label).collect::<Vec<_>>().join("*")
            }
            WeightSpec::Values { .. } => "values".into(),
        }
    }
}

/// `w_i = (M h_i)^{(1 - p_i)/m}` with `v = nu^{-1/p}`, for `nu` the product
/// `prod w_i^{p/p_i}`.
pub fn mh_power_fixture(hs: &[FunctionSpec], p_list: &[f64]) -> Result<(Vec<WeightSpec>, WeightSpec), VerifyError> {
    if hs.len() != p_list.len() || hs.is_empty() {
        return Err(bad("fixture", "one h per exponent"));
    }
    let m = p_list.len() as f64;
    let ws: Vec<WeightSpec> = hs
        .iter()
        .zip(p_list)
        .map(|(h, &pi)| WeightSpec::Mh { h: h.clone(), exponent: (1.0 - pi) / m })
        .collect();
    // nu^{-1/p} = prod (M h_i)^{-(1 - p_i)/(m p_i)}
    let v = WeightSpec::Product {
        factors: hs
            .iter()
            .zip(p_list)
            .map(|(h, &pi)| WeightSpec::Mh { h: h.clone(), exponent: -(1.0 - pi) / (m * pi) })
            .collect(),
    };
    Ok((ws, v))
}

/// A dyadic cube of grid zero as a real box `[lo, lo + side)`.
fn random_dyadic_box(window: &Window, rng: &mut ChaCha8Rng, max_scale: i32) -> (Vec<f64>, f64) {
    let k = window.resolution() as i32;
    let l = window.half_extent() as i32;
    let scale = rng.gen_range(-k..=max_scale.min(l));
    let side = 2f64.powi(scale);
    let span = 1i64 << (l - scale + 1);
    let lo = (0..window.dim())
        .map(|_| (rng.gen_range(0..span) - span / 2) as f64 * side)
        .collect();
    (lo, side)
}

fn draw(window: &Window, kind: FamilyKind, rng: &mut ChaCha8Rng) -> FunctionSpec {
    let dim = window.dim();
    let l = window.half_extent() as i32;
    let k = window.resolution() as i32;
    let h = window.cell_side();
    let extent = 2f64.powi(l);
    match kind {
        FamilyKind::DyadicUnion => {
            let pieces = rng.gen_range(1..=4);
            let boxes: Vec<(Vec<f64>, f64)> =
                (0..pieces).map(|_| random_dyadic_box(window, rng, l - 1)).collect();
            let values = (0..window.cell_count())
                .map(|flat| {
                    let b = cell_box(window, flat);
                    let inside = boxes.iter().any(|(lo, side)| {
                        (0..dim).all(|a| b[a].0 >= lo[a] && b[a].1 <= lo[a] + side)
                    });
                    f64::from(u8::from(inside))
                })
                .collect();
            FunctionSpec::Values { values }
        }
        FamilyKind::Indicator => {
            let cells = window.side_cells() as i64;
            let mut lo = Vec::new();
            let mut hi = Vec::new();
            for _ in 0..dim {
                let a = rng.gen_range(0..cells);
                let b = rng.gen_range(a + 1..=cells.min(a + cells / 2).max(a + 1));
                lo.push(-extent + a as f64 * h);
                hi.push(-extent + b as f64 * h);
            }
            FunctionSpec::Indicator { lo, hi }
        }
        FamilyKind::RandomStep => {
            let blocks = 1usize << rng.gen_range(1..=5);
            let mut values: Vec<f64> = (0..blocks)
                .map(|_| if rng.gen_bool(0.3) { 0.0 } else { rng.gen_range(0.1..4.0) })
                .collect();
            if values.iter().all(|&v| v == 0.0) {
                values[blocks / 2] = 1.0;
            }
            FunctionSpec::Step { values }
        }
        FamilyKind::PowerBump => {
            let a = rng.gen_range(-0.9 * dim as f64..1.5);
            let radius = 2f64.powi(rng.gen_range((1 - k)..=(l - 1)));
            let center = (0..dim).map(|_| (rng.gen_range(-4..=4) as f64) * h).collect();
            FunctionSpec::PowerBump { a, radius, center }
        }
        FamilyKind::MhDerived => {
            let (lo, side) = random_dyadic_box(window, rng, l - 1);
            let hi = lo.iter().map(|x| x + side).collect();
            FunctionSpec::Mh {
                h: Box::new(FunctionSpec::Indicator { lo, hi }),
                exponent: rng.gen_range(0.5..2.0),
            }
        }
    }
}

/// `count` labelled specs cycling through `kinds`, drawn from one seeded
/// stream so the list depends only on its arguments.
pub fn sample_specs(window: &Window, kinds: &[FamilyKind], count: usize, seed: u64) -> Vec<(String, FunctionSpec)> {
    if kinds.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let kind = kinds[i % kinds.len()];
            (format!("{}-{i}", kind.as_str()), draw(window, kind, &mut rng))
        })
        .collect()
}

/// Built members of [`sample_specs`]; members that vanish identically are
/// replaced by the next draw.
pub fn sample_functions(
    window: &Window,
    kinds: &[FamilyKind],
    count: usize,
    seed: u64,
) -> Result<Vec<(String, GridFunction)>, VerifyError> {
    let mut out = Vec::with_capacity(count);
    let mut attempt = 0u64;
    while out.len() < count {
        let need = count - out.len();
        let specs = sample_specs(window, kinds, need, seed.wrapping_add(attempt.wrapping_mul(0x9E37_79B9)));
        for (id, spec) in specs {
            let f = spec.build(window)?;
            if f.max_value() > 0.0 {
                let id = if attempt == 0 { id } else { format!("{id}.r{attempt}") };
                out.push((id, f));
            }
        }
        attempt += 1;
        if attempt > 64 {
            return Err(VerifyError::EmptyFamily);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn win(k: u32, l: u32) -> Window {
        Window::new(1, k, l).unwrap()
    }

    #[test]
    fn power_cell_averages_are_exact() {
        let w = WeightSpec::Power { a: 0.5 }.build(&win(2, 1)).unwrap();
        // cell [0, 1/4): average of x^{1/2} is (2/3) (1/4)^{1/2}
        let first_positive = w.values()[8];
        assert!((first_positive - 2.0 / 3.0 * 0.5).abs() < 1e-14);
        // symmetric
        assert!((w.values()[7] - first_positive).abs() < 1e-14);
        assert!(WeightSpec::Power { a: -1.0 }.build(&win(2, 1)).is_err());
    }

    #[test]
    fn negative_power_is_integrable_at_the_origin() {
        let w = WeightSpec::Power { a: -0.5 }.build(&win(0, 1)).unwrap();
        // [0,1): integral of x^{-1/2} is 2
        assert!((w.values()[2] - 2.0).abs() < 1e-14);
    }

    #[test]
    fn step_and_indicator() {
        let w = WeightSpec::Step { values: vec![1.0, 2.0] }.build(&win(0, 0)).unwrap();
        assert_eq!(w.values(), &[1.0, 2.0]);
        let f = FunctionSpec::Indicator { lo: vec![0.0], hi: vec![1.0] }.build(&win(2, 1)).unwrap();
        assert_eq!(f.integral(), 1.0);
        let g = FunctionSpec::Indicator { lo: vec![0.1], hi: vec![0.2] }.build(&win(0, 0)).unwrap();
        assert!((g.values()[1] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn planar_power_weight_is_positive() {
        let w = WeightSpec::Power { a: -1.0 }.build(&Window::new(2, 1, 1).unwrap()).unwrap();
        assert!(w.is_positive());
        let c = WeightSpec::Power { a: 2.0 }.build(&Window::new(2, 0, 0).unwrap()).unwrap();
        // average of x^2 + y^2 over the unit square is 2/3
        assert!((c.values()[3] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn fixture_target_is_constant() {
        let hs = vec![
            FunctionSpec::Indicator { lo: vec![0.0], hi: vec![1.0] },
            FunctionSpec::Indicator { lo: vec![-2.0], hi: vec![-1.0] },
        ];
        let p_list = [1.5, 2.0];
        let (ws, v) = mh_power_fixture(&hs, &p_list).unwrap();
        let window = win(2, 3);
        let p = 1.0 / (1.0 / 1.5 + 1.0 / 2.0);
        let built: Vec<GridFunction> = ws.iter().map(|w| w.build(&window).unwrap()).collect();
        let v = v.build(&window).unwrap();
        for c in 0..window.cell_count() {
            let nu: f64 = built.iter().zip(p_list).map(|(w, pi)| w.values()[c].powf(p / pi)).product();
            assert!((nu * v.values()[c].powf(p) - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_nonzero() {
        let window = win(3, 3);
        let a = sample_functions(&window, &FamilyKind::ALL, 20, 7).unwrap();
        let b = sample_functions(&window, &FamilyKind::ALL, 20, 7).unwrap();
        assert_eq!(a, b);
        assert!(a.iter().all(|(_, f)| f.max_value() > 0.0));
        for (id, f) in &a {
            if id.starts_with("dyadic_union") || id.starts_with("indicator") {
                assert!(f.values().iter().all(|&v| v == 0.0 || (v - 1.0).abs() < 1e-12), "{id}");
            }
        }
    }
}
