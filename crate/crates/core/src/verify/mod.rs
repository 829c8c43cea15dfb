//! Finite-instance checks of the weighted inequalities.
//!
//! Each check evaluates `lhs / rhs` over a family of inputs and compares the
//! largest ratio with a theoretical constant (log domain) or an explicit cap.
//! Experiments are described by [`ExperimentSpec`] and run independently;
//! results keep the order of the experiment list, so reports do not depend on
//! scheduling.

pub mod families;

use std::collections::BTreeMap;
use std::io::Write;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::{ConstantId, ConstantInputs, ConstantReport, ConstantsConfig, ConstantsError};
use crate::grid::{enumerate_dyadic, DyadicCube, GridError, LatticeCube, Shift, Window};
use crate::lorentz::{norm_p1, norm_pinf, GridFunction, LorentzError};
use crate::operators::{maximal, multilinear_maximal, MaximalVariant, OperatorError};
use crate::sparse::{cz_sparse_decompose, sparse_operator, verify_sparse, SparseError, SparseFamily, SparseVerdict};
use crate::weights::{
    a1_constant, ap_constant, apr_bracket, apr_bracket_witness, conjugate, multilinear_bracket_witness,
    ExponentTuple, WeightError, WeightVector,
};

pub use families::{FamilyKind, FunctionSpec, WeightSpec};

/// Multiplicative slack for inequality checks: rounding only.
pub const INEQUALITY_SLACK: f64 = 1e-9;
/// Relative tolerance for discrete-versus-continuum comparisons.
pub const MESH_TOLERANCE: f64 = 0.05;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("input family is empty")]
    EmptyFamily,
    #[error("invalid experiment: {0}")]
    BadSpec(String),
    #[error("bad exponent: {0}")]
    BadExponent(String),
    #[error("family is not certified {eta}-sparse: {detail}")]
    UncertifiedFamily { eta: f64, detail: String },
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error(transparent)]
    Lorentz(#[from] LorentzError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Weight(#[from] WeightError),
    #[error(transparent)]
    Sparse(#[from] SparseError),
    #[error(transparent)]
    Constants(#[from] ConstantsError),
}

/// One input of a ratio table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioRow {
    pub input_id: String,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    pub pass: bool,
}

/// A side inequality `lhs <= rhs` that a check asserts besides its table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SideCheck {
    pub name: String,
    pub lhs: f64,
    pub rhs: f64,
    pub pass: bool,
}

impl SideCheck {
    pub fn new(name: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        let pass = lhs <= rhs * (1.0 + INEQUALITY_SLACK);
        Self { name: name.into(), lhs, rhs, pass }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RatioReport {
    pub theorem: String,
    pub rows: Vec<RatioRow>,
    #[serde(rename = "empirical_C")]
    pub empirical_c: f64,
    /// Log-domain theoretical constant with the inputs it was evaluated at.
    #[serde(rename = "theoretical_C", skip_serializing_if = "Option::is_none")]
    pub theoretical: Option<ConstantReport>,
    /// Plain upper bound used when no theoretical constant applies.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub cap: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub witness: Option<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub checks: Vec<SideCheck>,
    /// Weight constants measured along the way.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub measured: BTreeMap<String, f64>,
    pub pass: bool,
    #[serde(skip)]
    pub runtime: Option<Duration>,
}

impl RatioReport {
    fn new(theorem: &str) -> Self {
        Self {
            theorem: theorem.to_string(),
            rows: Vec::new(),
            empirical_c: 0.0,
            theoretical: None,
            cap: None,
            witness: None,
            checks: Vec::new(),
            measured: BTreeMap::new(),
            pass: false,
            runtime: None,
        }
    }

    fn push(&mut self, input_id: impl Into<String>, lhs: f64, rhs: f64) {
        let ratio = if lhs == 0.0 { 0.0 } else { lhs / rhs };
        self.rows.push(RatioRow { input_id: input_id.into(), lhs, rhs, ratio, pass: false });
    }

    /// Whether `ratio` respects the declared bound.
    pub fn within_bound(&self, ratio: f64) -> bool {
        if !ratio.is_finite() {
            return false;
        }
        match (&self.theoretical, self.cap) {
            (Some(c), _) => c.value().bounds(ratio, INEQUALITY_SLACK),
            (None, Some(cap)) => ratio <= cap * (1.0 + INEQUALITY_SLACK),
            (None, None) => true,
        }
    }

    /// Scores every row, the maximum and the overall flag.
    pub fn finalize(&mut self) {
        let mut best: Option<(f64, usize)> = None;
        for i in 0..self.rows.len() {
            let r = self.rows[i].ratio;
            self.rows[i].pass = self.within_bound(r);
            if best.is_none_or(|(b, _)| r > b) {
                best = Some((r, i));
            }
        }
        self.empirical_c = best.map_or(0.0, |b| b.0);
        self.witness = best.map(|(_, i)| self.rows[i].input_id.clone());
        self.pass = !self.rows.is_empty()
            && self.rows.iter().all(|r| r.pass)
            && self.checks.iter().all(|c| c.pass);
    }

    /// `log10` of the bound the rows are held to, if any.
    pub fn bound_log10(&self) -> Option<f64> {
        match (&self.theoretical, self.cap) {
            (Some(c), _) => Some(c.log10_value),
            (None, Some(cap)) => Some(cap.log10()),
            (None, None) => None,
        }
    }
}

fn ratio_of(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

fn nonempty<T>(family: &[T]) -> Result<(), VerifyError> {
    if family.is_empty() {
        Err(VerifyError::EmptyFamily)
    } else {
        Ok(())
    }
}

fn check_exponent(p: f64) -> Result<(), VerifyError> {
    if p.is_finite() && p >= 1.0 {
        Ok(())
    } else {
        Err(VerifyError::BadExponent(format!("need a finite p >= 1, got {p}")))
    }
}

/// `[u]_{A_p^R}`, or `[u]_{A_1}` at `p = 1`.
fn restricted_constant(u: &GridFunction, p: f64) -> Result<f64, VerifyError> {
    Ok(if p == 1.0 { a1_constant(u)? } else { apr_bracket(u, p)? })
}

/// Upper bound for `[w]_{A_r^R}`: `[w]_{A_1}` at `r = 1`, `[w]_{A_r}^{1/r}`
/// otherwise.
fn restricted_upper(w: &GridFunction, r: f64) -> Result<f64, VerifyError> {
    Ok(if r == 1.0 { a1_constant(w)? } else { ap_constant(w, r)?.powf(1.0 / r) })
}

const SAWYER_R_GRID: [f64; 4] = [1.0, 2.0, 3.0, 4.0];

/// Smallest single-weight Sawyer constant over the `r` grid; `a` is the
/// restricted constant of `u`.
fn sawyer_constant(
    u: &GridFunction,
    v: &GridFunction,
    p: f64,
    a: f64,
    cfg: &ConstantsConfig,
    measured: &mut BTreeMap<String, f64>,
) -> Result<ConstantReport, VerifyError> {
    let n = u.window().dim();
    let w = u.mul(&v.pow(p))?;
    let mut best: Option<ConstantReport> = None;
    for r in SAWYER_R_GRID {
        let b = restricted_upper(&w, r)?;
        let inputs = ConstantInputs { n, p: Some(p), r: Some(r), a: Some(a), b: Some(b), ..Default::default() };
        let rep = ConstantReport::evaluate(ConstantId::Sawyer, inputs, cfg)?;
        if best.as_ref().is_none_or(|x| rep.log10_value < x.log10_value) {
            best = Some(rep);
        }
    }
    let best = best.expect("nonempty grid");
    measured.insert("u_restricted".into(), a);
    measured.insert("uvp_restricted_upper".into(), best.inputs.b.unwrap_or(f64::NAN));
    Ok(best)
}

/// `||M f / v||_{L^{p,inf}(u v^p)} <= C ||f||_{L^{p,1}(u)}`.
pub fn check_sawyer(
    u: &GridFunction,
    v: &GridFunction,
    p: f64,
    family: &[(String, GridFunction)],
    cfg: &ConstantsConfig,
) -> Result<RatioReport, VerifyError> {
    let mut report = sawyer_table("sawyer", u, v, p, family)?;
    let a = restricted_constant(u, p)?;
    report.theoretical = Some(sawyer_constant(u, v, p, a, cfg, &mut report.measured)?);
    report.finalize();
    Ok(report)
}

/// Ratios of the Sawyer inequality without any constant: the slot for
/// candidate pairs under weaker hypotheses. Passes whenever every ratio is
/// finite.
pub fn check_sawyer_weakened(
    u: &GridFunction,
    v: &GridFunction,
    p: f64,
    family: &[(String, GridFunction)],
) -> Result<RatioReport, VerifyError> {
    let mut report = sawyer_table("sawyer_weakened", u, v, p, family)?;
    report.finalize();
    Ok(report)
}

fn sawyer_table(
    theorem: &str,
    u: &GridFunction,
    v: &GridFunction,
    p: f64,
    family: &[(String, GridFunction)],
) -> Result<RatioReport, VerifyError> {
    check_exponent(p)?;
    nonempty(family)?;
    u.ensure_positive()?;
    v.ensure_positive()?;
    let measure = u.mul(&v.pow(p))?;
    let rows: Vec<(f64, f64)> = family
        .par_iter()
        .map(|(_, f)| -> Result<(f64, f64), VerifyError> {
            let mf = maximal(f, &MaximalVariant::Uncentered)?;
            Ok((norm_pinf(&mf.div(v)?, &measure, p)?, norm_p1(f, u, p)?))
        })
        .collect::<Result<_, _>>()?;
    let mut report = RatioReport::new(theorem);
    for ((id, _), (lhs, rhs)) in family.iter().zip(rows) {
        report.push(id.clone(), lhs, rhs);
    }
    Ok(report)
}

/// One window of the counterexample table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthRow {
    pub half_extent: u32,
    pub lhs: f64,
    pub rhs: f64,
    pub ratio: f64,
    /// Continuum value of the ratio on the same window.
    pub closed_form: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GrowthReport {
    pub theorem: String,
    pub p: f64,
    pub resolution: u32,
    pub weighted: bool,
    pub rows: Vec<GrowthRow>,
    pub strictly_increasing: bool,
    pub max_relative_error: f64,
    pub pass: bool,
    #[serde(skip)]
    pub runtime: Option<Duration>,
}

/// The pair `h = |x|^{-1/p}` off `(-1, 1)`, `v = h + chi_{(-1,1)}` (or
/// `v = 1` when `weighted` is false), `u = 1`, on `[-2^L, 2^L)` at
/// resolution `k`: the ratio `||h/v||_{L^{p,inf}(v^p)} / ||h||_{L^{p,inf}}`
/// for each `L`.
///
/// On the window the continuum ratio is `(L ln 2 / (1 - 2^{-L}))^{1/p}`:
/// the numerator is the `v^p`-mass `2 L ln 2` of `{|x| >= 1}` to the power
/// `1/p`, the denominator is `(2 (1 - 2^{-L}))^{1/p}`. With `v = 1` the ratio
/// is 1 for every `L`.
pub fn check_counterexample(p: f64, resolution: u32, half_extents: &[u32], weighted: bool) -> Result<GrowthReport, VerifyError> {
    if !(p.is_finite() && p > 1.0) {
        return Err(VerifyError::BadExponent(format!("need p > 1, got {p}")));
    }
    nonempty(half_extents)?;
    let mut rows = Vec::with_capacity(half_extents.len());
    for &l in half_extents {
        if l == 0 {
            return Err(VerifyError::BadSpec("half extents must be positive".into()));
        }
        let window = Window::new(1, resolution, l)?;
        let bump = WeightSpec::Power { a: -1.0 / p }.build(&window)?;
        let core = FunctionSpec::Indicator { lo: vec![-1.0], hi: vec![1.0] };
        let core = core.build(&window)?;
        // cells meet (-1, 1) either fully or not at all
        let h = bump.zip_with(&core, |b, c| if c > 0.0 { 0.0 } else { b })?;
        let (v, measure) = if weighted {
            let v = h.add(&core)?;
            let measure = v.pow(p);
            (v, measure)
        } else {
            (GridFunction::ones(window), GridFunction::ones(window))
        };
        let ones = GridFunction::ones(window);
        let lhs = norm_pinf(&h.div(&v)?, &measure, p)?;
        let rhs = norm_pinf(&h, &ones, p)?;
        let lf = l as f64;
        let closed_form = if weighted {
            (lf * std::f64::consts::LN_2 / (1.0 - 2f64.powf(-lf))).powf(1.0 / p)
        } else {
            1.0
        };
        rows.push(GrowthRow { half_extent: l, lhs, rhs, ratio: ratio_of(lhs, rhs), closed_form });
    }
    let strictly_increasing = rows.windows(2).all(|w| w[1].ratio > w[0].ratio);
    let max_relative_error =
        rows.iter().map(|r| (r.ratio - r.closed_form).abs() / r.closed_form).fold(0.0, f64::max);
    let shape_ok = if weighted {
        strictly_increasing || rows.len() == 1
    } else {
        max_relative_error <= 1e-12
    };
    Ok(GrowthReport {
        theorem: "counterexample".into(),
        p,
        resolution,
        weighted,
        rows,
        strictly_increasing,
        max_relative_error,
        pass: shape_ok && max_relative_error <= MESH_TOLERANCE,
        runtime: None,
    })
}

/// `nu = prod w_i^{p/p_i}`.
fn product_target(weights: &[GridFunction], exponents: &ExponentTuple) -> Result<GridFunction, VerifyError> {
    Ok(WeightVector::new(weights.to_vec(), exponents)?.target().clone())
}

fn check_arity(weights: usize, exponents: &ExponentTuple) -> Result<(), VerifyError> {
    if weights != exponents.len() || weights == 0 {
        return Err(VerifyError::BadSpec(format!(
            "{} weights for {} exponents",
            weights,
            exponents.len()
        )));
    }
    Ok(())
}

fn check_tuples(family: &[(String, Vec<GridFunction>)], m: usize) -> Result<(), VerifyError> {
    nonempty(family)?;
    if let Some((id, _)) = family.iter().find(|(_, fs)| fs.len() != m) {
        return Err(VerifyError::BadSpec(format!("input {id} does not have {m} functions")));
    }
    Ok(())
}

/// Product and multi-variable Sawyer bounds:
/// `||M(f)/v|| <= ||M^tensor(f)/v|| <= C prod ||f_i||_{L^{p_i,1}(w_i)}` in
/// `L^{p,inf}(nu v^p)`. Without `v` this is the product bound with `v = 1`.
pub fn check_msawyer(
    weights: &[GridFunction],
    v: Option<&GridFunction>,
    exponents: &ExponentTuple,
    family: &[(String, Vec<GridFunction>)],
    cfg: &ConstantsConfig,
) -> Result<RatioReport, VerifyError> {
    let m = exponents.len();
    check_arity(weights.len(), exponents)?;
    check_tuples(family, m)?;
    let window = *weights[0].window();
    let ones = GridFunction::ones(window);
    let v = v.unwrap_or(&ones);
    v.ensure_positive()?;
    let p = exponents.p();
    let p_list = exponents.p_list().to_vec();
    let nu = product_target(weights, exponents)?;
    let measure = nu.mul(&v.pow(p))?;
    let (theorem, id) = if std::ptr::eq(v, &ones) {
        ("prodhl", ConstantId::Prodhl)
    } else {
        ("msawyer", ConstantId::Msawyer)
    };

    struct Eval {
        chain: f64,
        tensor: f64,
        rhs: f64,
        b: Vec<f64>,
    }
    let evals: Vec<Eval> = family
        .par_iter()
        .map(|(_, fs)| -> Result<Eval, VerifyError> {
            let mfs: Vec<GridFunction> =
                fs.iter().map(|f| maximal(f, &MaximalVariant::Uncentered)).collect::<Result<_, _>>()?;
            let mut tensor = GridFunction::ones(window);
            for mf in &mfs {
                tensor = tensor.mul(mf)?;
            }
            let multi = multilinear_maximal(fs, false)?;
            let chain = norm_pinf(&multi.div(v)?, &measure, p)?;
            let tensor_norm = norm_pinf(&tensor.div(v)?, &measure, p)?;
            let mut rhs = 1.0;
            for ((f, w), &pi) in fs.iter().zip(weights).zip(&p_list) {
                rhs *= norm_p1(f, w, pi)?;
            }
            // A_2-type constant of w_i (v prod_{j != i} (M f_j)^{-1})^{p_i}
            let mut b = Vec::with_capacity(m);
            for i in 0..m {
                let mut vi = v.clone();
                for (j, mf) in mfs.iter().enumerate() {
                    if j != i {
                        vi = vi.div(mf)?;
                    }
                }
                let wi = weights[i].mul(&vi.pow(p_list[i]))?;
                b.push(restricted_upper(&wi, 2.0)?);
            }
            Ok(Eval { chain, tensor: tensor_norm, rhs, b })
        })
        .collect::<Result<_, _>>()?;

    let mut report = RatioReport::new(theorem);
    let mut b_list = vec![0.0f64; m];
    for ((input, _), e) in family.iter().zip(&evals) {
        report.push(input.clone(), e.tensor, e.rhs);
        report.checks.push(SideCheck::new(format!("chain:{input}"), e.chain, e.tensor));
        for (acc, &b) in b_list.iter_mut().zip(&e.b) {
            *acc = acc.max(b);
        }
    }
    let a_list: Vec<f64> =
        weights.iter().zip(&p_list).map(|(w, &pi)| restricted_constant(w, pi)).collect::<Result<_, _>>()?;
    for i in 0..m {
        report.measured.insert(format!("w{i}_restricted"), a_list[i]);
        report.measured.insert(format!("w{i}_product_upper"), b_list[i]);
    }
    let inputs = ConstantInputs {
        n: window.dim(),
        p_list: Some(p_list),
        a_list: Some(a_list),
        b_list: Some(b_list),
        ..Default::default()
    };
    report.theoretical = Some(ConstantReport::evaluate(id, inputs, cfg)?);
    report.finalize();
    Ok(report)
}

/// Norm constants of `W = w v^{-eps}` for the sparse bound: exact at `r = 1`
/// (the double-bar constant there is `[W]_{A_1}`), `r [W]_{A_r}^{1/r}` at
/// `r = 2`.
fn sparse_inputs(
    v: &GridFunction,
    w: &GridFunction,
    p: f64,
    epsilon: f64,
    eta: f64,
    measured: &mut BTreeMap<String, f64>,
) -> Result<ConstantInputs, VerifyError> {
    let big_w = w.mul(&v.pow(-epsilon))?;
    let rh = crate::weights::rh_inf_weighted(v, w, epsilon)?;
    let norm1 = a1_constant(&big_w)?;
    let norm2 = 2.0 * ap_constant(&big_w, 2.0)?.sqrt();
    measured.insert("rh_inf_weighted".into(), rh);
    measured.insert("W_norm_r1".into(), norm1);
    measured.insert("W_norm_r2_upper".into(), norm2);
    Ok(ConstantInputs {
        n: w.window().dim(),
        p: Some(p),
        epsilon: Some(epsilon),
        eta: Some(eta),
        rh: Some(rh),
        w_norms: Some(vec![(1.0, norm1), (2.0, norm2)]),
        ..Default::default()
    })
}

fn require_certificate(family: &SparseFamily) -> Result<(), VerifyError> {
    match verify_sparse(family, family.eta)? {
        SparseVerdict::Certificate { .. } => Ok(()),
        SparseVerdict::Refutation { cubes, demand, union_area } => Err(VerifyError::UncertifiedFamily {
            eta: family.eta,
            detail: format!("{} cubes demand {demand} but cover {union_area}", cubes.len()),
        }),
    }
}

/// `||A_S(f)/v||_{L^{p,inf}(w)} <= C ||M(f)/v||_{L^{p,inf}(w)}` for a
/// certified sparse family.
pub fn check_sparse_domination(
    sparse: &SparseFamily,
    v: &GridFunction,
    w: &GridFunction,
    p: f64,
    epsilon: f64,
    family: &[(String, Vec<GridFunction>)],
    cfg: &ConstantsConfig,
) -> Result<RatioReport, VerifyError> {
    if !(p.is_finite() && p > 0.0) {
        return Err(VerifyError::BadExponent(format!("need p > 0, got {p}")));
    }
    nonempty(family)?;
    let m = family[0].1.len();
    check_tuples(family, m)?;
    v.ensure_positive()?;
    w.ensure_positive()?;
    require_certificate(sparse)?;
    let rows: Vec<(f64, f64)> = family
        .par_iter()
        .map(|(_, fs)| -> Result<(f64, f64), VerifyError> {
            let a = sparse_operator(sparse, fs)?;
            let mm = multilinear_maximal(fs, false)?;
            Ok((norm_pinf(&a.div(v)?, w, p)?, norm_pinf(&mm.div(v)?, w, p)?))
        })
        .collect::<Result<_, _>>()?;
    let mut report = RatioReport::new("sparse_domination");
    for ((id, _), (lhs, rhs)) in family.iter().zip(rows) {
        report.push(id.clone(), lhs, rhs);
    }
    report.measured.insert("eta".into(), sparse.eta);
    let inputs = sparse_inputs(v, w, p, epsilon, sparse.eta, &mut report.measured)?;
    report.theoretical = Some(ConstantReport::evaluate(ConstantId::Sparsemax, inputs, cfg)?);
    report.finalize();
    Ok(report)
}

fn cube_indicator(window: &Window, cube: &LatticeCube, keep: impl Fn(usize) -> bool) -> Result<GridFunction, VerifyError> {
    let mut values = vec![0.0; window.cell_count()];
    for c in cube.cell_indices(window) {
        if keep(c) {
            values[c] = 1.0;
        }
    }
    Ok(GridFunction::new(*window, values)?)
}

fn is_characteristic(f: &GridFunction) -> bool {
    f.max_value() > 0.0 && f.values().iter().all(|&x| x == 0.0 || x == 1.0)
}

/// `||M(f u v^{p-1})/u||_{L^{p',inf}(u)} <= C ||f||_{L^{p',1}(u v^p)}`.
///
/// With `v = 1` the family is extended by the indicator of the extremal cube
/// of `[u]_{A_p^R}` and of its extremal sublevel set, and the check also
/// asserts `[u]_{A_p^R} <= p' (1 + tol) sup_E ratio(chi_E)` over the
/// characteristic inputs.
pub fn check_dual_sawyer(
    u: &GridFunction,
    v: &GridFunction,
    p: f64,
    epsilon: f64,
    family: &[(String, GridFunction)],
    cfg: &ConstantsConfig,
) -> Result<RatioReport, VerifyError> {
    if !(p.is_finite() && p > 1.0) {
        return Err(VerifyError::BadExponent(format!("dual bound needs p > 1, got {p}")));
    }
    if !(epsilon > 0.0 && epsilon <= 1.0) {
        return Err(VerifyError::BadExponent(format!("need 0 < epsilon <= 1, got {epsilon}")));
    }
    nonempty(family)?;
    u.ensure_positive()?;
    v.ensure_positive()?;
    let window = *u.window();
    let pc = conjugate(p);
    let uvp = u.mul(&v.pow(p))?;
    let transfer = u.mul(&v.pow(p - 1.0))?;
    let unweighted = v.values().iter().all(|&x| x == 1.0);

    let mut inputs: Vec<(String, GridFunction)> = family.to_vec();
    let witness = apr_bracket_witness(u, p)?;
    if unweighted {
        inputs.push(("witness-cube".into(), cube_indicator(&window, &witness.cube, |_| true)?));
        let level = witness.levels[0];
        inputs.push((
            "witness-sublevel".into(),
            cube_indicator(&window, &witness.cube, |c| u.values()[c] <= level)?,
        ));
    }
    let rows: Vec<(f64, f64)> = inputs
        .par_iter()
        .map(|(_, f)| -> Result<(f64, f64), VerifyError> {
            let g = f.mul(&transfer)?;
            let mg = maximal(&g, &MaximalVariant::Uncentered)?;
            Ok((norm_pinf(&mg.div(u)?, u, pc)?, norm_p1(f, &uvp, pc)?))
        })
        .collect::<Result<_, _>>()?;
    let mut report = RatioReport::new("dual_sawyer");
    let mut char_sup: f64 = 0.0;
    for ((id, f), (lhs, rhs)) in inputs.iter().zip(rows) {
        if is_characteristic(f) {
            char_sup = char_sup.max(ratio_of(lhs, rhs));
        }
        report.push(id.clone(), lhs, rhs);
    }
    report.measured.insert("u_restricted".into(), witness.value);
    if unweighted {
        report.measured.insert("char_sup".into(), char_sup);
        report.checks.push(SideCheck::new(
            "characterization",
            witness.value,
            pc * char_sup * (1.0 + MESH_TOLERANCE),
        ));
    }
    // p > 1 here, so the witness value is the restricted constant
    let sawyer = sawyer_constant(u, v, p, witness.value, cfg, &mut report.measured)?;
    let mut inputs = sparse_inputs(v, &uvp, p, epsilon, 0.5, &mut report.measured)?;
    inputs.r = sawyer.inputs.r;
    inputs.a = sawyer.inputs.a;
    inputs.b = sawyer.inputs.b;
    report.theoretical = Some(ConstantReport::evaluate(ConstantId::DualSawyer, inputs, cfg)?);
    report.finalize();
    Ok(report)
}

/// Greedy witness of the lower bound: on the extremal cube `Q` of the
/// multilinear bracket, `E_i = {x in Q : w_i(x) <= t_i}` for the threshold
/// `t_i` realizing `||chi_Q w_i^{-1}||_{L^{p_i',inf}(w_i)}`.
pub fn greedy_witness(wv: &WeightVector, exponents: &ExponentTuple) -> Result<(f64, Vec<GridFunction>), VerifyError> {
    let witness = multilinear_bracket_witness(wv, exponents)?;
    let window = *wv.window();
    let sets = wv
        .weights()
        .iter()
        .zip(&witness.levels)
        .map(|(w, &level)| cube_indicator(&window, &witness.cube, |c| w.values()[c] <= level))
        .collect::<Result<_, _>>()?;
    Ok((witness.value, sets))
}

/// Restricted weak norm of the multi-variable maximal operator against the
/// multilinear bracket: characteristic inputs stay below
/// `2^{nm} 72^{n/p} [w, nu]`, and the greedy witness reaches
/// `[w, nu] / (1.05^m prod p_i 3^{nm})`.
pub fn check_multilinear_characterization(
    wv: &WeightVector,
    exponents: &ExponentTuple,
    family: &[(String, Vec<GridFunction>)],
) -> Result<RatioReport, VerifyError> {
    let m = exponents.len();
    check_arity(wv.weights().len(), exponents)?;
    if !family.is_empty() {
        check_tuples(family, m)?;
    }
    let window = *wv.window();
    let n = window.dim() as f64;
    let p = exponents.p();
    let (bracket, sets) = greedy_witness(wv, exponents)?;
    let mut inputs: Vec<(String, Vec<GridFunction>)> = family.to_vec();
    inputs.push(("greedy-witness".into(), sets));
    let nu = wv.target();
    let rows: Vec<(f64, f64)> = inputs
        .par_iter()
        .map(|(_, fs)| -> Result<(f64, f64), VerifyError> {
            let mm = multilinear_maximal(fs, false)?;
            let mut rhs = 1.0;
            for ((f, w), &pi) in fs.iter().zip(wv.weights()).zip(exponents.p_list()) {
                rhs *= norm_p1(f, w, pi)?;
            }
            Ok((norm_pinf(&mm, nu, p)?, rhs))
        })
        .collect::<Result<_, _>>()?;
    let mut report = RatioReport::new("multilinear_characterization");
    for ((id, _), (lhs, rhs)) in inputs.iter().zip(rows) {
        report.push(id.clone(), lhs, rhs);
    }
    let mf = m as f64;
    report.cap = Some(2f64.powf(n * mf) * 72f64.powf(n / p) * bracket);
    let prod_p: f64 = exponents.p_list().iter().product();
    let lower = bracket / (1.05f64.powf(mf) * prod_p * 3f64.powf(n * mf));
    let witness_ratio = report.rows.last().map_or(0.0, |r| r.ratio);
    report.checks.push(SideCheck::new("lower_bound", lower, witness_ratio));
    report.measured.insert("bracket".into(), bracket);
    report.finalize();
    Ok(report)
}

// ---------------------------------------------------------------------------
// experiment descriptions

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TheoremId {
    Sawyer,
    SawyerWeakened,
    Counterexample,
    Prodhl,
    Msawyer,
    SparseDomination,
    DualSawyer,
    MultilinearCharacterization,
}

impl TheoremId {
    pub fn as_str(self) -> &'static str {
        match self {
            TheoremId::Sawyer => "sawyer",
            TheoremId::SawyerWeakened => "sawyer_weakened",
            TheoremId::Counterexample => "counterexample",
            TheoremId::Prodhl => "prodhl",
            TheoremId::Msawyer => "msawyer",
            TheoremId::SparseDomination => "sparse_domination",
            TheoremId::DualSawyer => "dual_sawyer",
            TheoremId::MultilinearCharacterization => "multilinear_characterization",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct WindowSpec {
    #[serde(default = "default_dim")]
    pub n: usize,
    #[serde(rename = "K", default = "default_resolution")]
    pub k: u32,
    #[serde(rename = "L", default = "default_half_extent")]
    pub l: u32,
}

fn default_dim() -> usize {
    1
}
fn default_resolution() -> u32 {
    4
}
fn default_half_extent() -> u32 {
    6
}
fn default_samples() -> usize {
    25
}
fn default_lambda() -> f64 {
    2.0
}
fn default_true() -> bool {
    true
}

impl Default for WindowSpec {
    fn default() -> Self {
        Self { n: default_dim(), k: default_resolution(), l: default_half_extent() }
    }
}

impl WindowSpec {
    pub fn build(&self) -> Result<Window, VerifyError> {
        Ok(Window::new(self.n, self.k, self.l)?)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ExponentSpec {
    #[serde(default)]
    pub p_list: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
}

/// Where the sparse family of a domination check comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SparseSource {
    /// Stopping cubes of the first function of the first input.
    Stopping {
        #[serde(default = "default_lambda")]
        lambda: f64,
        #[serde(default)]
        shift: u8,
    },
    /// One cube of the unshifted grid.
    SingleCube { scale: i32, index: Vec<i64> },
    /// Every cube of the unshifted grid at scales `0..` inside the window;
    /// never sparse.
    AllDyadic,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub theorem: TheoremId,
    #[serde(default)]
    pub window: WindowSpec,
    #[serde(default)]
    pub exponents: ExponentSpec,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub weights: Vec<WeightSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<WeightSpec>,
    /// Target weight of the multilinear checks; the product weight when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<WeightSpec>,
    /// Explicit inputs, grouped into consecutive tuples of the arity.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub functions: Vec<FunctionSpec>,
    /// Random families drawn after the explicit inputs.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub families: Vec<FamilyKind>,
    /// Number of random inputs (tuples) drawn.
    #[serde(default = "default_samples")]
    pub samples: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sparse: Option<SparseSource>,
    /// Half extents of the counterexample table.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub l_list: Vec<u32>,
    /// Counterexample with `v = h + chi` (true) or the `v = 1` control.
    #[serde(default = "default_true")]
    pub weighted: bool,
    /// Added to `log10` of the theoretical constant (or of the cap when the
    /// bound is a cap); nonzero only to exercise the failure path.
    #[serde(default, skip_serializing_if = "is_zero")]
    pub theoretical_log10_offset: f64,
}

fn is_zero(x: &f64) -> bool {
    *x == 0.0
}

impl ExperimentSpec {
    pub fn new(theorem: TheoremId) -> Self {
        Self {
            id: None,
            theorem,
            window: WindowSpec::default(),
            exponents: ExponentSpec::default(),
            weights: Vec::new(),
            v: None,
            nu: None,
            functions: Vec::new(),
            families: Vec::new(),
            samples: default_samples(),
            seed: 0,
            sparse: None,
            l_list: Vec::new(),
            weighted: true,
            theoretical_log10_offset: 0.0,
        }
    }

    pub fn label(&self) -> String {
        self.id.clone().unwrap_or_else(|| self.theorem.as_str().to_string())
    }

    fn exponent_tuple(&self) -> Result<ExponentTuple, VerifyError> {
        if self.exponents.p_list.is_empty() {
            return Err(VerifyError::BadSpec("missing exponents.p_list".into()));
        }
        Ok(ExponentTuple::new(self.exponents.p_list.clone())?)
    }

    fn single_p(&self) -> Result<f64, VerifyError> {
        match self.exponents.p_list.as_slice() {
            [p] => Ok(*p),
            [] => Err(VerifyError::BadSpec("missing exponents.p_list".into())),
            _ => Err(VerifyError::BadSpec("exponents.p_list must hold one exponent".into())),
        }
    }

    fn epsilon(&self) -> Result<f64, VerifyError> {
        self.exponents.epsilon.ok_or_else(|| VerifyError::BadSpec("missing exponents.epsilon".into()))
    }

    fn weight(&self, window: &Window, i: usize) -> Result<GridFunction, VerifyError> {
        match self.weights.get(i) {
            Some(w) => w.build(window),
            None => Err(VerifyError::BadSpec(format!("missing weights[{i}]"))),
        }
    }

    fn v(&self, window: &Window) -> Result<GridFunction, VerifyError> {
        self.v.as_ref().map_or_else(|| Ok(GridFunction::ones(*window)), |v| v.build(window))
    }

    /// Explicit inputs followed by `samples` random tuples of arity `m`.
    pub fn inputs(&self, window: &Window, m: usize) -> Result<Vec<(String, Vec<GridFunction>)>, VerifyError> {
        if m == 0 {
            return Err(VerifyError::BadSpec("arity must be positive".into()));
        }
        if self.functions.len() % m != 0 {
            return Err(VerifyError::BadSpec(format!(
                "{} explicit functions do not split into tuples of {m}",
                self.functions.len()
            )));
        }
        let explicit: Vec<GridFunction> =
            self.functions.iter().map(|f| f.build(window)).collect::<Result<_, _>>()?;
        let mut out: Vec<(String, Vec<GridFunction>)> = explicit
            .chunks(m)
            .enumerate()
            .map(|(i, c)| (format!("explicit-{i}"), c.to_vec()))
            .collect();
        if !self.families.is_empty() && self.samples > 0 {
            let drawn = families::sample_functions(window, &self.families, self.samples * m, self.seed)?;
            for chunk in drawn.chunks(m) {
                let id = chunk.iter().map(|(id, _)| id.as_str()).collect::<Vec<_>>().join("+");
                out.push((id, chunk.iter().map(|(_, f)| f.clone()).collect()));
            }
        }
        Ok(out)
    }

    fn singles(&self, window: &Window) -> Result<Vec<(String, GridFunction)>, VerifyError> {
        Ok(self.inputs(window, 1)?.into_iter().map(|(id, mut fs)| (id, fs.remove(0))).collect())
    }

    fn sparse_family(&self, window: &Window, first: &GridFunction) -> Result<SparseFamily, VerifyError> {
        match self.sparse.clone().unwrap_or(SparseSource::Stopping { lambda: default_lambda(), shift: 0 }) {
            SparseSource::Stopping { lambda, shift } => {
                if shift > 3 || (window.dim() == 1 && shift > 1) {
                    return Err(VerifyError::BadSpec(format!("shift {shift} out of range")));
                }
                Ok(cz_sparse_decompose(first, Shift::from_bits(shift), lambda)?)
            }
            SparseSource::SingleCube { scale, index } => {
                if index.len() != window.dim() || scale < -(window.resolution() as i32) {
                    return Err(VerifyError::BadSpec("single cube does not fit the window".into()));
                }
                let cube = DyadicCube { shift: Shift::from_bits(0), scale, index };
                Ok(SparseFamily::new(*window, Shift::from_bits(0), 1.0, vec![cube]))
            }
            SparseSource::AllDyadic => {
                let cubes: Vec<DyadicCube> = enumerate_dyadic(window, Shift::from_bits(0))
                    .into_iter()
                    .filter(|c| c.scale >= 0 && c.scale <= window.half_extent() as i32)
                    .collect();
                Ok(SparseFamily::new(*window, Shift::from_bits(0), 0.5, cubes))
            }
        }
    }

    /// Runs the experiment.
    pub fn run(&self, cfg: &ConstantsConfig) -> Result<Outcome, VerifyError> {
        let start = Instant::now();
        let window = self.window.build()?;
        let mut outcome = match self.theorem {
            TheoremId::Counterexample => {
                let p = self.single_p()?;
                if self.window.n != 1 {
                    return Err(VerifyError::BadSpec("the counterexample lives on the line".into()));
                }
                let ls = if self.l_list.is_empty() { vec![self.window.l] } else { self.l_list.clone() };
                Outcome::Growth(check_counterexample(p, self.window.k, &ls, self.weighted)?)
            }
            TheoremId::Sawyer | TheoremId::SawyerWeakened => {
                let p = self.single_p()?;
                let u = self.weight(&window, 0)?;
                let v = self.v(&window)?;
                let family = self.singles(&window)?;
                Outcome::Ratio(if self.theorem == TheoremId::Sawyer {
                    check_sawyer(&u, &v, p, &family, cfg)?
                } else {
                    check_sawyer_weakened(&u, &v, p, &family)?
                })
            }
            TheoremId::Prodhl | TheoremId::Msawyer => {
                let e = self.exponent_tuple()?;
                let ws: Vec<GridFunction> =
                    (0..e.len()).map(|i| self.weight(&window, i)).collect::<Result<_, _>>()?;
                let family = self.inputs(&window, e.len())?;
                let v = match self.theorem {
                    TheoremId::Msawyer => Some(self.v(&window)?),
                    _ => None,
                };
                Outcome::Ratio(check_msawyer(&ws, v.as_ref(), &e, &family, cfg)?)
            }
            TheoremId::SparseDomination => {
                let e = self.exponent_tuple()?;
                let family = self.inputs(&window, e.len())?;
                nonempty(&family)?;
                let sparse = self.sparse_family(&window, &family[0].1[0])?;
                let v = self.v(&window)?;
                let w = match self.weights.first() {
                    Some(w) => w.build(&window)?,
                    None => GridFunction::ones(window),
                };
                Outcome::Ratio(check_sparse_domination(&sparse, &v, &w, e.p(), self.epsilon()?, &family, cfg)?)
            }
            TheoremId::DualSawyer => {
                let p = self.single_p()?;
                let u = self.weight(&window, 0)?;
                let v = self.v(&window)?;
                let family = self.singles(&window)?;
                Outcome::Ratio(check_dual_sawyer(&u, &v, p, self.epsilon()?, &family, cfg)?)
            }
            TheoremId::MultilinearCharacterization => {
                let e = self.exponent_tuple()?;
                let ws: Vec<GridFunction> =
                    (0..e.len()).map(|i| self.weight(&window, i)).collect::<Result<_, _>>()?;
                let mut wv = WeightVector::new(ws, &e)?;
                if let Some(nu) = &self.nu {
                    wv = wv.with_target(nu.build(&window)?)?;
                }
                let family = self.inputs(&window, e.len())?;
                Outcome::Ratio(check_multilinear_characterization(&wv, &e, &family)?)
            }
        };
        if let Outcome::Ratio(r) = &mut outcome {
            if self.theoretical_log10_offset != 0.0 {
                if let Some(t) = &mut r.theoretical {
                    t.log10_value += self.theoretical_log10_offset;
                }
                if let Some(cap) = &mut r.cap {
                    *cap *= 10f64.powf(self.theoretical_log10_offset);
                }
                r.finalize();
            }
            r.runtime = Some(start.elapsed());
        }
        if let Outcome::Growth(g) = &mut outcome {
            g.runtime = Some(start.elapsed());
        }
        Ok(outcome)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Ratio(RatioReport),
    Growth(GrowthReport),
}

impl Outcome {
    pub fn pass(&self) -> bool {
        match self {
            Outcome::Ratio(r) => r.pass,
            Outcome::Growth(g) => g.pass,
        }
    }

    pub fn theorem(&self) -> &str {
        match self {
            Outcome::Ratio(r) => &r.theorem,
            Outcome::Growth(g) => &g.theorem,
        }
    }
    /// Wall-clock time of the run; not serialized.
    pub fn runtime(&self) -> Option<Duration> {
        match self {
            Outcome::Ratio(r) => r.runtime,
            Outcome::Growth(g) => g.runtime,
        }
    }
}

/// An experiment with its result, kept together so failures can be replayed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentRecord {
    pub id: String,
    pub spec: ExperimentSpec,
    pub outcome: Outcome,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub suite: String,
    pub experiments: Vec<ExperimentRecord>,
    pub pass: bool,
}

impl SuiteReport {
    /// Records whose inequality failed.
    pub fn violations(&self) -> Vec<&ExperimentRecord> {
        self.experiments.iter().filter(|r| !r.outcome.pass()).collect()
    }

    /// Flat table with one line per input and per side check.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "theorem",
            "input_id",
            "lhs",
            "rhs",
            "ratio",
            "empirical_C",
            "theoretical_log10_C",
            "pass",
        ])?;
        for rec in &self.experiments {
            match &rec.outcome {
                Outcome::Ratio(r) => {
                    let bound = r.bound_log10().map(|b| b.to_string()).unwrap_or_default();
                    let theorem = format!("{}/{}", r.theorem, rec.id);
                    for row in &r.rows {
                        w.write_record([
                            theorem.as_str(),
                            &row.input_id,
                            &row.lhs.to_string(),
                            &row.rhs.to_string(),
                            &row.ratio.to_string(),
                            &r.empirical_c.to_string(),
                            &bound,
                            &row.pass.to_string(),
                        ])?;
                    }
                    for c in &r.checks {
                        w.write_record([
                            theorem.as_str(),
                            &format!("check:{}", c.name),
                            &c.lhs.to_string(),
                            &c.rhs.to_string(),
                            &ratio_of(c.lhs, c.rhs).to_string(),
                            &r.empirical_c.to_string(),
                            "",
                            &c.pass.to_string(),
                        ])?;
                    }
                }
                Outcome::Growth(g) => {
                    let theorem = format!("{}/{}", g.theorem, rec.id);
                    let top = g.rows.iter().map(|r| r.ratio).fold(0.0, f64::max);
                    for row in &g.rows {
                        w.write_record([
                            theorem.as_str(),
                            &format!("L={}", row.half_extent),
                            &row.lhs.to_string(),
                            &row.rhs.to_string(),
                            &row.ratio.to_string(),
                            &top.to_string(),
                            "",
                            &g.pass.to_string(),
                        ])?;
                    }
                }
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Runs every experiment on the current rayon pool. Records keep the input
/// order whatever the schedule.
pub fn run_suite(name: &str, specs: &[ExperimentSpec], cfg: &ConstantsConfig) -> Result<SuiteReport, VerifyError> {
    let outcomes: Vec<Outcome> = specs.par_iter().map(|s| s.run(cfg)).collect::<Result<_, _>>()?;
    let experiments: Vec<ExperimentRecord> = specs
        .iter()
        .zip(outcomes)
        .enumerate()
        .map(|(i, (spec, outcome))| ExperimentRecord {
            id: format!("{i:02}-{}", spec.label()),
            spec: spec.clone(),
            outcome,
        })
        .collect();
    let pass = experiments.iter().all(|r| r.outcome.pass());
    Ok(SuiteReport { suite: name.to_string(), experiments, pass })
}

/// Names of the bundled suites.
pub const SUITES: [&str; 1] = ["paper-core"];

/// A bundled suite on the given window (`n = 1`, `K = 4`, `L = 6` by default).
pub fn bundled_suite(name: &str, window: WindowSpec, seed: u64) -> Option<Vec<ExperimentSpec>> {
    (name == "paper-core").then(|| core_suite(window, seed))
}

fn core_suite(window: WindowSpec, seed: u64) -> Vec<ExperimentSpec> {
    let mut specs = Vec::new();
    let dim = window.n;
    let unit_box = FunctionSpec::Indicator { lo: vec![0.0; dim], hi: vec![1.0; dim] };
    let far_box = FunctionSpec::Indicator { lo: vec![-2.0; dim], hi: vec![-1.0; dim] };
    let mh_inverse = WeightSpec::Mh { h: unit_box.clone(), exponent: -1.0 };
    let mixed = vec![FamilyKind::DyadicUnion, FamilyKind::RandomStep, FamilyKind::PowerBump, FamilyKind::MhDerived];
    let base = |theorem: TheoremId, id: &str, p_list: Vec<f64>| {
        let mut s = ExperimentSpec::new(theorem);
        s.id = Some(id.to_string());
        s.window = window;
        s.exponents.p_list = p_list;
        s.families = mixed.clone();
        s.samples = 8;
        s.seed = seed;
        s
    };

    let mut s = base(TheoremId::Sawyer, "sawyer-unit", vec![2.0]);
    s.weights = vec![WeightSpec::Ones];
    s.functions = vec![unit_box.clone()];
    specs.push(s);

    let mut s = base(TheoremId::Sawyer, "sawyer-step", vec![1.5]);
    s.weights = vec![WeightSpec::Step { values: vec![1.0, 2.0, 4.0, 1.0] }];
    specs.push(s);

    let mut s = base(TheoremId::Sawyer, "sawyer-power-mh", vec![2.0]);
    s.weights = vec![WeightSpec::Power { a: 0.5 }];
    s.v = Some(mh_inverse.clone());
    specs.push(s);

    let mut s = base(TheoremId::Sawyer, "sawyer-a1", vec![1.0]);
    s.weights = vec![WeightSpec::Power { a: -0.5 }];
    s.v = Some(mh_inverse.clone());
    specs.push(s);

    if dim == 1 {
        let mut s = base(TheoremId::Counterexample, "counterexample", vec![2.0]);
        s.l_list = (2..=window.l.max(2)).collect();
        s.families.clear();
        s.samples = 0;
        specs.push(s);
        let mut s = base(TheoremId::Counterexample, "counterexample-control", vec![2.0]);
        s.l_list = (2..=window.l.max(2)).collect();
        s.weighted = false;
        s.families.clear();
        s.samples = 0;
        specs.push(s);
    }

    let mut s = base(TheoremId::Prodhl, "prodhl", vec![2.0, 2.0]);
    s.weights = vec![WeightSpec::Step { values: vec![1.0, 2.0] }, WeightSpec::Ones];
    s.functions = vec![unit_box.clone(), unit_box.clone()];
    specs.push(s);

    let mut s = base(TheoremId::Prodhl, "prodhl-mixed", vec![1.0, 2.0]);
    s.weights = vec![WeightSpec::Power { a: -0.5 }, WeightSpec::Step { values: vec![2.0, 1.0, 3.0] }];
    specs.push(s);

    let (ws, v) = families::mh_power_fixture(&[unit_box.clone(), far_box.clone()], &[1.5, 2.0])
        .expect("fixture arity");
    let mut s = base(TheoremId::Msawyer, "msawyer-fixture", vec![1.5, 2.0]);
    s.weights = ws;
    s.v = Some(v);
    specs.push(s);

    let mut s = base(TheoremId::SparseDomination, "sparse-stopping", vec![2.0, 2.0]);
    s.exponents.epsilon = Some(0.5);
    s.sparse = Some(SparseSource::Stopping { lambda: 2.0, shift: 0 });
    specs.push(s);

    let mut s = base(TheoremId::SparseDomination, "sparse-single", vec![1.0]);
    s.exponents.epsilon = Some(0.5);
    s.sparse = Some(SparseSource::SingleCube { scale: 0, index: vec![0; dim] });
    specs.push(s);

    let mut s = base(TheoremId::DualSawyer, "dual-step", vec![2.0]);
    s.weights = vec![WeightSpec::Step { values: vec![1.0, 2.0] }];
    s.exponents.epsilon = Some(1.0);
    s.families = vec![FamilyKind::DyadicUnion, FamilyKind::Indicator, FamilyKind::RandomStep];
    specs.push(s);

    let mut s = base(TheoremId::DualSawyer, "dual-a1-transfer", vec![2.0]);
    s.weights = vec![WeightSpec::Power { a: -0.5 }];
    s.v = Some(WeightSpec::Power { a: 0.25 });
    s.exponents.epsilon = Some(0.5);
    specs.push(s);

    let mut s = base(TheoremId::MultilinearCharacterization, "multilinear-unit", vec![2.0, 2.0]);
    s.weights = vec![WeightSpec::Ones, WeightSpec::Ones];
    s.families = vec![FamilyKind::DyadicUnion, FamilyKind::Indicator];
    specs.push(s);

    let mut s = base(TheoremId::MultilinearCharacterization, "multilinear-step", vec![1.0, 2.0]);
    s.weights = vec![WeightSpec::Step { values: vec![1.0, 3.0] }, WeightSpec::Step { values: vec![2.0, 1.0, 1.0, 4.0] }];
    s.families = vec![FamilyKind::DyadicUnion, FamilyKind::Indicator];
    specs.push(s);

    let mut s = base(TheoremId::SawyerWeakened, "open-slot", vec![2.0]);
    s.weights = vec![WeightSpec::Ones];
    s.v = Some(WeightSpec::Power { a: -0.25 });
    specs.push(s);

    specs
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::{maximal_oracle, product_maximal};

    fn indicator(lo: f64, hi: f64) -> FunctionSpec {
        FunctionSpec::Indicator { lo: vec![lo], hi: vec![hi] }
    }
    fn cfg() -> ConstantsConfig {
        ConstantsConfig::default()
    }

    fn line(k: u32, l: u32) -> Window {
        Window::new(1, k, l).unwrap()
    }

    fn build(f: &FunctionSpec, w: &Window) -> GridFunction {
        f.build(w).unwrap()
    }

    #[test]
    fn unit_sawyer_ratio_is_one_half() {
        let win = line(6, 3);
        let chi = build(&indicator(0.0, 1.0), &win);
        let ones = GridFunction::ones(win);
        let r = check_sawyer(&ones, &ones, 2.0, &[("chi".into(), chi)], &cfg()).unwrap();
        assert!((r.rows[0].ratio - 0.5).abs() <= 0.02 * 0.5, "{}", r.rows[0].ratio);
        assert!(r.pass);
        assert!(r.theoretical.as_ref().unwrap().log10_value > 0.5f64.log10());
    }

    #[test]
    fn sawyer_with_power_weight_and_mh_transfer() {
        let win = line(3, 4);
        let u = WeightSpec::Power { a: 0.5 }.build(&win).unwrap();
        let v = WeightSpec::Mh { h: indicator(0.0, 1.0), exponent: -1.0 }.build(&win).unwrap();
        let fam = families::sample_functions(&win, &FamilyKind::ALL, 10, 3).unwrap();
        let r = check_sawyer(&u, &v, 2.0, &fam, &cfg()).unwrap();
        assert!(r.pass);
        assert_eq!(r.rows.len(), 10);
        assert!(check_sawyer(&u, &v, 2.0, &[], &cfg()).is_err());
    }

    #[test]
    fn one_variable_collapse() {
        let win = line(3, 3);
        let u = WeightSpec::Step { values: vec![1.0, 3.0, 2.0] }.build(&win).unwrap();
        let v = WeightSpec::Mh { h: indicator(-1.0, 0.5), exponent: -0.5 }.build(&win).unwrap();
        let fam = families::sample_functions(&win, &FamilyKind::ALL, 6, 11).unwrap();
        let tuples: Vec<(String, Vec<GridFunction>)> =
            fam.iter().map(|(id, f)| (id.clone(), vec![f.clone()])).collect();
        let single = check_sawyer(&u, &v, 1.5, &fam, &cfg()).unwrap();
        let e = ExponentTuple::single(1.5).unwrap();
        let multi = check_msawyer(std::slice::from_ref(&u), Some(&v), &e, &tuples, &cfg()).unwrap();
        for (a, b) in single.rows.iter().zip(&multi.rows) {
            assert!((a.ratio - b.ratio).abs() <= 1e-12 * a.ratio.max(1.0));
        }
        let wv = WeightVector::new(vec![u.clone()], &e).unwrap();
        let ml = check_multilinear_characterization(&wv, &e, &[]).unwrap();
        assert!((ml.measured["bracket"] - apr_bracket(&u, 1.5).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn product_bound_on_unit_weights_matches_oracle() {
        let win = line(3, 3);
        let chi = build(&indicator(0.0, 1.0), &win);
        let ones = GridFunction::ones(win);
        let e = ExponentTuple::new(vec![2.0, 2.0]).unwrap();
        let r = check_msawyer(
            &[ones.clone(), ones.clone()],
            None,
            &e,
            &[("chi-chi".into(), vec![chi.clone(), chi.clone()])],
            &cfg(),
        )
        .unwrap();
        assert_eq!(r.theorem, "prodhl");
        let m = maximal_oracle(&chi, &MaximalVariant::Uncentered).unwrap();
        let exact = norm_pinf(&m.mul(&m).unwrap(), &ones, 1.0).unwrap();
        assert!((r.rows[0].lhs - exact).abs() < 1e-12);
        assert!((r.rows[0].rhs - 4.0).abs() < 1e-12);
        assert!(r.checks.iter().all(|c| c.pass));
        assert!(r.pass);
        let tensor = product_maximal(&[chi.clone(), chi]).unwrap();
        assert!((norm_pinf(&tensor, &ones, 1.0).unwrap() - exact).abs() < 1e-12);
    }

    #[test]
    fn counterexample_grows_and_control_is_flat() {
        let g = check_counterexample(2.0, 4, &[2, 4, 6], true).unwrap();
        assert!(g.strictly_increasing);
        assert!(g.max_relative_error < MESH_TOLERANCE, "{g:?}");
        assert!(g.pass);
        let c = check_counterexample(2.0, 4, &[2, 4, 6], false).unwrap();
        assert!(c.rows.iter().all(|r| (r.ratio - 1.0).abs() < 1e-12));
        assert!(c.pass);
        assert!(check_counterexample(1.0, 4, &[2], true).is_err());
    }

    #[test]
    fn single_cube_is_dominated_pointwise() {
        let win = line(3, 3);
        let fam = families::sample_functions(&win, &FamilyKind::ALL, 8, 5).unwrap();
        let tuples: Vec<(String, Vec<GridFunction>)> =
            fam.iter().map(|(id, f)| (id.clone(), vec![f.clone()])).collect();
        let cube = DyadicCube { shift: Shift::from_bits(0), scale: 1, index: vec![-1] };
        let s = SparseFamily::new(win, Shift::from_bits(0), 1.0, vec![cube]);
        let ones = GridFunction::ones(win);
        let r = check_sparse_domination(&s, &ones, &ones, 1.0, 0.5, &tuples, &cfg()).unwrap();
        assert!(r.rows.iter().all(|row| row.ratio <= 1.0 + 1e-12));
        assert!(r.pass);
    }

    #[test]
    fn non_sparse_family_is_rejected() {
        let mut spec = ExperimentSpec::new(TheoremId::SparseDomination);
        spec.window = WindowSpec { n: 1, k: 1, l: 2 };
        spec.exponents = ExponentSpec { p_list: vec![1.0], epsilon: Some(0.5) };
        spec.functions = vec![indicator(0.0, 1.0)];
        spec.sparse = Some(SparseSource::AllDyadic);
        assert!(matches!(spec.run(&cfg()), Err(VerifyError::UncertifiedFamily { .. })));
    }

    #[test]
    fn stopping_family_domination_two_functions() {
        let mut spec = ExperimentSpec::new(TheoremId::SparseDomination);
        spec.window = WindowSpec { n: 1, k: 3, l: 3 };
        spec.exponents = ExponentSpec { p_list: vec![2.0, 2.0], epsilon: Some(0.5) };
        spec.families = FamilyKind::ALL.to_vec();
        spec.samples = 6;
        let Outcome::Ratio(r) = spec.run(&cfg()).unwrap() else { panic!("ratio expected") };
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn dual_bound_and_characterization() {
        let win = line(2, 3);
        let ones = GridFunction::ones(win);
        let fam = families::sample_functions(&win, &[FamilyKind::DyadicUnion, FamilyKind::Indicator], 6, 1).unwrap();
        let r = check_dual_sawyer(&ones, &ones, 2.0, 1.0, &fam, &cfg()).unwrap();
        assert!(r.measured["char_sup"] >= 0.5 - 1e-12);
        assert!(r.pass, "{r:?}");
        let u = WeightSpec::Step { values: vec![1.0, 2.0] }.build(&line(4, 2)).unwrap();
        let fam = families::sample_functions(u.window(), &[FamilyKind::DyadicUnion], 4, 2).unwrap();
        let r = check_dual_sawyer(&u, &GridFunction::ones(*u.window()), 2.0, 1.0, &fam, &cfg()).unwrap();
        assert!(r.checks.iter().all(|c| c.pass), "{:?}", r.checks);
        assert!(r.pass);
        assert!(check_dual_sawyer(&u, &u, 1.0, 1.0, &fam, &cfg()).is_err());
    }

    #[test]
    fn multilinear_unit_weights() {
        let win = line(2, 3);
        let e = ExponentTuple::new(vec![2.0, 2.0]).unwrap();
        let wv = WeightVector::new(vec![GridFunction::ones(win), GridFunction::ones(win)], &e).unwrap();
        let fam = families::sample_functions(&win, &[FamilyKind::DyadicUnion, FamilyKind::Indicator], 10, 4).unwrap();
        let tuples: Vec<(String, Vec<GridFunction>)> = fam
            .chunks(2)
            .map(|c| (format!("{}+{}", c[0].0, c[1].0), vec![c[0].1.clone(), c[1].1.clone()]))
            .collect();
        let r = check_multilinear_characterization(&wv, &e, &tuples).unwrap();
        assert!((r.measured["bracket"] - 1.0).abs() < 1e-12);
        let lower = 1.0 / (1.05f64.powi(2) * 4.0 * 9.0);
        assert!(r.empirical_c >= lower);
        assert!(r.pass, "{r:?}");
    }

    #[test]
    fn sparse_maximal_is_below_sparse_operator() {
        let win = line(3, 2);
        let fam = families::sample_functions(&win, &FamilyKind::ALL, 6, 9).unwrap();
        for (_, f) in fam {
            let s = cz_sparse_decompose(&f, Shift::from_bits(0), 2.0).unwrap();
            let ms = maximal(&f, &MaximalVariant::Sparse(s.cubes.clone())).unwrap();
            let a = sparse_operator(&s, std::slice::from_ref(&f)).unwrap();
            for (x, y) in ms.values().iter().zip(a.values()) {
                assert!(*x <= y * (1.0 + 1e-12));
            }
        }
    }

    #[test]
    fn corrupted_constant_fails() {
        let mut spec = ExperimentSpec::new(TheoremId::Sawyer);
        spec.window = WindowSpec { n: 1, k: 2, l: 2 };
        spec.exponents.p_list = vec![2.0];
        spec.weights = vec![WeightSpec::Ones];
        spec.functions = vec![indicator(0.0, 1.0)];
        let Outcome::Ratio(r) = spec.run(&cfg()).unwrap() else { panic!("ratio expected") };
        assert!(r.pass);
        let gap = r.bound_log10().unwrap() - r.empirical_c.log10();
        spec.theoretical_log10_offset = -(gap + 0.5);
        assert!(!spec.run(&cfg()).unwrap().pass());
    }

    #[test]
    fn spec_validation() {
        let spec: Result<ExperimentSpec, _> = serde_json::from_str(r#"{"theorem":"nope"}"#);
        assert!(spec.is_err());
        let spec: ExperimentSpec = serde_json::from_str(r#"{"theorem":"sawyer","weights":[{"kind":"ones"}]}"#).unwrap();
        let err = spec.run(&cfg()).unwrap_err().to_string();
        assert!(err.contains("p_list"), "{err}");
    }

    #[test]
    fn suite_is_deterministic_and_csv_has_header() {
        let window = WindowSpec { n: 1, k: 2, l: 3 };
        let specs = bundled_suite("paper-core", window, 5).unwrap();
        let a = run_suite("paper-core", &specs, &cfg()).unwrap();
        let b = run_suite("paper-core", &specs, &cfg()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        for rec in &a.experiments {
            assert!(rec.outcome.pass(), "{}: {:?}", rec.id, rec.outcome);
        }
        let mut buf = Vec::new();
        a.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("theorem,input_id,lhs,rhs,ratio,empirical_C,theoretical_log10_C,pass\n"));
        assert!(!serde_json::to_string(&a).unwrap().contains("runtime"));
    }
}
