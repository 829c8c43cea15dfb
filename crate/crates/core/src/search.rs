//! Derivative-free extremal search over parametric weight families.
//!
//! Coordinate pattern search with step halving inside a parameter box,
//! restarted from seeded starting points. Restarts run concurrently and are
//! merged by `(ratio, restart index)`, so a result depends only on its inputs.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::constants::ConstantsConfig;
use crate::grid::Window;
use crate::lorentz::{norm_p1, norm_pinf, norm_triple, GridFunction};
use crate::operators::{multilinear_maximal, n_theta};
use crate::verify::families::{self, FamilyKind, FunctionSpec, WeightSpec};
use crate::verify::{ExperimentSpec, Outcome, RatioReport, TheoremId, VerifyError, WindowSpec};
use crate::weights::{fujii_wilson, multilinear_apr, AprVariant, ExponentTuple, WeightVector};

/// Smallest accepted evaluation budget.
pub const MIN_BUDGET: usize = 50;
/// Polling stops once every step is below this fraction of its box width.
const MIN_STEP_FRACTION: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("budget {0} is below the minimum of {MIN_BUDGET} evaluations")]
    BadBudget(usize),
    #[error("restarts must be positive")]
    NoRestarts,
    #[error("parameters {params:?} give a non-positive weight")]
    DegenerateFamily { params: Vec<f64> },
    #[error("invalid family: {0}")]
    BadFamily(String),
    #[error("objective {objective} does not fit the family: {reason}")]
    Mismatch { objective: String, reason: String },
    #[error("{0} has no theoretical constant to compare against")]
    NoConstant(String),
    #[error(transparent)]
    Verify(#[from] VerifyError),
}

impl SearchError {
    fn from_eval(e: VerifyError, params: &[f64]) -> Self {
        match e {
            VerifyError::Lorentz(crate::lorentz::LorentzError::NotPositive { .. }) => {
                SearchError::DegenerateFamily { params: params.to_vec() }
            }
            VerifyError::BadSpec(msg) if msg.contains("positive") => {
                SearchError::DegenerateFamily { params: params.to_vec() }
            }
            e => SearchError::Verify(e),
        }
    }
}

/// Shape of each weight of a parametric family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ParamKind {
    /// Unit weights; a zero-dimensional box.
    Ones,
    /// `|x|^a` with one exponent per weight.
    Power,
    /// Step weights with `levels` log-levels per weight.
    Step { levels: usize },
    /// `(M chi_{[c, c+1)^n})^{(1 - p_i)/m}` with one offset `c` per weight, and
    /// the matching `v` that makes `nu v^p` constant.
    MhProduct,
    /// `|x|^a` times a two-block step with log-ratio `b`, two parameters per
    /// weight.
    Mixed,
}

impl ParamKind {
    fn per_weight(self) -> usize {
        match self {
            ParamKind::Ones => 0,
            ParamKind::Power | ParamKind::MhProduct => 1,
            ParamKind::Step { levels } => levels,
            ParamKind::Mixed => 2,
        }
    }

    fn default_box(self, window: &WindowSpec, p: f64) -> (f64, f64) {
        let dim = window.n;
        match self {
            ParamKind::Ones => (0.0, 0.0),
            // locally integrable, and inside A_p for p > 1
            ParamKind::Power | ParamKind::Mixed => (-0.9 * dim as f64, 0.9 * dim as f64 * (p - 1.0).max(0.0)),
            ParamKind::Step { .. } => (-2.0, 2.0),
            // the unit cube must stay inside the window
            ParamKind::MhProduct => {
                let half = 2f64.powi(window.l as i32);
                (-half, half - 1.0)
            }
        }
    }
}

/// A parametric family of weight tuples on a fixed window, with a fixed
/// sample of input functions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamFamily {
    pub kind: ParamKind,
    pub window: WindowSpec,
    pub p_list: Vec<f64>,
    /// Box of the search; weight parameters first, then the `nu` exponent
    /// when `nu` is decoupled.
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// `nu = nu_w |x|^b` with `b` a free parameter.
    #[serde(default)]
    pub decouple_nu: bool,
    pub samples: usize,
    pub input_seed: u64,
}

/// Weights built from one parameter point, as replayable specs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance {
    pub weights: Vec<WeightSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<WeightSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub nu: Option<WeightSpec>,
}

impl ParamFamily {
    /// Family with its default box, 8 sampled inputs and the `nu` exponent in
    /// `[-0.5, 0.5]` when decoupled.
    pub fn new(kind: ParamKind, window: WindowSpec, p_list: Vec<f64>, decouple_nu: bool) -> Result<Self, SearchError> {
        if p_list.is_empty() {
            return Err(SearchError::BadFamily("empty p_list".into()));
        }
        ExponentTuple::new(p_list.clone()).map_err(VerifyError::from)?;
        if let ParamKind::Step { levels } = kind {
            if levels == 0 {
                return Err(SearchError::BadFamily("step family needs at least one level".into()));
            }
        }
        let mut lower = Vec::new();
        let mut upper = Vec::new();
        for &p in &p_list {
            let (lo, hi) = kind.default_box(&window, p);
            for _ in 0..kind.per_weight() {
                lower.push(lo);
                upper.push(hi);
            }
            if kind == ParamKind::Mixed {
                let k = lower.len() - 1;
                lower[k] = -2.0;
                upper[k] = 2.0;
            }
        }
        if decouple_nu {
            lower.push(-0.5);
            upper.push(0.5);
        }
        Ok(Self { kind, window, p_list, lower, upper, decouple_nu, samples: 8, input_seed: 0 })
    }

    pub fn with_box(mut self, lower: Vec<f64>, upper: Vec<f64>) -> Result<Self, SearchError> {
        if lower.len() != self.lower.len() || upper.len() != self.upper.len() {
            return Err(SearchError::BadFamily(format!("box must have {} coordinates", self.lower.len())));
        }
        if lower.iter().zip(&upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && l <= u)) {
            return Err(SearchError::BadFamily("box bounds must be finite with lower <= upper".into()));
        }
        self.lower = lower;
        self.upper = upper;
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn arity(&self) -> usize {
        self.p_list.len()
    }

    fn clamp(&self, x: &mut [f64]) {
        for ((v, lo), hi) in x.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.clamp(*lo, *hi);
        }
    }

    /// Weight specs at a parameter point.
    pub fn instance(&self, params: &[f64]) -> Result<Instance, SearchError> {
        if params.len() != self.dim() {
            return Err(SearchError::BadFamily(format!("expected {} parameters, got {}", self.dim(), params.len())));
        }
        if params.iter().any(|x| !x.is_finite()) {
            return Err(SearchError::DegenerateFamily { params: params.to_vec() });
        }
        let k = self.kind.per_weight();
        let m = self.arity() as f64;
        let dim = self.window.n;
        let mut weights = Vec::with_capacity(self.arity());
        let mut hs = Vec::new();
        for (i, chunk) in params[..k * self.arity()].chunks(k.max(1)).enumerate().take(self.arity()) {
            let w = match self.kind {
                ParamKind::Ones => WeightSpec::Ones,
                ParamKind::Power => WeightSpec::Power { a: chunk[0] },
                ParamKind::Step { .. } => WeightSpec::Step { values: chunk.iter().map(|x| x.exp()).collect() },
                ParamKind::MhProduct => {
                    let h = FunctionSpec::Indicator { lo: vec![chunk[0]; dim], hi: vec![chunk[0] + 1.0; dim] };
                    hs.push(h.clone());
                    WeightSpec::Mh { h, exponent: (1.0 - self.p_list[i]) / m }
                }
                ParamKind::Mixed => WeightSpec::Product {
                    factors: vec![
                        WeightSpec::Power { a: chunk[0] },
                        WeightSpec::Step { values: vec![1.0, chunk[1].exp()] },
                    ],
                },
            };
            weights.push(w);
        }
        if self.kind == ParamKind::Ones {
            weights = vec![WeightSpec::Ones; self.arity()];
        }
        let v = if self.kind == ParamKind::MhProduct {
            Some(families::mh_power_fixture(&hs, &self.p_list)?.1)
        } else {
            None
        };
        let nu = if self.decouple_nu {
            let b = *params.last().expect("decoupled nu has a parameter");
            let window = self.window.build()?;
            let built = build_weights(&weights, &window, params)?;
            let e = ExponentTuple::new(self.p_list.clone()).map_err(VerifyError::from)?;
            let target = WeightVector::new(built, &e).map_err(VerifyError::from)?.target().clone();
            let tilt = WeightSpec::Power { a: b }.build(&window).map_err(|e| SearchError::from_eval(e, params))?;
            let nu = target.mul(&tilt).map_err(VerifyError::from)?;
            Some(WeightSpec::Values { values: nu.into_values() })
        } else {
            None
        };
        Ok(Instance { weights, v, nu })
    }

    fn functions(&self, window: &Window) -> Result<Vec<Vec<GridFunction>>, SearchError> {
        let m = self.arity();
        let drawn = families::sample_functions(window, &FamilyKind::ALL, self.samples.max(1) * m, self.input_seed)?;
        Ok(drawn.chunks(m).map(|c| c.iter().map(|(_, f)| f.clone()).collect()).collect())
    }
}

fn build_weights(specs: &[WeightSpec], window: &Window, params: &[f64]) -> Result<Vec<GridFunction>, SearchError> {
    specs
        .iter()
        .map(|w| {
            let built = w.build(window).map_err(|e| SearchError::from_eval(e, params))?;
            if built.is_positive() {
                Ok(built)
            } else {
                Err(SearchError::DegenerateFamily { params: params.to_vec() })
            }
        })
        .collect()
}

/// Quantity being maximized.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Objective {
    /// Largest Sawyer ratio over the inputs, held to its constant.
    Sawyer,
    /// Product bound, held to its constant.
    Prodhl,
    /// Multi-variable Sawyer bound with the family's `v`, held to its constant.
    Msawyer,
    /// `(p/(p-r))^{1/r} ||f||_{L^{p,inf}(nu)} / |||f|||_{p,r}` with `nu` the
    /// first weight; never below 1.
    KolmogorovSlack { r: f64 },
    /// `||M(f)/v||_{L^{p,inf}(nu v^p)} / ([w, nu] prod ||f_i||_{L^{p_i,1}(w_i)})`.
    /// With `theta`, the majorant
    /// `||N^theta(f)/v^theta||_{L^{p/theta,inf}(nu v^p)}^{1/theta} / prod ||f_i||`
    /// instead.
    Conjecture {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        theta: Option<f64>,
    },
}

impl Objective {
    pub fn name(&self) -> &'static str {
        match self {
            Objective::Sawyer => "sawyer",
            Objective::Prodhl => "prodhl",
            Objective::Msawyer => "msawyer",
            Objective::KolmogorovSlack { .. } => "kolmogorov_slack",
            Objective::Conjecture { .. } => "conjecture",
        }
    }

    fn theorem(&self) -> Option<TheoremId> {
        match self {
            Objective::Sawyer => Some(TheoremId::Sawyer),
            Objective::Prodhl => Some(TheoremId::Prodhl),
            Objective::Msawyer => Some(TheoremId::Msawyer),
            _ => None,
        }
    }
}

/// One objective value with the bound it must respect, if any.
#[derive(Debug, Clone, PartialEq)]
struct Evaluation {
    ratio: f64,
    bound_log10: Option<f64>,
    within_bound: bool,
    replay: Option<ExperimentSpec>,
}

fn mismatch(objective: &Objective, reason: &str) -> SearchError {
    SearchError::Mismatch { objective: objective.name().into(), reason: reason.into() }
}

fn evaluate(
    objective: &Objective,
    family: &ParamFamily,
    inputs: &[Vec<GridFunction>],
    params: &[f64],
    cfg: &ConstantsConfig,
) -> Result<Evaluation, SearchError> {
    let inst = family.instance(params)?;
    let window = family.window.build()?;
    let weights = build_weights(&inst.weights, &window, params)?;
    if let Some(theorem) = objective.theorem() {
        let mut spec = ExperimentSpec::new(theorem);
        spec.window = family.window;
        spec.exponents.p_list = family.p_list.clone();
        spec.weights = inst.weights.clone();
        spec.v = if theorem == TheoremId::Prodhl { None } else { inst.v.clone() };
        spec.families = FamilyKind::ALL.to_vec();
        spec.samples = family.samples.max(1);
        spec.seed = family.input_seed;
        let report = match spec.run(cfg).map_err(|e| SearchError::from_eval(e, params))? {
            Outcome::Ratio(r) => r,
            Outcome::Growth(_) => unreachable!("ratio theorems only"),
        };
        return Ok(Evaluation {
            ratio: report.empirical_c,
            bound_log10: report.bound_log10(),
            within_bound: report.pass,
            replay: Some(spec),
        });
    }
    let ratio = match *objective {
        Objective::KolmogorovSlack { r } => {
            let p = family.p_list[0];
            if family.arity() != 1 || !(r > 0.0 && r < p) {
                return Err(mismatch(objective, "needs one weight and 0 < r < p"));
            }
            let nu = &weights[0];
            let factor = (p / (p - r)).powf(1.0 / r);
            inputs
                .par_iter()
                .map(|fs| -> Result<f64, SearchError> {
                    let weak = norm_pinf(&fs[0], nu, p).map_err(VerifyError::from)?;
                    let triple = norm_triple(&fs[0], nu, p, r).map_err(VerifyError::from)?;
                    Ok(factor * weak / triple)
                })
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .fold(0.0, f64::max)
        }
        Objective::Conjecture { theta } => {
            let e = ExponentTuple::new(family.p_list.clone()).map_err(VerifyError::from)?;
            let p = e.p();
            let mut wv = WeightVector::new(weights.clone(), &e).map_err(VerifyError::from)?;
            if let Some(nu) = &inst.nu {
                let nu = nu.build(&window).map_err(|err| SearchError::from_eval(err, params))?;
                wv = wv.with_target(nu).map_err(VerifyError::from)?;
            }
            let bracket = multilinear_apr(&wv, &e, AprVariant::Bracket).map_err(VerifyError::from)?;
            if !(bracket.is_finite() && bracket > 0.0) {
                return Err(SearchError::DegenerateFamily { params: params.to_vec() });
            }
            let v = match &inst.v {
                Some(v) => v.build(&window).map_err(|err| SearchError::from_eval(err, params))?,
                None => GridFunction::ones(window),
            };
            let measure = wv.target().mul(&v.pow(p)).map_err(VerifyError::from)?;
            inputs
                .par_iter()
                .map(|fs| -> Result<f64, SearchError> {
                    let mut rhs = 1.0;
                    for ((f, w), &pi) in fs.iter().zip(&weights).zip(&family.p_list) {
                        rhs *= norm_p1(f, w, pi).map_err(VerifyError::from)?;
                    }
                    let lhs = match theta {
                        None => {
                            let mm = multilinear_maximal(fs, false).map_err(VerifyError::from)?;
                            let lhs = norm_pinf(&mm.div(&v).map_err(VerifyError::from)?, &measure, p)
                                .map_err(VerifyError::from)?;
                            lhs / bracket
                        }
                        Some(theta) => {
                            let nt = n_theta(fs, &wv, &e, theta).map_err(VerifyError::from)?;
                            let big_v = v.pow(theta);
                            let q = nt.div(&big_v).map_err(VerifyError::from)?;
                            norm_pinf(&q, &measure, p / theta).map_err(VerifyError::from)?.powf(1.0 / theta)
                        }
                    };
                    Ok(if lhs == 0.0 { 0.0 } else { lhs / rhs })
                })
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .fold(0.0, f64::max)
        }
        _ => unreachable!("handled above"),
    };
    Ok(Evaluation { ratio, bound_log10: None, within_bound: ratio.is_finite(), replay: None })
}

/// One objective evaluation of the trace.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TracePoint {
    pub restart: usize,
    pub evaluation: usize,
    pub params: Vec<f64>,
    pub ratio: f64,
}

/// A parameter point whose ratio broke its theoretical constant, with the
/// experiment that replays it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub objective: Objective,
    pub params: Vec<f64>,
    pub ratio: f64,
    pub theoretical_log10_c: Option<f64>,
    pub replay: Option<ExperimentSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub objective: Objective,
    pub family: ParamFamily,
    pub best_params: Vec<f64>,
    pub best_ratio: f64,
    pub best_restart: usize,
    pub best_instance: Instance,
    pub trace: Vec<TracePoint>,
    pub restarts: usize,
    pub budget: usize,
    pub seed: u64,
    pub violations: Vec<Violation>,
}

impl SearchResult {
    pub fn has_violation(&self) -> bool {
        !self.violations.is_empty()
    }

    /// Trace as CSV: restart, evaluation, ratio, then one column per parameter.
    pub fn write_trace_csv<W: Write>(&self, out: W) -> Result<(), csv::Error> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["restart".to_string(), "evaluation".into(), "ratio".into()];
        header.extend((0..self.family.dim()).map(|i| format!("x{i}")));
        w.write_record(&header)?;
        for t in &self.trace {
            let mut row = vec![t.restart.to_string(), t.evaluation.to_string(), t.ratio.to_string()];
            row.extend(t.params.iter().map(|x| x.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

struct RestartOutcome {
    best_params: Vec<f64>,
    best_ratio: f64,
    trace: Vec<TracePoint>,
    violations: Vec<Violation>,
}

fn run_restart(
    objective: &Objective,
    family: &ParamFamily,
    inputs: &[Vec<GridFunction>],
    start: Vec<f64>,
    restart: usize,
    budget: usize,
    cfg: &ConstantsConfig,
) -> Result<RestartOutcome, SearchError> {
    let mut trace = Vec::new();
    let mut violations = Vec::new();
    let mut eval = |x: &[f64], trace: &mut Vec<TracePoint>| -> Result<f64, SearchError> {
        let e = evaluate(objective, family, inputs, x, cfg)?;
        if !e.within_bound {
            violations.push(Violation {
                objective: *objective,
                params: x.to_vec(),
                ratio: e.ratio,
                theoretical_log10_c: e.bound_log10,
                replay: e.replay,
            });
        }
        trace.push(TracePoint { restart, evaluation: trace.len(), params: x.to_vec(), ratio: e.ratio });
        Ok(e.ratio)
    };
    let mut x = start;
    let mut fx = eval(&x, &mut trace)?;
    let widths: Vec<f64> = family.lower.iter().zip(&family.upper).map(|(l, u)| u - l).collect();
    let mut steps: Vec<f64> = widths.iter().map(|w| w / 4.0).collect();
    let active = widths.iter().any(|&w| w > 0.0);
    'outer: while active && trace.len() < budget {
        let mut improved = false;
        for i in 0..x.len() {
            if widths[i] == 0.0 {
                continue;
            }
            for dir in [1.0, -1.0] {
                if trace.len() >= budget {
                    break 'outer;
                }
                let mut y = x.clone();
                y[i] += dir * steps[i];
                family.clamp(&mut y);
                if y[i] == x[i] {
                    continue;
                }
                let fy = eval(&y, &mut trace)?;
                if fy > fx {
                    x = y;
                    fx = fy;
                    improved = true;
                    break;
                }
            }
        }
        if !improved {
            for s in &mut steps {
                *s /= 2.0;
            }
            if steps.iter().zip(&widths).all(|(s, w)| *s <= MIN_STEP_FRACTION * w) {
                break;
            }
        }
    }
    Ok(RestartOutcome { best_params: x, best_ratio: fx, trace, violations })
}

/// Maximizes `objective` over the family's box.
///
/// Restart 0 starts from the box center, the others from uniform points of a
/// ChaCha stream keyed by `seed` and the restart index. The budget is split
/// evenly across restarts. A zero-dimensional box is evaluated once.
pub fn maximize_ratio(
    objective: Objective,
    family: &ParamFamily,
    budget: usize,
    restarts: usize,
    seed: u64,
    cfg: &ConstantsConfig,
) -> Result<SearchResult, SearchError> {
    if budget < MIN_BUDGET {
        return Err(SearchError::BadBudget(budget));
    }
    if restarts == 0 {
        return Err(SearchError::NoRestarts);
    }
    let window = family.window.build()?;
    let inputs = family.functions(&window)?;
    let zero_dim = family.lower.iter().zip(&family.upper).all(|(l, u)| l == u);
    let restarts = if zero_dim { 1 } else { restarts };
    let per_restart = (budget / restarts).max(1);
    let starts: Vec<Vec<f64>> = (0..restarts)
        .map(|r| {
            if r == 0 {
                family.lower.iter().zip(&family.upper).map(|(l, u)| 0.5 * (l + u)).collect()
            } else {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(r as u64);
                family
                    .lower
                    .iter()
                    .zip(&family.upper)
                    .map(|(&l, &u)| if l < u { rng.gen_range(l..=u) } else { l })
                    .collect()
            }
        })
        .collect();
    let outcomes: Vec<RestartOutcome> = starts
        .into_par_iter()
        .enumerate()
        .map(|(r, start)| run_restart(&objective, family, &inputs, start, r, per_restart, cfg))
        .collect::<Result<_, _>>()?;
    let mut best = 0;
    for (r, o) in outcomes.iter().enumerate() {
        if o.best_ratio > outcomes[best].best_ratio {
            best = r;
        }
    }
    let best_params = outcomes[best].best_params.clone();
    let best_ratio = outcomes[best].best_ratio;
    let best_instance = family.instance(&best_params)?;
    let mut trace = Vec::new();
    let mut violations = Vec::new();
    for o in outcomes {
        trace.extend(o.trace);
        violations.extend(o.violations);
    }
    Ok(SearchResult {
        objective,
        family: family.clone(),
        best_params,
        best_ratio,
        best_restart: best,
        best_instance,
        trace,
        restarts,
        budget,
        seed,
        violations,
    })
}

/// Re-evaluates the objective at a parameter point.
pub fn reevaluate(
    objective: Objective,
    family: &ParamFamily,
    params: &[f64],
    cfg: &ConstantsConfig,
) -> Result<f64, SearchError> {
    let window = family.window.build()?;
    let inputs = family.functions(&window)?;
    Ok(evaluate(&objective, family, &inputs, params, cfg)?.ratio)
}

/// Named weights for [`sharpness_scan`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanFamily {
    pub name: String,
    pub weights: Vec<WeightSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v: Option<WeightSpec>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanRow {
    pub theorem: String,
    pub family: String,
    pub p_list: Vec<f64>,
    #[serde(rename = "empirical_C")]
    pub empirical_c: f64,
    #[serde(rename = "theoretical_log10_C")]
    pub theoretical_log10_c: f64,
    pub log10_gap: f64,
    /// `[u]_{A_p^R}` (or `[u]_{A_1}`) of the first weight when measured.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub first_weight_restricted: Option<f64>,
}

/// Empirical versus theoretical constant for every `(exponents, family)`
/// pair, exponent-major.
pub fn sharpness_scan(
    theorem: TheoremId,
    exponent_grid: &[Vec<f64>],
    families: &[ScanFamily],
    window: WindowSpec,
    samples: usize,
    seed: u64,
    epsilon: Option<f64>,
    cfg: &ConstantsConfig,
) -> Result<Vec<ScanRow>, SearchError> {
    if matches!(
        theorem,
        TheoremId::Counterexample | TheoremId::SawyerWeakened | TheoremId::MultilinearCharacterization
    ) {
        return Err(SearchError::NoConstant(theorem.as_str().into()));
    }
    let jobs: Vec<(&Vec<f64>, &ScanFamily)> =
        exponent_grid.iter().flat_map(|p| families.iter().map(move |f| (p, f))).collect();
    jobs.par_iter()
        .map(|(p_list, fam)| -> Result<ScanRow, SearchError> {
            let mut spec = ExperimentSpec::new(theorem);
            spec.window = window;
            spec.exponents.p_list = (*p_list).clone();
            spec.exponents.epsilon = epsilon;
            spec.weights = fam.weights.clone();
            spec.v = fam.v.clone();
            spec.families = FamilyKind::ALL.to_vec();
            spec.samples = samples;
            spec.seed = seed;
            let report: RatioReport = match spec.run(cfg)? {
                Outcome::Ratio(r) => r,
                Outcome::Growth(_) => return Err(SearchError::NoConstant(theorem.as_str().into())),
            };
            let theoretical = report
                .theoretical
                .as_ref()
                .map(|t| t.log10_value)
                .ok_or_else(|| SearchError::NoConstant(theorem.as_str().into()))?;
            let first = report
                .measured
                .get("u_restricted")
                .or_else(|| report.measured.get("w0_restricted"))
                .copied();
            Ok(ScanRow {
                theorem: theorem.as_str().into(),
                family: fam.name.clone(),
                p_list: (*p_list).clone(),
                empirical_c: report.empirical_c,
                theoretical_log10_c: theoretical,
                log10_gap: theoretical - report.empirical_c.log10(),
                first_weight_restricted: first,
            })
        })
        .collect()
}

pub fn write_scan_csv<W: Write>(rows: &[ScanRow], out: W) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["theorem", "family", "p_list", "empirical_C", "theoretical_log10_C", "log10_gap"])?;
    for r in rows {
        let p = r.p_list.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";");
        w.write_record([
            r.theorem.as_str(),
            &r.family,
            &p,
            &r.empirical_c.to_string(),
            &r.theoretical_log10_c.to_string(),
            &r.log10_gap.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Fujii-Wilson constant of `nu v^p` at a parameter point: the hypothesis of
/// the conjecture, reported alongside its ratio.
pub fn conjecture_a_infinity(family: &ParamFamily, params: &[f64]) -> Result<f64, SearchError> {
    let inst = family.instance(params)?;
    let window = family.window.build()?;
    let weights = build_weights(&inst.weights, &window, params)?;
    let e = ExponentTuple::new(family.p_list.clone()).map_err(VerifyError::from)?;
    let mut wv = WeightVector::new(weights, &e).map_err(VerifyError::from)?;
    if let Some(nu) = &inst.nu {
        wv = wv.with_target(nu.build(&window)?).map_err(VerifyError::from)?;
    }
    let v = match &inst.v {
        Some(v) => v.build(&window)?,
        None => GridFunction::ones(window),
    };
    let w = wv.target().mul(&v.pow(e.p())).map_err(VerifyError::from)?;
    Ok(fujii_wilson(&w).map_err(VerifyError::from)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ConstantsConfig {
        ConstantsConfig::default()
    }

    fn small() -> WindowSpec {
        WindowSpec { n: 1, k: 2, l: 2 }
    }

    #[test]
    fn zero_dimensional_family_is_one_evaluation() {
        let fam = ParamFamily::new(ParamKind::Ones, small(), vec![2.0], false).unwrap();
        assert_eq!(fam.dim(), 0);
        let r = maximize_ratio(Objective::Sawyer, &fam, 60, 3, 1, &cfg()).unwrap();
        assert_eq!(r.trace.len(), 1);
        let mut spec = ExperimentSpec::new(TheoremId::Sawyer);
        spec.window = small();
        spec.exponents.p_list = vec![2.0];
        spec.weights = vec![WeightSpec::Ones];
        spec.families = FamilyKind::ALL.to_vec();
        spec.samples = fam.samples;
        spec.seed = fam.input_seed;
        let Outcome::Ratio(direct) = spec.run(&cfg()).unwrap() else { panic!() };
        assert_eq!(r.best_ratio, direct.empirical_c);
        assert!(!r.has_violation());
    }

    #[test]
    fn kolmogorov_slack_is_at_least_one() {
        let fam = ParamFamily::new(ParamKind::Power, small(), vec![2.0], false).unwrap();
        let r = maximize_ratio(Objective::KolmogorovSlack { r: 1.0 }, &fam, 60, 2, 3, &cfg()).unwrap();
        assert!(r.best_ratio >= 1.0 - 1e-12);
        assert!(r.trace.iter().all(|t| t.ratio >= 1.0 - 1e-12));
    }

    #[test]
    fn search_is_reproducible() {
        let fam = ParamFamily::new(ParamKind::Step { levels: 2 }, small(), vec![2.0, 2.0], true).unwrap();
        let obj = Objective::Conjecture { theta: None };
        let a = maximize_ratio(obj, &fam, 60, 3, 7, &cfg()).unwrap();
        let b = maximize_ratio(obj, &fam, 60, 3, 7, &cfg()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        assert!(a.best_ratio.is_finite() && a.best_ratio > 0.0);
        let again = reevaluate(obj, &fam, &a.best_params, &cfg()).unwrap();
        assert!((again - a.best_ratio).abs() <= 1e-12 * a.best_ratio);
        assert!(a.trace.len() <= 60);
        let t = maximize_ratio(Objective::Conjecture { theta: Some(2.0) }, &fam, 50, 1, 7, &cfg()).unwrap();
        assert!(t.best_ratio.is_finite());
    }

    #[test]
    fn budget_and_box_validation() {
        let fam = ParamFamily::new(ParamKind::Power, small(), vec![2.0], false).unwrap();
        assert!(matches!(maximize_ratio(Objective::Sawyer, &fam, 0, 1, 0, &cfg()), Err(SearchError::BadBudget(0))));
        assert!(fam.clone().with_box(vec![1.0], vec![0.0]).is_err());
        assert!(matches!(fam.instance(&[f64::NAN]), Err(SearchError::DegenerateFamily { .. })));
    }

    #[test]
    fn theorem_objectives_stay_below_constants() {
        let fam = ParamFamily::new(ParamKind::Mixed, small(), vec![1.5], false).unwrap();
        let r = maximize_ratio(Objective::Sawyer, &fam, 50, 2, 2, &cfg()).unwrap();
        assert!(!r.has_violation());
        let fam = ParamFamily::new(ParamKind::MhProduct, small(), vec![1.5, 2.0], false).unwrap();
        let r = maximize_ratio(Objective::Msawyer, &fam, 50, 1, 2, &cfg()).unwrap();
        assert!(!r.has_violation());
    }

    #[test]
    fn scan_rows_and_gap() {
        let fams: Vec<ScanFamily> = [1.0, 2.0, 4.0, 8.0]
            .iter()
            .map(|&s| ScanFamily {
                name: format!("step-{s}"),
                weights: vec![WeightSpec::Step { values: vec![1.0, s] }],
                v: None,
            })
            .collect();
        let grid = vec![vec![1.5], vec![2.0]];
        let rows = sharpness_scan(TheoremId::Sawyer, &grid, &fams, small(), 4, 0, None, &cfg()).unwrap();
        assert_eq!(rows.len(), grid.len() * fams.len());
        assert!(rows.iter().all(|r| r.log10_gap > 0.0));
        // larger step contrast: larger restricted constant and larger gap
        for chunk in rows.chunks(fams.len()) {
            for pair in chunk.windows(2) {
                let (a, b) = (&pair[0], &pair[1]);
                assert!(b.first_weight_restricted >= a.first_weight_restricted);
                assert!(b.log10_gap >= a.log10_gap, "{a:?} {b:?}");
            }
        }
        let mut buf = Vec::new();
        write_scan_csv(&rows, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap().lines().count(), rows.len() + 1);
        assert!(sharpness_scan(TheoremId::Counterexample, &grid, &fams, small(), 4, 0, None, &cfg()).is_err());
    }

    #[test]
    fn unit_sawyer_gap_is_positive() {
        let fams = [ScanFamily { name: "ones".into(), weights: vec![WeightSpec::Ones], v: None }];
        let rows = sharpness_scan(TheoremId::Sawyer, &[vec![2.0]], &fams, small(), 4, 0, None, &cfg()).unwrap();
        assert!(rows[0].log10_gap > 0.0);
        assert!(rows[0].theoretical_log10_c > 0.5f64.log10());
    }
}
