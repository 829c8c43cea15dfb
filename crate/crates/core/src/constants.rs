//! Explicit constant formulas, evaluated in the log domain.
//!
//! The Sawyer chain grows like `exp(q' * ...)` with `q'` itself polynomial in
//! the weight constants, so everything is carried as a natural logarithm.

use std::fmt;
use std::ops::{Div, Mul};
use std::str::FromStr;

use dashu_float::FBig;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::weights::conjugate;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstantsError {
    #[error("bad exponent: {0}")]
    BadExponent(String),
    #[error("bad input {name}: {reason}")]
    BadInput { name: &'static str, reason: String },
    #[error("missing input `{0}`")]
    MissingInput(&'static str),
    #[error("unknown constant id `{0}`")]
    UnknownId(String),
}

/// A positive quantity stored as its natural logarithm.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogValue(f64);

impl LogValue {
    pub const ONE: LogValue = LogValue(0.0);

    pub fn from_ln(ln: f64) -> Self {
        LogValue(ln)
    }

    pub fn from_value(x: f64) -> Self {
        LogValue(x.ln())
    }

    pub fn ln(self) -> f64 {
        self.0
    }

    pub fn log10(self) -> f64 {
        self.0 / std::f64::consts::LN_10
    }

    /// The plain value; infinite once it leaves the `f64` range.
    pub fn value(self) -> f64 {
        self.0.exp()
    }

    pub fn pow(self, e: f64) -> Self {
        LogValue(self.0 * e)
    }

    /// `self + other` on the plain values.
    pub fn plus(self, other: Self) -> Self {
        let (hi, lo) = if self.0 >= other.0 { (self.0, other.0) } else { (other.0, self.0) };
        LogValue(hi + (lo - hi).exp().ln_1p())
    }

    pub fn is_finite(self) -> bool {
        self.0.is_finite()
    }

    /// Whether a plain `x` is at most this value, up to relative slack `tol`.
    pub fn bounds(self, x: f64, tol: f64) -> bool {
        x <= 0.0 || x.ln() <= self.0 + tol.ln_1p()
    }
}

impl Mul for LogValue {
    type Output = LogValue;
    fn mul(self, rhs: Self) -> Self {
        LogValue(self.0 + rhs.0)
    }
}

impl Div for LogValue {
    type Output = LogValue;
    fn div(self, rhs: Self) -> Self {
        LogValue(self.0 - rhs.0)
    }
}

impl fmt::Display for LogValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "1e{:.6}", self.log10())
    }
}

/// Tunable constants inherited from outside results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantsConfig {
    /// `A_1` constant of `(Mf)^delta` up to `1/(1-delta)`; `None` means `2 * 3^n`.
    #[serde(default)]
    pub c_n: Option<f64>,
    /// Interpolation constant of the sparse bound.
    #[serde(default = "one")]
    pub c_npe: f64,
    /// Decimal digits of the high-precision cross-check.
    #[serde(default = "fifty")]
    pub precision: u32,
}

fn one() -> f64 {
    1.0
}

fn fifty() -> u32 {
    50
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self { c_n: None, c_npe: 1.0, precision: 50 }
    }
}

impl ConstantsConfig {
    pub fn c_n(&self, n: usize) -> f64 {
        self.c_n.unwrap_or(2.0 * 3f64.powi(n as i32))
    }

    /// True when the sparse-bound interpolation constant is the unverified default.
    pub fn c_npe_is_placeholder(&self) -> bool {
        self.c_npe == 1.0
    }

    pub fn validate(&self) -> Result<(), ConstantsError> {
        if let Some(c) = self.c_n {
            if !(c.is_finite() && c >= 1.0) {
                return Err(ConstantsError::BadInput { name: "c_n", reason: format!("must be at least 1, got {c}") });
            }
        }
        if !(self.c_npe.is_finite() && self.c_npe > 0.0) {
            return Err(ConstantsError::BadInput { name: "c_npe", reason: format!("must be positive, got {}", self.c_npe) });
        }
        Ok(())
    }

    /// `c_{p,n} = (2p-1)^{2p-1} c_n`.
    pub fn ln_c_pn(&self, n: usize, p: f64) -> f64 {
        (2.0 * p - 1.0) * (2.0 * p - 1.0).ln() + self.c_n(n).ln()
    }
}

/// Minimizer of `(c_n/(1-delta))^{mp/delta}` over the clamped open interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CmnpResult {
    pub value: LogValue,
    pub delta: f64,
}

pub const DELTA_MIN: f64 = 1e-6;
pub const DELTA_MAX: f64 = 1.0 - 1e-6;

pub fn c_mnp(m: usize, n: usize, p: f64, cfg: &ConstantsConfig) -> Result<CmnpResult, ConstantsError> {
    if m == 0 {
        return Err(ConstantsError::BadInput { name: "m", reason: "must be at least 1".into() });
    }
    check_exponent("p", p, 1.0)?;
    cfg.validate()?;
    let ln_c = cfg.c_n(n).ln();
    let mp = m as f64 * p;
    let g = |d: f64| mp / d * (ln_c - (-d).ln_1p());
    const POINTS: usize = 10_000;
    let step = (DELTA_MAX - DELTA_MIN) / (POINTS - 1) as f64;
    let at = |k: usize| DELTA_MIN + step * k as f64;
    let best = (0..POINTS)
        .map(|k| (g(at(k)), k))
        .min_by(|a, b| a.0.total_cmp(&b.0))
        .expect("grid is non-empty");
    let (mut lo, mut hi) = (at(best.1.saturating_sub(1)), at((best.1 + 1).min(POINTS - 1)));
    let ratio = (5f64.sqrt() - 1.0) / 2.0;
    let (mut x1, mut x2) = (hi - ratio * (hi - lo), lo + ratio * (hi - lo));
    let (mut g1, mut g2) = (g(x1), g(x2));
    for _ in 0..100 {
        if g1 <= g2 {
            hi = x2;
            x2 = x1;
            g2 = g1;
            x1 = hi - ratio * (hi - lo);
            g1 = g(x1);
        } else {
            lo = x1;
            x1 = x2;
            g1 = g2;
            x2 = lo + ratio * (hi - lo);
            g2 = g(x2);
        }
    }
    let refined = if g1 <= g2 { (g1, x1) } else { (g2, x2) };
    let (ln, delta) = if refined.0 < best.0 { refined } else { (best.0, at(best.1)) };
    Ok(CmnpResult { value: LogValue::from_ln(ln), delta })
}

fn check_exponent(name: &str, x: f64, min: f64) -> Result<(), ConstantsError> {
    if x.is_finite() && x >= min {
        Ok(())
    } else {
        Err(ConstantsError::BadExponent(format!("{name} must be finite and at least {min}, got {x}")))
    }
}

fn check_weight_constant(name: &'static str, x: f64) -> Result<(), ConstantsError> {
    if x.is_finite() && x >= 1.0 {
        Ok(())
    } else {
        Err(ConstantsError::BadInput { name, reason: format!("weight constants are at least 1, got {x}") })
    }
}

/// Exponent used when `r = 1` is requested, and the matching `B`.
fn route_r(r: f64, b: f64) -> (f64, f64) {
    if r == 1.0 {
        (2.0, b.sqrt())
    } else {
        (r, b)
    }
}

/// `ln C^n_{r,p}(A, B)` for `r > 1`.
fn ln_c_rp(n: usize, r: f64, p: f64, a: f64, b: f64, cfg: &ConstantsConfig) -> f64 {
    let nf = n as f64;
    let ln2 = std::f64::consts::LN_2;
    let ln_cpn = cfg.ln_c_pn(n, p);
    let d_u = p * (nf + p.log2() + a.log2());
    let ln_qp = (nf + 2.0) * ln2 + r.ln() + ln_cpn + 2.0 * p * a.ln();
    let bracket = (nf + 5.0) * ln2 + r.ln() + ln_cpn + 2.0 * p * a.ln() + 5.0 * d_u * 40f64.ln();
    (2.0 + nf * r) * ln2 + (4.0 * r - 2.0) * (2.0 * r - 1.0).ln() + r * r.ln() + 5.0 * r * b.ln() + ln_qp.exp() * bracket
}

/// The Sawyer constant `E^n_{r,p}(A, B)` with `A = [u]_{A_p^R}` (or `[u]_{A_1}`
/// when `p = 1`) and `B = [uv^p]_{A_r^R}` (or `[uv^p]_{A_1}` when `r = 1`).
pub fn script_e(n: usize, r: f64, p: f64, a: f64, b: f64, cfg: &ConstantsConfig) -> Result<LogValue, ConstantsError> {
    check_exponent("r", r, 1.0)?;
    check_exponent("p", p, 1.0)?;
    check_weight_constant("A", a)?;
    check_weight_constant("B", b)?;
    cfg.validate()?;
    let (r, b) = route_r(r, b);
    let nf = n as f64;
    let ln_c = ln_c_rp(n, r, p, a, b, cfg);
    let ln = if p == 1.0 {
        nf * 24f64.ln() + a.ln() + ln_c
    } else {
        4f64.ln() + nf * 24f64.ln() + conjugate(p).ln() + a.ln() + ln_c / p
    };
    Ok(LogValue::from_ln(ln))
}

/// [`script_e`] re-evaluated as a product of high-precision factors, with
/// the logarithm taken only at the end.
pub fn script_e_high_precision(
    n: usize,
    r: f64,
    p: f64,
    a: f64,
    b: f64,
    cfg: &ConstantsConfig,
) -> Result<f64, ConstantsError> {
    check_exponent("r", r, 1.0)?;
    check_exponent("p", p, 1.0)?;
    check_weight_constant("A", a)?;
    check_weight_constant("B", b)?;
    cfg.validate()?;
    let (r, b) = route_r(r, b);
    let bits = (cfg.precision as f64 * std::f64::consts::LOG2_10).ceil() as usize + 16;
    let big = |x: f64| -> FBig {
        FBig::try_from(x).expect("finite input").with_precision(bits).value()
    };
    let int = |k: i64| big(k as f64);
    let (nb, rb, pb, ab, bb) = (int(n as i64), big(r), big(p), big(a), big(b));
    let two = int(2);
    let one = int(1);
    let c_pn = (&two * &pb - &one).powf(&(&two * &pb - &one)) * big(cfg.c_n(n));
    let a2p = ab.powf(&(&two * &pb));
    let q_prime = two.powf(&(&nb + int(2))) * &rb * &c_pn * &a2p;
    let d_u = &pb * (two.powf(&nb) * &pb * &ab).ln() / two.ln();
    let inner = two.powf(&(&nb + int(5))) * &rb * &c_pn * &a2p * int(40).powf(&(int(5) * &d_u));
    let c = two.powf(&(int(2) + &nb * &rb))
        * (&two * &rb - &one).powf(&(int(4) * &rb - &two))
        * rb.powf(&rb)
        * bb.powf(&(int(5) * &rb))
        * inner.powf(&q_prime);
    let e = if p == 1.0 {
        int(24).powf(&nb) * &ab * c
    } else {
        let pc = &pb / (&pb - &one);
        int(4) * int(24).powf(&nb) * pc * &ab * c.powf(&(&one / &pb))
    };
    Ok(e.ln().to_f64().value())
}

/// Formula identifiers for [`theorem_constant`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ConstantId {
    Sawyer,
    Prodhl,
    Msawyer,
    Sparsemax,
    DyadicCuv,
    DualSawyer,
}

impl ConstantId {
    pub const ALL: [ConstantId; 6] = [
        ConstantId::Sawyer,
        ConstantId::Prodhl,
        ConstantId::Msawyer,
        ConstantId::Sparsemax,
        ConstantId::DyadicCuv,
        ConstantId::DualSawyer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ConstantId::Sawyer => "sawyer",
            ConstantId::Prodhl => "prodhl",
            ConstantId::Msawyer => "msawyer",
            ConstantId::Sparsemax => "sparsemax",
            ConstantId::DyadicCuv => "dyadic_Cuv",
            ConstantId::DualSawyer => "dual_sawyer",
        }
    }
}

impl FromStr for ConstantId {
    type Err = ConstantsError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ConstantId::ALL
            .into_iter()
            .find(|id| id.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| ConstantsError::UnknownId(s.to_string()))
    }
}

impl fmt::Display for ConstantId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Measured weight constants and exponents feeding a theorem-level formula.
/// Each formula reads only the fields it needs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConstantInputs {
    pub n: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r: Option<f64>,
    /// `[u]_{A_p^R}` (or `[u]_{A_1}` at `p = 1`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a: Option<f64>,
    /// `[uv^p]_{A_r^R}` (or the `A_r^R` constant of the relevant product weight).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub a_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub b_list: Option<Vec<f64>>,
    /// Exponents `s_i` paired with `b_list`; 2 when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub s_list: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<f64>,
    /// `[v^{-eps}]_{RH_inf(w)}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rh: Option<f64>,
    /// Pairs `(r, ||W||_{A_r^R})` with `W = w v^{-eps}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w_norms: Option<Vec<(f64, f64)>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<f64>,
    /// `[v]_{A_{q'}(u)}`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_aq: Option<f64>,
}

fn need<T: Clone>(x: &Option<T>, name: &'static str) -> Result<T, ConstantsError> {
    x.clone().ok_or(ConstantsError::MissingInput(name))
}

fn harmonic(ps: &[f64]) -> f64 {
    1.0 / ps.iter().map(|p| 1.0 / p).sum::<f64>()
}

/// Log-domain theoretical constant of a theorem, from measured inputs.
pub fn theorem_constant(id: ConstantId, inputs: &ConstantInputs, cfg: &ConstantsConfig) -> Result<LogValue, ConstantsError> {
    cfg.validate()?;
    let n = inputs.n;
    let nf = n as f64;
    let ln2 = std::f64::consts::LN_2;
    match id {
        ConstantId::Sawyer => {
            let p = need(&inputs.p, "p")?;
            script_e(n, need(&inputs.r, "r")?, p, need(&inputs.a, "a")?, need(&inputs.b, "b")?, cfg)
        }
        ConstantId::Prodhl | ConstantId::Msawyer => {
            let ps = need(&inputs.p_list, "p_list")?;
            let a_list = need(&inputs.a_list, "a_list")?;
            let b_list = need(&inputs.b_list, "b_list")?;
            let m = ps.len();
            if m == 0 || a_list.len() != m || b_list.len() != m {
                return Err(ConstantsError::BadInput {
                    name: "p_list",
                    reason: format!("lengths differ: p {m}, a {}, b {}", a_list.len(), b_list.len()),
                });
            }
            let s_list = inputs.s_list.clone().unwrap_or_else(|| vec![2.0; m]);
            if s_list.len() != m {
                return Err(ConstantsError::BadInput { name: "s_list", reason: format!("expected {m} entries") });
            }
            let p = harmonic(&ps);
            let mut ln = (m as f64 + 1.0) * ln2 - (2f64.powf(p) - 1.0).ln() / p;
            for i in 0..m {
                ln += script_e(n, s_list[i], ps[i], a_list[i], b_list[i], cfg)?.ln();
            }
            Ok(LogValue::from_ln(ln))
        }
        ConstantId::Sparsemax => sparse_bound(inputs, cfg),
        ConstantId::DyadicCuv => {
            let (r, p, a, b) = (need(&inputs.r, "r")?, need(&inputs.p, "p")?, need(&inputs.a, "a")?, need(&inputs.b, "b")?);
            let (q, v) = (need(&inputs.q, "q")?, need(&inputs.v_aq, "v_aq")?);
            check_exponent("r", r, 1.0)?;
            check_exponent("p", p, 1.0)?;
            if !(q > 1.0 && q.is_finite()) {
                return Err(ConstantsError::BadExponent(format!("q must exceed 1, got {q}")));
            }
            check_weight_constant("a", a)?;
            check_weight_constant("b", b)?;
            check_weight_constant("v_aq", v)?;
            let qc = conjugate(q);
            let d_u = p * (nf + p.log2() + a.log2());
            let tail = LogValue::ONE.plus(LogValue::from_ln(6f64.ln() + d_u * 800f64.ln())).ln();
            let ln = q * ln2
                + r * (q - 1.0) * (nf * ln2 + r.ln() + b.ln())
                + qc * ((q - 1.0) * ln2 + qc.ln() + q * d_u * 40f64.ln() + tail)
                + q * v.ln();
            Ok(LogValue::from_ln(ln))
        }
        ConstantId::DualSawyer => {
            let p = need(&inputs.p, "p")?;
            if p <= 1.0 {
                return Err(ConstantsError::BadExponent(format!("dual bound needs p > 1, got {p}")));
            }
            let sparse = sparse_bound(inputs, cfg)?;
            let sawyer = script_e(n, need(&inputs.r, "r")?, p, need(&inputs.a, "a")?, need(&inputs.b, "b")?, cfg)?;
            let front = 2f64.ln() + nf * 24f64.ln() + nf * ln2 + p.ln();
            Ok(LogValue::from_ln(front) * sparse * sawyer)
        }
    }
}

fn sparse_bound(inputs: &ConstantInputs, cfg: &ConstantsConfig) -> Result<LogValue, ConstantsError> {
    let p = need(&inputs.p, "p")?;
    let eps = need(&inputs.epsilon, "epsilon")?;
    let eta = need(&inputs.eta, "eta")?;
    let rh = need(&inputs.rh, "rh")?;
    let norms = need(&inputs.w_norms, "w_norms")?;
    if !(eps > 0.0 && eps <= 1.0 && eps < p) {
        return Err(ConstantsError::BadExponent(format!("need 0 < epsilon <= 1 and epsilon < p, got {eps}")));
    }
    if !(eta > 0.0 && eta <= 1.0) {
        return Err(ConstantsError::BadInput { name: "eta", reason: format!("must lie in (0, 1], got {eta}") });
    }
    check_weight_constant("rh", rh)?;
    if norms.is_empty() {
        return Err(ConstantsError::MissingInput("w_norms"));
    }
    let nf = inputs.n as f64;
    let mut best = f64::INFINITY;
    for (r, norm) in norms {
        check_exponent("r", r, 1.0)?;
        check_weight_constant("w_norms", norm)?;
        let inner = (p / (p - eps)).ln()
            + r * (nf * 3f64.ln() - eta.ln() + norm.ln())
            + cfg.c_npe.ln()
            + (1.0 - eps / p) * rh.ln();
        best = best.min(inner / eps);
    }
    Ok(LogValue::from_ln(best))
}

/// A constant as it appears in reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantReport {
    pub formula_id: ConstantId,
    pub log10_value: f64,
    pub inputs: ConstantInputs,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub placeholder_c_npe: bool,
}

impl ConstantReport {
    pub fn evaluate(id: ConstantId, inputs: ConstantInputs, cfg: &ConstantsConfig) -> Result<Self, ConstantsError> {
        let v = theorem_constant(id, &inputs, cfg)?;
        let uses_c_npe = matches!(id, ConstantId::Sparsemax | ConstantId::DualSawyer);
        Ok(Self {
            formula_id: id,
            log10_value: v.log10(),
            inputs,
            placeholder_c_npe: uses_c_npe && cfg.c_npe_is_placeholder(),
        })
    }

    pub fn value(&self) -> LogValue {
        LogValue::from_ln(self.log10_value * std::f64::consts::LN_10)
    }
}
