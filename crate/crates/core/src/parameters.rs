//! Parameter tuple, the feasibility system, and the search for `(k0, xi)`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sequences::SequenceTable;

pub const DEFAULT_M_MAX: usize = 400;
/// Largest `k0` tried by [`compute_k0_xi`].
pub const K0_SEARCH_MAX: u64 = 2000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub lambda_s: f64,
    pub lambda_u: f64,
    pub alpha: f64,
    pub beta: f64,
    #[serde(rename = "n0H")]
    pub n0_h: u64,
    #[serde(rename = "nT_offset")]
    pub nt_offset: u64,
    #[serde(rename = "nT_slope")]
    pub nt_slope: f64,
    #[serde(rename = "C_T")]
    pub c_t: f64,
    #[serde(rename = "Lambda1")]
    pub lambda1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_prime: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k0: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub xi: Option<f64>,
    #[serde(rename = "C0", default = "default_c0")]
    pub c0: f64,
}

fn default_c0() -> f64 {
    1.5
}

impl Params {
    /// The reference tuple used throughout the tests and examples.
    pub fn reference() -> Self {
        Self {
            lambda_s: 0.05,
            lambda_u: 2.0,
            alpha: 1.02,
            beta: 1.04,
            n0_h: 10,
            nt_offset: 5,
            nt_slope: 0.0,
            c_t: 2.0,
            lambda1: 2.0,
            beta_prime: None,
            k0: None,
            xi: None,
            c0: 1.5,
        }
    }

    pub fn ln_s(&self) -> f64 {
        self.lambda_s.ln()
    }

    pub fn ln_u(&self) -> f64 {
        self.lambda_u.ln()
    }

    /// Range checks on every field. Does not evaluate the feasibility system.
    pub fn validate(&self) -> Result<()> {
        let reals = [
            ("lambda_s", self.lambda_s),
            ("lambda_u", self.lambda_u),
            ("alpha", self.alpha),
            ("beta", self.beta),
            ("nT_slope", self.nt_slope),
            ("C_T", self.c_t),
            ("Lambda1", self.lambda1),
            ("C0", self.c0),
        ];
        for (name, v) in reals {
            if !v.is_finite() {
                return Err(Error::Domain(format!("{name} is not finite")));
            }
        }
        let bad = |msg: &str| Err(Error::Domain(msg.to_string()));
        if !(self.lambda_s > 0.0 && self.lambda_s < 1.0) {
            return bad("lambda_s must lie in (0, 1)");
        }
        if self.lambda_u <= 1.0 {
            return bad("lambda_u must exceed 1");
        }
        if self.n0_h == 0 {
            return bad("n0H must be positive");
        }
        if self.nt_offset == 0 {
            return bad("nT_offset must be positive");
        }
        if self.nt_slope < 0.0 {
            return bad("nT_slope must be non-negative");
        }
        if self.c_t <= 0.0 {
            return bad("C_T must be positive");
        }
        if self.lambda1 < 2.0 {
            return bad("Lambda1 must be at least 2");
        }
        if !(self.c0 > 1.0 && self.c0 < 2.0) {
            return bad("C0 must lie in (1, 2)");
        }
        if let Some(bp) = self.beta_prime {
            if !(bp.is_finite() && bp > self.beta && bp < 1.25) {
                return bad("beta_prime must lie in (beta, 5/4)");
            }
        }
        if let Some(k0) = self.k0 {
            if k0 == 0 || k0 % 2 != 0 {
                return bad("k0 must be a positive even integer");
            }
        }
        if let Some(xi) = self.xi {
            if !(xi.is_finite() && xi > 0.0 && xi < 1.0) {
                return bad("xi must lie in (0, 1)");
            }
        }
        Ok(())
    }

    /// `beta_prime` if set, otherwise the admissible midpoint.
    pub fn beta_prime_or_select(&self) -> Result<f64> {
        match self.beta_prime {
            Some(bp) => Ok(bp),
            None => select_beta_prime(self),
        }
    }

    pub fn require_k0_xi(&self) -> Result<(u64, f64)> {
        match (self.k0, self.xi) {
            (Some(k0), Some(xi)) => Ok((k0, xi)),
            _ => Err(Error::Precondition("k0 and xi must be set (run compute_k0_xi)".into())),
        }
    }

    /// Fills in `beta_prime`, `k0` and `xi` where absent.
    pub fn with_derived(&self, m_max: usize) -> Result<Params> {
        let mut p = self.clone();
        if p.beta_prime.is_none() {
            p.beta_prime = Some(select_beta_prime(&p)?);
        }
        if p.k0.is_none() || p.xi.is_none() {
            let (k0, xi) = compute_k0_xi(&p, m_max)?;
            p.k0.get_or_insert(k0);
            p.xi.get_or_insert(xi);
        }
        Ok(p)
    }
}

/// One row of a feasibility report. `ok` holds exactly when `lhs_log < 0`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConstraintCheck {
    pub id: String,
    #[serde(serialize_with = "crate::report::ser17")]
    pub lhs_log: f64,
    pub ok: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeasibilityReport {
    pub feasible: bool,
    pub per_constraint: Vec<ConstraintCheck>,
}

impl FeasibilityReport {
    pub fn get(&self, id: &str) -> Option<&ConstraintCheck> {
        self.per_constraint.iter().find(|c| c.id == id)
    }

    pub fn violated(&self) -> Vec<&str> {
        self.per_constraint.iter().filter(|c| !c.ok).map(|c| c.id.as_str()).collect()
    }
}

impl Serialize for FeasibilityReport {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.per_constraint.serialize(s)
    }
}

pub const CONSTRAINT_IDS: [&str; 8] = [
    "order",
    "alpha_balance",
    "eps_base",
    "gap_growth",
    "theta_base",
    "fold_vs_eps",
    "fold_vs_eps_iterated",
    "strong_dissipation",
];

/// Exponent `(9β − 6)/(2 − β)` of the ε-base without the `1/n` correction.
fn eps_exponent(beta: f64) -> f64 {
    (9.0 * beta - 6.0) / (2.0 - beta)
}

/// Evaluates the seven feasibility inequalities and strong dissipation.
///
/// Every left side is reported in a form that is negative exactly when the
/// inequality holds: logs of `X` for `X < 1`, and `ln Y − ln X` for `X > Y`.
/// The ordering and balance constraints are polynomial and reported as-is.
pub fn check_oe(p: &Params) -> Result<FeasibilityReport> {
    for (name, v) in [("lambda_s", p.lambda_s), ("lambda_u", p.lambda_u), ("alpha", p.alpha), ("beta", p.beta)] {
        if !v.is_finite() {
            return Err(Error::Domain(format!("{name} is not finite")));
        }
    }
    if !(p.lambda_s > 0.0 && p.lambda_s < 1.0) || p.lambda_u <= 1.0 {
        return Err(Error::Domain("need 0 < lambda_s < 1 < lambda_u".into()));
    }
    let (a, b) = (p.alpha, p.beta);
    let (ls, lu) = (p.ln_s(), p.ln_u());

    let order = (1.0 - a).max(a - b).max(b - 2.0);
    let alpha_balance = 2.5 * a - 2.0 - 1.0 / (a * b);
    let eps_base = ls + lu * eps_exponent(b);
    let gap_growth = -(lu + (a * b - 1.0) * (ls + 3.0 * lu));
    let theta_base = 0.5 * ls + lu * (6.0 * b / (2.0 - b) - 3.0 / (2.0 - a) - eps_exponent(b) / 2.0);
    let fold = ls + lu * 3.5 * a;
    let fold_vs_eps = eps_base - fold;
    let fold_vs_eps_iterated = eps_base - a * b * fold;
    let strong_dissipation = ls + 3.0 * lu;

    let values =
        [order, alpha_balance, eps_base, gap_growth, theta_base, fold_vs_eps, fold_vs_eps_iterated, strong_dissipation];
    let per_constraint: Vec<ConstraintCheck> = CONSTRAINT_IDS
        .iter()
        .zip(values)
        .map(|(id, v)| ConstraintCheck { id: id.to_string(), lhs_log: v, ok: v < 0.0 })
        .collect();
    let feasible = per_constraint.iter().all(|c| c.ok);
    Ok(FeasibilityReport { feasible, per_constraint })
}

/// Value lists for a Cartesian scan. Other fields come from `base`.
#[derive(Clone, Debug)]
pub struct ParamGrid {
    pub base: Params,
    pub lambda_s: Vec<f64>,
    pub lambda_u: Vec<f64>,
    pub alpha: Vec<f64>,
    pub beta: Vec<f64>,
}

impl ParamGrid {
    /// Scan over `alpha` and `beta` with `lambda_s`, `lambda_u` from `base`.
    pub fn alpha_beta(base: Params, alpha: Vec<f64>, beta: Vec<f64>) -> Self {
        Self { lambda_s: vec![base.lambda_s], lambda_u: vec![base.lambda_u], alpha, beta, base }
    }

    pub fn len(&self) -> usize {
        self.lambda_s.len() * self.lambda_u.len() * self.alpha.len() * self.beta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Points `lo + i·step` for `i = 1..` up to and including `hi`, snapped to the
/// nearest short decimal so that e.g. `1.02` is the same double as the literal.
pub fn uniform_points(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    let count = ((hi - lo) / step + 1e-9).floor() as usize;
    (1..=count).map(|i| snap_decimal(lo + i as f64 * step)).collect()
}

/// Points `base + width·2^{-i}` for `i = 0..=levels`, reaching towards `base`.
pub fn dyadic_points(base: f64, width: f64, levels: u32) -> Vec<f64> {
    (0..=levels).map(|i| base + width * 0.5f64.powi(i as i32)).collect()
}

fn snap_decimal(x: f64) -> f64 {
    format!("{x:.12}").parse().expect("formatted float parses")
}

fn sorted_unique(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Every grid point passing [`check_oe`], in lexicographic order of
/// `(lambda_s, lambda_u, alpha, beta)`, each axis ascending.
pub fn scan_feasible(grid: &ParamGrid) -> Result<Vec<Params>> {
    if grid.is_empty() {
        return Err(Error::Domain("empty parameter grid".into()));
    }
    let axes = [&grid.lambda_s, &grid.lambda_u, &grid.alpha, &grid.beta];
    if axes.iter().flat_map(|a| a.iter()).any(|v| !v.is_finite()) {
        return Err(Error::Domain("grid contains non-finite values".into()));
    }
    let (ls, lu, al, be) = (
        sorted_unique(&grid.lambda_s),
        sorted_unique(&grid.lambda_u),
        sorted_unique(&grid.alpha),
        sorted_unique(&grid.beta),
    );
    let mut points = Vec::with_capacity(ls.len() * lu.len() * al.len() * be.len());
    for &s in &ls {
        for &u in &lu {
            for &a in &al {
                for &b in &be {
                    let mut p = grid.base.clone();
                    p.lambda_s = s;
                    p.lambda_u = u;
                    p.alpha = a;
                    p.beta = b;
                    p.beta_prime = None;
                    p.k0 = None;
                    p.xi = None;
                    points.push(p);
                }
            }
        }
    }
    let results: Vec<Result<Option<Params>>> =
        points.into_par_iter().map(|p| Ok(check_oe(&p)?.feasible.then_some(p))).collect();
    results.into_iter().filter_map(|r| r.transpose()).collect()
}

/// The open interval of admissible `β′`: above `β`, below `5/4`, and with the
/// θ-base below one. Not gated on feasibility.
pub fn admissible_beta_prime_interval(p: &Params) -> Result<(f64, f64)> {
    let (ls, lu) = (p.ln_s(), p.ln_u());
    // θ < 1  ⇔  6β′/(2−β′) < c, and 6x/(2−x) = c solves to x = 2c/(6+c)
    let c = -0.5 * ls / lu + 3.0 / (2.0 - p.alpha) + eps_exponent(p.beta) / 2.0;
    let theta_limit = if c > 0.0 { 2.0 * c / (6.0 + c) } else { f64::NEG_INFINITY };
    let hi = theta_limit.min(1.25);
    if hi > p.beta {
        Ok((p.beta, hi))
    } else {
        Err(Error::Infeasible(format!("no admissible beta_prime above beta = {} (theta limit {theta_limit})", p.beta)))
    }
}

/// `ln θ(β′)`; negative exactly when `β′` passes the θ condition.
pub fn log_theta(p: &Params, beta_prime: f64) -> f64 {
    0.5 * p.ln_s()
        + p.ln_u() * (6.0 * beta_prime / (2.0 - beta_prime) - 3.0 / (2.0 - p.alpha) - eps_exponent(p.beta) / 2.0)
}

/// Midpoint of the admissible `β′` interval for feasible parameters.
pub fn select_beta_prime(p: &Params) -> Result<f64> {
    let report = check_oe(p)?;
    if !report.feasible {
        return Err(Error::Infeasible(format!("violated: {}", report.violated().join(", "))));
    }
    let (lo, hi) = admissible_beta_prime_interval(p)?;
    Ok(0.5 * (lo + hi))
}

/// Outcome of one constants-ledger condition. `margin` is the worst slack
/// (positive when satisfied) and `index` the `k` or `m` where it occurs.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LedgerCheck {
    pub id: &'static str,
    pub ok: bool,
    #[serde(serialize_with = "crate::report::ser17")]
    pub margin: f64,
    pub index: Option<u64>,
}

impl LedgerCheck {
    fn from_margins(id: &'static str, margins: impl IntoIterator<Item = (u64, f64)>, strict: bool) -> Self {
        let mut worst = (None, f64::INFINITY);
        for (i, m) in margins {
            if m < worst.1 || m.is_nan() {
                worst = (Some(i), m);
            }
        }
        let ok = if strict { worst.1 > 0.0 } else { worst.1 >= 0.0 };
        Self { id, ok, margin: worst.1, index: worst.0 }
    }
}

fn ceil_half(m: u64) -> i32 {
    m.div_ceil(2) as i32
}

fn floor_half(m: u64) -> i32 {
    (m / 2) as i32
}

/// Lower and upper ends of the admissible band for `−ln ξ` at `k0`.
pub fn xi_band(p: &Params, table: &SequenceTable, k0: u64, m_max: usize) -> Result<(f64, f64)> {
    let n = table.nh(k0)? as f64;
    let nt = table.nt(k0)? as f64;
    let lower = 2.0 * nt * p.lambda1.ln() + 1e4f64.ln();
    let ab = p.alpha * p.beta;
    let (ls, lu) = (p.ln_s(), p.ln_u());
    let fold = (1.0 + 1.0 / n) * ls + 3.5 * p.alpha * lu;
    let eps = ls + lu * (9.0 * p.beta - 6.0 + 18.0 / n) / (2.0 - p.beta);
    let upper = (0..=m_max as u64)
        .map(|m| {
            let (c, f) = (ceil_half(m), floor_half(m));
            n * ab.powi(f) * (ab.powi(c - f) * fold - eps)
        })
        .fold(f64::INFINITY, f64::min)
        - (2.0 * p.lambda_u).ln();
    Ok((lower, upper))
}

/// Runs every constants-ledger condition at `(k0, xi)`, certifying the
/// `m`-indexed ones for `m <= m_max` and the `k`-indexed ones on
/// `k0..=k0 + m_max`.
pub fn check_ledger(p: &Params, table: &SequenceTable, k0: u64, xi: f64, m_max: usize) -> Result<Vec<LedgerCheck>> {
    if m_max == 0 {
        return Err(Error::Domain("M_max must be at least 1".into()));
    }
    let bp = p.beta_prime_or_select()?;
    let mm = m_max as u64;
    let (ls, lu, ll1) = (p.ln_s(), p.ln_u(), p.lambda1.ln());
    let ab = p.alpha * p.beta;
    let n0 = table.nh(k0)? as f64;
    let nt0 = table.nt(k0)? as f64;
    let log_xi = xi.ln();
    let mut out = Vec::new();

    out.push(LedgerCheck {
        id: "even_k0",
        ok: k0.is_multiple_of(2) && k0 > 0,
        margin: if k0.is_multiple_of(2) && k0 > 0 { 1.0 } else { -1.0 },
        index: Some(k0),
    });

    let eps_base = ls + lu * (9.0 * p.beta - 6.0 + 18.0 / n0) / (2.0 - p.beta);
    out.push(LedgerCheck::from_margins("eps_base_k0", [(k0, -eps_base)], true));

    let (lower, upper) = xi_band(p, table, k0, m_max)?;
    out.push(LedgerCheck::from_margins("xi_band", [(k0, upper - lower)], true));

    let fold = (1.0 + 1.0 / n0) * ls + 3.5 * p.alpha * lu;
    out.push(LedgerCheck::from_margins(
        "xi_gain_budget",
        (0..=mm).map(|m| {
            let (c, f) = (ceil_half(m), floor_half(m));
            let lhs = ab.powi(c - f) * fold;
            let rhs = eps_base + ab.powi(-f) / n0 * ((2.0 * p.lambda_u).ln() - log_xi);
            (m, lhs - rhs)
        }),
        false,
    ));

    let cap = 1e-4f64.ln();
    let base_ratio = (log_xi + 2.0 * nt0 * ll1).max(n0 * (ls - lu) + 2.0 * nt0 * ll1);
    out.push(LedgerCheck::from_margins("base_ratio", [(k0, cap - base_ratio)], false));

    let ks = k0..=k0 + mm;
    let mut mono = Vec::new();
    let mut contraction = Vec::new();
    let mut width = Vec::new();
    for k in ks {
        let n = table.nh(k)? as f64;
        let nt = table.nt(k)? as f64;
        mono.push((k, table.nh(k + 1)? as f64 - n));
        contraction.push((k, -(2.0 * nt * ll1) - 2f64.ln() - n * (ls - lu)));
        width.push((k, -(4f64.ln() + (3.0 / (2.0 - bp) - 4.0) * n * lu)));
    }
    out.push(LedgerCheck::from_margins("monotone_returns", mono, false));
    out.push(LedgerCheck::from_margins("contraction_vs_tangential", contraction, false));
    out.push(LedgerCheck::from_margins("width_term", width, false));

    out.push(LedgerCheck::from_margins(
        "exponent_step",
        (0..=mm).map(|m| {
            let (c, f) = (ceil_half(m), floor_half(m));
            let lhs = 3.5 * p.alpha - 2.0 - ab.powi(f - c) + 3.0 / n0 * ab.powi(-c);
            (m, p.alpha - lhs)
        }),
        true,
    ));

    // anisotropy decay: ln(Λ_u/Λ_s) ≥ ln 12 + m ln 3 + 2 ln C_f + 2 n^T_{k0+m} ln Λ1
    let mut decay = Vec::with_capacity(m_max);
    let mut alt = 0i128;
    let mut sum_nt = 0u128;
    for m in 1..=mm {
        let k = k0 + m - 1;
        alt = table.nh(k)? as i128 - alt;
        sum_nt += table.nt(k)? as u128;
        let lhs = (lu - ls) * alt as f64;
        let rhs = 12f64.ln() + m as f64 * 3f64.ln() + 2.0 * sum_nt as f64 * ll1 + 2.0 * table.nt(k0 + m)? as f64 * ll1;
        decay.push((m, lhs - rhs));
    }
    out.push(LedgerCheck::from_margins("anisotropy_decay", decay, false));

    Ok(out)
}

/// Smallest even `k0 >= 2` and the midpoint `ξ` of the admissible band such
/// that every ledger condition holds up to `m_max`.
pub fn compute_k0_xi(p: &Params, m_max: usize) -> Result<(u64, f64)> {
    if m_max == 0 {
        return Err(Error::Domain("M_max must be at least 1".into()));
    }
    let report = check_oe(p)?;
    if !report.feasible {
        return Err(Error::Infeasible(format!("violated: {}", report.violated().join(", "))));
    }
    let mut p = p.clone();
    if p.beta_prime.is_none() {
        p.beta_prime = Some(select_beta_prime(&p)?);
    }
    let mut table: Option<SequenceTable> = None;
    let mut first_failure = String::from("none tried");
    let mut last_k0 = 0;
    let mut k0 = 2u64;
    while k0 <= K0_SEARCH_MAX {
        let needed = k0 + m_max as u64 + 2;
        if table.as_ref().is_none_or(|t| t.k_max() < needed) {
            let target = (needed * 2).max(64).min(K0_SEARCH_MAX + m_max as u64 + 2).max(needed);
            match SequenceTable::build(&p, target, crate::sequences::DEFAULT_TOL_LOG) {
                Ok(t) => table = Some(t),
                Err(Error::Range(msg)) => {
                    return Err(Error::SearchExhausted {
                        last_k0,
                        condition: format!("{first_failure} (return times overflow: {msg})"),
                    })
                }
                Err(e) => return Err(e),
            }
        }
        let t = table.as_ref().expect("table built above");
        last_k0 = k0;
        let (lower, upper) = xi_band(&p, t, k0, m_max)?;
        let xi = (-(lower + upper) / 2.0).exp();
        if upper > lower && xi > 0.0 && xi < 1.0 {
            let checks = check_ledger(&p, t, k0, xi, m_max)?;
            match checks.iter().find(|c| !c.ok) {
                None => return Ok((k0, xi)),
                Some(c) => first_failure = c.id.to_string(),
            }
        } else {
            first_failure = "xi_band".into();
        }
        k0 += 2;
    }
    Err(Error::SearchExhausted { last_k0, condition: first_failure })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn with(ls: f64, lu: f64, a: f64, b: f64) -> Params {
        Params { lambda_s: ls, lambda_u: lu, alpha: a, beta: b, ..Params::reference() }
    }

    // Independent evaluation in the inequalities' original (non-log) form.
    fn oracle_feasible(ls: f64, lu: f64, a: f64, b: f64) -> [bool; 8] {
        let e = (9.0 * b - 6.0) / (2.0 - b);
        [
            1.0 < a && a < b && b < 2.0,
            2.5 * a - 2.0 - 1.0 / (a * b) < 0.0,
            ls * lu.powf(e) < 1.0,
            lu * (ls * lu.powi(3)).powf(a * b - 1.0) > 1.0,
            ls.sqrt() * lu.powf(6.0 * b / (2.0 - b) - 3.0 / (2.0 - a) - e / 2.0) < 1.0,
            ls * lu.powf(3.5 * a) > ls * lu.powf(e),
            (ls * lu.powf(3.5 * a)).powf(a * b) > ls * lu.powf(e),
            ls * lu.powi(3) < 1.0,
        ]
    }

    #[test]
    fn reference_is_feasible() {
        let r = check_oe(&with(0.05, 2.0, 1.02, 1.04)).unwrap();
        assert!(r.feasible, "{:?}", r.violated());
        assert_eq!(r.per_constraint.len(), 8);
        // third inequality: 0.05 · 2^3.5 ≈ 0.566
        let third = r.get("eps_base").unwrap().lhs_log.exp();
        assert!((third - 0.05 * 2f64.powf(3.5)).abs() < 1e-12);
        assert!((third - 0.5657).abs() < 1e-3);
    }

    #[test]
    fn dissipation_failure() {
        let r = check_oe(&with(0.5, 2.0, 1.02, 1.04)).unwrap();
        assert!(!r.feasible);
        assert!(!r.get("strong_dissipation").unwrap().ok);
    }

    #[test]
    fn sixth_inequality_failure() {
        let r = check_oe(&with(0.05, 2.0, 1.3, 1.4)).unwrap();
        assert!(!r.feasible);
        assert!(!r.get("fold_vs_eps").unwrap().ok);
        // 7α/2 = 4.55 against (9β−6)/(2−β) = 11
        assert!((3.5 * 1.3f64 - 4.55).abs() < 1e-12);
        assert!((eps_exponent(1.4) - 11.0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_is_domain_error() {
        assert!(matches!(check_oe(&with(f64::NAN, 2.0, 1.02, 1.04)), Err(Error::Domain(_))));
        assert!(matches!(check_oe(&with(0.05, f64::INFINITY, 1.02, 1.04)), Err(Error::Domain(_))));
    }

    #[test]
    fn report_json_is_array_of_rows() {
        let r = check_oe(&Params::reference()).unwrap();
        let v: serde_json::Value = serde_json::to_value(&r).unwrap();
        let rows = v.as_array().unwrap();
        assert_eq!(rows.len(), 8);
        for row in rows {
            assert!(row.get("id").is_some() && row.get("lhs_log").is_some() && row.get("ok").is_some());
        }
    }

    #[test]
    fn params_field_names() {
        let v = serde_json::to_value(Params::reference()).unwrap();
        for key in ["lambda_s", "lambda_u", "alpha", "beta", "n0H", "nT_offset", "nT_slope", "C_T", "Lambda1", "C0"] {
            assert!(v.get(key).is_some(), "missing {key}");
        }
        let back: Params = serde_json::from_value(v).unwrap();
        assert_eq!(back, Params::reference());
        let parsed: Params = serde_json::from_value(serde_json::json!({
            "lambda_s": 0.05, "lambda_u": 2.0, "alpha": 1.02, "beta": 1.04, "n0H": 10,
            "nT_offset": 5, "nT_slope": 0.0, "C_T": 2.0, "Lambda1": 2.0
        }))
        .unwrap();
        assert_eq!(parsed.c0, 1.5);
        assert_eq!(parsed.k0, None);
    }

    #[test]
    fn scan_examples() {
        let grid = ParamGrid::alpha_beta(
            Params::reference(),
            uniform_points(1.0, 1.1, 0.005),
            uniform_points(1.0, 1.1, 0.005),
        );
        assert_eq!(grid.alpha.len(), 20);
        let found = scan_feasible(&grid).unwrap();
        assert!(found.iter().any(|p| p.alpha == 1.02 && p.beta == 1.04));
        for w in found.windows(2) {
            assert!((w[0].alpha, w[0].beta) < (w[1].alpha, w[1].beta));
        }

        let hot = ParamGrid::alpha_beta(with(0.9, 2.0, 1.0, 1.0), grid.alpha.clone(), grid.beta.clone());
        assert!(scan_feasible(&hot).unwrap().is_empty());

        let far = ParamGrid::alpha_beta(
            Params::reference(),
            uniform_points(1.29, 1.5, 0.01).into_iter().filter(|&x| x >= 1.3).collect(),
            uniform_points(1.29, 1.5, 0.01).into_iter().filter(|&x| x >= 1.3).collect(),
        );
        assert!(!far.is_empty());
        assert!(scan_feasible(&far).unwrap().is_empty());

        let empty = ParamGrid::alpha_beta(Params::reference(), vec![], vec![1.04]);
        assert!(matches!(scan_feasible(&empty), Err(Error::Domain(_))));
    }

    #[test]
    fn refinement_keeps_coarse_points() {
        let coarse =
            ParamGrid::alpha_beta(Params::reference(), uniform_points(1.0, 1.1, 0.01), uniform_points(1.0, 1.1, 0.01));
        let fine = ParamGrid::alpha_beta(
            Params::reference(),
            uniform_points(1.0, 1.1, 0.005),
            uniform_points(1.0, 1.1, 0.005),
        );
        let c = scan_feasible(&coarse).unwrap();
        let f = scan_feasible(&fine).unwrap();
        assert!(!c.is_empty());
        for p in &c {
            assert!(f.iter().any(|q| q.alpha == p.alpha && q.beta == p.beta));
        }
    }

    #[test]
    fn beta_prime_reference() {
        let bp = select_beta_prime(&Params::reference()).unwrap();
        assert!(bp > 1.04 && bp < 1.25);
        assert!(log_theta(&Params::reference(), bp) < 0.0);
        assert!(3.0 / (2.0 - bp) - 4.0 < 0.0);
        // upper end of the interval is where θ reaches one
        let (_, hi) = admissible_beta_prime_interval(&Params::reference()).unwrap();
        assert!(log_theta(&Params::reference(), hi).abs() < 1e-12);
        assert!((bp - 1.057_47).abs() < 1e-4);
        assert!(log_theta(&Params::reference(), 1.045) < 0.0);
    }

    #[test]
    fn beta_prime_thin_interval() {
        let p = Params { lambda_s: 1e-30, beta: 1.249, alpha: 1.2, ..Params::reference() };
        let (lo, hi) = admissible_beta_prime_interval(&p).unwrap();
        assert_eq!(lo, 1.249);
        assert_eq!(hi, 1.25);
        assert!((0.5 * (lo + hi) - 1.2495).abs() < 1e-12);
    }

    #[test]
    fn beta_prime_needs_feasibility() {
        assert!(matches!(select_beta_prime(&with(0.5, 2.0, 1.02, 1.04)), Err(Error::Infeasible(_))));
    }

    #[test]
    fn k0_xi_reference() {
        let p = Params::reference();
        let (k0, xi) = compute_k0_xi(&p, 60).unwrap();
        assert_eq!(k0 % 2, 0);
        let table = SequenceTable::build(&p, k0 + 70, 1e-9).unwrap();
        assert!(table.nh(k0).unwrap() >= 23);
        assert!(xi > 0.0 && xi < 1.0);
        let nt = table.nt(k0).unwrap() as i32;
        assert!(xi * 2f64.powi(2 * nt) <= 1e-4);
        let mut q = p.clone();
        q.beta_prime = Some(select_beta_prime(&p).unwrap());
        let checks = check_ledger(&q, &table, k0, xi, 60).unwrap();
        assert!(checks.iter().all(|c| c.ok), "{checks:?}");
    }

    #[test]
    fn k0_xi_default_horizon() {
        let p = Params::reference();
        let (k0, xi) = compute_k0_xi(&p, DEFAULT_M_MAX).unwrap();
        assert_eq!(k0, 180);
        let table = SequenceTable::build(&p, k0 + 410, 1e-9).unwrap();
        assert_eq!(table.nh(k0).unwrap(), 2027);
        let (lo, hi) = xi_band(&p, &table, k0, DEFAULT_M_MAX).unwrap();
        assert!((-xi.ln() - 0.5 * (lo + hi)).abs() < 1e-9);
    }

    #[test]
    fn k0_xi_zero_horizon() {
        assert!(matches!(compute_k0_xi(&Params::reference(), 0), Err(Error::Domain(_))));
    }

    #[test]
    fn ledger_rejects_sabotaged_xi() {
        let p = Params { beta_prime: Some(select_beta_prime(&Params::reference()).unwrap()), ..Params::reference() };
        let (k0, _) = compute_k0_xi(&p, 30).unwrap();
        let table = SequenceTable::build(&p, k0 + 40, 1e-9).unwrap();
        let checks = check_ledger(&p, &table, k0, 0.9, 30).unwrap();
        assert!(!checks.iter().find(|c| c.id == "base_ratio").unwrap().ok);
    }

    #[test]
    fn uniform_grid_hits_literals() {
        let pts = uniform_points(1.0, 1.1, 0.005);
        assert!(pts.contains(&1.02) && pts.contains(&1.04) && pts.contains(&1.1));
        assert!(!pts.contains(&1.0));
    }

    proptest! {
        #[test]
        fn matches_direct_evaluation(
            ls in 1e-4f64..0.99, lu in 1.01f64..6.0, a in 1.0f64..1.6, db in 0.0f64..0.4
        ) {
            let b = a + db;
            let r = check_oe(&with(ls, lu, a, b)).unwrap();
            let direct = oracle_feasible(ls, lu, a, b);
            for (c, expect) in r.per_constraint.iter().zip(direct) {
                // skip razor-thin boundary cases where rounding decides
                if c.lhs_log.abs() > 1e-9 {
                    prop_assert_eq!(c.ok, expect, "{}", c.id);
                }
            }
        }

        #[test]
        fn smaller_lambda_s_lowers_left_sides(
            ls in 1e-4f64..0.2, shrink in 0.01f64..1.0, lu in 1.1f64..3.0, a in 1.0f64..1.1, db in 0.001f64..0.1
        ) {
            let b = a + db;
            let hi = check_oe(&with(ls, lu, a, b)).unwrap();
            let lo = check_oe(&with(ls * shrink, lu, a, b)).unwrap();
            for id in ["eps_base", "theta_base"] {
                let (x, y) = (hi.get(id).unwrap(), lo.get(id).unwrap());
                prop_assert!(y.lhs_log <= x.lhs_log);
                if x.ok { prop_assert!(y.ok); }
            }
            // the growth constraint is a lower bound: its left side λ_u(λ_sλ_u³)^{αβ−1}
            // also shrinks, which is why feasibility is not monotone for it
            let growth = |p: &FeasibilityReport| -p.get("gap_growth").unwrap().lhs_log;
            prop_assert!(growth(&lo) <= growth(&hi) + 1e-12);
        }
    }
}
