//! Products of return Jacobians along an orbit and the finite-time Lyapunov
//! exponents they produce.
//!
//! The product `A^(m) = A_{m-1} ⋯ A_0` is never formed directly. It is carried
//! as coefficients `C_ij` against the scale factors `Λ_u^(m)` (top row) and
//! `Λ_s^(m)` (bottom row); the huge powers only enter through the ratio
//! `Λ_s/Λ_u`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::logscalar::{log_add_exp, SignedLogReal};
use crate::modelmap::{Model, Point};
use crate::parameters::Params;
use crate::report::{fmt17, ser17, write_csv};

/// 2×2 matrix of signed log reals, row major.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Jacobian2(pub [[SignedLogReal; 2]; 2]);

impl Jacobian2 {
    pub const IDENTITY: Jacobian2 =
        Jacobian2([[SignedLogReal::ONE, SignedLogReal::ZERO], [SignedLogReal::ZERO, SignedLogReal::ONE]]);

    pub fn new(e: [[SignedLogReal; 2]; 2]) -> Self {
        Self(e)
    }

    pub fn from_f64(e: [[f64; 2]; 2]) -> Self {
        Self(e.map(|r| r.map(SignedLogReal::from_f64)))
    }

    pub fn diag(a: SignedLogReal, d: SignedLogReal) -> Self {
        Self([[a, SignedLogReal::ZERO], [SignedLogReal::ZERO, d]])
    }

    pub fn get(&self, i: usize, j: usize) -> SignedLogReal {
        self.0[i][j]
    }

    pub fn to_f64(&self) -> [[f64; 2]; 2] {
        self.0.map(|r| r.map(SignedLogReal::to_f64))
    }

    pub fn mul(&self, o: &Jacobian2) -> Jacobian2 {
        let (a, b) = (&self.0, &o.0);
        let e = |i: usize, j: usize| a[i][0] * b[0][j] + a[i][1] * b[1][j];
        Jacobian2([[e(0, 0), e(0, 1)], [e(1, 0), e(1, 1)]])
    }

    pub fn apply(&self, v: [SignedLogReal; 2]) -> [SignedLogReal; 2] {
        let a = &self.0;
        [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]]
    }

    pub fn det(&self) -> SignedLogReal {
        let a = &self.0;
        a[0][0] * a[1][1] - a[0][1] * a[1][0]
    }
}

/// `ln ‖v‖₂`.
pub fn ln_norm2(v: [SignedLogReal; 2]) -> f64 {
    0.5 * log_add_exp(2.0 * v[0].ln_abs(), 2.0 * v[1].ln_abs())
}

/// The reduced entries `b^{ij}` of one return Jacobian
/// `A_l = [[b11 λ_s^n, b12 λ_u^n], [b21 λ_s^n, b22 λ_s^n]]`, `n = n^H`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct CocycleCoeffs {
    pub b11: SignedLogReal,
    pub b12: SignedLogReal,
    pub b21: SignedLogReal,
    pub b22: SignedLogReal,
    pub nh: u64,
    pub nt: u64,
}

impl CocycleCoeffs {
    /// `max |b| <= Λ1^{nT}`, `|b22| <= ξ Λ1^{nT}`, `min(|b12|, |b21|) >= Λ1^{-nT}`.
    /// `index` is reported in the error.
    pub fn check_bounds(&self, lambda1: f64, xi: f64, index: usize) -> Result<()> {
        let cap = self.nt as f64 * lambda1.ln();
        let fail = |entry: &str| Err(Error::BoundViolation { index, entry: entry.into() });
        for (name, b) in [("b11", self.b11), ("b12", self.b12), ("b21", self.b21), ("b22", self.b22)] {
            if b.ln_abs() > cap {
                return fail(name);
            }
        }
        if self.b22.ln_abs() > xi.ln() + cap {
            return fail("b22");
        }
        for (name, b) in [("b12", self.b12), ("b21", self.b21)] {
            if b.ln_abs() < -cap {
                return fail(name);
            }
        }
        Ok(())
    }

    /// `A_l` itself.
    pub fn matrix(&self, ln_s: f64, ln_u: f64) -> Jacobian2 {
        let n = self.nh as f64;
        Jacobian2([
            [self.b11.scale_log(n * ln_s), self.b12.scale_log(n * ln_u)],
            [self.b21.scale_log(n * ln_s), self.b22.scale_log(n * ln_s)],
        ])
    }
}

/// `A_l = T_l H_l` at the orbit point `ζ_{k0+l} + off`, with the reduced
/// coefficients read back from it. Also returns the offset of the next orbit
/// point from `ζ_{k0+l+1}`.
pub fn jacobian_a(model: &Model, l: u64, off: Point) -> Result<(Jacobian2, CocycleCoeffs, Point)> {
    let k = model.k0 + l;
    let (ln_s, ln_u) = (model.chart.ln_s(), model.chart.ln_u());
    let nh = model.table.nh(k)?;
    let n = nh as f64;
    let h = Jacobian2::diag(SignedLogReal::from_log(n * ln_s), SignedLogReal::from_log(n * ln_u));
    let xp = model.hyperbolic_offset(k, off)?;
    let fold = model.fold(k)?;
    let a = fold.jacobian_at_offset(xp)?.mul(&h);
    let c = CocycleCoeffs {
        b11: a.get(0, 0).scale_log(-n * ln_s),
        b12: a.get(0, 1).scale_log(-n * ln_u),
        b21: a.get(1, 0).scale_log(-n * ln_s),
        b22: a.get(1, 1).scale_log(-n * ln_s),
        nh,
        nt: model.table.nt(k)?,
    };
    c.check_bounds(model.params.lambda1, model.xi, l as usize)?;
    Ok((a, c, fold.apply_offset(xp)?))
}

/// Running state after `m` returns.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct ProductState {
    pub c11: SignedLogReal,
    pub c12: SignedLogReal,
    pub c21: SignedLogReal,
    pub c22: SignedLogReal,
    /// `ln Λ_u^(m)`.
    pub log_lu: f64,
    /// `ln Λ_s^(m)`.
    pub log_ls: f64,
    /// `N_m`, the number of map iterations so far.
    pub n_m: u64,
    /// `ln C_{f,m}`.
    pub log_cf: f64,
    pub m: u64,
    ln_s: f64,
    ln_u: f64,
    ln_lambda1: f64,
}

impl ProductState {
    /// The `m = 0` state: identity coefficients, unit scales.
    pub fn initial(p: &Params) -> Self {
        Self {
            c11: SignedLogReal::ONE,
            c12: SignedLogReal::ZERO,
            c21: SignedLogReal::ZERO,
            c22: SignedLogReal::ONE,
            log_lu: 0.0,
            log_ls: 0.0,
            n_m: 0,
            log_cf: 0.0,
            m: 0,
            ln_s: p.ln_s(),
            ln_u: p.ln_u(),
            ln_lambda1: p.lambda1.ln(),
        }
    }

    /// `A^(m)` rebuilt from the coefficients.
    pub fn matrix(&self) -> Jacobian2 {
        Jacobian2([
            [self.c11.scale_log(self.log_lu), self.c12.scale_log(self.log_lu)],
            [self.c21.scale_log(self.log_ls), self.c22.scale_log(self.log_ls)],
        ])
    }
}

/// Advances by one return.
pub fn product_step(s: &ProductState, c: &CocycleCoeffs) -> ProductState {
    let n = c.nh as f64;
    let log_lu = n * s.ln_u + s.log_ls;
    let log_ls = n * s.ln_s + s.log_lu;
    let r_new = SignedLogReal::from_log(log_ls - log_lu);
    let r_old = SignedLogReal::from_log(s.log_ls - s.log_lu);
    ProductState {
        c11: c.b11 * s.c11 * r_new + c.b12 * s.c21,
        c12: c.b11 * s.c12 * r_new + c.b12 * s.c22,
        c21: c.b21 * s.c11 + c.b22 * s.c21 * r_old,
        c22: c.b21 * s.c12 + c.b22 * s.c22 * r_old,
        log_lu,
        log_ls,
        n_m: s.n_m + c.nh + c.nt,
        log_cf: s.log_cf + c.nt as f64 * s.ln_lambda1,
        m: s.m + 1,
        ..*s
    }
}

/// `1/3 + … + 1/3^m`.
fn geometric_third(m: u64) -> f64 {
    (1.0 - 3f64.powi(-(m.min(2000) as i32))) / 2.0
}

/// The coefficient bounds after `m >= 1` returns: the dominant pair sits
/// within `(1 ∓ g) C_f^{∓1}`, the other pair is at most `g` times it, and
/// every entry is below `2 C_f`.
pub fn check_coefficient_bounds(s: &ProductState) -> bool {
    if s.m == 0 {
        return false;
    }
    let g = geometric_third(s.m);
    let (lo, hi) = ((1.0 - g).ln() - s.log_cf, (1.0 + g).ln() + s.log_cf);
    let l = |c: SignedLogReal| c.ln_abs();
    let (dom, ratios) = if s.m % 2 == 1 {
        ([s.c12, s.c21], [l(s.c11) - l(s.c12), l(s.c22) - l(s.c21)])
    } else {
        ([s.c11, s.c22], [l(s.c12) - l(s.c11), l(s.c21) - l(s.c22)])
    };
    let mag = dom.iter().all(|c| l(*c) >= lo && l(*c) <= hi);
    let ratio = ratios.iter().all(|r| *r <= g.ln());
    let cap = 2f64.ln() + s.log_cf;
    let all = [s.c11, s.c12, s.c21, s.c22].iter().all(|c| l(*c) < cap);
    mag && ratio && all
}

/// One finite-time exponent together with its sandwich bounds, all in logs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct FteSample {
    pub fte: f64,
    pub log_norm: f64,
    pub log_lower: f64,
    pub log_upper: f64,
    pub sandwich_ok: bool,
}

/// `(1/N_m) ln ‖A^(m) c0‖` for `c0` in the cone `C0^{-1} < |c^s|/|c^u| < C0`.
pub fn finite_time_le(s: &ProductState, c0: [f64; 2], cone: f64) -> Result<FteSample> {
    if s.m == 0 || s.n_m == 0 {
        return Err(Error::Precondition("need at least one return".into()));
    }
    if !(cone > 1.0 && cone < 2.0) {
        return Err(Error::Precondition(format!("cone constant {cone} outside (1, 2)")));
    }
    let ratio = (c0[0] / c0[1]).abs();
    if !(ratio > 1.0 / cone && ratio < cone) {
        return Err(Error::Precondition(format!("vector ({}, {}) outside the cone", c0[0], c0[1])));
    }
    let v = [SignedLogReal::from_f64(c0[0]), SignedLogReal::from_f64(c0[1])];
    let top = (s.c11 * v[0] + s.c12 * v[1]).scale_log(s.log_lu);
    let bot = (s.c21 * v[0] + s.c22 * v[1]).scale_log(s.log_ls);
    let log_norm = ln_norm2([top, bot]);
    let ln_cs = c0[0].abs().ln();
    let log_lower = (13.0 * (2.0 - cone) / (108.0 * cone)).ln() - s.log_cf + s.log_lu + ln_cs;
    let log_upper = (4.0 * (1.0 + cone)).ln() + s.log_cf + s.log_lu + ln_cs;
    Ok(FteSample {
        fte: log_norm / s.n_m as f64,
        log_norm,
        log_lower,
        log_upper,
        sandwich_ok: log_lower <= log_norm && log_norm <= log_upper,
    })
}

/// Limits of the even and odd subsequences:
/// `(α ln λ_u + ln λ_s)/(1+α)` and `(β ln λ_u + ln λ_s)/(1+β)`.
pub fn analytic_limits(p: &Params) -> (f64, f64) {
    let f = |a: f64| (a * p.ln_u() + p.ln_s()) / (1.0 + a);
    (f(p.alpha), f(p.beta))
}

/// Where the `b^{ij}` come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Mode {
    /// The model map's Jacobians along an actual orbit.
    Geometric,
    /// Independent uniform draws within the allowed ranges, random signs.
    Synthetic,
}

/// Source of successive `CocycleCoeffs`.
pub trait CoeffSource {
    fn next_coeffs(&mut self, l: u64) -> Result<CocycleCoeffs>;
}

pub struct GeometricSource<'a> {
    model: &'a Model,
    off: Point,
}

impl<'a> GeometricSource<'a> {
    /// Orbit of `ζ_{k0} + off`.
    pub fn new(model: &'a Model, off: Point) -> Self {
        Self { model, off }
    }

    /// Orbit of the point at fractions `(fs, fu)` of the half-sides of `U_{k0,0}`.
    pub fn at_fraction(model: &'a Model, fs: f64, fu: f64) -> Result<Self> {
        let r = crate::geometry::model_rectangle(model, model.k0, 0)?;
        let off = Point::new(r.half_width * SignedLogReal::from_f64(fs), r.half_height * SignedLogReal::from_f64(fu));
        Ok(Self::new(model, off))
    }
}

impl CoeffSource for GeometricSource<'_> {
    fn next_coeffs(&mut self, l: u64) -> Result<CocycleCoeffs> {
        let (_, c, next) = jacobian_a(self.model, l, self.off)?;
        self.off = next;
        Ok(c)
    }
}

/// Draws `|b11| ∈ [0, Λ1^{nT}]`, `|b12|, |b21| ∈ [Λ1^{-nT}, Λ1^{nT}]` and
/// `|b22| ∈ [0, ξ Λ1^{nT}]` uniformly, each with a random sign.
pub struct SyntheticSource {
    rng: ChaCha8Rng,
    nh: Vec<u64>,
    nt: Vec<u64>,
    lambda1: f64,
    xi: f64,
}

impl SyntheticSource {
    /// Return times are taken from `table` starting at `k0`.
    pub fn new(table: &crate::sequences::SequenceTable, k0: u64, xi: f64, horizon: u64, seed: u64) -> Result<Self> {
        let nh = (k0..k0 + horizon).map(|k| table.nh(k)).collect::<Result<_>>()?;
        let nt = (k0..k0 + horizon).map(|k| table.nt(k)).collect::<Result<_>>()?;
        Ok(Self { rng: ChaCha8Rng::seed_from_u64(seed), nh, nt, lambda1: table.params().lambda1, xi })
    }

    fn signed(&mut self, lo: f64, hi: f64) -> SignedLogReal {
        let mag = self.rng.gen_range(lo..=hi);
        let sign = if self.rng.gen_bool(0.5) { 1.0 } else { -1.0 };
        SignedLogReal::from_f64(sign * mag)
    }
}

impl CoeffSource for SyntheticSource {
    fn next_coeffs(&mut self, l: u64) -> Result<CocycleCoeffs> {
        let i = l as usize;
        let (nh, nt) = match (self.nh.get(i), self.nt.get(i)) {
            (Some(a), Some(b)) => (*a, *b),
            _ => return Err(Error::OutOfRange { k: i, max: self.nh.len().saturating_sub(1) }),
        };
        let cap = self.lambda1.powf(nt as f64);
        let c = CocycleCoeffs {
            b11: self.signed(0.0, cap),
            b12: self.signed(1.0 / cap, cap),
            b21: self.signed(1.0 / cap, cap),
            b22: self.signed(0.0, self.xi * cap),
            nh,
            nt,
        };
        c.check_bounds(self.lambda1, self.xi, i)?;
        Ok(c)
    }
}

/// Runs `big_m` returns and collects every intermediate state, `m = 1..=big_m`.
pub fn run_product(p: &Params, src: &mut dyn CoeffSource, big_m: u64) -> Result<Vec<ProductState>> {
    let mut s = ProductState::initial(p);
    let mut out = Vec::with_capacity(big_m as usize);
    for l in 0..big_m {
        let c = src.next_coeffs(l)?;
        s = product_step(&s, &c);
        out.push(s);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OscillationRow {
    pub m: u64,
    pub parity: &'static str,
    pub n_m: u64,
    #[serde(serialize_with = "ser17")]
    pub fte: f64,
    #[serde(serialize_with = "ser17")]
    pub limit: f64,
    #[serde(serialize_with = "ser17")]
    pub abs_err: f64,
    pub sandwich_ok: bool,
    pub bounds_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OscillationSummary {
    #[serde(serialize_with = "ser17")]
    pub even_limit: f64,
    #[serde(serialize_with = "ser17")]
    pub odd_limit: f64,
    #[serde(serialize_with = "ser17")]
    pub gap: f64,
    /// Smallest `m` from which every even value is below every odd value.
    pub m_star: Option<u64>,
    pub verdict: bool,
    #[serde(serialize_with = "ser17")]
    pub even_terminal: f64,
    #[serde(serialize_with = "ser17")]
    pub odd_terminal: f64,
    pub sandwich_ok: bool,
    pub bounds_ok: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OscillationReport {
    pub rows: Vec<OscillationRow>,
    pub summary: OscillationSummary,
}

/// Tolerance on the distance between each terminal value and its limit.
pub const LIMIT_TOL: f64 = 0.005;

/// Finite-time exponents for `m = 1..=big_m` against the two limits.
pub fn oscillation_report(
    p: &Params,
    src: &mut dyn CoeffSource,
    c0: [f64; 2],
    big_m: u64,
) -> Result<OscillationReport> {
    if big_m < 2 {
        return Err(Error::Domain("need at least two returns".into()));
    }
    let (even_limit, odd_limit) = analytic_limits(p);
    let states = run_product(p, src, big_m)?;
    let mut rows = Vec::with_capacity(states.len());
    for s in &states {
        let f = finite_time_le(s, c0, p.c0)?;
        let even = s.m % 2 == 0;
        let limit = if even { even_limit } else { odd_limit };
        rows.push(OscillationRow {
            m: s.m,
            parity: if even { "even" } else { "odd" },
            n_m: s.n_m,
            fte: f.fte,
            limit,
            abs_err: (f.fte - limit).abs(),
            sandwich_ok: f.sandwich_ok,
            bounds_ok: check_coefficient_bounds(s),
        });
    }
    let m_star = first_separated(&rows);
    let terminal = |parity: &str| rows.iter().rev().find(|r| r.parity == parity).map_or(f64::NAN, |r| r.fte);
    let (even_terminal, odd_terminal) = (terminal("even"), terminal("odd"));
    let gap = odd_limit - even_limit;
    let sandwich_ok = rows.iter().all(|r| r.sandwich_ok);
    let bounds_ok = rows.iter().all(|r| r.bounds_ok);
    let verdict = gap > 0.0
        && (even_terminal - even_limit).abs() <= LIMIT_TOL
        && (odd_terminal - odd_limit).abs() <= LIMIT_TOL
        && m_star.is_some()
        && sandwich_ok
        && bounds_ok;
    Ok(OscillationReport {
        rows,
        summary: OscillationSummary {
            even_limit,
            odd_limit,
            gap,
            m_star,
            verdict,
            even_terminal,
            odd_terminal,
            sandwich_ok,
            bounds_ok,
        },
    })
}

/// One synthetic run per seed, in parallel; results keep the order of `seeds`.
pub fn synthetic_reports(
    p: &Params,
    table: &crate::sequences::SequenceTable,
    seeds: &[u64],
    c0: [f64; 2],
    big_m: u64,
) -> Result<Vec<(u64, OscillationReport)>> {
    use rayon::prelude::*;
    let (k0, xi) = p.require_k0_xi()?;
    seeds
        .par_iter()
        .map(|&seed| {
            let mut src = SyntheticSource::new(table, k0, xi, big_m, seed)?;
            Ok((seed, oscillation_report(p, &mut src, c0, big_m)?))
        })
        .collect()
}

fn first_separated(rows: &[OscillationRow]) -> Option<u64> {
    let mut even_max = f64::NEG_INFINITY;
    let mut odd_min = f64::INFINITY;
    let mut best = None;
    for r in rows.iter().rev() {
        if r.parity == "even" {
            even_max = even_max.max(r.fte);
        } else {
            odd_min = odd_min.min(r.fte);
        }
        if even_max.is_finite() && odd_min.is_finite() {
            if even_max < odd_min {
                best = Some(r.m);
            } else {
                break;
            }
        }
    }
    best
}

/// CSV with columns `m, parity, N_m, fte, limit, abs_err, sandwich_ok`.
pub fn write_oscillation_csv<W: Write>(w: W, rows: &[OscillationRow]) -> Result<()> {
    let out = rows.iter().map(|r| {
        vec![
            r.m.to_string(),
            r.parity.to_string(),
            r.n_m.to_string(),
            fmt17(r.fte),
            fmt17(r.limit),
            fmt17(r.abs_err),
            r.sandwich_ok.to_string(),
        ]
    });
    write_csv(w, &["m", "parity", "N_m", "fte", "limit", "abs_err", "sandwich_ok"], out)
}

/// CSV with columns `m, c11, c12, c21, c22, log_cf, bounds_ok`; entries are
/// natural logs of magnitudes.
pub fn write_bounds_csv<W: Write>(w: W, states: &[ProductState]) -> Result<()> {
    let out = states.iter().map(|s| {
        let mut row = vec![s.m.to_string()];
        row.extend([s.c11, s.c12, s.c21, s.c22].iter().map(|c| fmt17(c.ln_abs())));
        row.push(fmt17(s.log_cf));
        row.push(check_coefficient_bounds(s).to_string());
        row
    });
    write_csv(w, &["m", "log_c11", "log_c12", "log_c21", "log_c22", "log_cf", "bounds_ok"], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::modelmap::FoldConfig;
    use proptest::prelude::{any, prop_assert, proptest, ProptestConfig};

    fn slr(x: f64) -> SignedLogReal {
        SignedLogReal::from_f64(x)
    }

    fn coeffs(b: [f64; 4], nh: u64, nt: u64) -> CocycleCoeffs {
        CocycleCoeffs { b11: slr(b[0]), b12: slr(b[1]), b21: slr(b[2]), b22: slr(b[3]), nh, nt }
    }

    fn small_params() -> Params {
        Params { n0_h: 10, ..Params::reference() }
    }

    #[test]
    fn jacobian_algebra() {
        let a = Jacobian2::from_f64([[1.0, 2.0], [3.0, 4.0]]);
        let b = Jacobian2::from_f64([[0.5, -1.0], [2.0, 0.0]]);
        let p = a.mul(&b).to_f64();
        let want = [[4.5, -1.0], [9.5, -3.0]];
        for i in 0..2 {
            for j in 0..2 {
                assert!((p[i][j] - want[i][j]).abs() < 1e-14);
            }
        }
        assert!((a.det().to_f64() + 2.0).abs() < 1e-14);
        assert_eq!(a.mul(&Jacobian2::IDENTITY), a);
    }

    #[test]
    fn base_state() {
        let p = small_params();
        let c = coeffs([0.3, 1.0, -1.0, 1e-6], 10, 5);
        let s = product_step(&ProductState::initial(&p), &c);
        let want11 = 0.3 * (0.05f64 / 2.0).powi(10);
        assert!((s.c11.to_f64() / want11 - 1.0).abs() < 1e-12);
        assert_eq!(s.c12, c.b12);
        assert_eq!(s.c21, c.b21);
        assert_eq!(s.c22, c.b22);
        assert_eq!(s.n_m, 15);
        assert!((s.log_lu - 10.0 * 2f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn two_steps_unit_coefficients() {
        // all b = 1, n^H = 1 then 2: worked by hand
        let p = small_params();
        let r = 0.05 / 2.0;
        let s1 = product_step(&ProductState::initial(&p), &coeffs([1.0; 4], 1, 0));
        let s2 = product_step(&s1, &coeffs([1.0; 4], 2, 0));
        // Λ_u^(2) = λ_u² λ_s, Λ_s^(2) = λ_s² λ_u
        let r2 = (0.05f64 * 0.05 * 2.0) / (4.0 * 0.05);
        assert!((s2.c11.to_f64() - (r * r2 + 1.0)).abs() < 1e-14);
        assert!((s2.c12.to_f64() - (r2 + 1.0)).abs() < 1e-14);
        assert!((s2.c21.to_f64() - (r + r)).abs() < 1e-14);
        assert!((s2.c22.to_f64() - (1.0 + r)).abs() < 1e-14);
    }

    #[test]
    fn scale_factor_alternation() {
        let p = small_params();
        let nh = [10u64, 11, 13, 14, 17];
        let mut s = ProductState::initial(&p);
        for (i, n) in nh.iter().enumerate() {
            s = product_step(&s, &coeffs([0.3, 1.0, -1.0, 0.0], *n, 5));
            // direct sum: the newest block is unstable in Λ_u, then alternate
            let mut lu = 0.0;
            let mut ls = 0.0;
            for (j, nj) in nh[..=i].iter().rev().enumerate() {
                let (a, b) = if j % 2 == 0 { (p.ln_u(), p.ln_s()) } else { (p.ln_s(), p.ln_u()) };
                lu += *nj as f64 * a;
                ls += *nj as f64 * b;
            }
            assert!((s.log_lu - lu).abs() < 1e-9);
            assert!((s.log_ls - ls).abs() < 1e-9);
            assert!(s.log_lu >= s.log_ls);
        }
    }

    #[test]
    fn limits_reference() {
        let (e, o) = analytic_limits(&Params::reference());
        assert!((e - (1.02 * 2f64.ln() + 0.05f64.ln()) / 2.02).abs() < 1e-15);
        assert!((e + 1.13303).abs() < 1e-5);
        assert!((o + 1.11513).abs() < 1e-5);
        assert!(e < o);
        let q = Params { beta: 1.02, ..Params::reference() };
        let (e, o) = analytic_limits(&q);
        assert_eq!(e, o);
    }

    #[test]
    fn cone_precondition() {
        let p = small_params();
        let s = product_step(&ProductState::initial(&p), &coeffs([0.3, 1.0, -1.0, 0.0], 10, 5));
        assert!(finite_time_le(&s, [1.0, 1.0], 1.5).is_ok());
        assert!(matches!(finite_time_le(&s, [1.5, 1.0], 1.5), Err(Error::Precondition(_))));
        assert!(matches!(finite_time_le(&s, [1.0, 1.5], 1.5), Err(Error::Precondition(_))));
    }

    #[test]
    fn fte_one_step_matches_direct_norm() {
        let p = small_params();
        let c = coeffs([0.3, 1.0, -1.0, 1e-3], 10, 5);
        let s = product_step(&ProductState::initial(&p), &c);
        let a = c.matrix(p.ln_s(), p.ln_u()).to_f64();
        let v = [1.0, 1.0];
        let w = [a[0][0] * v[0] + a[0][1] * v[1], a[1][0] * v[0] + a[1][1] * v[1]];
        let direct = w[0].hypot(w[1]).ln() / 15.0;
        let f = finite_time_le(&s, v, 1.5).unwrap();
        assert!((f.fte - direct).abs() < 1e-10);
        assert!(f.sandwich_ok);
    }

    #[test]
    fn base_ratio_slack() {
        let p = small_params();
        let c = coeffs([0.3, 1.0, -1.0, -1e-4], 10, 5);
        let s = product_step(&ProductState::initial(&p), &c);
        assert!((s.c22.ln_abs() - s.c21.ln_abs()) <= (1e-4f64).ln() + 1e-12);
        assert!(check_coefficient_bounds(&s));
    }

    #[test]
    fn coefficient_bounds_violation_named() {
        let c = coeffs([0.3, 1.0, -1.0, 10.0], 10, 5);
        match c.check_bounds(2.0, 1e-6, 3) {
            Err(Error::BoundViolation { index, entry }) => {
                assert_eq!(index, 3);
                assert_eq!(entry, "b22");
            }
            other => panic!("{other:?}"),
        }
        let c = coeffs([0.3, 1e-3, -1.0, 0.0], 10, 5);
        assert!(matches!(c.check_bounds(2.0, 1e-6, 0), Err(Error::BoundViolation { .. })));
    }

    fn geometric_model(horizon: u64) -> Model {
        let p = Params::reference().with_derived(60).unwrap();
        Model::assemble(&p, horizon, &FoldConfig::default()).unwrap()
    }

    #[test]
    fn anchor_has_vanishing_corner() {
        let m = geometric_model(3);
        let (a, c, next) = jacobian_a(&m, 0, Point::ORIGIN).unwrap();
        assert!(c.b22.is_zero());
        assert!(a.get(1, 1).is_zero());
        assert_eq!(c.b12.to_f64(), 1.0);
        assert_eq!(c.b21.to_f64(), -1.0);
        assert_eq!(next, Point::ORIGIN);
    }

    #[test]
    fn generic_point_corner_entry() {
        let m = geometric_model(3);
        let src = GeometricSource::at_fraction(&m, 0.5, 0.5).unwrap();
        let (_, c, _) = jacobian_a(&m, 0, src.off).unwrap();
        let n = m.table.nh(m.k0).unwrap() as f64;
        let u = src.off.u.scale_log(n * m.chart.ln_u());
        let want = u.ln_abs() + (2.0 * 2.0f64).ln() + n * (m.chart.ln_u() - m.chart.ln_s());
        assert!((c.b22.ln_abs() - want).abs() < 1e-9);
        assert!(c.b22.ln_abs() <= m.xi.ln() + c.nt as f64 * 2f64.ln());
    }

    #[test]
    fn product_matches_direct_log_domain() {
        let m = geometric_model(12);
        let mut src = GeometricSource::at_fraction(&m, 0.3, -0.7).unwrap();
        let mut s = ProductState::initial(&m.params);
        let mut direct = Jacobian2::IDENTITY;
        let mut off = src.off;
        for l in 0..12 {
            let (a, _, next) = jacobian_a(&m, l, off).unwrap();
            off = next;
            direct = a.mul(&direct);
            s = product_step(&s, &src.next_coeffs(l).unwrap());
            let rebuilt = s.matrix();
            for i in 0..2 {
                for j in 0..2 {
                    let (x, y) = (rebuilt.get(i, j), direct.get(i, j));
                    assert_eq!(x.sign(), y.sign(), "m={} entry {i}{j}", l + 1);
                    assert!((x.log_mag() - y.log_mag()).abs() < 1e-8 * x.log_mag().abs().max(1.0));
                }
            }
        }
    }

    #[test]
    fn native_float_oracle() {
        let p = Params { n0_h: 10, nt_offset: 1, ..Params::reference() };
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let nh = [10u64, 10, 11, 11, 12, 13, 13, 14];
        let mut s = ProductState::initial(&p);
        let mut f = [[1.0f64, 0.0], [0.0, 1.0]];
        for n in nh {
            let b: [f64; 4] = [
                rng.gen_range(-1.0..1.0),
                rng.gen_range(0.5..2.0),
                rng.gen_range(-2.0..-0.5),
                rng.gen_range(-1e-3..1e-3),
            ];
            let c = coeffs(b, n, 1);
            s = product_step(&s, &c);
            let a = c.matrix(p.ln_s(), p.ln_u()).to_f64();
            let mut g = [[0.0; 2]; 2];
            for i in 0..2 {
                for j in 0..2 {
                    g[i][j] = a[i][0] * f[0][j] + a[i][1] * f[1][j];
                }
            }
            f = g;
            let r = s.matrix().to_f64();
            for i in 0..2 {
                for j in 0..2 {
                    assert!((r[i][j] - f[i][j]).abs() <= 1e-8 * f[i][j].abs(), "{r:?} vs {f:?}");
                }
            }
        }
    }

    #[test]
    fn geometric_bounds_first_30() {
        let m = geometric_model(30);
        let mut src = GeometricSource::at_fraction(&m, 0.5, 0.5).unwrap();
        for s in run_product(&m.params, &mut src, 30).unwrap() {
            assert!(check_coefficient_bounds(&s), "m = {}", s.m);
        }
    }

    #[test]
    fn oscillation_short_run() {
        let m = geometric_model(40);
        let mut src = GeometricSource::at_fraction(&m, 0.5, 0.5).unwrap();
        let rep = oscillation_report(&m.params, &mut src, [1.0, 1.0], 40).unwrap();
        assert!(rep.rows.iter().all(|r| r.sandwich_ok));
        assert!(rep.summary.gap > 0.0);
        let mut buf = Vec::new();
        write_oscillation_csv(&mut buf, &rep.rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("m,parity,N_m,fte,limit,abs_err,sandwich_ok\n1,odd,"));
        let js = serde_json::to_value(&rep.summary).unwrap();
        for key in ["even_limit", "odd_limit", "gap", "m_star", "verdict"] {
            assert!(js.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn separation_index() {
        let row = |m: u64, fte: f64| OscillationRow {
            m,
            parity: if m.is_multiple_of(2) { "even" } else { "odd" },
            n_m: m,
            fte,
            limit: 0.0,
            abs_err: 0.0,
            sandwich_ok: true,
            bounds_ok: true,
        };
        let rows = vec![row(1, -2.0), row(2, -1.0), row(3, -1.1), row(4, -1.2), row(5, -1.1), row(6, -1.2)];
        assert_eq!(first_separated(&rows), Some(3));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]
        #[test]
        fn synthetic_bounds_hold(seed in any::<u64>()) {
            let p = Params::reference().with_derived(60).unwrap();
            let table = crate::sequences::SequenceTable::build(&p, p.k0.unwrap() + 40, 1e-9).unwrap();
            let mut src = SyntheticSource::new(&table, p.k0.unwrap(), p.xi.unwrap(), 30, seed).unwrap();
            for s in run_product(&p, &mut src, 30).unwrap() {
                prop_assert!(check_coefficient_bounds(&s), "m = {}", s.m);
                prop_assert!(finite_time_le(&s, [1.0, 1.0], 1.5).unwrap().sandwich_ok);
            }
        }
    }
}
