//! Return times `n^H_k`, `n^T_k` and the derived scales `b_k`, `ε_k`, `ε_{k,m}`.
//!
//! The floors in `n^H_k = ⌊n0 α^{⌈k/2⌉} β^{⌊k/2⌋}⌋` are taken on exact
//! rationals: `α` and `β` are read back from their shortest decimal form, so
//! `1.02` means `102/100` and no rounding noise can move a floor.

use std::io::Write;

use num_bigint::BigUint;
use num_traits::{One, ToPrimitive};

use crate::error::{Error, Result};
use crate::logscalar::SignedLogReal;
use crate::parameters::Params;
use crate::report::{fmt17, write_csv};

pub const DEFAULT_TOL_LOG: f64 = 1e-9;

/// `x` as `num/den` from its shortest round-trip decimal representation.
pub fn decimal_rational(x: f64) -> Result<(BigUint, BigUint)> {
    if !x.is_finite() || x < 0.0 {
        return Err(Error::Domain(format!("expected a finite non-negative value, got {x}")));
    }
    let text = format!("{x}");
    let (int, frac) = text.split_once('.').unwrap_or((&text, ""));
    let digits = format!("{int}{frac}");
    let num = digits.parse::<BigUint>().map_err(|e| Error::Domain(format!("cannot read {text} as a decimal: {e}")))?;
    let den = BigUint::from(10u32).pow(frac.len() as u32);
    Ok((num, den))
}

fn floor_u64(num: &BigUint, den: &BigUint, what: &str) -> Result<u64> {
    (num / den).to_u64().ok_or_else(|| Error::Range(format!("{what} does not fit in 64 bits")))
}

/// `n^H_k`, computed directly.
pub fn n_hyper(p: &Params, k: u64) -> Result<u64> {
    let (an, ad) = decimal_rational(p.alpha)?;
    let (bn, bd) = decimal_rational(p.beta)?;
    let (ea, eb) = (k.div_ceil(2), k / 2);
    let (ea, eb) = (
        u32::try_from(ea).map_err(|_| Error::Range("index too large".into()))?,
        u32::try_from(eb).map_err(|_| Error::Range("index too large".into()))?,
    );
    let num = BigUint::from(p.n0_h) * an.pow(ea) * bn.pow(eb);
    let den = ad.pow(ea) * bd.pow(eb);
    floor_u64(&num, &den, &format!("n^H at k = {k}"))
}

/// `n^T_k = offset + ⌊slope · k⌋`.
pub fn n_tan(p: &Params, k: u64) -> Result<u64> {
    let (sn, sd) = decimal_rational(p.nt_slope)?;
    let lin = floor_u64(&(sn * BigUint::from(k)), &sd, &format!("n^T at k = {k}"))?;
    p.nt_offset.checked_add(lin).ok_or_else(|| Error::Range(format!("n^T at k = {k} does not fit in 64 bits")))
}

/// Ratio used in the tail bound `n_{k+j} < r^j (n_k + 1)`.
fn tail_ratio(p: &Params) -> Result<f64> {
    let r = p.beta_prime.unwrap_or(p.beta).max(p.beta);
    if r >= 2.0 {
        return Err(Error::Domain(format!("tail ratio {r} >= 2 makes the series bound diverge")));
    }
    Ok(r)
}

/// Number of terms beyond the first needed so that the tail of
/// `Σ n_{k+i}/2^i` is below `budget`, given `n_k = n` and ratio `r < 2`.
fn series_terms(n: u64, r: f64, budget: f64) -> usize {
    let q = r / 2.0;
    let mut tail = (n as f64 + 1.0) * q / (1.0 - q);
    let mut i = 0;
    while tail >= budget {
        tail *= q;
        i += 1;
    }
    i
}

/// `ln b_k` by truncating `Σ n_{k+i} 2^{-i}` once the tail bound drops below
/// `tol_log / (3 ln λ_u)`. The partial sum is accumulated exactly as a dyadic
/// integer. `ratio` bounds the growth `n_{k+j} < ratio^j (n_k + 1)`.
pub fn log_b_series(ln_u: f64, nh: impl Fn(u64) -> Result<u64>, k: u64, ratio: f64, tol_log: f64) -> Result<f64> {
    if !(tol_log > 0.0) {
        return Err(Error::Domain("tol_log must be positive".into()));
    }
    if !(ratio < 2.0) {
        return Err(Error::Domain(format!("tail ratio {ratio} >= 2 makes the series bound diverge")));
    }
    let terms = series_terms(nh(k)?, ratio, tol_log / (3.0 * ln_u));
    let mut acc: u128 = 0;
    for i in 0..=terms as u64 {
        let n = nh(k + i)? as u128;
        acc = acc
            .checked_mul(2)
            .and_then(|a| a.checked_add(n))
            .ok_or_else(|| Error::Range(format!("series for b at k = {k} overflows")))?;
    }
    let sum = acc as f64 * 0.5f64.powi(terms as i32);
    Ok(-3.0 * ln_u * sum)
}

/// `b_k` from the parameters.
pub fn b_of(p: &Params, k: u64, tol_log: f64) -> Result<SignedLogReal> {
    let r = tail_ratio(p)?;
    let lb = log_b_series(p.ln_u(), |j| n_hyper(p, j), k, r, tol_log)?;
    Ok(SignedLogReal::from_log(lb))
}

/// `ln` of the ε-base `λ_s λ_u^{(9β − 6 + 18/n)/(2 − β)}`.
pub fn log_eps_base(p: &Params, n: u64) -> f64 {
    p.ln_s() + p.ln_u() * (9.0 * p.beta - 6.0 + 18.0 / n as f64) / (2.0 - p.beta)
}

/// `ln ε` for return time `n`, or a precondition error when the base is not
/// below one.
pub fn log_eps_from_n(p: &Params, n: u64) -> Result<f64> {
    let base = log_eps_base(p, n);
    if base >= 0.0 {
        return Err(Error::Precondition(format!(
            "eps base is not below one for n^H = {n} (log base {base}); k is below k0"
        )));
    }
    let e = 9.0 * p.beta - 6.0;
    Ok(n as f64 * (p.ln_s() + p.ln_u() * e / (2.0 - p.beta)) + 18.0 * p.ln_u() / (2.0 - p.beta))
}

pub fn eps_of(p: &Params, k: u64) -> Result<SignedLogReal> {
    Ok(SignedLogReal::from_log(log_eps_from_n(p, n_hyper(p, k)?)?))
}

/// `(αβ)^{⌊m/2⌋}`.
pub fn eps_power(p: &Params, m: u64) -> f64 {
    (p.alpha * p.beta).powi((m / 2) as i32)
}

pub fn eps_km(p: &Params, k: u64, m: u64) -> Result<SignedLogReal> {
    Ok(SignedLogReal::from_log(eps_of(p, k)?.log_mag() * eps_power(p, m)))
}

/// Precomputed sequences on `0..=k_max`. Return times are stored further out
/// to feed the `b_k` series.
#[derive(Clone, Debug)]
pub struct SequenceTable {
    params: Params,
    k_max: u64,
    nh: Vec<u64>,
    nt: Vec<u64>,
    log_b: Vec<f64>,
    log_eps: Vec<Option<f64>>,
}

impl SequenceTable {
    pub fn build(p: &Params, k_max: u64, tol_log: f64) -> Result<Self> {
        let ratio = tail_ratio(p)?;
        if !(tol_log > 0.0) {
            return Err(Error::Domain("tol_log must be positive".into()));
        }
        let (an, ad) = decimal_rational(p.alpha)?;
        let (bn, bd) = decimal_rational(p.beta)?;
        let (sn, sd) = decimal_rational(p.nt_slope)?;
        let mut num = BigUint::from(p.n0_h);
        let mut den = BigUint::one();
        let mut nh = Vec::new();
        let mut push_next = |nh: &mut Vec<u64>| -> Result<()> {
            let k = nh.len() as u64;
            nh.push(floor_u64(&num, &den, &format!("n^H at k = {k}"))?);
            if k.is_multiple_of(2) {
                num *= &an;
                den *= &ad;
            } else {
                num *= &bn;
                den *= &bd;
            }
            Ok(())
        };
        for _ in 0..=k_max {
            push_next(&mut nh)?;
        }
        let budget = tol_log / (3.0 * p.ln_u());
        let extra = series_terms(nh[k_max as usize], ratio, budget);
        for _ in 0..extra + 1 {
            push_next(&mut nh)?;
        }
        let nt = (0..nh.len() as u64)
            .map(|k| {
                let lin = floor_u64(&(&sn * BigUint::from(k)), &sd, "n^T")?;
                p.nt_offset.checked_add(lin).ok_or_else(|| Error::Range("n^T overflows".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        let ln_u = p.ln_u();
        let lookup = |j: u64| nh.get(j as usize).copied().ok_or(Error::OutOfRange { k: j as usize, max: nh.len() - 1 });
        let log_b = (0..=k_max).map(|k| log_b_series(ln_u, lookup, k, ratio, tol_log)).collect::<Result<Vec<_>>>()?;
        let log_eps = (0..=k_max as usize).map(|k| log_eps_from_n(p, nh[k]).ok()).collect();
        Ok(Self { params: p.clone(), k_max, nh, nt, log_b, log_eps })
    }

    pub fn params(&self) -> &Params {
        &self.params
    }

    pub fn k_max(&self) -> u64 {
        self.k_max
    }

    fn check(&self, k: u64, max: usize) -> Result<usize> {
        if k as usize > max {
            Err(Error::OutOfRange { k: k as usize, max })
        } else {
            Ok(k as usize)
        }
    }

    /// `n^H_k`; available slightly beyond `k_max`.
    pub fn nh(&self, k: u64) -> Result<u64> {
        Ok(self.nh[self.check(k, self.nh.len() - 1)?])
    }

    pub fn nt(&self, k: u64) -> Result<u64> {
        Ok(self.nt[self.check(k, self.nt.len() - 1)?])
    }

    /// `n_k = n^H_k + n^T_k`.
    pub fn n(&self, k: u64) -> Result<u64> {
        Ok(self.nh(k)? + self.nt(k)?)
    }

    pub fn log_b(&self, k: u64) -> Result<f64> {
        Ok(self.log_b[self.check(k, self.k_max as usize)?])
    }

    pub fn b(&self, k: u64) -> Result<SignedLogReal> {
        Ok(SignedLogReal::from_log(self.log_b(k)?))
    }

    pub fn log_eps(&self, k: u64) -> Result<f64> {
        self.log_eps[self.check(k, self.k_max as usize)?]
            .ok_or_else(|| Error::Precondition(format!("eps base is not below one at k = {k}; k is below k0")))
    }

    pub fn eps(&self, k: u64) -> Result<SignedLogReal> {
        Ok(SignedLogReal::from_log(self.log_eps(k)?))
    }

    pub fn log_eps_km(&self, k: u64, m: u64) -> Result<f64> {
        Ok(self.log_eps(k)? * eps_power(&self.params, m))
    }

    pub fn eps_km(&self, k: u64, m: u64) -> Result<SignedLogReal> {
        Ok(SignedLogReal::from_log(self.log_eps_km(k, m)?))
    }

    /// First `k >= from` where `n^H` decreases, if any, within the table.
    pub fn first_non_monotone(&self, from: u64) -> Option<u64> {
        (from..self.k_max).find(|&k| self.nh[k as usize + 1] < self.nh[k as usize])
    }

    /// First `k >= from` where `n^T/n^H` increases, if any.
    pub fn first_ratio_increase(&self, from: u64) -> Option<u64> {
        let ratio = |k: usize| self.nt[k] as f64 / self.nh[k] as f64;
        (from..self.k_max).find(|&k| ratio(k as usize + 1) > ratio(k as usize))
    }

    /// CSV with columns `k, nH, nT, n, log_b, log_eps`; `log_eps` is empty
    /// where the ε-base is not below one.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let rows = (0..=self.k_max as usize).map(|k| {
            vec![
                k.to_string(),
                self.nh[k].to_string(),
                self.nt[k].to_string(),
                (self.nh[k] + self.nt[k]).to_string(),
                fmt17(self.log_b[k]),
                self.log_eps[k].map(fmt17).unwrap_or_default(),
            ]
        });
        write_csv(w, &["k", "nH", "nT", "n", "log_b", "log_eps"], rows)
    }
}

/// Per-`m` slack of `ε_{k,m} <= λ_u^{n^H_{k+m}} ε_{k,m+1}` in log units.
#[derive(Clone, Debug, PartialEq)]
pub struct EpsStepReport {
    pub k: u64,
    pub margins: Vec<(u64, f64)>,
}

impl EpsStepReport {
    pub fn holds(&self) -> bool {
        self.margins.iter().all(|&(_, m)| m >= 0.0)
    }

    pub fn first_failure(&self) -> Option<u64> {
        self.margins.iter().find(|&&(_, m)| m < 0.0).map(|&(m, _)| m)
    }
}

/// Checks the ε step bound for `0 <= m <= big_m` at index `k`.
pub fn verify_eps_step_bound(table: &SequenceTable, k: u64, big_m: u64) -> Result<EpsStepReport> {
    let ln_u = table.params().ln_u();
    let margins = (0..=big_m)
        .map(|m| {
            let lhs = table.log_eps_km(k, m)?;
            let rhs = table.nh(k + m)? as f64 * ln_u + table.log_eps_km(k, m + 1)?;
            Ok((m, rhs - lhs))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EpsStepReport { k, margins })
}

/// `|3 n^H_k ln λ_u + ln b_k − ½ ln b_{k+1}|` for `k_lo..=k_hi`; zero in exact arithmetic.
pub fn identity_residuals(table: &SequenceTable, k_lo: u64, k_hi: u64) -> Result<Vec<(u64, f64)>> {
    let ln_u = table.params().ln_u();
    (k_lo..=k_hi)
        .map(|k| {
            let lhs = 3.0 * table.nh(k)? as f64 * ln_u + table.log_b(k)?;
            Ok((k, (lhs - 0.5 * table.log_b(k + 1)?).abs()))
        })
        .collect()
}

/// Log slack of `λ_u^{-6n/(2−β′)} <= b_k <= λ_u^{-6n/(2−α)}` as
/// `(k, lower, upper)`; both positive when the bracket holds strictly.
pub fn b_bracket_margins(table: &SequenceTable, beta_prime: f64, k_lo: u64, k_hi: u64) -> Result<Vec<(u64, f64, f64)>> {
    let p = table.params();
    let ln_u = p.ln_u();
    (k_lo..=k_hi)
        .map(|k| {
            let n = table.nh(k)? as f64;
            let lb = table.log_b(k)?;
            Ok((k, lb + 6.0 * n * ln_u / (2.0 - beta_prime), -6.0 * n * ln_u / (2.0 - p.alpha) - lb))
        })
        .collect()
}

/// Smallest slack over the four two-step growth bounds
/// `(αβ)^i n_k − 1 < n_{k+2i} < (αβ)^i (n_k + 1)` and
/// `α(αβ)^i n_k − 1 < n_{k+2i+1} < β(αβ)^i (n_k + 1)`, for even `k` in
/// `k_lo..=k_hi` and `0 <= i <= i_max`. Returns `(k, i, slack)` at the worst case.
pub fn growth_bound_slack(table: &SequenceTable, k_lo: u64, k_hi: u64, i_max: u64) -> Result<(u64, u64, f64)> {
    let p = table.params();
    let ab = p.alpha * p.beta;
    let mut worst = (k_lo, 0, f64::INFINITY);
    for k in (k_lo..=k_hi).filter(|k| k % 2 == 0) {
        let n = table.nh(k)? as f64;
        for i in 0..=i_max {
            let g = ab.powi(i as i32);
            let even = table.nh(k + 2 * i)? as f64;
            let odd = table.nh(k + 2 * i + 1)? as f64;
            let slack = [
                even - (g * n - 1.0),
                g * (n + 1.0) - even,
                odd - (p.alpha * g * n - 1.0),
                p.beta * g * (n + 1.0) - odd,
            ]
            .into_iter()
            .fold(f64::INFINITY, f64::min);
            if slack < worst.2 {
                worst = (k, i, slack);
            }
        }
    }
    Ok(worst)
}
