//! Rectangles `U_{k,m}` around the anchor orbit and the checks that the
//! return map nests them.
//!
//! Every check works on offsets from the rectangle's center. Hyperbolic steps
//! are linear, so corners or edge endpoints decide containment exactly. The
//! fold is quadratic only in `u`; between two samples on a vertical segment its
//! image leaves the chord by at most `|q| h² / 4`, which is added to the
//! sampled distance so every reported margin is certified.

use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::logscalar::SignedLogReal;
use crate::modelmap::{Model, Point, SaddleChart};
use crate::report::{fmt17, write_csv};
use crate::sequences::SequenceTable;

/// Axis-aligned box with center `ζ_{k+m}`, half-width `ε_{k,m}√b_{k+m}` and
/// half-height `¼ ε_{k,m} b_{k+m}`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Rectangle {
    pub k: u64,
    pub m: u64,
    pub center: Point,
    pub half_width: SignedLogReal,
    pub half_height: SignedLogReal,
}

pub fn build_rectangle(table: &SequenceTable, k: u64, m: u64, center: Point) -> Result<Rectangle> {
    let log_eps = table.log_eps_km(k, m)?;
    let log_b = table.log_b(k + m)?;
    Ok(Rectangle {
        k,
        m,
        center,
        half_width: SignedLogReal::from_log(log_eps + 0.5 * log_b),
        half_height: SignedLogReal::from_log(log_eps + log_b - 4f64.ln()),
    })
}

impl Rectangle {
    /// Same center, both half-sides multiplied by `f`.
    pub fn scaled(&self, f: f64) -> Rectangle {
        let f = SignedLogReal::from_f64(f);
        Rectangle { half_width: self.half_width * f, half_height: self.half_height * f, ..*self }
    }

    pub fn corner_offsets(&self) -> [Point; 4] {
        let (w, h) = (self.half_width, self.half_height);
        [Point::new(w, h), Point::new(-w, h), Point::new(-w, -h), Point::new(w, -h)]
    }

    /// `2√(w² + h²)`.
    pub fn diam(&self) -> SignedLogReal {
        let l = crate::logscalar::log_add_exp(2.0 * self.half_width.log_mag(), 2.0 * self.half_height.log_mag());
        SignedLogReal::from_log(0.5 * l + 2f64.ln())
    }

    /// Log slack of an offset whose true position may differ by up to `err`
    /// in each coordinate. Positive means strictly inside.
    pub fn offset_margin(&self, off: Point, err: Point) -> f64 {
        let ds = (off.s.abs() + err.s.abs()).ln_abs();
        let du = (off.u.abs() + err.u.abs()).ln_abs();
        (self.half_width.log_mag() - ds).min(self.half_height.log_mag() - du)
    }

    pub fn contains_offset(&self, off: Point) -> bool {
        self.offset_margin(off, Point::ORIGIN) > 0.0
    }

    /// `n` evenly spaced offsets on `[-1, 1]` times `half`, endpoints included.
    fn ticks(half: SignedLogReal, n: usize) -> Vec<SignedLogReal> {
        (0..n).map(|i| half * SignedLogReal::from_f64(-1.0 + 2.0 * i as f64 / (n - 1) as f64)).collect()
    }

    /// `n` samples along each edge, corners shared.
    pub fn boundary_offsets(&self, n: usize) -> Vec<(Point, Edge)> {
        let mut out = Vec::with_capacity(4 * n);
        for s in Self::ticks(self.half_width, n) {
            out.push((Point::new(s, -self.half_height), Edge::Horizontal));
            out.push((Point::new(s, self.half_height), Edge::Horizontal));
        }
        for u in Self::ticks(self.half_height, n) {
            out.push((Point::new(-self.half_width, u), Edge::Vertical));
            out.push((Point::new(self.half_width, u), Edge::Vertical));
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Edge {
    Horizontal,
    Vertical,
}

/// `U_{k,m}` of the model, centered on its anchor.
pub fn model_rectangle(model: &Model, k: u64, m: u64) -> Result<Rectangle> {
    build_rectangle(&model.table, k, m, model.anchors.zeta(k + m)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Pass,
    Fail,
    /// Below `k0`, where the "sufficiently large k" clauses are not in force.
    NotCertified,
}

/// Outcome of one claim at one `(k, m)`. `checks` lists each sub-bound with
/// its log margin; `min_margin_log` is their minimum.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ClaimReport {
    pub claim: &'static str,
    pub k: u64,
    pub m: u64,
    pub status: Status,
    pub min_margin_log: f64,
    pub checks: Vec<(&'static str, f64)>,
}

impl ClaimReport {
    pub fn from_checks(claim: &'static str, k: u64, m: u64, checks: Vec<(&'static str, f64)>) -> Self {
        let min = checks.iter().map(|c| c.1).fold(f64::INFINITY, |a, b| if b.is_nan() { b } else { a.min(b) });
        let status = if min > 0.0 { Status::Pass } else { Status::Fail };
        Self { claim, k, m, status, min_margin_log: min, checks }
    }

    fn not_certified(claim: &'static str, k: u64, m: u64) -> Self {
        Self { claim, k, m, status: Status::NotCertified, min_margin_log: f64::NAN, checks: Vec::new() }
    }

    pub fn passed(&self) -> bool {
        self.status == Status::Pass
    }

    pub fn worst_check(&self) -> Option<&(&'static str, f64)> {
        self.checks.iter().min_by(|a, b| a.1.total_cmp(&b.1))
    }
}

/// True when every report passed. Not-certified reports count as not passed.
pub fn all_pass(reports: &[ClaimReport]) -> bool {
    reports.iter().all(ClaimReport::passed)
}

/// CSV with columns `k, m, min_margin_log, pass`.
pub fn write_margin_csv<W: Write>(w: W, reports: &[ClaimReport]) -> Result<()> {
    let rows = reports.iter().map(|r| {
        let pass = match r.status {
            Status::Pass => "true",
            Status::Fail => "false",
            Status::NotCertified => "not_certified",
        };
        vec![r.k.to_string(), r.m.to_string(), fmt17(r.min_margin_log), pass.to_string()]
    });
    write_csv(w, &["k", "m", "min_margin_log", "pass"], rows)
}

fn ln_chart_slack(chart: &SaddleChart, v: SignedLogReal) -> f64 {
    chart.k_half.ln() - v.ln_abs()
}

/// Every corner of `r`, iterated `j = 0..=n^H_{k+m}` times by the linear
/// chart, stays in `K`. Margins are absolute positions against the side of `K`.
pub fn verify_in_k(table: &SequenceTable, r: &Rectangle, chart: &SaddleChart) -> Result<ClaimReport> {
    let n = table.nh(r.k + r.m)?;
    let mut worst = f64::INFINITY;
    for c in r.corner_offsets() {
        let start = r.center + c;
        for j in 0..=n {
            let p = chart.apply_hyperbolic(start, j);
            worst = worst.min(ln_chart_slack(chart, p.s)).min(ln_chart_slack(chart, p.u));
        }
    }
    Ok(ClaimReport::from_checks("in_k", r.k, r.m, vec![("corners_in_k", worst)]))
}

/// The return `f^{n_{k+m}}` maps the vertical center segment of `U_{k,m}` into
/// `½ U_{k,m+1}`, with the projection bounds of the proof checked one by one.
pub fn verify_vertical_image(model: &Model, k: u64, m: u64) -> Result<ClaimReport> {
    const CLAIM: &str = "vertical_image";
    const SAMPLES: usize = 1025;
    if k < model.k0 {
        return Ok(ClaimReport::not_certified(CLAIM, k, m));
    }
    let km = k + m;
    let src = model_rectangle(model, k, m)?;
    let dst = model_rectangle(model, k, m + 1)?;
    let half = dst.scaled(0.5);
    let fold = model.fold(km)?;
    let ln_u = model.chart.ln_u();
    let nh = model.table.nh(km)? as f64;

    // inter-sample error after the hyperbolic stretch
    let spacing = src.half_height.scale_log(nh * ln_u) * SignedLogReal::from_f64(2.0 / (SAMPLES - 1) as f64);
    let err = Point::new(SignedLogReal::ZERO, SignedLogReal::from_f64(fold.coeffs.q.abs() / 4.0) * spacing * spacing);

    let mut contain = f64::INFINITY;
    let (mut s_lo, mut s_hi) = (SignedLogReal::from_log(f64::INFINITY), -SignedLogReal::from_log(f64::INFINITY));
    let (mut u_lo, mut u_hi) = (s_lo, s_hi);
    for u in Rectangle::ticks(src.half_height, SAMPLES) {
        let img = model.return_offset(km, Point::new(SignedLogReal::ZERO, u))?;
        contain = contain.min(half.offset_margin(img, err));
        s_lo = s_lo.min(img.s);
        s_hi = s_hi.max(img.s);
        u_lo = u_lo.min(img.u);
        u_hi = u_hi.max(img.u);
    }
    // the s-image is linear in u, so the sampled extremes are exact
    let s_len = s_hi - s_lo;
    let u_len = (u_hi - u_lo).abs() + err.u;

    let log_lam = model.log_model_lambda_pow(km)?;
    let log_half_w = dst.half_width.log_mag() - 2f64.ln();
    let bound_105 = log_half_w + log_lam - nh * ln_u;
    let c_t = model.params.c_t.ln();
    let checks = vec![
        ("image_in_half_rectangle", contain),
        ("s_projection_vs_stretch_bound", bound_105 - s_len.ln_abs()),
        ("stretch_factor_below_one", nh * ln_u - log_lam),
        ("u_projection_vs_quadratic", c_t + 2.0 * s_len.ln_abs() - u_len.ln_abs()),
        // height of U is twice the half-height
        (
            "quadratic_to_height_ratio",
            -(2f64.ln()) - (c_t + 2.0 * s_len.ln_abs() - dst.half_height.log_mag() - 2f64.ln()),
        ),
        ("eps_ratio_below_half", -(c_t + model.table.log_eps_km(k, m + 1)? - 2f64.ln())),
    ];
    Ok(ClaimReport::from_checks(CLAIM, k, m, checks))
}

/// Ratio of the return image of each horizontal segment `ℓ^s(x)`,
/// `x` on the vertical center segment, to `diam U_{k,m+1}` stays below `1/8`,
/// and so does the proof's bound `R_{k,m}` with the model's `Λ`.
pub fn verify_horizontal_image(model: &Model, k: u64, m: u64) -> Result<ClaimReport> {
    const CLAIM: &str = "horizontal_image";
    const SAMPLES: usize = 33;
    if k < model.k0 {
        return Ok(ClaimReport::not_certified(CLAIM, k, m));
    }
    let km = k + m;
    let src = model_rectangle(model, k, m)?;
    let dst = model_rectangle(model, k, m + 1)?;
    let log_diam = dst.diam().log_mag();
    let ln_eighth = -(8f64.ln());
    let mut worst = f64::INFINITY;
    for u in Rectangle::ticks(src.half_height, SAMPLES) {
        let a = model.return_offset(km, Point::new(-src.half_width, u))?;
        let b = model.return_offset(km, Point::new(src.half_width, u))?;
        // the image of a horizontal segment is the straight chord between its ends
        let len = (b - a).ln_norm();
        worst = worst.min(ln_eighth - (len - log_diam));
    }
    let nh = model.table.nh(km)? as f64;
    let log_r = model.log_model_lambda_pow(km)?
        + nh * model.chart.ln_s()
        + model.table.log_eps_km(k, m)?
        + 0.5 * model.table.log_b(km)?
        - model.table.log_eps_km(k, m + 1)?
        - model.table.log_b(km + 1)?;
    let checks = vec![("image_to_diameter_ratio", worst), ("r_km_below_eighth", ln_eighth - log_r)];
    Ok(ClaimReport::from_checks(CLAIM, k, m, checks))
}

/// Boundary samples of `U_{k,m}` land in `U_{k,m+1}`. The rectangle is convex
/// and the return is a homeomorphism onto its image, so boundary containment
/// implies containment of the whole rectangle.
pub fn verify_nesting_step(model: &Model, k: u64, m: u64, per_edge: usize) -> Result<ClaimReport> {
    const CLAIM: &str = "nesting";
    if k < model.k0 {
        return Ok(ClaimReport::not_certified(CLAIM, k, m));
    }
    if per_edge < 2 {
        return Err(Error::Domain("need at least two samples per edge".into()));
    }
    let km = k + m;
    let src = model_rectangle(model, k, m)?;
    let dst = model_rectangle(model, k, m + 1)?;
    let fold = model.fold(km)?;
    let nh = model.table.nh(km)? as f64;
    let spacing =
        src.half_height.scale_log(nh * model.chart.ln_u()) * SignedLogReal::from_f64(2.0 / (per_edge - 1) as f64);
    let vert_err =
        Point::new(SignedLogReal::ZERO, SignedLogReal::from_f64(fold.coeffs.q.abs() / 4.0) * spacing * spacing);
    let mut worst = f64::INFINITY;
    for (off, edge) in src.boundary_offsets(per_edge) {
        let img = model.return_offset(km, off)?;
        let err = match edge {
            Edge::Vertical => vert_err,
            Edge::Horizontal => Point::ORIGIN,
        };
        worst = worst.min(dst.offset_margin(img, err));
    }
    Ok(ClaimReport::from_checks(CLAIM, k, m, vec![("boundary_in_next", worst)]))
}

pub const NESTING_SAMPLES: usize = 65;

/// `verify_nesting_step` for `m = 0..=big_m`, in index order.
pub fn verify_nesting(model: &Model, k: u64, big_m: u64) -> Result<Vec<ClaimReport>> {
    (0..=big_m).into_par_iter().map(|m| verify_nesting_step(model, k, m, NESTING_SAMPLES)).collect()
}

/// Per-`m` driver for any of the claim checks above.
pub fn verify_range(
    model: &Model,
    k: u64,
    big_m: u64,
    check: impl Fn(&Model, u64, u64) -> Result<ClaimReport> + Sync,
) -> Result<Vec<ClaimReport>> {
    (0..=big_m).into_par_iter().map(|m| check(model, k, m)).collect()
}

pub fn verify_in_k_range(model: &Model, k: u64, big_m: u64) -> Result<Vec<ClaimReport>> {
    verify_range(model, k, big_m, |model, k, m| verify_in_k(&model.table, &model_rectangle(model, k, m)?, &model.chart))
}

/// Orbit of `ζ_{k0} + off` through `returns` returns. At each `l` the point
/// must lie in `U_{k0,l}`, and the hyperbolic-phase offset `x̃′_{l+1}` must
/// satisfy `‖x̃′_{l+1}‖ λ_u^{n^H} <= ξ λ_s^{n^H}`.
/// Returns `(l, margin)` for the offset bound and the worst rectangle margin.
pub fn fold_offset_margins(model: &Model, off: Point, returns: u64) -> Result<(Vec<(u64, f64)>, f64)> {
    let k0 = model.k0;
    let ln_xi = model.xi.ln();
    let (ln_s, ln_u) = (model.chart.ln_s(), model.chart.ln_u());
    let mut out = Vec::with_capacity(returns as usize);
    let mut rect_worst = f64::INFINITY;
    let mut off = off;
    for l in 0..returns {
        let k = k0 + l;
        rect_worst = rect_worst.min(model_rectangle(model, k0, l)?.offset_margin(off, Point::ORIGIN));
        let nh = model.table.nh(k)? as f64;
        let h = model.hyperbolic_offset(k, off)?;
        out.push((l, ln_xi + nh * ln_s - (h.ln_norm() + nh * ln_u)));
        off = model.fold(k)?.apply_offset(h)?;
    }
    Ok((out, rect_worst))
}

/// `fold_offset_margins` over a `grid × grid` lattice of interior points of
/// `U_{k0,0}` (the boundary excluded). One report per `l`, minimized over the
/// lattice; the rectangle containment of each orbit is a second check.
pub fn verify_fold_offset_bound(model: &Model, grid: usize, returns: u64) -> Result<Vec<ClaimReport>> {
    const CLAIM: &str = "fold_offset";
    if grid == 0 || returns == 0 {
        return Err(Error::Domain("empty lattice or horizon".into()));
    }
    let r = model_rectangle(model, model.k0, 0)?;
    let frac = |i: usize| -1.0 + 2.0 * (i as f64 + 1.0) / (grid as f64 + 1.0);
    let pts: Vec<Point> = (0..grid)
        .flat_map(|i| (0..grid).map(move |j| (i, j)))
        .map(|(i, j)| {
            Point::new(
                r.half_width * SignedLogReal::from_f64(frac(i)),
                r.half_height * SignedLogReal::from_f64(frac(j)),
            )
        })
        .collect();
    let runs = pts.par_iter().map(|p| fold_offset_margins(model, *p, returns)).collect::<Result<Vec<_>>>()?;
    let mut worst = vec![f64::INFINITY; returns as usize];
    let mut rect = vec![f64::INFINITY; returns as usize];
    for (margins, rw) in &runs {
        for (l, m) in margins {
            worst[*l as usize] = worst[*l as usize].min(*m);
            rect[*l as usize] = rect[*l as usize].min(*rw);
        }
    }
    Ok((0..returns)
        .map(|l| {
            ClaimReport::from_checks(
                CLAIM,
                model.k0,
                l,
                vec![("offset_vs_xi", worst[l as usize]), ("orbit_in_rectangles", rect[l as usize])],
            )
        })
        .collect())
}
