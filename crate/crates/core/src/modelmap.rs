//! The model diffeomorphism: a linear saddle chart plus one quadratic fold per
//! return, carrying `ζ′_{k+1}` to `ζ_{k+1}`.
//!
//! Orbit points are tracked as offsets from the anchor orbit. An absolute
//! `f64` coordinate cannot hold `0.5 + 1e-3000`, while the offset alone is an
//! ordinary [`SignedLogReal`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cocycle::Jacobian2;
use crate::error::{Error, Result};
use crate::logscalar::SignedLogReal;
use crate::parameters::Params;
use crate::sequences::SequenceTable;

/// A point or offset in chart coordinates `(s, u)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub s: SignedLogReal,
    pub u: SignedLogReal,
}

impl Point {
    pub const ORIGIN: Point = Point { s: SignedLogReal::ZERO, u: SignedLogReal::ZERO };

    pub fn new(s: SignedLogReal, u: SignedLogReal) -> Self {
        Self { s, u }
    }

    pub fn from_f64(s: f64, u: f64) -> Self {
        Self { s: SignedLogReal::from_f64(s), u: SignedLogReal::from_f64(u) }
    }

    pub fn to_f64(self) -> (f64, f64) {
        (self.s.to_f64(), self.u.to_f64())
    }

    /// `ln` of the Euclidean norm; `-inf` at the origin.
    pub fn ln_norm(self) -> f64 {
        let (a, b) = (2.0 * self.s.ln_abs(), 2.0 * self.u.ln_abs());
        0.5 * crate::logscalar::log_add_exp(a, b)
    }

    /// Both coordinates strictly inside `(-h, h)`.
    pub fn inside_box(self, h: f64) -> bool {
        let h = SignedLogReal::from_f64(h);
        self.s.abs() < h && self.u.abs() < h
    }
}

impl std::ops::Add for Point {
    type Output = Point;

    fn add(self, o: Point) -> Point {
        Point { s: self.s + o.s, u: self.u + o.u }
    }
}

impl std::ops::Sub for Point {
    type Output = Point;

    fn sub(self, o: Point) -> Point {
        Point { s: self.s - o.s, u: self.u - o.u }
    }
}

/// The linearizing chart `f(s, u) = (λ_s s, λ_u u)` on `K = (-1, 1)²`.
#[derive(Clone, Debug, PartialEq)]
pub struct SaddleChart {
    pub lambda_s: f64,
    pub lambda_u: f64,
    /// Half-side of `K`.
    pub k_half: f64,
    /// Half-side of the closed set `K′`.
    pub kp_half: f64,
    /// `dist(K′, complement of K)`.
    pub rho: f64,
}

impl SaddleChart {
    pub fn new(lambda_s: f64, lambda_u: f64) -> Result<Self> {
        if !(lambda_s > 0.0 && lambda_s < 1.0 && lambda_u > 1.0) {
            return Err(Error::Domain("need 0 < lambda_s < 1 < lambda_u".into()));
        }
        if lambda_s * lambda_u.powi(3) >= 1.0 {
            return Err(Error::Domain("saddle is not strongly dissipative".into()));
        }
        Ok(Self { lambda_s, lambda_u, k_half: 1.0, kp_half: 0.9, rho: 0.1 })
    }

    pub fn ln_s(&self) -> f64 {
        self.lambda_s.ln()
    }

    pub fn ln_u(&self) -> f64 {
        self.lambda_u.ln()
    }

    /// `j` steps of the linear map. The caller certifies that the orbit stays in `K`.
    pub fn apply_hyperbolic(&self, pt: Point, j: u64) -> Point {
        let j = j as f64;
        Point { s: pt.s.scale_log(j * self.ln_s()), u: pt.u.scale_log(j * self.ln_u()) }
    }

    pub fn in_k(&self, pt: Point) -> bool {
        pt.inside_box(self.k_half)
    }

    pub fn in_kp(&self, pt: Point) -> bool {
        let h = SignedLogReal::from_f64(self.kp_half);
        pt.s.abs() <= h && pt.u.abs() <= h
    }
}

/// Coefficients of the fold `(s, u) ↦ (a11 s + a12 u, a21 s + q u²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FoldCoeffs {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub q: f64,
}

impl Default for FoldCoeffs {
    fn default() -> Self {
        Self { a11: 0.3, a12: 1.0, a21: -1.0, q: 2.0 }
    }
}

impl FoldCoeffs {
    /// `|q| / a12²`, the constant in `|π^u| <= C |π^s|²` for vertical segments.
    pub fn quadratic_constant(&self) -> f64 {
        self.q.abs() / (self.a12 * self.a12)
    }
}

/// Half-side of the box around the source anchor on which a fold is defined.
pub const FOLD_DOMAIN_HALF: f64 = 0.05;

#[derive(Clone, Debug, PartialEq)]
pub struct FoldMap {
    pub k: u64,
    pub coeffs: FoldCoeffs,
    pub source_anchor: Point,
    pub target_anchor: Point,
}

impl FoldMap {
    fn check_domain(&self, off: Point) -> Result<()> {
        let h = SignedLogReal::from_f64(FOLD_DOMAIN_HALF);
        if off.s.abs() > h || off.u.abs() > h {
            return Err(Error::Domain(format!("offset {off:?} outside the domain box of fold {}", self.k)));
        }
        Ok(())
    }

    /// Image of an offset from the source anchor, as an offset from the target.
    pub fn apply_offset(&self, off: Point) -> Result<Point> {
        self.check_domain(off)?;
        let c = &self.coeffs;
        let f = SignedLogReal::from_f64;
        Ok(Point { s: f(c.a11) * off.s + f(c.a12) * off.u, u: f(c.a21) * off.s + f(c.q) * off.u * off.u })
    }

    pub fn apply(&self, pt: Point) -> Result<Point> {
        let off = self.apply_offset(pt - self.source_anchor)?;
        Ok(self.target_anchor + off)
    }

    /// Derivative `[[a11, a12], [a21, 2 q u]]` at an offset from the source anchor.
    pub fn jacobian_at_offset(&self, off: Point) -> Result<Jacobian2> {
        self.check_domain(off)?;
        let c = &self.coeffs;
        let f = SignedLogReal::from_f64;
        Ok(Jacobian2::new([[f(c.a11), f(c.a12)], [f(c.a21), f(2.0 * c.q) * off.u]]))
    }

    pub fn jacobian(&self, pt: Point) -> Result<Jacobian2> {
        self.jacobian_at_offset(pt - self.source_anchor)
    }

    /// Frobenius bound on `‖DT‖` over the domain box.
    pub fn operator_norm_bound(&self) -> f64 {
        let c = &self.coeffs;
        let d22 = 2.0 * c.q.abs() * FOLD_DOMAIN_HALF;
        (c.a11 * c.a11 + c.a12 * c.a12 + c.a21 * c.a21 + d22 * d22).sqrt()
    }

    /// Smallest `|det DT|` over the domain box.
    pub fn min_abs_det(&self) -> f64 {
        let c = &self.coeffs;
        // det = 2 q u a11 − a12 a21, affine in u: extremes at the box edges
        [-FOLD_DOMAIN_HALF, FOLD_DOMAIN_HALF]
            .iter()
            .map(|u| (2.0 * c.q * u * c.a11 - c.a12 * c.a21).abs())
            .fold(f64::INFINITY, f64::min)
    }
}

/// Anchor orbit on `k_lo..=k_hi`: `ζ_k = (0.1, 0.5 λ_u^{-n^H_k})` and
/// `ζ′_{k+1} = (0.1 λ_s^{n^H_k}, 0.5)`.
#[derive(Clone, Debug, PartialEq)]
pub struct AnchorOrbit {
    pub k_lo: u64,
    pub zeta: Vec<Point>,
    pub zeta_prime: Vec<Point>,
}

pub const ANCHOR_S: f64 = 0.1;
pub const ANCHOR_U: f64 = 0.5;

impl AnchorOrbit {
    pub fn k_hi(&self) -> u64 {
        self.k_lo + self.zeta.len() as u64 - 1
    }

    fn idx(&self, k: u64) -> Result<usize> {
        if k < self.k_lo || k > self.k_hi() {
            return Err(Error::OutOfRange { k: k as usize, max: self.k_hi() as usize });
        }
        Ok((k - self.k_lo) as usize)
    }

    pub fn zeta(&self, k: u64) -> Result<Point> {
        Ok(self.zeta[self.idx(k)?])
    }

    /// `ζ′_{k+1} = f^{n^H_k}(ζ_k)`.
    pub fn zeta_prime(&self, k: u64) -> Result<Point> {
        Ok(self.zeta_prime[self.idx(k)?])
    }
}

pub fn place_anchors(table: &SequenceTable, chart: &SaddleChart, k_lo: u64, k_hi: u64) -> Result<AnchorOrbit> {
    if k_hi < k_lo {
        return Err(Error::Config("empty anchor range".into()));
    }
    let mut zeta = Vec::new();
    let mut zeta_prime = Vec::new();
    for k in k_lo..=k_hi {
        let n = table.nh(k)?;
        let z = Point::new(
            SignedLogReal::from_f64(ANCHOR_S),
            SignedLogReal::from_f64(ANCHOR_U).scale_log(-(n as f64) * chart.ln_u()),
        );
        let zp = chart.apply_hyperbolic(z, n);
        // the hyperbolic segment is monotone in j, so its ends bound every iterate
        if !chart.in_kp(z) || !chart.in_kp(zp) {
            return Err(Error::Config(format!("anchor orbit leaves K' at k = {k}")));
        }
        zeta.push(z);
        zeta_prime.push(zp);
    }
    Ok(AnchorOrbit { k_lo, zeta, zeta_prime })
}

/// How fold coefficients vary with `k`.
#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct FoldConfig {
    #[serde(default)]
    pub coeffs: FoldCoeffs,
    /// When set, each coefficient of each fold is scaled by a factor drawn
    /// uniformly from `[0.9, 1.1]` with this seed.
    #[serde(default)]
    pub randomize_seed: Option<u64>,
}

/// Chart, folds and anchors for returns `k0..=k_hi`.
#[derive(Clone, Debug)]
pub struct Model {
    pub params: Params,
    pub table: SequenceTable,
    pub chart: SaddleChart,
    pub anchors: AnchorOrbit,
    pub folds: Vec<FoldMap>,
    pub k0: u64,
    pub xi: f64,
}

/// Extra returns assembled past the requested horizon.
pub const MODEL_SLACK: u64 = 12;

impl Model {
    /// Assembles the model for `k0..=k0 + horizon + MODEL_SLACK`. `p` must
    /// carry `k0` and `xi`.
    pub fn assemble(p: &Params, horizon: u64, fold: &FoldConfig) -> Result<Model> {
        p.validate()?;
        let (k0, xi) = p.require_k0_xi()?;
        let chart = SaddleChart::new(p.lambda_s, p.lambda_u)?;
        let k_hi = k0 + horizon + MODEL_SLACK;
        let mut tp = p.clone();
        if tp.beta_prime.is_none() {
            tp.beta_prime = crate::parameters::admissible_beta_prime_interval(p).ok().map(|(lo, hi)| 0.5 * (lo + hi));
        }
        let table = SequenceTable::build(&tp, k_hi + 1, crate::sequences::DEFAULT_TOL_LOG)?;
        let anchors = place_anchors(&table, &chart, k0, k_hi + 1)?;
        let mut rng = fold.randomize_seed.map(ChaCha8Rng::seed_from_u64);
        let mut folds = Vec::new();
        for k in k0..=k_hi {
            let mut c = fold.coeffs;
            if let Some(rng) = rng.as_mut() {
                for x in [&mut c.a11, &mut c.a12, &mut c.a21, &mut c.q] {
                    *x *= rng.gen_range(0.9..=1.1);
                }
            }
            folds.push(FoldMap {
                k,
                coeffs: c,
                source_anchor: anchors.zeta_prime(k)?,
                target_anchor: anchors.zeta(k + 1)?,
            });
        }
        let model = Model { params: tp, table, chart, anchors, folds, k0, xi };
        model.check_folds()?;
        Ok(model)
    }

    pub fn k_hi(&self) -> u64 {
        self.k0 + self.folds.len() as u64 - 1
    }

    pub fn fold(&self, k: u64) -> Result<&FoldMap> {
        if k < self.k0 || k > self.k_hi() {
            return Err(Error::OutOfRange { k: k as usize, max: self.k_hi() as usize });
        }
        Ok(&self.folds[(k - self.k0) as usize])
    }

    /// Fold invariants and the `Λ1` bounds on every assembled fold.
    pub fn check_folds(&self) -> Result<()> {
        let ll1 = self.params.lambda1.ln();
        for f in &self.folds {
            let c = &f.coeffs;
            if c.a12 * c.a21 == 0.0 || c.q == 0.0 {
                return Err(Error::Model(format!("fold {} is degenerate", f.k)));
            }
            if c.quadratic_constant() > self.params.c_t {
                return Err(Error::Model(format!(
                    "fold {}: |q|/a12^2 = {} exceeds C_T = {}",
                    f.k,
                    c.quadratic_constant(),
                    self.params.c_t
                )));
            }
            if (c.a12 * c.a21).abs() <= (c.a11 * 2.0 * c.q * FOLD_DOMAIN_HALF).abs() {
                return Err(Error::Model(format!("fold {} is not locally invertible", f.k)));
            }
            let nt = self.table.nt(f.k)? as f64;
            let max_a = c.a11.abs().max(c.a12.abs()).max(c.a21.abs());
            let min_a = c.a12.abs().min(c.a21.abs());
            if max_a.ln() > nt * ll1 - 2f64.ln() || min_a.ln() < 2f64.ln() - nt * ll1 {
                return Err(Error::Model(format!("fold {}: coefficients exceed the Lambda1 bounds", f.k)));
            }
            if 2.0 * c.q.abs() > self.params.lambda1.powf(nt) {
                return Err(Error::Model(format!("fold {}: curvature exceeds Lambda1^nT", f.k)));
            }
        }
        Ok(())
    }

    /// `ln` of the model stand-in for `Λ^{n^T_k}`: the larger of `λ_u^{n^T_k}`
    /// and the fold's operator-norm bound.
    pub fn log_model_lambda_pow(&self, k: u64) -> Result<f64> {
        let nt = self.table.nt(k)? as f64;
        Ok((nt * self.chart.ln_u()).max(self.fold(k)?.operator_norm_bound().ln()))
    }

    /// Largest fold operator-norm bound; `Λ1` must dominate it.
    pub fn max_fold_norm(&self) -> f64 {
        self.folds.iter().map(FoldMap::operator_norm_bound).fold(0.0, f64::max)
    }

    /// Offset from `ζ′_{k+1}` after the `n^H_k` hyperbolic steps.
    pub fn hyperbolic_offset(&self, k: u64, off: Point) -> Result<Point> {
        Ok(self.chart.apply_hyperbolic(off, self.table.nh(k)?))
    }

    /// Offset from `ζ_{k+1}` after the full return `f^{n_k}`.
    pub fn return_offset(&self, k: u64, off: Point) -> Result<Point> {
        self.fold(k)?.apply_offset(self.hyperbolic_offset(k, off)?)
    }

    /// `ζ_k + off`.
    pub fn absolute(&self, k: u64, off: Point) -> Result<Point> {
        Ok(self.anchors.zeta(k)? + off)
    }

    /// One record per phase of each return, starting at offset `off` from `ζ_{k}`.
    pub fn orbit_records(&self, k: u64, off: Point, returns: u64) -> Result<Vec<OrbitRecord>> {
        let mut out = Vec::new();
        let mut off = off;
        for k in k..k + returns {
            let h = self.hyperbolic_offset(k, off)?;
            let hp = self.anchors.zeta_prime(k)? + h;
            out.push(OrbitRecord { k, point_s_log: hp.s, point_u_log: hp.u, phase: "hyperbolic" });
            off = self.fold(k)?.apply_offset(h)?;
            let abs = self.absolute(k + 1, off)?;
            if !self.chart.in_k(abs) {
                return Err(Error::Model(format!("orbit leaves K after return {k}")));
            }
            out.push(OrbitRecord { k, point_s_log: abs.s, point_u_log: abs.u, phase: "fold" });
        }
        Ok(out)
    }
}

/// One line of an orbit dump. Coordinates are signed log reals.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OrbitRecord {
    pub k: u64,
    pub point_s_log: SignedLogReal,
    pub point_u_log: SignedLogReal,
    pub phase: &'static str,
}

pub fn write_orbit_ndjson<W: std::io::Write>(mut w: W, records: &[OrbitRecord]) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

/// A bounded observable on the chart.
pub trait Observable: Sync {
    fn eval(&self, s: f64, u: f64) -> f64;
    /// Modulus of continuity: `|φ(x) − φ(y)| <= modulus(‖x − y‖)`.
    fn modulus(&self, delta: f64) -> f64;
}

pub struct Constant(pub f64);

impl Observable for Constant {
    fn eval(&self, _: f64, _: f64) -> f64 {
        self.0
    }
    fn modulus(&self, _: f64) -> f64 {
        0.0
    }
}

/// Euclidean distance to the saddle at the origin.
pub struct DistanceToSaddle;

impl Observable for DistanceToSaddle {
    fn eval(&self, s: f64, u: f64) -> f64 {
        s.hypot(u)
    }
    fn modulus(&self, delta: f64) -> f64 {
        delta
    }
}

pub struct SCoordinate;

impl Observable for SCoordinate {
    fn eval(&self, s: f64, _: f64) -> f64 {
        s
    }
    fn modulus(&self, delta: f64) -> f64 {
        delta
    }
}

/// Time average of `obs` over `n` steps of the orbit starting at offset `off`
/// from `ζ_{k0}`. Each fold counts as `n^T_k` steps, all evaluated at the
/// fold's target anchor.
pub fn birkhoff_average(model: &Model, obs: &dyn Observable, off: Point, n: u64) -> Result<f64> {
    if n == 0 {
        return Err(Error::Domain("need at least one step".into()));
    }
    let chart = &model.chart;
    let mut sum = 0.0;
    let mut left = n;
    let mut k = model.k0;
    let mut off = off;
    while left > 0 {
        let nh = model.table.nh(k)?;
        let zeta = model.anchors.zeta(k)?;
        for j in 0..nh.min(left) {
            let p = chart.apply_hyperbolic(zeta, j) + chart.apply_hyperbolic(off, j);
            if !chart.in_k(p) {
                return Err(Error::Model(format!("orbit leaves K at return {k}, step {j}")));
            }
            let (s, u) = p.to_f64();
            sum += obs.eval(s, u);
        }
        left -= nh.min(left);
        if left == 0 {
            break;
        }
        off = model.return_offset(k, off)?;
        let target = model.anchors.zeta(k + 1)?;
        let (s, u) = target.to_f64();
        let nt = model.table.nt(k)?.min(left);
        sum += nt as f64 * obs.eval(s, u);
        left -= nt;
        k += 1;
    }
    Ok(sum / n as f64)
}
