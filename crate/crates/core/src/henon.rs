//! The quadratic limit family `φ(x, y) = (y, y² + ν x + μ)` of the
//! renormalized returns, its saddle, and the Hénon map `f_{a,b}`.
//!
//! Everything here is `O(10)`, so plain `f64` is enough.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::{fmt17, ser17, write_csv};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RenormParams {
    pub mu: f64,
    pub nu: f64,
}

impl RenormParams {
    pub fn new(mu: f64, nu: f64) -> Self {
        Self { mu, nu }
    }
}

pub fn renorm_apply(rp: RenormParams, pt: (f64, f64)) -> (f64, f64) {
    let (x, y) = pt;
    (y, y * y + rp.nu * x + rp.mu)
}

/// `Dφ = [[0, 1], [ν, 2y]]`.
pub fn renorm_jacobian(rp: RenormParams, pt: (f64, f64)) -> [[f64; 2]; 2] {
    [[0.0, 1.0], [rp.nu, 2.0 * pt.1]]
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct SaddleData {
    /// The fixed point is `(y, y)`.
    pub y: f64,
    pub lam_s: f64,
    pub lam_u: f64,
    /// `|λ_s| |λ_u|³ < 1`.
    pub strongly_dissipative: bool,
    /// `λ_s λ_u³ < 1` with signs kept.
    pub strongly_dissipative_signed: bool,
}

impl SaddleData {
    pub fn dissipation(&self) -> f64 {
        self.lam_s.abs() * self.lam_u.abs().powi(3)
    }
}

/// Fixed point `(y, y)` with `y = (1 − ν + √((1−ν)² − 4μ))/2` and the
/// eigenvalues `y ∓ √(y² + ν)`.
pub fn saddle_data(rp: RenormParams) -> Result<SaddleData> {
    let disc = (1.0 - rp.nu).powi(2) - 4.0 * rp.mu;
    if !(disc >= 0.0) {
        return Err(Error::Domain(format!("no real fixed point at mu = {}, nu = {}", rp.mu, rp.nu)));
    }
    let y = (1.0 - rp.nu + disc.sqrt()) / 2.0;
    let d2 = y * y + rp.nu;
    if !(d2 >= 0.0) {
        return Err(Error::Domain(format!("complex eigenvalues at mu = {}, nu = {}", rp.mu, rp.nu)));
    }
    let root = d2.sqrt();
    let lam_u = y + root;
    // y − √(y² + ν) written as −ν/λ_u to avoid cancellation near ν = 0
    let lam_s = if lam_u != 0.0 && y > 0.0 { -rp.nu / lam_u } else { y - root };
    Ok(SaddleData {
        y,
        lam_s,
        lam_u,
        strongly_dissipative: lam_s.abs() * lam_u.abs().powi(3) < 1.0,
        strongly_dissipative_signed: lam_s * lam_u.powi(3) < 1.0,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct RegionPoint {
    #[serde(serialize_with = "ser17")]
    pub mu: f64,
    #[serde(serialize_with = "ser17")]
    pub nu: f64,
    #[serde(serialize_with = "ser17")]
    pub lam_s: f64,
    #[serde(serialize_with = "ser17")]
    pub lam_u: f64,
    pub dissipative: bool,
    pub dissipative_signed: bool,
    /// In the 4-connected dissipative component of the center.
    pub in_component: bool,
    #[serde(serialize_with = "ser17")]
    pub dist: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RegionReport {
    pub center: RenormParams,
    #[serde(serialize_with = "ser17")]
    pub radius: f64,
    pub grid_n: usize,
    pub low_resolution: bool,
    /// Largest grid distance `d <= radius` such that every grid point within
    /// `d` of the center is strongly dissipative.
    #[serde(serialize_with = "ser17")]
    pub r_star: f64,
    pub all_dissipative: bool,
    pub component_size: usize,
    /// Grid points inside the disk, row major in `(μ, ν)`.
    #[serde(skip)]
    pub points: Vec<RegionPoint>,
}

/// Scans a `grid_n × grid_n` lattice on the square around `center`, keeping the
/// points of the closed disk of radius `radius`.
pub fn scan_dissipative_region(center: RenormParams, radius: f64, grid_n: usize) -> Result<RegionReport> {
    if grid_n < 3 {
        return Err(Error::Domain(format!("grid_n = {grid_n}, need at least 3")));
    }
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::Domain("radius must be positive".into()));
    }
    let step = 2.0 * radius / (grid_n - 1) as f64;
    let coord = |i: usize| -radius + i as f64 * step;
    let cells: Vec<(usize, usize)> = (0..grid_n).flat_map(|i| (0..grid_n).map(move |j| (i, j))).collect();
    let eval: Vec<Option<RegionPoint>> = cells
        .par_iter()
        .map(|&(i, j)| {
            let (dm, dn) = (coord(i), coord(j));
            let dist = dm.hypot(dn);
            // a hair of slack so lattice points on the circle are not lost to rounding
            if dist > radius * (1.0 + 1e-12) {
                return None;
            }
            let rp = RenormParams::new(center.mu + dm, center.nu + dn);
            let (lam_s, lam_u, d, ds) = match saddle_data(rp) {
                Ok(sd) => (sd.lam_s, sd.lam_u, sd.strongly_dissipative, sd.strongly_dissipative_signed),
                Err(_) => (f64::NAN, f64::NAN, false, false),
            };
            Some(RegionPoint {
                mu: rp.mu,
                nu: rp.nu,
                lam_s,
                lam_u,
                dissipative: d,
                dissipative_signed: ds,
                in_component: false,
                dist,
            })
        })
        .collect();

    let mut grid = eval;
    let mid = (grid_n - 1) / 2;
    let idx = |i: usize, j: usize| i * grid_n + j;
    let mut stack = Vec::new();
    if grid[idx(mid, mid)].is_some_and(|p| p.dissipative) {
        stack.push((mid, mid));
    }
    while let Some((i, j)) = stack.pop() {
        let Some(p) = grid[idx(i, j)].as_mut() else { continue };
        if p.in_component || !p.dissipative {
            continue;
        }
        p.in_component = true;
        if i > 0 {
            stack.push((i - 1, j));
        }
        if j > 0 {
            stack.push((i, j - 1));
        }
        if i + 1 < grid_n {
            stack.push((i + 1, j));
        }
        if j + 1 < grid_n {
            stack.push((i, j + 1));
        }
    }
    let points: Vec<RegionPoint> = grid.into_iter().flatten().collect();

    let first_bad = points.iter().filter(|p| !p.dissipative).map(|p| p.dist).fold(f64::INFINITY, f64::min);
    let r_star = if first_bad.is_finite() {
        points.iter().filter(|p| p.dist < first_bad).map(|p| p.dist).fold(0.0, f64::max)
    } else {
        radius
    };
    Ok(RegionReport {
        center,
        radius,
        grid_n,
        low_resolution: grid_n < 5,
        r_star,
        all_dissipative: !first_bad.is_finite(),
        component_size: points.iter().filter(|p| p.in_component).count(),
        points,
    })
}

/// CSV with columns `mu, nu, lam_s, lam_u, dissipative, dissipative_signed`.
pub fn write_region_csv<W: Write>(w: W, r: &RegionReport) -> Result<()> {
    let rows = r.points.iter().map(|p| {
        vec![
            fmt17(p.mu),
            fmt17(p.nu),
            fmt17(p.lam_s),
            fmt17(p.lam_u),
            p.dissipative.to_string(),
            p.dissipative_signed.to_string(),
        ]
    });
    write_csv(w, &["mu", "nu", "lam_s", "lam_u", "dissipative", "dissipative_signed"], rows)
}

/// `f_{a,b}(x, y) = (1 − a x² + b y, x)`.
pub fn henon_apply(a: f64, b: f64, pt: (f64, f64)) -> (f64, f64) {
    let (x, y) = pt;
    (1.0 - a * x * x + b * y, x)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct HenonOrbit {
    pub point: (f64, f64),
    pub steps: u64,
    pub escaped: bool,
}

pub const ESCAPE_RADIUS: f64 = 1e6;

/// `n` steps of `f_{a,b}`, stopping early once `|x| + |y| > 10⁶`.
pub fn henon_iterate(a: f64, b: f64, pt: (f64, f64), n: u64) -> HenonOrbit {
    let mut p = pt;
    for i in 0..n {
        p = henon_apply(a, b, p);
        if !(p.0.abs() + p.1.abs() <= ESCAPE_RADIUS) {
            return HenonOrbit { point: p, steps: i + 1, escaped: true };
        }
    }
    HenonOrbit { point: p, steps: n, escaped: false }
}

/// Fixed points `(x, x)` of `f_{a,b}`: roots of `a x² + (1 − b) x − 1 = 0`.
pub fn henon_fixed_points(a: f64, b: f64) -> Vec<(f64, f64)> {
    if a == 0.0 {
        return if b == 1.0 { Vec::new() } else { vec![(1.0 / (1.0 - b), 1.0 / (1.0 - b))] };
    }
    let disc = (1.0 - b).powi(2) + 4.0 * a;
    if disc < 0.0 {
        return Vec::new();
    }
    let r = disc.sqrt();
    [(-(1.0 - b) + r) / (2.0 * a), (-(1.0 - b) - r) / (2.0 * a)].iter().map(|x| (*x, *x)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn fixed_point_at_the_tip() {
        assert_eq!(renorm_apply(RenormParams::new(-2.0, 0.0), (2.0, 2.0)), (2.0, 2.0));
        assert_eq!(renorm_apply(RenormParams::new(0.0, 0.0), (0.0, 0.0)), (0.0, 0.0));
        let sd = saddle_data(RenormParams::new(-2.0, 0.0)).unwrap();
        assert_eq!((sd.y, sd.lam_s, sd.lam_u), (2.0, 0.0, 4.0));
        assert!(sd.strongly_dissipative);
    }

    #[test]
    fn nearby_saddle() {
        let rp = RenormParams::new(-2.0, 0.01);
        let sd = saddle_data(rp).unwrap();
        assert!((sd.y - 1.99335).abs() < 1e-5);
        assert!((sd.lam_u - 3.98921).abs() < 1e-4);
        assert!((sd.lam_s + 0.00251).abs() < 1e-5);
        assert!((sd.dissipation() - 0.159).abs() < 1e-3);
        let img = renorm_apply(rp, (sd.y, sd.y));
        assert!((img.0 - sd.y).abs() < 1e-10 && (img.1 - sd.y).abs() < 1e-10);
    }

    #[test]
    fn no_fixed_point() {
        assert!(matches!(saddle_data(RenormParams::new(1.0, 0.0)), Err(Error::Domain(_))));
    }

    #[test]
    fn jacobian_eigenvalues_match() {
        for (mu, nu) in [(-2.0, 0.01), (-1.9, -0.05), (-2.1, 0.1)] {
            let rp = RenormParams::new(mu, nu);
            let sd = saddle_data(rp).unwrap();
            let j = renorm_jacobian(rp, (sd.y, sd.y));
            let tr = j[0][0] + j[1][1];
            let det = j[0][0] * j[1][1] - j[0][1] * j[1][0];
            let r = (tr * tr / 4.0 - det).sqrt();
            let (e1, e2) = (tr / 2.0 - r, tr / 2.0 + r);
            assert!((e1 - sd.lam_s).abs() < 1e-10 && (e2 - sd.lam_u).abs() < 1e-10);
        }
    }

    #[test]
    fn dissipation_fails_further_out() {
        let sd = saddle_data(RenormParams::new(-2.0, 0.1)).unwrap();
        assert!((sd.dissipation() - 1.516_203_640_666_4).abs() < 1e-9);
        assert!(sd.strongly_dissipative_signed);
        assert!(!sd.strongly_dissipative);
    }

    #[test]
    fn small_disk_is_dissipative() {
        let r = scan_dissipative_region(RenormParams::new(-2.0, 0.0), 0.005, 41).unwrap();
        assert!(r.all_dissipative);
        assert_eq!(r.r_star, 0.005);
        assert_eq!(r.component_size, r.points.len());
        assert!(!r.low_resolution);
    }

    #[test]
    fn large_disk_is_partial() {
        let r = scan_dissipative_region(RenormParams::new(-2.0, 0.0), 0.2, 41).unwrap();
        assert!(!r.all_dissipative);
        assert!(r.r_star > 0.0 && r.r_star < 0.2);
        assert!(r.component_size < r.points.len());
        for p in &r.points {
            if p.dist <= r.r_star {
                assert!(p.dissipative);
            }
        }
    }

    #[test]
    fn coarse_grids() {
        let r = scan_dissipative_region(RenormParams::new(-2.0, 0.0), 0.005, 3).unwrap();
        assert!(r.low_resolution);
        assert_eq!(r.points.len(), 5);
        assert!(scan_dissipative_region(RenormParams::new(-2.0, 0.0), 0.005, 2).is_err());
        let mut buf = Vec::new();
        write_region_csv(&mut buf, &r).unwrap();
        assert!(String::from_utf8(buf).unwrap().starts_with("mu,nu,lam_s,lam_u,dissipative"));
    }

    #[test]
    fn henon_basics() {
        let p = (0.3, -0.7);
        assert_eq!(henon_iterate(1.4, 0.3, p, 0).point, p);
        assert_eq!(henon_iterate(0.0, 0.0, (5.0, 9.0), 1).point, (1.0, 5.0));
        let fp = henon_fixed_points(0.3, 0.3)[0];
        let orbit = henon_iterate(0.3, 0.3, (0.5, 0.5), 500);
        assert!(!orbit.escaped);
        assert!((orbit.point.0 - fp.0).abs() < 1e-8 && (orbit.point.1 - fp.1).abs() < 1e-8);
        let out = henon_iterate(2.0, 0.0, (10.0, 0.0), 100);
        assert!(out.escaped && out.steps < 100);
    }

    proptest! {
        #[test]
        fn eigenvalue_identities(dm in -0.05f64..0.05, dn in -0.05f64..0.05) {
            let rp = RenormParams::new(-2.0 + dm, dn);
            let sd = saddle_data(rp).unwrap();
            prop_assert!((sd.lam_s * sd.lam_u + rp.nu).abs() < 1e-12);
            prop_assert!((sd.lam_s + sd.lam_u - 2.0 * sd.y).abs() < 1e-12);
        }
    }
}
