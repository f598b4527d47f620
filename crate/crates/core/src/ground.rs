//! Road point filtering and smooth ground surfaces.
//!
//! The ground is a height field z = S(x, y) represented as a tensor-product
//! B-spline (a NURBS with unit weights) over an axis-aligned domain. Control
//! points sit at the Greville abscissae, which makes the map from parameters
//! to (x, y) affine, so queries never need surface-point inversion.

use std::collections::HashMap;

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geodesy::LocalPoint;
use crate::mesh::{ray_intersect, TriangleMesh};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GroundError {
    #[error("empty point cloud")]
    EmptyInput,
    #[error("non-finite coordinate in input point {0}")]
    NonFinite(usize),
    #[error(
        "no road points left after filtering ({input} input, {after_height} after height band, \
         {after_slope} after slope test, {after_outliers} after outlier removal)"
    )]
    NoRoadPoints {
        input: usize,
        after_height: usize,
        after_slope: usize,
        after_outliers: usize,
    },
    #[error("need at least {needed} points to fit the surface, got {got}")]
    TooFewPoints { needed: usize, got: usize },
    #[error("points do not span a 2D domain in x/y")]
    DegenerateDomain,
    #[error("normal equations are not positive definite")]
    Singular,
    #[error("query ({x}, {y}) is outside the surface domain")]
    OutOfDomain { x: f64, y: f64 },
    #[error("invalid surface: {0}")]
    InvalidSurface(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RoadFilterConfig {
    /// Grid cell edge in meters.
    pub cell_size: f64,
    /// Per-cell height quantile used as the ground reference.
    pub quantile: f64,
    /// Maximum accepted slope (rise over run) of a cell's local plane.
    pub max_slope: f64,
    /// Extra height tolerance around the cell reference, meters.
    pub height_margin: f64,
    pub outlier_neighbors: usize,
    pub outlier_std_ratio: f64,
    /// Floor on the robust residual spread, meters.
    pub outlier_min_sigma: f64,
}

impl Default for RoadFilterConfig {
    fn default() -> Self {
        Self {
            cell_size: 0.5,
            quantile: 0.1,
            max_slope: 0.25,
            height_margin: 0.05,
            outlier_neighbors: 16,
            outlier_std_ratio: 2.0,
            outlier_min_sigma: 0.05,
        }
    }
}

impl RoadFilterConfig {
    pub fn validate(&self) -> Result<(), GroundError> {
        let bad = |m: &str| Err(GroundError::BadConfig(m.to_string()));
        if !(self.cell_size > 0.0) {
            return bad("cell_size must be positive");
        }
        if !(0.0..=1.0).contains(&self.quantile) {
            return bad("quantile must be in [0, 1]");
        }
        if !(self.max_slope > 0.0) || !(self.height_margin >= 0.0) {
            return bad("max_slope must be positive and height_margin non-negative");
        }
        if self.outlier_neighbors < 3 || !(self.outlier_std_ratio > 0.0) {
            return bad("outlier removal needs at least 3 neighbors and a positive ratio");
        }
        Ok(())
    }
}

type CellKey = (i64, i64);

fn cell_of(p: &LocalPoint, size: f64) -> CellKey {
    ((p.x / size).floor() as i64, (p.y / size).floor() as i64)
}

/// Least-squares plane z = a + b·(x − x̄) + c·(y − ȳ). Returns (b, c, mean)
/// or `None` when the points do not span two dimensions in x/y.
fn fit_plane<'a>(
    points: impl Iterator<Item = &'a LocalPoint> + Clone,
    min_spread: f64,
) -> Option<(f64, f64, Point3<f64>)> {
    let mut n = 0.0;
    let mut mean = Vector3::zeros();
    for p in points.clone() {
        mean += p.coords;
        n += 1.0;
    }
    if n < 3.0 {
        return None;
    }
    mean /= n;
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for p in points {
        let d = p.coords - mean;
        sxx += d.x * d.x;
        sxy += d.x * d.y;
        syy += d.y * d.y;
        sxz += d.x * d.z;
        syz += d.y * d.z;
    }
    let tr = (sxx + syy) / n;
    let det = (sxx * syy - sxy * sxy) / (n * n);
    let disc = (tr * tr / 4.0 - det).max(0.0).sqrt();
    let min_eig = tr / 2.0 - disc;
    if min_eig < min_spread * min_spread {
        return None;
    }
    let det = sxx * syy - sxy * sxy;
    let b = (syy * sxz - sxy * syz) / det;
    let c = (sxx * syz - sxy * sxz) / det;
    Some((b, c, Point3::from(mean)))
}

fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    quantile_sorted(values, 0.5)
}

/// Geometric road filter.
///
/// 1. Grid the x/y plane; in every cell keep points within a height band
///    around the cell's low quantile (removes facades, vegetation, clutter
///    above the road).
/// 2. Fit a plane to each cell's survivors and reject cells steeper than
///    `max_slope`. Cells whose survivors are degenerate in x/y (e.g. a thin
///    wall strip) are judged on their 3×3 neighborhood.
/// 3. Statistical outlier removal: residual of each point against a plane
///    through its k nearest x/y neighbors, thresholded at a multiple of the
///    robust residual spread.
///
/// Survivors are returned in input order.
pub fn filter_road_points(points: &[LocalPoint], cfg: &RoadFilterConfig) -> Result<Vec<LocalPoint>, GroundError> {
    cfg.validate()?;
    if points.is_empty() {
        return Err(GroundError::EmptyInput);
    }
    if let Some(i) = points.iter().position(|p| !p.coords.iter().all(|c| c.is_finite())) {
        return Err(GroundError::NonFinite(i));
    }
    let cs = cfg.cell_size;
    let mut cells: HashMap<CellKey, Vec<usize>> = HashMap::new();
    for (i, p) in points.iter().enumerate() {
        cells.entry(cell_of(p, cs)).or_default().push(i);
    }

    let band = cfg.max_slope * cs * std::f64::consts::SQRT_2 + cfg.height_margin;
    let mut banded: HashMap<CellKey, Vec<usize>> = HashMap::with_capacity(cells.len());
    for (key, idx) in &cells {
        let mut zs: Vec<f64> = idx.iter().map(|&i| points[i].z).collect();
        zs.sort_by(f64::total_cmp);
        let reference = quantile_sorted(&zs, cfg.quantile);
        let kept: Vec<usize> = idx
            .iter()
            .copied()
            .filter(|&i| (points[i].z - reference).abs() <= band)
            .collect();
        banded.insert(*key, kept);
    }
    let after_height: usize = banded.values().map(Vec::len).sum();

    let min_spread = 0.05 * cs;
    let mut keep = vec![false; points.len()];
    for (key, idx) in &banded {
        let accepted = match fit_plane(idx.iter().map(|&i| &points[i]), min_spread) {
            Some((b, c, _)) => b.hypot(c) <= cfg.max_slope,
            None => {
                // Degenerate cell (a thin strip such as a wall foot): judge it
                // against the plane of its neighbors.
                let mut hood = Vec::new();
                for di in -1..=1 {
                    for dj in -1..=1 {
                        if (di, dj) == (0, 0) {
                            continue;
                        }
                        if let Some(v) = banded.get(&(key.0 + di, key.1 + dj)) {
                            hood.extend(v.iter().map(|&i| points[i]));
                        }
                    }
                }
                match fit_plane(hood.iter(), min_spread) {
                    Some((b, c, m)) => {
                        b.hypot(c) <= cfg.max_slope
                            && idx.iter().all(|&i| {
                                let p = &points[i];
                                (p.z - (m.z + b * (p.x - m.x) + c * (p.y - m.y))).abs() <= band
                            })
                    }
                    None => false,
                }
            }
        };
        if accepted {
            for &i in idx {
                keep[i] = true;
            }
        }
    }
    let survivors: Vec<usize> = (0..points.len()).filter(|&i| keep[i]).collect();
    let after_slope = survivors.len();

    let survivors = remove_statistical_outliers(points, &survivors, cfg);
    log::debug!(
        "road filter: {} -> {} (height) -> {} (slope) -> {} (outliers)",
        points.len(),
        after_height,
        after_slope,
        survivors.len()
    );
    if survivors.is_empty() {
        return Err(GroundError::NoRoadPoints {
            input: points.len(),
            after_height,
            after_slope,
            after_outliers: 0,
        });
    }
    Ok(survivors.into_iter().map(|i| points[i]).collect())
}

fn remove_statistical_outliers(points: &[LocalPoint], idx: &[usize], cfg: &RoadFilterConfig) -> Vec<usize> {
    let k = cfg.outlier_neighbors.min(idx.len().saturating_sub(1));
    if k < 3 {
        return idx.to_vec();
    }
    let grid = XyGrid::new(points, idx, cfg.cell_size);
    let residuals: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let nn = grid.nearest(points, &points[i], k, i);
            let p = &points[i];
            match fit_plane(nn.iter().map(|&j| &points[j]), 1e-6) {
                Some((b, c, m)) => p.z - (m.z + b * (p.x - m.x) + c * (p.y - m.y)),
                None => {
                    let mut zs: Vec<f64> = nn.iter().map(|&j| points[j].z).collect();
                    p.z - median(&mut zs)
                }
            }
        })
        .collect();
    let mut sorted = residuals.clone();
    let center = median(&mut sorted);
    let mut dev: Vec<f64> = residuals.iter().map(|r| (r - center).abs()).collect();
    let sigma = (1.4826 * median(&mut dev)).max(cfg.outlier_min_sigma);
    let limit = cfg.outlier_std_ratio * sigma;
    idx.iter()
        .zip(&residuals)
        .filter(|(_, r)| (*r - center).abs() <= limit)
        .map(|(&i, _)| i)
        .collect()
}

/// Bucket grid for k-nearest-neighbor queries in the x/y plane.
struct XyGrid {
    size: f64,
    lo: CellKey,
    dims: (i64, i64),
    cells: Vec<Vec<usize>>,
    max_ring: i64,
}

impl XyGrid {
    fn new(points: &[LocalPoint], idx: &[usize], size: f64) -> Self {
        let (mut lo, mut hi) = ((i64::MAX, i64::MAX), (i64::MIN, i64::MIN));
        for &i in idx {
            let c = cell_of(&points[i], size);
            lo = (lo.0.min(c.0), lo.1.min(c.1));
            hi = (hi.0.max(c.0), hi.1.max(c.1));
        }
        let dims = (hi.0 - lo.0 + 1, hi.1 - lo.1 + 1);
        let mut cells = vec![Vec::new(); (dims.0 * dims.1).max(0) as usize];
        for &i in idx {
            let c = cell_of(&points[i], size);
            cells[((c.0 - lo.0) * dims.1 + (c.1 - lo.1)) as usize].push(i);
        }
        Self {
            size,
            lo,
            dims,
            cells,
            max_ring: dims.0.max(dims.1),
        }
    }

    fn bucket(&self, c: CellKey) -> Option<&[usize]> {
        let (i, j) = (c.0 - self.lo.0, c.1 - self.lo.1);
        if i < 0 || j < 0 || i >= self.dims.0 || j >= self.dims.1 {
            return None;
        }
        Some(&self.cells[(i * self.dims.1 + j) as usize])
    }

    fn nearest(&self, points: &[LocalPoint], p: &LocalPoint, k: usize, exclude: usize) -> Vec<usize> {
        let c = cell_of(p, self.size);
        let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
        for ring in 0..=self.max_ring {
            for di in -ring..=ring {
                for dj in -ring..=ring {
                    if di.abs() != ring && dj.abs() != ring {
                        continue;
                    }
                    let Some(bucket) = self.bucket((c.0 + di, c.1 + dj)) else {
                        continue;
                    };
                    for &j in bucket {
                        if j == exclude {
                            continue;
                        }
                        let d = (points[j].x - p.x).powi(2) + (points[j].y - p.y).powi(2);
                        if best.len() < k || d < best[k - 1].0 {
                            let pos = best.partition_point(|b| (b.0, b.1) < (d, j));
                            best.insert(pos, (d, j));
                            best.truncate(k);
                        }
                    }
                }
            }
            // Unvisited cells are at least `ring · size` away.
            let reach = ring as f64 * self.size;
            if best.len() == k && best[k - 1].0 <= reach * reach {
                break;
            }
        }
        best.into_iter().map(|(_, j)| j).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GroundFitConfig {
    pub degree: usize,
    /// Approximate control point spacing in meters.
    pub control_spacing: f64,
    /// Weight μ of the thin-plate bending energy.
    pub smoothing_weight: f64,
}

impl Default for GroundFitConfig {
    fn default() -> Self {
        Self {
            degree: 3,
            control_spacing: 2.0,
            smoothing_weight: 0.1,
        }
    }
}

/// Axis-aligned x/y extent of a surface.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Domain {
    pub min_x: f64,
    pub max_x: f64,
    pub min_y: f64,
    pub max_y: f64,
}

impl Domain {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        let tx = 1e-9 * (1.0 + x.abs());
        let ty = 1e-9 * (1.0 + y.abs());
        x >= self.min_x - tx && x <= self.max_x + tx && y >= self.min_y - ty && y <= self.max_y + ty
    }

    fn width(&self) -> f64 {
        self.max_x - self.min_x
    }

    fn height(&self) -> f64 {
        self.max_y - self.min_y
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundQuery {
    pub z: f64,
    /// Upward unit normal.
    pub normal: Vector3<f64>,
}

/// Height and its partial derivatives with respect to x and y.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HeightDerivatives {
    pub z: f64,
    pub zx: f64,
    pub zy: f64,
    pub zxx: f64,
    pub zxy: f64,
    pub zyy: f64,
}

/// Tensor-product NURBS height field. Control points are stored row-major
/// with the x (u) index outermost: `control[i * nv + j]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundSurface {
    degree_u: usize,
    degree_v: usize,
    knots_u: Vec<f64>,
    knots_v: Vec<f64>,
    control: Vec<LocalPoint>,
    weights: Vec<f64>,
    domain: Domain,
}

impl GroundSurface {
    pub fn from_parts(
        degree_u: usize,
        degree_v: usize,
        knots_u: Vec<f64>,
        knots_v: Vec<f64>,
        control: Vec<LocalPoint>,
        weights: Vec<f64>,
        domain: Domain,
    ) -> Result<Self, GroundError> {
        let bad = |m: String| Err(GroundError::InvalidSurface(m));
        if degree_u == 0 || degree_v == 0 {
            return bad("degrees must be at least 1".into());
        }
        for (name, knots, p) in [("u", &knots_u, degree_u), ("v", &knots_v, degree_v)] {
            if knots.len() < 2 * (p + 1) {
                return bad(format!("knot vector {name} too short"));
            }
            if knots.windows(2).any(|w| !(w[1] >= w[0])) {
                return bad(format!("knot vector {name} is not non-decreasing"));
            }
            let first = knots[0];
            let last = knots[knots.len() - 1];
            if knots[..=p].iter().any(|&k| k != first) || knots[knots.len() - p - 1..].iter().any(|&k| k != last) {
                return bad(format!("knot vector {name} is not clamped"));
            }
            if first != 0.0 || last != 1.0 {
                return bad(format!("knot vector {name} must span [0, 1]"));
            }
        }
        let nu = knots_u.len() - degree_u - 1;
        let nv = knots_v.len() - degree_v - 1;
        if control.len() != nu * nv || weights.len() != nu * nv {
            return bad(format!(
                "expected {}×{} control points and weights, got {} and {}",
                nu,
                nv,
                control.len(),
                weights.len()
            ));
        }
        if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
            return bad("weights must be positive".into());
        }
        if !(domain.width() > 0.0 && domain.height() > 0.0) {
            return bad("empty domain".into());
        }
        Ok(Self {
            degree_u,
            degree_v,
            knots_u,
            knots_v,
            control,
            weights,
            domain,
        })
    }

    pub fn degrees(&self) -> (usize, usize) {
        (self.degree_u, self.degree_v)
    }

    pub fn knots_u(&self) -> &[f64] {
        &self.knots_u
    }

    pub fn knots_v(&self) -> &[f64] {
        &self.knots_v
    }

    /// Control grid dimensions (along x, along y).
    pub fn grid_size(&self) -> (usize, usize) {
        (
            self.knots_u.len() - self.degree_u - 1,
            self.knots_v.len() - self.degree_v - 1,
        )
    }

    pub fn control_points(&self) -> &[LocalPoint] {
        &self.control
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn translated(&self, offset: &Vector3<f64>) -> Self {
        let mut s = self.clone();
        for c in &mut s.control {
            *c += offset;
        }
        s.domain.min_x += offset.x;
        s.domain.max_x += offset.x;
        s.domain.min_y += offset.y;
        s.domain.max_y += offset.y;
        s
    }

    fn params(&self, x: f64, y: f64) -> Result<(f64, f64), GroundError> {
        if !self.domain.contains(x, y) || !x.is_finite() || !y.is_finite() {
            return Err(GroundError::OutOfDomain { x, y });
        }
        let u = ((x - self.domain.min_x) / self.domain.width()).clamp(0.0, 1.0);
        let v = ((y - self.domain.min_y) / self.domain.height()).clamp(0.0, 1.0);
        Ok((u, v))
    }

    pub fn derivatives(&self, x: f64, y: f64) -> Result<HeightDerivatives, GroundError> {
        let (u, v) = self.params(x, y)?;
        let (nu, nv) = self.grid_size();
        let su = find_span(nu, self.degree_u, u, &self.knots_u);
        let sv = find_span(nv, self.degree_v, v, &self.knots_v);
        let bu = basis_derivs(su, u, self.degree_u, 2, &self.knots_u);
        let bv = basis_derivs(sv, v, self.degree_v, 2, &self.knots_v);
        // a[k][l] = ∂^{k+l}/∂u^k∂v^l of Σ N M w h, and likewise for the weights.
        let mut a = [[0.0; 3]; 3];
        let mut w = [[0.0; 3]; 3];
        for (ii, i) in (su - self.degree_u..=su).enumerate() {
            for (jj, j) in (sv - self.degree_v..=sv).enumerate() {
                let wt = self.weights[i * nv + j];
                let h = self.control[i * nv + j].z;
                for k in 0..3 {
                    for l in 0..3 - k {
                        let b = bu[k][ii] * bv[l][jj] * wt;
                        a[k][l] += b * h;
                        w[k][l] += b;
                    }
                }
            }
        }
        let z = a[0][0] / w[0][0];
        let zu = (a[1][0] - w[1][0] * z) / w[0][0];
        let zv = (a[0][1] - w[0][1] * z) / w[0][0];
        let zuu = (a[2][0] - 2.0 * w[1][0] * zu - w[2][0] * z) / w[0][0];
        let zuv = (a[1][1] - w[1][0] * zv - w[0][1] * zu - w[1][1] * z) / w[0][0];
        let zvv = (a[0][2] - 2.0 * w[0][1] * zv - w[0][2] * z) / w[0][0];
        let (dx, dy) = (self.domain.width(), self.domain.height());
        Ok(HeightDerivatives {
            z,
            zx: zu / dx,
            zy: zv / dy,
            zxx: zuu / (dx * dx),
            zxy: zuv / (dx * dy),
            zyy: zvv / (dy * dy),
        })
    }

    pub fn query(&self, x: f64, y: f64) -> Result<GroundQuery, GroundError> {
        let d = self.derivatives(x, y)?;
        // Cross product of (1, 0, z_x) and (0, 1, z_y).
        let normal = Vector3::new(-d.zx, -d.zy, 1.0).normalize();
        Ok(GroundQuery { z: d.z, normal })
    }

    /// Thin-plate energy ∫∫ z_xx² + 2 z_xy² + z_yy² dx dy over the domain,
    /// integrated exactly per knot span by Gauss–Legendre quadrature.
    pub fn bending_energy(&self) -> f64 {
        let mut e = 0.0;
        for_each_quadrature_point(self, |x, y, wq| {
            let d = self.derivatives(x, y).expect("quadrature point inside domain");
            e += wq * (d.zxx * d.zxx + 2.0 * d.zxy * d.zxy + d.zyy * d.zyy);
        });
        e
    }

    /// Sum of squared vertical residuals of the points that fall inside the domain.
    pub fn residual_sum_squares(&self, points: &[LocalPoint]) -> f64 {
        points
            .iter()
            .filter_map(|p| self.query(p.x, p.y).ok().map(|q| (p.z - q.z).powi(2)))
            .sum()
    }

    fn height_bounds(&self) -> (f64, f64) {
        self.control
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), c| {
                (lo.min(c.z), hi.max(c.z))
            })
    }

    /// First intersection of the ray `origin + s·direction`, s > 0, with the
    /// surface. The ray is clipped to the domain and to the control-height
    /// slab (the surface lies inside it), marched in steps of a fraction of a
    /// knot span, and the first sign change is refined by bisection.
    pub fn intersect_ray(&self, origin: &LocalPoint, direction: &Vector3<f64>) -> Option<GroundHit> {
        let (zlo, zhi) = self.height_bounds();
        let slab = [
            (self.domain.min_x, self.domain.max_x),
            (self.domain.min_y, self.domain.max_y),
            (zlo - 1e-9, zhi + 1e-9),
        ];
        let mut s0 = 0.0f64;
        let mut s1 = f64::INFINITY;
        for (a, (lo, hi)) in slab.iter().enumerate() {
            let o = origin[a];
            let d = direction[a];
            if d.abs() < 1e-300 {
                if o < *lo || o > *hi {
                    return None;
                }
                continue;
            }
            let (mut t0, mut t1) = ((lo - o) / d, (hi - o) / d);
            if t0 > t1 {
                std::mem::swap(&mut t0, &mut t1);
            }
            s0 = s0.max(t0);
            s1 = s1.min(t1);
        }
        if !(s0 <= s1) || !s1.is_finite() {
            return None;
        }
        let f = |s: f64| -> Option<f64> {
            let p = origin + direction * s;
            self.query(p.x, p.y).ok().map(|q| p.z - q.z)
        };
        let (nu, nv) = self.grid_size();
        let span =
            (self.domain.width() / (nu - self.degree_u) as f64).min(self.domain.height() / (nv - self.degree_v) as f64);
        let horizontal = direction.xy().norm();
        let step_len = span / 8.0;
        let steps = if horizontal * (s1 - s0) <= step_len {
            1
        } else {
            ((horizontal * (s1 - s0) / step_len).ceil() as usize).min(1_000_000)
        };
        let mut a = s0;
        let mut fa = f(a)?;
        if fa == 0.0 && a > 0.0 {
            return self.hit_at(origin, direction, a);
        }
        for k in 1..=steps {
            let b = s0 + (s1 - s0) * k as f64 / steps as f64;
            let fb = f(b)?;
            if fb == 0.0 {
                return self.hit_at(origin, direction, b);
            }
            if fa.signum() != fb.signum() {
                let (mut lo, mut hi, mut flo) = (a, b, fa);
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if mid <= lo || mid >= hi {
                        break;
                    }
                    let fm = f(mid)?;
                    if fm == 0.0 {
                        lo = mid;
                        hi = mid;
                        break;
                    }
                    if fm.signum() == flo.signum() {
                        lo = mid;
                        flo = fm;
                    } else {
                        hi = mid;
                    }
                }
                let s = 0.5 * (lo + hi);
                if s <= 0.0 {
                    return None;
                }
                return self.hit_at(origin, direction, s);
            }
            a = b;
            fa = fb;
        }
        None
    }

    fn hit_at(&self, origin: &LocalPoint, direction: &Vector3<f64>, s: f64) -> Option<GroundHit> {
        let p = origin + direction * s;
        let q = self.query(p.x, p.y).ok()?;
        // Place the hit exactly on the surface; the ray parameter is already
        // converged to rounding.
        Some(GroundHit {
            point: Point3::new(p.x, p.y, q.z),
            normal: q.normal,
            distance: s,
        })
    }
}

pub fn query_ground(surface: &GroundSurface, x: f64, y: f64) -> Result<GroundQuery, GroundError> {
    surface.query(x, y)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GroundHit {
    pub point: LocalPoint,
    /// Unit normal at the hit, on the side of the ray origin.
    pub normal: Vector3<f64>,
    pub distance: f64,
}

/// A ground model that can be ray cast and queried for height.
pub trait Ground {
    fn cast_ray(&self, origin: &LocalPoint, direction: &Vector3<f64>) -> Option<GroundHit>;
    fn ground_at(&self, x: f64, y: f64) -> Option<GroundQuery>;
}

impl Ground for GroundSurface {
    fn cast_ray(&self, origin: &LocalPoint, direction: &Vector3<f64>) -> Option<GroundHit> {
        self.intersect_ray(origin, direction)
    }

    fn ground_at(&self, x: f64, y: f64) -> Option<GroundQuery> {
        self.query(x, y).ok()
    }
}

impl Ground for TriangleMesh {
    fn cast_ray(&self, origin: &LocalPoint, direction: &Vector3<f64>) -> Option<GroundHit> {
        let hit = ray_intersect(self, origin, direction)?;
        // Face the ray origin, which is "up" for a camera above the ground
        // and stays consistent under any rigid motion of the scene.
        let mut normal = self.face_normal(hit.face_index);
        if normal.dot(direction) > 0.0 {
            normal = -normal;
        }
        Some(GroundHit {
            point: hit.point,
            normal,
            distance: hit.distance,
        })
    }

    fn ground_at(&self, x: f64, y: f64) -> Option<GroundQuery> {
        let top = self.vertices().iter().fold(f64::NEG_INFINITY, |m, v| m.max(v.z));
        let hit = self.cast_ray(&Point3::new(x, y, top + 1.0), &-Vector3::z())?;
        Some(GroundQuery {
            z: hit.point.z,
            normal: hit.normal,
        })
    }
}

fn clamped_uniform_knots(spans: usize, degree: usize) -> Vec<f64> {
    let mut k = vec![0.0; degree + 1];
    k.extend((1..spans).map(|i| i as f64 / spans as f64));
    k.extend(std::iter::repeat_n(1.0, degree + 1));
    k
}

fn greville(knots: &[f64], degree: usize, i: usize) -> f64 {
    knots[i + 1..=i + degree].iter().sum::<f64>() / degree as f64
}

fn find_span(n_ctrl: usize, degree: usize, u: f64, knots: &[f64]) -> usize {
    if u >= knots[n_ctrl] {
        return n_ctrl - 1;
    }
    if u <= knots[degree] {
        return degree;
    }
    let (mut lo, mut hi) = (degree, n_ctrl);
    let mut mid = (lo + hi) / 2;
    while u < knots[mid] || u >= knots[mid + 1] {
        if u < knots[mid] {
            hi = mid;
        } else {
            lo = mid;
        }
        mid = (lo + hi) / 2;
    }
    mid
}

/// Non-zero basis functions and their derivatives up to `n` at `u`
/// (Cox–de Boor recursion with the usual derivative table).
/// Result `[k][r]` is the k-th derivative of N_{span−p+r}.
fn basis_derivs(span: usize, u: f64, p: usize, n: usize, knots: &[f64]) -> Vec<Vec<f64>> {
    let mut ndu = vec![vec![0.0; p + 1]; p + 1];
    let mut left = vec![0.0; p + 1];
    let mut right = vec![0.0; p + 1];
    ndu[0][0] = 1.0;
    for j in 1..=p {
        left[j] = u - knots[span + 1 - j];
        right[j] = knots[span + j] - u;
        let mut saved = 0.0;
        for r in 0..j {
            ndu[j][r] = right[r + 1] + left[j - r];
            let temp = ndu[r][j - 1] / ndu[j][r];
            ndu[r][j] = saved + right[r + 1] * temp;
            saved = left[j - r] * temp;
        }
        ndu[j][j] = saved;
    }
    let mut ders = vec![vec![0.0; p + 1]; n + 1];
    for j in 0..=p {
        ders[0][j] = ndu[j][p];
    }
    let mut a = vec![vec![0.0; p + 1]; 2];
    for r in 0..=p {
        let (mut s1, mut s2) = (0usize, 1usize);
        a[0][0] = 1.0;
        for k in 1..=n {
            let mut d = 0.0;
            let rk = r as isize - k as isize;
            let pk = p as isize - k as isize;
            if r >= k {
                a[s2][0] = a[s1][0] / ndu[(pk + 1) as usize][rk as usize];
                d = a[s2][0] * ndu[rk as usize][pk as usize];
            }
            let j1 = if rk >= -1 { 1 } else { (-rk) as usize };
            let j2 = if (r as isize - 1) <= pk { k - 1 } else { p - r };
            for j in j1..=j2 {
                let idx = (rk + j as isize) as usize;
                a[s2][j] = (a[s1][j] - a[s1][j - 1]) / ndu[(pk + 1) as usize][idx];
                d += a[s2][j] * ndu[idx][pk as usize];
            }
            if r as isize <= pk {
                a[s2][k] = -a[s1][k - 1] / ndu[(pk + 1) as usize][r];
                d += a[s2][k] * ndu[r][pk as usize];
            }
            ders[k][r] = d;
            std::mem::swap(&mut s1, &mut s2);
        }
    }
    let mut factor = p as f64;
    for k in 1..=n {
        for v in ders[k].iter_mut() {
            *v *= factor;
        }
        factor *= (p - k) as f64;
    }
    ders
}

const GAUSS3: [(f64, f64); 3] = [
    (-0.774_596_669_241_483_4, 5.0 / 9.0),
    (0.0, 8.0 / 9.0),
    (0.774_596_669_241_483_4, 5.0 / 9.0),
];

/// Calls `f(x, y, weight)` at 3×3 Gauss points of every knot-span cell.
fn for_each_quadrature_point(s: &GroundSurface, mut f: impl FnMut(f64, f64, f64)) {
    let (dx, dy) = (s.domain.width(), s.domain.height());
    let spans =
        |knots: &[f64]| -> Vec<(f64, f64)> { knots.windows(2).filter(|w| w[1] > w[0]).map(|w| (w[0], w[1])).collect() };
    for (u0, u1) in spans(&s.knots_u) {
        for (v0, v1) in spans(&s.knots_v) {
            let (hu, hv) = ((u1 - u0) / 2.0, (v1 - v0) / 2.0);
            for (gu, wu) in GAUSS3 {
                for (gv, wv) in GAUSS3 {
                    let u = u0 + hu * (1.0 + gu);
                    let v = v0 + hv * (1.0 + gv);
                    let x = s.domain.min_x + u * dx;
                    let y = s.domain.min_y + v * dy;
                    f(x, y, wu * wv * hu * hv * dx * dy);
                }
            }
        }
    }
}

/// Symmetric positive definite band matrix, lower band stored row by row:
/// entry (r, r − d) lives at `r * (bw + 1) + d`.
struct BandMatrix {
    n: usize,
    bw: usize,
    data: Vec<f64>,
}

impl BandMatrix {
    fn new(n: usize, bw: usize) -> Self {
        Self {
            n,
            bw,
            data: vec![0.0; n * (bw + 1)],
        }
    }

    fn add(&mut self, r: usize, c: usize, v: f64) {
        let (r, c) = if r >= c { (r, c) } else { (c, r) };
        debug_assert!(r - c <= self.bw);
        self.data[r * (self.bw + 1) + (r - c)] += v;
    }

    fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * (self.bw + 1) + (r - c)]
    }

    /// In-place Cholesky then solve; `None` if not positive definite.
    fn solve(mut self, rhs: &[f64]) -> Option<Vec<f64>> {
        let (n, bw) = (self.n, self.bw);
        let w = bw + 1;
        for i in 0..n {
            let j0 = i.saturating_sub(bw);
            for j in j0..=i {
                let k0 = j0.max(j.saturating_sub(bw));
                let mut s = self.data[i * w + (i - j)];
                for k in k0..j {
                    s -= self.data[i * w + (i - k)] * self.data[j * w + (j - k)];
                }
                if i == j {
                    if !(s > 0.0) {
                        return None;
                    }
                    self.data[i * w] = s.sqrt();
                } else {
                    self.data[i * w + (i - j)] = s / self.data[j * w];
                }
            }
        }
        let mut y = rhs.to_vec();
        for i in 0..n {
            let mut s = y[i];
            for k in i.saturating_sub(bw)..i {
                s -= self.get(i, k) * y[k];
            }
            y[i] = s / self.get(i, i);
        }
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..(i + bw + 1).min(n) {
                s -= self.get(k, i) * y[k];
            }
            y[i] = s / self.get(i, i);
        }
        Some(y)
    }
}

/// Penalized least-squares B-spline fit of a height field.
///
/// Minimizes Σ (z_i − S(x_i, y_i))² + μ · E_tp(S) over the control heights,
/// where E_tp is the thin-plate bending energy. Affine functions have zero
/// energy and are reproduced exactly, so planar data is fitted exactly for
/// any μ.
pub fn fit_ground(points: &[LocalPoint], cfg: &GroundFitConfig) -> Result<GroundSurface, GroundError> {
    let p = cfg.degree;
    if p == 0 || !(cfg.control_spacing > 0.0) || !(cfg.smoothing_weight >= 0.0) {
        return Err(GroundError::BadConfig(
            "degree ≥ 1, positive control spacing and non-negative smoothing weight required".into(),
        ));
    }
    let needed = (p + 1) * (p + 1);
    if points.len() < needed {
        return Err(GroundError::TooFewPoints {
            needed,
            got: points.len(),
        });
    }
    if let Some(i) = points.iter().position(|q| !q.coords.iter().all(|c| c.is_finite())) {
        return Err(GroundError::NonFinite(i));
    }
    let mut domain = Domain {
        min_x: f64::INFINITY,
        max_x: f64::NEG_INFINITY,
        min_y: f64::INFINITY,
        max_y: f64::NEG_INFINITY,
    };
    for q in points {
        domain.min_x = domain.min_x.min(q.x);
        domain.max_x = domain.max_x.max(q.x);
        domain.min_y = domain.min_y.min(q.y);
        domain.max_y = domain.max_y.max(q.y);
    }
    let extent = domain.width().max(domain.height());
    if fit_plane(points.iter(), 1e-6 * extent.max(1e-300)).is_none() || domain.width() <= 0.0 || domain.height() <= 0.0
    {
        return Err(GroundError::DegenerateDomain);
    }

    let spans_u = ((domain.width() / cfg.control_spacing).ceil() as usize).max(1);
    let spans_v = ((domain.height() / cfg.control_spacing).ceil() as usize).max(1);
    let knots_u = clamped_uniform_knots(spans_u, p);
    let knots_v = clamped_uniform_knots(spans_v, p);
    let nu = spans_u + p;
    let nv = spans_v + p;
    let n = nu * nv;
    let bw = p * nv + p;

    // Provisional surface used only for parameter mapping and basis evaluation.
    let mut surface = GroundSurface {
        degree_u: p,
        degree_v: p,
        knots_u,
        knots_v,
        control: vec![Point3::origin(); n],
        weights: vec![1.0; n],
        domain,
    };

    let mut normal = BandMatrix::new(n, bw);
    let mut rhs = vec![0.0; n];
    let mut local = Vec::with_capacity((p + 1) * (p + 1));
    for q in points {
        let (u, v) = surface.params(q.x, q.y)?;
        let su = find_span(nu, p, u, &surface.knots_u);
        let sv = find_span(nv, p, v, &surface.knots_v);
        let bu = basis_derivs(su, u, p, 0, &surface.knots_u);
        let bv = basis_derivs(sv, v, p, 0, &surface.knots_v);
        local.clear();
        for (ii, i) in (su - p..=su).enumerate() {
            for (jj, j) in (sv - p..=sv).enumerate() {
                local.push((i * nv + j, bu[0][ii] * bv[0][jj]));
            }
        }
        for &(a, ba) in &local {
            rhs[a] += ba * q.z;
            for &(b, bb) in &local {
                if b <= a {
                    normal.add(a, b, ba * bb);
                }
            }
        }
    }

    let mu = cfg.smoothing_weight;
    if mu > 0.0 {
        let (dx, dy) = (domain.width(), domain.height());
        let mut rows: Vec<(usize, [f64; 3])> = Vec::with_capacity((p + 1) * (p + 1));
        for_each_quadrature_point(&surface, |x, y, wq| {
            let (u, v) = surface.params(x, y).expect("inside");
            let su = find_span(nu, p, u, &surface.knots_u);
            let sv = find_span(nv, p, v, &surface.knots_v);
            let bu = basis_derivs(su, u, p, 2, &surface.knots_u);
            let bv = basis_derivs(sv, v, p, 2, &surface.knots_v);
            rows.clear();
            for (ii, i) in (su - p..=su).enumerate() {
                for (jj, j) in (sv - p..=sv).enumerate() {
                    rows.push((
                        i * nv + j,
                        [
                            bu[2][ii] * bv[0][jj] / (dx * dx),
                            bu[1][ii] * bv[1][jj] / (dx * dy),
                            bu[0][ii] * bv[2][jj] / (dy * dy),
                        ],
                    ));
                }
            }
            for &(a, da) in &rows {
                for &(b, db) in &rows {
                    if b <= a {
                        let e = da[0] * db[0] + 2.0 * da[1] * db[1] + da[2] * db[2];
                        normal.add(a, b, mu * wq * e);
                    }
                }
            }
        });
    }

    // A tiny ridge keeps control heights without data support determined.
    let mean_diag = (0..n).map(|i| normal.get(i, i)).sum::<f64>() / n as f64;
    let ridge = 1e-12 * mean_diag.max(1e-300);
    for i in 0..n {
        normal.add(i, i, ridge);
    }
    let heights = normal.solve(&rhs).ok_or(GroundError::Singular)?;

    for i in 0..nu {
        let x = domain.min_x + greville(&surface.knots_u, p, i) * domain.width();
        for j in 0..nv {
            let y = domain.min_y + greville(&surface.knots_v, p, j) * domain.height();
            surface.control[i * nv + j] = Point3::new(x, y, heights[i * nv + j]);
        }
    }
    log::debug!(
        "ground fit: {} points, {}×{} control grid, μ = {}",
        points.len(),
        nu,
        nv,
        mu
    );
    Ok(surface)
}

/// Least-squares plane through points, as (a, b, c) in z = a + b·x + c·y.
pub fn best_fit_plane(points: &[LocalPoint]) -> Option<(f64, f64, f64)> {
    let (b, c, m) = fit_plane(points.iter(), 0.0)?;
    Some((m.z - b * m.x - c * m.y, b, c))
}
