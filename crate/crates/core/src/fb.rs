//! Free boundary analysis on solved fields: growth profiles and blow-ups at
//! contact points, regular/degenerate classification, the free boundary as a
//! graph, directional monotonicity, nondegeneracy fits and boundary Harnack
//! ratios.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::error::{invalid, Error, Result};
use crate::grid::{norm, Grid, GridFunction, NodeRole};

/// How the tangent plane of `u − φ` at the center is removed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TangentPlane {
    /// The plane vanishes, as it does at every free boundary point of a
    /// `C¹` solution.
    #[default]
    Zero,
    /// Least-squares gradient over the nodes of `B_{4h}(x₀)`.
    LeastSquares,
}

/// Thresholds of the regular/degenerate dichotomy.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Thresholds {
    pub eps: f64,
    pub nu_threshold: f64,
    pub margin: f64,
    /// Smallest radius in cells.
    pub min_cells: f64,
    pub min_scales: usize,
    pub plane: TangentPlane,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            eps: 0.1,
            nu_threshold: 2.0,
            margin: 0.05,
            min_cells: 4.0,
            min_scales: 3,
            plane: TangentPlane::Zero,
        }
    }
}

impl Thresholds {
    pub fn mu(&self) -> f64 {
        2.0 - self.eps
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return invalid(format!("eps must lie in (0, 1), got {}", self.eps));
        }
        if !(self.nu_threshold > 0.0 && self.margin >= 0.0 && self.min_cells >= 1.0) || self.min_scales < 2 {
            return invalid("thresholds must be positive and need at least two scales");
        }
        Ok(())
    }
}

/// `sup_{B_r}|w|` on a list of radii and `θ(ρ) = sup_{ρ≤r≤R} (r/R)^{−μ}‖w‖_{B_r}/‖w‖_{B_R}`,
/// with `w = u − φ − (tangent plane)` and `R` the largest radius.
#[derive(Clone, Debug, Serialize)]
pub struct GrowthProfile {
    pub node: usize,
    pub center: Vec<f64>,
    pub mu: f64,
    pub plane: TangentPlane,
    pub gradient: Vec<f64>,
    pub radii: Vec<f64>,
    pub sups: Vec<f64>,
    pub theta: Vec<f64>,
}

impl GrowthProfile {
    /// `θ(ρ)` for any `ρ` up to the largest radius.
    pub fn theta_at(&self, rho: f64) -> f64 {
        self.radii
            .iter()
            .position(|&r| r >= rho * (1.0 - 1e-12))
            .map_or(0.0, |k| self.theta[k])
    }

    /// Slopes of `log sup` between consecutive radii; `+∞` where a sup
    /// vanishes.
    pub fn local_exponents(&self) -> Vec<f64> {
        self.radii
            .windows(2)
            .zip(self.sups.windows(2))
            .map(|(r, s)| {
                if s[0] > 0.0 && s[1] > 0.0 {
                    (s[1] / s[0]).ln() / (r[1] / r[0]).ln()
                } else {
                    f64::INFINITY
                }
            })
            .collect()
    }

    /// Least-squares slope of `log sup` against `log r` over positive sups.
    pub fn fitted_exponent(&self) -> Option<f64> {
        let pts: Vec<(f64, f64)> = self
            .radii
            .iter()
            .zip(&self.sups)
            .filter(|(_, s)| **s > 0.0)
            .map(|(r, s)| (r.ln(), s.ln()))
            .collect();
        fit_line(&pts).map(|(slope, _)| slope)
    }
}

/// Least-squares line `y = a·x + b`, `None` with fewer than two distinct `x`.
fn fit_line(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx <= 0.0 {
        return None;
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let a = sxy / sxx;
    Some((a, my - a * mx))
}

/// `φ` extended constantly in `x_n` from the thin plane.
fn obstacle_at(grid: &Grid, obstacle: &GridFunction, i: usize) -> f64 {
    obstacle[grid.thin_projection(i)]
}

/// Largest `r` with `B_r(x)` inside the computational domain (the upper
/// half for half grids).
pub fn admissible_radius(grid: &Grid, x: &[f64]) -> f64 {
    let dim = grid.dim();
    let ext = grid.extent();
    let mut r = f64::INFINITY;
    for k in 0..dim {
        let half = k + 1 == dim && matches!(grid.vertical(), crate::grid::Vertical::Half { .. });
        r = r.min(ext[k] - x[k]);
        if !half {
            r = r.min(x[k] + ext[k]);
        }
    }
    if let Some(big_r) = grid.ball_radius() {
        r = r.min(big_r - norm(x));
    }
    r.max(0.0)
}

/// Solves the small normal equations `A g = b` by Gaussian elimination.
fn solve_small(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n).max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))?;
        if a[p][c].abs() < 1e-300 {
            return None;
        }
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    Some(x)
}

/// `w = u − φ − (u − φ)(x₀) − g·(x − x₀)` at every node, with `g` from `plane`.
fn detachment(
    grid: &Grid,
    u: &GridFunction,
    obstacle: &GridFunction,
    node: usize,
    plane: TangentPlane,
) -> (Vec<f64>, Vec<f64>) {
    let dim = grid.dim();
    let x0 = grid.coords(node);
    let v0 = u[node] - obstacle_at(grid, obstacle, node);
    let raw: Vec<f64> = (0..grid.len())
        .map(|i| u[i] - obstacle_at(grid, obstacle, i) - v0)
        .collect();
    let gradient = match plane {
        TangentPlane::Zero => vec![0.0; dim],
        TangentPlane::LeastSquares => {
            let radius = 4.0 * grid.h() * (1.0 + 1e-9);
            let mut a = vec![vec![0.0; dim]; dim];
            let mut b = vec![0.0; dim];
            for (i, w) in raw.iter().enumerate() {
                let d: Vec<f64> = grid.coords(i).iter().zip(&x0).map(|(p, q)| p - q).collect();
                if norm(&d) <= radius {
                    for r in 0..dim {
                        b[r] += d[r] * w;
                        for c in 0..dim {
                            a[r][c] += d[r] * d[c];
                        }
                    }
                }
            }
            solve_small(a, b).unwrap_or_else(|| vec![0.0; dim])
        }
    };
    let w = raw
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = grid.coords(i);
            v - x.iter().zip(&x0).zip(&gradient).map(|((p, q), g)| (p - q) * g).sum::<f64>()
        })
        .collect();
    (w, gradient)
}

/// Growth of `u − φ` around the thin node `node` on the given radii.
pub fn growth_profile(
    grid: &Grid,
    u: &GridFunction,
    obstacle: &GridFunction,
    node: usize,
    mu: f64,
    radii: &[f64],
    plane: TangentPlane,
) -> Result<GrowthProfile> {
    if u.len() != grid.len() || obstacle.len() != grid.len() {
        return invalid("field lengths differ from the grid");
    }
    if node >= grid.len() || !grid.on_thin_plane(node) {
        return invalid("the center must be a node of the thin plane");
    }
    if !(mu > 0.0 && mu.is_finite()) {
        return invalid(format!("growth exponent must be positive, got {mu}"));
    }
    let mut radii: Vec<f64> = radii.to_vec();
    radii.sort_by(f64::total_cmp);
    radii.dedup();
    if radii.is_empty() || radii[0] <= 0.0 {
        return invalid("radii must be positive");
    }
    let center = grid.coords(node);
    let r_max = *radii.last().expect("nonempty");
    if r_max > admissible_radius(grid, &center) * (1.0 + 1e-9) + 1e-12 {
        return invalid(format!("radius {r_max} leaves the domain around {center:?}"));
    }
    let (w, gradient) = detachment(grid, u, obstacle, node, plane);
    let mut near: Vec<(f64, f64)> = (0..grid.len())
        .filter_map(|i| {
            let d = norm(&grid.coords(i).iter().zip(&center).map(|(p, q)| p - q).collect::<Vec<_>>());
            (d <= r_max * (1.0 + 1e-9)).then_some((d, w[i].abs()))
        })
        .collect();
    near.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut sups = Vec::with_capacity(radii.len());
    let mut running = 0.0f64;
    let mut k = 0;
    for &r in &radii {
        while k < near.len() && near[k].0 <= r * (1.0 + 1e-9) {
            running = running.max(near[k].1);
            k += 1;
        }
        sups.push(running);
    }
    let s_max = *sups.last().expect("nonempty");
    let mut theta = vec![0.0; radii.len()];
    if s_max > 0.0 {
        let mut best = 0.0f64;
        for j in (0..radii.len()).rev() {
            best = best.max((radii[j] / r_max).powf(-mu) * sups[j] / s_max);
            theta[j] = best;
        }
    }
    Ok(GrowthProfile {
        node,
        center,
        mu,
        plane,
        gradient,
        radii,
        sups,
        theta,
    })
}

/// Outcome of the dichotomy at a point.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Classification {
    /// Growth faster than `r^{2−ε}`; `nu` samples `(ρ, θ(ρ))`.
    Regular { eps: f64, nu: Vec<(f64, f64)> },
    Degenerate,
    Inconclusive,
}

impl Classification {
    pub fn is_regular(&self) -> bool {
        matches!(self, Classification::Regular { .. })
    }
}

/// Regular if `θ` at the smallest radius exceeds `ν`, every sup is positive
/// and the fitted exponent is at most `2 − ε − margin`; Degenerate if every
/// local exponent is at least `2 − ε`; Inconclusive otherwise.
pub fn classify_profile(profile: &GrowthProfile, t: &Thresholds) -> Classification {
    if profile.radii.len() < t.min_scales {
        return Classification::Inconclusive;
    }
    let mu = t.mu();
    let local = profile.local_exponents();
    let fitted = profile.fitted_exponent();
    let all_positive = profile.sups.iter().all(|&s| s > 0.0);
    if all_positive && profile.theta[0] > t.nu_threshold && fitted.is_some_and(|p| p <= mu - t.margin) {
        return Classification::Regular {
            eps: t.eps,
            nu: profile.radii.iter().copied().zip(profile.theta.iter().copied()).collect(),
        };
    }
    if local.iter().all(|&p| p >= mu) {
        return Classification::Degenerate;
    }
    Classification::Inconclusive
}

/// One application of the selection rule: the smallest listed `r ≥ ρ` with
/// `(r/R)^{−μ}‖w‖_{B_r}/‖w‖_{B_R} ≥ ½θ(ρ)`.
#[derive(Clone, Debug, Serialize)]
pub struct Selection {
    pub rho: f64,
    pub theta: f64,
    pub radius: f64,
    pub ratio: f64,
}

/// `v(x) = w(x₀ + r x)/‖w‖_{L∞(B_r)}` on the nodes of `B_r(x₀)`.
#[derive(Clone, Debug)]
pub struct RescaledField {
    pub radius: f64,
    pub points: Vec<(Vec<f64>, f64)>,
}

impl RescaledField {
    pub fn sup(&self) -> f64 {
        self.points.iter().map(|p| p.1.abs()).fold(0.0, f64::max)
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let dim = self.points.first().map_or(0, |p| p.0.len());
        let names: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
        writeln!(out, "{},value", names.join(","))?;
        for (x, v) in &self.points {
            let coords: Vec<String> = x.iter().map(|c| format!("{c:.17e}")).collect();
            writeln!(out, "{},{v:.17e}", coords.join(","))?;
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct BlowupReport {
    pub profile: GrowthProfile,
    pub thresholds: Thresholds,
    pub selections: Vec<Selection>,
    pub fitted_exponent: Option<f64>,
    pub local_exponents: Vec<f64>,
    pub classification: Classification,
    #[serde(skip)]
    pub rescaled: Vec<RescaledField>,
}

impl BlowupReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Writes `rescaled_<k>.csv` per selected radius and returns the paths.
    pub fn write_rescaled(&self, dir: &Path) -> Result<Vec<std::path::PathBuf>> {
        let mut paths = Vec::new();
        for (k, f) in self.rescaled.iter().enumerate() {
            let path = dir.join(format!("rescaled_{k}.csv"));
            let file = std::io::BufWriter::new(std::fs::File::create(&path)?);
            f.write_csv(file)?;
            paths.push(path);
        }
        Ok(paths)
    }
}

/// Applies the selection rule at every listed `ρ`, emits the normalized
/// rescalings and classifies the profile.
pub fn blowup_sequence(
    profile: &GrowthProfile,
    grid: &Grid,
    u: &GridFunction,
    obstacle: &GridFunction,
    t: &Thresholds,
) -> Result<BlowupReport> {
    t.validate()?;
    let (w, _) = detachment(grid, u, obstacle, profile.node, profile.plane);
    let r_max = *profile.radii.last().expect("profiles are nonempty");
    let s_max = *profile.sups.last().expect("profiles are nonempty");
    let mut selections = Vec::new();
    let mut rescaled: Vec<RescaledField> = Vec::new();
    if s_max > 0.0 {
        for (k, &rho) in profile.radii.iter().enumerate() {
            let target = 0.5 * profile.theta[k];
            let pick = (k..profile.radii.len()).find(|&j| {
                (profile.radii[j] / r_max).powf(-profile.mu) * profile.sups[j] / s_max >= target
            });
            let Some(j) = pick else { continue };
            let radius = profile.radii[j];
            let ratio = (radius / r_max).powf(-profile.mu) * profile.sups[j] / s_max;
            selections.push(Selection {
                rho,
                theta: profile.theta[k],
                radius,
                ratio,
            });
            let sup = profile.sups[j];
            if sup > 0.0 && rescaled.last().map_or(true, |f| f.radius != radius) {
                let points = (0..grid.len())
                    .filter_map(|i| {
                        let d: Vec<f64> = grid
                            .coords(i)
                            .iter()
                            .zip(&profile.center)
                            .map(|(p, q)| (p - q) / radius)
                            .collect();
                        (norm(&d) <= 1.0 + 1e-9).then(|| (d, w[i] / sup))
                    })
                    .collect();
                rescaled.push(RescaledField { radius, points });
            }
        }
    }
    Ok(BlowupReport {
        profile: profile.clone(),
        thresholds: *t,
        selections,
        fitted_exponent: profile.fitted_exponent(),
        local_exponents: profile.local_exponents(),
        classification: classify_profile(profile, t),
        rescaled,
    })
}

fn contact_mask(grid: &Grid, contact: &[usize]) -> Vec<bool> {
    let mut mask = vec![false; grid.len()];
    for &i in contact {
        mask[i] = true;
    }
    mask
}

/// Tangential axis neighbours on the thin plane.
fn thin_neighbours(grid: &Grid, i: usize) -> impl Iterator<Item = usize> + '_ {
    let dim = grid.dim();
    (0..dim - 1).flat_map(move |k| {
        [-1i32, 1].into_iter().filter_map(move |s| {
            let mut off = [0i32; 3];
            off[k] = s;
            grid.offset(i, &off[..dim])
        })
    })
}

/// Contact nodes with a tangential neighbour off the contact set.
pub fn free_boundary_nodes(grid: &Grid, contact: &[usize]) -> Vec<usize> {
    let mask = contact_mask(grid, contact);
    let mut nodes: Vec<usize> = contact
        .iter()
        .copied()
        .filter(|&i| {
            thin_neighbours(grid, i).any(|j| !mask[j] && grid.role(j) == NodeRole::Thin)
        })
        .collect();
    nodes.sort_unstable();
    nodes.dedup();
    nodes
}

/// Tangential gradient by differences along the thin axes. Centered where
/// both neighbours are usable, one-sided away from blocked or missing ones.
fn tangential_gradient(grid: &Grid, f: &[f64], i: usize, blocked: &dyn Fn(usize) -> bool) -> Vec<f64> {
    let dim = grid.dim();
    let h = grid.h();
    (0..dim - 1)
        .map(|k| {
            let mut off = [0i32; 3];
            off[k] = 1;
            let p = grid.offset(i, &off[..dim]).filter(|&j| !blocked(j));
            off[k] = -1;
            let m = grid.offset(i, &off[..dim]).filter(|&j| !blocked(j));
            match (p, m) {
                (Some(p), Some(m)) => (f[p] - f[m]) / (2.0 * h),
                (Some(p), None) => (f[p] - f[i]) / h,
                (None, Some(m)) => (f[i] - f[m]) / h,
                (None, None) => 0.0,
            }
        })
        .collect()
}

/// Unit directions in the thin space: `±1` on a line, `count` angles on a
/// plane.
fn thin_directions(dim: usize, count: usize) -> Vec<Vec<f64>> {
    if dim == 2 {
        vec![vec![1.0], vec![-1.0]]
    } else {
        (0..count)
            .map(|k| {
                let a = std::f64::consts::TAU * k as f64 / count as f64;
                vec![a.cos(), a.sin()]
            })
            .collect()
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// The free boundary as a graph over `e^⊥` in the thin space.
#[derive(Clone, Debug, Serialize)]
pub struct FreeBoundaryGraph {
    /// Unit vector in `{x_n = 0}` pointing away from the contact set.
    pub direction: Vec<f64>,
    pub nodes: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    /// Smallest Lipschitz constant of a graph over `e^⊥` passing within
    /// `tolerance` of every node; infinite if none exists.
    pub lipschitz: f64,
    pub fit_residual: f64,
    pub tolerance: f64,
    /// `min ∂_e(u − φ)` over the non-contact neighbours of the free boundary.
    pub min_slope: f64,
}

impl FreeBoundaryGraph {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Angle in degrees between the recovered direction and `e`.
    pub fn angle_to(&self, e: &[f64]) -> f64 {
        let c = dot(&self.direction, e) / (norm(&self.direction) * norm(e));
        c.clamp(-1.0, 1.0).acos().to_degrees()
    }
}

/// Smallest Lipschitz constant of a graph over `e^⊥` passing within `tol`
/// of every point.
fn graph_lipschitz(points: &[Vec<f64>], e: &[f64], tol: f64, h: f64) -> f64 {
    let heights: Vec<f64> = points.iter().map(|p| dot(p, e)).collect();
    let across: Vec<Vec<f64>> = points
        .iter()
        .zip(&heights)
        .map(|(p, s)| p.iter().zip(e).map(|(x, e)| x - s * e).collect())
        .collect();
    let mut lip = 0.0f64;
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let gap = (heights[i] - heights[j]).abs() - 2.0 * tol;
            if gap <= 1e-12 * h {
                continue;
            }
            let dy = norm(&across[i].iter().zip(&across[j]).map(|(a, b)| a - b).collect::<Vec<_>>());
            if dy <= 1e-12 * h {
                return f64::INFINITY;
            }
            lip = lip.max(gap / dy);
        }
    }
    lip
}

/// Extracts the free boundary of a solved field from its contact set.
pub fn extract_free_boundary(
    grid: &Grid,
    u: &GridFunction,
    obstacle: &GridFunction,
    contact: &[usize],
) -> Result<FreeBoundaryGraph> {
    if contact.is_empty() {
        return Err(Error::NoFreeBoundary("empty contact set".into()));
    }
    let nodes = free_boundary_nodes(grid, contact);
    if nodes.is_empty() {
        return Err(Error::NoFreeBoundary("the contact set has no boundary on the thin plane".into()));
    }
    let dim = grid.dim();
    let m = dim - 1;
    let h = grid.h();
    let mask = contact_mask(grid, contact);
    let w: Vec<f64> = (0..grid.len()).map(|i| u[i] - obstacle_at(grid, obstacle, i)).collect();
    let mut outside: Vec<usize> = nodes
        .iter()
        .flat_map(|&i| thin_neighbours(grid, i).collect::<Vec<_>>())
        .filter(|&j| !mask[j] && grid.role(j) == NodeRole::Thin)
        .collect();
    outside.sort_unstable();
    outside.dedup();
    let blocked = |j: usize| mask[j];
    let grads: Vec<Vec<f64>> = outside.iter().map(|&j| tangential_gradient(grid, &w, j, &blocked)).collect();
    let points: Vec<Vec<f64>> = nodes.iter().map(|&i| grid.coords(i)[..m].to_vec()).collect();
    let tol = h;
    // The normal is the direction over whose orthogonal complement the
    // nodes form the flattest graph: smallest Lipschitz constant, then
    // smallest width. Orientation points away from the contact set.
    let mut best: Option<(f64, f64, Vec<f64>)> = None;
    for e in thin_directions(dim, 720).into_iter().take(if m == 1 { 1 } else { 360 }) {
        let lip = graph_lipschitz(&points, &e, tol, h);
        let (lo, hi) = points
            .iter()
            .map(|p| dot(p, &e))
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), s| (a.min(s), b.max(s)));
        let width = hi - lo;
        let better = match &best {
            None => true,
            Some((bl, bw, _)) => lip < bl - 1e-12 || (lip <= bl + 1e-12 && width < bw - 1e-12),
        };
        if better {
            best = Some((lip, width, e));
        }
    }
    let (lip, _, mut best_e) = best.expect("at least one direction");
    let mean = |ids: &[usize], e: &[f64]| {
        ids.iter().map(|&i| dot(&grid.coords(i)[..m], e)).sum::<f64>() / ids.len().max(1) as f64
    };
    if !outside.is_empty() && mean(&outside, &best_e) < mean(&nodes, &best_e) {
        best_e.iter_mut().for_each(|x| *x = -*x);
    }
    let best_score = grads.iter().map(|g| dot(g, &best_e)).fold(f64::INFINITY, f64::min);
    let heights: Vec<f64> = points.iter().map(|p| dot(p, &best_e)).collect();
    let across: Vec<Vec<f64>> = points
        .iter()
        .zip(&heights)
        .map(|(p, s)| p.iter().zip(&best_e).map(|(x, e)| x - s * e).collect())
        .collect();
    let fit_residual = if lip.is_finite() {
        let dist = |a: &[f64], b: &[f64]| norm(&a.iter().zip(b).map(|(x, y)| x - y).collect::<Vec<_>>());
        (0..points.len())
            .map(|i| {
                let upper = (0..points.len())
                    .map(|j| heights[j] + tol + lip * dist(&across[i], &across[j]))
                    .fold(f64::INFINITY, f64::min);
                let lower = (0..points.len())
                    .map(|j| heights[j] - tol - lip * dist(&across[i], &across[j]))
                    .fold(f64::NEG_INFINITY, f64::max);
                (heights[i] - 0.5 * (upper + lower)).abs()
            })
            .fold(0.0, f64::max)
    } else {
        f64::INFINITY
    };
    let mut direction = best_e.clone();
    direction.push(0.0);
    Ok(FreeBoundaryGraph {
        direction,
        nodes,
        points,
        lipschitz: lip,
        fit_residual,
        tolerance: tol,
        min_slope: best_score,
    })
}

/// Result of a directional monotonicity scan.
#[derive(Clone, Debug, Serialize)]
pub struct Monotonicity {
    pub min: f64,
    pub node: Option<usize>,
    pub tau: Vec<f64>,
    pub directions: usize,
    pub lipschitz: f64,
}

/// `min ∂_τu` over tangential unit `τ` with `τ·e ≥ ℓ/√(1+ℓ²)` and the
/// region nodes; differences never reach across `slit` nodes.
pub fn directional_monotonicity(
    grid: &Grid,
    u: &GridFunction,
    e: &[f64],
    lipschitz: f64,
    region: &[usize],
    slit: &[usize],
) -> Result<Monotonicity> {
    let dim = grid.dim();
    let m = dim - 1;
    if e.len() < m || (norm(&e[..m]) - 1.0).abs() > 1e-9 {
        return invalid("direction must be a unit vector of the thin space");
    }
    if !(lipschitz >= 0.0) {
        return invalid("Lipschitz constant must be nonnegative");
    }
    let e = &e[..m];
    let c = lipschitz / (1.0 + lipschitz * lipschitz).sqrt();
    let mut taus: Vec<Vec<f64>> = thin_directions(dim, 360)
        .into_iter()
        .filter(|t| dot(t, e) >= c - 1e-12)
        .collect();
    taus.push(e.to_vec());
    let mask = contact_mask(grid, slit);
    let blocked = |j: usize| mask[j];
    let mut out = Monotonicity {
        min: f64::INFINITY,
        node: None,
        tau: e.to_vec(),
        directions: taus.len(),
        lipschitz,
    };
    for &i in region {
        if mask[i] {
            continue;
        }
        let g = tangential_gradient(grid, u.values(), i, &blocked);
        for t in &taus {
            let d = dot(&g, t);
            if d < out.min {
                out.min = d;
                out.node = Some(i);
                out.tau = t.clone();
            }
        }
    }
    Ok(out)
}

/// Power-law fit of `(u − φ)(x₀ + t e)` against `t`.
#[derive(Clone, Debug, Serialize)]
pub struct NondegeneracyFit {
    pub c: f64,
    pub exponent: f64,
    pub eps0: f64,
    pub bound: f64,
    pub passed: bool,
    pub samples: Vec<(f64, f64)>,
}

/// `ε₀ = (1 − β₂)/2` from the subsolution exponent.
pub fn nondegeneracy_eps0(beta2: f64) -> f64 {
    0.5 * (1.0 - beta2)
}

pub fn nondegeneracy_fit(
    grid: &Grid,
    u: &GridFunction,
    obstacle: &GridFunction,
    node: usize,
    e: &[f64],
    ts: &[f64],
    eps0: f64,
) -> Result<NondegeneracyFit> {
    if !grid.on_thin_plane(node) {
        return invalid("the center must be a node of the thin plane");
    }
    let dim = grid.dim();
    let x0 = grid.coords(node);
    let mut samples = Vec::new();
    for &t in ts {
        if !(t > 0.0) {
            return invalid("sample distances must be positive");
        }
        let x: Vec<f64> = (0..dim).map(|k| x0[k] + t * e.get(k).copied().unwrap_or(0.0)).collect();
        let (Some(uv), Some(pv)) = (u.interpolate(grid, &x), obstacle.interpolate(grid, &x)) else {
            return invalid(format!("sample point {x:?} leaves the grid"));
        };
        let v = uv - pv;
        if v > 0.0 {
            samples.push((t, v));
        }
    }
    if samples.len() < 3 {
        return Err(Error::TooFewSamples {
            found: samples.len(),
            needed: 3,
        });
    }
    let pts: Vec<(f64, f64)> = samples.iter().map(|(t, v)| (t.ln(), v.ln())).collect();
    let (exponent, logc) = fit_line(&pts).ok_or(Error::TooFewSamples { found: 1, needed: 3 })?;
    let bound = 2.0 - eps0;
    Ok(NondegeneracyFit {
        c: logc.exp(),
        exponent,
        eps0,
        bound,
        passed: exponent <= bound,
        samples,
    })
}

/// Convex cone `Σ*` in the thin space with apex and generators, and the
/// opening parameter of `Σ* ⊂ {x/|x|·e ≤ −ε}`.
#[derive(Clone, Debug, Serialize)]
pub struct ConeSpec {
    pub apex: Vec<f64>,
    pub e: Vec<f64>,
    pub eps: f64,
    pub generators: Vec<Vec<f64>>,
}

impl ConeSpec {
    /// Vectors are given in thin coordinates (length `n − 1`). On a plane at
    /// most two generators are supported, spanning a sector below `π`.
    pub fn new(apex: Vec<f64>, e: Vec<f64>, eps: f64, generators: Vec<Vec<f64>>) -> Result<Self> {
        let m = apex.len();
        if !(1..=2).contains(&m) || e.len() != m {
            return invalid("cone vectors must live in a thin space of dimension 1 or 2");
        }
        if (norm(&e) - 1.0).abs() > 1e-9 {
            return invalid("cone axis must be a unit vector");
        }
        if !(eps > 0.0 && eps < 1.0) {
            return invalid(format!("opening parameter must lie in (0, 1), got {eps}"));
        }
        if generators.is_empty() || generators.len() > m {
            return invalid(format!("need between 1 and {m} generators"));
        }
        for g in &generators {
            if g.len() != m || norm(g) == 0.0 {
                return invalid("generators must be nonzero thin vectors");
            }
            if dot(g, &e) / norm(g) > -eps + 1e-12 {
                return invalid(format!("generator {g:?} violates the inclusion x/|x|·e ≤ −ε"));
            }
        }
        if generators.len() == 2 {
            let (a, b) = (&generators[0], &generators[1]);
            if (a[0] * b[1] - a[1] * b[0]).abs() <= 1e-12 * norm(a) * norm(b) {
                return invalid("two generators must span a sector");
            }
        }
        Ok(ConeSpec {
            apex,
            e,
            eps,
            generators,
        })
    }

    /// Whether the thin point `x'` lies in `Σ*`.
    pub fn contains(&self, xt: &[f64], tol: f64) -> bool {
        let v: Vec<f64> = xt.iter().zip(&self.apex).map(|(a, b)| a - b).collect();
        let r = norm(&v);
        if r <= tol {
            return true;
        }
        match self.generators.as_slice() {
            [g] => {
                let along = dot(&v, g) / norm(g);
                along >= -tol && (r * r - along * along).max(0.0).sqrt() <= tol
            }
            [a, b] => {
                let det = a[0] * b[1] - a[1] * b[0];
                let s = (v[0] * b[1] - v[1] * b[0]) / det;
                let t = (a[0] * v[1] - a[1] * v[0]) / det;
                let scale = tol / norm(a).min(norm(b));
                s >= -scale && t >= -scale
            }
            _ => false,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct HarnackReport {
    pub cone: ConeSpec,
    pub region_radius: f64,
    pub floor: f64,
    pub normalization: (f64, f64),
    pub nodes_used: usize,
    pub sup_ratio: f64,
    pub inf_ratio: f64,
    /// `max(sup, 1/inf)`: the smallest `K` with `u₂/K ≤ u₁ ≤ K u₂`.
    pub implied_constant: f64,
}

impl HarnackReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

/// Nodewise `u₁/u₂` over `B_{ε/4}(apex)` after normalizing both fields to
/// unit sup on `B_{ε/2}(apex)`. Each `u_i` must be nonnegative, vanish on the
/// thin nodes of `Σ*` and be nondecreasing in `θ_i` (all up to `floor`, in
/// normalized units); `−θ_i` must lie in `Σ*`.
pub fn harnack_ratio(
    grid: &Grid,
    u1: (&GridFunction, &[f64]),
    u2: (&GridFunction, &[f64]),
    cone: &ConeSpec,
    floor: f64,
) -> Result<HarnackReport> {
    let dim = grid.dim();
    let m = dim - 1;
    if cone.apex.len() != m {
        return invalid("cone and grid dimensions differ");
    }
    if !(floor > 0.0) {
        return invalid("floor must be positive");
    }
    let apex: Vec<f64> = cone.apex.iter().copied().chain(std::iter::once(0.0)).collect();
    let dist = |i: usize| norm(&grid.coords(i).iter().zip(&apex).map(|(a, b)| a - b).collect::<Vec<_>>());
    let tol = 1e-9 * grid.h();
    let slit: Vec<usize> = grid
        .thin_plane_nodes()
        .into_iter()
        .filter(|&i| cone.contains(&grid.coords(i)[..m], tol))
        .collect();
    let mut slit_mask = vec![false; grid.len()];
    for &i in &slit {
        slit_mask[i] = true;
    }
    let mut normalized = Vec::with_capacity(2);
    for (which, (u, theta)) in [(1usize, u1), (2, u2)] {
        if u.len() != grid.len() {
            return invalid("field length differs from the grid");
        }
        if theta.len() != m || (norm(theta) - 1.0).abs() > 1e-9 {
            return invalid(format!("θ{which} must be a unit thin vector"));
        }
        let probe: Vec<f64> = cone.apex.iter().zip(theta).map(|(a, t)| a - t).collect();
        if !cone.contains(&probe, 1e-9) {
            return invalid(format!("−θ{which} does not lie in the cone"));
        }
        let sup = (0..grid.len())
            .filter(|&i| dist(i) <= 0.5 * cone.eps * (1.0 + 1e-12))
            .map(|i| u[i])
            .fold(f64::NEG_INFINITY, f64::max);
        if !(sup > 0.0) {
            return invalid(format!("u{which} has no positive values on the half-size ball"));
        }
        let v: Vec<f64> = u.values().iter().map(|x| x / sup).collect();
        if let Some(i) = (0..grid.len()).find(|&i| v[i] < -floor) {
            return Err(Error::Precondition {
                what: format!("u{which} ≥ 0"),
                node: i,
            });
        }
        if let Some(&i) = slit.iter().find(|&&i| v[i].abs() > floor) {
            return Err(Error::Precondition {
                what: format!("u{which} = 0 on the cone"),
                node: i,
            });
        }
        let blocked = |j: usize| slit_mask[j];
        let slope_floor = floor / grid.h();
        for i in 0..grid.len() {
            if slit_mask[i] || grid.role(i) == NodeRole::Dirichlet {
                continue;
            }
            let g = tangential_gradient(grid, &v, i, &blocked);
            if dot(&g, theta) < -slope_floor {
                return Err(Error::Precondition {
                    what: format!("u{which} nondecreasing along θ{which}"),
                    node: i,
                });
            }
        }
        normalized.push((v, sup));
    }
    let (v1, s1) = &normalized[0];
    let (v2, s2) = &normalized[1];
    let radius = 0.25 * cone.eps;
    let mut sup_ratio = f64::NEG_INFINITY;
    let mut inf_ratio = f64::INFINITY;
    let mut used = 0;
    for i in 0..grid.len() {
        if dist(i) <= radius * (1.0 + 1e-12) && v2[i] >= floor {
            let r = v1[i] / v2[i];
            sup_ratio = sup_ratio.max(r);
            inf_ratio = inf_ratio.min(r);
            used += 1;
        }
    }
    if used == 0 {
        return Err(Error::TooFewSamples { found: 0, needed: 1 });
    }
    Ok(HarnackReport {
        cone: cone.clone(),
        region_radius: radius,
        floor,
        normalization: (*s1, *s2),
        nodes_used: used,
        sup_ratio,
        inf_ratio,
        implied_constant: sup_ratio.max(1.0 / inf_ratio),
    })
}

/// Dyadic radii `r₀, 2r₀, …` from `r₀ = min_cells·h` up to the largest
/// admissible radius, capped at 1.
pub fn dyadic_radii(grid: &Grid, node: usize, min_cells: f64) -> Vec<f64> {
    let r_max = admissible_radius(grid, &grid.coords(node)).min(1.0);
    let mut radii = Vec::new();
    let mut r = min_cells * grid.h();
    while r <= r_max * (1.0 + 1e-12) {
        radii.push(r);
        r *= 2.0;
    }
    radii
}

/// Growth profile on dyadic radii and blow-up report at a free boundary node.
pub fn classify_point(
    grid: &Grid,
    u: &GridFunction,
    obstacle: &GridFunction,
    contact: &[usize],
    node: usize,
    t: &Thresholds,
) -> Result<BlowupReport> {
    t.validate()?;
    if !free_boundary_nodes(grid, contact).contains(&node) {
        return invalid(format!("node {node} is not on the discrete free boundary"));
    }
    let radii = dyadic_radii(grid, node, t.min_cells);
    if radii.is_empty() {
        return invalid("no admissible radius around the node");
    }
    let profile = growth_profile(grid, u, obstacle, node, t.mu(), &radii, t.plane)?;
    blowup_sequence(&profile, grid, u, obstacle, t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn box2(h: f64) -> Grid {
        Grid::half_box(2, h, 1.0, true).unwrap()
    }

    fn center(grid: &Grid) -> usize {
        grid.node_at(&vec![0.0; grid.dim()]).unwrap()
    }

    const RADII: [f64; 5] = [1.0 / 16.0, 0.125, 0.25, 0.5, 1.0];

    #[test]
    fn theta_of_three_halves_power() {
        let g = box2(1.0 / 64.0);
        let u = GridFunction::sample(&g, |x| norm(x).powf(1.5)).unwrap();
        let phi = GridFunction::zeros(&g);
        let p = growth_profile(&g, &u, &phi, center(&g), 1.9, &RADII, TangentPlane::Zero).unwrap();
        for (r, th) in p.radii.iter().zip(&p.theta) {
            assert!((th - r.powf(-0.4)).abs() < 1e-12, "{r} {th}");
        }
        assert!((p.fitted_exponent().unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn theta_of_quadratic_and_zero() {
        let g = box2(1.0 / 64.0);
        let phi = GridFunction::sample(&g, |x| 0.3 * x[0]).unwrap();
        let u = GridFunction::sample(&g, |x| 0.3 * x[0] + 5.0 * (x[0] * x[0] + x[1] * x[1])).unwrap();
        let p = growth_profile(&g, &u, &phi, center(&g), 1.9, &RADII, TangentPlane::Zero).unwrap();
        assert!(p.theta.iter().all(|&t| (t - 1.0).abs() < 1e-12));
        let flat = growth_profile(&g, &phi, &phi, center(&g), 1.9, &RADII, TangentPlane::Zero).unwrap();
        assert!(flat.theta.iter().all(|&t| t == 0.0));
        let t = Thresholds::default();
        let rep = blowup_sequence(&p, &g, &u, &phi, &t).unwrap();
        assert_eq!(rep.classification, Classification::Degenerate);
    }

    #[test]
    fn radii_outside_the_domain_are_rejected() {
        let g = box2(1.0 / 16.0);
        let u = GridFunction::zeros(&g);
        let off = g.node_at(&[0.5, 0.0]).unwrap();
        assert!(growth_profile(&g, &u, &u, off, 1.9, &[0.25, 0.75], TangentPlane::Zero).is_err());
        assert!(growth_profile(&g, &u, &u, off, 1.9, &[0.25, 0.5], TangentPlane::Zero).is_ok());
        let above = g.node_at(&[0.0, 0.5]).unwrap();
        assert!(growth_profile(&g, &u, &u, above, 1.9, &[0.25], TangentPlane::Zero).is_err());
    }

    #[test]
    fn least_squares_plane_removes_a_linear_part() {
        let g = box2(1.0 / 32.0);
        let u = GridFunction::sample(&g, |x| 0.7 * x[0] - 0.2 * x[1]).unwrap();
        let phi = GridFunction::zeros(&g);
        let p = growth_profile(&g, &u, &phi, center(&g), 1.9, &RADII[1..], TangentPlane::LeastSquares).unwrap();
        assert!((p.gradient[0] - 0.7).abs() < 1e-12 && (p.gradient[1] + 0.2).abs() < 1e-12);
        assert!(p.sups.iter().all(|&s| s < 1e-12));
    }

    #[test]
    fn blowup_of_three_halves_power() {
        let g = box2(1.0 / 64.0);
        let u = GridFunction::sample(&g, |x| {
            let r = norm(x);
            r.powf(1.5) * (1.5 * x[1].abs().atan2(x[0])).cos()
        })
        .unwrap();
        let phi = GridFunction::zeros(&g);
        let t = Thresholds::default();
        let p = growth_profile(&g, &u, &phi, center(&g), t.mu(), &RADII, t.plane).unwrap();
        let rep = blowup_sequence(&p, &g, &u, &phi, &t).unwrap();
        assert!(rep.classification.is_regular());
        assert!((rep.fitted_exponent.unwrap() - 1.5).abs() < 0.05);
        for s in &rep.selections {
            assert!(s.ratio >= 0.5 * s.theta);
            assert!(s.radius >= s.rho);
        }
        // Homogeneity makes every radius selectable.
        assert!(rep.selections.iter().all(|s| s.radius == s.rho));
        assert_eq!(rep.rescaled.len(), RADII.len());
        for f in &rep.rescaled {
            assert!((f.sup() - 1.0).abs() < 1e-15);
        }
        let mut csv = Vec::new();
        rep.rescaled[0].write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("x1,x2,value\n"));
        let json = rep.to_json().unwrap();
        assert!(json.contains("\"nu_threshold\": 2.0"));
    }

    #[test]
    fn too_few_scales_is_inconclusive() {
        let g = box2(1.0 / 64.0);
        let u = GridFunction::sample(&g, |x| norm(x).powf(1.5)).unwrap();
        let phi = GridFunction::zeros(&g);
        let p = growth_profile(&g, &u, &phi, center(&g), 1.9, &[0.25, 0.5], TangentPlane::Zero).unwrap();
        assert_eq!(classify_profile(&p, &Thresholds::default()), Classification::Inconclusive);
    }

    fn half_space_contact(grid: &Grid, e: &[f64]) -> (GridFunction, GridFunction, Vec<usize>) {
        let m = grid.dim() - 1;
        let u = GridFunction::sample(grid, |x| dot(&x[..m], e).max(0.0).powf(1.5)).unwrap();
        let phi = GridFunction::zeros(grid);
        let contact = grid
            .thin_plane_nodes()
            .into_iter()
            .filter(|&i| grid.role(i) == NodeRole::Thin && u[i] <= 1e-14)
            .collect();
        (u, phi, contact)
    }

    #[test]
    fn half_space_free_boundary_in_3d() {
        let g = Grid::half_box(3, 1.0 / 16.0, 1.0, true).unwrap();
        for angle in [0.0f64, 20.0, 45.0, 110.0] {
            let a = angle.to_radians();
            let e = [a.cos(), a.sin()];
            let (u, phi, contact) = half_space_contact(&g, &e);
            let f = extract_free_boundary(&g, &u, &phi, &contact).unwrap();
            assert!(f.angle_to(&[e[0], e[1], 0.0]) < 2.0, "{angle}: {:?}", f.direction);
            assert!(f.lipschitz < 0.2, "{angle}: {}", f.lipschitz);
            assert!(f.fit_residual <= f.tolerance + 1e-12);
        }
    }

    #[test]
    fn free_boundary_is_equivariant() {
        let g = Grid::half_box(3, 1.0 / 16.0, 1.0, true).unwrap();
        let a = 30f64.to_radians();
        let (u, phi, c) = half_space_contact(&g, &[a.cos(), a.sin()]);
        let base = extract_free_boundary(&g, &u, &phi, &c).unwrap();
        let (u, phi, c) = half_space_contact(&g, &[a.sin(), a.cos()]);
        let swapped = extract_free_boundary(&g, &u, &phi, &c).unwrap();
        assert!((swapped.direction[0] - base.direction[1]).abs() < 1e-12);
        assert!((swapped.direction[1] - base.direction[0]).abs() < 1e-12);
        let (u, phi, c) = half_space_contact(&g, &[-a.cos(), a.sin()]);
        let flipped = extract_free_boundary(&g, &u, &phi, &c).unwrap();
        assert!((flipped.direction[0] + base.direction[0]).abs() < 1e-12);
        assert!((flipped.direction[1] - base.direction[1]).abs() < 1e-12);
        assert!((flipped.lipschitz - base.lipschitz).abs() < 1e-9);
    }

    #[test]
    fn empty_or_full_contact_has_no_free_boundary() {
        let g = box2(1.0 / 16.0);
        let u = GridFunction::zeros(&g);
        assert!(matches!(extract_free_boundary(&g, &u, &u, &[]), Err(Error::NoFreeBoundary(_))));
        let all: Vec<usize> = g.thin_plane_nodes().into_iter().filter(|&i| g.role(i) == NodeRole::Thin).collect();
        assert!(matches!(extract_free_boundary(&g, &u, &u, &all), Err(Error::NoFreeBoundary(_))));
    }

    #[test]
    fn monotonicity_examples() {
        let g = Grid::half_box(3, 1.0 / 16.0, 1.0, true).unwrap();
        let region: Vec<usize> = (0..g.len()).filter(|&i| norm(&g.coords(i)) < 0.5).collect();
        let ramp = GridFunction::sample(&g, |x| x[0].max(0.0)).unwrap();
        let m = directional_monotonicity(&g, &ramp, &[1.0, 0.0], 1.0, &region, &[]).unwrap();
        assert!(m.min >= 0.0);
        assert!(m.directions > 1);
        let bump = GridFunction::sample(&g, |x| (-4.0 * (x[0] * x[0] + x[1] * x[1] + x[2] * x[2])).exp()).unwrap();
        for e in [[1.0, 0.0], [0.0, 1.0], [-0.6, 0.8]] {
            let m = directional_monotonicity(&g, &bump, &e, 0.5, &region, &[]).unwrap();
            assert!(m.min < 0.0);
        }
        assert!(directional_monotonicity(&g, &bump, &[1.0, 1.0], 0.5, &region, &[]).is_err());
    }

    #[test]
    fn slit_differences_stay_on_one_side() {
        // |x| jumps in slope at the origin; blocking the origin keeps the
        // differences one-sided and exact.
        let g = box2(1.0 / 16.0);
        let f = GridFunction::sample(&g, |x| x[0].abs()).unwrap();
        let o = center(&g);
        let right = g.node_at(&[1.0 / 16.0, 0.0]).unwrap();
        let m = directional_monotonicity(&g, &f, &[1.0], 0.0, &[right], &[o]).unwrap();
        assert!((m.min - 1.0).abs() < 1e-12);
        let m = directional_monotonicity(&g, &f, &[1.0], 0.0, &[o], &[]).unwrap();
        assert!(m.min.abs() < 1e-12);
    }

    #[test]
    fn nondegeneracy_examples() {
        let g = box2(1.0 / 64.0);
        let phi = GridFunction::zeros(&g);
        let ts: Vec<f64> = (1..=8).map(|k| k as f64 / 16.0).collect();
        let sq = GridFunction::sample(&g, |x| x[0].max(0.0).powi(2)).unwrap();
        let fit = nondegeneracy_fit(&g, &sq, &phi, center(&g), &[1.0], &ts, 0.1).unwrap();
        assert!((fit.exponent - 2.0).abs() < 1e-9 && (fit.c - 1.0).abs() < 1e-9);
        assert!(!fit.passed);
        let p = GridFunction::sample(&g, |x| 3.0 * x[0].max(0.0).powf(1.5)).unwrap();
        let fit = nondegeneracy_fit(&g, &p, &phi, center(&g), &[1.0], &ts, 0.1).unwrap();
        assert!(fit.passed && (fit.exponent - 1.5).abs() < 1e-9 && (fit.c - 3.0).abs() < 1e-9);
        let zero = GridFunction::zeros(&g);
        assert!(matches!(
            nondegeneracy_fit(&g, &zero, &phi, center(&g), &[1.0], &ts, 0.1),
            Err(Error::TooFewSamples { .. })
        ));
        assert!((nondegeneracy_eps0(0.6) - 0.2).abs() < 1e-15);
    }

    fn slit_cone() -> ConeSpec {
        ConeSpec::new(vec![0.0], vec![1.0], 0.2, vec![vec![-1.0]]).unwrap()
    }

    fn slit_field(g: &Grid, a: f64) -> GridFunction {
        // Re of z^{1/2} about the slit {x ≤ 0}: nonnegative, increasing in x.
        GridFunction::sample(g, |x| {
            let r = norm(x);
            a * (2.0 * r).sqrt() * (0.5 * x[1].abs().atan2(x[0])).cos()
        })
        .unwrap()
    }

    #[test]
    fn harnack_ratio_examples() {
        let g = box2(1.0 / 64.0);
        let cone = slit_cone();
        let u = slit_field(&g, 1.0);
        let r = harnack_ratio(&g, (&u, &[1.0]), (&u, &[1.0]), &cone, 1e-7).unwrap();
        assert_eq!((r.sup_ratio, r.inf_ratio), (1.0, 1.0));
        let u2 = slit_field(&g, 2.0);
        let r = harnack_ratio(&g, (&u, &[1.0]), (&u2, &[1.0]), &cone, 1e-7).unwrap();
        assert!((r.sup_ratio - 1.0).abs() < 1e-14 && (r.inf_ratio - 1.0).abs() < 1e-14);
        assert!(r.nodes_used > 0);
        let bad = GridFunction::sample(&g, |x| if x[0] <= 0.0 && x[1] == 0.0 { 0.5 } else { 1.0 }).unwrap();
        assert!(matches!(
            harnack_ratio(&g, (&bad, &[1.0]), (&u, &[1.0]), &cone, 1e-7),
            Err(Error::Precondition { .. })
        ));
        assert!(harnack_ratio(&g, (&u, &[-1.0]), (&u, &[1.0]), &cone, 1e-7).is_err());
    }

    #[test]
    fn cone_spec_validation() {
        assert!(ConeSpec::new(vec![0.0], vec![1.0], 0.2, vec![vec![1.0]]).is_err());
        assert!(ConeSpec::new(vec![0.0], vec![1.0], 1.5, vec![vec![-1.0]]).is_err());
        let c = ConeSpec::new(vec![0.0, 0.0], vec![1.0, 0.0], 0.1, vec![vec![-1.0, 0.5], vec![-1.0, -0.5]]).unwrap();
        assert!(c.contains(&[-1.0, 0.0], 1e-12));
        assert!(c.contains(&[-2.0, 0.9], 1e-12));
        assert!(!c.contains(&[-1.0, 0.9], 1e-12));
        assert!(!c.contains(&[0.1, 0.0], 1e-12));
        assert!(ConeSpec::new(vec![0.0, 0.0], vec![1.0, 0.0], 0.1, vec![vec![-1.0, 20.0]]).is_err());
        assert!(ConeSpec::new(vec![0.0, 0.0], vec![1.0, 0.0], 0.1, vec![vec![-1.0, 0.0], vec![-2.0, 0.0]]).is_err());
    }

    proptest! {
        #[test]
        fn theta_nonincreasing_and_sups_monotone(seed in 0u64..1000, mu in 1.0f64..2.0) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let g = box2(1.0 / 16.0);
            let u = GridFunction::new(&g, (0..g.len()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap();
            let phi = GridFunction::zeros(&g);
            let p = growth_profile(&g, &u, &phi, center(&g), mu, &RADII, TangentPlane::Zero).unwrap();
            prop_assert!(p.theta.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(p.sups.windows(2).all(|w| w[0] <= w[1]));
        }

        #[test]
        fn classification_is_scale_invariant(c in 0.01f64..100.0, power in 1.2f64..2.5) {
            let g = box2(1.0 / 32.0);
            let phi = GridFunction::zeros(&g);
            let u = GridFunction::sample(&g, |x| norm(x).powf(power)).unwrap();
            let v = GridFunction::sample(&g, |x| c * norm(x).powf(power)).unwrap();
            let t = Thresholds::default();
            let a = growth_profile(&g, &u, &phi, center(&g), t.mu(), &RADII[1..], t.plane).unwrap();
            let b = growth_profile(&g, &v, &phi, center(&g), t.mu(), &RADII[1..], t.plane).unwrap();
            prop_assert_eq!(classify_profile(&a, &t).is_regular(), classify_profile(&b, &t).is_regular());
            for (x, y) in a.theta.iter().zip(&b.theta) {
                prop_assert!((x - y).abs() <= 1e-12 * x.abs().max(1.0));
            }
        }

        #[test]
        fn harnack_is_scale_invariant(a in 0.1f64..10.0, b in 0.1f64..10.0) {
            let g = box2(1.0 / 32.0);
            let cone = slit_cone();
            let u1 = slit_field(&g, 1.0);
            let u2 = GridFunction::sample(&g, |x| {
                let r = norm(x);
                ((2.0 * r).sqrt() * (0.5 * x[1].abs().atan2(x[0])).cos()) * (1.0 + 0.5 * x[0].max(0.0))
            }).unwrap();
            let base = harnack_ratio(&g, (&u1, &[1.0]), (&u2, &[1.0]), &cone, 1e-7).unwrap();
            let s1 = GridFunction::new(&g, u1.values().iter().map(|v| a * v).collect()).unwrap();
            let s2 = GridFunction::new(&g, u2.values().iter().map(|v| b * v).collect()).unwrap();
            let scaled = harnack_ratio(&g, (&s1, &[1.0]), (&s2, &[1.0]), &cone, 1e-7).unwrap();
            prop_assert!((base.sup_ratio - scaled.sup_ratio).abs() < 1e-12);
            prop_assert!((base.inf_ratio - scaled.inf_ratio).abs() < 1e-12);
            prop_assert_eq!(base.nodes_used, scaled.nodes_used);
        }
    }
}
