//! Thin obstacle (Signorini) problem and pure Dirichlet extension problems
//! on grids.
//!
//! Every free node carries a scalar residual `G_i(u)` that is nonincreasing
//! in `u_i` and nondecreasing in the other values:
//!
//! * interior (and reflected thin) nodes: `F_h(u)_i − f_i`;
//! * obstacle nodes on `{x_n = 0}`: `max((u_up − u_i)/h, φ_i − u_i)`, i.e.
//!   `−min(−D_n⁺u, u − φ)`;
//! * Dirichlet nodes: `g_i − u_i`.
//!
//! The default method is policy iteration (semismooth Newton on the active
//! linear pieces). Gauss–Seidel and parallel Jacobi relaxation solve the
//! same equations node by node.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::barriers::{SeriesBarrier, WeightSequence};
use crate::elliptic::{Ellipticity, Extremal};
use crate::error::{invalid, Error, Result};
use crate::grid::{norm, Grid, GridFunction, NodeRole, Vertical};
use crate::linalg::{bicgstab, CsrBuilder};
use crate::scheme::{DirectionSet, DiscreteOperator, Operator};

/// Obstacle values on the thin plane with a declared `C^{1,1}` bound.
#[derive(Clone, Debug, PartialEq)]
pub struct ObstacleSpec {
    values: Vec<f64>,
    c11_bound: f64,
}

impl ObstacleSpec {
    /// Samples `φ` on every node of `{x_n = 0}` and checks the declared
    /// bound against the observed tangential second differences.
    pub fn new(grid: &Grid, phi: impl Fn(&[f64]) -> f64, c11_bound: f64) -> Result<Self> {
        let values = Self::sample(grid, phi)?;
        let observed = Self::observed_c11(grid, &values);
        if !(c11_bound >= 0.0) || observed > c11_bound * (1.0 + 1e-9) + 1e-9 {
            return invalid(format!(
                "declared C11 bound {c11_bound} is below the observed second differences {observed}"
            ));
        }
        Ok(ObstacleSpec { values, c11_bound })
    }

    /// Uses the observed discrete bound as the declared one.
    pub fn observed(grid: &Grid, phi: impl Fn(&[f64]) -> f64) -> Result<Self> {
        let values = Self::sample(grid, phi)?;
        let c11_bound = Self::observed_c11(grid, &values);
        Ok(ObstacleSpec { values, c11_bound })
    }

    pub fn zero(grid: &Grid) -> Self {
        ObstacleSpec {
            values: vec![0.0; grid.len()],
            c11_bound: 0.0,
        }
    }

    fn sample(grid: &Grid, phi: impl Fn(&[f64]) -> f64) -> Result<Vec<f64>> {
        let mut values = vec![0.0; grid.len()];
        for i in grid.thin_plane_nodes() {
            let v = phi(&grid.coords(i));
            if !v.is_finite() {
                return Err(Error::NonFinite { node: i });
            }
            values[i] = v;
        }
        Ok(values)
    }

    fn observed_c11(grid: &Grid, values: &[f64]) -> f64 {
        let dim = grid.dim();
        let h2 = grid.h() * grid.h();
        let mut worst: f64 = 0.0;
        for i in grid.thin_plane_nodes() {
            for k in 0..dim - 1 {
                let mut off = vec![0i32; dim];
                off[k] = 1;
                let p = grid.offset(i, &off);
                off[k] = -1;
                let m = grid.offset(i, &off);
                if let (Some(p), Some(m)) = (p, m) {
                    worst = worst.max(((values[p] + values[m] - 2.0 * values[i]) / h2).abs());
                }
            }
        }
        worst
    }

    pub fn value(&self, node: usize) -> f64 {
        self.values[node]
    }

    /// Values per grid node; zero off the thin plane.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn c11_bound(&self) -> f64 {
        self.c11_bound
    }
}

/// Condition imposed at a thin-plane node that is not on the outer boundary.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum ThinCondition {
    Dirichlet(f64),
    /// Even reflection across `{x_n = 0}`: the equation holds at the node.
    Reflect,
    Obstacle(f64),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Signorini,
    PureDirichlet,
    Mixed,
}

/// Discretization of the complementarity condition at obstacle nodes.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ThinScheme {
    /// `min(−D_n⁺u, u − φ) = 0` with the one-sided normal difference.
    #[default]
    OneSided,
    /// `min(−F_h(u), u − φ) = 0` with the evenly reflected stencil, which
    /// contains the second-order normal difference `2(u_up − u)/h²`.
    Reflected,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Policy,
    GaussSeidel,
    Jacobi,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iters: usize,
    pub method: Method,
}

impl SolveOptions {
    pub fn new(tol: f64, max_iters: usize) -> Self {
        SolveOptions {
            tol,
            max_iters,
            method: Method::Policy,
        }
    }

    pub fn with_method(mut self, method: Method) -> Self {
        self.method = method;
        self
    }
}

impl Default for SolveOptions {
    fn default() -> Self {
        SolveOptions::new(1e-8, 200)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Kind {
    Fixed(f64),
    Pde,
    Obstacle { phi: f64, up: usize },
    ReflectedObstacle { phi: f64 },
}

/// Discrete thin obstacle problem or Dirichlet problem on a grid.
#[derive(Clone, Debug)]
pub struct SignoriniProblem {
    grid: Grid,
    op: Operator,
    dirs: DirectionSet,
    mode: Mode,
    dirichlet: Vec<f64>,
    thin: Vec<Option<ThinCondition>>,
    source: Option<Vec<f64>>,
    obstacle: Option<ObstacleSpec>,
    thin_scheme: ThinScheme,
}

impl SignoriniProblem {
    /// The even thin obstacle problem: `F(D²u) = 0` off the thin plane,
    /// `min(−D_n⁺u, u − φ) = 0` on it, `u = g` on the outer boundary.
    pub fn signorini(grid: Grid, op: Operator, obstacle: ObstacleSpec, dirichlet: &GridFunction) -> Result<Self> {
        if !grid.symmetric_in_xn() {
            return invalid("the thin obstacle problem needs a grid symmetric in x_n");
        }
        if dirichlet.len() != grid.len() {
            return invalid("boundary data length differs from the grid");
        }
        let mut thin = vec![None; grid.len()];
        for i in grid.thin_plane_nodes() {
            let phi = obstacle.value(i);
            match grid.role(i) {
                NodeRole::Thin => thin[i] = Some(ThinCondition::Obstacle(phi)),
                NodeRole::Dirichlet if phi > dirichlet[i] + 1e-12 * (1.0 + phi.abs()) => {
                    return Err(Error::Infeasible(format!(
                        "obstacle {phi} exceeds boundary value {} at node {i} {:?}",
                        dirichlet[i],
                        grid.coords(i)
                    )));
                }
                _ => {}
            }
        }
        let dirs = DirectionSet::default_for(grid.dim());
        Ok(SignoriniProblem {
            grid,
            op,
            dirs,
            mode: Mode::Signorini,
            dirichlet: dirichlet.values().to_vec(),
            thin,
            source: None,
            obstacle: Some(obstacle),
            thin_scheme: ThinScheme::OneSided,
        })
    }

    /// `F(D²u) = 0` off the thin plane with `u = g` on the outer boundary and
    /// on the thin plane.
    pub fn pure_dirichlet(grid: Grid, op: Operator, data: &GridFunction) -> Result<Self> {
        Self::mixed(grid, op, data, |i, _| ThinCondition::Dirichlet(data[i]))
            .map(|p| Self { mode: Mode::PureDirichlet, ..p })
    }

    /// Arbitrary per-node thin conditions, e.g. a slit with Dirichlet data on
    /// part of the plane and reflection elsewhere.
    pub fn mixed(
        grid: Grid,
        op: Operator,
        data: &GridFunction,
        condition: impl Fn(usize, &[f64]) -> ThinCondition,
    ) -> Result<Self> {
        if data.len() != grid.len() {
            return invalid("boundary data length differs from the grid");
        }
        let mut thin = vec![None; grid.len()];
        for i in grid.thin_plane_nodes() {
            if grid.role(i) == NodeRole::Thin {
                let c = condition(i, &grid.coords(i));
                if matches!(c, ThinCondition::Dirichlet(v) | ThinCondition::Obstacle(v) if !v.is_finite()) {
                    return Err(Error::NonFinite { node: i });
                }
                thin[i] = Some(c);
            }
        }
        let dirs = DirectionSet::default_for(grid.dim());
        Ok(SignoriniProblem {
            grid,
            op,
            dirs,
            mode: Mode::Mixed,
            dirichlet: data.values().to_vec(),
            thin,
            source: None,
            obstacle: None,
            thin_scheme: ThinScheme::OneSided,
        })
    }

    pub fn with_thin_scheme(mut self, scheme: ThinScheme) -> Self {
        self.thin_scheme = scheme;
        self
    }

    pub fn thin_scheme(&self) -> ThinScheme {
        self.thin_scheme
    }

    pub fn with_directions(mut self, dirs: DirectionSet) -> Result<Self> {
        if dirs.dim() != self.grid.dim() {
            return invalid("direction set and grid dimensions differ");
        }
        self.dirs = dirs;
        Ok(self)
    }

    /// Right-hand side `f` in `F(D²u) = f`.
    pub fn with_source(mut self, f: &GridFunction) -> Result<Self> {
        if f.len() != self.grid.len() {
            return invalid("source length differs from the grid");
        }
        self.source = Some(f.values().to_vec());
        Ok(self)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    pub fn directions(&self) -> &DirectionSet {
        &self.dirs
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn obstacle(&self) -> Option<&ObstacleSpec> {
        self.obstacle.as_ref()
    }

    pub fn thin_condition(&self, node: usize) -> Option<ThinCondition> {
        self.thin[node]
    }

    fn system(&self) -> Result<System> {
        let sealed: Vec<bool> = self
            .thin
            .iter()
            .map(|c| matches!(c, Some(ThinCondition::Dirichlet(_))))
            .collect();
        let op = DiscreteOperator::with_sealed(&self.grid, self.op.clone(), &self.dirs, &sealed)?;
        let mut kinds = Vec::with_capacity(self.grid.len());
        for i in 0..self.grid.len() {
            let k = match (self.grid.role(i), self.thin[i]) {
                (NodeRole::Dirichlet, _) => Kind::Fixed(self.dirichlet[i]),
                (NodeRole::Interior, _) | (NodeRole::Thin, Some(ThinCondition::Reflect)) => {
                    if !op.has_stencil(i) {
                        return Err(Error::StencilOutOfRange { node: i });
                    }
                    Kind::Pde
                }
                (NodeRole::Thin, Some(ThinCondition::Dirichlet(v))) => Kind::Fixed(v),
                (NodeRole::Thin, Some(ThinCondition::Obstacle(phi))) => match self.thin_scheme {
                    ThinScheme::OneSided => {
                        let up = self.grid.up(i).ok_or(Error::StencilOutOfRange { node: i })?;
                        Kind::Obstacle { phi, up }
                    }
                    ThinScheme::Reflected => {
                        if !op.has_stencil(i) {
                            return Err(Error::StencilOutOfRange { node: i });
                        }
                        Kind::ReflectedObstacle { phi }
                    }
                },
                (NodeRole::Thin, None) => Kind::Fixed(self.dirichlet[i]),
            };
            if let Kind::Fixed(v) = k {
                if !v.is_finite() {
                    return Err(Error::NonFinite { node: i });
                }
            }
            kinds.push(k);
        }
        let source = self.source.clone().unwrap_or_else(|| vec![0.0; self.grid.len()]);
        let order: Vec<usize> = (0..self.grid.len()).filter(|&i| !matches!(kinds[i], Kind::Fixed(_))).collect();
        Ok(System {
            h: self.grid.h(),
            op,
            kinds,
            source,
            order,
        })
    }
}

/// Max-norm residuals of a discrete solution.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Residuals {
    /// `max |F_h(u) − f|` over nodes where the equation holds.
    pub interior: f64,
    /// `max |min(−D_n⁺u, u − φ)|` over obstacle nodes.
    pub complementarity: f64,
}

impl Residuals {
    pub fn max(&self) -> f64 {
        self.interior.max(self.complementarity)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SolveReport {
    #[serde(skip)]
    pub solution: GridFunction,
    pub iterations: usize,
    pub residuals: Residuals,
    pub contact_nodes: Vec<usize>,
    pub failed: bool,
}

impl SolveReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

struct System {
    h: f64,
    op: DiscreteOperator,
    kinds: Vec<Kind>,
    source: Vec<f64>,
    order: Vec<usize>,
}

impl System {
    fn residuals(&self, u: &[f64]) -> Residuals {
        let per_node: Vec<(f64, f64)> = self
            .order
            .par_iter()
            .map(|&i| match self.kinds[i] {
                Kind::Pde => ((self.op.eval(u, i) - self.source[i]).abs(), 0.0),
                Kind::Obstacle { phi, up } => (0.0, ((u[i] - u[up]) / self.h).min(u[i] - phi).abs()),
                Kind::ReflectedObstacle { phi } => {
                    (0.0, (self.source[i] - self.op.eval(u, i)).min(u[i] - phi).abs())
                }
                Kind::Fixed(_) => (0.0, 0.0),
            })
            .collect();
        let (interior, complementarity) = per_node
            .iter()
            .fold((0.0f64, 0.0f64), |(a, b), &(x, y)| (a.max(x), b.max(y)));
        Residuals {
            interior,
            complementarity,
        }
    }

    fn initial(&self, start: Option<&GridFunction>) -> Vec<f64> {
        let mut u: Vec<f64> = match start {
            Some(s) => s.values().to_vec(),
            None => vec![0.0; self.kinds.len()],
        };
        for (i, k) in self.kinds.iter().enumerate() {
            match *k {
                Kind::Fixed(v) => u[i] = v,
                Kind::Obstacle { phi, .. } | Kind::ReflectedObstacle { phi } => u[i] = u[i].max(phi),
                Kind::Pde => {}
            }
        }
        u
    }

    fn project(&self, u: &mut [f64]) {
        for &i in &self.order {
            if let Kind::Obstacle { phi, .. } | Kind::ReflectedObstacle { phi } = self.kinds[i] {
                u[i] = u[i].max(phi);
            }
        }
    }

    /// Solves `G_i(t) = 0` for the node value with the neighbours frozen.
    fn local_solve(&self, u: &[f64], i: usize, tol: f64) -> f64 {
        match self.kinds[i] {
            Kind::Fixed(v) => v,
            Kind::Obstacle { phi, up } => u[up].max(phi),
            // Both branches decrease in the node value, so the root of the
            // maximum is the larger root.
            Kind::ReflectedObstacle { phi } => self.pde_root(u, i, tol).max(phi),
            Kind::Pde => self.pde_root(u, i, tol),
        }
    }

    /// Root of `F_h(u)(t) = f` in the node value `t`.
    fn pde_root(&self, u: &[f64], i: usize, tol: f64) -> f64 {
        let g = |t: f64| self.op.eval_with(u, i, t).0 - self.source[i];
        let t0 = u[i];
        let g0 = g(t0);
        if g0 == 0.0 {
            return t0;
        }
        let slope = self.op.min_slope(i);
        let (mut lo, mut hi) = if g0 > 0.0 { (t0, t0 + g0 / slope) } else { (t0 + g0 / slope, t0) };
        let mut t = t0;
        let mut gt = g0;
        for _ in 0..200 {
            if gt.abs() <= 1e-3 * tol || hi - lo <= 4.0 * f64::EPSILON * (1.0 + t.abs()) {
                break;
            }
            let (_, piece) = self.op.eval_with(u, i, t);
            let d = -self.op.linearize_at(u, i, t, piece).diag;
            let mut next = t + gt / d;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            t = next;
            gt = g(t);
            if gt > 0.0 {
                lo = t;
            } else {
                hi = t;
            }
        }
        t
    }

    fn gauss_seidel_sweep(&self, u: &mut [f64], reverse: bool, tol: f64) {
        let step = |u: &mut [f64], i: usize| {
            u[i] = self.local_solve(u, i, tol);
        };
        if reverse {
            for &i in self.order.iter().rev() {
                step(u, i);
            }
        } else {
            for &i in &self.order {
                step(u, i);
            }
        }
    }

    fn jacobi_sweep(&self, u: &mut [f64], tol: f64) {
        let new: Vec<f64> = self.order.par_iter().map(|&i| self.local_solve(u, i, tol)).collect();
        for (&i, v) in self.order.iter().zip(new) {
            u[i] = v;
        }
    }

    /// One semismooth Newton step on the active pieces.
    fn newton_step(&self, u: &mut [f64]) -> bool {
        let n = u.len();
        let mut bld = CsrBuilder::new(n);
        let mut rhs = vec![0.0; n];
        let mut contact = Vec::new();
        let inv_h = 1.0 / self.h;
        for i in 0..n {
            match self.kinds[i] {
                Kind::Fixed(v) => {
                    rhs[i] = v - u[i];
                    bld.push_row([(i, 1.0)]);
                }
                Kind::Pde => {
                    let (val, piece) = self.op.eval_with(u, i, u[i]);
                    rhs[i] = val - self.source[i];
                    let lin = self.op.linearize(u, i, piece);
                    let row = std::iter::once((i, -lin.diag)).chain(lin.off.iter().map(|&(j, w)| (j, -w)));
                    bld.push_row(row);
                }
                Kind::ReflectedObstacle { phi } => {
                    let (val, piece) = self.op.eval_with(u, i, u[i]);
                    let pde = val - self.source[i];
                    if pde >= phi - u[i] {
                        rhs[i] = pde;
                        let lin = self.op.linearize(u, i, piece);
                        let row = std::iter::once((i, -lin.diag)).chain(lin.off.iter().map(|&(j, w)| (j, -w)));
                        bld.push_row(row);
                    } else {
                        rhs[i] = phi - u[i];
                        bld.push_row([(i, 1.0)]);
                        contact.push((i, phi));
                    }
                }
                Kind::Obstacle { phi, up } => {
                    let neumann = (u[up] - u[i]) * inv_h;
                    if neumann >= phi - u[i] {
                        rhs[i] = neumann;
                        bld.push_row([(i, inv_h), (up, -inv_h)]);
                    } else {
                        rhs[i] = phi - u[i];
                        bld.push_row([(i, 1.0)]);
                        contact.push((i, phi));
                    }
                }
            }
        }
        let a = bld.finish();
        let mut delta = vec![0.0; n];
        let out = bicgstab(&a, &rhs, &mut delta, 1e-12, 4000);
        if delta.iter().any(|d| !d.is_finite()) {
            return false;
        }
        for (ui, d) in u.iter_mut().zip(&delta) {
            *ui += d;
        }
        for (i, k) in self.kinds.iter().enumerate() {
            if let Kind::Fixed(v) = *k {
                u[i] = v;
            }
        }
        for (i, phi) in contact {
            u[i] = phi;
        }
        out.converged
    }

    fn solve(&self, opts: &SolveOptions, start: Option<&GridFunction>) -> (Vec<f64>, usize, Residuals, bool) {
        let tol = opts.tol;
        let mut u = self.initial(start);
        let mut res = self.residuals(&u);
        let mut iterations = 0;
        let mut best = f64::INFINITY;
        let mut stalled = 0;
        while res.max() > tol && iterations < opts.max_iters {
            iterations += 1;
            match opts.method {
                Method::Policy => {
                    let prev = u.clone();
                    self.newton_step(&mut u);
                    self.project(&mut u);
                    let mut r = self.residuals(&u);
                    // Backtrack when the full step increases the residual.
                    let mut t = 1.0;
                    let full = u.clone();
                    while r.max() > res.max() && t > 1.0 / 64.0 {
                        t *= 0.5;
                        let mut trial: Vec<f64> = prev.iter().zip(&full).map(|(a, b)| a + t * (b - a)).collect();
                        self.project(&mut trial);
                        let rt = self.residuals(&trial);
                        if rt.max() < r.max() {
                            u = trial;
                            r = rt;
                        }
                    }
                    // Mixed max/min structures can cycle between policies;
                    // relaxation sweeps break the cycle.
                    if r.max() < 0.5 * best {
                        best = r.max();
                        stalled = 0;
                    } else {
                        stalled += 1;
                    }
                    if stalled >= 6 || !r.max().is_finite() {
                        if !r.max().is_finite() {
                            u = self.initial(start);
                        }
                        for s in 0..20 {
                            self.gauss_seidel_sweep(&mut u, s % 2 == 1, tol);
                        }
                        stalled = 0;
                        best = self.residuals(&u).max();
                    }
                }
                Method::GaussSeidel => {
                    self.gauss_seidel_sweep(&mut u, false, tol);
                    self.gauss_seidel_sweep(&mut u, true, tol);
                }
                Method::Jacobi => self.jacobi_sweep(&mut u, tol),
            }
            res = self.residuals(&u);
        }
        let failed = res.max() > tol;
        (u, iterations, res, failed)
    }
}

/// Solves the problem by policy iteration.
pub fn solve_signorini(p: &SignoriniProblem, tol: f64, max_iters: usize) -> Result<SolveReport> {
    solve_with(p, &SolveOptions::new(tol, max_iters), None)
}

/// Solves with an explicit method and optional starting values. Running out
/// of iterations is not an error: the partial state is returned with
/// `failed` set.
pub fn solve_with(p: &SignoriniProblem, opts: &SolveOptions, start: Option<&GridFunction>) -> Result<SolveReport> {
    if !(opts.tol > 0.0) {
        return invalid("tolerance must be positive");
    }
    if let Some(s) = start {
        if s.len() != p.grid.len() {
            return invalid("starting values do not match the grid");
        }
    }
    let sys = p.system()?;
    let (u, iterations, residuals, failed) = sys.solve(opts, start);
    let solution = GridFunction::new(&p.grid, u)?;
    let contact_nodes = contact_set(p, &solution, 10.0 * opts.tol);
    Ok(SolveReport {
        solution,
        iterations,
        residuals,
        contact_nodes,
        failed,
    })
}

/// Obstacle nodes where `u − φ ≤ threshold`.
pub fn contact_set(p: &SignoriniProblem, u: &GridFunction, threshold: f64) -> Vec<usize> {
    (0..p.grid.len())
        .filter(|&i| {
            p.grid.role(i) == NodeRole::Thin
                && matches!(p.thin[i], Some(ThinCondition::Obstacle(phi)) if u[i] - phi <= threshold)
        })
        .collect()
}

/// Max-norm residuals of `u`, recomputed from scratch.
pub fn residual(p: &SignoriniProblem, u: &GridFunction) -> Result<Residuals> {
    if u.len() != p.grid.len() {
        return invalid("grid function does not match the grid");
    }
    Ok(p.system()?.residuals(u.values()))
}

/// Outer boundary values for extension problems on a truncated half-space.
pub enum FarField<'a> {
    /// Prescribed values.
    Given(&'a (dyn Fn(&[f64]) -> f64 + Sync)),
    /// Two runs with `±Φ` outside, `Φ` the series barrier dominating the
    /// trace; the midpoint is returned and the half-gap reported.
    SeriesBarrier,
}

#[derive(Clone, Debug)]
pub struct Extension {
    pub solution: GridFunction,
    /// Half the gap between the upper and lower far-field runs on the inner
    /// half of the box (zero for prescribed far fields).
    pub truncation_error: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// Sup of `|g|` over the thin annulus `{r0 ≤ |x'| ≤ r1}` (or ball if `r0 = 0`),
/// by sampling.
fn thin_sup(g: &dyn Fn(&[f64]) -> f64, dim: usize, r0: f64, r1: f64) -> f64 {
    let mut best: f64 = 0.0;
    let radii = 64;
    for k in 0..=radii {
        let r = r0 + (r1 - r0) * k as f64 / radii as f64;
        if dim == 2 {
            for s in [-1.0, 1.0] {
                best = best.max(g(&[s * r, 0.0]).abs());
            }
        } else {
            for a in 0..64 {
                let t = std::f64::consts::TAU * a as f64 / 64.0;
                best = best.max(g(&[r * t.cos(), r * t.sin(), 0.0]).abs());
            }
        }
    }
    best
}

/// Series barrier `Φ = sup_{B₁*}|g| + Σ 2ⁱa_iφ₀(2⁻ⁱx)` with
/// `a_i = 2⁻ⁱ sup_{B*_{2^{i+1}} \ B*_{2ⁱ}} |g|`.
pub fn growth_barrier(g: &dyn Fn(&[f64]) -> f64, ell: Ellipticity, dim: usize) -> Result<(f64, SeriesBarrier)> {
    let base = thin_sup(g, dim, 0.0, 1.0);
    let weights: Vec<f64> = (0..60)
        .map(|i| {
            let r = 2f64.powi(i);
            thin_sup(g, dim, r, 2.0 * r) / r
        })
        .collect();
    if weights.iter().any(|w| !w.is_finite()) || !base.is_finite() {
        return invalid("trace is not finite on the thin plane");
    }
    Ok((base, SeriesBarrier::new(WeightSequence::Prefix { weights }, ell)?))
}

/// Solves `M±(D²u) = 0` in the half-space part of `grid` with `u = g` on
/// `{x_n = 0}`.
pub fn extension_solve(
    grid: &Grid,
    g: &(dyn Fn(&[f64]) -> f64 + Sync),
    ell: Ellipticity,
    sign: Extremal,
    far: FarField<'_>,
    dirs: &DirectionSet,
    opts: &SolveOptions,
) -> Result<Extension> {
    if !matches!(grid.vertical(), Vertical::Half { .. }) {
        return invalid("extension problems are posed on half-space grids");
    }
    let op = Operator::Pucci { ell, which: sign };
    let run = |outer: &dyn Fn(&[f64]) -> f64| -> Result<SolveReport> {
        let data = GridFunction::sample(grid, |x| if x[x.len() - 1] == 0.0 { g(x) } else { outer(x) })?;
        let p = SignoriniProblem::pure_dirichlet(grid.clone(), op.clone(), &data)?.with_directions(dirs.clone())?;
        solve_with(&p, opts, None)
    };
    match far {
        FarField::Given(f) => {
            let rep = run(f)?;
            if rep.failed {
                return Err(Error::NoConvergence {
                    iterations: rep.iterations,
                    residual: rep.residuals.max(),
                });
            }
            Ok(Extension {
                solution: rep.solution,
                truncation_error: 0.0,
                iterations: rep.iterations,
                residual: rep.residuals.max(),
            })
        }
        FarField::SeriesBarrier => {
            let (base, series) = growth_barrier(g, ell, grid.dim())?;
            let phi = |x: &[f64]| base + series.eval(x);
            let upper = run(&phi)?;
            let lower = run(&|x: &[f64]| -phi(x))?;
            for rep in [&upper, &lower] {
                if rep.failed {
                    return Err(Error::NoConvergence {
                        iterations: rep.iterations,
                        residual: rep.residuals.max(),
                    });
                }
            }
            let half = grid.extent().iter().copied().fold(f64::INFINITY, f64::min) / 2.0;
            let mut gap: f64 = 0.0;
            let mid: Vec<f64> = (0..grid.len())
                .map(|i| {
                    let (a, b) = (upper.solution[i], lower.solution[i]);
                    if norm(&grid.coords(i)) <= half {
                        gap = gap.max((a - b) / 2.0);
                    }
                    0.5 * (a + b)
                })
                .collect();
            Ok(Extension {
                solution: GridFunction::new(grid, mid)?,
                truncation_error: gap,
                iterations: upper.iterations + lower.iterations,
                residual: upper.residuals.max().max(lower.residuals.max()),
            })
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn ell() -> Ellipticity {
        Ellipticity::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn zero_data_gives_zero_and_full_contact() {
        let g = Grid::half_box(2, 0.125, 1.0, true).unwrap();
        let p = SignoriniProblem::signorini(g.clone(), Operator::pucci_plus(ell()), ObstacleSpec::zero(&g), &GridFunction::zeros(&g)).unwrap();
        let rep = solve_signorini(&p, 1e-10, 50).unwrap();
        assert!(!rep.failed);
        assert!(rep.solution.values().iter().all(|v| v.abs() < 1e-12));
        let thin: Vec<usize> = (0..g.len()).filter(|&i| g.role(i) == NodeRole::Thin).collect();
        assert_eq!(rep.contact_nodes, thin);
        let r = residual(&p, &rep.solution).unwrap();
        assert_eq!((r.interior, r.complementarity), (0.0, 0.0));
    }

    #[test]
    fn linear_data_reproduced_without_contact() {
        let g = Grid::half_box(2, 0.125, 1.0, true).unwrap();
        let lin = |x: &[f64]| 2.0 + 0.5 * x[0];
        let data = GridFunction::sample(&g, lin).unwrap();
        let obstacle = ObstacleSpec::new(&g, |x| 1.0 + 0.5 * x[0] - x[0] * x[0], 2.0).unwrap();
        let p = SignoriniProblem::signorini(g, Operator::pucci_minus(ell()), obstacle, &data).unwrap();
        let rep = solve_signorini(&p, 1e-10, 50).unwrap();
        assert!(!rep.failed);
        assert!(rep.contact_nodes.is_empty());
        assert!(rep.solution.max_abs_diff(&data) < 1e-9);
    }

    #[test]
    fn c11_bound_checked() {
        let g = Grid::half_box(2, 0.125, 1.0, true).unwrap();
        assert!(ObstacleSpec::new(&g, |x| x[0] * x[0], 1.0).is_err());
        assert!(ObstacleSpec::new(&g, |x| x[0] * x[0], 2.0).is_ok());
        assert!(ObstacleSpec::new(&g, |_| f64::NAN, 2.0).is_err());
    }

    #[test]
    fn infeasible_corner_rejected() {
        let g = Grid::half_box(2, 0.125, 1.0, true).unwrap();
        let obstacle = ObstacleSpec::new(&g, |_| 1.0, 0.0).unwrap();
        let err = SignoriniProblem::signorini(g.clone(), Operator::pucci_plus(ell()), obstacle, &GridFunction::zeros(&g));
        assert!(matches!(err, Err(Error::Infeasible(_))));
    }

    #[test]
    fn non_convergence_is_flagged() {
        let g = Grid::half_box(2, 0.0625, 1.0, true).unwrap();
        let data = GridFunction::sample(&g, |x| x[0] * x[0] - x[1]).unwrap();
        let obstacle = ObstacleSpec::new(&g, |x| -0.5 + 0.2 * x[0], 0.0).unwrap();
        let p = SignoriniProblem::signorini(g, Operator::pucci_plus(ell()), obstacle, &data).unwrap();
        let opts = SolveOptions::new(1e-12, 2).with_method(Method::GaussSeidel);
        let rep = solve_with(&p, &opts, None).unwrap();
        assert!(rep.failed);
        assert_eq!(rep.iterations, 2);
        let json: serde_json::Value = serde_json::from_str(&rep.to_json().unwrap()).unwrap();
        assert_eq!(json["failed"], true);
        assert!(json["residuals"]["interior"].is_number());
    }

    fn random_problem(rng: &mut ChaCha8Rng, g: &Grid, shift: f64) -> (GridFunction, ObstacleSpec) {
        let (a, b, c) = (rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-0.5..0.5));
        let data = GridFunction::sample(g, |x| a * x[0] + b * x[0] * x[0] + x[1] + shift).unwrap();
        let obstacle = ObstacleSpec::observed(g, |x| c - (x[0] - 0.2).powi(2) + shift).unwrap();
        (data, obstacle)
    }

    #[test]
    fn policy_and_gauss_seidel_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let g = Grid::half_box(2, 0.125, 1.0, true).unwrap();
        let cases = [
            (Operator::pucci_plus(ell()), ThinScheme::OneSided),
            (Operator::pucci_minus(ell()), ThinScheme::OneSided),
            (Operator::pucci_plus(ell()), ThinScheme::Reflected),
            (Operator::pucci_minus(ell()), ThinScheme::Reflected),
        ];
        for (op, scheme) in cases {
            let (data, obstacle) = random_problem(&mut rng, &g, 0.0);
            let obstacle = ObstacleSpec::observed(&g, |x| obstacle.value(g.nearest(x)).min(data[g.nearest(x)])).unwrap();
            let p = SignoriniProblem::signorini(g.clone(), op, obstacle, &data).unwrap().with_thin_scheme(scheme);
            let tol = 1e-9;
            let a = solve_with(&p, &SolveOptions::new(tol, 100), None).unwrap();
            let b = solve_with(&p, &SolveOptions::new(tol, 20_000).with_method(Method::GaussSeidel), None).unwrap();
            let c = solve_with(&p, &SolveOptions::new(tol, 40_000).with_method(Method::Jacobi), None).unwrap();
            assert!(!a.failed && !b.failed && !c.failed);
            assert!(a.solution.max_abs_diff(&b.solution) < 1e-8);
            assert!(a.solution.max_abs_diff(&c.solution) < 1e-8);
            assert_eq!(a.contact_nodes, b.contact_nodes);
            assert!(residual(&p, &a.solution).unwrap().max() <= tol);
        }
    }

    #[test]
    fn one_node_perturbation_raises_residual() {
        let g = Grid::half_box(2, 0.125, 1.0, true).unwrap();
        let data = GridFunction::sample(&g, |x| x[0] * x[0] - 2.0 * x[1] * x[1] + 1.0).unwrap();
        let p = SignoriniProblem::signorini(g.clone(), Operator::pucci_plus(ell()), ObstacleSpec::zero(&g), &data).unwrap();
        let tol = 1e-9;
        let rep = solve_signorini(&p, tol, 100).unwrap();
        for delta in [1.0, -1.0] {
            let mut v = rep.solution.values().to_vec();
            v[g.nearest(&[0.25, 0.5])] += delta;
            let r = residual(&p, &GridFunction::new(&g, v).unwrap()).unwrap();
            assert!(r.interior >= ell().lambda() / (g.h() * g.h()) - 2.0 * tol);
        }
    }

    #[test]
    fn extension_of_linear_trace_is_linear() {
        let g = Grid::half_box(2, 0.125, 1.0, false).unwrap();
        let lin = |x: &[f64]| 0.3 * x[0] - 1.0;
        let dirs = DirectionSet::default_for(2);
        for sign in [Extremal::Plus, Extremal::Minus] {
            let ext = extension_solve(&g, &lin, ell(), sign, FarField::Given(&lin), &dirs, &SolveOptions::default()).unwrap();
            let exact = GridFunction::sample(&g, lin).unwrap();
            assert!(ext.solution.max_abs_diff(&exact) < 1e-9);
        }
        let zero = |_: &[f64]| 0.0;
        let ext = extension_solve(&g, &zero, ell(), Extremal::Plus, FarField::SeriesBarrier, &dirs, &SolveOptions::default()).unwrap();
        assert!(ext.solution.values().iter().all(|v| v.abs() < 1e-9));
        assert!(ext.truncation_error < 1e-9);
    }

    #[test]
    fn series_far_field_brackets_the_given_run() {
        let g = Grid::half_box(2, 0.0625, 1.0, false).unwrap();
        let trace = |x: &[f64]| x[0].max(0.0).sqrt();
        let exact = |x: &[f64]| {
            let r = norm(x);
            (0.5 * (r + x[0])).max(0.0).sqrt()
        };
        let dirs = DirectionSet::axis(2);
        let opts = SolveOptions::default();
        let lap = Ellipticity::laplacian();
        let given = extension_solve(&g, &trace, lap, Extremal::Plus, FarField::Given(&exact), &dirs, &opts).unwrap();
        let series = extension_solve(&g, &trace, lap, Extremal::Plus, FarField::SeriesBarrier, &dirs, &opts).unwrap();
        assert!(series.truncation_error > 0.0);
        let half = 0.5;
        for i in 0..g.len() {
            if norm(&g.coords(i)) <= half {
                assert!((given.solution[i] - series.solution[i]).abs() <= series.truncation_error + 1e-9);
            }
        }
    }
}
