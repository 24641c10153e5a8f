//! Monotone wide-stencil discretisation of the Pucci and Bellman operators.
//!
//! `M⁺(H)` is the maximum over orthonormal frames `{e_i}` of
//! `Σ_i Λ(e_iᵀHe_i)⁺ − λ(e_iᵀHe_i)⁻` (and `M⁻` the minimum of the dual
//! combination), so replacing each `e_iᵀHe_i` by a centred second difference
//! along a lattice direction and taking the extremum over a finite set of
//! lattice frames gives a scheme that is nondecreasing in every neighbour
//! value. The consistency error is the angular gap between the frames.
//!
//! A Bellman member `tr(A H)` is discretised exactly through Selling's
//! decomposition `A = Σ_j w_j v_j v_jᵀ` with `w_j ≥ 0` and integer `v_j`.

use rayon::prelude::*;

use crate::elliptic::{BellmanFamily, Ellipticity, Extremal, SymMatrix};
use crate::error::{invalid, Error, Result};
use crate::grid::{Grid, GridFunction, NodeRole};

/// Integer stencil offset with an arm multiplier: the stencil points are
/// `x ± arm·offset·h`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LatticeDir {
    pub offset: [i32; 3],
    pub arm: u32,
}

impl LatticeDir {
    pub fn new(offset: &[i32], arm: u32) -> Self {
        let mut o = [0; 3];
        o[..offset.len()].copy_from_slice(offset);
        LatticeDir { offset: o, arm }
    }

    fn norm2(&self) -> f64 {
        self.offset.iter().map(|&v| (v * v) as f64).sum()
    }
}

/// A set of orthogonal lattice frames.
#[derive(Clone, Debug, PartialEq)]
pub struct DirectionSet {
    dim: usize,
    frames: Vec<Vec<LatticeDir>>,
}

fn gcd(a: i32, b: i32) -> i32 {
    if b == 0 {
        a.abs()
    } else {
        gcd(b, a % b)
    }
}

impl DirectionSet {
    pub fn new(dim: usize, frames: Vec<Vec<LatticeDir>>) -> Result<Self> {
        if !(2..=3).contains(&dim) {
            return invalid("direction sets exist in dimension 2 or 3");
        }
        if frames.is_empty() {
            return invalid("direction set needs at least one frame");
        }
        for (f, frame) in frames.iter().enumerate() {
            if frame.len() != dim {
                return invalid(format!("frame {f} has {} directions, expected {dim}", frame.len()));
            }
            for d in frame {
                if d.arm == 0 || d.norm2() == 0.0 || d.offset[dim..].iter().any(|&v| v != 0) {
                    return invalid(format!("frame {f} contains a degenerate direction"));
                }
            }
            for a in 0..dim {
                for b in 0..a {
                    let dot: i32 = (0..dim)
                        .map(|k| frame[a].offset[k] * frame[b].offset[k])
                        .sum();
                    if dot != 0 {
                        return invalid(format!("frame {f} is not orthogonal"));
                    }
                }
            }
        }
        Ok(DirectionSet { dim, frames })
    }

    /// Coordinate axes only.
    pub fn axis(dim: usize) -> Self {
        let frame = (0..dim)
            .map(|k| {
                let mut o = [0; 3];
                o[k] = 1;
                LatticeDir { offset: o, arm: 1 }
            })
            .collect();
        DirectionSet {
            dim,
            frames: vec![frame],
        }
    }

    /// `count` planar frames whose angles best approximate `kπ/(2·count)`,
    /// chosen among primitive lattice vectors with components at most
    /// `max_arm`.
    pub fn planar(count: usize, max_arm: i32) -> Result<Self> {
        if count == 0 || max_arm < 1 {
            return invalid("planar direction set needs count ≥ 1 and max_arm ≥ 1");
        }
        let mut candidates: Vec<(f64, [i32; 2])> = Vec::new();
        for p in 1..=max_arm {
            for q in 0..=max_arm {
                if gcd(p, q) == 1 {
                    candidates.push(((q as f64).atan2(p as f64), [p, q]));
                }
            }
        }
        candidates.sort_by(|a, b| a.0.total_cmp(&b.0));
        if candidates.len() < count {
            return invalid(format!(
                "only {} lattice frames with arm ≤ {max_arm}, {count} requested",
                candidates.len()
            ));
        }
        let quarter = std::f64::consts::FRAC_PI_2;
        let mut used = vec![false; candidates.len()];
        let mut frames = Vec::with_capacity(count);
        for k in 0..count {
            let target = quarter * k as f64 / count as f64;
            let (best, _) = candidates
                .iter()
                .enumerate()
                .filter(|(i, _)| !used[*i])
                .map(|(i, (ang, _))| {
                    let d = (ang - target).rem_euclid(quarter);
                    (i, d.min(quarter - d))
                })
                .min_by(|a, b| a.1.total_cmp(&b.1))
                .expect("enough candidates");
            used[best] = true;
            let [p, q] = candidates[best].1;
            frames.push(vec![LatticeDir::new(&[p, q], 1), LatticeDir::new(&[-q, p], 1)]);
        }
        frames.sort_by(|a, b| {
            let ang = |f: &Vec<LatticeDir>| (f[0].offset[1] as f64).atan2(f[0].offset[0] as f64);
            ang(a).total_cmp(&ang(b))
        });
        Ok(DirectionSet { dim: 2, frames })
    }

    /// Axis frame plus the three face-diagonal frames.
    pub fn spatial() -> Self {
        let d = |o: [i32; 3]| LatticeDir { offset: o, arm: 1 };
        DirectionSet {
            dim: 3,
            frames: vec![
                vec![d([1, 0, 0]), d([0, 1, 0]), d([0, 0, 1])],
                vec![d([1, 1, 0]), d([1, -1, 0]), d([0, 0, 1])],
                vec![d([1, 0, 1]), d([1, 0, -1]), d([0, 1, 0])],
                vec![d([0, 1, 1]), d([0, 1, -1]), d([1, 0, 0])],
            ],
        }
    }

    /// Default frame set for the dimension: 8 planar frames with arms up to
    /// 3 nodes in 2D, axis plus face diagonals in 3D.
    pub fn default_for(dim: usize) -> Self {
        match dim {
            2 => Self::planar(8, 3).expect("valid default"),
            _ => Self::spatial(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn frames(&self) -> &[Vec<LatticeDir>] {
        &self.frames
    }

    /// Largest angle between a unit vector and the nearest frame direction,
    /// in 2D; a crude bound of the consistency error of the frame set.
    pub fn max_angle_gap(&self) -> f64 {
        let mut angles: Vec<f64> = self
            .frames
            .iter()
            .flat_map(|f| f.iter())
            .map(|d| (d.offset[1] as f64).atan2(d.offset[0] as f64).rem_euclid(std::f64::consts::PI))
            .collect();
        angles.sort_by(f64::total_cmp);
        angles.push(angles[0] + std::f64::consts::PI);
        angles
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
            / 2.0
    }
}

/// Centred second difference `(f(x+ae)+f(x−ae)−2f(x))/a²` with
/// `a = arm·h·|offset|`.
pub fn second_difference(
    grid: &Grid,
    f: &GridFunction,
    node: usize,
    dir: &[i32],
    arm: u32,
) -> Result<f64> {
    let off: Vec<i32> = dir.iter().map(|&v| v * arm as i32).collect();
    let neg: Vec<i32> = off.iter().map(|v| -v).collect();
    let (Some(p), Some(m)) = (grid.offset(node, &off), grid.offset(node, &neg)) else {
        return Err(Error::StencilOutOfRange { node });
    };
    let a2 = off.iter().map(|&v| (v * v) as f64).sum::<f64>() * grid.h() * grid.h();
    Ok((f[p] + f[m] - 2.0 * f[node]) / a2)
}

/// Second-order elliptic operator to discretise.
#[derive(Clone, Debug, PartialEq)]
pub enum Operator {
    Pucci { ell: Ellipticity, which: Extremal },
    Bellman(BellmanFamily),
}

impl Operator {
    pub fn pucci_plus(ell: Ellipticity) -> Self {
        Operator::Pucci {
            ell,
            which: Extremal::Plus,
        }
    }

    pub fn pucci_minus(ell: Ellipticity) -> Self {
        Operator::Pucci {
            ell,
            which: Extremal::Minus,
        }
    }

    pub fn ellipticity(&self) -> Ellipticity {
        match self {
            Operator::Pucci { ell, .. } => *ell,
            Operator::Bellman(f) => f.ellipticity(),
        }
    }

    /// Exact operator value on a symmetric matrix.
    pub fn eval(&self, h: &SymMatrix) -> f64 {
        match self {
            Operator::Pucci { ell, which } => crate::elliptic::pucci(h, ell, *which),
            Operator::Bellman(f) => crate::elliptic::bellman_eval(f, h),
        }
    }

    /// Whether the operator is a maximum (as opposed to a minimum) over its
    /// linear pieces.
    fn is_max(&self) -> bool {
        !matches!(
            self,
            Operator::Pucci {
                which: Extremal::Minus,
                ..
            }
        )
    }

    pub fn name(&self) -> &'static str {
        match self {
            Operator::Pucci {
                which: Extremal::Plus,
                ..
            } => "pucci+",
            Operator::Pucci {
                which: Extremal::Minus,
                ..
            } => "pucci-",
            Operator::Bellman(_) => "bellman",
        }
    }
}

/// Selling decomposition `A = Σ w_j v_j v_jᵀ` of a positive definite matrix
/// into nonnegative weights on integer vectors.
pub fn selling_decomposition(a: &SymMatrix) -> Result<Vec<(f64, [i32; 3])>> {
    let dim = a.dim();
    let dot = |u: &[i32; 3], v: &[i32; 3]| -> f64 {
        let mut s = 0.0;
        for i in 0..dim {
            for j in 0..dim {
                s += u[i] as f64 * a.get(i, j) * v[j] as f64;
            }
        }
        s
    };
    let scale = a.trace().abs().max(f64::MIN_POSITIVE);
    let tol = 1e-14 * scale;
    let mut out = Vec::new();
    if dim == 2 {
        let mut e = [[1, 0, 0], [0, 1, 0], [-1, -1, 0]];
        for _ in 0..10_000 {
            let Some((i, j)) = [(0, 1), (0, 2), (1, 2)]
                .into_iter()
                .find(|&(i, j)| dot(&e[i], &e[j]) > tol)
            else {
                break;
            };
            let k = 3 - i - j;
            let (ei, ej) = (e[i], e[j]);
            e[i] = [-ei[0], -ei[1], 0];
            e[k] = [ei[0] - ej[0], ei[1] - ej[1], 0];
        }
        for (i, j) in [(0, 1), (0, 2), (1, 2)] {
            let k = 3 - i - j;
            let w = -dot(&e[i], &e[j]);
            if w < -tol {
                return Err(Error::InvalidInput("matrix is not positive definite".into()));
            }
            if w > tol {
                out.push((w, [-e[k][1], e[k][0], 0]));
            }
        }
    } else {
        let mut e = [[1, 0, 0], [0, 1, 0], [0, 0, 1], [-1, -1, -1]];
        let pairs = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];
        for _ in 0..10_000 {
            let Some((i, j)) = pairs.into_iter().find(|&(i, j)| dot(&e[i], &e[j]) > tol) else {
                break;
            };
            let ei = e[i];
            for (k, ek) in e.iter_mut().enumerate() {
                if k != i && k != j {
                    for c in 0..3 {
                        ek[c] += ei[c];
                    }
                }
            }
            e[i] = [-ei[0], -ei[1], -ei[2]];
        }
        for (i, j) in pairs {
            let w = -dot(&e[i], &e[j]);
            if w < -tol {
                return Err(Error::InvalidInput("matrix is not positive definite".into()));
            }
            if w > tol {
                let rest: Vec<usize> = (0..4).filter(|&k| k != i && k != j).collect();
                let (p, q) = (e[rest[0]], e[rest[1]]);
                let cross = [
                    p[1] * q[2] - p[2] * q[1],
                    p[2] * q[0] - p[0] * q[2],
                    p[0] * q[1] - p[1] * q[0],
                ];
                out.push((w, cross));
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug)]
struct Arm {
    plus: u32,
    minus: u32,
    inv_a2: f64,
    weight: f64,
}

/// A discrete operator bound to a grid: for each node, a list of linear
/// pieces (frames or Bellman members), each a list of centred second
/// differences.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    op: Operator,
    arms: Vec<Arm>,
    groups: Vec<(u32, u32)>,
    node_groups: Vec<(u32, u32)>,
}

/// Linearisation of the discrete operator at one node: coefficients of the
/// active piece, `value = Σ coef·u`.
#[derive(Clone, Debug, Default)]
pub struct Linearization {
    pub diag: f64,
    pub off: Vec<(usize, f64)>,
}

impl DiscreteOperator {
    /// Builds stencils at every node that is not a Dirichlet node. Nodes where
    /// no piece fits (thin nodes of non-reflecting grids) get no stencil.
    pub fn new(grid: &Grid, op: Operator, dirs: &DirectionSet) -> Result<Self> {
        Self::with_sealed(grid, op, dirs, &[])
    }

    /// As [`new`](Self::new), but on grids symmetric in `x_n` an arm whose
    /// segment passes through `{x_n = 0}` next to a node flagged in `sealed`
    /// is not used (shorter multiples are tried first). Across a part of the
    /// plane that carries its own data, such as a slit, the even reflection
    /// has a kink and a crossing arm would leap over the data.
    pub fn with_sealed(grid: &Grid, op: Operator, dirs: &DirectionSet, sealed: &[bool]) -> Result<Self> {
        if !sealed.is_empty() && sealed.len() != grid.len() {
            return invalid("sealed mask does not match the grid");
        }
        if dirs.dim() != grid.dim() {
            return invalid("direction set and grid dimensions differ");
        }
        let bellman_pieces: Vec<Vec<(f64, [i32; 3])>> = match &op {
            Operator::Bellman(f) => {
                if f.dim() != grid.dim() {
                    return invalid("Bellman family and grid dimensions differ");
                }
                f.members()
                    .iter()
                    .map(selling_decomposition)
                    .collect::<Result<_>>()?
            }
            Operator::Pucci { .. } => Vec::new(),
        };
        let h2 = grid.h() * grid.h();
        let mut arms = Vec::new();
        let mut groups = Vec::new();
        let mut node_groups = Vec::with_capacity(grid.len());
        let dim = grid.dim();
        let seal_active = grid.symmetric_in_xn() && sealed.iter().any(|&b| b);
        let crosses_seal = |node: usize, off: &[i32; 3]| -> bool {
            let n = dim - 1;
            let m = grid.multi_index(node);
            let (k, o) = (m[n] as i64, off[n] as i64);
            if k == 0 || o.abs() <= k {
                return false;
            }
            // The arm towards −sign(o)·off leaves the upper half space; it
            // meets the plane after the fraction k/|o| of its length.
            let sgn = if o > 0 { -1.0 } else { 1.0 };
            let s = k as f64 / o.abs() as f64;
            let mut lo = [0i64; 3];
            let mut hi = [0i64; 3];
            for j in 0..n {
                let c = m[j] as f64 + sgn * s * off[j] as f64;
                let r = c.round();
                if (c - r).abs() < 1e-9 {
                    lo[j] = r as i64;
                    hi[j] = r as i64;
                } else {
                    lo[j] = c.floor() as i64;
                    hi[j] = c.ceil() as i64;
                }
            }
            (0..1usize << n).any(|corner| {
                let mut idx = [0usize; 3];
                for j in 0..n {
                    let t = if corner >> j & 1 == 1 { hi[j] } else { lo[j] };
                    if t < 0 || t >= grid.counts()[j] as i64 {
                        return false;
                    }
                    idx[j] = t as usize;
                }
                sealed[grid.index_of(&idx[..dim])]
            })
        };
        let fit = |node: usize, off: &[i32; 3]| -> Option<(u32, u32)> {
            if seal_active && crosses_seal(node, off) {
                return None;
            }
            let neg = [-off[0], -off[1], -off[2]];
            let p = grid.offset(node, &off[..dim])?;
            let m = grid.offset(node, &neg[..dim])?;
            Some((p as u32, m as u32))
        };
        for node in 0..grid.len() {
            let start = groups.len() as u32;
            if grid.role(node) != NodeRole::Dirichlet {
                match &op {
                    Operator::Pucci { .. } => {
                        'frames: for frame in dirs.frames() {
                            let mut staged = Vec::with_capacity(dim);
                            for d in frame {
                                let mut placed = None;
                                for arm in (1..=d.arm).rev() {
                                    let off = d.offset.map(|v| v * arm as i32);
                                    if let Some((p, m)) = fit(node, &off) {
                                        let a2 = d.norm2() * (arm * arm) as f64 * h2;
                                        placed = Some(Arm {
                                            plus: p,
                                            minus: m,
                                            inv_a2: 1.0 / a2,
                                            weight: 1.0,
                                        });
                                        break;
                                    }
                                }
                                match placed {
                                    Some(a) => staged.push(a),
                                    None => continue 'frames,
                                }
                            }
                            let a0 = arms.len() as u32;
                            arms.extend(staged);
                            groups.push((a0, arms.len() as u32));
                        }
                    }
                    Operator::Bellman(fam) => {
                        for (member, pieces) in fam.members().iter().zip(&bellman_pieces) {
                            let staged: Option<Vec<Arm>> = pieces
                                .iter()
                                .map(|(w, v)| {
                                    fit(node, v).map(|(p, m)| Arm {
                                        plus: p,
                                        minus: m,
                                        inv_a2: 1.0 / h2,
                                        weight: *w,
                                    })
                                })
                                .collect();
                            // Near the boundary a wide Selling stencil may not
                            // fit; fall back to the diagonal part on the axes.
                            let staged = staged.or_else(|| {
                                (0..dim)
                                    .map(|k| {
                                        let mut o = [0; 3];
                                        o[k] = 1;
                                        fit(node, &o).map(|(p, m)| Arm {
                                            plus: p,
                                            minus: m,
                                            inv_a2: 1.0 / h2,
                                            weight: member.get(k, k),
                                        })
                                    })
                                    .collect()
                            });
                            if let Some(staged) = staged {
                                let a0 = arms.len() as u32;
                                arms.extend(staged);
                                groups.push((a0, arms.len() as u32));
                            }
                        }
                    }
                }
            }
            node_groups.push((start, groups.len() as u32));
            if grid.role(node) == NodeRole::Interior && start == groups.len() as u32 {
                return Err(Error::StencilOutOfRange { node });
            }
        }
        Ok(DiscreteOperator {
            op,
            arms,
            groups,
            node_groups,
        })
    }

    pub fn operator(&self) -> &Operator {
        &self.op
    }

    /// Whether the operator has a stencil at the node.
    pub fn has_stencil(&self, node: usize) -> bool {
        let (a, b) = self.node_groups[node];
        b > a
    }

    /// Number of linear pieces available at the node.
    pub fn pieces(&self, node: usize) -> usize {
        let (a, b) = self.node_groups[node];
        (b - a) as usize
    }

    #[inline]
    fn group_value(&self, u: &[f64], node: usize, t: f64, g: usize) -> f64 {
        let (a, b) = self.groups[g];
        let mut s = 0.0;
        for arm in &self.arms[a as usize..b as usize] {
            let vp = if arm.plus as usize == node { t } else { u[arm.plus as usize] };
            let vm = if arm.minus as usize == node { t } else { u[arm.minus as usize] };
            let d = (vp + vm - 2.0 * t) * arm.inv_a2;
            s += match &self.op {
                Operator::Pucci { ell, which } => which.scalar(ell, d),
                Operator::Bellman(_) => arm.weight * d,
            };
        }
        s
    }

    /// Operator value at `node` when the node value is replaced by `t`, and
    /// the index of the active piece.
    pub fn eval_with(&self, u: &[f64], node: usize, t: f64) -> (f64, usize) {
        let (a, b) = self.node_groups[node];
        debug_assert!(b > a, "no stencil at node {node}");
        let maximize = self.op.is_max();
        let mut best = if maximize { f64::NEG_INFINITY } else { f64::INFINITY };
        let mut arg = a as usize;
        for g in a as usize..b as usize {
            let v = self.group_value(u, node, t, g);
            if (maximize && v > best) || (!maximize && v < best) {
                best = v;
                arg = g;
            }
        }
        (best, arg - a as usize)
    }

    pub fn eval(&self, u: &[f64], node: usize) -> f64 {
        self.eval_with(u, node, u[node]).0
    }

    /// Coefficients of the active piece `piece` at the current values `u`.
    pub fn linearize(&self, u: &[f64], node: usize, piece: usize) -> Linearization {
        self.linearize_at(u, node, u[node], piece)
    }

    /// As [`linearize`](Self::linearize) with the node value replaced by `t`.
    pub fn linearize_at(&self, u: &[f64], node: usize, t: f64, piece: usize) -> Linearization {
        let (a, _) = self.node_groups[node];
        let (s, e) = self.groups[a as usize + piece];
        let mut lin = Linearization::default();
        let val = |q: usize| if q == node { t } else { u[q] };
        for arm in &self.arms[s as usize..e as usize] {
            let (p, m) = (arm.plus as usize, arm.minus as usize);
            let w = match &self.op {
                Operator::Pucci { ell, which } => {
                    let d = (val(p) + val(m) - 2.0 * t) * arm.inv_a2;
                    which.weight(ell, d)
                }
                Operator::Bellman(_) => arm.weight,
            } * arm.inv_a2;
            lin.diag -= 2.0 * w;
            for q in [p, m] {
                if q == node {
                    lin.diag += w;
                } else {
                    lin.off.push((q, w));
                }
            }
        }
        lin
    }

    /// Lower bound for the slope `−∂(value)/∂u(node)` over all pieces.
    pub fn min_slope(&self, node: usize) -> f64 {
        let (a, b) = self.node_groups[node];
        let lam = match &self.op {
            Operator::Pucci { ell, .. } => ell.lambda(),
            Operator::Bellman(_) => 1.0,
        };
        (a as usize..b as usize)
            .map(|g| {
                let (s, e) = self.groups[g];
                self.arms[s as usize..e as usize]
                    .iter()
                    .map(|arm| {
                        let w = match &self.op {
                            Operator::Pucci { .. } => lam,
                            Operator::Bellman(_) => arm.weight,
                        };
                        let self_hits = (arm.plus as usize == node) as u32
                            + (arm.minus as usize == node) as u32;
                        w * arm.inv_a2 * (2 - self_hits) as f64
                    })
                    .sum::<f64>()
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Monotone wide-stencil approximation of `M±(D²f)` at every interior node,
/// returned as `(node, value)` pairs in node order.
pub fn discrete_extremal(
    grid: &Grid,
    f: &GridFunction,
    ell: Ellipticity,
    dirs: &DirectionSet,
    which: Extremal,
) -> Result<Vec<(usize, f64)>> {
    let op = DiscreteOperator::new(grid, Operator::Pucci { ell, which }, dirs)?;
    Ok(apply_interior(grid, &op, f))
}

/// Applies a discrete operator at every interior node, in parallel.
pub fn apply_interior(grid: &Grid, op: &DiscreteOperator, f: &GridFunction) -> Vec<(usize, f64)> {
    let u = f.values();
    (0..grid.len())
        .into_par_iter()
        .filter(|&i| grid.role(i) == NodeRole::Interior)
        .map(|i| (i, op.eval(u, i)))
        .collect()
}
