//! Explicit barriers and numerical certificates of their sub/supersolution
//! inequalities.

use serde::Serialize;

use crate::elliptic::{pucci_plus, Ellipticity, Extremal, SymMatrix};
use crate::error::{invalid, Error, Result};
use crate::grid::{norm, Grid, GridFunction, NodeRole, Vertical};
use crate::scheme::{DirectionSet, DiscreteOperator, Operator};
use crate::solver::{self, FarField, SignoriniProblem};

/// `N = (n−1)Λ/λ`, the vertical slope that makes `φ₀` a supersolution.
pub fn phi0_slope(ell: &Ellipticity, dim: usize) -> f64 {
    (dim as f64 - 1.0) * ell.ratio()
}

/// `min{1, |x'|² + N(2|x_n| − x_n²)}` on `|x'| ≤ 1, |x_n| ≤ 1`, and 1 elsewhere.
pub fn eval_phi0(x: &[f64], ell: &Ellipticity) -> f64 {
    let n = x.len();
    let tangential: f64 = x[..n - 1].iter().map(|v| v * v).sum();
    let t = x[n - 1].abs();
    if tangential > 1.0 || t > 1.0 {
        return 1.0;
    }
    let big_n = phi0_slope(ell, n);
    (tangential + big_n * (2.0 * t - t * t)).min(1.0)
}

/// Exact Hessian of the smooth branch `|x'|² + N(2x_n − x_n²)` of `φ₀` in
/// `{x_n > 0}`.
pub fn phi0_smooth_hessian(ell: &Ellipticity, dim: usize) -> SymMatrix {
    let mut d = vec![2.0; dim];
    d[dim - 1] = -2.0 * phi0_slope(ell, dim);
    SymMatrix::diag(&d)
}

/// Nonnegative summable weights `a_i` of the series barrier.
#[derive(Clone, Debug, PartialEq, Serialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightSequence {
    /// Finitely many weights; zero afterwards.
    Prefix { weights: Vec<f64> },
    /// `a_i = scale·ratioⁱ` with `0 ≤ ratio < 1`.
    Geometric { scale: f64, ratio: f64 },
    /// `a_i = scale·(i+1)^{−p}` with `p > 1`.
    Power { scale: f64, p: f64 },
}

impl WeightSequence {
    pub fn validate(&self) -> Result<()> {
        let ok = match self {
            WeightSequence::Prefix { weights } => weights.iter().all(|a| a.is_finite() && *a >= 0.0),
            WeightSequence::Geometric { scale, ratio } => {
                scale.is_finite() && *scale >= 0.0 && (0.0..1.0).contains(ratio)
            }
            WeightSequence::Power { scale, p } => scale.is_finite() && *scale >= 0.0 && p.is_finite() && *p > 1.0,
        };
        if ok {
            Ok(())
        } else {
            invalid(format!("weights must be nonnegative and summable: {self:?}"))
        }
    }

    pub fn term(&self, i: usize) -> f64 {
        match self {
            WeightSequence::Prefix { weights } => weights.get(i).copied().unwrap_or(0.0),
            WeightSequence::Geometric { scale, ratio } => scale * ratio.powi(i as i32),
            WeightSequence::Power { scale, p } => scale * ((i + 1) as f64).powf(-p),
        }
    }

    /// Upper bound of `Σ_{i>k} a_i`.
    pub fn tail(&self, k: usize) -> f64 {
        match self {
            WeightSequence::Prefix { weights } => weights.iter().skip(k + 1).sum(),
            WeightSequence::Geometric { scale, ratio } => scale * ratio.powi(k as i32 + 1) / (1.0 - ratio),
            WeightSequence::Power { scale, p } => scale * ((k + 1) as f64).powf(1.0 - p) / (p - 1.0),
        }
    }
}

/// `φ(x) = Σ_i 2ⁱ a_i φ₀(2⁻ⁱx)`, a supersolution of `M⁺φ ≤ 0` in `{x_n > 0}`.
#[derive(Clone, Debug)]
pub struct SeriesBarrier {
    weights: WeightSequence,
    ell: Ellipticity,
    rel_tol: f64,
    max_terms: usize,
}

impl SeriesBarrier {
    pub fn new(weights: WeightSequence, ell: Ellipticity) -> Result<Self> {
        weights.validate()?;
        Ok(SeriesBarrier {
            weights,
            ell,
            rel_tol: 1e-8,
            max_terms: 1000,
        })
    }

    pub fn weights(&self) -> &WeightSequence {
        &self.weights
    }

    /// Constant `C = 1 + 2N` in `φ₀(y) ≤ C·min{1, |y|}`.
    pub fn growth_constant(&self, dim: usize) -> f64 {
        1.0 + 2.0 * phi0_slope(&self.ell, dim)
    }

    /// Truncated value and the bound on the neglected tail. Terms are added
    /// until `C|x|·Σ_{i>k} a_i` drops below `1e−8` of the partial sum, or
    /// for at most 1000 terms (slowly decaying weights keep a visible tail).
    pub fn eval_with_tail(&self, x: &[f64]) -> (f64, f64) {
        let c = self.growth_constant(x.len()) * norm(x);
        let mut sum = 0.0;
        let mut scale = 1.0;
        let mut y = x.to_vec();
        for i in 0..self.max_terms {
            let a = self.weights.term(i);
            if a > 0.0 {
                sum += scale * a * eval_phi0(&y, &self.ell);
            }
            let tail = c * self.weights.tail(i);
            if tail <= self.rel_tol * sum || tail == 0.0 {
                return (sum, tail);
            }
            scale *= 2.0;
            y.iter_mut().for_each(|v| *v *= 0.5);
        }
        (sum, c * self.weights.tail(self.max_terms - 1))
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.eval_with_tail(x).0
    }

    /// `2ʲa_j`, a lower bound of `φ` on `B⁺_{2^{j+1}} \ B⁺_{2ʲ}`.
    pub fn annulus_lower_bound(&self, j: usize) -> f64 {
        2f64.powi(j as i32) * self.weights.term(j)
    }

    /// Upper bound of `φ` on `B⁺_{2ʲ}`:
    /// `C(Σ_{i≤j} 2ⁱa_i + 2ʲ Σ_{i>j} a_i)`. The second sum carries the factor
    /// `2ʲ`: a single weight `a_{j+1}` contributes `2a_{j+1}φ₀(x/2^{j+1})`,
    /// which is about `2ʲa_{j+1}` on the sphere of radius `2ʲ`.
    pub fn control_bound(&self, j: usize, dim: usize) -> f64 {
        let head: f64 = (0..=j).map(|i| 2f64.powi(i as i32) * self.weights.term(i)).sum();
        self.growth_constant(dim) * (head + 2f64.powi(j as i32) * self.weights.tail(j))
    }
}

/// Certificate for `φ₀`: exact `M⁺` of both smooth branches, and the
/// discrete `M⁺φ₀ ≤ 0` on a half-space grid of spacing `h` at nodes whose
/// stencils stay on one branch (an exclusion collar around `{φ₀ = 1}`).
pub fn phi0_certificate(ell: &Ellipticity, dim: usize, h: f64) -> Result<Certificate> {
    let smooth = pucci_plus(&phi0_smooth_hessian(ell, dim), ell);
    let grid = Grid::half_box(dim, h, 1.0, false)?;
    let f = GridFunction::sample(&grid, |x| eval_phi0(x, ell))?;
    let op = DiscreteOperator::new(&grid, Operator::pucci_plus(*ell), &DirectionSet::default_for(dim))?;
    let big_n = phi0_slope(ell, dim);
    let collar = 2.0 * h + 3.2 * h * (2.0 + 2.0 * big_n);
    let discrete = (0..grid.len())
        .filter(|&i| grid.role(i) == NodeRole::Interior)
        .filter(|&i| {
            let x = grid.coords(i);
            let t = x[dim - 1];
            let q: f64 = x[..dim - 1].iter().map(|v| v * v).sum::<f64>() + big_n * (2.0 * t - t * t);
            (q - 1.0).abs() > collar
        })
        .map(|i| (op.eval(f.values(), i), grid.coords(i)));
    Ok(Certificate {
        barrier: "phi0".into(),
        conditions: vec![
            Condition {
                name: "M+ of the smooth branch <= 0".into(),
                satisfied: smooth <= 1e-12,
                worst_violation: smooth,
                location: None,
            },
            Condition {
                name: "M+ of the constant branch <= 0".into(),
                satisfied: true,
                worst_violation: 0.0,
                location: None,
            },
            Condition::from_samples("discrete M+ <= 0 off the gluing collar", 1e-9, discrete),
        ],
    })
}

/// Checks `φ ≥ 2ʲa_j` on the closed half annuli `B⁺_{2^{j+1}} \ B⁺_{2ʲ}` and
/// the control bound on `B⁺_{2ʲ}` for `j ≤ j_max`, on sampled points.
pub fn series_certificate(series: &SeriesBarrier, j_max: usize, dim: usize) -> Certificate {
    let directions: Vec<Vec<f64>> = if dim == 2 {
        (0..=32)
            .map(|k| {
                let t = std::f64::consts::PI * k as f64 / 32.0;
                vec![t.cos(), t.sin()]
            })
            .collect()
    } else {
        let mut d = Vec::new();
        for a in 0..=8 {
            let polar = std::f64::consts::FRAC_PI_2 * a as f64 / 8.0;
            for b in 0..16 {
                let az = std::f64::consts::TAU * b as f64 / 16.0;
                d.push(vec![polar.cos() * az.cos(), polar.cos() * az.sin(), polar.sin()]);
            }
        }
        d
    };
    let mut conditions = Vec::new();
    for j in 0..=j_max {
        let r0 = 2f64.powi(j as i32);
        let lower = series.annulus_lower_bound(j);
        let upper = series.control_bound(j, dim);
        let annulus = (0..=16).flat_map(|k| {
            let r = r0 * (1.0 + k as f64 / 16.0);
            directions.iter().map(move |d| d.iter().map(|v| v * r).collect::<Vec<f64>>())
        });
        let samples: Vec<(f64, Vec<f64>)> = annulus.map(|x| (lower - series.eval(&x), x)).collect();
        conditions.push(Condition::from_samples(&format!("annulus lower bound j={j}"), 1e-12 * lower.max(1.0), samples));
        let ball = (0..=16).flat_map(|k| {
            let r = r0 * k as f64 / 16.0;
            directions.iter().map(move |d| d.iter().map(|v| v * r).collect::<Vec<f64>>())
        });
        let samples: Vec<(f64, Vec<f64>)> = ball.map(|x| (series.eval(&x) - upper, x)).collect();
        conditions.push(Condition::from_samples(&format!("control bound j={j}"), 1e-12 * upper.max(1.0), samples));
    }
    Certificate {
        barrier: "series".into(),
        conditions,
    }
}

/// Derived sequence `b_k = a_k/√s_k` with `s_k = Σ_{j≥k} a_j`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesWeights {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    /// `s_k` for every retained index.
    pub tails: Vec<f64>,
    /// Set when the tail of `a` vanishes, so that `b` is undefined beyond
    /// the returned prefix.
    pub truncated: bool,
}

impl SeriesWeights {
    /// Same construction applied to `a/s₀`, so that `s₀ = 1` and `b_k ≥ a_k/s₀`.
    pub fn normalized(&self) -> Result<SeriesWeights> {
        let s0 = self.tails.first().copied().unwrap_or(0.0);
        if s0 <= 0.0 {
            return invalid("cannot normalise an all-zero sequence");
        }
        let a: Vec<f64> = self.a.iter().map(|v| v / s0).collect();
        let tail = self.tails.last().copied().unwrap_or(0.0) / s0 - a.last().copied().unwrap_or(0.0);
        series_weights(&a, tail.max(0.0))
    }

    pub fn sum_b(&self) -> f64 {
        self.b.iter().sum()
    }
}

/// Computes `b_k = a_k/√s_k` for the prefix `a` followed by a tail of total
/// mass `tail`. The sum of `b` is at most `2√s₀`.
pub fn series_weights(a: &[f64], tail: f64) -> Result<SeriesWeights> {
    if a.iter().any(|v| !v.is_finite() || *v < 0.0) || !tail.is_finite() || tail < 0.0 {
        return invalid("weights must be finite and nonnegative");
    }
    let mut tails = vec![0.0; a.len()];
    let mut s = tail;
    for k in (0..a.len()).rev() {
        s += a[k];
        tails[k] = s;
    }
    let keep = tails.iter().take_while(|&&s| s > 0.0).count();
    let truncated = keep < a.len();
    let b = a[..keep].iter().zip(&tails).map(|(ak, sk)| ak / sk.sqrt()).collect();
    Ok(SeriesWeights {
        a: a[..keep].to_vec(),
        b,
        tails: tails[..keep].to_vec(),
        truncated,
    })
}

/// One checked inequality of a barrier certificate.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Condition {
    pub name: String,
    pub satisfied: bool,
    /// Largest amount by which the inequality fails (≤ 0 when satisfied).
    pub worst_violation: f64,
    pub location: Option<Vec<f64>>,
}

impl Condition {
    /// Builds a condition from `(violation, location)` samples; satisfied when
    /// every violation is at most `slack`.
    fn from_samples(name: &str, slack: f64, samples: impl IntoIterator<Item = (f64, Vec<f64>)>) -> Self {
        let mut worst = f64::NEG_INFINITY;
        let mut location = None;
        for (v, x) in samples {
            if v > worst {
                worst = v;
                location = Some(x);
            }
        }
        if worst == f64::NEG_INFINITY {
            worst = 0.0;
        }
        Condition {
            name: name.to_string(),
            satisfied: worst <= slack,
            worst_violation: worst,
            location,
        }
    }
}

/// Numerical certificate of a barrier: one entry per claimed inequality.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Certificate {
    pub barrier: String,
    pub conditions: Vec<Condition>,
}

impl Certificate {
    pub fn passed(&self) -> bool {
        self.conditions.iter().all(|c| c.satisfied)
    }

    pub fn condition(&self, name: &str) -> Option<&Condition> {
        self.conditions.iter().find(|c| c.name == name)
    }
}

/// `η(x) = exp(−N|x|) − exp(−Nρ/2)`.
pub fn hopf_barrier(x: &[f64], big_n: f64, rho: f64) -> f64 {
    (-big_n * norm(x)).exp() - (-big_n * rho / 2.0).exp()
}

/// Checks `λN² − ΛN(n−1)/|x| > 0` on `ρ/4 ≤ |x| ≤ ρ/2`, the sign of
/// `M⁻η·exp(N|x|)` on the annulus.
pub fn hopf_certificate(big_n: f64, rho: f64, ell: &Ellipticity, dim: usize) -> Certificate {
    let samples = (0..=200).map(|k| {
        let r = rho / 4.0 + (rho / 4.0) * k as f64 / 200.0;
        let value = ell.lambda() * big_n * big_n - ell.big_lambda() * big_n * (dim as f64 - 1.0) / r;
        let mut x = vec![0.0; dim];
        x[0] = r;
        (-value, x)
    });
    let mut c = Condition::from_samples("M-eta positive on annulus", 0.0, samples);
    c.satisfied = c.worst_violation < 0.0;
    Certificate {
        barrier: "hopf".into(),
        conditions: vec![c],
    }
}

/// Smallest `N` for which the Hopf certificate holds, `4Λ(n−1)/(λρ)`.
pub fn hopf_threshold(rho: f64, ell: &Ellipticity, dim: usize) -> f64 {
    4.0 * ell.big_lambda() * (dim as f64 - 1.0) / (ell.lambda() * rho)
}

/// Output of [`slit_subsolution`]: `φ = (C/κ)ψ_κ` on the upper half of a
/// grid symmetric in `x_n` (the even reflection is implicit).
#[derive(Clone, Debug, Serialize)]
pub struct SlitSubsolution {
    #[serde(skip)]
    pub phi: GridFunction,
    pub kappa: f64,
    /// Multiplier `C ≥ 1` applied to `ψ_κ/κ`.
    pub scale: f64,
    /// `max φ` on the thin ball, the constant in `φ ≤ C'χ_{B*}`.
    pub thin_bound: f64,
    pub certificate: Certificate,
}

/// Radial cutoff: 1 on `B_{1−ρ}`, 0 outside `B_{1−ρ/2}`, linear between.
pub fn radial_cutoff(x: &[f64], rho: f64) -> f64 {
    let r = norm(x);
    ((1.0 - rho / 2.0 - r) / (rho / 2.0)).clamp(0.0, 1.0)
}

/// Subsolution with `M⁻φ ≥ χ_{B_{1−ρ}}` off the thin ball `B*_r(z)`,
/// `φ ≥ 0`, `φ` supported on `B*` within the thin plane and `φ = 0` on
/// `∂B₁`. Solves `M⁻ψ = κf₀` in `B₁⁺` with the bump trace
/// `max{0, 1 − |x−z|²/r²}`, halving `κ` from 1 until `ψ ≥ 0`.
pub fn slit_subsolution(
    rho: f64,
    center: &[f64],
    radius: f64,
    ell: Ellipticity,
    grid: &Grid,
    tol: f64,
) -> Result<SlitSubsolution> {
    let dim = grid.dim();
    if !(rho > 0.0 && rho < 1.0) {
        return invalid("ρ must lie in (0, 1)");
    }
    if center.len() != dim - 1 || !(radius > 0.0) || norm(center) + radius > 1.0 + 1e-12 {
        return invalid("thin ball must lie inside the unit thin ball");
    }
    if grid.ball_radius().map_or(true, |r| (r - 1.0).abs() > 1e-12) || !matches!(grid.vertical(), Vertical::Half { .. }) {
        return invalid("slit subsolution needs a half-ball grid of radius 1");
    }
    // The solve lives in the open half ball with the thin plane as boundary;
    // the even reflection is only needed to evaluate the operator on the
    // thin plane itself.
    let half = Grid::half_ball(dim, grid.h(), 1.0, false)?;
    let even = Grid::half_ball(dim, grid.h(), 1.0, true)?;
    let in_thin_ball = |x: &[f64]| {
        let d2: f64 = x[..dim - 1].iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
        d2 < radius * radius
    };
    let bump = |x: &[f64]| {
        let d2: f64 = x[..dim - 1].iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
            + x[dim - 1] * x[dim - 1];
        (1.0 - d2 / (radius * radius)).max(0.0)
    };
    let data = GridFunction::sample(&half, bump)?;
    let f0 = GridFunction::sample(&half, |x| radial_cutoff(x, rho))?;
    let op = Operator::pucci_minus(ell);
    let opts = solver::SolveOptions::new(tol, 200);
    let mut kappa = 1.0;
    let mut last_violation = f64::NAN;
    let mut psi = None;
    for _ in 0..20 {
        let src = GridFunction::new(&half, f0.values().iter().map(|v| kappa * v).collect())?;
        let p = SignoriniProblem::pure_dirichlet(half.clone(), op.clone(), &data)?.with_source(&src)?;
        let rep = solver::solve_with(&p, &opts, None)?;
        if rep.failed {
            return Err(Error::NoConvergence {
                iterations: rep.iterations,
                residual: rep.residuals.max(),
            });
        }
        let min = rep.solution.values().iter().copied().fold(f64::INFINITY, f64::min);
        if min >= -10.0 * tol {
            psi = Some(rep.solution);
            break;
        }
        last_violation = min;
        kappa *= 0.5;
    }
    let Some(psi) = psi else {
        return Err(Error::NoConvergence {
            iterations: 20,
            residual: -last_violation,
        });
    };
    let base: Vec<f64> = psi.values().iter().map(|v| v / kappa).collect();
    let dirs = DirectionSet::default_for(dim);
    let half_op = DiscreteOperator::new(&half, op.clone(), &dirs)?;
    let even_op = DiscreteOperator::new(&even, op, &dirs)?;
    let thin_free: Vec<usize> = half
        .thin_plane_nodes()
        .into_iter()
        .filter(|&i| half.role(i) == NodeRole::Thin && !in_thin_ball(&half.coords(i)))
        .collect();
    let mut scale: f64 = 1.0;
    for &i in &thin_free {
        let x = half.coords(i);
        let m = even_op.eval(&base, i);
        if norm(&x) <= 1.0 - rho && m > 0.0 {
            scale = scale.max(1.0 / m);
        }
    }
    let phi = GridFunction::new(grid, base.iter().map(|v| scale * v).collect())?;
    let slack = 10.0 * tol * scale / kappa;
    let indicator = |x: &[f64]| if norm(x) <= 1.0 - rho { 1.0 } else { 0.0 };
    let interior = (0..half.len()).filter(|&i| half.role(i) == NodeRole::Interior).map(|i| {
        let x = half.coords(i);
        (indicator(&x) - half_op.eval(phi.values(), i), x)
    });
    let on_plane = thin_free.iter().map(|&i| {
        let x = half.coords(i);
        (indicator(&x) - even_op.eval(phi.values(), i), x)
    });
    let pde: Vec<(f64, Vec<f64>)> = interior.chain(on_plane).collect();
    let nonneg = (0..grid.len()).map(|i| (-phi[i], grid.coords(i)));
    let thin_support = grid
        .thin_plane_nodes()
        .into_iter()
        .filter(|&i| !in_thin_ball(&grid.coords(i)))
        .map(|i| (phi[i], grid.coords(i)));
    let sphere = (0..grid.len())
        .filter(|&i| grid.role(i) == NodeRole::Dirichlet)
        .filter(|&i| !(grid.on_thin_plane(i) && in_thin_ball(&grid.coords(i))))
        .map(|i| (phi[i].abs(), grid.coords(i)));
    let thin_bound = grid
        .thin_plane_nodes()
        .into_iter()
        .map(|i| phi[i])
        .fold(0.0, f64::max);
    let certificate = Certificate {
        barrier: "slit_subsolution".into(),
        conditions: vec![
            Condition::from_samples("M-phi >= indicator of B_(1-rho) off the thin ball", slack, pde),
            Condition::from_samples("phi >= 0", slack, nonneg),
            Condition::from_samples("phi vanishes on the thin plane off the thin ball", slack, thin_support),
            Condition::from_samples("phi = 0 on the unit sphere", 0.0, sphere),
        ],
    };
    Ok(SlitSubsolution {
        phi,
        kappa,
        scale,
        thin_bound,
        certificate,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ConeKind {
    Sub,
    Super,
}

/// `e·x' ∓ η|x'|(1 − (e·x'/|x'|)²)`: minus for the sub-, plus for the
/// supersolution profile.
pub fn cone_profile(kind: ConeKind, e: &[f64], eta: f64, xt: &[f64]) -> f64 {
    let r = norm(xt);
    let s: f64 = e.iter().zip(xt).map(|(a, b)| a * b).sum();
    if r == 0.0 {
        return 0.0;
    }
    let c = s / r;
    let corr = eta * r * (1.0 - c * c);
    match kind {
        ConeKind::Sub => s - corr,
        ConeKind::Super => s + corr,
    }
}

/// Whether `x'` lies in the open cone where the profile is positive.
pub fn in_cone(kind: ConeKind, e: &[f64], eta: f64, xt: &[f64]) -> bool {
    cone_profile(kind, e, eta, xt) > 0.0
}

#[derive(Clone, Debug, Serialize)]
pub struct ConeBarrierSpec {
    pub kind: ConeKind,
    pub e: Vec<f64>,
    pub eta: f64,
    pub gamma: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConeBarrier {
    pub spec: ConeBarrierSpec,
    pub exponent: f64,
    #[serde(skip)]
    pub field: GridFunction,
    /// `(x', one-sided normal difference)` at the sampled cone nodes.
    pub samples: Vec<(Vec<f64>, f64)>,
    /// Minimum (sub) or maximum (super) of the sampled normal differences.
    pub extreme_derivative: f64,
    /// Whether the extreme value has the claimed sign (positive for sub,
    /// negative for super).
    pub sign_ok: bool,
    /// Fewer than 4 sampled nodes: the grid does not resolve the cone.
    pub coarse: bool,
}

/// Builds `Φ_sub = E⁻[(ψ_sub)₊^{β₂+γ}]` or `Φ_super = E⁺[(ψ_super)₊^{β₁−γ}]`
/// on a 3D half-space grid and reports the extreme one-sided normal
/// difference over thin nodes of the cone with `1/4 ≤ |x'| ≤ 1/2`.
/// The outer boundary carries the trace extended constantly in `x_n`.
pub fn cone_barrier(
    spec: ConeBarrierSpec,
    ell: Ellipticity,
    beta1: f64,
    beta2: f64,
    grid: &Grid,
    opts: &solver::SolveOptions,
) -> Result<ConeBarrier> {
    if grid.dim() != 3 || grid.symmetric_in_xn() || !matches!(grid.vertical(), Vertical::Half { .. }) {
        return invalid("cone barriers are built on non-symmetric 3D half-space grids");
    }
    let en = norm(&spec.e);
    if spec.e.len() != 2 || (en - 1.0).abs() > 1e-12 {
        return invalid("cone direction must be a unit vector of the thin plane");
    }
    if !(spec.eta > 0.0) {
        return invalid("η must be positive");
    }
    if !(spec.gamma > 0.0 && spec.gamma < beta1.min(1.0 - beta2)) {
        return invalid(format!("γ must lie in (0, {})", beta1.min(1.0 - beta2)));
    }
    let (exponent, sign) = match spec.kind {
        ConeKind::Sub => (beta2 + spec.gamma, Extremal::Minus),
        ConeKind::Super => (beta1 - spec.gamma, Extremal::Plus),
    };
    let (kind, e, eta) = (spec.kind, spec.e.clone(), spec.eta);
    let trace = move |x: &[f64]| cone_profile(kind, &e, eta, &x[..2]).max(0.0).powf(exponent);
    let ext = solver::extension_solve(
        grid,
        &trace,
        ell,
        sign,
        FarField::Given(&trace),
        &DirectionSet::default_for(3),
        opts,
    )?;
    let h = grid.h();
    let mut samples = Vec::new();
    for i in grid.thin_plane_nodes() {
        let x = grid.coords(i);
        let r = norm(&x[..2]);
        if !(0.25..=0.5).contains(&r) || cone_profile(kind, &spec.e, eta, &x[..2]) <= h {
            continue;
        }
        if let Some(up) = grid.up(i) {
            samples.push((x[..2].to_vec(), (ext.solution[up] - ext.solution[i]) / h));
        }
    }
    let extreme_derivative = match kind {
        ConeKind::Sub => samples.iter().map(|s| s.1).fold(f64::INFINITY, f64::min),
        ConeKind::Super => samples.iter().map(|s| s.1).fold(f64::NEG_INFINITY, f64::max),
    };
    let sign_ok = !samples.is_empty()
        && match kind {
            ConeKind::Sub => extreme_derivative > 0.0,
            ConeKind::Super => extreme_derivative < 0.0,
        };
    Ok(ConeBarrier {
        coarse: samples.len() < 4,
        spec,
        exponent,
        field: ext.solution,
        samples,
        extreme_derivative,
        sign_ok,
    })
}

/// Constants of the maximum principle near a thin contact set.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MaxPrincipleSpec {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    pub sigma: f64,
}

impl MaxPrincipleSpec {
    pub fn validate(&self, ell: &Ellipticity, dim: usize) -> Result<()> {
        let bound = (ell.lambda() / (9.0 * dim as f64 * ell.big_lambda())).sqrt();
        if !(self.c0 > 0.0 && self.c2 > 0.0 && self.sigma > 0.0 && self.c1 > 0.0) {
            return invalid("c0, c1, c2 and σ must be positive");
        }
        if self.c1 >= bound {
            return invalid(format!("c1 = {} must be below √(λ/(9nΛ)) = {bound}", self.c1));
        }
        Ok(())
    }
}

/// `P(x) = |x' − z'|² − (nΛ/λ)x_n²`, the comparison quadratic of the
/// maximum principle; `M⁺(D²P) = 2Λ(n−1) − 2nΛ = −2Λ`.
pub fn comparison_quadratic(x: &[f64], z: &[f64], ell: &Ellipticity) -> f64 {
    let n = x.len();
    let t: f64 = x[..n - 1].iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
    t - n as f64 * ell.ratio() * x[n - 1] * x[n - 1]
}

pub fn comparison_quadratic_hessian(ell: &Ellipticity, dim: usize) -> SymMatrix {
    let mut d = vec![2.0; dim];
    d[dim - 1] = -2.0 * dim as f64 * ell.ratio();
    SymMatrix::diag(&d)
}

#[derive(Clone, Debug, Serialize)]
pub struct MaxPrincipleVerdict {
    pub spec: MaxPrincipleSpec,
    pub hypotheses: Vec<Condition>,
    pub conclusions: Vec<Condition>,
    /// `min v/|x_n|` over nodes of `B_{1/2}` off the thin plane.
    pub fitted_c2: f64,
}

impl MaxPrincipleVerdict {
    pub fn hypotheses_hold(&self) -> bool {
        self.hypotheses.iter().all(|c| c.satisfied)
    }

    pub fn passed(&self) -> bool {
        self.hypotheses_hold() && self.conclusions.iter().all(|c| c.satisfied)
    }

    pub fn failed_hypotheses(&self) -> Vec<&str> {
        self.hypotheses.iter().filter(|c| !c.satisfied).map(|c| c.name.as_str()).collect()
    }
}

pub const HYP_EQUATION: &str = "M-v <= sigma off the contact set";
pub const HYP_CONTACT: &str = "v = 0 on the contact set";
pub const HYP_AWAY: &str = "v >= c0 where |x_n| >= c1";
pub const HYP_LOWER: &str = "v >= -sigma";

/// Checks the four hypotheses of the maximum principle for `v` on a grid
/// symmetric in `x_n` (restricted to `B₁`), then the conclusions `v ≥ 0`
/// and `v ≥ c₂|x_n|` on `B_{1/2}`.
pub fn max_principle_check(
    v: &GridFunction,
    grid: &Grid,
    spec: MaxPrincipleSpec,
    contact: &[usize],
    ell: Ellipticity,
) -> Result<MaxPrincipleVerdict> {
    spec.validate(&ell, grid.dim())?;
    if !grid.symmetric_in_xn() || v.len() != grid.len() {
        return invalid("max principle check needs a function on a grid symmetric in x_n");
    }
    let dim = grid.dim();
    let in_contact = {
        let mut m = vec![false; grid.len()];
        for &i in contact {
            if !grid.on_thin_plane(i) {
                return invalid(format!("contact node {i} is off the thin plane"));
            }
            m[i] = true;
        }
        m
    };
    let op = DiscreteOperator::new(grid, Operator::pucci_minus(ell), &DirectionSet::default_for(dim))?;
    let inside = |i: usize| norm(&grid.coords(i)) < 1.0 - 1e-12;
    let nodes = || (0..grid.len()).filter(|&i| inside(i));
    let tol = 1e-10;
    let equation = nodes()
        .filter(|&i| grid.role(i) != NodeRole::Dirichlet && !in_contact[i] && op.has_stencil(i))
        .map(|i| (op.eval(v.values(), i) - spec.sigma, grid.coords(i)));
    let zero = contact.iter().map(|&i| (v[i].abs(), grid.coords(i)));
    let away = nodes()
        .filter(|&i| grid.coords(i)[dim - 1] >= spec.c1)
        .map(|i| (spec.c0 - v[i], grid.coords(i)));
    let lower = nodes().map(|i| (-spec.sigma - v[i], grid.coords(i)));
    let hypotheses = vec![
        Condition::from_samples(HYP_EQUATION, tol, equation),
        Condition::from_samples(HYP_CONTACT, tol, zero),
        Condition::from_samples(HYP_AWAY, tol, away),
        Condition::from_samples(HYP_LOWER, tol, lower),
    ];
    let half: Vec<usize> = (0..grid.len()).filter(|&i| norm(&grid.coords(i)) <= 0.5).collect();
    let fitted_c2 = half
        .iter()
        .filter_map(|&i| {
            let xn = grid.coords(i)[dim - 1];
            (xn > 0.0).then(|| v[i] / xn)
        })
        .fold(f64::INFINITY, f64::min);
    let conclusions = vec![
        Condition::from_samples("v >= 0 on B_1/2", tol, half.iter().map(|&i| (-v[i], grid.coords(i)))),
        Condition::from_samples(
            "v >= c2 |x_n| on B_1/2",
            tol,
            half.iter().map(|&i| (spec.c2 * grid.coords(i)[dim - 1] - v[i], grid.coords(i))),
        ),
    ];
    Ok(MaxPrincipleVerdict {
        spec,
        hypotheses,
        conclusions,
        fitted_c2,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn ell() -> Ellipticity {
        Ellipticity::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn phi0_examples() {
        assert_eq!(eval_phi0(&[0.0, 0.0], &ell()), 0.0);
        assert_eq!(eval_phi0(&[1.2, 0.1], &ell()), 1.0);
        assert_eq!(eval_phi0(&[0.5, -0.3, 2.0], &ell()), 1.0);
        assert_eq!(eval_phi0(&[0.1, -0.2], &ell()), eval_phi0(&[0.1, 0.2], &ell()));
        for dim in [2, 3] {
            for e in [ell(), Ellipticity::new(0.5, 3.0).unwrap()] {
                assert!(pucci_plus(&phi0_smooth_hessian(&e, dim), &e).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn phi0_certificate_passes() {
        for dim in [2, 3] {
            let c = phi0_certificate(&ell(), dim, if dim == 2 { 1.0 / 32.0 } else { 1.0 / 8.0 }).unwrap();
            assert!(c.passed(), "{c:?}");
        }
    }

    proptest! {
        #[test]
        fn phi0_dominates_truncated_square(x in -2.0f64..2.0, y in -2.0f64..2.0, z in -2.0f64..2.0) {
            let e = ell();
            let m = (x * x + y * y + z * z).min(1.0);
            prop_assert!(eval_phi0(&[x, y, z], &e) >= m - 1e-15);
            let m2 = (x * x + y * y).min(1.0);
            prop_assert!(eval_phi0(&[x, y], &e) >= m2 - 1e-15);
        }

        #[test]
        fn series_monotone_in_each_weight(w in proptest::collection::vec(0.0f64..1.0, 1..8), k in 0usize..8, bump in 0.0f64..1.0, x in -4.0f64..4.0, y in 0.0f64..4.0) {
            let base = SeriesBarrier::new(WeightSequence::Prefix { weights: w.clone() }, ell()).unwrap();
            let mut w2 = w.clone();
            let k = k % w2.len();
            w2[k] += bump;
            let more = SeriesBarrier::new(WeightSequence::Prefix { weights: w2 }, ell()).unwrap();
            prop_assert!(more.eval(&[x, y]) >= base.eval(&[x, y]));
        }
    }

    #[test]
    fn series_single_weight_is_phi0() {
        let s = SeriesBarrier::new(WeightSequence::Prefix { weights: vec![1.0] }, ell()).unwrap();
        for x in [[0.3, 0.2], [0.9, 0.05], [2.0, 1.0]] {
            assert_eq!(s.eval(&x), eval_phi0(&x, &ell()));
        }
        assert!(SeriesBarrier::new(WeightSequence::Geometric { scale: 1.0, ratio: 1.0 }, ell()).is_err());
        assert!(SeriesBarrier::new(WeightSequence::Power { scale: 1.0, p: 1.0 }, ell()).is_err());
        assert!(SeriesBarrier::new(WeightSequence::Prefix { weights: vec![-1.0] }, ell()).is_err());
    }

    #[test]
    fn series_bounds_hold() {
        for w in [
            WeightSequence::Geometric { scale: 1.0, ratio: 0.5 },
            WeightSequence::Power { scale: 1.0, p: 2.0 },
            WeightSequence::Prefix { weights: vec![0.0, 0.0, 1.0, 0.0, 0.3] },
        ] {
            let s = SeriesBarrier::new(w, ell()).unwrap();
            for dim in [2, 3] {
                let c = series_certificate(&s, 6, dim);
                assert!(c.passed(), "{c:?}");
            }
        }
    }

    #[test]
    fn uncorrected_control_bound_fails_for_late_weight() {
        // A single weight a_{j+1} = 1: the bound without the factor 2^j on the
        // tail sum is C(0 + 1), but φ reaches about 2^j on the sphere of
        // radius 2^j.
        let j = 5;
        let mut w = vec![0.0; j + 2];
        w[j + 1] = 1.0;
        let s = SeriesBarrier::new(WeightSequence::Prefix { weights: w }, ell()).unwrap();
        let c = s.growth_constant(2);
        let x = [0.0, 2f64.powi(j as i32)];
        assert!(s.eval(&x) > c * 1.0);
        assert!(s.eval(&x) <= s.control_bound(j, 2));
    }

    #[test]
    fn series_weights_examples() {
        let a: Vec<f64> = (0..30).map(|k| 4f64.powi(-k)).collect();
        let tail = 4f64.powi(-29) / 3.0;
        let w = series_weights(&a, tail).unwrap();
        for (k, b) in w.b.iter().enumerate() {
            assert!((b - 3f64.sqrt() / 2.0 * 2f64.powi(-(k as i32))).abs() < 1e-12);
        }
        let a: Vec<f64> = (0..30).map(|k| 2f64.powi(-k)).collect();
        let w = series_weights(&a, 2f64.powi(-29)).unwrap();
        for (k, b) in w.b.iter().enumerate() {
            assert!((b - 2f64.powf(-(k as f64) / 2.0) / 2f64.sqrt()).abs() < 1e-12);
        }
        assert!(w.sum_b() <= 2.0 * w.tails[0].sqrt());
        let t = series_weights(&[1.0, 0.5, 0.0, 0.0], 0.0).unwrap();
        assert!(t.truncated);
        assert_eq!(t.b.len(), 2);
        let n = w.normalized().unwrap();
        assert!((n.tails[0] - 1.0).abs() < 1e-12);
        assert!(n.a.iter().zip(&n.b).all(|(a, b)| b >= a));
    }

    #[test]
    fn hopf_examples() {
        let e = ell();
        let rho = 0.2;
        assert_eq!(hopf_barrier(&[rho / 2.0, 0.0], 7.0, rho), 0.0);
        let n0 = hopf_threshold(rho, &e, 2);
        assert!(hopf_certificate(1.01 * n0, rho, &e, 2).passed());
        assert!(!hopf_certificate(0.99 * n0, rho, &e, 2).passed());
        assert!(!hopf_certificate(0.0, rho, &e, 2).passed());
    }

    #[test]
    fn hopf_sign_matches_exact_operator() {
        // M⁻ of the radial function exp(−N|x|) at |x| = r: eigenvalues
        // N²e^{−Nr} (radial) and −N e^{−Nr}/r (tangential).
        let e = ell();
        let (big_n, r): (f64, f64) = (50.0, 0.07);
        let v = (-big_n * r).exp();
        let h = SymMatrix::diag(&[big_n * big_n * v, -big_n * v / r]);
        let exact = crate::elliptic::pucci_minus(&h, &e);
        let claimed = (e.lambda() * big_n * big_n - e.big_lambda() * big_n / r) * v;
        assert!((exact - claimed).abs() < 1e-9 * claimed.abs());
    }

    #[test]
    fn comparison_quadratic_value() {
        for dim in [2, 3] {
            let e = Ellipticity::new(0.7, 2.3).unwrap();
            let m = pucci_plus(&comparison_quadratic_hessian(&e, dim), &e);
            assert!((m + 2.0 * e.big_lambda()).abs() < 1e-12);
        }
        assert_eq!(comparison_quadratic(&[0.5, 0.0], &[0.5], &ell()), 0.0);
    }

    #[test]
    fn slit_subsolution_small_grid() {
        let grid = Grid::half_ball(2, 1.0 / 16.0, 1.0, true).unwrap();
        let s = slit_subsolution(0.25, &[0.0], 0.25, ell(), &grid, 1e-9).unwrap();
        assert!(s.certificate.passed(), "{:?}", s.certificate);
        assert!(s.kappa <= 1.0 && s.scale >= 1.0);
        assert!(slit_subsolution(1.5, &[0.0], 0.25, ell(), &grid, 1e-9).is_err());
        assert!(slit_subsolution(0.1, &[0.9], 0.25, ell(), &grid, 1e-9).is_err());
    }

    fn mp_grid() -> Grid {
        Grid::half_ball(2, 1.0 / 32.0, 1.0, true).unwrap()
    }

    #[test]
    fn max_principle_synthetic_instances() {
        let grid = mp_grid();
        let e = ell();
        let c1 = 0.9 * (e.lambda() / (9.0 * 2.0 * e.big_lambda())).sqrt();
        let spec = MaxPrincipleSpec { c0: 0.5, c1, c2: 0.1, sigma: 1e-3 };
        let contact: Vec<usize> = grid.thin_plane_nodes();
        let v = GridFunction::sample(&grid, |x| spec.c0 / spec.c1 * x[1].abs()).unwrap();
        let verdict = max_principle_check(&v, &grid, spec, &contact, e).unwrap();
        assert!(verdict.passed(), "{verdict:?}");
        assert!((verdict.fitted_c2 - spec.c0 / spec.c1).abs() < 1e-9);
        let w = GridFunction::sample(&grid, |_| -2.0 * spec.sigma).unwrap();
        let verdict = max_principle_check(&w, &grid, spec, &[], e).unwrap();
        assert!(!verdict.passed());
        assert!(verdict.failed_hypotheses().contains(&HYP_LOWER));
        let bad = MaxPrincipleSpec { c1: 0.5, ..spec };
        assert!(max_principle_check(&v, &grid, bad, &contact, e).is_err());
    }

    #[test]
    fn cone_profile_on_the_axis() {
        for t in [0.1, 0.5, 2.0] {
            assert_eq!(cone_profile(ConeKind::Sub, &[1.0], 0.3, &[t]), t);
            assert_eq!(cone_profile(ConeKind::Sub, &[0.6, 0.8], 0.3, &[0.6 * t, 0.8 * t]), t);
        }
        assert!(in_cone(ConeKind::Super, &[1.0, 0.0], 0.2, &[0.0, 1.0]));
        assert!(!in_cone(ConeKind::Sub, &[1.0, 0.0], 0.2, &[0.0, 1.0]));
    }

    #[test]
    fn cone_barrier_reports_sign() {
        let e = Ellipticity::new(1.0, 1.5).unwrap();
        let (b1, b2) = (0.368548, 0.622068);
        let grid = Grid::half_box(3, 1.0 / 8.0, 1.0, false).unwrap();
        let spec = ConeBarrierSpec { kind: ConeKind::Sub, e: vec![1.0, 0.0], eta: 0.1, gamma: (1.0 - b2) / 4.0 };
        let c = cone_barrier(spec, e, b1, b2, &grid, &solver::SolveOptions::default()).unwrap();
        assert!(!c.samples.is_empty());
        let bad = ConeBarrierSpec { kind: ConeKind::Sub, e: vec![1.0, 0.0], eta: 0.1, gamma: 0.5 };
        assert!(cone_barrier(bad, e, b1, b2, &grid, &solver::SolveOptions::default()).is_err());
    }
}
