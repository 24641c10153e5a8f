//! Exact evaluation of the Pucci extremal operators and of convex Bellman
//! operators on symmetric 2×2 and 3×3 matrices.
//!
//! With ellipticity constants `0 < λ ≤ Λ` and eigenvalues `μ_i` of `H`,
//!
//! ```text
//! M⁺(H) = Λ Σ μ_i⁺ − λ Σ μ_i⁻        M⁻(H) = λ Σ μ_i⁺ − Λ Σ μ_i⁻
//! ```
//!
//! A convex operator with `F(0) = 0` is represented as a supremum of linear
//! operators `tr(A_α H)` over a finite family of coefficient matrices whose
//! spectra lie in `[λ, Λ]`.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Off-diagonal mass (relative to the Frobenius norm) at which the Jacobi
/// sweep stops.
const JACOBI_TOL: f64 = 1e-13;

/// Ellipticity constants `0 < λ ≤ Λ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "EllipticityRepr", into = "EllipticityRepr")]
pub struct Ellipticity {
    lower: f64,
    upper: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EllipticityRepr {
    lambda: f64,
    #[serde(rename = "Lambda")]
    big_lambda: f64,
}

impl TryFrom<EllipticityRepr> for Ellipticity {
    type Error = Error;
    fn try_from(r: EllipticityRepr) -> Result<Self> {
        Ellipticity::new(r.lambda, r.big_lambda)
    }
}

impl From<Ellipticity> for EllipticityRepr {
    fn from(e: Ellipticity) -> Self {
        EllipticityRepr {
            lambda: e.lower,
            big_lambda: e.upper,
        }
    }
}

impl Ellipticity {
    pub fn new(lambda: f64, big_lambda: f64) -> Result<Self> {
        if !(lambda.is_finite() && big_lambda.is_finite()) || lambda <= 0.0 {
            return invalid(format!(
                "ellipticity constants must be finite and positive, got λ={lambda}, Λ={big_lambda}"
            ));
        }
        if lambda > big_lambda {
            return invalid(format!("λ={lambda} exceeds Λ={big_lambda}"));
        }
        Ok(Ellipticity {
            lower: lambda,
            upper: big_lambda,
        })
    }

    /// The Laplacian case `λ = Λ = 1`.
    pub fn laplacian() -> Self {
        Ellipticity {
            lower: 1.0,
            upper: 1.0,
        }
    }

    /// Lower constant λ.
    pub fn lambda(&self) -> f64 {
        self.lower
    }

    /// Upper constant Λ.
    pub fn big_lambda(&self) -> f64 {
        self.upper
    }

    pub fn ratio(&self) -> f64 {
        self.upper / self.lower
    }
}

/// Which extremal operator.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Extremal {
    Plus,
    Minus,
}

impl Extremal {
    /// Weight applied to a signed directional second derivative `d`.
    #[inline]
    pub fn weight(self, ell: &Ellipticity, d: f64) -> f64 {
        match (self, d >= 0.0) {
            (Extremal::Plus, true) | (Extremal::Minus, false) => ell.upper,
            (Extremal::Plus, false) | (Extremal::Minus, true) => ell.lower,
        }
    }

    /// `Λ d⁺ − λ d⁻` for `Plus`, `λ d⁺ − Λ d⁻` for `Minus`.
    #[inline]
    pub fn scalar(self, ell: &Ellipticity, d: f64) -> f64 {
        self.weight(ell, d) * d
    }

    pub fn flip(self) -> Self {
        match self {
            Extremal::Plus => Extremal::Minus,
            Extremal::Minus => Extremal::Plus,
        }
    }
}

/// Symmetric real matrix of dimension 2 or 3.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SymMatrix {
    dim: usize,
    a: [[f64; 3]; 3],
}

impl SymMatrix {
    /// Builds a matrix from its rows, rejecting asymmetric input.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.len();
        if !(2..=3).contains(&dim) || rows.iter().any(|r| r.len() != dim) {
            return invalid(format!("expected a square 2×2 or 3×3 matrix, got {dim} rows"));
        }
        let mut a = [[0.0; 3]; 3];
        let mut scale = 1.0f64;
        for (i, row) in rows.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !v.is_finite() {
                    return invalid("matrix entries must be finite");
                }
                a[i][j] = v;
                scale = scale.max(v.abs());
            }
        }
        let mut asym = 0.0f64;
        for i in 0..dim {
            for j in 0..i {
                asym = asym.max((a[i][j] - a[j][i]).abs());
            }
        }
        if asym > 1e-12 * scale {
            return Err(Error::NonSymmetric(asym));
        }
        for i in 0..dim {
            for j in 0..i {
                let m = 0.5 * (a[i][j] + a[j][i]);
                a[i][j] = m;
                a[j][i] = m;
            }
        }
        Ok(SymMatrix { dim, a })
    }

    pub fn zeros(dim: usize) -> Self {
        assert!((2..=3).contains(&dim), "dimension must be 2 or 3");
        SymMatrix {
            dim,
            a: [[0.0; 3]; 3],
        }
    }

    pub fn identity(dim: usize) -> Self {
        Self::diag(&vec![1.0; dim])
    }

    pub fn diag(d: &[f64]) -> Self {
        let mut m = Self::zeros(d.len());
        for (i, &v) in d.iter().enumerate() {
            m.a[i][i] = v;
        }
        m
    }

    /// `v vᵀ`.
    pub fn outer(v: &[f64]) -> Self {
        let mut m = Self::zeros(v.len());
        for i in 0..v.len() {
            for j in 0..v.len() {
                m.a[i][j] = v[i] * v[j];
            }
        }
        m
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.a[i][j]
    }

    pub fn set_sym(&mut self, i: usize, j: usize, v: f64) {
        self.a[i][j] = v;
        self.a[j][i] = v;
    }

    pub fn trace(&self) -> f64 {
        (0..self.dim).map(|i| self.a[i][i]).sum()
    }

    /// `vᵀ H v`.
    pub fn quad(&self, v: &[f64]) -> f64 {
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += v[i] * self.a[i][j] * v[j];
            }
        }
        s
    }

    /// Frobenius inner product `tr(A B)` for symmetric `A`, `B`.
    pub fn frobenius(&self, other: &SymMatrix) -> f64 {
        debug_assert_eq!(self.dim, other.dim);
        let mut s = 0.0;
        for i in 0..self.dim {
            for j in 0..self.dim {
                s += self.a[i][j] * other.a[i][j];
            }
        }
        s
    }

    pub fn scale(&self, t: f64) -> Self {
        let mut m = *self;
        for row in m.a.iter_mut() {
            for v in row.iter_mut() {
                *v *= t;
            }
        }
        m
    }

    pub fn add(&self, other: &SymMatrix) -> Self {
        debug_assert_eq!(self.dim, other.dim);
        let mut m = *self;
        for i in 0..3 {
            for j in 0..3 {
                m.a[i][j] += other.a[i][j];
            }
        }
        m
    }

    pub fn sub(&self, other: &SymMatrix) -> Self {
        self.add(&other.scale(-1.0))
    }

    pub fn rows(&self) -> Vec<Vec<f64>> {
        (0..self.dim)
            .map(|i| self.a[i][..self.dim].to_vec())
            .collect()
    }
}

/// Eigenvalues in ascending order.
///
/// Closed form in 2D, cyclic Jacobi sweeps in 3D.
pub fn eig_sym(h: &SymMatrix) -> Vec<f64> {
    match h.dim {
        2 => {
            let (a, b, c) = (h.a[0][0], h.a[0][1], h.a[1][1]);
            let m = 0.5 * (a + c);
            let d = (0.5 * (a - c)).hypot(b);
            vec![m - d, m + d]
        }
        _ => {
            let mut e = jacobi3(h.a);
            e.sort_by(f64::total_cmp);
            e.to_vec()
        }
    }
}

fn jacobi3(mut a: [[f64; 3]; 3]) -> [f64; 3] {
    let norm: f64 = a.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
    let target = JACOBI_TOL * norm;
    for _sweep in 0..64 {
        let off = (a[0][1].powi(2) + a[0][2].powi(2) + a[1][2].powi(2)).sqrt();
        if off <= target || off == 0.0 {
            break;
        }
        for (p, q) in [(0, 1), (0, 2), (1, 2)] {
            if a[p][q] == 0.0 {
                continue;
            }
            let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
            let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
            let t = if theta == 0.0 { 1.0 } else { t };
            let c = 1.0 / (t * t + 1.0).sqrt();
            let s = t * c;
            // A ← Jᵀ A J with the rotation in the (p, q) plane.
            for k in 0..3 {
                let akp = a[k][p];
                let akq = a[k][q];
                a[k][p] = c * akp - s * akq;
                a[k][q] = s * akp + c * akq;
            }
            for k in 0..3 {
                let apk = a[p][k];
                let aqk = a[q][k];
                a[p][k] = c * apk - s * aqk;
                a[q][k] = s * apk + c * aqk;
            }
        }
    }
    [a[0][0], a[1][1], a[2][2]]
}

/// Maximal Pucci operator `M⁺(H)`.
pub fn pucci_plus(h: &SymMatrix, ell: &Ellipticity) -> f64 {
    pucci(h, ell, Extremal::Plus)
}

/// Minimal Pucci operator `M⁻(H)`.
pub fn pucci_minus(h: &SymMatrix, ell: &Ellipticity) -> f64 {
    pucci(h, ell, Extremal::Minus)
}

pub fn pucci(h: &SymMatrix, ell: &Ellipticity, which: Extremal) -> f64 {
    eig_sym(h).into_iter().map(|mu| which.scalar(ell, mu)).sum()
}

/// Finite family of coefficient matrices `A_α` defining the convex operator
/// `F(H) = sup_α tr(A_α H)`.
#[derive(Clone, Debug, PartialEq)]
pub struct BellmanFamily {
    members: Vec<SymMatrix>,
    ell: Ellipticity,
}

impl BellmanFamily {
    /// Validates that every member has its spectrum in `[λ, Λ]`.
    pub fn new(members: Vec<SymMatrix>, ell: Ellipticity) -> Result<Self> {
        let Some(first) = members.first() else {
            return invalid("Bellman family must be nonempty");
        };
        let dim = first.dim();
        for (k, m) in members.iter().enumerate() {
            if m.dim() != dim {
                return invalid(format!("member {k} has dimension {}, expected {dim}", m.dim()));
            }
            let e = eig_sym(m);
            let slack = 1e-12 * ell.big_lambda();
            if e[0] < ell.lambda() - slack || e[e.len() - 1] > ell.big_lambda() + slack {
                return invalid(format!(
                    "member {k} has eigenvalues {e:?} outside [{}, {}]",
                    ell.lambda(),
                    ell.big_lambda()
                ));
            }
        }
        Ok(BellmanFamily { members, ell })
    }

    pub fn members(&self) -> &[SymMatrix] {
        &self.members
    }

    pub fn ellipticity(&self) -> Ellipticity {
        self.ell
    }

    pub fn dim(&self) -> usize {
        self.members[0].dim()
    }
}

/// `sup_α tr(A_α H)`.
pub fn bellman_eval(fam: &BellmanFamily, h: &SymMatrix) -> f64 {
    fam.members
        .iter()
        .map(|a| a.frobenius(h))
        .fold(f64::NEG_INFINITY, f64::max)
}
