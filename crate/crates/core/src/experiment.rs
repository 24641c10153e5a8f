//! Configuration-driven experiments. A run reads one JSON document, writes
//! CSV fields and JSON reports into its output directory and finishes with a
//! manifest listing every artifact with its SHA-256.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::barriers::{
    hopf_certificate, hopf_threshold, phi0_certificate, series_certificate, slit_subsolution, Certificate,
    SeriesBarrier, WeightSequence,
};
use crate::elliptic::{BellmanFamily, Ellipticity, Extremal, SymMatrix};
use crate::error::{invalid, Error, Result};
use crate::exponents::{exponent_pair, exponent_row, write_exponent_table, SlitSolution};
use crate::fb::{
    classify_point, directional_monotonicity, extract_free_boundary, free_boundary_nodes, harnack_ratio,
    nondegeneracy_eps0, nondegeneracy_fit, ConeSpec, HarnackReport, Thresholds,
};
use crate::grid::{norm, read_table, write_csv, Grid, GridFunction, NodeRole};
use crate::scheme::{DirectionSet, Operator};
use crate::solver::{
    contact_set, solve_with, ObstacleSpec, SignoriniProblem, SolveOptions, SolveReport, ThinCondition, ThinScheme,
};

/// Name of the seeded generator behind every randomized suite.
pub const GENERATOR: &str = "ChaCha8Rng";
pub const TOOL: &str = "slitfb";
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");
pub const MANIFEST: &str = "manifest.json";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExperimentKind {
    Solve,
    Exponents,
    Blowup,
    Fb,
    Harnack,
    Barriers,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", deny_unknown_fields)]
pub enum OperatorConfig {
    #[serde(rename = "pucci+")]
    PucciPlus,
    #[serde(rename = "pucci-", alias = "pucci−")]
    PucciMinus,
    /// JSON file `{"members": [matrix rows, ...]}`.
    #[serde(rename = "bellman")]
    Bellman { file: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainConfig {
    pub dim: usize,
    pub radius: f64,
    pub h: f64,
    #[serde(default = "yes")]
    pub symmetric: bool,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ObstacleConfig {
    Zero,
    /// `φ(x') = c + b·x' + ½x'ᵀAx'`.
    Quadratic {
        #[serde(default)]
        constant: f64,
        #[serde(default)]
        linear: Vec<f64>,
        #[serde(default)]
        hessian: Vec<Vec<f64>>,
    },
    /// CSV with thin coordinates and `x_n = 0` followed by the value.
    Table { file: PathBuf },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum BoundaryConfig {
    /// `Re((x₁ + i|x_n|)^{3/2})`.
    ExplicitLaplacian,
    Linear {
        vector: Vec<f64>,
        #[serde(default)]
        constant: f64,
    },
    /// CSV field dump covering every outer boundary node.
    Table { file: PathBuf },
    /// Homogeneous slit profile of degree `beta` for the configured operator,
    /// vanishing on `{x₁ ≤ 0, x_n = 0}`.
    HomogeneousTrace { beta: f64 },
}

/// Finite-difference directions of the discrete operator.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stencil {
    /// Axis stencil when `λ = Λ`, where the operator is linear and the frame
    /// supremum only adds bias; the default wide frames otherwise.
    #[default]
    Auto,
    Axis,
    Wide,
}

impl Stencil {
    pub fn directions(self, ell: &Ellipticity, dim: usize) -> DirectionSet {
        match self {
            Stencil::Axis => DirectionSet::axis(dim),
            Stencil::Auto if ell.lambda() == ell.big_lambda() => DirectionSet::axis(dim),
            _ => DirectionSet::default_for(dim),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Tolerances {
    #[serde(default = "Tolerances::default_solve")]
    pub solve: f64,
    #[serde(default = "Tolerances::default_contact")]
    pub contact: f64,
    #[serde(default = "Tolerances::default_shooting")]
    pub shooting: f64,
    #[serde(default = "Tolerances::default_max_iters")]
    pub max_iters: usize,
}

impl Tolerances {
    fn default_solve() -> f64 {
        1e-10
    }
    fn default_contact() -> f64 {
        1e-8
    }
    fn default_shooting() -> f64 {
        1e-10
    }
    fn default_max_iters() -> usize {
        500
    }
}

impl Default for Tolerances {
    fn default() -> Self {
        Tolerances {
            solve: Self::default_solve(),
            contact: Self::default_contact(),
            shooting: Self::default_shooting(),
            max_iters: Self::default_max_iters(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarnackConfig {
    pub eps: f64,
    pub floor: f64,
}

impl Default for HarnackConfig {
    fn default() -> Self {
        HarnackConfig { eps: 0.2, floor: 1e-7 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BarrierConfig {
    /// `ρ` of the slit subsolution and the Hopf barrier.
    pub rho: f64,
    /// Largest dyadic index checked for the series barrier with `a_k = 2^{−k}`.
    pub series_j: usize,
    /// `N = (1 + hopf_margin)·4Λ(n−1)/(λρ)`.
    pub hopf_margin: f64,
    /// Seeded random ordered pairs for the discrete comparison principle.
    pub comparison_pairs: usize,
}

impl Default for BarrierConfig {
    fn default() -> Self {
        BarrierConfig {
            rho: 0.1,
            series_j: 6,
            hopf_margin: 0.01,
            comparison_pairs: 20,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub ellipticity: Ellipticity,
    pub operator: OperatorConfig,
    pub domain: DomainConfig,
    #[serde(default = "ExperimentConfig::default_obstacle")]
    pub obstacle: ObstacleConfig,
    pub boundary: BoundaryConfig,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default)]
    pub seed: u64,
    pub output_dir: PathBuf,
    #[serde(default = "ExperimentConfig::default_thin_scheme")]
    pub thin_scheme: ThinScheme,
    #[serde(default)]
    pub stencil: Stencil,
    #[serde(default)]
    pub thresholds: Thresholds,
    #[serde(default)]
    pub harnack: HarnackConfig,
    #[serde(default)]
    pub barriers: BarrierConfig,
    /// Directory against which relative paths are resolved.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

impl ExperimentConfig {
    fn default_obstacle() -> ObstacleConfig {
        ObstacleConfig::Zero
    }

    fn default_thin_scheme() -> ThinScheme {
        ThinScheme::Reflected
    }

    /// Parses and validates; relative paths resolve against `base_dir`.
    pub fn from_json(text: &str, base_dir: &Path) -> Result<Self> {
        let mut c: ExperimentConfig = serde_json::from_str(text)?;
        c.base_dir = base_dir.to_path_buf();
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_json(&text, &base)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.output_dir)
    }

    pub fn validate(&self) -> Result<()> {
        let d = &self.domain;
        if !(2..=3).contains(&d.dim) {
            return invalid(format!("dimension must be 2 or 3, got {}", d.dim));
        }
        if !(d.h > 0.0 && d.radius > 0.0 && d.h.is_finite() && d.radius.is_finite()) {
            return invalid("domain radius and h must be positive");
        }
        let cells = d.radius / d.h;
        if (cells - cells.round()).abs() > 1e-9 * cells.max(1.0) || cells.round() < 2.0 {
            return invalid(format!("h = {} does not divide radius = {}", d.h, d.radius));
        }
        let t = &self.tolerances;
        if !(t.solve > 0.0 && t.contact >= 0.0 && t.shooting > 0.0 && t.max_iters > 0) {
            return invalid("tolerances must be positive");
        }
        let m = d.dim - 1;
        match &self.obstacle {
            ObstacleConfig::Quadratic { linear, hessian, .. } => {
                if !linear.is_empty() && linear.len() != m {
                    return invalid(format!("obstacle gradient needs {m} entries"));
                }
                if !hessian.is_empty() && (hessian.len() != m || hessian.iter().any(|r| r.len() != m)) {
                    return invalid(format!("obstacle Hessian must be {m}×{m}"));
                }
            }
            ObstacleConfig::Table { file } => self.require_file(file)?,
            ObstacleConfig::Zero => {}
        }
        match &self.boundary {
            BoundaryConfig::Linear { vector, .. } if vector.len() != d.dim => {
                return invalid(format!("linear boundary data needs {} entries", d.dim));
            }
            BoundaryConfig::Table { file } => self.require_file(file)?,
            BoundaryConfig::HomogeneousTrace { beta } if !(*beta > 0.0 && *beta < 1.0) => {
                return invalid(format!("trace degree must lie in (0, 1), got {beta}"));
            }
            _ => {}
        }
        if let OperatorConfig::Bellman { file } = &self.operator {
            self.require_file(file)?;
        }
        let needs_even = matches!(
            self.experiment,
            ExperimentKind::Solve | ExperimentKind::Blowup | ExperimentKind::Fb | ExperimentKind::Harnack
        );
        if needs_even && !d.symmetric {
            return invalid("this experiment needs a grid symmetric in x_n");
        }
        self.thresholds.validate()?;
        if !(self.harnack.eps > 0.0 && self.harnack.eps < 1.0 && self.harnack.floor >= 0.0) {
            return invalid("Harnack opening must lie in (0, 1) with a nonnegative floor");
        }
        let b = &self.barriers;
        if !(b.rho > 0.0 && b.rho < 1.0 && b.hopf_margin > 0.0) {
            return invalid("barrier ρ must lie in (0, 1) and the Hopf margin must be positive");
        }
        Ok(())
    }

    fn require_file(&self, p: &Path) -> Result<()> {
        if self.resolve(p).is_file() {
            Ok(())
        } else {
            invalid(format!("file {} does not exist", p.display()))
        }
    }

    fn sign(&self) -> Extremal {
        match self.operator {
            OperatorConfig::PucciMinus => Extremal::Minus,
            _ => Extremal::Plus,
        }
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct BellmanFile {
    members: Vec<Vec<Vec<f64>>>,
}

/// Inputs built from a config before anything is written.
struct Setup {
    grid: Grid,
    op: Operator,
    dirs: DirectionSet,
    data: GridFunction,
    obstacle: ObstacleSpec,
    problem: Option<SignoriniProblem>,
}

impl Setup {
    fn new(c: &ExperimentConfig) -> Result<Self> {
        let d = &c.domain;
        let grid = Grid::half_box(d.dim, d.h, d.radius, d.symmetric)?;
        let ell = c.ellipticity;
        let op = match &c.operator {
            OperatorConfig::PucciPlus => Operator::pucci_plus(ell),
            OperatorConfig::PucciMinus => Operator::pucci_minus(ell),
            OperatorConfig::Bellman { file } => {
                let f: BellmanFile = serde_json::from_str(&fs::read_to_string(c.resolve(file))?)?;
                let members = f.members.iter().map(|m| SymMatrix::from_rows(m)).collect::<Result<Vec<_>>>()?;
                let fam = BellmanFamily::new(members, ell)?;
                if fam.dim() != d.dim {
                    return invalid("Bellman family dimension differs from the domain");
                }
                Operator::Bellman(fam)
            }
        };
        let data = boundary_data(c, &grid)?;
        let obstacle = obstacle_spec(c, &grid)?;
        let dirs = c.stencil.directions(&ell, d.dim);
        let problem = match c.experiment {
            ExperimentKind::Solve | ExperimentKind::Blowup | ExperimentKind::Fb => Some(
                SignoriniProblem::signorini(grid.clone(), op.clone(), obstacle.clone(), &data)?
                    .with_thin_scheme(c.thin_scheme)
                    .with_directions(dirs.clone())?,
            ),
            _ => None,
        };
        Ok(Setup {
            grid,
            op,
            dirs,
            data,
            obstacle,
            problem,
        })
    }
}

fn boundary_data(c: &ExperimentConfig, grid: &Grid) -> Result<GridFunction> {
    match &c.boundary {
        BoundaryConfig::ExplicitLaplacian => GridFunction::sample(grid, explicit_laplacian),
        BoundaryConfig::Linear { vector, constant } => {
            GridFunction::sample(grid, |x| constant + x.iter().zip(vector).map(|(a, b)| a * b).sum::<f64>())
        }
        BoundaryConfig::Table { file } => {
            let rows = read_table(std::io::BufReader::new(fs::File::open(c.resolve(file))?), grid.dim())?;
            let mut values = vec![f64::NAN; grid.len()];
            for (x, v) in rows {
                if let Some(i) = grid.node_at(&x) {
                    values[i] = v;
                }
            }
            for (i, v) in values.iter_mut().enumerate() {
                if v.is_nan() {
                    if grid.role(i) == NodeRole::Dirichlet {
                        return invalid(format!("boundary table has no row for node {i} {:?}", grid.coords(i)));
                    }
                    *v = 0.0;
                }
            }
            GridFunction::new(grid, values)
        }
        BoundaryConfig::HomogeneousTrace { beta } => {
            let mut e = vec![0.0; grid.dim() - 1];
            e[0] = 1.0;
            let w = SlitSolution::with_exponent(&e, &c.ellipticity, c.sign(), *beta)?;
            GridFunction::sample(grid, |x| w.eval(x))
        }
    }
}

/// `Re((x₁ + i|x_n|)^{3/2})`, the model solution of the Signorini problem
/// for the Laplacian with zero obstacle.
pub fn explicit_laplacian(x: &[f64]) -> f64 {
    let (a, b) = (x[0], x[x.len() - 1].abs());
    (a * a + b * b).powf(0.75) * (1.5 * b.atan2(a)).cos()
}

fn obstacle_spec(c: &ExperimentConfig, grid: &Grid) -> Result<ObstacleSpec> {
    let m = grid.dim() - 1;
    match &c.obstacle {
        ObstacleConfig::Zero => Ok(ObstacleSpec::zero(grid)),
        ObstacleConfig::Quadratic {
            constant,
            linear,
            hessian,
        } => ObstacleSpec::observed(grid, |x| {
            let mut v = *constant;
            for k in 0..m {
                v += linear.get(k).copied().unwrap_or(0.0) * x[k];
                for l in 0..m {
                    v += 0.5 * hessian.get(k).and_then(|r| r.get(l)).copied().unwrap_or(0.0) * x[k] * x[l];
                }
            }
            v
        }),
        ObstacleConfig::Table { file } => {
            let rows = read_table(std::io::BufReader::new(fs::File::open(c.resolve(file))?), grid.dim())?;
            let mut values = vec![f64::NAN; grid.len()];
            for (x, v) in rows {
                if let Some(i) = grid.node_at(&x) {
                    values[i] = v;
                }
            }
            if let Some(i) = grid.thin_plane_nodes().into_iter().find(|&i| values[i].is_nan()) {
                return invalid(format!("obstacle table has no row for node {i} {:?}", grid.coords(i)));
            }
            ObstacleSpec::observed(grid, |x| values[grid.nearest(x)])
        }
    }
}

/// One file of a run with its content hash.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Artifact {
    pub path: String,
    pub sha256: String,
    pub bytes: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub tool: String,
    pub version: String,
    pub generator: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    pub status: RunStatus,
    pub artifacts: Vec<Artifact>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RunStatus {
    Ok,
    NumericalFailure,
}

impl Manifest {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Hashes the listed files (relative to `dir`) and writes `manifest.json`.
pub fn emit_manifest(config: &ExperimentConfig, dir: &Path, outputs: &[String], status: RunStatus) -> Result<Manifest> {
    let mut artifacts = Vec::with_capacity(outputs.len());
    for name in outputs {
        let bytes = fs::read(dir.join(name))?;
        artifacts.push(Artifact {
            path: name.clone(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        });
    }
    let manifest = Manifest {
        tool: TOOL.into(),
        version: TOOL_VERSION.into(),
        generator: GENERATOR.into(),
        seed: config.seed,
        config: config.clone(),
        status,
        artifacts,
    };
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST), manifest.to_json()? + "\n")?;
    Ok(manifest)
}

struct Outputs {
    dir: PathBuf,
    files: Vec<String>,
}

impl Outputs {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), bytes)?;
        if !self.files.iter().any(|f| f == name) {
            self.files.push(name.to_string());
        }
        Ok(())
    }

    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        self.write(name, (serde_json::to_string_pretty(value)? + "\n").as_bytes())
    }

    fn field(&mut self, name: &str, grid: &Grid, f: &GridFunction) -> Result<()> {
        let mut buf = Vec::new();
        write_csv(grid, f, &mut buf)?;
        self.write(name, &buf)
    }
}

/// A report with the run parameters that influenced it.
#[derive(Serialize)]
struct Echo<'a, T: Serialize> {
    experiment: ExperimentKind,
    operator: &'static str,
    tolerances: &'a Tolerances,
    thin_scheme: ThinScheme,
    #[serde(flatten)]
    report: &'a T,
}

#[derive(Serialize)]
struct Diagnostics<'a> {
    experiment: ExperimentKind,
    error: String,
    tolerances: &'a Tolerances,
}

/// Runs the experiment. Input errors surface before the output directory is
/// touched; numerical failures leave `diagnostics.json` and a manifest.
pub fn run(config: &ExperimentConfig) -> Result<Manifest> {
    config.validate()?;
    let setup = Setup::new(config)?;
    let dir = config.output_dir();
    fs::create_dir_all(&dir)?;
    let mut out = Outputs { dir: dir.clone(), files: Vec::new() };
    let result = match config.experiment {
        ExperimentKind::Solve => run_solve(config, &setup, &mut out, false).map(|_| ()),
        ExperimentKind::Blowup => run_solve(config, &setup, &mut out, true).map(|_| ()),
        ExperimentKind::Fb => run_fb(config, &setup, &mut out),
        ExperimentKind::Exponents => run_exponents(config, &mut out),
        ExperimentKind::Harnack => run_harnack(config, &setup, &mut out),
        ExperimentKind::Barriers => run_barriers(config, &setup, &mut out),
    };
    match result {
        Ok(()) => emit_manifest(config, &dir, &out.files, RunStatus::Ok),
        Err(e) if e.is_numerical() => {
            out.json(
                "diagnostics.json",
                &Diagnostics {
                    experiment: config.experiment,
                    error: e.to_string(),
                    tolerances: &config.tolerances,
                },
            )?;
            emit_manifest(config, &dir, &out.files, RunStatus::NumericalFailure)?;
            Err(e)
        }
        Err(e) => Err(e),
    }
}

/// Validates the config and builds every input (tables, operator family,
/// feasibility of the obstacle) without writing anything.
pub fn check(config: &ExperimentConfig) -> Result<()> {
    config.validate()?;
    Setup::new(config).map(|_| ())
}

/// Process exit status of a run: 0 success, 2 numerical failure, 1 otherwise.
pub fn exit_code<T>(r: &Result<T>) -> i32 {
    match r {
        Ok(_) => 0,
        Err(e) if e.is_numerical() => 2,
        Err(_) => 1,
    }
}

fn echo<'a, T: Serialize>(c: &'a ExperimentConfig, s: &Setup, report: &'a T) -> Echo<'a, T> {
    Echo {
        experiment: c.experiment,
        operator: s.op.name(),
        tolerances: &c.tolerances,
        thin_scheme: c.thin_scheme,
        report,
    }
}

struct Solved {
    report: SolveReport,
    obstacle: GridFunction,
    contact: Vec<usize>,
}

fn run_solve(c: &ExperimentConfig, s: &Setup, out: &mut Outputs, require_blowup: bool) -> Result<Solved> {
    let p = s.problem.as_ref().expect("solve experiments build a problem");
    let opts = SolveOptions::new(c.tolerances.solve, c.tolerances.max_iters);
    let report = solve_with(p, &opts, Some(&s.data))?;
    out.field("solution.csv", &s.grid, &report.solution)?;
    out.json("solve_report.json", &echo(c, s, &report))?;
    if report.failed {
        return Err(Error::NoConvergence {
            iterations: report.iterations,
            residual: report.residuals.max(),
        });
    }
    let contact = contact_set(p, &report.solution, c.tolerances.contact);
    let obstacle = GridFunction::new(&s.grid, s.obstacle.values().to_vec())?;
    let origin = s.grid.node_at(&vec![0.0; s.grid.dim()]).expect("the box is centred at the origin");
    let on_fb = free_boundary_nodes(&s.grid, &contact).contains(&origin);
    if on_fb || require_blowup {
        if !on_fb {
            return Err(Error::NoFreeBoundary("the origin is not a free boundary node".into()));
        }
        let blowup = classify_point(&s.grid, &report.solution, &obstacle, &contact, origin, &c.thresholds)?;
        out.json("blowup.json", &echo(c, s, &blowup))?;
        if require_blowup {
            for (k, f) in blowup.rescaled.iter().enumerate() {
                let mut buf = Vec::new();
                f.write_csv(&mut buf)?;
                out.write(&format!("rescaled_{k}.csv"), &buf)?;
            }
        }
    }
    Ok(Solved {
        report,
        obstacle,
        contact,
    })
}

#[derive(Serialize)]
struct FbSummary {
    graph: crate::fb::FreeBoundaryGraph,
    monotonicity: crate::fb::Monotonicity,
    region_radius: f64,
    nondegeneracy: Option<crate::fb::NondegeneracyFit>,
    nondegeneracy_node: Option<usize>,
}

fn run_fb(c: &ExperimentConfig, s: &Setup, out: &mut Outputs) -> Result<()> {
    let solved = run_solve(c, s, out, false)?;
    let grid = &s.grid;
    let u = &solved.report.solution;
    let graph = extract_free_boundary(grid, u, &solved.obstacle, &solved.contact)?;
    let m = grid.dim() - 1;
    let region_radius = 0.5 * c.domain.radius;
    let region: Vec<usize> = (0..grid.len()).filter(|&i| norm(&grid.coords(i)) <= region_radius).collect();
    let lip = if graph.lipschitz.is_finite() { graph.lipschitz } else { 0.0 };
    let monotonicity = directional_monotonicity(grid, u, &graph.direction[..m], lip, &region, &solved.contact)?;
    let origin = grid.node_at(&vec![0.0; grid.dim()]).expect("the box is centred at the origin");
    let node = if graph.nodes.contains(&origin) { Some(origin) } else { graph.nodes.first().copied() };
    let nondegeneracy = match node {
        Some(node) => {
            let beta2 = exponent_pair(&c.ellipticity, c.tolerances.shooting)?.beta2;
            let reach = (region_radius - norm(&grid.coords(node))).max(0.0);
            let ts: Vec<f64> = (1..=8).map(|k| reach * k as f64 / 8.0).filter(|&t| t > 0.0).collect();
            Some(nondegeneracy_fit(grid, u, &solved.obstacle, node, &graph.direction, &ts, nondegeneracy_eps0(beta2))?)
        }
        None => None,
    };
    out.json(
        "fb.json",
        &echo(
            c,
            s,
            &FbSummary {
                graph,
                monotonicity,
                region_radius,
                nondegeneracy,
                nondegeneracy_node: node,
            },
        ),
    )
}

fn run_exponents(c: &ExperimentConfig, out: &mut Outputs) -> Result<()> {
    let row = exponent_row(&c.ellipticity, c.tolerances.shooting)?;
    let mut buf = Vec::new();
    write_exponent_table(std::slice::from_ref(&row), &mut buf)?;
    out.write("exponents.csv", &buf)?;
    out.json("exponents.json", &row)
}

/// Two solves of `F(D²u) = 0` off the slit `Σ* × {0}` (zero there, even
/// reflection on the rest of the thin plane) with outer data `g₁, g₂`, and
/// their Harnack ratio around the apex.
pub struct HarnackRun {
    pub report: HarnackReport,
    pub u1: GridFunction,
    pub u2: GridFunction,
}

pub fn harnack_run(
    grid: &Grid,
    op: &Operator,
    cone: &ConeSpec,
    g1: &dyn Fn(&[f64]) -> f64,
    g2: &dyn Fn(&[f64]) -> f64,
    dirs: &DirectionSet,
    floor: f64,
    opts: &SolveOptions,
) -> Result<HarnackRun> {
    let m = grid.dim() - 1;
    let tol = 1e-9 * grid.h();
    let solve = |g: &dyn Fn(&[f64]) -> f64| -> Result<GridFunction> {
        let data = GridFunction::sample(grid, g)?;
        let p = SignoriniProblem::mixed(grid.clone(), op.clone(), &data, |_, x| {
            if cone.contains(&x[..m], tol) {
                ThinCondition::Dirichlet(0.0)
            } else {
                ThinCondition::Reflect
            }
        })?
        .with_directions(dirs.clone())?;
        let rep = solve_with(&p, opts, None)?;
        if rep.failed {
            return Err(Error::NoConvergence {
                iterations: rep.iterations,
                residual: rep.residuals.max(),
            });
        }
        Ok(rep.solution)
    };
    let u1 = solve(g1)?;
    let u2 = solve(g2)?;
    let report = harnack_ratio(grid, (&u1, &cone.e), (&u2, &cone.e), cone, floor)?;
    Ok(HarnackRun { report, u1, u2 })
}

/// Slit cone around `−e₁` with the given opening parameter.
pub fn default_cone(dim: usize, eps: f64) -> Result<ConeSpec> {
    if dim == 2 {
        ConeSpec::new(vec![0.0], vec![1.0], eps, vec![vec![-1.0]])
    } else {
        ConeSpec::new(vec![0.0, 0.0], vec![1.0, 0.0], eps, vec![vec![-1.0, 0.5], vec![-1.0, -0.5]])
    }
}

fn run_harnack(c: &ExperimentConfig, s: &Setup, out: &mut Outputs) -> Result<()> {
    let cone = default_cone(c.domain.dim, c.harnack.eps)?;
    let r = c.domain.radius;
    let g1 = |x: &[f64]| s.data.interpolate(&s.grid, x).unwrap_or(0.0);
    // A second trace with the same sign and monotonicity but a different shape.
    let g2 = |x: &[f64]| g1(x) * (1.5 + 0.5 * x[0] / r);
    let opts = SolveOptions::new(c.tolerances.solve, c.tolerances.max_iters);
    let run = harnack_run(&s.grid, &s.op, &cone, &g1, &g2, &s.dirs, c.harnack.floor, &opts)?;
    out.field("u1.csv", &s.grid, &run.u1)?;
    out.field("u2.csv", &s.grid, &run.u2)?;
    out.json("harnack.json", &echo(c, s, &run.report))
}

/// Outcome of the seeded comparison suite.
#[derive(Clone, Debug, Serialize)]
pub struct ComparisonReport {
    pub pairs: usize,
    pub seed: u64,
    pub generator: String,
    /// `max (u₁ − u₂)⁺` over all pairs and nodes.
    pub max_violation: f64,
    pub worst_pair: Option<usize>,
    pub tol: f64,
}

/// Solves `pairs` random Signorini problems with ordered data `g₁ ≤ g₂` and
/// obstacles `φ₁ ≤ φ₂` and measures how far `u₁ ≤ u₂` fails.
pub fn comparison_suite(
    grid: &Grid,
    op: &Operator,
    scheme: ThinScheme,
    dirs: &DirectionSet,
    pairs: usize,
    seed: u64,
    opts: &SolveOptions,
) -> Result<ComparisonReport> {
    if !grid.symmetric_in_xn() {
        return invalid("the comparison suite needs a grid symmetric in x_n");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = grid.len();
    let mut max_violation = 0.0f64;
    let mut worst_pair = None;
    for k in 0..pairs {
        let c: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
        let g1: Vec<f64> = (0..n)
            .map(|i| {
                let x = grid.coords(i);
                c[0] + c[1] * x[0] + c[2] * x[0] * x[0] + x[x.len() - 1].abs()
            })
            .collect();
        let g2: Vec<f64> = g1.iter().map(|v| v + rng.random_range(0.0..0.5)).collect();
        let p1: Vec<f64> = (0..n)
            .map(|i| {
                let x = grid.coords(i);
                c[3] - (x[0] - 0.3 * c[4]).powi(2)
            })
            .collect();
        let p2: Vec<f64> = p1.iter().map(|v| v + rng.random_range(0.0..0.5)).collect();
        let solve = |g: &[f64], phi: &[f64]| -> Result<GridFunction> {
            let data = GridFunction::new(grid, g.to_vec())?;
            // Keep the obstacle below the data on the outer boundary.
            let obstacle = ObstacleSpec::observed(grid, |x| {
                let i = grid.nearest(x);
                if grid.role(i) == NodeRole::Dirichlet {
                    phi[i].min(g[i])
                } else {
                    phi[i]
                }
            })?;
            let p = SignoriniProblem::signorini(grid.clone(), op.clone(), obstacle, &data)?
                .with_thin_scheme(scheme)
                .with_directions(dirs.clone())?;
            let rep = solve_with(&p, opts, None)?;
            if rep.failed {
                return Err(Error::NoConvergence {
                    iterations: rep.iterations,
                    residual: rep.residuals.max(),
                });
            }
            Ok(rep.solution)
        };
        let (u1, u2) = rayon::join(|| solve(&g1, &p1), || solve(&g2, &p2));
        let (u1, u2) = (u1?, u2?);
        let v = (0..n).map(|i| u1[i] - u2[i]).fold(0.0, f64::max);
        if v > max_violation {
            max_violation = v;
            worst_pair = Some(k);
        }
    }
    Ok(ComparisonReport {
        pairs,
        seed,
        generator: GENERATOR.into(),
        max_violation,
        worst_pair,
        tol: opts.tol,
    })
}

#[derive(Serialize)]
struct BarrierSummary {
    rho: f64,
    hopf_n: f64,
    certificates: Vec<Certificate>,
    slit_subsolution: crate::barriers::SlitSubsolution,
    comparison: ComparisonReport,
    passed: bool,
}

fn run_barriers(c: &ExperimentConfig, s: &Setup, out: &mut Outputs) -> Result<()> {
    let ell = c.ellipticity;
    let dim = c.domain.dim;
    let b = &c.barriers;
    let phi0 = phi0_certificate(&ell, dim, c.domain.h)?;
    let series = SeriesBarrier::new(WeightSequence::Geometric { scale: 1.0, ratio: 0.5 }, ell)?;
    let series = series_certificate(&series, b.series_j, dim);
    let hopf_n = (1.0 + b.hopf_margin) * hopf_threshold(b.rho, &ell, dim);
    let hopf = hopf_certificate(hopf_n, b.rho, &ell, dim);
    let ball = Grid::half_ball(dim, c.domain.h, 1.0, true)?;
    let center = vec![0.0; dim - 1];
    let sub = slit_subsolution(b.rho, &center, 0.25, ell, &ball, c.tolerances.solve)?;
    out.field("slit_subsolution.csv", &ball, &sub.phi)?;
    let opts = SolveOptions::new(c.tolerances.solve, c.tolerances.max_iters);
    let comparison = comparison_suite(&s.grid, &s.op, c.thin_scheme, &s.dirs, b.comparison_pairs, c.seed, &opts)?;
    let certificates = vec![phi0, series, hopf];
    let passed = certificates.iter().all(Certificate::passed) && sub.certificate.passed();
    out.json(
        "barriers.json",
        &echo(
            c,
            s,
            &BarrierSummary {
                rho: b.rho,
                hopf_n,
                certificates,
                slit_subsolution: sub,
                comparison,
                passed,
            },
        ),
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    fn base(dir: &Path, experiment: &str) -> String {
        format!(
            r#"{{
                "experiment": "{experiment}",
                "ellipticity": {{"lambda": 1.0, "Lambda": 1.0}},
                "operator": {{"kind": "pucci+"}},
                "domain": {{"dim": 2, "radius": 1.0, "h": 0.125}},
                "boundary": {{"kind": "explicit-laplacian"}},
                "output_dir": "{}"
            }}"#,
            dir.display()
        )
    }

    #[test]
    fn config_defaults_and_validation() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig::from_json(&base(dir.path(), "solve"), dir.path()).unwrap();
        assert_eq!(c.thin_scheme, ThinScheme::Reflected);
        assert_eq!(c.tolerances, Tolerances::default());
        assert_eq!(c.obstacle, ObstacleConfig::Zero);
        let bad = base(dir.path(), "solve").replace("\"Lambda\": 1.0", "\"Lambda\": 0.5");
        assert!(ExperimentConfig::from_json(&bad, dir.path()).is_err());
        let bad = base(dir.path(), "solve").replace("0.125", "0.3");
        assert!(ExperimentConfig::from_json(&bad, dir.path()).is_err());
        let bad = base(dir.path(), "solve").replace("\"seed", "\"sed");
        let bad = bad.replace("\"output_dir\"", "\"typo\": 1, \"output_dir\"");
        assert!(ExperimentConfig::from_json(&bad, dir.path()).is_err());
        let bad = base(dir.path(), "teleport");
        assert!(ExperimentConfig::from_json(&bad, dir.path()).is_err());
        let minus = base(dir.path(), "exponents").replace("pucci+", "pucci−");
        let c = ExperimentConfig::from_json(&minus, dir.path()).unwrap();
        assert_eq!(c.operator, OperatorConfig::PucciMinus);
    }

    #[test]
    fn relative_paths_resolve_against_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let text = base(Path::new("out"), "exponents");
        let c = ExperimentConfig::from_json(&text, dir.path()).unwrap();
        assert_eq!(c.output_dir(), dir.path().join("out"));
        let table = base(Path::new("out"), "solve")
            .replace(r#"{"kind": "explicit-laplacian"}"#, r#"{"kind": "table", "file": "missing.csv"}"#);
        assert!(ExperimentConfig::from_json(&table, dir.path()).is_err());
    }

    #[test]
    fn empty_manifest_echoes_the_config() {
        let dir = tempfile::tempdir().unwrap();
        let c = ExperimentConfig::from_json(&base(dir.path(), "exponents"), dir.path()).unwrap();
        let m = emit_manifest(&c, dir.path(), &[], RunStatus::Ok).unwrap();
        assert!(m.artifacts.is_empty());
        assert_eq!(m.generator, GENERATOR);
        let text = fs::read_to_string(dir.path().join(MANIFEST)).unwrap();
        let back: Manifest = serde_json::from_str(&text).unwrap();
        assert_eq!(back.config.domain, c.domain);
    }

    #[test]
    fn solve_run_classifies_the_origin() {
        let dir = tempfile::tempdir().unwrap();
        let text = base(dir.path(), "solve").replace("0.125", "0.03125");
        let c = ExperimentConfig::from_json(&text, dir.path()).unwrap();
        let m = run(&c).unwrap();
        let names: Vec<&str> = m.artifacts.iter().map(|a| a.path.as_str()).collect();
        assert_eq!(names, ["solution.csv", "solve_report.json", "blowup.json"]);
        let blowup: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(dir.path().join("blowup.json")).unwrap()).unwrap();
        assert_eq!(blowup["classification"]["kind"], "regular");
        assert_eq!(blowup["tolerances"]["solve"], 1e-10);
        assert_eq!(blowup["thresholds"]["nu_threshold"], 2.0);
        let again = run(&c).unwrap();
        assert_eq!(m.artifacts, again.artifacts);
    }

    #[test]
    fn changed_h_changes_hashes_not_schema() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        let a = ExperimentConfig::from_json(&base(d1.path(), "solve"), d1.path()).unwrap();
        let b = ExperimentConfig::from_json(&base(d2.path(), "solve").replace("0.125", "0.0625"), d2.path()).unwrap();
        let (ma, mb) = (run(&a).unwrap(), run(&b).unwrap());
        let names = |m: &Manifest| m.artifacts.iter().map(|x| x.path.clone()).collect::<Vec<_>>();
        assert_eq!(names(&ma), names(&mb));
        assert!(ma.artifacts.iter().zip(&mb.artifacts).all(|(x, y)| x.sha256 != y.sha256));
    }

    #[test]
    fn non_convergence_exits_with_diagnostics() {
        let dir = tempfile::tempdir().unwrap();
        let text = base(dir.path(), "solve").replace(
            "\"output_dir\"",
            "\"tolerances\": {\"solve\": 1e-14, \"max_iters\": 1}, \"output_dir\"",
        );
        let c = ExperimentConfig::from_json(&text, dir.path()).unwrap();
        let r = run(&c);
        assert_eq!(exit_code(&r), 2);
        let m: Manifest = serde_json::from_str(&fs::read_to_string(dir.path().join(MANIFEST)).unwrap()).unwrap();
        assert_eq!(m.status, RunStatus::NumericalFailure);
        assert!(m.artifacts.iter().any(|a| a.path == "diagnostics.json"));
    }

    #[test]
    fn infeasible_obstacle_writes_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("out");
        let text = base(&out, "solve").replace(
            "\"boundary\"",
            "\"obstacle\": {\"kind\": \"quadratic\", \"constant\": 5.0}, \"boundary\"",
        );
        let c = ExperimentConfig::from_json(&text, dir.path()).unwrap();
        let r = run(&c);
        assert_eq!(exit_code(&r), 1);
        assert!(!out.exists());
    }

    #[test]
    fn comparison_suite_is_seeded() {
        let g = Grid::half_box(2, 0.125, 1.0, true).unwrap();
        let op = Operator::pucci_plus(Ellipticity::new(1.0, 2.0).unwrap());
        let opts = SolveOptions::new(1e-11, 200);
        let dirs = DirectionSet::default_for(2);
        let a = comparison_suite(&g, &op, ThinScheme::OneSided, &dirs, 5, 3, &opts).unwrap();
        let b = comparison_suite(&g, &op, ThinScheme::OneSided, &dirs, 5, 3, &opts).unwrap();
        assert_eq!(a.max_violation.to_bits(), b.max_violation.to_bits());
        assert!(a.max_violation <= 1e-10);
    }

    #[test]
    fn explicit_laplacian_values() {
        assert_eq!(explicit_laplacian(&[1.0, 0.0]), 1.0);
        assert!(explicit_laplacian(&[-1.0, 0.0]).abs() < 1e-15);
        // On the normal axis, r^{3/2}cos(3π/4).
        let v = explicit_laplacian(&[0.0, 4.0]);
        assert!((v - 8.0 * (0.75 * std::f64::consts::PI).cos()).abs() < 1e-12);
    }
}
