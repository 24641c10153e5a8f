use slitfb::fb::{self, Thresholds};
use slitfb::scheme::{DirectionSet, Operator};
use slitfb::solver::{self, ObstacleSpec, SignoriniProblem};
use slitfb::{Ellipticity, Grid, GridFunction};

/// `Re((x + i|y|)^{3/2})`, the model solution with contact set `{x ≤ 0}`.
fn model(x: &[f64]) -> f64 {
    let r = x[0].hypot(x[1]);
    let t = x[1].abs().atan2(x[0]);
    r.powf(1.5) * (1.5 * t).cos()
}

struct Solved {
    grid: Grid,
    u: GridFunction,
    obstacle: GridFunction,
    contact: Vec<usize>,
}

fn solve_model(h: f64) -> Solved {
    solve_model_with(h, solver::ThinScheme::OneSided)
}

fn solve_model_with(h: f64, scheme: solver::ThinScheme) -> Solved {
    let grid = Grid::half_box(2, h, 1.0, true).unwrap();
    let data = GridFunction::sample(&grid, model).unwrap();
    let obstacle = ObstacleSpec::zero(&grid);
    let p = SignoriniProblem::signorini(grid.clone(), Operator::pucci_plus(Ellipticity::laplacian()), obstacle.clone(), &data)
        .unwrap()
        .with_directions(DirectionSet::axis(2))
        .unwrap()
        .with_thin_scheme(scheme);
    let rep = solver::solve_signorini(&p, 1e-10, 200).unwrap();
    assert!(!rep.failed);
    Solved {
        obstacle: GridFunction::new(&grid, obstacle.values().to_vec()).unwrap(),
        contact: rep.contact_nodes.clone(),
        u: rep.solution,
        grid,
    }
}

fn max_error(s: &Solved) -> f64 {
    (0..s.grid.len()).map(|i| (s.u[i] - model(&s.grid.coords(i))).abs()).fold(0.0, f64::max)
}

#[test]
fn one_sided_scheme_shifts_the_free_boundary_by_a_cell() {
    let s = solve_model(1.0 / 32.0);
    assert!(max_error(&s) < 0.05);
    let fbg = fb::extract_free_boundary(&s.grid, &s.u, &s.obstacle, &s.contact).unwrap();
    assert_eq!(fbg.nodes.len(), 1);
    assert!(s.grid.coords(fbg.nodes[0])[0].abs() <= s.grid.h() + 1e-12);
    let report = fb::classify_point(&s.grid, &s.u, &s.obstacle, &s.contact, fbg.nodes[0], &Thresholds::default()).unwrap();
    let p = report.fitted_exponent.unwrap();
    assert!(p < 1.5 && p > 1.35, "exponent {p}");
}

#[test]
fn model_solution_is_regular_at_the_origin() {
    let s = solve_model_with(1.0 / 32.0, solver::ThinScheme::Reflected);
    let err = max_error(&s);
    assert!(err < 1e-3, "error {err}");
    let fbg = fb::extract_free_boundary(&s.grid, &s.u, &s.obstacle, &s.contact).unwrap();
    let origin = s.grid.node_at(&[0.0, 0.0]).unwrap();
    assert_eq!(fbg.nodes, vec![origin]);
    assert!(fbg.angle_to(&[1.0, 0.0, 0.0][..2]) < 1e-9);
    assert_eq!(fbg.lipschitz, 0.0);
    let t = Thresholds::default();
    let report = fb::classify_point(&s.grid, &s.u, &s.obstacle, &s.contact, origin, &t).unwrap();
    assert!(report.classification.is_regular(), "{}", report.to_json().unwrap());
    let p = report.fitted_exponent.unwrap();
    assert!((p - 1.5).abs() < 0.05, "exponent {p}");
    for f in &report.rescaled {
        assert!((f.sup() - 1.0).abs() < 1e-12);
    }
    let region: Vec<usize> = (0..s.grid.len()).filter(|&i| s.grid.coords(i)[0].abs() < 0.5).collect();
    let mono = fb::directional_monotonicity(&s.grid, &s.u, &[1.0], 0.5, &region, &[]).unwrap();
    assert!(mono.min >= -s.grid.h(), "{mono:?}");
    let ts: Vec<f64> = (1..=8).map(|k| k as f64 / 16.0).collect();
    let nd = fb::nondegeneracy_fit(&s.grid, &s.u, &s.obstacle, origin, &[1.0], &ts, 0.25).unwrap();
    assert!(nd.passed && nd.c > 0.0 && (nd.exponent - 1.5).abs() < 0.1, "{nd:?}");
}

#[test]
fn interior_contact_node_is_rejected() {
    let s = solve_model(1.0 / 32.0);
    let inner = s.grid.node_at(&[-0.5, 0.0]).unwrap();
    assert!(s.contact.contains(&inner));
    let t = Thresholds::default();
    assert!(fb::classify_point(&s.grid, &s.u, &s.obstacle, &s.contact, inner, &t).is_err());
}

#[test]
fn flat_contact_is_never_regular() {
    // u = φ on a neighbourhood of the center, detaching far away.
    let grid = Grid::half_box(2, 1.0 / 32.0, 1.0, true).unwrap();
    let obstacle = GridFunction::sample(&grid, |x| if x[1] == 0.0 { 0.1 * x[0] } else { 0.0 }).unwrap();
    let u = GridFunction::sample(&grid, |x| 0.1 * x[0] + ((x[0] + 0.5).hypot(x[1]) - 0.3).max(0.0).powi(2)).unwrap();
    let node = grid.node_at(&[-0.5, 0.0]).unwrap();
    let t = Thresholds::default();
    let radii = [1.0 / 16.0, 1.0 / 8.0, 1.0 / 4.0, 0.5];
    let prof = fb::growth_profile(&grid, &u, &obstacle, node, t.mu(), &radii, t.plane).unwrap();
    assert_eq!(prof.theta[0], prof.theta[2]);
    assert!(!fb::classify_profile(&prof, &t).is_regular());
    let near = fb::growth_profile(&grid, &u, &obstacle, node, t.mu(), &radii[..2], t.plane).unwrap();
    assert!(near.theta.iter().all(|&v| v == 0.0));
}
