use impulse_core::diffusion::{simulate_segment, SegmentOptions, StopRule};
use impulse_core::io::{read_regions, read_values, write_regions, write_values, Meta};
use impulse_core::model::{arctan_example, Coefficient, DynamicsSpec};
use impulse_core::montecarlo::{mean_stderr, run_episodes, McConfig};
use impulse_core::region::Label;
use impulse_core::rng::RngStream;
use impulse_core::strategy::{HittingPolicy, Strategy};
use impulse_core::{extract_regions, validate_spec, Grid, ProblemSpec, QviSolver, RegimeId, SolverConfig};

fn ou_spec(kappa: f64, theta: f64, sigma: f64) -> ProblemSpec {
    let mut spec = arctan_example();
    let drift = Coefficient::Affine { intercept: kappa * theta, slope: -kappa };
    let mut dynamics =
        DynamicsSpec { drift: vec![drift; 2], vol: vec![Coefficient::Constant(sigma); 2], lipschitz_k: 0.0 };
    dynamics.lipschitz_k = dynamics.minimal_k();
    spec.dynamics = dynamics;
    spec
}

fn terminal_mean(spec: &ProblemSpec, x0: f64, t: f64, dt: f64, n: usize) -> (f64, f64) {
    let ends: Vec<f64> = (0..n as u64)
        .map(|k| {
            let mut rng = RngStream::new(5, k).rng();
            simulate_segment(spec, RegimeId(0), x0, &StopRule::horizon(t), dt, 0.0, &mut rng, SegmentOptions::default())
                .unwrap()
                .end_x
        })
        .collect();
    mean_stderr(&ends)
}

#[test]
fn euler_mean_of_ou_has_first_order_weak_error() {
    let (kappa, theta, sigma, x0, t) = (1.5, 1.0, 0.4, -1.0, 1.0);
    let spec = ou_spec(kappa, theta, sigma);
    let exact = theta + (x0 - theta) * (-kappa * t).exp();
    let mut errors = Vec::new();
    for steps in [5usize, 10, 20] {
        let dt = t / steps as f64;
        // Euler preserves the mean recursion m ← m + κ(θ − m)·dt exactly.
        let euler = theta + (x0 - theta) * (1.0 - kappa * dt).powi(steps as i32);
        let (mean, se) = terminal_mean(&spec, x0, t, dt, 20_000);
        assert!((mean - euler).abs() <= 4.0 * se, "dt={dt}: {mean} vs {euler} ± {se}");
        errors.push((euler - exact).abs());
    }
    for w in errors.windows(2) {
        let ratio = w[0] / w[1];
        assert!((1.8..2.3).contains(&ratio), "halving dt changed the error by {ratio}");
    }
}

#[test]
fn refining_the_grid_moves_values_little() {
    let spec = validate_spec(arctan_example()).unwrap();
    let solve = |n: usize| {
        let grid = Grid::new(-8.0, 12.0, n, 0.1).unwrap();
        let solver = QviSolver::new(&spec, grid, SolverConfig { tol: 1e-6, ..SolverConfig::default() }).unwrap();
        let fields = solver.solve().unwrap();
        let region = extract_regions(&fields, 1e-6);
        (grid, fields, region)
    };
    let (coarse_grid, coarse, coarse_region) = solve(101);
    let (fine_grid, fine, fine_region) = solve(201);
    for i in spec.regimes() {
        for x in [-4.0, -1.0, 0.0, 1.0, 2.0, 4.0] {
            let a = coarse_grid.interp(&coarse.rho_plus[i.0], x);
            let b = fine_grid.interp(&fine.rho_plus[i.0], x);
            assert!((a - b).abs() <= 0.01 * b, "regime {i} x={x}: {a} vs {b}");
        }
        let upper = |r: &impulse_core::Region| r.intervals(i, Label::I).last().map(|iv| iv.1).unwrap();
        let shift = (upper(&coarse_region) - upper(&fine_region)).abs();
        assert!(shift <= 2.0 * coarse_grid.spacing(), "regime {i}: boundary moved by {shift}");
    }
}

#[test]
fn value_and_region_files_round_trip() {
    let spec = validate_spec(arctan_example()).unwrap();
    let grid = Grid::new(-6.0, 8.0, 71, 0.1).unwrap();
    let solver = QviSolver::new(&spec, grid, SolverConfig { tol: 1e-6, ..SolverConfig::default() }).unwrap();
    let fields = solver.solve().unwrap();
    let region = extract_regions(&fields, 1e-6);
    let dir = tempfile::tempdir().unwrap();
    let meta = Meta::new("round-trip").with_fields(&fields);
    write_values(&dir.path().join("values.csv"), &fields, &meta).unwrap();
    write_regions(&dir.path().join("regions.csv"), &region, &meta).unwrap();
    let (back, back_meta) = read_values(&dir.path().join("values.csv")).unwrap();
    assert_eq!(back, fields);
    assert_eq!(back_meta.get("spec_hash"), Some("round-trip"));
    assert_eq!(read_regions(&dir.path().join("regions.csv")).unwrap(), region);
}

#[test]
fn episodes_without_impulses_match_the_passive_run() {
    let spec = validate_spec(arctan_example()).unwrap();
    let grid = Grid::new(-8.0, 12.0, 101, 0.1).unwrap();
    let solver = QviSolver::new(&spec, grid, SolverConfig { tol: 1e-6, ..SolverConfig::default() }).unwrap();
    let fields = solver.solve().unwrap();
    let region = extract_regions(&fields, 1e-6);
    let optimal = Strategy::optimal(HittingPolicy::new(region, &fields).unwrap());
    let mc = McConfig::new(400, 8.0, 0.02, 3);
    let start = (RegimeId(1), 1.5);
    let active = run_episodes(&optimal, &spec, start, &mc).unwrap();
    let passive = run_episodes(&Strategy::no_impulse(), &spec, start, &mc).unwrap();
    let mut untouched = 0;
    let mut touched = 0;
    for (a, p) in active.iter().zip(&passive) {
        if a.impulses.is_empty() {
            assert_eq!(a.gain, p.gain);
            untouched += 1;
        } else {
            touched += 1;
        }
    }
    assert!(untouched > 0 && touched > 0, "{untouched} untouched, {touched} touched");
}
