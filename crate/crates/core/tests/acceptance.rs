//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any criterion fails.

mod common;

use std::path::PathBuf;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use qtsm::flows1d::{self, FlowParams};
use qtsm::montecarlo::{self, McEstimate};
use qtsm::pricing::{bond_system, forward_system, futures_system};
use qtsm::riccati::{self, decomposition_residuals, max_path_difference, r2_from_state, rk4_oracle};
use qtsm::{FactorModel, QuadraticPayoff, QuadraticRate, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Criterion = fn() -> Outcome;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn dm(n: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(n, n, v)
}

fn reference_1d() -> (FactorModel, QuadraticRate, QuadraticPayoff) {
    let model = FactorModel::one_factor(0.05, 0.5, 0.1, 0.1).unwrap();
    let rate = QuadraticRate::new(dm(1, &[1.0]), DVector::from_element(1, 0.02), 0.0, false).unwrap();
    let payoff = QuadraticPayoff::new(dm(1, &[-0.5]), DVector::from_element(1, 0.3), 0.0).unwrap();
    (model, rate, payoff)
}

fn model_2d() -> (FactorModel, QuadraticRate, QuadraticPayoff) {
    let model = FactorModel::new(
        dm(2, &[-0.8, 0.2, 0.1, -0.5]),
        DVector::from_vec(vec![0.02, -0.01]),
        dm(2, &[0.15, 0.0, 0.05, 0.1]),
        DVector::from_vec(vec![0.1, -0.05]),
    )
    .unwrap();
    let rate = QuadraticRate::new(dm(2, &[0.6, 0.1, 0.1, 0.4]), DVector::from_vec(vec![0.02, 0.01]), 0.01, true).unwrap();
    let payoff = QuadraticPayoff::new(dm(2, &[-0.3, 0.05, 0.05, -0.2]), DVector::from_vec(vec![0.4, -0.2]), 0.1).unwrap();
    (model, rate, payoff)
}

/// The 25 randomized Riccati instances shared by criteria 1 and 2.
fn riccati_instances() -> Vec<riccati::RiccatiProblem> {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    (0..25)
        .map(|j| {
            let n = 1 + j % 4;
            let maturity = rng.random_range(0.5..5.0);
            common::random_problem(&mut rng, n, maturity, 1000)
        })
        .collect()
}

fn criterion_1() -> Outcome {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for problem in riccati_instances() {
        let (_, path) = riccati::solve(&problem).unwrap();
        let oracle = rk4_oracle(&problem, 10).unwrap();
        let (d2, d1, d0) = max_path_difference(&path, &oracle);
        worst = worst.max(d2).max(d1).max(d0);
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-8 && elapsed <= Duration::from_secs(30),
        format!("max |Hamiltonian - RK4| = {worst:.3e} (tol 1e-8), runtime {:.2}s (limit 30s)", elapsed.as_secs_f64()),
    )
}

fn criterion_2() -> Outcome {
    let mut worst = [0.0f64; 5];
    let mut terminal_exact = true;
    for problem in riccati_instances() {
        let (state, path) = riccati::solve(&problem).unwrap();
        let r2 = r2_from_state(&state, &problem);
        let last = r2.len() - 1;
        let d = decomposition_residuals(&state, &r2[..last]);
        for (w, v) in worst.iter_mut().zip([d.u_asymmetry, d.v_symmetry, d.sym_split, d.skew_split, d.ux_minus_y]) {
            *w = w.max(v);
        }
        let n = problem.model().dim();
        let end = path.r0.len() - 1;
        terminal_exact &= path.r2[end] == *problem.theta()
            && path.r1[end] == *problem.theta_vec()
            && path.r0[end] == problem.c_t()
            && state.x[last] == DMatrix::identity(n, n)
            && state.y[last] == problem.c1();
    }
    outcome(
        worst.iter().all(|&w| w <= 1e-10) && terminal_exact,
        format!(
            "U asym {:.1e}, V sym {:.1e}, sym split {:.1e}, skew split {:.1e}, UX-Y {:.1e} (tol 1e-10); terminal exact: {terminal_exact}",
            worst[0], worst[1], worst[2], worst[3], worst[4]
        ),
    )
}

fn criterion_3() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let maturity = 5.0;
    let grid = TimeGrid::new(maturity, 1000).unwrap();
    let mut worst = [0.0f64; 3];
    for set in 0..10 {
        let beta = rng.random_range(0.2..2.0);
        let c = rng.random_range(0.0..2.0);
        let sigma = if set == 0 { 0.0 } else { rng.random_range(0.0..0.5) };
        let alpha = rng.random_range(-0.5..0.5);
        let a = rng.random_range(0.0..0.05);
        let b = rng.random_range(-0.5..0.5);
        let p = FlowParams::new(alpha, beta, sigma, a, b, c).unwrap();
        let (model, rate) = p.to_model(0.0).unwrap();
        let sys = bond_system(&model, &rate, grid).unwrap();
        let path = sys.path();
        for j in 1..=20 {
            let i = 1000 - 50 * j;
            let tau = maturity - grid.node(i);
            worst[0] = worst[0].max((0.5 * flows1d::coeff_a(tau, &p).unwrap() - path.r2[i][(0, 0)]).abs());
            worst[1] = worst[1].max((flows1d::coeff_b(tau, &p).unwrap() - path.r1[i][0]).abs());
            worst[2] = worst[2].max((flows1d::coeff_c(tau, &p).unwrap() - path.r0[i]).abs());
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst.iter().all(|&w| w <= 1e-6) && elapsed <= Duration::from_secs(10),
        format!(
            "max |A/2-R2| {:.2e}, |B-R1| {:.2e}, |C-R0| {:.2e} (tol 1e-6), runtime {:.2}s (limit 10s)",
            worst[0],
            worst[1],
            worst[2],
            elapsed.as_secs_f64()
        ),
    )
}

fn criterion_4() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let maturity = 2.0;
    let mut worst = 0.0f64;
    let mut ratios = Vec::new();
    for _ in 0..5 {
        let p = FlowParams::new(
            rng.random_range(-0.2..0.2),
            rng.random_range(0.2..2.0),
            rng.random_range(0.05..0.5),
            rng.random_range(0.0..0.05),
            rng.random_range(-0.3..0.3),
            rng.random_range(0.0..2.0),
        )
        .unwrap();
        for _ in 0..100 {
            let t = rng.random_range(0.0..maturity);
            let x = rng.random_range(-1.0..1.0);
            worst = worst.max(flows1d::pde_residual(&p, t, maturity, x, 1e-4).unwrap().abs());
        }
        let r = |h| flows1d::pde_residual(&p, 1.0, maturity, 0.3, h).unwrap().abs();
        ratios.push(r(0.02) / r(0.01));
        ratios.push(r(0.01) / r(0.005));
    }
    let second_order = ratios.iter().all(|r| (3.0..5.0).contains(r));
    let (lo, hi) = ratios.iter().fold((f64::INFINITY, 0.0f64), |(lo, hi), &r| (lo.min(r), hi.max(r)));
    outcome(
        worst <= 1e-5 && second_order,
        format!("max residual at h=1e-4: {worst:.2e} (tol 1e-5); halving ratios in [{lo:.2}, {hi:.2}] (expect ~4)"),
    )
}

/// Closed form within 3 stderr at the first seed, or at the fixed second
/// seed on a rerun.
fn bracket<F>(closed: f64, estimate: F) -> (bool, McEstimate)
where
    F: Fn(u64) -> McEstimate,
{
    let first = estimate(101);
    if first.brackets(closed, 3.0) {
        return (true, first);
    }
    let second = estimate(202);
    (second.brackets(closed, 3.0), second)
}

fn mc_case(name: &str, model: &FactorModel, rate: &QuadraticRate, payoff: &QuadraticPayoff) -> Outcome {
    let start = Instant::now();
    let paths = 100_000;
    let grid = TimeGrid::new(1.0, 500).unwrap();
    let x0 = model.x0();
    let bond = bond_system(model, rate, grid).unwrap().price(0.0, x0).unwrap();
    let fut = futures_system(model, payoff, grid).unwrap().price(0.0, x0).unwrap();
    let fwd = forward_system(model, rate, payoff, grid).unwrap().price(0.0, x0).unwrap();
    let checks = [
        ("bond", bond, bracket(bond, |s| montecarlo::mc_bond(model, rate, paths, grid, s).unwrap())),
        ("futures", fut, bracket(fut, |s| montecarlo::mc_terminal_expectation(model, payoff, paths, grid, s).unwrap())),
        ("forward", fwd, bracket(fwd, |s| montecarlo::mc_forward(model, rate, payoff, paths, grid, s).unwrap().ratio)),
    ];
    let elapsed = start.elapsed();
    let mut detail = format!("{name}:");
    for (product, closed, (ok, est)) in &checks {
        detail.push_str(&format!(
            " {product} {closed:.8} vs {:.8}±{:.1e} ({:+.2}σ{})",
            est.mean,
            est.stderr,
            (closed - est.mean) / est.stderr,
            if *ok { "" } else { " OUT" }
        ));
    }
    detail.push_str(&format!(", runtime {:.2}s (limit 60s)", elapsed.as_secs_f64()));
    outcome(checks.iter().all(|c| c.2 .0) && elapsed <= Duration::from_secs(60), detail)
}

fn criterion_5() -> Outcome {
    let (m1, r1, p1) = reference_1d();
    let (m2, r2, p2) = model_2d();
    let a = mc_case("1D reference", &m1, &r1, &p1);
    let b = mc_case("2D model", &m2, &r2, &p2);
    outcome(a.passed && b.passed, format!("{}; {}", a.detail, b.detail))
}

fn criterion_6() -> Outcome {
    let (model, rate, _) = reference_1d();
    let mut errors = Vec::new();
    for steps in [250, 500, 1000, 2000] {
        let grid = TimeGrid::new(1.0, steps).unwrap();
        let bond = bond_system(&model, &rate, grid).unwrap();
        let report = montecarlo::fbsde_check(&model, &rate, bond.path(), 10_000, grid, 6).unwrap();
        assert_eq!(report.brownian_steps, 2000);
        errors.push(report.mean_abs_terminal_error);
    }
    let monotone = errors.windows(2).all(|w| w[1] < w[0]);

    let constant = QuadraticRate::constant(1, 0.05).unwrap();
    let grid = TimeGrid::new(1.0, 500).unwrap();
    let bond = bond_system(&model, &constant, grid).unwrap();
    let report = montecarlo::fbsde_check(&model, &constant, bond.path(), 1000, grid, 6).unwrap();
    let residual = report.mean_bsde_increment_residual.max(report.max_terminal_error);
    outcome(
        monotone && residual <= 1e-12,
        format!(
            "mean |Y_N-1| over N=250,500,1000,2000: {:.3e}, {:.3e}, {:.3e}, {:.3e} (monotone: {monotone}); constant-rate residual {residual:.1e} (tol 1e-12)",
            errors[0], errors[1], errors[2], errors[3]
        ),
    )
}

fn criterion_7() -> Outcome {
    let (model, _, payoff) = model_2d();
    let rate = QuadraticRate::constant(2, 0.03).unwrap();
    let grid = TimeGrid::new(2.0, 400).unwrap();
    let fwd = forward_system(&model, &rate, &payoff, grid).unwrap();
    let fut = futures_system(&model, &payoff, grid).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst = 0.0f64;
    for _ in 0..100 {
        let x = common::uniform_vec(&mut rng, 2, 1.0);
        for t in grid.nodes() {
            let (f, g) = (fwd.price(t, &x).unwrap(), fut.price(t, &x).unwrap());
            worst = worst.max((f - g).abs() / g);
        }
    }
    outcome(worst <= 1e-10, format!("max |F-G|/G = {worst:.2e} over 401 grid times x 100 states (tol 1e-10)"))
}

fn criterion_8() -> Outcome {
    let (model, _, _) = model_2d();
    let grid = TimeGrid::new(3.0, 600).unwrap();
    let (_, rate, _) = model_2d();
    let sys = bond_system(&model, &rate, grid).unwrap();
    let x = DVector::from_vec(vec![0.4, -0.7]);
    let at_maturity = sys.price(3.0, &x).unwrap() == 1.0 && sys.price(3.0, model.x0()).unwrap() == 1.0;

    let k = 0.05;
    let constant = bond_system(&model, &QuadraticRate::constant(2, k).unwrap(), grid).unwrap();
    let mut constant_err = 0.0f64;
    for t in grid.nodes().into_iter().chain([0.123, 1.7777, 2.999]) {
        let p = constant.price(t, &x).unwrap();
        constant_err = constant_err.max((p - (-k * (3.0 - t)).exp()).abs());
    }

    // c = 0 through the flow formulas against the Γ = 0 Riccati pipeline
    let (alpha, beta, sigma, a, b) = (0.04, 0.6, 0.15, 0.01, 0.8);
    let p = FlowParams::new(alpha, beta, sigma, a, b, 0.0).unwrap();
    let (m1, r1) = p.to_model(0.0).unwrap();
    let vasicek = bond_system(&m1, &r1, grid).unwrap();
    let mut vasicek_err = 0.0f64;
    for (i, t) in grid.nodes().into_iter().enumerate().step_by(10) {
        for xv in [-0.5, 0.0, 0.05, 0.3] {
            let xs = DVector::from_element(1, xv);
            let pipeline = vasicek.price(t, &xs).unwrap();
            let flows = flows1d::bond_price_1d(t, 3.0, xv, &p).unwrap();
            vasicek_err = vasicek_err.max((pipeline - flows).abs());
            assert_eq!(vasicek.path().r2[i][(0, 0)], 0.0);
        }
    }
    outcome(
        at_maturity && constant_err <= 1e-12 && vasicek_err <= 1e-8,
        format!(
            "P(T,T)=1 exact: {at_maturity}; constant-rate error {constant_err:.1e} (tol 1e-12); Vasicek flows vs affine pipeline {vasicek_err:.1e} (tol 1e-8)"
        ),
    )
}

fn criterion_9() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_qtsm");
    let config: PathBuf = [env!("CARGO_MANIFEST_DIR"), "..", "..", "configs", "reference_1d.json"].iter().collect();
    let run = |threads: Option<&str>| {
        let mut cmd = Command::new(exe);
        cmd.args(["validate", "--paths", "20000", "--steps", "100", "--seed", "99", "--config"]).arg(&config);
        match threads {
            Some(t) => cmd.env("QTSM_THREADS", t),
            None => cmd.env_remove("QTSM_THREADS"),
        };
        let out = cmd.output().expect("binary runs");
        (out.status.code(), out.stdout)
    };
    let runs = [run(Some("1")), run(Some("4")), run(None), run(Some("4")), run(Some("1"))];
    let all_ok = runs.iter().all(|r| r.0 == Some(0) && !r.1.is_empty());
    let identical = runs.iter().all(|r| r.1 == runs[0].1);
    outcome(
        all_ok && identical,
        format!(
            "5 validate runs (QTSM_THREADS=1,4,unset,4,1): exit 0: {all_ok}, byte-identical: {identical} ({} bytes)",
            runs[0].1.len()
        ),
    )
}

fn main() {
    let criteria: [(&str, Criterion); 9] = [
        ("Riccati oracle equivalence", criterion_1),
        ("decomposition invariants", criterion_2),
        ("flows cross-check", criterion_3),
        ("Feynman-Kac residual", criterion_4),
        ("Monte Carlo bracketing", criterion_5),
        ("FBSDE verification", criterion_6),
        ("deterministic-rate identity", criterion_7),
        ("degenerate-case exactness", criterion_8),
        ("determinism", criterion_9),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let result = check();
        if !result.passed {
            failed += 1;
        }
        println!(
            "criterion {} [{}] {name}: {}",
            i + 1,
            if result.passed { "PASS" } else { "FAIL" },
            result.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
