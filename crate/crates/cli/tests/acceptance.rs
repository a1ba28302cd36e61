//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit if any
//! criterion fails.

use std::path::Path;
use std::time::Instant;

use clap::Parser;
use mecm::dgp::{build_companion, has_bounded_variance, random_mecm_spec, simulate_dgp, DgpSpec};
use mecm::estimator::Gradients;
use mecm::harness::{run_montecarlo, MonteCarloReport};
use mecm::linalg::standard_normal_matrix;
use mecm::{
    effective_params, fit, gradients, kron, log_likelihood, normalize_identification, residuals, to_vecm, vec,
    vecm_param_count, Criterion, FitOptions, MatNormSpec, MatrixSeries, MecmParams, RankPair,
};
use mecm_cli::commands::{cmd_fit, cmd_select, cmd_simulate, preset_cells, Preset};
use mecm_cli::{Cli, Command};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const LN_2PI: f64 = 1.837_877_066_409_345_5;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

fn normal(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    standard_normal_matrix(rng, rows, cols)
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = normal(rng, n, n);
    let m = &a * a.transpose() / n as f64 + DMatrix::identity(n, n) * 0.5;
    (&m + m.transpose()) * 0.5
}

fn random_ranks(rng: &mut ChaCha8Rng) -> RankPair {
    RankPair::new(rng.random_range(1..=3), rng.random_range(1..=4))
}

fn random_params(rng: &mut ChaCha8Rng, ranks: RankPair, p: usize) -> MecmParams {
    MecmParams::new(
        normal(rng, 3, 4) * 0.3,
        normal(rng, 3, ranks.r1) * 0.4,
        normal(rng, 4, ranks.r2) * 0.4,
        normal(rng, 3, ranks.r1) * 0.6,
        normal(rng, 4, ranks.r2) * 0.6,
        (0..p).map(|_| normal(rng, 3, 3) * 0.3).collect(),
        (0..p).map(|_| normal(rng, 4, 4) * 0.3).collect(),
        MatNormSpec::new(random_spd(rng, 3), random_spd(rng, 4)).unwrap(),
    )
    .unwrap()
}

fn random_walk(rng: &mut ChaCha8Rng, t: usize) -> MatrixSeries {
    let mut y = DMatrix::zeros(3, 4);
    let data = (0..t)
        .map(|_| {
            y += normal(rng, 3, 4);
            y.clone()
        })
        .collect();
    MatrixSeries::new(data).unwrap()
}

fn mvn_logpdf(x: &DVector<f64>, cov: &DMatrix<f64>) -> f64 {
    let l = cov.clone().cholesky().expect("SPD covariance").l();
    let logdet: f64 = 2.0 * l.diagonal().iter().map(|d| d.ln()).sum::<f64>();
    let z = l.solve_lower_triangular(x).unwrap();
    -0.5 * (x.len() as f64 * LN_2PI + logdet + z.norm_squared())
}

fn parameter_counts() -> Outcome {
    let psi = effective_params(RankPair::new(1, 1), 2, 3, 4).unwrap();
    let vecm = vecm_param_count(12, 1, 2).unwrap();
    outcome(psi == 62 && vecm == 311, format!("psi = {psi}, VECM count = {vecm}"))
}

fn likelihood_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for case in 0..100 {
        let ranks = random_ranks(&mut rng);
        let params = random_params(&mut rng, ranks, case % 3);
        let series = random_walk(&mut rng, 30);
        let cov = kron(params.sigma.sigma2(), params.sigma.sigma1());
        let res = to_vecm(&params).residuals(&params.d, &series);
        let dense: f64 = res.iter().map(|e| mvn_logpdf(e, &cov)).sum();
        let constant = 0.5 * (res.len() * 12) as f64 * LN_2PI;
        let got = log_likelihood(&params, &series).unwrap();
        worst = worst.max((got - constant - dense).abs());
    }
    outcome(worst < 1e-9, format!("100 draws, max |difference| = {worst:.2e} (< 1e-9)"))
}

#[derive(Clone, Copy)]
enum Block {
    D,
    U1,
    U2,
    U3,
    U4,
    Sigma1,
    Sigma2,
    Phi1(usize),
    Phi2(usize),
}

fn analytic(g: &Gradients, b: Block) -> &DMatrix<f64> {
    match b {
        Block::D => &g.d,
        Block::U1 => &g.u1,
        Block::U2 => &g.u2,
        Block::U3 => &g.u3,
        Block::U4 => &g.u4,
        Block::Sigma1 => &g.sigma1,
        Block::Sigma2 => &g.sigma2,
        Block::Phi1(j) => &g.phi1[j],
        Block::Phi2(j) => &g.phi2[j],
    }
}

fn shifted(params: &MecmParams, b: Block, dir: &DMatrix<f64>) -> MecmParams {
    let mut p = params.clone();
    let (s1, s2) = (params.sigma.sigma1(), params.sigma.sigma2());
    match b {
        Block::D => p.d += dir,
        Block::U1 => p.u1 += dir,
        Block::U2 => p.u2 += dir,
        Block::U3 => p.u3 += dir,
        Block::U4 => p.u4 += dir,
        Block::Sigma1 => p.sigma = MatNormSpec::new(s1 + dir, s2.clone()).unwrap(),
        Block::Sigma2 => p.sigma = MatNormSpec::new(s1.clone(), s2 + dir).unwrap(),
        Block::Phi1(j) => p.phi1[j] += dir,
        Block::Phi2(j) => p.phi2[j] += dir,
    }
    p
}

/// Central differences; covariance blocks move along `E_ij + E_ji`.
fn finite_difference(params: &MecmParams, series: &MatrixSeries, shape: (usize, usize), b: Block) -> DMatrix<f64> {
    let h = 1e-5;
    let symmetric = matches!(b, Block::Sigma1 | Block::Sigma2);
    DMatrix::from_fn(shape.0, shape.1, |i, j| {
        let mut dir = DMatrix::zeros(shape.0, shape.1);
        dir[(i, j)] += h;
        if symmetric && i != j {
            dir[(j, i)] += h;
        }
        let up = log_likelihood(&shifted(params, b, &dir), series).unwrap();
        let down = log_likelihood(&shifted(params, b, &(-dir)), series).unwrap();
        let d = (up - down) / (2.0 * h);
        if symmetric && i != j {
            0.5 * d
        } else {
            d
        }
    })
}

fn gradient_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut worst: f64 = 0.0;
    let blocks = [
        Block::D,
        Block::U1,
        Block::U2,
        Block::U3,
        Block::U4,
        Block::Sigma1,
        Block::Sigma2,
        Block::Phi1(0),
        Block::Phi2(0),
    ];
    for _ in 0..20 {
        let ranks = random_ranks(&mut rng);
        let params = random_params(&mut rng, ranks, 1);
        let series = random_walk(&mut rng, 100);
        let g = gradients(&params, &series).unwrap();
        for &b in &blocks {
            let a = analytic(&g, b);
            let fd = finite_difference(&params, &series, a.shape(), b);
            worst = worst.max((a - &fd).norm() / fd.norm().max(1.0));
        }
    }
    outcome(worst < 1e-5, format!("20 points, all blocks, max relative error = {worst:.2e} (< 1e-5)"))
}

fn monotone_ascent() -> Outcome {
    let mut bad = 0;
    let mut iterations = 0;
    for seed in 0..20u64 {
        let ranks = RankPair::new(1 + seed as usize % 3, 1 + seed as usize % 4);
        let p = seed as usize % 2;
        let (_, series) = simulate_dgp(&DgpSpec::new(3, 4, ranks, p, 120, 500 + seed)).unwrap();
        let fit_ranks = RankPair::new(1 + (seed as usize / 3) % 3, 1 + (seed as usize / 2) % 4);
        let res = fit(&series, fit_ranks, p, &FitOptions::default()).unwrap();
        iterations += res.iterations;
        bad += res.loglik_trace.windows(2).filter(|w| w[1] < w[0]).count();
    }
    outcome(bad == 0, format!("20 fits, {iterations} sweeps, {bad} decreasing steps"))
}

fn identification() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let (mut dl, mut idem): (f64, f64) = (0.0, 0.0);
    for case in 0..50 {
        let ranks = random_ranks(&mut rng);
        let params = random_params(&mut rng, ranks, case % 3);
        let series = random_walk(&mut rng, 60);
        let once = normalize_identification(&params).unwrap();
        let twice = normalize_identification(&once).unwrap();
        dl = dl.max((log_likelihood(&params, &series).unwrap() - log_likelihood(&once, &series).unwrap()).abs());
        let mut diffs = vec![
            (&twice.u1 - &once.u1).amax(),
            (&twice.u2 - &once.u2).amax(),
            (&twice.u3 - &once.u3).amax(),
            (&twice.u4 - &once.u4).amax(),
            (twice.sigma.sigma1() - once.sigma.sigma1()).amax(),
            (twice.sigma.sigma2() - once.sigma.sigma2()).amax(),
        ];
        for j in 0..params.p {
            diffs.push((&twice.phi1[j] - &once.phi1[j]).amax());
            diffs.push((&twice.phi2[j] - &once.phi2[j]).amax());
        }
        idem = diffs.into_iter().fold(idem, f64::max);
    }
    outcome(
        dl < 1e-10 && idem < 1e-12,
        format!("50 sets, max |dL| = {dl:.2e} (< 1e-10), max re-normalization change = {idem:.2e} (< 1e-12)"),
    )
}

fn kronecker_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let ranks = random_ranks(&mut rng);
        let params = random_params(&mut rng, ranks, case % 3);
        let series = random_walk(&mut rng, 40);
        let matrix_form = residuals(&params, &series).unwrap();
        let vec_form = to_vecm(&params).residuals(&params.d, &series);
        for (m, v) in matrix_form.iter().zip(&vec_form) {
            worst = worst.max((vec(m) - v).amax());
        }
    }
    outcome(worst < 1e-12, format!("50 cases, max |difference| = {worst:.2e} (< 1e-12)"))
}

fn dgp_validity() -> Outcome {
    let grid = RankPair::grid(3, 4);
    let mut stable = 0;
    for seed in 0..100u64 {
        let spec = DgpSpec::new(3, 4, grid[seed as usize % grid.len()], seed as usize % 2, 100, 900 + seed);
        let radius = build_companion(&random_mecm_spec(&spec).unwrap()).spectral_radius();
        stable += (radius > 0.0 && radius < 1.0) as usize;
    }
    // at full rank every combination is stationary
    let reduced: Vec<RankPair> = grid.iter().copied().filter(|r| r.r1 * r.r2 < 12).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(106);
    let seeds = 100u64;
    let mut both = 0;
    for seed in 0..seeds {
        let ranks = reduced[seed as usize % reduced.len()];
        let (params, series) = simulate_dgp(&DgpSpec::new(3, 4, ranks, seed as usize % 2, 1000, 1000 + seed)).unwrap();
        let beta = to_vecm(&params).beta;
        let coint_ok = (0..beta.ncols()).all(|k| {
            let x: Vec<f64> = series.iter().map(|y| beta.column(k).dot(&vec(y))).collect();
            has_bounded_variance(&x)
        });
        let w = DVector::from_fn(12, |_, _| rng.random::<f64>() - 0.5);
        let other: Vec<f64> = series.iter().map(|y| w.dot(&vec(y))).collect();
        both += (coint_ok && !has_bounded_variance(&other)) as usize;
    }
    let share = both as f64 / seeds as f64;
    outcome(
        stable == 100 && share >= 0.9,
        format!("{stable}/100 DGPs with radius in (0, 1); variance check separates combinations in {share:.2} of seeds (>= 0.90)"),
    )
}

fn run_cell(preset: Preset, ranks: (usize, usize), t: usize) -> MonteCarloReport {
    let mut cell = preset_cells(preset)
        .into_iter()
        .find(|c| c.true_ranks == RankPair::new(ranks.0, ranks.1))
        .expect("preset cell");
    cell.t_values = vec![t];
    run_montecarlo(&cell).expect("Monte Carlo cell runs")
}

struct CellCheck {
    ranks: (usize, usize),
    t: usize,
    criterion: Criterion,
    accept: fn(f64) -> bool,
    bound: &'static str,
}

fn replication(preset: Preset, checks: &[CellCheck]) -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for c in checks {
        let report = run_cell(preset, c.ranks, c.t);
        let s = report.summary(c.criterion, c.t).expect("summary");
        let ok = s.failures == 0 && (c.accept)(s.freq_correct.0) && (c.accept)(s.freq_correct.1);
        pass &= ok;
        parts.push(format!(
            "{}({},{}) T={} {} freq ({:.2}, {:.2}) {} [{}]",
            if ok { "" } else { "FAILED " },
            c.ranks.0,
            c.ranks.1,
            c.t,
            c.criterion,
            s.freq_correct.0,
            s.freq_correct.1,
            c.bound,
            if s.failures > 0 {
                format!("{} failed reps", s.failures)
            } else {
                format!("{} reps", s.successes)
            }
        ));
    }
    outcome(pass, parts.join("; "))
}

fn at_least_90(f: f64) -> bool {
    f >= 0.90
}

fn near_one(f: f64) -> bool {
    (f - 1.0).abs() <= 0.02
}

fn static_recovery() -> Outcome {
    let checks = [
        CellCheck { ranks: (1, 1), t: 100, criterion: Criterion::Bic, accept: at_least_90, bound: ">= 0.90" },
        CellCheck { ranks: (3, 4), t: 100, criterion: Criterion::Aic, accept: near_one, bound: "= 1.00 +/- 0.02" },
        CellCheck { ranks: (3, 4), t: 100, criterion: Criterion::Bic, accept: near_one, bound: "= 1.00 +/- 0.02" },
        CellCheck { ranks: (1, 4), t: 250, criterion: Criterion::Aic, accept: at_least_90, bound: ">= 0.90" },
    ];
    replication(Preset::Static, &checks)
}

fn lagged_recovery() -> Outcome {
    let checks = [
        CellCheck { ranks: (1, 1), t: 250, criterion: Criterion::Bic, accept: at_least_90, bound: ">= 0.90" },
        CellCheck { ranks: (3, 1), t: 100, criterion: Criterion::Bic, accept: at_least_90, bound: ">= 0.90" },
    ];
    replication(Preset::Lagged, &checks)
}

fn parse(args: &[&str]) -> Cli {
    Cli::try_parse_from(std::iter::once("mecm").chain(args.iter().copied())).expect("valid arguments")
}

fn empirical_substitute() -> Outcome {
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("acceptance");
    std::fs::create_dir_all(&dir).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    for seed in 1..=5u64 {
        let csv = dir.join(format!("panel-{seed}.csv"));
        let csv_s = csv.to_str().unwrap();
        let seed_s = seed.to_string();
        let Command::Simulate(sim) = parse(&["simulate", "--r1", "1", "--r2", "1", "--p", "1", "--t", "250", "--seed", &seed_s, "-o", csv_s]).command else {
            unreachable!()
        };
        cmd_simulate(&sim, "acceptance").unwrap();
        let Command::Select(sel) = parse(&["select", "-i", csv_s, "--p", "1"]).command else {
            unreachable!()
        };
        let (selection, _) = cmd_select(&sel, "acceptance").unwrap();
        let Command::Fit(f) = parse(&["fit", "-i", csv_s, "--r1", "1", "--r2", "1", "--p", "1"]).command else {
            unreachable!()
        };
        let (report, text) = cmd_fit(&f, "acceptance").unwrap();
        let bic = selection.report.chosen_bic;
        let leading = report.params.u3.0[0][0] == 1.0 && report.params.u4.0[0][0] == 1.0;
        let printed = ["R1", "C1"].iter().all(|label| {
            text.lines()
                .any(|l| l.split_whitespace().collect::<Vec<_>>() == [*label, "1.000"])
        });
        let ok = bic == RankPair::new(1, 1) && leading && printed;
        pass &= ok;
        parts.push(format!(
            "seed {seed}: BIC {bic}, AIC {}, leading U3/U4 = {}",
            selection.report.chosen_aic,
            if leading && printed { "1.000/1.000" } else { "not unit" }
        ));
    }
    outcome(pass, parts.join("; "))
}

type Check = (&'static str, fn() -> Outcome);

fn main() {
    let criteria: [Check; 10] = [
        ("parameter-count identities", parameter_counts),
        ("likelihood equivalence", likelihood_equivalence),
        ("gradient correctness", gradient_correctness),
        ("monotone ascent", monotone_ascent),
        ("identification neutrality", identification),
        ("kronecker-structure equivalence", kronecker_equivalence),
        ("dgp validity", dgp_validity),
        ("rank recovery, MECM(0) DGP, 100 reps", static_recovery),
        ("rank recovery, MECM(1) DGP, 100 reps", lagged_recovery),
        ("planted (1,1) panel: selection and normalization", empirical_substitute),
    ];
    let mut failed = 0;
    for (name, check) in criteria {
        let start = Instant::now();
        let o = check();
        failed += !o.pass as usize;
        println!(
            "{} {name}: {} ({:.1}s)",
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
