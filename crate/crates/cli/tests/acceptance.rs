//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line
//! (written straight to stderr so it shows even when output is captured)
//! and then asserts the outcome.

use std::io::Write;
use std::process::Command;

use rand::SeedableRng;
use rayon::prelude::*;

use ltinact::degree_dist::{make_lrfc, make_rsd, make_truncated_rsd, DegreeDistribution, DistSpec};
use ltinact::failure_bound::pf_lower_bound;
use ltinact::gf2::{self, DenseBitMatrix};
use ltinact::harness::{run_simulation, simulate_trajectory, ExperimentSpec, Mode, SimStats};
use ltinact::lt_codec::{decode_structure, encode_with, CodecRng, InactivationStrategy};
use ltinact::ripple_model::predict_inactivations;
use ltinact::sa_optimizer::{anneal, evaluate, rsd_parameter_search, AnnealConfig, DesignConstraints};

const EPS_GRID: [f64; 7] = [0.0, 0.05, 0.1, 0.15, 0.2, 0.25, 0.3];

fn report(n: u32, name: &str, pass: bool, detail: &str) {
    let verdict = if pass { "PASS" } else { "FAIL" };
    let _ = writeln!(std::io::stderr(), "criterion {n} [{verdict}] {name}: {detail}");
}

fn simulate(dist: &str, k: usize, eps: &[f64], trials: usize, strategy: InactivationStrategy, seed: u64) -> Vec<SimStats> {
    let mut s = ExperimentSpec::new(Mode::Simulate, dist.parse().unwrap(), k, eps.to_vec());
    s.trials = trials;
    s.strategy = strategy;
    s.master_seed = seed;
    run_simulation(&s).unwrap()
}

#[test]
fn criterion_1_predictor_accuracy() {
    let k = 1000;
    let mut worst = (0.0f64, String::new());
    let mut pass = true;
    for (name, spec, dist) in [
        ("RSD", "rsd:0.09266,0.001993", make_rsd(k, 0.09266, 0.001993).unwrap()),
        ("LRFC", "lrfc:12", make_lrfc(k, 12.0).unwrap()),
    ] {
        let sims = simulate(spec, k, &EPS_GRID, 200, InactivationStrategy::Random, 1);
        for s in &sims {
            let pred = predict_inactivations(k, s.epsilon, &dist).n_inact_total;
            let gap = (pred - s.mean_inactivations).abs();
            let tol = f64::max(2.0, 0.1 * s.mean_inactivations);
            let line = format!(
                "{name} eps={} predicted {pred:.2} simulated {:.2} gap {gap:.2} tol {tol:.2}",
                s.epsilon, s.mean_inactivations
            );
            let _ = writeln!(std::io::stderr(), "    {line}");
            if gap > tol {
                pass = false;
            }
            if gap / tol > worst.0 {
                worst = (gap / tol, line);
            }
        }
    }
    report(1, "predictor accuracy", pass, &format!("worst {}", worst.1));
    assert!(pass);
}

fn mae(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

#[test]
fn criterion_2_trajectory_accuracy() {
    let (k, eps) = (1000, 0.2);
    let dist = make_rsd(k, 0.09266, 0.001993).unwrap();
    let model = predict_inactivations(k, eps, &dist).trajectory;
    let sim = simulate_trajectory(k, eps, &dist, 200, InactivationStrategy::Random, 2, 3).unwrap();
    let mut pass = true;
    let mut parts = Vec::new();
    let mut check = |label: &str, model_curve: Vec<f64>, sim_curve: &[f64]| {
        let peak = sim_curve.iter().cloned().fold(0.0, f64::max);
        let err = mae(&model_curve, sim_curve);
        let ok = err <= 0.05 * peak;
        pass &= ok;
        parts.push(format!("{label} mae {err:.3} / peak {peak:.1} ({:.1}%)", 100.0 * err / peak));
    };
    for i in 1..=3 {
        check(&format!("R{i}"), model.iter().map(|s| s.ripple(i)).collect(), &sim.ripples[i - 1]);
    }
    check("cum_inact", model.iter().map(|s| s.cum_inact).collect(), &sim.cum_inact);
    report(2, "trajectory accuracy", pass, &parts.join("; "));
    assert!(pass);
}

/// Probability that `m` uniform draws from `k` items miss at least one item.
fn uncovered_probability(k: usize, m: usize) -> f64 {
    // inclusion-exclusion with exact binomials in f64 is fine for k <= 20
    let mut s = 0.0;
    let mut binom = 1.0;
    for i in 1..=k {
        binom = binom * (k - i + 1) as f64 / i as f64;
        let sign = if i % 2 == 1 { 1.0 } else { -1.0 };
        s += sign * binom * (1.0 - i as f64 / k as f64).powi(m as i32);
    }
    s
}

#[test]
fn criterion_3_bound_exact_for_degree_one() {
    let mut worst = 0.0f64;
    for k in 1..=20 {
        let d = DegreeDistribution::new(k, [(1, 1.0)]).unwrap();
        for eps in [0.0, 0.1, 0.5, 1.0] {
            let m = ltinact::lt_codec::received_symbols(k, eps);
            let b = pf_lower_bound(&d, k, eps, 256).unwrap().value;
            worst = worst.max((b - uncovered_probability(k, m)).abs());
        }
    }
    let k2 = pf_lower_bound(&DegreeDistribution::new(2, [(1, 1.0)]).unwrap(), 2, 0.0, 256).unwrap().value;
    let pass = worst <= 1e-9 && (k2 - 0.5).abs() <= 1e-12;
    report(3, "bound exact on degree-one codes", pass, &format!("max abs error {worst:.2e}; k=2,m=2 -> {k2}"));
    assert!(pass);
}

#[test]
fn criterion_4_ml_equivalence() {
    let dists: Vec<Box<dyn Fn(usize) -> DegreeDistribution + Sync>> = vec![
        Box::new(|k| make_rsd(k, 0.1, 0.5).unwrap()),
        Box::new(|k| make_lrfc(k, (k as f64 / 2.0).clamp(1.0, 8.0)).unwrap()),
        Box::new(|k| DegreeDistribution::new(k, [(1, 0.3), (2, 0.4), (k.min(3), 0.3)]).unwrap()),
        Box::new(|k| DegreeDistribution::new(k, [(1, 1.0)]).unwrap()),
    ];
    let outcomes: Vec<(bool, bool)> = (0..1200u64)
        .into_par_iter()
        .map(|i| {
            let mut rng = CodecRng::seed_from_u64(i);
            let k = 1 + (i as usize * 7919) % 64;
            let m = k + (i as usize % 5) * k / 8;
            let dist = dists[i as usize % dists.len()](k);
            let g = encode_with(k, m, &dist, &mut rng).unwrap();
            let strategy = if i % 2 == 0 {
                InactivationStrategy::Random
            } else {
                InactivationStrategy::MaxActiveDegree
            };
            let t = decode_structure(&g, strategy, &mut rng);
            let dense: DenseBitMatrix = g.to_dense();
            (t.success, gf2::rank(&dense) == k)
        })
        .collect();
    let mismatches = outcomes.iter().filter(|(a, b)| a != b).count();
    let successes = outcomes.iter().filter(|(a, _)| *a).count();
    let pass = mismatches == 0;
    report(
        4,
        "ML equivalence",
        pass,
        &format!("{} instances, {successes} full rank, {mismatches} mismatches", outcomes.len()),
    );
    assert!(pass);
}

#[test]
fn criterion_5_strategy_ordering() {
    let spec = "rsd-trunc:0.09266,0.001993,150";
    let eps = [0.0, 0.1];
    let r = simulate(spec, 1000, &eps, 500, InactivationStrategy::Random, 5);
    let m = simulate(spec, 1000, &eps, 500, InactivationStrategy::MaxActiveDegree, 5);
    let mut pass = true;
    let mut parts = Vec::new();
    for (a, b) in r.iter().zip(&m) {
        let ok = b.mean_inactivations <= a.mean_inactivations && b.mean_inactivations >= 0.8 * a.mean_inactivations;
        pass &= ok;
        parts.push(format!(
            "eps={} random {:.2} max-active-degree {:.2} ({:+.1}%)",
            a.epsilon,
            a.mean_inactivations,
            b.mean_inactivations,
            100.0 * (b.mean_inactivations / a.mean_inactivations - 1.0)
        ));
    }
    report(5, "strategy ordering", pass, &parts.join("; "));
    assert!(pass);
}

#[test]
fn criterion_6_optimization() {
    let k = 1000;
    let c = DesignConstraints::standard(k);
    let c_grid = [0.005, 0.0075, 0.01, 0.0125, 0.015, 0.02, 0.03, 0.05, 0.075, 0.1];
    let d_grid = [0.0005, 0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5];
    let grid = rsd_parameter_search(&c, &c_grid, &d_grid).expect("a feasible grid point");

    let mut cfg = AnnealConfig::new(c.clone(), grid.dist.clone());
    cfg.t_init = 0.1;
    cfg.perturbation_scale = 0.5;
    cfg.moves_per_temperature = 100;
    cfg.seed = 7;
    let run = anneal(&cfg).unwrap();
    let sa = evaluate(&run.best_dist, &c);

    let sim = |d: &DegreeDistribution, path: &std::path::Path| {
        std::fs::write(path, d.to_text()).unwrap();
        let spec = format!("file:{}", path.display());
        simulate(&spec, k, &[0.0], 200, InactivationStrategy::Random, 6).remove(0)
    };
    let dir = tempfile::tempdir().unwrap();
    let s_grid = sim(&grid.dist, &dir.path().join("grid.txt"));
    let s_sa = sim(&run.best_dist, &dir.path().join("sa.txt"));
    let se = (s_grid.stderr.powi(2) + s_sa.stderr.powi(2)).sqrt();
    let diff = s_grid.mean_inactivations - s_sa.mean_inactivations;

    let pass = sa.n_inact < grid.energy.n_inact && sa.pf_bound <= c.pf_target && diff > 2.0 * se;
    report(
        6,
        "optimization beats truncated RSD",
        pass,
        &format!(
            "grid rsd-trunc:{},{},150 predicted {:.2}; annealed predicted {:.2}, bound {:.4e}, mean degree {:.3}; \
             simulated {:.2} vs {:.2} (diff {diff:.2}, 2 SE {:.2})",
            grid.c,
            grid.delta,
            grid.energy.n_inact,
            sa.n_inact,
            sa.pf_bound,
            run.best_dist.mean_degree(),
            s_grid.mean_inactivations,
            s_sa.mean_inactivations,
            2.0 * se
        ),
    );
    assert!(pass);
}

#[test]
fn criterion_7_numerical_hygiene() {
    let k = 10_000;
    let dists = [
        ("rsd-trunc:0.05642,0.0317,150", make_truncated_rsd(k, 0.05642, 0.0317, 150).unwrap()),
        ("lrfc:12", make_lrfc(k, 12.0).unwrap()),
    ];
    let mut worst = 0.0f64;
    let mut finite = true;
    for (_, d) in &dists {
        for eps in [0.0, 0.05, 0.1, 0.2] {
            let a = pf_lower_bound(d, k, eps, 256).unwrap().value;
            let b = pf_lower_bound(d, k, eps, 512).unwrap().value;
            finite &= a.is_finite() && b.is_finite();
            if b > 0.0 {
                worst = worst.max((a - b).abs() / b);
            } else {
                worst = worst.max(a.abs());
            }
        }
    }
    // sweep at desk scale: predictions and bounds over the figure grid
    for spec in ["rsd:0.09266,0.001993", "lrfc:12", "rsd-trunc:0.01,0.002,150"] {
        let d = spec.parse::<DistSpec>().unwrap().build(1000).unwrap();
        for eps in EPS_GRID {
            let p = predict_inactivations(1000, eps, &d);
            finite &= p.trajectory.iter().all(|s| {
                s.m_j.is_finite() && s.cum_inact.is_finite() && s.p.iter().all(|x| x.is_finite())
            });
            finite &= pf_lower_bound(&d, 1000, eps, 256).unwrap().value.is_finite();
        }
    }
    let pass = worst < 1e-9 && finite;
    report(
        7,
        "numerical hygiene",
        pass,
        &format!("max relative change 256->512 bits at k=10^4: {worst:.2e}; all finite: {finite}"),
    );
    assert!(pass);
}

#[test]
fn criterion_8_determinism() {
    let bin = env!("CARGO_BIN_EXE_ltinact");
    let dir = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec!["simulate", "--k", "300", "--dist", "rsd:0.1,0.05", "--eps", "0:0.1:0.2", "--trials", "40", "--seed", "9"],
        vec![
            "simulate", "--k", "300", "--dist", "lrfc:8", "--eps", "0.05", "--trials", "20", "--seed", "3",
            "--strategy", "max-active-degree",
        ],
        vec!["predict", "--k", "500", "--dist", "rsd:0.09266,0.001993", "--eps", "0:0.05:0.3"],
        vec!["bound", "--k", "500", "--dist", "rsd-trunc:0.05,0.05,100", "--eps", "0,0.1,0.2"],
        vec!["dist", "--k", "200", "--dist", "lrfc:6"],
        vec!["optimize", "--k", "80", "--max-steps", "150", "--seed", "4"],
    ];
    let mut pass = true;
    let mut failed = Vec::new();
    for (i, args) in cases.iter().enumerate() {
        let outs: Vec<Vec<u8>> = (0..2)
            .map(|r| {
                let path = dir.path().join(format!("{i}_{r}.csv"));
                let st = Command::new(bin)
                    .args(args)
                    .arg("--out")
                    .arg(&path)
                    .output()
                    .unwrap();
                assert!(st.status.success(), "{args:?}: {}", String::from_utf8_lossy(&st.stderr));
                std::fs::read(&path).unwrap()
            })
            .collect();
        if outs[0] != outs[1] || outs[0].is_empty() {
            pass = false;
            failed.push(args[0]);
        }
    }
    report(
        8,
        "determinism",
        pass,
        &format!("{} invocations repeated, differing: {failed:?}", cases.len()),
    );
    assert!(pass);
}
