//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//!
//! Reference settings: dt = 1e-3, 1e5 paths, one fixed seed for every run.

use std::time::Instant;

use rand_distr::{Distribution, StandardNormal};
use statrs::distribution::{ContinuousCDF, Normal};
use stochexp::catalog::{catalog, catalog_get, Params};
use stochexp::conditions::{benes_verdict, kazamaki_estimate, GrowthDomain};
use stochexp::diagnostics::{run_pass, supermartingale_scan, EzReport, LadderReport, PassPlan, DEFAULT_LEVELS};
use stochexp::exponential::{exponential_closed_form, exponential_from_sde, martingale_increments};
use stochexp::measure_change::{girsanov_consistency, quadratic_variation_check, tilt_model, Functional, TiltConfig};
use stochexp::report::{run, RunConfig};
use stochexp::stats::McEstimate;
use stochexp::{CoefficientSet, EnsembleConfig, ModelSpec, Simulator, TimeGrid};

const SEED: u64 = 20240601;
const DT: f64 = 1e-3;
const PATHS: usize = 100_000;
const K_SE: f64 = 3.0;
/// E z_1 for the Bessel model: E[1/|e_1 + W_1|] = 2 Phi(1) - 1.
const BESSEL_EZ: f64 = 0.6827;

struct Outcome {
    id: u32,
    title: &'static str,
    pass: bool,
    summary: String,
}

fn fmt(e: &McEstimate) -> String {
    format!("{:.4} +- {:.4}", e.mean, e.se)
}

fn mark(ok: bool) -> &'static str {
    if ok {
        "ok  "
    } else {
        "MISS"
    }
}

struct CatalogRun {
    name: &'static str,
    levels_ok: Vec<(f64, bool, McEstimate)>,
    checkpoints_ok: Vec<(f64, bool, McEstimate)>,
    terminal: McEstimate,
}

/// One reference pass per catalog model; feeds criteria 1, 2 and 5.
fn catalog_runs() -> Vec<CatalogRun> {
    catalog()
        .iter()
        .map(|entry| {
            let t = Instant::now();
            let spec = entry.model();
            let grid = TimeGrid::new(spec.horizon, DT).unwrap();
            let sim = Simulator::new(&spec, grid, SEED).unwrap();
            let plan = PassPlan::full(&spec, 10, &DEFAULT_LEVELS);
            let records = run_pass(&sim, &plan, PATHS, 0).unwrap();
            let ladder = LadderReport::from_records(&records, &DEFAULT_LEVELS, plan.variant);
            let scan = supermartingale_scan(&records, &grid, 10).unwrap();
            let run = CatalogRun {
                name: entry.name,
                levels_ok: ladder.levels.iter().map(|l| (l.level, l.stopped.within(1.0, K_SE), l.stopped)).collect(),
                checkpoints_ok: scan.iter().map(|c| (c.time, c.supermartingale_ok, c.estimate)).collect(),
                terminal: EzReport::from_records(&records, None).estimate,
            };
            println!("    [{} paths of {} in {:.1}s]", PATHS, entry.name, t.elapsed().as_secs_f64());
            run
        })
        .collect()
}

fn criterion_1(runs: &[CatalogRun]) -> Outcome {
    let mut misses = Vec::new();
    for r in runs {
        for (level, ok, est) in &r.levels_ok {
            println!("    {} {:<30} n = {:>6.0e}  E z(T ^ tau_n) = {}", mark(*ok), r.name, level, fmt(est));
            if !ok {
                misses.push(format!("{}@{:.0e}", r.name, level));
            }
        }
    }
    Outcome {
        id: 1,
        title: "localized martingale identity, every model and level",
        pass: misses.is_empty(),
        summary: if misses.is_empty() { "all stopped means within 3 se of 1".into() } else { format!("outside 3 se: {}", misses.join(", ")) },
    }
}

fn criterion_2(runs: &[CatalogRun]) -> Outcome {
    let mut misses = Vec::new();
    for r in runs {
        let worst = r.checkpoints_ok.iter().max_by(|a, b| a.2.mean.total_cmp(&b.2.mean)).unwrap();
        let ok = r.checkpoints_ok.iter().all(|c| c.1);
        println!("    {} {:<30} largest E z_t at t = {:.1}: {}", mark(ok), r.name, worst.0, fmt(&worst.2));
        if !ok {
            misses.push(r.name);
        }
    }
    Outcome {
        id: 2,
        title: "supermartingale at 10 checkpoints",
        pass: misses.is_empty(),
        summary: if misses.is_empty() { "E z_t <= 1 + 3 se everywhere".into() } else { format!("violated for {}", misses.join(", ")) },
    }
}

fn criterion_3() -> Outcome {
    let spec = catalog_get("bm_quadratic").unwrap().model();
    let grid = TimeGrid::new(1.0, DT).unwrap();
    let sim = Simulator::new(&spec, grid, SEED).unwrap();
    let mut plan = PassPlan::terminal_only(&spec);
    plan.checkpoints = 10;
    let records = run_pass(&sim, &plan, 1_000_000, 0).unwrap();
    let ez = EzReport::from_records(&records, None).estimate;
    let half_mc: Vec<Vec<f64>> = (0..10).map(|j| records.iter().map(|r| r.half_mc[j]).collect()).collect();
    drop(records);
    let kaz = kazamaki_estimate(&half_mc);
    let near_one = ez.within(1.0, K_SE);
    let tight = ez.se < 0.02;
    println!("    {} E z_1 = {} (top 0.1% mass {:.2})", mark(near_one), fmt(&ez), ez.top_mass_fraction);
    println!("    {} se < 0.02", mark(tight));
    println!(
        "    {} Kazamaki sup_t E exp(M_t / 2) = {:.3}, tail index {:.3} +- {:.3}, shells {:?}",
        mark(kaz.diverging),
        kaz.estimate.mean,
        kaz.tail_index.unwrap_or(f64::NAN),
        kaz.tail_index_se.unwrap_or(f64::NAN),
        kaz.shell_means.iter().map(|v| (v * 1000.0).round() / 1000.0).collect::<Vec<_>>()
    );
    Outcome {
        id: 3,
        title: "bm_quadratic: E z_1 = 1 with se < 0.02 while Kazamaki diverges (1e6 paths)",
        pass: near_one && tight && kaz.diverging,
        summary: format!("E z_1 = {}, Kazamaki diverging = {}", fmt(&ez), kaz.diverging),
    }
}

fn criterion_4() -> Outcome {
    // Independent oracle: BES(3) from 1 is |e_1 + W| with W three-dimensional.
    let mut rng = stochexp::rng::stream(SEED, 99, 0);
    let inv: Vec<f64> = (0..1_000_000)
        .map(|_| {
            let w: [f64; 3] = [StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng)];
            1.0 / ((1.0 + w[0]).powi(2) + w[1] * w[1] + w[2] * w[2]).sqrt()
        })
        .collect();
    let oracle = McEstimate::from_values(&inv);
    let closed = 2.0 * Normal::new(0.0, 1.0).unwrap().cdf(1.0) - 1.0;
    let oracle_ok = oracle.within(closed, K_SE) && (closed - BESSEL_EZ).abs() < 5e-5;
    println!("    {} oracle E[1/|e_1 + W_1|] = {} vs 2 Phi(1) - 1 = {:.6}", mark(oracle_ok), fmt(&oracle), closed);

    let spec = catalog_get("bessel_counterexample").unwrap().model();
    let grid = TimeGrid::new(1.0, 1e-4).unwrap();
    let sim = Simulator::new(&spec, grid, SEED).unwrap();
    let records = run_pass(&sim, &PassPlan::terminal_only(&spec), 1_000_000, 0).unwrap();
    let ez = EzReport::from_records(&records, None);
    let rel = (ez.estimate.mean - BESSEL_EZ).abs() / BESSEL_EZ;
    let ok = rel <= 0.01;
    println!("    {} E z_1 = {} (relative gap {:.4}, {} paths killed at 0)", mark(ok), fmt(&ez.estimate), rel, ez.killed);
    Outcome {
        id: 4,
        title: "Bessel strict local martingale: E z_1 = 0.6827 +- 1% (1e6 paths, dt = 1e-4)",
        pass: ok && oracle_ok,
        summary: format!("E z_1 = {}", fmt(&ez.estimate)),
    }
}

fn criterion_5(runs: &[CatalogRun]) -> Outcome {
    let r = runs.iter().find(|r| r.name == "brownian_bridge").unwrap();
    let ok = r.terminal.within(1.0, K_SE);
    Outcome { id: 5, title: "Brownian bridge: E z_1 = 1 within 3 se", pass: ok, summary: format!("E z_1 = {}", fmt(&r.terminal)) }
}

fn criterion_6() -> Outcome {
    let mut misses = Vec::new();
    for entry in catalog() {
        let report = benes_verdict(&entry.model(), &GrowthDomain::default()).unwrap();
        let ok = report.overall == entry.expected_verdict;
        println!("    {} {:<30} {:?} (expected {:?})", mark(ok), entry.name, report.overall, entry.expected_verdict);
        if !ok {
            misses.push(entry.name);
        }
    }
    Outcome {
        id: 6,
        title: "verdict table for all 13 catalog models",
        pass: misses.is_empty(),
        summary: format!("{} mismatches{}", misses.len(), if misses.is_empty() { String::new() } else { format!(": {}", misses.join(", ")) }),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn criterion_7() -> Outcome {
    let mut misses = Vec::new();
    for entry in catalog().iter().filter(|e| e.name != "pure_jump_iid") {
        let spec = entry.model();
        let gaps: Vec<f64> = [1e-2, 1e-3, 1e-4]
            .iter()
            .map(|&dt| {
                let grid = TimeGrid::new(spec.horizon, dt).unwrap();
                let sim = Simulator::new(&spec, grid, SEED).unwrap();
                let rel: Vec<f64> = (0..400)
                    .filter_map(|i| {
                        let b = sim.path(i).unwrap();
                        let inc = martingale_increments(&spec, &b, sim.quadrature()).unwrap();
                        let c = exponential_closed_form(&inc).z(grid.steps);
                        let s = exponential_from_sde(&inc).z[grid.steps];
                        let g = (s - c).abs() / c;
                        g.is_finite().then_some(g)
                    })
                    .collect();
                median(rel)
            })
            .collect();
        let ok = gaps.windows(2).all(|w| w[1] < w[0]);
        println!("    {} {:<30} median relative gap {:.3e} / {:.3e} / {:.3e}", mark(ok), entry.name, gaps[0], gaps[1], gaps[2]);
        if !ok {
            misses.push(entry.name);
        }
    }

    let spec = catalog_get("pure_jump_iid").unwrap().model();
    let mut worst = 0.0f64;
    for &dt in &[1e-2, 1e-3] {
        let grid = TimeGrid::new(spec.horizon, dt).unwrap();
        let sim = Simulator::new(&spec, grid, SEED).unwrap();
        for i in 0..400 {
            let b = sim.path(i).unwrap();
            let inc = martingale_increments(&spec, &b, sim.quadrature()).unwrap();
            let c = exponential_closed_form(&inc).z_path();
            let s = exponential_from_sde(&inc).z;
            for (a, b) in c.iter().zip(&s) {
                worst = worst.max((a - b).abs() / a.abs());
            }
        }
    }
    let jump_ok = worst <= 1e-12;
    println!("    {} pure_jump_iid worst pathwise relative gap {:.2e}", mark(jump_ok), worst);
    if !jump_ok {
        misses.push("pure_jump_iid");
    }
    Outcome {
        id: 7,
        title: "closed form vs SDE form: gap decreases with dt; pure jumps agree to 1e-12",
        pass: misses.is_empty(),
        summary: if misses.is_empty() { "monotone for every diffusion model".into() } else { format!("failed for {}", misses.join(", ")) },
    }
}

fn criterion_8() -> Outcome {
    let mut ok_all = true;
    let ens = EnsembleConfig { n_paths: PATHS, seed: SEED, workers: 0 };
    for name in ["cev", "cubic_drift", "pure_jump_iid", "two_driver"] {
        let spec = catalog_get(name).unwrap().model();
        let grid = TimeGrid::new(spec.horizon, DT).unwrap();
        let reports = girsanov_consistency(&spec, &Functional::standard(&spec), &grid, &ens, None, &TiltConfig::default()).unwrap();
        for r in &reports {
            println!("    {} {:<14} {:<18} E_P[z f] = {}  E_Q[f] = {}", mark(r.overlap), name, r.functional.name(), fmt(&r.p_side), fmt(&r.q_side));
            ok_all &= r.overlap;
        }
    }
    let theta = 0.5;
    let gauss = ModelSpec::new("gaussian", vec![0.0], CoefficientSet::scalar(|_, _| 0.0, |_, _| 1.0, move |_, _| theta));
    let grid = TimeGrid::new(1.0, DT).unwrap();
    let r = &girsanov_consistency(&gauss, &[Functional::TerminalIdentity], &grid, &ens, None, &TiltConfig::default()).unwrap()[0];
    let exact = theta * 1.0;
    let g_ok = r.p_side.within(exact, K_SE) && r.q_side.within(exact, K_SE);
    println!("    {} constant sigma = {theta}: E_P[z X_T] = {}  E_Q[X_T] = {}  theta T = {exact}", mark(g_ok), fmt(&r.p_side), fmt(&r.q_side));
    Outcome {
        id: 8,
        title: "Girsanov consistency for cev, cubic_drift, pure_jump_iid, two_driver and constant sigma",
        pass: ok_all && g_ok,
        summary: if ok_all && g_ok { "all intervals overlap".into() } else { "some intervals do not overlap".into() },
    }
}

fn criterion_9() -> Outcome {
    let c = 0.5;
    let entry = catalog_get("pure_jump_iid").unwrap();
    let spec = entry.model_with(&Params::from([("c".to_string(), c)])).unwrap();
    let lambda = entry.defaults.iter().find(|d| d.0 == "lambda").unwrap().1;
    let tilted = tilt_model(&spec, &TiltConfig::default()).unwrap();
    let grid = TimeGrid::new(spec.horizon, DT).unwrap();
    let qv = quadratic_variation_check(&tilted, &grid, &EnsembleConfig { n_paths: PATHS, seed: SEED, workers: 0 }).unwrap();
    let target = lambda * (1.0 + c);
    let ok = qv.jump_rate.within(target, K_SE);
    Outcome {
        id: 9,
        title: "compensator tilt: Q jump rate = lambda (1 + c)",
        pass: ok,
        summary: format!("empirical rate {} vs {target}", fmt(&qv.jump_rate)),
    }
}

fn criterion_10() -> Outcome {
    let mut ok = true;
    for model in ["brownian_bridge", "pure_jump_iid", "cev"] {
        let json = |workers| {
            let cfg = RunConfig {
                model: model.into(),
                n_paths: 20_000,
                seed: Some(SEED),
                workers,
                timestamp: false,
                ..Default::default()
            };
            run(&cfg).unwrap().to_json()
        };
        let same = json(1) == json(3);
        println!("    {} {model}: report with 1 and 3 workers", mark(same));
        ok &= same;
    }
    Outcome { id: 10, title: "determinism across worker counts", pass: ok, summary: if ok { "byte-identical reports".into() } else { "reports differ".into() } }
}

fn main() {
    let start = Instant::now();
    let mut outcomes = Vec::new();
    let mut record = |o: Outcome, t: Instant| {
        println!("criterion {:>2} {}  {} -- {} ({:.0}s)", o.id, if o.pass { "PASS" } else { "FAIL" }, o.title, o.summary, t.elapsed().as_secs_f64());
        outcomes.push(o);
    };

    let t = Instant::now();
    let runs = catalog_runs();
    record(criterion_1(&runs), t);
    record(criterion_2(&runs), Instant::now());
    record(criterion_5(&runs), Instant::now());
    drop(runs);
    let t = Instant::now();
    record(criterion_6(), t);
    let t = Instant::now();
    record(criterion_7(), t);
    let t = Instant::now();
    record(criterion_8(), t);
    let t = Instant::now();
    record(criterion_9(), t);
    let t = Instant::now();
    record(criterion_10(), t);
    let t = Instant::now();
    record(criterion_3(), t);
    let t = Instant::now();
    record(criterion_4(), t);

    outcomes.sort_by_key(|o| o.id);
    println!("\nacceptance summary ({:.0}s)", start.elapsed().as_secs_f64());
    for o in &outcomes {
        println!("  criterion {:>2}: {}", o.id, if o.pass { "PASS" } else { "FAIL" });
    }
    let failed = outcomes.iter().filter(|o| !o.pass).count();
    println!("{} of {} criteria pass", outcomes.len() - failed, outcomes.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
