//! Acceptance suite: one line per criterion.
//!
//! Criteria 1-3 and 8 are exact implementation checks and fail the run.
//! Criteria 4-7 are Monte Carlo reproductions; their outcome is printed but
//! does not change the exit status. `MICA_ACCEPTANCE_REPS` caps the
//! replication counts for quick local runs.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use mica_core::experiment::{run_experiment, ExperimentConfig, ExperimentReport, Method};
use mica_core::groups::GroupStructure;
use mica_core::mdd::{mdd_sq, SampleMat, SampleVec};
use mica_core::mica::{estimate_mica, MicaConfig};
use mica_core::objective::{objective_g, objective_s};
use mica_core::ortho::{d_distance_scaled, dtilde_distance_scaled, haar_random, OrthoMatrix};
use mica_core::simgen::{generate, whiten, Design, DgpSpec, InnovationDist};
use mica_core::SeriesMatrix;
use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    hard: bool,
    pass: bool,
}

fn report(id: usize, name: &str, pass: bool, hard: bool, detail: String, started: Instant) -> Outcome {
    println!(
        "criterion {id} [{}] {name}: {} ({detail}; {:.1}s)",
        if hard { "exact" } else { "monte-carlo" },
        if pass { "PASS" } else { "FAIL" },
        started.elapsed().as_secs_f64()
    );
    Outcome { hard, pass }
}

fn reps(default: usize) -> usize {
    std::env::var("MICA_ACCEPTANCE_REPS")
        .ok()
        .and_then(|v| v.parse().ok())
        .map_or(default, |cap: usize| cap.min(default))
}

fn workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// -(1/n^2) sum_{s,t} (v_s - vbar)(v_t - vbar) |u_s - u_t|
fn brute_mdd(v: &[f64], u: &DMatrix<f64>) -> f64 {
    let n = v.len();
    let vbar = v.iter().sum::<f64>() / n as f64;
    let mut acc = 0.0;
    for s in 0..n {
        for t in 0..n {
            let d = (u.row(s) - u.row(t)).norm();
            acc += (v[s] - vbar) * (v[t] - vbar) * d;
        }
    }
    -acc / (n * n) as f64
}

fn criterion1() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.random_range(5..=200);
        let q = rng.random_range(1..=4);
        let v: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        // some instances get ties in the conditioner
        let ties = rng.random_bool(0.3);
        let u = DMatrix::from_fn(n, q, |_, _| {
            let x: f64 = rng.random_range(-3.0..3.0);
            if ties { x.round() } else { x }
        });
        let fast = mdd_sq(&SampleVec::new(v.clone()).unwrap(), &SampleMat::new(u.clone()).unwrap()).unwrap();
        let slow = brute_mdd(&v, &u);
        worst = worst.max((fast - slow).abs() / slow.abs().max(1e-12));
    }
    let secs = started.elapsed().as_secs_f64();
    report(
        1,
        "fast MDD^2 vs O(n^2) definition",
        worst <= 1e-10 && secs < 5.0,
        true,
        format!("max rel err {worst:.2e} over 200 instances, {secs:.2}s"),
        started,
    )
}

fn brute_objective(a: &DMatrix<f64>, y: &DMatrix<f64>, h0: usize, groups: &[Vec<usize>], sqrt_norm: bool) -> f64 {
    let x = y * a;
    let n = x.nrows();
    let p = x.ncols();
    let mut total = 0.0;
    for h in 0..=h0 {
        for cond in groups {
            let u = DMatrix::from_fn(n - h, cond.len(), |s, l| x[(s, cond[l])]);
            for k in (0..p).filter(|k| !cond.contains(k)) {
                let v: Vec<f64> = (h..n).map(|t| x[(t, k)]).collect();
                total += brute_mdd(&v, &u);
            }
        }
    }
    let tr = a.norm_squared();
    total / if sqrt_norm { tr.sqrt() } else { tr }
}

fn random_partition(p: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut sizes = Vec::new();
    let mut left = p;
    while left > 0 {
        let s = rng.random_range(1..=left);
        sizes.push(s);
        left -= s;
    }
    sizes.sort_unstable_by(|a, b| b.cmp(a));
    sizes
}

fn criterion2() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst: f64 = 0.0;
    for case in 0..50 {
        let p = rng.random_range(2..=4);
        let n = rng.random_range(20..=100);
        let h0 = rng.random_range(0..=2);
        let y = DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0));
        let ys = SeriesMatrix::new(y.clone()).unwrap();
        let a = haar_random(p, 5000 + case);
        let singles: Vec<Vec<usize>> = (0..p).map(|k| vec![k]).collect();
        let s = objective_s(&a, &ys, h0).unwrap();
        worst = worst.max((s - brute_objective(a.matrix(), &y, h0, &singles, false)).abs() / s.abs());

        let sizes = random_partition(p, &mut rng);
        let groups = GroupStructure::contiguous(&sizes).unwrap();
        let g = objective_g(&a, &groups, &ys, h0).unwrap();
        let oracle = brute_objective(a.matrix(), &y, h0, &groups.all_members(), true);
        if sizes.len() == 1 {
            worst = worst.max(g.abs().max(oracle.abs()));
        } else {
            worst = worst.max((g - oracle).abs() / g.abs());
        }
    }
    report(
        2,
        "S_h0 and G_h0 vs brute-force re-implementation",
        worst <= 1e-10,
        true,
        format!("max rel err {worst:.2e} over 50 matrices"),
        started,
    )
}

fn signed_permutation(p: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut perm: Vec<usize> = (0..p).collect();
    perm.shuffle(rng);
    let signs: Vec<f64> = (0..p).map(|_| if rng.random_bool(0.5) { -1.0 } else { 1.0 }).collect();
    DMatrix::from_fn(p, p, |i, j| if perm[j] == i { signs[j] } else { 0.0 })
}

fn criterion3() -> Outcome {
    let started = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut s_err, mut dt_err, mut d_err): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for case in 0..100 {
        let p = rng.random_range(2..=6);
        let n = rng.random_range(30..=80);
        let y = SeriesMatrix::new(DMatrix::from_fn(n, p, |_, _| rng.random_range(-2.0..2.0))).unwrap();
        let b = haar_random(p, 9000 + case);
        let bp = OrthoMatrix::new(b.matrix() * signed_permutation(p, &mut rng)).unwrap();
        let s = objective_s(&b, &y, 1).unwrap();
        s_err = s_err.max((objective_s(&bp, &y, 1).unwrap() - s).abs() / s.abs());
        d_err = d_err.max(d_distance_scaled(&b, &bp).unwrap());

        // rotate one block of C inside its span
        let sizes = random_partition(p, &mut rng);
        let c = haar_random(p, 19000 + case);
        let g = rng.random_range(0..sizes.len());
        let offset: usize = sizes[..g].iter().sum();
        let r = haar_random(sizes[g], 29000 + case);
        let mut rotated = c.matrix().clone();
        let block = c.matrix().columns(offset, sizes[g]) * r.matrix();
        rotated.columns_mut(offset, sizes[g]).copy_from(&block);
        let rotated = OrthoMatrix::new(rotated).unwrap();
        let bb = b.blocks(&sizes).unwrap();
        let before = dtilde_distance_scaled(&bb, &c.blocks(&sizes).unwrap()).unwrap();
        let after = dtilde_distance_scaled(&bb, &rotated.blocks(&sizes).unwrap()).unwrap();
        dt_err = dt_err.max((before - after).abs());
    }
    report(
        3,
        "invariances (signed permutations, block rotations)",
        s_err <= 1e-10 && dt_err <= 1e-10 && d_err <= 1e-12,
        true,
        format!("S rel err {s_err:.1e}, D~ change {dt_err:.1e}, D(B, BP) max {d_err:.1e}"),
        started,
    )
}

fn experiment(design: Design, dist: InnovationDist, p: usize, n: usize, method: Method, h0: usize, r: usize) -> ExperimentReport {
    let cfg = ExperimentConfig {
        replications: r,
        base_seed: 1,
        workers: workers(),
        ..ExperimentConfig::new(design, p, n, dist, method, h0)
    };
    run_experiment(&cfg).expect("experiment runs")
}

fn criterion4() -> Outcome {
    let started = Instant::now();
    let r = reps(100);
    let settings = [
        (Design::MicaEx1, InnovationDist::Normal, 0.030, 0.070),
        (Design::MicaEx1, InnovationDist::StudentT3, 0.002, 0.032),
        (Design::MicaEx2, InnovationDist::Exponential, 0.001, 0.027),
    ];
    let mut pass = true;
    let mut parts = Vec::new();
    for (design, dist, lo, hi) in settings {
        let rep = experiment(design, dist, 5, 200, Method::Mica, 1, r);
        let m = rep.summary.mean_distance;
        pass &= (lo..=hi).contains(&m);
        parts.push(format!("{design}/{dist} mean D^2 {m:.4} in [{lo}, {hi}]"));
    }
    report(4, "Table 1, p = 5, n = 200", pass, false, format!("{r} reps; {}", parts.join("; ")), started)
}

fn criterion5() -> Outcome {
    let started = Instant::now();
    let r = reps(100);
    let smoke = reps(20);
    let mut pass = true;
    let mut parts = Vec::new();
    for (design, dist, max_d) in [
        (Design::GmicaEx1, InnovationDist::Normal, 0.015),
        (Design::GmicaEx2, InnovationDist::Exponential, 0.03),
    ] {
        let cfg = ExperimentConfig {
            replications: r,
            base_seed: 1,
            workers: workers(),
            max_outer: 1,
            ..ExperimentConfig::new(design, 6, 1000, dist, Method::GmicaAlg1, 5)
        };
        let rep = run_experiment(&cfg).expect("experiment runs");
        let (pi, d) = (rep.summary.pi, rep.summary.mean_distance);
        pass &= pi >= 0.90 && d <= max_d;
        parts.push(format!("{design}/{dist} p=6 pi {pi:.3} (>= 0.90), D~^2 {d:.4} (<= {max_d})"));
    }
    // p = 12: a grouping drawn at random is essentially never right, so the
    // chance level is ~0 and the bar is pi >= 0.5
    for (design, dist) in [(Design::GmicaEx1, InnovationDist::Normal), (Design::GmicaEx2, InnovationDist::Exponential)] {
        let cfg = ExperimentConfig {
            replications: smoke,
            base_seed: 1,
            workers: workers(),
            max_outer: 1,
            ..ExperimentConfig::new(design, 12, 1000, dist, Method::GmicaAlg1, 5)
        };
        let rep = run_experiment(&cfg).expect("experiment runs");
        let pi = rep.summary.pi;
        pass &= pi >= 0.5;
        parts.push(format!("{design}/{dist} p=12 pi {pi:.3} (>= 0.5, {smoke} reps)"));
    }
    report(5, "Table 2, n = 1000, h0 = 5, Steps 1-6", pass, false, format!("{r} reps; {}", parts.join("; ")), started)
}

fn criterion6() -> Outcome {
    let started = Instant::now();
    let r = reps(100);
    let rep = experiment(Design::MicaEx1, InnovationDist::Normal, 3, 5000, Method::Mica, 1, r);
    let good = rep
        .per_replication
        .iter()
        .filter(|x| x.distance.is_some_and(|d| d < 0.01))
        .count();
    let need = (0.95 * r as f64).ceil() as usize;
    report(
        6,
        "recovery at n = 5000, p = 3",
        good >= need,
        false,
        format!("{good}/{r} reps with D^2 < 0.01 (need {need})"),
        started,
    )
}

fn criterion7() -> Outcome {
    let started = Instant::now();
    let r = reps(25);
    let mut within = 0;
    let mut total = 0;
    for (design, dist) in [(Design::GmicaEx1, InnovationDist::Normal), (Design::GmicaEx2, InnovationDist::Exponential)] {
        let rep = experiment(design, dist, 6, 1000, Method::GmicaAlg1, 5, r);
        for x in &rep.per_replication {
            total += 1;
            if x.converged && x.outer_iterations.is_some_and(|k| k <= 5) {
                within += 1;
            }
        }
    }
    let share = within as f64 / total as f64;
    report(
        7,
        "grouping loop converges within 5 passes",
        share >= 0.90,
        false,
        format!("{within}/{total} replications ({share:.3}, need 0.90)"),
        started,
    )
}

fn run_cli(dir: &Path, args: &[&str]) -> bool {
    Command::new(env!("CARGO_BIN_EXE_mica"))
        .current_dir(dir)
        .args(args)
        .output()
        .map(|o| o.status.success())
        .unwrap_or(false)
}

fn criterion8() -> Outcome {
    let started = Instant::now();
    let dir = tempfile::tempdir().expect("temp dir");
    let d = dir.path();
    std::fs::write(
        d.join("cfg.toml"),
        "[design]\nname = \"gmica-ex1\"\np = 6\nn = 200\ndist = \"t\"\n\n[method]\nname = \"gmica-alg1\"\nh0 = 2\nn_starts = 30\n\n[run]\nreplications = 3\nbase_seed = 4\nworkers = 2\n",
    )
    .unwrap();
    let mut ran = true;
    for k in ["0", "1"] {
        let f = |name: &str| format!("{name}{k}");
        ran &= run_cli(d, &["simulate", "--design", "gmica-ex1", "--p", "6", "--n", "300", "--seed", "9", "--out", &f("y"), "--truth", &f("t"), "--sources", &f("s")]);
        ran &= run_cli(d, &["estimate", "--input", "y0", "--method", "gmica-alg1", "--h0", "2", "--out", &f("e")]);
        ran &= run_cli(d, &["estimate", "--input", "y0", "--method", "gmica-known", "--groups", "3,2,1", "--h0", "2", "--out", &f("k")]);
        ran &= run_cli(d, &["group", "--input", "s0", "--h0", "2", "--out", &f("m")]);
        ran &= run_cli(d, &["bench", "--config", "cfg.toml", "--out", &f("b"), "--replications-out", &f("r"), "--no-timing"]);
        let dist = Command::new(env!("CARGO_BIN_EXE_mica"))
            .current_dir(d)
            .args(["distance", "t0", "e0_a.csv", "--groups", "3,2,1"])
            .output()
            .expect("binary runs");
        ran &= dist.status.success();
        std::fs::write(d.join(f("dist")), dist.stdout).unwrap();
    }
    let files = ["y", "t", "s", "e_a.csv", "e_x.csv", "e_summary.json", "k_a.csv", "k_x.csv", "k_summary.json", "m", "b", "r", "dist"];
    let mut differing = Vec::new();
    for name in files {
        let (a, b) = match name.split_once('_') {
            Some((stem, rest)) => (format!("{stem}0_{rest}"), format!("{stem}1_{rest}")),
            None => (format!("{name}0"), format!("{name}1")),
        };
        if std::fs::read(d.join(&a)).ok() != std::fs::read(d.join(&b)).ok() || std::fs::read(d.join(&a)).is_err() {
            differing.push(name);
        }
    }
    report(
        8,
        "CLI reruns are byte-identical",
        ran && differing.is_empty(),
        true,
        format!("{} outputs compared, differing: {differing:?}", files.len()),
        started,
    )
}

fn main() {
    // quick guard that the experiment pipeline and the library agree
    let data = generate(&DgpSpec::new(Design::MicaEx1, 3, 300, InnovationDist::StudentT3, 1)).unwrap();
    let (w, _) = whiten(&data.y).unwrap();
    let est = estimate_mica(&w, &MicaConfig { seed: 1, ..MicaConfig::default() }).unwrap();
    let direct = d_distance_scaled(&data.b_true, &est.a_hat).unwrap();
    let via = experiment(Design::MicaEx1, InnovationDist::StudentT3, 3, 300, Method::Mica, 1, 1);
    assert_eq!(Some(direct), via.per_replication[0].distance);

    let outcomes = [
        criterion1(),
        criterion2(),
        criterion3(),
        criterion8(),
        criterion4(),
        criterion5(),
        criterion6(),
        criterion7(),
    ];
    let passed = outcomes.iter().filter(|o| o.pass).count();
    let hard_failed = outcomes.iter().filter(|o| o.hard && !o.pass).count();
    println!("acceptance: {passed}/{} criteria passed", outcomes.len());
    if hard_failed > 0 {
        std::process::exit(1);
    }
}
