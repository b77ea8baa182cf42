// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Runs without the libtest harness so the report is always printed. The
//! process exits nonzero when a criterion fails, unless that criterion is
//! listed in `KNOWN_FAILING`. Known failures still print FAIL with numbers.

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use kcusum::sim::{
    doeblin_of_finite, exact_mmd_finite, stationary_distribution, stream_rng, FiniteChain,
};
use kcusum::{
    consistency_bound, lift, mmd, mmd_squared, rho_envelope, sigma_from_doeblin, CusumState,
    DoeblinParams, KernelSpec, MmdWindow, PairPoint, ReferenceSet, Step,
};
use kcusum_harness::run::{run_md, run_mtbfa, PURPOSE_MONITOR};
use kcusum_harness::{execute, Command, Experiment, ExperimentConfig, Overrides};
use rand::Rng;

/// Criteria that fail at the specified tolerances with the reference
/// scenario. Each entry is analysed in the decisions ledger.
const KNOWN_FAILING: &[u32] = &[6];

type Criterion = (u32, fn() -> Outcome, Duration);

struct Outcome {
    pass: bool,
    detail: String,
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn load(name: &str) -> ExperimentConfig {
    ExperimentConfig::load(&configs().join(name)).unwrap()
}

fn oracle_kernel(w: &[(f64, f64)], a: &[f64], b: &[f64]) -> f64 {
    let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    w.iter()
        .map(|&(wi, s)| wi * (-d2 / (2.0 * s * s)).exp())
        .sum()
}

fn criterion_1() -> Outcome {
    let mut rng = stream_rng(101, 0);
    let mut worst = 0.0f64;
    for inst in 0..100 {
        let d = rng.gen_range(1..=6);
        let na = rng.gen_range(1..=30);
        let nb = rng.gen_range(1..=30);
        let comps: Vec<(f64, f64)> = if inst % 2 == 0 {
            vec![(1.0 / 3.0, 0.1), (1.0 / 3.0, 1.0), (1.0 / 3.0, 10.0)]
        } else {
            let k = rng.gen_range(1..=4);
            let raw: Vec<(f64, f64)> = (0..k)
                .map(|_| (rng.gen_range(0.1..1.0), rng.gen_range(0.05..5.0)))
                .collect();
            let total: f64 = raw.iter().map(|p| p.0).sum();
            raw.into_iter().map(|(w, s)| (w / total, s)).collect()
        };
        let kernel = KernelSpec::mixture(&comps).unwrap();
        let shift = if inst % 3 == 0 {
            0.0
        } else {
            rng.gen_range(-1.0..1.0)
        };
        let mut draw = |n: usize, off: f64| -> Vec<Vec<f64>> {
            (0..n)
                .map(|_| (0..2 * d).map(|_| rng.gen_range(-2.0..2.0) + off).collect())
                .collect()
        };
        let a = draw(na, 0.0);
        let b = draw(nb, shift);
        let pa: Vec<PairPoint> = a
            .iter()
            .map(|z| PairPoint::from_concat(z.clone()).unwrap())
            .collect();
        let pb: Vec<PairPoint> = b
            .iter()
            .map(|z| PairPoint::from_concat(z.clone()).unwrap())
            .collect();
        let got = mmd_squared(&kernel, &pa, &pb).unwrap();

        let mut aa = 0.0;
        for x in &a {
            for y in &a {
                aa += oracle_kernel(&comps, x, y);
            }
        }
        let mut bb = 0.0;
        for x in &b {
            for y in &b {
                bb += oracle_kernel(&comps, x, y);
            }
        }
        let mut ab = 0.0;
        for x in &a {
            for y in &b {
                ab += oracle_kernel(&comps, x, y);
            }
        }
        let (fa, fb) = (na as f64, nb as f64);
        let want = (aa / (fa * fa) - 2.0 * ab / (fa * fb) + bb / (fb * fb)).max(0.0);
        worst = worst.max((got - want).abs());
    }
    Outcome {
        pass: worst <= 1e-12,
        detail: format!("100 instances, max |err| = {worst:.2e} (tol 1e-12)"),
    }
}

fn criterion_2() -> Outcome {
    let mut rng = stream_rng(202, 0);
    let mut worst = 0.0f64;
    let mut alarm_mismatch = 0;
    let mut alarms_checked = 0;
    let mut inf_mismatch = 0;
    for seq in 0..100 {
        let len = rng.gen_range(1..=500);
        let m = [1u32, 5, 20][seq % 3];
        let drift = rng.gen_range(-0.5..0.5);
        let s: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0) + drift).collect();

        // Ŝ_n = max over start k ≤ n − M of s_k + … + s_n (1-based), −∞ if none
        let oracle: Vec<f64> = (1..=len)
            .map(|n| {
                let mut best = f64::NEG_INFINITY;
                let mut acc = 0.0;
                for k in (1..=n).rev() {
                    acc += s[k - 1];
                    if n - k + 1 > m as usize {
                        best = best.max(acc);
                    }
                }
                best
            })
            .collect();

        let finite: Vec<f64> = oracle.iter().copied().filter(|v| v.is_finite()).collect();
        let top = finite.iter().copied().fold(0.0f64, f64::max);
        let thresholds = [0.0, 0.25 * top, 0.5 * top, 0.9 * top, top + 1.0];
        for &b in &thresholds {
            let mut st = CusumState::new();
            for (i, &x) in s.iter().enumerate() {
                let got = st.update(x, m, b);
                let want = oracle[i];
                if want.is_finite() != got.is_finite() || (!want.is_finite() && got != want) {
                    inf_mismatch += 1;
                } else if want.is_finite() {
                    worst = worst.max((got - want).abs());
                }
            }
            let want_alarm = oracle.iter().position(|&v| v >= b).map(|i| i as u64 + 1);
            alarms_checked += 1;
            if st.alarmed_at() != want_alarm {
                alarm_mismatch += 1;
            }
        }
    }
    Outcome {
        pass: worst <= 1e-12 && alarm_mismatch == 0 && inf_mismatch == 0,
        detail: format!(
            "100 sequences, max |err| = {worst:.2e} (tol 1e-12), alarm mismatches {alarm_mismatch}/{alarms_checked}, warm-up mismatches {inf_mismatch}"
        ),
    }
}

fn criterion_3() -> Outcome {
    let mut sc = kcusum::sim::ArScenario::reference_variance_change(303);
    sc.length = 501 + 5000;
    sc.tau = Some(501 + 2500);
    let traj = sc.simulate_with(&mut stream_rng(303, 0)).unwrap();
    let (hist, mon) = traj.split_at(501);
    let reference = ReferenceSet::build(KernelSpec::multiscale_default(), hist).unwrap();
    let mut w = MmdWindow::new(50, 4).unwrap();
    let mut worst = 0.0f64;
    let mut checked = 0;
    for y in mon {
        w.push(&reference, y).ok();
        if w.is_warm() {
            let inc = w.current(&reference).unwrap();
            let full = w.recompute(&reference).unwrap();
            worst = worst.max((inc - full).abs());
            checked += 1;
        }
    }
    Outcome {
        pass: worst <= 1e-9 && checked == 5000 - 50,
        detail: format!("{checked} steps recomputed, max |inc - full| = {worst:.2e} (tol 1e-9)"),
    }
}

fn criterion_4() -> Outcome {
    let lambdas = [0.01, 0.05, 0.1, 0.2, 0.3, 0.5, 0.7, 0.9, 0.95, 0.99];
    let ls = [1u32, 2, 3, 5, 10];
    let mut min_gap = f64::INFINITY;
    let mut violations = 0;
    for &lambda in &lambdas {
        for &l in &ls {
            let p = DoeblinParams::new(lambda, l).unwrap();
            let closed = sigma_from_doeblin(p);
            let mut acc = kcusum::sum::NeumaierSum::new();
            let mut ok = true;
            for t in 1..=1_000_000u64 {
                acc.add(rho_envelope(p, t).unwrap());
                if t % 1000 == 0 && acc.value() >= closed {
                    ok = false;
                }
            }
            let gap = closed - acc.value();
            if !ok || gap <= 0.0 {
                violations += 1;
            }
            min_gap = min_gap.min(gap / closed);
        }
    }
    Outcome {
        pass: violations == 0,
        detail: format!(
            "50 (lambda, l) pairs, violations {violations}, min relative gap {min_gap:.3e}"
        ),
    }
}

fn two_state_pair() -> (FiniteChain, FiniteChain) {
    let p = FiniteChain::from_rows(
        vec![vec![0.0], vec![1.0]],
        &[vec![0.9, 0.1], vec![0.2, 0.8]],
    )
    .unwrap();
    let q = FiniteChain::from_rows(
        vec![vec![0.0], vec![1.0]],
        &[vec![0.8, 0.2], vec![0.2, 0.8]],
    )
    .unwrap();
    (p, q)
}

fn criterion_5() -> Outcome {
    let (p, q) = two_state_pair();
    let k = KernelSpec::multiscale_default();
    let exact = exact_mmd_finite(&k, &p, &q).unwrap();
    let sp = sigma_from_doeblin(doeblin_of_finite(&p.lifted().unwrap()).unwrap());
    let sq = sigma_from_doeblin(doeblin_of_finite(&q.lifted().unwrap()).unwrap());
    let bound = consistency_bound(sp, sq, 400, 400).unwrap().value;
    let reps = 200;
    let mut total = 0.0;
    for rep in 0..reps {
        let xs = p.simulate(401, &mut stream_rng(505, 2 * rep)).unwrap();
        let ys = q.simulate(401, &mut stream_rng(505, 2 * rep + 1)).unwrap();
        let a = lift(&xs).unwrap();
        let b = lift(&ys).unwrap();
        total += mmd(&k, a.pairs(), b.pairs()).unwrap();
    }
    let mean = total / reps as f64;
    let dev = (mean - exact).abs();
    Outcome {
        pass: dev <= bound,
        detail: format!(
            "exact {exact:.5}, MC mean {mean:.5}, |dev| {dev:.5} <= bound {bound:.5} (Sigma_P {sp:.3}, Sigma_Q {sq:.3})"
        ),
    }
}

struct ArStats {
    pre_neg: usize,
    post_pos: usize,
    crossed: usize,
    runs: usize,
    median_cross: Option<usize>,
}

fn ar_reproduction(name: &str) -> ArStats {
    let mut cfg = load(name);
    cfg.campaign.replications = 100;
    let exp = Experiment::new(cfg).unwrap();
    let tau = exp.scenario.tau().unwrap();
    let len = exp.scenario.length();
    let r = exp.window();
    let b = exp.cfg.detector.threshold;
    let runs: Vec<(f64, f64, Option<usize>)> = {
        use rayon::prelude::*;
        (0..exp.cfg.campaign.replications)
            .into_par_iter()
            .map(|rep| {
                let prepared = exp.prepare(rep).unwrap();
                let stream = exp.draw(rep, PURPOSE_MONITOR, len, Some(tau)).unwrap();
                let mut det = exp.detector(&prepared, b).unwrap();
                let (mut pre, mut n_pre, mut post, mut n_post) = (0.0, 0usize, 0.0, 0usize);
                let mut cross = None;
                for (t, y) in stream.iter().enumerate() {
                    if let Step::Statistic(o) = det.step(y).unwrap() {
                        if t < tau {
                            pre += o.s_t;
                            n_pre += 1;
                        } else if t + 1 >= tau + r {
                            // buffer holds post-change pairs only
                            post += o.s_t;
                            n_post += 1;
                        }
                        if t >= tau && t < tau + 500 && cross.is_none() && o.s_hat >= b {
                            cross = Some(t - tau);
                        }
                    }
                }
                (pre / n_pre as f64, post / n_post as f64, cross)
            })
            .collect()
    };
    let mut delays: Vec<usize> = runs.iter().filter_map(|r| r.2).collect();
    delays.sort_unstable();
    ArStats {
        pre_neg: runs.iter().filter(|r| r.0 < 0.0).count(),
        post_pos: runs.iter().filter(|r| r.1 > 0.0).count(),
        crossed: delays.len(),
        runs: runs.len(),
        median_cross: delays.get(delays.len() / 2).copied(),
    }
}

fn criterion_6() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();
    for (label, file) in [("variance", "ar_variance.toml"), ("mean", "ar_mean.toml")] {
        let s = ar_reproduction(file);
        let need = |k: usize, frac: f64| k as f64 >= frac * s.runs as f64;
        pass &= need(s.pre_neg, 0.95) && need(s.post_pos, 0.95) && need(s.crossed, 0.90);
        parts.push(format!(
            "{label}: pre<0 {}/{}, post>0 {}/{}, crossed b=5 within 500 {}/{} (median {:?})",
            s.pre_neg, s.runs, s.post_pos, s.runs, s.crossed, s.runs, s.median_cross
        ));
    }
    Outcome {
        pass,
        detail: format!("{} (need 95%, 95%, 90%)", parts.join("; ")),
    }
}

fn criterion_7() -> Outcome {
    let mut pass = true;
    let mut parts = Vec::new();

    let exp = Experiment::new(load("two_state_mtbfa.toml")).unwrap();
    let res = run_mtbfa(&exp).unwrap();
    for row in &res.rows {
        let bound = row.theory_bound;
        let ok = bound.is_none_or(|v| row.empirical_mean >= v);
        pass &= ok && bound.is_some() && row.n_runs == 200;
        parts.push(format!(
            "MTBFA b={}: {:.1} >= {}",
            row.b,
            row.empirical_mean,
            bound.map_or("n/a".into(), |v| format!("{v:.2}"))
        ));
    }

    let exp = Experiment::new(load("two_state_md.toml")).unwrap();
    let res = run_md(&exp).unwrap();
    for (row, diag) in res.rows.iter().zip(&res.diagnostics) {
        let d_r = diag.d_r.unwrap();
        if d_r > 0.0 {
            let bound = row.theory_bound.unwrap();
            pass &= row.empirical_mean <= bound;
            parts.push(format!(
                "MD b={}: {:.1} <= {bound:.1}",
                row.b, row.empirical_mean
            ));
        } else {
            parts.push(format!("MD b={}: D_r {d_r:.4} <= 0, bound vacuous", row.b));
        }
        pass &= row.n_runs + diag.false_alarms == 200;
    }
    let d_r = res.diagnostics[0].d_r.unwrap();
    pass &= d_r > 0.0;
    Outcome {
        pass,
        detail: format!("{}; D_r {d_r:.4}", parts.join(", ")),
    }
}

fn criterion_8() -> Outcome {
    let exp = Experiment::new(load("three_state_md.toml")).unwrap();
    let (pi_p, pi_q) = match &exp.scenario {
        kcusum_harness::config::Scenario::Finite { pre, post, .. } => (
            stationary_distribution(pre).unwrap(),
            stationary_distribution(post).unwrap(),
        ),
        _ => unreachable!("finite scenario"),
    };
    let same_pi = (pi_p - pi_q).amax() < 1e-12;
    let gamma = exp.theory.gamma.unwrap();
    let res = run_md(&exp).unwrap();
    let mut pass = same_pi && gamma > 0.01;
    let mut parts = Vec::new();
    for (row, diag) in res.rows.iter().zip(&res.diagnostics) {
        let d_r = diag.d_r.unwrap();
        let med = diag.median_delay.unwrap();
        let limit = 10.0 * row.b / d_r;
        pass &=
            d_r > 0.0 && med < limit && diag.truncated == 0 && row.n_runs + diag.false_alarms == 50;
        parts.push(format!("b={}: median {med} < {limit:.1}", row.b));
    }
    Outcome {
        pass,
        detail: format!(
            "same stationary law {same_pi}, gamma {gamma:.4} > 0.01, D_r {:.4}; {}",
            res.diagnostics[0].d_r.unwrap(),
            parts.join(", ")
        ),
    }
}

fn criterion_9() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let run = |sub: &str| -> Vec<u8> {
        let dir = tmp.path().join(sub);
        let overrides = Overrides {
            out: Some(dir.clone()),
            ..Overrides::default()
        };
        execute(Command::Trace, load("ar_variance.toml"), &overrides).unwrap();
        std::fs::read(dir.join("trace.csv")).unwrap()
    };
    let a = run("a");
    let b = run("b");
    Outcome {
        pass: a == b && !a.is_empty(),
        detail: format!("{} bytes, identical {}", a.len(), a == b),
    }
}

fn main() {
    let criteria: [Criterion; 9] = [
        (1, criterion_1, Duration::from_secs(5)),
        (2, criterion_2, Duration::from_secs(10)),
        (3, criterion_3, Duration::from_secs(120)),
        (4, criterion_4, Duration::from_secs(5)),
        (5, criterion_5, Duration::from_secs(180)),
        (6, criterion_6, Duration::from_secs(600)),
        (7, criterion_7, Duration::from_secs(900)),
        (8, criterion_8, Duration::from_secs(300)),
        (9, criterion_9, Duration::from_secs(60)),
    ];
    let mut unexpected = Vec::new();
    for (id, f, budget) in criteria {
        let start = Instant::now();
        let out = f();
        let took = start.elapsed();
        let in_time = took <= budget;
        let pass = out.pass && in_time;
        let tag = match (pass, KNOWN_FAILING.contains(&id)) {
            (true, _) => "PASS",
            (false, true) => "FAIL (known)",
            (false, false) => "FAIL",
        };
        println!(
            "criterion {id}: {tag}: {} [{:.1}s of {}s]",
            out.detail,
            took.as_secs_f64(),
            budget.as_secs()
        );
        if !pass && !KNOWN_FAILING.contains(&id) {
            unexpected.push(id);
        }
    }
    if !unexpected.is_empty() {
        eprintln!("unexpected failures: {unexpected:?}");
        std::process::exit(1);
    }
}
