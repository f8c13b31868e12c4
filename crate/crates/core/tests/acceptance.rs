//! Acceptance suite. Each test prints one `PASS`/`FAIL` line for its
//! criterion before asserting it. Run with
//! `cargo test -p nestseg --test acceptance -- --nocapture --test-threads 1`.

mod common;

use std::fs;
use std::path::Path;
use std::sync::LazyLock;
use std::time::{Duration, Instant};

use common::*;
use nestseg::activation::{multi_level, p_score, q_score, ActivationConfig};
use nestseg::config::{ExperimentConfig, Method};
use nestseg::harness::{self, median, ExperimentReport};
use nestseg::losses::LossKind;
use nestseg::metrics::{dice, sweep_thresholds, ActivationMap, Thresholds};
use nestseg::net::{build_network, Head, NetworkConfig};
use nestseg::pgm::Pgm;
use nestseg::tensor::{load_checkpoint, save_checkpoint, Graph};
use nestseg::wilcoxon::signed_rank;
use nestseg::LabelMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn report(id: u32, ok: bool, detail: impl AsRef<str>) -> bool {
    println!("criterion {id:>2}: {} {}", if ok { "PASS" } else { "FAIL" }, detail.as_ref());
    ok
}

#[test]
fn c01_activation_analytics() {
    let start = Instant::now();
    let mut ok = true;
    let mut notes = Vec::new();
    for m in 1..=3 {
        let cfg = ActivationConfig { m, h: 1.0, kappa: 10.0, t: 10.0 };
        if multi_level(0.0, &cfg).0 != m as f64 / 2.0 {
            ok = false;
            notes.push(format!("a(0) != {m}/2"));
        }
        let grid: Vec<f64> = (0..101).map(|i| -2.0 + 0.04 * i as f64).collect();
        let values: Vec<f64> = grid.iter().map(|&x| multi_level(x, &cfg).0).collect();
        let sym = grid
            .iter()
            .map(|&x| (multi_level(x, &cfg).0 + multi_level(-x, &cfg).0 - m as f64).abs())
            .fold(0.0, f64::max);
        if sym > 1e-12 {
            ok = false;
            notes.push(format!("m={m} symmetry error {sym:e}"));
        }
        if values.windows(2).any(|w| w[0] >= w[1]) {
            ok = false;
            notes.push(format!("m={m} not strictly increasing"));
        }
    }
    let one = ActivationConfig::new(1);
    let dev = (0..101)
        .map(|i| -2.0 + 0.04 * i as f64)
        .map(|x: f64| (multi_level(x, &one).0 - 1.0 / (1.0 + (-10.0 * x).exp())).abs())
        .fold(0.0, f64::max);
    if dev > 1e-15 {
        ok = false;
        notes.push(format!("m=1 deviates from the sigmoid by {dev:e}"));
    }
    let elapsed = start.elapsed();
    ok &= elapsed < Duration::from_secs(1);
    notes.push(format!("{elapsed:?}"));
    assert!(report(1, ok, format!("activation analytics ({})", notes.join("; "))));
}

#[test]
fn c02_gradient_suite() {
    let start = Instant::now();
    let mut worst_op = 0.0f64;
    let mut failures = Vec::new();
    for (name, tol, build, inputs) in gradient_cases() {
        let err = max_grad_error(build.as_ref(), &inputs);
        worst_op = worst_op.max(err);
        if !(err < tol) {
            failures.push(format!("{name} {err:.2e}"));
        }
    }
    let mut worst_net = 0.0f64;
    for head in [Head::MultiLevel, Head::Softmax] {
        let err = network_grad_error(head);
        worst_net = worst_net.max(err);
        if !(err < FD_TOL_NETWORK) {
            failures.push(format!("{head} network {err:.2e}"));
        }
    }
    let elapsed = start.elapsed();
    let ok = failures.is_empty() && elapsed < Duration::from_secs(30);
    assert!(report(
        2,
        ok,
        format!("gradients: worst op {worst_op:.2e} (< 1e-4), worst network {worst_net:.2e} (< 1e-3), {elapsed:?} {failures:?}")
    ));
}

#[test]
fn c03_normalization_bound() {
    let mut ok = true;
    let mut notes = Vec::new();
    for t in [10.0, 100.0] {
        let excess = (0..=1000)
            .map(|i| 2.0 * i as f64 / 1000.0)
            .map(|a| (0..=2).map(|c| q_score(a, c, 2, t).unwrap().0).sum::<f64>() - 1.0)
            .fold(f64::NEG_INFINITY, f64::max);
        let bound = 2.0 * std::f64::consts::LN_2 / t;
        ok &= excess > 0.0 && excess <= bound + 1e-15;
        if t == 100.0 {
            ok &= excess <= 0.0139;
        }
        notes.push(format!("t={t}: max excess {excess:.6} vs bound {bound:.6}"));
    }
    assert!(report(3, ok, format!("normalization ({})", notes.join("; "))));
}

/// Root of `f` in `[lo, hi]` by bisection.
fn bisect(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let flo = f(lo);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if (f(mid) > 0.0) == (flo > 0.0) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

#[test]
fn c04_intersection_thresholds() {
    let p = bisect(|a| p_score(a, 1, 2).unwrap().0 - p_score(a, 2, 2).unwrap().0, 1.0, 2.0);
    let q = bisect(|a| q_score(a, 1, 2, 1e4).unwrap().0 - q_score(a, 2, 2, 1e4).unwrap().0, 1.0, 2.0);
    let ok = (p - 4.0 / 3.0).abs() <= 1e-9 && (q - 1.5).abs() <= 1e-6;
    assert!(report(4, ok, format!("P crossing {p:.12} (4/3), Q crossing {q:.9} (1.5)")));
}

fn oracle_labels(a: &[f64], theta: &[f64]) -> Vec<u8> {
    a.iter().map(|&v| theta.iter().filter(|&&t| t <= v).count() as u8).collect()
}

#[test]
fn c05_oracle_equivalence() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut notes = Vec::new();

    let mut dice_err = 0.0f64;
    for case in 0..200 {
        let (h, w) = (rng.random_range(1..12), rng.random_range(1..12));
        let m = rng.random_range(1..4);
        let pred = random_labels(h, w, m, 1000 + case);
        let gt = random_labels(h, w, m, 5000 + case);
        for c in 0..=m {
            let got = dice(&pred, &gt, c).unwrap();
            dice_err = dice_err.max((got - brute_dice(pred.data(), gt.data(), c as u8)).abs());
        }
    }
    let dice_ok = dice_err <= 1e-12;
    notes.push(format!("dice max error {dice_err:e}"));

    let mut wil_ok = true;
    let mut cases = 0;
    for n in 0..=10 {
        for _ in 0..40 {
            // quantized values produce tied and zero differences
            let x: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 * 0.05).collect();
            let y: Vec<f64> = (0..n).map(|_| rng.random_range(0..20) as f64 * 0.05).collect();
            let (stat, p, nz) = enumerated_signed_rank(&x, &y);
            match signed_rank(&x, &y) {
                Ok(r) => {
                    wil_ok &= nz == 0 || nz >= 5;
                    wil_ok &= r.n == nz && r.statistic == stat && (r.p_value - p).abs() <= 1e-12;
                }
                Err(_) => wil_ok &= (1..5).contains(&nz),
            }
            cases += 1;
        }
    }
    notes.push(format!("wilcoxon {cases} cases"));

    let mut sweep_ok = true;
    let grid: Vec<f64> = (0..=140).map(|i| 0.55 + 0.01 * i as f64).collect();
    for case in 0..20 {
        let n = rng.random_range(1..4);
        let (h, w) = (6, 7);
        let maps: Vec<ActivationMap> = (0..n)
            .map(|_| ActivationMap::new(h, w, (0..h * w).map(|_| rng.random_range(0.0..2.0)).collect()).unwrap())
            .collect();
        let gts: Vec<LabelMap> = (0..n).map(|i| random_labels(h, w, 2, 90 + case * 7 + i as u64)).collect();
        let (th, best) = sweep_thresholds(&maps, &gts, 2, &grid, &Thresholds::preset(2)).unwrap();
        let mut expect = (f64::NAN, f64::NEG_INFINITY);
        for &top in &grid {
            let mean = maps
                .iter()
                .zip(&gts)
                .map(|(a, g)| brute_dice(&oracle_labels(&a.values, &[0.5, top]), g.data(), 2))
                .sum::<f64>()
                / n as f64;
            if mean > expect.1 {
                expect = (top, mean);
            }
        }
        sweep_ok &= th.top() == expect.0 && (best - expect.1).abs() <= 1e-12;
    }
    notes.push("threshold sweep 20 cases".into());

    let elapsed = start.elapsed();
    let ok = dice_ok && wil_ok && sweep_ok && elapsed < Duration::from_secs(30);
    notes.push(format!("{elapsed:?}"));
    assert!(report(
        5,
        ok,
        format!("oracles: dice {dice_ok}, wilcoxon {wil_ok}, sweep {sweep_ok} ({})", notes.join("; "))
    ));
}

/// Reduced synthetic benchmark sized for a single CPU core.
fn desk_config(seed: u64, dir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default();
    cfg.scene.height = 32;
    cfg.scene.width = 32;
    cfg.scene.jitter = 1.0;
    cfg.scene.margin = 2.0;
    cfg.scene.radius_range = vec![(0.18, 0.28), (0.3, 0.45)];
    cfg.network.depth = 2;
    cfg.network.base_channels = 8;
    cfg.iterations = 500;
    cfg.eval_every = 25;
    cfg.methods = vec![
        Method::new(LossKind::SoftmaxCe),
        Method::new(LossKind::Sse),
        Method::new(LossKind::Mce),
        Method::new(LossKind::Nce),
        Method { loss: LossKind::Mce, weighted: false },
    ];
    cfg.master_seed = seed;
    cfg.output_dir = dir.to_path_buf();
    cfg
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Bench {
    reports: Vec<ExperimentReport>,
    elapsed: Duration,
}

static BENCH: LazyLock<Bench> = LazyLock::new(|| {
    let start = Instant::now();
    let reports = SEEDS
        .iter()
        .map(|&seed| {
            let dir = tempfile::tempdir().unwrap();
            let report = harness::run_benchmark(&desk_config(seed, dir.path())).unwrap();
            println!("seed {seed}:\n{}", harness::summary(&report));
            report
        })
        .collect();
    Bench {
        reports,
        elapsed: start.elapsed(),
    }
});

fn pooled<T>(f: impl Fn(&ExperimentReport) -> Vec<T>) -> Vec<T> {
    BENCH.reports.iter().flat_map(f).collect()
}

const SOFTMAX: Method = Method::new(LossKind::SoftmaxCe);
const MULTILEVEL: [Method; 3] = [Method::new(LossKind::Sse), Method::new(LossKind::Mce), Method::new(LossKind::Nce)];

#[test]
fn c06_speedup() {
    let base = median(&pooled(|r| r.iterations_to_target(SOFTMAX)));
    let mut ok = BENCH.elapsed <= Duration::from_secs(30 * 60);
    let mut notes = vec![format!("softmax-ce {base}")];
    for m in MULTILEVEL {
        let it = median(&pooled(|r| r.iterations_to_target(m)));
        ok &= it.is_finite() && it <= 0.5 * base;
        notes.push(format!("{} {it}", m.name()));
    }
    notes.push(format!("benchmark {:.0?}", BENCH.elapsed));
    assert!(report(
        6,
        ok,
        format!("median iterations to Dice 0.8, each multi-level <= half of baseline ({})", notes.join(", "))
    ));
}

#[test]
fn c07_quality() {
    let d = |m: Method, preset: bool| median(&pooled(|r| r.test_dice(m, 2, preset)));
    let base = d(SOFTMAX, false);
    let mce = d(MULTILEVEL[1], false);
    let mut ok = mce >= base;
    let mut notes = vec![format!("softmax-ce {base:.4}")];
    for m in MULTILEVEL {
        let v = d(m, false);
        ok &= v >= base - 0.01;
        notes.push(format!("{} {v:.4}", m.name()));
    }
    let sse_preset = d(MULTILEVEL[0], true);
    ok &= sse_preset >= d(SOFTMAX, true);
    notes.push(format!("sse preset {sse_preset:.4}"));
    for r in &BENCH.reports {
        for w in &r.wilcoxon {
            println!("  wilcoxon {} vs {} ({}): p = {:?}", w.method, w.baseline, w.thresholds, w.p_value);
        }
    }
    assert!(report(7, ok, format!("median test Dice of class 2 ({})", notes.join(", "))));
}

#[test]
fn c08_topology() {
    let v = |m: Method| median(&pooled(|r| r.violations(m, false).iter().map(|&x| x as f64).collect()));
    let base = v(SOFTMAX);
    let mut ok = true;
    let mut notes = vec![format!("softmax-ce {base}")];
    for m in MULTILEVEL {
        let x = v(m);
        ok &= x <= base;
        notes.push(format!("{} {x}", m.name()));
    }
    let per_method: Vec<Vec<f64>> = MULTILEVEL
        .iter()
        .map(|&m| pooled(|r| r.violations(m, false).iter().map(|&x| x as f64).collect()))
        .collect();
    let triples = per_method[0].len();
    let clean = (0..triples)
        .filter(|&i| median(&per_method.iter().map(|v| v[i]).collect::<Vec<_>>()) == 0.0)
        .count();
    let frac = clean as f64 / triples as f64;
    ok &= frac >= 0.8;
    notes.push(format!("multi-level median 0 on {clean}/{triples} triples"));
    assert!(report(8, ok, format!("median violations ({})", notes.join(", "))));
}

#[test]
fn c09_weighting_ablation() {
    let unweighted = Method { loss: LossKind::Mce, weighted: false };
    let w = median(&pooled(|r| r.test_dice(MULTILEVEL[1], 2, false)));
    let u = median(&pooled(|r| r.test_dice(unweighted, 2, false)));
    let ok = u <= w - 0.05;
    assert!(report(9, ok, format!("median class-2 Dice: weighted mce {w:.4}, unweighted {u:.4} (gap >= 0.05)")));
}

fn small_benchmark(dir: &Path) -> ExperimentConfig {
    let mut cfg = desk_config(7, dir);
    cfg.network.base_channels = 4;
    cfg.n_images = 8;
    cfg.iterations = 20;
    cfg.eval_every = 10;
    cfg.batch_size = 2;
    cfg
}

#[test]
fn c10_determinism_and_formats() {
    let mut notes = Vec::new();
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    harness::run_benchmark(&small_benchmark(a.path())).unwrap();
    harness::run_benchmark(&small_benchmark(b.path())).unwrap();
    let mut csv_ok = true;
    for name in ["dice.csv", "dice_preset.csv", "curves.csv", "wilcoxon.csv", "summary.txt"] {
        csv_ok &= fs::read(a.path().join(name)).unwrap() == fs::read(b.path().join(name)).unwrap();
    }
    notes.push(format!("benchmark rerun identical: {csv_ok}"));

    let mut pgm_ok = true;
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    for maxval in [255u16, 65535] {
        let (w, h) = (13, 7);
        let samples: Vec<u16> = (0..w * h).map(|_| rng.random_range(0..=maxval)).collect();
        let pgm = Pgm::new(w, h, maxval, samples).unwrap();
        let path = a.path().join(format!("p{maxval}.pgm"));
        pgm.save(&path).unwrap();
        let back = Pgm::load(&path).unwrap();
        let path2 = a.path().join(format!("q{maxval}.pgm"));
        back.save(&path2).unwrap();
        pgm_ok &= back == pgm && fs::read(&path).unwrap() == fs::read(&path2).unwrap();
    }
    notes.push(format!("pgm round trip: {pgm_ok}"));

    let cfg = NetworkConfig {
        depth: 2,
        base_channels: 4,
        seed: 3,
        ..NetworkConfig::default()
    };
    let (store, net) = build_network(&cfg).unwrap();
    let image = random_tensor(&[1, 1, 8, 8], 0.0, 1.0, 4);
    let forward = |s: &nestseg::tensor::ParamStore| {
        let mut g = Graph::new();
        let bind = s.bind(&mut g, false);
        let x = g.constant(image.clone());
        let y = net.forward(&mut g, &bind, x).unwrap();
        g.value(y).data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    let path = a.path().join("net.nseg");
    save_checkpoint(&store, &path).unwrap();
    let (mut other, _) = build_network(&NetworkConfig { seed: 4, ..cfg }).unwrap();
    load_checkpoint(&mut other, &path).unwrap();
    let params_ok = store
        .iter()
        .zip(other.iter())
        .all(|((n1, p1), (n2, p2))| n1 == n2 && p1.value == p2.value);
    let ckpt_ok = params_ok && forward(&store) == forward(&other);
    notes.push(format!("checkpoint round trip: {ckpt_ok}"));

    assert!(report(10, csv_ok && pgm_ok && ckpt_ok, format!("determinism and formats ({})", notes.join("; "))));
}
