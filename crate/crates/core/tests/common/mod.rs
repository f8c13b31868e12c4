//! Oracles shared by the integration tests. Nothing here calls into the code
//! paths it checks except to obtain the values under test.
#![allow(dead_code)]

use nestseg::activation::{self, ActivationConfig};
use nestseg::losses::{self, ClassWeights};
use nestseg::net::{build_network, Head, NetworkConfig};
use nestseg::tensor::{Graph, Padding, ParamStore, Tensor, Var};
use nestseg::LabelMap;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-3;
pub const FD_FLOOR: f64 = 1e-6;
pub const FD_TOL: f64 = 1e-4;
pub const FD_TOL_NETWORK: f64 = 1e-3;

pub type Build = dyn Fn(&mut Graph, &[Var]) -> nestseg::Result<Var>;

fn project(g: &mut Graph, out: Var, seed: u64) -> Var {
    let n = g.value(out).numel();
    if n == 1 {
        return out;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    let wt = g.constant(Tensor::new(g.shape(out).to_vec(), w).unwrap());
    let prod = g.mul(out, wt).unwrap();
    g.sum(prod)
}

fn evaluate(build: &Build, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), false)).collect();
    let out = build(&mut g, &vars).unwrap();
    let y = project(&mut g, out, 99);
    g.value(y).item().unwrap()
}

/// Largest relative error between reverse-mode gradients and central
/// differences over every element of every input. Non-scalar outputs are
/// reduced with fixed random weights.
pub fn max_grad_error(build: &Build, inputs: &[Tensor]) -> f64 {
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let out = build(&mut g, &vars).unwrap();
    let y = project(&mut g, out, 99);
    g.backward(y).unwrap();
    let analytic: Vec<Vec<f64>> = vars.iter().map(|&v| g.grad(v).unwrap().to_vec()).collect();
    let mut worst = 0.0f64;
    for (k, input) in inputs.iter().enumerate() {
        for i in 0..input.numel() {
            let mut shifted = inputs.to_vec();
            shifted[k].data_mut()[i] += FD_STEP;
            let up = evaluate(build, &shifted);
            shifted[k].data_mut()[i] -= 2.0 * FD_STEP;
            let down = evaluate(build, &shifted);
            let numeric = (up - down) / (2.0 * FD_STEP);
            let an = analytic[k][i];
            let err = (an - numeric).abs() / an.abs().max(numeric.abs()).max(FD_FLOOR);
            worst = worst.max(err);
        }
    }
    worst
}

pub fn random_tensor(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Values in `[lo, hi)` at least `gap` away from every point of `kinks`.
pub fn tensor_avoiding(shape: &[usize], lo: f64, hi: f64, kinks: &[f64], gap: f64, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| loop {
            let v = rng.random_range(lo..hi);
            if kinks.iter().all(|k| (v - k).abs() > gap) {
                break v;
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

pub fn random_labels(h: usize, w: usize, m: usize, seed: u64) -> LabelMap {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    LabelMap::new(h, w, m, (0..h * w).map(|_| rng.random_range(0..=m as u8)).collect()).unwrap()
}

/// Named gradient cases with their tolerance.
pub fn gradient_cases() -> Vec<(&'static str, f64, Box<Build>, Vec<Tensor>)> {
    let act = ActivationConfig::new(2);
    let act3 = ActivationConfig::new(3);
    let targets = vec![random_labels(3, 4, 2, 1), random_labels(3, 4, 2, 2)];
    let weights = ClassWeights::new(vec![1.3, 2.0, 6.5]).unwrap();
    // a-values away from the tent apexes and feet
    let a_in = tensor_avoiding(&[2, 1, 3, 4], 0.05, 1.95, &[1.0], 0.05, 7);
    let mut cases: Vec<(&'static str, f64, Box<Build>, Vec<Tensor>)> = Vec::new();

    cases.push((
        "conv2d same",
        FD_TOL,
        Box::new(|g, v| Ok(g.conv2d(v[0], v[1], v[2], Padding::Same)?)),
        vec![
            random_tensor(&[2, 2, 5, 4], -1.0, 1.0, 11),
            random_tensor(&[3, 2, 3, 3], -1.0, 1.0, 12),
            random_tensor(&[3], -1.0, 1.0, 13),
        ],
    ));
    cases.push((
        "conv2d valid",
        FD_TOL,
        Box::new(|g, v| Ok(g.conv2d(v[0], v[1], v[2], Padding::Valid)?)),
        vec![
            random_tensor(&[1, 2, 5, 5], -1.0, 1.0, 14),
            random_tensor(&[2, 2, 3, 3], -1.0, 1.0, 15),
            random_tensor(&[2], -1.0, 1.0, 16),
        ],
    ));
    cases.push((
        "relu",
        FD_TOL,
        Box::new(|g, v| Ok(g.relu(v[0]))),
        vec![tensor_avoiding(&[20], -1.0, 1.0, &[0.0], 0.01, 17)],
    ));
    cases.push((
        "max pool",
        FD_TOL,
        Box::new(|g, v| Ok(g.max_pool2(v[0])?)),
        // distinct values spaced well beyond the step
        vec![{
            let mut data: Vec<f64> = (0..32).map(|i| i as f64 * 0.05).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(18);
            for i in (1..data.len()).rev() {
                data.swap(i, rng.random_range(0..=i));
            }
            Tensor::new(vec![1, 2, 4, 4], data).unwrap()
        }],
    ));
    cases.push((
        "upsample",
        FD_TOL,
        Box::new(|g, v| Ok(g.upsample2(v[0])?)),
        vec![random_tensor(&[1, 2, 2, 3], -1.0, 1.0, 19)],
    ));
    cases.push((
        "concat channels",
        FD_TOL,
        Box::new(|g, v| Ok(g.concat_channels(v[0], v[1])?)),
        vec![random_tensor(&[2, 1, 2, 2], -1.0, 1.0, 20), random_tensor(&[2, 2, 2, 2], -1.0, 1.0, 21)],
    ));
    cases.push((
        "add mul sub scale mean",
        FD_TOL,
        Box::new(|g, v| {
            let s = g.add(v[0], v[1])?;
            let p = g.mul(s, v[0])?;
            let d = g.sub(p, v[1])?;
            let k = g.scale(d, -0.7);
            Ok(g.mean(k))
        }),
        vec![random_tensor(&[6], -1.0, 1.0, 22), random_tensor(&[6], -1.0, 1.0, 23)],
    ));
    cases.push((
        "multi-level activation m=2",
        FD_TOL,
        Box::new(move |g, v| activation::multi_level_activation(g, v[0], &act)),
        vec![random_tensor(&[30], -2.0, 2.0, 24)],
    ));
    cases.push((
        "multi-level activation m=3",
        FD_TOL,
        Box::new(move |g, v| activation::multi_level_activation(g, v[0], &act3)),
        vec![random_tensor(&[30], -2.5, 2.5, 25)],
    ));
    cases.push((
        "softplus",
        FD_TOL,
        Box::new(|g, v| activation::softplus_op(g, v[0], 10.0)),
        vec![random_tensor(&[30], -1.0, 1.0, 26)],
    ));
    for c in 0..=2 {
        cases.push((
            ["P^0", "P^1", "P^2"][c],
            FD_TOL,
            Box::new(move |g, v| activation::pseudo_prob_p(g, v[0], c, 2)),
            vec![a_in.clone()],
        ));
        cases.push((
            ["Q^0", "Q^1", "Q^2"][c],
            FD_TOL,
            Box::new(move |g, v| activation::pseudo_prob_q(g, v[0], c, 2, 10.0)),
            vec![a_in.clone()],
        ));
    }
    let t = targets.clone();
    cases.push(("sse loss", FD_TOL, Box::new(move |g, v| losses::sse_loss(g, v[0], &t)), vec![a_in.clone()]));
    let (t, w) = (targets.clone(), weights.clone());
    cases.push((
        "mce loss",
        FD_TOL,
        Box::new(move |g, v| losses::mce_loss(g, v[0], &t, &w)),
        vec![a_in.clone()],
    ));
    let t = targets.clone();
    cases.push((
        "nce loss",
        FD_TOL,
        Box::new(move |g, v| losses::nce_loss(g, v[0], &t, 10.0, None)),
        vec![a_in.clone()],
    ));
    let (t, w) = (targets.clone(), weights);
    cases.push((
        "weighted nce loss",
        FD_TOL,
        Box::new(move |g, v| losses::nce_loss(g, v[0], &t, 10.0, Some(&w))),
        vec![a_in.clone()],
    ));
    let t = targets.clone();
    cases.push((
        "softmax cross-entropy loss",
        FD_TOL,
        Box::new(move |g, v| losses::softmax_ce_loss(g, v[0], &t)),
        vec![random_tensor(&[2, 3, 3, 4], -2.0, 2.0, 27)],
    ));
    let t = targets;
    cases.push((
        "activation into mce",
        FD_TOL,
        Box::new(move |g, v| {
            let a = activation::multi_level_activation(g, v[0], &act)?;
            losses::mce_loss(g, a, &t, &ClassWeights::uniform(2))
        }),
        vec![random_tensor(&[2, 1, 3, 4], -1.0, 1.0, 28)],
    ));
    cases
}

/// Relative gradient error of a depth-1 network with respect to its input
/// image and every parameter, for the given head.
pub fn network_grad_error(head: Head) -> f64 {
    let cfg = NetworkConfig {
        depth: 1,
        base_channels: 2,
        input_channels: 1,
        head,
        m: 2,
        seed: 5,
    };
    let (mut store, net) = build_network(&cfg).unwrap();
    let act = ActivationConfig::new(2);
    let image = random_tensor(&[1, 1, 4, 4], 0.0, 1.0, 30);
    let run = |store: &ParamStore, image: &Tensor, grads: bool| {
        let mut g = Graph::new();
        let bindings = store.bind(&mut g, grads);
        let x = g.leaf(image.clone(), grads);
        let logits = net.forward(&mut g, &bindings, x).unwrap();
        let out = match head {
            Head::MultiLevel => activation::multi_level_activation(&mut g, logits, &act).unwrap(),
            Head::Softmax => logits,
        };
        let y = project(&mut g, out, 99);
        let value = g.value(y).item().unwrap();
        let mut analytic = Vec::new();
        if grads {
            g.backward(y).unwrap();
            analytic.push(g.grad(x).unwrap().to_vec());
            for (name, _) in store.iter() {
                analytic.push(g.grad(bindings.var(name).unwrap()).unwrap().to_vec());
            }
        }
        (value, analytic)
    };
    let (_, analytic) = run(&store, &image, true);
    let rel = |an: f64, num: f64| (an - num).abs() / an.abs().max(num.abs()).max(FD_FLOOR);
    let mut worst = 0.0f64;
    for i in 0..image.numel() {
        let mut shifted = image.clone();
        shifted.data_mut()[i] += FD_STEP;
        let up = run(&store, &shifted, false).0;
        shifted.data_mut()[i] -= 2.0 * FD_STEP;
        let down = run(&store, &shifted, false).0;
        worst = worst.max(rel(analytic[0][i], (up - down) / (2.0 * FD_STEP)));
    }
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for (k, name) in names.iter().enumerate() {
        for i in 0..store.get(name).unwrap().numel() {
            let orig = store.get(name).unwrap().data()[i];
            store.get_mut(name).unwrap().value.data_mut()[i] = orig + FD_STEP;
            let up = run(&store, &image, false).0;
            store.get_mut(name).unwrap().value.data_mut()[i] = orig - FD_STEP;
            let down = run(&store, &image, false).0;
            store.get_mut(name).unwrap().value.data_mut()[i] = orig;
            worst = worst.max(rel(analytic[k + 1][i], (up - down) / (2.0 * FD_STEP)));
        }
    }
    worst
}

/// Dice of class `c` by direct pixel counting.
pub fn brute_dice(pred: &[u8], gt: &[u8], c: u8) -> f64 {
    let mut inter = 0.0;
    let mut p = 0.0;
    let mut q = 0.0;
    for i in 0..pred.len() {
        if pred[i] == c {
            p += 1.0;
        }
        if gt[i] == c {
            q += 1.0;
        }
        if pred[i] == c && gt[i] == c {
            inter += 1.0;
        }
    }
    if p + q == 0.0 {
        1.0
    } else {
        2.0 * inter / (p + q)
    }
}

/// Signed-rank statistic and two-sided p-value by enumerating all sign
/// patterns of the nonzero differences. Ranks come from pairwise counting.
pub fn enumerated_signed_rank(x: &[f64], y: &[f64]) -> (f64, f64, usize) {
    let scale = x.iter().chain(y).fold(0.0f64, |a, v| a.max(v.abs()));
    let tol = 1e-9 * scale;
    let d: Vec<f64> = x.iter().zip(y).map(|(a, b)| a - b).filter(|d| d.abs() > tol).collect();
    let n = d.len();
    let ranks: Vec<f64> = d
        .iter()
        .map(|di| {
            let below = d.iter().filter(|dj| dj.abs() < di.abs() - tol).count() as f64;
            let tied = d.iter().filter(|dj| (dj.abs() - di.abs()).abs() <= tol).count() as f64;
            below + (tied + 1.0) / 2.0
        })
        .collect();
    let total: f64 = ranks.iter().sum();
    let w_plus: f64 = d.iter().zip(&ranks).filter(|(di, _)| **di > 0.0).map(|(_, r)| r).sum();
    let stat = w_plus.min(total - w_plus);
    let mut hits = 0u64;
    for mask in 0u64..(1 << n) {
        let s: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
        if s.min(total - s) <= stat + 1e-9 {
            hits += 1;
        }
    }
    (stat, hits as f64 / (1u64 << n) as f64, n)
}
