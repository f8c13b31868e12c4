//! Losses compatible with the multi-level activation, plus the softmax
//! cross-entropy baseline.
//!
//! Activation-based losses take `a` of shape `[B, 1, H, W]` (or `[H, W]` for a
//! single map) and one [`LabelMap`] per batch item. All losses average over
//! pixels, never over classes:
//!
//! * SSE: `mean_i (a_i - c_i)^2`, minimized (the squared error is positive).
//! * MCE: `-mean_i w^{c_i} log P^{c_i}(a_i)` with inverse-frequency weights.
//! * NCE: `-mean_i log Q^{c_i}(a_i)`, unweighted by default. Because the
//!   end-class `Q` slightly exceeds one near its peak, NCE can be marginally
//!   negative.
//!
//! Scores are clamped below at [`LOG_CLAMP`] before the logarithm.

use std::fmt;
use std::str::FromStr;

use crate::activation::{p_score, q_score};
use crate::tensor::{Graph, Tensor, Var};
pub use crate::LabelMap;
use crate::{Error, Result};

/// Lower clamp applied to pseudo-probabilities before taking the log.
pub const LOG_CLAMP: f64 = 1e-7;

/// Loss selection by name.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LossKind {
    Sse,
    Mce,
    Nce,
    SoftmaxCe,
}

impl LossKind {
    pub const ALL: [LossKind; 4] = [LossKind::SoftmaxCe, LossKind::Sse, LossKind::Mce, LossKind::Nce];

    pub fn name(self) -> &'static str {
        match self {
            LossKind::Sse => "sse",
            LossKind::Mce => "mce",
            LossKind::Nce => "nce",
            LossKind::SoftmaxCe => "softmax-ce",
        }
    }

    /// Whether the loss consumes the single-channel multi-level activation.
    pub fn is_multilevel(self) -> bool {
        self != LossKind::SoftmaxCe
    }
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "sse" => Ok(LossKind::Sse),
            "mce" => Ok(LossKind::Mce),
            "nce" => Ok(LossKind::Nce),
            "softmax-ce" => Ok(LossKind::SoftmaxCe),
            other => Err(Error::config(format!(
                "loss name must be one of sse, mce, nce, softmax-ce (got `{other}`)"
            ))),
        }
    }
}

/// Per-class weights `w^c = N_tot / N_c`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeights(Vec<f64>);

impl ClassWeights {
    pub fn new(weights: Vec<f64>) -> Result<Self> {
        if weights.len() < 2 {
            return Err(Error::Invalid("class weights need at least two classes".into()));
        }
        if let Some(w) = weights.iter().find(|w| !(**w > 0.0) || !w.is_finite()) {
            return Err(Error::Invalid(format!("class weights must be positive and finite, got {w}")));
        }
        Ok(Self(weights))
    }

    /// All weights equal to one.
    pub fn uniform(m: usize) -> Self {
        Self(vec![1.0; m + 1])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn m(&self) -> usize {
        self.0.len() - 1
    }
}

/// Inverse-frequency weights pooled over every pixel of `maps`.
pub fn class_weights(maps: &[LabelMap]) -> Result<ClassWeights> {
    let first = maps
        .first()
        .ok_or_else(|| Error::Invalid("class weights need at least one label map".into()))?;
    let m = first.m();
    let mut counts = vec![0usize; m + 1];
    for map in maps {
        if map.m() != m {
            return Err(Error::Invalid(format!("label maps disagree on m ({} vs {m})", map.m())));
        }
        for (acc, c) in counts.iter_mut().zip(map.counts()) {
            *acc += c;
        }
    }
    let total: usize = counts.iter().sum();
    if let Some(absent) = counts.iter().position(|&c| c == 0) {
        return Err(Error::Invalid(format!(
            "class {absent} never occurs in the training labels; its weight would be infinite"
        )));
    }
    ClassWeights::new(counts.iter().map(|&c| total as f64 / c as f64).collect())
}

fn check_targets(g: &Graph, a: Var, targets: &[LabelMap], channels: usize) -> Result<()> {
    let shape = g.shape(a);
    let first = targets
        .first()
        .ok_or_else(|| Error::Shape("no target label maps".into()))?;
    let (h, w) = (first.height(), first.width());
    let ok = match *shape {
        [b, c, sh, sw] => b == targets.len() && c == channels && sh == h && sw == w,
        [c, sh, sw] if channels > 1 => targets.len() == 1 && c == channels && sh == h && sw == w,
        [sh, sw] if channels == 1 => targets.len() == 1 && sh == h && sw == w,
        _ => false,
    };
    let uniform = targets
        .iter()
        .all(|t| t.height() == h && t.width() == w && t.m() == first.m());
    if !ok || !uniform {
        return Err(Error::Shape(format!(
            "activation shape {shape:?} does not match {} target map(s) of {h}x{w} with {channels} channel(s)",
            targets.len()
        )));
    }
    Ok(())
}

fn labels_of(targets: &[LabelMap]) -> Vec<u8> {
    targets.iter().flat_map(|t| t.data().iter().copied()).collect()
}

fn clamped_log(p: f64) -> (f64, f64) {
    if p < LOG_CLAMP {
        (LOG_CLAMP.ln(), 0.0)
    } else {
        (p.ln(), 1.0 / p)
    }
}

/// Mean squared error between activation and class index.
pub fn sse_loss(g: &mut Graph, a: Var, targets: &[LabelMap]) -> Result<Var> {
    check_targets(g, a, targets, 1)?;
    let c: Vec<f64> = targets.iter().flat_map(|t| t.as_targets()).collect();
    let target = g.constant(Tensor::new(g.shape(a).to_vec(), c)?);
    let diff = g.sub(a, target)?;
    let sq = g.mul(diff, diff)?;
    Ok(g.mean(sq))
}

fn weighted_nll(g: &mut Graph, scores: Var, labels: &[u8], weights: Option<&ClassWeights>) -> Result<Var> {
    let logp = g.map(scores, clamped_log);
    let ll = match weights {
        Some(w) => {
            let per_pixel: Vec<f64> = labels.iter().map(|&c| w.as_slice()[c as usize]).collect();
            let wt = g.constant(Tensor::new(g.shape(logp).to_vec(), per_pixel)?);
            g.mul(logp, wt)?
        }
        None => logp,
    };
    let mean = g.mean(ll);
    Ok(g.scale(mean, -1.0))
}

fn check_weights(w: &ClassWeights, targets: &[LabelMap]) -> Result<()> {
    if w.m() != targets[0].m() {
        return Err(Error::Invalid(format!(
            "{} class weights for m = {}",
            w.as_slice().len(),
            targets[0].m()
        )));
    }
    Ok(())
}

/// Modified cross-entropy over the `P` scores.
pub fn mce_loss(g: &mut Graph, a: Var, targets: &[LabelMap], weights: &ClassWeights) -> Result<Var> {
    check_targets(g, a, targets, 1)?;
    check_weights(weights, targets)?;
    let m = targets[0].m();
    let labels = labels_of(targets);
    let scores = g.map_indexed(a, |i, v| p_score(v, labels[i] as usize, m).expect("label <= m"));
    weighted_nll(g, scores, &labels, Some(weights))
}

/// Normalized cross-entropy over the `Q` scores at softplus temperature `t`.
/// Pass `weights` only for the weighted variant.
pub fn nce_loss(
    g: &mut Graph,
    a: Var,
    targets: &[LabelMap],
    t: f64,
    weights: Option<&ClassWeights>,
) -> Result<Var> {
    check_targets(g, a, targets, 1)?;
    if let Some(w) = weights {
        check_weights(w, targets)?;
    }
    if !(t > 0.0) {
        return Err(Error::config(format!("t > 0 (got {t})")));
    }
    let m = targets[0].m();
    let labels = labels_of(targets);
    let scores = g.map_indexed(a, |i, v| q_score(v, labels[i] as usize, m, t).expect("label <= m"));
    weighted_nll(g, scores, &labels, weights)
}

/// Softmax cross-entropy of `[B, m+1, H, W]` logits (or `[m+1, H, W]`).
pub fn softmax_ce_loss(g: &mut Graph, logits: Var, targets: &[LabelMap]) -> Result<Var> {
    let m = targets
        .first()
        .ok_or_else(|| Error::Shape("no target label maps".into()))?
        .m();
    let channels = match *g.shape(logits) {
        [_, c, _, _] | [c, _, _] => c,
        ref s => return Err(Error::Shape(format!("logits must be [B, C, H, W], got {s:?}"))),
    };
    if channels != m + 1 {
        return Err(Error::Shape(format!("softmax head has {channels} channels, expected m + 1 = {}", m + 1)));
    }
    check_targets(g, logits, targets, channels)?;
    let logits = if g.shape(logits).len() == 3 {
        let mut shape = vec![1];
        shape.extend_from_slice(g.shape(logits));
        g.reshape(logits, shape)?
    } else {
        logits
    };
    let labels: Vec<usize> = labels_of(targets).iter().map(|&c| c as usize).collect();
    Ok(g.softmax_cross_entropy(logits, &labels)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn single(a: f64, class: u8, m: usize) -> (Graph, Var, Vec<LabelMap>) {
        let mut g = Graph::new();
        let v = g.leaf(Tensor::new(vec![1, 1, 1, 1], vec![a]).unwrap(), true);
        (g, v, vec![LabelMap::new(1, 1, m, vec![class]).unwrap()])
    }

    fn value(g: &Graph, v: Var) -> f64 {
        g.value(v).item().unwrap()
    }

    #[test]
    fn sse_examples() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::full(vec![1, 1, 2, 2], 2.0));
        let t = vec![LabelMap::filled(2, 2, 2, 2).unwrap()];
        let l = sse_loss(&mut g, a, &t).unwrap();
        assert_eq!(value(&g, l), 0.0);

        let (mut g, a, t) = single(0.5, 0, 2);
        let l = sse_loss(&mut g, a, &t).unwrap();
        assert_eq!(value(&g, l), 0.25);
    }

    #[test]
    fn sse_rejects_shape_mismatch() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(vec![1, 1, 2, 3]));
        let t = vec![LabelMap::filled(2, 2, 2, 0).unwrap()];
        assert!(sse_loss(&mut g, a, &t).is_err());
    }

    #[test]
    fn class_weight_examples() {
        let mut data = vec![0u8; 900];
        data.extend(vec![1u8; 90]);
        data.extend(vec![2u8; 10]);
        let w = class_weights(&[LabelMap::new(10, 100, 2, data).unwrap()]).unwrap();
        let want = [1000.0 / 900.0, 1000.0 / 90.0, 100.0];
        for (a, b) in w.as_slice().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }

        let uniform = LabelMap::new(1, 3, 2, vec![0, 1, 2]).unwrap();
        assert_eq!(class_weights(&[uniform]).unwrap().as_slice(), &[3.0, 3.0, 3.0]);

        let a = LabelMap::new(1, 4, 1, vec![0, 0, 0, 1]).unwrap();
        let b = LabelMap::new(1, 4, 1, vec![0, 1, 1, 1]).unwrap();
        assert_eq!(class_weights(&[a, b]).unwrap().as_slice(), &[2.0, 2.0]);
    }

    #[test]
    fn class_weights_name_absent_class() {
        let l = LabelMap::new(1, 2, 2, vec![0, 2]).unwrap();
        let err = class_weights(&[l]).unwrap_err().to_string();
        assert!(err.contains("class 1"), "{err}");
    }

    #[test]
    fn mce_examples() {
        let (mut g, a, t) = single(1.0, 1, 2);
        let l = mce_loss(&mut g, a, &t, &ClassWeights::uniform(2)).unwrap();
        assert_eq!(value(&g, l), 0.0);

        let (mut g, a, t) = single(4.0 / 3.0, 1, 2);
        let l = mce_loss(&mut g, a, &t, &ClassWeights::uniform(2)).unwrap();
        assert!((value(&g, l) - 0.405_465_108_108_164_4).abs() < 1e-12);

        let mut g = Graph::new();
        let a = g.leaf(Tensor::new(vec![1, 1, 1, 2], vec![0.5, 1.5]).unwrap(), true);
        let t = vec![LabelMap::new(1, 2, 2, vec![0, 2]).unwrap()];
        let w = ClassWeights::new(vec![2.0, 1.0, 1.0]).unwrap();
        let l = mce_loss(&mut g, a, &t, &w).unwrap();
        let want = (2.0 * -(0.75f64.ln()) + -(0.75f64.ln())) / 2.0;
        assert!((value(&g, l) - want).abs() < 1e-15);
    }

    fn mce_slope(a: f64, class: u8) -> f64 {
        let (mut g, v, t) = single(a, class, 2);
        let l = mce_loss(&mut g, v, &t, &ClassWeights::uniform(2)).unwrap();
        g.backward(l).unwrap();
        g.grad(v).unwrap()[0].abs()
    }

    #[test]
    fn unweighted_mce_favours_the_middle_class() {
        // |d(-log P)/da| = slope / P: 1 / 0.9 for class 1, (1/2) / 0.95 at the ends
        let inner = mce_slope(1.1, 1);
        assert!((inner / mce_slope(0.1, 0) - 2.0 * 0.95 / 0.9).abs() < 1e-12);
        assert!((inner / mce_slope(1.9, 2) - 2.0 * 0.95 / 0.9).abs() < 1e-12);
        assert!((mce_slope(0.9, 1) / mce_slope(1.9, 2) - 2.0 * 0.95 / 0.9).abs() < 1e-12);
        let near = mce_slope(1.0 + 1e-7, 1) / mce_slope(1e-7, 0);
        assert!((near - 2.0).abs() < 1e-6);
    }

    #[test]
    fn nce_examples() {
        let (mut g, a, t) = single(1.0, 1, 2);
        let l = nce_loss(&mut g, a, &t, 10.0, None).unwrap();
        assert_eq!(value(&g, l), 0.0);

        let (mut g, a, t) = single(0.0, 0, 2);
        let l = nce_loss(&mut g, a, &t, 10.0, None).unwrap();
        // -ln(1 + ln(1 + e^-10) / 10)
        let want = -(1.0 + (-10f64).exp().ln_1p() / 10.0).ln();
        assert!((value(&g, l) - want).abs() < 1e-15);
        assert!((value(&g, l) + 4.54e-6).abs() < 1e-8);
    }

    #[test]
    fn softmax_examples() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![1, 3, 1, 1], vec![10.0, 0.0, 0.0]).unwrap());
        let t = vec![LabelMap::new(1, 1, 2, vec![0]).unwrap()];
        let l = softmax_ce_loss(&mut g, x, &t).unwrap();
        let want = -(10f64.exp() / (10f64.exp() + 2.0)).ln();
        assert!((value(&g, l) - want).abs() < 1e-15);
        assert!((value(&g, l) - 9.1e-5).abs() < 1e-6);

        let x = g.constant(Tensor::full(vec![3, 2, 2], -1.5));
        let t = vec![LabelMap::new(2, 2, 2, vec![0, 1, 2, 2]).unwrap()];
        let l = softmax_ce_loss(&mut g, x, &t).unwrap();
        assert!((value(&g, l) - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn softmax_rejects_wrong_channel_count() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::zeros(vec![1, 2, 1, 1]));
        let t = vec![LabelMap::new(1, 1, 2, vec![0]).unwrap()];
        assert!(softmax_ce_loss(&mut g, x, &t).is_err());
    }

    #[test]
    fn loss_names_round_trip() {
        for k in LossKind::ALL {
            assert_eq!(k.name().parse::<LossKind>().unwrap(), k);
        }
        assert!("dice".parse::<LossKind>().is_err());
    }
}
