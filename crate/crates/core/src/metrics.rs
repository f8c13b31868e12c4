//! Ordinal thresholding, threshold selection and Dice scoring.

use crate::losses::LossKind;
use crate::synth::validate_nesting;
use crate::{Error, LabelMap, Result};

/// Strictly increasing `theta_1 < ... < theta_m` inside `(0, m)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Thresholds(Vec<f64>);

impl Thresholds {
    pub fn new(theta: Vec<f64>, m: usize) -> Result<Self> {
        if theta.len() != m {
            return Err(Error::Invalid(format!("need {m} thresholds, got {}", theta.len())));
        }
        let mf = m as f64;
        if theta.iter().any(|t| !(*t > 0.0 && *t < mf)) {
            return Err(Error::Invalid(format!("thresholds {theta:?} must lie in (0, {m})")));
        }
        if theta.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Invalid(format!("thresholds {theta:?} must be strictly increasing")));
        }
        Ok(Self(theta))
    }

    /// `theta_k = k - 0.5`.
    pub fn preset(m: usize) -> Self {
        Self((1..=m).map(|k| k as f64 - 0.5).collect())
    }

    /// A-priori thresholds of a loss: the preset, except for MCE whose top
    /// threshold is the crossing point `m^2 / (m + 1)` of its two innermost
    /// class scores (4/3 for `m = 2`).
    pub fn for_loss(loss: LossKind, m: usize) -> Self {
        let mut th = Self::preset(m);
        if loss == LossKind::Mce && m >= 2 {
            let mf = m as f64;
            th.0[m - 1] = mf * mf / (mf + 1.0);
        }
        th
    }

    /// Same thresholds with the top one replaced.
    pub fn with_top(&self, top: f64) -> Result<Self> {
        let mut theta = self.0.clone();
        let m = theta.len();
        theta[m - 1] = top;
        Self::new(theta, m)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn m(&self) -> usize {
        self.0.len()
    }

    pub fn top(&self) -> f64 {
        self.0[self.0.len() - 1]
    }

    /// Number of thresholds at or below `a`.
    pub fn classify(&self, a: f64) -> u8 {
        self.0.iter().take_while(|&&t| t <= a).count() as u8
    }
}

/// Activation values of one image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub height: usize,
    pub width: usize,
    pub values: Vec<f64>,
}

impl ActivationMap {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "{height}x{width} activation map needs {} values, got {}",
                height * width,
                values.len()
            )));
        }
        Ok(Self { height, width, values })
    }
}

/// Label `k` where `theta_k <= a < theta_{k+1}`.
pub fn threshold_map(a: &ActivationMap, th: &Thresholds) -> Result<LabelMap> {
    let data = a.values.iter().map(|&v| th.classify(v)).collect();
    LabelMap::new(a.height, a.width, th.m(), data)
}

/// Per-pixel argmax over `channels` planes of `[C, H, W]` logits; ties go to
/// the lowest class.
pub fn baseline_predict(logits: &[f64], channels: usize, height: usize, width: usize) -> Result<LabelMap> {
    let plane = height * width;
    if channels < 2 || logits.len() != channels * plane {
        return Err(Error::Shape(format!(
            "expected [{channels}, {height}, {width}] logits with at least 2 channels, got {} values",
            logits.len()
        )));
    }
    let data = (0..plane)
        .map(|i| {
            let mut best = 0;
            for c in 1..channels {
                if logits[c * plane + i] > logits[best * plane + i] {
                    best = c;
                }
            }
            best as u8
        })
        .collect();
    LabelMap::new(height, width, channels - 1, data)
}

fn check_same_shape(pred: &LabelMap, gt: &LabelMap) -> Result<()> {
    if (pred.height(), pred.width()) != (gt.height(), gt.width()) {
        return Err(Error::Shape(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    Ok(())
}

/// `2 |P ∩ G| / (|P| + |G|)` for class `c`; 1 when the class is absent from both.
pub fn dice(pred: &LabelMap, gt: &LabelMap, c: usize) -> Result<f64> {
    check_same_shape(pred, gt)?;
    let c = c as u8;
    let (mut p, mut g, mut both) = (0usize, 0usize, 0usize);
    for (&a, &b) in pred.data().iter().zip(gt.data()) {
        p += usize::from(a == c);
        g += usize::from(b == c);
        both += usize::from(a == c && b == c);
    }
    Ok(if p + g == 0 { 1.0 } else { 2.0 * both as f64 / (p + g) as f64 })
}

/// Picks the top threshold from `grid` maximizing the mean Dice of `class`
/// over the validation maps, other thresholds fixed to `base`. Ties go to
/// the smallest grid value. Returns the thresholds and their mean Dice.
pub fn sweep_thresholds(
    a_maps: &[ActivationMap],
    gts: &[LabelMap],
    class: usize,
    grid: &[f64],
    base: &Thresholds,
) -> Result<(Thresholds, f64)> {
    if a_maps.is_empty() || a_maps.len() != gts.len() {
        return Err(Error::Invalid(format!(
            "threshold sweep needs a nonempty validation set with one label per map ({} maps, {} labels)",
            a_maps.len(),
            gts.len()
        )));
    }
    if grid.is_empty() {
        return Err(Error::Invalid("empty threshold grid".into()));
    }
    let mut best: Option<(Thresholds, f64)> = None;
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    for &top in &sorted {
        let th = base.with_top(top)?;
        let mut total = 0.0;
        for (a, gt) in a_maps.iter().zip(gts) {
            total += dice(&threshold_map(a, &th)?, gt, class)?;
        }
        let mean = total / a_maps.len() as f64;
        if best.as_ref().is_none_or(|(_, b)| mean > *b) {
            best = Some((th, mean));
        }
    }
    Ok(best.expect("grid is nonempty"))
}

/// Scores of one prediction against its ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct DiceReport {
    /// Dice per class `0..=m`.
    pub dice: Vec<f64>,
    pub pred_counts: Vec<usize>,
    pub gt_counts: Vec<usize>,
    pub violations: usize,
    /// Thresholds used, absent for argmax predictions.
    pub thresholds: Option<Thresholds>,
}

pub fn evaluate(pred: &LabelMap, gt: &LabelMap, thresholds: Option<Thresholds>) -> Result<DiceReport> {
    check_same_shape(pred, gt)?;
    let m = gt.m();
    Ok(DiceReport {
        dice: (0..=m).map(|c| dice(pred, gt, c)).collect::<Result<_>>()?,
        pred_counts: pred.counts(),
        gt_counts: gt.counts(),
        violations: validate_nesting(pred),
        thresholds,
    })
}
