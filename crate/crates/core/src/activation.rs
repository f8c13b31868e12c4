//! Multi-level activation and the pseudo-probability mappings built on it.
//!
//! The activation maps one network logit `x` to `a(x) in (0, m)` as a sum of
//! `m` sigmoids with steepness `kappa`, centred `h` apart and symmetric
//! around zero:
//!
//! ```text
//! a(x) = sum_{n=1..m} sigmoid(kappa * (x + h * (n - (m + 1) / 2)))
//! ```
//!
//! Its plateaus sit at the integers `0..=m`, one per nested class, so a single
//! output channel encodes all classes and ordinal thresholds recover labels.
//!
//! Two families of class scores turn `a` into cross-entropy inputs:
//!
//! * `P` (for the modified cross-entropy): linear ramps `1 - a/m` and `a/m`
//!   for the outermost and innermost class, tents `1 - |c - a|` in between.
//! * `Q` (for the normalized cross-entropy): softplus ramps `s(1 - a)` and
//!   `s(a - (m - 1))` at the ends, the same tents in between. Every `Q` has
//!   unit slope next to its peak and the scores sum to one as `t -> inf`.
//!
//! For `m = 2` both families are exactly the two-level formulas. For `m > 2`
//! they are a reconstruction (tents inside, ramps at the ends) chosen to keep
//! the peak-at-target and equal-slope properties; they are not taken from a
//! published four-class formula. Interior tents are clamped at zero, and the
//! tent derivative at its apex is taken as zero.

use crate::tensor::{Graph, Var};
use crate::{Error, Result};

/// Parameters of the multi-level activation and of the softplus used by `Q`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActivationConfig {
    /// Number of nesting levels; there are `m + 1` classes.
    pub m: usize,
    /// Spacing between consecutive sigmoid centres.
    pub h: f64,
    /// Sigmoid steepness.
    pub kappa: f64,
    /// Softplus temperature.
    pub t: f64,
}

impl ActivationConfig {
    pub fn new(m: usize) -> Self {
        Self {
            m,
            h: 1.0,
            kappa: 10.0,
            t: 10.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m < 1 {
            return Err(Error::config("m >= 1"));
        }
        if !(self.h > 0.0) {
            return Err(Error::config(format!("h > 0 (got {})", self.h)));
        }
        if !(self.kappa > 0.0) {
            return Err(Error::config(format!("kappa > 0 (got {})", self.kappa)));
        }
        if !(self.t > 0.0) {
            return Err(Error::config(format!("t > 0 (got {})", self.t)));
        }
        Ok(())
    }
}

impl Default for ActivationConfig {
    fn default() -> Self {
        Self::new(2)
    }
}

/// Logistic sigmoid. Negative arguments use `1 - sigmoid(-z)` so that
/// `sigmoid(z) + sigmoid(-z)` is exactly one.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        1.0 - sigmoid(-z)
    }
}

/// Activation value and derivative at `x`.
///
/// Sigmoids mirrored around zero are summed in pairs, which makes `a(0)`
/// exactly `m / 2`.
pub fn multi_level(x: f64, cfg: &ActivationConfig) -> (f64, f64) {
    let m = cfg.m;
    let centre = (m as f64 + 1.0) / 2.0;
    let term = |n: usize| {
        let s = sigmoid(cfg.kappa * (x + cfg.h * (n as f64 - centre)));
        (s, s * (1.0 - s))
    };
    let mut value = 0.0;
    let mut slope = 0.0;
    for n in 1..=m / 2 {
        let (lo, dlo) = term(n);
        let (hi, dhi) = term(m + 1 - n);
        value += lo + hi;
        slope += dlo + dhi;
    }
    if m % 2 == 1 {
        let (mid, dmid) = term(m.div_ceil(2));
        value += mid;
        slope += dmid;
    }
    (value, cfg.kappa * slope)
}

/// Softplus `(1/t) log(1 + e^{t x})` and its derivative `sigmoid(t x)`,
/// evaluated without overflow for any `x`.
pub fn softplus(x: f64, t: f64) -> (f64, f64) {
    let value = x.max(0.0) + (-(t * x).abs()).exp().ln_1p() / t;
    (value, sigmoid(t * x))
}

fn check_class(c: usize, m: usize) -> Result<()> {
    if c > m {
        return Err(Error::Invalid(format!("class {c} out of range 0..={m}")));
    }
    Ok(())
}

fn tent(a: f64, c: f64) -> (f64, f64) {
    let d = c - a;
    let v = 1.0 - d.abs();
    if v <= 0.0 {
        (0.0, 0.0)
    } else if d > 0.0 {
        (v, 1.0)
    } else if d < 0.0 {
        (v, -1.0)
    } else {
        (v, 0.0)
    }
}

/// `P^c(a)` and `dP^c/da` for the modified cross-entropy.
pub fn p_score(a: f64, c: usize, m: usize) -> Result<(f64, f64)> {
    check_class(c, m)?;
    let mf = m as f64;
    Ok(if c == 0 {
        (1.0 - a / mf, -1.0 / mf)
    } else if c == m {
        (a / mf, 1.0 / mf)
    } else {
        tent(a, c as f64)
    })
}

/// `Q^c(a)` and `dQ^c/da` for the normalized cross-entropy at softplus
/// temperature `t`.
pub fn q_score(a: f64, c: usize, m: usize, t: f64) -> Result<(f64, f64)> {
    check_class(c, m)?;
    Ok(if c == 0 {
        let (v, d) = softplus(1.0 - a, t);
        (v, -d)
    } else if c == m {
        softplus(a - (m as f64 - 1.0), t)
    } else {
        tent(a, c as f64)
    })
}

/// Elementwise multi-level activation as a graph operation.
pub fn multi_level_activation(g: &mut Graph, x: Var, cfg: &ActivationConfig) -> Result<Var> {
    cfg.validate()?;
    let cfg = *cfg;
    Ok(g.map(x, move |v| multi_level(v, &cfg)))
}

/// Elementwise softplus as a graph operation.
pub fn softplus_op(g: &mut Graph, x: Var, t: f64) -> Result<Var> {
    if !(t > 0.0) {
        return Err(Error::config(format!("t > 0 (got {t})")));
    }
    Ok(g.map(x, move |v| softplus(v, t)))
}

/// `P^c` applied to every element of `a`.
pub fn pseudo_prob_p(g: &mut Graph, a: Var, c: usize, m: usize) -> Result<Var> {
    check_class(c, m)?;
    Ok(g.map(a, move |v| p_score(v, c, m).expect("class checked")))
}

/// `Q^c` applied to every element of `a`.
pub fn pseudo_prob_q(g: &mut Graph, a: Var, c: usize, m: usize, t: f64) -> Result<Var> {
    check_class(c, m)?;
    if !(t > 0.0) {
        return Err(Error::config(format!("t > 0 (got {t})")));
    }
    Ok(g.map(a, move |v| q_score(v, c, m, t).expect("class checked")))
}
