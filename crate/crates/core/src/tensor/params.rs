use indexmap::IndexMap;

use super::{Graph, Result, Tensor, TensorError, Var};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// A trainable tensor with its gradient and Adam moment buffers.
#[derive(Debug, Clone)]
pub struct Param {
    pub value: Tensor,
    pub grad: Option<Vec<f64>>,
    first_moment: Vec<f64>,
    second_moment: Vec<f64>,
}

/// Named parameters in insertion order plus optimizer state.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    params: IndexMap<String, Param>,
    step: u64,
    seed: u64,
}

/// Graph handles for every parameter of a store, in store order.
#[derive(Debug, Clone)]
pub struct Bindings {
    vars: Vec<Var>,
    names: IndexMap<String, usize>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.names
            .get(name)
            .map(|&i| self.vars[i])
            .ok_or_else(|| TensorError::UnknownParam(name.to_string()))
    }
}

impl ParamStore {
    pub fn new(seed: u64) -> Self {
        Self {
            params: IndexMap::new(),
            step: 0,
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Number of Adam steps taken so far.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.params.contains_key(&name) {
            return Err(TensorError::DuplicateParam(name));
        }
        let n = value.numel();
        self.params.insert(
            name,
            Param {
                value,
                grad: None,
                first_moment: vec![0.0; n],
                second_moment: vec![0.0; n],
            },
        );
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Param> {
        self.params.get_mut(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.params.values().map(|p| p.value.numel()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    /// Copies every parameter into `graph` as a leaf.
    pub fn bind(&self, graph: &mut Graph, requires_grad: bool) -> Bindings {
        let mut vars = Vec::with_capacity(self.params.len());
        let mut names = IndexMap::with_capacity(self.params.len());
        for (i, (name, p)) in self.params.iter().enumerate() {
            vars.push(graph.leaf(p.value.clone(), requires_grad));
            names.insert(name.clone(), i);
        }
        Bindings { vars, names }
    }

    /// Adds the gradients held by `graph` for the bound leaves into the
    /// store's gradient buffers.
    pub fn accumulate_grads(&mut self, graph: &Graph, bindings: &Bindings) {
        for (p, &v) in self.params.values_mut().zip(&bindings.vars) {
            let Some(g) = graph.grad(v) else { continue };
            match &mut p.grad {
                Some(acc) => acc.iter_mut().zip(g).for_each(|(a, d)| *a += d),
                None => p.grad = Some(g.to_vec()),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad = None;
        }
    }

    /// One bias-corrected Adam update of every parameter, then clears the
    /// gradients.
    pub fn adam_step(&mut self, cfg: &AdamConfig) -> Result<()> {
        let missing: Vec<String> = self
            .params
            .iter()
            .filter(|(_, p)| p.grad.is_none())
            .map(|(k, _)| k.clone())
            .collect();
        if !missing.is_empty() {
            return Err(TensorError::MissingGrads(missing));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in self.params.values_mut() {
            let g = p.grad.take().expect("checked above");
            let values = p.value.data_mut();
            for i in 0..values.len() {
                let m = cfg.beta1 * p.first_moment[i] + (1.0 - cfg.beta1) * g[i];
                let v = cfg.beta2 * p.second_moment[i] + (1.0 - cfg.beta2) * g[i] * g[i];
                p.first_moment[i] = m;
                p.second_moment[i] = v;
                values[i] -= cfg.lr * (m / c1) / ((v / c2).sqrt() + cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f64) -> ParamStore {
        let mut s = ParamStore::new(0);
        s.insert("p", Tensor::from_vec(vec![value])).unwrap();
        s
    }

    fn set_grad(s: &mut ParamStore, g: f64) {
        s.get_mut("p").unwrap().grad = Some(vec![g]);
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut s = ParamStore::new(0);
        s.insert("a", Tensor::from_vec(vec![1.0, -2.0])).unwrap();
        s.insert("b", Tensor::from_vec(vec![0.5])).unwrap();
        for _ in 0..3 {
            s.get_mut("a").unwrap().grad = Some(vec![0.0, 0.0]);
            s.get_mut("b").unwrap().grad = Some(vec![0.0]);
            s.adam_step(&AdamConfig::default()).unwrap();
        }
        assert_eq!(s.get("a").unwrap().data(), &[1.0, -2.0]);
        assert_eq!(s.get("b").unwrap().data(), &[0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut s = scalar_store(1.0);
        set_grad(&mut s, 1.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        s.adam_step(&cfg).unwrap();
        // 0.1 * 1 / (1 + 1e-8)
        assert!((s.get("p").unwrap().data()[0] - 0.9).abs() < 1e-8);
        assert!(s.get_mut("p").unwrap().grad.is_none());
    }

    #[test]
    fn two_steps_follow_scalar_reference() {
        // Hand-evaluated Adam with lr 0.1 and gradients 1.0 then -0.5:
        // step 1: m = 0.1, v = 0.001, mhat = 1, vhat = 1, p = 1 - 0.1 / (1 + 1e-8)
        // step 2: m = 0.09 - 0.05 = 0.04, v = 0.000999 + 0.00025 = 0.001249,
        //         mhat = 0.04 / 0.19, vhat = 0.001249 / 0.001999
        let mut s = scalar_store(1.0);
        let cfg = AdamConfig {
            lr: 0.1,
            ..AdamConfig::default()
        };
        set_grad(&mut s, 1.0);
        s.adam_step(&cfg).unwrap();
        set_grad(&mut s, -0.5);
        s.adam_step(&cfg).unwrap();
        let p1 = 1.0 - 0.1 / (1.0 + 1e-8);
        let mhat = 0.04 / 0.19;
        let vhat: f64 = 0.001249 / 0.001999;
        let want = p1 - 0.1 * mhat / (vhat.sqrt() + 1e-8);
        assert!((s.get("p").unwrap().data()[0] - want).abs() < 1e-12);
    }

    #[test]
    fn missing_grads_are_listed() {
        let mut s = ParamStore::new(0);
        s.insert("w", Tensor::from_vec(vec![1.0])).unwrap();
        s.insert("b", Tensor::from_vec(vec![1.0])).unwrap();
        s.get_mut("w").unwrap().grad = Some(vec![1.0]);
        let err = s.adam_step(&AdamConfig::default()).unwrap_err();
        assert!(matches!(&err, TensorError::MissingGrads(ids) if ids == &["b".to_string()]));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let mut s = scalar_store(1.0);
        assert!(s.insert("p", Tensor::scalar(0.0)).is_err());
    }
}
