//! Training loop, cross-validated benchmark and the artifacts written by the
//! command-line tool.
//!
//! Every random choice is derived from the configuration's master seed:
//! scene `i` uses `derive_seed(master, i)`, the fold shuffle and the training
//! runs use their own derived streams. Training seeds depend on the fold only,
//! so all methods of a fold start from the same network body and see the same
//! batches and augmentations.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::activation::{multi_level, multi_level_activation, ActivationConfig};
use crate::config::{ExperimentConfig, Method};
use crate::losses::{class_weights, mce_loss, nce_loss, softmax_ce_loss, sse_loss, ClassWeights, LossKind};
use crate::metrics::{
    baseline_predict, dice, evaluate, sweep_thresholds, threshold_map, ActivationMap, DiceReport, Thresholds,
};
use crate::net::{build_network, NetworkConfig, UNet};
use crate::pgm::Pgm;
use crate::synth::{augment, derive_seed, generate_scene, make_folds, partition, validate_nesting, Sample};
use crate::tensor::{load_checkpoint, save_checkpoint, AdamConfig, Graph, ParamStore, Tensor, Var};
use crate::wilcoxon::signed_rank;
use crate::{Error, LabelMap, Result};

/// Validation Dice of the innermost class that counts as "converged".
pub const TARGET_DICE: f64 = 0.8;

const FOLD_STREAM: u64 = 0xF01D;
const TRAIN_STREAM: u64 = 0x7EA1;
const PREDICT_BATCH: usize = 8;

/// Seed of the training run for validation fold `fold`.
pub fn train_seed(master_seed: u64, fold: usize) -> u64 {
    derive_seed(derive_seed(master_seed, TRAIN_STREAM), fold as u64)
}

/// The `cfg.n_images` scenes of an experiment.
pub fn generate_images(cfg: &ExperimentConfig) -> Result<Vec<Sample>> {
    (0..cfg.n_images)
        .map(|i| generate_scene(&cfg.scene, derive_seed(cfg.master_seed, i as u64)))
        .collect()
}

/// Network output for one image.
#[derive(Debug, Clone, PartialEq)]
pub enum Output {
    /// Multi-level activation values.
    Activation(ActivationMap),
    /// `[C, H, W]` logits of the softmax head.
    Logits { channels: usize, height: usize, width: usize, values: Vec<f64> },
}

/// A network, its parameters and the method it is trained with.
#[derive(Debug, Clone)]
pub struct Model {
    pub net: UNet,
    pub store: ParamStore,
    pub method: Method,
    pub activation: ActivationConfig,
}

fn batch_tensor(images: &[&[f64]], h: usize, w: usize) -> Result<Tensor> {
    let mut data = Vec::with_capacity(images.len() * h * w);
    for img in images {
        if img.len() != h * w {
            return Err(Error::Shape(format!("image has {} pixels, expected {h}x{w}", img.len())));
        }
        data.extend_from_slice(img);
    }
    Ok(Tensor::new(vec![images.len(), 1, h, w], data)?)
}

impl Model {
    pub fn new(network: &NetworkConfig, activation: ActivationConfig, method: Method) -> Result<Self> {
        let network = NetworkConfig {
            head: method.head(),
            ..*network
        };
        activation.validate()?;
        let (store, net) = build_network(&network)?;
        Ok(Self {
            net,
            store,
            method,
            activation,
        })
    }

    pub fn m(&self) -> usize {
        self.net.config().m
    }

    /// Thresholds used when none are selected: the loss's a-priori values.
    pub fn default_thresholds(&self) -> Thresholds {
        Thresholds::for_loss(self.method.loss, self.m())
    }

    pub fn predict(&self, images: &[&[f64]], h: usize, w: usize) -> Result<Vec<Output>> {
        let mut out = Vec::with_capacity(images.len());
        for chunk in images.chunks(PREDICT_BATCH) {
            let mut g = Graph::new();
            let params = self.store.bind(&mut g, false);
            let x = g.constant(batch_tensor(chunk, h, w)?);
            let logits = self.net.forward(&mut g, &params, x)?;
            let values = g.value(logits).data();
            let channels = self.net.config().out_channels();
            for values in values.chunks(channels * h * w) {
                out.push(if self.method.loss.is_multilevel() {
                    let a = values.iter().map(|&v| multi_level(v, &self.activation).0).collect();
                    Output::Activation(ActivationMap::new(h, w, a)?)
                } else {
                    Output::Logits {
                        channels,
                        height: h,
                        width: w,
                        values: values.to_vec(),
                    }
                });
            }
        }
        Ok(out)
    }

    /// Labels of an output; `thresholds` only apply to activations.
    pub fn labels(&self, out: &Output, thresholds: &Thresholds) -> Result<LabelMap> {
        match out {
            Output::Activation(a) => threshold_map(a, thresholds),
            Output::Logits {
                channels,
                height,
                width,
                values,
            } => baseline_predict(values, *channels, *height, *width),
        }
    }

    fn loss(&self, g: &mut Graph, logits: Var, targets: &[LabelMap], weights: Option<&ClassWeights>) -> Result<Var> {
        let act = &self.activation;
        match self.method.loss {
            LossKind::SoftmaxCe => softmax_ce_loss(g, logits, targets),
            LossKind::Sse => {
                let a = multi_level_activation(g, logits, act)?;
                sse_loss(g, a, targets)
            }
            LossKind::Mce => {
                let a = multi_level_activation(g, logits, act)?;
                let uniform = ClassWeights::uniform(self.m());
                mce_loss(g, a, targets, weights.unwrap_or(&uniform))
            }
            LossKind::Nce => {
                let a = multi_level_activation(g, logits, act)?;
                nce_loss(g, a, targets, act.t, weights)
            }
        }
    }
}

/// Validation Dice of the innermost class, per monitored image, at one
/// evaluation step.
#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub iteration: usize,
    pub per_image: Vec<f64>,
}

impl CurvePoint {
    pub fn mean(&self) -> f64 {
        mean(&self.per_image)
    }
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub model: Model,
    pub curve: Vec<CurvePoint>,
}

fn innermost_dice(model: &Model, images: &[Sample]) -> Result<Vec<f64>> {
    let Some(first) = images.first() else {
        return Ok(Vec::new());
    };
    let (h, w) = (first.height(), first.width());
    let refs: Vec<&[f64]> = images.iter().map(|s| s.image.as_slice()).collect();
    let th = model.default_thresholds();
    model
        .predict(&refs, h, w)?
        .iter()
        .zip(images)
        .map(|(out, s)| dice(&model.labels(out, &th)?, &s.label, model.m()))
        .collect()
}

/// Trains one model for `cfg.iterations` Adam steps on freshly augmented
/// batches drawn from `train`, recording the innermost-class Dice on
/// `monitor` every `cfg.eval_every` steps with the loss's default thresholds.
pub fn train_model(cfg: &ExperimentConfig, method: Method, train: &[Sample], monitor: &[Sample], seed: u64) -> Result<Trained> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Invalid("empty training set".into()));
    }
    let network = NetworkConfig { seed, ..cfg.network };
    let mut model = Model::new(&network, cfg.activation, method)?;
    let labels: Vec<LabelMap> = train.iter().map(|s| s.label.clone()).collect();
    let weights = if method.weighted { Some(class_weights(&labels)?) } else { None };
    let adam = AdamConfig {
        lr: cfg.learning_rate,
        ..AdamConfig::default()
    };
    let (h, w) = (train[0].height(), train[0].width());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(2);
    let mut curve = Vec::with_capacity(cfg.iterations / cfg.eval_every);
    for it in 0..cfg.iterations {
        let batch: Vec<Sample> = (0..cfg.batch_size)
            .map(|slot| {
                let pick = &train[rng.random_range(0..train.len())];
                augment(pick, derive_seed(seed, (it * cfg.batch_size + slot) as u64), &cfg.augment)
            })
            .collect::<Result<_>>()?;
        let images: Vec<&[f64]> = batch.iter().map(|s| s.image.as_slice()).collect();
        let targets: Vec<LabelMap> = batch.iter().map(|s| s.label.clone()).collect();
        let mut g = Graph::new();
        let params = model.store.bind(&mut g, true);
        let x = g.constant(batch_tensor(&images, h, w)?);
        let logits = model.net.forward(&mut g, &params, x)?;
        let loss = model.loss(&mut g, logits, &targets, weights.as_ref())?;
        let value = g.value(loss).item().unwrap_or(f64::NAN);
        if !value.is_finite() {
            return Err(Error::Invalid(format!("{method} loss became {value} at iteration {it}")));
        }
        g.backward(loss)?;
        model.store.accumulate_grads(&g, &params);
        model.store.adam_step(&adam)?;
        if (it + 1) % cfg.eval_every == 0 {
            curve.push(CurvePoint {
                iteration: it + 1,
                per_image: innermost_dice(&model, monitor)?,
            });
        }
    }
    Ok(Trained { model, curve })
}

/// First iteration whose curve value reaches [`TARGET_DICE`].
pub fn iterations_to_target(curve: &[(usize, f64)]) -> Option<usize> {
    curve.iter().find(|(_, d)| *d >= TARGET_DICE).map(|(i, _)| *i)
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        f64::NAN
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Sample standard deviation; zero for fewer than two values.
fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let mu = mean(v);
    (v.iter().map(|x| (x - mu) * (x - mu)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Median of finite and infinite values alike.
pub fn median(v: &[f64]) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else if s[n / 2 - 1] == s[n / 2] {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Test result of one method on one (train, validation, test) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct TripleResult {
    pub triple: usize,
    pub fold: usize,
    pub test_image: usize,
    pub method: Method,
    /// With the top threshold selected on validation (argmax for softmax).
    pub swept: DiceReport,
    /// With the loss's a-priori thresholds (argmax for softmax).
    pub preset: DiceReport,
    /// Validation curve of this triple: iteration and mean Dice.
    pub curve: Vec<(usize, f64)>,
    pub iterations_to_target: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WilcoxonRow {
    pub method: String,
    pub baseline: String,
    /// `swept` or `preset`.
    pub thresholds: &'static str,
    pub n: usize,
    pub statistic: f64,
    /// `None` when the test is undefined (too few nonzero differences).
    pub p_value: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentReport {
    pub m: usize,
    pub methods: Vec<Method>,
    pub rows: Vec<TripleResult>,
    pub wilcoxon: Vec<WilcoxonRow>,
}

impl ExperimentReport {
    pub fn rows_for(&self, method: Method) -> impl Iterator<Item = &TripleResult> {
        self.rows.iter().filter(move |r| r.method == method)
    }

    /// Per-triple test Dice of `class`.
    pub fn test_dice(&self, method: Method, class: usize, preset: bool) -> Vec<f64> {
        self.rows_for(method)
            .map(|r| if preset { r.preset.dice[class] } else { r.swept.dice[class] })
            .collect()
    }

    pub fn violations(&self, method: Method, preset: bool) -> Vec<usize> {
        self.rows_for(method)
            .map(|r| if preset { r.preset.violations } else { r.swept.violations })
            .collect()
    }

    /// Per-triple iterations to reach [`TARGET_DICE`], infinite when never reached.
    pub fn iterations_to_target(&self, method: Method) -> Vec<f64> {
        self.rows_for(method)
            .map(|r| r.iterations_to_target.map_or(f64::INFINITY, |i| i as f64))
            .collect()
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

const DICE_HEADER: &str = "fold,method,class,dice,theta2,violations,iterations";

fn dice_rows(r: &TripleResult, preset: bool) -> String {
    let rep = if preset { &r.preset } else { &r.swept };
    let theta = rep.thresholds.as_ref().map(Thresholds::top);
    let iters = r.iterations_to_target.map(|i| i as f64);
    let mut out = String::new();
    for (c, d) in rep.dice.iter().enumerate() {
        let _ = writeln!(
            out,
            "{},{},{c},{d},{},{},{}",
            r.triple,
            r.method,
            fmt_opt(theta),
            rep.violations,
            fmt_opt(iters)
        );
    }
    out
}

struct CsvSink {
    path: PathBuf,
    out: BufWriter<File>,
}

impl CsvSink {
    fn create(path: PathBuf, header: &str) -> Result<Self> {
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut sink = Self {
            path,
            out: BufWriter::new(file),
        };
        sink.write(&format!("{header}\n"))?;
        Ok(sink)
    }

    fn write(&mut self, text: &str) -> Result<()> {
        self.out.write_all(text.as_bytes()).map_err(|e| Error::io(&self.path, e))
    }

    fn flush(&mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Mean and standard deviation rows per (method, class), over the row-level
/// entries of the report.
fn aggregate_rows(report: &ExperimentReport, preset: bool) -> String {
    let mut out = String::new();
    for &method in &report.methods {
        let rows: Vec<&TripleResult> = report.rows_for(method).collect();
        for c in 0..=report.m {
            let pick = |r: &&TripleResult| if preset { r.preset.clone() } else { r.swept.clone() };
            let reps: Vec<DiceReport> = rows.iter().map(pick).collect();
            let d: Vec<f64> = reps.iter().map(|r| r.dice[c]).collect();
            let th: Vec<f64> = reps.iter().filter_map(|r| r.thresholds.as_ref().map(Thresholds::top)).collect();
            let v: Vec<f64> = reps.iter().map(|r| r.violations as f64).collect();
            let it: Vec<f64> = rows.iter().filter_map(|r| r.iterations_to_target.map(|i| i as f64)).collect();
            let opt = |xs: &[f64], f: fn(&[f64]) -> f64| if xs.is_empty() { None } else { Some(f(xs)) };
            for (label, f) in [("mean", mean as fn(&[f64]) -> f64), ("sd", sd)] {
                let _ = writeln!(
                    out,
                    "{label},{method},{c},{},{},{},{}",
                    f(&d),
                    fmt_opt(opt(&th, f)),
                    f(&v),
                    fmt_opt(opt(&it, f))
                );
            }
        }
    }
    out
}

/// Recomputes the `mean` rows of a written Dice CSV from its row-level
/// entries and compares them with the stored aggregates.
pub fn check_report_consistency(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut groups: std::collections::BTreeMap<(String, String), Vec<[Option<f64>; 4]>> = Default::default();
    let mut stored = Vec::new();
    let num = |s: &str| if s == "NA" { None } else { s.parse::<f64>().ok() };
    for line in text.lines().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != 7 {
            return Err(Error::Format(format!("{}: malformed row `{line}`", path.display())));
        }
        let values = [num(f[3]), num(f[4]), num(f[5]), num(f[6])];
        let key = (f[1].to_string(), f[2].to_string());
        match f[0] {
            "mean" => stored.push((key, values)),
            "sd" => {}
            _ => groups.entry(key).or_default().push(values),
        }
    }
    for (key, values) in stored {
        let rows = groups.get(&key).map(Vec::as_slice).unwrap_or(&[]);
        for col in 0..4 {
            let xs: Vec<f64> = rows.iter().filter_map(|r| r[col]).collect();
            let recomputed = if xs.is_empty() { None } else { Some(mean(&xs)) };
            let same = match (recomputed, values[col]) {
                (None, None) => true,
                (Some(a), Some(b)) => (a - b).abs() <= 1e-12 * a.abs().max(1.0),
                _ => false,
            };
            if !same {
                return Err(Error::Invalid(format!(
                    "{}: aggregate of {key:?} column {col} is {:?}, rows give {recomputed:?}",
                    path.display(),
                    values[col]
                )));
            }
        }
    }
    Ok(())
}

/// Evaluates a trained model on one triple.
fn score_triple(
    model: &Model,
    cfg: &ExperimentConfig,
    val: &[&Sample],
    test: &Sample,
) -> Result<(DiceReport, DiceReport)> {
    let (h, w) = (test.height(), test.width());
    let m = model.m();
    let test_out = model.predict(&[test.image.as_slice()], h, w)?.remove(0);
    let preset_th = model.default_thresholds();
    let preset_pred = model.labels(&test_out, &preset_th)?;
    let multilevel = model.method.loss.is_multilevel();
    let preset = evaluate(&preset_pred, &test.label, multilevel.then(|| preset_th.clone()))?;
    if !multilevel {
        return Ok((preset.clone(), preset));
    }
    let refs: Vec<&[f64]> = val.iter().map(|s| s.image.as_slice()).collect();
    let maps: Vec<ActivationMap> = model
        .predict(&refs, h, w)?
        .into_iter()
        .map(|o| match o {
            Output::Activation(a) => a,
            Output::Logits { .. } => unreachable!("multi-level head"),
        })
        .collect();
    let gts: Vec<LabelMap> = val.iter().map(|s| s.label.clone()).collect();
    let base = Thresholds::preset(m);
    let (th, _) = sweep_thresholds(&maps, &gts, m, &cfg.grid().points(), &base)?;
    let swept = evaluate(&model.labels(&test_out, &th)?, &test.label, Some(th))?;
    Ok((swept, preset))
}

/// Cross-validated comparison of `cfg.methods`. Writes `dice.csv`,
/// `dice_preset.csv`, `curves.csv`, `wilcoxon.csv` and `summary.txt` under
/// `cfg.output_dir`, flushing the per-triple rows as they are produced.
pub fn run_benchmark(cfg: &ExperimentConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let images = generate_images(cfg)?;
    let splits = make_folds(cfg.n_images, cfg.k_folds, derive_seed(cfg.master_seed, FOLD_STREAM))?;
    let m = cfg.scene.m;
    let mut dice_csv = CsvSink::create(dir.join("dice.csv"), DICE_HEADER)?;
    let mut preset_csv = CsvSink::create(dir.join("dice_preset.csv"), DICE_HEADER)?;
    let mut curves_csv = CsvSink::create(dir.join("curves.csv"), "fold,method,iteration,val_dice")?;
    let mut report = ExperimentReport {
        m,
        methods: cfg.methods.clone(),
        rows: Vec::new(),
        wilcoxon: Vec::new(),
    };
    for fold in 0..cfg.k_folds {
        let fold_splits: Vec<(usize, &crate::synth::Split)> =
            splits.iter().enumerate().filter(|(_, s)| s.fold == fold).collect();
        let Some((_, first)) = fold_splits.first() else { continue };
        let train: Vec<Sample> = first.train.iter().map(|&i| images[i].clone()).collect();
        // the whole fold is monitored; each triple's curve averages its own
        // validation images, which equals training once per triple
        let mut fold_images: Vec<usize> = first.val.iter().chain(&first.test).copied().collect();
        fold_images.sort_unstable();
        let monitor: Vec<Sample> = fold_images.iter().map(|&i| images[i].clone()).collect();
        let seed = train_seed(cfg.master_seed, fold);
        let trained: Vec<Trained> = cfg
            .methods
            .iter()
            .map(|&method| train_model(cfg, method, &train, &monitor, seed))
            .collect::<Result<_>>()?;
        for &(triple, split) in &fold_splits {
            let test_idx = split.test[0];
            let val: Vec<&Sample> = split.val.iter().map(|&i| &images[i]).collect();
            for (t, &method) in trained.iter().zip(&cfg.methods) {
                let curve: Vec<(usize, f64)> = t
                    .curve
                    .iter()
                    .map(|p| {
                        let vals: Vec<f64> = fold_images
                            .iter()
                            .zip(&p.per_image)
                            .filter(|(i, _)| **i != test_idx)
                            .map(|(_, d)| *d)
                            .collect();
                        (p.iteration, mean(&vals))
                    })
                    .collect();
                let (swept, preset) = score_triple(&t.model, cfg, &val, &images[test_idx])?;
                let row = TripleResult {
                    triple,
                    fold,
                    test_image: test_idx,
                    method,
                    swept,
                    preset,
                    iterations_to_target: iterations_to_target(&curve),
                    curve,
                };
                dice_csv.write(&dice_rows(&row, false))?;
                preset_csv.write(&dice_rows(&row, true))?;
                let mut text = String::new();
                for (it, d) in &row.curve {
                    let _ = writeln!(text, "{triple},{method},{it},{d}");
                }
                curves_csv.write(&text)?;
                report.rows.push(row);
            }
            dice_csv.flush()?;
            preset_csv.flush()?;
            curves_csv.flush()?;
        }
    }
    report.rows.sort_by_key(|r| r.triple);
    dice_csv.write(&aggregate_rows(&report, false))?;
    preset_csv.write(&aggregate_rows(&report, true))?;
    dice_csv.flush()?;
    preset_csv.flush()?;
    drop((dice_csv, preset_csv, curves_csv));
    check_report_consistency(&dir.join("dice.csv"))?;
    check_report_consistency(&dir.join("dice_preset.csv"))?;

    let baseline = cfg.methods.iter().copied().find(|x| x.loss == LossKind::SoftmaxCe);
    if let Some(base) = baseline {
        for &method in cfg.methods.iter().filter(|x| x.loss.is_multilevel()) {
            for (label, preset) in [("swept", false), ("preset", true)] {
                let x = report.test_dice(method, m, preset);
                let y = report.test_dice(base, m, preset);
                let (n, statistic, p_value) = match signed_rank(&x, &y) {
                    Ok(r) => (r.n, r.statistic, Some(r.p_value)),
                    Err(_) => (x.len(), f64::NAN, None),
                };
                report.wilcoxon.push(WilcoxonRow {
                    method: method.name(),
                    baseline: base.name(),
                    thresholds: label,
                    n,
                    statistic,
                    p_value,
                });
            }
        }
    }
    let mut text = String::from("method,baseline,thresholds,n,statistic,p_value\n");
    for w in &report.wilcoxon {
        let _ = writeln!(
            text,
            "{},{},{},{},{},{}",
            w.method,
            w.baseline,
            w.thresholds,
            w.n,
            w.statistic,
            fmt_opt(w.p_value)
        );
    }
    let path = dir.join("wilcoxon.csv");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    let path = dir.join("summary.txt");
    fs::write(&path, summary(&report)).map_err(|e| Error::io(&path, e))?;
    Ok(report)
}

/// Per-method medians over triples.
pub fn summary(report: &ExperimentReport) -> String {
    let m = report.m;
    let mut out = format!(
        "{:<16} {:>10} {:>10} {:>10} {:>12}\n",
        "method", "dice", "dice@pre", "violations", "iters@0.8"
    );
    for &method in &report.methods {
        let v: Vec<f64> = report.violations(method, false).iter().map(|&x| x as f64).collect();
        let _ = writeln!(
            out,
            "{:<16} {:>10.4} {:>10.4} {:>10} {:>12}",
            method.name(),
            median(&report.test_dice(method, m, false)),
            median(&report.test_dice(method, m, true)),
            median(&v),
            median(&report.iterations_to_target(method))
        );
    }
    out
}

/// Result of a single training run.
#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub curve: Vec<(usize, f64)>,
    pub iterations_to_target: Option<usize>,
}

/// Sidecar configuration path of a checkpoint.
pub fn sidecar_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("ini")
}

/// Trains `cfg.method` with fold `cfg.fold` as validation and writes
/// `model.nseg`, its sidecar `model.ini` and `curve.csv` under `cfg.output_dir`.
pub fn cmd_train(cfg: &ExperimentConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let images = generate_images(cfg)?;
    let split = partition(cfg.n_images, cfg.k_folds, cfg.fold, derive_seed(cfg.master_seed, FOLD_STREAM))?;
    let train: Vec<Sample> = split.train.iter().map(|&i| images[i].clone()).collect();
    let val: Vec<Sample> = split.val.iter().map(|&i| images[i].clone()).collect();
    let trained = train_model(cfg, cfg.method, &train, &val, train_seed(cfg.master_seed, cfg.fold))?;
    let checkpoint = dir.join("model.nseg");
    save_checkpoint(&trained.model.store, &checkpoint)?;
    let sidecar = sidecar_path(&checkpoint);
    fs::write(&sidecar, cfg.to_ini()).map_err(|e| Error::io(&sidecar, e))?;
    let curve: Vec<(usize, f64)> = trained.curve.iter().map(|p| (p.iteration, p.mean())).collect();
    let mut text = String::from("iteration,val_dice\n");
    for (it, d) in &curve {
        let _ = writeln!(text, "{it},{d}");
    }
    let path = dir.join("curve.csv");
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(TrainSummary {
        checkpoint,
        iterations_to_target: iterations_to_target(&curve),
        curve,
    })
}

/// Rebuilds a trained model from a checkpoint and its sidecar configuration.
pub fn load_model(checkpoint: &Path) -> Result<(ExperimentConfig, Model)> {
    let cfg = ExperimentConfig::parse_file(&sidecar_path(checkpoint))?;
    let mut model = Model::new(&cfg.network, cfg.activation, cfg.method)?;
    load_checkpoint(&mut model.store, checkpoint)?;
    Ok((cfg, model))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictSummary {
    pub labels: PathBuf,
    pub activation: PathBuf,
    pub counts: Vec<usize>,
    pub violations: usize,
    pub thresholds: Option<Thresholds>,
}

/// Predicts labels for a PGM image. Writes `<stem>_labels.pgm` (8-bit class
/// indices) and `<stem>_activation.pgm` (16-bit; `a / m` for multi-level
/// heads, the innermost-class softmax probability otherwise) to `out_dir`.
pub fn cmd_predict(checkpoint: &Path, image: &Path, thresholds: Option<&[f64]>, out_dir: &Path) -> Result<PredictSummary> {
    let (_, model) = load_model(checkpoint)?;
    let pgm = Pgm::load(image)?;
    let (h, w) = (pgm.height, pgm.width);
    model.net.config().check_spatial(h, w)?;
    let m = model.m();
    let th = match thresholds {
        Some(t) => Thresholds::new(t.to_vec(), m)?,
        None => model.default_thresholds(),
    };
    let out = model.predict(&[pgm.to_unit_reals().as_slice()], h, w)?.remove(0);
    let labels = model.labels(&out, &th)?;
    let intensity: Vec<f64> = match &out {
        Output::Activation(a) => a.values.iter().map(|v| v / m as f64).collect(),
        Output::Logits { channels, values, .. } => {
            let plane = h * w;
            (0..plane)
                .map(|i| {
                    let col: Vec<f64> = (0..*channels).map(|c| values[c * plane + i]).collect();
                    let top = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let z: f64 = col.iter().map(|v| (v - top).exp()).sum();
                    (col[m] - top).exp() / z
                })
                .collect()
        }
    };
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let stem = image.file_stem().and_then(|s| s.to_str()).unwrap_or("image");
    let label_path = out_dir.join(format!("{stem}_labels.pgm"));
    let act_path = out_dir.join(format!("{stem}_activation.pgm"));
    Pgm::from_labels(&labels).save(&label_path)?;
    Pgm::from_unit_reals(w, h, &intensity)?.save(&act_path)?;
    Ok(PredictSummary {
        labels: label_path,
        activation: act_path,
        counts: labels.counts(),
        violations: validate_nesting(&labels),
        thresholds: model.method.loss.is_multilevel().then_some(th),
    })
}

/// Writes the experiment's scenes as a PGM dataset under `<output_dir>/data`.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<crate::synth::Manifest> {
    cfg.scene.validate()?;
    let seeds: Vec<u64> = (0..cfg.n_images).map(|i| derive_seed(cfg.master_seed, i as u64)).collect();
    crate::synth::export_dataset(&cfg.scene, &seeds, &cfg.output_dir.join("data"))
}
