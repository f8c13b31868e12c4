use std::f64::consts::TAU;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, LabelMap, Result};

const PLACEMENT_ATTEMPTS: usize = 200;
const LAYOUT_RESTARTS: usize = 20;
const MAX_ECCENTRICITY: f64 = 0.1;
const HARMONICS: usize = 3;

/// Parameters of the synthetic nested-blob scenes.
///
/// Level-1 blobs ("cells") sit on class-0 background; each blob at level `k`
/// holds blobs of level `k + 1` ("nuclei" for `k = 1`), down to level `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub height: usize,
    pub width: usize,
    /// Nesting depth; labels take values `0..=m`.
    pub m: usize,
    /// Inclusive range for the number of level-1 blobs.
    pub blobs_per_image: (usize, usize),
    /// Inclusive range for the number of children inside each blob.
    pub children_per_blob: (usize, usize),
    /// Nominal radius range per level. Level 1 is a fraction of
    /// `min(height, width)`; deeper levels are fractions of the parent radius.
    pub radius_range: Vec<(f64, f64)>,
    /// Mean intensity per class, in `[0, 1]`.
    pub intensity: Vec<f64>,
    pub noise_sigma: f64,
    /// Boundary perturbation amplitude of level-1 blobs in pixels; deeper
    /// levels scale it by their radius ratio.
    pub jitter: f64,
    /// Minimum gap in pixels between a nested blob and its parent boundary.
    pub margin: f64,
    /// Blobs of level >= 2 keep `border_guard * min(height, width) + margin`
    /// pixels from the image border, so the padding introduced by translation
    /// or downscaling always meets a shallower class first.
    pub border_guard: f64,
}

impl Default for SceneSpec {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            m: 2,
            blobs_per_image: (2, 4),
            children_per_blob: (1, 2),
            radius_range: vec![(0.15, 0.25), (0.25, 0.45)],
            intensity: vec![0.85, 0.55, 0.30],
            noise_sigma: 0.08,
            jitter: 2.0,
            margin: 3.0,
            border_guard: 0.0,
        }
    }
}

impl SceneSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::config(msg));
        if self.m < 1 {
            return bad("scene m >= 1".into());
        }
        if self.height < 4 || self.width < 4 {
            return bad(format!("scene size {}x{} must be at least 4x4", self.height, self.width));
        }
        if self.radius_range.len() != self.m {
            return bad(format!("radius_range needs one range per level (m = {})", self.m));
        }
        for (level, &(lo, hi)) in self.radius_range.iter().enumerate() {
            if !(lo > 0.0 && lo <= hi) {
                return bad(format!("radius range {level} must satisfy 0 < lo <= hi"));
            }
            if level > 0 && hi >= 1.0 {
                return bad(format!(
                    "nested radius fractions must be < 1 so radii strictly decrease (level {})",
                    level + 1
                ));
            }
        }
        if self.intensity.len() != self.m + 1 {
            return bad(format!("intensity needs m + 1 = {} values", self.m + 1));
        }
        if self.intensity.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return bad("intensities must lie in [0, 1]".into());
        }
        if !(self.noise_sigma >= 0.0) {
            return bad("noise_sigma >= 0".into());
        }
        for i in 0..self.intensity.len() {
            for j in i + 1..self.intensity.len() {
                if (self.intensity[i] - self.intensity[j]).abs() < 2.0 * self.noise_sigma {
                    return bad(format!(
                        "class intensities {i} and {j} must differ by at least 2 * noise_sigma"
                    ));
                }
            }
        }
        if !(self.jitter >= 0.0) {
            return bad("jitter >= 0".into());
        }
        if !(self.margin >= 2.0) {
            return bad("margin >= 2".into());
        }
        if !(self.border_guard >= 0.0) {
            return bad("border_guard >= 0".into());
        }
        let (lo, hi) = self.blobs_per_image;
        if lo < 1 || lo > hi {
            return bad("blobs_per_image must satisfy 1 <= min <= max".into());
        }
        let (lo, hi) = self.children_per_blob;
        if lo < 1 || lo > hi {
            return bad("children_per_blob must satisfy 1 <= min <= max".into());
        }
        Ok(())
    }

    fn size(&self) -> f64 {
        self.height.min(self.width) as f64
    }

    fn guard(&self) -> f64 {
        self.border_guard * self.size() + self.margin
    }
}

/// One generated image and its labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Row-major intensities in `[0, 1]`, single channel.
    pub image: Vec<f64>,
    pub label: LabelMap,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.label.height()
    }

    pub fn width(&self) -> usize {
        self.label.width()
    }
}

/// A perturbed ellipse.
#[derive(Debug, Clone)]
pub struct Blob {
    pub cx: f64,
    pub cy: f64,
    /// Nominal radius.
    pub radius: f64,
    eccentricity: f64,
    angle: f64,
    harmonics: [(f64, f64); HARMONICS],
    pub children: Vec<Blob>,
}

impl Blob {
    fn jitter_total(&self) -> f64 {
        self.harmonics.iter().map(|(a, _)| a.abs()).sum()
    }

    /// Upper bound of the boundary distance from the centre.
    pub fn max_extent(&self) -> f64 {
        self.radius * (1.0 + self.eccentricity) + self.jitter_total()
    }

    /// Lower bound of the boundary distance from the centre.
    pub fn min_extent(&self) -> f64 {
        self.radius * (1.0 - self.eccentricity) - self.jitter_total()
    }

    fn boundary(&self, theta: f64) -> f64 {
        let a = self.radius * (1.0 + self.eccentricity);
        let b = self.radius * (1.0 - self.eccentricity);
        let phi = theta - self.angle;
        let ellipse = a * b / ((b * phi.cos()).powi(2) + (a * phi.sin()).powi(2)).sqrt();
        let wobble: f64 = self
            .harmonics
            .iter()
            .enumerate()
            .map(|(k, (amp, phase))| amp * ((k + 2) as f64 * theta + phase).cos())
            .sum();
        ellipse + wobble
    }

    pub fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        let d = dx.hypot(dy);
        if d <= self.min_extent() {
            return true;
        }
        if d > self.max_extent() {
            return false;
        }
        d <= self.boundary(dy.atan2(dx))
    }
}

/// Blob geometry of one scene.
#[derive(Debug, Clone)]
pub struct Layout {
    pub blobs: Vec<Blob>,
}

fn draw_shape(rng: &mut ChaCha8Rng, radius: f64, jitter: f64) -> Blob {
    let eccentricity = rng.random_range(0.0..=MAX_ECCENTRICITY);
    let angle = rng.random_range(0.0..TAU);
    let weights: [f64; HARMONICS] = std::array::from_fn(|_| rng.random_range(0.05..1.0));
    let total: f64 = weights.iter().sum();
    let harmonics = std::array::from_fn(|k| (jitter * weights[k] / total, rng.random_range(0.0..TAU)));
    Blob {
        cx: 0.0,
        cy: 0.0,
        radius,
        eccentricity,
        angle,
        harmonics,
        children: Vec::new(),
    }
}

fn separated(a: &Blob, others: &[Blob]) -> bool {
    others
        .iter()
        .all(|o| (a.cx - o.cx).hypot(a.cy - o.cy) >= a.max_extent() + o.max_extent() + 1.0)
}

struct Placer<'a> {
    spec: &'a SceneSpec,
    rng: ChaCha8Rng,
}

impl Placer<'_> {
    /// Largest extent any child of a level-1 blob of radius `r` can have.
    fn child_reach(&self, r: f64) -> f64 {
        if self.spec.m < 2 {
            return 0.0;
        }
        let hi = self.spec.radius_range[1].1;
        hi * r * (1.0 + MAX_ECCENTRICITY) + self.spec.jitter * hi
    }

    /// Extent of the smallest child a blob can be asked to hold.
    fn smallest_child(&self, parent: &Blob) -> f64 {
        let lo = self.spec.radius_range[1].0;
        (lo * parent.radius * (1.0 + MAX_ECCENTRICITY) + lo * parent.jitter_total()).max(1.5)
    }

    fn place_top_level(&mut self) -> Result<Vec<Blob>> {
        let spec = self.spec;
        let (lo, hi) = spec.blobs_per_image;
        let wanted = self.rng.random_range(lo..=hi);
        let (rlo, rhi) = spec.radius_range[0];
        let (h, w) = (spec.height as f64, spec.width as f64);
        let mut placed: Vec<Blob> = Vec::new();
        for _ in 0..LAYOUT_RESTARTS {
            placed.clear();
            for _ in 0..wanted {
                for _ in 0..PLACEMENT_ATTEMPTS {
                    let r = self.rng.random_range(rlo..=rhi) * spec.size();
                    let mut blob = draw_shape(&mut self.rng, r, spec.jitter);
                    let pad = if spec.m >= 2 { spec.guard() + self.child_reach(r) } else { 0.0 };
                    if 2.0 * pad >= h || 2.0 * pad >= w {
                        continue;
                    }
                    blob.cx = self.rng.random_range(pad..=w - pad);
                    blob.cy = self.rng.random_range(pad..=h - pad);
                    if spec.m >= 2 && blob.min_extent() - spec.margin < self.smallest_child(&blob) {
                        continue;
                    }
                    if separated(&blob, &placed) {
                        placed.push(blob);
                        break;
                    }
                }
            }
            if placed.len() >= lo {
                break;
            }
        }
        if placed.len() < lo {
            return Err(Error::Invalid(format!(
                "infeasible scene: placed {} of at least {lo} top-level blobs in {LAYOUT_RESTARTS} layouts",
                placed.len()
            )));
        }
        for blob in &mut placed {
            self.fill_children(blob, 2)?;
        }
        Ok(placed)
    }

    fn inside_guard(&self, b: &Blob) -> bool {
        let g = self.spec.guard();
        let e = b.max_extent();
        b.cx - e >= g
            && b.cy - e >= g
            && b.cx + e <= self.spec.width as f64 - g
            && b.cy + e <= self.spec.height as f64 - g
    }

    fn fill_children(&mut self, parent: &mut Blob, level: usize) -> Result<()> {
        let spec = self.spec;
        if level > spec.m {
            return Ok(());
        }
        let (lo, hi) = spec.children_per_blob;
        let wanted = self.rng.random_range(lo..=hi);
        let (flo, fhi) = spec.radius_range[level - 1];
        let room = parent.min_extent() - spec.margin;
        let mut children: Vec<Blob> = Vec::new();
        for _ in 0..wanted {
            for attempt in 0..PLACEMENT_ATTEMPTS {
                let frac = self.rng.random_range(flo..=fhi);
                let jitter = parent.jitter_total() * frac;
                let mut child = draw_shape(&mut self.rng, frac * parent.radius, jitter);
                if child.max_extent() > room {
                    // shrink to fit while keeping the shape
                    let scale = room / child.max_extent();
                    child.radius *= scale;
                    for h in &mut child.harmonics {
                        h.0 *= scale;
                    }
                }
                if child.radius < 1.0 {
                    continue;
                }
                let reach = (room - child.max_extent()).max(0.0);
                let (rho, phi) = if children.is_empty() && attempt + 1 == PLACEMENT_ATTEMPTS {
                    (0.0, 0.0)
                } else {
                    (reach * self.rng.random::<f64>().sqrt(), self.rng.random_range(0.0..TAU))
                };
                child.cx = parent.cx + rho * phi.cos();
                child.cy = parent.cy + rho * phi.sin();
                let guarded = level > 2 || self.inside_guard(&child);
                if guarded && separated(&child, &children) {
                    children.push(child);
                    break;
                }
            }
        }
        if children.is_empty() {
            return Err(Error::Invalid(format!(
                "infeasible scene: no room for a level-{level} blob inside its parent"
            )));
        }
        for child in &mut children {
            self.fill_children(child, level + 1)?;
        }
        parent.children = children;
        Ok(())
    }
}

/// Draws blob geometry for `(spec, seed)`.
pub fn generate_layout(spec: &SceneSpec, seed: u64) -> Result<Layout> {
    spec.validate()?;
    let mut placer = Placer {
        spec,
        rng: ChaCha8Rng::seed_from_u64(seed),
    };
    Ok(Layout {
        blobs: placer.place_top_level()?,
    })
}

fn depth_at(blobs: &[Blob], x: f64, y: f64) -> u8 {
    for b in blobs {
        if b.contains(x, y) {
            return 1 + depth_at(&b.children, x, y);
        }
    }
    0
}

impl Layout {
    /// Label of every pixel centre.
    pub fn rasterize(&self, height: usize, width: usize, m: usize) -> Result<LabelMap> {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(depth_at(&self.blobs, x as f64 + 0.5, y as f64 + 0.5));
            }
        }
        LabelMap::new(height, width, m, data)
    }
}

/// Generates a scene: nested blobs rendered to labels, then class-mean
/// intensities with Gaussian noise clipped to `[0, 1]`. Deterministic in
/// `(spec, seed)`.
pub fn generate_scene(spec: &SceneSpec, seed: u64) -> Result<Sample> {
    let layout = generate_layout(spec, seed)?;
    let label = layout.rasterize(spec.height, spec.width, spec.m)?;
    // separate stream so geometry and noise do not interact
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let noise = Normal::new(0.0, spec.noise_sigma.max(0.0))
        .map_err(|e| Error::config(format!("noise_sigma: {e}")))?;
    let image = label
        .data()
        .iter()
        .map(|&c| (spec.intensity[c as usize] + noise.sample(&mut rng)).clamp(0.0, 1.0))
        .collect();
    Ok(Sample { image, label })
}

/// Number of 4-adjacent pixel pairs whose classes differ by more than one.
pub fn validate_nesting(label: &LabelMap) -> usize {
    let (h, w) = (label.height(), label.width());
    let mut count = 0;
    for y in 0..h {
        for x in 0..w {
            let c = label.get(y, x);
            if x + 1 < w && c.abs_diff(label.get(y, x + 1)) > 1 {
                count += 1;
            }
            if y + 1 < h && c.abs_diff(label.get(y + 1, x)) > 1 {
                count += 1;
            }
        }
    }
    count
}
