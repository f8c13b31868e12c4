use super::gemm::gemm;
use super::{Result, Tensor, TensorError};

/// Handle to a node of a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Spatial padding mode for [`Graph::conv2d`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Padding {
    /// Zero padding of `k / 2` on each side; output keeps the input size.
    Same,
    /// No padding; output shrinks by `k - 1`.
    Valid,
}

#[derive(Debug, Clone, Copy)]
struct ConvGeom {
    batch: usize,
    cin: usize,
    h: usize,
    w: usize,
    cout: usize,
    kh: usize,
    kw: usize,
    ph: usize,
    pw: usize,
    oh: usize,
    ow: usize,
}

impl ConvGeom {
    fn patch(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    fn out_plane(&self) -> usize {
        self.oh * self.ow
    }
}

enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Sum(Var),
    Mean(Var),
    Relu(Var),
    Reshape(Var),
    /// Elementwise function; `deriv` holds f'(x) per element (empty when no
    /// gradient is needed).
    Map {
        input: Var,
        deriv: Vec<f64>,
    },
    Conv2d {
        input: Var,
        kernel: Var,
        bias: Var,
        geom: ConvGeom,
        /// im2col buffers for every batch item, kept only when the kernel
        /// needs a gradient.
        cols: Vec<f64>,
    },
    MaxPool2 {
        input: Var,
        argmax: Vec<usize>,
    },
    Upsample2(Var),
    Concat(Var, Var),
    SoftmaxCe {
        logits: Var,
        probs: Vec<f64>,
        labels: Vec<usize>,
        channels: usize,
        plane: usize,
    },
}

struct Node {
    value: Tensor,
    grad: Option<Vec<f64>>,
    op: Op,
    requires_grad: bool,
}

/// Differentiation tape. Nodes are appended in evaluation order, which is
/// also a valid topological order for the reverse sweep.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            grad: None,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Adds a leaf node.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Adds a leaf that does not take part in differentiation.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient of the last backward roots w.r.t. `v`.
    pub fn grad(&self, v: Var) -> Option<&[f64]> {
        self.nodes[v.0].grad.as_deref()
    }

    /// Clears every stored gradient.
    pub fn zero_grad(&mut self) {
        for node in &mut self.nodes {
            node.grad = None;
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(TensorError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(())
    }

    fn zip_with(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let va = self.value(a);
        let vb = self.value(b);
        let data = va.data().iter().zip(vb.data()).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor {
            shape: va.shape().to_vec(),
            data,
        };
        let rg = self.requires_grad(a) || self.requires_grad(b);
        self.push(value, op, rg)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        Ok(self.zip_with(a, b, Op::Add(a, b), |x, y| x + y))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        Ok(self.zip_with(a, b, Op::Sub(a, b), |x, y| x - y))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        Ok(self.zip_with(a, b, Op::Mul(a, b), |x, y| x * y))
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let va = self.value(a);
        let value = Tensor {
            shape: va.shape().to_vec(),
            data: va.data().iter().map(|x| x * s).collect(),
        };
        let rg = self.requires_grad(a);
        self.push(value, Op::Scale(a, s), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let total = self.value(a).data().iter().sum();
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(total), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let total: f64 = va.data().iter().sum();
        let mean = total / va.numel() as f64;
        let rg = self.requires_grad(a);
        self.push(Tensor::scalar(mean), Op::Mean(a), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let va = self.value(a);
        let value = Tensor {
            shape: va.shape().to_vec(),
            data: va.data().iter().map(|&x| x.max(0.0)).collect(),
        };
        let rg = self.requires_grad(a);
        self.push(value, Op::Relu(a), rg)
    }

    /// Same values under a new shape with the same element count.
    pub fn reshape(&mut self, a: Var, shape: Vec<usize>) -> Result<Var> {
        let value = self.value(a).clone().reshape(shape)?;
        let rg = self.requires_grad(a);
        Ok(self.push(value, Op::Reshape(a), rg))
    }

    /// Applies `f` elementwise; `f` returns the value and its derivative.
    pub fn map(&mut self, a: Var, f: impl Fn(f64) -> (f64, f64)) -> Var {
        self.map_indexed(a, |_, x| f(x))
    }

    /// Like [`Graph::map`] but `f` also receives the flat element index.
    pub fn map_indexed(&mut self, a: Var, f: impl Fn(usize, f64) -> (f64, f64)) -> Var {
        let rg = self.requires_grad(a);
        let va = self.value(a);
        let mut data = Vec::with_capacity(va.numel());
        let mut deriv = Vec::with_capacity(if rg { va.numel() } else { 0 });
        for (i, &x) in va.data().iter().enumerate() {
            let (y, dy) = f(i, x);
            data.push(y);
            if rg {
                deriv.push(dy);
            }
        }
        let value = Tensor {
            shape: va.shape().to_vec(),
            data,
        };
        self.push(value, Op::Map { input: a, deriv }, rg)
    }

    fn rank4(&self, op: &'static str, v: Var) -> Result<[usize; 4]> {
        match *self.shape(v) {
            [b, c, h, w] => Ok([b, c, h, w]),
            ref s => Err(TensorError::Invalid {
                op,
                msg: format!("expected a rank-4 tensor [B, C, H, W], got {s:?}"),
            }),
        }
    }

    /// Stride-1 2-d cross-correlation of `input [B, Cin, H, W]` with
    /// `kernel [Cout, Cin, kh, kw]` plus `bias [Cout]`.
    pub fn conv2d(&mut self, input: Var, kernel: Var, bias: Var, padding: Padding) -> Result<Var> {
        let [batch, cin, h, w] = self.rank4("conv2d", input)?;
        let [cout, kcin, kh, kw] = self.rank4("conv2d", kernel)?;
        if kcin != cin {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape(input).to_vec(),
                rhs: self.shape(kernel).to_vec(),
            });
        }
        if self.shape(bias) != [cout] {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d bias",
                lhs: self.shape(kernel).to_vec(),
                rhs: self.shape(bias).to_vec(),
            });
        }
        let (ph, pw) = match padding {
            Padding::Same => {
                if kh % 2 == 0 || kw % 2 == 0 {
                    return Err(TensorError::Invalid {
                        op: "conv2d",
                        msg: format!("same padding needs odd kernel sizes, got {kh}x{kw}"),
                    });
                }
                (kh / 2, kw / 2)
            }
            Padding::Valid => (0, 0),
        };
        if h + 2 * ph < kh || w + 2 * pw < kw {
            return Err(TensorError::ShapeMismatch {
                op: "conv2d",
                lhs: self.shape(input).to_vec(),
                rhs: self.shape(kernel).to_vec(),
            });
        }
        let geom = ConvGeom {
            batch,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            ph,
            pw,
            oh: h + 2 * ph + 1 - kh,
            ow: w + 2 * pw + 1 - kw,
        };
        let keep_cols = self.requires_grad(kernel);
        let (patch, plane) = (geom.patch(), geom.out_plane());
        let x = self.value(input).data();
        let k = self.value(kernel).data();
        let b = self.value(bias).data();

        let mut out = vec![0.0; batch * cout * plane];
        let mut cols = Vec::with_capacity(if keep_cols { batch * patch * plane } else { 0 });
        let mut scratch = Vec::with_capacity(if keep_cols { 0 } else { patch * plane });
        for n in 0..batch {
            let image = &x[n * cin * h * w..(n + 1) * cin * h * w];
            let col: &[f64] = if keep_cols {
                im2col(image, &geom, &mut cols);
                &cols[n * patch * plane..]
            } else {
                scratch.clear();
                im2col(image, &geom, &mut scratch);
                &scratch
            };
            let o = &mut out[n * cout * plane..(n + 1) * cout * plane];
            for (co, row) in o.chunks_exact_mut(plane).enumerate() {
                row.fill(b[co]);
            }
            gemm(cout, patch, plane, k, false, col, false, 1.0, o);
        }
        let value = Tensor {
            shape: vec![batch, cout, geom.oh, geom.ow],
            data: out,
        };
        let rg = self.requires_grad(input) || keep_cols || self.requires_grad(bias);
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            },
            rg,
        ))
    }

    /// 2x2 max pooling with stride 2. Ties resolve to the first element in
    /// row-major window order.
    pub fn max_pool2(&mut self, input: Var) -> Result<Var> {
        let [b, c, h, w] = self.rank4("max_pool2", input)?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(TensorError::Invalid {
                op: "max_pool2",
                msg: format!("spatial dims must be even, got {h}x{w}"),
            });
        }
        let (oh, ow) = (h / 2, w / 2);
        let x = self.value(input).data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(b * c * oh * ow);
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + 2 * oy * w + 2 * ox;
                    for (dy, dx) in [(0, 1), (1, 0), (1, 1)] {
                        let idx = base + (2 * oy + dy) * w + 2 * ox + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        let value = Tensor {
            shape: vec![b, c, oh, ow],
            data: out,
        };
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::MaxPool2 { input, argmax }, rg))
    }

    /// Nearest-neighbour upsampling by a factor of two in both spatial dims.
    pub fn upsample2(&mut self, input: Var) -> Result<Var> {
        let [b, c, h, w] = self.rank4("upsample2", input)?;
        let x = self.value(input).data();
        let (oh, ow) = (2 * h, 2 * w);
        let mut out = vec![0.0; b * c * oh * ow];
        for plane in 0..b * c {
            for oy in 0..oh {
                let src = &x[plane * h * w + (oy / 2) * w..][..w];
                let dst = &mut out[plane * oh * ow + oy * ow..][..ow];
                for (ox, d) in dst.iter_mut().enumerate() {
                    *d = src[ox / 2];
                }
            }
        }
        let value = Tensor {
            shape: vec![b, c, oh, ow],
            data: out,
        };
        let rg = self.requires_grad(input);
        Ok(self.push(value, Op::Upsample2(input), rg))
    }

    /// Concatenates `[B, Ca, H, W]` and `[B, Cb, H, W]` along channels.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [ba, ca, ha, wa] = self.rank4("concat_channels", a)?;
        let [bb, cb, hb, wb] = self.rank4("concat_channels", b)?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(TensorError::ShapeMismatch {
                op: "concat_channels",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        let plane = ha * wa;
        let (xa, xb) = (self.value(a).data(), self.value(b).data());
        let mut out = Vec::with_capacity(ba * (ca + cb) * plane);
        for n in 0..ba {
            out.extend_from_slice(&xa[n * ca * plane..(n + 1) * ca * plane]);
            out.extend_from_slice(&xb[n * cb * plane..(n + 1) * cb * plane]);
        }
        let value = Tensor {
            shape: vec![ba, ca + cb, ha, wa],
            data: out,
        };
        let rg = self.requires_grad(a) || self.requires_grad(b);
        Ok(self.push(value, Op::Concat(a, b), rg))
    }

    /// Mean over pixels of `-log softmax(logits)[label]`, the softmax taken
    /// over the channel axis of `[B, C, H, W]` logits. `labels` holds one class
    /// index per pixel in `[B, H, W]` order.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [b, c, h, w] = self.rank4("softmax_cross_entropy", logits)?;
        let plane = h * w;
        if labels.len() != b * plane {
            return Err(TensorError::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: self.shape(logits).to_vec(),
                rhs: vec![labels.len()],
            });
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(TensorError::Invalid {
                op: "softmax_cross_entropy",
                msg: format!("label {bad} out of range for {c} channels"),
            });
        }
        let rg = self.requires_grad(logits);
        let x = self.value(logits).data();
        let mut probs = if rg { vec![0.0; x.len()] } else { Vec::new() };
        let mut total = 0.0;
        for n in 0..b {
            for p in 0..plane {
                let at = |ch: usize| n * c * plane + ch * plane + p;
                let max = (0..c).map(|ch| x[at(ch)]).fold(f64::NEG_INFINITY, f64::max);
                let denom: f64 = (0..c).map(|ch| (x[at(ch)] - max).exp()).sum();
                let label = labels[n * plane + p];
                total += denom.ln() - (x[at(label)] - max);
                if rg {
                    for ch in 0..c {
                        probs[at(ch)] = (x[at(ch)] - max).exp() / denom;
                    }
                }
            }
        }
        let loss = total / (b * plane) as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::SoftmaxCe {
                logits,
                probs,
                labels: labels.to_vec(),
                channels: c,
                plane,
            },
            rg,
        ))
    }

    /// Reverse sweep from a scalar `root`.
    ///
    /// Gradients accumulate: calling `backward` twice without
    /// [`Graph::zero_grad`] in between doubles every stored gradient.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        let shape = self.shape(root);
        if shape.iter().product::<usize>() != 1 {
            return Err(TensorError::NonScalarRoot(shape.to_vec()));
        }
        if !self.requires_grad(root) {
            return Ok(());
        }
        let mut grads: Vec<Option<Vec<f64>>> = Vec::new();
        grads.resize_with(root.0 + 1, || None);
        grads[root.0] = Some(vec![1.0]);
        for i in (0..=root.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            let node = &mut self.nodes[i];
            match &mut node.grad {
                Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, d)| *a += d),
                None => node.grad = Some(g),
            }
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let slot = |grads: &mut [Option<Vec<f64>>], v: Var| -> bool {
            if !nodes[v.0].requires_grad {
                return false;
            }
            if grads[v.0].is_none() {
                grads[v.0] = Some(vec![0.0; nodes[v.0].value.numel()]);
            }
            true
        };
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, 1.0)] {
                    if slot(grads, v) {
                        axpy(grads[v.0].as_mut().unwrap(), sign, g);
                    }
                }
            }
            Op::Sub(a, b) => {
                for (v, sign) in [(*a, 1.0), (*b, -1.0)] {
                    if slot(grads, v) {
                        axpy(grads[v.0].as_mut().unwrap(), sign, g);
                    }
                }
            }
            Op::Mul(a, b) => {
                for (v, other) in [(*a, *b), (*b, *a)] {
                    if slot(grads, v) {
                        let o = nodes[other.0].value.data();
                        let dst = grads[v.0].as_mut().unwrap();
                        for ((d, gi), oi) in dst.iter_mut().zip(g).zip(o) {
                            *d += gi * oi;
                        }
                    }
                }
            }
            Op::Scale(a, s) => {
                if slot(grads, *a) {
                    axpy(grads[a.0].as_mut().unwrap(), *s, g);
                }
            }
            Op::Sum(a) => {
                if slot(grads, *a) {
                    grads[a.0].as_mut().unwrap().iter_mut().for_each(|d| *d += g[0]);
                }
            }
            Op::Mean(a) => {
                if slot(grads, *a) {
                    let n = nodes[a.0].value.numel() as f64;
                    let share = g[0] / n;
                    grads[a.0].as_mut().unwrap().iter_mut().for_each(|d| *d += share);
                }
            }
            Op::Relu(a) => {
                if slot(grads, *a) {
                    let x = nodes[a.0].value.data();
                    let dst = grads[a.0].as_mut().unwrap();
                    for ((d, gi), xi) in dst.iter_mut().zip(g).zip(x) {
                        if *xi > 0.0 {
                            *d += gi;
                        }
                    }
                }
            }
            Op::Reshape(a) => {
                if slot(grads, *a) {
                    axpy(grads[a.0].as_mut().unwrap(), 1.0, g);
                }
            }
            Op::Map { input, deriv } => {
                if slot(grads, *input) {
                    let dst = grads[input.0].as_mut().unwrap();
                    for ((d, gi), di) in dst.iter_mut().zip(g).zip(deriv) {
                        *d += gi * di;
                    }
                }
            }
            Op::Conv2d {
                input,
                kernel,
                bias,
                geom,
                cols,
            } => {
                let (patch, plane) = (geom.patch(), geom.out_plane());
                let cout = geom.cout;
                if slot(grads, *bias) {
                    let db = grads[bias.0].as_mut().unwrap();
                    for n in 0..geom.batch {
                        for (co, d) in db.iter_mut().enumerate() {
                            let start = (n * cout + co) * plane;
                            *d += g[start..start + plane].iter().sum::<f64>();
                        }
                    }
                }
                if slot(grads, *kernel) {
                    let dk = grads[kernel.0].as_mut().unwrap();
                    for n in 0..geom.batch {
                        let gn = &g[n * cout * plane..(n + 1) * cout * plane];
                        let col = &cols[n * patch * plane..(n + 1) * patch * plane];
                        gemm(cout, plane, patch, gn, false, col, true, 1.0, dk);
                    }
                }
                if slot(grads, *input) {
                    let k = nodes[kernel.0].value.data();
                    let mut dcol = vec![0.0; patch * plane];
                    let image = geom.cin * geom.h * geom.w;
                    let dx = grads[input.0].as_mut().unwrap();
                    for n in 0..geom.batch {
                        let gn = &g[n * cout * plane..(n + 1) * cout * plane];
                        gemm(patch, cout, plane, k, true, gn, false, 0.0, &mut dcol);
                        col2im(&dcol, geom, &mut dx[n * image..(n + 1) * image]);
                    }
                }
            }
            Op::MaxPool2 { input, argmax } => {
                if slot(grads, *input) {
                    let dst = grads[input.0].as_mut().unwrap();
                    for (gi, &src) in g.iter().zip(argmax) {
                        dst[src] += gi;
                    }
                }
            }
            Op::Upsample2(input) => {
                if slot(grads, *input) {
                    let [_, _, h, w] = <[usize; 4]>::try_from(nodes[input.0].value.shape()).unwrap();
                    let (oh, ow) = (2 * h, 2 * w);
                    let dst = grads[input.0].as_mut().unwrap();
                    for (plane, gp) in g.chunks_exact(oh * ow).enumerate() {
                        for oy in 0..oh {
                            let row = &mut dst[plane * h * w + (oy / 2) * w..][..w];
                            for (ox, gi) in gp[oy * ow..(oy + 1) * ow].iter().enumerate() {
                                row[ox / 2] += gi;
                            }
                        }
                    }
                }
            }
            Op::Concat(a, b) => {
                let sa = nodes[a.0].value.shape();
                let sb = nodes[b.0].value.shape();
                let (batch, plane) = (sa[0], sa[2] * sa[3]);
                let (na, nb) = (sa[1] * plane, sb[1] * plane);
                if slot(grads, *a) {
                    let dst = grads[a.0].as_mut().unwrap();
                    for n in 0..batch {
                        axpy(&mut dst[n * na..(n + 1) * na], 1.0, &g[n * (na + nb)..][..na]);
                    }
                }
                if slot(grads, *b) {
                    let dst = grads[b.0].as_mut().unwrap();
                    for n in 0..batch {
                        axpy(&mut dst[n * nb..(n + 1) * nb], 1.0, &g[n * (na + nb) + na..][..nb]);
                    }
                }
            }
            Op::SoftmaxCe {
                logits,
                probs,
                labels,
                channels,
                plane,
            } => {
                if slot(grads, *logits) {
                    let scale = g[0] / labels.len() as f64;
                    let dst = grads[logits.0].as_mut().unwrap();
                    for (d, p) in dst.iter_mut().zip(probs) {
                        *d += scale * p;
                    }
                    for (pix, &label) in labels.iter().enumerate() {
                        let (n, p) = (pix / plane, pix % plane);
                        dst[n * channels * plane + label * plane + p] -= scale;
                    }
                }
            }
        }
    }
}

fn axpy(dst: &mut [f64], alpha: f64, src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += alpha * s;
    }
}

/// Output columns `[lo, hi)` for which kernel column `kj` reads inside the
/// input row.
fn valid_cols(geom: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = geom.pw.saturating_sub(kj).min(geom.ow);
    let hi = (geom.w + geom.pw).saturating_sub(kj).min(geom.ow).max(lo);
    (lo, hi)
}

/// Appends the `[patch, plane]` column matrix of one image to `col`.
fn im2col(x: &[f64], geom: &ConvGeom, col: &mut Vec<f64>) {
    let (h, w, ow) = (geom.h, geom.w, geom.ow);
    for c in 0..geom.cin {
        for ki in 0..geom.kh {
            for kj in 0..geom.kw {
                let (lo, hi) = valid_cols(geom, kj);
                for oy in 0..geom.oh {
                    let iy = (oy + ki) as isize - geom.ph as isize;
                    if iy < 0 || iy >= h as isize {
                        col.resize(col.len() + ow, 0.0);
                        continue;
                    }
                    let src = &x[c * h * w + iy as usize * w..][..w];
                    let shift = lo + kj - geom.pw;
                    col.resize(col.len() + lo, 0.0);
                    col.extend_from_slice(&src[shift..shift + (hi - lo)]);
                    col.resize(col.len() + ow - hi, 0.0);
                }
            }
        }
    }
}

fn col2im(col: &[f64], geom: &ConvGeom, dx: &mut [f64]) {
    let (h, w, ow) = (geom.h, geom.w, geom.ow);
    let plane = geom.out_plane();
    for c in 0..geom.cin {
        for ki in 0..geom.kh {
            for kj in 0..geom.kw {
                let row = (c * geom.kh + ki) * geom.kw + kj;
                let src = &col[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_cols(geom, kj);
                for oy in 0..geom.oh {
                    let iy = (oy + ki) as isize - geom.ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let drow = &mut dx[c * h * w + iy as usize * w..][..w];
                    let shift = lo + kj - geom.pw;
                    axpy(&mut drow[shift..shift + (hi - lo)], 1.0, &src[oy * ow + lo..oy * ow + hi]);
                }
            }
        }
    }
}
