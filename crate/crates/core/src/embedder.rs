//! Mini-TDNN speaker embedder with attentive statistics pooling and an
//! additive-angular-margin classifier head. Forward and backward passes are
//! written out by hand in double precision.

use std::f64::consts::PI;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use thiserror::Error;

pub const SIGMA_FLOOR: f64 = 1e-8;
const NORM_FLOOR: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum EmbedderError {
    #[error("invalid embedder config: {0}")]
    InvalidConfig(String),
    #[error("{frames} frames is below the receptive field of {needed}")]
    TooFewFrames { frames: usize, needed: usize },
    #[error("input has {found} dims, model expects {expected}")]
    InputDim { expected: usize, found: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("parameter layout mismatch: {0}")]
    Layout(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TdnnLayer {
    pub kernel: usize,
    pub dilation: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbedderConfig {
    pub input_dim: usize,
    pub channels: usize,
    pub tdnn_layers: Vec<TdnnLayer>,
    pub attention_dim: usize,
    pub embedding_dim: usize,
    pub n_classes: usize,
    pub aam_scale: f64,
    pub aam_margin: f64,
}

impl EmbedderConfig {
    pub fn new(input_dim: usize, n_classes: usize) -> Self {
        Self {
            input_dim,
            channels: 64,
            tdnn_layers: vec![
                TdnnLayer {
                    kernel: 5,
                    dilation: 1,
                },
                TdnnLayer {
                    kernel: 3,
                    dilation: 2,
                },
                TdnnLayer {
                    kernel: 3,
                    dilation: 3,
                },
            ],
            attention_dim: 32,
            embedding_dim: 128,
            n_classes,
            aam_scale: 20.0,
            aam_margin: 0.2,
        }
    }

    pub fn validate(&self) -> Result<(), EmbedderError> {
        let bad = |m: String| Err(EmbedderError::InvalidConfig(m));
        if self.input_dim == 0 || self.channels == 0 || self.attention_dim == 0 {
            return bad("input_dim, channels and attention_dim must be positive".into());
        }
        if self.tdnn_layers.is_empty() {
            return bad("at least one TDNN layer is required".into());
        }
        for (i, l) in self.tdnn_layers.iter().enumerate() {
            if l.kernel % 2 == 0 {
                return bad(format!("tdnn layer {i}: kernel {} is not odd", l.kernel));
            }
            if l.dilation == 0 {
                return bad(format!("tdnn layer {i}: dilation must be >= 1"));
            }
        }
        if self.embedding_dim < 2 {
            return bad(format!("embedding_dim {} < 2", self.embedding_dim));
        }
        if self.n_classes == 0 {
            return bad("n_classes must be positive".into());
        }
        if !(self.aam_scale > 0.0) || !self.aam_scale.is_finite() {
            return bad(format!("aam_scale {} must be positive", self.aam_scale));
        }
        if !(0.0..PI / 2.0).contains(&self.aam_margin) {
            return bad(format!("aam_margin {} outside [0, pi/2)", self.aam_margin));
        }
        Ok(())
    }

    pub fn receptive_field(&self) -> usize {
        1 + self
            .tdnn_layers
            .iter()
            .map(|l| (l.kernel - 1) * l.dilation)
            .sum::<usize>()
    }

    fn layer_input_dim(&self, l: usize) -> usize {
        if l == 0 {
            self.input_dim
        } else {
            self.channels
        }
    }

    /// Names and shapes of every trainable tensor, in storage order.
    pub fn tensor_layout(&self) -> Vec<(String, Vec<usize>)> {
        let c = self.channels;
        let mut out = Vec::new();
        for (l, layer) in self.tdnn_layers.iter().enumerate() {
            out.push((
                format!("tdnn{l}.weight"),
                vec![c, layer.kernel * self.layer_input_dim(l)],
            ));
            out.push((format!("tdnn{l}.bias"), vec![c]));
        }
        out.push(("attention.w1".into(), vec![self.attention_dim, c]));
        out.push(("attention.b1".into(), vec![self.attention_dim]));
        out.push(("attention.w2".into(), vec![self.attention_dim]));
        out.push(("projection.weight".into(), vec![self.embedding_dim, 2 * c]));
        out.push(("projection.bias".into(), vec![self.embedding_dim]));
        out.push((
            "aam.weight".into(),
            vec![self.n_classes, self.embedding_dim],
        ));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            name: name.into(),
            shape,
            data: vec![0.0; n],
        }
    }

    fn view2(&self) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape((self.shape[0], self.shape[1]), &self.data).expect("2-d tensor")
    }

    fn view2_mut(&mut self) -> ArrayViewMut2<'_, f64> {
        ArrayViewMut2::from_shape((self.shape[0], self.shape[1]), &mut self.data)
            .expect("2-d tensor")
    }

    fn view1(&self) -> ArrayView1<'_, f64> {
        ArrayView1::from(&self.data[..])
    }

    fn view1_mut(&mut self) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.data[..])
    }
}

/// Named parameter tensors. Gradients and optimizer moments share this layout.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn zeros(config: &EmbedderConfig) -> Self {
        Self {
            tensors: config
                .tensor_layout()
                .into_iter()
                .map(|(n, s)| Tensor::zeros(n, s))
                .collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.shape.clone()))
                .collect(),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn len(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn all_finite(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|v| v.is_finite()))
    }

    pub fn check_layout(&self, config: &EmbedderConfig) -> Result<(), EmbedderError> {
        let layout = config.tensor_layout();
        if layout.len() != self.tensors.len() {
            return Err(EmbedderError::Layout(format!(
                "expected {} tensors, found {}",
                layout.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape), t) in layout.iter().zip(&self.tensors) {
            if *name != t.name
                || *shape != t.shape
                || t.data.len() != shape.iter().product::<usize>()
            {
                return Err(EmbedderError::Layout(format!(
                    "tensor {name} {shape:?} does not match {} {:?}",
                    t.name, t.shape
                )));
            }
        }
        Ok(())
    }

    /// Elementwise `self += other`, tensor by tensor in storage order.
    pub fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for t in &mut self.tensors {
            for v in &mut t.data {
                *v *= k;
            }
        }
    }
}

#[derive(Debug, Clone)]
struct LayerTrace {
    unfolded: Array2<f64>,
    pre: Array2<f64>,
}

/// Activations cached by a training-mode forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    layers: Vec<LayerTrace>,
    hidden: Array2<f64>,
    att_hidden: Array2<f64>,
    pub weights: Array1<f64>,
    pub mean: Array1<f64>,
    pub variance: Array1<f64>,
    pub sigma: Array1<f64>,
    stats: Array1<f64>,
    projected_norm: f64,
    pub embedding: Array1<f64>,
}

impl ForwardTrace {
    /// Branch decisions of every piecewise op; equal regimes mean the loss is
    /// smooth between two parameter settings.
    pub fn regime(&self) -> Vec<bool> {
        let mut r: Vec<bool> = self
            .layers
            .iter()
            .flat_map(|l| l.pre.iter().map(|&v| v > 0.0).collect::<Vec<_>>())
            .collect();
        r.extend(self.variance.iter().map(|&v| v > SIGMA_FLOOR));
        r
    }
}

#[derive(Debug, Clone)]
pub struct PoolOutput {
    pub weights: Array1<f64>,
    pub mean: Array1<f64>,
    pub variance: Array1<f64>,
    pub sigma: Array1<f64>,
    att_hidden: Array2<f64>,
}

/// Frame-local attention followed by weighted mean and standard deviation.
pub fn attentive_stats_pool(
    h: ArrayView2<f64>,
    w1: ArrayView2<f64>,
    b1: ArrayView1<f64>,
    w2: ArrayView1<f64>,
) -> PoolOutput {
    let mut pre = h.dot(&w1.t());
    pre += &b1;
    let att_hidden = pre.mapv(f64::tanh);
    let logits = att_hidden.dot(&w2);
    let max = logits.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let exp = logits.mapv(|v| (v - max).exp());
    let weights = &exp / exp.sum();
    let mean = h.t().dot(&weights);
    let second = h.mapv(|v| v * v).t().dot(&weights);
    let variance = &second - &mean.mapv(|m| m * m);
    let sigma = variance.mapv(|v| v.max(SIGMA_FLOOR).sqrt());
    PoolOutput {
        weights,
        mean,
        variance,
        sigma,
        att_hidden,
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AamOutput {
    pub loss: f64,
    pub logits: Array1<f64>,
    pub grad_embedding: Array1<f64>,
    pub grad_class_weights: Array2<f64>,
    /// True when the target angle plus margin exceeds pi and the linear fallback applies.
    pub fallback: bool,
}

/// Additive angular margin softmax cross-entropy. Class rows are normalized
/// here; the class-weight gradient is with respect to the raw rows.
pub fn aam_loss(
    embedding: ArrayView1<f64>,
    label: usize,
    class_weights: ArrayView2<f64>,
    s: f64,
    m: f64,
) -> Result<AamOutput, EmbedderError> {
    let n_classes = class_weights.nrows();
    if label >= n_classes {
        return Err(EmbedderError::LabelOutOfRange { label, n_classes });
    }
    let norms: Array1<f64> = class_weights
        .rows()
        .into_iter()
        .map(|r| r.dot(&r).sqrt().max(NORM_FLOOR))
        .collect();
    let unit = &class_weights / &norms.view().insert_axis(Axis(1));
    let cos = unit.dot(&embedding);

    let (cos_m, sin_m) = (m.cos(), m.sin());
    let th = (PI - m).cos();
    let mm = (PI - m).sin() * m;
    let c = cos[label];
    let fallback = c <= th;
    let (phi, dphi) = if fallback {
        (c - mm, 1.0)
    } else {
        let sin_sq = 1.0 - c * c;
        if sin_sq > NORM_FLOOR {
            let sin = sin_sq.sqrt();
            (c * cos_m - sin * sin_m, cos_m + sin_m * c / sin)
        } else {
            (c * cos_m, cos_m)
        }
    };

    let mut logits = cos.mapv(|v| s * v);
    logits[label] = s * phi;
    let top = (0..n_classes)
        .max_by(|&a, &b| logits[a].total_cmp(&logits[b]))
        .expect("at least one class");
    let max = logits[top];
    let exp = logits.mapv(|v| (v - max).exp());
    let sum = exp.sum();
    let rest: f64 = (0..n_classes).filter(|&j| j != top).map(|j| exp[j]).sum();
    let loss = (max - logits[label]) + rest.ln_1p();

    let mut dlogit = &exp / sum;
    dlogit[label] -= 1.0;
    let mut dcos = dlogit.mapv(|v| s * v);
    dcos[label] *= dphi;

    let grad_embedding = unit.t().dot(&dcos);
    let mut grad_class_weights = Array2::zeros(class_weights.raw_dim());
    for j in 0..n_classes {
        let u = unit.row(j);
        let du = embedding.mapv(|e| dcos[j] * e);
        let radial = u.dot(&du);
        let mut g = grad_class_weights.row_mut(j);
        g.assign(&((&du - &u.mapv(|v| v * radial)) / norms[j]));
    }
    Ok(AamOutput {
        loss,
        logits,
        grad_embedding,
        grad_class_weights,
        fallback,
    })
}

fn unfold(h: ArrayView2<f64>, kernel: usize, dilation: usize) -> Array2<f64> {
    let c = h.ncols();
    let t_out = h.nrows() - (kernel - 1) * dilation;
    let mut u = Array2::zeros((t_out, kernel * c));
    for j in 0..kernel {
        u.slice_mut(s![.., j * c..(j + 1) * c])
            .assign(&h.slice(s![j * dilation..j * dilation + t_out, ..]));
    }
    u
}

fn fold(du: ArrayView2<f64>, kernel: usize, dilation: usize, t_in: usize, c: usize) -> Array2<f64> {
    let t_out = du.nrows();
    let mut dh = Array2::zeros((t_in, c));
    for j in 0..kernel {
        let mut dst = dh.slice_mut(s![j * dilation..j * dilation + t_out, ..]);
        dst += &du.slice(s![.., j * c..(j + 1) * c]);
    }
    dh
}

pub struct Embedder {
    config: EmbedderConfig,
}

impl Embedder {
    pub fn new(config: EmbedderConfig) -> Result<Self, EmbedderError> {
        config.validate()?;
        Ok(Self { config })
    }

    pub fn config(&self) -> &EmbedderConfig {
        &self.config
    }

    fn att_index(&self) -> usize {
        2 * self.config.tdnn_layers.len()
    }

    pub fn init_params(&self, seed: u64) -> ModelParams {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::zeros(&self.config);
        for t in &mut p.tensors {
            if t.name.ends_with("bias") || t.name.ends_with("b1") {
                continue;
            }
            if t.name == "aam.weight" {
                for v in &mut t.data {
                    *v = rng.sample::<f64, _>(StandardNormal);
                }
                continue;
            }
            let fan_in = if t.shape.len() == 2 {
                t.shape[1]
            } else {
                t.shape[0]
            };
            let fan_out = if t.shape.len() == 2 { t.shape[0] } else { 1 };
            let bound = if t.name.starts_with("tdnn") {
                (6.0 / fan_in as f64).sqrt()
            } else {
                (6.0 / (fan_in + fan_out) as f64).sqrt()
            };
            for v in &mut t.data {
                *v = rng.gen_range(-bound..bound);
            }
        }
        p
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<(), EmbedderError> {
        if x.ncols() != self.config.input_dim {
            return Err(EmbedderError::InputDim {
                expected: self.config.input_dim,
                found: x.ncols(),
            });
        }
        let needed = self.config.receptive_field();
        if x.nrows() < needed {
            return Err(EmbedderError::TooFewFrames {
                frames: x.nrows(),
                needed,
            });
        }
        Ok(())
    }

    /// Training-mode forward pass: unit embedding plus cached activations.
    pub fn forward(
        &self,
        params: &ModelParams,
        x: ArrayView2<f64>,
    ) -> Result<(Array1<f64>, ForwardTrace), EmbedderError> {
        self.check_input(&x)?;
        let mut layers = Vec::with_capacity(self.config.tdnn_layers.len());
        let mut h = x.to_owned();
        for (l, layer) in self.config.tdnn_layers.iter().enumerate() {
            let w = params.tensors[2 * l].view2();
            let b = params.tensors[2 * l + 1].view1();
            let u = unfold(h.view(), layer.kernel, layer.dilation);
            let mut pre = u.dot(&w.t());
            pre += &b;
            h = pre.mapv(|v| v.max(0.0));
            layers.push(LayerTrace { unfolded: u, pre });
        }
        let a = self.att_index();
        let pool = attentive_stats_pool(
            h.view(),
            params.tensors[a].view2(),
            params.tensors[a + 1].view1(),
            params.tensors[a + 2].view1(),
        );
        let c = self.config.channels;
        let mut stats = Array1::zeros(2 * c);
        stats.slice_mut(s![..c]).assign(&pool.mean);
        stats.slice_mut(s![c..]).assign(&pool.sigma);
        let y = params.tensors[a + 3].view2().dot(&stats) + params.tensors[a + 4].view1();
        let norm = y.dot(&y).sqrt().max(NORM_FLOOR);
        let embedding = &y / norm;
        let trace = ForwardTrace {
            layers,
            hidden: h,
            att_hidden: pool.att_hidden,
            weights: pool.weights,
            mean: pool.mean,
            variance: pool.variance,
            sigma: pool.sigma,
            stats,
            projected_norm: norm,
            embedding: embedding.clone(),
        };
        Ok((embedding, trace))
    }

    /// Inference-mode forward pass.
    pub fn embed(
        &self,
        params: &ModelParams,
        x: ArrayView2<f64>,
    ) -> Result<Array1<f64>, EmbedderError> {
        self.forward(params, x).map(|(e, _)| e)
    }

    /// Reverse-mode gradients for every tensor given dL/d(embedding).
    /// The classifier rows get zero here; `loss_and_grad` fills them in.
    pub fn backward(
        &self,
        params: &ModelParams,
        trace: &ForwardTrace,
        d_embedding: ArrayView1<f64>,
    ) -> ModelParams {
        let mut grads = params.zeros_like();
        let a = self.att_index();
        let c = self.config.channels;

        let e = &trace.embedding;
        let dy = (&d_embedding - &e.mapv(|v| v * e.dot(&d_embedding))) / trace.projected_norm;
        let proj = params.tensors[a + 3].view2();
        {
            let mut gw = grads.tensors[a + 3].view2_mut();
            for i in 0..dy.len() {
                gw.row_mut(i).scaled_add(dy[i], &trace.stats);
            }
        }
        grads.tensors[a + 4].view1_mut().assign(&dy);
        let dstats = proj.t().dot(&dy);
        let dmean = dstats.slice(s![..c]);
        let dsigma = dstats.slice(s![c..]);

        let h = &trace.hidden;
        let w = &trace.weights;
        let dvar: Array1<f64> = (0..c)
            .map(|k| {
                if trace.variance[k] > SIGMA_FLOOR {
                    dsigma[k] / (2.0 * trace.sigma[k])
                } else {
                    0.0
                }
            })
            .collect();
        let dmu_total = &dmean - &(&trace.mean * &dvar * 2.0);

        // dL/dh through the weighted moments, with attention weights held fixed
        let t = h.nrows();
        let mut dh = Array2::zeros((t, c));
        for ti in 0..t {
            let hr = h.row(ti);
            let mut row = dh.row_mut(ti);
            for k in 0..c {
                row[k] = w[ti] * (dmu_total[k] + 2.0 * hr[k] * dvar[k]);
            }
        }
        // dL/dweights then through the softmax
        let dw: Array1<f64> = h.dot(&dmu_total) + h.mapv(|v| v * v).dot(&dvar);
        let avg = w.dot(&dw);
        let dlogit = w * &(&dw - avg);

        let w1 = params.tensors[a].view2();
        let w2 = params.tensors[a + 2].view1();
        let att = &trace.att_hidden;
        grads.tensors[a + 2]
            .view1_mut()
            .assign(&att.t().dot(&dlogit));
        let mut dpre = Array2::zeros(att.raw_dim());
        for ti in 0..t {
            for j in 0..w2.len() {
                let av = att[[ti, j]];
                dpre[[ti, j]] = dlogit[ti] * w2[j] * (1.0 - av * av);
            }
        }
        grads.tensors[a].view2_mut().assign(&dpre.t().dot(h));
        grads.tensors[a + 1]
            .view1_mut()
            .assign(&dpre.sum_axis(Axis(0)));
        dh += &dpre.dot(&w1);

        for (l, layer) in self.config.tdnn_layers.iter().enumerate().rev() {
            let lt = &trace.layers[l];
            let mut dz = dh;
            dz.zip_mut_with(&lt.pre, |g, &z| {
                if z <= 0.0 {
                    *g = 0.0
                }
            });
            grads.tensors[2 * l]
                .view2_mut()
                .assign(&dz.t().dot(&lt.unfolded));
            grads.tensors[2 * l + 1]
                .view1_mut()
                .assign(&dz.sum_axis(Axis(0)));
            if l == 0 {
                break;
            }
            let w = params.tensors[2 * l].view2();
            let du = dz.dot(&w);
            let c_in = self.config.layer_input_dim(l);
            let t_in = lt.unfolded.nrows() + (layer.kernel - 1) * layer.dilation;
            dh = fold(du.view(), layer.kernel, layer.dilation, t_in, c_in);
        }
        grads
    }

    fn class_weights<'a>(&self, params: &'a ModelParams) -> ArrayView2<'a, f64> {
        params.tensors[self.att_index() + 5].view2()
    }

    pub fn loss(
        &self,
        params: &ModelParams,
        x: ArrayView2<f64>,
        label: usize,
    ) -> Result<f64, EmbedderError> {
        let (e, _) = self.forward(params, x)?;
        let out = aam_loss(
            e.view(),
            label,
            self.class_weights(params),
            self.config.aam_scale,
            self.config.aam_margin,
        )?;
        Ok(out.loss)
    }

    /// AAM loss for one utterance and its gradient for every tensor.
    pub fn loss_and_grad(
        &self,
        params: &ModelParams,
        x: ArrayView2<f64>,
        label: usize,
    ) -> Result<(f64, ModelParams), EmbedderError> {
        let (e, trace) = self.forward(params, x)?;
        let out = aam_loss(
            e.view(),
            label,
            self.class_weights(params),
            self.config.aam_scale,
            self.config.aam_margin,
        )?;
        let mut grads = self.backward(params, &trace, out.grad_embedding.view());
        let idx = self.att_index() + 5;
        grads.tensors[idx]
            .view2_mut()
            .assign(&out.grad_class_weights);
        Ok((out.loss, grads))
    }

    fn regime(
        &self,
        params: &ModelParams,
        x: ArrayView2<f64>,
        label: usize,
    ) -> Result<Vec<bool>, EmbedderError> {
        let (e, trace) = self.forward(params, x)?;
        let out = aam_loss(
            e.view(),
            label,
            self.class_weights(params),
            self.config.aam_scale,
            self.config.aam_margin,
        )?;
        let mut r = trace.regime();
        r.push(out.fallback);
        Ok(r)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheck {
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub checked: usize,
    /// Elements whose finite-difference probe crossed a ReLU or floor kink.
    pub skipped: usize,
}

/// Compares analytic gradients with central differences for every parameter.
/// Relative error is `|a - n| / max(|a|, |n|, 1e-5)`.
pub fn gradient_check(
    embedder: &Embedder,
    params: &ModelParams,
    x: ArrayView2<f64>,
    label: usize,
    step: f64,
) -> Result<GradCheck, EmbedderError> {
    let (_, grads) = embedder.loss_and_grad(params, x, label)?;
    let base_regime = embedder.regime(params, x, label)?;
    let mut probe = params.clone();
    let mut report = GradCheck {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        checked: 0,
        skipped: 0,
    };
    for ti in 0..params.tensors.len() {
        for k in 0..params.tensors[ti].data.len() {
            let orig = params.tensors[ti].data[k];
            probe.tensors[ti].data[k] = orig + step;
            let plus = embedder.loss(&probe, x, label)?;
            let plus_regime = embedder.regime(&probe, x, label)?;
            probe.tensors[ti].data[k] = orig - step;
            let minus = embedder.loss(&probe, x, label)?;
            let minus_regime = embedder.regime(&probe, x, label)?;
            probe.tensors[ti].data[k] = orig;
            if plus_regime != base_regime || minus_regime != base_regime {
                report.skipped += 1;
                continue;
            }
            let numeric = (plus - minus) / (2.0 * step);
            let analytic = grads.tensors[ti].data[k];
            let rel = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-5);
            report.checked += 1;
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = params.tensors[ti].name.clone();
            }
        }
    }
    Ok(report)
}

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

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: ModelParams,
    pub v: ModelParams,
}

impl AdamState {
    pub fn new(params: &ModelParams) -> Self {
        Self {
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }
}

/// Bias-corrected adaptive-moment update.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut AdamState,
    hyper: &AdamConfig,
) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hyper.beta1.powi(t);
    let c2 = 1.0 - hyper.beta2.powi(t);
    for (ti, p) in params.tensors.iter_mut().enumerate() {
        let g = &grads.tensors[ti].data;
        let m = &mut state.m.tensors[ti].data;
        let v = &mut state.v.tensors[ti].data;
        for k in 0..p.data.len() {
            m[k] = hyper.beta1 * m[k] + (1.0 - hyper.beta1) * g[k];
            v[k] = hyper.beta2 * v[k] + (1.0 - hyper.beta2) * g[k] * g[k];
            let m_hat = m[k] / c1;
            let v_hat = v[k] / c2;
            p.data[k] -= hyper.lr * m_hat / (v_hat.sqrt() + hyper.eps);
        }
    }
}

pub fn tiny_config() -> EmbedderConfig {
    EmbedderConfig {
        input_dim: 8,
        channels: 6,
        attention_dim: 4,
        embedding_dim: 8,
        n_classes: 3,
        ..EmbedderConfig::new(8, 3)
    }
}

pub fn random_input(frames: usize, dim: usize, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((frames, dim), |_| rng.sample::<f64, _>(StandardNormal))
}
