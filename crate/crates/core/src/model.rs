//! The incremental classifier.
//!
//! A shared ReLU extractor feeds one head block per task. Head outputs are
//! concatenated in task order, so output column `j` always belongs to
//! `classes()[j]`. Heads are either affine or cosine-normalised with a single
//! learnable scale η. During the second training stage a learnable weight
//! scaling (LWS) vector multiplies every output column; it is dropped as soon
//! as the next task's head is added.
//!
//! All parameters live in one [`ParamSet`] laid out as
//! `[extractor…, η (cosine only), head₀…, head₁…, …, lws?]`. The LWS vector is
//! always last, which keeps every other parameter index stable.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{mlp_backward, xavier_uniform, Matrix, Mlp, MlpCache, Param, ParamHost, ParamSet};
use crate::rng::rng_for;

/// Initial value of the cosine-head scale.
pub const COSINE_SCALE_INIT: f64 = 10.0;
/// Norm floor for cosine normalisation.
pub const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeadKind {
    #[default]
    Linear,
    Cosine,
}

/// How class predictions are made at evaluation time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predictor {
    /// Argmax of the LWS-scaled logits when an LWS vector exists, plain logits otherwise.
    #[default]
    Scaled,
    /// Argmax of the unscaled logits.
    Plain,
    /// Nearest class mean in normalised feature space.
    Ncm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct HeadBlock {
    weight: usize,
    bias: Option<usize>,
    width: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IncrementalModel {
    extractor: Mlp,
    head_kind: HeadKind,
    params: ParamSet,
    scale: Option<usize>,
    heads: Vec<HeadBlock>,
    classes: Vec<usize>,
    lws: Option<usize>,
    class_means: Option<BTreeMap<usize, Vec<f64>>>,
}

struct CosineCache {
    normalized_features: Matrix,
    feature_norms: Vec<f64>,
    /// Column-normalised weights per head.
    normalized_weights: Vec<Matrix>,
    weight_norms: Vec<Vec<f64>>,
    cosines: Matrix,
}

/// Everything `backward` needs from a training forward pass.
pub struct ForwardCache {
    mlp: MlpCache,
    features: Matrix,
    cosine: Option<CosineCache>,
    logits: Matrix,
    scaled: bool,
}

impl ForwardCache {
    pub fn features(&self) -> &Matrix {
        &self.features
    }

    /// Unscaled logits.
    pub fn logits(&self) -> &Matrix {
        &self.logits
    }
}

/// Backprop through `u = v / max(‖v‖, eps)` for one vector.
fn normalize_backward(u: &[f64], norm: f64, du: &[f64], out: &mut [f64]) {
    if norm < NORM_EPS {
        for (o, g) in out.iter_mut().zip(du) {
            *o = g / NORM_EPS;
        }
        return;
    }
    let dot: f64 = u.iter().zip(du).map(|(a, b)| a * b).sum();
    for ((o, g), uu) in out.iter_mut().zip(du).zip(u) {
        *o = (g - uu * dot) / norm;
    }
}

impl IncrementalModel {
    /// A model with an extractor and no heads yet.
    pub fn new(extractor_arch: Vec<usize>, head_kind: HeadKind, seed: u64) -> Result<Self> {
        let extractor = Mlp::new(extractor_arch)?;
        let mut params = ParamSet::new();
        extractor.init_params(&mut params, &mut rng_for(seed, &[]));
        let scale = (head_kind == HeadKind::Cosine)
            .then(|| params.push(Param::new("cosine.scale", Matrix::filled(1, 1, COSINE_SCALE_INIT))));
        Ok(Self {
            extractor,
            head_kind,
            params,
            scale,
            heads: Vec::new(),
            classes: Vec::new(),
            lws: None,
            class_means: None,
        })
    }

    pub fn head_kind(&self) -> HeadKind {
        self.head_kind
    }

    pub fn extractor(&self) -> &Mlp {
        &self.extractor
    }

    pub fn input_dim(&self) -> usize {
        self.extractor.input_dim()
    }

    pub fn feature_dim(&self) -> usize {
        self.extractor.output_dim()
    }

    pub fn num_tasks(&self) -> usize {
        self.heads.len()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    /// Class id of every output column.
    pub fn classes(&self) -> &[usize] {
        &self.classes
    }

    pub fn head_widths(&self) -> Vec<usize> {
        self.heads.iter().map(|h| h.width).collect()
    }

    pub fn column_of(&self, class: usize) -> Option<usize> {
        self.classes.iter().position(|&c| c == class)
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn lws(&self) -> Option<&[f64]> {
        self.lws.map(|i| self.params.param(i).value.data())
    }

    pub fn cosine_scale(&self) -> Option<f64> {
        self.scale.map(|i| self.params.param(i).value.get(0, 0))
    }

    /// Parameter indices of the extractor and the cosine scale.
    pub fn shared_param_indices(&self) -> Vec<usize> {
        let mut v: Vec<usize> = (0..self.extractor.num_params()).collect();
        v.extend(self.scale);
        v
    }

    /// Parameter indices owned by head `t`.
    pub fn head_param_indices(&self, t: usize) -> Vec<usize> {
        self.heads
            .get(t)
            .map(|h| std::iter::once(h.weight).chain(h.bias).collect())
            .unwrap_or_default()
    }

    /// Mutable access for tests and tooling. Layout must not be changed.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    /// Appends a freshly initialised head for `classes`, drops any LWS vector
    /// and marks every parameter trainable.
    pub fn add_task_head(&mut self, classes: &[usize], seed: u64) -> Result<()> {
        if classes.is_empty() {
            return Err(Error::Parameter("a task head needs at least one class".into()));
        }
        if let Some(c) = classes.iter().find(|c| self.classes.contains(c)) {
            return Err(Error::Contract(format!("class {c} already has a head")));
        }
        self.drop_lws();
        self.params.iter_mut().for_each(|p| p.trainable = true);
        let t = self.heads.len();
        let d = self.feature_dim();
        let width = classes.len();
        let mut rng = rng_for(seed, &[]);
        let weight = self
            .params
            .push(Param::new(format!("head.{t}.weight"), xavier_uniform(d, width, &mut rng)));
        let bias = (self.head_kind == HeadKind::Linear)
            .then(|| self.params.push(Param::new(format!("head.{t}.bias"), Matrix::zeros(1, width))));
        self.heads.push(HeadBlock { weight, bias, width });
        self.classes.extend_from_slice(classes);
        self.class_means = None;
        Ok(())
    }

    fn drop_lws(&mut self) {
        if let Some(i) = self.lws.take() {
            debug_assert_eq!(i, self.params.len() - 1);
            self.params.pop();
        }
    }

    /// Stage-2 setup: freezes the extractor, the cosine scale and all but the
    /// newest head, and attaches a trainable all-ones LWS vector over every
    /// output column.
    pub fn freeze_for_stage2(&mut self) -> Result<()> {
        if self.heads.is_empty() {
            return Err(Error::State("cannot freeze a model without heads".into()));
        }
        self.drop_lws();
        let current = self.head_param_indices(self.heads.len() - 1);
        for (i, p) in self.params.iter_mut().enumerate() {
            p.trainable = current.contains(&i);
        }
        let lws = self
            .params
            .push(Param::new("lws", Matrix::filled(1, self.num_classes(), 1.0)));
        self.lws = Some(lws);
        Ok(())
    }

    pub fn features(&self, x: &Matrix) -> Result<Matrix> {
        self.extractor.features(x, &self.params)
    }

    fn heads_forward(&self, features: &Matrix) -> Result<(Matrix, Option<CosineCache>)> {
        if self.heads.is_empty() {
            return Err(Error::State("model has no heads yet".into()));
        }
        match self.head_kind {
            HeadKind::Linear => {
                let blocks = self
                    .heads
                    .iter()
                    .map(|h| {
                        let mut z = features.matmul(&self.params.param(h.weight).value)?;
                        z.add_row_broadcast(&self.params.param(h.bias.expect("linear head")).value)?;
                        Ok(z)
                    })
                    .collect::<Result<Vec<_>>>()?;
                Ok((Matrix::hconcat(&blocks)?, None))
            }
            HeadKind::Cosine => {
                let feature_norms = features.row_norms();
                let normalized_features = features.normalized_rows(NORM_EPS);
                let mut normalized_weights = Vec::with_capacity(self.heads.len());
                let mut weight_norms = Vec::with_capacity(self.heads.len());
                for h in &self.heads {
                    let wt = self.params.param(h.weight).value.transpose();
                    weight_norms.push(wt.row_norms());
                    normalized_weights.push(wt.normalized_rows(NORM_EPS).transpose());
                }
                let blocks = normalized_weights
                    .iter()
                    .map(|w| normalized_features.matmul(w))
                    .collect::<Result<Vec<_>>>()?;
                let cosines = Matrix::hconcat(&blocks)?;
                let eta = self.cosine_scale().expect("cosine head has a scale");
                let logits = cosines.map(|c| eta * c);
                Ok((
                    logits,
                    Some(CosineCache {
                        normalized_features,
                        feature_norms,
                        normalized_weights,
                        weight_norms,
                        cosines,
                    }),
                ))
            }
        }
    }

    fn apply_lws(&self, logits: &mut Matrix) -> Result<()> {
        let w = self
            .lws()
            .ok_or_else(|| Error::State("no LWS vector outside stage 2".into()))?;
        for r in 0..logits.rows() {
            for (v, s) in logits.row_mut(r).iter_mut().zip(w) {
                *v *= s;
            }
        }
        Ok(())
    }

    /// Concatenated head outputs, `batch × C_seen`.
    pub fn forward_logits(&self, x: &Matrix) -> Result<Matrix> {
        let f = self.features(x)?;
        Ok(self.heads_forward(&f)?.0)
    }

    /// Logits multiplied column-wise by the LWS vector.
    pub fn forward_scaled(&self, x: &Matrix) -> Result<Matrix> {
        let mut z = self.forward_logits(x)?;
        self.apply_lws(&mut z)?;
        Ok(z)
    }

    /// Forward pass that keeps intermediates. Returns the (optionally scaled)
    /// outputs.
    pub fn forward_train(&self, x: &Matrix, scaled: bool) -> Result<(Matrix, ForwardCache)> {
        let (features, mlp) = self.extractor.forward(x, &self.params)?;
        let (logits, cosine) = self.heads_forward(&features)?;
        let mut out = logits.clone();
        if scaled {
            self.apply_lws(&mut out)?;
        }
        Ok((
            out,
            ForwardCache {
                mlp,
                features,
                cosine,
                logits,
                scaled,
            },
        ))
    }

    /// Accumulates parameter gradients for upstream gradient `grad_out` on the
    /// outputs of [`forward_train`](Self::forward_train), plus an optional
    /// direct gradient on the features. Frozen parameters receive nothing.
    pub fn backward(&mut self, cache: &ForwardCache, grad_out: &Matrix, grad_features: Option<&Matrix>) -> Result<()> {
        if grad_out.shape() != cache.logits.shape() {
            return Err(Error::Contract(format!(
                "output gradient {:?} vs cached logits {:?}",
                grad_out.shape(),
                cache.logits.shape()
            )));
        }
        let mut g = grad_out.clone();
        if cache.scaled {
            let lws_idx = self
                .lws
                .ok_or_else(|| Error::State("cache is scaled but the LWS vector is gone".into()))?;
            let w = self.params.param(lws_idx).value.data().to_vec();
            let p = self.params.param_mut(lws_idx);
            if p.trainable {
                for r in 0..g.rows() {
                    for (j, acc) in p.grad.data_mut().iter_mut().enumerate() {
                        *acc += g.get(r, j) * cache.logits.get(r, j);
                    }
                }
            }
            for r in 0..g.rows() {
                for (v, s) in g.row_mut(r).iter_mut().zip(&w) {
                    *v *= s;
                }
            }
        }

        let d = self.feature_dim();
        let mut grad_f = Matrix::zeros(g.rows(), d);
        match (&cache.cosine, self.head_kind) {
            (None, HeadKind::Linear) => {
                let mut offset = 0;
                for h in self.heads.clone() {
                    let gt = g.columns(offset, offset + h.width)?;
                    offset += h.width;
                    let bias = h.bias.expect("linear head");
                    if self.params.param(h.weight).trainable {
                        let gw = cache.features.transpose_matmul(&gt)?;
                        self.params.param_mut(h.weight).grad.add_assign(&gw)?;
                    }
                    if self.params.param(bias).trainable {
                        self.params.param_mut(bias).grad.add_assign(&gt.sum_rows())?;
                    }
                    grad_f.add_assign(&gt.matmul_transpose(&self.params.param(h.weight).value)?)?;
                }
            }
            (Some(cc), HeadKind::Cosine) => {
                let scale_idx = self.scale.expect("cosine head has a scale");
                let eta = self.params.param(scale_idx).value.get(0, 0);
                if self.params.param(scale_idx).trainable {
                    let ds: f64 = g.data().iter().zip(cc.cosines.data()).map(|(a, b)| a * b).sum();
                    self.params.param_mut(scale_idx).grad.data_mut()[0] += ds;
                }
                let dcos = g.map(|v| eta * v);
                let mut grad_fn = Matrix::zeros(g.rows(), d);
                let mut offset = 0;
                for (t, h) in self.heads.clone().into_iter().enumerate() {
                    let gt = dcos.columns(offset, offset + h.width)?;
                    offset += h.width;
                    let wn = &cc.normalized_weights[t];
                    grad_fn.add_assign(&gt.matmul_transpose(wn)?)?;
                    if self.params.param(h.weight).trainable {
                        // d×w gradient on normalised columns, then through the column norm
                        let gwn = cc.normalized_features.transpose_matmul(&gt)?.transpose();
                        let wnt = wn.transpose();
                        let mut gw = Matrix::zeros(h.width, d);
                        for c in 0..h.width {
                            normalize_backward(wnt.row(c), cc.weight_norms[t][c], gwn.row(c), gw.row_mut(c));
                        }
                        self.params.param_mut(h.weight).grad.add_assign(&gw.transpose())?;
                    }
                }
                for r in 0..g.rows() {
                    normalize_backward(
                        cc.normalized_features.row(r),
                        cc.feature_norms[r],
                        grad_fn.row(r),
                        grad_f.row_mut(r),
                    );
                }
            }
            _ => return Err(Error::Contract("cache does not match the head kind".into())),
        }
        if let Some(extra) = grad_features {
            grad_f.add_assign(extra)?;
        }
        let extractor_trainable = (0..self.extractor.num_params()).any(|i| self.params.param(i).trainable);
        if extractor_trainable {
            mlp_backward(&grad_f, &cache.mlp, &mut self.params)?;
        }
        Ok(())
    }

    /// Stores per-class mean features (normalised, averaged, renormalised)
    /// computed from `(class, inputs)` pairs.
    pub fn set_class_means_from(&mut self, per_class_inputs: &BTreeMap<usize, Matrix>) -> Result<()> {
        let mut means = BTreeMap::new();
        for (&c, x) in per_class_inputs {
            if x.rows() == 0 {
                return Err(Error::State(format!("class {c} has no examples for its mean")));
            }
            let f = self.features(x)?.normalized_rows(NORM_EPS);
            let mut mean = f.sum_rows();
            mean.scale(1.0 / f.rows() as f64);
            let mean = mean.normalized_rows(NORM_EPS);
            means.insert(c, mean.into_data());
        }
        self.class_means = Some(means);
        Ok(())
    }

    pub fn class_means(&self) -> Option<&BTreeMap<usize, Vec<f64>>> {
        self.class_means.as_ref()
    }

    /// Nearest class mean over every class with a head. Ties go to the lower class id.
    pub fn ncm_predict(&self, x: &Matrix) -> Result<Vec<usize>> {
        let means = self
            .class_means
            .as_ref()
            .ok_or_else(|| Error::State("class means have not been computed".into()))?;
        let mut ordered: Vec<usize> = self.classes.clone();
        ordered.sort_unstable();
        if let Some(c) = ordered.iter().find(|c| !means.contains_key(c)) {
            return Err(Error::State(format!("no class mean for class {c}")));
        }
        let f = self.features(x)?.normalized_rows(NORM_EPS);
        Ok(f.iter_rows()
            .map(|row| {
                let mut best = (ordered[0], f64::INFINITY);
                for &c in &ordered {
                    let dist: f64 = row.iter().zip(&means[&c]).map(|(a, b)| (a - b) * (a - b)).sum();
                    if dist < best.1 {
                        best = (c, dist);
                    }
                }
                best.0
            })
            .collect())
    }

    /// Predicted class ids.
    pub fn predict(&self, x: &Matrix, predictor: Predictor) -> Result<Vec<usize>> {
        let columns = match predictor {
            Predictor::Ncm => return self.ncm_predict(x),
            Predictor::Scaled if self.lws.is_some() => self.forward_scaled(x)?.argmax_rows(),
            Predictor::Scaled | Predictor::Plain => self.forward_logits(x)?.argmax_rows(),
        };
        Ok(columns.into_iter().map(|j| self.classes[j]).collect())
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = CheckpointFile {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        let text = serde_json::to_string(&file)?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_checkpoint_json(&text)
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        let file: CheckpointFile = serde_json::from_str(text)?;
        if file.format != CHECKPOINT_FORMAT || file.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                file.format, file.version
            )));
        }
        let mut model = file.model;
        model.params.restore_buffers();
        model.check_layout()?;
        Ok(model)
    }

    fn check_layout(&self) -> Result<()> {
        let d = self.feature_dim();
        for (t, h) in self.heads.iter().enumerate() {
            if self.params.get(h.weight)?.value.shape() != (d, h.width) {
                return Err(Error::Format(format!("head {t} weight has the wrong shape")));
            }
            if let Some(b) = h.bias {
                if self.params.get(b)?.value.shape() != (1, h.width) {
                    return Err(Error::Format(format!("head {t} bias has the wrong shape")));
                }
            }
        }
        if self.heads.iter().map(|h| h.width).sum::<usize>() != self.classes.len() {
            return Err(Error::Format("head widths do not cover the class list".into()));
        }
        if let Some(i) = self.lws {
            if i + 1 != self.params.len() || self.params.get(i)?.value.shape() != (1, self.classes.len()) {
                return Err(Error::Format("LWS vector is misplaced or has the wrong length".into()));
            }
        }
        Ok(())
    }
}

const CHECKPOINT_FORMAT: &str = "ltcil-model";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    format: String,
    version: u32,
    model: IncrementalModel,
}

impl ParamHost for IncrementalModel {
    fn num_params(&self) -> usize {
        self.params.num_params()
    }

    fn param(&self, i: usize) -> &Param {
        self.params.param(i)
    }

    fn param_mut(&mut self, i: usize) -> &mut Param {
        self.params.param_mut(i)
    }
}
