//! Locally trained predictors: linear regression, linear SVM and a
//! one-hidden-layer ReLU MLP, with analytic gradients and mini-batch SGD.
//!
//! Parameter layout:
//! - linear models: `[w_0, ..., w_{d-1}, b]`
//! - MLP: `W1` (hidden × input, row-major), `b1`, `W2` (classes × hidden,
//!   row-major), `b2`

use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::numkit::{project_box_in_place, BoxDomain, ParamVector, SimRng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearRegression,
    LinearSvm,
    Mlp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_dim: usize,
    pub num_classes: usize,
    pub hidden_dim: usize,
}

impl ModelSpec {
    pub fn linear_regression(input_dim: usize) -> Self {
        ModelSpec {
            kind: ModelKind::LinearRegression,
            input_dim,
            num_classes: 1,
            hidden_dim: 0,
        }
    }

    pub fn linear_svm(input_dim: usize) -> Self {
        ModelSpec {
            kind: ModelKind::LinearSvm,
            input_dim,
            num_classes: 2,
            hidden_dim: 0,
        }
    }

    pub fn mlp(input_dim: usize, hidden_dim: usize, num_classes: usize) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_dim,
            num_classes,
            hidden_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.input_dim == 0 {
            return bad("input_dim must be positive".into());
        }
        match self.kind {
            ModelKind::LinearRegression if self.num_classes != 1 => {
                bad(format!("linear regression needs num_classes = 1, got {}", self.num_classes))
            }
            ModelKind::LinearSvm if self.num_classes != 2 => {
                bad(format!("linear SVM needs num_classes = 2, got {}", self.num_classes))
            }
            ModelKind::Mlp if self.hidden_dim == 0 || self.num_classes < 2 => bad(format!(
                "MLP needs hidden_dim >= 1 and num_classes >= 2, got {} and {}",
                self.hidden_dim, self.num_classes
            )),
            _ => Ok(()),
        }
    }

    pub fn param_count(&self) -> usize {
        match self.kind {
            ModelKind::LinearRegression | ModelKind::LinearSvm => self.input_dim + 1,
            ModelKind::Mlp => {
                let (d, h, c) = (self.input_dim, self.hidden_dim, self.num_classes);
                d * h + h + h * c + c
            }
        }
    }

    pub fn is_classifier(&self) -> bool {
        self.kind != ModelKind::LinearRegression
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Labels {
    Classes(Vec<usize>),
    Targets(Vec<f64>),
}

impl Labels {
    pub fn len(&self) -> usize {
        match self {
            Labels::Classes(c) => c.len(),
            Labels::Targets(t) => t.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn classes(&self) -> Option<&[usize]> {
        match self {
            Labels::Classes(c) => Some(c),
            Labels::Targets(_) => None,
        }
    }

    pub fn targets(&self) -> Option<&[f64]> {
        match self {
            Labels::Targets(t) => Some(t),
            Labels::Classes(_) => None,
        }
    }
}

/// Row-major feature matrix with labels. Features lie in `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    features: Vec<f64>,
    dim: usize,
    labels: Labels,
    num_classes: usize,
}

impl Dataset {
    pub fn classification(
        features: Vec<f64>,
        dim: usize,
        labels: Vec<usize>,
        num_classes: usize,
    ) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("num_classes must be positive".into()));
        }
        if let Some(bad) = labels.iter().find(|&&l| l >= num_classes) {
            return Err(Error::InvalidArgument(format!(
                "label {bad} outside [0, {num_classes})"
            )));
        }
        Self::build(features, dim, Labels::Classes(labels), num_classes)
    }

    pub fn regression(features: Vec<f64>, dim: usize, targets: Vec<f64>) -> Result<Self> {
        if let Some(index) = targets.iter().position(|t| !t.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Self::build(features, dim, Labels::Targets(targets), 1)
    }

    fn build(features: Vec<f64>, dim: usize, labels: Labels, num_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidArgument("feature dimension must be positive".into()));
        }
        if labels.is_empty() {
            return Err(Error::Empty("dataset"));
        }
        check_dim(labels.len() * dim, features.len())?;
        if let Some(index) = features
            .iter()
            .position(|v| !v.is_finite() || *v < 0.0 || *v > 1.0)
        {
            return Err(Error::InvalidArgument(format!(
                "feature {} of row {} is {}, expected a value in [0, 1]",
                index % dim,
                index / dim,
                features[index]
            )));
        }
        Ok(Dataset {
            features,
            dim,
            labels,
            num_classes,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn labels(&self) -> &Labels {
        &self.labels
    }

    pub fn is_classification(&self) -> bool {
        matches!(self.labels, Labels::Classes(_))
    }

    /// Rows at `indices`, in that order. Fails on an empty selection.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let mut features = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            if i >= self.len() {
                return Err(Error::InvalidArgument(format!(
                    "row {i} out of range for dataset of {} rows",
                    self.len()
                )));
            }
            features.extend_from_slice(self.row(i));
        }
        let labels = match &self.labels {
            Labels::Classes(c) => Labels::Classes(indices.iter().map(|&i| c[i]).collect()),
            Labels::Targets(t) => Labels::Targets(indices.iter().map(|&i| t[i]).collect()),
        };
        Self::build(features, self.dim, labels, self.num_classes)
    }

    /// Concatenation of `parts` in order.
    pub fn concat(parts: &[&Dataset]) -> Result<Dataset> {
        let first = parts.first().ok_or(Error::Empty("dataset list"))?;
        let mut features = Vec::new();
        let mut labels = match first.labels {
            Labels::Classes(_) => Labels::Classes(Vec::new()),
            Labels::Targets(_) => Labels::Targets(Vec::new()),
        };
        for part in parts {
            check_dim(first.dim, part.dim)?;
            features.extend_from_slice(&part.features);
            match (&mut labels, &part.labels) {
                (Labels::Classes(acc), Labels::Classes(c)) => acc.extend_from_slice(c),
                (Labels::Targets(acc), Labels::Targets(t)) => acc.extend_from_slice(t),
                _ => {
                    return Err(Error::InvalidArgument(
                        "cannot mix classification and regression datasets".into(),
                    ))
                }
            }
        }
        let num_classes = parts.iter().map(|p| p.num_classes).max().unwrap_or(1);
        Self::build(features, first.dim, labels, num_classes)
    }

    /// Same features with new class labels.
    pub fn with_classes(&self, labels: Vec<usize>, num_classes: usize) -> Result<Dataset> {
        Dataset::classification(self.features.clone(), self.dim, labels, num_classes)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 1,
            lr: 0.1,
            batch: 16,
        }
    }
}

fn check_compat(spec: &ModelSpec, params: &ParamVector, data: &Dataset) -> Result<()> {
    check_dim(spec.param_count(), params.dim())?;
    check_dim(spec.input_dim, data.dim())?;
    match (spec.kind, data.labels()) {
        (ModelKind::LinearRegression, Labels::Targets(_)) => Ok(()),
        (ModelKind::LinearRegression, Labels::Classes(_)) => Err(Error::InvalidArgument(
            "linear regression needs real-valued targets".into(),
        )),
        (_, Labels::Targets(_)) => Err(Error::InvalidArgument(
            "classifier needs class labels".into(),
        )),
        (_, Labels::Classes(c)) => match c.iter().find(|&&l| l >= spec.num_classes) {
            Some(l) => Err(Error::InvalidArgument(format!(
                "label {l} outside the model's {} classes",
                spec.num_classes
            ))),
            None => Ok(()),
        },
    }
}

/// Variance of the regression targets, used to normalize the squared error.
/// Falls back to 1 for constant targets.
fn target_scale(data: &Dataset) -> f64 {
    match data.labels() {
        Labels::Targets(t) => {
            let n = t.len() as f64;
            let mean = t.iter().sum::<f64>() / n;
            let var = t.iter().map(|y| (y - mean) * (y - mean)).sum::<f64>() / n;
            if var > 0.0 {
                var
            } else {
                1.0
            }
        }
        Labels::Classes(_) => 1.0,
    }
}

pub fn init_params(spec: &ModelSpec, rng: &mut SimRng) -> Result<ParamVector> {
    spec.validate()?;
    match spec.kind {
        ModelKind::LinearRegression | ModelKind::LinearSvm => {
            Ok(ParamVector::zeros(spec.param_count()))
        }
        ModelKind::Mlp => {
            let (d, h, c) = (spec.input_dim, spec.hidden_dim, spec.num_classes);
            let mut p = Vec::with_capacity(spec.param_count());
            let b1 = 1.0 / (d as f64).sqrt();
            p.extend((0..d * h).map(|_| rng.uniform_range(-b1, b1)));
            p.extend(std::iter::repeat(0.0).take(h));
            let b2 = 1.0 / (h as f64).sqrt();
            p.extend((0..h * c).map(|_| rng.uniform_range(-b2, b2)));
            p.extend(std::iter::repeat(0.0).take(c));
            Ok(ParamVector::from_raw(p))
        }
    }
}

/// Mean per-example loss over `data`.
pub fn loss(spec: &ModelSpec, params: &ParamVector, data: &Dataset) -> Result<f64> {
    check_compat(spec, params, data)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    Ok(accumulate(spec, params.as_slice(), data, &rows, target_scale(data), None))
}

/// Analytic gradient of [`loss`].
pub fn loss_gradient(spec: &ModelSpec, params: &ParamVector, data: &Dataset) -> Result<ParamVector> {
    loss_and_gradient(spec, params, data).map(|(_, g)| g)
}

pub fn loss_and_gradient(
    spec: &ModelSpec,
    params: &ParamVector,
    data: &Dataset,
) -> Result<(f64, ParamVector)> {
    check_compat(spec, params, data)?;
    let rows: Vec<usize> = (0..data.len()).collect();
    let mut grad = vec![0.0; params.dim()];
    let value = accumulate(
        spec,
        params.as_slice(),
        data,
        &rows,
        target_scale(data),
        Some(&mut grad),
    );
    Ok((value, ParamVector::from_raw(grad)))
}

/// Mean loss over `rows`, optionally writing the mean gradient into `grad`.
fn accumulate(
    spec: &ModelSpec,
    params: &[f64],
    data: &Dataset,
    rows: &[usize],
    scale: f64,
    mut grad: Option<&mut Vec<f64>>,
) -> f64 {
    let n = rows.len() as f64;
    if let Some(g) = grad.as_deref_mut() {
        g.iter_mut().for_each(|v| *v = 0.0);
    }
    let d = spec.input_dim;
    let mut total = 0.0;
    match spec.kind {
        ModelKind::LinearRegression => {
            let targets = data.labels().targets().expect("checked");
            let (w, b) = params.split_at(d);
            for &i in rows {
                let x = data.row(i);
                let r = dot(w, x) + b[0] - targets[i];
                total += r * r;
                if let Some(g) = grad.as_deref_mut() {
                    let c = 2.0 * r / (n * scale);
                    axpy(&mut g[..d], c, x);
                    g[d] += c;
                }
            }
            total / (n * scale)
        }
        ModelKind::LinearSvm => {
            let classes = data.labels().classes().expect("checked");
            let (w, b) = params.split_at(d);
            for &i in rows {
                let x = data.row(i);
                let y = svm_sign(classes[i]);
                let margin = y * (dot(w, x) + b[0]);
                if margin < 1.0 {
                    total += 1.0 - margin;
                    if let Some(g) = grad.as_deref_mut() {
                        let c = -y / n;
                        axpy(&mut g[..d], c, x);
                        g[d] += c;
                    }
                }
            }
            total / n
        }
        ModelKind::Mlp => {
            let classes = data.labels().classes().expect("checked");
            let layout = MlpLayout::new(spec);
            let mut hidden = vec![0.0; spec.hidden_dim];
            let mut probs = vec![0.0; spec.num_classes];
            let mut dhidden = vec![0.0; spec.hidden_dim];
            for &i in rows {
                let x = data.row(i);
                layout.forward(params, x, &mut hidden, &mut probs);
                let label = classes[i];
                total += -probs[label].max(f64::MIN_POSITIVE).ln();
                if let Some(g) = grad.as_deref_mut() {
                    // dL/dlogits = probs - onehot
                    probs[label] -= 1.0;
                    layout.backward(params, x, &hidden, &probs, 1.0 / n, &mut dhidden, g);
                }
            }
            total / n
        }
    }
}

/// Class 1 is the positive SVM class; every other class is negative.
#[inline]
fn svm_sign(class: usize) -> f64 {
    if class == 1 {
        1.0
    } else {
        -1.0
    }
}

struct MlpLayout {
    d: usize,
    h: usize,
    c: usize,
}

impl MlpLayout {
    fn new(spec: &ModelSpec) -> Self {
        MlpLayout {
            d: spec.input_dim,
            h: spec.hidden_dim,
            c: spec.num_classes,
        }
    }

    fn split<'a>(&self, p: &'a [f64]) -> (&'a [f64], &'a [f64], &'a [f64], &'a [f64]) {
        let (w1, rest) = p.split_at(self.d * self.h);
        let (b1, rest) = rest.split_at(self.h);
        let (w2, b2) = rest.split_at(self.h * self.c);
        (w1, b1, w2, b2)
    }

    /// Fills `hidden` with ReLU activations and `probs` with softmax outputs.
    fn forward(&self, p: &[f64], x: &[f64], hidden: &mut [f64], probs: &mut [f64]) {
        let (w1, b1, w2, b2) = self.split(p);
        for (j, h) in hidden.iter_mut().enumerate() {
            *h = (dot(&w1[j * self.d..(j + 1) * self.d], x) + b1[j]).max(0.0);
        }
        for (k, z) in probs.iter_mut().enumerate() {
            *z = dot(&w2[k * self.h..(k + 1) * self.h], hidden) + b2[k];
        }
        softmax_in_place(probs);
    }

    #[allow(clippy::too_many_arguments)]
    fn backward(
        &self,
        p: &[f64],
        x: &[f64],
        hidden: &[f64],
        dlogits: &[f64],
        weight: f64,
        dhidden: &mut [f64],
        g: &mut [f64],
    ) {
        let (_, _, w2, _) = self.split(p);
        let (gw1, rest) = g.split_at_mut(self.d * self.h);
        let (gb1, rest) = rest.split_at_mut(self.h);
        let (gw2, gb2) = rest.split_at_mut(self.h * self.c);
        dhidden.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..self.c {
            let dk = dlogits[k] * weight;
            gb2[k] += dk;
            axpy(&mut gw2[k * self.h..(k + 1) * self.h], dk, hidden);
            axpy(dhidden, dlogits[k], &w2[k * self.h..(k + 1) * self.h]);
        }
        for j in 0..self.h {
            if hidden[j] > 0.0 {
                let dj = dhidden[j] * weight;
                gb1[j] += dj;
                axpy(&mut gw1[j * self.d..(j + 1) * self.d], dj, x);
            }
        }
    }
}

fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
fn axpy(y: &mut [f64], a: f64, x: &[f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

/// Mini-batch SGD from `start`, projecting into `domain` after every step.
pub fn local_train(
    spec: &ModelSpec,
    start: &ParamVector,
    data: &Dataset,
    cfg: &TrainConfig,
    domain: &BoxDomain,
    rng: &mut SimRng,
) -> Result<ParamVector> {
    check_compat(spec, start, data)?;
    check_dim(start.dim(), domain.dim())?;
    if cfg.batch == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    if !(cfg.lr >= 0.0 && cfg.lr.is_finite()) {
        return Err(Error::InvalidArgument(format!("learning rate {} is invalid", cfg.lr)));
    }
    let scale = target_scale(data);
    let mut params = start.clone();
    let mut grad = vec![0.0; params.dim()];
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..cfg.epochs {
        rng.shuffle(&mut order);
        for batch in order.chunks(cfg.batch) {
            accumulate(spec, params.as_slice(), data, batch, scale, Some(&mut grad));
            for (p, g) in params.as_mut_slice().iter_mut().zip(&grad) {
                *p -= cfg.lr * g;
            }
            project_box_in_place(&mut params, domain)?;
        }
    }
    if !params.is_finite() {
        return Err(Error::InvalidArgument(
            "local training diverged to a non-finite model".into(),
        ));
    }
    Ok(params)
}

/// Predictions for the rows of a row-major feature matrix.
///
/// Classifiers return the argmax class (ties to the lower id). The SVM
/// predicts class 1 when `f(x) >= 0`.
pub fn predict(spec: &ModelSpec, params: &ParamVector, features: &[f64]) -> Result<Labels> {
    check_dim(spec.param_count(), params.dim())?;
    let d = spec.input_dim;
    if features.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            found: features.len() % d,
        });
    }
    let p = params.as_slice();
    let rows = features.chunks(d);
    Ok(match spec.kind {
        ModelKind::LinearRegression => {
            let (w, b) = p.split_at(d);
            Labels::Targets(rows.map(|x| dot(w, x) + b[0]).collect())
        }
        ModelKind::LinearSvm => {
            let (w, b) = p.split_at(d);
            Labels::Classes(
                rows.map(|x| usize::from(dot(w, x) + b[0] >= 0.0))
                    .collect(),
            )
        }
        ModelKind::Mlp => {
            let layout = MlpLayout::new(spec);
            let mut hidden = vec![0.0; spec.hidden_dim];
            let mut probs = vec![0.0; spec.num_classes];
            Labels::Classes(
                rows.map(|x| {
                    layout.forward(p, x, &mut hidden, &mut probs);
                    argmax(&probs)
                })
                .collect(),
            )
        }
    })
}

pub(crate) fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate().skip(1) {
        if *v > values[best] {
            best = i;
        }
    }
    best
}
