//! Multi-head feed-forward classifier with analytic gradients.
//!
//! A shared trunk of dense layers feeds one linear head per task. Parameters
//! live in a single [`ParamVector`] laid out as
//! `trunk.{i}.weight`, `trunk.{i}.bias` for every hidden layer followed by
//! `head.{task}.weight`, `head.{task}.bias` for every head in spec order.
//! Weights are stored `(fan_out, fan_in)` row-major.

use std::ops::Range;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{Layout, LayoutEntry, Matrix, ParamVector, RngStream};

pub type TaskId = u32;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `h`.
    fn derivative(self, z: f64, h: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - h * h,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadSpec {
    pub task: TaskId,
    pub classes: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub input_dim: usize,
    #[serde(default)]
    pub hidden_dims: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
    pub heads: Vec<HeadSpec>,
}

impl MlpSpec {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidSpec("input_dim must be >= 1".into()));
        }
        if let Some(i) = self.hidden_dims.iter().position(|&d| d == 0) {
            return Err(Error::InvalidSpec(format!("hidden_dims[{i}] must be >= 1")));
        }
        for (i, h) in self.heads.iter().enumerate() {
            if h.classes == 0 {
                return Err(Error::InvalidSpec(format!("head for task {} has no classes", h.task)));
            }
            if self.heads[..i].iter().any(|o| o.task == h.task) {
                return Err(Error::InvalidSpec(format!("duplicate head for task {}", h.task)));
            }
        }
        Ok(())
    }

    pub fn head(&self, task: TaskId) -> Option<&HeadSpec> {
        self.heads.iter().find(|h| h.task == task)
    }

    /// Width of the representation fed to every head.
    pub fn feature_dim(&self) -> usize {
        self.hidden_dims.last().copied().unwrap_or(self.input_dim)
    }

    pub fn layout(&self) -> Layout {
        let mut entries = Vec::new();
        let mut fan_in = self.input_dim;
        for (i, &d) in self.hidden_dims.iter().enumerate() {
            entries.push(LayoutEntry::new(format!("trunk.{i}.weight"), vec![d, fan_in]));
            entries.push(LayoutEntry::new(format!("trunk.{i}.bias"), vec![d]));
            fan_in = d;
        }
        for h in &self.heads {
            entries.push(LayoutEntry::new(format!("head.{}.weight", h.task), vec![h.classes, fan_in]));
            entries.push(LayoutEntry::new(format!("head.{}.bias", h.task), vec![h.classes]));
        }
        Layout::new(entries)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitScheme {
    #[default]
    UniformGlorot,
}

/// Offsets of one dense layer inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
struct Dense {
    w: usize,
    b: usize,
    fan_in: usize,
    fan_out: usize,
}

impl Dense {
    fn end(&self) -> usize {
        self.b + self.fan_out
    }

    /// `out[n] = W x[n] + b` for every row of `x`.
    fn apply(&self, params: &[f64], x: &Matrix) -> Matrix {
        let w = &params[self.w..self.b];
        let b = &params[self.b..self.end()];
        let mut out = Matrix::zeros(x.rows(), self.fan_out);
        let data = out.data_mut();
        for n in 0..x.rows() {
            let row = x.row(n);
            for o in 0..self.fan_out {
                let wr = &w[o * self.fan_in..(o + 1) * self.fan_in];
                data[n * self.fan_out + o] = b[o] + crate::numcore::dot(wr, row);
            }
        }
        out
    }

    /// Accumulates parameter gradients for upstream `delta` and returns the
    /// gradient with respect to the layer input.
    fn backward(&self, params: &[f64], x: &Matrix, delta: &Matrix, grad: &mut [f64]) -> Matrix {
        let w = &params[self.w..self.b];
        let mut dx = Matrix::zeros(x.rows(), self.fan_in);
        for n in 0..x.rows() {
            let row = x.row(n);
            let d = delta.row(n);
            for o in 0..self.fan_out {
                let g = d[o];
                if g == 0.0 {
                    continue;
                }
                grad[self.b + o] += g;
                let gw = &mut grad[self.w + o * self.fan_in..self.w + (o + 1) * self.fan_in];
                for (gi, xi) in gw.iter_mut().zip(row) {
                    *gi += g * xi;
                }
            }
            let dxr = &mut dx.data_mut()[n * self.fan_in..(n + 1) * self.fan_in];
            for o in 0..self.fan_out {
                let g = d[o];
                if g == 0.0 {
                    continue;
                }
                for (dxi, wi) in dxr.iter_mut().zip(&w[o * self.fan_in..(o + 1) * self.fan_in]) {
                    *dxi += g * wi;
                }
            }
        }
        dx
    }
}

/// Labeled examples: one row of `inputs` per entry of `labels`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Matrix,
    pub labels: Vec<usize>,
}

impl Dataset {
    pub fn new(inputs: Matrix, labels: Vec<usize>) -> Result<Self> {
        if inputs.rows() != labels.len() {
            return Err(Error::Shape(format!("{} input rows but {} labels", inputs.rows(), labels.len())));
        }
        Ok(Self { inputs, labels })
    }

    pub fn empty(dim: usize) -> Self {
        Self { inputs: Matrix::zeros(0, dim), labels: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.inputs.cols()
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self { inputs: self.inputs.select_rows(indices), labels: indices.iter().map(|&i| self.labels[i]).collect() }
    }
}

/// Examples of a single task, borrowed from a [`Dataset`].
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub inputs: &'a Matrix,
    pub labels: &'a [usize],
    pub task: TaskId,
}

impl<'a> Batch<'a> {
    pub fn new(data: &'a Dataset, task: TaskId) -> Self {
        Self { inputs: &data.inputs, labels: &data.labels, task }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Logits plus the activations cached for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardPass {
    pub logits: Matrix,
    /// Pre-activations of every hidden layer.
    pub pre_activations: Vec<Matrix>,
    /// Outputs of every hidden layer.
    pub activations: Vec<Matrix>,
}

#[derive(Debug, Clone)]
pub struct ModelState {
    spec: MlpSpec,
    params: ParamVector,
    trunk: Vec<Dense>,
    heads: Vec<(TaskId, Dense)>,
}

impl PartialEq for ModelState {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec && self.params == other.params
    }
}

impl ModelState {
    /// Builds a model from explicit parameters; the layout must match `spec`.
    pub fn from_params(spec: MlpSpec, params: ParamVector) -> Result<Self> {
        spec.validate()?;
        let layout = spec.layout();
        if *params.layout() != layout {
            return Err(Error::Layout("parameters do not match the model spec".into()));
        }
        let mut offset = 0;
        let mut dense = |fan_in: usize, fan_out: usize| {
            let d = Dense { w: offset, b: offset + fan_in * fan_out, fan_in, fan_out };
            offset = d.end();
            d
        };
        let mut fan_in = spec.input_dim;
        let mut trunk = Vec::with_capacity(spec.hidden_dims.len());
        for &h in &spec.hidden_dims {
            trunk.push(dense(fan_in, h));
            fan_in = h;
        }
        let heads = spec.heads.iter().map(|h| (h.task, dense(fan_in, h.classes))).collect();
        Ok(Self { spec, params, trunk, heads })
    }

    pub fn zeros(spec: MlpSpec) -> Result<Self> {
        let layout = Arc::new(spec.layout());
        Self::from_params(spec, ParamVector::zeros(layout))
    }

    /// Glorot-uniform weights, zero biases. Layers are drawn in layout order.
    pub fn init(spec: MlpSpec, rng: &mut RngStream, scheme: InitScheme) -> Result<Self> {
        let mut state = Self::zeros(spec)?;
        let InitScheme::UniformGlorot = scheme;
        let layers: Vec<Dense> = state.trunk.iter().copied().chain(state.heads.iter().map(|(_, d)| *d)).collect();
        for d in layers {
            let bound = (6.0 / (d.fan_in + d.fan_out) as f64).sqrt();
            for v in &mut state.params.values[d.w..d.b] {
                *v = rng.uniform_in(-bound, bound);
            }
        }
        Ok(state)
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &ParamVector {
        &self.params
    }

    pub fn set_params(&mut self, params: ParamVector) -> Result<()> {
        self.params.check_layout(&params)?;
        self.params = params;
        Ok(())
    }

    /// Applies `params -= lr * grad`.
    pub fn sgd_step(&mut self, lr: f64, grad: &ParamVector) -> Result<()> {
        self.params.check_layout(grad)?;
        self.params.axpy(-lr, grad);
        Ok(())
    }

    /// Range of the shared trunk inside the flat vector.
    pub fn trunk_span(&self) -> Range<usize> {
        0..self.trunk.last().map_or(0, Dense::end)
    }

    pub fn head_span(&self, task: TaskId) -> Result<Range<usize>> {
        let d = self.head_layer(task)?;
        Ok(d.w..d.end())
    }

    pub fn has_head(&self, task: TaskId) -> bool {
        self.heads.iter().any(|(t, _)| *t == task)
    }

    fn head_layer(&self, task: TaskId) -> Result<Dense> {
        self.heads.iter().find(|(t, _)| *t == task).map(|(_, d)| *d).ok_or(Error::MissingHead(task))
    }

    fn check_batch(&self, batch: &Batch<'_>) -> Result<Dense> {
        let head = self.head_layer(batch.task)?;
        if batch.inputs.cols() != self.spec.input_dim {
            return Err(Error::Shape(format!(
                "input has {} features, model expects {}",
                batch.inputs.cols(),
                self.spec.input_dim
            )));
        }
        if batch.inputs.rows() != batch.labels.len() {
            return Err(Error::Shape("inputs and labels differ in length".into()));
        }
        Ok(head)
    }

    fn forward_with(&self, params: &[f64], inputs: &Matrix, head: Dense) -> ForwardPass {
        let mut pre_activations = Vec::with_capacity(self.trunk.len());
        let mut activations: Vec<Matrix> = Vec::with_capacity(self.trunk.len());
        for layer in &self.trunk {
            let x = activations.last().unwrap_or(inputs);
            let z = layer.apply(params, x);
            let mut h = z.clone();
            for v in h.data_mut() {
                *v = self.spec.activation.apply(*v);
            }
            pre_activations.push(z);
            activations.push(h);
        }
        let logits = head.apply(params, activations.last().unwrap_or(inputs));
        ForwardPass { logits, pre_activations, activations }
    }

    pub fn forward(&self, batch: &Batch<'_>) -> Result<ForwardPass> {
        let head = self.check_batch(batch)?;
        Ok(self.forward_with(&self.params.values, batch.inputs, head))
    }

    /// Mean cross-entropy and, when requested, its gradient over all params.
    fn evaluate(&self, params: &[f64], batch: &Batch<'_>, want_grad: bool) -> Result<(f64, Option<Vec<f64>>)> {
        let head = self.check_batch(batch)?;
        if batch.is_empty() {
            return Err(Error::EmptyData(format!("batch for task {}", batch.task)));
        }
        if let Some(&label) = batch.labels.iter().find(|&&l| l >= head.fan_out) {
            return Err(Error::LabelOutOfRange { task: batch.task, label, classes: head.fan_out });
        }
        let pass = self.forward_with(params, batch.inputs, head);
        let n = batch.len();
        let k = head.fan_out;
        let scale = 1.0 / n as f64;
        let mut loss = 0.0;
        let mut delta = if want_grad { Some(Matrix::zeros(n, k)) } else { None };
        for (i, &label) in batch.labels.iter().enumerate() {
            let z = pass.logits.row(i);
            let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let sum: f64 = z.iter().map(|v| (v - m).exp()).sum();
            let lse = m + sum.ln();
            loss += lse - z[label];
            if let Some(delta) = delta.as_mut() {
                let row = &mut delta.data_mut()[i * k..(i + 1) * k];
                for (c, d) in row.iter_mut().enumerate() {
                    *d = (z[c] - lse).exp() * scale;
                }
                row[label] -= scale;
            }
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("task {}", batch.task)));
        }
        let Some(mut delta) = delta else {
            return Ok((loss, None));
        };

        let mut grad = vec![0.0; params.len()];
        let top = pass.activations.last().unwrap_or(batch.inputs);
        let mut upstream = head.backward(params, top, &delta, &mut grad);
        for l in (0..self.trunk.len()).rev() {
            let z = &pass.pre_activations[l];
            let h = &pass.activations[l];
            delta = upstream;
            for ((d, &zv), &hv) in delta.data_mut().iter_mut().zip(z.data()).zip(h.data()) {
                *d *= self.spec.activation.derivative(zv, hv);
            }
            let x = if l == 0 { batch.inputs } else { &pass.activations[l - 1] };
            upstream = self.trunk[l].backward(params, x, &delta, &mut grad);
        }
        Ok((loss, Some(grad)))
    }

    /// Mean cross-entropy over the batch and its gradient. Heads other than
    /// the batch's task receive an exactly zero gradient.
    pub fn loss_and_grad(&self, batch: &Batch<'_>) -> Result<(f64, ParamVector)> {
        self.loss_and_grad_at(&self.params, batch)
    }

    pub fn loss(&self, batch: &Batch<'_>) -> Result<f64> {
        Ok(self.evaluate(&self.params.values, batch, false)?.0)
    }

    /// Loss and gradient with the parameters temporarily replaced by `w`.
    pub fn loss_and_grad_at(&self, w: &ParamVector, batch: &Batch<'_>) -> Result<(f64, ParamVector)> {
        self.params.check_layout(w)?;
        let (loss, grad) = self.evaluate(&w.values, batch, true)?;
        let grad = grad.expect("gradient requested");
        Ok((loss, ParamVector::new(grad, w.layout_arc().clone())?))
    }

    /// Mean loss of `task` on `data` evaluated at `w`; `self` is untouched.
    pub fn loss_at(&self, w: &ParamVector, data: &Dataset, task: TaskId) -> Result<f64> {
        self.params.check_layout(w)?;
        Ok(self.evaluate(&w.values, &Batch::new(data, task), false)?.0)
    }

    /// Class predictions, ties broken toward the lowest class index.
    pub fn predict(&self, data: &Dataset, task: TaskId) -> Result<Vec<usize>> {
        let pass = self.forward(&Batch::new(data, task))?;
        Ok((0..pass.logits.rows())
            .map(|i| {
                let row = pass.logits.row(i);
                let mut best = 0;
                for (c, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = c;
                    }
                }
                best
            })
            .collect())
    }

    pub fn accuracy(&self, data: &Dataset, task: TaskId) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyData(format!("accuracy on task {task}")));
        }
        let predictions = self.predict(data, task)?;
        let correct = predictions.iter().zip(&data.labels).filter(|(p, l)| p == l).count();
        Ok(correct as f64 / data.len() as f64)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(hidden: Vec<usize>, activation: Activation) -> MlpSpec {
        MlpSpec {
            input_dim: 2,
            hidden_dims: hidden,
            activation,
            heads: vec![HeadSpec { task: 0, classes: 2 }, HeadSpec { task: 1, classes: 3 }],
        }
    }

    fn data(rows: &[[f64; 2]], labels: &[usize]) -> Dataset {
        let rows: Vec<Vec<f64>> = rows.iter().map(|r| r.to_vec()).collect();
        Dataset::new(Matrix::from_rows(&rows).unwrap(), labels.to_vec()).unwrap()
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let s = spec(vec![4, 3], Activation::Relu);
        let a = ModelState::init(s.clone(), &mut RngStream::new(9), InitScheme::UniformGlorot).unwrap();
        let b = ModelState::init(s.clone(), &mut RngStream::new(9), InitScheme::UniformGlorot).unwrap();
        assert_eq!(a, b);
        let layout = s.layout();
        for (entry, (off, len)) in layout.entries.iter().zip(layout.spans()) {
            let block = &a.params().values[off..off + len];
            if entry.name.ends_with("bias") {
                assert!(block.iter().all(|&v| v == 0.0));
            } else {
                let bound = (6.0 / (entry.shape[0] + entry.shape[1]) as f64).sqrt();
                assert!(block.iter().all(|v| v.abs() <= bound));
            }
        }
    }

    #[test]
    fn zero_model_gives_uniform_softmax() {
        let m = ModelState::zeros(spec(vec![4], Activation::Relu)).unwrap();
        let d = data(&[[1.0, -2.0], [0.5, 0.5]], &[0, 2]);
        let pass = m.forward(&Batch::new(&d, 1)).unwrap();
        assert!(pass.logits.data().iter().all(|&v| v == 0.0));
        let loss = m.loss(&Batch::new(&d, 1)).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn identity_linear_head() {
        let s = MlpSpec {
            input_dim: 2,
            hidden_dims: vec![],
            activation: Activation::Relu,
            heads: vec![HeadSpec { task: 0, classes: 2 }],
        };
        let p = ParamVector::new(vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0], Arc::new(s.layout())).unwrap();
        let m = ModelState::from_params(s, p).unwrap();
        let d = data(&[[1.0, 2.0]], &[0]);
        assert_eq!(m.forward(&Batch::new(&d, 0)).unwrap().logits.data(), &[1.0, 2.0]);
    }

    #[test]
    fn shape_and_head_errors() {
        let m = ModelState::zeros(spec(vec![], Activation::Relu)).unwrap();
        let bad = Dataset::new(Matrix::zeros(1, 3), vec![0]).unwrap();
        assert!(matches!(m.forward(&Batch::new(&bad, 0)), Err(Error::Shape(_))));
        let d = data(&[[1.0, 2.0]], &[0]);
        assert!(matches!(m.forward(&Batch::new(&d, 7)), Err(Error::MissingHead(7))));
        let wrong = data(&[[1.0, 2.0]], &[2]);
        assert!(matches!(m.loss(&Batch::new(&wrong, 0)), Err(Error::LabelOutOfRange { .. })));
    }

    #[test]
    fn saturated_softmax_loss_is_tiny() {
        let s = MlpSpec {
            input_dim: 1,
            hidden_dims: vec![],
            activation: Activation::Relu,
            heads: vec![HeadSpec { task: 0, classes: 2 }],
        };
        // logits = (100, -100) for input 1
        let p = ParamVector::new(vec![100.0, -100.0, 0.0, 0.0], Arc::new(s.layout())).unwrap();
        let m = ModelState::from_params(s, p).unwrap();
        let d = Dataset::new(Matrix::new(1, 1, vec![1.0]).unwrap(), vec![0]).unwrap();
        let (loss, _) = m.loss_and_grad(&Batch::new(&d, 0)).unwrap();
        assert!(loss < 1e-40, "{loss}");
    }

    #[test]
    fn inactive_head_gradient_is_zero() {
        let s = spec(vec![3], Activation::Tanh);
        let m = ModelState::init(s, &mut RngStream::new(1), InitScheme::UniformGlorot).unwrap();
        let d = data(&[[0.3, -0.7], [1.1, 0.2]], &[1, 0]);
        let (_, g) = m.loss_and_grad(&Batch::new(&d, 0)).unwrap();
        let span = m.head_span(1).unwrap();
        assert!(g.values[span].iter().all(|&v| v == 0.0));
        assert!(g.values[m.head_span(0).unwrap()].iter().any(|&v| v != 0.0));
    }

    #[test]
    fn loss_at_current_params_matches() {
        let s = spec(vec![3], Activation::Relu);
        let m = ModelState::init(s, &mut RngStream::new(2), InitScheme::UniformGlorot).unwrap();
        let d = data(&[[0.3, -0.7], [1.1, 0.2], [-0.4, 0.9]], &[1, 0, 2]);
        let (loss, _) = m.loss_and_grad(&Batch::new(&d, 1)).unwrap();
        let a = m.loss_at(m.params(), &d, 1).unwrap();
        assert_eq!(a, loss);
        assert_eq!(a, m.loss_at(m.params(), &d, 1).unwrap());
        assert!(m.loss_at(&ParamVector::from_values(vec![0.0; 3]), &d, 1).is_err());
    }

    #[test]
    fn accuracy_counts_and_ties() {
        let m = ModelState::zeros(spec(vec![], Activation::Relu)).unwrap();
        // all logits equal: every prediction is class 0
        let d = data(&[[1.0, 0.0], [0.0, 1.0], [1.0, 1.0], [2.0, 2.0]], &[0, 1, 0, 0]);
        assert_eq!(m.accuracy(&d, 0).unwrap(), 0.75);
        let all = data(&[[1.0, 0.0], [0.0, 1.0]], &[0, 0]);
        assert_eq!(m.accuracy(&all, 0).unwrap(), 1.0);
        assert!(matches!(m.accuracy(&Dataset::empty(2), 0), Err(Error::EmptyData(_))));
    }
}
