use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One named block of a flattened parameter vector.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

impl LayoutEntry {
    pub fn new(name: impl Into<String>, shape: Vec<usize>) -> Self {
        Self { name: name.into(), shape }
    }

    pub fn size(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Ordered description of how a flat vector maps back onto named arrays.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Layout {
    pub entries: Vec<LayoutEntry>,
}

impl Layout {
    pub fn new(entries: Vec<LayoutEntry>) -> Self {
        Self { entries }
    }

    pub fn size(&self) -> usize {
        self.entries.iter().map(LayoutEntry::size).sum()
    }

    /// Offset and length of every entry, in layout order.
    pub fn spans(&self) -> Vec<(usize, usize)> {
        let mut offset = 0;
        self.entries
            .iter()
            .map(|e| {
                let span = (offset, e.size());
                offset += e.size();
                span
            })
            .collect()
    }

    /// Offset range of the entry called `name`.
    pub fn span_of(&self, name: &str) -> Option<std::ops::Range<usize>> {
        let mut offset = 0;
        for e in &self.entries {
            if e.name == name {
                return Some(offset..offset + e.size());
            }
            offset += e.size();
        }
        None
    }
}

/// A named, shaped array of parameters (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct NamedArray {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl NamedArray {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!("`{name}` has shape {shape:?} but {} values", data.len())));
        }
        Ok(Self { name, shape, data })
    }
}

/// Flat view of every model parameter together with its layout.
///
/// The layout is reference counted so that the many temporaries created by
/// training and landscape probes share one description.
#[derive(Debug, Clone)]
pub struct ParamVector {
    pub values: Vec<f64>,
    layout: Arc<Layout>,
}

impl PartialEq for ParamVector {
    fn eq(&self, other: &Self) -> bool {
        self.same_layout(other) && self.values == other.values
    }
}

impl ParamVector {
    pub fn new(values: Vec<f64>, layout: Arc<Layout>) -> Result<Self> {
        if layout.size() != values.len() {
            return Err(Error::Layout(format!("layout describes {} values, got {}", layout.size(), values.len())));
        }
        Ok(Self { values, layout })
    }

    /// Single-block vector, convenient for toy problems.
    pub fn from_values(values: Vec<f64>) -> Self {
        let layout = Arc::new(Layout::new(vec![LayoutEntry::new("w", vec![values.len()])]));
        Self { values, layout }
    }

    pub fn zeros(layout: Arc<Layout>) -> Self {
        Self { values: vec![0.0; layout.size()], layout }
    }

    pub fn zeros_like(&self) -> Self {
        Self { values: vec![0.0; self.values.len()], layout: self.layout.clone() }
    }

    /// New vector with the same layout and the given values.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(values, self.layout.clone())
    }

    pub fn layout(&self) -> &Layout {
        &self.layout
    }

    pub fn layout_arc(&self) -> &Arc<Layout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || self.layout == other.layout
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Layout(format!("vectors of {} and {} values have different layouts", self.len(), other.len())))
        }
    }

    pub fn dot(&self, other: &Self) -> f64 {
        dot(&self.values, &other.values)
    }

    pub fn norm(&self) -> f64 {
        norm(&self.values)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    /// `self + alpha * other`
    pub fn add_scaled(&self, alpha: f64, other: &Self) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a + alpha * b).collect();
        Self { values, layout: self.layout.clone() }
    }

    pub fn sub(&self, other: &Self) -> Self {
        let values = self.values.iter().zip(&other.values).map(|(a, b)| a - b).collect();
        Self { values, layout: self.layout.clone() }
    }

    pub fn scale(&self, alpha: f64) -> Self {
        Self { values: self.values.iter().map(|v| alpha * v).collect(), layout: self.layout.clone() }
    }

    /// In-place `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &Self) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += alpha * b;
        }
    }
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Concatenates named arrays in the given order, recording the layout.
pub fn flatten(params: &[NamedArray]) -> Result<ParamVector> {
    let mut values = Vec::with_capacity(params.iter().map(|p| p.data.len()).sum());
    let mut entries = Vec::with_capacity(params.len());
    for p in params {
        if let Some(index) = p.data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { name: p.name.clone(), index });
        }
        let expected: usize = p.shape.iter().product();
        if expected != p.data.len() {
            return Err(Error::Shape(format!("`{}` shape {:?} vs {} values", p.name, p.shape, p.data.len())));
        }
        values.extend_from_slice(&p.data);
        entries.push(LayoutEntry::new(p.name.clone(), p.shape.clone()));
    }
    ParamVector::new(values, Arc::new(Layout::new(entries)))
}

pub fn unflatten(vector: &ParamVector) -> Vec<NamedArray> {
    vector
        .layout()
        .entries
        .iter()
        .zip(vector.layout().spans())
        .map(|(e, (off, len))| NamedArray {
            name: e.name.clone(),
            shape: e.shape.clone(),
            data: vector.values[off..off + len].to_vec(),
        })
        .collect()
}

/// Orthonormal basis of span{u, v} with the first vector parallel to `u`.
pub fn gram_schmidt_pair(u: &ParamVector, v: &ParamVector) -> Result<(ParamVector, ParamVector)> {
    u.check_layout(v)?;
    let nu = u.norm();
    let nv = v.norm();
    if nu == 0.0 || nv == 0.0 || !nu.is_finite() || !nv.is_finite() {
        return Err(Error::DegeneratePlane("zero-length direction".into()));
    }
    let d1 = u.scale(1.0 / nu);
    let mut w = v.add_scaled(-d1.dot(v), &d1);
    // second pass keeps orthogonality at machine precision
    let c = d1.dot(&w);
    w.axpy(-c, &d1);
    let nw = w.norm();
    if nw <= 1e-12 * nv {
        return Err(Error::DegeneratePlane("directions are parallel".into()));
    }
    let d2 = w.scale(1.0 / nw);
    Ok((d1, d2))
}
