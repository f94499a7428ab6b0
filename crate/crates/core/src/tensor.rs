//! Flat tensors, ordered tensor maps and the elementwise/statistical
//! primitives the importance and masking stages are built from.
//!
//! All computation happens in `f64`. Every public operation keeps shapes and
//! returns finite data for finite input.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Standard deviations below this are treated as zero by [`zscore`].
pub const DEGENERATE_STD: f64 = 1e-12;

/// Norms below this make [`cosine_similarity`] fail.
pub const MIN_NORM: f64 = 1e-12;

/// A named, shaped, contiguous vector of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlatTensor {
    name: String,
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl FlatTensor {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let name = name.into();
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidTensor(format!(
                "`{name}` has shape {shape:?}; dimensions must be positive"
            )));
        }
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::InvalidTensor(format!(
                "`{name}` has shape {shape:?} ({numel} elements) but {} values",
                data.len()
            )));
        }
        if let Some(pos) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::InvalidTensor(format!(
                "`{name}` has non-finite value at index {pos}"
            )));
        }
        Ok(Self { name, shape, data })
    }

    /// One-dimensional tensor; convenient in tests and small examples.
    pub fn vector(name: impl Into<String>, data: Vec<f64>) -> Result<Self> {
        let len = data.len();
        Self::new(name, vec![len], data)
    }

    pub fn zeros(name: impl Into<String>, shape: Vec<usize>) -> Result<Self> {
        let numel = shape.iter().product();
        Self::new(name, shape, vec![0.0; numel])
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access to the values. Callers must keep them finite.
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Same name and shape, new values.
    pub fn with_data(&self, data: Vec<f64>) -> Result<Self> {
        Self::new(self.name.clone(), self.shape.clone(), data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            name: self.name.clone(),
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn same_layout(&self, other: &FlatTensor) -> bool {
        self.name == other.name && self.shape == other.shape
    }
}

/// Insertion-ordered collection of uniquely named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TensorMap {
    entries: Vec<FlatTensor>,
    index: HashMap<String, usize>,
}

impl TensorMap {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_tensors(tensors: impl IntoIterator<Item = FlatTensor>) -> Result<Self> {
        let mut map = Self::new();
        for t in tensors {
            map.push(t)?;
        }
        Ok(map)
    }

    pub fn push(&mut self, tensor: FlatTensor) -> Result<()> {
        if self.index.contains_key(tensor.name()) {
            return Err(Error::InvalidTensor(format!(
                "duplicate tensor name `{}`",
                tensor.name()
            )));
        }
        self.index.insert(tensor.name().to_owned(), self.entries.len());
        self.entries.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&FlatTensor> {
        self.index.get(name).map(|&i| &self.entries[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut FlatTensor> {
        self.index.get(name).map(|&i| &mut self.entries[i])
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total number of scalar entries across all tensors.
    pub fn numel(&self) -> usize {
        self.entries.iter().map(FlatTensor::len).sum()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, FlatTensor> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> std::slice::IterMut<'_, FlatTensor> {
        self.entries.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.iter().map(FlatTensor::name)
    }

    /// Identical name/shape sequences.
    pub fn is_aligned(&self, other: &TensorMap) -> bool {
        self.entries.len() == other.entries.len()
            && self
                .entries
                .iter()
                .zip(&other.entries)
                .all(|(a, b)| a.same_layout(b))
    }

    pub fn ensure_aligned(&self, other: &TensorMap) -> Result<()> {
        if self.is_aligned(other) {
            return Ok(());
        }
        if self.entries.len() != other.entries.len() {
            return Err(Error::Alignment(format!(
                "{} tensors vs {} tensors",
                self.entries.len(),
                other.entries.len()
            )));
        }
        let (a, b) = self
            .entries
            .iter()
            .zip(&other.entries)
            .find(|(a, b)| !a.same_layout(b))
            .expect("misaligned maps have a differing entry");
        Err(Error::Alignment(format!(
            "`{}` {:?} vs `{}` {:?}",
            a.name(),
            a.shape(),
            b.name(),
            b.shape()
        )))
    }

    /// Applies `f` to every tensor, keeping order.
    pub fn map_tensors(&self, f: impl Fn(&FlatTensor) -> FlatTensor) -> TensorMap {
        TensorMap::from_tensors(self.entries.iter().map(f)).expect("names are preserved")
    }

    /// Elementwise combination of two aligned maps.
    pub fn zip_with(&self, other: &TensorMap, f: impl Fn(f64, f64) -> f64) -> Result<TensorMap> {
        self.ensure_aligned(other)?;
        let mut out = Vec::with_capacity(self.len());
        for (a, b) in self.entries.iter().zip(&other.entries) {
            let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
            out.push(a.with_data(data)?);
        }
        TensorMap::from_tensors(out)
    }

    /// All-zero map with this map's layout.
    pub fn zeros_like(&self) -> TensorMap {
        self.map_tensors(|t| t.map(|_| 0.0))
    }

    /// Values of every tensor concatenated in map order.
    pub fn concat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.numel());
        for t in &self.entries {
            out.extend_from_slice(t.data());
        }
        out
    }

    /// Sub-map containing the named tensors, in this map's order.
    pub fn select<'a>(&self, names: impl IntoIterator<Item = &'a str>) -> Result<TensorMap> {
        let wanted: Vec<&str> = names.into_iter().collect();
        for name in &wanted {
            if !self.contains(name) {
                return Err(Error::Alignment(format!("missing tensor `{name}`")));
            }
        }
        TensorMap::from_tensors(
            self.entries
                .iter()
                .filter(|t| wanted.contains(&t.name()))
                .cloned(),
        )
    }
}

impl<'a> IntoIterator for &'a TensorMap {
    type Item = &'a FlatTensor;
    type IntoIter = std::slice::Iter<'a, FlatTensor>;

    fn into_iter(self) -> Self::IntoIter {
        self.entries.iter()
    }
}

/// Whether mean/std statistics are taken per named tensor or over the whole
/// trainable set.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormScope {
    #[default]
    PerTensor,
    Global,
}

/// Population mean and standard deviation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub mean: f64,
    pub std: f64,
}

impl Moments {
    pub fn of(values: &[f64]) -> Self {
        Self::of_iter(values.iter().copied(), values.len())
    }

    /// Two-pass moments over a re-iterable source of `count` values.
    pub fn of_iter<I>(values: I, count: usize) -> Self
    where
        I: Iterator<Item = f64> + Clone,
    {
        if count == 0 {
            return Self { mean: 0.0, std: 0.0 };
        }
        let n = count as f64;
        let mean = values.clone().sum::<f64>() / n;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Self {
            mean,
            std: var.sqrt(),
        }
    }

    pub fn is_degenerate(&self) -> bool {
        self.std < DEGENERATE_STD
    }

    /// Standard score of `v`; zero when the spread is degenerate.
    #[inline]
    pub fn standardize(&self, v: f64) -> f64 {
        if self.is_degenerate() {
            0.0
        } else {
            (v - self.mean) / self.std
        }
    }
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

pub fn elementwise_abs(t: &FlatTensor) -> FlatTensor {
    t.map(f64::abs)
}

/// Standard scores with population std; a constant tensor maps to zeros.
pub fn zscore(t: &FlatTensor) -> FlatTensor {
    let m = Moments::of(t.data());
    t.map(|v| m.standardize(v))
}

pub fn sigmoid(t: &FlatTensor) -> FlatTensor {
    t.map(sigmoid_scalar)
}

pub fn cosine_similarity(a: &FlatTensor, b: &FlatTensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Alignment(format!(
            "cosine over shapes {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    cosine_slices(a.data(), b.data())
}

pub(crate) fn cosine_slices(a: &[f64], b: &[f64]) -> Result<f64> {
    debug_assert_eq!(a.len(), b.len());
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    for norm in [na, nb] {
        if norm < MIN_NORM {
            return Err(Error::ZeroNorm { norm });
        }
    }
    Ok((dot / (na * nb)).clamp(-1.0, 1.0))
}

/// Result of [`masked_mean`]; `empty` is set when no entry was nonzero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MaskedMean {
    pub value: f64,
    pub empty: bool,
}

/// Mean over the nonzero entries of `values`.
pub fn masked_mean_slice(values: &[f64]) -> MaskedMean {
    let (sum, count) = values
        .iter()
        .filter(|&&v| v != 0.0)
        .fold((0.0, 0usize), |(s, c), &v| (s + v, c + 1));
    if count == 0 {
        MaskedMean {
            value: 0.0,
            empty: true,
        }
    } else {
        MaskedMean {
            value: sum / count as f64,
            empty: false,
        }
    }
}

pub fn masked_mean(t: &FlatTensor) -> MaskedMean {
    masked_mean_slice(t.data())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(data: &[f64]) -> FlatTensor {
        FlatTensor::vector("t", data.to_vec()).unwrap()
    }

    fn close(a: &[f64], b: &[f64], tol: f64) -> bool {
        a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (x - y).abs() <= tol)
    }

    #[test]
    fn abs_examples() {
        assert_eq!(elementwise_abs(&v(&[-2.0, 0.0, 3.0])).data(), &[2.0, 0.0, 3.0]);
        assert_eq!(elementwise_abs(&v(&[0.0, 0.0])).data(), &[0.0, 0.0]);
        assert_eq!(elementwise_abs(&v(&[-1.5, 1.5])).data(), &[1.5, 1.5]);
    }

    #[test]
    fn zscore_examples() {
        // mean 2, population std sqrt(2/3)
        let s = (2.0f64 / 3.0).sqrt();
        let expect = [-1.0 / s, 0.0, 1.0 / s];
        assert!(close(zscore(&v(&[1.0, 2.0, 3.0])).data(), &expect, 1e-12));
        assert!((expect[2] - 1.224_744_871_391_589).abs() < 1e-12);
        assert_eq!(zscore(&v(&[5.0, 5.0, 5.0])).data(), &[0.0, 0.0, 0.0]);
        assert!(close(zscore(&v(&[0.0, 2.0])).data(), &[-1.0, 1.0], 1e-15));
    }

    #[test]
    fn zscore_of_single_entry_is_zero() {
        assert_eq!(zscore(&v(&[3.5])).data(), &[0.0]);
    }

    #[test]
    fn sigmoid_examples() {
        assert_eq!(sigmoid(&v(&[0.0])).data(), &[0.5]);
        assert!((sigmoid(&v(&[40.0])).data()[0] - 1.0).abs() < 1e-15);
        assert!((sigmoid(&v(&[3f64.ln()])).data()[0] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn cosine_examples() {
        let c = cosine_similarity(&v(&[1.0, 1.0]), &v(&[2.0, 2.0])).unwrap();
        assert!((c - 1.0).abs() < 1e-15);
        assert_eq!(cosine_similarity(&v(&[1.0, 0.0]), &v(&[0.0, 1.0])).unwrap(), 0.0);
        let c = cosine_similarity(&v(&[1.0, 1.0]), &v(&[1.0, 0.0])).unwrap();
        assert!((c - std::f64::consts::FRAC_1_SQRT_2).abs() < 1e-15);
    }

    #[test]
    fn cosine_rejects_zero_norm() {
        let err = cosine_similarity(&v(&[0.0, 0.0]), &v(&[1.0, 0.0])).unwrap_err();
        assert!(matches!(err, Error::ZeroNorm { .. }));
    }

    #[test]
    fn masked_mean_examples() {
        let m = masked_mean(&v(&[0.0, 0.5, 0.75, 0.0]));
        assert!((m.value - 0.625).abs() < 1e-15 && !m.empty);
        let m = masked_mean(&v(&[0.0, 0.0]));
        assert_eq!((m.value, m.empty), (0.0, true));
        assert_eq!(masked_mean(&v(&[1.0, 1.0, 1.0])).value, 1.0);
    }

    #[test]
    fn tensor_rejects_bad_input() {
        assert!(FlatTensor::new("a", vec![2, 2], vec![0.0; 3]).is_err());
        assert!(FlatTensor::new("a", vec![0], vec![]).is_err());
        assert!(FlatTensor::vector("a", vec![f64::NAN]).is_err());
    }

    #[test]
    fn map_rejects_duplicate_names_and_checks_alignment() {
        let mut m = TensorMap::new();
        m.push(v(&[1.0])).unwrap();
        assert!(m.push(v(&[2.0])).is_err());

        let a = TensorMap::from_tensors([FlatTensor::vector("x", vec![1.0, 2.0]).unwrap()]).unwrap();
        let b = TensorMap::from_tensors([FlatTensor::vector("x", vec![1.0]).unwrap()]).unwrap();
        assert!(matches!(a.ensure_aligned(&b), Err(Error::Alignment(_))));
        assert!(a.ensure_aligned(&a.zeros_like()).is_ok());
    }
}
