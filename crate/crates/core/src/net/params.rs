use ndarray::{ArrayView1, ArrayView2, ArrayViewMut1, ArrayViewMut2, Ix1, Ix2};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Named, shaped parameter arrays with one gradient buffer each.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore {
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    values: Vec<Vec<f64>>,
    grads: Vec<Vec<f64>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends an entry and returns its index.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>, value: Vec<f64>) -> Result<usize> {
        let name = name.into();
        let n: usize = shape.iter().product();
        if n != value.len() {
            return Err(invalid(format!("{name}: shape {shape:?} does not match {} values", value.len())));
        }
        if self.names.contains(&name) {
            return Err(invalid(format!("duplicate parameter {name}")));
        }
        self.names.push(name);
        self.shapes.push(shape);
        self.grads.push(vec![0.0; n]);
        self.values.push(value);
        Ok(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &str {
        &self.names[i]
    }

    pub fn shape(&self, i: usize) -> &[usize] {
        &self.shapes[i]
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn value(&self, i: usize) -> &[f64] {
        &self.values[i]
    }

    pub fn value_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.values[i]
    }

    pub fn grad(&self, i: usize) -> &[f64] {
        &self.grads[i]
    }

    /// Gradient buffer of entry `i`, for `Trainable` implementations outside this crate.
    pub fn grad_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.grads[i]
    }

    pub fn num_scalars(&self) -> usize {
        self.values.iter().map(Vec::len).sum()
    }

    pub(crate) fn view(&self) -> ParamValues<'_> {
        ParamValues { shapes: &self.shapes, values: &self.values }
    }

    /// Read access to values alongside write access to gradients.
    pub(crate) fn split(&mut self) -> (ParamValues<'_>, GradsMut<'_>) {
        (
            ParamValues { shapes: &self.shapes, values: &self.values },
            GradsMut { shapes: &self.shapes, grads: &mut self.grads },
        )
    }

    pub fn zero_grad(&mut self) {
        for g in &mut self.grads {
            g.iter_mut().for_each(|v| *v = 0.0);
        }
    }

    pub fn grad_norm(&self) -> f64 {
        self.grads.iter().flatten().map(|g| g * g).sum::<f64>().sqrt()
    }

    /// All gradients in entry order.
    pub fn flat_grads(&self) -> Vec<f64> {
        self.grads.iter().flatten().copied().collect()
    }

    pub fn flat_values(&self) -> Vec<f64> {
        self.values.iter().flatten().copied().collect()
    }

    pub fn scale_grads(&mut self, k: f64) {
        for g in self.grads.iter_mut().flatten() {
            *g *= k;
        }
    }

    /// `value -= lr * grad` for every scalar.
    pub fn sgd_step(&mut self, lr: f64) {
        for (v, g) in self.values.iter_mut().zip(&self.grads) {
            for (x, d) in v.iter_mut().zip(g) {
                *x -= lr * d;
            }
        }
    }

    /// FNV-1a over names, shapes and value bits.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |bytes: &[u8]| {
            for b in bytes {
                h ^= *b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        for i in 0..self.len() {
            eat(self.names[i].as_bytes());
            for d in &self.shapes[i] {
                eat(&(*d as u64).to_le_bytes());
            }
            for v in &self.values[i] {
                eat(&v.to_bits().to_le_bytes());
            }
        }
        h
    }

    /// Same names, shapes and values; gradients ignored.
    pub fn same_values(&self, other: &ParamStore) -> bool {
        self.names == other.names && self.shapes == other.shapes && self.values == other.values
    }
}

/// Deep copy of a store with zeroed gradients.
pub fn clone_params(src: &ParamStore) -> ParamStore {
    let mut out = src.clone();
    out.zero_grad();
    out
}

pub(crate) struct ParamValues<'a> {
    shapes: &'a [Vec<usize>],
    values: &'a [Vec<f64>],
}

impl<'a> ParamValues<'a> {
    pub(crate) fn matrix(&self, i: usize) -> ArrayView2<'a, f64> {
        view2(&self.shapes[i], &self.values[i])
    }

    pub(crate) fn vector(&self, i: usize) -> ArrayView1<'a, f64> {
        ArrayView1::from(&self.values[i][..])
    }
}

pub(crate) struct GradsMut<'a> {
    shapes: &'a [Vec<usize>],
    grads: &'a mut [Vec<f64>],
}

impl GradsMut<'_> {
    pub(crate) fn matrix(&mut self, i: usize) -> ArrayViewMut2<'_, f64> {
        let s = &self.shapes[i];
        let (r, c) = if s.len() == 2 { (s[0], s[1]) } else { (1, s[0]) };
        ArrayViewMut2::from_shape((r, c), &mut self.grads[i][..])
            .expect("shape checked at construction")
            .into_dimensionality::<Ix2>()
            .expect("rank 2")
    }

    pub(crate) fn vector(&mut self, i: usize) -> ArrayViewMut1<'_, f64> {
        ArrayViewMut1::from(&mut self.grads[i][..]).into_dimensionality::<Ix1>().expect("rank 1")
    }
}

fn view2<'a>(shape: &[usize], data: &'a [f64]) -> ArrayView2<'a, f64> {
    let (r, c) = if shape.len() == 2 { (shape[0], shape[1]) } else { (1, shape[0]) };
    ArrayView2::from_shape((r, c), data).expect("shape checked at construction")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StepRule {
    #[default]
    Sgd,
    Adam,
}

/// Update rule with its per-parameter state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    rule: StepRule,
    lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl Optimizer {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(rule: StepRule, lr: f64) -> Self {
        Self { rule, lr, m: Vec::new(), v: Vec::new(), t: 0 }
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn step(&mut self, params: &mut ParamStore) {
        match self.rule {
            StepRule::Sgd => params.sgd_step(self.lr),
            StepRule::Adam => {
                if self.m.is_empty() {
                    self.m = params.grads.iter().map(|g| vec![0.0; g.len()]).collect();
                    self.v = self.m.clone();
                }
                self.t += 1;
                let t = self.t as i32;
                let c1 = 1.0 - Self::BETA1.powi(t);
                let c2 = 1.0 - Self::BETA2.powi(t);
                for (i, vals) in params.values.iter_mut().enumerate() {
                    let g = &params.grads[i];
                    let (m, v) = (&mut self.m[i], &mut self.v[i]);
                    for j in 0..vals.len() {
                        m[j] = Self::BETA1 * m[j] + (1.0 - Self::BETA1) * g[j];
                        v[j] = Self::BETA2 * v[j] + (1.0 - Self::BETA2) * g[j] * g[j];
                        let mh = m[j] / c1;
                        let vh = v[j] / c2;
                        vals[j] -= self.lr * mh / (vh.sqrt() + Self::EPS);
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParamStore {
        let mut p = ParamStore::new();
        p.push("a", vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        p.push("b", vec![3], vec![0.5, -0.5, 0.0]).unwrap();
        p
    }

    #[test]
    fn rejects_bad_shapes_and_duplicates() {
        let mut p = store();
        assert!(p.push("c", vec![2, 2], vec![1.0]).is_err());
        assert!(p.push("a", vec![1], vec![1.0]).is_err());
    }

    #[test]
    fn clone_is_deep() {
        let mut src = store();
        let copy = clone_params(&src);
        assert_eq!(src.checksum(), copy.checksum());
        src.value_mut(0)[0] = 10.0;
        assert_eq!(copy.value(0)[0], 1.0);
        assert_ne!(src.checksum(), copy.checksum());
        let copy2 = clone_params(&copy);
        assert!(copy2.same_values(&copy));
    }

    #[test]
    fn zero_lr_leaves_values() {
        let mut p = store();
        p.grads[0][1] = 3.0;
        let before = p.clone();
        Optimizer::new(StepRule::Sgd, 0.0).step(&mut p);
        assert!(p.same_values(&before));
        p.sgd_step(0.5);
        assert_eq!(p.value(0)[1], 0.5);
    }
}
