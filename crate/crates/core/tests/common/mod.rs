#![allow(dead_code)]

use demixgan::nets::TensorMap;
use rand::Rng;

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Central difference of `f` around zero.
pub fn central(mut f: impl FnMut(f64) -> f64, h: f64) -> f64 {
    (f(h) - f(-h)) / (2.0 * h)
}

/// Random `(tensor name, flat index)` among the named tensors.
pub fn pick(tensors: &TensorMap<f64>, names: &[&str], rng: &mut impl Rng) -> (String, usize) {
    let name = names[rng.random_range(0..names.len())];
    let len = tensors.get(name).len();
    (name.to_string(), rng.random_range(0..len))
}

pub fn bump(tensors: &mut TensorMap<f64>, name: &str, idx: usize, delta: f64) {
    tensors.get_mut(name).as_slice_mut().expect("standard layout")[idx] += delta;
}

pub fn at(tensors: &TensorMap<f64>, name: &str, idx: usize) -> f64 {
    tensors.get(name).as_slice().expect("standard layout")[idx]
}
