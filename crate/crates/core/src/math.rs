//! Floating-point helpers that `core` does not provide on stable.

use crate::Point;

#[inline]
pub fn sqrt(x: f64) -> f64 {
    libm::sqrt(x)
}

#[inline]
pub fn ln(x: f64) -> f64 {
    libm::log(x)
}

#[inline]
pub fn powf(x: f64, y: f64) -> f64 {
    libm::pow(x, y)
}

#[inline]
pub fn ceil(x: f64) -> f64 {
    libm::ceil(x)
}

#[inline]
pub fn exp(x: f64) -> f64 {
    libm::exp(x)
}

#[inline]
pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

#[inline]
pub fn norm2(a: Point) -> f64 {
    dot(a, a)
}

#[inline]
pub fn norm(a: Point) -> f64 {
    sqrt(norm2(a))
}

/// z-component of the cross product.
#[inline]
pub fn cross(a: Point, b: Point) -> f64 {
    a[0] * b[1] - a[1] * b[0]
}

#[inline]
pub fn axpy(a: f64, x: Point, y: Point) -> Point {
    [a * x[0] + y[0], a * x[1] + y[1]]
}

pub fn dot_slice(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm_slice(a: &[f64]) -> f64 {
    sqrt(dot_slice(a, a))
}

/// Clamp to `[lo, hi]` as `min(hi, max(lo, v))`.
#[inline]
pub fn clamp_scalar(v: f64, lo: f64, hi: f64) -> f64 {
    let m = if v > lo { v } else { lo };
    if m < hi {
        m
    } else {
        hi
    }
}
