//! Generic scalar abstraction for the dynamics kernel.
//!
//! The chain model and its analytic Jacobians are written once over a small
//! scalar trait. Instantiated at `f64` they evaluate the closed-form
//! expressions; instantiated at [`Multi<K>`] (a value plus `K` derivative
//! lanes, i.e. batched forward-mode differentiation) the same code yields
//! exact directional derivatives of whatever it computes. That is how the
//! discrete-time Jacobians of the RK4 map are obtained without any finite
//! differencing.

use std::ops::{Add, Div, Mul, Neg, Sub};

/// Scalar operations needed by the model kernel.
pub(crate) trait Real:
    Copy
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
{
    fn of(v: f64) -> Self;
    fn sin(self) -> Self;
    fn cos(self) -> Self;
}

impl Real for f64 {
    #[inline(always)]
    fn of(v: f64) -> Self {
        v
    }
    #[inline(always)]
    fn sin(self) -> Self {
        f64::sin(self)
    }
    #[inline(always)]
    fn cos(self) -> Self {
        f64::cos(self)
    }
}

/// Value with `K` independent derivative lanes.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Multi<const K: usize> {
    pub v: f64,
    pub d: [f64; K],
}

impl<const K: usize> Multi<K> {
    /// Constant (all derivative lanes zero).
    #[inline(always)]
    pub fn con(v: f64) -> Self {
        Multi { v, d: [0.0; K] }
    }

    /// Variable seeded as the `lane`-th independent direction.
    #[inline(always)]
    pub fn var(v: f64, lane: usize) -> Self {
        let mut d = [0.0; K];
        d[lane] = 1.0;
        Multi { v, d }
    }
}

impl<const K: usize> Add for Multi<K> {
    type Output = Self;
    #[inline(always)]
    fn add(self, o: Self) -> Self {
        let mut d = self.d;
        for k in 0..K {
            d[k] += o.d[k];
        }
        Multi { v: self.v + o.v, d }
    }
}

impl<const K: usize> Sub for Multi<K> {
    type Output = Self;
    #[inline(always)]
    fn sub(self, o: Self) -> Self {
        let mut d = self.d;
        for k in 0..K {
            d[k] -= o.d[k];
        }
        Multi { v: self.v - o.v, d }
    }
}

impl<const K: usize> Mul for Multi<K> {
    type Output = Self;
    #[inline(always)]
    fn mul(self, o: Self) -> Self {
        let mut d = [0.0; K];
        for k in 0..K {
            d[k] = self.d[k] * o.v + self.v * o.d[k];
        }
        Multi { v: self.v * o.v, d }
    }
}

impl<const K: usize> Div for Multi<K> {
    type Output = Self;
    #[inline(always)]
    fn div(self, o: Self) -> Self {
        let q = self.v / o.v;
        let mut d = [0.0; K];
        for k in 0..K {
            d[k] = (self.d[k] - q * o.d[k]) / o.v;
        }
        Multi { v: q, d }
    }
}

impl<const K: usize> Neg for Multi<K> {
    type Output = Self;
    #[inline(always)]
    fn neg(self) -> Self {
        let mut d = self.d;
        for x in &mut d {
            *x = -*x;
        }
        Multi { v: -self.v, d }
    }
}

impl<const K: usize> Real for Multi<K> {
    #[inline(always)]
    fn of(v: f64) -> Self {
        Multi::con(v)
    }
    #[inline(always)]
    fn sin(self) -> Self {
        let (s, c) = self.v.sin_cos();
        let mut d = self.d;
        for x in &mut d {
            *x *= c;
        }
        Multi { v: s, d }
    }
    #[inline(always)]
    fn cos(self) -> Self {
        let (s, c) = self.v.sin_cos();
        let mut d = self.d;
        for x in &mut d {
            *x *= -s;
        }
        Multi { v: c, d }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lanes_carry_independent_directional_derivatives() {
        // f(a, b) = sin(a) * b + a / b, seeded on both arguments at once.
        let a = Multi::<2>::var(0.7, 0);
        let b = Multi::<2>::var(1.3, 1);
        let f = a.sin() * b + a / b;
        let fa = 0.7f64.cos() * 1.3 + 1.0 / 1.3; // df/da
        let fb = 0.7f64.sin() - 0.7 / (1.3 * 1.3); // df/db
        assert!((f.v - (0.7f64.sin() * 1.3 + 0.7 / 1.3)).abs() < 1e-15);
        assert!((f.d[0] - fa).abs() < 1e-15);
        assert!((f.d[1] - fb).abs() < 1e-15);
    }

    #[test]
    fn matches_central_differences_on_composite_expression() {
        let g = |x: f64| ((-x).cos() * x / (x * x + 1.0)).sin();
        let gd = |x: Multi<1>| ((-x).cos() * x / (x * x + Multi::of(1.0))).sin();
        for i in 0..20 {
            let x = -2.0 + 0.21 * i as f64;
            let h = 1e-6;
            let fd = (g(x + h) - g(x - h)) / (2.0 * h);
            let ad = gd(Multi::var(x, 0)).d[0];
            assert!((fd - ad).abs() < 1e-8, "x={x}: fd={fd} ad={ad}");
        }
    }
}
