//! Dense (N, C, H, W) f64 tensors, the operation tape, and the optimizer.
//!
//! [`Tensor`] is a plain value: a shape plus a row-major `Vec<f64>`. All
//! differentiable computation happens on a [`Graph`], an append-only record
//! of executed operations; tensors enter it as leaves and every operation
//! returns a [`Var`] handle into the tape. Reverse accumulation walks the
//! tape backwards once, so gradients are bitwise reproducible.

mod graph;
mod optim;

pub use graph::{Band, Graph, Var};
pub use optim::{ParamStore, RmspropConfig};

use crate::error::{Error, Result};
use rand::Rng;

/// Logical (N, C, H, W) extent. Matrices occupy the last two dims — a P×Q
/// matrix is (N, C, P, Q) with batch dims up front; scalars are (1,1,1,1).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct Shape {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
}

impl Shape {
    pub fn new(n: usize, c: usize, h: usize, w: usize) -> Shape {
        Shape { n, c, h, w }
    }

    pub fn scalar() -> Shape {
        Shape::new(1, 1, 1, 1)
    }

    /// Total element count.
    pub fn count(&self) -> usize {
        self.n * self.c * self.h * self.w
    }

    /// Row-major flat index of (n, c, y, x).
    #[inline]
    pub fn idx(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.c + c) * self.h + y) * self.w + x
    }
}

impl std::fmt::Display for Shape {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "({},{},{},{})", self.n, self.c, self.h, self.w)
    }
}

/// Dense f64 tensor value. Gradients live on the [`Graph`], not here; a
/// `Tensor` outside any graph is inert data and is safe to move across
/// threads.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Result<Tensor> {
        if data.len() != shape.count() {
            return Err(Error::Shape(format!(
                "tensor data length {} does not match shape {} ({} elements)",
                data.len(),
                shape,
                shape.count()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Shape) -> Tensor {
        Tensor { shape, data: vec![0.0; shape.count()] }
    }

    pub fn filled(shape: Shape, value: f64) -> Tensor {
        Tensor { shape, data: vec![value; shape.count()] }
    }

    pub fn scalar(value: f64) -> Tensor {
        Tensor { shape: Shape::scalar(), data: vec![value] }
    }

    /// Uniform values in `lo..hi` drawn from `rng` in row-major order.
    pub fn uniform(shape: Shape, lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor {
        let data = (0..shape.count()).map(|_| lo + (hi - lo) * rng.gen::<f64>()).collect();
        Tensor { shape, data }
    }

    /// Layer-init convention: uniform in ±sqrt(3/fan_in), i.e. weight
    /// variance 1/fan_in, so activation scale is preserved layer to layer.
    /// With the tighter ±sqrt(1/fan_in) bound the five-stage backbone
    /// attenuates its input ~15x, starving the proportion head.
    pub fn init_fan_in(shape: Shape, fan_in: usize, rng: &mut impl Rng) -> Tensor {
        let bound = (3.0 / fan_in as f64).sqrt();
        Tensor::uniform(shape, -bound, bound, rng)
    }

    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    pub fn at(&self, n: usize, c: usize, y: usize, x: usize) -> f64 {
        self.data[self.shape.idx(n, c, y, x)]
    }

    #[inline]
    pub fn set(&mut self, n: usize, c: usize, y: usize, x: usize, v: f64) {
        let i = self.shape.idx(n, c, y, x);
        self.data[i] = v;
    }

    pub fn is_all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Mean of all elements (0.0 for empty tensors cannot occur: shapes have
    /// at least one element).
    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn shape_indexing_is_row_major() {
        let s = Shape::new(2, 3, 4, 5);
        assert_eq!(s.count(), 120);
        assert_eq!(s.idx(0, 0, 0, 0), 0);
        assert_eq!(s.idx(0, 0, 0, 1), 1);
        assert_eq!(s.idx(0, 0, 1, 0), 5);
        assert_eq!(s.idx(0, 1, 0, 0), 20);
        assert_eq!(s.idx(1, 0, 0, 0), 60);
        assert_eq!(s.idx(1, 2, 3, 4), 119);
    }

    #[test]
    fn tensor_rejects_wrong_length() {
        let err = Tensor::new(Shape::new(1, 1, 2, 2), vec![0.0; 3]).unwrap_err();
        assert!(matches!(err, crate::Error::Shape(_)), "got {err:?}");
    }

    #[test]
    fn init_fan_in_stays_inside_bound_and_is_seeded() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let t = Tensor::init_fan_in(Shape::new(4, 4, 3, 3), 36, &mut rng);
        let bound = (3.0f64 / 36.0).sqrt();
        assert!(t.data().iter().all(|v| v.abs() <= bound));

        let mut rng2 = ChaCha8Rng::seed_from_u64(7);
        let t2 = Tensor::init_fan_in(Shape::new(4, 4, 3, 3), 36, &mut rng2);
        assert_eq!(t.data(), t2.data(), "same seed must reproduce init bitwise");
    }
}
