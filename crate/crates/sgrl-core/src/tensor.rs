//! Dense row-major tensors and the scalar/vector kernels everything else
//! composes: affine maps, RELU, sigmoid, L2 normalization, binary cross
//! entropy.
//!
//! All math is generic over [`Real`] so the same code runs the f32 training
//! path and the f64 verification path used by gradient checks.

use crate::error::{Error, Result};
use num_traits::Float;

/// Scalar type for all numeric code. Training uses `f32`, finite-difference
/// verification uses `f64`.
pub trait Real: Float + std::fmt::Debug + std::fmt::Display + Default + Send + Sync + 'static {
    fn cast(x: f64) -> Self {
        <Self as num_traits::NumCast>::from(x).expect("cast from f64")
    }
    fn as_f64(self) -> f64 {
        num_traits::ToPrimitive::to_f64(&self).expect("cast to f64")
    }
}

impl Real for f32 {}
impl Real for f64 {}

/// Probability clamp for logarithms in the cross-entropy losses. Keeps
/// saturated sigmoids from producing infinite loss terms.
pub const PROB_CLAMP: f64 = 1e-7;

/// Norm guard for [`l2_normalize`]: vectors with norm below this pass through
/// scaled by 1/eps, so the zero vector stays zero.
pub const L2_NORM_EPS: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<F> {
    dims: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Tensor<F> {
    /// Build a tensor, checking the dims/length invariant and finiteness.
    pub fn new(dims: Vec<usize>, data: Vec<F>) -> Result<Self> {
        let expect: usize = dims.iter().product();
        if expect != data.len() {
            return Err(Error::shape(format!(
                "dims {:?} imply {} elements, got {}",
                dims,
                expect,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::check("tensor contains a non-finite entry"));
        }
        Ok(Tensor { dims, data })
    }

    pub fn zeros(dims: Vec<usize>) -> Self {
        let len = dims.iter().product();
        Tensor {
            dims,
            data: vec![F::zero(); len],
        }
    }

    pub fn vector(data: Vec<F>) -> Self {
        Tensor {
            dims: vec![data.len()],
            data,
        }
    }

    pub fn scalar(x: F) -> Self {
        Tensor {
            dims: vec![1],
            data: vec![x],
        }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

/// out[i] = sum_j W[i,j]*x[j] + b[i].
pub fn affine<F: Real>(w: &Tensor<F>, b: &Tensor<F>, x: &Tensor<F>) -> Result<Tensor<F>> {
    let (rows, cols) = match w.dims() {
        [r, c] => (*r, *c),
        other => {
            return Err(Error::shape(format!(
                "affine weight must be rank 2, got dims {:?}",
                other
            )))
        }
    };
    if b.len() != rows || x.len() != cols {
        return Err(Error::shape(format!(
            "affine: W is {}x{}, b has {}, x has {}",
            rows,
            cols,
            b.len(),
            x.len()
        )));
    }
    let mut out = vec![F::zero(); rows];
    kernel::affine_into(w.data(), rows, cols, b.data(), x.data(), &mut out);
    Tensor::new(vec![rows], out)
}

/// Elementwise max(0, x).
pub fn relu<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let mut out = x.data().to_vec();
    kernel::relu_in_place(&mut out);
    Tensor {
        dims: x.dims().to_vec(),
        data: out,
    }
}

/// Elementwise 1/(1+exp(-x)).
pub fn sigmoid<F: Real>(x: &Tensor<F>) -> Tensor<F> {
    let out = x.data().iter().map(|&v| kernel::sigmoid_scalar(v)).collect();
    Tensor {
        dims: x.dims().to_vec(),
        data: out,
    }
}

/// q / max(||q||, eps). Unit norm whenever ||q|| >= eps; the zero vector maps
/// to itself.
pub fn l2_normalize<F: Real>(q: &Tensor<F>, eps: f64) -> Tensor<F> {
    let mut out = q.data().to_vec();
    kernel::l2_normalize_in_place(&mut out, F::cast(eps));
    Tensor {
        dims: q.dims().to_vec(),
        data: out,
    }
}

/// -[y ln p + (1-y) ln(1-p)] with p clamped to [PROB_CLAMP, 1-PROB_CLAMP].
pub fn bce_loss<F: Real>(p: F, y: u8) -> F {
    let p = kernel::clamp_prob(p);
    if y == 1 {
        -p.ln()
    } else {
        -(F::one() - p).ln()
    }
}

/// Shared slice-level kernels. The gradient tape records the same routines it
/// evaluates, so pure and taped forwards agree bit for bit.
pub(crate) mod kernel {
    use super::Real;

    pub fn affine_into<F: Real>(w: &[F], rows: usize, cols: usize, b: &[F], x: &[F], out: &mut [F]) {
        debug_assert_eq!(w.len(), rows * cols);
        debug_assert_eq!(x.len(), cols);
        debug_assert_eq!(out.len(), rows);
        for i in 0..rows {
            let row = &w[i * cols..(i + 1) * cols];
            let mut acc = F::zero();
            for (wij, xj) in row.iter().zip(x.iter()) {
                acc = acc + *wij * *xj;
            }
            out[i] = acc + b[i];
        }
    }

    pub fn relu_in_place<F: Real>(x: &mut [F]) {
        for v in x.iter_mut() {
            if *v < F::zero() {
                *v = F::zero();
            }
        }
    }

    pub fn sigmoid_scalar<F: Real>(x: F) -> F {
        // Split on sign to avoid exp overflow.
        if x >= F::zero() {
            F::one() / (F::one() + (-x).exp())
        } else {
            let e = x.exp();
            e / (F::one() + e)
        }
    }

    pub fn norm2<F: Real>(x: &[F]) -> F {
        let mut acc = F::zero();
        for v in x {
            acc = acc + *v * *v;
        }
        acc.sqrt()
    }

    pub fn l2_normalize_in_place<F: Real>(x: &mut [F], eps: F) {
        let n = norm2(x);
        let denom = if n > eps { n } else { eps };
        for v in x.iter_mut() {
            *v = *v / denom;
        }
    }

    pub fn clamp_prob<F: Real>(p: F) -> F {
        let lo = F::cast(super::PROB_CLAMP);
        let hi = F::one() - lo;
        if p < lo {
            lo
        } else if p > hi {
            hi
        } else {
            p
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(v: &[f64]) -> Tensor<f64> {
        Tensor::vector(v.to_vec())
    }

    #[test]
    fn affine_identity_passes_input_through() {
        let w = Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let b = Tensor::zeros(vec![2]);
        assert_eq!(affine(&w, &b, &t(&[3.0, 4.0])).unwrap().data(), &[3.0, 4.0]);
        assert_eq!(affine(&w, &b, &t(&[0.0, 0.0])).unwrap().data(), &[0.0, 0.0]);
    }

    #[test]
    fn affine_hand_example() {
        let w = Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let b = t(&[1.0, 1.0]);
        let out = affine(&w, &b, &t(&[1.0, 1.0])).unwrap();
        assert_eq!(out.data(), &[4.0, 8.0]);
    }

    #[test]
    fn affine_shape_error_names_both_shapes() {
        let w = Tensor::new(vec![2, 3], vec![0.0; 6]).unwrap();
        let b = Tensor::zeros(vec![2]);
        let err = affine(&w, &b, &t(&[1.0])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("2x3") && msg.contains("x has 1"), "{msg}");
    }

    #[test]
    fn relu_and_sigmoid_examples() {
        assert_eq!(relu(&t(&[-1.0, 2.0])).data(), &[0.0, 2.0]);
        assert_eq!(sigmoid(&t(&[0.0])).data(), &[0.5]);
        let s = sigmoid(&t(&[3.0f64.ln()]));
        assert!((s.data()[0] - 0.75).abs() < 1e-12);
    }

    #[test]
    fn sigmoid_extreme_inputs_stay_finite() {
        let s = sigmoid(&t(&[-1000.0, 1000.0]));
        assert!(s.all_finite());
        assert_eq!(s.data()[0], 0.0);
        assert_eq!(s.data()[1], 1.0);
    }

    #[test]
    fn l2_normalize_examples() {
        let out = l2_normalize(&t(&[3.0, 4.0]), L2_NORM_EPS);
        assert!((out.data()[0] - 0.6).abs() < 1e-12);
        assert!((out.data()[1] - 0.8).abs() < 1e-12);

        let zero = l2_normalize(&t(&[0.0, 0.0]), L2_NORM_EPS);
        assert_eq!(zero.data(), &[0.0, 0.0]);

        let unit = l2_normalize(&t(&[1.0, 0.0]), L2_NORM_EPS);
        assert_eq!(unit.data(), &[1.0, 0.0]);
    }

    #[test]
    fn bce_examples() {
        let ln2 = std::f64::consts::LN_2;
        assert!((bce_loss(0.5, 1) - ln2).abs() < 1e-12);
        assert!((bce_loss(0.5, 0) - ln2).abs() < 1e-12);
        assert!((bce_loss(0.9, 1) - 0.105_360_515_657_826_3).abs() < 1e-12);
        // Saturated probabilities stay finite through the clamp.
        assert!(bce_loss(1.0f64, 0).is_finite());
        assert!(bce_loss(0.0f64, 1).is_finite());
    }

    #[test]
    fn tensor_new_validates() {
        assert!(Tensor::<f32>::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::<f32>::new(vec![2], vec![f32::NAN, 0.0]).is_err());
    }
}
