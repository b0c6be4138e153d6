//! Dense row-major tensors and the discrete Fourier primitives used by the
//! sketching code.
//!
//! Everything is `f64`. Tensors own a flat buffer plus a shape; all extents
//! are at least one, so there is no empty tensor.

use std::cell::RefCell;
use std::io::{Read, Write};
use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::binio;
use crate::error::{ensure_same_len, Error, Result};

const TENSOR_MAGIC: &[u8; 4] = b"CBPT";
const TENSOR_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(format!("shape {shape:?} needs {expected} values, got {}", data.len())));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Result<Self> {
        validate_shape(&shape)?;
        let n = shape.iter().product();
        Ok(Tensor { shape, data: vec![0.0; n] })
    }

    pub fn from_vec(data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![data.len()], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    /// Always false; kept for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn reshape(self, shape: Vec<usize>) -> Result<Self> {
        Tensor::new(shape, self.data)
    }

    pub fn get(&self, index: &[usize]) -> Result<f64> {
        Ok(self.data[self.offset(index)?])
    }

    pub fn offset(&self, index: &[usize]) -> Result<usize> {
        if index.len() != self.shape.len() {
            return Err(Error::dim(format!("index rank {} for tensor of rank {}", index.len(), self.shape.len())));
        }
        let mut off = 0;
        for (&i, &n) in index.iter().zip(&self.shape) {
            if i >= n {
                return Err(Error::dim(format!("index {index:?} out of bounds {:?}", self.shape)));
            }
            off = off * n + i;
        }
        Ok(off)
    }

    fn check_same_shape(&self, other: &Tensor, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(format!("{op}: shapes {:?} and {:?} differ", self.shape, other.shape)));
        }
        Ok(())
    }

    pub fn add(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "add")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a + b).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn mul(&self, other: &Tensor) -> Result<Tensor> {
        self.check_same_shape(other, "mul")?;
        let data = self.data.iter().zip(&other.data).map(|(a, b)| a * b).collect();
        Ok(Tensor { shape: self.shape.clone(), data })
    }

    pub fn scale(&self, alpha: f64) -> Tensor {
        Tensor { shape: self.shape.clone(), data: self.data.iter().map(|v| v * alpha).collect() }
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    /// Sums out one axis. Reducing a rank-1 tensor yields shape `[1]`.
    pub fn sum_axis(&self, axis: usize) -> Result<Tensor> {
        if axis >= self.rank() {
            return Err(Error::dim(format!("axis {axis} out of range for rank {}", self.rank())));
        }
        let outer: usize = self.shape[..axis].iter().product();
        let n = self.shape[axis];
        let inner: usize = self.shape[axis + 1..].iter().product();
        let mut out = vec![0.0; outer * inner];
        for o in 0..outer {
            for k in 0..n {
                let src = &self.data[(o * n + k) * inner..(o * n + k + 1) * inner];
                for (dst, s) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                    *dst += s;
                }
            }
        }
        let mut shape: Vec<usize> =
            self.shape.iter().copied().enumerate().filter(|&(i, _)| i != axis).map(|(_, s)| s).collect();
        if shape.is_empty() {
            shape.push(1);
        }
        Tensor::new(shape, out)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Serializes in the `CBPT` raw tensor format.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        w.write_all(TENSOR_MAGIC)?;
        binio::write_u32(w, TENSOR_VERSION)?;
        binio::write_u32(w, self.shape.len() as u32)?;
        for &s in &self.shape {
            binio::write_u64(w, s as u64)?;
        }
        binio::write_f64s(w, &self.data)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Tensor> {
        binio::expect_magic(r, TENSOR_MAGIC)?;
        let version = binio::read_u32(r, "tensor version")?;
        if version != TENSOR_VERSION {
            return Err(Error::format(format!("unsupported tensor version {version}")));
        }
        let rank = binio::read_u32(r, "tensor rank")? as usize;
        if rank == 0 || rank > 16 {
            return Err(Error::format(format!("implausible tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            let extent = binio::read_u64(r, "tensor extent")?;
            shape.push(usize::try_from(extent).map_err(|_| Error::format("extent overflow"))?);
        }
        validate_shape(&shape)?;
        let n = shape
            .iter()
            .try_fold(1usize, |acc, &s| acc.checked_mul(s))
            .ok_or_else(|| Error::format("tensor size overflow"))?;
        let data = binio::read_f64s(r, n, "tensor payload")?;
        Tensor::new(shape, data)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::with_capacity(16 + 8 * self.shape.len() + 8 * self.data.len());
        self.write_to(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() {
        return Err(Error::dim("tensor shape must have at least one extent"));
    }
    if shape.contains(&0) {
        return Err(Error::dim(format!("zero extent in shape {shape:?}")));
    }
    Ok(())
}

pub fn dot(a: &[f64], b: &[f64]) -> Result<f64> {
    ensure_same_len("dot", a.len(), b.len())?;
    Ok(dot_unchecked(a, b))
}

#[inline]
pub(crate) fn dot_unchecked(a: &[f64], b: &[f64]) -> f64 {
    // Four accumulators let the compiler vectorize; the order is fixed so
    // results stay bit-stable.
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for i in 0..chunks {
        let j = i * 4;
        acc[0] += a[j] * b[j];
        acc[1] += a[j + 1] * b[j + 1];
        acc[2] += a[j + 2] * b[j + 2];
        acc[3] += a[j + 3] * b[j + 3];
    }
    let mut tail = 0.0;
    for j in chunks * 4..a.len() {
        tail += a[j] * b[j];
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

#[inline]
pub(crate) fn axpy(alpha: f64, x: &[f64], y: &mut [f64]) {
    for (yi, xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

pub fn l2_norm(v: &[f64]) -> f64 {
    dot_unchecked(v, v).sqrt()
}

/// Result of a DFT, stored as separate real and imaginary parts.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexVector {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexVector {
    pub fn len(&self) -> usize {
        self.re.len()
    }

    pub fn is_empty(&self) -> bool {
        self.re.is_empty()
    }

    fn from_complex(values: &[Complex64]) -> Self {
        ComplexVector { re: values.iter().map(|c| c.re).collect(), im: values.iter().map(|c| c.im).collect() }
    }

    fn to_complex(&self) -> Vec<Complex64> {
        self.re.iter().zip(&self.im).map(|(&re, &im)| Complex64::new(re, im)).collect()
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize, inverse: bool) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| {
        let mut p = p.borrow_mut();
        if inverse {
            p.plan_fft_inverse(len)
        } else {
            p.plan_fft_forward(len)
        }
    })
}

/// Unnormalized forward transform, in place. Any length is accepted.
pub(crate) fn fft_in_place(buf: &mut [Complex64]) {
    if buf.len() > 1 {
        plan(buf.len(), false).process(buf);
    }
}

/// Inverse transform including the `1/n` factor, in place.
pub(crate) fn ifft_in_place(buf: &mut [Complex64]) {
    let n = buf.len();
    if n > 1 {
        plan(n, true).process(buf);
    }
    let inv = 1.0 / n as f64;
    for c in buf.iter_mut() {
        *c *= inv;
    }
}

/// Discrete Fourier transform `X[k] = Σ_j v[j]·exp(-2πi·jk/n)`.
pub fn dft(v: &[f64]) -> Result<ComplexVector> {
    if v.is_empty() {
        return Err(Error::dim("dft of an empty vector"));
    }
    let mut buf: Vec<Complex64> = v.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    fft_in_place(&mut buf);
    Ok(ComplexVector::from_complex(&buf))
}

/// Inverse of [`dft`], normalized so that `idft(dft(v)) == v`.
pub fn idft(c: &ComplexVector) -> Result<ComplexVector> {
    ensure_same_len("idft", c.re.len(), c.im.len())?;
    if c.is_empty() {
        return Err(Error::dim("idft of an empty vector"));
    }
    let mut buf = c.to_complex();
    ifft_in_place(&mut buf);
    Ok(ComplexVector::from_complex(&buf))
}

/// `out[k] = Σ_j a[j]·b[(k − j) mod n]`, evaluated in the frequency domain.
pub fn circular_convolve(a: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    ensure_same_len("circular_convolve", a.len(), b.len())?;
    if a.is_empty() {
        return Err(Error::dim("circular_convolve of empty vectors"));
    }
    // Pack both real signals into one complex transform.
    let mut buf: Vec<Complex64> = a.iter().zip(b).map(|(&x, &y)| Complex64::new(x, y)).collect();
    fft_in_place(&mut buf);
    let mut prod = split_packed_product(&buf);
    ifft_in_place(&mut prod);
    Ok(prod.into_iter().map(|c| c.re).collect())
}

/// Given `Z = DFT(a + i·b)` for real `a`, `b`, returns `DFT(a) ⊙ DFT(b)`.
pub(crate) fn split_packed_product(z: &[Complex64]) -> Vec<Complex64> {
    let n = z.len();
    (0..n)
        .map(|k| {
            let zk = z[k];
            let zc = z[(n - k) % n].conj();
            let fa = (zk + zc) * 0.5;
            // (zk - zc) / (2i)
            let diff = zk - zc;
            let fb = Complex64::new(diff.im * 0.5, -diff.re * 0.5);
            fa * fb
        })
        .collect()
}

/// Splits `Z = DFT(a + i·b)` into `(DFT(a), DFT(b))`.
pub(crate) fn split_packed(z: &[Complex64]) -> (Vec<Complex64>, Vec<Complex64>) {
    let n = z.len();
    let mut fa = Vec::with_capacity(n);
    let mut fb = Vec::with_capacity(n);
    for k in 0..n {
        let zk = z[k];
        let zc = z[(n - k) % n].conj();
        fa.push((zk + zc) * 0.5);
        let diff = zk - zc;
        fb.push(Complex64::new(diff.im * 0.5, -diff.re * 0.5));
    }
    (fa, fb)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn naive_dft(v: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = v.len();
        let mut re = vec![0.0; n];
        let mut im = vec![0.0; n];
        for k in 0..n {
            for (j, &x) in v.iter().enumerate() {
                let angle = -2.0 * std::f64::consts::PI * ((j * k) % n) as f64 / n as f64;
                re[k] += x * angle.cos();
                im[k] += x * angle.sin();
            }
        }
        (re, im)
    }

    fn naive_convolve(a: &[f64], b: &[f64]) -> Vec<f64> {
        let n = a.len();
        (0..n).map(|k| (0..n).map(|j| a[j] * b[(k + n - j) % n]).sum()).collect()
    }

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    fn max_abs(v: &[f64]) -> f64 {
        v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    #[test]
    fn impulse_transforms_to_constant() {
        let c = dft(&[1.0, 0.0, 0.0, 0.0]).unwrap();
        assert_eq!(c.re, vec![1.0; 4]);
        assert_eq!(c.im, vec![0.0; 4]);
    }

    #[test]
    fn zero_transforms_to_zero() {
        let c = dft(&[0.0; 9]).unwrap();
        assert!(c.re.iter().chain(&c.im).all(|&x| x == 0.0));
    }

    #[test]
    fn dft_matches_naive_and_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [1usize, 2, 7, 64, 100, 257] {
            let v = random_vec(&mut rng, n);
            let c = dft(&v).unwrap();
            let (re, im) = naive_dft(&v);
            for k in 0..n {
                assert!((c.re[k] - re[k]).abs() < 1e-9 * n as f64);
                assert!((c.im[k] - im[k]).abs() < 1e-9 * n as f64);
            }
            let back = idft(&c).unwrap();
            let err: f64 = back.re.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            assert!(err <= 1e-10 * (1.0 + max_abs(&v)), "n={n} err={err}");
        }
    }

    #[test]
    fn convolution_identity_and_shift() {
        let b = [3.0, -1.5, 2.0];
        assert_eq!(
            circular_convolve(&[1.0, 0.0, 0.0], &b)
                .unwrap()
                .iter()
                .map(|x| (x * 1e9).round() / 1e9)
                .collect::<Vec<_>>(),
            b.to_vec()
        );
        let shifted = circular_convolve(&[0.0, 1.0, 0.0], &b).unwrap();
        for (got, want) in shifted.iter().zip([2.0, 3.0, -1.5]) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn convolution_theorem_against_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for d in [8usize, 32, 257] {
            let a = random_vec(&mut rng, d);
            let b = random_vec(&mut rng, d);
            let fast = circular_convolve(&a, &b).unwrap();
            let slow = naive_convolve(&a, &b);
            let scale = 1.0 + max_abs(&slow);
            for (f, s) in fast.iter().zip(&slow) {
                assert!((f - s).abs() <= 1e-8 * scale);
            }
        }
    }

    #[test]
    fn convolution_length_mismatch_is_dimension_error() {
        assert!(matches!(circular_convolve(&[1.0, 2.0], &[1.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn dot_and_sum_basics() {
        assert_eq!(dot(&[1.0, 0.0, 0.0], &[1.0, 0.0, 0.0]).unwrap(), 1.0);
        assert_eq!(Tensor::zeros(vec![3, 4]).unwrap().sum(), 0.0);
        assert!(dot(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn dot_matches_scalar_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..20 {
            // Small integers keep every partial sum exact, so any summation
            // order must agree bit-for-bit.
            let a: Vec<f64> = (0..8).map(|_| rng.gen_range(-50..50) as f64).collect();
            let b: Vec<f64> = (0..8).map(|_| rng.gen_range(-50..50) as f64).collect();
            let mut expected = 0.0;
            for i in 0..8 {
                expected += a[i] * b[i];
            }
            assert_eq!(dot(&a, &b).unwrap(), expected);
        }
    }

    #[test]
    fn sum_axis_reduces() {
        let t = Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        assert_eq!(t.sum_axis(0).unwrap().data(), &[5.0, 7.0, 9.0]);
        assert_eq!(t.sum_axis(1).unwrap().data(), &[6.0, 15.0]);
        assert!(t.sum_axis(2).is_err());
    }

    #[test]
    fn shape_invariants_enforced() {
        assert!(Tensor::new(vec![2, 2], vec![0.0; 3]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![], vec![]).is_err());
        let a = Tensor::zeros(vec![2]).unwrap();
        let b = Tensor::zeros(vec![3]).unwrap();
        assert!(matches!(a.add(&b), Err(Error::Dimension(_))));
    }

    #[test]
    fn tensor_file_layout() {
        let t = Tensor::new(vec![1, 2], vec![1.5, -2.0]).unwrap();
        let bytes = t.to_bytes();
        assert_eq!(&bytes[..4], b"CBPT");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), 1);
        assert_eq!(u32::from_le_bytes(bytes[8..12].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(bytes[12..20].try_into().unwrap()), 1);
        assert_eq!(u64::from_le_bytes(bytes[20..28].try_into().unwrap()), 2);
        assert_eq!(f64::from_le_bytes(bytes[28..36].try_into().unwrap()), 1.5);
        assert_eq!(bytes.len(), 44);
        assert!(Tensor::read_from(&mut &bytes[..40]).is_err());
    }

    proptest! {
        #[test]
        fn tensor_file_round_trip(shape in proptest::collection::vec(1usize..5, 1..4), seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let n: usize = shape.iter().product();
            let t = Tensor::new(shape, random_vec(&mut rng, n)).unwrap();
            let back = Tensor::read_from(&mut t.to_bytes().as_slice()).unwrap();
            prop_assert_eq!(back, t);
        }

        #[test]
        fn parseval(v in proptest::collection::vec(-10.0f64..10.0, 1..200)) {
            let c = dft(&v).unwrap();
            let time: f64 = v.iter().map(|x| x * x).sum();
            let freq: f64 = c.re.iter().zip(&c.im).map(|(r, i)| r * r + i * i).sum::<f64>() / v.len() as f64;
            prop_assert!((time - freq).abs() <= 1e-9 * time.max(1e-300) + 1e-12);
        }

        #[test]
        fn dft_round_trip(v in proptest::collection::vec(-1e3f64..1e3, 1..130)) {
            let back = idft(&dft(&v).unwrap()).unwrap();
            let err = back.re.iter().zip(&v).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            prop_assert!(err <= 1e-10 * (1.0 + max_abs(&v)));
        }
    }
}
