//! Count Sketch and Tensor Sketch projections of the second-order polynomial
//! kernel, plus the exact kernel and a Random Maclaurin estimator used to
//! cross-check them.
//!
//! A Tensor Sketch of `x` is the circular convolution of two independent
//! Count Sketches of `x`; its inner products estimate `(x·y)²` without bias.
//!
//! Random tables come from ChaCha20 seeded with `seed_from_u64`. The first
//! Count Sketch uses stream 1 and the second stream 2. Indices are drawn by
//! multiply-shift reduction of a raw `u64`, signs from its top bit, so the
//! tables depend only on the ChaCha20 keystream and never on a distribution
//! implementation.

use std::io::{Read, Write};

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rustfft::num_complex::Complex64;

use crate::binio;
use crate::error::{ensure_same_len, Error, Result};
use crate::tensor::{dot_unchecked, fft_in_place, ifft_in_place, split_packed};

const CS1_STREAM: u64 = 1;
const CS2_STREAM: u64 = 2;
const RM1_STREAM: u64 = 3;
const RM2_STREAM: u64 = 4;

/// Default compact bilinear output dimension.
pub const DEFAULT_SKETCH_DIM: usize = 8192;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CountSketchParams {
    input_dim: usize,
    output_dim: usize,
    indices: Vec<u32>,
    signs: Vec<i8>,
}

impl CountSketchParams {
    /// Builds params from explicit tables, validating them.
    pub fn from_tables(output_dim: usize, indices: Vec<u32>, signs: Vec<i8>) -> Result<Self> {
        ensure_same_len("count sketch tables", indices.len(), signs.len())?;
        if indices.is_empty() || output_dim == 0 {
            return Err(Error::config("count sketch dimensions must be positive"));
        }
        if let Some(bad) = indices.iter().find(|&&h| h as usize >= output_dim) {
            return Err(Error::format(format!("hash index {bad} >= output dim {output_dim}")));
        }
        if let Some(bad) = signs.iter().find(|&&s| s != 1 && s != -1) {
            return Err(Error::format(format!("sign {bad} is not ±1")));
        }
        Ok(CountSketchParams { input_dim: indices.len(), output_dim, indices, signs })
    }

    fn draw(c: usize, d: usize, rng: &mut ChaCha20Rng) -> Self {
        let mut indices = Vec::with_capacity(c);
        let mut signs = Vec::with_capacity(c);
        for _ in 0..c {
            indices.push(bounded(rng.next_u64(), d) as u32);
            signs.push(if rng.next_u64() >> 63 == 0 { 1 } else { -1 });
        }
        CountSketchParams { input_dim: c, output_dim: d, indices, signs }
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn indices(&self) -> &[u32] {
        &self.indices
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    fn scatter_into(&self, x: &[f64], out: &mut [f64]) {
        for ((&h, &s), &v) in self.indices.iter().zip(&self.signs).zip(x) {
            out[h as usize] += f64::from(s) * v;
        }
    }

    /// Transpose of the sketch: `out[i] = s[i]·g[h[i]]`.
    fn gather(&self, g: &[f64], out: &mut [f64]) {
        for ((o, &h), &s) in out.iter_mut().zip(&self.indices).zip(&self.signs) {
            *o += f64::from(s) * g[h as usize];
        }
    }
}

/// Lemire multiply-shift reduction of a uniform `u64` onto `[0, n)`.
fn bounded(r: u64, n: usize) -> usize {
    ((u128::from(r) * n as u128) >> 64) as usize
}

/// Frozen tables for one compact bilinear projection.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorSketchParams {
    seed: u64,
    cs1: CountSketchParams,
    cs2: CountSketchParams,
}

impl TensorSketchParams {
    pub fn input_dim(&self) -> usize {
        self.cs1.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.cs1.output_dim
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn first(&self) -> &CountSketchParams {
        &self.cs1
    }

    pub fn second(&self) -> &CountSketchParams {
        &self.cs2
    }

    /// Writes the sketch parameter block: `u32 c, u32 d, u64 seed`, then the
    /// index (`u32[c]`) and sign (`i8[c]`) tables of each sketch in turn.
    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        binio::write_u32(w, self.input_dim() as u32)?;
        binio::write_u32(w, self.output_dim() as u32)?;
        binio::write_u64(w, self.seed)?;
        for cs in [&self.cs1, &self.cs2] {
            for &h in &cs.indices {
                binio::write_u32(w, h)?;
            }
            let signs: Vec<u8> = cs.signs.iter().map(|&s| s as u8).collect();
            w.write_all(&signs)?;
        }
        Ok(())
    }

    /// Reads a parameter block and checks that the tables agree with the
    /// ones the stored seed derives.
    pub fn read_from<R: Read>(r: &mut R) -> Result<Self> {
        let c = binio::read_u32(r, "sketch input dim")? as usize;
        let d = binio::read_u32(r, "sketch output dim")? as usize;
        let seed = binio::read_u64(r, "sketch seed")?;
        if c == 0 || d == 0 {
            return Err(Error::format("sketch block with zero dimension"));
        }
        let mut tables = Vec::with_capacity(2);
        for which in ["first", "second"] {
            let mut indices = Vec::with_capacity(c);
            for _ in 0..c {
                indices.push(binio::read_u32(r, "sketch index table")?);
            }
            let signs = binio::read_bytes(r, c, "sketch sign table")?.into_iter().map(|b| b as i8).collect();
            let cs = CountSketchParams::from_tables(d, indices, signs)
                .map_err(|e| Error::format(format!("{which} count sketch: {e}")))?;
            tables.push(cs);
        }
        let cs2 = tables.pop().expect("two tables");
        let cs1 = tables.pop().expect("two tables");
        let stored = TensorSketchParams { seed, cs1, cs2 };
        let derived = make_sketch_params(c, d, seed)?;
        if stored != derived {
            return Err(Error::format(format!("sketch tables do not match seed {seed} (c={c}, d={d})")));
        }
        Ok(stored)
    }
}

/// Draws the two independent Count Sketches for a `c → d` projection.
pub fn make_sketch_params(c: usize, d: usize, seed: u64) -> Result<TensorSketchParams> {
    if c == 0 || d == 0 {
        return Err(Error::config(format!("sketch dims must be positive (c={c}, d={d})")));
    }
    if d > u32::MAX as usize || c > u32::MAX as usize {
        return Err(Error::config("sketch dims exceed u32"));
    }
    let mut rng1 = ChaCha20Rng::seed_from_u64(seed);
    rng1.set_stream(CS1_STREAM);
    let mut rng2 = ChaCha20Rng::seed_from_u64(seed);
    rng2.set_stream(CS2_STREAM);
    Ok(TensorSketchParams {
        seed,
        cs1: CountSketchParams::draw(c, d, &mut rng1),
        cs2: CountSketchParams::draw(c, d, &mut rng2),
    })
}

/// `out[k] = Σ_{i: h[i]=k} s[i]·x[i]`.
pub fn count_sketch(x: &[f64], p: &CountSketchParams) -> Result<Vec<f64>> {
    ensure_same_len("count_sketch input", x.len(), p.input_dim)?;
    let mut out = vec![0.0; p.output_dim];
    p.scatter_into(x, &mut out);
    Ok(out)
}

/// Product spectrum `DFT(C₁x) ⊙ DFT(C₂x)`, computed with a single packed
/// complex transform.
pub(crate) fn sketch_spectrum(x: &[f64], p: &TensorSketchParams) -> Vec<Complex64> {
    let (fa, fb) = packed_spectra(x, p);
    fa.iter().zip(&fb).map(|(a, b)| a * b).collect()
}

/// `(DFT(C₁x), DFT(C₂x))`.
pub(crate) fn packed_spectra(x: &[f64], p: &TensorSketchParams) -> (Vec<Complex64>, Vec<Complex64>) {
    let d = p.output_dim();
    let mut buf = vec![Complex64::new(0.0, 0.0); d];
    for ((&h, &s), &v) in p.cs1.indices.iter().zip(&p.cs1.signs).zip(x) {
        buf[h as usize].re += f64::from(s) * v;
    }
    for ((&h, &s), &v) in p.cs2.indices.iter().zip(&p.cs2.signs).zip(x) {
        buf[h as usize].im += f64::from(s) * v;
    }
    fft_in_place(&mut buf);
    split_packed(&buf)
}

/// Tensor Sketch of `x`, via the frequency domain.
pub fn tensor_sketch(x: &[f64], p: &TensorSketchParams) -> Result<Vec<f64>> {
    ensure_same_len("tensor_sketch input", x.len(), p.input_dim())?;
    let mut spec = sketch_spectrum(x, p);
    ifft_in_place(&mut spec);
    Ok(spec.into_iter().map(|c| c.re).collect())
}

/// Tensor Sketch of `x` via an explicit O(d²) circular sum. Exists as an
/// independent path for checking [`tensor_sketch`].
pub fn tensor_sketch_direct(x: &[f64], p: &TensorSketchParams) -> Result<Vec<f64>> {
    let a = count_sketch(x, &p.cs1)?;
    let b = count_sketch(x, &p.cs2)?;
    let d = a.len();
    Ok((0..d).map(|k| (0..d).map(|j| a[j] * b[(k + d - j) % d]).sum()).collect())
}

/// Gradient of `⟨upstream, tensor_sketch(x)⟩` with respect to `x`.
pub fn tensor_sketch_backward(x: &[f64], p: &TensorSketchParams, upstream: &[f64]) -> Result<Vec<f64>> {
    ensure_same_len("tensor_sketch_backward input", x.len(), p.input_dim())?;
    ensure_same_len("tensor_sketch_backward upstream", upstream.len(), p.output_dim())?;
    let g_hat = upstream_spectrum(upstream);
    let mut out = vec![0.0; x.len()];
    accumulate_location_grad(x, p, &g_hat, &mut out);
    Ok(out)
}

pub(crate) fn upstream_spectrum(upstream: &[f64]) -> Vec<Complex64> {
    let mut g: Vec<Complex64> = upstream.iter().map(|&v| Complex64::new(v, 0.0)).collect();
    fft_in_place(&mut g);
    g
}

/// Adds `∂⟨g, TS(x)⟩/∂x` to `out`, given `g_hat = DFT(g)`.
///
/// For `y = a ⊛ b`, `∂/∂a = g ⋆ b` which is `IDFT(Ĝ ⊙ conj(B̂))`; both real
/// gradients come out of one inverse transform as `grad_a + i·grad_b`.
pub(crate) fn accumulate_location_grad(x: &[f64], p: &TensorSketchParams, g_hat: &[Complex64], out: &mut [f64]) {
    let (fa, fb) = packed_spectra(x, p);
    let mut buf: Vec<Complex64> = g_hat
        .iter()
        .zip(fa.iter().zip(&fb))
        .map(|(g, (a, b))| g * b.conj() + Complex64::new(0.0, 1.0) * g * a.conj())
        .collect();
    ifft_in_place(&mut buf);
    let grad_a: Vec<f64> = buf.iter().map(|c| c.re).collect();
    let grad_b: Vec<f64> = buf.iter().map(|c| c.im).collect();
    p.cs1.gather(&grad_a, out);
    p.cs2.gather(&grad_b, out);
}

/// Exact second-order polynomial kernel `(x·y)²`.
pub fn polykernel_exact(x: &[f64], y: &[f64]) -> Result<f64> {
    ensure_same_len("polykernel_exact", x.len(), y.len())?;
    let d = dot_unchecked(x, y);
    Ok(d * d)
}

/// Two frozen `c × d` Rademacher matrices, stored column-major by output
/// coordinate so `W₁ᵀx` reads contiguous memory.
#[derive(Clone, Debug)]
pub struct RandomMaclaurinParams {
    input_dim: usize,
    output_dim: usize,
    w1: Vec<i8>,
    w2: Vec<i8>,
}

impl RandomMaclaurinParams {
    pub fn new(c: usize, d: usize, seed: u64) -> Result<Self> {
        if c == 0 || d == 0 {
            return Err(Error::config(format!("random maclaurin dims must be positive (c={c}, d={d})")));
        }
        let draw = |stream: u64| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            rng.set_stream(stream);
            let mut w = Vec::with_capacity(c * d);
            while w.len() < c * d {
                let bits = rng.next_u64();
                for b in 0..64 {
                    if w.len() == c * d {
                        break;
                    }
                    w.push(if (bits >> b) & 1 == 0 { 1 } else { -1 });
                }
            }
            w
        };
        Ok(RandomMaclaurinParams { input_dim: c, output_dim: d, w1: draw(RM1_STREAM), w2: draw(RM2_STREAM) })
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }
}

/// `out[k] = (W₁ᵀx)[k]·(W₂ᵀx)[k] / √d`.
pub fn random_maclaurin(x: &[f64], p: &RandomMaclaurinParams) -> Result<Vec<f64>> {
    ensure_same_len("random_maclaurin input", x.len(), p.input_dim)?;
    let c = p.input_dim;
    let scale = 1.0 / (p.output_dim as f64).sqrt();
    Ok((0..p.output_dim)
        .map(|k| {
            let col1 = &p.w1[k * c..(k + 1) * c];
            let col2 = &p.w2[k * c..(k + 1) * c];
            let mut u = 0.0;
            let mut v = 0.0;
            for ((&a, &b), &xi) in col1.iter().zip(col2).zip(x) {
                u += f64::from(a) * xi;
                v += f64::from(b) * xi;
            }
            scale * u * v
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_chacha::ChaCha8Rng;

    fn random_vec(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }

    #[test]
    fn params_are_deterministic() {
        let a = make_sketch_params(4, 4, 7).unwrap();
        let b = make_sketch_params(4, 4, 7).unwrap();
        assert_eq!(a, b);
        let mut ba = Vec::new();
        let mut bb = Vec::new();
        a.write_to(&mut ba).unwrap();
        b.write_to(&mut bb).unwrap();
        assert_eq!(ba, bb);
        assert_ne!(a.first(), a.second());
    }

    #[test]
    fn default_dims_follow_config() {
        let p = make_sketch_params(512, DEFAULT_SKETCH_DIM, 3).unwrap();
        assert_eq!(p.input_dim(), 512);
        assert_eq!(p.output_dim(), 8192);
        assert!(p.first().indices().iter().all(|&h| (h as usize) < 8192));
    }

    #[test]
    fn hash_indices_are_uniform() {
        // 10^5 draws into 16 bins; critical value of χ²(15) at p = 0.01 is 30.58.
        let d = 16;
        let p = make_sketch_params(100_000, d, 99).unwrap();
        for cs in [p.first(), p.second()] {
            let mut counts = vec![0f64; d];
            for &h in cs.indices() {
                counts[h as usize] += 1.0;
            }
            let expected = 100_000.0 / d as f64;
            let chi2: f64 = counts.iter().map(|c| (c - expected).powi(2) / expected).sum();
            assert!(chi2 < 30.58, "chi2 = {chi2}");
            let plus = cs.signs().iter().filter(|&&s| s == 1).count() as f64;
            // Binomial(1e5, 1/2): 4 sigma is ~632.
            assert!((plus - 50_000.0).abs() < 632.0);
        }
    }

    #[test]
    fn count_sketch_basics() {
        let p = make_sketch_params(6, 5, 1).unwrap();
        assert_eq!(count_sketch(&[0.0; 6], p.first()).unwrap(), vec![0.0; 5]);
        let id = CountSketchParams::from_tables(4, vec![0, 1, 2, 3], vec![1; 4]).unwrap();
        assert_eq!(count_sketch(&[1.0, -2.0, 3.5, 0.25], &id).unwrap(), vec![1.0, -2.0, 3.5, 0.25]);
        assert!(matches!(count_sketch(&[1.0], p.first()), Err(Error::Dimension(_))));
    }

    #[test]
    #[allow(clippy::needless_range_loop)]
    fn count_sketch_matches_scatter_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = make_sketch_params(37, 11, 4).unwrap();
        let x = random_vec(&mut rng, 37);
        let mut expected = vec![0.0; 11];
        for i in 0..37 {
            let h = p.first().indices()[i] as usize;
            let s = p.first().signs()[i] as f64;
            expected[h] += s * x[i];
        }
        assert_eq!(count_sketch(&x, p.first()).unwrap(), expected);
    }

    #[test]
    fn tensor_sketch_of_zero_is_zero() {
        let p = make_sketch_params(8, 16, 2).unwrap();
        assert!(tensor_sketch(&[0.0; 8], &p).unwrap().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn dft_path_matches_direct_path() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for (c, d) in [(8usize, 64usize), (20, 16), (33, 256), (5, 7)] {
            let p = make_sketch_params(c, d, c as u64 * 31 + d as u64).unwrap();
            let x = random_vec(&mut rng, c);
            let fast = tensor_sketch(&x, &p).unwrap();
            let slow = tensor_sketch_direct(&x, &p).unwrap();
            let scale = slow.iter().fold(1e-300f64, |m, v| m.max(v.abs()));
            for (f, s) in fast.iter().zip(&slow) {
                assert!((f - s).abs() <= 1e-8 * scale, "c={c} d={d}");
            }
        }
    }

    #[test]
    fn tensor_sketch_is_unbiased_on_one_pair() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let x = random_vec(&mut rng, 16);
        let y = random_vec(&mut rng, 16);
        let exact = polykernel_exact(&x, &y).unwrap();
        let draws: Vec<f64> = (0..20)
            .map(|k| {
                let p = make_sketch_params(16, 64, 1000 + k).unwrap();
                let a = tensor_sketch(&x, &p).unwrap();
                let b = tensor_sketch(&y, &p).unwrap();
                dot_unchecked(&a, &b)
            })
            .collect();
        let (mean, se) = mean_and_se(&draws);
        assert!((mean - exact).abs() <= 2.0 * se, "mean {mean} exact {exact} se {se}");
    }

    #[test]
    fn tensor_sketch_errors_center_on_zero_across_pairs() {
        // Each pair's standardized error is t-distributed with 19 degrees of
        // freedom (variance 19/17); the mean over 200 pairs has standard
        // deviation about 0.075.
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let params: Vec<TensorSketchParams> = (0..20).map(|k| make_sketch_params(24, 128, 500 + k).unwrap()).collect();
        let mut zs = Vec::new();
        for _ in 0..200 {
            let x = random_vec(&mut rng, 24);
            let y = random_vec(&mut rng, 24);
            let exact = polykernel_exact(&x, &y).unwrap();
            let draws: Vec<f64> = params
                .iter()
                .map(|p| dot_unchecked(&tensor_sketch(&x, p).unwrap(), &tensor_sketch(&y, p).unwrap()))
                .collect();
            let (mean, se) = mean_and_se(&draws);
            zs.push((mean - exact) / se);
        }
        let avg = zs.iter().sum::<f64>() / zs.len() as f64;
        assert!(avg.abs() < 0.3, "mean standardized error {avg}");
    }

    fn mean_and_se(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, (var / n).sqrt())
    }

    fn fd_gradient(f: impl Fn(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
        let mut xp = x.to_vec();
        (0..x.len())
            .map(|i| {
                xp[i] = x[i] + h;
                let fp = f(&xp);
                xp[i] = x[i] - h;
                let fm = f(&xp);
                xp[i] = x[i];
                (fp - fm) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn backward_trivial_cases() {
        let p = make_sketch_params(8, 16, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x = random_vec(&mut rng, 8);
        let g = random_vec(&mut rng, 16);
        assert!(tensor_sketch_backward(&x, &p, &[0.0; 16]).unwrap().iter().all(|v| v.abs() < 1e-15));
        assert!(tensor_sketch_backward(&[0.0; 8], &p, &g).unwrap().iter().all(|v| v.abs() < 1e-15));
        assert!(tensor_sketch_backward(&x, &p, &[0.0; 15]).is_err());
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for trial in 0..10 {
            let p = make_sketch_params(8, 16, trial).unwrap();
            let x = random_vec(&mut rng, 8);
            let g = random_vec(&mut rng, 16);
            let analytic = tensor_sketch_backward(&x, &p, &g).unwrap();
            let numeric = fd_gradient(|z| dot_unchecked(&g, &tensor_sketch(z, &p).unwrap()), &x, 1e-6);
            let scale = analytic.iter().chain(&numeric).fold(1e-8f64, |m, v| m.max(v.abs()));
            for (a, n) in analytic.iter().zip(&numeric) {
                assert!((a - n).abs() / scale <= 1e-5, "trial {trial}: {a} vs {n}");
            }
        }
    }

    #[test]
    fn polykernel_cases() {
        assert_eq!(polykernel_exact(&[1.0, 0.0], &[0.0, 1.0]).unwrap(), 0.0);
        let u = [0.6, 0.8];
        assert!((polykernel_exact(&u, &u).unwrap() - 1.0).abs() < 1e-15);
        // Against the explicit outer-product inner product, with values whose
        // products are exact.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-8..8) as f64).collect();
        let y: Vec<f64> = (0..6).map(|_| rng.gen_range(-8..8) as f64).collect();
        let mut outer = 0.0;
        for i in 0..6 {
            for j in 0..6 {
                outer += (x[i] * x[j]) * (y[i] * y[j]);
            }
        }
        assert_eq!(polykernel_exact(&x, &y).unwrap(), outer);
    }

    #[test]
    fn random_maclaurin_unbiased_and_agrees_with_tensor_sketch() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let x = random_vec(&mut rng, 16);
        let y = random_vec(&mut rng, 16);
        assert!(random_maclaurin(&[0.0; 16], &RandomMaclaurinParams::new(16, 32, 0).unwrap())
            .unwrap()
            .iter()
            .all(|&v| v == 0.0));
        let exact = polykernel_exact(&x, &y).unwrap();
        let rm: Vec<f64> = (0..50)
            .map(|k| {
                let p = RandomMaclaurinParams::new(16, 64, 500 + k).unwrap();
                dot_unchecked(&random_maclaurin(&x, &p).unwrap(), &random_maclaurin(&y, &p).unwrap())
            })
            .collect();
        let ts: Vec<f64> = (0..50)
            .map(|k| {
                let p = make_sketch_params(16, 64, 900 + k).unwrap();
                dot_unchecked(&tensor_sketch(&x, &p).unwrap(), &tensor_sketch(&y, &p).unwrap())
            })
            .collect();
        let (rm_mean, rm_se) = mean_and_se(&rm);
        let (ts_mean, ts_se) = mean_and_se(&ts);
        assert!((rm_mean - exact).abs() <= 2.0 * rm_se);
        assert!((rm_mean - ts_mean).abs() <= 2.0 * (rm_se * rm_se + ts_se * ts_se).sqrt());
    }

    #[test]
    fn block_round_trip_and_tamper_detection() {
        let p = make_sketch_params(9, 13, 42).unwrap();
        let mut buf = Vec::new();
        p.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 16 + 2 * (9 * 4 + 9));
        assert_eq!(TensorSketchParams::read_from(&mut buf.as_slice()).unwrap(), p);
        // Flip one sign in the first table.
        let sign_offset = 16 + 9 * 4;
        buf[sign_offset] = (-(buf[sign_offset] as i8)) as u8;
        assert!(matches!(TensorSketchParams::read_from(&mut buf.as_slice()), Err(Error::Format(_))));
    }

    proptest! {
        #[test]
        fn count_sketch_is_linear(seed in any::<u64>(), alpha in -3.0f64..3.0, beta in -3.0f64..3.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let p = make_sketch_params(24, 10, seed).unwrap();
            let x = random_vec(&mut rng, 24);
            let y = random_vec(&mut rng, 24);
            let combo: Vec<f64> = x.iter().zip(&y).map(|(a, b)| alpha * a + beta * b).collect();
            let lhs = count_sketch(&combo, p.first()).unwrap();
            let cx = count_sketch(&x, p.first()).unwrap();
            let cy = count_sketch(&y, p.first()).unwrap();
            for k in 0..10 {
                prop_assert!((lhs[k] - (alpha * cx[k] + beta * cy[k])).abs() <= 1e-12);
            }
        }

        #[test]
        fn identical_seed_gives_identical_outputs(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x = random_vec(&mut rng, 12);
            let a = tensor_sketch(&x, &make_sketch_params(12, 20, seed).unwrap()).unwrap();
            let b = tensor_sketch(&x, &make_sketch_params(12, 20, seed).unwrap()).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}
