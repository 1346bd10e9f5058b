//! Forward kernels shared by the autodiff graph and direct callers.
//!
//! No implicit broadcasting: binary operations require identical shapes and
//! the only mixed-shape operations are the explicitly named bias additions
//! and scalar scaling.

use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// Pointwise nonlinearities.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Unary {
    Relu,
    /// `x < 0 ↦ αx`, identity otherwise.
    LeakyRelu(f64),
    Sigmoid,
    Tanh,
}

/// Pointwise binary operations on equal shapes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Binary {
    Add,
    Mul,
}

/// Numerically stable logistic function.
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

impl Unary {
    pub fn apply<T: Scalar>(self, x: T) -> T {
        match self {
            Unary::Relu => x.max(T::zero()),
            Unary::LeakyRelu(alpha) => {
                if x < T::zero() {
                    T::of(alpha) * x
                } else {
                    x
                }
            }
            Unary::Sigmoid => sigmoid(x),
            Unary::Tanh => x.tanh(),
        }
    }

    /// Derivative at input `x` with forward output `y`.
    pub fn derivative<T: Scalar>(self, x: T, y: T) -> T {
        match self {
            Unary::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Unary::LeakyRelu(alpha) => {
                if x < T::zero() {
                    T::of(alpha)
                } else {
                    T::one()
                }
            }
            Unary::Sigmoid => y * (T::one() - y),
            Unary::Tanh => T::one() - y * y,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Unary::Relu => "relu",
            Unary::LeakyRelu(_) => "leaky_relu",
            Unary::Sigmoid => "sigmoid",
            Unary::Tanh => "tanh",
        }
    }
}

/// `c ← a·b` (or `c += a·b` when `accumulate`), with `a` logically m×k and
/// `b` logically k×n. A transposed operand is stored row-major in its
/// transposed layout (k×m for `a`, n×k for `b`).
#[allow(clippy::too_many_arguments)]
pub(crate) fn gemm<T: Scalar>(
    m: usize,
    k: usize,
    n: usize,
    a: &[T],
    a_transposed: bool,
    b: &[T],
    b_transposed: bool,
    c: &mut [T],
    accumulate: bool,
) {
    assert!(a.len() >= m * k && b.len() >= k * n && c.len() >= m * n);
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    let beta = if accumulate { T::one() } else { T::zero() };
    // SAFETY: the assertions above bound every strided index by the buffer
    // lengths, and `c` is a distinct mutable borrow.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            T::one(),
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

fn check_finite<T: Scalar>(t: Tensor<T>, op: &str) -> Result<Tensor<T>> {
    if t.is_finite() {
        Ok(t)
    } else {
        Err(Error::NonFinite(op.into()))
    }
}

/// Matrix product of an m×k and a k×n tensor.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (sa, sb) = (a.shape(), b.shape());
    if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
        return Err(Error::Dimension(format!(
            "matmul needs [m,k]·[k,n], got {sa:?} · {sb:?}"
        )));
    }
    let (m, k, n) = (sa[0], sa[1], sb[1]);
    let mut out = vec![T::zero(); m * n];
    gemm(m, k, n, a.data(), false, b.data(), false, &mut out, false);
    check_finite(Tensor::from_parts(vec![m, n], out), "matmul")
}

/// Output spatial extents of a convolution or pooling window.
pub fn conv_output_dims(
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
) -> Result<(usize, usize)> {
    if stride == 0 {
        return Err(Error::Dimension("stride must be at least 1".into()));
    }
    let (ph, pw) = (h + 2 * padding, w + 2 * padding);
    if kh > ph || kw > pw || kh == 0 || kw == 0 {
        return Err(Error::Dimension(format!(
            "kernel {kh}x{kw} does not fit padded input {ph}x{pw}"
        )));
    }
    Ok(((ph - kh) / stride + 1, (pw - kw) / stride + 1))
}

/// Geometry of one 2-D convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(
        input: &[usize],
        kernel: &[usize],
        stride: usize,
        padding: usize,
    ) -> Result<(usize, usize, Self)> {
        if input.len() != 4 || kernel.len() != 4 || input[1] != kernel[1] {
            return Err(Error::Dimension(format!(
                "conv2d needs input [N,C,H,W] and kernels [F,C,kh,kw], got {input:?} and {kernel:?}"
            )));
        }
        let (ho, wo) = conv_output_dims(input[2], input[3], kernel[2], kernel[3], stride, padding)?;
        Ok((
            input[0],
            kernel[0],
            Self {
                c: input[1],
                h: input[2],
                w: input[3],
                kh: kernel[2],
                kw: kernel[3],
                stride,
                padding,
                ho,
                wo,
            },
        ))
    }

    pub fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn out_len(&self) -> usize {
        self.ho * self.wo
    }

    /// Unrolls one C×H×W sample into a (C·kh·kw)×(ho·wo) patch matrix.
    pub fn im2col<T: Scalar>(&self, sample: &[T], cols: &mut [T]) {
        let ow = self.out_len();
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let dst = &mut cols[row * ow..(row + 1) * ow];
                    for oy in 0..self.ho {
                        let y = (oy * self.stride + ki) as isize - self.padding as isize;
                        let line = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if y < 0 || y >= self.h as isize {
                            line.iter_mut().for_each(|v| *v = T::zero());
                            continue;
                        }
                        let src = &sample[(ci * self.h + y as usize) * self.w..][..self.w];
                        for (ox, v) in line.iter_mut().enumerate() {
                            let x = (ox * self.stride + kj) as isize - self.padding as isize;
                            *v = if x < 0 || x >= self.w as isize {
                                T::zero()
                            } else {
                                src[x as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`Self::im2col`]: scatters patch gradients back onto a sample.
    pub fn col2im_add<T: Scalar>(&self, cols: &[T], sample: &mut [T]) {
        let ow = self.out_len();
        for ci in 0..self.c {
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = (ci * self.kh + ki) * self.kw + kj;
                    let src = &cols[row * ow..(row + 1) * ow];
                    for oy in 0..self.ho {
                        let y = (oy * self.stride + ki) as isize - self.padding as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let dst = &mut sample[(ci * self.h + y as usize) * self.w..][..self.w];
                        for ox in 0..self.wo {
                            let x = (ox * self.stride + kj) as isize - self.padding as isize;
                            if x >= 0 && x < self.w as isize {
                                dst[x as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// 2-D cross-correlation (no kernel flip) of N×C×H×W input with F×C×kh×kw
/// kernels.
pub fn conv2d<T: Scalar>(
    input: &Tensor<T>,
    kernels: &Tensor<T>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, f, geom) = ConvGeom::new(input.shape(), kernels.shape(), stride, padding)?;
    let out = conv2d_raw(n, f, &geom, input.data(), kernels.data());
    check_finite(
        Tensor::from_parts(vec![n, f, geom.ho, geom.wo], out),
        "conv2d",
    )
}

pub(crate) fn conv2d_raw<T: Scalar>(
    n: usize,
    f: usize,
    geom: &ConvGeom,
    input: &[T],
    kernels: &[T],
) -> Vec<T> {
    let (pl, ol) = (geom.patch_len(), geom.out_len());
    let in_len = geom.c * geom.h * geom.w;
    let mut cols = vec![T::zero(); pl * ol];
    let mut out = vec![T::zero(); n * f * ol];
    for s in 0..n {
        geom.im2col(&input[s * in_len..(s + 1) * in_len], &mut cols);
        gemm(
            f,
            pl,
            ol,
            kernels,
            false,
            &cols,
            false,
            &mut out[s * f * ol..(s + 1) * f * ol],
            false,
        );
    }
    out
}

/// Non-overlapping max pooling with window `size` (floor on ragged edges).
/// Returns the pooled tensor and, per output element, the flat input index of
/// the winning element.
pub fn maxpool2d<T: Scalar>(input: &Tensor<T>, size: usize) -> Result<(Tensor<T>, Vec<usize>)> {
    let s = input.shape();
    if s.len() != 4 {
        return Err(Error::Dimension(format!(
            "maxpool needs [N,C,H,W], got {s:?}"
        )));
    }
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (ho, wo) = conv_output_dims(h, w, size, size, size, 0)?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * ho * wo);
    let mut arg = Vec::with_capacity(n * c * ho * wo);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..ho {
            for ox in 0..wo {
                let mut best = base + oy * size * w + ox * size;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = base + (oy * size + dy) * w + ox * size + dx;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best);
            }
        }
    }
    Ok((Tensor::from_parts(vec![n, c, ho, wo], out), arg))
}

/// Pointwise nonlinearity.
pub fn unary<T: Scalar>(kind: Unary, x: &Tensor<T>) -> Result<Tensor<T>> {
    x.map(|v| kind.apply(v))
}

/// Pointwise sum or product of two tensors of identical shape.
pub fn binary<T: Scalar>(kind: Binary, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.shape() != b.shape() {
        return Err(Error::Dimension(format!(
            "elementwise {kind:?} needs equal shapes, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| match kind {
            Binary::Add => x + y,
            Binary::Mul => x * y,
        })
        .collect();
    check_finite(Tensor::from_parts(a.shape().to_vec(), data), "elementwise")
}

pub fn scale<T: Scalar>(x: &Tensor<T>, factor: T) -> Result<Tensor<T>> {
    x.map(|v| v * factor)
}

/// Row-wise softmax of an N×K tensor, computed with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let s = logits.shape();
    if s.len() != 2 || s[1] < 2 {
        return Err(Error::Dimension(format!(
            "softmax needs [N,K] with K >= 2, got {s:?}"
        )));
    }
    let mut out = logits.data().to_vec();
    for row in out.chunks_mut(s[1]) {
        softmax_in_place(row);
    }
    check_finite(Tensor::from_parts(s.to_vec(), out), "softmax")
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_examples() {
        let a = Tensor::<f64>::from_rows(&[&[1., 2.], &[3., 4.]]).unwrap();
        let eye = Tensor::from_rows(&[&[1., 0.], &[0., 1.]]).unwrap();
        assert_eq!(matmul(&a, &eye).unwrap().data(), a.data());
        let zero = Tensor::zeros(&[2, 2]);
        assert_eq!(matmul(&a, &zero).unwrap().data(), &[0.; 4]);
        let b = Tensor::from_rows(&[&[5., 6.], &[7., 8.]]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[19., 22., 43., 50.]);
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[2, 3]);
        let err = matmul(&a, &b).unwrap_err().to_string();
        assert!(err.contains("[2, 3] · [2, 3]"), "{err}");
    }

    #[test]
    fn conv2d_examples() {
        let x = Tensor::<f64>::from_f64(&[1, 1, 3, 3], &[1., 2., 3., 4., 5., 6., 7., 8., 9.]).unwrap();
        let one = Tensor::filled(&[1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &one, 1, 0).unwrap().data(), x.data());

        let zeros = Tensor::<f64>::zeros(&[2, 3, 5, 5]);
        let k = Tensor::filled(&[4, 3, 3, 3], 0.7);
        let out = conv2d(&zeros, &k, 2, 1).unwrap();
        assert_eq!(out.shape(), &[2, 4, 3, 3]);
        assert!(out.data().iter().all(|&v| v == 0.0));

        let ones = Tensor::filled(&[1, 1, 2, 2], 1.0);
        let out = conv2d(&x, &ones, 1, 0).unwrap();
        assert_eq!(out.shape(), &[1, 1, 2, 2]);
        assert_eq!(out.data(), &[12., 16., 24., 28.]);
    }

    #[test]
    fn conv2d_rejects_oversized_kernel() {
        let x = Tensor::<f64>::zeros(&[1, 1, 3, 3]);
        let k = Tensor::zeros(&[1, 1, 4, 4]);
        assert!(matches!(conv2d(&x, &k, 1, 0), Err(Error::Dimension(_))));
        assert!(conv2d(&x, &k, 1, 1).is_ok());
        assert!(conv2d(&x, &Tensor::zeros(&[1, 1, 1, 1]), 0, 0).is_err());
    }

    #[test]
    fn elementwise_examples() {
        assert_eq!(Unary::Sigmoid.apply(0.0f64), 0.5);
        assert_eq!(Unary::Relu.apply(-3.0f64), 0.0);
        assert_eq!(Unary::Relu.apply(3.0f64), 3.0);
        assert!((Unary::LeakyRelu(0.2).apply(-2.0f64) + 0.4).abs() < 1e-15);
        assert!(sigmoid(-800.0f64).is_finite() && sigmoid(800.0f64) == 1.0);
        let a = Tensor::<f32>::zeros(&[2]);
        let b = Tensor::<f32>::zeros(&[3]);
        assert!(binary(Binary::Add, &a, &b).is_err());
    }

    #[test]
    fn softmax_examples() {
        let p = softmax(&Tensor::<f64>::from_rows(&[&[0., 0.]]).unwrap()).unwrap();
        assert_eq!(p.data(), &[0.5, 0.5]);
        let p = softmax(&Tensor::<f64>::from_rows(&[&[2f64.ln(), 0.]]).unwrap()).unwrap();
        assert!((p.data()[0] - 2. / 3.).abs() < 1e-15);
        assert!((p.data()[1] - 1. / 3.).abs() < 1e-15);
        let big = softmax(&Tensor::<f32>::from_rows(&[&[1000., -1000., 0.]]).unwrap()).unwrap();
        assert!(big.is_finite());
        assert!(softmax(&Tensor::<f64>::zeros(&[3, 1])).is_err());
    }

    #[test]
    fn maxpool_picks_window_maxima() {
        let x = Tensor::<f64>::from_f64(
            &[1, 1, 4, 4],
            &[1., 2., 3., 4., 5., 6., 7., 8., 9., 10., 11., 12., 13., 14., 15., 16.],
        )
        .unwrap();
        let (y, arg) = maxpool2d(&x, 2).unwrap();
        assert_eq!(y.data(), &[6., 8., 14., 16.]);
        assert_eq!(arg, vec![5, 7, 13, 15]);
        let odd = Tensor::<f64>::zeros(&[1, 2, 5, 5]);
        assert_eq!(maxpool2d(&odd, 2).unwrap().0.shape(), &[1, 2, 2, 2]);
    }
}
