use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::SIDE;

/// Bilinear resampling with pixel-center alignment: output pixel `(i, j)`
/// samples the source at `((i + 0.5)·h/oh − 0.5, (j + 0.5)·w/ow − 0.5)`,
/// clamped to the border.
pub fn resize_bilinear<T: Scalar>(src: &[T], h: usize, w: usize, oh: usize, ow: usize) -> Vec<T> {
    assert_eq!(src.len(), h * w);
    if h == oh && w == ow {
        return src.to_vec();
    }
    let axis = |o: usize, n: usize, extent: usize| {
        let pos = ((o as f64 + 0.5) * n as f64 / extent as f64 - 0.5).clamp(0.0, (n - 1) as f64);
        let lo = pos.floor() as usize;
        let hi = (lo + 1).min(n - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for i in 0..oh {
        let (y0, y1, fy) = axis(i, h, oh);
        for j in 0..ow {
            let (x0, x1, fx) = axis(j, w, ow);
            let at = |y: usize, x: usize| src[y * w + x].as_f64();
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out.push(T::of((top * (1.0 - fy) + bottom * fy).clamp(0.0, 1.0)));
        }
    }
    out
}

/// Resizes a `1×H×W` image to `1×28×28`.
pub fn rescale_to_28<T: Scalar>(image: &Tensor<T>) -> Tensor<T> {
    let s = image.shape();
    assert!(s.len() == 3 && s[0] == 1, "rescale_to_28 expects 1×H×W, got {s:?}");
    let data = resize_bilinear(image.data(), s[1], s[2], SIDE, SIDE);
    Tensor::from_parts(vec![1, SIDE, SIDE], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_size_is_identity() {
        let v: Vec<f64> = (0..784).map(|i| (i % 17) as f64 / 16.0).collect();
        let t = Tensor::new(&[1, 28, 28], v.clone()).unwrap();
        assert_eq!(rescale_to_28(&t).data(), &v[..]);
    }

    #[test]
    fn constants_are_preserved() {
        for (h, w) in [(1, 1), (5, 90), (64, 64), (13, 7)] {
            let t = Tensor::<f32>::filled(&[1, h, w], 0.5);
            assert!(rescale_to_28(&t).data().iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn halving_averages_neighbour_blocks() {
        let src = [0.0f64, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        assert_eq!(resize_bilinear(&src, 2, 4, 1, 2), vec![0.5, 0.5]);
    }
}
