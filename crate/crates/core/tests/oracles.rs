use adagan::data::rescale_to_28;
use adagan::gan::sample_latent;
use adagan::nn::{generator_loss, GeneratorLossMode};
use adagan::rng::rng_from_seed;
use adagan::tensor::ops::{conv2d, matmul};
use adagan::Tensor64;
use rand::Rng;

fn random(shape: &[usize], seed: u64) -> Tensor64 {
    let mut rng = rng_from_seed(seed);
    let n = shape.iter().product();
    Tensor64::new(shape, (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn naive_matmul(a: &Tensor64, b: &Tensor64) -> Vec<f64> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                out[i * n + j] += a.data()[i * k + p] * b.data()[p * n + j];
            }
        }
    }
    out
}

fn naive_conv(x: &Tensor64, k: &Tensor64, stride: usize, pad: usize) -> (Vec<usize>, Vec<f64>) {
    let s = x.shape();
    let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
    let (f, kh, kw) = (k.shape()[0], k.shape()[2], k.shape()[3]);
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = Vec::new();
    for b in 0..n {
        for o in 0..f {
            for y in 0..oh {
                for x0 in 0..ow {
                    let mut acc = 0.0;
                    for ch in 0..c {
                        for dy in 0..kh {
                            for dx in 0..kw {
                                let iy = (y * stride + dy) as isize - pad as isize;
                                let ix = (x0 * stride + dx) as isize - pad as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                    continue;
                                }
                                let xv = x.data()[((b * c + ch) * h + iy as usize) * w + ix as usize];
                                let kv = k.data()[((o * c + ch) * kh + dy) * kw + dx];
                                acc += xv * kv;
                            }
                        }
                    }
                    out.push(acc);
                }
            }
        }
    }
    (vec![n, f, oh, ow], out)
}

#[test]
fn matmul_matches_triple_loop() {
    for (seed, (m, k, n)) in [(1, 17, 5), (2, 1, 9), (3, 33, 64), (4, 64, 7)].into_iter().enumerate() {
        let a = random(&[m, k], seed as u64);
        let b = random(&[k, n], 100 + seed as u64);
        let got = matmul(&a, &b).unwrap();
        for (g, e) in got.data().iter().zip(naive_matmul(&a, &b)) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }
}

#[test]
fn conv_matches_direct_sum() {
    let cases = [
        ([2, 1, 9, 9], [4, 1, 3, 3], 1, 0),
        ([1, 3, 8, 7], [2, 3, 3, 3], 2, 1),
        ([3, 2, 6, 6], [5, 2, 5, 5], 1, 2),
        ([1, 1, 28, 28], [8, 1, 3, 3], 1, 1),
    ];
    for (i, (xs, ks, stride, pad)) in cases.into_iter().enumerate() {
        let x = random(&xs, i as u64);
        let k = random(&ks, 50 + i as u64);
        let got = conv2d(&x, &k, stride, pad).unwrap();
        let (shape, want) = naive_conv(&x, &k, stride, pad);
        assert_eq!(got.shape(), &shape[..]);
        for (g, e) in got.data().iter().zip(want) {
            assert!((g - e).abs() < 1e-12, "case {i}: {g} vs {e}");
        }
    }
}

#[test]
fn checkerboard_rescale_matches_bilinear_formula() {
    let side = 56;
    let src: Vec<f64> = (0..side * side)
        .map(|i| if ((i / side) / 3 + (i % side) / 3) % 2 == 0 { 1.0 } else { 0.0 })
        .collect();
    let image = Tensor64::new(&[1, side, side], src.clone()).unwrap();
    let out = rescale_to_28(&image);
    let scale = side as f64 / 28.0;
    for i in 0..28 {
        for j in 0..28 {
            let sy = ((i as f64 + 0.5) * scale - 0.5).max(0.0).min((side - 1) as f64);
            let sx = ((j as f64 + 0.5) * scale - 0.5).max(0.0).min((side - 1) as f64);
            let (y0, x0) = (sy.floor(), sx.floor());
            let (y1, x1) = (sy.ceil(), sx.ceil());
            let (wy, wx) = (sy - y0, sx - x0);
            let px = |y: f64, x: f64| src[y as usize * side + x as usize];
            let want = (1.0 - wy) * ((1.0 - wx) * px(y0, x0) + wx * px(y0, x1))
                + wy * ((1.0 - wx) * px(y1, x0) + wx * px(y1, x1));
            let got = out.data()[i * 28 + j];
            assert!((got - want).abs() < 1e-6, "({i},{j}) {got} vs {want}");
        }
    }
}

#[test]
fn latent_draws_are_standard_normal() {
    let z = sample_latent::<f64>(10_000, 1, &mut rng_from_seed(9));
    let n = z.len() as f64;
    let mean = z.data().iter().sum::<f64>() / n;
    let var = z.data().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    assert!(mean.abs() <= 0.05, "mean {mean}");
    assert!((var - 1.0).abs() <= 0.1, "variance {var}");
}

#[test]
fn both_generator_losses_push_d_fake_upward() {
    let h = 1e-6;
    for mode in [GeneratorLossMode::Minimax, GeneratorLossMode::NonSaturating] {
        for d in [0.05, 0.3, 0.5, 0.8, 0.95] {
            let up = generator_loss(&[d + h], mode).unwrap();
            let down = generator_loss(&[d - h], mode).unwrap();
            let slope = (up - down) / (2.0 * h);
            assert!(slope < 0.0, "{mode:?} at {d}: slope {slope}");
        }
    }
}
