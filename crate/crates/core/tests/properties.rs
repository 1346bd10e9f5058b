use adagan::adversarial::{fgsm_perturb, random_perturb};
use adagan::data::idx::{encode_idx_images, encode_idx_labels, parse_idx_images, parse_idx_labels, quantize};
use adagan::data::split_indices;
use adagan::nn::{cross_entropy, discriminator_loss, generator_loss, GeneratorLossMode, Network, NetworkSpec};
use adagan::pipeline::{gate_batch, select_best};
use adagan::report::{format_metrics, image_grid, parse_metrics, MetricRecord, GRID_SEPARATOR};
use adagan::rng::rng_from_seed;
use adagan::{Tensor32, Tensor64};
use proptest::prelude::*;

fn probs() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.001f64..0.999, 1..12)
}

fn rotate<T: Clone>(v: &[T], by: usize) -> Vec<T> {
    let mut out = v.to_vec();
    out.rotate_left(by % v.len().max(1));
    out
}

fn unit_images(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..=1.0, n * 784)
}

fn mlp(classes: usize, seed: u64) -> Network<f64> {
    Network::build(&NetworkSpec::preset("mlp", classes).unwrap(), &mut rng_from_seed(seed)).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn gan_losses_ignore_batch_order(real in probs(), fake in probs(), by in 0usize..12) {
        let d = discriminator_loss(&real, &fake).unwrap();
        let d_rot = discriminator_loss(&rotate(&real, by), &rotate(&fake, by + 1)).unwrap();
        prop_assert!((d - d_rot).abs() < 1e-12);
        for mode in [GeneratorLossMode::Minimax, GeneratorLossMode::NonSaturating] {
            let g = generator_loss(&fake, mode).unwrap();
            prop_assert!((g - generator_loss(&rotate(&fake, by), mode).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn cross_entropy_ignores_row_order(
        rows in prop::collection::vec((prop::collection::vec(0.01f64..1.0, 4), 0usize..4), 1..8),
        by in 0usize..8,
    ) {
        let build = |rows: &[(Vec<f64>, usize)]| {
            let mut data = Vec::new();
            for (r, _) in rows {
                let s: f64 = r.iter().sum();
                data.extend(r.iter().map(|v| v / s));
            }
            let labels: Vec<usize> = rows.iter().map(|r| r.1).collect();
            (Tensor64::new(&[rows.len(), 4], data).unwrap(), labels)
        };
        let (p, y) = build(&rows);
        let (q, z) = build(&rotate(&rows, by));
        let a = cross_entropy(&p, &y).unwrap();
        let b = cross_entropy(&q, &z).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        prop_assert!(a >= 0.0);
    }

    #[test]
    fn gate_accepts_exactly_at_or_above_threshold(
        pixels in unit_images(4),
        class in 0usize..3,
        threshold in 0.01f64..0.99,
        seed in any::<u64>(),
    ) {
        let net = mlp(3, seed);
        let images = Tensor64::new(&[4, 1, 28, 28], pixels).unwrap();
        let probs = net.predict(&images).unwrap();
        let gated = gate_batch(&images, class, &net, threshold).unwrap();
        prop_assert_eq!(gated.len(), 4);
        for (i, s) in gated.iter().enumerate() {
            prop_assert_eq!(s.confidence, probs.item(i)[class]);
            prop_assert_eq!(s.accepted, s.confidence >= threshold);
            prop_assert_eq!(s.label, class);
            prop_assert_eq!(s.image.data(), images.item(i));
        }
    }

    #[test]
    fn select_best_is_the_earliest_maximum_and_scale_free(
        acc in prop::collection::vec(0.0f64..1.0, 1..10),
        scale in 0.1f64..10.0,
    ) {
        let best = select_best(&acc).unwrap();
        let max = acc.iter().cloned().fold(f64::MIN, f64::max);
        prop_assert_eq!(acc[best], max);
        prop_assert!(acc[..best].iter().all(|&a| a < max));
        let scaled: Vec<f64> = acc.iter().map(|a| a * scale).collect();
        prop_assert_eq!(select_best(&scaled).unwrap(), best);
    }

    #[test]
    fn metrics_round_trip(
        rows in prop::collection::vec(("[a-z_]{1,8}", 0usize..50, "(train|test|probe)", "[a-z_]{1,8}", -1e6f64..1e6), 0..20),
    ) {
        let records: Vec<MetricRecord> =
            rows.iter().map(|(s, e, sp, m, v)| MetricRecord::new(s, *e, sp, m, *v)).collect();
        let text = format_metrics(&records).unwrap();
        let parsed = parse_metrics(&text).unwrap();
        prop_assert_eq!(parsed.len(), records.len());
        prop_assert!(parsed.windows(2).all(|w| (&w[0].stage, w[0].epoch) <= (&w[1].stage, w[1].epoch)));
        prop_assert_eq!(format_metrics(&parsed).unwrap(), text);
        let mut a: Vec<String> = records.iter().map(|r| format!("{r:?}")).collect();
        let mut b: Vec<String> = parsed.iter().map(|r| format!("{r:?}")).collect();
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn grid_dimensions_follow_layout(n in 1usize..12, columns in 1usize..6) {
        let images = Tensor32::filled(&[n, 1, 28, 28], 1.0);
        let (w, h, px) = image_grid(&images, columns).unwrap();
        let cols = columns.min(n);
        let rows = n.div_ceil(cols);
        prop_assert_eq!(w, cols * 28 + (cols - 1) * GRID_SEPARATOR);
        prop_assert_eq!(h, rows * 28 + (rows - 1) * GRID_SEPARATOR);
        prop_assert_eq!(px.iter().filter(|&&p| p == 255).count(), n * 784);
    }

    #[test]
    fn perturbations_stay_in_the_unit_box(
        pixels in unit_images(2),
        eps in 0.0f64..=0.5,
        seed in any::<u64>(),
    ) {
        let images = Tensor64::new(&[2, 1, 28, 28], pixels).unwrap();
        let net = mlp(3, seed);
        let fgsm = fgsm_perturb(&images, &[0, 2], &net, eps).unwrap();
        let noisy = random_perturb(&images, eps, &mut rng_from_seed(seed)).unwrap();
        for out in [&fgsm, &noisy] {
            for (&a, &b) in out.data().iter().zip(images.data()) {
                prop_assert!((0.0..=1.0).contains(&a));
                prop_assert!((a - b).abs() <= eps + 1e-12);
            }
        }
    }

    #[test]
    fn idx_round_trip_is_exact(bytes in prop::collection::vec(any::<u8>(), 784..=784 * 3), labels in prop::collection::vec(0usize..256, 1..20)) {
        let n = bytes.len() / 784;
        let values: Vec<f64> = bytes[..n * 784].iter().map(|&b| f64::from(b) / 255.0).collect();
        let images = Tensor64::new(&[n, 1, 28, 28], values).unwrap();
        let encoded = encode_idx_images(&images).unwrap();
        let back = parse_idx_images::<f64>(&encoded).unwrap();
        prop_assert_eq!(&back, &images);
        let raw: Vec<u8> = back.data().iter().map(|&v| quantize(v)).collect();
        prop_assert_eq!(&raw[..], &bytes[..n * 784]);
        prop_assert_eq!(parse_idx_labels(&encode_idx_labels(&labels).unwrap()).unwrap(), labels);
    }

    #[test]
    fn split_partitions_every_class(
        labels in prop::collection::vec(0usize..4, 8..60),
        fraction in 0.05f64..0.95,
        seed in any::<u64>(),
    ) {
        let counts: Vec<usize> = (0..4).map(|c| labels.iter().filter(|&&l| l == c).count()).collect();
        prop_assume!(counts.iter().all(|&n| n == 0 || n >= 2));
        let (train, test) = split_indices(&labels, 4, fraction, seed).unwrap();
        let mut all: Vec<usize> = train.iter().chain(&test).copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for (c, &n) in counts.iter().enumerate() {
            if n > 0 {
                let t = test.iter().filter(|&&i| labels[i] == c).count();
                prop_assert!(t >= 1 && t < n);
            }
        }
    }
}

#[test]
fn quantization_rounds_half_up() {
    assert_eq!(quantize(0.5f64), 128);
    assert_eq!(quantize(0.5f64 / 255.0), 1);
    assert_eq!(quantize(-0.3f64), 0);
    assert_eq!(quantize(1.7f64), 255);
}
