use adagan::data::GlyphSpec;
use adagan::gan::{train_gan_per_class, GanConfig};
use adagan::{Dataset32, Tensor32};

/// One glyph image replicated into a single batch of 32.
fn single_image_dataset() -> Dataset32 {
    let img: Vec<f32> = GlyphSpec::derive(0, 1, 11)
        .unwrap()
        .rasterize(0)
        .into_iter()
        .map(|v| v as f32)
        .collect();
    let data = img.iter().copied().cycle().take(32 * 784).collect();
    Dataset32::new(Tensor32::new(&[32, 1, 28, 28], data).unwrap(), vec![0; 32], 1).unwrap()
}

#[test]
#[ignore = "does not hold under the default optimizer: the discriminator outpaces the generator, probe falls from ~0.45 to ~0.2 in all ten seeds"]
fn probe_rises_on_a_single_image_in_most_seeds() {
    let data = single_image_dataset();
    let cfg = GanConfig {
        epochs: 50,
        ..GanConfig::default()
    };
    let seeds: Vec<u64> = (0..10).collect();
    let mut rises = 0;
    for &seed in &seeds {
        let (_, report) = train_gan_per_class(&data, 0, &cfg, seed).unwrap();
        let first = report.records[0].probe_d_fake;
        let last = report.records[49].probe_d_fake;
        println!("seed {seed}: epoch 1 {first:.4} -> epoch 50 {last:.4}");
        rises += usize::from(last > first);
    }
    assert!(rises >= 8, "probe rose in only {rises} of {} seeds", seeds.len());
}
