use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use adagan::config::{parse_config, resolve_seed, ExperimentConfig, SEED_ENV};
use adagan::data::idx::{write_idx_images, write_idx_labels};
use adagan::data::MnistSplit;
use adagan::gan::{generate, load_checkpoint, save_checkpoint, train_gan_per_class, GanPair};
use adagan::nn::{
    evaluate_accuracy, gradcheck_suite, GradCheckOptions, Network, NetworkSpec, GRADCHECK_TOLERANCE,
};
use adagan::pipeline::{
    audit_attempt_log, augmentation_targets, generate_augmented_set, load_network, run_ada_gan, save_network,
    select_best, train_candidates, AugmentedSample, ClassifierOptions, PipelineRun,
};
use adagan::report::{dump_image_grid, format_metrics, MetricRecord};
use adagan::rng::{derive_seed, name_tag, rng_from_seed, substream};
use adagan::{Dataset32, Error, Result, Tensor32};
use serde_json::json;

use crate::output::OutputDir;
use crate::{Command, Common, Failure};

const DEFAULT_OUT: &str = "out";
const GRID_SAMPLES: usize = 64;
const GRID_COLUMNS: usize = 8;

pub fn run(command: Command) -> std::result::Result<(), Failure> {
    match command {
        Command::TrainBaseline { common, epochs } => train_baseline(&common, epochs),
        Command::TrainGan { common, epochs, class } => train_gan(&common, epochs, class),
        Command::Augment { common, model, gans } => augment(&common, &model, &gans),
        Command::RunPipeline { common, epochs } => run_pipeline(&common, epochs),
        Command::Eval { common, model } => eval(&common, model.as_deref()),
        Command::Gradcheck { common, seeds } => gradcheck(&common, seeds),
        Command::SynthData { common } => synth_data(&common),
    }
}

/// Config file (or defaults) with the seed resolved by precedence.
fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => parse_config(p)?,
        None => ExperimentConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    cfg.seed = resolve_seed(common.seed, env.as_deref(), cfg.seed)?;
    if let Some(out) = &common.out {
        cfg.out = Some(out.clone());
    }
    cfg.out.get_or_insert_with(|| PathBuf::from(DEFAULT_OUT));
    cfg.validate()?;
    Ok(cfg)
}

fn claim(cfg: &ExperimentConfig) -> Result<OutputDir> {
    let out = OutputDir::claim(cfg.out.as_deref().expect("out resolved by load_config"))?;
    out.echo_config(cfg)?;
    Ok(out)
}

fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset32, Dataset32)> {
    cfg.dataset.load::<f32>(cfg.seed).map_err(|e| e.in_stage("data"))
}

fn classifier_options(cfg: &ExperimentConfig, epochs: usize) -> ClassifierOptions {
    ClassifierOptions {
        epochs,
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
    }
}

fn train_baseline(common: &Common, epochs: Option<usize>) -> std::result::Result<(), Failure> {
    let mut cfg = load_config(common)?;
    if let Some(e) = epochs {
        cfg.candidates.epochs = e;
    }
    let out = claim(&cfg)?;
    let (train, test) = load_data(&cfg)?;
    let specs = cfg.candidate_specs(train.class_count())?;
    let opts = classifier_options(&cfg, cfg.candidates.epochs);
    let candidates = train_candidates(&train, &test, &specs, &opts, cfg.seed)?;
    let mut metrics = Vec::new();
    let mut summaries = Vec::new();
    for c in &candidates {
        let stage = format!("candidate_{}", c.name);
        for h in &c.history {
            metrics.push(MetricRecord::new(&stage, h.epoch, "train", "loss", h.loss));
            metrics.push(MetricRecord::new(&stage, h.epoch, "train", "accuracy", h.train_accuracy));
            metrics.push(MetricRecord::new(&stage, h.epoch, "test", "accuracy", h.test_accuracy));
        }
        save_network(&c.network, out.file(&format!("{stage}.bin")))?;
        summaries.push(json!({
            "name": c.name,
            "train_accuracy": c.train_accuracy,
            "test_accuracy": c.test_accuracy,
        }));
        println!("{:<12} test accuracy {:.4}", c.name, c.test_accuracy);
    }
    let accuracies: Vec<f64> = candidates.iter().map(|c| c.test_accuracy).collect();
    let best = &candidates[select_best(&accuracies)?];
    save_network(&best.network, out.file("best.bin"))?;
    println!("selected {}", best.name);
    out.write("metrics.csv", format_metrics(&metrics)?)?;
    out.write_json(
        "report.json",
        &json!({ "command": "train-baseline", "candidates": summaries, "selected": best.name }),
    )?;
    Ok(())
}

fn gan_file(class: usize) -> String {
    format!("gan_c{class:02}.ckpt")
}

fn sample_grid(pair: &GanPair<f32>, seed: u64, path: &Path) -> Result<()> {
    let mut rng = substream(seed, &[name_tag("grid"), pair.class_id as u64]);
    dump_image_grid(&generate(pair, GRID_SAMPLES, &mut rng)?, GRID_COLUMNS, path)
}

fn train_gan(common: &Common, epochs: Option<usize>, class: Option<usize>) -> std::result::Result<(), Failure> {
    let mut cfg = load_config(common)?;
    if let Some(e) = epochs {
        cfg.gan.epochs = e;
    }
    let out = claim(&cfg)?;
    let (train, _) = load_data(&cfg)?;
    let classes: Vec<usize> = match class {
        Some(c) if c >= train.class_count() => {
            return Err(Failure::config(format!(
                "--class {c} out of range for {} classes",
                train.class_count()
            )))
        }
        Some(c) => vec![c],
        None => (0..train.class_count()).filter(|&c| !train.class_indices(c).is_empty()).collect(),
    };
    let seed = derive_seed(cfg.seed, &[name_tag("gan")]);
    let mut metrics = Vec::new();
    let mut summaries = Vec::new();
    for c in classes {
        let (pair, report) = train_gan_per_class(&train, c, &cfg.gan, seed).map_err(|e| e.in_stage("gan"))?;
        let stage = format!("gan_c{c:02}");
        for r in &report.records {
            metrics.push(MetricRecord::new(&stage, r.epoch, "train", "d_loss", r.d_loss));
            metrics.push(MetricRecord::new(&stage, r.epoch, "train", "g_loss", r.g_loss));
            metrics.push(MetricRecord::new(&stage, r.epoch, "probe", "d_fake", r.probe_d_fake));
        }
        save_checkpoint(&pair, out.file(&gan_file(c)))?;
        sample_grid(&pair, seed, &out.file(&format!("{stage}.pgm")))?;
        let (first, last) = (report.records.first(), report.records.last());
        println!(
            "class {c}: probe D(G(z)) {} -> {}",
            first.map_or("-".into(), |r| format!("{:.4}", r.probe_d_fake)),
            last.map_or("-".into(), |r| format!("{:.4}", r.probe_d_fake)),
        );
        summaries.push(json!({
            "class": c,
            "epochs": report.records.len(),
            "first_probe_d_fake": first.map(|r| r.probe_d_fake),
            "final_probe_d_fake": last.map(|r| r.probe_d_fake),
        }));
    }
    out.write("metrics.csv", format_metrics(&metrics)?)?;
    out.write_json("report.json", &json!({ "command": "train-gan", "gans": summaries }))?;
    Ok(())
}

/// One row per gate attempt.
fn attempts_csv(log: &[AugmentedSample<f32>]) -> String {
    let mut s = String::from("class,attempt,confidence,accepted,epsilon,mode\n");
    for a in log {
        let mode = serde_json::to_value(a.perturb_mode).expect("unit enum serializes");
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            a.label,
            a.attempt,
            a.confidence,
            a.accepted,
            a.epsilon_used,
            mode.as_str().unwrap_or_default()
        );
    }
    s
}

/// Writes accepted samples as IDX plus per-class grids; nothing when none were accepted.
fn write_augmented(out: &OutputDir, accepted: &[AugmentedSample<f32>], classes: &[usize]) -> Result<()> {
    if accepted.is_empty() {
        return Ok(());
    }
    let mut data = Vec::new();
    for a in accepted {
        data.extend_from_slice(a.image.data());
    }
    let labels: Vec<usize> = accepted.iter().map(|a| a.label).collect();
    let images = Tensor32::new(&[accepted.len(), 1, 28, 28], data)?;
    write_idx_images(out.file("augmented-images-idx3-ubyte"), &images)?;
    write_idx_labels(out.file("augmented-labels-idx1-ubyte"), &labels)?;
    for &c in classes {
        let idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == c).take(GRID_SAMPLES).collect();
        if !idx.is_empty() {
            dump_image_grid(&images.select(&idx), GRID_COLUMNS, out.file(&format!("augmented_c{c:02}.pgm")))?;
        }
    }
    Ok(())
}

fn augment(common: &Common, model: &Path, gans_dir: &Path) -> std::result::Result<(), Failure> {
    let cfg = load_config(common)?;
    let out = claim(&cfg)?;
    let (train, _) = load_data(&cfg)?;
    let classifier: Network<f32> = load_network(model).map_err(|e| e.in_stage("data"))?;
    let mut gans = BTreeMap::new();
    let mut targets = BTreeMap::new();
    for (c, t) in augmentation_targets(&cfg, &train.class_counts()) {
        let path = gans_dir.join(gan_file(c));
        if path.exists() {
            gans.insert(c, load_checkpoint::<f32>(&path, cfg.gan.learning_rate).map_err(|e| e.in_stage("data"))?);
            targets.insert(c, t);
        }
    }
    if gans.is_empty() {
        return Err(Error::Input(format!("no gan_cNN.ckpt checkpoints found in {}", gans_dir.display()))
            .in_stage("data")
            .into());
    }
    let result = generate_augmented_set(
        &gans,
        &classifier,
        &targets,
        &cfg.perturb,
        cfg.threshold,
        cfg.max_attempts_factor,
        cfg.noise_order,
        derive_seed(cfg.seed, &[name_tag("augment")]),
    )
    .map_err(|e| e.in_stage("augment"))?;
    let mismatches = audit_attempt_log(&result.log, &classifier, cfg.threshold)?;
    let classes: Vec<usize> = targets.keys().copied().collect();
    write_augmented(&out, &result.accepted, &classes)?;
    out.write("attempts.csv", attempts_csv(&result.log))?;
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    println!(
        "accepted {} of {} attempts ({:.4}), audit mismatches {mismatches}",
        result.accepted.len(),
        result.log.len(),
        result.acceptance_rate()
    );
    out.write_json(
        "report.json",
        &json!({
            "command": "augment",
            "per_class": result.per_class,
            "attempts": result.log.len(),
            "accepted": result.accepted.len(),
            "acceptance_rate": result.acceptance_rate(),
            "audit_mismatches": mismatches,
            "warnings": result.warnings,
        }),
    )?;
    Ok(())
}

/// Writes every artifact a (possibly partial) run produced.
fn persist_run(out: &OutputDir, run: &PipelineRun<f32>, seed: u64) -> Result<()> {
    out.write("report.json", run.report.to_json()?)?;
    out.write("metrics.csv", format_metrics(&run.metrics)?)?;
    let gan_seed = derive_seed(seed, &[name_tag("gan")]);
    for (c, pair) in &run.gans {
        save_checkpoint(pair, out.file(&gan_file(*c)))?;
        sample_grid(pair, gan_seed, &out.file(&format!("gan_c{c:02}.pgm")))?;
    }
    if let Some(aug) = &run.augmentation {
        out.write("attempts.csv", attempts_csv(&aug.log))?;
        let classes: Vec<usize> = aug.per_class.iter().map(|p| p.class).collect();
        write_augmented(out, &aug.accepted, &classes)?;
    }
    for (name, net) in [("selected.bin", &run.selected), ("external.bin", &run.external), ("baseline.bin", &run.baseline)] {
        if let Some(net) = net {
            save_network(net, out.file(name))?;
        }
    }
    Ok(())
}

fn run_pipeline(common: &Common, epochs: Option<usize>) -> std::result::Result<(), Failure> {
    let mut cfg = load_config(common)?;
    if let Some(e) = epochs {
        cfg.candidates.epochs = e;
        cfg.external.epochs = e;
    }
    let out = claim(&cfg)?;
    match run_ada_gan::<f32>(&cfg) {
        Ok(run) => {
            persist_run(&out, &run, cfg.seed)?;
            if let Some(aug) = &run.report.augmentation {
                for w in &aug.warnings {
                    eprintln!("warning: {w}");
                }
                println!("augmented {} of {} attempts", aug.accepted, aug.attempts);
            }
            let acc = |s: &Option<adagan::pipeline::ClassifierSummary>| {
                s.as_ref().and_then(|s| s.final_test_accuracy).map_or("-".into(), |a| format!("{a:.4}"))
            };
            println!(
                "selected {}, external accuracy {}, baseline accuracy {}",
                run.report.selected.as_deref().unwrap_or("-"),
                acc(&run.report.external),
                acc(&run.report.baseline)
            );
            Ok(())
        }
        Err(abort) => {
            persist_run(&out, &abort.run, cfg.seed)?;
            Err(abort.error.into())
        }
    }
}

fn eval(common: &Common, model: Option<&Path>) -> std::result::Result<(), Failure> {
    let cfg = load_config(common)?;
    let out = claim(&cfg)?;
    let (_, test) = load_data(&cfg)?;
    let net: Network<f32> = match model {
        Some(p) => load_network(p).map_err(|e| e.in_stage("data"))?,
        None => {
            let spec = NetworkSpec::preset(&cfg.candidates.presets[0], test.class_count())?;
            Network::build(&spec, &mut rng_from_seed(derive_seed(cfg.seed, &[name_tag("eval")])))?
        }
    };
    if net.class_count() != Some(test.class_count()) {
        return Err(Failure {
            code: 1,
            tag: "E_FORMAT",
            message: format!(
                "model `{}` predicts {:?} classes but the dataset has {}",
                net.name(),
                net.class_count(),
                test.class_count()
            ),
        });
    }
    let accuracy = evaluate_accuracy(&net, &test)?;
    println!("accuracy {accuracy:.4} on {} test images", test.len());
    out.write_json(
        "report.json",
        &json!({
            "command": "eval",
            "model": net.name(),
            "trained": model.is_some(),
            "test_size": test.len(),
            "accuracy": accuracy,
        }),
    )?;
    Ok(())
}

fn gradcheck(common: &Common, seeds: Option<usize>) -> std::result::Result<(), Failure> {
    let cfg = load_config(common)?;
    let mut opts = GradCheckOptions {
        seed: cfg.seed,
        ..GradCheckOptions::default()
    };
    if let Some(s) = seeds {
        if s == 0 {
            return Err(Failure::config("--seeds must be ≥ 1"));
        }
        opts.seeds = s;
    }
    let records = gradcheck_suite(&opts)?;
    let mut failed = 0;
    for r in &records {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        failed += usize::from(!r.passed());
        println!("{:<28} max rel err {:.3e}  {verdict}", r.name, r.max_relative_error);
    }
    if common.out.is_some() {
        let out = claim(&cfg)?;
        out.write_json("report.json", &json!({ "command": "gradcheck", "cases": records }))?;
    }
    if failed > 0 {
        return Err(Failure::train(format!(
            "{failed} of {} gradient checks exceed {GRADCHECK_TOLERANCE:e}",
            records.len()
        )));
    }
    Ok(())
}

fn synth_data(common: &Common) -> std::result::Result<(), Failure> {
    let cfg = load_config(common)?;
    let out = claim(&cfg)?;
    let (train, test) = load_data(&cfg)?;
    for (split, data) in [(MnistSplit::Train, &train), (MnistSplit::Test, &test)] {
        let (images, labels) = split.file_names();
        write_idx_images(out.file(images), data.images())?;
        write_idx_labels(out.file(labels), data.labels())?;
    }
    let shown: Vec<usize> = (0..train.len().min(GRID_SAMPLES)).collect();
    if !shown.is_empty() {
        dump_image_grid(&train.images().select(&shown), GRID_COLUMNS, out.file("samples.pgm"))?;
    }
    println!(
        "wrote {} train and {} test images in {} classes",
        train.len(),
        test.len(),
        train.class_count()
    );
    out.write_json(
        "report.json",
        &json!({
            "command": "synth-data",
            "classes": train.class_count(),
            "train_size": train.len(),
            "test_size": test.len(),
            "train_class_counts": train.class_counts(),
        }),
    )?;
    Ok(())
}
