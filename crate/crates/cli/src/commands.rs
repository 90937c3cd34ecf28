//! Subcommand bodies. Each reads the resolved config, writes its artifacts
//! under the run directory and returns a metric summary.

use std::fs;
use std::path::{Path, PathBuf};

use demixgan::data::{load_labeled, save_derived_set, write_idx_images, ImageSet, Pairing};
use demixgan::eval::{
    classify_accuracy, component_purity, train_probe_classifier, write_montage, write_sample_grid, MetricReport,
    ProbeClassifier, Purity, GRID_SIDE,
};
use demixgan::ica::{align_sources, fast_ica, fit_affine, simulate_ica_mixing};
use demixgan::inversion::{invert_cs, invert_demix, invert_denoise, InversionOptions};
use demixgan::io::write_atomic;
use demixgan::rng;
use demixgan::sensing::{lasso_solve, make_gaussian_operator};
use demixgan::spectral::run_theory_suite;
use demixgan::train::{discriminator_accuracy, GanState, TrainConfig, TrainMode, ZLink};
use ndarray::{concatenate, s, Array1, Array2, Array3, ArrayView3, Axis};
use rand::seq::index;
use serde::Serialize;
use serde_json::{json, Value};

use crate::config::{Component, DataConfig, RunConfig, Seeds, SignalKind};
use crate::data::{self, Split};
use crate::{CliError, Command};

pub struct Context<'a> {
    pub out: &'a Path,
    pub config: &'a mut RunConfig,
    pub seeds: &'a Seeds,
    pub checkpoint: Option<&'a Path>,
}

/// Metric summary of a finished run. `failure` marks runs that completed
/// but whose checks did not pass; the manifest is written either way.
pub struct Report {
    pub metrics: Value,
    pub failure: Option<CliError>,
}

impl Report {
    fn ok(metrics: Value) -> Self {
        Self { metrics, failure: None }
    }
}

pub fn dispatch(command: Command, ctx: Context<'_>) -> Result<Report, CliError> {
    match command {
        Command::TrainDenoise => train_denoise(ctx),
        Command::TrainDemix => train_demix(ctx),
        Command::InvertDenoise => invert_denoise_cmd(ctx),
        Command::InvertDemix => invert_demix_cmd(ctx),
        Command::CsInvert => cs_invert(ctx),
        Command::CsLasso => cs_lasso(ctx),
        Command::IcaDemix => ica_demix(ctx),
        Command::EvalMetrics => eval_metrics(ctx),
        Command::TrainClassifier => train_classifier(ctx),
        Command::TheoryCheck => theory_check(ctx),
        Command::MakeCorruption => make_corruption(ctx),
        Command::FailureAblation => failure_ablation(ctx),
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io(path.display().to_string(), e)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    write_atomic(path, serde_json::to_string_pretty(value)?.as_bytes()).map_err(io_err(path))
}

fn write_idx(path: &Path, images: &Array3<f32>) -> Result<(), CliError> {
    write_atomic(path, &write_idx_images(images)).map_err(io_err(path))
}

fn check_shape(config: &RunConfig) -> Result<(), CliError> {
    if config.train.arch.image_shape != config.data.shape {
        return Err(CliError::ConfigInvalid(format!(
            "train.arch.image_shape {:?} differs from data.shape {:?}",
            config.train.arch.image_shape, config.data.shape
        )));
    }
    Ok(())
}

/// Per-image inversion seeds, so restarts differ between images.
fn image_options(base: &InversionOptions, i: usize) -> InversionOptions {
    InversionOptions {
        seed: rng::derive_seed(base.seed, &format!("image-{i}")),
        ..base.clone()
    }
}

/// Stacks the first `cols` images of each row set into one montage.
fn write_rows(rows: &[ArrayView3<'_, f32>], path: &Path) -> Result<(), CliError> {
    let cols = rows.iter().map(|r| r.len_of(Axis(0))).min().unwrap_or(0).min(GRID_SIDE);
    if cols == 0 {
        return Ok(());
    }
    let parts: Vec<_> = rows.iter().map(|r| r.slice(s![..cols, .., ..])).collect();
    let stacked = concatenate(Axis(0), &parts).expect("equal image shapes");
    Ok(write_montage(stacked.view(), rows.len(), cols, path)?)
}

/// Two 8×8 sample grids side by side (G1 left, G2 right).
fn write_side_by_side(samples: &[Array3<f32>], path: &Path) -> Result<(), CliError> {
    let n = GRID_SIDE;
    let (_, h, w) = samples[0].dim();
    let mut out = Array3::zeros((2 * n * n, h, w));
    for r in 0..n {
        for c in 0..2 * n {
            let src = &samples[c / n];
            out.index_axis_mut(Axis(0), r * 2 * n + c).assign(&src.index_axis(Axis(0), r * n + c % n));
        }
    }
    Ok(write_montage(out.view(), n, 2 * n, path)?)
}

fn is_lines(c: &Component) -> bool {
    matches!(c, Component::HorizontalLines { .. } | Component::VerticalLines { .. })
}

/// Orientation purity of the grid samples, for line-image components only.
fn line_purity(data: &DataConfig, state: &GanState<f32>) -> Result<Option<Purity>, CliError> {
    if !(is_lines(&data.a) && is_lines(&data.b)) || state.generators.len() != 2 {
        return Ok(None);
    }
    let samples = state.fixed_samples()?;
    Ok(Some(component_purity(samples[0].view(), samples[1].view())))
}

/// Discriminator accuracy on held-out real observations against an equal
/// number of fresh fakes.
fn held_out_accuracy(state: &GanState<f32>, real: &Array3<f32>) -> Result<f64, CliError> {
    let mut r = rng::stream(state.config.seed, "held-out-fake");
    let latents = state.draw_latents(real.len_of(Axis(0)), &mut r);
    let fake = state.fake_observations(&latents, &mut r)?;
    Ok(discriminator_accuracy(&state.discriminator, real.view(), fake.view())?)
}

/// Clean component-`a` images and their corrupted versions. Train and test
/// draws use separate streams.
fn corrupted_split(c: &RunConfig, seeds: &Seeds, split: Split) -> Result<(ImageSet<f32>, Array3<f32>, Array3<f32>), CliError> {
    let (n, stream) = match split {
        Split::Train => (c.data.train_count, "train-corruption"),
        Split::Test => (c.data.test_count, "test-corruption"),
    };
    let clean = data::component_images(&c.data, &c.data.a, split, n, seeds.dataset, "a")?;
    let (observed, noise) = data::corrupt(&clean.images, &c.train.corruption, seeds.dataset, stream)?;
    Ok((clean, observed, noise))
}

fn train_denoise(ctx: Context<'_>) -> Result<Report, CliError> {
    let c = ctx.config;
    c.train.mode = TrainMode::Denoise;
    check_shape(c)?;
    let (_, observed, _) = corrupted_split(c, ctx.seeds, Split::Train)?;
    let mut state = GanState::<f32>::new(c.train.clone())?;
    state.train(observed.view(), None, Some(ctx.out), None)?;
    let (_, held_out, _) = corrupted_split(c, ctx.seeds, Split::Test)?;
    Ok(Report::ok(json!({
        "final": state.history.last(),
        "held_out_discriminator_accuracy": held_out_accuracy(&state, &held_out)?,
    })))
}

fn train_demix(ctx: Context<'_>) -> Result<Report, CliError> {
    let c = ctx.config;
    c.train.mode = TrainMode::Demix;
    check_shape(c)?;
    let mixtures = data::train_mixtures(&c.data, ctx.seeds.dataset, 0)?;
    let mut state = GanState::<f32>::new(c.train.clone())?;
    state.train(mixtures.view(), None, Some(ctx.out), None)?;
    let pairs = data::test_pairs(&c.data, ctx.seeds.dataset)?;
    Ok(Report::ok(json!({
        "final": state.history.last(),
        "held_out_discriminator_accuracy": held_out_accuracy(&state, &pairs.mixtures)?,
        "purity": line_purity(&c.data, &state)?,
    })))
}

/// A state directory, or the latest `checkpoints/epoch_N` of a run.
fn resolve_checkpoint(path: Option<&Path>) -> Result<PathBuf, CliError> {
    let p = path.ok_or_else(|| CliError::ConfigInvalid("--checkpoint is required for this subcommand".into()))?;
    if p.join("state.json").exists() {
        return Ok(p.to_path_buf());
    }
    let dir = p.join("checkpoints");
    let latest = fs::read_dir(&dir)
        .map_err(io_err(&dir))?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().into_string().ok()?;
            let epoch: usize = name.strip_prefix("epoch_")?.parse().ok()?;
            Some((epoch, e.path()))
        })
        .max_by_key(|(epoch, _)| *epoch);
    latest
        .map(|(_, p)| p)
        .ok_or_else(|| CliError::ConfigInvalid(format!("no checkpoints under {}", dir.display())))
}

fn load_state(ctx: &Context<'_>, mode: Option<TrainMode>) -> Result<(GanState<f32>, PathBuf), CliError> {
    let dir = resolve_checkpoint(ctx.checkpoint)?;
    let state = GanState::<f32>::load(&dir)?;
    if let Some(mode) = mode {
        if state.config.mode != mode {
            return Err(CliError::ConfigInvalid(format!(
                "checkpoint {} was trained in {:?} mode, expected {mode:?}",
                dir.display(),
                state.config.mode
            )));
        }
    }
    if state.config.arch.image_shape != ctx.config.data.shape {
        return Err(CliError::ConfigInvalid(format!(
            "checkpoint image shape {:?} differs from data.shape {:?}",
            state.config.arch.image_shape, ctx.config.data.shape
        )));
    }
    Ok((state, dir))
}

fn invert_denoise_cmd(ctx: Context<'_>) -> Result<Report, CliError> {
    let (state, dir) = load_state(&ctx, Some(TrainMode::Denoise))?;
    let c = &mut *ctx.config;
    // Held-out observations use the corruption the generator was trained with.
    c.train.corruption = state.config.corruption.clone();
    let (clean, observed, _) = corrupted_split(c, ctx.seeds, Split::Test)?;
    let mut recon = Array3::zeros(observed.dim());
    let mut objectives = Vec::new();
    for (i, u) in observed.outer_iter().enumerate() {
        let res = invert_denoise(&state.generators[0], u, &image_options(&c.inversion, i))?;
        recon.index_axis_mut(Axis(0), i).assign(&res.reconstructions[0]);
        objectives.push(res.objective);
    }
    let report = MetricReport::compare(recon.view(), clean.images.view())?;
    let baseline = MetricReport::compare(observed.view(), clean.images.view())?;
    write_idx(&ctx.out.join("reconstructions.idx"), &recon)?;
    write_rows(&[clean.images.view(), observed.view(), recon.view()], &ctx.out.join("comparison.png"))?;
    write_json(&ctx.out.join("metrics.json"), &json!({ "reconstruction": report, "corrupted": baseline }))?;
    Ok(Report::ok(json!({
        "checkpoint": dir,
        "per_pixel_error": report.mean_mse,
        "baseline_per_pixel_error": baseline.mean_mse,
        "mean_psnr": report.mean_psnr,
        "objectives": objectives,
    })))
}

fn squared_error(a: &Array3<f32>, b: &Array3<f32>) -> f64 {
    a.iter().zip(b).map(|(x, y)| ((x - y) as f64).powi(2)).sum()
}

fn invert_demix_cmd(ctx: Context<'_>) -> Result<Report, CliError> {
    let (state, dir) = load_state(&ctx, Some(TrainMode::Demix))?;
    let c = &*ctx.config;
    let pairs = data::test_pairs(&c.data, ctx.seeds.dataset)?;
    let mut r1 = Array3::zeros(pairs.mixtures.dim());
    let mut r2 = Array3::zeros(pairs.mixtures.dim());
    for (i, y) in pairs.mixtures.outer_iter().enumerate() {
        let res = invert_demix(&state.generators[0], &state.generators[1], y, &image_options(&c.inversion, i))?;
        r1.index_axis_mut(Axis(0), i).assign(&res.reconstructions[0]);
        r2.index_axis_mut(Axis(0), i).assign(&res.reconstructions[1]);
    }
    // Generators are unlabeled; match them to components by total error.
    let direct = squared_error(&r1, &pairs.a.images) + squared_error(&r2, &pairs.b.images);
    let crossed = squared_error(&r1, &pairs.b.images) + squared_error(&r2, &pairs.a.images);
    let swapped = crossed < direct;
    let (est_a, est_b) = if swapped { (r2, r1) } else { (r1, r2) };
    let report_a = MetricReport::compare(est_a.view(), pairs.a.images.view())?;
    let report_b = MetricReport::compare(est_b.view(), pairs.b.images.view())?;
    write_idx(&ctx.out.join("estimates_a.idx"), &est_a)?;
    write_idx(&ctx.out.join("estimates_b.idx"), &est_b)?;
    write_rows(
        &[pairs.mixtures.view(), pairs.a.images.view(), est_a.view(), pairs.b.images.view(), est_b.view()],
        &ctx.out.join("comparison.png"),
    )?;
    write_json(&ctx.out.join("metrics.json"), &json!({ "a": report_a, "b": report_b, "pairing": pairs.pairing }))?;
    Ok(Report::ok(json!({
        "checkpoint": dir,
        "generators_swapped": swapped,
        "per_pixel_error_a": report_a.mean_mse,
        "per_pixel_error_b": report_b.mean_mse,
    })))
}

fn flatten(images: &Array3<f32>) -> Array2<f32> {
    let (n, h, w) = images.dim();
    images.as_standard_layout().into_owned().into_shape_with_order((n, h * w)).expect("contiguous")
}

fn cs_invert(ctx: Context<'_>) -> Result<Report, CliError> {
    let (state, dir) = load_state(&ctx, None)?;
    let c = &*ctx.config;
    let truth = data::component_images(&c.data, &c.data.a, Split::Test, c.data.test_count, ctx.seeds.dataset, "a")?;
    let signals = flatten(&truth.images);
    let (h, w) = c.data.shape;
    let mut sweep = Vec::new();
    for &m in &c.cs.measurements {
        let op = make_gaussian_operator::<f32>(m, h * w, rng::derive_seed(ctx.seeds.sensing, &format!("m-{m}")))?;
        let mut recon = Array3::zeros(truth.images.dim());
        for (i, x) in signals.outer_iter().enumerate() {
            let y = op.apply(x)?;
            let res = invert_cs(&state.generators[0], &op, &y, &image_options(&c.inversion, i))?;
            recon.index_axis_mut(Axis(0), i).assign(&res.reconstructions[0]);
        }
        let report = MetricReport::compare(recon.view(), truth.images.view())?;
        write_rows(&[truth.images.view(), recon.view()], &ctx.out.join(format!("m_{m}.png")))?;
        sweep.push(json!({ "m": m, "per_pixel_error": report.mean_mse, "mean_psnr": report.mean_psnr }));
    }
    write_json(&ctx.out.join("sweep.json"), &sweep)?;
    Ok(Report::ok(json!({ "checkpoint": dir, "sweep": sweep })))
}

/// `n` vectors with `k` standard-normal entries at random positions.
pub fn sparse_signals(n: usize, len: usize, k: usize, seed: u64) -> Array2<f64> {
    let mut r = rng::stream(seed, "sparse-signals");
    let mut x = Array2::zeros((n, len));
    for mut row in x.outer_iter_mut() {
        for j in index::sample(&mut r, len, k.min(len)) {
            row[j] = rng::normal(&mut r, 1.0);
        }
    }
    x
}

fn cs_lasso(ctx: Context<'_>) -> Result<Report, CliError> {
    let c = &*ctx.config;
    let signals = match c.cs.signal {
        SignalKind::Sparse => sparse_signals(c.data.test_count, c.cs.signal_len, c.cs.sparsity, ctx.seeds.sensing),
        SignalKind::Data => {
            let truth = data::component_images(&c.data, &c.data.a, Split::Test, c.data.test_count, ctx.seeds.dataset, "a")?;
            flatten(&truth.images).mapv(f64::from)
        }
    };
    let p = signals.ncols();
    let mut sweep = Vec::new();
    for &m in &c.cs.measurements {
        let op = make_gaussian_operator::<f64>(m, p, rng::derive_seed(ctx.seeds.sensing, &format!("m-{m}")))?;
        let mut total = 0.0;
        for x in signals.outer_iter() {
            let y = op.apply(x)?;
            let est = lasso_solve(op.a.view(), y.view(), c.cs.lambda, c.cs.lasso_iterations)?.x;
            let d: Array1<f64> = &est - &x;
            total += d.dot(&d);
        }
        let error = total / signals.len().max(1) as f64;
        sweep.push(json!({ "m": m, "per_pixel_error": error }));
    }
    write_json(&ctx.out.join("sweep.json"), &sweep)?;
    Ok(Report::ok(json!({ "signal_len": p, "sweep": sweep })))
}

fn ica_demix(ctx: Context<'_>) -> Result<Report, CliError> {
    let c = &*ctx.config;
    let pairs = data::test_pairs(&c.data, ctx.seeds.dataset)?;
    let (n, h, w) = pairs.mixtures.dim();
    let (fa, fb) = (flatten(&pairs.a.images), flatten(&pairs.b.images));
    let mut est_a = Array3::<f32>::zeros((n, h, w));
    let mut est_b = Array3::<f32>::zeros((n, h, w));
    let mut correlations = Vec::new();
    let mut converged = 0;
    for i in 0..n {
        let x = ndarray::stack(Axis(1), &[fa.row(i).mapv(f64::from).view(), fb.row(i).mapv(f64::from).view()])
            .expect("equal lengths");
        let seed = rng::derive_seed(ctx.seeds.ica, &format!("pair-{i}"));
        let (y, _) = simulate_ica_mixing(x.view(), seed, c.ica.mixing)?;
        let opts = demixgan::ica::IcaOptions { seed, ..c.ica.options };
        let res = fast_ica(y.view(), 2, &opts)?;
        converged += usize::from(res.converged);
        let al = align_sources(res.sources.view(), x.view())?;
        for (j, slot) in [&mut est_a, &mut est_b].into_iter().enumerate() {
            let fit = fit_affine(res.sources.column(al.permutation[j]), x.column(j));
            let img = fit.mapv(|v| v as f32).into_shape_with_order((h, w)).expect("p = h·w");
            slot.index_axis_mut(Axis(0), i).assign(&img);
        }
        correlations.push(al.correlations);
    }
    let report_a = MetricReport::compare(est_a.view(), pairs.a.images.view())?;
    let report_b = MetricReport::compare(est_b.view(), pairs.b.images.view())?;
    write_idx(&ctx.out.join("estimates_a.idx"), &est_a)?;
    write_idx(&ctx.out.join("estimates_b.idx"), &est_b)?;
    write_rows(
        &[pairs.mixtures.view(), pairs.a.images.view(), est_a.view(), pairs.b.images.view(), est_b.view()],
        &ctx.out.join("comparison.png"),
    )?;
    write_json(&ctx.out.join("metrics.json"), &json!({ "a": report_a, "b": report_b, "correlations": correlations }))?;
    Ok(Report::ok(json!({
        "per_pixel_error_a": report_a.mean_mse,
        "per_pixel_error_b": report_b.mean_mse,
        "converged": converged,
        "pairs": n,
    })))
}

fn eval_metrics(ctx: Context<'_>) -> Result<Report, CliError> {
    let e = &ctx.config.eval;
    if e.estimates.is_empty() || e.truth.is_empty() {
        return Err(CliError::ConfigInvalid("eval.estimates and eval.truth must be set".into()));
    }
    let labels = (!e.labels.is_empty()).then(|| Path::new(&e.labels));
    let estimates = load_labeled::<f32>(Path::new(&e.estimates), labels)?;
    let truth = load_labeled::<f32>(Path::new(&e.truth), None)?;
    let mut report = MetricReport::compare(estimates.images.view(), truth.images.view())?;
    if !e.classifier.is_empty() {
        let labels = estimates
            .labels
            .as_ref()
            .ok_or_else(|| CliError::ConfigInvalid("eval.labels is required with eval.classifier".into()))?;
        let classifier = ProbeClassifier::<f32>::load(Path::new(&e.classifier))?;
        report.classifier_accuracy = Some(classify_accuracy(&classifier, estimates.images.view(), labels)?);
    }
    write_json(&ctx.out.join("metrics.json"), &report)?;
    Ok(Report::ok(json!({
        "mean_mse": report.mean_mse,
        "mean_psnr": report.mean_psnr,
        "per_pixel_error": report.per_pixel_error,
        "classifier_accuracy": report.classifier_accuracy,
    })))
}

fn train_classifier(ctx: Context<'_>) -> Result<Report, CliError> {
    let c = &*ctx.config;
    let dir = c.data.mnist_dir();
    let limit = |set: ImageSet<f32>, n: usize| if n > 0 && n < set.len() { set.take(n) } else { set };
    let train = limit(data::load_mnist(&dir, Split::Train)?, c.classifier.train_limit);
    let test = limit(data::load_mnist(&dir, Split::Test)?, c.classifier.test_limit);
    let (model, losses) =
        train_probe_classifier(&train, &c.classifier.descriptor, &c.classifier.training, ctx.seeds.classifier)?;
    model.save(&ctx.out.join("classifier"))?;
    let labels = test.labels.as_deref().unwrap_or_default();
    let accuracy = classify_accuracy(&model, test.images.view(), labels)?;
    Ok(Report::ok(json!({
        "epoch_losses": losses,
        "test_accuracy": accuracy,
        "train_images": train.len(),
        "test_images": test.len(),
    })))
}

fn theory_check(ctx: Context<'_>) -> Result<Report, CliError> {
    let t = &ctx.config.theory;
    let checks = run_theory_suite(ctx.seeds.root, t.support, t.trials);
    write_json(&ctx.out.join("checks.json"), &checks)?;
    let failed = checks.iter().filter(|c| !c.passed).count();
    for c in &checks {
        log::info!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    Ok(Report {
        metrics: json!({ "checks": checks.len(), "failed": failed }),
        failure: (failed > 0).then(|| CliError::ChecksFailed(failed, checks.len())),
    })
}

fn make_corruption(ctx: Context<'_>) -> Result<Report, CliError> {
    let c = &*ctx.config;
    let (clean, observed, noise) = corrupted_split(c, ctx.seeds, Split::Train)?;
    let n = clean.len();
    let pairing: Vec<Pairing> = (0..n).map(|i| Pairing { a: i, b: i, seed: ctx.seeds.dataset }).collect();
    let noise = ImageSet { images: noise, labels: None };
    save_derived_set(&ctx.out.join("dataset"), &clean, Some(&noise), &pairing)?;
    let grid = GRID_SIDE * GRID_SIDE;
    if n >= grid {
        write_sample_grid(observed.slice(s![..grid, .., ..]), &ctx.out.join("samples.png"))?;
    }
    Ok(Report::ok(json!({ "images": n, "corruption": c.train.corruption })))
}

fn link_name(link: ZLink) -> String {
    match link {
        ZLink::Independent => "independent".into(),
        ZLink::Shared => "shared".into(),
        ZLink::Scaled { alpha } => format!("scaled_{alpha}"),
    }
}

fn ablation_run(
    config: TrainConfig,
    mixtures: &Array3<f32>,
    data: &DataConfig,
    dir: &Path,
    grid: &Path,
) -> Result<Value, CliError> {
    let mut state = GanState::<f32>::new(config)?;
    state.train(mixtures.view(), None, Some(dir), None)?;
    write_side_by_side(&state.fixed_samples()?, grid)?;
    Ok(json!({ "final": state.history.last(), "purity": line_purity(data, &state)? }))
}

fn failure_ablation(ctx: Context<'_>) -> Result<Report, CliError> {
    let c = ctx.config;
    c.train.mode = TrainMode::Demix;
    check_shape(c)?;
    let seed = ctx.seeds.dataset;
    let mixtures = data::train_mixtures(&c.data, seed, 0)?;
    let mut links = Vec::new();
    for &link in &c.ablation.z_links {
        let name = link_name(link);
        let cfg = TrainConfig { z_link: link, ..c.train.clone() };
        let root = ctx.out.join("z_link");
        let mut run = ablation_run(cfg, &mixtures, &c.data, &root.join(&name), &root.join(format!("{name}.png")))?;
        run["z_link"] = serde_json::to_value(link)?;
        links.push(run);
    }
    let mut rotations = Vec::new();
    for &deg in &c.ablation.rotations {
        let rotated = data::train_mixtures(&c.data, seed, deg)?;
        let cfg = TrainConfig { z_link: ZLink::Independent, ..c.train.clone() };
        let root = ctx.out.join("rotation");
        let name = format!("deg_{deg}");
        let mut run = ablation_run(cfg, &rotated, &c.data, &root.join(&name), &root.join(format!("{name}.png")))?;
        run["degrees"] = json!(deg);
        rotations.push(run);
    }
    Ok(Report::ok(json!({ "z_links": links, "rotations": rotations })))
}
