use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use impress_core::bundle::{config_hash, version_stamps, ModelBundle};
use impress_core::flow::{
    edit_latent, train_mapper, CnfModel, FlowConfig, LatentVector, MAX_EDIT_DELTA,
};
use impress_core::io::{
    dataset_index_path, read_dataset, read_pgm, read_world_config, write_dataset, write_pgm,
    WORLD_CONFIG_FILE,
};
use impress_core::metrics::{
    adjacent_pair_eval, cosine, EvalSet, EvalSpectrum, MetricsReport, PyramidFeatures,
};
use impress_core::nn::TrainConfig;
use impress_core::predictor::{r_squared, train_regressor, RegressorModel, ScoredSample};
use impress_core::spectrum::{
    bias_correlation_report, build_spectrum, diff_vectors, lambda_grid, montage, render_diff,
    score_histogram, BiasEdit, BiasReport, DiffVector, ScoreHistogram, SpectrumSidecar,
};
use impress_core::world::{
    invert_with_restoration, quality_filter, sample_dataset, train_corrector, train_encoder,
    truth_score, Corrector, EncoderModel, FaceParams, FilterReport, ImageGrid, MixingMatrix,
    QualityThresholds, WorldConfig, WorldSample, PARAM_DIM,
};
use impress_core::{AttributeKind, Error};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{file_name, with_suffix, write_json, RunConfig};
use crate::{
    Command, EditArgs, EvalArgs, GenDataArgs, ReportArgs, SpectrumArgs, TrainAttrArgs,
    TrainMapperArgs,
};

pub fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::TrainAttr(a) => train_attr(a),
        Command::TrainMapper(a) => train_mapper_cmd(a),
        Command::Edit(a) => edit(a),
        Command::Eval(a) => eval(a),
        Command::Spectrum(a) => spectrum(a),
        Command::Report(a) => report(a),
    }
}

fn gen_data(a: GenDataArgs) -> Result<()> {
    let world = WorldConfig {
        seed: a.world_seed,
        sample_seed: a.seed,
        n: a.n,
        adult_only: a.adult_only,
        covariate_scale: a.covariate_scale,
        thresholds: QualityThresholds {
            energy: a.energy_threshold,
            identity: a.identity_threshold,
        },
    };
    let samples = sample_dataset(
        world.n,
        world.sample_seed,
        world.adult_only,
        world.covariate_scale,
    )?;
    write_dataset(&a.out, &world, &samples)?;
    println!(
        "{} faces written to {} (world hash {})",
        samples.len(),
        a.out.display(),
        &config_hash(&world)[..12]
    );
    Ok(())
}

fn load_data(path: &Path) -> Result<(WorldConfig, Vec<WorldSample>)> {
    let index = dataset_index_path(path);
    let dir = index.parent().unwrap_or(Path::new("."));
    let cfg = dir.join(WORLD_CONFIG_FILE);
    let world = read_world_config(&cfg).with_context(|| format!("reading {}", cfg.display()))?;
    let samples = read_dataset(&index).with_context(|| format!("reading {}", index.display()))?;
    Ok((world, samples))
}

fn load_bundle(path: &Path) -> Result<ModelBundle> {
    ModelBundle::load(path).with_context(|| format!("loading bundle {}", path.display()))
}

fn hash_mismatch(bundle: &ModelBundle, world: &WorldConfig) -> Option<String> {
    let data = config_hash(world);
    (data != bundle.config_hash).then(|| {
        format!(
            "bundle world {} differs from data world {}",
            &bundle.config_hash[..12],
            &data[..12]
        )
    })
}

fn require_same_world(bundle: &ModelBundle, world: &WorldConfig) -> Result<()> {
    match hash_mismatch(bundle, world) {
        Some(msg) => Err(Error::HashMismatch(msg).into()),
        None => Ok(()),
    }
}

/// Samples passing the bundle's quality filter.
fn filtered<'a>(
    bundle: &ModelBundle,
    samples: &'a [WorldSample],
    thresholds: QualityThresholds,
) -> Result<(Vec<&'a WorldSample>, FilterReport)> {
    let (kept, report) = quality_filter(bundle.quality_records(samples)?, thresholds);
    if kept.is_empty() {
        bail!("no sample passed the quality filter ({report:?})");
    }
    Ok((kept.into_iter().map(|r| r.item).collect(), report))
}

fn train_attr(a: TrainAttrArgs) -> Result<()> {
    let t0 = Instant::now();
    let (world, samples) = load_data(&a.data)?;
    let mut bundle = if a.out.exists() {
        let b = load_bundle(&a.out)?;
        require_same_world(&b, &world)?;
        b
    } else {
        let mixing = MixingMatrix::seeded(world.seed);
        let images: Vec<ImageGrid> = samples.iter().map(|s| s.image.clone()).collect();
        let latents: Vec<Vec<f64>> = samples.iter().map(|s| mixing.apply(&s.params)).collect();
        let enc_cfg = TrainConfig::new(a.encoder_iters, 64, 1e-3, a.seed).with_cosine_decay(0.02);
        let enc = train_encoder(
            &images,
            &latents,
            EncoderModel::init(a.encoder_hidden, a.seed),
            &enc_cfg,
        )?;
        eprintln!(
            "encoder: final loss {:.5} after {:.0?}",
            enc.losses.last().copied().unwrap_or(f64::NAN),
            t0.elapsed()
        );
        let cor_cfg = TrainConfig::new(a.corrector_iters, 32, 1e-3, a.seed + 1);
        let cor = train_corrector(
            &enc.model,
            &mixing,
            &samples,
            Corrector::init(a.corrector_hidden, a.seed + 1),
            a.corrector_pool,
            &cor_cfg,
        )?;
        eprintln!(
            "corrector: final loss {:.5} after {:.0?}",
            cor.losses.last().copied().unwrap_or(f64::NAN),
            t0.elapsed()
        );
        let mut b = ModelBundle::new(world.clone(), mixing, cor.model);
        let mut run = RunConfig::new("train-attr");
        run.world(&world);
        run.path("data", &a.data);
        run.stage(
            "encoder",
            json!({ "train": enc_cfg, "hidden": a.encoder_hidden }),
        );
        run.stage(
            "corrector",
            json!({ "train": cor_cfg, "hidden": a.corrector_hidden, "pool": a.corrector_pool }),
        );
        run.seeds.insert("encoder".into(), a.seed);
        run.seeds.insert("corrector".into(), a.seed + 1);
        b.run_log
            .insert("encoder".into(), serde_json::to_string(&run)?);
        b
    };

    let (kept, filter) = filtered(&bundle, &samples, world.thresholds)?;
    let train: Vec<ScoredSample> = kept
        .iter()
        .map(|s| ScoredSample {
            image: s.image.clone(),
            score: s.scores[a.attr.index()],
            source: "toy".into(),
        })
        .collect();
    let init = if a.fine_tune {
        bundle
            .regressor(a.attr)
            .context("--fine-tune needs a trained regressor in the bundle")?
            .clone()
    } else {
        RegressorModel::fresh(a.attr, a.seed + 2)
    };
    let cfg = TrainConfig::new(a.iters, a.batch, a.lr, a.seed + 2);
    let fit = train_regressor(&train, init, &cfg)?;
    let preds = train
        .iter()
        .map(|s| fit.model.predict(&s.image))
        .collect::<impress_core::Result<Vec<_>>>()?;
    let targets: Vec<f64> = train.iter().map(|s| s.score).collect();
    let r2 = r_squared(&preds, &targets).ok();
    bundle.set_regressor(fit.model);

    let mut run = RunConfig::new("train-attr");
    run.world(&world);
    run.path("data", &a.data);
    run.stage(
        "regressor",
        json!({ "train": cfg, "fine_tune": a.fine_tune, "filter": filter, "train_r2": r2 }),
    );
    run.seeds.insert("regressor".into(), a.seed + 2);
    bundle.run_log.insert(
        format!("regressor:{}", a.attr),
        serde_json::to_string(&run)?,
    );
    bundle.save(&a.out)?;
    println!(
        "{}: regressor on {} of {} samples, train R^2 {}, bundle {} ({:.0?})",
        a.attr,
        kept.len(),
        samples.len(),
        r2.map_or("n/a".into(), |v| format!("{v:.4}")),
        a.out.display(),
        t0.elapsed()
    );
    Ok(())
}

fn train_mapper_cmd(a: TrainMapperArgs) -> Result<()> {
    let t0 = Instant::now();
    let (world, samples) = load_data(&a.data)?;
    let mut bundle = load_bundle(a.bundle.as_ref().unwrap_or(&a.out))?;
    require_same_world(&bundle, &world)?;
    let regressor = bundle.regressor(a.attr)?.clone();
    let (kept, filter) = filtered(&bundle, &samples, world.thresholds)?;
    let pairs = kept
        .iter()
        .map(|s| {
            Ok((
                bundle.encoder.encode(&s.image)?,
                regressor.predict(&s.image)?,
            ))
        })
        .collect::<impress_core::Result<Vec<(LatentVector, f64)>>>()?;
    let flow_cfg = FlowConfig::new(PARAM_DIM, vec![a.hidden], a.blocks);
    let cfg = TrainConfig::new(a.iters, a.batch, a.lr, a.seed).with_cosine_decay(a.decay);
    let fit = train_mapper(
        CnfModel::init(&flow_cfg, a.attr.tag(), a.seed)?,
        &pairs,
        &cfg,
    )?;
    let tail = &fit.losses[fit.losses.len().saturating_sub(100)..];
    let final_nll = (!tail.is_empty()).then(|| tail.iter().sum::<f64>() / tail.len() as f64);
    bundle.set_flow(a.attr, fit.model)?;

    let mut run = RunConfig::new("train-mapper");
    run.world(&world);
    run.path("data", &a.data);
    run.stage("mapper", json!({ "train": cfg, "hidden": a.hidden, "blocks": a.blocks, "filter": filter, "final_nll": final_nll }));
    run.seeds.insert("mapper".into(), a.seed);
    bundle
        .run_log
        .insert(format!("mapper:{}", a.attr), serde_json::to_string(&run)?);
    bundle.save(&a.out)?;
    println!(
        "{}: flow on {} pairs, final NLL {}, bundle {} ({:.0?})",
        a.attr,
        pairs.len(),
        final_nll.map_or("n/a".into(), |v| format!("{v:.4}")),
        a.out.display(),
        t0.elapsed()
    );
    Ok(())
}

fn edit(a: EditArgs) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let x = read_pgm(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let out = bundle.edit(a.attr, &x, a.delta)?;
    write_pgm(&a.out, &out.image)?;
    println!(
        "{}: score {:.4} -> target {:.4}{}",
        a.attr,
        out.original_score,
        out.target_score,
        if out.clamped { " (clamped)" } else { "" }
    );
    Ok(())
}

/// Per-attribute section of an [`EvalReport`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttributeEval {
    pub attribute: AttributeKind,
    pub metrics: MetricsReport,
    /// Edits whose identity similarity to the original reaches the threshold.
    pub identity_retention: f64,
    pub identity_threshold: f64,
    pub mean_identity_similarity: f64,
    /// Edits with `|lambda| >= 0.1` whose oracle score moved in the sign of `lambda`.
    pub direction_accuracy: f64,
    pub direction_edits: usize,
    /// Edits whose requested score left `[0, 1]`.
    pub clamped_edits: usize,
    /// Predicted scores of the evaluated originals.
    pub score_histogram: ScoreHistogram,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub set: String,
    pub items: usize,
    pub filter: FilterReport,
    pub lambdas: Vec<f64>,
    pub bundle_config_hash: String,
    pub data_config_hash: String,
    pub run_config: RunConfig,
    pub run_config_hash: String,
    pub versions: BTreeMap<String, String>,
    pub warnings: Vec<String>,
    pub attributes: Vec<AttributeEval>,
    pub bias: Option<BiasReport>,
}

fn clamped_params(p: &FaceParams) -> FaceParams {
    FaceParams(p.0.map(|v| v.clamp(-1.0, 1.0)))
}

fn eval_lambdas(deltas: &[f64]) -> Result<Vec<f64>> {
    if deltas.is_empty() {
        bail!("--deltas is empty");
    }
    let mut lambdas = deltas.to_vec();
    for d in &lambdas {
        if !(d.abs() <= MAX_EDIT_DELTA) {
            bail!("delta {d} outside [-{MAX_EDIT_DELTA}, {MAX_EDIT_DELTA}]");
        }
    }
    lambdas.push(0.0);
    lambdas.sort_by(f64::total_cmp);
    lambdas.dedup();
    Ok(lambdas)
}

fn eval(a: EvalArgs) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let (world, samples) = load_data(&a.set)?;
    let mut warnings = Vec::new();
    if let Some(msg) = hash_mismatch(&bundle, &world) {
        warnings.push(format!("config hash mismatch: {msg}"));
    }
    let lambdas = eval_lambdas(&a.deltas)?;
    let attrs: Vec<AttributeKind> = if a.attr.is_empty() {
        bundle
            .attributes
            .iter()
            .filter(|(_, m)| m.flow.is_some())
            .map(|(k, _)| *k)
            .collect()
    } else {
        a.attr.clone()
    };
    if attrs.is_empty() {
        bail!("bundle has no trained flow to evaluate");
    }
    let (kept, filter) = filtered(&bundle, &samples, bundle.world.thresholds)?;
    let items: Vec<&WorldSample> = kept.into_iter().take(a.limit).collect();
    if items.is_empty() {
        bail!("--limit must be at least 1");
    }
    let threshold = bundle.world.thresholds.identity;

    let mut run = RunConfig::new("eval");
    run.world(&world);
    run.lambdas = lambdas.clone();
    run.path("set", &a.set);
    run.path("bundle", &a.bundle);
    run.path("report", &a.report);
    run.stage(
        "eval",
        json!({ "attributes": attrs, "limit": a.limit, "fid": format!("{:?}", a.fid).to_lowercase(), "bins": a.bins }),
    );
    run.seeds.insert("features".into(), a.feature_seed);
    let run_hash = run.hash();

    let features = PyramidFeatures::new(a.feature_seed);
    let embed = |img: &ImageGrid| bundle.encoder.identity_of_image(&bundle.mixing, img);
    let mut sections = Vec::new();
    let mut bias_edits = Vec::new();
    for &attr in &attrs {
        let regressor = bundle.regressor(attr)?;
        let flow = bundle.flow(attr)?;
        let mut spectra = Vec::with_capacity(items.len());
        let mut originals = Vec::with_capacity(items.len());
        let (mut retained, mut sim_sum, mut edits, mut dir_ok, mut dir_n, mut clamped) =
            (0usize, 0.0, 0usize, 0usize, 0usize, 0usize);
        for s in &items {
            let w = bundle.encoder.encode(&s.image)?;
            let so = regressor.predict(&s.image)?;
            originals.push(so);
            let id0 = embed(&s.image)?;
            let p0 = bundle.mixing.invert(w.as_slice())?;
            let truth0 = truth_score(&s.params, attr);
            let mut images = Vec::with_capacity(lambdas.len());
            let mut scores = Vec::with_capacity(lambdas.len());
            for &lambda in &lambdas {
                if lambda == 0.0 {
                    images.push(s.image.clone());
                    scores.push(so);
                    continue;
                }
                let (w2, _) = edit_latent(flow, &w, so, lambda)?;
                let img = invert_with_restoration(&bundle.encoder, &bundle.mixing, &w2, &s.image)?;
                let sim = cosine(&id0, &embed(&img)?)?;
                edits += 1;
                sim_sum += sim;
                retained += usize::from(sim >= threshold);
                clamped += usize::from(!(0.0..=1.0).contains(&(so + lambda)));
                let p2 = bundle.mixing.invert(w2.as_slice())?;
                if lambda.abs() >= 0.1 - 1e-12 {
                    let dt = truth_score(&clamped_params(&p2), attr) - truth0;
                    dir_n += 1;
                    dir_ok += usize::from(dt != 0.0 && dt.signum() == lambda.signum());
                }
                bias_edits.push(BiasEdit {
                    attribute: attr,
                    lambda,
                    original: p0.clone(),
                    edited: p2,
                });
                scores.push(regressor.predict(&img)?);
                images.push(img);
            }
            spectra.push(EvalSpectrum { images, scores });
        }
        let set = EvalSet {
            lambdas: lambdas.clone(),
            items: spectra,
        };
        let mut metrics = adjacent_pair_eval(&set, &embed, &features, a.fid.into())?;
        metrics.tags = vec![attr.tag().to_string(), file_name(&a.set)];
        metrics.config_hash = Some(run_hash.clone());
        metrics.versions = version_stamps();
        metrics.warnings = warnings.clone();
        let ratio = |k: usize, n: usize| {
            if n == 0 {
                f64::NAN
            } else {
                k as f64 / n as f64
            }
        };
        sections.push(AttributeEval {
            attribute: attr,
            identity_retention: ratio(retained, edits),
            identity_threshold: threshold,
            mean_identity_similarity: sim_sum / edits.max(1) as f64,
            direction_accuracy: ratio(dir_ok, dir_n),
            direction_edits: dir_n,
            clamped_edits: clamped,
            score_histogram: score_histogram(&originals, a.bins)?,
            metrics,
        });
    }
    let bias = match bias_correlation_report(&bias_edits) {
        Ok(r) => Some(r),
        Err(e) => {
            warnings.push(format!("bias report skipped: {e}"));
            None
        }
    };
    let report = EvalReport {
        set: file_name(&a.set),
        items: items.len(),
        filter,
        lambdas,
        bundle_config_hash: bundle.config_hash.clone(),
        data_config_hash: config_hash(&world),
        run_config: run,
        run_config_hash: run_hash,
        versions: version_stamps(),
        warnings,
        attributes: sections,
        bias,
    };
    write_json(&a.report, &report)?;
    for s in &report.attributes {
        println!(
            "{:<16} ADAS {:.4}  IS {:.4}  PD {:.4}  FID {:.4}  id>={} {:.3}  direction {:.3}",
            s.attribute.tag(),
            s.metrics.adas,
            s.metrics.is,
            s.metrics.pd,
            s.metrics.fid,
            s.identity_threshold,
            s.identity_retention,
            s.direction_accuracy
        );
    }
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    Ok(())
}

#[derive(Serialize)]
struct SpectrumFile<'a> {
    image: String,
    spectrum: SpectrumSidecar,
    diffs: &'a [DiffVector],
    bundle_config_hash: &'a str,
    run_config: &'a RunConfig,
    run_config_hash: String,
    versions: BTreeMap<String, String>,
}

fn spectrum(a: SpectrumArgs) -> Result<()> {
    let bundle = load_bundle(&a.bundle)?;
    let x = read_pgm(&a.image).with_context(|| format!("reading {}", a.image.display()))?;
    let (lo, hi, step) = a.range;
    let grid = lambda_grid(lo, hi, step)?;
    let spec = build_spectrum(&bundle, a.attr, &x, &grid)?;
    let diffs = diff_vectors(&spec)?;
    let frames: Vec<ImageGrid> = spec.entries.iter().map(|e| e.image.clone()).collect();
    write_pgm(&with_suffix(&a.out, ".pgm"), &montage(&frames, 1)?)?;
    let (mut added, mut removed) = (Vec::new(), Vec::new());
    for d in &diffs {
        let (af, rf) = render_diff(&bundle, d, &spec.original_latent, &x)?;
        added.push(af);
        removed.push(rf);
    }
    write_pgm(&with_suffix(&a.out, ".af.pgm"), &montage(&added, 1)?)?;
    write_pgm(&with_suffix(&a.out, ".rf.pgm"), &montage(&removed, 1)?)?;

    let mut run = RunConfig::new("spectrum");
    run.world(&bundle.world);
    run.lambdas = grid;
    run.path("image", &a.image);
    run.path("bundle", &a.bundle);
    run.path("out", &a.out);
    run.stage(
        "spectrum",
        json!({ "attribute": a.attr, "range": [lo, hi, step] }),
    );
    let file = SpectrumFile {
        image: file_name(&a.image),
        spectrum: SpectrumSidecar::from(&spec),
        diffs: &diffs,
        bundle_config_hash: &bundle.config_hash,
        run_config_hash: run.hash(),
        run_config: &run,
        versions: version_stamps(),
    };
    write_json(&with_suffix(&a.out, ".json"), &file)?;
    println!(
        "{}: {} frames, original score {:.4}",
        a.attr,
        spec.entries.len(),
        spec.original_score
    );
    Ok(())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub source: String,
    pub attribute: AttributeKind,
    pub items: usize,
    pub adas: f64,
    pub is: f64,
    pub pd: f64,
    pub fid: f64,
    pub identity_retention: f64,
    pub direction_accuracy: f64,
    pub run_config_hash: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryReport {
    pub rows: Vec<SummaryRow>,
    pub bias: Vec<BiasReport>,
    pub warnings: Vec<String>,
    pub run_config: RunConfig,
    pub run_config_hash: String,
    pub versions: BTreeMap<String, String>,
}

fn report(a: ReportArgs) -> Result<()> {
    let mut rows = Vec::new();
    let mut bias = Vec::new();
    let mut warnings = Vec::new();
    let mut run = RunConfig::new("report");
    for (k, path) in a.inputs.iter().enumerate() {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let r: EvalReport =
            serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let source = file_name(path);
        run.paths.insert(format!("input{k}"), source.clone());
        for s in &r.attributes {
            rows.push(SummaryRow {
                source: source.clone(),
                attribute: s.attribute,
                items: r.items,
                adas: s.metrics.adas,
                is: s.metrics.is,
                pd: s.metrics.pd,
                fid: s.metrics.fid,
                identity_retention: s.identity_retention,
                direction_accuracy: s.direction_accuracy,
                run_config_hash: r.run_config_hash.clone(),
            });
        }
        bias.extend(r.bias);
        warnings.extend(r.warnings.into_iter().map(|w| format!("{source}: {w}")));
    }
    run.path("out", &a.out);
    let summary = SummaryReport {
        rows,
        bias,
        warnings,
        run_config_hash: run.hash(),
        run_config: run,
        versions: version_stamps(),
    };
    if a.out.extension().is_some_and(|e| e == "md") {
        std::fs::write(&a.out, markdown(&summary))
            .with_context(|| format!("writing {}", a.out.display()))?;
    } else {
        write_json(&a.out, &summary)?;
    }
    println!(
        "{} rows from {} reports written to {}",
        summary.rows.len(),
        a.inputs.len(),
        a.out.display()
    );
    Ok(())
}

fn markdown(s: &SummaryReport) -> String {
    let mut out = String::from(
        "| source | attribute | items | ADAS | IS | PD | FID | identity kept | direction |\n",
    );
    out.push_str("|---|---|---|---|---|---|---|---|---|\n");
    for r in &s.rows {
        writeln!(
            out,
            "| {} | {} | {} | {:.4} | {:.4} | {:.4} | {:.4} | {:.3} | {:.3} |",
            r.source,
            r.attribute,
            r.items,
            r.adas,
            r.is,
            r.pd,
            r.fid,
            r.identity_retention,
            r.direction_accuracy
        )
        .unwrap();
    }
    for b in &s.bias {
        for attr in &b.attributes {
            out.push('\n');
            writeln!(out, "{} bias ({} edits):", attr.attribute, attr.edits).unwrap();
            for c in &attr.covariates {
                writeln!(out, "- {}: {:+.3}", c.covariate, c.correlation).unwrap();
            }
        }
    }
    for w in &s.warnings {
        writeln!(out, "\nwarning: {w}").unwrap();
    }
    writeln!(out, "\nrun config {}", s.run_config_hash).unwrap();
    out
}
