use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::Path;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use nmf_core::dataset::{
    generate_synthetic, load_association_matrix, load_association_triples, load_similarity_matrix, split_associations,
    write_synthetic, AssociationFormat, DatasetError, SynthParams, Violation,
};
use nmf_core::evaluator::{evaluate as score_split, rank_candidates};
use nmf_core::trainer::{fit, load_model, save_checkpoint, EpochLog};
use nmf_core::{DataSplit, DatasetBundle, Exec, ModelState, TrainConfig, Variant};

use crate::manifest::Recorder;
use crate::{ConfigArgs, DataArgs};

fn record_data(rec: &mut Recorder, data: &DataArgs) {
    rec.input(&data.assoc);
    rec.input(&data.drug_sim);
    rec.input(&data.disease_sim);
}

fn load_data(data: &DataArgs) -> Result<DatasetBundle> {
    let bundle = nmf_core::dataset::load_bundle(&data.assoc, data.assoc_format, &data.drug_sim, &data.disease_sim)
        .context("loading dataset")?;
    log::info!(
        "loaded {} drugs x {} diseases, {} associations",
        bundle.n_drugs(),
        bundle.n_diseases(),
        bundle.associations.n_positives()
    );
    Ok(bundle)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Violations of a load attempt; other errors (unreadable, unparsable) become one violation.
fn violations_of(e: DatasetError) -> Vec<Violation> {
    match e {
        DatasetError::Invalid(v) => v,
        other => vec![Violation { location: "input".into(), message: other.to_string() }],
    }
}

pub fn validate(data: &DataArgs, out: Option<&Path>) -> Result<ExitCode> {
    let mut rec = Recorder::new("validate");
    record_data(&mut rec, data);
    // Each file is checked on its own so one bad file does not hide problems in another.
    let mut problems = Vec::new();
    let drug_sim = load_similarity_matrix(&data.drug_sim).map_err(|e| problems.extend(violations_of(e))).ok();
    let disease_sim = load_similarity_matrix(&data.disease_sim).map_err(|e| problems.extend(violations_of(e))).ok();
    let assoc = match (data.assoc_format, &drug_sim, &disease_sim) {
        (AssociationFormat::Triples, Some(d), Some(s)) => {
            load_association_triples(&data.assoc, Some((d.ids(), s.ids())))
        }
        _ => load_association_matrix(&data.assoc, data.assoc_format),
    }
    .map_err(|e| problems.extend(violations_of(e)))
    .ok();
    let mut counts = None;
    if let (Some(a), Some(d), Some(s)) = (assoc, drug_sim, disease_sim) {
        match DatasetBundle::new(a, d, s) {
            Ok(b) => counts = Some((b.n_drugs(), b.n_diseases(), b.associations.n_positives())),
            Err(e) => problems.extend(violations_of(e)),
        }
    }
    rec.phase("validate");

    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    if let Some((drugs, diseases, positives)) = counts.filter(|_| problems.is_empty()) {
        writeln!(w, "ok\t{drugs} drugs\t{diseases} diseases\t{positives} associations")?;
    } else {
        writeln!(w, "invalid\t{} violation(s)", problems.len())?;
        for v in &problems {
            writeln!(w, "{}\t{}", v.location, v.message)?;
        }
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        rec.finish(dir)?;
    }
    Ok(if problems.is_empty() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

/// File config (or defaults) with command-line overrides applied.
pub fn resolve_config(args: &ConfigArgs) -> Result<TrainConfig> {
    let mut cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?
        }
        None => TrainConfig::default(),
    };
    if let Some(v) = args.seed {
        cfg.seed = v;
    }
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(v) = args.latent_dim {
        cfg.latent_dim = v;
    }
    if let Some(v) = args.ratio {
        cfg.split_ratio = v;
    }
    if let Some(v) = args.negatives {
        cfg.negatives_per_positive = v;
    }
    if let Some(v) = args.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = args.lr {
        cfg.learning_rate = v;
    }
    if let Some(v) = args.alpha {
        cfg.alpha = v;
    }
    if let Some(v) = args.beta {
        cfg.beta = v;
    }
    if let Some(v) = args.batch_size {
        cfg.batch_size = v;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn loss_log_tsv(log: &[EpochLog]) -> String {
    let mut out = String::from("epoch\tloss\tloss_p\tloss_d\tloss_s\n");
    for e in log {
        let _ = writeln!(out, "{}\t{}\t{}\t{}\t{}", e.epoch, e.loss, e.loss_p, e.loss_d, e.loss_s);
    }
    out
}

pub fn train(data: &DataArgs, overrides: &ConfigArgs, out: &Path) -> Result<ExitCode> {
    let mut rec = Recorder::new("train");
    record_data(&mut rec, data);
    if let Some(path) = &overrides.config {
        rec.input(path);
    }
    let cfg = resolve_config(overrides)?;
    rec.config(&cfg);
    let bundle = load_data(data)?;
    let split = split_associations(&bundle.associations, cfg.split_ratio, cfg.seed)?;
    rec.phase("load");
    log::info!(
        "training {} (k={}, {} epochs) on {} train / {} test positives",
        cfg.variant,
        cfg.latent_dim,
        cfg.epochs,
        split.train_positives.len(),
        split.test_positives.len()
    );
    let fitted = fit(&bundle, &split, &cfg)?;
    rec.phase("train");
    if let Some(last) = fitted.log.last() {
        log::info!(
            "final epoch: loss {:.6} (prediction {:.6}, drug side {:.6}, disease side {:.6})",
            last.loss,
            last.loss_p,
            last.loss_d,
            last.loss_s
        );
    }

    create_dir(out)?;
    let ckpt = out.join("checkpoint.json");
    save_checkpoint(&ckpt, &fitted.state, &cfg, &fitted.log)?;
    let loss_log = out.join("loss_log.tsv");
    fs::write(&loss_log, loss_log_tsv(&fitted.log)).with_context(|| format!("writing {}", loss_log.display()))?;
    rec.output(ckpt);
    rec.output(loss_log);
    rec.phase("write");
    rec.finish(out)?;
    Ok(ExitCode::SUCCESS)
}

/// Rebuilds the training split and the frozen model a checkpoint was trained with.
fn restore(
    bundle: &DatasetBundle,
    state: &ModelState,
    seed: u64,
    ratio: f64,
) -> Result<(DataSplit, nmf_core::trainer::FrozenModel)> {
    if state.n_drugs != bundle.n_drugs() || state.n_diseases != bundle.n_diseases() {
        bail!(
            "checkpoint is for {} drugs x {} diseases but the data has {} x {}",
            state.n_drugs,
            state.n_diseases,
            bundle.n_drugs(),
            bundle.n_diseases()
        );
    }
    let split = split_associations(&bundle.associations, ratio, seed)?;
    let train = bundle.associations.restricted_to(&split.train_positives)?;
    let frozen = state.freeze(&train, Exec::default());
    Ok((split, frozen))
}

pub fn evaluate(
    data: &DataArgs,
    checkpoint: &Path,
    seed: Option<u64>,
    ratio: Option<f64>,
    variant: Option<Variant>,
    out: &Path,
) -> Result<ExitCode> {
    let mut rec = Recorder::new("evaluate");
    record_data(&mut rec, data);
    rec.input(checkpoint);
    let (ckpt, state) = load_model(checkpoint, variant)?;
    let mut cfg = ckpt.config.clone();
    cfg.seed = seed.unwrap_or(cfg.seed);
    cfg.split_ratio = ratio.unwrap_or(cfg.split_ratio);
    if cfg.seed != ckpt.config.seed || cfg.split_ratio != ckpt.config.split_ratio {
        log::warn!("split differs from the one recorded in the checkpoint; test pairs may overlap training data");
    }
    rec.config(&cfg);
    let bundle = load_data(data)?;
    let (split, frozen) = restore(&bundle, &state, cfg.seed, cfg.split_ratio)?;
    rec.phase("load");
    let report = score_split(&frozen, &bundle, &split, state.latent_dim, Exec::default())?;
    rec.phase("score");
    log::info!(
        "auc {:.4}  aupr {:.4}  ({} positives, {} negatives)",
        report.auc,
        report.aupr,
        report.n_pos,
        report.n_neg
    );
    report.write(out)?;
    for f in ["metrics.json", "roc.tsv", "pr.tsv"] {
        rec.output(out.join(f));
    }
    print!("{}", report.to_json());
    rec.finish(out)?;
    Ok(ExitCode::SUCCESS)
}

pub fn predict(
    data: &DataArgs,
    checkpoint: &Path,
    drug: &str,
    top_n: usize,
    exclude_known: bool,
    out: Option<&Path>,
) -> Result<ExitCode> {
    let mut rec = Recorder::new("predict");
    record_data(&mut rec, data);
    rec.input(checkpoint);
    let (ckpt, state) = load_model(checkpoint, None)?;
    rec.config(&ckpt.config);
    let bundle = load_data(data)?;
    let (_, frozen) = restore(&bundle, &state, ckpt.config.seed, ckpt.config.split_ratio)?;
    let ranked = rank_candidates(&frozen, &bundle, drug, top_n, exclude_known)?;
    rec.phase("rank");

    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "rank\tdisease_id\tprobability\tknown")?;
    for (k, r) in ranked.iter().enumerate() {
        writeln!(w, "{}\t{}\t{}\t{}", k + 1, r.disease_id, r.score, if r.known { "known" } else { "-" })?;
    }
    if let Some(dir) = out {
        create_dir(dir)?;
        rec.finish(dir)?;
    }
    Ok(ExitCode::SUCCESS)
}

pub fn synth(params: SynthParams, out: &Path) -> Result<ExitCode> {
    let mut rec = Recorder::new("synth");
    let bundle = generate_synthetic(params)?;
    rec.phase("generate");
    create_dir(out)?;
    for path in write_synthetic(out, &bundle)? {
        rec.output(path);
    }
    log::info!(
        "wrote {} drugs x {} diseases with {} associations to {}",
        params.n_drugs,
        params.n_diseases,
        bundle.bundle.associations.n_positives(),
        out.display()
    );
    rec.phase("write");
    rec.finish(out)?;
    Ok(ExitCode::SUCCESS)
}
