//! The five subcommands. Each writes its resolved config to `out/config.txt`
//! and returns a short human-readable summary.

use std::fs;
use std::path::{Path, PathBuf};

use lab_core::cyclegan::{GanCfg, GanEpoch, LossWeights, TranslationSystem, GAN_HISTORY_HEADER};
use lab_core::distill::{DistillCfg, DistillSystem, EpochRecord, SparsityCfg};
use lab_core::io::{write_atomic, Checkpoint, Section};
use lab_core::metrics::{
    bootstrap_ci, confusion_metrics, roc_auc, screening_indicators, Metric, PredictionSet, ScreeningProfile,
};
use lab_core::nn::TranslatorCfg;
use lab_core::par::Execution;
use lab_core::phantom::{gen_dataset, ImageSet, Modality, Split};
use lab_core::tensor::ParamStore;
use lab_core::Error;

use crate::config::{parse_pairs, Command, RunConfig};
use crate::data::{dataset_dir, load_split, write_dataset};
use crate::exit::CliError;

pub const CONFIG_ECHO: &str = "config.txt";
pub const GAN_CHECKPOINT: &str = "gan.ckpt";
pub const GAN_HISTORY: &str = "gan_history.csv";
pub const LSNET_CHECKPOINT: &str = "lsnet.ckpt";
pub const LSNET_HISTORY: &str = "lsnet_history.csv";
pub const LSNET_HISTORY_HEADER: [&str; 6] = ["step", "cls", "distill", "gradsim", "lambda", "acc_val"];
pub const SELECTION: &str = "selection.csv";
pub const SELECTION_HEADER: [&str; 5] = ["phase", "chosen_epoch", "acc_val", "sens_val", "spec_val"];
pub const METRICS: &str = "metrics.csv";
pub const METRICS_HEADER: [&str; 11] =
    ["n", "tp", "fp", "tn", "fn", "accuracy", "sensitivity", "specificity", "precision", "f1", "auc"];
pub const BOOTSTRAP: &str = "bootstrap.csv";
pub const BOOTSTRAP_HEADER: [&str; 6] = ["metric", "mean", "sd", "ci_lo", "ci_hi", "draws"];
pub const PREDICTIONS: &str = "predictions.csv";
pub const PREDICTIONS_HEADER: [&str; 2] = ["score", "label"];
pub const FIDELITY: &str = "fidelity.csv";
pub const FIDELITY_HEADER: [&str; 5] = ["split", "images", "dice_trained", "dice_untrained", "gain"];
pub const SCREEN: &str = "screen.csv";
pub const SCREEN_HEADER: [&str; 7] = ["prevalence", "lr_plus", "ppv", "npv", "positive_rate", "nns", "nns_rounded"];

pub fn run(cfg: &RunConfig) -> Result<String, CliError> {
    match cfg.command {
        Command::GenData => gen_data(cfg),
        Command::TrainGan => train_gan(cfg),
        Command::TrainLsnet => train_lsnet(cfg),
        Command::Eval => eval(cfg),
        Command::Screen => screen(cfg),
    }
}

fn prepare_out(cfg: &RunConfig) -> Result<PathBuf, CliError> {
    let out = cfg.path("out")?;
    fs::create_dir_all(&out)?;
    write_atomic(&out.join(CONFIG_ECHO), cfg.to_text().as_bytes())?;
    Ok(out)
}

fn write_csv(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), CliError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(r)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::new(crate::exit::MISSING_INPUT, e.to_string()))?;
    Ok(write_atomic(path, &bytes)?)
}

fn num(v: f64) -> String {
    format!("{v:.9e}")
}

fn opt_num(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), num)
}

/// Image side shared by the dataset, the translator and the screening nets.
pub fn validate_side(side: usize) -> Result<(), CliError> {
    if side < 16 || !side.is_multiple_of(8) {
        return Err(CliError::config(format!(
            "side must be a multiple of 8 and >= 16 so that patches tile the feature grid, got {side}"
        )));
    }
    Ok(())
}

fn field<T>(key: &str, r: lab_core::Result<T>) -> Result<T, CliError> {
    r.map_err(|e| CliError::config(format!("{key}: {e}")))
}

fn gen_data(cfg: &RunConfig) -> Result<String, CliError> {
    let side: usize = cfg.get("side")?;
    validate_side(side)?;
    let n: usize = cfg.get("n_per_class")?;
    let seed: u64 = cfg.get("seed")?;
    let plan = gen_dataset(n, seed, side).map_err(|e| CliError::config(format!("gen-data: {e}")))?;
    let out = prepare_out(cfg)?;
    let rows = write_dataset(&out, &plan, Execution::default())?;
    let count = |s: Split| plan.records.iter().filter(|r| r.split == s).count();
    Ok(format!(
        "wrote {} images ({} train / {} val / {} test phantoms, 2 modalities) to {}",
        rows.len(),
        count(Split::Train),
        count(Split::Val),
        count(Split::Test),
        out.display()
    ))
}

pub fn gan_cfg(cfg: &RunConfig) -> Result<GanCfg, CliError> {
    let side: usize = cfg.get("side")?;
    validate_side(side)?;
    let weights = LossWeights {
        lambda: cfg.get("lambda")?,
        mu: cfg.get("mu")?,
        weighting: field("weighting", cfg.raw("weighting").parse())?,
    };
    let g = GanCfg {
        side,
        net: TranslatorCfg {
            image_channels: 1,
            base: cfg.get("base")?,
            feature: cfg.get("feature")?,
            private_blocks: cfg.get("private_blocks")?,
        },
        weights,
        gen_adversarial: field("gen_adversarial", cfg.raw("gen_adversarial").parse())?,
        grl_gamma: cfg.get("grl_gamma")?,
        batch: cfg.get("batch")?,
        lr: cfg.get("lr")?,
        seed: cfg.get("seed")?,
    };
    g.validate()?;
    Ok(g)
}

fn gan_row(e: &GanEpoch) -> Vec<String> {
    e.csv_row()
}

fn train_gan(cfg: &RunConfig) -> Result<String, CliError> {
    let gcfg = gan_cfg(cfg)?;
    let epochs: usize = cfg.get("epochs")?;
    let data = dataset_dir(cfg.path("data")?)?;
    let exec = Execution::default();
    let xs = load_split(&data, Split::Train, Modality::Mri, gcfg.side, exec)?;
    let ys = load_split(&data, Split::Train, Modality::Us, gcfg.side, exec)?;
    let out = prepare_out(cfg)?;
    let meta = cfg.to_text();
    let mut sys = TranslationSystem::new(gcfg)?;
    let mut rows = Vec::new();
    let history = sys.train_with(&xs, &ys, epochs, |rec, store| {
        rows.push(gan_row(rec));
        save_epoch(&out, GAN_HISTORY, &GAN_HISTORY_HEADER, &rows, GAN_CHECKPOINT, Section::Translation, &meta, store)
    })?;
    Checkpoint::from_store(Section::Translation, meta, &sys.store).save(&out.join(GAN_CHECKPOINT))?;
    let last = history.last().map(|e| format!(", final cycle loss {:.4}", e.losses.cyc)).unwrap_or_default();
    Ok(format!("trained translator for {epochs} epochs{last}; outputs in {}", out.display()))
}

#[allow(clippy::too_many_arguments)]
fn save_epoch(
    out: &Path,
    history: &str,
    header: &[&str],
    rows: &[Vec<String>],
    checkpoint: &str,
    section: Section,
    meta: &str,
    store: &ParamStore,
) -> lab_core::Result<()> {
    Checkpoint::from_store(section, meta, store).save(&out.join(checkpoint))?;
    write_csv(&out.join(history), header, rows).map_err(|e| Error::Io(std::io::Error::other(e.message)))
}

pub fn distill_cfg(cfg: &RunConfig) -> Result<DistillCfg, CliError> {
    let side: usize = cfg.get("side")?;
    validate_side(side)?;
    let mut d = DistillCfg::new(side, cfg.get("seed")?);
    d.variant = field("attention", cfg.raw("attention").parse())?;
    d.sparsity = SparsityCfg {
        k_rule: field("k_rule", cfg.raw("k_rule").parse())?,
        tau: cfg.get("tau")?,
        alpha_fuse: cfg.get("alpha_fuse")?,
    };
    d.alpha_ema = cfg.get("alpha_ema")?;
    d.schedule = field("lambda_schedule", cfg.raw("lambda_schedule").parse())?;
    d.distill_weight = cfg.get("distill_weight")?;
    d.temperature = cfg.get("temperature")?;
    d.batch = cfg.get("batch")?;
    d.lr = cfg.get("lr")?;
    if !(d.temperature > 0.0) {
        return Err(CliError::config(format!("temperature must be > 0, got {}", d.temperature)));
    }
    d.validate()?;
    Ok(d)
}

fn modality(cfg: &RunConfig) -> Result<Modality, CliError> {
    field("modality", cfg.raw("modality").parse())
}

fn load_checkpoint(path: &Path, section: Section) -> Result<Checkpoint, CliError> {
    if !path.is_file() {
        return Err(CliError::missing(format!("checkpoint {} not found", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    if ck.section != section {
        return Err(CliError::config(format!("{} holds a {:?} checkpoint, expected {section:?}", path.display(), ck.section)));
    }
    Ok(ck)
}

/// Rebuilds a trained translator from its checkpoint.
pub fn load_translator(ck: &Checkpoint) -> Result<TranslationSystem, CliError> {
    let meta = RunConfig::resolve(Command::TrainGan, &[parse_pairs(&ck.meta)?])?;
    let mut sys = TranslationSystem::new(gan_cfg(&meta)?)?;
    ck.restore_into(&mut sys.store)?;
    Ok(sys)
}

/// Rebuilds a standalone student from its checkpoint.
pub fn load_student(ck: &Checkpoint) -> Result<DistillSystem, CliError> {
    let meta = RunConfig::resolve(Command::TrainLsnet, &[parse_pairs(&ck.meta)?])?;
    let mut sys = DistillSystem::new(distill_cfg(&meta)?)?;
    sys.drop_teacher();
    ck.restore_into(&mut sys.store)?;
    Ok(sys)
}

fn lsnet_row(r: &EpochRecord) -> Vec<String> {
    vec![r.step.to_string(), num(r.cls), num(r.distill), num(r.grad_sim), num(r.lambda), num(r.acc_val)]
}

fn train_lsnet(cfg: &RunConfig) -> Result<String, CliError> {
    let dcfg = distill_cfg(cfg)?;
    let side = dcfg.student.side;
    let epochs: usize = cfg.get("epochs")?;
    let pretrain_epochs: usize = cfg.get("pretrain_epochs")?;
    let pretrain = cfg.optional_path("pretrain_gan").map(|p| load_checkpoint(&p, Section::Translation)).transpose()?;
    let modality = modality(cfg)?;
    let data = dataset_dir(cfg.path("data")?)?;
    let exec = Execution::default();
    let train = load_split(&data, Split::Train, modality, side, exec)?;
    let val = load_split(&data, Split::Val, modality, side, exec)?;

    let mut phases: Vec<(&str, ImageSet, usize)> = Vec::new();
    if let Some(ck) = &pretrain {
        let gan = load_translator(ck)?;
        if gan.cfg.side != side {
            return Err(CliError::config(format!("side: translator works at {}, config says {side}", gan.cfg.side)));
        }
        let source = load_split(&data, Split::Train, Modality::Mri, side, exec)?;
        let all: Vec<usize> = (0..source.len()).collect();
        let synth = gan.translate(&source.batch(&all), exec)?;
        let synth = ImageSet::from_parts(side, synth.data().to_vec(), source.labels, source.masks, source.seeds)?;
        phases.push(("pretrain", synth, pretrain_epochs));
    }
    phases.push(("train", train, epochs));

    let out = prepare_out(cfg)?;
    let meta = cfg.to_text();
    let mut sys = DistillSystem::new(dcfg)?;
    let mut rows = Vec::new();
    let mut selection = Vec::new();
    for (phase, set, n) in &phases {
        let hist = sys.train_with(set, &val, *n, |rec, store| {
            rows.push(lsnet_row(rec));
            save_epoch(&out, LSNET_HISTORY, &LSNET_HISTORY_HEADER, &rows, LSNET_CHECKPOINT, Section::Screening, &meta, store)
        })?;
        if let Some(r) = hist.epochs.iter().find(|r| r.epoch == hist.chosen_epoch) {
            selection.push(vec![phase.to_string(), r.epoch.to_string(), num(r.acc_val), num(r.sens_val), num(r.spec_val)]);
        }
    }
    sys.drop_teacher();
    Checkpoint::from_store(Section::Screening, meta, &sys.store).save(&out.join(LSNET_CHECKPOINT))?;
    write_csv(&out.join(SELECTION), &SELECTION_HEADER, &selection)?;
    let chosen = selection.last().map(|r| format!(", kept epoch {} of the final phase", r[1])).unwrap_or_default();
    Ok(format!("trained student for {epochs} epochs{chosen}; outputs in {}", out.display()))
}

fn read_predictions(path: &Path) -> Result<(Vec<f64>, Vec<u8>), CliError> {
    if !path.is_file() {
        return Err(CliError::missing(format!("predictions file {} not found", path.display())));
    }
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != PREDICTIONS_HEADER {
        return Err(CliError::data(format!("{}: header must be {}", path.display(), PREDICTIONS_HEADER.join(","))));
    }
    let (mut scores, mut labels) = (Vec::new(), Vec::new());
    for (n, rec) in r.records().enumerate() {
        let rec = rec?;
        let bad = || CliError::data(format!("{} row {}: cannot parse", path.display(), n + 1));
        scores.push(rec[0].trim().parse::<f64>().map_err(|_| bad())?);
        labels.push(rec[1].trim().parse::<u8>().map_err(|_| bad())?);
    }
    Ok((scores, labels))
}

fn eval(cfg: &RunConfig) -> Result<String, CliError> {
    let resamples: usize = cfg.get("resamples")?;
    let threshold: f64 = cfg.get("threshold")?;
    if !(0.0..=1.0).contains(&threshold) {
        return Err(CliError::config(format!("threshold must lie in [0, 1], got {threshold}")));
    }
    let seed: u64 = cfg.get("seed")?;
    let split: Split = field("split", cfg.raw("split").parse())?;
    let exec = Execution::default();

    let (scores, labels) = match (cfg.optional_path("predictions"), cfg.optional_path("checkpoint")) {
        (Some(p), None) => {
            let out = prepare_out(cfg)?;
            let preds = read_predictions(&p)?;
            return classification_report(&out, preds, threshold, resamples, seed, exec);
        }
        (None, Some(c)) => {
            if !c.is_file() {
                return Err(CliError::missing(format!("checkpoint {} not found", c.display())));
            }
            let ck = Checkpoint::load(&c)?;
            let data = dataset_dir(cfg.path("data")?)?;
            match ck.section {
                Section::Translation => return fidelity_report(cfg, &ck, &data, split, exec),
                Section::Screening => {
                    let sys = load_student(&ck)?;
                    let set = load_split(&data, split, modality(cfg)?, sys.cfg.student.side, exec)?;
                    (sys.predict(&set, exec)?, set.labels)
                }
            }
        }
        (Some(_), Some(_)) => return Err(CliError::config("set only one of checkpoint and predictions")),
        (None, None) => return Err(CliError::config("eval needs checkpoint or predictions")),
    };
    let out = prepare_out(cfg)?;
    let rows: Vec<Vec<String>> = scores.iter().zip(&labels).map(|(s, l)| vec![num(*s), l.to_string()]).collect();
    write_csv(&out.join(PREDICTIONS), &PREDICTIONS_HEADER, &rows)?;
    classification_report(&out, (scores, labels), threshold, resamples, seed, exec)
}

fn classification_report(
    out: &Path,
    (scores, labels): (Vec<f64>, Vec<u8>),
    threshold: f64,
    resamples: usize,
    seed: u64,
    exec: Execution,
) -> Result<String, CliError> {
    let preds = PredictionSet::with_threshold(scores, labels, threshold).map_err(|e| CliError::data(e.to_string()))?;
    if !preds.has_both_classes() {
        return Err(CliError::data(format!(
            "evaluation set of {} predictions lacks one class ({} positive)",
            preds.len(),
            preds.positives()
        )));
    }
    let c = confusion_metrics(&preds)?;
    let auc = roc_auc(&preds)?;
    let row = vec![
        preds.len().to_string(),
        c.tp.to_string(),
        c.fp.to_string(),
        c.tn.to_string(),
        c.fn_.to_string(),
        num(c.accuracy),
        opt_num(c.sensitivity),
        opt_num(c.specificity),
        opt_num(c.precision),
        opt_num(c.f1),
        num(auc),
    ];
    write_csv(&out.join(METRICS), &METRICS_HEADER, &[row])?;
    let mut summary = format!(
        "n {} accuracy {:.4} sensitivity {} specificity {} auc {:.4}",
        preds.len(),
        c.accuracy,
        c.sensitivity.map_or("NA".into(), |v| format!("{v:.4}")),
        c.specificity.map_or("NA".into(), |v| format!("{v:.4}")),
        auc
    );
    let boot_path = out.join(BOOTSTRAP);
    if resamples == 0 {
        if boot_path.exists() {
            fs::remove_file(&boot_path)?;
        }
        return Ok(summary);
    }
    let report = bootstrap_ci(&preds, resamples, seed, exec)?;
    let rows: Vec<Vec<String>> = Metric::ALL
        .iter()
        .filter_map(|&m| report.get(m))
        .map(|s| vec![s.metric.to_string(), num(s.mean), num(s.sd), num(s.ci_lo), num(s.ci_hi), s.draws.to_string()])
        .collect();
    write_csv(&boot_path, &BOOTSTRAP_HEADER, &rows)?;
    if let Some(a) = report.get(Metric::Accuracy) {
        summary.push_str(&format!("; accuracy 95% CI [{:.4}, {:.4}] over {resamples} resamples", a.ci_lo, a.ci_hi));
    }
    Ok(summary)
}

fn fidelity_report(cfg: &RunConfig, ck: &Checkpoint, data: &Path, split: Split, exec: Execution) -> Result<String, CliError> {
    let trained = load_translator(ck)?;
    let untrained = TranslationSystem::new(trained.cfg)?;
    let source = load_split(data, split, Modality::Mri, trained.cfg.side, exec)?;
    let after = trained.fidelity(&source, exec)?;
    let before = untrained.fidelity(&source, exec)?;
    let out = prepare_out(cfg)?;
    let row = vec![split.to_string(), source.len().to_string(), num(after), num(before), num(after - before)];
    write_csv(&out.join(FIDELITY), &FIDELITY_HEADER, &[row])?;
    Ok(format!("structure fidelity on {split}: trained {after:.4}, untrained {before:.4}"))
}

/// Rows of the screening table for one sensitivity/specificity pair.
pub fn screening_table(se: f64, sp: f64, prevalences: &[f64]) -> Result<Vec<ScreeningProfile>, CliError> {
    prevalences
        .iter()
        .map(|&p| screening_indicators(se, sp, p).map_err(|e| CliError::config(e.to_string())))
        .collect()
}

fn pct(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".into(), |v| format!("{:.2}%", 100.0 * v))
}

pub fn format_screening(rows: &[ScreeningProfile]) -> String {
    let mut s = format!("{:>10} {:>8} {:>8} {:>8} {:>10} {:>6}\n", "prevalence", "LR+", "PPV", "NPV", "positive", "NNS");
    for r in rows {
        let lr = if r.lr_plus_infinite() { "inf".into() } else { format!("{:.2}", r.lr_plus) };
        let nns = r.nns_rounded().map_or_else(|| "inf".into(), |n| n.to_string());
        s.push_str(&format!(
            "{:>10} {:>8} {:>8} {:>8} {:>10} {:>6}\n",
            r.p,
            lr,
            pct(r.ppv),
            pct(r.npv),
            pct(Some(r.rate)),
            nns
        ));
    }
    s
}

fn screen(cfg: &RunConfig) -> Result<String, CliError> {
    let se: f64 = cfg.get("sensitivity")?;
    let sp: f64 = cfg.get("specificity")?;
    let prevalences = cfg.list_f64("prevalence")?;
    let rows = screening_table(se, sp, &prevalences)?;
    let out = prepare_out(cfg)?;
    let csv_rows: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.p.to_string(),
                num(r.lr_plus),
                opt_num(r.ppv),
                opt_num(r.npv),
                num(r.rate),
                num(r.nns),
                r.nns_rounded().map_or_else(|| "inf".into(), |n| n.to_string()),
            ]
        })
        .collect();
    write_csv(&out.join(SCREEN), &SCREEN_HEADER, &csv_rows)?;
    Ok(format_screening(&rows))
}
