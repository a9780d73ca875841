use std::fs;
use std::path::Path;

use deskbert::eval::{
    fine_tune_config, kfold_grid_search, load_csv_dataset, macro_f1, make_learning_curve_splits,
    plan_from_manifest, run_experiment, write_report, Arm, ArmKind, Experiment, FoldOutcome, GridSpec,
};
use deskbert::config::KeyValues;
use deskbert::model::{load_checkpoint, save_checkpoint, BertModel, MaskingConfig, ModelConfig};
use deskbert::tokenizer::{MergeScoring, Tokenizer, Truncation};
use deskbert::train::{
    fine_tune, pretrain, AdamConfig, LrSchedule, Optimizer, PretrainConfig, PretrainData, ScheduleShape,
    TrainConfig,
};
use deskbert::{Error, Result};

use crate::{Cli, Command};

/// Runs the selected subcommand and returns the number of failed arm runs.
pub fn run(cli: Cli) -> Result<usize> {
    let mut config = match &cli.common.config {
        Some(p) => KeyValues::load(p)?,
        None => KeyValues::new(),
    };
    if let Some(s) = cli.common.seed {
        config.set("seed", s);
    }
    let out = cli.common.out.as_path();
    match cli.command {
        Command::TokenizerTrain {
            corpus,
            vocab_size,
            scoring,
        } => {
            let lines = read_lines(&corpus)?;
            let size = match vocab_size {
                Some(v) => v,
                None => config.get_or("vocab_size", 2000)?,
            };
            let scoring: MergeScoring = match scoring {
                Some(s) => s.parse()?,
                None => config.get_or("scoring", MergeScoring::Frequency)?,
            };
            let tok = Tokenizer::train(&lines, size, scoring)?;
            tok.save(out)?;
            println!("{} terms, {} merges -> {}", tok.vocab_size(), tok.merges.len(), out.display());
            Ok(0)
        }
        Command::Pretrain { corpus, tokenizer } => {
            pretrain_cmd(&config, &corpus, &tokenizer, out)?;
            Ok(0)
        }
        Command::Finetune {
            data,
            tokenizer,
            checkpoint,
        } => {
            finetune_cmd(&config, &data, &tokenizer, checkpoint.as_deref(), out)?;
            Ok(0)
        }
        Command::Baseline { data, arm } => {
            let kind: ArmKind = arm.parse()?;
            if kind == ArmKind::Transformer {
                return Err(Error::Parameter("use `finetune` for the transformer arm".into()));
            }
            let manifest = single_arm_manifest(&config, &arm);
            let dataset = load_csv_dataset(&data)?;
            let report = Experiment::from_parts(manifest, dataset, &base_dir(cli.common.config.as_deref()))?.run()?;
            write_report(&report, out)?;
            print!("{}", report.summary_table());
            Ok(report.failures())
        }
        Command::Gridsearch { data, arm, folds } => {
            gridsearch_cmd(&config, &data, &arm, folds, &base_dir(cli.common.config.as_deref()), out)?;
            Ok(0)
        }
        Command::Curve { manifest } => {
            let mut overrides = config;
            let kv = KeyValues::load(&manifest)?;
            if !kv.contains("plan") && !overrides.contains("plan") {
                overrides.set("plan", "desk");
            }
            let report = run_experiment(&manifest, &overrides, out)?;
            print!("{}", report.summary_table());
            Ok(report.failures())
        }
        Command::Report { manifest } => {
            let report = run_experiment(&manifest, &config, out)?;
            print!("{}", report.summary_table());
            Ok(report.failures())
        }
    }
}

fn base_dir(config: Option<&Path>) -> std::path::PathBuf {
    config
        .and_then(Path::parent)
        .map(Path::to_owned)
        .unwrap_or_else(|| ".".into())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })?;
    Ok(text.lines().map(str::to_owned).collect())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_owned(),
            source: e,
        })?;
    }
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_owned(),
        source: e,
    })
}

/// Manifest running a single arm whose parameters are the whole config.
fn single_arm_manifest(config: &KeyValues, arm: &str) -> KeyValues {
    let mut m = KeyValues::new();
    for key in ["seed", "plan", "test_fraction", "repetitions", "pool", "test", "train_sizes", "folds", "oversample"] {
        if let Some(v) = config.raw(key) {
            m.set(key, v);
        }
    }
    m.set("arms", arm);
    for (k, v) in config.iter() {
        if !m.contains(k) {
            m.set(&format!("arm.{arm}.{k}"), v);
        }
    }
    m
}

fn pretrain_cmd(config: &KeyValues, corpus: &Path, tokenizer: &Path, out: &Path) -> Result<()> {
    let tok = Tokenizer::load(tokenizer)?;
    let mut documents: Vec<Vec<String>> = vec![Vec::new()];
    for line in read_lines(corpus)? {
        if line.trim().is_empty() {
            if !documents.last().is_some_and(Vec::is_empty) {
                documents.push(Vec::new());
            }
        } else {
            documents.last_mut().expect("one document").push(line);
        }
    }
    let seed = config.get_or("seed", 0)?;
    let mut kv = ModelConfig::micro(tok.vocab_size()).to_key_values();
    kv.merge(config);
    kv.set("vocab_size", tok.vocab_size());
    let model_cfg = ModelConfig::from_key_values(&kv)?;
    let max_len = config.get_or("max_len", model_cfg.max_positions)?;
    let data = PretrainData::from_documents(
        &documents,
        &tok,
        max_len,
        config.get_or("negative_fraction", 0.5)?,
        seed,
    )?;
    let d = TrainConfig::default();
    let train = TrainConfig {
        batch_size: config.get_or("batch_size", d.batch_size)?,
        epochs: config.get_or("epochs", d.epochs)?,
        seed,
        clip: Some(config.get_or("clip", 1.0)?),
        dropout: None,
    };
    let total = train.total_steps(data.len());
    let warmup = (config.get_or("warmup_fraction", 0.1)? * total as f64).round() as usize;
    let m = MaskingConfig::default();
    let cfg = PretrainConfig {
        train,
        masking: MaskingConfig {
            rate: config.get_or("mask_rate", m.rate)?,
            ..m
        },
        dynamic_masking: config.get_or("dynamic_masking", true)?,
        schedule: LrSchedule::new(
            config.get_or("schedule", ScheduleShape::WarmupLinear)?,
            config.get_or("lr", 1e-3)?,
            warmup.min(total),
            total,
        )?,
    };
    let mut model = BertModel::new(model_cfg, seed)?;
    let mut opt = Optimizer::adam(
        model.store(),
        AdamConfig {
            weight_decay: config.get_or("weight_decay", 0.01)?,
            ..AdamConfig::default()
        },
    );
    let trace = pretrain(&mut model, &data, &cfg, &mut opt)?;
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_owned(),
        source: e,
    })?;
    trace.write_csv(&out.join("loss.csv"))?;
    save_checkpoint(&model, &out.join("model.ckpt"))?;
    println!(
        "{} sequences, {} steps, loss {:.4} -> {:.4}",
        data.len(),
        trace.rows.len(),
        trace.first().unwrap_or(f64::NAN),
        trace.last().unwrap_or(f64::NAN)
    );
    Ok(())
}

fn finetune_cmd(
    config: &KeyValues,
    data: &Path,
    tokenizer: &Path,
    checkpoint: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let tok = Tokenizer::load(tokenizer)?;
    let dataset = load_csv_dataset(data)?;
    let seed: u64 = config.get_or("seed", 0)?;
    let mut holdout = config.clone();
    holdout.set("plan", "holdout");
    holdout.set("repetitions", 1);
    let plan = plan_from_manifest(&holdout, dataset.len())?;
    let split = make_learning_curve_splits(dataset.len(), &plan)?.remove(0);
    let train = dataset.subset(&split.train[0].1);
    let test = dataset.subset(&split.test);

    let mut model = match checkpoint {
        Some(p) => load_checkpoint(p)?,
        None => {
            let mut kv = ModelConfig::micro(tok.vocab_size()).to_key_values();
            kv.merge(config);
            kv.set("vocab_size", tok.vocab_size());
            kv.set("num_labels", 0);
            BertModel::new(ModelConfig::from_key_values(&kv)?, seed)?
        }
    };
    if model.config().vocab_size != tok.vocab_size() {
        return Err(Error::Parameter(format!(
            "tokenizer has {} terms but the model expects {}",
            tok.vocab_size(),
            model.config().vocab_size
        )));
    }
    model.attach_classifier(dataset.num_classes(), seed)?;
    let max_len = config.get_or("max_len", model.config().max_positions.min(128))?;
    let budget = max_len.saturating_sub(2);
    let trunc = Truncation::HeadTail {
        first: budget / 4,
        last: budget - budget / 4,
    };
    let encode = |texts: &[String]| -> Result<Vec<_>> {
        texts.iter().map(|t| tok.encode(t, None, max_len, trunc)).collect()
    };
    let inputs = encode(&train.texts)?;
    let (mut cfg, adam) = fine_tune_config(config, inputs.len(), seed)?;
    cfg.oversample = config.get("oversample")?;
    let mut opt = Optimizer::adam(model.store(), adam);
    let trace = fine_tune(&mut model, &inputs, &train.labels, &cfg, &mut opt)?;
    let preds = model.predict(&encode(&test.texts)?, 32)?;
    let metrics = macro_f1(&preds, &test.labels, dataset.num_classes())?;
    fs::create_dir_all(out).map_err(|e| Error::Io {
        path: out.to_owned(),
        source: e,
    })?;
    trace.write_csv(&out.join("loss.csv"))?;
    save_checkpoint(&model, &out.join("model.ckpt"))?;
    write_text(&out.join("metrics.json"), &serde_json::to_string_pretty(&metrics)?)?;
    println!("test macro-F1 {:.4} on {} instances", metrics.macro_f1, test.len());
    Ok(())
}

fn gridsearch_cmd(config: &KeyValues, data: &Path, arm: &str, folds: usize, base: &Path, out: &Path) -> Result<()> {
    let dataset = load_csv_dataset(data)?;
    let grid = GridSpec::from_key_values(config)?;
    let params = config.without_prefix("grid.");
    let arm = Arm::new(arm, arm.parse()?, params.clone(), base)?;
    let seed = config.get_or("seed", 0)?;
    let result = kfold_grid_search(
        &dataset.labels,
        dataset.num_classes(),
        folds,
        &grid,
        seed,
        config.get("oversample")?,
        |task| {
            let mut p = params.clone();
            p.merge(task.point);
            let train = dataset.subset(task.train);
            let preds = arm.fit_predict(&train, &[&train, &dataset.subset(task.validation)], &p, task.seed)?;
            let mut it = preds.into_iter();
            Ok(FoldOutcome {
                train_predictions: it.next().unwrap_or_default(),
                validation_predictions: it.next().unwrap_or_default(),
            })
        },
    )?;
    let json = serde_json::json!({
        "points": result.points.iter().map(|p| p.iter().collect::<std::collections::BTreeMap<_, _>>()).collect::<Vec<_>>(),
        "rows": result.table,
        "summary": result.summary,
        "best": result.best,
    });
    write_text(&out.join("cv.json"), &serde_json::to_string_pretty(&json)?)?;
    for (i, (p, s)) in result.points.iter().zip(&result.summary).enumerate() {
        let mark = if i == result.best { '*' } else { ' ' };
        println!(
            "{mark} {:<40} val {:.4}  train {:.4}",
            p.to_text().trim().replace('\n', " "),
            s.mean_validation,
            s.mean_train
        );
    }
    Ok(())
}
