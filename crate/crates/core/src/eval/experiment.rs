//! Manifest-driven experiments: every arm is trained on each repetition and
//! training size of a learning-curve plan and scored on the held-out set.
//!
//! Manifest keys (flat `key=value`):
//!
//! - `dataset`: CSV path with `text,label` columns.
//! - `seed`, `plan` (`holdout`, `desk` or `full`), `repetitions`, and for
//!   `holdout` the `test_fraction`; `pool`, `test` and `train_sizes` override
//!   any preset.
//! - `folds`, `tune_once`, `tune_size`, `oversample` control tuning.
//! - `arms`: comma-separated names; `arm.<name>.kind` picks the classifier
//!   (defaults to the name) and other `arm.<name>.*` keys are its parameters,
//!   with `arm.<name>.grid.<param>=v1,v2` declaring a tuning axis.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use serde_json::Value;

use super::arms::{Arm, ArmKind};
use super::curve::{make_learning_curve_splits, CurveSplit, LearningCurvePlan};
use super::cv::{derive_seed, kfold_grid_search, CvRow, FoldOutcome, GridSpec, PointSummary};
use super::dataset::{load_csv_dataset, Dataset};
use super::metrics::{macro_f1, MetricsReport};
use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::train::random_oversample;

pub const REPORT_FILE: &str = "report.json";
pub const SUMMARY_FILE: &str = "summary.txt";

/// Mean, minimum and maximum of a set of scores.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub min: f64,
    pub max: f64,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        Some(Aggregate {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RepetitionReport {
    pub repetition: usize,
    pub train_size: usize,
    pub seed: u64,
    /// Hyperparameters after tuning.
    pub params: BTreeMap<String, String>,
    #[serde(flatten)]
    pub metrics: Option<MetricsReport>,
    pub seconds: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TuningReport {
    pub repetition: usize,
    pub train_size: usize,
    pub points: Vec<BTreeMap<String, String>>,
    pub rows: Vec<CvRow>,
    pub summary: Vec<PointSummary>,
    pub best: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ArmReport {
    pub name: String,
    pub config: BTreeMap<String, String>,
    pub repetitions: Vec<RepetitionReport>,
    /// Macro-F1 over the successful repetitions.
    pub aggregate: Option<Aggregate>,
    pub failures: usize,
    pub tuning: Vec<TuningReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Environment {
    pub package: String,
    pub version: String,
    pub os: String,
    pub arch: String,
    pub dataset: String,
    pub instances: usize,
    pub categories: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Report {
    pub manifest: BTreeMap<String, String>,
    pub environment: Environment,
    pub arms: Vec<ArmReport>,
}

impl Report {
    pub fn failures(&self) -> usize {
        self.arms.iter().map(|a| a.failures).sum()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Fixed-width table of the aggregate macro-F1 per arm.
    pub fn summary_table(&self) -> String {
        let width = self.arms.iter().map(|a| a.name.len()).max().unwrap_or(3).max(3);
        let mut s = format!(
            "{:<width$}  {:>4}  {:>8}  {:>8}  {:>8}  {:>8}\n",
            "arm", "runs", "mean", "min", "max", "failures"
        );
        for a in &self.arms {
            let runs = a.repetitions.len() - a.failures;
            match a.aggregate {
                Some(g) => writeln!(
                    s,
                    "{:<width$}  {runs:>4}  {:>8.4}  {:>8.4}  {:>8.4}  {:>8}",
                    a.name, g.mean, g.min, g.max, a.failures
                ),
                None => writeln!(
                    s,
                    "{:<width$}  {runs:>4}  {:>8}  {:>8}  {:>8}  {:>8}",
                    a.name, "-", "-", "-", a.failures
                ),
            }
            .expect("writing to a String");
        }
        s
    }
}

/// Removes every `seconds` field so reports from repeated runs compare equal.
pub fn strip_timings(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.remove("seconds");
            map.values_mut().for_each(strip_timings);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

fn to_map(kv: &KeyValues) -> BTreeMap<String, String> {
    kv.iter().map(|(k, v)| (k.to_owned(), v.to_owned())).collect()
}

/// A parsed manifest ready to run.
#[derive(Clone, Debug)]
pub struct Experiment {
    pub manifest: KeyValues,
    pub dataset: Dataset,
    pub plan: LearningCurvePlan,
    pub arms: Vec<Arm>,
    pub folds: usize,
    pub tune_once: bool,
    pub tune_size: Option<usize>,
    pub oversample: Option<f64>,
}

/// Learning-curve plan described by the manifest for a dataset of `n` instances.
pub fn plan_from_manifest(kv: &KeyValues, n: usize) -> Result<LearningCurvePlan> {
    let seed = kv.get_or("seed", 0)?;
    let mut plan = match kv.raw("plan").unwrap_or("holdout") {
        "full" => LearningCurvePlan::full(seed),
        "desk" => LearningCurvePlan::desk(seed),
        "holdout" => {
            let fraction: f64 = kv.get_or("test_fraction", 0.2)?;
            if !(fraction > 0.0 && fraction < 1.0) {
                return Err(Error::Parameter(format!("`test_fraction` {fraction} outside (0, 1)")));
            }
            let test = ((n as f64 * fraction).round() as usize).clamp(1, n.saturating_sub(1).max(1));
            LearningCurvePlan {
                pool: n,
                test,
                train_sizes: vec![n.saturating_sub(test)],
                repetitions: 1,
                seed,
            }
        }
        other => {
            return Err(Error::Parameter(format!(
                "`plan` = {other:?}: expected holdout, desk or full"
            )))
        }
    };
    plan.pool = kv.get_or("pool", plan.pool)?;
    plan.test = kv.get_or("test", plan.test)?;
    if let Some(sizes) = kv.get_list("train_sizes")? {
        plan.train_sizes = sizes;
    }
    plan.repetitions = kv.get_or("repetitions", plan.repetitions)?;
    plan.validate()?;
    Ok(plan)
}

impl Experiment {
    /// Reads the manifest at `path`; relative paths inside it are resolved
    /// against its directory. `overrides` replace manifest entries.
    pub fn load(path: &Path, overrides: &KeyValues) -> Result<Self> {
        let mut kv = KeyValues::load(path)?;
        kv.merge(overrides);
        let base = path.parent().map(Path::to_owned).unwrap_or_else(|| PathBuf::from("."));
        let data_path = kv.require::<String>("dataset")?;
        let data_path = if Path::new(&data_path).is_absolute() {
            PathBuf::from(data_path)
        } else {
            base.join(data_path)
        };
        let dataset = load_csv_dataset(&data_path)?;
        Self::from_parts(kv, dataset, &base)
    }

    pub fn from_parts(manifest: KeyValues, dataset: Dataset, base_dir: &Path) -> Result<Self> {
        let plan = plan_from_manifest(&manifest, dataset.len())?;
        let names: Vec<String> = manifest
            .get_list("arms")?
            .ok_or_else(|| Error::Parameter("missing required key `arms`".into()))?;
        if names.is_empty() {
            return Err(Error::Parameter("`arms` lists no arm".into()));
        }
        let mut arms = Vec::with_capacity(names.len());
        for name in &names {
            let cfg = manifest.with_prefix(&format!("arm.{name}."));
            let kind: ArmKind = cfg.raw("kind").unwrap_or(name).parse()?;
            arms.push(Arm::new(name, kind, cfg.without_prefix("kind"), base_dir)?);
        }
        let oversample = manifest.get("oversample")?;
        if let Some(r) = oversample {
            if !(r > 0.0 && r <= 1.0) {
                return Err(Error::Parameter(format!("`oversample` {r} outside (0, 1]")));
            }
        }
        Ok(Experiment {
            plan,
            arms,
            folds: manifest.get_or("folds", 5)?,
            tune_once: manifest.get_or("tune_once", false)?,
            tune_size: manifest.get("tune_size")?,
            oversample,
            manifest,
            dataset,
        })
    }

    /// Runs every arm; per-arm failures are recorded rather than returned.
    pub fn run(&self) -> Result<Report> {
        let splits = make_learning_curve_splits(self.dataset.len(), &self.plan)?;
        let base_seed = self.plan.seed;
        let mut arms = Vec::new();
        for (ai, arm) in self.arms.iter().enumerate() {
            let arm_seed = derive_seed(base_seed, ai + 1, 0);
            let mut by_size: BTreeMap<usize, ArmReport> = BTreeMap::new();
            let mut once: Option<KeyValues> = None;
            let grid = GridSpec::from_key_values(arm.config())?;
            let base = arm.config().without_prefix("grid.");
            for split in &splits {
                for (si, (size, train_idx)) in split.train.iter().enumerate() {
                    let entry = by_size.entry(si).or_insert_with(|| ArmReport {
                        name: if self.plan.train_sizes.len() > 1 {
                            format!("{}@{size}", arm.name())
                        } else {
                            arm.name().to_owned()
                        },
                        config: to_map(arm.config()),
                        repetitions: Vec::new(),
                        aggregate: None,
                        failures: 0,
                        tuning: Vec::new(),
                    });
                    let seed = derive_seed(arm_seed, si, split.repetition + 1);
                    let started = Instant::now();
                    let outcome = self.run_one(arm, &grid, &base, &mut once, split, *size, train_idx, seed);
                    let seconds = started.elapsed().as_secs_f64();
                    let rep = match outcome {
                        Ok((params, metrics, tuning)) => {
                            entry.tuning.extend(tuning);
                            RepetitionReport {
                                repetition: split.repetition,
                                train_size: *size,
                                seed,
                                params: to_map(&params),
                                metrics: Some(metrics),
                                seconds,
                                error: None,
                            }
                        }
                        Err(e) => {
                            log::error!("arm `{}` repetition {}: {e}", entry.name, split.repetition);
                            entry.failures += 1;
                            RepetitionReport {
                                repetition: split.repetition,
                                train_size: *size,
                                seed,
                                params: BTreeMap::new(),
                                metrics: None,
                                seconds,
                                error: Some(e.to_string()),
                            }
                        }
                    };
                    entry.repetitions.push(rep);
                }
            }
            for (_, mut entry) in by_size {
                let scores: Vec<f64> = entry
                    .repetitions
                    .iter()
                    .filter_map(|r| r.metrics.as_ref().map(|m| m.macro_f1))
                    .collect();
                entry.aggregate = Aggregate::of(&scores);
                arms.push(entry);
            }
        }
        Ok(Report {
            manifest: to_map(&self.manifest),
            environment: Environment {
                package: env!("CARGO_PKG_NAME").into(),
                version: env!("CARGO_PKG_VERSION").into(),
                os: std::env::consts::OS.into(),
                arch: std::env::consts::ARCH.into(),
                dataset: self.dataset.provenance.clone(),
                instances: self.dataset.len(),
                categories: self.dataset.categories.clone(),
            },
            arms,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn run_one(
        &self,
        arm: &Arm,
        grid: &GridSpec,
        base: &KeyValues,
        once: &mut Option<KeyValues>,
        split: &CurveSplit,
        size: usize,
        train_idx: &[usize],
        seed: u64,
    ) -> Result<(KeyValues, MetricsReport, Option<TuningReport>)> {
        let ds = &self.dataset;
        let c = ds.num_classes();
        let tune_here = match self.tune_size {
            Some(t) => t == size,
            None => size == self.plan.train_sizes[0],
        };
        let mut tuning = None;
        let params = if grid.is_empty() {
            base.clone()
        } else if let (true, Some(p)) = (self.tune_once, once.as_ref()) {
            p.clone()
        } else if self.tune_once && !tune_here {
            return Err(Error::Parameter(format!(
                "tune_once needs the tuning size to come first; training size {size} was reached before it"
            )));
        } else {
            let labels: Vec<usize> = train_idx.iter().map(|&i| ds.labels[i]).collect();
            let result = kfold_grid_search(&labels, c, self.folds, grid, seed, self.oversample, |task| {
                let mut p = base.clone();
                p.merge(task.point);
                let tr: Vec<usize> = task.train.iter().map(|&j| train_idx[j]).collect();
                let va: Vec<usize> = task.validation.iter().map(|&j| train_idx[j]).collect();
                let train_set = ds.subset(&tr);
                let preds = arm.fit_predict(&train_set, &[&train_set, &ds.subset(&va)], &p, task.seed)?;
                let mut it = preds.into_iter();
                Ok(FoldOutcome {
                    train_predictions: it.next().unwrap_or_default(),
                    validation_predictions: it.next().unwrap_or_default(),
                })
            })?;
            let mut p = base.clone();
            p.merge(result.best_point());
            tuning = Some(TuningReport {
                repetition: split.repetition,
                train_size: size,
                points: result.points.iter().map(to_map).collect(),
                rows: result.table,
                summary: result.summary,
                best: result.best,
            });
            if self.tune_once {
                *once = Some(p.clone());
            }
            p
        };
        let train_idx: Vec<usize> = match self.oversample {
            Some(ratio) => {
                let labels: Vec<usize> = train_idx.iter().map(|&i| ds.labels[i]).collect();
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                random_oversample(&labels, ratio, &mut rng)?
                    .into_iter()
                    .map(|j| train_idx[j])
                    .collect()
            }
            None => train_idx.to_vec(),
        };
        let test = ds.subset(&split.test);
        let preds = arm.fit_predict(&ds.subset(&train_idx), &[&test], &params, seed)?;
        let metrics = macro_f1(&preds[0], &test.labels, c)?;
        Ok((params, metrics, tuning))
    }
}

/// Runs the manifest at `path` and writes the JSON report and text summary
/// into `out`.
pub fn run_experiment(path: &Path, overrides: &KeyValues, out: &Path) -> Result<Report> {
    let exp = Experiment::load(path, overrides)?;
    let report = exp.run()?;
    write_report(&report, out)?;
    Ok(report)
}

pub fn write_report(report: &Report, out: &Path) -> Result<()> {
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let json = out.join(REPORT_FILE);
    fs::write(&json, report.to_json()?).map_err(|e| Error::io(&json, e))?;
    let txt = out.join(SUMMARY_FILE);
    fs::write(&txt, report.summary_table()).map_err(|e| Error::io(&txt, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy(n: usize) -> Dataset {
        Dataset::from_records(
            (0..n).map(|i| {
                if i % 2 == 0 {
                    (format!("good great fine w{i}"), "pos")
                } else {
                    (format!("bad awful poor w{i}"), "neg")
                }
            }),
            "toy",
        )
    }

    fn manifest(extra: &str) -> KeyValues {
        KeyValues::parse(&format!("seed=1\narms=bow\narm.bow.max_df=1.0\n{extra}")).unwrap()
    }

    #[test]
    fn aggregation_is_mean_min_max() {
        let a = Aggregate::of(&[0.8, 0.9]).unwrap();
        assert!((a.mean - 0.85).abs() < 1e-12);
        assert_eq!((a.min, a.max), (0.8, 0.9));
        assert!(Aggregate::of(&[]).is_none());
    }

    #[test]
    fn one_arm_one_dataset_gives_one_entry() {
        let exp = Experiment::from_parts(manifest(""), toy(30), Path::new(".")).unwrap();
        let report = exp.run().unwrap();
        assert_eq!(report.arms.len(), 1);
        assert_eq!(report.arms[0].repetitions.len(), 1);
        assert_eq!(report.failures(), 0);
        assert_eq!(report.arms[0].aggregate.unwrap().mean, 1.0);
    }

    #[test]
    fn grid_tuning_is_reported_and_reproducible() {
        let kv = manifest("repetitions=2\nfolds=3\narm.bow.grid.penalty=0.1,10\n");
        let exp = Experiment::from_parts(kv, toy(40), Path::new(".")).unwrap();
        let a = exp.run().unwrap();
        assert_eq!(a.arms[0].tuning.len(), 2);
        assert_eq!(a.arms[0].tuning[0].rows.len(), 6);
        let mut ja: Value = serde_json::from_str(&a.to_json().unwrap()).unwrap();
        let mut jb: Value = serde_json::from_str(&exp.run().unwrap().to_json().unwrap()).unwrap();
        strip_timings(&mut ja);
        strip_timings(&mut jb);
        assert_eq!(ja, jb);
    }

    #[test]
    fn arm_failures_are_recorded_not_raised() {
        // a non-positive penalty is only rejected when the linear model is fit
        let kv = manifest("arm.bow.penalty=-1\n");
        let report = Experiment::from_parts(kv, toy(20), Path::new(".")).unwrap().run().unwrap();
        assert!(report.failures() > 0);
        assert!(report.arms[0].repetitions[0].error.is_some());
        assert!(report.summary_table().contains("bow"));
    }

    #[test]
    fn unknown_arm_kind_is_a_parameter_error() {
        let kv = KeyValues::parse("arms=svm\n").unwrap();
        assert!(matches!(
            Experiment::from_parts(kv, toy(10), Path::new(".")),
            Err(Error::Parameter(_))
        ));
    }
}
