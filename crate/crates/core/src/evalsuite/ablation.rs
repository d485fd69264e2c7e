//! Hyperparameter sweeps over β and the intermediate-loss terms.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::metrics::{mean_probe_auroc, probe_embeddings};
use super::probe::ProbeConfig;
use super::roc::{auroc_by_horizon, HORIZONS};
use super::trajectory::{organ_separation, relative_jumps};
use crate::cohort::Cohort;
use crate::embedding::{fit_validation_split, train, EmbeddingModel, LossConfig, ModelConfig};
use crate::error::{Error, Result};
use crate::numerics::checkpoint;
use crate::seed;

/// One grid point: a label and the loss settings it overrides.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationPoint {
    pub label: String,
    pub overrides: Vec<(String, String)>,
}

impl AblationPoint {
    pub fn new(overrides: &[(&str, &str)]) -> Self {
        let overrides: Vec<(String, String)> = overrides.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        let label = if overrides.is_empty() {
            "base".to_string()
        } else {
            overrides.iter().map(|(k, v)| format!("{k}={v}")).collect::<Vec<_>>().join(";")
        };
        Self { label, overrides }
    }

    pub fn apply(&self, base: &LossConfig) -> Result<LossConfig> {
        let mut cfg = base.clone();
        for (k, v) in &self.overrides {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Five β values followed by the three intermediate-term knockouts at the base β.
pub fn default_grid() -> Vec<AblationPoint> {
    let mut grid: Vec<AblationPoint> = ["0", "0.25", "0.5", "0.75", "1"]
        .iter()
        .map(|b| AblationPoint::new(&[("beta", b)]))
        .collect();
    grid.extend(["lambda3", "alpha", "lambda4"].iter().map(|k| AblationPoint::new(&[(k, "0")])));
    grid
}

/// Parses `key=v1,v2[;key2=w1,w2]` into the Cartesian product of the listed
/// values, first key varying slowest.
pub fn parse_grid(spec: &str, base: &LossConfig) -> Result<Vec<AblationPoint>> {
    let mut axes: Vec<(String, Vec<String>)> = Vec::new();
    for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (key, values) = part
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("grid axis `{part}` is not key=v1,v2,...")))?;
        let values: Vec<String> = values.split(',').map(|v| v.trim().to_string()).filter(|v| !v.is_empty()).collect();
        if values.is_empty() {
            return Err(Error::Config(format!("grid axis `{key}` has no values")));
        }
        axes.push((key.trim().to_string(), values));
    }
    if axes.is_empty() {
        return Err(Error::Config("empty grid".into()));
    }
    let mut points: Vec<Vec<(String, String)>> = vec![Vec::new()];
    for (key, values) in &axes {
        points = points
            .into_iter()
            .flat_map(|p| {
                values.iter().map(move |v| {
                    let mut q = p.clone();
                    q.push((key.clone(), v.clone()));
                    q
                })
            })
            .collect();
    }
    let grid: Vec<AblationPoint> = points
        .iter()
        .map(|p| AblationPoint::new(&p.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect::<Vec<_>>()))
        .collect();
    for p in &grid {
        p.apply(base)?;
    }
    Ok(grid)
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationSetup {
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub probe: ProbeConfig,
    pub horizons: Vec<usize>,
    /// Near-death window used for organ separation.
    pub separation_window: usize,
    /// Fraction of the training cohort kept for fitting; the rest selects the best epoch.
    pub fit_fraction: f64,
    pub cohort_seed: u64,
    pub seed: u64,
}

impl AblationSetup {
    pub fn new(model: ModelConfig, loss: LossConfig, cohort_seed: u64, seed: u64) -> Self {
        Self {
            model,
            loss,
            probe: ProbeConfig::default(),
            horizons: HORIZONS.to_vec(),
            separation_window: 24,
            fit_fraction: 0.9,
            cohort_seed,
            seed,
        }
    }

    /// Resolved settings of one grid point, in a fixed order.
    pub fn point_kv(&self, point: &AblationPoint) -> Result<Vec<(String, String)>> {
        let loss = point.apply(&self.loss)?;
        let mut kv: Vec<(String, String)> = self.model.to_kv().into_iter().map(|(k, v)| (format!("model.{k}"), v)).collect();
        kv.extend(loss.to_kv().into_iter().map(|(k, v)| (format!("loss.{k}"), v)));
        let horizons: Vec<String> = self.horizons.iter().map(|h| h.to_string()).collect();
        kv.extend([
            ("probe.n_splits".to_string(), self.probe.n_splits.to_string()),
            ("probe.train_fraction".to_string(), self.probe.train_fraction.to_string()),
            ("probe.solver".to_string(), format!("{:?}", self.probe.logistic.solver)),
            ("horizons".to_string(), horizons.join(",")),
            ("separation_window".to_string(), self.separation_window.to_string()),
            ("fit_fraction".to_string(), self.fit_fraction.to_string()),
            ("cohort_seed".to_string(), self.cohort_seed.to_string()),
            ("seed".to_string(), self.seed.to_string()),
        ]);
        Ok(kv)
    }

    pub fn point_hash(&self, point: &AblationPoint) -> Result<String> {
        Ok(seed::config_hash(&self.point_kv(point)?))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub label: String,
    pub beta: f64,
    pub lambda3: f64,
    pub alpha: f64,
    pub lambda4: f64,
    /// Norm AUROC per horizon, in setup order.
    pub norm_auroc: Vec<f64>,
    pub mean_norm_auroc: f64,
    /// Mean over horizons of the split-mean probe AUROC.
    pub probe_auroc: f64,
    pub probe_excluded: usize,
    pub jump_mean: f64,
    pub jump_pairs: usize,
    pub jump_excluded: usize,
    pub separation_within: f64,
    pub separation_between: f64,
    pub separation_gap: f64,
    pub best_epoch: usize,
    pub cohort_seed: u64,
    pub seed: u64,
    pub config_hash: String,
}

impl AblationRow {
    pub fn header(horizons: &[usize]) -> Vec<String> {
        let mut h: Vec<String> = ["label", "beta", "lambda3", "alpha", "lambda4"].iter().map(|s| s.to_string()).collect();
        h.extend(horizons.iter().map(|x| format!("norm_auroc_{x}h")));
        h.extend(
            [
                "mean_norm_auroc",
                "probe_auroc",
                "probe_excluded",
                "jump_mean",
                "jump_pairs",
                "jump_excluded",
                "separation_within",
                "separation_between",
                "separation_gap",
                "best_epoch",
                "cohort_seed",
                "seed",
                "config_hash",
            ]
            .iter()
            .map(|s| s.to_string()),
        );
        h
    }

    pub fn to_record(&self) -> Vec<String> {
        let mut r = vec![
            self.label.clone(),
            self.beta.to_string(),
            self.lambda3.to_string(),
            self.alpha.to_string(),
            self.lambda4.to_string(),
        ];
        r.extend(self.norm_auroc.iter().map(|a| a.to_string()));
        r.extend([
            self.mean_norm_auroc.to_string(),
            self.probe_auroc.to_string(),
            self.probe_excluded.to_string(),
            self.jump_mean.to_string(),
            self.jump_pairs.to_string(),
            self.jump_excluded.to_string(),
            self.separation_within.to_string(),
            self.separation_between.to_string(),
            self.separation_gap.to_string(),
            self.best_epoch.to_string(),
            self.cohort_seed.to_string(),
            self.seed.to_string(),
            self.config_hash.clone(),
        ]);
        r
    }

    pub fn from_record(record: &[String], horizons: usize) -> Result<Self> {
        let expected = 5 + horizons + 13;
        if record.len() != expected {
            return Err(Error::shape("ablation row", expected, record.len()));
        }
        let num = |i: usize| -> Result<f64> {
            record[i]
                .parse()
                .map_err(|_| Error::Parse { line: 2, column: format!("field {i}"), message: format!("`{}` is not a number", record[i]) })
        };
        let int = |i: usize| -> Result<u64> {
            record[i]
                .parse()
                .map_err(|_| Error::Parse { line: 2, column: format!("field {i}"), message: format!("`{}` is not an integer", record[i]) })
        };
        let o = 5 + horizons;
        Ok(Self {
            label: record[0].clone(),
            beta: num(1)?,
            lambda3: num(2)?,
            alpha: num(3)?,
            lambda4: num(4)?,
            norm_auroc: (5..o).map(num).collect::<Result<_>>()?,
            mean_norm_auroc: num(o)?,
            probe_auroc: num(o + 1)?,
            probe_excluded: int(o + 2)? as usize,
            jump_mean: num(o + 3)?,
            jump_pairs: int(o + 4)? as usize,
            jump_excluded: int(o + 5)? as usize,
            separation_within: num(o + 6)?,
            separation_between: num(o + 7)?,
            separation_gap: num(o + 8)?,
            best_epoch: int(o + 9)? as usize,
            cohort_seed: int(o + 10)?,
            seed: int(o + 11)?,
            config_hash: record[o + 12].clone(),
        })
    }
}

/// Rows as CSV text with a header line.
pub fn rows_to_csv(rows: &[AblationRow], horizons: &[usize]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(AblationRow::header(horizons))?;
    for r in rows {
        w.write_record(r.to_record())?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

pub fn rows_from_csv(bytes: &[u8], horizons: &[usize]) -> Result<Vec<AblationRow>> {
    let mut r = csv::Reader::from_reader(bytes);
    let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
    if header != AblationRow::header(horizons) {
        return Err(Error::Parse { line: 1, column: "header".into(), message: "unexpected ablation header".into() });
    }
    r.records()
        .map(|rec| AblationRow::from_record(&rec?.iter().map(str::to_string).collect::<Vec<_>>(), horizons.len()))
        .collect()
}

/// Trains and evaluates one grid point. Every point uses the same initial
/// weights, batch stream and probe splits, so rows differ only through the
/// loss settings.
pub fn run_point(train_cohort: &Cohort, test_cohort: &Cohort, setup: &AblationSetup, point: &AblationPoint) -> Result<AblationRow> {
    let loss = point.apply(&setup.loss)?;
    let config_hash = setup.point_hash(point)?;
    let (fit, val) = fit_validation_split(train_cohort, setup.fit_fraction, &mut seed::rng_for(setup.seed, "ablation.validation", 0))?;
    let mut model = EmbeddingModel::<f64>::for_cohort(setup.model.clone(), &fit, &mut seed::rng_for(setup.seed, "ablation.init", 0))?;
    let report = train(&mut model, &fit, &val, &loss, &mut seed::rng_for(setup.seed, "ablation.train", 0))?;

    let embeddings = model.embed_cohort(test_cohort)?;
    let risk: Vec<Vec<f64>> = embeddings.iter().map(crate::embedding::row_norms_sq).collect();
    let roc = auroc_by_horizon(&risk, test_cohort, &setup.horizons)?;
    let norm_auroc: Vec<f64> = roc.iter().map(|(_, r)| r.auroc).collect();
    let probes = probe_embeddings(
        &embeddings,
        test_cohort,
        &setup.horizons,
        false,
        &setup.probe,
        seed::derive(setup.seed, "ablation.probe", 0),
    )?;
    let jumps = relative_jumps(&risk);
    let sep = organ_separation(&embeddings, test_cohort, setup.separation_window)?;
    Ok(AblationRow {
        label: point.label.clone(),
        beta: loss.beta,
        lambda3: loss.lambda3,
        alpha: loss.alpha,
        lambda4: loss.lambda4,
        mean_norm_auroc: norm_auroc.iter().sum::<f64>() / norm_auroc.len().max(1) as f64,
        norm_auroc,
        probe_auroc: mean_probe_auroc(&probes),
        probe_excluded: probes.iter().map(|(_, p)| p.excluded).sum(),
        jump_mean: jumps.mean,
        jump_pairs: jumps.pairs,
        jump_excluded: jumps.excluded,
        separation_within: sep.within,
        separation_between: sep.between,
        separation_gap: sep.gap,
        best_epoch: report.best_epoch,
        cohort_seed: setup.cohort_seed,
        seed: setup.seed,
        config_hash,
    })
}

/// Evaluates every grid point (in parallel on the current rayon pool) and
/// returns rows in grid order.
pub fn ablation_sweep(train_cohort: &Cohort, test_cohort: &Cohort, setup: &AblationSetup, grid: &[AblationPoint]) -> Result<Vec<AblationRow>> {
    grid.par_iter().map(|p| run_point(train_cohort, test_cohort, setup, p)).collect()
}

/// File holding the finished row of one grid point.
pub fn row_path(dir: &Path, setup: &AblationSetup, point: &AblationPoint) -> Result<PathBuf> {
    let safe: String = point
        .label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect();
    Ok(dir.join(format!("row_{safe}_s{}_{}.csv", setup.seed, setup.point_hash(point)?)))
}

/// Like [`ablation_sweep`], but each finished row is written to `dir` as soon
/// as it is computed and points whose row file already exists are loaded
/// instead of recomputed, so an interrupted sweep picks up where it stopped.
pub fn resumable_sweep(
    dir: &Path,
    train_cohort: &Cohort,
    test_cohort: &Cohort,
    setup: &AblationSetup,
    grid: &[AblationPoint],
) -> Result<Vec<AblationRow>> {
    fs::create_dir_all(dir)?;
    grid.par_iter()
        .map(|p| {
            let path = row_path(dir, setup, p)?;
            if path.exists() {
                let rows = rows_from_csv(&fs::read(&path)?, &setup.horizons)?;
                if let [row] = rows.as_slice() {
                    return Ok(row.clone());
                }
            }
            let row = run_point(train_cohort, test_cohort, setup, p)?;
            checkpoint::write_atomic(&path, &rows_to_csv(std::slice::from_ref(&row), &setup.horizons)?)?;
            Ok(row)
        })
        .collect()
}
