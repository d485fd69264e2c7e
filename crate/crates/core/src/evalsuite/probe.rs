//! Logistic-regression probes on frozen features.

use rayon::prelude::*;

use super::roc::auroc;
use crate::cohort::split_indices;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub enum Solver {
    /// Damped Newton steps on the penalized log-loss.
    #[default]
    Newton,
    /// Fixed-step full-batch gradient descent.
    GradientDescent { step: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogisticConfig {
    pub l2: f64,
    pub tolerance: f64,
    pub max_iter: usize,
    pub solver: Solver,
}

impl Default for LogisticConfig {
    fn default() -> Self {
        Self {
            l2: 1e-4,
            tolerance: 1e-6,
            max_iter: 5000,
            solver: Solver::Newton,
        }
    }
}

/// Fitted model on standardized inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct LogisticModel {
    pub weights: Vec<f64>,
    pub bias: f64,
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl LogisticModel {
    /// Linear score (log-odds) of one feature row.
    pub fn decision(&self, x: &[f64]) -> f64 {
        self.bias
            + x.iter()
                .zip(&self.weights)
                .zip(self.mean.iter().zip(&self.scale))
                .map(|((v, w), (m, s))| w * (v - m) / s)
                .sum::<f64>()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Solves `a x = b` for a small symmetric positive definite `a` (row-major).
fn cholesky_solve(a: &[f64], b: &[f64]) -> Option<Vec<f64>> {
    let n = b.len();
    let mut l = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i * n + k] * l[j * n + k]).sum();
            if i == j {
                let d = a[i * n + i] - s;
                if d <= 0.0 {
                    return None;
                }
                l[i * n + i] = d.sqrt();
            } else {
                l[i * n + j] = (a[i * n + j] - s) / l[j * n + j];
            }
        }
    }
    let mut y = vec![0.0; n];
    for i in 0..n {
        y[i] = (b[i] - (0..i).map(|k| l[i * n + k] * y[k]).sum::<f64>()) / l[i * n + i];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        x[i] = (y[i] - (i + 1..n).map(|k| l[k * n + i] * x[k]).sum::<f64>()) / l[i * n + i];
    }
    Some(x)
}

/// Binary logistic regression minimizing
/// `mean log-loss + (l2/2)·‖w‖²` (bias unpenalized) on standardized features,
/// stopping once the gradient norm falls below `tolerance`.
pub fn fit_logistic(features: &[&[f64]], labels: &[bool], config: &LogisticConfig) -> Result<LogisticModel> {
    let n = features.len();
    if n == 0 || n != labels.len() {
        return Err(Error::shape("fit_logistic", "matching non-empty rows and labels", format!("{n} rows, {} labels", labels.len())));
    }
    let dim = features[0].len();
    let mut mean = vec![0.0; dim];
    for row in features {
        for (m, v) in mean.iter_mut().zip(row.iter()) {
            *m += v / n as f64;
        }
    }
    let mut scale = vec![0.0; dim];
    for row in features {
        for k in 0..dim {
            scale[k] += (row[k] - mean[k]).powi(2) / n as f64;
        }
    }
    for s in &mut scale {
        *s = if s.sqrt() > 1e-12 { s.sqrt() } else { 1.0 };
    }
    // Design matrix with a leading intercept column.
    let p = dim + 1;
    let x: Vec<f64> = features
        .iter()
        .flat_map(|row| std::iter::once(1.0).chain((0..dim).map(|k| (row[k] - mean[k]) / scale[k])).collect::<Vec<_>>())
        .collect();
    let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
    let mut w = vec![0.0; p];

    let objective = |w: &[f64]| -> f64 {
        let mut loss = 0.0;
        for i in 0..n {
            let z: f64 = (0..p).map(|k| x[i * p + k] * w[k]).sum();
            // log(1 + e^z) - y z, computed stably
            loss += z.max(0.0) + (-z.abs()).exp().ln_1p() - y[i] * z;
        }
        loss / n as f64 + 0.5 * config.l2 * w[1..].iter().map(|v| v * v).sum::<f64>()
    };
    let gradient = |w: &[f64], probs: &mut Vec<f64>| -> Vec<f64> {
        let mut g = vec![0.0; p];
        probs.clear();
        for i in 0..n {
            let z: f64 = (0..p).map(|k| x[i * p + k] * w[k]).sum();
            let pr = sigmoid(z);
            probs.push(pr);
            for k in 0..p {
                g[k] += (pr - y[i]) * x[i * p + k] / n as f64;
            }
        }
        for k in 1..p {
            g[k] += config.l2 * w[k];
        }
        g
    };

    let mut probs = Vec::with_capacity(n);
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        let g = gradient(&w, &mut probs);
        if g.iter().map(|v| v * v).sum::<f64>().sqrt() < config.tolerance {
            converged = true;
            break;
        }
        iterations += 1;
        let step = match config.solver {
            Solver::GradientDescent { step } => g.iter().map(|v| -step * v).collect::<Vec<_>>(),
            Solver::Newton => {
                let mut h = vec![0.0; p * p];
                for i in 0..n {
                    let s = probs[i] * (1.0 - probs[i]) / n as f64;
                    let row = &x[i * p..(i + 1) * p];
                    for a in 0..p {
                        for b in 0..=a {
                            h[a * p + b] += s * row[a] * row[b];
                        }
                    }
                }
                for a in 0..p {
                    for b in 0..a {
                        h[b * p + a] = h[a * p + b];
                    }
                    h[a * p + a] += if a == 0 { 1e-12 } else { config.l2 };
                }
                let neg: Vec<f64> = g.iter().map(|v| -v).collect();
                cholesky_solve(&h, &neg).ok_or_else(|| Error::Config("singular logistic Hessian".into()))?
            }
        };
        if matches!(config.solver, Solver::Newton) {
            // Backtracking keeps Newton monotone on nearly separable data.
            let f0 = objective(&w);
            let slope: f64 = g.iter().zip(&step).map(|(a, b)| a * b).sum();
            let mut t = 1.0;
            loop {
                let cand: Vec<f64> = w.iter().zip(&step).map(|(a, b)| a + t * b).collect();
                if objective(&cand) <= f0 + 1e-4 * t * slope || t < 1e-10 {
                    w = cand;
                    break;
                }
                t *= 0.5;
            }
        } else {
            for (a, b) in w.iter_mut().zip(&step) {
                *a += b;
            }
        }
    }
    Ok(LogisticModel {
        bias: w[0],
        weights: w[1..].to_vec(),
        mean,
        scale,
        iterations,
        converged,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProbeResult {
    pub mean_auroc: f64,
    pub std_auroc: f64,
    /// Test AUROC of each kept split, in split order.
    pub split_aurocs: Vec<f64>,
    /// Splits dropped because the solver hit its iteration cap.
    pub excluded: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProbeConfig {
    pub n_splits: usize,
    pub train_fraction: f64,
    /// Redraws allowed per split when a side lacks one class.
    pub max_retries: usize,
    pub logistic: LogisticConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            n_splits: 100,
            train_fraction: 0.8,
            max_retries: 100,
            logistic: LogisticConfig::default(),
        }
    }
}

/// Patient-level train/test split of group ids for split `index`, redrawn
/// until both sides contain both classes.
pub fn probe_split(
    groups: usize,
    group_labels: &[(usize, bool)],
    index: usize,
    seed_value: u64,
    config: &ProbeConfig,
) -> Result<(Vec<bool>, usize)> {
    let mut rng = seed::rng_for(seed_value, "probe.split", index as u64);
    for attempt in 0..=config.max_retries {
        let (train, _) = split_indices(groups, config.train_fraction, &mut rng)?;
        let mut in_train = vec![false; groups];
        for g in train {
            in_train[g] = true;
        }
        let mut seen = [[false; 2]; 2];
        for &(g, l) in group_labels {
            seen[usize::from(in_train[g])][usize::from(l)] = true;
        }
        if seen.iter().all(|s| s[0] && s[1]) {
            return Ok((in_train, attempt));
        }
    }
    Err(Error::Sampling(format!("split {index}: no split with both classes on both sides after {} tries", config.max_retries)))
}

/// Repeated patient-disjoint logistic probes.
///
/// `features[i]`, `labels[i]` and `groups[i]` (patient index) describe state
/// `i`. Split `k` depends only on `(seed, k)`, so results do not depend on
/// how many threads evaluate them.
pub fn logistic_probe(
    features: &[Vec<f64>],
    labels: &[bool],
    groups: &[usize],
    config: &ProbeConfig,
    seed_value: u64,
) -> Result<ProbeResult> {
    if features.len() != labels.len() || features.len() != groups.len() {
        return Err(Error::shape("logistic_probe", features.len(), format!("{} labels, {} groups", labels.len(), groups.len())));
    }
    if features.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Config("probe features must be finite".into()));
    }
    let n_groups = groups.iter().max().map_or(0, |g| g + 1);
    let pairs: Vec<(usize, bool)> = groups.iter().copied().zip(labels.iter().copied()).collect();
    let outcomes: Vec<Result<Option<f64>>> = (0..config.n_splits)
        .into_par_iter()
        .map(|k| {
            let (in_train, _) = probe_split(n_groups, &pairs, k, seed_value, config)?;
            let (mut xtr, mut ytr, mut xte, mut yte) = (Vec::new(), Vec::new(), Vec::new(), Vec::new());
            for i in 0..features.len() {
                if in_train[groups[i]] {
                    xtr.push(features[i].as_slice());
                    ytr.push(labels[i]);
                } else {
                    xte.push(features[i].as_slice());
                    yte.push(labels[i]);
                }
            }
            let model = fit_logistic(&xtr, &ytr, &config.logistic)?;
            if !model.converged {
                return Ok(None);
            }
            let scores: Vec<f64> = xte.iter().map(|x| model.decision(x)).collect();
            Ok(Some(auroc(&scores, &yte)?.auroc))
        })
        .collect();
    let mut split_aurocs = Vec::new();
    let mut excluded = 0;
    for o in outcomes {
        match o? {
            Some(a) => split_aurocs.push(a),
            None => excluded += 1,
        }
    }
    if split_aurocs.is_empty() {
        return Err(Error::Config(format!("all {} probe splits failed to converge", config.n_splits)));
    }
    let m = split_aurocs.iter().sum::<f64>() / split_aurocs.len() as f64;
    let var = split_aurocs.iter().map(|a| (a - m).powi(2)).sum::<f64>() / split_aurocs.len() as f64;
    Ok(ProbeResult {
        mean_auroc: m,
        std_auroc: var.sqrt(),
        split_aurocs,
        excluded,
    })
}
