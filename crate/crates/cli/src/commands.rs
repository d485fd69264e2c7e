use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use normball::cohort::{generate_cohort, load_cohort_csv, save_cohort_csv, split_cohort, Cohort, CohortConfig, OrganLabel, Outcome};
use normball::embedding::{fit_validation_split, load_checkpoint, row_norms_sq, save_checkpoint, train, EmbeddingModel, LossConfig, ModelConfig};
use normball::evalsuite::{
    auroc_by_horizon, baseline_score_auroc, curve_spearman, default_grid, export_report, organ_separation, parse_grid,
    probe_embeddings, relative_jumps, resumable_sweep, rows_to_csv, time_to_event_curve, AblationSetup, BaselineScore,
    ProbeConfig, ReportOptions, RocResult, HORIZONS,
};
use normball::numerics::checkpoint::write_atomic;
use normball::rlshape::{
    bootstrap_ensemble, build_transitions, policy_report, state_inputs, train_risk_model, write_transitions_csv, C51Config,
    RewardSpec, RiskConfig, RiskModel,
};
use normball::seed;

use crate::settings::{prefixed, CliError, CliResult, Settings};

/// Where a run writes and how its files are named.
pub struct Run {
    pub command: &'static str,
    pub out: PathBuf,
    pub settings: Settings,
}

impl Run {
    pub fn seed(&self) -> CliResult<u64> {
        self.settings.parse("seed")
    }

    /// `{stem}_s{seed}_{hash}.{ext}` inside the output directory.
    pub fn file(&self, stem: &str, ext: &str) -> CliResult<PathBuf> {
        Ok(self.out.join(format!("{stem}_s{}_{}.{ext}", self.seed()?, self.settings.hash())))
    }

    pub fn tag(&self) -> CliResult<String> {
        Ok(format!("s{}_{}", self.seed()?, self.settings.hash()))
    }

    /// Writes the resolved settings before any work starts.
    pub fn write_snapshot(&self) -> CliResult<PathBuf> {
        fs::create_dir_all(&self.out)?;
        let path = self.file(self.command, "cfg")?;
        write_atomic(&path, self.settings.snapshot(self.command).as_bytes())?;
        Ok(path)
    }

    fn emit(&self, path: &Path, bytes: &[u8]) -> CliResult<()> {
        write_atomic(path, bytes)?;
        println!("wrote {}", path.display());
        Ok(())
    }
}

fn seed_key() -> (String, String) {
    ("seed".into(), "0".into())
}

fn kv(key: &str, value: impl ToString) -> (String, String) {
    (key.to_string(), value.to_string())
}

fn configure<T>(mut target: T, entries: Vec<(String, String)>, set: impl Fn(&mut T, &str, &str) -> normball::Result<()>) -> CliResult<T> {
    for (k, v) in entries {
        set(&mut target, &k, &v)?;
    }
    Ok(target)
}

fn model_config(s: &Settings, prefix: &str) -> CliResult<ModelConfig> {
    let m = configure(ModelConfig::default(), s.section(prefix), ModelConfig::set)?;
    m.validate()?;
    Ok(m)
}

fn loss_config(s: &Settings, prefix: &str) -> CliResult<LossConfig> {
    let l = configure(LossConfig::default(), s.section(prefix), LossConfig::set)?;
    l.validate()?;
    Ok(l)
}

fn horizons(s: &Settings) -> CliResult<Vec<usize>> {
    s.get("horizons")
        .split(',')
        .map(|h| h.trim().parse().map_err(|_| CliError::Usage(format!("bad horizon `{h}`"))))
        .collect()
}

fn load_split(s: &Settings) -> CliResult<(Cohort, Cohort)> {
    let cohort = load_cohort_csv(s.required_path("cohort")?)?;
    let fraction: f64 = s.parse("train_fraction")?;
    let mut rng = seed::rng_for(s.parse("seed")?, "cli.split", 0);
    Ok(split_cohort(&cohort, fraction, &mut rng)?)
}

// ---------------------------------------------------------------- generate

pub fn generate_defaults() -> Settings {
    let mut d = vec![seed_key()];
    d.extend(
        prefixed("cohort", CohortConfig::default().to_kv())
            .into_iter()
            .filter(|(k, _)| k != "cohort.seed")
            .map(|(k, v)| if k == "cohort.num_patients" { (k, String::new()) } else { (k, v) }),
    );
    Settings::new(d)
}

pub fn generate(run: &Run) -> CliResult<()> {
    if run.settings.get("cohort.num_patients").is_empty() {
        return Err(CliError::Usage("missing --patients".into()));
    }
    let mut cfg = configure(CohortConfig::default(), run.settings.section("cohort"), CohortConfig::set)?;
    cfg.seed = run.seed()?;
    let cohort = generate_cohort(&cfg)?;
    let path = run.file("cohort", "csv")?;
    save_cohort_csv(&cohort, &path)?;
    println!("wrote {} ({} patients, {} states)", path.display(), cohort.len(), cohort.num_states());
    Ok(())
}

// ---------------------------------------------------------------- train

pub fn train_defaults() -> Settings {
    let mut d = vec![seed_key(), kv("cohort", ""), kv("train_fraction", 0.8), kv("fit_fraction", 0.9)];
    d.extend(prefixed("model", ModelConfig::default().to_kv()));
    d.extend(prefixed("loss", LossConfig::default().to_kv()));
    Settings::new(d)
}

pub fn train_cmd(run: &Run) -> CliResult<()> {
    let s = &run.settings;
    let seed_value = run.seed()?;
    let model_cfg = model_config(s, "model")?;
    let loss = loss_config(s, "loss")?;
    let (train_part, held_out) = load_split(s)?;
    let (fit, val) = fit_validation_split(
        &train_part,
        s.parse("fit_fraction")?,
        &mut seed::rng_for(seed_value, "cli.validation", 0),
    )?;
    let mut model = EmbeddingModel::<f64>::for_cohort(model_cfg, &fit, &mut seed::rng_for(seed_value, "cli.init", 0))?;
    let report = train(&mut model, &fit, &val, &loss, &mut seed::rng_for(seed_value, "cli.train", 0))?;

    let ckpt = run.file("model", "ckpt")?;
    save_checkpoint(&model, &loss, seed_value, &ckpt)?;
    println!("wrote {} (best epoch {})", ckpt.display(), report.best_epoch);
    run.emit(&run.file("training_curves", "csv")?, report.curves_csv().as_bytes())?;
    let held = run.file("heldout", "csv")?;
    save_cohort_csv(&held_out, &held)?;
    println!("wrote {} ({} held-out patients)", held.display(), held_out.len());
    Ok(())
}

// ---------------------------------------------------------------- eval

pub const ANALYSES: [&str; 6] = ["auroc", "probe", "jumps", "curves", "separation", "report"];

pub fn eval_defaults() -> Settings {
    Settings::new([
        seed_key(),
        kv("checkpoint", ""),
        kv("cohort", ""),
        kv("analyses", ""),
        kv("horizons", HORIZONS.map(|h| h.to_string()).join(",")),
        kv("probe.n_splits", 100),
        kv("probe.train_fraction", 0.8),
        kv("max_hours", 48),
        kv("separation_window", 24),
        kv("histogram_bins", 20),
    ])
}

fn roc_rows(out: &mut String, score: &str, rows: &[(usize, RocResult)]) {
    for (h, r) in rows {
        let _ = writeln!(out, "{score},{h},{},{},{}", r.auroc, r.positives, r.negatives);
    }
}

pub fn eval(run: &Run) -> CliResult<()> {
    let s = &run.settings;
    let analyses: Vec<&str> = s.get("analyses").split(',').map(str::trim).filter(|a| !a.is_empty()).collect();
    if analyses.is_empty() {
        return Err(CliError::Usage("no analyses requested (pass --auroc, --probe, ... or --all)".into()));
    }
    if let Some(bad) = analyses.iter().find(|a| !ANALYSES.contains(a)) {
        return Err(CliError::Usage(format!("unknown analysis `{bad}`")));
    }
    let seed_value = run.seed()?;
    let (model, _, _) = load_checkpoint::<f64>(s.required_path("checkpoint")?)?;
    let cohort = load_cohort_csv(s.required_path("cohort")?)?;
    let horizons = horizons(s)?;
    let embeddings = model.embed_cohort(&cohort)?;
    let risk: Vec<Vec<f64>> = embeddings.iter().map(row_norms_sq).collect();

    for analysis in analyses {
        match analysis {
            "auroc" => {
                let mut out = String::from("score,horizon,auroc,positives,negatives\n");
                roc_rows(&mut out, "norm", &auroc_by_horizon(&risk, &cohort, &horizons)?);
                for score in [BaselineScore::Sofa, BaselineScore::Sofa4] {
                    roc_rows(&mut out, score.as_str(), &baseline_score_auroc(&cohort, &horizons, score)?);
                }
                run.emit(&run.file("auroc", "csv")?, out.as_bytes())?;
            }
            "probe" => {
                let cfg = ProbeConfig {
                    n_splits: s.parse("probe.n_splits")?,
                    train_fraction: s.parse("probe.train_fraction")?,
                    ..ProbeConfig::default()
                };
                let mut out = String::from("features,horizon,mean_auroc,std_auroc,splits,excluded\n");
                for (name, with_norm) in [("embedding", false), ("embedding+norm", true)] {
                    let rows = probe_embeddings(&embeddings, &cohort, &horizons, with_norm, &cfg, seed_value)?;
                    for (h, r) in rows {
                        let _ = writeln!(out, "{name},{h},{},{},{},{}", r.mean_auroc, r.std_auroc, r.split_aurocs.len(), r.excluded);
                    }
                }
                run.emit(&run.file("probe", "csv")?, out.as_bytes())?;
            }
            "jumps" => {
                let j = relative_jumps(&risk);
                let out = format!("mean_relative_jump,pairs,excluded\n{},{},{}\n", j.mean, j.pairs, j.excluded);
                run.emit(&run.file("jumps", "csv")?, out.as_bytes())?;
            }
            "curves" => {
                let curve = time_to_event_curve(&risk, &cohort, s.parse("max_hours")?)?;
                let mut out = String::from("outcome,hours_to_end,mean_d,states\n");
                for o in [Outcome::Death, Outcome::Release] {
                    for b in curve.bins(o) {
                        let _ = writeln!(out, "{},{},{},{}", o.as_str(), b.lag, b.mean, b.count);
                    }
                }
                run.emit(&run.file("time_to_event", "csv")?, out.as_bytes())?;
                if let Ok(rho) = curve_spearman(&curve, Outcome::Death) {
                    println!("spearman(hours to death, mean d) = {rho:.3}");
                }
            }
            "separation" => {
                let sep = organ_separation(&embeddings, &cohort, s.parse("separation_window")?)?;
                let mut out = String::from("within,between,gap,states,");
                out.push_str(&OrganLabel::ALL.map(|o| o.name()).join(","));
                let _ = writeln!(out, ",zero_embeddings");
                let counts: Vec<String> = sep.per_organ.iter().map(|c| c.to_string()).collect();
                let _ = writeln!(out, "{},{},{},{},{},{}", sep.within, sep.between, sep.gap, sep.states, counts.join(","), sep.zero_embeddings);
                run.emit(&run.file("separation", "csv")?, out.as_bytes())?;
            }
            "report" => {
                let options = ReportOptions {
                    histogram_bins: s.parse("histogram_bins")?,
                    max_hours: s.parse("max_hours")?,
                    separation_window: s.parse("separation_window")?,
                    tag: run.tag()?,
                };
                for path in export_report(&cohort, &embeddings, &options, &run.out)? {
                    println!("wrote {}", path.display());
                }
            }
            _ => unreachable!(),
        }
    }
    Ok(())
}

// ---------------------------------------------------------------- ablate

pub fn ablate_defaults() -> Settings {
    let mut d = vec![
        seed_key(),
        kv("cohort", ""),
        kv("cohort_seed", 0),
        kv("train_fraction", 0.8),
        kv("fit_fraction", 0.9),
        kv("grid", "default"),
        kv("probe.n_splits", 100),
        kv("separation_window", 24),
    ];
    d.extend(prefixed("model", ModelConfig::default().to_kv()));
    d.extend(prefixed("loss", LossConfig::default().to_kv()));
    Settings::new(d)
}

pub fn ablate(run: &Run) -> CliResult<()> {
    let s = &run.settings;
    let loss = loss_config(s, "loss")?;
    let mut setup = AblationSetup::new(model_config(s, "model")?, loss.clone(), s.parse("cohort_seed")?, run.seed()?);
    setup.probe.n_splits = s.parse("probe.n_splits")?;
    setup.separation_window = s.parse("separation_window")?;
    setup.fit_fraction = s.parse("fit_fraction")?;
    let grid = match s.get("grid") {
        "default" => default_grid(),
        spec => parse_grid(spec, &loss)?,
    };
    let (train_part, test_part) = load_split(s)?;
    let rows_dir = run.out.join(format!("ablation_{}_rows", run.tag()?));
    let rows = resumable_sweep(&rows_dir, &train_part, &test_part, &setup, &grid)?;
    run.emit(&run.file("ablation", "csv")?, &rows_to_csv(&rows, &setup.horizons)?)?;
    Ok(())
}

// ---------------------------------------------------------------- rl

const RISK_KEYS: [&str; 5] = ["cohort", "train_fraction", "seed", "risk", "risk_members"];

pub fn rl_defaults() -> Settings {
    let reward = RewardSpec::new(normball::rlshape::RewardKind::R1);
    let risk = RiskConfig::default();
    let mut d = vec![
        seed_key(),
        kv("cohort", ""),
        kv("train_fraction", 0.8),
        kv("ensemble", 5),
        kv("risk_dir", ""),
        kv("risk_members", risk.members),
    ];
    for (k, v) in reward.to_kv() {
        d.push(if k == "reward" { (k, v) } else { (format!("reward.{k}"), v) });
    }
    d.extend(prefixed("c51", C51Config::default().to_kv()));
    d.extend(prefixed("risk.model", risk.model.to_kv()));
    d.extend(prefixed("risk.loss", risk.loss.to_kv()));
    Settings::new(d)
}

fn risk_model(run: &Run, train_part: &Cohort) -> CliResult<RiskModel> {
    let s = &run.settings;
    let dir = match s.get("risk_dir") {
        "" => run.out.join(format!("risk_s{}_{}", run.seed()?, s.hash_of(&RISK_KEYS))),
        d => PathBuf::from(d),
    };
    if RiskModel::member_path(&dir, 0).exists() {
        println!("loading risk model from {}", dir.display());
        return Ok(RiskModel::load(&dir)?);
    }
    if !s.get("risk_dir").is_empty() {
        return Err(CliError::Runtime(normball::Error::NotFound(RiskModel::member_path(&dir, 0))));
    }
    let cfg = RiskConfig {
        members: s.parse("risk_members")?,
        model: model_config(s, "risk.model")?,
        loss: loss_config(s, "risk.loss")?,
    };
    let seed_value = run.seed()?;
    let model = train_risk_model(train_part, &cfg, seed::derive(seed_value, "cli.risk", 0))?;
    model.save(&dir, &cfg.loss, seed_value)?;
    println!("wrote risk model to {}", dir.display());
    Ok(model)
}

pub fn rl(run: &Run) -> CliResult<()> {
    let s = &run.settings;
    let mut spec = RewardSpec::new(s.get("reward").parse()?);
    for (k, v) in s.section("reward") {
        spec.set(&k, &v)?;
    }
    let c51 = configure(C51Config::default(), s.section("c51"), C51Config::set)?;
    c51.validate()?;
    let members: usize = s.parse("ensemble")?;

    let (train_part, test_part) = load_split(s)?;
    let risk = risk_model(run, &train_part)?;
    let inputs_for = |c: &Cohort| -> CliResult<Vec<Vec<Vec<f64>>>> {
        let emb = if c51.augment { Some(risk.embed_cohort(c)?) } else { None };
        Ok(state_inputs(c, emb.as_deref())?)
    };
    let d = risk.risk_cohort(&train_part)?;
    let inputs = inputs_for(&train_part)?;

    let transitions = build_transitions(&train_part, &d, &inputs, &spec)?;
    let mut buf = Vec::new();
    write_transitions_csv(&train_part, &transitions, &mut buf)?;
    run.emit(&run.file("transitions", "csv")?, &buf)?;
    drop(transitions);

    let ensemble = bootstrap_ensemble(&train_part, &d, &inputs, &spec, &c51, members, seed::derive(run.seed()?, "cli.rl", 0))?;
    let report = policy_report(&ensemble, &test_part, &inputs_for(&test_part)?)?;
    run.emit(&run.file("policy_actions", "csv")?, report.actions_csv().as_bytes())?;
    run.emit(&run.file("policy_values", "csv")?, report.values_csv().as_bytes())?;
    run.emit(&run.file("policy_values", "svg")?, report.values_svg().as_bytes())?;
    let (actions, values, clinician) = report.no_treatment();
    println!(
        "no treatment: {actions:.1}% (averaged actions), {values:.1}% (averaged values), {clinician:.1}% (clinician)"
    );
    Ok(())
}
