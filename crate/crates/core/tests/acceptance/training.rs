use std::sync::OnceLock;
use std::time::Instant;

use normball::cohort::{generate_cohort, split_cohort, Cohort, CohortConfig, Outcome};
use normball::embedding::{
    fit_validation_split, train, train_denoising_autoencoder, train_plain_triplet, DaeConfig, EmbeddingModel, LossConfig,
    ModelConfig, PlainTripletConfig, TrainReport,
};
use normball::evalsuite::{
    curve_spearman, embedding_covariance_trace, mean_probe_auroc, norm_auroc, organ_separation, probe_embeddings,
    relative_jumps, time_to_event_curve, ProbeConfig, HORIZONS,
};
use normball::numerics::{orthogonal_init, orthogonality_residual, Init};
use normball::seed;
use normball::Tensor64;
use rand::Rng;

use crate::support::Checks;

pub const BETAS: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 1.0];
const PATIENTS: usize = 1000;

pub fn model_config() -> ModelConfig {
    ModelConfig {
        hidden_dim: 128,
        ..ModelConfig::default()
    }
}

pub fn loss_config(beta: f64) -> LossConfig {
    LossConfig {
        beta,
        batch_size: 64,
        learning_rate: 1e-3,
        epochs: 10,
        batches_per_epoch: Some(50),
        validation_size: 256,
        ..LossConfig::default()
    }
}

/// The seeded cohort, its held-out part and the fit/validation split of the rest.
pub struct Data {
    pub train: Cohort,
    pub test: Cohort,
    pub fit: Cohort,
    pub val: Cohort,
}

pub struct Trained {
    pub beta: f64,
    pub model: EmbeddingModel<f64>,
    pub report: TrainReport,
    pub embeddings: Vec<Tensor64>,
    pub risk: Vec<Vec<f64>>,
}

pub struct Context {
    pub master: u64,
    pub data: Data,
    pub sweep: Vec<Trained>,
    pub seconds: f64,
}

impl Context {
    pub fn at(&self, beta: f64) -> &Trained {
        self.sweep.iter().find(|t| t.beta == beta).expect("beta in sweep")
    }
}

pub fn data(master: u64) -> Data {
    let cohort = generate_cohort(&CohortConfig {
        num_patients: PATIENTS,
        seed: seed::derive(master, "acceptance.cohort", 0),
        ..CohortConfig::default()
    })
    .unwrap();
    let (train, test) = split_cohort(&cohort, 0.8, &mut seed::rng_for(master, "acceptance.split", 0)).unwrap();
    let (fit, val) = fit_validation_split(&train, 0.9, &mut seed::rng_for(master, "acceptance.validation", 0)).unwrap();
    Data {
        train,
        test,
        fit,
        val,
    }
}

/// Every β model starts from the same weights and sees the same batch stream.
pub fn train_one(master: u64, data: &Data, model: &ModelConfig, beta: f64) -> Trained {
    let mut m = EmbeddingModel::<f64>::for_cohort(model.clone(), &data.fit, &mut seed::rng_for(master, "acceptance.init", 0)).unwrap();
    let report = train(&mut m, &data.fit, &data.val, &loss_config(beta), &mut seed::rng_for(master, "acceptance.train", 0)).unwrap();
    let embeddings = m.embed_cohort(&data.test).unwrap();
    let risk = embeddings.iter().map(normball::embedding::row_norms_sq).collect();
    Trained {
        beta,
        model: m,
        report,
        embeddings,
        risk,
    }
}

pub fn context(master: u64) -> &'static Context {
    static CTX: OnceLock<Context> = OnceLock::new();
    let ctx = CTX.get_or_init(|| {
        let t = Instant::now();
        let data = data(master);
        let sweep = BETAS.iter().map(|&b| train_one(master, &data, &model_config(), b)).collect();
        Context {
            master,
            data,
            sweep,
            seconds: t.elapsed().as_secs_f64(),
        }
    });
    assert_eq!(ctx.master, master, "shared context built for another seed");
    ctx
}

fn shared_note(c: &mut Checks, ctx: &Context) {
    c.note(format!("shares a {:.0}s five-β training sweep", ctx.seconds));
}

pub fn init_volume(master: u64) -> Checks {
    let mut c = Checks::new();
    let mut rng = seed::rng_for(master, "acceptance.orthogonal", 0);
    let mut worst: f64 = 0.0;
    for _ in 0..50 {
        let (r, k) = (rng.gen_range(1..=64), rng.gen_range(1..=64));
        let q = orthogonal_init::<f64, _>(r, k, &mut rng);
        worst = worst.max(orthogonality_residual(&q));
    }
    c.check(worst < 1e-6, || format!("orthogonality residual {worst:e}"));

    let ctx = context(master);
    let fan_in = ModelConfig {
        init: Init::UniformFanIn,
        ..model_config()
    };
    let untrained = |cfg: &ModelConfig| {
        let m = EmbeddingModel::<f64>::for_cohort(cfg.clone(), &ctx.data.fit, &mut seed::rng_for(master, "acceptance.init", 0)).unwrap();
        embedding_covariance_trace(&m.embed_cohort(&ctx.data.test).unwrap())
    };
    let (u_ortho, u_fan) = (untrained(&model_config()), untrained(&fan_in));
    let ortho = embedding_covariance_trace(&ctx.at(0.75).embeddings);
    let fan = embedding_covariance_trace(&train_one(master, &ctx.data, &fan_in, 0.75).embeddings);
    c.check(fan < ortho, || format!("trained trace: fan-in {fan:.4} not below orthogonal {ortho:.4}"));
    c.note(format!(
        "max residual {worst:.1e} over 50 shapes; trained trace orthogonal {ortho:.4} vs fan-in {fan:.4} (untrained {u_ortho:.4} vs {u_fan:.4})"
    ));
    shared_note(&mut c, ctx);
    c
}

pub fn risk_ordering(master: u64) -> Checks {
    let mut c = Checks::new();
    let ctx = context(master);
    let t = ctx.at(0.75);
    let terminal = |o: Outcome| {
        let v: Vec<f64> = ctx
            .data
            .test
            .patients
            .iter()
            .zip(&t.risk)
            .filter(|(p, _)| p.outcome == o)
            .map(|(_, d)| *d.last().unwrap())
            .collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (death, release) = (terminal(Outcome::Death), terminal(Outcome::Release));
    let auc = norm_auroc(&t.model, &ctx.data.test, &[24]).unwrap()[0].1.auroc;
    c.check(death > 0.8, || format!("death terminal mean d {death:.3} <= 0.8"));
    c.check(release < 0.3, || format!("release terminal mean d {release:.3} >= 0.3"));
    c.check(auc >= 0.75, || format!("24 h norm AUROC {auc:.3} < 0.75"));
    c.note(format!(
        "beta 0.75: terminal d death {death:.3}, release {release:.3}; 24 h norm AUROC {auc:.3}; best epoch {}",
        t.report.best_epoch
    ));
    shared_note(&mut c, ctx);
    c
}

pub fn monotonicity(master: u64) -> Checks {
    let mut c = Checks::new();
    let ctx = context(master);
    let curve = time_to_event_curve(&ctx.at(0.75).risk, &ctx.data.test, 48).unwrap();
    let rho = curve_spearman(&curve, Outcome::Death).unwrap();
    c.check(rho <= -0.5, || format!("Spearman {rho:.3} > -0.5"));
    let all: Vec<String> = ctx
        .sweep
        .iter()
        .map(|t| {
            let cv = time_to_event_curve(&t.risk, &ctx.data.test, 48).unwrap();
            format!("{}: {:.3}", t.beta, curve_spearman(&cv, Outcome::Death).unwrap())
        })
        .collect();
    c.note(format!("beta 0.75 Spearman {rho:.3} over {} lags; all betas {}", curve.death.len(), all.join(", ")));
    c
}

pub fn separation(master: u64) -> Checks {
    let mut c = Checks::new();
    let ctx = context(master);
    let gap = |b: f64| organ_separation(&ctx.at(b).embeddings, &ctx.data.test, 24).unwrap().gap;
    for b in [0.25, 0.5, 0.75] {
        let g = gap(b);
        c.check(g > 0.1, || format!("beta {b}: gap {g:.3} <= 0.1"));
    }
    let (g1, g75) = (gap(1.0), gap(0.75));
    c.check(g1 < g75, || format!("gap at beta 1 ({g1:.3}) not below beta 0.75 ({g75:.3})"));
    let all: Vec<String> = BETAS.iter().map(|&b| format!("{b}: {:.3}", gap(b))).collect();
    c.note(format!("gaps {}", all.join(", ")));
    c
}

pub fn jumps(master: u64) -> Checks {
    let mut c = Checks::new();
    let ctx = context(master);
    let j = |b: f64| relative_jumps(&ctx.at(b).risk).mean;
    let (j0, j1) = (j(0.0), j(1.0));
    c.check(j1 > j0, || format!("jump at beta 1 ({j1:.4}) not above beta 0 ({j0:.4})"));
    let all: Vec<String> = BETAS.iter().map(|&b| format!("{b}: {:.4}", j(b))).collect();
    c.note(format!("mean relative jumps {}", all.join(", ")));
    c
}

pub fn probes(master: u64) -> Checks {
    let mut c = Checks::new();
    let ctx = context(master);
    let data = &ctx.data;
    let probe_seed = seed::derive(master, "acceptance.probe", 0);
    let cfg = ProbeConfig::default();
    let score = |emb: &[Tensor64], with_norm: bool| {
        mean_probe_auroc(&probe_embeddings(emb, &data.test, &HORIZONS, with_norm, &cfg, probe_seed).unwrap())
    };

    let dae = train_denoising_autoencoder::<f64, _>(
        &model_config(),
        &data.fit,
        &data.val,
        &DaeConfig {
            code_dim: 3,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 10,
            batches_per_epoch: Some(50),
            ..DaeConfig::default()
        },
        &mut seed::rng_for(master, "acceptance.dae", 0),
    )
    .unwrap();
    let plain = train_plain_triplet::<f64, _>(
        &model_config(),
        &data.train,
        &PlainTripletConfig {
            embedding_dim: 3,
            learning_rate: 1e-3,
            batch_size: 64,
            epochs: 10,
            batches_per_epoch: Some(50),
            ..PlainTripletConfig::default()
        },
        &mut seed::rng_for(master, "acceptance.plain", 0),
    )
    .unwrap();
    let dae_emb = dae.encoder.embed_cohort(&data.test).unwrap();
    let plain_emb = plain.embed_cohort(&data.test).unwrap();
    let (dae_p, plain_p) = (score(&dae_emb, false), score(&plain_emb, false));

    let normed: Vec<(f64, f64, f64)> = ctx
        .sweep
        .iter()
        .map(|t| (t.beta, score(&t.embeddings, false), score(&t.embeddings, true)))
        .collect();
    let (best_beta, best, _) = normed.iter().copied().max_by(|a, b| a.1.total_cmp(&b.1)).unwrap();
    c.check(best > dae_p, || format!("normed (beta {best_beta}) {best:.4} not above DAE {dae_p:.4}"));
    c.check(best > plain_p, || format!("normed (beta {best_beta}) {best:.4} not above plain triplet {plain_p:.4}"));
    let rows: Vec<String> = normed.iter().map(|(b, e, n)| format!("{b}: {e:.4}/{n:.4}")).collect();
    c.note(format!(
        "100-split mean probe AUROC, embedding/embedding+norm: normed {}; DAE {dae_p:.4}/{:.4}; plain {plain_p:.4}/{:.4}",
        rows.join(", "),
        score(&dae_emb, true),
        score(&plain_emb, true)
    ));
    c
}

