use std::fs;

use normball::cohort::{
    generate_cohort, near_terminal_hours, near_terminal_states, read_cohort_csv, split_cohort, worst_organ,
    write_cohort_csv, Cohort, CohortConfig, OrganLabel, OrganScores, Outcome, PatientTrajectory,
};
use normball::embedding::{
    cosine_loss, loss_contrastive, loss_intermediate, loss_terminal, loss_terms, total_loss, train_denoising_autoencoder,
    train_plain_triplet, train_with, triplet_loss, CosineVariant, DaeConfig, EmbeddedTriplet, EmbeddingModel, LossConfig,
    ModelConfig, OutputKind, PlainTripletConfig, TripletLabels, TripletSampler,
};
use normball::evalsuite::{
    ablation_sweep, auroc, export_report, logistic_probe, norm_auroc, organ_separation, relative_jumps, run_point,
    separation_from_vectors, time_to_event_curve, AblationPoint, AblationSetup, ProbeConfig, ReportOptions, HORIZONS,
};
use normball::numerics::{checkpoint, orthogonal_init, Adam, Gru, GruSpec, Mlp, MlpSpec, OutputActivation, Parameters, Tape, Tensor};
use normball::rlshape::{
    bellman_targets, bootstrap_ensemble, build_transitions, c51_project, c51_train, greedy_action, mean_squared_norm,
    member_subset, policy_report, state_inputs, C51Config, RewardKind, RewardSpec, RiskModel, Support, Transition,
    MEMBER_FRACTION,
};
use normball::{seed, Error};
use rand::Rng;

use crate::bin;
use crate::support::Checks;

const EPS: f64 = 1e-12;

fn cohort(n: usize, seed: u64) -> Cohort {
    generate_cohort(&CohortConfig {
        num_patients: n,
        seed,
        ..CohortConfig::default()
    })
    .unwrap()
}

fn tiny_model(c: &Cohort, output: OutputKind, seed_value: u64) -> EmbeddingModel<f64> {
    let cfg = ModelConfig {
        hidden_dim: 8,
        num_layers: 2,
        output,
        ..ModelConfig::default()
    };
    EmbeddingModel::for_cohort(cfg, c, &mut seed::rng(seed_value)).unwrap()
}

fn zeroed(mut m: EmbeddingModel<f64>) -> EmbeddingModel<f64> {
    for p in m.params_mut() {
        p.data_mut().iter_mut().for_each(|v| *v = 0.0);
    }
    m
}

/// A stay of `len` hours made by cycling through the states of `p`.
fn truncated(p: &PatientTrajectory, len: usize) -> PatientTrajectory {
    PatientTrajectory {
        states: p.states.iter().cycle().take(len).cloned().collect(),
        actions: p.actions.iter().cycle().take(len).copied().collect(),
        ..p.clone()
    }
}

fn numerics(c: &mut Checks) {
    for s in 0..5 {
        let q = orthogonal_init::<f64, _>(1, 1, &mut seed::rng(s));
        c.eq(q.data()[0].abs(), 1.0, "orthogonal_init(1, 1)");
    }

    let spec = MlpSpec {
        input_dim: 4,
        hidden_dim: 5,
        num_layers: 3,
        output_dim: 3,
        output_activation: OutputActivation::Tanh,
    };
    let mlp = Mlp::<f64>::zeros(spec).unwrap();
    let mut tape = Tape::new();
    let vars = mlp.bind(&mut tape);
    let x = tape.constant(Tensor::from_rows(&[[0.3, -2.0, 5.0, 1.0], [9.0, 0.0, -1.0, 0.5]]).unwrap());
    let y = mlp.forward(&mut tape, &vars, x).unwrap();
    c.check(tape.value(y).data().iter().all(|v| *v == 0.0), || "zero MLP with tanh head is not zero".into());

    let mut id = Mlp::<f64>::zeros(MlpSpec {
        input_dim: 3,
        hidden_dim: 3,
        num_layers: 1,
        output_dim: 3,
        output_activation: OutputActivation::None,
    })
    .unwrap();
    id.layers[0].weight = Tensor::identity(3);
    let mut tape = Tape::new();
    let vars = id.bind(&mut tape);
    let v = [0.25, -1.5, 7.0];
    let x = tape.constant(Tensor::row_vector(v.to_vec()));
    let y = id.forward(&mut tape, &vars, x).unwrap();
    c.eq(tape.value(y).data().to_vec(), v.to_vec(), "identity layer");

    let gru = Gru::<f64>::zeros(GruSpec {
        input_dim: 2,
        hidden_dim: 3,
        num_layers: 1,
        horizon: 1,
    })
    .unwrap();
    let mut tape = Tape::new();
    let vars = gru.bind(&mut tape);
    let x = tape.constant(Tensor::row_vector(vec![0.7, -0.2]));
    let h = [0.4, -0.6, 1.0];
    let h0 = tape.constant(Tensor::row_vector(h.to_vec()));
    let out = gru.forward(&mut tape, &vars, &[x], Some(&[h0])).unwrap();
    c.eq(tape.value(out).data().to_vec(), h.iter().map(|v| 0.5 * v).collect::<Vec<_>>(), "zero GRU step gives h/2");
    let zero_in = tape.constant(Tensor::zeros(1, 2));
    let out = gru.forward(&mut tape, &vars, &[zero_in], None).unwrap();
    c.check(tape.value(out).data().iter().all(|v| *v == 0.0), || "zero GRU from zero state is not zero".into());

    let mut tape = Tape::<f64>::new();
    let x = tape.param(Tensor::scalar(3.0));
    let l = tape.square(x);
    let g = tape.backward(l).unwrap();
    c.close(g.get(x).item(), 6.0, EPS, "d(x^2)/dx at 3");
    let mut tape = Tape::<f64>::new();
    let v = tape.param(Tensor::row_vector(vec![0.3, -0.4]));
    let n = tape.row_norm_sq(v);
    let l = tape.sum(n);
    let g = tape.backward(l).unwrap().get(v);
    c.close(g.data()[0], 0.6, EPS, "grad |v|^2 [0]");
    c.close(g.data()[1], -0.8, EPS, "grad |v|^2 [1]");

    let mut adam = Adam::new(0.1);
    let mut p = Tensor::scalar(1.0);
    adam.step(vec![&mut p], &[Tensor::scalar(2.0)]).unwrap();
    c.close(1.0 - p.item(), 0.1 * 2.0 / (2.0 + 1e-8), EPS, "first Adam step");
    let (m1, v1) = (adam.first_moment()[0].item(), adam.second_moment()[0].item());
    let mut fresh = Adam::new(0.1);
    let mut q = Tensor::scalar(-3.0);
    fresh.step(vec![&mut q], &[Tensor::scalar(0.0)]).unwrap();
    c.eq(q.item(), -3.0, "Adam with zero gradient and no history");
    adam.step(vec![&mut p], &[Tensor::scalar(0.0)]).unwrap();
    c.close(adam.first_moment()[0].item(), 0.9 * m1, EPS, "first moment decay");
    c.close(adam.second_moment()[0].item(), 0.999 * v1, EPS, "second moment decay");
}

fn cohorts(c: &mut Checks) {
    let bytes = |co: &Cohort| {
        let mut b = Vec::new();
        write_cohort_csv(co, &mut b).unwrap();
        b
    };
    let a = cohort(50, 17);
    c.check(bytes(&a) == bytes(&cohort(50, 17)), || "same seed gives different cohort bytes".into());

    c.eq(worst_organ(2, 2, 2, 2), OrganLabel::Cardio, "worst organ of (2, 2, 2, 2)");
    c.eq(worst_organ(0, 3, 1, 3), OrganLabel::Cns, "worst organ of (0, 3, 1, 3)");

    let t50 = truncated(&a.patients[0], 50);
    c.eq(near_terminal_hours(&t50, 12), 38..50, "T=50, t=12 window (0-based hours)");
    c.eq(near_terminal_states(&t50, 12).unwrap().len(), 12, "T=50, t=12 count");
    c.check(near_terminal_states(&t50, 12).unwrap() == &t50.states[38..], || "T=50 window states".into());
    let t5 = truncated(&a.patients[0], 5);
    c.check(near_terminal_states(&t5, 12).unwrap() == t5.states.as_slice(), || "T=5, t=12 is not the whole stay".into());
    c.check(near_terminal_states(&t50, 1).unwrap() == std::slice::from_ref(t50.terminal()), || "t=1 is not the terminal state".into());

    let ten = cohort(10, 3);
    let (tr, te) = split_cohort(&ten, 0.8, &mut seed::rng(4)).unwrap();
    c.eq((tr.len(), te.len()), (8, 2), "10 patients split 0.8");
    let (tr2, te2) = split_cohort(&ten, 0.8, &mut seed::rng(4)).unwrap();
    c.check(tr == tr2 && te == te2, || "same seed gives a different split".into());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.csv");
    normball::cohort::save_cohort_csv(&a, &path).unwrap();
    c.check(normball::cohort::load_cohort_csv(&path).unwrap() == a, || "CSV round trip".into());
    let text = fs::read_to_string(&path).unwrap();
    let mut lines: Vec<String> = text.lines().map(String::from).collect();
    let liver = lines[0].split(',').position(|h| h == "liver").unwrap();
    let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
    fields[liver] = "5".into();
    lines[1] = fields.join(",");
    let bad = lines.join("\n") + "\n";
    c.check(matches!(read_cohort_csv(bad.as_bytes()), Err(Error::Parse { .. })), || "organ score 5 accepted".into());
    c.check(matches!(read_cohort_csv("".as_bytes()), Err(Error::EmptyCohort)), || "empty file accepted".into());
}

fn losses(c: &mut Checks) {
    let cfg = LossConfig::default();
    let death = Outcome::Death;
    let release = Outcome::Release;
    c.close(loss_terminal(&[0.6, 0.8], death, cfg.lambda1), 0.0, EPS, "terminal death d=1");
    c.close(loss_terminal(&[0.0, 0.0], release, cfg.lambda1), 0.0, EPS, "terminal release d=0");
    c.close(loss_terminal(&[0.8, 0.0], death, cfg.lambda1), 0.1296, EPS, "terminal death d=0.64");

    c.close(triplet_loss(&[0.1, 0.2], &[0.1, 0.2], &[0.6, 0.2], 0.2), 0.0, EPS, "triplet a=p");
    c.close(triplet_loss(&[0.0, 0.0], &[0.3, 0.0], &[0.0, 0.1], 0.2), 0.4, EPS, "triplet 0.3/0.1");
    c.close(triplet_loss(&[0.2, 0.1], &[0.5, 0.5], &[0.2, 0.1], 0.2), 0.5 + 0.2, EPS, "triplet a=n");

    let inner = LossConfig {
        cosine_variant: CosineVariant::InnerProduct,
        ..cfg.clone()
    };
    c.close(cosine_loss(&[0.3, -0.4], &[0.3, -0.4], true, &cfg).unwrap(), 0.0, EPS, "cosine (i) y=1 a=p");
    c.close(cosine_loss(&[0.3, 0.0], &[0.0, 0.7], false, &cfg).unwrap(), 0.0, EPS, "cosine (i) orthogonal");
    c.close(cosine_loss(&[0.6, 0.8], &[0.6, 0.8], false, &inner).unwrap(), 1.0, EPS, "cosine (ii) unit a=p");

    let (a, p, n) = ([0.1, 0.4], [0.3, -0.2], [-0.5, 0.2]);
    c.close(
        loss_contrastive(&a, &p, &n, release, false, &cfg).unwrap(),
        triplet_loss(&a, &p, &n, cfg.triplet_margin),
        EPS,
        "contrastive release is the triplet loss",
    );
    c.close(loss_contrastive(&a, &a, &n, death, true, &cfg).unwrap(), 0.0, EPS, "contrastive death same organ a=p");
    c.close(loss_contrastive(&[1.0, 0.0], &[-1.0, 0.0], &n, death, false, &cfg).unwrap(), 0.0, EPS, "contrastive antipodal");

    let quiet = LossConfig {
        alpha: 0.0,
        lambda3: 0.0,
        lambda4: 0.0,
        ..cfg.clone()
    };
    for o in [death, release] {
        c.close(loss_intermediate(&[0.5, 0.5], &[0.9, 0.1], &[0.2, 0.0], o, &quiet), 0.0, EPS, "intermediate all inside");
    }
    let dp = [1.2f64.sqrt(), 0.0];
    let dn = [0.0, 0.1f64.sqrt()];
    let want = 10.0 * 1.2 + 0.2 * (-3.6f64).exp() + 0.05 * 0.1;
    c.close(loss_intermediate(&dp, &dn, &[0.3, 0.3], death, &cfg), want, EPS, "intermediate worked example");
    c.check((want - 12.0105).abs() < 5e-5, || format!("worked example {want} is not about 12.0105"));
    let no_pull = LossConfig { lambda4: 0.0, ..cfg.clone() };
    c.close(loss_intermediate(&[0.1, 0.2], &[0.0, 0.0], &[0.0, 0.3], release, &no_pull), 0.2, EPS, "intermediate release d_n=0");

    let beta1 = LossConfig {
        beta: 1.0,
        lambda2: 0.0,
        lambda3: 0.0,
        lambda4: 0.0,
        ..cfg.clone()
    };
    let mut tape = Tape::<f64>::new();
    let ta = tape.param(Tensor::from_rows(&[[0.3, 0.1], [0.2, -0.5]]).unwrap());
    let tp = tape.param(Tensor::from_rows(&[[0.6, -0.1], [0.4, 0.4]]).unwrap());
    let tn = tape.param(Tensor::from_rows(&[[-0.2, 0.7], [0.0, 0.3]]).unwrap());
    let labels = [
        TripletLabels { anchor_outcome: death, same_organ: false },
        TripletLabels { anchor_outcome: release, same_organ: false },
    ];
    let terms = loss_terms(&mut tape, ta, tp, tn, &labels, &beta1).unwrap();
    let g = tape.backward(terms.total).unwrap();
    c.check(
        g.get(tp).data().iter().chain(g.get(tn).data()).all(|v| *v == 0.0),
        || "beta=1 leaks gradient into the contrastive inputs".into(),
    );

    let mut rng = seed::rng(5);
    for o in [death, release] {
        for same in [true, false] {
            let mut v = || (0..3).map(|_| rng.gen_range(-0.6..0.6)).collect::<Vec<f64>>();
            let t = EmbeddedTriplet {
                anchor: v(),
                positive: v(),
                negative: v(),
                anchor_outcome: o,
                same_organ: same,
            };
            let sum = cfg.beta * loss_terminal(&t.anchor, o, cfg.lambda1)
                + (1.0 - cfg.beta) * loss_contrastive(&t.anchor, &t.positive, &t.negative, o, same, &cfg).unwrap()
                + loss_intermediate(&t.positive, &t.negative, &t.anchor, o, &cfg);
            c.close(total_loss(std::slice::from_ref(&t), &cfg).unwrap(), sum, EPS, "batch of one");
        }
    }

    let co = cohort(40, 6);
    let sampler = TripletSampler::new(&co, &cfg).unwrap();
    let mut rng = seed::rng(6);
    let mut releases = 0;
    for t in sampler.sample_batch(400, &mut rng) {
        let outcome = |r: normball::embedding::StateRef| co.patients[r.patient].outcome;
        if t.anchor_outcome == release {
            releases += 1;
            c.check(outcome(t.positive) == release && outcome(t.negative) == death, || "release anchor labels".into());
        }
    }
    c.check(releases > 0, || "no release anchors sampled".into());
}

fn training(c: &mut Checks) {
    let co = cohort(40, 4);
    let quick = LossConfig {
        batch_size: 8,
        epochs: 4,
        batches_per_epoch: Some(5),
        validation_size: 32,
        ..LossConfig::default()
    };
    let mut m = tiny_model(&co, OutputKind::Tanh, 1);
    let mut snaps = Vec::new();
    let rep = train_with(&mut m, &co, &co, &quick, &mut seed::rng(2), |_, model| snaps.push(model.clone())).unwrap();
    let best = rep.epochs.iter().min_by(|a, b| a.val_total.total_cmp(&b.val_total)).unwrap().epoch;
    c.eq(rep.best_epoch, best, "best epoch is the validation minimum");
    c.check(m == snaps[best - 1], || "returned weights differ from the best-epoch snapshot".into());

    let bytes = |s: u64| {
        let mut m = tiny_model(&co, OutputKind::Tanh, 7);
        normball::embedding::train(&mut m, &co, &co, &quick, &mut seed::rng(s)).unwrap();
        checkpoint::encode(&m.named_tensors())
    };
    c.check(bytes(8) == bytes(8), || "same seed gives different checkpoint bytes".into());

    let small = ModelConfig {
        hidden_dim: 8,
        num_layers: 2,
        ..ModelConfig::default()
    };
    let dae_cfg = DaeConfig {
        epochs: 2,
        batch_size: 16,
        batches_per_epoch: Some(3),
        test_size: 64,
        decoder_hidden: 8,
        ..DaeConfig::default()
    };
    let dae = |s: u64| train_denoising_autoencoder::<f64, _>(&small, &co, &co, &dae_cfg, &mut seed::rng(s)).unwrap();
    let (d1, d2) = (dae(3), dae(3));
    c.check(d1.encoder == d2.encoder && d1.decoder == d2.decoder, || "DAE not deterministic".into());

    let pt_cfg = PlainTripletConfig {
        epochs: 1,
        batch_size: 16,
        batches_per_epoch: Some(3),
        ..PlainTripletConfig::default()
    };
    let pt = |s: u64| train_plain_triplet::<f64, _>(&small, &co, &pt_cfg, &mut seed::rng(s)).unwrap();
    let p1 = pt(4);
    c.check(p1 == pt(4), || "plain triplet not deterministic".into());
    let worst = p1
        .risk_cohort(&co)
        .unwrap()
        .iter()
        .flatten()
        .map(|d| (d.sqrt() - 1.0).abs())
        .fold(0.0, f64::max);
    c.check(worst < 1e-9, || format!("plain triplet norm off by {worst:e}"));
}

fn evaluation(c: &mut Checks) {
    c.eq(auroc(&[0.9, 0.8, 0.1], &[true, true, false]).unwrap().auroc, 1.0, "perfect ranking");
    c.eq(auroc(&[0.5, 0.5], &[true, false]).unwrap().auroc, 0.5, "tie");
    c.eq(auroc(&[0.3; 7], &[true, false, true, false, false, true, false]).unwrap().auroc, 0.5, "constant scores");
    c.eq(OrganScores::new(10, 2, 1, 3, 4).unwrap().sofa4(), 10, "SOFA4 of (4, 3, 2, 1)");

    let co = cohort(80, 9);
    let flat = zeroed(tiny_model(&co, OutputKind::Tanh, 2));
    for (h, r) in norm_auroc(&flat, &co, &HORIZONS).unwrap() {
        c.eq(r.auroc, 0.5, &format!("constant model AUROC at {h} h"));
    }

    let mut rng = seed::rng(1);
    let (mut f, mut l, mut g) = (Vec::new(), Vec::new(), Vec::new());
    for patient in 0..40 {
        let y = patient % 2 == 0;
        for _ in 0..5 {
            let centre = if y { 2.0 } else { -2.0 };
            f.push(vec![centre + rng.gen_range(-0.5..0.5), rng.gen_range(-1.0..1.0)]);
            l.push(y);
            g.push(patient);
        }
    }
    let r = logistic_probe(&f, &l, &g, &ProbeConfig::default(), 3).unwrap();
    c.check(r.split_aurocs.len() == 100 && r.split_aurocs.iter().all(|a| *a == 1.0), || "separable probe below 1".into());

    let mut constant = zeroed(tiny_model(&co, OutputKind::Tanh, 3));
    constant.head.layers.last_mut().unwrap().bias.data_mut().iter_mut().for_each(|b| *b = 0.4);
    let risk = constant.risk_cohort(&co).unwrap();
    c.eq(relative_jumps(&risk).mean, 0.0, "constant embedding jumps");
    c.close(relative_jumps(&[vec![0.5, 0.6, 0.3]]).mean, 0.35, EPS, "jumps of (0.5, 0.6, 0.3)");

    let death = co.patients.iter().find(|p| p.outcome == Outcome::Death).unwrap();
    let one = Cohort::new(vec![truncated(death, 3)]);
    let curve = time_to_event_curve(&[vec![0.2, 0.5, 0.9]], &one, 10).unwrap();
    let got: Vec<(usize, f64)> = curve.death.iter().map(|b| (b.lag, b.mean)).collect();
    c.eq(got, vec![(0, 0.9), (1, 0.5), (2, 0.2)], "three-hour curve");
    c.check(curve.release.is_empty(), || "empty lag bins were filled".into());

    let labels = [OrganLabel::Cardio, OrganLabel::Cns, OrganLabel::Cardio, OrganLabel::Renal];
    let same = separation_from_vectors(&vec![vec![0.3, 0.4]; 4], &labels).unwrap();
    c.close(same.within, 1.0, EPS, "identical within");
    c.close(same.between, 1.0, EPS, "identical between");
    c.close(same.gap, 0.0, EPS, "identical gap");
    let clusters = [vec![1.0, 0.0], vec![0.9, 0.0], vec![0.0, 0.5], vec![0.0, 0.7]];
    let labels = [OrganLabel::Cardio, OrganLabel::Cardio, OrganLabel::Liver, OrganLabel::Liver];
    let orth = separation_from_vectors(&clusters, &labels).unwrap();
    c.close(orth.within, 1.0, EPS, "orthogonal within");
    c.close(orth.between, 0.0, EPS, "orthogonal between");
    c.close(orth.gap, 1.0, EPS, "orthogonal gap");

    let (train_c, test_c) = split_cohort(&cohort(120, 10), 0.7, &mut seed::rng(1)).unwrap();
    let mut setup = AblationSetup::new(
        ModelConfig {
            hidden_dim: 8,
            num_layers: 2,
            ..ModelConfig::default()
        },
        LossConfig {
            batch_size: 16,
            epochs: 2,
            batches_per_epoch: Some(3),
            validation_size: 32,
            ..LossConfig::default()
        },
        10,
        4,
    );
    setup.probe.n_splits = 3;
    let point = AblationPoint::new(&[("beta", "0.5")]);
    let rows = ablation_sweep(&train_c, &test_c, &setup, std::slice::from_ref(&point)).unwrap();
    c.eq(rows.len(), 1, "grid of one");
    let row = &rows[0];
    c.check(*row == run_point(&train_c, &test_c, &setup, &point).unwrap(), || "sweep row differs from run_point".into());
    let loss = point.apply(&setup.loss).unwrap();
    let (fit, val) =
        normball::embedding::fit_validation_split(&train_c, setup.fit_fraction, &mut seed::rng_for(setup.seed, "ablation.validation", 0))
            .unwrap();
    let mut m = EmbeddingModel::<f64>::for_cohort(setup.model.clone(), &fit, &mut seed::rng_for(setup.seed, "ablation.init", 0)).unwrap();
    normball::embedding::train(&mut m, &fit, &val, &loss, &mut seed::rng_for(setup.seed, "ablation.train", 0)).unwrap();
    let by_hand: Vec<f64> = norm_auroc(&m, &test_c, &setup.horizons).unwrap().iter().map(|(_, r)| r.auroc).collect();
    c.eq(row.norm_auroc.clone(), by_hand, "grid row norm AUROC");
    let emb = m.embed_cohort(&test_c).unwrap();
    let risk: Vec<Vec<f64>> = emb.iter().map(normball::embedding::row_norms_sq).collect();
    c.eq(row.jump_mean, relative_jumps(&risk).mean, "grid row jumps");
    c.eq(row.separation_gap, organ_separation(&emb, &test_c, setup.separation_window).unwrap().gap, "grid row separation");
    c.eq(row.cohort_seed, 10, "row cohort seed");
    c.eq(row.config_hash.clone(), setup.point_hash(&point).unwrap(), "row config hash");

    let dir = tempfile::tempdir().unwrap();
    let opts = ReportOptions {
        tag: "acc".into(),
        ..ReportOptions::default()
    };
    let written = export_report(&test_c, &emb, &opts, dir.path()).unwrap();
    for f in &written {
        if f.extension().is_some_and(|e| e == "svg") {
            let text = fs::read_to_string(f).unwrap();
            c.check(roxmltree::Document::parse(&text).is_ok(), || format!("{} is not XML", bin::name(f)));
        }
    }
    let hist = fs::read_to_string(dir.path().join("norm_histogram_acc.csv")).unwrap();
    let rows: Vec<Vec<usize>> = hist
        .lines()
        .skip(1)
        .map(|l| l.split(',').skip(2).map(|v| v.parse().unwrap()).collect())
        .collect();
    c.eq(rows.len(), opts.histogram_bins, "histogram CSV rows");
    c.eq(rows.iter().map(|r| r[0] + r[1]).sum::<usize>(), test_c.num_states(), "histogram conservation");
    let tte = fs::read_to_string(dir.path().join("time_to_event_acc.csv")).unwrap();
    let curve = time_to_event_curve(&risk, &test_c, opts.max_hours).unwrap();
    c.eq(tte.lines().count() - 1, curve.death.len() + curve.release.len(), "time-to-event CSV rows");
}

fn transition(state: Vec<f64>, action: usize, reward: f64, done: bool) -> Transition {
    Transition {
        patient: 0,
        hour: 0,
        next_state: state.iter().map(|v| v + 0.1).collect(),
        state,
        action,
        reward,
        done,
        d_s: 0.0,
        d_next: 0.0,
    }
}

fn rl(c: &mut Checks) {
    let co = cohort(40, 8);
    let zero_members: Vec<_> = (0..3).map(|s| zeroed(tiny_model(&co, OutputKind::Tanh, s))).collect();
    let unit_members: Vec<_> = (0..3).map(|s| tiny_model(&co, OutputKind::UnitSphere, s)).collect();
    let p = &co.patients[0];
    c.eq(RiskModel::new(zero_members).unwrap().compute_d(p, 0).unwrap(), 0.0, "zero members");
    c.close(RiskModel::new(unit_members).unwrap().compute_d(p, 1).unwrap(), 1.0, EPS, "unit members");
    let tenths: Vec<f64> = (1..=10).map(|k| 0.1 * k as f64).collect();
    c.close(mean_squared_norm(&tenths), 0.55, EPS, "mean of 0.1k");

    c.close(RewardSpec::new(RewardKind::R1).reward(0.8, 0.4, None), 0.15, EPS, "r1");
    c.close(RewardSpec::new(RewardKind::R2).reward(0.4, 0.8, None), -1.7, EPS, "r2");
    c.close(RewardSpec::new(RewardKind::R1).terminal(Outcome::Release, 0.4), 9.0, EPS, "terminal release");

    let d: Vec<Vec<f64>> = co.patients.iter().map(|p| (0..p.len()).map(|h| 0.01 * (h % 50) as f64).collect()).collect();
    let inputs = state_inputs(&co, None).unwrap();
    let tr = build_transitions(&co, &d, &inputs, &RewardSpec::new(RewardKind::TerminalOnly)).unwrap();
    for (i, p) in co.patients.iter().enumerate() {
        let mine: Vec<&Transition> = tr.iter().filter(|t| t.patient == i).collect();
        c.eq(mine.len(), p.len() - 1, "transitions per stay");
        c.check(mine.iter().all(|t| t.done || t.reward == 0.0), || "non-final terminal-only reward".into());
    }

    let s3 = Support::new(-1.0, 1.0, 3).unwrap();
    c.eq(c51_project(&[0.5], &[1.0], &s3).unwrap(), vec![0.0, 0.5, 0.5], "project 0.5");
    c.eq(c51_project(&[4.0], &[1.0], &s3).unwrap(), vec![0.0, 0.0, 1.0], "project beyond v_max");

    let tiny = C51Config {
        hidden_dim: 16,
        hidden_layers: 2,
        batch_size: 8,
        ..C51Config::default()
    };
    let support = tiny.support().unwrap();
    let net = normball::rlshape::QNetwork::new(2, &tiny, vec![0.0; 2], vec![1.0; 2], &mut seed::rng(2)).unwrap();
    let t = transition(vec![0.3, 0.1], 4, 2.5, false);
    let got = bellman_targets(&net, &[&t], 0.0).unwrap();
    let direct = c51_project(&[2.5], &[1.0], &support).unwrap();
    c.check(got[0].iter().zip(&direct).all(|(a, b)| (a - b).abs() < EPS), || "zero discount target".into());

    let data: Vec<Transition> = (0..20)
        .map(|i| transition(vec![i as f64, (i % 3) as f64], i % 9, if i % 5 == 0 { -15.0 } else { 0.1 }, i % 5 == 0))
        .collect();
    let short = C51Config {
        epochs: 2,
        batches_per_epoch: Some(5),
        ..tiny.clone()
    };
    let a = c51_train(&data, &short, &mut seed::rng(3)).unwrap();
    c.check(a == c51_train(&data, &short, &mut seed::rng(3)).unwrap(), || "c51 not deterministic".into());

    for i in 0..50 {
        let (k, picks) = member_subset(200, 11, i);
        c.check((MEMBER_FRACTION.0..=MEMBER_FRACTION.1).contains(&k), || format!("k = {k}"));
        c.check(picks.iter().all(|&p| p < 200), || "subset index out of range".into());
    }
    let atoms = support.atoms;
    let same: Vec<f64> = (0..9).flat_map(|_| (0..atoms).map(|j| if j == 20 { 1.0 } else { 0.0 })).collect();
    c.eq(greedy_action(&same, &support), 0, "identical distributions");
    for best in [0, 4, 8] {
        let dists: Vec<f64> = (0..9)
            .flat_map(|a| (0..atoms).map(move |j| f64::from(u8::from(if a == best { j == atoms - 1 } else { j == 0 }))))
            .collect();
        c.eq(greedy_action(&dists, &support), best, "mass on v_max");
    }

    let cfg = C51Config {
        hidden_dim: 16,
        hidden_layers: 1,
        epochs: 1,
        batches_per_epoch: Some(3),
        batch_size: 8,
        ..C51Config::default()
    };
    let spec = RewardSpec::new(RewardKind::R1);
    let ens = bootstrap_ensemble(&co, &d, &inputs, &spec, &cfg, 5, 3).unwrap();
    for m in &ens.members {
        c.check((MEMBER_FRACTION.0..=MEMBER_FRACTION.1).contains(&m.fraction), || format!("member fraction {}", m.fraction));
        c.check(m.patients.windows(2).all(|w| w[0] < w[1]) && m.patients.iter().all(|&p| p < co.len()), || "member subset".into());
    }
    let single = bootstrap_ensemble(&co, &d, &inputs, &spec, &cfg, 1, 3).unwrap();
    let r = policy_report(&single, &co, &inputs).unwrap();
    c.eq(r.averaged_actions, r.averaged_values, "single-member averaging modes");
    c.close(r.clinician.iter().sum::<f64>(), 100.0, 0.1, "clinician percentages");
    let lo = r.value_groups[..2].iter().map(|g| g.min).fold(f64::INFINITY, f64::min);
    let hi = r.value_groups[..2].iter().map(|g| g.max).fold(f64::NEG_INFINITY, f64::max);
    c.eq((lo, hi), (0.0, 1.0), "scaled value range");
}

fn cli(c: &mut Checks) -> Result<(), String> {
    use bin::{code, csv_files, files, name, ok, only, s};
    let work = tempfile::tempdir().map_err(|e| e.to_string())?;
    let w = work.path();

    let g1 = w.join("g1");
    let g2 = w.join("g2");
    ok(&["generate", "--patients", "200", "--seed", "1", "--out", s(&g1)])?;
    ok(&["generate", "--patients", "200", "--seed", "1", "--out", s(&g2)])?;
    let csv = only(&g1, "cohort_", ".csv")?;
    let loaded = normball::cohort::load_cohort_csv(&csv).map_err(|e| e.to_string())?;
    c.eq(loaded.len(), 200, "generate --patients 200");
    c.check(csv_files(&g1) == csv_files(&g2), || "identical generate runs differ".into());
    c.eq(code(&["generate", "--seed", "1", "--out", s(&w.join("g3"))])?, 2, "generate without --patients");

    let small = w.join("small");
    ok(&["generate", "--patients", "150", "--seed", "5", "--out", s(&small)])?;
    let cohort_csv = only(&small, "cohort_", ".csv")?;
    let tiny = w.join("tiny.cfg");
    fs::write(&tiny, bin::TINY_TRAIN).map_err(|e| e.to_string())?;
    let train = |out: &std::path::Path, extra: &[&str]| {
        let mut args = vec!["train", "--cohort", s(&cohort_csv), "--config", s(&tiny), "--out", s(out)];
        args.extend(extra);
        bin::run(&args)
    };
    let t = w.join("t");
    let run = train(&t, &["--beta", "0.75", "--encoder", "gru", "--dim", "3"])?;
    c.eq(run.status.code(), Some(0), "train gru");
    let ckpt = only(&t, "model_", ".ckpt");
    c.check(ckpt.is_ok(), || "train wrote no checkpoint".into());
    c.check(only(&t, "training_curves_", ".csv").is_ok(), || "train wrote no curves".into());
    let rejected = w.join("rejected");
    let run = train(&rejected, &["--beta", "1.5"])?;
    c.eq(run.status.code(), Some(2), "train --beta 1.5");
    c.check(files(&rejected).iter().all(|p| !name(p).ends_with(".ckpt")), || "rejected run wrote a checkpoint".into());
    let missing = w.join("missing");
    let run = bin::run(&["train", "--cohort", "/nope/missing.csv", "--config", s(&tiny), "--out", s(&missing)])?;
    c.check(run.status.code() != Some(0) && files(&missing).iter().all(|p| !name(p).ends_with(".ckpt")), || {
        "failed train exited 0 or wrote a checkpoint".into()
    });

    let ckpt = ckpt?;
    let held = only(&t, "heldout_", ".csv")?;
    let eval = |out: &std::path::Path, flags: &[&str]| {
        let mut args = vec!["eval", "--checkpoint", s(&ckpt), "--cohort", s(&held), "--set", "probe.n_splits=3", "--out", s(out)];
        args.extend(flags);
        ok(&args)
    };
    let e = w.join("e");
    eval(&e, &["--auroc"])?;
    let table = fs::read_to_string(only(&e, "auroc_", ".csv")?).map_err(|e| e.to_string())?;
    for score in ["norm", "sofa", "sofa4"] {
        c.eq(table.lines().filter(|l| l.starts_with(&format!("{score},"))).count(), 5, &format!("{score} horizon rows"));
    }
    let out = bin::run(&["eval", "--checkpoint", s(&w.join("none.ckpt")), "--cohort", s(&held), "--auroc", "--out", s(&e)])?;
    let err = String::from_utf8_lossy(&out.stderr).to_lowercase();
    c.check(out.status.code() == Some(1) && err.contains("not found"), || format!("missing checkpoint: {:?} {err}", out.status.code()));

    let stems = |dir: &std::path::Path| {
        let mut v: Vec<String> = files(dir)
            .iter()
            .filter(|p| p.is_file() && !name(p).ends_with(".cfg"))
            .map(|p| {
                let n = name(p);
                let ext = n.rsplit('.').next().unwrap_or("").to_string();
                format!("{}.{ext}", n.split("_s").next().unwrap_or(&n))
            })
            .collect();
        v.sort();
        v.dedup();
        v
    };
    let all = w.join("all");
    eval(&all, &["--all"])?;
    let mut union = Vec::new();
    for flag in ["--auroc", "--probe", "--jumps", "--curves", "--separation", "--report"] {
        let d = w.join(format!("single{flag}"));
        eval(&d, &[flag])?;
        union.extend(stems(&d));
    }
    union.sort();
    union.dedup();
    c.eq(stems(&all), union, "eval --all outputs");

    let a = w.join("a");
    let ablate = [
        "ablate", "--cohort", s(&cohort_csv), "--config", s(&tiny), "--grid", "beta=0,1", "--set", "probe.n_splits=3", "--out", s(&a),
    ];
    ok(&ablate)?;
    let table_path = only(&a, "ablation_", ".csv")?;
    let first = fs::read(&table_path).map_err(|e| e.to_string())?;
    c.eq(String::from_utf8_lossy(&first).lines().count(), 3, "--grid beta=0,1 rows plus header");
    let rows_dir = files(&a).into_iter().find(|p| p.is_dir()).ok_or("no row directory")?;
    let row_file = files(&rows_dir).into_iter().next().ok_or("no row files")?;
    let original = fs::read_to_string(&row_file).map_err(|e| e.to_string())?;
    let mut lines: Vec<String> = original.lines().map(String::from).collect();
    let mut fields: Vec<String> = lines[1].split(',').map(String::from).collect();
    let idx = fields.len() - 4;
    fields[idx] = "99".into();
    lines[1] = fields.join(",");
    fs::write(&row_file, lines.join("\n") + "\n").map_err(|e| e.to_string())?;
    ok(&ablate)?;
    let resumed = fs::read_to_string(&table_path).map_err(|e| e.to_string())?;
    c.check(resumed.contains(",99,"), || "resumed sweep recomputed a finished row".into());
    fs::write(&row_file, original).map_err(|e| e.to_string())?;

    let r = w.join("r");
    let mut args = vec!["rl", "--cohort", s(&cohort_csv), "--reward", "r1", "--ensemble", "5", "--out", s(&r)];
    args.extend(bin::TINY_RL);
    ok(&args)?;
    let actions = fs::read_to_string(only(&r, "policy_actions_", ".csv")?).map_err(|e| e.to_string())?;
    c.eq(actions.lines().count(), 10, "policy action rows plus header");
    c.check(actions.lines().next().is_some_and(|h| h.contains("averaged_actions") && h.contains("clinician")), || {
        "policy action header".into()
    });
    c.eq(code(&["rl", "--cohort", s(&cohort_csv), "--reward", "shaped", "--out", s(&r)])?, 2, "unknown reward");
    Ok(())
}

pub fn run(_master: u64) -> Checks {
    let mut c = Checks::new();
    numerics(&mut c);
    cohorts(&mut c);
    losses(&mut c);
    training(&mut c);
    evaluation(&mut c);
    rl(&mut c);
    let before = c.total;
    if let Err(e) = cli(&mut c) {
        c.check(false, || format!("command line: {e}"));
    }
    c.note(format!("{before} library checks, {} command-line checks", c.total - before));
    c
}
