use normball::cohort::{generate_cohort, CohortConfig};
use normball::embedding::{LossConfig, ModelConfig};
use normball::evalsuite::auroc;
use normball::rlshape::{
    build_transitions, c51_project, c51_train, state_inputs, train_risk_model, C51Config, QNetwork, RewardKind,
    RewardSpec, RiskConfig, Support, Transition, NUM_ACTIONS,
};
use normball::numerics::Parameters;
use normball::seed;
use rand::Rng;

use crate::support::{brute_force_auroc, Checks};

const AUROC_INSTANCES: usize = 1000;
const PROJECTION_INSTANCES: usize = 1000;
/// Grid that keeps every R1 reward and partial sum exactly representable.
const D_GRID: f64 = 1048576.0;

fn random_scores(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    if rng.gen_bool(0.5) {
        // Coarse values force many ties.
        (0..n).map(|_| rng.gen_range(-8..=8) as f64 / 8.0).collect()
    } else {
        (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()
    }
}

pub fn auroc_oracle(master: u64) -> Checks {
    let mut c = Checks::new();
    let mut rng = seed::rng_for(master, "acceptance.auroc", 0);
    let mut done = 0;
    while done < AUROC_INSTANCES {
        let n = rng.gen_range(2..=200);
        let rate = rng.gen_range(0.05..0.95);
        let labels: Vec<bool> = (0..n).map(|_| rng.gen_bool(rate)).collect();
        if labels.iter().all(|l| *l) || labels.iter().all(|l| !*l) {
            continue;
        }
        let scores = random_scores(&mut rng, n);
        let got = auroc(&scores, &labels).unwrap().auroc;
        let want = brute_force_auroc(&scores, &labels);
        c.eq(got, want, "auroc vs pair counting");
        let affine: Vec<f64> = scores.iter().map(|x| 2.0 * x + 1.0).collect();
        let cubed: Vec<f64> = scores.iter().map(|x| x * x * x).collect();
        c.eq(auroc(&affine, &labels).unwrap().auroc, got, "auroc under 2x+1");
        c.eq(auroc(&cubed, &labels).unwrap().auroc, got, "auroc under x^3");
        done += 1;
    }
    c.note(format!("{AUROC_INSTANCES} instances of 2-200 states, half with tied k/8 scores"));
    c
}

/// `m_i = Σ_j p_j·max(0, 1 − |clip(z_j) − z_i|/Δz)`.
fn projection_oracle(atoms: &[f64], probs: &[f64], support: &Support) -> Vec<f64> {
    (0..support.atoms)
        .map(|i| {
            let zi = support.atom(i);
            atoms
                .iter()
                .zip(probs)
                .map(|(z, p)| p * (1.0 - (z.clamp(support.v_min, support.v_max) - zi).abs() / support.delta()).max(0.0))
                .sum()
        })
        .collect()
}

fn random_probs(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen::<f64>().powi(3)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|x| x / s).collect()
}

fn single_terminal(state: Vec<f64>) -> Transition {
    Transition {
        patient: 0,
        hour: 0,
        next_state: state.clone(),
        state,
        action: 4,
        reward: -15.0,
        done: true,
        d_s: 0.9,
        d_next: 0.95,
    }
}

pub fn c51_checks(master: u64) -> Checks {
    let mut c = Checks::new();
    let mut rng = seed::rng_for(master, "acceptance.c51", 0);

    let mut worst_proj: f64 = 0.0;
    for k in 0..PROJECTION_INSTANCES {
        let atoms = rng.gen_range(2..=61);
        let half = rng.gen_range(1.0..30.0);
        let support = if k % 4 == 0 {
            C51Config::default().support().unwrap()
        } else {
            Support::new(-half, half * rng.gen_range(0.2..1.5), atoms).unwrap()
        };
        let (r, gamma) = (rng.gen_range(-20.0..20.0), rng.gen_range(0.0..=1.0));
        let targets: Vec<f64> = support.values().iter().map(|z| r + gamma * z).collect();
        let probs = random_probs(&mut rng, support.atoms);
        let got = c51_project(&targets, &probs, &support).unwrap();
        let want = projection_oracle(&targets, &probs, &support);
        let err = got.iter().zip(&want).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        worst_proj = worst_proj.max(err);
        let mass: f64 = got.iter().sum();
        c.close(mass, 1.0, 1e-6, "projected mass");
    }
    c.check(worst_proj <= 1e-12, || format!("projection differs from oracle by {worst_proj:e}"));

    let mut worst_norm: f64 = 0.0;
    for _ in 0..50 {
        let dim = rng.gen_range(1..=45);
        let cfg = C51Config {
            atoms: rng.gen_range(2..=51),
            hidden_dim: rng.gen_range(2..=32),
            hidden_layers: rng.gen_range(1..=3),
            ..C51Config::default()
        };
        let mut q = QNetwork::new(dim, &cfg, vec![0.0; dim], vec![1.0; dim], &mut rng).unwrap();
        let gain = rng.gen_range(0.5..20.0);
        for p in q.mlp.params_mut() {
            for v in p.data_mut() {
                *v *= gain;
            }
        }
        let states: Vec<Vec<f64>> = (0..8).map(|_| (0..dim).map(|_| rng.gen_range(-50.0..50.0)).collect()).collect();
        let refs: Vec<&[f64]> = states.iter().map(Vec::as_slice).collect();
        for row in q.distributions(&refs).unwrap() {
            c.eq(row.len(), NUM_ACTIONS * cfg.atoms, "distribution row width");
            for block in row.chunks(cfg.atoms) {
                c.check(block.iter().all(|p| p.is_finite() && *p >= 0.0), || "negative or non-finite probability".into());
                worst_norm = worst_norm.max((block.iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    c.check(worst_norm <= 1e-6, || format!("distribution mass off by {worst_norm:e}"));

    let state: Vec<f64> = (0..41).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let one = single_terminal(state.clone());
    let cfg = C51Config {
        hidden_dim: 32,
        hidden_layers: 2,
        batch_size: 16,
        batches_per_epoch: Some(1500),
        epochs: 1,
        ..C51Config::default()
    };
    let (net, _) = c51_train(std::slice::from_ref(&one), &cfg, &mut seed::rng_for(master, "acceptance.c51.overfit", 0)).unwrap();
    let dist = &net.distributions(&[state.as_slice()]).unwrap()[0];
    let ev = net.support.expectation(&dist[one.action * net.support.atoms..(one.action + 1) * net.support.atoms]);
    c.check((ev - -15.0).abs() <= 0.5, || format!("overfit expected value {ev:.3}"));

    let (links, exact, trajectories, dev) = telescoping(master, &mut c);
    c.note(format!(
        "projection max error {worst_proj:.1e} over {PROJECTION_INSTANCES}; max mass error {worst_norm:.1e}; overfit value {ev:.3}; R1 sums exact on {exact}/{trajectories} stays, {links} links, unsnapped max deviation {dev:.1e}"
    ));
    c
}

/// R1 returns telescope to `c·(d_0 − d_{T−2}) + terminal(d_{T−1})`.
fn telescoping(master: u64, c: &mut Checks) -> (usize, usize, usize, f64) {
    let cohort = generate_cohort(&CohortConfig {
        num_patients: 200,
        seed: seed::derive(master, "acceptance.telescoping.cohort", 0),
        ..CohortConfig::default()
    })
    .unwrap();
    let risk = train_risk_model(
        &cohort,
        &RiskConfig {
            members: 2,
            model: ModelConfig {
                hidden_dim: 16,
                num_layers: 2,
                embedding_dim: 10,
                ..ModelConfig::default()
            },
            loss: LossConfig {
                batch_size: 32,
                epochs: 2,
                batches_per_epoch: Some(20),
                validation_size: 64,
                ..LossConfig::default()
            },
        },
        seed::derive(master, "acceptance.telescoping.risk", 0),
    )
    .unwrap();
    let spec = RewardSpec::new(RewardKind::R1);
    let inputs = state_inputs(&cohort, None).unwrap();
    let raw = risk.risk_cohort(&cohort).unwrap();
    let snapped: Vec<Vec<f64>> = raw.iter().map(|d| d.iter().map(|x| (x * D_GRID).round() / D_GRID).collect()).collect();

    let (mut links, mut exact, mut dev) = (0, 0, 0.0f64);
    for (d, is_snapped) in [(&snapped, true), (&raw, false)] {
        let transitions = build_transitions(&cohort, d, &inputs, &spec).unwrap();
        let mut start = 0;
        for (i, p) in cohort.patients.iter().enumerate() {
            let stay = &transitions[start..start + p.len() - 1];
            start += stay.len();
            for (h, t) in stay.iter().enumerate() {
                c.check(t.patient == i && t.hour == h && t.done == (h + 1 == stay.len()), || format!("stay {i} hour {h} mislabelled"));
                c.check(t.d_s == d[i][h] && t.d_next == d[i][h + 1], || format!("stay {i} hour {h} risk mismatch"));
            }
            for w in stay.windows(2) {
                c.check(w[0].d_next == w[1].d_s, || format!("stay {i}: broken d chain"));
                links += 1;
            }
            let last = stay.last().unwrap();
            let sum: f64 = stay.iter().map(|t| t.reward).sum();
            let want = spec.r1_coef * (d[i][0] - last.d_s) + spec.terminal(p.outcome, last.d_next);
            if is_snapped {
                c.check(sum == want, || format!("stay {i}: R1 return {sum} vs telescoped {want}"));
                exact += usize::from(sum == want);
            } else {
                dev = dev.max((sum - want).abs());
            }
        }
    }
    c.check(dev < 1e-9, || format!("unsnapped telescoping deviation {dev:e}"));
    (links / 2, exact, cohort.len(), dev)
}
