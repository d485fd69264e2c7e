//! Synthetic sepsis-like cohorts.
//!
//! Each stay is driven by a latent risk `ρ_t ∈ [0, 1]` that performs a bounded
//! random walk drifting toward 1 for non-survivors and toward 0 for survivors.
//! Organ loads scale with `ρ_t`; non-survivors have one dominant organ mode
//! drawn from a mixture. Scores, vitals and labs are noisy affine read-outs of
//! risk and loads, and the logged clinician actions follow a noisy threshold
//! rule. Treatment slightly slows the risk drift, so logged actions carry a
//! real (small) effect.

use rand::Rng;
use rand_distr::{Distribution, Normal, WeightedIndex};

use super::types::*;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Debug, PartialEq)]
pub struct CohortConfig {
    pub num_patients: usize,
    pub survivor_fraction: f64,
    pub min_hours: usize,
    pub max_hours: usize,
    /// Standard deviation of the hourly latent-risk innovation.
    pub risk_noise: f64,
    /// Multiplier on every observation noise scale.
    pub observation_noise: f64,
    /// Mixture weights of the dominant failing organ among non-survivors,
    /// ordered Cardio, CNS, Liver, Renal.
    pub organ_mode_weights: [f64; 4],
    /// Hourly risk reduction from fully matched treatment.
    pub treatment_effect: f64,
    /// Labs are re-measured every this many hours and carried forward in between.
    pub lab_interval: usize,
    /// Multiplier on the per-patient baseline offsets of vitals and labs, which
    /// are independent of risk.
    pub patient_heterogeneity: f64,
    pub seed: u64,
}

impl Default for CohortConfig {
    fn default() -> Self {
        Self {
            num_patients: 1000,
            survivor_fraction: 0.9,
            min_hours: 18,
            max_hours: 48,
            risk_noise: 0.01,
            observation_noise: 1.0,
            organ_mode_weights: [0.4, 0.2, 0.15, 0.25],
            treatment_effect: 0.004,
            lab_interval: 6,
            patient_heterogeneity: 0.0,
            seed: 0,
        }
    }
}

impl CohortConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.num_patients == 0 {
            return bad("num_patients must be positive".into());
        }
        if !(self.survivor_fraction > 0.0 && self.survivor_fraction < 1.0) {
            return bad(format!("survivor_fraction {} outside (0, 1)", self.survivor_fraction));
        }
        if self.min_hours < 13 || self.max_hours < self.min_hours {
            return bad(format!(
                "stay lengths need 13 <= min_hours <= max_hours, got {}..={}",
                self.min_hours, self.max_hours
            ));
        }
        if !(self.risk_noise >= 0.0
            && self.observation_noise >= 0.0
            && self.treatment_effect >= 0.0
            && self.patient_heterogeneity >= 0.0)
        {
            return bad("noise scales and treatment effect must be non-negative".into());
        }
        if self.organ_mode_weights.iter().any(|w| !(*w >= 0.0)) || self.organ_mode_weights.iter().sum::<f64>() <= 0.0 {
            return bad(format!("invalid organ mode weights {:?}", self.organ_mode_weights));
        }
        if self.lab_interval == 0 {
            return bad("lab_interval must be positive".into());
        }
        Ok(())
    }

    /// `key=value` lines, one per field, in a fixed order.
    pub fn to_kv(&self) -> Vec<(String, String)> {
        let weights: Vec<String> = self.organ_mode_weights.iter().map(|w| w.to_string()).collect();
        [
            ("num_patients", self.num_patients.to_string()),
            ("survivor_fraction", self.survivor_fraction.to_string()),
            ("min_hours", self.min_hours.to_string()),
            ("max_hours", self.max_hours.to_string()),
            ("risk_noise", self.risk_noise.to_string()),
            ("observation_noise", self.observation_noise.to_string()),
            ("organ_mode_weights", weights.join(",")),
            ("treatment_effect", self.treatment_effect.to_string()),
            ("lab_interval", self.lab_interval.to_string()),
            ("patient_heterogeneity", self.patient_heterogeneity.to_string()),
            ("seed", self.seed.to_string()),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect()
    }

    /// Applies one `key=value` setting. Unknown keys are rejected.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{value}`")))
        }
        match key {
            "num_patients" => self.num_patients = num(key, value)?,
            "survivor_fraction" => self.survivor_fraction = num(key, value)?,
            "min_hours" => self.min_hours = num(key, value)?,
            "max_hours" => self.max_hours = num(key, value)?,
            "risk_noise" => self.risk_noise = num(key, value)?,
            "observation_noise" => self.observation_noise = num(key, value)?,
            "organ_mode_weights" => {
                let parts: Vec<f64> = value.split(',').map(|p| num(key, p)).collect::<Result<_>>()?;
                self.organ_mode_weights = parts
                    .try_into()
                    .map_err(|_| Error::Config("`organ_mode_weights` needs 4 comma-separated values".into()))?;
            }
            "treatment_effect" => self.treatment_effect = num(key, value)?,
            "lab_interval" => self.lab_interval = num(key, value)?,
            "patient_heterogeneity" => self.patient_heterogeneity = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            _ => return Err(Error::Config(format!("unknown cohort key `{key}`"))),
        }
        Ok(())
    }
}

/// A generated cohort together with the latent risk path of every stay.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticCohort {
    pub cohort: Cohort,
    pub risk: Vec<Vec<f64>>,
    /// Dominant organ of each non-survivor (`None` for survivors).
    pub dominant_organ: Vec<Option<OrganLabel>>,
}

pub fn generate_cohort(config: &CohortConfig) -> Result<Cohort> {
    Ok(generate_synthetic(config)?.cohort)
}

pub fn generate_synthetic(config: &CohortConfig) -> Result<SyntheticCohort> {
    config.validate()?;
    let lab_projection = lab_history_projection();
    let mode_dist = WeightedIndex::new(config.organ_mode_weights).map_err(|e| Error::Config(e.to_string()))?;
    let mut patients = Vec::with_capacity(config.num_patients);
    let mut risk = Vec::with_capacity(config.num_patients);
    let mut dominant = Vec::with_capacity(config.num_patients);
    for i in 0..config.num_patients {
        let mut rng = seed::rng_for(config.seed, "cohort.patient", i as u64);
        let (traj, rho, mode) = generate_patient(config, i as u64, &mode_dist, &lab_projection, &mut rng);
        patients.push(traj);
        risk.push(rho);
        dominant.push(mode);
    }
    Ok(SyntheticCohort {
        cohort: Cohort::new(patients),
        risk,
        dominant_organ: dominant,
    })
}

fn normal<R: Rng + ?Sized>(rng: &mut R, sd: f64) -> f64 {
    if sd <= 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sd).expect("finite sd").sample(rng)
}

fn quantize_score(load: f64) -> u8 {
    (4.0 * load).round().clamp(0.0, 4.0) as u8
}

/// Fixed 10 x 12 mixing matrix for the lab-history channels.
fn lab_history_projection() -> [[f64; NUM_LABS]; 10] {
    let mut rng = seed::rng(0x1AB5_4157);
    let mut p = [[0.0; NUM_LABS]; 10];
    for row in &mut p {
        for v in row.iter_mut() {
            *v = normal(&mut rng, 1.0) / (NUM_LABS as f64).sqrt();
        }
    }
    p
}

// Spread of the per-patient baseline offsets.
const VITAL_BASE_SD: [f64; NUM_VITALS] = [10.0, 10.0, 7.0, 0.0, 0.5, 1.2, 3.0];
const LAB_BASE_SD: [f64; NUM_LABS] = [2.0, 2.0, 0.4, 3.0, 30.0, 3.0, 0.8, 50.0, 0.4, 3.0, 10.0, 3.0];

// Rough population centres and spreads used to standardize inputs of the aux channels.
const LAB_CENTER: [f64; NUM_LABS] = [14.0, 22.0, 2.0, 104.0, 145.0, 30.0, 10.0, 190.0, 4.3, 139.0, 30.0, 14.0];
const LAB_SPREAD: [f64; NUM_LABS] = [3.0, 3.0, 1.2, 3.0, 35.0, 3.0, 1.0, 60.0, 0.5, 3.0, 18.0, 4.5];

fn generate_patient<R: Rng + ?Sized>(
    cfg: &CohortConfig,
    patient_id: u64,
    mode_dist: &WeightedIndex<f64>,
    lab_projection: &[[f64; NUM_LABS]; 10],
    rng: &mut R,
) -> (PatientTrajectory, Vec<f64>, Option<OrganLabel>) {
    let noise = cfg.observation_noise;
    let outcome = if rng.gen::<f64>() < cfg.survivor_fraction {
        Outcome::Release
    } else {
        Outcome::Death
    };
    let hours = rng.gen_range(cfg.min_hours..=cfg.max_hours);

    let rho0 = rng.gen_range(0.25..0.5);
    let target = match outcome {
        Outcome::Death => rng.gen_range(0.85..0.97),
        Outcome::Release => rng.gen_range(0.03..0.2),
    };
    let drift = (target - rho0) / (hours - 1) as f64;

    // Organ weights: Cardio, CNS, Liver, Renal.
    let mut weights = [0.0; 4];
    let mode = match outcome {
        Outcome::Death => {
            let m = OrganLabel::ALL[mode_dist.sample(rng)];
            for (k, w) in weights.iter_mut().enumerate() {
                *w = if k == m.index() { 1.0 } else { rng.gen_range(0.1..0.45) };
            }
            Some(m)
        }
        Outcome::Release => {
            for w in weights.iter_mut() {
                *w = rng.gen_range(0.15..0.6);
            }
            None
        }
    };

    let demographics = [
        (64.0 + normal(rng, 15.0)).clamp(18.0, 95.0),
        if rng.gen::<f64>() < 0.45 { 1.0 } else { 0.0 },
        (80.0 + normal(rng, 18.0)).clamp(40.0, 180.0),
    ];
    let het = cfg.patient_heterogeneity;
    let hr_base = normal(rng, 8.0);
    let map_base = normal(rng, 5.0);
    let vital_base: [f64; NUM_VITALS] = std::array::from_fn(|k| normal(rng, het * VITAL_BASE_SD[k]));
    let lab_base: [f64; NUM_LABS] = std::array::from_fn(|k| normal(rng, het * LAB_BASE_SD[k]));

    let mut rho = Vec::with_capacity(hours);
    let mut states = Vec::with_capacity(hours);
    let mut actions = Vec::with_capacity(hours);
    let mut r = rho0;
    let mut load_noise = [0.0; 4];
    let mut labs = [0.0; NUM_LABS];
    let mut cardio_aux = [0.0; 4];
    let mut lab_aux = [0.0; 10];

    for t in 0..hours {
        rho.push(r);
        let mut load = [0.0; 4];
        for k in 0..4 {
            load_noise[k] = 0.8 * load_noise[k] + normal(rng, 0.03 * noise);
            load[k] = (weights[k] * r + load_noise[k]).clamp(0.0, 1.0);
        }
        let [l_cardio, l_cns, l_liver, l_renal] = load;
        let cardio = quantize_score(l_cardio);
        let cns = quantize_score(l_cns);
        let liver = quantize_score(l_liver);
        let renal = quantize_score(l_renal);
        let resp = quantize_score((0.35 * r + 0.05 + normal(rng, 0.05 * noise)).clamp(0.0, 1.0));
        let coag = quantize_score((0.35 * r + 0.05 + normal(rng, 0.05 * noise)).clamp(0.0, 1.0));
        let sofa = cardio + cns + liver + renal + resp + coag;
        let scores = OrganScores {
            sofa,
            liver,
            renal,
            cns,
            cardio,
        };

        let map = 82.0 + map_base - 18.0 * l_cardio - 6.0 * r + normal(rng, 5.0 * noise);
        let mut vitals = [
            80.0 + hr_base + 30.0 * r + 10.0 * l_cardio + normal(rng, 6.0 * noise),
            map + 35.0 + normal(rng, 5.0 * noise),
            map - 17.0 + normal(rng, 4.0 * noise),
            map,
            37.0 + 1.2 * r + normal(rng, 0.4 * noise),
            (97.5 - 5.0 * r + normal(rng, 1.2 * noise)).min(100.0),
            17.0 + 9.0 * r + normal(rng, 2.5 * noise),
        ];
        for (v, b) in vitals.iter_mut().zip(vital_base) {
            *v += b;
        }
        vitals[5] = vitals[5].min(100.0);

        if t % cfg.lab_interval == 0 {
            labs = [
                11.0 + 7.0 * r + normal(rng, 1.5 * noise),
                25.0 - 7.0 * r + normal(rng, 1.5 * noise),
                (0.9 + 3.0 * l_renal + normal(rng, 0.25 * noise)).max(0.3),
                104.0 + normal(rng, 3.0 * noise),
                125.0 + 40.0 * r + normal(rng, 25.0 * noise),
                32.0 - 4.0 * r + normal(rng, 2.5 * noise),
                10.8 - 1.5 * r + normal(rng, 0.8 * noise),
                (230.0 - 150.0 * l_liver + normal(rng, 35.0 * noise)).max(10.0),
                4.0 + 0.7 * l_renal + normal(rng, 0.35 * noise),
                139.0 + normal(rng, 3.0 * noise),
                16.0 + 45.0 * l_renal + normal(rng, 5.0 * noise),
                10.0 + 8.0 * r + normal(rng, 3.0 * noise),
            ];
            for (l, b) in labs.iter_mut().zip(lab_base) {
                *l += b;
            }
            labs[2] = labs[2].max(0.3);
            labs[7] = labs[7].max(10.0);
        }

        let cardio_inputs = [
            (vitals[0] - 95.0) / 15.0,
            (vitals[3] - 72.0) / 8.0,
            (vitals[1] - 107.0) / 10.0,
            (vitals[6] - 21.0) / 4.0,
        ];
        for (a, z) in cardio_aux.iter_mut().zip(cardio_inputs) {
            *a = if t == 0 { z } else { 0.7 * *a + 0.3 * z };
        }
        let lab_z: Vec<f64> = (0..NUM_LABS).map(|k| (labs[k] - LAB_CENTER[k]) / LAB_SPREAD[k]).collect();
        for (a, row) in lab_aux.iter_mut().zip(lab_projection) {
            let z: f64 = row.iter().zip(&lab_z).map(|(p, x)| p * x).sum();
            *a = if t == 0 { z } else { 0.85 * *a + 0.15 * z };
        }
        let mut aux = [0.0; NUM_AUX];
        aux[..4].copy_from_slice(&cardio_aux);
        aux[4..].copy_from_slice(&lab_aux);

        // Behaviour policy: vasopressors follow the cardiovascular score,
        // fluids follow overall risk; both with occasional deviations.
        let mut vaso: i32 = match cardio {
            0 | 1 => 0,
            2 | 3 => 1,
            _ => 2,
        };
        if rng.gen::<f64>() < 0.2 {
            vaso += if rng.gen::<bool>() { 1 } else { -1 };
        }
        let vaso = vaso.clamp(0, 2) as u8;
        let f = r + normal(rng, 0.12);
        let fluids = if f < 0.35 {
            0
        } else if f < 0.65 {
            1
        } else {
            2
        };
        actions.push(ActionPair { vaso, fluids });
        states.push(StateVector {
            demographics,
            vitals,
            scores,
            labs,
            aux,
        });

        let benefit = 0.5 * vaso as f64 * l_cardio + 0.5 * fluids as f64 * r;
        r = (r + drift - cfg.treatment_effect * benefit + normal(rng, cfg.risk_noise)).clamp(0.0, 1.0);
    }

    (
        PatientTrajectory {
            patient_id,
            states,
            actions,
            outcome,
        },
        rho,
        mode,
    )
}
