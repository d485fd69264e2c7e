use std::fmt;

use crate::error::{Error, Result};

pub const NUM_DEMOGRAPHICS: usize = 3;
pub const NUM_VITALS: usize = 7;
pub const NUM_SCORES: usize = 5;
pub const NUM_LABS: usize = 12;
pub const NUM_AUX: usize = 14;
pub const NUM_OBSERVED: usize = NUM_DEMOGRAPHICS + NUM_VITALS + NUM_SCORES + NUM_LABS;
pub const STATE_DIM: usize = NUM_OBSERVED + NUM_AUX;

pub const DEMOGRAPHIC_NAMES: [&str; NUM_DEMOGRAPHICS] = ["age", "gender", "weight"];
pub const VITAL_NAMES: [&str; NUM_VITALS] = ["hr", "sbp", "dbp", "map", "temp", "spo2", "rr"];
pub const SCORE_NAMES: [&str; NUM_SCORES] = ["sofa", "liver", "renal", "cns", "cardio"];
pub const LAB_NAMES: [&str; NUM_LABS] = [
    "anion_gap",
    "bicarbonate",
    "creatinine",
    "chloride",
    "glucose",
    "hematocrit",
    "hemoglobin",
    "platelet",
    "potassium",
    "sodium",
    "bun",
    "wbc",
];

/// Feature names in state-vector order.
pub fn feature_names() -> Vec<String> {
    DEMOGRAPHIC_NAMES
        .iter()
        .chain(&VITAL_NAMES)
        .chain(&SCORE_NAMES)
        .chain(&LAB_NAMES)
        .map(|s| s.to_string())
        .chain((0..NUM_AUX).map(|i| format!("aux_{i}")))
        .collect()
}

/// 24-hour organ scores. Subscores are 0..=4, SOFA is 0..=24.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct OrganScores {
    pub sofa: u8,
    pub liver: u8,
    pub renal: u8,
    pub cns: u8,
    pub cardio: u8,
}

impl OrganScores {
    pub fn new(sofa: u8, liver: u8, renal: u8, cns: u8, cardio: u8) -> Result<Self> {
        let s = Self {
            sofa,
            liver,
            renal,
            cns,
            cardio,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("liver", self.liver),
            ("renal", self.renal),
            ("cns", self.cns),
            ("cardio", self.cardio),
        ] {
            if v > 4 {
                return Err(Error::Config(format!("{name} subscore {v} outside 0..=4")));
            }
        }
        if self.sofa > 24 || self.sofa < self.max_subscore() {
            return Err(Error::Config(format!(
                "SOFA {} must lie in max subscore ({})..=24",
                self.sofa,
                self.max_subscore()
            )));
        }
        Ok(())
    }

    pub fn max_subscore(&self) -> u8 {
        self.liver.max(self.renal).max(self.cns).max(self.cardio)
    }

    /// SOFA restricted to the four carried organ systems.
    pub fn sofa4(&self) -> u8 {
        self.cardio + self.cns + self.liver + self.renal
    }

    /// Organ system with the highest subscore, ties going to
    /// Cardio, then CNS, then Liver, then Renal.
    pub fn worst_organ(&self) -> OrganLabel {
        worst_organ(self.cardio, self.cns, self.liver, self.renal)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OrganLabel {
    Cardio,
    Cns,
    Liver,
    Renal,
}

impl OrganLabel {
    pub const ALL: [OrganLabel; 4] = [OrganLabel::Cardio, OrganLabel::Cns, OrganLabel::Liver, OrganLabel::Renal];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            OrganLabel::Cardio => "cardio",
            OrganLabel::Cns => "cns",
            OrganLabel::Liver => "liver",
            OrganLabel::Renal => "renal",
        }
    }
}

impl fmt::Display for OrganLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Argmax of the four subscores with the fixed priority Cardio > CNS > Liver > Renal.
pub fn worst_organ(cardio: u8, cns: u8, liver: u8, renal: u8) -> OrganLabel {
    let mut best = (OrganLabel::Cardio, cardio);
    for (label, v) in [(OrganLabel::Cns, cns), (OrganLabel::Liver, liver), (OrganLabel::Renal, renal)] {
        if v > best.1 {
            best = (label, v);
        }
    }
    best.0
}

/// One hourly patient state: 27 observed values plus 14 auxiliary channels.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    /// Age (years), gender (0/1), weight (kg).
    pub demographics: [f64; NUM_DEMOGRAPHICS],
    /// HR, SBP, DBP, MAP, temperature, SpO2, respiratory rate.
    pub vitals: [f64; NUM_VITALS],
    pub scores: OrganScores,
    /// Labs in [`LAB_NAMES`] order.
    pub labs: [f64; NUM_LABS],
    /// 4 cardiovascular latent states followed by a 10-d lab-history representation.
    pub aux: [f64; NUM_AUX],
}

impl StateVector {
    pub fn features(&self) -> [f64; STATE_DIM] {
        let mut out = [0.0; STATE_DIM];
        self.write_features(&mut out);
        out
    }

    pub fn write_features(&self, out: &mut [f64]) {
        let s = &self.scores;
        let scores = [s.sofa, s.liver, s.renal, s.cns, s.cardio].map(f64::from);
        let parts: [&[f64]; 5] = [&self.demographics, &self.vitals, &scores, &self.labs, &self.aux];
        let mut k = 0;
        for p in parts {
            out[k..k + p.len()].copy_from_slice(p);
            k += p.len();
        }
    }

    pub fn worst_organ(&self) -> OrganLabel {
        self.scores.worst_organ()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Outcome {
    Death,
    Release,
}

impl Outcome {
    pub fn is_death(self) -> bool {
        self == Outcome::Death
    }

    pub fn opposite(self) -> Self {
        match self {
            Outcome::Death => Outcome::Release,
            Outcome::Release => Outcome::Death,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Outcome::Death => "DEATH",
            Outcome::Release => "RELEASE",
        }
    }
}

/// Vasopressor and fluid bins, each 0..=2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Default)]
pub struct ActionPair {
    pub vaso: u8,
    pub fluids: u8,
}

impl ActionPair {
    pub const COUNT: usize = 9;

    pub fn new(vaso: u8, fluids: u8) -> Result<Self> {
        if vaso > 2 || fluids > 2 {
            return Err(Error::Config(format!("action bins must be 0..=2, got ({vaso}, {fluids})")));
        }
        Ok(Self { vaso, fluids })
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index >= Self::COUNT {
            return Err(Error::Config(format!("action index {index} outside 0..9")));
        }
        Ok(Self {
            vaso: (index / 3) as u8,
            fluids: (index % 3) as u8,
        })
    }

    pub fn index(self) -> usize {
        3 * self.vaso as usize + self.fluids as usize
    }

    pub fn is_no_treatment(self) -> bool {
        self.index() == 0
    }
}

/// One ICU stay sampled hourly. The outcome belongs to the last state.
#[derive(Clone, Debug, PartialEq)]
pub struct PatientTrajectory {
    pub patient_id: u64,
    pub states: Vec<StateVector>,
    pub actions: Vec<ActionPair>,
    pub outcome: Outcome,
}

impl PatientTrajectory {
    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn terminal(&self) -> &StateVector {
        self.states.last().expect("trajectory has at least one state")
    }

    pub fn terminal_hour(&self) -> usize {
        self.states.len() - 1
    }

    /// Hours until the terminal state, 0 for the terminal state itself.
    pub fn hours_to_end(&self, hour: usize) -> usize {
        self.states.len() - 1 - hour
    }

    pub fn validate(&self) -> Result<()> {
        if self.states.is_empty() {
            return Err(Error::Config(format!("patient {} has no states", self.patient_id)));
        }
        if self.states.len() != self.actions.len() {
            return Err(Error::Config(format!(
                "patient {}: {} states but {} actions",
                self.patient_id,
                self.states.len(),
                self.actions.len()
            )));
        }
        for s in &self.states {
            s.scores.validate()?;
        }
        Ok(())
    }
}

/// An immutable collection of stays.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Cohort {
    pub patients: Vec<PatientTrajectory>,
}

impl Cohort {
    pub fn new(patients: Vec<PatientTrajectory>) -> Self {
        Self { patients }
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn num_states(&self) -> usize {
        self.patients.iter().map(|p| p.len()).sum()
    }

    pub fn count(&self, outcome: Outcome) -> usize {
        self.patients.iter().filter(|p| p.outcome == outcome).count()
    }

    pub fn has_both_outcomes(&self) -> bool {
        self.count(Outcome::Death) > 0 && self.count(Outcome::Release) > 0
    }

    pub fn subset(&self, indices: &[usize]) -> Cohort {
        Cohort::new(indices.iter().map(|&i| self.patients[i].clone()).collect())
    }
}
