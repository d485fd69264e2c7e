//! Patient trajectories, synthetic cohorts and CSV persistence.

mod csv;
mod generate;
mod split;
mod types;

pub use self::csv::{cohort_header, load_cohort_csv, read_cohort_csv, save_cohort_csv, write_cohort_csv};
pub(crate) use self::csv::write_cohort_csv_with;
pub use generate::{generate_cohort, generate_synthetic, CohortConfig, SyntheticCohort};
pub use split::{near_terminal_hours, near_terminal_states, split_cohort, split_indices};
pub use types::*;
