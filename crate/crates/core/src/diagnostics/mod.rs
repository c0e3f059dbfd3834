//! Rollouts and statistical diagnostics of solver and emulator output.

mod ensemble;
mod jets;
mod lyapunov;
mod pdf;
mod report;
mod rollout;
mod spectra;

pub use ensemble::{
    event_time_pdf, permutation_threshold, BetaSolverEnsemble, EmulatorEnsemble, EnsembleSource, EventTimeHistogram,
};
pub use jets::{count_jets, detect_events, jet_counts, EventKind, EventRecord, DEFAULT_DEBOUNCE, DEFAULT_PROMINENCE};
pub use lyapunov::{lyapunov_exponent, tracking_horizon, LyapunovOptions};
pub use pdf::{derivative_samples, hellinger, joint_pdf, Binning, Histogram3D};
pub use report::{write_csv_rows, Summary};
pub use rollout::{rollout, rollout_ensemble, RolloutOptions, DEFAULT_CAP};
pub use spectra::zonal_psd;
