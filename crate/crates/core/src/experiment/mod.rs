//! Configuration files, checkpoints, run records, sweeps, gradient checks and
//! the command implementations behind the CLI.

pub mod checkpoint;
pub mod commands;
pub mod config;
pub mod gradcheck;
pub mod records;
pub mod run;
pub mod sweep;

pub use checkpoint::{decode, encode, load_checkpoint, save_checkpoint, save_params, Checkpoint, Header, LoadScope, TensorEntry, MAGIC, VERSION};
pub use commands::{
    cmd_count_params, cmd_eval, cmd_gradcheck, cmd_sweep, cmd_train, format_gradcheck, format_param_report, load_config,
    Overrides, TrainArtifacts, CHECKPOINT_FILE, LOG_FILE, PARAMS_FILE, REPORT_FILE,
};
pub use config::{DataConfig, ExperimentConfig};
pub use gradcheck::{gradcheck, relative_error, tiny_config, GradcheckReport, GroupCheck};
pub use records::{read_records, sweep_table, write_records, Record, SweepRow};
pub use run::{run_experiment, Run};
pub use sweep::{depth_thirds, run_sweep, sweep_cells, SweepCell, SweepKind};
