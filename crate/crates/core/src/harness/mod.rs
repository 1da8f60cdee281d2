//! Configuration, persistence and the scripted experiments behind the CLI.

mod config;
mod experiments;
mod plot;
mod trace;

pub use config::{ExperimentConfig, KNOWN_KEYS};
pub use experiments::{
    check_fig1, check_fig2, fig1_config, fig2_config, fig2_scaled_config, hardness_report, relative_series, run_figure,
    run_separation, separation_train_config, teacher_energies, BaselineRow, Check, FigureRun, HardnessReport, SeparationReport,
};
pub use plot::{render_loss_plot, render_loss_svg};
pub use trace::{read_ensemble, read_trace, write_ensemble, write_trace, TRACE_HEADER};
