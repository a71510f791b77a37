//! Command-line front end: problem files, subcommands and JSON/CSV reports.

pub mod commands;
pub mod pipeline;
pub mod problem;
pub mod report;

pub use commands::{execute, run, Cli, Command, Exit};
pub use pipeline::{run_example51_pipeline, Overrides, Settings};
pub use problem::{parse_problem, parse_problem_str, Problem, ProblemError, ProblemFile};
pub use report::RunReport;
