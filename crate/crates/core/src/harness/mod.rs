//! Run configuration, artifact writers and the command-line front end.

pub mod cli;
pub mod config;
pub mod output;

pub use config::{parse_bias, RunConfig};
pub use output::{
    csv_string, parse_csv, render_svg, sha256_file, svg_string, write_csv, RunManifest,
};
pub use cli::{
    exit_code, EXIT_DIVERGENCE, EXIT_FORMAT, EXIT_INTERNAL, EXIT_IO, EXIT_OK, EXIT_USAGE,
};
