//! Command-line front end for `qassa-core`: instance generation, selection,
//! benchmark sweeps with reports, the distributed simulator and fault-driven
//! adaptation.

pub mod adapt;
pub mod args;
pub mod bench;
pub mod commands;
pub mod error;
pub mod source;

use args::{Cli, Command};
use error::Result;

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Generate(a) => commands::generate_cmd(a),
        Command::Select(a) => commands::select_cmd(a),
        Command::Bench(a) => bench::bench_cmd(a),
        Command::Distsim(a) => commands::distsim_cmd(a),
        Command::Adapt(a) => adapt::adapt_cmd(a),
        Command::Report(a) => bench::report_cmd(&a.input),
        Command::SynthQws(a) => commands::synth_cmd(a),
    }
}
