//! Command-line front end: `run`, `verify` and `describe`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod args;
pub mod commands;

pub use args::{parse_args, CliError, CliInvocation, RunPlan, RunSource};
pub use commands::{execute, manifest_path, read_manifest, Manifest};

/// Parses and executes `argv`, returning the exit code.
pub fn main_with_args<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let mut stdout = std::io::stdout();
    let mut stderr = std::io::stderr();
    match parse_args(argv) {
        Ok(inv) => execute(inv, &mut stdout, &mut stderr),
        Err(CliError::Help(text)) => {
            print!("{text}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            eprintln!("run `rs-engine --help` for usage");
            e.exit_code()
        }
    }
}
