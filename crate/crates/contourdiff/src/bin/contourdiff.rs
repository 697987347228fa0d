//! Binary entry point; all logic lives in the library's `cli` module.

fn main() {
    std::process::exit(contourdiff::cli::main_with_args(std::env::args_os()));
}
