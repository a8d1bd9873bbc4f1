// SPDX-License-Identifier: MIT OR Apache-2.0

fn main() {
    std::process::exit(ts_lens::cli::main_with_args(std::env::args_os()));
}
