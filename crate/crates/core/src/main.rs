fn main() {
    std::process::exit(irs_doa::harness::cli::cli_main(std::env::args_os()));
}
