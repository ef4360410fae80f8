fn main() {
    std::process::exit(ssm_pnc::cli::run(std::env::args_os()));
}
