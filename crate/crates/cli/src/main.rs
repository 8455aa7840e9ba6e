fn main() {
    std::process::exit(cumff_cli::run_command(std::env::args_os()));
}
