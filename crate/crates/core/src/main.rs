fn main() {
    std::process::exit(jsma::cli::cli_main(std::env::args_os()));
}
