fn main() {
    std::process::exit(arfa::bench::cli::cli_main(std::env::args_os()));
}
