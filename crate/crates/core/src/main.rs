fn main() {
    std::process::exit(steadipose::cli::cli_main(std::env::args_os()));
}
