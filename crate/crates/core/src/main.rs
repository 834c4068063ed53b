fn main() {
    std::process::exit(sepbias::cli::run(std::env::args_os()));
}
