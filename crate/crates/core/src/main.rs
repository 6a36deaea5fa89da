fn main() {
    std::process::exit(seqoff::cli::run(std::env::args_os()));
}
