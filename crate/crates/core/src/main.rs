fn main() {
    std::process::exit(peginsert::cli::run(std::env::args_os()));
}
