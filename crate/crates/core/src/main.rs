fn main() {
    std::process::exit(atomlaser::cli::run(std::env::args_os()));
}
