fn main() {
    std::process::exit(collinear_nbody::cli::run(std::env::args_os()));
}
