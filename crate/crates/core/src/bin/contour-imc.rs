fn main() {
    std::process::exit(contour_imc::cli::main_with_args(std::env::args_os()));
}
