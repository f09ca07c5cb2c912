fn main() {
    std::process::exit(odedbn::cli::main_with(std::env::args_os()));
}
