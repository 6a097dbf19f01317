fn main() {
    std::process::exit(segpref::cli::main_with(std::env::args_os()));
}
