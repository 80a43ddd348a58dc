fn main() {
    std::process::exit(fairprobe::cli::main_with_args(std::env::args_os()));
}
