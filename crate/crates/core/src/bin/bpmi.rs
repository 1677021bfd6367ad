fn main() {
    std::process::exit(bpmi_core::cli::run(std::env::args_os()));
}
