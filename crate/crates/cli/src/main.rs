fn main() {
    std::process::exit(fewshot_cli::run(std::env::args_os()));
}
