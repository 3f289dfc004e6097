fn main() {
    if let Err(e) = fewshot_cli::execute(std::env::args_os()) {
        eprintln!("fewshot: {e}");
        std::process::exit(e.exit_code());
    }
}
