fn main() {
    if let Err(e) = annotrack::cli::run() {
        eprintln!("error: {e}");
        std::process::exit(1);
    }
}
