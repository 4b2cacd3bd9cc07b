fn main() {
    let args: Vec<String> = std::env::args().collect();
    std::process::exit(sosd::io::cli::cli_run(&args));
}
