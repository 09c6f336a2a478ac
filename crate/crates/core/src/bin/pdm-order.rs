fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(pdm_order::cli::dispatch(&argv));
}
