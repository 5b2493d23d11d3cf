fn main() {
    let argv: Vec<String> = std::env::args().collect();
    std::process::exit(l2i_cli::cli_main(&argv));
}
