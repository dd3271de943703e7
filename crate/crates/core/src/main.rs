fn main() {
    let code = outlier_audit::cli::run(std::env::args_os(), &mut std::io::stdout().lock());
    std::process::exit(code);
}
