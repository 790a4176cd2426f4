fn main() {
    std::process::exit(ctxoie_cli::dispatch(std::env::args_os()));
}
