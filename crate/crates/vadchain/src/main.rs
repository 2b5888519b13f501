fn main() -> std::process::ExitCode {
    vadchain::cli::main()
}
