fn main() -> std::process::ExitCode {
    mbde::cli::main()
}
