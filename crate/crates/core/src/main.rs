fn main() -> std::process::ExitCode {
    melodi::cli::main()
}
