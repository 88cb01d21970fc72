fn main() -> std::process::ExitCode {
    symfield::cli::main()
}
