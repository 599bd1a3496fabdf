fn main() -> std::process::ExitCode {
    lrorder::cli::main()
}
