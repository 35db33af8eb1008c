fn main() -> std::process::ExitCode {
    depth_integrator::cli::main()
}
