fn main() -> std::process::ExitCode {
    cookie_monster_sim::cli::main_with_args(std::env::args_os())
}
