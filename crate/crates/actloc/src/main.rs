fn main() {
    std::process::exit(actloc::run_command(std::env::args_os()));
}
