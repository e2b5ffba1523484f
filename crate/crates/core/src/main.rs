fn main() {
    std::process::exit(dagmarl::harness::run_cli(std::env::args_os()));
}
