fn main() {
    std::process::exit(rollout_mpc::cli::dispatch(std::env::args_os()));
}
