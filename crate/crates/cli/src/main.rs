use clap::Parser;

fn main() {
    let cli = manifold_sde_cli::Cli::parse();
    std::process::exit(manifold_sde_cli::run(cli));
}
