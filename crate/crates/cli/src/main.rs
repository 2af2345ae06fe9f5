use clap::Parser;

fn main() -> anyhow::Result<()> {
    pimatch_cli::run(pimatch_cli::Cli::parse())
}
