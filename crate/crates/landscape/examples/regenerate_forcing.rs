//! Rewrites the bundled forcing fixture from its generator.

use landscape::forcing::{Forcing, FIXTURE_DAYS, FIXTURE_SEED};

fn main() -> std::io::Result<()> {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures/forcing.csv");
    std::fs::write(path, Forcing::synthetic(FIXTURE_SEED, FIXTURE_DAYS).to_csv())
}
