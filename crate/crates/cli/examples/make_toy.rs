//! Writes the bundled toy model: `cargo run --example make_toy -- data/toy.dcnw`

#[path = "../tests/support/synth.rs"]
mod synth;

fn main() {
    let path = std::env::args().nth(1).unwrap_or_else(|| "data/toy.dcnw".into());
    deepcabac::ingest::save(&path, &synth::toy(2024)).expect("write toy model");
    println!("wrote {path}");
}
