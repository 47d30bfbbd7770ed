//! Regenerates the committed kinship-scale benchmark fixture under
//! `data/kinship/`. The output is deterministic; rerunning must be a no-op
//! unless the generator itself changed.

use kgc_core::data::synth::{write_to, SynthSpec};
use std::path::Path;

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/kinship");
    std::fs::create_dir_all(&dir).expect("create fixture dir");
    write_to(&SynthSpec::kinship(), &dir).expect("write fixture");
    println!("wrote {}", dir.display());
}
