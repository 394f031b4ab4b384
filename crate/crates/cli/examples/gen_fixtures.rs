//! Regenerates the shipped synthetic targets under `fixtures/`.
//!
//! Run from the repository root:
//! `cargo run -p steepsplat-cli --example gen_fixtures`

use std::fs;
use std::path::Path;

use steepsplat::fixtures::synthetic_target;

fn main() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures");
    fs::create_dir_all(&dir).expect("create fixtures dir");
    for (kind, seed) in [("blobs", 11u64), ("blooms", 57), ("sparks", 37)] {
        let image = synthetic_target(kind, seed);
        let path = dir.join(format!("{kind}.ppm"));
        let mut bytes = Vec::new();
        image.write_ppm(&mut bytes).expect("encode ppm");
        fs::write(&path, &bytes).expect("write ppm");
        println!("wrote {}", path.display());
    }
}
