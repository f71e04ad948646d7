//! Regenerates `tests/fixtures/e2e` from the scripted model.
//!
//!     cargo run -p guide-cli --example record_fixture

#[path = "../tests/support/e2e.rs"]
mod e2e;

fn main() {
    let dir = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/e2e");
    if dir.exists() {
        std::fs::remove_dir_all(&dir).expect("clear old fixture");
    }
    std::fs::create_dir_all(&dir).expect("create fixture dir");
    e2e::record(&dir);
    println!("recorded fixture in {}", dir.display());
}
