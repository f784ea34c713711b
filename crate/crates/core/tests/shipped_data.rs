use std::path::PathBuf;

use tegru::synthetic::{shipped_splits, SHIPPED_SPLITS};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/synthetic")
}

// Set TEGRU_REGENERATE=1 to rewrite the files from the generator.
#[test]
fn shipped_corpus_matches_generator() {
    let splits = shipped_splits();
    let dir = data_dir();
    for (name, (text, n)) in ["train", "valid", "test"].iter().zip(splits.iter().zip(SHIPPED_SPLITS)) {
        let path = dir.join(format!("{name}.tsv"));
        if std::env::var_os("TEGRU_REGENERATE").is_some() {
            std::fs::write(&path, text).unwrap();
        }
        let on_disk = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        assert_eq!(on_disk.lines().count(), n, "{name}");
        assert!(on_disk == *text, "{name}.tsv differs from the seeded generator");
    }
}
