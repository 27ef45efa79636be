use std::path::PathBuf;

use rfim_lab::config::ExperimentConfig;

fn cookbook() -> Vec<PathBuf> {
    let dir = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let mut files: Vec<PathBuf> = std::fs::read_dir(&dir)
        .expect("configs directory")
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|x| x == "toml"))
        .collect();
    files.sort();
    files
}

#[test]
fn every_cookbook_config_validates() {
    let files = cookbook();
    assert_eq!(files.len(), 9);
    for f in files {
        let c = ExperimentConfig::from_path(&f).unwrap_or_else(|e| panic!("{}: {e}", f.display()));
        c.validate().unwrap_or_else(|e| panic!("{}: {e}", f.display()));
    }
}

#[test]
fn cookbook_covers_every_kind() {
    let mut kinds: Vec<&str> = cookbook().iter().map(|f| ExperimentConfig::from_path(f).unwrap().kind.name()).collect();
    kinds.sort();
    kinds.dedup();
    assert_eq!(kinds.len(), 9);
}
