#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mmselect::bench::{generate, BenchConfig};
use mmselect::store::{write_embeddings, write_manifest};

pub fn mmselect() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_mmselect"));
    cmd.env("MMSELECT_THREADS", "1");
    cmd
}

pub fn run(args: &[&str]) -> Output {
    mmselect().args(args).output().expect("binary runs")
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().expect("utf-8 temp path")
}

/// Pool and validation files generated from a scaled-down bench config.
pub struct Fixture {
    pub dir: tempfile::TempDir,
    pub train_emb: PathBuf,
    pub train_manifest: PathBuf,
    pub val_emb: PathBuf,
    pub val_manifest: PathBuf,
}

pub fn small_config() -> BenchConfig {
    let mut config = BenchConfig::default_three_cluster();
    config.pool_size = 300;
    config.validation_size = 15;
    config.test_size = 60;
    config.k = 40;
    config
}

pub fn fixture(seed: u64) -> Fixture {
    fixture_from(&small_config(), seed)
}

pub fn fixture_from(config: &BenchConfig, seed: u64) -> Fixture {
    let dir = tempfile::tempdir().unwrap();
    let data = generate(config, seed);
    let f = Fixture {
        train_emb: dir.path().join("train.emb"),
        train_manifest: dir.path().join("train.jsonl"),
        val_emb: dir.path().join("val.emb"),
        val_manifest: dir.path().join("val.jsonl"),
        dir,
    };
    write_embeddings(&data.pool.matrix, &f.train_emb).unwrap();
    write_manifest(&data.pool.manifest, &f.train_manifest).unwrap();
    write_embeddings(&data.validation.matrix, &f.val_emb).unwrap();
    write_manifest(&data.validation.manifest.without_labels(), &f.val_manifest).unwrap();
    f
}

impl Fixture {
    pub fn out(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    pub fn pool_args(&self, method: &str) -> Vec<String> {
        [
            "--train-emb",
            path_str(&self.train_emb),
            "--train-manifest",
            path_str(&self.train_manifest),
            "--val-emb",
            path_str(&self.val_emb),
            "--method",
            method,
        ]
        .iter()
        .map(|s| s.to_string())
        .collect()
    }
}
