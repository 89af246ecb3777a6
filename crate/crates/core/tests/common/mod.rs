#![allow(dead_code)]

use std::path::{Path, PathBuf};

use coeffcrypt::codec::{decode_jpeg, CoeffImage};

pub fn data_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/data")
}

fn collect(dir: &Path, out: &mut Vec<PathBuf>) {
    for e in std::fs::read_dir(dir).unwrap() {
        let p = e.unwrap().path();
        if p.is_dir() {
            collect(&p, out);
        } else if p.extension().is_some_and(|x| x == "jpg") {
            out.push(p);
        }
    }
}

/// Every fixture JPEG, sorted.
pub fn corpus() -> Vec<PathBuf> {
    let mut out = Vec::new();
    collect(&data_dir(), &mut out);
    out.sort();
    out
}

/// The 20 desk images.
pub fn desk() -> Vec<PathBuf> {
    let mut out = Vec::new();
    collect(&data_dir().join("desk"), &mut out);
    out.sort();
    out
}

/// The labeled toy corpus as (category, path).
pub fn toy() -> Vec<(String, PathBuf)> {
    let mut out = Vec::new();
    collect(&data_dir().join("toy"), &mut out);
    out.sort();
    out.into_iter()
        .map(|p| (p.parent().unwrap().file_name().unwrap().to_string_lossy().into_owned(), p))
        .collect()
}

pub fn load(path: &Path) -> CoeffImage {
    decode_jpeg(&std::fs::read(path).unwrap()).unwrap()
}

pub fn pixels(bytes: &[u8]) -> Vec<u8> {
    jpeg_decoder::Decoder::new(bytes).decode().expect("reference decoder accepts the file")
}
