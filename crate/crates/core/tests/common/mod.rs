#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use tls13_core::crypto::HashAlg;

pub fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/data").join(name)
}

/// Non-comment lines of a vector file, split on whitespace.
pub fn vector_lines(name: &str) -> Vec<Vec<String>> {
    std::fs::read_to_string(data_path(name))
        .unwrap_or_else(|e| panic!("reading {name}: {e}"))
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| l.split_whitespace().map(str::to_owned).collect())
        .collect()
}

/// `-` is the empty byte string.
pub fn unhex(s: &str) -> Vec<u8> {
    if s == "-" {
        Vec::new()
    } else {
        hex::decode(s).unwrap_or_else(|e| panic!("bad hex {s}: {e}"))
    }
}

pub fn hash_alg(name: &str) -> HashAlg {
    HashAlg::from_name(name).unwrap_or_else(|| panic!("unknown hash {name}"))
}

pub fn key_schedule_vectors(alg: HashAlg) -> BTreeMap<String, Vec<u8>> {
    vector_lines(&format!("key_schedule_{}.txt", alg.name()))
        .into_iter()
        .map(|f| (f[0].clone(), unhex(&f[1])))
        .collect()
}

/// Stand-in messages whose running concatenation feeds the chain vectors.
pub const CHAIN_MESSAGES: [&[u8]; 7] = [
    b"client hello",
    b"server hello",
    b"encrypted extensions",
    b"certificate",
    b"certificate verify",
    b"server finished",
    b"client finished",
];
