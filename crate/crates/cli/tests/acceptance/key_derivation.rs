use std::collections::BTreeMap;
use std::time::{Duration, Instant};

use tls13_core::crypto::{AeadAlg, HashAlg};
use tls13_core::hkdf::Hkdf;
use tls13_core::key_schedule::secret_table;

use crate::support::*;

const CHAIN_MESSAGES: [&[u8]; 7] = [
    b"client hello",
    b"server hello",
    b"encrypted extensions",
    b"certificate",
    b"certificate verify",
    b"server finished",
    b"client finished",
];

pub fn hkdf_oracle() -> Verdict {
    let started = Instant::now();
    let p = provider();
    let mut per_hash: BTreeMap<String, usize> = BTreeMap::new();
    let mut per_op: BTreeMap<(String, String), usize> = BTreeMap::new();
    for f in vector_lines("hkdf_vectors.txt") {
        let hkdf = Hkdf::new(p.as_ref(), hash_alg(&f[1]));
        let label = |s: &str| s.replace('_', " ");
        let (got, want) = match f[0].as_str() {
            "extract" => {
                let salt = (f[2] != "null").then(|| unhex(&f[2]));
                (hkdf.extract(salt.as_deref(), &unhex(&f[3])), &f[4])
            }
            "expand" => (
                hkdf.expand(&unhex(&f[2]), &unhex(&f[3]), f[4].parse().unwrap())
                    .ctx("expand")?,
                &f[5],
            ),
            "expand_label" => (
                hkdf.expand_label(&unhex(&f[2]), &label(&f[3]), &unhex(&f[4]), f[5].parse().unwrap())
                    .ctx("expand_label")?,
                &f[6],
            ),
            "derive_secret" => {
                let th = p.hash(hkdf.hash_alg(), &unhex(&f[4]));
                (hkdf.derive_secret(&unhex(&f[2]), &label(&f[3]), &th), &f[5])
            }
            op => return Err(format!("unknown oracle op {op}")),
        };
        ensure!(got.to_hex() == *want, "{} {} mismatch: {f:?}", f[0], f[1]);
        *per_hash.entry(f[1].clone()).or_default() += 1;
        *per_op.entry((f[0].clone(), f[1].clone())).or_default() += 1;
    }
    for alg in ["sha256", "sha384"] {
        for op in ["extract", "expand", "expand_label", "derive_secret"] {
            let n = per_op.get(&(op.to_string(), alg.to_string())).copied().unwrap_or(0);
            ensure!(n >= 20, "only {n} {op} vectors for {alg}");
        }
    }
    let elapsed = started.elapsed();
    ensure!(elapsed < Duration::from_secs(5), "took {elapsed:?}, limit 5 s");
    Ok(format!(
        "{} bit-exact ({})",
        per_hash.values().sum::<usize>(),
        per_hash
            .iter()
            .map(|(h, n)| format!("{h}: {n}"))
            .collect::<Vec<_>>()
            .join(", ")
    ))
}

pub fn key_schedule_chain() -> Verdict {
    let messages: [Vec<u8>; 7] = CHAIN_MESSAGES.map(|m| m.to_vec());
    let mut total = 0;
    for (alg, aead) in [
        (HashAlg::Sha256, AeadAlg::Aes128Gcm),
        (HashAlg::Sha384, AeadAlg::Aes256Gcm),
    ] {
        let want = chain_vectors(alg);
        let got = secret_table(
            provider(),
            alg,
            &aead.descriptor(),
            None,
            Some(&[0u8; 32]),
            &messages,
            &[0],
        )
        .ctx("secret table")?;
        ensure!(
            got.len() == want.len(),
            "{}: {} values derived, oracle has {}",
            alg.name(),
            got.len(),
            want.len()
        );
        for ((name, value), (oname, ovalue)) in got.iter().zip(&want) {
            ensure!(name == oname, "{}: order differs at {name} / {oname}", alg.name());
            ensure!(
                value == ovalue,
                "{} {name}: got {} want {}",
                alg.name(),
                hex::encode(value),
                hex::encode(ovalue)
            );
        }
        total += got.len();
    }
    Ok(format!("{total} values match the oracle chain (sha256, sha384)"))
}
