//! Acceptance suite: one PASS/FAIL line per criterion, then a single
//! assertion that every criterion passed.

mod support;

mod determinism;
mod fuzz;
mod handshake;
mod key_derivation;
mod lifecycle;
mod records;

use std::io::Write;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use support::Verdict;

type Check = fn() -> Verdict;

const CRITERIA: [(&str, Check); 12] = [
    ("hkdf-oracle", key_derivation::hkdf_oracle),
    ("key-schedule-chain", key_derivation::key_schedule_chain),
    ("full-handshake", handshake::full_handshake),
    ("hello-retry-transcript", handshake::hello_retry),
    ("psk-resumption", handshake::resumption),
    ("key-update", records::key_update),
    ("record-bounds", records::record_bounds),
    ("state-message-fuzz", fuzz::state_message_fuzz),
    ("extension-placement", fuzz::extension_placement),
    ("half-close", lifecycle::half_close),
    ("post-handshake-auth", lifecycle::post_handshake_auth),
    ("determinism", determinism::determinism),
];

#[test]
fn acceptance() {
    // Written straight to stdout so the lines show up without --nocapture.
    let mut out = std::io::stdout().lock();
    // cargo prints "test acceptance ... " without a newline first.
    writeln!(out).unwrap();
    let mut failed = Vec::new();
    for (i, (name, check)) in CRITERIA.iter().enumerate() {
        let started = Instant::now();
        let verdict = catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|p| {
                let msg = p
                    .downcast_ref::<String>()
                    .cloned()
                    .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                    .unwrap_or_default();
                Err(format!("panicked: {msg}"))
            });
        let ms = started.elapsed().as_millis();
        let line = match &verdict {
            Ok(detail) => format!("PASS {:>2} {name} ({ms} ms): {detail}", i + 1),
            Err(why) => {
                failed.push(*name);
                format!("FAIL {:>2} {name} ({ms} ms): {why}", i + 1)
            }
        };
        writeln!(out, "{line}").unwrap();
    }
    writeln!(out, "acceptance: {}/{} passed", CRITERIA.len() - failed.len(), CRITERIA.len()).unwrap();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
