//! Acceptance checks live in `tests/acceptance.rs`; run them with
//! `cargo test -p flic-acceptance --test acceptance`.
