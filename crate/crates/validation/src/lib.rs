//! Acceptance suite for `tdpaf`; the criteria live in `tests/acceptance.rs`.
//!
//! Run with `cargo test -p tdpaf-validation`. Each criterion prints a
//! `criterion N: PASS|FAIL` line with the measured values.
