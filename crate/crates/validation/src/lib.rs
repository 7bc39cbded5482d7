//! Test-only crate; the checks live under `tests/`.
