//! The memory network against a deliberately naive dense reimplementation.

mod common;

#[test]
fn forward_passes_match_the_naive_oracle() {
    let (worst, cases) = common::oracle_sweep(2024);
    assert_eq!(cases, 4 * 3 * 4 * 3 * 100);
    assert!(worst < common::ORACLE_TOL, "max abs difference {worst:e}");
}
