//! The whole-image open-loop pass, fed the codec's own reconstructions and
//! rounding instead of noise, reproduces the codec block for block.

mod common;

use common::equivalence::{max_deviation, TOL};
use common::{lively, model};

#[test]
fn three_by_two_blocks() {
    let dev = max_deviation(&lively(model(8, 16, 4, 1, 1)), 16, 24, 2).unwrap();
    assert!(dev <= TOL, "{dev}");
}

#[test]
fn wider_entropy_context() {
    let dev = max_deviation(&lively(model(4, 16, 4, 3, 3)), 8, 12, 4).unwrap();
    assert!(dev <= TOL, "{dev}");
}

#[test]
fn padded_image() {
    let dev = max_deviation(&lively(model(4, 8, 3, 3, 5)), 10, 13, 6).unwrap();
    assert!(dev <= TOL, "{dev}");
}
