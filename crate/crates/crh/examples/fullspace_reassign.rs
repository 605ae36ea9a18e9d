//! Full-space reassignment demo: when the candidate pool is the whole
//! 2^K space, each class takes the sign of its weighted code sum; colliding
//! classes fall back to the nearest still-unassigned code, found by
//! expanding-radius search without materializing the space.
//!
//! Run with: `cargo run --release --example fullspace_reassign`

use crh::assign::fullspace_reassign;
use crh::code::{hamming_distance, BinaryCode};
use crh::data::LabelMask;

fn main() -> crh::Result<()> {
    let k = 24;
    let classes = 6;

    // Classes 0 and 1 share the same aggregate code; the rest are distinct.
    let shared = BinaryCode::from_value(0b1010_1100_1010_1100_1010_1100, k);
    let mut codes = Vec::new();
    let mut labels = Vec::new();
    for c in 0..classes {
        let base = if c <= 1 {
            shared.clone()
        } else {
            BinaryCode::from_value(0x5A5A5A ^ (0x111111 * c as u64), k)
        };
        for i in 0..5 {
            // one perturbed sample per class so the vote is clearly decided
            let code = if i == 0 {
                base.with_flipped(&[c])
            } else {
                base.clone()
            };
            codes.push(code);
            labels.push(LabelMask::from_classes(classes, &[c])?);
        }
    }

    let order: Vec<usize> = (0..classes).collect();
    let centers = fullspace_reassign(&codes, &labels, classes, &order)?;
    println!("class centers (bit 0 first):");
    for (c, center) in centers.iter().enumerate() {
        println!(
            "  class {c}: {}  (distance to class-0 center: {})",
            center.to_bit_string(),
            hamming_distance(center, &centers[0])?
        );
    }
    println!(
        "\nclasses 0 and 1 voted for the same code; the later one was pushed to an \
         unassigned neighbor at Hamming distance {}",
        hamming_distance(&centers[0], &centers[1])?
    );
    Ok(())
}
