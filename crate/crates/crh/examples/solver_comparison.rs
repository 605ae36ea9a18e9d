//! Exact Hungarian assignment versus the order-dependent greedy heuristic
//! on random cost matrices: the greedy total can never beat the optimum,
//! and the gap shrinks as matrices develop clear per-row minima.
//!
//! Run with: `cargo run --release --example solver_comparison`

use num_bigint::BigInt;
use num_rational::BigRational;
use num_traits::ToPrimitive;
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crh::assign::{greedy_assign, hungarian_assign, CostMatrix};

fn random_matrix(rows: usize, cols: usize, spread: i64, rng: &mut ChaCha8Rng) -> CostMatrix {
    let entries = (0..rows * cols)
        .map(|_| BigRational::from(BigInt::from(rng.random_range(0..spread))))
        .collect();
    CostMatrix::from_entries(entries, rows, cols).unwrap()
}

fn main() -> crh::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for (rows, cols, spread) in [(8usize, 12usize, 100i64), (16, 32, 100), (16, 32, 4)] {
        let trials = 200;
        let mut optimal_total = 0.0;
        let mut greedy_total = 0.0;
        let mut ties = 0;
        for _ in 0..trials {
            let cost = random_matrix(rows, cols, spread, &mut rng);
            let (_, optimal) = hungarian_assign(&cost)?;
            let mut order: Vec<usize> = (0..rows).collect();
            order.shuffle(&mut rng);
            let (_, greedy) = greedy_assign(&cost, &order)?;
            assert!(greedy >= optimal);
            if greedy == optimal {
                ties += 1;
            }
            optimal_total += optimal.to_f64().unwrap();
            greedy_total += greedy.to_f64().unwrap();
        }
        println!(
            "{rows:2}x{cols:2} entries in [0,{spread:3}): mean optimal {:8.2}, mean greedy {:8.2}, greedy matched optimum in {ties}/{trials}",
            optimal_total / trials as f64,
            greedy_total / trials as f64,
        );
    }
    Ok(())
}
