//! Ladder laws on three levels in two dimensions. Building the third level
//! searches for 4600-bit primes and takes minutes, so the test is ignored by
//! default: `cargo test --release -- --ignored`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use superpose::arith::q;
use superpose::inner::{verify_ladder, Ladder, LadderConfig};

#[test]
#[ignore = "slow: builds 4600-bit primes"]
fn ladder_laws_n2_three_levels() {
    let n = 2;
    let ladder = Ladder::new(LadderConfig { max_level: 3, ..LadderConfig::default_for(n) }).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    const SCALE: i64 = 1 << 24;
    let r = ladder.config().radius;
    let samples: Vec<Vec<_>> = (0..60)
        .map(|_| (0..n).map(|_| q(rng.gen_range(-r * SCALE..=r * SCALE), SCALE)).collect())
        .collect();
    let rep = verify_ladder(&ladder, 3, &samples).unwrap();
    for c in &rep.checks {
        assert!(c.passed, "{}: {:?}", c.name, c.witness);
    }
    // Strict sandwich on triples ℓ = 1 < j = 2 < k = 3 with x ∈ K_1.
    let (e2, e3) = (ladder.level(2).unwrap().epsilon().clone(), ladder.level(3).unwrap().epsilon().clone());
    for _ in 0..100 {
        let x: Vec<_> = (0..n).map(|_| q(rng.gen_range(-SCALE..=SCALE), SCALE)).collect();
        let i = rng.gen_range(0..ladder.families());
        let f2 = ladder.eval_ladder(i, 2, &x).unwrap();
        let f3 = ladder.eval_ladder(i, 3, &x).unwrap();
        assert!(f2 < f3 && f3 < &f2 + &e2 - &e3);
    }
}
