use diffsketch::hashing::{derive_row_seeds, index_hash, sign_hash, splitmix_word};

fn seeds(trials: u64, salt: u64) -> impl Iterator<Item = u64> {
    (0..trials).map(move |c| splitmix_word(salt, c))
}

#[test]
fn index_hash_chi_square_k16() {
    // df = 15, upper 0.001 critical value
    const CRITICAL: f64 = 37.697;
    for master in [0u64, 1, 0x9E37_79B9_7F4A_7C15, 12345] {
        let (idx, _) = derive_row_seeds(master, 0);
        let k = 16;
        let mut counts = [0u64; 16];
        let total = 100_000u64;
        for i in 0..total {
            counts[index_hash(&idx, i, k).unwrap()] += 1;
        }
        let expected = total as f64 / k as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        assert!(chi2 < CRITICAL, "seed {master}: chi2 = {chi2}");
    }
}

#[test]
fn pairwise_collision_rate() {
    let k = 16;
    let trials = 200_000u64;
    let p = 1.0 / k as f64;
    let sd = (p * (1.0 - p) / trials as f64).sqrt();
    for &(i, j) in &[(0u64, 1u64), (3, 1_000_003), (17, 18), (1 << 20, 7)] {
        let hits = seeds(trials, i ^ (j << 1))
            .filter(|&m| {
                let (idx, _) = derive_row_seeds(m, 0);
                index_hash(&idx, i, k).unwrap() == index_hash(&idx, j, k).unwrap()
            })
            .count();
        let rate = hits as f64 / trials as f64;
        assert!((rate - p).abs() < 3.0 * sd, "({i},{j}): {rate} vs {p}");
    }
}

#[test]
fn sign_products_uncorrelated() {
    let trials = 200_000u64;
    let sd = 1.0 / (trials as f64).sqrt();
    for &(i, j) in &[(0u64, 1u64), (5, 9), (1000, 1), (42, 1 << 33)] {
        let sum: i64 = seeds(trials, 99 + i + j)
            .map(|m| {
                let (_, sgn) = derive_row_seeds(m, 2);
                i64::from(sign_hash(&sgn, i) * sign_hash(&sgn, j))
            })
            .sum();
        let mean = sum as f64 / trials as f64;
        assert!(mean.abs() < 3.0 * sd, "({i},{j}): {mean}");
    }
}

#[test]
fn sign_mean_over_million_seeds() {
    for i in [0u64, 5, 123_456] {
        let sum: i64 = seeds(1_000_000, 0xABCD + i)
            .map(|m| i64::from(sign_hash(&derive_row_seeds(m, 0).1, i)))
            .sum();
        let mean = sum as f64 / 1e6;
        assert!(mean.abs() <= 0.005, "i={i}: {mean}");
    }
}

#[test]
fn rows_get_distinct_seeds() {
    for master in [0u64, 7, u64::MAX] {
        let rows: Vec<_> = (0..32).map(|j| derive_row_seeds(master, j)).collect();
        for a in 0..rows.len() {
            assert!(rows[a].0.a() % 2 == 1 && rows[a].1.a() % 2 == 1);
            for b in a + 1..rows.len() {
                assert_ne!(rows[a], rows[b]);
            }
        }
    }
}
