// Properties of the min-max performance score. Shared between the core
// integration tests and the acceptance runner.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use verba_arm_core::stats::{performance_scores, StatsError};

pub fn reference_vector() -> Result<(), String> {
    let s = performance_scores(&[60.0, 90.0, 120.0]).map_err(|e| e.to_string())?;
    if s != vec![1.0, 0.5, 0.0] {
        return Err(format!("[60, 90, 120] scored {s:?}"));
    }
    Ok(())
}

fn random_times(rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n = rng.gen_range(2..30);
    loop {
        let t: Vec<f64> = (0..n).map(|_| rng.gen_range(5.0..900.0)).collect();
        if t.iter().any(|x| *x != t[0]) {
            return t;
        }
    }
}

/// Scores are unchanged by `t ↦ αt + β` with α > 0 (keeping times positive).
pub fn affine_invariance(trials: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(97);
    for _ in 0..trials {
        let t = random_times(&mut rng);
        let alpha = rng.gen_range(0.01..100.0);
        let beta = rng.gen_range(0.0..1000.0);
        let u: Vec<f64> = t.iter().map(|x| alpha * x + beta).collect();
        let s = performance_scores(&t).map_err(|e| e.to_string())?;
        let r = performance_scores(&u).map_err(|e| e.to_string())?;
        for (a, b) in s.iter().zip(&r) {
            if (a - b).abs() > 1e-9 {
                return Err(format!("affine map changed a score: {a} vs {b}"));
            }
        }
    }
    Ok(())
}

/// Slower sessions never score higher, extremes map to 1 and 0, and every
/// score lies in [0, 1].
pub fn anti_monotone(trials: usize) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    for _ in 0..trials {
        let t = random_times(&mut rng);
        let s = performance_scores(&t).map_err(|e| e.to_string())?;
        for i in 0..t.len() {
            if !(0.0..=1.0).contains(&s[i]) {
                return Err(format!("score {} out of range", s[i]));
            }
            for j in 0..t.len() {
                if t[i] < t[j] && s[i] < s[j] {
                    return Err(format!("t {} < {} but score {} < {}", t[i], t[j], s[i], s[j]));
                }
            }
        }
        let fastest = t.iter().copied().fold(f64::INFINITY, f64::min);
        let slowest = t.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        for (ti, si) in t.iter().zip(&s) {
            if (*ti == fastest && *si != 1.0) || (*ti == slowest && *si != 0.0) {
                return Err(format!("extreme time {ti} scored {si}"));
            }
        }
    }
    Ok(())
}

pub fn degenerate_range() -> Result<(), String> {
    for t in [vec![42.0, 42.0], vec![7.5; 10]] {
        match performance_scores(&t) {
            Err(StatsError::DegenerateRange) => {}
            other => return Err(format!("{t:?} gave {other:?}")),
        }
    }
    Ok(())
}
