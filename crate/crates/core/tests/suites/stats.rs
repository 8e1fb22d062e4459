// Statistical oracle checks. Shared between the core integration tests and
// the acceptance runner.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::Deserialize;
use verba_arm_core::stats::{ad_normality, paired_t};

const PAIRED_T_FIXTURE: &str = include_str!("../fixtures/paired_t.json");

#[derive(Deserialize)]
struct Fixture {
    cases: Vec<Case>,
}

#[derive(Deserialize)]
struct Case {
    a: Vec<f64>,
    b: Vec<f64>,
    t: f64,
    p: f64,
    df: f64,
}

/// Fraction of seeded normal samples of size `n` rejected at the 5% level.
pub fn ad_type_one_rate(trials: usize, n: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut rejected = 0;
    for _ in 0..trials {
        let mean = rng.gen_range(-50.0..50.0);
        let sd = rng.gen_range(0.1..20.0);
        let dist = Normal::new(mean, sd).map_err(|e| e.to_string())?;
        let sample: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        if ad_normality(&sample).map_err(|e| e.to_string())?.reject {
            rejected += 1;
        }
    }
    Ok(rejected as f64 / trials as f64)
}

/// Fraction of uniform samples of size `n` rejected as non-normal.
pub fn ad_power_uniform(trials: usize, n: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let dist = Uniform::new(0.0, 1.0);
    let mut rejected = 0;
    for _ in 0..trials {
        let sample: Vec<f64> = (0..n).map(|_| dist.sample(&mut rng)).collect();
        if ad_normality(&sample).map_err(|e| e.to_string())?.reject {
            rejected += 1;
        }
    }
    Ok(rejected as f64 / trials as f64)
}

pub fn ad_type_one() -> Result<(), String> {
    let rate = ad_type_one_rate(1000, 1000, 0x5eed)?;
    if (rate - 0.05).abs() > 0.02 {
        return Err(format!("type-I error {rate} outside 0.05 ± 0.02"));
    }
    Ok(())
}

pub fn ad_power() -> Result<(), String> {
    let power = ad_power_uniform(1000, 200, 0xf00d)?;
    if power < 0.99 {
        return Err(format!("power {power} against uniform below 0.99"));
    }
    Ok(())
}

fn close(got: f64, want: f64) -> bool {
    (got - want).abs() <= 1e-6 * want.abs().max(1.0)
}

/// Paired t statistic and p-value against the checked-in reference cases.
pub fn paired_t_fixtures() -> Result<(), String> {
    let fixture: Fixture = serde_json::from_str(PAIRED_T_FIXTURE).map_err(|e| e.to_string())?;
    if fixture.cases.len() != 100 {
        return Err(format!("expected 100 cases, found {}", fixture.cases.len()));
    }
    for (i, case) in fixture.cases.iter().enumerate() {
        let r = paired_t(&case.a, &case.b).map_err(|e| format!("case {i}: {e}"))?;
        if !close(r.statistic, case.t) {
            return Err(format!("case {i}: t = {} want {}", r.statistic, case.t));
        }
        if !close(r.threshold_or_p, case.p) {
            return Err(format!("case {i}: p = {:e} want {:e}", r.threshold_or_p, case.p));
        }
        if r.df != Some(case.df) {
            return Err(format!("case {i}: df = {:?} want {}", r.df, case.df));
        }
    }
    Ok(())
}
