//! Seed derivation and small summary statistics shared by the experiment
//! drivers.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, StudentsT};

pub type Rng = ChaCha8Rng;

/// Mixes a master seed with a stream label and an index (splitmix64 finalizer).
pub fn derive_seed(master: u64, stream: u64, index: u64) -> u64 {
    let mut z = master
        .wrapping_add(stream.wrapping_mul(0x9E37_79B9_7F4A_7C15))
        .wrapping_add(index.wrapping_mul(0xD1B5_4A32_D192_ED03));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

pub fn rng_from(master: u64, stream: u64, index: u64) -> Rng {
    Rng::seed_from_u64(derive_seed(master, stream, index))
}

/// Mean, population standard deviation and maximum of a sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub max: f64,
    pub min: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len();
        if n == 0 {
            return Summary {
                n,
                mean: f64::NAN,
                std: f64::NAN,
                max: f64::NAN,
                min: f64::NAN,
            };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
        Summary {
            n,
            mean,
            std: var.sqrt(),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
        }
    }
}

/// Result of an unpaired one-tailed t-test of `mean(a) > mean(b)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub df: f64,
    pub p_value: f64,
}

/// Welch's unpaired t-test, one-tailed, alternative `mean(a) > mean(b)`.
///
/// Assumes independent samples of roughly normal means; no equal-variance
/// assumption. When both samples have zero variance the statistic is
/// degenerate and the p-value is 0 or 1 depending on the sign of the
/// difference (0.5 when equal).
pub fn welch_t_test_greater(a: &[f64], b: &[f64]) -> TTest {
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let ma = a.iter().sum::<f64>() / na;
    let mb = b.iter().sum::<f64>() / nb;
    let va = a.iter().map(|x| (x - ma).powi(2)).sum::<f64>() / (na - 1.0);
    let vb = b.iter().map(|x| (x - mb).powi(2)).sum::<f64>() / (nb - 1.0);
    let se2 = va / na + vb / nb;
    let diff = ma - mb;
    if se2 <= 0.0 || !se2.is_finite() {
        let p = if diff > 0.0 {
            0.0
        } else if diff < 0.0 {
            1.0
        } else {
            0.5
        };
        return TTest {
            t: diff.signum() * f64::INFINITY,
            df: na + nb - 2.0,
            p_value: p,
        };
    }
    let t = diff / se2.sqrt();
    let df = se2.powi(2)
        / ((va / na).powi(2) / (na - 1.0) + (vb / nb).powi(2) / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, df).expect("positive degrees of freedom");
    TTest {
        t,
        df,
        p_value: 1.0 - dist.cdf(t),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn derived_seeds_differ_by_stream_and_index() {
        let a = derive_seed(7, 0, 0);
        assert_ne!(a, derive_seed(7, 0, 1));
        assert_ne!(a, derive_seed(7, 1, 0));
        assert_eq!(a, derive_seed(7, 0, 0));
    }

    #[test]
    fn summary_population_std() {
        let s = Summary::of(&[1.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert_eq!(s.std, 1.0);
        assert_eq!(s.max, 3.0);
    }

    #[test]
    fn welch_matches_hand_computation() {
        // a: mean 2, var 1; b: mean 1, var 1; n = 3 each.
        // se = sqrt(1/3 + 1/3), t = 1 / 0.8165 = 1.2247, df = 4.
        let r = welch_t_test_greater(&[1.0, 2.0, 3.0], &[0.0, 1.0, 2.0]);
        assert!((r.t - 1.224_744_871).abs() < 1e-6);
        assert!((r.df - 4.0).abs() < 1e-9);
        // One-tailed p for t=1.2247, df=4 is about 0.1439.
        assert!((r.p_value - 0.1439).abs() < 1e-3, "{}", r.p_value);
    }

    #[test]
    fn welch_degenerate_zero_variance() {
        let r = welch_t_test_greater(&[1.0, 1.0], &[0.0, 0.0]);
        assert_eq!(r.p_value, 0.0);
    }
}
