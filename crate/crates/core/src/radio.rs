//! Log-distance path-loss channel with Gaussian shadowing in the dB domain.
//!
//! Received power falls off as `1 / d^n`; in dBm that is
//! `P(d) = P0 - 10 n log10(d)` with `P0` the power at the 1 m reference.
//! When the two wrists are on opposite sides of the body (crosswise
//! geometry) a fixed body attenuation is subtracted on top.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative placement of the two watches.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Geometry {
    /// Line of sight between the wrists (left-to-right or right-to-left).
    #[default]
    Direct,
    /// Path blocked by the body (left-to-left or right-to-right).
    Crosswise,
}

impl Geometry {
    pub fn as_str(self) -> &'static str {
        match self {
            Geometry::Direct => "direct",
            Geometry::Crosswise => "crosswise",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelParams {
    /// RSS at the 1 m reference distance, dBm.
    pub ref_rss_dbm: f64,
    pub path_loss_exp: f64,
    /// Standard deviation of the zero-mean shadowing term, dB.
    pub shadow_sigma_db: f64,
    /// Extra loss applied in [`Geometry::Crosswise`], dB.
    pub body_atten_db: f64,
    /// Packets sent farther than this are never delivered.
    pub broadcast_range_m: f64,
    pub rng_seed: u64,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self {
            ref_rss_dbm: -60.0,
            path_loss_exp: 2.0,
            shadow_sigma_db: 4.0,
            body_atten_db: 6.0,
            broadcast_range_m: 10.0,
            rng_seed: 0,
        }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<()> {
        if !self.ref_rss_dbm.is_finite() {
            return Err(Error::Domain("ref_rss_dbm must be finite".into()));
        }
        if !(self.path_loss_exp > 0.0 && self.path_loss_exp.is_finite()) {
            return Err(Error::Domain(format!(
                "path_loss_exp must be > 0, got {}",
                self.path_loss_exp
            )));
        }
        if !(self.shadow_sigma_db >= 0.0 && self.shadow_sigma_db.is_finite()) {
            return Err(Error::Domain(format!(
                "shadow_sigma_db must be >= 0, got {}",
                self.shadow_sigma_db
            )));
        }
        if !(self.body_atten_db >= 0.0 && self.body_atten_db.is_finite()) {
            return Err(Error::Domain(format!(
                "body_atten_db must be >= 0, got {}",
                self.body_atten_db
            )));
        }
        if !(self.broadcast_range_m > 0.0) {
            return Err(Error::Domain(format!(
                "broadcast_range_m must be > 0, got {}",
                self.broadcast_range_m
            )));
        }
        Ok(())
    }

    pub fn in_range(&self, distance_m: f64) -> bool {
        distance_m <= self.broadcast_range_m
    }
}

/// One received-packet observation with its ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RssSample {
    pub true_distance_m: f64,
    pub rss_dbm: f64,
    pub timestamp_ms: u64,
    pub geometry: Geometry,
}

fn check_distance(distance_m: f64) -> Result<()> {
    if distance_m > 0.0 && distance_m.is_finite() {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "distance must be positive and finite, got {distance_m}"
        )))
    }
}

/// Noise-free RSS at `distance_m`.
pub fn mean_rss_at(params: &ChannelParams, distance_m: f64, geometry: Geometry) -> Result<f64> {
    check_distance(distance_m)?;
    let direct = params.ref_rss_dbm - 10.0 * params.path_loss_exp * distance_m.log10();
    Ok(match geometry {
        Geometry::Direct => direct,
        Geometry::Crosswise => direct - params.body_atten_db,
    })
}

/// Inverse of [`mean_rss_at`]: the distance whose noise-free RSS equals `rss_dbm`.
pub fn distance_for_rss(params: &ChannelParams, rss_dbm: f64, geometry: Geometry) -> f64 {
    let direct = match geometry {
        Geometry::Direct => rss_dbm,
        Geometry::Crosswise => rss_dbm + params.body_atten_db,
    };
    10f64.powf((params.ref_rss_dbm - direct) / (10.0 * params.path_loss_exp))
}

/// [`mean_rss_at`] plus one shadowing draw.
pub fn sample_rss<R: Rng + ?Sized>(
    params: &ChannelParams,
    distance_m: f64,
    geometry: Geometry,
    rng: &mut R,
) -> Result<f64> {
    let mean = mean_rss_at(params, distance_m, geometry)?;
    if params.shadow_sigma_db == 0.0 {
        return Ok(mean);
    }
    let noise = Normal::new(0.0, params.shadow_sigma_db)
        .map_err(|e| Error::Domain(format!("shadowing distribution: {e}")))?;
    Ok(mean + noise.sample(rng))
}

/// Trailing moving average. Entry `i` averages the last `min(i + 1, window)`
/// raw values, so the output has the same length as the input.
pub fn moving_average(series: &[f64], window: usize) -> Result<Vec<f64>> {
    if window == 0 {
        return Err(Error::Domain("moving average window must be >= 1".into()));
    }
    Ok((0..series.len())
        .map(|i| {
            let n = (i + 1).min(window);
            series[i + 1 - n..=i].iter().sum::<f64>() / n as f64
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ChannelParams {
        ChannelParams::default()
    }

    #[test]
    fn reference_distance_identity() {
        assert_eq!(mean_rss_at(&params(), 1.0, Geometry::Direct).unwrap(), -60.0);
    }

    #[test]
    fn two_metres_drops_six_db() {
        let v = mean_rss_at(&params(), 2.0, Geometry::Direct).unwrap();
        assert!((v - (-66.0206)).abs() < 1e-4, "{v}");
    }

    #[test]
    fn crosswise_subtracts_body_attenuation() {
        let v = mean_rss_at(&params(), 1.0, Geometry::Crosswise).unwrap();
        assert_eq!(v, -66.0);
    }

    #[test]
    fn non_positive_distance_rejected() {
        assert!(matches!(
            mean_rss_at(&params(), 0.0, Geometry::Direct),
            Err(Error::Domain(_))
        ));
        assert!(mean_rss_at(&params(), -1.0, Geometry::Direct).is_err());
        assert!(mean_rss_at(&params(), f64::NAN, Geometry::Direct).is_err());
    }

    #[test]
    fn zero_sigma_sample_is_mean() {
        let p = ChannelParams {
            shadow_sigma_db: 0.0,
            ..params()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            sample_rss(&p, 1.0, Geometry::Direct, &mut rng).unwrap(),
            mean_rss_at(&p, 1.0, Geometry::Direct).unwrap()
        );
    }

    #[test]
    fn shadowing_mean_converges() {
        let p = params();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 100_000;
        let sum: f64 = (0..n)
            .map(|_| sample_rss(&p, 1.0, Geometry::Direct, &mut rng).unwrap())
            .sum();
        assert!((sum / n as f64 + 60.0).abs() < 0.1);
    }

    #[test]
    fn seeded_draws_repeat() {
        let p = params();
        let draw = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            (0..20)
                .map(|_| sample_rss(&p, 3.0, Geometry::Crosswise, &mut rng).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(), draw());
    }

    #[test]
    fn moving_average_cases() {
        assert_eq!(
            moving_average(&[-70.0, -70.0, -70.0], 3).unwrap(),
            vec![-70.0, -70.0, -70.0]
        );
        assert_eq!(
            moving_average(&[-60.0, -70.0, -80.0], 2).unwrap(),
            vec![-60.0, -65.0, -75.0]
        );
        let s = [-61.5, -72.25, -58.0, -90.0];
        assert_eq!(moving_average(&s, 1).unwrap(), s.to_vec());
        assert!(moving_average(&[], 4).unwrap().is_empty());
        assert!(matches!(moving_average(&s, 0), Err(Error::Domain(_))));
    }

    #[test]
    fn invalid_params_rejected() {
        let bad = ChannelParams {
            path_loss_exp: 0.0,
            ..params()
        };
        assert!(bad.validate().is_err());
        let bad = ChannelParams {
            shadow_sigma_db: -1.0,
            ..params()
        };
        assert!(bad.validate().is_err());
        assert!(params().validate().is_ok());
    }
}
