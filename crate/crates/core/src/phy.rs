//! Analytic PHY: log-distance RSSI, maximal link rate, utilization-discounted
//! rate and end-to-end user throughput.

use serde::{Deserialize, Serialize};

use crate::error::PhyError;
use crate::model::{Channel, Point};

pub const RSSI_FLOOR_DBM: f64 = -100.0;
pub const RSSI_CEIL_DBM: f64 = 40.0;
/// Distance floor for coincident transmitter/receiver positions.
pub const MIN_DISTANCE_M: f64 = 0.1;

/// Bits per symbol per subcarrier allowed on a link.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(try_from = "f64", into = "f64")]
pub enum MaxBps {
    /// Neither 256-QAM rate allowed.
    #[default]
    Five,
    /// 256-QAM 3/4.
    Six,
    /// 256-QAM 5/6.
    FortySixths,
}

impl MaxBps {
    pub fn value(self) -> f64 {
        match self {
            MaxBps::Five => 5.0,
            MaxBps::Six => 6.0,
            MaxBps::FortySixths => 40.0 / 6.0,
        }
    }
}

impl TryFrom<f64> for MaxBps {
    type Error = String;

    fn try_from(v: f64) -> Result<Self, Self::Error> {
        if v == 5.0 {
            Ok(MaxBps::Five)
        } else if v == 6.0 {
            Ok(MaxBps::Six)
        } else if (v - 40.0 / 6.0).abs() < 1e-6 {
            Ok(MaxBps::FortySixths)
        } else {
            Err(format!("max_bps must be 5, 6 or 40/6, got {v}"))
        }
    }
}

impl From<MaxBps> for f64 {
    fn from(m: MaxBps) -> f64 {
        m.value()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhyParams {
    pub tx_power_dbm: f64,
    /// Offset turning `RSSI + p_adjust` into an effective SNR in dB.
    pub p_adjust_db: f64,
    pub max_bps: MaxBps,
    pub max_nss: f64,
    pub n_ofdm: f64,
    pub ppdu_s: f64,
    pub path_loss_exponent: f64,
    pub pl_ref_db: f64,
    pub cca_threshold_dbm: f64,
    /// Extra attenuation per metre of separation (walls); zero disables it.
    pub wall_loss_db_per_m: f64,
}

impl Default for PhyParams {
    fn default() -> Self {
        Self {
            tx_power_dbm: 12.0,
            p_adjust_db: 95.0,
            max_bps: MaxBps::Five,
            max_nss: 1.0,
            n_ofdm: 52.0,
            ppdu_s: 4e-6,
            path_loss_exponent: 3.0,
            pl_ref_db: 40.0,
            cca_threshold_dbm: -82.0,
            wall_loss_db_per_m: 0.0,
        }
    }
}

impl PhyParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.ppdu_s > 0.0) {
            return Err("ppdu must be positive".into());
        }
        if !(self.n_ofdm >= 1.0) {
            return Err("n_ofdm must be at least 1".into());
        }
        if !(self.max_nss >= 1.0) {
            return Err("max_nss must be at least 1".into());
        }
        Ok(())
    }

    /// Rate ceiling `max_bps · max_nss / ppdu · n_ofdm`.
    pub fn rate_cap(&self) -> f64 {
        self.max_bps.value() * self.max_nss / self.ppdu_s * self.n_ofdm
    }
}

/// Received signal strength, dBm, clamped to `[-100, 40]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct Rssi(f64);

impl Rssi {
    pub fn new(dbm: f64) -> Self {
        Rssi(dbm.clamp(RSSI_FLOOR_DBM, RSSI_CEIL_DBM))
    }

    pub fn dbm(self) -> f64 {
        self.0
    }
}

/// Log-distance RSSI with the default transmit power.
pub fn rssi_at(tx: Point, rx: Point, params: &PhyParams) -> Rssi {
    rssi_from(params.tx_power_dbm, tx, rx, params)
}

/// Log-distance RSSI for an explicit transmit power.
pub fn rssi_from(tx_power_dbm: f64, tx: Point, rx: Point, params: &PhyParams) -> Rssi {
    let d = tx.distance(rx).max(MIN_DISTANCE_M);
    let loss = params.pl_ref_db + 10.0 * params.path_loss_exponent * d.log10() + params.wall_loss_db_per_m * d;
    Rssi::new(tx_power_dbm - loss)
}

/// Maximal link throughput in bit/s:
/// `min(log2(1 + 10^((rssi + p_adjust)/10)), max_bps) · max_nss / ppdu · n_ofdm`.
pub fn link_rmax(rssi: Rssi, params: &PhyParams) -> f64 {
    let snr_db = rssi.dbm() + params.p_adjust_db;
    let cap = params.max_bps.value();
    let saturation_db = 10.0 * (2f64.powf(cap) - 1.0).log10();
    let bits = if snr_db >= saturation_db { cap } else { (1.0 + 10f64.powf(snr_db / 10.0)).log2().min(cap) };
    bits * params.max_nss / params.ppdu_s * params.n_ofdm
}

/// Rate left over when the medium is busy `utilization` percent of the time.
pub fn link_throughput(rmax: f64, utilization: f64) -> Result<f64, PhyError> {
    if !(0.0..=100.0).contains(&utilization) {
        return Err(PhyError::Domain(utilization));
    }
    Ok(rmax * (100.0 - utilization) / 100.0)
}

/// A link's contribution to a user path: its rate and the number of user
/// flows splitting that rate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkShare {
    pub rate_bps: f64,
    pub sharers: usize,
}

/// End-to-end user throughput: the demand, capped by the smallest per-flow
/// share of any link on the path.
pub fn end_to_end_throughput(path: &[LinkShare], demand_bps: f64) -> Result<f64, PhyError> {
    if path.is_empty() {
        return Err(PhyError::NoPath);
    }
    let bottleneck = path.iter().map(|l| l.rate_bps / l.sharers.max(1) as f64).fold(f64::INFINITY, f64::min);
    Ok(demand_bps.max(0.0).min(bottleneck))
}

/// Spectral overlap between two 2.4 GHz channels: `max(0, (5 - |Δ|) / 5)`.
pub fn overlap(a: Channel, b: Channel) -> f64 {
    let delta = (a as i32 - b as i32).abs() as f64;
    ((5.0 - delta) / 5.0).max(0.0)
}

/// Power ratio in linear scale for a dB value.
pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    const MBPS: f64 = 1e6;

    #[test]
    fn rssi_reference_points() {
        let p = PhyParams::default();
        let o = Point::new(0.0, 0.0);
        assert_relative_eq!(rssi_at(o, Point::new(1.0, 0.0), &p).dbm(), -28.0, epsilon = 1e-12);
        assert_relative_eq!(rssi_at(o, Point::new(10.0, 0.0), &p).dbm(), -58.0, epsilon = 1e-12);
        assert_eq!(rssi_at(o, Point::new(1000.0, 0.0), &p).dbm(), -100.0);
        // coincident points use the 0.1 m floor: 12 - 40 + 30 = 2 dBm
        assert_relative_eq!(rssi_at(o, o, &p).dbm(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn rmax_cap_and_low_snr() {
        let p = PhyParams::default();
        assert_eq!(link_rmax(Rssi::new(-65.0), &p), 65.0 * MBPS);
        // log2(1 + 10^0) = 1 bit
        assert_relative_eq!(link_rmax(Rssi::new(-95.0), &p), 13.0 * MBPS, max_relative = 1e-12);
        let raw = PhyParams { p_adjust_db: 0.0, ..p };
        assert!(link_rmax(Rssi::new(-100.0), &raw) < 1.0);
    }

    #[test]
    fn rmax_branches() {
        let six = PhyParams { max_bps: MaxBps::Six, ..Default::default() };
        assert_relative_eq!(six.rate_cap(), 78.0 * MBPS, max_relative = 1e-12);
        let top = PhyParams { max_bps: MaxBps::FortySixths, ..Default::default() };
        assert_relative_eq!(top.rate_cap(), 40.0 / 6.0 * 13.0 * MBPS, max_relative = 1e-12);
        assert!(MaxBps::try_from(7.0).is_err());
    }

    #[test]
    fn throughput_discount() {
        assert_relative_eq!(link_throughput(65.0 * MBPS, 40.0).unwrap(), 39.0 * MBPS, max_relative = 1e-12);
        assert_eq!(link_throughput(65.0 * MBPS, 0.0).unwrap(), 65.0 * MBPS);
        assert_eq!(link_throughput(65.0 * MBPS, 100.0).unwrap(), 0.0);
        assert_eq!(link_throughput(1.0, 100.5), Err(PhyError::Domain(100.5)));
        assert_eq!(link_throughput(1.0, -1.0), Err(PhyError::Domain(-1.0)));
    }

    #[test]
    fn end_to_end_cases() {
        let two = [LinkShare { rate_bps: 39.0 * MBPS, sharers: 1 }, LinkShare { rate_bps: 20.0 * MBPS, sharers: 1 }];
        assert_eq!(end_to_end_throughput(&two, 5.0 * MBPS).unwrap(), 5.0 * MBPS);
        assert_eq!(end_to_end_throughput(&two, 50.0 * MBPS).unwrap(), 20.0 * MBPS);
        let shared = [LinkShare { rate_bps: 10.0 * MBPS, sharers: 2 }];
        assert_eq!(end_to_end_throughput(&shared, 50.0 * MBPS).unwrap(), 5.0 * MBPS);
        assert_eq!(end_to_end_throughput(&[], 1.0), Err(PhyError::NoPath));
    }

    #[test]
    fn overlap_kernel() {
        assert_eq!(overlap(3, 3), 1.0);
        assert_eq!(overlap(3, 8), 0.0);
        assert_relative_eq!(overlap(1, 2), 0.8);
        assert_eq!(overlap(1, 11), 0.0);
    }

    proptest! {
        #[test]
        fn rmax_monotone_and_capped(a in -100.0f64..40.0, b in -100.0f64..40.0) {
            let p = PhyParams::default();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(link_rmax(Rssi::new(lo), &p) <= link_rmax(Rssi::new(hi), &p));
            let sat = 10.0 * (2f64.powf(5.0) - 1.0).log10() - p.p_adjust_db;
            if hi >= sat {
                prop_assert_eq!(link_rmax(Rssi::new(hi), &p), p.rate_cap());
            }
        }

        #[test]
        fn throughput_linear_in_idle_time(r in 0.0f64..1e8, u in 0.0f64..=100.0) {
            let t = link_throughput(r, u).unwrap();
            prop_assert!((t - r * (100.0 - u) / 100.0).abs() <= 1e-9 * r.max(1.0));
            prop_assert_eq!(link_throughput(r, 100.0).unwrap(), 0.0);
        }

        #[test]
        fn e2e_bounded(rates in proptest::collection::vec((0.0f64..1e8, 1usize..5), 1..4), d in 0.0f64..1e8) {
            let path: Vec<_> = rates.iter().map(|&(r, s)| LinkShare { rate_bps: r, sharers: s }).collect();
            let t = end_to_end_throughput(&path, d).unwrap();
            prop_assert!(t <= d);
            for l in &path {
                prop_assert!(t <= l.rate_bps);
            }
        }

        #[test]
        fn rssi_symmetric(ax in -20.0f64..50.0, ay in -20.0f64..50.0, bx in -20.0f64..50.0, by in -20.0f64..50.0) {
            let p = PhyParams { wall_loss_db_per_m: 0.5, ..Default::default() };
            let (a, b) = (Point::new(ax, ay), Point::new(bx, by));
            prop_assert_eq!(rssi_at(a, b, &p), rssi_at(b, a, &p));
        }
    }
}
