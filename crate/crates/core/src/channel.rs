//! Scenario-dependent multipath channels and the per-transmission SNR process.
//!
//! A channel realization is a tapped delay line: each tap carries a complex
//! Rayleigh amplitude, a fixed delay and a fixed Doppler shift taken from the
//! scenario profile. The frequency response on subcarrier `k` at time `t` is
//!
//! ```text
//! H[k] = sum_m A_m * exp(j 2 pi nu_m t) * exp(-j 2 pi f_k tau_m)
//! ```

use std::f64::consts::PI;
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{LinkError, Result};

const DEFAULT_PROFILES: &str = include_str!("../data/scenarios.toml");

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScenarioKind {
    #[serde(rename = "R-LOS")]
    RuralLos,
    #[serde(rename = "U-A-LOS")]
    UrbanApproachingLos,
    #[serde(rename = "U-NLOS")]
    UrbanNlos,
    #[serde(rename = "H-LOS")]
    HighwayLos,
    #[serde(rename = "H-NLOS")]
    HighwayNlos,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::RuralLos,
        ScenarioKind::UrbanApproachingLos,
        ScenarioKind::UrbanNlos,
        ScenarioKind::HighwayLos,
        ScenarioKind::HighwayNlos,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<Self> {
        Self::ALL.get(index).copied()
    }

    pub fn label(self) -> &'static str {
        match self {
            ScenarioKind::RuralLos => "R-LOS",
            ScenarioKind::UrbanApproachingLos => "U-A-LOS",
            ScenarioKind::UrbanNlos => "U-NLOS",
            ScenarioKind::HighwayLos => "H-LOS",
            ScenarioKind::HighwayNlos => "H-NLOS",
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for ScenarioKind {
    type Err = LinkError;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|k| k.label().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| LinkError::validation("scenario", format!("unknown scenario `{s}`")))
    }
}

/// Tap statistics for one scenario. Gains are stored normalized so that the
/// linear powers sum to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioProfile {
    pub scenario: ScenarioKind,
    pub avg_path_gains_db: Vec<f64>,
    pub path_delays_s: Vec<f64>,
    pub doppler_shifts_hz: Vec<f64>,
}

impl ScenarioProfile {
    /// Builds a profile from relative tap gains, normalizing them to unit power.
    pub fn new(
        scenario: ScenarioKind,
        gains_db: &[f64],
        delays_s: &[f64],
        dopplers_hz: &[f64],
    ) -> Result<Self> {
        let field = |f: &str| format!("scenario.{}.{f}", scenario.label());
        if gains_db.is_empty() {
            return Err(LinkError::validation(field("gains_db"), "at least one tap required"));
        }
        if delays_s.len() != gains_db.len() || dopplers_hz.len() != gains_db.len() {
            return Err(LinkError::validation(
                field("delays_ns"),
                "gains, delays and Dopplers must have equal lengths",
            ));
        }
        if gains_db.iter().chain(delays_s).chain(dopplers_hz).any(|v| !v.is_finite()) {
            return Err(LinkError::validation(field("gains_db"), "non-finite tap parameter"));
        }
        if delays_s[0] != 0.0 {
            return Err(LinkError::validation(field("delays_ns"), "first delay must be 0"));
        }
        if delays_s.windows(2).any(|w| w[1] < w[0]) {
            return Err(LinkError::validation(field("delays_ns"), "delays must be nondecreasing"));
        }
        let total: f64 = gains_db.iter().map(|g| db_to_linear(*g)).sum();
        let offset = 10.0 * total.log10();
        Ok(Self {
            scenario,
            avg_path_gains_db: gains_db.iter().map(|g| g - offset).collect(),
            path_delays_s: delays_s.to_vec(),
            doppler_shifts_hz: dopplers_hz.to_vec(),
        })
    }

    pub fn tap_count(&self) -> usize {
        self.avg_path_gains_db.len()
    }

    pub fn linear_gains(&self) -> Vec<f64> {
        self.avg_path_gains_db.iter().map(|g| db_to_linear(*g)).collect()
    }

    /// Excess delay of the last tap.
    pub fn delay_spread_s(&self) -> f64 {
        delay_spread(&self.path_delays_s)
    }

    pub fn max_doppler_hz(&self) -> f64 {
        max_abs(&self.doppler_shifts_hz)
    }
}

pub(crate) fn delay_spread(delays: &[f64]) -> f64 {
    let lo = delays.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = delays.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    hi - lo
}

pub(crate) fn max_abs(values: &[f64]) -> f64 {
    values.iter().fold(0.0, |acc, v| acc.max(v.abs()))
}

pub fn db_to_linear(db: f64) -> f64 {
    10f64.powf(db / 10.0)
}

#[derive(Deserialize)]
struct ProfileFile {
    scenario: Vec<ProfileRecord>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ProfileRecord {
    name: String,
    gains_db: Vec<f64>,
    delays_ns: Vec<f64>,
    dopplers_hz: Vec<f64>,
}

/// One profile per scenario, indexed by [`ScenarioKind::index`].
#[derive(Debug, Clone, PartialEq)]
pub struct ProfileTable {
    profiles: Vec<ScenarioProfile>,
}

impl ProfileTable {
    /// The embedded default table.
    pub fn builtin() -> Self {
        Self::parse(DEFAULT_PROFILES, "built-in scenario table")
            .expect("embedded scenario table is valid")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| LinkError::io(path, e))?;
        Self::parse(&text, &path.display().to_string())
    }

    pub fn parse(text: &str, origin: &str) -> Result<Self> {
        let file: ProfileFile = toml::from_str(text).map_err(|e| LinkError::Parse {
            origin: origin.to_string(),
            message: e.to_string(),
        })?;
        let mut slots: Vec<Option<ScenarioProfile>> = vec![None; ScenarioKind::ALL.len()];
        for rec in file.scenario {
            let kind: ScenarioKind = rec.name.parse()?;
            let delays_s: Vec<f64> = rec.delays_ns.iter().map(|d| d * 1e-9).collect();
            let profile = ScenarioProfile::new(kind, &rec.gains_db, &delays_s, &rec.dopplers_hz)?;
            if slots[kind.index()].replace(profile).is_some() {
                return Err(LinkError::validation(
                    format!("scenario.{kind}"),
                    "duplicate scenario record",
                ));
            }
        }
        let profiles = slots
            .into_iter()
            .enumerate()
            .map(|(i, p)| {
                p.ok_or_else(|| {
                    LinkError::validation(
                        format!("scenario.{}", ScenarioKind::ALL[i]),
                        "missing scenario record",
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { profiles })
    }

    pub fn get(&self, kind: ScenarioKind) -> &ScenarioProfile {
        &self.profiles[kind.index()]
    }

    pub fn iter(&self) -> impl Iterator<Item = &ScenarioProfile> {
        self.profiles.iter()
    }
}

impl Default for ProfileTable {
    fn default() -> Self {
        Self::builtin()
    }
}

/// The built-in profile for `kind`.
pub fn profile_for(kind: ScenarioKind) -> ScenarioProfile {
    ProfileTable::builtin().get(kind).clone()
}

/// One channel realization.
#[derive(Debug, Clone, PartialEq)]
pub struct TapSet {
    pub amplitudes: Vec<Complex64>,
    pub delays_s: Vec<f64>,
    pub dopplers_hz: Vec<f64>,
}

impl TapSet {
    pub fn scaled(&self, factor: Complex64) -> Self {
        Self {
            amplitudes: self.amplitudes.iter().map(|a| a * factor).collect(),
            ..self.clone()
        }
    }
}

/// Draws Rayleigh tap amplitudes with per-tap power equal to the profile gain.
pub fn sample_taps<R: Rng + ?Sized>(profile: &ScenarioProfile, rng: &mut R) -> TapSet {
    let amplitudes = profile
        .linear_gains()
        .into_iter()
        .map(|g| complex_gaussian(rng, g))
        .collect();
    TapSet {
        amplitudes,
        delays_s: profile.path_delays_s.clone(),
        dopplers_hz: profile.doppler_shifts_hz.clone(),
    }
}

/// Circularly-symmetric complex Gaussian with total variance `power`.
pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R, power: f64) -> Complex64 {
    let sigma = (power / 2.0).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(sigma * re, sigma * im)
}

/// Baseband offset of subcarrier `k` out of `n`, centred on DC.
pub fn subcarrier_offset_hz(k: usize, n: usize, spacing_hz: f64) -> f64 {
    (k as f64 - (n / 2) as f64) * spacing_hz
}

pub fn frequency_response(
    taps: &TapSet,
    n_subcarriers: usize,
    subcarrier_spacing_hz: f64,
    t_s: f64,
) -> Vec<Complex64> {
    let rotated: Vec<Complex64> = taps
        .amplitudes
        .iter()
        .zip(&taps.dopplers_hz)
        .map(|(a, nu)| a * Complex64::from_polar(1.0, 2.0 * PI * nu * t_s))
        .collect();
    (0..n_subcarriers)
        .map(|k| {
            let f = subcarrier_offset_hz(k, n_subcarriers, subcarrier_spacing_hz);
            rotated
                .iter()
                .zip(&taps.delays_s)
                .map(|(a, tau)| a * Complex64::from_polar(1.0, -2.0 * PI * f * tau))
                .sum()
        })
        .collect()
}

/// Bounds of the i.i.d. uniform true-SNR process, in dB.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrRange {
    pub min_db: f64,
    pub max_db: f64,
}

impl SnrRange {
    pub fn new(min_db: f64, max_db: f64) -> Result<Self> {
        let range = Self { min_db, max_db };
        range.validate()?;
        Ok(range)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.min_db.is_finite() && self.max_db.is_finite() && self.min_db < self.max_db) {
            return Err(LinkError::validation(
                "channel.snr_min_db",
                format!("need min < max, got [{}, {}]", self.min_db, self.max_db),
            ));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        self.min_db + (self.max_db - self.min_db) * rng.random::<f64>()
    }

    pub fn normalize(&self, snr_db: f64) -> f64 {
        (snr_db - self.min_db) / (self.max_db - self.min_db)
    }
}

impl Default for SnrRange {
    fn default() -> Self {
        Self {
            min_db: 5.0,
            max_db: 25.0,
        }
    }
}

/// Seeded stream of per-transmission true SNR values.
#[derive(Debug, Clone)]
pub struct SnrProcess {
    range: SnrRange,
    rng: ChaCha8Rng,
}

impl SnrProcess {
    pub fn new(min_db: f64, max_db: f64, rng_seed: u64) -> Result<Self> {
        Ok(Self {
            range: SnrRange::new(min_db, max_db)?,
            rng: ChaCha8Rng::seed_from_u64(rng_seed),
        })
    }

    pub fn range(&self) -> SnrRange {
        self.range
    }

    pub fn next_true_snr(&mut self) -> f64 {
        self.range.sample(&mut self.rng)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    #[test]
    fn builtin_table_matches_frozen_values() {
        let p = profile_for(ScenarioKind::UrbanNlos);
        assert_eq!(p.tap_count(), 4);
        assert!(p.doppler_shifts_hz.iter().any(|d| *d != 0.0));
        let rel: Vec<f64> = p
            .avg_path_gains_db
            .iter()
            .map(|g| g - p.avg_path_gains_db[0])
            .collect();
        for (got, want) in rel.iter().zip([0.0, -2.0, -4.0, -7.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        let delays_ns: Vec<f64> = p.path_delays_s.iter().map(|d| d * 1e9).collect();
        for (got, want) in delays_ns.iter().zip([0.0, 267.0, 400.0, 533.0]) {
            assert!((got - want).abs() < 1e-9);
        }
        assert_eq!(p.doppler_shifts_hz, vec![0.0, 295.0, -98.0, 591.0]);
    }

    #[test]
    fn every_profile_is_normalized() {
        for p in ProfileTable::builtin().iter() {
            let total: f64 = p.linear_gains().iter().sum();
            assert!((total - 1.0).abs() < 1e-9, "{}: {total}", p.scenario);
            assert_eq!(p.path_delays_s.len(), p.tap_count());
            assert_eq!(p.doppler_shifts_hz.len(), p.tap_count());
            assert_eq!(p.path_delays_s[0], 0.0);
        }
    }

    #[test]
    fn rural_spread_is_smaller_than_highway_nlos() {
        let r = profile_for(ScenarioKind::RuralLos).delay_spread_s();
        let h = profile_for(ScenarioKind::HighwayNlos).delay_spread_s();
        assert!(r < h);
    }

    #[test]
    fn profile_rejects_bad_input() {
        let k = ScenarioKind::RuralLos;
        assert!(ScenarioProfile::new(k, &[], &[], &[]).is_err());
        assert!(ScenarioProfile::new(k, &[0.0, -3.0], &[0.0], &[0.0, 0.0]).is_err());
        assert!(ScenarioProfile::new(k, &[0.0, -3.0], &[1e-9, 2e-9], &[0.0, 0.0]).is_err());
        assert!(ScenarioProfile::new(k, &[0.0, -3.0], &[0.0, -1e-9], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn table_rejects_missing_scenario() {
        let text = "[[scenario]]\nname = \"R-LOS\"\ngains_db = [0.0]\ndelays_ns = [0.0]\ndopplers_hz = [0.0]\n";
        let err = ProfileTable::parse(text, "test").unwrap_err();
        assert!(err.to_string().contains("missing scenario"), "{err}");
    }

    #[test]
    fn scenario_labels_round_trip() {
        for k in ScenarioKind::ALL {
            assert_eq!(k.label().parse::<ScenarioKind>().unwrap(), k);
            assert_eq!(ScenarioKind::from_index(k.index()), Some(k));
        }
        assert!("X-LOS".parse::<ScenarioKind>().is_err());
    }

    #[test]
    fn single_tap_second_moment_is_unit() {
        let p = ScenarioProfile::new(ScenarioKind::RuralLos, &[0.0], &[0.0], &[0.0]).unwrap();
        let mut r = rng(7);
        let n = 100_000;
        let mean: f64 = (0..n)
            .map(|_| sample_taps(&p, &mut r).amplitudes[0].norm_sqr())
            .sum::<f64>()
            / n as f64;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn per_tap_second_moments_match_profile() {
        let p = profile_for(ScenarioKind::HighwayNlos);
        let mut r = rng(11);
        let n = 100_000;
        let mut acc = vec![0.0; p.tap_count()];
        for _ in 0..n {
            for (a, t) in acc.iter_mut().zip(sample_taps(&p, &mut r).amplitudes) {
                *a += t.norm_sqr();
            }
        }
        for (a, g) in acc.iter().zip(p.linear_gains()) {
            let m = a / n as f64;
            assert!((m / g - 1.0).abs() < 0.03, "moment {m} vs gain {g}");
        }
    }

    #[test]
    fn sampling_is_seed_deterministic() {
        let p = profile_for(ScenarioKind::HighwayLos);
        let a = sample_taps(&p, &mut rng(3));
        let b = sample_taps(&p, &mut rng(3));
        assert_eq!(a, b);
        assert_eq!(a.amplitudes.len(), 4);
        assert_eq!(a.delays_s, p.path_delays_s);
    }

    #[test]
    fn three_tap_profile_gives_three_taps() {
        let t = sample_taps(&profile_for(ScenarioKind::RuralLos), &mut rng(1));
        assert_eq!(t.amplitudes.len(), 3);
        assert_eq!(t.delays_s.len(), 3);
        assert_eq!(t.dopplers_hz.len(), 3);
    }

    #[test]
    fn flat_channel_response() {
        let taps = TapSet {
            amplitudes: vec![Complex64::new(1.0, 0.0)],
            delays_s: vec![0.0],
            dopplers_hz: vec![0.0],
        };
        for h in frequency_response(&taps, 64, 156_250.0, 0.3) {
            assert_eq!(h, Complex64::new(1.0, 0.0));
        }
    }

    #[test]
    fn doppler_vanishes_at_time_zero() {
        let a = Complex64::new(0.3, -0.7);
        let taps = TapSet {
            amplitudes: vec![a],
            delays_s: vec![0.0],
            dopplers_hz: vec![500.0],
        };
        for h in frequency_response(&taps, 16, 156_250.0, 0.0) {
            assert_eq!(h, a);
        }
    }

    #[test]
    fn two_tap_response_matches_direct_sum() {
        let taps = TapSet {
            amplitudes: vec![Complex64::new(0.8, 0.1), Complex64::new(-0.2, 0.4)],
            delays_s: vec![0.0, 300e-9],
            dopplers_hz: vec![120.0, -640.0],
        };
        let (n, df, t) = (64usize, 156_250.0, 1.7e-3);
        let h = frequency_response(&taps, n, df, t);
        for (k, hk) in h.iter().enumerate() {
            let f = (k as f64 - 32.0) * df;
            let mut re = 0.0;
            let mut im = 0.0;
            for m in 0..2 {
                let phase = 2.0 * PI * (taps.dopplers_hz[m] * t - f * taps.delays_s[m]);
                let (a, b) = (taps.amplitudes[m].re, taps.amplitudes[m].im);
                re += a * phase.cos() - b * phase.sin();
                im += a * phase.sin() + b * phase.cos();
            }
            assert!((hk.re - re).abs() < 1e-12 && (hk.im - im).abs() < 1e-12, "k={k}");
        }
    }

    #[test]
    fn snr_draws_stay_in_range() {
        let mut p = SnrProcess::new(10.0, 10.0 + 1e-6, 5).unwrap();
        for _ in 0..1000 {
            let s = p.next_true_snr();
            assert!((10.0..=10.0 + 1e-6).contains(&s));
        }
    }

    #[test]
    fn snr_sample_mean_is_centred() {
        let mut p = SnrProcess::new(5.0, 25.0, 99).unwrap();
        let n = 100_000;
        let mean = (0..n).map(|_| p.next_true_snr()).sum::<f64>() / n as f64;
        assert!((mean - 15.0).abs() < 0.1, "{mean}");
    }

    #[test]
    fn snr_process_is_reproducible() {
        let mut a = SnrProcess::new(5.0, 25.0, 42).unwrap();
        let mut b = SnrProcess::new(5.0, 25.0, 42).unwrap();
        for _ in 0..100 {
            assert_eq!(a.next_true_snr().to_bits(), b.next_true_snr().to_bits());
        }
    }

    #[test]
    fn snr_range_must_be_ordered() {
        assert!(SnrProcess::new(10.0, 10.0, 0).is_err());
        assert!(SnrRange::new(20.0, 5.0).is_err());
    }

    proptest::proptest! {
        #[test]
        fn response_is_linear_in_amplitudes(
            seed in 0u64..1000, re in -3.0f64..3.0, im in -3.0f64..3.0, t in 0.0f64..0.1
        ) {
            let taps = sample_taps(&profile_for(ScenarioKind::UrbanNlos), &mut rng(seed));
            let c = Complex64::new(re, im);
            let h = frequency_response(&taps, 64, 156_250.0, t);
            let hs = frequency_response(&taps.scaled(c), 64, 156_250.0, t);
            for (a, b) in h.iter().zip(&hs) {
                proptest::prop_assert!((a * c - b).norm() < 1e-12 * (1.0 + b.norm()));
            }
        }
    }
}
