//! 802.11p PHY abstraction: MCS table, PER curves, throughput and energy
//! efficiency, LTS-based SNR estimation and scenario identification.

use std::f64::consts::PI;
use std::fmt;

use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::channel::{complex_gaussian, delay_spread, max_abs, ProfileTable, ScenarioKind};
use crate::error::{LinkError, Result};

const DEFAULT_PER_MODEL: &str = include_str!("../data/per_model.toml");

/// Data-bearing subcarriers per OFDM symbol.
pub const DATA_SUBCARRIERS: u32 = 48;
pub const MCS_COUNT: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Modulation {
    Bpsk,
    Qpsk,
    Qam16,
    Qam64,
}

impl Modulation {
    pub fn bits_per_subcarrier(self) -> u32 {
        match self {
            Modulation::Bpsk => 1,
            Modulation::Qpsk => 2,
            Modulation::Qam16 => 4,
            Modulation::Qam64 => 6,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Modulation::Bpsk => "BPSK",
            Modulation::Qpsk => "QPSK",
            Modulation::Qam16 => "16QAM",
            Modulation::Qam64 => "64QAM",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CodeRate {
    Half,
    TwoThirds,
    ThreeQuarters,
}

impl CodeRate {
    pub fn ratio(self) -> (u32, u32) {
        match self {
            CodeRate::Half => (1, 2),
            CodeRate::TwoThirds => (2, 3),
            CodeRate::ThreeQuarters => (3, 4),
        }
    }

    pub fn as_f64(self) -> f64 {
        let (n, d) = self.ratio();
        n as f64 / d as f64
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct McsEntry {
    /// Position in the data-rate-ordered table.
    pub index: usize,
    pub modulation: Modulation,
    pub code_rate: CodeRate,
    pub bits_per_subcarrier: u32,
    pub data_rate_mbps: f64,
}

impl McsEntry {
    /// Information bits carried by one OFDM symbol (N_b).
    pub fn data_bits_per_symbol(&self) -> u32 {
        let (num, den) = self.code_rate.ratio();
        DATA_SUBCARRIERS * self.bits_per_subcarrier * num / den
    }
}

impl fmt::Display for McsEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let (n, d) = self.code_rate.ratio();
        write!(f, "{} {}/{}", self.modulation.label(), n, d)
    }
}

/// Half-clocked 802.11p OFDM symbol duration.
pub const SYMBOL_TIME_S: f64 = 8e-6;

/// The eight 802.11p MCSs ordered by data rate.
pub fn mcs_table() -> Vec<McsEntry> {
    use CodeRate::*;
    use Modulation::*;
    [
        (Bpsk, Half),
        (Bpsk, ThreeQuarters),
        (Qpsk, Half),
        (Qpsk, ThreeQuarters),
        (Qam16, Half),
        (Qam16, ThreeQuarters),
        (Qam64, TwoThirds),
        (Qam64, ThreeQuarters),
    ]
    .into_iter()
    .enumerate()
    .map(|(index, (modulation, code_rate))| {
        let bits = modulation.bits_per_subcarrier();
        let (num, den) = code_rate.ratio();
        let n_b = DATA_SUBCARRIERS * bits * num / den;
        McsEntry {
            index,
            modulation,
            code_rate,
            bits_per_subcarrier: bits,
            // bits per microsecond is Mbps
            data_rate_mbps: n_b as f64 / (SYMBOL_TIME_S * 1e6),
        }
    })
    .collect()
}

/// Per-MCS logistic PER curves.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerModel {
    pub floor: f64,
    pub snr_mid_db: Vec<f64>,
    pub slope_per_db: Vec<f64>,
}

impl PerModel {
    pub fn validate(&self) -> Result<()> {
        if self.snr_mid_db.len() != MCS_COUNT {
            return Err(LinkError::validation(
                "phy.per.snr_mid_db",
                format!("expected {MCS_COUNT} entries, got {}", self.snr_mid_db.len()),
            ));
        }
        if self.slope_per_db.len() != MCS_COUNT {
            return Err(LinkError::validation(
                "phy.per.slope_per_db",
                format!("expected {MCS_COUNT} entries, got {}", self.slope_per_db.len()),
            ));
        }
        if !(0.0..1.0).contains(&self.floor) {
            return Err(LinkError::validation("phy.per.floor", "must lie in [0, 1)"));
        }
        if self.slope_per_db.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(LinkError::validation("phy.per.slope_per_db", "slopes must be positive"));
        }
        if self.snr_mid_db.iter().any(|m| !m.is_finite()) {
            return Err(LinkError::validation("phy.per.snr_mid_db", "midpoints must be finite"));
        }
        // Cross-MCS ordering only holds pointwise with a shared slope and
        // increasing midpoints.
        if self.snr_mid_db.windows(2).any(|w| w[1] < w[0]) {
            return Err(LinkError::validation(
                "phy.per.snr_mid_db",
                "midpoints must be nondecreasing in data rate",
            ));
        }
        Ok(())
    }

    pub fn per(&self, mcs: &McsEntry, snr_db: f64) -> f64 {
        per(self, mcs, snr_db)
    }
}

impl Default for PerModel {
    fn default() -> Self {
        let model: PerModel = toml::from_str(DEFAULT_PER_MODEL).expect("embedded PER model parses");
        model.validate().expect("embedded PER model is valid");
        model
    }
}

pub fn per(model: &PerModel, mcs: &McsEntry, snr_db: f64) -> f64 {
    let mid = model.snr_mid_db[mcs.index];
    let slope = model.slope_per_db[mcs.index];
    let raw = 1.0 / (1.0 + (slope * (snr_db - mid)).exp());
    raw.clamp(model.floor, 1.0)
}

/// Packet timing shared by all MCSs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FrameTiming {
    pub n_data_symbols: u32,
    pub symbol_time_s: f64,
    pub overhead_time_s: f64,
}

impl Default for FrameTiming {
    fn default() -> Self {
        Self {
            n_data_symbols: 100,
            symbol_time_s: SYMBOL_TIME_S,
            overhead_time_s: 40e-6,
        }
    }
}

impl FrameTiming {
    pub fn validate(&self) -> Result<()> {
        if self.n_data_symbols == 0 {
            return Err(LinkError::validation("phy.frame.n_data_symbols", "must be >= 1"));
        }
        if !(self.symbol_time_s > 0.0) {
            return Err(LinkError::validation("phy.frame.symbol_time_s", "must be positive"));
        }
        if !(self.overhead_time_s >= 0.0) {
            return Err(LinkError::validation("phy.frame.overhead_time_s", "must be nonnegative"));
        }
        Ok(())
    }

    pub fn frame_for(&self, mcs: &McsEntry) -> FrameSpec {
        FrameSpec {
            n_data_symbols: self.n_data_symbols,
            symbol_time_s: self.symbol_time_s,
            overhead_time_s: self.overhead_time_s,
            bits_per_symbol: mcs.data_bits_per_symbol(),
        }
    }

    pub fn duration_s(&self) -> f64 {
        self.n_data_symbols as f64 * self.symbol_time_s + self.overhead_time_s
    }
}

/// Packet layout for one MCS.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FrameSpec {
    pub n_data_symbols: u32,
    pub symbol_time_s: f64,
    pub overhead_time_s: f64,
    pub bits_per_symbol: u32,
}

/// PHY throughput in Mbps: `n_s N_b / (n_s t_s + t_o) * (1 - PER)`.
pub fn throughput(frame: &FrameSpec, per_value: f64) -> f64 {
    let n_s = frame.n_data_symbols as f64;
    let bits = n_s * frame.bits_per_symbol as f64;
    let airtime_s = n_s * frame.symbol_time_s + frame.overhead_time_s;
    bits / airtime_s * (1.0 - per_value) / 1e6
}

/// Energy efficiency in Mbps/W.
pub fn energy_efficiency(tp_mbps: f64, power_w: f64) -> Result<f64> {
    if !(power_w > 0.0) {
        return Err(LinkError::Domain(format!(
            "transmit power must be positive, got {power_w} W"
        )));
    }
    Ok(tp_mbps / power_w)
}

/// Frequency-domain samples of the two long training symbols.
#[derive(Debug, Clone, PartialEq)]
pub struct LtsPair {
    pub y1: Vec<Complex64>,
    pub y2: Vec<Complex64>,
}

impl LtsPair {
    /// Mean received power per subcarrier over both symbols.
    pub fn received_power(&self) -> f64 {
        let total: f64 = self.y1.iter().chain(&self.y2).map(|y| y.norm_sqr()).sum();
        total / (self.y1.len() + self.y2.len()) as f64
    }
}

// 802.11a/p L-LTF sign pattern on the 52 occupied subcarriers.
const LTF_SIGNS: [i8; 52] = [
    1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, 1, -1, -1, 1, 1, -1, 1, -1, 1, 1, 1, 1, 1, -1,
    -1, 1, 1, -1, 1, -1, 1, -1, -1, -1, -1, -1, 1, 1, -1, -1, 1, -1, 1, -1, 1, 1, 1, 1,
];

/// Unit-power BPSK training sequence of length `n`, cycling the L-LTF pattern.
pub fn lts_sequence(n: usize) -> Vec<Complex64> {
    (0..n)
        .map(|k| Complex64::new(LTF_SIGNS[k % LTF_SIGNS.len()] as f64, 0.0))
        .collect()
}

/// Passes two copies of the LTS through the channel, the second rotated by
/// the carrier phase accumulated over `slot_s`.
pub fn transmit_lts<R: Rng + ?Sized>(
    h_freq: &[Complex64],
    lts_freq: &[Complex64],
    noise_power_w: f64,
    carrier_hz: f64,
    slot_s: f64,
    rng: &mut R,
) -> Result<LtsPair> {
    if h_freq.len() != lts_freq.len() {
        return Err(LinkError::Domain(format!(
            "channel has {} subcarriers but LTS has {}",
            h_freq.len(),
            lts_freq.len()
        )));
    }
    if !(noise_power_w >= 0.0) {
        return Err(LinkError::Domain(format!("noise power {noise_power_w} < 0")));
    }
    let cycles = carrier_hz * slot_s;
    let frac = cycles - cycles.round();
    let rotation = if frac == 0.0 {
        Complex64::new(1.0, 0.0)
    } else {
        Complex64::from_polar(1.0, 2.0 * PI * frac)
    };
    let noise = |rng: &mut R| {
        if noise_power_w == 0.0 {
            Complex64::new(0.0, 0.0)
        } else {
            complex_gaussian(rng, noise_power_w)
        }
    };
    let clean: Vec<Complex64> = h_freq.iter().zip(lts_freq).map(|(h, x)| h * x).collect();
    let y1 = clean.iter().map(|s| s + noise(rng)).collect();
    let y2 = clean.iter().map(|s| s * rotation + noise(rng)).collect();
    Ok(LtsPair { y1, y2 })
}

/// Difference-based SNR estimate in dB:
/// `10 log10(2 N_sc P_t / |Y1 - Y2|^2 - 1)`.
///
/// `total_signal_power_w` is the per-subcarrier received power of the
/// training symbols (signal plus noise), so the `- 1` removes the noise
/// contribution.
pub fn estimate_snr(pair: &LtsPair, total_signal_power_w: f64, n_sc: usize) -> Result<f64> {
    if pair.y1.len() != pair.y2.len() {
        return Err(LinkError::Domain("LTS pair lengths differ".into()));
    }
    let diff: f64 = pair
        .y1
        .iter()
        .zip(&pair.y2)
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    if diff == 0.0 {
        return Err(LinkError::DegenerateInput);
    }
    let arg = 2.0 * n_sc as f64 * total_signal_power_w / diff - 1.0;
    if !(arg > 0.0) {
        return Err(LinkError::EstimationFailure(arg));
    }
    Ok(10.0 * arg.log10())
}

/// How the receiver labels the prevailing scenario.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SiMode {
    /// Report the true scenario.
    Oracle,
    /// Nearest built-in profile on noisy (delay spread, max Doppler) features.
    /// `feature_noise` is the relative std-dev applied to every estimated
    /// delay and Doppler.
    NearestProfile { feature_noise: f64 },
}

impl Default for SiMode {
    fn default() -> Self {
        SiMode::NearestProfile { feature_noise: 0.1 }
    }
}

/// Feature scales for the nearest-profile distance.
const DELAY_SCALE_S: f64 = 100e-9;
const DOPPLER_SCALE_HZ: f64 = 100.0;

/// Nearest-profile classification over (delay spread, max |Doppler|), with
/// ties going to the lower scenario index.
pub fn identify_scenario(
    table: &ProfileTable,
    estimated_delays_s: &[f64],
    estimated_dopplers_hz: &[f64],
) -> ScenarioKind {
    let spread = delay_spread(estimated_delays_s);
    let doppler = max_abs(estimated_dopplers_hz);
    let mut best = (f64::INFINITY, ScenarioKind::ALL[0]);
    for profile in table.iter() {
        let dt = (spread - profile.delay_spread_s()) / DELAY_SCALE_S;
        let dd = (doppler - profile.max_doppler_hz()) / DOPPLER_SCALE_HZ;
        let dist = dt * dt + dd * dd;
        if dist < best.0 {
            best = (dist, profile.scenario);
        }
    }
    best.1
}

/// Runs scenario identification under `mode`. Feature noise draws come from `rng`.
pub fn identify_with_mode<R: Rng + ?Sized>(
    mode: SiMode,
    table: &ProfileTable,
    truth: ScenarioKind,
    delays_s: &[f64],
    dopplers_hz: &[f64],
    rng: &mut R,
) -> ScenarioKind {
    match mode {
        SiMode::Oracle => truth,
        SiMode::NearestProfile { feature_noise } => {
            let mut perturb = |v: &f64| {
                let z: f64 = rng.sample(rand_distr::StandardNormal);
                v * (1.0 + feature_noise * z)
            };
            let delays: Vec<f64> = delays_s.iter().map(&mut perturb).collect();
            let dopplers: Vec<f64> = dopplers_hz.iter().map(&mut perturb).collect();
            identify_scenario(table, &delays, &dopplers)
        }
    }
}
