//! 5G NR-style beam-sweep simulator: DFT codebook over a small phased array,
//! SSB sweep schedule, per-subcarrier channel synthesis, RSRP computation, and
//! assembly of the grouped RSRP matrix scanned by the angle extractor.

use crate::geometry::{wrap_angle, PathKind, PathTruth, Point2, Scene};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::f64::consts::{PI, TAU};
use thiserror::Error;

/// Speed of light in m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// Row/column beam placement of the grouped RSRP matrix: the codebook beams
/// sorted by pointing angle, ascending.
pub const BEAM_ORDER: [usize; 8] = [5, 6, 7, 0, 1, 2, 3, 4];

/// Inverse of [`BEAM_ORDER`]: matrix position of each beam index.
pub const POS_OF_BEAM: [usize; 8] = [3, 4, 5, 6, 7, 0, 1, 2];

#[derive(Debug, Error, PartialEq)]
pub enum BeamError {
    #[error("beam index {0} out of range (n_beams {1})")]
    BeamOutOfRange(usize, usize),
    #[error("sweep of {0} beam pairs exceeds the 64 SSBs of one frame")]
    CapacityExceeded(usize),
    #[error("rsrp needs at least 2 subcarriers, got {0}")]
    TooFewSubcarriers(usize),
}

/// Phased-array codebook parameters. Defaults model an 8-element linear array
/// with 4 active elements, 6.3 mm spacing at 28 GHz (d = 0.588 λ), a 5.625°
/// phase-shifter step, and 8 beams with per-beam phase offset ψ_b = 8·b·Δψ.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct CodebookConfig {
    pub n_elements_total: usize,
    pub n_active: usize,
    pub spacing_wavelengths: f64,
    pub phase_step: f64,
    pub n_beams: usize,
    pub beam_phase_multiplier: usize,
}

impl Default for CodebookConfig {
    fn default() -> Self {
        Self {
            n_elements_total: 8,
            n_active: 4,
            spacing_wavelengths: 0.588,
            phase_step: (5.625f64).to_radians(),
            n_beams: 8,
            beam_phase_multiplier: 8,
        }
    }
}

/// Unit-norm weight vector of one codebook beam. Element m carries phase
/// m·ψ_b with ψ_b = beam_phase_multiplier·beam·phase_step.
pub fn beam_weights(cfg: &CodebookConfig, beam: usize) -> Result<Vec<Complex64>, BeamError> {
    if beam >= cfg.n_beams {
        return Err(BeamError::BeamOutOfRange(beam, cfg.n_beams));
    }
    let psi = cfg.beam_phase_multiplier as f64 * beam as f64 * cfg.phase_step;
    let norm = 1.0 / (cfg.n_active as f64).sqrt();
    Ok((0..cfg.n_active)
        .map(|m| Complex64::from_polar(norm, m as f64 * psi))
        .collect())
}

/// Array response of a weight vector at a local angle (measured from the
/// array axis, boresight at 90°): the plain inner product with the
/// uniform-linear-array steering vector. The sign convention pairs the
/// positive weight phases with a positive steering exponent so that beam b
/// peaks where 2π(d/λ)cosθ = −ψ_b (mod 2π), reproducing the dictionary table.
pub fn array_gain(cfg: &CodebookConfig, weights: &[Complex64], local_angle: f64) -> Complex64 {
    let k = TAU * cfg.spacing_wavelengths * local_angle.cos();
    weights
        .iter()
        .enumerate()
        .map(|(m, w)| w * Complex64::from_polar(1.0, m as f64 * k))
        .sum()
}

/// The eight beam pointing angles (radians), sorted ascending and aligned with
/// [`BEAM_ORDER`], found by scanning |array_gain| over the front half-space.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct BeamDictionary {
    pub angles: [f64; 8],
}

impl BeamDictionary {
    pub fn from_codebook(cfg: &CodebookConfig) -> Self {
        let mut angles = [0.0; 8];
        for (pos, &beam) in BEAM_ORDER.iter().enumerate() {
            angles[pos] = beam_peak_angle(cfg, beam);
        }
        Self { angles }
    }

    /// Smallest gap between adjacent dictionary angles.
    pub fn min_spacing(&self) -> f64 {
        self.angles
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    /// Largest gap between adjacent dictionary angles.
    pub fn max_spacing(&self) -> f64 {
        self.angles
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max)
    }
}

/// Peak direction of one beam: argmax of |array_gain| restricted to the
/// designed mainlobe branch. With d > λ/2 the outermost beam also carries a
/// grating image of equal magnitude at the mirrored angle (cos shifted by one
/// full period λ/d), so a blind global argmax would be ambiguous; the
/// dictionary takes the branch the codebook was designed around.
pub fn beam_peak_angle(cfg: &CodebookConfig, beam: usize) -> f64 {
    let psi = cfg.beam_phase_multiplier as f64 * beam as f64 * cfg.phase_step;
    let period = 1.0 / cfg.spacing_wavelengths;
    let mut c = -psi / (TAU * cfg.spacing_wavelengths);
    while c < -1.0 {
        c += period;
    }
    while c > 1.0 {
        c -= period;
    }
    let seed = c.clamp(-1.0, 1.0).acos();

    // Local argmax refinement around the designed direction.
    let weights = beam_weights(cfg, beam).expect("beam index checked by caller");
    let gain_at = |a: f64| array_gain(cfg, &weights, a).norm();
    let half_window = 0.05;
    let n = 2000;
    let mut best = (seed, gain_at(seed));
    for i in 0..=n {
        let a = (seed - half_window + 2.0 * half_window * i as f64 / n as f64).clamp(1e-6, PI);
        let g = gain_at(a);
        if g > best.1 {
            best = (a, g);
        }
    }
    let h = 2.0 * half_window / n as f64;
    let (g_l, g_c, g_r) = (gain_at(best.0 - h), best.1, gain_at(best.0 + h));
    let denom = g_l - 2.0 * g_c + g_r;
    if denom.abs() < 1e-15 {
        best.0
    } else {
        best.0 + 0.5 * h * (g_l - g_r) / denom
    }
}

/// OFDM frame constants. The FFT/CP numbers are bookkeeping for timing math;
/// the RSRP model only uses the subcarrier spacing and active-carrier count.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FrameConfig {
    pub scs_khz: f64,
    pub fft_len: usize,
    pub n_active_subcarriers: usize,
    pub n_data_subcarriers: usize,
    pub cp_long: usize,
    pub cp_short: usize,
    pub sample_rate_msps: f64,
    pub carrier_ghz: f64,
    pub ssb_symbols: [usize; 2],
    pub ssb_subframes: usize,
}

impl Default for FrameConfig {
    fn default() -> Self {
        Self {
            scs_khz: 120.0,
            fft_len: 1024,
            n_active_subcarriers: 240,
            n_data_subcarriers: 792,
            cp_long: 136,
            cp_short: 72,
            sample_rate_msps: 122.88,
            carrier_ghz: 28.0,
            ssb_symbols: [2, 8],
            ssb_subframes: 4,
        }
    }
}

impl FrameConfig {
    pub fn slots_per_subframe(&self) -> usize {
        (self.scs_khz / 15.0) as usize
    }
}

/// One SSB occasion within a frame, carrying its beam-pair assignment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SsbSlot {
    pub ssb_index: usize,
    pub subframe: usize,
    pub slot: usize,
    pub start_symbol: usize,
    pub tx_beam: usize,
    pub rx_beam: usize,
}

/// Exhaustive-sweep schedule: two SSBs per slot (symbols 2 and 8) across
/// subframes 0..3, RX beam held while the TX beam polls.
pub fn ssb_schedule(
    cfg: &FrameConfig,
    b_tx: usize,
    b_rx: usize,
) -> Result<Vec<SsbSlot>, BeamError> {
    let total = b_tx * b_rx;
    if total > 64 {
        return Err(BeamError::CapacityExceeded(total));
    }
    let per_subframe = cfg.slots_per_subframe() * 2;
    Ok((0..total)
        .map(|k| SsbSlot {
            ssb_index: k,
            subframe: k / per_subframe,
            slot: (k % per_subframe) / 2,
            start_symbol: cfg.ssb_symbols[k % 2],
            tx_beam: k % b_tx,
            rx_beam: k / b_tx,
        })
        .collect())
}

/// Wall-clock span of the sweep, to the end of the subframe holding its last
/// SSB (subframes are 1 ms).
pub fn sweep_duration_ms(schedule: &[SsbSlot]) -> f64 {
    schedule
        .iter()
        .map(|s| s.subframe + 1)
        .max()
        .unwrap_or(0) as f64
}

/// Transmit, noise, and propagation knobs for the synthesis.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NoiseConfig {
    /// Per-subcarrier complex noise variance.
    pub noise_power_dbm: f64,
    pub tx_power_dbm: f64,
    pub pathloss_exponent: f64,
    /// Per-sweep Gaussian jitter applied to the bounce angles of the walls in
    /// `jitter_walls`, emulating diffuse scattering.
    pub angle_jitter_deg: f64,
    pub jitter_walls: Vec<usize>,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            noise_power_dbm: -90.0,
            tx_power_dbm: 23.0,
            pathloss_exponent: 2.0,
            angle_jitter_deg: 0.0,
            jitter_walls: Vec::new(),
        }
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Everything the sweep needs.
#[derive(Debug, Clone, Serialize, Deserialize, Default)]
pub struct SweepConfig {
    pub codebook: CodebookConfig,
    pub frame: FrameConfig,
    pub noise: NoiseConfig,
}

/// One resolved propagation path ready for channel synthesis: global angles,
/// absolute delay, and a linear received-amplitude factor (√mW) that already
/// includes transmit power, spreading loss, and reflection loss.
#[derive(Debug, Clone, Copy)]
pub struct PropagationPath {
    pub aod_global: f64,
    pub aoa_global: f64,
    pub delay_s: f64,
    pub amplitude: f64,
}

/// Resolve the scene's true paths into synthesis-ready paths, applying the
/// per-sweep diffuse jitter configured for nonsmooth walls.
pub fn propagation_paths(
    scene: &Scene,
    ue: &Point2,
    cfg: &SweepConfig,
    rng: &mut impl Rng,
) -> Vec<PropagationPath> {
    let truths = crate::geometry::ground_truth_paths(scene, &crate::geometry::Pose::new(*ue, 0.0));
    let jitter_rad = cfg.noise.angle_jitter_deg.to_radians();
    truths
        .iter()
        .map(|p| {
            let (mut aod, mut aoa) = (p.aod_global, p.aoa_global);
            if let PathKind::SingleBounce { wall } = p.kind {
                if jitter_rad > 0.0 && cfg.noise.jitter_walls.contains(&wall) {
                    let n = Normal::new(0.0, jitter_rad).expect("sigma > 0");
                    aod = wrap_angle(aod + n.sample(rng));
                    aoa = wrap_angle(aoa + n.sample(rng));
                }
            }
            PropagationPath {
                aod_global: aod,
                aoa_global: aoa,
                delay_s: p.length / SPEED_OF_LIGHT,
                amplitude: path_amplitude(p, scene, cfg),
            }
        })
        .collect()
}

/// Received-amplitude factor for one path: √(P_tx) · (λ/4π) / d^(n/2), times
/// the wall reflection loss for a bounce.
fn path_amplitude(path: &PathTruth, scene: &Scene, cfg: &SweepConfig) -> f64 {
    let lambda = SPEED_OF_LIGHT / (cfg.frame.carrier_ghz * 1e9);
    let tx_amp = dbm_to_mw(cfg.noise.tx_power_dbm).sqrt();
    let spreading =
        (lambda / (4.0 * PI)) / path.length.max(1e-3).powf(cfg.noise.pathloss_exponent / 2.0);
    let bounce = match path.kind {
        PathKind::Los => 1.0,
        PathKind::SingleBounce { wall } => {
            dbm_to_mw(-scene.walls[wall].reflectivity_db).sqrt()
        }
    };
    tx_amp * spreading * bounce
}

/// Unit-modulus pseudo-random pilot symbols standing in for the SSB sequences;
/// the adjacent-subcarrier RSRP estimator is sequence-agnostic.
pub fn pilot_sequence(n: usize, seed: u64) -> Vec<Complex64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Complex64::from_polar(1.0, rng.gen_range(0.0..TAU)))
        .collect()
}

/// Panel field-of-view taper applied to the array response in the channel
/// model: flat across the codebook span, raised-cosine shoulders, zero behind
/// the panel. A bare ULA response would alias paths from behind onto mirrored
/// front angles, and with d > λ/2 the grating-image skirts near endfire reach
/// almost full gain; a physical panel illuminates neither region.
fn fov_window(local_angle: f64) -> f64 {
    let deg = local_angle.to_degrees();
    const LO_EDGE: f64 = 28.0;
    const LO_FLAT: f64 = 40.0;
    const HI_FLAT: f64 = 150.0;
    const HI_EDGE: f64 = 162.0;
    if deg <= LO_EDGE || deg >= HI_EDGE {
        0.0
    } else if (LO_FLAT..=HI_FLAT).contains(&deg) {
        1.0
    } else if deg < LO_FLAT {
        0.5 * (1.0 - (PI * (deg - LO_EDGE) / (LO_FLAT - LO_EDGE)).cos())
    } else {
        0.5 * (1.0 - (PI * (HI_EDGE - deg) / (HI_EDGE - HI_FLAT)).cos())
    }
}

fn front_gated_gain(cfg: &CodebookConfig, weights: &[Complex64], local_angle: f64) -> Complex64 {
    array_gain(cfg, weights, local_angle) * fov_window(local_angle)
}

/// Synthesize the received subcarrier vector for one beam pair under the given
/// array orientations: sum over paths of gains × delay phasors × pilots, plus
/// circular Gaussian noise at the configured power.
#[allow(clippy::too_many_arguments)]
pub fn synth_received(
    paths: &[PropagationPath],
    cfg: &SweepConfig,
    pa_orientation: f64,
    ue_orientation: f64,
    tx_beam: usize,
    rx_beam: usize,
    pilots: &[Complex64],
    seed: u64,
) -> Result<Vec<Complex64>, BeamError> {
    let w_tx = beam_weights(&cfg.codebook, tx_beam)?;
    let w_rx = beam_weights(&cfg.codebook, rx_beam)?;
    let n = pilots.len();
    let scs_hz = cfg.frame.scs_khz * 1e3;
    let carrier_hz = cfg.frame.carrier_ghz * 1e9;

    let mut channel = vec![Complex64::new(0.0, 0.0); n];
    for path in paths {
        let g_tx = front_gated_gain(
            &cfg.codebook,
            &w_tx,
            wrap_angle(path.aod_global - pa_orientation),
        );
        let g_rx = front_gated_gain(
            &cfg.codebook,
            &w_rx,
            wrap_angle(path.aoa_global - ue_orientation),
        );
        let gain = g_tx * g_rx.conj() * path.amplitude;
        if gain.norm_sqr() == 0.0 {
            continue;
        }
        let step = Complex64::from_polar(1.0, -TAU * scs_hz * path.delay_s);
        let mut phasor = gain * Complex64::from_polar(1.0, -TAU * carrier_hz * path.delay_s);
        for c in channel.iter_mut() {
            *c += phasor;
            phasor *= step;
        }
    }

    let sigma = (dbm_to_mw(cfg.noise.noise_power_dbm) / 2.0).sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    Ok(pilots
        .iter()
        .zip(channel.iter())
        .map(|(s, c)| {
            s * c + Complex64::new(sigma * normal.sample(&mut rng), sigma * normal.sample(&mut rng))
        })
        .collect())
}

/// RSRP from adjacent-subcarrier products: the delay-induced linear phase
/// cancels into a constant rotation, so a flat channel of gain g yields |g|².
pub fn rsrp(y: &[Complex64], pilots: &[Complex64]) -> Result<f64, BeamError> {
    if y.len() < 2 || y.len() != pilots.len() {
        return Err(BeamError::TooFewSubcarriers(y.len().min(pilots.len())));
    }
    let acc: Complex64 = y
        .windows(2)
        .zip(pilots.windows(2))
        .map(|(yw, sw)| (yw[0] * yw[1].conj()) / (sw[0] * sw[1].conj()))
        .sum();
    Ok(acc.norm() / (y.len() - 1) as f64)
}

/// Expected RSRP of a noise-only cell: |Σ of (N−1) uncorrelated σ⁴-variance
/// products| has Rayleigh mean σ²·√(π(N−1)/4) under a Gaussian approximation
/// of the product sum (a few percent low of the exact value; it is used as a
/// threshold scale, not as a calibrated statistic).
pub fn noise_floor_rsrp(noise: &NoiseConfig, n_subcarriers: usize) -> f64 {
    dbm_to_mw(noise.noise_power_dbm) * (PI / (4.0 * (n_subcarriers as f64 - 1.0))).sqrt()
}

/// Three sector orientations per side; together the sectors cover the full
/// circle, 120° apart.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct OrientationSchedule {
    /// PA array-axis orientations, radians, one per block column.
    pub pa_sectors: [f64; 3],
    /// UE array-axis orientations, radians, one per block row.
    pub ue_sectors: [f64; 3],
}

/// The grouped 24×24 RSRP matrix: a 3×3 grid of 8×8 orientation-pair blocks,
/// rows indexing the RX (UE) side and columns the TX (PA) side, with beams
/// placed in dictionary order on both axes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RsrpMatrix {
    values: Vec<f64>,
    /// Per block (row, col): the (PA, UE) orientations that compensate the
    /// dictionary angle into (AOD, AOA).
    pub orientation_pairs: [[(f64, f64); 3]; 3],
    pub beam_order: [usize; 8],
}

impl RsrpMatrix {
    pub const SIZE: usize = 24;

    pub fn zeros(schedule: &OrientationSchedule) -> Self {
        let mut orientation_pairs = [[(0.0, 0.0); 3]; 3];
        for (br, row) in orientation_pairs.iter_mut().enumerate() {
            for (bc, pair) in row.iter_mut().enumerate() {
                *pair = (schedule.pa_sectors[bc], schedule.ue_sectors[br]);
            }
        }
        Self {
            values: vec![0.0; Self::SIZE * Self::SIZE],
            orientation_pairs,
            beam_order: BEAM_ORDER,
        }
    }

    pub fn from_values(values: Vec<f64>, schedule: &OrientationSchedule) -> Self {
        assert_eq!(values.len(), Self::SIZE * Self::SIZE);
        let mut m = Self::zeros(schedule);
        m.values = values;
        m
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * Self::SIZE + col]
    }

    pub fn set(&mut self, row: usize, col: usize, value: f64) {
        self.values[row * Self::SIZE + col] = value;
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn total_energy(&self) -> f64 {
        self.values.iter().sum()
    }

    /// Strongest cell; ties break towards the smallest (row, col).
    pub fn argmax(&self) -> (usize, usize, f64) {
        let mut best = (0, 0, f64::NEG_INFINITY);
        for r in 0..Self::SIZE {
            for c in 0..Self::SIZE {
                let v = self.get(r, c);
                if v > best.2 {
                    best = (r, c, v);
                }
            }
        }
        best
    }
}

/// Run the full 9-orientation-pair × 64-beam-pair sweep for one UE position.
/// Deterministic: every beam-pair entry derives its own noise stream from the
/// seed, so assembly order does not matter.
pub fn sweep(
    scene: &Scene,
    ue: &Point2,
    schedule: &OrientationSchedule,
    cfg: &SweepConfig,
    seed: u64,
) -> RsrpMatrix {
    let pilots = pilot_sequence(cfg.frame.n_active_subcarriers, mix_seed(seed, &[0x910d]));
    let mut jitter_rng = ChaCha8Rng::seed_from_u64(mix_seed(seed, &[0x71e2]));
    let paths = propagation_paths(scene, ue, cfg, &mut jitter_rng);
    let mut matrix = RsrpMatrix::zeros(schedule);

    for (block_row, &ue_sector) in schedule.ue_sectors.iter().enumerate() {
        for (block_col, &pa_sector) in schedule.pa_sectors.iter().enumerate() {
            for k in 0..(cfg.codebook.n_beams * cfg.codebook.n_beams) {
                let tx = k % cfg.codebook.n_beams;
                let rx = k / cfg.codebook.n_beams;
                let entry_seed =
                    mix_seed(seed, &[block_row as u64, block_col as u64, k as u64]);
                let y = synth_received(
                    &paths, cfg, pa_sector, ue_sector, tx, rx, &pilots, entry_seed,
                )
                .expect("beam indices in range");
                let value = rsrp(&y, &pilots).expect("pilot length >= 2");
                matrix.set(
                    8 * block_row + POS_OF_BEAM[rx],
                    8 * block_col + POS_OF_BEAM[tx],
                    value,
                );
            }
        }
    }
    matrix
}

/// SplitMix64-style seed derivation for per-entry noise streams.
pub fn mix_seed(seed: u64, parts: &[u64]) -> u64 {
    let mut z = seed ^ 0x9e37_79b9_7f4a_7c15;
    for &p in parts {
        z = z.wrapping_add(p).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z ^= z >> 27;
        z = z.wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^= z >> 31;
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Pose, Rect, Wall};
    use rand::Rng;

    #[test]
    fn beam_weights_phases() {
        let cfg = CodebookConfig::default();
        let w0 = beam_weights(&cfg, 0).unwrap();
        for w in &w0 {
            assert!((w.arg()).abs() < 1e-12);
        }
        let w1 = beam_weights(&cfg, 1).unwrap();
        for (m, w) in w1.iter().enumerate() {
            let expect = (m as f64 * 45.0).to_radians();
            assert!((wrap_angle(w.arg() - expect)).abs() < 1e-12);
            assert!((w.norm() - 0.5).abs() < 1e-12);
        }
        assert!(beam_weights(&cfg, 8).is_err());
    }

    #[test]
    fn beam_peaks_match_dictionary_table() {
        let cfg = CodebookConfig::default();
        let dict = BeamDictionary::from_codebook(&cfg);
        let expected = [50.4, 64.8, 77.7, 90.0, 102.3, 115.2, 129.6, 148.3];
        for (angle, expect) in dict.angles.iter().zip(expected) {
            assert!(
                (angle.to_degrees() - expect).abs() < 1.0,
                "peak {} vs table {}",
                angle.to_degrees(),
                expect
            );
        }
        assert!(dict.min_spacing().to_degrees() > 11.0);
        assert!(dict.max_spacing().to_degrees() < 19.0);
    }

    #[test]
    fn coherent_peak_gain_is_sqrt_n() {
        let cfg = CodebookConfig::default();
        for beam in 0..8 {
            let w = beam_weights(&cfg, beam).unwrap();
            let peak = beam_peak_angle(&cfg, beam);
            let g = array_gain(&cfg, &w, peak).norm();
            assert!((g - 2.0).abs() < 1e-3, "beam {beam}: {g}");
        }
    }

    #[test]
    fn schedule_covers_frame() {
        let cfg = FrameConfig::default();
        let sched = ssb_schedule(&cfg, 8, 8).unwrap();
        assert_eq!(sched.len(), 64);
        assert_eq!(
            sched[0],
            SsbSlot {
                ssb_index: 0,
                subframe: 0,
                slot: 0,
                start_symbol: 2,
                tx_beam: 0,
                rx_beam: 0
            }
        );
        assert_eq!(
            sched[63],
            SsbSlot {
                ssb_index: 63,
                subframe: 3,
                slot: 7,
                start_symbol: 8,
                tx_beam: 7,
                rx_beam: 7
            }
        );
        let mut occupied: Vec<(usize, usize, usize)> = sched
            .iter()
            .map(|s| (s.subframe, s.slot, s.start_symbol))
            .collect();
        occupied.sort_unstable();
        occupied.dedup();
        assert_eq!(occupied.len(), 64, "SSBs must not share a symbol slot");
        assert_eq!(sweep_duration_ms(&sched), 4.0);
        assert!(ssb_schedule(&cfg, 9, 8).is_err());
    }

    #[test]
    fn rsrp_flat_channel_and_scaling() {
        let pilots = pilot_sequence(240, 7);
        let y: Vec<Complex64> = pilots.clone();
        assert!((rsrp(&y, &pilots).unwrap() - 1.0).abs() < 1e-12);

        let g = Complex64::new(0.3, -0.4);
        let scaled: Vec<Complex64> = pilots.iter().map(|s| s * g).collect();
        assert!((rsrp(&scaled, &pilots).unwrap() - g.norm_sqr()).abs() < 1e-12);
        assert!(rsrp(&y[..1], &pilots[..1]).is_err());
    }

    #[test]
    fn rsrp_delay_phase_cancels_exactly() {
        let pilots = pilot_sequence(240, 9);
        let g = Complex64::new(-0.7, 0.2);
        let tau = 43.7e-9;
        let scs = 120e3;
        let y: Vec<Complex64> = pilots
            .iter()
            .enumerate()
            .map(|(n, s)| s * g * Complex64::from_polar(1.0, -TAU * scs * tau * n as f64))
            .collect();
        assert!((rsrp(&y, &pilots).unwrap() - g.norm_sqr()).abs() < 1e-12);
    }

    #[test]
    fn rsrp_noise_floor_statistics() {
        let noise = NoiseConfig {
            noise_power_dbm: -80.0,
            ..NoiseConfig::default()
        };
        let pilots = pilot_sequence(240, 3);
        let cfg = SweepConfig {
            noise: noise.clone(),
            ..SweepConfig::default()
        };
        let trials = 400;
        let mut sum = 0.0;
        for t in 0..trials {
            let y = synth_received(&[], &cfg, 0.0, 0.0, 0, 0, &pilots, 1000 + t).unwrap();
            sum += rsrp(&y, &pilots).unwrap();
        }
        let mean = sum / trials as f64;

        // Direct Monte-Carlo oracle: evaluate the estimator formula on raw
        // Gaussian noise with an independent accumulation.
        let sigma = (dbm_to_mw(-80.0) / 2.0).sqrt();
        let mut rng = ChaCha8Rng::seed_from_u64(0xfeed);
        let normal = Normal::new(0.0, sigma).unwrap();
        let mut oracle_sum = 0.0;
        for _ in 0..trials {
            let y: Vec<Complex64> = (0..240)
                .map(|_| Complex64::new(normal.sample(&mut rng), normal.sample(&mut rng)))
                .collect();
            let mut acc = Complex64::new(0.0, 0.0);
            for n in 0..239 {
                acc += y[n] * y[n + 1].conj() / (pilots[n] * pilots[n + 1].conj());
            }
            oracle_sum += acc.norm() / 239.0;
        }
        let oracle = oracle_sum / trials as f64;
        assert!(
            (mean / oracle - 1.0).abs() < 0.05,
            "mean {mean:.3e} vs Monte-Carlo oracle {oracle:.3e}"
        );
        // The analytic floor is a scale, good to a few percent.
        let floor = noise_floor_rsrp(&noise, 240);
        assert!((mean / floor - 1.0).abs() < 0.10);
    }

    #[test]
    fn synth_single_path_constant_gain() {
        let mut cfg = SweepConfig::default();
        cfg.noise.noise_power_dbm = -300.0;
        let path = PropagationPath {
            aod_global: (90f64).to_radians(),
            aoa_global: (90f64).to_radians(),
            delay_s: 0.0,
            amplitude: 1.0,
        };
        let pilots = pilot_sequence(64, 5);
        let y = synth_received(&[path], &cfg, 0.0, 0.0, 0, 0, &pilots, 1).unwrap();
        let g0 = y[0] / pilots[0];
        for (yn, sn) in y.iter().zip(&pilots) {
            assert!((yn / sn - g0).norm() < 1e-9, "gain must be flat");
        }
        // Boresight beam 0 on both sides: |g| = √4·√4 = 4.
        assert!((g0.norm() - 4.0).abs() < 1e-9);
    }

    #[test]
    fn synth_opposite_gains_cancel() {
        let mut cfg = SweepConfig::default();
        cfg.noise.noise_power_dbm = -300.0;
        let a = PropagationPath {
            aod_global: (90f64).to_radians(),
            aoa_global: (90f64).to_radians(),
            delay_s: 10e-9,
            amplitude: 1.0,
        };
        // Same geometry, amplitude flipped: destructive superposition.
        let b = PropagationPath {
            amplitude: -1.0,
            ..a
        };
        let pilots = pilot_sequence(64, 5);
        let y = synth_received(&[a, b], &cfg, 0.0, 0.0, 0, 0, &pilots, 1).unwrap();
        for yn in &y {
            assert!(yn.norm() < 1e-9);
        }
    }

    #[test]
    fn synth_mean_power_matches_analytic() {
        let mut cfg = SweepConfig::default();
        cfg.noise.noise_power_dbm = -10.0;
        let path = PropagationPath {
            aod_global: (100f64).to_radians(),
            aoa_global: (75f64).to_radians(),
            delay_s: 25e-9,
            amplitude: 0.8,
        };
        let pilots = pilot_sequence(16, 2);
        let w = beam_weights(&cfg.codebook, 2).unwrap();
        let g_tx = array_gain(&cfg.codebook, &w, (100f64).to_radians()).norm_sqr();
        let w_rx = beam_weights(&cfg.codebook, 5).unwrap();
        let g_rx = array_gain(&cfg.codebook, &w_rx, (75f64).to_radians()).norm_sqr();
        let signal = 0.64 * g_tx * g_rx;
        let noise = dbm_to_mw(-10.0);
        let expect = signal + noise;

        let draws = 10_000;
        let mut sum = 0.0;
        for t in 0..draws {
            let y = synth_received(&[path], &cfg, 0.0, 0.0, 2, 5, &pilots, t).unwrap();
            sum += y.iter().map(|v| v.norm_sqr()).sum::<f64>() / y.len() as f64;
        }
        let mean = sum / draws as f64;
        // Per-sample variance of |y|² is dominated by the noise terms; with
        // 16·10⁴ samples a 3σ band is comfortably below 2%.
        assert!(
            (mean / expect - 1.0).abs() < 0.02,
            "mean {mean:.4} vs analytic {expect:.4}"
        );
    }

    fn desk_scene() -> (Scene, Point2) {
        let pa = Pose::new(Point2::new(5.667, 6.290), (0f64).to_radians());
        let walls = vec![
            Wall::new(Point2::new(0.0, 7.66), Point2::new(10.0, 7.66), 5.0),
            Wall::new(Point2::new(0.2, 0.2), Point2::new(0.2, 7.66), 5.0),
            Wall::new(Point2::new(0.2, 0.2), Point2::new(10.0, 0.2), 5.0),
        ];
        let bounds = Rect::new(Point2::new(0.0, 0.0), Point2::new(10.5, 8.5));
        (
            Scene::new(pa, walls, bounds).unwrap(),
            Point2::new(3.0, 3.0),
        )
    }

    fn full_circle_schedule() -> OrientationSchedule {
        OrientationSchedule {
            pa_sectors: [0.0, (120f64).to_radians(), (240f64).to_radians()],
            ue_sectors: [0.0, (120f64).to_radians(), (240f64).to_radians()],
        }
    }

    #[test]
    fn sweep_is_deterministic() {
        let (scene, ue) = desk_scene();
        let cfg = SweepConfig::default();
        let sched = full_circle_schedule();
        let a = sweep(&scene, &ue, &sched, &cfg, 42);
        let b = sweep(&scene, &ue, &sched, &cfg, 42);
        assert_eq!(a, b);
        let c = sweep(&scene, &ue, &sched, &cfg, 43);
        assert_ne!(a, c);
    }

    #[test]
    fn sweep_empty_scene_sits_at_noise_floor() {
        let scene = Scene::new(
            Pose::new(Point2::new(0.0, 0.0), 0.0),
            vec![],
            Rect::new(Point2::new(-5.0, -5.0), Point2::new(5.0, 5.0)),
        )
        .unwrap();
        // No paths at all: put the UE on top of the PA so even LOS vanishes.
        let cfg = SweepConfig::default();
        let m = sweep(
            &scene,
            &Point2::new(0.0, 0.0),
            &full_circle_schedule(),
            &cfg,
            7,
        );
        let floor = noise_floor_rsrp(&cfg.noise, cfg.frame.n_active_subcarriers);
        for r in 0..24 {
            for c in 0..24 {
                assert!(m.get(r, c) < 20.0 * floor, "cell ({r},{c}) above floor");
            }
        }
    }

    #[test]
    fn single_path_argmax_lands_on_nearest_dictionary_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let cfg = SweepConfig {
            noise: NoiseConfig {
                noise_power_dbm: -140.0,
                ..NoiseConfig::default()
            },
            ..SweepConfig::default()
        };
        let dict = BeamDictionary::from_codebook(&cfg.codebook);
        let sched = full_circle_schedule();
        let pilots = pilot_sequence(cfg.frame.n_active_subcarriers, mix_seed(5, &[0x910d]));
        // The dictionary spans ~98° per 120° sector; only angles inside some
        // sector's span have a well-defined nearest dictionary entry.
        let covered = |angle: f64, sectors: &[f64; 3]| {
            sectors.iter().any(|&s| {
                let local = wrap_angle(angle - s);
                local >= dict.angles[0] - 1e-9 && local <= dict.angles[7] + 1e-9
            })
        };
        let mut tested = 0;
        for trial in 0..40 {
            let aod = wrap_angle(rng.gen_range(0.0..TAU));
            let aoa = wrap_angle(rng.gen_range(0.0..TAU));
            if !covered(aod, &sched.pa_sectors) || !covered(aoa, &sched.ue_sectors) {
                continue;
            }
            tested += 1;
            let path = PropagationPath {
                aod_global: aod,
                aoa_global: aoa,
                delay_s: 20e-9,
                amplitude: 1e-3,
            };
            let mut matrix = RsrpMatrix::zeros(&sched);
            for br in 0..3 {
                for bc in 0..3 {
                    for k in 0..64 {
                        let y = synth_received(
                            &[path],
                            &cfg,
                            sched.pa_sectors[bc],
                            sched.ue_sectors[br],
                            k % 8,
                            k / 8,
                            &pilots,
                            mix_seed(trial, &[br as u64, bc as u64, k as u64]),
                        )
                        .unwrap();
                        matrix.set(
                            8 * br + POS_OF_BEAM[k / 8],
                            8 * bc + POS_OF_BEAM[k % 8],
                            rsrp(&y, &pilots).unwrap(),
                        );
                    }
                }
            }
            let (r, c, _) = matrix.argmax();
            let (pa_or, ue_or) = matrix.orientation_pairs[r / 8][c / 8];
            let est_aod = wrap_angle(dict.angles[c % 8] + pa_or);
            let est_aoa = wrap_angle(dict.angles[r % 8] + ue_or);

            // The array-factor bins are uniform in cos(angle), so the argmax
            // beam is the cos-nearest dictionary entry. In angle terms this is
            // within half the maximum beam spacing except for the ~1°-wide
            // slivers at the outermost bin edge where the cos midpoint and the
            // angle midpoint disagree.
            let cos_nearest = |angle: f64, sector: f64| {
                let local = wrap_angle(angle - sector);
                (0..8)
                    .min_by(|&a, &b| {
                        let da = (dict.angles[a].cos() - local.cos()).abs();
                        let db = (dict.angles[b].cos() - local.cos()).abs();
                        da.partial_cmp(&db).unwrap()
                    })
                    .unwrap()
            };
            assert_eq!(c % 8, cos_nearest(aod, pa_or), "AOD beam choice");
            assert_eq!(r % 8, cos_nearest(aoa, ue_or), "AOA beam choice");
            let half_max = dict.max_spacing() / 2.0;
            for (est, truth) in [(est_aod, aod), (est_aoa, aoa)] {
                let err = crate::geometry::angle_diff(est, truth);
                assert!(err <= half_max + (1f64).to_radians(), "grid error {err}");
            }
        }
        assert!(tested >= 10, "too few covered draws ({tested})");
    }
}
