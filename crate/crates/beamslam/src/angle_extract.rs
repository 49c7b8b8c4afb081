//! Successive-cancellation extraction of (AOD, AOA) pairs from the grouped
//! RSRP matrix: find the strongest cell, look its angles up in the compensated
//! beam dictionary, grow a square support box until the energy ring stops
//! paying, zero the box, repeat until the residual energy is spent.

use crate::beamsim::{noise_floor_rsrp, BeamDictionary, NoiseConfig, RsrpMatrix};
use crate::geometry::{canonical_angle, wrap_angle};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ExtractError {
    #[error("cell ({0}, {1}) outside the 24x24 matrix")]
    CellOutOfRange(usize, usize),
}

/// Stopping thresholds of the successive cancellation loop.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ExtractConfig {
    /// Support growth continues while the energy ring gains more than this
    /// fraction of the current box energy.
    pub eps_support: f64,
    /// Stop when the residual total energy drops to this level (linear power).
    pub eps_residual: f64,
    pub max_paths: usize,
}

impl ExtractConfig {
    pub fn new(eps_support: f64, eps_residual: f64, max_paths: usize) -> Self {
        Self {
            eps_support,
            eps_residual,
            max_paths,
        }
    }

    /// Default thresholds for a given noise configuration: ε_se = 0.05 and
    /// ε_re = 3× the expected all-noise matrix energy.
    pub fn for_noise(noise: &NoiseConfig, n_subcarriers: usize) -> Self {
        let cells = (RsrpMatrix::SIZE * RsrpMatrix::SIZE) as f64;
        Self {
            eps_support: 0.05,
            eps_residual: 3.0 * cells * noise_floor_rsrp(noise, n_subcarriers),
            max_paths: 6,
        }
    }
}

/// One extracted path: orientation-compensated angles off the dictionary grid,
/// the peak cell power, and the support half-width the cancellation used.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AngleMeasurement {
    /// Compensated AOD (dictionary angle plus the block's PA orientation).
    pub aod: f64,
    /// Compensated AOA (dictionary angle plus the block's UE orientation).
    pub aoa: f64,
    pub peak_power: f64,
    pub support_halfwidth: usize,
    /// Matrix cell the peak was found at.
    pub cell: (usize, usize),
}

impl AngleMeasurement {
    /// Measurement carrying only angles, for generator/replay modes that skip
    /// the RSRP stage.
    pub fn from_angles(aod: f64, aoa: f64) -> Self {
        Self {
            aod: canonical_angle(aod),
            aoa: canonical_angle(aoa),
            peak_power: f64::NAN,
            support_halfwidth: 0,
            cell: (0, 0),
        }
    }
}

/// Map a matrix cell to compensated (AOD, AOA): the dictionary angle of its
/// in-block position plus the owning block's sector orientations.
pub fn compensate_orientation(
    cell: (usize, usize),
    dict: &BeamDictionary,
    orientation_pairs: &[[(f64, f64); 3]; 3],
) -> Result<(f64, f64), ExtractError> {
    let (row, col) = cell;
    if row >= RsrpMatrix::SIZE || col >= RsrpMatrix::SIZE {
        return Err(ExtractError::CellOutOfRange(row, col));
    }
    let (pa_orientation, ue_orientation) = orientation_pairs[row / 8][col / 8];
    Ok((
        wrap_angle(dict.angles[col % 8] + pa_orientation),
        wrap_angle(dict.angles[row % 8] + ue_orientation),
    ))
}

/// Energy of the square box of half-width `s` centered at (row, col), index
/// ranges clipped at the matrix borders.
fn box_energy(m: &RsrpMatrix, row: usize, col: usize, s: usize) -> f64 {
    let lo_r = row.saturating_sub(s);
    let hi_r = (row + s).min(RsrpMatrix::SIZE - 1);
    let lo_c = col.saturating_sub(s);
    let hi_c = (col + s).min(RsrpMatrix::SIZE - 1);
    let mut sum = 0.0;
    for r in lo_r..=hi_r {
        for c in lo_c..=hi_c {
            sum += m.get(r, c);
        }
    }
    sum
}

fn zero_box(m: &mut RsrpMatrix, row: usize, col: usize, s: usize) {
    let lo_r = row.saturating_sub(s);
    let hi_r = (row + s).min(RsrpMatrix::SIZE - 1);
    let lo_c = col.saturating_sub(s);
    let hi_c = (col + s).min(RsrpMatrix::SIZE - 1);
    for r in lo_r..=hi_r {
        for c in lo_c..=hi_c {
            m.set(r, c, 0.0);
        }
    }
}

/// Successive cancellation over the grouped RSRP matrix. Returns measurements
/// in decreasing peak order (successive argmax values cannot increase). Ties
/// at the argmax break towards the smallest (row, col).
pub fn extract_angles(
    matrix: &RsrpMatrix,
    dict: &BeamDictionary,
    cfg: &ExtractConfig,
) -> Vec<AngleMeasurement> {
    let mut residual = matrix.clone();
    let mut out = Vec::new();
    while out.len() < cfg.max_paths && residual.total_energy() > cfg.eps_residual {
        let (row, col, peak) = residual.argmax();
        if peak <= 0.0 {
            break;
        }
        let mut s = 1usize;
        while s < RsrpMatrix::SIZE {
            let eta = box_energy(&residual, row, col, s);
            let eta_grown = box_energy(&residual, row, col, s + 1);
            if eta > 0.0 && (eta_grown - eta) / eta > cfg.eps_support {
                s += 1;
            } else {
                break;
            }
        }
        let (aod, aoa) = compensate_orientation((row, col), dict, &residual.orientation_pairs)
            .expect("argmax cell is in range");
        out.push(AngleMeasurement {
            aod: canonical_angle(aod),
            aoa: canonical_angle(aoa),
            peak_power: peak,
            support_halfwidth: s,
            cell: (row, col),
        });
        zero_box(&mut residual, row, col, s);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::beamsim::{CodebookConfig, OrientationSchedule};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn dict() -> BeamDictionary {
        BeamDictionary::from_codebook(&CodebookConfig::default())
    }

    fn schedule() -> OrientationSchedule {
        OrientationSchedule {
            pa_sectors: [0.0, (120f64).to_radians(), (240f64).to_radians()],
            ue_sectors: [(90f64).to_radians(), (210f64).to_radians(), (330f64).to_radians()],
        }
    }

    fn blob_matrix(blobs: &[(usize, usize, f64, f64)]) -> RsrpMatrix {
        // (row, col, peak, sigma) Gaussian bumps on a zero background.
        let mut values = vec![0.0; 24 * 24];
        for &(br, bc, peak, sigma) in blobs {
            for r in 0..24 {
                for c in 0..24 {
                    let d2 = (r as f64 - br as f64).powi(2) + (c as f64 - bc as f64).powi(2);
                    values[r * 24 + c] += peak * (-d2 / (2.0 * sigma * sigma)).exp();
                }
            }
        }
        RsrpMatrix::from_values(values, &schedule())
    }

    #[test]
    fn empty_matrix_yields_nothing() {
        let m = RsrpMatrix::from_values(vec![0.0; 576], &schedule());
        let cfg = ExtractConfig::new(0.05, 1e-12, 6);
        assert!(extract_angles(&m, &dict(), &cfg).is_empty());
    }

    /// Brute-force single-blob oracle: enumerate every cell for the maximum
    /// and every support size with an independent ring-ratio evaluation.
    #[test]
    fn single_blob_matches_enumeration_oracle() {
        // σ = 0.6 keeps essentially all mass in a 3×3 box; ε_re sits above the
        // residual tail energy, so exactly one path comes out.
        let m = blob_matrix(&[(10, 14, 1.0, 0.6)]);
        let cfg = ExtractConfig::new(0.05, 0.05, 6);
        let got = extract_angles(&m, &dict(), &cfg);
        assert_eq!(got.len(), 1);

        let mut best = (0usize, 0usize, f64::NEG_INFINITY);
        for r in 0..24 {
            for c in 0..24 {
                if m.get(r, c) > best.2 {
                    best = (r, c, m.get(r, c));
                }
            }
        }
        assert_eq!(got[0].cell, (best.0, best.1));

        let ring_sum = |s: usize| -> f64 {
            let mut sum = 0.0;
            for r in 0..24i64 {
                for c in 0..24i64 {
                    let dr = (r - best.0 as i64).abs();
                    let dc = (c - best.1 as i64).abs();
                    if dr.max(dc) <= s as i64 {
                        sum += m.get(r as usize, c as usize);
                    }
                }
            }
            sum
        };
        let mut s_oracle = 1;
        while (ring_sum(s_oracle + 1) - ring_sum(s_oracle)) / ring_sum(s_oracle) > 0.05 {
            s_oracle += 1;
        }
        assert_eq!(got[0].support_halfwidth, s_oracle);
        assert!((got[0].peak_power - best.2).abs() < 1e-12);
    }

    #[test]
    fn four_blobs_in_reported_power_ratio() {
        // Peak powers in the ratio of the reported strongest-path levels:
        // -40.5 / -44.5 / -47.8 / -48.8 dBm.
        let p = |dbm: f64| 10f64.powf(dbm / 10.0);
        let m = blob_matrix(&[
            (3, 4, p(-40.5), 0.8),
            (11, 13, p(-44.5), 0.8),
            (19, 6, p(-47.8), 0.8),
            (6, 19, p(-48.8), 0.8),
        ]);
        let cfg = ExtractConfig::new(0.05, p(-48.8) * 0.5, 6);
        let got = extract_angles(&m, &dict(), &cfg);
        assert_eq!(got.len(), 4);
        assert_eq!(got[0].cell, (3, 4));
        assert_eq!(got[1].cell, (11, 13));
        assert_eq!(got[2].cell, (19, 6));
        assert_eq!(got[3].cell, (6, 19));
        for w in got.windows(2) {
            assert!(w[0].peak_power >= w[1].peak_power, "strongest first");
        }
    }

    #[test]
    fn compensation_examples() {
        let d = dict();
        let pairs = RsrpMatrix::zeros(&schedule()).orientation_pairs;
        // Cell (0,0): first block, sector orientations (0°, 90°).
        let (aod, aoa) = compensate_orientation((0, 0), &d, &pairs).unwrap();
        assert!((aod.to_degrees() - d.angles[0].to_degrees()).abs() < 1e-9);
        assert!((aoa.to_degrees() - (d.angles[0].to_degrees() + 90.0)).abs() < 1e-9);

        // Zero-orientation sector leaves the dictionary angle unchanged.
        let zero_sched = OrientationSchedule {
            pa_sectors: [0.0; 3],
            ue_sectors: [0.0; 3],
        };
        let zero_pairs = RsrpMatrix::zeros(&zero_sched).orientation_pairs;
        let (aod, aoa) = compensate_orientation((5, 2), &d, &zero_pairs).unwrap();
        assert!((aod - d.angles[2]).abs() < 1e-12);
        assert!((aoa - d.angles[5]).abs() < 1e-12);

        // Full-circle wrap: 148.3° + 225° lands at 13.3°.
        let wrap_sched = OrientationSchedule {
            pa_sectors: [(225f64).to_radians(); 3],
            ue_sectors: [0.0; 3],
        };
        let wrap_pairs = RsrpMatrix::zeros(&wrap_sched).orientation_pairs;
        let (aod, _) = compensate_orientation((0, 7), &d, &wrap_pairs).unwrap();
        let expect = d.angles[7].to_degrees() + 225.0 - 360.0;
        assert!((aod.to_degrees() - expect).abs() < 1e-9, "{}", aod.to_degrees());

        assert_eq!(
            compensate_orientation((24, 0), &d, &pairs),
            Err(ExtractError::CellOutOfRange(24, 0))
        );
    }

    #[test]
    fn residual_energy_strictly_decreases_and_removals_are_disjoint() {
        let m = blob_matrix(&[(4, 4, 1.0, 1.0), (12, 18, 0.7, 1.2), (20, 9, 0.4, 0.9)]);
        let cfg = ExtractConfig::new(0.05, 1e-9, 6);

        let mut residual = m.clone();
        let mut removed_cells: Vec<Vec<usize>> = Vec::new();
        let mut energies = vec![residual.total_energy()];
        for meas in extract_angles(&m, &dict(), &cfg) {
            let s = meas.support_halfwidth;
            let mut cells = Vec::new();
            for r in meas.cell.0.saturating_sub(s)..=(meas.cell.0 + s).min(23) {
                for c in meas.cell.1.saturating_sub(s)..=(meas.cell.1 + s).min(23) {
                    if residual.get(r, c) > 0.0 {
                        cells.push(r * 24 + c);
                        residual.set(r, c, 0.0);
                    }
                }
            }
            energies.push(residual.total_energy());
            removed_cells.push(cells);
        }
        for w in energies.windows(2) {
            assert!(w[1] < w[0], "energy must strictly decrease");
        }
        for i in 0..removed_cells.len() {
            for j in (i + 1)..removed_cells.len() {
                assert!(
                    removed_cells[i].iter().all(|c| !removed_cells[j].contains(c)),
                    "removal sets must be disjoint"
                );
            }
        }
    }

    #[test]
    fn block_permutation_permutes_angles() {
        let m = blob_matrix(&[(2, 3, 1.0, 0.8), (13, 12, 0.6, 0.8), (21, 20, 0.3, 0.8)]);
        let cfg = ExtractConfig::new(0.05, 1e-6, 6);
        let base = extract_angles(&m, &dict(), &cfg);

        // Swap block rows 0 and 1 together with their sector metadata.
        let mut swapped_values = vec![0.0; 576];
        for r in 0..24 {
            let src = match r / 8 {
                0 => r + 8,
                1 => r - 8,
                _ => r,
            };
            for c in 0..24 {
                swapped_values[r * 24 + c] = m.get(src, c);
            }
        }
        let swapped_sched = OrientationSchedule {
            pa_sectors: [0.0, (120f64).to_radians(), (240f64).to_radians()],
            ue_sectors: [(210f64).to_radians(), (90f64).to_radians(), (330f64).to_radians()],
        };
        let swapped = RsrpMatrix::from_values(swapped_values, &swapped_sched);
        let permuted = extract_angles(&swapped, &dict(), &cfg);

        let mut a: Vec<(i64, i64)> = base
            .iter()
            .map(|m| ((m.aod.to_degrees() * 1e6) as i64, (m.aoa.to_degrees() * 1e6) as i64))
            .collect();
        let mut b: Vec<(i64, i64)> = permuted
            .iter()
            .map(|m| ((m.aod.to_degrees() * 1e6) as i64, (m.aoa.to_degrees() * 1e6) as i64))
            .collect();
        a.sort_unstable();
        b.sort_unstable();
        assert_eq!(a, b);
    }

    /// Exhaustive-search oracle on separated blobs: the extracted cells must be
    /// exactly the top-k strict local maxima.
    #[test]
    fn separated_blobs_match_local_maxima_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(5150);
        for _ in 0..50 {
            let k = rng.gen_range(1..=5);
            let mut centers: Vec<(usize, usize)> = Vec::new();
            while centers.len() < k {
                let cand = (rng.gen_range(2..22), rng.gen_range(2..22));
                if centers
                    .iter()
                    .all(|c| c.0.abs_diff(cand.0).max(c.1.abs_diff(cand.1)) >= 7)
                {
                    centers.push(cand);
                }
            }
            let blobs: Vec<(usize, usize, f64, f64)> = centers
                .iter()
                .enumerate()
                .map(|(i, &(r, c))| (r, c, 1.0 / (1.3f64).powi(i as i32), 0.8))
                .collect();
            let m = blob_matrix(&blobs);
            let min_peak = blobs.iter().map(|b| b.2).fold(f64::INFINITY, f64::min);
            let cfg = ExtractConfig::new(0.05, 0.3 * min_peak, 6);
            let got = extract_angles(&m, &dict(), &cfg);
            assert_eq!(got.len(), k, "expected {k} paths");

            let mut maxima: Vec<(usize, usize, f64)> = Vec::new();
            for r in 0..24usize {
                for c in 0..24usize {
                    let v = m.get(r, c);
                    let mut is_max = v > 0.0;
                    for dr in -1i64..=1 {
                        for dc in -1i64..=1 {
                            if dr == 0 && dc == 0 {
                                continue;
                            }
                            let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                            if (0..24).contains(&nr) && (0..24).contains(&nc)
                                && m.get(nr as usize, nc as usize) >= v
                            {
                                is_max = false;
                            }
                        }
                    }
                    if is_max {
                        maxima.push((r, c, v));
                    }
                }
            }
            maxima.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
            let oracle: Vec<(usize, usize)> =
                maxima.iter().take(got.len()).map(|m| (m.0, m.1)).collect();
            let mut got_cells: Vec<(usize, usize)> = got.iter().map(|g| g.cell).collect();
            let mut oracle_cells = oracle.clone();
            got_cells.sort_unstable();
            oracle_cells.sort_unstable();
            assert_eq!(got_cells, oracle_cells);
        }
    }

    #[test]
    fn max_paths_caps_output() {
        let m = blob_matrix(&[
            (2, 2, 1.0, 0.7),
            (2, 20, 0.9, 0.7),
            (12, 12, 0.8, 0.7),
            (20, 2, 0.7, 0.7),
            (20, 20, 0.6, 0.7),
        ]);
        let cfg = ExtractConfig::new(0.05, 1e-9, 3);
        assert_eq!(extract_angles(&m, &dict(), &cfg).len(), 3);
    }
}
