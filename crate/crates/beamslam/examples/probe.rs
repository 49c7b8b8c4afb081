// Scratch diagnostics used while tuning; not part of the public surface.
use beamslam::beamsim::mw_to_dbm;
use beamslam::geometry::{angle_diff, ground_truth_paths, PathKind, Pose};
use beamslam::runner::run;
use beamslam::scenario::{load_scenario, synthesize_track};
use std::path::Path;

fn main() {
    let path = Path::new("crates/beamslam/fixtures/scenario1.toml");
    // Criterion 5 sweep.
    for track in 0..3 {
        let mut worst_pos = 0.0f64;
        let mut worst_ospa = 0.0f64;
        for seed in 1..=6 {
            let scenario = load_scenario(
                path,
                &["bp.n_particles=10000".into(), format!("seed={seed}")],
            )
            .unwrap();
            let result = run(&scenario, track).unwrap();
            worst_pos = worst_pos.max(result.mean_pos_error_after(10));
            worst_ospa = worst_ospa.max(result.mean_ospa_after(10));
        }
        println!("track {track}: worst pos {worst_pos:.3} / worst ospa {worst_ospa:.3}");
    }

    // Criterion 6 stats per track in full mode.
    for track in 0..3 {
        let scenario =
            load_scenario(path, &["bp.n_particles=2000".into(), "mode=full".into()]).unwrap();
        let result = run(&scenario, track).unwrap();
        let spec = &scenario.tracks[track];
        let truth = synthesize_track(&spec.waypoints, scenario.step_length, scenario.dt);
        let scene = scenario.scene_for_pa(0).unwrap();
        let tol = (9f64).to_radians();
        let mut steps_all4 = 0usize;
        let mut steps_los_strongest = 0usize;
        let mut gaps = Vec::new();
        let mut matched_specular = 0usize;
        let mut total_specular = 0usize;
        let n_steps = result.measurements.len();
        for (i, rounds) in result.measurements.iter().enumerate() {
            let meas = &rounds[0];
            let paths = ground_truth_paths(&scene, &Pose::new(truth.positions[i], 0.0));
            let mut all_matched = true;
            let mut los_peak = f64::NEG_INFINITY;
            let mut best_nlos_peak = f64::NEG_INFINITY;
            for p in &paths {
                let best = meas
                    .iter()
                    .filter(|z| {
                        angle_diff(z.aod, p.aod_global) <= tol
                            && angle_diff(z.aoa, p.aoa_global) <= tol
                    })
                    .map(|z| z.peak_power)
                    .fold(f64::NEG_INFINITY, f64::max);
                let matched = best.is_finite();
                match p.kind {
                    PathKind::Los => {
                        if matched {
                            los_peak = best;
                        } else {
                            all_matched = false;
                        }
                    }
                    PathKind::SingleBounce { .. } => {
                        total_specular += 1;
                        if matched {
                            matched_specular += 1;
                            best_nlos_peak = best_nlos_peak.max(best);
                        } else {
                            all_matched = false;
                        }
                    }
                }
            }
            if all_matched && paths.len() == 4 {
                steps_all4 += 1;
                let strongest = meas.iter().map(|z| z.peak_power).fold(0.0f64, f64::max);
                if los_peak >= strongest {
                    steps_los_strongest += 1;
                }
                gaps.push(mw_to_dbm(los_peak) - mw_to_dbm(best_nlos_peak));
            }
        }
        let mean_gap = gaps.iter().sum::<f64>() / gaps.len().max(1) as f64;
        println!(
            "full track {track}: steps {n_steps}, all4 {:.0}%, los strongest {steps_los_strongest}/{steps_all4}, mean gap {mean_gap:.2} dB, specular {:.1}%",
            100.0 * steps_all4 as f64 / n_steps as f64,
            100.0 * matched_specular as f64 / total_specular as f64
        );
    }
}
