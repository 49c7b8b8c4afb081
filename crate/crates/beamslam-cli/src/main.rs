//! Command-line harness: run scenarios end to end, dump beam-sweep matrices
//! and SSB schedules, extract angles, and score estimate dumps.

use anyhow::{bail, Context, Result};
use beamslam::angle_extract::extract_angles;
use beamslam::beamsim::{
    mw_to_dbm, ssb_schedule, sweep, sweep_duration_ms, BeamDictionary, OrientationSchedule,
    RsrpMatrix,
};
use beamslam::geometry::Point2;
use beamslam::metrics::{mae_per_feature, ospa, position_error};
use beamslam::runner::{self, run, run_multiuser};
use beamslam::scenario::{load_scenario, RunMode, Scenario};
use clap::{Args, Parser, Subcommand};
use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

#[derive(Parser)]
#[command(name = "beamslam", about = "Angle-based SLAM over simulated 5G NR beam management")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ScenarioArgs {
    /// Scenario file (TOML).
    #[arg(long)]
    scenario: PathBuf,
    /// Replace the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the measurement mode (full | angles | replay).
    #[arg(long)]
    mode: Option<String>,
    /// Replace the particle count.
    #[arg(long)]
    particles: Option<usize>,
    /// Additional key=value overrides (repeatable), e.g. bp.mu_new=1e-2.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ScenarioArgs {
    fn load(&self) -> Result<Scenario> {
        let mut overrides = self.overrides.clone();
        if let Some(seed) = self.seed {
            overrides.push(format!("seed={seed}"));
        }
        if let Some(mode) = &self.mode {
            overrides.push(format!("mode={mode}"));
        }
        if let Some(n) = self.particles {
            overrides.push(format!("bp.n_particles={n}"));
        }
        load_scenario(&self.scenario, &overrides)
            .with_context(|| format!("loading {}", self.scenario.display()))
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one track of a scenario and export the results bundle.
    Run {
        #[command(flatten)]
        scenario: ScenarioArgs,
        /// Track index within the scenario.
        #[arg(long, default_value_t = 0)]
        track: usize,
        /// Output directory.
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run all tracks with the crowdsourced shared map; per-UE bundles.
    RunMulti {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Synthesize one beam sweep and dump the grouped RSRP matrix as CSV.
    SweepDump {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        track: usize,
        /// Global step to dump.
        #[arg(long, default_value_t = 1)]
        step: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run the measurement stage only and dump the extracted angles.
    Extract {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        track: usize,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Score a previously exported run against the scenario ground truth.
    Score {
        #[command(flatten)]
        scenario: ScenarioArgs,
        #[arg(long, default_value_t = 0)]
        track: usize,
        /// Directory holding ue_track.csv and features.csv.
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Print the SSB sweep schedule as CSV.
    Schedule {
        /// TX beam count.
        #[arg(long, default_value_t = 8)]
        tx: usize,
        /// RX beam count.
        #[arg(long, default_value_t = 8)]
        rx: usize,
    },
}

fn main() -> Result<()> {
    match Cli::parse().command {
        Command::Run {
            scenario,
            track,
            out,
        } => {
            let sc = scenario.load()?;
            check_track(&sc, track)?;
            let result = run(&sc, track)?;
            runner::write_bundle(&sc, &result, &out)?;
            println!(
                "{}: {} steps, mean position error {:.3} m, mean OSPA {:.3} m -> {}",
                result.track_name,
                result.steps.len(),
                result.pos_error.mean,
                result.ospa_per_step.iter().sum::<f64>() / result.ospa_per_step.len().max(1) as f64,
                out.display()
            );
        }
        Command::RunMulti { scenario, out } => {
            let sc = scenario.load()?;
            let results = run_multiuser(&sc)?;
            for result in &results {
                let dir = out.join(&result.track_name);
                runner::write_bundle(&sc, result, &dir)?;
                println!(
                    "{}: {} steps, mean position error {:.3} m -> {}",
                    result.track_name,
                    result.steps.len(),
                    result.pos_error.mean,
                    dir.display()
                );
            }
        }
        Command::SweepDump {
            scenario,
            track,
            step,
            out,
        } => {
            let sc = scenario.load()?;
            check_track(&sc, track)?;
            let spec = &sc.tracks[track];
            let truth =
                beamslam::scenario::synthesize_track(&spec.waypoints, sc.step_length, sc.dt);
            let t = step
                .checked_sub(spec.entry_step)
                .filter(|t| *t < truth.len())
                .with_context(|| format!("step {step} outside track `{}`", spec.name))?;
            let sched = sc
                .schedule_for_step(step)
                .context("step not covered by the schedule")?;
            let scene = sc.scene_for_pa(sched.active_pa)?;
            let orient = OrientationSchedule {
                pa_sectors: sched.pa_sectors,
                ue_sectors: sched.ue_sectors,
            };
            let seed = beamslam::beamsim::mix_seed(sc.seed, &[0x3ea, track as u64, step as u64]);
            let matrix = sweep(&scene, &truth.positions[t], &orient, &sc.sweep, seed);
            fs::create_dir_all(&out)?;
            fs::write(out.join("rsrp_linear.csv"), matrix_csv(&matrix, false))?;
            fs::write(out.join("rsrp_dbm.csv"), matrix_csv(&matrix, true))?;
            let (r, c, peak) = matrix.argmax();
            println!(
                "sweep at step {step}: peak {:.1} dBm at cell ({r}, {c}) -> {}",
                mw_to_dbm(peak),
                out.display()
            );
        }
        Command::Extract {
            scenario,
            track,
            out,
        } => {
            let mut sc = scenario.load()?;
            check_track(&sc, track)?;
            sc.mode = RunMode::Full;
            let dict = BeamDictionary::from_codebook(&sc.sweep.codebook);
            let spec = &sc.tracks[track];
            let truth =
                beamslam::scenario::synthesize_track(&spec.waypoints, sc.step_length, sc.dt);
            let mut csv = String::from("t,path_index,aod_deg,aoa_deg,peak_dbm,support_halfwidth\n");
            let mut total = 0usize;
            for t in 0..truth.len() {
                let step = spec.entry_step + t;
                if step > sc.steps {
                    break;
                }
                let sched = sc
                    .schedule_for_step(step)
                    .context("step not covered by the schedule")?;
                let scene = sc.scene_for_pa(sched.active_pa)?;
                let orient = OrientationSchedule {
                    pa_sectors: sched.pa_sectors,
                    ue_sectors: sched.ue_sectors,
                };
                let seed =
                    beamslam::beamsim::mix_seed(sc.seed, &[0x3ea, track as u64, step as u64]);
                let matrix = sweep(&scene, &truth.positions[t], &orient, &sc.sweep, seed);
                for (i, z) in extract_angles(&matrix, &dict, &sc.extract).iter().enumerate() {
                    let _ = writeln!(
                        csv,
                        "{step},{i},{},{},{},{}",
                        z.aod.to_degrees(),
                        z.aoa.to_degrees(),
                        mw_to_dbm(z.peak_power),
                        z.support_halfwidth
                    );
                }
                total += 1;
            }
            fs::create_dir_all(&out)?;
            fs::write(out.join("measurements.csv"), csv)?;
            println!("extracted {total} steps -> {}", out.display());
        }
        Command::Score {
            scenario,
            track,
            run_dir,
            out,
        } => {
            let sc = scenario.load()?;
            check_track(&sc, track)?;
            let spec = &sc.tracks[track];
            let truth =
                beamslam::scenario::synthesize_track(&spec.waypoints, sc.step_length, sc.dt);
            let est_track = read_track_csv(&run_dir.join("ue_track.csv"))?;
            let features = read_features_csv(&run_dir.join("features.csv"))?;
            let n = est_track.len().min(truth.len());
            let pos = position_error(
                &est_track[..n].iter().map(|(_, p)| *p).collect::<Vec<_>>(),
                &truth.positions[..n],
            )?;
            // Score the map against the scenario truth features.
            let scene = sc.scene_for_pa(0)?;
            let mut truth_map = sc.pa_positions();
            truth_map.extend(scene.virtual_anchors());
            let mut csv = String::from("step,pos_err_m,ospa_m\n");
            for (i, (step, _)) in est_track.iter().take(n).enumerate() {
                let detected: Vec<Point2> = features
                    .iter()
                    .filter(|(s, _)| s == step)
                    .map(|(_, p)| *p)
                    .collect();
                let o = ospa(&detected, &truth_map, &sc.ospa);
                let _ = writeln!(csv, "{step},{},{o}", pos.per_step[i]);
            }
            let va_truth = scene.virtual_anchors();
            let series: Vec<Vec<Point2>> = est_track
                .iter()
                .take(n)
                .map(|(step, _)| {
                    features
                        .iter()
                        .filter(|(s, _)| s == step)
                        .map(|(_, p)| *p)
                        .collect()
                })
                .collect();
            let mut va_csv = String::from("va_id,mae_m,detect_rate\n");
            for (i, entry) in mae_per_feature(&series, &va_truth, 3.0).iter().enumerate() {
                match entry {
                    Some(e) => {
                        let _ = writeln!(va_csv, "{i},{},{}", e.mae, e.detect_rate);
                    }
                    None => {
                        let _ = writeln!(va_csv, "{i},,");
                    }
                }
            }
            fs::create_dir_all(&out)?;
            fs::write(out.join("metrics.csv"), csv)?;
            fs::write(out.join("va_summary.csv"), va_csv)?;
            println!(
                "scored {n} steps: mean position error {:.3} m -> {}",
                pos.mean,
                out.display()
            );
        }
        Command::Schedule { tx, rx } => {
            let cfg = beamslam::beamsim::FrameConfig::default();
            let slots = ssb_schedule(&cfg, tx, rx)?;
            println!("ssb_index,subframe,slot,symbol,tx_beam,rx_beam");
            for s in &slots {
                println!(
                    "{},{},{},{},{},{}",
                    s.ssb_index, s.subframe, s.slot, s.start_symbol, s.tx_beam, s.rx_beam
                );
            }
            eprintln!(
                "{} SSBs, sweep completes within {} ms",
                slots.len(),
                sweep_duration_ms(&slots)
            );
        }
    }
    Ok(())
}

fn check_track(sc: &Scenario, track: usize) -> Result<()> {
    if track >= sc.tracks.len() {
        bail!(
            "track index {track} out of range; scenario has {} tracks",
            sc.tracks.len()
        );
    }
    Ok(())
}

fn matrix_csv(matrix: &RsrpMatrix, dbm: bool) -> String {
    let mut out = String::new();
    for r in 0..RsrpMatrix::SIZE {
        let row: Vec<String> = (0..RsrpMatrix::SIZE)
            .map(|c| {
                let v = matrix.get(r, c);
                if dbm {
                    format!("{}", mw_to_dbm(v))
                } else {
                    format!("{v}")
                }
            })
            .collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

fn read_track_csv(path: &PathBuf) -> Result<Vec<(usize, Point2)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        out.push((f[0].parse()?, Point2::new(f[1].parse()?, f[2].parse()?)));
    }
    Ok(out)
}

fn read_features_csv(path: &PathBuf) -> Result<Vec<(usize, Point2)>> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for line in text.lines().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').collect();
        out.push((f[0].parse()?, Point2::new(f[4].parse()?, f[5].parse()?)));
    }
    Ok(out)
}
