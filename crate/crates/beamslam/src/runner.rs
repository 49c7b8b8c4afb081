//! End-to-end experiment orchestration: walk each UE along its track, source
//! measurements per the scenario mode (full beam-sweep synthesis, noisy true
//! angles, or a replayed dump), drive the SLAM filter, and score and export
//! the results.
//!
//! Randomness is split into independent seeded streams (filter, measurement
//! generation, IMU synthesis) so a replayed run feeds the filter exactly the
//! draws of the original.

use crate::angle_extract::{extract_angles, AngleMeasurement};
use crate::beamsim::{
    mix_seed, mw_to_dbm, sweep, BeamDictionary, OrientationSchedule, RsrpMatrix,
};
use crate::bp_slam::{
    estimate, step, Estimate, ImuSample, MeasurementFrame, SharedMap, SlamError,
    SlamState, StepInput,
};
use crate::geometry::{
    ground_truth_paths, mirror_anchor, wrap_angle, PathKind, Point2, Pose, Scene,
};
use crate::metrics::{mae_per_feature, ospa, position_error, PositionError, VaTrackError};
use crate::scenario::{
    synthesize_track, RunMode, Scenario, ScenarioError, ScheduleEntry, TrueTrack,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::Serialize;
use sha2::{Digest, Sha256};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use thiserror::Error;

const STREAM_SLAM: u64 = 0x51a;
const STREAM_MEAS: u64 = 0x3ea;
const STREAM_IMU: u64 = 0x1b0;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error("filter failed at step {step}: {source}")]
    Slam { step: usize, source: SlamError },
    #[error("replay CSV: {0}")]
    Replay(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Everything one track's run produced.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub track_name: String,
    pub entry_step: usize,
    pub truth: TrueTrack,
    /// Per processed step: the global step index.
    pub steps: Vec<usize>,
    /// Per step: the measurement rounds fed to the filter as sub-steps.
    pub measurements: Vec<Vec<Vec<AngleMeasurement>>>,
    pub estimates: Vec<Estimate>,
    pub pos_error: PositionError,
    pub ospa_per_step: Vec<f64>,
    /// Static truth feature set scored against (PAs plus reachable VAs).
    pub truth_map: Vec<Point2>,
    pub true_vas: Vec<Point2>,
    pub va_errors: Vec<Option<VaTrackError>>,
    pub first_sweep: Option<RsrpMatrix>,
}

impl RunResult {
    /// Mean position error over steps with global index above `after`.
    pub fn mean_pos_error_after(&self, after: usize) -> f64 {
        mean_over(&self.steps, &self.pos_error.per_step, after)
    }

    pub fn mean_ospa_after(&self, after: usize) -> f64 {
        mean_over(&self.steps, &self.ospa_per_step, after)
    }
}

fn mean_over(steps: &[usize], values: &[f64], after: usize) -> f64 {
    let selected: Vec<f64> = steps
        .iter()
        .zip(values)
        .filter(|(s, _)| **s > after)
        .map(|(_, v)| *v)
        .collect();
    if selected.is_empty() {
        f64::NAN
    } else {
        selected.iter().sum::<f64>() / selected.len() as f64
    }
}

/// Measurement rounds for one UE position under the active schedule entry.
/// Each round is fed to the filter as its own sub-step, mirroring the
/// sequential per-orientation soundings of a grid point; the full pipeline
/// produces a single round per step (one grouped RSRP matrix).
#[allow(clippy::too_many_arguments)]
fn generate_measurements(
    scenario: &Scenario,
    scene: &Scene,
    sched: &ScheduleEntry,
    dict: &BeamDictionary,
    ue_pos: &Point2,
    seed: u64,
    replay: Option<&BTreeMap<usize, Vec<Vec<AngleMeasurement>>>>,
    global_step: usize,
) -> Result<Vec<Vec<AngleMeasurement>>, RunError> {
    match &scenario.mode {
        RunMode::Full => {
            let schedule = OrientationSchedule {
                pa_sectors: sched.pa_sectors,
                ue_sectors: sched.ue_sectors,
            };
            let matrix = sweep(scene, ue_pos, &schedule, &scenario.sweep, seed);
            Ok(vec![extract_angles(&matrix, dict, &scenario.extract)])
        }
        RunMode::Angles => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut rounds = Vec::with_capacity(scenario.angles.rounds);
            let paths = ground_truth_paths(scene, &Pose::new(*ue_pos, 0.0));
            for _ in 0..scenario.angles.rounds {
                let mut out = Vec::new();
                for path in &paths {
                    if scenario.angles.p_detect < 1.0 && !rng.gen_bool(scenario.angles.p_detect) {
                        continue;
                    }
                    let aod = path.aod_global
                        + rng.sample::<f64, _>(StandardNormal) * scenario.angles.sigma;
                    let aoa = path.aoa_global
                        + rng.sample::<f64, _>(StandardNormal) * scenario.angles.sigma;
                    out.push(AngleMeasurement::from_angles(
                        wrap_angle(aod),
                        wrap_angle(aoa),
                    ));
                }
                rounds.push(out);
            }
            Ok(rounds)
        }
        RunMode::Replay { .. } => {
            let mut rounds = replay
                .expect("replay table loaded before the run")
                .get(&global_step)
                .cloned()
                .unwrap_or_default();
            let expected = match RunMode::Full == scenario.mode {
                true => 1,
                false => scenario.angles.rounds,
            };
            while rounds.len() < expected {
                rounds.push(Vec::new());
            }
            Ok(rounds)
        }
    }
}

fn load_replay_table(
    scenario: &Scenario,
) -> Result<Option<BTreeMap<usize, Vec<Vec<AngleMeasurement>>>>, RunError> {
    let RunMode::Replay { measurements } = &scenario.mode else {
        return Ok(None);
    };
    let text = std::fs::read_to_string(measurements)
        .map_err(|e| RunError::Replay(format!("{measurements}: {e}")))?;
    // Rows carry (step, within-round ordinal); an ordinal reset marks the
    // next measurement round of the same step.
    let mut table: BTreeMap<usize, Vec<Vec<AngleMeasurement>>> = BTreeMap::new();
    let mut last: Option<(usize, usize)> = None;
    for (lineno, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 6 {
            return Err(RunError::Replay(format!(
                "line {}: expected 6 fields, got {}",
                lineno + 1,
                fields.len()
            )));
        }
        let parse = |s: &str| -> Result<f64, RunError> {
            s.parse()
                .map_err(|_| RunError::Replay(format!("line {}: bad number `{s}`", lineno + 1)))
        };
        let t: usize = fields[0]
            .parse()
            .map_err(|_| RunError::Replay(format!("line {}: bad step", lineno + 1)))?;
        let ordinal: usize = fields[1]
            .parse()
            .map_err(|_| RunError::Replay(format!("line {}: bad path index", lineno + 1)))?;
        let aod = crate::geometry::canonical_angle(parse(fields[2])?.to_radians());
        let aoa = crate::geometry::canonical_angle(parse(fields[3])?.to_radians());
        let peak_dbm = parse(fields[4])?;
        let support: usize = fields[5]
            .parse()
            .map_err(|_| RunError::Replay(format!("line {}: bad support", lineno + 1)))?;
        let rounds = table.entry(t).or_default();
        let new_round = match last {
            Some((lt, lo)) => lt != t || ordinal <= lo,
            None => true,
        };
        if new_round || rounds.is_empty() {
            rounds.push(Vec::new());
        }
        rounds.last_mut().expect("round pushed above").push(AngleMeasurement {
            aod,
            aoa,
            peak_power: 10f64.powf(peak_dbm / 10.0),
            support_halfwidth: support,
            cell: (0, 0),
        });
        last = Some((t, ordinal));
    }
    Ok(Some(table))
}

/// Truth feature set for map scoring: every PA plus each VA that generates at
/// least one path from some track position.
fn truth_map_for(scenario: &Scenario, tracks: &[&TrueTrack]) -> (Vec<Point2>, Vec<Point2>) {
    let mut vas: Vec<Point2> = Vec::new();
    for entry in &scenario.schedule {
        let Ok(scene) = scenario.scene_for_pa(entry.active_pa) else {
            continue;
        };
        for track in tracks {
            for pos in &track.positions {
                for path in ground_truth_paths(&scene, &Pose::new(*pos, 0.0)) {
                    if let PathKind::SingleBounce { wall } = path.kind {
                        let va = mirror_anchor(&scene.pa.position, &scene.walls[wall]);
                        if vas.iter().all(|v| v.distance(&va) > 1e-6) {
                            vas.push(va);
                        }
                    }
                }
            }
        }
    }
    let mut map = scenario.pa_positions();
    map.extend(vas.iter().cloned());
    (map, vas)
}

/// Run one track of the scenario end to end.
pub fn run(scenario: &Scenario, track_idx: usize) -> Result<RunResult, RunError> {
    let replay = load_replay_table(scenario)?;
    let dict = BeamDictionary::from_codebook(&scenario.sweep.codebook);
    let spec = &scenario.tracks[track_idx];
    let truth = synthesize_track(&spec.waypoints, scenario.step_length, scenario.dt);
    let scenes: Vec<Scene> = (0..scenario.pa_poses.len())
        .map(|i| scenario.scene_for_pa(i))
        .collect::<Result<_, _>>()?;

    let mut slam_rng =
        ChaCha8Rng::seed_from_u64(mix_seed(scenario.seed, &[track_idx as u64, STREAM_SLAM]));
    let mut state = SlamState::init(
        truth.positions[0],
        &scenario.pa_positions(),
        &scenario.bp,
        &mut slam_rng,
    );

    let mut result = RunResult {
        track_name: spec.name.clone(),
        entry_step: spec.entry_step,
        truth: truth.clone(),
        steps: Vec::new(),
        measurements: Vec::new(),
        estimates: Vec::new(),
        pos_error: PositionError {
            per_step: vec![],
            mean: 0.0,
        },
        ospa_per_step: Vec::new(),
        truth_map: Vec::new(),
        true_vas: Vec::new(),
        va_errors: Vec::new(),
        first_sweep: None,
    };

    for t in 0..truth.len() {
        let global_step = spec.entry_step + t;
        if global_step > scenario.steps {
            break;
        }
        let sched = scenario
            .schedule_for_step(global_step)
            .expect("schedule coverage validated at load");
        let scene = &scenes[sched.active_pa];
        let meas_seed = mix_seed(scenario.seed, &[STREAM_MEAS, track_idx as u64, global_step as u64]);
        let rounds = generate_measurements(
            scenario,
            scene,
            sched,
            &dict,
            &truth.positions[t],
            meas_seed,
            replay.as_ref(),
            global_step,
        )?;
        if result.first_sweep.is_none() && scenario.mode == RunMode::Full {
            let schedule = OrientationSchedule {
                pa_sectors: sched.pa_sectors,
                ue_sectors: sched.ue_sectors,
            };
            result.first_sweep = Some(sweep(
                scene,
                &truth.positions[t],
                &schedule,
                &scenario.sweep,
                meas_seed,
            ));
        }
        let imu = synth_imu(scenario, &truth, track_idx, t, global_step);
        for (round, z) in rounds.iter().enumerate() {
            let input = StepInput {
                measurements: z,
                imu: if round == 0 { imu } else { None },
                dt: if t == 0 || round > 0 { 0.0 } else { scenario.dt },
                active_pa: sched.active_pa,
                pa_position: scenario.pa_poses[sched.active_pa].position,
                frame: MeasurementFrame::default(),
                bounds: scenario.bounds,
            };
            step(&mut state, &input, &scenario.bp, &mut slam_rng).map_err(|source| {
                RunError::Slam {
                    step: global_step,
                    source,
                }
            })?;
        }
        result.steps.push(global_step);
        result.measurements.push(rounds);
        result.estimates.push(estimate(&state, &scenario.bp));
    }

    score(scenario, &mut result);
    Ok(result)
}

fn synth_imu(
    scenario: &Scenario,
    truth: &TrueTrack,
    track_idx: usize,
    t: usize,
    global_step: usize,
) -> Option<ImuSample> {
    if !scenario.imu.enabled || t == 0 {
        return None;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(
        scenario.seed,
        &[STREAM_IMU, track_idx as u64, global_step as u64],
    ));
    let (ax, ay) = truth.accelerations[t];
    let std = scenario.imu.bias_noise_std;
    Some(ImuSample {
        accel: (
            ax + rng.sample::<f64, _>(StandardNormal) * std,
            ay + rng.sample::<f64, _>(StandardNormal) * std,
        ),
        bias_noise_std: std,
    })
}

fn score(scenario: &Scenario, result: &mut RunResult) {
    let (truth_map, true_vas) = truth_map_for(scenario, &[&result.truth]);
    score_with_map(scenario, result, truth_map, true_vas);
}

fn score_with_map(
    scenario: &Scenario,
    result: &mut RunResult,
    truth_map: Vec<Point2>,
    true_vas: Vec<Point2>,
) {
    let est_track: Vec<Point2> = result
        .estimates
        .iter()
        .map(|e| e.ue.position)
        .collect();
    let true_track: Vec<Point2> = result.truth.positions[..est_track.len()].to_vec();
    result.pos_error =
        position_error(&est_track, &true_track).expect("equal lengths by construction");
    result.ospa_per_step = result
        .estimates
        .iter()
        .map(|e| {
            let detected: Vec<Point2> = e.features.iter().map(|f| f.position).collect();
            ospa(&detected, &truth_map, &scenario.ospa)
        })
        .collect();
    let va_series: Vec<Vec<Point2>> = result
        .estimates
        .iter()
        .map(|e| {
            e.features
                .iter()
                .filter(|f| f.kind == crate::geometry::FeatureKind::Va)
                .map(|f| f.position)
                .collect()
        })
        .collect();
    result.va_errors = mae_per_feature(&va_series, &true_vas, 3.0);
    result.truth_map = truth_map;
    result.true_vas = true_vas;
}

/// Crowdsourced multi-UE run: per global step the active UEs process in track
/// order, each checking the shared feature map out before its filter step and
/// committing its posterior back afterwards. An entering UE therefore starts
/// from whatever map the earlier UEs built.
pub fn run_multiuser(scenario: &Scenario) -> Result<Vec<RunResult>, RunError> {
    let replay = load_replay_table(scenario)?;
    let dict = BeamDictionary::from_codebook(&scenario.sweep.codebook);
    let scenes: Vec<Scene> = (0..scenario.pa_poses.len())
        .map(|i| scenario.scene_for_pa(i))
        .collect::<Result<_, _>>()?;
    let pa_positions = scenario.pa_positions();

    struct UeRun {
        state: Option<SlamState>,
        rng: ChaCha8Rng,
        result: RunResult,
        truth: TrueTrack,
        entry: usize,
    }

    let mut ues: Vec<UeRun> = scenario
        .tracks
        .iter()
        .enumerate()
        .map(|(idx, spec)| {
            let truth = synthesize_track(&spec.waypoints, scenario.step_length, scenario.dt);
            UeRun {
                state: None,
                rng: ChaCha8Rng::seed_from_u64(mix_seed(
                    scenario.seed,
                    &[idx as u64, STREAM_SLAM],
                )),
                result: RunResult {
                    track_name: spec.name.clone(),
                    entry_step: spec.entry_step,
                    truth: truth.clone(),
                    steps: Vec::new(),
                    measurements: Vec::new(),
                    estimates: Vec::new(),
                    pos_error: PositionError {
                        per_step: vec![],
                        mean: 0.0,
                    },
                    ospa_per_step: Vec::new(),
                    truth_map: Vec::new(),
                    true_vas: Vec::new(),
                    va_errors: Vec::new(),
                    first_sweep: None,
                },
                truth,
                entry: spec.entry_step,
            }
        })
        .collect();

    // Seed the shared map with the known PA features via a prototype state.
    let mut shared = {
        let mut proto_rng = ChaCha8Rng::seed_from_u64(mix_seed(scenario.seed, &[0x9a9]));
        let proto = SlamState::init(
            Point2::new(0.0, 0.0),
            &pa_positions,
            &scenario.bp,
            &mut proto_rng,
        );
        SharedMap::from_state(&proto)
    };

    for global_step in 1..=scenario.steps {
        for (idx, ue) in ues.iter_mut().enumerate() {
            let t = match global_step.checked_sub(ue.entry) {
                Some(t) if t < ue.truth.len() => t,
                _ => continue,
            };
            if t == 0 {
                let mut state = SlamState::init(
                    ue.truth.positions[0],
                    &[],
                    &scenario.bp,
                    &mut ue.rng,
                );
                shared.checkout(&mut state);
                ue.state = Some(state);
            }
            let state = ue.state.as_mut().expect("state created at entry");
            shared.checkout(state);

            let sched = scenario
                .schedule_for_step(global_step)
                .expect("schedule coverage validated at load");
            let scene = &scenes[sched.active_pa];
            let meas_seed =
                mix_seed(scenario.seed, &[STREAM_MEAS, idx as u64, global_step as u64]);
            let rounds = generate_measurements(
                scenario,
                scene,
                sched,
                &dict,
                &ue.truth.positions[t],
                meas_seed,
                replay.as_ref(),
                global_step,
            )?;
            let imu = synth_imu(scenario, &ue.truth, idx, t, global_step);
            for (round, z) in rounds.iter().enumerate() {
                let input = StepInput {
                    measurements: z,
                    imu: if round == 0 { imu } else { None },
                    dt: if t == 0 || round > 0 { 0.0 } else { scenario.dt },
                    active_pa: sched.active_pa,
                    pa_position: pa_positions[sched.active_pa],
                    frame: MeasurementFrame::default(),
                    bounds: scenario.bounds,
                };
                step(state, &input, &scenario.bp, &mut ue.rng).map_err(|source| {
                    RunError::Slam {
                        step: global_step,
                        source,
                    }
                })?;
            }
            shared.commit(state);
            ue.result.steps.push(global_step);
            ue.result.measurements.push(rounds);
            ue.result.estimates.push(estimate(state, &scenario.bp));
        }
    }

    let truths: Vec<&TrueTrack> = ues.iter().map(|u| &u.truth).collect();
    let (truth_map, true_vas) = truth_map_for(scenario, &truths);
    let mut results = Vec::with_capacity(ues.len());
    for mut ue in ues {
        score_with_map(
            scenario,
            &mut ue.result,
            truth_map.clone(),
            true_vas.clone(),
        );
        results.push(ue.result);
    }
    Ok(results)
}

// ---- export ----------------------------------------------------------------

/// Render all result files for one run into `dir`. Float fields use Rust's
/// shortest round-trip formatting, so re-parsing reproduces the exact values.
pub fn write_bundle(scenario: &Scenario, result: &RunResult, dir: &Path) -> Result<(), RunError> {
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("measurements.csv"), measurements_csv(result))?;
    std::fs::write(dir.join("ue_track.csv"), ue_track_csv(result))?;
    std::fs::write(dir.join("features.csv"), features_csv(result))?;
    std::fs::write(dir.join("rsps.csv"), rsps_csv(result))?;
    std::fs::write(dir.join("metrics.csv"), metrics_csv(result))?;
    std::fs::write(dir.join("va_summary.csv"), va_summary_csv(result))?;
    std::fs::write(dir.join("manifest.json"), manifest_json(scenario))?;
    std::fs::write(dir.join("plot.json"), plot_json(scenario, result))?;
    if let Some(matrix) = &result.first_sweep {
        std::fs::write(dir.join("rsrp_linear.csv"), rsrp_csv(matrix, false))?;
        std::fs::write(dir.join("rsrp_dbm.csv"), rsrp_csv(matrix, true))?;
    }
    Ok(())
}

/// Measurement dump; `path_index` is the ordinal within a measurement round,
/// so an ordinal reset inside one step marks the next round.
pub fn measurements_csv(result: &RunResult) -> String {
    let mut out = String::from("t,path_index,aod_deg,aoa_deg,peak_dbm,support_halfwidth\n");
    for (step, rounds) in result.steps.iter().zip(&result.measurements) {
        for round in rounds {
            for (i, z) in round.iter().enumerate() {
                let _ = writeln!(
                    out,
                    "{step},{i},{},{},{},{}",
                    z.aod.to_degrees(),
                    z.aoa.to_degrees(),
                    mw_to_dbm(z.peak_power),
                    z.support_halfwidth
                );
            }
        }
    }
    out
}

fn ue_track_csv(result: &RunResult) -> String {
    let mut out = String::from("step,x_m,y_m,vx_mps,vy_mps\n");
    for (step, est) in result.steps.iter().zip(&result.estimates) {
        let _ = writeln!(
            out,
            "{step},{},{},{},{}",
            est.ue.position.x, est.ue.position.y, est.ue.velocity.0, est.ue.velocity.1
        );
    }
    out
}

fn features_csv(result: &RunResult) -> String {
    let mut out = String::from("step,feature_id,kind,anchor,x_m,y_m,existence\n");
    for (step, est) in result.steps.iter().zip(&result.estimates) {
        for f in &est.features {
            let kind = match f.kind {
                crate::geometry::FeatureKind::Pa => "pa",
                crate::geometry::FeatureKind::Va => "va",
            };
            let _ = writeln!(
                out,
                "{step},{},{kind},{},{},{},{}",
                f.id, f.anchor, f.position.x, f.position.y, f.existence
            );
        }
    }
    out
}

fn rsps_csv(result: &RunResult) -> String {
    let mut out = String::from("step,feature_id,x_m,y_m\n");
    for (step, est) in result.steps.iter().zip(&result.estimates) {
        for r in &est.rsps {
            let _ = writeln!(out, "{step},{},{},{}", r.feature_id, r.position.x, r.position.y);
        }
    }
    out
}

fn metrics_csv(result: &RunResult) -> String {
    let mut out = String::from("step,pos_err_m,ospa_m\n");
    for ((step, pos), osp) in result
        .steps
        .iter()
        .zip(&result.pos_error.per_step)
        .zip(&result.ospa_per_step)
    {
        let _ = writeln!(out, "{step},{pos},{osp}");
    }
    out
}

fn va_summary_csv(result: &RunResult) -> String {
    let mut out = String::from("va_id,mae_m,detect_rate\n");
    for (i, entry) in result.va_errors.iter().enumerate() {
        match entry {
            Some(e) => {
                let _ = writeln!(out, "{i},{},{}", e.mae, e.detect_rate);
            }
            None => {
                let _ = writeln!(out, "{i},,");
            }
        }
    }
    out
}

fn rsrp_csv(matrix: &RsrpMatrix, dbm: bool) -> String {
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
        let _ = writeln!(out, "{}", row.join(","));
    }
    out
}

#[derive(Serialize)]
struct Manifest<'a> {
    name: &'a str,
    seed: u64,
    mode: String,
    version: &'a str,
    config_hash: String,
    params: &'a [crate::scenario::ParamRecord],
}

pub fn manifest_json(scenario: &Scenario) -> String {
    let mut hasher = Sha256::new();
    hasher.update(scenario.name.as_bytes());
    for p in &scenario.params {
        hasher.update(p.key.as_bytes());
        hasher.update(b"=");
        hasher.update(p.value.as_bytes());
        hasher.update(b";");
    }
    let manifest = Manifest {
        name: &scenario.name,
        seed: scenario.seed,
        mode: format!("{:?}", scenario.mode),
        version: env!("CARGO_PKG_VERSION"),
        config_hash: format!("{:x}", hasher.finalize()),
        params: &scenario.params,
    };
    serde_json::to_string_pretty(&manifest).expect("manifest serializes")
}

#[derive(Serialize)]
struct PlotData {
    track: String,
    true_track: Vec<[f64; 2]>,
    est_track: Vec<[f64; 2]>,
    pas: Vec<[f64; 2]>,
    true_vas: Vec<[f64; 2]>,
    est_features: Vec<PlotFeature>,
    est_rsps: Vec<[f64; 2]>,
    pos_err: Vec<f64>,
    ospa: Vec<f64>,
    rsrp_dbm: Option<Vec<Vec<f64>>>,
}

#[derive(Serialize)]
struct PlotFeature {
    id: u64,
    kind: String,
    x: f64,
    y: f64,
    existence: f64,
}

fn plot_json(scenario: &Scenario, result: &RunResult) -> String {
    let last = result.estimates.last();
    let data = PlotData {
        track: result.track_name.clone(),
        true_track: result.truth.positions.iter().map(|p| [p.x, p.y]).collect(),
        est_track: result
            .estimates
            .iter()
            .map(|e| [e.ue.position.x, e.ue.position.y])
            .collect(),
        pas: scenario.pa_positions().iter().map(|p| [p.x, p.y]).collect(),
        true_vas: result.true_vas.iter().map(|p| [p.x, p.y]).collect(),
        est_features: last
            .map(|e| {
                e.features
                    .iter()
                    .map(|f| PlotFeature {
                        id: f.id,
                        kind: match f.kind {
                            crate::geometry::FeatureKind::Pa => "pa".into(),
                            crate::geometry::FeatureKind::Va => "va".into(),
                        },
                        x: f.position.x,
                        y: f.position.y,
                        existence: f.existence,
                    })
                    .collect()
            })
            .unwrap_or_default(),
        est_rsps: last
            .map(|e| e.rsps.iter().map(|r| [r.position.x, r.position.y]).collect())
            .unwrap_or_default(),
        pos_err: result.pos_error.per_step.clone(),
        ospa: result.ospa_per_step.clone(),
        rsrp_dbm: result.first_sweep.as_ref().map(|m| {
            (0..RsrpMatrix::SIZE)
                .map(|r| (0..RsrpMatrix::SIZE).map(|c| mw_to_dbm(m.get(r, c))).collect())
                .collect()
        }),
    };
    serde_json::to_string_pretty(&data).expect("plot data serializes")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::load_scenario_str;

    const SCENARIO: &str = r#"
name = "runner-test"
seed = 7
mode = "angles"
steps = 12
dt_seconds = 1.0

[scene]
bounds = { min = [-6.5, -7.0], max = [12.0, 10.0] }

[[scene.pas]]
position = [5.667, 6.290]

[[scene.walls]]
a = [0.0, 7.66]
b = [10.0, 7.66]

[[scene.walls]]
a = [0.2, 0.2]
b = [0.2, 7.66]

[[scene.walls]]
a = [0.2, 0.2]
b = [10.0, 0.2]

[[tracks]]
name = "t0"
waypoints = [[6.2, 1.4], [1.8, 1.4], [1.8, 5.4], [4.2, 5.4]]

[[schedule]]
steps = [1, 12]
ue_sectors_deg = [0.0, 120.0, 240.0]
pa_sectors_deg = [0.0, 120.0, 240.0]

[angles_mode]
sigma_deg = 6.0
rounds = 4

[bp]
n_particles = 1500
mu_new = 0.01
"#;

    #[test]
    fn angles_mode_run_tracks_and_maps() {
        let scenario = load_scenario_str(SCENARIO, &[]).unwrap();
        let result = run(&scenario, 0).unwrap();
        assert_eq!(result.steps.len(), 12);
        assert_eq!(result.truth_map.len(), 4, "PA plus three VAs");
        assert!(
            result.mean_pos_error_after(4) < 0.8,
            "mean error {}",
            result.mean_pos_error_after(4)
        );
        assert!(result.mean_ospa_after(4) < 1.5);
    }

    #[test]
    fn identical_seeds_reproduce_byte_identical_outputs() {
        let scenario = load_scenario_str(SCENARIO, &[]).unwrap();
        let a = run(&scenario, 0).unwrap();
        let b = run(&scenario, 0).unwrap();
        assert_eq!(measurements_csv(&a), measurements_csv(&b));
        assert_eq!(metrics_csv(&a), metrics_csv(&b));
        assert_eq!(ue_track_csv(&a), ue_track_csv(&b));
    }

    #[test]
    fn single_track_multiuser_equals_run() {
        let scenario = load_scenario_str(SCENARIO, &[]).unwrap();
        let solo = run(&scenario, 0).unwrap();
        let multi = run_multiuser(&scenario).unwrap();
        assert_eq!(multi.len(), 1);
        assert_eq!(ue_track_csv(&solo), ue_track_csv(&multi[0]));
        assert_eq!(features_csv(&solo), features_csv(&multi[0]));
    }

    #[test]
    fn replay_reproduces_original_estimates() {
        let scenario = load_scenario_str(SCENARIO, &[]).unwrap();
        let original = run(&scenario, 0).unwrap();
        let dir = std::env::temp_dir().join(format!("beamslam-replay-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let csv_path = dir.join("measurements.csv");
        std::fs::write(&csv_path, measurements_csv(&original)).unwrap();

        let replay_scenario = load_scenario_str(
            SCENARIO,
            &[
                "mode=replay".into(),
                format!("replay_csv={}", csv_path.display()),
            ],
        )
        .unwrap();
        let replayed = run(&replay_scenario, 0).unwrap();
        assert_eq!(ue_track_csv(&original), ue_track_csv(&replayed));
        assert_eq!(features_csv(&original), features_csv(&replayed));
        std::fs::remove_dir_all(&dir).ok();
    }

    #[test]
    fn bundle_writes_all_files() {
        let scenario = load_scenario_str(SCENARIO, &["bp.n_particles=200".into()]).unwrap();
        let result = run(&scenario, 0).unwrap();
        let dir = std::env::temp_dir().join(format!("beamslam-bundle-{}", std::process::id()));
        write_bundle(&scenario, &result, &dir).unwrap();
        for file in [
            "measurements.csv",
            "ue_track.csv",
            "features.csv",
            "rsps.csv",
            "metrics.csv",
            "va_summary.csv",
            "manifest.json",
            "plot.json",
        ] {
            assert!(dir.join(file).exists(), "{file} missing");
        }
        let manifest = std::fs::read_to_string(dir.join("manifest.json")).unwrap();
        assert!(manifest.contains("config_hash"));
        assert!(manifest.contains("\"override\""));
        std::fs::remove_dir_all(&dir).ok();
    }
}
