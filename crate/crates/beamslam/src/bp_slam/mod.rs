//! Particle-based belief-propagation SLAM over angle-only measurements.
//!
//! The filter keeps a particle cloud for the UE state and one per radio
//! feature (the physical anchor and the virtual anchors hypothesized from
//! unassociated measurements), each feature carrying a Bernoulli existence
//! probability. One step runs: motion prediction (near-constant velocity or
//! IMU-driven), survival prediction, probabilistic data association by
//! message passing, legacy-feature update, new-feature birth from the
//! measurement geometry, UE reweighting by the association-marginalized
//! evidence, resampling, and pruning.
//!
//! UE and feature clouds share the particle count; likelihood integrals are
//! Monte-Carlo averages over index-paired (UE, feature) samples.

pub mod association;

pub use association::{AssociationBelief, AssociationProblem};

use crate::angle_extract::AngleMeasurement;
use crate::geometry::{
    predicted_angles, reflection_point, rsp_from_angles, va_from_rsp, wrap_angle, FeatureKind,
    Point2, Pose, Rect,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use std::f64::consts::TAU;
use thiserror::Error;

/// Density of a false-alarm measurement: uniform over the (AOD, AOA) product
/// space.
pub const FALSE_ALARM_DENSITY: f64 = 1.0 / (TAU * TAU);

#[derive(Debug, Error, PartialEq)]
pub enum SlamError {
    #[error("all UE particle weights collapsed to zero at step {0}")]
    ResampleCollapse(usize),
    #[error("feature particle count {0} does not match UE particle count {1}")]
    ParticleCountMismatch(usize, usize),
}

/// Filter tunables. Defaults carry the empty-hall experiment values; the
/// message-passing controls and regularization are implementation choices.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BpConfig {
    pub p_detect: f64,
    pub p_survive: f64,
    pub mu_false: f64,
    pub mu_new: f64,
    /// Likelihood standard deviation for both AOD and AOA residuals, radians.
    pub angle_sigma: f64,
    pub n_particles: usize,
    pub detect_threshold: f64,
    pub prune_threshold: f64,
    /// White-acceleration driving variance, (m/s²)².
    pub driving_variance: f64,
    pub bp_max_iters: usize,
    pub bp_tol: f64,
    pub bp_damping: f64,
    /// Static-feature roughening noise applied at survival prediction, meters.
    pub regularization_std: f64,
    /// A measurement births a feature when its unassociated probability
    /// reaches this level.
    pub birth_threshold: f64,
    /// Prior standard deviation of each UE velocity component at start, m/s.
    pub init_vel_std: f64,
    /// UE position roughening for measurement-only steps (dt = 0): repeated
    /// resampling at a dwelling position would otherwise collapse the cloud
    /// onto a few points.
    pub dwell_jitter_std: f64,
}

impl Default for BpConfig {
    fn default() -> Self {
        Self {
            p_detect: 0.95,
            p_survive: 0.999,
            mu_false: 0.1,
            mu_new: 1e-6,
            angle_sigma: (6f64).to_radians(),
            n_particles: 100_000,
            detect_threshold: 0.5,
            prune_threshold: 1e-4,
            driving_variance: 0.0711,
            bp_max_iters: 20,
            bp_tol: 1e-6,
            bp_damping: 0.5,
            regularization_std: 0.01,
            birth_threshold: 0.5,
            init_vel_std: 1.0,
            dwell_jitter_std: 0.02,
        }
    }
}

/// UE kinematic state.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UeState {
    pub position: Point2,
    pub velocity: (f64, f64),
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct UeParticle {
    pub state: UeState,
    pub weight: f64,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct FeatureParticle {
    pub position: Point2,
    pub weight: f64,
}

/// One mapped radio feature: the PA itself or a VA, with its particle cloud,
/// Bernoulli existence probability, and the PA it is anchored to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Feature {
    pub kind: FeatureKind,
    pub anchor: usize,
    pub particles: Vec<FeatureParticle>,
    pub existence: f64,
    pub id: u64,
    pub birth_time: usize,
}

impl Feature {
    pub fn mean_position(&self) -> Point2 {
        let mut x = 0.0;
        let mut y = 0.0;
        for p in &self.particles {
            x += p.weight * p.position.x;
            y += p.weight * p.position.y;
        }
        Point2::new(x, y)
    }
}

/// Accelerometer reading used by the IMU-driven transition.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ImuSample {
    pub accel: (f64, f64),
    pub bias_noise_std: f64,
}

/// Orientation frame the measurement angles are expressed in; (0, 0) means
/// globally compensated angles.
#[derive(Debug, Clone, Copy, Default, Serialize, Deserialize)]
pub struct MeasurementFrame {
    pub pa_orientation: f64,
    pub ue_orientation: f64,
}

/// Full filter state.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SlamState {
    pub ue_particles: Vec<UeParticle>,
    pub features: Vec<Feature>,
    pub step: usize,
    pub next_feature_id: u64,
}

impl SlamState {
    /// Initialize from a known UE start and known PA positions: UE particles
    /// sit at the start with a velocity prior, each PA becomes an existing
    /// feature.
    pub fn init(
        start: Point2,
        pa_positions: &[Point2],
        cfg: &BpConfig,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let w = 1.0 / cfg.n_particles as f64;
        let ue_particles = (0..cfg.n_particles)
            .map(|_| {
                let vx: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.init_vel_std;
                let vy: f64 = rng.sample::<f64, _>(StandardNormal) * cfg.init_vel_std;
                UeParticle {
                    state: UeState {
                        position: start,
                        velocity: (vx, vy),
                    },
                    weight: w,
                }
            })
            .collect();
        let features = pa_positions
            .iter()
            .enumerate()
            .map(|(anchor, &pos)| Feature {
                kind: FeatureKind::Pa,
                anchor,
                particles: vec![
                    FeatureParticle {
                        position: pos,
                        weight: w,
                    };
                    cfg.n_particles
                ],
                existence: 1.0,
                id: anchor as u64,
                birth_time: 0,
            })
            .collect();
        Self {
            ue_particles,
            features,
            step: 0,
            next_feature_id: pa_positions.len() as u64,
        }
    }

    pub fn ue_mean(&self) -> UeState {
        let mut x = 0.0;
        let mut y = 0.0;
        let mut vx = 0.0;
        let mut vy = 0.0;
        for p in &self.ue_particles {
            x += p.weight * p.state.position.x;
            y += p.weight * p.state.position.y;
            vx += p.weight * p.state.velocity.0;
            vy += p.weight * p.state.velocity.1;
        }
        UeState {
            position: Point2::new(x, y),
            velocity: (vx, vy),
        }
    }
}

/// Near-constant-velocity transition: position advances by velocity, both are
/// driven by white acceleration of the given per-axis standard deviation.
pub fn propagate_ncv(u: &UeState, dt: f64, accel_std: f64, rng: &mut ChaCha8Rng) -> UeState {
    let ax = if accel_std > 0.0 {
        rng.sample::<f64, _>(StandardNormal) * accel_std
    } else {
        0.0
    };
    let ay = if accel_std > 0.0 {
        rng.sample::<f64, _>(StandardNormal) * accel_std
    } else {
        0.0
    };
    apply_kinematics(u, dt, ax, ay)
}

/// IMU-driven transition: the measured acceleration enters through the input
/// matrix, the driving noise models the accelerometer bias.
pub fn propagate_imu(
    u: &UeState,
    imu: &ImuSample,
    dt: f64,
    accel_std: f64,
    rng: &mut ChaCha8Rng,
) -> UeState {
    let ax = imu.accel.0
        + if accel_std > 0.0 {
            rng.sample::<f64, _>(StandardNormal) * accel_std
        } else {
            0.0
        };
    let ay = imu.accel.1
        + if accel_std > 0.0 {
            rng.sample::<f64, _>(StandardNormal) * accel_std
        } else {
            0.0
        };
    apply_kinematics(u, dt, ax, ay)
}

fn apply_kinematics(u: &UeState, dt: f64, ax: f64, ay: f64) -> UeState {
    UeState {
        position: Point2::new(
            u.position.x + u.velocity.0 * dt + 0.5 * ax * dt * dt,
            u.position.y + u.velocity.1 * dt + 0.5 * ay * dt * dt,
        ),
        velocity: (u.velocity.0 + ax * dt, u.velocity.1 + ay * dt),
    }
}

/// Survival prediction: existence shrinks by the survival probability and the
/// static cloud is roughened to keep particle diversity.
pub fn survival_predict(feature: &mut Feature, cfg: &BpConfig, rng: &mut ChaCha8Rng) {
    feature.existence *= cfg.p_survive;
    if cfg.regularization_std > 0.0 {
        for p in feature.particles.iter_mut() {
            p.position.x += rng.sample::<f64, _>(StandardNormal) * cfg.regularization_std;
            p.position.y += rng.sample::<f64, _>(StandardNormal) * cfg.regularization_std;
        }
    }
}

fn angle_gauss(residual: f64, sigma: f64) -> f64 {
    let r = wrap_angle(residual);
    (-(r * r) / (2.0 * sigma * sigma)).exp() / (sigma * TAU.sqrt())
}

fn angle_pair_density(z: &AngleMeasurement, predicted: (f64, f64), sigma: f64) -> f64 {
    angle_gauss(z.aod - predicted.0, sigma) * angle_gauss(z.aoa - predicted.1, sigma)
}

/// Likelihood of a measurement for one (UE state, feature particle) pair:
/// the product of two wrapped-Gaussian densities on the AOD and AOA residuals
/// against the geometric prediction, zero when no single-bounce geometry
/// exists for the hypothesis.
pub fn measurement_likelihood(
    z: &AngleMeasurement,
    ue: &UeState,
    frame: &MeasurementFrame,
    kind: FeatureKind,
    feature_particle: &Point2,
    pa_position: &Point2,
    angle_sigma: f64,
) -> f64 {
    let pa_pose = Pose::new(*pa_position, frame.pa_orientation);
    let ue_pose = Pose::new(ue.position, frame.ue_orientation);
    match predicted_angles(kind, feature_particle, &pa_pose, &ue_pose) {
        Ok(pred) => angle_pair_density(z, pred, angle_sigma),
        Err(_) => 0.0,
    }
}

/// Measurement inputs for one filter step.
#[derive(Debug, Clone)]
pub struct StepInput<'a> {
    pub measurements: &'a [AngleMeasurement],
    pub imu: Option<ImuSample>,
    pub dt: f64,
    /// Which PA the measurements came through; features anchored elsewhere
    /// only undergo survival prediction this step.
    pub active_pa: usize,
    pub pa_position: Point2,
    pub frame: MeasurementFrame,
    /// Region of interest; the new-feature prior is uniform over it, so birth
    /// hypotheses outside are discarded.
    pub bounds: Rect,
}

/// Diagnostics returned by [`step`].
#[derive(Debug, Clone)]
pub struct StepReport {
    pub belief: Option<AssociationBelief>,
    pub born: usize,
    pub ue_ess: f64,
    pub ue_resampled: bool,
}

pub fn effective_sample_size(weights: &[f64]) -> f64 {
    let sq: f64 = weights.iter().map(|w| w * w).sum();
    if sq > 0.0 {
        1.0 / sq
    } else {
        0.0
    }
}

/// Systematic resampling: one uniform offset, N evenly spaced pointers.
pub fn systematic_resample_indices(weights: &[f64], n_out: usize, offset: f64) -> Vec<usize> {
    let mut indices = Vec::with_capacity(n_out);
    let mut cumulative = weights[0];
    let mut i = 0;
    for k in 0..n_out {
        let target = (k as f64 + offset) / n_out as f64;
        while cumulative < target && i + 1 < weights.len() {
            i += 1;
            cumulative += weights[i];
        }
        indices.push(i);
    }
    indices
}

fn normalize_weights(weights: &mut [f64]) -> f64 {
    let sum: f64 = weights.iter().sum();
    if sum > 0.0 {
        for w in weights.iter_mut() {
            *w /= sum;
        }
    }
    sum
}

/// The beliefs are factorized, so expectations over (UE, feature) pairs are
/// product-measure integrals. Each feature gets a fresh random pairing of its
/// particles with the UE particles every evaluation; reusing a fixed index
/// pairing would correlate the clouds through resampling and bias the
/// integrals.
fn random_pairing(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut perm: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        perm.swap(i, j);
    }
    perm
}

/// Predicted angles of feature particle n against UE particle pairing[n].
fn predicted_table(
    feature: &Feature,
    ue_particles: &[UeParticle],
    pairing: &[usize],
    pa_position: &Point2,
    frame: &MeasurementFrame,
) -> Vec<Option<(f64, f64)>> {
    let pa_pose = Pose::new(*pa_position, frame.pa_orientation);
    feature
        .particles
        .iter()
        .zip(pairing)
        .map(|(fp, &ui)| {
            let ue_pose = Pose::new(ue_particles[ui].state.position, frame.ue_orientation);
            predicted_angles(feature.kind, &fp.position, &pa_pose, &ue_pose).ok()
        })
        .collect()
}

/// Joint pair weights (feature weight × paired UE weight, normalized).
fn pair_weights(feature: &Feature, ue_particles: &[UeParticle], pairing: &[usize]) -> Vec<f64> {
    let mut w: Vec<f64> = feature
        .particles
        .iter()
        .zip(pairing)
        .map(|(fp, &ui)| fp.weight * ue_particles[ui].weight)
        .collect();
    normalize_weights(&mut w);
    w
}

/// Build the association problem from particle-averaged likelihood ratios:
/// the match weight of (feature i, measurement j) is r·P_d·Λ_ij/(μ_false·
/// f_false), the miss weight 1 − r·P_d, and every measurement carries the
/// constant 1 + μ_new/μ_false head for the false-alarm/new-feature branch.
fn build_association_problem(
    features: &[&Feature],
    measurements: &[AngleMeasurement],
    pred: &[Vec<Option<(f64, f64)>>],
    pair_w: &[Vec<f64>],
    cfg: &BpConfig,
) -> AssociationProblem {
    let mut feature_weights = Vec::with_capacity(features.len());
    for (fi, feature) in features.iter().enumerate() {
        let mut row = vec![1.0 - feature.existence * cfg.p_detect];
        for z in measurements {
            let lam: f64 = pred[fi]
                .iter()
                .zip(&pair_w[fi])
                .filter_map(|(p, w)| p.map(|p| w * angle_pair_density(z, p, cfg.angle_sigma)))
                .sum();
            row.push(
                feature.existence * cfg.p_detect * lam / (cfg.mu_false * FALSE_ALARM_DENSITY),
            );
        }
        feature_weights.push(row);
    }
    AssociationProblem {
        feature_weights,
        unassigned_weight: vec![1.0 + cfg.mu_new / cfg.mu_false; measurements.len()],
    }
}

/// Particle-averaged association for a legacy feature set. The belief entry
/// [i][0] is the probability feature i generated no measurement; [j][0] on the
/// measurement side is the probability measurement j came from no legacy
/// feature (false alarm or new feature).
pub fn associate(
    features: &[&Feature],
    measurements: &[AngleMeasurement],
    ue_particles: &[UeParticle],
    pa_position: &Point2,
    frame: &MeasurementFrame,
    cfg: &BpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<AssociationBelief, SlamError> {
    let mut pred = Vec::with_capacity(features.len());
    let mut pair_w = Vec::with_capacity(features.len());
    for f in features {
        if f.particles.len() != ue_particles.len() {
            return Err(SlamError::ParticleCountMismatch(
                f.particles.len(),
                ue_particles.len(),
            ));
        }
        let pairing = random_pairing(ue_particles.len(), rng);
        pred.push(predicted_table(f, ue_particles, &pairing, pa_position, frame));
        pair_w.push(pair_weights(f, ue_particles, &pairing));
    }
    let problem = build_association_problem(features, measurements, &pred, &pair_w, cfg);
    Ok(association::solve(
        &problem,
        cfg.bp_max_iters,
        cfg.bp_tol,
        cfg.bp_damping,
    ))
}

/// Legacy-feature measurement update: reweight the particle cloud by the
/// message-weighted mixture of per-measurement likelihood ratios plus the
/// missed-detection term, refresh the existence probability with the same
/// evidence, and resample systematically when the cloud degenerates.
fn update_legacy_with_tables(
    feature: &mut Feature,
    extrinsic: &[f64],
    measurements: &[AngleMeasurement],
    pred: &[Option<(f64, f64)>],
    pair_w: &[f64],
    cfg: &BpConfig,
    rng: &mut ChaCha8Rng,
) {
    let miss = 1.0 - cfg.p_detect;
    let lr_scale = cfg.p_detect / (cfg.mu_false * FALSE_ALARM_DENSITY);

    let mut averaged_mix = 0.0;
    let mut new_weights = Vec::with_capacity(feature.particles.len());
    for (n, p) in feature.particles.iter().enumerate() {
        let mut mix = miss;
        if let Some(pred_n) = pred[n] {
            for (j, z) in measurements.iter().enumerate() {
                mix += extrinsic[j] * lr_scale * angle_pair_density(z, pred_n, cfg.angle_sigma);
            }
        }
        averaged_mix += pair_w[n] * mix;
        new_weights.push(p.weight * mix);
    }

    let alive = feature.existence * averaged_mix;
    let dead = 1.0 - feature.existence;
    feature.existence = if alive + dead > 0.0 {
        alive / (alive + dead)
    } else {
        0.0
    };

    let sum = normalize_weights(&mut new_weights);
    if sum <= 0.0 {
        // No particle explains the evidence; keep the cloud, let existence
        // and pruning retire the feature.
        return;
    }
    for (p, w) in feature.particles.iter_mut().zip(&new_weights) {
        p.weight = *w;
    }
    let n = feature.particles.len();
    if effective_sample_size(&new_weights) < n as f64 / 2.0 {
        let idx = systematic_resample_indices(&new_weights, n, rng.gen::<f64>());
        let resampled: Vec<FeatureParticle> = idx
            .iter()
            .map(|&i| FeatureParticle {
                position: feature.particles[i].position,
                weight: 1.0 / n as f64,
            })
            .collect();
        feature.particles = resampled;
    }
}

/// Standalone legacy update matching the tabled path; `feature_index` selects
/// the extrinsic message row of the belief.
#[allow(clippy::too_many_arguments)]
pub fn update_legacy(
    feature: &mut Feature,
    feature_index: usize,
    belief: &AssociationBelief,
    measurements: &[AngleMeasurement],
    ue_particles: &[UeParticle],
    pa_position: &Point2,
    frame: &MeasurementFrame,
    cfg: &BpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<(), SlamError> {
    if feature.particles.len() != ue_particles.len() {
        return Err(SlamError::ParticleCountMismatch(
            feature.particles.len(),
            ue_particles.len(),
        ));
    }
    let pairing = random_pairing(ue_particles.len(), rng);
    let pred = predicted_table(feature, ue_particles, &pairing, pa_position, frame);
    let pair_w = pair_weights(feature, ue_particles, &pairing);
    update_legacy_with_tables(
        feature,
        &belief.extrinsic[feature_index],
        measurements,
        &pred,
        &pair_w,
        cfg,
        rng,
    );
    Ok(())
}

/// Spawn VA hypotheses from measurements the association left unexplained:
/// per UE particle, jitter the measured angles, intersect the two rays for the
/// reflection point, and project the VA along the arrival direction. Particles
/// whose geometry fails or falls outside the region of interest are dropped
/// and the cloud resampled back to size; the ray intersection otherwise has a
/// heavy far tail under angle jitter, and the uniform-over-bounds feature
/// prior is what truncates it.
#[allow(clippy::too_many_arguments)]
pub fn birth_features(
    measurements: &[AngleMeasurement],
    belief: &AssociationBelief,
    ue_particles: &[UeParticle],
    pa: &Pose,
    frame: &MeasurementFrame,
    cfg: &BpConfig,
    bounds: &Rect,
    anchor: usize,
    step: usize,
    next_feature_id: &mut u64,
    rng: &mut ChaCha8Rng,
) -> Vec<Feature> {
    let mut born = Vec::new();
    let birth_prior = cfg.mu_new / (cfg.mu_new + cfg.mu_false);
    for (j, z) in measurements.iter().enumerate() {
        let unassigned = belief.meas_to_feature[j][0];
        if unassigned < cfg.birth_threshold {
            continue;
        }
        let mut particles = Vec::with_capacity(ue_particles.len());
        let mut weights = Vec::with_capacity(ue_particles.len());
        for up in ue_particles {
            let (daod, daoa) = if cfg.angle_sigma > 0.0 {
                (
                    rng.sample::<f64, _>(StandardNormal) * cfg.angle_sigma,
                    rng.sample::<f64, _>(StandardNormal) * cfg.angle_sigma,
                )
            } else {
                (0.0, 0.0)
            };
            let aod_global = wrap_angle(z.aod + daod + frame.pa_orientation);
            let aoa_global = wrap_angle(z.aoa + daoa + frame.ue_orientation);
            let ue_pose = Pose::new(up.state.position, 0.0);
            let Ok(rsp) = rsp_from_angles(pa, &ue_pose, aod_global, aoa_global) else {
                continue;
            };
            let va = va_from_rsp(&pa.position, &rsp, aoa_global);
            if !va.is_finite() || !bounds.contains(&va) {
                continue;
            }
            particles.push(FeatureParticle {
                position: va,
                weight: up.weight,
            });
            weights.push(up.weight);
        }
        if particles.is_empty() {
            continue;
        }
        normalize_weights(&mut weights);
        for (p, w) in particles.iter_mut().zip(&weights) {
            p.weight = *w;
        }
        // Keep the cloud paired with the UE cloud size.
        let n = ue_particles.len();
        if particles.len() != n {
            let idx = systematic_resample_indices(&weights, n, rng.gen::<f64>());
            particles = idx
                .iter()
                .map(|&i| FeatureParticle {
                    position: particles[i].position,
                    weight: 1.0 / n as f64,
                })
                .collect();
        }
        born.push(Feature {
            kind: FeatureKind::Va,
            anchor,
            particles,
            existence: unassigned * birth_prior,
            id: *next_feature_id,
            birth_time: step,
        });
        *next_feature_id += 1;
    }
    born
}

/// Drop features whose existence fell below the unreliability threshold.
pub fn prune(state: &mut SlamState, cfg: &BpConfig) {
    state
        .features
        .retain(|f| f.existence >= cfg.prune_threshold);
}

/// Point estimates read out of the particle clouds.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureEstimate {
    pub id: u64,
    pub kind: FeatureKind,
    pub anchor: usize,
    pub position: Point2,
    pub existence: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RspEstimate {
    pub feature_id: u64,
    pub position: Point2,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Estimate {
    pub ue: UeState,
    pub features: Vec<FeatureEstimate>,
    pub rsps: Vec<RspEstimate>,
}

/// MMSE readout: weighted UE mean, features above the detection threshold
/// with their particle means, and the reflection point each detected VA
/// implies for the current UE estimate.
pub fn estimate(state: &SlamState, cfg: &BpConfig) -> Estimate {
    let ue = state.ue_mean();
    let mut features = Vec::new();
    for f in &state.features {
        if f.existence > cfg.detect_threshold {
            features.push(FeatureEstimate {
                id: f.id,
                kind: f.kind,
                anchor: f.anchor,
                position: f.mean_position(),
                existence: f.existence,
            });
        }
    }
    let mut rsps = Vec::new();
    for fe in &features {
        if fe.kind != FeatureKind::Va {
            continue;
        }
        let Some(pa) = features
            .iter()
            .find(|g| g.kind == FeatureKind::Pa && g.anchor == fe.anchor)
        else {
            continue;
        };
        if let Ok(rsp) = reflection_point(&pa.position, &fe.position, &ue.position) {
            rsps.push(RspEstimate {
                feature_id: fe.id,
                position: rsp,
            });
        }
    }
    Estimate { ue, features, rsps }
}

/// One full filter step. Deterministic given the RNG state.
pub fn step(
    state: &mut SlamState,
    input: &StepInput,
    cfg: &BpConfig,
    rng: &mut ChaCha8Rng,
) -> Result<StepReport, SlamError> {
    state.step += 1;
    let accel_std = cfg.driving_variance.sqrt();

    // State transition; a dwelling sub-step (dt = 0) only roughens positions.
    if input.dt > 0.0 {
        for p in state.ue_particles.iter_mut() {
            p.state = match &input.imu {
                Some(imu) => propagate_imu(&p.state, imu, input.dt, accel_std, rng),
                None => propagate_ncv(&p.state, input.dt, accel_std, rng),
            };
        }
    } else if cfg.dwell_jitter_std > 0.0 {
        for p in state.ue_particles.iter_mut() {
            p.state.position.x += rng.sample::<f64, _>(StandardNormal) * cfg.dwell_jitter_std;
            p.state.position.y += rng.sample::<f64, _>(StandardNormal) * cfg.dwell_jitter_std;
        }
    }
    for f in state.features.iter_mut() {
        survival_predict(f, cfg, rng);
    }

    let active: Vec<usize> = (0..state.features.len())
        .filter(|&i| state.features[i].anchor == input.active_pa)
        .collect();

    // Measurement evaluation tables over freshly paired particles.
    let mut pred = Vec::with_capacity(active.len());
    let mut pair_w = Vec::with_capacity(active.len());
    let mut pairings = Vec::with_capacity(active.len());
    for &fi in &active {
        let f = &state.features[fi];
        if f.particles.len() != state.ue_particles.len() {
            return Err(SlamError::ParticleCountMismatch(
                f.particles.len(),
                state.ue_particles.len(),
            ));
        }
        let pairing = random_pairing(state.ue_particles.len(), rng);
        pred.push(predicted_table(
            f,
            &state.ue_particles,
            &pairing,
            &input.pa_position,
            &input.frame,
        ));
        pair_w.push(pair_weights(f, &state.ue_particles, &pairing));
        pairings.push(pairing);
    }

    let active_refs: Vec<&Feature> = active.iter().map(|&i| &state.features[i]).collect();
    let existences: Vec<f64> = active_refs.iter().map(|f| f.existence).collect();
    let problem =
        build_association_problem(&active_refs, input.measurements, &pred, &pair_w, cfg);
    drop(active_refs);
    let belief = association::solve(&problem, cfg.bp_max_iters, cfg.bp_tol, cfg.bp_damping);

    // UE reweighting by the association-marginalized legacy evidence: through
    // the pairing permutation every UE particle receives exactly one feature
    // sample per feature, an unbiased draw from the feature belief.
    let lr_scale = cfg.p_detect / (cfg.mu_false * FALSE_ALARM_DENSITY);
    let mut ue_weights: Vec<f64> = state.ue_particles.iter().map(|p| p.weight).collect();
    for (ai, &_fi) in active.iter().enumerate() {
        let r = existences[ai];
        for (n, pred_n) in pred[ai].iter().enumerate() {
            let mut evidence = 1.0 - r * cfg.p_detect;
            if let Some(pred_n) = pred_n {
                for (j, z) in input.measurements.iter().enumerate() {
                    evidence += r
                        * belief.extrinsic[ai][j]
                        * lr_scale
                        * angle_pair_density(z, *pred_n, cfg.angle_sigma);
                }
            }
            ue_weights[pairings[ai][n]] *= evidence;
        }
    }

    // Legacy feature updates.
    for (ai, &fi) in active.iter().enumerate() {
        update_legacy_with_tables(
            &mut state.features[fi],
            &belief.extrinsic[ai],
            input.measurements,
            &pred[ai],
            &pair_w[ai],
            cfg,
            rng,
        );
    }

    // Prune before admitting newborns: with a small birth rate a newborn's
    // existence starts below the unreliability threshold and must survive
    // until the next step's evidence confirms or retires it.
    prune(state, cfg);

    // Births from unexplained measurements.
    let born = birth_features(
        input.measurements,
        &belief,
        &state.ue_particles,
        &Pose::new(input.pa_position, input.frame.pa_orientation),
        &input.frame,
        cfg,
        &input.bounds,
        input.active_pa,
        state.step,
        &mut state.next_feature_id,
        rng,
    );
    let n_born = born.len();
    state.features.extend(born);

    // UE weight normalization and resampling.
    let sum = normalize_weights(&mut ue_weights);
    if sum <= 0.0 || !sum.is_finite() {
        return Err(SlamError::ResampleCollapse(state.step));
    }
    for (p, w) in state.ue_particles.iter_mut().zip(&ue_weights) {
        p.weight = *w;
    }
    let n = state.ue_particles.len();
    let ue_ess = effective_sample_size(&ue_weights);
    let ue_resampled = ue_ess < n as f64 / 2.0;
    if ue_resampled {
        let idx = systematic_resample_indices(&ue_weights, n, rng.gen::<f64>());
        let resampled: Vec<UeParticle> = idx
            .iter()
            .map(|&i| UeParticle {
                state: state.ue_particles[i].state,
                weight: 1.0 / n as f64,
            })
            .collect();
        state.ue_particles = resampled;
    }

    Ok(StepReport {
        belief: Some(belief),
        born: n_born,
        ue_ess,
        ue_resampled,
    })
}

/// Feature map shared by sequentially processed UEs: an entering UE copies the
/// current map, and every UE writes its posterior back after its step.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct SharedMap {
    pub features: Vec<Feature>,
    pub next_feature_id: u64,
}

impl SharedMap {
    pub fn from_state(state: &SlamState) -> Self {
        Self {
            features: state.features.clone(),
            next_feature_id: state.next_feature_id,
        }
    }

    pub fn checkout(&self, state: &mut SlamState) {
        state.features = self.features.clone();
        state.next_feature_id = self.next_feature_id;
    }

    pub fn commit(&mut self, state: &SlamState) {
        self.features = state.features.clone();
        self.next_feature_id = state.next_feature_id;
    }
}

/// Serializable snapshot of the filter: the UE estimate plus per-feature
/// summaries alongside the full particle clouds needed to resume.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Snapshot {
    pub step: usize,
    pub next_feature_id: u64,
    pub ue_estimate: UeState,
    pub ue_particles: Vec<UeParticle>,
    pub features: Vec<FeatureSnapshot>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FeatureSnapshot {
    pub id: u64,
    pub kind: FeatureKind,
    pub anchor: usize,
    pub birth_time: usize,
    pub existence: f64,
    pub mean: Point2,
    pub particles: Vec<FeatureParticle>,
}

impl From<&SlamState> for Snapshot {
    fn from(state: &SlamState) -> Self {
        Self {
            step: state.step,
            next_feature_id: state.next_feature_id,
            ue_estimate: state.ue_mean(),
            ue_particles: state.ue_particles.clone(),
            features: state
                .features
                .iter()
                .map(|f| FeatureSnapshot {
                    id: f.id,
                    kind: f.kind,
                    anchor: f.anchor,
                    birth_time: f.birth_time,
                    existence: f.existence,
                    mean: f.mean_position(),
                    particles: f.particles.clone(),
                })
                .collect(),
        }
    }
}

impl From<&Snapshot> for SlamState {
    fn from(snap: &Snapshot) -> Self {
        Self {
            ue_particles: snap.ue_particles.clone(),
            features: snap
                .features
                .iter()
                .map(|f| Feature {
                    kind: f.kind,
                    anchor: f.anchor,
                    particles: f.particles.clone(),
                    existence: f.existence,
                    id: f.id,
                    birth_time: f.birth_time,
                })
                .collect(),
            step: snap.step,
            next_feature_id: snap.next_feature_id,
        }
    }
}
