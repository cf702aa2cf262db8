//! Pose and trajectory error metrics.
//!
//! Conventions, stated here once and echoed by [`conventions`] so reports
//! are auditable:
//!
//! * `mpjpe` and `pck` compare joints after per-frame root-joint alignment
//!   and average over the non-root joints (the root is identically zero
//!   after alignment and would only dilute the mean).
//! * `pa_mpjpe` fits a per-frame similarity transform (rotation,
//!   translation, scale) on all joints, then averages the non-root errors,
//!   keeping it comparable to `mpjpe`.
//! * `pck` counts errors strictly below 0.3 metres.
//! * `wa_mpjpe` and `w_mpjpe` split the clip into consecutive 100-frame
//!   segments (final partial segment kept). WA aligns each segment rigidly
//!   on all of its joints; W aligns on the segment's first two frames only.
//! * `rte` rigidly aligns the full predicted root trajectory to the ground
//!   truth (translation-only when the trajectory is collinear and the
//!   rotation is underdetermined), then reports the mean residual as a
//!   percentage of the ground-truth path length.
//! * `t_error` aligns the first frame's translation only.
//! * `jitter` is a property of the prediction alone (mean third-difference
//!   magnitude of its joints); every other metric vanishes when prediction
//!   and ground truth coincide.

use crate::body::{skin_all, BodyTemplate};
use crate::geometry::kabsch;
use crate::motion::{MotionSequence, JOINT_COUNT};
use nalgebra::Vector3;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;

/// Joint positions of one frame.
pub type FrameJoints = [Vector3<f64>; JOINT_COUNT];

/// Frames per 100-frame evaluation segment.
pub const SEGMENT_LEN: usize = 100;
/// PCK correctness threshold, metres.
pub const PCK_THRESHOLD: f64 = 0.3;

const MM: f64 = 1000.0;

/// The full evaluation protocol output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalResult {
    /// Root-aligned mean per-joint error, mm.
    pub mpjpe: f64,
    /// Procrustes-aligned mean per-joint error, mm.
    pub pa_mpjpe: f64,
    /// Raw mean per-vertex error, mm.
    pub pve: f64,
    /// Mean joint acceleration error, m/s².
    pub accel: f64,
    /// Fraction of root-aligned joints within 0.3 m.
    pub pck03: f64,
    /// Segment-aligned world MPJPE, mm.
    pub wa_mpjpe: f64,
    /// First-two-frame-aligned world MPJPE, mm.
    pub w_mpjpe: f64,
    /// Trajectory drift, percent of ground-truth path length.
    pub rte: f64,
    /// Mean third-difference magnitude of predicted joints, m/s³.
    pub jitter: f64,
    /// Mean root translation error after first-frame alignment, m.
    pub t_error: f64,
}

impl EvalResult {
    /// Runs the whole protocol on a prediction/ground-truth pair.
    pub fn compute(
        pred: &MotionSequence,
        gt: &MotionSequence,
        template: &BodyTemplate,
    ) -> crate::Result<Self> {
        check_pair(pred, gt)?;
        let pred_posed = skin_all(template, pred);
        let gt_posed = skin_all(template, gt);
        let pred_joints: Vec<FrameJoints> = pred_posed.iter().map(|p| p.joints).collect();
        let gt_joints: Vec<FrameJoints> = gt_posed.iter().map(|p| p.joints).collect();

        let mut pve_sum = 0.0;
        let mut pve_count = 0usize;
        for (p, g) in pred_posed.iter().zip(&gt_posed) {
            for (pv, gv) in p.vertices.iter().zip(&g.vertices) {
                pve_sum += (pv - gv).norm();
                pve_count += 1;
            }
        }

        let result = Self {
            mpjpe: mpjpe_joints(&pred_joints, &gt_joints)?,
            pa_mpjpe: pa_mpjpe_joints(&pred_joints, &gt_joints)?,
            pve: MM * pve_sum / pve_count as f64,
            accel: accel_error_joints(&pred_joints, &gt_joints, pred.frame_rate)?,
            pck03: pck_joints(&pred_joints, &gt_joints, PCK_THRESHOLD)?,
            wa_mpjpe: mean(&wa_mpjpe_segments(&pred_joints, &gt_joints)?),
            w_mpjpe: mean(&w_mpjpe_segments(&pred_joints, &gt_joints)?),
            rte: rte(&pred.translations, &gt.translations)?,
            jitter: jitter_joints(&pred_joints, pred.frame_rate)?,
            t_error: t_error(&pred.translations, &gt.translations)?,
        };
        result.validate()?;
        Ok(result)
    }

    pub fn validate(&self) -> crate::Result<()> {
        let fields = [
            ("mpjpe", self.mpjpe),
            ("pa_mpjpe", self.pa_mpjpe),
            ("pve", self.pve),
            ("accel", self.accel),
            ("pck03", self.pck03),
            ("wa_mpjpe", self.wa_mpjpe),
            ("w_mpjpe", self.w_mpjpe),
            ("rte", self.rte),
            ("jitter", self.jitter),
            ("t_error", self.t_error),
        ];
        for (name, v) in fields {
            if !v.is_finite() || v < 0.0 {
                return Err(crate::Error::validation(
                    name,
                    format!("metric must be finite and non-negative, got {v}"),
                ));
            }
        }
        if self.pck03 > 1.0 {
            return Err(crate::Error::validation("pck03", "fraction above 1"));
        }
        Ok(())
    }
}

/// Machine-readable statement of the conventions documented on this module,
/// embedded in evaluation reports.
pub fn conventions() -> BTreeMap<String, String> {
    let mut map = BTreeMap::new();
    map.insert(
        "mpjpe_alignment".into(),
        "per-frame root joint; averaged over non-root joints".into(),
    );
    map.insert(
        "pa_mpjpe_alignment".into(),
        "per-frame similarity (rotation, translation, scale) fit on all joints; \
         averaged over non-root joints"
            .into(),
    );
    map.insert("pck_threshold".into(), "0.3 m, strict, root-aligned".into());
    map.insert(
        "segmenting".into(),
        "consecutive 100-frame segments, final partial segment kept".into(),
    );
    map.insert(
        "wa_w_alignment".into(),
        "rigid (no scale); WA on the whole segment, W on its first two frames".into(),
    );
    map.insert(
        "rte".into(),
        "rigid alignment of the full root trajectory (translation-only when \
         collinear); mean residual over ground-truth path length, percent"
            .into(),
    );
    map.insert("t_error".into(), "first-frame translation alignment, metres".into());
    map.insert("jitter".into(), "prediction-only mean third difference, m/s^3".into());
    map
}

fn check_pair(pred: &MotionSequence, gt: &MotionSequence) -> crate::Result<()> {
    if pred.num_frames() != gt.num_frames() {
        return Err(crate::Error::DimensionMismatch {
            context: "prediction vs ground-truth frames",
            expected: gt.num_frames(),
            got: pred.num_frames(),
        });
    }
    if pred.frame_rate != gt.frame_rate {
        return Err(crate::Error::validation(
            "frame_rate",
            format!(
                "prediction at {} fps but ground truth at {} fps",
                pred.frame_rate, gt.frame_rate
            ),
        ));
    }
    crate::frame::expect_frame("prediction vs ground truth", gt.frame, pred.frame)
}

fn check_joint_pair(pred: &[FrameJoints], gt: &[FrameJoints]) -> crate::Result<()> {
    if pred.len() != gt.len() {
        return Err(crate::Error::DimensionMismatch {
            context: "joint sequence lengths",
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if pred.is_empty() {
        return Err(crate::Error::NotEnoughFrames {
            context: "joint metrics",
            needed: 1,
            got: 0,
        });
    }
    Ok(())
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Root-aligned mean per-joint error, mm, over non-root joints.
pub fn mpjpe_joints(pred: &[FrameJoints], gt: &[FrameJoints]) -> crate::Result<f64> {
    check_joint_pair(pred, gt)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for j in 1..JOINT_COUNT {
            sum += ((p[j] - p[0]) - (g[j] - g[0])).norm();
            count += 1;
        }
    }
    Ok(MM * sum / count as f64)
}

/// Procrustes-aligned mean per-joint error, mm.
pub fn pa_mpjpe_joints(pred: &[FrameJoints], gt: &[FrameJoints]) -> crate::Result<f64> {
    check_joint_pair(pred, gt)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        let fit = kabsch(p, g, true)?;
        for j in 1..JOINT_COUNT {
            sum += (fit.apply(&p[j]) - g[j]).norm();
            count += 1;
        }
    }
    Ok(MM * sum / count as f64)
}

/// Fraction of root-aligned non-root joints with error strictly below
/// `threshold` metres.
pub fn pck_joints(pred: &[FrameJoints], gt: &[FrameJoints], threshold: f64) -> crate::Result<f64> {
    check_joint_pair(pred, gt)?;
    let mut hits = 0usize;
    let mut count = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for j in 1..JOINT_COUNT {
            if ((p[j] - p[0]) - (g[j] - g[0])).norm() < threshold {
                hits += 1;
            }
            count += 1;
        }
    }
    Ok(hits as f64 / count as f64)
}

/// Mean joint acceleration error, m/s².
pub fn accel_error_joints(
    pred: &[FrameJoints],
    gt: &[FrameJoints],
    frame_rate: f64,
) -> crate::Result<f64> {
    check_joint_pair(pred, gt)?;
    let n = pred.len();
    if n < 3 {
        return Err(crate::Error::NotEnoughFrames {
            context: "acceleration error",
            needed: 3,
            got: n,
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..n - 2 {
        for j in 0..JOINT_COUNT {
            let pa = (pred[k + 2][j] - pred[k + 1][j]) - (pred[k + 1][j] - pred[k][j]);
            let ga = (gt[k + 2][j] - gt[k + 1][j]) - (gt[k + 1][j] - gt[k][j]);
            sum += (pa - ga).norm();
            count += 1;
        }
    }
    Ok(sum / count as f64 * frame_rate * frame_rate)
}

/// Mean third-difference magnitude of the predicted joints, m/s³.
pub fn jitter_joints(pred: &[FrameJoints], frame_rate: f64) -> crate::Result<f64> {
    let n = pred.len();
    if n < 4 {
        return Err(crate::Error::NotEnoughFrames {
            context: "jitter",
            needed: 4,
            got: n,
        });
    }
    let mut sum = 0.0;
    let mut count = 0usize;
    for k in 0..n - 3 {
        for j in 0..JOINT_COUNT {
            let third =
                pred[k + 3][j] - 3.0 * pred[k + 2][j] + 3.0 * pred[k + 1][j] - pred[k][j];
            sum += third.norm();
            count += 1;
        }
    }
    Ok(sum / count as f64 * frame_rate.powi(3))
}

/// Consecutive evaluation segments covering `0..n`; the final one may be
/// shorter than [`SEGMENT_LEN`].
pub fn segment_bounds(n: usize) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = 0;
    while start < n {
        let end = (start + SEGMENT_LEN).min(n);
        out.push((start, end));
        start = end;
    }
    out
}

fn segment_error(
    pred: &[FrameJoints],
    gt: &[FrameJoints],
    align_frames: usize,
) -> crate::Result<f64> {
    let fit_len = align_frames.min(pred.len());
    let source: Vec<Vector3<f64>> = pred[..fit_len].iter().flatten().copied().collect();
    let target: Vec<Vector3<f64>> = gt[..fit_len].iter().flatten().copied().collect();
    let fit = kabsch(&source, &target, false)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, g) in pred.iter().zip(gt) {
        for j in 0..JOINT_COUNT {
            sum += (fit.apply(&p[j]) - g[j]).norm();
            count += 1;
        }
    }
    Ok(MM * sum / count as f64)
}

/// Per-segment world MPJPE with whole-segment rigid alignment, mm.
pub fn wa_mpjpe_segments(pred: &[FrameJoints], gt: &[FrameJoints]) -> crate::Result<Vec<f64>> {
    check_joint_pair(pred, gt)?;
    segment_bounds(pred.len())
        .into_iter()
        .map(|(s, e)| segment_error(&pred[s..e], &gt[s..e], e - s))
        .collect()
}

/// Per-segment world MPJPE aligned on each segment's first two frames, mm.
pub fn w_mpjpe_segments(pred: &[FrameJoints], gt: &[FrameJoints]) -> crate::Result<Vec<f64>> {
    check_joint_pair(pred, gt)?;
    segment_bounds(pred.len())
        .into_iter()
        .map(|(s, e)| segment_error(&pred[s..e], &gt[s..e], 2))
        .collect()
}

/// Segment-aligned world MPJPE averaged over segments, mm.
pub fn wa_mpjpe(
    pred: &MotionSequence,
    gt: &MotionSequence,
    template: &BodyTemplate,
) -> crate::Result<f64> {
    check_pair(pred, gt)?;
    let (p, g) = joint_tracks(pred, gt, template);
    Ok(mean(&wa_mpjpe_segments(&p, &g)?))
}

/// First-two-frame-aligned world MPJPE averaged over segments, mm.
pub fn w_mpjpe(
    pred: &MotionSequence,
    gt: &MotionSequence,
    template: &BodyTemplate,
) -> crate::Result<f64> {
    check_pair(pred, gt)?;
    let (p, g) = joint_tracks(pred, gt, template);
    Ok(mean(&w_mpjpe_segments(&p, &g)?))
}

fn joint_tracks(
    pred: &MotionSequence,
    gt: &MotionSequence,
    template: &BodyTemplate,
) -> (Vec<FrameJoints>, Vec<FrameJoints>) {
    let p = skin_all(template, pred).iter().map(|b| b.joints).collect();
    let g = skin_all(template, gt).iter().map(|b| b.joints).collect();
    (p, g)
}

/// Root-aligned mean per-joint error, mm.
pub fn mpjpe(
    pred: &MotionSequence,
    gt: &MotionSequence,
    template: &BodyTemplate,
) -> crate::Result<f64> {
    check_pair(pred, gt)?;
    let (p, g) = joint_tracks(pred, gt, template);
    mpjpe_joints(&p, &g)
}

/// Procrustes-aligned mean per-joint error, mm.
pub fn pa_mpjpe(
    pred: &MotionSequence,
    gt: &MotionSequence,
    template: &BodyTemplate,
) -> crate::Result<f64> {
    check_pair(pred, gt)?;
    let (p, g) = joint_tracks(pred, gt, template);
    pa_mpjpe_joints(&p, &g)
}

/// Raw mean per-vertex error, mm (no alignment).
pub fn pve(
    pred: &MotionSequence,
    gt: &MotionSequence,
    template: &BodyTemplate,
) -> crate::Result<f64> {
    check_pair(pred, gt)?;
    let pred_posed = skin_all(template, pred);
    let gt_posed = skin_all(template, gt);
    let mut sum = 0.0;
    let mut count = 0usize;
    for (p, g) in pred_posed.iter().zip(&gt_posed) {
        for (pv, gv) in p.vertices.iter().zip(&g.vertices) {
            sum += (pv - gv).norm();
            count += 1;
        }
    }
    Ok(MM * sum / count as f64)
}

/// Mean joint acceleration error between motions, m/s².
pub fn accel_error(
    pred: &MotionSequence,
    gt: &MotionSequence,
    template: &BodyTemplate,
) -> crate::Result<f64> {
    check_pair(pred, gt)?;
    let (p, g) = joint_tracks(pred, gt, template);
    accel_error_joints(&p, &g, pred.frame_rate)
}

/// Mean third-difference magnitude of a motion's joints, m/s³.
pub fn jitter(pred: &MotionSequence, template: &BodyTemplate) -> crate::Result<f64> {
    let joints: Vec<FrameJoints> = skin_all(template, pred).iter().map(|b| b.joints).collect();
    jitter_joints(&joints, pred.frame_rate)
}

/// Fraction of root-aligned joints within [`PCK_THRESHOLD`].
pub fn pck(
    pred: &MotionSequence,
    gt: &MotionSequence,
    template: &BodyTemplate,
) -> crate::Result<f64> {
    check_pair(pred, gt)?;
    let (p, g) = joint_tracks(pred, gt, template);
    pck_joints(&p, &g, PCK_THRESHOLD)
}

fn check_trajectory_pair(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> crate::Result<()> {
    if pred.len() != gt.len() {
        return Err(crate::Error::DimensionMismatch {
            context: "trajectory lengths",
            expected: gt.len(),
            got: pred.len(),
        });
    }
    if pred.len() < 2 {
        return Err(crate::Error::NotEnoughFrames {
            context: "trajectory metrics",
            needed: 2,
            got: pred.len(),
        });
    }
    Ok(())
}

/// Trajectory drift as a percentage of ground-truth path length.
///
/// The predicted trajectory is rigidly aligned to the ground truth first;
/// when the rotation is underdetermined (collinear or too-short
/// trajectories) the alignment degrades to matching centroids.
pub fn rte(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> crate::Result<f64> {
    check_trajectory_pair(pred, gt)?;
    let path_length: f64 = gt.windows(2).map(|w| (w[1] - w[0]).norm()).sum();
    if path_length <= 0.0 {
        return Err(crate::Error::Degenerate(
            "ground-truth path has zero length; RTE is undefined".into(),
        ));
    }
    let residual_sum: f64 = match kabsch(pred, gt, false) {
        Ok(fit) => pred
            .iter()
            .zip(gt)
            .map(|(p, g)| (fit.apply(p) - g).norm())
            .sum(),
        Err(crate::Error::Degenerate(_)) => {
            let n = pred.len() as f64;
            let shift: Vector3<f64> =
                (gt.iter().sum::<Vector3<f64>>() - pred.iter().sum::<Vector3<f64>>()) / n;
            pred.iter().zip(gt).map(|(p, g)| (p + shift - g).norm()).sum()
        }
        Err(other) => return Err(other),
    };
    Ok(residual_sum / pred.len() as f64 / path_length * 100.0)
}

/// Mean per-frame root translation error after aligning the first frame, m.
pub fn t_error(pred: &[Vector3<f64>], gt: &[Vector3<f64>]) -> crate::Result<f64> {
    check_trajectory_pair(pred, gt)?;
    let sum: f64 = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| ((p - pred[0]) - (g - gt[0])).norm())
        .sum();
    Ok(sum / pred.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::body::make_synthetic_template;
    use crate::frame::CoordinateFrame;
    use crate::motion::SHAPE_COUNT;
    use crate::rotation::rodrigues;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_joints(rng: &mut ChaCha8Rng, n: usize) -> Vec<FrameJoints> {
        (0..n)
            .map(|_| {
                let mut f = [Vector3::zeros(); JOINT_COUNT];
                for j in &mut f {
                    *j = Vector3::new(
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                        rng.gen_range(-1.0..1.0),
                    );
                }
                f
            })
            .collect()
    }

    fn walking_motion(n: usize) -> (BodyTemplate, MotionSequence) {
        let template = make_synthetic_template(320, 11).unwrap();
        let translations = (0..n)
            .map(|k| Vector3::new(0.03 * k as f64, 0.01 * (k as f64 * 0.4).sin(), 0.9))
            .collect();
        let poses = (0..n)
            .map(|k| {
                let mut p = [Vector3::zeros(); JOINT_COUNT];
                p[1] = Vector3::new(0.3 * (k as f64 * 0.3).sin(), 0.0, 0.0);
                p[16] = Vector3::new(0.0, 0.2 * (k as f64 * 0.5).cos(), 0.0);
                p
            })
            .collect();
        let motion = MotionSequence::new(
            translations,
            poses,
            [0.0; SHAPE_COUNT],
            20.0,
            CoordinateFrame::World,
        )
        .unwrap();
        (template, motion)
    }

    #[test]
    fn identical_motions_score_perfectly() {
        let (template, motion) = walking_motion(12);
        let result = EvalResult::compute(&motion, &motion, &template).unwrap();
        assert_eq!(result.mpjpe, 0.0);
        assert_eq!(result.pve, 0.0);
        assert_eq!(result.accel, 0.0);
        assert_eq!(result.t_error, 0.0);
        assert_eq!(result.pck03, 1.0);
        // Alignment-based metrics go through an SVD and only reach machine
        // zero; jitter measures the prediction itself, which here moves.
        assert!(result.pa_mpjpe < 1e-9, "{}", result.pa_mpjpe);
        assert!(result.wa_mpjpe < 1e-9, "{}", result.wa_mpjpe);
        assert!(result.w_mpjpe < 1e-9, "{}", result.w_mpjpe);
        assert!(result.rte < 1e-9, "{}", result.rte);
        assert!(result.jitter.is_finite());
    }

    #[test]
    fn mpjpe_of_a_uniform_offset_is_that_offset() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let gt = random_joints(&mut rng, 6);
        let mut pred = gt.clone();
        // 10 mm on every non-root joint, varying directions.
        for f in &mut pred {
            for (j, p) in f.iter_mut().enumerate().skip(1) {
                let dir = Vector3::new(
                    (j as f64).sin(),
                    (j as f64 * 1.7).cos(),
                    (j as f64 * 0.3).sin(),
                )
                .normalize();
                *p += 0.010 * dir;
            }
        }
        let v = mpjpe_joints(&pred, &gt).unwrap();
        assert!((v - 10.0).abs() < 1e-9, "{v}");

        // A whole-body translation is removed by root alignment (up to the
        // rounding of the shifted coordinates).
        let shifted: Vec<FrameJoints> = gt
            .iter()
            .map(|f| f.map(|p| p + Vector3::new(4.0, -1.0, 2.0)))
            .collect();
        assert!(mpjpe_joints(&shifted, &gt).unwrap() < 1e-9);
    }

    #[test]
    fn mpjpe_matches_a_direct_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let gt = random_joints(&mut rng, 9);
        let pred = random_joints(&mut rng, 9);
        let v = mpjpe_joints(&pred, &gt).unwrap();
        let mut total = 0.0;
        for k in 0..9 {
            for j in 1..JOINT_COUNT {
                let p = pred[k][j] - pred[k][0];
                let g = gt[k][j] - gt[k][0];
                total += ((p.x - g.x).powi(2) + (p.y - g.y).powi(2) + (p.z - g.z).powi(2)).sqrt();
            }
        }
        let oracle = 1000.0 * total / (9.0 * (JOINT_COUNT - 1) as f64);
        assert!((v - oracle).abs() < 1e-9);
    }

    #[test]
    fn pa_mpjpe_removes_similarity_transforms_and_beats_mpjpe() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let gt = random_joints(&mut rng, 5);
        let r = rodrigues(&Vector3::new(0.3, -0.7, 0.5));
        let pred: Vec<FrameJoints> = gt
            .iter()
            .map(|f| f.map(|p| 1.4 * (r * p) + Vector3::new(2.0, 0.5, -1.0)))
            .collect();
        let v = pa_mpjpe_joints(&pred, &gt).unwrap();
        assert!(v < 1e-6, "{v}");

        for trial in 0..100 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 + trial);
            let gt = random_joints(&mut rng, 4);
            let pred: Vec<FrameJoints> = gt
                .iter()
                .map(|f| {
                    f.map(|p| {
                        p + Vector3::new(
                            rng.gen_range(-0.1..0.1),
                            rng.gen_range(-0.1..0.1),
                            rng.gen_range(-0.1..0.1),
                        )
                    })
                })
                .collect();
            let pa = pa_mpjpe_joints(&pred, &gt).unwrap();
            let root = mpjpe_joints(&pred, &gt).unwrap();
            assert!(pa <= root + 1e-9, "trial {trial}: pa {pa} vs mpjpe {root}");
        }
    }

    #[test]
    fn accel_and_jitter_match_hand_arithmetic() {
        let mut gt = vec![[Vector3::zeros(); JOINT_COUNT]; 4];
        // Constant velocity: zero acceleration, zero jitter.
        for (k, f) in gt.iter_mut().enumerate() {
            for j in f.iter_mut() {
                *j = Vector3::new(0.25 * k as f64, 0.0, 0.0);
            }
        }
        assert_eq!(jitter_joints(&gt, 20.0).unwrap(), 0.0);
        assert_eq!(accel_error_joints(&gt, &gt, 20.0).unwrap(), 0.0);

        // One joint gains a z-kink of 0.01 at the last frame: third
        // difference is exactly (0,0,0.01) for that joint.
        let mut pred = gt.clone();
        pred[3][5].z += 0.01;
        let fps: f64 = 20.0;
        let expected = 0.01 * fps.powi(3) / JOINT_COUNT as f64;
        let v = jitter_joints(&pred, fps).unwrap();
        assert!((v - expected).abs() < 1e-9, "{v} vs {expected}");

        // The same kink is a second difference of 0.01 in one of the two
        // acceleration windows.
        let expected = 0.01 * fps * fps / (2.0 * JOINT_COUNT as f64);
        let v = accel_error_joints(&pred, &gt, fps).unwrap();
        assert!((v - expected).abs() < 1e-9, "{v} vs {expected}");

        assert!(accel_error_joints(&gt[..2], &gt[..2], fps).is_err());
        assert!(jitter_joints(&gt[..3], fps).is_err());
    }

    #[test]
    fn pck_counts_strictly_within_threshold() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        let gt = random_joints(&mut rng, 2);
        assert_eq!(pck_joints(&gt, &gt, PCK_THRESHOLD).unwrap(), 1.0);

        // Every non-root joint one metre off: nothing counts.
        let far: Vec<FrameJoints> = gt
            .iter()
            .map(|f| {
                let mut out = *f;
                for p in out.iter_mut().skip(1) {
                    *p += Vector3::new(0.0, 1.0, 0.0);
                }
                out
            })
            .collect();
        assert_eq!(pck_joints(&far, &gt, PCK_THRESHOLD).unwrap(), 0.0);

        // One frame 0.1 off (counts), one frame 0.5 off (does not): half.
        let mixed: Vec<FrameJoints> = gt
            .iter()
            .enumerate()
            .map(|(k, f)| {
                let offset = if k == 0 { 0.1 } else { 0.5 };
                let mut out = *f;
                for p in out.iter_mut().skip(1) {
                    *p += Vector3::new(offset, 0.0, 0.0);
                }
                out
            })
            .collect();
        assert_eq!(pck_joints(&mixed, &gt, PCK_THRESHOLD).unwrap(), 0.5);
    }

    #[test]
    fn segments_split_100_100_50() {
        assert_eq!(segment_bounds(250), vec![(0, 100), (100, 200), (200, 250)]);
        assert_eq!(segment_bounds(100), vec![(0, 100)]);
        assert_eq!(segment_bounds(7), vec![(0, 7)]);
    }

    #[test]
    fn whole_segment_alignment_never_loses_to_two_frame_alignment() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let gt = random_joints(&mut rng, 40);
        // Rotate the prediction about the segment start: the first frames
        // almost agree, the tail swings wide.
        let pivot = gt[0][0];
        let r = rodrigues(&Vector3::new(0.0, 0.0, 10f64.to_radians()));
        let pred: Vec<FrameJoints> = gt
            .iter()
            .map(|f| f.map(|p| r * (p - pivot) + pivot))
            .collect();
        let w = mean(&w_mpjpe_segments(&pred, &gt).unwrap());
        let wa = mean(&wa_mpjpe_segments(&pred, &gt).unwrap());
        assert!(w >= wa, "w {w} < wa {wa}");
        assert!(wa > 0.0);
    }

    #[test]
    fn rte_matches_the_hand_formula_on_linear_drift() {
        // Straight 10 m ground-truth path, 101 frames; prediction drifts
        // linearly to 1 m off at the end. The collinear trajectory takes the
        // translation-only alignment branch: residuals are |k/100 - 1/2|.
        let n = 101;
        let gt: Vec<Vector3<f64>> = (0..n).map(|k| Vector3::new(0.1 * k as f64, 0.0, 0.0)).collect();
        let pred: Vec<Vector3<f64>> = gt
            .iter()
            .enumerate()
            .map(|(k, g)| g + Vector3::new(0.0, k as f64 / 100.0, 0.0))
            .collect();
        let v = rte(&pred, &gt).unwrap();
        let mean_residual: f64 =
            (0..n).map(|k| (k as f64 / 100.0 - 0.5).abs()).sum::<f64>() / n as f64;
        let expected = mean_residual / 10.0 * 100.0;
        assert!((v - expected).abs() < 1e-9, "{v} vs {expected}");

        // A rigidly transformed curved trajectory aligns away completely.
        let gt: Vec<Vector3<f64>> = (0..50)
            .map(|k| {
                let t = k as f64 * 0.2;
                Vector3::new(t.cos(), t.sin(), 0.05 * t)
            })
            .collect();
        let r = rodrigues(&Vector3::new(0.2, 0.1, -0.4));
        let pred: Vec<Vector3<f64>> =
            gt.iter().map(|p| r * p + Vector3::new(3.0, -1.0, 0.5)).collect();
        assert!(rte(&pred, &gt).unwrap() < 1e-9);

        let still = vec![Vector3::zeros(); 5];
        assert!(matches!(
            rte(&still, &still),
            Err(crate::Error::Degenerate(_))
        ));
    }

    #[test]
    fn t_error_ignores_a_constant_offset() {
        let gt: Vec<Vector3<f64>> =
            (0..20).map(|k| Vector3::new(0.1 * k as f64, 0.0, 0.0)).collect();
        let pred: Vec<Vector3<f64>> =
            gt.iter().map(|g| g + Vector3::new(1.0, 2.0, 3.0)).collect();
        assert!(t_error(&pred, &gt).unwrap() < 1e-12);

        // A pure end drift of 0.5 m averaged over the clip.
        let drifted: Vec<Vector3<f64>> = gt
            .iter()
            .enumerate()
            .map(|(k, g)| g + Vector3::new(0.0, 0.5 * k as f64 / 19.0, 0.0))
            .collect();
        let expected: f64 = (0..20).map(|k| 0.5 * k as f64 / 19.0).sum::<f64>() / 20.0;
        let v = t_error(&drifted, &gt).unwrap();
        assert!((v - expected).abs() < 1e-12);
    }

    #[test]
    fn motion_level_wrappers_agree_with_joint_level() {
        let (template, gt) = walking_motion(10);
        let mut pred = gt.clone();
        for t in &mut pred.translations {
            t.y += 0.02;
        }
        let joints_pred: Vec<FrameJoints> =
            skin_all(&template, &pred).iter().map(|b| b.joints).collect();
        let joints_gt: Vec<FrameJoints> =
            skin_all(&template, &gt).iter().map(|b| b.joints).collect();
        assert_eq!(
            mpjpe(&pred, &gt, &template).unwrap(),
            mpjpe_joints(&joints_pred, &joints_gt).unwrap()
        );
        // Rigid whole-body offsets vanish under root alignment but not PVE.
        assert!(mpjpe(&pred, &gt, &template).unwrap() < 1e-9);
        assert!(pve(&pred, &gt, &template).unwrap() > 0.0);

        let mut short = gt.clone();
        short.translations.pop();
        short.poses.pop();
        assert!(mpjpe(&short, &gt, &template).is_err());
    }
}
