//! Pose error metrics, ROC curves and run summaries.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::RigidTransform;
use crate::registration::LocalizationResult;

/// Translation error above which a localisation counts as false.
pub const FALSE_LOCALIZATION_DISTANCE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    /// Metres.
    pub e_t: f64,
    /// Radians, in `[0, π]`.
    pub e_r: f64,
}

/// Error of estimate `t_e` against reference `t_c`, read off
/// `ΔT = T_e · T_c⁻¹`.
pub fn pose_error(t_e: &RigidTransform, t_c: &RigidTransform) -> PoseError {
    let delta = t_e.compose(&t_c.inverse());
    PoseError {
        e_t: delta.translation().norm(),
        e_r: delta.rotation_angle(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub threshold: f64,
    pub tpr: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// One point per distinct score, by descending threshold. A pair is
    /// predicted positive when its score is at least the threshold.
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

impl RocCurve {
    /// The point whose false-positive rate is closest to `target_fpr`.
    /// Among points with that same rate the one with the highest true-positive
    /// rate wins; other ties go to the higher threshold.
    pub fn operating_point(&self, target_fpr: f64) -> RocPoint {
        let mut best = self.points[0];
        for p in &self.points[1..] {
            let (d, best_d) = ((p.fpr - target_fpr).abs(), (best.fpr - target_fpr).abs());
            if d < best_d || (p.fpr == best.fpr && p.tpr > best.tpr) {
                best = *p;
            }
        }
        best
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("threshold,tpr,fpr\n");
        for p in &self.points {
            s.push_str(&format!("{},{},{}\n", p.threshold, p.tpr, p.fpr));
        }
        s
    }
}

/// Exact ROC curve over every distinct score with trapezoidal area.
pub fn roc(scored: &[(f64, bool)]) -> Result<RocCurve> {
    let pos = scored.iter().filter(|(_, l)| *l).count();
    let neg = scored.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    if scored.iter().any(|(s, _)| s.is_nan()) {
        return Err(Error::InvalidParams("roc: NaN score".into()));
    }
    let mut sorted = scored.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));

    let mut points = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let (mut prev_tpr, mut prev_fpr) = (0.0, 0.0);
    let mut auc = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let threshold = sorted[i].0;
        while i < sorted.len() && sorted[i].0 == threshold {
            if sorted[i].1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        let tpr = tp as f64 / pos as f64;
        let fpr = fp as f64 / neg as f64;
        auc += (fpr - prev_fpr) * (tpr + prev_tpr) / 2.0;
        prev_tpr = tpr;
        prev_fpr = fpr;
        points.push(RocPoint {
            threshold,
            tpr,
            fpr,
        });
    }
    Ok(RocCurve { points, auc })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rmse {
    pub rmse: f64,
    pub std: f64,
}

impl Rmse {
    fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let rmse = (values.iter().map(|v| v * v).sum::<f64>() / n).sqrt();
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Some(Self {
            rmse,
            std: var.sqrt(),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub frames: usize,
    pub localizations: usize,
    /// Localised frames with translation error above
    /// [`FALSE_LOCALIZATION_DISTANCE`].
    pub false_localizations: usize,
    /// Metres; absent when nothing localised.
    pub translation: Option<Rmse>,
    /// Degrees; absent when nothing localised.
    pub rotation_deg: Option<Rmse>,
    pub per_frame: Vec<FrameError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameError {
    pub frame_id: String,
    pub error: PoseError,
}

/// Summarises per-frame results against a ground-truth trajectory. Frames of
/// the trajectory without a result count as not localised.
pub fn run_report(
    results: &[(String, LocalizationResult)],
    gt: &[(String, RigidTransform)],
) -> Result<RunReport> {
    let truth: HashMap<&str, &RigidTransform> = gt.iter().map(|(id, t)| (id.as_str(), t)).collect();
    let mut per_frame = Vec::new();
    for (id, r) in results {
        let t = truth
            .get(id.as_str())
            .ok_or_else(|| Error::InvalidParams(format!("no ground truth for frame {id:?}")))?;
        if r.is_localized() {
            per_frame.push(FrameError {
                frame_id: id.clone(),
                error: pose_error(&r.transform, t),
            });
        }
    }
    let e_t: Vec<f64> = per_frame.iter().map(|f| f.error.e_t).collect();
    let e_r: Vec<f64> = per_frame.iter().map(|f| f.error.e_r.to_degrees()).collect();
    Ok(RunReport {
        frames: gt.len(),
        localizations: per_frame.len(),
        false_localizations: e_t
            .iter()
            .filter(|&&e| e > FALSE_LOCALIZATION_DISTANCE)
            .count(),
        translation: Rmse::of(&e_t),
        rotation_deg: Rmse::of(&e_r),
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::registration::LocalizationStatus;
    use nalgebra::Vector3;
    use std::f64::consts::FRAC_PI_2;

    #[test]
    fn three_four_five() {
        let e = pose_error(
            &RigidTransform::from_translation(Vector3::new(3.0, 4.0, 0.0)),
            &RigidTransform::identity(),
        );
        assert_eq!(e.e_t, 5.0);
        assert_eq!(e.e_r, 0.0);
    }

    #[test]
    fn yaw_quarter_turn() {
        let e = pose_error(
            &RigidTransform::from_yaw(FRAC_PI_2, Vector3::zeros()),
            &RigidTransform::identity(),
        );
        assert!((e.e_r - FRAC_PI_2).abs() < 1e-12);
        assert_eq!(e.e_t, 0.0);
    }

    #[test]
    fn hand_auc() {
        let r = roc(&[(0.9, true), (0.8, false), (0.7, true), (0.1, false)]).unwrap();
        assert!((r.auc - 0.75).abs() < 1e-12);
        assert_eq!(r.points.len(), 4);
        assert_eq!(r.points.last().unwrap().tpr, 1.0);
    }

    #[test]
    fn separated_and_single_class() {
        assert_eq!(roc(&[(0.9, true), (0.2, false)]).unwrap().auc, 1.0);
        assert!(matches!(roc(&[(0.9, true)]), Err(Error::SingleClass)));
    }

    #[test]
    fn ties_count_half() {
        let r = roc(&[(0.5, true), (0.5, false)]).unwrap();
        assert_eq!(r.auc, 0.5);
    }

    #[test]
    fn operating_point_picks_nearest_fpr() {
        let r = roc(&[(0.9, true), (0.8, false), (0.7, true), (0.1, false)]).unwrap();
        let p = r.operating_point(0.1);
        assert_eq!(p.threshold, 0.9);
        let p = r.operating_point(0.5);
        assert_eq!((p.threshold, p.tpr), (0.7, 1.0));
        let p = r.operating_point(0.75);
        assert_eq!(p.threshold, 0.7);
    }

    fn localized(t: RigidTransform) -> LocalizationResult {
        LocalizationResult {
            transform: t,
            inliers: Vec::new(),
            consistency_cluster_size: 4,
            status: LocalizationStatus::Localized,
        }
    }

    #[test]
    fn report_rmse_of_three_and_four() {
        let gt = vec![
            ("a".to_string(), RigidTransform::identity()),
            ("b".to_string(), RigidTransform::identity()),
            ("c".to_string(), RigidTransform::identity()),
        ];
        let results = vec![
            (
                "a".to_string(),
                localized(RigidTransform::from_translation(Vector3::new(
                    3.0, 0.0, 0.0,
                ))),
            ),
            (
                "b".to_string(),
                localized(RigidTransform::from_translation(Vector3::new(
                    0.0, 4.0, 0.0,
                ))),
            ),
            (
                "c".to_string(),
                LocalizationResult::failed(LocalizationStatus::InsufficientMatches, 0),
            ),
        ];
        let r = run_report(&results, &gt).unwrap();
        assert_eq!((r.localizations, r.frames), (2, 3));
        assert!((r.translation.unwrap().rmse - 12.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(r.false_localizations, 2);
    }

    #[test]
    fn empty_report() {
        let gt = vec![("a".to_string(), RigidTransform::identity())];
        let r = run_report(&[], &gt).unwrap();
        assert_eq!((r.localizations, r.frames), (0, 1));
        assert!(r.translation.is_none() && r.rotation_deg.is_none());
    }

    #[test]
    fn unknown_frame_rejected() {
        let results = vec![("zz".to_string(), localized(RigidTransform::identity()))];
        assert!(run_report(&results, &[]).is_err());
    }
}
