//! Metric tests: closed-form checks, hand-worked cases, and brute-force
//! enumeration oracles for every matching-based metric.
//!
//! The oracles deliberately recompute each metric from its declarative
//! definition — assignment enumeration instead of an incremental greedy
//! pass, naive precision scans instead of a suffix envelope, from-scratch
//! re-matching per score threshold — so agreement is evidence, not an
//! identity.

use super::report::gt_keypoints;
use super::*;
use crate::geom::{box_iou, mask_iou, BBox, Mask};
use crate::infer::infer_pose_on_instance;
use crate::keypoint::{Keypoint, Visibility, NUM_KEYPOINTS};
use crate::nets::{init_components, Detection, ModelConfig, ParamStore};
use crate::sample::{Category, Domain, Sample};
use crate::synthdata::{build_dataset, DistributionParams};
use approx::assert_relative_eq;
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// Construction helpers
// ---------------------------------------------------------------------------

/// A 13-joint pose spread deterministically around (cx, cy).
fn pose_at(cx: f32, cy: f32) -> [Keypoint; NUM_KEYPOINTS] {
    let mut kps = [Keypoint::not_labeled(); NUM_KEYPOINTS];
    for (i, kp) in kps.iter_mut().enumerate() {
        *kp = Keypoint {
            x: cx + 2.5 * i as f32,
            y: cy + 1.5 * ((i * 3) % 7) as f32,
            visibility: Visibility::LabeledVisible,
        };
    }
    kps
}

fn gt_at(cx: f32, cy: f32, area: f64) -> PoseGt {
    PoseGt {
        keypoints: pose_at(cx, cy),
        area,
    }
}

fn pred_at(cx: f32, cy: f32, score: f64) -> PosePrediction {
    PosePrediction {
        keypoints: pose_at(cx, cy),
        score,
    }
}

/// A pose with only the nose labeled, at (x, y). Lets tests dial in an
/// exact OKS through the single-joint closed form.
fn nose_only(x: f32, y: f32) -> [Keypoint; NUM_KEYPOINTS] {
    let mut kps = [Keypoint::not_labeled(); NUM_KEYPOINTS];
    kps[0] = Keypoint {
        x,
        y,
        visibility: Visibility::LabeledVisible,
    };
    kps
}

/// Horizontal nose displacement that produces the requested OKS for a
/// nose-only pose: d = κ₀ · sqrt(−2 · area · ln o).
fn nose_offset_for_oks(target: f64, area: f64, kappas: &KappaTable) -> f32 {
    (kappas.kappas[0] * (-2.0 * area * target.ln()).sqrt()) as f32
}

fn rand_pose(rng: &mut ChaCha8Rng, extent: f32) -> [Keypoint; NUM_KEYPOINTS] {
    let mut kps = [Keypoint::not_labeled(); NUM_KEYPOINTS];
    for kp in kps.iter_mut() {
        let visibility = match rng.random_range(0..10u32) {
            0..2 => Visibility::NotLabeled,
            2..6 => Visibility::LabeledInvisible,
            _ => Visibility::LabeledVisible,
        };
        *kp = Keypoint {
            x: rng.random_range(0.0..extent),
            y: rng.random_range(0.0..extent),
            visibility,
        };
    }
    kps
}

fn perturbed(
    rng: &mut ChaCha8Rng,
    base: &[Keypoint; NUM_KEYPOINTS],
    scale: f32,
) -> [Keypoint; NUM_KEYPOINTS] {
    let mut kps = *base;
    for kp in kps.iter_mut() {
        kp.x += rng.random_range(-scale..scale);
        kp.y += rng.random_range(-scale..scale);
        kp.visibility = Visibility::LabeledVisible;
    }
    kps
}

fn rand_box(rng: &mut ChaCha8Rng) -> BBox {
    let x0 = rng.random_range(0.0..40.0f32);
    let y0 = rng.random_range(0.0..40.0f32);
    let w = rng.random_range(4.0..30.0f32);
    let h = rng.random_range(4.0..30.0f32);
    BBox::new(x0, y0, x0 + w, y0 + h).unwrap()
}

fn jitter_box(rng: &mut ChaCha8Rng, b: &BBox) -> BBox {
    let dx = rng.random_range(-6.0..6.0f32);
    let dy = rng.random_range(-6.0..6.0f32);
    let dw = rng.random_range(-3.0..3.0f32);
    let dh = rng.random_range(-3.0..3.0f32);
    let x0 = b.x0 + dx;
    let y0 = b.y0 + dy;
    BBox::new(
        x0,
        y0,
        (b.x1 + dx + dw).max(x0 + 1.0),
        (b.y1 + dy + dh).max(y0 + 1.0),
    )
    .unwrap()
}

fn rect_mask(h: usize, w: usize, r: (usize, usize), c: (usize, usize)) -> Mask {
    let mut m = Array2::from_elem((h, w), false);
    for row in r.0..r.1 {
        for col in c.0..c.1 {
            m[[row, col]] = true;
        }
    }
    m
}

fn option_close(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (None, None) => true,
        (Some(x), Some(y)) => (x - y).abs() <= tol,
        _ => false,
    }
}

fn assert_suites_close(got: &ApSuite, want: &ApSuite, tol: f64, ctx: &str) {
    for ((name, g), (_, w)) in got.values().into_iter().zip(want.values()) {
        assert!(
            option_close(g, w, tol),
            "{ctx}: {name} mismatch: got {g:?}, want {w:?}"
        );
    }
}

// ---------------------------------------------------------------------------
// OKS
// ---------------------------------------------------------------------------

#[test]
fn oks_is_one_for_exact_match() {
    let kps = pose_at(12.0, 20.0);
    let got = oks(&kps, &kps, 1800.0, &KappaTable::default()).unwrap();
    assert_eq!(got, 1.0);
}

#[test]
fn oks_single_keypoint_closed_form() {
    // One labeled joint displaced so d² = 2 · area · κ², giving exp(−1).
    let kappas = KappaTable::default();
    let area = 2500.0;
    let gt = nose_only(10.0, 20.0);
    let d = (2.0 * area * kappas.kappas[0] * kappas.kappas[0]).sqrt();
    let pred = nose_only(10.0 + d as f32, 20.0);
    let got = oks(&pred, &gt, area, &kappas).unwrap();
    assert_relative_eq!(got, (-1.0f64).exp(), max_relative = 1e-5);
}

#[test]
fn oks_vanishes_for_distant_predictions() {
    let gt = pose_at(5.0, 5.0);
    let pred = pose_at(5000.0, 5000.0);
    let got = oks(&pred, &gt, 100.0, &KappaTable::default()).unwrap();
    assert!(got < 1e-12, "far pose scored {got}");
}

#[test]
fn oks_requires_labeled_keypoints() {
    let gt = [Keypoint::not_labeled(); NUM_KEYPOINTS];
    let pred = pose_at(0.0, 0.0);
    assert!(oks(&pred, &gt, 100.0, &KappaTable::default()).is_err());
}

#[test]
fn oks_rejects_bad_area() {
    let kps = pose_at(0.0, 0.0);
    for area in [0.0, -3.0, f64::NAN, f64::INFINITY] {
        assert!(
            oks(&kps, &kps, area, &KappaTable::default()).is_err(),
            "area {area} accepted"
        );
    }
}

#[test]
fn oks_ignores_unlabeled_joints() {
    // Only the nose is labeled; moving predictions at unlabeled joints
    // must not change the similarity at all.
    let kappas = KappaTable::default();
    let gt = nose_only(10.0, 10.0);
    let pred_a = nose_only(13.0, 10.0);
    let mut pred_b = pred_a;
    for kp in pred_b.iter_mut().skip(1) {
        kp.x = 999.0;
        kp.y = -999.0;
    }
    let a = oks(&pred_a, &gt, 400.0, &kappas).unwrap();
    let b = oks(&pred_b, &gt, 400.0, &kappas).unwrap();
    assert_eq!(a, b);
}

/// Coordinates on an eighth-unit grid and integer translations keep every
/// f32 sum exact, so invariance can be asserted bit-for-bit.
fn eighth_grid_pose(rng: &mut ChaCha8Rng) -> [Keypoint; NUM_KEYPOINTS] {
    let mut kps = [Keypoint::not_labeled(); NUM_KEYPOINTS];
    for (i, kp) in kps.iter_mut().enumerate() {
        *kp = Keypoint {
            x: rng.random_range(0..800) as f32 / 8.0,
            y: rng.random_range(0..800) as f32 / 8.0,
            visibility: if i == 0 || rng.random_range(0..4u32) > 0 {
                Visibility::LabeledVisible
            } else {
                Visibility::NotLabeled
            },
        };
    }
    kps
}

#[test]
fn oks_is_translation_invariant() {
    let kappas = KappaTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(71);
    for _ in 0..200 {
        let gt = eighth_grid_pose(&mut rng);
        let pred = eighth_grid_pose(&mut rng);
        let area = f64::from(rng.random_range(1..200u32)) * 25.0;
        let (tx, ty) = (
            rng.random_range(-500..500i32) as f32,
            rng.random_range(-500..500i32) as f32,
        );
        let shift = |kps: &[Keypoint; NUM_KEYPOINTS]| {
            let mut out = *kps;
            for kp in out.iter_mut() {
                kp.x += tx;
                kp.y += ty;
            }
            out
        };
        let base = oks(&pred, &gt, area, &kappas).unwrap();
        let moved = oks(&shift(&pred), &shift(&gt), area, &kappas).unwrap();
        assert_eq!(base, moved, "translation by ({tx}, {ty}) changed OKS");
    }
}

#[test]
fn oks_is_invariant_under_area_scaling() {
    // Doubling every coordinate (exact in f32) while quadrupling the area
    // leaves d²/area unchanged, hence the OKS unchanged.
    let kappas = KappaTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(72);
    for _ in 0..200 {
        let gt = eighth_grid_pose(&mut rng);
        let pred = eighth_grid_pose(&mut rng);
        let area = f64::from(rng.random_range(1..200u32)) * 25.0;
        let double = |kps: &[Keypoint; NUM_KEYPOINTS]| {
            let mut out = *kps;
            for kp in out.iter_mut() {
                kp.x *= 2.0;
                kp.y *= 2.0;
            }
            out
        };
        let base = oks(&pred, &gt, area, &kappas).unwrap();
        let scaled = oks(&double(&pred), &double(&gt), area * 4.0, &kappas).unwrap();
        assert_eq!(base, scaled);
    }
}

#[test]
fn kappa_table_default_is_valid() {
    let table = KappaTable::default();
    table.validate().unwrap();
    assert!(table.kappas.iter().all(|&k| k > 0.0));
    for bad in [0.0, -0.1, f64::NAN] {
        let mut t = table.clone();
        t.kappas[4] = bad;
        assert!(t.validate().is_err(), "kappa {bad} accepted");
    }
}

// ---------------------------------------------------------------------------
// Keypoint AP: hand cases
// ---------------------------------------------------------------------------

#[test]
fn perfect_predictions_score_full_marks() {
    // One medium and one large ground truth per image, each predicted
    // exactly with score 1 → every suite entry is exactly 1.0.
    let images: Vec<ImagePoses> = (0..2)
        .map(|i| {
            let shift = i as f32 * 11.0;
            ImagePoses {
                predictions: vec![
                    pred_at(10.0 + shift, 10.0, 1.0),
                    pred_at(60.0 + shift, 40.0, 1.0),
                ],
                gts: vec![
                    gt_at(10.0 + shift, 10.0, 2000.0),
                    gt_at(60.0 + shift, 40.0, 16000.0),
                ],
            }
        })
        .collect();
    let suite = keypoint_ap(&images, &KappaTable::default()).unwrap();
    for (name, v) in suite.values() {
        assert_eq!(v, Some(1.0), "{name}");
    }
}

#[test]
fn no_predictions_score_zero() {
    let images = vec![ImagePoses {
        predictions: vec![],
        gts: vec![gt_at(10.0, 10.0, 2000.0), gt_at(50.0, 10.0, 16000.0)],
    }];
    let suite = keypoint_ap(&images, &KappaTable::default()).unwrap();
    for (name, v) in suite.values() {
        assert_eq!(v, Some(0.0), "{name}");
    }
}

#[test]
fn empty_ground_truth_reports_absent() {
    let images = vec![ImagePoses {
        predictions: vec![pred_at(5.0, 5.0, 0.9)],
        gts: vec![],
    }];
    let suite = keypoint_ap(&images, &KappaTable::default()).unwrap();
    for (name, v) in suite.values() {
        assert_eq!(v, None, "{name} should be absent");
    }
}

#[test]
fn area_ranges_report_absent_when_unpopulated() {
    let images = vec![ImagePoses {
        predictions: vec![pred_at(10.0, 10.0, 0.9)],
        gts: vec![gt_at(10.0, 10.0, 2000.0)], // medium only
    }];
    let suite = keypoint_ap(&images, &KappaTable::default()).unwrap();
    assert!(suite.ap_m.is_some());
    assert_eq!(suite.ap_l, None);
    assert_eq!(suite.ap, Some(1.0));
}

#[test]
fn unlabeled_ground_truth_is_not_a_target() {
    // The all-unlabeled ground truth neither counts toward recall nor
    // absorbs anything (its similarity to every prediction is zero).
    let images = vec![ImagePoses {
        predictions: vec![pred_at(10.0, 10.0, 1.0)],
        gts: vec![
            gt_at(10.0, 10.0, 2000.0),
            PoseGt {
                keypoints: [Keypoint::not_labeled(); NUM_KEYPOINTS],
                area: 2000.0,
            },
        ],
    }];
    let suite = keypoint_ap(&images, &KappaTable::default()).unwrap();
    assert_eq!(suite.ap, Some(1.0));
    assert_eq!(suite.ap50, Some(1.0));
}

#[test]
fn out_of_range_ground_truth_absorbs_predictions() {
    // For AP_M the large ground truth is out of range; the high-scoring
    // prediction sitting on it must be dropped, not counted as a false
    // positive ahead of the medium true positive.
    let images = vec![ImagePoses {
        predictions: vec![pred_at(60.0, 40.0, 0.9), pred_at(10.0, 10.0, 0.5)],
        gts: vec![gt_at(10.0, 10.0, 2000.0), gt_at(60.0, 40.0, 16000.0)],
    }];
    let suite = keypoint_ap(&images, &KappaTable::default()).unwrap();
    assert_eq!(suite.ap_m, Some(1.0));
    assert_eq!(suite.ap_l, Some(1.0));
    assert_eq!(suite.ap, Some(1.0));
}

#[test]
fn three_gt_four_prediction_hand_case() {
    // Single-joint poses with dialed-in similarities to ground truths at
    // x = 10, 40, 70 (area 2500, all medium):
    //   A (score .9)  OKS .78 with gt0
    //   B (score .8)  OKS .96 with gt0 — closer but outranked
    //   C (score .7)  OKS .62 with gt1
    //   D (score .6)  near nothing
    // At OKS ≥ 0.5 greedy gives [A:TP, B:FP, C:TP, D:FP] over 3 targets:
    // precision-recall points (1/3,1), (1/3,1/2), (2/3,2/3), (2/3,1/2);
    // the 101-point interpolation is (34·1 + 33·(2/3)) / 101 = 56/101.
    let kappas = KappaTable::default();
    let area = 2500.0;
    let images = vec![ImagePoses {
        predictions: vec![
            PosePrediction {
                keypoints: nose_only(10.0 + nose_offset_for_oks(0.78, area, &kappas), 10.0),
                score: 0.9,
            },
            PosePrediction {
                keypoints: nose_only(10.0 + nose_offset_for_oks(0.96, area, &kappas), 10.0),
                score: 0.8,
            },
            PosePrediction {
                keypoints: nose_only(40.0 + nose_offset_for_oks(0.62, area, &kappas), 10.0),
                score: 0.7,
            },
            PosePrediction {
                keypoints: nose_only(400.0, 10.0),
                score: 0.6,
            },
        ],
        gts: vec![
            PoseGt {
                keypoints: nose_only(10.0, 10.0),
                area,
            },
            PoseGt {
                keypoints: nose_only(40.0, 10.0),
                area,
            },
            PoseGt {
                keypoints: nose_only(70.0, 10.0),
                area,
            },
        ],
    }];
    let suite = keypoint_ap(&images, &kappas).unwrap();
    assert_relative_eq!(suite.ap50.unwrap(), 56.0 / 101.0, epsilon = 1e-12);
    let want = ap_oracle::suite(&images, &kappas);
    assert_suites_close(&suite, &want, 1e-9, "hand case");
}

#[test]
fn ap_is_invariant_under_monotone_score_rescaling() {
    let kappas = KappaTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(73);
    for trial in 0..50 {
        let images = random_ap_images(&mut rng);
        let rescaled: Vec<ImagePoses> = images
            .iter()
            .map(|img| ImagePoses {
                predictions: img
                    .predictions
                    .iter()
                    .map(|p| PosePrediction {
                        keypoints: p.keypoints,
                        // strictly increasing, nonlinear, tie-preserving
                        score: 3.0 * p.score.atan() + 0.5,
                    })
                    .collect(),
                gts: img.gts.clone(),
            })
            .collect();
        let a = keypoint_ap(&images, &kappas).unwrap();
        let b = keypoint_ap(&rescaled, &kappas).unwrap();
        assert_eq!(a, b, "trial {trial}");
    }
}

#[test]
fn keypoint_ap_is_deterministic() {
    let mut rng = ChaCha8Rng::seed_from_u64(74);
    let images = random_ap_images(&mut rng);
    let a = keypoint_ap(&images, &KappaTable::default()).unwrap();
    let b = keypoint_ap(&images, &KappaTable::default()).unwrap();
    assert_eq!(a, b);
}

// ---------------------------------------------------------------------------
// Keypoint AP: enumeration oracle
// ---------------------------------------------------------------------------

fn random_ap_images(rng: &mut ChaCha8Rng) -> Vec<ImagePoses> {
    let n_images = rng.random_range(1..=2usize);
    (0..n_images)
        .map(|_| {
            let n_gt = rng.random_range(0..=4usize);
            let gts: Vec<PoseGt> = (0..n_gt)
                .map(|_| {
                    let area = [500.0, 2000.0, 16000.0][rng.random_range(0..3usize)];
                    let keypoints = if rng.random_range(0..100u32) < 15 {
                        [Keypoint::not_labeled(); NUM_KEYPOINTS]
                    } else {
                        rand_pose(rng, 60.0)
                    };
                    PoseGt { keypoints, area }
                })
                .collect();
            let n_pred = rng.random_range(0..=5usize);
            let predictions = (0..n_pred)
                .map(|_| {
                    let keypoints = if !gts.is_empty() && rng.random_range(0..100u32) < 60 {
                        let base = &gts[rng.random_range(0..gts.len())].keypoints;
                        let scale = [0.2f32, 2.0, 8.0, 30.0][rng.random_range(0..4usize)];
                        perturbed(rng, base, scale)
                    } else {
                        rand_pose(rng, 60.0)
                    };
                    let score = if rng.random_range(0..100u32) < 40 {
                        f64::from(rng.random_range(0..5u32)) * 0.25
                    } else {
                        rng.random_range(0.0..1.0)
                    };
                    PosePrediction { keypoints, score }
                })
                .collect();
            ImagePoses { predictions, gts }
        })
        .collect()
}

#[test]
fn keypoint_ap_matches_enumeration_oracle() {
    let kappas = KappaTable::default();
    let mut rng = ChaCha8Rng::seed_from_u64(75);
    for trial in 0..1000 {
        let images = random_ap_images(&mut rng);
        let got = keypoint_ap(&images, &kappas).unwrap();
        let want = ap_oracle::suite(&images, &kappas);
        assert_suites_close(&got, &want, 1e-9, &format!("trial {trial}"));
        for (name, v) in got.values() {
            if let Some(x) = v {
                assert!((0.0..=1.0).contains(&x), "trial {trial}: {name} = {x}");
            }
        }
    }
}

mod ap_oracle {
    use super::*;

    /// Recomputes the AP suite from the definition: the greedy matching is
    /// re-derived by enumerating every injective partial assignment of
    /// predictions to in-range ground truths and keeping the unique one
    /// where each prediction, in score order, holds the best similarity
    /// still available at its turn; the 101-point interpolation scans all
    /// curve points per grid recall instead of building an envelope.
    pub fn suite(images: &[ImagePoses], kappas: &KappaTable) -> ApSuite {
        let mats: Vec<Vec<Vec<f64>>> = images
            .iter()
            .map(|img| {
                img.predictions
                    .iter()
                    .map(|p| {
                        img.gts
                            .iter()
                            .map(|g| {
                                if g.keypoints.iter().any(|k| k.visibility.is_labeled()) {
                                    oks(&p.keypoints, &g.keypoints, g.area, kappas).unwrap()
                                } else {
                                    0.0
                                }
                            })
                            .collect()
                    })
                    .collect()
            })
            .collect();
        let mean = |range: Option<(f64, f64)>| -> Option<f64> {
            let mut acc = 0.0;
            for t in OKS_THRESHOLDS {
                acc += ap_at(images, &mats, t, range)?;
            }
            Some(acc / OKS_THRESHOLDS.len() as f64)
        };
        ApSuite {
            ap: mean(None),
            ap50: ap_at(images, &mats, 0.50, None),
            ap75: ap_at(images, &mats, 0.75, None),
            ap_m: mean(Some(AREA_MEDIUM_PX2)),
            ap_l: mean(Some(AREA_LARGE_PX2)),
        }
    }

    fn ap_at(
        images: &[ImagePoses],
        mats: &[Vec<Vec<f64>>],
        threshold: f64,
        range: Option<(f64, f64)>,
    ) -> Option<f64> {
        let mut n_gt = 0usize;
        let mut rows: Vec<(f64, usize, usize, bool)> = Vec::new();
        for (ii, img) in images.iter().enumerate() {
            let target: Vec<bool> = img
                .gts
                .iter()
                .map(|g| {
                    g.keypoints.iter().any(|k| k.visibility.is_labeled())
                        && range.map_or(true, |(lo, hi)| g.area >= lo && g.area < hi)
                })
                .collect();
            n_gt += target.iter().filter(|&&t| t).count();
            let mut order: Vec<usize> = (0..img.predictions.len()).collect();
            order.sort_by(|&a, &b| {
                img.predictions[b]
                    .score
                    .partial_cmp(&img.predictions[a].score)
                    .unwrap()
            });
            let assignment = greedy_by_enumeration(&order, &mats[ii], &target, threshold);
            for (k, &pi) in order.iter().enumerate() {
                if assignment[k].is_some() {
                    rows.push((img.predictions[pi].score, ii, pi, true));
                } else {
                    let absorbed = (0..img.gts.len())
                        .any(|gi| !target[gi] && mats[ii][pi][gi] >= threshold);
                    if !absorbed {
                        rows.push((img.predictions[pi].score, ii, pi, false));
                    }
                }
            }
        }
        if n_gt == 0 {
            return None;
        }
        rows.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap()
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });
        let mut points = Vec::with_capacity(rows.len());
        let (mut tp, mut fp) = (0usize, 0usize);
        for (_, _, _, is_tp) in rows {
            if is_tp {
                tp += 1;
            } else {
                fp += 1;
            }
            points.push((tp as f64 / n_gt as f64, tp as f64 / (tp + fp) as f64));
        }
        let mut acc = 0.0;
        for i in 0..=100 {
            let r = i as f64 / 100.0;
            let mut best = 0.0f64;
            for &(rec, prec) in &points {
                if rec >= r && prec > best {
                    best = prec;
                }
            }
            acc += best;
        }
        Some(acc / 101.0)
    }

    /// Enumerate all injective partial assignments (position in score order
    /// → ground-truth index) and filter to the greedy-consistent one.
    fn greedy_by_enumeration(
        order: &[usize],
        mat: &[Vec<f64>],
        target: &[bool],
        threshold: f64,
    ) -> Vec<Option<usize>> {
        let mut all: Vec<Vec<Option<usize>>> = Vec::new();
        let mut cur = vec![None; order.len()];
        let mut used = vec![false; target.len()];
        enumerate(0, order.len(), &mut cur, &mut used, &mut all);
        let consistent: Vec<Vec<Option<usize>>> = all
            .into_iter()
            .filter(|a| is_greedy_consistent(a, order, mat, target, threshold))
            .collect();
        assert_eq!(
            consistent.len(),
            1,
            "greedy-consistent assignment must be unique"
        );
        consistent.into_iter().next().unwrap()
    }

    fn enumerate(
        k: usize,
        n_pred: usize,
        cur: &mut Vec<Option<usize>>,
        used: &mut Vec<bool>,
        out: &mut Vec<Vec<Option<usize>>>,
    ) {
        if k == n_pred {
            out.push(cur.clone());
            return;
        }
        cur[k] = None;
        enumerate(k + 1, n_pred, cur, used, out);
        for gi in 0..used.len() {
            if !used[gi] {
                used[gi] = true;
                cur[k] = Some(gi);
                enumerate(k + 1, n_pred, cur, used, out);
                used[gi] = false;
                cur[k] = None;
            }
        }
    }

    fn is_greedy_consistent(
        assign: &[Option<usize>],
        order: &[usize],
        mat: &[Vec<f64>],
        target: &[bool],
        threshold: f64,
    ) -> bool {
        let mut used = vec![false; target.len()];
        for (k, &pi) in order.iter().enumerate() {
            let mut best: Option<(f64, usize)> = None;
            for gi in 0..target.len() {
                if used[gi] || !target[gi] {
                    continue;
                }
                let o = mat[pi][gi];
                if o >= threshold && best.map_or(true, |(bo, _)| o > bo) {
                    best = Some((o, gi));
                }
            }
            if assign[k] != best.map(|(_, gi)| gi) {
                return false;
            }
            if let Some(gi) = assign[k] {
                used[gi] = true;
            }
        }
        true
    }
}

// ---------------------------------------------------------------------------
// Miss rate
// ---------------------------------------------------------------------------

fn det(b: BBox, score: f32) -> Detection {
    Detection {
        bbox: b,
        score,
        category: Category::Person,
    }
}

fn bx(x0: f32, y0: f32, x1: f32, y1: f32) -> BBox {
    BBox::new(x0, y0, x1, y1).unwrap()
}

#[test]
fn fppi_reference_points_are_log_spaced() {
    let pts = fppi_reference_points();
    assert_eq!(pts.len(), FPPI_POINTS);
    assert_relative_eq!(pts[0], 0.01, epsilon = 1e-12);
    assert_eq!(pts[FPPI_POINTS - 1], 1.0);
    for w in pts.windows(2) {
        assert_relative_eq!(w[1] / w[0], 10f64.powf(0.25), epsilon = 1e-12);
    }
}

#[test]
fn visibility_bins_partition_cleanly() {
    use VisibilityBin::*;
    // Boundary ownership: 0.65 is Reasonable, 0.20 is HeavyOcclusion.
    assert!(Reasonable.contains(0.65));
    assert!(!HeavyOcclusion.contains(0.65));
    assert!(HeavyOcclusion.contains(0.20));
    assert!(!Reasonable.contains(0.20));
    assert!(ReasonablePlusHeavy.contains(0.20));
    assert!(!ReasonablePlusHeavy.contains(0.19));
    let mut rng = ChaCha8Rng::seed_from_u64(76);
    for _ in 0..1000 {
        let v: f32 = rng.random_range(0.0..=1.0);
        let r = Reasonable.contains(v);
        let ho = HeavyOcclusion.contains(v);
        assert!(!(r && ho), "bins overlap at {v}");
        assert_eq!(r || ho, ReasonablePlusHeavy.contains(v), "union broken at {v}");
    }
    assert_eq!(Reasonable.label(), "R");
    assert_eq!(HeavyOcclusion.label(), "HO");
    assert_eq!(ReasonablePlusHeavy.label(), "R+HO");
}

#[test]
fn perfect_detections_give_zero_miss_rate() {
    let g0 = bx(2.0, 2.0, 12.0, 22.0);
    let g1 = bx(20.0, 4.0, 29.0, 25.0);
    let images = vec![ImageDetections {
        detections: vec![det(g0, 0.8), det(g1, 0.6)],
        gts: vec![
            GtBox {
                bbox: g0,
                visibility_ratio: 0.9,
            },
            GtBox {
                bbox: g1,
                visibility_ratio: 0.4,
            },
        ],
    }];
    for bin in VisibilityBin::ALL {
        assert_eq!(miss_rate(&images, bin), Some(0.0), "{}", bin.label());
    }
}

#[test]
fn missing_all_detections_gives_one() {
    let images = vec![ImageDetections {
        detections: vec![],
        gts: vec![GtBox {
            bbox: bx(2.0, 2.0, 12.0, 22.0),
            visibility_ratio: 0.9,
        }],
    }];
    assert_eq!(miss_rate(&images, VisibilityBin::Reasonable), Some(1.0));
}

#[test]
fn empty_bin_reports_absent() {
    let images = vec![ImageDetections {
        detections: vec![det(bx(0.0, 0.0, 5.0, 5.0), 0.5)],
        gts: vec![GtBox {
            bbox: bx(2.0, 2.0, 12.0, 22.0),
            visibility_ratio: 0.1, // below every bin
        }],
    }];
    for bin in VisibilityBin::ALL {
        assert_eq!(miss_rate(&images, bin), None, "{}", bin.label());
    }
    // A purely reasonable population leaves the heavy-occlusion bin empty.
    let reasonable_only = vec![ImageDetections {
        detections: vec![],
        gts: vec![GtBox {
            bbox: bx(2.0, 2.0, 12.0, 22.0),
            visibility_ratio: 0.9,
        }],
    }];
    assert_eq!(
        miss_rate(&reasonable_only, VisibilityBin::HeavyOcclusion),
        None
    );
    assert!(miss_rate(&reasonable_only, VisibilityBin::Reasonable).is_some());
}

#[test]
fn two_visibility_hand_case_matches_enumeration() {
    // Two ground truths (visibility 0.9 and 0.4) and three detections: a
    // far false positive outranking everything, then one hit on each. In
    // bin R the 0.4 box is an ignore region, so the labels are FP, TP,
    // ignored; every operating point sits at FPPI 1.0, so only the last
    // reference (FPPI 1) sees the zero-miss point and the log-average is
    // exp(ln(1e-10)/9).
    let g0 = bx(2.0, 2.0, 12.0, 22.0);
    let g1 = bx(20.0, 4.0, 29.0, 25.0);
    let images = vec![ImageDetections {
        detections: vec![
            det(bx(40.0, 40.0, 50.0, 60.0), 0.95),
            det(g0, 0.9),
            det(g1, 0.8),
        ],
        gts: vec![
            GtBox {
                bbox: g0,
                visibility_ratio: 0.9,
            },
            GtBox {
                bbox: g1,
                visibility_ratio: 0.4,
            },
        ],
    }];
    let expected = ((1e-10f64).ln() / 9.0).exp();
    for bin in VisibilityBin::ALL {
        let got = miss_rate(&images, bin).unwrap();
        assert_relative_eq!(got, expected, epsilon = 1e-12);
        let want = mr_oracle::value(&images, bin).unwrap();
        assert!(
            (got - want).abs() <= 1e-9,
            "{}: got {got}, oracle {want}",
            bin.label()
        );
    }
}

fn random_mr_images(rng: &mut ChaCha8Rng) -> Vec<ImageDetections> {
    let n_images = rng.random_range(1..=3usize);
    (0..n_images)
        .map(|_| {
            let n_gt = rng.random_range(0..=4usize);
            let gts: Vec<GtBox> = (0..n_gt)
                .map(|_| GtBox {
                    bbox: rand_box(rng),
                    visibility_ratio: if rng.random_range(0..100u32) < 70 {
                        // exact bin boundaries included on purpose
                        [0.9f32, 0.7, 0.65, 0.5, 0.4, 0.2, 0.1][rng.random_range(0..7usize)]
                    } else {
                        rng.random_range(0.0..=1.0)
                    },
                })
                .collect();
            let n_det = rng.random_range(0..=5usize);
            let detections = (0..n_det)
                .map(|_| {
                    let bbox = if !gts.is_empty() && rng.random_range(0..100u32) < 65 {
                        let near = rng.random_range(0..gts.len());
                        jitter_box(rng, &gts[near].bbox)
                    } else {
                        rand_box(rng)
                    };
                    let score = if rng.random_range(0..100u32) < 40 {
                        rng.random_range(1..=4u32) as f32 * 0.25
                    } else {
                        rng.random_range(0.0..1.0)
                    };
                    det(bbox, score)
                })
                .collect();
            ImageDetections { detections, gts }
        })
        .collect()
}

#[test]
fn miss_rate_matches_threshold_enumeration_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for trial in 0..1000 {
        let images = random_mr_images(&mut rng);
        for bin in VisibilityBin::ALL {
            let got = miss_rate(&images, bin);
            let want = mr_oracle::value(&images, bin);
            assert!(
                option_close(got, want, 1e-9),
                "trial {trial} {}: got {got:?}, oracle {want:?}",
                bin.label()
            );
            if let Some(x) = got {
                assert!((0.0..=1.0).contains(&x), "trial {trial}: {x}");
            }
        }
    }
}

mod mr_oracle {
    use super::*;

    /// Recomputes the log-average miss rate by enumerating score
    /// thresholds: every distinct detection score is one operating point,
    /// and the matching is redone from scratch at each threshold rather
    /// than accumulated incrementally.
    pub fn value(images: &[ImageDetections], bin: VisibilityBin) -> Option<f64> {
        let n_images = images.len();
        let n_targets: usize = images
            .iter()
            .map(|img| {
                img.gts
                    .iter()
                    .filter(|g| bin.contains(g.visibility_ratio))
                    .count()
            })
            .sum();
        if n_targets == 0 {
            return None;
        }
        let mut scores: Vec<f32> = images
            .iter()
            .flat_map(|img| img.detections.iter().map(|d| d.score))
            .collect();
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap());
        scores.dedup();
        let mut ops: Vec<(f64, f64)> = Vec::new();
        for &t in &scores {
            let (mut tp, mut fp) = (0usize, 0usize);
            for img in images {
                let (a, b) = match_image(img, bin, t);
                tp += a;
                fp += b;
            }
            ops.push((
                fp as f64 / n_images as f64,
                1.0 - tp as f64 / n_targets as f64,
            ));
        }
        let mut samples = [1.0f64; FPPI_POINTS];
        for (s, r) in samples.iter_mut().zip(fppi_reference_points()) {
            for &(fppi, mr) in &ops {
                if fppi <= r && mr < *s {
                    *s = mr;
                }
            }
        }
        if samples.iter().all(|&m| m == 0.0) {
            return Some(0.0);
        }
        Some(
            (samples.iter().map(|&m| m.max(1e-10).ln()).sum::<f64>() / FPPI_POINTS as f64).exp(),
        )
    }

    /// From-scratch greedy matching of the detections at or above the
    /// threshold; returns (true positives, false positives).
    fn match_image(img: &ImageDetections, bin: VisibilityBin, t: f32) -> (usize, usize) {
        let mut order: Vec<usize> = (0..img.detections.len())
            .filter(|&i| img.detections[i].score >= t)
            .collect();
        order.sort_by(|&a, &b| {
            img.detections[b]
                .score
                .partial_cmp(&img.detections[a].score)
                .unwrap()
        });
        let mut used = vec![false; img.gts.len()];
        let (mut tp, mut fp) = (0usize, 0usize);
        for di in order {
            let d = &img.detections[di];
            let mut best: Option<(f32, usize)> = None;
            for (gi, g) in img.gts.iter().enumerate() {
                if used[gi] || !bin.contains(g.visibility_ratio) {
                    continue;
                }
                let iou = box_iou(&d.bbox, &g.bbox);
                if iou >= 0.5 && best.map_or(true, |(b, _)| iou > b) {
                    best = Some((iou, gi));
                }
            }
            if let Some((_, gi)) = best {
                used[gi] = true;
                tp += 1;
            } else if !img
                .gts
                .iter()
                .any(|g| !bin.contains(g.visibility_ratio) && box_iou(&d.bbox, &g.bbox) >= 0.5)
            {
                fp += 1;
            }
        }
        (tp, fp)
    }
}

// ---------------------------------------------------------------------------
// Instance segmentation IoU
// ---------------------------------------------------------------------------

fn cmask(mask: Mask, category: Category) -> CategorizedMask {
    CategorizedMask { mask, category }
}

#[test]
fn identical_masks_score_one() {
    let a = rect_mask(8, 8, (0, 4), (0, 4));
    let b = rect_mask(8, 8, (4, 8), (4, 8));
    let gts = vec![
        cmask(a.clone(), Category::Person),
        cmask(b.clone(), Category::Person),
    ];
    let preds = vec![cmask(a, Category::Person), cmask(b, Category::Person)];
    assert_eq!(
        instance_seg_iou(&preds, &gts, Category::Person).unwrap(),
        Some(1.0)
    );
    assert_eq!(instance_seg_iou(&preds, &gts, Category::Rider).unwrap(), None);
}

#[test]
fn no_mask_predictions_score_zero() {
    let gts = vec![cmask(rect_mask(8, 8, (0, 4), (0, 4)), Category::Person)];
    assert_eq!(
        instance_seg_iou(&[], &gts, Category::Person).unwrap(),
        Some(0.0)
    );
}

#[test]
fn wrong_category_predictions_do_not_match() {
    let m = rect_mask(8, 8, (0, 4), (0, 4));
    let gts = vec![cmask(m.clone(), Category::Person)];
    let preds = vec![cmask(m, Category::Rider)];
    assert_eq!(
        instance_seg_iou(&preds, &gts, Category::Person).unwrap(),
        Some(0.0)
    );
}

#[test]
fn crossed_overlap_hand_case_matches_assignment_oracle() {
    // Two vertical ground-truth bars and two wide predictions, each
    // overlapping both bars: IoU(g0,p0) = IoU(g1,p1) = 16/48 and
    // IoU(g0,p1) = IoU(g1,p0) = 8/56. Greedy takes the two 1/3 pairs, and
    // the better of the two exhaustive one-to-one assignments agrees.
    let g0 = rect_mask(8, 8, (0, 8), (0, 3));
    let g1 = rect_mask(8, 8, (0, 8), (5, 8));
    let p0 = rect_mask(8, 8, (0, 8), (1, 6));
    let p1 = rect_mask(8, 8, (0, 8), (2, 7));
    let gts = vec![
        cmask(g0.clone(), Category::Person),
        cmask(g1.clone(), Category::Person),
    ];
    let preds = vec![
        cmask(p0.clone(), Category::Person),
        cmask(p1.clone(), Category::Person),
    ];
    let got = instance_seg_iou(&preds, &gts, Category::Person)
        .unwrap()
        .unwrap();

    // Brute force over the two possible one-to-one assignments.
    let iou = |g: &Mask, p: &Mask| f64::from(mask_iou(g, p).unwrap());
    let straight = (iou(&g0, &p0) + iou(&g1, &p1)) / 2.0;
    let crossed = (iou(&g0, &p1) + iou(&g1, &p0)) / 2.0;
    let want = straight.max(crossed);
    assert!((got - want).abs() <= 1e-9, "got {got}, oracle {want}");
    assert_relative_eq!(got, 1.0 / 3.0, epsilon = 1e-6);
}

fn random_masks(rng: &mut ChaCha8Rng, n: usize) -> Vec<CategorizedMask> {
    (0..n)
        .map(|_| {
            let r0 = rng.random_range(0..8usize);
            let r1 = rng.random_range(r0 + 1..=10usize);
            let c0 = rng.random_range(0..8usize);
            let c1 = rng.random_range(c0 + 1..=10usize);
            let category = if rng.random_range(0..100u32) < 70 {
                Category::Person
            } else {
                Category::Rider
            };
            cmask(rect_mask(10, 10, (r0, r1), (c0, c1)), category)
        })
        .collect()
}

#[test]
fn seg_iou_matches_iterated_argmax_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(78);
    for trial in 0..1000 {
        let n_gt = rng.random_range(0..=4usize);
        let n_pred = rng.random_range(0..=5usize);
        let gts = random_masks(&mut rng, n_gt);
        let preds = random_masks(&mut rng, n_pred);
        for cat in Category::ALL {
            let got = matched_ious(&preds, &gts, cat).unwrap();
            let want = seg_oracle(&preds, &gts, cat);
            assert_eq!(got.len(), want.len(), "trial {trial}");
            for (i, (g, w)) in got.iter().zip(&want).enumerate() {
                assert!(
                    (g - w).abs() <= 1e-9,
                    "trial {trial} gt {i}: got {g}, oracle {w}"
                );
                assert!((0.0..=1.0).contains(g), "trial {trial}: {g}");
            }
            let mean = instance_seg_iou(&preds, &gts, cat).unwrap();
            let want_mean = (!want.is_empty())
                .then(|| want.iter().sum::<f64>() / want.len() as f64);
            assert!(option_close(mean, want_mean, 1e-9), "trial {trial}");
        }
    }
}

/// Iterated global argmax: repeatedly take the highest-IoU unused
/// (gt, pred) pair (ties to the lowest indices) until one side runs out.
fn seg_oracle(preds: &[CategorizedMask], gts: &[CategorizedMask], category: Category) -> Vec<f64> {
    let g: Vec<usize> = (0..gts.len())
        .filter(|&i| gts[i].category == category)
        .collect();
    let p: Vec<usize> = (0..preds.len())
        .filter(|&i| preds[i].category == category)
        .collect();
    let mut scores = vec![0.0f64; g.len()];
    let mut g_used = vec![false; g.len()];
    let mut p_used = vec![false; p.len()];
    loop {
        let mut best: Option<(f64, usize, usize)> = None;
        for (a, &gi) in g.iter().enumerate() {
            if g_used[a] {
                continue;
            }
            for (b, &pi) in p.iter().enumerate() {
                if p_used[b] {
                    continue;
                }
                let iou = f64::from(mask_iou(&gts[gi].mask, &preds[pi].mask).unwrap());
                if best.map_or(true, |(bi, _, _)| iou > bi) {
                    best = Some((iou, a, b));
                }
            }
        }
        match best {
            Some((iou, a, b)) => {
                scores[a] = iou;
                g_used[a] = true;
                p_used[b] = true;
            }
            None => break,
        }
    }
    scores
}

#[test]
fn seg_iou_requires_matching_grids() {
    let gts = vec![cmask(rect_mask(8, 8, (0, 4), (0, 4)), Category::Person)];
    let preds = vec![cmask(rect_mask(6, 6, (0, 4), (0, 4)), Category::Person)];
    assert!(instance_seg_iou(&preds, &gts, Category::Person).is_err());
}

// ---------------------------------------------------------------------------
// Occlusion sweep and dataset evaluation (model in the loop)
// ---------------------------------------------------------------------------

fn tiny_model() -> (ParamStore, ModelConfig) {
    let mcfg = ModelConfig {
        fpn_channels: 8,
        roi_size: 4,
        ..ModelConfig::default()
    };
    let store = init_components(&mcfg, 123).unwrap();
    (store, mcfg)
}

fn eval_samples(n: usize, seed: u64) -> Vec<Sample> {
    let mut params = DistributionParams::source_preset().eval_layout();
    params.image_size = (32, 32);
    build_dataset(&params, n, seed).unwrap().samples
}

#[test]
fn sweep_zero_fraction_reproduces_unoccluded_ap() {
    let (store, mcfg) = tiny_model();
    let samples = eval_samples(3, 21);
    let keypoints = gt_keypoints(&samples, None).unwrap();
    let units = sweep_units(&samples, &keypoints);
    assert!(!units.is_empty());
    let kappas = KappaTable::default();
    let points =
        occlusion_sweep(&store, &mcfg, &samples, &keypoints, &[0.0], &[4], &kappas).unwrap();
    assert_eq!(points.len(), 1);

    // Independent unoccluded pass over the same instances.
    let mut images = Vec::new();
    for u in &units {
        let pred =
            infer_pose_on_instance(&store, &mcfg, &samples[u.sample_index], u.instance_index)
                .unwrap();
        let inst = &samples[u.sample_index].instances[u.instance_index];
        images.push(ImagePoses {
            predictions: vec![pred],
            gts: vec![PoseGt {
                keypoints: keypoints[u.sample_index][u.instance_index].unwrap(),
                area: f64::from(inst.bbox.width()) * f64::from(inst.bbox.height()),
            }],
        });
    }
    let manual = keypoint_ap(&images, &kappas).unwrap().ap.unwrap();
    assert_eq!(points[0].per_seed_ap, vec![manual]);
    assert_eq!(points[0].mean_ap, manual);
    assert_eq!(points[0].stddev_ap, 0.0);
}

#[test]
fn sweep_covers_the_standard_fractions() {
    assert_eq!(SWEEP_FRACTIONS, [0.2, 0.3, 0.4, 0.5, 0.6, 0.7]);
    let (store, mcfg) = tiny_model();
    let samples = eval_samples(1, 22);
    let keypoints = gt_keypoints(&samples, None).unwrap();
    let kappas = KappaTable::default();
    let run = || {
        occlusion_sweep(
            &store,
            &mcfg,
            &samples,
            &keypoints,
            &SWEEP_FRACTIONS,
            &[9],
            &kappas,
        )
        .unwrap()
    };
    let points = run();
    assert_eq!(points.len(), SWEEP_FRACTIONS.len());
    for (p, f) in points.iter().zip(SWEEP_FRACTIONS) {
        assert_eq!(p.fraction, f);
        assert!((0.0..=1.0).contains(&p.mean_ap));
        assert_eq!(p.per_seed_ap.len(), 1);
    }
    assert_eq!(points, run(), "sweep must be deterministic");
}

#[test]
fn sweep_without_eligible_instances_errors() {
    let (store, mcfg) = tiny_model();
    let samples = eval_samples(1, 23);
    let none: Vec<Vec<Option<[Keypoint; NUM_KEYPOINTS]>>> = samples
        .iter()
        .map(|s| vec![None; s.instances.len()])
        .collect();
    assert!(occlusion_sweep(
        &store,
        &mcfg,
        &samples,
        &none,
        &[0.2],
        &[0],
        &KappaTable::default()
    )
    .is_err());
}

#[test]
fn evaluate_dataset_produces_bounded_report() {
    let (store, mcfg) = tiny_model();
    let samples = eval_samples(3, 33);
    let opts = EvalOptions {
        sweep_fractions: Some(vec![0.2]),
        sweep_seeds: vec![7],
        ..EvalOptions::default()
    };
    let report = evaluate_dataset(&store, &mcfg, &samples, None, &opts).unwrap();
    assert!(report.ap.ap.is_some());
    // The eval layout has no scene occluders, so every pedestrian is fully
    // visible: the heavy-occlusion bin must be absent, not zero.
    assert_eq!(report.miss_rate.ho, None);
    assert!(report.miss_rate.r.is_some());
    let present = report
        .ap
        .values()
        .into_iter()
        .chain(report.miss_rate.values())
        .chain(report.seg_iou.values());
    for (name, v) in present {
        if let Some(x) = v {
            assert!((0.0..=1.0).contains(&x), "{name} = {x}");
        }
    }
    let sweep = report.occlusion_sweep.as_ref().unwrap();
    assert_eq!(sweep.len(), 1);

    let flat = report.flat_pairs();
    let keys: Vec<&str> = flat.iter().map(|(k, _)| k.as_str()).collect();
    for k in [
        "ap",
        "ap50",
        "ap75",
        "ap_m",
        "ap_l",
        "mr_r",
        "mr_ho",
        "mr_r_plus_ho",
        "iou_person",
        "iou_rider",
        "sweep_20_mean",
        "sweep_20_stddev",
    ] {
        assert!(keys.contains(&k), "missing flat key {k}");
    }
    let ho = flat.iter().find(|(k, _)| k == "mr_ho").unwrap();
    assert_eq!(ho.1, "absent");

    let text = report.render_text();
    for needle in ["Keypoint AP", "AP50", "R+HO", "person", "rider", "Occlusion sweep"] {
        assert!(text.contains(needle), "render lacks {needle:?}");
    }
}

#[test]
fn report_validation_rejects_out_of_range_values() {
    EvalReport::default().validate().unwrap();
    for bad in [1.5, -0.1, f64::NAN] {
        let report = EvalReport {
            ap: ApSuite {
                ap: Some(bad),
                ..ApSuite::default()
            },
            ..EvalReport::default()
        };
        assert!(report.validate().is_err(), "ap {bad} accepted");
    }
    let report = EvalReport {
        occlusion_sweep: Some(vec![SweepPoint {
            fraction: 0.2,
            mean_ap: -0.5,
            stddev_ap: 0.0,
            per_seed_ap: vec![-0.5],
        }]),
        ..EvalReport::default()
    };
    assert!(report.validate().is_err());
}

// ---------------------------------------------------------------------------
// Annotated-twin evaluation of the pose-free domain
// ---------------------------------------------------------------------------

fn target_and_twin(n: usize, seed: u64) -> (Vec<Sample>, Vec<Sample>) {
    let mut params = DistributionParams::target_preset().eval_layout();
    params.image_size = (32, 32);
    let twin_params = params.clone().with_domain(Domain::Source);
    (
        build_dataset(&params, n, seed).unwrap().samples,
        build_dataset(&twin_params, n, seed).unwrap().samples,
    )
}

#[test]
fn annotated_twin_regeneration_shares_geometry() {
    // The domain tag feeds nothing but the label attachment, so the same
    // parameters and seed reproduce the scene exactly with labels added —
    // giving the pose-free domain exact evaluation annotations.
    let (target, twin) = target_and_twin(3, 55);
    for (t, s) in target.iter().zip(&twin) {
        assert_eq!(t.image, s.image, "pixels must match bit-for-bit");
        assert_eq!(t.instances.len(), s.instances.len());
        for (it, is) in t.instances.iter().zip(&s.instances) {
            assert_eq!(it.bbox, is.bbox);
            assert_eq!(it.mask, is.mask);
            assert_eq!(it.category, is.category);
            assert!(it.keypoints.is_none(), "target samples are pose-free");
            assert!(is.keypoints.is_some(), "twin carries the annotations");
        }
    }
    let kps = gt_keypoints(&target, Some(&twin)).unwrap();
    assert!(kps.iter().flatten().all(|k| k.is_some()));
}

#[test]
fn gt_keypoints_rejects_mismatched_twin() {
    let (target, twin) = target_and_twin(3, 56);
    // Wrong length.
    assert!(gt_keypoints(&target, Some(&twin[..2])).is_err());
    // Different scenes entirely.
    let (_, other) = target_and_twin(3, 57);
    assert!(gt_keypoints(&target, Some(&other)).is_err());
}

#[test]
fn evaluate_target_domain_with_twin_annotations() {
    let (store, mcfg) = tiny_model();
    let (target, twin) = target_and_twin(2, 58);
    let report =
        evaluate_dataset(&store, &mcfg, &target, Some(&twin), &EvalOptions::default()).unwrap();
    assert!(report.ap.ap.is_some(), "twin annotations enable pose AP");
    assert!(report.occlusion_sweep.is_none());
}
