use pdq_core::quality::{background_loss, spatial_quality};
use pdq_core::{
    average_precision, build_probability_map, evaluate, hungarian_max, pair_quality, AxisAlignedBox, Dataset,
    Detection, EvalConfig, Frame, FrameId, GaussianCorner, Geometry, GroundTruthObject, ImageDims, MatchRecord,
    PixelSet, SpatialConfig,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const CLASSES: usize = 3;

fn random_box(rng: &mut ChaCha8Rng, w: i64, h: i64) -> AxisAlignedBox {
    let x0 = rng.random_range(0..w);
    let y0 = rng.random_range(0..h);
    AxisAlignedBox::new(x0, y0, rng.random_range(x0..w), rng.random_range(y0..h)).unwrap()
}

fn random_detection(rng: &mut ChaCha8Rng, frame: FrameId, w: i64, h: i64) -> Detection<f64> {
    let b = random_box(rng, w, h);
    let geometry = match rng.random_range(0..3) {
        0 => Geometry::ConventionalBox(b),
        1 => Geometry::UniformBox {
            bbox: b,
            prob: rng.random_range(0.2..1.0),
        },
        _ => {
            let mut corner = |x: i64, y: i64| {
                let v: f64 = rng.random_range(0.1..3.0);
                GaussianCorner::isotropic([x as f64, y as f64], v)
            };
            Geometry::ProbabilisticBox {
                top_left: corner(b.x0, b.y0),
                bottom_right: corner(b.x1, b.y1),
            }
        }
    };
    let mut labels: Vec<f64> = (0..CLASSES).map(|_| rng.random_range(0.05..1.0)).collect();
    let total: f64 = labels.iter().sum();
    labels.iter_mut().for_each(|p| *p /= total);
    Detection::new(frame, geometry, labels)
}

/// A few small frames with objects and detections placed near them.
fn scene(seed: u64, frames: usize) -> (Dataset, Vec<Detection<f64>>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut dets = Vec::new();
    for f in 0..frames {
        let (w, h) = (rng.random_range(4..24i64), rng.random_range(4..24i64));
        let id = FrameId(f as u32);
        let objects: Vec<_> = (0..rng.random_range(0..4))
            .map(|_| GroundTruthObject::from_box(id, random_box(&mut rng, w, h), rng.random_range(0..CLASSES)))
            .collect();
        for _ in 0..rng.random_range(0..5) {
            dets.push(random_detection(&mut rng, id, w, h));
        }
        out.push(Frame {
            id,
            dims: ImageDims::new(w as u32, h as u32).unwrap(),
            objects,
        });
    }
    let dataset = Dataset {
        frames: out,
        class_names: (0..CLASSES).map(|c| c.to_string()).collect(),
    };
    (dataset, dets)
}

fn cfg() -> EvalConfig<f64> {
    EvalConfig::default()
}

fn brute_force_max(values: &[f64], rows: usize, cols: usize) -> f64 {
    fn go(v: &[f64], cols: usize, row: usize, rows: usize, used: &mut [bool]) -> f64 {
        if row == rows {
            return 0.0;
        }
        let mut best = go(v, cols, row + 1, rows, used);
        for c in 0..cols {
            if !used[c] {
                used[c] = true;
                best = best.max(v[row * cols + c] + go(v, cols, row + 1, rows, used));
                used[c] = false;
            }
        }
        best
    }
    go(values, cols, 0, rows, &mut vec![false; cols])
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(96))]

    #[test]
    fn hungarian_reaches_brute_force_optimum(
        (rows, cols, values) in (1usize..=6, 1usize..=6)
            .prop_flat_map(|(r, c)| (Just(r), Just(c), proptest::collection::vec(0.0..1.0f64, r * c)))
    ) {
        let pairs = hungarian_max(&values, rows, cols);
        let total: f64 = pairs.iter().map(|&(r, c)| values[r * cols + c]).sum();
        prop_assert!((total - brute_force_max(&values, rows, cols)).abs() < 1e-12);
        let mut seen_r = vec![false; rows];
        let mut seen_c = vec![false; cols];
        for &(r, c) in &pairs {
            prop_assert!(!seen_r[r] && !seen_c[c]);
            seen_r[r] = true;
            seen_c[c] = true;
        }
    }

    #[test]
    fn pdq_bounded_and_counts_consistent(seed in any::<u64>()) {
        let (dataset, dets) = scene(seed, 4);
        let r = evaluate(&dataset, &dets, &cfg()).unwrap();
        let s = &r.summary;
        prop_assert!((0.0..=1.0).contains(&s.pdq));
        prop_assert_eq!(s.tp + s.fn_, dataset.num_objects());
        prop_assert_eq!(s.tp + s.fp, dets.len());
        if s.tp > 0 && s.fp + s.fn_ > 0 {
            prop_assert!(s.avg_ppdq >= s.pdq);
        }
    }

    #[test]
    fn detection_order_does_not_matter(seed in any::<u64>(), shift in 0usize..7) {
        let (dataset, dets) = scene(seed, 3);
        let mut rotated = dets.clone();
        if !rotated.is_empty() {
            let k = shift % rotated.len();
            rotated.rotate_left(k);
        }
        rotated.reverse();
        let a = evaluate(&dataset, &dets, &cfg()).unwrap().summary;
        let b = evaluate(&dataset, &rotated, &cfg()).unwrap().summary;
        prop_assert_eq!((a.tp, a.fp, a.fn_), (b.tp, b.fp, b.fn_));
        prop_assert!((a.pdq - b.pdq).abs() < 1e-12);
    }

    #[test]
    fn frame_order_does_not_matter(seed in any::<u64>()) {
        let (dataset, dets) = scene(seed, 5);
        let mut reordered = dataset.clone();
        reordered.frames.reverse();
        let a = evaluate(&dataset, &dets, &cfg()).unwrap();
        let b = evaluate(&reordered, &dets, &cfg()).unwrap();
        prop_assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn evaluation_is_deterministic(seed in any::<u64>()) {
        let (dataset, dets) = scene(seed, 4);
        let a = evaluate(&dataset, &dets, &cfg()).unwrap();
        let b = evaluate(&dataset, &dets, &cfg()).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn stray_false_positive_lowers_pdq(seed in any::<u64>()) {
        let (mut dataset, mut dets) = scene(seed, 3);
        // A spare frame that only the stray detection lands in.
        let id = FrameId(99);
        dataset.frames.push(Frame { id, dims: ImageDims::new(8, 8).unwrap(), objects: vec![] });
        let before = evaluate(&dataset, &dets, &cfg()).unwrap().pdq();
        prop_assume!(before > 0.0 && before < 1.0);
        let b = AxisAlignedBox::new(1, 1, 3, 3).unwrap();
        dets.push(Detection::new(id, Geometry::ConventionalBox(b), vec![1.0, 0.0, 0.0]));
        let after = evaluate(&dataset, &dets, &cfg()).unwrap().pdq();
        prop_assert!(after < before);
    }

    #[test]
    fn undetected_object_lowers_pdq(seed in any::<u64>()) {
        let (mut dataset, dets) = scene(seed, 3);
        let before = evaluate(&dataset, &dets, &cfg()).unwrap().pdq();
        prop_assume!(before > 0.0 && before < 1.0);
        let id = FrameId(77);
        let bbox = AxisAlignedBox::new(0, 0, 2, 2).unwrap();
        dataset.frames.push(Frame {
            id,
            dims: ImageDims::new(6, 6).unwrap(),
            objects: vec![GroundTruthObject::from_box(id, bbox, 0)],
        });
        let after = evaluate(&dataset, &dets, &cfg()).unwrap().pdq();
        prop_assert!(after < before);
    }

    #[test]
    fn f32_agrees_with_f64(seed in any::<u64>()) {
        let (dataset, dets) = scene(seed, 3);
        let dets32: Vec<Detection<f32>> = dets
            .iter()
            .map(|d| {
                let geometry = match d.geometry() {
                    Geometry::ConventionalBox(b) => Geometry::ConventionalBox(*b),
                    Geometry::UniformBox { bbox, prob } => Geometry::UniformBox { bbox: *bbox, prob: *prob as f32 },
                    Geometry::ProbabilisticBox { top_left, bottom_right } => {
                        let c = |g: &GaussianCorner<f64>| GaussianCorner::isotropic(
                            [g.mean[0] as f32, g.mean[1] as f32],
                            g.cov[0][0] as f32,
                        );
                        Geometry::ProbabilisticBox { top_left: c(top_left), bottom_right: c(bottom_right) }
                    }
                };
                Detection::new(d.frame(), geometry, d.label_dist().iter().map(|&p| p as f32).collect())
            })
            .collect();
        let cfg32 = EvalConfig::<f32>::default();
        let mut cfg64 = cfg();
        cfg64.spatial.epsilon = cfg32.spatial.epsilon as f64;
        // Pairwise qualities agree; whole-dataset scores can differ when a
        // pair's quality underflows in f32 and the match is dissolved.
        for frame in &dataset.frames {
            for gt in &frame.objects {
                for (d64, d32) in dets.iter().zip(&dets32).filter(|(d, _)| d.frame() == frame.id) {
                    let a = pair_quality(gt, d64, frame.dims, &cfg64.spatial, 0.5).unwrap().ppdq;
                    let b = pair_quality(gt, d32, frame.dims, &cfg32.spatial, 0.5f32).unwrap().ppdq as f64;
                    if a > 1e-12 {
                        prop_assert!((a.ln() - b.ln()).abs() <= 1e-2 * (1.0 - a.ln()), "{} vs {}", a, b);
                    }
                }
            }
        }
    }

    #[test]
    fn higher_uniform_probability_raises_spatial_quality(p in 0.01..0.98f64, dp in 0.001..0.02f64) {
        let dims = ImageDims::new(20, 20).unwrap();
        let bbox = AxisAlignedBox::new(4, 4, 12, 10).unwrap();
        let gt = GroundTruthObject::from_box(FrameId(0), bbox, 0);
        let q = |prob: f64| {
            let det = Detection::new(FrameId(0), Geometry::UniformBox { bbox, prob }, vec![1.0]);
            pair_quality(&gt, &det, dims, &SpatialConfig::default(), 0.5).unwrap().spatial
        };
        prop_assert!(q(p + dp) > q(p));
    }

    #[test]
    fn background_ignores_box_interior(x0 in 0i64..6, y0 in 0i64..6, w in 2i64..8, h in 2i64..8) {
        let dims = ImageDims::new(20, 20).unwrap();
        let bbox = AxisAlignedBox::new(x0, y0, x0 + w, y0 + h).unwrap();
        // Segment is only the left column, so the rest of the box is not object.
        let segment = PixelSet::from_pixels((y0..=y0 + h).map(|y| (x0, y)));
        let gt = GroundTruthObject::new(FrameId(0), segment, bbox, 0);
        let det = Detection::new(FrameId(0), Geometry::<f64>::ConventionalBox(bbox), vec![1.0]);
        let map = build_probability_map(&det, dims, &SpatialConfig::default()).unwrap();
        prop_assert_eq!(background_loss(&gt, &map), 0.0);
        prop_assert!(spatial_quality(&gt, &map) > 0.999);
    }

    #[test]
    fn dropping_a_false_positive_never_lowers_ap(
        flags in proptest::collection::vec(any::<bool>(), 1..30),
        scores in proptest::collection::vec(0.0..1.0f64, 30),
        pick in any::<prop::sample::Index>(),
    ) {
        let records: Vec<MatchRecord> = flags
            .iter()
            .enumerate()
            .map(|(i, &is_tp)| MatchRecord { class_id: 0, score: scores[i], is_tp, frame: FrameId(0), index: i })
            .collect();
        let n_gt = records.iter().filter(|r| r.is_tp).count() + 2;
        let fps: Vec<usize> = (0..records.len()).filter(|&i| !records[i].is_tp).collect();
        prop_assume!(!fps.is_empty());
        let drop = fps[pick.index(fps.len())];
        let fewer: Vec<MatchRecord> = records.iter().enumerate().filter(|&(i, _)| i != drop).map(|(_, r)| *r).collect();
        let before = average_precision(&records, n_gt).unwrap();
        let after = average_precision(&fewer, n_gt).unwrap();
        prop_assert!(after >= before - 1e-15);
    }
}
