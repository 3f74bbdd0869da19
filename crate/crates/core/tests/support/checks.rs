//! One function per acceptance property. Each returns a short detail line
//! on success and a description of the first violation on failure.

use std::time::Instant;

use ovseg_core::cdiy::{decode, encode};
use ovseg_core::encoders::StubEncoder;
use ovseg_core::eval::{evaluate_dataset, ConfusionMatrix, DatasetManifest};
use ovseg_core::exec::ExecPolicy;
use ovseg_core::fusion::{Ablation, Segmenter};
use ovseg_core::partition::{upsample_bilinear, PatchGrid, ScaleConfig};
use ovseg_core::pipeline::{aggregate_scales, DenseInferenceConfig};
use ovseg_core::resize::resize_bilinear;
use ovseg_core::saliency::{
    aggregate_instance_masks, objectness_weights, ConstantSaliency, InstanceMaskSet, ProviderKind, SaliencyProvider,
    SaliencyRequest, DEFAULT_MASK_THRESHOLD,
};
use ovseg_core::tensor::{LabelMap, SaliencyMap, ScoreMap};
use ovseg_core::vocabulary::ClassVocabulary;
use rand::seq::SliceRandom;
use rand::Rng;

use super::fixtures::{self, oracle_case, random_image, random_saliency, random_tensor, rng};
use super::oracle::{reference, OracleInput};

pub type Check = Result<String, String>;

/// Hands a fixed map to the engine, to be resized like any provider output.
pub struct FixedSaliency(pub SaliencyMap);

impl SaliencyProvider for FixedSaliency {
    fn name(&self) -> String {
        "fixed".into()
    }

    fn kind(&self) -> ProviderKind {
        ProviderKind::Constant
    }

    fn raw_saliency(&self, _: SaliencyRequest<'_>) -> ovseg_core::Result<SaliencyMap> {
        Ok(self.0.clone())
    }
}

pub fn oracle_equivalence(cases: u64) -> Check {
    let mut worst = 0.0f64;
    for seed in 0..cases {
        let case = oracle_case(seed);
        let enc = StubEncoder::new(16, seed).with_input_size(case.encoder_input);
        let cfg = DenseInferenceConfig {
            scales: ScaleConfig::new(case.patch_sizes.clone(), case.global_scale0).map_err(|e| e.to_string())?,
            encoder_input: case.encoder_input,
            logit_scale: case.logit_scale,
            short_side: None,
            policy: if case.parallel {
                ExecPolicy::Parallel
            } else {
                ExecPolicy::Sequential
            },
        };
        let vocab = ClassVocabulary::build(&case.names).map_err(|e| e.to_string())?;
        let provider = FixedSaliency(case.theta.clone());
        let seg = Segmenter::new(vocab, cfg, &enc, &enc, &provider).map_err(|e| e.to_string())?;
        let got = seg
            .segment(&case.image, "case", case.ablation)
            .map_err(|e| format!("case {seed}: {e}"))?;
        let want = reference(
            &OracleInput {
                image: &case.image,
                names: &case.names,
                patch_sizes: &case.patch_sizes,
                global_scale0: case.global_scale0,
                logit_scale: case.logit_scale,
                theta: &case.theta,
                ablation: case.ablation,
            },
            &enc,
        );
        for (i, (a, b)) in got.probabilities.data().iter().zip(&want.probabilities).enumerate() {
            let d = (f64::from(*a) - f64::from(*b)).abs();
            worst = worst.max(d);
            if d > 1e-6 {
                return Err(format!("case {seed}: probability {i} differs by {d:e}"));
            }
        }
        if let Some(i) = (0..want.labels.len()).find(|&i| got.labels.data()[i] != want.labels[i]) {
            return Err(format!(
                "case {seed}: label at pixel {i} is {} vs reference {}",
                got.labels.data()[i],
                want.labels[i]
            ));
        }
    }
    Ok(format!(
        "{cases} cases, max probability deviation {worst:.2e}, labels identical"
    ))
}

fn random_score_map(r: &mut rand_chacha::ChaCha8Rng, h: usize, w: usize, t: usize, scale: f32) -> ScoreMap {
    ScoreMap::new(
        h,
        w,
        t,
        (0..h * w * t).map(|_| r.random_range(-scale..=scale)).collect(),
    )
    .unwrap()
}

/// The scale mean is bit-identical under every permutation of the scales and
/// agrees with the element-wise mean.
pub fn scale_mean_permutation() -> Check {
    let mut r = rng(11);
    for case in 0..20 {
        let (h, w, t) = (r.random_range(1..=9), r.random_range(1..=9), r.random_range(1..=4));
        let n = r.random_range(1..=4);
        let maps: Vec<ScoreMap> = (0..n).map(|_| random_score_map(&mut r, h, w, t, 100.0)).collect();
        let base = aggregate_scales(&maps, ExecPolicy::Sequential).map_err(|e| e.to_string())?;
        for (i, v) in base.data().iter().enumerate() {
            let mean = maps.iter().map(|m| f64::from(m.data()[i])).sum::<f64>() / n as f64;
            if (f64::from(*v) - mean).abs() > 1e-6 * mean.abs().max(1.0) {
                return Err(format!("case {case}: element {i} is {v}, mean {mean}"));
            }
        }
        for _ in 0..6 {
            let mut perm = maps.clone();
            perm.shuffle(&mut r);
            let got = aggregate_scales(&perm, ExecPolicy::Parallel).map_err(|e| e.to_string())?;
            if got != base {
                return Err(format!("case {case}: permuted scales change the mean"));
            }
        }
    }
    Ok("20 stacks of up to 4 scales, all permutations bit-identical".into())
}

/// Background and foreground weights sum to one at every pixel. Weights
/// are stored as f32, so the sum is exact up to one f32 rounding of `1 - Θ`.
pub fn weights_partition_unity() -> Check {
    let mut r = rng(12);
    let mut worst = 0.0f64;
    for _ in 0..50 {
        let (h, w, t) = (r.random_range(1..=16), r.random_range(1..=16), r.random_range(2..=6));
        let theta = random_saliency(&mut r, h, w);
        let wm = objectness_weights(&theta, t).map_err(|e| e.to_string())?;
        for (px, &th) in wm.pixels().zip(theta.data()) {
            if px[1..].iter().any(|&f| f != th) {
                return Err("foreground weights differ from objectness".into());
            }
            let sum = f64::from(px[0]) + f64::from(px[1]);
            worst = worst.max((sum - 1.0).abs());
        }
    }
    let tol = f64::from(f32::EPSILON) / 2.0;
    if worst > tol {
        return Err(format!("bg + fg deviates from 1 by {worst:e}"));
    }
    Ok(format!("max |bg + fg - 1| = {worst:.1e} (bound {tol:.1e})"))
}

/// Fused outputs are probability vectors within 1e-5.
pub fn simplex(logit_scale: f64) -> Check {
    let mut worst = 0.0f64;
    for seed in 0..10 {
        let mut r = rng(100 + seed);
        let (h, w) = (r.random_range(16..=48), r.random_range(16..=48));
        let colors: Vec<[u8; 3]> = (0..3).map(|_| [r.random(), r.random(), r.random()]).collect();
        let image = random_image(&mut r, h, w, &colors, 0.05);
        let theta = random_saliency(&mut r, h, w);
        let enc = StubEncoder::new(16, seed).with_input_size(8);
        let cfg = DenseInferenceConfig {
            scales: ScaleConfig::new(vec![24, 12], false).unwrap(),
            encoder_input: 8,
            logit_scale,
            short_side: None,
            policy: ExecPolicy::Parallel,
        };
        let names = ["cat", &fixtures::hex(colors[1]), &fixtures::hex(colors[2])];
        let vocab = ClassVocabulary::build(&names).map_err(|e| e.to_string())?;
        let provider = FixedSaliency(theta);
        let seg = Segmenter::new(vocab, cfg, &enc, &enc, &provider).map_err(|e| e.to_string())?;
        for ablation in Ablation::ALL {
            let out = seg.segment(&image, "s", ablation).map_err(|e| e.to_string())?;
            for px in out.probabilities.pixels() {
                if px.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(format!("probability outside [0,1]: {px:?}"));
                }
                let sum: f64 = px.iter().map(|&p| f64::from(p)).sum();
                worst = worst.max((sum - 1.0).abs());
            }
        }
    }
    if worst > 1e-5 {
        return Err(format!("logit scale {logit_scale}: sum deviates by {worst:e}"));
    }
    Ok(format!("logit scale {logit_scale}: max |sum - 1| = {worst:.1e}"))
}

/// With a single scale, `no_multiscale` is the full method.
pub fn single_scale_ablation_identity() -> Check {
    for seed in 0..10 {
        let mut r = rng(200 + seed);
        let (h, w) = (r.random_range(8..=48), r.random_range(8..=48));
        let colors: Vec<[u8; 3]> = (0..3).map(|_| [r.random(), r.random(), r.random()]).collect();
        let image = random_image(&mut r, h, w, &colors, 0.0);
        let enc = StubEncoder::new(16, seed).with_input_size(8);
        let cfg = DenseInferenceConfig {
            scales: ScaleConfig::new(vec![r.random_range(8..=32)], r.random_bool(0.3)).unwrap(),
            encoder_input: 8,
            short_side: None,
            ..Default::default()
        };
        let vocab = ClassVocabulary::build(&["cat", &fixtures::hex(colors[0])]).unwrap();
        let provider = FixedSaliency(random_saliency(&mut r, h, w));
        let seg = Segmenter::new(vocab, cfg, &enc, &enc, &provider).map_err(|e| e.to_string())?;
        let full = seg.segment(&image, "s", Ablation::Full).map_err(|e| e.to_string())?;
        let single = seg
            .segment(&image, "s", Ablation::NoMultiscale)
            .map_err(|e| e.to_string())?;
        if full.probabilities != single.probabilities || full.labels != single.labels {
            return Err(format!("seed {seed}: outputs differ"));
        }
    }
    Ok("10 single-scale configurations bit-identical".into())
}

fn random_masks(r: &mut rand_chacha::ChaCha8Rng, h: usize, w: usize, n: usize) -> Vec<Vec<bool>> {
    (0..n)
        .map(|_| (0..h * w).map(|_| r.random_bool(0.4)).collect())
        .collect()
}

fn aggregate(h: usize, w: usize, masks: Vec<Vec<bool>>, scores: Vec<f64>) -> Result<SaliencyMap, String> {
    let set = InstanceMaskSet::new(h, w, masks, scores).map_err(|e| e.to_string())?;
    aggregate_instance_masks(&set, DEFAULT_MASK_THRESHOLD).map_err(|e| e.to_string())
}

pub fn cutler_order_invariance() -> Check {
    let mut r = rng(21);
    for case in 0..50 {
        let (h, w, n) = (r.random_range(1..=12), r.random_range(1..=12), r.random_range(1..=8));
        let masks = random_masks(&mut r, h, w, n);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0.0..=1.0)).collect();
        let base = aggregate(h, w, masks.clone(), scores.clone())?;
        let mut order: Vec<usize> = (0..n).collect();
        for _ in 0..5 {
            order.shuffle(&mut r);
            let got = aggregate(
                h,
                w,
                order.iter().map(|&i| masks[i].clone()).collect(),
                order.iter().map(|&i| scores[i]).collect(),
            )?;
            if got != base {
                return Err(format!("case {case}: mask order {order:?} changes the map"));
            }
        }
    }
    Ok("50 mask sets x 5 orders bit-identical".into())
}

pub fn cutler_max_is_one() -> Check {
    let mut r = rng(22);
    for case in 0..50 {
        let (h, w, n) = (r.random_range(1..=12), r.random_range(1..=12), r.random_range(1..=8));
        let mut masks = random_masks(&mut r, h, w, n);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0.0..=1.0)).collect();
        // make sure at least one surviving mask is non-empty
        let survivor = r.random_range(0..n);
        let mut scores = scores;
        scores[survivor] = r.random_range(DEFAULT_MASK_THRESHOLD..=1.0);
        masks[survivor][r.random_range(0..h * w)] = true;
        let map = aggregate(h, w, masks, scores)?;
        let max = map.data().iter().copied().fold(f32::MIN, f32::max);
        if max != 1.0 {
            return Err(format!("case {case}: maximum is {max}"));
        }
        if map.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(format!("case {case}: value outside [0,1]"));
        }
    }
    Ok("50 mask sets with a survivor peak at exactly 1.0".into())
}

pub fn cutler_threshold_discard() -> Check {
    let mut r = rng(23);
    for case in 0..50 {
        let (h, w, n) = (r.random_range(1..=12), r.random_range(1..=12), r.random_range(1..=6));
        let masks = random_masks(&mut r, h, w, n);
        let scores: Vec<f64> = (0..n).map(|_| r.random_range(0.0..=1.0)).collect();
        let base = aggregate(h, w, masks.clone(), scores.clone())?;
        let (mut m2, mut s2) = (masks, scores);
        let extra = r.random_range(1..=3);
        for _ in 0..extra {
            let at = r.random_range(0..=m2.len());
            m2.insert(at, (0..h * w).map(|_| r.random_bool(0.7)).collect());
            s2.insert(at, r.random_range(0.0..DEFAULT_MASK_THRESHOLD));
        }
        if aggregate(h, w, m2, s2)? != base {
            return Err(format!("case {case}: low-confidence masks changed the map"));
        }
        let low: Vec<f64> = (0..n).map(|_| r.random_range(0.0..DEFAULT_MASK_THRESHOLD)).collect();
        let zero = aggregate(h, w, random_masks(&mut r, h, w, n), low)?;
        if zero.data().iter().any(|&v| v != 0.0) {
            return Err(format!("case {case}: all-discarded set is not all zero"));
        }
    }
    let edge = aggregate(1, 1, vec![vec![true]], vec![DEFAULT_MASK_THRESHOLD])?;
    if edge.data() != [1.0] {
        return Err("a mask scored exactly at the threshold was discarded".into());
    }
    Ok("masks below 0.3 never contribute; all-below gives zeros".into())
}

/// Scaling every score by `c` leaves the map unchanged whenever the scaled
/// scores are exact and all masks still survive.
pub fn cutler_scaling_invariance() -> Check {
    let mut r = rng(24);
    let factors = [0.5, 0.75, 1.25, 2.0];
    for case in 0..40 {
        let (h, w, n) = (r.random_range(1..=12), r.random_range(1..=12), r.random_range(1..=8));
        let masks = random_masks(&mut r, h, w, n);
        for c in factors {
            // multiples of 1/64 that stay within [0.3, 1] after scaling
            let lo = (DEFAULT_MASK_THRESHOLD.max(DEFAULT_MASK_THRESHOLD / c) * 64.0).ceil() as u32;
            let hi = ((1.0f64).min(1.0 / c) * 64.0).floor() as u32;
            let scores: Vec<f64> = (0..n).map(|_| f64::from(r.random_range(lo..=hi)) / 64.0).collect();
            let base = aggregate(h, w, masks.clone(), scores.clone())?;
            let scaled: Vec<f64> = scores.iter().map(|s| s * c).collect();
            let got = aggregate(h, w, masks.clone(), scaled)?;
            if got != base {
                return Err(format!("case {case}: factor {c} changes the map"));
            }
        }
    }
    Ok(format!("40 mask sets under factors {factors:?} bit-identical"))
}

/// Every pixel is covered by exactly one window for all H, W <= 40, P <= 13.
pub fn tiling_exhaustive() -> Check {
    let mut grids = 0;
    for h in 1..=40usize {
        for w in 1..=40usize {
            for p in 1..=13usize {
                let g = PatchGrid::new(h, w, p).map_err(|e| e.to_string())?;
                if g.rows() != h.div_ceil(p) || g.cols() != w.div_ceil(p) || g.len() != g.rows() * g.cols() {
                    return Err(format!("{h}x{w}/{p}: grid is {}x{}", g.rows(), g.cols()));
                }
                let mut cover = vec![0u8; h * w];
                for (i, win) in g.windows().iter().enumerate() {
                    let (r, c) = (i / g.cols(), i % g.cols());
                    if win.x != c * p || win.y != r * p || win.width == 0 || win.height == 0 {
                        return Err(format!("{h}x{w}/{p}: window {i} misplaced: {win:?}"));
                    }
                    if win.x + win.width > w || win.y + win.height > h || win.width > p || win.height > p {
                        return Err(format!("{h}x{w}/{p}: window {i} out of bounds: {win:?}"));
                    }
                    for y in win.y..win.y + win.height {
                        for x in win.x..win.x + win.width {
                            cover[y * w + x] += 1;
                        }
                    }
                }
                if let Some(i) = cover.iter().position(|&c| c != 1) {
                    return Err(format!("{h}x{w}/{p}: pixel {i} covered {} times", cover[i]));
                }
                grids += 1;
            }
        }
    }
    Ok(format!("{grids} grids tile exactly"))
}

/// Constants survive upsampling exactly and outputs stay within input bounds.
pub fn upsample_constant_and_bounded() -> Check {
    let mut r = rng(31);
    for case in 0..100 {
        let (h, w, t) = (r.random_range(1..=8), r.random_range(1..=8), r.random_range(1..=3));
        let (th, tw) = (r.random_range(1..=40), r.random_range(1..=40));
        let v: f32 = r.random_range(-50.0..=50.0);
        let flat = ScoreMap::filled(h, w, t, v).unwrap();
        let up = upsample_bilinear(&flat, th, tw, ExecPolicy::Parallel).map_err(|e| e.to_string())?;
        if up.data().iter().any(|&x| x != v) {
            return Err(format!("case {case}: constant {v} not preserved"));
        }
        let m = random_score_map(&mut r, h, w, t, 10.0);
        let up = upsample_bilinear(&m, th, tw, ExecPolicy::Sequential).map_err(|e| e.to_string())?;
        for k in 0..t {
            let ch = m.channel(k);
            let (lo, hi) = ch.iter().fold((f32::MAX, f32::MIN), |(a, b), &x| (a.min(x), b.max(x)));
            if up.channel(k).iter().any(|&x| x < lo || x > hi) {
                return Err(format!("case {case}: class {k} leaves [{lo}, {hi}]"));
            }
        }
    }
    Ok("100 constant maps preserved exactly, 100 random maps bounded".into())
}

/// 1-D resampling agrees with the textbook half-pixel formula.
pub fn half_pixel_reference(cases: u64) -> Check {
    let mut r = rng(32);
    let mut worst = 0.0f64;
    for case in 0..cases {
        let src_len = r.random_range(1..=30);
        let dst_len = r.random_range(1..=60);
        let src: Vec<f32> = (0..src_len).map(|_| r.random_range(-1.0..=1.0)).collect();
        let got = resize_bilinear(&src, 1, src_len, 1, 1, dst_len, ExecPolicy::Sequential);
        for (d, &g) in got.iter().enumerate() {
            // centre of output pixel d in source pixel units
            let x = (d as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
            let x = x.clamp(0.0, (src_len - 1) as f64);
            let i = x.floor() as usize;
            let j = (i + 1).min(src_len - 1);
            let f = x - i as f64;
            let want = (1.0 - f) * f64::from(src[i]) + f * f64::from(src[j]);
            let err = (f64::from(g) - want).abs();
            worst = worst.max(err);
            if err > 1e-6 {
                return Err(format!("case {case}: {src_len}->{dst_len} at {d}: {g} vs {want}"));
            }
        }
    }
    Ok(format!("{cases} cases, max deviation {worst:.1e}"))
}

pub fn miou_hand_fixture() -> Check {
    let gt = LabelMap::new(2, 2, vec![0, 1, 1, 1]).unwrap();
    let pred = LabelMap::new(2, 2, vec![0, 1, 0, 1]).unwrap();
    let mut cm = ConfusionMatrix::new(2);
    cm.accumulate(&gt, &pred).map_err(|e| e.to_string())?;
    if (cm.get(0, 0), cm.get(0, 1), cm.get(1, 0), cm.get(1, 1)) != (1, 0, 1, 2) {
        return Err(format!("counts {:?}", cm.counts()));
    }
    let m = cm.miou().map_err(|e| e.to_string())?;
    if m.per_class != [Some(1.0 / 2.0), Some(2.0 / 3.0)] || m.mean != 7.0 / 12.0 {
        return Err(format!("IoU {:?}, mean {}", m.per_class, m.mean));
    }
    Ok("IoU 1/2, 2/3, mean 7/12 exact".into())
}

/// mIoU of the synthetic dataset with and without objectness.
pub fn stub_dataset_miou(dir: &std::path::Path, logit_scale: f64) -> Result<(f64, f64), String> {
    let ds = fixtures::build_stub_dataset(dir);
    let manifest = DatasetManifest::load(&ds.manifest, None).map_err(|e| e.to_string())?;
    let enc = fixtures::dataset_encoder();
    let cfg = DenseInferenceConfig {
        scales: ScaleConfig::new(fixtures::DATASET_SCALES.to_vec(), false).unwrap(),
        encoder_input: fixtures::DATASET_INPUT,
        short_side: Some(fixtures::DATASET_SIDE),
        logit_scale,
        ..Default::default()
    };
    let vocab = ClassVocabulary::build(&ds.class_names).map_err(|e| e.to_string())?;
    let fallback = ConstantSaliency(1.0);
    let seg = Segmenter::new(vocab, cfg, &enc, &enc, &fallback).map_err(|e| e.to_string())?;
    let run = |ablation| -> Result<f64, String> {
        let report = evaluate_dataset(&manifest, &seg, ablation).map_err(|e| e.to_string())?;
        if !report.failed.is_empty() {
            return Err(format!("{} images failed: {:?}", report.failed.len(), report.failed));
        }
        report.mean_iou().ok_or_else(|| "undefined mIoU".to_string())
    };
    Ok((run(Ablation::Full)?, run(Ablation::NoObjectness)?))
}

pub fn cdiy_round_trip(cases: u64) -> Check {
    let mut r = rng(41);
    for case in 0..cases {
        let t = random_tensor(&mut r);
        let bytes = encode(&t);
        let back = decode(&bytes).map_err(|e| format!("case {case}: {e}"))?;
        let same = back.dims() == t.dims()
            && back
                .data()
                .iter()
                .map(|v| v.to_bits())
                .eq(t.data().iter().map(|v| v.to_bits()));
        if !same || encode(&back) != bytes {
            return Err(format!("case {case}: round trip changed dims {:?}", t.dims()));
        }
    }
    Ok(format!("{cases} random tensors bit-exact"))
}

pub fn timed<T>(f: impl FnOnce() -> T) -> (T, f64) {
    let t0 = Instant::now();
    let v = f();
    (v, t0.elapsed().as_secs_f64())
}
