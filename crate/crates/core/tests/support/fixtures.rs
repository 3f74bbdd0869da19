//! Seeded inputs: random oracle cases, random tensors and the synthetic
//! evaluation dataset.

use std::path::{Path, PathBuf};

use ovseg_core::cdiy::Tensor;
use ovseg_core::encoders::{StubEncoder, TextEncoder};
use ovseg_core::export::{encode_label_png, Palette};
use ovseg_core::fusion::Ablation;
use ovseg_core::tensor::{ImageTensor, LabelMap, SaliencyMap};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn hex(rgb: [u8; 3]) -> String {
    format!("#{:02x}{:02x}{:02x}", rgb[0], rgb[1], rgb[2])
}

fn unit_rgb(rgb: [u8; 3]) -> [f32; 3] {
    rgb.map(|v| f32::from(v) / 255.0)
}

/// Axis-aligned rectangles of a few flat colours, optionally with noise.
pub fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize, colors: &[[u8; 3]], noise: f32) -> ImageTensor {
    let mut img = vec![unit_rgb(colors[0]); h * w];
    for _ in 0..rng.random_range(1..=4) {
        let c = unit_rgb(colors[rng.random_range(0..colors.len())]);
        let (y0, x0) = (rng.random_range(0..h), rng.random_range(0..w));
        let (y1, x1) = (rng.random_range(y0 + 1..=h), rng.random_range(x0 + 1..=w));
        for y in y0..y1 {
            for x in x0..x1 {
                img[y * w + x] = c;
            }
        }
    }
    let data = img
        .into_iter()
        .flat_map(|px| px.map(|v| (v + rng.random_range(-noise..=noise)).clamp(0.0, 1.0)))
        .collect();
    ImageTensor::new(h, w, data).unwrap()
}

pub fn random_saliency(rng: &mut ChaCha8Rng, h: usize, w: usize) -> SaliencyMap {
    SaliencyMap::new(h, w, (0..h * w).map(|_| rng.random::<f32>()).collect()).unwrap()
}

/// One randomized end-to-end configuration within the oracle's bounds:
/// images up to 64×64, at most four classes and three scales.
pub struct OracleCase {
    pub image: ImageTensor,
    pub names: Vec<String>,
    pub patch_sizes: Vec<usize>,
    pub global_scale0: bool,
    pub encoder_input: usize,
    pub logit_scale: f64,
    pub theta: SaliencyMap,
    pub ablation: Ablation,
    pub parallel: bool,
}

pub fn oracle_case(seed: u64) -> OracleCase {
    let mut r = rng(seed);
    let h = r.random_range(8..=64);
    let w = r.random_range(8..=64);
    let colors: Vec<[u8; 3]> = (0..3).map(|_| [r.random(), r.random(), r.random()]).collect();
    let noise = if r.random_bool(0.5) { 0.0 } else { 0.05 };
    let image = random_image(&mut r, h, w, &colors, noise);

    let t = r.random_range(2..=4);
    let mut names = vec!["background".to_string()];
    while names.len() < t {
        let name = if r.random_bool(0.6) {
            hex(colors[r.random_range(0..colors.len())])
        } else {
            ["cat", "dog", "tree", "sky", "road"][r.random_range(0..5)].to_string()
        };
        if !names.contains(&name) {
            names.push(name);
        }
    }

    let n_scales = r.random_range(1..=3);
    let mut pool: Vec<usize> = (8..=40).collect();
    pool.shuffle(&mut r);
    let mut patch_sizes = pool[..n_scales].to_vec();
    patch_sizes.sort_unstable_by(|a, b| b.cmp(a));

    let theta = if r.random_bool(0.5) {
        random_saliency(&mut r, h, w)
    } else {
        let (th, tw) = (r.random_range(2..=64), r.random_range(2..=64));
        random_saliency(&mut r, th, tw)
    };
    OracleCase {
        image,
        names,
        patch_sizes,
        global_scale0: r.random_bool(0.25),
        encoder_input: [4, 8, 12][r.random_range(0..3)],
        logit_scale: [1.0, 2.5, 10.0][r.random_range(0..3)],
        theta,
        ablation: Ablation::ALL[r.random_range(0..3)],
        parallel: r.random_bool(0.5),
    }
}

/// Random CDIY tensor of rank 1..=4 with awkward but finite values.
pub fn random_tensor(rng: &mut ChaCha8Rng) -> Tensor {
    let rank = rng.random_range(1..=4);
    let dims: Vec<usize> = (0..rank).map(|_| rng.random_range(1..=6)).collect();
    let n: usize = dims.iter().product();
    let special = [0.0f32, -0.0, f32::MIN_POSITIVE, 1e-45, f32::MAX, f32::MIN, 1.0, -1.0];
    let data = (0..n)
        .map(|_| {
            if rng.random_bool(0.2) {
                special[rng.random_range(0..special.len())]
            } else {
                f32::from_bits(rng.random::<u32>() & 0xbf7f_ffff)
            }
        })
        .collect();
    Tensor::new(dims, data).unwrap()
}

/// Encoder configuration the synthetic dataset is built for.
pub const DATASET_DIM: usize = 32;
pub const DATASET_SEED: u64 = 0;
pub const DATASET_INPUT: usize = 8;
pub const DATASET_SIDE: usize = 96;
pub const DATASET_BLOCK: usize = 32;
pub const DATASET_SCALES: [usize; 3] = [32, 16, 8];

pub fn dataset_encoder() -> StubEncoder {
    StubEncoder::new(DATASET_DIM, DATASET_SEED).with_input_size(DATASET_INPUT)
}

pub struct StubDataset {
    pub manifest: PathBuf,
    pub classes: PathBuf,
    pub class_names: Vec<String>,
    pub background_color: [u8; 3],
}

fn cos(a: &[f32], b: &[f32]) -> f64 {
    let d: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    let na: f64 = a.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    d / (na * nb)
}

/// Ten 96×96 images of flat 32-pixel blocks with exact ground truth and
/// binary objectness maps.
///
/// Colours are picked so that the background region is closest to the
/// "background" prompt among all candidates and the object colours are
/// nearly orthogonal to it and to each other. Objectness decides the
/// blurred pixels along block boundaries; without it the background prompt,
/// which only partly matches its region, loses part of them.
pub fn build_stub_dataset(dir: &Path) -> StubDataset {
    let enc = dataset_encoder();
    let embed = |rgb: [u8; 3]| enc.encode_text(&format!("a photo of a {}", hex(rgb))).unwrap();
    let bg_text = enc.encode_text("a photo of a background").unwrap();
    let candidates: Vec<[u8; 3]> = (0..16u8)
        .flat_map(|r| (0..16u8).flat_map(move |g| (0..16u8).map(move |b| [r * 17, g * 17, b * 17])))
        .collect();
    let embs: Vec<Vec<f32>> = candidates.iter().map(|&c| embed(c)).collect();

    let (bi, _) = embs
        .iter()
        .enumerate()
        .map(|(i, e)| (i, cos(e, &bg_text)))
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    let background = candidates[bi];
    let mut objects: Vec<usize> = Vec::new();
    for (i, e) in embs.iter().enumerate() {
        let quiet = cos(e, &bg_text).abs() < 0.1
            && cos(e, &embs[bi]).abs() < 0.1
            && objects.iter().all(|&j| cos(e, &embs[j]).abs() < 0.1);
        if quiet && embed(candidates[i]) != embs[bi] {
            objects.push(i);
        }
        if objects.len() == 2 {
            break;
        }
    }
    assert_eq!(objects.len(), 2, "no suitable object colours");

    let colors = [background, candidates[objects[0]], candidates[objects[1]]];
    let class_names = vec!["background".to_string(), hex(colors[1]), hex(colors[2])];
    std::fs::create_dir_all(dir.join("images")).unwrap();
    std::fs::create_dir_all(dir.join("labels")).unwrap();
    std::fs::create_dir_all(dir.join("saliency")).unwrap();

    let mut r = rng(2024);
    let blocks = DATASET_SIDE / DATASET_BLOCK;
    let mut lines = String::new();
    for i in 0..10 {
        let mut cells: Vec<u8> = (0..blocks * blocks)
            .map(|_| if r.random_bool(0.35) { r.random_range(1..=2) } else { 0 })
            .collect();
        if cells.iter().all(|&c| c == 0) {
            let at = r.random_range(0..cells.len());
            cells[at] = 1;
        }
        let n = DATASET_SIDE;
        let label_at = |y: usize, x: usize| cells[(y / DATASET_BLOCK) * blocks + x / DATASET_BLOCK];
        let mut rgb = image::RgbImage::new(n as u32, n as u32);
        let mut sal = image::GrayImage::new(n as u32, n as u32);
        let mut gt = Vec::with_capacity(n * n);
        for y in 0..n {
            for x in 0..n {
                let l = label_at(y, x);
                rgb.put_pixel(x as u32, y as u32, image::Rgb(colors[usize::from(l)]));
                sal.put_pixel(x as u32, y as u32, image::Luma([if l > 0 { 255 } else { 0 }]));
                gt.push(l);
            }
        }
        let stem = format!("img{i:02}");
        rgb.save(dir.join("images").join(format!("{stem}.png"))).unwrap();
        sal.save(dir.join("saliency").join(format!("{stem}.png"))).unwrap();
        let labels = LabelMap::new(n, n, gt).unwrap();
        std::fs::write(
            dir.join("labels").join(format!("{stem}.png")),
            encode_label_png(&labels, &Palette::voc(), None).unwrap(),
        )
        .unwrap();
        lines.push_str(&format!("images/{stem}.png\tlabels/{stem}.png\tsaliency/{stem}.png\n"));
    }
    let manifest = dir.join("manifest.tsv");
    std::fs::write(&manifest, lines).unwrap();
    let classes = dir.join("classes.txt");
    std::fs::write(&classes, class_names.join("\n") + "\n").unwrap();
    StubDataset {
        manifest,
        classes,
        class_names,
        background_color: background,
    }
}
