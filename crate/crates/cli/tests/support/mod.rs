//! Reference oracles and a synthetic corpus shared by the CLI test targets. The oracles are
//! deliberately naive and share no code with the library.

#![allow(dead_code)]

use std::collections::{BTreeMap, VecDeque};
use std::path::{Path, PathBuf};

use pal_cli::manifest::assign_splits;
use pal_core::raster::{encode_gray, encode_image, encode_mask};
use pal_core::{BinaryMask, RgbImage};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_bits(rng: &mut impl Rng, w: usize, h: usize, density: f64) -> BinaryMask {
    let bits = (0..w * h).map(|_| rng.gen_bool(density)).collect();
    BinaryMask::from_bits(w, h, bits).unwrap()
}

/// A random mask of up to `max_side` per axis with a random fill density.
pub fn arbitrary_mask(rng: &mut impl Rng, max_side: usize) -> BinaryMask {
    let w = rng.gen_range(1..=max_side);
    let h = rng.gen_range(1..=max_side);
    let density = match rng.gen_range(0..10) {
        0 => 0.0,
        1 => 1.0,
        _ => rng.gen_range(0.005..0.7),
    };
    random_bits(rng, w, h, density)
}

/// Component pixel lists from breadth-first flood fill, ordered by their first pixel in
/// raster order; pixels within a component are sorted row-major.
pub fn flood_fill_components(mask: &BinaryMask, eight: bool) -> Vec<Vec<(usize, usize)>> {
    let (w, h) = mask.dims();
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) || seen[y * w + x] {
                continue;
            }
            let mut pixels = Vec::new();
            let mut queue = VecDeque::from([(x, y)]);
            seen[y * w + x] = true;
            while let Some((cx, cy)) = queue.pop_front() {
                pixels.push((cx, cy));
                for dy in -1i64..=1 {
                    for dx in -1i64..=1 {
                        if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                            continue;
                        }
                        let (nx, ny) = (cx as i64 + dx, cy as i64 + dy);
                        if nx < 0 || ny < 0 || nx >= w as i64 || ny >= h as i64 {
                            continue;
                        }
                        let (nx, ny) = (nx as usize, ny as usize);
                        if mask.get(nx, ny) && !seen[ny * w + nx] {
                            seen[ny * w + nx] = true;
                            queue.push_back((nx, ny));
                        }
                    }
                }
            }
            pixels.sort_by_key(|&(px, py)| (py, px));
            out.push(pixels);
        }
    }
    out
}

/// Every pixel within Chebyshev distance `r` of a foreground pixel.
pub fn brute_dilate(mask: &BinaryMask, r: usize) -> BinaryMask {
    let (w, h) = mask.dims();
    let r = r as i64;
    let bits = (0..h)
        .flat_map(|y| (0..w).map(move |x| (x, y)))
        .map(|(x, y)| {
            (-r..=r).any(|dy| {
                (-r..=r).any(|dx| {
                    let (nx, ny) = (x as i64 + dx, y as i64 + dy);
                    nx >= 0 && ny >= 0 && nx < w as i64 && ny < h as i64 && mask.get(nx as usize, ny as usize)
                })
            })
        })
        .collect();
    BinaryMask::from_bits(w, h, bits).unwrap()
}

/// Inclusive (x0, y0, x1, y1) of a pixel list.
pub fn pixel_bbox(pixels: &[(usize, usize)]) -> (usize, usize, usize, usize) {
    let x0 = pixels.iter().map(|p| p.0).min().unwrap();
    let x1 = pixels.iter().map(|p| p.0).max().unwrap();
    let y0 = pixels.iter().map(|p| p.1).min().unwrap();
    let y1 = pixels.iter().map(|p| p.1).max().unwrap();
    (x0, y0, x1, y1)
}

/// (tp, fp, fn, tn) by visiting every pixel.
pub fn brute_confusion(pred: &BinaryMask, gt: &BinaryMask) -> (u64, u64, u64, u64) {
    let mut c = (0, 0, 0, 0);
    for y in 0..gt.height() {
        for x in 0..gt.width() {
            match (pred.get(x, y), gt.get(x, y)) {
                (true, true) => c.0 += 1,
                (true, false) => c.1 += 1,
                (false, true) => c.2 += 1,
                (false, false) => c.3 += 1,
            }
        }
    }
    c
}

pub fn ratio_or_one(num: u64, den: u64) -> f64 {
    if den == 0 {
        1.0
    } else {
        num as f64 / den as f64
    }
}

/// Two-sided sign-flip p-value by listing all 2^n flips of every vote (zeros included).
pub fn brute_force_p_value(votes: &[i8]) -> f64 {
    let n = votes.len();
    let observed: i64 = votes.iter().map(|&v| v as i64).sum::<i64>().abs();
    let mut hits = 0u64;
    for flips in 0u64..(1 << n) {
        let s: i64 = votes
            .iter()
            .enumerate()
            .map(|(i, &v)| if flips >> i & 1 == 1 { -(v as i64) } else { v as i64 })
            .sum();
        if s.abs() >= observed {
            hits += 1;
        }
    }
    hits as f64 / (1u64 << n) as f64
}

/// Holm step-down applied by hand: sort by (p, name), reject while p ≤ α/(m−i).
pub fn holm_oracle(p: &BTreeMap<String, f64>, alpha: f64) -> BTreeMap<String, bool> {
    let mut order: Vec<(&String, f64)> = p.iter().map(|(k, &v)| (k, v)).collect();
    order.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap().then(a.0.cmp(b.0)));
    let m = order.len();
    let mut out: BTreeMap<String, bool> = p.keys().map(|k| (k.clone(), false)).collect();
    for (i, (k, v)) in order.into_iter().enumerate() {
        if v <= alpha / (m - i) as f64 {
            out.insert(k.clone(), true);
        } else {
            break;
        }
    }
    out
}

/// A generated corpus on disk: flat-colour images, some with planted noise patches.
pub struct Corpus {
    pub dir: tempfile::TempDir,
    pub manifest: PathBuf,
    pub clean_ids: Vec<String>,
    pub planted: BTreeMap<String, BinaryMask>,
    pub images: BTreeMap<String, RgbImage>,
}

pub const TASKS: [&str; 3] = ["unconditional", "text2image", "inpainting"];
pub const DOMAINS: [&str; 2] = ["face", "lsun_bedroom"];

/// `n` images of `side`×`side`; `clean` of them (chosen at random) have no artifacts, the rest
/// carry one to three uniform-noise rectangles whose union is written as the ground truth.
/// Every image also gets a two-class label map (top half 1, bottom half 2).
pub fn synthetic_corpus(n: usize, clean: usize, side: usize, seed: u64) -> Corpus {
    let mut r = rng(seed);
    let dir = tempfile::tempdir().unwrap();
    for sub in ["images", "gt", "labels"] {
        std::fs::create_dir_all(dir.path().join(sub)).unwrap();
    }
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, r.gen_range(0..=i));
    }
    let clean_set: Vec<usize> = order[..clean].to_vec();
    let splits = assign_splits(n, seed);
    let mut entries = Vec::new();
    let mut clean_ids = Vec::new();
    let mut planted = BTreeMap::new();
    let mut images = BTreeMap::new();
    for i in 0..n {
        let id = format!("img{i:03}");
        let bg = [r.gen_range(30..220u8), r.gen_range(30..220u8), r.gen_range(30..220u8)];
        let mut img = RgbImage::filled(side, side, bg).unwrap();
        let mut gt = BinaryMask::new(side, side).unwrap();
        if clean_set.contains(&i) {
            clean_ids.push(id.clone());
        } else {
            for _ in 0..r.gen_range(1..=3) {
                let pw = r.gen_range(side / 12..=side / 4);
                let ph = r.gen_range(side / 12..=side / 4);
                let x0 = r.gen_range(0..=side - pw);
                let y0 = r.gen_range(0..=side - ph);
                for y in y0..y0 + ph {
                    for x in x0..x0 + pw {
                        img.put(x, y, [r.gen(), r.gen(), r.gen()]);
                        gt.set(x, y, true);
                    }
                }
            }
        }
        std::fs::write(dir.path().join(format!("images/{id}.png")), encode_image(&img).unwrap()).unwrap();
        std::fs::write(dir.path().join(format!("gt/{id}.png")), encode_mask(&gt).unwrap()).unwrap();
        let labels: Vec<u8> = (0..side * side).map(|k| if k / side < side / 2 { 1 } else { 2 }).collect();
        std::fs::write(
            dir.path().join(format!("labels/{id}.png")),
            encode_gray(side, side, labels).unwrap(),
        )
        .unwrap();
        entries.push(serde_json::json!({
            "image_id": id,
            "image_path": format!("images/{id}.png"),
            "gt_mask_path": format!("gt/{id}.png"),
            "label_map_path": format!("labels/{id}.png"),
            "task": TASKS[i % TASKS.len()],
            "domain": DOMAINS[i % DOMAINS.len()],
            "split": splits[i].to_string(),
        }));
        planted.insert(id.clone(), gt);
        images.insert(id, img);
    }
    let manifest = dir.path().join("manifest.json");
    std::fs::write(&manifest, serde_json::to_vec_pretty(&serde_json::json!({ "entries": entries })).unwrap()).unwrap();
    Corpus {
        dir,
        manifest,
        clean_ids,
        planted,
        images,
    }
}

/// Random votes in {−1, 0, +1} for a few tasks, as `task,vote` CSV.
pub fn votes_csv(path: &Path, per_task: usize, seed: u64) {
    let mut r = rng(seed);
    let mut text = String::from("task,vote\n");
    for (t, task) in TASKS.iter().enumerate() {
        for _ in 0..per_task {
            // Later tasks lean towards the refined image.
            let v: i8 = if r.gen_bool(0.2 + 0.15 * t as f64) { 1 } else { r.gen_range(-1..=1) };
            text.push_str(&format!("{task},{v}\n"));
        }
    }
    std::fs::write(path, text).unwrap();
}

/// Runs the CLI in-process.
pub fn pal(args: &[&str]) -> i32 {
    let mut argv = vec!["pal"];
    argv.extend_from_slice(args);
    pal_cli::run_from(argv)
}

pub fn path_str(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Every file under `root`, keyed by `/`-separated relative path.
pub fn read_tree(root: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_str().unwrap().replace('\\', "/");
                out.insert(rel, std::fs::read(&path).unwrap());
            }
        }
    }
    out
}

/// The run summary with timings removed.
pub fn summary_without_timings(bytes: &[u8]) -> serde_json::Value {
    let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
    if let Some(items) = v.get_mut("items").and_then(|i| i.as_array_mut()) {
        for item in items {
            item.as_object_mut().unwrap().remove("elapsed_ms");
        }
    }
    v
}
