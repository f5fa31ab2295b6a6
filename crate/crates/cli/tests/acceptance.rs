//! Acceptance suite. Runs every criterion at its stated size and tolerance, prints one
//! PASS/FAIL line each, and exits non-zero if any fails or overruns its time budget.

mod support;

use std::collections::{BTreeMap, BTreeSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Mutex;
use std::time::{Duration, Instant};

use pal_core::eval::{exact_p_value, monte_carlo_p_value};
use pal_core::mask::connected_components;
use pal_core::refine::crop_side;
use pal_core::{
    dilate, evaluate_miou, holm_bonferroni, permutation_test, plan_crops, refine, BinaryMask, Connectivity,
    Inpainter, PreferenceVotes, RefineOptions, RgbImage,
};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use support::*;

type Outcome = Result<String, String>;
type Criterion = (&'static str, Duration, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn morphology_oracle() -> Outcome {
    let mut r = rng(1);
    let mut components = 0usize;
    for case in 0..1000 {
        let mask = arbitrary_mask(&mut r, 64);
        for (conn, eight) in [(Connectivity::Four, false), (Connectivity::Eight, true)] {
            let got = connected_components(&mask, conn);
            let want = flood_fill_components(&mask, eight);
            check(got.len() == want.len(), || {
                format!("case {case} {conn:?}: {} components, oracle {}", got.len(), want.len())
            })?;
            for (i, (c, w)) in got.iter().zip(&want).enumerate() {
                let mut pixels = c.pixels.clone();
                pixels.sort_by_key(|&(x, y)| (y, x));
                check(c.label as usize == i + 1 && c.area == w.len() && &pixels == w, || {
                    format!("case {case} {conn:?}: component {i} differs")
                })?;
            }
            components += want.len();
        }
        let radius = r.gen_range(0..=5);
        check(dilate(&mask, radius) == brute_dilate(&mask, radius), || {
            format!("case {case}: dilate r={radius} differs from brute force")
        })?;
    }
    Ok(format!("1000 masks, {components} components matched"))
}

fn crop_plan_invariants() -> Outcome {
    let mut r = rng(2);
    let mut crops = 0usize;
    for case in 0..1000 {
        let mask = arbitrary_mask(&mut r, 64);
        let scale = r.gen_range(1.0..=3.0);
        let radius = r.gen_range(0..=5);
        let eight = r.gen_bool(0.5);
        let conn = if eight { Connectivity::Eight } else { Connectivity::Four };
        let plan = plan_crops(&mask, mask.dims(), scale, radius, conn).map_err(|e| e.to_string())?;
        let (w, h) = mask.dims();
        check(plan.is_empty() == mask.is_empty(), || format!("case {case}: zero-crop iff empty violated"))?;
        let dilated_components = flood_fill_components(&brute_dilate(&mask, radius), eight);
        check(plan.len() == dilated_components.len(), || {
            format!("case {case}: {} crops for {} components", plan.len(), dilated_components.len())
        })?;
        for (crop, comp) in plan.crops.iter().zip(&dilated_components) {
            let b = crop.bbox;
            check(b.x0 <= b.x1 && b.y0 <= b.y1 && b.x1 < w && b.y1 < h, || {
                format!("case {case}: crop {b:?} out of {w}x{h}")
            })?;
            let (x0, y0, x1, y1) = pixel_bbox(comp);
            check(b.x0 <= x0 && b.y0 <= y0 && b.x1 >= x1 && b.y1 >= y1, || {
                format!("case {case}: crop {b:?} misses component bbox ({x0},{y0})-({x1},{y1})")
            })?;
            let side = crop_side((x1 - x0 + 1).max(y1 - y0 + 1), scale);
            check(b.width() == side.min(w) && b.height() == side.min(h), || {
                format!("case {case}: crop {b:?} is not the {side}-pixel square clipped to {w}x{h}")
            })?;
        }
        crops += plan.len();
    }
    Ok(format!("1000 plans, {crops} crops"))
}

/// Returns fresh uniform noise of the requested shape on every call.
struct NoiseInpainter(Mutex<ChaCha8Rng>);

impl Inpainter for NoiseInpainter {
    fn inpaint(&self, image: &RgbImage, _: &BinaryMask, _: &str) -> pal_core::Result<RgbImage> {
        let mut r = self.0.lock().unwrap();
        let raw = (0..image.as_raw().len()).map(|_| r.gen()).collect();
        RgbImage::new(image.width(), image.height(), raw)
    }
}

fn pixel_preservation() -> Outcome {
    let mut r = rng(3);
    let noise = NoiseInpainter(Mutex::new(rng(33)));
    let mut checked = 0usize;
    for case in 0..200 {
        let (w, h) = (r.gen_range(1..=64), r.gen_range(1..=64));
        let density = r.gen_range(0.0..0.08);
        let mask = random_bits(&mut r, w, h, density);
        let raw = (0..w * h * 3).map(|_| r.gen()).collect();
        let image = RgbImage::new(w, h, raw).unwrap();
        let options = RefineOptions {
            scale: r.gen_range(1.0..=3.0),
            dilation_radius: r.gen_range(0..=5),
            feather: r.gen_range(0..=4),
            connectivity: if r.gen_bool(0.5) { Connectivity::Eight } else { Connectivity::Four },
            parallel_crops: r.gen_bool(0.5),
            ..Default::default()
        };
        let out = refine(&image, &mask, &noise, &options).map_err(|e| e.to_string())?;
        let plan = plan_crops(&mask, (w, h), options.scale, options.dilation_radius, options.connectivity)
            .map_err(|e| e.to_string())?;
        let union = plan.region_union();
        let oracle_union = brute_dilate(&mask, options.dilation_radius);
        check(union == oracle_union, || format!("case {case}: region union is not the dilated mask"))?;
        for y in 0..h {
            for x in 0..w {
                if !union.get(x, y) {
                    check(out.get(x, y) == image.get(x, y), || format!("case {case}: pixel ({x},{y}) changed"))?;
                    checked += 1;
                }
            }
        }
    }
    Ok(format!("200 cases, {checked} outside pixels bit-identical"))
}

fn miou_oracle() -> Outcome {
    let block = |x0: usize, y0: usize| {
        BinaryMask::from_fn(4, 4, |x, y| (x0..x0 + 2).contains(&x) && (y0..y0 + 2).contains(&y)).unwrap()
    };
    let (pred, gt) = (block(0, 0), block(1, 0));
    let worked = evaluate_miou([("w", &pred, &gt)]).map_err(|e| e.to_string())?;
    check((worked.miou - 11.0 / 21.0).abs() <= 1e-12, || format!("worked example miou {}", worked.miou))?;
    check((worked.iou_artifact - 2.0 / 6.0).abs() <= 1e-12, || "worked example artifact IoU".into())?;
    check((worked.iou_background - 10.0 / 14.0).abs() <= 1e-12, || "worked example background IoU".into())?;

    let mut r = rng(4);
    for case in 0..500 {
        let n = r.gen_range(1..=10);
        let pairs: Vec<(String, BinaryMask, BinaryMask)> = (0..n)
            .map(|i| {
                let (w, h) = (r.gen_range(1..=32), r.gen_range(1..=32));
                let (dp, dg) = (r.gen_range(0.0..0.6), r.gen_range(0.0..0.6));
                (format!("i{i}"), random_bits(&mut r, w, h, dp), random_bits(&mut r, w, h, dg))
            })
            .collect();
        let report = evaluate_miou(pairs.iter().map(|(id, p, g)| (id.as_str(), p, g))).map_err(|e| e.to_string())?;
        let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
        for (_, p, g) in &pairs {
            let c = brute_confusion(p, g);
            tp += c.0;
            fp += c.1;
            fn_ += c.2;
            tn += c.3;
        }
        let a = report.aggregate;
        check((a.tp, a.fp, a.fn_, a.tn) == (tp, fp, fn_, tn), || format!("case {case}: confusion differs"))?;
        let iou_a = ratio_or_one(tp, tp + fp + fn_);
        let iou_b = ratio_or_one(tn, tn + fp + fn_);
        check(report.iou_artifact == iou_a && report.iou_background == iou_b, || {
            format!("case {case}: IoU differs")
        })?;
        check(report.miou == (iou_a + iou_b) / 2.0, || format!("case {case}: miou differs"))?;
    }
    Ok(format!("500 corpora exact; worked example miou = {:.15}", worked.miou))
}

fn permutation_exactness() -> Outcome {
    let votes = |v: Vec<i8>| PreferenceVotes::new("t", v).unwrap();
    let mut r = rng(5);
    let mut worst_mc = 0.0f64;
    for case in 0..200 {
        let n = r.gen_range(1..=10);
        let v: Vec<i8> = (0..n).map(|_| r.gen_range(-1..=1)).collect();
        let pv = votes(v.clone());
        let exact = exact_p_value(&pv).map_err(|e| e.to_string())?;
        let via_test = permutation_test(&pv, 100_000, case).map_err(|e| e.to_string())?;
        let brute = brute_force_p_value(&v);
        check((exact - brute).abs() <= 1e-12 && via_test == exact, || {
            format!("case {case} {v:?}: exact {exact}, brute force {brute}")
        })?;
        let mc = monte_carlo_p_value(&pv, 100_000, case).map_err(|e| e.to_string())?;
        worst_mc = worst_mc.max((mc - exact).abs());
        check((mc - exact).abs() <= 0.02, || format!("case {case} {v:?}: Monte Carlo {mc} vs exact {exact}"))?;
    }
    for n in 1..=25 {
        let p = permutation_test(&votes(vec![0; n]), 10_000, 0).map_err(|e| e.to_string())?;
        check(p == 1.0, || format!("{n} zero votes give p = {p}"))?;
    }
    let eight = permutation_test(&votes(vec![1; 8]), 1_000_000, 0).map_err(|e| e.to_string())?;
    check(eight == 0.0078125, || format!("eight +1 votes give p = {eight}"))?;
    let one = permutation_test(&votes(vec![1]), 1_000_000, 0).map_err(|e| e.to_string())?;
    check(one == 1.0, || format!("[+1] gives p = {one}"))?;
    Ok(format!("200 cases; max |MC - exact| = {worst_mc:.4}"))
}

fn holm() -> Outcome {
    let map = |pairs: &[(&str, f64)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect::<BTreeMap<_, _>>();
    let run = |p: &BTreeMap<String, f64>, a: f64| holm_bonferroni(p, a).map_err(|e| e.to_string());
    let both = run(&map(&[("A", 0.01), ("B", 0.04)]), 0.05)?;
    check(both.values().all(|&b| b), || format!("{{A:0.01, B:0.04}} gave {both:?}"))?;
    let none = run(&map(&[("A", 1.0), ("B", 1.0), ("C", 1.0)]), 0.05)?;
    check(none.values().all(|&b| !b), || format!("all 1.0 gave {none:?}"))?;
    let stop = run(&map(&[("A", 0.03), ("B", 0.04)]), 0.05)?;
    check(stop.values().all(|&b| !b), || format!("{{A:0.03, B:0.04}} gave {stop:?}"))?;

    let mut r = rng(6);
    for case in 0..1000 {
        let m = r.gen_range(1..=12);
        let p: BTreeMap<String, f64> = (0..m)
            .map(|i| {
                let v = if r.gen_bool(0.3) { r.gen_range(1e-6..0.02) } else { r.gen_range(1e-6..=1.0) };
                (format!("task{i}"), v)
            })
            .collect();
        let mut alphas: Vec<f64> = (0..5).map(|_| r.gen_range(0.001..0.999)).collect();
        alphas.sort_by(f64::total_cmp);
        let mut previous: Option<BTreeSet<String>> = None;
        for &a in &alphas {
            let got = run(&p, a)?;
            check(got == holm_oracle(&p, a), || format!("case {case}: alpha {a} differs from hand step-down"))?;
            let rejected: BTreeSet<String> = got.into_iter().filter(|(_, b)| *b).map(|(k, _)| k).collect();
            if let Some(prev) = &previous {
                check(prev.is_subset(&rejected), || format!("case {case}: not monotone at alpha {a}"))?;
            }
            previous = Some(rejected);
        }
    }
    Ok("3 worked examples; 1000 vectors monotone".into())
}

fn read_par(path: &Path) -> BTreeMap<String, f64> {
    std::fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| {
            let v: serde_json::Value = serde_json::from_str(l).unwrap();
            (v["image_id"].as_str().unwrap().to_string(), v["par"].as_f64().unwrap())
        })
        .collect()
}

fn mean(values: impl IntoIterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.into_iter().collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn end_to_end() -> Outcome {
    let corpus = synthetic_corpus(50, 10, 96, 7);
    let root = corpus.dir.path();
    let m = path_str(&corpus.manifest).to_string();
    let dir = |name: &str| root.join(name).to_str().unwrap().to_string();

    check(pal(&["eval", "--manifest", &m, "--out", &dir("eval")]) == 0, || "eval failed".into())?;
    let report: serde_json::Value =
        serde_json::from_slice(&std::fs::read(root.join("eval/eval_report.json")).unwrap()).unwrap();
    let artifact_ious: Vec<f64> = report["per_image"]
        .as_array()
        .unwrap()
        .iter()
        .filter(|p| !corpus.clean_ids.iter().any(|c| c == p["image_id"].as_str().unwrap()))
        .map(|p| {
            let c = |k: &str| p[k].as_u64().unwrap();
            ratio_or_one(c("tp"), c("tp") + c("fp") + c("fn"))
        })
        .collect();
    let mean_iou = mean(artifact_ious.iter().copied());
    let corpus_iou = report["iou_artifact"].as_f64().unwrap();
    check(mean_iou >= 0.5, || format!("mean detector IoU {mean_iou:.4} < 0.5"))?;

    check(pal(&["par", "--manifest", &m, "--out", &dir("before")]) == 0, || "par failed".into())?;
    check(pal(&["refine", "--manifest", &m, "--out", &dir("refine")]) == 0, || "refine failed".into())?;
    let refined_manifest = dir("refine/refined/manifest.json");
    check(pal(&["par", "--manifest", &refined_manifest, "--out", &dir("after")]) == 0, || {
        "par after refine failed".into()
    })?;
    let before = read_par(&root.join("before/par.jsonl"));
    let after = read_par(&root.join("after/par.jsonl"));
    check(before.len() == 50 && after.len() == 50, || "missing PAR records".into())?;
    let (mean_before, mean_after) = (mean(before.values().copied()), mean(after.values().copied()));
    check(mean_after < mean_before, || format!("mean PAR {mean_before:.5} -> {mean_after:.5} did not decrease"))?;

    check(pal(&["rank", "--manifest", &m, "--out", &dir("rank")]) == 0, || "rank failed".into())?;
    let top: BTreeSet<String> = std::fs::read_to_string(root.join("rank/ranked.jsonl"))
        .unwrap()
        .lines()
        .take(10)
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["image_id"].as_str().unwrap().to_string())
        .collect();
    let clean: BTreeSet<String> = corpus.clean_ids.iter().cloned().collect();
    check(top == clean, || format!("top 10 {top:?} != clean {clean:?}"))?;
    Ok(format!(
        "mean IoU {mean_iou:.4} (corpus-level {corpus_iou:.4}); mean PAR {mean_before:.5} -> {mean_after:.5}; top 10 clean"
    ))
}

fn determinism() -> Outcome {
    let corpus = synthetic_corpus(24, 4, 64, 8);
    let root = corpus.dir.path();
    let m = path_str(&corpus.manifest).to_string();
    let votes = root.join("votes.csv");
    votes_csv(&votes, 30, 9);
    let classes = root.join("classes.json");
    std::fs::write(&classes, r#"{"1": "upper", "2": "lower"}"#).unwrap();
    let (votes, classes) = (path_str(&votes).to_string(), path_str(&classes).to_string());
    let commands: Vec<(&str, Vec<&str>)> = vec![
        ("detect", vec!["detect"]),
        ("par", vec!["par"]),
        ("par_gt", vec!["par", "--mask-source", "gt"]),
        ("rank", vec!["rank", "--percentiles", "0,10,50,90,100"]),
        ("select", vec!["select", "--group-by", "task"]),
        ("refine", vec!["refine"]),
        ("refine_naive", vec!["refine", "--naive"]),
        ("eval", vec!["eval", "--votes", &votes, "--permutations", "20000", "--seed", "42"]),
        ("stats", vec!["stats", "--classes", &classes, "--heatmap-size", "64"]),
    ];
    let mut files = 0usize;
    for (name, args) in &commands {
        let mut trees = Vec::new();
        let mut hashes = Vec::new();
        for (run, workers) in [("a", "1"), ("b", "1"), ("c", "8")] {
            let out = root.join(format!("{name}_{run}"));
            let mut argv = args.clone();
            argv.extend(["--manifest", &m, "--parallelism", workers, "--out", path_str(&out)]);
            check(pal(&argv) == 0, || format!("{name} run {run} failed"))?;
            let mut tree = read_tree(&out);
            let summary = summary_without_timings(&tree.remove("run_summary.json").unwrap());
            hashes.push(summary["config_hash"].as_str().unwrap().to_string());
            trees.push((tree, summary));
        }
        check(!trees[0].0.is_empty(), || format!("{name} wrote nothing"))?;
        for (i, run) in [(1, "re-run"), (2, "parallelism 8")] {
            let (ta, sa) = &trees[0];
            let (tb, sb) = &trees[i];
            check(ta.keys().eq(tb.keys()), || format!("{name}: {run} wrote a different file set"))?;
            for (path, bytes) in ta {
                check(tb[path] == *bytes, || format!("{name}: {path} differs on {run}"))?;
            }
            check(sa == sb, || format!("{name}: run summary differs on {run}"))?;
        }
        check(hashes.iter().all(|h| *h == hashes[0]), || format!("{name}: config hash differs"))?;
        files += trees[0].0.len();
    }
    Ok(format!("{} commands, {files} files byte-identical across 3 runs", commands.len()))
}

fn main() {
    let criteria: [Criterion; 8] = [
        ("morphology oracle", Duration::from_secs(30), morphology_oracle),
        ("crop-plan invariants", Duration::from_secs(30), crop_plan_invariants),
        ("pixel preservation", Duration::from_secs(60), pixel_preservation),
        ("mIoU oracle", Duration::from_secs(30), miou_oracle),
        ("permutation-test exactness", Duration::from_secs(120), permutation_exactness),
        ("Holm-Bonferroni", Duration::from_secs(10), holm),
        ("end-to-end desk-scale run", Duration::from_secs(120), end_to_end),
        ("determinism", Duration::from_secs(300), determinism),
    ];
    let mut failed = 0;
    for (name, budget, run) in criteria {
        let start = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|_| Err("panicked".into()));
        let elapsed = start.elapsed();
        let (ok, detail) = match result {
            Ok(d) if elapsed <= budget => (true, d),
            Ok(d) => (false, format!("{d}; over time budget")),
            Err(e) => (false, e),
        };
        failed += usize::from(!ok);
        println!(
            "{} {name} [{:.2}s / {}s] {detail}",
            if ok { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs()
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
