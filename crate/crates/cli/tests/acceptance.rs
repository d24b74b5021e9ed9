//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion and
//! exits non-zero if any fails.

use std::collections::{HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode, Output};
use std::sync::Arc;
use std::time::{Duration, Instant};

use ccwsi_core::consistency::{make_composite, seam_discontinuity, CompositeSpec};
use ccwsi_core::eval::{iou, match_and_score, psnr, rmse, DetectionBox};
use ccwsi_core::histogram::{
    compute_histogram, log_chroma, Anchor, ChromaHistogram, HistogramParams,
};
use ccwsi_core::image::{compute_tissue_mask, save_image, RasterImage, TissueThresholds};
use ccwsi_core::losses::{
    adaptive_weight, combined_objective, hellinger_distance, histogram_loss, LossWeights,
};
use ccwsi_core::pipeline::restain_slide;
use ccwsi_core::rng::SplitMix64;
use ccwsi_core::synth::{noise_image, stained_tissue};
use ccwsi_core::tiling::{plan_tiles, stitch, TileGeometry};
use ccwsi_core::translators::{
    ChromaMatchTranslator, ExternalTranslator, IdentityTranslator, ProtocolViolation,
    TranslateError, TranslationRequest, Translator,
};
use ccwsi_study::{generate_schedule, Method};
use serde_json::{json, Value};

type Outcome = Result<String, String>;
type Check = fn() -> Outcome;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn unit(rng: &mut SplitMix64) -> f64 {
    (rng.next_u64() >> 11) as f64 / (1u64 << 53) as f64
}

fn bin() -> &'static str {
    env!("CARGO_BIN_EXE_ccwsi")
}

fn ccwsi(args: &[&str]) -> Output {
    Command::new(bin())
        .args(args)
        .env("CC_WSI_LOG", "warn")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn write(dir: &Path, name: &str, img: &RasterImage) -> PathBuf {
    let p = dir.join(name);
    save_image(img, &p).unwrap();
    p
}

fn tiling_roundtrip() -> Outcome {
    let started = Instant::now();
    let mut rng = SplitMix64::new(0x7469_6c65);
    for i in 0..100 {
        let w = 33 + rng.next_below(668) as usize;
        let h = 33 + rng.next_below(668) as usize;
        let slide = noise_image(w, h, rng.next_u64());
        let plan = plan_tiles(w, h, TileGeometry::default()).map_err(|e| e.to_string())?;
        let cores = restain_slide(&slide, &plan, &IdentityTranslator, None, 0, 4)
            .map_err(|e| e.to_string())?;
        let cores = plan
            .tiles()
            .zip(cores)
            .map(|(t, r)| r.map(|(core, _)| (t.row, t.col, core)))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|f| f.error)?;
        let out = stitch(cores, &plan).map_err(|e| e.to_string())?;
        ensure!(out == slide, "slide {i} ({w}x{h}) differs after roundtrip");
    }
    let secs = started.elapsed().as_secs_f64();
    ensure!(secs < 60.0, "took {secs:.1} s");
    Ok(format!("100 slides bit-identical in {secs:.1} s"))
}

fn random_histogram(rng: &mut SplitMix64) -> ChromaHistogram {
    let params = HistogramParams::default();
    // sparse and dense supports both occur
    let keep = unit(rng);
    let mut w: Vec<f64> = (0..3 * params.plane_len())
        .map(|_| if unit(rng) < keep { unit(rng) } else { 0.0 })
        .collect();
    let k = rng.next_below(w.len() as u64) as usize;
    w[k] += 1.0;
    ChromaHistogram::from_weights(params, w).unwrap()
}

fn brute_hellinger(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for i in 0..a.len() {
        let d = a[i].sqrt() - b[i].sqrt();
        acc += d * d;
    }
    acc.sqrt() / 2.0
}

fn histogram_loss_bounds() -> Outcome {
    let bound = std::f64::consts::SQRT_2 / 2.0 + 1e-9;
    let mut rng = SplitMix64::new(0x6869_7374);
    let mut max = 0.0f64;
    for i in 0..1000 {
        let (a, b) = (random_histogram(&mut rng), random_histogram(&mut rng));
        let c = histogram_loss(&a, &b).map_err(|e| e.to_string())?;
        let r = histogram_loss(&b, &a).map_err(|e| e.to_string())?;
        ensure!(
            (0.0..=bound).contains(&c),
            "pair {i}: {c} outside [0, sqrt(2)/2]"
        );
        ensure!((c - r).abs() <= 1e-12, "pair {i}: asymmetric {c} vs {r}");
        ensure!(
            histogram_loss(&a, &a).unwrap() == 0.0,
            "pair {i}: nonzero on identical input"
        );
        ensure!(
            (c - brute_hellinger(a.values(), b.values())).abs() < 1e-12,
            "pair {i}: disagrees with brute force"
        );
        max = max.max(c);
    }
    let toy = hellinger_distance(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
    let oracle = brute_hellinger(&[0.5, 0.5], &[1.0, 0.0]);
    ensure!((toy - 0.382_683_4).abs() <= 1e-6, "toy example {toy}");
    ensure!(
        (toy - oracle).abs() <= 1e-6,
        "toy {toy} vs brute force {oracle}"
    );
    ensure!(
        (toy - 0.382_683_432_365_089_84).abs() <= 1e-15,
        "toy {toy} vs frozen oracle"
    );
    Ok(format!("1000 pairs in bounds (max {max:.4}), toy {toy:.7}"))
}

fn adaptive_weight_shape() -> Outcome {
    let w0 = adaptive_weight(0.0).unwrap();
    let w1 = adaptive_weight(1.0).unwrap();
    ensure!(w0 == 0.5, "W(0) = {w0}");
    ensure!((w1 - 0.731_058_6).abs() <= 1e-6, "W(1) = {w1}");
    let grid: Vec<f64> = (0..1000)
        .map(|i| adaptive_weight(i as f64 / 999.0).unwrap())
        .collect();
    ensure!(
        grid.windows(2).all(|p| p[1] > p[0]),
        "not strictly increasing"
    );
    ensure!(
        adaptive_weight(1.0 + 1e-12).is_err() && adaptive_weight(-1e-12).is_err(),
        "accepts out-of-range input"
    );
    Ok(format!(
        "W(0) = {w0}, W(1) = {w1:.7}, strictly increasing over 1000 points"
    ))
}

fn objective_linearity() -> Outcome {
    let mut rng = SplitMix64::new(0x6f62_6a65);
    let mut worst = 0.0f64;
    for i in 0..100 {
        let (gan, feat, det, hist) = (
            10.0 * unit(&mut rng),
            unit(&mut rng),
            5.0 * unit(&mut rng),
            unit(&mut rng),
        );
        let tissue = unit(&mut rng);
        let weights = LossWeights {
            lambda_feat: 20.0 * unit(&mut rng),
        };
        let h = 1e-3;
        let j = |x: f64| combined_objective(gan, feat, det, x, tissue, &weights).unwrap();
        let slope = (j(hist + h) - j(hist - h)) / (2.0 * h);
        let err = (slope - adaptive_weight(tissue).unwrap()).abs();
        ensure!(err <= 1e-9, "configuration {i}: slope off by {err:e}");
        worst = worst.max(err);
    }
    Ok(format!("100 configurations, worst slope error {worst:.1e}"))
}

fn composite_construction() -> Outcome {
    let spec = CompositeSpec::default();
    let center = spec.center_region().unwrap();
    let n = spec.tile_size;
    for seed in 0..20u64 {
        let synth = noise_image(n, n, 2 * seed);
        let truth = noise_image(n, n, 2 * seed + 1);
        let out = make_composite(&synth, &truth, &spec).map_err(|e| e.to_string())?;
        for y in 0..n {
            for x in 0..n {
                let src = if center.contains(x, y) {
                    &synth
                } else {
                    &truth
                };
                ensure!(
                    out.pixel(x, y) == src.pixel(x, y),
                    "pair {seed}: pixel ({x}, {y})"
                );
            }
        }
    }
    let black = RasterImage::filled(n, n, [0; 3]).unwrap();
    let white = RasterImage::filled(n, n, [255; 3]).unwrap();
    let out = make_composite(&black, &white, &spec).unwrap();
    let border = out.pixels().filter(|p| *p == [255; 3]).count();
    let inner = out.pixels().filter(|p| *p == [0; 3]).count();
    ensure!(border == 28672, "border pixels {border}");
    ensure!(inner == 192 * 192, "center pixels {inner}");
    Ok(format!("20 random pairs pixel-exact, border {border} px"))
}

fn seam_discrimination() -> Outcome {
    let (w, h) = (700, 600);
    let plan = plan_tiles(w, h, TileGeometry::default()).unwrap();
    let natural = stained_tissue(w, h, 1, 3, true);
    let slide = stained_tissue(w, h, 1, 3, false);
    let stitched = {
        let cores = restain_slide(&natural, &plan, &IdentityTranslator, None, 0, 2)
            .map_err(|e| e.to_string())?;
        let cores: Vec<_> = plan
            .tiles()
            .zip(cores)
            .map(|(t, r)| (t.row, t.col, r.unwrap().0))
            .collect();
        stitch(cores, &plan).unwrap()
    };
    let calm = seam_discontinuity(&stitched, &plan).unwrap().global_index;
    let stepped = RasterImage::from_fn(w, h, |x, y| {
        let lift = if (x / 192 + y / 192) % 2 == 1 { 20 } else { 0 };
        slide.pixel(x, y).map(|v| v.saturating_sub(20) + lift)
    })
    .unwrap();
    let steps = seam_discontinuity(&stepped, &plan).unwrap().global_index;
    ensure!(calm < 0.5, "natural fixture index {calm}");
    ensure!(
        (15.0..=25.0).contains(&steps),
        "stepped fixture index {steps}"
    );
    Ok(format!("natural {calm:.3}, injected steps {steps:.2}"))
}

fn p95_tissue_deviation(a: &RasterImage, b: &RasterImage, t: TissueThresholds) -> u8 {
    let mut d: Vec<u8> = a
        .pixels()
        .zip(b.pixels())
        .filter(|(p, _)| t.is_tissue(*p))
        .map(|(p, q)| (0..3).map(|c| p[c].abs_diff(q[c])).max().unwrap())
        .collect();
    d.sort_unstable();
    d[(d.len() * 95).div_ceil(100) - 1]
}

fn chroma(tile: &RasterImage, cond: ChromaHistogram) -> RasterImage {
    let req = TranslationRequest {
        tile_id: 0,
        tile: tile.clone(),
        condition: Some(Arc::new(cond)),
        noise_seed: 0,
    };
    ChromaMatchTranslator::default()
        .translate(&req)
        .unwrap()
        .tile
}

fn chroma_translator() -> Outcome {
    let t = TissueThresholds::default();
    let mut worst = 0;
    for seed in 0..12u64 {
        let tile = stained_tissue(256, 256, seed, 3, seed % 2 == 1);
        let mask = compute_tissue_mask(&tile, t.sat_min, t.lum_max);
        let cond = compute_histogram(&tile, HistogramParams::default(), Some(&mask)).unwrap();
        worst = worst.max(p95_tissue_deviation(&tile, &chroma(&tile, cond), t));
    }
    ensure!(worst <= 3, "self-conditioned p95 deviation {worst}");

    let params = HistogramParams::default();
    let width = params.bin_width();
    let mut worst_gap = 0.0f64;
    for (u_bin, v_bin, seed) in [(42, 30, 5u64), (36, 20, 6), (25, 40, 7)] {
        let mut w = vec![0.0; 3 * params.plane_len()];
        w[u_bin * params.bins + v_bin] = 1.0;
        let cond = ChromaHistogram::from_weights(params, w).unwrap();
        let out = chroma(&stained_tissue(256, 256, seed, 3, false), cond);
        let (mut su, mut sv, mut n) = (0.0, 0.0, 0usize);
        for p in out
            .pixels()
            .filter(|p| p.iter().all(|&c| c != 0 && c != 255))
        {
            let (u, v) = log_chroma(p, Anchor::Red, params.epsilon);
            su += u;
            sv += v;
            n += 1;
        }
        ensure!(n > 1000, "only {n} unclamped pixels");
        let gu = (su / n as f64 - params.bin_center(u_bin)).abs();
        let gv = (sv / n as f64 - params.bin_center(v_bin)).abs();
        ensure!(
            gu <= width && gv <= width,
            "target ({u_bin}, {v_bin}): mean off by ({gu:.4}, {gv:.4})"
        );
        worst_gap = worst_gap.max(gu).max(gv);
    }
    Ok(format!(
        "self-conditioned p95 {worst}, targeted mean within {worst_gap:.4} (bin {width:.4})"
    ))
}

fn optimal_tp(preds: &[DetectionBox], gts: &[DetectionBox]) -> usize {
    fn go(i: usize, preds: &[DetectionBox], gts: &[DetectionBox], used: &mut [bool]) -> usize {
        if i == preds.len() {
            return 0;
        }
        let mut best = go(i + 1, preds, gts, used);
        for g in 0..gts.len() {
            if !used[g] && iou(&preds[i], &gts[g]) >= 0.5 {
                used[g] = true;
                best = best.max(1 + go(i + 1, preds, gts, used));
                used[g] = false;
            }
        }
        best
    }
    go(0, preds, gts, &mut vec![false; gts.len()])
}

/// Ground truths in distinct 40 px cells separated by at least 1 px.
fn detection_instance(seed: u64) -> (Vec<DetectionBox>, Vec<DetectionBox>) {
    let mut rng = SplitMix64::new(seed);
    let mut cells: Vec<u64> = (0..36).collect();
    rng.shuffle(&mut cells);
    let n_gt = rng.next_below(7) as usize;
    let n_pred = rng.next_below(7) as usize;
    let gts: Vec<DetectionBox> = cells[..n_gt]
        .iter()
        .map(|&c| {
            let (cx, cy) = ((c % 6) as f64 * 40.0, (c / 6) as f64 * 40.0);
            let w = 8.0 + rng.next_below(30) as f64;
            let h = 8.0 + rng.next_below(30) as f64;
            let x = cx + rng.next_below((39.0 - w) as u64 + 1) as f64;
            let y = cy + rng.next_below((39.0 - h) as u64 + 1) as f64;
            DetectionBox::new(x, y, w, h, 1.0)
        })
        .collect();
    let preds = (0..n_pred)
        .map(|_| {
            let score = rng.next_below(5) as f64 / 4.0;
            if !gts.is_empty() && rng.next_bool() {
                let g = gts[rng.next_below(gts.len() as u64) as usize];
                let mut j = || rng.next_below(9) as f64 - 4.0;
                let (dx, dy, dw, dh) = (j(), j(), j(), j());
                DetectionBox::new(
                    g.x + dx,
                    g.y + dy,
                    (g.w + dw).max(1.0),
                    (g.h + dh).max(1.0),
                    score,
                )
            } else {
                let (x, y) = (rng.next_below(230) as f64, rng.next_below(230) as f64);
                DetectionBox::new(
                    x,
                    y,
                    4.0 + rng.next_below(40) as f64,
                    4.0 + rng.next_below(40) as f64,
                    score,
                )
            }
        })
        .collect();
    (preds, gts)
}

fn detection_metrics() -> Outcome {
    let mut matched = 0;
    for seed in 0..10_000u64 {
        let (p, g) = detection_instance(seed ^ 0x6465_7465);
        let m = match_and_score(&p, &g, 0.5).map_err(|e| e.to_string())?;
        let best = optimal_tp(&p, &g);
        ensure!(
            m.true_positives == best,
            "instance {seed}: greedy {} vs optimal {best}",
            m.true_positives
        );
        matched += best;
    }
    let b = [DetectionBox::new(0.0, 0.0, 5.0, 5.0, 1.0)];
    let prf = |p: &[DetectionBox], g: &[DetectionBox]| {
        let m = match_and_score(p, g, 0.5).unwrap();
        (m.precision, m.recall, m.f1)
    };
    ensure!(
        prf(&[], &[]) == (1.0, 1.0, 1.0),
        "both empty: {:?}",
        prf(&[], &[])
    );
    ensure!(
        prf(&[], &b) == (0.0, 0.0, 0.0),
        "no predictions: {:?}",
        prf(&[], &b)
    );
    ensure!(
        prf(&b, &[]) == (0.0, 0.0, 0.0),
        "no ground truth: {:?}",
        prf(&b, &[])
    );
    Ok(format!(
        "10000 instances exact ({matched} matches), empty conventions hold"
    ))
}

fn echo(fault: &str) -> ExternalTranslator {
    let argv: Vec<String> = [bin(), "echo-translator", "--fault", fault]
        .map(String::from)
        .to_vec();
    ExternalTranslator::spawn(&argv, Duration::from_secs(30)).unwrap()
}

fn external_protocol() -> Outcome {
    let t = echo("none");
    let mut rng = SplitMix64::new(0x6563_686f);
    let mut bytes = 0;
    for id in 0..1000u32 {
        let w = 1 + rng.next_below(96) as usize;
        let h = 1 + rng.next_below(96) as usize;
        let req = TranslationRequest {
            tile_id: id,
            tile: noise_image(w, h, rng.next_u64()),
            condition: None,
            noise_seed: rng.next_u64(),
        };
        let out = t.translate(&req).map_err(|e| format!("tile {id}: {e}"))?;
        ensure!(
            out.tile_id == id && out.tile == req.tile,
            "tile {id} not echoed bit-exactly"
        );
        bytes += req.tile.samples().len();
    }
    drop(t);

    let req = |id| TranslationRequest {
        tile_id: id,
        tile: noise_image(16, 16, 1),
        condition: None,
        noise_seed: 0,
    };
    let magic = echo("bad-magic").translate(&req(4));
    ensure!(
        matches!(
            magic,
            Err(TranslateError::ProtocolViolation(
                ProtocolViolation::BadMagic(_)
            ))
        ),
        "bad magic gave {magic:?}"
    );
    let version = echo("bad-version").translate(&req(4));
    ensure!(
        matches!(
            version,
            Err(TranslateError::ProtocolViolation(
                ProtocolViolation::BadVersion(9)
            ))
        ),
        "bad version gave {version:?}"
    );
    let id = echo("wrong-tile-id").translate(&req(4));
    ensure!(
        matches!(
            id,
            Err(TranslateError::TileIdMismatch {
                expected: Some(4),
                got: 5
            })
        ),
        "wrong tile id gave {id:?}"
    );
    Ok(format!(
        "1000 tiles ({bytes} bytes) echoed; bad magic, bad version, tile_id mismatch distinct"
    ))
}

fn psnr_rmse() -> Outcome {
    let base = RasterImage::from_fn(64, 48, |x, y| {
        [(x * 3) as u8, (y * 5) as u8, ((x + y) % 250) as u8]
    })
    .unwrap();
    let plus = RasterImage::from_fn(64, 48, |x, y| base.pixel(x, y).map(|v| v + 1)).unwrap();
    let p1 = psnr(&base, &plus, 255.0).unwrap().value();
    ensure!((p1 - 48.1308).abs() <= 1e-3, "offset-1 PSNR {p1}");
    ensure!(
        (p1 - 48.130_803_608_679_1).abs() <= 1e-9,
        "offset-1 PSNR {p1} vs frozen oracle"
    );

    let black = RasterImage::filled(64, 48, [0; 3]).unwrap();
    let half = RasterImage::from_fn(64, 48, |x, _| if x < 32 { [0; 3] } else { [255; 3] }).unwrap();
    let p2 = psnr(&black, &half, 255.0).unwrap().value();
    let r2 = rmse(&black, &half).unwrap();
    ensure!((p2 - 3.0103).abs() <= 1e-3, "half-differing PSNR {p2}");
    ensure!((r2 - 180.312).abs() <= 1e-2, "half-differing RMSE {r2}");
    Ok(format!(
        "offset-1 {p1:.4} dB; half-differing {p2:.4} dB, RMSE {r2:.3}"
    ))
}

/// 3 reviewers x 50 items whose marginals equal the reference counts,
/// written as a response log and summarized by `ccwsi study stats`.
fn study_stats_golden() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let img = write(
        dir.path(),
        "x.png",
        &RasterImage::filled(4, 3, [200, 180, 190]).unwrap(),
    );
    let cases: Vec<Value> = (0..25)
        .map(|i| {
            json!({"case_id": format!("case-{i:02}"), "he_image": s(&img),
                        "traditional_sox10": s(&img), "synthetic_sox10": s(&img)})
        })
        .collect();
    let def = dir.path().join("study.json");
    std::fs::write(
        &def,
        json!({"seed": 515, "reviewers": ["p1", "p2", "p3"], "cases": cases}).to_string(),
    )
    .unwrap();
    let out = ccwsi(&["study", "schedule", "--definition", s(&def)]);
    ensure!(
        out.status.success(),
        "schedule: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let schedule: Value = serde_json::from_slice(&out.stdout).unwrap();

    let expand = |counts: &[(Value, usize)]| -> Vec<Value> {
        counts
            .iter()
            .flat_map(|(v, n)| std::iter::repeat_n(v.clone(), *n))
            .collect()
    };
    let pools: HashMap<&str, [Vec<Value>; 3]> = HashMap::from([
        (
            "synthetic",
            [
                expand(&[
                    (json!(1), 6),
                    (json!(2), 14),
                    (json!(3), 32),
                    (json!(4), 23),
                ]),
                expand(&[(json!(3), 5), (json!(4), 70)]),
                expand(&[
                    (json!("traditional"), 19),
                    (json!("synthetic"), 8),
                    (json!("cannot_tell"), 48),
                ]),
            ],
        ),
        (
            "traditional",
            [
                expand(&[
                    (json!(1), 13),
                    (json!(2), 11),
                    (json!(3), 29),
                    (json!(4), 22),
                ]),
                expand(&[(json!(1), 2), (json!(2), 1), (json!(3), 21), (json!(4), 51)]),
                expand(&[
                    (json!("synthetic"), 18),
                    (json!("traditional"), 4),
                    (json!("cannot_tell"), 53),
                ]),
            ],
        ),
    ]);
    let mut used: HashMap<&str, usize> = HashMap::new();
    let mut log = String::new();
    for reviewer in ["p1", "p2", "p3"] {
        for item in schedule.as_array().unwrap() {
            let method = item["method"].as_str().unwrap();
            let k = used
                .entry(if method == "synthetic" {
                    "synthetic"
                } else {
                    "traditional"
                })
                .or_default();
            let [e, q, i] = &pools[method];
            let line = json!({"reviewer_id": reviewer, "position": item["position"], "effectiveness": e[*k],
                              "quality": q[*k], "identification": i[*k], "timestamp": 1_700_000_000 + log.len()});
            log.push_str(&line.to_string());
            log.push('\n');
            *k += 1;
        }
    }
    let log_path = dir.path().join("responses.ndjson");
    std::fs::write(&log_path, log).unwrap();
    let out = ccwsi(&[
        "study",
        "stats",
        "--definition",
        s(&def),
        "--log",
        s(&log_path),
    ]);
    ensure!(
        out.status.success(),
        "stats: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let st: Value = serde_json::from_slice(&out.stdout).unwrap();

    let mean = |m: &str, r: &str| st[m][r]["mean"].as_f64().unwrap();
    let display = |m: &str, r: &str| st[m][r]["display"].as_str().unwrap().to_string();
    for (m, r, want, shown) in [
        ("synthetic", "effectiveness", 2.96, "3.0 (0.9)"),
        ("traditional", "effectiveness", 2.80, "2.8 (1.1)"),
        ("synthetic", "quality", 59.0 / 15.0, "3.9 (0.3)"),
        ("traditional", "quality", 271.0 / 75.0, "3.6 (0.7)"),
    ] {
        ensure!(
            (mean(m, r) - want).abs() < 1e-12,
            "{m} {r} mean {}",
            mean(m, r)
        );
        ensure!(display(m, r) == shown, "{m} {r} shown as {}", display(m, r));
    }
    for (m, r, want) in [
        ("synthetic", "effectiveness", [8, 19, 43, 31]),
        ("traditional", "effectiveness", [17, 15, 39, 29]),
        ("synthetic", "quality", [0, 0, 7, 93]),
        ("traditional", "quality", [3, 1, 28, 68]),
    ] {
        ensure!(
            st[m][r]["percentages"] == json!(want),
            "{m} {r} percentages {}",
            st[m][r]["percentages"]
        );
    }
    let id = &st["identification"];
    for (row, n, pct) in [
        ("incorrect", 37, 25),
        ("traditional_when_synthetic", 19, 13),
        ("synthetic_when_traditional", 18, 12),
        ("correct", 12, 8),
        ("correct_synthetic", 8, 5),
        ("correct_traditional", 4, 3),
        ("cannot_tell", 101, 67),
    ] {
        ensure!(
            id[row]["n"] == n && id[row]["percent"] == pct,
            "{row}: {}",
            id[row]
        );
    }
    Ok("means 2.96/2.80/3.933/3.613 shown 3.0/2.8/3.9/3.6; identification 25%/8%/67%".into())
}

fn schedule_invariants() -> Outcome {
    let cases: Vec<String> = (0..25).map(|i| format!("case-{i:02}")).collect();
    for seed in 0..1000u64 {
        let sched = generate_schedule(&cases, seed).map_err(|e| e.to_string())?;
        ensure!(sched.len() == 50, "seed {seed}: {} items", sched.len());
        for block in [1u8, 2] {
            let in_block: Vec<&str> = sched
                .iter()
                .filter(|i| i.block == block)
                .map(|i| i.case_id.as_str())
                .collect();
            let unique: HashSet<&str> = in_block.iter().copied().collect();
            ensure!(
                in_block.len() == 25 && unique.len() == 25,
                "seed {seed}: block {block} not a permutation"
            );
        }
        let mut seen: HashMap<&str, Vec<(u8, Method)>> = HashMap::new();
        for (pos, item) in sched.iter().enumerate() {
            ensure!(
                item.position == pos,
                "seed {seed}: position {} at {pos}",
                item.position
            );
            seen.entry(item.case_id.as_str())
                .or_default()
                .push((item.block, item.method));
        }
        for (case, m) in &seen {
            ensure!(
                m.len() == 2 && m[0].0 == 1 && m[1].0 == 2,
                "seed {seed}: {case} appears {m:?}"
            );
            ensure!(m[0].1 != m[1].1, "seed {seed}: {case} repeats {}", m[0].1);
        }
        let again = generate_schedule(&cases, seed).unwrap();
        ensure!(
            serde_json::to_vec(&sched).unwrap() == serde_json::to_vec(&again).unwrap(),
            "seed {seed}: regeneration differs"
        );
    }
    Ok(
        "1000 seeds x 25 cases: 50 items, alternating methods, per-block unique, reproducible"
            .into(),
    )
}

fn worker_determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let input = write(dir.path(), "in.png", &stained_tissue(500, 420, 8, 3, true));
    let mut outputs = Vec::new();
    for workers in ["1", "4", "8"] {
        let output = dir.path().join(format!("out{workers}.png"));
        let out = ccwsi(&[
            "restain",
            "--input",
            s(&input),
            "--output",
            s(&output),
            "--translator",
            "chroma",
            "--condition-image",
            s(&input),
            "--seed",
            "77",
            "--workers",
            workers,
        ]);
        ensure!(
            out.status.success(),
            "workers {workers}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        outputs.push(std::fs::read(&output).unwrap());
    }
    ensure!(
        outputs[0] == outputs[1] && outputs[0] == outputs[2],
        "outputs differ across worker counts"
    );
    Ok(format!(
        "chroma restain byte-identical for 1, 4, 8 workers ({} bytes)",
        outputs[0].len()
    ))
}

fn main() -> ExitCode {
    let criteria: [(&str, Check); 13] = [
        ("tiling roundtrip", tiling_roundtrip),
        ("histogram loss", histogram_loss_bounds),
        ("adaptive weight", adaptive_weight_shape),
        ("objective linearity", objective_linearity),
        ("composite construction", composite_construction),
        ("seam discrimination", seam_discrimination),
        ("chroma translator", chroma_translator),
        ("detection metrics", detection_metrics),
        ("external protocol", external_protocol),
        ("psnr/rmse", psnr_rmse),
        ("study statistics", study_stats_golden),
        ("study schedule", schedule_invariants),
        ("worker determinism", worker_determinism),
    ];
    let mut failed = 0;
    for (n, (name, check)) in criteria.iter().enumerate() {
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} [{secs:.1}s]", n + 1),
            Err(detail) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {detail} [{secs:.1}s]", n + 1);
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
