mod common;

use std::fs;

use common::*;
use ep2_core::detection::{nms, rasterize};
use ep2_core::formats::{load_heatmap, load_matrix, save_heatmap, save_keypoints, save_matrix, save_raster};
use ep2_core::{op_loss, BinaryHeatmap, DescriptorSet, Keypoint, Raster};
use tempfile::tempdir;

#[test]
fn compress_lra_is_lossless_and_idempotent() {
    let dir = tempdir().unwrap();
    let (input, out, again) = (file(dir.path(), "in.epd"), file(dir.path(), "out.epd"), file(dir.path(), "again.epd"));
    save_matrix(&input, &unit_rows(32, 128, 1)).unwrap();

    let run = ep2(&["compress", "--input", path_str(&input), "--dim", "32", "--method", "lra", "--output", path_str(&out)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.value("gram_gap") <= 1e-8);
    assert_eq!(load_matrix(&out).unwrap().shape(), (32, 32));

    let run = ep2(&["compress", "--input", path_str(&out), "--dim", "32", "--output", path_str(&again)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.value("gram_gap") <= 1e-8);
}

#[test]
fn compress_pca_reports_a_gap() {
    let dir = tempdir().unwrap();
    let (input, out) = (file(dir.path(), "in.epd"), file(dir.path(), "out.epd"));
    save_matrix(&input, &unit_rows(32, 128, 2)).unwrap();
    let run = ep2(&["compress", "--input", path_str(&input), "--dim", "16", "--method", "pca", "--output", path_str(&out)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.value("gram_gap") > 1e-3);
}

#[test]
fn compress_errors() {
    let dir = tempdir().unwrap();
    let (input, out, junk) = (file(dir.path(), "in.epd"), file(dir.path(), "out.epd"), file(dir.path(), "junk.epd"));
    save_matrix(&input, &unit_rows(8, 16, 3)).unwrap();
    fs::write(&junk, b"EPD1\x01").unwrap();

    let run = ep2(&["compress", "--input", path_str(&input), "--dim", "17", "--output", path_str(&out)]);
    assert_eq!(run.code, 3);
    assert!(run.stdout.is_empty() && run.stderr.starts_with("error:"));
    assert_eq!(ep2(&["compress", "--input", path_str(&junk), "--dim", "4", "--output", path_str(&out)]).code, 2);
    let missing = file(dir.path(), "missing.epd");
    assert_eq!(ep2(&["compress", "--input", path_str(&missing), "--dim", "4", "--output", path_str(&out)]).code, 2);
    assert!(!out.exists());
}

#[test]
fn procrustes_recovers_rotation() {
    let dir = tempdir().unwrap();
    let (t, s, o) = (file(dir.path(), "t.epd"), file(dir.path(), "s.epd"), file(dir.path(), "o.epd"));
    save_matrix(&t, &unit_rows(40, 16, 4)).unwrap();
    let target = load_matrix(&t).unwrap();
    save_matrix(&s, &(&target * orthogonal(16, 5))).unwrap();
    let source = load_matrix(&s).unwrap();
    let run = ep2(&["procrustes", "--target", path_str(&t), "--source", path_str(&s), "--output-aligned", path_str(&o)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert!(run.value("op_residual") <= 1e-8);
    assert!((load_matrix(&o).unwrap() - source).amax() < 1e-6);
}

#[test]
fn procrustes_residual_equals_single_view_op_loss() {
    let dir = tempdir().unwrap();
    let (t, s, o) = (file(dir.path(), "t.epd"), file(dir.path(), "s.epd"), file(dir.path(), "o.epd"));
    save_matrix(&t, &gaussian(24, 12, 6)).unwrap();
    save_matrix(&s, &unit_rows(24, 12, 7)).unwrap();
    let (target, source) = (load_matrix(&t).unwrap(), load_matrix(&s).unwrap());
    let run = ep2(&["procrustes", "--target", path_str(&t), "--source", path_str(&s), "--output-aligned", path_str(&o)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let (want, _) = op_loss(&target, &[DescriptorSet::from_unit_rows(source).unwrap()]).unwrap();
    assert!((run.value("op_residual") - want).abs() <= 1e-10);
}

#[test]
fn procrustes_shape_mismatch() {
    let dir = tempdir().unwrap();
    let (t, s, o) = (file(dir.path(), "t.epd"), file(dir.path(), "s.epd"), file(dir.path(), "o.epd"));
    save_matrix(&t, &unit_rows(10, 8, 8)).unwrap();
    save_matrix(&s, &unit_rows(10, 6, 9)).unwrap();
    let run = ep2(&["procrustes", "--target", path_str(&t), "--source", path_str(&s), "--output-aligned", path_str(&o)]);
    assert_eq!(run.code, 4);
}

const SHORT: [&str; 4] = ["--steps", "40", "--c-desc", "8"];

#[test]
fn distill_demo_report_shape_and_sim_toggle() {
    let dir = tempdir().unwrap();
    let report = file(dir.path(), "r.csv");
    let mut args = vec!["distill-demo", "--report", path_str(&report)];
    args.extend(SHORT);
    let run = ep2(&args);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let text = fs::read_to_string(&report).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "step,l_op,l_sim,total,gram_gap,mean_view_cosine");
    assert_eq!(lines.len(), 40 + 1);
    let last_gap: f64 = lines[40].split(',').nth(4).unwrap().parse().unwrap();
    assert_eq!(run.value("gram_gap"), last_gap);

    args.push("--no-sim-loss");
    assert_eq!(ep2(&args).code, 0);
    let text = fs::read_to_string(&report).unwrap();
    assert!(text.lines().skip(1).all(|l| l.split(',').nth(2) == Some("0")));
}

#[test]
fn distill_demo_seed_precedence() {
    let dir = tempdir().unwrap();
    let read = |name: &str, args: &[&str], env: &[(&str, &str)]| {
        let report = file(dir.path(), name);
        let mut all = vec!["distill-demo", "--report", path_str(&report)];
        all.extend(SHORT);
        all.extend(args);
        assert_eq!(ep2_env(&all, env).code, 0);
        fs::read(&report).unwrap()
    };
    let default = read("a.csv", &[], &[]);
    let zero = read("b.csv", &["--seed", "0"], &[]);
    let env7 = read("c.csv", &[], &[("EP2_SEED", "7")]);
    let flag7 = read("d.csv", &["--seed", "7"], &[]);
    let flag_wins = read("e.csv", &["--seed", "0"], &[("EP2_SEED", "7")]);
    assert_eq!(default, zero);
    assert_eq!(env7, flag7);
    assert_ne!(default, env7);
    assert_eq!(flag_wins, zero);
}

#[test]
fn distill_demo_invalid_config() {
    let dir = tempdir().unwrap();
    let report = file(dir.path(), "r.csv");
    let run = ep2(&["distill-demo", "--report", path_str(&report), "--c-desc", "1"]);
    assert_eq!(run.code, 3);
    let run = ep2(&["distill-demo", "--report", path_str(&report), "--w-op=-1"]);
    assert_eq!(run.code, 3);
}

fn kp_file(dir: &std::path::Path, name: &str, kps: &[Keypoint]) -> std::path::PathBuf {
    let p = file(dir, name);
    save_keypoints(&p, kps).unwrap();
    p
}

fn random_kps(n: usize, w: f64, h: f64, seed: u64) -> Vec<Keypoint> {
    let v = uniform(3 * n, 0.0, 1.0, seed);
    v.chunks(3).map(|c| Keypoint::new(c[0] * (w - 1.0), c[1] * (h - 1.0), c[2])).collect()
}

#[test]
fn cache_with_empty_flip_equals_nms_of_primary() {
    let dir = tempdir().unwrap();
    let kps = random_kps(150, 64.0, 48.0, 10);
    let a = kp_file(dir.path(), "a.csv", &kps);
    let b = kp_file(dir.path(), "b.csv", &[]);
    let out = file(dir.path(), "h.epb");
    let run = ep2(&["cache", "--kps", path_str(&a), "--kps-flipped", path_str(&b), "--width", "64", "--height", "48", "--out-heatmap", path_str(&out)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let want = nms(&kps, 2.0);
    assert_eq!(run.value("count") as usize, want.len());
    assert_eq!(load_heatmap(&out).unwrap(), rasterize(&want, 64, 48).unwrap());
}

#[test]
fn cache_duplicate_encoding_keeps_primary_count() {
    let dir = tempdir().unwrap();
    let primary = nms(&random_kps(120, 80.0, 60.0, 11), 2.0);
    let mirrored: Vec<Keypoint> = primary.iter().map(|k| Keypoint::new(79.0 - k.x, k.y, k.score)).collect();
    let a = kp_file(dir.path(), "a.csv", &primary);
    let b = kp_file(dir.path(), "b.csv", &mirrored);
    let out = file(dir.path(), "h.epb");
    let run = ep2(&["cache", "--kps", path_str(&a), "--kps-flipped", path_str(&b), "--width", "80", "--height", "60", "--out-heatmap", path_str(&out)]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    assert_eq!(run.value("count") as usize, primary.len());
}

#[test]
fn cache_heatmap_sum_equals_count() {
    let dir = tempdir().unwrap();
    for seed in 0..5 {
        let a = kp_file(dir.path(), "a.csv", &random_kps(300, 50.0, 40.0, 20 + seed));
        let b = kp_file(dir.path(), "b.csv", &random_kps(300, 50.0, 40.0, 40 + seed));
        let out = file(dir.path(), "h.epb");
        let run = ep2(&["cache", "--kps", path_str(&a), "--kps-flipped", path_str(&b), "--width", "50", "--height", "40", "--radius", "1.5", "--out-heatmap", path_str(&out)]);
        assert_eq!(run.code, 0, "{}", run.stderr);
        assert_eq!(load_heatmap(&out).unwrap().count(), run.value("count") as usize);
    }
}

#[test]
fn cache_errors() {
    let dir = tempdir().unwrap();
    let a = kp_file(dir.path(), "a.csv", &[Keypoint::new(10.0, 5.0, 1.0), Keypoint::new(64.0, 5.0, 1.0)]);
    let b = kp_file(dir.path(), "b.csv", &[]);
    let bad = file(dir.path(), "bad.csv");
    fs::write(&bad, "x,y,score\n1,2\n").unwrap();
    let out = file(dir.path(), "h.epb");
    let args = |p: &std::path::Path| {
        ep2(&["cache", "--kps", path_str(p), "--kps-flipped", path_str(&b), "--width", "64", "--height", "48", "--out-heatmap", path_str(&out)])
    };
    assert_eq!(args(&a).code, 6);
    assert_eq!(args(&bad).code, 2);
}

fn loss_files(dir: &std::path::Path, logits: &Raster, target: &BinaryHeatmap) -> (std::path::PathBuf, std::path::PathBuf) {
    let (l, t) = (file(dir, "l.epf"), file(dir, "t.epb"));
    save_raster(&l, logits).unwrap();
    save_heatmap(&t, target).unwrap();
    (l, t)
}

#[test]
fn detect_loss_zero_logits_is_log_26() {
    let dir = tempdir().unwrap();
    for (h, w) in [(5, 5), (9, 13), (32, 24)] {
        let (l, t) = loss_files(dir.path(), &Raster::filled(h, w, 0.0).unwrap(), &BinaryHeatmap::zeros(h, w).unwrap());
        for imp in ["naive", "fast"] {
            let run = ep2(&["detect-loss", "--logits", path_str(&l), "--target", path_str(&t), "--impl", imp]);
            assert_eq!(run.code, 0, "{}", run.stderr);
            assert_eq!(run.value("loss"), 26f64.ln());
        }
    }
}

#[test]
fn detect_loss_both_agree() {
    let dir = tempdir().unwrap();
    for seed in 0..5 {
        let (h, w) = (20 + seed as usize, 31);
        let logits = Raster::new(h, w, uniform(h * w, -6.0, 6.0, 50 + seed)).unwrap();
        let bits = uniform(h * w, 0.0, 1.0, 60 + seed).into_iter().map(|u| u8::from(u < 0.1)).collect();
        let (l, t) = loss_files(dir.path(), &logits, &BinaryHeatmap::new(h, w, bits).unwrap());
        let run = ep2(&["detect-loss", "--logits", path_str(&l), "--target", path_str(&t), "--kernel", "3"]);
        assert_eq!(run.code, 0, "{}", run.stderr);
        assert!(run.value("abs_diff") < 1e-6);
        assert!((run.value("loss") - run.value("loss_fast")).abs() < 1e-6);
    }
}

#[test]
fn detect_loss_errors() {
    let dir = tempdir().unwrap();
    let mut vals = vec![0.0; 64];
    vals[10] = 100.0;
    let (l, t) = loss_files(dir.path(), &Raster::new(8, 8, vals).unwrap(), &BinaryHeatmap::zeros(8, 8).unwrap());
    let run = |extra: &[&str]| {
        let mut a = vec!["detect-loss", "--logits", path_str(&l), "--target", path_str(&t)];
        a.extend(extra);
        ep2(&a)
    };
    assert_eq!(run(&["--impl", "fast"]).code, 7);
    assert_eq!(run(&["--impl", "naive"]).code, 0);
    assert_eq!(run(&["--kernel", "4"]).code, 3);
    assert_eq!(run(&["--kernel", "9"]).code, 3);

    let other = file(dir.path(), "other.epb");
    save_heatmap(&other, &BinaryHeatmap::zeros(8, 9).unwrap()).unwrap();
    assert_eq!(ep2(&["detect-loss", "--logits", path_str(&l), "--target", path_str(&other)]).code, 4);
}

fn read_matches(path: &std::path::Path) -> Vec<(usize, usize, f64)> {
    let text = fs::read_to_string(path).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("i,j,similarity"));
    lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            (f[0].parse().unwrap(), f[1].parse().unwrap(), f[2].parse().unwrap())
        })
        .collect()
}

#[test]
fn match_self_and_rotated_copies() {
    let dir = tempdir().unwrap();
    let d = unit_rows(30, 16, 70);
    let q = orthogonal(16, 71);
    let (a, b, c, out) = (file(dir.path(), "a.epd"), file(dir.path(), "b.epd"), file(dir.path(), "c.epd"), file(dir.path(), "m.csv"));
    save_matrix(&a, &d).unwrap();
    save_matrix(&b, &(&d * &q)).unwrap();
    save_matrix(&c, &(&d * near_identity_rotation(16, 0.05, 72))).unwrap();

    // itself, a rotated copy against itself, and a slightly rotated copy
    for (x, y) in [(&a, &a), (&b, &b), (&a, &c)] {
        let run = ep2(&["match", "--a", path_str(x), "--b", path_str(y), "--out", path_str(&out)]);
        assert_eq!(run.code, 0, "{}", run.stderr);
        let m = read_matches(&out);
        assert_eq!(m.len(), 30);
        assert!(m.iter().all(|&(i, j, _)| i == j));
        assert!(m.windows(2).all(|w| w[0].2 >= w[1].2));
        if x == y {
            assert!(m.iter().all(|&(_, _, s)| (s - 1.0).abs() < 1e-6));
        }
    }
}

#[test]
fn match_equals_brute_force() {
    let dir = tempdir().unwrap();
    let (a, b, out) = (file(dir.path(), "a.epd"), file(dir.path(), "b.epd"), file(dir.path(), "m.csv"));
    for seed in 0..5 {
        // unnormalized on disk; the command normalizes on load
        save_matrix(&a, &gaussian(40, 6, 80 + seed)).unwrap();
        save_matrix(&b, &gaussian(35, 6, 90 + seed)).unwrap();
        let (da, db) = (load_matrix(&a).unwrap(), load_matrix(&b).unwrap());
        assert_eq!(ep2(&["match", "--a", path_str(&a), "--b", path_str(&b), "--out", path_str(&out)]).code, 0);

        let (na, nb) = (DescriptorSet::new(da).unwrap(), DescriptorSet::new(db).unwrap());
        let sim = na.matrix() * nb.matrix().transpose();
        let argmax = |v: Vec<f64>| (0..v.len()).fold(0, |best, k| if v[k] > v[best] { k } else { best });
        let mut want = Vec::new();
        for i in 0..sim.nrows() {
            let j = argmax(sim.row(i).iter().copied().collect());
            if argmax(sim.column(j).iter().copied().collect()) == i {
                want.push((i, j, sim[(i, j)]));
            }
        }
        want.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)));
        let got = read_matches(&out);
        assert_eq!(got.len(), want.len());
        for (g, w) in got.iter().zip(&want) {
            assert_eq!((g.0, g.1), (w.0, w.1));
            assert!((g.2 - w.2).abs() < 1e-12);
        }
    }
}

#[test]
fn match_dim_mismatch() {
    let dir = tempdir().unwrap();
    let (a, b, out) = (file(dir.path(), "a.epd"), file(dir.path(), "b.epd"), file(dir.path(), "m.csv"));
    save_matrix(&a, &unit_rows(5, 4, 1)).unwrap();
    save_matrix(&b, &unit_rows(5, 3, 2)).unwrap();
    assert_eq!(ep2(&["match", "--a", path_str(&a), "--b", path_str(&b), "--out", path_str(&out)]).code, 4);
}

#[test]
fn arch_totals_and_errors() {
    let run = ep2(&["arch", "--config", "T", "--dim", "64"]);
    assert_eq!(run.code, 3);

    let run = ep2(&["arch", "--config", "S", "--dim", "64"]);
    assert_eq!(run.code, 0, "{}", run.stderr);
    let params = run.value("params");
    assert!((params / 46_000.0 - 1.0).abs() <= 0.3, "params {params}");
    assert!(run.stdout.lines().count() > 10);

    let big = ep2(&["arch", "--config", "S", "--dim", "64", "--height", "960", "--width", "1280"]);
    assert_eq!(big.value("flops"), 4.0 * run.value("flops"));
    assert_eq!(big.value("params"), params);
    assert_eq!(big.value("rf"), run.value("rf"));

    let csv = ep2(&["arch", "--config", "E", "--dim", "48", "--format", "csv"]);
    assert_eq!(csv.code, 0);
    assert!(csv.stdout.starts_with("name,kind,channels,height,width,params,flops\n"));
    assert_eq!(ep2(&["arch", "--config", "X", "--dim", "32"]).code, 3);
    assert_eq!(ep2(&["arch", "--config", "S", "--dim", "32", "--height", "0"]).code, 3);
}

#[test]
fn inputs_are_not_modified() {
    let dir = tempdir().unwrap();
    let (a, b, o) = (file(dir.path(), "a.epd"), file(dir.path(), "b.epd"), file(dir.path(), "o.epd"));
    save_matrix(&a, &gaussian(12, 8, 100)).unwrap();
    save_matrix(&b, &gaussian(12, 8, 101)).unwrap();
    let before = (fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_eq!(ep2(&["compress", "--input", path_str(&a), "--dim", "4", "--output", path_str(&o)]).code, 0);
    assert_eq!(ep2(&["procrustes", "--target", path_str(&a), "--source", path_str(&b), "--output-aligned", path_str(&o)]).code, 0);
    assert_eq!(ep2(&["match", "--a", path_str(&a), "--b", path_str(&b), "--out", path_str(&o)]).code, 0);
    assert_eq!((fs::read(&a).unwrap(), fs::read(&b).unwrap()), before);
}
