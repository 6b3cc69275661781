//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use saff::encoding::{encode, semantic_affinity, unary_features};
use saff::evaluation::{
    evaluate_dataset, f_measure, pr_at_thresholds, quantize, BETA_SQ, THRESHOLDS,
};
use saff::fusion::{
    balance_samples, fit_adaptive_weights, solve_weighted_least_squares, ConfidenceMap,
    PseudoLabelSet,
};
use saff::superpixel::{aggregate_mean, BoundaryEdge, SuperpixelFeatureTable, SuperpixelLabeling};
use saff::synth::{baseline_scores, generate, BaselineMode, SynthParams, SynthScene};
use saff::tensor_io::FeatureMap;
use saff::{segment, RunConfig, SceneInputs};

type Outcome = Result<String, String>;
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn inputs(s: &SynthScene) -> SceneInputs<'_> {
    SceneInputs {
        image: &s.image,
        semantic: &s.semantic,
        saliency: &s.saliency,
        edge: &s.edge,
    }
}

fn check_row_stochastic(name: &str, m: &DMatrix<f64>) -> Result<(), String> {
    for i in 0..m.nrows() {
        check(m[(i, i)] == 0.0, || {
            format!("{name} diagonal {i} is {}", m[(i, i)])
        })?;
        let sum = m.row(i).sum();
        check((sum - 1.0).abs() <= 1e-9, || {
            format!("{name} row {i} sums to {sum}")
        })?;
    }
    Ok(())
}

fn in_unit(values: impl IntoIterator<Item = f64>) -> bool {
    values.into_iter().all(|v| (0.0..=1.0).contains(&v))
}

fn random_table(
    rng: &mut ChaCha8Rng,
    k: usize,
    d: usize,
) -> (SuperpixelFeatureTable, Vec<BoundaryEdge>) {
    let semantic = DMatrix::from_fn(k, d, |_, _| {
        if rng.random_bool(0.2) {
            0.0
        } else {
            rng.random()
        }
    });
    let saliency = DVector::from_fn(k, |_, _| rng.random());
    let mut edges = Vec::new();
    for a in 0..k {
        for b in a + 1..k {
            if b == a + 1 || rng.random_bool(0.15) {
                edges.push(BoundaryEdge {
                    a,
                    b,
                    weight: rng.random(),
                });
            }
        }
    }
    (SuperpixelFeatureTable { semantic, saliency }, edges)
}

/// Row-stochastic affinities, unit-range features and scores, F(p,p)=p and
/// recall monotonicity over randomized scenes and feature tables.
fn invariants() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5aff);
    let mut cases = 0;

    for _ in 0..120 {
        let params = SynthParams {
            height: rng.random_range(32..=56),
            width: rng.random_range(32..=56),
            channels: rng.random_range(2..=8),
            noise: rng.random_range(0.0..0.5),
            ..Default::default()
        };
        let scene = generate(rng.random(), &params).map_err(|e| e.to_string())?;
        let config = RunConfig {
            k_target: rng.random_range(16..=128),
            balance: rng.random_bool(0.5),
            ..Default::default()
        };
        let out = segment(inputs(&scene), &config).map_err(|e| e.to_string())?;
        let aff = &out.encoded.affinities;
        check_row_stochastic("M_s'", &aff.semantic_norm)?;
        check_row_stochastic("M_a'", &aff.apparent_norm)?;
        check(in_unit(out.encoded.table.iter().copied()), || {
            "feature outside [0, 1]".into()
        })?;
        check(in_unit(out.scores.iter().copied()), || {
            "score outside [0, 1]".into()
        })?;
        check(in_unit(out.confidence.data().iter().copied()), || {
            "confidence outside [0, 1]".into()
        })?;
        let pr =
            pr_at_thresholds(&quantize(&out.confidence), &scene.gt).map_err(|e| e.to_string())?;
        check(pr.windows(2).all(|w| w[1].recall <= w[0].recall), || {
            "recall increased with threshold".into()
        })?;
        cases += 1;
    }

    for _ in 0..100 {
        let k = rng.random_range(2..=40);
        let d = rng.random_range(1..=10);
        let (table, edges) = random_table(&mut rng, k, d);
        let enc = encode(&table, &edges, rng.random_range(0.5..8.0)).map_err(|e| e.to_string())?;
        check_row_stochastic("M_s'", &enc.affinities.semantic_norm)?;
        check_row_stochastic("M_a'", &enc.affinities.apparent_norm)?;
        check(in_unit(enc.table.iter().copied()), || {
            "feature outside [0, 1]".into()
        })?;
        cases += 1;
    }

    for _ in 0..200 {
        let p: f64 = rng.random();
        let f = f_measure(p, p, BETA_SQ);
        check((f - p).abs() <= 1e-12, || format!("F({p}, {p}) = {f}"))?;
        cases += 1;
    }

    let elapsed = start.elapsed();
    check(elapsed < Duration::from_secs(30), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!("{cases} cases in {:.1}s", elapsed.as_secs_f64()))
}

fn design_with_bias(rows: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(
        rows.nrows(),
        5,
        |r, c| if c < 4 { rows[(r, c)] } else { 1.0 },
    )
}

/// `‖Aᵀ W (A x − y)‖∞` with the bias column appended to `A`.
fn normal_residual(rows: &DMatrix<f64>, y: &[f64], weights: &[f64], w: [f64; 4], b: f64) -> f64 {
    let a = design_with_bias(rows);
    let x = DVector::from_vec(vec![w[0], w[1], w[2], w[3], b]);
    let r = &a * x - DVector::from_column_slice(y);
    let wr = DVector::from_fn(r.len(), |i, _| weights[i] * r[i]);
    (a.transpose() * wr).amax()
}

/// Normal-equation optimality, known-model recovery and
/// weighted-vs-replicated balancing equivalence.
fn least_squares() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x1eaf);
    let mut worst_residual: f64 = 0.0;
    let mut worst_recovery: f64 = 0.0;
    let mut worst_balance: f64 = 0.0;

    for _ in 0..100 {
        let n = rng.random_range(5..=80);
        let rows = DMatrix::from_fn(n, 4, |_, _| rng.random::<f64>());
        let y: Vec<f64> = (0..n)
            .map(|_| {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    rng.random()
                }
            })
            .collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..6.0)).collect();
        let (w, b) = solve_weighted_least_squares(&rows, &y, &weights).ok_or("solve failed")?;
        worst_residual = worst_residual.max(normal_residual(&rows, &y, &weights, w, b));
    }

    for _ in 0..100 {
        let n = rng.random_range(8..=80);
        let rows = DMatrix::from_fn(n, 4, |_, _| rng.random::<f64>());
        let truth: [f64; 4] = std::array::from_fn(|_| rng.random_range(-3.0..3.0));
        let bias = rng.random_range(-1.0..1.0);
        let y: Vec<f64> = (0..n)
            .map(|r| (0..4).map(|c| rows[(r, c)] * truth[c]).sum::<f64>() + bias)
            .collect();
        let weights: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..6.0)).collect();
        let (w, b) = solve_weighted_least_squares(&rows, &y, &weights).ok_or("solve failed")?;
        let err = w
            .iter()
            .zip(&truth)
            .map(|(a, t)| (a - t).abs())
            .fold((b - bias).abs(), f64::max);
        worst_recovery = worst_recovery.max(err);
    }

    for _ in 0..100 {
        let minority = rng.random_range(3..=10);
        let ratio = rng.random_range(1..=6);
        let majority = minority * ratio;
        let (nf, nb) = if rng.random_bool(0.5) {
            (minority, majority)
        } else {
            (majority, minority)
        };
        let k = nf + nb;
        let features = DMatrix::from_fn(k, 4, |_, _| rng.random::<f64>());
        let labels = PseudoLabelSet::new((0..nf).collect(), (nf..k).collect());
        let balanced = fit_adaptive_weights(
            &features,
            &balance_samples(&labels).map_err(|e| e.to_string())?,
        );

        // replicate the minority class `ratio` times with unit weights
        let mut order: Vec<usize> = Vec::new();
        let mut y = Vec::new();
        for (i, target, _) in labels.samples() {
            let copies = if (target == 1.0 && nf == minority) || (target == 0.0 && nb == minority) {
                ratio
            } else {
                1
            };
            for _ in 0..copies {
                order.push(i);
                y.push(target);
            }
        }
        let rows = DMatrix::from_fn(order.len(), 4, |r, c| features[(order[r], c)]);
        let (w, b) =
            solve_weighted_least_squares(&rows, &y, &vec![1.0; y.len()]).ok_or("solve failed")?;
        check(!balanced.fallback_used, || "balanced fit fell back".into())?;
        let diff = w
            .iter()
            .zip(&balanced.w)
            .map(|(a, c)| (a - c).abs())
            .fold((b - balanced.bias).abs(), f64::max);
        worst_balance = worst_balance.max(diff);
    }

    check(worst_residual < 1e-8, || {
        format!("normal-equation residual {worst_residual:e}")
    })?;
    check(worst_recovery <= 1e-6, || {
        format!("recovery error {worst_recovery:e}")
    })?;
    check(worst_balance <= 1e-9, || {
        format!("balancing mismatch {worst_balance:e}")
    })?;
    Ok(format!(
        "residual {worst_residual:.1e}, recovery {worst_recovery:.1e}, balancing {worst_balance:.1e}"
    ))
}

/// Exact agreement with brute-force oracles.
fn oracles() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0x0acc);
    for case in 0..50 {
        let pred: Vec<u8> = (0..256).map(|_| rng.random()).collect();
        let mut gt: Vec<bool> = (0..256).map(|_| rng.random_bool(0.3)).collect();
        gt[case] = true;
        let points = pr_at_thresholds(&pred, &gt).map_err(|e| e.to_string())?;
        let positives = gt.iter().filter(|&&g| g).count();
        check(points.len() == THRESHOLDS, || {
            format!("{} thresholds", points.len())
        })?;
        for (t, point) in points.iter().enumerate() {
            let (mut tp, mut fp) = (0usize, 0usize);
            for (&p, &g) in pred.iter().zip(&gt) {
                if p as usize >= t {
                    if g {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            let precision = if tp + fp == 0 {
                1.0
            } else {
                tp as f64 / (tp + fp) as f64
            };
            let recall = tp as f64 / positives as f64;
            check(
                point.precision == precision && point.recall == recall,
                || format!("case {case} threshold {t}: {point:?} vs ({precision}, {recall})"),
            )?;
        }
    }

    for case in 0..50 {
        let (h, w, d) = (16, 16, rng.random_range(1..=6));
        let k = rng.random_range(1..=20u32);
        let mut labels: Vec<u32> = (0..h * w).map(|_| rng.random_range(0..k)).collect();
        labels[..k as usize].copy_from_slice(&(0..k).collect::<Vec<_>>());
        let labeling = SuperpixelLabeling::new(w, h, labels.clone()).map_err(|e| e.to_string())?;
        let map = FeatureMap::new(
            h,
            w,
            d,
            (0..h * w * d)
                .map(|_| rng.random_range(-2.0..2.0))
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        let means = aggregate_mean(&labeling, &map).map_err(|e| e.to_string())?;
        for seg in 0..k as usize {
            for c in 0..d {
                let mut sum = 0.0;
                let mut n = 0;
                for (p, &l) in labels.iter().enumerate() {
                    if l as usize == seg {
                        sum += map.data()[p * d + c];
                        n += 1;
                    }
                }
                let expected = sum / n as f64;
                check(means[(seg, c)] == expected, || {
                    format!(
                        "aggregate case {case} segment {seg}: {} vs {expected}",
                        means[(seg, c)]
                    )
                })?;
            }
        }

        let table = SuperpixelFeatureTable {
            semantic: DMatrix::from_fn(k as usize, d, |_, _| {
                if rng.random_bool(0.2) {
                    0.0
                } else {
                    rng.random()
                }
            }),
            saliency: DVector::zeros(k as usize),
        };
        let affinity = semantic_affinity(&unary_features(&table).histograms);
        for i in 0..k as usize {
            for j in 0..k as usize {
                let norm = |r: usize| {
                    let l1: f64 = (0..d).map(|c| table.semantic[(r, c)].abs()).sum();
                    (0..d)
                        .map(|c| {
                            if l1 > 0.0 {
                                table.semantic[(r, c)] / l1
                            } else {
                                0.0
                            }
                        })
                        .collect::<Vec<_>>()
                };
                let (hi, hj) = (norm(i), norm(j));
                let mut s = 0.0;
                for c in 0..d {
                    s += if hi[c] < hj[c] { hi[c] } else { hj[c] };
                }
                let expected = if s > 1.0 { 1.0 } else { s };
                check(affinity[(i, j)] == expected, || {
                    format!(
                        "affinity case {case} ({i}, {j}): {} vs {expected}",
                        affinity[(i, j)]
                    )
                })?;
            }
        }
    }
    Ok("pr_at_thresholds, aggregate_mean, semantic_affinity exact on 50 instances each".into())
}

fn max_f(scenes: &[SynthScene], maps: &[ConfidenceMap]) -> Result<f64, String> {
    let (curve, _) = evaluate_dataset(maps.iter().zip(scenes.iter().map(|s| s.gt.as_slice())))
        .map_err(|e| e.to_string())?;
    Ok(curve.max_f)
}

fn dataset(index: u64, params: &SynthParams) -> Result<Vec<SynthScene>, String> {
    (0..20)
        .map(|i| generate(index * 1000 + i, params).map_err(|e| e.to_string()))
        .collect()
}

fn saff_maps(scenes: &[SynthScene], config: &RunConfig) -> Result<Vec<ConfidenceMap>, String> {
    scenes
        .iter()
        .map(|s| {
            segment(inputs(s), config)
                .map(|o| o.confidence)
                .map_err(|e| e.to_string())
        })
        .collect()
}

/// SAFF max-F against the better single-cue baseline over 20 datasets.
fn synthetic_ordering() -> Outcome {
    let start = Instant::now();
    let params = SynthParams {
        height: 96,
        width: 96,
        channels: 8,
        noise: 0.25,
        ..Default::default()
    };
    let mut passed = 0;
    let mut worst_margin = f64::INFINITY;
    for index in 0..20 {
        let scenes = dataset(index, &params)?;
        let saff = max_f(&scenes, &saff_maps(&scenes, &RunConfig::default())?)?;
        let sem = max_f(
            &scenes,
            &scenes
                .iter()
                .map(|s| baseline_scores(s, BaselineMode::SemanticOnly))
                .collect::<Vec<_>>(),
        )?;
        let sal = max_f(
            &scenes,
            &scenes
                .iter()
                .map(|s| baseline_scores(s, BaselineMode::SaliencyOnly))
                .collect::<Vec<_>>(),
        )?;
        let margin = saff - sem.max(sal);
        worst_margin = worst_margin.min(margin);
        if margin >= -0.01 {
            passed += 1;
        }
    }
    let elapsed = start.elapsed();
    check(passed >= 18, || {
        format!("only {passed}/20 datasets within 0.01 of the best baseline")
    })?;
    check(elapsed < Duration::from_secs(120), || {
        format!("took {elapsed:?}")
    })?;
    Ok(format!(
        "{passed}/20 datasets, worst margin {worst_margin:+.4}, {:.1}s",
        elapsed.as_secs_f64()
    ))
}

/// Mean max-F with and without balancing on small-foreground scenes.
fn balancing_direction() -> Outcome {
    let params = SynthParams {
        height: 96,
        width: 96,
        channels: 8,
        noise: 0.25,
        fg_fraction: (0.05, 0.16),
    };
    let (mut with, mut without, mut ratio) = (0.0, 0.0, 0.0);
    for index in 0..20 {
        let scenes = dataset(index, &params)?;
        let mut maps = Vec::new();
        for s in &scenes {
            let out = segment(inputs(s), &RunConfig::default()).map_err(|e| e.to_string())?;
            ratio += out.labels.background.len() as f64 / out.labels.foreground.len().max(1) as f64;
            maps.push(out.confidence);
        }
        with += max_f(&scenes, &maps)?;
        let unbalanced = RunConfig {
            balance: false,
            ..Default::default()
        };
        without += max_f(&scenes, &saff_maps(&scenes, &unbalanced)?)?;
    }
    let (with, without, ratio) = (with / 20.0, without / 20.0, ratio / 400.0);
    check((4.0..=7.0).contains(&ratio), || {
        format!("pseudo-label bg:fg ratio {ratio:.2} is not about 5:1")
    })?;
    check(with >= without, || {
        format!("balanced {with:.4} < unbalanced {without:.4}")
    })?;
    Ok(format!(
        "balanced {with:.4} >= unbalanced {without:.4}, bg:fg {ratio:.2}:1"
    ))
}

fn run_cli(args: &[&str]) -> Result<(), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_saff"))
        .args(args)
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || {
        format!(
            "saff {} failed: {}",
            args.join(" "),
            String::from_utf8_lossy(&out.stderr)
        )
    })
}

fn collect_files(
    root: &Path,
    dir: &Path,
    out: &mut BTreeMap<String, Vec<u8>>,
) -> std::io::Result<()> {
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else {
            let rel = path
                .strip_prefix(root)
                .expect("under root")
                .to_string_lossy()
                .into_owned();
            out.insert(rel, fs::read(&path)?);
        }
    }
    Ok(())
}

/// Two complete CLI runs (synth, batch, evaluate) from the same seed.
fn determinism() -> Outcome {
    let mut trees = Vec::new();
    for _ in 0..2 {
        let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
        let root = tmp.path();
        let s = |p: &str| root.join(p).to_string_lossy().into_owned();
        run_cli(&[
            "synth",
            "--seed",
            "7",
            "--count",
            "4",
            "--height",
            "64",
            "--width",
            "64",
            "--out",
            &s("scenes"),
        ])?;
        run_cli(&[
            "batch",
            "--input",
            &s("scenes"),
            "--out",
            &s("pred"),
            "--masks",
            "--dump-intermediates",
        ])?;
        run_cli(&[
            "evaluate",
            "--pred",
            &s("pred"),
            "--gt",
            &s("scenes"),
            "--out",
            &s("pr.csv"),
        ])?;
        let mut files = BTreeMap::new();
        collect_files(root, root, &mut files).map_err(|e| e.to_string())?;
        trees.push(files);
    }
    let (a, b) = (&trees[0], &trees[1]);
    check(a.keys().eq(b.keys()), || {
        "runs produced different file sets".into()
    })?;
    for (name, bytes) in a {
        check(&b[name] == bytes, || format!("{name} differs between runs"))?;
    }
    let maps = a
        .keys()
        .filter(|k| k.starts_with("pred") && k.ends_with(".sft") && !k.contains("intermediates"))
        .count();
    check(maps == 4 && a.contains_key("pr.csv"), || {
        "missing outputs".into()
    })?;
    Ok(format!(
        "{} files byte-identical ({maps} confidence maps, pr.csv)",
        a.len()
    ))
}

fn main() {
    let criteria: [Criterion; 6] = [
        ("invariant suite", invariants),
        ("least-squares optimality", least_squares),
        ("oracle equivalence", oracles),
        ("synthetic ordering", synthetic_ordering),
        ("balancing direction", balancing_direction),
        ("determinism", determinism),
    ];
    let mut failed = 0;
    for (name, run) in criteria {
        match run() {
            Ok(detail) => println!("PASS  {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL  {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed > 0 {
        std::process::exit(1);
    }
}
