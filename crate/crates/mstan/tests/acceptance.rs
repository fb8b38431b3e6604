//! Acceptance suite: one test per release criterion, each printing a
//! PASS line with the measured numbers (visible with --nocapture).
//! Run with: cargo test --test acceptance -- --test-threads=1 --nocapture

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use mstan::data::{Dataset, PaddedBatch};
use mstan::metrics::{evaluate, threshold_sweep};
use mstan::model::{
    align_weights, apply_alignment, embed, forward, fuse_scales, init_params, multiscale_conv,
    ModelConfig,
};
use mstan::synth::{bayes_reference, generate_dataset, GenConfig};
use mstan::tensor::Tensor;
use mstan::train::{grad_check, predict, preprocess_with_stats, train, TrainConfig};

fn median(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[values.len() / 2]
}

/// Train on a fresh cohort for `gen`, return test-split F1 at 0.5.
fn test_f1(
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    dataset: &Dataset,
) -> f64 {
    let outcome = train(model_config, train_config, dataset).expect("training succeeds");
    let ds = preprocess_with_stats(dataset, &outcome.stats).expect("preprocessing succeeds");
    let (y_hat, labels) = predict(
        model_config,
        &outcome.params,
        &ds,
        &outcome.split.test,
        train_config.batch_size,
    )
    .expect("prediction succeeds");
    evaluate(&y_hat, &labels, 0.5).expect("metrics").f1
}

#[test]
fn criterion_01_gradient_correctness() {
    let start = Instant::now();
    let mut worst = 0.0f64;
    for learnable in [false, true] {
        let config = ModelConfig {
            d: 3,
            d_h: 4,
            scales: vec![1, 2],
            tau_learnable: learnable,
            ..ModelConfig::default()
        };
        let err = grad_check(&config, 42).expect("grad check runs");
        assert!(
            err < 1e-4,
            "FAIL criterion 1: max relative gradient error {err:.3e} (tau_learnable={learnable})"
        );
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 10.0,
        "FAIL criterion 1: gradient check took {elapsed:?}"
    );
    println!(
        "PASS criterion 1: gradient correctness, max relative error {worst:.3e} in {elapsed:?}"
    );
}

/// Random batch with a random-length real prefix per item.
fn random_instance(rng: &mut ChaCha8Rng) -> (PaddedBatch, usize) {
    let b = rng.gen_range(1..=3);
    let l = rng.gen_range(1..=6);
    let d = rng.gen_range(1..=4);
    let d_h = rng.gen_range(1..=5);
    let mut values = vec![0.0; b * l * d];
    let mut timestamps = vec![0.0; b * l];
    let mut seq_mask = vec![false; b * l];
    for bi in 0..b {
        let n = rng.gen_range(1..=l);
        let mut t = 0.0;
        for i in 0..l {
            if i < n {
                t += rng.gen_range(0.2..3.0);
                seq_mask[bi * l + i] = true;
                for j in 0..d {
                    values[(bi * l + i) * d + j] = rng.gen_range(-2.0..2.0);
                }
            }
            timestamps[bi * l + i] = t;
        }
    }
    (
        PaddedBatch {
            values,
            timestamps,
            seq_mask,
            labels: vec![0; b],
            b,
            l,
            d,
        },
        d_h,
    )
}

fn real_len(mask: &[bool], bi: usize, l: usize) -> usize {
    mask[bi * l..(bi + 1) * l].iter().filter(|&&m| m).count()
}

fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor {
    Tensor::from_vec(
        &[rows, cols],
        (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect(),
    )
}

#[test]
fn criterion_02_layer_oracles() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(77);
    for _ in 0..100 {
        let (batch, d_h) = random_instance(&mut rng);
        let (b, l, d) = (batch.b, batch.l, batch.d);
        let w_e = random_tensor(&mut rng, d_h, d);
        let b_e = Tensor::from_vec(
            &[d_h],
            (0..d_h).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        );

        // embed: per real step, h = W_e x + b_e
        let h = embed(&batch, &w_e, &b_e).unwrap();
        for bi in 0..b {
            let n = real_len(&batch.seq_mask, bi, l);
            for i in 0..l {
                for c in 0..d_h {
                    let want = if i < n {
                        let mut acc = b_e.data()[c];
                        for j in 0..d {
                            acc += w_e.at(c, j) * batch.values[(bi * l + i) * d + j];
                        }
                        acc
                    } else {
                        0.0
                    };
                    let got = h[(bi * l + i) * d_h + c];
                    assert!(
                        (got - want).abs() <= 1e-12,
                        "FAIL criterion 2: embed mismatch {got} vs {want}"
                    );
                }
            }
        }

        // apply_alignment: weighted sums of embedded steps
        let sigma = rng.gen_range(0.3..4.0);
        let a = align_weights(&batch.timestamps, &batch.seq_mask, b, l, sigma).unwrap();
        let h_tilde = apply_alignment(&a, &h, &batch.seq_mask, b, l, d_h);
        for bi in 0..b {
            for i in 0..l {
                for c in 0..d_h {
                    let mut want = 0.0;
                    for j in 0..l {
                        want += a[(bi * l + i) * l + j] * h[(bi * l + j) * d_h + c];
                    }
                    let got = h_tilde[(bi * l + i) * d_h + c];
                    assert!(
                        (got - want).abs() <= 1e-12,
                        "FAIL criterion 2: alignment mismatch {got} vs {want}"
                    );
                }
            }
        }

        // multiscale_conv: explicit window sum over in-range real steps
        let s = rng.gen_range(1..=3);
        let kernels: Vec<Tensor> = (0..2 * s + 1)
            .map(|_| random_tensor(&mut rng, d_h, d_h))
            .collect();
        let conv = multiscale_conv(&h_tilde, s, &kernels, &batch.seq_mask, b, l, d_h);
        for bi in 0..b {
            let n = real_len(&batch.seq_mask, bi, l);
            for i in 0..l {
                for c in 0..d_h {
                    let mut want = 0.0;
                    if i < n {
                        for (ki, kernel) in kernels.iter().enumerate() {
                            let off = ki as isize - s as isize;
                            let src = i as isize + off;
                            if src < 0 || src >= n as isize {
                                continue;
                            }
                            for cp in 0..d_h {
                                want += kernel.at(c, cp)
                                    * h_tilde[(bi * l + src as usize) * d_h + cp];
                            }
                        }
                    }
                    let got = conv[(bi * l + i) * d_h + c];
                    assert!(
                        (got - want).abs() <= 1e-12,
                        "FAIL criterion 2: conv mismatch {got} vs {want}"
                    );
                }
            }
        }

        // fuse_scales: softmax-weighted combination
        let n_scales = rng.gen_range(1..=3);
        let h_scales: Vec<Vec<f64>> = (0..n_scales)
            .map(|_| (0..b * l * d_h).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let logits = Tensor::from_vec(
            &[n_scales],
            (0..n_scales).map(|_| rng.gen_range(-1.5..1.5)).collect(),
        );
        let (fused, beta) = fuse_scales(&h_scales, &logits);
        let max = logits.data().iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        let exps: Vec<f64> = logits.data().iter().map(|&v| (v - max).exp()).collect();
        let z: f64 = exps.iter().sum();
        for (got, want) in beta.iter().zip(exps.iter().map(|e| e / z)) {
            assert!(
                (got - want).abs() <= 1e-12,
                "FAIL criterion 2: fusion weights mismatch"
            );
        }
        for idx in 0..b * l * d_h {
            let want: f64 = (0..n_scales)
                .map(|si| exps[si] / z * h_scales[si][idx])
                .sum();
            assert!(
                (fused[idx] - want).abs() <= 1e-12,
                "FAIL criterion 2: fusion mismatch"
            );
        }
    }
    let elapsed = start.elapsed();
    assert!(
        elapsed.as_secs_f64() < 5.0,
        "FAIL criterion 2: oracles took {elapsed:?}"
    );
    println!("PASS criterion 2: layer oracles, 100 instances within 1e-12 in {elapsed:?}");
}

#[test]
fn criterion_03_alignment_invariants() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let config = ModelConfig {
        d: 4,
        d_h: 6,
        scales: vec![1, 3],
        l_max: 16,
        ..ModelConfig::default()
    };
    let params = init_params(&config).unwrap();

    let build = |rng: &mut ChaCha8Rng, shift: f64| {
        let (b, l, d) = (3, 9, 4);
        let mut values = vec![0.0; b * l * d];
        let mut timestamps = vec![0.0; b * l];
        let mut seq_mask = vec![false; b * l];
        let lens = [9usize, 5, 7];
        for bi in 0..b {
            let mut t = shift;
            for i in 0..l {
                if i < lens[bi] {
                    t += rng.gen_range(0.2..5.0);
                    seq_mask[bi * l + i] = true;
                    for j in 0..d {
                        values[(bi * l + i) * d + j] = rng.gen_range(-2.0..2.0);
                    }
                }
                timestamps[bi * l + i] = t;
            }
        }
        PaddedBatch {
            values,
            timestamps,
            seq_mask,
            labels: vec![0; b],
            b,
            l,
            d,
        }
    };

    // row normalization within 1e-9
    let batch = build(&mut rng, 0.0);
    let a = align_weights(&batch.timestamps, &batch.seq_mask, batch.b, batch.l, 1.3).unwrap();
    for bi in 0..batch.b {
        let n = real_len(&batch.seq_mask, bi, batch.l);
        for i in 0..n {
            let row_sum: f64 = a[(bi * batch.l + i) * batch.l..][..batch.l].iter().sum();
            assert!(
                (row_sum - 1.0).abs() <= 1e-9,
                "FAIL criterion 3: alignment row sums to {row_sum}"
            );
        }
    }

    // time-shift invariance within 1e-12
    let mut shifted = batch.clone();
    for t in &mut shifted.timestamps {
        *t += 250.0;
    }
    let (y_base, _) = forward(&config, &params, &batch).unwrap();
    let (y_shift, _) = forward(&config, &params, &shifted).unwrap();
    for (a_val, b_val) in y_base.iter().zip(&y_shift) {
        assert!(
            (a_val - b_val).abs() <= 1e-12,
            "FAIL criterion 3: time shift changed output {a_val} vs {b_val}"
        );
    }

    // padding invariance within 1e-12: each item alone, minimally padded
    for bi in 0..batch.b {
        let n = real_len(&batch.seq_mask, bi, batch.l);
        let solo = PaddedBatch {
            values: batch.values[bi * batch.l * batch.d..][..n * batch.d].to_vec(),
            timestamps: batch.timestamps[bi * batch.l..][..n].to_vec(),
            seq_mask: vec![true; n],
            labels: vec![0],
            b: 1,
            l: n,
            d: batch.d,
        };
        let (y_solo, _) = forward(&config, &params, &solo).unwrap();
        assert!(
            (y_solo[0] - y_base[bi]).abs() <= 1e-12,
            "FAIL criterion 3: padding changed output {} vs {}",
            y_solo[0],
            y_base[bi]
        );
    }

    // huge sigma gives uniform rows within 1e-6
    let a = align_weights(&batch.timestamps, &batch.seq_mask, batch.b, batch.l, 1e8).unwrap();
    for bi in 0..batch.b {
        let n = real_len(&batch.seq_mask, bi, batch.l);
        for i in 0..n {
            for j in 0..n {
                let got = a[(bi * batch.l + i) * batch.l + j];
                assert!(
                    (got - 1.0 / n as f64).abs() <= 1e-6,
                    "FAIL criterion 3: wide-kernel row not uniform ({got})"
                );
            }
        }
    }

    println!("PASS criterion 3: alignment invariants (row sums, time shift, padding, wide-kernel limit)");
}

#[test]
fn criterion_04_learning_beats_threshold_and_tracks_oracle() {
    let gen = GenConfig::default();
    let dataset = generate_dataset(&gen).unwrap();
    let oracle = bayes_reference(&gen, 2000).unwrap();

    let model_config = ModelConfig::default();
    let train_config = TrainConfig::default();
    let start = Instant::now();
    let outcome = train(&model_config, &train_config, &dataset).unwrap();
    let train_time = start.elapsed();

    let ds = preprocess_with_stats(&dataset, &outcome.stats).unwrap();
    let (y_hat, labels) = predict(
        &model_config,
        &outcome.params,
        &ds,
        &outcome.split.test,
        train_config.batch_size,
    )
    .unwrap();
    let f1 = evaluate(&y_hat, &labels, 0.5).unwrap().f1;

    assert!(
        train_time.as_secs_f64() < 300.0,
        "FAIL criterion 4: training took {train_time:?}"
    );
    assert!(f1 >= 0.85, "FAIL criterion 4: test F1 {f1} < 0.85");
    assert!(
        f1 >= oracle.f1 - 0.10,
        "FAIL criterion 4: test F1 {f1} more than 0.10 below oracle {}",
        oracle.f1
    );
    println!(
        "PASS criterion 4: test F1 {f1:.4} (oracle {:.4}) trained in {train_time:?}",
        oracle.f1
    );
}

#[test]
fn criterion_05_ablation_gaps() {
    let mut full = Vec::new();
    let mut single = Vec::new();
    let mut noalign = Vec::new();
    for seed in [1u64, 2, 3] {
        let gen = GenConfig {
            seed,
            ..GenConfig::default()
        };
        let dataset = generate_dataset(&gen).unwrap();
        let train_config = TrainConfig {
            seed,
            ..TrainConfig::default()
        };
        let base = ModelConfig {
            seed,
            ..ModelConfig::default()
        };
        full.push(test_f1(&base, &train_config, &dataset));
        let single_scale = ModelConfig {
            scales: vec![1],
            ..base.clone()
        };
        single.push(test_f1(&single_scale, &train_config, &dataset));
        let no_align = ModelConfig {
            align_identity: true,
            ..base.clone()
        };
        noalign.push(test_f1(&no_align, &train_config, &dataset));
    }
    let (m_full, m_single, m_noalign) =
        (median(full.clone()), median(single.clone()), median(noalign.clone()));
    assert!(
        m_full - m_single >= 0.03,
        "FAIL criterion 5: single-scale gap {:.4} (full {m_full:.4} vs {m_single:.4}; \
         per-seed full {full:?} single {single:?})",
        m_full - m_single
    );
    assert!(
        m_full - m_noalign >= 0.03,
        "FAIL criterion 5: no-alignment gap {:.4} (full {m_full:.4} vs {m_noalign:.4}; \
         per-seed full {full:?} no-align {noalign:?})",
        m_full - m_noalign
    );
    println!(
        "PASS criterion 5: median F1 full {m_full:.4}, single-scale {m_single:.4} \
         (gap {:.4}), no-align {m_noalign:.4} (gap {:.4})",
        m_full - m_single,
        m_full - m_noalign
    );
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_mstan"))
}

fn run_ok(cmd: &mut Command) -> String {
    let out = cmd.output().expect("command runs");
    assert!(
        out.status.success(),
        "command failed: {}\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 output")
}

/// Parse a sweep CSV (comment line, header, rows) into (first column,
/// named column) pairs.
fn read_csv_column(path: &Path, column: &str) -> Vec<(f64, f64)> {
    let text = std::fs::read_to_string(path).expect("csv readable");
    let mut lines = text.lines().filter(|l| !l.starts_with('#'));
    let header: Vec<&str> = lines.next().expect("header").split(',').collect();
    let idx = header
        .iter()
        .position(|&h| h == column)
        .unwrap_or_else(|| panic!("column {column} in {header:?}"));
    lines
        .map(|line| {
            let fields: Vec<&str> = line.split(',').collect();
            (
                fields[0].parse().expect("grid value"),
                fields[idx].parse().expect("metric value"),
            )
        })
        .collect()
}

/// The temperature sweep runs at the full default cohort and budget —
/// the setting the shape claim is about. Reduced cohorts were rejected:
/// with 600 items the test split holds ~27 positives, so recall moves
/// in 0.037 steps and the comparison drowns in granularity noise.
const TAU_SWEEP_SETS: &[&str] = &[];

/// The history-length sweep uses a reduced cohort and budget so its
/// 3-seed grid stays fast; the grid itself is the default under test.
const LMAX_SWEEP_SETS: &[&str] = &["n_items=600", "epochs=6"];

#[test]
fn criterion_06_temperature_sweep_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut per_seed: Vec<Vec<(f64, f64)>> = Vec::new();
    for seed in [1u64, 2, 3] {
        let data = dir.path().join(format!("tau-data-{seed}.jsonl"));
        let mut gen = bin();
        gen.args(["generate", "--seed", &seed.to_string(), "--out"])
            .arg(&data);
        for s in TAU_SWEEP_SETS {
            gen.args(["--set", s]);
        }
        run_ok(&mut gen);

        let csv = dir.path().join(format!("tau-{seed}.csv"));
        let mut sweep = bin();
        sweep
            .args(["sweep-tau", "--seed", &seed.to_string()])
            .arg("--set")
            .arg(format!("data_path={}", data.display()))
            .arg("--out")
            .arg(&csv);
        for s in TAU_SWEEP_SETS {
            sweep.args(["--set", s]);
        }
        run_ok(&mut sweep);
        per_seed.push(read_csv_column(&csv, "recall"));
    }

    let grid: Vec<f64> = per_seed[0].iter().map(|&(t, _)| t).collect();
    assert_eq!(grid.len(), 7, "FAIL criterion 6: expected 7 grid rows");
    let median_recall: Vec<f64> = (0..grid.len())
        .map(|i| median(per_seed.iter().map(|rows| rows[i].1).collect()))
        .collect();
    let at = |tau: f64| {
        let i = grid.iter().position(|&t| t == tau).expect("grid point");
        median_recall[i]
    };

    // entropy of a fixed checkpoint is non-decreasing in temperature;
    // checked before the recall shape so a shape failure still
    // exercises the frozen-sweep contract
    let data = dir.path().join("tau-data-1.jsonl");
    let ckpt = dir.path().join("frozen.json");
    let mut tr = bin();
    tr.args(["train", "--seed", "1"])
        .arg("--set")
        .arg(format!("data_path={}", data.display()))
        .arg("--set")
        .arg(format!(
            "results_path={}",
            dir.path().join("frozen-history.csv").display()
        ))
        .arg("--out")
        .arg(&ckpt);
    for s in TAU_SWEEP_SETS {
        tr.args(["--set", s]);
    }
    run_ok(&mut tr);

    let frozen_csv = dir.path().join("frozen.csv");
    let mut frozen = bin();
    frozen
        .args(["sweep-tau", "--seed", "1", "--frozen"])
        .arg(&ckpt)
        .arg("--set")
        .arg(format!("data_path={}", data.display()))
        .arg("--out")
        .arg(&frozen_csv);
    for s in TAU_SWEEP_SETS {
        frozen.args(["--set", s]);
    }
    run_ok(&mut frozen);
    let entropy = read_csv_column(&frozen_csv, "mean_attention_entropy");
    for pair in entropy.windows(2) {
        assert!(
            pair[1].1 >= pair[0].1 - 1e-12,
            "FAIL criterion 6: entropy not non-decreasing: {entropy:?}"
        );
    }
    println!("criterion 6: frozen-checkpoint attention entropy non-decreasing across the grid");

    assert!(
        at(1.0) >= at(0.1) && at(1.0) >= at(10.0),
        "FAIL criterion 6: recall medians {median_recall:?} on grid {grid:?}"
    );
    println!(
        "PASS criterion 6: median recall at tau=1.0 {:.4} >= {:.4} (tau=0.1) and {:.4} (tau=10); \
         frozen entropy non-decreasing",
        at(1.0),
        at(0.1),
        at(10.0)
    );
}

#[test]
fn criterion_07_history_length_sweep_shape() {
    let dir = tempfile::tempdir().unwrap();
    let mut per_seed: Vec<Vec<(f64, f64)>> = Vec::new();
    for seed in [1u64, 2, 3] {
        let data = dir.path().join(format!("lmax-data-{seed}.jsonl"));
        let mut gen = bin();
        gen.args(["generate", "--seed", &seed.to_string(), "--out"])
            .arg(&data);
        for s in LMAX_SWEEP_SETS {
            gen.args(["--set", s]);
        }
        run_ok(&mut gen);

        let csv = dir.path().join(format!("lmax-{seed}.csv"));
        let mut sweep = bin();
        sweep
            .args(["sweep-lmax", "--seed", &seed.to_string()])
            .arg("--set")
            .arg(format!("data_path={}", data.display()))
            .arg("--out")
            .arg(&csv);
        for s in LMAX_SWEEP_SETS {
            sweep.args(["--set", s]);
        }
        run_ok(&mut sweep);
        per_seed.push(read_csv_column(&csv, "f1"));
    }

    let grid: Vec<f64> = per_seed[0].iter().map(|&(v, _)| v).collect();
    assert_eq!(grid.len(), 7, "FAIL criterion 7: expected 7 grid rows");
    let median_f1: Vec<f64> = (0..grid.len())
        .map(|i| median(per_seed.iter().map(|rows| rows[i].1).collect()))
        .collect();
    let argmax = median_f1
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))
        .map(|(i, _)| i)
        .unwrap();
    assert!(
        argmax != 0 && argmax != grid.len() - 1,
        "FAIL criterion 7: argmax at {} (medians {median_f1:?} on grid {grid:?})",
        grid[argmax]
    );
    let at = |lmax: f64| {
        let i = grid.iter().position(|&v| v == lmax).expect("grid point");
        median_f1[i]
    };
    assert!(
        at(25.0) < at(100.0),
        "FAIL criterion 7: F1 at 25 ({:.4}) not below F1 at 100 ({:.4})",
        at(25.0),
        at(100.0)
    );
    println!(
        "PASS criterion 7: history-length medians {:?} peak at {} (interior), F1(25) {:.4} < F1(100) {:.4}",
        median_f1, grid[argmax], at(25.0), at(100.0)
    );
}

#[test]
fn criterion_08_bit_identical_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let small = [
        "n_items=60",
        "epochs=3",
        "t_max=40",
        "l_max=40",
    ];

    let mut outputs: Vec<(Vec<u8>, Vec<u8>, Vec<u8>)> = Vec::new();
    for round in 0..2 {
        let data = dir.path().join(format!("data-{round}.jsonl"));
        let ckpt = dir.path().join(format!("model-{round}.json"));
        let hist = dir.path().join(format!("history-{round}.csv"));
        let mut gen = bin();
        gen.args(["generate", "--seed", "9", "--out"]).arg(&data);
        for s in &small {
            gen.args(["--set", s]);
        }
        run_ok(&mut gen);
        let mut tr = bin();
        tr.args(["train", "--seed", "9"])
            .arg("--set")
            .arg(format!("data_path={}", data.display()))
            .arg("--set")
            .arg(format!("results_path={}", hist.display()))
            .arg("--out")
            .arg(&ckpt);
        for s in &small {
            tr.args(["--set", s]);
        }
        run_ok(&mut tr);
        outputs.push((
            std::fs::read(&data).unwrap(),
            std::fs::read(&ckpt).unwrap(),
            std::fs::read(&hist).unwrap(),
        ));
    }
    assert!(
        outputs[0].0 == outputs[1].0,
        "FAIL criterion 8: datasets differ between reruns"
    );
    assert!(
        outputs[0].1 == outputs[1].1,
        "FAIL criterion 8: checkpoints differ between reruns"
    );
    assert!(
        outputs[0].2 == outputs[1].2,
        "FAIL criterion 8: history CSVs differ between reruns"
    );
    println!("PASS criterion 8: dataset, checkpoint, and history CSV bit-identical across reruns");
}

#[test]
fn criterion_09_overfit_sanity() {
    let gen = GenConfig {
        n_items: 20,
        ..GenConfig::default()
    };
    let dataset = generate_dataset(&gen).unwrap();
    let train_config = TrainConfig {
        epochs: 200,
        train_frac: 1.0,
        val_frac: 0.0,
        ..TrainConfig::default()
    };
    let outcome = train(&ModelConfig::default(), &train_config, &dataset).unwrap();
    let loss = outcome.history.epochs.last().unwrap().train_loss;
    assert!(
        loss < 0.05,
        "FAIL criterion 9: train loss {loss} after 200 epochs on 20 items"
    );
    println!("PASS criterion 9: overfit train loss {loss:.2e} after 200 epochs on 20 items");
}

#[test]
fn criterion_10_metrics_correctness() {
    // hand-computed confusion: predictions vs labels
    let y_hat = [0.9, 0.8, 0.7, 0.65, 0.6, 0.55, 0.52, 0.51, 0.9, 0.4, 0.3, 0.45, 0.2, 0.1,
        0.15, 0.05, 0.35, 0.25, 0.12, 0.08];
    let y = [1u8, 1, 1, 1, 1, 1, 1, 1, 0, 1, 1, 0, 0, 0, 0, 0, 0, 0, 1, 0];
    let report = evaluate(&y_hat, &y, 0.5).unwrap();
    assert_eq!(
        (report.tp, report.fp, report.tn, report.fn_),
        (8, 1, 8, 3),
        "FAIL criterion 10: confusion counts"
    );
    assert!((report.precision - 8.0 / 9.0).abs() < 1e-15);
    assert!((report.recall - 8.0 / 11.0).abs() < 1e-15);
    assert!((report.accuracy - 16.0 / 20.0).abs() < 1e-15);
    let f1 = 2.0 * (8.0 / 9.0) * (8.0 / 11.0) / (8.0 / 9.0 + 8.0 / 11.0);
    assert!((report.f1 - f1).abs() < 1e-15, "FAIL criterion 10: f1");

    // recall monotone non-increasing over a 99-point threshold grid
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let y_hat: Vec<f64> = (0..500).map(|_| rng.gen_range(0.0..1.0)).collect();
    let y: Vec<u8> = (0..500).map(|_| u8::from(rng.gen_bool(0.4))).collect();
    let grid: Vec<f64> = (1..100).map(|i| i as f64 / 100.0).collect();
    let reports = threshold_sweep(&y_hat, &y, &grid).unwrap();
    assert_eq!(reports.len(), 99);
    for pair in reports.windows(2) {
        assert!(
            pair[1].recall <= pair[0].recall + 1e-15,
            "FAIL criterion 10: recall increased with threshold"
        );
    }
    println!("PASS criterion 10: confusion counts exact, recall monotone over 99 thresholds");
}
