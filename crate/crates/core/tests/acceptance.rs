//! Acceptance suite. Runs every criterion, prints one line each, and exits
//! non-zero if any gating criterion fails.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use rand::Rng;

use recformer::autodiff::{grad_check_report, Tape, Tensor, Var};
use recformer::cluster_eval::{acc, assignment_cost, hungarian, nmi, purity};
use recformer::data::{
    generate_mask, generate_paired_mask, load_dataset, save_dataset, synth_dataset, MaskMatrix, SynthConfig,
};
use recformer::graph::{graph_loss_batch, knn_graph, EmbeddingBuffer};
use recformer::model::{forward, ModelConfig, ModelState, Stage};
use recformer::rng::seeded;
use recformer::training::{
    recon_loss_full_value, recon_loss_masked, recon_loss_masked_value, run_pipeline, total_loss, EpochLoss,
    RunArtifacts, TrainConfig,
};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

fn rand_tensor(rng: &mut recformer::rng::Rng, r: usize, c: usize, scale: f64) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-scale..scale)).collect()).unwrap()
}

fn secs(d: Duration) -> String {
    format!("{:.2}s", d.as_secs_f64())
}

// 1 ------------------------------------------------------------------------

fn gradient_correctness() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(1);
    let (n, m) = (6, 2);
    let mc = ModelConfig {
        d_e: 8,
        heads: 2,
        ..ModelConfig::new(vec![3, 5])
    };
    let model = ModelState::init(&mc, 2).unwrap();
    let views = vec![rand_tensor(&mut rng, n, 3, 1.0), rand_tensor(&mut rng, n, 5, 1.0)];
    let mask = MaskMatrix::new(n, m, vec![1, 1, 1, 0, 0, 1, 1, 1, 1, 0, 1, 1]).unwrap();
    let graphs: Vec<_> = views.iter().map(|x| knn_graph(x, 2).unwrap()).collect();
    let mut buffer = EmbeddingBuffer::new(n, m, 8);
    buffer
        .update(&rand_tensor(&mut rng, n * m, 8, 1.0), &(0..n).collect::<Vec<_>>())
        .unwrap();
    let batch: Vec<usize> = (0..n).collect();
    let f = |t: &mut Tape, p: &[Var]| {
        let out = forward(t, p, &model, &views, Stage::Recovery, Some(&mask))?;
        let r = recon_loss_masked(t, &out.recon, &views, &mask)?;
        let g = graph_loss_batch(t, out.z, &buffer, &graphs, &batch)?;
        total_loss(t, r, Some(g), 1.0)
    };
    let report = grad_check_report(f, model.params(), 1e-5).unwrap();
    let took = start.elapsed();
    let (worst, name) = report
        .per_tensor
        .iter()
        .zip(model.names())
        .fold((0.0, ""), |acc, (&e, n)| if e > acc.0 { (e, n.as_str()) } else { acc });
    // entries with |g| ~ 1e-8 sit at the finite-difference noise floor, so
    // the elementwise figure is informational
    check(
        worst < 1e-4 && took < Duration::from_secs(10),
        format!(
            "max rel err {worst:.2e} ({name}) over {} tensors / {} values; elementwise worst {:.2e}; {}",
            report.per_tensor.len(),
            model.parameter_count(),
            report.max_elementwise,
            secs(took)
        ),
    )
}

// 2 ------------------------------------------------------------------------

fn mask_isolation() -> Outcome {
    let start = Instant::now();
    let mut rng = seeded(2);
    let n = 12;
    let mc = ModelConfig {
        d_e: 8,
        heads: 2,
        mlp_hidden: 16,
        ..ModelConfig::new(vec![3, 4, 5])
    };
    let model = ModelState::init(&mc, 3).unwrap();
    let mut worst_z: f64 = 0.0;
    let mut loss_equal = true;
    for trial in 0..5 {
        let mask = generate_mask(n, 3, 0.4, trial).unwrap();
        let views: Vec<Tensor> = mc.dims.iter().map(|&d| rand_tensor(&mut rng, n, d, 1.0)).collect();
        let mut noisy = views.clone();
        for (v, x) in noisy.iter_mut().enumerate() {
            for i in 0..n {
                if !mask.get(i, v) {
                    for e in x.row_mut(i) {
                        *e += 10.0 * rng.gen_range(-1.0..1.0);
                    }
                }
            }
        }
        let a = model.infer(&views, Stage::Recovery, Some(&mask), n).unwrap();
        let b = model.infer(&noisy, Stage::Recovery, Some(&mask), n).unwrap();
        for (x, y) in a.fused.data().iter().zip(b.fused.data()) {
            worst_z = worst_z.max((x - y).abs());
        }
        let la = recon_loss_masked_value(&a.recon, &views, &mask).unwrap();
        let lb = recon_loss_masked_value(&b.recon, &noisy, &mask).unwrap();
        loss_equal &= la == lb;
    }
    let took = start.elapsed();
    check(
        worst_z < 1e-12 && loss_equal && took < Duration::from_secs(1),
        format!("max |dZ| {worst_z:.1e}, loss bit-identical {loss_equal}, {}", secs(took)),
    )
}

// 3 ------------------------------------------------------------------------

fn loss_identities() -> Outcome {
    let mut rng = seeded(3);
    let mut identical = 0;
    for _ in 0..100 {
        let n = rng.gen_range(1..8);
        let dims: Vec<usize> = (0..rng.gen_range(1..4)).map(|_| rng.gen_range(1..6)).collect();
        let xb: Vec<Tensor> = dims.iter().map(|&d| rand_tensor(&mut rng, n, d, 3.0)).collect();
        let x: Vec<Tensor> = dims.iter().map(|&d| rand_tensor(&mut rng, n, d, 3.0)).collect();
        let full = recon_loss_full_value(&xb, &x).unwrap();
        let masked = recon_loss_masked_value(&xb, &x, &MaskMatrix::ones(n, dims.len())).unwrap();
        identical += (full.to_bits() == masked.to_bits()) as usize;
    }

    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (n, m, d) = (rng.gen_range(3..10), rng.gen_range(1..4), rng.gen_range(1..5));
        let feats: Vec<Tensor> = (0..m).map(|_| rand_tensor(&mut rng, n, 3, 1.0)).collect();
        let graphs: Vec<_> = feats.iter().map(|x| knn_graph(x, 2).unwrap()).collect();
        let all: Vec<usize> = (0..n).collect();
        let mut buffer = EmbeddingBuffer::new(n, m, d);
        buffer.update(&rand_tensor(&mut rng, n * m, d, 1.0), &all).unwrap();
        let z = rand_tensor(&mut rng, n * m, d, 1.0);
        let mut tape = Tape::new();
        let zv = tape.constant(z.clone());
        let g = graph_loss_batch(&mut tape, zv, &buffer, &graphs, &all).unwrap();
        let got = tape.value(g).data()[0];
        let mut direct = 0.0;
        for (v, graph) in graphs.iter().enumerate() {
            for i in 0..n {
                for j in 0..n {
                    if graph.contains(i, j) {
                        let zi = z.row(i * m + v);
                        direct += zi.iter().zip(buffer.get(j, v)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                    }
                }
            }
        }
        direct /= (m * n * n) as f64;
        worst = worst.max((got - direct).abs());
    }
    check(
        identical == 100 && worst < 1e-12,
        format!("{identical}/100 bit-identical, graph loss max diff {worst:.1e}"),
    )
}

// 4 ------------------------------------------------------------------------

fn permutations(k: usize) -> Vec<Vec<usize>> {
    if k == 0 {
        return vec![vec![]];
    }
    let mut out = Vec::new();
    for p in permutations(k - 1) {
        for pos in 0..=p.len() {
            let mut q = p.clone();
            q.insert(pos, k - 1);
            out.push(q);
        }
    }
    out
}

fn brute_acc(pred: &[usize], truth: &[usize], perms: &[Vec<usize>]) -> f64 {
    let best = perms
        .iter()
        .map(|p| pred.iter().zip(truth).filter(|(a, b)| p[**a] == **b).count())
        .max()
        .unwrap();
    best as f64 / pred.len() as f64
}

fn brute_purity(pred: &[usize], truth: &[usize]) -> f64 {
    let mut hits = 0;
    let mut clusters: Vec<usize> = pred.to_vec();
    clusters.sort();
    clusters.dedup();
    for c in clusters {
        let mut counts: HashMap<usize, usize> = HashMap::new();
        for (p, t) in pred.iter().zip(truth) {
            if *p == c {
                *counts.entry(*t).or_default() += 1;
            }
        }
        hits += counts.values().max().unwrap();
    }
    hits as f64 / pred.len() as f64
}

fn direct_nmi(pred: &[usize], truth: &[usize]) -> f64 {
    let n = pred.len() as f64;
    let mut joint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut ca: HashMap<usize, usize> = HashMap::new();
    let mut cb: HashMap<usize, usize> = HashMap::new();
    for (&a, &b) in pred.iter().zip(truth) {
        *joint.entry((a, b)).or_default() += 1;
        *ca.entry(a).or_default() += 1;
        *cb.entry(b).or_default() += 1;
    }
    if joint.len() == ca.len() && joint.len() == cb.len() {
        return 1.0;
    }
    let h = |c: &HashMap<usize, usize>| -c.values().map(|&k| k as f64 / n * (k as f64 / n).ln()).sum::<f64>();
    let (ha, hb) = (h(&ca), h(&cb));
    if ca.len() == 1 || cb.len() == 1 {
        return 0.0;
    }
    let mi: f64 = joint
        .iter()
        .map(|(&(a, b), &k)| {
            let p = k as f64 / n;
            p * (p * n * n / (ca[&a] * cb[&b]) as f64).ln()
        })
        .sum();
    mi / (ha * hb).sqrt()
}

fn metric_oracles() -> Outcome {
    let mut rng = seeded(4);
    let perms: Vec<Vec<Vec<usize>>> = (0..=6).map(permutations).collect();
    let (mut acc_ok, mut pur_ok, mut hung_ok) = (0, 0, 0);
    let mut nmi_worst: f64 = 0.0;
    for _ in 0..200 {
        let n = rng.gen_range(1..=8);
        let k = rng.gen_range(1..=6);
        let pred: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        let truth: Vec<usize> = (0..n).map(|_| rng.gen_range(0..k)).collect();
        acc_ok += (acc(&pred, &truth).unwrap() == brute_acc(&pred, &truth, &perms[k])) as usize;
        pur_ok += (purity(&pred, &truth).unwrap() == brute_purity(&pred, &truth)) as usize;
        nmi_worst = nmi_worst.max((nmi(&pred, &truth).unwrap() - direct_nmi(&pred, &truth)).abs());

        let c = rng.gen_range(1..=6);
        let cost: Vec<Vec<f64>> = (0..c)
            .map(|_| (0..c).map(|_| rng.gen_range(-20..20) as f64).collect())
            .collect();
        let best = perms[c]
            .iter()
            .map(|p| assignment_cost(&cost, p))
            .fold(f64::INFINITY, f64::min);
        hung_ok += (assignment_cost(&cost, &hungarian(&cost).unwrap()) == best) as usize;
    }
    check(
        acc_ok == 200 && pur_ok == 200 && hung_ok == 200 && nmi_worst < 1e-12,
        format!("acc {acc_ok}/200, purity {pur_ok}/200, hungarian {hung_ok}/200 exact; nmi max diff {nmi_worst:.1e}"),
    )
}

// 5 ------------------------------------------------------------------------

fn knn_oracle() -> Outcome {
    let mut rng = seeded(5);
    let mut exact = 0;
    for trial in 0..50 {
        let n = rng.gen_range(2..=64);
        let d = rng.gen_range(1..6);
        let mut x = rand_tensor(&mut rng, n, d, 1.0);
        // duplicate points force distance ties
        if trial % 2 == 0 {
            for i in (1..n).step_by(3) {
                let src = x.row(rng.gen_range(0..i)).to_vec();
                x.row_mut(i).copy_from_slice(&src);
            }
        }
        let k = rng.gen_range(1..=8).min(n - 1);
        let g = knn_graph(&x, k).unwrap();
        let ok = (0..n).all(|i| {
            let mut all: Vec<(f64, usize)> = (0..n)
                .filter(|&j| j != i)
                .map(|j| (x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b) * (a - b)).sum(), j))
                .collect();
            all.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
            let want: Vec<usize> = all[..k].iter().map(|p| p.1).collect();
            g.neighbors(i) == want.as_slice()
        });
        exact += ok as usize;
    }
    check(exact == 50, format!("{exact}/50 instances exact"))
}

// 6, 7 ---------------------------------------------------------------------

fn synthetic(seed: u64) -> recformer::data::MultiViewDataset {
    synth_dataset(&SynthConfig {
        n: 90,
        classes: 3,
        dims: vec![20, 30],
        noise: 1.0,
        seed,
    })
    .unwrap()
}

fn synthetic_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        beta: 1.0,
        k_neighbors: 5,
        e1: 50,
        e2: 50,
        batch_size: 32,
        seed,
        ..Default::default()
    }
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

fn synthetic_runs() -> (Vec<RunArtifacts>, Duration) {
    let start = Instant::now();
    let runs = SEEDS
        .iter()
        .map(|&s| {
            let ds = synthetic(s);
            let mask = generate_paired_mask(90, 2, 0.5, s).unwrap();
            run_pipeline(&ds, &mask, &ModelConfig::new(vec![20, 30]), &synthetic_cfg(s)).unwrap()
        })
        .collect();
    (runs, start.elapsed())
}

fn synthetic_end_to_end(runs: &[RunArtifacts], took: Duration) -> Outcome {
    let scores: Vec<(f64, f64)> = runs
        .iter()
        .map(|r| r.metrics.map(|m| (m.acc, m.nmi)).unwrap())
        .collect();
    let good = scores.iter().filter(|(a, n)| *a >= 0.90 && *n >= 0.80).count();
    let list: Vec<String> = scores.iter().map(|(a, n)| format!("{a:.3}/{n:.3}")).collect();
    check(
        good >= 4 && took < Duration::from_secs(120),
        format!("{good}/5 seeds at ACC>=0.90 & NMI>=0.80 [{}] in {}", list.join(" "), secs(took)),
    )
}

fn loss_descent(runs: &[RunArtifacts]) -> Outcome {
    let mean = |xs: &[EpochLoss]| xs.iter().map(|e| e.total).sum::<f64>() / xs.len() as f64;
    let mut ok = true;
    let mut parts = Vec::new();
    for (run, seed) in runs.iter().zip(SEEDS) {
        for stage in [1u8, 2] {
            let log: Vec<EpochLoss> = run.log.iter().filter(|e| e.stage == stage).cloned().collect();
            let (first, last) = (mean(&log[..5]), mean(&log[log.len() - 5..]));
            ok &= last < first;
            if stage == 1 && seed == 0 {
                parts.push(format!("seed 0 stage 1 {first:.4} -> {last:.4}"));
            }
        }
    }
    check(ok, format!("every seed and stage descends; {}", parts.join("")))
}

/// Same data under the per-view protocol: at m = 2 and 50% no sample keeps
/// both views, so the two halves are never observed together.
fn per_view_protocol_note() -> String {
    let accs: Vec<String> = SEEDS[..2]
        .iter()
        .map(|&s| {
            let mask = generate_mask(90, 2, 0.5, s).unwrap();
            let run = run_pipeline(&synthetic(s), &mask, &ModelConfig::new(vec![20, 30]), &synthetic_cfg(s)).unwrap();
            format!("{:.3}", run.metrics.unwrap().acc)
        })
        .collect();
    format!("per-view 50% protocol (0 complete samples) ACC: {}", accs.join(" "))
}

// 8 ------------------------------------------------------------------------

fn handwritten_dir() -> Option<PathBuf> {
    let candidates = [
        std::env::var_os("RECFORMER_HANDWRITTEN").map(PathBuf::from),
        Some(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../data/handwritten")),
    ];
    candidates.into_iter().flatten().find(|p| p.join("meta.json").exists())
}

fn handwritten_benchmark() -> Outcome {
    let Some(dir) = handwritten_dir() else {
        return Outcome::Skip(
            "Handwritten not supplied (set RECFORMER_HANDWRITTEN or add data/handwritten)".into(),
        );
    };
    let start = Instant::now();
    let ds = match load_dataset(&dir) {
        Ok(ds) => ds,
        Err(e) => return Outcome::Fail(format!("could not load {}: {e}", dir.display())),
    };
    let mut sums = (0.0, 0.0);
    for seed in 0..3u64 {
        let mask = generate_mask(ds.n(), ds.m(), 0.5, seed).unwrap();
        let cfg = TrainConfig {
            seed,
            ..Default::default()
        };
        let run = run_pipeline(&ds, &mask, &ModelConfig::new(ds.dims()), &cfg).unwrap();
        let m = run.metrics.expect("Handwritten has labels");
        sums.0 += m.acc / 3.0;
        sums.1 += m.nmi / 3.0;
    }
    let (a, n) = (100.0 * sums.0, 100.0 * sums.1);
    let took = start.elapsed();
    check(
        (a - 91.74).abs() <= 6.0 && (n - 83.39).abs() <= 6.0 && took <= Duration::from_secs(900),
        format!("mean ACC {a:.2} (target 91.74±6), NMI {n:.2} (target 83.39±6), {}", secs(took)),
    )
}

// 9 ------------------------------------------------------------------------

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    save_dataset(&synthetic(7), &data).unwrap();
    let mask = dir.path().join("mask.csv");
    recformer::data::write_mask(&mask, &generate_paired_mask(90, 2, 0.5, 7).unwrap()).unwrap();
    let train = |out: &str| {
        let status = Command::new(env!("CARGO_BIN_EXE_recformer"))
            .args(["train", "--data"])
            .arg(&data)
            .arg("--mask")
            .arg(&mask)
            .arg("--out")
            .arg(dir.path().join(out))
            .args(["--seed", "7", "--batch-size", "32", "--k-neighbors", "5"])
            .output()
            .unwrap()
            .status;
        assert!(status.success());
    };
    train("a");
    train("b");
    let same = |f: &str| std::fs::read(dir.path().join("a").join(f)).unwrap() == std::fs::read(dir.path().join("b").join(f)).unwrap();
    let (losses, preds) = (same("losses.csv"), same("predictions.csv"));
    check(
        losses && preds,
        format!("losses.csv identical {losses}, predictions.csv identical {preds}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: &str, name: &str, outcome: Outcome| {
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("criterion {id} {name:<24} {tag}  {detail}");
    };
    report("1", "gradient correctness", gradient_correctness());
    report("2", "mask isolation", mask_isolation());
    report("3", "loss identities", loss_identities());
    report("4", "metric oracles", metric_oracles());
    report("5", "knn oracle", knn_oracle());
    let (runs, took) = synthetic_runs();
    report("6", "synthetic end-to-end", synthetic_end_to_end(&runs, took));
    report("7", "loss descent", loss_descent(&runs));
    println!("    note: {}", per_view_protocol_note());
    report("8", "handwritten benchmark", handwritten_benchmark());
    report("9", "determinism", determinism());
    if failed > 0 {
        println!("{failed} criterion(s) failed");
        std::process::exit(1);
    }
}
