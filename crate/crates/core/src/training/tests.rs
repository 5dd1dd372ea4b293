use rand::Rng;

use super::*;
use crate::autodiff::{grad_check, Tape, Tensor};
use crate::data::{generate_mask, normalize, synth_dataset, zero_fill, MaskMatrix, MultiViewDataset, SynthConfig};
use crate::error::Error;
use crate::graph::{graph_loss_batch, knn_graph, EmbeddingBuffer};
use crate::model::{ModelConfig, ModelState};
use crate::rng::seeded;

fn rand_tensor(rng: &mut crate::rng::Rng, r: usize, c: usize) -> Tensor {
    Tensor::new(vec![r, c], (0..r * c).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn direct_recon(x_bar: &[Tensor], x: &[Tensor], w: &MaskMatrix) -> f64 {
    let (m, n) = (x.len(), x[0].rows());
    let mut total = 0.0;
    for v in 0..m {
        let d = x[v].last_dim() as f64;
        for i in 0..n {
            let sq: f64 = x_bar[v].row(i).iter().zip(x[v].row(i)).map(|(a, b)| (a - b).powi(2)).sum();
            total += sq / d * w.weight(i, v);
        }
    }
    total / (m * n) as f64
}

#[test]
fn recon_loss_examples() {
    let xb = [Tensor::from_rows(&[[1.0, 2.0]])];
    let x = [Tensor::from_rows(&[[0.0, 0.0]])];
    assert_eq!(recon_loss_masked_value(&xb, &x, &MaskMatrix::ones(1, 1)).unwrap(), 2.5);
    assert_eq!(recon_loss_masked_value(&x, &x, &MaskMatrix::ones(1, 1)).unwrap(), 0.0);
    assert_eq!(recon_loss_full_value(&xb, &xb).unwrap(), 0.0);

    let mut rng = seeded(1);
    for _ in 0..20 {
        let x = [rand_tensor(&mut rng, 3, 2), rand_tensor(&mut rng, 3, 4)];
        let xb = [rand_tensor(&mut rng, 3, 2), rand_tensor(&mut rng, 3, 4)];
        let w = MaskMatrix::new(3, 2, vec![1, 0, 1, 1, 0, 1]).unwrap();
        let got = recon_loss_masked_value(&xb, &x, &w).unwrap();
        assert!((got - direct_recon(&xb, &x, &w)).abs() < 1e-14);
        let full = recon_loss_full_value(&xb, &x).unwrap();
        assert!((full - direct_recon(&xb, &x, &MaskMatrix::ones(3, 2))).abs() < 1e-14);
        assert_eq!(full, recon_loss_masked_value(&xb, &x, &MaskMatrix::ones(3, 2)).unwrap());

        // mask kill: rewrite reconstructions wherever W = 0
        let mut moved = xb.clone();
        for e in moved[1].row_mut(0) {
            *e += 100.0;
        }
        for e in moved[0].row_mut(2) {
            *e -= 7.0;
        }
        assert_eq!(recon_loss_masked_value(&moved, &x, &w).unwrap(), got);
    }
    assert!(matches!(
        recon_loss_full_value(&xb, &[Tensor::zeros(&[1, 3])]),
        Err(Error::Shape { .. })
    ));
}

#[test]
fn total_loss_composition() {
    assert_eq!(total_loss_value(2.5, Some(1.0), 0.5), 3.0);
    assert_eq!(total_loss_value(2.5, Some(1.0), 0.0), 2.5);
    assert_eq!(total_loss_value(2.5, None, 4.0), 2.5);

    // gradient of the sum against finite differences, through both terms
    let mut rng = seeded(2);
    let (n, m, d) = (5, 2, 3);
    let feats: Vec<Tensor> = (0..m).map(|_| rand_tensor(&mut rng, n, 4)).collect();
    let graphs: Vec<_> = feats.iter().map(|x| knn_graph(x, 2).unwrap()).collect();
    let mut buffer = EmbeddingBuffer::new(n, m, d);
    buffer.update(&rand_tensor(&mut rng, n * m, d), &(0..n).collect::<Vec<_>>()).unwrap();
    let targets = vec![rand_tensor(&mut rng, 2, 3), rand_tensor(&mut rng, 2, 2)];
    let mask = MaskMatrix::new(2, 2, vec![1, 0, 1, 1]).unwrap();
    let batch = [3usize, 1];
    let params = vec![
        rand_tensor(&mut rng, 2, 3),
        rand_tensor(&mut rng, 2, 2),
        rand_tensor(&mut rng, 2 * m, d),
    ];
    let f = |t: &mut Tape, p: &[crate::autodiff::Var]| {
        let r = recon_loss_masked(t, &p[..2], &targets, &mask)?;
        let g = graph_loss_batch(t, p[2], &buffer, &graphs, &batch)?;
        total_loss(t, r, Some(g), 0.7)
    };
    assert!(grad_check(f, &params, 1e-5).unwrap() < 1e-6);

    let mut t = Tape::new();
    let p: Vec<_> = params.iter().map(|x| t.leaf(x.clone())).collect();
    let r = recon_loss_masked(&mut t, &p[..2], &targets, &mask).unwrap();
    let g = graph_loss_batch(&mut t, p[2], &buffer, &graphs, &batch).unwrap();
    let tot = total_loss(&mut t, r, Some(g), 0.7).unwrap();
    assert_eq!(
        t.value(tot).data()[0],
        total_loss_value(t.value(r).data()[0], Some(t.value(g).data()[0]), 0.7)
    );
}

#[test]
fn adam_first_step_and_zero_gradient() {
    let mut p = vec![Tensor::scalar(1.0), Tensor::vector(vec![2.0, -3.0])];
    let mut adam = Adam::new(&p, 0.001);
    let g = [Tensor::scalar(-4.0), Tensor::vector(vec![0.0, 0.0])];
    adam.step(&mut p, &[Some(&g[0]), Some(&g[1])]).unwrap();
    let want = 1.0 + 0.001 * 4.0 / (4.0 + EPSILON);
    assert!((p[0].data()[0] - want).abs() < 1e-15);
    assert_eq!(p[1].data(), &[2.0, -3.0]);
    assert_eq!(adam.steps(), 1);
    assert!(matches!(adam.step(&mut p, &[Some(&g[0]), None]), Err(Error::Optimizer(_))));
    assert_eq!(adam.steps(), 1);
}

#[test]
fn adam_matches_reference_recurrence() {
    // f(x) = (x − 3)², gradient 2(x − 3)
    let lr = 0.1;
    let mut p = vec![Tensor::scalar(0.5)];
    let mut adam = Adam::new(&p, lr);
    let (mut x, mut m1, mut m2) = (0.5f64, 0.0f64, 0.0f64);
    for t in 1..=2 {
        let g = Tensor::scalar(2.0 * (p[0].data()[0] - 3.0));
        adam.step(&mut p, &[Some(&g)]).unwrap();
        let gr = 2.0 * (x - 3.0);
        m1 = 0.9 * m1 + 0.1 * gr;
        m2 = 0.999 * m2 + 0.001 * gr * gr;
        let mh = m1 / (1.0 - 0.9f64.powi(t));
        let vh = m2 / (1.0 - 0.999f64.powi(t));
        x -= lr * mh / (vh.sqrt() + 1e-8);
        assert!((p[0].data()[0] - x).abs() < 1e-15);
    }
}

#[test]
fn train_config_validation() {
    assert!(TrainConfig::default().validate().is_ok());
    for bad in [
        TrainConfig { lr: 0.0, ..Default::default() },
        TrainConfig { beta: -1.0, ..Default::default() },
        TrainConfig { k_neighbors: 0, ..Default::default() },
        TrainConfig { e2: 0, ..Default::default() },
        TrainConfig { batch_size: 0, ..Default::default() },
    ] {
        assert!(matches!(bad.validate(), Err(Error::Config(_))));
    }
}

fn small_model(dims: Vec<usize>) -> ModelConfig {
    ModelConfig {
        d_e: 16,
        heads: 2,
        mlp_hidden: 32,
        ..ModelConfig::new(dims)
    }
}

fn synthetic(seed: u64) -> (MultiViewDataset, MaskMatrix) {
    let ds = synth_dataset(&SynthConfig {
        n: 90,
        classes: 3,
        dims: vec![20, 30],
        noise: 1.0,
        seed,
    })
    .unwrap();
    let mask = generate_mask(90, 2, 0.5, seed + 1).unwrap();
    (ds, mask)
}

fn prepared(seed: u64) -> (MultiViewDataset, MaskMatrix) {
    let (ds, mask) = synthetic(seed);
    let (scaled, _) = normalize(&ds, Some(&mask)).unwrap();
    (zero_fill(&scaled, &mask).unwrap(), mask)
}

#[test]
fn stage1_single_epoch_has_no_graph_term() {
    let (data, mask) = prepared(3);
    let cfg = TrainConfig { e1: 1, batch_size: 32, k_neighbors: 5, ..Default::default() };
    let mut model = ModelState::init(&small_model(data.dims()), 0).unwrap();
    let mut adam = Adam::new(model.params(), cfg.lr);
    let out = train_stage1(&mut model, &mut adam, &data, &mask, &cfg).unwrap();
    assert_eq!(out.log.len(), 1);
    assert_eq!(out.log[0].graph, 0.0);
    assert_eq!(out.log[0].total, out.log[0].recon);
    assert!(out.buffer.is_full());
    assert_eq!(adam.steps(), 3);
    assert_eq!(out.graphs.len(), 2);
}

#[test]
fn stage1_keeps_observed_entries_and_descends() {
    let (data, mask) = prepared(4);
    let cfg = TrainConfig { e1: 20, batch_size: 32, k_neighbors: 5, ..Default::default() };
    let mut model = ModelState::init(&small_model(data.dims()), 1).unwrap();
    let mut adam = Adam::new(model.params(), cfg.lr);
    let mut epochs = 0;
    let out = train_stage1_with(&mut model, &mut adam, &data, &mask, &cfg, &mut |_, x, g| {
        epochs += 1;
        assert_eq!(g.len(), 2);
        for v in 0..2 {
            for i in 0..90 {
                if mask.get(i, v) {
                    assert_eq!(x.views[v].row(i), data.view(v).row(i));
                }
            }
        }
    })
    .unwrap();
    assert_eq!(epochs, 20);
    assert!(out.log[1].graph > 0.0);
    assert!(out.log[19].recon < out.log[0].recon);
    assert!(out.log[19].total < out.log[0].total);
}

#[test]
fn stage2_holds_inputs_fixed_and_descends() {
    let (data, mask) = prepared(5);
    let cfg = TrainConfig { e1: 3, e2: 15, batch_size: 32, k_neighbors: 5, ..Default::default() };
    let mut model = ModelState::init(&small_model(data.dims()), 2).unwrap();
    let mut adam = Adam::new(model.params(), cfg.lr);
    let s1 = train_stage1(&mut model, &mut adam, &data, &mask, &cfg).unwrap();
    let (graphs, x_prime) = (s1.graphs.clone(), s1.imputed.clone());
    let mut buffer = s1.buffer;
    let s2 = train_stage2(&mut model, &mut adam, &s1.imputed, &s1.graphs, &mut buffer, &cfg).unwrap();
    assert_eq!(s1.graphs, graphs);
    assert_eq!(s1.imputed, x_prime);
    assert_eq!(s2.log.len(), 15);
    assert!(s2.log.iter().all(|e| e.stage == 2 && e.graph > 0.0));
    assert!(s2.log[14].total < s2.log[0].total);
    assert_eq!(s2.fused.shape(), &[90, 16]);
}

fn quick_cfg(seed: u64) -> TrainConfig {
    TrainConfig {
        e1: 3,
        e2: 3,
        batch_size: 32,
        k_neighbors: 5,
        kmeans_restarts: 3,
        seed,
        ..Default::default()
    }
}

#[test]
fn pipeline_is_deterministic_and_writes_run_dir() {
    let (ds, mask) = synthetic(6);
    let mc = small_model(ds.dims());
    let a = run_pipeline(&ds, &mask, &mc, &quick_cfg(9)).unwrap();
    let b = run_pipeline(&ds, &mask, &mc, &quick_cfg(9)).unwrap();
    assert_eq!(a.clusters.labels, b.clusters.labels);
    assert_eq!(a.log, b.log);
    assert_eq!(a.log.len(), 6);
    assert!(a.metrics.is_some());

    let dir = tempfile::tempdir().unwrap();
    let files = a.write(dir.path()).unwrap();
    assert_eq!(read_losses_csv(&files.losses()).unwrap(), a.log);
    assert_eq!(ModelState::load(&files.checkpoint()).unwrap(), a.model);
    let cfg: EffectiveConfig = serde_json::from_str(&std::fs::read_to_string(files.config()).unwrap()).unwrap();
    assert_eq!(cfg, a.effective_config());
    let metrics: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(files.metrics()).unwrap()).unwrap();
    for key in ["acc", "nmi", "purity", "inertia", "seed"] {
        assert!(metrics.get(key).is_some(), "{key}");
    }
    for v in 0..2 {
        assert!(files.recovered(v).exists());
    }
}

#[test]
fn pipeline_without_labels_omits_metrics() {
    let (ds, mask) = synthetic(7);
    let unlabeled = MultiViewDataset::new(ds.views().to_vec(), None, None).unwrap();
    let mc = small_model(ds.dims());
    assert!(matches!(run_pipeline(&unlabeled, &mask, &mc, &quick_cfg(1)), Err(Error::Config(_))));
    let cfg = TrainConfig { clusters: Some(3), ..quick_cfg(1) };
    let run = run_pipeline(&unlabeled, &mask, &mc, &cfg).unwrap();
    assert!(run.metrics.is_none());
    assert_eq!(run.clusters.labels.len(), 90);
    let wrong = small_model(vec![20, 31]);
    assert!(matches!(run_pipeline(&ds, &mask, &wrong, &cfg), Err(Error::Config(_))));
}

#[test]
fn reinit_changes_stage2_start() {
    let (ds, mask) = synthetic(8);
    let mc = small_model(ds.dims());
    let base = run_pipeline(&ds, &mask, &mc, &quick_cfg(2)).unwrap();
    let re = run_pipeline(&ds, &mask, &mc, &TrainConfig { reinit_stage2: true, ..quick_cfg(2) }).unwrap();
    assert_eq!(base.log[..3], re.log[..3]);
    assert_ne!(base.log[3], re.log[3]);
}
