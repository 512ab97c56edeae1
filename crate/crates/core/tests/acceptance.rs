//! End-to-end acceptance gate. Prints one PASS/FAIL line per criterion and
//! exits non-zero when any criterion fails.
//!
//! The citation-graph band needs the Cora node-format directory in
//! `IDMIX_CORA_DIR`; without it that criterion reports FAIL as not run.

use std::fs;
use std::path::Path;
use std::time::Instant;

use idmix_core::augment::{drop_edges, make_views, mask_attributes, MaskGranularity, ViewMode};
use idmix_core::encoder::{encode, project, Activation, EncoderParams};
use idmix_core::graph::{normalized_adjacency, sbm_generate, spmm, FeatureMode, Graph};
use idmix_core::io::{cli, load_node_dataset, NodeDataset};
use idmix_core::mixup::{
    cut_mixup, local_mixup, mix, nearest_partners, random_mixup, CutLabel, MixAssignment, MixStrategy,
};
use idmix_core::numcore::{Matrix, Rng};
use idmix_core::objective::{
    alignment, ce_decomposition_loss, cross_entropy, mixed_npair_loss, similarity_matrix, uniformity, LossConfig,
    MetricConfig,
};
use idmix_core::pipeline::{
    embed, gradient_check, linear_probe, pretrain, step_loss, Dataset, ModelConfig, ModelParams, ProbeConfig, Split,
    TrainConfig,
};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const SBM_BLOCKS: [usize; 3] = [150, 150, 150];

struct Gate {
    failed: Vec<&'static str>,
}

impl Gate {
    fn report(&mut self, name: &'static str, ok: bool, detail: String) {
        println!("{} {name}: {detail}", if ok { "PASS" } else { "FAIL" });
        if !ok {
            self.failed.push(name);
        }
    }
}

fn random_matrix(r: usize, c: usize, rng: &mut Rng) -> Matrix {
    Matrix::from_vec(r, c, (0..r * c).map(|_| rng.normal()).collect()).unwrap()
}

fn random_graph(n: usize, d: usize, p: f64, rng: &mut Rng) -> Graph {
    let mut edges = Vec::new();
    for u in 0..n {
        for v in (u + 1)..n {
            if rng.bernoulli(p) {
                edges.push((u, v));
            }
        }
    }
    Graph::new(random_matrix(n, d, rng), edges).unwrap()
}

fn sbm_dataset(seed: u64) -> Dataset {
    let root = Rng::new(seed);
    let graph = sbm_generate(
        &SBM_BLOCKS,
        0.3,
        0.01,
        FeatureMode::OnehotBlockNoisy,
        &mut root.split("graph"),
    )
    .unwrap();
    let split = Split::stratified(graph.node_labels().unwrap(), 0.1, 0.1, &mut root.split("split"));
    Dataset::Node { graph, split }
}

struct Run {
    accuracy: f64,
    align: (f64, f64),
    uniform: (f64, f64),
    seconds: f64,
}

/// Pretrain plus the default linear probe, the same path the CLI takes.
fn pretrain_and_probe(data: &Dataset, cfg: &TrainConfig) -> Run {
    let t = Instant::now();
    let (params, trace) = pretrain(data, cfg).unwrap();
    let h = embed(data, &params).unwrap();
    let Dataset::Node { split, .. } = data else {
        unreachable!()
    };
    let probe = ProbeConfig::default();
    let rng = Rng::new(cfg.seed).split("probe");
    let report = linear_probe(&h, &data.labels().unwrap(), split, probe.l2, probe.runs, &rng).unwrap();
    let first = trace.records.first().unwrap();
    let last = trace.records.last().unwrap();
    Run {
        accuracy: report.accuracy_mean,
        align: (first.align, last.align),
        uniform: (first.uniform, last.uniform),
        seconds: t.elapsed().as_secs_f64(),
    }
}

fn sbm_runs(cfg: &TrainConfig) -> Vec<Run> {
    SEEDS
        .iter()
        .map(|&seed| pretrain_and_probe(&sbm_dataset(seed), &TrainConfig { seed, ..cfg.clone() }))
        .collect()
}

fn mean(xs: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = xs.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn gradient_oracle(gate: &mut Gate) {
    let t = Instant::now();
    let report = gradient_check(7, 1e-5).unwrap();
    let secs = t.elapsed().as_secs_f64();
    gate.report(
        "gradient oracle",
        report.max_rel_error < 1e-4 && secs < 10.0,
        format!(
            "max relative error {:.3e} over {} coordinates (< 1e-4), {secs:.2}s (< 10s)",
            report.max_rel_error, report.coordinates
        ),
    );
}

fn loss_form_equivalence(gate: &mut Gate) {
    let mut rng = Rng::new(20);
    let mut worst = 0.0f64;
    let cfg = LossConfig::default();
    for b in 0..200 {
        let n = 1 + rng.below(64);
        let d = 1 + rng.below(16);
        let za = random_matrix(n, d, &mut rng);
        let zb = random_matrix(n, d, &mut rng);
        let sim = similarity_matrix(&za, &zb, &cfg).unwrap();
        let lam = rng.uniform();
        let (_, a) = match (b % 3, n) {
            (1, n) if n >= 2 => local_mixup(&za, lam).unwrap(),
            (2, _) => cut_mixup(&za, lam, CutLabel::Nominal, &mut rng.split("cut")).unwrap(),
            _ => random_mixup(&za, lam, &mut rng.split("random")).unwrap(),
        };
        let (sum_form, _) = mixed_npair_loss(&sim, &a, &cfg).unwrap();
        let weighted_ce = ce_decomposition_loss(&sim, &a, &cfg).unwrap();
        worst = worst.max((sum_form - weighted_ce).abs());
    }
    gate.report(
        "loss form equivalence",
        worst <= 1e-9,
        format!("200 batches, max |mixed loss - weighted cross-entropy| {worst:.3e} (<= 1e-9)"),
    );
}

fn mixup_degeneracy(gate: &mut Gate) {
    let mut rng = Rng::new(30);
    let g = random_graph(24, 6, 0.2, &mut rng);
    let model = ModelConfig {
        width: 16,
        proj_hidden: 16,
        proj_out: 8,
        ..Default::default()
    };
    let params = ModelParams::new(6, &model, &mut rng.split("init")).unwrap();
    let mut bit_exact = true;
    let mut worst = 0.0f64;
    for strategy in [MixStrategy::Random, MixStrategy::Cut, MixStrategy::Local] {
        let mut cfg = TrainConfig {
            model: model.clone(),
            ..Default::default()
        };
        cfg.mixup.strategy = strategy;
        cfg.mixup.fixed_lambda = Some(1.0);
        let step_rng = rng.split_index(strategy as u64);

        let h = random_matrix(40, 12, &mut rng);
        let (mixed, _) = mix(&h, &cfg.mixup, &step_rng).unwrap();
        bit_exact &= mixed
            .data()
            .iter()
            .zip(h.data())
            .all(|(a, b)| a.to_bits() == b.to_bits());

        let loss = step_loss(&g, &params, &cfg, &step_rng).unwrap();
        let views = make_views(
            &g,
            &cfg.augment_a,
            &cfg.augment_b,
            cfg.view_mode,
            &step_rng.split("views"),
        )
        .unwrap();
        let (ha, _) = encode(
            &normalized_adjacency(&views.view_a),
            views.view_a.features(),
            &params.encoder,
        )
        .unwrap();
        let (hb, _) = encode(
            &normalized_adjacency(&views.view_b),
            views.view_b.features(),
            &params.encoder,
        )
        .unwrap();
        let (za, _) = project(&ha, &params.head).unwrap();
        let (zb, _) = project(&hb, &params.head).unwrap();
        let mut logits = similarity_matrix(&za, &zb, &cfg.loss).unwrap();
        logits.scale(1.0 / cfg.loss.tau);
        let identity: Vec<usize> = (0..g.n()).collect();
        let reference = cross_entropy(&logits, &identity, cfg.loss.reduction).unwrap();
        worst = worst.max((loss - reference).abs());
    }
    gate.report(
        "mixup degeneracy at lambda 1",
        bit_exact && worst <= 1e-9,
        format!("mixed embeddings bit-exact: {bit_exact}; max |step loss - identity loss| {worst:.3e} (<= 1e-9)"),
    );
}

fn closed_forms(gate: &mut Gate) {
    let cfg = LossConfig::default();
    let mut worst_uniform_sim = 0.0f64;
    let mut rng = Rng::new(40);
    for n in [2usize, 8, 64] {
        let sim = Matrix::filled(n, n, 0.37);
        let (_, a) = random_mixup(&Matrix::zeros(n, 1), 0.6, &mut rng).unwrap();
        for assignment in [MixAssignment::identity(n), a] {
            let (loss, _) = mixed_npair_loss(&sim, &assignment, &cfg).unwrap();
            worst_uniform_sim = worst_uniform_sim.max((loss - n as f64 * (n as f64).ln()).abs());
        }
    }
    let metrics = MetricConfig::default();
    let antipodal = Matrix::from_rows(&[[1.0, 0.0], [-1.0, 0.0]]).unwrap();
    let u = uniformity(&antipodal, &metrics).unwrap();
    let z = random_matrix(30, 5, &mut rng);
    let align = alignment(&z, &z, &metrics).unwrap();
    let ok = worst_uniform_sim <= 1e-9 && (u + 8.0).abs() <= 1e-9 && align == 0.0;
    gate.report(
        "closed-form spot checks",
        ok,
        format!(
            "|loss - N log N| {worst_uniform_sim:.3e} for N in 2,8,64 (<= 1e-9); antipodal uniformity {u} (-8 within 1e-9); identical-view alignment {align} (exactly 0)"
        ),
    );
}

/// `D^{-1/2}(A+I)D^{-1/2}` built densely from the edge list.
fn dense_operator(g: &Graph) -> Matrix {
    let n = g.n();
    let mut a = Matrix::identity(n);
    for &(u, v) in g.edges() {
        a.set(u, v, 1.0);
        a.set(v, u, 1.0);
    }
    let deg: Vec<f64> = (0..n).map(|i| a.row(i).iter().sum()).collect();
    let mut s = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            s.set(i, j, a.get(i, j) / (deg[i] * deg[j]).sqrt());
        }
    }
    s
}

fn structural_invariants(gate: &mut Gate) {
    let mut rng = Rng::new(50);
    let mut equivariance = 0.0f64;
    for _ in 0..20 {
        let n = 2 + rng.below(60);
        let g = random_graph(n, 5, 0.15, &mut rng);
        let enc = EncoderParams::new(&[5, 12, 7], Activation::Relu, &mut rng).unwrap();
        let perm = rng.permutation(n);
        let pg = g.permute(&perm).unwrap();
        let (h, _) = encode(&normalized_adjacency(&g), g.features(), &enc).unwrap();
        let (ph, _) = encode(&normalized_adjacency(&pg), pg.features(), &enc).unwrap();
        for i in 0..n {
            for (x, y) in h.row(i).iter().zip(ph.row(perm[i])) {
                equivariance = equivariance.max((x - y).abs());
            }
        }
    }

    let mut symmetry = 0.0f64;
    let mut oracle = 0.0f64;
    for _ in 0..200 {
        let n = 1 + rng.below(8);
        let g = random_graph(n, 3, 0.4, &mut rng);
        let s = normalized_adjacency(&g);
        let dense = s.to_dense();
        symmetry = symmetry.max(dense.max_abs_diff(&dense.transpose()).unwrap());
        let reference = dense_operator(&g);
        oracle = oracle.max(dense.max_abs_diff(&reference).unwrap());
        let x = g.features();
        oracle = oracle.max(
            spmm(&s, x)
                .unwrap()
                .max_abs_diff(&reference.matmul(x).unwrap())
                .unwrap(),
        );
    }

    let mut nn_mismatch = 0;
    for _ in 0..100 {
        let n = 2 + rng.below(255);
        let d = 1 + rng.below(16);
        let h = random_matrix(n, d, &mut rng);
        let got = nearest_partners(&h);
        for (i, &j) in got.iter().enumerate() {
            let dist = |k: usize| -> f64 { h.row(i).iter().zip(h.row(k)).map(|(a, b)| (a - b) * (a - b)).sum() };
            let best = (0..n)
                .filter(|&k| k != i)
                .min_by(|&a, &b| dist(a).total_cmp(&dist(b)).then(a.cmp(&b)))
                .unwrap();
            if best != j {
                nn_mismatch += 1;
            }
        }
    }
    gate.report(
        "structural invariants",
        equivariance < 1e-9 && symmetry < 1e-12 && oracle < 1e-12 && nn_mismatch == 0,
        format!(
            "permutation equivariance {equivariance:.3e} (< 1e-9); operator asymmetry {symmetry:.3e} and dense-oracle gap {oracle:.3e} (< 1e-12); nearest-neighbour mismatches {nn_mismatch} over 100 batches"
        ),
    );
}

fn augmentation_statistics(gate: &mut Gate) {
    let events = 20_000usize;
    let mut rng = Rng::new(60);
    let mut ok = true;
    let mut details = Vec::new();
    for p in [0.1, 0.3, 0.5] {
        let band = 3.0 * (p * (1.0 - p) / events as f64).sqrt();
        let ones = Matrix::filled(100, events / 100, 1.0);
        let entry = mask_attributes(&ones, p, MaskGranularity::PerEntry, &mut rng).unwrap();
        let entry_frac = entry.data().iter().filter(|&&v| v == 0.0).count() as f64 / events as f64;
        let wide = Matrix::filled(2, events, 1.0);
        let dim = mask_attributes(&wide, p, MaskGranularity::PerDimension, &mut rng).unwrap();
        let dim_frac = dim.row(0).iter().filter(|&&v| v == 0.0).count() as f64 / events as f64;
        let consistent = dim.row(0) == dim.row(1);

        let edges: Vec<(usize, usize)> = (0..events).map(|i| (i, i + 1)).collect();
        let chain = Graph::new(Matrix::zeros(events + 1, 1), edges).unwrap();
        let kept = drop_edges(&chain, p, &mut rng).unwrap().edges().len();
        let edge_frac = 1.0 - kept as f64 / events as f64;

        let inside = [entry_frac, dim_frac, edge_frac].iter().all(|f| (f - p).abs() <= band);
        ok &= inside && consistent;
        details.push(format!(
            "p={p}: entries {entry_frac:.4}, columns {dim_frac:.4}, edges {edge_frac:.4} (±{band:.4})"
        ));
    }
    gate.report(
        "augmentation statistics",
        ok,
        format!("{events} events each; {}", details.join("; ")),
    );
}

fn sbm_end_to_end(gate: &mut Gate, runs: &[Run]) {
    let acc = mean(runs.iter().map(|r| r.accuracy));
    let slowest = runs.iter().map(|r| r.seconds).fold(0.0, f64::max);
    let align_down = runs.iter().filter(|r| r.align.1 < r.align.0).count();
    let uniform_down = runs.iter().filter(|r| r.uniform.1 < r.uniform.0).count();
    for (seed, r) in SEEDS.iter().zip(runs) {
        println!(
            "    seed {seed}: accuracy {:.4}, align {:.4} -> {:.4}, uniform {:.4} -> {:.4}, {:.1}s",
            r.accuracy, r.align.0, r.align.1, r.uniform.0, r.uniform.1, r.seconds
        );
    }
    let ok = acc >= 0.95 && align_down == runs.len() && uniform_down == runs.len() && slowest < 120.0;
    gate.report(
        "SBM end-to-end",
        ok,
        format!(
            "mean accuracy {acc:.4} (>= 0.95); alignment lower at the final epoch on {align_down}/5 seeds, uniformity on {uniform_down}/5 (need 5/5); slowest seed {slowest:.1}s (< 120s)"
        ),
    );
}

fn cora_band(gate: &mut Gate) {
    let Some(dir) = std::env::var_os("IDMIX_CORA_DIR") else {
        gate.report(
            "Cora accuracy band",
            false,
            "not run: set IDMIX_CORA_DIR to a node-format Cora directory".into(),
        );
        return;
    };
    let NodeDataset { graph, split } = match load_node_dataset(Path::new(&dir)) {
        Ok(d) => d,
        Err(e) => {
            gate.report("Cora accuracy band", false, format!("not run: {e}"));
            return;
        }
    };
    let run = pretrain_and_probe(&Dataset::Node { graph, split }, &TrainConfig::default());
    gate.report(
        "Cora accuracy band",
        run.accuracy >= 0.78 && run.seconds < 600.0,
        format!(
            "20-run probe accuracy {:.4} (>= 0.78), {:.1}s (< 600s)",
            run.accuracy, run.seconds
        ),
    );
}

fn view_mode_ablation(gate: &mut Gate, multi: &[Run]) {
    let single = sbm_runs(&TrainConfig {
        view_mode: ViewMode::Single,
        ..Default::default()
    });
    let m = mean(multi.iter().map(|r| r.accuracy));
    let s = mean(single.iter().map(|r| r.accuracy));
    gate.report(
        "multi-view vs single-view",
        m >= s - 0.01,
        format!("multi-view accuracy {m:.4}, single-view {s:.4} (multi >= single - 0.01)"),
    );
}

fn lambda_sweep(gate: &mut Gate) {
    let fixed = |lam: f64| {
        let mut cfg = TrainConfig::default();
        cfg.mixup.fixed_lambda = Some(lam);
        mean(sbm_runs(&cfg).iter().map(|r| r.accuracy))
    };
    let (half, mostly_self) = (fixed(0.5), fixed(0.9));
    gate.report(
        "lambda sweep direction",
        half >= mostly_self - 0.02,
        format!("accuracy at lambda 0.5 {half:.4}, at 0.9 {mostly_self:.4} (0.5 >= 0.9 - 0.02)"),
    );
}

fn determinism(gate: &mut Gate) {
    let dir = tempfile::TempDir::new().unwrap();
    let data = dir.path().join("sbm");
    let out = dir.path().join("run");
    let gen = [
        "idmix",
        "gen-synthetic",
        "--blocks",
        "150,150,150",
        "--p-in",
        "0.3",
        "--p-out",
        "0.01",
        "--seed",
        "0",
    ];
    assert_eq!(
        cli::run(
            gen.iter()
                .map(|s| s.to_string())
                .chain(["--out".into(), data.display().to_string()])
        ),
        0
    );
    let job = |cmd: &str| {
        let args = [
            "idmix".to_string(),
            cmd.into(),
            "--seed".into(),
            "3".into(),
            "--set".into(),
            format!("dataset={}", data.display()),
            "--set".into(),
            format!("output_dir={}", out.display()),
            "--set".into(),
            "train.trace_wall_time=false".into(),
        ];
        assert_eq!(cli::run(args), 0, "{cmd} failed");
    };
    let full_run = || {
        job("pretrain");
        job("probe");
        (
            fs::read(out.join("trace.csv")).unwrap(),
            fs::read(out.join("report.json")).unwrap(),
        )
    };
    let first = full_run();
    let second = full_run();
    gate.report(
        "determinism",
        first.0 == second.0 && first.1 == second.1,
        format!(
            "trace.csv identical: {}; report.json identical: {}",
            first.0 == second.0,
            first.1 == second.1
        ),
    );
}

fn main() {
    let mut gate = Gate { failed: Vec::new() };
    gradient_oracle(&mut gate);
    loss_form_equivalence(&mut gate);
    mixup_degeneracy(&mut gate);
    closed_forms(&mut gate);
    structural_invariants(&mut gate);
    augmentation_statistics(&mut gate);
    let default_runs = sbm_runs(&TrainConfig::default());
    sbm_end_to_end(&mut gate, &default_runs);
    cora_band(&mut gate);
    view_mode_ablation(&mut gate, &default_runs);
    lambda_sweep(&mut gate);
    determinism(&mut gate);

    if !gate.failed.is_empty() {
        println!("acceptance: {} failing: {}", gate.failed.len(), gate.failed.join(", "));
        std::process::exit(1);
    }
    println!("acceptance: all criteria pass");
}
