//! Acceptance suite. Runs every criterion at its stated tolerance and prints
//! one PASS/FAIL line per criterion, then exits non-zero if a criterion
//! failed that is not listed in `KNOWN_UNMET`.
//!
//! Built with `harness = false` so the lines reach the terminal unbuffered.
//! Expect several minutes: three full planted-feature pipelines, one
//! repeat for the determinism check, and a few extra trainings.

use std::collections::BTreeSet;
use std::path::Path;
use std::time::Instant;

use ndarray::Array2;
use rand::Rng as _;
use rand_distr::StandardNormal;

use genfs::collector::{load_corpus, random_collect, top_decile_mean, CorpusRecord, Origin};
use genfs::dataset::{make_synthetic_planted, split_ab, SyntheticSpec};
use genfs::eval::{f1_weighted, one_minus_rae, ModelKind};
use genfs::pipeline::{files, mask_timings, rows_digest, RunConfig, RunReport, SplitRecord, Workspace};
use genfs::rng::seeded;
use genfs::search::{ascend, reconstruction_rate, select_seeds, LinearField, SearchConfig};
use genfs::vae::{
    augment, kl_term, load_checkpoint, reparameterize, train_model, Example, Hyperparams, LatentDistribution,
    LatentPoint, SubsetVae, TrainingMeta,
};
use genfs::vocab::{subset_to_sequence, FeatureTokenVocab};

/// Criteria evaluated faithfully that do not hold at desk scale. They
/// still print FAIL; the README explains why. If one starts passing the
/// run says so.
const KNOWN_UNMET: &[u32] = &[1];

const SEEDS: [u64; 3] = [1, 2, 3];

struct Outcome {
    id: u32,
    name: &'static str,
    pass: bool,
    detail: String,
}

fn outcome(id: u32, name: &'static str, pass: bool, detail: String) -> Outcome {
    Outcome { id, name, pass, detail }
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn planted_config(seed: u64) -> RunConfig {
    let mut cfg = RunConfig {
        seed,
        ..RunConfig::default()
    };
    cfg.data.synthetic = Some(SyntheticSpec::new(5, 45, 1000, 0.1, seed));
    cfg
}

struct PlantedRun {
    seed: u64,
    report: RunReport,
    report_bytes: String,
    wall_seconds: f64,
}

fn run_pipeline(cfg: RunConfig, dir: &Path) -> PlantedRun {
    let start = Instant::now();
    let ws = Workspace::new(cfg.clone(), dir).expect("valid config");
    let report = ws.pipeline().unwrap_or_else(|e| panic!("pipeline seed {} failed: {e}", cfg.seed));
    let report_bytes = std::fs::read_to_string(ws.path(files::REPORT)).expect("report written");
    PlantedRun {
        seed: cfg.seed,
        report,
        report_bytes,
        wall_seconds: start.elapsed().as_secs_f64(),
    }
}

// ---------------------------------------------------------------- criterion 5

fn tiny_hp() -> Hyperparams {
    Hyperparams {
        token_embed_dim: 8,
        n_layers_enc: 1,
        n_layers_dec: 1,
        n_heads: 2,
        ffn_dim: 12,
        latent_dim: 4,
        evaluator_hidden: 6,
        dropout: 0.0,
        ..Hyperparams::default()
    }
}

fn gradient_oracle() -> Outcome {
    const H: f64 = 1e-5;
    let vocab = FeatureTokenVocab::new(3);
    assert_eq!(vocab.size(), 6);
    let mut worst_param = 0.0f64;
    let mut worst_latent = 0.0f64;
    let mut checked = 0usize;
    for point in 0..10u64 {
        let mut rng = seeded(1000 + point);
        let mut model = SubsetVae::new(3, &tiny_hp(), 50 + point).unwrap();
        let batch: Vec<Example> = (0..3)
            .map(|_| {
                let mut set = BTreeSet::new();
                while set.is_empty() {
                    set = (0..3).filter(|_| rng.random_bool(0.5)).collect();
                }
                Example {
                    seq: subset_to_sequence(&vocab, &set).unwrap(),
                    utility: rng.random_range(0.0..1.0),
                }
            })
            .collect();
        let eps = Array2::from_shape_fn((batch.len(), 4), |_| rng.sample::<f64, _>(StandardNormal));
        let (_, grads) = model.loss_gradients(&batch, &eps).unwrap();

        // Parameters: every scalar of every tensor.
        for id in 0..model.params().len() {
            let shape = model.params().get(id).dim();
            for i in 0..shape.0 {
                for j in 0..shape.1 {
                    let orig = model.params().get(id)[[i, j]];
                    model.params_mut().get_mut(id)[[i, j]] = orig + H;
                    let up = model.joint_loss(&batch, &eps).unwrap().total;
                    model.params_mut().get_mut(id)[[i, j]] = orig - H;
                    let down = model.joint_loss(&batch, &eps).unwrap().total;
                    model.params_mut().get_mut(id)[[i, j]] = orig;
                    let numeric = (up - down) / (2.0 * H);
                    worst_param = worst_param.max(rel_err(grads[id][[i, j]], numeric));
                    checked += 1;
                }
            }
        }

        // Evaluator with respect to the latent point.
        let z: Vec<f64> = (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
        let (_, g) = model.utility_and_gradient(&z).unwrap();
        for k in 0..4 {
            let mut up = z.clone();
            up[k] += H;
            let mut down = z.clone();
            down[k] -= H;
            let numeric =
                (model.utility_and_gradient(&up).unwrap().0 - model.utility_and_gradient(&down).unwrap().0) / (2.0 * H);
            worst_latent = worst_latent.max(rel_err(g[k], numeric));
        }
    }
    let pass = worst_param <= 1e-3 && worst_latent <= 1e-3;
    outcome(
        5,
        "gradient oracle",
        pass,
        format!(
            "max rel err: loss/params {worst_param:.2e} over {checked} scalars, evaluator/latent {worst_latent:.2e} (tol 1e-3)"
        ),
    )
}

// ---------------------------------------------------------------- criterion 6

fn formula_suite() -> Outcome {
    let mut failures = Vec::new();
    let mut check = |name: &str, got: f64, want: f64| {
        if (got - want).abs() > 1e-6 {
            failures.push(format!("{name}: {got} != {want}"));
        }
    };
    let ln2 = std::f64::consts::LN_2;
    let dist = |m: Vec<f64>, sigma: Vec<f64>| LatentDistribution { m, sigma };

    let d = dist(vec![0.3, -1.2], vec![0.5, -0.7]);
    let e = reparameterize(&d, &[0.0, 0.0]).unwrap();
    check("reparam eps=0 [0]", e.e_star[0], 0.3);
    check("reparam eps=0 [1]", e.e_star[1], -1.2);
    let e = reparameterize(&dist(vec![1.0], vec![ln2]), &[1.0]).unwrap();
    check("reparam [1, ln 2, 1]", e.e_star[0], 3.0);
    let e = reparameterize(&dist(vec![0.0, 0.0], vec![0.0, 0.0]), &[0.5, -0.5]).unwrap();
    check("reparam sigma=0", e.e_star[0] - e.e_star[1], 1.0);

    check("kl m=0 s=0", kl_term(&dist(vec![0.0], vec![0.0])), 0.0);
    check("kl m=1 s=0", kl_term(&dist(vec![1.0], vec![0.0])), 1.0);
    check("kl s=ln 2", kl_term(&dist(vec![0.0], vec![ln2])), 2.0 - (1.0 + ln2));

    // Zero output layer -> all-zero logits -> uniform next-token distribution.
    let mut model = SubsetVae::new(3, &tiny_hp(), 9).unwrap();
    for name in ["dec.out.w", "dec.out.b"] {
        let id = model.params().id(name).unwrap();
        model.params_mut().get_mut(id).fill(0.0);
    }
    let v = model.vocab().clone();
    let z = LatentPoint { e_star: vec![0.4, -0.1, 0.9, 0.0] };
    let probs = model.decode_step(&z, &[v.sos(), 1]).unwrap();
    for (t, p) in probs.iter().enumerate() {
        check(&format!("uniform logit token {t}"), *p, 1.0 / v.size() as f64);
    }

    // Joint objective is the weighted sum of its reported parts.
    let model = SubsetVae::new(3, &tiny_hp(), 10).unwrap();
    let batch = vec![
        Example { seq: subset_to_sequence(&v, &[0, 2].into()).unwrap(), utility: 0.7 },
        Example { seq: subset_to_sequence(&v, &[1].into()).unwrap(), utility: 0.2 },
    ];
    let eps = Array2::from_shape_fn((2, 4), |(i, j)| 0.3 * i as f64 - 0.2 * j as f64);
    let parts = model.joint_loss(&batch, &eps).unwrap();
    let hp = model.hyperparams();
    check("L = a*evt + b*rec + g*kl", parts.total, hp.alpha * parts.evt + hp.beta * parts.rec + hp.gamma * parts.kl);

    let pass = failures.is_empty();
    outcome(
        6,
        "formula unit suite",
        pass,
        if pass { "reparameterization, KL, uniform logits, weighted sum all within 1e-6".into() } else { failures.join("; ") },
    )
}

// ---------------------------------------------------------------- criterion 9

fn metric_suite() -> Outcome {
    let y = [1.0, 2.0, 3.0, 4.0];
    let mean = [2.5; 4];
    let cases = [
        ("1-RAE perfect", one_minus_rae(&y, &y).unwrap(), 1.0),
        ("1-RAE mean predictor", one_minus_rae(&y, &mean).unwrap(), 0.0),
        ("1-RAE hand case", one_minus_rae(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap(), 0.5),
        ("F1 balanced", f1_weighted(&[0, 0, 1, 1], &[0, 1, 0, 1]).unwrap(), 0.5),
        ("F1 majority", f1_weighted(&[0, 0, 0, 1], &[0, 0, 0, 0]).unwrap(), 3.0 * (6.0 / 7.0) / 4.0),
    ];
    let bad: Vec<String> = cases
        .iter()
        .filter(|(_, got, want)| (got - want).abs() > 1e-9)
        .map(|(n, got, want)| format!("{n}: {got} != {want}"))
        .collect();
    outcome(
        9,
        "metric correctness",
        bad.is_empty(),
        if bad.is_empty() {
            format!("5 hand cases within 1e-9 (weighted F1 majority case = {:.6})", cases[4].1)
        } else {
            bad.join("; ")
        },
    )
}

// ---------------------------------------------------------------- criterion 8

fn ascent_monotonicity(run: &PlantedRun, dir: &Path) -> Outcome {
    let vocab = FeatureTokenVocab::new(50);
    let corpus = load_corpus(dir.join(files::CORPUS), &vocab).unwrap();
    let model = SubsetVae::from_checkpoint(&load_checkpoint(dir.join(files::CHECKPOINT)).unwrap()).unwrap();
    let config = SearchConfig::default();
    let seeds = select_seeds(&corpus, config.top_k).unwrap();
    let mut worst_drop = f64::NEG_INFINITY;
    for (seq, _) in &seeds {
        let start = model.encode(seq).unwrap().mean();
        let (_, trace) = ascend(&model, &start, &config).unwrap();
        worst_drop = worst_drop.max(trace.start_value - trace.end_value);
    }
    let report_ok = run
        .report
        .search
        .candidates
        .iter()
        .all(|c| c.predicted_after >= c.predicted_before - 1e-6);

    // Linear evaluator: one unsafeguarded-or-safeguarded step is exact.
    let mut rng = seeded(77);
    let w: Vec<f64> = (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let z: Vec<f64> = (0..8).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let field = LinearField { w: w.clone(), b: 0.3 };
    let one = SearchConfig { n_steps: 1, ..SearchConfig::default() };
    let (stepped, _) = ascend(&field, &LatentPoint { e_star: z.clone() }, &one).unwrap();
    let exact = stepped.e_star.iter().zip(&z).zip(&w).all(|((s, z), w)| *s == z + one.eta * w);

    let pass = seeds.len() == 25 && worst_drop <= 1e-6 && report_ok && exact;
    outcome(
        8,
        "ascent monotonicity",
        pass,
        format!(
            "{} seeds, largest drop {:.2e} (tol 1e-6), report candidates monotone: {report_ok}, linear step exact: {exact}",
            seeds.len(),
            worst_drop.max(0.0)
        ),
    )
}

// ------------------------------------------------------------ criteria 4 & 7

/// 15 features, 200 random subsets: the reconstruction corpus.
fn small_corpus() -> Vec<CorpusRecord> {
    let p = make_synthetic_planted(&SyntheticSpec::new(3, 12, 400, 0.1, 7)).unwrap();
    let (a, _) = split_ab(&p.dataset, 0.8, 7).unwrap();
    random_collect(&a, 200, &ModelKind::default(), 7, 0.75).unwrap()
}

fn train_for_reconstruction(corpus: &[CorpusRecord], n_shuffles: usize) -> SubsetVae {
    let hp = Hyperparams {
        n_shuffles,
        epochs: 20,
        ..Hyperparams::desk()
    };
    let augmented = augment(corpus, n_shuffles, 7).unwrap();
    let trained = train_model(&augmented, 15, &hp, 7).unwrap();
    // Evaluate what would be shipped: the f32 checkpoint.
    SubsetVae::from_checkpoint(&trained.model.to_checkpoint(TrainingMeta::default())).unwrap()
}

fn reconstruction_criteria() -> (Outcome, Outcome) {
    let corpus = small_corpus();
    let distinct: BTreeSet<_> = corpus.iter().map(|r| r.feature_set()).collect();
    assert!(distinct.len() <= 200);
    let with = reconstruction_rate(&train_for_reconstruction(&corpus, 25), &corpus).unwrap();
    let without = reconstruction_rate(&train_for_reconstruction(&corpus, 0), &corpus).unwrap();
    let c4 = outcome(
        4,
        "augmentation effect",
        with >= without,
        format!("exact-set reconstruction {:.1}% with 25 shuffles vs {:.1}% with none", 100.0 * with, 100.0 * without),
    );
    let c7 = outcome(
        7,
        "reconstruction fidelity",
        with >= 0.8,
        format!("{:.1}% of {} distinct 15-feature subsets reconstructed exactly (need >= 80%)", 100.0 * with, distinct.len()),
    );
    (c4, c7)
}

// ------------------------------------------------------------ criteria 1-3

fn planted_recovery(runs: &[PlantedRun]) -> Outcome {
    let mut ok = 0;
    let mut parts = Vec::new();
    let mut slowest = 0.0f64;
    for r in runs {
        let t = r.report.truth.as_ref().expect("synthetic run has truth");
        let hit = t.precision >= 0.5 && t.recall >= 0.6;
        ok += usize::from(hit);
        slowest = slowest.max(r.wall_seconds);
        parts.push(format!("seed {}: P={:.2} R={:.2} |S|={}", r.seed, t.precision, t.recall, r.report.chosen.indices.len()));
    }
    let in_time = slowest <= 15.0 * 60.0;
    outcome(
        1,
        "planted-feature recovery",
        ok >= 2 && in_time,
        format!("{} ({ok}/3 meet P>=0.5 & R>=0.6; slowest run {:.0}s of 900s)", parts.join(", "), slowest),
    )
}

fn beats_full_set(runs: &[PlantedRun]) -> Outcome {
    let mut ok = 0;
    let mut parts = Vec::new();
    for r in runs {
        let s = &r.report.scores_b;
        ok += usize::from(s.chosen.raw >= s.full.raw - 0.01);
        parts.push(format!("seed {}: {:.4} vs {:.4}", r.seed, s.chosen.raw, s.full.raw));
    }
    outcome(2, "improvement over full feature set", ok >= 2, format!("{} ({ok}/3 within -0.01)", parts.join(", ")))
}

fn collector_value(runs: &[PlantedRun], dirs: &[std::path::PathBuf]) -> Outcome {
    let mut ok = 0;
    let mut parts = Vec::new();
    for (r, dir) in runs.iter().zip(dirs) {
        let cfg = planted_config(r.seed);
        let planted = make_synthetic_planted(cfg.data.synthetic.as_ref().unwrap()).unwrap();
        let (a, _) = split_ab(&planted.dataset, cfg.ratio_a, cfg.seed).unwrap();
        let rl = load_corpus(dir.join(files::CORPUS), &FeatureTokenVocab::new(50)).unwrap();
        assert!(rl.iter().all(|x| x.origin == Origin::Rl));
        let random = random_collect(&a, rl.len(), &cfg.model, cfg.seed, cfg.collect.dqn.internal_ratio).unwrap();
        let (tr, tn) = (top_decile_mean(&rl), top_decile_mean(&random));
        ok += usize::from(tr >= tn);
        parts.push(format!("seed {}: RL {tr:.4} vs random {tn:.4}", r.seed));
    }
    outcome(3, "collector value", ok >= 2, format!("{} ({ok}/3)", parts.join(", ")))
}

// ---------------------------------------------------------------- criterion 10

fn protocol_integrity(first: &PlantedRun, first_dir: &Path, again: &PlantedRun, again_dir: &Path) -> Outcome {
    // Independent audit: re-derive the partition from split.json and check
    // every logged read against it.
    let split: SplitRecord =
        serde_json::from_str(&std::fs::read_to_string(first_dir.join(files::SPLIT)).unwrap()).unwrap();
    let a: BTreeSet<usize> = split.a_rows.iter().copied().collect();
    let b: BTreeSet<usize> = split.b_rows.iter().copied().collect();
    let partition_ok = a.is_disjoint(&b) && a.len() + b.len() == first.report.dataset.n_samples;
    let a_digest = rows_digest(&split.a_rows);
    let mut all = split.a_rows.clone();
    all.extend(&split.b_rows);
    let events = &first.report.audit.events;
    let (last, before) = events.split_last().expect("audit has events");
    let before_ok = before.iter().all(|e| e.rows_digest == a_digest && e.b_rows_read == 0);
    let last_ok = last.rows_digest == rows_digest(&all) && last.b_rows_read == b.len();
    let audit_ok = partition_ok && before_ok && last_ok && first.report.audit.sealed_until_final;

    let same_report = mask_timings(&first.report_bytes).unwrap() == mask_timings(&again.report_bytes).unwrap();
    let same_files = [files::SPLIT, files::CORPUS, files::CORPUS_META, files::CHECKPOINT, files::LOSS_HISTORY]
        .iter()
        .all(|f| std::fs::read(first_dir.join(f)).unwrap() == std::fs::read(again_dir.join(f)).unwrap());
    outcome(
        10,
        "protocol integrity",
        audit_ok && same_report && same_files,
        format!(
            "audit: {} reads before scoring, all of A only: {before_ok}; B read once, last: {last_ok}; \
             rerun report bytes equal (timings masked): {same_report}; artifacts equal: {same_files}",
            before.len()
        ),
    )
}

fn main() {
    let started = Instant::now();
    let mut results = Vec::new();

    eprintln!("[acceptance] formula, metric and gradient checks");
    results.push(gradient_oracle());
    results.push(formula_suite());
    results.push(metric_suite());

    eprintln!("[acceptance] reconstruction corpus (15 features)");
    let (c4, c7) = reconstruction_criteria();
    results.push(c4);
    results.push(c7);

    let root = tempfile::tempdir().unwrap();
    let mut runs = Vec::new();
    let mut dirs = Vec::new();
    for seed in SEEDS {
        eprintln!("[acceptance] planted pipeline, seed {seed}");
        let dir = root.path().join(format!("seed{seed}"));
        runs.push(run_pipeline(planted_config(seed), &dir));
        dirs.push(dir);
    }
    results.push(planted_recovery(&runs));
    results.push(beats_full_set(&runs));
    results.push(collector_value(&runs, &dirs));
    results.push(ascent_monotonicity(&runs[0], &dirs[0]));

    eprintln!("[acceptance] determinism rerun, seed {}", SEEDS[0]);
    let again_dir = root.path().join("seed1-again");
    let again = run_pipeline(planted_config(SEEDS[0]), &again_dir);
    results.push(protocol_integrity(&runs[0], &dirs[0], &again, &again_dir));

    results.sort_by_key(|o| o.id);
    println!();
    let mut unexpected = Vec::new();
    for o in &results {
        let known = KNOWN_UNMET.contains(&o.id);
        let tag = match (o.pass, known) {
            (true, false) => "PASS",
            (true, true) => "PASS (listed as known-unmet; update KNOWN_UNMET)",
            (false, true) => "FAIL (known, see README)",
            (false, false) => "FAIL",
        };
        println!("{tag:<5} criterion {:>2} {}: {}", o.id, o.name, o.detail);
        if !o.pass && !known {
            unexpected.push(o.id);
        }
    }
    let passed = results.iter().filter(|o| o.pass).count();
    println!(
        "\nacceptance: {passed}/{} criteria pass; unexpected failures: {:?} ({:.0}s)",
        results.len(),
        unexpected,
        started.elapsed().as_secs_f64()
    );
    if !unexpected.is_empty() {
        std::process::exit(1);
    }
}
