//! Acceptance criteria. Each test prints one `ACCEPTANCE PASS|FAIL` line to
//! the real stderr (bypassing the test harness capture) and then asserts.

use std::fmt::Display;
use std::io::{BufRead, BufReader, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::OnceLock;
use std::time::Instant;

use convrisk::baselines::{fit, BaselineHyper, BaselineKind};
use convrisk::bundle::ModelBundle;
use convrisk::dataset::{
    generate_synthetic_dataset, labels_of, sample_few_shot, split_dataset, PatientRecord, QuestionnaireSchema,
    SyntheticSpec,
};
use convrisk::evaluation::{
    auc, format_cell_value, render_report, run_benchmark, BenchmarkConfig, CellStatus, ReportFormat, DEFAULT_SEEDS,
    NOT_APPLICABLE,
};
use convrisk::microlm::{
    finetune_lora, forward, gradient_check, interpretation_examples, merge_adapter, predicted_label, pretrain,
    record_examples, Example, GradCheckOptions, LoraAdapter, LoraConfig, MicroLm, MicroLmConfig, MicroLmWeights,
    Projection, ScoreOutput, Tokenizer, TrainingHyper,
};
use convrisk::rng::SeededRng;
use convrisk::serialization::{parse_prompt, serialize, TemplateKind};

type Outcome = Result<String, String>;

/// Runs one criterion, prints its verdict line and fails the test on FAIL.
fn criterion(name: &str, body: impl FnOnce() -> Outcome) {
    let start = Instant::now();
    let outcome = match catch_unwind(AssertUnwindSafe(body)) {
        Ok(r) => r,
        Err(p) => Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_else(|| "panicked".into())),
    };
    let secs = start.elapsed().as_secs_f64();
    let (verdict, detail) = match &outcome {
        Ok(d) => ("PASS", d),
        Err(d) => ("FAIL", d),
    };
    let line = format!("ACCEPTANCE {verdict} {name} ({secs:.1}s): {detail}\n");
    let _ = std::io::stderr().lock().write_all(line.as_bytes());
    assert!(outcome.is_ok(), "{line}");
}

fn check(ok: bool, msg: impl Display) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.to_string())
    }
}

fn weights(pairs: &[(u32, f64)], rest: f64) -> Vec<f64> {
    let mut w = vec![rest; 15];
    for &(id, v) in pairs {
        w[id as usize - 1] = v;
    }
    w
}

fn schema() -> QuestionnaireSchema {
    QuestionnaireSchema::covid_default()
}

fn random_record(rng: &mut SeededRng, d: usize) -> PatientRecord {
    PatientRecord::new((0..d).map(|_| u8::from(rng.bernoulli(0.5))).collect(), None).unwrap()
}

fn tiny_config(tok: &Tokenizer, layers: usize) -> MicroLmConfig {
    MicroLmConfig { n_layers: layers, d_model: 16, d_ff: 32, n_heads: 2, ..MicroLmConfig::new(tok.vocab_size()) }
}

fn random_adapter(w: &MicroLmWeights, cfg: &LoraConfig, seed: u64, scale: f64) -> LoraAdapter {
    let mut a = LoraAdapter::init(w, cfg, seed).unwrap();
    let mut rng = SeededRng::derive(seed, 77);
    for t in a.tensors_mut() {
        t.data.iter_mut().for_each(|v| *v = scale * rng.normal());
    }
    a
}

// ---------------------------------------------------------------------------

#[test]
fn softmax_score_contract() {
    criterion("softmax/score contract", || {
        let schema = schema();
        let tok = Tokenizer::build(&schema);
        let mut rng = SeededRng::new(2024);
        let mut worst: f64 = 0.0;
        let mut n = 0;
        for m in 0..100u64 {
            let w = MicroLmWeights::init(&tiny_config(&tok, 1), m);
            let lm = MicroLm::new(tok.clone(), w, None).unwrap();
            for i in 0..100 {
                let r = random_record(&mut rng, schema.d());
                let p = serialize(&r, &schema, TemplateKind::ALL[i % 2], &tok).unwrap();
                let s = lm.score(&p).unwrap();
                worst = worst.max((s.p_yes + s.p_no() - 1.0).abs());
                check(s.predicted_label == u8::from(s.p_yes > 0.5), "label rule violated")?;
                n += 1;
            }
        }
        for _ in 0..10_000 {
            let scale = 10f64.powf(rng.uniform() * 6.0 - 3.0);
            let s = ScoreOutput::from_logits(scale * rng.normal(), scale * rng.normal());
            worst = worst.max((s.p_yes + s.p_no() - 1.0).abs());
            n += 1;
        }
        check(worst <= 1e-12, format!("max |p_yes + p_no - 1| = {worst:e}"))?;
        check(predicted_label(0.5) == 0, "p = 0.5 must map to label 0")?;
        for x in [-3.0, 0.0, 0.7, 1e3] {
            let s = ScoreOutput::from_logits(x, x);
            check(s.p_yes == 0.5 && s.predicted_label == 0, format!("equal logits {x}"))?;
        }
        Ok(format!("{n} scores, max |p_yes + p_no - 1| = {worst:.1e}; p = 0.5 -> label 0"))
    });
}

#[test]
fn lora_invariants() {
    criterion("LoRA invariants", || {
        let schema = schema();
        let tok = Tokenizer::build(&schema);
        let w = MicroLmWeights::init(&tiny_config(&tok, 2), 11);
        let mut rng = SeededRng::new(5);
        let prompts: Vec<Vec<u32>> = (0..100)
            .map(|i| serialize(&random_record(&mut rng, 15), &schema, TemplateKind::ALL[i % 2], &tok).unwrap().token_ids)
            .collect();

        let zero = LoraAdapter::init(&w, &LoraConfig::default(), 3).unwrap();
        for ids in &prompts {
            let a = forward(&w, None, ids).unwrap().logits;
            let b = forward(&w, Some(&zero), ids).unwrap().logits;
            check(a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits()), "zero-init adapter changed logits")?;
        }

        let records = generate_synthetic_dataset(
            &SyntheticSpec { n: 40, seed: 3, prevalence: 0.5, signal_weights: weights(&[(15, 2.0)], 0.0) },
            &schema,
        )
        .unwrap();
        let shots = record_examples(&records[..16], &schema, &[TemplateKind::List], &tok).unwrap();
        let val = record_examples(&records[16..], &schema, &[TemplateKind::List], &tok).unwrap();
        let before = w.fingerprint();
        let hyper = TrainingHyper { steps: 200, learning_rate: 1e-2, ..TrainingHyper::lora() };
        let out = finetune_lora(&w, &shots, &val, &LoraConfig::default(), &hyper).unwrap();
        check(w.fingerprint() == before, "base weights changed during fine-tuning")?;
        let trained = out.final_adapter;
        check(trained.tensors().iter().any(|t| t.data.iter().any(|&v| v != 0.0)), "adapter did not move")?;

        let merged = merge_adapter(&w, &trained).unwrap();
        let mut worst: f64 = 0.0;
        for ids in &prompts {
            let a = forward(&w, Some(&trained), ids).unwrap().logits;
            let b = forward(&merged, None, ids).unwrap().logits;
            let scale = a.iter().fold(0f64, |m, v| m.max(v.abs()));
            let diff = a.iter().zip(b.iter()).fold(0f64, |m, (x, y)| m.max((x - y).abs()));
            worst = worst.max(diff / scale);
        }
        check(worst < 1e-6, format!("merge vs dynamic relative error {worst:e}"))?;

        let (l, d) = (w.config.n_layers, w.config.d_model);
        for (rank, targets) in [(4, vec![Projection::Q, Projection::V]), (2, Projection::ALL.to_vec()), (8, vec![Projection::K])] {
            let cfg = LoraConfig { rank, alpha: 8.0, targets: targets.clone() };
            let got = LoraAdapter::init(&w, &cfg, 1).unwrap().trainable_parameter_count();
            let want = l * targets.len() * rank * (d + d);
            check(got == want, format!("rank {rank} {targets:?}: {got} != {want}"))?;
        }
        Ok(format!("zero-init bitwise on 100 prompts; base frozen over 200 steps; merge rel err {worst:.1e}; counts exact"))
    });
}

#[test]
fn gradient_oracle() {
    criterion("gradient oracle", || {
        let schema = schema();
        let tok = Tokenizer::build(&schema);
        let mut worst: f64 = 0.0;
        let mut checked = 0;
        for b in 0..5u64 {
            let w = MicroLmWeights::init(&tiny_config(&tok, 2), 100 + b);
            let targets = if b == 4 { Projection::ALL.to_vec() } else { vec![Projection::Q, Projection::V] };
            let a = random_adapter(&w, &LoraConfig { targets, ..LoraConfig::default() }, b, 0.1);
            let mut rng = SeededRng::new(b);
            let batch: Vec<Example> = (0..3)
                .map(|i| {
                    let p = serialize(&random_record(&mut rng, 15), &schema, TemplateKind::ALL[i % 2], &tok).unwrap();
                    Example::labeled(p.token_ids, u8::from(rng.bernoulli(0.5)), &tok)
                })
                .collect();
            let report = gradient_check(&w, &a, &batch, &GradCheckOptions::default()).unwrap();
            check(report.checked == a.trainable_parameter_count(), "not every adapter entry was checked")?;
            if report.max_relative_error > worst {
                worst = report.max_relative_error;
            }
            checked += report.checked;
        }
        check(worst < 1e-4, format!("max relative error {worst:e}"))?;
        Ok(format!("5 batches, {checked} adapter entries, step 1e-5, max relative error {worst:.1e}"))
    });
}

fn pair_count_auc(scores: &[f64], labels: &[u8]) -> f64 {
    let (mut twice, mut p, mut n) = (0u64, 0u64, 0u64);
    for (i, &si) in scores.iter().enumerate() {
        if labels[i] != 1 {
            continue;
        }
        p += 1;
        for (j, &sj) in scores.iter().enumerate() {
            if labels[j] == 0 {
                twice += if si > sj { 2 } else if si == sj { 1 } else { 0 };
            }
        }
    }
    for &l in labels {
        n += u64::from(l == 0);
    }
    twice as f64 / (2 * p * n) as f64
}

#[test]
fn auc_oracle() {
    criterion("AUC oracle", || {
        let mut rng = SeededRng::new(99);
        let mut ties = 0;
        for case in 0..1000 {
            let n = 2 + rng.below(60);
            let levels = 1 + rng.below(8);
            let mut labels: Vec<u8> = (0..n).map(|_| u8::from(rng.bernoulli(0.4))).collect();
            labels[0] = 0;
            labels[1] = 1;
            let scores: Vec<f64> = (0..n).map(|_| rng.below(levels) as f64 / levels as f64).collect();
            if scores.iter().enumerate().any(|(i, s)| scores[..i].contains(s)) {
                ties += 1;
            }
            let got = auc(&scores, &labels).unwrap();
            let want = pair_count_auc(&scores, &labels);
            check(got.to_bits() == want.to_bits(), format!("case {case}: {got} != {want}"))?;
            let negated: Vec<f64> = scores.iter().map(|s| -s).collect();
            let sym = auc(&negated, &labels).unwrap();
            check((sym - (1.0 - got)).abs() < 1e-12, format!("case {case}: symmetry {sym} vs {}", 1.0 - got))?;
            let warped: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + s.powi(3)).collect();
            check(auc(&warped, &labels).unwrap() == got, format!("case {case}: monotone transform changed AUC"))?;
        }
        Ok(format!("1000 instances ({ties} with ties) equal to the pair count; symmetry and monotone invariance hold"))
    });
}

fn target_cohort() -> Vec<PatientRecord> {
    generate_synthetic_dataset(
        &SyntheticSpec { n: 393, seed: 7, prevalence: 0.28, signal_weights: weights(&[(15, 2.0), (13, 1.5), (9, 1.0), (12, 1.0)], 0.0) },
        &schema(),
    )
    .unwrap()
}

#[test]
fn few_shot_protocol() {
    criterion("few-shot protocol", || {
        let schema = schema();
        let records = target_cohort();
        let labels = labels_of(&records).unwrap();
        for seed in DEFAULT_SEEDS {
            let split = split_dataset(records.len(), seed).unwrap();
            check(split == split_dataset(records.len(), seed).unwrap(), "split not deterministic")?;
            for k in [2, 4, 8, 16, 32] {
                let shots = sample_few_shot(&split.train, &labels, k, seed).unwrap();
                let pos = shots.iter().filter(|&&i| labels[i] == 1).count();
                let mut uniq = shots.clone();
                uniq.sort();
                uniq.dedup();
                check(shots.len() == k && pos == k / 2, format!("seed {seed} k {k}: {pos} positives of {}", shots.len()))?;
                check(uniq.len() == k && shots.iter().all(|i| split.train.contains(i)), "shots repeat or leave the train split")?;
                check(shots == sample_few_shot(&split.train, &labels, k, seed).unwrap(), "sampling not deterministic")?;
            }
        }

        let tok = Tokenizer::build(&schema);
        let lm = MicroLm::new(tok.clone(), MicroLmWeights::init(&tiny_config(&tok, 1), 1), None).unwrap();
        let config = BenchmarkConfig {
            finetune: TrainingHyper { steps: 2, eval_every: 1, ..TrainingHyper::lora() },
            ..BenchmarkConfig::default()
        };
        let run = || {
            let r = run_benchmark(&schema, &records, Some(&lm), &config).unwrap();
            (render_report(&r, ReportFormat::Json), render_report(&r, ReportFormat::Csv))
        };
        let first = run();
        check(first == run(), "benchmark rerun differs")?;
        Ok(format!("5 seeds x k in {{2,4,8,16,32}} exactly balanced and repeatable; {}-byte report rerun identical", first.0.len()))
    });
}

// ---------------------------------------------------------------------------

fn cli() -> Command {
    Command::new(env!("CARGO_BIN_EXE_convrisk"))
}

fn run_cli(args: &[&str]) -> Result<String, String> {
    let out = cli().args(args).output().map_err(|e| e.to_string())?;
    if !out.status.success() {
        return Err(format!("convrisk {} failed: {}", args.join(" "), String::from_utf8_lossy(&out.stderr)));
    }
    Ok(String::from_utf8(out.stdout).unwrap())
}

fn is_cell(s: &str) -> bool {
    let b = s.as_bytes();
    b.len() == 10
        && b[0].is_ascii_digit()
        && b[1] == b'.'
        && b[2..4].iter().all(u8::is_ascii_digit)
        && &s[4..7] == "_{."
        && b[7..9].iter().all(u8::is_ascii_digit)
        && b[9] == b'}'
}

#[test]
fn table_structure_via_cli() {
    criterion("Table-1 structure", || {
        let dir = tempfile::tempdir().unwrap();
        let p = |name: &str| dir.path().join(name).to_str().unwrap().to_string();
        run_cli(&["gen-data", "--out", &p("target.csv")])?;
        run_cli(&["gen-data", "--out", &p("related.csv"), "--n", "256", "--seed", "8"])?;
        run_cli(&[
            "pretrain", "--data", &p("related.csv"), "--out", &p("base"), "--steps", "20", "--batch-size", "8",
            "--layers", "1", "--d-model", "16", "--heads", "2",
        ])?;
        let bench = |out: &str| {
            run_cli(&[
                "benchmark", "--data", &p("target.csv"), "--model", &p("base"), "--shots", "0,2,4,8,16,32", "--seeds",
                "0,1,32,42,1024", "--finetune-steps", "2", "--out", &p(out), "--quiet",
            ])
        };
        let table = bench("a.json")?;
        let again = bench("b.json")?;
        check(table == again, "table differs between reruns")?;
        let (a, b) = (std::fs::read(p("a.json")).unwrap(), std::fs::read(p("b.json")).unwrap());
        check(a == b, "report JSON differs between reruns")?;
        check(run_cli(&["render", "--report", &p("a.json")])? == table, "render of the saved report differs")?;

        let rows: Vec<Vec<String>> = table
            .lines()
            .filter(|l| !l.starts_with('-'))
            .map(|l| l.split('|').map(|c| c.trim().to_string()).collect())
            .collect();
        check(rows[0][1..] == ["0", "2", "4", "8", "16", "32"], format!("header {:?}", rows[0]))?;
        let labels: Vec<&str> = rows[1..].iter().map(|r| r[0].as_str()).collect();
        let want = ["MicroLM-L", "MicroLM-T", "Logistic Regression", "Random Forest", "Gradient Boosted Trees"];
        check(labels == want, format!("rows {labels:?}"))?;
        for r in &rows[1..] {
            check(r.len() == 7, format!("{} has {} cells", r[0], r.len() - 1))?;
            let baseline = !r[0].starts_with("MicroLM");
            for (i, c) in r[1..].iter().enumerate() {
                let ok = if baseline && i == 0 { c == NOT_APPLICABLE } else { is_cell(c) };
                check(ok, format!("{} column {}: {c:?}", r[0], rows[0][i + 1]))?;
            }
        }
        let rules = table.lines().filter(|l| l.starts_with('-')).count();
        check(rules == 3, format!("{rules} rules"))?;
        Ok(format!("6 shot columns, 5 rows, baselines \"{NOT_APPLICABLE}\" at 0 shots, mean_{{std}} cells, reruns byte-identical"))
    });
}

// ---------------------------------------------------------------------------

/// Base model pre-trained on a related cohort whose outcome depends on an
/// overlapping set of questions.
fn related_task_model() -> &'static MicroLm {
    static MODEL: OnceLock<MicroLm> = OnceLock::new();
    MODEL.get_or_init(|| {
        let schema = schema();
        let tok = Tokenizer::build(&schema);
        let related = generate_synthetic_dataset(
            &SyntheticSpec { n: 1024, seed: 8, prevalence: 0.3, signal_weights: weights(&[(15, 1.8), (13, 1.2), (9, 1.2), (14, 0.8)], 0.0) },
            &schema,
        )
        .unwrap();
        let corpus = record_examples(&related, &schema, &TemplateKind::ALL, &tok).unwrap();
        let cfg = MicroLmConfig { context_length: 128, ..MicroLmConfig::new(tok.vocab_size()) };
        let hyper = TrainingHyper { steps: 300, batch_size: Some(16), ..TrainingHyper::pretraining() };
        let w = pretrain(&cfg, &corpus, &hyper).unwrap().weights;
        MicroLm::new(tok, w, None).unwrap()
    })
}

#[test]
fn behavioral_low_data_analog() {
    criterion("behavioral low-data analog", || {
        let schema = schema();
        let records = target_cohort();
        let lm = related_task_model();
        let config = BenchmarkConfig { shots: vec![2], ..BenchmarkConfig::default() };
        let report = run_benchmark(&schema, &records, Some(lm), &config).unwrap();
        let mean = |label: &str| report.row(label).and_then(|r| r.cell(2)).and_then(|c| c.mean).unwrap();
        let baselines: Vec<(String, f64)> =
            BaselineKind::ALL.iter().map(|b| (b.to_string(), mean(&b.to_string()))).collect();
        let lm_means = [("MicroLM-L", mean("MicroLM-L")), ("MicroLM-T", mean("MicroLM-T"))];
        let winners: Vec<&str> = lm_means
            .iter()
            .filter(|(_, m)| baselines.iter().all(|(_, b)| m >= b))
            .map(|(l, _)| *l)
            .collect();

        let gbt_only = BenchmarkConfig {
            shots: vec![2, 4, 8],
            baselines: vec![BaselineKind::GradientBoostedTrees],
            ..BenchmarkConfig::default()
        };
        let gbt = run_benchmark(&schema, &records, None, &gbt_only).unwrap();
        let row = gbt.row("Gradient Boosted Trees").unwrap();
        let mut gbt_cells = Vec::new();
        for c in &row.cells {
            let s = format_cell_value(c.mean.unwrap(), c.std.unwrap());
            check(c.status == CellStatus::Ok && c.mean == Some(0.5) && c.std == Some(0.0), format!("GBT k={}: {s}", c.shots))?;
            gbt_cells.push(s);
        }
        let labels = labels_of(&records).unwrap();
        let x: Vec<Vec<u8>> = records.iter().map(|r| r.values.clone()).collect();
        for seed in DEFAULT_SEEDS {
            let split = split_dataset(records.len(), seed).unwrap();
            for k in [2, 4, 8] {
                let idx = sample_few_shot(&split.train, &labels, k, seed).unwrap();
                let xs: Vec<Vec<u8>> = idx.iter().map(|&i| x[i].clone()).collect();
                let ys: Vec<u8> = idx.iter().map(|&i| labels[i]).collect();
                let m = fit(BaselineKind::GradientBoostedTrees, &xs, &ys, &BaselineHyper::default(), seed).unwrap();
                check(m.is_constant(), format!("GBT not constant at k={k} seed {seed}"))?;
            }
        }
        let summary = format!(
            "2-shot means L {:.3} T {:.3} vs {}; GBT k=2,4,8 {}",
            lm_means[0].1,
            lm_means[1].1,
            baselines.iter().map(|(l, m)| format!("{l} {m:.3}")).collect::<Vec<_>>().join(", "),
            gbt_cells.join(" ")
        );
        check(!winners.is_empty(), format!("no template beats every baseline: {summary}"))?;
        Ok(format!("{summary}; ordering holds for {winners:?}"))
    });
}

/// One-layer base pre-trained on a cohort where every question carries some
/// signal, plus answer interpretation, so attention is spread over features.
fn planted_base() -> &'static MicroLmWeights {
    static BASE: OnceLock<MicroLmWeights> = OnceLock::new();
    BASE.get_or_init(|| {
        let schema = schema();
        let tok = Tokenizer::build(&schema);
        let related = generate_synthetic_dataset(
            &SyntheticSpec { n: 512, seed: 8, prevalence: 0.3, signal_weights: weights(&[(15, 1.8), (13, 1.2), (9, 1.2), (14, 0.8)], 0.6) },
            &schema,
        )
        .unwrap();
        let mut corpus = record_examples(&related, &schema, &TemplateKind::ALL, &tok).unwrap();
        corpus.extend(interpretation_examples(&schema, &tok));
        let cfg = MicroLmConfig { n_layers: 1, context_length: 128, ..MicroLmConfig::new(tok.vocab_size()) };
        let hyper = TrainingHyper { steps: 400, batch_size: Some(16), ..TrainingHyper::pretraining() };
        pretrain(&cfg, &corpus, &hyper).unwrap().weights
    })
}

#[test]
fn planted_signal_importance() {
    criterion("feature importance", || {
        let schema = schema();
        let tok = Tokenizer::build(&schema);
        let base = planted_base();
        let lora = LoraConfig { targets: Projection::ALL.to_vec(), ..LoraConfig::default() };
        let mut hits = 0;
        let mut ranks = Vec::new();
        let mut vectors = 0;
        for (i, (seed, j)) in [(0u64, 2usize), (1, 5), (32, 7), (42, 10), (1024, 11)].into_iter().enumerate() {
            let mut recs = generate_synthetic_dataset(
                &SyntheticSpec { n: 200, seed: 100 + seed, prevalence: 0.5, signal_weights: vec![0.0; 15] },
                &schema,
            )
            .unwrap();
            for r in &mut recs {
                r.label = Some(r.values[j - 1]);
            }
            let labels = labels_of(&recs).unwrap();
            let split = split_dataset(recs.len(), seed).unwrap();
            let shots = sample_few_shot(&split.train, &labels, 32, seed).unwrap();
            let t = TemplateKind::ALL[i % 2];
            let ex = |idx: &[usize]| {
                let rs: Vec<PatientRecord> = idx.iter().map(|&i| recs[i].clone()).collect();
                record_examples(&rs, &schema, &[t], &tok).unwrap()
            };
            let hyper = TrainingHyper { seed, learning_rate: 1e-2, ..TrainingHyper::lora() };
            let out = finetune_lora(base, &ex(&shots), &ex(&split.validation), &lora, &hyper).unwrap();
            let lm = MicroLm::new(tok.clone(), base.clone(), Some(out.adapter)).unwrap();
            let mut mean = vec![0.0; 15];
            for &ti in &split.test {
                let imp = lm.feature_importance(&serialize(&recs[ti], &schema, t, &tok).unwrap()).unwrap();
                check(imp.iter().all(|&v| v >= 0.0), "negative importance")?;
                let sum: f64 = imp.iter().sum();
                check((sum - 1.0).abs() <= 1e-9, format!("importance sums to {sum}"))?;
                vectors += 1;
                for (m, v) in mean.iter_mut().zip(imp) {
                    *m += v;
                }
            }
            let mut order: Vec<usize> = (0..15).collect();
            order.sort_by(|&a, &b| mean[b].total_cmp(&mean[a]));
            let rank = order.iter().position(|&f| f == j - 1).unwrap() + 1;
            ranks.push(format!("f{j}:{rank}"));
            hits += usize::from(rank <= 3);
        }
        let summary = format!("{vectors} vectors valid; planted feature ranks {}; top-3 in {hits}/5", ranks.join(" "));
        check(hits >= 4, &summary)?;
        Ok(summary)
    });
}

#[test]
fn serialization_round_trip() {
    criterion("serialization round trip", || {
        let schema = schema();
        let tok = Tokenizer::build(&schema);
        let mut rng = SeededRng::new(1000);
        for i in 0..1000 {
            let r = random_record(&mut rng, schema.d());
            for t in TemplateKind::ALL {
                let p = serialize(&r, &schema, t, &tok).unwrap();
                let back = parse_prompt(&p.text, &schema, t).map_err(|e| format!("record {i} {t}: {e}"))?;
                check(back.values == r.values, format!("record {i} {t}: values differ"))?;
                check(tok.decode(&p.token_ids) == p.text, format!("record {i} {t}: tokens do not detokenize to the text"))?;
            }
        }
        Ok("1000 random records x 2 templates parse back to the same answers".into())
    });
}

// ---------------------------------------------------------------------------

const USERS: &str = r#"
[[users]]
id = "pat-a"
email = "a@example.org"
token = "token-a"

[[users]]
id = "pat-b"
email = "b@example.org"
token = "token-b"

[[users]]
id = "doc"
email = "doc@example.org"
is_admin = true
token = "token-doc"
"#;

struct Served {
    child: Child,
    base: String,
}

impl Served {
    fn start(dir: &Path) -> Self {
        let p = |n: &str| dir.join(n).to_str().unwrap().to_string();
        let mut child = cli()
            .args(["serve", "--addr", "127.0.0.1:0", "--store", &p("sessions.jsonl"), "--model", &p("bundle"), "--users", &p("users.toml")])
            .stderr(Stdio::piped())
            .spawn()
            .unwrap();
        let mut line = String::new();
        BufReader::new(child.stderr.take().unwrap()).read_line(&mut line).unwrap();
        let base = line.trim().strip_prefix("listening on ").unwrap_or_else(|| panic!("unexpected: {line}")).to_string();
        Self { child, base }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.base)
    }
}

impl Drop for Served {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn echo_bundle(dir: &Path) -> PathBuf {
    let schema = schema();
    let tok = Tokenizer::build(&schema);
    let cfg = MicroLmConfig { n_layers: 1, d_model: 32, d_ff: 64, n_heads: 2, ..MicroLmConfig::new(tok.vocab_size()) };
    let corpus = interpretation_examples(&schema, &tok);
    let hyper = TrainingHyper { steps: 300, batch_size: Some(16), seed: 5, ..TrainingHyper::pretraining() };
    let w = pretrain(&cfg, &corpus, &hyper).unwrap().weights;
    let path = dir.join("bundle");
    ModelBundle::new(schema, TemplateKind::Text, MicroLm::new(tok, w, None).unwrap()).unwrap().save(&path).unwrap();
    path
}

const REPLIES: [&str; 15] = [
    "yes, for two days", "no", "nope", "yes", "not at all", "yeah", "no, never", "definitely", "I don't think so",
    "yes, a little bit", "no", "yep", "none", "yes", "nah",
];

async fn service_flow(dir: &Path) -> Outcome {
    let c = reqwest::Client::new();
    let s = Served::start(dir);
    let create = |token: &'static str| {
        let req = c.post(s.url("/sessions")).bearer_auth(token);
        async move {
            let v: serde_json::Value = req.send().await.unwrap().json().await.unwrap();
            v["session"]["id"].as_str().unwrap().to_string()
        }
    };
    let a = create("token-a").await;
    let mut binary = Vec::new();
    for (i, reply) in REPLIES.iter().enumerate() {
        let q = i + 1;
        let mut text = *reply;
        loop {
            let r: serde_json::Value = c
                .post(s.url(&format!("/sessions/{a}/answers")))
                .bearer_auth("token-a")
                .json(&serde_json::json!({ "question_id": q, "text": text }))
                .send()
                .await
                .unwrap()
                .json()
                .await
                .unwrap();
            if r["answer"]["ambiguous"] == false {
                binary.push(r["answer"]["binary_answer"].as_u64().unwrap() as u8);
                break;
            }
            text = if reply.starts_with('y') || *reply == "definitely" { "yes" } else { "no" };
        }
    }
    check(binary[0] == 1, "\"yes, for two days\" was not read as yes")?;
    let done: serde_json::Value =
        c.post(s.url(&format!("/sessions/{a}/complete"))).bearer_auth("token-a").send().await.unwrap().json().await.unwrap();
    let risk = done["risk_score"].as_f64().ok_or("no risk score")?;
    let direct = ModelBundle::load(&dir.join("bundle")).unwrap().assess(&binary).unwrap().p_yes;
    check(risk.to_bits() == direct.to_bits(), format!("service {risk:?} vs library {direct:?}"))?;
    check(done["important_features"].as_array().map(Vec::len) == Some(5), "expected five important features")?;

    let b = create("token-b").await;
    let status = |token: &'static str, path: String| {
        let req = c.get(s.url(&path)).bearer_auth(token);
        async move { req.send().await.unwrap().status().as_u16() }
    };
    let matrix = [
        ("patient-own list", status("token-a", "/sessions".into()).await, 200),
        ("patient-own list filtered", status("token-a", "/sessions?patient_id=pat-a".into()).await, 200),
        ("patient-other list", status("token-a", "/sessions?patient_id=pat-b".into()).await, 403),
        ("clinician list", status("token-doc", "/sessions".into()).await, 200),
        ("clinician list filtered", status("token-doc", "/sessions?patient_id=pat-b".into()).await, 200),
        ("patient-own get", status("token-a", format!("/sessions/{a}")).await, 200),
        ("patient-other get", status("token-b", format!("/sessions/{a}")).await, 403),
        ("clinician get", status("token-doc", format!("/sessions/{b}")).await, 200),
        ("no token", c.get(s.url("/sessions")).send().await.unwrap().status().as_u16(), 401),
    ];
    for (case, got, want) in matrix {
        check(got == want, format!("{case}: HTTP {got}, expected {want}"))?;
    }
    let own: serde_json::Value = c.get(s.url("/sessions")).bearer_auth("token-a").send().await.unwrap().json().await.unwrap();
    check(own["patients"].as_array().unwrap().len() == 1, "patient list shows other patients")?;
    let all: serde_json::Value = c.get(s.url("/sessions")).bearer_auth("token-doc").send().await.unwrap().json().await.unwrap();
    check(all["patients"].as_array().unwrap().len() == 2, "clinician list is not grouped by both patients")?;

    let snapshot = |s: &Served| {
        let reqs = [
            c.get(s.url(&format!("/sessions/{a}"))).bearer_auth("token-a"),
            c.get(s.url(&format!("/sessions/{b}"))).bearer_auth("token-b"),
            c.get(s.url("/sessions")).bearer_auth("token-doc"),
        ];
        async move {
            let mut out = Vec::new();
            for r in reqs {
                out.push(r.send().await.unwrap().bytes().await.unwrap());
            }
            out
        }
    };
    let before = snapshot(&s).await;
    drop(s);
    let s = Served::start(dir);
    let after = snapshot(&s).await;
    check(before == after, "session payloads changed across restart")?;
    Ok(format!("risk {risk} bitwise equal to the library; 9-case auth matrix enforced; restart byte-equal"))
}

#[test]
fn service_end_to_end() {
    criterion("service end-to-end", || {
        let dir = tempfile::tempdir().unwrap();
        echo_bundle(dir.path());
        std::fs::write(dir.path().join("users.toml"), USERS).unwrap();
        let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
        rt.block_on(service_flow(dir.path()))
    });
}

