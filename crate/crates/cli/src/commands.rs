use std::path::Path;
use std::sync::Arc;

use anyhow::{bail, ensure, Context, Result};
use convrisk::bundle::ModelBundle;
use convrisk::dataset::{
    generate_synthetic_dataset, labels_of, load_dataset_with_schema, sample_few_shot, split_dataset, write_dataset,
    PatientRecord, QuestionnaireSchema, SyntheticSpec,
};
use convrisk::evaluation::{parse_report_json, render_report, run_benchmark_with_progress, BenchmarkConfig};
use convrisk::microlm::{
    finetune_lora, interpretation_examples, pretrain, record_examples, top_features, LoraConfig, MicroLm,
    MicroLmConfig, Tokenizer, TrainingHyper,
};
use convrisk::serialization::{serialize_answers, TemplateKind};
use convrisk_service::{ModelRegistry, SessionService, SessionStore, UserDirectory};
use serde::Serialize;

use crate::args::*;

fn load_schema(arg: &SchemaArg) -> Result<QuestionnaireSchema> {
    match &arg.schema {
        Some(p) => QuestionnaireSchema::load(p).with_context(|| format!("loading schema {}", p.display())),
        None => Ok(QuestionnaireSchema::covid_default()),
    }
}

fn load_records(path: &Path, schema: &QuestionnaireSchema) -> Result<Vec<PatientRecord>> {
    load_dataset_with_schema(path, schema).with_context(|| format!("loading dataset {}", path.display()))
}

fn load_bundle(dir: &Path) -> Result<ModelBundle> {
    ModelBundle::load(dir).with_context(|| format!("loading model bundle {}", dir.display()))
}

fn print_json<T: Serialize>(value: &T) {
    println!("{}", serde_json::to_string_pretty(value).expect("serializable"));
}

fn write_output(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn lora_config(a: &LoraArgs) -> LoraConfig {
    LoraConfig { rank: a.rank, alpha: a.alpha, targets: a.targets.clone() }
}

fn lora_hyper(a: &LoraArgs, seed: u64) -> TrainingHyper {
    TrainingHyper { steps: a.finetune_steps, learning_rate: a.learning_rate, seed, ..TrainingHyper::lora() }
}

pub fn gen_data(a: &GenDataArgs) -> Result<()> {
    let schema = load_schema(&a.schema)?;
    let mut weights = vec![0.0; schema.d()];
    for pair in &a.weights {
        let (id, w) = pair.split_once(':').with_context(|| format!("weight `{pair}` is not `feature_id:weight`"))?;
        let id: u32 = id.trim().parse().with_context(|| format!("feature id in `{pair}`"))?;
        let w: f64 = w.trim().parse().with_context(|| format!("weight in `{pair}`"))?;
        let pos = schema.position(id).with_context(|| format!("no feature {id} in the schema"))?;
        weights[pos] = w;
    }
    let spec = SyntheticSpec { n: a.n, seed: a.seed, prevalence: a.prevalence, signal_weights: weights };
    let records = generate_synthetic_dataset(&spec, &schema)?;
    write_dataset(&a.out, &schema, &records)?;
    if let Some(p) = &a.schema_out {
        write_output(p, &schema.to_json())?;
    }
    let positives = records.iter().filter(|r| r.label == Some(1)).count();
    eprintln!("wrote {} records ({positives} positive) to {}", records.len(), a.out.display());
    Ok(())
}

pub fn pretrain_cmd(a: &PretrainArgs) -> Result<()> {
    let schema = load_schema(&a.schema)?;
    let records = load_records(&a.data, &schema)?;
    let tokenizer = Tokenizer::build(&schema);
    let mut corpus = record_examples(&records, &schema, &a.corpus_templates, &tokenizer)?;
    if !a.no_interpretation {
        corpus.extend(interpretation_examples(&schema, &tokenizer));
    }
    let mut cfg = MicroLmConfig::new(tokenizer.vocab_size());
    cfg.n_layers = a.layers.unwrap_or(cfg.n_layers);
    cfg.n_heads = a.heads.unwrap_or(cfg.n_heads);
    if let Some(d) = a.d_model {
        cfg.d_model = d;
        cfg.d_ff = 4 * d;
    }
    cfg.d_ff = a.d_ff.unwrap_or(cfg.d_ff);
    cfg.context_length = a.context_length.unwrap_or(cfg.context_length);
    cfg.precision = a.precision.into();
    cfg.validate()?;
    let hyper = TrainingHyper {
        steps: a.steps,
        learning_rate: a.learning_rate,
        batch_size: Some(a.batch_size),
        seed: a.seed,
        ..TrainingHyper::pretraining()
    };
    let out = pretrain(&cfg, &corpus, &hyper)?;
    let lm = MicroLm::new(tokenizer, out.weights, None)?;
    let bundle = ModelBundle::new(schema, a.template, lm)?;
    bundle.save(&a.out)?;
    let tail = &out.loss_trace[out.loss_trace.len().saturating_sub(20)..];
    let final_loss = tail.iter().sum::<f64>() / tail.len().max(1) as f64;
    eprintln!(
        "pre-trained on {} examples for {} steps, final loss {final_loss:.4}; bundle written to {}",
        corpus.len(),
        a.steps,
        a.out.display()
    );
    Ok(())
}

pub fn finetune_cmd(a: &FinetuneArgs) -> Result<()> {
    let base = load_bundle(&a.model)?;
    ensure!(base.model.adapter.is_none(), "{} already carries an adapter; fine-tune from a base bundle", a.model.display());
    let template = a.template.unwrap_or(base.template());
    let records = load_records(&a.data, &base.schema)?;
    let labels = labels_of(&records)?;
    let split = split_dataset(records.len(), a.seed)?;
    let shots = sample_few_shot(&split.train, &labels, a.shots, a.seed)?;
    let pick = |idx: &[usize]| -> Vec<PatientRecord> { idx.iter().map(|&i| records[i].clone()).collect() };
    let tok = base.tokenizer();
    let train = record_examples(&pick(&shots), &base.schema, &[template], tok)?;
    let val = record_examples(&pick(&split.validation), &base.schema, &[template], tok)?;
    let out = finetune_lora(&base.model.weights, &train, &val, &lora_config(&a.lora), &lora_hyper(&a.lora, a.seed))?;
    let lm = MicroLm::new(tok.clone(), base.model.weights.clone(), Some(out.adapter))?;
    ModelBundle::new(base.schema.clone(), template, lm)?.save(&a.out)?;
    eprintln!(
        "fine-tuned on {} shots; best validation loss {:.4} at step {}; bundle written to {}",
        shots.len(),
        out.best_val_loss,
        out.best_step,
        a.out.display()
    );
    Ok(())
}

fn scored(a: &RecordArgs) -> Result<(ModelBundle, convrisk::microlm::ScoreOutput)> {
    let bundle = load_bundle(&a.model)?;
    ensure!(
        a.record.len() == bundle.schema.d(),
        "record has {} answers but the schema has {} questions",
        a.record.len(),
        bundle.schema.d()
    );
    if let Some(v) = a.record.iter().find(|&&v| v > 1) {
        bail!("answer {v} is not binary");
    }
    let template: TemplateKind = a.template.unwrap_or(bundle.template());
    let prompt = serialize_answers(&a.record, &bundle.schema, template, bundle.tokenizer())?;
    let score = bundle.model.score_with_importance(&prompt)?;
    Ok((bundle, score))
}

#[derive(Serialize)]
struct ScoreLine {
    p_yes: f64,
    p_no: f64,
    predicted_label: u8,
    logit_yes: f64,
    logit_no: f64,
}

pub fn score(a: &RecordArgs) -> Result<()> {
    let (_, s) = scored(a)?;
    print_json(&ScoreLine {
        p_yes: s.p_yes,
        p_no: s.p_no(),
        predicted_label: s.predicted_label,
        logit_yes: s.logit_yes,
        logit_no: s.logit_no,
    });
    Ok(())
}

#[derive(Serialize)]
struct FeatureLine {
    feature_id: u32,
    name: String,
    importance: f64,
}

#[derive(Serialize)]
struct Explanation {
    p_yes: f64,
    predicted_label: u8,
    features: Vec<FeatureLine>,
}

pub fn explain(a: &ExplainArgs) -> Result<()> {
    let (bundle, s) = scored(&a.record)?;
    let importance = s.importance.clone().expect("importance requested");
    let ids: Vec<u32> = bundle.schema.features().iter().map(|f| f.id).collect();
    let pairs = match a.top {
        Some(k) => top_features(&importance, &ids, k),
        None => ids.iter().copied().zip(importance.iter().copied()).collect(),
    };
    let features = pairs
        .into_iter()
        .map(|(feature_id, importance)| FeatureLine {
            feature_id,
            name: bundle.schema.feature(feature_id).expect("schema id").name.clone(),
            importance,
        })
        .collect();
    print_json(&Explanation { p_yes: s.p_yes, predicted_label: s.predicted_label, features });
    Ok(())
}

pub fn benchmark(a: &BenchmarkArgs) -> Result<()> {
    let bundle = a.model.as_deref().map(load_bundle).transpose()?;
    let schema = match &bundle {
        Some(b) if a.schema.schema.is_none() => b.schema.clone(),
        _ => load_schema(&a.schema)?,
    };
    if let Some(b) = &bundle {
        ensure!(b.schema == schema, "the bundle's questionnaire differs from --schema");
        ensure!(b.model.adapter.is_none(), "benchmark expects a base bundle without an adapter");
    }
    let records = load_records(&a.data, &schema)?;
    let config = BenchmarkConfig {
        seeds: a.seeds.clone(),
        shots: a.shots.clone(),
        templates: a.templates.clone(),
        baselines: a.baselines.clone(),
        model_name: a.model_name.clone(),
        lora: lora_config(&a.lora),
        finetune: lora_hyper(&a.lora, 0),
        ..BenchmarkConfig::default()
    };
    config.validate()?;
    let quiet = a.quiet;
    let report = run_benchmark_with_progress(&schema, &records, bundle.as_ref().map(|b| &b.model), &config, &mut |p| {
        if !quiet {
            match (&p.result.auc, &p.result.error) {
                (Some(auc), _) => eprintln!("{} k={} seed={} auc={auc:.4}", p.row, p.shots, p.seed),
                (_, Some(e)) => eprintln!("{} k={} seed={} error: {e}", p.row, p.shots, p.seed),
                _ => {}
            }
        }
    })?;
    if let Some(out) = &a.out {
        write_output(out, &render_report(&report, convrisk::evaluation::ReportFormat::Json))?;
    }
    print!("{}", render_report(&report, a.format));
    Ok(())
}

pub fn render(a: &RenderArgs) -> Result<()> {
    let text = std::fs::read_to_string(&a.report).with_context(|| format!("reading {}", a.report.display()))?;
    let report = parse_report_json(&text).with_context(|| format!("parsing {}", a.report.display()))?;
    let rendered = render_report(&report, a.format);
    match &a.out {
        Some(p) => write_output(p, &rendered),
        None => {
            print!("{rendered}");
            Ok(())
        }
    }
}

pub fn serve(a: &ServeArgs) -> Result<()> {
    let users = UserDirectory::load(&a.users).map_err(anyhow::Error::msg)?;
    let bundle = load_bundle(&a.model)?;
    let store = SessionStore::open(&a.store).map_err(|e| anyhow::anyhow!("opening {}: {e}", a.store.display()))?;
    let service = Arc::new(SessionService::new(users, store, ModelRegistry::new(bundle)));
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(a.addr).await.with_context(|| format!("binding {}", a.addr))?;
        eprintln!("listening on http://{}", listener.local_addr()?);
        convrisk_service::serve(listener, service, async {
            let _ = tokio::signal::ctrl_c().await;
        })
        .await?;
        Ok(())
    })
}
