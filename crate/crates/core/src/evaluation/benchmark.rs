//! The shots × seeds × templates × models grid.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::baselines::{fit, BaselineHyper, BaselineKind};
use crate::dataset::{dataset_fingerprint, labels_of, sample_few_shot, split_dataset, PatientRecord, QuestionnaireSchema};
use crate::error::{Error, Result};
use crate::microlm::{finetune_lora, score_tokens, Example, LoraConfig, MicroLm, TrainingHyper};
use crate::serialization::{serialize, TemplateKind};

use super::auc::auc;

pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 32, 42, 1024];
pub const DEFAULT_SHOTS: [usize; 6] = [0, 2, 4, 8, 16, 32];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkConfig {
    pub seeds: Vec<u64>,
    pub shots: Vec<usize>,
    pub templates: Vec<TemplateKind>,
    pub baselines: Vec<BaselineKind>,
    /// Name of the language-model rows; the template tag is appended.
    pub model_name: String,
    pub lora: LoraConfig,
    pub finetune: TrainingHyper,
    pub baseline_hyper: BaselineHyper,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        Self {
            seeds: DEFAULT_SEEDS.to_vec(),
            shots: DEFAULT_SHOTS.to_vec(),
            templates: TemplateKind::ALL.to_vec(),
            baselines: BaselineKind::ALL.to_vec(),
            model_name: "MicroLM".into(),
            lora: LoraConfig::default(),
            finetune: TrainingHyper::lora(),
            baseline_hyper: BaselineHyper::default(),
        }
    }
}

fn has_duplicates<T: Ord + Clone>(items: &[T]) -> bool {
    let mut sorted = items.to_vec();
    sorted.sort();
    sorted.windows(2).any(|w| w[0] == w[1])
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() || self.shots.is_empty() {
            return Err(Error::arg("benchmark needs at least one seed and one shot count"));
        }
        if let Some(k) = self.shots.iter().find(|k| !DEFAULT_SHOTS.contains(k)) {
            return Err(Error::arg(format!("shot count {k} not in {DEFAULT_SHOTS:?}")));
        }
        if has_duplicates(&self.seeds) || has_duplicates(&self.shots) || has_duplicates(&self.templates) {
            return Err(Error::arg("seeds, shots and templates must not repeat"));
        }
        if has_duplicates(&self.baselines) {
            return Err(Error::arg("baselines must not repeat"));
        }
        if self.model_name.trim().is_empty() {
            return Err(Error::arg("model name must be non-empty"));
        }
        Ok(())
    }

    /// Hex sha256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(serde_json::to_vec(self).expect("config serializes")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CellStatus {
    Ok,
    NotApplicable,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedResult {
    pub seed: u64,
    pub auc: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalCell {
    pub shots: usize,
    pub status: CellStatus,
    pub per_seed: Vec<SeedResult>,
    pub mean: Option<f64>,
    /// Population standard deviation over seeds.
    pub std: Option<f64>,
}

impl EvalCell {
    fn aggregate(shots: usize, per_seed: Vec<SeedResult>) -> Self {
        if per_seed.iter().any(|s| s.error.is_some()) {
            return Self { shots, status: CellStatus::Error, per_seed, mean: None, std: None };
        }
        let values: Vec<f64> = per_seed.iter().filter_map(|s| s.auc).collect();
        let (mean, std) = mean_std(&values);
        Self { shots, status: CellStatus::Ok, per_seed, mean: Some(mean), std: Some(std) }
    }

    fn not_applicable(shots: usize) -> Self {
        Self { shots, status: CellStatus::NotApplicable, per_seed: Vec::new(), mean: None, std: None }
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    /// Display label, e.g. `MicroLM-L`.
    pub label: String,
    pub model: String,
    pub template: Option<TemplateKind>,
    pub cells: Vec<EvalCell>,
}

impl ReportRow {
    pub fn cell(&self, shots: usize) -> Option<&EvalCell> {
        self.cells.iter().find(|c| c.shots == shots)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMetadata {
    pub seeds: Vec<u64>,
    pub shots: Vec<usize>,
    pub n_records: usize,
    pub dataset_fingerprint: String,
    pub config_hash: String,
    pub model_fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub metadata: ReportMetadata,
    pub rows: Vec<ReportRow>,
}

impl BenchmarkReport {
    pub fn row(&self, label: &str) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.label == label)
    }
}

/// Reported once per finished (row, shots, seed).
#[derive(Debug, Clone)]
pub struct Progress<'a> {
    pub row: &'a str,
    pub shots: usize,
    pub seed: u64,
    pub result: &'a SeedResult,
}

pub fn run_benchmark(
    schema: &QuestionnaireSchema,
    records: &[PatientRecord],
    model: Option<&MicroLm>,
    config: &BenchmarkConfig,
) -> Result<BenchmarkReport> {
    run_benchmark_with_progress(schema, records, model, config, &mut |_| {})
}

/// For every seed: split 65/15/20, draw balanced shots from the training
/// part, adapt or fit each model on them, and compute test AUC. The
/// language model is scored zero-shot with its base weights; its adapters
/// are checkpointed on the validation part, which baselines ignore.
/// Component failures are recorded in the affected cell.
pub fn run_benchmark_with_progress(
    schema: &QuestionnaireSchema,
    records: &[PatientRecord],
    model: Option<&MicroLm>,
    config: &BenchmarkConfig,
    progress: &mut dyn FnMut(Progress<'_>),
) -> Result<BenchmarkReport> {
    config.validate()?;
    for r in records {
        r.check_schema(schema)?;
    }
    let labels = labels_of(records)?;
    let features: Vec<Vec<u8>> = records.iter().map(|r| r.values.clone()).collect();

    struct RowPlan {
        label: String,
        model: String,
        template: Option<TemplateKind>,
        baseline: Option<BaselineKind>,
        results: Vec<Vec<SeedResult>>,
    }
    let mut plans = Vec::new();
    // Token ids per template, per record.
    let mut prompts: Vec<Vec<Vec<u32>>> = Vec::new();
    if let Some(lm) = model {
        for &t in &config.templates {
            plans.push(RowPlan {
                label: format!("{}-{}", config.model_name, t.tag()),
                model: config.model_name.clone(),
                template: Some(t),
                baseline: None,
                results: vec![Vec::new(); config.shots.len()],
            });
            prompts.push(
                records
                    .iter()
                    .map(|r| serialize(r, schema, t, &lm.tokenizer).map(|p| p.token_ids))
                    .collect::<Result<_>>()?,
            );
        }
    }
    for &b in &config.baselines {
        plans.push(RowPlan {
            label: b.to_string(),
            model: b.to_string(),
            template: None,
            baseline: Some(b),
            results: vec![Vec::new(); config.shots.len()],
        });
    }

    for &seed in &config.seeds {
        let split = split_dataset(records.len(), seed)?;
        let test_labels: Vec<u8> = split.test.iter().map(|&i| labels[i]).collect();
        for (si, &k) in config.shots.iter().enumerate() {
            let shots = if k == 0 {
                Ok(Vec::new())
            } else {
                sample_few_shot(&split.train, &labels, k, seed).map_err(|e| e.to_string())
            };
            for (pi, plan) in plans.iter_mut().enumerate() {
                if plan.baseline.is_some() && k == 0 {
                    continue;
                }
                let outcome = shots.clone().map_err(Error::Sampling).and_then(|shot_idx| match (plan.baseline, model) {
                    (Some(kind), _) => {
                        let x: Vec<Vec<u8>> = shot_idx.iter().map(|&i| features[i].clone()).collect();
                        let y: Vec<u8> = shot_idx.iter().map(|&i| labels[i]).collect();
                        let fitted = fit(kind, &x, &y, &config.baseline_hyper, seed)?;
                        let test_x: Vec<Vec<u8>> = split.test.iter().map(|&i| features[i].clone()).collect();
                        auc(&fitted.predict_proba(&test_x)?, &test_labels)
                    }
                    (None, Some(lm)) => {
                        let ids = &prompts[pi];
                        let example = |i: usize| Example::labeled(ids[i].clone(), labels[i], &lm.tokenizer);
                        let adapter = if shot_idx.is_empty() {
                            None
                        } else {
                            let train: Vec<Example> = shot_idx.iter().map(|&i| example(i)).collect();
                            let val: Vec<Example> = split.validation.iter().map(|&i| example(i)).collect();
                            let hyper = TrainingHyper { seed, ..config.finetune.clone() };
                            Some(finetune_lora(&lm.weights, &train, &val, &config.lora, &hyper)?.adapter)
                        };
                        let scores = split
                            .test
                            .iter()
                            .map(|&i| score_tokens(&lm.weights, adapter.as_ref(), &lm.tokenizer, &ids[i]).map(|s| s.p_yes))
                            .collect::<Result<Vec<f64>>>()?;
                        auc(&scores, &test_labels)
                    }
                    (None, None) => unreachable!("language-model rows exist only with a model"),
                });
                let result = match outcome {
                    Ok(v) => SeedResult { seed, auc: Some(v), error: None },
                    Err(e) => SeedResult { seed, auc: None, error: Some(e.to_string()) },
                };
                progress(Progress { row: &plan.label, shots: k, seed, result: &result });
                plan.results[si].push(result);
            }
        }
    }

    let rows = plans
        .into_iter()
        .map(|plan| ReportRow {
            cells: config
                .shots
                .iter()
                .zip(plan.results)
                .map(|(&k, results)| {
                    if plan.baseline.is_some() && k == 0 {
                        EvalCell::not_applicable(k)
                    } else {
                        EvalCell::aggregate(k, results)
                    }
                })
                .collect(),
            label: plan.label,
            model: plan.model,
            template: plan.template,
        })
        .collect();

    Ok(BenchmarkReport {
        metadata: ReportMetadata {
            seeds: config.seeds.clone(),
            shots: config.shots.clone(),
            n_records: records.len(),
            dataset_fingerprint: dataset_fingerprint(records),
            config_hash: config.hash(),
            model_fingerprint: model.map(|m| m.weights.fingerprint()),
        },
        rows,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_synthetic_dataset, SyntheticSpec};
    use crate::evaluation::{render_report, ReportFormat};
    use crate::microlm::{MicroLmConfig, MicroLmWeights, Tokenizer};

    fn setup(n: usize) -> (QuestionnaireSchema, Vec<PatientRecord>, MicroLm) {
        let schema = QuestionnaireSchema::covid_default();
        let mut weights = vec![0.0; 15];
        weights[14] = 2.0;
        let records =
            generate_synthetic_dataset(&SyntheticSpec { n, seed: 3, prevalence: 0.4, signal_weights: weights }, &schema)
                .unwrap();
        let tok = Tokenizer::build(&schema);
        let cfg = MicroLmConfig { n_layers: 1, d_model: 16, d_ff: 32, n_heads: 2, ..MicroLmConfig::new(tok.vocab_size()) };
        let lm = MicroLm::new(tok, MicroLmWeights::init(&cfg, 0), None).unwrap();
        (schema, records, lm)
    }

    fn quick() -> BenchmarkConfig {
        BenchmarkConfig {
            seeds: vec![0, 1],
            shots: vec![0, 2, 4],
            finetune: TrainingHyper { steps: 3, eval_every: 1, ..TrainingHyper::lora() },
            ..BenchmarkConfig::default()
        }
    }

    #[test]
    fn grid_shape_and_not_applicable_cells() {
        let (schema, records, lm) = setup(80);
        let report = run_benchmark(&schema, &records, Some(&lm), &quick()).unwrap();
        let labels: Vec<&str> = report.rows.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(
            labels,
            ["MicroLM-L", "MicroLM-T", "Logistic Regression", "Random Forest", "Gradient Boosted Trees"]
        );
        for row in &report.rows {
            assert_eq!(row.cells.len(), 3);
            let zero = row.cell(0).unwrap();
            if row.template.is_none() {
                assert_eq!(zero.status, CellStatus::NotApplicable);
            } else {
                assert_eq!(zero.status, CellStatus::Ok);
            }
            for c in row.cells.iter().filter(|c| c.status == CellStatus::Ok) {
                let aucs: Vec<f64> = c.per_seed.iter().map(|s| s.auc.unwrap()).collect();
                let (lo, hi) = aucs.iter().fold((1.0f64, 0.0f64), |(lo, hi), &v| (lo.min(v), hi.max(v)));
                assert!(c.mean.unwrap() >= lo && c.mean.unwrap() <= hi);
            }
        }
        let gbt = report.row("Gradient Boosted Trees").unwrap();
        assert_eq!(gbt.cell(2).unwrap().mean, Some(0.5));
        assert_eq!(gbt.cell(2).unwrap().std, Some(0.0));
    }

    #[test]
    fn zero_shot_is_direct_base_scoring() {
        let (schema, records, lm) = setup(60);
        let cfg = BenchmarkConfig { seeds: vec![42], shots: vec![0], baselines: vec![], ..quick() };
        let report = run_benchmark(&schema, &records, Some(&lm), &cfg).unwrap();
        let split = split_dataset(records.len(), 42).unwrap();
        for (row, t) in report.rows.iter().zip(TemplateKind::ALL) {
            let scores: Vec<f64> = split
                .test
                .iter()
                .map(|&i| lm.score(&serialize(&records[i], &schema, t, &lm.tokenizer).unwrap()).unwrap().p_yes)
                .collect();
            let labels: Vec<u8> = split.test.iter().map(|&i| records[i].label.unwrap()).collect();
            assert_eq!(row.cells[0].per_seed[0].auc, Some(auc(&scores, &labels).unwrap()));
        }
    }

    #[test]
    fn reruns_are_byte_identical() {
        let (schema, records, lm) = setup(60);
        let a = run_benchmark(&schema, &records, Some(&lm), &quick()).unwrap();
        let b = run_benchmark(&schema, &records, Some(&lm), &quick()).unwrap();
        for f in [ReportFormat::Json, ReportFormat::Csv, ReportFormat::Table] {
            assert_eq!(render_report(&a, f), render_report(&b, f));
        }
    }

    #[test]
    fn failures_are_marked_not_dropped() {
        let (schema, records, _) = setup(30);
        // 32 shots cannot be drawn from a training split of 20 records.
        let cfg = BenchmarkConfig { shots: vec![2, 32], ..quick() };
        let report = run_benchmark(&schema, &records, None, &cfg).unwrap();
        for row in &report.rows {
            let cell = row.cell(32).unwrap();
            assert_eq!(cell.status, CellStatus::Error);
            assert!(cell.per_seed.iter().all(|s| s.error.is_some()));
        }
        assert!(render_report(&report, ReportFormat::Table).contains("ERR"));
    }

    #[test]
    fn csv_long_form_rows() {
        let (schema, records, lm) = setup(60);
        let report = run_benchmark(&schema, &records, Some(&lm), &quick()).unwrap();
        let csv = render_report(&report, ReportFormat::Csv);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "model,template,shots,seed,auc");
        // 2 LM rows × 3 shots × 2 seeds + 3 baselines × (1 NA + 2 shots × 2 seeds)
        assert_eq!(lines.len() - 1, 2 * 3 * 2 + 3 * (1 + 2 * 2));
        assert!(lines.contains(&"Random Forest,,0,,NA"));
    }

    #[test]
    fn config_validation() {
        let bad = BenchmarkConfig { shots: vec![3], ..BenchmarkConfig::default() };
        assert!(bad.validate().is_err());
        let dup = BenchmarkConfig { seeds: vec![1, 1], ..BenchmarkConfig::default() };
        assert!(dup.validate().is_err());
        assert_ne!(BenchmarkConfig::default().hash(), quick().hash());
    }
}
