//! Scenario files and the end-to-end runner behind `coalfed run`.
//!
//! A scenario is a TOML document. Every field has a default, and the
//! resolved scenario (defaults filled in, seed propagated) is written back
//! next to the artifacts as `manifest.toml`.
//!
//! ```toml
//! name = "cubic"
//! seed = 7
//! mode = "model_sharing"
//!
//! [data]
//! type = "curve"
//! samples_per_site = 200
//!
//! [[partners]]
//! id = "1"
//! noise = 0.1
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::curator::{apply_transforms, CurationEnv, CurationResult, Curator, DataOffer, DEFAULT_EPSILON};
use crate::datagen::{inject_noise, lexicon_perturb, synth_classification, synth_curve, ClassSkewSpec, CurveSpec};
use crate::dataset::{Dataset, LabelSpec, Schema};
use crate::error::{Error, Result};
use crate::fusion::{
    applicability_region, build_ensemble, ensemble_predict, naive_fusion, partition_regions, sample_exchange,
    write_cell_table, Basis, EnsembleConfig, EnsembleModel, RegionCell,
};
use crate::infometrics::{AnalysisTask, GroundTruth};
use crate::models::{train, Activation, Model, ModelArch, Optimizer, OutputSpec, TrainConfig};
use crate::policy::{generate_policies, Context, GuidancePackage, HelperService, PartnerDescriptor, PolicySet, SynonymTable};
use crate::protocol::{
    run_session, FusionFlavor, PartnerSpec, SessionConfig, SessionMode, SessionSpec, SimulatedTransport, Transport,
};
use crate::PartnerId;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ShareMode {
    /// Partners send data to a curator, one model is trained on the union.
    DataSharing,
    /// Partners train locally and exchange weights with a fusion server.
    #[default]
    ModelSharing,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DataSource {
    Curve(CurveSpec),
    Classification(ClassSkewSpec),
    /// Partner CSV files, relative paths resolved against the scenario file.
    Files {
        canonical: Schema,
        files: BTreeMap<PartnerId, PathBuf>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        validation: Option<PathBuf>,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Curve(CurveSpec::reference())
    }
}

fn one() -> f64 {
    1.0
}

/// How a partner presents its data: trust, vocabulary and label noise.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PartnerSetup {
    pub id: PartnerId,
    #[serde(default = "one")]
    pub trustworthiness: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub declared_format: Option<String>,
    #[serde(default)]
    pub label_map: BTreeMap<String, String>,
    #[serde(default)]
    pub field_map: BTreeMap<String, String>,
    /// Label-noise rate injected into the partner's data.
    #[serde(default)]
    pub noise: f64,
}

impl PartnerSetup {
    fn plain(id: &str) -> Self {
        Self {
            id: id.to_string(),
            trustworthiness: 1.0,
            declared_format: None,
            label_map: BTreeMap::new(),
            field_map: BTreeMap::new(),
            noise: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SessionSettings {
    pub mode: SessionMode,
    pub flavor: FusionFlavor,
    pub rounds: usize,
    pub local_batches: usize,
    pub exchange_k: usize,
    pub tol: f64,
    pub max_rounds: usize,
    pub transport: SimulatedTransport,
}

impl Default for SessionSettings {
    fn default() -> Self {
        Self {
            mode: SessionMode::Synchronized,
            flavor: FusionFlavor::Synchronized,
            rounds: 200,
            local_batches: 1,
            exchange_k: 0,
            tol: 1e-6,
            max_rounds: 50,
            transport: SimulatedTransport::default(),
        }
    }
}

/// Offline baselines computed next to the session.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Comparison {
    pub exchange_k: usize,
    pub ensemble: EnsembleConfig,
    /// Evaluation grid size for curve data.
    pub grid_points: usize,
    /// Validation set size for classification data.
    pub validation_size: usize,
}

impl Default for Comparison {
    fn default() -> Self {
        Self {
            exchange_k: 10,
            ensemble: EnsembleConfig::default(),
            grid_points: 301,
            validation_size: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub mode: ShareMode,
    pub data: DataSource,
    pub partners: Vec<PartnerSetup>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelArch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
    pub session: SessionSettings,
    pub comparison: Comparison,
    pub guidance: GuidancePackage,
    pub helper_services: Vec<HelperService>,
    pub synonyms: SynonymTable,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "scenario".into(),
            seed: 7,
            mode: ShareMode::default(),
            data: DataSource::default(),
            partners: Vec::new(),
            model: None,
            train: None,
            session: SessionSettings::default(),
            comparison: Comparison::default(),
            guidance: GuidancePackage::default(),
            helper_services: Vec::new(),
            synonyms: SynonymTable::default(),
            out_dir: None,
        }
    }
}

impl Scenario {
    /// The reference cubic scenario: three disjoint unit windows on `[0, 3]`.
    pub fn reference() -> Self {
        Self {
            name: "reference-cubic".into(),
            ..Default::default()
        }
        .resolved(None)
        .expect("reference scenario is valid")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(format!("invalid scenario: {e}")))
    }

    /// Reads a scenario and makes its data paths absolute.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let mut s = Self::from_toml(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let DataSource::Files { files, validation, .. } = &mut s.data {
            for p in files.values_mut() {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
            if let Some(v) = validation.as_mut().filter(|v| v.is_relative()) {
                *v = base.join(&*v);
            }
        }
        Ok(s)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(format!("cannot serialize scenario: {e}")))
    }

    fn site_ids(&self) -> Vec<PartnerId> {
        match &self.data {
            DataSource::Curve(c) => c.site_ids.clone(),
            DataSource::Classification(c) => c.site_ids.clone(),
            DataSource::Files { files, .. } => files.keys().cloned().collect(),
        }
    }

    /// Fills every default and propagates the seed (optionally overridden)
    /// into the generators, the trainer, the exchange and the transport.
    pub fn resolved(mut self, seed: Option<u64>) -> Result<Self> {
        if let Some(s) = seed {
            self.seed = s;
        }
        let seed = self.seed;
        match &mut self.data {
            DataSource::Curve(c) => c.seed = seed,
            DataSource::Classification(c) => c.seed = seed,
            DataSource::Files { .. } => {}
        }
        if self.partners.is_empty() {
            self.partners = self.site_ids().iter().map(|id| PartnerSetup::plain(id)).collect();
        }
        if self.model.is_none() {
            self.model = Some(match &self.data {
                DataSource::Curve(c) => ModelArch::polynomial(3, c.domain.0, c.domain.1, 1, OutputSpec::Regression),
                DataSource::Classification(c) => ModelArch::mlp(
                    vec![8],
                    Activation::Tanh,
                    c.dim(),
                    OutputSpec::Classes(c.class_names.len()),
                ),
                DataSource::Files { canonical, .. } => {
                    let output = match &canonical.labels {
                        LabelSpec::Classes(c) => OutputSpec::Classes(c.len()),
                        LabelSpec::Range { .. } => OutputSpec::Regression,
                    };
                    ModelArch::linear(canonical.fields.len(), output)
                }
            });
        }
        if self.train.is_none() {
            let classification = matches!(self.model.as_ref().map(|m| &m.output), Some(OutputSpec::Classes(_)));
            self.train = Some(if classification {
                TrainConfig {
                    learning_rate: 0.2,
                    epochs: 200,
                    optimizer: Optimizer::FullBatchGd,
                    loss: crate::models::Loss::CrossEntropy,
                    ..Default::default()
                }
            } else {
                TrainConfig {
                    learning_rate: 0.5,
                    epochs: 2000,
                    optimizer: Optimizer::FullBatchGd,
                    ..Default::default()
                }
            });
        }
        if let Some(t) = &mut self.train {
            t.seed = seed;
        }
        self.session.transport.seed = seed;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let ids = self.site_ids();
        let declared: Vec<&str> = self.partners.iter().map(|p| p.id.as_str()).collect();
        let mut sorted_ids: Vec<&str> = ids.iter().map(String::as_str).collect();
        let mut sorted_declared = declared.clone();
        sorted_ids.sort_unstable();
        sorted_declared.sort_unstable();
        if sorted_ids != sorted_declared {
            return Err(Error::Config(format!(
                "partners {declared:?} do not match the data's sites {ids:?}"
            )));
        }
        for p in &self.partners {
            if !(0.0..=1.0).contains(&p.noise) {
                return Err(Error::Config(format!("partner `{}` noise must lie in [0, 1]", p.id)));
            }
        }
        match &self.data {
            DataSource::Curve(c) => c.validate()?,
            DataSource::Classification(c) => c.validate()?,
            DataSource::Files { files, validation, .. } => {
                for p in files.values().chain(validation.iter()) {
                    if !p.is_file() {
                        return Err(Error::Config(format!("data file {} does not exist", p.display())));
                    }
                }
            }
        }
        let arch = self.arch()?;
        arch.validate()?;
        self.train_config()?.validate(arch)?;
        self.guidance.validate()?;
        if self.mode == ShareMode::ModelSharing {
            self.session_config()?.validate()?;
        }
        if self.comparison.grid_points < 2 {
            return Err(Error::Config("grid_points must be >= 2".into()));
        }
        Ok(())
    }

    fn arch(&self) -> Result<&ModelArch> {
        self.model.as_ref().ok_or_else(|| Error::Config("scenario is not resolved".into()))
    }

    fn train_config(&self) -> Result<&TrainConfig> {
        self.train.as_ref().ok_or_else(|| Error::Config("scenario is not resolved".into()))
    }

    pub fn canonical_schema(&self) -> Schema {
        match &self.data {
            DataSource::Curve(c) => c.schema(),
            DataSource::Classification(c) => c.schema(),
            DataSource::Files { canonical, .. } => canonical.clone(),
        }
    }

    pub fn ground_truth(&self) -> Option<GroundTruth> {
        match &self.data {
            DataSource::Curve(c) => Some(c.ground_truth()),
            DataSource::Classification(c) => Some(c.ground_truth()),
            DataSource::Files { .. } => None,
        }
    }

    pub fn session_config(&self) -> Result<SessionConfig> {
        Ok(SessionConfig {
            session_id: self.name.clone(),
            mode: self.session.mode,
            flavor: self.session.flavor,
            partners: self
                .partners
                .iter()
                .map(|p| PartnerSpec {
                    id: p.id.clone(),
                    trustworthiness: p.trustworthiness,
                })
                .collect(),
            canonical: self.canonical_schema(),
            helper_services: self.helper_services.clone(),
            synonyms: self.synonyms.clone(),
            guidance: self.guidance.clone(),
            arch: self.arch()?.clone(),
            train: self.train_config()?.clone(),
            rounds: self.session.rounds,
            local_batches: self.session.local_batches,
            exchange_k: self.session.exchange_k,
            exchange_seed: self.seed,
            tol: self.session.tol,
            max_rounds: self.session.max_rounds,
        })
    }

    /// Each partner's data as it presents it: generated (or loaded), noised,
    /// then renamed into its own vocabulary. Partner `i` noise uses seed
    /// `seed + 1 + i`.
    pub fn partner_data(&self) -> Result<Vec<(PartnerId, Dataset)>> {
        let raw: BTreeMap<PartnerId, Dataset> = match &self.data {
            DataSource::Curve(c) => c.site_ids.iter().cloned().zip(synth_curve(c)?.0).collect(),
            DataSource::Classification(c) => c.site_ids.iter().cloned().zip(synth_classification(c)?).collect(),
            DataSource::Files { canonical, files, .. } => files
                .iter()
                .map(|(id, path)| Ok((id.clone(), Dataset::load(path, id, Some(canonical))?)))
                .collect::<Result<_>>()?,
        };
        self.partners
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut d = raw[&p.id].clone();
                if p.noise > 0.0 {
                    d = inject_noise(&d, p.noise, self.seed.wrapping_add(1 + i as u64))?;
                }
                d = lexicon_perturb(&d, &p.label_map, &p.field_map);
                if let Some(f) = &p.declared_format {
                    d.schema.format = f.clone();
                }
                Ok((p.id.clone(), d))
            })
            .collect()
    }

    /// Points every model is scored on: a uniform grid labeled by the
    /// true curve, a fresh validation draw, or the validation file.
    pub fn evaluation_set(&self) -> Result<Option<Dataset>> {
        match &self.data {
            DataSource::Curve(c) => {
                let n = self.comparison.grid_points;
                let (lo, hi) = c.domain;
                let xs: Vec<Vec<f64>> = (0..n).map(|i| vec![lo + (hi - lo) * i as f64 / (n - 1) as f64]).collect();
                let ys = xs.iter().map(|x| c.truth.eval(x[0])).collect();
                Ok(Some(Dataset::from_rows(c.schema(), xs, ys, "grid")?))
            }
            DataSource::Classification(c) => Ok(Some(c.validation_set(self.comparison.validation_size)?)),
            DataSource::Files {
                canonical, validation, ..
            } => validation
                .as_ref()
                .map(|p| Dataset::load(p, "validation", Some(canonical)))
                .transpose(),
        }
    }

    fn context(&self, data: &[(PartnerId, Dataset)]) -> Context {
        Context {
            partners: self
                .partners
                .iter()
                .zip(data)
                .map(|(p, (_, d))| PartnerDescriptor {
                    id: p.id.clone(),
                    declared_format: d.schema.format.clone(),
                    declared_labels: d.schema.labels.class_names().to_vec(),
                    declared_fields: d.schema.fields.clone(),
                    trustworthiness: p.trustworthiness,
                })
                .collect(),
            canonical: self.canonical_schema(),
            helper_services: self.helper_services.clone(),
            synonyms: self.synonyms.clone(),
            region_table: None,
        }
    }
}

/// One scored model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub model: String,
    pub metric: String,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    pub metrics: Vec<MetricRow>,
    pub artifacts: Vec<PathBuf>,
}

impl RunSummary {
    pub fn value(&self, model: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.model == model).map(|m| m.value)
    }
}

type Predictor<'a> = Box<dyn Fn(&[f64]) -> Result<f64> + 'a>;

fn score(name: &str, predict: &Predictor, eval: &Dataset) -> Result<MetricRow> {
    if eval.is_empty() {
        return Err(Error::EmptyInput("evaluation set".into()));
    }
    let n = eval.len() as f64;
    let classification = eval.schema.labels.is_classification();
    let mut total = 0.0;
    for (x, &y) in eval.features.iter().zip(&eval.labels) {
        let p = predict(x)?;
        total += if classification {
            f64::from(u8::from(p == y))
        } else {
            (p - y).powi(2)
        };
    }
    Ok(MetricRow {
        model: name.to_string(),
        metric: if classification { "accuracy" } else { "mse" }.into(),
        value: total / n,
    })
}

fn model_predictor(m: &Model) -> Predictor<'_> {
    Box::new(move |x| Ok(m.predict(x)))
}

fn ensemble_predictor(e: &EnsembleModel) -> Predictor<'_> {
    Box::new(move |x| ensemble_predict(e, x))
}

struct Artifacts {
    dir: PathBuf,
    written: Vec<PathBuf>,
}

impl Artifacts {
    fn write(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        let path = self.dir.join(name);
        fs::write(&path, bytes)?;
        self.written.push(path);
        Ok(())
    }
}

fn metrics_csv(rows: &[MetricRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["model", "metric", "value"])?;
    for r in rows {
        w.write_record([r.model.as_str(), r.metric.as_str(), &r.value.to_string()])?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn plotdata_csv(eval: &Dataset, series: &[(String, Predictor)]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = eval.schema.fields.clone();
    header.push("ground_truth".into());
    header.extend(series.iter().map(|(n, _)| n.clone()));
    w.write_record(&header)?;
    for (x, y) in eval.features.iter().zip(&eval.labels) {
        let mut row: Vec<String> = x.iter().map(f64::to_string).collect();
        row.push(y.to_string());
        for (_, p) in series {
            row.push(p(x)?.to_string());
        }
        w.write_record(&row)?;
    }
    w.into_inner().map_err(|e| Error::Io(e.into_error()))
}

fn cells_csv(cells: &[RegionCell]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_cell_table(cells, &mut buf)?;
    Ok(buf)
}

fn canonicalize_all(
    data: &[(PartnerId, Dataset)],
    context: &Context,
    policies: &PolicySet,
) -> Result<Vec<(PartnerId, Dataset)>> {
    data.iter()
        .map(|(id, d)| Ok((id.clone(), apply_transforms(d, id, &d.schema.format, context, policies)?.0)))
        .collect()
}

/// Runs the scenario and writes its artifacts into `out`: `manifest.toml`,
/// `metrics.csv`, `regions.csv`, `policies.txt`, `transcript.jsonl`,
/// `plotdata.csv`, plus `validation.csv` for model sharing.
pub fn run(scenario: &Scenario, out: &Path) -> Result<RunSummary> {
    scenario.validate()?;
    fs::create_dir_all(out)?;
    let mut files = Artifacts {
        dir: out.to_path_buf(),
        written: Vec::new(),
    };
    files.write("manifest.toml", scenario.to_toml()?.as_bytes())?;
    let summary = match scenario.mode {
        ShareMode::ModelSharing => run_model_sharing(scenario, &mut files)?,
        ShareMode::DataSharing => run_data_sharing(scenario, &mut files)?,
    };
    Ok(RunSummary {
        metrics: summary,
        artifacts: files.written,
    })
}

fn run_model_sharing(s: &Scenario, files: &mut Artifacts) -> Result<Vec<MetricRow>> {
    let arch = s.arch()?;
    let cfg = s.train_config()?;
    let data = s.partner_data()?;
    let eval = s.evaluation_set()?;
    let context = s.context(&data);
    let policies = generate_policies(&s.guidance, &context)?;
    let canonical = canonicalize_all(&data, &context, &policies)?;

    let session = SessionSpec {
        config: s.session_config()?,
        data: data.iter().cloned().collect(),
        validation: eval.clone(),
    };
    let transcript = run_session(&session, &Transport::Simulated(s.session.transport.clone()))?;

    let locals: Vec<Model> = canonical
        .iter()
        .map(|(_, d)| train(arch, d, cfg, None))
        .collect::<Result<_>>()?;
    let naive = naive_fusion(&locals)?;
    let ensemble_cfg = EnsembleConfig {
        train: cfg.clone(),
        ..s.comparison.ensemble.clone()
    };
    let ensemble = build_ensemble(
        &canonical.iter().map(|(id, _)| id.clone()).zip(locals.iter().cloned()).collect(),
        &canonical.iter().cloned().collect(),
        &ensemble_cfg,
    )?;
    let sets: Vec<Dataset> = canonical.iter().map(|(_, d)| d.clone()).collect();
    let exchanged = sample_exchange(&sets, s.comparison.exchange_k, s.seed)?;
    let exchange_models: Vec<Model> = exchanged
        .iter()
        .map(|d| train(arch, d, cfg, None))
        .collect::<Result<_>>()?;
    let exchange = naive_fusion(&exchange_models)?;
    let session_model = &transcript.outcome.model;

    let mut series: Vec<(String, Predictor)> = canonical
        .iter()
        .zip(&locals)
        .map(|((id, _), m)| (format!("site:{id}"), model_predictor(m)))
        .collect();
    series.push(("naive".into(), model_predictor(&naive)));
    series.push(("ensemble".into(), ensemble_predictor(&ensemble)));
    series.push(("exchange".into(), model_predictor(&exchange)));
    series.push(("session".into(), model_predictor(session_model)));

    let eval_set = match &eval {
        Some(e) => e.clone(),
        None => union_of(&canonical)?,
    };
    let metrics = series
        .iter()
        .map(|(name, p)| score(name, p, &eval_set))
        .collect::<Result<Vec<_>>>()?;

    files.write("metrics.csv", &metrics_csv(&metrics)?)?;
    files.write("regions.csv", &cells_csv(&ensemble.cells)?)?;
    let mut policy_text = policies.to_text();
    policy_text.push_str("# model selection\n");
    policy_text.push_str(&ensemble.selector.to_text());
    files.write("policies.txt", policy_text.as_bytes())?;
    let mut jsonl = Vec::new();
    transcript.write_jsonl(&mut jsonl)?;
    files.write("transcript.jsonl", &jsonl)?;
    let mut validation = Vec::new();
    transcript.write_validation_csv(&mut validation)?;
    files.write("validation.csv", &validation)?;
    let plot_series: Vec<(String, Predictor)> = series
        .into_iter()
        .map(|(n, p)| (n.replace("site:", "site_"), p))
        .collect();
    files.write("plotdata.csv", &plotdata_csv(&eval_set, &plot_series)?)?;
    Ok(metrics)
}

fn union_of(sets: &[(PartnerId, Dataset)]) -> Result<Dataset> {
    let mut iter = sets.iter();
    let mut out = iter
        .next()
        .ok_or_else(|| Error::EmptyInput("no partner data".into()))?
        .1
        .clone();
    for (_, d) in iter {
        out.extend_from(d)?;
    }
    Ok(out)
}

#[derive(Serialize)]
struct CurationLine<'a> {
    partner: &'a str,
    accepted: bool,
    report: &'a crate::curator::CurationReport,
}

fn run_data_sharing(s: &Scenario, files: &mut Artifacts) -> Result<Vec<MetricRow>> {
    let arch = s.arch()?;
    let cfg = s.train_config()?;
    let data = s.partner_data()?;
    let eval = s.evaluation_set()?;
    let context = s.context(&data);
    let policies = generate_policies(&s.guidance, &context)?;
    let env = CurationEnv {
        context: context.clone(),
        policies: policies.clone(),
        guidance: s.guidance.clone(),
        truth: s.ground_truth(),
        task: AnalysisTask {
            arch: arch.clone(),
            train_config: cfg.clone(),
        },
        epsilon: DEFAULT_EPSILON,
    };
    let mut curator = Curator::new(env);
    let mut results: Vec<(PartnerId, CurationResult)> = Vec::new();
    for (p, (id, d)) in s.partners.iter().zip(&data) {
        let offer = DataOffer::new(id, &d.schema.format, d.clone(), p.noise)?;
        results.push((id.clone(), curator.offer(&offer)?));
    }
    let consolidated = curator.consolidated().clone();
    let canonical = canonicalize_all(&data, &context, &policies)?;
    let locals: Vec<Model> = canonical
        .iter()
        .map(|(_, d)| train(arch, d, cfg, None))
        .collect::<Result<_>>()?;
    let shared = if consolidated.is_empty() {
        None
    } else {
        Some(train(arch, &consolidated, cfg, None)?)
    };

    let mut series: Vec<(String, Predictor)> = canonical
        .iter()
        .zip(&locals)
        .map(|((id, _), m)| (format!("site:{id}"), model_predictor(m)))
        .collect();
    if let Some(m) = &shared {
        series.push(("consolidated".into(), model_predictor(m)));
    }
    let eval_set = match &eval {
        Some(e) => e.clone(),
        None => union_of(&canonical)?,
    };
    let metrics = series
        .iter()
        .map(|(name, p)| score(name, p, &eval_set))
        .collect::<Result<Vec<_>>>()?;

    let accepted: Vec<&(PartnerId, CurationResult)> = results.iter().filter(|(_, r)| r.accepted).collect();
    let regions = accepted
        .iter()
        .filter_map(|(id, r)| r.transformed.as_ref().map(|d| (id, d)))
        .filter(|(_, d)| !d.is_empty())
        .map(|(id, d)| applicability_region(d, &Basis::RawFeatures, id, 0.0))
        .collect::<Result<Vec<_>>>()?;
    let cells = if regions.is_empty() {
        vec![]
    } else {
        partition_regions(&regions)?
    };

    let mut jsonl = Vec::new();
    for (id, r) in &results {
        serde_json::to_writer(
            &mut jsonl,
            &CurationLine {
                partner: id,
                accepted: r.accepted,
                report: &r.report,
            },
        )?;
        jsonl.push(b'\n');
    }
    files.write("metrics.csv", &metrics_csv(&metrics)?)?;
    files.write("regions.csv", &cells_csv(&cells)?)?;
    files.write("policies.txt", policies.to_text().as_bytes())?;
    files.write("transcript.jsonl", &jsonl)?;
    let plot_series: Vec<(String, Predictor)> = series
        .into_iter()
        .map(|(n, p)| (n.replace("site:", "site_"), p))
        .collect();
    files.write("plotdata.csv", &plotdata_csv(&eval_set, &plot_series)?)?;
    Ok(metrics)
}
