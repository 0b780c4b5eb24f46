//! Subcommand implementations. Every stage reads its inputs from, and writes
//! its artifacts to, the output directory.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{anyhow, bail, Context as _, Result};
use clap::{Args, ValueEnum};
use serde::Serialize;

use scrutable_core::corpus::{self, load_records, split_warm_start, write_records, Dataset, RecordFormat, SplitBundle};
use scrutable_core::eval::{benchmark, feature_ablation, scrutability_experiment, AblationConfig, MetricReport};
use scrutable_core::preference::{item_feature_map, rank_features};
use scrutable_core::profilegen::{
    append_profile, edit_profile, generate_profiles, load_profiles, save_profiles, EditDirection, GenerationParams,
    NlProfile, OfflineGenerator, ProfileSet, RemoteGenerator, TextGenerator,
};
use scrutable_core::recsys::{
    Checkpoint, ItemKnn, MfModel, MostPop, ProfileRecommender, ProfileRegressor, RatingMatrix, Recommender, UserKnn,
};
use scrutable_core::synth::{self, SynthConfig};
use scrutable_service::{CandidatePools, ProfileStore, SessionState};

use crate::config::{BackendKind, RunConfig};

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 200)]
    pub users: usize,
    #[arg(long, default_value_t = 400)]
    pub items: usize,
    /// hotels or movies_tv (default: the config's domain).
    #[arg(long)]
    pub domain: Option<String>,
    /// Where to write the corpus (default: <out>/records.jsonl).
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    /// Review dump (default: the config's data.records).
    pub input: Option<PathBuf>,
    /// jsonl or csv (default: from the extension).
    #[arg(long)]
    pub format: Option<String>,
}

#[derive(Debug, Args)]
pub struct SplitArgs {
    /// Records to split (default: <out>/records.jsonl, else data.records).
    #[arg(long)]
    pub input: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct RankArgs {
    /// Features kept per user (default: profiles.k).
    #[arg(long)]
    pub k: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EditArgs {
    #[arg(long)]
    pub user: String,
    #[arg(long)]
    pub feature: String,
    /// add_like or remove_like.
    #[arg(long, default_value = "add_like")]
    pub direction: String,
    /// Print the edited profile without storing it.
    #[arg(long)]
    pub dry_run: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    All,
    Mostpop,
    Userknn,
    Itemknn,
    Mf,
    Upr,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[arg(long, value_enum, default_values_t = [ModelKind::All])]
    pub model: Vec<ModelKind>,
}

#[derive(Debug, Args)]
pub struct ScrutinizeArgs {
    /// Target feature; repeatable (default: scrutability.targets).
    #[arg(long)]
    pub target: Vec<String>,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Port (default: serve.port).
    #[arg(long)]
    pub port: Option<u16>,
    /// Profile-model checkpoint (default: <out>/models/upr.json).
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Profile store (default: <out>/profiles.jsonl).
    #[arg(long)]
    pub profiles: Option<PathBuf>,
    /// Directory of static files served next to the API.
    #[arg(long)]
    pub static_dir: Option<PathBuf>,
}

const ID_MODELS: [&str; 4] = ["mostpop", "userknn", "itemknn", "mf"];

pub struct Context {
    config: RunConfig,
    out: PathBuf,
    seed: Option<u64>,
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_jsonl<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut text = String::new();
    for row in rows {
        text.push_str(&serde_json::to_string(&row)?);
        text.push('\n');
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn format_of(path: &Path) -> RecordFormat {
    match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("csv") => RecordFormat::Csv,
        _ => RecordFormat::Jsonl,
    }
}

fn merged(parts: &[&Dataset]) -> Dataset {
    Dataset::new(parts.iter().flat_map(|d| d.records().iter().cloned()).collect())
}

#[derive(Serialize)]
struct SplitPart {
    records: usize,
    users: usize,
    items: usize,
}

impl From<&Dataset> for SplitPart {
    fn from(d: &Dataset) -> Self {
        Self {
            records: d.len(),
            users: d.n_users(),
            items: d.n_items(),
        }
    }
}

#[derive(Serialize)]
struct SplitManifest {
    seed: u64,
    ratios: corpus::SplitRatios,
    train: SplitPart,
    validation: SplitPart,
    test: SplitPart,
    report: corpus::SplitReport,
}

#[derive(Serialize)]
struct ReportRow<'a> {
    model: &'a str,
    rmse: f64,
    mae: f64,
    ndcg_at_10: f64,
    map: f64,
    n_predictions: usize,
    n_users: usize,
}

impl<'a> ReportRow<'a> {
    fn new(model: &'a str, r: &MetricReport) -> Self {
        Self {
            model,
            rmse: r.rmse,
            mae: r.mae,
            ndcg_at_10: r.ndcg_at_10,
            map: r.map,
            n_predictions: r.n_predictions,
            n_users: r.n_users,
        }
    }
}

impl Context {
    pub fn new(config: RunConfig, out: PathBuf, seed: Option<u64>) -> Result<Self> {
        fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
        Ok(Self { config, out, seed })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn split_dir(&self) -> PathBuf {
        self.path("split")
    }

    fn models_dir(&self) -> PathBuf {
        self.path("models")
    }

    fn profiles_path(&self) -> PathBuf {
        self.path("profiles.jsonl")
    }

    fn generator(&self) -> Arc<dyn TextGenerator> {
        match self.config.backend.kind {
            BackendKind::Offline => Arc::new(OfflineGenerator),
            BackendKind::Remote => Arc::new(RemoteGenerator::new(self.config.backend.remote.clone())),
        }
    }

    fn load_split(&self) -> Result<SplitBundle> {
        let dir = self.split_dir();
        let part = |name: &str| -> Result<Dataset> {
            let path = dir.join(format!("{name}.jsonl"));
            if !path.exists() {
                bail!("{} not found; run `split` first", path.display());
            }
            Ok(load_records(&path, RecordFormat::Jsonl)?.0)
        };
        Ok(SplitBundle {
            train: part("train")?,
            validation: part("validation")?,
            test: part("test")?,
            seed: self.config.split.seed,
        })
    }

    fn load_profile_set(&self) -> Result<ProfileSet> {
        let path = self.profiles_path();
        if !path.exists() {
            bail!("{} not found; run `gen-profiles` first", path.display());
        }
        let (set, report) = load_profiles(&path)?;
        if report.skipped > 0 {
            tracing::warn!(skipped = report.skipped, "unreadable lines in the profile store");
        }
        Ok(set)
    }

    fn load_upr(&self, path: &Path) -> Result<ProfileRegressor> {
        match Checkpoint::load(path).with_context(|| "run `train --model upr` first".to_string())? {
            Checkpoint::Upr(model) => Ok(model),
            other => bail!("{} holds a {} model, the profile model is needed", path.display(), other.kind()),
        }
    }

    pub fn synth(&self, args: SynthArgs) -> Result<()> {
        let domain = match &args.domain {
            Some(d) => d.parse().map_err(|e: String| anyhow!(e))?,
            None => self.config.data.domain,
        };
        let records = synth::generate(&SynthConfig {
            domain,
            n_users: args.users,
            n_items: args.items,
            seed: self.seed.unwrap_or(0),
            ..SynthConfig::default()
        });
        let path = args.output.unwrap_or_else(|| self.path("records.jsonl"));
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        write_records(&path, &records)?;
        println!("wrote {} records to {}", records.len(), path.display());
        Ok(())
    }

    pub fn ingest(&self, args: IngestArgs) -> Result<()> {
        let input = args
            .input
            .or_else(|| self.config.data.records.clone())
            .ok_or_else(|| anyhow!("no input: pass a path or set data.records"))?;
        let format = match args.format {
            Some(f) => f.parse().map_err(|e: String| anyhow!(e))?,
            None => self.config.data.format.unwrap_or_else(|| format_of(&input)),
        };
        let (data, report) = load_records(&input, format).with_context(|| format!("ingesting {}", input.display()))?;
        write_records(self.path("records.jsonl"), data.records())?;
        write_json(
            &self.path("ingest_report.json"),
            &serde_json::json!({ "report": report, "stats": corpus::stats(&data) }),
        )?;
        println!("{report}");
        Ok(())
    }

    pub fn split(&self, args: SplitArgs) -> Result<()> {
        let default_input = self.path("records.jsonl");
        let input = match args.input {
            Some(p) => p,
            None if default_input.exists() => default_input,
            None => self
                .config
                .data
                .records
                .clone()
                .ok_or_else(|| anyhow!("no records: run `ingest` or `synth`, or pass --input"))?,
        };
        let format = self.config.data.format.unwrap_or_else(|| format_of(&input));
        let (data, _) = load_records(&input, format)?;
        let ratios = self.config.split.ratios();
        let (bundle, report) = split_warm_start(&data, ratios, self.config.split.seed)?;
        if let Err(e) = bundle.check_invariants(&data) {
            bail!("split violates its invariants: {e}");
        }
        let dir = self.split_dir();
        fs::create_dir_all(&dir)?;
        for (name, part) in [("train", &bundle.train), ("validation", &bundle.validation), ("test", &bundle.test)] {
            write_records(dir.join(format!("{name}.jsonl")), part.records())?;
        }
        let manifest = SplitManifest {
            seed: bundle.seed,
            ratios,
            train: (&bundle.train).into(),
            validation: (&bundle.validation).into(),
            test: (&bundle.test).into(),
            report,
        };
        write_json(&dir.join("manifest.json"), &manifest)?;
        println!(
            "train {} / validation {} / test {} records, {} users dropped",
            manifest.train.records,
            manifest.validation.records,
            manifest.test.records,
            manifest.report.dropped_users.len()
        );
        Ok(())
    }

    pub fn rank(&self, args: RankArgs) -> Result<()> {
        let k = args.k.unwrap_or(self.config.profiles.k);
        let split = self.load_split()?;
        let job = self.config.profile_job(k)?;
        let mut rows = Vec::new();
        for user in split.train.users() {
            rows.extend(rank_features(user, &split.train, k, &job.blocklist)?.export_rows());
        }
        let path = self.path("rankings.jsonl");
        write_jsonl(&path, &rows)?;
        println!("ranked features of {} users into {}", split.train.n_users(), path.display());
        Ok(())
    }

    pub fn gen_profiles(&self) -> Result<()> {
        let split = self.load_split()?;
        let job = self.config.profile_job(self.config.profiles.k)?;
        let generator = self.generator();
        let outcome = generate_profiles(&split.train, &job, generator.as_ref());
        if outcome.profiles.is_empty() {
            bail!("no profile could be generated ({} failures)", outcome.failures.len());
        }
        save_profiles(self.profiles_path(), outcome.profiles.iter())?;
        let failures: BTreeMap<&str, String> =
            outcome.failures.iter().map(|(u, e)| (u.as_str(), e.to_string())).collect();
        write_json(&self.path("profile_failures.json"), &failures)?;
        println!(
            "{} profiles written to {}, {} users failed",
            outcome.profiles.len(),
            self.profiles_path().display(),
            failures.len()
        );
        Ok(())
    }

    pub fn edit_profile(&self, args: EditArgs) -> Result<()> {
        let set = self.load_profile_set()?;
        let current = set.latest(&args.user).ok_or_else(|| anyhow!("no profile for user {}", args.user))?;
        let direction: EditDirection = args.direction.parse().map_err(|e: String| anyhow!(e))?;
        let generator = self.generator();
        let edited = edit_profile(
            current,
            &args.feature,
            direction,
            self.config.data.domain,
            generator.as_ref(),
            GenerationParams::edit(),
        )?;
        if !args.dry_run {
            append_profile(self.profiles_path(), &edited)?;
        }
        println!("{}", edited.text);
        Ok(())
    }

    pub fn train(&self, args: TrainArgs) -> Result<()> {
        let split = self.load_split()?;
        let wanted = |kind: ModelKind| args.model.contains(&ModelKind::All) || args.model.contains(&kind);
        let dir = self.models_dir();
        fs::create_dir_all(&dir)?;
        let matrix = RatingMatrix::from_dataset(&split.train)?;
        let models = &self.config.models;
        let save = |ckpt: Checkpoint| -> Result<()> {
            let path = dir.join(format!("{}.json", ckpt.kind()));
            ckpt.save(&path)?;
            println!("saved {} to {}", ckpt.kind(), path.display());
            Ok(())
        };
        if wanted(ModelKind::Mostpop) {
            save(Checkpoint::MostPop(MostPop::fit(&matrix)))?;
        }
        if wanted(ModelKind::Userknn) {
            save(Checkpoint::UserKnn(UserKnn::fit(&matrix, models.knn)?))?;
        }
        if wanted(ModelKind::Itemknn) {
            save(Checkpoint::ItemKnn(ItemKnn::fit(&matrix, models.knn)?))?;
        }
        if wanted(ModelKind::Mf) {
            let validation: Vec<(String, String, f64)> = split
                .validation
                .records()
                .iter()
                .map(|r| (r.user_id.clone(), r.item_id.clone(), r.rating as f64))
                .collect();
            let mf = MfModel::fit(&matrix, Some(&validation), models.mf)?;
            tracing::info!(best_epoch = mf.best_epoch, epochs = mf.history.len(), "mf fitted");
            save(Checkpoint::Mf(mf))?;
        }
        let explicit_upr = args.model.contains(&ModelKind::Upr);
        if wanted(ModelKind::Upr) {
            if !self.profiles_path().exists() && !explicit_upr {
                tracing::warn!("no profiles yet, skipping the profile model");
                return Ok(());
            }
            let texts = self.load_profile_set()?.latest_texts();
            let keep = |r: &corpus::ReviewRecord| texts.contains_key(&r.user_id);
            let (train, validation) = (split.train.filter(keep), split.validation.filter(keep));
            if train.n_users() < split.train.n_users() {
                tracing::warn!(missing = split.train.n_users() - train.n_users(), "train users without a profile are left out");
            }
            let model = ProfileRegressor::fit_from_profiles(&texts, &train, Some(&validation), models.regressor.clone())?;
            tracing::info!(learning_rate = model.learning_rate, "profile model fitted");
            save(Checkpoint::Upr(model))?;
        }
        Ok(())
    }

    pub fn evaluate(&self) -> Result<()> {
        let split = self.load_split()?;
        let dir = self.models_dir();
        let mut owned: Vec<(String, Box<dyn Recommender>)> = Vec::new();
        for kind in ID_MODELS {
            let path = dir.join(format!("{kind}.json"));
            if path.exists() {
                let model = Checkpoint::load(&path)?
                    .into_recommender()
                    .ok_or_else(|| anyhow!("{} is not an id-based model", path.display()))?;
                owned.push((kind.to_string(), model));
            }
        }
        let upr_path = dir.join("upr.json");
        let mut test = split.test.clone();
        if upr_path.exists() {
            let texts = self.load_profile_set()?.latest_texts();
            let before = test.n_users();
            test = test.filter(|r| texts.contains_key(&r.user_id));
            if test.n_users() < before {
                tracing::warn!(missing = before - test.n_users(), "test users without a profile are left out");
            }
            let rec = ProfileRecommender {
                scorer: self.load_upr(&upr_path)?,
                profiles: texts,
                titles: split.train.item_titles(),
            };
            owned.push(("upr".to_string(), Box::new(rec)));
        }
        if owned.is_empty() {
            bail!("no checkpoints in {}; run `train` first", dir.display());
        }
        let models: Vec<(&str, &dyn Recommender)> = owned.iter().map(|(n, m)| (n.as_str(), m.as_ref())).collect();
        let table = benchmark(&models, &test, self.config.evaluation.gain)?;
        let rows: Vec<ReportRow> = table.rows.iter().map(|r| ReportRow::new(&r.model, &r.report)).collect();
        write_json(
            &self.path("report.json"),
            &serde_json::json!({ "gain": self.config.evaluation.gain, "test_records": test.len(), "models": rows }),
        )?;
        write_json(&self.path("report_per_user.json"), &table)?;
        let text = table.to_text();
        fs::write(self.path("report.txt"), &text)?;
        print!("{text}");
        Ok(())
    }

    pub fn scrutinize(&self, args: ScrutinizeArgs) -> Result<()> {
        let split = self.load_split()?;
        let model = self.load_upr(&self.models_dir().join("upr.json"))?;
        let set = self.load_profile_set()?;
        let profiles: Vec<NlProfile> = set.latest_profiles().cloned().collect();
        let all = merged(&[&split.train, &split.validation, &split.test]);
        let features = item_feature_map(&all);
        let titles = all.item_titles();
        let mut targets = if args.target.is_empty() { self.config.scrutability.targets.clone() } else { args.target };
        if targets.is_empty() {
            let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
            for item in split.test.items() {
                if let Some(f) = features.get(item) {
                    *counts.entry(f).or_default() += 1;
                }
            }
            let mut ranked: Vec<_> = counts.into_iter().collect();
            ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
            targets = ranked.into_iter().take(3).map(|(f, _)| f.to_string()).collect();
        }
        let generator = self.generator();
        let domain = self.config.data.domain;
        let mut reports = Vec::new();
        for target in &targets {
            let edit = |p: &NlProfile| {
                edit_profile(p, target, EditDirection::AddLike, domain, generator.as_ref(), GenerationParams::edit())
                    .map(|e| e.text)
            };
            let report = scrutability_experiment(
                &model,
                &profiles,
                target,
                &split.test,
                &features,
                &titles,
                &self.config.scrutability.study,
                edit,
            )?;
            println!(
                "{}: mean ΔCoverage@{} {:+.4} (variance {:.5}) over {} seeds",
                report.target,
                self.config.scrutability.study.k,
                report.mean_delta,
                report.delta_variance,
                report.seeds.len()
            );
            for note in &report.notes {
                println!("  note: {note}");
            }
            reports.push(report);
        }
        write_json(&self.path("scrutability.json"), &reports)
    }

    pub fn ablate(&self) -> Result<()> {
        let split = self.load_split()?;
        let config = AblationConfig {
            k_values: self.config.ablation.k_values.clone(),
            job: self.config.profile_job(self.config.profiles.k)?,
            regressor: self.config.models.regressor.clone(),
            gain: self.config.evaluation.gain,
        };
        let generator = self.generator();
        let points = feature_ablation(&split, &config, generator.as_ref())?;
        let rows: Vec<serde_json::Value> = points
            .iter()
            .map(|p| {
                println!("k={} RMSE {:.4} MAE {:.4}", p.k, p.report.rmse, p.report.mae);
                serde_json::json!({
                    "k": p.k,
                    "rmse": p.report.rmse,
                    "mae": p.report.mae,
                    "ndcg_at_10": p.report.ndcg_at_10,
                    "map": p.report.map,
                    "users_without_profile": p.users_without_profile,
                })
            })
            .collect();
        write_json(&self.path("ablation.json"), &rows)
    }

    pub fn serve(&self, args: ServeArgs) -> Result<()> {
        let split = self.load_split()?;
        let model = self.load_upr(&args.model.unwrap_or_else(|| self.models_dir().join("upr.json")))?;
        let store_path = args.profiles.unwrap_or_else(|| self.profiles_path());
        if !store_path.exists() {
            bail!("{} not found; run `gen-profiles` first", store_path.display());
        }
        let (store, report) = ProfileStore::open(&store_path)?;
        tracing::info!(loaded = report.loaded, skipped = report.skipped, "profile store opened");
        let all = merged(&[&split.train, &split.validation, &split.test]);
        let pools = CandidatePools::from_test_split(
            &split.test,
            all.items(),
            self.config.serve.extra_candidates,
            self.config.split.seed,
        );
        let state = SessionState {
            scorer: Arc::new(model),
            generator: self.generator(),
            domain: self.config.data.domain,
            store,
            pools,
            item_features: item_feature_map(&all),
            titles: all.item_titles(),
        };
        let static_dir = args.static_dir.or_else(|| self.config.serve.static_dir.clone());
        let app = scrutable_service::router(Arc::new(state), static_dir);
        let port = args.port.unwrap_or(self.config.serve.port);
        let addr = std::net::SocketAddr::from(([127, 0, 0, 1], port));
        println!("serving on http://{addr}");
        tokio::runtime::Builder::new_multi_thread()
            .enable_all()
            .build()?
            .block_on(scrutable_service::serve(addr, app))?;
        Ok(())
    }
}
