//! Command-line front end.
//!
//! Every command writes CSV preceded by `# key=value` lines that record the
//! command, a hash of its resolved configuration and input bytes, and the
//! seed. The same command with the same inputs writes the same bytes.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::classify::{
    precision_recall_curve, repeated_metrics, summarize, train, train_test_split, Dataset, Hyper, Impurity,
    MetricsReport, ModelKind,
};
use crate::error::{Error, Result};
use crate::features::{
    build_labeled, group_streams, ingest_log_csv, read_feature_csv, write_feature_csv, write_raw_csv, ColumnMap,
    Feature, FeatureVector, Label, Observation, RiskPolicy, WindowingPolicy,
};
use crate::sim::{run_outbreak_drill, run_paper_replication, Scenario};

#[derive(Debug, Parser)]
#[command(name = "proxtrace", version, about = "BLE proximity risk simulation and classifier evaluation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run the stepped-distance experiment and write per-geometry datasets.
    Simulate(SimulateArgs),
    /// Repeated hold-out evaluation of each classifier on a feature CSV.
    Evaluate(EvaluateArgs),
    /// Accuracy as features are added one at a time.
    AblateFeatures(AblateFeaturesArgs),
    /// Accuracy as the per-window packet cap grows.
    AblateSamples(AblateSamplesArgs),
    /// Accuracy under different close-contact thresholds.
    AblateThreshold(AblateThresholdArgs),
    /// Publish one agent's signatures and report who gets alerted.
    Drill(DrillArgs),
    /// Turn a raw measurement log into a labelled feature CSV.
    Ingest(IngestArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvalOpts {
    /// Comma-separated subset of dt, lda, nb, knn.
    #[arg(long, value_delimiter = ',', default_value = "dt,lda,nb,knn")]
    pub classifiers: Vec<ModelKind>,
    /// Random train/test splits per classifier.
    #[arg(long)]
    pub reps: Option<usize>,
    /// Training fraction of each split.
    #[arg(long, default_value_t = 0.8)]
    pub split: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 12)]
    pub max_depth: usize,
    #[arg(long, default_value_t = 5)]
    pub min_leaf: usize,
    /// gini or entropy.
    #[arg(long, default_value = "gini")]
    pub impurity: Impurity,
    /// Neighbours for kNN.
    #[arg(long, default_value_t = 5)]
    pub k: usize,
}

impl EvalOpts {
    pub fn hyper(&self) -> Hyper {
        Hyper {
            max_depth: self.max_depth,
            min_leaf: self.min_leaf,
            impurity: self.impurity,
            k: self.k,
        }
    }

    fn resolved(&self, default_reps: usize) -> Self {
        Self {
            reps: Some(self.reps.unwrap_or(default_reps)),
            ..self.clone()
        }
    }

    fn reps(&self) -> usize {
        self.reps.expect("resolved")
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct WindowOpts {
    #[arg(long, default_value_t = 10_000)]
    pub window_ms: u64,
    /// Defaults to the window length (non-overlapping windows).
    #[arg(long)]
    pub stride_ms: Option<u64>,
    #[arg(long, default_value_t = 1)]
    pub min_samples: usize,
    #[arg(long)]
    pub max_samples: Option<usize>,
    /// Moving-average length applied to each stream before windowing.
    #[arg(long)]
    pub smoothing: Option<usize>,
}

impl WindowOpts {
    pub fn policy(&self) -> Result<WindowingPolicy> {
        let p = WindowingPolicy {
            window_ms: self.window_ms,
            stride_ms: self.stride_ms.unwrap_or(self.window_ms),
            min_samples: self.min_samples,
            max_samples: self.max_samples,
            smoothing: self.smoothing,
        };
        p.validate()?;
        Ok(p)
    }
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct SimulateArgs {
    #[arg(long)]
    #[serde(skip)]
    pub scenario: PathBuf,
    /// Output directory, created if missing.
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
    /// Overrides the scenario seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct EvaluateArgs {
    /// Feature CSV with labels.
    #[arg(long)]
    #[serde(skip)]
    pub data: PathBuf,
    #[command(flatten)]
    pub eval: EvalOpts,
    /// Comma-separated feature subset.
    #[arg(long, value_delimiter = ',', default_value = "n_samples,mean_rss,max_rss,min_rss,rss_range")]
    pub features: Vec<Feature>,
    /// Metrics table; stdout if absent.
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
    /// Precision-recall points from the first split of each classifier.
    #[arg(long)]
    #[serde(skip)]
    pub pr_out: Option<PathBuf>,
    /// Metrics of every repetition.
    #[arg(long)]
    #[serde(skip)]
    pub per_rep_out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AblateFeaturesArgs {
    #[arg(long)]
    #[serde(skip)]
    pub data: PathBuf,
    #[command(flatten)]
    pub eval: EvalOpts,
    /// Features in the order they are added.
    #[arg(long, value_delimiter = ',', default_value = "mean_rss,n_samples,max_rss,min_rss,rss_range")]
    pub order: Vec<Feature>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RawInput {
    /// Raw measurement CSV with ground-truth distances.
    #[arg(long)]
    #[serde(skip)]
    pub raw: PathBuf,
    /// `canonical=actual` column renames.
    #[arg(long, default_value = "")]
    pub columns: String,
    #[command(flatten)]
    pub window: WindowOpts,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AblateSamplesArgs {
    #[command(flatten)]
    pub input: RawInput,
    /// Packet caps per window, ascending.
    #[arg(long, value_delimiter = ',', default_value = "1,5,10,25,50,100,200")]
    pub caps: Vec<usize>,
    #[arg(long, default_value_t = 2.0)]
    pub threshold: f64,
    #[command(flatten)]
    pub eval: EvalOpts,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct AblateThresholdArgs {
    #[command(flatten)]
    pub input: RawInput,
    /// Close-contact thresholds in metres.
    #[arg(long, value_delimiter = ',', default_value = "1.0,1.25,1.5,1.75,2.0")]
    pub thresholds: Vec<f64>,
    #[command(flatten)]
    pub eval: EvalOpts,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct DrillArgs {
    #[arg(long)]
    #[serde(skip)]
    pub scenario: PathBuf,
    /// Agent id of the diagnosed user.
    #[arg(long)]
    pub infected: u64,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    #[serde(skip)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct IngestArgs {
    #[command(flatten)]
    pub input: RawInput,
    #[arg(long, default_value_t = 2.0)]
    pub threshold: f64,
    #[arg(long)]
    #[serde(skip)]
    pub out: PathBuf,
}

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Io { .. } | Error::Domain(_) => 2,
        Error::Format(_)
        | Error::Csv(_)
        | Error::Json(_)
        | Error::Scenario(_)
        | Error::Protocol(_)
        | Error::Prediction(_) => 3,
        Error::Degenerate(_) | Error::Training(_) => 4,
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate(a) => cmd_simulate(&a),
        Command::Evaluate(a) => cmd_evaluate(&a),
        Command::AblateFeatures(a) => cmd_ablate_features(&a),
        Command::AblateSamples(a) => cmd_ablate_samples(&a),
        Command::AblateThreshold(a) => cmd_ablate_threshold(&a),
        Command::Drill(a) => cmd_drill(&a),
        Command::Ingest(a) => cmd_ingest(&a),
    }
}

type Meta = Vec<(String, String)>;

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

/// Header lines naming the command, the hash of its configuration plus
/// the bytes of every input, and the seed.
fn run_meta(command: &str, config: &impl Serialize, inputs: &[&[u8]], seed: u64) -> Result<Meta> {
    let mut h = Sha256::new();
    h.update(command.as_bytes());
    h.update(serde_json::to_vec(config)?);
    for bytes in inputs {
        h.update(Sha256::digest(bytes));
    }
    Ok(vec![
        ("command".into(), command.into()),
        ("config_hash".into(), hex::encode(h.finalize())),
        ("seed".into(), seed.to_string()),
    ])
}

fn emit(path: Option<&Path>, bytes: &[u8]) -> Result<()> {
    match path {
        Some(p) => std::fs::write(p, bytes).map_err(|e| Error::io(p, e)),
        None => {
            use std::io::Write;
            std::io::stdout()
                .write_all(bytes)
                .map_err(|e| Error::io("<stdout>", e))
        }
    }
}

fn meta_text(meta: &Meta) -> String {
    meta.iter().map(|(k, v)| format!("# {k}={v}\n")).collect()
}

fn load_features(bytes: &[u8], features: &[Feature]) -> Result<Dataset> {
    Dataset::from_vectors(&read_feature_csv(bytes)?, features)
}

fn need_both_classes(data: &Dataset, what: &str) -> Result<()> {
    if data.has_both_classes() {
        Ok(())
    } else {
        Err(Error::Degenerate(format!(
            "{what}: single class ({} high, {} low)",
            data.count(Label::High),
            data.count(Label::Low)
        )))
    }
}

fn report(data: &Dataset, kind: ModelKind, eval: &EvalOpts) -> Result<MetricsReport> {
    summarize(&repeated_metrics(data, kind, &eval.hyper(), eval.split, eval.reps(), eval.seed)?)
}

pub fn cmd_simulate(args: &SimulateArgs) -> Result<()> {
    let mut scenario = Scenario::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let data = run_paper_replication(&scenario, &scenario.windowing, &scenario.risk, scenario.seed)?;
    std::fs::create_dir_all(&args.out).map_err(|e| Error::io(&args.out, e))?;
    let mut warned = std::collections::HashSet::new();
    for ds in [&data.direct, &data.crosswise] {
        for w in &ds.warnings {
            if warned.insert(w.clone()) {
                eprintln!("warning: {w}");
            }
        }
        let mut meta = vec![("command".to_string(), "simulate".to_string())];
        meta.extend(ds.meta());
        let g = ds.geometry.as_str();
        let mut buf = Vec::new();
        write_feature_csv(&ds.rows, &meta, &mut buf)?;
        emit(Some(&args.out.join(format!("{g}_features.csv"))), &buf)?;
        buf.clear();
        write_raw_csv(&ds.raw, &meta, &mut buf)?;
        emit(Some(&args.out.join(format!("{g}_raw.csv"))), &buf)?;
        let (h, l) = ds.class_counts();
        eprintln!("{g}: {} windows ({h} high, {l} low) from {} packets", ds.rows.len(), ds.raw.len());
    }
    Ok(())
}

pub fn cmd_evaluate(args: &EvaluateArgs) -> Result<()> {
    let eval = args.eval.resolved(100);
    let bytes = read_bytes(&args.data)?;
    let data = load_features(&bytes, &args.features)?;
    need_both_classes(&data, "dataset")?;
    let config = EvaluateArgs {
        eval: eval.clone(),
        ..args.clone()
    };
    let mut meta = run_meta("evaluate", &config, &[&bytes], eval.seed)?;
    meta.push(("reps".into(), eval.reps().to_string()));
    meta.push(("split".into(), eval.split.to_string()));
    meta.push(("features".into(), feature_list(&args.features)));
    meta.push(("rows".into(), data.len().to_string()));

    let mut table = meta_text(&meta) + "classifier,metric,mean,ci_lo,ci_hi\n";
    let mut per_rep = meta_text(&meta) + "classifier,rep,precision,recall,f1,accuracy\n";
    for &kind in &eval.classifiers {
        let reps = repeated_metrics(&data, kind, &eval.hyper(), eval.split, eval.reps(), eval.seed)?;
        let r = summarize(&reps)?;
        for (name, s) in r.rows() {
            writeln!(table, "{kind},{name},{:.6},{:.6},{:.6}", s.mean, s.ci_lo, s.ci_hi).unwrap();
        }
        for (i, m) in reps.iter().enumerate() {
            writeln!(per_rep, "{kind},{i},{:.6},{:.6},{:.6},{:.6}", m.precision, m.recall, m.f1, m.accuracy).unwrap();
        }
    }
    if let Some(p) = &args.pr_out {
        let mut pr = meta_text(&meta) + "classifier,threshold,recall,precision\n";
        let (tr, te) = train_test_split(data.len(), eval.split, eval.seed, 0)?;
        let test = data.subset(&te);
        for &kind in &eval.classifiers {
            let model = train(kind, &data.subset(&tr), &eval.hyper())?;
            for pt in precision_recall_curve(&model, &test)? {
                writeln!(pr, "{kind},{:.6},{:.6},{:.6}", pt.threshold, pt.recall, pt.precision).unwrap();
            }
        }
        emit(Some(p), pr.as_bytes())?;
    }
    if let Some(p) = &args.per_rep_out {
        emit(Some(p), per_rep.as_bytes())?;
    }
    emit(args.out.as_deref(), table.as_bytes())
}

fn feature_list(features: &[Feature]) -> String {
    features.iter().map(|f| f.name()).collect::<Vec<_>>().join("+")
}

pub fn cmd_ablate_features(args: &AblateFeaturesArgs) -> Result<()> {
    let eval = args.eval.resolved(50);
    if args.order.is_empty() || args.order.len() > Feature::ALL.len() {
        return Err(Error::Domain("feature order must list 1 to 5 features".into()));
    }
    let mut seen = std::collections::HashSet::new();
    if let Some(f) = args.order.iter().find(|f| !seen.insert(**f)) {
        return Err(Error::Domain(format!("feature {} listed twice", f.name())));
    }
    let bytes = read_bytes(&args.data)?;
    let rows = read_feature_csv(&bytes[..])?;
    let config = AblateFeaturesArgs {
        eval: eval.clone(),
        ..args.clone()
    };
    let mut meta = run_meta("ablate-features", &config, &[&bytes], eval.seed)?;
    meta.push(("reps".into(), eval.reps().to_string()));
    meta.push(("feature_order".into(), feature_list(&args.order)));
    if args.order[..] != Feature::ABLATION_ORDER[..args.order.len()] {
        meta.push(("order_overridden".into(), "true".into()));
    }
    let mut out = meta_text(&meta) + "classifier,n_features,features,mean,ci_lo,ci_hi\n";
    for &kind in &eval.classifiers {
        for n in 1..=args.order.len() {
            let data = Dataset::from_vectors(&rows, &args.order[..n])?;
            need_both_classes(&data, "dataset")?;
            let a = report(&data, kind, &eval)?.accuracy;
            writeln!(
                out,
                "{kind},{n},{},{:.6},{:.6},{:.6}",
                feature_list(&args.order[..n]),
                a.mean,
                a.ci_lo,
                a.ci_hi
            )
            .unwrap();
        }
    }
    emit(args.out.as_deref(), out.as_bytes())
}

fn load_streams(input: &RawInput) -> Result<(Vec<u8>, Vec<Vec<Observation>>)> {
    let bytes = read_bytes(&input.raw)?;
    let report = ingest_log_csv(&input.raw, &ColumnMap::parse(&input.columns)?)?;
    for w in &report.warnings {
        eprintln!("warning: {}: {w}", input.raw.display());
    }
    if report.records.is_empty() {
        return Err(Error::Format(format!("{}: no usable records", input.raw.display())));
    }
    Ok((bytes, group_streams(&report.records)))
}

fn labeled(streams: &[Vec<Observation>], windowing: &WindowingPolicy, threshold: f64) -> Result<Vec<FeatureVector>> {
    build_labeled(streams, windowing, &RiskPolicy::new(threshold)?)
}

pub fn cmd_ablate_samples(args: &AblateSamplesArgs) -> Result<()> {
    let eval = args.eval.resolved(50);
    if args.caps.is_empty() || args.caps[0] == 0 || args.caps.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::Domain("caps must be positive and strictly ascending".into()));
    }
    let base = args.input.window.policy()?;
    let (bytes, streams) = load_streams(&args.input)?;
    let config = AblateSamplesArgs {
        eval: eval.clone(),
        ..args.clone()
    };
    let mut meta = run_meta("ablate-samples", &config, &[&bytes], eval.seed)?;
    meta.push(("reps".into(), eval.reps().to_string()));
    meta.push(("threshold_m".into(), args.threshold.to_string()));

    let mut datasets = Vec::new();
    for &cap in &args.caps {
        let policy = WindowingPolicy {
            max_samples: Some(base.max_samples.map_or(cap, |m| m.min(cap))),
            ..base
        };
        let data = Dataset::from_vectors(&labeled(&streams, &policy, args.threshold)?, &Feature::ALL)?;
        need_both_classes(&data, &format!("cap {cap}"))?;
        datasets.push((cap, data));
    }
    let mut out = meta_text(&meta) + "classifier,cap,mean,ci_lo,ci_hi\n";
    for &kind in &eval.classifiers {
        for (cap, data) in &datasets {
            let a = report(data, kind, &eval)?.accuracy;
            writeln!(out, "{kind},{cap},{:.6},{:.6},{:.6}", a.mean, a.ci_lo, a.ci_hi).unwrap();
        }
    }
    emit(args.out.as_deref(), out.as_bytes())
}

pub fn cmd_ablate_threshold(args: &AblateThresholdArgs) -> Result<()> {
    let eval = args.eval.resolved(50);
    if args.thresholds.is_empty() {
        return Err(Error::Domain("no thresholds given".into()));
    }
    let policy = args.input.window.policy()?;
    let (bytes, streams) = load_streams(&args.input)?;
    let config = AblateThresholdArgs {
        eval: eval.clone(),
        ..args.clone()
    };
    let mut meta = run_meta("ablate-threshold", &config, &[&bytes], eval.seed)?;
    meta.push(("reps".into(), eval.reps().to_string()));

    let mut datasets = Vec::new();
    for &t in &args.thresholds {
        let data = Dataset::from_vectors(&labeled(&streams, &policy, t)?, &Feature::ALL)?;
        need_both_classes(&data, &format!("threshold {t} m"))?;
        datasets.push((t, data));
    }
    let mut out = meta_text(&meta) + "classifier,threshold_m,mean,ci_lo,ci_hi\n";
    for &kind in &eval.classifiers {
        for (t, data) in &datasets {
            let a = report(data, kind, &eval)?.accuracy;
            writeln!(out, "{kind},{t},{:.6},{:.6},{:.6}", a.mean, a.ci_lo, a.ci_hi).unwrap();
        }
    }
    emit(args.out.as_deref(), out.as_bytes())
}

pub fn cmd_drill(args: &DrillArgs) -> Result<()> {
    let bytes = read_bytes(&args.scenario)?;
    let mut scenario = Scenario::load(&args.scenario)?;
    if let Some(seed) = args.seed {
        scenario.seed = seed;
    }
    let r = run_outbreak_drill(&scenario, args.infected, scenario.seed)?;
    let mut meta = run_meta("drill", args, &[&bytes], scenario.seed)?;
    meta.push(("infected".into(), r.infected.to_string()));
    meta.push(("published_signatures".into(), r.published_signatures.to_string()));
    let mut out = meta_text(&meta) + "agent,alerted,matched_signatures,samples\n";
    for a in &r.alerts {
        writeln!(out, "{},{},{},{}", a.agent, a.alerted, a.matched_signatures, a.samples).unwrap();
    }
    emit(args.out.as_deref(), out.as_bytes())
}

pub fn cmd_ingest(args: &IngestArgs) -> Result<()> {
    let policy = args.input.window.policy()?;
    let (bytes, streams) = load_streams(&args.input)?;
    let rows = labeled(&streams, &policy, args.threshold)?;
    let mut meta = run_meta("ingest", args, &[&bytes], 0)?;
    meta.push(("streams".into(), streams.len().to_string()));
    let mut buf = Vec::new();
    write_feature_csv(&rows, &meta, &mut buf)?;
    emit(Some(&args.out), &buf)?;
    eprintln!("{} windows from {} streams", rows.len(), streams.len());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes() {
        assert_eq!(exit_code(&Error::io("x", std::io::Error::other("gone"))), 2);
        assert_eq!(exit_code(&Error::Format("bad".into())), 3);
        assert_eq!(exit_code(&Error::Degenerate("one class".into())), 4);
    }

    #[test]
    fn parses_every_subcommand() {
        for argv in [
            "proxtrace simulate --scenario s.toml --out d",
            "proxtrace evaluate --data f.csv --classifiers dt,knn --reps 10",
            "proxtrace ablate-features --data f.csv --order mean_rss,n_samples",
            "proxtrace ablate-samples --raw r.csv --caps 5,100,200",
            "proxtrace ablate-threshold --raw r.csv --thresholds 1,2",
            "proxtrace drill --scenario s.toml --infected 3",
            "proxtrace ingest --raw r.csv --out f.csv --columns rss_dbm=rssi",
        ] {
            Cli::try_parse_from(argv.split(' ')).unwrap_or_else(|e| panic!("{argv}: {e}"));
        }
        assert!(Cli::try_parse_from(["proxtrace", "evaluate", "--data", "f", "--classifiers", "svm"]).is_err());
    }
}
