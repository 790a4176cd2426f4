use std::fs;
use std::path::{Path, PathBuf};

use ctxoie::bootstrap::{combine, label_stats, load_combined, save_combined};
use ctxoie::context::{build_dataset, load_examples, save_examples, LayoutConfig, TrainingExample};
use ctxoie::corpus::{
    corpus_stats, load_documents, load_extractions, load_gold, load_tagged_conll, save_extractions,
    sentence_universe, DocFormat, Document, Sentence,
};
use ctxoie::extractor::PatternExtractor;
use ctxoie::model::{
    grad_check, predict_documents, train, GradCheck, ModelConfig, ModelParams, TrainConfig, Vocab,
};
use ctxoie::scorer::{consistency, score_extractions, MatchMode, ScoreReport};
use log::{info, warn};
use serde::{Deserialize, Serialize};

use crate::{
    CliError, CombineArgs, Command, ConsistencyArgs, ExtractArgs, GradcheckArgs, PredictArgs,
    ScoreArgs, StatsArgs, TrainArgs, WindowsArgs,
};

type Result<T> = std::result::Result<T, CliError>;

/// Contents of a `--config` file. Every section is optional.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Tokens seen fewer times in the training data map to `<unk>`.
    pub vocab_min_count: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            vocab_min_count: 1,
        }
    }
}

pub(crate) fn run(command: Command) -> Result<()> {
    match command {
        Command::Stats(a) => stats(a),
        Command::Extract(a) => extract(a),
        Command::Combine(a) => combine_cmd(a),
        Command::Score(a) => score(a),
        Command::Consistency(a) => consistency_cmd(a),
        Command::Windows(a) => windows(a),
        Command::Train(a) => train_cmd(a),
        Command::Predict(a) => predict(a),
        Command::Gradcheck(a) => gradcheck(a),
    }
}

/// Fails with a data error unless every input exists.
fn require<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(CliError::Data(format!("{}: no such file", p.display())));
        }
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// Pretty JSON to `path`, or to stdout without one.
fn write_json<T: Serialize>(path: Option<&Path>, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("report serializes");
    text.push('\n');
    match path {
        Some(p) => write_text(p, &text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn docs_at(path: &Path, format: DocFormat) -> Result<Vec<Document>> {
    load_documents(path, format).map_err(|e| CliError::at(path, e))
}

fn read_config(path: Option<&Path>) -> Result<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn stats(a: StatsArgs) -> Result<()> {
    require([a.docs.as_path()].into_iter().chain(a.gold.as_deref()))?;
    let docs = docs_at(&a.docs, a.format.into())?;
    let gold = match &a.gold {
        Some(p) => load_gold(p).map_err(|e| CliError::at(p, e))?,
        None => Vec::new(),
    };
    let st = corpus_stats(&docs, &gold)?;
    eprint!("{}", st.to_table());
    write_json(a.report.as_deref(), &st)
}

fn extract(a: ExtractArgs) -> Result<()> {
    let sentences: Vec<Sentence> = match (&a.conll, &a.docs) {
        (Some(p), _) => {
            require([p.as_path()])?;
            load_tagged_conll(p).map_err(|e| CliError::at(p, e))?
        }
        (None, Some(p)) => {
            require([p.as_path()])?;
            docs_at(p, DocFormat::Jsonl)?
                .into_iter()
                .flat_map(|d| d.sentences)
                .collect()
        }
        (None, None) => unreachable!("clap requires one input"),
    };
    let out = PatternExtractor::new().extract_all(&sentences)?;
    info!("{} tuples from {} sentences", out.len(), sentences.len());
    save_extractions(&a.out, &out)?;
    Ok(())
}

fn combine_cmd(a: CombineArgs) -> Result<()> {
    require([a.main.as_path(), &a.fallback, &a.universe])?;
    let main = load_extractions(&a.main).map_err(|e| CliError::at(&a.main, e))?;
    let fallback = load_extractions(&a.fallback).map_err(|e| CliError::at(&a.fallback, e))?;
    let universe = sentence_universe(&docs_at(&a.universe, a.format.into())?);
    let labels = combine(&main, &fallback, &universe)?;
    save_combined(&a.out, &labels)?;
    let st = label_stats(&labels);
    info!(
        "{} sentences ({} main, {} fallback), {} tuples",
        st.n_sent, st.main_sent, st.fallback_sent, st.n_tuple
    );
    write_json(a.report.as_deref(), &st)
}

fn score_files(pred: &Path, gold: &Path, mode: MatchMode) -> Result<ScoreReport> {
    let preds = load_extractions(pred).map_err(|e| CliError::at(pred, e))?;
    let golds = load_gold(gold).map_err(|e| CliError::at(gold, e))?;
    Ok(score_extractions(&preds, &golds, mode)?)
}

fn score(a: ScoreArgs) -> Result<()> {
    require([a.pred.as_path(), &a.gold])?;
    let report = score_files(&a.pred, &a.gold, a.mode.into())?;
    info!(
        "auc {:.4}  best f1 {:.4}  (p {:.4}, r {:.4})",
        report.auc, report.best_f1, report.precision_at_best, report.recall_at_best
    );
    write_json(a.report.as_deref(), &report)
}

fn consistency_cmd(a: ConsistencyArgs) -> Result<()> {
    require([a.a.as_path(), &a.b])?;
    let ann_a = load_gold(&a.a).map_err(|e| CliError::at(&a.a, e))?;
    let ann_b = load_gold(&a.b).map_err(|e| CliError::at(&a.b, e))?;
    let c = consistency(&ann_a, &ann_b)?;
    for (name, prf) in [
        ("A<-B", c.a_from_b),
        ("B<-A", c.b_from_a),
        ("average", c.average),
    ] {
        eprintln!(
            "{name:<8}{:>7.1}{:>7.1}{:>7.1}",
            100.0 * prf.precision,
            100.0 * prf.recall,
            100.0 * prf.f1
        );
    }
    write_json(a.report.as_deref(), &c)
}

fn windows(a: WindowsArgs) -> Result<()> {
    require([a.docs.as_path(), &a.labels])?;
    let docs = docs_at(&a.docs, a.format.into())?;
    let labels = load_combined(&a.labels).map_err(|e| CliError::at(&a.labels, e))?;
    let layout = LayoutConfig { max_len: a.max_len };
    let examples = build_dataset(&docs, &labels, a.t, &layout)?;
    info!("{} examples with t = {}", examples.len(), a.t);
    save_examples(&a.out, &examples)?;
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    examples: usize,
    vocab_size: usize,
    unknown_targets: usize,
    epochs: &'a [ctxoie::model::EpochLog],
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    require([a.data.as_path()].into_iter().chain(a.config.as_deref()))?;
    let mut cfg = read_config(a.config.as_deref())?;
    if let Some(seed) = a.seed {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    if let Some(epochs) = a.epochs {
        cfg.train.epochs = epochs;
    }
    cfg.train.validate()?;
    let data = load_examples(&a.data).map_err(|e| CliError::at(&a.data, e))?;
    let vocab = Vocab::build(&data, cfg.vocab_min_count);
    let mut params = ModelParams::init(&cfg.model, vocab)?;
    info!(
        "{} examples, vocabulary {}, {} parameters",
        data.len(),
        params.vocab.len(),
        params.num_scalars()
    );
    if let Some(dir) = &a.checkpoint_dir {
        create_dir(dir)?;
    }
    let report = train(&mut params, &data, &cfg.train, |log, p| {
        info!("epoch {:>4}  loss {:.6}", log.epoch, log.loss);
        if let Some(dir) = &a.checkpoint_dir {
            p.save(dir.join(format!("epoch_{}.json", log.epoch)))?;
        }
        Ok(true)
    })?;
    if report.unknown_targets > 0 {
        warn!(
            "{} target tokens are outside the vocabulary and the source",
            report.unknown_targets
        );
    }
    params.save(&a.out)?;
    if let Some(path) = &a.report {
        write_json(
            Some(path),
            &TrainSummary {
                examples: data.len(),
                vocab_size: params.vocab.len(),
                unknown_targets: report.unknown_targets,
                epochs: &report.epochs,
            },
        )?;
    }
    Ok(())
}

#[derive(Serialize)]
struct SweepPoint {
    t: usize,
    predictions: PathBuf,
    report: PathBuf,
    malformed: usize,
    auc: f64,
    best_f1: f64,
}

fn predict(a: PredictArgs) -> Result<()> {
    require(
        [a.model.as_path(), &a.docs]
            .into_iter()
            .chain(a.gold.as_deref().filter(|_| a.sweep_t.is_some())),
    )?;
    if a.beam == Some(0) {
        return Err(CliError::Usage("--beam must be at least 1".into()));
    }
    let params = ModelParams::load(&a.model).map_err(|e| CliError::at(&a.model, e))?;
    let docs = docs_at(&a.docs, a.format.into())?;
    let k = a.beam.unwrap_or(params.config.beam);

    if let Some(t) = a.t {
        let out = predict_documents(&params, &docs, t, k)?;
        if out.malformed > 0 {
            warn!("{} malformed hypotheses dropped", out.malformed);
        }
        info!("{} tuples with t = {t}", out.extractions.len());
        save_extractions(
            a.out.as_ref().expect("clap requires --out"),
            &out.extractions,
        )?;
        return Ok(());
    }

    let range = a.sweep_t.expect("clap requires --t or --sweep-t");
    let dir = a.out_dir.expect("clap requires --out-dir");
    let gold = a.gold.expect("clap requires --gold");
    let golds = load_gold(&gold).map_err(|e| CliError::at(&gold, e))?;
    create_dir(&dir)?;
    let mode: MatchMode = a.mode.into();
    let mut points = Vec::new();
    for t in range {
        let out = predict_documents(&params, &docs, t, k)?;
        let pred_path = dir.join(format!("pred_t{t}.tsv"));
        let report_path = dir.join(format!("report_t{t}.json"));
        save_extractions(&pred_path, &out.extractions)?;
        let report = score_extractions(&out.extractions, &golds, mode)?;
        write_json(Some(&report_path), &report)?;
        info!(
            "t = {t}: auc {:.4}  best f1 {:.4}",
            report.auc, report.best_f1
        );
        points.push(SweepPoint {
            t,
            predictions: pred_path,
            report: report_path,
            malformed: out.malformed,
            auc: report.auc,
            best_f1: report.best_f1,
        });
    }
    write_json(Some(&dir.join("sweep.json")), &points)
}

/// A fixed example with context, an out-of-vocabulary source token and a
/// target token that has to be copied.
fn builtin_example() -> TrainingExample {
    let toks = |s: &str| s.split_whitespace().map(String::from).collect::<Vec<_>>();
    let input = toks("<bos> a b zeta <sep> c a <sep>");
    TrainingExample {
        segment_ids: vec![0, 0, 0, 0, 0, 1, 1, 1],
        input,
        target: toks("<sub> a <rel> b <obj> zeta d <eot>"),
        copy: vec![None, Some(0), None, Some(1), None, Some(2), None, None],
    }
}

#[derive(Serialize)]
struct GradcheckReport {
    eps: f64,
    tol: f64,
    passed: bool,
    checks: Vec<GradCheck>,
}

fn gradcheck(a: GradcheckArgs) -> Result<()> {
    require(a.config.as_deref().into_iter().chain(a.data.as_deref()))?;
    if a.eps.is_nan() || a.eps <= 0.0 {
        return Err(CliError::Usage("--eps must be positive".into()));
    }
    let cfg = read_config(a.config.as_deref())?;
    let examples = match &a.data {
        Some(p) => {
            let mut xs = load_examples(p).map_err(|e| CliError::at(p, e))?;
            xs.truncate(a.n);
            if xs.is_empty() {
                return Err(CliError::Data(format!("{}: no examples", p.display())));
            }
            xs
        }
        None => vec![builtin_example()],
    };
    let vocab = match &a.data {
        Some(_) => Vocab::build(&examples, cfg.vocab_min_count),
        None => Vocab::from_tokens(["a", "b", "c", "d"]),
    };
    let params = ModelParams::init(&cfg.model, vocab)?;
    let checks = examples
        .iter()
        .map(|ex| grad_check(&params, ex, a.eps))
        .collect::<ctxoie::Result<Vec<_>>>()?;
    let worst = checks.iter().map(|c| c.max_rel_error).fold(0.0, f64::max);
    let passed = worst <= a.tol;
    info!(
        "max relative error {worst:.3e} over {} examples",
        checks.len()
    );
    write_json(
        a.report.as_deref(),
        &GradcheckReport {
            eps: a.eps,
            tol: a.tol,
            passed,
            checks,
        },
    )?;
    if passed {
        Ok(())
    } else {
        Err(CliError::Data(format!(
            "gradient check failed: relative error {worst:.3e} exceeds {:.1e}",
            a.tol
        )))
    }
}
