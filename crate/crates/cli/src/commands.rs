use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use mqm_core::analysis::{
    correlation_report, document_profile, source_system_scores, CorrelationLevel, CorrelationReport,
    GoldConfig, ScoreSource, SegmentFilter, SystemSet, WMT_RAW, WMT_Z,
};
use mqm_core::budget::{
    min_ratings_for_tau, tau_distribution, tau_distribution_bootstrap, GaussianModel, GridPolicy,
    RatingBudgetConfig, ScoreGrid,
};
use mqm_core::campaign::{Campaign, DocumentSpec, Project, ProjectMode};
use mqm_core::corpus::{import_metric_scores, import_mqm_tsv, import_scalar_tsv, validate_corpus, write_mqm_tsv, MetricLevel, MetricScores};
use mqm_core::scoring::{aggregate, category_breakdown, rank_systems, rater_report, round_scores, weight_sweep};
use mqm_core::{Corpus, ImportMode, Orientation, Scale, WeightScheme};

use crate::output::emit;
use crate::{Cli, Command, CorpusArgs, Groups, Mode, ModelArgs, SimArgs, Study};

struct Ctx {
    data_dir: Option<PathBuf>,
    seed: u64,
}

impl Ctx {
    fn path(&self, p: &Path) -> PathBuf {
        match &self.data_dir {
            Some(dir) if p.is_relative() => dir.join(p),
            _ => p.to_path_buf(),
        }
    }

    fn open(&self, p: &Path) -> Result<BufReader<File>> {
        let path = self.path(p);
        let file = File::open(&path).with_context(|| format!("cannot read {}", path.display()))?;
        Ok(BufReader::new(file))
    }

    fn corpus(&self, path: &Path, lenient: bool) -> Result<Corpus> {
        let mode = if lenient { ImportMode::Lenient } else { ImportMode::Strict };
        let import = import_mqm_tsv(self.open(path)?, mode).with_context(|| format!("{}", path.display()))?;
        for w in &import.warnings {
            eprintln!("warning: {w}");
        }
        Ok(import.corpus)
    }

    fn load(&self, args: &CorpusArgs) -> Result<(Corpus, WeightScheme)> {
        let mut corpus = self.corpus(&args.corpus, args.lenient)?;
        for (method, path) in &args.scalars {
            let scale = match method.as_str() {
                WMT_RAW => Scale::WmtRaw,
                WMT_Z => Scale::WmtZ,
                _ => Scale::Sqm,
            };
            let ratings = import_scalar_tsv(self.open(path)?, scale, corpus.segment_ids())
                .with_context(|| format!("{}", path.display()))?;
            corpus.add_scalar(method.clone(), ratings);
        }
        let scheme = match &args.scheme {
            Some(path) => {
                let name = path.file_stem().map_or("custom".into(), |s| s.to_string_lossy().into_owned());
                WeightScheme::from_tsv(name, self.open(path)?).with_context(|| format!("{}", path.display()))?
            }
            None => WeightScheme::standard(),
        };
        Ok((corpus, scheme))
    }

    fn model(&self, args: &ModelArgs) -> Result<(ScoreGrid, GaussianModel, Vec<f64>)> {
        let (corpus, scheme) = self.load(&args.input)?;
        let systems = if args.systems.is_empty() { corpus.systems() } else { args.systems.clone() };
        let policy = if args.complete { GridPolicy::Complete } else { GridPolicy::DropIncomplete };
        let grid = ScoreGrid::from_corpus(&corpus, &scheme, &systems, policy)?;
        let model = GaussianModel::fit(&grid)?;
        let full = grid.system_means();
        Ok((grid, model, full))
    }
}

fn split_groups(corpus: &Corpus, g: &Groups) -> (Vec<String>, Vec<String>) {
    let systems = corpus.systems();
    let human = if g.human.is_empty() {
        systems.iter().filter(|s| s.starts_with("Human-")).cloned().collect()
    } else {
        g.human.clone()
    };
    let mt = if g.mt.is_empty() {
        systems.into_iter().filter(|s| !human.contains(s)).collect()
    } else {
        g.mt.clone()
    };
    (human, mt)
}

fn study_setup(corpus: &Corpus, study: &Study) -> (GoldConfig, SystemSet) {
    let mut gold = GoldConfig::new(study.gold.clone());
    gold.seg_threshold = study.threshold;
    if study.wmt_rated_only {
        gold.segment_filter = SegmentFilter::WmtRatedOnly;
    }
    let (human, mt) = split_groups(corpus, &study.groups);
    (gold, SystemSet { mt, human, include_human: study.include_human })
}

fn default_candidates(corpus: &Corpus, gold: &ScoreSource) -> Vec<ScoreSource> {
    std::iter::once(ScoreSource::Mqm)
        .chain(corpus.scalar_methods().map(|m| ScoreSource::Scalar(m.to_string())))
        .filter(|c| c != gold)
        .collect()
}

/// Long format `source system score` for scatter plots of system scores.
fn system_plot_data(
    corpus: &Corpus,
    scheme: &WeightScheme,
    sources: &[ScoreSource],
    report: &CorrelationReport,
) -> Result<String> {
    let mut out = String::from("source\tsystem\tscore\n");
    for source in sources {
        let scores = source_system_scores(corpus, scheme, source)?;
        for system in &report.systems {
            if let Some(v) = scores.get(system) {
                out.push_str(&format!("{source}\t{system}\t{v:.6}\n"));
            }
        }
    }
    Ok(out)
}

fn sim_config(sim: &SimArgs, seed: u64, ratings: usize, target_tau: f64) -> RatingBudgetConfig {
    RatingBudgetConfig {
        ratings_per_system: ratings,
        raters_per_item: sim.raters,
        consecutive_per_doc: sim.consecutive,
        align_items_across_systems: !sim.unaligned_items,
        align_raters: sim.align_raters,
        iterations: sim.iterations,
        seed,
        target_tau,
        rater_noise: sim.rater_noise,
    }
}

fn read_scores(ctx: &Ctx, path: &Path) -> Result<BTreeMap<String, f64>> {
    use std::io::BufRead;
    let mut scores = BTreeMap::new();
    for (i, line) in ctx.open(path)?.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let mut fields = line.split('\t');
        let (Some(system), Some(value), None) = (fields.next(), fields.next(), fields.next()) else {
            bail!("{} line {}: expected system<TAB>score", path.display(), i + 1);
        };
        match value.trim().parse::<f64>() {
            Ok(v) => {
                scores.insert(system.to_string(), v);
            }
            Err(_) if i == 0 => {}
            Err(_) => bail!("{} line {}: score {value:?} is not a number", path.display(), i + 1),
        }
    }
    Ok(scores)
}

pub fn run(cli: Cli) -> Result<ExitCode> {
    let ctx = Ctx { data_dir: cli.data_dir.clone(), seed: cli.seed };
    let mut status = ExitCode::SUCCESS;
    let report = match &cli.command {
        Command::Import { input, summary } => {
            let (corpus, _) = ctx.load(input)?;
            if *summary {
                let mut out = String::from("item\tcount\n");
                out.push_str(&format!("systems\t{}\n", corpus.systems().len()));
                out.push_str(&format!("documents\t{}\n", corpus.documents().len()));
                out.push_str(&format!("segments\t{}\n", corpus.segments().len()));
                out.push_str(&format!("raters\t{}\n", corpus.raters().len()));
                out.push_str(&format!("mqm_ratings\t{}\n", corpus.mqm_ratings().len()));
                for m in corpus.scalar_methods() {
                    out.push_str(&format!("{m}_ratings\t{}\n", corpus.scalar(m).map_or(0, <[_]>::len)));
                }
                out
            } else {
                write_mqm_tsv(&corpus)
            }
        }
        Command::Validate { input } => {
            let (corpus, _) = ctx.load(input)?;
            let report = validate_corpus(&corpus);
            let mut out = String::from("rule\tlocation\tdetail\n");
            for v in &report.violations {
                let rule = serde_json::to_value(v.rule)?;
                out.push_str(&format!("{}\t{}\t{}\n", rule.as_str().unwrap_or_default(), v.location, v.detail));
            }
            if !report.is_valid() {
                eprintln!("{} violations", report.violations.len());
                status = ExitCode::from(1);
            }
            out
        }
        Command::Score { input, level, filter } => {
            let (corpus, scheme) = ctx.load(input)?;
            aggregate(&corpus, &scheme, *level, filter)?.to_tsv()
        }
        Command::Breakdown { input, groups, focus } => {
            let (corpus, scheme) = ctx.load(input)?;
            let (human, mt) = split_groups(&corpus, groups);
            category_breakdown(&corpus, &scheme, &human, &mt, focus)?.to_tsv()
        }
        Command::RaterReport { input } => {
            let (corpus, scheme) = ctx.load(input)?;
            rater_report(&corpus, &scheme)?.to_tsv()
        }
        Command::Rank { corpus, scores, scheme, lenient, orientation, decimals } => {
            let (scores, default_orientation) = match (corpus, scores) {
                (Some(corpus), _) => {
                    let args = CorpusArgs {
                        corpus: corpus.clone(),
                        lenient: *lenient,
                        scheme: scheme.clone(),
                        scalars: Vec::new(),
                    };
                    let (corpus, scheme) = ctx.load(&args)?;
                    let report = aggregate(&corpus, &scheme, mqm_core::scoring::Level::System, &Default::default())?;
                    (report.system_scores(), Orientation::LowerBetter)
                }
                (None, Some(path)) => (read_scores(&ctx, path)?, Orientation::HigherBetter),
                (None, None) => unreachable!("clap requires one input"),
            };
            let scores = match decimals {
                Some(d) => round_scores(&scores, *d),
                None => scores,
            };
            rank_systems(&scores, orientation.unwrap_or(default_orientation)).to_tsv()
        }
        Command::Sweep { input, weights, resamples } => {
            let (corpus, _) = ctx.load(input)?;
            weight_sweep(&corpus, weights, *resamples, ctx.seed)?.to_tsv()
        }
        Command::Correlate { input, study, level, candidates } => {
            let (corpus, scheme) = ctx.load(input)?;
            let (gold, systems) = study_setup(&corpus, study);
            let candidates = if candidates.is_empty() {
                default_candidates(&corpus, &gold.source)
            } else {
                candidates.clone()
            };
            let report = correlation_report(&corpus, &scheme, &gold, &candidates, *level, &systems)?;
            if cli.plot_data {
                let sources: Vec<ScoreSource> = std::iter::once(gold.source.clone()).chain(candidates).collect();
                system_plot_data(&corpus, &scheme, &sources, &report)?
            } else {
                report.to_tsv()
            }
        }
        Command::KendallLike { input, study, candidates } => {
            let (corpus, scheme) = ctx.load(input)?;
            let (gold, systems) = study_setup(&corpus, study);
            let candidates = if candidates.is_empty() {
                default_candidates(&corpus, &gold.source)
            } else {
                candidates.clone()
            };
            let report =
                correlation_report(&corpus, &scheme, &gold, &candidates, CorrelationLevel::Segment, &systems)?;
            let mut out = String::from("candidate\tpairs\tkendall_like\n");
            for row in &report.rows {
                if let Some(k) = row.kendall_like {
                    out.push_str(&format!("{}\t{}\t{:.4}\n", row.candidate, k.n, k.value));
                }
            }
            out
        }
        Command::DocProfile { input, groups } => {
            let (corpus, scheme) = ctx.load(input)?;
            let (human, mt) = split_groups(&corpus, groups);
            let profile = document_profile(&corpus, &scheme, &human, &mt)?;
            if cli.plot_data {
                profile.to_plot_tsv(&human)
            } else {
                profile.to_tsv()
            }
        }
        Command::FitGaussian { model } => {
            let (grid, model, _) = ctx.model(model)?;
            let mut out = String::from("param\tsystem\tother\tvalue\n");
            out.push_str(&format!("n_docs\t\t\t{}\n", model.n_docs));
            out.push_str(&format!("n_segments\t\t\t{}\n", model.n_segments));
            for (i, s) in grid.systems.iter().enumerate() {
                out.push_str(&format!("mu\t{s}\t\t{:.6}\n", model.mu[i]));
            }
            for (name, m) in [("sigma_doc", &model.sigma_doc), ("sigma_seg", &model.sigma_seg)] {
                for (i, a) in grid.systems.iter().enumerate() {
                    for (j, b) in grid.systems.iter().enumerate() {
                        out.push_str(&format!("{name}\t{a}\t{b}\t{:.6}\n", m[i][j]));
                    }
                }
            }
            out
        }
        Command::Simulate { model, sim, ratings, bootstrap } => {
            let (grid, fitted, full) = ctx.model(model)?;
            let config = sim_config(sim, ctx.seed, *ratings, 0.0);
            let dist = if *bootstrap {
                tau_distribution_bootstrap(&grid, &full, &config)?
            } else {
                tau_distribution(&fitted, &full, &config)?
            };
            if cli.plot_data {
                dist.to_tsv()
            } else {
                let mut out = String::from("ratings\tconsecutive\traters\titerations\tmean_tau");
                for (p, _) in &dist.quantiles {
                    out.push_str(&format!("\tq{:02}", (p * 100.0).round() as u32));
                }
                out.push_str(&format!(
                    "\n{}\t{}\t{}\t{}\t{:.4}",
                    config.ratings_per_system, config.consecutive_per_doc, config.raters_per_item, config.iterations, dist.mean
                ));
                for (_, v) in &dist.quantiles {
                    out.push_str(&format!("\t{v:.4}"));
                }
                out.push('\n');
                out
            }
        }
        Command::MinBudget { model, sim, target_tau } => {
            let (_, fitted, full) = ctx.model(model)?;
            let template = sim_config(sim, ctx.seed, 1, *target_tau);
            let n = min_ratings_for_tau(&fitted, &full, &template)?;
            format!(
                "target_tau\tconsecutive\traters\tmin_ratings\n{}\t{}\t{}\t{n}\n",
                target_tau, sim.consecutive, sim.raters
            )
        }
        Command::MetricsEval { input, study, metrics, level, lower_better } => {
            let (mut corpus, scheme) = ctx.load(input)?;
            let metric_level = match level {
                CorrelationLevel::System => MetricLevel::System,
                CorrelationLevel::Segment => MetricLevel::Segment,
            };
            let mut scores = MetricScores::default();
            for path in metrics {
                let s = import_metric_scores(ctx.open(path)?, metric_level, corpus.segment_ids())
                    .with_context(|| format!("{}", path.display()))?;
                scores.merge(s);
            }
            let candidates: Vec<ScoreSource> = scores
                .metrics()
                .into_iter()
                .map(|name| ScoreSource::Metric {
                    name: name.to_string(),
                    orientation: if lower_better.iter().any(|l| l.eq_ignore_ascii_case(name)) {
                        Orientation::LowerBetter
                    } else {
                        Orientation::HigherBetter
                    },
                })
                .collect();
            corpus.add_metrics(scores);
            let (gold, systems) = study_setup(&corpus, study);
            let report = correlation_report(&corpus, &scheme, &gold, &candidates, *level, &systems)?;
            if cli.plot_data {
                let sources: Vec<ScoreSource> = std::iter::once(gold.source.clone()).chain(candidates).collect();
                system_plot_data(&corpus, &scheme, &sources, &report)?
            } else {
                report.to_tsv()
            }
        }
        Command::Serve { addr, projects, token } => {
            let config = mqm_server::ServerConfig {
                addr: *addr,
                data_dir: ctx.path(projects),
                auth_token: token.clone(),
            };
            eprintln!("serving projects under {} on {addr}", config.data_dir.display());
            tokio::runtime::Runtime::new()?.block_on(mqm_server::serve(config))?;
            return Ok(ExitCode::SUCCESS);
        }
        Command::Assign { corpus, lenient, project_dir, id, raters, raters_per_doc, mode, systems } => {
            let corpus = ctx.corpus(corpus, *lenient)?;
            let systems = if systems.is_empty() { corpus.systems() } else { systems.clone() };
            let documents = corpus
                .documents()
                .into_iter()
                .map(|(doc_id, by_system)| DocumentSpec {
                    n_segments: systems.iter().filter_map(|s| by_system.get(s)).map(Vec::len).max().unwrap_or(0),
                    doc_id,
                })
                .collect();
            let texts = corpus
                .segments()
                .iter()
                .filter(|(k, _)| systems.contains(&k.system))
                .map(|(k, t)| (k.clone(), t.clone()))
                .collect();
            let mut project = Project::new(id.clone(), systems, documents, raters.clone());
            project.raters_per_doc = *raters_per_doc;
            project.seed = ctx.seed;
            project.mode = match mode {
                Mode::Mqm => ProjectMode::Mqm,
                Mode::Sqm => ProjectMode::Sqm,
            };
            let campaign = Campaign::create(project_dir, project, texts)?;
            let plan = campaign.plan();
            eprintln!(
                "{} documents, {} distinct rater subsets, load ratio {:.4}",
                plan.assignments.len(),
                plan.distinct_subsets(),
                plan.balance_ratio()
            );
            let mut out = String::from("doc_id\traters\n");
            for a in &plan.assignments {
                out.push_str(&format!("{}\t{}\n", a.doc_id, a.raters.join(",")));
            }
            out
        }
        Command::Export { project_dir, close } => {
            let mut campaign = Campaign::open(project_dir)?;
            if *close && !campaign.is_closed() {
                campaign.close()?;
            }
            campaign.export_tsv()?
        }
    };
    emit(cli.out.as_deref(), cli.format, &report)?;
    Ok(status)
}
