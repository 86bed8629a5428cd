use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hlrp_cli::{Checkpoint, RunConfig};
use hlrp_core::eval::experiment::{BaselineRecommender, ModelRecommender, TemporalPair};
use hlrp_core::eval::{generate_synthetic, EvalReport, Variant};
use hlrp_core::gradcheck_suite::{joint_gradcheck, GradcheckSetup, GRADCHECK_TOLERANCE};
use hlrp_core::ingest::{parse_holdings, write_holdings};
use hlrp_core::predictor::{recommend_holders, train_on_snapshot, GraphFeatures, Preprocessing, TrainingMode};
use hlrp_core::{AggregatorKind, Quarter, QuarterSnapshot};

#[derive(Parser)]
#[command(name = "hlrp", version, about = "Holder recommendations for funds via GraphSAGE link prediction")]
struct Cli {
    /// JSON run config; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic two-quarter holdings dataset.
    Synth(SynthArgs),
    /// Write scaled holder and fund feature matrices.
    Featurize(FeaturizeArgs),
    /// Train on one quarter; writes a checkpoint and the loss curve.
    Train(TrainArgs),
    /// Rank holders for a fund with a trained checkpoint.
    Recommend(RecommendArgs),
    /// Score model and/or baseline against the next quarter.
    Evaluate(EvaluateArgs),
    /// Rank holders for a fund by cosine similarity.
    Baseline(BaselineArgs),
    /// Finite-difference check of the joint loss gradient.
    Gradcheck(GradcheckArgs),
    /// Print the default run config.
    Defaults,
}

#[derive(Args)]
struct DataArgs {
    /// Holdings CSV.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Quarter to use when the file holds several.
    #[arg(long)]
    quarter: Option<Quarter>,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    holders: Option<usize>,
    #[arg(long)]
    funds: Option<usize>,
    #[arg(long)]
    styles: Option<usize>,
}

#[derive(Args)]
struct FeaturizeArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct HyperArgs {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    aggregator: Option<AggregatorKind>,
    #[arg(long)]
    negative_ratio: Option<f64>,
    #[arg(long)]
    test_fraction: Option<f64>,
    #[arg(long)]
    mlp_hidden: Option<usize>,
    #[arg(long)]
    mode: Option<TrainingMode>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Loss curve CSV (default: checkpoint path with `.loss.csv`).
    #[arg(long)]
    loss_out: Option<PathBuf>,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args)]
struct RecommendArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long)]
    fund: String,
    #[arg(long, default_value_t = 50)]
    top: usize,
    /// Leave out holders already invested in the fund.
    #[arg(long)]
    new_only: bool,
}

#[derive(Args)]
struct BaselineArgs {
    #[command(flatten)]
    data: DataArgs,
    #[arg(long)]
    fund: String,
    #[arg(long, default_value_t = 50)]
    top: usize,
    #[arg(long)]
    new_only: bool,
    /// Plain cosine ranking without the AUM segment quota.
    #[arg(long)]
    no_diversity: bool,
    #[arg(long)]
    segments: Option<usize>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Holdings CSV with the next quarter's positions.
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    truth_quarter: Option<Quarter>,
    /// Checkpoint to evaluate; omit to evaluate the baseline only.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Also evaluate the diversity-constrained cosine baseline.
    #[arg(long)]
    baseline: bool,
    /// all_holders, newly_added, or both.
    #[arg(long, default_value = "both")]
    variant: String,
    /// JSON report path.
    #[arg(long)]
    report: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    ks: Option<Vec<usize>>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long)]
    seed: Option<u64>,
    /// Number of consecutive seeds per aggregator.
    #[arg(long, default_value_t = 5)]
    seeds: u64,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let env_seed = std::env::var(hlrp_cli::config::SEED_ENV).ok();
    let seed = |flag: Option<u64>| cfg.resolve_seed(flag, env_seed.as_deref());
    let mut stdout = std::io::stdout().lock();
    match cli.command {
        Command::Synth(a) => {
            let mut sc = cfg.synthetic.clone();
            sc.seed = match a.seed {
                Some(s) => s,
                None if cfg.seed.is_some() || env_seed.is_some() => seed(None)?,
                None => sc.seed,
            };
            sc.num_holders = a.holders.unwrap_or(sc.num_holders);
            sc.num_funds = a.funds.unwrap_or(sc.num_funds);
            sc.num_styles = a.styles.unwrap_or(sc.num_styles);
            let data = generate_synthetic(&sc)?;
            std::fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
            for (name, positions) in [("holdings_t.csv", &data.positions_t), ("holdings_t1.csv", &data.positions_t1)] {
                let path = a.out_dir.join(name);
                let f = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
                write_holdings(BufWriter::new(f), positions)?;
                writeln!(stdout, "wrote {} ({} positions)", path.display(), positions.len())?;
            }
        }
        Command::Featurize(a) => {
            let snap = load_quarter(data_path(&a.data, &cfg)?, a.data.quarter)?;
            let prep = Preprocessing::fit(&snap)?;
            let (holders, funds) = prep.transform(&snap)?;
            let mut out = String::from("kind,id");
            for c in prep.schema.columns() {
                let _ = write!(out, ",{}={}", c.family, c.value);
            }
            out.push('\n');
            for (kind, m, index) in [("holder", &holders, &snap.holder_index), ("fund", &funds, &snap.fund_index)] {
                for (i, id) in index.ids().iter().enumerate() {
                    let _ = write!(out, "{kind},{id}");
                    for v in m.row(i) {
                        let _ = write!(out, ",{v}");
                    }
                    out.push('\n');
                }
            }
            std::fs::write(&a.out, out).with_context(|| format!("writing {}", a.out.display()))?;
            writeln!(stdout, "wrote {} ({} columns)", a.out.display(), prep.schema.width())?;
        }
        Command::Train(a) => {
            let mut rc = cfg.clone();
            apply_hyper(&mut rc, &a.hyper);
            let tc = rc.train_config(seed(a.hyper.seed)?);
            let snap = load_quarter(data_path(&a.data, &cfg)?, a.data.quarter)?;
            let ck_path = a
                .checkpoint
                .or(cfg.checkpoint.clone())
                .ok_or_else(|| anyhow!("--checkpoint is required"))?;
            let model = train_on_snapshot(&snap, &tc)?;
            let loss_path = a.loss_out.unwrap_or_else(|| ck_path.with_extension("loss.csv"));
            let mut curve = String::from("epoch,loss\n");
            for (i, l) in model.loss_curve.iter().enumerate() {
                let _ = writeln!(curve, "{},{l}", i + 1);
            }
            std::fs::write(&loss_path, curve).with_context(|| format!("writing {}", loss_path.display()))?;
            let (first, last) = (model.loss_curve.first().copied(), model.final_loss());
            let auc = model.test_auc;
            Checkpoint::new(model)?
                .save(&ck_path)
                .with_context(|| format!("saving {}", ck_path.display()))?;
            writeln!(stdout, "quarter={}", snap.quarter)?;
            writeln!(stdout, "epochs={}", tc.epochs)?;
            if let (Some(f), Some(l)) = (first, last) {
                writeln!(stdout, "loss_first={f}\nloss_final={l}")?;
            }
            if let Some(auc) = auc {
                writeln!(stdout, "test_auc={auc}")?;
            }
            writeln!(stdout, "checkpoint={}\nloss_curve={}", ck_path.display(), loss_path.display())?;
        }
        Command::Recommend(a) => {
            let ck_path = a
                .checkpoint
                .or(cfg.checkpoint.clone())
                .ok_or_else(|| anyhow!("--checkpoint is required"))?;
            let ck = Checkpoint::load(&ck_path).with_context(|| format!("loading {}", ck_path.display()))?;
            let snap = load_quarter(data_path(&a.data, &cfg)?, a.data.quarter)?;
            ck.check_schema(&snap)?;
            let (holders, funds) = ck.preprocessing().transform(&snap)?;
            let fund = snap
                .fund_index
                .get(&a.fund)
                .ok_or_else(|| anyhow!("unknown fund id {:?}", a.fund))?;
            let graph = snap.graph()?;
            let ranked = recommend_holders(
                &ck.model,
                GraphFeatures {
                    graph: &graph,
                    holders: &holders,
                    funds: &funds,
                },
                fund,
                a.top,
                a.new_only,
            )?;
            print_ranking(&mut stdout, &snap, &ranked)?;
        }
        Command::Baseline(a) => {
            let snap = load_quarter(data_path(&a.data, &cfg)?, a.data.quarter)?;
            let prep = Preprocessing::fit(&snap)?;
            let segments = (!a.no_diversity).then(|| a.segments.unwrap_or(cfg.num_segments));
            let rec = BaselineRecommender::new(&snap, &prep, segments)?;
            let fund = snap
                .fund_index
                .get(&a.fund)
                .ok_or_else(|| anyhow!("unknown fund id {:?}", a.fund))?;
            let ranked = rec.ranked(fund, a.top, a.new_only)?;
            print_ranking(&mut stdout, &snap, &ranked)?;
        }
        Command::Evaluate(a) => {
            let snap_t = load_quarter(data_path(&a.data, &cfg)?, a.data.quarter)?;
            let truth_quarter = a.truth_quarter.or(Some(snap_t.quarter.next()));
            let snap_t1 = load_quarter(&a.truth, truth_quarter)?;
            let variants = match a.variant.as_str() {
                "both" => vec![Variant::AllHolders, Variant::NewlyAdded],
                v => vec![v.parse::<Variant>()?],
            };
            let ks = a.ks.unwrap_or(cfg.ks.clone());
            let pair = TemporalPair::new(snap_t, snap_t1)?;
            let ck_path = a.checkpoint.or(cfg.checkpoint.clone());
            if ck_path.is_none() && !a.baseline {
                bail!("nothing to evaluate: pass --checkpoint and/or --baseline");
            }
            let mut reports: Vec<EvalReport> = Vec::new();
            let ck = ck_path
                .map(|p| Checkpoint::load(&p).with_context(|| format!("loading {}", p.display())))
                .transpose()?;
            if let Some(ck) = &ck {
                ck.check_schema(&pair.snapshot_t)?;
                let rec = ModelRecommender::new(&ck.model, &pair.snapshot_t)?;
                for &v in &variants {
                    let mut r = pair.evaluate(&rec, &ks, v)?;
                    r.test_auc = ck.model.test_auc;
                    reports.push(r);
                }
            }
            if a.baseline {
                let prep = match &ck {
                    Some(ck) => ck.preprocessing().clone(),
                    None => Preprocessing::fit(&pair.snapshot_t)?,
                };
                let rec = BaselineRecommender::new(&pair.snapshot_t, &prep, Some(cfg.num_segments))?;
                for &v in &variants {
                    reports.push(pair.evaluate(&rec, &ks, v)?);
                }
            }
            for r in &reports {
                writeln!(stdout, "{} {}", r.recommender, r.variant)?;
                for (k, m) in r.ks.iter().zip(&r.mean_hits) {
                    match m {
                        Some(m) => writeln!(stdout, "  mean_hits@{k}={m:.6}")?,
                        None => writeln!(stdout, "  mean_hits@{k}=none")?,
                    }
                }
                writeln!(
                    stdout,
                    "  funds_evaluated={} skipped_empty={} skipped_unknown={}",
                    r.funds_evaluated, r.funds_skipped_empty_truth, r.funds_skipped_unknown
                )?;
            }
            if let Some(path) = a.report.or(cfg.report.clone()) {
                let json = serde_json::to_string_pretty(&reports)?;
                std::fs::write(&path, json).with_context(|| format!("writing {}", path.display()))?;
                let text: String = reports.iter().map(EvalReport::to_flat_text).collect::<Vec<_>>().join("\n");
                let text_path = path.with_extension("txt");
                std::fs::write(&text_path, text).with_context(|| format!("writing {}", text_path.display()))?;
                writeln!(stdout, "report={}", path.display())?;
            }
        }
        Command::Gradcheck(a) => {
            let base = seed(a.seed)?;
            let setup = GradcheckSetup::default();
            let mut failed = 0;
            for kind in AggregatorKind::ALL {
                for s in base..base + a.seeds {
                    let r = joint_gradcheck(kind, s, &setup)?;
                    let ok = r.passed(GRADCHECK_TOLERANCE);
                    failed += usize::from(!ok);
                    writeln!(
                        stdout,
                        "{} aggregator={kind} seed={s} max_rel_err={:.3e}",
                        if ok { "PASS" } else { "FAIL" },
                        r.max_error()
                    )?;
                    for (name, e) in &r.errors {
                        writeln!(stdout, "  {name} {e:.3e}")?;
                    }
                }
            }
            if failed > 0 {
                writeln!(stdout, "{failed} gradient checks exceeded {GRADCHECK_TOLERANCE:e}")?;
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Defaults => {
            writeln!(stdout, "{}", serde_json::to_string_pretty(&RunConfig::default())?)?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn apply_hyper(rc: &mut RunConfig, h: &HyperArgs) {
    macro_rules! set {
        ($($f:ident),*) => { $(if let Some(v) = h.$f { rc.$f = v; })* };
    }
    set!(epochs, learning_rate, embedding_dim, hidden_dim, layers, aggregator, negative_ratio, test_fraction, mlp_hidden, mode);
}

fn data_path<'a>(a: &'a DataArgs, cfg: &'a RunConfig) -> Result<&'a Path> {
    a.data
        .as_deref()
        .or(cfg.data.as_deref())
        .ok_or_else(|| anyhow!("--data is required"))
}

fn load_quarter(path: &Path, quarter: Option<Quarter>) -> Result<QuarterSnapshot> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut quarters: BTreeMap<Quarter, QuarterSnapshot> =
        parse_holdings(BufReader::new(f)).with_context(|| format!("parsing {}", path.display()))?;
    match quarter {
        Some(q) => quarters
            .remove(&q)
            .ok_or_else(|| anyhow!("{} has no positions for quarter {q}", path.display())),
        None if quarters.len() == 1 => Ok(quarters.into_values().next().expect("one quarter")),
        None if quarters.is_empty() => bail!("{} contains no positions", path.display()),
        None => bail!("{} holds several quarters; pass --quarter", path.display()),
    }
}

fn print_ranking(out: &mut impl Write, snap: &QuarterSnapshot, ranked: &[(usize, f64)]) -> Result<()> {
    writeln!(out, "rank,holder_id,score")?;
    for (i, (h, p)) in ranked.iter().enumerate() {
        let id = snap.holder_index.id(*h).expect("ranked holders come from the snapshot");
        writeln!(out, "{},{id},{p}", i + 1)?;
    }
    Ok(())
}
