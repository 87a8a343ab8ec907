use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use latentcash::bench::{self, random_descriptors, SuiteSpec, SyntheticSuite};
use latentcash::config::{ObjectiveConfig, ProjectConfig, PtemChoice, PtemSettings, RankSettings, SourceConfig};
use latentcash::driver::{self, Arm, RunConfig, RunLog};
use latentcash::obs;
use latentcash::pretrain::train_ptem;
use latentcash::rank::{self, build_ranking_dataset, RankingDataset, RankingSource};
use latentcash::{embed::PtemBundle, Error};

#[derive(Parser)]
#[command(name = "latentcash", version, about = "Shared-latent-space Bayesian optimization over ML algorithms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArg {
    /// Project TOML file.
    #[arg(long, short)]
    config: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Pre-train one PTEM per source and write it to the source's `ptem` path.
    Pretrain {
        #[command(flatten)]
        config: ConfigArg,
        /// Overrides the pre-training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Only this source (repeatable).
        #[arg(long)]
        source: Vec<String>,
    },
    /// Run every source PTEM on every other source and write the ranking dataset.
    RankData {
        #[command(flatten)]
        config: ConfigArg,
        /// Output CSV; defaults to `[rank] dataset`.
        #[arg(long)]
        out: Option<PathBuf>,
        /// BO iterations per run; defaults to `[rank] iterations`.
        #[arg(long)]
        iters: Option<usize>,
    },
    /// Train the ranker on the ranking dataset and write it to `ranker`.
    RankTrain {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset CSV; defaults to `[rank] dataset`.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Optimize the target objective; writes `<out>/<arm>-seed<k>.jsonl`.
    Optimize {
        #[command(flatten)]
        config: ConfigArg,
        /// First seed; defaults to `[run] seed`.
        #[arg(long)]
        seed: Option<u64>,
        /// Number of consecutive seeds.
        #[arg(long, default_value_t = 1)]
        seeds: u64,
        /// Arms to run, comma separated; defaults to `[run] arm`.
        #[arg(long, value_delimiter = ',')]
        arm: Vec<Arm>,
        /// PTEM source: file, auto, random or none; defaults to `[ptem] choice`.
        #[arg(long)]
        ptem: Option<String>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
    },
    /// Summarize run logs into rank and best-so-far tables.
    Report {
        /// Log files or directories holding `*.jsonl` logs.
        #[arg(required = true)]
        logs: Vec<PathBuf>,
        #[arg(long, default_value = "report")]
        out: PathBuf,
    },
    /// Synthetic benchmark utilities.
    Bench {
        #[command(subcommand)]
        command: BenchCommand,
    },
}

#[derive(Subcommand)]
enum BenchCommand {
    /// Write a synthetic project: space, source observation sets and project TOML.
    Gen {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 11)]
        family_seed: u64,
        #[arg(long, default_value_t = 8)]
        sources: usize,
        /// Source observations per algorithm.
        #[arg(long, default_value_t = 100)]
        per_algo: usize,
        #[arg(long, default_value_t = 0.01)]
        noise_std: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 1 configuration or file problems, 2 numerical failure, 3 evaluator failure.
fn exit_code(e: &anyhow::Error) -> u8 {
    match e.chain().find_map(|c| c.downcast_ref::<Error>()) {
        Some(Error::Numerical(_)) => 2,
        Some(Error::Eval(_)) => 3,
        _ => 1,
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Pretrain { config, seed, source } => pretrain(&ProjectConfig::load(&config.config)?, seed, &source),
        Command::RankData { config, out, iters } => rank_data(&ProjectConfig::load(&config.config)?, out, iters),
        Command::RankTrain { config, data, seed } => rank_train(&ProjectConfig::load(&config.config)?, data, seed),
        Command::Optimize {
            config,
            seed,
            seeds,
            arm,
            ptem,
            iters,
            out,
        } => {
            let cfg = ProjectConfig::load(&config.config)?;
            let ptem = ptem.map(|p| parse_ptem_flag(&p)).transpose()?;
            optimize(&cfg, seed, seeds, &arm, ptem, iters, &out)
        }
        Command::Report { logs, out } => report(&logs, &out),
        Command::Bench {
            command:
                BenchCommand::Gen {
                    out,
                    seed,
                    family_seed,
                    sources,
                    per_algo,
                    noise_std,
                },
        } => bench_gen(&out, seed, family_seed, sources, per_algo, noise_std),
    }
}

/// `--ptem` takes a choice keyword or a path to a PTEM file.
fn parse_ptem_flag(s: &str) -> anyhow::Result<(PtemChoice, Option<PathBuf>)> {
    Ok(match s.parse::<PtemChoice>() {
        Ok(c) => (c, None),
        Err(_) if !s.is_empty() => (PtemChoice::File, Some(PathBuf::from(s))),
        Err(e) => return Err(e.into()),
    })
}

fn create_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

fn pretrain(cfg: &ProjectConfig, seed: Option<u64>, only: &[String]) -> anyhow::Result<()> {
    let space = cfg.load_space()?;
    if let Some(id) = only.iter().find(|id| !cfg.sources.iter().any(|s| &s.id == *id)) {
        bail!(Error::Config(format!("unknown source `{id}`")));
    }
    let chosen: Vec<&SourceConfig> = cfg
        .sources
        .iter()
        .filter(|s| only.is_empty() || only.contains(&s.id))
        .collect();
    if chosen.is_empty() {
        bail!(Error::Config(String::from("no sources configured")));
    }
    let pcfg = latentcash::pretrain::PretrainConfig {
        seed: seed.unwrap_or(cfg.pretrain.seed),
        ..cfg.pretrain
    };
    chosen.par_iter().try_for_each(|s| -> anyhow::Result<()> {
        let observations = obs::read_csv(&cfg.resolve(&s.observations), &space)?;
        let (bundle, rep) = train_ptem(&observations, &space, &pcfg, &s.id)?;
        let path = cfg.resolve(&s.ptem);
        create_parent(&path)?;
        bundle.save(&path)?;
        info!(
            "source {}: regression loss {:.4} -> {:.4}, wrote {}",
            s.id,
            rep.regression[0],
            rep.regression[rep.best_epoch],
            path.display()
        );
        Ok(())
    })
}

fn rank_data(cfg: &ProjectConfig, out: Option<PathBuf>, iters: Option<usize>) -> anyhow::Result<()> {
    let space = cfg.load_space()?;
    let sources: Vec<RankingSource> = cfg
        .sources
        .iter()
        .map(|s| {
            Ok(RankingSource {
                id: s.id.clone(),
                meta: s.meta()?,
                ptem: PtemBundle::load(&cfg.resolve(&s.ptem), &space)?,
            })
        })
        .collect::<latentcash::Result<_>>()?;
    let run = RunConfig {
        iterations: iters.unwrap_or(cfg.rank.iterations),
        ..cfg.run.clone()
    };
    let base = cfg.base.clone();
    let ds = build_ranking_dataset(&sources, &space, &run, &cfg.rank.seeds, |t, seed| {
        cfg.sources[t]
            .objective
            .build(&space, seed, &base)
            .expect("objectives are validated when the project loads")
    })?;
    let path = out.unwrap_or_else(|| cfg.resolve(&cfg.rank.dataset));
    create_parent(&path)?;
    ds.write_csv(&path)?;
    info!("wrote {} rows to {}", ds.rows.len(), path.display());
    Ok(())
}

fn rank_train(cfg: &ProjectConfig, data: Option<PathBuf>, seed: Option<u64>) -> anyhow::Result<()> {
    let path = data.unwrap_or_else(|| cfg.resolve(&cfg.rank.dataset));
    let ds = RankingDataset::read_csv(&path)?;
    let rcfg = rank::RankerConfig {
        seed: seed.unwrap_or(cfg.rank.ranker.seed),
        ..cfg.rank.ranker
    };
    let (model, rep) = rank::train_ranker(&ds, &rcfg)?;
    let out = cfg.ranker_path()?;
    create_parent(&out)?;
    model.save(&out)?;
    println!("train NDCG@{}: {:.4}", cfg.rank.k, rep.train_ndcg.last().copied().unwrap_or(f64::NAN));
    if ds.groups().len() >= 2 {
        let logo = rank::leave_one_group_out_ndcg(&ds, &rcfg, cfg.rank.k)?;
        let mean = logo.iter().sum::<f64>() / logo.len() as f64;
        let (base, sd) = rank::random_ndcg_baseline(&ds, cfg.rank.k, 1000, rcfg.seed);
        println!(
            "leave-one-group-out NDCG@{}: {mean:.4} (random ordering {base:.4} +- {sd:.4})",
            cfg.rank.k
        );
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn optimize(
    cfg: &ProjectConfig,
    seed: Option<u64>,
    seeds: u64,
    arms: &[Arm],
    ptem_flag: Option<(PtemChoice, Option<PathBuf>)>,
    iters: Option<usize>,
    out: &Path,
) -> anyhow::Result<()> {
    let space = cfg.load_space()?;
    let mut project = cfg.clone();
    if let Some((_, Some(file))) = &ptem_flag {
        // A path given on the command line is relative to the working directory.
        project.ptem = PtemSettings {
            choice: PtemChoice::File,
            file: Some(std::path::absolute(file).context("resolving --ptem path")?),
        };
    }
    let arms = if arms.is_empty() { vec![cfg.run.arm] } else { arms.to_vec() };
    let first = seed.unwrap_or(cfg.run.seed);
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    for &arm in &arms {
        for s in first..first + seeds.max(1) {
            let run = RunConfig {
                arm,
                seed: s,
                iterations: iters.unwrap_or(cfg.run.iterations),
                ..cfg.run.clone()
            };
            let choice = match (&ptem_flag, arm) {
                (_, a) if !a.needs_ptem() => PtemChoice::None,
                (Some((c, _)), _) => c.clone(),
                (None, Arm::ProposedRandomPtem) => PtemChoice::Random,
                (None, _) => cfg.ptem.choice.clone(),
            };
            let mut rng = ChaCha8Rng::seed_from_u64(s);
            let ptem = project.select_ptem(&choice, &space, &mut rng)?;
            let mut objective = cfg.objective.build(&space, s, &cfg.base)?;
            let log = driver::run(&run, &space, objective.as_mut(), ptem.as_ref())?;
            let path = out.join(format!("{arm}-seed{s}.jsonl"));
            log.save(&path)?;
            println!("{arm} seed {s}: best {:?} -> {}", log.final_best(), path.display());
        }
    }
    Ok(())
}

fn collect_logs(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "jsonl"))
                .collect();
            found.sort();
            files.extend(found);
        } else {
            files.push(p.clone());
        }
    }
    if files.is_empty() {
        bail!(Error::Config(String::from("no run logs found")));
    }
    Ok(files)
}

fn report(inputs: &[PathBuf], out: &Path) -> anyhow::Result<()> {
    let logs: Vec<RunLog> = collect_logs(inputs)?
        .iter()
        .map(|f| RunLog::load(f))
        .collect::<latentcash::Result<_>>()?;
    let rep = driver::report(&logs)?;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    rep.write(out)?;
    print!("{}", rep.summary_csv());
    Ok(())
}

fn bench_gen(out: &Path, seed: u64, family_seed: u64, n: usize, per_algo: usize, noise_std: f64) -> anyhow::Result<()> {
    if n < 3 {
        bail!(Error::Config(String::from("at least three sources are needed for ranking data")));
    }
    if per_algo < 2 {
        bail!(Error::Config(String::from("pre-training needs at least two observations per algorithm")));
    }
    let space = bench::default_space();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let descriptors = random_descriptors(n + 1, 2, &mut rng);
    let objective = |d: &[f64]| ObjectiveConfig::Synthetic {
        family_seed,
        descriptor: d.to_vec(),
        noise_std,
    };
    std::fs::create_dir_all(out.join("sources")).with_context(|| format!("creating {}", out.display()))?;
    space.save(&out.join("space.toml"))?;
    let mut sources = Vec::with_capacity(n);
    for (i, d) in descriptors[1..].iter().enumerate() {
        let id = format!("s{i}");
        let suite = SyntheticSuite::generate(
            &SuiteSpec {
                family_seed,
                descriptor: d.clone(),
                noise_std,
            },
            &space,
        );
        let observations = PathBuf::from(format!("sources/{id}.csv"));
        obs::write_csv(&out.join(&observations), &space, &suite.sample_observations(&space, per_algo, &mut rng))?;
        sources.push(SourceConfig {
            id: id.clone(),
            observations,
            ptem: PathBuf::from(format!("ptems/{id}.json")),
            meta: None,
            objective: objective(d),
        });
    }
    let project = ProjectConfig {
        space: Some(PathBuf::from("space.toml")),
        objective: objective(&descriptors[0]),
        run: RunConfig::default(),
        ptem: PtemSettings {
            choice: PtemChoice::Auto,
            file: None,
        },
        pretrain: Default::default(),
        rank: RankSettings::default(),
        ranker: Some(PathBuf::from("ranker.json")),
        sources,
        base: out.to_path_buf(),
    };
    let path = out.join("project.toml");
    std::fs::write(&path, project.to_toml_string()).with_context(|| format!("writing {}", path.display()))?;
    println!("wrote {} with {n} sources", path.display());
    Ok(())
}
