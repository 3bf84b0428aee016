use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use tqc::bias_lab::{self, MethodFamily, ToyConfig};
use tqc::trainer::{TrainConfig, Trainer};
use tqc::{nn, Error};

#[derive(Parser)]
#[command(name = "tqc", about = "Distributional actor-critic training and bias experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an agent and write run artifacts.
    Train(TrainArgs),
    /// Run the single-state overestimation experiment.
    Toy(ToyArgs),
    /// Run quick internal self-checks.
    Check,
}

#[derive(Args)]
struct TrainArgs {
    /// Flat `key = value` settings file, applied before the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Environment name: pointmass or toy.
    #[arg(long)]
    env: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, visible_alias = "steps")]
    total_steps: Option<usize>,
    #[arg(long)]
    warmup_steps: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    buffer_capacity: Option<usize>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    ema_beta: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, visible_alias = "n-critics")]
    num_critics: Option<usize>,
    #[arg(long, visible_alias = "atoms")]
    num_atoms: Option<usize>,
    #[arg(long, visible_alias = "drop")]
    drop_per_critic: Option<usize>,
    /// Target construction: tqc, ptqb, tqb, or qb.
    #[arg(long)]
    strategy: Option<String>,
    #[arg(long)]
    kappa: Option<f64>,
    /// Comma-separated hidden layer widths, e.g. 512,512,512.
    #[arg(long)]
    critic_hidden: Option<String>,
    /// Comma-separated hidden layer widths, e.g. 256,256.
    #[arg(long)]
    policy_hidden: Option<String>,
    #[arg(long)]
    eval_interval: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    eval_max_steps: Option<usize>,
    #[arg(long)]
    diagnostics_window: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

impl TrainArgs {
    fn into_config(self) -> Result<TrainConfig, Error> {
        let mut cfg = TrainConfig::default();
        if let Some(path) = &self.config {
            cfg.merge_file(path)?;
        }
        macro_rules! apply {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.set(stringify!($field), &v.to_string())?;
                }
            };
        }
        apply!(env);
        apply!(seed);
        apply!(total_steps);
        apply!(warmup_steps);
        apply!(batch_size);
        apply!(buffer_capacity);
        apply!(gamma);
        apply!(ema_beta);
        apply!(lr);
        apply!(num_critics);
        apply!(num_atoms);
        apply!(drop_per_critic);
        apply!(strategy);
        apply!(kappa);
        apply!(critic_hidden);
        apply!(policy_hidden);
        apply!(eval_interval);
        apply!(eval_episodes);
        apply!(eval_max_steps);
        apply!(diagnostics_window);
        if let Some(dir) = self.out_dir {
            cfg.out_dir = Some(dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args)]
struct ToyArgs {
    /// Method family: avg, min, or tqc.
    #[arg(long, visible_alias = "method")]
    family: String,
    /// Comma-separated sweep values (ensemble size for avg/min, dropped
    /// atoms per critic for tqc); defaults to the published sweep.
    #[arg(long)]
    params: Option<String>,
    /// Number of seeds (runs use seeds 0..seeds).
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    #[arg(long)]
    iterations: Option<usize>,
    #[arg(long, default_value = "toy_out")]
    out_dir: PathBuf,
}

fn run_train(args: TrainArgs) -> Result<(), Error> {
    let mut cfg = args.into_config()?;
    // artifacts go to a fresh directory named from seed and launch time
    let parent = cfg.out_dir.take().unwrap_or_else(|| PathBuf::from("runs"));
    let stamp = std::time::SystemTime::now()
        .duration_since(std::time::UNIX_EPOCH)
        .expect("clock after epoch")
        .as_secs();
    let run_dir = parent.join(format!("seed{}_{stamp}", cfg.seed));
    cfg.out_dir = Some(run_dir.clone());
    println!("run directory: {}", run_dir.display());
    let mut trainer = Trainer::new(cfg)?;
    let report = trainer.run()?;
    for point in &report.evals {
        println!("step {:>8}  mean return {:.4}", point.step, point.mean_return());
    }
    if let Some(shares) = &report.drop_shares {
        let fmt = |v: &[f64]| {
            v.iter()
                .map(|x| format!("{x:.3}"))
                .collect::<Vec<_>>()
                .join(" ")
        };
        println!("drop shares by critic: {}", fmt(&shares.unsorted));
        println!("drop shares by rank:   {}", fmt(&shares.sorted));
    }
    println!("final temperature: {:.6}", report.final_alpha);
    Ok(())
}

fn run_toy(args: ToyArgs) -> Result<(), Error> {
    let family = MethodFamily::parse(&args.family)?;
    let sweep = match &args.params {
        Some(p) => p
            .split(',')
            .map(|s| {
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("invalid sweep value '{s}'")))
            })
            .collect::<Result<Vec<_>, _>>()?,
        None => family.default_sweep(),
    };
    let mut cfg = ToyConfig::default();
    if let Some(iters) = args.iterations {
        cfg.iterations = iters;
    }
    let seeds: Vec<u64> = (0..args.seeds).collect();
    let rows = bias_lab::run_sweep(family, &sweep, &seeds, &cfg)?;
    bias_lab::write_sweep_csv(&args.out_dir, &rows)?;
    println!("method,parameter,trimmed_mean_delta,trimmed_var_delta,mean_argmax_distance");
    for row in &rows {
        println!(
            "{},{},{:.4},{:.4},{:.4}",
            row.family.name(),
            row.parameter,
            row.trimmed_mean_delta,
            row.trimmed_var_delta,
            row.mean_argmax_distance
        );
    }
    println!("wrote CSVs to {}", args.out_dir.display());
    Ok(())
}

fn run_check() -> Result<(), Error> {
    use ndarray::Array2;

    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let spec = nn::DenseNetSpec::new(3, vec![16, 16], 4)?;
    let params = nn::ParamVector::init_uniform(&spec, &mut rng);
    let input = Array2::from_shape_fn((8, 3), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
    let target = Array2::from_shape_fn((8, 4), |_| rand::Rng::gen_range(&mut rng, -1.0..1.0));
    let report = nn::finite_diff_check(
        &params,
        |p| nn::mse_loss_and_grad(&spec, p, input.view(), target.view()).unwrap(),
        1e-6,
    );
    println!("gradient check: max relative error {:.2e}", report.max_rel_error);
    if report.max_rel_error > 1e-4 {
        return Err(Error::NumericFailure {
            step: 0,
            what: "gradient check exceeded tolerance".into(),
        });
    }

    let kept = tqc::dist::pool_and_truncate(&[vec![1.0, 3.0, 5.0], vec![2.0, 4.0, 6.0]], 1)?;
    let values: Vec<f64> = kept.iter().map(|a| a.value).collect();
    println!("truncation check: {values:?}");
    if values != [1.0, 2.0, 3.0, 4.0] {
        return Err(Error::NumericFailure {
            step: 0,
            what: "truncation check failed".into(),
        });
    }

    let mut cfg = TrainConfig::default();
    for (k, v) in [
        ("total_steps", "60"),
        ("warmup_steps", "20"),
        ("batch_size", "16"),
        ("num_critics", "2"),
        ("num_atoms", "5"),
        ("drop_per_critic", "1"),
        ("critic_hidden", "8,8"),
        ("policy_hidden", "8,8"),
        ("eval_interval", "60"),
        ("eval_episodes", "2"),
        ("eval_max_steps", "20"),
    ] {
        cfg.set(k, v)?;
    }
    let report = Trainer::new(cfg)?.run()?;
    let last = report.evals.last().expect("eval point");
    println!(
        "training smoke check: {} gradient phases, final mean return {:.4}",
        report.gradient_phases,
        last.mean_return()
    );
    println!("all checks passed");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap handles --help/--version as "errors" with success status
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Train(args) => run_train(args),
        Command::Toy(args) => run_toy(args),
        Command::Check => run_check(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e @ (Error::NumericFailure { .. } | Error::NonFinite { .. })) => {
            eprintln!("numeric failure: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
