//! Command-line front end: argument definitions, run configuration,
//! checkpoints and the five subcommands.

mod checkpoint;
mod config;

pub use checkpoint::{Checkpoint, MAGIC};
pub use config::RunConfig;

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::evaluation::{embed_pool, recall_at_k, recommend, EvalReport};
use crate::features::{
    generate_synthetic, load_dataset, load_pool, save_dataset, save_pool, Dataset, SynthSpec, Summary,
};
use crate::metric::{MetricVariant, PostSet};
use crate::model::{ModelConfig, ModelParams};
use crate::numcore::grad_check;
use crate::objective::{
    episode_loss, episode_loss_and_grad, sample_episode, train, LossConfig, LossKind, TrainOutcome, TrainStatus,
    Validation,
};
use crate::embedding::embed_item;

#[derive(Debug, Parser)]
#[command(name = "i2s", version, about = "Item-to-set metric learning for set-conditioned recommendation")]
pub struct Cli {
    /// Worker threads for training and evaluation.
    #[arg(long, global = true, env = "I2S_THREADS")]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic train, test and pool feature files.
    GenData(GenDataArgs),
    /// Train a model and write a checkpoint plus a training log.
    Train(RunArgs),
    /// Evaluate a checkpoint with the recall@k protocol.
    Eval(RunArgs),
    /// Rank the pool for the users in a feature file.
    Recommend(RecommendArgs),
    /// Compare analytic and finite-difference gradients for every variant and loss.
    GradCheck(GradCheckArgs),
}

/// Flags mirroring [`RunConfig`]. Unset flags fall back to the config file,
/// then to the defaults.
#[derive(Debug, Default, Args)]
pub struct RunArgs {
    /// Flat `key = value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub d_im: Option<usize>,
    #[arg(long)]
    pub d_w: Option<usize>,
    #[arg(long)]
    pub d_mod: Option<usize>,
    #[arg(long)]
    pub d_emb: Option<usize>,
    /// avg, nn, weighted_v, weighted_uv, avg_specific or full [default: full]
    #[arg(long)]
    pub variant: Option<MetricVariant>,
    /// cls, contrastive or triplet [default: cls]
    #[arg(long)]
    pub loss: Option<LossKind>,
    /// Margin of the contrastive and triplet losses [default: 1.0]
    #[arg(long)]
    pub margin: Option<f64>,
    /// Set size during training [default: 10]
    #[arg(long)]
    pub k: Option<usize>,
    /// Negatives per episode [default: 50]
    #[arg(long)]
    pub m: Option<usize>,
    /// Posts sampled per user during evaluation [default: 10]
    #[arg(long)]
    pub n: Option<usize>,
    /// Evaluation repetitions [default: 50]
    #[arg(long)]
    pub trials: Option<usize>,
    /// Comma-separated recall cutoffs [default: 1,10,25]
    #[arg(long)]
    pub ks: Option<String>,
    /// Episodes per batch [default: 32]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// [default: 200]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Initial learning rate [default: 0.001]
    #[arg(long)]
    pub lr: Option<f64>,
    /// [default: 0.95]
    #[arg(long)]
    pub momentum: Option<f64>,
    /// [default: 0.2]
    #[arg(long)]
    pub decay_factor: Option<f64>,
    /// Epochs between learning-rate decays [default: 300]
    #[arg(long)]
    pub decay_every: Option<usize>,
    /// Initial neighboring weight [default: 1.0]
    #[arg(long)]
    pub gamma_init: Option<f64>,
    /// Epochs between validation runs; 0 disables [default: 0]
    #[arg(long)]
    pub eval_every: Option<usize>,
    /// Sets the data, train and eval seeds at once.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub data_seed: Option<u64>,
    #[arg(long)]
    pub train_seed: Option<u64>,
    #[arg(long)]
    pub eval_seed: Option<u64>,
    #[arg(long)]
    pub train_file: Option<PathBuf>,
    #[arg(long)]
    pub test_file: Option<PathBuf>,
    #[arg(long)]
    pub pool_file: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub train_log: Option<PathBuf>,
}

impl RunArgs {
    fn pairs(&self) -> Vec<(&'static str, String)> {
        let mut out = Vec::new();
        macro_rules! push {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    out.push((stringify!($field), v.to_string()));
                })*
            };
        }
        push!(d_im, d_w, d_mod, d_emb, variant, loss, margin, k, m, n, trials, ks, batch_size, epochs, lr, momentum);
        push!(decay_factor, decay_every, gamma_init, eval_every, seed, data_seed, train_seed, eval_seed);
        macro_rules! push_path {
            ($($field:ident),*) => {
                $(if let Some(v) = &self.$field {
                    out.push((stringify!($field), v.display().to_string()));
                })*
            };
        }
        push_path!(train_file, test_file, pool_file, checkpoint, report, train_log);
        out
    }

    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path)?;
        }
        for (key, value) in self.pairs() {
            cfg.set(key, &value)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value = "train.jsonl")]
    pub train_file: PathBuf,
    #[arg(long, default_value = "test.jsonl")]
    pub test_file: PathBuf,
    #[arg(long, default_value = "pool.jsonl")]
    pub pool_file: PathBuf,
    /// Train plus test users.
    #[arg(long)]
    pub users: Option<usize>,
    #[arg(long)]
    pub test_users: Option<usize>,
    #[arg(long)]
    pub posts: Option<usize>,
    #[arg(long)]
    pub styles: Option<usize>,
    #[arg(long)]
    pub min_styles: Option<usize>,
    #[arg(long)]
    pub max_styles: Option<usize>,
    #[arg(long)]
    pub d_im: Option<usize>,
    #[arg(long)]
    pub d_w: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub outlier_rate: Option<f64>,
    #[arg(long)]
    pub missing_rate: Option<f64>,
    #[arg(long)]
    pub style_scale: Option<f64>,
    #[arg(long)]
    pub offset_scale: Option<f64>,
    #[arg(long)]
    pub shift_scale: Option<f64>,
    #[arg(long)]
    pub focus_dims: Option<usize>,
    #[arg(long)]
    pub unfocused_noise: Option<f64>,
    #[arg(long)]
    pub modality_focus: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

impl GenDataArgs {
    pub fn spec(&self) -> SynthSpec {
        let d = SynthSpec::default();
        SynthSpec {
            num_users: self.users.unwrap_or(d.num_users),
            num_test_users: self.test_users.unwrap_or(d.num_test_users),
            posts_per_user: self.posts.unwrap_or(d.posts_per_user),
            num_styles: self.styles.unwrap_or(d.num_styles),
            styles_per_user: (
                self.min_styles.unwrap_or(d.styles_per_user.0),
                self.max_styles.unwrap_or(d.styles_per_user.1),
            ),
            d_im: self.d_im.unwrap_or(d.d_im),
            d_w: self.d_w.unwrap_or(d.d_w),
            noise_scale: self.noise.unwrap_or(d.noise_scale),
            outlier_rate: self.outlier_rate.unwrap_or(d.outlier_rate),
            missing_modality_rate: self.missing_rate.unwrap_or(d.missing_modality_rate),
            style_scale: self.style_scale.unwrap_or(d.style_scale),
            user_offset_scale: self.offset_scale.unwrap_or(d.user_offset_scale),
            user_shift_scale: self.shift_scale.unwrap_or(d.user_shift_scale),
            focus_dims: self.focus_dims.unwrap_or(d.focus_dims),
            unfocused_noise_scale: self.unfocused_noise.unwrap_or(d.unfocused_noise_scale),
            modality_focus_rate: self.modality_focus.unwrap_or(d.modality_focus_rate),
            seed: self.seed.unwrap_or(d.seed),
            ..d
        }
    }
}

#[derive(Debug, Args)]
pub struct RecommendArgs {
    #[command(flatten)]
    pub run: RunArgs,
    /// Feature file holding the users to recommend for.
    #[arg(long)]
    pub user_file: PathBuf,
    /// Only this user; all users in the file otherwise.
    #[arg(long)]
    pub user: Option<String>,
    #[arg(long, default_value_t = 10)]
    pub top_k: usize,
}

#[derive(Clone, Debug, Args)]
pub struct GradCheckArgs {
    /// Width used for every dimension (d_im, d_w, d_mod, d_emb).
    #[arg(long, default_value_t = 4)]
    pub dim: usize,
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    #[arg(long, default_value_t = 2)]
    pub m: usize,
    #[arg(long, default_value_t = 1e-6)]
    pub epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub tolerance: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl Default for GradCheckArgs {
    fn default() -> Self {
        GradCheckArgs {
            dim: 4,
            k: 3,
            m: 2,
            epsilon: 1e-6,
            tolerance: 1e-4,
            seed: 0,
        }
    }
}

/// Writes synthetic train, test and pool files.
pub fn cmd_gen_data(spec: &SynthSpec, train_file: &Path, test_file: &Path, pool_file: &Path) -> Result<[Summary; 2]> {
    let data = generate_synthetic(spec)?;
    save_dataset(&data.train, train_file)?;
    save_dataset(&data.test, test_file)?;
    save_pool(&data.pool, spec.d_im, spec.d_w, pool_file)?;
    Ok([data.train.summary(), data.test.summary()])
}

fn check_widths(data: &Dataset, model: ModelConfig, path: &Path) -> Result<()> {
    if data.d_im != model.d_im || data.d_w != model.d_w {
        return Err(Error::Config(format!(
            "{} has d_im {} and d_w {}, the model expects {} and {}",
            path.display(),
            data.d_im,
            data.d_w,
            model.d_im,
            model.d_w
        )));
    }
    Ok(())
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| Error::io(path, e))
}

/// Trains from `cfg.train_file`, then writes the checkpoint and the
/// training log. A diverged run still writes the last good parameters and
/// returns an error.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome<f64>> {
    cfg.validate()?;
    let data = load_dataset(&cfg.train_file)?;
    check_widths(&data, cfg.model(), &cfg.train_file)?;
    let held_out = if cfg.eval_every > 0 {
        let test = load_dataset(&cfg.test_file)?;
        let pool = load_pool(&cfg.pool_file)?;
        check_widths(&test, cfg.model(), &cfg.test_file)?;
        check_widths(&pool, cfg.model(), &cfg.pool_file)?;
        Some((test, pool))
    } else {
        None
    };
    let validation = held_out.as_ref().map(|(test, pool)| Validation {
        users: test,
        pool: &pool.pool,
        protocol: cfg.protocol(),
    });
    let outcome = train::<f64>(&data, &cfg.train_config(), validation.as_ref())?;
    Checkpoint::new(cfg.clone(), outcome.params.clone())?.save(&cfg.checkpoint)?;
    let mut log = create(&cfg.train_log)?;
    for entry in &outcome.log {
        serde_json::to_writer(&mut log, entry)?;
        writeln!(log).map_err(|e| Error::io(&cfg.train_log, e))?;
    }
    log.flush().map_err(|e| Error::io(&cfg.train_log, e))?;
    if let TrainStatus::Diverged { epoch, step, reason } = &outcome.status {
        return Err(Error::NonFinite(format!(
            "training diverged at epoch {epoch}, step {step} ({reason}); last good parameters saved to {}",
            cfg.checkpoint.display()
        )));
    }
    Ok(outcome)
}

/// Evaluates the checkpoint at `cfg.checkpoint` on `cfg.test_file` against
/// `cfg.pool_file` and writes the report records. The metric variant and
/// architecture come from the checkpoint.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalReport> {
    cfg.protocol().validate()?;
    let ck = Checkpoint::load(&cfg.checkpoint)?;
    let test = load_dataset(&cfg.test_file)?;
    let pool = load_pool(&cfg.pool_file)?;
    check_widths(&test, ck.params.config, &cfg.test_file)?;
    check_widths(&pool, ck.params.config, &cfg.pool_file)?;
    let report = recall_at_k(&test, &pool.pool, &ck.params, ck.config.variant, &cfg.protocol())?;
    let mut out = create(&cfg.report)?;
    report.write_records(&mut out)?;
    out.flush().map_err(|e| Error::io(&cfg.report, e))?;
    Ok(report)
}

/// Recommendations for one user: `(item_id, distance)` closest first.
pub type UserRecommendations = (String, Vec<(String, f64)>);

/// Ranks `cfg.pool_file` for every user in `user_file` (or only `user`),
/// using all of that user's posts as the set.
pub fn cmd_recommend(cfg: &RunConfig, user_file: &Path, user: Option<&str>, top_k: usize) -> Result<Vec<UserRecommendations>> {
    let ck = Checkpoint::load(&cfg.checkpoint)?;
    let users = load_dataset(user_file)?;
    let pool = load_pool(&cfg.pool_file)?;
    check_widths(&users, ck.params.config, user_file)?;
    check_widths(&pool, ck.params.config, &cfg.pool_file)?;
    let selected: Vec<_> = match user {
        Some(id) => {
            let idx = users
                .user_index(id)
                .ok_or_else(|| Error::Config(format!("user `{id}` not found in {}", user_file.display())))?;
            vec![&users.users[idx]]
        }
        None => users.users.iter().collect(),
    };
    let embedded_pool = embed_pool(&pool.pool, &ck.params)?;
    selected
        .into_iter()
        .map(|u| {
            let items = u
                .posts
                .iter()
                .map(|p| embed_item(p, &ck.params.embedding))
                .collect::<Result<Vec<_>>>()?;
            let set = PostSet::new(items)?;
            let recs = recommend(&set, &embedded_pool, &ck.params, ck.config.variant, top_k)?;
            Ok((u.user_id.clone(), recs))
        })
        .collect()
}

/// Parameter groups reported by [`cmd_grad_check`].
pub const GRAD_GROUPS: [&str; 7] = [
    "embedding.image_proj",
    "embedding.attention",
    "embedding.gates",
    "embedding.fusion",
    "metric.gamma",
    "metric.importance",
    "metric.scaling",
];

fn group_of(name: &str) -> usize {
    let prefixes: [(&str, usize); 9] = [
        ("embedding.image_proj", 0),
        ("embedding.hashtag_", 1),
        ("embedding.title_", 1),
        ("embedding.gate_", 2),
        ("embedding.fusion", 3),
        ("metric.gamma", 4),
        ("metric.importance", 5),
        ("metric.scaling", 6),
        ("", usize::MAX),
    ];
    prefixes.iter().find(|(p, _)| name.starts_with(p)).map(|&(_, g)| g).expect("empty prefix matches")
}

/// Worst relative error of one variant/loss pair, per [`GRAD_GROUPS`] entry.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckRow {
    pub variant: MetricVariant,
    pub loss: LossKind,
    pub group_errors: [f64; 7],
}

impl GradCheckRow {
    pub fn max_error(&self) -> f64 {
        self.group_errors.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckSummary {
    pub rows: Vec<GradCheckRow>,
    pub tolerance: f64,
}

impl GradCheckSummary {
    pub fn max_error(&self) -> f64 {
        self.rows.iter().map(GradCheckRow::max_error).fold(0.0, f64::max)
    }

    pub fn passed(&self) -> bool {
        self.max_error() < self.tolerance
    }

    pub fn table(&self) -> String {
        let mut s = format!("{:<12} {:<12}", "variant", "loss");
        for g in GRAD_GROUPS {
            s += &format!(" {:>20}", g);
        }
        s.push('\n');
        for r in &self.rows {
            s += &format!("{:<12} {:<12}", r.variant.name(), r.loss.name());
            for e in r.group_errors {
                s += &format!(" {:>20.3e}", e);
            }
            s.push('\n');
        }
        s += &format!(
            "max relative error {:.3e} (tolerance {:.0e}): {}\n",
            self.max_error(),
            self.tolerance,
            if self.passed() { "PASS" } else { "FAIL" }
        );
        s
    }
}

/// Finite-difference check of the full episode gradient for every metric
/// variant and loss, on a tiny synthetic dataset at a random parameter
/// point with nonzero biases.
pub fn cmd_grad_check(args: &GradCheckArgs) -> Result<GradCheckSummary> {
    let d = args.dim;
    let spec = SynthSpec {
        num_users: 4,
        num_test_users: 0,
        posts_per_user: args.k + 2,
        num_styles: 3,
        styles_per_user: (1, 2),
        d_im: d,
        d_w: d,
        outlier_rate: 0.0,
        missing_modality_rate: 0.0,
        words_per_post: (2, 3),
        seed: args.seed,
        ..SynthSpec::default()
    };
    let data = generate_synthetic(&spec)?.train;
    let model = ModelConfig {
        d_im: d,
        d_w: d,
        d_mod: d,
        d_emb: d,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let mut params = ModelParams::<f64>::init(model, &mut rng)?;
    for t in params.tensors_mut() {
        for x in t.data_mut() {
            *x += rng.random_range(-0.2..0.2);
        }
    }
    let names = params.names();
    let mut rows = Vec::new();
    for variant in MetricVariant::ALL {
        for kind in [LossKind::Cls, LossKind::Contrastive, LossKind::Triplet] {
            // A wide margin keeps every hinge term active.
            let loss = LossConfig {
                kind,
                m: args.m,
                margin: 50.0,
            };
            let episode = sample_episode(&data, args.k, args.m, &mut rng)?;
            let (_, grads) = episode_loss_and_grad(&data, &episode, &params, variant, &loss)?;
            let report = grad_check(
                |ts| episode_loss(&data, &episode, &params.with_tensors(ts)?, variant, &loss),
                &params.to_tensors(),
                &grads.to_tensors(),
                args.epsilon,
            )?;
            let mut group_errors = [0.0f64; 7];
            for (name, &e) in names.iter().zip(&report.per_tensor) {
                let g = group_of(name);
                group_errors[g] = group_errors[g].max(e);
            }
            rows.push(GradCheckRow {
                variant,
                loss: kind,
                group_errors,
            });
        }
    }
    Ok(GradCheckSummary {
        rows,
        tolerance: args.tolerance,
    })
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match cli.command {
        Command::GenData(args) => {
            let [train, test] = cmd_gen_data(&args.spec(), &args.train_file, &args.test_file, &args.pool_file)?;
            println!(
                "train: {} users, {} posts; test: {} users, {} posts; pool: {} items",
                train.users, train.posts, test.users, test.posts, train.users + test.users
            );
        }
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let out = cmd_train(&cfg)?;
            if let Some(last) = out.log.last() {
                println!("epoch {} mean loss {:.6} lr {}", last.epoch, last.mean_loss, last.lr);
            }
            println!("checkpoint written to {}", cfg.checkpoint.display());
        }
        Command::Eval(args) => {
            let cfg = args.resolve()?;
            let report = cmd_eval(&cfg)?;
            print!("{}", report.table());
        }
        Command::Recommend(args) => {
            let cfg = args.run.resolve()?;
            for (user, recs) in cmd_recommend(&cfg, &args.user_file, args.user.as_deref(), args.top_k)? {
                for (rank, (item, dist)) in recs.iter().enumerate() {
                    println!("{user}\t{}\t{item}\t{dist:.6}", rank + 1);
                }
            }
        }
        Command::GradCheck(args) => {
            let summary = cmd_grad_check(&args)?;
            print!("{}", summary.table());
            if !summary.passed() {
                return Err(Error::Config(format!(
                    "gradient check failed: max relative error {:.3e} >= {:.0e}",
                    summary.max_error(),
                    summary.tolerance
                )));
            }
        }
    }
    Ok(())
}
