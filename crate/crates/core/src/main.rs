use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::json;

use star_fsl::data::{
    export_embeddings, export_results, generate_sbm, load_dataset, read_embeddings, save_dataset,
    EmbeddingFormat, SbmSpec,
};
use star_fsl::model::EncoderStack;
use star_fsl::nn::{read_checkpoint, write_checkpoint};
use star_fsl::pipeline::{
    embed, evaluation_embeddings, meta_test, meta_train, pca_2d, shift_over_episodes, RunConfig,
    ShiftSummary,
};
use star_fsl::set_encoder::{retrieval_purity, topk_self_retrieve};

const PARAMS_FILE: &str = "params.bin";
const CONFIG_FILE: &str = "config.json";
const HISTORY_FILE: &str = "history.json";

#[derive(Parser)]
#[command(
    name = "star",
    version,
    about = "Unsupervised few-shot node classification"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a stochastic block model dataset.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Contrastive pretraining; writes params.bin, config.json, history.json.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        /// Run configuration; defaults for every missing key.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Final embeddings of a pretrained model (.tsv or binary).
    Embed {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Episodic meta-testing on the test classes.
    Eval(EvalArgs),
    /// Retrieval purity, support/query shift and a 2-D projection.
    Diag {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        emb: PathBuf,
        #[command(flatten)]
        tasks: TaskArgs,
        #[arg(long)]
        out: PathBuf,
    },
}

/// Episode settings; unset ones come from the run config.
#[derive(Args)]
struct TaskArgs {
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    q: Option<usize>,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    reps: Option<usize>,
}

impl TaskArgs {
    fn apply(&self, cfg: &mut RunConfig) {
        cfg.n_way = self.n.unwrap_or(cfg.n_way);
        cfg.k_shot = self.k.unwrap_or(cfg.k_shot);
        cfg.q_query = self.q.unwrap_or(cfg.q_query);
        cfg.episodes = self.episodes.unwrap_or(cfg.episodes);
        cfg.repetitions = self.reps.unwrap_or(cfg.repetitions);
    }
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    emb: PathBuf,
    #[command(flatten)]
    tasks: TaskArgs,
    #[arg(long)]
    no_ot: bool,
    /// Assert that the embeddings come from a model trained without sets.
    #[arg(long)]
    no_set: bool,
    /// Assert that the embeddings come from a model trained without L_ins.
    #[arg(long)]
    no_instance: bool,
    #[arg(long)]
    out: PathBuf,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn create_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    Ok(())
}

/// Run config stored with an embedding file.
fn embedding_config(meta: &serde_json::Value, path: &Path) -> Result<RunConfig> {
    let cfg = meta
        .get("config")
        .with_context(|| format!("{} carries no run config", path.display()))?;
    Ok(serde_json::from_value(cfg.clone())?)
}

fn synth(spec: &Path, out: &Path) -> Result<()> {
    let spec: SbmSpec = read_json(spec)?;
    let g = generate_sbm(&spec)?;
    save_dataset(out, &g, &spec.class_split())?;
    log::info!(
        "wrote {} nodes, {} edges to {}",
        g.num_nodes(),
        g.num_edges(),
        out.display()
    );
    Ok(())
}

fn pretrain(data: &Path, config: Option<&Path>, out: &Path) -> Result<()> {
    let cfg: RunConfig = match config {
        Some(p) => read_json(p)?,
        None => RunConfig::default(),
    };
    cfg.validate()?;
    let (g, _) = load_dataset(data)?;
    let trained = meta_train(&g, &cfg)?;
    log::info!(
        "{} epochs, best {} (loss {:.4})",
        trained.history.len(),
        trained.best_epoch,
        trained.history[trained.best_epoch].total
    );
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let meta = json!({ "config": cfg, "best_epoch": trained.best_epoch });
    write_checkpoint(out.join(PARAMS_FILE), &trained.model.to_checkpoint(meta))?;
    write_json(&out.join(CONFIG_FILE), &cfg)?;
    write_json(&out.join(HISTORY_FILE), &trained.history)?;
    Ok(())
}

fn embed_cmd(data: &Path, ckpt_dir: &Path, out: &Path) -> Result<()> {
    let (g, _) = load_dataset(data)?;
    let ckpt = read_checkpoint(ckpt_dir.join(PARAMS_FILE))?;
    let cfg: RunConfig = read_json(&ckpt_dir.join(CONFIG_FILE))?;
    let model = EncoderStack::from_checkpoint(&ckpt)?;
    if model.input_dim() != g.feature_dim() {
        bail!(
            "checkpoint expects {} input features, dataset has {}",
            model.input_dim(),
            g.feature_dim()
        );
    }
    let z = embed(&g, &model, &cfg)?;
    let meta = json!({
        "config": cfg,
        "instance_dim": model.embed_dim(),
        "dataset": g.name,
    });
    create_parent(out)?;
    export_embeddings(&z, &meta, out, EmbeddingFormat::from_path(out))?;
    Ok(())
}

fn eval(args: &EvalArgs) -> Result<()> {
    let (g, split) = load_dataset(&args.data)?;
    let labels = g.labels().context("dataset has no labels.tsv")?;
    let (z, meta) = read_embeddings(&args.emb)?;
    let mut cfg = embedding_config(&meta, &args.emb)?;
    if args.no_set && !cfg.ablation.no_set {
        bail!("--no-set given, but the embeddings were trained with the set loss");
    }
    if args.no_instance && !cfg.ablation.no_instance {
        bail!("--no-instance given, but the embeddings were trained with the instance loss");
    }
    cfg.ablation.no_ot |= args.no_ot;
    args.tasks.apply(&mut cfg);
    let metrics = meta_test(&z, labels, &split, &cfg)?;
    log::info!(
        "accuracy {:.4} ± {:.4} ({} unconverged plans)",
        metrics.mean_accuracy,
        metrics.std_accuracy,
        metrics.unconverged_plans
    );
    create_parent(&args.out)?;
    export_results(&metrics, &args.out)?;
    Ok(())
}

#[derive(Serialize)]
struct Diagnostics {
    retrieval_k: usize,
    retrieval_purity: f64,
    shift: ShiftSummary,
    /// `[x, y, label]` per node.
    pca: Vec<[f64; 3]>,
}

fn diag(data: &Path, emb: &Path, tasks: &TaskArgs, out: &Path) -> Result<()> {
    let (g, split) = load_dataset(data)?;
    let labels = g.labels().context("dataset has no labels.tsv")?;
    let (z, meta) = read_embeddings(emb)?;
    let mut cfg = embedding_config(&meta, emb)?;
    tasks.apply(&mut cfg);
    let instance_dim = meta
        .get("instance_dim")
        .and_then(|v| v.as_u64())
        .map_or(z.cols(), |d| d as usize);
    let h = z.slice_cols(0, instance_dim);
    // one extra slot for the anchor itself, which purity skips
    let k = (cfg.top_k + 1).min(h.rows());
    let purity = retrieval_purity(&topk_self_retrieve(&h, k)?, Some(labels))?;
    let shift = shift_over_episodes(&z, labels, &split, &cfg)?;
    let coords = pca_2d(&evaluation_embeddings(&z, &cfg)?)?;
    let pca = coords
        .row_iter()
        .zip(labels)
        .map(|(r, &l)| [r[0], r[1], l as f64])
        .collect();
    create_parent(out)?;
    write_json(
        out,
        &Diagnostics {
            retrieval_k: k,
            retrieval_purity: purity,
            shift,
            pca,
        },
    )
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Synth { spec, out } => synth(&spec, &out),
        Command::Pretrain { data, config, out } => pretrain(&data, config.as_deref(), &out),
        Command::Embed { data, ckpt, out } => embed_cmd(&data, &ckpt, &out),
        Command::Eval(args) => eval(&args),
        Command::Diag {
            data,
            emb,
            tasks,
            out,
        } => diag(&data, &emb, &tasks, &out),
    }
}
