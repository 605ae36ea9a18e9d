//! Command-line surface for reproduction runs: codebook generation,
//! synthetic data, training, evaluation, and one-shot reassignment.
//!
//! Human-readable logs go to standard error; machine output (JSON) goes to
//! standard output or files. Exit codes: 0 success, 2 usage error, 3 data
//! error, 4 infeasible assignment.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crh::assign::{reassign_centers, AssignmentFile, GreedyOrderMode, Solver as AssignSolver};
use crh::code::{
    codebook_distance_stats, read_codebook, sample_codebook_bernoulli, sample_codebook_unique,
    write_codebook, BinaryCode, Codebook, HeadLayout,
};
use crh::data::{
    generate_synthetic, import_csv, read_dataset, read_embeddings, write_dataset, write_embeddings,
    Dataset, Embeddings, SynthSpec,
};
use crh::eval::{
    alignment_against_reference, class_prototypes, map_at_k, MetricsFile, SimilarityMatrix,
    ZeroRelevantPolicy,
};
use crh::model::{read_checkpoint, write_checkpoint, HashModel, ScheduleInfo};
use crh::seed::{SeedStreams, Stream};
use crh::train::{train, TrainConfig};
use crh::Error;

#[derive(Parser)]
#[command(name = "crh", version, about = "Center-reassigned hashing toolkit")]
struct Cli {
    /// Worker threads for parallel sections (results are identical for any
    /// value).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a binary codebook and write it as a CRHC file.
    GenCodebook(GenCodebookArgs),
    /// Generate a synthetic hierarchical dataset with known semantics.
    Synth(SynthArgs),
    /// Train the hash head with scheduled center reassignment.
    Train(TrainArgs),
    /// Encode a database and queries, then report retrieval/alignment metrics.
    Eval(EvalArgs),
    /// One-shot center reassignment from a trained model's codes.
    Reassign(ReassignArgs),
    /// Convert a CSV of features and label indices into a CRHF file.
    ImportCsv(ImportCsvArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum SamplingArg {
    Bernoulli,
    Unique,
}

#[derive(Args)]
struct GenCodebookArgs {
    /// Code length in bits.
    #[arg(long)]
    k: usize,
    /// Number of codes.
    #[arg(long)]
    m: usize,
    #[arg(long, value_enum, default_value = "unique")]
    sampling: SamplingArg,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CRHC path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SynthArgs {
    /// JSON file matching the synthetic-spec fields; defaults apply when
    /// omitted.
    #[arg(long)]
    spec: Option<PathBuf>,
    /// Overrides the seed given in the spec file.
    #[arg(long)]
    seed: Option<u64>,
    /// Output CRHF path.
    #[arg(long)]
    out_data: PathBuf,
    /// Optional CRHE output: ground-truth prototypes broadcast per sample
    /// (or one row per class with --embeddings-per-class).
    #[arg(long)]
    out_embeddings: Option<PathBuf>,
    #[arg(long, default_value_t = false)]
    embeddings_per_class: bool,
    /// Optional JSON output of the ground-truth similarity matrix.
    #[arg(long)]
    out_simref: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    /// JSON run configuration (mirrors the training config fields).
    #[arg(long)]
    config: PathBuf,
    /// Input CRHF dataset.
    #[arg(long)]
    data: PathBuf,
    /// Output directory for checkpoint, assignment, codebook, history, and
    /// manifest.
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint.
    #[arg(long)]
    model: PathBuf,
    /// Assignment JSON providing the class centers.
    #[arg(long)]
    assignment: PathBuf,
    /// Database CRHF.
    #[arg(long)]
    data: PathBuf,
    /// Query CRHF; defaults to the database itself.
    #[arg(long)]
    queries: Option<PathBuf>,
    /// Ranking cutoff: a number or "all".
    #[arg(long, default_value = "all")]
    k: String,
    /// Reference embeddings (CRHE) for semantic alignment.
    #[arg(long)]
    embeddings: Option<PathBuf>,
    /// Precomputed reference similarity matrix (JSON) for semantic
    /// alignment.
    #[arg(long)]
    simref: Option<PathBuf>,
    /// Exclude queries with no relevant item instead of counting them as 0.
    #[arg(long, default_value_t = false)]
    exclude_zero_relevant: bool,
    /// Optional metrics output file (stdout always gets a copy).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum SolverArg {
    Greedy,
    Hungarian,
}

#[derive(Args)]
struct ReassignArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    codebook: PathBuf,
    /// Head count (must divide the code length).
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, value_enum, default_value = "greedy")]
    solver: SolverArg,
    /// Seed for the greedy class order.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Previous assignment JSON to diff against.
    #[arg(long)]
    prev: Option<PathBuf>,
    /// Output assignment JSON path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ImportCsvArgs {
    /// CSV input: feature columns then one semicolon-separated label column.
    #[arg(long)]
    input: PathBuf,
    /// Total class count.
    #[arg(long)]
    classes: usize,
    /// Output CRHF path.
    #[arg(long)]
    out: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
        {
            return fail(&Error::InvalidParameter(format!("thread pool: {e}")));
        }
    }
    let result = match cli.command {
        Command::GenCodebook(args) => cmd_gen_codebook(args),
        Command::Synth(args) => cmd_synth(args),
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::Reassign(args) => cmd_reassign(args),
        Command::ImportCsv(args) => cmd_import_csv(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(error: &Error) -> ExitCode {
    let kind = match error {
        Error::InvalidParameter(_) => "usage",
        Error::InfeasibleHead { .. } | Error::InfeasibleShape { .. } => "infeasible",
        _ => "data",
    };
    let line = serde_json::json!({"error": {"kind": kind, "message": error.to_string()}});
    eprintln!("{line}");
    match kind {
        "usage" => ExitCode::from(2),
        "infeasible" => ExitCode::from(4),
        _ => ExitCode::from(3),
    }
}

fn emit(value: &impl Serialize) -> crh::Result<()> {
    let mut stdout = std::io::stdout().lock();
    serde_json::to_writer(&mut stdout, value)?;
    stdout.write_all(b"\n")?;
    Ok(())
}

fn open(path: &Path) -> crh::Result<BufReader<File>> {
    Ok(BufReader::new(File::open(path)?))
}

fn create(path: &Path) -> crh::Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn fnv1a64(bytes: &[u8]) -> String {
    let mut hash: u64 = 0xcbf29ce484222325;
    for &b in bytes {
        hash ^= b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    format!("{hash:016x}")
}

fn file_hash(path: &Path) -> crh::Result<String> {
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    Ok(fnv1a64(&bytes))
}

fn cmd_gen_codebook(args: GenCodebookArgs) -> crh::Result<()> {
    let streams = SeedStreams::new(args.seed);
    let mut rng = streams.rng(Stream::Codebook);
    let (codebook, duplicates) = match args.sampling {
        SamplingArg::Unique => (sample_codebook_unique(args.k, args.m, &mut rng)?, 0),
        SamplingArg::Bernoulli => {
            let sample = sample_codebook_bernoulli(args.k, args.m, &mut rng)?;
            let dup = sample.duplicates.len();
            (sample.codebook, dup)
        }
    };
    write_codebook(&codebook, &mut create(&args.out)?)?;
    eprintln!(
        "wrote {} codes of {} bits to {}",
        args.m,
        args.k,
        args.out.display()
    );

    let stats = if args.m >= 2 {
        Some(codebook_distance_stats(codebook.codes())?)
    } else {
        None
    };
    emit(&serde_json::json!({
        "k": args.k,
        "m": args.m,
        "duplicates": duplicates,
        "d_min": stats.map(|s| s.d_min),
        "d_avg": stats.map(|s| s.d_avg()),
    }))
}

fn cmd_synth(args: SynthArgs) -> crh::Result<()> {
    let mut spec: SynthSpec = match &args.spec {
        Some(path) => serde_json::from_reader(open(path)?)?,
        None => SynthSpec::default(),
    };
    if let Some(seed) = args.seed {
        spec.seed = seed;
    }
    let out = generate_synthetic(&spec)?;
    write_dataset(&out.dataset, &mut create(&args.out_data)?)?;
    eprintln!(
        "wrote {} samples ({} classes, dim {}) to {}",
        out.dataset.len(),
        out.dataset.classes(),
        out.dataset.dim(),
        args.out_data.display()
    );

    if let Some(path) = &args.out_embeddings {
        let rows: Vec<f32> = if args.embeddings_per_class {
            out.prototypes.iter().flatten().map(|&v| v as f32).collect()
        } else {
            // per sample: the weighted mean of its labels' prototypes
            (0..out.dataset.len())
                .flat_map(|n| {
                    let mask = out.dataset.label(n);
                    let count = mask.count() as f64;
                    let mut row = vec![0.0f64; spec.dim];
                    for c in mask.iter() {
                        for (slot, &v) in row.iter_mut().zip(&out.prototypes[c]) {
                            *slot += v / count;
                        }
                    }
                    row.into_iter().map(|v| v as f32).collect::<Vec<_>>()
                })
                .collect()
        };
        let embeddings = Embeddings::new(spec.dim, rows)?;
        write_embeddings(&embeddings, &mut create(path)?)?;
        eprintln!(
            "wrote {} embedding rows to {}",
            embeddings.len(),
            path.display()
        );
    }

    if let Some(path) = &args.out_simref {
        let simref = serde_json::json!({
            "classes": spec.classes,
            "matrix": out.reference_similarity.rows(),
        });
        serde_json::to_writer(&mut create(path)?, &simref)?;
        eprintln!("wrote reference similarity matrix to {}", path.display());
    }

    emit(&serde_json::json!({
        "n": out.dataset.len(),
        "classes": out.dataset.classes(),
        "dim": out.dataset.dim(),
        "single_label": out.dataset.is_single_label(),
        "seed": spec.seed,
    }))
}

fn cmd_train(args: TrainArgs) -> crh::Result<()> {
    let cfg: TrainConfig = serde_json::from_reader(open(&args.config)?)?;
    let dataset = read_dataset(&mut open(&args.data)?)?;
    std::fs::create_dir_all(&args.out_dir)?;

    let out = train(&cfg, &dataset)?;
    eprintln!(
        "trained {} epochs; final mean loss {:.6}",
        out.epochs_run,
        out.history
            .records
            .last()
            .map(|r| r.mean_loss)
            .unwrap_or(f64::NAN)
    );

    let codebook_path = args.out_dir.join("codebook.crhc");
    write_codebook(&out.codebook, &mut create(&codebook_path)?)?;

    let assignment_path = args.out_dir.join("assignment.json");
    let assignment_file = AssignmentFile::build(&out.assignment, &out.codebook)?;
    {
        let mut w = create(&assignment_path)?;
        serde_json::to_writer(&mut w, &assignment_file)?;
        w.write_all(b"\n")?;
    }

    let model_path = args.out_dir.join("model.crhm");
    let schedule = ScheduleInfo {
        initial_lr: cfg.learning_rate,
        total_epochs: cfg.epochs,
    };
    write_checkpoint(
        &out.model,
        out.epochs_run,
        &schedule,
        &mut create(&model_path)?,
    )?;

    let history_path = args.out_dir.join("history.jsonl");
    out.history.write_jsonl(&mut create(&history_path)?)?;

    let initial_assignment = AssignmentFile::build(&out.initial_assignment, &out.codebook)?;
    let files = serde_json::json!({
        "codebook.crhc": file_hash(&codebook_path)?,
        "assignment.json": file_hash(&assignment_path)?,
        "model.crhm": file_hash(&model_path)?,
        "history.jsonl": file_hash(&history_path)?,
    });
    let manifest = serde_json::json!({
        "seed": cfg.seed,
        "streams": {
            "codebook": Stream::Codebook as u64,
            "init_assignment": Stream::InitAssignment as u64,
            "model_init": Stream::ModelInit as u64,
            "batch_order": Stream::BatchOrder as u64,
            "greedy_order": Stream::GreedyOrder as u64,
        },
        "config": cfg,
        "epochs_run": out.epochs_run,
        "initial_assignment": initial_assignment,
        "files": files,
    });
    {
        let mut w = create(&args.out_dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(&mut w, &manifest)?;
        w.write_all(b"\n")?;
    }

    emit(&serde_json::json!({
        "out_dir": args.out_dir,
        "epochs_run": out.epochs_run,
        "files": files,
    }))
}

fn load_model(path: &Path) -> crh::Result<HashModel> {
    let (model, _, _) = read_checkpoint(&mut open(path)?)?;
    Ok(model)
}

fn encode_dataset(model: &HashModel, dataset: &Dataset) -> crh::Result<Vec<BinaryCode>> {
    let samples: Vec<&[f32]> = (0..dataset.len()).map(|i| dataset.feature(i)).collect();
    model.encode_all(&samples)
}

fn read_simref(path: &Path) -> crh::Result<SimilarityMatrix> {
    #[derive(serde::Deserialize)]
    struct SimRef {
        classes: usize,
        matrix: Vec<Vec<f64>>,
    }
    let raw: SimRef = serde_json::from_reader(open(path)?)?;
    let entries: Vec<f64> = raw.matrix.into_iter().flatten().collect();
    SimilarityMatrix::from_entries(raw.classes, entries)
}

fn cmd_eval(args: EvalArgs) -> crh::Result<()> {
    let model = load_model(&args.model)?;
    let assignment: AssignmentFile = serde_json::from_reader(open(&args.assignment)?)?;
    let database = read_dataset(&mut open(&args.data)?)?;

    let k = match args.k.as_str() {
        "all" => None,
        other => Some(other.parse::<usize>().map_err(|_| {
            Error::InvalidParameter(format!(
                "--k must be a positive integer or \"all\", got {other:?}"
            ))
        })?),
    };

    let db_codes = encode_dataset(&model, &database)?;
    let (query_codes, query_labels) = match &args.queries {
        Some(path) => {
            let queries = read_dataset(&mut open(path)?)?;
            (encode_dataset(&model, &queries)?, queries.labels().to_vec())
        }
        None => (db_codes.clone(), database.labels().to_vec()),
    };

    let policy = if args.exclude_zero_relevant {
        ZeroRelevantPolicy::Exclude
    } else {
        ZeroRelevantPolicy::CountAsZero
    };
    let num_queries = query_codes.len();
    let map = map_at_k(
        &db_codes,
        database.labels(),
        &query_codes,
        &query_labels,
        k,
        policy,
    )?;

    let centers = assignment.center_codes()?;
    let stats = if centers.len() >= 2 {
        Some(codebook_distance_stats(&centers)?)
    } else {
        None
    };

    let pcc = if let Some(path) = &args.simref {
        let reference = read_simref(path)?;
        Some(alignment_against_reference(&centers, &reference)?.pcc)
    } else if let Some(path) = &args.embeddings {
        let embeddings = read_embeddings(&mut open(path)?, Some(database.len()))?;
        let prototypes = class_prototypes(&embeddings.rows_f64(), database.labels())?;
        let reference = SimilarityMatrix::from_vectors(&prototypes)?;
        Some(alignment_against_reference(&centers, &reference)?.pcc)
    } else {
        None
    };

    let metrics = MetricsFile {
        map,
        pcc,
        d_min: stats.map(|s| s.d_min),
        d_avg: stats.map(|s| s.d_avg()),
        k,
        num_queries,
    };
    if let Some(path) = &args.out {
        let mut w = create(path)?;
        serde_json::to_writer(&mut w, &metrics)?;
        w.write_all(b"\n")?;
    }
    emit(&metrics)
}

fn cmd_reassign(args: ReassignArgs) -> crh::Result<()> {
    let model = load_model(&args.model)?;
    let dataset = read_dataset(&mut open(&args.data)?)?;
    let codebook: Codebook = read_codebook(&mut open(&args.codebook)?)?;
    let layout = HeadLayout::for_bits(codebook.bits(), args.heads)?;
    dataset.check_all_classes_populated()?;

    let codes = encode_dataset(&model, &dataset)?;
    let solver = match args.solver {
        SolverArg::Greedy => AssignSolver::Greedy,
        SolverArg::Hungarian => AssignSolver::Hungarian,
    };
    let streams = SeedStreams::new(args.seed);
    let mut rng = streams.rng(Stream::GreedyOrder);
    let outcome = reassign_centers(
        &codes,
        dataset.labels(),
        dataset.classes(),
        &codebook,
        layout,
        solver,
        GreedyOrderMode::PerHead,
        &mut rng,
    )?;

    let file = AssignmentFile::build(&outcome.assignment, &codebook)?;
    {
        let mut w = create(&args.out)?;
        serde_json::to_writer(&mut w, &file)?;
        w.write_all(b"\n")?;
    }

    let changed = match &args.prev {
        Some(path) => {
            let prev: AssignmentFile = serde_json::from_reader(open(path)?)?;
            let prev_centers = prev.center_codes()?;
            let new_centers = outcome.assignment.centers(&codebook)?;
            if prev_centers.len() != new_centers.len() {
                return Err(Error::InvalidParameter(format!(
                    "previous assignment covers {} classes, current {}",
                    prev_centers.len(),
                    new_centers.len()
                )));
            }
            Some(
                prev_centers
                    .iter()
                    .zip(&new_centers)
                    .filter(|(a, b)| a != b)
                    .count(),
            )
        }
        None => None,
    };

    let per_head_cost: Vec<f64> = outcome
        .per_head_cost
        .iter()
        .map(|c| num_traits::ToPrimitive::to_f64(c).unwrap_or(f64::NAN))
        .collect();
    emit(&serde_json::json!({
        "per_head_cost": per_head_cost,
        "changed": changed,
    }))
}

fn cmd_import_csv(args: ImportCsvArgs) -> crh::Result<()> {
    let dataset = import_csv(open(&args.input)?, args.classes)?;
    write_dataset(&dataset, &mut create(&args.out)?)?;
    eprintln!(
        "imported {} samples (dim {}) to {}",
        dataset.len(),
        dataset.dim(),
        args.out.display()
    );
    emit(&serde_json::json!({
        "n": dataset.len(),
        "dim": dataset.dim(),
        "classes": dataset.classes(),
        "single_label": dataset.is_single_label(),
    }))
}
