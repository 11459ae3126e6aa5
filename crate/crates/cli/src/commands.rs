use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use arcpool_core::acquisition::{self, rank_order, ConfidenceScore};
use arcpool_core::classifier::{argmax, embed_all};
use arcpool_core::data::{self, gen_blobs};
use arcpool_core::engine::{mean_std, run_experiment_on};
use arcpool_core::seed::{self, Stream};
use arcpool_core::session::DatasetRef;
use arcpool_core::{
    train as fit, AlConfig, Checkpoint, Dataset, Error, HyperParams, ModelParams, Strategy,
    SynthConfig,
};
use arcpool_service::{AppState, ServiceConfig};

use crate::output::sig6;

#[derive(Debug)]
pub enum CliError {
    Core(Error),
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    Usage(String),
    Startup(String),
}

impl CliError {
    /// Usage 2, I/O 3, bad input 4, engine failure 5, service startup 6.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::Startup(_) => 6,
            CliError::Core(e) => match e {
                Error::Io { .. } => 3,
                Error::Json(_)
                | Error::Csv(_)
                | Error::Parse { .. }
                | Error::Schema(_)
                | Error::DuplicateId(_)
                | Error::UnknownId(_)
                | Error::UnknownPreset(_)
                | Error::UnknownStrategy(_)
                | Error::InvalidConfig(_)
                | Error::InvalidHyperParams(_)
                | Error::CorruptCheckpoint(_)
                | Error::DimensionMismatch { .. }
                | Error::InvalidLabel { .. }
                | Error::EmptyDataset => 4,
                _ => 5,
            },
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Core(e) => write!(f, "{e}"),
            CliError::Io { path, source } => write!(f, "{}: {source}", path.display()),
            CliError::Usage(msg) | CliError::Startup(msg) => f.write_str(msg),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn read(path: &Path) -> CliResult<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn parse_json<T: serde::de::DeserializeOwned>(
    path: &Path,
    value: serde_json::Value,
) -> CliResult<T> {
    serde_json::from_value(value)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())).into())
}

fn read_json_value(path: &Path) -> CliResult<serde_json::Value> {
    serde_json::from_str(&read(path)?)
        .map_err(|e| Error::Schema(format!("{}: {e}", path.display())).into())
}

/// An ALConfig from a JSON file, or a preset when no such file exists.
pub fn load_al(spec: &str) -> CliResult<AlConfig> {
    let path = Path::new(spec);
    if path.is_file() {
        parse_json(path, read_json_value(path)?)
    } else if AlConfig::PRESETS.contains(&spec) {
        Ok(AlConfig::preset(spec)?)
    } else {
        Err(CliError::Usage(format!(
            "--al {spec:?} is neither a file nor one of {}",
            AlConfig::PRESETS.join(", ")
        )))
    }
}

/// `a..b`, `a,b,c` or a single seed.
pub fn parse_seeds(spec: &str) -> CliResult<Vec<u64>> {
    let bad = || CliError::Usage(format!("invalid --seeds {spec:?}"));
    if let Some((a, b)) = spec.split_once("..") {
        let (a, b): (u64, u64) = (
            a.trim().parse().map_err(|_| bad())?,
            b.trim().parse().map_err(|_| bad())?,
        );
        if a >= b {
            return Err(bad());
        }
        return Ok((a..b).collect());
    }
    spec.split(',')
        .map(|s| s.trim().parse().map_err(|_| bad()))
        .collect()
}

pub fn gen_synth(config: Option<&Path>, preset: Option<&str>, out: &Path) -> CliResult {
    let cfg: SynthConfig = match (config, preset) {
        (Some(path), _) => parse_json(path, read_json_value(path)?)?,
        (None, Some(name)) => SynthConfig::preset(name)?,
        (None, None) => return Err(CliError::Usage("pass --config or --preset".into())),
    };
    let ds = gen_blobs(&cfg)?;
    if out.extension().is_some_and(|e| e == "csv") {
        let file = fs::File::create(out).map_err(|source| CliError::Io {
            path: out.to_path_buf(),
            source,
        })?;
        ds.write_csv(file)?;
    } else {
        ds.save_jsonl(out)?;
    }
    println!(
        "wrote {} samples ({} classes, d_in {}) to {}",
        ds.len(),
        ds.num_classes(),
        ds.d_in(),
        out.display()
    );
    Ok(())
}

pub struct TrainOpts {
    pub data: PathBuf,
    pub hp: Option<PathBuf>,
    pub out: PathBuf,
    pub test_fraction: f64,
    pub split_seed: u64,
    pub seed: u64,
}

fn load_hyper(path: Option<&Path>, d_in: usize) -> CliResult<HyperParams> {
    let hp = match path {
        None => HyperParams::new(d_in),
        Some(path) => {
            let mut value = read_json_value(path)?;
            if let Some(obj) = value.as_object_mut() {
                obj.entry("d_in").or_insert(d_in.into());
            }
            parse_json(path, value)?
        }
    };
    if hp.d_in != d_in {
        return Err(Error::DimensionMismatch {
            expected: d_in,
            actual: hp.d_in,
        }
        .into());
    }
    hp.validate()?;
    Ok(hp)
}

pub fn train(opts: &TrainOpts) -> CliResult {
    let ds = Dataset::load(&opts.data)?;
    let hp = load_hyper(opts.hp.as_deref(), ds.d_in())?;
    let (train_set, test_set) = data::split(&ds, opts.test_fraction, opts.split_seed)?;
    let train_ex = train_set.examples();
    let test_ex = test_set.examples();
    if test_ex.is_empty() {
        return Err(Error::Schema("the test split has no labelled samples".into()).into());
    }
    let init = ModelParams::init(
        &hp,
        ds.num_classes(),
        seed::derive(opts.seed, Stream::ModelInit, 0),
    )?;
    let (model, stats) = fit::fit(
        &init,
        &train_ex,
        &hp,
        seed::derive(opts.seed, Stream::Shuffle, 0),
    )?;
    let train_acc = fit::accuracy(&model, &train_ex)?;
    let test_acc = fit::accuracy(&model, &test_ex)?;
    Checkpoint::new(hp, model, opts.seed, ds.classes().to_vec()).save(&opts.out)?;
    println!(
        "train samples {}  test samples {}",
        train_ex.len(),
        test_ex.len()
    );
    if let Some(loss) = stats.final_loss() {
        println!("final loss {}", sig6(loss));
    }
    println!("train accuracy {}", sig6(train_acc));
    println!("test accuracy {}", sig6(test_acc));
    println!("checkpoint {}", opts.out.display());
    Ok(())
}

pub fn experiment(
    data_path: &Path,
    al: &str,
    strategy: Option<Strategy>,
    seeds: Option<&str>,
    out: &Path,
) -> CliResult {
    let ds = Dataset::load(data_path)?;
    let mut config = load_al(al)?;
    if let Some(s) = strategy {
        config.strategy = s;
    }
    if let Some(spec) = seeds {
        config.seeds = parse_seeds(spec)?;
    }
    let curve = run_experiment_on(&config, &ds)?;
    curve.save(out)?;
    println!("strategy {}  seeds {}", curve.strategy, curve.seeds.len());
    println!(
        "{:>5} {:>8} {:>10} {:>10}",
        "round", "labeled", "acc_mean", "acc_std"
    );
    for p in &curve.aggregate {
        println!(
            "{:>5} {:>8} {:>10} {:>10}",
            p.round,
            p.labeled,
            sig6(p.acc_mean),
            sig6(p.acc_std)
        );
    }
    let (auc, auc_std) = mean_std(&curve.auc_per_seed());
    println!("auc {}  std {}", sig6(auc), sig6(auc_std));
    println!("wrote {}", out.display());
    Ok(())
}

pub struct ScoreOpts {
    pub ckpt: PathBuf,
    pub data: PathBuf,
    pub strategy: Strategy,
    pub out: PathBuf,
    pub labeled: Option<PathBuf>,
    pub seed: u64,
}

fn read_ids(path: &Path, ds: &Dataset) -> CliResult<HashSet<u64>> {
    read(path)?
        .split(|c: char| c.is_whitespace() || c == ',')
        .filter(|t| !t.is_empty())
        .map(|t| {
            let id: u64 = t
                .parse()
                .map_err(|_| Error::Schema(format!("{}: bad id {t:?}", path.display())))?;
            ds.get(id).map(|_| id).ok_or(Error::UnknownId(id).into())
        })
        .collect()
}

pub fn score(opts: &ScoreOpts) -> CliResult {
    let ckpt = Checkpoint::load(&opts.ckpt)?;
    let ds = Dataset::load(&opts.data)?;
    let (model, hp) = (&ckpt.model, &ckpt.hyper);
    let labeled = match &opts.labeled {
        Some(path) => read_ids(path, &ds)?,
        None if opts.strategy == Strategy::Coreset => {
            return Err(CliError::Usage("coreset scoring needs --labeled".into()))
        }
        None => HashSet::new(),
    };
    let pool: Vec<(u64, &[f64])> = ds
        .samples()
        .iter()
        .filter(|s| !labeled.contains(&s.id))
        .map(|s| (s.id, s.features.as_slice()))
        .collect();
    let ids: Vec<u64> = pool.iter().map(|&(id, _)| id).collect();

    let mut scores: Vec<ConfidenceScore> = match opts.strategy {
        Strategy::Random => acquisition::random_scores(&ids, opts.seed),
        Strategy::Coreset => {
            let labeled_x: Vec<&[f64]> = ds
                .samples()
                .iter()
                .filter(|s| labeled.contains(&s.id))
                .map(|s| s.features.as_slice())
                .collect();
            let pool_x: Vec<&[f64]> = pool.iter().map(|&(_, x)| x).collect();
            let labeled_emb = embed_all(model, &labeled_x)?;
            let pool_emb = ids
                .iter()
                .copied()
                .zip(embed_all(model, &pool_x)?)
                .collect::<Vec<_>>();
            acquisition::coreset_scores(&labeled_emb, &pool_emb)
        }
        s => acquisition::score_pool(s, model, hp, &pool)?,
    };
    scores.sort_by(rank_order);

    let file = fs::File::create(&opts.out).map_err(|source| CliError::Io {
        path: opts.out.clone(),
        source,
    })?;
    let mut wtr = csv::Writer::from_writer(file);
    let mut header = vec![
        "id".to_string(),
        "rank".into(),
        "score".into(),
        "predicted".into(),
    ];
    header.extend(ckpt.class_names.iter().map(|c| format!("prob_{c}")));
    wtr.write_record(&header).map_err(Error::from)?;
    for (rank, s) in scores.iter().enumerate() {
        let x = &ds
            .get(s.sample_id)
            .expect("scored ids come from the dataset")
            .features;
        let probs = model.probs(x, hp)?;
        let mut row = vec![
            s.sample_id.to_string(),
            rank.to_string(),
            s.score.to_string(),
            ckpt.class_names[argmax(&probs)].clone(),
        ];
        row.extend(probs.iter().map(f64::to_string));
        wtr.write_record(&row).map_err(Error::from)?;
    }
    wtr.flush().map_err(|source| CliError::Io {
        path: opts.out.clone(),
        source,
    })?;
    println!(
        "scored {} samples with {} ({} labeled excluded) into {}",
        scores.len(),
        opts.strategy,
        labeled.len(),
        opts.out.display()
    );
    Ok(())
}

pub fn serve(
    data_path: Option<PathBuf>,
    al: Option<&str>,
    listen: &str,
    state_dir: PathBuf,
) -> CliResult {
    let config = ServiceConfig {
        state_dir,
        dataset: data_path.map(|path| DatasetRef {
            path,
            classes: None,
        }),
        al: al.map(load_al).transpose()?,
    };
    if let Some(d) = &config.dataset {
        Dataset::load(&d.path)?;
    }
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env()
                .unwrap_or_else(|_| tracing_subscriber::EnvFilter::new("info")),
        )
        .with_writer(std::io::stderr)
        .init();
    let state = AppState::open(config).map_err(|e| CliError::Startup(e.to_string()))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| CliError::Startup(e.to_string()))?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind(listen)
            .await
            .map_err(|e| CliError::Startup(format!("bind {listen}: {e}")))?;
        let addr = listener
            .local_addr()
            .map_err(|e| CliError::Startup(e.to_string()))?;
        println!("listening on http://{addr}");
        println!("sessions restored {}", state.session_ids().len());
        let shutdown = async {
            let _ = tokio::signal::ctrl_c().await;
        };
        arcpool_service::serve(listener, state, shutdown)
            .await
            .map_err(|e| CliError::Startup(e.to_string()))
    })
}
