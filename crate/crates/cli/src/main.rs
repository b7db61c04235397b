//! `scenemem`: retrieval, scene synthesis, training, evaluation, local
//! sessions and the HTTP service.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use scenemem_core::io::{read_spcl, rgb_to_png, write_ply, write_sample, write_spcl};
use scenemem_core::retrieval::{retrieve_references, Candidate, RetrievalConfig, ViewCloud};
use scenemem_core::synth::{assemble_sample, generate_scene, out_and_back, SampleConfig, SceneParams};
use scenemem_core::{Intrinsics, Pose, Trajectory, Vec3};
use scenemem_eval::harness::{closed_loop_eval, long_horizon_eval, scene_density_sweep, DensityRow};
use scenemem_eval::report::{summarize, write_csv, write_json, write_records_csv};
use scenemem_eval::{MetricsRecord, Protocol, ToyConfig};
use scenemem_generator::{checkpoint, ConditionSet};
use scenemem_session::api::{ClipResponse, CreateRequest, EditRequest, EditResponse, SessionInfo, StepResponse};
use scenemem_session::bundle;
use scenemem_session::http::BUNDLE_EXT;
use scenemem_session::step::apply_edits;
use scenemem_session::{step, GeneratorFactory, GeneratorSpec, ServiceConfig, SessionState, StepRequest};

#[derive(Parser)]
#[command(
    name = "scenemem",
    version,
    about = "Spatial-memory-conditioned iterative clip generation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Selects reference frames for target views from cloud files.
    Retrieve(RetrieveArgs),
    /// Renders a synthetic out-and-back video and writes one training sample.
    Synth(SynthArgs),
    /// Trains the staged model on synthetic videos.
    Train(TrainArgs),
    /// Evaluation harnesses.
    #[command(subcommand)]
    Eval(EvalCommand),
    /// Sessions stored as bundles in a data directory.
    #[command(subcommand)]
    Session(SessionCommand),
    /// Runs the HTTP service.
    Serve(ServeArgs),
}

#[derive(Args)]
struct RetrieveArgs {
    /// JSON manifest; cloud paths are relative to its directory.
    manifest: PathBuf,
}

#[derive(Deserialize)]
struct RetrieveManifest {
    #[serde(default)]
    config: RetrievalConfig,
    targets: Vec<ManifestView>,
    candidates: Vec<ManifestCandidate>,
}

#[derive(Deserialize)]
struct ManifestView {
    cloud: PathBuf,
    pose: Pose,
}

#[derive(Deserialize)]
struct ManifestCandidate {
    id: u64,
    cloud: PathBuf,
    pose: Pose,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Scene parameters as JSON.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Sample assembly settings as JSON.
    #[arg(long)]
    sample: Option<PathBuf>,
    #[arg(long, default_value_t = 64)]
    width: usize,
    #[arg(long, default_value_t = 64)]
    height: usize,
    #[arg(long, default_value_t = std::f64::consts::FRAC_PI_2)]
    fov: f64,
    /// Starting heading in radians.
    #[arg(long, default_value_t = 0.0)]
    heading: f64,
    #[arg(long, default_value_t = 0.6)]
    lateral: f64,
    #[arg(long, default_value_t = 0.5)]
    yaw: f64,
}

#[derive(Args)]
struct TrainArgs {
    /// Toy configuration as JSON; defaults to the built-in one.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Print the default configuration and exit.
    #[arg(long)]
    print_config: bool,
    /// Checkpoint path.
    #[arg(long, required_unless_present = "print_config")]
    out: Option<PathBuf>,
    /// Per-stage loss curves are written to `<log>.<stage>.csv`.
    #[arg(long)]
    log: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Conditions {
    Both,
    Scene,
    Refs,
    None,
}

impl From<Conditions> for ConditionSet {
    fn from(c: Conditions) -> Self {
        match c {
            Conditions::Both => ConditionSet::ALL,
            Conditions::Scene => ConditionSet::SCENE_ONLY,
            Conditions::Refs => ConditionSet::REFS_ONLY,
            Conditions::None => ConditionSet::NONE,
        }
    }
}

#[derive(Args)]
struct EvalOptions {
    /// Protocol as JSON; defaults to the toy protocol.
    #[arg(long)]
    protocol: Option<PathBuf>,
    /// Generator spec as JSON; defaults to the ground-truth oracle.
    #[arg(long, conflicts_with = "checkpoint")]
    generator: Option<PathBuf>,
    /// Shorthand for a flow generator loaded from this checkpoint.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    #[arg(long, default_value_t = 8)]
    steps: usize,
    #[arg(long, value_enum, default_value = "both")]
    conditions: Conditions,
    /// Seeds `0..seeds`.
    #[arg(long, default_value_t = 20)]
    seeds: u64,
    /// Writes `<out>.csv` and `<out>.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum EvalCommand {
    ClosedLoop(EvalOptions),
    LongHorizon {
        #[command(flatten)]
        opts: EvalOptions,
        /// Total clips; must be even.
        #[arg(long, default_value_t = 6)]
        clips: usize,
    },
    Density {
        #[arg(long)]
        protocol: Option<PathBuf>,
        #[arg(long, default_value_t = 20)]
        seeds: u64,
        /// Ascending cube sides in meters.
        #[arg(long, value_delimiter = ',', default_value = "0.01,0.03,0.05,0.07")]
        sides: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args)]
struct Store {
    /// Directory of `<id>.smbn` bundles, shared with `serve`.
    #[arg(long, default_value = "data")]
    data_dir: PathBuf,
}

#[derive(Subcommand)]
enum SessionCommand {
    /// Creates a session from a create request and prints its info.
    Create {
        #[command(flatten)]
        store: Store,
        request: PathBuf,
        /// Session id; a random one when omitted.
        #[arg(long)]
        id: Option<String>,
    },
    /// Runs one step from a step request.
    Step {
        #[command(flatten)]
        store: Store,
        id: String,
        request: PathBuf,
        /// Generator spec as JSON; defaults to the oracle.
        #[arg(long)]
        generator: Option<PathBuf>,
        /// Also write the generated frames as PNG files here.
        #[arg(long)]
        frames: Option<PathBuf>,
    },
    /// Applies an edit request to the memory.
    Edit {
        #[command(flatten)]
        store: Store,
        id: String,
        request: PathBuf,
    },
    Info {
        #[command(flatten)]
        store: Store,
        id: String,
    },
    /// Writes the memory snapshot as SPCL, or PLY when the path ends in `.ply`.
    Memory {
        #[command(flatten)]
        store: Store,
        id: String,
        out: PathBuf,
    },
    /// Prints one clip as JSON with base64 PNG frames.
    Clip {
        #[command(flatten)]
        store: Store,
        id: String,
        k: usize,
    },
    /// Copies the session bundle to a file.
    Export {
        #[command(flatten)]
        store: Store,
        id: String,
        out: PathBuf,
    },
    /// Creates or replaces a session from a bundle file.
    Import {
        #[command(flatten)]
        store: Store,
        id: String,
        file: PathBuf,
    },
}

#[derive(Args)]
struct ServeArgs {
    /// Service configuration, TOML or JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    port: Option<u16>,
    #[arg(long)]
    data_dir: Option<PathBuf>,
    #[arg(long)]
    bind: Option<String>,
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_slice(&bytes).with_context(|| format!("parsing {}", path.display()))
}

fn print_json<T: Serialize>(value: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn retrieve(args: RetrieveArgs) -> Result<()> {
    let manifest: RetrieveManifest = read_json(&args.manifest)?;
    let base = args.manifest.parent().unwrap_or(Path::new("."));
    let load = |p: &Path| -> Result<_> {
        let path = base.join(p);
        let f = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        Ok(read_spcl(std::io::BufReader::new(f))?)
    };
    let targets = manifest
        .targets
        .iter()
        .map(|t| {
            Ok(ViewCloud {
                pose: t.pose,
                cloud: load(&t.cloud)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let candidates = manifest
        .candidates
        .iter()
        .map(|c| {
            Ok(Candidate {
                frame_id: c.id,
                view: ViewCloud {
                    pose: c.pose,
                    cloud: load(&c.cloud)?,
                },
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ids = retrieve_references(&targets, &candidates, &manifest.config)?;
    print_json(&serde_json::json!({ "references": ids }))
}

fn synth(args: SynthArgs) -> Result<()> {
    let params: SceneParams = args.scene.as_deref().map(read_json).transpose()?.unwrap_or_default();
    let sample_cfg: SampleConfig = args.sample.as_deref().map(read_json).transpose()?.unwrap_or_default();
    let spec = generate_scene(args.seed, &params)?;
    let intr = Intrinsics::from_fov(args.width, args.height, args.fov)?;
    let start = spec.camera_pose(args.heading, Vec3::zeros());
    let poses = out_and_back(
        &start,
        args.lateral,
        args.yaw,
        sample_cfg.target_len + sample_cfg.preceding_len,
    );
    let traj = Trajectory::from_poses(poses, intr)?;
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let sample = assemble_sample(&spec, &traj, &sample_cfg, &mut rng)?;
    write_sample(&args.out, &sample)?;
    eprintln!("wrote {} frames to {}", traj.len(), args.out.display());
    Ok(())
}

fn train(args: TrainArgs) -> Result<()> {
    let cfg: ToyConfig = args.config.as_deref().map(read_json).transpose()?.unwrap_or_default();
    if args.print_config {
        return print_json(&cfg);
    }
    let out = args.out.expect("clap requires --out");
    let (model, logs) = cfg.train(|stage, i, loss| {
        if i % 50 == 0 {
            log::info!("{stage:?} step {i} loss {loss:.4}");
        }
    })?;
    checkpoint::save(&model, serde_json::to_value(&cfg)?, &out)?;
    for l in &logs {
        let stage = l.stage.map(|s| format!("{s:?}").to_lowercase()).unwrap_or_default();
        eprintln!("{stage}: final loss {:.4}", l.tail_mean(50));
        if let Some(base) = &args.log {
            let path = PathBuf::from(format!("{}.{stage}.csv", base.display()));
            l.write_csv(std::fs::File::create(&path)?)?;
        }
    }
    eprintln!("saved {}", out.display());
    Ok(())
}

struct EvalSetup {
    protocol: Protocol,
    spec: GeneratorSpec,
    seeds: Vec<u64>,
}

fn eval_setup(opts: &EvalOptions) -> Result<EvalSetup> {
    let protocol = match &opts.protocol {
        Some(p) => read_json(p)?,
        None => ToyConfig::default().protocol,
    };
    let spec = match (&opts.generator, &opts.checkpoint) {
        (Some(p), _) => read_json(p)?,
        (None, Some(c)) => GeneratorSpec::Flow {
            checkpoint: c.clone(),
            steps: opts.steps,
            conditions: opts.conditions.into(),
        },
        (None, None) => GeneratorSpec::Oracle,
    };
    Ok(EvalSetup {
        protocol,
        spec,
        seeds: (0..opts.seeds).collect(),
    })
}

fn write_records(records: &[MetricsRecord], out: &Path) -> Result<()> {
    write_records_csv(records, out.with_extension("csv"))?;
    write_json(records, out.with_extension("json"))?;
    for s in summarize(records) {
        println!(
            "{} clips {}: psnr {:.2} ssim {:.3} match {:.3} (n = {})",
            s.variant, s.clip_count, s.psnr_c, s.ssim_c, s.match_acc, s.n
        );
    }
    Ok(())
}

fn eval(cmd: EvalCommand) -> Result<()> {
    let factory = GeneratorFactory::new();
    match cmd {
        EvalCommand::ClosedLoop(opts) => {
            let setup = eval_setup(&opts)?;
            let mut records = Vec::new();
            for &seed in &setup.seeds {
                let (state, traj) = setup.protocol.setup(seed)?;
                let g = factory.build(&setup.spec, &state)?;
                records.push(closed_loop_eval(&state, g.as_ref(), &traj, &setup.protocol.matching)?.0);
            }
            write_records(&records, &opts.out)
        }
        EvalCommand::LongHorizon { opts, clips } => {
            let setup = eval_setup(&opts)?;
            let mut records = Vec::new();
            for &seed in &setup.seeds {
                let (state, traj) = setup.protocol.setup(seed)?;
                let g = factory.build(&setup.spec, &state)?;
                records.extend(long_horizon_eval(
                    &state,
                    g.as_ref(),
                    &traj,
                    clips,
                    &setup.protocol.matching,
                )?);
            }
            write_records(&records, &opts.out)
        }
        EvalCommand::Density {
            protocol,
            seeds,
            sides,
            out,
        } => {
            let protocol: Protocol = match protocol {
                Some(p) => read_json(&p)?,
                None => ToyConfig::default().protocol,
            };
            #[derive(Serialize)]
            struct Row {
                seed: u64,
                #[serde(flatten)]
                row: DensityRow,
            }
            let mut rows = Vec::new();
            for seed in 0..seeds {
                rows.extend(
                    scene_density_sweep(&protocol, seed, &sides)?
                        .into_iter()
                        .map(|row| Row { seed, row }),
                );
            }
            write_json(&rows, out.with_extension("json"))?;
            let flat: Vec<(u64, f64, usize, f64)> = rows
                .iter()
                .map(|r| (r.seed, r.row.cube_side, r.row.points, r.row.psnr))
                .collect();
            write_csv(&flat, out.with_extension("csv"))?;
            for &d in &sides {
                let sel: Vec<&Row> = rows.iter().filter(|r| r.row.cube_side == d).collect();
                let mean = sel.iter().map(|r| r.row.psnr).sum::<f64>() / sel.len().max(1) as f64;
                println!("cube {d}: mean psnr {mean:.2} over {} scenes", sel.len());
            }
            Ok(())
        }
    }
}

fn bundle_path(store: &Store, id: &str) -> Result<PathBuf> {
    if id.is_empty() || !id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
        bail!("session ids are alphanumeric, '-' or '_'");
    }
    Ok(store.data_dir.join(format!("{id}.{BUNDLE_EXT}")))
}

fn load_session(store: &Store, id: &str) -> Result<SessionState> {
    let path = bundle_path(store, id)?;
    if !path.exists() {
        bail!("no session {id} in {}", store.data_dir.display());
    }
    Ok(bundle::load(&path)?)
}

fn save_session(store: &Store, id: &str, state: &SessionState) -> Result<()> {
    std::fs::create_dir_all(&store.data_dir)?;
    let path = bundle_path(store, id)?;
    let tmp = path.with_extension(format!("{BUNDLE_EXT}.tmp"));
    bundle::save(state, &tmp)?;
    std::fs::rename(&tmp, &path)?;
    Ok(())
}

fn session(cmd: SessionCommand) -> Result<()> {
    match cmd {
        SessionCommand::Create { store, request, id } => {
            let req: CreateRequest = read_json(&request)?;
            let generator = req.generator.unwrap_or_default();
            let state = SessionState::create(req.init.into_init()?, req.config.unwrap_or_default())?;
            let id = id.unwrap_or_else(|| format!("{:016x}", rand::random::<u64>()));
            save_session(&store, &id, &state)?;
            print_json(&SessionInfo::new(&id, &state, &generator))
        }
        SessionCommand::Step {
            store,
            id,
            request,
            generator,
            frames,
        } => {
            let state = load_session(&store, &id)?;
            let req: StepRequest = read_json(&request)?;
            let spec: GeneratorSpec = generator.as_deref().map(read_json).transpose()?.unwrap_or_default();
            let g = GeneratorFactory::new().build(&spec, &state)?;
            let (next, out) = step(&state, &req, g.as_ref())?;
            save_session(&store, &id, &next)?;
            if let Some(dir) = frames {
                std::fs::create_dir_all(&dir)?;
                for (i, f) in out.frames.iter().enumerate() {
                    std::fs::write(dir.join(format!("clip{:04}_{i:04}.png", out.clip)), rgb_to_png(f)?)?;
                }
            }
            print_json(&StepResponse::new(req.trajectory, &out, &next)?)
        }
        SessionCommand::Edit { store, id, request } => {
            let state = load_session(&store, &id)?;
            let req: EditRequest = read_json(&request)?;
            let (next, touched) = apply_edits(&state, &req.edits)?;
            save_session(&store, &id, &next)?;
            print_json(&EditResponse {
                touched,
                cells: next.memory.len(),
                checksum: next.checksum(),
            })
        }
        SessionCommand::Info { store, id } => {
            let state = load_session(&store, &id)?;
            print_json(&SessionInfo::new(&id, &state, &GeneratorSpec::default()))
        }
        SessionCommand::Memory { store, id, out } => {
            let cloud = load_session(&store, &id)?.memory.snapshot();
            let w = std::io::BufWriter::new(std::fs::File::create(&out)?);
            if out.extension().is_some_and(|e| e == "ply") {
                write_ply(&cloud, w)?;
            } else {
                write_spcl(&cloud, w)?;
            }
            eprintln!("wrote {} points to {}", cloud.len(), out.display());
            Ok(())
        }
        SessionCommand::Clip { store, id, k } => {
            let state = load_session(&store, &id)?;
            match ClipResponse::new(&state, k)? {
                Some(c) => print_json(&c),
                None => bail!("session {id} has no clip {k}"),
            }
        }
        SessionCommand::Export { store, id, out } => {
            let state = load_session(&store, &id)?;
            std::fs::write(&out, bundle::export(&state))?;
            eprintln!("checksum {}", state.checksum());
            Ok(())
        }
        SessionCommand::Import { store, id, file } => {
            let state = bundle::import(&std::fs::read(&file)?)?;
            save_session(&store, &id, &state)?;
            print_json(&SessionInfo::new(&id, &state, &GeneratorSpec::default()))
        }
    }
}

fn serve(args: ServeArgs) -> Result<()> {
    let cfg = match &args.config {
        Some(p) => ServiceConfig::from_file(p)?,
        None => ServiceConfig::default(),
    };
    let mut cfg = cfg.with_env(|k| std::env::var(k).ok())?;
    if let Some(p) = args.port {
        cfg.port = p;
    }
    if let Some(d) = args.data_dir {
        cfg.data_dir = d;
    }
    if let Some(b) = args.bind {
        cfg.bind = b;
    }
    let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    rt.block_on(scenemem_session::http::serve(cfg))?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Retrieve(a) => retrieve(a),
        Command::Synth(a) => synth(a),
        Command::Train(a) => train(a),
        Command::Eval(c) => eval(c),
        Command::Session(c) => session(c),
        Command::Serve(a) => serve(a),
    }
}
