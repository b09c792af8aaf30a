use std::path::{Path, PathBuf};
use std::process::ExitCode;

use biaxial::cache::read_cache;
use biaxial::config::{CONFIG_ENV, KEYS};
use biaxial::emit::emit_midi;
use biaxial::metrics::MetricLog;
use biaxial::preprocess::{load_corpus, load_file, write_corpus, FileOutcome};
use biaxial::{train, Checkpoint, Error, RunConfig, RunManifest};
use biaxial_core::gradcheck::{check_lstm_stack, check_model, GradcheckOptions, GradcheckReport};
use biaxial_core::trainer::evaluate;
use biaxial_core::{generate, GenerationConfig, QuantizeOptions, Trainer};
use clap::{Arg, ArgMatches, Args, Command, FromArgMatches, Parser, Subcommand};

/// Exit status for each failure class.
mod code {
    pub const FAILURE: u8 = 1;
    pub const NO_INPUT: u8 = 2;
    pub const NON_FINITE: u8 = 3;
    pub const MISMATCH: u8 = 4;
    pub const BAD_PRIMER: u8 = 5;
    pub const GRADCHECK: u8 = 6;
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn new(code: u8, message: impl std::fmt::Display) -> Self {
        Failure {
            code,
            message: message.to_string(),
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Training { .. } => code::NON_FINITE,
            Error::Core(biaxial_core::Error::ShapeMismatch(_)) => code::MISMATCH,
            _ => code::FAILURE,
        };
        Failure::new(code, e)
    }
}

impl From<biaxial_core::Error> for Failure {
    fn from(e: biaxial_core::Error) -> Self {
        Error::from(e).into()
    }
}

type CmdResult = Result<(), Failure>;

#[derive(Parser)]
#[command(
    name = "biaxial",
    version,
    about = "Train and sample a bi-axial LSTM model of polyphonic music"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Quantize a directory of MIDI files into a note-state cache.
    Preprocess(PreprocessArgs),
    /// Train a model on a cache, writing a checkpoint, manifest and metric log.
    Train(TrainArgs),
    /// Report per-step log-likelihood of a checkpoint on a cache.
    Eval(EvalArgs),
    /// Sample a new piece from a checkpoint.
    Generate(GenerateArgs),
    /// Compare analytic and finite-difference gradients of a tiny model.
    Gradcheck(GradcheckArgs),
}

#[derive(Args)]
struct PreprocessArgs {
    /// Directory searched recursively for .mid/.midi files.
    input: PathBuf,
    /// Cache file to write; the source list goes to <cache>.sources.
    output: PathBuf,
    #[arg(long, default_value_t = 21)]
    low_note: u8,
    #[arg(long, default_value_t = 88)]
    n_notes: usize,
    #[arg(long, default_value_t = 16)]
    steps_per_measure: usize,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    cache: PathBuf,
    /// Checkpoint path; written at the end and every checkpoint_every iterations.
    #[arg(long)]
    checkpoint: PathBuf,
    /// Key = value config file.
    #[arg(long, env = CONFIG_ENV)]
    config: Option<PathBuf>,
    /// Continue from the existing checkpoint instead of starting fresh.
    #[arg(long)]
    resume: bool,
    /// Metric log, appended to (default <checkpoint>.log).
    #[arg(long)]
    log: Option<PathBuf>,
    /// Write 0 in the seconds column so logs are reproducible.
    #[arg(long)]
    no_wall_clock: bool,
    #[command(flatten)]
    overrides: Overrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    cache: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long, default_value_t = 128)]
    seq_len: usize,
    /// Number of tilings, pass k starting at measure k.
    #[arg(long, default_value_t = 1)]
    passes: usize,
    /// Also report figures scaled by N_REF / n_notes.
    #[arg(long, value_name = "N_REF")]
    rescale: Option<usize>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// MIDI file to write.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 128, value_parser = clap::value_parser!(u64).range(1..))]
    steps: u64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// MIDI file whose quantized content conditions the time axis.
    #[arg(long)]
    primer: Option<PathBuf>,
    #[arg(long, default_value_t = 1.0)]
    temperature: f64,
    #[arg(long, default_value_t = 120, value_parser = clap::value_parser!(u64).range(1..))]
    ticks_per_step: u64,
    /// Write per-cell play and articulation probabilities as CSV.
    #[arg(long)]
    probabilities: Option<PathBuf>,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 6)]
    n_notes: usize,
    #[arg(long, default_value_t = 5)]
    n_steps: usize,
    #[arg(long, default_value_t = 2)]
    batch: usize,
    #[arg(long, value_delimiter = ',', default_value = "4")]
    time_layers: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "3")]
    note_layers: Vec<usize>,
    #[arg(long, default_value_t = 1e-5)]
    epsilon: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    #[arg(long, hide = true)]
    corrupt_backward: bool,
}

/// One optional `--<key>` flag per config key, applied over the file.
#[derive(Default)]
struct Overrides(Vec<(&'static str, String)>);

impl FromArgMatches for Overrides {
    fn from_arg_matches(m: &ArgMatches) -> Result<Self, clap::Error> {
        let mut o = Overrides::default();
        o.update_from_arg_matches(m)?;
        Ok(o)
    }

    fn update_from_arg_matches(&mut self, m: &ArgMatches) -> Result<(), clap::Error> {
        for key in KEYS {
            if let Some(v) = m.get_one::<String>(key) {
                self.0.push((key, v.clone()));
            }
        }
        Ok(())
    }
}

impl Args for Overrides {
    fn augment_args(cmd: Command) -> Command {
        KEYS.iter().fold(cmd, |c, key| {
            c.arg(
                Arg::new(*key)
                    .long(key.replace('_', "-"))
                    .value_name("VALUE")
                    .help(format!("Override config key {key}"))
                    .help_heading("Config overrides"),
            )
        })
    }

    fn augment_args_for_update(cmd: Command) -> Command {
        Self::augment_args(cmd)
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Cmd::Preprocess(a) => preprocess(a),
        Cmd::Train(a) => train_cmd(a),
        Cmd::Eval(a) => eval(a),
        Cmd::Generate(a) => generate_cmd(a),
        Cmd::Gradcheck(a) => gradcheck(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn preprocess(a: PreprocessArgs) -> CmdResult {
    let opts = QuantizeOptions {
        steps_per_measure: a.steps_per_measure,
        low_note: a.low_note,
        n_notes: a.n_notes,
    };
    let corpus = load_corpus(&a.input, &opts)?;
    for o in &corpus.outcomes {
        match o {
            FileOutcome::Loaded {
                path,
                kept,
                dropped,
                steps,
            } => {
                println!(
                    "{}: notes={kept} dropped={dropped} steps={steps}",
                    path.display()
                )
            }
            FileOutcome::Failed { path, error } => {
                eprintln!("warning: skipping {}: {error}", path.display())
            }
        }
    }
    if corpus.matrices.is_empty() {
        return Err(Failure::new(
            code::NO_INPUT,
            format!("no readable MIDI files under {}", a.input.display()),
        ));
    }
    write_corpus(&a.output, &corpus)?;
    println!(
        "wrote {} matrices to {}",
        corpus.matrices.len(),
        a.output.display()
    );
    Ok(())
}

fn resolve_config(a: &TrainArgs) -> Result<RunConfig, Failure> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for (key, value) in &a.overrides.0 {
        cfg.set(key, value).map_err(|d| {
            Failure::new(code::FAILURE, format!("--{}: {d}", key.replace('_', "-")))
        })?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint, Failure> {
    Checkpoint::load(path)
        .map_err(|e| Failure::new(code::MISMATCH, format!("cannot load checkpoint: {e}")))
}

fn train_cmd(a: TrainArgs) -> CmdResult {
    let cfg = resolve_config(&a)?;
    let corpus = read_cache(&a.cache)?;
    let mut trainer = if a.resume {
        let ck = load_checkpoint(&a.checkpoint)?;
        if ck.model_cfg != cfg.model {
            return Err(Failure::new(
                code::MISMATCH,
                "model configuration differs from the checkpoint being resumed",
            ));
        }
        let mut t = ck.into_trainer();
        t.opt_cfg = cfg.optimizer;
        t
    } else {
        Trainer::new(cfg.model.clone(), cfg.optimizer, cfg.schedule.seed)?
    };
    let manifest = RunManifest::for_cache(&a.cache, &cfg)?;
    let log_path = a.log.clone().unwrap_or_else(|| {
        let mut s = a.checkpoint.as_os_str().to_owned();
        s.push(".log");
        PathBuf::from(s)
    });
    let mut log = MetricLog::append(&log_path, !a.no_wall_clock)?;
    let start = trainer.iteration;
    let outputs = train::Outputs {
        checkpoint: &a.checkpoint,
        manifest: Some(&manifest),
        log: Some(&mut log),
    };
    let logged = train::run(&mut trainer, &corpus, &cfg.schedule, outputs)?;
    match logged.last() {
        Some(m) => println!(
            "trained iterations {}..{} loss={:.6} per_step_ll={:.4}",
            start + 1,
            trainer.iteration,
            m.loss,
            m.per_step_ll
        ),
        None => println!("trained iterations {}..{}", start + 1, trainer.iteration),
    }
    println!("checkpoint written to {}", a.checkpoint.display());
    Ok(())
}

fn eval(a: EvalArgs) -> CmdResult {
    let ck = load_checkpoint(&a.checkpoint)?;
    let corpus = read_cache(&a.cache)?;
    for m in &corpus {
        ck.model_cfg.check_matrix(m).map_err(|e| {
            Failure::new(
                code::MISMATCH,
                format!("cache does not fit checkpoint: {e}"),
            )
        })?;
    }
    let report = evaluate(&ck.params, &ck.model_cfg, &corpus, a.seq_len, a.passes)?;
    let line = |tag: &str, r: &biaxial_core::EvalReport| {
        println!(
            "{tag}windows={} mean={:.4} best={:.4} median={:.4}",
            r.window_ll.len(),
            r.mean,
            r.best,
            r.median
        )
    };
    line("", &report);
    if let Some(n_ref) = a.rescale {
        line(
            &format!("rescaled({n_ref}/{}) ", ck.model_cfg.n_notes),
            &report.rescaled(n_ref, ck.model_cfg.n_notes),
        );
    }
    Ok(())
}

fn generate_cmd(a: GenerateArgs) -> CmdResult {
    let ck = load_checkpoint(&a.checkpoint)?;
    let cfg = &ck.model_cfg;
    let primer = match &a.primer {
        Some(p) => {
            let opts = QuantizeOptions {
                steps_per_measure: cfg.kernel.steps_per_measure,
                low_note: cfg.low_note,
                n_notes: cfg.n_notes,
            };
            let (m, ..) = load_file(p, &opts).map_err(|e| {
                Failure::new(code::BAD_PRIMER, format!("primer {}: {e}", p.display()))
            })?;
            Some(m)
        }
        None => None,
    };
    let gen = GenerationConfig {
        n_steps: a.steps as usize,
        seed: a.seed,
        primer,
        temperature: a.temperature,
    };
    let trace = generate(&ck.params, cfg, &gen).map_err(|e| match e {
        biaxial_core::Error::InvalidPrimer(_) => Failure::new(code::BAD_PRIMER, e),
        e => Failure::from(e),
    })?;
    let bytes = emit_midi(
        &trace.matrix,
        a.ticks_per_step,
        cfg.kernel.steps_per_measure,
    )?;
    std::fs::write(&a.out, &bytes).map_err(|e| Error::io(&a.out, e))?;
    if let Some(p) = &a.probabilities {
        let mut csv = String::from("note,step,pitch,play_prob,articulate_prob\n");
        let steps = trace.matrix.n_steps();
        for n in 0..trace.matrix.n_notes() {
            for t in 0..steps {
                let i = n * steps + t;
                csv.push_str(&format!(
                    "{n},{t},{},{:?},{:?}\n",
                    trace.matrix.pitch(n),
                    trace.play_prob[i],
                    trace.articulate_prob[i]
                ));
            }
        }
        std::fs::write(p, csv).map_err(|e| Error::io(p, e))?;
    }
    let notes = trace.matrix.to_events(a.ticks_per_step).len();
    println!(
        "steps={} notes={notes} seed={} out={}",
        trace.matrix.n_steps(),
        a.seed,
        a.out.display()
    );
    Ok(())
}

fn print_report(r: &GradcheckReport) {
    for b in &r.blocks {
        println!(
            "{:<12} max_rel_error={:.3e} entries={}",
            b.name, b.max_rel_error, b.entries
        );
    }
}

fn gradcheck(a: GradcheckArgs) -> CmdResult {
    let opts = GradcheckOptions {
        n_notes: a.n_notes,
        n_steps: a.n_steps,
        batch: a.batch,
        time_layers: a.time_layers.clone(),
        note_layers: a.note_layers.clone(),
        epsilon: a.epsilon,
        seed: a.seed,
        corrupt_backward: a.corrupt_backward,
        ..GradcheckOptions::default()
    };
    if a.n_notes == 0
        || a.n_steps < 2
        || a.batch == 0
        || a.time_layers.contains(&0)
        || a.note_layers.contains(&0)
    {
        return Err(Failure::new(
            code::FAILURE,
            "gradcheck sizes must be positive with at least two steps",
        ));
    }
    let model = check_model(&opts);
    println!("model:");
    print_report(&model);
    let sizes: Vec<usize> = a
        .time_layers
        .iter()
        .chain(&a.note_layers)
        .copied()
        .collect();
    let stack = check_lstm_stack(3, &sizes, a.n_steps, a.batch, &opts);
    println!("lstm stack:");
    print_report(&stack);
    let worst = model.max_rel_error().max(stack.max_rel_error());
    if model.passed(a.tolerance) && stack.passed(a.tolerance) {
        println!(
            "PASS max_rel_error={worst:.3e} tolerance={:.1e}",
            a.tolerance
        );
        Ok(())
    } else {
        println!(
            "FAIL max_rel_error={worst:.3e} tolerance={:.1e}",
            a.tolerance
        );
        Err(Failure::new(code::GRADCHECK, "gradient check failed"))
    }
}
