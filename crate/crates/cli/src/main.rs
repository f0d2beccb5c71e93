use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pitchflow::config::{Config, Temperatures, Variant};
use pitchflow::eval::{distribution_distance, diversity_from_renderings, gnuplot_data, logf0_histogram, render_grid, LogF0Histogram};
use pitchflow::features::tokens::ALPHABET;
use pitchflow::features::{tokenize, Manifest, PitchContour, SpeakerVector, TokenSequence};
use pitchflow::model::{ArrayContainer, Checkpoint};
use pitchflow::synthcorpus::{generate_corpus, load_truth};
use pitchflow::train::{load_examples, Trainer};
use pitchflow::{rng_from_seed, Error};

#[derive(Parser)]
#[command(name = "pitchflow", version, about = "Flow TTS with stochastic duration and pitch prediction")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// TOML configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the seed of the command's random generator.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Render the synthetic corpus described by the `[corpus]` section.
    GenCorpus,
    /// Train on `data.train_manifest`, keeping the best-validation checkpoint.
    Train {
        /// Continue from this checkpoint's step and optimizer state.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Synthesize one utterance.
    Synth {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        speaker: String,
        #[command(flatten)]
        temps: TempFlags,
    },
    /// Pitch histograms, distances to the corpus and diversity per checkpoint.
    Eval {
        #[arg(long = "checkpoint", required = true)]
        checkpoints: Vec<PathBuf>,
        #[command(flatten)]
        temps: TempFlags,
    },
}

#[derive(Args)]
struct TempFlags {
    #[arg(long)]
    t_prior: Option<f64>,
    #[arg(long)]
    t_dur: Option<f64>,
    #[arg(long)]
    t_pitch: Option<f64>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) => Failure::Usage(e.to_string()),
            _ => Failure::Runtime(e.to_string()),
        }
    }
}

type CmdResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
    }
}

fn run(cli: Cli) -> CmdResult {
    let Some(path) = &cli.common.config else {
        return Err(Failure::Usage("--config is required".into()));
    };
    let config = Config::load(path)?;
    let c = &cli.common;
    match cli.command {
        Command::GenCorpus => gen_corpus(config, c),
        Command::Train { resume } => train(config, c, resume.as_deref()),
        Command::Synth {
            checkpoint,
            text,
            speaker,
            temps,
        } => synth(&config, c, &checkpoint, &text, &speaker, &temps),
        Command::Eval { checkpoints, temps } => eval(&config, c, &checkpoints, &temps),
    }
}

fn out_dir(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> CmdResult {
    std::fs::write(path, contents).map_err(|e| Failure::Runtime(format!("{}: {e}", path.display())))
}

fn gen_corpus(config: Config, common: &Common) -> CmdResult {
    let Some(mut spec) = config.corpus else {
        return Err(Failure::Usage("config has no [corpus] section".into()));
    };
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    let out = out_dir(common, "corpus");
    let manifest = generate_corpus(&spec, &out)?;
    eprintln!("{} utterances, {} speakers", manifest.records.len(), manifest.speakers().len());
    println!("{}", out.join("manifest.jsonl").display());
    Ok(())
}

fn train(mut config: Config, common: &Common, resume: Option<&Path>) -> CmdResult {
    if let Some(s) = common.seed {
        config.training.seed = s;
    }
    let Some(train_path) = config.data.train_manifest.clone() else {
        return Err(Failure::Usage("data.train_manifest is not set".into()));
    };
    let mut train = load_examples(&Manifest::load(&train_path)?)?;
    let val = match &config.data.val_manifest {
        Some(p) => load_examples(&Manifest::load(p)?)?,
        None => {
            let keep = train.len().saturating_sub(config.data.val_items);
            if keep == 0 {
                return Err(Failure::Usage(format!(
                    "data.val_items = {} leaves no training items out of {}",
                    config.data.val_items,
                    train.len()
                )));
            }
            train.split_off(keep)
        }
    };
    let mut trainer = match resume {
        Some(p) => Trainer::resume(&Checkpoint::load(p)?, Some(&config))?,
        None => {
            let init: Vec<_> = train.iter().take(config.training.batch_size).collect();
            Trainer::new(&config, &init)?
        }
    };
    let out = out_dir(common, "run");
    eprintln!(
        "training {} from step {} on {} items ({} validation)",
        config.model.variant,
        trainer.step,
        train.len(),
        val.len()
    );
    let summary = trainer.fit(&train, &val, Some(&out), |row| {
        let val = row.val.map_or(String::new(), |v| format!(" val {:.4}", v.total));
        eprintln!("step {:>6} lr {:.2e} loss {:.4}{val}", row.step, row.lr, row.train.total);
    })?;
    let best = summary.best_checkpoint.unwrap_or_else(|| out.join("best.ckpt"));
    println!("{}", best.display());
    Ok(())
}

fn temperatures(config: &Config, variant: Variant, flags: &TempFlags) -> CmdResult<Temperatures> {
    if variant == Variant::Baseline && flags.t_pitch.is_some() {
        return Err(Failure::Usage("--t-pitch is not allowed for the baseline variant (no pitch predictor)".into()));
    }
    let base = config.inference.temperatures();
    let t = Temperatures {
        prior: flags.t_prior.unwrap_or(base.prior),
        duration: flags.t_dur.unwrap_or(base.duration),
        pitch: flags.t_pitch.unwrap_or(base.pitch),
    };
    t.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(t)
}

/// Speaker vectors by id: the training manifest first, then the corpus section.
fn known_speakers(config: &Config) -> CmdResult<BTreeMap<String, SpeakerVector>> {
    let mut out = BTreeMap::new();
    if let Some(p) = &config.data.train_manifest {
        let m = Manifest::load(p)?;
        for r in &m.records {
            if !out.contains_key(&r.speaker) {
                out.insert(r.speaker.clone(), r.speaker_vector(&m.root)?);
            }
        }
    }
    if let Some(c) = &config.corpus {
        for s in &c.speakers {
            out.entry(s.id.clone()).or_insert_with(|| s.vector());
        }
    }
    Ok(out)
}

fn lookup_speaker(known: &BTreeMap<String, SpeakerVector>, name: &str) -> CmdResult<SpeakerVector> {
    known.get(name).cloned().ok_or_else(|| {
        Error::UnknownSpeaker {
            name: name.to_string(),
            known: if known.is_empty() { "(none)".into() } else { known.keys().cloned().collect::<Vec<_>>().join(", ") },
        }
        .into()
    })
}

/// Loads a checkpoint whose variant must match the config's.
fn load_checkpoint(config: &Config, path: &Path, check_variant: bool) -> CmdResult<Checkpoint> {
    if !path.exists() {
        return Err(Failure::Runtime(format!("checkpoint {} does not exist", path.display())));
    }
    let ck = Checkpoint::load(path)?;
    if check_variant && ck.config.model.variant != config.model.variant {
        return Err(Failure::Runtime(format!(
            "checkpoint {} is a {} model but the config asks for {}",
            path.display(),
            ck.config.model.variant,
            config.model.variant
        )));
    }
    Ok(ck)
}

fn contour_table(c: &PitchContour) -> String {
    let mut s = String::from("frame\tlog_f0\tf0_hz\tvoiced\n");
    for (t, (&v, &voiced)) in c.log_f0.iter().zip(&c.voiced).enumerate() {
        let hz = if voiced { (v as f64).exp() } else { 0.0 };
        writeln!(s, "{t}\t{v:.6}\t{hz:.3}\t{}", u8::from(voiced)).unwrap();
    }
    s
}

fn token_label(id: usize) -> String {
    match id {
        0 => "<blank>".into(),
        1 => "<space>".into(),
        _ => ALPHABET.chars().nth(id - 1).map_or_else(|| format!("#{id}"), String::from),
    }
}

fn duration_table(tokens: &TokenSequence, durations: &[usize]) -> String {
    let mut s = String::from("token\tid\tlabel\tframes\n");
    for (i, (&id, &d)) in tokens.ids.iter().zip(durations).enumerate() {
        writeln!(s, "{i}\t{id}\t{}\t{d}", token_label(id)).unwrap();
    }
    s
}

fn synth(config: &Config, common: &Common, checkpoint: &Path, text: &str, speaker: &str, flags: &TempFlags) -> CmdResult {
    let ck = load_checkpoint(config, checkpoint, true)?;
    let temps = temperatures(config, ck.config.model.variant, flags)?;
    let spk = lookup_speaker(&known_speakers(config)?, speaker)?;
    let tokens = tokenize(text)?;
    let (model, store) = ck.restore()?;
    let seed = common.seed.unwrap_or(0);
    let syn = model.synthesize(&store, &tokens, &spk, temps, &mut rng_from_seed(seed))?;

    let out = out_dir(common, "synth");
    std::fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let mut meta = BTreeMap::new();
    meta.insert("text".to_string(), text.to_string());
    meta.insert("speaker".to_string(), speaker.to_string());
    meta.insert("seed".to_string(), seed.to_string());
    meta.insert("variant".to_string(), model.variant().name().to_string());
    meta.insert("temperatures".to_string(), format!("{} {} {}", temps.prior, temps.duration, temps.pitch));
    let container = ArrayContainer {
        config: ck.config.to_toml(),
        meta,
        arrays: vec![("mel".to_string(), syn.mel.values.clone())],
    };
    container.save(out.join("mel.pfac"))?;
    write(&out.join("contour.tsv"), contour_table(&syn.contour))?;
    write(&out.join("durations.tsv"), duration_table(&tokens, &syn.durations))?;
    eprintln!("{} frames, {} voiced", syn.mel.frames(), syn.contour.voiced_count());
    println!("{}", out.display());
    Ok(())
}

fn eval(config: &Config, common: &Common, checkpoints: &[PathBuf], flags: &TempFlags) -> CmdResult {
    let loaded = checkpoints
        .iter()
        .map(|p| load_checkpoint(config, p, false))
        .collect::<CmdResult<Vec<_>>>()?;
    if config.eval.texts.is_empty() {
        return Err(Failure::Usage("eval.texts is empty".into()));
    }
    let Some(truth_path) = &config.data.truth else {
        return Err(Failure::Usage("data.truth is not set".into()));
    };
    let truth = load_truth(truth_path)?;
    let known = known_speakers(config)?;
    let speaker_ids: Vec<String> = if config.eval.speakers.is_empty() {
        let mut ids: Vec<String> = Vec::new();
        for r in &truth {
            if !ids.contains(&r.speaker) {
                ids.push(r.speaker.clone());
            }
        }
        ids
    } else {
        config.eval.speakers.clone()
    };
    let speakers = speaker_ids
        .iter()
        .map(|s| Ok((s.clone(), lookup_speaker(&known, s)?)))
        .collect::<CmdResult<Vec<_>>>()?;
    let texts = config
        .eval
        .texts
        .iter()
        .map(|t| Ok((t.clone(), tokenize(t)?)))
        .collect::<CmdResult<Vec<_>>>()?;
    let seeds: Vec<u64> = match common.seed {
        Some(s) => (s..s + config.eval.seeds.len().max(3) as u64).collect(),
        None if config.eval.seeds.is_empty() => vec![1, 2, 3],
        None => config.eval.seeds.clone(),
    };

    let out = out_dir(common, "eval");
    std::fs::create_dir_all(&out).map_err(|e| Failure::Runtime(format!("{}: {e}", out.display())))?;
    let truth_hists = speaker_ids
        .iter()
        .map(|s| {
            let contours: Vec<PitchContour> =
                truth.iter().filter(|r| &r.speaker == s).map(|r| PitchContour::from_log_f0(&r.log_f0)).collect();
            logf0_histogram(&contours)
                .map(|h| h.labeled(s, "truth"))
                .map_err(|e| Failure::Runtime(format!("truth for speaker {s}: {e}")))
        })
        .collect::<CmdResult<Vec<_>>>()?;
    let mut all_hists: Vec<LogF0Histogram> = truth_hists.clone();
    for h in &truth_hists {
        write(&out.join(format!("hist_truth_{}.csv", h.speaker)), h.to_csv())?;
    }

    let mut w1 = String::from("system\tcheckpoint\tspeaker\tw1\n");
    for (ck, path) in loaded.iter().zip(checkpoints) {
        let variant = ck.config.model.variant;
        let temps = temperatures(config, variant, flags)?;
        let (model, store) = ck.restore()?;
        let renders = render_grid(&model, &store, &texts, &speakers, &seeds, temps)?;
        let system = variant.name();
        for (s, th) in speaker_ids.iter().zip(&truth_hists) {
            let contours: Vec<PitchContour> =
                renders.iter().filter(|r| &r.speaker == s).map(|r| r.synthesis.contour.clone()).collect();
            let d = match logf0_histogram(&contours) {
                Ok(h) => {
                    let h = h.labeled(s, system);
                    write(&out.join(format!("hist_{system}_{s}.csv")), h.to_csv())?;
                    let d = distribution_distance(&h, th)?;
                    all_hists.push(h);
                    format!("{d:.6}")
                }
                // nothing voiced to compare
                Err(_) => "inf".to_string(),
            };
            writeln!(w1, "{system}\t{}\t{s}\t{d}", path.display()).unwrap();
        }
        let div = diversity_from_renderings(system, &renders, temps)?;
        write(&out.join(format!("diversity_{system}.csv")), div.to_csv())?;
        eprintln!("{system}: diversity {:.4}", div.mean_std());
    }
    write(&out.join("w1.tsv"), &w1)?;
    write(&out.join("logf0_hist.dat"), gnuplot_data(&all_hists))?;
    print!("{w1}");
    Ok(())
}
