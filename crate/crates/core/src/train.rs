//! Training loop: seeded mini-batches, Adam with warm-up and cosine decay,
//! periodic validation and best-checkpoint selection.

use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::index::sample;

use crate::config::Config;
use crate::error::{Error, Result};
use crate::features::{estimate_f0, load_wav, mel_spectrogram, tokenize, Manifest, SpeakerVector};
use crate::model::{Alignment, Checkpoint, Example, LossReport, Model};
use crate::ndmath::{Adam, Graph, LrSchedule, ParamStore};
use crate::synthcorpus::{utterance_seed, Corpus};
use crate::Rng;

/// Features for one waveform: Mel, YIN contour and tokens.
pub fn example_from_samples(text: &str, samples: &[f32], speaker: SpeakerVector) -> Result<Example> {
    let mel = mel_spectrogram(samples)?;
    let contour = estimate_f0(samples);
    Example::new(tokenize(text)?, mel, contour, speaker)
}

/// Reads every manifest item: Mel from the WAV, YIN contour, tokens and the
/// speaker vector.
pub fn load_examples(manifest: &Manifest) -> Result<Vec<Example>> {
    parallel_map(&manifest.records, |rec| {
        let (samples, _) = load_wav(rec.audio_path(&manifest.root))?;
        example_from_samples(&rec.text, &samples, rec.speaker_vector(&manifest.root)?)
    })
}

/// Examples for an in-memory corpus, in corpus order.
pub fn corpus_examples(corpus: &Corpus) -> Result<Vec<Example>> {
    parallel_map(&corpus.items, |(s, u)| {
        example_from_samples(&u.text, &u.samples, corpus.spec.speakers[*s].vector())
    })
}

fn parallel_map<T: Sync, R: Send>(items: &[T], f: impl Fn(&T) -> Result<R> + Sync) -> Result<Vec<R>> {
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(items.len().max(1));
    let chunk = items.len().div_ceil(workers).max(1);
    let parts: Vec<Result<Vec<R>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = items
            .chunks(chunk)
            .map(|c| scope.spawn(|| c.iter().map(&f).collect::<Result<Vec<R>>>()))
            .collect();
        handles.into_iter().map(|h| h.join().expect("feature worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(items.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

fn step_rng(seed: u64, step: u64) -> Rng {
    crate::rng_from_seed(utterance_seed(seed, usize::MAX, step as usize))
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub lr: f64,
    pub train: LossReport,
    pub val: Option<LossReport>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainSummary {
    pub rows: Vec<LogRow>,
    pub best_val: Option<f64>,
    pub best_step: Option<u64>,
    pub best_checkpoint: Option<PathBuf>,
}

pub struct Trainer {
    pub config: Config,
    pub model: Model,
    pub store: ParamStore<f32>,
    pub adam: Adam<f32>,
    pub schedule: LrSchedule,
    pub step: u64,
}

impl Trainer {
    /// Fresh model; decoder actnorm layers are initialized from `init_batch`.
    pub fn new(config: &Config, init_batch: &[&Example]) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let model = Model::new(&config.model, &mut store, &mut crate::rng_from_seed(config.training.seed))?;
        if init_batch.is_empty() {
            model.mark_initialized(&mut store);
        } else {
            model.init_actnorm(&mut store, init_batch)?;
        }
        let adam = Adam::new(&store).with_clip_norm(Some(config.training.grad_clip));
        Ok(Self {
            schedule: schedule(config),
            config: config.clone(),
            model,
            store,
            adam,
            step: 0,
        })
    }

    /// Continues from a checkpoint, keeping its step counter and optimizer
    /// state. Training-section settings come from `config` when given.
    pub fn resume(ckpt: &Checkpoint, config: Option<&Config>) -> Result<Self> {
        let (model, store) = ckpt.restore()?;
        let mut cfg = ckpt.config.clone();
        if let Some(c) = config {
            if c.model != cfg.model {
                return Err(Error::Config("model section differs from the checkpoint's".into()));
            }
            cfg.training = c.training.clone();
            cfg.data = c.data.clone();
        }
        let adam = ckpt
            .restore_optimizer(&store)?
            .unwrap_or_else(|| Adam::new(&store))
            .with_clip_norm(Some(cfg.training.grad_clip));
        Ok(Self {
            schedule: schedule(&cfg),
            config: cfg,
            model,
            store,
            adam,
            step: ckpt.step,
        })
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(&self.config, &self.store, self.step, self.config.training.seed, Some(&self.adam))
    }

    /// Draws the batch for the current step; depends only on seed and step.
    pub fn batch_indices(&self, n: usize) -> Vec<usize> {
        let mut rng = step_rng(self.config.training.seed, self.step);
        let k = self.config.training.batch_size.min(n);
        let mut idx = sample(&mut rng, n, k).into_vec();
        idx.sort_unstable();
        idx
    }

    /// One optimizer update on `batch`. A non-finite loss or gradient aborts
    /// before any parameter changes.
    pub fn train_step(&mut self, batch: &[&Example]) -> Result<LossReport> {
        let mut rng = step_rng(self.config.training.seed ^ 0x5eed, self.step);
        let (report, grads) = {
            let mut g = Graph::new(&self.store);
            let alignment = if (self.step as usize) < self.config.training.align_warmup_steps {
                Alignment::Even
            } else {
                Alignment::Search
            };
            let (loss, report) = self.model.batch_loss_with(&mut g, batch, alignment, &mut rng)?;
            if !report.is_finite() {
                return Err(Error::NonFinite(format!("loss at step {}", self.step)));
            }
            (report, g.backward(loss)?)
        };
        self.store.zero_grad();
        self.store.accumulate(&grads);
        let lr = self.schedule.lr_at(self.step as usize);
        self.adam.step(&mut self.store, lr)?;
        self.step += 1;
        Ok(report)
    }

    /// Mean loss over `examples` with a fixed noise seed.
    pub fn evaluate(&self, examples: &[Example]) -> Result<LossReport> {
        let mut rng = crate::rng_from_seed(self.config.training.seed ^ 0xe7a1);
        let mut sum = LossReport::default();
        for ex in examples {
            let mut g = Graph::new(&self.store);
            let (_, r) = self.model.batch_loss(&mut g, &[ex], &mut rng)?;
            sum.total += r.total;
            sum.mel += r.mel;
            sum.duration += r.duration;
            sum.pitch += r.pitch;
        }
        let n = examples.len().max(1) as f64;
        Ok(LossReport {
            total: sum.total / n,
            mel: sum.mel / n,
            duration: sum.duration / n,
            pitch: sum.pitch / n,
        })
    }

    /// Trains up to `training.steps`. With `out_dir`, writes `train_log.tsv`
    /// (one row per logging interval), `last.ckpt` at every validation and
    /// `best.ckpt` whenever validation loss improves. Without validation
    /// data, the last checkpoint doubles as the best one.
    pub fn fit(
        &mut self,
        train: &[Example],
        val: &[Example],
        out_dir: Option<&Path>,
        mut on_row: impl FnMut(&LogRow),
    ) -> Result<TrainSummary> {
        if train.is_empty() {
            return Err(Error::Config("no training examples".into()));
        }
        let t = self.config.training.clone();
        let mut log = match out_dir {
            Some(d) => {
                std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
                let p = d.join("train_log.tsv");
                let fresh = !p.exists() || self.step == 0;
                let mut f = std::fs::OpenOptions::new()
                    .create(true)
                    .append(!fresh)
                    .write(true)
                    .truncate(fresh)
                    .open(&p)
                    .map_err(|e| Error::io(&p, e))?;
                if fresh {
                    writeln!(f, "step\tlr\ttotal\tmel\tduration\tpitch\tval_total\tval_mel\tval_duration\tval_pitch")
                        .map_err(|e| Error::io(&p, e))?;
                }
                Some((f, p))
            }
            None => None,
        };
        let mut summary = TrainSummary {
            rows: Vec::new(),
            best_val: None,
            best_step: None,
            best_checkpoint: None,
        };
        let mut acc = LossReport::default();
        let mut acc_n = 0usize;
        while (self.step as usize) < t.steps {
            let idx = self.batch_indices(train.len());
            let batch: Vec<&Example> = idx.iter().map(|&i| &train[i]).collect();
            let lr = self.schedule.lr_at(self.step as usize);
            let r = self.train_step(&batch)?;
            acc.total += r.total;
            acc.mel += r.mel;
            acc.duration += r.duration;
            acc.pitch += r.pitch;
            acc_n += 1;
            let step = self.step;
            let is_log = step % t.log_every as u64 == 0 || step as usize == t.steps;
            let is_val = step % t.val_every as u64 == 0 || step as usize == t.steps;
            let val_report = if is_val && !val.is_empty() { Some(self.evaluate(val)?) } else { None };
            if is_val {
                let score = val_report.map(|v| v.total);
                if let Some(s) = score {
                    if !s.is_finite() {
                        return Err(Error::NonFinite(format!("validation loss at step {step}")));
                    }
                }
                let improved = match (score, summary.best_val) {
                    (Some(s), Some(b)) => s < b,
                    (Some(_), None) => true,
                    (None, _) => true,
                };
                if let Some(d) = out_dir {
                    let ck = self.checkpoint();
                    ck.save(d.join("last.ckpt"))?;
                    if improved {
                        ck.save(d.join("best.ckpt"))?;
                        summary.best_checkpoint = Some(d.join("best.ckpt"));
                    }
                }
                if improved {
                    summary.best_val = score;
                    summary.best_step = Some(step);
                }
            }
            if is_log {
                let n = acc_n.max(1) as f64;
                let row = LogRow {
                    step,
                    lr,
                    train: LossReport {
                        total: acc.total / n,
                        mel: acc.mel / n,
                        duration: acc.duration / n,
                        pitch: acc.pitch / n,
                    },
                    val: val_report,
                };
                acc = LossReport::default();
                acc_n = 0;
                if let Some((f, p)) = log.as_mut() {
                    let v = row.val.map_or_else(
                        || "\t\t\t".to_string(),
                        |v| format!("{:.6}\t{:.6}\t{:.6}\t{:.6}", v.total, v.mel, v.duration, v.pitch),
                    );
                    writeln!(
                        f,
                        "{}\t{:.3e}\t{:.6}\t{:.6}\t{:.6}\t{:.6}\t{v}",
                        row.step, row.lr, row.train.total, row.train.mel, row.train.duration, row.train.pitch
                    )
                    .map_err(|e| Error::io(p.as_path(), e))?;
                }
                on_row(&row);
                summary.rows.push(row);
            }
        }
        Ok(summary)
    }
}

fn schedule(config: &Config) -> LrSchedule {
    LrSchedule {
        peak: config.training.lr,
        warmup_steps: config.training.warmup_steps,
        total_steps: config.training.steps,
        min_lr: config.training.min_lr,
    }
}
