//! Objective evaluation: voiced log-F0 histograms, Wasserstein-1 distance
//! between them, and across-seed pitch diversity of synthesized speech.

use std::fmt::Write as _;

use crate::config::Temperatures;
use crate::error::{Error, Result};
use crate::features::{PitchContour, SpeakerVector, TokenSequence};
use crate::model::{Model, Synthesis};
use crate::ndmath::ParamStore;
use crate::synthcorpus::utterance_seed;

pub const HIST_BINS: usize = 40;
pub const HIST_LO_HZ: f64 = 65.0;
pub const HIST_HI_HZ: f64 = 440.0;
/// Voiced frames outside these percentiles are dropped before binning.
pub const TRIM_PERCENTILES: (f64, f64) = (1.0, 99.0);

/// Uniform bins over log-Hz.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinGrid {
    pub bins: usize,
    pub lo: f64,
    pub hi: f64,
}

impl Default for BinGrid {
    fn default() -> Self {
        Self {
            bins: HIST_BINS,
            lo: HIST_LO_HZ.ln(),
            hi: HIST_HI_HZ.ln(),
        }
    }
}

impl BinGrid {
    pub fn width(&self) -> f64 {
        (self.hi - self.lo) / self.bins as f64
    }

    pub fn edges(&self) -> Vec<f64> {
        (0..=self.bins).map(|k| self.lo + k as f64 * self.width()).collect()
    }

    pub fn center(&self, k: usize) -> f64 {
        self.lo + (k as f64 + 0.5) * self.width()
    }

    /// Bin of `v`; values beyond the grid land in the end bins.
    pub fn bin(&self, v: f64) -> usize {
        let k = ((v - self.lo) / self.width()).floor();
        if k < 0.0 {
            0
        } else {
            (k as usize).min(self.bins - 1)
        }
    }
}

/// Histogram of voiced log-F0 frames after percentile trimming.
#[derive(Clone, Debug, PartialEq)]
pub struct LogF0Histogram {
    pub grid: BinGrid,
    pub counts: Vec<u64>,
    /// Voiced frames kept after trimming; equals the sum of `counts`.
    pub total: u64,
    /// Voiced frames removed by trimming.
    pub trimmed: u64,
    pub speaker: String,
    pub system: String,
}

/// Linear-interpolation percentile of sorted values.
fn percentile(sorted: &[f64], p: f64) -> f64 {
    let pos = p / 100.0 * (sorted.len() - 1) as f64;
    let (i, frac) = (pos.floor() as usize, pos.fract());
    if i + 1 >= sorted.len() {
        sorted[sorted.len() - 1]
    } else {
        sorted[i] + frac * (sorted[i + 1] - sorted[i])
    }
}

/// Keeps values inside the `[p_lo, p_hi]` percentile window.
pub fn trim_outliers(values: &[f64], (p_lo, p_hi): (f64, f64)) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let (lo, hi) = (percentile(&sorted, p_lo), percentile(&sorted, p_hi));
    values.iter().copied().filter(|&v| v >= lo && v <= hi).collect()
}

impl LogF0Histogram {
    /// Bins `values` (already voiced-only) without trimming.
    pub fn from_values(values: &[f64], grid: BinGrid) -> Self {
        let mut counts = vec![0u64; grid.bins];
        for &v in values {
            counts[grid.bin(v)] += 1;
        }
        Self {
            grid,
            counts,
            total: values.len() as u64,
            trimmed: 0,
            speaker: String::new(),
            system: String::new(),
        }
    }

    pub fn labeled(mut self, speaker: &str, system: &str) -> Self {
        self.speaker = speaker.to_string();
        self.system = system.to_string();
        self
    }

    /// Normalized bin masses.
    pub fn density(&self) -> Vec<f64> {
        let n = self.total.max(1) as f64;
        self.counts.iter().map(|&c| c as f64 / n).collect()
    }

    /// Comma-separated table, one row per bin, preceded by `#` lines naming
    /// the trimming and binning conventions.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        writeln!(
            s,
            "# convention: voiced frames only, trimmed to percentiles {}-{}, {} bins over [ln {HIST_LO_HZ}, ln {HIST_HI_HZ}] with end-bin clamping",
            TRIM_PERCENTILES.0, TRIM_PERCENTILES.1, self.grid.bins
        )
        .unwrap();
        writeln!(s, "# system={} speaker={} total={} trimmed={}", self.system, self.speaker, self.total, self.trimmed).unwrap();
        writeln!(s, "bin_lo,bin_hi,center,count,density").unwrap();
        let edges = self.grid.edges();
        for (k, (&c, d)) in self.counts.iter().zip(self.density()).enumerate() {
            writeln!(s, "{:.6},{:.6},{:.6},{c},{d:.6}", edges[k], edges[k + 1], self.grid.center(k)).unwrap();
        }
        s
    }
}

/// Voiced-only histogram of `contours` on the default grid after trimming.
pub fn logf0_histogram(contours: &[PitchContour]) -> Result<LogF0Histogram> {
    logf0_histogram_on(contours, BinGrid::default())
}

pub fn logf0_histogram_on(contours: &[PitchContour], grid: BinGrid) -> Result<LogF0Histogram> {
    let voiced: Vec<f64> = contours.iter().flat_map(|c| c.voiced_values()).map(f64::from).collect();
    if voiced.is_empty() {
        return Err(Error::invalid("logf0_histogram", "no voiced frames"));
    }
    let kept = trim_outliers(&voiced, TRIM_PERCENTILES);
    let mut h = LogF0Histogram::from_values(&kept, grid);
    h.trimmed = (voiced.len() - kept.len()) as u64;
    Ok(h)
}

/// Wasserstein-1 distance in log-Hz between two normalized histograms on
/// the same grid, with each bin's mass at its centre.
pub fn distribution_distance(a: &LogF0Histogram, b: &LogF0Histogram) -> Result<f64> {
    if a.grid != b.grid {
        return Err(Error::invalid("distribution_distance", format!("grids differ: {:?} vs {:?}", a.grid, b.grid)));
    }
    if a.total == 0 || b.total == 0 {
        return Err(Error::invalid("distribution_distance", "empty histogram"));
    }
    let (da, db) = (a.density(), b.density());
    let mut cdf = 0.0;
    let mut w = 0.0;
    for k in 0..a.grid.bins - 1 {
        cdf += da[k] - db[k];
        w += cdf.abs();
    }
    Ok(w * a.grid.width())
}

/// Gnuplot data file: one block per histogram, separated by two blank
/// lines so `index` selects a histogram.
pub fn gnuplot_data(hists: &[LogF0Histogram]) -> String {
    let mut s = String::new();
    for (i, h) in hists.iter().enumerate() {
        if i > 0 {
            s.push_str("\n\n");
        }
        writeln!(s, "# index {i}: system={} speaker={}", h.system, h.speaker).unwrap();
        writeln!(s, "# center_logf0 center_hz density").unwrap();
        for (k, d) in h.density().into_iter().enumerate() {
            let c = h.grid.center(k);
            writeln!(s, "{c:.6} {:.3} {d:.6}", c.exp()).unwrap();
        }
    }
    s
}

/// One synthesized item of an evaluation grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Rendering {
    pub text: String,
    pub speaker: String,
    pub seed: u64,
    pub synthesis: Synthesis,
}

/// Generator seed for one grid cell.
pub fn render_seed(seed: u64, text: usize, speaker: usize) -> u64 {
    utterance_seed(seed, text, speaker)
}

/// Synthesizes every `(text, speaker, seed)` triple, in that nesting order.
/// Cells run in parallel; each draws from its own generator.
pub fn render_grid(
    model: &Model,
    store: &ParamStore<f32>,
    texts: &[(String, TokenSequence)],
    speakers: &[(String, SpeakerVector)],
    seeds: &[u64],
    temps: Temperatures,
) -> Result<Vec<Rendering>> {
    let mut cells = Vec::new();
    for (ti, t) in texts.iter().enumerate() {
        for (si, s) in speakers.iter().enumerate() {
            for &seed in seeds {
                cells.push((ti, t, si, s, seed));
            }
        }
    }
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(cells.len().max(1));
    let chunk = cells.len().div_ceil(workers).max(1);
    let parts: Vec<Result<Vec<Rendering>>> = std::thread::scope(|scope| {
        let handles: Vec<_> = cells
            .chunks(chunk)
            .map(|part| {
                scope.spawn(move || {
                    part.iter()
                        .map(|&(ti, (text, tokens), si, (name, vector), seed)| {
                            let mut rng = crate::rng_from_seed(render_seed(seed, ti, si));
                            Ok(Rendering {
                                text: text.clone(),
                                speaker: name.clone(),
                                seed,
                                synthesis: model.synthesize(store, tokens, vector, temps, &mut rng)?,
                            })
                        })
                        .collect()
                })
            })
            .collect();
        handles.into_iter().map(|h| h.join().expect("synthesis worker panicked")).collect()
    });
    let mut out = Vec::with_capacity(cells.len());
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct DiversityRow {
    pub text: String,
    pub speaker: String,
    /// Renderings with at least one voiced frame.
    pub voiced_seeds: usize,
    /// Mean over seeds of the voiced-frame mean log-F0.
    pub mean: f64,
    /// Sample standard deviation over seeds of the voiced-frame mean log-F0.
    pub std: f64,
}

/// Across-seed spread of frame-mean log-F0 per `(text, speaker)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiversityReport {
    pub system: String,
    pub seeds: usize,
    pub temperatures: Temperatures,
    pub rows: Vec<DiversityRow>,
}

impl DiversityReport {
    /// Average of the per-row standard deviations.
    pub fn mean_std(&self) -> f64 {
        if self.rows.is_empty() {
            return 0.0;
        }
        self.rows.iter().map(|r| r.std).sum::<f64>() / self.rows.len() as f64
    }

    pub fn to_csv(&self) -> String {
        let t = self.temperatures;
        let mut s = String::new();
        writeln!(
            s,
            "# system={} seeds={} t_prior={} t_dur={} t_pitch={}",
            self.system, self.seeds, t.prior, t.duration, t.pitch
        )
        .unwrap();
        writeln!(s, "text,speaker,voiced_seeds,mean_logf0,std_logf0").unwrap();
        for r in &self.rows {
            writeln!(s, "\"{}\",{},{},{:.6},{:.6}", r.text.replace('"', "\"\""), r.speaker, r.voiced_seeds, r.mean, r.std).unwrap();
        }
        writeln!(s, "# mean_std={:.6}", self.mean_std()).unwrap();
        s
    }
}

fn voiced_mean(c: &PitchContour) -> Option<f64> {
    let n = c.voiced_count();
    (n > 0).then(|| c.voiced_values().map(f64::from).sum::<f64>() / n as f64)
}

/// Groups renderings by `(text, speaker)` in first-seen order.
pub fn diversity_from_renderings(system: &str, renderings: &[Rendering], temperatures: Temperatures) -> Result<DiversityReport> {
    let mut keys: Vec<(&str, &str)> = Vec::new();
    for r in renderings {
        let k = (r.text.as_str(), r.speaker.as_str());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    let mut seeds = usize::MAX;
    let mut rows = Vec::new();
    for (text, speaker) in keys {
        let group: Vec<&Rendering> = renderings.iter().filter(|r| r.text == text && r.speaker == speaker).collect();
        seeds = seeds.min(group.len());
        let means: Vec<f64> = group.iter().filter_map(|r| voiced_mean(&r.synthesis.contour)).collect();
        let n = means.len() as f64;
        let mean = if means.is_empty() { 0.0 } else { means.iter().sum::<f64>() / n };
        let std = if means.len() < 2 {
            0.0
        } else {
            (means.iter().map(|m| (m - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        rows.push(DiversityRow {
            text: text.to_string(),
            speaker: speaker.to_string(),
            voiced_seeds: means.len(),
            mean,
            std,
        });
    }
    if seeds < 3 || rows.is_empty() {
        return Err(Error::invalid("diversity", format!("need at least 3 seeds per prompt, got {}", if rows.is_empty() { 0 } else { seeds })));
    }
    Ok(DiversityReport {
        system: system.to_string(),
        seeds,
        temperatures,
        rows,
    })
}

/// Renders the grid and summarizes across-seed diversity.
pub fn diversity_score(
    model: &Model,
    store: &ParamStore<f32>,
    texts: &[(String, TokenSequence)],
    speakers: &[(String, SpeakerVector)],
    seeds: &[u64],
    temps: Temperatures,
) -> Result<DiversityReport> {
    if seeds.len() < 3 {
        return Err(Error::invalid("diversity_score", format!("need at least 3 seeds, got {}", seeds.len())));
    }
    let renderings = render_grid(model, store, texts, speakers, seeds, temps)?;
    diversity_from_renderings(model.variant().name(), &renderings, temps)
}
