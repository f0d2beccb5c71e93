use pitchflow::features::{estimate_f0, estimate_f0_from_mel, frame_count, load_wav, mel_spectrogram, Manifest};
use pitchflow::synthcorpus::{generate_corpus, generate_utterance, load_truth, CorpusSpec, SpeakerSpec};

fn two_speakers(utts: usize) -> CorpusSpec {
    CorpusSpec {
        speakers: vec![
            SpeakerSpec::new("low", 120.0, 0.1, 4.0, 3),
            SpeakerSpec::new("high", 220.0, 0.1, 4.0, 4),
        ],
        utterances_per_speaker: utts,
        alphabet: "abcdefgh".into(),
        word_length: [2, 4],
        words: [1, 3],
        seed: 11,
    }
}

#[test]
fn yin_recovers_generated_contour() {
    let mut worst: f64 = 0.0;
    let (mut checked, mut truth_voiced) = (0, 0);
    for (i, f0) in [90.0, 120.0, 180.0, 220.0, 320.0].into_iter().enumerate() {
        let spec = SpeakerSpec::new("s", f0, 0.15, 4.0, i as u64);
        let mut rng = pitchflow::rng_from_seed(i as u64);
        let u = generate_utterance(&spec, "abc defg hij", &mut rng).unwrap();
        let est = estimate_f0(&u.samples);
        assert_eq!(est.frames(), u.contour.frames());
        for t in 0..est.frames() {
            truth_voiced += u.contour.voiced[t] as usize;
            // onset and offset frames whose window is half silence may read unvoiced
            if u.contour.voiced[t] && est.voiced[t] {
                let err = ((est.log_f0[t] as f64).exp() - (u.contour.log_f0[t] as f64).exp()).abs();
                worst = worst.max(err);
                checked += 1;
            }
        }
    }
    assert!(worst < 3.0, "worst error {worst} Hz over {checked} frames");
    assert!(checked * 100 >= truth_voiced * 85, "voicing recall {checked}/{truth_voiced}");
}

#[test]
fn mel_estimator_tracks_generated_contour() {
    let spec = SpeakerSpec::new("s", 150.0, 0.15, 4.0, 5);
    let u = generate_utterance(&spec, "abcd efgh", &mut pitchflow::rng_from_seed(5)).unwrap();
    let est = estimate_f0_from_mel(&mel_spectrogram(&u.samples).unwrap());
    let mut errs = Vec::new();
    for t in 0..est.frames() {
        if u.contour.voiced[t] && est.voiced[t] {
            errs.push((est.log_f0[t] - u.contour.log_f0[t]).abs());
        }
    }
    assert!(errs.len() * 10 >= u.contour.voiced_count() * 8, "{} of {}", errs.len(), u.contour.voiced_count());
    errs.sort_by(|a, b| a.partial_cmp(b).unwrap());
    assert!(errs[errs.len() / 2] < 0.03, "median log error {}", errs[errs.len() / 2]);
}

#[test]
fn corpus_files_and_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let spec = two_speakers(50);
    let manifest = generate_corpus(&spec, dir.path()).unwrap();
    assert_eq!(manifest.records.len(), 100);
    let loaded = Manifest::load(dir.path().join("manifest.jsonl")).unwrap();
    assert_eq!(loaded.records, manifest.records);
    let truth = load_truth(dir.path().join("truth.jsonl")).unwrap();
    assert_eq!(truth.len(), 100);
    for (k, s) in spec.speakers.iter().enumerate() {
        let vals: Vec<f64> = truth
            .iter()
            .filter(|r| r.speaker == s.id)
            .flat_map(|r| r.log_f0.iter().filter(|&&v| v != 0.0).map(|&v| v as f64).collect::<Vec<_>>())
            .collect();
        let mean = vals.iter().sum::<f64>() / vals.len() as f64;
        assert!((mean - s.log_f0_mean).abs() < 0.02, "speaker {k}: {mean}");
        let v = manifest.records.iter().find(|r| r.speaker == s.id).unwrap().speaker_vector(dir.path()).unwrap();
        let norm: f64 = v.values().iter().map(|&x| (x as f64).powi(2)).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-6);
    }
    // contour and Mel frame grids agree on every item
    for (rec, tr) in manifest.records.iter().zip(&truth) {
        let (samples, _) = load_wav(rec.audio_path(dir.path())).unwrap();
        let frames = frame_count(samples.len());
        assert_eq!(frames, tr.log_f0.len());
        assert_eq!(mel_spectrogram(&samples).unwrap().frames(), frames);
        assert_eq!(estimate_f0(&samples).frames(), frames);
        assert_eq!(tr.durations.iter().sum::<usize>(), frames);
    }
}

#[test]
fn corpus_is_deterministic() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    let spec = two_speakers(3);
    generate_corpus(&spec, a.path()).unwrap();
    generate_corpus(&spec, b.path()).unwrap();
    for rel in ["manifest.jsonl", "truth.jsonl", "wavs/low_0002.wav", "speakers/high.vec"] {
        assert_eq!(std::fs::read(a.path().join(rel)).unwrap(), std::fs::read(b.path().join(rel)).unwrap(), "{rel}");
    }
}
