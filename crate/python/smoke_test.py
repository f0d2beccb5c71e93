"""Smoke test for the pitchflow_py extension.

Build and install the module first:

    pip install maturin
    maturin build --release -m crates/py/Cargo.toml -o dist
    pip install dist/pitchflow_py-*.whl

The synthesis check needs a checkpoint. Pass one with --checkpoint, or let the
script train a 10-step model through the `pitchflow` binary (found on PATH or
under target/).
"""

import argparse
import math
import shutil
import subprocess
import sys
import tempfile
from pathlib import Path

import pitchflow_py as pf

ROOT = Path(__file__).resolve().parent.parent

CONFIG = """
[model]
variant = "stdp"
hidden = 8
encoder_layers = 1
decoder_blocks = 1
decoder_hidden = 8
decoder_layers = 1
predictor_filter = 8
predictor_depth = 1
predictor_flows = 2
regressor_filter = 8

[training]
batch_size = 2
steps = 10
warmup_steps = 5
log_every = 5
val_every = 5

[data]
train_manifest = "corpus/manifest.jsonl"
val_items = 2

[corpus]
utterances_per_speaker = 3
alphabet = "abc"
word_length = [2, 3]
words = [1, 1]
seed = 7

[[corpus.speakers]]
id = "lo"
log_f0_mean = 4.8
log_f0_std = 0.1
frames_per_token = 4.0
timbre_seed = 1

[[corpus.speakers]]
id = "hi"
log_f0_mean = 5.4
log_f0_std = 0.1
frames_per_token = 4.0
timbre_seed = 2
"""


def check(cond, what):
    if not cond:
        raise SystemExit(f"FAIL {what}")
    print(f"ok   {what}")


def find_binary():
    found = shutil.which("pitchflow")
    if found:
        return found
    for profile in ("release", "debug"):
        p = ROOT / "target" / profile / "pitchflow"
        if p.exists():
            return str(p)
    return None


def features():
    sr, hz = 16000, 220.0
    tone = [0.5 * math.sin(2 * math.pi * hz * n / sr) for n in range(sr // 2)]
    mel = pf.mel_spectrogram(tone)
    check(len(mel) == 80, "mel has 80 channels")
    log_f0, voiced = pf.estimate_f0(tone)
    check(len(log_f0) == len(mel[0]), "contour and mel share the frame grid")
    f0 = [math.exp(v) for v, on in zip(log_f0, voiced) if on]
    check(f0 and all(abs(f - hz) < 2.0 for f in f0), "YIN recovers a 220 Hz tone")
    check(pf.tokenize("ab") == [0, 2, 0, 3, 0], "tokenize intersperses blanks")
    check(pf.mas([[0.0, 0.0, -9.0], [-9.0, -9.0, 0.0]]) == [2, 1], "alignment durations")
    d = pf.logf0_distance([[5.0] * 10], [[5.0] * 10])
    check(d == 0.0, "identical contour sets are at distance 0")


def synthesis(work, checkpoint):
    cfg_path = work / "c.toml"
    cfg_path.write_text(CONFIG)
    cfg = pf.Config.load(str(cfg_path))
    check(cfg.variant == "stdp", "config parses")
    check(cfg.temperatures == (0.667, 0.8, 0.8), "default temperatures")
    try:
        pf.Config.parse("[model]\nhiddn = 3\n")
        check(False, "unknown key rejected")
    except ValueError as e:
        check("hiddn" in str(e), "unknown key rejected")

    n = pf.generate_corpus(cfg, str(work / "corpus"))
    check(n == 6, "corpus written")

    if checkpoint is None:
        binary = find_binary()
        if binary is None:
            print("skip synthesis: no checkpoint and no pitchflow binary")
            return
        subprocess.run(
            [binary, "--config", str(cfg_path), "train", "--out", str(work / "run")],
            check=True,
            capture_output=True,
        )
        checkpoint = str(work / "run" / "best.ckpt")

    model = pf.Model.load(checkpoint)
    speaker = pf.read_speaker(str(work / "corpus" / "speakers" / "hi.vec"))
    a = model.synthesize("cab", speaker, seed=4)
    b = model.synthesize("cab", speaker, seed=4)
    c = model.synthesize("cab", speaker, seed=5)
    check(len(a.mel) == 80 and len(a.mel[0]) == a.frames, "synthesis shapes")
    check(sum(a.durations) == a.frames and min(a.durations) >= 1, "durations cover the frames")
    check(a.mel == b.mel and a.log_f0 == b.log_f0, "same seed, same output")
    check(a.mel != c.mel, "different seed, different output")
    z = model.synthesize("cab", speaker, seed=4, t_prior=0.0, t_dur=0.0, t_pitch=0.0)
    z2 = model.synthesize("cab", speaker, seed=9, t_prior=0.0, t_dur=0.0, t_pitch=0.0)
    check(z.mel == z2.mel, "zero temperature ignores the seed")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--checkpoint")
    args = ap.parse_args()
    features()
    with tempfile.TemporaryDirectory() as d:
        synthesis(Path(d), args.checkpoint)
    print("all checks passed")


if __name__ == "__main__":
    sys.exit(main())
