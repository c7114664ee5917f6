"""Generate a synthetic night, look at its spectra, and cut it into segments.

Run: python demos/01_synthetic_night_and_preprocessing.py
"""

import numpy as np
from scipy import signal

from lfpstage.dataset_io import STAGE_NAMES, merge_stages
from lfpstage.dsp import design_highpass
from lfpstage.pipeline import preprocess
from lfpstage.synth import SynthConfig, generate

# A short night: 20 scored epochs per class, channels 3 and 4 carry the stage.
cfg = SynthConfig(n_epochs_per_stage=20, informative_channels=(3, 4), seed=1)
recording, hypnogram = generate(cfg)
print(recording.header)
print("first epochs:", hypnogram.epochs[:12])

# Stage spectra on an informative channel vs. a noise channel.
labels = np.array(merge_stages(hypnogram))
epochs = recording.samples.reshape(8, len(labels), 15000)
freqs, _ = signal.welch(epochs[0, 0], fs=500, nperseg=1000)
bands = {"delta 0.5-4": (0.5, 4), "theta 4-7": (4, 7), "sigma 12-14": (12, 14), "beta 20-30": (20, 30)}
for ch in (3, 0):
    print(f"\nchannel {ch}: mean band power per stage")
    _, psd = signal.welch(epochs[ch], fs=500, nperseg=1000)
    for name, (lo, hi) in bands.items():
        mask = (freqs >= lo) & (freqs <= hi)
        row = [psd[labels == k][:, mask].sum(axis=1).mean() for k in range(4)]
        print(f"  {name:12s}", "  ".join(f"{STAGE_NAMES[k]}={v:7.3f}" for k, v in enumerate(row)))

# The 0.5 Hz high-pass: second-order Butterworth, -3 dB at the cutoff.
hp = design_highpass(0.5, 500)
for f in (0.1, 0.5, 2.0, 10.0):
    print(f"|H({f:4} Hz)| = {20 * np.log10(abs(hp.response(f))):7.2f} dB")

# Filter, cut 5 s segments, and relabel the rate to 16 kHz (32x faster playback).
segments = preprocess(recording, hypnogram)
s = segments[0]
print(f"\n{len(segments)} segments; each {s.length_samples} samples = "
      f"{s.length_samples / s.sample_rate_hz} s at {s.sample_rate_hz} Hz, "
      f"{s.length_samples / s.nominal_rate_hz} s at {s.nominal_rate_hz} Hz")
