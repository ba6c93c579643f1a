"""Deterministic synthetic talkers.

Each speaker is a harmonic source with a fixed fundamental-frequency band,
a fixed spectral envelope drawn from its envelope seed, and per-utterance
random prosody (pitch drift, vibrato, syllable-rate amplitude modulation).
Two class tags, A and B, occupy disjoint pitch registers so that same- and
different-class mixtures behave like the same/different-voice conditions.
"""

import zlib
from dataclasses import dataclass

import numpy as np

from .audio import AudioBuffer

CLASS_F0_RANGES = {"A": (90.0, 160.0), "B": (175.0, 280.0)}
_MAX_HARMONIC_HZ = 3600.0
_TARGET_RMS = 0.12


@dataclass(frozen=True)
class SyntheticSpeakerSpec:
    speaker_id: str
    f0_min: float
    f0_max: float
    harmonic_decay: float
    envelope_seed: int
    class_tag: str


def make_speakers(n_speakers, seed):
    """Deterministic speaker roster with disjoint pitch sub-bands per class."""
    if n_speakers < 2:
        raise ValueError("need at least 2 speakers")
    per_class = {"A": n_speakers // 2, "B": n_speakers - n_speakers // 2}
    rng = np.random.default_rng([seed, 0xA11CE])
    speakers = []
    for tag in ("A", "B"):
        lo, hi = CLASS_F0_RANGES[tag]
        count = per_class[tag]
        if count == 0:
            continue
        edges = np.linspace(lo, hi, count + 1)
        for i in range(count):
            # 20% guard band between neighbours keeps the bands disjoint.
            width = edges[i + 1] - edges[i]
            speakers.append(SyntheticSpeakerSpec(
                speaker_id=f"{tag}{i:02d}",
                f0_min=float(edges[i] + 0.1 * width),
                f0_max=float(edges[i + 1] - 0.1 * width),
                harmonic_decay=float(rng.uniform(1.0, 1.8)),
                envelope_seed=int(rng.integers(1 << 31)),
                class_tag=tag,
            ))
    return speakers


def _envelope(spec, freqs_hz):
    """Fixed per-speaker log-amplitude envelope sampled at the given freqs."""
    rng = np.random.default_rng([spec.envelope_seed, 0xE54])
    knots = np.linspace(0.0, 4000.0, 9)
    log_amp = rng.uniform(-2.0, 0.0, knots.size)
    return np.exp(np.interp(freqs_hz, knots, log_amp))


def synth_utterance(spec, duration_s, seed, sample_rate=8000):
    """One utterance of the given speaker; bitwise-deterministic in (spec, seed)."""
    if duration_s < 0.5:
        raise ValueError("utterance duration must be at least 0.5 s")
    rng = np.random.default_rng(
        [zlib.crc32(spec.speaker_id.encode()), spec.envelope_seed, seed])
    n = int(round(duration_s * sample_rate))
    t = np.arange(n) / sample_rate

    center = rng.uniform(spec.f0_min, spec.f0_max)
    drift = (0.04 * np.sin(2 * np.pi * rng.uniform(0.2, 0.8) * t + rng.uniform(0, 2 * np.pi))
             + 0.02 * np.sin(2 * np.pi * rng.uniform(4.0, 7.0) * t + rng.uniform(0, 2 * np.pi)))
    f0 = np.clip(center * (1.0 + drift), spec.f0_min, spec.f0_max)
    phase = 2 * np.pi * np.cumsum(f0) / sample_rate

    n_harmonics = max(1, int(_MAX_HARMONIC_HZ / spec.f0_max))
    amps = np.arange(1, n_harmonics + 1, dtype=np.float64) ** -spec.harmonic_decay
    amps *= _envelope(spec, np.arange(1, n_harmonics + 1) * center)
    sig = np.zeros(n)
    for h in range(1, n_harmonics + 1):
        sig += amps[h - 1] * np.sin(h * phase + rng.uniform(0, 2 * np.pi))

    # Syllable-rate modulation; floor keeps the signal from ever going silent.
    am = (0.55 + 0.45 * np.sin(2 * np.pi * rng.uniform(2.0, 4.5) * t + rng.uniform(0, 2 * np.pi))
          * np.sin(2 * np.pi * rng.uniform(0.8, 1.6) * t + rng.uniform(0, 2 * np.pi)))
    sig *= am
    sig *= _TARGET_RMS / np.sqrt(np.mean(sig ** 2))
    return AudioBuffer(sig.astype(np.float32), sample_rate)


def spectral_centroid(buf):
    """FFT-based spectral centroid in Hz."""
    spectrum = np.abs(np.fft.rfft(buf.samples.astype(np.float64)))
    freqs = np.fft.rfftfreq(len(buf.samples), 1.0 / buf.sample_rate)
    return float(np.sum(freqs * spectrum) / np.sum(spectrum))
