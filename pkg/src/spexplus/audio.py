"""WAV I/O for mono 16-bit PCM at a fixed sample rate.

Samples live in float32 on a nominal -1..1 scale.  Conversion uses a
symmetric 1/32768 quantization step (write: round(x*32768) clipped to the
int16 range; read: x/32768), which keeps the round-trip error within one
LSB for every sample.
"""

import wave
from dataclasses import dataclass

import numpy as np

PCM_SCALE = 32768.0


class AudioFormatError(ValueError):
    """File is not mono 16-bit PCM at the expected rate, or is corrupt."""


@dataclass
class AudioBuffer:
    samples: np.ndarray  # float32, 1-D
    sample_rate: int

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=np.float32).reshape(-1)

    def __len__(self):
        return len(self.samples)

    @property
    def duration(self):
        return len(self.samples) / self.sample_rate

    def rms(self):
        return float(np.sqrt(np.mean(np.square(self.samples, dtype=np.float64))))


def read_wav(path, expected_rate=8000):
    try:
        with wave.open(str(path), "rb") as w:
            if w.getcomptype() != "NONE":
                raise AudioFormatError(f"{path}: compressed WAV not supported, PCM required")
            if w.getnchannels() != 1:
                raise AudioFormatError(
                    f"{path}: mono required, got {w.getnchannels()} channels")
            if w.getsampwidth() != 2:
                raise AudioFormatError(
                    f"{path}: 16-bit PCM required, got {8 * w.getsampwidth()}-bit")
            if w.getframerate() != expected_rate:
                raise AudioFormatError(
                    f"{path}: expected sample rate {expected_rate}, got {w.getframerate()}")
            n = w.getnframes()
            raw = w.readframes(n)
    except wave.Error as exc:
        raise AudioFormatError(f"{path}: not a valid WAV file ({exc})") from exc
    if len(raw) != 2 * n:
        raise AudioFormatError(f"{path}: truncated file")
    pcm = np.frombuffer(raw, dtype="<i2")
    return AudioBuffer(pcm.astype(np.float32) / PCM_SCALE, expected_rate)


def write_wav(path, buf):
    clipped = np.clip(buf.samples, -1.0, 1.0)
    pcm = np.clip(np.round(clipped * PCM_SCALE), -32768, 32767).astype("<i2")
    with wave.open(str(path), "wb") as w:
        w.setnchannels(1)
        w.setsampwidth(2)
        w.setframerate(buf.sample_rate)
        w.writeframes(pcm.tobytes())
