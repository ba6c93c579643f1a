"""Two-talker mixture simulation, manifests, and segmentation.

A dataset directory looks like:

    out_dir/
      wav/{train,dev,test}/<id>_{mix,ref,target}.wav
      manifests/{train,dev,test}.jsonl
      manifests/meta.json

Manifests are JSON-lines; WAV paths are relative to out_dir.  Test
speakers are disjoint from train/dev (open condition), the per-example SNR
is drawn uniformly from [0, 5] dB, and the reference is always a different
utterance of the target speaker than the one that was mixed.
"""

import json
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .audio import AudioBuffer, read_wav, write_wav
from .synth import make_speakers, synth_utterance


@dataclass
class MixtureExample:
    mixture: AudioBuffer
    reference: AudioBuffer
    target: AudioBuffer
    speaker_label: int
    snr_db: float
    example_id: str = ""
    condition: str = "unknown"


@dataclass
class MixResult:
    mixture: AudioBuffer
    target: AudioBuffer  # zero-padded to the mixture length
    interference_gain: float
    norm_gain: float


def mix_at_snr(target, interference, snr_db):
    """Scale the interferer for an exact SNR and sum.

    The shorter signal is zero-padded to the longer one before mixing.  If
    the sum would clip, everything is scaled so the mixture peaks at 0.9 and
    the applied gain is reported (SI-SDR is scale invariant, so metrics are
    unaffected).
    """
    if target.sample_rate != interference.sample_rate:
        raise ValueError("sample rates differ")
    n = max(len(target), len(interference))
    t = np.pad(target.samples.astype(np.float64), (0, n - len(target)))
    i = np.pad(interference.samples.astype(np.float64), (0, n - len(interference)))
    p_t = np.mean(t ** 2)
    p_i = np.mean(i ** 2)
    if p_t == 0:
        raise ValueError("silent target")
    if p_i == 0:
        raise ValueError("silent interference")
    gain = float(np.sqrt(p_t / (p_i * 10.0 ** (snr_db / 10.0))))
    mix = t + gain * i
    peak = np.abs(mix).max()
    norm = float(0.9 / peak) if peak > 1.0 else 1.0
    return MixResult(
        mixture=AudioBuffer((mix * norm).astype(np.float32), target.sample_rate),
        target=AudioBuffer(t.astype(np.float32), target.sample_rate),
        interference_gain=gain,
        norm_gain=norm,
    )


def _crop_or_pad(samples, length, offset):
    if len(samples) >= length:
        return samples[offset : offset + length]
    return np.pad(samples, (0, length - len(samples)))


def segment_or_pad(example, seconds=4.0, rng=None):
    """Fixed-length training view of an example.

    Mixture and target share one random crop offset; the reference gets its
    own.  Shorter signals are zero-padded at the tail.  Pass a seeded rng
    for reproducible crops; None means crop from the start.
    """
    sr = example.mixture.sample_rate
    length = int(round(seconds * sr))

    def draw(n):
        if n <= length or rng is None:
            return 0
        return int(rng.integers(0, n - length + 1))

    mix_off = draw(len(example.mixture))
    ref_off = draw(len(example.reference))
    return MixtureExample(
        mixture=AudioBuffer(_crop_or_pad(example.mixture.samples, length, mix_off), sr),
        target=AudioBuffer(_crop_or_pad(example.target.samples, length, mix_off), sr),
        reference=AudioBuffer(_crop_or_pad(example.reference.samples, length, ref_off), sr),
        speaker_label=example.speaker_label,
        snr_db=example.snr_db,
        example_id=example.example_id,
        condition=example.condition,
    )


def _split_speakers(speakers):
    """Hold out speakers from each class for the open-condition test set."""
    train, test = [], []
    for tag in ("A", "B"):
        in_class = [s for s in speakers if s.class_tag == tag]
        n_test = max(1, len(in_class) // 3)
        test.extend(in_class[-n_test:])
        train.extend(in_class[:-n_test])
    return train, test


class _UtteranceBank:
    """Lazy cache of synthesized utterances, deterministic per (seed, slot)."""

    def __init__(self, seed, duration_range, sample_rate):
        self.seed = seed
        self.duration_range = duration_range
        self.sample_rate = sample_rate
        self._cache = {}

    def get(self, spec, utt):
        key = (spec.speaker_id, utt)
        if key not in self._cache:
            rng = np.random.default_rng(
                [self.seed, 0xD1, zlib.crc32(spec.speaker_id.encode()), utt])
            duration = float(rng.uniform(*self.duration_range))
            self._cache[key] = synth_utterance(
                spec, duration, seed=self.seed * 10007 + utt,
                sample_rate=self.sample_rate)
        return self._cache[key]


def simulate_dataset(out_dir, n_speakers=12, utts_per_speaker=20,
                     split_sizes=(200, 50, 50), seed=0, sample_rate=8000,
                     duration_range=(3.0, 6.0), snr_range=(0.0, 5.0)):
    """Generate WAVs plus train/dev/test manifests; returns manifest paths.

    The whole tree is a deterministic function of the arguments.
    """
    if n_speakers < 4:
        raise ValueError("open-condition split needs at least 4 speakers")
    if utts_per_speaker < 2:
        raise ValueError("need at least 2 utterances per speaker for disjoint references")
    out_dir = Path(out_dir)
    speakers = make_speakers(n_speakers, seed)
    train_speakers, test_speakers = _split_speakers(speakers)
    label_of = {s.speaker_id: i for i, s in enumerate(sorted(train_speakers,
                                                             key=lambda s: s.speaker_id))}
    bank = _UtteranceBank(seed, duration_range, sample_rate)

    manifest_dir = out_dir / "manifests"
    manifest_dir.mkdir(parents=True, exist_ok=True)
    paths = {}
    snr_stats = {}
    for split, count in zip(("train", "dev", "test"), split_sizes):
        pool = test_speakers if split == "test" else train_speakers
        wav_dir = out_dir / "wav" / split
        wav_dir.mkdir(parents=True, exist_ok=True)
        rng = np.random.default_rng([seed, 0x5E, {"train": 1, "dev": 2, "test": 3}[split]])
        rows = []
        for i in range(count):
            tgt, itf = rng.choice(len(pool), size=2, replace=False)
            tgt_spec, itf_spec = pool[tgt], pool[itf]
            utt_t = int(rng.integers(utts_per_speaker))
            utt_r = int((utt_t + 1 + rng.integers(utts_per_speaker - 1)) % utts_per_speaker)
            utt_i = int(rng.integers(utts_per_speaker))
            snr = float(rng.uniform(*snr_range))
            mixed = mix_at_snr(bank.get(tgt_spec, utt_t), bank.get(itf_spec, utt_i), snr)
            reference = bank.get(tgt_spec, utt_r)
            ex_id = f"{split}-{i:04d}"
            rel = {kind: f"wav/{split}/{ex_id}_{kind}.wav" for kind in ("mix", "ref", "target")}
            write_wav(out_dir / rel["mix"], mixed.mixture)
            write_wav(out_dir / rel["ref"], reference)
            write_wav(out_dir / rel["target"], mixed.target)
            rows.append({
                "id": ex_id,
                "mixture": rel["mix"],
                "reference": rel["ref"],
                "target": rel["target"],
                "speaker_id": tgt_spec.speaker_id,
                "speaker_label": label_of.get(tgt_spec.speaker_id, -1),
                "class": tgt_spec.class_tag,
                "condition": "same" if tgt_spec.class_tag == itf_spec.class_tag else "different",
                "snr_db": round(snr, 6),
                "interference_gain": round(mixed.interference_gain, 9),
                "norm_gain": round(mixed.norm_gain, 9),
            })
        path = manifest_dir / f"{split}.jsonl"
        with open(path, "w", encoding="utf-8") as f:
            for row in rows:
                f.write(json.dumps(row) + "\n")
        paths[split] = path
        snrs = [r["snr_db"] for r in rows]
        snr_stats[split] = {
            "count": count,
            "snr_mean": float(np.mean(snrs)) if snrs else 0.0,
            "snr_min": float(np.min(snrs)) if snrs else 0.0,
            "snr_max": float(np.max(snrs)) if snrs else 0.0,
        }

    meta = {
        "seed": seed,
        "sample_rate": sample_rate,
        "n_speakers": n_speakers,
        "utts_per_speaker": utts_per_speaker,
        "split_sizes": list(split_sizes),
        "duration_range": list(duration_range),
        "snr_range": list(snr_range),
        "n_train_speakers": len(train_speakers),
        "train_speakers": sorted(label_of, key=label_of.get),
        "test_speakers": sorted(s.speaker_id for s in test_speakers),
        "splits": snr_stats,
    }
    with open(manifest_dir / "meta.json", "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=2, sort_keys=True)
    return paths


def load_manifest(path):
    with open(path, encoding="utf-8") as f:
        return [json.loads(line) for line in f if line.strip()]


def dataset_root(manifest_path):
    return Path(manifest_path).resolve().parent.parent


def load_meta(manifest_path):
    meta_path = Path(manifest_path).resolve().parent / "meta.json"
    if not meta_path.exists():
        return None
    with open(meta_path, encoding="utf-8") as f:
        return json.load(f)


def load_example(root, row, expected_rate=8000):
    root = Path(root)
    return MixtureExample(
        mixture=read_wav(root / row["mixture"], expected_rate),
        reference=read_wav(root / row["reference"], expected_rate),
        target=read_wav(root / row["target"], expected_rate),
        speaker_label=int(row.get("speaker_label", -1)),
        snr_db=float(row.get("snr_db", 0.0)),
        example_id=row.get("id", ""),
        condition=row.get("condition", "unknown"),
    )
