"""Synthetic conversational corpus with exact frame labels, plus a real-corpus adapter.

Each synthetic speaker is a pulse-train source at its own pitch filtered
through its own spectral envelope.  Utterances alternate silences and voiced
bursts whose boundaries fall on the frame-shift grid, so every frame's label
is known exactly.  A frame owns the frame-shift interval starting at its first
sample and counts as speech when more than half of that interval is speech.
"""

from __future__ import annotations

import zlib
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.signal import fftconvolve

from .errors import ConfigError, DataError, FormatError
from .feats import AudioSignal, DEFAULT_SAMPLE_RATE, mel_band_edges, num_frames, read_wav, samples_per, write_wav
from .segmenter import from_segments, read_label_file, to_segments, write_label_file

ENV_MIN = 0.05
MIN_ENVELOPE_DISTANCE = 3.0  # L2 distance between log-envelopes
FIR_FFT = 512


@dataclass(frozen=True)
class SpeakerProfile:
    speaker_id: str
    envelope: np.ndarray  # per mel band gain in [ENV_MIN, 1]
    pitch: float


@dataclass
class Utterance:
    utt_id: str
    speaker_id: str
    audio: AudioSignal
    speech_labels: np.ndarray


@dataclass
class Conversation:
    conv_id: str
    audio: AudioSignal
    target_speaker_id: str
    sdvad_labels: np.ndarray
    speech_labels: np.ndarray
    utt_ids: tuple = ()


def _key(text: str) -> int:
    return zlib.crc32(text.encode("utf-8"))


def _draw_profile(speaker_id: str, seed: int, attempt: int, n_mels: int) -> SpeakerProfile:
    rng = np.random.default_rng([seed, _key(speaker_id), attempt])
    bands = np.arange(n_mels, dtype=np.float64)
    shape = rng.uniform(-0.3, 0.3) * bands / n_mels
    for _ in range(3):
        center = rng.uniform(0, n_mels - 1)
        width = rng.uniform(1.5, 4.0)
        shape = shape + rng.uniform(0.5, 1.0) * np.exp(-0.5 * ((bands - center) / width) ** 2)
    r = (shape - shape.min()) / (shape.max() - shape.min())
    envelope = ENV_MIN ** (1.0 - r)
    return SpeakerProfile(speaker_id, envelope, float(rng.uniform(80.0, 260.0)))


def make_profiles(speaker_ids, seed: int, n_mels: int = 36,
                  min_distance: float = MIN_ENVELOPE_DISTANCE) -> dict[str, SpeakerProfile]:
    """Profiles for ``speaker_ids`` in order, redrawing any envelope too close to an earlier one."""
    profiles: dict[str, SpeakerProfile] = {}
    for spk in speaker_ids:
        for attempt in range(1000):
            prof = _draw_profile(spk, seed, attempt, n_mels)
            logenv = np.log(prof.envelope)
            if all(np.linalg.norm(logenv - np.log(p.envelope)) >= min_distance for p in profiles.values()):
                break
        else:
            raise ConfigError(f"could not draw a distinct envelope for {spk}")
        profiles[spk] = prof
    return profiles


def _envelope_fir(profile: SpeakerProfile, sample_rate: int) -> np.ndarray:
    centers = mel_band_edges(len(profile.envelope), sample_rate)[1:-1]
    freqs = np.arange(FIR_FFT // 2 + 1) * sample_rate / FIR_FFT
    mag = np.exp(np.interp(freqs, centers, np.log(profile.envelope)))
    h = np.fft.irfft(mag, FIR_FFT)
    h = np.roll(h, FIR_FFT // 2)[FIR_FFT // 4: 3 * FIR_FFT // 4 + 1]
    return h * np.hanning(len(h))


def cell_labels(speech_mask: np.ndarray, n_frames: int, hop: int) -> np.ndarray:
    """Frame t is speech iff more than half of samples [t*hop, (t+1)*hop) are speech."""
    cells = np.zeros(n_frames * hop, dtype=np.int64)
    m = speech_mask[: n_frames * hop]
    cells[: len(m)] = m
    return (2 * cells.reshape(n_frames, hop).sum(axis=1) > hop).astype(np.int8)


def synth_utterance(profile: SpeakerProfile, duration: float, snr_db: float = 20.0, seed=0,
                    sample_rate: int = DEFAULT_SAMPLE_RATE, frame_length: float = 25.0,
                    frame_shift: float = 10.0, utt_id: str | None = None) -> Utterance:
    if duration < 0.5:
        raise ConfigError(f"utterance duration must be >= 0.5 s, got {duration}")
    rng = np.random.default_rng(seed)
    hop = samples_per(frame_shift, sample_rate)
    win = samples_per(frame_length, sample_rate)
    cells_per_s = 1000.0 / frame_shift
    n_cells = int(round(duration * cells_per_s))
    n_samples = n_cells * hop + (win - hop)

    # alternate silence / burst runs measured in frame-shift cells
    amp = np.zeros(n_samples)
    excitation = np.zeros(n_samples)
    pos = 0
    speaking = False
    ramp = samples_per(10.0, sample_rate)
    while pos < n_cells:
        lo, hi = (0.3, 1.5) if speaking else (0.2, 0.8)
        run = int(round(rng.uniform(lo, hi) * cells_per_s))
        end = min(n_cells, pos + run)
        if speaking:
            s0, s1 = pos * hop, end * hop
            n = s1 - s0
            gain = rng.uniform(0.3, 1.0)
            env = np.full(n, gain)
            k = min(ramp, n // 2)
            if k:
                rise = 0.5 - 0.5 * np.cos(np.pi * (np.arange(k) + 0.5) / k)
                env[:k] *= rise
                env[n - k:] *= rise[::-1]
            amp[s0:s1] = env
            t = np.arange(n) / sample_rate
            f0 = profile.pitch * (1.0 + 0.05 * np.sin(2 * np.pi * rng.uniform(2, 5) * t + rng.uniform(0, 2 * np.pi)))
            phase = np.cumsum(f0) / sample_rate + rng.uniform(0, 1)
            pulses = np.diff(np.floor(phase), prepend=np.floor(phase[0])) > 0
            excitation[s0:s1] = pulses + 0.05 * rng.standard_normal(n)
        pos = end
        speaking = not speaking

    voiced = fftconvolve(excitation, _envelope_fir(profile, sample_rate), mode="same") * amp
    speech = amp > 0
    if speech.any():
        voiced *= 0.1 / np.sqrt(np.mean(voiced[speech] ** 2))
    samples = voiced
    if np.isfinite(snr_db) and speech.any():
        noise_power = np.mean(voiced[speech] ** 2) / 10.0 ** (snr_db / 10.0)
        samples = voiced + np.sqrt(noise_power) * rng.standard_normal(n_samples)
    samples = np.clip(samples, -1.0, 1.0)
    labels = cell_labels(speech, num_frames(n_samples, win, hop), hop)
    return Utterance(utt_id or profile.speaker_id, profile.speaker_id, AudioSignal(samples, sample_rate), labels)


def make_conversation(utt_a: Utterance, utt_b: Utterance, target: str, conv_id: str = "conv",
                      frame_shift: float = 10.0) -> Conversation:
    """Join two single-speaker utterances; only the target's speech is positive.

    The first utterance is cut to a whole number of frame shifts so that the
    frame grid of the second continues seamlessly and the joined audio has
    exactly ``len(a) + len(b)`` frames.
    """
    if utt_a.speaker_id == utt_b.speaker_id:
        raise DataError(f"conversation needs two distinct speakers, got {utt_a.speaker_id} twice")
    if target not in (utt_a.speaker_id, utt_b.speaker_id):
        raise DataError(f"target {target} is not one of {utt_a.speaker_id}, {utt_b.speaker_id}")
    sr = utt_a.audio.sample_rate
    if utt_b.audio.sample_rate != sr:
        raise DataError("utterances have different sample rates")
    hop = samples_per(frame_shift, sr)
    head = utt_a.audio.samples[: len(utt_a.speech_labels) * hop]
    audio = AudioSignal(np.concatenate([head, utt_b.audio.samples]), sr)
    la, lb = utt_a.speech_labels, utt_b.speech_labels
    za, zb = np.zeros_like(la), np.zeros_like(lb)
    sdvad = np.concatenate([la, zb]) if target == utt_a.speaker_id else np.concatenate([za, lb])
    return Conversation(conv_id, audio, target, sdvad.astype(np.int8), np.concatenate([la, lb]).astype(np.int8),
                        (utt_a.utt_id, utt_b.utt_id))


# -- dataset on disk ---------------------------------------------------------------------

@dataclass(frozen=True)
class ManifestEntry:
    conv_id: str
    wav_path: str
    label_path: str
    target_speaker: str
    enroll_utt_ids: tuple


@dataclass(frozen=True)
class UttEntry:
    utt_id: str
    speaker_id: str
    split: str
    wav_path: str
    label_path: str
    enroll: bool


@dataclass
class Dataset:
    root: Path
    utterances: list = field(default_factory=list)
    manifests: dict = field(default_factory=dict)

    def utts(self, split: str | None = None, enroll: bool | None = None):
        return [u for u in self.utterances
                if (split is None or u.split == split) and (enroll is None or u.enroll == enroll)]

    def utt_by_id(self) -> dict:
        return {u.utt_id: u for u in self.utterances}


@dataclass
class CorpusConfig:
    n_train: int = 600
    n_dev: int = 8
    n_test: int = 8
    utts_per_speaker: int = 4
    n_enroll: int = 2
    min_duration: float = 2.0
    max_duration: float = 4.0
    snr_db: float = 20.0
    train_convs: int = 1500
    dev_convs: int = 64
    test_convs: int = 64
    n_mels: int = 36
    sample_rate: int = DEFAULT_SAMPLE_RATE
    frame_length: float = 25.0
    frame_shift: float = 10.0
    seed: int = 0


def split_speakers(cfg: CorpusConfig) -> dict[str, list[str]]:
    ids = [f"spk{i:03d}" for i in range(cfg.n_train + cfg.n_dev + cfg.n_test)]
    return {
        "train": ids[: cfg.n_train],
        "dev": ids[cfg.n_train: cfg.n_train + cfg.n_dev],
        "test": ids[cfg.n_train + cfg.n_dev:],
    }


def write_manifest(path, entries) -> None:
    lines = [f"{e.conv_id} {e.wav_path} {e.label_path} {e.target_speaker} {','.join(e.enroll_utt_ids)}"
             for e in entries]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def read_manifest(path) -> list[ManifestEntry]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        if not line.strip() or line.startswith("#"):
            continue
        parts = line.split()
        if len(parts) != 5:
            raise FormatError(f"{path}:{lineno}: expected 5 fields, got {len(parts)}")
        out.append(ManifestEntry(parts[0], parts[1], parts[2], parts[3], tuple(parts[4].split(","))))
    return out


def _write_utt_table(path, utts) -> None:
    lines = [f"{u.utt_id} {u.speaker_id} {u.split} {u.wav_path} {u.label_path} {int(u.enroll)}" for u in utts]
    Path(path).write_text("".join(line + "\n" for line in lines), encoding="utf-8")


def _read_utt_table(path) -> list[UttEntry]:
    out = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if len(parts) != 6:
            raise FormatError(f"{path}:{lineno}: expected 6 fields")
        out.append(UttEntry(parts[0], parts[1], parts[2], parts[3], parts[4], parts[5] == "1"))
    return out


def build_dataset(out_dir, cfg: CorpusConfig | None = None) -> Dataset:
    """Synthesize speakers, utterances and conversations for all splits and write them to ``out_dir``.

    Dev and test speakers keep their first ``n_enroll`` utterances for
    enrollment only; conversations never use them.  Each synthesized training
    conversation appears twice in the manifest, once with each of its speakers
    as the target, and every entry enrolls its target with ``n_enroll`` of the
    target's other utterances, drawn independently.
    """
    cfg = cfg or CorpusConfig()
    splits = split_speakers(cfg)
    if cfg.n_enroll >= cfg.utts_per_speaker:
        raise ConfigError("n_enroll must leave utterances for conversations")
    seen = set()
    for members in splits.values():
        if seen & set(members):
            raise ConfigError("speaker splits overlap")
        seen |= set(members)
    if min(cfg.n_train, cfg.n_dev, cfg.n_test) < 2:
        raise ConfigError("every split needs at least two speakers")

    root = Path(out_dir)
    (root / "wav").mkdir(parents=True, exist_ok=True)
    (root / "labels").mkdir(parents=True, exist_ok=True)
    profiles = make_profiles(seen_order(splits), cfg.seed, cfg.n_mels)
    ds = Dataset(root)
    cache: dict[str, Utterance] = {}
    for split, speakers in splits.items():
        for spk in speakers:
            for k in range(cfg.utts_per_speaker):
                utt_id = f"{spk}-u{k:02d}"
                urng = np.random.default_rng([cfg.seed, _key(spk), k])
                duration = float(urng.uniform(cfg.min_duration, cfg.max_duration))
                utt = synth_utterance(profiles[spk], duration, cfg.snr_db, [cfg.seed, _key(spk), k, 1],
                                      cfg.sample_rate, cfg.frame_length, cfg.frame_shift, utt_id)
                wav = root / "wav" / f"{utt_id}.wav"
                lab = root / "labels" / f"{utt_id}.txt"
                write_wav(wav, utt.audio)
                write_label_file(lab, [(utt_id, "speech", to_segments(utt.speech_labels))])
                # keep the quantized audio so conversations match what is on disk
                cache[utt_id] = Utterance(utt_id, spk, read_wav(wav), utt.speech_labels)
                enroll = split != "train" and k < cfg.n_enroll
                ds.utterances.append(UttEntry(utt_id, spk, split, str(wav.relative_to(root)),
                                              str(lab.relative_to(root)), enroll))
    _write_utt_table(root / "utterances.txt", ds.utterances)

    counts = {"train": cfg.train_convs, "dev": cfg.dev_convs, "test": cfg.test_convs}
    for split, speakers in splits.items():
        rng = np.random.default_rng([cfg.seed, _key(split)])
        entries = []
        while len(entries) < counts[split]:
            s, t = rng.choice(len(speakers), size=2, replace=False)
            target, other = speakers[s], speakers[t]
            pool = [u for u in ds.utts(split, enroll=False)]
            ua = rng.choice([u.utt_id for u in pool if u.speaker_id == target])
            ub = rng.choice([u.utt_id for u in pool if u.speaker_id == other])
            first, second = (ua, ub) if rng.random() < 0.5 else (ub, ua)
            wav = root / "wav" / f"{split}-c{len(entries):04d}.wav"
            # training audio is used once per speaker as target, so the audio
            # alone never determines the labels
            roles = [(target, ua), (other, ub)] if split == "train" else [(target, ua)]
            for k, (tgt, tgt_utt) in enumerate(roles[: counts[split] - len(entries)]):
                conv_id = f"{split}-c{len(entries):04d}"
                conv = make_conversation(cache[first], cache[second], tgt, conv_id, cfg.frame_shift)
                if k == 0:
                    write_wav(wav, conv.audio)
                lab = root / "labels" / f"{conv_id}.txt"
                write_label_file(lab, [(conv_id, "speech", to_segments(conv.speech_labels)),
                                       (conv_id, "target", to_segments(conv.sdvad_labels))])
                if split == "train":
                    # a fresh enrollment draw per conversation, sized as at test time
                    spare = sorted(u.utt_id for u in pool if u.speaker_id == tgt and u.utt_id != tgt_utt)
                    enroll_ids = tuple(sorted(rng.choice(spare, size=cfg.n_enroll, replace=False)))
                else:
                    enroll_ids = tuple(u.utt_id for u in ds.utts(split, enroll=True) if u.speaker_id == tgt)
                entries.append(ManifestEntry(conv_id, str(wav.relative_to(root)), str(lab.relative_to(root)),
                                             tgt, enroll_ids))
        write_manifest(root / f"{split}.manifest", entries)
        ds.manifests[split] = entries
    return ds


def seen_order(splits: dict) -> list[str]:
    return [spk for members in splits.values() for spk in members]


def load_dataset(root) -> Dataset:
    root = Path(root)
    if not (root / "utterances.txt").exists():
        raise DataError(f"{root}: no corpus found (run synth-corpus first)")
    ds = Dataset(root, _read_utt_table(root / "utterances.txt"))
    for split in ("train", "dev", "test"):
        path = root / f"{split}.manifest"
        if path.exists():
            ds.manifests[split] = read_manifest(path)
    return ds


def load_conversation_labels(path, conv_id: str, n_frames: int) -> tuple[np.ndarray, np.ndarray]:
    """(speech labels, target labels) of one conversation label file."""
    segs = read_label_file(path).get(conv_id, {})
    return from_segments(segs.get("speech", []), n_frames), from_segments(segs.get("target", []), n_frames)


# -- real corpora ------------------------------------------------------------------------

def load_real_corpus(wav_dir, label_file, label_frame_shift: float = 10.0, frame_length: float = 25.0,
                     frame_shift: float = 10.0) -> list[Utterance]:
    """Read every ``*.wav`` in ``wav_dir`` and project its labelled segments onto the engine frame grid.

    Segment boundaries in ``label_file`` are frame indices at ``label_frame_shift`` ms.
    """
    wav_dir = Path(wav_dir)
    labels = read_label_file(label_file) if Path(label_file).stat().st_size else {}
    wavs = {p.stem: p for p in sorted(wav_dir.glob("*.wav"))}
    missing = sorted(set(labels) - set(wavs))
    if missing:
        raise DataError(f"no audio for labelled utterance {missing[0]!r} in {wav_dir}")
    out = []
    for utt_id, path in wavs.items():
        audio = read_wav(path)
        sr = audio.sample_rate
        hop = samples_per(frame_shift, sr)
        win = samples_per(frame_length, sr)
        mask = np.zeros(len(audio.samples), dtype=bool)
        segs = labels.get(utt_id, {})
        for s, e in segs.get("speech", []) + segs.get("target", []):
            a = int(round(s * label_frame_shift * sr / 1000.0))
            b = int(round(e * label_frame_shift * sr / 1000.0))
            mask[a:b] = True
        lab = cell_labels(mask, num_frames(len(audio.samples), win, hop), hop)
        out.append(Utterance(utt_id, utt_id, audio, lab))
    return out
