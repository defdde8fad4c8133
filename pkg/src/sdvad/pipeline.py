"""Training recipes, the two-stage VAD/SV baseline, decoding and evaluation.

Every stage reads and writes artifacts under ``cfg.workdir`` so stages can be
run separately from the CLI or chained by :func:`run_all`.
"""

from __future__ import annotations

import json
import logging
from functools import lru_cache
from pathlib import Path

import numpy as np

from . import corpus as corpus_mod
from .config import EngineConfig
from .errors import ContractError, DataError
from .feats import FeatureMatrix, bin_labels, extract, mfcc, read_wav
from .metrics import ScoreAccumulator
from .nnet import TrainLog, fit, init_lstm, init_mlp, load_model, save_model
from .segmenter import from_segments, read_label_file, smooth_lookahead, to_segments, write_label_file
from .speaker import (GmmUbm, PldaModel, TvMatrix, bw_stats, eer_threshold, extract_ivector, length_normalize,
                      plda_score, pool_stats, train_plda, train_tv, train_ubm)
from .stream import assemble_inputs, decode_offline, decode_stream, merge_lookahead

log = logging.getLogger(__name__)


# -- shared front end --------------------------------------------------------------------

@lru_cache(maxsize=4096)
def _features_cached(path: str, stamp, n_mels: int, frame_length: float, frame_shift: float) -> FeatureMatrix:
    return extract(read_wav(path), n_mels, frame_length, frame_shift)


def features(cfg: EngineConfig, wav_path) -> FeatureMatrix:
    """Log-mel features; the same code path feeds the networks and the i-vector front end."""
    st = Path(wav_path).stat()
    return _features_cached(str(wav_path), (st.st_mtime_ns, st.st_size), cfg.n_mels, cfg.frame_length,
                            cfg.frame_shift)


def ceps(cfg: EngineConfig, wav_path) -> np.ndarray:
    return mfcc(features(cfg, wav_path), cfg.n_ceps).values


def _dataset(cfg: EngineConfig):
    return corpus_mod.load_dataset(cfg.path("corpus_dir"))


def _utt_speech_labels(ds, utt, n_frames: int) -> np.ndarray:
    segs = read_label_file(ds.root / utt.label_path).get(utt.utt_id, {})
    return from_segments(segs.get("speech", []), n_frames)


def _speech_ceps(cfg, ds, utt) -> np.ndarray:
    x = ceps(cfg, ds.root / utt.wav_path)
    return x[_utt_speech_labels(ds, utt, len(x)) == 1]


def _conversation(cfg, ds, entry):
    feats = features(cfg, ds.root / entry.wav_path)
    speech, target = corpus_mod.load_conversation_labels(ds.root / entry.label_path, entry.conv_id, feats.num_frames)
    return feats, speech, target


def _load(cfg: EngineConfig, name: str, stage: str):
    path = cfg.model_path(name)
    if not path.exists():
        raise DataError(f"missing {name} model at {path}; run `{stage}` first")
    return load_model(path)


def _save(cfg: EngineConfig, name: str, model) -> Path:
    path = cfg.model_path(name)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_model(model, path)
    return path


def _write_json(path, obj) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def vad_name(cfg: EngineConfig) -> str:
    return f"vad-{cfg.model_type}-b{cfg.bin}"


def sdvad_name(cfg: EngineConfig) -> str:
    return f"sdvad-{cfg.model_type}-b{cfg.bin}"


# -- stages ------------------------------------------------------------------------------

def run_synth_corpus(cfg: EngineConfig):
    return corpus_mod.build_dataset(cfg.path("corpus_dir"), cfg.corpus())


def run_train_ubm(cfg: EngineConfig) -> GmmUbm:
    ds = _dataset(cfg)
    feats = [_speech_ceps(cfg, ds, u) for u in ds.utts("train")]
    history: list = []
    ubm = train_ubm(feats, cfg.ubm_components, cfg.ubm_iters, cfg.seed, history).rounded()
    _save(cfg, "ubm", ubm)
    _write_json(cfg.path("model_dir") / "ubm.log.json", {"llk": history})
    return ubm


def _train_stats(cfg, ds, ubm):
    return [bw_stats(_speech_ceps(cfg, ds, u), ubm) for u in ds.utts("train")]


def run_train_tv(cfg: EngineConfig) -> TvMatrix:
    ds = _dataset(cfg)
    ubm = _load(cfg, "ubm", "train-ubm")
    history: list = []
    tv = train_tv(_train_stats(cfg, ds, ubm), ubm, cfg.tv_rank, cfg.tv_iters, cfg.seed, history).rounded()
    _save(cfg, "tv", tv)
    _write_json(cfg.path("model_dir") / "tv.log.json", {"objective": history})
    return tv


def run_train_plda(cfg: EngineConfig) -> PldaModel:
    ds = _dataset(cfg)
    ubm = _load(cfg, "ubm", "train-ubm")
    tv = _load(cfg, "tv", "train-tv")
    utts = ds.utts("train")
    ivecs = [length_normalize(extract_ivector(s, tv, ubm)) for s in _train_stats(cfg, ds, ubm)]
    plda = train_plda(ivecs, [u.speaker_id for u in utts]).rounded()
    _save(cfg, "plda", plda)
    return plda


def speaker_ivector(cfg, ds, utt_ids, ubm, tv):
    """Length-normalised i-vector from the pooled speech frames of ``utt_ids``."""
    table = ds.utt_by_id()
    missing = [u for u in utt_ids if u not in table]
    if missing or not utt_ids:
        raise DataError(f"missing enrollment utterances {missing or '(none listed)'}")
    stats = pool_stats(bw_stats(_speech_ceps(cfg, ds, table[u]), ubm) for u in utt_ids)
    return length_normalize(extract_ivector(stats, tv, ubm))


def _enrollments(cfg, ds, entries):
    ubm = _load(cfg, "ubm", "train-ubm")
    tv = _load(cfg, "tv", "train-tv")
    cache = {}
    out = []
    for e in entries:
        key = tuple(e.enroll_utt_ids)
        if key not in cache:
            cache[key] = speaker_ivector(cfg, ds, list(key), ubm, tv)
        out.append(cache[key])
    return out


def _sequences(cfg, ds, split: str, speaker_dependent: bool):
    entries = ds.manifests.get(split)
    if not entries:
        raise DataError(f"no {split} manifest; run synth-corpus first")
    if not speaker_dependent:
        # mirrored entries share audio and speech labels; keep one per recording
        seen = set()
        entries = [e for e in entries if not (e.wav_path in seen or seen.add(e.wav_path))]
    ivecs = _enrollments(cfg, ds, entries) if speaker_dependent else [None] * len(entries)
    data = []
    for e, iv in zip(entries, ivecs):
        feats, speech, target = _conversation(cfg, ds, e)
        labels = target if speaker_dependent else speech
        x = assemble_inputs(feats, _Shape(cfg), iv)
        data.append((x, bin_labels(labels, cfg.bin)))
    return data


class _Shape:
    """Stand-in exposing the input geometry a model will be built with."""

    def __init__(self, cfg):
        self.bin_n = cfg.bin
        self.context = cfg.context if cfg.model_type == "mlp" else 0


def _train_classifier(cfg: EngineConfig, speaker_dependent: bool, name: str):
    ds = _dataset(cfg)
    data = _sequences(cfg, ds, "train", speaker_dependent)
    dev = _sequences(cfg, ds, "dev", speaker_dependent)
    dim = data[0][0].shape[1]
    if cfg.model_type == "lstm":
        model = init_lstm(dim, cfg.hidden, cfg.layers, cfg.seed, cfg.bin)
    else:
        model = init_mlp(dim, (cfg.hidden,) * cfg.layers, cfg.seed, cfg.bin, cfg.context)
    model.fit_normalizer(np.vstack([x for x, _ in data]))
    train_log = TrainLog()
    epochs = cfg.epochs if speaker_dependent else cfg.vad_epochs
    model = fit(model, data, cfg.train(epochs), dev, train_log).rounded()
    _save(cfg, name, model)
    _write_json(cfg.path("model_dir") / f"{name}.log.json",
                {"epoch_loss": train_log.epoch_loss, "dev_acc": train_log.dev_acc})
    return model


def run_train_vad(cfg: EngineConfig):
    return _train_classifier(cfg, False, vad_name(cfg))


def run_train_sdvad(cfg: EngineConfig):
    return _train_classifier(cfg, True, sdvad_name(cfg))


# -- decoding ----------------------------------------------------------------------------

def system_name(cfg: EngineConfig, kind: str = "sdvad") -> str:
    name = f"{kind}-{cfg.model_type}-b{cfg.bin}"
    if cfg.smooth > 1 or cfg.min_gap or cfg.min_speech:
        name += f"-post{cfg.smooth}.{cfg.min_gap}.{cfg.min_speech}"
    return name


def _post_kw(cfg):
    return dict(theta=cfg.theta, W=cfg.smooth, min_gap=cfg.min_gap, min_speech=cfg.min_speech)


def run_infer(cfg: EngineConfig, split: str = "test", stream: bool = False, out_path=None) -> Path:
    """Decode every conversation of ``split`` with the speaker-dependent model."""
    ds = _dataset(cfg)
    model = _load(cfg, sdvad_name(cfg), "train-sdvad")
    entries = ds.manifests.get(split) or []
    ivecs = _enrollments(cfg, ds, entries)
    rows = []
    latency = None
    for e, iv in zip(entries, ivecs):
        feats = features(cfg, ds.root / e.wav_path)
        if stream:
            hyp = decode_stream(model, feats, iv, **_post_kw(cfg))
        else:
            hyp, _ = decode_offline(model, feats, iv, **_post_kw(cfg))
        rows.append((e.conv_id, "target", to_segments(hyp)))
    if stream:
        log.info("streaming latency %d frames", stream_latency(cfg, model))
    out = Path(out_path) if out_path else cfg.path("hyp_dir") / f"{system_name(cfg)}.{split}.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_label_file(out, rows)
    return out


def stream_latency(cfg: EngineConfig, model=None) -> int:
    """Frames between a frame's arrival and the emission of its final label."""
    model = model or _load(cfg, sdvad_name(cfg), "train-sdvad")
    use_merge = bool(cfg.min_gap or cfg.min_speech)
    return ((model.bin_n - 1) + model.context * model.bin_n + smooth_lookahead(cfg.smooth)
            + (merge_lookahead(cfg.min_gap, cfg.min_speech) if use_merge else 0))


def vad_segments(cfg: EngineConfig, vad_model, feats) -> list[tuple[int, int]]:
    """Stage one of the baseline: speaker-independent VAD with full post-processing."""
    labels, _ = decode_offline(vad_model, feats, None, cfg.theta, cfg.smooth, cfg.min_gap, cfg.min_speech)
    return to_segments(labels)


def run_baseline_vad_sv(cfg: EngineConfig, feats, vad_model, ubm, tv, plda, enroll_ivec, sv_threshold: float,
                        segments=None) -> np.ndarray:
    """Speaker-verify each VAD segment against the enrollment i-vector (offline)."""
    if enroll_ivec is None:
        raise DataError("baseline needs an enrollment i-vector")
    T = feats.num_frames
    segs = vad_segments(cfg, vad_model, feats) if segments is None else segments
    out = np.zeros(T, dtype=np.int8)
    if not segs:
        return out
    cep = mfcc(feats, cfg.n_ceps).values
    for s, e in segs:
        iv = length_normalize(extract_ivector(bw_stats(cep[s:e], ubm), tv, ubm))
        if plda_score(plda, enroll_ivec, iv) >= sv_threshold:
            out[s:e] = 1
    return out


def calibrate_sv(cfg: EngineConfig, ds, vad_model, ubm, tv, plda) -> dict:
    """EER threshold from segment trials on dev conversations."""
    entries = ds.manifests.get("dev") or []
    ivecs = _enrollments(cfg, ds, entries)
    tar, non = [], []
    for e, iv in zip(entries, ivecs):
        feats, _, target = _conversation(cfg, ds, e)
        cep = mfcc(feats, cfg.n_ceps).values
        for s, t in vad_segments(cfg, vad_model, feats):
            score = plda_score(plda, iv, length_normalize(extract_ivector(bw_stats(cep[s:t], ubm), tv, ubm)))
            (tar if 2 * target[s:t].sum() > (t - s) else non).append(score)
    eer, thr = eer_threshold(tar, non)
    return {"eer": eer, "threshold": thr, "n_target": len(tar), "n_nontarget": len(non)}


def run_baseline(cfg: EngineConfig, split: str = "test", out_path=None) -> Path:
    ds = _dataset(cfg)
    vad_model = _load(cfg, vad_name(cfg), "train-vad")
    ubm = _load(cfg, "ubm", "train-ubm")
    tv = _load(cfg, "tv", "train-tv")
    plda = _load(cfg, "plda", "train-plda")
    calib = calibrate_sv(cfg, ds, vad_model, ubm, tv, plda)
    _write_json(cfg.path("model_dir") / f"sv-calibration-{system_name(cfg, 'vadsv')}.json", calib)
    entries = ds.manifests.get(split) or []
    rows = []
    for e, iv in zip(entries, _enrollments(cfg, ds, entries)):
        feats = features(cfg, ds.root / e.wav_path)
        hyp = run_baseline_vad_sv(cfg, feats, vad_model, ubm, tv, plda, iv, calib["threshold"])
        rows.append((e.conv_id, "target", to_segments(hyp)))
    out = Path(out_path) if out_path else cfg.path("hyp_dir") / f"{system_name(cfg, 'vadsv')}.{split}.txt"
    out.parent.mkdir(parents=True, exist_ok=True)
    write_label_file(out, rows)
    return out


# -- evaluation --------------------------------------------------------------------------

def evaluate(references: dict, hypotheses: dict, tol: int = 10) -> dict:
    """Score ``{utt: labels}`` hypotheses against references.

    Utterances whose lengths disagree are skipped and listed under ``errors``.
    """
    acc = ScoreAccumulator(tol)
    per_utt, errors = {}, {}
    for utt, ref in references.items():
        hyp = hypotheses.get(utt)
        if hyp is None:
            errors[utt] = "missing hypothesis"
            continue
        if len(hyp) != len(ref):
            errors[utt] = f"length mismatch: reference {len(ref)} frames, hypothesis {len(hyp)}"
            continue
        fs, jv = acc.add(ref, hyp)
        per_utt[utt] = {"frame": fs.as_dict(), "segment": jv.as_dict()}
    return {"utterances": per_utt, "errors": errors,
            "aggregate": {"frame": acc.frames.as_dict(), "segment": acc.report().as_dict()}}


def run_eval(cfg: EngineConfig, hyp_files: dict, split: str = "test", out_path=None, label: str = "target") -> dict:
    ds = _dataset(cfg)
    entries = ds.manifests.get(split) or []
    refs = {}
    for e in entries:
        feats = features(cfg, ds.root / e.wav_path)
        speech, target = corpus_mod.load_conversation_labels(ds.root / e.label_path, e.conv_id, feats.num_frames)
        refs[e.conv_id] = target if label == "target" else speech
    systems = {}
    for name, path in hyp_files.items():
        segs = read_label_file(path)
        hyps = {}
        for utt, ref in refs.items():
            spans = segs.get(utt, {}).get(label, [])
            try:
                hyps[utt] = from_segments(spans, len(ref))
            except ContractError:
                hyps[utt] = np.zeros(max([e for _, e in spans] + [0]), dtype=np.int8)
        systems[name] = evaluate(refs, hyps, cfg.tol)
    table = [{"system": name, **{k: r["aggregate"]["frame"][k] for k in ("acc", "f1")},
              **{k: r["aggregate"]["segment"][k] for k in ("sba", "eba", "bp", "jvad")}}
             for name, r in systems.items()]
    report = {"split": split, "tol": cfg.tol, "systems": systems, "comparison": table}
    out = Path(out_path) if out_path else cfg.path("hyp_dir") / f"report.{split}.json"
    _write_json(out, report)
    return report


# -- everything --------------------------------------------------------------------------

POST = dict(smooth=10, min_gap=10, min_speech=10)


def run_all(cfg: EngineConfig, binned: int = 4, split: str = "test") -> dict:
    """Corpus, speaker models, VAD and SDVAD training, decoding and one comparison report."""
    run_synth_corpus(cfg)
    run_train_ubm(cfg)
    run_train_tv(cfg)
    run_train_plda(cfg)
    raw = cfg.updated(bin=1)
    run_train_vad(raw)
    run_train_sdvad(raw)
    run_train_sdvad(raw.updated(bin=binned))
    hyps = {
        "lstm_vad_sv": run_baseline(raw.updated(**POST), split),
        "sdvad": run_infer(raw, split),
        "sdvad_post": run_infer(raw.updated(**POST), split),
        "sdvad_bin": run_infer(raw.updated(bin=binned), split),
        "sdvad_bin_post": run_infer(raw.updated(bin=binned, **POST), split),
    }
    return run_eval(cfg, {k: str(v) for k, v in hyps.items()}, split)
