"""Frame classifiers (tanh MLP and stacked LSTM) trained with cross entropy.

Both models share the same outline: a fixed per-dimension input normalisation
(fitted once on training data, never trained), the network body, and a
two-way softmax whose second column is the speech / target posterior.

Training runs on padded mini-batches with explicit backpropagation.
Inference goes through the per-frame ``step`` functions so that offline and
streaming decoding perform identical arithmetic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, FormatError, TrainingDivergedError
from .feats import FeatureMatrix
from .serialize import load_tensors, require, save_tensors, to_float32_grid

log = logging.getLogger(__name__)

PROB_FLOOR = 1e-12


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def softmax(z):
    z = z - z.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def attach_speaker(feats, ivec) -> FeatureMatrix | np.ndarray:
    """Append the same speaker embedding to every frame."""
    emb = np.asarray(getattr(ivec, "values", ivec), dtype=np.float64).ravel()
    x = getattr(feats, "values", feats)
    x = np.asarray(x, dtype=np.float64)
    out = np.hstack([x, np.broadcast_to(emb, (x.shape[0], emb.size))])
    return feats.with_values(out) if isinstance(feats, FeatureMatrix) else out


# -- models ------------------------------------------------------------------------------

@dataclass
class _Model:
    params: dict[str, np.ndarray]
    in_shift: np.ndarray
    in_scale: np.ndarray
    bin_n: int = 1
    context: int = 0

    prefix = ""

    @property
    def input_dim(self) -> int:
        return len(self.in_shift)

    def normalize(self, x):
        return (x - self.in_shift) * self.in_scale

    def copy(self):
        return type(self)({k: v.copy() for k, v in self.params.items()}, self.in_shift.copy(),
                          self.in_scale.copy(), self.bin_n, self.context)

    def rounded(self):
        m = self.copy()
        m.params = {k: to_float32_grid(v) for k, v in m.params.items()}
        m.in_shift = to_float32_grid(m.in_shift)
        m.in_scale = to_float32_grid(m.in_scale)
        return m

    def to_tensors(self) -> dict:
        t = {f"{self.prefix}.{k}": v for k, v in self.params.items()}
        t[f"{self.prefix}.in_shift"] = self.in_shift
        t[f"{self.prefix}.in_scale"] = self.in_scale
        t[f"{self.prefix}.meta"] = np.array([self.bin_n, self.context], dtype=np.float64)
        return t

    @classmethod
    def from_tensors(cls, t: dict):
        p = cls.prefix + "."
        meta = require(t, p + "meta", 1, cls.prefix)
        if meta.shape != (2,):
            raise FormatError(f"{cls.prefix}.meta must hold 2 values")
        params = {k[len(p):]: v for k, v in t.items()
                  if k.startswith(p) and k[len(p):] not in ("in_shift", "in_scale", "meta")}
        model = cls(params, require(t, p + "in_shift", 1, cls.prefix), require(t, p + "in_scale", 1, cls.prefix),
                    int(meta[0]), int(meta[1]))
        model.validate()
        return model

    def fit_normalizer(self, rows: np.ndarray):
        mean = rows.mean(axis=0)
        std = rows.std(axis=0)
        self.in_shift = mean
        self.in_scale = np.where(std > 1e-8, 1.0 / np.maximum(std, 1e-8), 1.0)
        return self


class MlpModel(_Model):
    prefix = "mlp"

    @property
    def n_hidden(self) -> int:
        return sum(1 for k in self.params if k.endswith(".W")) - 1

    def layers(self):
        names = [f"l{i}" for i in range(self.n_hidden)] + ["out"]
        return [(self.params[n + ".W"], self.params[n + ".b"]) for n in names]

    def validate(self):
        prev = self.input_dim
        for W, b in self.layers():
            if W.ndim != 2 or W.shape[0] != prev or b.shape != (W.shape[1],):
                raise FormatError(f"inconsistent MLP layer shapes {W.shape}, {b.shape}")
            prev = W.shape[1]
        if prev != 2:
            raise FormatError("MLP output layer must have 2 units")

    def step(self, row) -> np.ndarray:
        h = self.normalize(np.asarray(row, dtype=np.float64)[None, :])
        layers = self.layers()
        for W, b in layers[:-1]:
            h = np.tanh(h @ W + b)
        W, b = layers[-1]
        return softmax(h @ W + b)[0]


class LstmModel(_Model):
    prefix = "lstm"

    @property
    def n_layers(self) -> int:
        return sum(1 for k in self.params if k.endswith(".Wx"))

    @property
    def hidden(self) -> int:
        return self.params["l0.Wh"].shape[0]

    def validate(self):
        prev = self.input_dim
        for l in range(self.n_layers):
            Wx, Wh, b = (self.params.get(f"l{l}.{k}") for k in ("Wx", "Wh", "b"))
            if Wx is None or Wh is None or b is None:
                raise FormatError(f"LSTM layer {l} is incomplete")
            H = Wh.shape[0]
            if Wx.shape != (prev, 4 * H) or Wh.shape != (H, 4 * H) or b.shape != (4 * H,):
                raise FormatError(f"inconsistent LSTM layer {l} shapes")
            prev = H
        if self.params["out.W"].shape != (prev, 2) or self.params["out.b"].shape != (2,):
            raise FormatError("inconsistent LSTM output layer")

    def init_state(self):
        H = [self.params[f"l{l}.Wh"].shape[0] for l in range(self.n_layers)]
        return [(np.zeros((1, h)), np.zeros((1, h))) for h in H]

    def step(self, state, row):
        """Advance one frame; returns ``(posterior pair, new state)``."""
        x = self.normalize(np.asarray(row, dtype=np.float64)[None, :])
        new_state = []
        for l, (h, c) in enumerate(state):
            p = self.params
            z = x @ p[f"l{l}.Wx"] + h @ p[f"l{l}.Wh"] + p[f"l{l}.b"]
            H = h.shape[1]
            i = sigmoid(z[:, :H])
            f = sigmoid(z[:, H:2 * H])
            o = sigmoid(z[:, 2 * H:3 * H])
            g = np.tanh(z[:, 3 * H:])
            c = f * c + i * g
            h = o * np.tanh(c)
            new_state.append((h, c))
            x = h
        out = softmax(x @ self.params["out.W"] + self.params["out.b"])[0]
        return out, new_state


def init_mlp(input_dim: int, hidden=(64, 64), seed: int = 0, bin_n: int = 1, context: int = 0) -> MlpModel:
    rng = np.random.default_rng(seed)
    params = {}
    dims = [input_dim, *hidden, 2]
    names = [f"l{i}" for i in range(len(hidden))] + ["out"]
    for name, fan_in, fan_out in zip(names, dims[:-1], dims[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        params[name + ".W"] = rng.uniform(-bound, bound, (fan_in, fan_out))
        params[name + ".b"] = rng.uniform(-bound, bound, fan_out)
    return MlpModel(params, np.zeros(input_dim), np.ones(input_dim), bin_n, context)


def init_lstm(input_dim: int, hidden: int = 64, layers: int = 2, seed: int = 0, bin_n: int = 1) -> LstmModel:
    rng = np.random.default_rng(seed)
    params = {}
    prev = input_dim
    for l in range(layers):
        bound = 1.0 / np.sqrt(prev + hidden)
        params[f"l{l}.Wx"] = rng.uniform(-bound, bound, (prev, 4 * hidden))
        params[f"l{l}.Wh"] = rng.uniform(-bound, bound, (hidden, 4 * hidden))
        b = rng.uniform(-bound, bound, 4 * hidden)
        b[hidden:2 * hidden] = 1.0
        params[f"l{l}.b"] = b
        prev = hidden
    bound = 1.0 / np.sqrt(prev)
    params["out.W"] = rng.uniform(-bound, bound, (prev, 2))
    params["out.b"] = rng.uniform(-bound, bound, 2)
    return LstmModel(params, np.zeros(input_dim), np.ones(input_dim), bin_n, 0)


# -- inference ---------------------------------------------------------------------------

def mlp_forward(model: MlpModel, row) -> np.ndarray:
    row = np.asarray(row, dtype=np.float64)
    if row.shape != (model.input_dim,):
        raise ContractError(f"MLP expects {model.input_dim} inputs, got {row.shape}")
    return model.step(row)


def lstm_forward(model: LstmModel, sequence) -> np.ndarray:
    """Causal frame posteriors, shape (T, 2), starting from zero state."""
    X = np.asarray(getattr(sequence, "values", sequence), dtype=np.float64)
    if X.shape[0] == 0:
        return np.zeros((0, 2))
    if X.shape[1] != model.input_dim:
        raise ContractError(f"LSTM expects {model.input_dim} inputs, got {X.shape[1]}")
    state = model.init_state()
    out = np.empty((X.shape[0], 2))
    for t in range(X.shape[0]):
        out[t], state = model.step(state, X[t])
    return out


def predict(model, X) -> np.ndarray:
    """Posteriors (T, 2) for an already-assembled input matrix."""
    X = np.asarray(getattr(X, "values", X), dtype=np.float64)
    if isinstance(model, LstmModel):
        return lstm_forward(model, X)
    if X.shape[0] == 0:
        return np.zeros((0, 2))
    return np.array([mlp_forward(model, row) for row in X])


def cross_entropy(posteriors, labels) -> float:
    P = np.asarray(posteriors, dtype=np.float64)
    y = np.asarray(labels).astype(int)
    if len(P) != len(y):
        raise ContractError(f"{len(P)} posteriors vs {len(y)} labels")
    if len(y) == 0:
        return 0.0
    p_true = P[np.arange(len(y)), y]
    return float(np.mean(-np.log(np.maximum(p_true, PROB_FLOOR))))


# -- training ----------------------------------------------------------------------------

@dataclass
class TrainConfig:
    learning_rate: float = 0.3
    epochs: int = 8
    batch_size: int = 8
    seed: int = 0
    clip_norm: float = 5.0
    keep_best: bool = True

    def __post_init__(self):
        if not self.learning_rate >= 0:
            raise ContractError("learning rate must be non-negative")


def _pad(batch):
    lengths = np.array([len(y) for _, y in batch])
    Tm = int(lengths.max())
    D = np.asarray(batch[0][0]).shape[1]
    X = np.zeros((len(batch), Tm, D))
    Y = np.zeros((len(batch), Tm), dtype=int)
    mask = np.zeros((len(batch), Tm))
    for k, (x, y) in enumerate(batch):
        n = len(y)
        X[k, :n] = np.asarray(getattr(x, "values", x))
        Y[k, :n] = y
        mask[k, :n] = 1.0
    return X, Y, mask


def _output_grad(logits, Y, mask):
    P = softmax(logits)
    n = mask.sum()
    p_true = np.take_along_axis(P, Y[..., None], axis=-1)[..., 0]
    loss = float(np.sum(-np.log(np.maximum(p_true, PROB_FLOOR)) * mask) / n)
    dlogits = P.copy()
    np.put_along_axis(dlogits, Y[..., None], np.take_along_axis(dlogits, Y[..., None], -1) - 1.0, -1)
    dlogits *= (mask / n)[..., None]
    return loss, dlogits


def mlp_loss_and_grads(model: MlpModel, batch):
    X, Y, mask = _pad(batch)
    h = model.normalize(X)
    acts = [h]
    layers = model.layers()
    for W, b in layers[:-1]:
        h = np.tanh(h @ W + b)
        acts.append(h)
    W, b = layers[-1]
    loss, dz = _output_grad(h @ W + b, Y, mask)
    names = [f"l{i}" for i in range(len(layers) - 1)] + ["out"]
    grads = {}
    for k in range(len(layers) - 1, -1, -1):
        W, _ = layers[k]
        a = acts[k]
        grads[names[k] + ".W"] = a.reshape(-1, a.shape[-1]).T @ dz.reshape(-1, dz.shape[-1])
        grads[names[k] + ".b"] = dz.reshape(-1, dz.shape[-1]).sum(axis=0)
        if k:
            dz = (dz @ W.T) * (1.0 - acts[k] ** 2)
    return loss, grads


def lstm_loss_and_grads(model: LstmModel, batch):
    X, Y, mask = _pad(batch)
    B, Tm, _ = X.shape
    p = model.params
    inp = model.normalize(X)
    caches = []
    for l in range(model.n_layers):
        Wx, Wh, bias = p[f"l{l}.Wx"], p[f"l{l}.Wh"], p[f"l{l}.b"]
        H = Wh.shape[0]
        XW = inp @ Wx + bias
        gates = np.empty((B, Tm, 4 * H))
        cs = np.empty((B, Tm + 1, H))
        hs = np.empty((B, Tm + 1, H))
        cs[:, 0] = 0.0
        hs[:, 0] = 0.0
        for t in range(Tm):
            z = XW[:, t] + hs[:, t] @ Wh
            ifo = sigmoid(z[:, :3 * H])
            g = np.tanh(z[:, 3 * H:])
            gates[:, t, :3 * H] = ifo
            gates[:, t, 3 * H:] = g
            cs[:, t + 1] = ifo[:, H:2 * H] * cs[:, t] + ifo[:, :H] * g
            hs[:, t + 1] = ifo[:, 2 * H:] * np.tanh(cs[:, t + 1])
        caches.append((inp, gates, cs, hs))
        inp = hs[:, 1:]
    loss, dlogits = _output_grad(inp @ p["out.W"] + p["out.b"], Y, mask)
    grads = {
        "out.W": inp.reshape(-1, inp.shape[-1]).T @ dlogits.reshape(-1, 2),
        "out.b": dlogits.reshape(-1, 2).sum(axis=0),
    }
    dH = dlogits @ p["out.W"].T
    for l in range(model.n_layers - 1, -1, -1):
        Wx, Wh = p[f"l{l}.Wx"], p[f"l{l}.Wh"]
        H = Wh.shape[0]
        layer_in, gates, cs, hs = caches[l]
        dZ = np.empty((B, Tm, 4 * H))
        dh_next = np.zeros((B, H))
        dc_next = np.zeros((B, H))
        for t in range(Tm - 1, -1, -1):
            i, f, o = gates[:, t, :H], gates[:, t, H:2 * H], gates[:, t, 2 * H:3 * H]
            g = gates[:, t, 3 * H:]
            tc = np.tanh(cs[:, t + 1])
            dh = dH[:, t] + dh_next
            dc = dh * o * (1.0 - tc ** 2) + dc_next
            dz = dZ[:, t]
            dz[:, :H] = dc * g * i * (1.0 - i)
            dz[:, H:2 * H] = dc * cs[:, t] * f * (1.0 - f)
            dz[:, 2 * H:3 * H] = dh * tc * o * (1.0 - o)
            dz[:, 3 * H:] = dc * i * (1.0 - g ** 2)
            dc_next = dc * f
            dh_next = dz @ Wh.T
        flat_dZ = dZ.reshape(-1, 4 * H)
        grads[f"l{l}.Wx"] = layer_in.reshape(-1, layer_in.shape[-1]).T @ flat_dZ
        grads[f"l{l}.Wh"] = hs[:, :-1].reshape(-1, H).T @ flat_dZ
        grads[f"l{l}.b"] = flat_dZ.sum(axis=0)
        if l:
            dH = dZ @ Wx.T
    return loss, grads


def loss_and_grads(model, batch):
    if isinstance(model, LstmModel):
        return lstm_loss_and_grads(model, batch)
    return mlp_loss_and_grads(model, batch)


def train_step(model, batch, config: TrainConfig):
    """One clipped SGD update; returns the updated copy and the batch loss."""
    loss, grads = loss_and_grads(model, batch)
    if not np.isfinite(loss):
        raise TrainingDivergedError(f"training loss became {loss}")
    norm = np.sqrt(sum(float(np.sum(g ** 2)) for g in grads.values()))
    scale = 1.0
    if config.clip_norm and norm > config.clip_norm:
        scale = config.clip_norm / norm
    new = model.copy()
    if config.learning_rate:
        for k, g in grads.items():
            new.params[k] = new.params[k] - config.learning_rate * scale * g
    return new, loss


def grad_check(model, batch, eps: float = 1e-5) -> float:
    """Largest relative gap between analytic and central-difference gradients."""
    _, grads = loss_and_grads(model, batch)
    worst = 0.0
    probe = model.copy()
    for name, g in grads.items():
        theta = probe.params[name]
        for idx in np.ndindex(theta.shape):
            orig = theta[idx]
            theta[idx] = orig + eps
            up, _ = loss_and_grads(probe, batch)
            theta[idx] = orig - eps
            down, _ = loss_and_grads(probe, batch)
            theta[idx] = orig
            num = (up - down) / (2 * eps)
            ana = g[idx]
            worst = max(worst, abs(ana - num) / max(abs(ana), abs(num), 1e-8))
    return worst


@dataclass
class TrainLog:
    epoch_loss: list = field(default_factory=list)
    dev_acc: list = field(default_factory=list)


def fit(model, data, config: TrainConfig, dev=None, train_log: TrainLog | None = None):
    """Mini-batch SGD over ``data``, a list of ``(inputs, labels)`` sequences.

    ``dev`` is an optional list of the same form scored for frame accuracy
    after every epoch.  With ``config.keep_best`` the parameters of the epoch
    with the highest dev accuracy are returned (earliest on ties).
    """
    rng = np.random.default_rng(config.seed)
    best, best_acc = model, -1.0
    for epoch in range(config.epochs):
        order = rng.permutation(len(data))
        losses, weights = [], []
        for k in range(0, len(order), config.batch_size):
            batch = [data[j] for j in order[k:k + config.batch_size]]
            model, loss = train_step(model, batch, config)
            losses.append(loss)
            weights.append(sum(len(y) for _, y in batch))
        mean_loss = float(np.average(losses, weights=weights)) if losses else float("nan")
        dev_acc = None
        if dev:
            hits = total = 0
            for x, y in dev:
                post = predict(model, x)
                hits += int(np.sum((post[:, 1] >= 0.5) == (np.asarray(y) == 1)))
                total += len(y)
            dev_acc = hits / total
        if train_log is not None:
            train_log.epoch_loss.append(mean_loss)
            train_log.dev_acc.append(dev_acc)
        log.info("epoch %d loss %.4f dev_acc %s", epoch + 1, mean_loss, dev_acc)
        if dev_acc is not None and dev_acc > best_acc:
            best, best_acc = model, dev_acc
    if config.keep_best and best_acc >= 0:
        return best
    return model


# -- persistence -------------------------------------------------------------------------

def save_model(model, path) -> None:
    save_tensors(path, model.to_tensors())


def load_model(path):
    from .speaker import GmmUbm, PldaModel, TvMatrix

    tensors = load_tensors(path)
    kinds = {"mlp": MlpModel, "lstm": LstmModel, "ubm": GmmUbm, "tv": TvMatrix, "plda": PldaModel}
    prefixes = {name.split(".", 1)[0] for name in tensors}
    if len(prefixes) != 1 or next(iter(prefixes)) not in kinds:
        raise FormatError(f"{path}: cannot determine model kind from tensor prefixes {sorted(prefixes)}")
    return kinds[prefixes.pop()].from_tensors(tensors)
