"""Speaker modelling: diagonal GMM-UBM, total variability, i-vectors and PLDA."""

from __future__ import annotations

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy.special import logsumexp

from .errors import ContractError, DataError, FormatError, NormalizationError, NumericalError
from .serialize import require, to_float32_grid

log = logging.getLogger(__name__)

VAR_FLOOR_RATIO = 1e-4
PLDA_REG = 1e-6


def _as_matrix(x) -> np.ndarray:
    values = getattr(x, "values", x)
    return np.asarray(values, dtype=np.float64)


# -- UBM ---------------------------------------------------------------------------------

@dataclass(frozen=True)
class GmmUbm:
    weights: np.ndarray
    means: np.ndarray
    variances: np.ndarray

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    def log_component_densities(self, X: np.ndarray) -> np.ndarray:
        """``log w_c + log N(x_t; mu_c, diag var_c)`` as a (T, C) array."""
        prec = 1.0 / self.variances
        const = -0.5 * (self.dim * np.log(2 * np.pi) + np.log(self.variances).sum(axis=1)
                        + (self.means ** 2 * prec).sum(axis=1))
        with np.errstate(divide="ignore"):
            logw = np.log(self.weights)
        quad = -0.5 * (X ** 2) @ prec.T + X @ (self.means * prec).T
        return quad + const + logw

    def posteriors(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Responsibilities (T, C) and per-frame log-likelihoods (T,)."""
        lc = self.log_component_densities(X)
        ll = logsumexp(lc, axis=1)
        return np.exp(lc - ll[:, None]), ll

    def total_log_likelihood(self, X) -> float:
        X = _as_matrix(X)
        return float(self.posteriors(X)[1].sum()) if len(X) else 0.0

    def to_tensors(self) -> dict:
        return {"ubm.weights": self.weights, "ubm.means": self.means, "ubm.variances": self.variances}

    @classmethod
    def from_tensors(cls, t: dict) -> "GmmUbm":
        return cls(require(t, "ubm.weights", 1), require(t, "ubm.means", 2), require(t, "ubm.variances", 2))

    def rounded(self) -> "GmmUbm":
        w = to_float32_grid(self.weights)
        return GmmUbm(w, to_float32_grid(self.means), to_float32_grid(self.variances))


def _kmeans_init(X: np.ndarray, C: int, rng: np.random.Generator, iters: int = 5) -> np.ndarray:
    centers = X[rng.choice(len(X), size=C, replace=False)].copy()
    for _ in range(iters):
        d2 = (X ** 2).sum(1)[:, None] - 2 * X @ centers.T + (centers ** 2).sum(1)[None, :]
        assign = d2.argmin(axis=1)
        for c in range(C):
            members = X[assign == c]
            if len(members):
                centers[c] = members.mean(axis=0)
    return centers


def train_ubm(features, C: int = 64, iters: int = 20, seed: int = 0, history: list | None = None) -> GmmUbm:
    """EM for a diagonal-covariance GMM, seeded k-means initialisation.

    ``history``, when given, receives the total log-likelihood of the model
    at the start of each iteration plus that of the returned model.
    """
    X = np.vstack([_as_matrix(f) for f in features]) if len(features) else np.zeros((0, 0))
    if not np.all(np.isfinite(X)):
        raise DataError("UBM training features contain non-finite values")
    if len(X) < 10 * C:
        raise DataError(f"UBM with {C} components needs at least {10 * C} frames, got {len(X)}")
    rng = np.random.default_rng(seed)
    floor = VAR_FLOOR_RATIO * X.var(axis=0)
    floor = np.maximum(floor, np.finfo(np.float64).tiny)

    means = _kmeans_init(X, C, rng)
    d2 = (X ** 2).sum(1)[:, None] - 2 * X @ means.T + (means ** 2).sum(1)[None, :]
    resp = np.zeros((len(X), C))
    resp[np.arange(len(X)), d2.argmin(axis=1)] = 1.0
    ubm = _m_step(X, resp, means, floor)

    for it in range(iters):
        resp, ll = ubm.posteriors(X)
        if history is not None:
            history.append(float(ll.sum()))
        log.debug("ubm iter %d llk/frame %.5f", it, ll.mean())
        ubm = _m_step(X, resp, ubm.means, floor)
    if history is not None:
        history.append(ubm.total_log_likelihood(X))
    return ubm


def _m_step(X, resp, old_means, floor) -> GmmUbm:
    occ = resp.sum(axis=0)
    weights = occ / occ.sum()
    means = old_means.copy()
    variances = np.tile(floor, (len(occ), 1))
    live = occ > 1e-10
    first = resp[:, live].T @ X
    second = resp[:, live].T @ (X ** 2)
    means[live] = first / occ[live, None]
    variances[live] = second / occ[live, None] - means[live] ** 2
    return GmmUbm(weights, means, np.maximum(variances, floor))


# -- sufficient statistics and total variability ------------------------------------------

@dataclass(frozen=True)
class BwStats:
    N: np.ndarray  # (C,)
    F: np.ndarray  # (C, F) centred on the UBM means


def bw_stats(features, ubm: GmmUbm) -> BwStats:
    X = _as_matrix(features)
    if X.size == 0:
        return BwStats(np.zeros(ubm.n_components), np.zeros((ubm.n_components, ubm.dim)))
    if X.shape[1] != ubm.dim:
        raise ContractError(f"features have dimension {X.shape[1]}, UBM expects {ubm.dim}")
    gamma, _ = ubm.posteriors(X)
    N = gamma.sum(axis=0)
    F = gamma.T @ X - N[:, None] * ubm.means
    return BwStats(N, F)


def pool_stats(stats) -> BwStats:
    stats = list(stats)
    return BwStats(sum(s.N for s in stats), sum(s.F for s in stats))


@dataclass(frozen=True)
class TvMatrix:
    T: np.ndarray  # (C, F, d)

    @property
    def rank(self) -> int:
        return self.T.shape[2]

    def to_tensors(self) -> dict:
        return {"tv.T": self.T}

    @classmethod
    def from_tensors(cls, t: dict) -> "TvMatrix":
        return cls(require(t, "tv.T", 3))

    def rounded(self) -> "TvMatrix":
        return TvMatrix(to_float32_grid(self.T))


def _posteriors_w(Ns, Fs, T, variances):
    """Per-utterance precision L_u, linear term b_u and posterior mean of w."""
    prec = 1.0 / variances  # (C, F)
    TT = np.einsum("cfi,cf,cfj->cij", T, prec, T)
    d = T.shape[2]
    L = np.eye(d)[None] + np.einsum("uc,cij->uij", Ns, TT)
    b = np.einsum("ucf,cf,cfi->ui", Fs, prec, T)
    Ew = np.linalg.solve(L, b[..., None])[..., 0]
    return L, b, Ew


def tv_objective(stats, tv: TvMatrix, ubm: GmmUbm) -> float:
    """Marginal log-likelihood of the statistics up to a T-independent constant."""
    Ns = np.array([s.N for s in stats])
    Fs = np.array([s.F for s in stats])
    L, b, Ew = _posteriors_w(Ns, Fs, tv.T, ubm.variances)
    _, logdet = np.linalg.slogdet(L)
    return float(np.sum(-0.5 * logdet + 0.5 * np.einsum("ui,ui->u", b, Ew)))


def train_tv(stats, ubm: GmmUbm, d: int = 32, iters: int = 10, seed: int = 0,
             history: list | None = None, min_divergence: bool = True) -> TvMatrix:
    """EM estimate of the total variability matrix from per-utterance statistics.

    Each M-step is followed by a minimum-divergence rescaling of ``T`` unless
    ``min_divergence`` is false.
    """
    stats = list(stats)
    if len(stats) < d:
        raise DataError(f"total variability of rank {d} needs at least {d} utterances, got {len(stats)}")
    Ns = np.array([s.N for s in stats])
    Fs = np.array([s.F for s in stats])
    if not (np.all(np.isfinite(Ns)) and np.all(np.isfinite(Fs))):
        raise DataError("non-finite Baum-Welch statistics")
    C, F = ubm.means.shape
    rng = np.random.default_rng(seed)
    T = rng.standard_normal((C, F, d)) * np.sqrt(ubm.variances)[..., None] * 0.1

    for it in range(iters):
        L, b, Ew = _posteriors_w(Ns, Fs, T, ubm.variances)
        if history is not None:
            _, logdet = np.linalg.slogdet(L)
            history.append(float(np.sum(-0.5 * logdet + 0.5 * np.einsum("ui,ui->u", b, Ew))))
        Eww = np.linalg.inv(L) + Ew[:, :, None] * Ew[:, None, :]
        A = np.einsum("uc,uij->cij", Ns, Eww)
        Cacc = np.einsum("ucf,ui->cfi", Fs, Ew)
        T = np.empty_like(T)
        for c in range(C):
            cond = np.linalg.cond(A[c])
            if not np.isfinite(cond) or cond > 1e13:
                occupied = int(np.sum(Ns[:, c] > 1e-3))
                raise NumericalError(
                    f"total variability accumulator for component {c} is singular "
                    f"(cond={cond:.3g}, occupancy {Ns[:, c].sum():.3g} over {occupied} of {len(stats)} utterances)")
            T[c] = np.linalg.solve(A[c], Cacc[c].T).T
        if min_divergence:
            # re-whiten the latent prior: the likelihood is unchanged by T -> T G^{1/2}
            # once the posteriors are mapped accordingly, and this removes the slow
            # scale drift of plain EM
            G = Eww.mean(axis=0)
            T = T @ np.linalg.cholesky(0.5 * (G + G.T))
        log.debug("tv iter %d done", it)
    if history is not None:
        history.append(tv_objective(stats, TvMatrix(T), ubm))
    return TvMatrix(T)


# -- i-vectors ---------------------------------------------------------------------------

@dataclass(frozen=True)
class IVector:
    values: np.ndarray
    normalized: bool = False

    @property
    def dim(self) -> int:
        return len(self.values)


def extract_ivector(stats: BwStats, tv: TvMatrix, ubm: GmmUbm) -> IVector:
    if not (np.all(np.isfinite(stats.N)) and np.all(np.isfinite(stats.F))):
        raise DataError("non-finite Baum-Welch statistics")
    if stats.F.shape != tv.T.shape[:2] or stats.F.shape != ubm.means.shape:
        raise ContractError(f"statistics of shape {stats.F.shape} do not match TV {tv.T.shape[:2]}")
    _, _, Ew = _posteriors_w(stats.N[None], stats.F[None], tv.T, ubm.variances)
    return IVector(Ew[0])


def length_normalize(ivec: IVector) -> IVector:
    norm = np.linalg.norm(ivec.values)
    if norm == 0.0 or not np.isfinite(norm):
        raise NormalizationError("cannot length-normalize a zero or non-finite vector")
    return IVector(ivec.values / norm, normalized=True)


def cosine_score(a: IVector, b: IVector) -> float:
    return float(np.clip(length_normalize(a).values @ length_normalize(b).values, -1.0, 1.0))


# -- PLDA --------------------------------------------------------------------------------

@dataclass(frozen=True)
class PldaModel:
    """Two-covariance model: ``x = mu + y + e``, ``y ~ N(0, B)``, ``e ~ N(0, W)``."""

    mu: np.ndarray
    between_cov: np.ndarray
    within_cov: np.ndarray

    @property
    def dim(self) -> int:
        return len(self.mu)

    @cached_property
    def _score_terms(self):
        B, W = self.between_cov, self.within_cov
        S = B + W
        S_inv = np.linalg.inv(S)
        cond = S - B @ S_inv @ B
        cond_inv = np.linalg.inv(cond)
        Q = S_inv - cond_inv
        P = S_inv @ B @ cond_inv
        const = 0.5 * (np.linalg.slogdet(S)[1] - np.linalg.slogdet(cond)[1])
        return 0.5 * (Q + Q.T), 0.5 * (P + P.T), const

    def to_tensors(self) -> dict:
        return {"plda.mu": self.mu, "plda.between_cov": self.between_cov, "plda.within_cov": self.within_cov}

    @classmethod
    def from_tensors(cls, t: dict) -> "PldaModel":
        model = cls(require(t, "plda.mu", 1), require(t, "plda.between_cov", 2), require(t, "plda.within_cov", 2))
        d = len(model.mu)
        if model.between_cov.shape != (d, d) or model.within_cov.shape != (d, d):
            raise FormatError("PLDA covariance shapes do not match the mean")
        return model

    def rounded(self) -> "PldaModel":
        return PldaModel(to_float32_grid(self.mu), to_float32_grid(self.between_cov), to_float32_grid(self.within_cov))


def train_plda(ivecs, speaker_labels) -> PldaModel:
    X = np.array([getattr(v, "values", v) for v in ivecs], dtype=np.float64)
    labels = np.asarray(speaker_labels)
    if len(X) != len(labels):
        raise ContractError("one speaker label per i-vector required")
    speakers = list(dict.fromkeys(labels.tolist()))
    if len(speakers) < 2:
        raise DataError("PLDA training needs at least two speakers")
    d = X.shape[1]
    mu = X.mean(axis=0)
    spk_means = []
    within = np.zeros((d, d))
    n_within = 0
    for spk in speakers:
        Xs = X[labels == spk]
        m = Xs.mean(axis=0)
        spk_means.append(m)
        if len(Xs) > 1:
            D = Xs - m
            within += D.T @ D
            n_within += len(Xs)
    if n_within == 0:
        raise DataError("every PLDA training speaker has a single utterance")
    M = np.array(spk_means) - mu
    between = M.T @ M / len(speakers)
    within /= n_within
    reg = PLDA_REG * np.eye(d)
    between = 0.5 * (between + between.T) + reg
    within = 0.5 * (within + within.T) + reg
    return PldaModel(mu, between, within)


def plda_score(model: PldaModel, enroll: IVector, test: IVector) -> float:
    """Same-speaker vs different-speaker log-likelihood ratio."""
    e = np.asarray(getattr(enroll, "values", enroll), dtype=np.float64)
    t = np.asarray(getattr(test, "values", test), dtype=np.float64)
    if e.shape != (model.dim,) or t.shape != (model.dim,):
        raise ContractError(f"PLDA expects {model.dim}-dim vectors, got {e.shape} and {t.shape}")
    Q, P, const = model._score_terms
    e = e - model.mu
    t = t - model.mu
    return float(0.5 * (e @ Q @ e + t @ Q @ t) + e @ P @ t + const)


def eer_threshold(target_scores, nontarget_scores) -> tuple[float, float]:
    """Equal error rate and the score threshold achieving it (accept iff score >= threshold)."""
    tar = np.sort(np.asarray(target_scores, dtype=np.float64))
    non = np.sort(np.asarray(nontarget_scores, dtype=np.float64))
    if len(tar) == 0 or len(non) == 0:
        raise DataError("EER calibration needs both target and non-target trials")
    candidates = np.unique(np.concatenate([tar, non]))
    frr = np.searchsorted(tar, candidates, side="left") / len(tar)
    far = 1.0 - np.searchsorted(non, candidates, side="left") / len(non)
    k = int(np.argmin(np.abs(frr - far)))
    return float(0.5 * (frr[k] + far[k])), float(candidates[k])
