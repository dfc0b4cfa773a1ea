"""Exploratory factor analysis for item-score matrices.

Diagnostics (KMO, Bartlett's sphericity test), factor-count selection by
Horn's parallel analysis, principal-axis extraction with varimax rotation,
and regression-method factor scores.
"""

from __future__ import annotations

import hashlib
import json
import warnings
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .artifacts import ArtifactError, array_fingerprint, read_matrix, write_matrix, write_json, read_json


class EfaError(ValueError):
    pass


@dataclass(frozen=True)
class CorrelationMatrix:
    values: np.ndarray
    n: int

    @property
    def p(self) -> int:
        return self.values.shape[0]


@dataclass(frozen=True)
class KmoResult:
    overall: float
    per_item_msa: np.ndarray


@dataclass(frozen=True)
class BartlettResult:
    chi2: float
    df: int
    p_value: float


def _as_corr(R) -> CorrelationMatrix:
    if isinstance(R, CorrelationMatrix):
        return R
    return CorrelationMatrix(np.asarray(R, dtype=np.float64), n=0)


def correlation_matrix(X, item_ids: Optional[Sequence[str]] = None) -> CorrelationMatrix:
    """Pearson correlations of the columns of ``X`` (n x p)."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2:
        raise EfaError("X must be 2-D")
    n, p = X.shape
    if n < p + 1:
        raise EfaError(f"need at least p + 1 = {p + 1} rows, got {n}")
    Xc = X - X.mean(axis=0)
    ss = np.einsum("ij,ij->j", Xc, Xc)
    bad = np.flatnonzero(ss <= 0)
    if bad.size:
        name = item_ids[bad[0]] if item_ids is not None else f"column {bad[0]}"
        raise EfaError(f"zero variance in {name}")
    Z = Xc / np.sqrt(ss)
    R = Z.T @ Z
    R = (R + R.T) / 2
    np.clip(R, -1.0, 1.0, out=R)
    np.fill_diagonal(R, 1.0)
    return CorrelationMatrix(R, n)


def _inverse(R: np.ndarray) -> np.ndarray:
    if np.linalg.cond(R) > 1e12:
        raise EfaError("correlation matrix is singular")
    return np.linalg.inv(R)


def kmo(R) -> KmoResult:
    """Kaiser-Meyer-Olkin sampling adequacy, overall and per item."""
    R = _as_corr(R).values
    inv = _inverse(R)
    d = np.sqrt(np.diag(inv))
    Q = -inv / np.outer(d, d)
    r2 = R**2
    q2 = Q**2
    np.fill_diagonal(r2, 0.0)
    np.fill_diagonal(q2, 0.0)
    num = r2.sum()
    if num == 0.0:
        raise EfaError("no common variance: all off-diagonal correlations are zero")
    row_r, row_q = r2.sum(axis=1), q2.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        msa = np.where(row_r + row_q > 0, row_r / (row_r + row_q), 0.0)
    return KmoResult(overall=float(num / (num + q2.sum())), per_item_msa=msa)


def bartlett(R, n: Optional[int] = None) -> BartlettResult:
    """Bartlett's test that the correlation matrix is the identity."""
    corr = _as_corr(R)
    n = corr.n if n is None else n
    p = corr.p
    if n <= p:
        raise EfaError(f"sample size {n} must exceed p = {p}")
    sign, logdet = np.linalg.slogdet(corr.values)
    if sign <= 0 or not np.isfinite(logdet):
        raise EfaError("correlation matrix determinant is not positive")
    chi2 = max(0.0, -(n - 1 - (2 * p + 5) / 6.0) * logdet)
    df = p * (p - 1) // 2
    return BartlettResult(chi2=float(chi2), df=df, p_value=float(stats.chi2.sf(chi2, df)))


def _eigvals_desc(R: np.ndarray) -> np.ndarray:
    return np.linalg.eigvalsh(R)[::-1]


def parallel_threshold(n: int, p: int, iters: int = 100, quantile: float = 0.95,
                       seed: Optional[int] = 0) -> np.ndarray:
    """Per-rank quantile of correlation eigenvalues of random normal data."""
    rng = np.random.default_rng(seed)
    sims = np.empty((iters, p))
    for it in range(iters):
        sims[it] = _eigvals_desc(correlation_matrix(rng.standard_normal((n, p))).values)
    return np.quantile(sims, quantile, axis=0)


def parallel_analysis(X, iters: int = 100, quantile: float = 0.95,
                      seed: Optional[int] = 0) -> int:
    """Horn's parallel analysis.

    Counts the leading eigenvalues of the observed correlation matrix that
    exceed the ``quantile`` of eigenvalues from ``iters`` standard-normal
    datasets of the same shape, stopping at the first rank that does not.
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if n <= p:
        raise EfaError(f"parallel analysis needs n > p (n={n}, p={p})")
    observed = _eigvals_desc(correlation_matrix(X).values)
    threshold = parallel_threshold(n, p, iters, quantile, seed)
    above = observed > threshold
    return int(p if above.all() else np.argmin(above))


def varimax_criterion(L, normalize: bool = True) -> float:
    L = np.asarray(L, dtype=np.float64)
    if normalize:
        h = np.sqrt((L**2).sum(axis=1, keepdims=True))
        L = L / np.where(h > 0, h, 1.0)
    L2 = L**2
    return float(((L2**2).mean(axis=0) - L2.mean(axis=0) ** 2).sum())


def varimax(L, normalize: bool = True, max_iter: int = 1000, tol: float = 1e-10):
    """Varimax rotation; returns ``(rotated_loadings, rotation_matrix)``.

    Kaiser's pairwise algorithm: each sweep rotates every pair of columns by
    the angle that maximizes the criterion for that pair, so the criterion
    never decreases. Stops when no pair moves by more than ``tol`` radians.
    """
    L = np.asarray(L, dtype=np.float64)
    p, k = L.shape
    if k < 2:
        return L.copy(), np.eye(k)
    if normalize:
        h = np.sqrt((L**2).sum(axis=1, keepdims=True))
        h = np.where(h > 0, h, 1.0)
    else:
        h = np.ones((p, 1))
    B = L / h
    T = np.eye(k)
    for _ in range(max_iter):
        largest = 0.0
        for j in range(k - 1):
            for m in range(j + 1, k):
                x, y = B[:, j], B[:, m]
                u = x * x - y * y
                v = 2.0 * x * y
                a, b = u.sum(), v.sum()
                num = 2.0 * (u @ v) - 2.0 * a * b / p
                den = (u @ u - v @ v) - (a * a - b * b) / p
                phi = 0.25 * np.arctan2(num, den)
                if abs(phi) <= tol:
                    continue
                largest = max(largest, abs(phi))
                c, s = np.cos(phi), np.sin(phi)
                G = np.array([[c, -s], [s, c]])
                B[:, [j, m]] = B[:, [j, m]] @ G
                T[:, [j, m]] = T[:, [j, m]] @ G
        if largest <= tol:
            break
    return B * h, T


def promax(L, power: int = 4):
    """Promax oblique rotation; returns ``(pattern, rotation, factor_corr)``."""
    X, _ = varimax(L)
    k = X.shape[1]
    if k < 2:
        return X, np.eye(k), np.eye(k)
    h = np.sqrt((X**2).sum(axis=1, keepdims=True))
    Y = X / np.where(h > 0, h, 1.0)
    target = np.abs(Y) ** (power - 1) * Y
    U = np.linalg.lstsq(L, target, rcond=None)[0]
    d = np.diag(np.linalg.inv(U.T @ U))
    U = U @ np.diag(np.sqrt(d))
    pattern = L @ U
    Ui = np.linalg.inv(U)
    phi = Ui @ Ui.T
    return pattern, U, phi


@dataclass
class EfaModel:
    item_ids: list
    means: np.ndarray
    sds: np.ndarray
    loadings: np.ndarray
    eigenvalues: np.ndarray
    communalities: np.ndarray
    score_weights: np.ndarray
    factor_names: list
    fit_meta: dict
    bank_fingerprint: Optional[str] = None
    factor_corr: Optional[np.ndarray] = None

    @property
    def k(self) -> int:
        return self.loadings.shape[1]

    @property
    def p(self) -> int:
        return self.loadings.shape[0]

    def to_dict(self) -> dict:
        d = {
            "item_ids": list(self.item_ids),
            "means": self.means.tolist(),
            "sds": self.sds.tolist(),
            "loadings": self.loadings.tolist(),
            "eigenvalues": self.eigenvalues.tolist(),
            "communalities": self.communalities.tolist(),
            "score_weights": self.score_weights.tolist(),
            "factor_names": list(self.factor_names),
            "k": self.k,
            "fit_meta": self.fit_meta,
            "bank_fingerprint": self.bank_fingerprint,
        }
        if self.factor_corr is not None:
            d["factor_corr"] = self.factor_corr.tolist()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EfaModel":
        arr = lambda key: np.asarray(d[key], dtype=np.float64)
        model = cls(
            item_ids=list(d["item_ids"]), means=arr("means"), sds=arr("sds"),
            loadings=arr("loadings").reshape(len(d["item_ids"]), -1), eigenvalues=arr("eigenvalues"),
            communalities=arr("communalities"),
            score_weights=arr("score_weights").reshape(len(d["item_ids"]), -1),
            factor_names=list(d["factor_names"]), fit_meta=dict(d["fit_meta"]),
            bank_fingerprint=d.get("bank_fingerprint"),
            factor_corr=np.asarray(d["factor_corr"]) if d.get("factor_corr") is not None else None,
        )
        if model.k != d["k"]:
            raise ArtifactError("model k does not match its loadings")
        return model

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode("utf-8")
        return hashlib.sha256(blob).hexdigest()

    def save(self, path) -> None:
        write_json(path, self.to_dict())

    @classmethod
    def load(cls, path) -> "EfaModel":
        return cls.from_dict(read_json(path))

    def with_names(self, names: Sequence[str]) -> "EfaModel":
        if len(names) != self.k:
            raise EfaError(f"{len(names)} names for {self.k} factors")
        return EfaModel(**{**self.__dict__, "factor_names": list(names)})


def _smc(R: np.ndarray) -> np.ndarray:
    try:
        return 1.0 - 1.0 / np.diag(np.linalg.inv(R))
    except np.linalg.LinAlgError:
        return np.abs(R - np.eye(R.shape[0])).max(axis=1)


def principal_axis(R: np.ndarray, k: int, max_iter: int = 100, tol: float = 1e-6):
    """Iterated principal-axis extraction from a correlation matrix.

    Returns ``(loadings, converged, iterations, heywood)``.
    """
    p = R.shape[0]
    h2 = np.clip(_smc(R), 0.0, 1.0)
    converged = False
    heywood = False
    it = 0
    L = np.zeros((p, k))
    for it in range(1, max_iter + 1):
        Rr = R.copy()
        np.fill_diagonal(Rr, h2)
        vals, vecs = np.linalg.eigh(Rr)
        vals, vecs = vals[::-1][:k], vecs[:, ::-1][:, :k]
        L = vecs * np.sqrt(np.clip(vals, 0.0, None))
        new_h2 = (L**2).sum(axis=1)
        if np.any(new_h2 > 1.0):
            heywood = True
            new_h2 = np.minimum(new_h2, 1.0 - 1e-9)
        delta = np.max(np.abs(new_h2 - h2))
        h2 = new_h2
        if delta < tol:
            converged = True
            break
    row = (L**2).sum(axis=1)
    over = row > 1.0 - 1e-9
    if np.any(over):
        heywood = True
        L[over] *= np.sqrt((1.0 - 1e-9) / row[over])[:, None]
    return L, converged, it, heywood


def _orient_and_order(L: np.ndarray, T: Optional[np.ndarray] = None):
    L = L.copy()
    k = L.shape[1]
    signs = np.ones(k)
    for j in range(k):
        if L[np.argmax(np.abs(L[:, j])), j] < 0:
            signs[j] = -1.0
    L *= signs
    order = np.argsort(-(L**2).sum(axis=0), kind="stable")
    return L[:, order], signs, order


def fit_efa(X, k: int, item_ids: Optional[Sequence[str]] = None, rotation: str = "varimax",
            max_iter: int = 100, tol: float = 1e-6, factor_names: Optional[Sequence[str]] = None,
            bank_fingerprint: Optional[str] = None) -> EfaModel:
    """Fit a k-factor principal-axis model with rotation.

    Factors are sign-oriented so each one's largest absolute loading is
    positive and ordered by descending sum of squared loadings. Score weights
    follow the regression method.
    """
    X = np.asarray(X, dtype=np.float64)
    n, p = X.shape
    if not 1 <= k < p:
        raise EfaError(f"k must satisfy 1 <= k < p = {p}, got {k}")
    if n <= p:
        raise EfaError(f"need n > p (n={n}, p={p})")
    if rotation not in ("varimax", "promax", "none"):
        raise EfaError(f"unknown rotation {rotation!r}")
    if item_ids is None:
        item_ids = [f"item{j + 1}" for j in range(p)]
    elif len(item_ids) != p:
        raise EfaError("item_ids length does not match X")

    means = X.mean(axis=0)
    sds = X.std(axis=0, ddof=1)
    corr = correlation_matrix(X, item_ids)
    R = corr.values
    L0, converged, iters, heywood = principal_axis(R, k, max_iter=max_iter, tol=tol)
    if not converged:
        warnings.warn(f"principal-axis extraction did not converge in {max_iter} iterations",
                      RuntimeWarning, stacklevel=2)
    if heywood:
        warnings.warn("Heywood case: communality clamped below 1", RuntimeWarning, stacklevel=2)

    phi = None
    if rotation == "varimax":
        Lr, T = varimax(L0)
    elif rotation == "promax":
        Lr, T, phi = promax(L0)
    else:
        Lr, T = L0, np.eye(k)
    L, signs, order = _orient_and_order(Lr)
    if phi is not None:
        phi = (phi * np.outer(signs, signs))[np.ix_(order, order)]
        structure = L @ phi
        communalities = np.einsum("ij,jk,ik->i", L, phi, L)
    else:
        structure = L
        communalities = (L**2).sum(axis=1)
    W = np.linalg.solve(R, structure)

    meta = {
        "n": int(n),
        "extraction": "principal-axis",
        "rotation": rotation,
        "converged": bool(converged),
        "iterations": int(iters),
        "heywood": bool(heywood),
        "rotation_matrix": T.tolist(),
        "correlation_fingerprint": array_fingerprint(R),
    }
    names = list(factor_names) if factor_names is not None else [f"F{j + 1}" for j in range(k)]
    if len(names) != k:
        raise EfaError(f"{len(names)} factor names for k = {k}")
    return EfaModel(
        item_ids=list(item_ids), means=means, sds=sds, loadings=L,
        eigenvalues=_eigvals_desc(R), communalities=communalities, score_weights=W,
        factor_names=names, fit_meta=meta, bank_fingerprint=bank_fingerprint, factor_corr=phi,
    )


@dataclass
class FactorScoreMatrix:
    post_ids: list
    factor_names: list
    scores: np.ndarray
    model_fingerprint: str
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.scores.shape != (len(self.post_ids), len(self.factor_names)):
            raise ValueError("factor score shape does not match ids/names")
        if not np.all(np.isfinite(self.scores)):
            raise ValueError("factor scores contain NaN or Inf")

    def column(self, name: str) -> np.ndarray:
        try:
            return self.scores[:, self.factor_names.index(name)]
        except ValueError:
            raise KeyError(f"unknown factor {name!r}") from None

    def header(self) -> dict:
        return {
            "kind": "factor_scores",
            "post_count": len(self.post_ids),
            "post_ids": list(self.post_ids),
            "factor_names": list(self.factor_names),
            "model_fingerprint": self.model_fingerprint,
            **({"meta": self.meta} if self.meta else {}),
        }

    def save(self, path) -> None:
        write_matrix(path, self.header(), self.scores)

    @classmethod
    def load(cls, path) -> "FactorScoreMatrix":
        header, data = read_matrix(path)
        if header.get("kind") != "factor_scores":
            raise ArtifactError(f"{path} is not a factor-score matrix")
        return cls(header["post_ids"], header["factor_names"], data,
                   header["model_fingerprint"], header.get("meta", {}))


def factor_scores(X, model: EfaModel, post_ids: Optional[Sequence] = None,
                  item_ids: Optional[Sequence[str]] = None) -> FactorScoreMatrix:
    """Regression-method scores ``((X - means) / sds) @ W``."""
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[1] != model.p:
        raise EfaError(f"X has {X.shape[-1]} columns, model expects {model.p}")
    if item_ids is not None and list(item_ids) != list(model.item_ids):
        raise EfaError("item columns do not match the model's item order")
    Z = (X - model.means) / model.sds
    ids = list(post_ids) if post_ids is not None else list(range(X.shape[0]))
    return FactorScoreMatrix(ids, list(model.factor_names), Z @ model.score_weights, model.fingerprint())


def top_loadings_report(model: EfaModel, m: int, bank=None) -> list[dict]:
    """The ``m`` largest-|loading| items per factor, loading sign kept."""
    if m < 1:
        raise EfaError("m must be >= 1")
    rows = []
    for j, name in enumerate(model.factor_names):
        col = model.loadings[:, j]
        order = np.argsort(-np.abs(col), kind="stable")[:m]
        for rank, i in enumerate(order, start=1):
            row = {"factor": name, "rank": rank, "item_id": model.item_ids[i], "loading": float(col[i])}
            if bank is not None:
                item = bank.by_id(model.item_ids[i])
                row.update(scale=item.scale, source=item.source, text=item.text)
            rows.append(row)
    return rows


def tucker_congruence(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    return float(a @ b / np.sqrt((a @ a) * (b @ b)))


def align_factors(estimated, truth):
    """Match estimated columns to true columns (sign and permutation).

    Returns the per-true-factor congruences after the best assignment.
    """
    from scipy.optimize import linear_sum_assignment

    estimated = np.asarray(estimated, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    C = np.array([[tucker_congruence(estimated[:, i], truth[:, j]) for j in range(truth.shape[1])]
                  for i in range(estimated.shape[1])])
    rows, cols = linear_sum_assignment(-np.abs(C))
    out = np.zeros(truth.shape[1])
    for r, c in zip(rows, cols):
        out[c] = abs(C[r, c])
    return out
