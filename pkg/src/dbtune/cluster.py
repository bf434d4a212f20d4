"""Metric clustering in factor-loading space.

K-means (k-means++ init, 10 seeded restarts, Lloyd iterations) is the
baseline; a full-covariance Gaussian mixture fit by EM is the alternative.
The cluster count is swept over a candidate range and chosen by silhouette
score, with BIC as the GMM tie-breaker. One metric per cluster, the one
nearest its center, survives pruning.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cholesky, solve_triangular
from scipy.special import logsumexp

from .errors import DataError, NumericalError
from .factors import FactorModel

N_RESTARTS = 10
MAX_LLOYD_ITER = 300
MAX_EM_ITER = 200
EM_TOL = 1e-6
COV_REG = 1e-6
DEFAULT_KS = tuple(range(2, 16))


@dataclass(frozen=True)
class KMeansModel:
    k: int
    centroids: np.ndarray  # (k, d)
    assignments: np.ndarray  # (n,)
    inertia: float
    seed: int
    inertia_trace: tuple[float, ...] = ()

    def centers(self) -> np.ndarray:
        return self.centroids

    def hard_assignments(self, points: np.ndarray) -> np.ndarray:
        d2 = _sq_dists(points, self.centroids)
        return d2.argmin(axis=1)


@dataclass(frozen=True)
class GmmModel:
    k: int
    weights: np.ndarray  # (k,)
    means: np.ndarray  # (k, d)
    covariances: np.ndarray  # (k, d, d)
    log_likelihood_trace: tuple[float, ...]
    seed: int

    def centers(self) -> np.ndarray:
        return self.means

    def responsibilities(self, points: np.ndarray) -> np.ndarray:
        log_prob = _weighted_log_prob(points, self.weights, self.means, self.covariances)
        return np.exp(log_prob - logsumexp(log_prob, axis=1, keepdims=True))

    def hard_assignments(self, points: np.ndarray) -> np.ndarray:
        return self.responsibilities(points).argmax(axis=1)

    def total_log_likelihood(self, points: np.ndarray) -> float:
        log_prob = _weighted_log_prob(points, self.weights, self.means, self.covariances)
        return float(logsumexp(log_prob, axis=1).sum())


@dataclass(frozen=True)
class ClusterSelection:
    candidate_ks: tuple[int, ...]
    silhouette_by_k: dict[int, float]
    bic_by_k: dict[int, float]
    chosen_k: int
    method: str
    model: "KMeansModel | GmmModel" = field(compare=False)

    def report_csv(self) -> str:
        lines = ["k,silhouette,bic,chosen"]
        for k in self.candidate_ks:
            bic = format(self.bic_by_k[k], ".17g") if k in self.bic_by_k else ""
            chosen = "1" if k == self.chosen_k else "0"
            lines.append(f"{k},{format(self.silhouette_by_k[k], '.17g')},{bic},{chosen}")
        return "\n".join(lines) + "\n"


@dataclass(frozen=True)
class PrunedMetricSet:
    metric_names: tuple[str, ...]
    cluster_of: tuple[int, ...]

    def __post_init__(self):
        if len(self.metric_names) != len(set(self.metric_names)):
            raise NumericalError("duplicate metrics in pruned set")


def _sq_dists(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - centers[None, :, :]
    return np.einsum("ijk,ijk->ij", diff, diff)


def _kmeanspp_init(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = points.shape[0]
    centroids = np.empty((k, points.shape[1]))
    centroids[0] = points[rng.integers(n)]
    d2 = np.sum((points - centroids[0]) ** 2, axis=1)
    for j in range(1, k):
        total = d2.sum()
        if total <= 0:
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centroids[j] = points[idx]
        d2 = np.minimum(d2, np.sum((points - centroids[j]) ** 2, axis=1))
    return centroids


def _lloyd(points: np.ndarray, centroids: np.ndarray) -> tuple[np.ndarray, np.ndarray, float, list[float]]:
    n, _ = points.shape
    k = centroids.shape[0]
    centroids = centroids.copy()
    prev_assign = None
    trace: list[float] = []
    for _ in range(MAX_LLOYD_ITER):
        d2 = _sq_dists(points, centroids)
        assign = d2.argmin(axis=1)
        # empty-cluster repair: reseed at the point farthest from its centroid
        for j in range(k):
            if not np.any(assign == j):
                far = int(d2[np.arange(n), assign].argmax())
                centroids[j] = points[far]
                d2[:, j] = np.sum((points - centroids[j]) ** 2, axis=1)
                assign = d2.argmin(axis=1)
        for j in range(k):
            members = assign == j
            if np.any(members):
                centroids[j] = points[members].mean(axis=0)
        inertia = float(_sq_dists(points, centroids)[np.arange(n), assign].sum())
        trace.append(inertia)
        if prev_assign is not None and np.array_equal(assign, prev_assign):
            break
        prev_assign = assign
    return centroids, assign, trace[-1], trace


def fit_kmeans(points: np.ndarray, k: int, seed: int) -> KMeansModel:
    """Seeded k-means: k-means++ init, Lloyd iterations, best of 10 restarts."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[1] < 1:
        raise DataError("points must be a 2-D matrix")
    n = points.shape[0]
    if k < 1 or k > n:
        raise DataError(f"k={k} outside [1, {n}]")
    best = None
    for r in range(N_RESTARTS):
        rng = np.random.default_rng(seed + r)
        init = _kmeanspp_init(points, k, rng)
        centroids, assign, inertia, trace = _lloyd(points, init)
        if best is None or inertia < best[2]:
            best = (centroids, assign, inertia, trace)
    centroids, assign, inertia, trace = best
    return KMeansModel(k=k, centroids=centroids, assignments=assign,
                       inertia=inertia, seed=seed, inertia_trace=tuple(trace))


def silhouette_score(points: np.ndarray, assignments: np.ndarray) -> float:
    """Mean silhouette over points; singleton-cluster points contribute 0."""
    points = np.asarray(points, dtype=float)
    assignments = np.asarray(assignments)
    labels = np.unique(assignments)
    if labels.size < 2:
        raise DataError("silhouette needs at least 2 clusters")
    n = points.shape[0]
    dists = np.sqrt(np.maximum(_sq_dists(points, points), 0.0))
    scores = np.zeros(n)
    sizes = {lab: int(np.sum(assignments == lab)) for lab in labels}
    for i in range(n):
        own = assignments[i]
        if sizes[own] == 1:
            continue
        same = assignments == own
        a = dists[i, same].sum() / (sizes[own] - 1)
        b = min(dists[i, assignments == lab].mean() for lab in labels if lab != own)
        scores[i] = (b - a) / max(a, b) if max(a, b) > 0 else 0.0
    return float(scores.mean())


def _init_gmm_from_kmeans(points, k, seed):
    km = fit_kmeans(points, k, seed)
    n, d = points.shape
    weights = np.empty(k)
    means = np.empty((k, d))
    covs = np.empty((k, d, d))
    for j in range(k):
        members = points[km.assignments == j]
        weights[j] = members.shape[0] / n
        means[j] = members.mean(axis=0)
        diff = members - means[j]
        covs[j] = diff.T @ diff / members.shape[0] + COV_REG * np.eye(d)
    return weights, means, covs


def _weighted_log_prob(points, weights, means, covs):
    n, d = points.shape
    k = means.shape[0]
    out = np.empty((n, k))
    for j in range(k):
        try:
            chol = cholesky(covs[j], lower=True)
        except np.linalg.LinAlgError as exc:
            raise NumericalError(f"component {j} covariance not PD: {exc}") from exc
        sol = solve_triangular(chol, (points - means[j]).T, lower=True)
        log_det = 2.0 * np.log(np.diag(chol)).sum()
        out[:, j] = (
            np.log(max(weights[j], 1e-300))
            - 0.5 * (d * math.log(2 * math.pi) + log_det + np.sum(sol ** 2, axis=0))
        )
    return out


def fit_gmm_em(points: np.ndarray, k: int, seed: int) -> GmmModel:
    """Full-covariance Gaussian mixture fit by EM, initialized from k-means.

    Stops when the relative log-likelihood gain drops below 1e-6 or after 200
    iterations; every M-step adds 1e-6 * I to each covariance.
    """
    points = np.asarray(points, dtype=float)
    n, d = points.shape
    if k < 1 or k > n:
        raise DataError(f"k={k} outside [1, {n}]")
    weights, means, covs = _init_gmm_from_kmeans(points, k, seed)
    trace: list[float] = []
    for _ in range(MAX_EM_ITER):
        log_prob = _weighted_log_prob(points, weights, means, covs)
        norm = logsumexp(log_prob, axis=1)
        ll = float(norm.sum())
        trace.append(ll)
        if len(trace) > 1 and trace[-1] - trace[-2] < EM_TOL * max(1.0, abs(trace[-2])):
            break
        resp = np.exp(log_prob - norm[:, None])
        nk = resp.sum(axis=0)
        nk = np.maximum(nk, 1e-12)
        weights = nk / nk.sum()
        means = (resp.T @ points) / nk[:, None]
        for j in range(k):
            diff = points - means[j]
            cov = (resp[:, j, None] * diff).T @ diff / nk[j]
            covs[j] = 0.5 * (cov + cov.T) + COV_REG * np.eye(d)
    return GmmModel(k=k, weights=weights, means=means, covariances=covs,
                    log_likelihood_trace=tuple(trace), seed=seed)


def bic_score(model: GmmModel, points: np.ndarray) -> float:
    """p * ln(n) - 2 * logL with p = (k-1) + k*d + k*d*(d+1)/2; lower is better."""
    points = np.asarray(points, dtype=float)
    n, d = points.shape
    k = model.k
    p = (k - 1) + k * d + k * d * (d + 1) // 2
    return p * math.log(n) - 2.0 * model.total_log_likelihood(points)


def sweep_k(points: np.ndarray, method: str, ks=DEFAULT_KS, seed: int = 0) -> ClusterSelection:
    """Fit every candidate k and choose by silhouette.

    K-means ties break toward smaller k; GMM ties break by lower BIC, then
    smaller k. Hard GMM assignments that collapse to one cluster score -1 so
    they are never chosen.
    """
    points = np.asarray(points, dtype=float)
    ks = tuple(sorted(ks))
    if not ks:
        raise DataError("empty candidate k list")
    if max(ks) > points.shape[0]:
        raise DataError(f"max k {max(ks)} exceeds point count {points.shape[0]}")
    if min(ks) < 2:
        raise DataError("candidate ks must be >= 2")
    if method not in ("kmeans", "gmm"):
        raise DataError(f"unknown clustering method {method!r}")

    sil: dict[int, float] = {}
    bic: dict[int, float] = {}
    models = {}
    for k in ks:
        if method == "kmeans":
            model = fit_kmeans(points, k, seed)
            assign = model.assignments
        else:
            model = fit_gmm_em(points, k, seed)
            assign = model.hard_assignments(points)
            bic[k] = bic_score(model, points)
        models[k] = model
        sil[k] = silhouette_score(points, assign) if np.unique(assign).size >= 2 else -1.0

    if method == "kmeans":
        chosen = min(ks, key=lambda k: (-sil[k], k))
    else:
        chosen = min(ks, key=lambda k: (-sil[k], bic[k], k))
    return ClusterSelection(candidate_ks=ks, silhouette_by_k=sil, bic_by_k=bic,
                            chosen_k=chosen, method=method, model=models[chosen])


def select_representatives(model, loadings: FactorModel,
                           metric_names=None) -> PrunedMetricSet:
    """Pick per cluster the metric whose loading row is nearest the center.

    Ties break toward the lexicographically smaller metric name. A cluster
    left empty by hard GMM assignment falls back to the nearest not-yet-chosen
    metric.
    """
    names = tuple(metric_names) if metric_names is not None else loadings.metric_names
    points = loadings.points
    if points.shape[0] != len(names):
        raise DataError("metric names do not align with loading rows")
    centers = model.centers()
    assign = (model.assignments if isinstance(model, KMeansModel)
              else model.hard_assignments(points))
    chosen_names: list[str] = []
    chosen_clusters: list[int] = []
    taken = set()
    for j in range(centers.shape[0]):
        dist = np.sqrt(np.sum((points - centers[j]) ** 2, axis=1))
        members = [i for i in range(len(names)) if assign[i] == j and i not in taken]
        if not members:
            members = [i for i in range(len(names)) if i not in taken]
            if not members:
                raise DataError("more clusters than metrics")
        best = min(members, key=lambda i: (dist[i], names[i]))
        taken.add(best)
        chosen_names.append(names[best])
        chosen_clusters.append(j)
    return PrunedMetricSet(metric_names=tuple(chosen_names),
                           cluster_of=tuple(chosen_clusters))
