"""Second-pass feature selection for weather predictors.

Three routes feed the final set:

* correlation-distance clustering, run twice (average-linkage hierarchical
  and k-means) with one medoid kept per cluster; the two representative
  sets are intersected,
* PCA on the standardized features, taking the strongest loader of each
  leading component,
* a greedy pass that drops anything correlated above a threshold with a
  feature already kept.
"""

from __future__ import annotations

import io
import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.cluster.hierarchy import cut_tree, linkage
from scipy.spatial.distance import squareform

from .panel import WEATHER_CATEGORIES, PanelDataset, weather_category

class SelectionError(ValueError):
    pass


@dataclass(frozen=True)
class CorrelationMatrix:
    feature_names: tuple[str, ...]
    entries: np.ndarray

    def __getitem__(self, pair: tuple[str, str]) -> float:
        i, j = (self.feature_names.index(n) for n in pair)
        return float(self.entries[i, j])


@dataclass(frozen=True)
class DistanceMatrix:
    feature_names: tuple[str, ...]
    entries: np.ndarray


@dataclass(frozen=True)
class ClusterModel:
    method: str
    k: int
    labels: np.ndarray
    feature_names: tuple[str, ...]
    seed: int | None = None
    converged: bool = True
    inertia: float | None = None

    @property
    def assignment(self) -> dict[str, int]:
        return {f: int(c) for f, c in zip(self.feature_names, self.labels)}

    def clusters(self) -> list[list[int]]:
        """Member indices per cluster, clusters ordered by first member."""
        return [list(np.flatnonzero(self.labels == c)) for c in range(self.k)]


@dataclass(frozen=True)
class PcaResult:
    feature_names: tuple[str, ...]
    loadings: np.ndarray  # (n_components, n_features)
    explained_variance_ratio: np.ndarray
    means: np.ndarray
    sds: np.ndarray

    @property
    def n_components(self) -> int:
        return len(self.explained_variance_ratio)

    def standardize(self, X: np.ndarray) -> np.ndarray:
        return (X - self.means) / self.sds

    def transform(self, X: np.ndarray) -> np.ndarray:
        return self.standardize(X) @ self.loadings.T

    def reconstruct(self, scores: np.ndarray) -> np.ndarray:
        """Back to standardized feature space."""
        return scores @ self.loadings


def _pooled(panel: PanelDataset, features: Sequence[str]) -> np.ndarray:
    idx = [panel.feature_index(f) for f in features]
    return panel.weather[:, :, idx].reshape(-1, len(idx))


def _pearson(x: np.ndarray, y: np.ndarray) -> float:
    xc, yc = x - x.mean(), y - y.mean()
    denom = np.sqrt((xc @ xc) * (yc @ yc))
    return float(xc @ yc / denom)


def correlation_from_array(X: np.ndarray, names: Sequence[str]) -> CorrelationMatrix:
    """Pearson correlation of the columns of ``X``, pairwise-complete on NaNs."""
    names = tuple(names)
    n = X.shape[1]
    missing = np.isnan(X)
    for j, name in enumerate(names):
        col = X[~missing[:, j], j]
        if col.size < 3:
            raise SelectionError(f"feature {name!r} has fewer than 3 observations")
        if col.max() == col.min():
            raise SelectionError(f"feature {name!r} has zero variance")
    if not missing.any():
        Z = X - X.mean(axis=0)
        norms = np.sqrt((Z * Z).sum(axis=0))
        R = (Z.T @ Z) / np.outer(norms, norms)
    else:
        R = np.empty((n, n))
        for i in range(n):
            for j in range(i, n):
                ok = ~(missing[:, i] | missing[:, j])
                if ok.sum() < 3:
                    raise SelectionError(
                        f"features {names[i]!r} and {names[j]!r} share fewer than 3 observations"
                    )
                xi, xj = X[ok, i], X[ok, j]
                if xi.max() == xi.min() or xj.max() == xj.min():
                    raise SelectionError(
                        f"features {names[i]!r}/{names[j]!r} are constant on their common rows"
                    )
                R[i, j] = R[j, i] = _pearson(xi, xj)
    R = np.clip((R + R.T) / 2, -1.0, 1.0)
    np.fill_diagonal(R, 1.0)
    return CorrelationMatrix(names, R)


def correlation_matrix(panel: PanelDataset, features: Sequence[str]) -> CorrelationMatrix:
    """Pearson correlations pooled over every (county, hour) observation."""
    return correlation_from_array(_pooled(panel, features), features)


def correlation_distance(R: CorrelationMatrix) -> DistanceMatrix:
    D = 1.0 - np.abs(R.entries)
    np.fill_diagonal(D, 0.0)
    return DistanceMatrix(R.feature_names, D)


def _relabel(labels: np.ndarray) -> np.ndarray:
    """Renumber clusters 0..k-1 in order of first appearance."""
    mapping: dict[int, int] = {}
    for lab in labels:
        mapping.setdefault(int(lab), len(mapping))
    return np.array([mapping[int(lab)] for lab in labels], dtype=int)


def _check_k(k: int, n: int) -> None:
    if not 1 <= k <= n:
        raise SelectionError(f"cluster count k={k} must lie in [1, {n}]")


def hierarchical_clusters(D: DistanceMatrix, k: int) -> ClusterModel:
    """Average-linkage agglomerative clustering cut to exactly ``k`` clusters."""
    n = len(D.feature_names)
    _check_k(k, n)
    if n == 1:
        labels = np.zeros(1, int)
    else:
        Z = linkage(squareform(D.entries, checks=False), method="average")
        labels = cut_tree(Z, n_clusters=k).ravel()
    return ClusterModel("hierarchical", k, _relabel(labels), D.feature_names)


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = len(X)
    centers = [X[rng.integers(n)]]
    d2 = ((X - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:
            i = int(rng.integers(n))
        else:
            i = int(rng.choice(n, p=d2 / total))
        centers.append(X[i])
        d2 = np.minimum(d2, ((X - X[i]) ** 2).sum(axis=1))
    return np.array(centers)


def _lloyd(X: np.ndarray, centers: np.ndarray, max_iter: int) -> tuple[np.ndarray, float, bool]:
    k = len(centers)
    labels = None
    converged = False
    for _ in range(max_iter):
        d2 = ((X[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        new = d2.argmin(axis=1)
        # empty clusters take the point farthest from its current center
        for c in range(k):
            if not np.any(new == c):
                far = int(d2[np.arange(len(X)), new].argmax())
                new[far] = c
                d2[far, c] = 0.0
        if labels is not None and np.array_equal(new, labels):
            converged = True
            break
        labels = new
        centers = np.array([X[labels == c].mean(axis=0) for c in range(k)])
    inertia = float(((X - centers[labels]) ** 2).sum())
    return labels, inertia, converged


def kmeans_clusters(
    D: DistanceMatrix, k: int, seed: int = 0, n_init: int = 10, max_iter: int = 300
) -> ClusterModel:
    """Lloyd's k-means with k-means++ seeding on the rows of ``D``.

    Each feature is embedded as its vector of distances to every feature.
    The best of ``n_init`` seeded restarts (lowest inertia) is returned.
    """
    X = np.asarray(D.entries, dtype=float)
    _check_k(k, len(X))
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        centers = _kmeans_pp(X, k, rng)
        labels, inertia, converged = _lloyd(X, centers, max_iter)
        if best is None or inertia < best[1]:
            best = (labels, inertia, converged)
    labels, inertia, converged = best
    return ClusterModel(
        "kmeans", k, _relabel(labels), D.feature_names, seed=seed,
        converged=converged, inertia=inertia,
    )


def cluster_representatives(model: ClusterModel, D: DistanceMatrix) -> list[str]:
    """Medoid of every cluster; ties go to the earlier feature."""
    if tuple(model.feature_names) != tuple(D.feature_names):
        raise SelectionError("cluster model and distance matrix name different features")
    reps = []
    for members in model.clusters():
        sub = D.entries[np.ix_(members, members)]
        reps.append(D.feature_names[members[int(sub.sum(axis=1).argmin())]])
    return reps


def pca_from_array(X: np.ndarray, names: Sequence[str], n_components: int) -> PcaResult:
    names = tuple(names)
    X = X[~np.isnan(X).any(axis=1)]
    n_rows, n_feat = X.shape
    if n_rows < 2:
        raise SelectionError("PCA needs at least 2 complete rows")
    if not 1 <= n_components <= min(n_rows, n_feat):
        raise SelectionError(
            f"n_components={n_components} must lie in [1, {min(n_rows, n_feat)}]"
        )
    means = X.mean(axis=0)
    sds = X.std(axis=0, ddof=1)
    for name, sd in zip(names, sds):
        if not sd > 0:
            raise SelectionError(f"feature {name!r} has zero variance")
    Z = (X - means) / sds
    cov = Z.T @ Z / (n_rows - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1]
    evals = np.clip(evals[order], 0.0, None)
    evecs = evecs[:, order].T
    for i, v in enumerate(evecs):
        if v[np.argmax(np.abs(v))] < 0:
            evecs[i] = -v
    ratio = evals / evals.sum()
    return PcaResult(names, evecs[:n_components], ratio[:n_components], means, sds)


def pca_fit(panel: PanelDataset, features: Sequence[str], n_components: int) -> PcaResult:
    """PCA of the z-scored features, pooled over counties and hours.

    Pass the training slice of the panel so the standardizer never sees
    evaluation hours.  Each component is signed so that its largest
    absolute loading is positive.
    """
    return pca_from_array(_pooled(panel, features), features, n_components)


def pca_top_features(pca: PcaResult, n_pcs: int, per_pc: int = 1) -> list[str]:
    if not 1 <= n_pcs <= pca.n_components:
        raise SelectionError(f"n_pcs={n_pcs} exceeds the {pca.n_components} fitted components")
    picks: list[str] = []
    for comp in pca.loadings[:n_pcs]:
        order = np.argsort(-np.abs(comp), kind="stable")[:per_pc]
        for j in order:
            name = pca.feature_names[j]
            if name not in picks:
                picks.append(name)
    return picks


@dataclass
class PruneResult:
    kept: list[str]
    dropped: list[tuple[str, str]]


def prune_by_matrix(R: np.ndarray, order: Sequence[int], threshold: float) -> list[int]:
    """Greedy scan over ``order``; keep an index unless |R| with an already
    kept index exceeds ``threshold``."""
    kept: list[int] = []
    A = np.abs(R)
    for i in order:
        if not kept or not np.any(A[i, kept] > threshold):
            kept.append(i)
    return kept


def correlation_prune(
    panel: PanelDataset,
    features: Sequence[str],
    threshold: float = 0.95,
    keep_priority: Sequence[str] | None = None,
) -> PruneResult:
    if not 0 < threshold <= 1:
        raise SelectionError("threshold must lie in (0, 1]")
    priority = [f for f in (keep_priority or []) if f in features]
    ordered = priority + [f for f in features if f not in priority]
    if not ordered:
        return PruneResult([], [])
    R = correlation_matrix(panel, ordered)
    kept_idx = prune_by_matrix(R.entries, range(len(ordered)), threshold)
    kept = [ordered[i] for i in kept_idx]
    dropped = [(f, "correlation-pruned") for f in ordered if f not in kept]
    return PruneResult(kept, dropped)


@dataclass(frozen=True)
class SelectionConfig:
    k: int = 40
    pca_components: int = 20
    pca_picks: int = 3
    pca_per_pc: int = 1
    prune_threshold: float = 0.95
    seed: int = 0
    kmeans_restarts: int = 10
    use_pca: bool = True


@dataclass
class SelectionReport:
    kept: list[str]
    dropped: list[tuple[str, str]]
    provenance: dict[str, str]
    hierarchical: list[str] = field(default_factory=list)
    kmeans: list[str] = field(default_factory=list)
    pca_picks: list[str] = field(default_factory=list)
    kmeans_converged: bool = True
    pca: PcaResult | None = None

    @property
    def features(self) -> list[str]:
        return list(self.kept)

    def pca_kept(self) -> list[str]:
        return [f for f in self.kept if self.provenance.get(f) in ("pca-pick", "both")]

    def to_dict(self) -> dict:
        return {
            "kept": list(self.kept),
            "dropped": [{"feature": f, "reason": r} for f, r in self.dropped],
            "provenance": {f: self.provenance[f] for f in self.kept},
            "hierarchical_representatives": list(self.hierarchical),
            "kmeans_representatives": list(self.kmeans),
            "pca_picks": list(self.pca_picks),
            "kmeans_converged": bool(self.kmeans_converged),
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_dict(cls, data: dict) -> "SelectionReport":
        return cls(
            kept=list(data["kept"]),
            dropped=[(d["feature"], d["reason"]) for d in data.get("dropped", [])],
            provenance=dict(data.get("provenance", {})),
            hierarchical=list(data.get("hierarchical_representatives", [])),
            kmeans=list(data.get("kmeans_representatives", [])),
            pca_picks=list(data.get("pca_picks", [])),
            kmeans_converged=bool(data.get("kmeans_converged", True)),
        )

    def table(self) -> str:
        """Kept features grouped by meteorological category."""
        groups: dict[str, list[str]] = {c: [] for c in WEATHER_CATEGORIES}
        groups["Uncategorized"] = []
        for f in self.kept:
            groups[weather_category(f) or "Uncategorized"].append(f)
        width = max(len(c) for c in groups)
        lines = [f"{'Category':<{width}}  Features", "-" * (width + 40)]
        for cat, names in groups.items():
            if names:
                tagged = [f"{n} [{self.provenance[n]}]" for n in names]
                lines.append(f"{cat:<{width}}  {', '.join(tagged)}")
        lines.append(f"{'Total':<{width}}  {len(self.kept)}")
        return "\n".join(lines) + "\n"


def assemble_selection(
    features: Sequence[str],
    hierarchical_reps: Sequence[str],
    kmeans_reps: Sequence[str],
    pca_picks: Sequence[str],
    R: CorrelationMatrix,
    threshold: float = 0.95,
) -> SelectionReport:
    """Consensus of the two clusterings, union with PCA picks, then pruning.

    PCA picks get pruning priority, followed by the consensus features in
    hierarchical cluster order.
    """
    km = set(kmeans_reps)
    consensus = [f for f in hierarchical_reps if f in km]
    pca_picks = list(pca_picks)
    if not consensus and not pca_picks:
        raise SelectionError("no features selected: empty clustering consensus and no PCA picks")
    priority = pca_picks + [f for f in consensus if f not in pca_picks]
    idx = [R.feature_names.index(f) for f in priority]
    kept_local = prune_by_matrix(R.entries[np.ix_(idx, idx)], range(len(idx)), threshold)
    kept = [priority[i] for i in kept_local]
    provenance = {}
    for f in kept:
        in_c, in_p = f in consensus, f in pca_picks
        provenance[f] = "both" if in_c and in_p else ("pca-pick" if in_p else "clustering-consensus")
    dropped = [(f, "correlation-pruned") for f in priority if f not in kept]
    dropped += [(f, "cluster-redundant") for f in features if f not in priority]
    return SelectionReport(
        kept=kept, dropped=dropped, provenance=provenance,
        hierarchical=list(hierarchical_reps), kmeans=list(kmeans_reps), pca_picks=pca_picks,
    )


def select_features(panel: PanelDataset, config: SelectionConfig = SelectionConfig()) -> SelectionReport:
    features = panel.weather_names
    R = correlation_matrix(panel, features)
    D = correlation_distance(R)
    hier = hierarchical_clusters(D, config.k)
    km = kmeans_clusters(D, config.k, seed=config.seed, n_init=config.kmeans_restarts)
    h_reps = cluster_representatives(hier, D)
    k_reps = cluster_representatives(km, D)
    pca = None
    picks: list[str] = []
    if config.use_pca and config.pca_picks > 0:
        X = _pooled(panel, features)
        n_rows = int((~np.isnan(X).any(axis=1)).sum())
        n_comp = min(config.pca_components, len(features), n_rows)
        pca = pca_from_array(X, features, n_comp)
        picks = pca_top_features(pca, min(config.pca_picks, n_comp), config.pca_per_pc)
    report = assemble_selection(features, h_reps, k_reps, picks, R, config.prune_threshold)
    report.kmeans_converged = km.converged
    report.pca = pca
    return report


def loadings_csv(pca: PcaResult) -> str:
    buf = io.StringIO()
    buf.write("component,feature,loading\n")
    for c, comp in enumerate(pca.loadings, start=1):
        for name, value in zip(pca.feature_names, comp):
            buf.write(f"PC{c},{name},{value:.10f}\n")
    return buf.getvalue()


def explained_variance_csv(pca: PcaResult) -> str:
    buf = io.StringIO()
    buf.write("component,explained_variance_ratio,cumulative\n")
    cum = np.cumsum(pca.explained_variance_ratio)
    for c, (r, s) in enumerate(zip(pca.explained_variance_ratio, cum), start=1):
        buf.write(f"PC{c},{r:.10f},{s:.10f}\n")
    return buf.getvalue()
