"""Fuse document embeddings with topic mixtures and project to 2D.

The t-SNE here is the exact O(M^2) algorithm: Gaussian input affinities with
per-point bandwidths found by bisection against the target entropy,
symmetrized and normalized to a joint P; Student-t (1 dof) low-dimensional
affinities Q; gradient descent on KL(P||Q) with early exaggeration and a
two-phase momentum schedule. Recorded KL values are always computed against
the true (non-exaggerated) P.
"""

import logging
from dataclasses import dataclass

import numpy as np

from topicmine.errors import ConfigError, InputError, NumericalError
from topicmine.fileio import atomic_write_text

log = logging.getLogger(__name__)


@dataclass
class FusionVector:
    doc_id: str
    vector: np.ndarray  # (d + K,) = [unit embedding ; lam * theta]
    lam: float
    zero_embedding: bool = False


def fuse_vectors(embeddings, theta: np.ndarray, lam: float = 1.0) -> list[FusionVector]:
    """Concatenate each L2-normalized document vector with its weighted theta row."""
    theta = np.asarray(theta, dtype=np.float64)
    if lam < 0:
        raise ConfigError(f"lambda must be >= 0, got {lam}")
    if embeddings.M != theta.shape[0]:
        raise InputError(
            f"alignment error: {embeddings.M} embeddings vs {theta.shape[0]} theta rows"
        )
    fused = []
    for i, doc_id in enumerate(embeddings.doc_ids):
        vec = np.asarray(embeddings.doc_vectors[i], dtype=np.float64)
        norm = float(np.linalg.norm(vec))
        zero = norm == 0.0
        unit = vec if zero else vec / norm
        fused.append(
            FusionVector(
                doc_id=doc_id,
                vector=np.concatenate([unit, lam * theta[i]]),
                lam=lam,
                zero_embedding=zero,
            )
        )
    n_zero = sum(f.zero_embedding for f in fused)
    if n_zero:
        log.warning("%d document embedding(s) are zero vectors; left unnormalized", n_zero)
    return fused


def fusion_matrix(fused: list[FusionVector]) -> np.ndarray:
    return np.vstack([f.vector for f in fused])


@dataclass
class TsneSettings:
    perplexity: float = 30.0
    iterations: int = 1000
    learning_rate: float = 200.0
    momentum_start: float = 0.5
    momentum_final: float = 0.8
    momentum_switch: int = 250
    exaggeration: float = 12.0
    exaggeration_iters: int = 250
    init_scale: float = 1e-4
    bisection_steps: int = 50
    entropy_tol: float = 1e-5
    record_every: int = 10
    seed: int = 0


@dataclass
class Projection2D:
    points: np.ndarray  # (M, 2)
    kl_history: np.ndarray
    dominant_topic: np.ndarray  # (M,) int
    settings: TsneSettings
    doc_ids: list[str] | None = None
    unconverged_bandwidths: int = 0


def _squared_distances(X: np.ndarray) -> np.ndarray:
    s = (X * X).sum(axis=1)
    d2 = s[:, None] + s[None, :] - 2.0 * (X @ X.T)
    np.maximum(d2, 0.0, out=d2)
    np.fill_diagonal(d2, 0.0)
    return d2


def _jitter_duplicates(X: np.ndarray, rng: np.random.Generator) -> np.ndarray:
    _, inverse, counts = np.unique(X, axis=0, return_inverse=True, return_counts=True)
    dup_rows = np.flatnonzero(counts[inverse] > 1)
    if len(dup_rows) == 0:
        return X
    X = X.copy()
    X[dup_rows] += rng.normal(0.0, 1e-9, size=(len(dup_rows), X.shape[1]))
    log.info("jittered %d duplicate points", len(dup_rows))
    return X


def conditional_affinities(
    X: np.ndarray,
    perplexity: float,
    bisection_steps: int = 50,
    entropy_tol: float = 1e-5,
) -> tuple[np.ndarray, int]:
    """Row-normalized Gaussian affinities whose row entropies match log(perplexity).

    Returns the conditional matrix and the number of points whose bandwidth
    bisection did not reach tolerance within the step budget.
    """
    n = X.shape[0]
    d2 = _squared_distances(X)
    target = np.log(perplexity)
    beta = np.ones(n)
    beta_min = np.full(n, -np.inf)
    beta_max = np.full(n, np.inf)
    eye = np.eye(n, dtype=bool)
    done = np.zeros(n, dtype=bool)
    p_cond = np.zeros((n, n))
    for _ in range(bisection_steps):
        w = np.exp(-d2 * beta[:, None])
        w[eye] = 0.0
        sum_w = w.sum(axis=1)
        sum_w = np.where(sum_w == 0.0, 1.0, sum_w)
        p = w / sum_w[:, None]
        # H = log(sum_w) + beta * E[d2]
        entropy = np.log(sum_w) + beta * (d2 * p).sum(axis=1)
        diff = entropy - target
        newly = ~done
        p_cond[newly] = p[newly]
        done |= np.abs(diff) <= entropy_tol
        if done.all():
            break
        too_high = (diff > 0) & ~done
        too_low = (diff < 0) & ~done
        beta_min[too_high] = beta[too_high]
        beta[too_high] = np.where(
            np.isinf(beta_max[too_high]),
            beta[too_high] * 2.0,
            (beta[too_high] + beta_max[too_high]) / 2.0,
        )
        beta_max[too_low] = beta[too_low]
        beta[too_low] = np.where(
            np.isinf(beta_min[too_low]),
            beta[too_low] / 2.0,
            (beta[too_low] + beta_min[too_low]) / 2.0,
        )
    unconverged = int((~done).sum())
    if unconverged:
        log.warning("%d point(s) did not reach entropy tolerance", unconverged)
    return p_cond, unconverged


def joint_affinities(p_cond: np.ndarray) -> np.ndarray:
    n = p_cond.shape[0]
    return (p_cond + p_cond.T) / (2.0 * n)


def low_dim_affinities(Y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Student-t joint Q and the unnormalized kernel matrix."""
    num = 1.0 / (1.0 + _squared_distances(Y))
    np.fill_diagonal(num, 0.0)
    return num / num.sum(), num


def _kl_divergence(P: np.ndarray, Q: np.ndarray) -> float:
    mask = P > 0.0
    return float(np.sum(P[mask] * np.log(P[mask] / Q[mask])))


def tsne(vectors: np.ndarray, settings: TsneSettings, theta: np.ndarray | None = None,
         doc_ids: list[str] | None = None) -> Projection2D:
    """Exact t-SNE to 2D with seeded Gaussian initialization."""
    X = np.asarray(vectors, dtype=np.float64)
    n = X.shape[0]
    if n < 4:
        raise ConfigError(f"t-SNE needs at least 4 points, got {n}")
    if settings.perplexity > (n - 1) / 3:
        raise ConfigError(
            f"perplexity {settings.perplexity} too large for {n} points; "
            f"needs perplexity <= (M-1)/3 = {(n - 1) / 3:.2f}"
        )
    rng = np.random.default_rng(settings.seed)
    X = _jitter_duplicates(X, rng)
    p_cond, unconverged = conditional_affinities(
        X, settings.perplexity, settings.bisection_steps, settings.entropy_tol
    )
    P = joint_affinities(p_cond)
    Y = rng.normal(0.0, settings.init_scale, size=(n, 2))
    velocity = np.zeros_like(Y)
    Q, _ = low_dim_affinities(Y)
    kl_history = [_kl_divergence(P, Q)]
    for it in range(1, settings.iterations + 1):
        exaggerating = it <= settings.exaggeration_iters
        p_eff = P * settings.exaggeration if exaggerating else P
        Q, num = low_dim_affinities(Y)
        pq = (p_eff - Q) * num
        grad = 4.0 * ((np.diag(pq.sum(axis=1)) - pq) @ Y)
        if not np.isfinite(grad).all():
            raise NumericalError(f"non-finite t-SNE gradient at iteration {it}")
        momentum = (
            settings.momentum_start
            if it <= settings.momentum_switch
            else settings.momentum_final
        )
        velocity = momentum * velocity - settings.learning_rate * grad
        Y = Y + velocity
        Y = Y - Y.mean(axis=0)
        if it % settings.record_every == 0 or it == settings.iterations:
            Q, _ = low_dim_affinities(Y)
            kl_history.append(_kl_divergence(P, Q))
    if theta is not None:
        dominant = np.asarray(theta).argmax(axis=1).astype(np.int64)
    else:
        dominant = np.zeros(n, dtype=np.int64)
    return Projection2D(
        points=Y,
        kl_history=np.array(kl_history),
        dominant_topic=dominant,
        settings=settings,
        doc_ids=doc_ids,
        unconverged_bandwidths=unconverged,
    )


def emit_points(projection: Projection2D, doc_ids: list[str] | None = None) -> list[str]:
    """CSV rows 'doc_id,x,y,dominant_topic' ordered by doc_id."""
    ids = doc_ids or projection.doc_ids
    if ids is None:
        ids = [f"doc-{i + 1}" for i in range(projection.points.shape[0])]
    if len(ids) != projection.points.shape[0]:
        raise InputError(
            f"alignment error: {len(ids)} ids vs {projection.points.shape[0]} points"
        )
    rows = ["doc_id,x,y,dominant_topic"]
    for i in sorted(range(len(ids)), key=lambda j: ids[j]):
        x, y = projection.points[i]
        rows.append(f"{ids[i]},{x:.6f},{y:.6f},{int(projection.dominant_topic[i])}")
    return rows


def write_points_csv(projection: Projection2D, path, doc_ids: list[str] | None = None) -> None:
    atomic_write_text(path, "\n".join(emit_points(projection, doc_ids)) + "\n")


PALETTE = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b",
    "#e377c2", "#7f7f7f", "#bcbd22", "#17becf", "#aec7e8", "#ffbb78",
]


def render_svg(projection: Projection2D, path, size: int = 600, margin: int = 20) -> None:
    """Plain scatter of the 2D points, colored by dominant topic."""
    pts = projection.points
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    span = np.where(hi - lo == 0.0, 1.0, hi - lo)
    scale = (size - 2 * margin) / span
    lines = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}" '
        f'viewBox="0 0 {size} {size}">',
        f'<rect width="{size}" height="{size}" fill="white"/>',
    ]
    for i in range(pts.shape[0]):
        x = margin + (pts[i, 0] - lo[0]) * scale[0]
        y = size - margin - (pts[i, 1] - lo[1]) * scale[1]
        color = PALETTE[int(projection.dominant_topic[i]) % len(PALETTE)]
        lines.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{color}"/>')
    lines.append("</svg>")
    atomic_write_text(path, "\n".join(lines) + "\n")


def silhouette(points: np.ndarray, labels: np.ndarray) -> float:
    """Mean silhouette over points (euclidean); singleton clusters score 0."""
    points = np.asarray(points, dtype=np.float64)
    labels = np.asarray(labels)
    n = points.shape[0]
    unique = np.unique(labels)
    if len(unique) < 2:
        raise ConfigError("silhouette requires at least two clusters")
    dist = np.sqrt(_squared_distances(points))
    scores = np.zeros(n)
    members = {c: np.flatnonzero(labels == c) for c in unique}
    for i in range(n):
        own = members[labels[i]]
        if len(own) == 1:
            scores[i] = 0.0
            continue
        a = dist[i, own].sum() / (len(own) - 1)
        b = min(
            dist[i, members[c]].mean() for c in unique if c != labels[i]
        )
        scores[i] = (b - a) / max(a, b)
    return float(scores.mean())
