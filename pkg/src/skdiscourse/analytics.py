"""Statistical analyses over classified posts.

Four pieces: a multinomial logit relating category odds to author
influence and community, weekly prevalence timelines, a local
regression (LOESS) display smoother, and a sharp regression
discontinuity at an event cutoff using retweet latency as the
outcome. The logit and the discontinuity estimator are implemented
here from first principles (Newton-Raphson with analytic derivatives;
side-wise local linear fits with heteroskedasticity-robust errors),
not delegated.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from datetime import datetime, timezone
from typing import Iterable, Mapping, Sequence

import numpy as np
from scipy.special import logsumexp
from scipy.stats import norm

from .categories import CATEGORIES, CATEGORY_INDEX, NON_RACIST, validate_category
from .classify import Prediction
from .corpus import Corpus
from .network import CommunityResult, RetweetGraph


# ---------------------------------------------------------------------------
# multinomial logit


@dataclass(frozen=True)
class MNLCoefficient:
    term: str
    category: str  # the non-reference outcome this row belongs to
    estimate: float
    se: float
    z: float
    p_value: float


@dataclass
class MNLModel:
    """Fitted multinomial logit with reference category non_racist."""

    terms: list[str]
    community_levels: list[str]
    reference: str
    coef: np.ndarray  # (2, p): rows covert, overt
    se: np.ndarray
    loglik: float
    converged: bool
    criterion: str  # "gradient" or "max_iterations"
    n_iter: int
    grad_norm: float
    n_obs: int
    separation_flag: bool
    table: list[MNLCoefficient] = field(default_factory=list)


def _design_matrix(
    log_indegree: np.ndarray | None,
    community: Sequence[str] | None,
    levels: list[str],
    n: int,
) -> tuple[np.ndarray, list[str]]:
    terms = ["intercept"]
    if log_indegree is not None:
        terms.append("log_indegree")
    if community is not None:
        terms += [f"community[{c}]" for c in levels[1:]]
    X = np.zeros((n, len(terms)))
    X[:, 0] = 1.0
    col = 1
    if log_indegree is not None:
        X[:, col] = log_indegree
        col += 1
    if community is not None:
        for level in levels[1:]:
            X[:, col] = [1.0 if c == level else 0.0 for c in community]
            col += 1
    return X, terms


def _check_rank(X: np.ndarray, terms: list[str]) -> None:
    from scipy.linalg import qr

    _, R, piv = qr(X, mode="economic", pivoting=True)
    diag = np.abs(np.diag(R))
    threshold = diag.max() * max(X.shape) * np.finfo(float).eps if diag.size else 0.0
    deficient = [terms[piv[i]] for i in range(len(diag)) if diag[i] <= threshold]
    if deficient:
        raise ValueError(
            f"design matrix is rank deficient; collinear columns: {deficient}"
        )


def _mnl_loglik_grad_hessian(
    beta: np.ndarray, X: np.ndarray, y: np.ndarray
) -> tuple[float, np.ndarray, np.ndarray]:
    """Log-likelihood, gradient and Hessian of the 3-class logit.

    beta is (2, p) for the two non-reference classes. The gradient is
    stacked (2p,), the Hessian (2p, 2p) with blocks
    H[c,d] = -sum_i x_i x_i^T p_ic (delta_cd - p_id).
    """
    n, p = X.shape
    logits = np.zeros((n, 3))
    logits[:, 1:] = X @ beta.T  # reference class logit fixed at 0
    log_denominator = logsumexp(logits, axis=1)
    loglik = float(np.sum(logits[np.arange(n), y] - log_denominator))
    probs = np.exp(logits - log_denominator[:, None])  # (n, 3)

    grad = np.zeros((2, p))
    for c in (1, 2):
        indicator = (y == c).astype(float)
        grad[c - 1] = X.T @ (indicator - probs[:, c])
    grad_flat = grad.reshape(-1)

    hessian = np.zeros((2 * p, 2 * p))
    for c in (1, 2):
        for d in (1, 2):
            w = probs[:, c] * ((1.0 if c == d else 0.0) - probs[:, d])
            block = -(X.T * w) @ X
            hessian[(c - 1) * p : c * p, (d - 1) * p : d * p] = block
    return loglik, grad_flat, hessian


def fit_multinomial_logit(
    log_indegree: Sequence[float] | None,
    community: Sequence[str] | None,
    outcome: Sequence[str],
    max_iter: int = 500,
    tol: float = 1e-8,
) -> MNLModel:
    """Fit category ~ log in-degree + community by Newton-Raphson.

    Either covariate may be None, dropping its design columns; with
    both None the model is intercept-only and the fitted probabilities
    are the sample proportions. Convergence is max-norm of the
    gradient below *tol* (reported as criterion "gradient") or the
    iteration cap (criterion "max_iterations", converged False).
    Collinear design columns are an error naming the columns.
    Quasi-separation is detected by coefficient blow-up and flagged,
    not raised: estimates are returned but marked unstable.
    """
    if len(outcome) == 0:
        raise ValueError("no observations")
    x = None
    if log_indegree is not None:
        x = np.asarray(log_indegree, dtype=float)
        if x.ndim != 1:
            raise ValueError("log_indegree must be one-dimensional")
        if len(x) != len(outcome):
            raise ValueError("log_indegree and outcome differ in length")
        if not np.all(np.isfinite(x)):
            raise ValueError("log_indegree must be finite")
    if community is not None and len(community) != len(outcome):
        raise ValueError("community and outcome differ in length")
    y = np.array([CATEGORY_INDEX[validate_category(o)] for o in outcome])
    levels = sorted(set(community)) if community is not None else []
    X, terms = _design_matrix(x, community, levels, len(outcome))
    _check_rank(X, terms)

    p = X.shape[1]
    beta = np.zeros((2, p))
    loglik, grad, hessian = _mnl_loglik_grad_hessian(beta, X, y)
    n_iter = 0
    criterion = "max_iterations"
    converged = False
    for n_iter in range(1, max_iter + 1):
        grad_norm = float(np.max(np.abs(grad)))
        if grad_norm < tol:
            criterion = "gradient"
            converged = True
            n_iter -= 1
            break
        try:
            step = np.linalg.solve(hessian, -grad)
        except np.linalg.LinAlgError:
            step = np.linalg.lstsq(hessian, -grad, rcond=None)[0]
        # backtracking keeps Newton honest far from the optimum
        scale = 1.0
        for _ in range(30):
            candidate = beta + scale * step.reshape(2, p)
            new_loglik, new_grad, new_hessian = _mnl_loglik_grad_hessian(
                candidate, X, y
            )
            if new_loglik >= loglik - 1e-12:
                break
            scale *= 0.5
        beta, loglik, grad, hessian = candidate, new_loglik, new_grad, new_hessian
    grad_norm = float(np.max(np.abs(grad)))
    if grad_norm < tol:
        criterion = "gradient"
        converged = True

    separation = bool(np.max(np.abs(beta)) > 25.0)

    # observed-information standard errors
    try:
        cov = np.linalg.inv(-hessian)
        se = np.sqrt(np.clip(np.diag(cov), 0.0, None)).reshape(2, p)
    except np.linalg.LinAlgError:
        se = np.full((2, p), np.nan)
        separation = True

    table: list[MNLCoefficient] = []
    for c_i, category in enumerate(CATEGORIES[1:]):
        for j, term in enumerate(terms):
            est = float(beta[c_i, j])
            s = float(se[c_i, j])
            z = est / s if s > 0 else float("nan")
            p_val = 2 * (1 - norm.cdf(abs(z))) if not math.isnan(z) else float("nan")
            table.append(MNLCoefficient(term, category, est, s, z, p_val))

    return MNLModel(
        terms=terms,
        community_levels=levels,
        reference=NON_RACIST,
        coef=beta,
        se=se,
        loglik=loglik,
        converged=converged,
        criterion=criterion,
        n_iter=n_iter,
        grad_norm=grad_norm,
        n_obs=len(outcome),
        separation_flag=separation,
        table=table,
    )


def predicted_probabilities(
    model: MNLModel,
    log_indegree: float | None = None,
    community: str | None = None,
) -> tuple[float, float, float]:
    """Predicted (non_racist, covert, overt) probabilities for a
    covariate profile. Profile entries must match the fitted design:
    unknown community levels are an error, as is omitting a covariate
    the model was fit with."""
    x = np.zeros(len(model.terms))
    x[0] = 1.0
    if "log_indegree" in model.terms:
        if log_indegree is None:
            raise ValueError("model was fit with log_indegree; provide a value")
        x[model.terms.index("log_indegree")] = log_indegree
    if model.community_levels:
        if community is None:
            raise ValueError("model was fit with community; provide a level")
        if community not in model.community_levels:
            raise ValueError(
                f"unknown community level {community!r}; "
                f"fitted levels: {model.community_levels}"
            )
        for j, term in enumerate(model.terms):
            if term == f"community[{community}]":
                x[j] = 1.0
    logits = np.concatenate([[0.0], model.coef @ x])
    probs = np.exp(logits - logsumexp(logits))
    return (float(probs[0]), float(probs[1]), float(probs[2]))


# ---------------------------------------------------------------------------
# weekly prevalence


@dataclass(frozen=True)
class WeekPoint:
    iso_year: int
    iso_week: int
    n_posts: int
    n_covert: int
    n_overt: int

    @property
    def iso_label(self) -> str:
        return f"{self.iso_year}-W{self.iso_week:02d}"

    @property
    def pct_covert(self) -> float:
        return 100.0 * self.n_covert / self.n_posts

    @property
    def pct_overt(self) -> float:
        return 100.0 * self.n_overt / self.n_posts


def weekly_prevalence(
    labels: Mapping[str, str] | Iterable[Prediction],
    created_at: Mapping[str, int],
) -> list[WeekPoint]:
    """Covert/overt percentage per ISO week, ordered in time.

    Weeks with no posts simply do not appear (gaps are not zeros).
    Posts without a timestamp are an error naming the post.
    """
    label_map = (
        dict(labels)
        if isinstance(labels, Mapping)
        else {p.post_id: p.label for p in labels}
    )
    buckets: dict[tuple[int, int], list[int]] = {}
    for post_id, label in label_map.items():
        validate_category(label)
        if post_id not in created_at:
            raise ValueError(f"no timestamp for post {post_id!r}")
        moment = datetime.fromtimestamp(created_at[post_id], tz=timezone.utc)
        iso = moment.isocalendar()
        buckets.setdefault((iso.year, iso.week), []).append(
            CATEGORY_INDEX[label]
        )
    points = []
    for (year, week), codes in sorted(buckets.items()):
        points.append(
            WeekPoint(
                iso_year=year,
                iso_week=week,
                n_posts=len(codes),
                n_covert=sum(1 for c in codes if c == 1),
                n_overt=sum(1 for c in codes if c == 2),
            )
        )
    return points


# ---------------------------------------------------------------------------
# LOESS


@dataclass
class LoessFit:
    x: np.ndarray
    fitted: np.ndarray  # aligned with the input order
    span: float

    def predict(self, targets: Sequence[float]) -> np.ndarray:
        return _loess_predict(self._train_x, self._train_y, self.span, np.asarray(targets, float))

    _train_x: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]
    _train_y: np.ndarray = field(default=None, repr=False)  # type: ignore[assignment]


def _loess_predict(
    x: np.ndarray, y: np.ndarray, span: float, targets: np.ndarray
) -> np.ndarray:
    n = len(x)
    q = max(2, math.ceil(span * n))
    q = min(q, n)
    out = np.empty(len(targets))
    for k, x0 in enumerate(targets):
        distance = np.abs(x - x0)
        neighbor_idx = np.argsort(distance, kind="stable")[:q]
        local_d = distance[neighbor_idx]
        d_max = local_d.max()
        if d_max == 0:
            # all neighbors at the target x (duplicate-x degenerate
            # case): fall back to the local mean
            out[k] = float(y[neighbor_idx].mean())
            continue
        w = (1 - (local_d / d_max) ** 3) ** 3
        w = np.clip(w, 0.0, None)
        if w.sum() <= 0:
            out[k] = float(y[neighbor_idx].mean())
            continue
        xs = x[neighbor_idx] - x0
        ys = y[neighbor_idx]
        sw = w.sum()
        sx = (w * xs).sum()
        sxx = (w * xs * xs).sum()
        sy = (w * ys).sum()
        sxy = (w * xs * ys).sum()
        det = sw * sxx - sx * sx
        if det <= 1e-12 * max(sw * sxx, 1e-300):
            # weight mass concentrated on a single x: local mean
            out[k] = float(sy / sw)
            continue
        intercept = (sxx * sy - sx * sxy) / det
        out[k] = float(intercept)
    return out


def loess_fit(
    x: Sequence[float], y: Sequence[float], span: float = 0.75
) -> LoessFit:
    """Tricube-weighted local linear regression (LOESS display
    smoother).

    For each target point the q = ceil(span * n) nearest observations
    get tricube weights and a weighted line is fit; the smoothed value
    is its intercept at the target. Exactly reproduces linear data and
    leaves constant data fixed. Neighborhoods that collapse onto a
    single x value fall back to the local weighted mean.
    """
    x_arr = np.asarray(x, dtype=float)
    y_arr = np.asarray(y, dtype=float)
    if x_arr.ndim != 1 or x_arr.shape != y_arr.shape:
        raise ValueError("x and y must be one-dimensional and aligned")
    if len(x_arr) < 2:
        raise ValueError("need at least two points to smooth")
    if not 0.0 < span <= 1.0:
        raise ValueError("span must be in (0, 1]")
    fitted = _loess_predict(x_arr, y_arr, span, x_arr)
    fit = LoessFit(x=x_arr, fitted=fitted, span=span)
    fit._train_x = x_arr
    fit._train_y = y_arr
    return fit


# ---------------------------------------------------------------------------
# retweet events and the discontinuity estimator


@dataclass(frozen=True)
class RetweetEvent:
    """One retweet with its latency back to the source post.

    ``retweeted_at`` (the retweet's own timestamp) is carried because
    it is the running variable of the discontinuity analysis."""

    retweet_id: str
    source_id: str
    retweeter: str
    source_author: str
    category: str
    latency_seconds: float
    retweeted_at: int
    community: int | None = None


@dataclass
class EventReport:
    n_events: int
    n_negative_latency: int
    n_missing_source: int
    n_unlabeled_source: int


def build_retweet_events(
    corpus: Corpus,
    predictions: Mapping[str, str] | Iterable[Prediction],
    communities: CommunityResult | None = None,
) -> tuple[list[RetweetEvent], EventReport]:
    """Retweets joined to their source's predicted category.

    Negative latencies (clock skew: retweet timestamped before its
    source) are excluded and counted, as are retweets of posts missing
    from the corpus or lacking a prediction.
    """
    labels = (
        dict(predictions)
        if isinstance(predictions, Mapping)
        else {p.post_id: p.label for p in predictions}
    )
    events: list[RetweetEvent] = []
    n_negative = n_missing = n_unlabeled = 0
    for post in corpus:
        if not post.is_retweet:
            continue
        source = corpus.get(post.retweet_of)
        if source is None:
            n_missing += 1
            continue
        category = labels.get(source.post_id)
        if category is None:
            n_unlabeled += 1
            continue
        latency = post.created_at - source.created_at
        if latency < 0:
            n_negative += 1
            continue
        events.append(
            RetweetEvent(
                retweet_id=post.post_id,
                source_id=source.post_id,
                retweeter=post.author_id,
                source_author=source.author_id,
                category=category,
                latency_seconds=float(latency),
                retweeted_at=post.created_at,
                community=(
                    communities.assignment.get(post.author_id)
                    if communities
                    else None
                ),
            )
        )
    return events, EventReport(
        n_events=len(events),
        n_negative_latency=n_negative,
        n_missing_source=n_missing,
        n_unlabeled_source=n_unlabeled,
    )


class InsufficientSideError(ValueError):
    """Raised when either side of the cutoff is too thin to fit."""

    def __init__(self, n_left: int, n_right: int, minimum: int):
        self.n_left = n_left
        self.n_right = n_right
        super().__init__(
            f"not enough observations around the cutoff: {n_left} on the "
            f"left, {n_right} on the right; need at least {minimum} per side"
        )


@dataclass(frozen=True)
class RDDResult:
    estimate: float
    se: float
    p_value: float
    n_left: int
    n_right: int
    left_intercept: float
    right_intercept: float
    window_seconds: float
    relative_change_pct: float | None  # 100 * estimate / left intercept


def _local_linear_intercept(s: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    """OLS of y on [1, s]; returns (intercept, HC1 robust SE of it)."""
    n = len(s)
    X = np.column_stack([np.ones(n), s])
    beta, *_ = np.linalg.lstsq(X, y, rcond=None)
    residuals = y - X @ beta
    XtX_inv = np.linalg.pinv(X.T @ X)
    k = X.shape[1]
    if n > k:
        meat = X.T @ (X * (residuals**2)[:, None])
        cov = (n / (n - k)) * XtX_inv @ meat @ XtX_inv
        var = max(float(cov[0, 0]), 0.0)
    else:
        var = 0.0  # saturated fit, zero residuals
    return float(beta[0]), math.sqrt(var)


def rdd_estimate(
    times: Sequence[float],
    values: Sequence[float],
    cutoff: float,
    window_seconds: float = 4 * 3600,
    min_side: int = 2,
) -> RDDResult:
    """Sharp discontinuity in *values* at *cutoff*.

    Local linear fit on each side of the cutoff within the window
    (left: cutoff - window <= t < cutoff; right: cutoff <= t <=
    cutoff + window). The estimate is the right-limit minus left-limit
    of the fitted intercepts; its standard error combines the two
    sides' HC1 robust intercept errors in quadrature, with a normal
    p-value. Too few observations on either side raises
    :class:`InsufficientSideError` carrying both counts.

    The estimate is equivariant under shifting all times and the
    cutoff by the same constant.
    """
    t = np.asarray(times, dtype=float)
    y = np.asarray(values, dtype=float)
    if t.shape != y.shape or t.ndim != 1:
        raise ValueError("times and values must be aligned one-dimensional")
    if window_seconds <= 0:
        raise ValueError("window must be positive")
    s = t - cutoff
    left = (s >= -window_seconds) & (s < 0)
    right = (s >= 0) & (s <= window_seconds)
    n_left, n_right = int(left.sum()), int(right.sum())
    if n_left < min_side or n_right < min_side:
        raise InsufficientSideError(n_left, n_right, min_side)

    left_b0, left_se = _local_linear_intercept(s[left], y[left])
    right_b0, right_se = _local_linear_intercept(s[right], y[right])
    estimate = right_b0 - left_b0
    se = math.sqrt(left_se**2 + right_se**2)
    if se > 0:
        z = estimate / se
        p_value = 2 * (1 - norm.cdf(abs(z)))
    else:
        p_value = 1.0 if estimate == 0 else 0.0
    return RDDResult(
        estimate=estimate,
        se=se,
        p_value=float(p_value),
        n_left=n_left,
        n_right=n_right,
        left_intercept=left_b0,
        right_intercept=right_b0,
        window_seconds=window_seconds,
        relative_change_pct=(100.0 * estimate / left_b0) if left_b0 != 0 else None,
    )


def latency_rdd(
    events: Sequence[RetweetEvent],
    cutoff: float,
    window_seconds: float = 4 * 3600,
    category: str | None = None,
    community: int | None = None,
    min_side: int = 2,
) -> RDDResult:
    """Discontinuity in retweet latency at the cutoff, optionally
    restricted to one content category and one retweeter community."""
    selected = [
        e
        for e in events
        if (category is None or e.category == category)
        and (community is None or e.community == community)
    ]
    return rdd_estimate(
        [e.retweeted_at for e in selected],
        [e.latency_seconds for e in selected],
        cutoff,
        window_seconds,
        min_side,
    )


def event_cutoff_epoch(local_time: str, tz_name: str) -> int:
    """Epoch seconds for a local wall-clock time in an IANA zone."""
    from zoneinfo import ZoneInfo

    moment = datetime.fromisoformat(local_time).replace(tzinfo=ZoneInfo(tz_name))
    return int(moment.timestamp())


# ---------------------------------------------------------------------------
# CSV exports


TIMELINE_CSV_FIELDS = ("iso_week", "pct_covert", "pct_overt")
RDD_CSV_FIELDS = (
    "category",
    "community",
    "estimate",
    "se",
    "p_value",
    "n_left",
    "n_right",
)
LOESS_CSV_FIELDS = ("offset_seconds", "fitted_latency", "side")


def write_timeline_csv(points: Sequence[WeekPoint], path) -> None:
    import csv as _csv
    from pathlib import Path as _Path

    path = _Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = _csv.writer(handle)
        writer.writerow(TIMELINE_CSV_FIELDS)
        for point in points:
            writer.writerow(
                [point.iso_label, f"{point.pct_covert:.6f}", f"{point.pct_overt:.6f}"]
            )


def write_rdd_csv(rows: Sequence[dict], path) -> None:
    """Rows: category, community (display name or empty), and either
    the result fields or empty strings when a cell had too little
    data (n_left/n_right still report the counts)."""
    import csv as _csv
    from pathlib import Path as _Path

    path = _Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = _csv.writer(handle)
        writer.writerow(RDD_CSV_FIELDS)
        for row in rows:
            writer.writerow(
                [
                    row["category"],
                    row.get("community", ""),
                    _fmt6(row.get("estimate")),
                    _fmt6(row.get("se")),
                    _fmt6(row.get("p_value")),
                    row.get("n_left", ""),
                    row.get("n_right", ""),
                ]
            )


def write_loess_csv(rows: Sequence[tuple[float, float, str]], path) -> None:
    import csv as _csv
    from pathlib import Path as _Path

    path = _Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", encoding="utf-8", newline="") as handle:
        writer = _csv.writer(handle)
        writer.writerow(LOESS_CSV_FIELDS)
        for offset, fitted, side in rows:
            writer.writerow([f"{offset:.6f}", f"{fitted:.6f}", side])


def _fmt6(value) -> str:
    return "" if value is None else f"{value:.6f}"
