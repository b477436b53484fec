"""Statistics over automatic metrics and human ratings.

Ratings CSV schema (one row per image and rater)::

    image_id,rater_id,q1,q2,q3,q4,q5,q6

q1..q5 are integers 1-5 (overall, shape novelty, texture novelty, shape
complexity, texture complexity); q6 is 1 when the rater thinks a designer made
the image and 0 for "computer".
"""

from __future__ import annotations

import csv
import io
import itertools
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np
from scipy import stats

from .errors import ValidationError

RATING_COLUMNS = ("image_id", "rater_id", "q1", "q2", "q3", "q4", "q5", "q6")
QUESTIONS = ("q1", "q2", "q3", "q4", "q5", "q6")
QUESTION_LABELS = OrderedDict(
    [
        ("q1", "overall"),
        ("q2", "shape novelty"),
        ("q3", "texture novelty"),
        ("q4", "shape complexity"),
        ("q5", "texture complexity"),
        ("q6", "designer"),
    ]
)
EXPECTED_RATERS = 5


class DegenerateInput(ValidationError):
    """Input for which the statistic is undefined (zero variance, constant differences)."""


# ---------------------------------------------------------------- ratings
@dataclass
class AggregatedRatings:
    image_ids: np.ndarray
    means: np.ndarray  # (n_images, 6); q6 column is the fraction answering "designer"
    counts: np.ndarray

    @property
    def flagged(self) -> np.ndarray:
        """Images rated by a number of raters other than five."""
        return self.image_ids[self.counts != EXPECTED_RATERS]

    def question(self, q: str) -> np.ndarray:
        return self.means[:, QUESTIONS.index(q)]

    def columns(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((q, self.question(q)) for q in QUESTIONS)

    def subset(self, ids) -> "AggregatedRatings":
        pos = {int(i): r for r, i in enumerate(self.image_ids)}
        rows = [pos[int(i)] for i in ids if int(i) in pos]
        return AggregatedRatings(self.image_ids[rows], self.means[rows], self.counts[rows])

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("image_id",) + QUESTIONS + ("n_raters",))
        for i, row, c in zip(self.image_ids, self.means, self.counts):
            w.writerow([int(i)] + [repr(float(v)) for v in row] + [int(c)])
        return buf.getvalue()


def _parse_int(text: str, column: str, row: int) -> int:
    try:
        return int(text)
    except (TypeError, ValueError):
        raise ValidationError(f"row {row}: column {column} is not an integer: {text!r}") from None


def aggregate_records(records: Sequence[tuple]) -> AggregatedRatings:
    """Aggregate (image_id, rater_id, q1..q6) tuples; validates ranges and uniqueness."""
    seen = set()
    sums: dict = defaultdict(lambda: np.zeros(6))
    counts: dict = defaultdict(int)
    for row, rec in enumerate(records, start=2):
        image_id, rater_id, *answers = rec
        key = (image_id, rater_id)
        if key in seen:
            raise ValidationError(f"row {row}: duplicate rating for image {image_id} by rater {rater_id}")
        seen.add(key)
        for q, v in zip(QUESTIONS, answers):
            lo, hi = (0, 1) if q == "q6" else (1, 5)
            if not lo <= v <= hi:
                raise ValidationError(f"row {row}: {q}={v} outside [{lo}, {hi}]")
        sums[image_id] += np.asarray(answers, dtype=np.float64)
        counts[image_id] += 1
    if not counts:
        raise ValidationError("no rating rows")
    ids = np.array(sorted(counts), dtype=np.int64)
    cnt = np.array([counts[i] for i in ids])
    means = np.stack([sums[i] for i in ids]) / cnt[:, None]
    return AggregatedRatings(ids, means, cnt)


def read_rating_records(path) -> list:
    path = Path(path)
    try:
        fh = open(path, newline="")
    except OSError as err:
        raise ValidationError(f"cannot read ratings file {path}: {err}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != RATING_COLUMNS:
            raise ValidationError(f"{path}: header must be exactly {','.join(RATING_COLUMNS)}")
        records = []
        for row, fields_ in enumerate(reader, start=2):
            if not fields_:
                continue
            if len(fields_) != len(RATING_COLUMNS):
                raise ValidationError(f"{path}: row {row} has {len(fields_)} fields, expected {len(RATING_COLUMNS)}")
            image_id = _parse_int(fields_[0], "image_id", row)
            rater_id = fields_[1].strip()
            answers = [_parse_int(v, c, row) for v, c in zip(fields_[2:], QUESTIONS)]
            records.append((image_id, rater_id, *answers))
    return records


def ingest_ratings(path) -> AggregatedRatings:
    try:
        return aggregate_records(read_rating_records(path))
    except ValidationError as err:
        msg = str(err)
        raise ValidationError(msg if msg.startswith(str(path)) else f"{path}: {msg}") from None


def write_rating_records(records: Sequence[tuple]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RATING_COLUMNS)
    for rec in records:
        w.writerow(rec)
    return buf.getvalue()


def simulate_ratings(metric_columns: dict, ids, n_raters: int = EXPECTED_RATERS, seed: int = 0) -> list:
    """Synthetic rating records loosely driven by the automatic metrics.

    Used to exercise the analysis pipeline when no human study is available.
    Each question is a noisy, clipped, rounded linear function of standardized
    metric columns (``shape_confusion``, ``texture_confusion``, ``nn_distance``,
    ``darkness``, ``avg_intensity``, ``skewness``), so correlations have a known
    sign but realistic noise.
    """
    rng = np.random.default_rng(seed)
    ids = [int(i) for i in ids]

    def z(name):
        v = np.asarray(metric_columns[name], dtype=np.float64)
        sd = v.std()
        return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)

    sc, tc, nn, dark, inten, skew = (z(n) for n in ("shape_confusion", "texture_confusion", "nn_distance", "darkness", "avg_intensity", "skewness"))
    latent = {
        "q1": 3.0 - 0.5 * nn - 0.3 * sc + 0.2 * inten,
        "q2": 3.0 + 0.6 * nn + 0.3 * sc,
        "q3": 3.0 + 0.6 * tc + 0.2 * nn,
        "q4": 3.0 + 0.4 * skew + 0.3 * sc,
        "q5": 3.0 + 0.5 * skew + 0.4 * tc,
    }
    p_designer = 1.0 / (1.0 + np.exp(-(0.4 * dark - 0.4 * nn)))
    records = []
    for row, image_id in enumerate(ids):
        for r in range(n_raters):
            answers = [int(np.clip(np.rint(latent[q][row] + rng.normal(0, 0.8)), 1, 5)) for q in QUESTIONS[:5]]
            answers.append(int(rng.random() < p_designer[row]))
            records.append((image_id, f"r{r}", *answers))
    return records


# ------------------------------------------------------------- statistics
def pearson(x, y) -> float:
    """Sample Pearson correlation (two-pass, centered)."""
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.ndim != 1 or x.shape != y.shape:
        raise ValidationError(f"pearson needs two 1-d vectors of equal length, got {x.shape} and {y.shape}")
    if len(x) < 2:
        raise ValidationError("pearson needs at least 2 observations")
    xc = x - x.mean()
    yc = y - y.mean()
    sxx = float(np.dot(xc, xc))
    syy = float(np.dot(yc, yc))
    if sxx == 0 or syy == 0:
        raise DegenerateInput("pearson is undefined for a zero-variance vector")
    r = float(np.dot(xc, yc)) / np.sqrt(sxx * syy)
    return float(min(1.0, max(-1.0, r)))


@dataclass
class CorrelationResult:
    row_names: list
    col_names: list
    matrix: np.ndarray
    n_aligned: int
    n_dropped: int
    undefined: list = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow([""] + list(self.col_names))
        for name, row in zip(self.row_names, self.matrix):
            w.writerow([name] + ["" if np.isnan(v) else repr(float(v)) for v in row])
        return buf.getvalue()


def correlation_matrix(left_ids, left: dict, right_ids=None, right: Optional[dict] = None) -> CorrelationResult:
    """Pearson matrix between the columns of two tables aligned on image id.

    With `right` omitted the left table is correlated with itself and the
    diagonal is exactly 1. Entries whose inputs have zero variance are NaN and
    listed in `undefined`.
    """
    auto = right is None
    if auto:
        right_ids, right = left_ids, left
    lpos = {int(i): r for r, i in enumerate(left_ids)}
    rpos = {int(i): r for r, i in enumerate(right_ids)}
    common = sorted(set(lpos) & set(rpos))
    n_dropped = len(set(lpos) ^ set(rpos))
    if len(common) < 3:
        raise ValidationError(f"only {len(common)} images are present in both tables; need at least 3")
    li = [lpos[i] for i in common]
    ri = [rpos[i] for i in common]
    lcols = OrderedDict((k, np.asarray(v, dtype=np.float64)[li]) for k, v in left.items())
    rcols = OrderedDict((k, np.asarray(v, dtype=np.float64)[ri]) for k, v in right.items())
    mat = np.full((len(lcols), len(rcols)), np.nan)
    undefined = []
    for (a, (na, xa)), (b, (nb, xb)) in itertools.product(enumerate(lcols.items()), enumerate(rcols.items())):
        if auto and a == b:
            mat[a, b] = 1.0
            continue
        try:
            mat[a, b] = pearson(xa, xb)
        except DegenerateInput:
            undefined.append((na, nb))
    return CorrelationResult(list(lcols), list(rcols), mat, len(common), n_dropped, undefined)


@dataclass
class TTestResult:
    t: float
    p: float
    n: int
    mean_difference: float


def paired_ttest(a, b) -> TTestResult:
    """Two-sided paired Student t-test with n - 1 degrees of freedom."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.ndim != 1 or a.shape != b.shape:
        raise ValidationError(f"paired t-test needs two 1-d vectors of equal length, got {a.shape} and {b.shape}")
    if len(a) < 2:
        raise ValidationError("paired t-test needs at least 2 pairs")
    d = a - b
    if np.all(d == d[0]):
        raise DegenerateInput("paired differences are constant; the t statistic is undefined")
    res = stats.ttest_rel(a, b)
    return TTestResult(float(res.statistic), float(res.pvalue), len(a), float(d.mean()))


@dataclass
class PCAResult:
    loadings: np.ndarray  # (n_metrics, components)
    projections: np.ndarray  # (n_rows, components)
    explained_variance: np.ndarray
    explained_ratio: np.ndarray
    mean: np.ndarray
    rank_deficient: bool

    def to_csv(self, metric_names: Sequence[str], row_ids=None) -> tuple[str, str]:
        """(loadings CSV, projections CSV)."""
        k = self.loadings.shape[1]
        pcs = [f"pc{i + 1}" for i in range(k)]
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["metric"] + pcs)
        for name, row in zip(metric_names, self.loadings):
            w.writerow([name] + [repr(float(v)) for v in row])
        w.writerow(["explained_variance"] + [repr(float(v)) for v in self.explained_variance])
        w.writerow(["explained_ratio"] + [repr(float(v)) for v in self.explained_ratio])
        loadings = buf.getvalue()
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["image_id"] + pcs)
        ids = range(len(self.projections)) if row_ids is None else row_ids
        for i, row in zip(ids, self.projections):
            w.writerow([int(i)] + [repr(float(v)) for v in row])
        return loadings, buf.getvalue()


def pca(matrix, components: int = 2, standardize: bool = False) -> PCAResult:
    """PCA of mean-centred columns via the covariance eigendecomposition."""
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValidationError(f"pca needs a 2-d matrix with at least 2 rows, got shape {x.shape}")
    if not 1 <= components <= x.shape[1]:
        raise ValidationError(f"components must be in [1, {x.shape[1]}], got {components}")
    mean = x.mean(axis=0)
    xc = x - mean
    if standardize:
        sd = xc.std(axis=0, ddof=1)
        xc = xc / np.where(sd > 0, sd, 1.0)
    cov = xc.T @ xc / (x.shape[0] - 1)
    evals, evecs = np.linalg.eigh(cov)
    order = np.argsort(evals)[::-1][:components]
    evals = np.clip(evals[order], 0.0, None)
    vecs = evecs[:, order]
    for j in range(components):
        if vecs[np.argmax(np.abs(vecs[:, j])), j] < 0:
            vecs[:, j] = -vecs[:, j]
    total = float(np.trace(cov))
    tol = max(x.shape) * np.finfo(float).eps * (evals[0] if evals.size and evals[0] > 0 else 1.0)
    deficient = bool(np.any(evals <= tol))
    evals = np.where(evals <= tol, 0.0, evals)
    ratio = evals / total if total > 0 else np.zeros_like(evals)
    return PCAResult(vecs, xc @ vecs, evals, ratio, mean, deficient)


def wundt_data(per_model: dict) -> list:
    """Model -> (novelty, rating) into [(model, novelty, rating)] sorted by novelty, then name."""
    points = [(str(name), float(nv), float(r)) for name, (nv, r) in per_model.items()]
    return sorted(points, key=lambda p: (p[1], p[0]))


def wundt_csv(points: list) -> str:
    lines = ["model,novelty,rating"]
    lines += [f"{m},{n!r},{r!r}" for m, n, r in points]
    return "\n".join(lines) + "\n"


# -------------------------------------------------- real-vs-generated study
REALNESS_COLUMNS = ("image_id", "rater_id", "source", "answer")


@dataclass
class RealnessProportions:
    generated_thought_real: float
    real_thought_generated: float
    n_generated: int
    n_real: int


def realness_proportions(path) -> RealnessProportions:
    """Proportions from a ``image_id,rater_id,source,answer`` file (source/answer in real|generated)."""
    path = Path(path)
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != REALNESS_COLUMNS:
                raise ValidationError(f"{path}: header must be exactly {','.join(REALNESS_COLUMNS)}")
            rows = list(reader)
    except OSError as err:
        raise ValidationError(f"cannot read {path}: {err}") from None
    tallies = {"real": [0, 0], "generated": [0, 0]}  # [answered real, total]
    for row, rec in enumerate(rows, start=2):
        src, ans = rec["source"].strip(), rec["answer"].strip()
        if src not in tallies or ans not in tallies:
            raise ValidationError(f"{path}: row {row}: source and answer must be 'real' or 'generated'")
        tallies[src][0] += ans == "real"
        tallies[src][1] += 1
    gen, real = tallies["generated"], tallies["real"]
    return RealnessProportions(
        gen[0] / gen[1] if gen[1] else float("nan"),
        (real[1] - real[0]) / real[1] if real[1] else float("nan"),
        gen[1],
        real[1],
    )
