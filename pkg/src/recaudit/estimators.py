"""Statistics over trajectory logs: preference gaps, weighted least
squares with significance, burst marginal effects, and forgetting curves.

The preference gap at observation step t is the control bot's watched
partisan score minus the counterfactual bot's.  Gaps are pooled across
focal users and replications with stratum weights; inference is classical
WLS by default, with a cluster bootstrap (resampling focal users) exposed
because per-step observations within a session are not independent.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import stats

from .bots import Session
from .catalog import CategoryThresholds, label_category
from .errors import (AlignmentError, InsufficientDataError,
                     InvalidInputError, SingularDesignError)
from .experiments import (BIAS_ROLES, ROLE_CONTROL, ExperimentResult)
from .platform import CatalogIndex, HOMEPAGE, SIDEBAR

CLASSICAL = "classical"
BOOTSTRAP = "bootstrap"

INTERCEPT = "preference"

_STAR_THRESHOLDS = ((0.001, "***"), (0.01, "**"), (0.05, "*"), (0.1, "+"))


def significance_stars(p: float) -> str:
    for threshold, stars in _STAR_THRESHOLDS:
        if p < threshold:
            return stars
    return ""


@dataclass
class RegressionResult:
    names: list[str]
    coef: np.ndarray
    se: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    p: np.ndarray
    stars: list[str]
    r_squared: float
    n_obs: int
    se_method: str

    def __getitem__(self, name: str) -> dict:
        i = self.names.index(name)
        return {"coef": float(self.coef[i]), "se": float(self.se[i]),
                "ci": (float(self.ci_lo[i]), float(self.ci_hi[i])),
                "p": float(self.p[i]), "stars": self.stars[i]}

    def to_dict(self) -> dict:
        return {
            "coefficients": {name: self[name] for name in self.names},
            "r_squared": self.r_squared,
            "n_obs": self.n_obs,
            "se_method": self.se_method,
        }


@dataclass
class PreferenceSeries:
    """Per-step control-vs-counterfactual gap for one replication."""

    steps: np.ndarray
    y_expr: np.ndarray
    y_alg: np.ndarray
    role: str
    weight: float = 1.0

    @property
    def y_pref(self) -> np.ndarray:
        return self.y_expr - self.y_alg


def preference_gap(control: Session, counterfactual: Session,
                   weight: float = 1.0) -> PreferenceSeries:
    """Pointwise watched-score gap over the shared observation window.

    Both sessions must come from the same replication: equal phase lengths
    and an identical learning-phase video sequence.
    """
    if (control.n_learning != counterfactual.n_learning
            or control.n_observation != counterfactual.n_observation):
        raise AlignmentError(
            "sessions have different phase lengths: "
            f"({control.n_learning},{control.n_observation}) vs "
            f"({counterfactual.n_learning},{counterfactual.n_observation})")
    n = control.n_learning
    if control.watched_video_ids()[:n] != counterfactual.watched_video_ids()[:n]:
        raise AlignmentError("learning-phase video sequences differ")
    y_expr = control.column("watch_score")[n:]
    y_alg = counterfactual.column("watch_score")[n:]
    steps = np.arange(1, control.n_observation + 1)
    return PreferenceSeries(steps, y_expr, y_alg, counterfactual.policy_kind,
                            weight)


@dataclass
class LearningFeatures:
    """Category counts over the learning phase and its final-6 burst."""

    n_c: int
    n_r: int
    n_fr: int
    n_c6: int
    n_r6: int
    n_fr6: int


def learning_features(session: Session, index: CatalogIndex,
                      thresholds: CategoryThresholds | None = None,
                      burst_window: int = 6) -> LearningFeatures:
    thresholds = thresholds or CategoryThresholds()
    categories = []
    for record in session.records[:session.n_learning]:
        score = index.video_info(record.video_id)[0]
        categories.append(None if score is None
                          else label_category(score, thresholds))
    tail = categories[-burst_window:]
    return LearningFeatures(
        n_c=categories.count("C"), n_r=categories.count("R"),
        n_fr=categories.count("fR"), n_c6=tail.count("C"),
        n_r6=tail.count("R"), n_fr6=tail.count("fR"))


# --- weighted least squares ------------------------------------------------

def fit_wls(y, features: dict, weights=None, se_method: str = CLASSICAL,
            clusters=None, n_boot: int = 500, seed: int = 0,
            ) -> RegressionResult:
    """Weighted least squares with an intercept ("preference").

    ``features`` maps column names to arrays.  Rows with NaN in y or any
    feature are dropped.  ``se_method`` is "classical" (homoskedastic
    t-based inference) or "bootstrap" (resample clusters -- typically focal
    users -- with normal-approximation intervals).
    """
    y = np.asarray(y, dtype=float)
    names = [INTERCEPT] + list(features)
    X = np.column_stack([np.ones_like(y)]
                        + [np.asarray(v, dtype=float) for v in features.values()])
    w = np.ones_like(y) if weights is None else np.asarray(weights, float)
    if np.any(w < 0):
        raise InvalidInputError("weights must be nonnegative")
    keep = np.isfinite(y) & np.all(np.isfinite(X), axis=1) & (w > 0)
    y, X, w = y[keep], X[keep], w[keep]
    cluster_ids = None
    if clusters is not None:
        cluster_ids = np.asarray(clusters, dtype=object)[keep]
    n, p = X.shape
    if n <= p:
        raise InsufficientDataError(f"{n} observations for {p} parameters")

    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    yw = y * sw
    if np.linalg.matrix_rank(Xw) < p:
        bad = [names[j] for j in range(1, p)
               if np.ptp(X[:, j]) == 0.0]
        raise SingularDesignError(
            f"design matrix is rank deficient (columns: {bad or 'unknown'})",
            columns=bad)
    xtx = Xw.T @ Xw
    coef = np.linalg.solve(xtx, Xw.T @ yw)
    resid = y - X @ coef
    rss = float(w @ resid**2)
    ybar = float(w @ y / w.sum())
    tss = float(w @ (y - ybar)**2)
    r_squared = 1.0 - rss / tss if tss > 0 else 1.0

    if se_method == CLASSICAL:
        sigma2 = rss / (n - p)
        cov = sigma2 * np.linalg.inv(xtx)
        se = np.sqrt(np.diag(cov))
        with np.errstate(divide="ignore", invalid="ignore"):
            tvals = np.where(se > 0, coef / se, np.inf * np.sign(coef))
        pvals = 2.0 * stats.t.sf(np.abs(tvals), df=n - p)
        crit = stats.t.ppf(0.975, df=n - p)
    elif se_method == BOOTSTRAP:
        se = _cluster_bootstrap_se(X, y, w, cluster_ids, n_boot, seed)
        with np.errstate(divide="ignore", invalid="ignore"):
            zvals = np.where(se > 0, coef / se, np.inf * np.sign(coef))
        pvals = 2.0 * stats.norm.sf(np.abs(zvals))
        crit = stats.norm.ppf(0.975)
    else:
        raise InvalidInputError(f"unknown se_method {se_method!r}")

    ci_lo = coef - crit * se
    ci_hi = coef + crit * se
    return RegressionResult(
        names=names, coef=coef, se=se, ci_lo=ci_lo, ci_hi=ci_hi, p=pvals,
        stars=[significance_stars(v) for v in pvals],
        r_squared=r_squared, n_obs=n, se_method=se_method)


def _cluster_bootstrap_se(X, y, w, cluster_ids, n_boot, seed):
    """SEs from resampling clusters; rows are resampled if clusters=None."""
    if cluster_ids is None:
        cluster_ids = np.arange(len(y)).astype(object)
    unique = np.unique(cluster_ids)
    # Per-cluster cross products make each bootstrap refit a small solve.
    sw = np.sqrt(w)
    Xw = X * sw[:, None]
    yw = y * sw
    a_blocks, b_blocks = [], []
    for c in unique:
        mask = cluster_ids == c
        Xc, yc = Xw[mask], yw[mask]
        a_blocks.append(Xc.T @ Xc)
        b_blocks.append(Xc.T @ yc)
    a_blocks = np.stack(a_blocks)
    b_blocks = np.stack(b_blocks)
    rng = np.random.default_rng(seed)
    m = len(unique)
    coefs = np.empty((n_boot, X.shape[1]))
    for b in range(n_boot):
        pick = rng.integers(0, m, size=m)
        A = a_blocks[pick].sum(axis=0)
        rhs = b_blocks[pick].sum(axis=0)
        try:
            coefs[b] = np.linalg.solve(A, rhs)
        except np.linalg.LinAlgError:
            coefs[b] = np.nan
    return np.nanstd(coefs, axis=0, ddof=1)


# --- bias-experiment regressions ------------------------------------------

def bias_gap_rows(result: ExperimentResult, index: CatalogIndex,
                  thresholds: CategoryThresholds | None = None):
    """Pooled per-step rows for the preference-gap regressions.

    Returns {role: dict of column arrays} for each counterfactual role,
    with learning-phase category counts taken from the control bot (all
    four bots share the learning sequence, so the source does not matter).
    """
    thresholds = thresholds or CategoryThresholds()
    rows: dict[str, dict[str, list]] = {}
    for (focal_id, rep), group in result.by_replication().items():
        control = group.get(ROLE_CONTROL)
        if control is None:
            continue
        feats = learning_features(control.session, index, thresholds)
        for role in BIAS_ROLES:
            if role == ROLE_CONTROL or role not in group:
                continue
            log = group[role]
            series = preference_gap(control.session, log.session,
                                    log.weight)
            out = rows.setdefault(role, {
                "y_pref": [], "t": [], "n_C": [], "n_R": [], "n_fR": [],
                "n_C6": [], "n_R6": [], "n_fR6": [],
                "weight": [], "cluster": []})
            k = len(series.steps)
            out["y_pref"].extend(series.y_pref.tolist())
            out["t"].extend(series.steps.tolist())
            out["n_C"].extend([feats.n_c] * k)
            out["n_R"].extend([feats.n_r] * k)
            out["n_fR"].extend([feats.n_fr] * k)
            out["n_C6"].extend([feats.n_c6] * k)
            out["n_R6"].extend([feats.n_r6] * k)
            out["n_fR6"].extend([feats.n_fr6] * k)
            out["weight"].extend([log.weight] * k)
            out["cluster"].extend([control.session.meta.get(
                "focal_id", focal_id)] * k)
    return {role: {k: (np.asarray(v, dtype=object) if k == "cluster"
                       else np.asarray(v, dtype=float))
                   for k, v in cols.items()}
            for role, cols in rows.items()}


def _centered(cols: dict, names_and_keys) -> dict:
    """Features centered at their weighted means.

    Centering makes the intercept the average composition-adjusted gap
    rather than an extrapolation to zero counts, which lies far outside
    the design when focal users are extreme consumers.
    """
    w = cols["weight"].astype(float)
    out = {}
    for name, key in names_and_keys:
        values = cols[key].astype(float)
        out[name] = values - np.average(values, weights=w)
    return out


def bias_regressions(result: ExperimentResult, index: CatalogIndex,
                     thresholds: CategoryThresholds | None = None,
                     se_method: str = CLASSICAL, n_boot: int = 500,
                     seed: int = 0) -> dict[str, RegressionResult]:
    """Fit y_pref ~ depth + learning category counts, per role.

    Covariates are centered at their weighted means, so the intercept is
    the mean preference gap at average depth and composition.
    """
    fits = {}
    for role, cols in bias_gap_rows(result, index, thresholds).items():
        features = _centered(cols, [("depth", "t"), ("n_C", "n_C"),
                                    ("n_R", "n_R"), ("n_fR", "n_fR")])
        fits[role] = fit_wls(
            cols["y_pref"], features,
            weights=cols["weight"], se_method=se_method,
            clusters=cols["cluster"], n_boot=n_boot, seed=seed)
    return fits


def burst_regressions(result: ExperimentResult, index: CatalogIndex,
                      thresholds: CategoryThresholds | None = None,
                      se_method: str = CLASSICAL, n_boot: int = 500,
                      seed: int = 0) -> dict[str, RegressionResult]:
    """Fit y_pref ~ final-6-video burst counts, per role.

    Burst counts are centered at their weighted means (see
    bias_regressions), so the intercept is the mean gap at the average
    burst composition.
    """
    fits = {}
    for role, cols in bias_gap_rows(result, index, thresholds).items():
        features = _centered(cols, [("n_C6", "n_C6"), ("n_R6", "n_R6"),
                                    ("n_fR6", "n_fR6")])
        fits[role] = fit_wls(
            cols["y_pref"], features,
            weights=cols["weight"], se_method=se_method,
            clusters=cols["cluster"], n_boot=n_boot, seed=seed)
    return fits


def marginal_effects(fit: RegressionResult, feature_means: dict,
                     feature: str, values) -> np.ndarray:
    """Model predictions varying one feature, others at their means.

    The fit's covariates are centered at ``feature_means``, so holding
    the other features at their means zeroes their terms out.
    """
    alpha = fit[INTERCEPT]["coef"]
    beta = fit[feature]["coef"]
    return np.asarray([alpha + beta * (v - feature_means[feature])
                       for v in values])


def weighted_feature_means(cols: dict, names) -> dict:
    w = cols["weight"].astype(float)
    return {name: float(np.average(cols[name].astype(float), weights=w))
            for name in names}


# --- forgetting curves -----------------------------------------------------

NOT_REACHED = "NOT_REACHED"


@dataclass
class ForgettingCurve:
    steps: np.ndarray
    mean: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    baseline: float
    epsilon: float
    window: int
    forgetting_step: int | None  # None => NOT_REACHED
    frac_fr: np.ndarray | None = None

    @property
    def reached(self) -> bool:
        return self.forgetting_step is not None

    @property
    def status(self) -> str:
        return str(self.forgetting_step) if self.reached else NOT_REACHED


def forgetting_curve(step_matrix, weights=None, baseline: float = 0.0,
                     epsilon: float = 0.03, window: int = 5,
                     n_boot: int = 500, seed: int = 0,
                     frac_matrix=None) -> ForgettingCurve:
    """Per-step weighted mean slate score with bootstrap bands.

    ``step_matrix`` is sessions x steps.  The forgetting step is the first
    step t such that |mean - baseline| < epsilon holds for ``window``
    consecutive steps starting at t; None if never sustained.
    Bootstrap resamples sessions (focal users).
    """
    M = np.asarray(step_matrix, dtype=float)
    if M.ndim != 2 or M.shape[0] == 0:
        raise InsufficientDataError("need a nonempty sessions x steps matrix")
    n_sessions, n_steps = M.shape
    w = np.ones(n_sessions) if weights is None \
        else np.asarray(weights, dtype=float)
    mean = np.average(M, axis=0, weights=w)
    rng = np.random.default_rng(seed)
    boots = np.empty((n_boot, n_steps))
    for b in range(n_boot):
        pick = rng.integers(0, n_sessions, size=n_sessions)
        boots[b] = np.average(M[pick], axis=0, weights=w[pick])
    ci_lo = np.quantile(boots, 0.025, axis=0)
    ci_hi = np.quantile(boots, 0.975, axis=0)

    inside = np.abs(mean - baseline) < epsilon
    forgetting_step = None
    for t in range(n_steps - window + 1):
        if inside[t:t + window].all():
            forgetting_step = t + 1
            break
    frac = None
    if frac_matrix is not None:
        frac = np.average(np.asarray(frac_matrix, dtype=float), axis=0,
                          weights=w)
    return ForgettingCurve(np.arange(1, n_steps + 1), mean, ci_lo, ci_hi,
                           baseline, epsilon, window, forgetting_step, frac)


_SCORE_COLUMN = {SIDEBAR: "sidebar_mean", HOMEPAGE: "home_mean"}
_FRAC_COLUMN = {SIDEBAR: "sidebar_frac_fr", HOMEPAGE: "home_frac_fr"}


def arm_matrix(result: ExperimentResult, role: str, surface: str,
               start_step: int, n_steps: int, metric: str = "score"):
    """Stack one arm's per-step slate statistics into a matrix.

    Steps are absolute session steps; ``start_step`` is 1-based and the
    window covers [start_step, start_step + n_steps).  Returns
    (matrix, weights).
    """
    column = (_SCORE_COLUMN if metric == "score" else _FRAC_COLUMN)[surface]
    rows, weights = [], []
    for (_, _, log_role), log in sorted(result.logs.items()):
        if log_role != role:
            continue
        values = log.session.column(column)
        if len(values) < start_step - 1 + n_steps:
            raise AlignmentError(
                f"session {log.focal_id}/{log.replication}/{role} has "
                f"{len(values)} steps, window needs "
                f"{start_step - 1 + n_steps}")
        rows.append(values[start_step - 1:start_step - 1 + n_steps])
        weights.append(log.weight)
    if not rows:
        raise InsufficientDataError(f"no sessions for arm {role!r}")
    return np.vstack(rows), np.asarray(weights, dtype=float)


def moderate_baseline(result: ExperimentResult, surface: str,
                      skip: int = 30) -> float:
    """Weighted mean slate score of pure moderate-history sessions."""
    column = _SCORE_COLUMN[surface]
    total, wsum = 0.0, 0.0
    for log in result.logs.values():
        values = log.session.column(column)[skip:]
        if len(values) == 0:
            continue
        total += log.weight * float(values.mean())
        wsum += log.weight
    if wsum == 0:
        raise InsufficientDataError("no baseline sessions")
    return total / wsum


def moving_average(values, window: int = 5) -> np.ndarray:
    """Trailing moving average used for smoothed per-step series."""
    values = np.asarray(values, dtype=float)
    out = np.full_like(values, np.nan)
    for i in range(len(values)):
        lo = max(0, i - window + 1)
        out[i] = np.nanmean(values[lo:i + 1])
    return out
