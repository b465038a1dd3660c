"""Sweep the number of independent components against the full-feature head."""

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import ParameterError, UndefinedMetricError
from .ica import IcaConfig, fit_ica, transform
from .ordinal_head import FitConfig, evaluate, fit_head

DEFAULT_EPSILON = 0.015


@dataclass(frozen=True)
class Trial:
    n: int
    kappa: float
    converged: bool


@dataclass
class SelectionReport:
    kappa_full: float
    per_n: list
    chosen_n: int
    epsilon: float
    satisfied: bool = True
    models: dict = field(default_factory=dict, repr=False, compare=False)
    full_head: object = field(default=None, repr=False, compare=False)

    def trial(self, n):
        for t in self.per_n:
            if t.n == n:
                return t
        raise KeyError(n)


def derive_seed(master_seed, *keys):
    """Deterministic 32-bit child seed for ``keys`` under ``master_seed``."""
    ss = np.random.SeedSequence([int(master_seed) & 0xFFFFFFFFFFFFFFFF, *keys])
    return int(ss.generate_state(1)[0])


def worker_count():
    """Workers allowed by ``ICX_THREADS`` (0 or unset means sequential)."""
    try:
        return max(0, int(os.environ.get("ICX_THREADS", "0")))
    except ValueError:
        return 0


def _kappa_or_nan(head, X, y):
    try:
        return evaluate(head, X, y)
    except UndefinedMetricError:
        return math.nan


def select_components(train_X, train_y, val_X, val_y, n_range=(1, 10),
                      epsilon=DEFAULT_EPSILON, ica_cfg=None, fit_cfg=None,
                      master_seed=0, workers=None):
    """Smallest n whose IC-space head is within ``epsilon`` of the full head.

    Validation kappa drives the choice.  ``ica_cfg``/``fit_cfg`` are
    templates: their ``n_components`` and ``seed`` fields are overridden per
    trial with seeds derived from ``master_seed``.  If no n qualifies the
    best-scoring n is chosen and ``satisfied`` is False.
    """
    n_lo, n_hi = n_range
    if not 1 <= n_lo <= n_hi:
        raise ParameterError(f"invalid n_range {n_range}")
    ica_cfg = ica_cfg or IcaConfig(n_components=1)
    fit_cfg = fit_cfg or FitConfig()

    full_head = fit_head(train_X, train_y, replace(fit_cfg, seed=derive_seed(master_seed, 0)))
    kappa_full = evaluate(full_head, val_X, val_y)

    def run(n):
        cfg = replace(ica_cfg, n_components=n, seed=derive_seed(master_seed, 1, n))
        model = fit_ica(train_X, cfg)
        head = fit_head(
            transform(model, train_X), train_y,
            replace(fit_cfg, seed=derive_seed(master_seed, 2, n)),
            input_kind="independent_components",
        )
        kappa = _kappa_or_nan(head, transform(model, val_X), val_y)
        return Trial(n, kappa, model.converged), (model, head)

    ns = list(range(n_lo, n_hi + 1))
    workers = worker_count() if workers is None else workers
    if workers > 0:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(run, ns))
    else:
        results = [run(n) for n in ns]

    per_n = [t for t, _ in results]
    models = {t.n: fitted for t, fitted in results}
    ok = [t for t in per_n if not math.isnan(t.kappa) and kappa_full - t.kappa <= epsilon]
    if ok:
        chosen, satisfied = ok[0].n, True
    else:
        scored = [t for t in per_n if not math.isnan(t.kappa)] or per_n
        chosen = max(scored, key=lambda t: (np.nan_to_num(t.kappa, nan=-np.inf), -t.n)).n
        satisfied = False
    return SelectionReport(
        kappa_full=kappa_full,
        per_n=per_n,
        chosen_n=chosen,
        epsilon=epsilon,
        satisfied=satisfied,
        models=models,
        full_head=full_head,
    )


def report_to_text(report):
    """Fixed-width table: a summary line, a column header, one row per n."""
    lines = [
        "kappa_full=%.6f epsilon=%.6f chosen_n=%d satisfied=%s"
        % (report.kappa_full, report.epsilon, report.chosen_n,
           "yes" if report.satisfied else "no (no n satisfied)"),
        "%4s  %10s  %10s  %9s" % ("n", "kappa_n", "delta", "converged"),
    ]
    for t in report.per_n:
        if math.isnan(t.kappa):
            kap, delta = "undefined", "undefined"
        else:
            kap, delta = "%.6f" % t.kappa, "%.6f" % (report.kappa_full - t.kappa)
        lines.append("%4d  %10s  %10s  %9s" % (t.n, kap, delta, "yes" if t.converged else "no"))
    return "\n".join(lines) + "\n"
