"""Selection and pairing of treated (high-to-low) with control
(stayed-high) cluster pairs under covariate balance constraints.

The selection maximizes the number of matched quadruples subject to all 12
after-matching absolute standardized differences (6 covariates for the
early clusters, 6 for the late) staying at or under a threshold, with the
denominator frozen at the before-matching pooled sd so the constraints are
linear in the selection indicators. Instances up to ``exact_limit`` per
side are solved exactly by depth-first branch and bound with a fractional
relaxation bound; larger instances use a penalty-guided greedy plus
swap/insert local search with a drop-repair loop, and the result is always
verified against the constraints before it is returned.
"""

from __future__ import annotations

import csv
import itertools
import math
from dataclasses import dataclass
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy.optimize import linprog

from ._util import fmt
from .errors import ConvergenceError, DataValidationError
from .geomatch import assignment_indices
from .model import COVARIATE_NAMES, ClusterPair, Quadruple

QUADRUPLES_COLUMNS = ["treated_early_id", "treated_late_id",
                      "control_early_id", "control_late_id"]
BALANCE_COLUMNS = [
    "covariate", "period", "treated_mean_before", "control_mean_before",
    "treated_mean_after", "control_mean_after", "stddiff_before",
    "stddiff_after",
]

# slack applied to every constraint comparison so boundary-tight LP
# solutions are not rejected by the last float ulp
_FEAS_EPS = 1e-9


def std_diff(treated, control) -> float:
    """Absolute difference in means in pooled standard deviation units.

    The pooled sd is sqrt((var_T + var_C) / 2) with sample variances. A
    zero pooled sd gives 0 for equal means and +inf otherwise.
    """
    t = np.asarray(treated, dtype=float)
    c = np.asarray(control, dtype=float)
    if t.size == 0 or c.size == 0:
        raise DataValidationError("std_diff needs nonempty groups")
    var_t = float(t.var(ddof=1)) if t.size > 1 else 0.0
    var_c = float(c.var(ddof=1)) if c.size > 1 else 0.0
    s_pool = math.sqrt((var_t + var_c) / 2.0)
    gap = abs(float(t.mean()) - float(c.mean()))
    if s_pool == 0.0:
        return 0.0 if gap == 0.0 else math.inf
    return gap / s_pool


@dataclass(frozen=True)
class BalanceRow:
    covariate: str
    period: str
    treated_mean_before: float
    control_mean_before: float
    treated_mean_after: float      # nan when the match is empty
    control_mean_after: float
    stddiff_before: float
    stddiff_after: float


@dataclass(frozen=True)
class BalanceReport:
    rows: Tuple[BalanceRow, ...]
    n_treated_before: int
    n_control_before: int
    n_matched: int

    def is_balanced(self, threshold: float) -> bool:
        if self.n_matched == 0:
            return True
        return all(r.stddiff_after <= threshold + _FEAS_EPS for r in self.rows)


def pair_covariates(pair: ClusterPair) -> Tuple[float, ...]:
    """The 12-vector (early block then late block) used for balance."""
    return pair.early.covariate_vector() + pair.late.covariate_vector()


def _covariate_labels() -> List[Tuple[str, str]]:
    return ([(n, "early") for n in COVARIATE_NAMES]
            + [(n, "late") for n in COVARIATE_NAMES])


def _pooled_sd(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    var_t = x.var(axis=0, ddof=1) if len(x) > 1 else np.zeros(x.shape[1])
    var_c = y.var(axis=0, ddof=1) if len(y) > 1 else np.zeros(y.shape[1])
    return np.sqrt((var_t + var_c) / 2.0)


def selection_feasible(
    x: np.ndarray, y: np.ndarray, sel_t: Sequence[int], sel_c: Sequence[int],
    tau: np.ndarray,
) -> bool:
    """Check |sum_sel x - sum_sel y| <= k * tau componentwise (the linear
    form of the after-matching balance constraints)."""
    k = len(sel_t)
    if k != len(sel_c):
        return False
    if k == 0:
        return True
    diff = np.abs(x[list(sel_t)].sum(axis=0) - y[list(sel_c)].sum(axis=0))
    return bool(np.all(diff <= k * tau + _FEAS_EPS * (1.0 + k * tau)))


def _lp_upper_bound(x: np.ndarray, y: np.ndarray, tau: np.ndarray) -> int:
    """Fractional relaxation of the max-cardinality problem."""
    n_t, n_c = len(x), len(y)
    nvar = n_t + n_c
    c = np.zeros(nvar)
    c[:n_t] = -1.0
    a_eq = np.zeros((1, nvar))
    a_eq[0, :n_t] = 1.0
    a_eq[0, n_t:] = -1.0
    rows = []
    for j in range(x.shape[1]):
        base = np.concatenate([x[:, j] - tau[j], -y[:, j]])
        rows.append(base)
        rows.append(np.concatenate([-x[:, j] - tau[j], y[:, j]]))
    a_ub = np.array(rows)
    res = linprog(c, A_ub=a_ub, b_ub=np.zeros(len(rows)), A_eq=a_eq,
                  b_eq=[0.0], bounds=[(0.0, 1.0)] * nvar, method="highs")
    if not res.success:
        return 0
    return int(math.floor(-res.fun + 1e-7))


def _feasible_at_k(
    x: np.ndarray, y: np.ndarray, tau: np.ndarray, k: int, node_cap: int = 200_000
) -> Optional[Tuple[List[int], List[int]]]:
    """Depth-first branch and bound for the fixed-size feasibility program;
    the fractional relaxation is the pruning bound."""
    n_t, n_c = len(x), len(y)
    nvar = n_t + n_c
    a_eq = np.zeros((2, nvar))
    a_eq[0, :n_t] = 1.0
    a_eq[1, n_t:] = 1.0
    b_eq = np.array([k, k], dtype=float)
    rows, rhs = [], []
    for j in range(x.shape[1]):
        row = np.concatenate([x[:, j], -y[:, j]])
        rows.append(row)
        rhs.append(k * tau[j])
        rows.append(-row)
        rhs.append(k * tau[j])
    a_ub = np.array(rows)
    b_ub = np.array(rhs) + _FEAS_EPS * (1.0 + np.array(rhs))
    zero_c = np.zeros(nvar)

    stack: List[dict] = [{}]
    nodes = 0
    while stack:
        fixed = stack.pop()
        nodes += 1
        if nodes > node_cap:
            raise ConvergenceError(
                f"cardinality matching branch and bound exceeded {node_cap} nodes"
            )
        bounds = [(0.0, 1.0)] * nvar
        for var, val in fixed.items():
            bounds[var] = (float(val), float(val))
        res = linprog(zero_c, A_ub=a_ub, b_ub=b_ub, A_eq=a_eq, b_eq=b_eq,
                      bounds=bounds, method="highs")
        if not res.success:
            continue
        v = res.x
        frac = np.abs(v - np.round(v))
        if frac.max() < 1e-7:
            sel = np.round(v).astype(int)
            sel_t = [i for i in range(n_t) if sel[i] == 1]
            sel_c = [i for i in range(n_c) if sel[n_t + i] == 1]
            if (len(sel_t) == k and len(sel_c) == k
                    and selection_feasible(x, y, sel_t, sel_c, tau)):
                return sel_t, sel_c
            # fell through the numeric check: force a branch instead
            if not np.any((frac > 0) & (frac < 1e-7)):
                continue
        branch = int(np.argmax(frac))
        stack.append({**fixed, branch: 0})
        stack.append({**fixed, branch: 1})
    return None


def _solve_exact(
    x: np.ndarray, y: np.ndarray, tau: np.ndarray
) -> Tuple[List[int], List[int]]:
    upper = min(len(x), len(y), _lp_upper_bound(x, y, tau))
    # the (always feasible) heuristic solution is a lower bound; when it
    # meets the relaxation bound there is nothing left to branch on
    heur_t, heur_c = _solve_heuristic(x, y, tau)
    if len(heur_t) >= upper:
        return heur_t, heur_c
    for k in range(upper, len(heur_t), -1):
        found = _feasible_at_k(x, y, tau, k)
        if found is not None:
            return found
    return heur_t, heur_c


def _excess(diff_sum: np.ndarray, k: int, tau: np.ndarray) -> np.ndarray:
    return np.maximum(np.abs(diff_sum) - k * tau, 0.0)


def _solve_heuristic(
    x: np.ndarray, y: np.ndarray, tau: np.ndarray
) -> Tuple[List[int], List[int]]:
    """Penalty-guided greedy construction, swap local search, and a
    drop-repair loop; only a verified-feasible selection is returned.

    The per-constraint penalty weights (1/tau) play the role of fixed
    Lagrange multipliers on the relaxed balance constraints.
    """
    n_t, n_c = len(x), len(y)
    weights = 1.0 / np.maximum(tau, 1e-8)

    sel_t: List[int] = []
    sel_c: List[int] = []
    free_t = list(range(n_t))
    free_c = list(range(n_c))
    sum_t = np.zeros(x.shape[1])
    sum_c = np.zeros(y.shape[1])

    def score(diff: np.ndarray, k: int) -> np.ndarray:
        # diff has shape (..., n_cov); returns weighted violation
        return _excess(diff, k, tau) @ weights

    # greedy: grow to full size, each step adding the (t, c) pair that
    # keeps the weighted constraint violation smallest
    while free_t and free_c:
        k_new = len(sel_t) + 1
        cand_t = (sum_t + x[free_t])[:, None, :]
        cand_c = (sum_c + y[free_c])[None, :, :]
        v = score(cand_t - cand_c, k_new)
        i, j = np.unravel_index(int(np.argmin(v)), v.shape)
        t, c = free_t[i], free_c[j]
        sel_t.append(t)
        sel_c.append(c)
        free_t.remove(t)
        free_c.remove(c)
        sum_t += x[t]
        sum_c += y[c]

    def current_violation() -> float:
        return float(score(sum_t - sum_c, len(sel_t)))

    def local_search():
        nonlocal sum_t, sum_c
        while True:
            current = current_violation()
            if current == 0.0 or not sel_t:
                return
            moved = False
            if free_t:
                # replace sel_t[pos] with a free candidate
                trial = (sum_t - x[sel_t])[:, None, :] + x[free_t][None, :, :]
                v = score(trial - sum_c, len(sel_t))
                pos, j = np.unravel_index(int(np.argmin(v)), v.shape)
                if v[pos, j] < current - 1e-12:
                    out, new = sel_t[pos], free_t[j]
                    sel_t[pos] = new
                    free_t[j] = out
                    sum_t += x[new] - x[out]
                    moved = True
                    current = current_violation()
            if free_c:
                trial = (sum_c - y[sel_c])[:, None, :] + y[free_c][None, :, :]
                v = score(sum_t - trial, len(sel_c))
                pos, j = np.unravel_index(int(np.argmin(v)), v.shape)
                if v[pos, j] < current - 1e-12:
                    out, new = sel_c[pos], free_c[j]
                    sel_c[pos] = new
                    free_c[j] = out
                    sum_c += y[new] - y[out]
                    moved = True
            if not moved:
                return

    def drop_worst():
        # remove the (treated, control) combination whose joint removal
        # most improves the violation
        nonlocal sum_t, sum_c
        k_new = len(sel_t) - 1
        drop_t = (sum_t - x[sel_t])[:, None, :]
        drop_c = (sum_c - y[sel_c])[None, :, :]
        v = score(drop_t - drop_c, k_new)
        i, j = np.unravel_index(int(np.argmin(v)), v.shape)
        t, c = sel_t.pop(i), sel_c.pop(j)
        free_t.append(t)
        free_c.append(c)
        sum_t -= x[t]
        sum_c -= y[c]

    local_search()
    while sel_t and not selection_feasible(x, y, sel_t, sel_c, tau):
        drop_worst()
        local_search()

    # insert phase: grow back while feasibility is kept
    grew = True
    while grew and free_t and free_c:
        grew = False
        for t in sorted(free_t):
            for c in sorted(free_c):
                if selection_feasible(x, y, sel_t + [t], sel_c + [c], tau):
                    sel_t.append(t)
                    sel_c.append(c)
                    free_t.remove(t)
                    free_c.remove(c)
                    grew = True
                    break
            if grew:
                break
    return sorted(sel_t), sorted(sel_c)


def _mahalanobis_cost(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    pooled = np.vstack([u, v])
    cov = np.cov(pooled, rowvar=False, ddof=1)
    cov = np.atleast_2d(cov) + 1e-8 * np.eye(pooled.shape[1])
    cov_inv = np.linalg.inv(cov)
    diff = u[:, None, :] - v[None, :, :]
    return np.sqrt(np.maximum(
        np.einsum("ijk,kl,ijl->ij", diff, cov_inv, diff), 0.0))


def pair_within_selection(
    selected_treated: Sequence[ClusterPair],
    selected_control: Sequence[ClusterPair],
) -> List[Tuple[int, int]]:
    """One-to-one pairing of equal-size selections by min-cost assignment
    on the 12-covariate Mahalanobis distance; ties break on pair ids."""
    if len(selected_treated) != len(selected_control):
        raise DataValidationError("selections must have equal size")
    if not selected_treated:
        return []
    u = np.array([pair_covariates(p) for p in selected_treated])
    v = np.array([pair_covariates(p) for p in selected_control])
    tid = [(p.early.cluster_id, p.late.cluster_id) for p in selected_treated]
    cid = [(p.early.cluster_id, p.late.cluster_id) for p in selected_control]
    order_t = sorted(range(len(tid)), key=lambda i: tid[i])
    order_c = sorted(range(len(cid)), key=lambda i: cid[i])
    cost = _mahalanobis_cost(u[order_t], v[order_c])
    pairs = assignment_indices(cost, lexicographic=True)
    return [(order_t[i], order_c[j]) for i, j in pairs]


def _report(
    x: np.ndarray, y: np.ndarray, sel_t: List[int], sel_c: List[int]
) -> BalanceReport:
    s_pool = _pooled_sd(x, y)
    rows = []
    for j, (name, period) in enumerate(_covariate_labels()):
        before = std_diff(x[:, j], y[:, j])
        if sel_t:
            mt = float(x[sel_t, j].mean())
            mc = float(y[sel_c, j].mean())
            gap = abs(mt - mc)
            if s_pool[j] == 0.0:
                after = 0.0 if gap == 0.0 else math.inf
            else:
                after = gap / s_pool[j]
        else:
            mt = mc = after = float("nan")
        rows.append(BalanceRow(
            covariate=name, period=period,
            treated_mean_before=float(x[:, j].mean()),
            control_mean_before=float(y[:, j].mean()),
            treated_mean_after=mt, control_mean_after=mc,
            stddiff_before=before, stddiff_after=after,
        ))
    return BalanceReport(tuple(rows), len(x), len(y), len(sel_t))


def cardinality_match(
    treated: Sequence[ClusterPair],
    control: Sequence[ClusterPair],
    threshold: float = 0.1,
    exact_limit: int = 60,
) -> Tuple[List[Quadruple], BalanceReport]:
    """Largest balanced set of quadruples, plus the balance report.

    Requires every candidate to have all 12 covariates defined. An empty
    result is legal when no selection can satisfy the constraints.
    """
    if not treated or not control:
        raise DataValidationError("need at least one candidate on each side")
    x = np.array([pair_covariates(p) for p in treated], dtype=float)
    y = np.array([pair_covariates(p) for p in control], dtype=float)
    tau = threshold * _pooled_sd(x, y)

    if max(len(treated), len(control)) <= exact_limit:
        sel_t, sel_c = _solve_exact(x, y, tau)
    else:
        sel_t, sel_c = _solve_heuristic(x, y, tau)

    if not selection_feasible(x, y, sel_t, sel_c, tau):
        raise ConvergenceError("cardinality matching produced an infeasible "
                               "selection; this is a bug")

    chosen_t = [treated[i] for i in sel_t]
    chosen_c = [control[i] for i in sel_c]
    quadruples = [
        Quadruple(treated=chosen_t[i], control=chosen_c[j])
        for i, j in pair_within_selection(chosen_t, chosen_c)
    ]
    quadruples.sort(key=lambda q: (q.treated.early.cluster_id,
                                   q.control.early.cluster_id))
    return quadruples, _report(x, y, sel_t, sel_c)


def brute_force_max_cardinality(
    treated: Sequence[ClusterPair],
    control: Sequence[ClusterPair],
    threshold: float = 0.1,
) -> int:
    """Exhaustive subset-enumeration optimum, for cross-checks on small
    instances (the regression baseline, not the production path)."""
    x = np.array([pair_covariates(p) for p in treated], dtype=float)
    y = np.array([pair_covariates(p) for p in control], dtype=float)
    tau = threshold * _pooled_sd(x, y)
    for k in range(min(len(x), len(y)), 0, -1):
        sums_t = np.array([x[list(s)].sum(axis=0)
                           for s in itertools.combinations(range(len(x)), k)])
        sums_c = np.array([y[list(s)].sum(axis=0)
                           for s in itertools.combinations(range(len(y)), k)])
        gap = np.abs(sums_t[:, None, :] - sums_c[None, :, :])
        ok = np.all(gap <= k * tau + _FEAS_EPS * (1.0 + k * tau), axis=2)
        if ok.any():
            return k
    return 0


# ---------------------------------------------------------------------------
# artifacts


def write_quadruples_csv(quadruples: Sequence[Quadruple], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(QUADRUPLES_COLUMNS)
        for q in quadruples:
            writer.writerow([
                q.treated.early.cluster_id, q.treated.late.cluster_id,
                q.control.early.cluster_id, q.control.late.cluster_id,
            ])


def read_quadruples_csv(path, pairs_by_ids) -> List[Quadruple]:
    quadruples = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        if list(reader.fieldnames or []) != QUADRUPLES_COLUMNS:
            raise DataValidationError(f"{path}: unexpected quadruples.csv header")
        for row in reader:
            t_key = (row["treated_early_id"], row["treated_late_id"])
            c_key = (row["control_early_id"], row["control_late_id"])
            try:
                quadruples.append(Quadruple(
                    treated=pairs_by_ids[t_key], control=pairs_by_ids[c_key],
                ))
            except KeyError as exc:
                raise DataValidationError(
                    f"{path}: quadruple references unknown pair {exc}"
                ) from None
    return quadruples


def write_balance_csv(report: BalanceReport, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(BALANCE_COLUMNS)
        for r in report.rows:
            writer.writerow([
                r.covariate, r.period,
                fmt(r.treated_mean_before), fmt(r.control_mean_before),
                fmt(r.treated_mean_after), fmt(r.control_mean_after),
                fmt(r.stddiff_before), fmt(r.stddiff_after),
            ])
