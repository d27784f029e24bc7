"""Independent brute-force reference implementations used as test oracles.

Everything here is deliberately written with plain Python loops and dicts,
no numpy and no imports from the package under test, so agreement with the
vectorized implementations is meaningful.
"""

import math


def pinball_ref(tau, s, q):
    if s > tau:
        return (s - tau) * q
    return (tau - s) * (1.0 - q)


def quantile_ref(values, q, rule):
    """Smallest sorted value whose empirical CDF reaches the target index."""
    ordered = sorted(values)
    k = len(ordered)
    if rule == "plain":
        i = math.ceil(q * k - 1e-9)
    else:
        i = min(math.ceil((k + 1) * q - 1e-9), k)
    i = min(max(i, 1), k)
    return ordered[i - 1]


def cell_error_ref(scores, membership, thresholds, g, v, q):
    n = len(scores)
    rows = [
        i
        for i in range(n)
        if (g is None or membership[i][g]) and thresholds[i] == v
    ]
    if not rows:
        return 0.0
    covered = sum(1 for i in rows if scores[i] <= v)
    cdf = covered / len(rows)
    return (len(rows) / n) * (q - cdf) ** 2


def worst_cell_ref(scores, membership, thresholds, n_groups, m, q):
    """Exhaustive max over groups and grid values; first maximum wins, so
    ties break to the smaller group index then the smaller value."""
    best = (-1, -1.0, -1.0)
    for g in range(n_groups):
        for j in range(m + 1):
            err = cell_error_ref(scores, membership, thresholds, g, j / m, q)
            if err > best[2]:
                best = (g, j / m, err)
    return best


def best_delta_ref(cell_scores, v_idx, m, q):
    """Exhaustive search over feasible signed grid shifts, minimizing the
    cell's mean pinball loss; ties prefer smaller |shift|, then downward."""
    best_key, best_target = None, None
    for j in range(m + 1):
        tau = j / m
        loss = sum(pinball_ref(tau, s, q) for s in cell_scores) / len(cell_scores)
        d = j - v_idx
        key = (loss, abs(d), 1 if d > 0 else 0)
        if best_key is None or key < best_key:
            best_key, best_target = key, j
    return (best_target - v_idx) / m


def calibration_error_ref(scores, membership, thresholds, g, q):
    rows = [i for i in range(len(scores)) if membership[i][g]]
    cells = {}
    for i in rows:
        cells.setdefault(thresholds[i], []).append(i)
    total = 0.0
    for v in sorted(cells):
        idxs = cells[v]
        cov = sum(1 for i in idxs if scores[i] <= v) / len(idxs)
        total += (len(idxs) / len(rows)) * (q - cov) ** 2
    return total


def coordinate_shift_ref(residuals, q):
    """1-D line search over residual breakpoints for the loss-minimizing
    shift; with ascending candidates and strict improvement this lands on
    the left endpoint of any flat minimum."""
    best_delta, best_loss = None, None
    for delta in sorted(residuals):
        loss = sum(pinball_ref(delta, u, q) for u in residuals)
        if best_loss is None or loss < best_loss:
            best_loss, best_delta = loss, delta
    return best_delta


def round_to_grid_ref(x, m):
    x = min(max(x, 0.0), 1.0)
    return min(int(math.floor(x * m + 0.5)), m)


def fit_mvp_ref(scores, membership, f0_values, m, q, alpha, max_iters):
    """Step-by-step re-implementation of the patching loop.

    Returns ``(patches, halting_reason)`` with patches as
    ``(group, v_index, delta_index)`` tuples.
    """
    n = len(scores)
    n_groups = len(membership[0]) if membership else 0
    k = [round_to_grid_ref(f, m) for f in f0_values]
    patches = []

    for _ in range(max_iters):
        # Halting check: per-group calibration error against its budget.
        calibrated = True
        candidates = []
        for g in range(n_groups):
            rows = [i for i in range(n) if membership[i][g]]
            if not rows:
                continue
            cells = {}
            for i in rows:
                cells.setdefault(k[i], []).append(i)
            q_value = 0.0
            for v_idx in sorted(cells):
                idxs = cells[v_idx]
                cov = sum(1 for i in idxs if scores[i] <= v_idx / m) / len(idxs)
                q_value += (len(idxs) / len(rows)) * (q - cov) ** 2
                err = (len(idxs) / n) * (q - cov) ** 2
                if err > 0.0:
                    candidates.append((err, g, v_idx))
            if q_value * (len(rows) / n) > alpha:
                calibrated = False
        if calibrated:
            return patches, "multicalibrated"

        candidates.sort(key=lambda item: (-item[0], item[1], item[2]))
        total = sum(pinball_ref(k[i] / m, scores[i], q) for i in range(n)) / n
        accepted = False
        for _err, g, v_idx in candidates:
            cell = [
                i for i in range(n) if membership[i][g] and k[i] == v_idx
            ]
            cell_scores = [scores[i] for i in cell]
            delta = best_delta_ref(cell_scores, v_idx, m, q)
            target = v_idx + round(delta * m)
            if target == v_idx:
                continue
            new_k = list(k)
            for i in cell:
                new_k[i] = target
            new_total = sum(
                pinball_ref(new_k[i] / m, scores[i], q) for i in range(n)
            ) / n
            if total - new_total > 1e-12:
                k = new_k
                patches.append((g, v_idx, target - v_idx))
                accepted = True
                break
        if not accepted:
            return patches, "stalled"
    return patches, "max_iters"
