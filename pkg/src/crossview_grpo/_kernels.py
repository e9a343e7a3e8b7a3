"""Hot numeric kernels with a numba path and a pure-numpy fallback.

Set ``CROSSVIEW_GRPO_DISABLE_NUMBA=1`` to force the numpy fallback. Both
paths take and return the same arrays; callers go through the module-level
names (``tiou_many``, ``grpo_objective_grad``, ``sft_objective_grad``) which
are bound once at import.
"""

import os

import numpy as np

try:
    import numba

    HAS_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency in practice
    HAS_NUMBA = False

_DISABLED = os.environ.get("CROSSVIEW_GRPO_DISABLE_NUMBA", "").strip().lower() in {
    "1",
    "true",
    "yes",
    "on",
}
USE_NUMBA = HAS_NUMBA and not _DISABLED
BACKEND = "numba" if USE_NUMBA else "numpy"


# ---------------------------------------------------------------------------
# numpy fallback
# ---------------------------------------------------------------------------


def _log_softmax_rows(x):
    m = x.max(axis=1, keepdims=True)
    z = x - m
    return z - np.log(np.exp(z).sum(axis=1, keepdims=True))


def tiou_many_np(a_start, a_end, b_start, b_end):
    inter = np.minimum(a_end, b_end) - np.maximum(a_start, b_start)
    inter = np.maximum(inter, 0.0)
    union = (a_end - a_start) + (b_end - b_start) - inter
    out = np.zeros(np.broadcast(a_start, b_start).shape, dtype=np.float64)
    np.divide(inter, union, out=out, where=union > 0)
    return out


def grpo_objective_grad_np(logits, ref_logits, ctx, actions, old_logp, adv, beta, clip_eps):
    """Returns (objective, grad, mean_kl, mean_surrogate) for a batch of groups."""
    n = ctx.shape[0]
    grad = np.zeros_like(logits)
    if n == 0:
        return 0.0, grad, 0.0, 0.0
    lp = _log_softmax_rows(logits)[ctx]
    ref_lp = _log_softmax_rows(ref_logits)[ctx]
    p = np.exp(lp)
    new_logp = np.take_along_axis(lp, actions, axis=1)
    ratio = np.exp(new_logp - old_logp)
    unclipped = ratio * adv
    if clip_eps > 0.0:
        clipped = np.clip(ratio, 1.0 - clip_eps, 1.0 + clip_eps) * adv
        terms = np.minimum(unclipped, clipped)
        coef = np.where(unclipped <= clipped, unclipped, 0.0)
    else:
        terms = unclipped
        coef = unclipped
    surr = terms.sum(axis=1)
    f = lp - ref_lp
    kl = (p * f).sum(axis=1)

    g = -p * coef.sum(axis=1)[:, None]
    rows = np.repeat(np.arange(n), actions.shape[1])
    np.add.at(g, (rows, actions.ravel()), coef.ravel())
    g -= beta * p * (f - kl[:, None])
    np.add.at(grad, ctx, g)
    grad /= n
    objective = float(np.mean(surr - beta * kl))
    return objective, grad, float(kl.mean()), float(surr.mean())


def sft_objective_grad_np(logits, ctx, targets):
    """Mean negative log-likelihood and the ascent direction of the log-likelihood."""
    n = ctx.shape[0]
    grad = np.zeros_like(logits)
    if n == 0:
        return 0.0, grad
    lp = _log_softmax_rows(logits)[ctx]
    nll = -lp[np.arange(n), targets]
    g = -np.exp(lp)
    g[np.arange(n), targets] += 1.0
    np.add.at(grad, ctx, g)
    grad /= n
    return float(nll.mean()), grad


# ---------------------------------------------------------------------------
# numba path
# ---------------------------------------------------------------------------

if HAS_NUMBA:

    @numba.njit(cache=True)
    def _log_softmax_row_nb(row, out):
        m = row[0]
        for k in range(1, row.shape[0]):
            if row[k] > m:
                m = row[k]
        s = 0.0
        for k in range(row.shape[0]):
            s += np.exp(row[k] - m)
        lse = m + np.log(s)
        for k in range(row.shape[0]):
            out[k] = row[k] - lse

    @numba.njit(cache=True)
    def _tiou_many_nb(a_start, a_end, b_start, b_end):
        n = a_start.shape[0]
        out = np.empty(n)
        for i in range(n):
            lo = max(a_start[i], b_start[i])
            hi = min(a_end[i], b_end[i])
            inter = hi - lo
            if inter < 0.0:
                inter = 0.0
            union = (a_end[i] - a_start[i]) + (b_end[i] - b_start[i]) - inter
            out[i] = inter / union if union > 0.0 else 0.0
        return out

    @numba.njit(cache=True)
    def _grpo_objective_grad_nb(logits, ref_logits, ctx, actions, old_logp, adv, beta, clip_eps):
        n = ctx.shape[0]
        n_act = logits.shape[1]
        n_cand = actions.shape[1]
        grad = np.zeros_like(logits)
        if n == 0:
            return 0.0, grad, 0.0, 0.0
        lp = np.empty(n_act)
        ref_lp = np.empty(n_act)
        p = np.empty(n_act)
        g = np.empty(n_act)
        obj = 0.0
        kl_total = 0.0
        surr_total = 0.0
        for gi in range(n):
            c = ctx[gi]
            _log_softmax_row_nb(logits[c], lp)
            _log_softmax_row_nb(ref_logits[c], ref_lp)
            kl = 0.0
            for k in range(n_act):
                p[k] = np.exp(lp[k])
                kl += p[k] * (lp[k] - ref_lp[k])
            surr = 0.0
            coef_sum = 0.0
            for k in range(n_act):
                g[k] = 0.0
            for i in range(n_cand):
                a = actions[gi, i]
                ratio = np.exp(lp[a] - old_logp[gi, i])
                unclipped = ratio * adv[gi, i]
                coef = unclipped
                term = unclipped
                if clip_eps > 0.0:
                    r = min(max(ratio, 1.0 - clip_eps), 1.0 + clip_eps)
                    clipped = r * adv[gi, i]
                    if unclipped <= clipped:
                        term = unclipped
                    else:
                        term = clipped
                        coef = 0.0
                surr += term
                g[a] += coef
                coef_sum += coef
            for k in range(n_act):
                g[k] -= p[k] * coef_sum
                g[k] -= beta * p[k] * ((lp[k] - ref_lp[k]) - kl)
                grad[c, k] += g[k]
            obj += surr - beta * kl
            kl_total += kl
            surr_total += surr
        for c in range(grad.shape[0]):
            for k in range(n_act):
                grad[c, k] /= n
        return obj / n, grad, kl_total / n, surr_total / n

    @numba.njit(cache=True)
    def _sft_objective_grad_nb(logits, ctx, targets):
        n = ctx.shape[0]
        n_act = logits.shape[1]
        grad = np.zeros_like(logits)
        if n == 0:
            return 0.0, grad
        lp = np.empty(n_act)
        nll = 0.0
        for i in range(n):
            c = ctx[i]
            _log_softmax_row_nb(logits[c], lp)
            nll -= lp[targets[i]]
            for k in range(n_act):
                grad[c, k] -= np.exp(lp[k])
            grad[c, targets[i]] += 1.0
        for c in range(grad.shape[0]):
            for k in range(n_act):
                grad[c, k] /= n
        return nll / n, grad

    def tiou_many_nb(a_start, a_end, b_start, b_end):
        a_start, a_end, b_start, b_end = np.broadcast_arrays(
            *(np.asarray(x, dtype=np.float64) for x in (a_start, a_end, b_start, b_end))
        )
        shape = a_start.shape
        out = _tiou_many_nb(
            np.ascontiguousarray(a_start).ravel(),
            np.ascontiguousarray(a_end).ravel(),
            np.ascontiguousarray(b_start).ravel(),
            np.ascontiguousarray(b_end).ravel(),
        )
        return out.reshape(shape)

    def grpo_objective_grad_nb(logits, ref_logits, ctx, actions, old_logp, adv, beta, clip_eps):
        obj, grad, kl, surr = _grpo_objective_grad_nb(
            logits, ref_logits, ctx, actions, old_logp, adv, float(beta), float(clip_eps)
        )
        return float(obj), grad, float(kl), float(surr)

    def sft_objective_grad_nb(logits, ctx, targets):
        nll, grad = _sft_objective_grad_nb(logits, ctx, targets)
        return float(nll), grad


def _prep_groups(logits, ref_logits, ctx, actions, old_logp, adv):
    return (
        np.ascontiguousarray(logits, dtype=np.float64),
        np.ascontiguousarray(ref_logits, dtype=np.float64),
        np.ascontiguousarray(ctx, dtype=np.int64),
        np.ascontiguousarray(actions, dtype=np.int64),
        np.ascontiguousarray(old_logp, dtype=np.float64),
        np.ascontiguousarray(adv, dtype=np.float64),
    )


def _tiou_np_entry(a_start, a_end, b_start, b_end):
    return tiou_many_np(
        *(np.asarray(x, dtype=np.float64) for x in (a_start, a_end, b_start, b_end))
    )


def _grpo_np_entry(logits, ref_logits, ctx, actions, old_logp, adv, beta, clip_eps=0.0):
    return grpo_objective_grad_np(
        *_prep_groups(logits, ref_logits, ctx, actions, old_logp, adv), float(beta), float(clip_eps)
    )


def _sft_np_entry(logits, ctx, targets):
    return sft_objective_grad_np(
        np.asarray(logits, dtype=np.float64),
        np.asarray(ctx, dtype=np.int64),
        np.asarray(targets, dtype=np.int64),
    )


if HAS_NUMBA:

    def _grpo_nb_entry(logits, ref_logits, ctx, actions, old_logp, adv, beta, clip_eps=0.0):
        return grpo_objective_grad_nb(
            *_prep_groups(logits, ref_logits, ctx, actions, old_logp, adv), beta, clip_eps
        )

    def _sft_nb_entry(logits, ctx, targets):
        return sft_objective_grad_nb(
            np.ascontiguousarray(logits, dtype=np.float64),
            np.ascontiguousarray(ctx, dtype=np.int64),
            np.ascontiguousarray(targets, dtype=np.int64),
        )


# name -> {backend -> callable}; used by tests and the benchmark to run both paths
IMPLEMENTATIONS = {
    "tiou_many": {"numpy": _tiou_np_entry},
    "grpo_objective_grad": {"numpy": _grpo_np_entry},
    "sft_objective_grad": {"numpy": _sft_np_entry},
}
if HAS_NUMBA:
    IMPLEMENTATIONS["tiou_many"]["numba"] = tiou_many_nb
    IMPLEMENTATIONS["grpo_objective_grad"]["numba"] = _grpo_nb_entry
    IMPLEMENTATIONS["sft_objective_grad"]["numba"] = _sft_nb_entry

tiou_many = IMPLEMENTATIONS["tiou_many"][BACKEND]
grpo_objective_grad = IMPLEMENTATIONS["grpo_objective_grad"][BACKEND]
sft_objective_grad = IMPLEMENTATIONS["sft_objective_grad"][BACKEND]
