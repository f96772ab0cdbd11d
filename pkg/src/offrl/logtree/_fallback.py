"""Pure-numpy kernels for the log-space sampling tree.

Same call surface as the compiled module. Node arithmetic goes through
np.logaddexp so node arrays stay bitwise identical to the compiled kernels;
sampling is vectorised across draws, and the scalar sample() delegates to
the batch path so both entry points walk identical descent arithmetic.
"""

import numpy as np


def update(nodes, leaf_base, index, value):
    """Write one leaf and recompute its ancestors; returns the node write count."""
    p = leaf_base + index
    nodes[p] = value
    writes = 1
    p >>= 1
    while p >= 1:
        nodes[p] = np.logaddexp(nodes[2 * p], nodes[2 * p + 1])
        writes += 1
        p >>= 1
    return writes


def update_many(nodes, leaf_base, indices, values):
    """Write several leaves, then repair affected ancestors level by level."""
    nodes[leaf_base + indices] = values
    level = np.unique((leaf_base + indices) >> 1)
    while level.size and level[0] >= 1:
        nodes[level] = np.logaddexp(nodes[2 * level], nodes[2 * level + 1])
        level = np.unique(level >> 1)


def build(nodes, leaf_base):
    """Recompute every interior node from the leaves, bottom-up per level."""
    m = leaf_base >> 1
    while m >= 1:
        nodes[m:2 * m] = np.logaddexp(nodes[2 * m:4 * m:2], nodes[2 * m + 1:4 * m:2])
        m >>= 1


def sample(nodes, leaf_base, u):
    out = np.empty(1, dtype=np.int64)
    sample_many(nodes, leaf_base, np.array([u], dtype=np.float64), out)
    return int(out[0])


def sample_many(nodes, leaf_base, us, out):
    n = us.shape[0]
    if n == 0:
        return
    r = np.full(n, -np.inf)
    pos = us > 0.0
    r[pos] = np.log(us[pos]) + nodes[1]
    p = np.ones(n, dtype=np.int64)
    # complete tree: every walker sits at the same depth, so p[0] suffices
    while p[0] < leaf_base:
        left = p << 1
        lv = nodes[left]
        # dead right subtree forces a left turn (clamps rounding overshoot);
        # a tie r == lv descends right
        go_right = (nodes[left + 1] != -np.inf) & ~(r < lv)
        sub = go_right & (lv != -np.inf)
        if sub.any():
            with np.errstate(divide="ignore"):  # exact tie: log1p(-1) -> -inf
                r[sub] += np.log1p(-np.exp(lv[sub] - r[sub]))
        p = np.where(go_right, left + 1, left)
    out[:] = p - leaf_base
