"""Naive reference implementations used as independent test oracles.

Everything here is written with plain Python loops straight from the
defining formulas, deliberately sharing no code with the package's
vectorized implementations.
"""

import itertools
import math


def enumerate_domain(alphabet_sizes):
    """All points, coordinate 0 fastest, as tuples of ints."""
    ranges = [range(s) for s in alphabet_sizes]
    pts = []
    for combo in itertools.product(*reversed(ranges)):
        pts.append(tuple(reversed(combo)))
    return pts


def active_set_oracle(points, f_values, x):
    """Minimal agreement set via full enumeration with lexicographic ties."""
    fx = f_values[points.index(tuple(x))]
    best = None
    for z, fz in zip(points, f_values):
        if fz != fx:
            continue
        agree = tuple(i for i in range(len(x)) if z[i] == x[i])
        key = (len(agree), z)
        if best is None or key < best[0]:
            best = (key, agree, z)
    return best[1], best[2]


def fn_difference_oracle(points, theta_values, f_values, x):
    indices, _ = active_set_oracle(points, f_values, x)
    worst = 0
    for z, tz, fz in zip(points, theta_values, f_values):
        if all(z[i] == x[i] for i in indices):
            worst = max(worst, abs(tz - fz))
    return worst


def dependence_r_oracle(points, theta_values, indices, x, y, alphabet_sizes):
    lookup = {z: tz for z, tz in zip(points, theta_values)}
    worst = 0
    for combo in itertools.product(*(range(alphabet_sizes[i]) for i in indices)):
        z = list(x)
        for i, v in zip(indices, combo):
            z[i] = v
        worst = max(worst, abs(lookup[tuple(z)] - y))
    return worst


def discrepancy_oracle(points, theta_values, f_m_values, samples, alphabet_sizes):
    """c(theta): mean over (x, y) of [theta(x) == y] * r over the f_m active set."""
    lookup = {z: tz for z, tz in zip(points, theta_values)}
    total = 0
    for x, y in samples:
        if lookup[tuple(x)] != y:
            continue
        indices, _ = active_set_oracle(points, f_m_values, x)
        total += dependence_r_oracle(points, theta_values, indices, x, y, alphabet_sizes)
    return total / len(samples)


def h_divergence_oracle(member_values, src_points, tgt_points):
    """1 - min over pairwise-XOR functions of the two-sided indicator sum."""
    n = len(src_points)
    assert len(tgt_points) == n
    best = None
    for va in member_values:
        for vb in member_values:
            g = {z: a ^ b for (z, a), b in zip(va.items(), vb.values())}
            bracket = (
                sum(1 for z in src_points if g[z] == 0)
                + sum(1 for z in tgt_points if g[z] == 1)
            ) / n
            best = bracket if best is None else min(best, bracket)
    return 1.0 - best


def phi_oracle(class_size, n, delta):
    return math.sqrt((math.log(class_size) + math.log(1.0 / delta)) / (2.0 * n))
