"""Adaptive Simpson quadrature with interval bisection."""

import warnings


def adaptive_simpson(f, a, b, rel_tol=1e-8, max_subdivisions=2**20, abs_floor=1e-300):
    """Integrate ``f`` over ``[a, b]`` to relative tolerance ``rel_tol``.

    Each interval is accepted when the two-panel and one-panel Simpson
    estimates agree to ``15 * rel_tol`` relative to the local estimate; for a
    positive integrand this bounds the global relative error by ``rel_tol``.
    Accepted panels receive the Richardson correction.  At most
    ``max_subdivisions`` bisections are performed; past the cap the current
    estimate is returned with a ``RuntimeWarning``.
    """
    if a == b:
        return 0.0
    if b < a:
        return -adaptive_simpson(f, b, a, rel_tol, max_subdivisions, abs_floor)

    fa, fb = f(a), f(b)
    m = 0.5 * (a + b)
    fm = f(m)
    whole = (b - a) * (fa + 4.0 * fm + fb) / 6.0

    total = 0.0
    splits = 0
    capped = False
    # (a, m, b, fa, fm, fb, whole, depth); a few forced levels avoid
    # accepting a lucky coarse agreement on peaked integrands.
    stack = [(a, m, b, fa, fm, fb, whole, 0)]
    min_depth = 4
    while stack:
        a, m, b, fa, fm, fb, whole, depth = stack.pop()
        lm = 0.5 * (a + m)
        rm = 0.5 * (m + b)
        flm, frm = f(lm), f(rm)
        left = (m - a) * (fa + 4.0 * flm + fm) / 6.0
        right = (b - m) * (fm + 4.0 * frm + fb) / 6.0
        both = left + right
        err = both - whole
        accept = depth >= min_depth and abs(err) <= 15.0 * rel_tol * abs(both) + abs_floor
        if accept or splits >= max_subdivisions or m <= a or b <= m:
            if not accept and not capped:
                capped = True
                warnings.warn("adaptive_simpson hit max_subdivisions", RuntimeWarning, stacklevel=2)
            total += both + err / 15.0
            continue
        splits += 1
        stack.append((m, rm, b, fm, frm, fb, right, depth + 1))
        stack.append((a, lm, m, fa, flm, fm, left, depth + 1))
    return total
