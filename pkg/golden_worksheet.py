"""
Scalar reference values for the hand-checkable formula examples.

Plain Python floats and lists only, so the numbers here do not share any
code path with the numpy kernels in fssam/.
"""

import math

EPS = 1e-8


def dot(a, b):
    return sum(x * y for x, y in zip(a, b))


def norm(a):
    return math.sqrt(sum(x * x for x in a))


def cosine(a, b, eps=EPS):
    return dot(a, b) / (norm(a) * norm(b) + eps)


def minmax(values):
    lo, hi = min(values), max(values)
    if hi == lo:
        return [0.0 for _ in values]
    return [(v - lo) / (hi - lo) for v in values]


def weighted_pool():
    """Pixels [2], [4] with weights 0.5, 1.0"""
    pixels, weights = [2.0, 4.0], [0.5, 1.0]
    return sum(w * p for w, p in zip(weights, pixels)) / sum(weights)


def unit_cosine():
    return cosine([0.6, 0.8], [1.0, 0.0])


def minmax_example():
    return minmax([-1.0, 0.0, 1.0])


def softmax_example():
    row = [math.log(3.0), 0.0]
    top = max(row)
    exps = [math.exp(v - top) for v in row]
    return [e / sum(exps) for e in exps]


def three_pixel_priors():
    """Query [1,0], [0.6,0.8], [0,1] against support [1,0] (FG), [0,1] (BG)"""
    query = [[1.0, 0.0], [0.6, 0.8], [0.0, 1.0]]
    fg_proto, bg_proto = [1.0, 0.0], [0.0, 1.0]
    fg_raw = [cosine(p, fg_proto) for p in query]
    bg_raw = [cosine(p, bg_proto) for p in query]
    fg = minmax(fg_raw)
    bg = minmax(bg_raw)
    disc_pre = [max(f - b, 0.0) for f, b in zip(fg, bg)]
    return {
        'fg_raw': fg_raw,
        'bg_raw': bg_raw,
        'fg': fg,
        'bg': bg,
        'disc_pre': disc_pre,
        'disc': minmax(disc_pre),
    }


def averaged_fg():
    a, b = [1.0, 0.0], [0.0, 1.0]
    return [(x + y) / 2 for x, y in zip(a, b)]


def gained_memory():
    gain, mask, pixels = 0.5, [1.0, 0.0], [2.0, 2.0]
    return [p * (1 + gain * m) for p, m in zip(pixels, mask)]


def suppressed_weights():
    a_qq, a_qs = [0.9, 0.4], [0.8, 0.3]
    return [max(q + (s - 1.0), 0.0) for q, s in zip(a_qq, a_qs)]


def blended_prior():
    disc, fg = [0.0, 0.0], [1.0, 1.0]
    return [w * f + (1 - w) * d for w, f, d in zip(suppressed_weights(), fg, disc)]


def pass_count(n, k):
    return n * (k + 1)


def calibration_row():
    """
    Raw scores [1.0, 0.2, 0.0] normalize to [1.0, 0.2, 0.0]; with normalized
    support similarity [1.0, 0.1, 1.0] the bias at alpha = 10 is [0, -7, 0].
    """
    alpha = 10.0
    scores = [1.0, 0.2, 0.0]
    a_sq = [1.0, 0.1, 1.0]
    offset = [a + (s - 1.0) for a, s in zip(minmax(scores), a_sq)]
    return [alpha * min(o, 0.0) for o in offset]


def extra_passes(k, layers):
    return k * layers


def class_iou(intersection, union):
    return intersection / union
