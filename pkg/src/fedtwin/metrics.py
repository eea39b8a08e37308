"""Discrimination and uncertainty statistics for survival predictions."""

from __future__ import annotations

import math
from typing import Sequence, Tuple

import numpy as np


class MetricError(Exception):
    """Statistic undefined on the given data (e.g. no comparable pairs)."""


def c_statistic(predictions, time, event) -> float:
    """Concordance over comparable subject pairs; higher prediction = higher risk.

    A pair is comparable when the earlier subject had the event, or when times
    tie and exactly one subject had the event. Concordant pairs count 1, tied
    predictions 0.5. Exact: counts are sums of halves, so the result is
    independent of iteration order.
    """
    pred = np.asarray(predictions, dtype=float)
    t = np.asarray(time, dtype=float)
    e = np.asarray(event, dtype=bool)
    n = len(pred)
    if not (len(t) == len(e) == n):
        raise ValueError("predictions, time, and event must have equal length")

    concordant = 0.0
    comparable = 0
    # chunked pairwise comparison keeps memory at chunk*n
    chunk = max(1, min(n, 2_000_000 // max(n, 1)))
    for start in range(0, n, chunk):
        sl = slice(start, min(start + chunk, n))
        ti = t[sl, None]
        tj = t[None, :]
        ei = e[sl, None]
        ej = e[None, :]
        pi = pred[sl, None]
        pj = pred[None, :]
        # i strictly earlier with event: i should be predicted riskier
        earlier = (ti < tj) & ei
        # tied times, exactly one event: the event subject should rank higher
        tied = (ti == tj) & ei & ~ej
        mask = earlier | tied
        comparable += int(mask.sum())
        concordant += float(np.where(pi > pj, 1.0, 0.0)[mask].sum())
        concordant += 0.5 * float((pi == pj)[mask].sum())
    if comparable == 0:
        raise MetricError("no comparable pairs: C-statistic undefined")
    return concordant / comparable


# 0.975 Student-t quantiles for df 1..100; above 100 the normal quantile is used.
_T_975 = [
    12.706204736432095, 4.302652729696142, 3.182446305284263, 2.7764451051977987,
    2.570581835636314, 2.4469118511449692, 2.3646242515927844, 2.306004135204166,
    2.2621571628540993, 2.2281388519649385, 2.200985160082949, 2.1788128296634177,
    2.1603686564610127, 2.1447866879169273, 2.131449545559323, 2.1199052992210112,
    2.1098155778331806, 2.10092204024096, 2.093024054408263, 2.0859634472658364,
    2.079613844727662, 2.0738730679040147, 2.0686576104190406, 2.0638985616280205,
    2.059538552753294, 2.055529438642871, 2.0518305164802833, 2.048407141795244,
    2.045229642132703, 2.0422724563012373, 2.0395134463964077, 2.036933343460101,
    2.0345152974493383, 2.032244509317718, 2.0301079282503425, 2.0280940009804502,
    2.0261924630291093, 2.024394163911969, 2.0226909200367604, 2.0210753903062733,
    2.019540970441376, 2.018081702818444, 2.016692199227824, 2.0153675744437636,
    2.014103388880846, 2.0128955989194286, 2.0117405137297655, 2.010634757624232,
    2.0095752371292397, 2.008559112100761, 2.007583770315836, 2.006646805061688,
    2.0057459953178687, 2.004879288188057, 2.004044783289146, 2.003240718847872,
    2.002465459291007, 2.0017174841452356, 2.0009953780882674, 2.00029782201426,
    1.9996235849949393, 1.9989715170333786, 1.998340542520741, 1.9977296543176926,
    1.9971379083920033, 1.9965644189523113, 1.9960083540252962, 1.9954689314298435,
    1.9949454151072374, 1.994437111771186, 1.993943367845625, 1.9934635666618716,
    1.992997125889855, 1.9925434951809322, 1.9921021540022417, 1.9916726096446642,
    1.9912543953883843, 1.9908470688116904, 1.9904502102301282, 1.9900634212544457,
    1.9896863234569024, 1.9893185571365721, 1.9889597801751624, 1.9886096669757087,
    1.9882679074772216, 1.9879342062390202, 1.9876082815890703, 1.987289864831169,
    1.986978699506281, 1.9866745407037676, 1.9863771544186173, 1.98608631695113,
    1.9858018143458234, 1.985523441866604, 1.9852510035091888, 1.9849843115310182,
    1.9847231860271193, 1.984467454426692, 1.9842169515086827, 1.9839715184496334,
]
_NORM_975 = 1.959963984540054


def t_quantile_975(df: int) -> float:
    if df < 1:
        raise ValueError(f"degrees of freedom must be >= 1, got {df}")
    if df <= 100:
        return _T_975[df - 1]
    return _NORM_975


def corrected_resampled_ttest(
    samples: Sequence[float], n_train: int, n_test: int, confidence: float = 0.95
) -> Tuple[float, float, float]:
    """Mean and CI for repeated random-split results, variance-corrected for
    the overlap between resampled training sets.

    Half-width: t_{k-1, 0.975} * sqrt((1/k + n_test/n_train) * s^2) with k the
    number of runs and s^2 the sample variance. Only 95% intervals are
    supported (the quantile table carries the 0.975 point).
    """
    if len(samples) < 2:
        raise ValueError("need at least 2 samples")
    if n_train <= 0 or n_test <= 0:
        raise ValueError("n_train and n_test must be positive")
    if confidence != 0.95:
        raise ValueError("only confidence=0.95 is supported")
    k = len(samples)
    # shifted computation: identical samples yield exactly zero variance
    x0 = samples[0]
    deviations = [x - x0 for x in samples]
    mean_dev = math.fsum(deviations) / k
    mean = x0 + mean_dev
    s2 = math.fsum((d - mean_dev) ** 2 for d in deviations) / (k - 1)
    half_width = t_quantile_975(k - 1) * math.sqrt((1.0 / k + n_test / n_train) * s2)
    return (mean, mean - half_width, mean + half_width)
