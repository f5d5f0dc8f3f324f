"""
Group-group affinity metrics built from the intersection matrix.

Correlation and Jaccard need only |A|, |B|, |A&B| and N. Cosine works on
row-standardised membership vectors: each user row is centred by c_j/M and
scaled by sqrt(c_j - c_j^2/M), and the result is divided by the product of
the standardised column norms so values stay in [-1, 1].
"""

import enum
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from itertools import chain

import numpy as np

from errors import DegenerateGroup, ParseError, SkippedDegenerateUser
from graph_core import PAIR_CHUNK, chunked, upper_triangle_pairs

logger = logging.getLogger(__name__)


class Metric(str, enum.Enum):
    CORRELATION = 'corr'
    COSINE = 'cos'
    JACCARD = 'jac'

    @classmethod
    def parse(cls, value):
        if isinstance(value, cls):
            return value
        aliases = {'correlation': 'corr', 'cosine': 'cos', 'jaccard': 'jac'}
        return cls(aliases.get(str(value).lower(), str(value).lower()))


@dataclass(frozen=True, eq=False)
class SimilarityMatrix:
    metric: Metric
    values: np.ndarray
    group_ids: tuple = ()

    @property
    def order(self):
        return int(self.values.shape[0])

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            f.write(f"{self.metric.value} {self.order}\n")
            for row in self.values:
                f.write(' '.join(format(float(v), '.17g') for v in row) + '\n')

    @classmethod
    def load(cls, path, group_ids=()):
        with open(path, encoding='utf-8') as f:
            header = f.readline().split()
            if len(header) != 2:
                raise ParseError(1, "expected header 'metric M'")
            try:
                metric = Metric.parse(header[0])
            except ValueError:
                raise ParseError(1, f"unknown metric {header[0]!r}")
            order = int(header[1])
            rows = []
            for lineno, line in enumerate(f, start=2):
                values = line.split()
                if len(values) != order:
                    raise ParseError(lineno, f"expected {order} values, got {len(values)}")
                rows.append([float(v) for v in values])
        if len(rows) != order:
            raise ParseError(order + 1, f"expected {order} rows, got {len(rows)}")
        return cls(metric=metric, values=np.array(rows, dtype=np.float64).reshape(order, order),
                   group_ids=tuple(group_ids))


def _group_id(inter, i):
    return inter.group_ids[i] if inter.group_ids else str(i)


def correlation(i, k, inter):
    n = inter.universe_size
    a, b = int(inter.group_sizes[i]), int(inter.group_sizes[k])
    for idx, size in ((i, a), (k, b)):
        if size <= 0 or size >= n:
            raise DegenerateGroup(_group_id(inter, idx), f"size {size} with N={n} has zero variance")
    both = int(inter.counts[i, k])
    return (both * n - a * b) / np.sqrt(float(a) * b * (n - a) * (n - b))


def jaccard(i, k, inter):
    a, b = int(inter.group_sizes[i]), int(inter.group_sizes[k])
    if a + b <= 0:
        raise DegenerateGroup(_group_id(inter, i), "Jaccard of two empty groups is undefined")
    both = int(inter.counts[i, k])
    return both / (a + b - both)


class CosineWeights:
    """Per-user contributions to the standardised scalar products.

    For a user with c subscriptions, v = c - c^2/M and:
      p = (1 - c/M)^2 / v   both groups contain the user
      q = (c/M)^2 / v       neither group contains the user
      r = (c/M - c^2/M^2) / v   exactly one group contains the user
    Users with c = M have v = 0 and contribute nothing.
    """

    def __init__(self, graph):
        m = graph.num_groups
        if m < 2:
            raise ValueError("cosine needs at least two groups")
        self.order = m
        users = graph.users()
        counts = np.array([graph.subscription_counts[int(u)] for u in users], dtype=np.float64)
        valid = counts < m
        skipped = int((~valid).sum())
        if skipped:
            message = f"{skipped} user(s) subscribed to all {m} groups excluded from cosine sums"
            logger.warning(message)
            warnings.warn(message, SkippedDegenerateUser, stacklevel=3)
        share = counts / m
        variance = np.where(valid, counts - counts ** 2 / m, 1.0)
        p = np.where(valid, (1.0 - share) ** 2 / variance, 0.0)
        q = np.where(valid, share ** 2 / variance, 0.0)
        r = np.where(valid, (share - share ** 2) / variance, 0.0)

        self.subscribers = []
        self.p, self.q, self.r = [], [], []
        for g in graph.groups:
            pos = np.searchsorted(users, g.subscribers)
            self.subscribers.append(g.subscribers)
            self.p.append(p[pos])
            self.q.append(q[pos])
            self.r.append(r[pos])
        self.q_total = float(q.sum())
        self.p_sum = np.array([x.sum() for x in self.p])
        self.q_sum = np.array([x.sum() for x in self.q])
        self.r_sum = np.array([x.sum() for x in self.r])
        self.norms = np.sqrt(self.p_sum + self.q_total - self.q_sum)
        self.group_ids = graph.group_ids

    def dot(self, i, k, literal_cross_term=False):
        _, ii, kk = np.intersect1d(self.subscribers[i], self.subscribers[k],
                                   assume_unique=True, return_indices=True)
        both_p = self.p[i][ii].sum()
        both_q = self.q[i][ii].sum()
        both_r = self.r[i][ii].sum()
        neither = self.q_total - self.q_sum[i] - self.q_sum[k] + both_q
        one = self.r_sum[i] + self.r_sum[k] - 2.0 * both_r
        # A member/non-member product is -(c/M)(1 - c/M)/v; the printed form drops the sign.
        return both_p + neither + (one if literal_cross_term else -one)

    def cosine(self, i, k, literal_cross_term=False):
        for idx in (i, k):
            if self.norms[idx] == 0.0:
                raise DegenerateGroup(self.group_ids[idx], "standardised vector has zero norm")
        return self.dot(i, k, literal_cross_term) / (self.norms[i] * self.norms[k])


def cosine(i, k, graph, inter=None, weights=None, literal_cross_term=False):
    weights = weights or CosineWeights(graph)
    return float(weights.cosine(i, k, literal_cross_term))


def _check_degenerate(graph, inter, metric):
    n = inter.universe_size
    for idx, size in enumerate(inter.group_sizes):
        if metric is Metric.CORRELATION and (size <= 0 or size >= n):
            raise DegenerateGroup(graph.group_ids[idx], f"size {int(size)} with N={n} has zero variance")
        if size <= 0:
            raise DegenerateGroup(graph.group_ids[idx], "group has no subscribers")


def build_similarity_matrix(graph, inter, metric, threads=None):
    """Full symmetric matrix: upper triangle computed, mirrored, diagonal set to 1."""
    metric = Metric.parse(metric)
    m = inter.order
    if m != graph.num_groups:
        raise ValueError(f"intersection matrix order {m} != {graph.num_groups} groups")
    _check_degenerate(graph, inter, metric)

    sizes = inter.group_sizes.astype(np.float64)
    counts = inter.counts.astype(np.float64)
    upper = np.triu_indices(m, k=1)
    values = np.eye(m, dtype=np.float64)

    if metric is Metric.CORRELATION:
        n = float(inter.universe_size)
        spread = sizes * (n - sizes)
        full = (counts * n - np.outer(sizes, sizes)) / np.sqrt(np.outer(spread, spread))
        values[upper] = np.clip(full[upper], -1.0, 1.0)
    elif metric is Metric.JACCARD:
        union = sizes[:, None] + sizes[None, :] - counts
        values[upper] = (counts / union)[upper]
    else:
        weights = CosineWeights(graph)
        pairs = upper_triangle_pairs(m)

        def work(chunk):
            return [weights.cosine(i, k) for i, k in chunk]

        with ThreadPoolExecutor(max_workers=threads or 1) as executor:
            found = list(chain.from_iterable(executor.map(work, chunked(pairs, PAIR_CHUNK))))
        if found:
            values[upper] = np.clip(found, -1.0, 1.0)

    values.T[upper] = values[upper]
    logger.info(f"Built {metric.value} similarity matrix of order {m}")
    return SimilarityMatrix(metric=metric, values=values, group_ids=graph.group_ids)
