"""
Social embeddings for groups.

Two parts are computed independently and concatenated per group:
  - a spectral part: rows of U * sqrt(|Sigma|) from the symmetric
    eigendecomposition of a similarity matrix (the k eigenpairs of largest
    magnitude; eigenvalue signs are kept in SVDFactors.signs);
  - a DeepWalk part: skip-gram with negative sampling over random walks whose
    transition probabilities are the row-normalised off-diagonal Jaccard values.
"""

import enum
import logging
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
import torch
import torch.nn.functional as F
from scipy import linalg

from errors import ConfigError, KeyMismatch, MissingEmbedding, ParseError, RankTooLarge, ZeroVectorAssigned
from similarity import Metric, build_similarity_matrix

logger = logging.getLogger(__name__)

DEFAULT_SVD_DIM = 16
DEFAULT_DW_DIM = 16
NEGATIVES = 5
NOISE_EXPONENT = 0.75


# Spectral part

@dataclass(frozen=True, eq=False)
class SVDFactors:
    singular_values: np.ndarray
    left_vectors: np.ndarray
    signs: np.ndarray
    group_ids: tuple = ()

    @property
    def rank(self):
        return int(self.singular_values.size)

    @property
    def embedding(self):
        return self.left_vectors * np.sqrt(self.singular_values)[None, :]

    def reconstruct(self):
        e = self.embedding
        return (e * self.signs[None, :]) @ e.T


def _fix_column_signs(vectors):
    # Largest-magnitude entry of each column made positive.
    pivots = np.argmax(np.abs(vectors), axis=0)
    flip = np.sign(vectors[pivots, np.arange(vectors.shape[1])])
    flip[flip == 0] = 1.0
    return vectors * flip[None, :]


def truncated_svd(matrix, k, method='eigh', n_iter=300, seed=0):
    """Rank-k symmetric factorisation of a similarity matrix.

    `method="eigh"` is exact (dense eigendecomposition). `method="randomized"`
    uses randomized SVD with `n_iter` power iterations for larger matrices.
    """
    values = np.asarray(getattr(matrix, 'values', matrix), dtype=np.float64)
    group_ids = tuple(getattr(matrix, 'group_ids', ()))
    order = values.shape[0]
    if k < 1:
        raise ValueError("rank must be >= 1")
    if k > order:
        raise RankTooLarge(k, order)

    if method == 'eigh':
        eigenvalues, eigenvectors = linalg.eigh(values)
        top = np.argsort(-np.abs(eigenvalues), kind='stable')[:k]
        magnitudes = np.abs(eigenvalues[top])
        signs = np.where(eigenvalues[top] < 0, -1.0, 1.0)
        vectors = eigenvectors[:, top]
    elif method == 'randomized':
        from sklearn.utils.extmath import randomized_svd
        vectors, magnitudes, vt = randomized_svd(values, n_components=k, n_iter=n_iter,
                                                 random_state=seed)
        # For symmetric input the right vectors equal the left ones up to the eigenvalue sign.
        signs = np.sign(np.sum(vectors * vt.T, axis=0))
        signs[signs == 0] = 1.0
    else:
        raise ConfigError(f"unknown factorisation method {method!r}")

    logger.debug(f"Top singular values: {magnitudes[:5]}")
    return SVDFactors(singular_values=magnitudes, left_vectors=_fix_column_signs(vectors),
                      signs=signs, group_ids=group_ids)


# Random walks

@dataclass(frozen=True)
class WalkConfig:
    walks_per_node: int = 80
    walk_length: int = 80
    window: int = 10
    seed: int = 0

    def __post_init__(self):
        for name in ('walks_per_node', 'walk_length', 'window'):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")


@dataclass(frozen=True, eq=False)
class WalkCorpus:
    walks: list
    num_nodes: int

    def __len__(self):
        return len(self.walks)

    def steps(self):
        return sum(max(len(w) - 1, 0) for w in self.walks)


def jaccard_transition_matrix(sim):
    """Row-stochastic matrix from off-diagonal Jaccard values; isolated groups self-loop."""
    if Metric.parse(sim.metric) is not Metric.JACCARD:
        raise ConfigError(f"transitions need a Jaccard matrix, got {sim.metric}")
    weights = np.array(sim.values, dtype=np.float64)
    np.fill_diagonal(weights, 0.0)
    totals = weights.sum(axis=1)
    isolated = np.flatnonzero(totals == 0)
    weights[isolated, isolated] = 1.0
    totals[isolated] = 1.0
    if isolated.size:
        logger.info(f"{isolated.size} isolated group(s) given self-loops")
    return weights / totals[:, None]


def generate_walks(trans, cfg, threads=None):
    """`cfg.walks_per_node` walks from every node, ordered by start node then walk index.

    Each walk draws from its own generator seeded by (seed, node, walk index), so
    the corpus is identical for any thread count. A walk stops early at a node
    whose only transition is a self-loop.
    """
    trans = np.asarray(trans, dtype=np.float64)
    order = trans.shape[0]
    cumulative = np.cumsum(trans, axis=1)
    last_positive = np.array([np.flatnonzero(row > 0)[-1] for row in trans])
    absorbing = np.isclose(np.diag(trans), 1.0)

    def walks_from(node):
        result = []
        for index in range(cfg.walks_per_node):
            rng = np.random.default_rng([cfg.seed, node, index])
            draws = rng.random(cfg.walk_length - 1)
            walk = [node]
            current = node
            for u in draws:
                if absorbing[current]:
                    break
                nxt = int(np.searchsorted(cumulative[current], u, side='right'))
                current = min(nxt, int(last_positive[current]))
                walk.append(current)
            result.append(walk)
        return result

    with ThreadPoolExecutor(max_workers=threads or 1) as executor:
        per_node = list(executor.map(walks_from, range(order)))
    walks = [w for node_walks in per_node for w in node_walks]
    logger.info(f"Generated {len(walks)} walks over {order} groups")
    return WalkCorpus(walks=walks, num_nodes=order)


# Skip-gram with negative sampling

@dataclass(eq=False)
class SkipGramResult:
    vectors: dict
    epoch_losses: list = field(default_factory=list)


def skipgram_loss(center, context, negatives):
    """Mean negative-sampling loss.

    center, context: (B, d); negatives: (B, K, d).
    """
    positive = F.logsigmoid((center * context).sum(-1))
    negative = F.logsigmoid(-torch.einsum('bd,bkd->bk', center, negatives)).sum(-1)
    return -(positive + negative).mean()


def context_pairs(walks, window):
    centers, contexts = [], []
    for walk in walks:
        walk = np.asarray(walk, dtype=np.int64)
        for offset in range(1, min(window, len(walk) - 1) + 1):
            centers.extend((walk[:-offset], walk[offset:]))
            contexts.extend((walk[offset:], walk[:-offset]))
    if not centers:
        return np.empty(0, dtype=np.int64), np.empty(0, dtype=np.int64)
    return np.concatenate(centers), np.concatenate(contexts)


def _train_gensim(corpus, window, dim, epochs, seed, negatives, threads):
    from gensim.models import Word2Vec
    sentences = [[str(n) for n in walk] for walk in corpus.walks]
    model = Word2Vec(sentences=sentences, vector_size=dim, window=window, min_count=0, sg=1,
                     hs=0, negative=negatives, ns_exponent=NOISE_EXPONENT,
                     workers=threads or 1, epochs=epochs, seed=seed)
    return {int(key): np.asarray(model.wv[key], dtype=np.float64) for key in model.wv.index_to_key}, []


def train_skipgram(corpus, window, dim, epochs=5, seed=0, negatives=NEGATIVES, learning_rate=0.01,
                   batch_size=4096, fast=False, threads=None):
    """Learn one `dim`-vector per node seen in the walks.

    The default path is single-threaded and reproducible for a fixed seed.
    `fast=True` trains with gensim worker threads, which is not reproducible.
    """
    if not corpus.walks:
        raise ValueError("skip-gram needs a non-empty walk corpus")
    num_nodes = corpus.num_nodes
    seen = sorted({n for walk in corpus.walks for n in walk})

    if fast:
        vectors, losses = _train_gensim(corpus, window, dim, epochs, seed, negatives, threads)
    else:
        generator = torch.Generator().manual_seed(seed)
        centers, contexts = context_pairs(corpus.walks, window)
        frequency = np.bincount(np.concatenate([np.asarray(w) for w in corpus.walks]),
                                minlength=num_nodes).astype(np.float64)
        noise = torch.as_tensor(frequency ** NOISE_EXPONENT / (frequency ** NOISE_EXPONENT).sum())

        bound = 0.5 / dim
        inputs = torch.nn.Parameter((torch.rand(num_nodes, dim, generator=generator,
                                                dtype=torch.float64) * 2 - 1) * bound)
        outputs = torch.nn.Parameter(torch.zeros(num_nodes, dim, dtype=torch.float64))
        optimizer = torch.optim.Adam([inputs, outputs], lr=learning_rate)

        centers = torch.as_tensor(centers)
        contexts = torch.as_tensor(contexts)
        losses = []
        for epoch in range(epochs if centers.numel() else 0):
            order = torch.randperm(centers.numel(), generator=generator)
            total, batches = 0.0, 0
            for start in range(0, order.numel(), batch_size):
                idx = order[start:start + batch_size]
                sampled = torch.multinomial(noise, idx.numel() * negatives, replacement=True,
                                            generator=generator).view(idx.numel(), negatives)
                loss = skipgram_loss(inputs[centers[idx]], outputs[contexts[idx]], outputs[sampled])
                optimizer.zero_grad()
                loss.backward()
                optimizer.step()
                total += loss.item()
                batches += 1
            losses.append(total / batches)
            logger.info(f"Skip-gram epoch {epoch + 1}/{epochs}: loss {losses[-1]:.4f}")
        learned = inputs.detach().numpy()
        vectors = {n: learned[n].copy() for n in seen}

    for node in range(num_nodes):
        if node not in vectors:
            message = f"node {node} absent from every walk; assigned a zero vector"
            logger.warning(message)
            warnings.warn(message, ZeroVectorAssigned, stacklevel=2)
            vectors[node] = np.zeros(dim, dtype=np.float64)
    return SkipGramResult(vectors=vectors, epoch_losses=losses)


# Concatenation

@dataclass(eq=False)
class SocialEmbedding:
    d_svd: int
    d_dw: int
    vectors: dict

    @property
    def dim(self):
        return self.d_svd + self.d_dw

    @property
    def group_ids(self):
        return tuple(sorted(self.vectors))

    def get(self, group_id):
        try:
            return self.vectors[group_id]
        except KeyError:
            raise MissingEmbedding(group_id) from None

    def matrix(self, group_ids):
        return np.stack([self.get(g) for g in group_ids]) if group_ids else np.zeros((0, self.dim))

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            f.write(f"{self.d_svd} {self.d_dw} {len(self.vectors)}\n")
            for group_id in self.group_ids:
                values = ' '.join(format(float(v), '.17g') for v in self.vectors[group_id])
                f.write(f"{group_id} {values}\n")

    @classmethod
    def load(cls, path):
        with open(path, encoding='utf-8') as f:
            header = f.readline().split()
            if len(header) != 3:
                raise ParseError(1, "expected header 'd_svd d_dw M'")
            d_svd, d_dw, count = (int(v) for v in header)
            vectors = {}
            for lineno, line in enumerate(f, start=2):
                parts = line.split()
                if not parts:
                    continue
                if len(parts) != d_svd + d_dw + 1:
                    raise ParseError(lineno, f"expected {d_svd + d_dw} values after the group id")
                vectors[parts[0]] = np.array([float(v) for v in parts[1:]], dtype=np.float64)
        if len(vectors) != count:
            raise ParseError(count + 1, f"expected {count} groups, got {len(vectors)}")
        return cls(d_svd=d_svd, d_dw=d_dw, vectors=vectors)


def concat_embeddings(svd_part, dw_part):
    """[spectral row || DeepWalk vector] per group; `svd_part=None` gives DeepWalk only."""
    dw_part = {str(k): np.asarray(v, dtype=np.float64) for k, v in dw_part.items()}
    d_dw = len(next(iter(dw_part.values()))) if dw_part else 0
    if svd_part is None:
        return SocialEmbedding(d_svd=0, d_dw=d_dw, vectors=dw_part)

    offenders = set(svd_part.group_ids) ^ set(dw_part)
    if offenders:
        raise KeyMismatch(offenders)
    rows = svd_part.embedding
    vectors = {gid: np.concatenate([rows[i], dw_part[gid]]) for i, gid in enumerate(svd_part.group_ids)}
    return SocialEmbedding(d_svd=svd_part.rank, d_dw=d_dw, vectors=vectors)


# Recipes

class Recipe(str, enum.Enum):
    CORR_DW = 'corr+dw'
    COS_DW = 'cos+dw'
    JAC_DW = 'jac+dw'
    DW_ONLY = 'dw-only'

    @property
    def metric(self):
        return {'corr+dw': Metric.CORRELATION, 'cos+dw': Metric.COSINE,
                'jac+dw': Metric.JACCARD}.get(self.value)


def embed_graph(graph, inter, recipe, d_svd=DEFAULT_SVD_DIM, d_dw=DEFAULT_DW_DIM, walk_cfg=None,
                epochs=5, method='eigh', fast=False, threads=None):
    """Run one embedding recipe end to end on an ingested graph."""
    recipe = Recipe(recipe)
    walk_cfg = walk_cfg or WalkConfig()
    jaccard_sim = build_similarity_matrix(graph, inter, Metric.JACCARD, threads=threads)
    corpus = generate_walks(jaccard_transition_matrix(jaccard_sim), walk_cfg, threads=threads)
    dw = train_skipgram(corpus, walk_cfg.window, d_dw, epochs=epochs, seed=walk_cfg.seed,
                        fast=fast, threads=threads)
    dw_part = {graph.group_ids[n]: v for n, v in dw.vectors.items()}

    svd_part = None
    if recipe.metric is not None:
        sim = (jaccard_sim if recipe.metric is Metric.JACCARD
               else build_similarity_matrix(graph, inter, recipe.metric, threads=threads))
        svd_part = truncated_svd(sim, d_svd, method=method, seed=walk_cfg.seed)
    embedding = concat_embeddings(svd_part, dw_part)
    logger.info(f"Built {recipe.value} embedding: d={embedding.dim} for {len(embedding.vectors)} groups")
    return embedding
