"""
Synthetic membership graphs with planted topics, and matching corpora.

Groups are split evenly into T topics. Every user has a home topic and joins
same-topic groups with probability p_in and the rest with p_out. Each topic
owns a unigram distribution over a Zipf-weighted vocabulary: the
round(alpha * V) most frequent words are shared by all topics, the remaining
ranks are dealt out round-robin as topic-exclusive words.
"""

import logging
from dataclasses import asdict, dataclass

import numpy as np

from errors import SpecError
from graph_core import ingest_memberships
from train_eval import Corpus, Tokenizer

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class SynthSpec:
    num_groups: int = 20
    num_users: int = 2000
    num_topics: int = 2
    p_in: float = 0.3
    p_out: float = 0.02
    vocab_size: int = 2000
    topic_vocab_overlap: float = 0.5
    docs_per_group: int = 200
    doc_length: int = 24
    zipf_exponent: float = 1.0
    seed: int = 0

    def __post_init__(self):
        if self.num_groups < 1 or self.num_users < 1 or self.num_topics < 1:
            raise SpecError("num_groups, num_users and num_topics must be positive")
        if self.num_topics > self.num_groups:
            raise SpecError(f"num_topics {self.num_topics} exceeds num_groups {self.num_groups}")
        if not 0.0 <= self.p_out < self.p_in <= 1.0:
            raise SpecError(f"need 0 <= p_out < p_in <= 1, got p_in={self.p_in} p_out={self.p_out}")
        if not 0.0 <= self.topic_vocab_overlap <= 1.0:
            raise SpecError("topic_vocab_overlap must be in [0, 1]")
        if self.vocab_size < 1 or self.docs_per_group < 1 or self.doc_length < 1:
            raise SpecError("vocab_size, docs_per_group and doc_length must be positive")
        if self.vocab_size - self.shared_vocab_size < self.num_topics and self.topic_vocab_overlap < 1.0:
            raise SpecError("not enough vocabulary for one exclusive word per topic")
        if self.zipf_exponent < 0:
            raise SpecError("zipf_exponent must be non-negative")
        smallest = min(self.expected_group_size(t) for t in range(self.num_topics))
        if smallest < 1.0:
            raise SpecError(f"expected group size {smallest:.3f} < 1; groups would be empty")
        if self.topic_vocab_overlap == 1.0:
            logger.warning("topic_vocab_overlap=1: topics share one distribution and are indistinguishable")

    @property
    def shared_vocab_size(self):
        return int(round(self.topic_vocab_overlap * self.vocab_size))

    def users_in_topic(self, topic):
        return len(range(topic, self.num_users, self.num_topics))

    def expected_group_size(self, topic):
        home = self.users_in_topic(topic)
        return home * self.p_in + (self.num_users - home) * self.p_out

    def to_dict(self):
        return asdict(self)


def group_ids(spec):
    width = max(4, len(str(spec.num_groups - 1)))
    return [f"g{i:0{width}d}" for i in range(spec.num_groups)]


def group_topics(spec):
    """group_id -> topic; group i belongs to topic i * T // G."""
    return {gid: i * spec.num_topics // spec.num_groups for i, gid in enumerate(group_ids(spec))}


def vocabulary(spec):
    """Words in global frequency-rank order; zero padding keeps sorted order equal to rank order."""
    width = max(4, len(str(spec.vocab_size - 1)))
    return tuple(f"w{r:0{width}d}" for r in range(spec.vocab_size))


def topic_distributions(spec):
    """T x V matrix of per-topic word probabilities over the full vocabulary."""
    ranks = np.arange(spec.vocab_size, dtype=np.float64)
    zipf = 1.0 / (ranks + 1.0) ** spec.zipf_exponent
    shared = spec.shared_vocab_size
    dist = np.zeros((spec.num_topics, spec.vocab_size))
    for t in range(spec.num_topics):
        support = np.zeros(spec.vocab_size, dtype=bool)
        support[:shared] = True
        if shared < spec.vocab_size:
            support[shared + t::spec.num_topics] = True
        if spec.topic_vocab_overlap == 1.0:
            support[:] = True
        weights = np.where(support, zipf, 0.0)
        dist[t] = weights / weights.sum()
    return dist


def entropy_floor(spec):
    """Expected per-token entropy in bits given each document's topic, weighted by group count."""
    dist = topic_distributions(spec)
    with np.errstate(divide='ignore'):
        logs = np.where(dist > 0, np.log2(np.where(dist > 0, dist, 1.0)), 0.0)
    per_topic = -(dist * logs).sum(axis=1)
    counts = np.bincount(list(group_topics(spec).values()), minlength=spec.num_topics)
    return float((per_topic * counts).sum() / counts.sum())


def generate_edges(spec):
    """Yield (group_id, raw_user_id) subscription edges, users in order."""
    gids = group_ids(spec)
    topics = np.array(list(group_topics(spec).values()))
    width = max(5, len(str(spec.num_users - 1)))
    for user in range(spec.num_users):
        home = user % spec.num_topics
        probs = np.where(topics == home, spec.p_in, spec.p_out)
        joined = np.random.default_rng([spec.seed, 0, user]).random(spec.num_groups) < probs
        raw = f"u{user:0{width}d}"
        for gi in np.flatnonzero(joined):
            yield gids[gi], raw


def generate_network(spec):
    graph = ingest_memberships(generate_edges(spec))
    if graph.num_groups < spec.num_groups:
        logger.warning(f"{spec.num_groups - graph.num_groups} sampled group(s) came out empty")
    return graph


def generate_corpus(graph, spec):
    """docs_per_group documents of doc_length tokens for every group in `graph`."""
    words = vocabulary(spec)
    dist = topic_distributions(spec)
    topics = group_topics(spec)
    index = {gid: i for i, gid in enumerate(group_ids(spec))}
    rows = []
    for gid in graph.group_ids:
        if gid not in topics:
            raise SpecError(f"group {gid!r} is not part of this synthetic spec")
        rng = np.random.default_rng([spec.seed, 1, index[gid]])
        draws = rng.choice(spec.vocab_size, size=(spec.docs_per_group, spec.doc_length), p=dist[topics[gid]])
        rows.extend((gid, [words[w] for w in doc]) for doc in draws)
    corpus = Corpus.from_texts(rows, tokenizer=Tokenizer(words=words))
    logger.info(f"Generated {len(rows)} documents over {graph.num_groups} groups; "
                f"entropy floor {entropy_floor(spec):.4f} bits")
    return corpus