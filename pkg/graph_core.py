"""
Bipartite user-group membership graph and the pairwise intersection engine.

Users are identified by a pinned 64-bit hash: the first 8 bytes (big-endian)
of SHA3-256 over the UTF-8 raw id. The user universe N is the set of users
observed in the ingested data.

The intersection matrix is held dense, M*M int64 (8*M^2 bytes: ~32 MB at
M = 2,000).
"""

import hashlib
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from itertools import chain

import numpy as np
from scipy import sparse

from errors import InvalidUserId, ParseError

logger = logging.getLogger(__name__)

HASH_PREFIX = 'h:'
HASHED_HEADER = '# user-ids: hashed'
PAIR_CHUNK = 512


def hash_user_id(raw_id):
    """Stable 64-bit hash of a raw user identifier."""
    if isinstance(raw_id, str):
        raw_id = raw_id.encode('utf-8')
    if not raw_id:
        raise InvalidUserId("user id must be non-empty")
    return int.from_bytes(hashlib.sha3_256(raw_id).digest()[:8], 'big')


def format_user_hash(user_hash):
    return f"{HASH_PREFIX}{user_hash:016x}"


def _user_key(raw_id, prehashed=False):
    if not prehashed:
        return hash_user_id(raw_id)
    digits = raw_id[len(HASH_PREFIX):] if isinstance(raw_id, str) and raw_id.startswith(HASH_PREFIX) else ''
    if len(digits) != 16:
        raise InvalidUserId(f"expected '{HASH_PREFIX}<16 hex digits>', got {raw_id!r}")
    try:
        return int(digits, 16)
    except ValueError:
        raise InvalidUserId(f"bad hashed user id {raw_id!r}") from None


@dataclass(frozen=True, eq=False)
class GroupRecord:
    group_id: str
    subscribers: np.ndarray  # sorted, unique uint64

    def __post_init__(self):
        self.subscribers.setflags(write=False)

    @property
    def size(self):
        return int(self.subscribers.size)


@dataclass(frozen=True, eq=False)
class MembershipGraph:
    """Immutable after construction; safe to share read-only across threads."""
    groups: tuple
    subscription_counts: dict = field(repr=False)

    @classmethod
    def from_groups(cls, groups):
        groups = tuple(g for g in groups if g.size > 0)
        users, counts = (np.unique(np.concatenate([g.subscribers for g in groups]), return_counts=True)
                         if groups else (np.empty(0, dtype=np.uint64), np.empty(0, dtype=np.int64)))
        return cls(groups=groups,
                   subscription_counts={int(u): int(c) for u, c in zip(users, counts)})

    @property
    def num_groups(self):
        return len(self.groups)

    @property
    def num_users(self):
        return len(self.subscription_counts)

    @property
    def group_ids(self):
        return tuple(g.group_id for g in self.groups)

    @property
    def group_sizes(self):
        return np.array([g.size for g in self.groups], dtype=np.int64)

    def index_of(self, group_id):
        for i, g in enumerate(self.groups):
            if g.group_id == group_id:
                return i
        raise KeyError(group_id)

    def users(self):
        """Sorted array of all observed user hashes."""
        return np.array(sorted(self.subscription_counts), dtype=np.uint64)


@dataclass(frozen=True, eq=False)
class IntersectionMatrix:
    counts: np.ndarray
    group_sizes: np.ndarray
    universe_size: int
    group_ids: tuple = ()

    @property
    def order(self):
        return int(self.counts.shape[0])

    def save(self, path):
        with open(path, 'w', encoding='utf-8') as f:
            f.write(f"{self.order} {self.universe_size}\n")
            for row in self.counts:
                f.write(' '.join(str(int(v)) for v in row) + '\n')

    @classmethod
    def load(cls, path, group_ids=()):
        with open(path, encoding='utf-8') as f:
            header = f.readline().split()
            if len(header) != 2:
                raise ParseError(1, "expected header 'M N'")
            order, universe = int(header[0]), int(header[1])
            rows = []
            for lineno, line in enumerate(f, start=2):
                values = line.split()
                if len(values) != order:
                    raise ParseError(lineno, f"expected {order} integers, got {len(values)}")
                rows.append([int(v) for v in values])
        if len(rows) != order:
            raise ParseError(order + 1, f"expected {order} rows, got {len(rows)}")
        counts = np.array(rows, dtype=np.int64).reshape(order, order)
        return cls(counts=counts, group_sizes=np.diag(counts).copy(),
                   universe_size=universe, group_ids=tuple(group_ids))


def parse_membership_lines(lines):
    """Yield (line_number, group_id, raw_user_id) from TSV lines."""
    for lineno, line in enumerate(lines, start=1):
        line = line.rstrip('\r\n')
        if not line.strip() or line.startswith('#'):
            continue
        parts = line.split('\t')
        if len(parts) != 2 or not parts[0] or not parts[1]:
            raise ParseError(lineno, f"expected 'group_id<TAB>user_id', got {line!r}")
        yield lineno, parts[0], parts[1]


def ingest_memberships(edge_stream, prehashed=False):
    """Collapse an edge stream into a MembershipGraph.

    Accepts (group_id, raw_user_id) pairs or (line_number, group_id, raw_user_id)
    triples as produced by parse_membership_lines. Raw ids are always hashed;
    `prehashed=True` instead reads every id as an `h:<16 hex>` hash.
    """
    members = {}
    for position, edge in enumerate(edge_stream, start=1):
        lineno = position
        if len(edge) == 3:
            lineno, group_id, raw_user = edge
        elif len(edge) == 2:
            group_id, raw_user = edge
        else:
            raise ParseError(position, f"malformed edge {edge!r}")
        if not group_id or not raw_user:
            raise ParseError(lineno, f"empty field in edge {edge!r}")
        try:
            user = _user_key(raw_user, prehashed)
        except InvalidUserId as e:
            raise ParseError(lineno, str(e)) from e
        members.setdefault(str(group_id), set()).add(user)

    groups = [GroupRecord(gid, np.array(sorted(users), dtype=np.uint64))
              for gid, users in sorted(members.items())]
    graph = MembershipGraph.from_groups(groups)
    logger.info(f"Ingested {graph.num_groups} groups, {graph.num_users} users")
    return graph


def load_memberships(path, prehashed=None):
    """Read a membership TSV. Files written by write_memberships declare hashed ids
    in their first line; `prehashed` overrides that detection."""
    with open(path, encoding='utf-8') as f:
        first = f.readline()
        if prehashed is None:
            prehashed = first.startswith(HASHED_HEADER)
        return ingest_memberships(parse_membership_lines(chain([first], f)), prehashed=prehashed)


def write_memberships(graph, path):
    with open(path, 'w', encoding='utf-8') as f:
        f.write(f"{HASHED_HEADER} groups={graph.num_groups} users={graph.num_users}\n")
        for g in graph.groups:
            for user in g.subscribers:
                f.write(f"{g.group_id}\t{format_user_hash(int(user))}\n")


def filter_groups(graph, min_size):
    """Keep groups with at least `min_size` subscribers; N and c_j are recomputed."""
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    kept = [g for g in graph.groups if g.size >= min_size]
    if len(kept) != graph.num_groups:
        logger.info(f"Filtered groups below {min_size} members: {graph.num_groups} -> {len(kept)}")
    return MembershipGraph.from_groups(kept)


def incidence_matrix(graph):
    """Sparse N*M 0/1 matrix, rows ordered by user hash, columns by group."""
    users = graph.users()
    rows, cols = [], []
    for k, g in enumerate(graph.groups):
        rows.append(np.searchsorted(users, g.subscribers))
        cols.append(np.full(g.size, k, dtype=np.int64))
    if not rows:
        return sparse.csr_matrix((0, 0), dtype=np.int8)
    data = np.ones(sum(r.size for r in rows), dtype=np.int8)
    return sparse.csr_matrix((data, (np.concatenate(rows), np.concatenate(cols))),
                             shape=(users.size, graph.num_groups))


def intersect_sorted(a, b):
    """|a & b| for two sorted duplicate-free arrays."""
    return int(np.intersect1d(a, b, assume_unique=True).size)


def upper_triangle_pairs(order):
    i, k = np.triu_indices(order, k=1)
    return list(zip(i.tolist(), k.tolist()))


def chunked(items, size):
    return [items[start:start + size] for start in range(0, len(items), size)]


def compute_intersections(graph, threads=None, chunk_size=PAIR_CHUNK):
    """Exact pairwise |A_i & A_k| over all groups.

    Workers own disjoint upper-triangle cells; the lower triangle is mirrored,
    so the result does not depend on the thread count.
    """
    order = graph.num_groups
    if order < 1:
        raise ValueError("compute_intersections needs at least one group")
    sizes = graph.group_sizes
    subscribers = [g.subscribers for g in graph.groups]
    pairs = upper_triangle_pairs(order)

    def work(chunk):
        return [intersect_sorted(subscribers[i], subscribers[k]) for i, k in chunk]

    chunks = chunked(pairs, chunk_size)
    with ThreadPoolExecutor(max_workers=threads or 1) as executor:
        values = list(chain.from_iterable(executor.map(work, chunks)))

    counts = np.diag(sizes).astype(np.int64)
    if pairs:
        rows, cols = np.array(pairs).T
        counts[rows, cols] = values
        counts[cols, rows] = values
    logger.info(f"Computed {len(pairs)} pairwise intersections over {order} groups "
                f"({len(chunks)} chunks)")
    return IntersectionMatrix(counts=counts, group_sizes=sizes.copy(),
                              universe_size=graph.num_users, group_ids=graph.group_ids)
