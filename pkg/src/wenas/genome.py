"""Recurrent-cell genomes: representation, random generation, validation,
serialization, and enumeration of the search space.

A cell with L levels has one fixed input-blending node (node 0) and L-1
searched nodes. Each searched node at level l picks an ancestor among the
nodes before it (0..l-1) and one of four activations.
"""

import itertools
import json
from dataclasses import dataclass
from enum import Enum

from .errors import ConfigError, GenomeParseError


class OpKind(Enum):
    TANH = "tanh"
    RELU = "relu"
    SIGMOID = "sigmoid"
    IDENTITY = "identity"

    @classmethod
    def from_str(cls, text):
        for member in cls:
            if member.value == text:
                return member
        raise ValueError(f"unknown op {text!r}; expected one of {[m.value for m in cls]}")

    def __str__(self):
        return self.value


OP_ORDER = tuple(OpKind)  # index order used for canonical tie-breaking


@dataclass(frozen=True)
class NodeGene:
    ancestor: int
    op: OpKind


@dataclass(frozen=True)
class Genome:
    """levels counts all nodes including node 0; genes describe nodes 1..levels-1."""

    levels: int
    genes: tuple

    def __post_init__(self):
        object.__setattr__(self, "genes", tuple(self.genes))

    def canonical_key(self):
        """Lexicographic (ancestor, op-index) sequence, for stable ordering."""
        return tuple((g.ancestor, OP_ORDER.index(g.op)) for g in self.genes)


def validate(g):
    """Collect every structural violation; an empty list means the genome is ok."""
    violations = []
    if g.levels < 2:
        violations.append(f"levels must be >= 2, got {g.levels}")
    if len(g.genes) != g.levels - 1:
        violations.append(f"expected {g.levels - 1} genes for {g.levels} levels, got {len(g.genes)}")
    for i, gene in enumerate(g.genes):
        level = i + 1
        if not isinstance(gene.op, OpKind):
            violations.append(f"gene at level {level}: op {gene.op!r} is not an OpKind")
        if not 0 <= gene.ancestor < level:
            violations.append(f"gene at level {level}: ancestor {gene.ancestor} >= level {level}")
    return violations


def random_genome(levels, rng):
    """Draw a uniform genome: ancestor from {0..l-1} at level l, op from the 4 kinds."""
    if levels < 2:
        raise ConfigError(f"levels must be >= 2, got {levels}")
    genes = []
    for level in range(1, levels):
        ancestor = int(rng.integers(0, level))
        op = OP_ORDER[int(rng.integers(0, len(OP_ORDER)))]
        genes.append(NodeGene(ancestor, op))
    return Genome(levels, tuple(genes))


def random_pool(count, levels, rng, dedupe=True):
    """Generate `count` genomes; with dedupe (default) they are pairwise distinct.

    Deduplication resamples rejected duplicates, so it needs the space to
    be large enough. dedupe=False reproduces the plain unconditional loop.
    """
    if count < 0:
        raise ConfigError(f"count must be >= 0, got {count}")
    if count == 0:
        return []
    if dedupe:
        space = search_space_size(levels)
        if count > space:
            raise ConfigError(
                f"cannot draw {count} distinct genomes from a space of {space} (levels={levels})"
            )
    pool = []
    seen = set()
    while len(pool) < count:
        g = random_genome(levels, rng)
        if dedupe:
            key = g.canonical_key()
            if key in seen:
                continue
            seen.add(key)
        pool.append(g)
    return pool


def search_space_size(levels):
    """Number of distinct genomes: product over levels of (ancestors * 4 ops)."""
    if levels < 2:
        raise ConfigError(f"levels must be >= 2, got {levels}")
    size = 1
    for level in range(1, levels):
        size *= level * len(OP_ORDER)
    return size


def enumerate_genomes(levels):
    """Yield every genome of the space; intended for small levels only."""
    per_level = [
        [(a, op) for a in range(level) for op in OP_ORDER] for level in range(1, levels)
    ]
    for combo in itertools.product(*per_level):
        yield Genome(levels, tuple(NodeGene(a, op) for a, op in combo))


def serialize(g):
    """Canonical one-line JSON with stable key order."""
    obj = {
        "version": 1,
        "levels": g.levels,
        "nodes": [{"ancestor": gene.ancestor, "op": gene.op.value} for gene in g.genes],
    }
    return json.dumps(obj, separators=(",", ":"))


def parse(text):
    """Inverse of serialize; validates structure before returning."""
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise GenomeParseError(f"invalid JSON at position {exc.pos}: {exc.msg}") from exc
    if not isinstance(obj, dict):
        raise GenomeParseError(f"expected a JSON object, got {type(obj).__name__}")
    if obj.get("version") != 1:
        raise GenomeParseError(f"unsupported genome version {obj.get('version')!r}")
    levels = obj.get("levels")
    nodes = obj.get("nodes")
    if not isinstance(levels, int) or not isinstance(nodes, list):
        raise GenomeParseError("genome object needs integer 'levels' and list 'nodes'")
    genes = []
    for i, node in enumerate(nodes):
        if not isinstance(node, dict):
            raise GenomeParseError(f"nodes[{i}]: expected an object")
        ancestor = node.get("ancestor")
        if not isinstance(ancestor, int):
            raise GenomeParseError(f"nodes[{i}]: 'ancestor' must be an integer")
        try:
            op = OpKind.from_str(node.get("op"))
        except ValueError as exc:
            raise GenomeParseError(f"nodes[{i}]: {exc}") from exc
        genes.append(NodeGene(ancestor, op))
    g = Genome(levels, tuple(genes))
    violations = validate(g)
    if violations:
        raise GenomeParseError("; ".join(violations))
    return g
