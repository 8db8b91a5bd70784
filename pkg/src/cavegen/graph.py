"""Cave skeleton generation: a seeded, layered graph grown node by node.

Growth places children on a circle around each active node, with the angle
drawn from a configurable angular distribution whose sections near the
parent direction are forbidden.  Multi-layer graphs grow each layer as an
independent planar tree and then join adjacent layers with slope-bounded
chains of inactive nodes.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import asdict, dataclass, field
from typing import Iterable

import numpy as np

from .errors import ConfigError, ContractViolation, DegenerateDistributionError
from .noise import (
    AngularWeights,
    NoiseParams,
    derive_seed,
    gaussian_weights,
    hybrid_weights,
    make_rng,
    perlin3,
    perlin_weights,
    sample_section,
    uniform_weights,
)

MANIFEST_VERSION = 1

_SALT_SEED_NODE = 1
_SALT_EXPAND = 2
_SALT_RESEED = 3
_SALT_ELEVATION = 4
_SALT_CONNECT = 5
_SALT_ANGULAR = 6

DISTRIBUTIONS = ("gaussian", "perlin", "hybrid")


@dataclass
class Node:
    id: int
    parent: int | None
    edges: set[int]
    coordinates: np.ndarray
    radius: float
    active: bool
    layer: int = 0

    def __post_init__(self) -> None:
        self.coordinates = np.asarray(self.coordinates, dtype=np.float64)


@dataclass
class Graph:
    nodes: list[Node] = field(default_factory=list)
    layers: int = 1
    seed: int = 0

    def node(self, node_id: int) -> Node:
        return self.nodes[node_id]

    def positions(self) -> np.ndarray:
        return np.array([n.coordinates for n in self.nodes], dtype=np.float64)

    def edge_pairs(self) -> list[tuple[int, int]]:
        """Unique undirected edges as sorted (low, high) pairs, ordered."""
        pairs = set()
        for n in self.nodes:
            for other in n.edges:
                pairs.add((n.id, other) if n.id < other else (other, n.id))
        return sorted(pairs)

    def parent_pairs(self) -> set[tuple[int, int]]:
        pairs = set()
        for n in self.nodes:
            if n.parent is not None:
                pairs.add((n.parent, n.id) if n.parent < n.id else (n.id, n.parent))
        return pairs

    def interconnect_pairs(self) -> list[tuple[int, int]]:
        """Edges that are not parent links, i.e. layer interconnections."""
        parents = self.parent_pairs()
        return [p for p in self.edge_pairs() if p not in parents]

    def is_connected(self) -> bool:
        if not self.nodes:
            return False
        seen = {0}
        queue = deque([0])
        while queue:
            nid = queue.popleft()
            for other in self.nodes[nid].edges:
                if other not in seen:
                    seen.add(other)
                    queue.append(other)
        return len(seen) == len(self.nodes)


@dataclass
class GraphConfig:
    node_count_target: int = 50
    radius_min: float = 4.0
    radius_max: float = 12.0
    children_min: int = 1
    children_max: int = 3
    branch_death_prob: float = 0.15
    forbidden_half_angle_deg: float = 60.0
    distribution: str = "gaussian"
    gaussian_sigma_deg: float = 30.0
    perlin_frequency: float = 4.0
    hybrid_blend: float = 0.5
    layers: int = 1
    layer_spacing: float = 15.0
    max_interconnect_angle_deg: float = 60.0
    interconnect_per_layer: int = 2
    elevation_amplitude: float = 2.0
    elevation_frequency: float = 0.02
    seed: int = 0

    def validate(self) -> None:
        if self.node_count_target < 1:
            raise ConfigError(f"node_count_target must be >= 1, got {self.node_count_target}")
        if not 0 < self.radius_min <= self.radius_max:
            raise ConfigError(
                f"need 0 < radius_min <= radius_max, got radius_min={self.radius_min}, radius_max={self.radius_max}"
            )
        if not 0 <= self.children_min <= self.children_max:
            raise ConfigError(
                f"need 0 <= children_min <= children_max, got children_min={self.children_min}, children_max={self.children_max}"
            )
        if not 0.0 <= self.branch_death_prob <= 1.0:
            raise ConfigError(f"branch_death_prob must be in [0, 1], got {self.branch_death_prob}")
        if not 0.0 < self.forbidden_half_angle_deg < 180.0:
            raise ConfigError(
                f"forbidden_half_angle_deg must be in (0, 180), got {self.forbidden_half_angle_deg}"
            )
        if self.distribution not in DISTRIBUTIONS:
            raise ConfigError(f"distribution must be one of {DISTRIBUTIONS}, got {self.distribution!r}")
        if not self.gaussian_sigma_deg > 0:
            raise ConfigError(f"gaussian_sigma_deg must be > 0, got {self.gaussian_sigma_deg}")
        if not self.perlin_frequency > 0:
            raise ConfigError(f"perlin_frequency must be > 0, got {self.perlin_frequency}")
        if not 0.0 <= self.hybrid_blend <= 1.0:
            raise ConfigError(f"hybrid_blend must be in [0, 1], got {self.hybrid_blend}")
        if self.layers < 1:
            raise ConfigError(f"layers must be >= 1, got {self.layers}")
        if not self.layer_spacing > 0:
            raise ConfigError(f"layer_spacing must be > 0, got {self.layer_spacing}")
        if not 0.0 < self.max_interconnect_angle_deg <= 90.0:
            raise ConfigError(
                f"max_interconnect_angle_deg must be in (0, 90], got {self.max_interconnect_angle_deg}"
            )
        if self.interconnect_per_layer < 1:
            raise ConfigError(f"interconnect_per_layer must be >= 1, got {self.interconnect_per_layer}")
        if self.elevation_amplitude < 0:
            raise ConfigError(f"elevation_amplitude must be >= 0, got {self.elevation_amplitude}")
        if not self.elevation_frequency > 0:
            raise ConfigError(f"elevation_frequency must be > 0, got {self.elevation_frequency}")
        if not 0 <= self.seed < 2**64:
            raise ConfigError(f"seed must be a 64-bit unsigned integer, got {self.seed}")


def _circular_distance(indices: np.ndarray, angle_deg: float) -> np.ndarray:
    return np.abs((indices - angle_deg + 180.0) % 360.0 - 180.0)


def angular_distribution(
    node: Node, parent_direction: np.ndarray | None, config: GraphConfig
) -> AngularWeights:
    """Spawn distribution for one node's expansion circle.

    parent_direction is the unit 2D vector from the parent to this node (the
    outward continuation); None for root nodes.  Sections within the
    forbidden half-angle of the back-direction are zeroed and the rest
    renormalized.
    """
    if parent_direction is not None:
        continuation = math.degrees(math.atan2(parent_direction[1], parent_direction[0])) % 360.0
    else:
        continuation = None

    if config.distribution == "gaussian":
        base = (
            gaussian_weights(continuation, config.gaussian_sigma_deg)
            if continuation is not None
            else uniform_weights()
        )
    elif config.distribution == "perlin":
        base = perlin_weights(derive_seed(config.seed, _SALT_ANGULAR, node.id), config.perlin_frequency)
    else:
        g = (
            gaussian_weights(continuation, config.gaussian_sigma_deg)
            if continuation is not None
            else uniform_weights()
        )
        p = perlin_weights(derive_seed(config.seed, _SALT_ANGULAR, node.id), config.perlin_frequency)
        base = hybrid_weights(g, p, config.hybrid_blend)

    if continuation is None:
        return base

    back = (continuation + 180.0) % 360.0
    values = base.values.copy()
    values[_circular_distance(np.arange(360, dtype=np.float64), back) <= config.forbidden_half_angle_deg] = 0.0
    total = values.sum()
    if total <= 0.0:
        raise DegenerateDistributionError(
            f"no spawn sections left outside the forbidden zone for node {node.id}"
        )
    return AngularWeights(values / total)


def _parent_direction(graph: Graph, node: Node) -> np.ndarray | None:
    if node.parent is None:
        return None
    d = node.coordinates[:2] - graph.nodes[node.parent].coordinates[:2]
    norm = float(np.linalg.norm(d))
    if norm == 0.0:
        return None
    return d / norm


def expand_node(
    graph: Graph, node_id: int, config: GraphConfig, rng: np.random.Generator
) -> list[int]:
    """Grow children on the node's circle and mark the node expanded.

    Each child sits at a drawn step radius from the node, in the node's
    layer plane; the child's own radius equals that step, so node spacing
    and tunnel thickness come from the same value.
    """
    node = graph.nodes[node_id]
    if not node.active:
        raise ContractViolation(f"cannot expand inactive node {node_id}")

    k = int(rng.integers(config.children_min, config.children_max + 1))
    weights = angular_distribution(node, _parent_direction(graph, node), config) if k > 0 else None

    new_ids = []
    for _ in range(k):
        step = float(rng.uniform(config.radius_min, config.radius_max))
        section = sample_section(weights, rng)
        theta = math.radians(float(section))
        offset = np.array([step * math.cos(theta), step * math.sin(theta), 0.0])
        alive = bool(rng.random() >= config.branch_death_prob)
        child = Node(
            id=len(graph.nodes),
            parent=node.id,
            edges={node.id},
            coordinates=node.coordinates + offset,
            radius=step,
            active=alive,
            layer=node.layer,
        )
        graph.nodes.append(child)
        node.edges.add(child.id)
        new_ids.append(child.id)
    node.active = False
    return new_ids


def _make_root(graph: Graph, config: GraphConfig, layer: int) -> Node:
    rng = make_rng(derive_seed(config.seed, _SALT_SEED_NODE, layer))
    root = Node(
        id=len(graph.nodes),
        parent=None,
        edges=set(),
        coordinates=np.array([0.0, 0.0, -layer * config.layer_spacing]),
        radius=float(rng.uniform(config.radius_min, config.radius_max)),
        active=True,
        layer=layer,
    )
    graph.nodes.append(root)
    return root


def generate_graph(config: GraphConfig) -> Graph:
    """Grow the full skeleton: per-layer trees, local elevation, interconnections.

    Deterministic in the config: every expansion draws from a stream derived
    from (seed, node id), so the result does not depend on traversal details.
    """
    config.validate()
    if config.children_max == 0 and config.node_count_target > config.layers:
        raise ConfigError(
            f"node_count_target={config.node_count_target} is unreachable with children_max=0"
        )

    graph = Graph(nodes=[], layers=config.layers, seed=config.seed)
    reseeds = 0
    reseed_budget = 1000 + 20 * config.node_count_target
    expansions: dict[int, int] = {}

    for layer in range(config.layers):
        if layer == config.layers - 1:
            threshold = config.node_count_target
        else:
            threshold = round(config.node_count_target * (layer + 1) / config.layers)
        root = _make_root(graph, config, layer)
        frontier: deque[int] = deque([root.id])
        layer_start = root.id

        while len(graph.nodes) < threshold:
            if not frontier:
                if reseeds >= reseed_budget:
                    raise ContractViolation("graph growth stalled: re-seed budget exhausted")
                rng = make_rng(derive_seed(config.seed, _SALT_RESEED, reseeds))
                reseeds += 1
                layer_ids = [n.id for n in graph.nodes[layer_start:] if n.layer == layer]
                pick = layer_ids[int(rng.integers(len(layer_ids)))]
                graph.nodes[pick].active = True
                frontier.append(pick)
                continue
            nid = frontier.popleft()
            if not graph.nodes[nid].active:
                continue
            nth = expansions.get(nid, 0)
            expansions[nid] = nth + 1
            rng = make_rng(derive_seed(config.seed, _SALT_EXPAND, nid, nth))
            new_ids = expand_node(graph, nid, config, rng)
            frontier.extend(i for i in new_ids if graph.nodes[i].active)

    apply_elevation(graph, config)
    if config.layers >= 2:
        connect_layers(graph, config, make_rng(derive_seed(config.seed, _SALT_CONNECT)))
    return graph


def apply_elevation(graph: Graph, config: GraphConfig) -> Graph:
    """Displace node heights by planar gradient noise, clamped below half the
    layer spacing so layer ordering survives."""
    if config.elevation_amplitude == 0.0:
        return graph
    params = NoiseParams(
        seed=derive_seed(config.seed, _SALT_ELEVATION),
        frequency=config.elevation_frequency,
        octaves=1,
    )
    pts = graph.positions()
    pts[:, 2] = 0.0
    dz = perlin3(pts, params) * config.elevation_amplitude
    limit = 0.5 * config.layer_spacing * (1.0 - 1e-12)
    dz = np.clip(dz, -limit, limit)
    for node, delta in zip(graph.nodes, dz):
        node.coordinates[2] += delta
    return graph


def _slope_deg(a: np.ndarray, b: np.ndarray) -> float:
    run = float(np.hypot(b[0] - a[0], b[1] - a[1]))
    rise = abs(float(b[2] - a[2]))
    return math.degrees(math.atan2(rise, run))


def _insert_chain(
    graph: Graph, a_id: int, b_id: int, waypoints: list[np.ndarray], layer: int
) -> None:
    """Insert inactive pass-through nodes along waypoints and link a...b."""
    a = graph.nodes[a_id]
    b = graph.nodes[b_id]
    total = 0.0
    lengths = [0.0]
    prev = a.coordinates
    for w in waypoints:
        total += float(np.linalg.norm(w[:2] - prev[:2]))
        lengths.append(total)
        prev = w
    total += float(np.linalg.norm(b.coordinates[:2] - prev[:2]))

    prev_id = a_id
    for i, w in enumerate(waypoints):
        frac = lengths[i + 1] / total if total > 0 else (i + 1) / (len(waypoints) + 1)
        node = Node(
            id=len(graph.nodes),
            parent=None,
            edges={prev_id},
            coordinates=w,
            radius=a.radius + (b.radius - a.radius) * frac,
            active=False,
            layer=layer,
        )
        graph.nodes.append(node)
        graph.nodes[prev_id].edges.add(node.id)
        prev_id = node.id
    graph.nodes[prev_id].edges.add(b_id)
    b.edges.add(prev_id)


def connect_layers(graph: Graph, config: GraphConfig, rng: np.random.Generator) -> Graph:
    """Join each adjacent layer pair with slope-bounded connections.

    Prefers lower-layer targets already satisfying the slope bound along a
    straight subdivided segment; otherwise ramps to the horizontally nearest
    node with every segment at exactly the maximum angle.
    """
    if config.layers < 2:
        raise ContractViolation("connect_layers requires at least two layers")

    by_layer: dict[int, list[int]] = {}
    for n in graph.nodes:
        by_layer.setdefault(n.layer, []).append(n.id)

    max_angle = config.max_interconnect_angle_deg
    for layer in range(config.layers - 1):
        upper = by_layer[layer]
        lower = by_layer[layer + 1]
        for _ in range(config.interconnect_per_layer):
            a_id = upper[int(rng.integers(len(upper)))]
            pa = graph.nodes[a_id].coordinates
            candidates = [
                b_id
                for b_id in lower
                if _slope_deg(pa, graph.nodes[b_id].coordinates) <= max_angle + 1e-12
            ]
            if candidates:
                b_id = candidates[int(rng.integers(len(candidates)))]
                pb = graph.nodes[b_id].coordinates
                n_int = max(1, math.ceil(config.layer_spacing / config.radius_max))
                waypoints = [
                    pa + (pb - pa) * (i / (n_int + 1)) for i in range(1, n_int + 1)
                ]
            else:
                b_id = min(
                    lower,
                    key=lambda b: (float(np.hypot(*(graph.nodes[b].coordinates[:2] - pa[:2]))), b),
                )
                pb = graph.nodes[b_id].coordinates
                waypoints = _ramp_waypoints(pa, pb, max_angle, config.radius_max)
            _insert_chain(graph, a_id, b_id, waypoints, layer)
    return graph


def _ramp_waypoints(pa: np.ndarray, pb: np.ndarray, max_angle: float, radius_max: float) -> list[np.ndarray]:
    """Dog-leg path from pa down to pb whose segments all run at exactly max_angle.

    Overshoots past pb in plan view and comes back, so the total horizontal
    run matches the drop at the maximum grade; the corner is itself a node so
    no segment cuts across it.
    """
    drop = float(pa[2] - pb[2])
    grade = math.tan(math.radians(max_angle))
    run_needed = abs(drop) / grade
    delta = pb[:2] - pa[:2]
    run_direct = float(np.hypot(delta[0], delta[1]))
    u = delta / run_direct if run_direct > 1e-12 else np.array([1.0, 0.0])

    leg1 = (run_needed + run_direct) / 2.0
    leg2 = run_needed - leg1
    corner_xy = pa[:2] + u * leg1
    sign = math.copysign(1.0, drop)

    def point_at(s: float) -> np.ndarray:
        if s <= leg1:
            xy = pa[:2] + u * s
        else:
            xy = corner_xy - u * (s - leg1)
        return np.array([xy[0], xy[1], pa[2] - sign * s * grade])

    slant = math.sqrt(1.0 + grade * grade)
    waypoints = []
    pos = 0.0
    for leg_len in (leg1, leg2):
        nseg = max(1, math.ceil((leg_len * slant) / radius_max))
        for i in range(1, nseg + 1):
            s = pos + leg_len * i / nseg
            waypoints.append(point_at(s))
        pos += leg_len
    return waypoints[:-1]  # the final point is pb itself


def graph_to_json(graph: Graph, config: GraphConfig) -> dict:
    """Serializable manifest embedding the config for seed-only regeneration."""
    return {
        "version": MANIFEST_VERSION,
        "config": asdict(config),
        "nodes": [
            {
                "id": n.id,
                "parent": n.parent,
                "edges": sorted(n.edges),
                "coordinates": [float(c) for c in n.coordinates],
                "radius": float(n.radius),
                "active": bool(n.active),
                "layer": n.layer,
            }
            for n in graph.nodes
        ],
    }


def _require(doc: dict, key: str, kind, path: str):
    if key not in doc:
        raise ConfigError(f"manifest missing required key {path}.{key}")
    value = doc[key]
    if kind is float:
        if not isinstance(value, (int, float)) or isinstance(value, bool):
            raise ConfigError(f"manifest key {path}.{key} must be a number, got {type(value).__name__}")
        return float(value)
    if not isinstance(value, kind) or (kind is int and isinstance(value, bool)):
        raise ConfigError(f"manifest key {path}.{key} must be {kind.__name__}, got {type(value).__name__}")
    return value


def json_to_graph(doc: dict) -> tuple[Graph, GraphConfig]:
    """Parse and validate a skeleton manifest; lossless inverse of graph_to_json."""
    if not isinstance(doc, dict):
        raise ConfigError("manifest root must be an object")
    version = _require(doc, "version", int, "$")
    if version != MANIFEST_VERSION:
        raise ConfigError(f"unsupported manifest version {version}")
    config_doc = _require(doc, "config", dict, "$")
    known = {f.name for f in GraphConfig.__dataclass_fields__.values()}
    unknown = set(config_doc) - known
    if unknown:
        raise ConfigError(f"unknown config keys in manifest: {sorted(unknown)}")
    missing = known - set(config_doc)
    if missing:
        raise ConfigError(f"manifest config missing keys: {sorted(missing)}")
    config = GraphConfig(**config_doc)
    config.validate()

    nodes_doc = _require(doc, "nodes", list, "$")
    if not nodes_doc:
        raise ConfigError("manifest has no nodes")
    nodes = []
    for i, nd in enumerate(nodes_doc):
        path = f"nodes[{i}]"
        if not isinstance(nd, dict):
            raise ConfigError(f"{path} must be an object")
        nid = _require(nd, "id", int, path)
        if nid != i:
            raise ConfigError(f"{path}.id must equal its list position {i}, got {nid}")
        parent = nd.get("parent")
        if parent is not None and (not isinstance(parent, int) or isinstance(parent, bool)):
            raise ConfigError(f"{path}.parent must be an integer or null")
        edges = _require(nd, "edges", list, path)
        coords = _require(nd, "coordinates", list, path)
        if len(coords) != 3:
            raise ConfigError(f"{path}.coordinates must have 3 entries")
        nodes.append(
            Node(
                id=nid,
                parent=parent,
                edges=set(edges),
                coordinates=np.array([float(c) for c in coords]),
                radius=_require(nd, "radius", float, path),
                active=bool(_require(nd, "active", bool, path)),
                layer=_require(nd, "layer", int, path),
            )
        )

    graph = Graph(nodes=nodes, layers=config.layers, seed=config.seed)
    _validate_graph(graph, config)
    return graph, config


def _validate_graph(graph: Graph, config: GraphConfig) -> None:
    n = len(graph.nodes)
    origins = [
        nd.id
        for nd in graph.nodes
        if nd.parent is None and np.array_equal(nd.coordinates, np.zeros(3))
    ]
    if len(origins) != 1 or origins[0] != 0:
        raise ConfigError("graph must have exactly one origin: node 0 with no parent at (0,0,0)")
    for nd in graph.nodes:
        if nd.id in nd.edges:
            raise ConfigError(f"node {nd.id} has a self-edge")
        for other in nd.edges:
            if not 0 <= other < n:
                raise ConfigError(f"node {nd.id} references missing edge target {other}")
            if nd.id not in graph.nodes[other].edges:
                raise ConfigError(f"asymmetric edge: {other} missing from edges of {nd.id}'s neighbor")
        if nd.parent is not None:
            if not 0 <= nd.parent < n:
                raise ConfigError(f"node {nd.id} has dangling parent {nd.parent}")
            if nd.parent not in nd.edges:
                raise ConfigError(f"node {nd.id} parent link is not an edge")
        if not config.radius_min <= nd.radius <= config.radius_max:
            raise ConfigError(
                f"node {nd.id} radius {nd.radius} outside [radius_min, radius_max]"
            )
        if not 0 <= nd.layer < config.layers:
            raise ConfigError(f"node {nd.id} layer {nd.layer} outside configured layer count")
    # parent links must be acyclic
    for nd in graph.nodes:
        seen = set()
        cur = nd.id
        while graph.nodes[cur].parent is not None:
            if cur in seen:
                raise ConfigError(f"parent links contain a cycle through node {nd.id}")
            seen.add(cur)
            cur = graph.nodes[cur].parent
    if not graph.is_connected():
        raise ConfigError("graph is not connected")
