"""Synthetic trajectory data on a holed triangular grid, plus JSON-lines I/O.

Trajectories run from the bottom-left corner of the map to the top-right
corner and pass either left of both holes (class 0) or right of both holes
(class 1). Each trajectory is a simple vertex path encoded as a +-1 edge flow
relative to edge orientation.
"""
from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path

import numpy as np

from .errors import DimensionMismatch, InvalidHolePlacement, NoPath, ParseError, UnknownLabel
from .simplicial import Hodge, SimplicialComplex2, analyze, build_complex

SPLITS = ("train", "val", "test")
LABELS = (0, 1)


@dataclass(frozen=True)
class TriangularGridSpec:
    """``rows x cols`` unit cells, each split into two right triangles along
    the diagonal from its bottom-right to its top-left corner.

    A hole ``(row, col, height, width)`` removes the triangles of that block
    of cells together with the edges and vertices interior to it.

    Vertex labels, and with them the reference orientation of every edge
    (low label to high label), come from a permutation seeded by
    ``label_seed``, as they would for a triangulated point cloud. With
    ``label_seed=None`` labels are row-major, so all edges point up or right.
    """

    rows: int = 8
    cols: int = 8
    holes: tuple[tuple[int, int, int, int], ...] = ((3, 2, 1, 1), (3, 5, 1, 1))
    label_seed: int | None = 0


def _validate_holes(spec: TriangularGridSpec):
    if spec.rows < 1 or spec.cols < 1:
        raise InvalidHolePlacement("grid must have at least one cell")
    boxes = []
    for hole in spec.holes:
        r, c, h, w = hole
        if h < 1 or w < 1:
            raise InvalidHolePlacement(f"hole {hole} is empty")
        if r < 1 or c < 1 or r + h > spec.rows - 1 or c + w > spec.cols - 1:
            raise InvalidHolePlacement(f"hole {hole} does not lie strictly inside the grid")
        boxes.append((r, c, r + h, c + w))
    for a in range(len(boxes)):
        for b in range(a + 1, len(boxes)):
            r0, c0, r1, c1 = boxes[a]
            s0, d0, s1, d1 = boxes[b]
            # closed rectangles must be disjoint, otherwise the holes merge
            if r0 <= s1 and s0 <= r1 and c0 <= d1 and d0 <= c1:
                raise InvalidHolePlacement(f"holes {spec.holes[a]} and {spec.holes[b]} touch or overlap")


def _grid_simplices(spec: TriangularGridSpec):
    _validate_holes(spec)
    hole_cells = set()
    for r, c, h, w in spec.holes:
        hole_cells |= {(i, j) for i in range(r, r + h) for j in range(c, c + w)}

    def vid(i, j):
        return i * (spec.cols + 1) + j

    def is_hole(i, j):
        return (i, j) in hole_cells

    edges, triangles = [], []
    for i in range(spec.rows + 1):
        for j in range(spec.cols + 1):
            if j < spec.cols and not (is_hole(i - 1, j) and is_hole(i, j)):
                edges.append((vid(i, j), vid(i, j + 1)))
            if i < spec.rows and not (is_hole(i, j - 1) and is_hole(i, j)):
                edges.append((vid(i, j), vid(i + 1, j)))
            if i < spec.rows and j < spec.cols and not is_hole(i, j):
                a, b, c, d = vid(i, j), vid(i, j + 1), vid(i + 1, j), vid(i + 1, j + 1)
                edges.append((b, c))
                triangles += [(a, b, c), (b, c, d)]

    used = sorted({v for e in edges for v in e})
    order = np.arange(len(used))
    if spec.label_seed is not None:
        order = np.random.default_rng(spec.label_seed).permutation(len(used))
    relabel = {v: int(k) for v, k in zip(used, order)}
    coords = np.zeros((len(used), 2), dtype=np.int64)  # (row, col) per label
    coords[order] = [divmod(v, spec.cols + 1) for v in used]
    edges = [(relabel[a], relabel[b]) for a, b in edges]
    triangles = [tuple(relabel[v] for v in t) for t in triangles]
    return len(used), edges, triangles, coords


def build_two_hole_map(spec: TriangularGridSpec = TriangularGridSpec()) -> SimplicialComplex2:
    n, edges, triangles, _ = _grid_simplices(spec)
    return build_complex(n, edges, triangles)


def vertex_coordinates(spec: TriangularGridSpec = TriangularGridSpec()) -> np.ndarray:
    """``(row, col)`` grid position of every vertex of :func:`build_two_hole_map`."""
    return _grid_simplices(spec)[3]


@dataclass
class TrajectoryMap:
    spec: TriangularGridSpec
    complex: SimplicialComplex2
    coords: np.ndarray
    hodge: Hodge
    adjacency: list[list[int]] = field(repr=False)

    @property
    def num_edges(self) -> int:
        return self.complex.num_edges


@lru_cache(maxsize=8)
def make_map(spec: TriangularGridSpec = TriangularGridSpec()) -> TrajectoryMap:
    sc = build_two_hole_map(spec)
    adjacency = [[] for _ in range(sc.num_vertices)]
    for a, b in sc.edges:
        adjacency[a].append(b)
        adjacency[b].append(a)
    return TrajectoryMap(spec, sc, vertex_coordinates(spec), analyze(sc), adjacency)


@dataclass
class LabeledFlow:
    flow: np.ndarray
    label: int
    split: str


def _bfs_distances(adjacency, target):
    dist = np.full(len(adjacency), -1, dtype=np.int64)
    dist[target] = 0
    queue = deque([target])
    while queue:
        u = queue.popleft()
        for v in adjacency[u]:
            if dist[v] < 0:
                dist[v] = dist[u] + 1
                queue.append(v)
    return dist


def _random_shortest_path(adjacency, source, target, rng):
    dist = _bfs_distances(adjacency, target)
    if dist[source] < 0:
        raise NoPath(f"no path from vertex {source} to {target}")
    path = [source]
    u = source
    while u != target:
        steps = [v for v in adjacency[u] if dist[v] == dist[u] - 1]
        u = steps[rng.integers(len(steps))]
        path.append(u)
    return path


def _erase_loops(walk):
    path, seen = [], {}
    for v in walk:
        if v in seen:
            cut = seen[v]
            for w in path[cut + 1:]:
                del seen[w]
            path = path[:cut + 1]
        else:
            seen[v] = len(path)
            path.append(v)
    return path


def path_to_flow(sc: SimplicialComplex2, path) -> np.ndarray:
    x = np.zeros(sc.num_edges)
    index = sc.edge_index
    for u, v in zip(path[:-1], path[1:]):
        x[index[(min(u, v), max(u, v))]] += 1.0 if u < v else -1.0
    return x


def _regions(tmap: TrajectoryMap):
    """Start (bottom-left) and end (top-right) vertices plus two waypoint sets per class.

    Class 0 climbs the left corridor and crosses above both holes; class 1
    crosses below both holes and climbs the right corridor. Every leg between
    consecutive waypoints moves up and right, so its shortest paths cannot
    wind around a hole the other way.
    """
    spec = tmap.spec
    rows, cols = tmap.coords[:, 0], tmap.coords[:, 1]
    hole_top = min(r for r, _, _, _ in spec.holes)
    hole_bottom = max(r + h for r, _, h, _ in spec.holes)
    left_edge = min(c for _, c, _, _ in spec.holes)
    right_edge = max(c + w for _, c, _, w in spec.holes)
    band = (rows >= hole_top) & (rows <= hole_bottom)
    between = (cols >= left_edge) & (cols <= right_edge)
    corner = max(1, min(spec.rows, spec.cols) // 4)
    return {
        "start": np.flatnonzero((rows < max(hole_top - 1, 1)) & (cols <= corner)),
        "end": np.flatnonzero((rows > min(hole_bottom + 1, spec.rows - 1)) & (cols >= spec.cols - corner)),
        0: (np.flatnonzero(band & (cols < left_edge)), np.flatnonzero((rows == hole_bottom + 1) & between)),
        1: (np.flatnonzero((rows == hole_top - 1) & between), np.flatnonzero(band & (cols > right_edge))),
    }


def generate_trajectory(tmap: TrajectoryMap, class_id: int, rng, split: str = "train") -> LabeledFlow:
    """Random corner-to-corner path around the holes on the class's side."""
    if class_id not in LABELS:
        raise UnknownLabel(f"class must be one of {LABELS}")
    regions = _regions(tmap)
    stops = [regions["start"], *regions[class_id], regions["end"]]
    if any(len(region) == 0 for region in stops):
        raise NoPath(f"map has an empty start, end or class-{class_id} waypoint region")
    points = [region[rng.integers(len(region))] for region in stops]
    walk = [points[0]]
    for a, b in zip(points, points[1:]):
        walk += _random_shortest_path(tmap.adjacency, a, b, rng)[1:]
    path = _erase_loops(walk)
    return LabeledFlow(path_to_flow(tmap.complex, path), int(class_id), split)


def _as_seed_sequence(seed):
    if isinstance(seed, np.random.SeedSequence):
        return seed
    return np.random.SeedSequence(seed)


def generate_dataset(tmap: TrajectoryMap, n_train=200, n_val=100, n_test=100, seed=0) -> list[LabeledFlow]:
    """Class-balanced splits, each drawn from its own child seed of ``seed``."""
    sizes = {"train": n_train, "val": n_val, "test": n_test}
    for name, n in sizes.items():
        if n < 2 or n % 2:
            raise ValueError(f"{name} size must be even and at least 2, got {n}")
    out = []
    for (name, n), child in zip(sizes.items(), _as_seed_sequence(seed).spawn(3)):
        rng = np.random.default_rng(child)
        labels = rng.permutation(np.repeat(LABELS, n // 2))
        out += [generate_trajectory(tmap, int(k), rng, name) for k in labels]
    return out


def stack(flows: list[LabeledFlow], split=None):
    """``(X, y)`` arrays for the flows of one split (or all flows)."""
    chosen = [f for f in flows if split is None or f.split == split]
    if not chosen:
        return np.zeros((0, 0)), np.zeros(0, dtype=np.int64)
    return np.stack([f.flow for f in chosen]), np.array([f.label for f in chosen], dtype=np.int64)


def _fmt(values):
    return "[" + ",".join(format(float(v), ".17g") for v in values) + "]"


def save_dataset(path, sc: SimplicialComplex2, flows: list[LabeledFlow]):
    lines = [sc.to_json()]
    for f in flows:
        lines.append(f'{{"flow":{_fmt(f.flow)},"label":{int(f.label)},"split":"{f.split}"}}')
    Path(path).write_text("\n".join(lines) + "\n")


def load_external_flows(path):
    """Read a dataset file: first record the complex, then one flow per line."""
    sc = None
    flows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON ({exc.msg})", lineno) from None
            if not isinstance(rec, dict):
                raise ParseError("record is not an object", lineno)
            if sc is None:
                try:
                    sc = SimplicialComplex2.from_dict(rec)
                except (KeyError, TypeError) as exc:
                    raise ParseError(f"bad complex record: {exc}", lineno) from None
                continue
            try:
                flow = np.asarray(rec["flow"], dtype=np.float64)
                label, split = rec["label"], rec["split"]
            except (KeyError, TypeError, ValueError) as exc:
                raise ParseError(f"bad flow record: {exc}", lineno) from None
            if flow.ndim != 1 or flow.shape[0] != sc.num_edges:
                raise DimensionMismatch(f"line {lineno}: flow has {flow.size} values, complex has {sc.num_edges} edges")
            if isinstance(label, bool) or label not in LABELS:
                raise UnknownLabel(f"line {lineno}: label {label!r}")
            if split not in SPLITS:
                raise ParseError(f"unknown split {split!r}", lineno)
            flows.append(LabeledFlow(flow, int(label), split))
    if sc is None:
        raise ParseError("empty dataset file", 1)
    return sc, flows
