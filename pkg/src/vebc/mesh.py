"""Criss-cross triangulations of the unit square with a mixed boundary split.

One full side of the square carries the homogeneous displacement condition
(the clamped part); the remaining three sides carry traction conditions.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

DIRICHLET = 0
NEUMANN = 1

_SIDES = ("left", "right", "bottom", "top")


@dataclass(frozen=True)
class Mesh:
    """Immutable triangle mesh with tagged boundary edges.

    Attributes
    ----------
    nodes : (n_nodes, 2) array
        Vertex coordinates.
    triangles : (n_triangles, 3) int array
        Vertex indices in positive (counterclockwise) orientation.
    boundary_edges : (n_bedges, 2) int array
        Vertex index pairs on the boundary, oriented so the domain lies
        to the left of the edge (outward normal = edge tangent rotated -90deg).
    boundary_tags : (n_bedges,) int array
        DIRICHLET or NEUMANN per boundary edge.
    """

    nodes: np.ndarray
    triangles: np.ndarray
    boundary_edges: np.ndarray
    boundary_tags: np.ndarray

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_triangles(self) -> int:
        return self.triangles.shape[0]

    def triangle_areas(self) -> np.ndarray:
        p = self.nodes[self.triangles]
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        return 0.5 * (d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0])

    def dirichlet_nodes(self) -> np.ndarray:
        """Sorted indices of nodes lying on clamped boundary edges."""
        edges = self.boundary_edges[self.boundary_tags == DIRICHLET]
        return np.unique(edges)

    def neumann_nodes(self) -> np.ndarray:
        edges = self.boundary_edges[self.boundary_tags == NEUMANN]
        return np.unique(edges)

    def edge_lengths(self, edges: np.ndarray) -> np.ndarray:
        d = self.nodes[edges[:, 1]] - self.nodes[edges[:, 0]]
        return np.hypot(d[:, 0], d[:, 1])

    def outward_normals(self) -> np.ndarray:
        """Unit outward normals of the boundary edges."""
        d = self.nodes[self.boundary_edges[:, 1]] - self.nodes[self.boundary_edges[:, 0]]
        n = np.stack([d[:, 1], -d[:, 0]], axis=1)
        return n / np.linalg.norm(n, axis=1)[:, None]

    def dump(self) -> str:
        """Plain-text block listing of nodes, elements and tagged boundary edges."""
        lines = [f"nodes {self.n_nodes}"]
        for i, (x, y) in enumerate(self.nodes):
            lines.append(f"{i} {x:.17g} {y:.17g}")
        lines.append(f"triangles {self.n_triangles}")
        for i, tri in enumerate(self.triangles):
            lines.append(f"{i} {tri[0]} {tri[1]} {tri[2]}")
        lines.append(f"boundary_edges {len(self.boundary_edges)}")
        names = {DIRICHLET: "dirichlet", NEUMANN: "neumann"}
        for (a, b), tag in zip(self.boundary_edges, self.boundary_tags):
            lines.append(f"{a} {b} {names[int(tag)]}")
        return "\n".join(lines) + "\n"


def build_unit_square_mesh(m: int, dirichlet_side: str = "left") -> Mesh:
    """Uniform criss-cross triangulation of [0,1]^2 with (m+1)^2 nodes, 2m^2 triangles.

    Each grid cell is split along one diagonal, alternating in a checkerboard
    pattern for reproducibility.  The selected side is tagged as the clamped
    boundary; the remaining three sides carry the traction condition.
    """
    if m < 1:
        raise ValueError(f"need at least one subdivision per side, got m={m}")
    if dirichlet_side not in _SIDES:
        raise ValueError(f"dirichlet_side must be one of {_SIDES}, got {dirichlet_side!r}")

    xs = np.linspace(0.0, 1.0, m + 1)
    X, Y = np.meshgrid(xs, xs, indexing="ij")
    nodes = np.stack([X.ravel(), Y.ravel()], axis=1)

    def nid(i, j):
        return i * (m + 1) + j

    triangles = []
    for i in range(m):
        for j in range(m):
            sw, se = nid(i, j), nid(i + 1, j)
            nw, ne = nid(i, j + 1), nid(i + 1, j + 1)
            if (i + j) % 2 == 0:
                # diagonal sw-ne
                triangles.append((sw, se, ne))
                triangles.append((sw, ne, nw))
            else:
                # diagonal se-nw
                triangles.append((sw, se, nw))
                triangles.append((se, ne, nw))
    triangles = np.array(triangles, dtype=int)

    edges = []
    tags = []

    def side_of(a, b):
        pa, pb = nodes[a], nodes[b]
        if pa[0] == 0.0 and pb[0] == 0.0:
            return "left"
        if pa[0] == 1.0 and pb[0] == 1.0:
            return "right"
        if pa[1] == 0.0 and pb[1] == 0.0:
            return "bottom"
        if pa[1] == 1.0 and pb[1] == 1.0:
            return "top"
        raise AssertionError("edge is not on the boundary")

    # walk the four sides with the domain on the left (counterclockwise)
    for k in range(m):
        edges.append((nid(k, 0), nid(k + 1, 0)))          # bottom, left to right
    for k in range(m):
        edges.append((nid(m, k), nid(m, k + 1)))          # right, bottom to top
    for k in range(m):
        edges.append((nid(m - k, m), nid(m - k - 1, m)))  # top, right to left
    for k in range(m):
        edges.append((nid(0, m - k), nid(0, m - k - 1)))  # left, top to bottom
    for a, b in edges:
        tags.append(DIRICHLET if side_of(a, b) == dirichlet_side else NEUMANN)

    mesh = Mesh(
        nodes=nodes,
        triangles=triangles,
        boundary_edges=np.array(edges, dtype=int),
        boundary_tags=np.array(tags, dtype=int),
    )
    assert (mesh.triangle_areas() > 0).all()
    return mesh
