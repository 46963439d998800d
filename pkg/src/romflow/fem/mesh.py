"""Linear triangle meshes on the unit square with Dirichlet elimination.

Constrained nodes carry no degree of freedom: ``node_dof`` maps a node to
its dof index or -1, and ``element_dof_map`` lists the dof indices of each
element's three nodes with -1 for constrained slots.  Element geometry
(areas and the constant shape-function gradients) is precomputed once.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class Mesh:
    nodes: np.ndarray            # (n_nodes, 2)
    elements: np.ndarray         # (n_el, 3) node indices
    dirichlet_nodes: np.ndarray  # (n_c,) node indices
    dirichlet_values: np.ndarray  # (n_c,)
    node_dof: np.ndarray = field(init=False)
    element_dof_map: np.ndarray = field(init=False)
    areas: np.ndarray = field(init=False)
    grads: np.ndarray = field(init=False)  # (n_el, 3, 2)
    n_dofs: int = field(init=False)

    def __post_init__(self):
        self.nodes = np.asarray(self.nodes, dtype=np.float64)
        self.elements = np.asarray(self.elements, dtype=np.int64)
        self.dirichlet_nodes = np.asarray(self.dirichlet_nodes, dtype=np.int64)
        self.dirichlet_values = np.asarray(self.dirichlet_values, dtype=np.float64)
        if self.dirichlet_nodes.shape != self.dirichlet_values.shape:
            raise ValueError("dirichlet node and value counts differ")

        n_nodes = self.nodes.shape[0]
        constrained = np.zeros(n_nodes, dtype=bool)
        constrained[self.dirichlet_nodes] = True
        self.node_dof = np.full(n_nodes, -1, dtype=np.int64)
        self.node_dof[~constrained] = np.arange(int((~constrained).sum()))
        self.n_dofs = int((~constrained).sum())
        self.element_dof_map = self.node_dof[self.elements]

        p = self.nodes[self.elements]  # (n_el, 3, 2)
        d1 = p[:, 1] - p[:, 0]
        d2 = p[:, 2] - p[:, 0]
        twice_area = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        if np.any(twice_area <= 0):
            bad = int(np.argmax(twice_area <= 0))
            raise ValueError(f"element {bad} is degenerate or not counterclockwise")
        self.areas = 0.5 * twice_area
        # constant P1 gradients: grad(phi_a) = perpendicular of the opposite edge / (2A)
        g = np.empty((self.elements.shape[0], 3, 2))
        for a, (b, c) in enumerate(((1, 2), (2, 0), (0, 1))):
            g[:, a, 0] = p[:, b, 1] - p[:, c, 1]
            g[:, a, 1] = p[:, c, 0] - p[:, b, 0]
        self.grads = g / twice_area[:, None, None]

    @property
    def n_nodes(self) -> int:
        return self.nodes.shape[0]

    @property
    def n_elements(self) -> int:
        return self.elements.shape[0]

    def full_state(self, d: np.ndarray) -> np.ndarray:
        """Expand a dof vector to all nodes, filling prescribed values."""
        d = np.asarray(d, dtype=np.float64)
        if d.shape != (self.n_dofs,):
            raise ValueError(f"state has shape {d.shape}, expected ({self.n_dofs},)")
        full = np.empty(self.n_nodes)
        full[self.node_dof >= 0] = d
        full[self.dirichlet_nodes] = self.dirichlet_values
        return full


def unit_square_mesh(nx: int, ny: int, dirichlet_value: float = 0.0,
                     dirichlet_values: np.ndarray | None = None) -> Mesh:
    """Structured triangulation of [0,1]^2: nx*ny cells, each split in two.

    All boundary nodes are constrained, to ``dirichlet_value`` by default
    or to explicit per-node values.
    """
    if nx < 1 or ny < 1:
        raise ValueError(f"mesh needs at least one cell per direction, got {nx}x{ny}")
    xs = np.linspace(0.0, 1.0, nx + 1)
    ys = np.linspace(0.0, 1.0, ny + 1)
    gx, gy = np.meshgrid(xs, ys, indexing="xy")
    nodes = np.column_stack([gx.ravel(), gy.ravel()])

    def nid(ix, iy):
        return iy * (nx + 1) + ix

    elements = []
    for iy in range(ny):
        for ix in range(nx):
            n00, n10 = nid(ix, iy), nid(ix + 1, iy)
            n01, n11 = nid(ix, iy + 1), nid(ix + 1, iy + 1)
            elements.append((n00, n10, n11))
            elements.append((n00, n11, n01))
    elements = np.array(elements, dtype=np.int64)

    on_boundary = (
        (nodes[:, 0] == 0.0) | (nodes[:, 0] == 1.0) | (nodes[:, 1] == 0.0) | (nodes[:, 1] == 1.0)
    )
    dn = np.nonzero(on_boundary)[0]
    if dirichlet_values is None:
        dv = np.full(dn.size, dirichlet_value)
    else:
        dv = np.asarray(dirichlet_values, dtype=np.float64)
        if dv.shape != dn.shape:
            raise ValueError(f"expected {dn.size} boundary values, got {dv.shape}")
    return Mesh(nodes, elements, dn, dv)


def recirculating_velocity(nodes: np.ndarray) -> np.ndarray:
    """Divergence-free cell-circulation field with no through-flow at the walls."""
    x, y = nodes[:, 0], nodes[:, 1]
    return np.column_stack(
        [-np.sin(np.pi * x) * np.cos(np.pi * y), np.cos(np.pi * x) * np.sin(np.pi * y)]
    )
