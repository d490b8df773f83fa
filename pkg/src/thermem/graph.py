"""Directed-graph operators encoding the coupling topology and parameter sharing.

Every ordered adjacency entry of a mesh becomes one directed edge, so edges
come in reversed pairs and m = 2 * (number of symmetric couplings). The
incidence matrix J (n x m) carries +1 at an edge's tail and -1 at its head;
Io is J with +1 replaced by 0, so a conductance on an edge heats/cools the
head compartment only. Selector matrices map the shared parameter vectors
onto the graph: C_sel (m x n_k) spreads conductance classes over edges with
face-area scales, B_sel (n x n_P) places heat-source channels into
compartments, A_sel (n_P x n_z) maps shared source gains to channels.

The ambient compartment is a boundary condition: its temperature must evolve
as T_amb(t+1) = T_amb(t). The dynamics therefore use a variant of Io whose
ambient row is zeroed (no edge heats the ambient), exposed here as
``Io_dyn``; the literal Io is kept because structural products such as the
process-noise support pattern are defined on it.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Mapping

import numpy as np
import scipy.sparse as sp

from thermem.errors import ConfigurationError
from thermem.mesh import Compartment, CompartmentMesh


@dataclass(frozen=True)
class SharingScheme:
    """Assignment of coupling/source parameter classes.

    ``edge_class(ci, cj)`` must be symmetric; ``source_class(c)`` maps a
    source compartment to its gain class. ``k_names``/``z_names`` label the
    classes for reports.
    """

    edge_class: Callable[[Compartment, Compartment], int]
    source_class: Callable[[Compartment], int]
    n_k: int
    n_z: int
    k_names: tuple = ()
    z_names: tuple = ()
    name: str = ""

    @staticmethod
    def from_tables(
        node_group: Callable[[Compartment], str],
        k_table: Mapping[tuple, int],
        z_table: Mapping[str, int],
        name: str = "",
        k_names=(),
        z_names=(),
    ) -> "SharingScheme":
        """Build a scheme from group-pair lookup tables.

        ``k_table`` keys are sorted (group_a, group_b) tuples; symmetry of the
        edge classifier is automatic.
        """

        def edge_class(ci, cj):
            ga, gb = node_group(ci), node_group(cj)
            key = tuple(sorted((ga, gb)))
            try:
                return k_table[key]
            except KeyError:
                raise ConfigurationError(
                    f"sharing scheme {name!r} does not cover coupling {key[0]} <-> {key[1]}"
                ) from None

        def source_class(c):
            g = node_group(c)
            try:
                return z_table[g]
            except KeyError:
                raise ConfigurationError(
                    f"sharing scheme {name!r} does not cover source group {g!r}"
                ) from None

        n_k = max(k_table.values()) + 1 if k_table else 0
        n_z = max(z_table.values()) + 1 if z_table else 0
        return SharingScheme(
            edge_class=edge_class,
            source_class=source_class,
            n_k=n_k,
            n_z=n_z,
            k_names=tuple(k_names),
            z_names=tuple(z_names),
            name=name,
        )


@dataclass(eq=False)
class GraphOperators:
    """Incidence and selector matrices of a mesh under a sharing scheme.

    Edge arrays (tails, heads, weights, k_class) define the sparse operators;
    sources are ordered by compartment index. ``coupling_by_class[a]`` is the
    n x n matrix Io_dyn @ diag(C_sel[:, a]) @ J', so the state matrix is
    I - dtau * sum_a k_a * coupling_by_class[a].
    """

    n: int
    m: int
    n_k: int
    n_z: int
    n_P: int
    ambient_index: int
    tails: np.ndarray
    heads: np.ndarray
    weights: np.ndarray
    k_class: np.ndarray
    src_comp: np.ndarray
    src_scale: np.ndarray
    z_class: np.ndarray
    J: sp.csr_matrix = field(repr=False, default=None)
    Io: sp.csr_matrix = field(repr=False, default=None)
    Io_dyn: sp.csr_matrix = field(repr=False, default=None)
    C_sel: sp.csr_matrix = field(repr=False, default=None)
    B_sel: sp.csr_matrix = field(repr=False, default=None)
    A_sel: sp.csr_matrix = field(repr=False, default=None)
    coupling_by_class: tuple = field(repr=False, default=())
    k_names: tuple = ()
    z_names: tuple = ()

    @property
    def n_theta(self) -> int:
        return self.n_k + self.n_z

    def coupling_sum(self, k: np.ndarray) -> sp.csr_matrix:
        """Io_dyn @ diag(C_sel @ k) @ J' for a conductance vector k."""
        out = sp.csr_matrix((self.n, self.n))
        for a, S_a in enumerate(self.coupling_by_class):
            out = out + k[a] * S_a
        return out

    def source_matrix(self, z: np.ndarray) -> sp.csr_matrix:
        """B_sel @ diag(A_sel @ z), the n x n_P input map without dtau."""
        gains = self.src_scale * z[self.z_class]
        return sp.csr_matrix(
            (gains, (self.src_comp, np.arange(self.n_P))), shape=(self.n, self.n_P)
        )


def edge_count(mesh: CompartmentMesh) -> int:
    """Number of directed edges: two per symmetric coupling pair."""
    return len(mesh.adjacency)


def build_operators(mesh: CompartmentMesh, scheme: SharingScheme) -> GraphOperators:
    """Assemble J, Io, and the selector matrices for a mesh and scheme."""
    comps = mesh.compartments
    n = mesh.n_compartments
    m = edge_count(mesh)
    amb = mesh.ambient_index

    tails = np.empty(m, dtype=np.int64)
    heads = np.empty(m, dtype=np.int64)
    weights = np.empty(m, dtype=np.float64)
    k_class = np.empty(m, dtype=np.int64)
    # mesh.adjacency is sorted by (tail, head), which fixes edge order.
    for e, (i, j, w) in enumerate(mesh.adjacency):
        tails[e] = i
        heads[e] = j
        weights[e] = w
        k_class[e] = scheme.edge_class(comps[i], comps[j])
    if np.any(k_class < 0) or np.any(k_class >= scheme.n_k):
        raise ConfigurationError("edge class index out of range")

    # Reversed edges must share the class (symmetric classifier contract).
    by_pair = {(t, h): c for t, h, c in zip(tails, heads, k_class)}
    for (t, h), c in by_pair.items():
        if by_pair[(h, t)] != c:
            raise ConfigurationError(
                f"edge classifier is asymmetric on pair ({t}, {h}): "
                f"{c} vs {by_pair[(h, t)]}"
            )

    sources = [c for c in comps if c.has_source]
    n_P = len(sources)
    src_comp = np.array([c.index for c in sources], dtype=np.int64)
    src_scale = np.ones(n_P)
    z_class = np.array([scheme.source_class(c) for c in sources], dtype=np.int64)
    if n_P and (np.any(z_class < 0) or np.any(z_class >= scheme.n_z)):
        raise ConfigurationError("source class index out of range")

    edges = np.arange(m)
    J = sp.csr_matrix(
        (
            np.concatenate([np.ones(m), -np.ones(m)]),
            (np.concatenate([tails, heads]), np.concatenate([edges, edges])),
        ),
        shape=(n, m),
    )
    Io = sp.csr_matrix((-np.ones(m), (heads, edges)), shape=(n, m))
    active = heads != amb
    Io_dyn = sp.csr_matrix(
        (-np.ones(active.sum()), (heads[active], edges[active])), shape=(n, m)
    )
    C_sel = sp.csr_matrix((weights, (edges, k_class)), shape=(m, scheme.n_k))
    B_sel = sp.csr_matrix(
        (src_scale, (src_comp, np.arange(n_P))), shape=(n, n_P)
    )
    A_sel = sp.csr_matrix(
        (np.ones(n_P), (np.arange(n_P), z_class)), shape=(n_P, scheme.n_z)
    )

    coupling = []
    for a in range(scheme.n_k):
        sel = active & (k_class == a)
        h, t, w = heads[sel], tails[sel], weights[sel]
        S_a = sp.csr_matrix(
            (
                np.concatenate([w, -w]),
                (np.concatenate([h, h]), np.concatenate([h, t])),
            ),
            shape=(n, n),
        )
        coupling.append(S_a)

    return GraphOperators(
        n=n,
        m=m,
        n_k=scheme.n_k,
        n_z=scheme.n_z,
        n_P=n_P,
        ambient_index=amb,
        tails=tails,
        heads=heads,
        weights=weights,
        k_class=k_class,
        src_comp=src_comp,
        src_scale=src_scale,
        z_class=z_class,
        J=J,
        Io=Io,
        Io_dyn=Io_dyn,
        C_sel=C_sel,
        B_sel=B_sel,
        A_sel=A_sel,
        coupling_by_class=tuple(coupling),
        k_names=scheme.k_names,
        z_names=scheme.z_names,
    )
