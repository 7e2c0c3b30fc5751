"""Transport-set structure: end points, branching sets, ray partition.

Everything is driven by the saturated pair set Gamma of a solved W1
instance. Pairs at zero distance count as diagonal ("x = y"). The
branching sets are computed by their definition: x is forward-branching
when two of its Gamma-successors are not related by R = Gamma u Gamma^-1.
Components of R restricted to the non-branching transport set T are
accepted as rays only when they are chains totally ordered by phi;
anything else is downgraded to orphan status and reported, never split
heuristically.
"""

from __future__ import annotations

import dataclasses

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .mmspace import MMSpace
from .w1solve import GammaSet, W1Solution


@dataclasses.dataclass
class TransportStructure:
    gamma: GammaSet
    R: np.ndarray                  # symmetric closure, bool (n, n)
    initial_points: np.ndarray     # indices with no strict Gamma-predecessor
    final_points: np.ndarray       # indices with no strict Gamma-successor
    transport_set_e: np.ndarray    # T_e
    branching_fwd: np.ndarray      # A+
    branching_bwd: np.ndarray      # A-
    transport_set: np.ndarray      # T = T_e minus (A+ u A-)

    def branching_mass(self, weights: np.ndarray) -> dict:
        te = float(weights[self.transport_set_e].sum())
        br = float(weights[np.union1d(self.branching_fwd, self.branching_bwd)].sum())
        return {
            "mass_Te": te,
            "mass_branching": br,
            "fraction": br / te if te > 0 else 0.0,
        }


@dataclasses.dataclass
class Ray:
    points: np.ndarray     # ordered by decreasing phi
    params: np.ndarray     # signed arclength, increasing along transport
    representative: int    # point index with param 0
    mass: float            # reference m-mass of the ray


@dataclasses.dataclass
class RayDecomposition:
    rays: list[Ray]
    orphan_points: np.ndarray
    diagnostics: list[str]

    def ray_of_point(self, n: int) -> np.ndarray:
        """Map point index -> ray index, -1 off rays."""
        out = np.full(n, -1, dtype=int)
        for k, ray in enumerate(self.rays):
            out[ray.points] = k
        return out

    def to_json(self) -> dict:
        return {
            "rays": [
                {
                    "id": k,
                    "points": ray.points.tolist(),
                    "params": ray.params.tolist(),
                    "representative": int(ray.representative),
                    "mass": ray.mass,
                }
                for k, ray in enumerate(self.rays)
            ],
            "orphans": self.orphan_points.tolist(),
            "diagnostics": self.diagnostics,
        }


def _branch_counts(G: np.ndarray, R: np.ndarray) -> np.ndarray:
    """For each x, the number of (z, w) in Gamma(x)^2 with (z, w) not in R."""
    B = (~R).astype(np.float32)
    Gf = G.astype(np.float32)
    return np.einsum("ij,ij->i", Gf @ B, Gf)


def build_transport_structure(space: MMSpace, gamma: GammaSet) -> TransportStructure:
    """End points, T_e, branching sets and T, straight from the definitions."""
    D = space.D
    nontrivial = gamma.mask & (D > 0)
    has_succ = nontrivial.any(axis=1)
    has_pred = nontrivial.any(axis=0)
    te_mask = has_succ | has_pred
    R = gamma.mask | gamma.mask.T

    a_set = np.where(~has_pred)[0]
    b_set = np.where(~has_succ)[0]

    fwd = _branch_counts(gamma.mask, R)
    bwd = _branch_counts(gamma.mask.T, R)
    a_plus = np.where(te_mask & (fwd > 0.5))[0]
    a_minus = np.where(te_mask & (bwd > 0.5))[0]
    t_mask = te_mask.copy()
    t_mask[a_plus] = False
    t_mask[a_minus] = False
    return TransportStructure(
        gamma=gamma,
        R=R,
        initial_points=a_set,
        final_points=b_set,
        transport_set_e=np.where(te_mask)[0],
        branching_fwd=a_plus,
        branching_bwd=a_minus,
        transport_set=np.where(t_mask)[0],
    )


def _select_representative(space: MMSpace, points: np.ndarray, phi: np.ndarray) -> tuple[int, float]:
    """Representative of one ray: the point whose phi is closest to the
    median phi over the ray (ties to the lowest index); weight = m-mass."""
    vals = phi[points]
    med = np.median(vals)
    rep = points[int(np.argmin(np.abs(vals - med)))]
    return int(rep), float(space.weights[points].sum())


def select_quotient(space: MMSpace, decomposition: "RayDecomposition",
                    solution: W1Solution) -> list[tuple[int, float]]:
    """Median-phi representative and m-mass quotient weight for each ray."""
    return [_select_representative(space, ray.points, solution.potential)
            for ray in decomposition.rays]


def partition_rays(space: MMSpace, structure: TransportStructure,
                   solution: W1Solution) -> RayDecomposition:
    """Rays = chain components of R restricted to T, with arclength params."""
    T = structure.transport_set
    n = space.n
    phi = solution.potential
    D = space.D
    tol = structure.gamma.tol
    diagnostics: list[str] = []
    rays: list[Ray] = []
    orphans: list[int] = []
    if len(T) == 0:
        return RayDecomposition(rays, np.array([], dtype=int), diagnostics)

    sub = structure.R[np.ix_(T, T)] & (D[np.ix_(T, T)] > 0)
    ncomp, labels = connected_components(sparse.csr_matrix(sub), directed=False)
    for comp in range(ncomp):
        pts = T[labels == comp]
        if len(pts) < 2:
            orphans.extend(int(p) for p in pts)
            diagnostics.append(f"singleton component at point {int(pts[0])}")
            continue
        order = np.lexsort((pts, -phi[pts]))
        chain = pts[order]
        steps = D[chain[:-1], chain[1:]]
        in_gamma = structure.gamma.mask[chain[:-1], chain[1:]]
        if not in_gamma.all() or np.any(steps <= 0):
            orphans.extend(int(p) for p in chain)
            diagnostics.append(
                f"NonChainComponent: component of size {len(pts)} not totally "
                f"ordered by phi within tol={tol:g}; orphaned")
            continue
        s = np.concatenate([[0.0], np.cumsum(steps)])
        rep, mass = _select_representative(space, chain, phi)
        rep_pos = int(np.where(chain == rep)[0][0])
        rays.append(Ray(points=chain, params=s - s[rep_pos],
                        representative=rep, mass=mass))
    return RayDecomposition(rays, np.array(sorted(orphans), dtype=int), diagnostics)
