"""Wasserstein-1 primal/dual solver and the saturated pair set.

The primal is solved exactly per instance class: a quantile sweep for
1D-embeddable metrics, the Jonker-Volgenant assignment solver when net
supplies are uniform and balanced in count, and the HiGHS simplex on the
bipartite transportation LP otherwise (with arc generation above a size
cutoff). An integer successive-shortest-paths engine is kept as an
independent oracle for small instances.

Whatever the engine, the dual potential is re-derived: seed values from
the engine are tightened by Bellman-Ford relaxation of the difference
constraints  phi(x) - phi(y) <= d(x,y)  plus saturation equalities on the
plan support, then extended to unmoved points by infimal convolution with
the distance cones. The result is 1-Lipschitz to machine precision and
saturates every support pair up to the recorded `support_residual`
(zero except on near-degenerate instances whose engine vertex is
marginally suboptimal), so strong duality holds with no solver tolerance
in the loop.
"""

from __future__ import annotations

import dataclasses
import heapq

import numpy as np
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog

from .errors import SolverFailure, TolTooSmall, UnbalancedMarginals
from .mmspace import MMSpace

MASS_SCALE = 10**14
COST_SCALE = 10**12
ARC_LIMIT = 300_000
DEFAULT_GAMMA_TOL_FACTOR = 1e-6


@dataclasses.dataclass
class W1Solution:
    """Optimal plan, certified Kantorovich potential, and residuals."""

    pairs: np.ndarray          # (k, 2) int indices, sources then targets
    masses: np.ndarray         # (k,) positive
    primal_value: float
    potential: np.ndarray      # phi, one value per point, min phi = 0
    lipschitz_residual: float
    duality_gap: float
    mu0: np.ndarray
    mu1: np.ndarray
    engine: str = "unknown"
    slack_floor: float = 0.0        # guaranteed saturation slack of non-support pairs
    support_residual: float = 0.0   # measured max saturation slack over plan pairs

    @property
    def dual_value(self) -> float:
        return self.primal_value - self.duality_gap

    def plan_triples(self):
        return [(int(i), int(j), float(m)) for (i, j), m in zip(self.pairs, self.masses)]

    def to_json(self) -> dict:
        return {
            "plan": self.plan_triples(),
            "potential": self.potential.tolist(),
            "primal_value": self.primal_value,
            "residuals": {
                "lipschitz": self.lipschitz_residual,
                "duality_gap": self.duality_gap,
            },
            "engine": self.engine,
        }


@dataclasses.dataclass
class GammaSet:
    """Pairs moved with maximal slope: phi(x) - phi(y) >= d(x,y) - tol."""

    mask: np.ndarray           # (n, n) bool, diagonal included
    tol: float

    def contains(self, i: int, j: int) -> bool:
        return bool(self.mask[i, j])

    def pairs(self, include_diagonal: bool = False) -> np.ndarray:
        m = self.mask if include_diagonal else self.mask & ~np.eye(len(self.mask), dtype=bool)
        return np.argwhere(m)

    @property
    def count(self) -> int:
        return int(self.mask.sum())


def quantize_masses(masses: np.ndarray, scale: int = MASS_SCALE) -> np.ndarray:
    """Largest-remainder integer quantization preserving the total exactly."""
    masses = np.asarray(masses, dtype=float)
    target_total = int(round(masses.sum() * scale))
    raw = masses * scale
    base = np.floor(raw).astype(np.int64)
    short = target_total - int(base.sum())
    if short > 0:
        order = np.argsort(-(raw - base), kind="stable")
        base[order[:short]] += 1
    elif short < 0:
        order = np.argsort(raw - base, kind="stable")
        take = order[base[order] > 0][: -short]
        base[take] -= 1
    return base


def _quantile_pairs(units0, units1):
    """Monotone (quantile) integer coupling of two atom lists sorted by position."""
    out = []
    i = j = 0
    r0 = units0.copy()
    r1 = units1.copy()
    while i < len(r0) and j < len(r1):
        if r0[i] == 0:
            i += 1
            continue
        if r1[j] == 0:
            j += 1
            continue
        m = min(int(r0[i]), int(r1[j]))
        out.append((i, j, m))
        r0[i] -= m
        r1[j] -= m
    return out


def _engine_line(space: MMSpace, mu0, mu1):
    """Exact quantile coupling and CDF-sign potential on a 1D-embeddable metric."""
    t = space.line_coord
    order = np.argsort(t, kind="stable")
    u0 = quantize_masses(mu0[order])
    u1 = quantize_masses(mu1[order])
    couple = _quantile_pairs(u0, u1)
    pairs = np.array([[order[i], order[j]] for i, j, _ in couple], dtype=int).reshape(-1, 2)
    masses = np.array([m for _, _, m in couple], dtype=float) / MASS_SCALE

    # phi' = -1 where mass still to move rightward (F0 > F1), +1 leftward.
    c0 = np.cumsum(u0)
    c1 = np.cumsum(u1)
    flux = c0 - c1                       # exact integers on each gap
    gaps = np.diff(t[order])
    slope = np.sign(flux[:-1]).astype(float)
    phi_sorted = np.concatenate([[0.0], np.cumsum(-slope * gaps)])
    phi = np.empty_like(phi_sorted)
    phi[order] = phi_sorted
    return pairs, masses, phi, "line"


def _engine_assignment(D_sub, a, b):
    rows, cols = linear_sum_assignment(D_sub)
    masses = a[rows]
    return np.stack([rows, cols], axis=1), masses, None, "assignment"


def _sparse_eq(S, T, arc_src, arc_dst):
    k = len(arc_src)
    rows = np.concatenate([arc_src, S + arc_dst])
    cols = np.concatenate([np.arange(k), np.arange(k)])
    return sparse.coo_matrix((np.ones(2 * k), (rows, cols)), shape=(S + T, k)).tocsc()


def _engine_highs_full(D_sub, a, b):
    S, T = D_sub.shape
    arc_src = np.repeat(np.arange(S), T)
    arc_dst = np.tile(np.arange(T), S)
    res = linprog(D_sub.ravel(), A_eq=_sparse_eq(S, T, arc_src, arc_dst),
                  b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
    if res.status != 0:
        raise SolverFailure(f"HiGHS failed: {res.message}")
    flow = res.x
    keep = flow > 1e-12
    pairs = np.stack([arc_src[keep], arc_dst[keep]], axis=1)
    u = res.eqlin.marginals[:S]
    v = res.eqlin.marginals[S:]
    return pairs, flow[keep], np.concatenate([u, -v]), "highs"


def _engine_highs_generated(D_sub, a, b, max_rounds=60):
    """Arc generation: restricted transportation LPs plus reduced-cost pricing."""
    S, T = D_sub.shape
    k_nn = 8
    cand = set()
    nn_sink = np.argpartition(D_sub, min(k_nn, T - 1), axis=1)[:, :k_nn]
    for i in range(S):
        for j in nn_sink[i]:
            cand.add((i, int(j)))
    nn_src = np.argpartition(D_sub, min(k_nn, S - 1), axis=0)[:k_nn, :]
    for j in range(T):
        for i in nn_src[:, j]:
            cand.add((int(i), j))
    # greedy staircase arcs guarantee a feasible restricted problem
    i = j = 0
    ra, rb = a.copy(), b.copy()
    while i < S and j < T:
        cand.add((i, j))
        m = min(ra[i], rb[j])
        ra[i] -= m
        rb[j] -= m
        if ra[i] <= rb[j]:
            i += 1
        else:
            j += 1
    scale = max(D_sub.max(), 1.0)
    for _ in range(max_rounds):
        arcs = np.array(sorted(cand), dtype=int)
        res = linprog(D_sub[arcs[:, 0], arcs[:, 1]],
                      A_eq=_sparse_eq(S, T, arcs[:, 0], arcs[:, 1]),
                      b_eq=np.concatenate([a, b]), bounds=(0, None), method="highs")
        if res.status != 0:
            raise SolverFailure(f"HiGHS failed on restricted LP: {res.message}")
        u = res.eqlin.marginals[:S]
        v = res.eqlin.marginals[S:]
        reduced = D_sub - u[:, None] - v[None, :]
        viol = np.argwhere(reduced < -1e-11 * scale)
        if len(viol) == 0:
            keep = res.x > 1e-12
            return (arcs[keep], res.x[keep], np.concatenate([u, -v]), "highs-colgen")
        order = np.argsort(reduced[viol[:, 0], viol[:, 1]])
        for i, j in viol[order[: 4 * (S + T)]]:
            cand.add((int(i), int(j)))
    raise SolverFailure("arc generation did not converge")


def _engine_ssp(D_sub, a, b):
    """Integer successive shortest paths with node potentials (oracle grade).

    Costs are quantized to 64-bit integers at COST_SCALE; supplies at
    MASS_SCALE. Exact in integer arithmetic; intended for small instances.
    """
    S, T = D_sub.shape
    cost = np.round(D_sub * COST_SCALE).astype(np.int64)
    ua = quantize_masses(a)
    ub = quantize_masses(b)
    if ua.sum() != ub.sum():
        raise SolverFailure("quantized supplies do not balance")
    m = S + T
    pot = [0] * m
    supply = [int(x) for x in ua]
    demand = [int(x) for x in ub]
    flow: dict[tuple[int, int], int] = {}
    remaining = sum(supply)
    INF = float("inf")
    while remaining > 0:
        dist = [INF] * m
        prev = [-1] * m
        heap = []
        for i in range(S):
            if supply[i] > 0:
                dist[i] = 0
                heapq.heappush(heap, (0, i))
        while heap:
            d, x = heapq.heappop(heap)
            if d > dist[x]:
                continue
            if x < S:
                for j in range(T):
                    rc = cost[x, j] + pot[x] - pot[S + j]
                    nd = d + rc
                    if nd < dist[S + j]:
                        dist[S + j] = nd
                        prev[S + j] = x
                        heapq.heappush(heap, (nd, S + j))
            else:
                j = x - S
                for (i, jj), f in flow.items():
                    if jj == j and f > 0:
                        rc = -cost[i, j] + pot[x] - pot[i]
                        nd = d + rc
                        if nd < dist[i]:
                            dist[i] = nd
                            prev[i] = x
                            heapq.heappush(heap, (nd, i))
        best, bd = -1, INF
        for j in range(T):
            if demand[j] > 0 and dist[S + j] < bd:
                bd = dist[S + j]
                best = S + j
        if best < 0:
            raise SolverFailure("SSP: no augmenting path (infeasible input)")
        path = []
        x = best
        while prev[x] != -1:
            path.append((prev[x], x))
            x = prev[x]
        src = x
        amount = min(supply[src], demand[best - S])
        for y, z in path:
            if y < S:
                pass
            else:
                amount = min(amount, flow[(z, y - S)])
        for y, z in path:
            if y < S:
                flow[(y, z - S)] = flow.get((y, z - S), 0) + amount
            else:
                flow[(z, y - S)] -= amount
        supply[src] -= amount
        demand[best - S] -= amount
        remaining -= amount
        for x in range(m):
            if dist[x] < INF:
                pot[x] += min(dist[x], bd)
            else:
                pot[x] += bd
    pairs, masses = [], []
    for (i, j), f in flow.items():
        if f > 0:
            pairs.append((i, j))
            masses.append(f / MASS_SCALE)
    pairs = np.array(pairs, dtype=int).reshape(-1, 2)
    seed = np.array([-pot[x] / COST_SCALE for x in range(m)])
    return pairs, np.array(masses), seed, "ssp"


def _bellman_max(W, seed, max_passes, atol):
    """Pointwise-maximal solution of c_i - c_j <= W[j, i] below `seed` by
    parallel relaxation; (None, passes) when improvements above `atol`
    persist past the cap (negative cycle, or cap too small). The absolute
    stop tolerance absorbs exact-zero cycles that float rounding turns
    into 1e-16-rate descent."""
    c = seed.copy()
    for k in range(max_passes):
        c2 = np.minimum(c, (c[:, None] + W).min(axis=0))
        if (c - c2).max() <= atol:
            return c2, k + 1
        c = c2
    return None, max_passes


SLACK_LADDER = (1e-6, 1e-7, 1e-8, 1e-9, 3e-10)


def _tighten_potential(D, moved, pairs_local, seed):
    """Exact dual values on the moved points via constraint relaxation.

    Difference constraints: c_p - c_q <= d(p,q) for all moved p,q, with
    equality enforced on support pairs. Optimality of the plan rules out
    negative cycles, so relaxation reaches a feasible fixed point in at
    most m passes.

    The raw maximal solution rides a spanning tree of accidentally tight
    constraints (every Bellman fixed point has one active constraint per
    node), which downstream Gamma extraction would mistake for transport
    pairs. A second run therefore deflates all non-support constraints by
    a margin: support saturation stays (near-)exact while non-forced
    pairs keep slack at least the margin. Feasibility of the deflated
    system needs the margin below the instance's smallest mean
    co-optimality gap, so a descending ladder is tried and the achieved
    margin is returned (0.0 when every deflation fails; the undeflated
    solution is then used).

    When the engine's plan is marginally suboptimal (near-degenerate
    exchange ties below its pivot tolerance), exact support equalities
    are themselves a negative cycle; the equality constraints are then
    relaxed along their own tiny ladder, trading up to `eq` saturation
    slack on support pairs for feasibility. Returns (values, margin, eq).
    """
    m = len(moved)
    if m == 0:
        return np.zeros(0), 0.0, 0.0
    seed = seed if seed is not None else np.zeros(m)
    scale = 1.0 + float(D.max())
    Dm = D[np.ix_(moved, moved)]
    exempt = np.zeros((m, m), dtype=bool)
    np.fill_diagonal(exempt, True)
    if len(pairs_local):
        x, y = pairs_local[:, 0], pairs_local[:, 1]
        exempt[x, y] = True
        exempt[y, x] = True

    atol = 1e-13 * scale

    def attempt(t, eq, cap):
        W = np.where(exempt, Dm, Dm - t)
        if len(pairs_local):
            np.minimum.at(W, (pairs_local[:, 0], pairs_local[:, 1]),
                          -Dm[pairs_local[:, 0], pairs_local[:, 1]] + eq)
        return _bellman_max(W, seed, cap, atol)

    c0 = None
    for eq_rel in (0.0, 1e-12, 1e-11, 1e-10):
        eq = eq_rel * scale
        c0, passes0 = attempt(0.0, eq, m + 2)
        if c0 is not None:
            break
    if c0 is None:
        raise SolverFailure("potential tightening did not converge (negative cycle?)")
    cap = min(m + 2, 2 * passes0 + 64)
    ladder = SLACK_LADDER if m <= 1200 else SLACK_LADDER[2:]
    for rel in ladder:
        if rel * scale <= 2 * eq:
            break
        c, _ = attempt(rel * scale, eq, cap)
        if c is not None:
            return c, rel * scale, eq
    return c0, 0.0, eq


def _check_probability(mu, n, name):
    mu = np.asarray(mu, dtype=float)
    if mu.shape != (n,):
        raise UnbalancedMarginals(f"{name} has shape {mu.shape}, expected ({n},)")
    if np.any(mu < 0) or not np.all(np.isfinite(mu)):
        raise UnbalancedMarginals(f"{name} must be finite and nonnegative")
    if abs(mu.sum() - 1.0) > 1e-8:
        raise UnbalancedMarginals(f"{name} sums to {mu.sum()}, expected 1")
    return mu


def solve_w1(space: MMSpace, mu0, mu1, engine: str = "auto") -> W1Solution:
    """Exact W1 plan and certified dual potential on a finite space."""
    if engine not in ("auto", "line", "ssp"):
        raise ValueError(f"unknown engine {engine!r}; use 'auto', 'line' or 'ssp'")
    n = space.n
    mu0 = _check_probability(mu0, n, "mu0")
    mu1 = _check_probability(mu1, n, "mu1")
    if abs(mu0.sum() - mu1.sum()) > 1e-10:
        raise UnbalancedMarginals("mu0 and mu1 carry different total mass")
    D = space.D

    if engine == "auto" and space.line_coord is not None:
        engine = "line"

    slack_floor = 0.0
    if engine == "line":
        if space.line_coord is None:
            raise SolverFailure("line engine requires a 1D-embeddable metric")
        pairs, masses, phi, tag = _engine_line(space, mu0, mu1)
        keep = masses > 0
        pairs, masses = pairs[keep], masses[keep]
    else:
        b = mu0 - mu1
        src = np.where(b > 0)[0]
        snk = np.where(b < 0)[0]
        diag_idx = np.where(np.minimum(mu0, mu1) > 0)[0]
        diag_pairs = np.stack([diag_idx, diag_idx], axis=1)
        diag_mass = np.minimum(mu0, mu1)[diag_idx]
        if len(src) == 0:
            pairs, masses, phi, tag = diag_pairs, diag_mass, np.zeros(n), "identity"
        else:
            a = b[src]
            d = -b[snk]
            D_sub = np.ascontiguousarray(D[np.ix_(src, snk)])
            S, T = len(src), len(snk)
            if engine == "ssp":
                loc_pairs, loc_mass, seed, tag = _engine_ssp(D_sub, a, d)
            elif S == T and np.ptp(a) == 0 and np.ptp(d) == 0 and abs(a[0] - d[0]) < 1e-15:
                loc_pairs, loc_mass, seed, tag = _engine_assignment(D_sub, a, d)
            elif S * T <= ARC_LIMIT:
                loc_pairs, loc_mass, seed, tag = _engine_highs_full(D_sub, a, d)
            else:
                loc_pairs, loc_mass, seed, tag = _engine_highs_generated(D_sub, a, d)
            moved = np.concatenate([src, snk])
            support_local = np.stack([loc_pairs[:, 0], S + loc_pairs[:, 1]], axis=1)
            c, slack_floor, _eq = _tighten_potential(D, moved, support_local, seed)
            if len(moved):
                hi = (c[None, :] + D[:, moved]).min(axis=1)
                lo = (c[None, :] - D[:, moved]).max(axis=1)
                phi = 0.5 * (hi + lo)
            else:
                phi = np.zeros(n)
            flow_pairs = np.stack([src[loc_pairs[:, 0]], snk[loc_pairs[:, 1]]], axis=1)
            pairs = np.concatenate([diag_pairs, flow_pairs], axis=0)
            masses = np.concatenate([diag_mass, loc_mass])

    phi = phi - phi.min()
    primal = float((masses * D[pairs[:, 0], pairs[:, 1]]).sum()) if len(masses) else 0.0
    dual = float(phi @ (mu0 - mu1))
    gap = primal - dual
    scale = 1.0 + abs(primal)
    if gap < -1e-10 * scale:
        raise SolverFailure(f"negative duality gap {gap}")
    gap = max(gap, 0.0)
    lip = float((np.abs(phi[:, None] - phi[None, :]) - D).max())
    lip = max(lip, 0.0)
    if lip > 1e-9 * max(space.max_distance, 1.0):
        raise SolverFailure(f"potential is not 1-Lipschitz: residual {lip}")
    if gap > 1e-9 * scale:
        raise SolverFailure(f"duality gap {gap} beyond certification tolerance")
    moving = (np.asarray(masses) > 0) & (pairs[:, 0] != pairs[:, 1])
    if moving.any():
        i, j = pairs[moving, 0], pairs[moving, 1]
        support_residual = max(float((D[i, j] - (phi[i] - phi[j])).max()), 0.0)
    else:
        support_residual = 0.0
    sol = W1Solution(pairs, np.asarray(masses, dtype=float), primal, phi, lip, gap,
                     mu0, mu1, engine=tag, slack_floor=slack_floor,
                     support_residual=support_residual)
    _check_marginals(sol, n)
    return sol


def _check_marginals(sol: W1Solution, n: int, tol: float = 1e-10):
    m0 = np.zeros(n)
    m1 = np.zeros(n)
    np.add.at(m0, sol.pairs[:, 0], sol.masses)
    np.add.at(m1, sol.pairs[:, 1], sol.masses)
    err = max(np.abs(m0 - sol.mu0).max(), np.abs(m1 - sol.mu1).max())
    if err > tol:
        raise SolverFailure(f"plan marginal error {err} exceeds {tol}")


def from_certificate(space: MMSpace, mu0, mu1, pairs, masses, potential) -> W1Solution:
    """Assemble a W1Solution from an explicitly given plan and potential.

    Validates marginals, the Lipschitz bound, and strong duality; raises
    SolverFailure if the certificate does not close. Useful when a
    construction carries a known optimal pair (plan, phi).
    """
    n = space.n
    mu0 = _check_probability(mu0, n, "mu0")
    mu1 = _check_probability(mu1, n, "mu1")
    pairs = np.asarray(pairs, dtype=int).reshape(-1, 2)
    masses = np.asarray(masses, dtype=float)
    phi = np.asarray(potential, dtype=float)
    phi = phi - phi.min()
    D = space.D
    primal = float((masses * D[pairs[:, 0], pairs[:, 1]]).sum()) if len(masses) else 0.0
    dual = float(phi @ (mu0 - mu1))
    gap = primal - dual
    scale = 1.0 + abs(primal)
    if not (-1e-10 * scale <= gap <= 1e-9 * scale):
        raise SolverFailure(f"certificate does not close: gap {gap}")
    lip = max(float((np.abs(phi[:, None] - phi[None, :]) - D).max()), 0.0)
    if lip > 1e-9 * max(space.max_distance, 1.0):
        raise SolverFailure(f"certificate potential not 1-Lipschitz: {lip}")
    sol = W1Solution(pairs, masses, primal, phi, lip, max(gap, 0.0), mu0, mu1,
                     engine="certificate")
    _check_marginals(sol, n)
    return sol


def gamma_set(space: MMSpace, solution: W1Solution, tol: float | None = None) -> GammaSet:
    """All pairs with phi(x) - phi(y) >= d(x,y) - tol (diagonal included)."""
    if tol is None:
        tol = DEFAULT_GAMMA_TOL_FACTOR * max(space.max_distance, 1.0)
    if solution.lipschitz_residual > tol:
        raise TolTooSmall(
            f"lipschitz residual {solution.lipschitz_residual} above tol {tol}")
    phi = solution.potential
    mask = (phi[:, None] - phi[None, :]) >= (space.D - tol)
    moving = solution.masses > 0
    i, j = solution.pairs[moving, 0], solution.pairs[moving, 1]
    offdiag = i != j
    if not mask[i[offdiag], j[offdiag]].all():
        raise TolTooSmall(
            "positive-mass plan pair excluded from Gamma at this tol "
            f"(solution.support_residual = {solution.support_residual:g})")
    return GammaSet(mask, tol)


def check_cyclic_monotonicity(space: MMSpace, gamma: GammaSet, k: int = 4,
                              trials: int = 10_000, rng=None) -> dict:
    """Worst violation of the cycle inequality over random k-subsets of Gamma."""
    if k < 2:
        raise ValueError("k must be >= 2")
    rng = rng or np.random.default_rng(0)
    pairs = gamma.pairs()
    if len(pairs) == 0:
        return {"worst_violation": 0.0, "trials": 0, "k": k, "vacuous": True}
    idx = rng.integers(0, len(pairs), size=(trials, k))
    x = pairs[idx, 0]
    y = pairs[idx, 1]
    matched = space.D[x, y].sum(axis=1)
    shifted = space.D[x, np.roll(y, -1, axis=1)].sum(axis=1)
    worst = float((matched - shifted).max())
    return {"worst_violation": worst, "trials": trials, "k": k, "vacuous": False}


def check_geodesic_stability(space: MMSpace, gamma: GammaSet, samples: int = 200,
                             rng=None, max_subpairs: int = 20) -> dict:
    """Fraction of chain sub-pairs of sampled Gamma pairs that leave Gamma.

    Chains come from the geodesic oracle; for sphere samples the snapped
    approximate chain is used (mesh-scale deviation, see module docs).
    """
    rng = rng or np.random.default_rng(0)
    pairs = gamma.pairs()
    if len(pairs) == 0:
        return {"failure_fraction": 0.0, "tested": 0, "vacuous": True}
    take = rng.integers(0, len(pairs), size=min(samples, len(pairs)))
    tested = failed = 0
    for x, y in pairs[take]:
        chain = (space.snapped_chain(int(x), int(y)) if space.kind == "sphere2"
                 else space.chain(int(x), int(y)))
        if len(chain) <= 2:
            continue
        c = np.array(chain)
        iu = rng.integers(0, len(c) - 1, size=max_subpairs)
        iv = rng.integers(0, len(c) - 1, size=max_subpairs)
        lo = np.minimum(iu, iv)
        hi = np.maximum(iu, iv) + 1
        tested += len(lo)
        failed += int((~gamma.mask[c[lo], c[hi]]).sum())
    frac = failed / tested if tested else 0.0
    return {"failure_fraction": frac, "tested": tested, "vacuous": tested == 0}
