"""Matrix-valued edge weights and the stacked constraint matrix built from them.

Each sensing edge carries a d x d weight spanned by the identity, the
rank-one projector onto the rotation axis, and the skew map of that axis.
Because every basis element commutes with rotations about the axis, the
kernel of the assembled block matrix is invariant under translation, uniform
scaling, and axis rotations of the whole formation. That invariance is what
lets two moving leaders steer every follower through a maneuver.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from itertools import combinations
from typing import NamedTuple

import numpy as np
import scipy.linalg

from formlab.errors import FormationError, FormlabError, LocalizabilityError
from formlab.geometry import RotationAxis, axis_projector, skew
from formlab.graph import Formation

FIXED_PROBE = np.array([1.0, 1.0, 1.0, -1.0, -1.0, -1.0]) / np.sqrt(6.0)

RCOND_FLOOR = 1e-12
MAX_RETRIES = 32

_ZERO_EDGE_TOL = 1e-12
_PROBE_DEGENERATE_TOL = 1e-9
_SIGN_SCAN_TOL = 1e-12


class WeightCoeffs(NamedTuple):
    """Coordinates of one edge weight in the {identity, projector, skew} basis."""

    a: float
    b: float
    c: float


class _DegenerateProbe(FormlabError):
    """Internal: the probe landed (numerically) orthogonal to the null space."""


def realize_weight(coeffs: WeightCoeffs, axis: RotationAxis) -> np.ndarray:
    """Expand basis coordinates into the dense 3x3 weight matrix."""
    w = coeffs.a * np.eye(3) + coeffs.b * axis_projector(axis) + coeffs.c * skew(axis)
    return w


def _realize_block(coeffs: WeightCoeffs, axis: RotationAxis, dim: int) -> np.ndarray:
    """Dense d x d weight block; planar blocks are the xy sub-matrix."""
    return realize_weight(coeffs, axis)[:dim, :dim]


def _pair_system(u: np.ndarray, v: np.ndarray, axis: RotationAxis) -> np.ndarray:
    """3x6 linear system whose null vectors are valid coefficient pairs.

    Columns are the actions of the three basis matrices on u, then on v, so
    a null vector (a1, b1, c1, a2, b2, c2) realizes weights w1, w2 with
    w1 @ u + w2 @ v == 0.
    """
    proj = axis_projector(axis)
    kmat = skew(axis)
    return np.column_stack([u, proj @ u, kmat @ u, v, proj @ v, kmat @ v])


def _null_space_rows(mat: np.ndarray) -> np.ndarray:
    """Orthonormal rows spanning the null space of a short fat matrix."""
    _, svals, vh = np.linalg.svd(mat)
    if svals.size == 0:
        return vh
    tol = max(mat.shape) * np.finfo(float).eps * svals[0]
    rank = int(np.sum(svals > tol))
    return vh[rank:]


def _select_from_null(null_rows: np.ndarray, probe: np.ndarray) -> np.ndarray:
    """Project the probe onto the null space, normalize, and fix the sign.

    The sign rule makes the choice reproducible: the first coefficient whose
    magnitude exceeds a small floor (scanning a1, b1, c1, a2, b2, c2) is
    made positive.
    """
    coeffs = null_rows.T @ (null_rows @ probe)
    norm = float(np.linalg.norm(coeffs))
    if norm < _PROBE_DEGENERATE_TOL:
        raise _DegenerateProbe("probe is orthogonal to the pair null space")
    coeffs = coeffs / norm
    for x in coeffs:
        if abs(x) > _SIGN_SCAN_TOL:
            if x < 0.0:
                coeffs = -coeffs
            break
    return coeffs


def solve_pair_weights(
    u,
    v,
    axis: RotationAxis,
    probe: np.ndarray | None = None,
) -> tuple[WeightCoeffs, WeightCoeffs]:
    """Weights (w1, w2) with w1 @ u + w2 @ v == 0 for offsets u, v in 3-D.

    The constraint is three equations in six basis coefficients, so the null
    space has dimension at least three. A fixed probe vector picks one null
    direction deterministically; callers can supply their own probe when the
    default projects to zero.
    """
    u = np.asarray(u, dtype=float).reshape(3)
    v = np.asarray(v, dtype=float).reshape(3)
    if np.linalg.norm(u) < _ZERO_EDGE_TOL and np.linalg.norm(v) < _ZERO_EDGE_TOL:
        raise FormationError("both pair offsets are zero; weights are unconstrained")
    if probe is None:
        probe = FIXED_PROBE
    coeffs = _select_from_null(_null_space_rows(_pair_system(u, v, axis)), probe)
    return WeightCoeffs(*coeffs[:3]), WeightCoeffs(*coeffs[3:])


def solve_pair_weights_2d(u, v) -> tuple[WeightCoeffs, WeightCoeffs]:
    """Closed-form planar pair weights via complex arithmetic.

    In the plane, a weight a + c*skew acts on (x, y) exactly like the complex
    number a + c*i acts on x + y*i, so (w1, w2) = (v, -u) as complex numbers
    satisfies w1 * u + w2 * v == 0 identically. The projector coefficient is
    set to -a so the unused z channel is zeroed out entirely.
    """
    u = np.asarray(u, dtype=float).reshape(3)
    v = np.asarray(v, dtype=float).reshape(3)
    if abs(u[2]) > _ZERO_EDGE_TOL or abs(v[2]) > _ZERO_EDGE_TOL:
        raise FormationError("planar pair offsets must have z == 0")
    if np.linalg.norm(u) < _ZERO_EDGE_TOL and np.linalg.norm(v) < _ZERO_EDGE_TOL:
        raise FormationError("both pair offsets are zero; weights are unconstrained")
    w1 = complex(v[0], v[1])
    w2 = complex(-u[0], -u[1])
    return (
        WeightCoeffs(w1.real, -w1.real, w1.imag),
        WeightCoeffs(w2.real, -w2.real, w2.imag),
    )


def _complex_pair(u_c: complex, v_c: complex, phase: complex = 1.0) -> np.ndarray:
    """Unit-normalized planar pair solution (v, -u), optionally phase-rotated."""
    pair = np.array([v_c, -u_c], dtype=complex) * phase
    return pair / np.linalg.norm(pair)


class _ProbeSource:
    """Per-pair probe directions: the fixed default, or seeded random retries."""

    def __init__(self, rng: np.random.Generator | None) -> None:
        self.rng = rng

    def probe6(self) -> np.ndarray:
        if self.rng is None:
            return FIXED_PROBE
        vec = self.rng.standard_normal(6)
        return vec / np.linalg.norm(vec)

    def phase(self) -> complex:
        if self.rng is None:
            return 1.0 + 0.0j
        phi = self.rng.uniform(0.0, 2.0 * np.pi)
        return complex(np.cos(phi), np.sin(phi))


def build_agent_weights(
    agent: int,
    formation: Formation,
    axis: RotationAxis,
    probes: _ProbeSource | None = None,
) -> list[WeightCoeffs]:
    """Weights for every sensing edge of one agent, one per neighbor.

    With two neighbors this is a single pair solve. With more, every
    neighbor pair contributes a unit-normalized pair solution, padded with
    zeros to the full neighbor list and summed; each summand kills the
    constraint on its own pair, so the sum kills the whole row constraint.
    """
    nbrs = formation.graph.neighbors[agent]
    if len(nbrs) < 2:
        raise FormationError(f"agent {agent} has {len(nbrs)} neighbors, needs at least 2")
    if probes is None:
        probes = _ProbeSource(None)
    pos = formation.positions
    offsets = [pos[j] - pos[agent] for j in nbrs]
    for j, off in zip(nbrs, offsets):
        if np.linalg.norm(off) < _ZERO_EDGE_TOL:
            raise FormationError(
                f"degenerate edge: agents {agent} and {j} share a nominal position"
            )
    acc = np.zeros((len(nbrs), 3))
    for ia, ib in combinations(range(len(nbrs)), 2):
        if formation.dimension == 2:
            ua, ub = offsets[ia], offsets[ib]
            pair = _complex_pair(
                complex(ua[0], ua[1]), complex(ub[0], ub[1]), probes.phase()
            )
            acc[ia] += [pair[0].real, -pair[0].real, pair[0].imag]
            acc[ib] += [pair[1].real, -pair[1].real, pair[1].imag]
        else:
            rows = _null_space_rows(_pair_system(offsets[ia], offsets[ib], axis))
            coeffs = _select_from_null(rows, probes.probe6())
            acc[ia] += coeffs[:3]
            acc[ib] += coeffs[3:]
    return [WeightCoeffs(*row) for row in acc]


@dataclass(frozen=True)
class AugmentedLaplacian:
    """Stacked (n*d) x (n*d) constraint matrix with per-edge provenance.

    Row blocks of constructed agents sum to zero (the diagonal block is
    minus the sum of that agent's edge weights), so any rigid translation
    of the configuration is in the kernel. The nominal configuration used
    for synthesis is in the kernel by construction.
    """

    matrix: np.ndarray
    axis: RotationAxis
    dimension: int
    n: int
    n_followers: int
    coeffs: dict = field(repr=False)
    rcond: float = 0.0
    retries: int = 0
    seed: int = 0

    def __post_init__(self):
        self.matrix.flags.writeable = False
        object.__setattr__(self, "_fro", float(np.linalg.norm(self.matrix)))

    @property
    def fro_norm(self) -> float:
        return self._fro

    def block(self, i: int, j: int) -> np.ndarray:
        d = self.dimension
        return self.matrix[d * i : d * (i + 1), d * j : d * (j + 1)]


def partition_blocks(agl: AugmentedLaplacian):
    """Views (W_ff, W_fl, W_lf, W_ll) split at the follower/leader boundary."""
    m = agl.n_followers * agl.dimension
    w = agl.matrix
    return w[:m, :m], w[:m, m:], w[m:, :m], w[m:, m:]


def _assemble_matrix(formation: Formation, axis, per_agent: dict) -> np.ndarray:
    d = formation.dimension
    n = formation.n
    w = np.zeros((n * d, n * d))
    for agent, weights in per_agent.items():
        diag = np.zeros((d, d))
        for j, coeffs in zip(formation.graph.neighbors[agent], weights):
            blk = _realize_block(coeffs, axis, d)
            w[d * agent : d * agent + d, d * j : d * j + d] = blk
            diag -= blk
        w[d * agent : d * agent + d, d * agent : d * agent + d] = diag
    return w


def _rcond(mat: np.ndarray) -> float:
    svals = np.linalg.svd(mat, compute_uv=False)
    if svals.size == 0 or svals[0] == 0.0:
        return 0.0
    return float(svals[-1] / svals[0])


def assemble(
    formation: Formation,
    axis: RotationAxis,
    seed: int = 0,
    max_retries: int = MAX_RETRIES,
) -> AugmentedLaplacian:
    """Synthesize all edge weights and assemble the stacked constraint matrix.

    Follower rows are always constructed; leader rows are constructed when a
    leader senses at least two agents and zeroed otherwise. The first attempt
    uses the fixed probe. If the follower-follower block comes out singular
    (reciprocal condition number at or below 1e-12), the null-space choice is
    resampled with seeded random probes, up to ``max_retries`` times, before
    failing loudly.

    Raises:
        FormationError: a constructed row is structurally impossible.
        LocalizabilityError: every attempt left the follower block singular.
    """
    if formation.dimension == 2 and not np.allclose(
        axis.vec, [0.0, 0.0, 1.0], rtol=0.0, atol=1e-12
    ):
        raise FormationError("planar formations require the +z rotation axis")
    # Followers always qualify (the graph guarantees degree >= 2); leader rows
    # are constructed only when the leader itself senses two or more agents.
    constructed = [a for a in range(formation.n) if len(formation.graph.neighbors[a]) >= 2]
    m = formation.n_followers * formation.dimension
    last_rcond = 0.0
    for attempt in range(max_retries + 1):
        rng = None if attempt == 0 else np.random.default_rng((seed, attempt))
        probes = _ProbeSource(rng)
        try:
            per_agent = {
                a: build_agent_weights(a, formation, axis, probes) for a in constructed
            }
        except _DegenerateProbe:
            continue
        matrix = _assemble_matrix(formation, axis, per_agent)
        last_rcond = _rcond(matrix[:m, :m])
        if last_rcond <= RCOND_FLOOR:
            continue
        config = formation.config
        residual = float(np.linalg.norm(matrix @ config))
        bound = 1e-9 * np.linalg.norm(matrix) * np.linalg.norm(config)
        if residual > bound:
            raise FormlabError(
                f"assembled matrix does not annihilate the nominal configuration "
                f"(residual {residual:.3e} > {bound:.3e}); this is a construction bug"
            )
        coeffs = {
            (a, j): w
            for a, weights in per_agent.items()
            for j, w in zip(formation.graph.neighbors[a], weights)
        }
        return AugmentedLaplacian(
            matrix=matrix,
            axis=axis,
            dimension=formation.dimension,
            n=formation.n,
            n_followers=formation.n_followers,
            coeffs=coeffs,
            rcond=last_rcond,
            retries=attempt,
            seed=seed,
        )
    raise LocalizabilityError(
        f"follower block stayed singular after {max_retries} resampled attempts "
        f"(last rcond {last_rcond:.3e}); the formation is not localizable "
        f"with this graph and axis"
    )


def insert_leading_follower(
    agl: AugmentedLaplacian,
    extended: Formation,
    seed: int = 0,
    max_retries: int = MAX_RETRIES,
) -> AugmentedLaplacian:
    """Grow the matrix by one follower whose rows lead the follower block.

    ``extended`` must hold the new agent at index 0 with every old agent
    shifted up by one and its neighbor lists otherwise unchanged. Only the
    new agent's row block is synthesized; the old matrix is embedded
    untouched, so every pre-existing constraint row (and therefore the old
    follower equilibrium) is preserved exactly. The extended follower block
    is then block-triangular, and its conditioning is re-checked with the
    same retry policy as ``assemble``.
    """
    d = agl.dimension
    if extended.dimension != d:
        raise FormationError("extended formation changes the working dimension")
    if extended.n != agl.n + 1 or extended.n_followers != agl.n_followers + 1:
        raise FormationError(
            "extended formation must add exactly one follower at index 0"
        )
    for old in range(1, extended.n):
        if 0 in extended.graph.neighbors[old]:
            raise FormationError(
                f"agent {old} senses the newcomer; joining must not touch "
                "existing constraint rows"
            )
    m_x = extended.n_followers * d
    nominal = extended.config
    scale = float(np.linalg.norm(agl.matrix)) * float(np.linalg.norm(nominal))
    last_rcond = 0.0
    for attempt in range(max_retries + 1):
        rng = None if attempt == 0 else np.random.default_rng((seed, attempt))
        try:
            new_weights = build_agent_weights(0, extended, agl.axis, _ProbeSource(rng))
        except _DegenerateProbe:
            continue
        matrix = np.zeros((extended.n * d, extended.n * d))
        matrix[d:, d:] = agl.matrix
        diag = np.zeros((d, d))
        for j, coeffs in zip(extended.graph.neighbors[0], new_weights):
            blk = _realize_block(coeffs, agl.axis, d)
            matrix[:d, d * j : d * (j + 1)] = blk
            diag -= blk
        matrix[:d, :d] = diag
        last_rcond = _rcond(matrix[:m_x, :m_x])
        if last_rcond <= RCOND_FLOOR:
            continue
        row_residual = float(np.linalg.norm(matrix[:d] @ nominal))
        if row_residual > 1e-10 * max(scale, 1.0):
            raise FormlabError(
                f"new constraint row does not annihilate the extended nominal "
                f"(residual {row_residual:.3e}); this is a construction bug"
            )
        coeffs_x = {(i + 1, j + 1): w for (i, j), w in agl.coeffs.items()}
        coeffs_x.update(
            {(0, j): w for j, w in zip(extended.graph.neighbors[0], new_weights)}
        )
        return AugmentedLaplacian(
            matrix=matrix,
            axis=agl.axis,
            dimension=d,
            n=extended.n,
            n_followers=extended.n_followers,
            coeffs=coeffs_x,
            rcond=last_rcond,
            retries=attempt,
            seed=seed,
        )
    raise LocalizabilityError(
        f"extended follower block stayed singular after {max_retries} attempts "
        f"(last rcond {last_rcond:.3e}); the join is rejected"
    )


def solve_followers(w_ff: np.ndarray, w_fl: np.ndarray, leader_config: np.ndarray) -> np.ndarray:
    """Unique follower configuration pinned by the leaders: solve W_ff x = -W_fl p_l."""
    leader_config = np.asarray(leader_config, dtype=float).reshape(-1)
    rhs = -(w_fl @ leader_config)
    try:
        with np.errstate(divide="ignore", invalid="ignore"):
            sol = scipy.linalg.solve(w_ff, rhs)
    except scipy.linalg.LinAlgError as exc:
        raise LocalizabilityError(f"follower block is singular: {exc}") from exc
    if not np.all(np.isfinite(sol)):
        raise LocalizabilityError("follower block is singular: solve produced non-finite values")
    residual = np.linalg.norm(w_ff @ sol + w_fl @ leader_config)
    scale = np.linalg.norm(w_ff) * max(np.linalg.norm(sol), np.linalg.norm(leader_config), 1.0)
    if residual > 1e-9 * scale:
        raise LocalizabilityError(
            f"follower solve residual {residual:.3e} exceeds 1e-9 * {scale:.3e}; "
            "the follower block is too ill-conditioned to trust"
        )
    return sol


def similarity_residual(agl: AugmentedLaplacian, config: np.ndarray) -> float:
    """Scale-free measure of how far a configuration is from the kernel."""
    config = np.asarray(config, dtype=float).reshape(-1)
    num = float(np.linalg.norm(agl.matrix @ config))
    den = max(1.0, agl.fro_norm * float(np.linalg.norm(config)))
    return num / den


def complex_oracle_follower_solve(formation: Formation) -> np.ndarray:
    """Independent planar cross-check: solve the follower positions in C.

    Builds an n x n complex matrix from the same pair construction (each
    neighbor pair of a follower contributes the unit-normalized complex
    solution (v, -u)) and solves the follower block in complex arithmetic.
    Returns (n_followers, 3) positions with z == 0.
    """
    if formation.dimension != 2:
        raise FormationError("the complex oracle is defined for planar formations only")
    pos = formation.positions
    zpos = pos[:, 0] + 1j * pos[:, 1]
    n = formation.n
    n_f = formation.n_followers
    lap = np.zeros((n, n), dtype=complex)
    for agent in range(n_f):
        nbrs = formation.graph.neighbors[agent]
        for ia, ib in combinations(range(len(nbrs)), 2):
            u_c = zpos[nbrs[ia]] - zpos[agent]
            v_c = zpos[nbrs[ib]] - zpos[agent]
            pair = _complex_pair(u_c, v_c)
            lap[agent, nbrs[ia]] += pair[0]
            lap[agent, nbrs[ib]] += pair[1]
            lap[agent, agent] -= pair[0] + pair[1]
    try:
        sol = np.linalg.solve(lap[:n_f, :n_f], -(lap[:n_f, n_f:] @ zpos[n_f:]))
    except np.linalg.LinAlgError as exc:
        raise LocalizabilityError(f"complex oracle follower block is singular: {exc}") from exc
    out = np.zeros((n_f, 3))
    out[:, 0] = sol.real
    out[:, 1] = sol.imag
    return out
