"""Instance generation and problem file I/O.

Planted instances are built backwards from a known primal-dual KKT
point, so they double as ground-truth oracles for the solvers and the
per-iteration theory checks.  The BIQ family lifts binary quadratic
minimization to its standard doubly nonnegative relaxation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .dnnsdp import DnnsdpProblem, DualIterate, kkt_residuals
from .engine import (
    BlockOutcome,
    BlockProblem,
    Criterion,
    SubproblemRequest,
    TheoryEvaluators,
)
from .linalg import ConstraintMap, frob_inner, symmetrize


class ProblemFormatError(Exception):
    """A problem file failed to parse."""

    def __init__(self, line: int, message: str):
        self.line = line
        super().__init__(f"line {line}: {message}")


@dataclass
class PlantedInstance:
    """A problem with its exact optimal primal-dual pair attached."""

    problem: DnnsdpProblem
    solution: DualIterate  # X plus the full dual tuple
    objective: float  # <C, X*>

    @property
    def X(self) -> np.ndarray:
        return self.solution.X


def _random_sparse_sym_row(rng: np.random.Generator, n: int) -> np.ndarray:
    """Random sparse symmetric matrix, normalized to unit Frobenius norm."""
    a = np.zeros((n, n))
    nnz = rng.integers(2, max(3, n // 2) + 1)
    for _ in range(nnz):
        i = int(rng.integers(0, n))
        j = int(rng.integers(0, n))
        v = float(rng.normal())
        a[i, j] += v
        if i != j:
            a[j, i] += v
    norm = np.linalg.norm(a)
    if norm == 0.0:
        a[0, 0] = 1.0
        norm = 1.0
    return a / norm


def _planted_attempt(rng: np.random.Generator, n: int, mE: int, mI: int) -> PlantedInstance:
    # primal X*: block diagonal, entrywise positive within blocks, with
    # an exactly-zero off-diagonal block carrying the active entrywise
    # constraints.  The first block is full rank and well conditioned
    # (diagonal plus thin positive Gram, avoiding Perron dominance); the
    # second is rank one, so the PSD face is active with a clean gap.
    # Everything is normalized to O(1) so the absolute-criterion budget
    # min(0.1, k^-p) is meaningful from the zero start.
    if n >= 4:
        n1 = n // 2
        g1 = np.arange(n1)
        g2 = np.arange(n1, n)
        k1 = max(1, n1 // 3)
        w1 = rng.uniform(0.3, 1.0, size=(n1, k1))
        x1 = np.diag(rng.uniform(0.5, 1.0, size=n1)) + w1 @ w1.T
        w2 = rng.uniform(0.5, 1.5, size=n - n1)
        X = np.zeros((n, n))
        X[np.ix_(g1, g1)] = x1
        X[np.ix_(g2, g2)] = np.outer(w2, w2)
        # null space of X is exactly the complement of w2 inside block 2
        basis = np.linalg.qr(
            np.column_stack([w2, rng.normal(size=(n - n1, n - n1 - 1))])
        )[0][:, 1:]
        null = np.zeros((n, n - n1 - 1))
        null[g2] = basis
    else:
        g1 = np.arange(n)
        g2 = np.arange(0)
        w = rng.uniform(0.5, 1.5, size=(n, n - 1))
        X = w @ w.T
        null = np.linalg.eigh(X)[1][:, :1]
    if null.shape[1] == 0:
        raise ValueError("planted primal has no null space")
    X = symmetrize(X / np.linalg.norm(X))

    # S*: positive definite on the null space of X, zero elsewhere
    S = null @ np.diag(rng.uniform(0.5, 1.5, size=null.shape[1])) @ null.T
    S = symmetrize(S / np.linalg.norm(S))

    # Z*: strictly positive exactly on the structurally zero block of X,
    # so complementarity over the entrywise cone is strict
    Z = np.zeros((n, n))
    if len(g2):
        vals_z = rng.uniform(0.5, 1.5, size=(len(g1), len(g2)))
        Z[np.ix_(g1, g2)] = vals_z
        Z[np.ix_(g2, g1)] = vals_z.T
        Z = Z / (2.0 * np.linalg.norm(Z))

    AE = ConstraintMap(n, [_random_sparse_sym_row(rng, n) for _ in range(mE)])
    if AE.lambda_min_gram() < 1e-4 * max(AE.lambda_max_gram(), 1.0):
        raise ValueError("equality map poorly conditioned")
    bE = AE.apply(X)

    if mI:
        AI = ConstraintMap(n, [_random_sparse_sym_row(rng, n) for _ in range(mI)])
        applied = AI.apply(X)
        active = rng.random(mI) < 0.5
        if not active.any():
            active[int(rng.integers(0, mI))] = True
        yI = np.where(
            active, rng.uniform(0.5, 1.5, size=mI) / math.sqrt(mI), 0.0
        )
        slack = np.where(active, 0.0, rng.uniform(0.05, 0.2, size=mI))
        bI = applied - slack
    else:
        AI = ConstraintMap(n, [])
        yI = np.zeros(0)
        bI = np.zeros(0)

    yE = 0.5 * rng.normal(size=mE) / math.sqrt(mE)
    C = AI.adjoint(yI) + Z + AE.adjoint(yE) + S
    prob = DnnsdpProblem(C=C, AE=AE, bE=bE, AI=AI, bI=bI)

    solution = DualIterate(
        y_I=yI,
        Z=Z,
        y_E=yE,
        S=S,
        X=X,
        z_slack=yI.copy() if mI else None,
        x_slack=(bI - prob.AI.apply(X)) if mI else None,
    )
    report = kkt_residuals(prob, solution)
    if report.eta > 1e-12:
        raise ValueError(f"planted KKT residual too large ({report.eta:g})")
    objective = frob_inner(C, X)
    dual_obj = float(bE @ yE) + float(bI @ yI) + frob_inner(prob.M, Z)
    if abs(objective - dual_obj) > 1e-10 * (1.0 + abs(objective)):
        raise ValueError("planted strong duality violated")
    return PlantedInstance(problem=prob, solution=solution, objective=objective)


def gen_planted(seed: int, n: int, mE: int, mI: int = 0, retries: int = 10) -> PlantedInstance:
    """Deterministically generate a DNNSDP with a known KKT point.

    Draws are retried with fresh randomness (same stream) when a draw
    fails the KKT or conditioning checks.
    """
    if n < 2 or mE < 1 or mI < 0:
        raise ValueError("need n >= 2, mE >= 1, mI >= 0")
    rng = np.random.default_rng(seed)
    last = None
    for _ in range(retries):
        try:
            return _planted_attempt(rng, n, mE, mI)
        except ValueError as err:
            last = err
    raise RuntimeError(f"planted generation failed after {retries} retries: {last}")


# ---------------------------------------------------------------------------
# binary quadratic programs
# ---------------------------------------------------------------------------


def _unit_sym(n: int, i: int, j: int) -> np.ndarray:
    a = np.zeros((n, n))
    if i == j:
        a[i, i] = 1.0
    else:
        a[i, j] = 0.5
        a[j, i] = 0.5
    return a


def biq_pairs(q: int, seed: int = 0) -> list[tuple[int, int]]:
    """Index pairs receiving the valid inequalities: all for q <= 12,
    a random sample of 3q pairs above."""
    pairs = [(i, j) for i in range(q) for j in range(i + 1, q)]
    if q <= 12:
        return pairs
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pairs), size=min(3 * q, len(pairs)), replace=False)
    return [pairs[int(t)] for t in sorted(idx)]


def biq_to_dnnsdp(Q: np.ndarray, extended: bool = False, seed: int = 0) -> DnnsdpProblem:
    """Doubly nonnegative relaxation of min x'Qx over binary x.

    The lifted variable is Y = [X x; x' 1] with diag(X) = x, Y PSD and
    entrywise nonnegative; ``extended`` adds the pairwise valid
    inequalities Y_ij <= Y_i,q, Y_ij <= Y_j,q and
    Y_i,q + Y_j,q <= 1 + Y_ij as inequality rows.
    """
    Q = symmetrize(Q)
    q = Q.shape[0]
    n = q + 1
    C = np.zeros((n, n))
    C[:q, :q] = Q

    rows = [_unit_sym(n, q, q)]
    bE = [1.0]
    for i in range(q):
        rows.append(_unit_sym(n, i, i) - _unit_sym(n, i, q))
        bE.append(0.0)
    AE = ConstraintMap(n, rows)

    AI = None
    bI = None
    if extended:
        ai_rows = []
        bi = []
        for i, j in biq_pairs(q, seed):
            ai_rows.append(_unit_sym(n, i, q) - _unit_sym(n, i, j))
            bi.append(0.0)
            ai_rows.append(_unit_sym(n, j, q) - _unit_sym(n, i, j))
            bi.append(0.0)
            ai_rows.append(_unit_sym(n, i, j) - _unit_sym(n, i, q) - _unit_sym(n, j, q))
            bi.append(-1.0)
        AI = ConstraintMap(n, ai_rows)
        bI = np.array(bi)

    return DnnsdpProblem(C=C, AE=AE, bE=np.array(bE), AI=AI, bI=bI)


def binary_lift(x: np.ndarray) -> np.ndarray:
    """The exact lifting Y = [xx' x; x' 1] of a binary vector."""
    x = np.asarray(x, dtype=float)
    q = x.shape[0]
    y = np.empty((q + 1, q + 1))
    y[:q, :q] = np.outer(x, x)
    y[:q, q] = x
    y[q, :q] = x
    y[q, q] = 1.0
    return y


def brute_force_biq(Q: np.ndarray, chunk: int = 1 << 14) -> tuple[float, np.ndarray]:
    """Exact minimum of x'Qx over binary x by enumeration (q <= 22)."""
    Q = symmetrize(Q)
    q = Q.shape[0]
    if q > 22:
        raise ValueError(f"enumeration limited to q <= 22, got {q}")
    best_val = math.inf
    best_x = np.zeros(q)
    total = 1 << q
    for start in range(0, total, chunk):
        codes = np.arange(start, min(start + chunk, total), dtype=np.int64)
        bits = ((codes[:, None] >> np.arange(q)) & 1).astype(float)
        vals = np.einsum("bi,ij,bj->b", bits, Q, bits)
        i = int(np.argmin(vals))
        if vals[i] < best_val:
            best_val = float(vals[i])
            best_x = bits[i]
    return best_val, best_x


# ---------------------------------------------------------------------------
# problem file format
# ---------------------------------------------------------------------------
#
#   DNNSDP n mE mI
#   C
#   i j v        (1-based upper-triangle entries)
#   end
#   M
#   ...
#   end
#   AE 1
#   i j v
#   b v          (right-hand side; terminates the block)
#   ...
#   AI 1
#   ...
#
# Values are written with repr(), the shortest decimal that round-trips.


def write_problem(path, prob: DnnsdpProblem) -> None:
    lines = [f"DNNSDP {prob.n} {prob.mE} {prob.mI}"]

    def emit_matrix(tag: str, mat: np.ndarray):
        lines.append(tag)
        nz = np.argwhere(np.triu(mat != 0.0))
        for i, j in nz:
            lines.append(f"{i + 1} {j + 1} {float(mat[i, j])!r}")
        lines.append("end")

    emit_matrix("C", prob.C)
    emit_matrix("M", prob.M)
    for k in range(prob.mE):
        lines.append(f"AE {k + 1}")
        mat = prob.AE.rows[k].toarray()
        nz = np.argwhere(np.triu(mat != 0.0))
        for i, j in nz:
            lines.append(f"{i + 1} {j + 1} {float(mat[i, j])!r}")
        lines.append(f"b {float(prob.bE[k])!r}")
    for k in range(prob.mI):
        lines.append(f"AI {k + 1}")
        mat = prob.AI.rows[k].toarray()
        nz = np.argwhere(np.triu(mat != 0.0))
        for i, j in nz:
            lines.append(f"{i + 1} {j + 1} {float(mat[i, j])!r}")
        lines.append(f"b {float(prob.bI[k])!r}")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


class _Reader:
    def __init__(self, path):
        with open(path) as fh:
            self.lines = fh.read().splitlines()
        self.pos = 0

    def next_line(self) -> tuple[int, str]:
        while self.pos < len(self.lines):
            self.pos += 1
            text = self.lines[self.pos - 1].strip()
            if text and not text.startswith("#"):
                return self.pos, text
        raise ProblemFormatError(len(self.lines) + 1, "unexpected end of file")


def _parse_entry(ln: int, text: str, n: int, mat: np.ndarray):
    parts = text.split()
    if len(parts) != 3:
        raise ProblemFormatError(ln, f"expected 'i j v', got {text!r}")
    try:
        i, j, v = int(parts[0]), int(parts[1]), float(parts[2])
    except ValueError as err:
        raise ProblemFormatError(ln, str(err)) from None
    if not (1 <= i <= n and 1 <= j <= n):
        raise ProblemFormatError(ln, f"index ({i}, {j}) outside 1..{n}")
    mat[i - 1, j - 1] = v
    mat[j - 1, i - 1] = v


def read_problem(path) -> DnnsdpProblem:
    """Parse a problem file written by :func:`write_problem`."""
    r = _Reader(path)
    ln, header = r.next_line()
    parts = header.split()
    if len(parts) != 4 or parts[0] != "DNNSDP":
        raise ProblemFormatError(ln, "expected header 'DNNSDP n mE mI'")
    try:
        n, mE, mI = int(parts[1]), int(parts[2]), int(parts[3])
    except ValueError:
        raise ProblemFormatError(ln, "non-integer dimensions in header") from None
    if n < 1 or mE < 1 or mI < 0:
        raise ProblemFormatError(ln, f"bad dimensions n={n} mE={mE} mI={mI}")

    def read_matrix(tag: str) -> np.ndarray:
        ln, text = r.next_line()
        if text != tag:
            raise ProblemFormatError(ln, f"expected block {tag!r}, got {text!r}")
        mat = np.zeros((n, n))
        while True:
            ln, text = r.next_line()
            if text == "end":
                return mat
            _parse_entry(ln, text, n, mat)

    def read_constraint(tag: str, index: int) -> tuple[np.ndarray, float]:
        ln, text = r.next_line()
        if text != f"{tag} {index}":
            raise ProblemFormatError(ln, f"expected block '{tag} {index}', got {text!r}")
        mat = np.zeros((n, n))
        while True:
            ln, text = r.next_line()
            if text.startswith("b "):
                try:
                    rhs = float(text.split()[1])
                except (IndexError, ValueError):
                    raise ProblemFormatError(ln, f"bad right-hand side {text!r}") from None
                return mat, rhs
            _parse_entry(ln, text, n, mat)

    C = read_matrix("C")
    M = read_matrix("M")
    ae_rows, bE = [], []
    for k in range(mE):
        mat, rhs = read_constraint("AE", k + 1)
        ae_rows.append(mat)
        bE.append(rhs)
    ai_rows, bI = [], []
    for k in range(mI):
        mat, rhs = read_constraint("AI", k + 1)
        ai_rows.append(mat)
        bI.append(rhs)
    return DnnsdpProblem(
        C=C,
        AE=ConstraintMap(n, ae_rows),
        bE=np.array(bE),
        AI=ConstraintMap(n, ai_rows) if mI else None,
        bI=np.array(bI) if mI else None,
        M=M,
    )


def write_solution(path, it: DualIterate) -> None:
    """Sidecar file with a reference primal-dual point."""
    lines = []

    def emit_matrix(tag, mat):
        lines.append(tag)
        nz = np.argwhere(np.triu(mat != 0.0))
        for i, j in nz:
            lines.append(f"{i + 1} {j + 1} {float(mat[i, j])!r}")
        lines.append("end")

    def emit_vector(tag, vec):
        lines.append(tag)
        for i, v in enumerate(vec):
            if v != 0.0:
                lines.append(f"{i + 1} {float(v)!r}")
        lines.append("end")

    lines.append(f"SOLUTION {it.X.shape[0]} {it.y_E.shape[0]} {it.y_I.shape[0]}")
    emit_matrix("X", it.X)
    emit_matrix("Z", it.Z)
    emit_matrix("S", it.S)
    emit_vector("yE", it.y_E)
    emit_vector("yI", it.y_I)
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_solution(path) -> DualIterate:
    r = _Reader(path)
    ln, header = r.next_line()
    parts = header.split()
    if len(parts) != 4 or parts[0] != "SOLUTION":
        raise ProblemFormatError(ln, "expected header 'SOLUTION n mE mI'")
    n, mE, mI = int(parts[1]), int(parts[2]), int(parts[3])

    def read_matrix(tag):
        ln, text = r.next_line()
        if text != tag:
            raise ProblemFormatError(ln, f"expected block {tag!r}, got {text!r}")
        mat = np.zeros((n, n))
        while True:
            ln, text = r.next_line()
            if text == "end":
                return mat
            _parse_entry(ln, text, n, mat)

    def read_vector(tag, dim):
        ln, text = r.next_line()
        if text != tag:
            raise ProblemFormatError(ln, f"expected block {tag!r}, got {text!r}")
        vec = np.zeros(dim)
        while True:
            ln, text = r.next_line()
            if text == "end":
                return vec
            parts = text.split()
            if len(parts) != 2:
                raise ProblemFormatError(ln, f"expected 'i v', got {text!r}")
            i, v = int(parts[0]), float(parts[1])
            if not 1 <= i <= dim:
                raise ProblemFormatError(ln, f"index {i} outside 1..{dim}")
            vec[i - 1] = v

    X = read_matrix("X")
    Z = read_matrix("Z")
    S = read_matrix("S")
    yE = read_vector("yE", mE)
    yI = read_vector("yI", mI)
    return DualIterate(
        y_I=yI,
        Z=Z,
        y_E=yE,
        S=S,
        X=X,
        z_slack=yI.copy() if mI else None,
        x_slack=None,
    )


# ---------------------------------------------------------------------------
# quadratic two-block toy
# ---------------------------------------------------------------------------


class QuadraticToy(BlockProblem):
    """min ||x - a||^2 + ||y - b||^2  s.t.  x + y = c.

    Both subproblems have closed forms, so the toy exercises the engine
    with exact solves; ``inexact_fraction`` > 0 instead perturbs each
    solve as far as the active criterion allows (times the fraction) and
    reports the true gradient certificate.
    """

    def __init__(self, a, b, c, inexact_fraction: float = 0.0, seed: int = 0):
        self.a = np.atleast_1d(np.asarray(a, dtype=float))
        self.b = np.atleast_1d(np.asarray(b, dtype=float))
        self.c = np.atleast_1d(np.asarray(c, dtype=float))
        if not self.a.shape == self.b.shape == self.c.shape:
            raise ValueError("a, b, c must share a shape")
        self.inexact_fraction = float(inexact_fraction)
        self.rng = np.random.default_rng(seed)
        # f and g are 2-strongly convex, the constraint maps are identities
        self.theory = TheoryEvaluators(
            norm_x_pf_sf=lambda dx, sigma: math.sqrt(2.0) * np.linalg.norm(dx),
            norm_x_pf_half_sf=lambda dx, sigma: float(np.linalg.norm(dx)),
            norm_y_tg=lambda dy, sigma: math.sqrt(2.0 + sigma) * np.linalg.norm(dy),
            norm_y_pg_34sg=lambda dy, sigma: math.sqrt(1.5) * np.linalg.norm(dy),
            c_upper=lambda sigma: 2.0 / (2.0 + sigma),
        )

    def kkt_solution(self):
        shift = (self.a + self.b - self.c) / 2.0
        return self.a - shift, self.b - shift, self.a + self.b - self.c

    def _perturbed(self, exact, anchor, grad_scale, sigma, req):
        """Perturb an exact solve as far as the criterion tolerates."""
        if self.inexact_fraction == 0.0 or req.criterion is Criterion.EXACT:
            return exact, 0.0, None
        direction = self.rng.standard_normal(exact.shape)
        nrm = np.linalg.norm(direction)
        if nrm == 0.0:
            return exact, 0.0, None
        direction /= nrm
        if req.criterion is Criterion.C1:
            step = self.inexact_fraction * req.bound / grad_scale
        else:
            # with F = (2 + sigma)^{-1} I both sides of the relative bound
            # carry the same sqrt(2 + sigma); admissibility reduces to
            # step <= bound * ||cand - anchor||
            base = float(np.linalg.norm(exact - anchor))
            step = self.inexact_fraction * req.bound * base / (1.0 + req.bound)
        cand = exact + step * direction
        if req.criterion is not Criterion.C1:
            # guard against the perturbation shrinking ||cand - anchor||
            for _ in range(60):
                if step <= req.bound * np.linalg.norm(cand - anchor):
                    break
                step *= 0.5
                cand = exact + step * direction
        grad = grad_scale * (cand - exact)
        return cand, float(np.linalg.norm(grad)), grad

    def solve_x(self, x, y, z, req: SubproblemRequest) -> BlockOutcome:
        sigma = req.sigma
        exact = (2.0 * self.a - z - sigma * (y - self.c)) / (2.0 + sigma)
        cand, norm, grad = self._perturbed(exact, x, 2.0 + sigma, sigma, req)
        metric = math.sqrt(2.0 + sigma) * float(np.linalg.norm(cand - x))
        if req.criterion in (Criterion.C2, Criterion.C2PRIME):
            norm = norm / math.sqrt(2.0 + sigma)
        return BlockOutcome(cand, norm, metric, 1, 0.0, grad if grad is not None else np.zeros_like(cand))

    def solve_y(self, x_new, y, z, req: SubproblemRequest) -> BlockOutcome:
        sigma = req.sigma
        exact = (2.0 * self.b - z - sigma * (x_new - self.c)) / (2.0 + sigma)
        cand, norm, grad = self._perturbed(exact, y, 2.0 + sigma, sigma, req)
        metric = math.sqrt(2.0 + sigma) * float(np.linalg.norm(cand - y))
        if req.criterion in (Criterion.C2, Criterion.C2PRIME):
            norm = norm / math.sqrt(2.0 + sigma)
        return BlockOutcome(cand, norm, metric, 1, 0.0, grad if grad is not None else np.zeros_like(cand))

    def constraint(self, x, y) -> np.ndarray:
        return x + y - self.c

    def objective(self, x, y) -> float:
        return float(np.sum((x - self.a) ** 2) + np.sum((y - self.b) ** 2))

    def metric_x(self, dx, sigma: float) -> float:
        return math.sqrt(2.0 + sigma) * float(np.linalg.norm(dx))

    def metric_y(self, dy, sigma: float) -> float:
        return math.sqrt(2.0 + sigma) * float(np.linalg.norm(dy))

    def pack_reference(self, xyz):
        return xyz
