"""QUBO -> weighted MAX-SAT conversion and a restart-based stochastic solver.

The conversion is per-term: after folding the minus sign of the energy into
the coefficients, each positive term becomes one clause whose violation
costs exactly that term, and each negative term becomes clauses plus a
constant offset, so that for every assignment

    unsat_weight(x) = qubo_energy(x) + offset >= 0.

The solver is a weighted WalkSAT variant: greedy best-improvement flips
over variables occurring in violated clauses, random-walk moves with a
small probability, random restarts, and a patience rule that stops after a
fixed number of consecutive restarts without improving the global best.
An exact bipartite enumeration oracle is provided for verification.

Literals are DIMACS-style signed 1-based integers: +k means variable k-1
is true, -k means it is false.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from dbnsat.qubo import QuboProblem, split_assignment
from dbnsat.rbm import ExpectationStats, CapacityError, ShapeError

WCNF_WEIGHT_SCALE = 10**6


class ConfigurationError(ValueError):
    """Solver or statistics options requested in an unusable combination."""


class WcnfFormatError(ValueError):
    """Malformed WCNF text input."""


@dataclass
class WeightedClause:
    literals: tuple
    weight: float

    def __post_init__(self):
        self.literals = tuple(int(l) for l in self.literals)
        if not self.literals:
            raise ValueError("clause must have at least one literal")
        if self.weight <= 0:
            raise ValueError("clause weight must be positive")
        seen = set()
        for l in self.literals:
            if l == 0:
                raise ValueError("0 is not a valid literal")
            if l in seen or -l in seen:
                raise ValueError("duplicate or complementary literal in clause")
            seen.add(l)


@dataclass
class WcnfFormula:
    num_vars: int
    clauses: list
    offset: float = 0.0


@dataclass
class SolverConfig:
    restart_patience: int = 28
    max_flips_per_restart: int | None = None  # None -> 100 * num_vars
    noise: float = 0.1
    seed: int = 0
    record_assignments: bool = False
    # Optional early exit from a restart after this many flips without
    # improving the restart-local best; None runs the full flip budget.
    stall_flips: int | None = None

    def __post_init__(self):
        if self.restart_patience < 1:
            raise ConfigurationError("restart_patience must be >= 1")
        if not 0.0 <= self.noise <= 1.0:
            raise ConfigurationError("noise must be in [0, 1]")


@dataclass
class SolverTrace:
    points: list = field(default_factory=list)  # (flip_count, restart best so far)
    restart_markers: list = field(default_factory=list)
    assignments: np.ndarray | None = None  # (num_points, num_vars) when recorded


@dataclass
class SolveResult:
    best_assignment: np.ndarray
    best_weight: float
    restarts_used: int
    trace: SolverTrace


def qubo_to_wcnf(q: QuboProblem) -> WcnfFormula:
    """Per-term encoding with unsat_weight(x) = qubo_energy(x) + offset."""
    clauses = []
    offset = 0.0
    # qubo_energy = -(linear.x + quad terms): fold the sign into c.
    for k in range(q.num_vars):
        c = -float(q.linear[k])
        if c > 0:
            clauses.append(WeightedClause((-(k + 1),), c))
        elif c < 0:
            clauses.append(WeightedClause((k + 1,), -c))
            offset += -c
    for i, j, coeff in q.quadratic:
        c = -float(coeff)
        if c > 0:
            clauses.append(WeightedClause((-(i + 1), -(j + 1)), c))
        elif c < 0:
            clauses.append(WeightedClause((i + 1,), -c))
            clauses.append(WeightedClause((-(i + 1), j + 1), -c))
            offset += -c
    return WcnfFormula(q.num_vars, clauses, offset)


def unsat_weight(f: WcnfFormula, x) -> float:
    """Total weight of clauses the assignment leaves unsatisfied."""
    x = np.asarray(x)
    if x.shape != (f.num_vars,):
        raise ShapeError(f"assignment length {x.shape} != {f.num_vars}")
    total = 0.0
    for cl in f.clauses:
        if not any((x[abs(l) - 1] > 0.5) == (l > 0) for l in cl.literals):
            total += cl.weight
    return total


from numba import njit


@njit(cache=True)
def _restart_kernel(
    num_vars,
    u_var,
    u_neg,
    u_w,
    b_v1,
    b_n1,
    b_v2,
    b_n2,
    b_w,
    occ_ptr,
    occ_idx,
    occ_kind,
    noise,
    max_flips,
    stall,
    seed,
    record,
):
    """One restart of the stochastic search, from a fresh random assignment.

    Returns the restart-best trajectory (one entry per state visited, i.e.
    initial state plus one per flip), the states themselves when recording,
    and the best assignment/weight seen in this restart.
    """
    np.random.seed(seed)
    nu_cl = len(u_var)
    nb_cl = len(b_v1)
    x = (np.random.random(num_vars) < 0.5).astype(np.uint8)
    mark = np.zeros(num_vars, dtype=np.uint8)
    viol_u = np.zeros(nu_cl, dtype=np.uint8)
    viol_b = np.zeros(nb_cl, dtype=np.uint8)

    traj = np.empty(max_flips + 1, dtype=np.float64)
    states = np.empty((max_flips + 1 if record else 1, num_vars), dtype=np.uint8)
    best_w = np.inf
    best_x = x.copy()
    restart_best = np.inf
    since_gain = 0
    k = 0

    while True:
        # Full rescan: current weight, violated flags, candidate variables.
        w = 0.0
        nu = 0
        nb = 0
        for i in range(num_vars):
            mark[i] = 0
        for i in range(nu_cl):
            if (x[u_var[i]] != 0) == u_neg[i]:
                viol_u[i] = 1
                w += u_w[i]
                nu += 1
                mark[u_var[i]] = 1
            else:
                viol_u[i] = 0
        for i in range(nb_cl):
            a = (x[b_v1[i]] != 0) != b_n1[i]
            b = (x[b_v2[i]] != 0) != b_n2[i]
            if not a and not b:
                viol_b[i] = 1
                w += b_w[i]
                nb += 1
                mark[b_v1[i]] = 1
                mark[b_v2[i]] = 1
            else:
                viol_b[i] = 0

        if w < restart_best - 1e-15:
            restart_best = w
            since_gain = 0
        elif k > 0:
            since_gain += 1
        if w < best_w:
            best_w = w
            best_x = x.copy()
        traj[k] = restart_best
        if record:
            states[k] = x

        if w == 0.0 or k >= max_flips or (stall > 0 and since_gain >= stall):
            break

        if np.random.random() < noise:
            # Random variable from a uniformly random violated clause.
            pick = np.random.randint(nu + nb)
            var = -1
            if pick < nu:
                seen = 0
                for i in range(nu_cl):
                    if viol_u[i]:
                        if seen == pick:
                            var = u_var[i]
                            break
                        seen += 1
            else:
                pick -= nu
                seen = 0
                for i in range(nb_cl):
                    if viol_b[i]:
                        if seen == pick:
                            var = b_v1[i] if np.random.randint(2) == 0 else b_v2[i]
                            break
                        seen += 1
        else:
            # Greedy best-improvement over candidates, lowest index on ties.
            var = -1
            best_delta = np.inf
            for v in range(num_vars):
                if mark[v] == 0:
                    continue
                delta = 0.0
                for o in range(occ_ptr[v], occ_ptr[v + 1]):
                    ci = occ_idx[o]
                    kind = occ_kind[o]
                    if kind == 0:
                        delta += -u_w[ci] if viol_u[ci] else u_w[ci]
                    else:
                        a = (x[b_v1[ci]] != 0) != b_n1[ci]
                        b = (x[b_v2[ci]] != 0) != b_n2[ci]
                        if kind == 1:
                            if not b:
                                delta += b_w[ci] if a else -b_w[ci]
                        else:
                            if not a:
                                delta += b_w[ci] if b else -b_w[ci]
                if delta < best_delta:
                    best_delta = delta
                    var = v

        x[var] ^= 1
        k += 1

    return traj[: k + 1], states[: k + 1] if record else states[:0], best_x, best_w, k


class _ClauseArrays:
    """Unit and binary clauses flattened into numpy arrays for fast scoring."""

    def __init__(self, f: WcnfFormula):
        u_var, u_neg, u_w = [], [], []
        b_v1, b_n1, b_v2, b_n2, b_w = [], [], [], [], []
        for cl in f.clauses:
            if len(cl.literals) == 1:
                (l,) = cl.literals
                u_var.append(abs(l) - 1)
                u_neg.append(l < 0)
                u_w.append(cl.weight)
            elif len(cl.literals) == 2:
                l1, l2 = cl.literals
                b_v1.append(abs(l1) - 1)
                b_n1.append(l1 < 0)
                b_v2.append(abs(l2) - 1)
                b_n2.append(l2 < 0)
                b_w.append(cl.weight)
            else:
                raise ConfigurationError(
                    "stochastic solver handles clauses of length 1 or 2 only"
                )
        self.u_var = np.asarray(u_var, dtype=np.intp)
        self.u_neg = np.asarray(u_neg, dtype=bool)
        self.u_w = np.asarray(u_w, dtype=np.float64)
        self.b_v1 = np.asarray(b_v1, dtype=np.intp)
        self.b_n1 = np.asarray(b_n1, dtype=bool)
        self.b_v2 = np.asarray(b_v2, dtype=np.intp)
        self.b_n2 = np.asarray(b_n2, dtype=bool)
        self.b_w = np.asarray(b_w, dtype=np.float64)
        self.num_clauses = len(self.u_var) + len(self.b_v1)

        # CSR incidence: for each variable, its (clause index, position) pairs.
        # kind 0 = unit clause, 1 = first literal of a binary, 2 = second.
        occ = [[] for _ in range(f.num_vars)]
        for ci, v in enumerate(self.u_var):
            occ[v].append((ci, 0))
        for ci in range(len(self.b_v1)):
            occ[self.b_v1[ci]].append((ci, 1))
            occ[self.b_v2[ci]].append((ci, 2))
        self.occ_ptr = np.zeros(f.num_vars + 1, dtype=np.intp)
        occ_idx, occ_kind = [], []
        for v in range(f.num_vars):
            for ci, kind in occ[v]:
                occ_idx.append(ci)
                occ_kind.append(kind)
            self.occ_ptr[v + 1] = len(occ_idx)
        self.occ_idx = np.asarray(occ_idx, dtype=np.intp)
        self.occ_kind = np.asarray(occ_kind, dtype=np.uint8)


def solve_sls(f: WcnfFormula, cfg: SolverConfig) -> SolveResult:
    """Minimize the unsat weight with noisy greedy flips and random restarts.

    Deterministic given cfg.seed.  Ties in the greedy move go to the lowest
    variable index; termination after cfg.restart_patience consecutive
    restarts with no improvement of the global best.
    """
    if f.num_vars < 1:
        raise ValueError("formula must have at least one variable")
    arrays = _ClauseArrays(f)
    rng = np.random.default_rng(cfg.seed)
    max_flips = cfg.max_flips_per_restart or 100 * f.num_vars

    trace = SolverTrace()
    recorded = [] if cfg.record_assignments else None
    best_x = None
    best_w = np.inf
    flips = 0
    stale_restarts = 0

    while True:
        traj, states, seg_x, seg_w, seg_flips = _restart_kernel(
            f.num_vars,
            arrays.u_var,
            arrays.u_neg,
            arrays.u_w,
            arrays.b_v1,
            arrays.b_n1,
            arrays.b_v2,
            arrays.b_n2,
            arrays.b_w,
            arrays.occ_ptr,
            arrays.occ_idx,
            arrays.occ_kind,
            cfg.noise,
            max_flips,
            cfg.stall_flips or 0,
            int(rng.integers(2**31 - 1)),
            recorded is not None,
        )
        trace.points.extend(zip(range(flips, flips + len(traj)), traj.tolist()))
        if recorded is not None:
            recorded.append(states)
        flips += seg_flips

        if seg_w < best_w:
            best_w = seg_w
            best_x = seg_x
            stale_restarts = 0
        else:
            stale_restarts += 1
        if best_w == 0.0 or stale_restarts >= cfg.restart_patience:
            break
        trace.restart_markers.append(flips)

    if recorded is not None:
        trace.assignments = np.concatenate(recorded, axis=0)
    # Recompute from scratch so the reported weight is tied to the assignment.
    final_w = unsat_weight(f, best_x)
    return SolveResult(
        best_assignment=best_x.astype(np.float64),
        best_weight=final_w,
        restarts_used=len(trace.restart_markers),
        trace=trace,
    )


def _qubo_dense(q: QuboProblem):
    m, n = q.layout.num_visible, q.layout.num_hidden
    b = np.asarray(q.linear[:m], dtype=np.float64)
    c = np.asarray(q.linear[m:], dtype=np.float64)
    w = np.zeros((n, m))
    for i, j, coeff in q.quadratic:
        if i < m <= j:
            w[j - m, i] += coeff
        else:
            raise ValueError("bipartite oracle requires visible-hidden terms only")
    return b, c, w


def solve_exact_bipartite(q: QuboProblem, offset: float = 0.0, chunk: int = 65536):
    """Exact minimum energy of a bipartite QUBO by enumerating the smaller layer.

    For each state of the enumerated layer the opposite layer is optimal
    unit-by-unit: a bit is 1 iff its total input (weight row dot the fixed
    layer plus its bias) is positive.  The reported weight is E + offset.
    """
    m, n = q.layout.num_visible, q.layout.num_hidden
    if min(m, n) > 24:
        raise CapacityError("both layers exceed the enumeration guard of 24 units")
    b, c, w = _qubo_dense(q)

    # Enumerate the smaller layer; the free layer is solved in closed form.
    if n <= m:
        fixed_bias, free_bias, coupling = c, b, w.T  # coupling maps h -> visible field
    else:
        fixed_bias, free_bias, coupling = b, c, w  # maps v -> hidden field

    k = len(fixed_bias)
    best_e = np.inf
    best_fixed = None
    for start in range(0, 2**k, chunk):
        idx = np.arange(start, min(start + chunk, 2**k), dtype=np.int64)
        states = ((idx[:, None] >> np.arange(k)) & 1).astype(np.float64)
        fields = states @ coupling.T + free_bias  # (B, len(free))
        e = -(states @ fixed_bias + np.maximum(fields, 0.0).sum(axis=1))
        i = int(np.argmin(e))
        if e[i] < best_e:
            best_e = float(e[i])
            best_fixed = states[i]

    free = (best_fixed @ coupling.T + free_bias > 0).astype(np.float64)
    if n <= m:
        x = np.concatenate([free, best_fixed])
    else:
        x = np.concatenate([best_fixed, free])
    weight = best_e + offset
    trace = SolverTrace(points=[(0, weight)])
    return SolveResult(best_assignment=x, best_weight=weight, restarts_used=0, trace=trace)


def model_stats_from_solve(q: QuboProblem, r: SolveResult, mode: str = "best"):
    """Turn a solver result into the expectation statistics of the gradient.

    "best" uses the single best assignment's outer product; "time_average"
    averages over every assignment recorded in the trace.
    """
    if mode == "best":
        v, h = split_assignment(q, r.best_assignment)
        return ExpectationStats(vh=np.outer(h, v), v=v, h=h)
    if mode == "time_average":
        if r.trace.assignments is None:
            raise ConfigurationError(
                "time_average needs record_assignments=True in the solver config"
            )
        m = q.layout.num_visible
        states = r.trace.assignments.astype(np.float64)
        v_states, h_states = states[:, :m], states[:, m:]
        t = states.shape[0]
        return ExpectationStats(
            vh=h_states.T @ v_states / t,
            v=v_states.mean(axis=0),
            h=h_states.mean(axis=0),
        )
    raise ConfigurationError(f"unknown mode {mode!r}")


def write_wcnf(f: WcnfFormula, path, scale: int = WCNF_WEIGHT_SCALE):
    """Write the standard WCNF text format with integer-scaled weights."""
    scaled = [max(1, round(cl.weight * scale)) for cl in f.clauses]
    top = sum(scaled) + 1
    lines = [
        f"c weight scale {scale}",
        f"c offset {f.offset!r}",
        f"p wcnf {f.num_vars} {len(f.clauses)} {top}",
    ]
    for cl, w in zip(f.clauses, scaled):
        lits = " ".join(str(l) for l in cl.literals)
        lines.append(f"{w} {lits} 0")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")


def read_wcnf(path) -> WcnfFormula:
    """Read the WCNF text format written by write_wcnf."""
    scale = 1
    offset = 0.0
    num_vars = None
    clauses = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("c"):
                parts = line.split()
                if parts[:3] == ["c", "weight", "scale"]:
                    scale = int(parts[3])
                elif parts[:2] == ["c", "offset"]:
                    offset = float(parts[2])
                continue
            if line.startswith("p"):
                parts = line.split()
                if len(parts) < 4 or parts[1] != "wcnf":
                    raise WcnfFormatError(f"bad problem line: {line!r}")
                num_vars = int(parts[2])
                continue
            if num_vars is None:
                raise WcnfFormatError("clause before problem line")
            toks = line.split()
            if toks[-1] != "0":
                raise WcnfFormatError(f"clause not 0-terminated: {line!r}")
            weight = int(toks[0]) / scale
            clauses.append(WeightedClause(tuple(int(t) for t in toks[1:-1]), weight))
    if num_vars is None:
        raise WcnfFormatError("missing problem line")
    return WcnfFormula(num_vars, clauses, offset)
