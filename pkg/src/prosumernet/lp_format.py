"""LP-file text export and parser for external-solver cross-checks.

Dialect: CPLEX-style LP text.  ``Minimize`` holds the linear terms for
every variable (zero coefficients included, which pins the variable
order) plus an optional quadratic ``[ ... ] / 2`` block whose entries
are ``Q_ii x ^ 2`` and ``2 Q_ij x * y`` for i < j.  ``Subject To`` lists
equalities and <= rows, ``Bounds`` one line per variable, ``Binaries``
the binary variables, then ``End``.  Numbers use Python repr (shortest
round-trip decimal), so exporting is bit-exact reproducible and
``parse_lp`` inverts ``export_lp`` exactly.
"""

from __future__ import annotations

import numpy as np

from .qp import MipProblem, QpProblem, SolverError

__all__ = ["export_lp", "parse_lp"]

_INF = float("inf")


def _num(v: float) -> str:
    return repr(float(v))


def _terms(coefs, names) -> str:
    parts = []
    for a, nm in zip(coefs, names):
        if not parts:
            parts.append(f"{_num(a)} {nm}")
        elif a < 0:
            parts.append(f"- {_num(-a)} {nm}")
        else:
            parts.append(f"+ {_num(a)} {nm}")
    return " ".join(parts)


def export_lp(p: QpProblem | MipProblem, name: str = "exported") -> str:
    """Render a QP or mixed-binary QP as LP-format text."""
    mip = isinstance(p, MipProblem)
    qp = p.qp if mip else p
    n = qp.n_vars
    names = qp.var_names or [f"x{i}" for i in range(n)]
    if len(names) != n:
        raise SolverError("var_names length mismatch")

    lines = [f"\\ {name}", "Minimize"]
    obj = f" obj: {_terms(qp.c, names)}"
    quad = []
    for i in range(n):
        if qp.Q[i, i] != 0.0:
            quad.append((qp.Q[i, i], f"{names[i]} ^ 2"))
        for j in range(i + 1, n):
            if qp.Q[i, j] != 0.0:
                quad.append((2.0 * qp.Q[i, j], f"{names[i]} * {names[j]}"))
    if quad:
        obj += " + [ " + _terms([a for a, _ in quad], [t for _, t in quad]) + " ] / 2"
    lines.append(obj)

    lines.append("Subject To")
    for r in range(qp.n_eq):
        lines.append(f" eq{r}: {_terms(qp.A_eq[r], names)} = {_num(qp.b_eq[r])}")
    for r in range(qp.n_in):
        lines.append(f" in{r}: {_terms(qp.A_in[r], names)} <= {_num(qp.b_in[r])}")

    lines.append("Bounds")
    for i in range(n):
        lo, hi = qp.lb[i], qp.ub[i]
        if lo == -_INF and hi == _INF:
            lines.append(f" {names[i]} free")
        elif lo == hi:
            lines.append(f" {names[i]} = {_num(lo)}")
        else:
            lo_s = "-infinity" if lo == -_INF else _num(lo)
            hi_s = "+infinity" if hi == _INF else _num(hi)
            lines.append(f" {lo_s} <= {names[i]} <= {hi_s}")

    if mip and p.binary_indices:
        lines.append("Binaries")
        lines.append(" " + " ".join(names[i] for i in p.binary_indices))
    lines.append("End")
    return "\n".join(lines) + "\n"


class _Tok:
    def __init__(self, text: str):
        body = [ln for ln in text.splitlines() if not ln.lstrip().startswith("\\")]
        self.toks = " ".join(body).split()
        self.pos = 0

    def peek(self):
        return self.toks[self.pos] if self.pos < len(self.toks) else None

    def next(self):
        t = self.peek()
        self.pos += 1
        return t

    def at_keyword(self):
        t = self.peek()
        if t is None:
            return True
        return t.lower() in {"subject", "bounds", "binaries", "end", "minimize"} or t.rstrip(":").lower() in {
            "st", "s.t."
        }


def _parse_linear(tok: _Tok, var_ix: dict[str, int]):
    """Parse a run of [sign] coef name terms up to a keyword or (in)equality sign."""
    coefs: dict[int, float] = {}
    sign = 1.0
    while True:
        t = tok.peek()
        if t is None or t in {"=", "<=", ">=", "]", "["} or tok.at_keyword():
            return coefs
        if t == "+":
            sign = 1.0
            tok.next()
            continue
        if t == "-":
            sign = -1.0
            tok.next()
            continue
        coef = sign
        try:
            coef = sign * float(t)
            tok.next()
            t = tok.peek()
        except ValueError:
            pass
        name = tok.next()
        if name not in var_ix:
            var_ix[name] = len(var_ix)
        coefs[var_ix[name]] = coefs.get(var_ix[name], 0.0) + coef
        sign = 1.0


def parse_lp(text: str) -> QpProblem | MipProblem:
    """Parse the subset of LP text produced by :func:`export_lp`."""
    tok = _Tok(text)
    if (tok.next() or "").lower() != "minimize":
        raise SolverError("LP text must start with Minimize")
    var_ix: dict[str, int] = {}
    if (tok.next() or "").rstrip(":") != "obj":
        raise SolverError("missing obj row")
    lin = _parse_linear(tok, var_ix)
    quad: list[tuple[int, int, float]] = []
    if tok.peek() == "[":
        tok.next()
        sign = 1.0
        while tok.peek() != "]":
            t = tok.next()
            if t == "+":
                sign = 1.0
                continue
            if t == "-":
                sign = -1.0
                continue
            coef = sign * float(t)
            a = tok.next()
            if a not in var_ix:
                var_ix[a] = len(var_ix)
            op = tok.next()
            if op == "^":
                tok.next()  # the literal 2
                quad.append((var_ix[a], var_ix[a], coef))
            elif op == "*":
                bname = tok.next()
                if bname not in var_ix:
                    var_ix[bname] = len(var_ix)
                quad.append((var_ix[a], var_ix[bname], coef))
            else:
                raise SolverError(f"bad quadratic operator {op!r}")
            sign = 1.0
        tok.next()  # ]
        if tok.next() != "/" or tok.next() != "2":
            raise SolverError("quadratic block must end with / 2")

    rows_eq: list[tuple[dict, float]] = []
    rows_in: list[tuple[dict, float]] = []
    t = tok.next()
    if t and t.lower() == "subject":
        tok.next()  # To
        while not tok.at_keyword():
            tok.next()  # row label like eq0:
            coefs = _parse_linear(tok, var_ix)
            op = tok.next()
            rhs = float(tok.next())
            if op == "=":
                rows_eq.append((coefs, rhs))
            elif op == "<=":
                rows_in.append((coefs, rhs))
            else:
                raise SolverError(f"unsupported row sense {op!r}")
        t = tok.next()

    n = len(var_ix)
    lb = np.zeros(n)
    ub = np.full(n, _INF)
    if t and t.lower() == "bounds":
        while not tok.at_keyword():
            first = tok.next()
            if tok.peek() == "free":
                tok.next()
                lb[var_ix[first]], ub[var_ix[first]] = -_INF, _INF
            elif tok.peek() == "=":
                tok.next()
                v = float(tok.next())
                lb[var_ix[first]] = ub[var_ix[first]] = v
            else:
                lo = -_INF if first == "-infinity" else float(first)
                tok.next()  # <=
                name = tok.next()
                tok.next()  # <=
                hi_t = tok.next()
                hi = _INF if hi_t == "+infinity" else float(hi_t)
                lb[var_ix[name]], ub[var_ix[name]] = lo, hi
        t = tok.next()

    binaries: list[int] = []
    if t and t.lower() == "binaries":
        while not tok.at_keyword():
            binaries.append(var_ix[tok.next()])
        t = tok.next()
    if t is None or t.lower() != "end":
        raise SolverError("missing End")

    names = [None] * n
    for nm, i in var_ix.items():
        names[i] = nm
    Q = np.zeros((n, n))
    for i, j, coef in quad:
        if i == j:
            Q[i, i] += coef
        else:
            Q[i, j] += coef / 2.0
            Q[j, i] += coef / 2.0
    c = np.zeros(n)
    for i, v in lin.items():
        c[i] = v

    def stack(rows):
        if not rows:
            return None, None
        A = np.zeros((len(rows), n))
        b = np.zeros(len(rows))
        for r, (coefs, rhs) in enumerate(rows):
            for i, v in coefs.items():
                A[r, i] = v
            b[r] = rhs
        return A, b

    A_eq, b_eq = stack(rows_eq)
    A_in, b_in = stack(rows_in)
    qp = QpProblem(
        n_vars=n, Q=Q, c=c, A_eq=A_eq, b_eq=b_eq, A_in=A_in, b_in=b_in,
        lb=lb, ub=ub, var_names=names,
    )
    if binaries:
        return MipProblem(qp=qp, binary_indices=binaries)
    return qp
