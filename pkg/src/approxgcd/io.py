"""Problem files and result records.

A problem file is either a JSON object::

    {"polynomials": [[1, 2, 1], [1, 0, -1]], "weights": [[1, 1, "inf"], [1, 1, 1]],
     "d": 1, "method": "image-h", "options": {"max_iter": 50}}

or line-oriented text, one item per line (``#`` starts a comment)::

    d 1
    method image-h
    1 2 1          # a bare line of numbers is a polynomial, ascending coefficients
    1 0 -1
    weights 1 1 inf
    weights 1 1 1
    option max_iter 50

``weights`` lines are matched to polynomials in order; either all or none of
the polynomials get weights.
"""
from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .poly import PolyTuple, WeightScheme

METHODS = ("image-h", "image-g", "kernel", "auto")
OPTION_KEYS = {
    "max_iter": int, "maxiter": int, "grad_tol": float, "step_tol": float, "lm_lambda0": float,
    "gamma_reg": float, "seed": int, "allow_regularization": lambda s: str(s).lower() in ("1", "true", "yes"),
    "rcond_tol": float,
}


class ProblemParseError(ValueError):
    def __init__(self, message: str, line: int | None = None, col: int | None = None):
        where = f"line {line}, column {col}: " if line is not None else ""
        super().__init__(where + message)
        self.line = line
        self.col = col


@dataclass
class ProblemFile:
    polynomials: list[list[float]]
    weights: list[list[float]] | None = None
    d: int | None = None
    method: str = "auto"
    options: dict = field(default_factory=dict)

    def tuple(self) -> PolyTuple:
        return PolyTuple(self.polynomials)

    def weight_scheme(self) -> WeightScheme:
        p = self.tuple()
        if self.weights is None:
            return WeightScheme.uniform(p.degrees)
        w = WeightScheme(self.weights)
        w.check_shape(p)
        return w


def _number(tok: str, line: int | None, col: int | None) -> float:
    low = tok.lower()
    if low in ("inf", "+inf", "infinity"):
        return math.inf
    try:
        val = float(tok)
    except ValueError:
        raise ProblemParseError(f"not a number: {tok!r}", line, col) from None
    if math.isnan(val):
        raise ProblemParseError("NaN is not allowed", line, col)
    return val


def _weight(tok, line, col) -> float:
    val = _number(str(tok), line, col) if not isinstance(tok, (int, float)) else float(tok)
    if val < 0 or (isinstance(val, float) and math.isnan(val)):
        raise ProblemParseError(f"weights must be nonnegative or inf, got {tok!r}", line, col)
    return val


def _tokens(text: str):
    """Yield ``(token, column)`` pairs (1-based columns)."""
    col = 0
    for tok in text.split():
        col = text.index(tok, col)
        yield tok, col + 1
        col += len(tok)


def _validate(pf: ProblemFile) -> ProblemFile:
    if not pf.polynomials:
        raise ProblemParseError("no polynomials given")
    if pf.method not in METHODS:
        raise ProblemParseError(f"unknown method {pf.method!r}; expected one of {', '.join(METHODS)}")
    if pf.weights is not None:
        if len(pf.weights) != len(pf.polynomials):
            raise ProblemParseError(
                f"{len(pf.weights)} weight vectors for {len(pf.polynomials)} polynomials"
            )
        for k, (w, p) in enumerate(zip(pf.weights, pf.polynomials)):
            if len(w) != len(p):
                raise ProblemParseError(f"weight vector {k + 1} has {len(w)} entries, polynomial has {len(p)}")
    return pf


def _parse_option(key: str, value: str, line, col):
    if key not in OPTION_KEYS:
        raise ProblemParseError(f"unknown option {key!r}", line, col)
    try:
        val = OPTION_KEYS[key](value)
    except ValueError:
        raise ProblemParseError(f"bad value {value!r} for option {key!r}", line, col) from None
    return ("max_iter" if key == "maxiter" else key), val


def parse_problem_text(text: str) -> ProblemFile:
    if text.lstrip().startswith("{"):
        return parse_problem_json(text)
    pf = ProblemFile(polynomials=[])
    weights = []
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0]
        toks = list(_tokens(line))
        if not toks:
            continue
        head, hcol = toks[0]
        key = head.lower()
        rest = toks[1:]
        if key == "d":
            if len(rest) != 1:
                raise ProblemParseError("'d' takes exactly one integer", lineno, hcol)
            tok, col = rest[0]
            try:
                pf.d = int(tok)
            except ValueError:
                raise ProblemParseError(f"d must be an integer, got {tok!r}", lineno, col) from None
        elif key == "method":
            if len(rest) != 1:
                raise ProblemParseError("'method' takes one name", lineno, hcol)
            pf.method = rest[0][0]
            if pf.method not in METHODS:
                raise ProblemParseError(f"unknown method {pf.method!r}", lineno, rest[0][1])
        elif key == "weights":
            if not rest:
                raise ProblemParseError("empty weight vector", lineno, hcol)
            weights.append([_weight(tok, lineno, col) for tok, col in rest])
        elif key == "option":
            if len(rest) != 2:
                raise ProblemParseError("'option' takes a name and a value", lineno, hcol)
            k, v = _parse_option(rest[0][0], rest[1][0], lineno, rest[0][1])
            pf.options[k] = v
        else:
            coeffs = [_number(tok, lineno, col) for tok, col in toks]
            if any(math.isinf(c) for c in coeffs):
                raise ProblemParseError("polynomial coefficients must be finite", lineno, hcol)
            pf.polynomials.append(coeffs)
    if weights:
        pf.weights = weights
    return _validate(pf)


def parse_problem_json(text: str) -> ProblemFile:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ProblemParseError(exc.msg, exc.lineno, exc.colno) from None
    if not isinstance(doc, dict):
        raise ProblemParseError("top-level JSON value must be an object")
    polys = doc.get("polynomials") or doc.get("p_hat")
    if not isinstance(polys, list) or not all(isinstance(p, list) for p in polys):
        raise ProblemParseError("'polynomials' must be a list of coefficient lists")
    try:
        polys = [[_number(str(c), None, None) if isinstance(c, str) else float(c) for c in p] for p in polys]
    except (TypeError, ValueError) as exc:
        raise ProblemParseError(str(exc)) from None
    weights = doc.get("weights")
    if weights is not None:
        weights = [[_weight(t, None, None) for t in w] for w in weights]
    options = {}
    for k, v in (doc.get("options") or {}).items():
        kk, vv = _parse_option(k, str(v), None, None)
        options[kk] = vv
    d = doc.get("d")
    pf = ProblemFile(polys, weights, None if d is None else int(d), doc.get("method", "auto"), options)
    return _validate(pf)


def read_problem(path) -> ProblemFile:
    with open(path, encoding="utf-8") as fh:
        return parse_problem_text(fh.read())


def _clean(x):
    """Arrays and numpy scalars to plain Python for JSON."""
    if isinstance(x, np.ndarray):
        return [_clean(v) for v in x.tolist()]
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, np.generic):
        return x.item()
    return x


@dataclass
class ResultRecord:
    method: str
    d: int
    objective: float
    euclid_dist: float
    iterations: int
    status: str
    regularized: bool
    certificate: float
    feasibility: float | None
    h_hat: list[float]
    g_hat: list[list[float]]
    p_hat: list[list[float]]
    flags: list[str] = field(default_factory=list)

    @classmethod
    def from_result(cls, res) -> "ResultRecord":
        return cls(
            method=res.method, d=int(res.d), objective=float(res.objective),
            euclid_dist=float(res.euclid_dist), iterations=int(res.iterations), status=res.status,
            regularized=bool(res.regularized), certificate=float(res.certificate),
            feasibility=float(res.feasibility) if getattr(res, "feasibility", None) is not None else None,
            h_hat=_clean(res.h_hat.coeffs), g_hat=[_clean(g.coeffs) for g in res.g_hat],
            p_hat=[_clean(p.coeffs) for p in res.p_hat], flags=list(res.flags),
        )

    def to_json(self) -> str:
        # json uses repr() for floats: shortest round-trip decimal
        return json.dumps(asdict(self), allow_nan=True)

    @classmethod
    def from_json(cls, text: str) -> "ResultRecord":
        return cls(**json.loads(text))

    def summary(self) -> str:
        return (
            f"{self.method} d={self.d} status={self.status} iter={self.iterations} "
            f"objective={self.objective:.6e} dist={self.euclid_dist:.6e}"
            + (" regularized" if self.regularized else "")
        )
