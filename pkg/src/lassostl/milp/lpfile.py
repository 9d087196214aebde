"""CPLEX LP-format reader/writer for MilpInstance.

Every variable gets an explicit line in the Bounds section so that reading a
written file restores the original variable order.  The objective constant,
which the format cannot carry portably, travels in a comment line.
"""

from __future__ import annotations

import math
import re

from .model import BINARY, CONTINUOUS, MilpInstance

_TERMS_PER_LINE = 8


def _num(v: float) -> str:
    if math.isinf(v):
        return "+inf" if v > 0 else "-inf"
    return repr(float(v))


def _expr(coeffs: dict[int, float], names: list[str], fallback: str | None) -> list[str]:
    items = [(names[j], v) for j, v in coeffs.items()]
    if not items:
        if fallback is None:
            return ["0"]
        items = [(fallback, 0.0)]
    parts = []
    for k, (nm, v) in enumerate(items):
        sign = "-" if v < 0 or (v == 0 and math.copysign(1, v) < 0) else "+"
        parts.append(f"{sign} {_num(abs(v))} {nm}")
    lines = []
    for k in range(0, len(parts), _TERMS_PER_LINE):
        lines.append(" ".join(parts[k:k + _TERMS_PER_LINE]))
    return lines


def export_lp(inst: MilpInstance, path=None) -> str:
    names = [v.name for v in inst.variables]
    first = names[0] if names else None
    out = [f"\\ Problem: {inst.name}"]
    if inst.objective_constant:
        out.append(f"\\ objective_constant: {_num(inst.objective_constant)}")
    out.append("Minimize")
    obj = _expr(inst.objective, names, first)
    out.append(" obj: " + obj[0])
    out += ["   " + ln for ln in obj[1:]]
    out.append("Subject To")
    for con in inst.constraints:
        body = _expr(con.coeffs, names, first)
        sense = {"<=": "<=", ">=": ">=", "=": "="}[con.sense]
        body[-1] += f" {sense} {_num(con.rhs)}"
        out.append(f" {con.name}: " + body[0])
        out += ["   " + ln for ln in body[1:]]
    out.append("Bounds")
    for v in inst.variables:
        if math.isinf(v.lb) and v.lb < 0 and math.isinf(v.ub) and v.ub > 0:
            out.append(f" {v.name} free")
        elif v.lb == v.ub:
            out.append(f" {v.name} = {_num(v.lb)}")
        else:
            out.append(f" {_num(v.lb)} <= {v.name} <= {_num(v.ub)}")
    bins = [v.name for v in inst.variables if v.kind == BINARY]
    if bins:
        out.append("Binaries")
        for k in range(0, len(bins), 10):
            out.append(" " + " ".join(bins[k:k + 10]))
    out.append("End")
    text = "\n".join(out) + "\n"
    if path is not None:
        with open(path, "w") as fh:
            fh.write(text)
    return text


_SECTIONS = {
    "minimize": "obj", "minimum": "obj", "min": "obj",
    "maximize": "max", "maximum": "max", "max": "max",
    "subject": "st", "st": "st", "s.t.": "st", "such": "st",
    "bounds": "bounds", "bound": "bounds",
    "binaries": "bin", "binary": "bin", "bin": "bin",
    "generals": "gen", "general": "gen", "gen": "gen",
    "end": "end",
}
_NUMERIC = re.compile(r"^(?:\d+\.?\d*|\.\d+)(?:[eE][+-]?\d+)?$")


class LPFormatError(ValueError):
    pass


def _tokens(text: str) -> list[str]:
    toks = []
    pos = 0
    while pos < len(text):
        m = re.compile(r"\s+").match(text, pos)
        if m:
            pos = m.end()
            continue
        m = re.compile(r"(\d+\.?\d*|\.\d+)([eE][+-]?\d+)?").match(text, pos)
        if m:
            toks.append(m.group(0)); pos = m.end(); continue
        m = re.compile(r"<=|>=|=<|=>|[<>=+\-:]").match(text, pos)
        if m:
            toks.append(m.group(0)); pos = m.end(); continue
        m = re.compile(r"[A-Za-z_][\w.\[\]#$]*").match(text, pos)
        if m:
            toks.append(m.group(0)); pos = m.end(); continue
        raise LPFormatError(f"unexpected character {text[pos]!r}")
    return toks


def _parse_linear(toks: list[str]):
    """Parse ``[+-] [coef] name ...`` into (coeffs by name, trailing tokens)."""
    coeffs: dict[str, float] = {}
    k = 0
    while k < len(toks):
        sign = 1.0
        while k < len(toks) and toks[k] in ("+", "-"):
            if toks[k] == "-":
                sign = -sign
            k += 1
        if k >= len(toks):
            break
        coef = 1.0
        if _NUMERIC.match(toks[k]):
            if k + 1 < len(toks) and re.match(r"[A-Za-z_]", toks[k + 1]):
                coef = float(toks[k]); k += 1
            else:
                # constant term; caller decides what to do
                coeffs.setdefault("__const__", 0.0)
                coeffs["__const__"] += sign * float(toks[k]); k += 1
                continue
        if toks[k] in ("inf", "infinity") or not re.match(r"[A-Za-z_]", toks[k]):
            raise LPFormatError(f"expected variable name, got {toks[k]!r}")
        coeffs[toks[k]] = coeffs.get(toks[k], 0.0) + sign * coef
        k += 1
    return coeffs


def _val(tok_sign: str, tok: str) -> float:
    s = -1.0 if tok_sign == "-" else 1.0
    t = tok.lower()
    if t in ("inf", "infinity"):
        return s * math.inf
    return s * float(tok)


def import_lp(source: str, name: str | None = None) -> MilpInstance:
    """Read LP text (or a path to an LP file)."""
    try:
        return _import_lp(source, name)
    except LPFormatError:
        raise
    except (IndexError, KeyError, ValueError) as exc:
        raise LPFormatError(f"malformed LP text ({type(exc).__name__}: {exc})") from None


def _import_lp(source: str, name: str | None) -> MilpInstance:
    if "\n" not in source and not source.lstrip().lower().startswith(("min", "max", "\\")):
        with open(source) as fh:
            text = fh.read()
    else:
        text = source
    constant = 0.0
    lines = []
    for raw in text.splitlines():
        if raw.strip().startswith("\\"):
            m = re.match(r"\\\s*objective_constant:\s*(\S+)", raw.strip())
            if m:
                constant = float(m.group(1))
            m = re.match(r"\\\s*Problem:\s*(\S+)", raw.strip())
            if m and name is None:
                name = m.group(1)
            continue
        lines.append(raw.split("\\")[0])
    # group into sections
    section, chunks = None, {"obj": [], "max": [], "st": [], "bounds": [], "bin": [], "gen": []}
    for ln in lines:
        s = ln.strip()
        if not s:
            continue
        head = s.split()[0].lower()
        if head in _SECTIONS and not re.match(r"^\S+\s*:", s):
            sec = _SECTIONS[head]
            if sec == "st" and head in ("subject", "such"):
                s = re.sub(r"^\s*(subject\s+to|such\s+that)", "", s, flags=re.I)
            else:
                s = s[len(s.split()[0]):]
            section = sec
            if section == "end":
                break
            if s.strip():
                chunks[section].append(s)
            continue
        if section is None:
            raise LPFormatError(f"content before any section: {s!r}")
        chunks[section].append(s)
    if chunks["max"]:
        raise LPFormatError("maximization problems are not supported")
    order: list[str] = []
    seen: set[str] = set()
    bounds: dict[str, list[float]] = {}
    for ln in chunks["bounds"]:
        t = _tokens(ln)
        if len(t) == 2 and t[1].lower() == "free":
            bounds[t[0]] = [-math.inf, math.inf]; nm = t[0]
        else:
            nm = _parse_bound(t, bounds)
        if nm not in seen:
            seen.add(nm); order.append(nm)

    def note(nm):
        if nm not in seen:
            seen.add(nm); order.append(nm)

    obj_toks = _tokens(" ".join(chunks["obj"]))
    if len(obj_toks) >= 2 and obj_toks[1] == ":":
        obj_toks = obj_toks[2:]
    obj = _parse_linear(obj_toks)
    constant += obj.pop("__const__", 0.0)
    for nm in obj:
        note(nm)
    cons = []
    st = _tokens(" ".join(chunks["st"]))
    k = 0
    count = 0
    while k < len(st):
        cname = None
        if k + 1 < len(st) and st[k + 1] == ":":
            cname = st[k]; k += 2
        j = k
        while j < len(st) and st[j] not in ("<=", ">=", "=<", "=>", "<", ">", "="):
            j += 1
        if j >= len(st):
            raise LPFormatError("constraint without a sense")
        body = _parse_linear(st[k:j])
        sense = {"<=": "<=", "=<": "<=", "<": "<=", ">=": ">=", "=>": ">=", ">": ">=", "=": "="}[st[j]]
        j += 1
        sgn = "+"
        if st[j] in ("+", "-"):
            sgn = st[j]; j += 1
        rhs = _val(sgn, st[j]) - body.pop("__const__", 0.0)
        k = j + 1
        for nm in body:
            note(nm)
        cons.append((cname or f"c{count}", body, sense, rhs))
        count += 1
    binaries = set()
    for ln in chunks["bin"] + chunks["gen"]:
        for nm in ln.split():
            binaries.add(nm); note(nm)
    inst = MilpInstance(name or "milp")
    idx = {}
    for nm in order:
        lo, hi = bounds.get(nm, [0.0, math.inf])
        kind = BINARY if nm in binaries else CONTINUOUS
        if kind == BINARY and nm not in bounds:
            lo, hi = 0.0, 1.0
        idx[nm] = inst.add_var(nm, lo, hi, kind)
    for cname, body, sense, rhs in cons:
        inst.add_constraint({idx[nm]: v for nm, v in body.items()}, sense, rhs, cname)
    inst.set_objective({idx[nm]: v for nm, v in obj.items()}, constant)
    return inst


def _parse_bound(t: list[str], bounds) -> str:
    """Handle ``a <= x <= b``, ``x <= b``, ``x >= a``, ``x = v`` and ``a <= x``."""
    def num_at(k):
        if t[k] in ("+", "-"):
            return _val(t[k], t[k + 1]), k + 2
        return _val("+", t[k]), k + 1

    def is_name(tok):
        return re.match(r"[A-Za-z_]", tok) and tok.lower() not in ("inf", "infinity")

    if is_name(t[0]):
        nm = t[0]
        b = bounds.setdefault(nm, [0.0, math.inf])
        op = t[1]
        v, _ = num_at(2)
        if op in ("<=", "=<", "<"):
            b[1] = v
        elif op in (">=", "=>", ">"):
            b[0] = v
        else:
            b[0] = b[1] = v
        return nm
    v1, k = num_at(0)
    op1 = t[k]; nm = t[k + 1]
    b = bounds.setdefault(nm, [0.0, math.inf])
    if op1 in ("<=", "=<", "<"):
        b[0] = v1
    else:
        b[1] = v1
    if k + 2 < len(t):
        op2 = t[k + 2]
        v2, _ = num_at(k + 3)
        if op2 in ("<=", "=<", "<"):
            b[1] = v2
        else:
            b[0] = v2
    return nm
