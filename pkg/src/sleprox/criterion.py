"""Boundary functions h, the transform Lambda_kappa^h and the integral test.

Lambda_kappa^h(x) = h(x)^(s-1) for kappa < 4 and 1/log((x/h(x)) v 2) for
kappa = 4.  The curve stays away from the graph of h at infinity exactly
when int_r^oo Lambda(x) x^-s dx converges.

The test integrates over dyadic blocks.  For the families of interest the
block integrals behave like a power of the block position, so the log2
ratio of consecutive blocks settles to a slope: clearly negative means
summable, clearly positive means divergent.  A slope that settles near 0
(block integrals slowly varying) is undecided at that level, and the test
moves to the next iterated-log variable: with y_0 = x and y_j = log y_{j-1},
level L integrates over dyadic blocks in y_{L-1}, where the integrand is

    f_L = Lambda x^-s y_0 y_1 ... y_{L-2}.

Built-in families evaluate log f_L in closed form so that levels whose x is
far beyond floating range stay exact.
"""

from __future__ import annotations

import ast
import math
import operator
from dataclasses import dataclass, field, replace

import numpy as np

LOG2 = math.log(2.0)
_GL_U, _GL_W = np.polynomial.legendre.leggauss(32)


class CriterionDomainError(ValueError):
    pass


class ParseError(ValueError):
    def __init__(self, msg, pos):
        super().__init__(f"{msg} at position {pos}")
        self.pos = pos


def _tower(level, v):
    """y_0..y_{level+1} as floats given y_{level-1} = v (inf/nan where out of range)."""
    ys = [math.nan] * (level + 2)
    ys[level - 1] = v
    for j in range(level - 2, -1, -1):
        nxt = ys[j + 1]
        ys[j] = math.exp(nxt) if nxt < 709.0 else math.inf
    for j in range(level, level + 2):
        prev = ys[j - 1]
        ys[j] = math.log(prev) if prev > 0 else math.nan
    return ys


@dataclass(frozen=True)
class BoundaryFunction:
    """h on [r, oo).  family in {powlog, itloglog, const, custom}.

    powlog:    h = scale * x / (log x)^beta
    itloglog:  h = scale * x^(-(log log x)^alpha)
    const:     h = c
    custom:    h given by a restricted expression in x (see `parse_expr`)
    """

    family: str
    params: dict = field(default_factory=dict)
    r: float = 2.0
    clipped: bool = False
    expr: object = None
    hint: object = None

    def __post_init__(self):
        if not self.r > 1:
            raise CriterionDomainError(f"r must exceed 1, got {self.r}")
        if self.family not in ("powlog", "itloglog", "const", "custom"):
            raise CriterionDomainError(f"unknown family {self.family!r}")

    # -- pointwise values ---------------------------------------------------
    def log_h(self, x):
        x = float(x)
        p = self.params
        if self.family == "powlog":
            lh = math.log(p.get("scale", 1.0)) + math.log(x) - p["beta"] * math.log(math.log(x))
        elif self.family == "itloglog":
            lx = math.log(x)
            lh = math.log(p.get("scale", 1.0)) - lx * math.log(lx) ** p["alpha"]
        elif self.family == "const":
            lh = math.log(p["c"])
        else:
            v = self.expr(x)
            if not (v > 0 and math.isfinite(v)):
                raise CriterionDomainError(f"custom h({x}) = {v} is not positive and finite")
            lh = math.log(v)
        if self.clipped:
            lh = min(lh, math.log(0.5 * x))
        return lh

    def __call__(self, x):
        return math.exp(self.log_h(x))

    @property
    def tag(self):
        args = ",".join(f"{k}={v!r}" for k, v in sorted(self.params.items()))
        return f"{self.family}({args})" + ("|clip" if self.clipped else "")

    # -- tower-safe integrand of the test -----------------------------------
    def log_f(self, kappa, level, v):
        """log f_level at y_{level-1} = v; None when the family cannot evaluate it."""
        s = 8.0 / kappa - 1.0
        ys = _tower(level, v)
        p = self.params
        fam = self.family
        lsc = math.log(p.get("scale", 1.0)) if fam != "const" else math.log(p["c"])
        tail = sum(ys[j] for j in range(2, level)) if level >= 3 else 0.0

        if fam == "custom" or (fam == "const" and level > 2 and kappa < 4):
            if level > 2 or not math.isfinite(ys[0]):
                return None
            x = ys[0]
            lhx = self.log_h(x) - ys[1]
            if kappa < 4:
                lf = (s - 1.0) * lhx
            else:
                lf = -math.log(max(-lhx, LOG2))
            return lf - ys[1] if level == 1 else lf

        if kappa < 4:
            if fam == "powlog":
                beta = p["beta"]
                lhx = lsc - beta * ys[2] if math.isfinite(ys[2]) else -math.inf
                clip = self.clipped and lhx > -LOG2
                if level >= 3 and not clip:
                    # (s-1) log(h/x) + y_2 + ... with the y_2 terms merged
                    coef = 1.0 - beta * (s - 1.0)
                    lin = coef * ys[2] if coef != 0.0 else 0.0
                    return (s - 1.0) * lsc + lin + sum(ys[j] for j in range(3, level))
                if clip:
                    lhx = -LOG2
            elif fam == "const":
                lhx = min(lsc - ys[1], -LOG2) if self.clipped else lsc - ys[1]
            else:  # itloglog
                if level > 1:
                    return None
                lhx = lsc - ys[1] * (1.0 + ys[2] ** p["alpha"])
                if self.clipped:
                    lhx = min(lhx, -LOG2)
            lf = (s - 1.0) * lhx
            return lf - ys[1] if level == 1 else lf + tail

        # kappa == 4: log Lambda = -log(max(log(x/h), log 2)); clipping is inert here
        if fam == "powlog":
            if not math.isfinite(ys[2]):
                return math.inf  # the linear y_2 term of the tail dominates
            ll = math.log(max(p["beta"] * ys[2] - lsc, LOG2))
        elif fam == "const":
            # log(x/h) = y_1 - log c, with y_1 = e^{y_2} possibly beyond range
            if ys[1] > 1e6:
                ll = ys[2] + math.log1p(-lsc / ys[1])
            else:
                ll = math.log(max(ys[1] - lsc, LOG2))
        else:  # itloglog: log(x/h) = y_1 (1 + y_2^alpha) - log scale
            alpha = p["alpha"]
            if level >= 4:
                # y_2 cancels against the tail: -log1p(y_2^a) + y_3 + ...,
                # with log1p(y_2^a) = a y_3 + log1p(y_2^-a)
                return (-(alpha * ys[3] + math.log1p(math.exp(-alpha * ys[3])))
                        + sum(ys[j] for j in range(3, level)))
            y2a = ys[2] ** alpha
            prod = ys[1] * (1.0 + y2a)
            if prod < 1e6:
                ll = math.log(max(prod - lsc, LOG2))
            elif level == 3:
                return -(math.log1p(y2a) + math.log1p(-lsc / prod))
            else:
                ll = ys[2] + math.log1p(y2a) + math.log1p(-lsc / prod)
        if level == 1:
            return -ll - ys[1]
        if level == 2:
            return -ll
        return -ll + tail


# ----------------------------------------------------------------------
# constructors and the family grammar


def powlog(beta, scale=1.0, r=math.e ** 2):
    return BoundaryFunction("powlog", {"beta": float(beta), "scale": float(scale)}, r)


def itloglog(alpha, scale=1.0, r=16.0):
    return BoundaryFunction("itloglog", {"alpha": float(alpha), "scale": float(scale)}, r)


def const(c, r=2.0):
    if not c > 0:
        raise CriterionDomainError("const(c) needs c > 0")
    return BoundaryFunction("const", {"c": float(c)}, r)


def custom(expr, r=2.0, hint=None):
    fn = parse_expr(expr)
    if isinstance(hint, str):
        hint = parse_family(hint)
    return BoundaryFunction("custom", {"expr": expr}, r, expr=fn, hint=hint)


def clip_half(h: BoundaryFunction) -> BoundaryFunction:
    """h v (x/2) replaced by h ^ (x/2): pointwise min with x/2."""
    return replace(h, clipped=True)


_BIN = {ast.Add: operator.add, ast.Sub: operator.sub, ast.Mult: operator.mul,
        ast.Div: operator.truediv, ast.Pow: operator.pow}
_UN = {ast.USub: operator.neg, ast.UAdd: operator.pos}
_FUN = {"log": math.log, "pow": math.pow, "exp": math.exp, "sqrt": math.sqrt}
_NAMES = {"e": math.e, "pi": math.pi}


def parse_expr(text):
    """Compile a restricted arithmetic expression in x.

    Allowed: numbers, x, e, pi, + - * / ** and unary minus, and calls to
    log, pow, exp, sqrt.  Anything else raises ParseError with its offset.
    """
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as e:
        raise ParseError(f"invalid expression {text!r}: {e.msg}", (e.offset or 1) - 1) from None

    def check(node):
        if isinstance(node, ast.Expression):
            return check(node.body)
        if isinstance(node, ast.BinOp) and type(node.op) in _BIN:
            return check(node.left) and check(node.right)
        if isinstance(node, ast.UnaryOp) and type(node.op) in _UN:
            return check(node.operand)
        if isinstance(node, ast.Constant) and isinstance(node.value, (int, float)) \
                and not isinstance(node.value, bool):
            return True
        if isinstance(node, ast.Name) and (node.id == "x" or node.id in _NAMES):
            return True
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUN and not node.keywords:
            return all(check(a) for a in node.args)
        raise ParseError(f"unsupported element {type(node).__name__}", getattr(node, "col_offset", 0))

    check(tree)

    def ev(node, x):
        if isinstance(node, ast.BinOp):
            return _BIN[type(node.op)](ev(node.left, x), ev(node.right, x))
        if isinstance(node, ast.UnaryOp):
            return _UN[type(node.op)](ev(node.operand, x))
        if isinstance(node, ast.Constant):
            return float(node.value)
        if isinstance(node, ast.Name):
            return x if node.id == "x" else _NAMES[node.id]
        return _FUN[node.func.id](*(ev(a, x) for a in node.args))

    body = tree.body

    def fn(x):
        try:
            return float(ev(body, float(x)))
        except (ValueError, ZeroDivisionError, OverflowError):
            return math.nan
    fn.source = text
    return fn


def _split_args(text, start):
    """Split 'k=v, k=v' at top-level commas; returns [(key, value, pos)]."""
    out = []
    depth = 0
    cur_start = start
    i = start
    while i <= len(text):
        ch = text[i] if i < len(text) else ","
        if ch == "(":
            depth += 1
        elif ch == ")":
            depth -= 1
            if depth < 0:
                raise ParseError("unbalanced ')'", i)
        if ch == "," and depth == 0:
            piece = text[cur_start:i]
            if piece.strip():
                if "=" not in piece:
                    raise ParseError("expected key=value", cur_start)
                k, v = piece.split("=", 1)
                out.append((k.strip(), v.strip(), cur_start))
            cur_start = i + 1
        i += 1
    if depth != 0:
        raise ParseError("unbalanced '('", len(text))
    return out


_FAMILY_KEYS = {
    "powlog": ({"beta"}, {"scale", "r"}),
    "itloglog": ({"alpha"}, {"scale", "r"}),
    "const": ({"c"}, {"r"}),
    "custom": ({"expr"}, {"r", "hint"}),
}


def parse_family(text) -> BoundaryFunction:
    """Parse name(key=value,...) with name in powlog, itloglog, const, custom.

    powlog(beta=B[,scale=S][,r=R])   itloglog(alpha=A[,scale=S][,r=R])
    const(c=C[,r=R])                 custom(expr=EXPR[,r=R][,hint=FAMILY])
    A trailing '|clip' applies clip_half.
    """
    src = text.strip()
    clip = False
    if src.endswith("|clip"):
        clip, src = True, src[:-5].rstrip()
    j = src.find("(")
    if j <= 0 or not src.endswith(")"):
        raise ParseError("expected name(key=value,...)", max(j, 0))
    name = src[:j].strip()
    if name not in _FAMILY_KEYS:
        raise ParseError(f"unknown family {name!r}", 0)
    req, opt = _FAMILY_KEYS[name]
    kv = {}
    for k, v, pos in _split_args(src[:-1], j + 1):
        if k not in req | opt:
            raise ParseError(f"unknown key {k!r} for {name}", pos)
        if k in kv:
            raise ParseError(f"duplicate key {k!r}", pos)
        if k in ("expr", "hint"):
            kv[k] = v
        else:
            try:
                kv[k] = float(v)
            except ValueError:
                raise ParseError(f"{k} must be a number, got {v!r}", pos) from None
    missing = req - kv.keys()
    if missing:
        raise ParseError(f"missing {', '.join(sorted(missing))}", len(src))
    if name == "powlog":
        h = powlog(kv["beta"], kv.get("scale", 1.0), kv.get("r", math.e ** 2))
    elif name == "itloglog":
        h = itloglog(kv["alpha"], kv.get("scale", 1.0), kv.get("r", 16.0))
    elif name == "const":
        h = const(kv["c"], kv.get("r", 2.0))
    else:
        h = custom(kv["expr"], kv.get("r", 2.0), kv.get("hint"))
    return clip_half(h) if clip else h


# ----------------------------------------------------------------------
# Lambda and regularity


def _check_kappa(kappa):
    if not 0 < kappa <= 4:
        raise CriterionDomainError(f"Lambda is defined for kappa in (0, 4], got {kappa}")


def log_lambda(h: BoundaryFunction, kappa, x):
    _check_kappa(kappa)
    if x < h.r:
        raise CriterionDomainError(f"x={x} lies below r={h.r}")
    lh = h.log_h(x)
    if kappa < 4:
        return (8.0 / kappa - 2.0) * lh
    return -math.log(max(math.log(x) - lh, LOG2))


def lambda_eval(h: BoundaryFunction, kappa, x):
    return math.exp(log_lambda(h, kappa, x))


@dataclass
class Regularity:
    value: float
    pair: tuple

    def __float__(self):
        return self.value


def regularity_sup(h: BoundaryFunction, kappa, x_max, per_window=17, n_windows=None):
    """sup Lambda(x)/Lambda(y) over r <= x <= y <= 2x <= x_max on a geometric grid."""
    if not x_max > 2 * h.r:
        raise CriterionDomainError("x_max must exceed 2r")
    ratio = 2.0 ** (1.0 / (per_window - 1))
    n = int(math.floor(math.log(x_max / h.r) / math.log(ratio))) + 1
    xs = h.r * ratio ** np.arange(n)
    xs = xs[xs <= x_max]
    try:
        ll = np.array([log_lambda(h, kappa, v) for v in xs])
    except OverflowError:
        return Regularity(math.inf, (math.nan, math.nan))
    best, pair = -math.inf, (xs[0], xs[0])
    w = per_window - 1
    for i in range(len(xs)):
        hi = min(len(xs), i + w + 1)
        j = i + int(np.argmin(ll[i:hi]))
        d = ll[i] - ll[j]
        if d > best:
            best, pair = d, (float(xs[i]), float(xs[j]))
    val = math.exp(best) if best < 709 else math.inf
    return Regularity(val, pair)


# ----------------------------------------------------------------------
# the integral test


@dataclass
class LevelResult:
    level: int
    v0: float
    log2_blocks: np.ndarray
    slope: float
    slope_prev: float
    decision: str


@dataclass
class CriterionVerdict:
    classification: str  # bounded | unbounded | inconclusive
    level: int | None
    levels: list
    regularity: Regularity | None
    note: str = ""

    @property
    def block_integrals(self):
        """log2 block integrals of the deciding (or last) level."""
        return self.levels[-1].log2_blocks if self.levels else np.array([])


def _log_block(h, kappa, level, a):
    # int_a^{2a} f(v) dv = a int_0^{ln 2} f(a e^u) e^u du, Gauss-Legendre in u
    u = 0.5 * LOG2 * (_GL_U + 1.0)
    terms = []
    for ui in u:
        lf = h.log_f(kappa, level, a * math.exp(ui))
        if lf is None:
            return None
        terms.append(lf + ui)
    terms = np.array(terms)
    if np.any(np.isnan(terms)):
        return math.nan
    return math.log(a) + math.log(0.5 * LOG2) + float(np.logaddexp.reduce(terms + np.log(_GL_W)))


def _start(h, level):
    v = h.r
    for _ in range(level - 1):
        v = math.log(v) if v > 0 else -math.inf
    return v if level == 1 else max(v, math.e)


def _classify(lb, margin):
    d = np.diff(lb)
    n = len(d)
    q = max(n // 4, 1)
    last = float(np.mean(d[-q:]))
    prev = float(np.mean(d[-2 * q:-q])) if n >= 2 * q else last
    if not (math.isfinite(last) or math.isinf(last)):
        return "unstable", last, prev
    if last == math.inf or (np.isposinf(lb[-1])):
        return "unbounded", last, prev
    if np.isneginf(lb[-1]) and np.all(np.isfinite(lb[:1])):
        return "bounded", last, prev
    stable = abs(last - prev) <= 0.25 * abs(last)
    if abs(last) >= margin and stable:
        return ("bounded" if last < 0 else "unbounded"), last, prev
    if abs(last) < margin and abs(prev) < margin:
        return "flat", last, prev
    return "unstable", last, prev


def integral_test(h: BoundaryFunction, kappa, r=None, block_count=40, margin=0.05,
                  max_level=4, reg_x_max=1e6) -> CriterionVerdict:
    """Classify int_r^oo Lambda(x) x^-s dx as bounded (finite) or unbounded."""
    _check_kappa(kappa)
    if block_count < 8:
        raise CriterionDomainError("block_count must be at least 8")
    if r is not None:
        h = replace(h, r=float(r))
    if h.family == "custom" and h.hint is not None:
        return _hinted(h, kappa, block_count, margin, max_level, reg_x_max)
    reg = regularity_sup(h, kappa, max(reg_x_max, 4 * h.r))
    levels = []
    if not math.isfinite(reg.value):
        return CriterionVerdict("inconclusive", None, levels, reg, "regularity supremum not finite")
    for level in range(1, max_level + 1):
        v0 = _start(h, level)
        lb = []
        for k in range(block_count):
            try:
                val = _log_block(h, kappa, level, v0 * 2.0 ** k)
            except (OverflowError, ValueError, ZeroDivisionError):
                val = math.nan
            if val is None:
                lb = None
                break
            lb.append(val / LOG2)
        if lb is None:
            note = f"family {h.family} cannot be evaluated at level {level}"
            return CriterionVerdict("inconclusive", None, levels, reg, note)
        lb = np.array(lb)
        if np.any(np.isnan(lb)):
            levels.append(LevelResult(level, v0, lb, math.nan, math.nan, "failed"))
            return CriterionVerdict("inconclusive", None, levels, reg, "quadrature failure")
        decision, last, prev = _classify(lb, margin)
        levels.append(LevelResult(level, v0, lb, last, prev, decision))
        if decision in ("bounded", "unbounded"):
            return CriterionVerdict(decision, level, levels, reg)
    return CriterionVerdict("inconclusive", None, levels, reg, f"no stable slope up to level {max_level}")


def _hinted(h, kappa, block_count, margin, max_level, reg_x_max, factor=4.0, x_hi=1e12):
    # custom h is judged through its declared envelope once h/h_env is
    # confirmed to stay within [1/factor, factor] on a geometric grid
    env = replace(h.hint, r=h.r, clipped=h.clipped)
    xs = np.geomspace(h.r, x_hi, 400)
    ratios = np.array([h.log_h(v) - env.log_h(v) for v in xs])
    reg = regularity_sup(h, kappa, max(reg_x_max, 4 * h.r))
    if not (np.all(np.isfinite(ratios)) and np.max(np.abs(ratios)) <= math.log(factor)):
        return CriterionVerdict("inconclusive", None, [], reg,
                                f"h leaves the hinted envelope {env.tag} by more than x{factor:g}")
    v = integral_test(env, kappa, None, block_count, margin, max_level, reg_x_max)
    if not math.isfinite(reg.value):
        return CriterionVerdict("inconclusive", None, v.levels, reg, "regularity supremum not finite")
    return CriterionVerdict(v.classification, v.level, v.levels, reg, f"via envelope {env.tag}")
