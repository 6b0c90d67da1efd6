"""Boundary-condition perturbations of the switchback family.

The model problem is u'' + (n-1)/x u' + u u' + delta*(u')**2 = 0 with
u(eps) = 1 - a, u(inf) = 1, expanded in the switching parameter a.  The
series lives in a small dedicated basis of exponentials and exponential
integrals e_n(j*x); the second-order remainder is built by explicit
integrating-factor quadratures and verified symbolically against the
order-two equation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Optional

import numpy as np
from scipy import special as _sp

from .exprcore import Expr, Poly
from .pertseries import ConstantInfo, PerturbationSeries
from . import ftflow


def exp_integral(n: int, x):
    """e_n(x) = integral_x^inf rho**(-n) exp(-rho) drho, x > 0.

    Relative accuracy ~1e-12 over the working range; the small-x logarithmic
    behaviour of e_1 and the exponentially small tails are inherited from the
    underlying scaled exponential-integral evaluation.
    """
    if n < 1:
        raise ValueError("n must be a positive integer")
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0):
        raise ValueError("exp_integral requires x > 0")
    out = x ** (1 - n) * _sp.expn(n, x)
    return float(out) if out.ndim == 0 else out


# ---------------------------------------------------------------------------
# Small closed basis: coeff * x^p * exp(r*x) * prod e_1(j*x)^m.

@dataclass(frozen=True)
class SwTerm:
    coeff: Poly
    xpow: int
    erate: int
    e1pows: tuple          # tuple[(scale j, power m), ...] sorted

    def key(self):
        return (self.xpow, self.erate, self.e1pows, self.coeff.key())


class SwExpr:
    """Canonical sum of SwTerm; closed under +, *, d/dx."""

    __slots__ = ("terms",)

    def __init__(self, terms=()):
        acc = {}
        for t in terms:
            if t.coeff.is_zero():
                continue
            k = (t.xpow, t.erate, t.e1pows)
            if k in acc:
                acc[k] = SwTerm(acc[k].coeff + t.coeff, *k)
            else:
                acc[k] = t
        self.terms = tuple(sorted((t for t in acc.values()
                                   if not t.coeff.is_zero()),
                                  key=SwTerm.key))

    @staticmethod
    def num(q) -> "SwExpr":
        return SwExpr([SwTerm(Poly.num(Fraction(q)), 0, 0, ())])

    @staticmethod
    def sym(name: str) -> "SwExpr":
        return SwExpr([SwTerm(Poly.sym(name), 0, 0, ())])

    @staticmethod
    def atom(coeff=1, xpow=0, erate=0, e1pows=()) -> "SwExpr":
        c = coeff if isinstance(coeff, Poly) else Poly.num(Fraction(coeff))
        return SwExpr([SwTerm(c, xpow, erate, tuple(sorted(e1pows)))])

    def __add__(self, other):
        return SwExpr(self.terms + other.terms)

    def __neg__(self):
        return SwExpr([SwTerm(-t.coeff, t.xpow, t.erate, t.e1pows)
                       for t in self.terms])

    def __sub__(self, other):
        return self + (-other)

    def __mul__(self, other):
        out = []
        for a in self.terms:
            for b in other.terms:
                d = dict(a.e1pows)
                for j, m in b.e1pows:
                    d[j] = d.get(j, 0) + m
                out.append(SwTerm(a.coeff * b.coeff, a.xpow + b.xpow,
                                  a.erate + b.erate,
                                  tuple(sorted((j, m) for j, m in d.items()
                                               if m))))
        return SwExpr(out)

    def __eq__(self, other):
        return isinstance(other, SwExpr) and self.terms == other.terms

    def is_zero(self):
        return not self.terms

    def diff(self) -> "SwExpr":
        out = []
        for t in self.terms:
            if t.xpow:
                out.append(SwTerm(t.coeff.scale(t.xpow), t.xpow - 1, t.erate,
                                  t.e1pows))
            if t.erate:
                out.append(SwTerm(t.coeff.scale(t.erate), t.xpow, t.erate,
                                  t.e1pows))
            for j, m in t.e1pows:
                # d/dx e1(j*x) = -exp(-j*x)/x
                d = dict(t.e1pows)
                if m == 1:
                    del d[j]
                else:
                    d[j] = m - 1
                out.append(SwTerm(t.coeff.scale(-m), t.xpow - 1, t.erate - j,
                                  tuple(sorted(d.items()))))
        return SwExpr(out)

    def eval(self, x: float, env: dict) -> float:
        total = 0.0
        for t in self.terms:
            v = t.coeff.eval(env).real * x ** t.xpow * math.exp(t.erate * x)
            for j, m in t.e1pows:
                v *= exp_integral(1, j * x) ** m
            total += v
        return total

    def subs(self, env: dict) -> "SwExpr":
        return SwExpr([SwTerm(t.coeff.subs_num(env), t.xpow, t.erate,
                              t.e1pows) for t in self.terms])

    def text(self) -> str:
        from .textform import poly_text
        if not self.terms:
            return "0"
        parts = []
        for t in self.terms:
            fs = []
            if t.xpow:
                fs.append("x" if t.xpow == 1 else f"x^{t.xpow}")
            if t.erate:
                fs.append(f"exp({t.erate}*x)" if t.erate != -1 else "exp(-x)")
            for j, m in t.e1pows:
                base = f"e1({j}*x)" if j != 1 else "e1(x)"
                fs.append(base if m == 1 else base + f"^{m}")
            c = poly_text(t.coeff)
            if fs and c == "1":
                txt = "*".join(fs)
            elif fs and c == "-1":
                txt = "-" + "*".join(fs)
            elif fs:
                cc = c if t.coeff.single() is not None else "(" + c + ")"
                txt = cc + "*" + "*".join(fs)
            else:
                txt = c if t.coeff.single() is not None else "(" + c + ")"
            if parts:
                parts.append(" - " + txt[1:] if txt.startswith("-")
                             else " + " + txt)
            else:
                parts.append(txt)
        return "".join(parts)


def sw_antiderivative(e: SwExpr) -> SwExpr:
    """Antiderivative via a closed rule table; raises on unknown shapes."""
    out = []
    for t in e.terms:
        c, p, r, e1 = t.coeff, t.xpow, t.erate, dict(t.e1pows)
        if not e1:
            if r == 0 and p >= 0:
                out.append(SwTerm(c.scale(Fraction(1, p + 1)), p + 1, 0, ()))
                continue
            if r != 0 and p == 0:
                out.append(SwTerm(c.scale(Fraction(1, r)), 0, r, ()))
                continue
            if r != 0 and p == -1:
                # int exp(r*x)/x dx = -e1(-r*x) for r < 0
                if r < 0:
                    out.append(SwTerm(-c, 0, 0, ((-r, 1),)))
                    continue
        elif e1 == {1: 1}:
            if r == 0 and p == 0:
                # int e1 = x*e1(x) - exp(-x)
                out.append(SwTerm(c, 1, 0, ((1, 1),)))
                out.append(SwTerm(-c, 0, -1, ()))
                continue
            if r == -1 and p == 0:
                # int e1*exp(-x) = -e1(x)*exp(-x) + e1(2x)
                out.append(SwTerm(-c, 0, -1, ((1, 1),)))
                out.append(SwTerm(c, 0, 0, ((2, 1),)))
                continue
            if r == -1 and p == -1:
                # int e1*exp(-x)/x = -e1(x)^2/2
                out.append(SwTerm(c.scale(Fraction(-1, 2)), 0, 0, ((1, 2),)))
                continue
        raise ValueError(f"no antiderivative rule for term {SwExpr([t]).text()}")
    return SwExpr(out)


# ---------------------------------------------------------------------------
# The switchback series.

@dataclass
class SwitchbackProblem:
    n: int                  # space dimension, 2 or 3
    delta: int              # 0 or 1
    eps: float              # inner radius
    a: float = 1.0          # boundary-condition switching parameter
    order: int = 2

    def __post_init__(self):
        if self.n not in (2, 3) or self.delta not in (0, 1):
            raise ValueError("supported problems have n in {2,3}, delta in {0,1}")
        if self.eps <= 0:
            raise ValueError("inner radius must be positive")

    def rhs_log(self):
        """First-order system in the log coordinate xi = ln(x).

        u_xixi + x*u*u_xi + delta*u_xi**2 + (n-2)*u_xi = 0, removing the 1/x
        singularity for the shooting oracle.
        """
        n, delta = self.n, self.delta
        def rhs(xi, y):
            x = math.exp(xi)
            u, up = y
            return np.array([up, -(x * u * up + delta * up * up
                                   + (n - 2) * up)])
        return rhs


@dataclass
class SwitchbackSeries:
    """Orders in a; order 0 is the constant 1."""

    problem: SwitchbackProblem
    orders: list                  # SwExpr for n=2; callables for n=3
    constants: dict               # fixed constant values per order

    def evaluate(self, x, a: Optional[float] = None):
        a = self.problem.a if a is None else a
        x = np.asarray(x, dtype=float)
        total = np.zeros_like(x)
        for j, term in enumerate(self.orders):
            if callable(term):
                vals = np.array([term(float(xx)) for xx in np.atleast_1d(x)])
            else:
                vals = np.array([term.eval(float(xx), self.constants)
                                 for xx in np.atleast_1d(x)])
            total = total + a ** j * vals.reshape(np.shape(total))
        return float(total) if total.ndim == 0 else total


def second_order_remainder(eps: float):
    """Symbolic order-two solution for n=2, delta=1 with constants A, B, C2, C3.

    Built by two integrating-factor quadratures from the substituted
    first-order solution u1 = A + B*e1(x); verified against the order-two
    equation exactly.
    """
    A, B = SwExpr.sym("A"), SwExpr.sym("B")
    u1 = A + B * SwExpr.atom(e1pows=((1, 1),))
    du1 = u1.diff()
    rhs2 = -(u1 * du1) - du1 * du1
    # v' + (1 + 1/x) v = rhs2; integrating factor x*exp(x)
    xfac = SwExpr.atom(xpow=1, erate=1)
    g = sw_antiderivative(rhs2 * xfac)
    v = (g + SwExpr.sym("C2")) * SwExpr.atom(xpow=-1, erate=-1)
    u2 = sw_antiderivative(v) + SwExpr.sym("C3")
    # exact verification of the order-2 equation
    du2 = u2.diff()
    residual = (du2.diff() + SwExpr.atom(xpow=-1) * du2 + du2) - rhs2
    if not residual.is_zero():
        raise AssertionError("second-order quadrature failed verification")
    return u2


def _fix_second_order_constants(u2: SwExpr, eps: float, aval: float):
    """Boundary conditions u2(eps) = 0, u2(inf) = 0 pin C2, C3."""
    e1e = exp_integral(1, eps)
    env = {"A": 0.0, "B": -1.0 / e1e, "C3": 0.0, "C2": 0.0}
    # all non-constant basis functions vanish at infinity, so C3 = 0
    base = u2.eval(eps, env)
    env["C2"] = base / e1e          # u2 contains -C2*e1(x)
    if abs(u2.eval(eps, env)) > 1e-10 * max(1.0, abs(base)):
        raise AssertionError("second-order boundary fit failed")
    return env


def switchback_series(p: SwitchbackProblem) -> SwitchbackSeries:
    """Regular series in a: order 0 is 1, order 1 is -e_{n-1}(x)/e_{n-1}(eps)."""
    if p.order > 2:
        raise ValueError("switchback series implemented to order 2")
    if p.order == 2 and not (p.n == 2 and p.delta == 1):
        raise ValueError("order 2 is implemented for the n=2, delta=1 problem")
    orders = [SwExpr.num(1) if p.n == 2 else (lambda x: 1.0)]
    constants = {}
    if p.order >= 1:
        m = p.n - 1
        scale = -1.0 / exp_integral(m, p.eps)
        if p.n == 2:
            orders.append(SwExpr.atom(Poly.sym("B"), e1pows=((1, 1),))
                          + SwExpr.sym("A"))
            constants.update({"A": 0.0, "B": scale})
        else:
            orders.append(lambda x, s=scale: s * exp_integral(2, x))
    if p.order >= 2:
        u2 = second_order_remainder(p.eps)
        constants.update(_fix_second_order_constants(u2, p.eps, p.a))
        orders.append(u2)
    return SwitchbackSeries(p, orders, constants)


# ---------------------------------------------------------------------------
# Most-divergent summation and the closed asymptotic form.

@dataclass
class LogClosedForm:
    """u(x) = 1 + log(1 + s*e1(x)); the exact sum of the most divergent terms."""

    eps: float
    a: float
    s: float                      # coefficient of e1(x) inside the logarithm
    route: str

    def text(self) -> str:
        return "1 + log(1 + s*e1(x)) with s = (exp(-a) - 1)/e1(eps)"

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        e1x = exp_integral(1, x) if x.ndim else exp_integral(1, float(x))
        return 1.0 + np.log(1.0 + self.s * e1x)

    def radius_of_convergence(self, x: float) -> float:
        """Radius in a of the most-divergent series with the first-order B."""
        return exp_integral(1, self.eps) / exp_integral(1, x)


def most_divergent_sum(p: SwitchbackProblem) -> LogClosedForm:
    """Sum the most divergent terms of every order in closed form.

    The coefficients c_n = 1/n make the sum a logarithm; the boundary
    condition at x = eps then fixes the log argument.  The partial sums and
    the convergence radius are exposed for verification.
    """
    if not (p.n == 2 and p.delta == 1):
        raise ValueError("the most-divergent sum targets the n=2, delta=1 problem")
    # u = 1 + log(1 + a*B*e1(x)); u(eps) = 1 - a  =>  a*B = (exp(-a)-1)/e1(eps)
    s = math.expm1(-p.a) / exp_integral(1, p.eps)
    return LogClosedForm(p.eps, p.a, s, route="series-sum")


def most_divergent_partial_sum(z: float, nterms: int) -> float:
    """sum_{n=1..N} (-1)**(n+1) z**n / n, the series behind the closed form."""
    total = 0.0
    for n in range(1, nterms + 1):
        total += (-1) ** (n + 1) * z ** n / n
    return total


def terrible_hidden_scale(eps: float, a: float) -> LogClosedForm:
    """Derive the closed form by the hidden-scale route in tau = e1(x).

    Builds the most-divergent series u = 1 + a*(A + B*tau) - a^2/2*B^2*tau^2,
    paints, derives the flow equations, integrates them in closed form and
    imposes the boundary conditions on the transported special solution.
    """
    if not (0 < a <= 1):
        raise ValueError("switching parameter must lie in (0, 1]")
    tau = Expr.var("tauv")
    A, B = Expr.sym("A"), Expr.sym("B")
    orders = [Expr.num(1), A + B * tau,
              (B ** 2 * tau ** 2).scale(Fraction(-1, 2))]
    series = PerturbationSeries(orders, [ConstantInfo("A", 1, "param"),
                                         ConstantInfo("B", 1, "param")],
                                "a", "tauv")
    series.asymptotic_only = True
    ps = ftflow.paint(series, n_derivs=1)
    ft = ftflow.derive_ft_system(ps, 2)
    flows = ftflow.integrate_orbits(ft, "tauv")
    fB, fA = flows.flows["B"], flows.flows["A"]
    if fB.kind != "powerlaw" or fA.kind != "quad":
        raise AssertionError("unexpected flow structure for the tau series")
    special = ps.special_solution()
    if special != Expr.num(1) + Expr.sym("a") * A:
        raise AssertionError("unexpected special solution for the tau series")
    # u = 1 + a*(A~ + scale*log(1 + inner*tau)); a*scale must reduce to 1
    prefactor = Expr.sym("a") * fA.scale
    if prefactor != Expr.num(1):
        raise AssertionError("log prefactor does not reduce to unity")
    # boundary conditions: tau(x=inf) = 0 gives A~ = 0; at x = eps,
    # 1 + log(1 + a*B~*e1(eps)) = 1 - a pins a*B~ (independent Newton solve)
    e1e = exp_integral(1, eps)
    s = _solve_log_bc(e1e, a)
    return LogClosedForm(eps, a, s, route="hidden-scale")


def _solve_log_bc(e1e: float, a: float) -> float:
    """Solve log(1 + s*e1(eps)) = -a for s by safeguarded Newton."""
    s = -a / (2.0 * e1e)
    for _ in range(80):
        g = math.log1p(s * e1e) + a
        dg = e1e / (1.0 + s * e1e)
        step = g / dg
        s_new = s - step
        while 1.0 + s_new * e1e <= 0:
            step *= 0.5
            s_new = s - step
        if abs(s_new - s) < 1e-16 * max(1.0, abs(s)):
            s = s_new
            break
        s = s_new
    if abs(math.log1p(s * e1e) + a) > 1e-12:
        raise RuntimeError("boundary solve for the log coefficient failed")
    return s


def terrible_ft_equations(eps: float = 1e-4, a: float = 1.0):
    """The flow system for the tau-variable series (for inspection/tests)."""
    tau = Expr.var("tauv")
    A, B = Expr.sym("A"), Expr.sym("B")
    orders = [Expr.num(1), A + B * tau,
              (B ** 2 * tau ** 2).scale(Fraction(-1, 2))]
    series = PerturbationSeries(orders, [ConstantInfo("A", 1, "param"),
                                         ConstantInfo("B", 1, "param")],
                                "a", "tauv")
    ps = ftflow.paint(series, n_derivs=1)
    return ftflow.derive_ft_system(ps, 2)
