"""Exact truncated multivariate power series ("jets") over the rationals.

A :class:`Ring` fixes the number of variables and a family of *filtrations*.
Filtration 0 is always the total degree; further filtrations are weighted
degrees with 0/1 weights per variable (for instance the number of descendent
variables in a monomial).  Each filtration has a cap: monomials exceeding any
cap are discarded, i.e. a ring is the quotient of the polynomial ring by the
monomial ideal of everything above the caps.

A :class:`Jet` stores its non-zero coefficients together with two tuples with
one entry per filtration:

``valid``
    the jet is guaranteed exact on every monomial whose degree in filtration
    ``k`` is at most ``valid[k]`` for all ``k`` (the *validity box*).  Nothing
    outside the box is ever stored.
``low``
    a guaranteed lower bound for the degrees of all terms of the exact
    object the jet approximates (including the unknown part).

Both are propagated pessimistically by every operation, which keeps residual
checks honest: a residual is declared zero only inside its validity box.

Monomials are packed into Python integers ``sum(e_i * B**i)`` with
``B = trunc + 1``; since every exponent is bounded by the total-degree cap,
multiplication of monomials is integer addition without carries.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from fractions import Fraction
from typing import Callable, Dict, Iterable, Iterator, List, Mapping, Optional, Sequence, Tuple

import gmpy2
from gmpy2 import mpq

__all__ = [
    "Q",
    "Filtration",
    "Ring",
    "Jet",
    "JetMatrix",
    "DimensionError",
    "CompositionError",
    "NormalizationError",
    "exp_linear_jet",
    "exp_form_jet",
    "substitute",
    "taylor_shift",
    "embed",
    "matrix_series_inverse",
    "jet_arith",
    "jet_diff",
    "jet_substitute",
    "fmt_q",
]

Rational = mpq
_MPQ = type(mpq(0))
_MPZ = type(gmpy2.mpz(0))


class DimensionError(ValueError):
    """Operands live in incompatible rings or matrices have mismatched shapes."""


class CompositionError(ValueError):
    """A substitution is not well defined order by order."""


class NormalizationError(ValueError):
    """A matrix series does not start with the identity."""


def Q(x) -> mpq:
    """Parse an exact rational from an int, ``"p/q"`` string, Fraction or mpq."""
    if isinstance(x, bool):
        raise TypeError("booleans are not rationals")
    if type(x) is _MPQ:
        return x
    if isinstance(x, (int, _MPZ)):
        return mpq(x)
    if isinstance(x, Fraction):
        return mpq(x.numerator, x.denominator)
    if isinstance(x, str):
        s = x.strip()
        if not s:
            raise ValueError("empty rational string")
        try:
            if "/" in s:
                num, den = s.split("/")
                n, d = int(num), int(den)
                if d == 0:
                    raise ZeroDivisionError("zero denominator in %r" % x)
                return mpq(n, d)
            return mpq(int(s))
        except ValueError as exc:
            raise ValueError("not an exact rational: %r" % x) from exc
    if isinstance(x, float):
        raise TypeError("floating point input is not accepted; use 'p/q' strings")
    raise TypeError("cannot interpret %r as a rational" % (x,))


def fmt_q(x) -> str:
    """Canonical ``p/q`` (or ``p``) string of a rational."""
    return str(Q(x))


_ZERO = mpq(0)
_ONE = mpq(1)


@dataclass(frozen=True)
class Filtration:
    """A 0/1-weighted degree with a cap."""

    name: str
    weights: Tuple[int, ...]
    cap: int


class Ring:
    """Truncated polynomial ring ``Q[x_0..x_{n-1}]`` modulo a monomial ideal.

    Parameters
    ----------
    nvars:
        number of variables.
    trunc:
        cap on the total degree.
    filtrations:
        extra 0/1-weighted filtrations ``(name, weights, cap)``.
    names:
        optional display names of the variables.
    """

    def __init__(
        self,
        nvars: int,
        trunc: int,
        filtrations: Sequence[Tuple[str, Sequence[int], int]] = (),
        names: Optional[Sequence[str]] = None,
        layout: object = None,
    ):
        if nvars < 0 or trunc < 0:
            raise ValueError("nvars and trunc must be non-negative")
        self.nvars = nvars
        self.trunc = trunc
        filts = [Filtration("total", tuple([1] * nvars), trunc)]
        for name, weights, cap in filtrations:
            weights = tuple(int(w) for w in weights)
            if len(weights) != nvars or any(w not in (0, 1) for w in weights):
                raise ValueError("filtration weights must be 0/1 of length nvars")
            filts.append(Filtration(name, weights, min(int(cap), trunc)))
        self.filtrations: Tuple[Filtration, ...] = tuple(filts)
        self.nfilt = len(filts)
        self.caps: Tuple[int, ...] = tuple(f.cap for f in filts)
        self.names = tuple(names) if names is not None else tuple("x%d" % i for i in range(nvars))
        if len(self.names) != nvars:
            raise ValueError("names must have length nvars")
        self.layout = layout
        self.base = trunc + 1
        self._pows = [self.base ** i for i in range(nvars + 1)]
        # variables grouped by the set of filtrations they are weighted in
        self._var_fw = [tuple(f.weights[i] for f in filts) for i in range(nvars)]
        self._deg_cache: Dict[int, Tuple[int, ...]] = {}
        self._exp_cache: Dict[int, Tuple[int, ...]] = {}
        self._sig = (nvars, trunc, tuple((f.weights, f.cap) for f in filts))

    # -- identity -----------------------------------------------------------
    def __eq__(self, other):
        return isinstance(other, Ring) and (self is other or self._sig == other._sig)

    def __hash__(self):
        return hash(self._sig)

    def __repr__(self):
        extra = ", ".join("%s<=%d" % (f.name, f.cap) for f in self.filtrations[1:])
        return "Ring(nvars=%d, trunc=%d%s)" % (self.nvars, self.trunc, (", " + extra) if extra else "")

    # -- monomial packing ---------------------------------------------------
    def key(self, exps: Sequence[int]) -> int:
        if len(exps) != self.nvars:
            raise DimensionError("exponent vector of length %d for %d variables" % (len(exps), self.nvars))
        k = 0
        for i, e in enumerate(exps):
            if e:
                if e < 0:
                    raise ValueError("negative exponent")
                k += e * self._pows[i]
        return k

    def exps(self, key: int) -> Tuple[int, ...]:
        r = self._exp_cache.get(key)
        if r is None:
            out = []
            k = key
            b = self.base
            for _ in range(self.nvars):
                k, e = divmod(k, b)
                out.append(e)
            r = tuple(out)
            self._exp_cache[key] = r
        return r

    def degs(self, key: int) -> Tuple[int, ...]:
        r = self._deg_cache.get(key)
        if r is None:
            ex = self.exps(key)
            r = tuple(sum(e for e, w in zip(ex, f.weights) if w) for f in self.filtrations)
            self._deg_cache[key] = r
        return r

    def degs_of_exps(self, exps: Sequence[int]) -> Tuple[int, ...]:
        return tuple(sum(e for e, w in zip(exps, f.weights) if w) for f in self.filtrations)

    def var_weights(self, i: int) -> Tuple[int, ...]:
        return self._var_fw[i]

    def filtration_index(self, name: str) -> int:
        for k, f in enumerate(self.filtrations):
            if f.name == name:
                return k
        raise KeyError(name)

    # -- constructors -------------------------------------------------------
    def zero(self) -> "Jet":
        return Jet(self, {}, self.caps, tuple(c + 1 for c in self.caps))

    def const(self, c) -> "Jet":
        c = Q(c)
        if c == 0:
            return self.zero()
        return Jet(self, {0: c}, self.caps, tuple([0] * self.nfilt))

    def one(self) -> "Jet":
        return self.const(1)

    def var(self, i: int, coeff=1) -> "Jet":
        if not 0 <= i < self.nvars:
            raise DimensionError("variable index %d out of range" % i)
        return self.monomial([1 if j == i else 0 for j in range(self.nvars)], coeff)

    def monomial(self, exps: Sequence[int], coeff=1) -> "Jet":
        return self.from_terms({tuple(exps): coeff})

    def from_terms(
        self,
        terms: Mapping[Tuple[int, ...], object],
        valid: Optional[Sequence[int]] = None,
        exact: bool = True,
    ) -> "Jet":
        """Build a jet from ``{exponent tuple: rational}``.

        ``exact=True`` declares that the given terms are the complete object
        (up to the ring's caps), so the lower-degree bounds are read off the
        terms.  ``valid`` defaults to the caps.
        """
        if valid is None:
            valid = self.caps
        valid = tuple(min(int(v), c) for v, c in zip(valid, self.caps))
        if len(valid) != self.nfilt:
            raise ValueError("validity tuple has wrong length")
        coeffs: Dict[int, mpq] = {}
        for ex, c in terms.items():
            c = Q(c)
            if c == 0:
                continue
            d = self.degs_of_exps(ex)
            if any(dk > vk for dk, vk in zip(d, valid)):
                continue
            k = self.key(ex)
            coeffs[k] = coeffs.get(k, _ZERO) + c
            if coeffs[k] == 0:
                del coeffs[k]
        if exact:
            low = _lowest(self, coeffs)
        else:
            low = tuple([0] * self.nfilt)
        return Jet(self, coeffs, valid, low)

    def with_valid(self, valid: Sequence[int]) -> Tuple[int, ...]:
        return tuple(min(int(v), c) for v, c in zip(valid, self.caps))


def _lowest(ring: Ring, coeffs: Mapping[int, mpq]) -> Tuple[int, ...]:
    if not coeffs:
        return tuple(c + 1 for c in ring.caps)
    lows = [c + 1 for c in ring.caps]
    for k in coeffs:
        for i, d in enumerate(ring.degs(k)):
            if d < lows[i]:
                lows[i] = d
    return tuple(lows)


class Jet:
    """Truncated power series with validity tracking (immutable by contract)."""

    __slots__ = ("ring", "coeffs", "valid", "low", "_groups")

    def __init__(self, ring: Ring, coeffs: Dict[int, mpq], valid: Tuple[int, ...], low: Tuple[int, ...]):
        self.ring = ring
        self.coeffs = coeffs
        self.valid = tuple(valid)
        self.low = tuple(low)
        self._groups = None

    # -- public views --------------------------------------------------
    @property
    def num_vars(self) -> int:
        return self.ring.nvars

    @property
    def trunc_order(self) -> int:
        return self.ring.trunc

    @property
    def valid_order(self) -> int:
        return self.valid[0]

    def terms(self) -> Iterator[Tuple[Tuple[int, ...], mpq]]:
        """Iterate ``(exponent tuple, coefficient)`` in a deterministic order."""
        ring = self.ring
        for k in sorted(self.coeffs, key=lambda key: (ring.degs(key)[0], ring.exps(key)[::-1])):
            yield ring.exps(k), self.coeffs[k]

    def as_dict(self) -> Dict[Tuple[int, ...], mpq]:
        return {self.ring.exps(k): c for k, c in self.coeffs.items()}

    def coeff(self, exps: Sequence[int]) -> mpq:
        return self.coeffs.get(self.ring.key(exps), _ZERO)

    def constant_term(self) -> mpq:
        return self.coeffs.get(0, _ZERO)

    def is_zero(self) -> bool:
        return not self.coeffs

    def first_nonzero(self) -> Optional[Tuple[Tuple[int, ...], mpq]]:
        for ex, c in self.terms():
            return ex, c
        return None

    def __repr__(self):
        return "Jet(%s, valid=%s, %d terms)" % (self.to_str(max_terms=8), self.valid, len(self.coeffs))

    def to_str(self, max_terms: Optional[int] = None) -> str:
        parts = []
        names = self.ring.names
        for n, (ex, c) in enumerate(self.terms()):
            if max_terms is not None and n >= max_terms:
                parts.append("...")
                break
            mono = "*".join(
                (names[i] if e == 1 else "%s^%d" % (names[i], e)) for i, e in enumerate(ex) if e
            )
            parts.append(("%s*%s" % (c, mono)) if mono else str(c))
        return " + ".join(parts) if parts else "0"

    # -- internal helpers ---------------------------------------------------
    def _check(self, other: "Jet"):
        if not isinstance(other, Jet):
            raise TypeError("expected a Jet, got %r" % type(other).__name__)
        if other.ring is not self.ring and other.ring != self.ring:
            raise DimensionError("jets live in different rings: %r vs %r" % (self.ring, other.ring))

    def _grouped(self):
        g = self._groups
        if g is None:
            degs = self.ring.degs
            g = {}
            for k, c in self.coeffs.items():
                g.setdefault(degs(k), []).append((k, c))
            self._groups = g
        return g

    def _coerce(self, other) -> "Jet":
        if isinstance(other, Jet):
            self._check(other)
            return other
        return self.ring.const(other)

    # -- arithmetic ---------------------------------------------------------
    def __add__(self, other) -> "Jet":
        other = self._coerce(other)
        return _addsub(self, other, 1)

    __radd__ = __add__

    def __sub__(self, other) -> "Jet":
        other = self._coerce(other)
        return _addsub(self, other, -1)

    def __rsub__(self, other) -> "Jet":
        return self._coerce(other) - self

    def __neg__(self) -> "Jet":
        return Jet(self.ring, {k: -c for k, c in self.coeffs.items()}, self.valid, self.low)

    def scale(self, c) -> "Jet":
        c = Q(c)
        if c == 0:
            ring = self.ring
            # the exact object times zero is exactly zero
            return Jet(ring, {}, ring.caps, tuple(x + 1 for x in ring.caps))
        return Jet(self.ring, {k: v * c for k, v in self.coeffs.items()}, self.valid, self.low)

    def __mul__(self, other) -> "Jet":
        if isinstance(other, Jet):
            self._check(other)
            return _mul(self, other)
        return self.scale(other)

    def __rmul__(self, other) -> "Jet":
        return self.scale(other)

    def __pow__(self, n: int) -> "Jet":
        if n < 0:
            raise ValueError("negative powers are not supported")
        result = self.ring.one()
        base = self
        while n:
            if n & 1:
                result = result * base
            n >>= 1
            if n:
                base = base * base
        return result

    def __eq__(self, other):
        if not isinstance(other, Jet):
            try:
                other = self._coerce(other)
            except Exception:
                return NotImplemented
        return self.equals(other)

    __hash__ = None  # type: ignore[assignment]

    def equals(self, other: "Jet") -> bool:
        """Equality on the common validity box."""
        return (self - other).is_zero()

    # -- calculus -----------------------------------------------------------
    def diff(self, i: int) -> "Jet":
        ring = self.ring
        if not 0 <= i < ring.nvars:
            raise DimensionError("variable index %d out of range" % i)
        p = ring._pows[i]
        b = ring.base
        out = {}
        for k, c in self.coeffs.items():
            e = (k // p) % b
            if e:
                out[k - p] = c * e
        w = ring.var_weights(i)
        valid = tuple(v - wk for v, wk in zip(self.valid, w))
        low = tuple(max(l - wk, 0) for l, wk in zip(self.low, w))
        return Jet(ring, out, valid, low)

    def diff_multi(self, exps: Sequence[int]) -> "Jet":
        r = self
        for i, e in enumerate(exps):
            for _ in range(e):
                r = r.diff(i)
        return r

    # -- restriction / truncation ------------------------------------------
    def restrict_zero(self, var_indices: Iterable[int]) -> "Jet":
        """Set the given variables to zero."""
        ring = self.ring
        idx = list(var_indices)
        out = {}
        for k, c in self.coeffs.items():
            ex = ring.exps(k)
            if all(ex[i] == 0 for i in idx):
                out[k] = c
        return Jet(ring, out, self.valid, self.low)

    def truncate(self, valid: Sequence[int]) -> "Jet":
        """Shrink the validity box (never enlarges it)."""
        ring = self.ring
        valid = tuple(min(v, w) for v, w in zip(self.valid, valid))
        out = _prune(ring, self.coeffs, valid)
        return Jet(ring, out, valid, self.low)

    def homogeneous_part(self, degree: int, filtration: int = 0) -> "Jet":
        ring = self.ring
        out = {k: c for k, c in self.coeffs.items() if ring.degs(k)[filtration] == degree}
        return Jet(ring, out, self.valid, self.low)

    def map_coeffs(self, fn: Callable[[mpq], mpq]) -> "Jet":
        out = {}
        for k, c in self.coeffs.items():
            v = fn(c)
            if v:
                out[k] = v
        return Jet(self.ring, out, self.valid, self.low)

    def at_zero(self) -> mpq:
        return self.constant_term()


def _prune(ring: Ring, coeffs: Mapping[int, mpq], valid: Tuple[int, ...]) -> Dict[int, mpq]:
    degs = ring.degs
    return {k: c for k, c in coeffs.items() if all(d <= v for d, v in zip(degs(k), valid))}


def _addsub(a: Jet, b: Jet, sign: int) -> Jet:
    ring = a.ring
    valid = tuple(min(x, y) for x, y in zip(a.valid, b.valid))
    low = tuple(min(x, y) for x, y in zip(a.low, b.low))
    out = dict(a.coeffs) if valid == a.valid else _prune(ring, a.coeffs, valid)
    bc = b.coeffs if valid == b.valid else _prune(ring, b.coeffs, valid)
    if sign > 0:
        for k, c in bc.items():
            v = out.get(k)
            if v is None:
                out[k] = c
            else:
                v = v + c
                if v:
                    out[k] = v
                else:
                    del out[k]
    else:
        for k, c in bc.items():
            v = out.get(k)
            if v is None:
                out[k] = -c
            else:
                v = v - c
                if v:
                    out[k] = v
                else:
                    del out[k]
    return Jet(ring, out, valid, low)


def _mul(a: Jet, b: Jet) -> Jet:
    ring = a.ring
    caps = ring.caps
    nf = ring.nfilt
    valid = tuple(min(a.valid[k] + b.low[k], b.valid[k] + a.low[k], caps[k]) for k in range(nf))
    low = tuple(min(a.low[k] + b.low[k], caps[k] + 1) for k in range(nf))
    if not a.coeffs or not b.coeffs:
        return Jet(ring, {}, valid, low)
    ga = a._grouped()
    gb = b._grouped()
    out: Dict[int, mpq] = {}
    get = out.get
    rng = range(nf)
    for da, la in ga.items():
        # remaining room per filtration
        room = [valid[k] - da[k] for k in rng]
        if any(r < 0 for r in room):
            continue
        for db, lb in gb.items():
            ok = True
            for k in rng:
                if db[k] > room[k]:
                    ok = False
                    break
            if not ok:
                continue
            for ka, ca in la:
                for kb, cb in lb:
                    kk = ka + kb
                    out[kk] = get(kk, _ZERO) + ca * cb
    out = {k: c for k, c in out.items() if c}
    return Jet(ring, out, valid, low)


# ---------------------------------------------------------------------------
# constructors for transcendental building blocks
# ---------------------------------------------------------------------------

def exp_linear_jet(coeff, var_index: int, scale, trunc: int, nvars: Optional[int] = None, ring: Optional[Ring] = None) -> Jet:
    """``coeff * exp(scale * x_var)`` truncated at ``trunc``.

    The Taylor coefficients ``coeff * scale**n / n!`` are exact rationals.
    """
    if trunc < 0:
        raise ValueError("trunc must be non-negative")
    if ring is None:
        ring = Ring(max(var_index + 1, nvars or 0), trunc)
    coeff, scale = Q(coeff), Q(scale)
    terms = {}
    c = coeff
    for n in range(0, min(trunc, ring.trunc) + 1):
        ex = [0] * ring.nvars
        ex[var_index] = n
        terms[tuple(ex)] = c
        c = c * scale / (n + 1)
    j = ring.from_terms(terms, exact=False)
    return j


def exp_form_jet(coeff, form: Sequence[Tuple[int, object]], ring: Ring) -> Jet:
    """``coeff * exp(sum scale_i * x_i)`` as a product of one-variable exponentials."""
    r = ring.const(coeff)
    for var, scale in form:
        r = r * exp_linear_jet(1, var, scale, ring.trunc, ring=ring)
    return r


# ---------------------------------------------------------------------------
# composition
# ---------------------------------------------------------------------------

def embed(f: Jet, target: Ring, var_map: Sequence[int]) -> Jet:
    """Re-express ``f`` in ``target`` by renaming variable ``i`` to ``var_map[i]``.

    The source may only carry partial validity in its total degree.
    """
    src = f.ring
    if len(var_map) != src.nvars:
        raise DimensionError("var_map must have one entry per source variable")
    if any(v < c for v, c in zip(f.valid[1:], src.caps[1:])):
        raise CompositionError("embedding requires exactness in all non-total filtrations")
    pows = target._pows
    out: Dict[int, mpq] = {}
    vt = min(f.valid[0], target.trunc)
    for k, c in f.coeffs.items():
        ex = src.exps(k)
        if sum(ex) > vt:
            continue
        nk = 0
        for i, e in enumerate(ex):
            if e:
                nk += e * pows[var_map[i]]
        d = target.degs(nk)
        if any(dk > ck for dk, ck in zip(d, target.caps)):
            continue
        out[nk] = out.get(nk, _ZERO) + c
    valid = [vt] + list(target.caps[1:])
    low = [min(f.low[0], target.caps[0] + 1)]
    for flt in target.filtrations[1:]:
        if all(flt.weights[var_map[i]] for i in range(src.nvars)) and src.nvars:
            low.append(min(f.low[0], flt.cap + 1))
        else:
            low.append(0)
    out = {k: c for k, c in out.items() if c}
    return Jet(target, out, tuple(valid), tuple(low))


def substitute(f: Jet, args: Sequence[Jet], polynomial: bool = False) -> Jet:
    """Compose ``f(args[0], ..., args[n-1])``.

    Every argument must have zero constant part (positive lower total degree)
    so that the composite is determined order by order, unless ``polynomial``
    declares that ``f`` has no truncation tail; then arbitrary arguments
    (e.g. constant shifts) are allowed.
    """
    src = f.ring
    if len(args) != src.nvars:
        raise DimensionError("substitute needs %d arguments, got %d" % (src.nvars, len(args)))
    if not args:
        raise DimensionError("cannot substitute into a jet without variables")
    target = args[0].ring
    for a in args:
        if a.ring != target:
            raise DimensionError("substitution arguments live in different rings")
    minlow = min(a.low[0] for a in args)
    if minlow <= 0 and not polynomial:
        raise CompositionError(
            "argument with non-zero constant part: the composite is not determined order by order"
        )
    cache: Dict[Tuple[int, ...], Jet] = {}

    def mono(ex):
        r = cache.get(ex)
        if r is None:
            # build from a smaller cached monomial
            j = max(i for i, e in enumerate(ex) if e)
            smaller = list(ex)
            smaller[j] -= 1
            smaller = tuple(smaller)
            if sum(smaller) == 0:
                r = args[j]
            else:
                r = mono(smaller) * args[j]
            cache[ex] = r
        return r

    acc: Dict[int, mpq] = {}
    valid = list(target.caps)
    for ex, c in f.terms():
        m = target.one() if sum(ex) == 0 else mono(ex)
        for k in range(target.nfilt):
            valid[k] = min(valid[k], m.valid[k])
        for kk, v in m.coeffs.items():
            acc[kk] = acc.get(kk, _ZERO) + c * v
    if polynomial:
        low = [0] * target.nfilt
    else:
        # The exact f has unknown terms of source degree > f.valid[j] in some
        # filtration j (this includes everything discarded above the caps);
        # they only reach target total degrees beyond the bound below.
        for j, flt in enumerate(src.filtrations):
            lows = [args[i].low[0] for i in range(src.nvars) if flt.weights[i]]
            if lows:
                valid[0] = min(valid[0], (f.valid[j] + 1) * min(lows) - 1)
        low = [min(f.low[0] * minlow, target.caps[0] + 1)] + [0] * (target.nfilt - 1)
    valid_t = tuple(valid)
    out = _prune(target, {k: v for k, v in acc.items() if v}, valid_t)
    return Jet(target, out, valid_t, tuple(low))


def taylor_shift(f: Jet, shifts: Mapping[int, Jet]) -> Jet:
    """Exact Taylor shift ``f(x + h)`` inside one ring.

    ``shifts`` maps variable indices to increments ``h_i``; each increment
    must have positive lower degree in some filtration so the series
    ``sum_e d^e f * h^e / e!`` terminates in the quotient ring.
    """
    ring = f.ring
    idx = sorted(shifts)
    hs = [shifts[i] for i in idx]
    for h in hs:
        f._check(h)
        if all(l <= 0 for l in h.low):
            raise CompositionError("Taylor shift increment has no positive order")
    caps = ring.caps

    def vanishes(lows):
        return any(l > c for l, c in zip(lows, caps))

    result = f
    # breadth-first over multi-indices in lexicographic "last index" order
    derivs: Dict[Tuple[int, ...], Jet] = {tuple([0] * len(idx)): f}
    hpows: Dict[Tuple[int, ...], Jet] = {tuple([0] * len(idx)): ring.one()}
    frontier = [tuple([0] * len(idx))]
    while frontier:
        nxt = []
        for e in frontier:
            start = max([i for i, x in enumerate(e) if x], default=0)
            for j in range(start, len(idx)):
                e2 = list(e)
                e2[j] += 1
                e2 = tuple(e2)
                lows = tuple(sum(x * h.low[k] for x, h in zip(e2, hs)) for k in range(ring.nfilt))
                if vanishes(lows):
                    continue
                d = derivs[e].diff(idx[j])
                derivs[e2] = d
                hp = hpows[e] * hs[j]
                hpows[e2] = hp
                if d.is_zero() and all(v >= c for v, c in zip(d.valid, caps)):
                    # exactly zero derivative: all further derivatives vanish too
                    nxt.append(e2)
                    continue
                fact = 1
                for x in e2:
                    fact *= math.factorial(x)
                result = result + (d * hp).scale(mpq(1, fact))
                nxt.append(e2)
        frontier = nxt
    return result


# ---------------------------------------------------------------------------
# matrices of jets
# ---------------------------------------------------------------------------

class JetMatrix:
    """Dense matrix of jets sharing one ring."""

    __slots__ = ("ring", "rows", "cols", "entries")

    def __init__(self, entries: Sequence[Sequence[Jet]], ring: Optional[Ring] = None):
        entries = [list(r) for r in entries]
        self.rows = len(entries)
        self.cols = len(entries[0]) if entries else 0
        if any(len(r) != self.cols for r in entries):
            raise DimensionError("ragged matrix")
        if ring is None:
            if not entries or not self.cols:
                raise ValueError("empty matrix needs an explicit ring")
            ring = entries[0][0].ring
        for r in entries:
            for e in r:
                if e.ring != ring:
                    raise DimensionError("matrix entries live in different rings")
        self.ring = ring
        self.entries = entries

    @classmethod
    def identity(cls, ring: Ring, n: int) -> "JetMatrix":
        return cls([[ring.one() if i == j else ring.zero() for j in range(n)] for i in range(n)], ring)

    @classmethod
    def zeros(cls, ring: Ring, rows: int, cols: Optional[int] = None) -> "JetMatrix":
        cols = rows if cols is None else cols
        return cls([[ring.zero() for _ in range(cols)] for _ in range(rows)], ring)

    @classmethod
    def constant(cls, ring: Ring, m: Sequence[Sequence[object]]) -> "JetMatrix":
        return cls([[ring.const(x) for x in row] for row in m], ring)

    def __getitem__(self, ij):
        i, j = ij
        return self.entries[i][j]

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def valid_order(self) -> int:
        return min((e.valid_order for r in self.entries for e in r), default=self.ring.trunc)

    def __add__(self, other: "JetMatrix") -> "JetMatrix":
        self._same(other)
        return JetMatrix([[a + b for a, b in zip(r1, r2)] for r1, r2 in zip(self.entries, other.entries)], self.ring)

    def __sub__(self, other: "JetMatrix") -> "JetMatrix":
        self._same(other)
        return JetMatrix([[a - b for a, b in zip(r1, r2)] for r1, r2 in zip(self.entries, other.entries)], self.ring)

    def __neg__(self):
        return JetMatrix([[-a for a in r] for r in self.entries], self.ring)

    def scale(self, c) -> "JetMatrix":
        return JetMatrix([[a.scale(c) for a in r] for r in self.entries], self.ring)

    def __matmul__(self, other: "JetMatrix") -> "JetMatrix":
        if self.cols != other.rows:
            raise DimensionError("shape mismatch %s @ %s" % (self.shape, other.shape))
        if self.ring != other.ring:
            raise DimensionError("matrices live in different rings")
        out = []
        for i in range(self.rows):
            row = []
            for j in range(other.cols):
                acc = None
                for k in range(self.cols):
                    a = self.entries[i][k]
                    b = other.entries[k][j]
                    if not a.coeffs and all(v >= c for v, c in zip(a.valid, a.ring.caps)):
                        continue
                    if not b.coeffs and all(v >= c for v, c in zip(b.valid, b.ring.caps)):
                        continue
                    t = a * b
                    acc = t if acc is None else acc + t
                row.append(acc if acc is not None else self.ring.zero())
            out.append(row)
        return JetMatrix(out, self.ring)

    def transpose(self) -> "JetMatrix":
        return JetMatrix([[self.entries[i][j] for i in range(self.rows)] for j in range(self.cols)], self.ring)

    T = property(transpose)

    def map(self, fn: Callable[[Jet], Jet]) -> "JetMatrix":
        return JetMatrix([[fn(a) for a in r] for r in self.entries], self.ring)

    def diff(self, i: int) -> "JetMatrix":
        return self.map(lambda a: a.diff(i))

    def is_zero(self) -> bool:
        return all(e.is_zero() for r in self.entries for e in r)

    def first_nonzero(self):
        for i, r in enumerate(self.entries):
            for j, e in enumerate(r):
                fn = e.first_nonzero()
                if fn is not None:
                    return (i, j), fn
        return None

    def at_zero(self) -> List[List[mpq]]:
        return [[e.constant_term() for e in r] for r in self.entries]

    def _same(self, other):
        if self.shape != other.shape:
            raise DimensionError("shape mismatch %s vs %s" % (self.shape, other.shape))
        if self.ring != other.ring:
            raise DimensionError("matrices live in different rings")

    def __eq__(self, other):
        if not isinstance(other, JetMatrix):
            return NotImplemented
        return self.shape == other.shape and (self - other).is_zero()

    __hash__ = None  # type: ignore[assignment]


def _is_identity(m: JetMatrix) -> bool:
    for i in range(m.rows):
        for j in range(m.cols):
            e = m.entries[i][j] - (1 if i == j else 0)
            if not e.is_zero():
                return False
    return m.rows == m.cols


def matrix_series_inverse(A: Sequence[JetMatrix], order: int) -> List[JetMatrix]:
    """Inverse of ``sum_k A[k] z^k`` up to ``z^order`` (requires ``A[0] = Id``).

    Returns ``B`` with ``(sum B_k z^k)(sum A_k z^k) = Id mod z^{order+1}``.
    """
    if not A:
        raise NormalizationError("empty matrix series")
    if not _is_identity(A[0]):
        raise NormalizationError("constant coefficient of the matrix series is not the identity")
    n = A[0].rows
    ring = A[0].ring
    B = [JetMatrix.identity(ring, n)]
    for k in range(1, order + 1):
        acc = JetMatrix.zeros(ring, n)
        for j in range(1, k + 1):
            if j < len(A):
                acc = acc + B[k - j] @ A[j]
        B.append(-acc)
    return B


# ---------------------------------------------------------------------------
# public functional aliases
# ---------------------------------------------------------------------------

def jet_arith(a: Jet, b: Jet, op: str) -> Jet:
    if a.num_vars != b.num_vars:
        raise DimensionError("mismatched number of variables")
    if op == "add":
        return a + b
    if op == "sub":
        return a - b
    if op == "mul":
        return a * b
    raise ValueError("unknown operation %r" % op)


def jet_diff(a: Jet, var_index: int) -> Jet:
    return a.diff(var_index)


def jet_substitute(a: Jet, args: Sequence[Jet], polynomial: bool = False) -> Jet:
    return substitute(a, args, polynomial=polynomial)
