"""Double differential forms at point pairs, wedge algebra, Hodge star, and
the numerical kernels: the reproducing kernel family built from the distance
form, the support-function family, their transition kernels, and the
derived-by-differentiation diagnostic kernels.

Generators carry global ids: dzeta_j -> j, dzetabar_j -> n + j,
dz_j -> 2n + j, dzbar_j -> 3n + j.  A monomial is a sorted id tuple with the
merge parity absorbed into the coefficient.
"""

from __future__ import annotations

from dataclasses import dataclass
from math import comb, factorial, pi

import numpy as np

from .geom import DomainSpec, GeometryError

__all__ = [
    "DoubleForm",
    "wedge",
    "conj_form",
    "star_zeta",
    "star_z",
    "beta_form",
    "alpha_form",
    "omega_q",
    "bmk_kernel",
    "cauchy_fantappie_kernel",
    "transition_kernel",
    "adjoint_kernel_L",
    "isotropic_kernel_Gamma",
    "kernel",
    "TestForm",
    "dbar_test_form",
    "theta_test_form",
    "form_norm_flat",
]


def _merge_sign(a: tuple, b: tuple):
    """Concatenate two sorted generator tuples; count crossing parity.
    Returns (merged tuple, sign) or (None, 0) on a repeated generator."""
    out = []
    sign = 1
    i = j = 0
    while i < len(a) and j < len(b):
        if a[i] == b[j]:
            return None, 0
        if a[i] < b[j]:
            out.append(a[i])
            i += 1
        else:
            # b[j] moves past len(a) - i generators of a
            if (len(a) - i) % 2:
                sign = -sign
            out.append(b[j])
            j += 1
    out.extend(a[i:])
    out.extend(b[j:])
    return tuple(out), sign


@dataclass
class DoubleForm:
    n: int
    coeffs: dict  # sorted generator-id tuple -> complex

    @classmethod
    def zero(cls, n):
        return cls(n, {})

    @classmethod
    def scalar(cls, n, c):
        return cls(n, {(): complex(c)}) if c != 0 else cls(n, {})

    @classmethod
    def one_form(cls, n, family: str, comps):
        """family in {'dzeta','dzetabar','dz','dzbar'}; comps length n."""
        off = {"dzeta": 0, "dzetabar": n, "dz": 2 * n, "dzbar": 3 * n}[family]
        return cls(
            n,
            {
                (off + j,): complex(c)
                for j, c in enumerate(comps)
                if c != 0
            },
        )

    def copy(self):
        return DoubleForm(self.n, dict(self.coeffs))

    def __add__(self, other):
        out = dict(self.coeffs)
        for k, v in other.coeffs.items():
            out[k] = out.get(k, 0.0) + v
            if out[k] == 0:
                del out[k]
        return DoubleForm(self.n, out)

    def __sub__(self, other):
        return self + other.scale(-1)

    def scale(self, c):
        if c == 0:
            return DoubleForm.zero(self.n)
        return DoubleForm(self.n, {k: c * v for k, v in self.coeffs.items()})

    def is_zero(self, tol=0.0):
        return all(abs(v) <= tol for v in self.coeffs.values())

    def prune(self, tol=1e-300):
        return DoubleForm(
            self.n, {k: v for k, v in self.coeffs.items() if abs(v) > tol}
        )

    def max_abs(self):
        return max((abs(v) for v in self.coeffs.values()), default=0.0)

    def evaluate(self, vectors):
        """Evaluate a k-form on k tangent vectors, each a pair (vzeta, vz) of
        complex n-vectors."""
        k = len(vectors)
        n = self.n
        vals = np.zeros((4 * n, k), dtype=complex)
        for b, (vzeta, vz) in enumerate(vectors):
            vzeta = np.asarray(vzeta, dtype=complex)
            vz = np.asarray(vz, dtype=complex)
            vals[0:n, b] = vzeta
            vals[n : 2 * n, b] = np.conj(vzeta)
            vals[2 * n : 3 * n, b] = vz
            vals[3 * n : 4 * n, b] = np.conj(vz)
        total = 0.0 + 0.0j
        for mono, c in self.coeffs.items():
            if len(mono) != k:
                continue
            M = vals[list(mono), :]
            total += c * np.linalg.det(M)
        return total


def wedge(a: DoubleForm, b: DoubleForm) -> DoubleForm:
    out: dict = {}
    for ka, va in a.coeffs.items():
        for kb, vb in b.coeffs.items():
            merged, sign = _merge_sign(ka, kb)
            if merged is None:
                continue
            out[merged] = out.get(merged, 0.0) + sign * va * vb
    return DoubleForm(a.n, {k: v for k, v in out.items() if v != 0})


def wedge_power(a: DoubleForm, p: int) -> DoubleForm:
    out = DoubleForm.scalar(a.n, 1.0)
    for _ in range(p):
        out = wedge(out, a)
    return out


def conj_form(a: DoubleForm) -> DoubleForm:
    """Complex conjugate: conjugates coefficients and swaps barred and
    unbarred generators (re-sorting with parity)."""
    n = a.n

    def swap(g):
        fam, j = divmod(g, n)
        return [n, 0, 3 * n, 2 * n][fam] + j

    out: dict = {}
    for mono, c in a.coeffs.items():
        gens = [swap(g) for g in mono]
        # sort with parity
        sign = 1
        gens = list(gens)
        for i in range(len(gens)):
            for j in range(len(gens) - 1 - i):
                if gens[j] > gens[j + 1]:
                    gens[j], gens[j + 1] = gens[j + 1], gens[j]
                    sign = -sign
        key = tuple(gens)
        out[key] = out.get(key, 0.0) + sign * np.conj(c)
    return DoubleForm(n, {k: v for k, v in out.items() if v != 0})


def _substitute(a: DoubleForm, table: dict) -> DoubleForm:
    """Linear substitution generator -> list of (coeff, generator)."""
    out = DoubleForm.zero(a.n)
    for mono, c in a.coeffs.items():
        acc = DoubleForm.scalar(a.n, c)
        for g in mono:
            repl = table.get(g)
            if repl is None:
                repl_form = DoubleForm(a.n, {(g,): 1.0})
            else:
                repl_form = DoubleForm(a.n, {})
                for cf, g2 in repl:
                    repl_form = repl_form + DoubleForm(a.n, {(g2,): complex(cf)})
            acc = wedge(acc, repl_form)
        out = out + acc
    return out


def _real_metric(G: np.ndarray) -> np.ndarray:
    A, B = np.real(G), np.imag(G)
    return np.block([[A, -B], [B, A]])


def _star_tables(G: np.ndarray, n: int, offset: int):
    """Substitution tables between the complex generators of one variable
    (offset 0 for zeta, 2n for z) and a metric-orthonormal real basis.
    Real generators are encoded as ids >= 4n (scratch space)."""
    M = _real_metric(G)
    C = np.linalg.cholesky(M).T  # M = C^T C, coframe rows e = C (dx,dy)
    Cinv = np.linalg.inv(C)
    base = 4 * n
    fwd = {}
    for j in range(n):
        # dzeta_j = dx_j + i dy_j; dzetabar_j = dx_j - i dy_j
        row_x = [(Cinv[j, i], base + i) for i in range(2 * n)]
        row_y = [(Cinv[n + j, i], base + i) for i in range(2 * n)]
        fwd[offset + j] = [(cx + 1j * cy, g) for ((cx, g), (cy, _)) in
                           zip(row_x, row_y)]
        fwd[offset + n + j] = [(cx - 1j * cy, g) for ((cx, g), (cy, _)) in
                               zip(row_x, row_y)]
    back = {}
    for i in range(2 * n):
        # e_i = sum_j C[i, j] dx_j + C[i, n+j] dy_j,
        # dx_j = (dzeta_j + dzetabar_j)/2, dy_j = (dzeta_j - dzetabar_j)/(2i)
        entries = []
        for j in range(n):
            cx, cy = C[i, j], C[i, n + j]
            entries.append((0.5 * cx - 0.5j * cy, offset + j))
            entries.append((0.5 * cx + 0.5j * cy, offset + n + j))
        back[base + i] = [(c, g) for c, g in entries if c != 0]
    return fwd, back


def _star_variable(a: DoubleForm, G: np.ndarray, offset: int) -> DoubleForm:
    """Hodge star acting on the generators of one variable only, computed in
    a metric-orthonormal real basis; complex-linear on coefficients."""
    n = a.n
    fwd, back = _star_tables(G, n, offset)
    e = _substitute(a, fwd)
    base = 4 * n
    full = tuple(range(base, base + 2 * n))
    out: dict = {}
    for mono, c in e.coeffs.items():
        own = tuple(g for g in mono if g >= base)
        rest = tuple(g for g in mono if g < base)
        comp = tuple(g for g in full if g not in own)
        # sign: e_own ^ e_comp = sign * e_full
        merged, sign = _merge_sign(own, comp)
        if merged is None:
            continue
        key, s2 = _merge_sign(rest, comp)
        if key is None:
            continue
        out[key] = out.get(key, 0.0) + sign * s2 * c
    return _substitute(DoubleForm(n, out), back)


def star_zeta(a: DoubleForm, G: np.ndarray) -> DoubleForm:
    return _star_variable(a, G, 0)


def star_z(a: DoubleForm, G: np.ndarray) -> DoubleForm:
    return _star_variable(a, G, 2 * a.n)


# ---------------------------------------------------------------------------
# rho^2 derivative blocks (exact, from the domain's monomial data)


def _metric_third(d: DomainSpec, point, hol: bool):
    """T[j,k,l] = d g_{jk} / d z_l (hol) at `point`; the antiholomorphic
    derivative follows by hermitian symmetry."""
    n = d.n
    z = np.asarray(point, dtype=complex)
    zb = np.conj(z)
    T = np.zeros((n, n, n), dtype=complex)
    for m in d.monomials:
        for j in range(n):
            if m.alpha[j] == 0:
                continue
            for k in range(n):
                if m.beta[k] == 0:
                    continue
                ea = list(m.alpha)
                eb = list(m.beta)
                c0 = m.coeff * ea[j] * eb[k]
                ea[j] -= 1
                eb[k] -= 1
                for l in range(n):
                    if ea[l] == 0:
                        continue
                    e2 = list(ea)
                    c = c0 * e2[l]
                    e2[l] -= 1
                    T[j, k, l] += (
                        c * np.prod(z ** np.array(e2)) * np.prod(zb ** np.array(eb))
                    )
    return T


def _metric_fourth(d: DomainSpec, point):
    """F[j,k,l,m] = d^2 g_{jk} / dz_l dzbar_m at `point`."""
    n = d.n
    z = np.asarray(point, dtype=complex)
    zb = np.conj(z)
    F = np.zeros((n, n, n, n), dtype=complex)
    for mo in d.monomials:
        for j in range(n):
            if mo.alpha[j] == 0:
                continue
            for k in range(n):
                if mo.beta[k] == 0:
                    continue
                ea = list(mo.alpha)
                eb = list(mo.beta)
                c0 = mo.coeff * ea[j] * eb[k]
                ea[j] -= 1
                eb[k] -= 1
                for l in range(n):
                    if ea[l] == 0:
                        continue
                    e2 = list(ea)
                    c1 = c0 * e2[l]
                    e2[l] -= 1
                    for m2 in range(n):
                        if eb[m2] == 0:
                            continue
                        e3 = list(eb)
                        c2 = c1 * e3[m2]
                        e3[m2] -= 1
                        F[j, k, l, m2] += (
                            c2 * np.prod(z ** np.array(e2))
                            * np.prod(zb ** np.array(e3))
                        )
    return F


class Rho2Derivs:
    """All first and second derivatives of the symmetrized distance square
    at a pair, exact."""

    def __init__(self, d: DomainSpec, zeta, z):
        self.d = d
        self.n = d.n
        self.zeta = np.asarray(zeta, dtype=complex)
        self.z = np.asarray(z, dtype=complex)
        self.w = self.zeta - self.z
        self.G1 = d.levi(zeta)
        self.G2 = d.levi(z)
        self.Gs = 0.5 * (self.G1 + self.G2)
        self.T1 = _metric_third(d, zeta, True)   # dg(zeta)/dzeta
        self.T2 = _metric_third(d, z, True)      # dg(z)/dz
        self.F1 = _metric_fourth(d, zeta)
        self.value = d.rho2(zeta, z)

    def d_zeta(self):
        w, wb = self.w, np.conj(self.w)
        grad = self.Gs @ wb
        grad += 0.5 * np.einsum("lkj,l,k->j", self.T1, w, wb)
        return grad

    def d_z(self):
        w, wb = self.w, np.conj(self.w)
        grad = -(self.Gs @ wb)
        grad += 0.5 * np.einsum("lkj,l,k->j", self.T2, w, wb)
        return grad

    def d_zetabar(self):
        return np.conj(self.d_zeta())

    def d_zbar(self):
        return np.conj(self.d_z())

    def dd_zeta_zetabar(self):
        """H[j,k] = d^2 rho2 / dzeta_j dzetabar_k.

        rho2 = 0.5 sum (g1+g2)_{lm} w_l wbar_m, so
        H = 0.5 [ (g1+g2)_{jk} + dg1_{jm}/dzbar_k wbar_m
                  + dg1_{lk}/dz_j w_l + d2g1_{lm}/dz_j dzbar_k w_l wbar_m ].
        """
        w, wb = self.w, np.conj(self.w)
        H = 0.5 * (self.G1 + self.G2)
        # dg1_{jm}/dzbar_k = conj(T1[m,j,k]) by hermitian symmetry
        H += 0.5 * np.einsum("mjk,m->jk", np.conj(self.T1), wb)
        H += 0.5 * np.einsum("lkj,l->jk", self.T1, w)
        H += 0.5 * np.einsum("lmjk,l,m->jk", self.F1, w, wb)
        return H

    def dd_zeta_z(self):
        """H[j,k] = d^2 rho2 / dzeta_j dz_k."""
        wb = np.conj(self.w)
        H = 0.5 * np.einsum("jmk,m->jk", self.T2, wb)
        H -= 0.5 * np.einsum("kmj,m->jk", self.T1, wb)
        return H

    def dd_zeta_zbar(self):
        """H[j,k] = d^2 rho2 / dzeta_j dzbar_k."""
        w, wb = self.w, np.conj(self.w)
        n = self.n
        H = np.zeros((n, n), dtype=complex)
        # d/dzbar_k of 0.5[(g1+g2)_{jm} wbar_m + dg1_{lm}/dz_j w_l wbar_m]
        # = 0.5[ -(g1+g2)_{jk} + dg2_{jm}/dzbar_k wbar_m - dg1_{lk}/dz_j w_l ]
        H -= 0.5 * (self.G1 + self.G2)
        H += 0.5 * np.einsum("mjk,m->jk", np.conj(self.T2), wb)
        H -= 0.5 * np.einsum("lkj,l->jk", self.T1, w)
        return H


# ---------------------------------------------------------------------------
# kernel ingredient forms


def beta_form(d: DomainSpec, zeta, z):
    """b = d_zeta rho2 / rho2 and its dbar-derivative forms, exact."""
    R = Rho2Derivs(d, zeta, z)
    rho2 = R.value
    if rho2 <= 0:
        raise GeometryError("distance form evaluated on the diagonal")
    n = d.n
    b = DoubleForm.one_form(n, "dzeta", R.d_zeta() / rho2)

    Hzz = R.dd_zeta_zetabar()
    dz_rho = R.d_zeta()
    dzb_rho = R.d_zetabar()
    # dbar_zeta b = [Hzz/rho2 - (dzb rho wedge dz rho)/rho4] as dzetabar^dzeta
    db_zeta = DoubleForm.zero(n)
    for k in range(n):
        for j in range(n):
            c = Hzz[j, k] / rho2 - dzb_rho[k] * dz_rho[j] / rho2**2
            if c != 0:
                mono, sign = _merge_sign((n + k,), (j,))
                db_zeta = db_zeta + DoubleForm(n, {mono: sign * c})
    Hzzb = R.dd_zeta_zbar()
    dzbar_rho_z = R.d_zbar()
    db_z = DoubleForm.zero(n)
    for k in range(n):
        for j in range(n):
            c = Hzzb[j, k] / rho2 - dzbar_rho_z[k] * dz_rho[j] / rho2**2
            if c != 0:
                mono, sign = _merge_sign((3 * n + k,), (j,))
                db_z = db_z + DoubleForm(n, {mono: sign * c})
    return b, db_zeta, db_z


def alpha_form(d: DomainSpec, zeta, z, eps: float):
    """a = xi(zeta) dr(zeta)/phi_eps and its dbar-derivatives, exact."""
    n = d.n
    zeta = np.asarray(zeta, dtype=complex)
    z = np.asarray(z, dtype=complex)
    phi = d.phi_eps(zeta, z, eps)
    if phi == 0:
        raise GeometryError("support function vanishes at this pair")
    g = d.dr(zeta)
    xi = d.xi(zeta)
    R = Rho2Derivs(d, zeta, z)
    rho2 = R.value
    # patch and cutoff derivatives (chain rule through rho2 and r)
    epsp = d.patch.eps_patch
    t = (0.75 * epsp - rho2) / (0.25 * epsp)
    chi = _smoothstep_val(t)
    dchi_drho2 = -_smoothstep_deriv(t) / (0.25 * epsp)
    p = d.patch
    a_in, b_out = p.xi_inner * p.delta, p.xi_outer * p.delta
    rv = d.r(zeta)
    txi = (b_out - abs(rv)) / (b_out - a_in)
    dxi_dr = -_smoothstep_deriv(txi) / (b_out - a_in) * (1.0 if rv >= 0 else -1.0)

    F = d.levi_polynomial(zeta, z)
    r_eps = rv + eps
    # phi = chi (F - r_eps) + (1 - chi) rho2
    GZ = d.levi(zeta)
    T1 = _metric_third(d, zeta, True)
    w = zeta - z
    # dF/dzetabar_k = sum_j g_{jk}(zeta) w_j - 0.5 sum d(hessholo)/dzbar w w
    Q3 = _hessholo_dbar(d, zeta)  # dQ_{jl}/dzbar_k
    dF_bar = np.einsum("jk,j->k", GZ, w) - 0.5 * np.einsum(
        "jlk,j,l->k", Q3, w, w
    )
    drho_bar_zeta = R.d_zetabar()
    dphi_bar_zeta = (
        dchi_drho2 * drho_bar_zeta * (F - r_eps)
        + chi * (dF_bar - np.conj(g))
        + (1 - chi) * drho_bar_zeta
        - dchi_drho2 * drho_bar_zeta * rho2
    )
    drho_bar_z = R.d_zbar()
    dphi_bar_z = (
        dchi_drho2 * drho_bar_z * (F - r_eps)
        + (1 - chi) * drho_bar_z
        - dchi_drho2 * drho_bar_z * rho2
    )

    acomp = xi * g / phi
    a = DoubleForm.one_form(n, "dzeta", acomp)

    da_zeta = DoubleForm.zero(n)
    dxi_bar = dxi_dr * np.conj(g)  # d xi / dzetabar_k
    for k in range(n):
        for j in range(n):
            c = (
                dxi_bar[k] * g[j] / phi
                + xi * GZ[j, k] / phi
                - xi * g[j] * dphi_bar_zeta[k] / phi**2
            )
            if c != 0:
                mono, sign = _merge_sign((n + k,), (j,))
                da_zeta = da_zeta + DoubleForm(n, {mono: sign * c})
    da_z = DoubleForm.zero(n)
    for k in range(n):
        for j in range(n):
            c = -xi * g[j] * dphi_bar_z[k] / phi**2
            if c != 0:
                mono, sign = _merge_sign((3 * n + k,), (j,))
                da_z = da_z + DoubleForm(n, {mono: sign * c})
    return a, da_zeta, da_z


def _smoothstep_val(t):
    t = min(max(t, 0.0), 1.0)
    return t**5 * (70 * t**4 - 315 * t**3 + 540 * t**2 - 420 * t + 126)


def _smoothstep_deriv(t):
    if t <= 0.0 or t >= 1.0:
        return 0.0
    return 630 * t**4 * (1 - t) ** 4


def _hessholo_dbar(d: DomainSpec, zeta):
    """Q3[j,l,k] = d (d^2 r/dz_j dz_l) / dzbar_k."""
    n = d.n
    z = np.asarray(zeta, dtype=complex)
    zb = np.conj(z)
    out = np.zeros((n, n, n), dtype=complex)
    for m in d.monomials:
        for j in range(n):
            if m.alpha[j] == 0:
                continue
            for l in range(n):
                ea = list(m.alpha)
                c0 = m.coeff * ea[j]
                ea[j] -= 1
                if ea[l] == 0:
                    continue
                c1 = c0 * ea[l]
                ea[l] -= 1
                for k in range(n):
                    if m.beta[k] == 0:
                        continue
                    eb = list(m.beta)
                    c2 = c1 * eb[k]
                    eb[k] -= 1
                    out[j, l, k] += (
                        c2 * np.prod(z ** np.array(ea)) * np.prod(zb ** np.array(eb))
                    )
    return out


# ---------------------------------------------------------------------------
# kernels


def omega_q(w_form, dw_zeta, dw_z, n: int, q: int):
    """(-1)^(q(q-1)/2) binom(n-1, q) (2 pi i)^(-n) w ^ (dbar_zeta w)^(n-q-1)
    ^ (dbar_z w)^q; zero when the binomial is out of range."""
    if q < 0 or q > n - 1:
        return DoubleForm.zero(n)
    c = (-1) ** (q * (q - 1) // 2) * comb(n - 1, q) / (2j * pi) ** n
    out = wedge(w_form, wedge_power(dw_zeta, n - q - 1))
    out = wedge(out, wedge_power(dw_z, q))
    return out.scale(c)


def bmk_kernel(d: DomainSpec, zeta, z, q: int) -> DoubleForm:
    b, dbz, dbw = beta_form(d, zeta, z)
    return omega_q(b, dbz, dbw, d.n, q)


def cauchy_fantappie_kernel(d: DomainSpec, zeta, z, q: int, eps: float) -> DoubleForm:
    a, daz, daw = alpha_form(d, zeta, z, eps)
    return omega_q(a, daz, daw, d.n, q)


def transition_kernel(d: DomainSpec, zeta, z, q: int, eps: float,
                      mu: int | None = None, nu: int | None = None) -> DoubleForm:
    """C_q (or a single (mu, nu) summand when given): the double sum of
    binomial-weighted mixed wedge products of the support and distance
    forms."""
    n = d.n
    a, daz, daw = alpha_form(d, zeta, z, eps)
    b, dbz, dbw = beta_form(d, zeta, z)
    out = DoubleForm.zero(n)
    mus = range(0, n - q - 1) if mu is None else [mu]
    for m in mus:
        nus = range(0, q + 1) if nu is None else [nu]
        for v in nus:
            if m < 0 or v < 0 or n - q - m - 2 < 0 or q - v < 0:
                continue
            coeff = (
                comb(m + v, m) * comb(n - 2 - m - v, q - m)
                if 0 <= m + v <= n - 2 and 0 <= q - m <= n - 2 - m - v
                else 0
            )
            if coeff == 0:
                continue
            term = wedge(a, b)
            term = wedge(term, wedge_power(daz, m))
            term = wedge(term, wedge_power(dbz, n - q - m - 2))
            term = wedge(term, wedge_power(daw, v))
            term = wedge(term, wedge_power(dbw, q - v))
            out = out + term.scale(coeff / (2j * pi) ** n)
    return out


def adjoint_kernel_L(d: DomainSpec, zeta, z, q: int, eps: float) -> DoubleForm:
    """(-1)^(q+1) star_zeta conj(C_q)."""
    C = transition_kernel(d, zeta, z, q, eps)
    G = d.levi(zeta)
    return star_zeta(conj_form(C), G).scale((-1) ** (q + 1))


def isotropic_kernel_Gamma(d: DomainSpec, zeta, z, q: int) -> DoubleForm:
    """(n-2)!/(2 pi^n) rho^(2-2n) (dbar_zeta dbar_z rho2)^q."""
    n = d.n
    R = Rho2Derivs(d, zeta, z)
    rho2 = R.value
    # ddbar_{zeta_j bar, z_k bar} rho2 = conj(d^2 rho2 / dzeta_j dz_k)
    Hc = np.conj(R.dd_zeta_z())
    base = DoubleForm.zero(n)
    for j in range(n):
        for k in range(n):
            c = Hc[j, k]
            if c != 0:
                mono, sign = _merge_sign((n + j,), (3 * n + k,))
                base = base + DoubleForm(n, {mono: sign * c})
    out = wedge_power(base, q)
    c = factorial(n - 2) / (2 * pi**n) / rho2 ** (n - 1) if n >= 2 else 1.0 / rho2 ** (n - 1)
    return out.scale(c)


_KERNELS = {
    "B": lambda d, zeta, z, q, eps: bmk_kernel(d, zeta, z, q),
    "K": cauchy_fantappie_kernel,
    "C": transition_kernel,
    "L": adjoint_kernel_L,
    "Gamma0": lambda d, zeta, z, q, eps: isotropic_kernel_Gamma(d, zeta, z, q),
}


def kernel(name: str, d: DomainSpec, zeta, z, q: int, eps: float = 0.0,
           fd_step: float = 1e-5) -> DoubleForm:
    """Kernel dispatch.  T/P/Q diagnostics differentiate the adjoint family
    by central finite differences (one Richardson pass) and are not used in
    acceptance-critical integrals."""
    if name in _KERNELS:
        return _KERNELS[name](d, zeta, z, q, eps)
    if name == "Ti":
        return _dbar_zeta_fd(
            lambda zz: isotropic_kernel_Gamma(d, zz, z, q), zeta, d.n, fd_step
        )
    if name == "Ta":
        th = _theta_zeta_fd(lambda zz: adjoint_kernel_L(d, zz, z, q, eps),
                            zeta, d, fd_step)
        dz = _d_z_fd(lambda zv: adjoint_kernel_L(d, zeta, zv, q - 1, eps),
                     z, d.n, fd_step)
        return th - dz
    if name == "T":
        return kernel("Ta", d, zeta, z, q, eps, fd_step) + kernel(
            "Ti", d, zeta, z, q, eps, fd_step
        )
    if name == "Q":
        return _theta_zeta_fd(
            lambda zz: _d_z_fd(
                lambda zv: adjoint_kernel_L(d, zz, zv, q - 1, eps), z, d.n,
                fd_step),
            zeta, d, fd_step)
    if name == "P":
        Q = kernel("Q", d, zeta, z, q, eps, fd_step)
        Qs = kernel("Q", d, z, zeta, q, eps, fd_step)
        return Q - _swap_slots(Qs)
    raise ValueError(f"unknown kernel {name!r}")


def _swap_slots(a: DoubleForm) -> DoubleForm:
    """Exchange the zeta and z variable slots of a double form."""
    n = a.n

    def swap(g):
        fam, j = divmod(g, n)
        return [2 * n, 3 * n, 0, n][fam] + j

    out = {}
    for mono, c in a.coeffs.items():
        gens = sorted(swap(g) for g in mono)
        sign = _perm_sign([swap(g) for g in mono])
        key = tuple(gens)
        out[key] = out.get(key, 0.0) + sign * c
    return DoubleForm(n, out)


def _perm_sign(seq):
    seq = list(seq)
    sign = 1
    for i in range(len(seq)):
        for j in range(len(seq) - 1 - i):
            if seq[j] > seq[j + 1]:
                seq[j], seq[j + 1] = seq[j + 1], seq[j]
                sign = -sign
    return sign


def _fd_wirtinger(fn, point, j, h, bar: bool):
    """Central difference Wirtinger derivative of a form-valued map, with one
    Richardson extrapolation."""

    def d_at(step):
        e = np.zeros(len(point), dtype=complex)
        e[j] = 1.0
        fx = fn(point + step * e) - fn(point - step * e)
        fy = fn(point + 1j * step * e) - fn(point - 1j * step * e)
        fx = fx.scale(1.0 / (2 * step))
        fy = fy.scale(1.0 / (2 * step))
        if bar:
            return fx.scale(0.5) + fy.scale(0.5j)
        return fx.scale(0.5) + fy.scale(-0.5j)

    d1 = d_at(h)
    d2 = d_at(h / 2)
    return d2.scale(4.0 / 3.0) + d1.scale(-1.0 / 3.0)


def _dbar_zeta_fd(fn, zeta, n, h):
    out = DoubleForm.zero(n)
    for j in range(n):
        dj = _fd_wirtinger(fn, np.asarray(zeta, dtype=complex), j, h, bar=True)
        out = out + wedge(DoubleForm(n, {(n + j,): 1.0}), dj)
    return out


def _d_z_fd(fn, z, n, h):
    out = DoubleForm.zero(n)
    for j in range(n):
        dj = _fd_wirtinger(fn, np.asarray(z, dtype=complex), j, h, bar=False)
        out = out + wedge(DoubleForm(n, {(2 * n + j,): 1.0}), dj)
    return out


def _theta_zeta_fd(fn, zeta, d: DomainSpec, h):
    G = d.levi(zeta)
    n = d.n

    def starred(zz):
        return star_zeta(fn(zz), d.levi(zz))

    out = DoubleForm.zero(n)
    for j in range(n):
        dj = _fd_wirtinger(starred, np.asarray(zeta, dtype=complex), j, h,
                           bar=False)
        out = out + wedge(DoubleForm(n, {(j,): 1.0}), dj)
    return star_zeta(out, G).scale(-1.0)


# ---------------------------------------------------------------------------
# single-variable test forms (z only) with closed-form derivatives


@dataclass
class TestForm:
    """(0,q)-form in z with coefficient callables and their closed-form
    Wirtinger derivatives: comps maps a zbar index tuple to
    (f, [df/dz_j], [df/dzbar_j])."""

    n: int
    q: int
    comps: dict

    def at(self, z) -> DoubleForm:
        n = self.n
        out = DoubleForm.zero(n)
        for idx, (f, _, _) in self.comps.items():
            key = tuple(3 * n + j for j in idx)
            out = out + DoubleForm(n, {key: complex(f(z))})
        return out


def dbar_test_form(u: TestForm, z) -> DoubleForm:
    n = u.n
    out = DoubleForm.zero(n)
    for idx, (_, _, dbar) in u.comps.items():
        key = tuple(3 * n + j for j in idx)
        for j in range(n):
            c = dbar[j](z)
            if c != 0:
                mono, sign = _merge_sign((3 * n + j,), key)
                if mono is not None:
                    out = out + DoubleForm(n, {mono: sign * complex(c)})
    return out


def theta_test_form(v: TestForm, z) -> complex | DoubleForm:
    """Formal adjoint of dbar for the flat metric on (0,1)-forms:
    theta(sum v_j dzbar_j) = - sum dv_j/dz_j.  Realized as -star d star and
    reduced here in closed form; validated by the quadrature pairing test."""
    if v.q != 1:
        raise ValueError("theta of test forms implemented for (0,1)-forms")
    n = v.n
    total = 0.0 + 0.0j
    for idx, (_, dz, _) in v.comps.items():
        j = idx[0]
        total += dz[j](z)
    return DoubleForm.scalar(n, -total)


def form_norm_flat(a: DoubleForm) -> float:
    """Pointwise flat-metric norm of a z-variable form (orthonormal
    components with unit-length generators)."""
    return float(np.sqrt(sum(abs(v) ** 2 for v in a.coeffs.values())))
