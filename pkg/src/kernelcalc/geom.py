"""Concrete domains: polynomial defining functions, the exhaustion r + eps,
gradient norms, Levi metric, quadratic holomorphic support function with its
closed-form decomposition, distance surrogate, patched support function and
singularity gauge, boundary frames, and critical point analysis.

Defining functions are real-valued polynomials in (z, zbar) stored monomial
by monomial, so every derivative used here is exact.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

__all__ = [
    "Monomial",
    "PatchConfig",
    "DomainSpec",
    "builtin_domain",
    "load_domain",
    "dump_domain",
    "GeometryError",
]


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Monomial:
    """coeff * prod z_i^alpha_i * prod zbar_i^beta_i"""

    alpha: tuple
    beta: tuple
    coeff: complex


@dataclass(frozen=True)
class PatchConfig:
    delta: float = 0.2          # near-boundary band |r| < delta
    eps_patch: float = 0.1      # diagonal patch scale in rho^2
    xi_inner: float = 1.0       # xi = 1 for |r| < xi_inner * delta
    xi_outer: float = 1.5       # xi = 0 for |r| > xi_outer * delta
    smoothstep_degree: int = 9  # C^4 polynomial blend

    def __post_init__(self):
        if not self.xi_inner < self.xi_outer:
            raise GeometryError("xi cutoff radii must satisfy inner < outer")


def _smoothstep(t):
    """C^4 polynomial step: 0 for t <= 0, 1 for t >= 1."""
    t = np.clip(t, 0.0, 1.0)
    return t**5 * (70.0 * t**4 - 315.0 * t**3 + 540.0 * t**2 - 420.0 * t + 126.0)


@dataclass(frozen=True)
class DomainSpec:
    n: int
    monomials: tuple
    box: tuple               # per-coordinate (lo, hi) for Re and Im alike
    patch: PatchConfig
    name: str = "custom"
    gamma_min: float = 1e-2  # exclusion radius marker for boundary sampling

    # -- defining function and derivatives ---------------------------------

    def r(self, z) -> float:
        z = np.asarray(z, dtype=complex)
        out = 0.0 + 0.0j
        for m in self.monomials:
            out += m.coeff * np.prod(z**m.alpha) * np.prod(np.conj(z) ** m.beta)
        return float(out.real)

    def r_eps(self, z, eps: float) -> float:
        return self.r(z) + eps

    def dr(self, z) -> np.ndarray:
        """Holomorphic gradient (dr/dz_1, ..., dr/dz_n)."""
        z = np.asarray(z, dtype=complex)
        g = np.zeros(self.n, dtype=complex)
        for m in self.monomials:
            zb = np.conj(z)
            base = m.coeff * np.prod(zb**m.beta)
            for j in range(self.n):
                if m.alpha[j] == 0:
                    continue
                e = list(m.alpha)
                e[j] -= 1
                g[j] += base * m.alpha[j] * np.prod(z**np.array(e))
        return g

    def hess_holo(self, z) -> np.ndarray:
        """d^2 r / dz_j dz_k."""
        z = np.asarray(z, dtype=complex)
        h = np.zeros((self.n, self.n), dtype=complex)
        for m in self.monomials:
            zb = np.conj(z)
            base = m.coeff * np.prod(zb**m.beta)
            for j in range(self.n):
                if m.alpha[j] == 0:
                    continue
                for k in range(self.n):
                    e = list(m.alpha)
                    e[j] -= 1
                    c = m.alpha[j]
                    if e[k] == 0:
                        continue
                    c *= e[k]
                    e[k] -= 1
                    h[j, k] += base * c * np.prod(z**np.array(e))
        return h

    def levi(self, z) -> np.ndarray:
        """Complex Hessian d^2 r / dz_j dzbar_k (the Levi metric)."""
        z = np.asarray(z, dtype=complex)
        g = np.zeros((self.n, self.n), dtype=complex)
        for m in self.monomials:
            for j in range(self.n):
                if m.alpha[j] == 0:
                    continue
                for k in range(self.n):
                    if m.beta[k] == 0:
                        continue
                    ea = list(m.alpha)
                    eb = list(m.beta)
                    c = m.coeff * ea[j] * eb[k]
                    ea[j] -= 1
                    eb[k] -= 1
                    g[j, k] += (
                        c * np.prod(z**np.array(ea))
                        * np.prod(np.conj(z) ** np.array(eb))
                    )
        return g

    def real_hessian(self, z) -> np.ndarray:
        """Real 2n x 2n Hessian in coordinates (x1..xn, y1..yn), assembled
        from the Wirtinger second derivatives."""
        A = self.hess_holo(z)           # d2/dz dz
        B = self.levi(z)                # d2/dz dzbar
        Hxx = 2 * np.real(A + B)
        Hyy = 2 * np.real(B - A)
        Hxy = -2 * np.imag(A) + 2 * np.imag(B)
        H = np.block([[Hxx, Hxy], [Hxy.T, Hyy]])
        return 0.5 * (H + H.T)

    # -- gradient norms -----------------------------------------------------

    def gamma(self, z, convention: str = "euclid") -> float:
        g = self.dr(z)
        if convention == "euclid":
            return float(np.linalg.norm(g))
        if convention == "levi_dual":
            G = self.levi(z)
            try:
                sol = np.linalg.solve(G, g)
            except np.linalg.LinAlgError as exc:
                raise GeometryError("Levi metric singular at this point") from exc
            val = np.real(np.vdot(g, sol))
            if val < 0:
                raise GeometryError("Levi metric not positive at this point")
            return float(np.sqrt(val))
        raise GeometryError(f"unknown gamma convention {convention!r}")

    # -- quadratic holomorphic support function -----------------------------

    def levi_polynomial(self, zeta, z) -> complex:
        zeta = np.asarray(zeta, dtype=complex)
        z = np.asarray(z, dtype=complex)
        w = zeta - z
        g = self.dr(zeta)
        Q = self.hess_holo(zeta)
        return complex(np.dot(g, w) - 0.5 * np.dot(w, Q @ w))

    def hefer(self, zeta, z) -> np.ndarray:
        """h with sum h_j (zeta_j - z_j) equal to the support polynomial;
        closed form because the polynomial is quadratic in the difference."""
        zeta = np.asarray(zeta, dtype=complex)
        z = np.asarray(z, dtype=complex)
        w = zeta - z
        return self.dr(zeta) - 0.5 * (self.hess_holo(zeta) @ w)

    # -- distance surrogate and gauges --------------------------------------

    def _r2_oneside(self, zeta, z) -> float:
        w = np.asarray(zeta, dtype=complex) - np.asarray(z, dtype=complex)
        G = self.levi(zeta)
        return float(np.real(np.conj(w) @ (G.T @ w)))

    def rho2(self, zeta, z) -> float:
        """Symmetrized Levi-metric quadratic distance."""
        return 0.5 * (self._r2_oneside(zeta, z) + self._r2_oneside(z, zeta))

    def d_zeta_rho2(self, zeta, z) -> np.ndarray:
        """Exact holomorphic zeta-gradient of rho2."""
        zeta = np.asarray(zeta, dtype=complex)
        z = np.asarray(z, dtype=complex)
        w = zeta - z
        G1 = self.levi(zeta)
        G2 = self.levi(z)
        grad = 0.5 * (G1 @ np.conj(w) + G2 @ np.conj(w))
        # metric-variation part: d/dzeta_j of g_{lk}(zeta) w_l wbar_k
        grad += 0.5 * self._dG_contract(zeta, w)
        return grad

    def _dG_contract(self, zeta, w) -> np.ndarray:
        """(d/dzeta_j) sum_{l,k} g_{lk}(zeta) w_l wbar_k, exact."""
        out = np.zeros(self.n, dtype=complex)
        zb = np.conj(zeta)
        for m in self.monomials:
            for l in range(self.n):
                if m.alpha[l] == 0:
                    continue
                for k in range(self.n):
                    if m.beta[k] == 0:
                        continue
                    ea = list(m.alpha)
                    eb = list(m.beta)
                    c0 = m.coeff * ea[l] * eb[k]
                    ea[l] -= 1
                    eb[k] -= 1
                    wfac = w[l] * np.conj(w[k])
                    for j in range(self.n):
                        if ea[j] == 0:
                            continue
                        e2 = list(ea)
                        c = c0 * e2[j]
                        e2[j] -= 1
                        out[j] += (
                            c * np.prod(zeta**np.array(e2))
                            * np.prod(zb**np.array(eb)) * wfac
                        )
        return out

    def patch_value(self, rho2_val: float) -> float:
        """Diagonal patch: 1 for rho^2 <= eps/2, 0 for rho^2 >= 3 eps/4."""
        eps = self.patch.eps_patch
        return float(_smoothstep((0.75 * eps - rho2_val) / (0.25 * eps)))

    def xi(self, zeta) -> float:
        """Near-boundary cutoff in |r|: 1 inside the delta-band, 0 outside."""
        p = self.patch
        a, b = p.xi_inner * p.delta, p.xi_outer * p.delta
        return float(_smoothstep((b - abs(self.r(zeta))) / (b - a)))

    def phi_eps(self, zeta, z, eps: float) -> complex:
        rho2 = self.rho2(zeta, z)
        chi = self.patch_value(rho2)
        F = self.levi_polynomial(zeta, z)
        return chi * (F - self.r_eps(zeta, eps)) + (1.0 - chi) * rho2

    def P_eps(self, zeta, z, eps: float) -> float:
        gz = self.gamma(zeta)
        gw = self.gamma(z)
        if gz == 0.0 or gw == 0.0:
            raise GeometryError("singular gradient-norm weight in P")
        return float(
            self.rho2(zeta, z)
            + 2.0 * (self.r_eps(zeta, eps) / gz) * (self.r_eps(z, eps) / gw)
        )

    # -- frames --------------------------------------------------------------

    def frame_at(self, zeta, gamma_min: float | None = None):
        """Orthonormal (1,0)-coframe for the Levi metric whose last row is
        dr/|dr| (dual norm), plus the dual vectors.  Deterministic: the
        remaining rows come from the standard basis by largest-pivot
        Gram-Schmidt.  Returns (W, U): coframe rows W[i], vectors U[i] with
        W @ U.T = I and U.conj() @ G @ U.T = I."""
        gmin = self.gamma_min if gamma_min is None else gamma_min
        G = self.levi(zeta)
        g = self.dr(zeta)
        gd = self.gamma(zeta, "levi_dual")
        if gd < gmin:
            raise GeometryError(
                f"gradient norm {gd:.3e} below threshold {gmin:.3e}"
            )
        xr = np.linalg.solve(G, g).conj()  # metric dual vector of dr
        un = xr / np.sqrt(np.real(np.conj(xr) @ (G.T @ xr)))

        def inner(u, v):
            # hermitian product <u, v> = sum g_jk u_j vbar_k
            return complex(np.conj(v) @ (G.T @ u))

        vecs = [un]
        basis = list(np.eye(self.n, dtype=complex))
        for _ in range(self.n - 1):
            best, best_norm = None, -1.0
            for b in basis:
                w = b.copy()
                for u in vecs:
                    w = w - inner(w, u) * u
                nrm = np.real(inner(w, w))
                if nrm > best_norm:
                    best, best_norm = w, nrm
            if best_norm <= 0:
                raise GeometryError("degenerate metric in frame construction")
            vecs.append(best / np.sqrt(best_norm))
        # order: tangential first, normal last
        U = np.array(vecs[1:] + [vecs[0]])
        W = U.conj() @ G.T  # W[i,j] = sum_k g_{jk} conj(U[i,k]); W[i](u_j) = delta_ij
        return W, U

    # -- critical points ------------------------------------------------------

    def critical_points(self, n_seeds: int = 200, seed: int = 0,
                        tol: float = 1e-12):
        """Newton search for dr = 0 inside the box; deduplicated."""
        rng = np.random.default_rng(seed)
        lo = np.array([b[0] for b in self.box] * 2)
        hi = np.array([b[1] for b in self.box] * 2)
        found = []
        for _ in range(n_seeds):
            x = rng.uniform(lo, hi)
            z = x[: self.n] + 1j * x[self.n :]
            for _ in range(60):
                g = self.dr(z)
                grad_real = np.concatenate([2 * g.real, -2 * g.imag])
                if np.linalg.norm(grad_real) < tol:
                    break
                H = self.real_hessian(z)
                try:
                    step = np.linalg.solve(H, -grad_real)
                except np.linalg.LinAlgError:
                    break
                xy = np.concatenate([z.real, z.imag]) + step
                z = xy[: self.n] + 1j * xy[self.n :]
                if np.max(np.abs(xy)) > 10 * np.max(np.abs(hi)):
                    break
            else:
                continue
            if np.linalg.norm(self.dr(z)) > 1e-9:
                continue
            xy = np.concatenate([z.real, z.imag])
            if np.any(xy < lo) or np.any(xy > hi):
                continue
            if all(np.linalg.norm(z - p) > 1e-6 for p in found):
                found.append(z)
        return sorted(found, key=lambda p: (np.round(p.real, 9).tolist(),
                                            np.round(p.imag, 9).tolist()))

    def boundary_critical_points(self, **kw):
        return [p for p in self.critical_points(**kw) if abs(self.r(p)) < 1e-8]

    def morse_normal_form(self, p, degeneracy_tol: float = 1e-8):
        """Eigen-decomposition of the real Hessian at a critical point.

        Returns (index, eigenvalues): index counts the directions where -r
        increases quadratically (negative directions of the Hessian of r).
        Near-zero eigenvalues are rejected as degenerate.
        """
        p = np.asarray(p, dtype=complex)
        if np.linalg.norm(self.dr(p)) > 1e-8:
            raise GeometryError("not a critical point (gradient nonzero)")
        H = self.real_hessian(p)
        vals = np.linalg.eigvalsh(H)
        if np.min(np.abs(vals)) < degeneracy_tol * np.max(np.abs(vals)):
            raise GeometryError("degenerate Hessian: not a Morse point")
        index = int(np.sum(vals < 0))
        return index, vals

    # -- calibration -----------------------------------------------------------

    def calibrate_patch(self, seed: int = 0, pairs: int = 10_000,
                        c0: float = 0.25) -> "DomainSpec":
        """Shrink the diagonal patch scale until Re(F - r_eps) >= c0 rho^2 on
        sampled near-diagonal pairs (Taylor validity of the support
        polynomial), halving on failure.  Returns a new spec."""
        rng = np.random.default_rng(seed)
        lo = np.array([b[0] for b in self.box] * 2)
        hi = np.array([b[1] for b in self.box] * 2)
        eps_patch = self.patch.eps_patch
        for _ in range(20):
            ok = True
            count = 0
            while count < pairs:
                x = rng.uniform(lo, hi)
                zeta = x[: self.n] + 1j * x[self.n :]
                if self.r(zeta) > 0 or self.r(zeta) < -2 * self.patch.delta:
                    continue
                u = rng.normal(size=2 * self.n)
                u /= np.linalg.norm(u)
                s = np.sqrt(rng.uniform(0.0, 0.75 * eps_patch))
                w = (u[: self.n] + 1j * u[self.n :]) * s
                z = zeta - w
                if self.r(z) > 0:
                    continue
                count += 1
                rho2 = self.rho2(zeta, z)
                if rho2 > 0.75 * eps_patch:
                    continue
                lhs = (self.levi_polynomial(zeta, z) - self.r(zeta)).real
                # r_eps(zeta) <= r(zeta), so checking at eps = 0 is the
                # worst case over the exhaustion
                if lhs < c0 * rho2 - 1e-12:
                    ok = False
                    break
            if ok:
                break
            eps_patch *= 0.5
        return replace(self, patch=replace(self.patch, eps_patch=eps_patch))


# ---------------------------------------------------------------------------
# Builtins and the domain file format


def _ball(n: int = 2) -> DomainSpec:
    monos = []
    for j in range(n):
        a = [0] * n
        a[j] = 1
        monos.append(Monomial(tuple(a), tuple(a), 1.0 + 0.0j))
    monos.append(Monomial((0,) * n, (0,) * n, -1.0 + 0.0j))
    return DomainSpec(
        n=n,
        monomials=tuple(monos),
        box=tuple((-1.1, 1.1) for _ in range(n)),
        patch=PatchConfig(),
        name="ball",
    )


def _pinched() -> DomainSpec:
    # |z1|^2 + |z2|^2 - 2 Re(z1^2) + |z1|^4 on C^2: strictly plurisubharmonic,
    # bounded sublevel set, boundary critical point at the origin with real
    # Hessian of signature (-,+,+,+).
    monos = [
        Monomial((1, 0), (1, 0), 1.0),
        Monomial((0, 1), (0, 1), 1.0),
        Monomial((2, 0), (0, 0), -1.0),
        Monomial((0, 0), (2, 0), -1.0),
        Monomial((2, 0), (2, 0), 1.0),
    ]
    # sublevel set bounds: |z2|^2 < 2 Re(z1^2) - |z1|^2 - |z1|^4 <= 1/4 and
    # |z1| <= 1, so the box can hug the domain
    return DomainSpec(
        n=2,
        monomials=tuple(monos),
        box=((-1.05, 1.05), (-0.55, 0.55)),
        patch=PatchConfig(delta=0.15),
        name="pinched",
    )


def builtin_domain(name: str) -> DomainSpec:
    if name == "ball":
        return _ball(2)
    if name == "ball1":
        return _ball(1)
    if name == "ball3":
        return _ball(3)
    if name == "pinched":
        return _pinched()
    raise GeometryError(f"unknown builtin domain {name!r}")


def dump_domain(d: DomainSpec) -> str:
    """Plain structured text: one monomial record per line, then box and
    patch parameters."""
    lines = [f"n {d.n}", f"name {d.name}"]
    for m in d.monomials:
        a = " ".join(map(str, m.alpha))
        b = " ".join(map(str, m.beta))
        lines.append(f"mono {a} ; {b} ; {m.coeff.real!r} {m.coeff.imag!r}")
    for lo, hi in d.box:
        lines.append(f"box {lo!r} {hi!r}")
    p = d.patch
    lines.append(
        f"patch {p.delta!r} {p.eps_patch!r} {p.xi_inner!r} {p.xi_outer!r} "
        f"{p.smoothstep_degree}"
    )
    lines.append(f"gamma_min {d.gamma_min!r}")
    return "\n".join(lines) + "\n"


def load_domain(text: str) -> DomainSpec:
    n = None
    name = "custom"
    monos = []
    box = []
    patch = PatchConfig()
    gamma_min = 1e-2
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        key, rest = line.split(None, 1)
        if key == "n":
            n = int(rest)
        elif key == "name":
            name = rest.strip()
        elif key == "mono":
            a, b, c = rest.split(";")
            cre, cim = map(float, c.split())
            monos.append(
                Monomial(tuple(map(int, a.split())), tuple(map(int, b.split())),
                         complex(cre, cim))
            )
        elif key == "box":
            lo, hi = map(float, rest.split())
            box.append((lo, hi))
        elif key == "patch":
            vals = rest.split()
            patch = PatchConfig(float(vals[0]), float(vals[1]), float(vals[2]),
                                float(vals[3]), int(vals[4]))
        elif key == "gamma_min":
            gamma_min = float(rest)
        else:
            raise GeometryError(f"unknown domain-file key {key!r}")
    if n is None or not monos or len(box) != n:
        raise GeometryError("incomplete domain file")
    spec = DomainSpec(n=n, monomials=tuple(monos), box=tuple(box), patch=patch,
                      name=name, gamma_min=gamma_min)
    _check_real(spec)
    return spec


def _check_real(d: DomainSpec):
    """Real-valuedness: every monomial needs its conjugate partner."""
    table = {(m.alpha, m.beta): m.coeff for m in d.monomials}
    for (a, b), c in table.items():
        cc = table.get((b, a))
        if cc is None or abs(np.conj(c) - cc) > 1e-12:
            raise GeometryError(
                "defining function is not real-valued "
                f"(monomial {a}/{b} lacks its conjugate partner)"
            )
