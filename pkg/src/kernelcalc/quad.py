"""Sampling, Monte Carlo and stratified integration, and the verification
suites that check the kernel estimates at desk scale, uniformly along the
exhaustion.

Every sampler is seeded and chunked deterministically: the same (domain,
region, seed, N) always produces the same points, and every report is a
plain dict of JSON-serializable values with no volatile fields, so reruns
are byte-identical.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .geom import DomainSpec, GeometryError, builtin_domain
from . import dforms as df

__all__ = [
    "SampleSet",
    "IntegralEstimate",
    "sample",
    "mc_integral",
    "shell_stratified",
    "verify_bmk",
    "verify_typical_sweep",
    "verify_phiest",
    "verify_phisymm",
    "verify_c1diff",
    "verify_linf",
    "verify_adjoint",
    "report_to_json",
    "EPS_GRID",
]

EPS_GRID = (0.1, 0.05, 0.025, 0.0125)

SCHEMA_VERSION = 1


class SamplingError(RuntimeError):
    pass


@dataclass
class SampleSet:
    domain: str
    region: str
    seed: int
    n_points: int
    points: np.ndarray           # (N, n) complex
    weights: np.ndarray | None   # per-point measure weights, or None
    attempted: int = 0
    meta: dict | None = None


@dataclass
class IntegralEstimate:
    value: complex
    std_error: float
    n_points: int
    seed: int
    wall_time: float = 0.0  # in-memory only; never serialized into reports

    def as_dict(self):
        return {
            "value_re": float(np.real(self.value)),
            "value_im": float(np.imag(self.value)),
            "std_error": self.std_error,
            "n_points": self.n_points,
            "seed": self.seed,
        }


def _box_arrays(d: DomainSpec):
    lo = np.array([b[0] for b in d.box])
    hi = np.array([b[1] for b in d.box])
    return lo, hi


def _box_volume(d: DomainSpec) -> float:
    lo, hi = _box_arrays(d)
    return float(np.prod(hi - lo) ** 2)


def _uniform_box(d: DomainSpec, rng, count: int) -> np.ndarray:
    lo, hi = _box_arrays(d)
    x = rng.uniform(np.concatenate([lo, lo]), np.concatenate([hi, hi]),
                    (count, 2 * d.n))
    return x[:, : d.n] + 1j * x[:, d.n :]


def _r_vec(d: DomainSpec, pts: np.ndarray) -> np.ndarray:
    out = np.zeros(len(pts))
    for m in d.monomials:
        term = m.coeff * np.prod(pts ** np.array(m.alpha), axis=1) * np.prod(
            np.conj(pts) ** np.array(m.beta), axis=1
        )
        out += term.real
    return out


def sample(d: DomainSpec, region, n_points: int, seed: int) -> SampleSet:
    """Draw a reproducible sample of a region.

    region: "interior" (r_eps < 0; rejection in the box, weights give an
    unbiased volume measure), "boundary" (points on r_eps = 0; exact area
    weights for the round case, Newton-projected and weightless otherwise),
    or "band" (eps < -r < delta).  Pass a tuple (name, eps[, delta]).
    """
    name, *params = region if isinstance(region, tuple) else (region, 0.0)
    eps = params[0] if params else 0.0
    rng = np.random.default_rng(seed)

    if name in ("interior", "band"):
        delta = params[1] if len(params) > 1 else d.patch.delta
        pts = []
        attempted = 0
        max_rounds = 4000
        for _ in range(max_rounds):
            need = n_points - len(pts)
            if need <= 0:
                break
            chunk = max(2 * need, 1024)
            cand = _uniform_box(d, rng, chunk)
            attempted += chunk
            rv = _r_vec(d, cand)
            if name == "interior":
                keep = rv < -eps
            else:
                keep = (rv < -eps) & (rv > -delta)
            pts.extend(cand[keep][:need])
            if attempted > 1000 and len(pts) / attempted < 1e-3:
                raise SamplingError(
                    f"rejection efficiency below 1e-3 for region {name}; "
                    "bounding box appears misconfigured"
                )
        if len(pts) < n_points:
            raise SamplingError(f"could not draw {n_points} points of {name}")
        pts = np.array(pts)
        w = np.full(n_points, _box_volume(d) / attempted)
        return SampleSet(d.name, name, seed, n_points, pts, w, attempted)

    if name == "boundary":
        if d.name.startswith("ball"):
            # exact: uniform on the round sphere of the r_eps = 0 locus
            radius = math.sqrt(max(1.0 - eps, 0.0))
            x = rng.normal(size=(n_points, 2 * d.n))
            x /= np.linalg.norm(x, axis=1)[:, None]
            pts = radius * (x[:, : d.n] + 1j * x[:, d.n :])
            area = 2 * math.pi**d.n / math.factorial(d.n - 1) * radius ** (
                2 * d.n - 1
            )
            w = np.full(n_points, area / n_points)
            return SampleSet(d.name, name, seed, n_points, pts, w, n_points)
        # generic: seed in a thin band and project along the real gradient
        pts = []
        attempted = 0
        excluded = 0
        for _ in range(4000):
            if len(pts) >= n_points:
                break
            cand = _uniform_box(d, rng, 4 * (n_points - len(pts)) + 64)
            attempted += len(cand)
            rv = _r_vec(d, cand)
            near = cand[np.abs(rv + eps) < 0.2]
            for z in near:
                if len(pts) >= n_points:
                    break
                z = _project_to_boundary(d, z, eps)
                if z is None:
                    continue
                if d.gamma(z) < d.gamma_min:
                    excluded += 1
                    continue
                pts.append(z)
        if len(pts) < n_points:
            raise SamplingError("boundary projection starved; enlarge band")
        return SampleSet(
            d.name, name, seed, n_points, np.array(pts), None, attempted,
            meta={"excluded_low_gamma": excluded},
        )

    raise SamplingError(f"unknown region {name!r}")


def _project_to_boundary(d: DomainSpec, z, eps: float):
    """Newton iteration along the real gradient to r_eps = 0.  In complex
    coordinates the descent step for r with real gradient (2 Re g, -2 Im g)
    is -r conj(g) / (2 |g|^2)."""
    for _ in range(80):
        rv = d.r(z) + eps
        if abs(rv) < 1e-12:
            return z
        g = d.dr(z)
        g2 = float(np.real(np.vdot(g, g)))
        if g2 < 1e-18:
            return None
        z = z - rv * np.conj(g) / (2 * g2)
    return z if abs(d.r(z) + eps) < 1e-10 else None


def mc_integral(f, s: SampleSet) -> IntegralEstimate:
    """Unbiased estimate of the integral of f over the sampled region."""
    if s.weights is None:
        raise SamplingError("sample set carries no measure weights")
    vals = np.array([f(p) for p in s.points], dtype=complex)
    if not np.all(np.isfinite(vals)):
        bad = s.points[~np.isfinite(vals)][0]
        raise SamplingError(f"integrand not finite at sample {bad}")
    contrib = vals * s.weights
    total = contrib.sum()
    # variance over the attempted stream: accepted draws carry box_vol * f,
    # rejected draws contribute zero
    m = s.attempted or s.n_points
    scaled = contrib * m
    ex2 = float(np.sum(np.abs(scaled) ** 2)) / m
    var = max(ex2 - abs(total) ** 2, 0.0) / m
    return IntegralEstimate(total, math.sqrt(var), s.n_points, s.seed)


def shell_stratified(f, d: DomainSpec, z, n_per_shell: int, seed: int,
                     eps: float = 0.0, r_outer: float | None = None,
                     n_shells: int = 14) -> IntegralEstimate:
    """Stratified estimate of the integral of f over the interior, with
    geometric shells (factor 2) centered at z to tame distance-power
    singularities; the region beyond the outer shell is one stratum."""
    rng = np.random.default_rng(seed)
    n = d.n
    dim = 2 * n
    lo, hi = _box_arrays(d)
    if r_outer is None:
        r_outer = float(np.max(hi - lo))
    total = 0.0 + 0.0j
    var = 0.0
    count = 0
    zr = np.concatenate([np.real(z), np.imag(z)])
    sphere_vol = math.pi ** (dim // 2) / math.gamma(dim / 2 + 1)
    radii = [r_outer * 2.0**-k for k in range(n_shells + 1)]
    for k in range(n_shells):
        r_hi, r_lo = radii[k], radii[k + 1]
        u = rng.normal(size=(n_per_shell, dim))
        u /= np.linalg.norm(u, axis=1)[:, None]
        t = rng.uniform(r_lo**dim, r_hi**dim, n_per_shell) ** (1.0 / dim)
        xy = zr + u * t[:, None]
        pts = xy[:, :n] + 1j * xy[:, n:]
        inside = (_r_vec(d, pts) < -eps) & np.all(
            (xy >= np.concatenate([lo, lo])) & (xy <= np.concatenate([hi, hi])),
            axis=1,
        )
        vol = sphere_vol * (r_hi**dim - r_lo**dim)
        vals = np.array(
            [f(p) if ok else 0.0 for p, ok in zip(pts, inside)], dtype=complex
        )
        if not np.all(np.isfinite(vals)):
            raise SamplingError("integrand not finite inside a shell")
        total += vol * vals.mean()
        var += vol**2 * float(np.mean(np.abs(vals - vals.mean()) ** 2)) / n_per_shell
        count += n_per_shell
    # far stratum: everything outside the largest shell, rejection in box
    cand = _uniform_box(d, rng, 4 * n_per_shell)
    dist = np.linalg.norm(
        np.concatenate([np.real(cand), np.imag(cand)], axis=1) - zr, axis=1
    )
    keep = (dist > r_outer) & (_r_vec(d, cand) < -eps)
    vol_box = _box_volume(d)
    vals = np.array([f(p) if ok else 0.0 for p, ok in zip(cand, keep)],
                    dtype=complex)
    total += vol_box * vals.mean()
    var += vol_box**2 * float(np.mean(np.abs(vals - vals.mean()) ** 2)) / len(cand)
    count += len(cand)
    return IntegralEstimate(total, math.sqrt(var), count, seed)


# ---------------------------------------------------------------------------
# boundary/volume form integration helpers


def _tangent_frame(d: DomainSpec, z):
    """Oriented orthonormal real tangent basis of the boundary at z, with
    det[normal, T1, ..., T_{2n-1}] > 0 in (x1..xn, y1..yn) coordinates."""
    g = d.dr(z)
    normal = np.concatenate([2 * np.real(g), -2 * np.imag(g)])
    normal /= np.linalg.norm(normal)
    dim = 2 * d.n
    basis = [normal]
    for e in np.eye(dim):
        w = e.copy()
        for b in basis:
            w -= np.dot(w, b) * b
        nw = np.linalg.norm(w)
        if nw > 1e-8:
            basis.append(w / nw)
        if len(basis) == dim:
            break
    M = np.array(basis)
    if np.linalg.det(_reorder_to_complex_orientation(M)) < 0:
        basis[-1] = -basis[-1]
        M = np.array(basis)
    tangents = []
    for b in basis[1:]:
        tangents.append(b[: d.n] + 1j * b[d.n :])
    return tangents


def _reorder_to_complex_orientation(M):
    """Columns of M are in (x1..xn, y1..yn); reorder to (x1,y1,x2,y2,...),
    the orientation in which the complex volume form is positive."""
    n = M.shape[1] // 2
    order = []
    for j in range(n):
        order.extend([j, n + j])
    return M[:, order]


def integrate_boundary_form(form_at, s: SampleSet, d: DomainSpec) -> IntegralEstimate:
    """Integrate a (2n-1)-form over the boundary sample with area weights.

    The restriction to the boundary is computed by wedging with the unit
    conormal: the density against surface measure is
    -(omega ^ dr/|grad r|) evaluated on the oriented standard basis, which
    avoids building tangent frames point by point."""
    vals = np.zeros(s.n_points, dtype=complex)
    n = d.n
    for i, z in enumerate(s.points):
        form = form_at(z)
        g = d.dr(z)
        norm = 2.0 * float(np.linalg.norm(g))
        conormal = df.DoubleForm.one_form(n, "dzeta", g / norm) + \
            df.DoubleForm.one_form(n, "dzetabar", np.conj(g) / norm)
        top = df.wedge(form, conormal)
        vals[i] = -volume_form_value(top, n)
    contrib = vals * s.weights
    total = contrib.sum()
    var = float(np.mean(np.abs(contrib - contrib.mean()) ** 2)) * s.n_points
    return IntegralEstimate(total, math.sqrt(var), s.n_points, s.seed)


_STD_BASIS_CACHE = {}


def _standard_real_basis(n):
    """(x1, y1, x2, y2, ...) ordered complex tangent vectors."""
    if n not in _STD_BASIS_CACHE:
        out = []
        for j in range(n):
            e = np.zeros(n, dtype=complex)
            e[j] = 1.0
            out.append(e.copy())
            e2 = np.zeros(n, dtype=complex)
            e2[j] = 1j
            out.append(e2)
        _STD_BASIS_CACHE[n] = out
    return _STD_BASIS_CACHE[n]


def volume_form_value(form: df.DoubleForm, n: int, zeta_side=True) -> complex:
    """Value of a top-degree (in one variable) form on the oriented standard
    basis; multiplying by the Lebesgue measure gives its integral density."""
    basis = _standard_real_basis(n)
    if zeta_side:
        vecs = [(b, np.zeros(n)) for b in basis]
    else:
        vecs = [(np.zeros(n), b) for b in basis]
    return form.evaluate(vecs)


# ---------------------------------------------------------------------------
# batched ball kernels (flat metric): coefficient-array form algebra


def _bwedge(a: dict, b: dict) -> dict:
    out = {}
    for ka, va in a.items():
        for kb, vb in b.items():
            merged, sign = df._merge_sign(ka, kb)
            if merged is None:
                continue
            cur = out.get(merged)
            term = sign * va * vb
            out[merged] = term if cur is None else cur + term
    return out


_TOP_VALUE_CACHE = {}


def _top_values(n: int) -> dict:
    """Value of each zeta-side top monomial on the oriented standard basis."""
    if n not in _TOP_VALUE_CACHE:
        mono = tuple(range(2 * n))
        form = df.DoubleForm(n, {mono: 1.0})
        _TOP_VALUE_CACHE[n] = {mono: volume_form_value(form, n)}
    return _TOP_VALUE_CACHE[n]


def _ball_B0_batched(pts: np.ndarray, z: np.ndarray, n: int) -> dict:
    """B_0 coefficient arrays at (pts, z) for the flat metric."""
    w = pts - z[None, :]
    rho2 = np.sum(np.abs(w) ** 2, axis=1)
    beta = {(j,): np.conj(w[:, j]) / rho2 for j in range(n)}
    dbeta = {}
    for k in range(n):
        for j in range(n):
            c = -np.conj(w[:, j]) * w[:, k] / rho2**2
            if j == k:
                c = c + 1.0 / rho2
            mono, sign = df._merge_sign((n + k,), (j,))
            cur = dbeta.get(mono)
            dbeta[mono] = sign * c if cur is None else cur + sign * c
    out = beta
    for _ in range(n - 1):
        out = _bwedge(out, dbeta)
    scale = 1.0 / (2j * math.pi) ** n
    return {k: scale * v for k, v in out.items()}


def _ball_boundary_density(d: DomainSpec, pts: np.ndarray, z: np.ndarray,
                           f_vals: np.ndarray) -> np.ndarray:
    """-(f B_0 ^ dr/|grad r|) on the oriented standard basis, batched."""
    n = d.n
    B = _ball_B0_batched(pts, z, n)
    gam2 = 2.0 * np.linalg.norm(pts, axis=1)  # |grad r| for r = |z|^2 - 1
    conormal = {}
    for j in range(n):
        conormal[(j,)] = np.conj(pts[:, j]) / gam2
        conormal[(n + j,)] = pts[:, j] / gam2
    top = _bwedge(B, conormal)
    tv = _top_values(n)
    dens = np.zeros(len(pts), dtype=complex)
    for mono, arr in top.items():
        val = tv.get(mono)
        if val is not None:
            dens += arr * val
    return -f_vals * dens


def _ball_dbarf_B0_density(d: DomainSpec, pts: np.ndarray, z: np.ndarray,
                           dbar_coeffs) -> np.ndarray:
    """Top value of (sum_k c_k(zeta) dzetabar_k) ^ B_0, batched."""
    n = d.n
    B = _ball_B0_batched(pts, z, n)
    dform = {}
    for k in range(n):
        c = dbar_coeffs[k](pts)
        if np.any(c != 0):
            dform[(n + k,)] = np.asarray(c, dtype=complex)
    top = _bwedge(dform, B)
    tv = _top_values(n)
    dens = np.zeros(len(pts), dtype=complex)
    for mono, arr in top.items():
        val = tv.get(mono)
        if val is not None:
            dens += arr * val
    return dens


def shell_stratified_batched(f_batch, d: DomainSpec, z, n_per_shell: int,
                             seed: int, eps: float = 0.0,
                             r_outer: float | None = None,
                             n_shells: int = 16) -> IntegralEstimate:
    """shell_stratified with an array-valued integrand f(points) -> values."""
    rng = np.random.default_rng(seed)
    n = d.n
    dim = 2 * n
    lo, hi = _box_arrays(d)
    if r_outer is None:
        r_outer = float(np.max(hi - lo))
    total = 0.0 + 0.0j
    var = 0.0
    count = 0
    zr = np.concatenate([np.real(z), np.imag(z)])
    sphere_vol = math.pi ** (dim // 2) / math.gamma(dim / 2 + 1)
    radii = [r_outer * 2.0**-k for k in range(n_shells + 1)]
    for k in range(n_shells):
        r_hi, r_lo = radii[k], radii[k + 1]
        u = rng.normal(size=(n_per_shell, dim))
        u /= np.linalg.norm(u, axis=1)[:, None]
        t = rng.uniform(r_lo**dim, r_hi**dim, n_per_shell) ** (1.0 / dim)
        xy = zr + u * t[:, None]
        pts = xy[:, :n] + 1j * xy[:, n:]
        inside = (_r_vec(d, pts) < -eps) & np.all(
            (xy >= np.concatenate([lo, lo])) & (xy <= np.concatenate([hi, hi])),
            axis=1,
        )
        vals = np.zeros(n_per_shell, dtype=complex)
        if np.any(inside):
            vals[inside] = f_batch(pts[inside])
        if not np.all(np.isfinite(vals)):
            raise SamplingError("integrand not finite inside a shell")
        vol = sphere_vol * (r_hi**dim - r_lo**dim)
        total += vol * vals.mean()
        var += vol**2 * float(np.mean(np.abs(vals - vals.mean()) ** 2)) / n_per_shell
        count += n_per_shell
    cand = _uniform_box(d, rng, 4 * n_per_shell)
    dist = np.linalg.norm(
        np.concatenate([np.real(cand), np.imag(cand)], axis=1) - zr, axis=1
    )
    keep = (dist > r_outer) & (_r_vec(d, cand) < -eps)
    vol_box = _box_volume(d)
    vals = np.zeros(len(cand), dtype=complex)
    if np.any(keep):
        vals[keep] = f_batch(cand[keep])
    total += vol_box * vals.mean()
    var += vol_box**2 * float(np.mean(np.abs(vals - vals.mean()) ** 2)) / len(cand)
    count += len(cand)
    return IntegralEstimate(total, math.sqrt(var), count, seed)


# ---------------------------------------------------------------------------
# verification suites


def _sanitize(obj):
    if isinstance(obj, dict):
        return {k: _sanitize(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_sanitize(v) for v in obj]
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    return obj


def _report(command: str, config: dict, payload: dict) -> dict:
    from . import __version__

    return _sanitize({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "config": config,
        "versions": {"kernelcalc": __version__},
        **payload,
    })


def report_to_json(report: dict) -> str:
    return json.dumps(report, indent=2, sort_keys=True) + "\n"


def verify_bmk(d: DomainSpec, q: int, f, z_list, n_points: int, seed: int,
               f_dbar=None, f_name: str = "f", tol: float = 1e-2) -> dict:
    """Reproduction of the flat reproducing identity for scalar data:
    f(z) = boundary term - volume term against the degree-(q) kernel family.

    d must be a round domain (the exact case); f is a scalar callable with
    closed-form dbar components f_dbar (list of callables), or None for
    holomorphic/constant f.
    """
    if q != 0:
        raise NotImplementedError(
            "numerical reproduction is wired for scalar data; higher degrees "
            "are exercised through the symbolic engine"
        )
    n = d.n
    results = []
    if n == 1:
        for z in z_list:
            z = _to_point(z, n)
            val = _cauchy_disc(d, f, z)
            results.append(
                {"z": _fmt_pt(z), "reconstruction": _c2d(val),
                 "target": _c2d(f(z)), "residual": float(abs(val - f(z)))}
            )
    else:
        bset = sample(d, ("boundary", 0.0), n_points, seed)
        fast = d.name.startswith("ball")
        for iz, z in enumerate(z_list):
            z = _to_point(z, n)
            if d.r(z) > -0.05:
                raise SamplingError("reconstruction point too close to the boundary")
            if fast:
                f_vals = np.array([f(p) for p in bset.points])
                dens = _ball_boundary_density(d, bset.points, z, f_vals)
                contrib = dens * bset.weights
                val = contrib.sum()
                err = math.sqrt(
                    float(np.mean(np.abs(contrib - contrib.mean()) ** 2))
                    * bset.n_points
                )
            else:
                best = integrate_boundary_form(
                    lambda zeta: df.bmk_kernel(d, zeta, z, 0).scale(f(zeta)),
                    bset, d,
                )
                val = best.value
                err = best.std_error
            if f_dbar is not None:
                if fast:
                    dbar_batch = [
                        (lambda pts, g=g: np.full(len(pts), g(pts[0]))
                         if np.isscalar(g(pts[0])) else
                         np.array([g(p) for p in pts]))
                        for g in f_dbar
                    ]
                    vol = shell_stratified_batched(
                        lambda pts: _ball_dbarf_B0_density(d, pts, z, dbar_batch),
                        d, z, max(n_points // 20, 2000), seed + 17 * iz + 1,
                    )
                else:
                    def volume_density(zeta, z=z):
                        B = df.bmk_kernel(d, zeta, z, 0)
                        dbar = df.DoubleForm.one_form(
                            n, "dzetabar", [g(zeta) for g in f_dbar]
                        )
                        return volume_form_value(df.wedge(dbar, B), n)

                    vol = shell_stratified(
                        volume_density, d, z, max(n_points // 20, 2000),
                        seed + 17 * iz + 1,
                    )
                val = val - vol.value
                err = math.hypot(err, vol.std_error)
            results.append(
                {"z": _fmt_pt(z), "reconstruction": _c2d(val),
                 "target": _c2d(f(z)), "residual": float(abs(val - f(z))),
                 "std_error": err}
            )
    worst = max(r["residual"] for r in results)
    return _report(
        "verify_bmk",
        {"domain": d.name, "n": n, "q": q, "f": f_name, "N": n_points,
         "seed": seed, "tol": tol},
        {"points": results, "worst_residual": worst, "pass": worst <= tol},
    )


def _cauchy_disc(d: DomainSpec, f, z, tol: float = 1e-9):
    """Adaptive trapezoid Cauchy integral on the unit circle."""
    prev = None
    m = 64
    while m <= 2**16:
        theta = np.linspace(0.0, 2 * math.pi, m, endpoint=False)
        zeta = np.exp(1j * theta)
        vals = np.array([f(np.array([t])) for t in zeta], dtype=complex)
        integ = np.mean(vals * 1j * zeta / (zeta - z[0])) / 1j
        if prev is not None and abs(integ - prev) < tol:
            return integ
        prev = integ
        m *= 2
    return prev


def _fmt_pt(z):
    return [[float(c.real), float(c.imag)] for c in np.atleast_1d(z)]


def _to_point(z, n):
    z = np.asarray(z)
    if z.dtype == complex and len(z) == n:
        return z.astype(complex)
    flat = np.asarray(z, dtype=float).ravel()
    if len(flat) == n:
        return flat.astype(complex)
    if len(flat) == 2 * n:
        return flat[:n] + 1j * flat[n:]
    raise ValueError(f"point needs {n} complex or {2*n} real entries")


def _c2d(c):
    c = complex(c)
    return [c.real, c.imag]


# ---------------------------------------------------------------------------
# batched geometry over point arrays (monomial evaluation vectorizes)


def _dr_vec(d: DomainSpec, pts: np.ndarray) -> np.ndarray:
    out = np.zeros_like(pts)
    for m in d.monomials:
        zb = np.conj(pts)
        base = m.coeff * np.prod(zb ** np.array(m.beta), axis=1)
        for j in range(d.n):
            if m.alpha[j] == 0:
                continue
            e = list(m.alpha)
            e[j] -= 1
            out[:, j] += base * m.alpha[j] * np.prod(pts ** np.array(e), axis=1)
    return out


def _levi_vec(d: DomainSpec, pts: np.ndarray) -> np.ndarray:
    out = np.zeros((len(pts), d.n, d.n), dtype=complex)
    for m in d.monomials:
        for j in range(d.n):
            if m.alpha[j] == 0:
                continue
            for k in range(d.n):
                if m.beta[k] == 0:
                    continue
                ea = list(m.alpha)
                eb = list(m.beta)
                c = m.coeff * ea[j] * eb[k]
                ea[j] -= 1
                eb[k] -= 1
                out[:, j, k] += (
                    c * np.prod(pts ** np.array(ea), axis=1)
                    * np.prod(np.conj(pts) ** np.array(eb), axis=1)
                )
    return out


def _hessholo_vec(d: DomainSpec, pts: np.ndarray) -> np.ndarray:
    out = np.zeros((len(pts), d.n, d.n), dtype=complex)
    for m in d.monomials:
        zb = np.conj(pts)
        base = m.coeff * np.prod(zb ** np.array(m.beta), axis=1)
        for j in range(d.n):
            if m.alpha[j] == 0:
                continue
            for k in range(d.n):
                e = list(m.alpha)
                c = e[j]
                e[j] -= 1
                if e[k] == 0:
                    continue
                c *= e[k]
                e[k] -= 1
                out[:, j, k] += base * c * np.prod(pts ** np.array(e), axis=1)
    return out


def _gamma_vec(d: DomainSpec, pts: np.ndarray) -> np.ndarray:
    return np.linalg.norm(_dr_vec(d, pts), axis=1)


def _phi_P_vec(d: DomainSpec, pts: np.ndarray, z: np.ndarray, eps: float):
    """Batched (phi_eps, P_eps, rho2, gamma(pts)) against a fixed z."""
    Gz = d.levi(z)
    w = pts - z[None, :]
    G1 = _levi_vec(d, pts)
    rho2 = 0.5 * (
        np.real(np.einsum("njk,nj,nk->n", G1, w, np.conj(w)))
        + np.real(np.einsum("jk,nj,nk->n", Gz, w, np.conj(w)))
    )
    F = np.einsum("nj,nj->n", _dr_vec(d, pts), w) - 0.5 * np.einsum(
        "njk,nj,nk->n", _hessholo_vec(d, pts), w, w
    )
    r_pts = _r_vec(d, pts)
    epsp = d.patch.eps_patch
    t = np.clip((0.75 * epsp - rho2) / (0.25 * epsp), 0.0, 1.0)
    chi = t**5 * (70 * t**4 - 315 * t**3 + 540 * t**2 - 420 * t + 126)
    phi = chi * (F - (r_pts + eps)) + (1 - chi) * rho2
    gam = _gamma_vec(d, pts)
    gz = d.gamma(z)
    P = rho2 + 2.0 * ((r_pts + eps) / gam) * ((d.r(z) + eps) / gz)
    return phi, P, rho2, gam


def majorant_case_a_iii(d: DomainSpec, j: int, mu: int):
    """gamma(z)^2 / (P^(n - j/2 - mu) |phi|^(mu + 1)), batched in zeta."""

    def f(pts, z, eps):
        phi, P, _, _ = _phi_P_vec(d, pts, z, eps)
        gz = d.gamma(z)
        return gz**2 / (P ** (d.n - j / 2.0 - mu) * np.abs(phi) ** (mu + 1))

    return f


def verify_typical_sweep(d: DomainSpec, j: int, mu: int, lam: float,
                         eps_list, n_points: int, seed: int,
                         rays: int = 5, offset_factor: float = 1.5) -> dict:
    """Integrability sweep of the case-(a,iii) majorant along the exhaustion.

    The reconstruction points follow the boundary: for each ray direction
    the point z_eps sits at defining-function depth offset_factor * eps, so
    the singular pair regime is actually exercised as eps shrinks.
    """
    maj = majorant_case_a_iii(d, j, mu)
    anchor = np.zeros(d.n, dtype=complex)
    if d.name == "pinched":
        # rays inside the narrow negativity cone at the pinch point, where
        # the gradient norm degenerates and the estimate is sharpest
        angles = np.linspace(-0.15, 0.15, rays)
        dirs = [np.array([np.exp(1j * a), 0.0], dtype=complex) for a in angles]
    else:
        rng = np.random.default_rng(seed)
        dirs = []
        for _ in range(rays):
            u = rng.normal(size=2 * d.n)
            u /= np.linalg.norm(u)
            dirs.append(u[: d.n] + 1j * u[d.n :])
    grid = {}
    for ie, eps in enumerate(eps_list):
        for ir, u in enumerate(dirs):
            z = _point_at_depth(d, anchor, u, offset_factor * eps)
            est = shell_stratified_batched(
                lambda pts: maj(pts, z, eps) ** lam,
                d, z, max(n_points // 16, 1000), seed + 1000 * ie + ir,
                eps=eps,
            )
            grid[(ie, ir)] = (eps, _fmt_pt(z), est)
    per_ray = []
    for ir in range(rays):
        vals = [abs(grid[(ie, ir)][2].value) for ie in range(len(eps_list))]
        ratio = max(vals) / min(vals)
        increasing = all(vals[i + 1] >= vals[i] for i in range(len(vals) - 1))
        per_ray.append({"ray": ir, "estimates": vals, "ratio": ratio,
                        "monotone_increasing": increasing})
    max_ratio = max(r["ratio"] for r in per_ray)
    verdict_bounded = max_ratio <= 2.0
    verdict_growing = all(
        r["ratio"] >= 2.0 and r["monotone_increasing"] for r in per_ray
    )
    return _report(
        "verify_typical_sweep",
        {"domain": d.name, "j": j, "mu": mu, "lambda": lam,
         "eps_list": list(eps_list), "N": n_points, "seed": seed,
         "rays": rays, "offset_factor": offset_factor},
        {
            "cells": [
                {"eps": grid[(ie, ir)][0], "z": grid[(ie, ir)][1],
                 "estimate": _c2d(grid[(ie, ir)][2].value),
                 "std_error": grid[(ie, ir)][2].std_error}
                for ie in range(len(eps_list)) for ir in range(rays)
            ],
            "per_ray": per_ray,
            "max_ratio": max_ratio,
            "bounded": verdict_bounded,
            "growing": verdict_growing,
        },
    )


def _point_at_depth(d: DomainSpec, anchor, direction, depth: float):
    """Bisect along `anchor + t direction` until r = -depth."""

    def f(t):
        return d.r(anchor + t * direction) + depth

    a, fa = 0.0, f(0.0)
    if fa == 0.0:
        return anchor
    b = 1e-3
    for _ in range(80):
        if np.sign(f(b)) != np.sign(fa):
            break
        b *= 1.6
        if b > 8:
            raise SamplingError("depth bracketing failed")
    for _ in range(200):
        mid = 0.5 * (a + b)
        if np.sign(f(mid)) == np.sign(fa):
            a = mid
        else:
            b = mid
    return anchor + 0.5 * (a + b) * direction


def verify_phiest(d: DomainSpec, eps_list, n_pairs: int, seed: int) -> dict:
    """Sampled lower bound |phi_eps| >= c (|<dr(z), zeta - z>| + rho^2) on
    the near-boundary band times the interior."""
    per_eps = []
    for ie, eps in enumerate(eps_list):
        zs = sample(d, ("band", eps, d.patch.delta), n_pairs, seed + 3 * ie)
        ws = sample(d, ("interior", eps), n_pairs, seed + 3 * ie + 1)
        cmin = math.inf
        for zeta, z in zip(zs.points, ws.points):
            pairing = abs(np.dot(d.dr(z), zeta - z))
            denom = pairing + d.rho2(zeta, z)
            if denom < 1e-14:
                continue
            c = abs(d.phi_eps(zeta, z, eps)) / denom
            cmin = min(cmin, c)
        per_eps.append({"eps": eps, "c": cmin})
    cs = [p["c"] for p in per_eps]
    spread = max(cs) / min(cs)
    return _report(
        "verify_phiest",
        {"domain": d.name, "eps_list": list(eps_list), "pairs": n_pairs,
         "seed": seed},
        {"per_eps": per_eps, "spread": spread,
         "pass": min(cs) > 0 and spread <= 2.0},
    )


def verify_phisymm(d: DomainSpec, eps: float, separations, n_pairs: int,
                   seed: int, roundoff: float = 1e-12) -> dict:
    """sup |phi_eps(zeta, z) - conj(phi_eps(z, zeta))| / |zeta - z|^3 at each
    separation scale; the reflection carries the conjugation (checked
    exactly on a quadratic defining function).

    Dividing evaluation roundoff by |w|^3 produces a separation-dependent
    noise floor; measurements below it count as zero when judging stability
    (on the built-in domains the defect is identically zero in the patched
    zone, so the floor is what remains).
    """
    rng = np.random.default_rng(seed)
    rows = []
    for h in separations:
        base = sample(d, ("band", 0.0, d.patch.delta), n_pairs, seed + 1)
        sup = 0.0
        for zeta in base.points:
            u = rng.normal(size=2 * d.n)
            u /= np.linalg.norm(u)
            z = zeta - h * (u[: d.n] + 1j * u[d.n :])
            if d.r(z) > 0:
                continue
            diff = abs(
                d.phi_eps(zeta, z, eps) - np.conj(d.phi_eps(z, zeta, eps))
            )
            sup = max(sup, diff / h**3)
        rows.append({"separation": float(h), "sup_ratio": float(sup),
                     "noise_floor": roundoff / h**3})
    stable = all(
        b["sup_ratio"] <= 2.0 * a["sup_ratio"]
        or (a["sup_ratio"] <= a["noise_floor"]
            and b["sup_ratio"] <= b["noise_floor"])
        for a, b in zip(rows, rows[1:])
    )
    finite = all(math.isfinite(r["sup_ratio"]) for r in rows)
    return _report(
        "verify_phisymm",
        {"domain": d.name, "eps": eps, "separations": list(separations),
         "pairs": n_pairs, "seed": seed, "roundoff": roundoff},
        {"rows": rows, "pass": bool(finite and stable)},
    )


def verify_c1diff(d: DomainSpec, radii, n_dirs: int, seed: int) -> dict:
    """Finite-difference gradient of r/gamma on shrinking spheres around the
    boundary critical point: bounded, no growth trend."""
    crits = d.boundary_critical_points(n_seeds=200, seed=seed)
    if not crits:
        raise GeometryError("no boundary critical point found")
    p0 = crits[0]
    rng = np.random.default_rng(seed)
    dirs = rng.normal(size=(n_dirs, 2 * d.n))
    dirs /= np.linalg.norm(dirs, axis=1)[:, None]
    rows = []
    for rho in radii:
        h = rho * 1e-2
        worst = 0.0
        for u in dirs:
            z = p0 + (u[: d.n] + 1j * u[d.n :]) * rho

            def rg(pt):
                g = d.gamma(pt)
                return d.r(pt) / g if g > 0 else 0.0

            grad2 = 0.0
            for j in range(2 * d.n):
                e = np.zeros(2 * d.n)
                e[j] = h
                ec = e[: d.n] + 1j * e[d.n :]
                grad2 += ((rg(z + ec) - rg(z - ec)) / (2 * h)) ** 2
            worst = max(worst, math.sqrt(grad2))
        rows.append({"radius": rho, "max_gradient": worst})
    vals = [r["max_gradient"] for r in rows]
    ratios = [b / a for a, b in zip(vals, vals[1:])]
    ok = all(r <= 1.5 for r in ratios) and all(math.isfinite(v) for v in vals)
    return _report(
        "verify_c1diff",
        {"domain": d.name, "radii": list(radii), "n_dirs": n_dirs,
         "seed": seed},
        {"rows": rows, "consecutive_ratios": ratios, "pass": ok},
    )


def _leggauss_grid(lo, hi, nodes, dim):
    x, w = np.polynomial.legendre.leggauss(nodes)
    x = 0.5 * (hi - lo) * x + 0.5 * (hi + lo)
    w = 0.5 * (hi - lo) * w
    return x, w


def verify_adjoint(d: DomainSpec, nodes_per_dim: int = 32, tol: float = 1e-4,
                   support_radius: float = 0.85) -> dict:
    """|<dbar u, v> - <u, theta v>| on compactly supported test data, via a
    deterministic tensor Gauss-Legendre rule (~nodes^4 points)."""
    n = d.n
    if n != 2:
        raise NotImplementedError("adjoint pairing test is wired for n = 2")
    R2 = support_radius**2
    # u = bump^6 scalar; v = (z1 bump^6) dzbar_1; then
    # (dbar u)_1 = -6 bump^5 z1 and theta v = -(bump^6 - 6 |z1|^2 bump^5),
    # so <dbar u, v> = <u, theta v> by parts (compact support).
    x, w = _leggauss_grid(-support_radius, support_radius, nodes_per_dim, 4)
    X3, X4 = np.meshgrid(x, x, indexing="ij")
    wgt_inner = np.outer(w, w)
    A = 0.0 + 0.0j
    B = 0.0 + 0.0j
    for i1, x1 in enumerate(x):
        for i2, x2 in enumerate(x):
            Z1 = x1 + 1j * x2
            Z2 = X3 + 1j * X4
            s = R2 - (abs(Z1) ** 2 + np.abs(Z2) ** 2)
            mask = s > 0
            b6 = np.where(mask, s**6, 0.0)
            b5 = np.where(mask, s**5, 0.0)
            du1 = -6.0 * b5 * Z1
            vv1 = Z1 * b6
            th = -(b6 - 6.0 * abs(Z1) ** 2 * b5)
            wgt = w[i1] * w[i2] * wgt_inner
            A += np.sum(du1 * np.conj(vv1) * wgt)
            B += np.sum(b6 * np.conj(th) * wgt)
    resid = abs(A - B)
    return _report(
        "verify_adjoint",
        {"domain": d.name, "nodes_per_dim": nodes_per_dim,
         "N": nodes_per_dim**4, "tol": tol,
         "support_radius": support_radius},
        {"pairing_dbar": _c2d(A), "pairing_theta": _c2d(B),
         "residual": float(resid), "pass": resid <= tol},
    )


def verify_linf(d: DomainSpec, eps_list, n_points: int, seed: int,
                stability: float = 4.0) -> dict:
    """Plausibility ratio for the weighted sup-norm inequality: for a panel
    of (0,1)-forms compute the weighted sup of f against the weighted sups
    of dbar f and theta f plus the L2 norm, and check the fitted ratio is
    stable across the panel and the exhaustion."""
    n = d.n
    exp_top = 3 * (n + 2)

    def make_form(c1, c2, p):
        # f = (c1 zbar_2^p) dzbar_1 + (c2 zbar_1^p) dzbar_2, with closed-form
        # dbar (zero for these coefficients? no: dbar_j of zbar_k^p) and theta
        f1 = lambda z: c1 * np.conj(z[1]) ** p
        f2 = lambda z: c2 * np.conj(z[0]) ** p
        # dbar f = sum_j d f_k / dzbar_j dzbar_j ^ dzbar_k
        df1_b2 = lambda z: c1 * p * np.conj(z[1]) ** (p - 1)
        df2_b1 = lambda z: c2 * p * np.conj(z[0]) ** (p - 1)
        # theta f = -(d f1/dz_1 + d f2/dz_2) = 0 for these (antiholomorphic)
        return f1, f2, df1_b2, df2_b1

    panel = [make_form(1.0, 0.0, 1), make_form(0.5, 0.5, 2),
             make_form(0.0, 1.0, 1)]
    rows = []
    for ie, eps in enumerate(eps_list):
        ss = sample(d, ("interior", eps), n_points, seed + 7 * ie)
        gam = np.array([d.gamma(p) for p in ss.points])
        for ip, (f1, f2, df1_b2, df2_b1) in enumerate(panel):
            F1 = np.array([f1(p) for p in ss.points])
            F2 = np.array([f2(p) for p in ss.points])
            D1 = np.array([df1_b2(p) for p in ss.points])
            D2 = np.array([df2_b1(p) for p in ss.points])
            normf = np.sqrt(np.abs(F1) ** 2 + np.abs(F2) ** 2)
            # dbar f components on dzbar_2 ^ dzbar_1 and dzbar_1 ^ dzbar_2
            normdf = np.abs(D1 - 0) + np.abs(D2 - 0)
            lhs = float(np.max(gam**exp_top * normf))
            rhs_sup = float(np.max(gam**2 * normdf))
            l2 = math.sqrt(float(np.sum((normf**2) * ss.weights)))
            rhs = rhs_sup + 0.0 + l2
            rows.append(
                {"eps": eps, "form": ip, "lhs": lhs, "rhs": rhs,
                 "ratio": lhs / rhs if rhs > 0 else 0.0}
            )
    ratios = [r["ratio"] for r in rows if r["rhs"] > 0]
    ok = max(ratios) <= stability * max(min(ratios), 1e-12)
    return _report(
        "verify_linf",
        {"domain": d.name, "eps_list": list(eps_list), "N": n_points,
         "seed": seed, "stability": stability},
        {"rows": rows, "pass": bool(ok)},
    )
