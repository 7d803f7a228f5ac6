"""Fringe statistics: binomial errors, weighted fits, coherence times.

Amplitudes are peak-to-peak throughout: a fringe running from 0 to 1 has
amplitude 1.  Parameter standard errors come from the inverse of the
weighted normal matrix (absolute sigma, no rescaling by reduced chi^2).
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .lm import levenberg_marquardt

RANK_TOL = 1e-9


class FitError(RuntimeError):
    pass


@dataclass
class FitResult:
    model: str
    names: tuple
    values: np.ndarray
    covariance: np.ndarray
    chi_sq: float
    n_points: int
    converged: bool = True
    flags: tuple = ()
    extra: dict = field(default_factory=dict)

    @property
    def dof(self):
        return max(self.n_points - len(self.names), 0)

    @property
    def reduced_chi_sq(self):
        return self.chi_sq / self.dof if self.dof else 0.0

    @property
    def stderr(self):
        return np.sqrt(np.clip(np.diag(self.covariance), 0.0, None))

    @property
    def params(self):
        return dict(zip(self.names, self.values.tolist()))

    def __getitem__(self, name):
        return float(self.values[self.names.index(name)])

    def error(self, name):
        return float(self.stderr[self.names.index(name)])

    def to_report(self, inputs_digest=""):
        params = {n: {"value": float(v), "stderr": float(e)}
                  for n, v, e in zip(self.names, self.values, self.stderr)}
        rep = {"model": self.model, "params": params,
               "reduced_chi_sq": float(self.reduced_chi_sq), "n_points": int(self.n_points),
               "inputs_digest": inputs_digest}
        if not self.converged or self.flags:
            rep["diagnostics"] = {"converged": bool(self.converged), "flags": list(self.flags)}
        return rep


def digest_bytes(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()


def binomial_stderr(ups, shots):
    """Binomial standard error with add-one smoothing, p = (ups+1)/(shots+2).

    >>> round(float(binomial_stderr(250, 500)), 5)
    0.02236
    """
    ups = np.asarray(ups, dtype=float)
    shots = np.asarray(shots, dtype=float)
    if np.any(shots < 1) or np.any(ups < 0) or np.any(ups > shots):
        raise ValueError("need 0 <= ups <= shots and shots >= 1")
    p = (ups + 1.0) / (shots + 2.0)
    return np.sqrt(p * (1.0 - p) / shots)


def _covariance(J):
    """(J^T J)^-1 for a weighted Jacobian, plus a rank-deficiency flag."""
    s = np.linalg.svd(J, compute_uv=False)
    deficient = s.size == 0 or s[-1] <= RANK_TOL * s[0]
    if deficient:
        cov = np.linalg.pinv(J.T @ J)
        # unidentifiable directions get infinite variance
        null = np.abs(np.diag(J.T @ J)) <= RANK_TOL * max(np.abs(np.diag(J.T @ J)).max(), 1e-300)
        cov[null, null] = np.inf
        return cov, True
    return np.linalg.inv(J.T @ J), False


def _check_points(x, y, sigma, n_min):
    x, y, sigma = (np.asarray(a, dtype=float).ravel() for a in (x, y, sigma))
    if not x.size == y.size == sigma.size:
        raise ValueError("x, y and sigma must have equal length")
    if x.size < n_min:
        raise ValueError(f"need at least {n_min} points, got {x.size}")
    if np.any(~(sigma > 0)):
        raise ValueError("sigma must be > 0")
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(y))):
        raise ValueError("non-finite data")
    return x, y, sigma


# --- sinusoid -------------------------------------------------------------

SINUSOID_NAMES = ("baseline", "amplitude", "period", "phase")


def sinusoid(x, baseline, amplitude, period, phase):
    return baseline + 0.5 * amplitude * np.cos(2 * np.pi * x / period + phase)


def _sin_residuals(x, y, sigma):
    def fun(p):
        b, a, per, ph = p
        th = 2 * np.pi * x / per + ph
        c, s = np.cos(th), np.sin(th)
        r = (b + 0.5 * a * c - y) / sigma
        J = np.empty((x.size, 4))
        J[:, 0] = 1.0
        J[:, 1] = 0.5 * c
        J[:, 2] = 0.5 * a * s * 2 * np.pi * x / per ** 2
        J[:, 3] = -0.5 * a * s
        return r, J / sigma[:, None]
    return fun


def _periodogram_starts(x, y, sigma, n_best=3, period_guess=None):
    """Best candidate periods from a weighted linear scan over frequency."""
    w = 1.0 / sigma ** 2
    span = np.ptp(x)
    if span == 0:
        raise ValueError("x values are all equal")
    dx = np.diff(np.unique(x))
    f_hi = 0.5 / np.min(dx) if dx.size else 1.0 / span
    freqs = np.linspace(0.25 / span, f_hi, 400)
    sw = np.sqrt(w)
    th = 2 * np.pi * freqs[:, None] * x[None, :]
    # weighted design matrices for all frequencies at once: (F, N, 3)
    A = np.stack([np.ones_like(th), np.cos(th), np.sin(th)], axis=-1) * sw[None, :, None]
    AtA = np.einsum("fni,fnj->fij", A, A) + 1e-12 * np.eye(3)
    Aty = np.einsum("fni,n->fi", A, y * sw)
    lin = np.linalg.solve(AtA, Aty[..., None])[..., 0]
    chis = np.sum((np.einsum("fni,fi->fn", A, lin) - (y * sw)[None, :]) ** 2, axis=1)
    interior = np.r_[False, chis[1:-1] <= chis[:-2], False] & np.r_[False, chis[1:-1] <= chis[2:], False]
    cand = np.nonzero(interior)[0]
    if cand.size == 0:
        cand = np.array([np.argmin(chis)])
    cand = cand[np.argsort(chis[cand])][:n_best]
    starts = []
    for k in cand:
        b, c, s = lin[k]
        starts.append((b, 2 * np.hypot(c, s), 1.0 / freqs[k]))
    if period_guess is not None:
        A = np.column_stack([np.ones_like(x), np.cos(2 * np.pi * x / period_guess),
                             np.sin(2 * np.pi * x / period_guess)])
        b, c, s = np.linalg.lstsq(A * sw[:, None], y * sw, rcond=None)[0]
        starts.insert(0, (b, 2 * np.hypot(c, s), float(period_guess)))
    return starts


def _normalize_sinusoid(p):
    b, a, per, ph = p
    if per < 0:
        per, ph = -per, -ph
    if a < 0:
        a, ph = -a, ph + np.pi
    ph = (ph + np.pi) % (2 * np.pi) - np.pi
    return np.array([b, a, per, ph])


def fit_sinusoid(x, y, sigma, period_guess=None, fixed_period=None, start=None) -> FitResult:
    """Weighted fit of ``baseline + (amplitude/2) cos(2 pi x / period + phase)``.

    Multi-start: the best periodogram periods (plus ``period_guess``) times
    four starting phases, or a single descent from ``start`` when given.
    Solutions above the Nyquist frequency of the scan grid lose to any
    solution below it.
    With ``fixed_period`` the period is held and reported with zero error.
    Flat data is flagged ``rank_deficient``.
    """
    x, y, sigma = _check_points(x, y, sigma, 5)
    if fixed_period is not None:
        return _fit_sinusoid_fixed(x, y, sigma, float(fixed_period))
    fun = _sin_residuals(x, y, sigma)
    dx = np.diff(np.unique(x))
    # sampled points cannot tell a frequency from its aliases; prefer the one below Nyquist
    f_nyq = 0.5 / np.min(dx) if dx.size else np.inf
    best = None
    if start is not None:
        starts = [np.asarray(start, dtype=float)]
    else:
        starts = [np.array([b0, max(a0, 1e-3), per0, ph0])
                  for b0, a0, per0 in _periodogram_starts(x, y, sigma, period_guess=period_guess)
                  for ph0 in (0.0, 0.5 * np.pi, np.pi, 1.5 * np.pi)]
    for p0 in starts:
        out = levenberg_marquardt(fun, p0)
        if not np.all(np.isfinite(out.params)) or out.params[2] == 0:
            continue
        aliased = 1.0 / abs(out.params[2]) > f_nyq * (1 + 1e-9)
        key = (not out.converged, aliased, out.chi_sq)
        if best is None or key < best[0]:
            best = (key, out)
    if best is None:
        raise FitError("sinusoid fit failed from every start")
    out = best[1]
    p = _normalize_sinusoid(out.params)
    r, J = fun(p)
    cov, deficient = _covariance(J)
    flags = ("rank_deficient",) if deficient or p[1] < 1e-12 else ()
    return FitResult("sinusoid", SINUSOID_NAMES, p, cov, float(r @ r), x.size,
                     out.converged, flags, {"n_iter": out.n_iter})


def _fit_sinusoid_fixed(x, y, sigma, period):
    # linear in (baseline, c, s); convert to amplitude/phase afterwards
    th = 2 * np.pi * x / period
    A = np.column_stack([np.ones_like(x), np.cos(th), np.sin(th)]) / sigma[:, None]
    coef, *_ = np.linalg.lstsq(A, y / sigma, rcond=None)
    b, c, s = coef
    p = _normalize_sinusoid(np.array([b, 2 * np.hypot(c, s), period, np.arctan2(-s, c)]))
    r, J = _sin_residuals(x, y, sigma)(p)
    cov3, deficient = _covariance(J[:, [0, 1, 3]])
    cov = np.zeros((4, 4))
    cov[np.ix_([0, 1, 3], [0, 1, 3])] = cov3
    flags = ("rank_deficient",) if deficient or p[1] < 1e-12 else ()
    return FitResult("sinusoid", SINUSOID_NAMES, p, cov, float(r @ r), x.size, True, flags,
                     {"fixed_period": period})


# --- exponential decay ----------------------------------------------------

EXPDECAY_NAMES = ("intercept", "decay_constant")


def fit_exponential_decay(t, amp, sigma) -> FitResult:
    """Weighted fit of ``intercept * exp(-t / decay_constant)``.

    This is the exponential model by construction, also when the underlying
    decay is Gaussian; the resulting time constant is then model dependent.
    """
    t, amp, sigma = _check_points(t, amp, sigma, 3)
    if np.any(t < 0):
        raise ValueError("delays must be >= 0")
    if np.any(amp < 0):
        raise ValueError("negative amplitudes cannot be fitted by a decaying exponential")
    pos = amp > 0
    if pos.sum() >= 2 and np.ptp(t[pos]) > 0:
        w = (amp[pos] / sigma[pos]) ** 2
        slope, icpt = np.polyfit(t[pos], np.log(amp[pos]), 1, w=np.sqrt(w))
    else:
        slope, icpt = -1.0 / max(np.ptp(t), 1.0), 0.0
    tau0 = -1.0 / slope if slope < 0 else 10.0 * max(np.ptp(t), 1e-9)

    # fit the rate k = 1/T2 so the problem stays smooth through k -> 0
    def fun(p):
        a, k = p
        e = np.exp(-k * t)
        r = (a * e - amp) / sigma
        J = np.column_stack([e, -a * t * e]) / sigma[:, None]
        return r, J

    out = levenberg_marquardt(fun, [np.exp(icpt), 1.0 / tau0])
    a, k = out.params
    r, Jk = fun(out.params)
    covk, deficient = _covariance(Jk)
    # T2 = 1/k: propagate through the Jacobian of the reparametrisation
    values = np.array([a, 1.0 / k if k != 0 else np.inf])
    D = np.diag([1.0, -1.0 / k ** 2 if k != 0 else np.inf])
    with np.errstate(invalid="ignore"):
        cov = D @ covk @ D.T
    flags = []
    if deficient:
        flags.append("rank_deficient")
    if k <= 0:
        flags.append("non_decaying")
    return FitResult("expdecay", EXPDECAY_NAMES, values, cov, float(r @ r), t.size,
                     out.converged, tuple(flags), {"rate": float(k), "rate_stderr": float(np.sqrt(covk[1, 1]))})


def coherence_lower_bound_to_t2(amp_lower, t):
    """Exponential-model coherence time implied by contrast >= amp_lower at delay t."""
    if not 0 < amp_lower < 1:
        raise ValueError("amp_lower must lie in (0, 1)")
    if not t > 0:
        raise ValueError("t must be > 0")
    return -t / np.log(amp_lower)


def fit_baseline_drift(t, baseline, sigma, amplitude=1.0) -> FitResult:
    """Weighted straight line through control baselines vs in-sequence delay.

    The slope is divided by ``amplitude`` (the fringe amplitude it is quoted
    relative to).  Parameters: ``slope`` (1/s), ``offset``.
    """
    t, baseline, sigma = _check_points(t, baseline, sigma, 2)
    if np.ptp(t) == 0:
        raise ValueError("need at least two distinct delays")
    A = np.column_stack([t, np.ones_like(t)]) / sigma[:, None]
    coef, *_ = np.linalg.lstsq(A, baseline / sigma, rcond=None)
    cov = np.linalg.inv(A.T @ A)
    r = A @ coef - baseline / sigma
    scale = np.array([1.0 / amplitude, 1.0])
    return FitResult("baseline_drift", ("slope", "offset"), coef * scale,
                     cov * np.outer(scale, scale), float(r @ r), t.size)


def combine_runs(results, name=None) -> FitResult:
    """Inverse-variance weighted mean of one quantity over several results.

    ``results`` may hold FitResults (``name`` selects the parameter, default
    the first) or ``(value, stderr)`` pairs.  ``chi_sq`` is the scatter of
    the inputs about the mean.
    """
    vals, errs = [], []
    for r in results:
        if isinstance(r, FitResult):
            key = name or r.names[0]
            vals.append(r[key])
            errs.append(r.error(key))
        else:
            v, e = r
            vals.append(float(v))
            errs.append(float(e))
    if not vals:
        raise ValueError("nothing to combine")
    v, e = np.asarray(vals), np.asarray(errs)
    if np.any(~(e > 0)):
        raise ValueError("every input needs a positive standard error")
    w = 1.0 / e ** 2
    mean = float(np.sum(w * v) / np.sum(w))
    err = float(np.sqrt(1.0 / np.sum(w)))
    chi = float(np.sum(w * (v - mean) ** 2))
    label = name or (results[0].names[0] if isinstance(results[0], FitResult) else "value")
    res = FitResult("combined", (label,), np.array([mean]), np.array([[err ** 2]]), chi, v.size)
    res.extra["inputs"] = v.tolist()
    return res


# --- datasets -------------------------------------------------------------

@dataclass
class FringeAnalysis:
    test: FitResult
    control: FitResult | None
    control_contrast: float
    control_contrast_stderr: float
    amplitude_ratio: float
    amplitude_ratio_stderr: float

    def to_report(self, inputs_digest=""):
        rep = self.test.to_report(inputs_digest)
        rep["amplitude_ratio"] = {"value": self.amplitude_ratio, "stderr": self.amplitude_ratio_stderr}
        rep["control_contrast"] = {"value": self.control_contrast,
                                   "stderr": self.control_contrast_stderr}
        if self.control is not None:
            rep["control_fit"] = self.control.to_report(inputs_digest)
        return rep


def _populations(shots, ups, readout=None):
    keep = shots > 0
    p = ups[keep] / shots[keep]
    s = binomial_stderr(ups[keep], shots[keep])
    if readout is not None:
        span = readout.p_detect_down - readout.p_false_shelve_up
        p, s = readout.correct(p), s / span
    return keep, p, s


def model_weighted_sigma(p_model, shots, readout=None):
    """Binomial errors evaluated at a fitted model instead of the data.

    Same add-one smoothing as :func:`binomial_stderr`.  Data-derived weights
    favour points that fluctuated towards 0 or 1, which biases fringe
    amplitudes upwards by about 1% at 70 shots per point.
    """
    p = np.asarray(p_model, dtype=float)
    span = 1.0
    if readout is not None:
        span = readout.p_detect_down - readout.p_false_shelve_up
        p = p * span + (1.0 - readout.p_detect_down)
    p = np.clip(p, 0.0, 1.0)
    p_reg = (shots * p + 1.0) / (shots + 2.0)
    return np.sqrt(p_reg * (1.0 - p_reg) / shots) / span


def fit_fringe(x, shots, ups, readout=None, period_guess=None, fixed_period=None, reweight=2):
    """Sinusoid fit of counts, then ``reweight`` refits with model-based errors."""
    keep, p, s = _populations(shots, ups, readout)
    x, n = x[keep], shots[keep]
    fit = fit_sinusoid(x, p, s, period_guess=period_guess, fixed_period=fixed_period)
    for _ in range(reweight):
        if "rank_deficient" in fit.flags:
            break
        s = model_weighted_sigma(sinusoid(x, *fit.values), n, readout)
        fit = fit_sinusoid(x, p, s, fixed_period=fixed_period, start=fit.values)
    return fit


def _readout_from_metadata(md):
    from .noise import ReadoutParams
    ro = md.get("readout")
    return ReadoutParams(**ro) if ro else None


def analyze_fringes(ds, readout_correct=False, period_guess=None, fixed_period=None,
                    reweight=2) -> FringeAnalysis:
    """Fit the test fringe and normalise its amplitude to the control.

    If the control points were scanned in phase they are fitted as a fringe
    too.  Otherwise the control is a single fringe extreme (its scan barely
    moves it), and its contrast is the distance from the observed control
    population to the opposite readout extreme.
    """
    from .sequencer import CONTROL, TEST

    ro = _readout_from_metadata(ds.metadata)
    corr = ro if readout_correct and ro is not None else None
    x, shots, ups = ds.select(TEST)
    test = fit_fringe(x, shots, ups, corr, period_guess, fixed_period, reweight)
    control, cc, cc_err = None, np.nan, np.nan
    if ds.has_control:
        xc, nc, uc = ds.select(CONTROL)
        if ds.metadata.get("scan_variable") == "phase":
            control = fit_fringe(xc, nc, uc, corr, period_guess, fixed_period, reweight)
            cc, cc_err = control["amplitude"], control.error("amplitude")
        else:
            tot, up = int(nc.sum()), int(uc.sum())
            if tot == 0:
                raise ValueError("control points hold no valid shots")
            mean = up / tot
            err = float(binomial_stderr(up, tot))
            if corr is not None:
                top, bottom = 1.0, 0.0
                span = corr.p_detect_down - corr.p_false_shelve_up
                mean, err = float(corr.correct(mean)), err / span
            elif ro is not None:
                top, bottom = 1.0 - ro.p_false_shelve_up, 1.0 - ro.p_detect_down
            else:
                top, bottom = 1.0, 0.0
            cc = max(top - mean, mean - bottom)
            cc_err = err
    if ds.has_control:
        a, a_err = test["amplitude"], test.error("amplitude")
        ratio = a / cc
        ratio_err = np.hypot(a_err / cc, a * cc_err / cc ** 2)
    else:
        ratio, ratio_err = test["amplitude"], test.error("amplitude")
    return FringeAnalysis(test, control, float(cc), float(cc_err), float(ratio), float(ratio_err))
