"""
Randomized invariant suites run by ``pfbound check``.

Each suite draws its instances from one seeded generator, compares the library
against the brute-force oracles and stops at the first counterexample, which is
kept with its full input tensors so it can be replayed.
"""
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional

import numpy as np

from ..errors import DomainError, NumericalError
from ..logger import Logger
from .bound_full import BetaFn, beta_of, bound_value, build_bound, softmax_mean_check
from .bound_lowrank import (
    build_lowrank_from_features,
    cross_term_eigencheck,
    jensen_compensation,
    lowrank_bound_value,
    lowrank_quadform,
    woodbury_solve,
)
from .linear_model import batch_features
from .models import FeatureMap, LabeledDataset
from .optimizers import make_rng, spfb_step, theory_constants
from .oracles import (
    TOL_ENUMERATION,
    TOL_FINITE_DIFFERENCE,
    TOL_LINEAR_ALGEBRA,
    TOL_RESIDUAL,
    dense_quadform,
    dense_spd_solve,
    dense_symmetric_eig,
    exact_log_partition,
    fd_gradient,
)

logger = Logger()

SUITES = (
    "bound_validity",
    "tangency",
    "beta_range",
    "woodbury",
    "lowrank_domination",
    "cross_term",
    "preconditioner_spectrum",
)

DEFAULT_TOLERANCES = {
    "enumeration": TOL_ENUMERATION,
    "bound_slack": TOL_RESIDUAL,
    "finite_difference": TOL_FINITE_DIFFERENCE,
    "domination": TOL_LINEAR_ALGEBRA,
    "linear_algebra": TOL_LINEAR_ALGEBRA,
    "residual": TOL_RESIDUAL,
}


def _tolist(value: Any) -> Any:
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, (np.floating, np.integer)):
        return value.item()
    if isinstance(value, dict):
        return {k: _tolist(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_tolist(v) for v in value]
    return value


@dataclass
class SuiteResult:
    """Outcome of one suite: how many trials ran and the first failure, if any."""
    name: str
    trials: int = 0
    checks: int = 0
    worst: float = -math.inf  # largest violation margin seen (positive means failure)
    counterexample: Optional[Dict[str, Any]] = None
    notes: List[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return self.counterexample is None

    def observe(self, margin: float, **inputs: Any) -> bool:
        """Record one comparison; margin > 0 is a violation. Returns False on failure."""
        self.checks += 1
        if not math.isfinite(margin):
            margin = math.inf
        self.worst = max(self.worst, margin)
        if margin <= 0:
            return True
        if self.counterexample is None:
            self.counterexample = {"suite": self.name, "margin": margin, **_tolist(inputs)}
        return False


def _random_instance(rng: np.random.Generator, max_d: int, max_n: int, min_n: int = 1):
    d = int(rng.integers(1, max_d + 1))
    n = int(rng.integers(min_n, max_n + 1))
    return rng.standard_normal(d), rng.standard_normal((n, d))


def check_bound_validity(settings: Dict[str, Any], tol: Dict[str, float], rng: np.random.Generator, beta_fn: BetaFn) -> SuiteResult:
    """Bound value never below the exact log partition, at random points around the expansion point."""
    result = SuiteResult("bound_validity")
    for _ in range(settings["trials"]):
        theta_tilde, feats = _random_instance(rng, settings["max_d"], settings["max_n"])
        b = build_bound(theta_tilde, feats, beta_fn=beta_fn)
        result.trials += 1
        for _ in range(settings["points"]):
            theta = theta_tilde + rng.standard_normal(theta_tilde.size)
            exact = exact_log_partition(theta, feats)
            slack = bound_value(b, theta) - exact
            margin = -slack - tol["bound_slack"] * max(1.0, abs(exact))
            if not result.observe(margin, theta_tilde=theta_tilde, features=feats, theta=theta,
                                  bound_value=exact + slack, exact_log_partition=exact):
                return result
    return result


def check_tangency(settings: Dict[str, Any], tol: Dict[str, float], rng: np.random.Generator, beta_fn: BetaFn) -> SuiteResult:
    """Value and gradient of the bound match log Z at the expansion point."""
    result = SuiteResult("tangency")
    for _ in range(settings["trials"]):
        theta_tilde, feats = _random_instance(rng, settings["max_d"], settings["max_n"])
        b = build_bound(theta_tilde, feats, beta_fn=beta_fn)
        result.trials += 1
        exact = exact_log_partition(theta_tilde, feats)
        value_gap = abs(b.log_z - exact) - tol["bound_slack"] * max(1.0, abs(exact))
        mean_gap = softmax_mean_check(b, theta_tilde, feats) - tol["bound_slack"]
        fd = fd_gradient(lambda th: exact_log_partition(th, feats), theta_tilde, h=1e-5)
        fd_gap = float(np.max(np.abs(b.mu - fd))) - tol["finite_difference"]
        inputs = dict(theta_tilde=theta_tilde, features=feats)
        if not (result.observe(value_gap, check="value", **inputs)
                and result.observe(mean_gap, check="softmax_mean", **inputs)
                and result.observe(fd_gap, check="finite_difference", **inputs)):
            return result
    return result


def check_beta_range(settings: Dict[str, Any], tol: Dict[str, float], rng: np.random.Generator, beta_fn: BetaFn) -> SuiteResult:
    """Every inner beta lies in (0, 1/4]."""
    result = SuiteResult("beta_range")
    for _ in range(settings["trials"]):
        theta_tilde, feats = _random_instance(rng, settings["max_d"], settings["max_n"])
        # scores up to a few hundred in magnitude exercise both tails
        theta_tilde = theta_tilde * float(rng.choice([1e-8, 1.0, 100.0]))
        b = build_bound(theta_tilde, feats, beta_fn=beta_fn)
        result.trials += 1
        for beta in b.betas:
            margin = max(-float(beta), float(beta) - 0.25)
            if margin == 0.0 and beta <= 0:
                margin = math.ulp(0.0)
            if not result.observe(margin, theta_tilde=theta_tilde, features=feats, beta=float(beta)):
                return result
    return result


def check_woodbury(settings: Dict[str, Any], tol: Dict[str, float], rng: np.random.Generator, beta_fn: BetaFn) -> SuiteResult:
    """Woodbury solve agrees with a dense Cholesky solve."""
    result = SuiteResult("woodbury")
    for _ in range(settings["trials"]):
        d = int(rng.integers(1, settings["max_d"] + 1))
        k = int(rng.integers(1, min(settings["max_k"], d) + 1))
        Q, _ = np.linalg.qr(rng.standard_normal((d, k)))
        V = Q.T
        S = rng.uniform(1e-8, 10.0, size=k)
        D = rng.uniform(0.1, 10.0, size=d)
        rhs = rng.standard_normal(d)
        dense = (V.T * S) @ V + np.diag(D)
        expected = dense_spd_solve(dense, rhs)
        got = woodbury_solve(V, S, D, rhs)
        result.trials += 1
        rel = float(np.linalg.norm(got - expected) / max(np.linalg.norm(expected), 1e-300))
        if not result.observe(rel - tol["linear_algebra"], V=V, S=S, D=D, rhs=rhs, relative_error=rel):
            return result
    return result


def check_lowrank_domination(settings: Dict[str, Any], tol: Dict[str, float], rng: np.random.Generator, beta_fn: BetaFn) -> SuiteResult:
    """Low-rank curvature dominates the full one; the low-rank bound stays valid.

    Also checks orthonormal rows, agreement of mu and log z with the full bound
    and the diagonal compensation of every eviction.
    """
    result = SuiteResult("lowrank_domination")
    ranks = list(settings["ranks"])
    for _ in range(settings["trials"]):
        theta_tilde, feats = _random_instance(rng, settings["max_d"], settings["max_n"])
        d = theta_tilde.size
        k = min(int(rng.choice(ranks)), d)
        evictions: list = []
        state = build_lowrank_from_features(theta_tilde, feats[None], k, beta_fn=beta_fn, evictions=evictions)
        full = build_bound(theta_tilde, feats, beta_fn=beta_fn)
        result.trials += 1
        inputs = dict(theta_tilde=theta_tilde, features=feats, k=k)

        ortho = float(np.max(np.abs(state.V @ state.V.T - np.eye(k))))
        shift = float(np.max(np.abs(state.mu - full.mu)))
        lz = abs(state.log_z - full.log_z) - tol["bound_slack"] * max(1.0, abs(full.log_z))
        if not (result.observe(ortho - tol["domination"], check="orthonormal", **inputs)
                and result.observe(shift - tol["bound_slack"], check="mu", **inputs)
                and result.observe(lz, check="log_z", **inputs)):
            return result

        for _ in range(settings["points"]):
            x = rng.standard_normal(d)
            gap = dense_quadform(full.sigma, x) - lowrank_quadform(state, x)
            if not result.observe(gap - tol["domination"], check="domination", direction=x, **inputs):
                return result
            theta = theta_tilde + x
            exact = exact_log_partition(theta, feats)
            slack = lowrank_bound_value(state, theta, theta_tilde) - exact
            if not result.observe(-slack - tol["bound_slack"] * max(1.0, abs(exact)), check="validity", theta=theta, **inputs):
                return result
            for ev in evictions:
                F = jensen_compensation(ev.c, ev.v)
                jensen_gap = ev.c * float(x @ ev.v) ** 2 - float(F @ (x * x))
                if not result.observe(jensen_gap - tol["bound_slack"] * max(1.0, ev.c * float(x @ x)),
                                      check="jensen", c=ev.c, v=ev.v, direction=x, **inputs):
                    return result
    return result


def check_cross_term(settings: Dict[str, Any], tol: Dict[str, float], rng: np.random.Generator, beta_fn: BetaFn) -> SuiteResult:
    """a g' + g a' for orthogonal a, g has extreme eigenvalues +-|a||g|.

    Also confirms that the symmetric cross term has rank 2.
    """
    result = SuiteResult("cross_term")
    for _ in range(settings["trials"]):
        d = int(rng.integers(2, settings["max_d"] + 1))
        a = rng.standard_normal(d)
        g = rng.standard_normal(d)
        g -= (g @ a) / (a @ a) * a
        expected = float(np.linalg.norm(a) * np.linalg.norm(g))
        lmax, lmin = cross_term_eigencheck(a, g)
        w, _ = dense_symmetric_eig(np.outer(a, g) + np.outer(g, a))
        result.trials += 1
        scale = max(1.0, expected)
        err = max(abs(lmax - expected), abs(lmin + expected), abs(w[-1] - expected), abs(w[0] + expected))
        nonzero = int(np.sum(np.abs(w) > tol["linear_algebra"] * scale))
        if not (result.observe(err - tol["linear_algebra"] * scale, a=a, g=g, eigenvalues=w)
                and result.observe(float(nonzero - 2), check="rank", a=a, g=g, eigenvalues=w)):
            return result
    return result


def _spectrum_dataset(rng: np.random.Generator, T: int, p: int, n: int) -> LabeledDataset:
    X = rng.standard_normal((T, p))
    X /= np.linalg.norm(X, axis=1, keepdims=True)
    labels = rng.integers(1, n + 1, size=T)
    return LabeledDataset(features=X, labels=labels, n_classes=n, name="spectrum")


def check_preconditioner_spectrum(settings: Dict[str, Any], tol: Dict[str, float], rng: np.random.Generator, beta_fn: BetaFn) -> SuiteResult:
    """Smallest eigenvalue of (Sigma_t + lam I)^{-1} lies in [mu1, mu2].

    Sigma_t are the single-sample bounds met along an SPFB run from theta = 0
    with a small eta0 on unit-norm data.
    """
    result = SuiteResult("preconditioner_spectrum")
    lam = float(settings.get("lambda", 0.1))
    n = int(settings.get("n", 3))
    p = int(settings.get("p", 5))
    trials = int(settings["trials"])
    data = _spectrum_dataset(rng, max(trials, 2 * n), p, n)
    fmap = FeatureMap.for_dataset(data)
    consts = theory_constants(data, lam, fmap)

    order = rng.permutation(data.T)
    feats_all = batch_features(fmap, data.features)
    eta0 = float(settings.get("eta0", 0.01))
    theta = np.zeros(fmap.d)
    for t in range(1, trials + 1):
        j = int(order[(t - 1) % data.T])
        bound = build_bound(theta, feats_all[j], beta_fn=beta_fn)
        w, _ = dense_symmetric_eig(bound.sigma + lam * np.eye(fmap.d))
        smallest_inverse = 1.0 / w[-1]
        margin = max(consts.mu1 - smallest_inverse, smallest_inverse - consts.mu2)
        result.trials += 1
        if not result.observe(margin - tol["linear_algebra"], theta=theta, features=feats_all[j], lam=lam,
                              mu1=consts.mu1, mu2=consts.mu2, value=smallest_inverse):
            return result
        f_true = feats_all[j][data.labels0[j]]
        theta = spfb_step(theta, bound, f_true, eta0 / t, lam)
    return result


SUITE_FUNCTIONS: Dict[str, Callable[..., SuiteResult]] = {
    "bound_validity": check_bound_validity,
    "tangency": check_tangency,
    "beta_range": check_beta_range,
    "woodbury": check_woodbury,
    "lowrank_domination": check_lowrank_domination,
    "cross_term": check_cross_term,
    "preconditioner_spectrum": check_preconditioner_spectrum,
}


def flipped_beta(u):
    """beta with its sign flipped; used to confirm the suites catch a broken bound."""
    return -beta_of(u)


def run_suites(
    check_settings: Dict[str, Any],
    names: Optional[List[str]] = None,
    trials: Optional[int] = None,
    inject_bug: bool = False,
    seed: Optional[int] = None,
) -> List[SuiteResult]:
    """Run the named suites (all by default) with sizes from the ``check`` config section."""
    names = list(names or SUITES)
    unknown = [n for n in names if n not in SUITE_FUNCTIONS]
    if unknown:
        raise DomainError(f"unknown check suite(s): {', '.join(unknown)}")
    if trials is not None and trials < 1:
        raise DomainError(f"trials must be >= 1, got {trials}")

    tol = dict(DEFAULT_TOLERANCES)
    tol.update(check_settings.get("tolerances", {}) or {})
    beta_fn = flipped_beta if inject_bug else beta_of
    base_seed = int(check_settings.get("seed", 0) if seed is None else seed)

    results = []
    for offset, name in enumerate(names):
        settings = dict(check_settings.get(name, {}) or {})
        if trials is not None:
            settings["trials"] = trials
        rng = make_rng(base_seed + offset)
        logger.debug(f"running check suite {name} with {settings}")
        try:
            result = SUITE_FUNCTIONS[name](settings, tol, rng, beta_fn)
        except NumericalError as exc:
            result = SuiteResult(name)
            result.observe(math.inf, error=str(exc))
        logger.info(f"check {name}: {'pass' if result.passed else 'FAIL'} "
                    f"({result.trials} trials, {result.checks} comparisons, worst margin {result.worst:.3e})")
        results.append(result)
    return results


def write_repro(result: SuiteResult, out_dir: Path) -> Path:
    """Serialize the first counterexample of a failed suite as JSON under ``out_dir``."""
    if result.counterexample is None:
        raise DomainError(f"suite {result.name} has no counterexample")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"repro_{result.name}.json"
    path.write_text(json.dumps(result.counterexample, indent=2, sort_keys=True), encoding="utf-8")
    return path
