"""Randomized invariant suites: the release gates behind `cban check`.

Each suite runs a batch of randomized instances against a property the
library is supposed to guarantee and reports per-instance failures. The
acceptance tests call these with their full trial counts; the CLI runs the
same defaults.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .tensor import GradTape, Tensor
from .data import Example
from .dynamics import (
    LeakySigmoid,
    NetState,
    Tanh,
    WeightBundle,
    detect_cycle,
    energy,
    fban,
    norm_1inf,
    settle,
    sweep_order,
    synchronous_step,
    update_layer,
)
from .training import TrainConfig, init_weights, td1_forward

__all__ = [
    "CheckResult",
    "check_gradients",
    "check_layerwise_descent",
    "check_settle_convergence",
    "check_synchronous_cycles",
    "check_leaky_bound",
    "SUITES",
    "run_suite",
]


@dataclass
class CheckResult:
    name: str
    passed: bool
    trials: int
    failures: list = field(default_factory=list)
    stats: dict = field(default_factory=dict)

    def lines(self):
        status = "pass" if self.passed else "FAIL"
        out = [f"[{status}] {self.name}: {self.trials} trials"
               + (f", stats {self.stats}" if self.stats else "")]
        out += [f"    failure: {msg}" for msg in self.failures[:10]]
        if len(self.failures) > 10:
            out.append(f"    ... and {len(self.failures) - 10} more")
        return out


def _random_examples(rng, n, units):
    out = []
    for _ in range(n):
        target = rng.uniform(-0.9, 0.9, size=units)
        mask = rng.random(units) < 0.5
        if not mask.any():
            mask[0] = True
        if mask.all():
            mask[-1] = False
        out.append(Example(target=target, mask=mask))
    return out


def _fd_gradient(f, x, step):
    g = np.zeros_like(x)
    flat, gflat = x.ravel(), g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        hi = f()
        flat[i] = orig - step
        lo = f()
        flat[i] = orig
        gflat[i] = (hi - lo) / (2 * step)
    return g


def check_gradients(seed=0, per_loss=20, max_sweeps=5, step=1e-5, tol=1e-4):
    """Unrolled autodiff versus central finite differences, per loss kind."""
    rng = np.random.default_rng(seed)
    failures = []
    trials = 0
    for loss_kind in ("se", "delta_e", "delta_e_plus"):
        for trial in range(per_loss):
            trials += 1
            n_vis = int(rng.integers(2, 5))
            n_hid = int(rng.integers(2, 4))
            arch = fban(n_vis, [n_hid])
            w = init_weights(arch, seed=int(rng.integers(1 << 30)))
            examples = _random_examples(rng, int(rng.integers(1, 3)), n_vis)
            sweeps = int(rng.integers(1, max_sweeps + 1))
            cfg = TrainConfig(epochs=1, loss=loss_kind, theta=1e-12,
                              max_iters=sweeps, batch_size=len(examples),
                              seed=0)
            with GradTape() as tape:
                loss, _ = td1_forward(examples, w, arch, cfg)
            grads = tape.gradient(loss, w.params())
            params = w.params()
            for i, p in enumerate(params):
                x = p.data  # perturbed in place by the fd helper
                fd = _fd_gradient(
                    lambda: td1_forward(examples, w, arch, cfg)[0].item(), x, step)
                scale = max(np.max(np.abs(grads[i])), np.max(np.abs(fd)), 1e-12)
                err = np.max(np.abs(grads[i] - fd)) / scale
                if err > tol:
                    failures.append(
                        f"{loss_kind} trial {trial} block {i}: rel err {err:.2e}")
    return CheckResult(name="gradients", passed=not failures, trials=trials,
                       failures=failures)


def _random_symmetric_fban(rng, max_units=64, max_hidden_layers=2, scale=0.1,
                           activation=None):
    depth = int(rng.integers(1, max_hidden_layers + 1))
    sizes = [int(s) for s in rng.integers(2, max_units + 1, size=depth + 1)]
    arch = fban(sizes[0], sizes[1:], activation_kind=activation or Tanh())
    forward = [Tensor(rng.normal(scale=scale, size=(lo, hi)))
               for lo, hi in zip(sizes[:-1], sizes[1:])]
    biases = [Tensor(rng.normal(scale=0.05, size=(n,))) for n in sizes]
    return arch, WeightBundle(forward=forward, biases=biases), sizes


def check_layerwise_descent(seed=0, trials=200, max_units=64, slack=1e-9,
                            theta=1e-3, max_iters=500, descent_sweeps=5):
    """Symmetric tanh nets: every layer update non-increasing, settle converges."""
    rng = np.random.default_rng(seed)
    failures = []
    t_stars = []
    for trial in range(trials):
        arch, w, sizes = _random_symmetric_fban(rng, max_units=max_units)
        state = NetState([Tensor(rng.uniform(-0.9, 0.9, size=(n,))) for n in sizes])
        e = energy(state, w, arch)
        for it in range(descent_sweeps):
            for l in sweep_order(arch.n_layers):
                state = update_layer(state, w, arch, l)
                e2 = energy(state, w, arch)
                if e2 > e + slack:
                    failures.append(
                        f"trial {trial}: energy rose {e2 - e:.2e} at layer {l}")
                e = e2
        state, report = settle(state, w, arch, theta=theta, max_iters=max_iters,
                               record_energy=True)
        t_stars.append(report.t_star)
        if not report.converged or report.cycle_length != 0:
            failures.append(f"trial {trial}: settle did not reach a fixed point")
        if np.any(np.diff(report.energy_trace) > slack):
            failures.append(f"trial {trial}: sweep-level energy rose during settle")
    return CheckResult(name="layerwise-energy-descent", passed=not failures,
                       trials=trials, failures=failures,
                       stats={"mean_t_star": float(np.mean(t_stars))})


def check_settle_convergence(seed=0, trials=50, theta=1e-3, max_iters=500):
    """Random symmetric nets with evidence clamped settle to fixed points."""
    rng = np.random.default_rng(seed)
    failures = []
    for trial in range(trials):
        arch, w, sizes = _random_symmetric_fban(rng, max_units=32)
        from .dynamics import EvidenceConstraint, initial_state

        mask = rng.random(sizes[0]) < 0.5
        if not mask.any():
            mask[0] = True
        if mask.all():
            mask[-1] = False
        ev = EvidenceConstraint(mask=mask,
                                values=np.where(mask, rng.uniform(-0.9, 0.9, sizes[0]), 0.0))
        _, report = settle(initial_state(arch, ev), w, arch, theta=theta,
                           max_iters=max_iters, record_energy=False)
        if not report.converged:
            failures.append(f"trial {trial}: no fixed point under clamping")
    return CheckResult(name="clamped-settle-convergence", passed=not failures,
                       trials=trials, failures=failures)


def check_synchronous_cycles(seed=0, trials=200, max_units=24, iters=3000,
                             tol=1e-8):
    """Parallel full-state updates end in period 1 or 2, never more."""
    rng = np.random.default_rng(seed)
    failures = []
    periods = {1: 0, 2: 0}
    for trial in range(trials):
        n = int(rng.integers(2, max_units + 1))
        scale = float(rng.choice([0.5, 1.5, 3.0, 6.0]))
        A = rng.normal(scale=scale / np.sqrt(n), size=(n, n))
        W = (A + A.T) / 2
        np.fill_diagonal(W, np.abs(np.diag(W)))
        b = rng.normal(scale=0.3, size=n)
        x = rng.uniform(-1.0, 1.0, size=n)
        window = [x.copy()]
        period = 0
        for _ in range(iters):
            x = synchronous_step(x, W, b, Tanh())
            window.append(x.copy())
            if len(window) > 8:
                window.pop(0)
            if len(window) >= 5:
                period = detect_cycle(window, tol=tol)
                if period:
                    break
        if period in (1, 2):
            periods[period] += 1
        else:
            failures.append(f"trial {trial}: period {period} (n={n}, scale={scale})")
    return CheckResult(name="synchronous-two-cycle-bound", passed=not failures,
                       trials=trials, failures=failures,
                       stats={"fixed_points": periods[1], "two_cycles": periods[2]})


def check_leaky_bound(seed=0, trials=200, alpha=0.2, product=0.9, theta=1e-6,
                      max_iters=500, expect_convergent=True):
    """Contraction bound: alpha * norm < 1 forces a fixed point.

    The iteration cap leaves room for the worst admissible contraction
    rate (at product q the error shrinks like q^t, so theta=1e-6 needs
    roughly 131 sweeps at q=0.9). With expect_convergent=False the suite
    instead demands that at least one run fails to converge (or cycles),
    which is what happens once the bound is far exceeded.
    """
    rng = np.random.default_rng(seed)
    failures = []
    non_convergent = 0
    for trial in range(trials):
        arch, w, sizes = _random_symmetric_fban(
            rng, max_units=24, scale=1.0, activation=LeakySigmoid(alpha))
        target = product / alpha
        current = norm_1inf(w)
        w = WeightBundle(
            forward=[Tensor(t.data * (target / current)) for t in w.forward],
            biases=w.biases)
        state = NetState([Tensor(rng.uniform(-1.0, 1.0, size=(n,))) for n in sizes])
        try:
            _, report = settle(state, w, arch, theta=theta, max_iters=max_iters,
                               record_energy=False)
            bad = not report.converged or report.cycle_length != 0
        except ValueError:
            bad = True  # divergence to non-finite values
        if bad:
            non_convergent += 1
            if expect_convergent:
                failures.append(f"trial {trial}: no fixed point at product {product}")
    if not expect_convergent and non_convergent == 0:
        failures.append(f"no non-convergent run observed at product {product}")
    name = f"leaky-bound(product={product})"
    return CheckResult(name=name, passed=not failures, trials=trials,
                       failures=failures, stats={"non_convergent": non_convergent})


def _energy_suite(seed):
    return [check_layerwise_descent(seed=seed)]


def _convergence_suite(seed):
    return [check_settle_convergence(seed=seed), check_synchronous_cycles(seed=seed)]


def _bound_suite(seed):
    return [check_leaky_bound(seed=seed, product=0.9, expect_convergent=True),
            check_leaky_bound(seed=seed + 1, product=5.0, max_iters=100,
                              expect_convergent=False)]


SUITES = {
    "gradients": lambda seed: [check_gradients(seed=seed)],
    "energy": _energy_suite,
    "convergence": _convergence_suite,
    "bound": _bound_suite,
}


def run_suite(name, seed=0):
    """Run one named suite; returns the list of CheckResults."""
    if name not in SUITES:
        raise ValueError(f"unknown suite {name!r}; choose from {sorted(SUITES)}")
    return SUITES[name](seed)
