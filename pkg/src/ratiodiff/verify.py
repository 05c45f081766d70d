"""Self-verification suite.

Runs the library's mathematical invariants end to end and reports a
named pass/fail verdict for each: forward-kernel consistency, exact
reversal, sampler step laws and local orders, loss equivalences,
gradient checks, and leak-freedom.  The fast level sizes every check
for an interactive wait; full sizes them for confidence.

The negative control reruns the reverse-simulation check with the
marginal ratio inverted inside the reverse rates.  That check must
then fail; it exists to prove the suite can catch a planted bug.
"""

from __future__ import annotations

import time

import numpy as np

from .errors import ConfigError
from .losses import (
    L2Head,
    OrdinalKernelSpec,
    TrainingBatch,
    expected_cross_entropy_observed,
    expected_cross_entropy_soft,
    loss_path_kl_tabular,
    make_head,
    ordinal_log_kernel,
    ordinal_score_target,
    x0_marginal_transform,
)
from .models import (
    ExactTabularModel,
    backprop_gradient,
    leak_check,
    tabular_conditionals,
)
from .nets import EnergyModel, HollowModel, MaskedModel, TabularModel, softmax
from .rates import RateSpec, kernel_matrix, uniform_rate
from .samplers import (
    analytical_row_probs,
    euler_row_probs,
    exact_reverse_simulate,
    g_value,
    lb_corrector_step,
)
from .schedules import NoiseSchedule
from .spaces import StateSpace
from .tabular import (
    UNREACHABLE_MASS,
    distribution_from_weights,
    exact_marginal,
    full_generator,
    reverse_transition_exact,
    substitute_index,
    uniform_distribution,
)

LEVELS = ("fast", "full")


def _random_dist(space, seed, floor=0.5):
    rng = np.random.default_rng(seed)
    return distribution_from_weights(space, rng.uniform(size=space.n_states) + floor)


def _toy_stack(dims=2, vocab=3, seed=0, floor=0.5):
    space = StateSpace(dims=dims, vocab=vocab)
    pi0 = _random_dist(space, seed, floor=floor)
    sched = NoiseSchedule(kind="constant", base_rate=1.0, horizon=1.0)
    rate = uniform_rate(vocab)
    return space, pi0, sched, rate


def _empirical_tv(states, space, target):
    idx = space.state_to_index(states)
    freq = np.bincount(idx, minlength=space.n_states) / states.shape[0]
    return 0.5 * float(np.abs(freq - target).sum())


def _flipped_rate_table(q_t, rate, sched, t):
    """Planted bug for the negative control: marginal ratio upside down."""
    space = q_t.space
    n = space.require_tabular()
    digits = space.enumerate_states()
    sub = substitute_index(space, np.arange(n, dtype=np.int64), digits)
    q = q_t.probs
    safe = np.where(q[sub] >= UNREACHABLE_MASS, q[sub], 1.0)
    ratio = np.where(q >= UNREACHABLE_MASS, q, 0.0)[:, None, None] / safe
    table = ratio * float(sched.beta(t)) * rate.matrix.T[digits]
    c_axis = np.arange(space.vocab)
    table[digits[:, :, None] == c_axis[None, None, :]] = 0.0
    return table


def check_kernel_rows_stochastic(level):
    rng = np.random.default_rng(20)
    off = rng.uniform(0.2, 2.0, size=(4, 4))
    np.fill_diagonal(off, 0.0)
    general = RateSpec(vocab=4, matrix=off - np.diag(off.sum(axis=1)))
    worst = 0.0
    for rate in (uniform_rate(4), general):
        for tau in np.linspace(0.0, 12.0, 25):
            k = kernel_matrix(rate, float(tau))
            if k.min() < -1e-12:
                return False, f"negative kernel entry at tau={tau:.2f}"
            worst = max(worst, float(np.max(np.abs(k.sum(axis=1) - 1.0))))
    return worst <= 1e-9, f"max row-sum deviation {worst:.2e}"


def check_kolmogorov_forward_residual(level):
    """Central-difference time derivative of the marginal against q G beta."""
    space, pi0, sched, rate = _toy_stack(seed=1)
    gen = full_generator(space, rate)
    t = 0.5
    errs = []
    for h in (1e-3, 5e-4):
        plus = exact_marginal(pi0, t + h, sched, rate).probs
        minus = exact_marginal(pi0, t - h, sched, rate).probs
        lhs = (plus - minus) / (2.0 * h)
        rhs = float(sched.beta(t)) * (exact_marginal(pi0, t, sched, rate).probs @ gen)
        errs.append(float(np.max(np.abs(lhs - rhs))))
    ratio = errs[0] / errs[1]
    return 3.5 <= ratio <= 4.5, f"halving ratio {ratio:.3f} (want 4)"


def check_exact_reverse_recovers_data(level, rate_table_fn=None):
    if level == "full":
        space, pi0, sched, rate = _toy_stack(dims=4, vocab=3, seed=13, floor=0.1)
        n = 100_000
    else:
        space, pi0, sched, rate = _toy_stack(dims=3, vocab=3, seed=13, floor=0.1)
        n = 30_000
    out = exact_reverse_simulate(
        pi0, sched, rate, n, np.random.default_rng(2), rate_table_fn=rate_table_fn
    )
    tv = _empirical_tv(out, space, pi0.probs)
    return tv <= 0.05, f"terminal TV {tv:.4f} at {n} paths"


def check_euler_local_order(level):
    space, pi0, sched, rate = _toy_stack(seed=5)
    model = ExactTabularModel(pi0, sched, rate)
    t = 0.6
    errs = []
    for eps in (1e-2, 5e-3, 2.5e-3):
        exact = reverse_transition_exact(pi0, t - eps, t, sched, rate).matrix
        worst = 0.0
        for i, x in enumerate(space.enumerate_states()):
            rows = euler_row_probs(model, x[None, :], t, eps, sched, rate)[0]
            joint = np.kron(rows[0], rows[1])
            worst = max(worst, float(np.max(np.abs(joint - exact[i]))))
        errs.append(worst)
    ratios = (errs[0] / errs[1], errs[1] / errs[2])
    ok = all(3.0 < r < 5.0 for r in ratios)
    return ok, f"halving ratios {ratios[0]:.2f}, {ratios[1]:.2f} (want 4)"


def check_analytical_step_exactness(level):
    """One analytical step against the brute-force mid-state law."""
    space, pi0, sched, rate = _toy_stack(dims=2, vocab=3, seed=9)
    model = ExactTabularModel(pi0, sched, rate, mode="x0_denoising")
    t, eps = 0.7, 0.3
    k0 = kernel_matrix(rate, float(sched.cumulative(0.0, t - eps)))
    k1 = kernel_matrix(rate, float(sched.cumulative(t - eps, t)))
    states = space.enumerate_states()
    worst = 0.0
    for xt in states:
        rows = analytical_row_probs(model, xt[None, :], t, eps, sched, rate)[0]
        for d in range(space.dims):
            num = np.zeros(space.vocab)
            for j, x0 in enumerate(states):
                for xm in states:
                    w = pi0.probs[j]
                    for e in range(space.dims):
                        w *= k0[x0[e], xm[e]] * k1[xm[e], xt[e]]
                    num[xm[d]] += w
            want = num / num.sum()
            worst = max(worst, float(np.max(np.abs(rows[d] - want))))
    return worst <= 1e-9, f"max one-step law deviation {worst:.2e}"


def check_corrector_balance_identity(level):
    worst = 0.0
    for kind in ("sqrt", "t_over_1pt"):
        for u in (0.1, 0.5, 1.0, 2.0, 10.0):
            worst = max(worst, abs(g_value(u, kind) - u * g_value(1.0 / u, kind)))
    return worst <= 1e-12, f"max weight-identity deviation {worst:.2e}"


def check_corrector_invariance_chain(level):
    """A long balanced-jump chain started at q_t must stay at q_t."""
    space, pi0, sched, rate = _toy_stack(dims=3, vocab=3, seed=11)
    model = ExactTabularModel(pi0, sched, rate)
    t = 0.5
    target = exact_marginal(pi0, t, sched, rate)
    rng = np.random.default_rng(33)
    n = 30_000 if level == "full" else 12_000
    steps = 400 if level == "full" else 200
    xs = target.sample(n, rng)
    for _ in range(steps):
        xs = lb_corrector_step(model, xs, t, 1e-2, "sqrt", sched, rate, rng)
    tv = _empirical_tv(xs, space, target.probs)
    return tv <= 0.05, f"chain TV {tv:.4f} after {steps} steps"


def check_loss_equivalence_observed_vs_soft(level):
    space, pi0, sched, rate = _toy_stack(dims=3, vocab=3, seed=7)
    q_t = exact_marginal(pi0, 0.45, sched, rate)
    model = EnergyModel(space, hidden=(16,), seed=3)
    v_obs, g_obs = expected_cross_entropy_observed(model, q_t, 0.45)
    v_soft, g_soft = expected_cross_entropy_soft(model, q_t, 0.45)
    dv = abs(v_obs - v_soft)
    dg = float(np.max(np.abs(g_obs - g_soft)))
    return dv <= 1e-8 and dg <= 1e-8, f"value gap {dv:.2e}, gradient gap {dg:.2e}"


def check_binary_l2_reduction(level):
    rng = np.random.default_rng(16)
    b, d = 64, 5
    logits = rng.normal(size=(b, d, 2))
    batch = TrainingBatch(
        x0=np.zeros((b, d), dtype=np.int64),
        t=np.full(b, 0.5),
        x_t=rng.integers(0, 2, size=(b, d)),
    )
    value, _ = L2Head().evaluate(logits, batch)
    p_obs = np.take_along_axis(
        softmax(logits, axis=-1), batch.x_t[..., None], axis=-1
    )[..., 0]
    want = float(np.mean((2.0 * (1.0 - p_obs) ** 2 - 1.0).sum(axis=1)))
    gap = abs(value - want)
    return gap <= 1e-12, f"binary reduction gap {gap:.2e}"


def check_gradient_engine(level):
    space = StateSpace(dims=3, vocab=3)
    sched = NoiseSchedule(kind="constant", base_rate=1.0, horizon=1.0)
    rate = uniform_rate(3)
    rng = np.random.default_rng(8)
    cases = [
        (EnergyModel(space, hidden=(12,), seed=4), "ce"),
        (MaskedModel(space, hidden=(12,), seed=5), "l2"),
    ]
    if level == "full":
        cases.append((HollowModel(space, stream_width=10, n_layers=2, seed=6), "ce"))
        cases.append(
            (MaskedModel(space, hidden=(12,), mode="x0_denoising", seed=7), "x0_ce")
        )
    worst = 0.0
    for model, kind in cases:
        head = make_head(kind, sched, rate)
        batch = TrainingBatch(
            x0=rng.integers(0, 3, size=(6, 3)),
            t=rng.uniform(0.1, 0.9, size=6),
            x_t=rng.integers(0, 3, size=(6, 3)),
        )
        _, grads = backprop_gradient(model, head, batch)
        base = model.flat_params().copy()
        h = 1e-5
        for i in rng.choice(model.n_params, size=10, replace=False):
            bumped = base.copy()
            bumped[i] = base[i] + h
            model.set_flat_params(bumped)
            up, _ = backprop_gradient(model, head, batch)
            bumped[i] = base[i] - h
            model.set_flat_params(bumped)
            down, _ = backprop_gradient(model, head, batch)
            fd = (up - down) / (2.0 * h)
            denom = max(abs(fd), abs(grads[i]), 1e-8)
            worst = max(worst, abs(fd - grads[i]) / denom)
        model.set_flat_params(base)
    return worst <= 1e-4, f"max relative gradient error {worst:.2e}"


def check_leak_freedom(level):
    space = StateSpace(dims=4, vocab=3)
    trials = 10_000 if level == "full" else 500
    rng = np.random.default_rng(10)
    models = [
        MaskedModel(space, hidden=(10,), seed=11),
        HollowModel(space, stream_width=8, n_layers=2, seed=12),
    ]
    bad = 0
    worst = 0.0
    for model in models:
        report = leak_check(model, trials, rng)
        bad += report.violations
        worst = max(worst, report.max_deviation)
    return bad == 0, f"{bad} violations, max deviation {worst:.3e}, {trials} trials each"


def check_x0_transform_identity(level):
    """Clean posterior pushed through the kernel equals the noisy conditional."""
    space, pi0, sched, rate = _toy_stack(dims=2, vocab=3, seed=14)
    model = ExactTabularModel(pi0, sched, rate, mode="x0_denoising")
    t = 0.6
    q_t = exact_marginal(pi0, t, sched, rate)
    cond = tabular_conditionals(q_t)
    states = space.enumerate_states()
    logits = model.conditional_logits_batch(states, np.full(space.n_states, t))
    mixed = x0_marginal_transform(softmax(logits, axis=-1), sched, rate, t)
    worst = float(np.max(np.abs(mixed - cond)))
    return worst <= 1e-9, f"max mixture deviation {worst:.2e}"


def check_ordinal_score_targets(level):
    kspec = OrdinalKernelSpec(corrupt_rate=2.0, support=9)
    t = 0.37
    logk = ordinal_log_kernel(kspec, t)
    last = kspec.support - 1
    worst = 0.0
    for x0 in range(kspec.support):
        for xt in range(kspec.support):
            got = ordinal_score_target(
                np.array([[x0]]), np.array([[xt]]), np.array([t]), kspec
            )[0, 0]
            if xt == 0:
                ref = logk[x0, 1] - logk[x0, 0]
            elif xt == last:
                ref = logk[x0, last] - logk[x0, last - 1]
            else:
                ref = 0.5 * (logk[x0, xt + 1] - logk[x0, xt - 1])
            worst = max(worst, abs(float(got) - ref))
    return worst <= 1e-10, f"max target deviation {worst:.2e}"


def check_path_objective_floor(level):
    """Uniform data: the exact model hits the closed-form objective floor."""
    space = StateSpace(dims=2, vocab=3)
    sched = NoiseSchedule(kind="constant", base_rate=1.0, horizon=1.0)
    rate = uniform_rate(3)
    pi_u = uniform_distribution(space)
    model = TabularModel(space, n_time_bins=4)
    floor = loss_path_kl_tabular(model, pi_u, sched, rate, n_grid=32)
    want = space.dims * (space.vocab - 1) * float(sched.cumulative(1e-3, 1.0))
    gap = abs(floor - want)
    if gap > 1e-9:
        return False, f"uniform floor off by {gap:.2e}"
    rng = np.random.default_rng(17)
    n_pert = 10 if level == "full" else 5
    least_gain = np.inf
    for _ in range(n_pert):
        model.set_flat_params(rng.normal(scale=0.2, size=model.n_params))
        val = loss_path_kl_tabular(model, pi_u, sched, rate, n_grid=32)
        least_gain = min(least_gain, val - floor)
    ok = least_gain >= -1e-12
    return ok, f"floor gap {gap:.2e}, least perturbation gain {least_gain:.2e}"


CHECKS = (
    ("kernel_rows_stochastic", check_kernel_rows_stochastic),
    ("kolmogorov_forward_residual", check_kolmogorov_forward_residual),
    ("exact_reverse_recovers_data", check_exact_reverse_recovers_data),
    ("euler_local_order", check_euler_local_order),
    ("analytical_step_exactness", check_analytical_step_exactness),
    ("corrector_balance_identity", check_corrector_balance_identity),
    ("corrector_invariance_chain", check_corrector_invariance_chain),
    ("loss_equivalence_observed_vs_soft", check_loss_equivalence_observed_vs_soft),
    ("binary_l2_reduction", check_binary_l2_reduction),
    ("gradient_engine", check_gradient_engine),
    ("leak_freedom", check_leak_freedom),
    ("x0_transform_identity", check_x0_transform_identity),
    ("ordinal_score_targets", check_ordinal_score_targets),
    ("path_objective_floor", check_path_objective_floor),
)


def run_suite(level: str = "fast", negative_control: bool = False) -> dict:
    """Execute every named check; returns a JSON-ready verdict dict."""
    if level not in LEVELS:
        raise ConfigError(f"verify level must be one of {LEVELS}")
    results = []
    for name, fn in CHECKS:
        kwargs = {}
        if negative_control and name == "exact_reverse_recovers_data":
            kwargs["rate_table_fn"] = _flipped_rate_table
        tic = time.perf_counter()
        try:
            passed, detail = fn(level, **kwargs)
        except Exception as exc:  # a crashed check is a failed check
            passed, detail = False, f"raised {type(exc).__name__}: {exc}"
        results.append(
            {
                "name": name,
                "passed": bool(passed),
                "detail": detail,
                "seconds": round(time.perf_counter() - tic, 3),
            }
        )
    return {
        "level": level,
        "negative_control": bool(negative_control),
        "checks": results,
        "passed": all(r["passed"] for r in results),
    }
