"""Central finite-difference checks for every differentiable op.

Each check builds a float64 graph, reduces the op output to a scalar with a
fixed random projection, and compares the analytic gradient of every input
against ``(f(x + h) - f(x - h)) / 2h``. Inputs are drawn away from the kinks
of the piecewise-linear ops. The full-model check covers every parameter
tensor of a miniature Y-Net: a few sampled entries each plus one random
direction over the whole tensor.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autograd as ag
from .filterbank import FilterbankConfig, init_params as init_fb, learnable_spectrogram
from .model import SeparationNet, miniature_config

ABS_FLOOR = 1e-7


@dataclass
class CheckResult:
    name: str
    max_rel_err: float
    threshold: float
    seeds: int
    checked: int
    skipped: int = 0

    @property
    def passed(self):
        return self.max_rel_err < self.threshold


def rel_error(analytic, numeric, abs_floor=ABS_FLOOR):
    """Largest elementwise relative error.

    Where both gradients are essentially zero (below ``10 * abs_floor``)
    the entry counts as exact if it agrees to within ``abs_floor``.
    """
    a = np.asarray(analytic, dtype=np.float64)
    n = np.asarray(numeric, dtype=np.float64)
    err = np.abs(a - n)
    scale = np.maximum(np.abs(a), np.abs(n))
    tiny = scale < 10 * abs_floor
    rel = np.where(tiny, np.where(err < abs_floor, 0.0, 1.0), err / np.where(tiny, 1.0, scale))
    return float(rel.max()) if rel.size else 0.0


def _check_inputs(build, inputs, rng, eps, corrupt=False):
    """Compare analytic vs numeric gradients for every element of ``inputs``."""
    tensors = [ag.Tensor(x, requires_grad=True) for x in inputs]
    out = build(*tensors)
    proj = rng.standard_normal(out.shape)

    def scalar(*arrs):
        return float(np.sum(build(*[ag.Tensor(a) for a in arrs]).data * proj))

    (out * ag.Tensor(proj)).sum().backward()
    worst = 0.0
    count = 0
    for i, t in enumerate(tensors):
        analytic = t.grad * (1.5 if corrupt else 1.0)
        numeric = np.zeros_like(t.data)
        arrs = [x.copy() for x in inputs]
        for idx in np.ndindex(t.shape):
            orig = arrs[i][idx]
            arrs[i][idx] = orig + eps
            up = scalar(*arrs)
            arrs[i][idx] = orig - eps
            down = scalar(*arrs)
            arrs[i][idx] = orig
            numeric[idx] = (up - down) / (2 * eps)
        worst = max(worst, rel_error(analytic, numeric))
        count += t.size
    return worst, count


def _away_from(rng, shape, kinks=(0.0,), margin=0.05, scale=1.0):
    x = rng.uniform(-scale, scale, size=shape)
    for k in kinks:
        close = np.abs(x - k) < margin
        x[close] = k + np.where(x[close] >= k, margin, -margin) * 2
    return x


def _distinct(rng, shape, gap=0.01):
    n = int(np.prod(shape))
    return (rng.permutation(n) * gap - n * gap / 2).reshape(shape).astype(np.float64)


def _op_cases():
    """name -> (threshold, factory(rng) -> (build, inputs))."""
    cases = {}

    def conv1d_case(rng):
        x = rng.standard_normal((2, 23))
        w = rng.standard_normal((3, 2, 4))
        b = rng.standard_normal(3)
        return (lambda x, w, b: ag.conv1d(x, w, b, stride=2, dilation=2, pad_left=3, pad_right=2)), [x, w, b]

    def conv2d_case(rng):
        x = rng.standard_normal((2, 2, 6, 4))
        w = rng.standard_normal((3, 2, 3, 3))
        b = rng.standard_normal(3)
        d = int(rng.integers(1, 3))
        return (lambda x, w, b: ag.conv2d(x, w, b, dilation=d)), [x, w, b]

    def maxpool_case(rng):
        return ag.maxpool2d, [_distinct(rng, (1, 4, 4))]

    def upsample_case(rng):
        return ag.upsample2x, [rng.standard_normal((2, 3, 2))]

    def batchnorm_case(rng):
        x = rng.standard_normal((2, 2, 2, 2)) * 2 + 0.5
        gamma = rng.uniform(0.5, 1.5, 2)
        beta = rng.standard_normal(2)
        stats = ag.RunningStats(2)
        return (lambda x, g, b: ag.batchnorm2d(x, g, b, stats, True)), [x, gamma, beta]

    def relu_case(rng):
        return ag.relu, [_away_from(rng, (3, 5))]

    def leaky_case(rng):
        return (lambda x: ag.leaky_relu(x, 0.01)), [_away_from(rng, (3, 5))]

    def hardtanh_case(rng):
        return (lambda x: ag.hardtanh(x, 0.0, 1.0)), [_away_from(rng, (3, 5), kinks=(0.0, 1.0), scale=1.5)]

    def concat_case(rng):
        return (lambda a, b: ag.concat([a, b], axis=1)), [rng.standard_normal((2, 3)), rng.standard_normal((2, 2))]

    def mse_case(rng):
        return ag.mse, [rng.standard_normal((3, 4)), rng.standard_normal((3, 4))]

    def dropout_case(rng):
        seed = int(rng.integers(1 << 30))
        return (lambda x: ag.dropout(x, 0.3, np.random.default_rng(seed), True)), [rng.standard_normal((4, 5))]

    def filterbank_case(rng):
        cfg = FilterbankConfig(kernel_len=8, dilation_rates=(1, 2, 4), kernels_per_group=(3, 2, 2), stride=4,
                               target_frames=6)
        wave = rng.standard_normal((1, cfg.input_length()))
        params = init_fb(cfg, rng, np.float64)
        for p in params.values():
            p.data += rng.standard_normal(p.shape) * 0.1

        def build(wave, *ps):
            named = dict(zip(params, ps))
            return learnable_spectrogram(wave, named, cfg)

        return build, [wave, *(p.data for p in params.values())]

    cases["conv1d"] = (1e-4, conv1d_case)
    cases["conv2d"] = (1e-4, conv2d_case)
    cases["maxpool2d"] = (1e-4, maxpool_case)
    cases["upsample2x"] = (1e-4, upsample_case)
    cases["batchnorm2d"] = (1e-3, batchnorm_case)
    cases["relu"] = (1e-4, relu_case)
    cases["leaky_relu"] = (1e-4, leaky_case)
    cases["hardtanh"] = (1e-4, hardtanh_case)
    cases["concat"] = (1e-4, concat_case)
    cases["mse"] = (1e-4, mse_case)
    cases["dropout"] = (1e-4, dropout_case)
    cases["learnable_spectrogram"] = (1e-4, filterbank_case)
    return cases


def check_op(name, seeds=10, eps=1e-6, corrupt=False, start=0):
    threshold, factory = _op_cases()[name]
    worst, count = 0.0, 0
    for seed in range(start, start + seeds):
        rng = np.random.default_rng([seed, 7])
        build, inputs = factory(rng)
        err, n = _check_inputs(build, inputs, rng, eps, corrupt)
        worst = max(worst, err)
        count += n
    return CheckResult(name, worst, threshold, seeds, count)


def check_full_model(seeds=10, eps=1e-6, entries=2, base_channels=2, architecture="ynet",
                     corrupt=False, max_tries=20, start=0):
    """Finite-difference check of every parameter tensor of a miniature model.

    Runs in train mode (batch statistics, dropout with a mask frozen per
    seed) on a batch of two random examples with an MSE loss against a
    random target magnitude. A difference quotient only counts when neither
    side of the step changes any ReLU/hardtanh/max-pool decision; entries
    whose step crosses a kink are replaced by other entries (and counted in
    ``skipped``).
    """
    cfg = miniature_config(architecture, base_channels=base_channels)
    worst, count, skipped = 0.0, 0, 0
    for seed in range(start, start + seeds):
        rng = np.random.default_rng([seed, 11])
        net = SeparationNet(cfg, seed=seed).to(np.float64)
        for name, p in net.params.items():
            # move biases and batchnorm shifts off their all-zero init
            if name.endswith((".bias", ".beta")):
                p.data += rng.standard_normal(p.shape) * 0.1
        f, t = cfg.spec_shape
        wave = rng.standard_normal((2, cfg.wave_len))
        mag = np.abs(rng.standard_normal((2, f, t)))
        target = np.abs(rng.standard_normal((2, f, t))) * 0.5

        def loss_value():
            net.dropout_rng = np.random.default_rng([seed, 3])
            with ag.record_patterns() as pattern:
                out = net(wave, mag, training=True)
            est = out * ag.Tensor(mag) if cfg.predicts_mask else out
            return ag.mse(est, ag.Tensor(target)), pattern

        net.zero_grad()
        loss, base_pattern = loss_value()
        loss.backward()
        grads = {k: p.grad.copy() * (1.5 if corrupt else 1.0) for k, p in net.params.items()}

        def numeric(p, delta, step):
            p.data += delta
            up, pat_up = loss_value()
            p.data -= 2 * delta
            down, pat_down = loss_value()
            p.data += delta
            smooth = pat_up == base_pattern and pat_down == base_pattern
            return (up.item() - down.item()) / (2 * step), smooth

        for name, p in net.params.items():
            g = grads[name]
            order = rng.permutation(p.size)[:max_tries]
            done = 0
            for i in order:
                if done == min(entries, p.size):
                    break
                idx = np.unravel_index(i, p.shape)
                delta = np.zeros_like(p.data)
                delta[idx] = eps
                value, smooth = numeric(p, delta, eps)
                if not smooth:
                    skipped += 1
                    continue
                worst = max(worst, rel_error(g[idx], value))
                count += 1
                done += 1
            direction = rng.standard_normal(p.shape)
            direction /= np.linalg.norm(direction)
            for step in (eps, eps / 10, eps / 100):
                value, smooth = numeric(p, direction * step, step)
                if smooth:
                    worst = max(worst, rel_error(np.sum(g * direction), value))
                    count += 1
                    break
                skipped += 1
    return CheckResult(f"{architecture} (base {base_channels}, full model)", worst, 1e-3, seeds, count,
                       skipped)


OP_NAMES = tuple(_op_cases())


def run_suite(seeds=10, broken=None, include_model=True, start=0):
    """Run every op check plus the full-model check.

    ``broken`` names one check whose analytic gradient is deliberately
    scaled by 1.5, to prove that the harness can fail.
    """
    results = [check_op(name, seeds, corrupt=(name == broken), start=start) for name in OP_NAMES]
    if include_model:
        results.append(check_full_model(seeds, corrupt=(broken == "model"), start=start))
    return results


def format_table(results):
    width = max(len(r.name) for r in results)
    lines = [f"{'op':<{width}}  {'max rel err':>12}  {'threshold':>9}  seeds  status"]
    for r in results:
        status = "PASS" if r.passed else "FAIL"
        lines.append(f"{r.name:<{width}}  {r.max_rel_err:12.3e}  {r.threshold:9.0e}  {r.seeds:5d}  {status}")
    return "\n".join(lines)
