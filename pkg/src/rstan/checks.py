"""Finite-difference check suite over every differentiable op and the composites.

Each case builds a random instance from a seed and reduces the op's output
to a scalar with a fixed random projection, so every output coordinate
contributes to the checked gradient. Inputs are drawn away from kinks
(ReLU at 0, max ties) so central differences stay valid.
"""

from __future__ import annotations

from typing import Callable

import numpy as np

from . import functional as F
from . import tensor as T
from .attention import STA, VFE, enrich, sta_forward, vfe_forward
from .gradcheck import grad_check
from .losses import cross_entropy, neg_pearson_loss
from .networks import RSTAN, toy_preset
from .tensor import Tensor

Case = Callable[[np.random.Generator], tuple]


def _t(a) -> Tensor:
    return Tensor(np.asarray(a, dtype=np.float64), requires_grad=True)


def _proj(out: Tensor, rng) -> Callable:
    r = rng.normal(size=out.shape)
    return lambda y: T.sum_(T.mul(y, r))


def _unary(fn, sample):
    def case(rng):
        x = _t(sample(rng))
        p = _proj(fn(x), rng)
        return (lambda x: p(fn(x))), [x]
    return case


def _binary(fn, sample_a, sample_b):
    def case(rng):
        a, b = _t(sample_a(rng)), _t(sample_b(rng))
        p = _proj(fn(a, b), rng)
        return (lambda a, b: p(fn(a, b))), [a, b]
    return case


def _normal(*shape):
    return lambda rng: rng.normal(size=shape)


def _positive(*shape):
    return lambda rng: rng.uniform(0.5, 2.0, size=shape)


def _away_from_zero(*shape):
    return lambda rng: rng.choice([-1.0, 1.0], size=shape) * rng.uniform(0.1, 1.0, size=shape)


def _distinct(*shape):
    # well-separated values so no max is within eps of a tie
    def draw(rng):
        n = int(np.prod(shape))
        return (rng.permutation(n) * 0.1 + rng.uniform(0, 0.01, n)).reshape(shape)
    return draw


def _conv_case(rng):
    x, w, b = _t(rng.normal(size=(2, 2, 4, 5, 5))), _t(rng.normal(size=(3, 2, 3, 2, 3))), _t(rng.normal(size=3))
    fn = lambda x, w, b: F.conv3d(x, w, b, stride=(1, 2, 1), padding=(1, 0, 1))  # noqa: E731
    p = _proj(fn(x, w, b), rng)
    return (lambda x, w, b: p(fn(x, w, b))), [x, w, b]


def _deconv_case(rng):
    x, w, b = _t(rng.normal(size=(2, 3, 3, 2, 2))), _t(rng.normal(size=(3, 2, 4, 1, 2))), _t(rng.normal(size=2))
    fn = lambda x, w, b: F.conv_transpose3d(x, w, b, stride=(2, 1, 1), padding=(1, 0, 0))  # noqa: E731
    p = _proj(fn(x, w, b), rng)
    return (lambda x, w, b: p(fn(x, w, b))), [x, w, b]


def _pool_case(kind):
    def case(rng):
        x = _t(_distinct(2, 2, 4, 5, 5)(rng))
        fn = lambda x: F.pool3d(x, kind, (2, 3, 3), (1, 2, 2), (0, 1, 1))  # noqa: E731
        p = _proj(fn(x), rng)
        return (lambda x: p(fn(x))), [x]
    return case


def _batchnorm_case(training):
    def case(rng):
        x, g, b = _t(rng.normal(size=(3, 2, 2, 2, 2))), _t(rng.uniform(0.5, 1.5, 2)), _t(rng.normal(size=2))
        rm, rv = rng.normal(size=2), rng.uniform(0.5, 2.0, 2)

        def fn(x, g, b):
            return F.batchnorm(x, g, b, rm.copy(), rv.copy(), training)
        p = _proj(fn(x, g, b), rng)
        return (lambda x, g, b: p(fn(x, g, b))), [x, g, b]
    return case


def _dropout_case(rng):
    x = _t(rng.normal(size=(4, 6)))
    seed = int(rng.integers(2**31))
    fn = lambda x: F.dropout(x, 0.5, True, np.random.default_rng(seed))  # noqa: E731
    p = _proj(fn(x), rng)
    return (lambda x: p(fn(x))), [x]


def _sta_case(residual):
    def case(rng):
        sta = STA(4, 2, residual=residual, rng=rng)
        x = _t(rng.normal(size=(2, 4, 2, 2, 2)))
        params = [sta.theta.weight, sta.phi.weight, sta.g.weight, sta.h.weight]
        p = _proj(sta_forward(x, sta), rng)
        return (lambda x, *_: p(sta_forward(x, sta))), [x] + params
    return case


def _vfe_case(rng):
    vfe = VFE(3, rng=rng)
    x_r = _t(rng.normal(size=(2, 3, 4, 2, 2)))
    z_v = _t(rng.normal(size=(2, 3, 4, 2, 2)))
    fn = lambda x_r, z_v: enrich(vfe_forward(x_r, z_v, vfe), z_v)  # noqa: E731
    p = _proj(fn(x_r, z_v), rng)
    return (lambda x_r, z_v, *_: p(fn(x_r, z_v))), [x_r, z_v, vfe.f1.weight, vfe.f_st.weight]


def _neg_pearson_case(rng):
    x, y = _t(rng.normal(size=(3, 16))), _t(rng.normal(size=(3, 16)))
    return (lambda x, y: neg_pearson_loss(x, y)), [x, y]


def _cross_entropy_case(rng):
    z = _t(rng.normal(size=(4, 5)))
    labels = rng.integers(0, 5, size=4)
    return (lambda z: cross_entropy(z, labels)), [z]


def _rstan_case(rng):
    cfg = toy_preset(frame_size=(14, 14), clip_length=16)
    model = RSTAN(cfg, 2, seed=int(rng.integers(2**31)))
    video = _t(rng.uniform(0, 1, size=(1, 1, 16, 14, 14)))
    target = rng.normal(size=(1, 16))
    labels = rng.integers(0, 2, size=1)
    params = [model.stan.head.weight, model.vfe.f1.weight, model.vfe.f_st.weight, model.rppg.proj.weight,
              dict(model.stan.encoder.named_parameters())["stage1.stem.conv.weight"]]

    def fn(video, *_):
        out = model(video)
        return cross_entropy(out.logits, labels) + 0.5 * neg_pearson_loss(out.rppg_pred, target)
    return fn, [video] + params


CASES: dict[str, tuple[Case, dict]] = {
    "add": (_binary(T.add, _normal(3, 4), _normal(4)), {}),
    "sub": (_binary(T.sub, _normal(3, 4), _normal(3, 1)), {}),
    "mul": (_binary(T.mul, _normal(3, 4), _normal(1, 4)), {}),
    "div": (_binary(T.div, _normal(3, 4), _positive(3, 4)), {}),
    "neg": (_unary(T.neg, _normal(5)), {}),
    "pow": (_unary(lambda x: T.power(x, 2.5), _positive(3, 4)), {}),
    "exp": (_unary(T.exp, _normal(3, 4)), {}),
    "log": (_unary(T.log, _positive(3, 4)), {}),
    "sqrt": (_unary(T.sqrt, _positive(3, 4)), {}),
    "relu": (_unary(T.relu, _away_from_zero(3, 4)), {}),
    "sum": (_unary(lambda x: T.sum_(x, axis=1, keepdims=True), _normal(3, 4, 2)), {}),
    "mean": (_unary(lambda x: T.mean(x, axis=(0, 2)), _normal(3, 4, 2)), {}),
    "max_axis": (_unary(lambda x: T.max_axis(x, 1), _distinct(3, 4, 2)), {}),
    "reshape": (_unary(lambda x: T.reshape(x, (4, 6)), _normal(2, 3, 4)), {}),
    "transpose": (_unary(lambda x: T.transpose(x, (2, 0, 1)), _normal(2, 3, 4)), {}),
    "broadcast_to": (_unary(lambda x: T.broadcast_to(x, (3, 4, 5)), _normal(4, 1)), {}),
    "concat": (_binary(lambda a, b: T.concat([a, b], axis=1), _normal(2, 3), _normal(2, 2)), {}),
    "index": (_unary(lambda x: T.index(x, (slice(None), [0, 2, 2])), _normal(3, 4)), {}),
    "matmul": (_binary(T.matmul, _normal(2, 3, 4), _normal(2, 4, 5)), {}),
    "softmax": (_unary(lambda x: T.softmax(x, axis=1), _normal(3, 5)), {}),
    "log_softmax": (_unary(lambda x: T.log_softmax(x, axis=-1), _normal(3, 5)), {}),
    "conv3d": (_conv_case, {}),
    "conv_transpose3d": (_deconv_case, {}),
    "maxpool3d": (_pool_case("max"), {}),
    "avgpool3d": (_pool_case("avg"), {}),
    "batchnorm_train": (_batchnorm_case(True), {}),
    "batchnorm_eval": (_batchnorm_case(False), {}),
    "linear": (_binary(F.linear, _normal(3, 4), _normal(2, 4)), {}),
    "dropout": (_dropout_case, {}),
    "channel_pool": (_unary(lambda x: T.concat(list(F.channel_pool(x)), axis=1), _distinct(2, 3, 2, 2, 2)), {}),
    "channel_expand": (_unary(lambda x: F.channel_expand(x, 3), _normal(2, 1, 2, 2, 2)), {}),
    "global_avg_pool": (_unary(F.global_avg_pool, _normal(2, 3, 2, 2, 2)), {}),
    "STA": (_sta_case(True), {}),
    "STA_bare": (_sta_case(False), {}),
    "VFE": (_vfe_case, {}),
    "neg_pearson": (_neg_pearson_case, {}),
    "cross_entropy": (_cross_entropy_case, {}),
    "rstan_toy": (_rstan_case, {"max_checks": 4, "eps": 1e-5}),
}


def gradcheck_suite(instances: int = 20, tolerance: float = 1e-4, seed: int = 0, cases=None) -> list[dict]:
    """One report entry per (case, instance): op, seed, error, passed.

    A case that raises is reported as failed with an infinite error.
    """
    names = list(CASES) if cases is None else list(cases)
    report = []
    for name in names:
        build, opts = CASES[name]
        for i in range(instances):
            inst_seed = seed * 1_000_003 + i
            rng = np.random.default_rng([inst_seed, sum(map(ord, name))])
            try:
                f, inputs = build(rng)
                err = grad_check(f, inputs, eps=opts.get("eps", 1e-5), max_checks=opts.get("max_checks"),
                                 rng=np.random.default_rng(inst_seed))
            except Exception as e:  # noqa: BLE001  (a crash is a failed entry, not a suite abort)
                err = float("inf")
                name_err = f"{name}: {type(e).__name__}: {e}"
                report.append(dict(op=name, seed=inst_seed, error=err, passed=False, detail=name_err))
                continue
            report.append(dict(op=name, seed=inst_seed, error=float(err), passed=bool(err < tolerance), detail=""))
    return report
