"""Self-checks run by ``sa-assess verify``: gradient checks and metric oracles."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

from .evaluation import iou, mof
from .graph import GcnAutoencoder, gcn_layer
from .model import SaModelConfig, SaTransformer
from .numerics.tensor import observe_relu_inputs
from .numerics import Tensor, activation, gradient_check, linear_forward, loss, multi_head_self_attention

GRAD_TOL = 1e-4
GRAD_STEP = 1e-5
# Parameterizations putting a ReLU input this close to 0 are redrawn.
KINK_MARGIN = 1e-3


@dataclass
class CheckResult:
    name: str
    passed: bool
    max_rel_error: float | None = None
    detail: str = ""

    def line(self) -> str:
        status = "PASS" if self.passed else "FAIL"
        err = f" max_rel_error={self.max_rel_error:.3e}" if self.max_rel_error is not None else ""
        extra = f" {self.detail}" if self.detail else ""
        return f"{status} {self.name}{err}{extra}"


def _param(rng, *shape, scale=1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, shape), requires_grad=True)


def _layer_cases(seed: int) -> dict[str, tuple[Callable[[], Tensor], dict[str, Tensor]]]:
    rng = np.random.default_rng(seed)
    cases = {}

    x, w, b = _param(rng, 3, 5), _param(rng, 5, 4), _param(rng, 4)
    proj = rng.normal(size=(3, 4))
    cases["linear"] = (lambda x=x, w=w, b=b, p=proj: (linear_forward(x, w, b) * p).sum(), {"x": x, "weight": w, "bias": b})

    z = _param(rng, 4, 3, scale=2.0)
    pz = rng.normal(size=(4, 3))
    cases["sigmoid"] = (lambda z=z, p=pz: (activation("sigmoid", z) * p).sum(), {"x": z})

    r = Tensor(rng.uniform(0.2, 1.0, (4, 3)) * rng.choice([-1.0, 1.0], (4, 3)), requires_grad=True)
    pr = rng.normal(size=(4, 3))
    cases["relu"] = (lambda r=r, p=pr: (activation("relu", r) * p).sum(), {"x": r})

    s = _param(rng, 5, 3)
    labels = rng.integers(0, 3, 5)
    cases["softmax_cce"] = (lambda s=s, y=labels: loss("cce", activation("softmax", s, axis=-1), y), {"logits": s})

    q = _param(rng, 5, 3)
    t = rng.integers(0, 2, (5, 3)).astype(float)
    cases["bce"] = (lambda q=q, t=t: loss("bce", activation("sigmoid", q), t), {"logits": q})

    m, mt = _param(rng, 4, 3), rng.normal(size=(4, 3))
    cases["mse"] = (lambda m=m, mt=mt: loss("mse", m, mt), {"prediction": m})

    xa = _param(rng, 2, 4, 6)
    ws = {k: _param(rng, 6, 6, scale=0.5) for k in ("wq", "wk", "wv", "wo")}
    pa = rng.normal(size=(2, 4, 6))
    cases["attention"] = (
        lambda xa=xa, ws=ws, p=pa: (multi_head_self_attention(xa, ws["wq"], ws["wk"], ws["wv"], ws["wo"], 2) * p).sum(),
        {"x": xa, **ws},
    )

    phi = Tensor(rng.uniform(0, 1, (4, 5)), requires_grad=True)
    wg = _param(rng, 5, 3)
    a = np.ones((4, 4))
    pg = rng.normal(size=(4, 3))
    cases["gcn_layer"] = (lambda phi=phi, wg=wg, p=pg: (gcn_layer(phi, a, wg, "sigmoid") * p).sum(), {"phi": phi, "weight": wg})
    return cases


def small_model_config(head_kind: str, seed: int) -> SaModelConfig:
    return SaModelConfig(
        seq_len=4, features=("bbox",), input_dim=6, proj_dim=4, ff_dim=8, layers=2, heads=2,
        dropout=0.1, head_kind=head_kind, seed=seed,
    )


def model_case(config: SaModelConfig, seed: int, batch: int = 3, dropout_seed: int | None = None):
    """Scalar loss closure over a composed SA model plus its parameters.

    With ``dropout_seed`` the model runs in training mode and the dropout
    masks are redrawn from the same seed on every call.
    """
    rng = np.random.default_rng(seed)
    model = SaTransformer(config)
    base = model.state_dict()
    if config.head_kind == "binary":
        y = rng.integers(0, 2, (batch, 3)).astype(float)
    else:
        y = rng.integers(0, 3, batch)

    def f():
        if dropout_seed is None:
            return model.loss(x, y)
        return model.loss(x, y, training=True, rng=np.random.default_rng(dropout_seed))

    while True:
        model.load_state_dict({k: v + rng.normal(0.0, 0.1, v.shape) for k, v in base.items()})
        x = rng.normal(size=(batch, config.seq_len, config.input_dim))
        with observe_relu_inputs() as seen:
            f()
        if seen.min_abs > KINK_MARGIN:
            return f, model.parameters()


def gae_case(seed: int):
    rng = np.random.default_rng(seed)
    model = GcnAutoencoder(node_dim=6, hidden_dim=5, embed_dim=3, seed=seed)
    while True:
        phi = rng.uniform(0, 1, (3, 4, 6))
        with observe_relu_inputs() as seen:
            model.reconstruction_loss(phi)
        if seen.min_abs > KINK_MARGIN:
            return (lambda: model.reconstruction_loss(phi)), model.parameters()


def gradient_suite(seeds: range = range(10), full_size: bool = True) -> list[CheckResult]:
    """Max relative error per layer / model across ``seeds``."""
    worst: dict[str, float] = {}
    failed: dict[str, list[str]] = {}

    def record(name: str, report) -> None:
        worst[name] = max(worst.get(name, 0.0), report.max_rel_error)
        if not report.passed:
            failed.setdefault(name, []).extend(report.failures())

    for seed in seeds:
        for name, (f, params) in _layer_cases(seed).items():
            record(name, gradient_check(f, params, GRAD_STEP, GRAD_TOL))
        for head in ("binary", "ternary"):
            f, params = model_case(small_model_config(head, seed), seed)
            record(f"sa_model_{head}", gradient_check(f, params, GRAD_STEP, GRAD_TOL))
        f, params = model_case(small_model_config("ternary", seed), seed, dropout_seed=seed)
        record("sa_model_dropout", gradient_check(f, params, GRAD_STEP, GRAD_TOL))
        f, params = gae_case(seed)
        record("gcn_autoencoder", gradient_check(f, params, GRAD_STEP, GRAD_TOL))
    if full_size:
        for head in ("binary", "ternary"):
            cfg = SaModelConfig(head_kind=head, seed=0)
            f, params = model_case(cfg, 0, batch=2)
            record(f"sa_model_{head}_full", gradient_check(f, params, GRAD_STEP, GRAD_TOL, max_coords=8))
    return [
        CheckResult(f"grad:{name}", name not in failed, err,
                    f"failing={','.join(sorted(set(failed[name])))}" if name in failed else "")
        for name, err in worst.items()
    ]


def _brute_mof(t, p) -> float:
    hits = 0
    for i in range(len(t)):
        if t[i] == p[i]:
            hits += 1
    return hits / len(t)


def _brute_iou(t, p) -> float:
    vals = []
    for c in sorted(set(t)):
        inter = union = 0
        for i in range(len(t)):
            a, b = t[i] == c, p[i] == c
            inter += a and b
            union += a or b
        vals.append(inter / union)
    return sum(vals) / len(vals)


def metric_suite(n_instances: int = 200, seed: int = 0) -> list[CheckResult]:
    rng = np.random.default_rng(seed)
    bad_mof = bad_iou = 0
    for _ in range(n_instances):
        n = int(rng.integers(1, 201))
        k = int(rng.integers(1, 6))
        t = rng.integers(0, k, n).tolist()
        p = rng.integers(0, k, n).tolist()
        bad_mof += mof(t, p) != _brute_mof(t, p)
        bad_iou += iou(t, p) != _brute_iou(t, p)
    hand = mof([0, 0, 1, 1], [0, 1, 1, 1]) == 0.75
    interval = abs(iou([1] * 10 + [-1] * 5, [-1] * 5 + [1] * 10, background=-1) - 1 / 3) < 1e-12
    return [
        CheckResult("oracle:mof", bad_mof == 0 and hand, detail=f"mismatches={bad_mof}/{n_instances}"),
        CheckResult("oracle:iou", bad_iou == 0 and interval, detail=f"mismatches={bad_iou}/{n_instances}"),
    ]


def run_all(full_size: bool = True) -> list[CheckResult]:
    return gradient_suite(full_size=full_size) + metric_suite()
