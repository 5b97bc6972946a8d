"""Neural allocation function, dual-ascent trainer and the NPQM mechanism.

Owner ``i``'s probability is

    q_i = clamp(sigmoid(|w2| * (-|w1| * b_i + c) + d))

with ``w1``, ``w2``, ``d`` produced by three affine-ReLU-affine heads and ``c``
by one affine map. The heads read the bid vector with the owner's own bid
replaced by the mean of the others, so the probability is exactly
non-increasing in the own bid whatever the weights are.

Training works on a flat parameter vector; the backward pass is written out
by hand and exploits the rank-one structure of the masked inputs, so one
Lagrangian evaluation costs O(n * (h + nodes)).
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import DEFAULT_TAU, AllocationFunction, Market, _check_bids, _check_index
from .gpqm import MechanismOutcome, _transact
from .payments import expected_payments, load
from .quadrature import trapezoid_nodes
from .queries import QuerySpec

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
HEADS = ("w1", "w2", "d")


class TrainingDiverged(FloatingPointError):
    """Non-finite Lagrangian or gradient during training."""


@dataclass
class HyperNet:
    A1: np.ndarray  # (h, n)
    k1: np.ndarray  # (h,)
    A3: np.ndarray  # (h,)  single output row
    k3: float

    @property
    def hidden(self) -> int:
        return self.A1.shape[0]


@dataclass
class NpqmModel:
    head_w1: HyperNet
    head_w2: HyperNet
    head_d: HyperNet
    A_c: np.ndarray  # (n,)
    k_c: float
    lam: float = 0.0
    tau: float = DEFAULT_TAU
    theta_hi: float = 1.0
    trained_bf: bool = False

    @property
    def n(self) -> int:
        return len(self.A_c)

    @property
    def h(self) -> int:
        return self.head_w1.hidden

    def vector(self) -> np.ndarray:
        parts = []
        for head in (self.head_w1, self.head_w2, self.head_d):
            parts += [head.A1.ravel(), head.k1, head.A3, [head.k3]]
        parts += [self.A_c, [self.k_c]]
        return np.concatenate([np.asarray(p, dtype=float) for p in parts])

    @classmethod
    def from_vector(cls, theta: np.ndarray, n: int, h: int, **kw) -> NpqmModel:
        p = _unpack(np.asarray(theta, dtype=float).copy(), n, h)
        heads = [HyperNet(p[f"{k}.A1"], p[f"{k}.k1"], p[f"{k}.A3"], float(p[f"{k}.k3"][0])) for k in HEADS]
        return cls(*heads, A_c=p["c.A"], k_c=float(p["c.k"][0]), **kw)

    @classmethod
    def zeros(cls, n: int, h: int, **kw) -> NpqmModel:
        return cls.from_vector(np.zeros(n_params(n, h)), n, h, **kw)

    def allocation(self) -> NeuralAllocation:
        return NeuralAllocation(self)


def n_params(n: int, h: int) -> int:
    return 3 * (h * n + 2 * h + 1) + n + 1


def _unpack(theta: np.ndarray, n: int, h: int) -> dict[str, np.ndarray]:
    """Named views into the flat parameter vector."""
    if len(theta) != n_params(n, h):
        raise ValueError(f"expected {n_params(n, h)} parameters for n={n}, h={h}, got {len(theta)}")
    out, pos = {}, 0
    for head in HEADS:
        for name, size, shape in (("A1", h * n, (h, n)), ("k1", h, (h,)), ("A3", h, (h,)), ("k3", 1, (1,))):
            out[f"{head}.{name}"] = theta[pos : pos + size].reshape(shape)
            pos += size
    out["c.A"] = theta[pos : pos + n]
    out["c.k"] = theta[pos + n : pos + n + 1]
    return out


def init_params(n: int, h: int, gen: np.random.Generator) -> np.ndarray:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and offset."""
    theta = np.empty(n_params(n, h))
    p = _unpack(theta, n, h)
    for key, arr in p.items():
        fan_in = h if key.endswith(("A3", "k3")) else n
        arr[...] = gen.uniform(-1.0, 1.0, size=arr.shape) / math.sqrt(fan_in)
    return theta


# -- forward ----------------------------------------------------------------


def _head_inputs(bids: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Shared head input and the per-owner shift that masks the own bid.

    Owner ``i`` sees ``inp + dinp[i] * e_i``. Inputs are scaled by
    ``1/sqrt(n)`` so a gradient step moves the head outputs by O(lr)
    regardless of the market size.
    """
    n = len(bids)
    if n < 2:
        raise ValueError("the neural allocation needs at least two owners")
    others_mean = (bids.sum() - bids) / (n - 1)
    scale = 1.0 / math.sqrt(n)
    return bids * scale, (others_mean - bids) * scale


def _heads(p: dict[str, np.ndarray], inp: np.ndarray, delta: np.ndarray):
    """Head outputs for every owner plus the ReLU caches for backprop."""
    out, cache = {}, {}
    for k in HEADS:
        A1 = p[f"{k}.A1"]
        pre = (A1 @ inp + p[f"{k}.k1"])[None, :] + delta[:, None] * A1.T
        hid = np.maximum(pre, 0.0)
        out[k] = hid @ p[f"{k}.A3"] + p[f"{k}.k3"][0]
        cache[k] = (pre, hid)
    out["c"] = p["c.A"] @ inp + p["c.k"][0] + delta * p["c.A"]
    return out, cache


def _sigmoid(z):
    # split by sign so neither branch overflows
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


def _slope_offset(heads):
    """``q(x) = sigmoid(offset - slope * x)`` per owner."""
    aw2 = np.abs(heads["w2"])
    return aw2 * np.abs(heads["w1"]), aw2 * heads["c"] + heads["d"]


class NeuralAllocation(AllocationFunction):
    kind = "neural"

    def __init__(self, model: NpqmModel):
        self.model = model
        self.tau = model.tau
        self._theta = model.vector()
        self._params = _unpack(self._theta, model.n, model.h)

    def slope_offset(self, bids) -> tuple[np.ndarray, np.ndarray]:
        bids = _check_bids(bids)
        if len(bids) != self.model.n:
            raise ValueError(f"model expects {self.model.n} bids, got {len(bids)}")
        heads, _ = _heads(self._params, *_head_inputs(bids))
        return _slope_offset(heads)

    def curves(self, bids, xs, owners=None):
        slope, offset = self.slope_offset(bids)
        if owners is not None:
            slope, offset = slope[owners], offset[owners]
        z = offset[:, None] - slope[:, None] * np.asarray(xs, dtype=float)
        return self.clamp(_sigmoid(z))


def forward_allocation(model: NpqmModel, bids, i: int) -> float:
    bids = _check_bids(bids)
    _check_index(i, len(bids))
    return float(model.allocation().probabilities(bids)[i])


# -- Lagrangian and its gradient ---------------------------------------------


@dataclass
class LagrangianValue:
    L: float
    phi: float
    g: float


class _Objective:
    """Lagrangian on one fixed training bid vector with cached quadrature nodes."""

    def __init__(self, bids, budget: float, n: int, h: int, tau: float, theta_hi: float, quad_nodes: int = 64):
        self.bids = _check_bids(bids)
        if len(self.bids) != n:
            raise ValueError("bid vector length must match the model input size")
        self.n, self.h, self.tau, self.budget = n, h, tau, float(budget)
        self.z_max = math.log((1.0 - tau) / tau)
        self.inp, self.delta = _head_inputs(self.bids)
        nodes, weights = trapezoid_nodes(self.bids, theta_hi, quad_nodes)
        # column 0 carries the bid point itself, columns 1.. the quadrature nodes
        self.x = np.concatenate([self.bids[:, None], nodes], axis=1)
        self.g_coef = np.concatenate([self.bids[:, None], weights], axis=1)
        # reused work arrays; fresh (n, nodes) temporaries per call cost page faults
        self._buf = [np.empty_like(self.x) for _ in range(9)]
        self._free = np.empty(self.x.shape, dtype=bool)

    def _forward(self, theta):
        p = _unpack(theta, self.n, self.h)
        heads, cache = _heads(p, self.inp, self.delta)
        slope, offset = _slope_offset(heads)
        z, e, one_e, two_e, q, lq, w = self._buf[:7]
        # clamping q at 1 - tau is clamping z at its logit
        np.multiply(self.x, -slope[:, None], out=z)
        z += offset[:, None]
        np.minimum(z, self.z_max, out=z)
        np.exp(z, out=e)
        np.add(e, 1.0, out=one_e)
        np.divide(e, one_e, out=q)
        np.add(e, e, out=two_e)
        # ln((1 + q) / (1 - q)) == ln(1 + 2 e^z) for q = sigmoid(z)
        np.log1p(two_e, out=lq)
        np.multiply(q, lq, out=w)
        phi = float(w[:, 0].sum())
        g = float(np.vdot(self.g_coef, w)) - self.budget
        return p, heads, cache, phi, g

    def value(self, theta, lam: float) -> LagrangianValue:
        *_, phi, g = self._forward(theta)
        return LagrangianValue(-phi + lam * g, phi, g)

    def evaluate(self, theta) -> _Evaluation:
        """Forward pass plus the multiplier-independent part of the backward pass."""
        p, heads, cache, phi, g = self._forward(theta)
        z, e, one_e, two_e, q, lq, _, dwdz, tmp = self._buf
        # dw/dz = q (1 - q) lq + q * 2e / (1 + 2e), zero where the clamp is active
        np.divide(lq, one_e, out=dwdz)
        np.add(two_e, 1.0, out=tmp)
        np.divide(two_e, tmp, out=tmp)
        dwdz += tmp
        dwdz *= q
        np.less(z, self.z_max, out=self._free)
        np.multiply(dwdz, self._free, out=dwdz)
        # dL/dw = lam * g_coef at every node, minus 1 at the bid column
        np.multiply(dwdz, self.g_coef, out=tmp)
        sums = (
            tmp.sum(axis=1),
            np.einsum("ij,ij->i", tmp, self.x),
            dwdz[:, 0].copy(),
            dwdz[:, 0] * self.x[:, 0],
        )
        return _Evaluation(p, heads, cache, phi, g, sums)

    def backprop(self, ev: _Evaluation, lam: float) -> np.ndarray:
        g_s, g_x, phi_s, phi_x = ev.sums
        zs = lam * g_s - phi_s
        zx = lam * g_x - phi_x
        heads, p = ev.heads, ev.params
        w1, w2, c = heads["w1"], heads["w2"], heads["c"]
        grad_out = {
            "w1": -np.abs(w2) * np.sign(w1) * zx,
            "w2": np.sign(w2) * (c * zs - np.abs(w1) * zx),
            "d": zs,
            "c": np.abs(w2) * zs,
        }
        grad = np.zeros(n_params(self.n, self.h))
        gp = _unpack(grad, self.n, self.h)
        b, delta = self.inp, self.delta
        for k in HEADS:
            G = grad_out[k]
            pre, hid = ev.cache[k]
            gp[f"{k}.A3"][:] = G @ hid
            gp[f"{k}.k3"][0] = G.sum()
            dpre = (G[:, None] * p[f"{k}.A3"][None, :]) * (pre > 0)
            col = dpre.sum(axis=0)
            gp[f"{k}.k1"][:] = col
            gp[f"{k}.A1"][:] = np.outer(col, b) + (dpre * delta[:, None]).T
        Gc = grad_out["c"]
        gp["c.A"][:] = Gc.sum() * b + Gc * delta
        gp["c.k"][0] = Gc.sum()
        return grad

    def gradient(self, theta, lam: float):
        """(dL/dtheta, LagrangianValue) by reverse accumulation."""
        ev = self.evaluate(theta)
        return self.backprop(ev, lam), ev.value(lam)


@dataclass
class _Evaluation:
    params: dict
    heads: dict
    cache: dict
    phi: float
    g: float
    sums: tuple

    def value(self, lam: float) -> LagrangianValue:
        return LagrangianValue(-self.phi + lam * self.g, self.phi, self.g)


def lagrangian(model: NpqmModel, bids, budget: float, quad_nodes: int = 64) -> LagrangianValue:
    obj = _Objective(bids, budget, model.n, model.h, model.tau, model.theta_hi, quad_nodes)
    return obj.value(model.vector(), model.lam)


@dataclass
class Gradients:
    theta: np.ndarray  # flat, in `NpqmModel.vector()` order
    lam: float
    value: LagrangianValue


def gradients(model: NpqmModel, bids, budget: float, quad_nodes: int = 64) -> Gradients:
    obj = _Objective(bids, budget, model.n, model.h, model.tau, model.theta_hi, quad_nodes)
    grad, val = obj.gradient(model.vector(), model.lam)
    if not (np.all(np.isfinite(grad)) and math.isfinite(val.L)):
        raise TrainingDiverged("non-finite Lagrangian gradient")
    return Gradients(grad, val.g, val)


# -- training -----------------------------------------------------------------


@dataclass(frozen=True)
class TrainConfig:
    episodes: int = 5000
    hidden: int = 8
    lr_mu_start: float = 0.005
    lr_mu_end: float = 0.001
    lr_lambda: float = 0.005
    quad_nodes: int = 64
    inner_steps: int = 3
    seed: int = 0
    tau: float = DEFAULT_TAU
    theta_hi: float = 1.0

    def __post_init__(self):
        if self.episodes < 1 or self.hidden < 1 or self.inner_steps < 1:
            raise ValueError("episodes, hidden and inner_steps must be >= 1")
        if min(self.lr_mu_start, self.lr_mu_end, self.lr_lambda) <= 0:
            raise ValueError("learning rates must be positive")

    def lr_mu(self, episode: int) -> float:
        if self.episodes == 1:
            return self.lr_mu_start
        frac = episode / (self.episodes - 1)
        return self.lr_mu_start + (self.lr_mu_end - self.lr_mu_start) * frac


@dataclass
class TrainingTrace:
    g: list[float] = field(default_factory=list)
    phi: list[float] = field(default_factory=list)
    lam: list[float] = field(default_factory=list)
    commits: int = 0


def dual_ascent_train(train_bids, budget: float, cfg: TrainConfig = TrainConfig(), trace: TrainingTrace | None = None) -> NpqmModel | None:
    """Train the neural allocation by projected dual ascent.

    Returns the last parameter iterate that satisfied the budget constraint on
    the training bids, or ``None`` (no answer) when no iterate ever did.

    Primal steps descend the per-owner Lagrangian ``L / n`` and the multiplier
    ascends on ``g / n``; both are the raw quantities rescaled so that the
    learning rates do not depend on the market size.
    """
    bids = _check_bids(train_bids)
    n, h = len(bids), cfg.hidden
    gen = np.random.default_rng(cfg.seed)
    obj = _Objective(bids, budget, n, h, cfg.tau, cfg.theta_hi, cfg.quad_nodes)
    theta = init_params(n, h, gen)
    lam = 0.0
    committed = None
    ev = obj.evaluate(theta)
    for episode in range(cfg.episodes):
        lr = cfg.lr_mu(episode) / n
        for _ in range(cfg.inner_steps):
            grad = obj.backprop(ev, lam)
            if not np.all(np.isfinite(grad)):
                raise TrainingDiverged(f"non-finite gradient at episode {episode}")
            theta -= lr * grad
            ev = obj.evaluate(theta)
        g = ev.g
        if not (math.isfinite(g) and math.isfinite(ev.phi)):
            raise TrainingDiverged(f"non-finite Lagrangian at episode {episode}")
        if g <= 0:
            committed = (theta.copy(), lam)
        lam = max(0.0, lam + cfg.lr_lambda * g / n)
        if trace is not None:
            trace.g.append(g)
            trace.phi.append(ev.phi)
            trace.lam.append(lam)
            trace.commits += g <= 0
    if committed is None:
        log.info("no budget-feasible iterate in %d episodes", cfg.episodes)
        return None
    theta_c, lam_c = committed
    return NpqmModel.from_vector(theta_c, n, h, lam=lam_c, tau=cfg.tau, theta_hi=cfg.theta_hi, trained_bf=True)


# -- mechanism ----------------------------------------------------------------


def run_npqm(market: Market, model: NpqmModel, query: QuerySpec, gen: np.random.Generator) -> MechanismOutcome:
    """Every owner goes through the integrated randomiser; no greedy cutoff."""
    if model is None:
        raise ValueError("no model: training found no budget-feasible allocation")
    if not model.trained_bf:
        raise ValueError("refusing to run an untrained (or infeasible) model")
    if market.n != model.n:
        raise ValueError(f"model trained for {model.n} owners, market has {market.n}")
    q, _, P, _ = expected_payments(model.allocation(), market.bids, market.theta_hi)
    return _transact(market, q, P, np.ones(market.n, dtype=bool), query, gen)


# -- persistence --------------------------------------------------------------


def save_model(model: NpqmModel, path) -> None:
    doc = {
        "format_version": FORMAT_VERSION,
        "n": model.n,
        "h": model.h,
        "tau": model.tau,
        "theta_hi": model.theta_hi,
        "lambda": model.lam,
        "trained_bf": model.trained_bf,
        "heads": {},
    }
    for name in HEADS:
        head = getattr(model, f"head_{name}")
        doc["heads"][name] = {
            "A1": {"shape": list(head.A1.shape), "data": head.A1.ravel().tolist()},
            "k1": {"shape": [model.h], "data": head.k1.tolist()},
            "A3": {"shape": [1, model.h], "data": head.A3.tolist()},
            "k3": {"shape": [], "data": [head.k3]},
        }
    doc["heads"]["c"] = {
        "A": {"shape": [1, model.n], "data": model.A_c.tolist()},
        "k": {"shape": [], "data": [model.k_c]},
    }
    Path(path).write_text(json.dumps(doc, indent=1))


def load_model(path, expect_n: int | None = None) -> NpqmModel:
    doc = json.loads(Path(path).read_text())
    if doc.get("format_version") != FORMAT_VERSION:
        raise ValueError(f"unsupported model format version {doc.get('format_version')!r}")
    n, h = int(doc["n"]), int(doc["h"])
    if expect_n is not None and n != expect_n:
        raise ValueError(f"model file is for n={n}, expected n={expect_n}")

    def arr(entry, shape):
        if [int(s) for s in entry["shape"]] != list(shape):
            raise ValueError(f"weight shape {entry['shape']} does not match {list(shape)}")
        a = np.asarray(entry["data"], dtype=float)
        if a.size != max(1, math.prod(shape)):
            raise ValueError("weight array length does not match its shape")
        return a

    heads = []
    for name in HEADS:
        e = doc["heads"][name]
        heads.append(HyperNet(
            arr(e["A1"], (h, n)).reshape(h, n),
            arr(e["k1"], (h,)),
            arr(e["A3"], (1, h)).ravel(),
            float(arr(e["k3"], ())[0]),
        ))
    c = doc["heads"]["c"]
    return NpqmModel(
        *heads,
        A_c=arr(c["A"], (1, n)).ravel(),
        k_c=float(arr(c["k"], ())[0]),
        lam=float(doc["lambda"]),
        tau=float(doc["tau"]),
        theta_hi=float(doc["theta_hi"]),
        trained_bf=bool(doc["trained_bf"]),
    )


def with_heads_fixed(model: NpqmModel, w1: float, w2: float, c: float, d: float) -> NpqmModel:
    """Copy whose heads output the given constants (all input weights zeroed)."""
    z = NpqmModel.zeros(model.n, model.h, tau=model.tau, theta_hi=model.theta_hi, trained_bf=model.trained_bf)
    z.head_w1.k3, z.head_w2.k3, z.head_d.k3 = float(w1), float(w2), float(d)
    z.k_c = float(c)
    return z


def gradient_check(model: NpqmModel, bids, budget: float, step: float = 1e-4, quad_nodes: int = 64) -> float:
    """Worst relative error between the analytic gradient and central differences.

    Relative error is ``|a - f| / max(|a|, |f|, 1e-6)`` so entries that are
    zero in both agree exactly.
    """
    obj = _Objective(bids, budget, model.n, model.h, model.tau, model.theta_hi, quad_nodes)
    theta = model.vector()
    analytic, _ = obj.gradient(theta, model.lam)
    worst = 0.0
    for j in range(len(theta)):
        hi, lo = theta.copy(), theta.copy()
        hi[j] += step
        lo[j] -= step
        fd = (obj.value(hi, model.lam).L - obj.value(lo, model.lam).L) / (2 * step)
        a = analytic[j]
        worst = max(worst, abs(a - fd) / max(abs(a), abs(fd), 1e-6))
    return worst
