"""Desk-scale progressive reasoning-attention model.

A GRU driven by the question embedding predicts, at every step, an operation
distribution and an attention distribution over K region proposals:

    h_0     = W_q q
    h_t     = GRU(x_t, h_{t-1})                 (x_1 = 0)
    r_t     = softmax(W_r h_t)
    score_k = w_alpha . (W_v v_k  *  W_h h_t)   (elementwise product)
    alpha_t = softmax(score)
    x_{t+1} = W_op r_t
    alpha_r = mean_t alpha_t

The answer head reads v through alpha_r and a 2-layer perceptron.  Everything
is float64 numpy with hand-written reverse-mode gradients, verified against
central finite differences in the test suite.

Training modes:

* ``airm`` - per-step KL attention loss + per-step operation CE + answer CE
* ``airc`` - single aggregated attention: positive CE toward the combined
  target plus the negative log-mass term over mined distractors
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .attention import proposals_to_map
from .errors import (
    Divergence,
    MaxStepsExceeded,
    NoSteps,
    SchemaError,
    ShapeMismatch,
)
from .metrics import aire_step
from .program_ir import AtomicOp
from .scene_graph import BoundingBox, StepROIs
from .supervision import LossConfig, StepAttentionTarget

AIRPAR_MAGIC = b"AIRPAR01"

# canonical operation index order (end token is index len(OP_ORDER))
OP_ORDER = (
    AtomicOp.SELECT, AtomicOp.FILTER, AtomicOp.QUERY, AtomicOp.VERIFY,
    AtomicOp.COMPARE, AtomicOp.RELATE, AtomicOp.AND, AtomicOp.OR,
)


@dataclass(frozen=True)
class ModelDims:
    dq: int        # question feature size
    d: int         # proposal feature size
    h: int         # GRU hidden size
    hp: int        # attention / answer-head hidden size
    r: int         # operation vocabulary incl. end token
    e: int         # GRU input (operation embedding) size
    a: int         # answer classes
    k: int         # proposal count
    t_max: int = 9


# (name, shape builder) in declared serialization order
PARAM_SPEC = [
    ("w_q", lambda d: (d.h, d.dq)),
    ("w_r", lambda d: (d.r, d.h)),
    ("w_alpha", lambda d: (d.hp,)),
    ("w_v", lambda d: (d.hp, d.d)),
    ("w_h", lambda d: (d.hp, d.h)),
    ("w_op", lambda d: (d.e, d.r)),
    ("w_z", lambda d: (d.h, d.e)),
    ("u_z", lambda d: (d.h, d.h)),
    ("b_z", lambda d: (d.h,)),
    ("w_s", lambda d: (d.h, d.e)),
    ("u_s", lambda d: (d.h, d.h)),
    ("b_s", lambda d: (d.h,)),
    ("w_c", lambda d: (d.h, d.e)),
    ("u_c", lambda d: (d.h, d.h)),
    ("b_c", lambda d: (d.h,)),
    ("u1", lambda d: (d.hp, d.d + d.dq)),
    ("b1", lambda d: (d.hp,)),
    ("u2", lambda d: (d.a, d.hp)),
    ("b2", lambda d: (d.a,)),
]


@dataclass
class ModelParams:
    dims: ModelDims
    blocks: dict[str, np.ndarray]

    def __getattr__(self, name):
        blocks = object.__getattribute__(self, "blocks")
        if name in blocks:
            return blocks[name]
        raise AttributeError(name)

    @classmethod
    def zeros(cls, dims: ModelDims) -> "ModelParams":
        return cls(dims, {n: np.zeros(s(dims)) for n, s in PARAM_SPEC})

    @classmethod
    def init(cls, dims: ModelDims, seed: int = 0) -> "ModelParams":
        """Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) per block, seeded."""
        rng = np.random.default_rng(seed)
        blocks = {}
        for name, shape_fn in PARAM_SPEC:
            shape = shape_fn(dims)
            fan_in = shape[-1] if len(shape) > 1 else _bias_fan_in(name, dims)
            bound = 1.0 / np.sqrt(fan_in)
            blocks[name] = rng.uniform(-bound, bound, size=shape)
        return cls(dims, blocks)

    def copy(self) -> "ModelParams":
        return ModelParams(self.dims, {n: v.copy() for n, v in self.blocks.items()})

    def to_vector(self) -> np.ndarray:
        return np.concatenate([self.blocks[n].ravel() for n, _ in PARAM_SPEC])

    def from_vector(self, vec: np.ndarray) -> "ModelParams":
        blocks = {}
        off = 0
        for name, shape_fn in PARAM_SPEC:
            shape = shape_fn(self.dims)
            size = int(np.prod(shape))
            blocks[name] = vec[off : off + size].reshape(shape).copy()
            off += size
        if off != vec.size:
            raise ShapeMismatch(f"vector has {vec.size} entries, params need {off}")
        return ModelParams(self.dims, blocks)

    def add_scaled(self, other: "ModelParams", scale: float) -> None:
        for n in self.blocks:
            self.blocks[n] += scale * other.blocks[n]


def _bias_fan_in(name: str, dims: ModelDims) -> int:
    return {"w_alpha": dims.hp, "b_z": dims.h, "b_s": dims.h, "b_c": dims.h,
            "b1": dims.d + dims.dq, "b2": dims.hp}[name]


@dataclass
class ReasoningState:
    h: np.ndarray
    step: int
    r_history: tuple[np.ndarray, ...] = ()
    alpha_history: tuple[np.ndarray, ...] = ()
    x_next: np.ndarray | None = None  # next GRU input (operation embedding)


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max())
    return e / e.sum()


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-z))


def init_state(q: np.ndarray, p: ModelParams) -> ReasoningState:
    """h_0 from the question embedding; the first cell input is all zero."""
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (p.dims.dq,):
        raise ShapeMismatch(f"q has shape {q.shape}, expected ({p.dims.dq},)")
    return ReasoningState(p.w_q @ q, 0, (), (), np.zeros(p.dims.e))


def _step_full(state: ReasoningState, v: np.ndarray, p: ModelParams, a_v: np.ndarray):
    """One reasoning step, returning the new state and backward caches."""
    if state.step >= p.dims.t_max:
        raise MaxStepsExceeded(f"already at step {state.step} of {p.dims.t_max}")
    x, h_prev = state.x_next, state.h
    z = _sigmoid(p.w_z @ x + p.u_z @ h_prev + p.b_z)
    s = _sigmoid(p.w_s @ x + p.u_s @ h_prev + p.b_s)
    hc = np.tanh(p.w_c @ x + p.u_c @ (s * h_prev) + p.b_c)
    h = (1.0 - z) * h_prev + z * hc
    r = _softmax(p.w_r @ h)
    b_h = p.w_h @ h
    # per-proposal scalar score: w_alpha maps the gated hp-vector to one value
    e_mat = a_v * b_h[:, None]                  # hp x k
    scores = p.w_alpha @ e_mat                  # (k,)
    alpha = _softmax(scores)
    x_next = p.w_op @ r
    new = ReasoningState(
        h, state.step + 1,
        state.r_history + (r,), state.alpha_history + (alpha,), x_next,
    )
    cache = {"x": x, "h_prev": h_prev, "z": z, "s": s, "hc": hc, "h": h,
             "r": r, "b_h": b_h, "alpha": alpha}
    return new, cache


def step(state: ReasoningState, v: np.ndarray, p: ModelParams) -> ReasoningState:
    """Advance one reasoning step over proposal features v (K x D)."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (p.dims.k, p.dims.d):
        raise ShapeMismatch(f"v has shape {v.shape}, expected {(p.dims.k, p.dims.d)}")
    new, _ = _step_full(state, v, p, p.w_v @ v.T)
    return new


def aggregate_attention(state: ReasoningState) -> np.ndarray:
    """Mean of the per-step attention distributions."""
    if state.step < 1:
        raise NoSteps("no reasoning steps have run")
    return np.mean(np.stack(state.alpha_history), axis=0)


def predict_answer(
    alpha_r: np.ndarray, v: np.ndarray, q: np.ndarray, p: ModelParams
) -> np.ndarray:
    """Answer distribution from the attention-weighted proposal context."""
    ctx = np.asarray(v, dtype=np.float64).T @ np.asarray(alpha_r, dtype=np.float64)
    z_in = np.concatenate([ctx, np.asarray(q, dtype=np.float64)])
    hid = np.tanh(p.u1 @ z_in + p.b1)
    return _softmax(p.u2 @ hid + p.b2)


@dataclass
class ToySample:
    """One synthetic training item; ROI fields exist for AiR-E bookkeeping."""

    q: np.ndarray                      # (dq,)
    v: np.ndarray                      # (k, d)
    answer: int
    ops: tuple[int, ...]               # real operation indices, end excluded
    targets: list[StepAttentionTarget]  # one per real step
    neg: np.ndarray | None = None      # (k,) negative-mass distribution
    pos_train: np.ndarray | None = None  # noisy aggregate used by airc training
    proposal_boxes: list[BoundingBox] = field(default_factory=list)
    step_rois: list[StepROIs] = field(default_factory=list)
    step_ops: list[AtomicOp] = field(default_factory=list)
    frame: tuple[float, float] = (256.0, 256.0)

    def pos_aggregate(self) -> np.ndarray | None:
        """Combined attention target across steps (None if nothing overlaps)."""
        live = [t.weights for t in self.targets if not t.all_zero]
        if not live:
            return None
        agg = np.mean(np.stack(live), axis=0)
        return agg / agg.sum()


def _forward_sample(sample: ToySample, p: ModelParams):
    """Teacher-length forward: T_s real steps plus one end step (capped)."""
    dims = p.dims
    t_s = len(sample.ops)
    t_run = min(t_s + 1, dims.t_max)
    a_v = p.w_v @ sample.v.T
    state = init_state(sample.q, p)
    caches = []
    for _ in range(t_run):
        state, cache = _step_full(state, sample.v, p, a_v)
        caches.append(cache)
    alphas = state.alpha_history[:t_s]
    alpha_r = np.mean(np.stack(alphas), axis=0)
    ctx = sample.v.T @ alpha_r
    z_in = np.concatenate([ctx, sample.q])
    hid = np.tanh(p.u1 @ z_in + p.b1)
    ans = _softmax(p.u2 @ hid + p.b2)
    return state, caches, alpha_r, ctx, z_in, hid, ans, t_s, t_run, a_v


def _op_labels(sample: ToySample, t_run: int, dims: ModelDims) -> list[int]:
    end = dims.r - 1
    labels = list(sample.ops) + [end]
    return labels[:t_run]


def _softmax_jac(prob: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Backprop an output-side gradient g through a softmax with output prob."""
    return prob * (g - float(g @ prob))


def loss_and_grads(
    batch: list[ToySample],
    p: ModelParams,
    cfg: LossConfig,
    mode: str = "airm",
) -> tuple[float, ModelParams]:
    """Total loss over the batch (summed, so duplicates count twice) and the
    full analytic gradient in a params-shaped container."""
    if mode not in ("airm", "airc"):
        raise SchemaError(f"unknown training mode {mode!r}")
    dims = p.dims
    grads = ModelParams.zeros(dims)
    total = 0.0
    for sample in batch:
        if sample.v.shape != (dims.k, dims.d) or sample.q.shape != (dims.dq,):
            raise ShapeMismatch(
                f"sample shapes {sample.q.shape}/{sample.v.shape} do not fit dims"
            )
        state, caches, alpha_r, ctx, z_in, hid, ans, t_s, t_run, a_v = _forward_sample(sample, p)
        labels = _op_labels(sample, t_run, dims)

        # --- losses -----------------------------------------------------
        l_ans = -np.log(max(ans[sample.answer], 1e-300))
        loss = l_ans
        if mode == "airm":
            for t in range(t_s):
                tgt = sample.targets[t]
                if tgt.all_zero:
                    continue
                a = np.maximum(state.alpha_history[t], 1e-12)
                tw = tgt.weights
                m = tw > 0
                loss += cfg.theta * float(np.sum(tw[m] * np.log(tw[m] / a[m])))
            for t in range(t_run):
                loss += cfg.phi * -np.log(max(state.r_history[t][labels[t]], 1e-300))
        else:
            a_safe = np.maximum(alpha_r, 1e-12)
            pos = sample.pos_train if sample.pos_train is not None else sample.pos_aggregate()
            if pos is not None:
                loss += cfg.theta * float(-np.sum(pos * np.log(a_safe)))
            if sample.neg is not None:
                loss += cfg.phi * float(np.sum(sample.neg * np.log(a_safe)))
        total += loss

        # --- answer head backward ----------------------------------------
        dlogits = ans.copy()
        dlogits[sample.answer] -= 1.0
        grads.blocks["u2"] += np.outer(dlogits, hid)
        grads.blocks["b2"] += dlogits
        dhid = p.u2.T @ dlogits
        dpre = dhid * (1.0 - hid * hid)
        grads.blocks["u1"] += np.outer(dpre, z_in)
        grads.blocks["b1"] += dpre
        dz_in = p.u1.T @ dpre
        dctx = dz_in[: dims.d]
        dalpha_r = sample.v @ dctx

        if mode == "airc":
            # losses clamp alpha at 1e-12; clamped cells get zero slope
            a_safe = np.maximum(alpha_r, 1e-12)
            live = (alpha_r > 1e-12).astype(np.float64)
            pos = sample.pos_train if sample.pos_train is not None else sample.pos_aggregate()
            if pos is not None:
                dalpha_r += cfg.theta * (-pos / a_safe) * live
            if sample.neg is not None:
                dalpha_r += cfg.phi * (sample.neg / a_safe) * live

        # --- backward through time ----------------------------------------
        da_v = np.zeros_like(a_v)
        dh = np.zeros(dims.h)
        dx_next = None
        for t in reversed(range(t_run)):
            c = caches[t]
            # attention branch
            g_alpha = dalpha_r / t_s if t < t_s else np.zeros(dims.k)
            dscores = _softmax_jac(c["alpha"], g_alpha)
            if mode == "airm" and t < t_s and not sample.targets[t].all_zero:
                dscores += cfg.theta * (c["alpha"] - sample.targets[t].weights)
            e_mat = a_v * c["b_h"][:, None]
            grads.blocks["w_alpha"] += e_mat @ dscores
            de = np.outer(p.w_alpha, dscores)
            da_v += de * c["b_h"][:, None]
            db_h = (de * a_v).sum(axis=1)
            grads.blocks["w_h"] += np.outer(db_h, c["h"])
            dh = dh + p.w_h.T @ db_h
            # operation branch
            dz_r = np.zeros(dims.r)
            if mode == "airm":
                dz_r += cfg.phi * c["r"]
                dz_r[labels[t]] -= cfg.phi
            if dx_next is not None:
                grads.blocks["w_op"] += np.outer(dx_next, c["r"])
                dz_r += _softmax_jac(c["r"], p.w_op.T @ dx_next)
            grads.blocks["w_r"] += np.outer(dz_r, c["h"])
            dh = dh + p.w_r.T @ dz_r
            # GRU cell
            z, s, hc, h_prev, x = c["z"], c["s"], c["hc"], c["h_prev"], c["x"]
            dz = dh * (hc - h_prev)
            dhc = dh * z
            dh_prev = dh * (1.0 - z)
            dc_in = dhc * (1.0 - hc * hc)
            grads.blocks["w_c"] += np.outer(dc_in, x)
            grads.blocks["u_c"] += np.outer(dc_in, s * h_prev)
            grads.blocks["b_c"] += dc_in
            dx = p.w_c.T @ dc_in
            dsh = p.u_c.T @ dc_in
            ds = dsh * h_prev
            dh_prev = dh_prev + dsh * s
            dz_pre = dz * z * (1.0 - z)
            grads.blocks["w_z"] += np.outer(dz_pre, x)
            grads.blocks["u_z"] += np.outer(dz_pre, h_prev)
            grads.blocks["b_z"] += dz_pre
            dx += p.w_z.T @ dz_pre
            dh_prev = dh_prev + p.u_z.T @ dz_pre
            ds_pre = ds * s * (1.0 - s)
            grads.blocks["w_s"] += np.outer(ds_pre, x)
            grads.blocks["u_s"] += np.outer(ds_pre, h_prev)
            grads.blocks["b_s"] += ds_pre
            dx += p.w_s.T @ ds_pre
            dh_prev = dh_prev + p.u_s.T @ ds_pre
            dx_next = dx
            dh = dh_prev
        grads.blocks["w_q"] += np.outer(dh, sample.q)
        grads.blocks["w_v"] += da_v @ sample.v
    return float(total), grads


def run_inference(sample: ToySample, p: ModelParams) -> tuple[np.ndarray, np.ndarray]:
    """Forward with the learned stopping rule: stop at the first predicted end
    token (capped at t_max); returns (alpha_r, answer distribution)."""
    dims = p.dims
    end = dims.r - 1
    a_v = p.w_v @ sample.v.T
    state = init_state(sample.q, p)
    alphas: list[np.ndarray] = []
    first_alpha = None
    for _ in range(dims.t_max):
        state, cache = _step_full(state, sample.v, p, a_v)
        if first_alpha is None:
            first_alpha = cache["alpha"]
        if int(np.argmax(cache["r"])) == end:
            break
        alphas.append(cache["alpha"])
    if not alphas:
        alphas = [first_alpha]
    alpha_r = np.mean(np.stack(alphas), axis=0)
    return alpha_r, predict_answer(alpha_r, sample.v, sample.q, p)


def _alpha_r_teacher(sample: ToySample, p: ModelParams) -> np.ndarray:
    _, _, alpha_r, *_ = _forward_sample(sample, p)
    return alpha_r


def evaluate(
    p: ModelParams, dataset: list[ToySample], use_true_length: bool = False
) -> dict[str, float]:
    """Answer accuracy, operation accuracy and mean attention mass on the
    mined negatives."""
    n_ans = 0
    n_op = 0
    n_op_total = 0
    neg_mass = []
    for sample in dataset:
        state, _, alpha_r = _forward_sample(sample, p)[:3]
        labels = _op_labels(sample, min(len(sample.ops) + 1, p.dims.t_max), p.dims)
        for t, lab in enumerate(labels):
            n_op_total += 1
            n_op += int(np.argmax(state.r_history[t]) == lab)
        if use_true_length:
            ans = predict_answer(alpha_r, sample.v, sample.q, p)
        else:
            alpha_r, ans = run_inference(sample, p)
        n_ans += int(np.argmax(ans) == sample.answer)
        if sample.neg is not None:
            neg_mass.append(float(alpha_r @ sample.neg))
    return {
        "answer_acc": n_ans / len(dataset),
        "op_acc": n_op / max(1, n_op_total),
        "neg_mass": float(np.mean(neg_mass)) if neg_mass else 0.0,
    }


def aire_of_aggregate(p: ModelParams, dataset: list[ToySample], map_size: int = 64) -> float:
    """Mean AiR-E of the aggregated attention rendered over proposal boxes."""
    scores = []
    for sample in dataset:
        if not sample.step_rois:
            continue
        alpha_r = _alpha_r_teacher(sample, p)
        m = proposals_to_map(
            list(alpha_r), sample.proposal_boxes, out_size=map_size, frame=sample.frame
        )
        vals = [
            aire_step(m, rois, op).aire
            for rois, op in zip(sample.step_rois, sample.step_ops)
        ]
        vals = [v for v in vals if v is not None]
        if vals:
            scores.append(float(np.mean(vals)))
    return float(np.mean(scores)) if scores else 0.0


def mean_attention_kl(p: ModelParams, dataset: list[ToySample]) -> float:
    """Mean per-step KL from targets to predicted attention."""
    vals = []
    for sample in dataset:
        state, _, _ = _forward_sample(sample, p)[:3]
        for t, tgt in enumerate(sample.targets):
            if tgt.all_zero:
                continue
            a = state.alpha_history[t]
            tw = tgt.weights
            m = tw > 0
            vals.append(float(np.sum(tw[m] * np.log(tw[m] / np.maximum(a[m], 1e-12)))))
    return float(np.mean(vals)) if vals else 0.0


def train_toy(
    dataset: list[ToySample],
    p0: ModelParams,
    cfg: LossConfig,
    lr: float = 0.2,
    epochs: int = 40,
    seed: int = 0,
    batch_size: int = 32,
    mode: str = "airm",
    eval_every: int = 1,
) -> tuple[ModelParams, dict[str, list[float]]]:
    """Plain minibatch gradient descent; fully deterministic given the seed.

    Curves record answer accuracy, operation accuracy, mean attention KL, and
    the AiR-E of the aggregated attention after each ``eval_every`` epochs.
    """
    p = p0.copy()
    rng = np.random.default_rng(seed)
    curves: dict[str, list[float]] = {
        "epoch": [], "loss": [], "answer_acc": [], "op_acc": [],
        "mean_kl": [], "aire": [],
    }
    n = len(dataset)
    for epoch in range(1, epochs + 1):
        order = rng.permutation(n)
        epoch_loss = 0.0
        for start in range(0, n, batch_size):
            batch = [dataset[i] for i in order[start : start + batch_size]]
            loss, grads = loss_and_grads(batch, p, cfg, mode=mode)
            if not np.isfinite(loss):
                raise Divergence(f"loss became {loss} at epoch {epoch}")
            epoch_loss += loss
            p.add_scaled(grads, -lr / len(batch))
        if epoch % eval_every == 0 or epoch == epochs:
            stats = evaluate(p, dataset, use_true_length=True)
            curves["epoch"].append(epoch)
            curves["loss"].append(epoch_loss / n)
            curves["answer_acc"].append(stats["answer_acc"])
            curves["op_acc"].append(stats["op_acc"])
            curves["mean_kl"].append(mean_attention_kl(p, dataset))
            curves["aire"].append(aire_of_aggregate(p, dataset))
    return p, curves


def attention_swap_eval(
    p: ModelParams,
    dataset: list[ToySample],
    mode: str = "model",
    seed: int = 0,
) -> float:
    """Answer accuracy with the aggregated attention left alone (``model``),
    replaced by normalized uniform-random values (``random``), or by the
    aggregated ground-truth target (``ground_truth``)."""
    if mode not in ("model", "random", "ground_truth"):
        raise SchemaError(f"unknown swap mode {mode!r}")
    rng = np.random.default_rng(seed)
    hits = 0
    for sample in dataset:
        if mode == "model":
            alpha_r, ans = run_inference(sample, p)
        else:
            if mode == "random":
                u = rng.uniform(size=p.dims.k)
                alpha_r = u / u.sum()
            else:
                pos = sample.pos_aggregate()
                alpha_r = pos if pos is not None else np.full(p.dims.k, 1.0 / p.dims.k)
            ans = predict_answer(alpha_r, sample.v, sample.q, p)
        hits += int(np.argmax(ans) == sample.answer)
    return hits / len(dataset)


def save_params(p: ModelParams, path: str | Path) -> None:
    d = p.dims
    with open(path, "wb") as f:
        f.write(AIRPAR_MAGIC)
        f.write(struct.pack("<9I", d.dq, d.d, d.h, d.hp, d.r, d.e, d.a, d.k, d.t_max))
        for name, _ in PARAM_SPEC:
            f.write(p.blocks[name].astype("<f8").tobytes(order="C"))


def load_params(path: str | Path) -> ModelParams:
    data = Path(path).read_bytes()
    if len(data) < 8 + 36 or data[:8] != AIRPAR_MAGIC:
        raise SchemaError(f"{path}: not an AIRPAR file")
    dims = ModelDims(*struct.unpack("<9I", data[8:44]))
    p = ModelParams.zeros(dims)
    off = 44
    for name, shape_fn in PARAM_SPEC:
        shape = shape_fn(dims)
        size = int(np.prod(shape)) * 8
        p.blocks[name] = np.frombuffer(data[off : off + size], dtype="<f8").reshape(shape).copy()
        off += size
    if off != len(data):
        raise SchemaError(f"{path}: trailing bytes")
    return p


def save_curves(curves: dict[str, list[float]], path: str | Path) -> None:
    Path(path).write_text(json.dumps(curves, indent=2, sort_keys=True))
